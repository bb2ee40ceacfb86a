//! Triangular mel filterbanks.

use crate::audio::stft::SpectrogramConfig;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// `mel(f) = 2595 * log10(1 + f/700)`.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10.0f64.powf(mel / 2595.0) - 1.0)
}

/// Filter center frequencies in Hz: `mel_bins` points equally spaced on the
/// mel scale strictly between the band edges.
pub fn mel_centers(cfg: &SpectrogramConfig, sample_rate: u32) -> Vec<f64> {
    let lo = hz_to_mel(cfg.fmin);
    let hi = hz_to_mel(cfg.fmax_hz(sample_rate));
    let step = (hi - lo) / (cfg.mel_bins + 1) as f64;
    (1..=cfg.mel_bins)
        .map(|i| mel_to_hz(lo + step * i as f64))
        .collect()
}

/// Triangular filterbank, `mel_bins x (frame_size/2 + 1)`. Filter `i` rises
/// from edge `i` to edge `i+1` and falls to edge `i+2`, where the edges are
/// `mel_bins + 2` equally spaced mel points spanning `[fmin, fmax]`; each
/// row is then scaled to unit peak.
pub fn mel_filterbank(cfg: &SpectrogramConfig, sample_rate: u32) -> Result<Matrix<f64>> {
    cfg.validate(sample_rate)?;
    let n_bins = cfg.n_bins();
    let lo = hz_to_mel(cfg.fmin);
    let hi = hz_to_mel(cfg.fmax_hz(sample_rate));
    let step = (hi - lo) / (cfg.mel_bins + 1) as f64;
    let edges: Vec<f64> = (0..cfg.mel_bins + 2)
        .map(|i| mel_to_hz(lo + step * i as f64))
        .collect();
    let bin_hz: Vec<f64> = (0..n_bins)
        .map(|b| b as f64 * f64::from(sample_rate) / cfg.frame_size as f64)
        .collect();

    let mut fb = Matrix::zeros(cfg.mel_bins, n_bins);
    for m in 0..cfg.mel_bins {
        let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
        let row = fb.row_mut(m);
        for (b, &f) in bin_hz.iter().enumerate() {
            if f > left && f < center {
                row[b] = (f - left) / (center - left);
            } else if f == center {
                row[b] = 1.0;
            } else if f > center && f < right {
                row[b] = (right - f) / (right - center);
            }
        }
        let peak = row.iter().cloned().fold(0.0, f64::max);
        if peak == 0.0 {
            return Err(Error::Config(format!(
                "mel filter {m} is empty: {} mel bins exceed the FFT resolution of frame_size {}",
                cfg.mel_bins, cfg.frame_size
            )));
        }
        for v in row.iter_mut() {
            *v /= peak;
        }
    }
    Ok(fb)
}
