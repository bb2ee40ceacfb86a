//! Short-time power spectra.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::audio::wav::Waveform;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Parameters of the feature pipeline, WAV to stacked log-mel vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectrogramConfig {
    pub frame_size: usize,
    pub hop: usize,
    pub mel_bins: usize,
    pub fmin: f64,
    /// Upper band edge in Hz; `None` means Nyquist.
    pub fmax: Option<f64>,
    pub log_floor: f64,
    pub stack: usize,
}

impl Default for SpectrogramConfig {
    fn default() -> Self {
        SpectrogramConfig {
            frame_size: 1024,
            hop: 512,
            mel_bins: 128,
            fmin: 0.0,
            fmax: None,
            log_floor: 1e-10,
            stack: 5,
        }
    }
}

impl SpectrogramConfig {
    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        if self.frame_size < 2 {
            return Err(Error::Config(format!("frame_size {} < 2", self.frame_size)));
        }
        if self.hop == 0 || self.hop > self.frame_size {
            return Err(Error::Config(format!(
                "hop {} not in 1..={}",
                self.hop, self.frame_size
            )));
        }
        if self.mel_bins == 0 {
            return Err(Error::Config("mel_bins must be >= 1".into()));
        }
        if self.stack == 0 {
            return Err(Error::Config("stack must be >= 1".into()));
        }
        if self.log_floor <= 0.0 {
            return Err(Error::Config(format!("log_floor {} <= 0", self.log_floor)));
        }
        let fmax = self.fmax_hz(sample_rate);
        if !(self.fmin >= 0.0 && self.fmin < fmax) {
            return Err(Error::Config(format!(
                "band edges fmin={} fmax={fmax} invalid",
                self.fmin
            )));
        }
        if fmax > f64::from(sample_rate) / 2.0 + 1e-9 {
            return Err(Error::Config(format!(
                "fmax {fmax} above Nyquist {}",
                f64::from(sample_rate) / 2.0
            )));
        }
        Ok(())
    }

    pub fn fmax_hz(&self, sample_rate: u32) -> f64 {
        self.fmax.unwrap_or(f64::from(sample_rate) / 2.0)
    }

    pub fn n_bins(&self) -> usize {
        self.frame_size / 2 + 1
    }

    /// Input feature width: mel bins times stacking depth.
    pub fn feature_dim(&self) -> usize {
        self.mel_bins * self.stack
    }
}

/// Periodic Hann window of length `n`.
pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos()))
        .collect()
}

/// Power spectrogram: `T x (frame_size/2 + 1)`, where
/// `T = floor((len - frame_size)/hop) + 1`. Each frame is Hann-windowed and
/// squared-magnitude after a real FFT. Trailing samples that do not fill a
/// frame are dropped.
pub fn stft_power(w: &Waveform, cfg: &SpectrogramConfig) -> Result<Matrix<f64>> {
    cfg.validate(w.sample_rate)?;
    let n = w.samples.len();
    if n < cfg.frame_size {
        return Err(Error::InputTooShort(format!(
            "{n} samples < frame_size {}",
            cfg.frame_size
        )));
    }
    let n_frames = (n - cfg.frame_size) / cfg.hop + 1;
    let n_bins = cfg.n_bins();
    let window = hann_window(cfg.frame_size);

    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(cfg.frame_size);
    let mut out = Matrix::zeros(n_frames, n_bins);
    let mut frame = vec![Complex::new(0.0, 0.0); cfg.frame_size];
    for t in 0..n_frames {
        let start = t * cfg.hop;
        for (i, c) in frame.iter_mut().enumerate() {
            *c = Complex::new(w.samples[start + i] * window[i], 0.0);
        }
        fft.process(&mut frame);
        let row = out.row_mut(t);
        for (b, cell) in row.iter_mut().enumerate() {
            *cell = frame[b].norm_sqr();
        }
    }
    Ok(out)
}
