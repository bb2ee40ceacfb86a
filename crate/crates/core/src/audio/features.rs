//! Log-mel conversion, frame stacking, and the end-to-end pipeline.

use std::path::Path;

use crate::audio::mel::mel_filterbank;
use crate::audio::stft::{stft_power, SpectrogramConfig};
use crate::audio::wav::{read_wav, Waveform};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Stacked feature vectors for one clip, row-major, stored in f32.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub n_vectors: usize,
    pub dim: usize,
    pub values: Vec<f32>,
}

impl FeatureMatrix {
    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_matrix(&self) -> Matrix<f32> {
        Matrix::from_vec(self.n_vectors, self.dim, self.values.clone())
            .expect("FeatureMatrix shape is consistent by construction")
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// `10 * log10(max(power . fb^T, log_floor))`, shape `T x mel_bins`.
pub fn log_mel(power: &Matrix<f64>, fb: &Matrix<f64>, log_floor: f64) -> Result<Matrix<f64>> {
    if log_floor <= 0.0 {
        return Err(Error::Config(format!("log_floor {log_floor} <= 0")));
    }
    let mel = power.mul_bt(fb)?;
    Ok(mel.map(|v| 10.0 * v.max(log_floor).log10()))
}

/// Concatenates `stack` consecutive frames into each output row:
/// `n_vectors = T - stack + 1`, `dim = mel_bins * stack`.
pub fn stack_frames(logmel: &Matrix<f64>, stack: usize) -> Result<FeatureMatrix> {
    if stack == 0 {
        return Err(Error::Config("stack must be >= 1".into()));
    }
    let t = logmel.rows();
    if t < stack {
        return Err(Error::InputTooShort(format!(
            "{t} frames < stacking depth {stack}"
        )));
    }
    let n_vectors = t - stack + 1;
    let dim = logmel.cols() * stack;
    let mut values = Vec::with_capacity(n_vectors * dim);
    for v in 0..n_vectors {
        for f in v..v + stack {
            values.extend(logmel.row(f).iter().map(|&x| x as f32));
        }
    }
    Ok(FeatureMatrix {
        n_vectors,
        dim,
        values,
    })
}

/// Full pipeline from a decoded waveform.
pub fn features_from_waveform(w: &Waveform, cfg: &SpectrogramConfig) -> Result<FeatureMatrix> {
    let power = stft_power(w, cfg)?;
    let fb = mel_filterbank(cfg, w.sample_rate)?;
    let lm = log_mel(&power, &fb, cfg.log_floor)?;
    stack_frames(&lm, cfg.stack)
}

/// Full pipeline from a WAV file on disk.
pub fn extract_features(path: impl AsRef<Path>, cfg: &SpectrogramConfig) -> Result<FeatureMatrix> {
    features_from_waveform(&read_wav(path)?, cfg)
}
