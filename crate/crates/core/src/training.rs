//! Minibatch ELBO training with Adam, plus feature-set loading and
//! per-dimension normalization.
//!
//! Determinism contract: given the same dataset, config, and init, two
//! runs produce bit-identical checkpoints and loss traces. Shuffling and
//! posterior noise come from two independent streams of one seeded
//! generator, so neither perturbs the other.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::adam::{AdamConfig, AdamState};
use crate::audio::{extract_features, SpectrogramConfig};
use crate::checkpoint::{Checkpoint, TrainMeta};
use crate::conditioning::{ConditionMode, Taxonomy};
use crate::dataset::{scan_dataset, Label};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{elbo_loss, elbo_with_grads, ModelParams, VaeConfig};

/// Smallest per-dimension std the normalizer will divide by.
const STD_FLOOR: f64 = 1e-6;

/// Per-dimension affine map fitted on the training features and stored in
/// the checkpoint, so scoring sees the same scale training did.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl Normalizer {
    /// Mean and std per column, accumulated in f64. Constant columns get
    /// the floor std instead of zero.
    pub fn fit(x: &Matrix<f32>) -> Result<Normalizer> {
        if x.rows() == 0 {
            return Err(Error::Dataset(
                "cannot fit a normalizer on an empty feature set".into(),
            ));
        }
        let n = x.rows() as f64;
        let mut sum = vec![0.0f64; x.cols()];
        let mut sumsq = vec![0.0f64; x.cols()];
        for r in 0..x.rows() {
            for (c, &v) in x.row(r).iter().enumerate() {
                sum[c] += v as f64;
                sumsq[c] += (v as f64) * (v as f64);
            }
        }
        let mut mean = Vec::with_capacity(x.cols());
        let mut std = Vec::with_capacity(x.cols());
        for c in 0..x.cols() {
            let m = sum[c] / n;
            let var = (sumsq[c] / n - m * m).max(0.0);
            mean.push(m as f32);
            std.push(var.sqrt().max(STD_FLOOR) as f32);
        }
        Ok(Normalizer { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// In-place `(x - mean) / std` per column.
    pub fn apply(&self, x: &mut Matrix<f32>) -> Result<()> {
        if x.cols() != self.dim() {
            return Err(Error::dim(
                "normalize",
                format!("features have dim {}, normalizer has {}", x.cols(), self.dim()),
            ));
        }
        for r in 0..x.rows() {
            for (c, v) in x.row_mut(r).iter_mut().enumerate() {
                *v = (*v - self.mean[c]) / self.std[c];
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta: f64,
    pub seed: u64,
    pub mode: ConditionMode,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.001,
            batch_size: 512,
            epochs: 100,
            beta: 1.0,
            seed: 0,
            mode: ConditionMode::Both,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    /// `epochs: 0` is deliberately allowed; it returns the init checkpoint
    /// untouched, which the warm-start tests rely on.
    pub fn validate(&self) -> Result<()> {
        if !self.lr.is_finite() || self.lr <= 0.0 {
            return Err(Error::Config(format!("lr must be finite and positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !self.beta.is_finite() || self.beta < 0.0 {
            return Err(Error::Config(format!(
                "beta must be finite and non-negative, got {}",
                self.beta
            )));
        }
        Ok(())
    }
}

/// Feature vectors with their per-row condition one-hots, flattened over
/// all clips of a training set.
#[derive(Debug, Clone)]
pub struct FeatureDataset {
    pub x: Matrix<f32>,
    pub cond: Matrix<f32>,
    pub mode: ConditionMode,
    pub n_clips: usize,
}

/// Walks `root`, extracts features from every normal clip, and pairs each
/// feature vector with its clip's condition vector. Anomalous clips under
/// `root` are skipped: training is unsupervised on normal data only.
pub fn load_training_set(
    root: impl AsRef<Path>,
    taxonomy: &Taxonomy,
    mode: ConditionMode,
    spec: &SpectrogramConfig,
) -> Result<FeatureDataset> {
    let clips = scan_dataset(root.as_ref())?;
    let cond_dim = taxonomy.cond_dim(mode);
    let mut x_rows: Vec<f32> = Vec::new();
    let mut c_rows: Vec<f32> = Vec::new();
    let mut dim = None;
    let mut n_rows = 0usize;
    let mut n_clips = 0usize;
    for clip in clips.iter().filter(|c| c.label == Label::Normal) {
        let feats = extract_features(&clip.path, spec)?;
        match dim {
            None => dim = Some(feats.dim),
            Some(d) if d != feats.dim => {
                return Err(Error::Dataset(format!(
                    "feature dim {} in {} differs from {} seen earlier",
                    feats.dim,
                    clip.path.display(),
                    d
                )))
            }
            _ => {}
        }
        let c: Vec<f32> =
            taxonomy.encode_condition(mode, &clip.machine_type, &clip.machine_id)?;
        for r in 0..feats.n_vectors {
            x_rows.extend_from_slice(feats.row(r));
            c_rows.extend_from_slice(&c);
            n_rows += 1;
        }
        n_clips += 1;
    }
    let dim = dim.ok_or_else(|| {
        Error::Dataset(format!(
            "no normal clips under {}",
            root.as_ref().display()
        ))
    })?;
    Ok(FeatureDataset {
        x: Matrix::from_vec(n_rows, dim, x_rows)?,
        cond: Matrix::from_vec(n_rows, cond_dim, c_rows)?,
        mode,
        n_clips,
    })
}

/// One row of the loss trace; `epoch` 0 is the pre-training evaluation
/// pass (posterior noise zeroed), later rows are per-epoch training means.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub recon: f64,
    pub kl: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainTrace {
    pub epochs: Vec<EpochStats>,
    pub step_losses: Vec<f64>,
}

impl TrainTrace {
    pub fn loss_csv(&self) -> String {
        let mut out = String::from("epoch,loss,recon,kl\n");
        for e in &self.epochs {
            writeln!(out, "{},{},{},{}", e.epoch, e.loss, e.recon, e.kl).unwrap();
        }
        out
    }

    pub fn write_loss_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path.as_ref(), self.loss_csv()).map_err(|e| Error::io(path.as_ref(), e))
    }
}

/// Trains with the default architecture sized for this dataset and
/// taxonomy. With `init` the architecture comes from the checkpoint
/// instead; see [`train_with_arch`].
pub fn train(
    ds: &FeatureDataset,
    taxonomy: &Taxonomy,
    cfg: &TrainConfig,
    init: Option<&Checkpoint>,
) -> Result<(Checkpoint, TrainTrace)> {
    let mut arch = VaeConfig::with_dims(ds.x.cols(), taxonomy.cond_dim(cfg.mode));
    arch.beta = cfg.beta;
    train_with_arch(ds, taxonomy, &arch, cfg, init)
}

/// Continues training from a checkpoint with a fresh optimizer. The
/// normalizer is refitted on the new training data, so the continued run
/// optimizes (and reports) losses on the same scale a scratch run on that
/// data would; only the network weights carry over.
pub fn finetune(
    ckpt: &Checkpoint,
    ds: &FeatureDataset,
    taxonomy: &Taxonomy,
    cfg: &TrainConfig,
) -> Result<(Checkpoint, TrainTrace)> {
    train(ds, taxonomy, cfg, Some(ckpt))
}

/// Full training entry point. Scratch runs initialize from `arch`; warm
/// starts clone parameters from `init` (whose input dim, mode, and
/// taxonomy must match) and take only `beta` from `cfg`. Either way the
/// normalizer is fitted on `ds` and the optimizer starts fresh, with one
/// exception: `epochs == 0` with an init returns that checkpoint
/// unchanged, normalizer included.
pub fn train_with_arch(
    ds: &FeatureDataset,
    taxonomy: &Taxonomy,
    arch: &VaeConfig,
    cfg: &TrainConfig,
    init: Option<&Checkpoint>,
) -> Result<(Checkpoint, TrainTrace)> {
    cfg.validate()?;
    if ds.mode != cfg.mode {
        return Err(Error::ModeMismatch {
            found: ds.mode,
            expected: cfg.mode,
        });
    }
    if ds.x.rows() == 0 {
        return Err(Error::Dataset("training set has no feature vectors".into()));
    }
    if ds.cond.rows() != ds.x.rows() {
        return Err(Error::dim(
            "train",
            format!(
                "{} feature rows but {} condition rows",
                ds.x.rows(),
                ds.cond.rows()
            ),
        ));
    }
    if ds.cond.cols() != taxonomy.cond_dim(cfg.mode) {
        return Err(Error::dim(
            "train",
            format!(
                "condition dim {} does not match taxonomy dim {} under mode {}",
                ds.cond.cols(),
                taxonomy.cond_dim(cfg.mode),
                cfg.mode
            ),
        ));
    }

    let (config, mut params, normalizer) = match init {
        Some(ckpt) => {
            if ckpt.config.input_dim != ds.x.cols() {
                return Err(Error::dim(
                    "train",
                    format!(
                        "checkpoint expects input dim {}, dataset has {}",
                        ckpt.config.input_dim,
                        ds.x.cols()
                    ),
                ));
            }
            ckpt.require_mode(cfg.mode)?;
            if ckpt.taxonomy != *taxonomy {
                return Err(Error::Config(
                    "checkpoint taxonomy differs from the training taxonomy; \
                     finetuning requires identical label sets"
                        .into(),
                ));
            }
            let mut config = ckpt.config.clone();
            config.beta = cfg.beta;
            let normalizer = if cfg.epochs == 0 {
                ckpt.normalizer.clone()
            } else {
                Normalizer::fit(&ds.x)?
            };
            (config, ckpt.params.clone(), normalizer)
        }
        None => {
            let mut config = arch.clone();
            config.beta = cfg.beta;
            config.validate()?;
            if config.input_dim != ds.x.cols() {
                return Err(Error::dim(
                    "train",
                    format!(
                        "arch expects input dim {}, dataset has {}",
                        config.input_dim,
                        ds.x.cols()
                    ),
                ));
            }
            if config.cond_dim != taxonomy.cond_dim(cfg.mode) {
                return Err(Error::Config(format!(
                    "arch cond_dim {} does not match taxonomy dim {} under mode {}",
                    config.cond_dim,
                    taxonomy.cond_dim(cfg.mode),
                    cfg.mode
                )));
            }
            let params = ModelParams::init(&config, cfg.seed)?;
            let normalizer = Normalizer::fit(&ds.x)?;
            (config, params, normalizer)
        }
    };

    let mut x = ds.x.clone();
    normalizer.apply(&mut x)?;
    let n = x.rows();
    let latent = config.latent_dim;
    let beta = cfg.beta as f32;

    let mut adam = AdamState::new(AdamConfig::with_lr(cfg.lr as f32), &params.param_lens());
    let mut rng_shuffle = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng_shuffle.set_stream(1);
    let mut rng_eps = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng_eps.set_stream(2);

    let mut trace = TrainTrace {
        epochs: Vec::with_capacity(cfg.epochs + 1),
        step_losses: Vec::new(),
    };
    let eval = elbo_loss(&params, &x, &ds.cond, &Matrix::zeros(n, latent), beta)?;
    trace.epochs.push(EpochStats {
        epoch: 0,
        loss: eval.loss as f64,
        recon: eval.recon as f64,
        kl: eval.kl as f64,
    });

    let mut order: Vec<usize> = (0..n).collect();
    let mut final_loss = None;
    for epoch in 1..=cfg.epochs {
        if cfg.shuffle {
            order.shuffle(&mut rng_shuffle);
        }
        let mut sums = (0.0f64, 0.0f64, 0.0f64);
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let xb = gather_rows(&x, chunk);
            let cb = gather_rows(&ds.cond, chunk);
            let mut eps = Matrix::zeros(chunk.len(), latent);
            for v in eps.data_mut() {
                *v = rng_eps.sample(StandardNormal);
            }
            let (lb, grads) = elbo_with_grads(&params, &xb, &cb, &eps, beta)?;
            if !lb.loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    what: "training loss".into(),
                    epoch,
                    batch: bi,
                });
            }
            let mut slices = params.param_slices_mut();
            adam.step(&mut slices, &grads.slices());
            let w = chunk.len() as f64;
            sums.0 += lb.loss as f64 * w;
            sums.1 += lb.recon as f64 * w;
            sums.2 += lb.kl as f64 * w;
            trace.step_losses.push(lb.loss as f64);
        }
        let stats = EpochStats {
            epoch,
            loss: sums.0 / n as f64,
            recon: sums.1 / n as f64,
            kl: sums.2 / n as f64,
        };
        final_loss = Some(stats.loss as f32);
        trace.epochs.push(stats);
    }

    let ckpt = Checkpoint {
        config,
        taxonomy: taxonomy.clone(),
        mode: cfg.mode,
        params,
        normalizer,
        train_meta: TrainMeta {
            epochs_run: cfg.epochs,
            final_loss,
            seed: cfg.seed,
        },
    };
    Ok((ckpt, trace))
}

fn gather_rows(m: &Matrix<f32>, idx: &[usize]) -> Matrix<f32> {
    let mut out = Matrix::zeros(idx.len(), m.cols());
    for (r, &i) in idx.iter().enumerate() {
        out.row_mut(r).copy_from_slice(m.row(i));
    }
    out
}
