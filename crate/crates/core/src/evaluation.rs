//! Per-clip anomaly scoring and AUC computation, in both the thresholded
//! pairwise form and the standard tie-averaged rank form.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::audio::{extract_features, FeatureMatrix, SpectrogramConfig};
use crate::checkpoint::Checkpoint;
use crate::dataset::{scan_dataset, Label};
use crate::error::{Error, Result};
use crate::model::{encode, reconstruction_errors, repeat_condition};

/// How one clip's per-vector reconstruction errors become its score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreAggregation {
    Mean,
    Max,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Threshold η inside the pairwise Heaviside; 0 counts ties fully.
    pub eta: f64,
    pub aggregation: ScoreAggregation,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            eta: 0.0,
            aggregation: ScoreAggregation::Mean,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRecord {
    pub clip_id: String,
    pub machine_type: String,
    pub machine_id: String,
    pub score: f64,
    pub label: Label,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AucResult {
    pub auc_paper: f64,
    pub auc_rank: f64,
    pub n_normal: usize,
    pub n_anomaly: usize,
}

/// Both AUC variants from raw score lists.
///
/// `auc_paper` follows the pairwise definition
/// `(1/(N⁻N⁺)) Σᵢ Σⱼ H(A(x⁺ⱼ) − A(x⁻ᵢ))` with `H(u) = 1` iff `u ≥ eta`,
/// so at `eta = 0` tied pairs count fully. `auc_rank` is the Mann-Whitney
/// statistic with tied pairs counted 0.5 (`eta` ignored).
pub fn auc_from_scores(normal: &[f64], anomaly: &[f64], eta: f64) -> Result<AucResult> {
    if normal.is_empty() || anomaly.is_empty() {
        return Err(Error::UndefinedAuc(format!(
            "{} normal and {} anomaly scores (need at least one of each)",
            normal.len(),
            anomaly.len()
        )));
    }
    if normal.iter().chain(anomaly).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite score in AUC input".into()));
    }

    // Pairwise form. Sorting the normals turns the inner loop into a
    // partition point: H(s⁺ − s⁻) is monotone non-increasing in s⁻, so the
    // count of true predicates equals the brute-force double loop exactly.
    let mut sorted_normal = normal.to_vec();
    sorted_normal.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut hits: u64 = 0;
    for &sp in anomaly {
        hits += sorted_normal.partition_point(|&sm| sp - sm >= eta) as u64;
    }
    let pairs = (normal.len() as u64 * anomaly.len() as u64) as f64;
    let auc_paper = hits as f64 / pairs;

    // Rank form: midranks over the pooled sample.
    let mut pooled: Vec<(f64, bool)> = normal
        .iter()
        .map(|&s| (s, false))
        .chain(anomaly.iter().map(|&s| (s, true)))
        .collect();
    pooled.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut rank_sum_anomaly = 0.0f64;
    let mut i = 0;
    while i < pooled.len() {
        let mut j = i;
        while j < pooled.len() && pooled[j].0 == pooled[i].0 {
            j += 1;
        }
        // Ranks are 1-based; every member of the tie group gets the mean rank.
        let midrank = (i + 1 + j) as f64 / 2.0;
        for p in &pooled[i..j] {
            if p.1 {
                rank_sum_anomaly += midrank;
            }
        }
        i = j;
    }
    let n_plus = anomaly.len() as f64;
    let u = rank_sum_anomaly - n_plus * (n_plus + 1.0) / 2.0;
    let auc_rank = u / (n_plus * normal.len() as f64);

    Ok(AucResult {
        auc_paper,
        auc_rank,
        n_normal: normal.len(),
        n_anomaly: anomaly.len(),
    })
}

/// AUC over labeled records (order-insensitive).
pub fn auc(records: &[ScoreRecord], cfg: &EvalConfig) -> Result<AucResult> {
    let normal: Vec<f64> = records
        .iter()
        .filter(|r| r.label == Label::Normal)
        .map(|r| r.score)
        .collect();
    let anomaly: Vec<f64> = records
        .iter()
        .filter(|r| r.label == Label::Anomaly)
        .map(|r| r.score)
        .collect();
    auc_from_scores(&normal, &anomaly, cfg.eta)
}

/// Score one clip's features under a trained checkpoint: normalize, run the
/// sampling-free reconstruction, aggregate over vectors.
pub fn score_features(
    ckpt: &Checkpoint,
    feats: &FeatureMatrix,
    type_label: &str,
    id_label: &str,
    aggregation: ScoreAggregation,
) -> Result<f64> {
    if feats.dim != ckpt.config.input_dim {
        return Err(Error::dim(
            "score_features",
            format!(
                "feature dim {} vs model input_dim {}",
                feats.dim, ckpt.config.input_dim
            ),
        ));
    }
    let mut x = feats.as_matrix();
    ckpt.normalizer.apply(&mut x)?;
    let c_row: Vec<f32> = ckpt
        .taxonomy
        .encode_condition(ckpt.mode, type_label, id_label)?;
    let c = repeat_condition(&c_row, x.rows());
    let errors = reconstruction_errors(&ckpt.params, &x, &c)?;
    let score = match aggregation {
        ScoreAggregation::Mean => {
            errors.iter().map(|&e| f64::from(e)).sum::<f64>() / errors.len() as f64
        }
        ScoreAggregation::Max => errors
            .iter()
            .map(|&e| f64::from(e))
            .fold(f64::NEG_INFINITY, f64::max),
    };
    if !score.is_finite() {
        return Err(Error::Numeric(format!("non-finite clip score {score}")));
    }
    Ok(score)
}

/// Score one WAV file from disk.
pub fn score_clip(
    ckpt: &Checkpoint,
    path: impl AsRef<Path>,
    type_label: &str,
    id_label: &str,
    spec_cfg: &SpectrogramConfig,
    aggregation: ScoreAggregation,
) -> Result<f64> {
    let feats = extract_features(path, spec_cfg)?;
    score_features(ckpt, &feats, type_label, id_label, aggregation)
}

/// AUC for one (type, id) group; `auc` is `None` when the group lacks one
/// of the two classes.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupAuc {
    pub machine_type: String,
    pub machine_id: String,
    pub n_normal: usize,
    pub n_anomaly: usize,
    pub auc: Option<AucResult>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetEvaluation {
    pub records: Vec<ScoreRecord>,
    pub groups: Vec<GroupAuc>,
    /// Mean over groups with a defined AUC.
    pub macro_auc_paper: Option<f64>,
    pub macro_auc_rank: Option<f64>,
}

/// Scores every clip under `test_root`, then computes per-(type, id) AUCs
/// and their macro average. Groups missing a class are reported with
/// `auc: None`; the rest proceed.
pub fn evaluate_dataset(
    ckpt: &Checkpoint,
    test_root: impl AsRef<Path>,
    spec_cfg: &SpectrogramConfig,
    eval_cfg: &EvalConfig,
) -> Result<DatasetEvaluation> {
    let clips = scan_dataset(test_root)?;
    let mut records = Vec::with_capacity(clips.len());
    for clip in &clips {
        let score = score_clip(
            ckpt,
            &clip.path,
            &clip.machine_type,
            &clip.machine_id,
            spec_cfg,
            eval_cfg.aggregation,
        )?;
        records.push(ScoreRecord {
            clip_id: clip.clip_id.clone(),
            machine_type: clip.machine_type.clone(),
            machine_id: clip.machine_id.clone(),
            score,
            label: clip.label,
        });
    }
    let groups = group_aucs(&records, eval_cfg);
    let defined: Vec<&AucResult> = groups.iter().filter_map(|g| g.auc.as_ref()).collect();
    let macro_of = |f: fn(&AucResult) -> f64| {
        if defined.is_empty() {
            None
        } else {
            Some(defined.iter().map(|r| f(r)).sum::<f64>() / defined.len() as f64)
        }
    };
    Ok(DatasetEvaluation {
        macro_auc_paper: macro_of(|r| r.auc_paper),
        macro_auc_rank: macro_of(|r| r.auc_rank),
        records,
        groups,
    })
}

/// Per-(type, id) AUC table from scored records, sorted by group key.
pub fn group_aucs(records: &[ScoreRecord], cfg: &EvalConfig) -> Vec<GroupAuc> {
    let mut by_group: BTreeMap<(String, String), Vec<&ScoreRecord>> = BTreeMap::new();
    for r in records {
        by_group
            .entry((r.machine_type.clone(), r.machine_id.clone()))
            .or_default()
            .push(r);
    }
    by_group
        .into_iter()
        .map(|((t, i), rs)| {
            let n_normal = rs.iter().filter(|r| r.label == Label::Normal).count();
            let n_anomaly = rs.len() - n_normal;
            let owned: Vec<ScoreRecord> = rs.into_iter().cloned().collect();
            GroupAuc {
                machine_type: t,
                machine_id: i,
                n_normal,
                n_anomaly,
                auc: auc(&owned, cfg).ok(),
            }
        })
        .collect()
}

/// `clip_id,machine_type,machine_id,label,score` with a header row.
pub fn scores_csv(records: &[ScoreRecord]) -> String {
    let mut out = String::from("clip_id,machine_type,machine_id,label,score\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.clip_id,
            r.machine_type,
            r.machine_id,
            r.label.as_str(),
            r.score
        ));
    }
    out
}

/// `machine_type,machine_id,n_normal,n_anomaly,auc_paper,auc_rank`;
/// undefined AUCs leave their fields empty.
pub fn report_csv(groups: &[GroupAuc]) -> String {
    let mut out = String::from("machine_type,machine_id,n_normal,n_anomaly,auc_paper,auc_rank\n");
    for g in groups {
        let (p, r) = match &g.auc {
            Some(a) => (a.auc_paper.to_string(), a.auc_rank.to_string()),
            None => (String::new(), String::new()),
        };
        out.push_str(&format!(
            "{},{},{},{},{p},{r}\n",
            g.machine_type, g.machine_id, g.n_normal, g.n_anomaly
        ));
    }
    out
}

/// Posterior means for every feature vector of every clip under `root`:
/// `clip_id,frame_index,mu_1..mu_<latent_dim>`.
pub fn export_latents(
    ckpt: &Checkpoint,
    root: impl AsRef<Path>,
    spec_cfg: &SpectrogramConfig,
) -> Result<String> {
    let clips = scan_dataset(root)?;
    let latent = ckpt.config.latent_dim;
    let mut out = String::from("clip_id,frame_index");
    for d in 1..=latent {
        out.push_str(&format!(",mu_{d}"));
    }
    out.push('\n');
    for clip in &clips {
        let feats = extract_features(&clip.path, spec_cfg)?;
        let mut x = feats.as_matrix();
        ckpt.normalizer.apply(&mut x)?;
        let c_row: Vec<f32> =
            ckpt.taxonomy
                .encode_condition(ckpt.mode, &clip.machine_type, &clip.machine_id)?;
        let c = repeat_condition(&c_row, x.rows());
        let (mu, _) = encode(&ckpt.params, &x, &c)?;
        for f in 0..mu.rows() {
            out.push_str(&clip.clip_id);
            out.push_str(&format!(",{f}"));
            for &v in mu.row(f) {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
    }
    Ok(out)
}
