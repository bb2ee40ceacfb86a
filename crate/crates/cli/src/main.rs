//! `hcvae`: synthesize benchmark corpora, train conditional VAE anomaly
//! detectors on MIMII-style directory trees, and score or evaluate clips.
//!
//! Every subcommand is deterministic given its inputs and seeds, exits 0
//! on success, and prints a single `error: ...` line to stderr otherwise.
//! Defaults can come from a JSON config file (`--config`); explicit flags
//! always win over the file.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use hcvae_core::audio::SpectrogramConfig;
use hcvae_core::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use hcvae_core::conditioning::{ConditionMode, Taxonomy};
use hcvae_core::dataset::build_taxonomy;
use hcvae_core::evaluation::{
    evaluate_dataset, export_latents, report_csv, score_clip, scores_csv, EvalConfig,
    ScoreAggregation,
};
use hcvae_core::gradcheck::{finite_diff_gradcheck, tensor_scale_agreement, GradCheckConfig};
use hcvae_core::matrix::{Matrix, Scalar};
use hcvae_core::model::{elbo_loss, elbo_with_grads, ModelParams, VaeConfig};
use hcvae_core::synth::{generate_dataset, SynthSpec};
use hcvae_core::training::{load_training_set, train_with_arch, TrainConfig};

#[derive(Parser)]
#[command(name = "hcvae", version, about = "Conditional VAE toolkit for acoustic anomaly detection")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic MIMII-style corpus of harmonic machine sounds
    Synth(SynthArgs),
    /// Train a model on the normal clips under a directory tree
    Train(TrainArgs),
    /// Continue training a checkpoint on new data (fresh optimizer,
    /// normalizer refitted on the new data, identical taxonomy and mode)
    Finetune(FinetuneArgs),
    /// Score a single clip against a checkpoint
    Score(ScoreArgs),
    /// Score every test clip and report per-(type,id) and macro AUCs
    Eval(EvalArgs),
    /// Check analytic ELBO gradients against finite differences
    Gradcheck(GradcheckArgs),
    /// Export per-frame posterior means as CSV
    ExportLatent(ExportLatentArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Directory to create `train/` and `test/` trees under
    #[arg(long)]
    out: PathBuf,
    /// Full generator spec as JSON; defaults to the built-in benchmark
    #[arg(long, conflicts_with = "domain2")]
    spec: Option<PathBuf>,
    /// Use the built-in second-domain benchmark (new machine IDs)
    #[arg(long)]
    domain2: bool,
    /// Training clips per (type, id) pair
    #[arg(long, default_value_t = 60)]
    train_clips: usize,
    /// Held-out normal test clips per pair
    #[arg(long, default_value_t = 20)]
    test_normal: usize,
    /// Anomalous test clips per pair
    #[arg(long, default_value_t = 20)]
    test_anomaly: usize,
}

#[derive(Args)]
struct CommonTrainArgs {
    /// JSON config file with spectrogram/vae/train/eval sections
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Visit training vectors in dataset order instead of shuffling
    #[arg(long)]
    no_shuffle: bool,
    /// Where to write the per-epoch loss trace; defaults to the output
    /// checkpoint path with a `.loss.csv` extension
    #[arg(long)]
    loss_csv: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Root of the training tree (`<type>/<id>/normal/*.wav`)
    #[arg(long)]
    data: PathBuf,
    /// Output checkpoint path
    #[arg(long)]
    out: PathBuf,
    /// Conditioning variant: none | ci | cij | both
    /// (with --init, defaults to the checkpoint's mode)
    #[arg(long, value_parser = parse_mode)]
    mode: Option<ConditionMode>,
    /// Warm-start from this checkpoint instead of random init
    #[arg(long)]
    init: Option<PathBuf>,
    /// Extra tree(s) whose (type, id) labels are merged into the taxonomy,
    /// reserving condition slots for machines not present in --data
    #[arg(long)]
    taxonomy_from: Vec<PathBuf>,
    /// Hidden layer width
    #[arg(long)]
    hidden: Option<usize>,
    /// Latent dimensionality
    #[arg(long)]
    latent: Option<usize>,
    /// Encoder hidden layer count
    #[arg(long)]
    enc_layers: Option<usize>,
    /// Decoder hidden layer count
    #[arg(long)]
    dec_layers: Option<usize>,
    #[command(flatten)]
    common: CommonTrainArgs,
}

#[derive(Args)]
struct FinetuneArgs {
    /// Checkpoint to continue from
    #[arg(long)]
    init: PathBuf,
    /// Root of the new training tree
    #[arg(long)]
    data: PathBuf,
    /// Output checkpoint path
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: CommonTrainArgs,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// WAV file to score
    #[arg(long)]
    clip: PathBuf,
    /// Machine type label, e.g. fan
    #[arg(long = "type")]
    machine_type: String,
    /// Machine ID label, e.g. id_00
    #[arg(long = "id")]
    machine_id: String,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Aggregate per-frame errors with the max instead of the mean
    #[arg(long)]
    max: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Root of the test tree (`<type>/<id>/{normal,abnormal}/*.wav`)
    #[arg(long)]
    data: PathBuf,
    /// AUC report CSV output path
    #[arg(long)]
    report: PathBuf,
    /// Also write per-clip scores as CSV
    #[arg(long)]
    scores: Option<PathBuf>,
    /// Decision threshold inside the pairwise AUC comparison
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Aggregate per-frame errors with the max instead of the mean
    #[arg(long)]
    max: bool,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ExportLatentArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Tree whose clips get their posterior means exported
    #[arg(long)]
    data: PathBuf,
    /// Output CSV path
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

/// Sections of the optional JSON config file. Anything absent falls back
/// to built-in defaults; explicit flags override file values.
#[derive(Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    spectrogram: Option<SpectrogramConfig>,
    vae: Option<VaeConfig>,
    train: Option<TrainConfig>,
    eval: Option<EvalConfig>,
}

fn parse_mode(s: &str) -> Result<ConditionMode, String> {
    match s {
        "none" => Ok(ConditionMode::None),
        "ci" | "level1" => Ok(ConditionMode::Level1Only),
        "cij" | "level2" => Ok(ConditionMode::Level2Only),
        "both" => Ok(ConditionMode::Both),
        other => Err(format!(
            "unknown mode {other:?}, expected none | ci | cij | both"
        )),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", format!("{e:#}").replace('\n', "; "));
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Synth(a) => cmd_synth(a),
        Cmd::Train(a) => cmd_train(a),
        Cmd::Finetune(a) => cmd_finetune(a),
        Cmd::Score(a) => cmd_score(a),
        Cmd::Eval(a) => cmd_eval(a),
        Cmd::Gradcheck(a) => cmd_gradcheck(a),
        Cmd::ExportLatent(a) => cmd_export_latent(a),
    }
}

fn load_file_config(path: Option<&Path>) -> Result<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let spec = match &a.spec {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading spec {}", path.display()))?;
            serde_json::from_str::<SynthSpec>(&text)
                .with_context(|| format!("parsing spec {}", path.display()))?
        }
        None if a.domain2 => SynthSpec::desk_benchmark_domain2(),
        None => SynthSpec::desk_benchmark(),
    };
    let paths = generate_dataset(&spec, &a.out, a.train_clips, a.test_normal, a.test_anomaly)?;
    println!(
        "wrote {} clips under {} (train: {}, test: {})",
        paths.files_written,
        a.out.display(),
        paths.train_root.display(),
        paths.test_root.display()
    );
    Ok(())
}

/// Flags layered over the config file's train section.
fn merge_train_config(
    file: &FileConfig,
    common: &CommonTrainArgs,
    mode: Option<ConditionMode>,
) -> TrainConfig {
    let mut tc = file.train.clone().unwrap_or_default();
    if let Some(v) = common.lr {
        tc.lr = v;
    }
    if let Some(v) = common.batch {
        tc.batch_size = v;
    }
    if let Some(v) = common.epochs {
        tc.epochs = v;
    }
    if let Some(v) = common.beta {
        tc.beta = v;
    }
    if let Some(v) = common.seed {
        tc.seed = v;
    }
    if common.no_shuffle {
        tc.shuffle = false;
    }
    if let Some(m) = mode {
        tc.mode = m;
    }
    tc
}

fn loss_csv_path(out: &Path, explicit: Option<&Path>) -> PathBuf {
    match explicit {
        Some(p) => p.to_path_buf(),
        None => out.with_extension("loss.csv"),
    }
}

fn run_training(
    data: &Path,
    taxonomy: &Taxonomy,
    arch: &VaeConfig,
    tc: &TrainConfig,
    init: Option<&Checkpoint>,
    spec_cfg: &SpectrogramConfig,
    out: &Path,
    loss_csv: &Path,
) -> Result<()> {
    let ds = load_training_set(data, taxonomy, tc.mode, spec_cfg)?;
    let (ckpt, trace) = train_with_arch(&ds, taxonomy, arch, tc, init)?;
    save_checkpoint(&ckpt, out)?;
    trace.write_loss_csv(loss_csv)?;
    let final_loss = ckpt
        .train_meta
        .final_loss
        .map(|l| l.to_string())
        .unwrap_or_else(|| "n/a".into());
    println!(
        "trained {} epochs on {} vectors from {} clips (mode {}), final loss {}",
        tc.epochs, ds.x.rows(), ds.n_clips, tc.mode, final_loss
    );
    println!("checkpoint: {}", out.display());
    println!("loss trace: {}", loss_csv.display());
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let file = load_file_config(a.common.config.as_deref())?;
    let spec_cfg = file.spectrogram.clone().unwrap_or_default();

    let init = a
        .init
        .as_deref()
        .map(load_checkpoint)
        .transpose()
        .context("loading init checkpoint")?;
    let mode = a
        .mode
        .or(init.as_ref().map(|c| c.mode))
        .unwrap_or(ConditionMode::Both);
    let tc = merge_train_config(&file, &a.common, Some(mode));

    let mut taxonomy = build_taxonomy(&a.data)?;
    for extra in &a.taxonomy_from {
        taxonomy = taxonomy.union(&build_taxonomy(extra)?)?;
    }

    let mut arch = file
        .vae
        .clone()
        .unwrap_or_else(|| VaeConfig::with_dims(0, 0));
    if let Some(v) = a.hidden {
        arch.hidden_dim = v;
    }
    if let Some(v) = a.latent {
        arch.latent_dim = v;
    }
    if let Some(v) = a.enc_layers {
        arch.n_hidden_enc = v;
    }
    if let Some(v) = a.dec_layers {
        arch.n_hidden_dec = v;
    }
    // Data decides the interface dims regardless of the file's values.
    arch.input_dim = spec_cfg.feature_dim();
    arch.cond_dim = taxonomy.cond_dim(tc.mode);

    let loss_csv = loss_csv_path(&a.out, a.common.loss_csv.as_deref());
    run_training(
        &a.data,
        &taxonomy,
        &arch,
        &tc,
        init.as_ref(),
        &spec_cfg,
        &a.out,
        &loss_csv,
    )
}

fn cmd_finetune(a: FinetuneArgs) -> Result<()> {
    let file = load_file_config(a.common.config.as_deref())?;
    let spec_cfg = file.spectrogram.clone().unwrap_or_default();
    let ckpt = load_checkpoint(&a.init).context("loading init checkpoint")?;
    let tc = merge_train_config(&file, &a.common, Some(ckpt.mode));
    let loss_csv = loss_csv_path(&a.out, a.common.loss_csv.as_deref());
    let taxonomy = ckpt.taxonomy.clone();
    let arch = ckpt.config.clone();
    run_training(
        &a.data,
        &taxonomy,
        &arch,
        &tc,
        Some(&ckpt),
        &spec_cfg,
        &a.out,
        &loss_csv,
    )
}

fn aggregation(file: &FileConfig, max: bool) -> ScoreAggregation {
    if max {
        ScoreAggregation::Max
    } else {
        file.eval
            .as_ref()
            .map(|e| e.aggregation)
            .unwrap_or(ScoreAggregation::Mean)
    }
}

fn cmd_score(a: ScoreArgs) -> Result<()> {
    let file = load_file_config(a.config.as_deref())?;
    let spec_cfg = file.spectrogram.clone().unwrap_or_default();
    let ckpt = load_checkpoint(&a.ckpt)?;
    let score = score_clip(
        &ckpt,
        &a.clip,
        &a.machine_type,
        &a.machine_id,
        &spec_cfg,
        aggregation(&file, a.max),
    )?;
    println!("{},{},{},{}", a.clip.display(), a.machine_type, a.machine_id, score);
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let file = load_file_config(a.config.as_deref())?;
    let spec_cfg = file.spectrogram.clone().unwrap_or_default();
    let mut eval_cfg = file.eval.clone().unwrap_or_default();
    if let Some(eta) = a.eta {
        eval_cfg.eta = eta;
    }
    if a.max {
        eval_cfg.aggregation = ScoreAggregation::Max;
    }
    let ckpt = load_checkpoint(&a.ckpt)?;
    let result = evaluate_dataset(&ckpt, &a.data, &spec_cfg, &eval_cfg)?;

    for g in &result.groups {
        match &g.auc {
            Some(auc) => println!(
                "{}/{}: auc_paper={:.4} auc_rank={:.4} ({} normal, {} anomaly)",
                g.machine_type, g.machine_id, auc.auc_paper, auc.auc_rank, g.n_normal, g.n_anomaly
            ),
            None => println!(
                "{}/{}: auc undefined ({} normal, {} anomaly)",
                g.machine_type, g.machine_id, g.n_normal, g.n_anomaly
            ),
        }
    }
    match (result.macro_auc_paper, result.macro_auc_rank) {
        (Some(p), Some(r)) => println!("macro: auc_paper={p:.4} auc_rank={r:.4}"),
        _ => println!("macro: undefined (no group has both classes)"),
    }

    fs::write(&a.report, report_csv(&result.groups))
        .with_context(|| format!("writing {}", a.report.display()))?;
    if let Some(path) = &a.scores {
        fs::write(path, scores_csv(&result.records))
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

/// Architecture used by `gradcheck`: every structural feature present
/// (conditioning, multiple hidden layers) at default widths.
fn gradcheck_arch() -> (VaeConfig, Taxonomy) {
    let taxonomy = Taxonomy::from_pairs([
        ("fan", "id_00"),
        ("fan", "id_02"),
        ("pump", "id_00"),
        ("pump", "id_04"),
    ])
    .expect("static labels");
    let mut cfg = VaeConfig::with_dims(24, taxonomy.cond_dim(ConditionMode::Both));
    cfg.hidden_dim = 16;
    cfg.latent_dim = 4;
    (cfg, taxonomy)
}

/// Frozen random batch for the gradient checks: inputs, one-hot
/// conditions for real taxonomy pairs, and posterior noise, all
/// deterministic in `seed`.
fn gradcheck_fixture<T: Scalar>(
    cfg: &VaeConfig,
    taxonomy: &Taxonomy,
    seed: u64,
) -> Result<(ModelParams<T>, Matrix<T>, Matrix<T>, Matrix<T>, T)> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let params: ModelParams<T> = ModelParams::init(cfg, seed)?;
    let batch = 4;
    let mut x = Matrix::<T>::zeros(batch, cfg.input_dim);
    for v in x.data_mut() {
        *v = T::from_f64(rng.random_range(-1.0..1.0));
    }
    let mut c = Matrix::<T>::zeros(batch, cfg.cond_dim);
    for r in 0..batch {
        let pairs = taxonomy.pairs();
        let (t, i) = &pairs[rng.random_range(0..pairs.len())];
        let row: Vec<T> = taxonomy.encode_condition(ConditionMode::Both, t, i)?;
        c.row_mut(r).copy_from_slice(&row);
    }
    let mut eps = Matrix::<T>::zeros(batch, cfg.latent_dim);
    for v in eps.data_mut() {
        *v = T::from_f64(rng.random_range(-1.5..1.5));
    }
    Ok((params, x, c, eps, T::from_f64(0.8)))
}

fn gradcheck_coordinatewise_f64(cfg: &VaeConfig, taxonomy: &Taxonomy, seed: u64) -> Result<f64> {
    let (params, x, c, eps, beta) = gradcheck_fixture::<f64>(cfg, taxonomy, seed)?;
    let (_, grads) = elbo_with_grads(&params, &x, &c, &eps, beta)?;
    let grad_flat: Vec<Vec<f64>> = grads
        .tensors
        .iter()
        .flat_map(|(w, b)| [w.data().to_vec(), b.clone()])
        .collect();
    let mut flat = params.export_flat();
    let mut probe = params.clone();
    let report = finite_diff_gradcheck(
        &mut flat,
        &grad_flat,
        |ps| {
            probe.import_flat(ps);
            elbo_loss(&probe, &x, &c, &eps, beta)
                .expect("loss is defined on perturbed params")
                .loss
        },
        &GradCheckConfig {
            h: 1e-5,
            samples_per_tensor: 10,
            seed: seed.wrapping_add(2),
            ..GradCheckConfig::default()
        },
    );
    if report.checked == 0 {
        bail!("gradient check skipped every sampled coordinate");
    }
    if report.skipped_kinks > 0 {
        println!(
            "gradcheck skipped {} kink-straddling coordinate(s) of {}",
            report.skipped_kinks,
            report.checked + report.skipped_kinks
        );
    }
    Ok(report.max_rel_error)
}

/// The 32-bit path can't be finite-difference checked directly (the f32
/// loss's rounding noise exceeds 1e-3 of most coordinates' gradients), so
/// its analytic gradients are compared against the f64 gradients at the
/// exact same parameters, upcast losslessly from the f32 fixture.
fn gradcheck_f32_against_f64(cfg: &VaeConfig, taxonomy: &Taxonomy, seed: u64) -> Result<f64> {
    let (p32, x32, c32, eps32, beta32) = gradcheck_fixture::<f32>(cfg, taxonomy, seed)?;
    let p64 = p32.cast::<f64>();
    let (x64, c64, eps64) = (x32.cast::<f64>(), c32.cast::<f64>(), eps32.cast::<f64>());
    let (_, g32) = elbo_with_grads(&p32, &x32, &c32, &eps32, beta32)?;
    let (_, g64) = elbo_with_grads(&p64, &x64, &c64, &eps64, beta32 as f64)?;
    let flat32: Vec<Vec<f64>> = g32
        .tensors
        .iter()
        .flat_map(|(w, b)| {
            [
                w.data().iter().map(|&v| v as f64).collect(),
                b.iter().map(|&v| v as f64).collect(),
            ]
        })
        .collect();
    let flat64: Vec<Vec<f64>> = g64
        .tensors
        .iter()
        .flat_map(|(w, b)| [w.data().to_vec(), b.clone()])
        .collect();
    Ok(tensor_scale_agreement(&flat64, &flat32))
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<()> {
    let (cfg, taxonomy) = gradcheck_arch();
    let err64 = gradcheck_coordinatewise_f64(&cfg, &taxonomy, a.seed)?;
    let err32 = gradcheck_f32_against_f64(&cfg, &taxonomy, a.seed)?;
    println!("gradcheck f64 vs finite differences: max relative error {err64:.3e} (tolerance 1e-5)");
    println!("gradcheck f32 vs f64 gradients: max scaled error {err32:.3e} (tolerance 1e-3)");
    if err64 >= 1e-5 || err32 >= 1e-3 {
        bail!("gradient check failed (f64 {err64:.3e}, f32 {err32:.3e})");
    }
    Ok(())
}

fn cmd_export_latent(a: ExportLatentArgs) -> Result<()> {
    let file = load_file_config(a.config.as_deref())?;
    let spec_cfg = file.spectrogram.clone().unwrap_or_default();
    let ckpt = load_checkpoint(&a.ckpt)?;
    let csv = export_latents(&ckpt, &a.data, &spec_cfg)?;
    fs::write(&a.out, &csv).with_context(|| format!("writing {}", a.out.display()))?;
    let rows = csv.lines().count().saturating_sub(1);
    println!("wrote {} latent rows to {}", rows, a.out.display());
    Ok(())
}
