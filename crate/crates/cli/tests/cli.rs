//! End-to-end subcommand tests against the built binary.

use std::path::Path;
use std::process::{Command, Output};

fn hcvae(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hcvae"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn assert_ok(out: &Output, what: &str) {
    assert!(
        out.status.success(),
        "{what} failed:\nstdout: {}\nstderr: {}",
        stdout(out),
        stderr(out)
    );
}

fn synth_small(root: &Path) {
    let out = hcvae(&[
        "synth",
        "--out",
        root.to_str().unwrap(),
        "--train-clips",
        "2",
        "--test-normal",
        "2",
        "--test-anomaly",
        "2",
    ]);
    assert_ok(&out, "synth");
}

#[test]
fn pipeline_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth_small(&data);

    // 2 types x 2 ids x (2 train + 2 test-normal + 2 test-anomaly).
    let wavs = walk_wavs(&data);
    assert_eq!(wavs, 24, "unexpected corpus size");

    let ckpt = dir.path().join("model.ckpt");
    let out = hcvae(&[
        "train",
        "--data",
        data.join("train").to_str().unwrap(),
        "--out",
        ckpt.to_str().unwrap(),
        "--mode",
        "none",
        "--epochs",
        "2",
        "--seed",
        "0",
    ]);
    assert_ok(&out, "train");
    assert!(ckpt.exists());
    let loss_csv = std::fs::read_to_string(dir.path().join("model.loss.csv")).unwrap();
    assert!(loss_csv.starts_with("epoch,loss,recon,kl\n0,"));
    assert_eq!(loss_csv.lines().count(), 4);

    let report = dir.path().join("report.csv");
    let scores = dir.path().join("scores.csv");
    let out = hcvae(&[
        "eval",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--data",
        data.join("test").to_str().unwrap(),
        "--report",
        report.to_str().unwrap(),
        "--scores",
        scores.to_str().unwrap(),
    ]);
    assert_ok(&out, "eval");
    assert!(stdout(&out).contains("macro: auc_paper="));

    let report_text = std::fs::read_to_string(&report).unwrap();
    let mut lines = report_text.lines();
    assert_eq!(
        lines.next(),
        Some("machine_type,machine_id,n_normal,n_anomaly,auc_paper,auc_rank")
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 4);
    for row in rows {
        let auc_field = row.split(',').nth(4).unwrap();
        assert!(!auc_field.is_empty(), "auc column empty in {row}");
        auc_field.parse::<f64>().unwrap();
    }
    let scores_text = std::fs::read_to_string(&scores).unwrap();
    assert!(scores_text.starts_with("clip_id,machine_type,machine_id,label,score\n"));
    assert_eq!(scores_text.lines().count(), 17);

    // Score one clip directly; the line ends in a parsable float.
    let clip = first_wav(&data.join("test").join("fan").join("id_00").join("normal"));
    let out = hcvae(&[
        "score",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--clip",
        clip.to_str().unwrap(),
        "--type",
        "fan",
        "--id",
        "id_00",
    ]);
    assert_ok(&out, "score");
    let line = stdout(&out);
    let score: f64 = line.trim().rsplit(',').next().unwrap().parse().unwrap();
    assert!(score.is_finite() && score > 0.0);

    let latents = dir.path().join("latents.csv");
    let out = hcvae(&[
        "export-latent",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--data",
        data.join("test").to_str().unwrap(),
        "--out",
        latents.to_str().unwrap(),
    ]);
    assert_ok(&out, "export-latent");
    let latent_text = std::fs::read_to_string(&latents).unwrap();
    assert!(latent_text.starts_with("clip_id,frame_index,mu_1,"));
    assert!(latent_text.lines().next().unwrap().ends_with(",mu_8"));

    // Finetuning the checkpoint on the same tree keeps working end to end.
    let tuned = dir.path().join("tuned.ckpt");
    let out = hcvae(&[
        "finetune",
        "--init",
        ckpt.to_str().unwrap(),
        "--data",
        data.join("train").to_str().unwrap(),
        "--out",
        tuned.to_str().unwrap(),
        "--epochs",
        "1",
    ]);
    assert_ok(&out, "finetune");
    assert!(tuned.exists());
}

#[test]
fn identical_seeds_reproduce_outputs_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth_small(&data);

    let train = |name: &str| {
        let ckpt = dir.path().join(name);
        let out = hcvae(&[
            "train",
            "--data",
            data.join("train").to_str().unwrap(),
            "--out",
            ckpt.to_str().unwrap(),
            "--mode",
            "both",
            "--epochs",
            "2",
            "--seed",
            "7",
        ]);
        assert_ok(&out, "train");
        std::fs::read(&ckpt).unwrap()
    };
    assert_eq!(train("a.ckpt"), train("b.ckpt"));
}

#[test]
fn train_mode_both_fails_on_a_tree_without_id_level() {
    let dir = tempfile::tempdir().unwrap();
    let flat = dir.path().join("flat").join("fan").join("normal");
    std::fs::create_dir_all(&flat).unwrap();
    let samples: Vec<f64> = (0..32000).map(|i| (i as f64 * 0.3).sin() * 0.4).collect();
    hcvae_core::audio::write_wav(flat.join("clip.wav"), &samples, 16000).unwrap();

    let out = hcvae(&[
        "train",
        "--data",
        dir.path().join("flat").to_str().unwrap(),
        "--out",
        dir.path().join("x.ckpt").to_str().unwrap(),
        "--mode",
        "both",
        "--epochs",
        "1",
    ]);
    assert!(!out.status.success());
    let err = stderr(&out);
    assert!(err.starts_with("error: "), "stderr was: {err}");
    assert_eq!(err.trim_end().lines().count(), 1, "stderr was: {err}");
}

#[test]
fn gradcheck_passes_and_prints_both_precisions() {
    let out = hcvae(&["gradcheck", "--seed", "3"]);
    assert_ok(&out, "gradcheck");
    let text = stdout(&out);
    assert!(text.contains("f64 vs finite differences"), "{text}");
    assert!(text.contains("f32 vs f64 gradients"), "{text}");
}

#[test]
fn unknown_flags_are_usage_errors() {
    let out = hcvae(&["train", "--frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}

fn walk_wavs(root: &Path) -> usize {
    let mut count = 0;
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if path.extension().is_some_and(|e| e == "wav") {
                count += 1;
            }
        }
    }
    count
}

fn first_wav(dir: &Path) -> std::path::PathBuf {
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    paths.sort();
    paths.into_iter().next().expect("at least one wav")
}
