//! End-to-end behavior of the command layer and the `hac-lab` binary:
//! artifact sets, log formats, sweep merging, export rows, exit codes, and
//! bitwise reproducibility.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hac_core::corpus::{generate_corpus, generate_samples, CorpusConfig};
use hac_core::geometry::GeometryConfig;
use hac_core::trainer::{ModelConfig, ModelParams};

use hac_lab::commands::{
    cmd_eval, cmd_export_embeddings, cmd_pretrain, cmd_sweep, cmd_unlearn,
};
use hac_lab::config::{CorpusSource, ExternalSource, FeatureFormat, Mode, RunConfig};
use hac_lab::formats::{
    read_embeddings_csv, read_eval_report, save_checkpoint, write_embeddings_csv,
    write_features_binary,
};

/// A few-hundred-iteration setup that keeps each test under a second.
fn tiny_config(mode: Mode, out: &Path) -> RunConfig {
    let mut cfg = RunConfig::desk(mode);
    cfg.corpus = CorpusSource::Synthetic(CorpusConfig {
        superclasses: 2,
        classes_per_superclass: 2,
        dimension: 8,
        samples_per_class: 24,
        noise_scale: 0.1,
        modality_offset_scale: 0.5,
        seed: 5,
    });
    cfg.forget_classes = vec![1];
    cfg.model = ModelConfig {
        feature_dim: 8,
        embed_dim: 4,
        hidden_dim: Some(12),
        temperature: 0.05,
        init_seed: 1,
    };
    cfg.pretrain_optim.total_iterations = 300;
    cfg.pretrain_optim.pairs_per_side = 8;
    cfg.unlearn_optim.total_iterations = 120;
    cfg.unlearn_optim.pairs_per_side = 8;
    cfg.eval.samples_per_class = 8;
    cfg.eval.probe.iterations = 120;
    cfg.output_dir = out.to_path_buf();
    cfg.validate().expect("tiny config validates");
    cfg
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn read_text(path: &Path) -> String {
    String::from_utf8(read(path)).expect("utf-8")
}

/// Column values of a loss-log CSV, by header name.
fn csv_column(text: &str, name: &str) -> Vec<f64> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().expect("header").split(',').collect();
    let idx = header
        .iter()
        .position(|c| *c == name)
        .unwrap_or_else(|| panic!("column {name} in {header:?}"));
    lines.map(|l| l.split(',').nth(idx).unwrap().parse().unwrap()).collect()
}

#[test]
fn pretrain_writes_artifacts_and_the_loss_trends_down() {
    let tmp = tempfile::tempdir().unwrap();
    // The output directory is nested and does not exist yet.
    let cfg = tiny_config(Mode::MeruHacReg, &tmp.path().join("deep/nested/runs"));
    let dir = cmd_pretrain(&cfg).unwrap();
    assert!(dir.starts_with(&cfg.output_dir));
    for f in ["config.json", "pretrained.ckpt", "pretrain_loss.csv", "eval_report.json"] {
        assert!(dir.join(f).is_file(), "missing {f}");
    }
    assert_eq!(read_text(&dir.join("config.json")), cfg.canonical_json());

    let totals = csv_column(&read_text(&dir.join("pretrain_loss.csv")), "total");
    assert_eq!(totals.len(), 300);
    let window_means: Vec<f64> = totals
        .chunks(100)
        .map(|w| w.iter().sum::<f64>() / w.len() as f64)
        .collect();
    for pair in window_means.windows(2) {
        assert!(
            pair[1] < pair[0],
            "loss means per 100-iteration window should fall: {window_means:?}"
        );
    }

    let report = read_eval_report(&dir.join("eval_report.json")).unwrap();
    assert!(report.r_acc.is_some() && report.f_acc.is_some());
    assert!(report.audit.is_none(), "no originals to audit against after pretraining");
}

#[test]
fn unlearn_writes_artifacts_and_the_log_decomposes_exactly() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(Mode::MeruHacReg, tmp.path());
    let pre = cmd_pretrain(&cfg).unwrap();
    let dir = cmd_unlearn(&cfg, &pre.join("pretrained.ckpt")).unwrap();
    for f in [
        "config.json",
        "unlearned.ckpt",
        "unlearn_loss.csv",
        "eval_before.json",
        "eval_after.json",
        "audit.json",
    ] {
        assert!(dir.join(f).is_file(), "missing {f}");
    }

    // Every row's total must be the weighted sum of its raw components.
    let text = read_text(&dir.join("unlearn_loss.csv"));
    let hp = &cfg.hyperparams;
    let totals = csv_column(&text, "total");
    let retain = csv_column(&text, "retain");
    let neg = csv_column(&text, "negative_alignment");
    let pos = csv_column(&text, "positive_alignment");
    let perf = csv_column(&text, "performance_preserving");
    let rent = csv_column(&text, "retain_entailment");
    let fent = csv_column(&text, "forget_entailment");
    let norm = csv_column(&text, "norm_regularization");
    assert_eq!(totals.len(), 120);
    for i in 0..totals.len() {
        let forget = hp.alpha * neg[i] + hp.beta * pos[i] + hp.gamma * perf[i];
        let want = retain[i]
            + hp.epsilon * forget
            + hp.omega_r * rent[i]
            + hp.omega_f * fent[i]
            + hp.lambda_reg * norm[i];
        assert!(
            (totals[i] - want).abs() <= 1e-9,
            "row {i}: total {} vs recombined {want}",
            totals[i]
        );
    }

    let after = read_eval_report(&dir.join("eval_after.json")).unwrap();
    assert!(after.audit.is_some(), "post-unlearning eval carries the audit");
}

#[test]
fn euclidean_unlearn_logs_zero_for_hyperbolic_terms() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(Mode::ClipAc, tmp.path());
    let pre = cmd_pretrain(&cfg).unwrap();
    let dir = cmd_unlearn(&cfg, &pre.join("pretrained.ckpt")).unwrap();
    let text = read_text(&dir.join("unlearn_loss.csv"));
    for col in ["retain_entailment", "forget_entailment", "norm_regularization"] {
        assert!(csv_column(&text, col).iter().all(|&v| v == 0.0), "{col} must stay 0");
    }
    assert!(csv_column(&text, "retain").iter().any(|&v| v != 0.0));
}

#[test]
fn reruns_reproduce_identical_bytes() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |sub: &str| {
        let cfg = tiny_config(Mode::MeruHacReg, &tmp.path().join(sub));
        let pre = cmd_pretrain(&cfg).unwrap();
        let un = cmd_unlearn(&cfg, &pre.join("pretrained.ckpt")).unwrap();
        (pre, un)
    };
    let (pre_a, un_a) = run("a");
    let (pre_b, un_b) = run("b");
    assert_eq!(pre_a.file_name(), pre_b.file_name(), "run names are content-addressed");
    for f in ["pretrained.ckpt", "pretrain_loss.csv", "eval_report.json"] {
        assert_eq!(read(&pre_a.join(f)), read(&pre_b.join(f)), "{f} differs");
    }
    for f in ["unlearned.ckpt", "unlearn_loss.csv", "eval_before.json", "eval_after.json", "audit.json"]
    {
        assert_eq!(read(&un_a.join(f)), read(&un_b.join(f)), "{f} differs");
    }
}

#[test]
fn a_single_value_sweep_reproduces_the_direct_unlearn_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(Mode::MeruHacReg, &tmp.path().join("direct"));
    let pre = cmd_pretrain(&cfg).unwrap();
    let ckpt = pre.join("pretrained.ckpt");
    let direct = cmd_unlearn(&cfg, &ckpt).unwrap();

    let mut sweep_cfg = cfg.clone();
    sweep_cfg.output_dir = tmp.path().join("swept");
    let sweep_dir =
        cmd_sweep(&sweep_cfg, "epsilon", &[cfg.hyperparams.epsilon], Some(&ckpt)).unwrap();

    // The lone member lands in a directory of the same content-hash name
    // and with byte-identical artifacts.
    let member = sweep_cfg.output_dir.join(direct.file_name().unwrap());
    assert!(member.is_dir(), "sweep member runs as a standard unlearn run");
    for f in ["unlearned.ckpt", "unlearn_loss.csv", "eval_before.json", "eval_after.json", "audit.json"]
    {
        assert_eq!(read(&member.join(f)), read(&direct.join(f)), "{f} differs");
    }

    let after = read_eval_report(&direct.join("eval_after.json")).unwrap();
    let sweep_csv = read_text(&sweep_dir.join("sweep.csv"));
    let mut lines = sweep_csv.lines();
    assert_eq!(lines.next(), Some("epsilon,r_acc,f_acc"));
    let row = lines.next().expect("one data row");
    assert_eq!(lines.next(), None);
    let fields: Vec<&str> = row.split(',').collect();
    assert_eq!(fields[0].parse::<f64>().unwrap(), cfg.hyperparams.epsilon);
    assert_eq!(fields[1].parse::<f64>().ok(), after.r_acc);
    assert_eq!(fields[2].parse::<f64>().ok(), after.f_acc);
}

#[test]
fn export_covers_both_modalities_and_stays_on_manifold() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(Mode::MeruHacReg, tmp.path());
    cfg.corpus = CorpusSource::Synthetic(CorpusConfig {
        superclasses: 2,
        classes_per_superclass: 3,
        dimension: 8,
        samples_per_class: 10,
        noise_scale: 0.1,
        modality_offset_scale: 0.5,
        seed: 5,
    });
    cfg.forget_classes = vec![1];
    cfg.eval.samples_per_class = 4;
    cfg.validate().unwrap();

    // Export needs weights, not training: a freshly initialized model will do.
    let model = ModelParams::init(&cfg.model, cfg.mode.kind(), cfg.geometry).unwrap();
    let ckpt = tmp.path().join("init.ckpt");
    save_checkpoint(&ckpt, &model).unwrap();

    let dir = cmd_export_embeddings(&cfg, &ckpt).unwrap();
    let rows = read_embeddings_csv(&dir.join("embeddings.csv")).unwrap();
    assert_eq!(rows.len(), 6 * 4 * 2, "6 classes × 4 samples × 2 modalities");
    let groups: BTreeSet<(String, u32)> =
        rows.iter().map(|r| (r.modality.clone(), r.class_id)).collect();
    assert_eq!(groups.len(), 12, "6 classes × 2 modalities");

    let c = cfg.geometry.curvature;
    for r in &rows {
        let t = r.time.expect("hyperbolic exports carry the time component");
        let space_sq: f64 = r.coords.iter().map(|v| v * v).sum();
        assert!(
            (c * (space_sq - t * t) + 1.0).abs() <= 1e-9,
            "exported point violates the manifold constraint"
        );
    }

    // Rows survive a write/read cycle without any loss of precision.
    let copy = tmp.path().join("copy.csv");
    write_embeddings_csv(&copy, &rows).unwrap();
    assert_eq!(read_embeddings_csv(&copy).unwrap(), rows);

    // Class filter and per-class cap shrink the set; an impossible filter
    // is a validation error.
    let mut filtered = cfg.clone();
    filtered.export.classes = Some(vec![0, 5]);
    filtered.export.samples_per_class = Some(2);
    let dir = cmd_export_embeddings(&filtered, &ckpt).unwrap();
    let rows = read_embeddings_csv(&dir.join("embeddings.csv")).unwrap();
    assert_eq!(rows.len(), 2 * 2 * 2);
    assert!(rows.iter().all(|r| r.class_id == 0 || r.class_id == 5));

    let mut empty = cfg.clone();
    empty.export.classes = Some(vec![77]);
    assert_eq!(cmd_export_embeddings(&empty, &ckpt).unwrap_err().exit_code(), 1);

    // Euclidean exports have no time column.
    let mut euclid = cfg.clone();
    euclid.mode = Mode::ClipAc;
    euclid.hyperparams.omega_r = 0.0;
    euclid.hyperparams.omega_f = 0.0;
    euclid.hyperparams.lambda_reg = 0.0;
    euclid.validate().unwrap();
    let emodel = ModelParams::init(&euclid.model, euclid.mode.kind(), euclid.geometry).unwrap();
    let eckpt = tmp.path().join("euclid.ckpt");
    save_checkpoint(&eckpt, &emodel).unwrap();
    let dir = cmd_export_embeddings(&euclid, &eckpt).unwrap();
    let rows = read_embeddings_csv(&dir.join("embeddings.csv")).unwrap();
    assert!(rows.iter().all(|r| r.time.is_none()));
    // Unit rows: cosine models export normalized embeddings.
    for r in &rows {
        let n: f64 = r.coords.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() <= 1e-12);
    }
}

#[test]
fn external_feature_files_drive_eval_like_synthetic_corpora() {
    let tmp = tempfile::tempdir().unwrap();
    let (taxonomy, _) = generate_corpus(&CorpusConfig {
        superclasses: 2,
        classes_per_superclass: 2,
        dimension: 8,
        samples_per_class: 2,
        noise_scale: 0.1,
        modality_offset_scale: 0.5,
        seed: 9,
    })
    .unwrap();
    let samples = generate_samples(&taxonomy, 12, 0.1, 77);
    let features = tmp.path().join("features.bin");
    write_features_binary(&features, &samples).unwrap();

    let mut cfg = tiny_config(Mode::MeruHacReg, tmp.path());
    cfg.corpus = CorpusSource::External(ExternalSource {
        path: features.clone(),
        format: FeatureFormat::Binary,
    });
    cfg.validate().unwrap();

    let model = ModelParams::init(&cfg.model, cfg.mode.kind(), cfg.geometry).unwrap();
    let ckpt = tmp.path().join("init.ckpt");
    save_checkpoint(&ckpt, &model).unwrap();
    let dir = cmd_eval(&cfg, &ckpt).unwrap();
    let report = read_eval_report(&dir.join("eval_report.json")).unwrap();
    assert_eq!(report.class_ids, vec![0, 1, 2, 3]);
    assert_eq!(report.confusion.len(), 4);
    assert_eq!(report.confusion[0].iter().sum::<u64>(), 12);

    // A model whose feature width disagrees with the file is rejected.
    let mut wrong = cfg.clone();
    wrong.model.feature_dim = 16;
    assert_eq!(cmd_eval(&wrong, &ckpt).unwrap_err().exit_code(), 1);
}

// ── binary-level tests ──────────────────────────────────────────────────

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hac-lab"))
}

fn run_ok(out: Output) -> String {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).expect("utf-8 stdout")
}

#[test]
fn sweep_merges_members_in_axis_order_across_threads() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(Mode::MeruHacReg, &tmp.path().join("runs"));
    let cfg_path = tmp.path().join("config.json");
    std::fs::write(&cfg_path, cfg.canonical_json()).unwrap();

    let stdout = run_ok(bin().args(["pretrain", "--config"]).arg(&cfg_path).output().unwrap());
    let pre_dir = PathBuf::from(stdout.trim());
    let ckpt = pre_dir.join("pretrained.ckpt");
    assert!(ckpt.is_file());

    // Values arrive unsorted and run on two workers; the CSV still comes
    // out ordered by value.
    let stdout = run_ok(
        bin()
            .args(["sweep", "--config"])
            .arg(&cfg_path)
            .arg("--checkpoint")
            .arg(&ckpt)
            .args(["--axis", "epsilon", "--values", "0.01,0.0003"])
            .env("HAC_LAB_THREADS", "2")
            .output()
            .unwrap(),
    );
    let sweep_dir = PathBuf::from(stdout.trim());
    let csv = read_text(&sweep_dir.join("sweep.csv"));
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "epsilon,r_acc,f_acc");
    assert_eq!(lines.len(), 3);
    let v0: f64 = lines[1].split(',').next().unwrap().parse().unwrap();
    let v1: f64 = lines[2].split(',').next().unwrap().parse().unwrap();
    assert_eq!((v0, v1), (0.0003, 0.01));
    for line in &lines[1..] {
        let fields: Vec<&str> = line.split(',').collect();
        assert!(fields[1].parse::<f64>().is_ok(), "r_acc filled: {line}");
        assert!(fields[2].parse::<f64>().is_ok(), "f_acc filled: {line}");
    }
}

#[test]
fn grad_check_verb_prints_one_line_per_loss() {
    let out = bin().args(["grad-check", "--seed", "7"]).output().unwrap();
    let stdout = run_ok(out);
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines.len(), 20, "{stdout}");
    for line in &lines {
        assert!(line.contains("max rel err"), "{line}");
        assert!(line.trim_end().ends_with("ok"), "{line}");
    }
}

#[test]
fn the_binary_maps_failures_to_documented_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(Mode::MeruHacReg, &tmp.path().join("runs"));
    let cfg_path = tmp.path().join("config.json");
    std::fs::write(&cfg_path, cfg.canonical_json()).unwrap();

    // 0: success, printing the run directory.
    let out = bin().args(["pretrain", "--config"]).arg(&cfg_path).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let dir = PathBuf::from(String::from_utf8(out.stdout).unwrap().trim());
    assert!(dir.join("pretrained.ckpt").is_file());

    // 1: malformed flags.
    let out = bin().args(["unlearn", "--config"]).arg(&cfg_path).output().unwrap();
    assert_eq!(out.status.code(), Some(1), "missing --checkpoint");

    // 1: config with an unknown key.
    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, cfg.canonical_json().replace("\"seed\"", "\"sead\"")).unwrap();
    let out = bin().args(["pretrain", "--config"]).arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("config"));

    // 1: config that parses but fails validation.
    let invalid = tmp.path().join("invalid.json");
    let mut broken = cfg.clone();
    broken.hyperparams.tau = -1.0;
    std::fs::write(&invalid, broken.canonical_json()).unwrap();
    let out = bin().args(["pretrain", "--config"]).arg(&invalid).output().unwrap();
    assert_eq!(out.status.code(), Some(1));

    // 2: numerical failure — a deliberately divergent learning rate.
    let diverge = tmp.path().join("diverge.json");
    let mut hot = cfg.clone();
    hot.pretrain_optim.lr = 1e9;
    hot.pretrain_optim.total_iterations = 50;
    std::fs::write(&diverge, hot.canonical_json()).unwrap();
    let out = bin().args(["pretrain", "--config"]).arg(&diverge).output().unwrap();
    assert_eq!(
        out.status.code(),
        Some(2),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );

    // 3: unreadable config path.
    let out = bin()
        .args(["pretrain", "--config"])
        .arg(tmp.path().join("missing.json"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));

    // 3: unreadable checkpoint path.
    let out = bin()
        .args(["unlearn", "--config"])
        .arg(&cfg_path)
        .arg("--checkpoint")
        .arg(tmp.path().join("missing.ckpt"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));

    // --seed overrides the config: same config, different seed, different
    // run directory name.
    let out = bin()
        .args(["pretrain", "--config"])
        .arg(&cfg_path)
        .args(["--seed", "99"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let seeded = PathBuf::from(String::from_utf8(out.stdout).unwrap().trim());
    assert_ne!(seeded.file_name(), dir.file_name());
}

#[test]
fn checkpoints_refuse_the_wrong_geometry_mode() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(Mode::MeruHacReg, tmp.path());

    // A euclidean checkpoint fed to a hyperbolic run. Geometry or feature
    // mismatches must fail validation, not crash mid-training.
    let euclid =
        ModelParams::init(&cfg.model, Mode::ClipAc.kind(), GeometryConfig::default()).unwrap();
    let ckpt = tmp.path().join("euclid.ckpt");
    save_checkpoint(&ckpt, &euclid).unwrap();
    let err = cmd_unlearn(&cfg, &ckpt).unwrap_err();
    assert_eq!(err.exit_code(), 1);
    assert!(err.to_string().contains("euclidean"), "{err}");

    let mut other_geo = cfg.geometry;
    other_geo.curvature = 2.0;
    let bent = ModelParams::init(&cfg.model, cfg.mode.kind(), other_geo).unwrap();
    let ckpt = tmp.path().join("bent.ckpt");
    save_checkpoint(&ckpt, &bent).unwrap();
    let err = cmd_unlearn(&cfg, &ckpt).unwrap_err();
    assert_eq!(err.exit_code(), 1);
    assert!(err.to_string().contains("geometry"), "{err}");
}
