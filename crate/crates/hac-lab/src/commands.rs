//! The verbs the binary dispatches into: pretrain, unlearn, eval, sweep,
//! export-embeddings, grad-check.
//!
//! Each verb resolves the corpus its config describes, runs the core
//! computation, and writes its artifacts into a content-addressed run
//! directory under `output_dir` (the directory name hashes the canonical
//! config, so reruns with identical inputs land in the same place with
//! byte-identical files).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use hac_core::corpus::{
    generate_corpus, generate_samples, split_forget, ConceptTaxonomy, CorpusSample, ForgetSpec,
};
use hac_core::eval::evaluate;
use hac_core::losses::{Embedding, SimilarityKind};
use hac_core::trainer::{encode_images, encode_texts, pretrain, unlearn, ModelParams};

use crate::config::{CorpusSource, RunConfig};
use crate::formats::{self, EmbeddingRow};
use crate::gradcheck;
use crate::{LabError, LabResult};

/// Hyperparameter fields `sweep --axis` may name.
pub const SWEEP_AXES: [&str; 8] = [
    "alpha", "beta", "gamma", "epsilon", "omega_r", "omega_f", "lambda_reg", "tau",
];

/// Corpus, train/eval sample sets, and the forget split one verb works on.
struct Prepared {
    taxonomy: ConceptTaxonomy,
    train: Vec<CorpusSample>,
    eval_samples: Vec<CorpusSample>,
    forget: ForgetSpec,
}

fn prepare(cfg: &RunConfig) -> LabResult<Prepared> {
    let (taxonomy, train, eval_samples) = match &cfg.corpus {
        CorpusSource::Synthetic(c) => {
            let (taxonomy, train) = generate_corpus(c)?;
            let eval_samples = generate_samples(
                &taxonomy,
                cfg.eval.samples_per_class,
                cfg.eval.noise_scale,
                cfg.eval.seed,
            );
            (taxonomy, train, eval_samples)
        }
        CorpusSource::External(src) => {
            let (taxonomy, samples) = formats::ingest_external_features(&src.path, src.format)?;
            // An external corpus carries no generator to draw held-out
            // samples from, so evaluation reuses the ingested set.
            let eval_samples = samples.clone();
            (taxonomy, samples, eval_samples)
        }
    };
    if taxonomy.dimension() != cfg.model.feature_dim {
        return Err(LabError::Validation(format!(
            "model.feature_dim is {} but the corpus has {}-dimensional features",
            cfg.model.feature_dim,
            taxonomy.dimension()
        )));
    }
    let forget = ForgetSpec::new(cfg.forget_classes.iter().copied())?;
    forget.validate_against(&taxonomy)?;
    Ok(Prepared { taxonomy, train, eval_samples, forget })
}

/// Create (or reuse) the run directory and echo the canonical config into it.
fn make_run_dir(cfg: &RunConfig, verb: &str, extra: &str) -> LabResult<PathBuf> {
    let dir = cfg.output_dir.join(cfg.run_dir_name(verb, extra));
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("config.json"), cfg.canonical_json())?;
    Ok(dir)
}

fn kind_name(kind: SimilarityKind) -> &'static str {
    match kind {
        SimilarityKind::EuclideanCosine => "euclidean-cosine",
        SimilarityKind::HyperbolicNegativeDistance => "hyperbolic-distance",
    }
}

fn check_model_compat(cfg: &RunConfig, model: &ModelParams, feature_dim: usize) -> LabResult<()> {
    if model.kind() != cfg.mode.kind() {
        return Err(LabError::Validation(format!(
            "checkpoint holds a {} model but mode {} needs {}",
            kind_name(model.kind()),
            cfg.mode,
            kind_name(cfg.mode.kind())
        )));
    }
    if model.feature_dim() != feature_dim {
        return Err(LabError::Validation(format!(
            "checkpoint expects {}-dimensional features but the corpus has {}",
            model.feature_dim(),
            feature_dim
        )));
    }
    if model.kind() == SimilarityKind::HyperbolicNegativeDistance
        && *model.geometry() != cfg.geometry
    {
        return Err(LabError::Validation(
            "checkpoint geometry (curvature/aperture) differs from the config's".to_string(),
        ));
    }
    Ok(())
}

/// Initialize and contrastively pretrain a model, writing the checkpoint,
/// the per-iteration loss log, and an evaluation report.
pub fn cmd_pretrain(cfg: &RunConfig) -> LabResult<PathBuf> {
    let prep = prepare(cfg)?;
    let init = ModelParams::init(&cfg.model, cfg.mode.kind(), cfg.geometry)?;
    let (model, log) = pretrain(
        &init,
        &prep.train,
        &cfg.pretrain_optim,
        cfg.pretrain_entailment_weight,
    )?;
    let dir = make_run_dir(cfg, "pretrain", "")?;
    formats::save_checkpoint(&dir.join("pretrained.ckpt"), &model)?;
    formats::write_pretrain_log_csv(&dir.join("pretrain_loss.csv"), &log)?;
    let report = evaluate(
        &model,
        None,
        &prep.eval_samples,
        &prep.taxonomy,
        &prep.forget,
        &cfg.eval.probe,
    )?;
    formats::write_json(&dir.join("eval_report.json"), &report)?;
    Ok(dir)
}

/// Run the configured unlearning objective from a pretrained checkpoint.
pub fn cmd_unlearn(cfg: &RunConfig, checkpoint: &Path) -> LabResult<PathBuf> {
    let model = formats::load_checkpoint(checkpoint)?;
    run_unlearn(cfg, &model)
}

/// The shared unlearning body: `cmd_unlearn` feeds it a loaded checkpoint,
/// `cmd_sweep` feeds every member the same base model. Writes the updated
/// checkpoint, the loss-component log, before/after evaluation reports, and
/// the behavioral audit.
fn run_unlearn(cfg: &RunConfig, original: &ModelParams) -> LabResult<PathBuf> {
    let prep = prepare(cfg)?;
    check_model_compat(cfg, original, prep.taxonomy.dimension())?;
    let (retain, forget_samples) = split_forget(&prep.train, &prep.forget, &prep.taxonomy)?;
    let (updated, log) = unlearn(
        original,
        &retain,
        &forget_samples,
        &cfg.hyperparams,
        &cfg.unlearn_optim,
        cfg.mode.unlearn_mode(),
    )?;
    let dir = make_run_dir(cfg, "unlearn", "")?;
    formats::save_checkpoint(&dir.join("unlearned.ckpt"), &updated)?;
    formats::write_unlearn_log_csv(&dir.join("unlearn_loss.csv"), &log)?;
    let before = evaluate(
        original,
        None,
        &prep.eval_samples,
        &prep.taxonomy,
        &prep.forget,
        &cfg.eval.probe,
    )?;
    let after = evaluate(
        &updated,
        Some(original),
        &prep.eval_samples,
        &prep.taxonomy,
        &prep.forget,
        &cfg.eval.probe,
    )?;
    formats::write_json(&dir.join("eval_before.json"), &before)?;
    formats::write_json(&dir.join("eval_after.json"), &after)?;
    let audit = after.audit.as_ref().expect("evaluation against an original model carries an audit");
    formats::write_json(&dir.join("audit.json"), audit)?;
    Ok(dir)
}

/// Evaluate a checkpoint on the config's held-out samples.
pub fn cmd_eval(cfg: &RunConfig, checkpoint: &Path) -> LabResult<PathBuf> {
    let model = formats::load_checkpoint(checkpoint)?;
    let prep = prepare(cfg)?;
    check_model_compat(cfg, &model, prep.taxonomy.dimension())?;
    let report = evaluate(
        &model,
        None,
        &prep.eval_samples,
        &prep.taxonomy,
        &prep.forget,
        &cfg.eval.probe,
    )?;
    let dir = make_run_dir(cfg, "eval", "")?;
    formats::write_json(&dir.join("eval_report.json"), &report)?;
    Ok(dir)
}

fn with_axis(cfg: &RunConfig, axis: &str, value: f64) -> LabResult<RunConfig> {
    let mut member = cfg.clone();
    {
        let hp = &mut member.hyperparams;
        match axis {
            "alpha" => hp.alpha = value,
            "beta" => hp.beta = value,
            "gamma" => hp.gamma = value,
            "epsilon" => hp.epsilon = value,
            "omega_r" => hp.omega_r = value,
            "omega_f" => hp.omega_f = value,
            "lambda_reg" => hp.lambda_reg = value,
            "tau" => hp.tau = value,
            _ => {
                return Err(LabError::Validation(format!(
                    "unknown sweep axis {axis:?}; expected one of {SWEEP_AXES:?}"
                )))
            }
        }
    }
    member.validate()?;
    Ok(member)
}

fn sweep_threads(members: usize) -> usize {
    let available = std::thread::available_parallelism().map(usize::from).unwrap_or(1);
    let cap = std::env::var("HAC_LAB_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&t| t >= 1)
        .unwrap_or(available);
    cap.min(members).max(1)
}

/// One unlearning run per axis value, all starting from the same base
/// model (a given checkpoint, or one pretraining done up front). Members
/// write ordinary unlearn run directories; the sweep directory holds the
/// merged `sweep.csv` ordered by axis value.
pub fn cmd_sweep(
    cfg: &RunConfig,
    axis: &str,
    values: &[f64],
    checkpoint: Option<&Path>,
) -> LabResult<PathBuf> {
    if values.is_empty() {
        return Err(LabError::Validation("sweep needs at least one --values entry".to_string()));
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(LabError::Validation(format!("sweep value {v} is not finite")));
    }
    let mut ordered = values.to_vec();
    ordered.sort_by(f64::total_cmp);
    ordered.dedup();
    // Build and validate every member config before any training starts.
    let members: Vec<RunConfig> = ordered
        .iter()
        .map(|&v| with_axis(cfg, axis, v))
        .collect::<LabResult<_>>()?;

    let extra = format!("{axis}={ordered:?}");
    let dir = make_run_dir(cfg, "sweep", &extra)?;
    let base = match checkpoint {
        Some(path) => formats::load_checkpoint(path)?,
        None => {
            let prep = prepare(cfg)?;
            let init = ModelParams::init(&cfg.model, cfg.mode.kind(), cfg.geometry)?;
            let (model, log) = pretrain(
                &init,
                &prep.train,
                &cfg.pretrain_optim,
                cfg.pretrain_entailment_weight,
            )?;
            formats::save_checkpoint(&dir.join("pretrained.ckpt"), &model)?;
            formats::write_pretrain_log_csv(&dir.join("pretrain_loss.csv"), &log)?;
            model
        }
    };

    // Fixed-slot results plus an atomic work queue keep the merge
    // deterministic no matter how many workers HAC_LAB_THREADS allows.
    type MemberOutcome = LabResult<(Option<f64>, Option<f64>)>;
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<MemberOutcome>>> =
        Mutex::new((0..members.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..sweep_threads(members.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= members.len() {
                    break;
                }
                let outcome = run_unlearn(&members[i], &base).and_then(|member_dir| {
                    let report = formats::read_eval_report(&member_dir.join("eval_after.json"))?;
                    Ok((report.r_acc, report.f_acc))
                });
                results.lock().expect("sweep results lock")[i] = Some(outcome);
            });
        }
    });

    let collected = results.into_inner().expect("sweep results lock");
    let mut rows = Vec::with_capacity(members.len());
    for (&value, slot) in ordered.iter().zip(collected) {
        let (r_acc, f_acc) = slot.expect("every sweep member ran")?;
        rows.push((value, r_acc, f_acc));
    }
    formats::write_sweep_csv(&dir.join("sweep.csv"), axis, &rows)?;
    Ok(dir)
}

fn embedding_row(modality: &str, class_id: u32, emb: Embedding) -> EmbeddingRow {
    match emb {
        Embedding::Euclidean(coords) => EmbeddingRow {
            modality: modality.to_string(),
            class_id,
            coords,
            time: None,
        },
        Embedding::Hyperbolic(p) => EmbeddingRow {
            modality: modality.to_string(),
            class_id,
            coords: p.space().to_vec(),
            // The time component is redundant given the curvature, but
            // storing it lets readers check the manifold constraint.
            time: Some(p.time()),
        },
    }
}

/// Encode the evaluation samples (optionally restricted by `export`) and
/// write one CSV row per modality per sample.
pub fn cmd_export_embeddings(cfg: &RunConfig, checkpoint: &Path) -> LabResult<PathBuf> {
    let model = formats::load_checkpoint(checkpoint)?;
    let prep = prepare(cfg)?;
    check_model_compat(cfg, &model, prep.taxonomy.dimension())?;

    let mut kept: Vec<&CorpusSample> = Vec::new();
    let mut per_class: BTreeMap<u32, usize> = BTreeMap::new();
    for s in &prep.eval_samples {
        if let Some(classes) = &cfg.export.classes {
            if !classes.contains(&s.class_id) {
                continue;
            }
        }
        let count = per_class.entry(s.class_id).or_insert(0);
        if let Some(cap) = cfg.export.samples_per_class {
            if *count >= cap {
                continue;
            }
        }
        *count += 1;
        kept.push(s);
    }
    if kept.is_empty() {
        return Err(LabError::Validation(
            "export selects no samples; check export.classes against the corpus".to_string(),
        ));
    }

    let image_feats: Vec<Vec<f64>> = kept.iter().map(|s| s.image_feature.clone()).collect();
    let text_feats: Vec<Vec<f64>> = kept.iter().map(|s| s.text_feature.clone()).collect();
    let image_emb = encode_images(&model, &image_feats)?;
    let text_emb = encode_texts(&model, &text_feats)?;
    let mut rows = Vec::with_capacity(kept.len() * 2);
    for ((s, ie), te) in kept.iter().zip(image_emb).zip(text_emb) {
        rows.push(embedding_row("image", s.class_id, ie));
        rows.push(embedding_row("text", s.class_id, te));
    }
    let dir = make_run_dir(cfg, "export", "")?;
    formats::write_embeddings_csv(&dir.join("embeddings.csv"), &rows)?;
    Ok(dir)
}

/// Verify every loss gradient against finite differences, print one line
/// per loss, and fail (exit 2) if any disagree.
pub fn cmd_grad_check(seed: u64) -> LabResult<()> {
    let report = gradcheck::run_checks(&gradcheck::default_checks(), seed)?;
    print!("{}", report.render());
    gradcheck::report_to_result(&report)
}
