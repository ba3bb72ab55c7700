//! Measurement over trained models: zero-shot classification against class
//! prompts, retain/forget accuracy splits, confusion matrices, a linear
//! probe on frozen embeddings, and assembly into one report.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Graph;
use crate::corpus::{class_prompt_feature, ConceptTaxonomy, CorpusSample, ForgetSpec};
use crate::error::{Error, Result};
use crate::losses::{similarity, unlearning_definition_audit, AuditReport, Embedding, PairedEmbeddings};
use crate::tensor::Tensor;
use crate::trainer::{adam_step, encode_images, encode_texts, AdamState, ModelParams, OptimConfig};

/// Classify each image feature by maximum similarity against the encoded
/// class prompts. Ties break toward the lowest class id.
pub fn zero_shot_classify(
    model: &ModelParams,
    image_features: &[Vec<f64>],
    prompts: &[(u32, Vec<f64>)],
) -> Result<Vec<u32>> {
    if image_features.is_empty() {
        return Err(Error::EmptyInput { op: "zero_shot_classify" });
    }
    if prompts.len() < 2 {
        return Err(Error::invalid("zero_shot_classify: need at least 2 class prompts"));
    }
    let mut sorted: Vec<(u32, &Vec<f64>)> = prompts.iter().map(|(id, f)| (*id, f)).collect();
    sorted.sort_by_key(|(id, _)| *id);
    if sorted.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(Error::invalid("zero_shot_classify: duplicate class id in prompts"));
    }

    let images = encode_images(model, image_features)?;
    let prompt_feats: Vec<Vec<f64>> = sorted.iter().map(|(_, f)| (*f).clone()).collect();
    let prompt_emb = encode_texts(model, &prompt_feats)?;

    let mut out = Vec::with_capacity(images.len());
    for img in &images {
        let mut best_id = sorted[0].0;
        let mut best_sim = similarity(img, &prompt_emb[0])?;
        for (k, (id, _)) in sorted.iter().enumerate().skip(1) {
            let s = similarity(img, &prompt_emb[k])?;
            if s > best_sim {
                best_sim = s;
                best_id = *id;
            }
        }
        out.push(best_id);
    }
    Ok(out)
}

/// Accuracy over retain-class samples and over forget-class samples. A
/// partition with no samples reports `None` rather than a silent zero.
pub fn retain_forget_accuracy(
    predictions: &[u32],
    labels: &[u32],
    forget: &ForgetSpec,
) -> Result<(Option<f64>, Option<f64>)> {
    if predictions.len() != labels.len() {
        return Err(Error::ShapeMismatch {
            op: "retain_forget_accuracy",
            lhs: alloc::vec![predictions.len()],
            rhs: alloc::vec![labels.len()],
        });
    }
    let mut r = (0usize, 0usize);
    let mut f = (0usize, 0usize);
    for (&p, &l) in predictions.iter().zip(labels) {
        let slot = if forget.contains(l) { &mut f } else { &mut r };
        slot.1 += 1;
        slot.0 += usize::from(p == l);
    }
    let frac = |(hits, n): (usize, usize)| (n > 0).then(|| hits as f64 / n as f64);
    Ok((frac(r), frac(f)))
}

/// C×C counts; entry (i, j) counts samples of true class i predicted j.
pub fn confusion_matrix(predictions: &[u32], labels: &[u32], classes: usize) -> Result<Vec<Vec<u64>>> {
    if predictions.len() != labels.len() {
        return Err(Error::ShapeMismatch {
            op: "confusion_matrix",
            lhs: alloc::vec![predictions.len()],
            rhs: alloc::vec![labels.len()],
        });
    }
    let mut m = alloc::vec![alloc::vec![0u64; classes]; classes];
    for (&p, &l) in predictions.iter().zip(labels) {
        if (l as usize) >= classes || (p as usize) >= classes {
            return Err(Error::invalid(format!(
                "confusion_matrix: class {} outside [0, {classes})",
                l.max(p)
            )));
        }
        m[l as usize][p as usize] += 1;
    }
    Ok(m)
}

/// Per-class accuracy from a confusion matrix (`None` for absent classes).
pub fn per_class_accuracy(confusion: &[Vec<u64>]) -> Vec<Option<f64>> {
    confusion
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let total: u64 = row.iter().sum();
            (total > 0).then(|| row[i] as f64 / total as f64)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct ProbeConfig {
    pub iterations: usize,
    pub lr: f64,
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig { iterations: 500, lr: 1e-2, train_fraction: 0.8, seed: 0 }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::invalid("probe: lr must be positive"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::invalid("probe: train fraction must lie in (0, 1)"));
        }
        Ok(())
    }
}

fn probe_features(e: &Embedding) -> Vec<f64> {
    match e {
        Embedding::Euclidean(v) => v.clone(),
        // Space components carry all positional information (time is
        // derived), so the probe sees the manifold point directly.
        Embedding::Hyperbolic(p) => p.space().to_vec(),
    }
}

/// Multinomial logistic regression on frozen embeddings, full-batch Adam.
/// Returns test accuracy over retain-class and forget-class samples.
pub fn linear_probe(
    embeddings: &[Embedding],
    labels: &[u32],
    forget: &ForgetSpec,
    cfg: &ProbeConfig,
) -> Result<(Option<f64>, Option<f64>)> {
    cfg.validate()?;
    if embeddings.is_empty() {
        return Err(Error::EmptyInput { op: "linear_probe" });
    }
    if embeddings.len() != labels.len() {
        return Err(Error::ShapeMismatch {
            op: "linear_probe",
            lhs: alloc::vec![embeddings.len()],
            rhs: alloc::vec![labels.len()],
        });
    }
    let rows: Vec<Vec<f64>> = embeddings.iter().map(probe_features).collect();
    if rows.iter().skip(1).all(|r| r == &rows[0]) && rows.len() > 1 {
        return Err(Error::Domain {
            op: "linear_probe",
            detail: "all embeddings identical; nothing separable".into(),
        });
    }
    let mut class_ids: Vec<u32> = labels.to_vec();
    class_ids.sort_unstable();
    class_ids.dedup();
    if class_ids.len() < 2 {
        return Err(Error::invalid("linear_probe: need at least 2 classes"));
    }
    let class_index = |id: u32| class_ids.binary_search(&id).expect("label present");

    // Seeded split. Guarantee at least one test row.
    let mut order: Vec<usize> = (0..rows.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    order.shuffle(&mut rng);
    let n_train = ((rows.len() as f64 * cfg.train_fraction) as usize)
        .clamp(1, rows.len() - 1);
    let (train_idx, test_idx) = order.split_at(n_train);

    let d = rows[0].len();
    let c = class_ids.len();
    let train_x = Tensor::from_rows(&train_idx.iter().map(|&i| rows[i].clone()).collect::<Vec<_>>())?;
    let mut onehot = Tensor::zeros(alloc::vec![train_idx.len(), c]);
    for (r, &i) in train_idx.iter().enumerate() {
        onehot.values_mut()[r * c + class_index(labels[i])] = 1.0;
    }

    let mut weight = Tensor::zeros(alloc::vec![d, c]);
    let mut bias = Tensor::zeros(alloc::vec![1, c]);
    let optim = OptimConfig {
        lr: cfg.lr,
        weight_decay: 0.0,
        total_iterations: cfg.iterations.max(1),
        ..OptimConfig::default()
    };
    let mut adam = AdamState::new(&[&weight, &bias]);
    for _ in 0..cfg.iterations {
        let mut g = Graph::new();
        let w = g.leaf(weight.clone());
        let b = g.leaf(bias.clone());
        let x = g.constant(train_x.clone());
        let y = g.constant(onehot.clone());
        let xw = g.matmul(x, w)?;
        let logits = g.add(xw, b)?;
        let lse = g.lse_axis(logits, 1)?;
        let picked_terms = g.mul(logits, y)?;
        let picked = g.sum_axis(picked_terms, 1)?;
        let per_row = g.sub(lse, picked)?;
        let loss = g.mean(per_row)?;
        let grads = g.backward(loss, &[w, b])?;
        let gw = grads.get(w).expect("weight grad").clone();
        let gb = grads.get(b).expect("bias grad").clone();
        adam_step(&mut [&mut weight, &mut bias], &[gw, gb], &mut adam, &optim, cfg.lr)?;
    }

    // Score the held-out rows.
    let mut r = (0usize, 0usize);
    let mut f = (0usize, 0usize);
    for &i in test_idx {
        let mut best = 0usize;
        let mut best_score = f64::NEG_INFINITY;
        for k in 0..c {
            let mut score = bias.values()[k];
            for (j, &xj) in rows[i].iter().enumerate() {
                score += xj * weight.values()[j * c + k];
            }
            if score > best_score {
                best_score = score;
                best = k;
            }
        }
        let hit = class_ids[best] == labels[i];
        let slot = if forget.contains(labels[i]) { &mut f } else { &mut r };
        slot.1 += 1;
        slot.0 += usize::from(hit);
    }
    let frac = |(hits, n): (usize, usize)| (n > 0).then(|| hits as f64 / n as f64);
    Ok((frac(r), frac(f)))
}

/// Everything the measurement suite produces for one model on one sample
/// set.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EvalReport {
    pub r_acc: Option<f64>,
    pub f_acc: Option<f64>,
    pub class_ids: Vec<u32>,
    pub confusion: Vec<Vec<u64>>,
    pub per_class_accuracy: Vec<Option<f64>>,
    pub probe_r_acc: Option<f64>,
    pub probe_f_acc: Option<f64>,
    pub audit: Option<AuditReport>,
}

fn paired_embeddings(model: &ModelParams, samples: &[&CorpusSample]) -> Result<PairedEmbeddings> {
    let image: Vec<Vec<f64>> = samples.iter().map(|s| s.image_feature.clone()).collect();
    let text: Vec<Vec<f64>> = samples.iter().map(|s| s.text_feature.clone()).collect();
    Ok(PairedEmbeddings {
        image: encode_images(model, &image)?,
        text: encode_texts(model, &text)?,
    })
}

/// Run the full suite: zero-shot accuracy split, confusion, probe, and —
/// when the pre-unlearning model is supplied — the behavioral audit of
/// forget-pair detachment and retain drift.
pub fn evaluate(
    model: &ModelParams,
    original: Option<&ModelParams>,
    samples: &[CorpusSample],
    taxonomy: &ConceptTaxonomy,
    forget: &ForgetSpec,
    probe: &ProbeConfig,
) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::EmptyInput { op: "evaluate" });
    }
    forget.validate_against(taxonomy)?;

    let class_ids = taxonomy.class_ids();
    let prompts: Vec<(u32, Vec<f64>)> = class_ids
        .iter()
        .map(|&id| Ok((id, class_prompt_feature(taxonomy, id)?)))
        .collect::<Result<_>>()?;
    let image_features: Vec<Vec<f64>> = samples.iter().map(|s| s.image_feature.clone()).collect();
    let labels: Vec<u32> = samples.iter().map(|s| s.class_id).collect();

    let predictions = zero_shot_classify(model, &image_features, &prompts)?;
    let (r_acc, f_acc) = retain_forget_accuracy(&predictions, &labels, forget)?;
    let confusion = confusion_matrix(&predictions, &labels, class_ids.len())?;
    let per_class = per_class_accuracy(&confusion);

    let embeddings = encode_images(model, &image_features)?;
    let (probe_r, probe_f) = linear_probe(&embeddings, &labels, forget, probe)?;

    let audit = match original {
        Some(orig) => {
            let retain_s: Vec<&CorpusSample> =
                samples.iter().filter(|s| !forget.contains(s.class_id)).collect();
            let forget_s: Vec<&CorpusSample> =
                samples.iter().filter(|s| forget.contains(s.class_id)).collect();
            if retain_s.is_empty() || forget_s.is_empty() {
                None
            } else {
                Some(unlearning_definition_audit(
                    &paired_embeddings(orig, &retain_s)?,
                    &paired_embeddings(orig, &forget_s)?,
                    &paired_embeddings(model, &retain_s)?,
                    &paired_embeddings(model, &forget_s)?,
                )?)
            }
        }
        None => None,
    };

    Ok(EvalReport {
        r_acc,
        f_acc,
        class_ids,
        confusion,
        per_class_accuracy: per_class,
        probe_r_acc: probe_r,
        probe_f_acc: probe_f,
        audit,
    })
}
