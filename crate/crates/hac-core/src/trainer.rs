//! Dual affine encoders over precomputed features, AdamW-style updates
//! with cosine decay and global-norm clipping, and the two training
//! procedures: contrastive pretraining and retain/forget unlearning.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Node};
use crate::corpus::{BalancedSampler, CorpusSample, FeatureBatch};
use crate::error::{Error, Result};
use crate::geometry::{exp_map_origin, GeometryConfig};
use crate::losses::{
    assemble_objective, clip_contrastive_loss, entailment_penalty, lift_batch, normalize_rows,
    BatchEmbeddings, Embedding, EmbeddingBatch, ObjectiveMode, SimilarityKind, UnlearnHyperParams,
};
use crate::math;
use crate::tensor::Tensor;

// ── model ───────────────────────────────────────────────────────────────

/// One encoder: a chain of affine layers with ReLU between them (so a
/// single layer is purely affine).
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    layers: Vec<(Tensor, Tensor)>,
}

impl EncoderParams {
    fn init(rng: &mut ChaCha8Rng, dims: &[usize]) -> Self {
        let mut layers = Vec::new();
        for w in dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = math::sqrt(6.0 / (fan_in + fan_out) as f64);
            let values: Vec<f64> =
                (0..fan_in * fan_out).map(|_| rng.random_range(-bound..bound)).collect();
            let weight = Tensor::new(alloc::vec![fan_in, fan_out], values).expect("weight");
            let bias = Tensor::zeros(alloc::vec![1, fan_out]);
            layers.push((weight, bias));
        }
        EncoderParams { layers }
    }

    pub fn layers(&self) -> &[(Tensor, Tensor)] {
        &self.layers
    }

    pub fn from_layers(layers: Vec<(Tensor, Tensor)>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::EmptyInput { op: "encoder_params" });
        }
        for (i, (w, b)) in layers.iter().enumerate() {
            if w.rank() != 2 || b.shape() != [1, w.shape()[1]] {
                return Err(Error::InvalidShape {
                    op: "encoder_params",
                    detail: format!(
                        "layer {i}: weight {:?} incompatible with bias {:?}",
                        w.shape(),
                        b.shape()
                    ),
                });
            }
            if i > 0 && layers[i - 1].0.shape()[1] != w.shape()[0] {
                return Err(Error::InvalidShape {
                    op: "encoder_params",
                    detail: format!("layer {i} input dim does not chain"),
                });
            }
        }
        Ok(EncoderParams { layers })
    }

    fn input_dim(&self) -> usize {
        self.layers[0].0.shape()[0]
    }

    fn output_dim(&self) -> usize {
        self.layers.last().unwrap().0.shape()[1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct ModelConfig {
    pub feature_dim: usize,
    pub embed_dim: usize,
    /// Width of the single hidden layer; `None` keeps the encoders affine.
    pub hidden_dim: Option<usize>,
    pub temperature: f64,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            feature_dim: 16,
            embed_dim: 8,
            hidden_dim: Some(32),
            temperature: 0.05,
            init_seed: 1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim < 2 || self.embed_dim < 2 {
            return Err(Error::InvalidShape {
                op: "model_config",
                detail: format!(
                    "feature dim {} and embed dim {} must both be ≥ 2",
                    self.feature_dim, self.embed_dim
                ),
            });
        }
        if self.hidden_dim == Some(0) {
            return Err(Error::invalid("model_config: hidden dim must be ≥ 1"));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::invalid("model_config: temperature must be positive"));
        }
        Ok(())
    }
}

/// Both encoders plus the (fixed) softmax temperature and the geometry the
/// embeddings live in.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    image: EncoderParams,
    text: EncoderParams,
    log_temperature: f64,
    kind: SimilarityKind,
    geometry: GeometryConfig,
}

impl ModelParams {
    pub fn init(cfg: &ModelConfig, kind: SimilarityKind, geometry: GeometryConfig) -> Result<Self> {
        cfg.validate()?;
        geometry.validate()?;
        let dims: Vec<usize> = match cfg.hidden_dim {
            Some(h) => alloc::vec![cfg.feature_dim, h, cfg.embed_dim],
            None => alloc::vec![cfg.feature_dim, cfg.embed_dim],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.init_seed);
        let image = EncoderParams::init(&mut rng, &dims);
        let text = EncoderParams::init(&mut rng, &dims);
        Ok(ModelParams {
            image,
            text,
            log_temperature: math::ln(cfg.temperature),
            kind,
            geometry,
        })
    }

    pub fn from_parts(
        image: EncoderParams,
        text: EncoderParams,
        log_temperature: f64,
        kind: SimilarityKind,
        geometry: GeometryConfig,
    ) -> Result<Self> {
        geometry.validate()?;
        if !log_temperature.is_finite() {
            return Err(Error::NonFinite { op: "model_params" });
        }
        if image.input_dim() != text.input_dim() || image.output_dim() != text.output_dim() {
            return Err(Error::InvalidShape {
                op: "model_params",
                detail: "image and text encoders must share dimensions".into(),
            });
        }
        if image.output_dim() < 2 {
            return Err(Error::InvalidShape {
                op: "model_params",
                detail: "embedding dimension must be ≥ 2".into(),
            });
        }
        Ok(ModelParams { image, text, log_temperature, kind, geometry })
    }

    pub fn image_encoder(&self) -> &EncoderParams {
        &self.image
    }

    pub fn text_encoder(&self) -> &EncoderParams {
        &self.text
    }

    pub fn kind(&self) -> SimilarityKind {
        self.kind
    }

    pub fn geometry(&self) -> &GeometryConfig {
        &self.geometry
    }

    pub fn log_temperature(&self) -> f64 {
        self.log_temperature
    }

    pub fn temperature(&self) -> f64 {
        math::exp(self.log_temperature)
    }

    pub fn feature_dim(&self) -> usize {
        self.image.input_dim()
    }

    pub fn embed_dim(&self) -> usize {
        self.image.output_dim()
    }

    /// Stable (name, tensor) listing of every trainable parameter; the
    /// checkpoint layout and the optimizer both follow this order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (side, enc) in [("image", &self.image), ("text", &self.text)] {
            for (i, (w, b)) in enc.layers.iter().enumerate() {
                out.push((format!("{side}.l{i}.weight"), w));
                out.push((format!("{side}.l{i}.bias"), b));
            }
        }
        out
    }

    fn flat_tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for enc in [&mut self.image, &mut self.text] {
            for (w, b) in &mut enc.layers {
                out.push(w);
                out.push(b);
            }
        }
        out
    }

    /// Insert every parameter as a differentiable leaf.
    pub fn insert_leaves(&self, g: &mut Graph) -> ParamNodes {
        let mut nodes = Vec::new();
        let mut image_layers = Vec::new();
        let mut text_layers = Vec::new();
        for (enc, layers) in [(&self.image, &mut image_layers), (&self.text, &mut text_layers)] {
            for (w, b) in &enc.layers {
                let wn = g.leaf(w.clone());
                let bn = g.leaf(b.clone());
                nodes.push(wn);
                nodes.push(bn);
                layers.push((wn, bn));
            }
        }
        ParamNodes { flat: nodes, image_layers, text_layers }
    }
}

/// Graph handles for one model's parameters, in `named_tensors` order.
pub struct ParamNodes {
    flat: Vec<Node>,
    image_layers: Vec<(Node, Node)>,
    text_layers: Vec<(Node, Node)>,
}

impl ParamNodes {
    pub fn flat(&self) -> &[Node] {
        &self.flat
    }
}

fn affine_chain(g: &mut Graph, layers: &[(Node, Node)], input: Node) -> Result<Node> {
    let mut x = input;
    for (i, (w, b)) in layers.iter().enumerate() {
        if i > 0 {
            x = g.relu(x)?;
        }
        let xw = g.matmul(x, *w)?;
        x = g.add(xw, *b)?;
    }
    Ok(x)
}

/// Encode a feature batch on the graph: euclidean embeddings come out
/// unit-normalized, hyperbolic ones lifted onto the manifold.
pub fn encode_batch(
    g: &mut Graph,
    model: &ModelParams,
    params: &ParamNodes,
    image_features: &Tensor,
    text_features: &Tensor,
) -> Result<BatchEmbeddings> {
    for t in [image_features, text_features] {
        if t.rank() != 2 || t.shape()[1] != model.feature_dim() {
            return Err(Error::InvalidShape {
                op: "encode",
                detail: format!(
                    "expected B×{} features, got {:?}",
                    model.feature_dim(),
                    t.shape()
                ),
            });
        }
    }
    let fi = g.constant(image_features.clone());
    let ft = g.constant(text_features.clone());
    let raw_i = affine_chain(g, &params.image_layers, fi)?;
    let raw_t = affine_chain(g, &params.text_layers, ft)?;
    match model.kind {
        SimilarityKind::EuclideanCosine => {
            let image = normalize_rows(g, raw_i)?;
            let text = normalize_rows(g, raw_t)?;
            Ok(BatchEmbeddings::Euclidean { image, text })
        }
        SimilarityKind::HyperbolicNegativeDistance => {
            lift_batch(g, raw_i, raw_t, &model.geometry)
        }
    }
}

fn encode_side_values(model: &ModelParams, enc: &EncoderParams, features: &[Vec<f64>]) -> Result<Vec<Embedding>> {
    let mut g = Graph::new();
    let rows = Tensor::from_rows(features)?;
    if rows.shape()[1] != model.feature_dim() {
        return Err(Error::InvalidShape {
            op: "encode",
            detail: format!(
                "expected {}-dimensional features, got {}",
                model.feature_dim(),
                rows.shape()[1]
            ),
        });
    }
    let input = g.constant(rows);
    let layers: Vec<(Node, Node)> = enc
        .layers
        .iter()
        .map(|(w, b)| (g.constant(w.clone()), g.constant(b.clone())))
        .collect();
    let raw = affine_chain(&mut g, &layers, input)?;
    let out = g.value(raw);
    let mut embeddings = Vec::with_capacity(features.len());
    for r in 0..out.shape()[0] {
        let row = out.row(r);
        match model.kind {
            SimilarityKind::EuclideanCosine => {
                let n = crate::tensor::l2_slice(row);
                if n == 0.0 {
                    return Err(Error::Domain {
                        op: "encode",
                        detail: "zero-norm embedding cannot be normalized".into(),
                    });
                }
                embeddings.push(Embedding::Euclidean(row.iter().map(|v| v / n).collect()));
            }
            SimilarityKind::HyperbolicNegativeDistance => {
                embeddings.push(Embedding::Hyperbolic(exp_map_origin(
                    row,
                    model.geometry.curvature,
                )?));
            }
        }
    }
    Ok(embeddings)
}

/// Value-level encoding for evaluation: no gradients, same arithmetic as
/// the training path's forward pass.
pub fn encode_images(model: &ModelParams, features: &[Vec<f64>]) -> Result<Vec<Embedding>> {
    encode_side_values(model, &model.image, features)
}

pub fn encode_texts(model: &ModelParams, features: &[Vec<f64>]) -> Result<Vec<Embedding>> {
    encode_side_values(model, &model.text, features)
}

// ── optimizer ───────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct OptimConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub total_iterations: usize,
    pub clip_norm: f64,
    /// N: retain pairs per batch (the batch holds 2N pairs).
    pub pairs_per_side: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lr: 5e-5,
            weight_decay: 1e-5,
            total_iterations: 15_000,
            clip_norm: 1.0,
            pairs_per_side: 160,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::invalid("optim: lr must be positive"));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::invalid("optim: weight decay must be ≥ 0"));
        }
        if !(self.clip_norm.is_finite() && self.clip_norm > 0.0) {
            return Err(Error::invalid("optim: clip norm must be positive"));
        }
        if self.pairs_per_side == 0 {
            return Err(Error::invalid("optim: pairs per side must be ≥ 1"));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b.is_finite() && (0.0..1.0).contains(&b)) {
                return Err(Error::invalid(format!("optim: {name} must lie in [0, 1)")));
            }
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::invalid("optim: epsilon must be positive"));
        }
        Ok(())
    }
}

/// First/second moments per parameter, in the model's flat order.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &[&Tensor]) -> Self {
        AdamState {
            m: params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// Bias-corrected Adam with decoupled weight decay:
/// θ ← θ·(1 − lr·wd) − lr·m̂/(√v̂ + ε). Parameters update in place.
pub fn adam_step(
    params: &mut [&mut Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
    cfg: &OptimConfig,
    lr_now: f64,
) -> Result<()> {
    cfg.validate()?;
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::InvalidShape {
            op: "adam_step",
            detail: format!(
                "{} params, {} grads, {} moment slots",
                params.len(),
                grads.len(),
                state.m.len()
            ),
        });
    }
    if !(lr_now.is_finite() && lr_now >= 0.0) {
        return Err(Error::invalid("adam_step: lr must be finite and ≥ 0"));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::ShapeMismatch {
                op: "adam_step",
                lhs: p.shape().to_vec(),
                rhs: g.shape().to_vec(),
            });
        }
        if g.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "adam_step" });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - libm::pow(cfg.beta1, f64::from(t));
    let bc2 = 1.0 - libm::pow(cfg.beta2, f64::from(t));
    let shrink = 1.0 - lr_now * cfg.weight_decay;
    for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(state.m.iter_mut().zip(&mut state.v)) {
        let pv = p.values_mut();
        let gv = g.values();
        let mv = m.values_mut();
        let vv = v.values_mut();
        for k in 0..pv.len() {
            mv[k] = cfg.beta1 * mv[k] + (1.0 - cfg.beta1) * gv[k];
            vv[k] = cfg.beta2 * vv[k] + (1.0 - cfg.beta2) * gv[k] * gv[k];
            let m_hat = mv[k] / bc1;
            let v_hat = vv[k] / bc2;
            pv[k] = pv[k] * shrink - lr_now * m_hat / (math::sqrt(v_hat) + cfg.epsilon);
        }
    }
    Ok(())
}

/// base_lr·0.5·(1 + cos(π·step/total)).
pub fn cosine_lr(step: usize, total: usize, base_lr: f64) -> Result<f64> {
    if total == 0 {
        return Err(Error::invalid("cosine_lr: total must be ≥ 1"));
    }
    if step > total {
        return Err(Error::invalid(format!("cosine_lr: step {step} exceeds total {total}")));
    }
    Ok(base_lr * 0.5 * (1.0 + math::cos(core::f64::consts::PI * step as f64 / total as f64)))
}

/// Scale all gradients so their global L2 norm is at most `max_norm`;
/// returns the pre-clip norm.
pub fn clip_gradients(grads: &mut [Tensor], max_norm: f64) -> Result<f64> {
    if !(max_norm.is_finite() && max_norm > 0.0) {
        return Err(Error::invalid("clip_gradients: max norm must be positive"));
    }
    let mut sq = 0.0;
    for g in grads.iter() {
        for &v in g.values() {
            sq += v * v;
        }
    }
    let norm = math::sqrt(sq);
    if !norm.is_finite() {
        return Err(Error::NonFinite { op: "clip_gradients" });
    }
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            for v in g.values_mut() {
                *v *= s;
            }
        }
    }
    Ok(norm)
}

// ── training loops ──────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub struct IterRecord {
    pub iteration: usize,
    pub lr: f64,
    /// Pre-clip global gradient norm.
    pub grad_norm: f64,
    pub total: f64,
    pub components: Vec<(&'static str, f64)>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<IterRecord>,
}

impl TrainLog {
    pub fn initial_total(&self) -> Option<f64> {
        self.records.first().map(|r| r.total)
    }

    pub fn final_total(&self) -> Option<f64> {
        self.records.last().map(|r| r.total)
    }
}

struct LossBuild {
    total: Node,
    components: Vec<(&'static str, Node)>,
}

/// Shared optimization driver: per iteration build a fresh graph, evaluate
/// the objective, backpropagate, clip, and step Adam on a cosine schedule.
/// Any numerical failure aborts with the iteration index and the latest
/// component values.
fn run_training<F>(
    model: &ModelParams,
    optim: &OptimConfig,
    mut build: F,
) -> Result<(ModelParams, TrainLog)>
where
    F: FnMut(&mut Graph, &ParamNodes, usize) -> Result<LossBuild>,
{
    optim.validate()?;
    let mut model = model.clone();
    let mut log = TrainLog::default();
    let flat_count = model.named_tensors().len();
    let mut adam = {
        let named = model.named_tensors();
        let refs: Vec<&Tensor> = named.iter().map(|(_, t)| *t).collect();
        AdamState::new(&refs)
    };

    for iter in 0..optim.total_iterations {
        let diverged = |e: Error, log: &TrainLog| {
            let detail = match log.records.last() {
                Some(r) => format!(
                    "{e}; last components: {:?}",
                    r.components.iter().map(|(n, v)| format!("{n}={v:.6}")).collect::<Vec<_>>()
                ),
                None => format!("{e}"),
            };
            Error::Divergence { iteration: iter, detail }
        };

        let mut g = Graph::new();
        let params = model.insert_leaves(&mut g);
        let built = build(&mut g, &params, iter).map_err(|e| diverged(e, &log))?;
        let grads_map = g.backward(built.total, params.flat()).map_err(|e| diverged(e, &log))?;

        let mut grads: Vec<Tensor> = Vec::with_capacity(flat_count);
        for &n in params.flat() {
            grads.push(grads_map.get(n).expect("wrt gradient").clone());
        }
        let grad_norm = clip_gradients(&mut grads, optim.clip_norm).map_err(|e| diverged(e, &log))?;
        let lr_now = cosine_lr(iter, optim.total_iterations, optim.lr)?;

        log.records.push(IterRecord {
            iteration: iter,
            lr: lr_now,
            grad_norm,
            total: g.value(built.total).item()?,
            components: built
                .components
                .iter()
                .map(|(name, node)| (*name, g.value(*node).item().unwrap_or(f64::NAN)))
                .collect(),
        });

        let mut flat = model.flat_tensors_mut();
        adam_step(&mut flat, &grads, &mut adam, optim, lr_now).map_err(|e| {
            let e = Error::Divergence { iteration: iter, detail: format!("{e}") };
            diverged(e, &log)
        })?;
    }
    Ok((model, log))
}

/// Sequential epoch batcher over the whole corpus (for pretraining):
/// seeded shuffle each epoch, fixed-size chunks, short remainder dropped.
struct EpochBatches {
    order: Vec<usize>,
    pos: usize,
}

impl EpochBatches {
    fn new(len: usize) -> Self {
        EpochBatches { order: (0..len).collect(), pos: len }
    }

    fn next(&mut self, n: usize, rng: &mut ChaCha8Rng) -> &[usize] {
        if self.pos + n > self.order.len() {
            self.order.shuffle(rng);
            self.pos = 0;
        }
        let s = &self.order[self.pos..self.pos + n];
        self.pos += n;
        s
    }
}

fn features_of(corpus: &[CorpusSample], idx: &[usize]) -> (Tensor, Tensor) {
    let d = corpus[idx[0]].image_feature.len();
    let mut image = Vec::with_capacity(idx.len() * d);
    let mut text = Vec::with_capacity(idx.len() * d);
    for &i in idx {
        image.extend_from_slice(&corpus[i].image_feature);
        text.extend_from_slice(&corpus[i].text_feature);
    }
    (
        Tensor::new(alloc::vec![idx.len(), d], image).expect("image features"),
        Tensor::new(alloc::vec![idx.len(), d], text).expect("text features"),
    )
}

/// Contrastive pretraining. Euclidean models minimize the symmetric CLIP
/// loss; hyperbolic ones add `entailment_weight` × the mean entailment
/// hinge. Batches hold 2·pairs_per_side pairs so budgets line up with
/// unlearning. A zero-iteration budget returns the model unchanged.
pub fn pretrain(
    model: &ModelParams,
    corpus: &[CorpusSample],
    optim: &OptimConfig,
    entailment_weight: f64,
) -> Result<(ModelParams, TrainLog)> {
    if corpus.is_empty() {
        return Err(Error::EmptyInput { op: "pretrain" });
    }
    if !(entailment_weight.is_finite() && entailment_weight >= 0.0) {
        return Err(Error::invalid("pretrain: entailment weight must be ≥ 0"));
    }
    let batch_size = (2 * optim.pairs_per_side).min(corpus.len());
    let tau = model.temperature();
    let geo = model.geometry;
    let kind = model.kind;
    let mut rng = ChaCha8Rng::seed_from_u64(optim.seed);
    let mut epochs = EpochBatches::new(corpus.len());

    run_training(model, optim, move |g, params, _iter| {
        let idx: Vec<usize> = epochs.next(batch_size, &mut rng).to_vec();
        let (fi, ft) = features_of(corpus, &idx);
        let emb = encode_batch(g, model, params, &fi, &ft)?;
        let contrastive = clip_contrastive_loss(g, &emb, tau, &geo)?;
        let mut components = alloc::vec![("contrastive", contrastive)];
        let total = match (&emb, kind) {
            (BatchEmbeddings::Hyperbolic { image, text }, _) if entailment_weight > 0.0 => {
                let ent = entailment_penalty(g, image, text, &geo)?;
                components.push(("entailment", ent));
                let w = g.scale(ent, entailment_weight)?;
                g.add(contrastive, w)?
            }
            _ => contrastive,
        };
        Ok(LossBuild { total, components })
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum UnlearnMode {
    Ac,
    Hac,
    HacReg,
}

impl UnlearnMode {
    pub fn objective(self) -> ObjectiveMode {
        match self {
            UnlearnMode::Ac => ObjectiveMode::Ac,
            UnlearnMode::Hac => ObjectiveMode::Hac,
            UnlearnMode::HacReg => ObjectiveMode::HacReg,
        }
    }
}

/// Unlearning: balanced retain/forget batches through the mode's combined
/// objective. Returns the updated model (the input stays untouched for
/// before/after audits) and the per-iteration component log.
pub fn unlearn(
    model: &ModelParams,
    retain: &[CorpusSample],
    forget: &[CorpusSample],
    hp: &UnlearnHyperParams,
    optim: &OptimConfig,
    mode: UnlearnMode,
) -> Result<(ModelParams, TrainLog)> {
    hp.validate()?;
    if mode != UnlearnMode::Ac && model.kind != SimilarityKind::HyperbolicNegativeDistance {
        return Err(Error::invalid(
            "hyperbolic unlearning modes require a hyperbolic model",
        ));
    }
    let mut sampler = BalancedSampler::new(retain.to_vec(), forget.to_vec(), optim.pairs_per_side)?;
    let mut rng = ChaCha8Rng::seed_from_u64(optim.seed);
    let geo = model.geometry;
    let hp = *hp;

    run_training(model, optim, move |g, params, _iter| {
        let batch: FeatureBatch = sampler.next_batch(&mut rng);
        let emb = encode_batch(g, model, params, &batch.image, &batch.text)?;
        let eb = EmbeddingBatch::new(g, emb, batch.forget_mask.clone())?;
        let parts = assemble_objective(g, &eb, &hp, &geo, mode.objective())?;
        let mut components = alloc::vec![("retain", parts.retain)];
        for (name, node) in [
            ("negative_alignment", parts.negative_alignment),
            ("positive_alignment", parts.positive_alignment),
            ("performance_preserving", parts.performance_preserving),
            ("forget", parts.forget),
            ("retain_entailment", parts.retain_entailment),
            ("forget_entailment", parts.forget_entailment),
            ("norm_reg", parts.norm_reg),
        ] {
            if let Some(n) = node {
                components.push((name, n));
            }
        }
        Ok(LossBuild { total: parts.total, components })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_corpus, split_forget, CorpusConfig, ForgetSpec};
    use crate::geometry::lorentz_inner;

    fn tiny_corpus() -> (crate::corpus::ConceptTaxonomy, Vec<CorpusSample>) {
        generate_corpus(&CorpusConfig {
            superclasses: 2,
            classes_per_superclass: 2,
            dimension: 8,
            samples_per_class: 12,
            noise_scale: 0.1,
            modality_offset_scale: 0.5,
            seed: 3,
        })
        .unwrap()
    }

    fn tiny_model(kind: SimilarityKind) -> ModelParams {
        ModelParams::init(
            &ModelConfig {
                feature_dim: 8,
                embed_dim: 4,
                hidden_dim: Some(8),
                temperature: 0.2,
                init_seed: 5,
            },
            kind,
            GeometryConfig::default(),
        )
        .unwrap()
    }

    fn tiny_optim(iters: usize) -> OptimConfig {
        OptimConfig {
            lr: 1e-3,
            weight_decay: 1e-5,
            total_iterations: iters,
            clip_norm: 1.0,
            pairs_per_side: 4,
            seed: 17,
            ..OptimConfig::default()
        }
    }

    #[test]
    fn adam_step_matches_hand_arithmetic() {
        let cfg = OptimConfig { lr: 1.0, weight_decay: 0.0, ..OptimConfig::default() };
        let mut theta = Tensor::scalar(0.0).unwrap();
        let grad = Tensor::scalar(1.0).unwrap();
        let mut state = AdamState::new(&[&theta]);
        adam_step(&mut [&mut theta], core::slice::from_ref(&grad), &mut state, &cfg, 1.0).unwrap();
        // One bias-corrected step with m̂ = v̂ = 1 moves θ to −1/(1+ε).
        assert!((theta.item().unwrap() + 1.0).abs() < 1e-7);
        assert_eq!(state.step_count(), 1);

        // Zero gradient and zero decay leave parameters untouched.
        let mut p = Tensor::scalar(0.7).unwrap();
        let z = Tensor::scalar(0.0).unwrap();
        let mut s = AdamState::new(&[&p]);
        adam_step(&mut [&mut p], core::slice::from_ref(&z), &mut s, &cfg, 1.0).unwrap();
        assert_eq!(p.item().unwrap(), 0.7);

        // Non-finite gradients are rejected before touching state.
        let bad = Tensor::scalar(1.0).unwrap();
        let mut bv = bad.clone();
        bv.values_mut()[0] = f64::INFINITY;
        assert!(matches!(
            adam_step(&mut [&mut p], core::slice::from_ref(&bv), &mut s, &cfg, 1.0),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn cosine_schedule_endpoints_and_midpoint() {
        assert_eq!(cosine_lr(0, 100, 3.0).unwrap(), 3.0);
        assert!((cosine_lr(50, 100, 3.0).unwrap() - 1.5).abs() < 1e-12);
        assert!(cosine_lr(100, 100, 3.0).unwrap().abs() < 1e-12);
        assert!(cosine_lr(101, 100, 3.0).is_err());
    }

    #[test]
    fn gradient_clipping_preserves_direction_and_caps_norm() {
        let mut grads = alloc::vec![
            Tensor::new(alloc::vec![2], alloc::vec![0.3, 0.4]).unwrap(),
        ];
        let norm = clip_gradients(&mut grads, 1.0).unwrap();
        assert!((norm - 0.5).abs() < 1e-12);
        assert_eq!(grads[0].values(), &[0.3, 0.4]);

        let mut grads = alloc::vec![
            Tensor::new(alloc::vec![2], alloc::vec![1.2, 1.6]).unwrap(),
        ];
        let norm = clip_gradients(&mut grads, 1.0).unwrap();
        assert!((norm - 2.0).abs() < 1e-12);
        let post = math::sqrt(grads[0].values().iter().map(|v| v * v).sum::<f64>());
        assert!(post <= 1.0 + 1e-12);
        assert!((grads[0].values()[0] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn encode_respects_geometry_contracts() {
        let (_, corpus) = tiny_corpus();
        let feats: Vec<Vec<f64>> = corpus.iter().take(6).map(|s| s.image_feature.clone()).collect();

        // Euclidean: unit rows.
        let me = tiny_model(SimilarityKind::EuclideanCosine);
        let emb = encode_images(&me, &feats).unwrap();
        for e in &emb {
            match e {
                Embedding::Euclidean(v) => {
                    let n = crate::tensor::l2_slice(v);
                    assert!((n - 1.0).abs() < 1e-12);
                }
                _ => panic!("expected euclidean embedding"),
            }
        }

        // Hyperbolic: on-manifold within the lift tolerance.
        let mh = tiny_model(SimilarityKind::HyperbolicNegativeDistance);
        let emb = encode_texts(&mh, &feats).unwrap();
        for e in &emb {
            match e {
                Embedding::Hyperbolic(p) => {
                    let c = 1.0;
                    let residual = (c * lorentz_inner(p, p).unwrap() + 1.0).abs();
                    assert!(residual <= 1e-9, "residual {residual}");
                }
                _ => panic!("expected hyperbolic embedding"),
            }
        }

        // Dimension mismatch is rejected.
        assert!(encode_images(&me, &[alloc::vec![1.0, 2.0]]).is_err());

        // All-zero weights make euclidean normalization impossible.
        let dims = [8usize, 4];
        let zero_layers = alloc::vec![(
            Tensor::zeros(alloc::vec![dims[0], dims[1]]),
            Tensor::zeros(alloc::vec![1, dims[1]]),
        )];
        let zero = ModelParams::from_parts(
            EncoderParams::from_layers(zero_layers.clone()).unwrap(),
            EncoderParams::from_layers(zero_layers).unwrap(),
            math::ln(0.2),
            SimilarityKind::EuclideanCosine,
            GeometryConfig::default(),
        )
        .unwrap();
        assert!(matches!(
            encode_images(&zero, &feats),
            Err(Error::Domain { .. })
        ));
    }

    #[test]
    fn pretraining_decreases_loss_and_is_deterministic() {
        let (_, corpus) = tiny_corpus();
        for kind in [
            SimilarityKind::EuclideanCosine,
            SimilarityKind::HyperbolicNegativeDistance,
        ] {
            let model = tiny_model(kind);
            let optim = tiny_optim(60);
            let (trained, log) = pretrain(&model, &corpus, &optim, 0.2).unwrap();
            assert!(log.final_total().unwrap() < log.initial_total().unwrap());
            assert_eq!(log.records.len(), 60);

            // Zero iterations: untouched model, empty log.
            let (same, empty) = pretrain(&model, &corpus, &tiny_optim(0), 0.2).unwrap();
            assert_eq!(same, model);
            assert!(empty.records.is_empty());

            // Bitwise-identical rerun.
            let (trained2, log2) = pretrain(&model, &corpus, &optim, 0.2).unwrap();
            assert_eq!(trained, trained2);
            assert_eq!(log, log2);
        }
    }

    #[test]
    fn unlearn_logs_decompose_and_reduce_to_retain_finetuning() {
        let (tax, corpus) = tiny_corpus();
        let spec = ForgetSpec::new([1u32]).unwrap();
        let (retain, forget) = split_forget(&corpus, &spec, &tax).unwrap();
        let model = tiny_model(SimilarityKind::HyperbolicNegativeDistance);
        let optim = tiny_optim(25);
        let hp = UnlearnHyperParams { tau: 0.2, ..UnlearnHyperParams::default() };

        let (updated, log) = unlearn(&model, &retain, &forget, &hp, &optim, UnlearnMode::HacReg).unwrap();
        assert_ne!(updated, model);
        assert_eq!(log.records.len(), 25);

        // Every record's total equals the weighted recomposition of its
        // logged components.
        for r in &log.records {
            let get = |name: &str| {
                r.components
                    .iter()
                    .find(|(n, _)| *n == name)
                    .map(|(_, v)| *v)
                    .expect("component present")
            };
            let forget_l = hp.alpha * get("negative_alignment")
                + hp.beta * get("positive_alignment")
                + hp.gamma * get("performance_preserving");
            assert!((forget_l - get("forget")).abs() < 1e-9);
            let total = get("retain")
                + hp.epsilon * get("forget")
                + hp.omega_r * get("retain_entailment")
                + hp.omega_f * get("forget_entailment")
                + hp.lambda_reg * get("norm_reg");
            assert!((total - r.total).abs() < 1e-9, "recomposed {total} vs {}", r.total);
        }

        // Same seeds → identical run.
        let (updated2, log2) = unlearn(&model, &retain, &forget, &hp, &optim, UnlearnMode::HacReg).unwrap();
        assert_eq!(updated, updated2);
        assert_eq!(log, log2);

        // All forget weights zero: the update sequence is exactly retain
        // finetuning on the same balanced batches.
        let hp0 = UnlearnHyperParams {
            epsilon: 0.0,
            omega_r: 0.0,
            omega_f: 0.0,
            lambda_reg: 0.0,
            ..hp
        };
        let (reduced, _) = unlearn(&model, &retain, &forget, &hp0, &optim, UnlearnMode::Ac).unwrap();
        let manual = {
            let mut sampler =
                BalancedSampler::new(retain.clone(), forget.clone(), optim.pairs_per_side).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(optim.seed);
            let geo = *model.geometry();
            let tau = hp.tau;
            let m = model.clone();
            let enc = model.clone();
            run_training(&m, &optim, move |g, params, _| {
                let b = sampler.next_batch(&mut rng);
                let emb = encode_batch(g, &enc, params, &b.image, &b.text)?;
                let eb = EmbeddingBatch::new(g, emb, b.forget_mask.clone())?;
                let retain = crate::losses::retain_loss(g, &eb, tau, &geo)?;
                Ok(LossBuild { total: retain, components: alloc::vec![("retain", retain)] })
            })
            .unwrap()
            .0
        };
        assert_eq!(reduced, manual);

        // Euclidean models reject hyperbolic modes.
        let me = tiny_model(SimilarityKind::EuclideanCosine);
        assert!(unlearn(&me, &retain, &forget, &hp, &optim, UnlearnMode::Hac).is_err());
    }

    #[test]
    fn unlearn_first_record_equals_direct_objective_evaluation() {
        let (tax, corpus) = tiny_corpus();
        let spec = ForgetSpec::new([2u32]).unwrap();
        let (retain, forget) = split_forget(&corpus, &spec, &tax).unwrap();
        let model = tiny_model(SimilarityKind::HyperbolicNegativeDistance);
        let optim = tiny_optim(1);
        let hp = UnlearnHyperParams { tau: 0.2, ..UnlearnHyperParams::default() };

        let (_, log) = unlearn(&model, &retain, &forget, &hp, &optim, UnlearnMode::Hac).unwrap();

        // Rebuild the identical first batch and evaluate the objective
        // directly — the trainer must add nothing to the math.
        let mut sampler =
            BalancedSampler::new(retain.clone(), forget.clone(), optim.pairs_per_side).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(optim.seed);
        let batch = sampler.next_batch(&mut rng);
        let mut g = Graph::new();
        let params = model.insert_leaves(&mut g);
        let emb = encode_batch(&mut g, &model, &params, &batch.image, &batch.text).unwrap();
        let eb = EmbeddingBatch::new(&g, emb, batch.forget_mask.clone()).unwrap();
        let direct = hac_total_value(&mut g, &eb, &hp, model.geometry());
        assert_eq!(log.records[0].total, direct);
    }

    fn hac_total_value(
        g: &mut Graph,
        eb: &EmbeddingBatch,
        hp: &UnlearnHyperParams,
        geo: &GeometryConfig,
    ) -> f64 {
        let n = crate::losses::hac_total(g, eb, hp, geo).unwrap();
        g.value(n).item().unwrap()
    }

    #[test]
    fn divergence_reports_iteration_and_components() {
        let (tax, corpus) = tiny_corpus();
        let spec = ForgetSpec::new([0u32]).unwrap();
        let (retain, forget) = split_forget(&corpus, &spec, &tax).unwrap();
        let model = tiny_model(SimilarityKind::HyperbolicNegativeDistance);
        // An absurd learning rate explodes the parameters quickly.
        let optim = OptimConfig { lr: 1e18, clip_norm: 1e18, ..tiny_optim(60) };
        let hp = UnlearnHyperParams { tau: 0.2, ..UnlearnHyperParams::default() };
        match unlearn(&model, &retain, &forget, &hp, &optim, UnlearnMode::HacReg) {
            Err(Error::Divergence { iteration, detail }) => {
                assert!(iteration > 0);
                assert!(detail.contains("retain"), "detail should name components: {detail}");
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
