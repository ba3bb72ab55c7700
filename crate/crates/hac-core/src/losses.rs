//! The contrastive retain/forget loss family over a shared similarity
//! abstraction (euclidean cosine or negative Lorentz distance).
//!
//! Atomic pieces: the symmetric CLIP cross-entropy, the retain loss (its
//! restriction to retain positives with forget embeddings kept as
//! negatives), three forget-side terms (negative alignment, positive
//! alignment, performance preserving), entailment-cone hinges, and norm
//! regularization. Combined objectives (`ac_total`, `hac_total`,
//! `hac_reg_total`) weight them per [`UnlearnHyperParams`].
//!
//! All batch losses build on an autodiff [`Graph`] and return scalar nodes;
//! [`similarity`] and [`unlearning_definition_audit`] are value-level for
//! evaluation and auditing.

use alloc::format;
use alloc::vec::Vec;

use crate::autodiff::{Graph, Node};
use crate::error::{Error, Result};
use crate::geometry::{
    self, exterior_angle_nodes, half_aperture_nodes, lift_nodes, literal_norm_nodes,
    origin_distance_nodes, pairwise_neg_distance_nodes, GeometryConfig, LorentzNodes,
    LorentzPoint,
};
use crate::math;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum SimilarityKind {
    /// cos(a, b) on unit-normalized vectors.
    EuclideanCosine,
    /// −d_L(a, b) between on-manifold points.
    HyperbolicNegativeDistance,
}

/// Weights of the combined objectives. Defaults are the strongest
/// configuration of the norm-regularized hyperbolic objective.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct UnlearnHyperParams {
    /// Weight of the negative-alignment term inside the forget loss.
    pub alpha: f64,
    /// Weight of the positive-alignment term inside the forget loss.
    pub beta: f64,
    /// Weight of the performance-preserving term inside the forget loss.
    pub gamma: f64,
    /// Weight of the whole forget loss against the retain loss.
    pub epsilon: f64,
    /// Weight of the retain-side entailment hinge.
    pub omega_r: f64,
    /// Weight of the forget-side entailment hinge.
    pub omega_f: f64,
    /// Weight of the norm regularization.
    pub lambda_reg: f64,
    /// Softmax temperature shared by every similarity-based term.
    pub tau: f64,
}

impl Default for UnlearnHyperParams {
    fn default() -> Self {
        UnlearnHyperParams {
            alpha: 0.5,
            beta: 0.5,
            gamma: 0.5,
            epsilon: 0.1,
            omega_r: 0.2,
            omega_f: 1.0,
            lambda_reg: 0.1,
            tau: 0.01,
        }
    }
}

impl UnlearnHyperParams {
    pub fn validate(&self) -> Result<()> {
        let weights = [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("epsilon", self.epsilon),
            ("omega_r", self.omega_r),
            ("omega_f", self.omega_f),
            ("lambda_reg", self.lambda_reg),
        ];
        for (name, w) in weights {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::invalid(format!(
                    "{name} must be finite and non-negative, got {w}"
                )));
            }
        }
        check_tau(self.tau)
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::invalid(format!(
            "temperature must be finite and positive, got {tau}"
        )));
    }
    Ok(())
}

// ── value-level similarity ──────────────────────────────────────────────

/// One embedding at evaluation time.
#[derive(Debug, Clone, PartialEq)]
pub enum Embedding {
    Euclidean(Vec<f64>),
    Hyperbolic(LorentzPoint),
}

impl Embedding {
    pub fn kind(&self) -> SimilarityKind {
        match self {
            Embedding::Euclidean(_) => SimilarityKind::EuclideanCosine,
            Embedding::Hyperbolic(_) => SimilarityKind::HyperbolicNegativeDistance,
        }
    }
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch {
            op: "cosine",
            lhs: alloc::vec![a.len()],
            rhs: alloc::vec![b.len()],
        });
    }
    let (na, nb) = (crate::tensor::l2_slice(a), crate::tensor::l2_slice(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Domain {
            op: "cosine",
            detail: "zero-norm vector".into(),
        });
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok(dot / (na * nb))
}

/// Similarity between two embeddings of the same kind: cosine, or the
/// negated geodesic distance.
pub fn similarity(a: &Embedding, b: &Embedding) -> Result<f64> {
    match (a, b) {
        (Embedding::Euclidean(x), Embedding::Euclidean(y)) => cosine_similarity(x, y),
        (Embedding::Hyperbolic(x), Embedding::Hyperbolic(y)) => {
            Ok(-geometry::lorentz_distance(x, y)?)
        }
        _ => Err(Error::invalid("similarity: mixed embedding kinds")),
    }
}

// ── graph-level batches ─────────────────────────────────────────────────

/// Image/text embeddings of one batch on the autodiff graph. Row i of
/// `image` pairs with row i of `text`.
#[derive(Debug, Clone, Copy)]
pub enum BatchEmbeddings {
    /// B×d matrices; rows are normalized by the similarity kernel, so any
    /// nonzero rows are acceptable.
    Euclidean { image: Node, text: Node },
    Hyperbolic { image: LorentzNodes, text: LorentzNodes },
}

impl BatchEmbeddings {
    pub fn kind(&self) -> SimilarityKind {
        match self {
            BatchEmbeddings::Euclidean { .. } => SimilarityKind::EuclideanCosine,
            BatchEmbeddings::Hyperbolic { .. } => SimilarityKind::HyperbolicNegativeDistance,
        }
    }

    fn rows(&self, g: &Graph) -> usize {
        match self {
            BatchEmbeddings::Euclidean { image, .. } => g.value(*image).shape()[0],
            BatchEmbeddings::Hyperbolic { image, .. } => g.value(image.space).shape()[0],
        }
    }
}

/// A batch plus the retain/forget split. The combined losses treat the
/// whole batch as the "all" set their denominators range over.
#[derive(Debug, Clone)]
pub struct EmbeddingBatch {
    emb: BatchEmbeddings,
    forget_mask: Vec<bool>,
}

impl EmbeddingBatch {
    pub fn new(g: &Graph, emb: BatchEmbeddings, forget_mask: Vec<bool>) -> Result<Self> {
        let rows = emb.rows(g);
        if forget_mask.len() != rows {
            return Err(Error::InvalidShape {
                op: "embedding_batch",
                detail: format!("{rows} embedding rows but {} mask entries", forget_mask.len()),
            });
        }
        let (ishape, tshape) = match &emb {
            BatchEmbeddings::Euclidean { image, text } => {
                (g.value(*image).shape().to_vec(), g.value(*text).shape().to_vec())
            }
            BatchEmbeddings::Hyperbolic { image, text } => {
                if image.curvature != text.curvature {
                    return Err(Error::invalid("embedding_batch: curvature mismatch"));
                }
                (
                    g.value(image.space).shape().to_vec(),
                    g.value(text.space).shape().to_vec(),
                )
            }
        };
        if ishape != tshape || ishape.len() != 2 {
            return Err(Error::ShapeMismatch {
                op: "embedding_batch",
                lhs: ishape,
                rhs: tshape,
            });
        }
        Ok(EmbeddingBatch { emb, forget_mask })
    }

    pub fn embeddings(&self) -> &BatchEmbeddings {
        &self.emb
    }

    pub fn forget_mask(&self) -> &[bool] {
        &self.forget_mask
    }

    pub fn len(&self) -> usize {
        self.forget_mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forget_mask.is_empty()
    }

    pub fn n_forget(&self) -> usize {
        self.forget_mask.iter().filter(|&&f| f).count()
    }

    pub fn n_retain(&self) -> usize {
        self.len() - self.n_forget()
    }

    pub fn kind(&self) -> SimilarityKind {
        self.emb.kind()
    }
}

/// Divide each row by its euclidean norm; zero rows are rejected.
pub fn normalize_rows(g: &mut Graph, x: Node) -> Result<Node> {
    let n = g.l2norm_axis(x, 1)?;
    if g.value(n).values().iter().any(|&v| v == 0.0) {
        return Err(Error::Domain {
            op: "normalize_rows",
            detail: "zero-norm row cannot be normalized".into(),
        });
    }
    g.div(x, n)
}

/// B×B similarity matrix S[i][j] = sim(image_i, text_j) for the batch's
/// kind.
pub fn similarity_matrix_nodes(
    g: &mut Graph,
    emb: &BatchEmbeddings,
    geo: &GeometryConfig,
) -> Result<Node> {
    match emb {
        BatchEmbeddings::Euclidean { image, text } => {
            let xn = normalize_rows(g, *image)?;
            let tn = normalize_rows(g, *text)?;
            let tt = g.transpose(tn)?;
            g.matmul(xn, tt)
        }
        BatchEmbeddings::Hyperbolic { image, text } => {
            pairwise_neg_distance_nodes(g, image, text, geo)
        }
    }
}

// Constant 0/1 masks. All selection happens by multiplication so every loss
// stays inside the primitive set.

fn eye_mask(g: &mut Graph, n: usize) -> Node {
    let mut m = Tensor::zeros(alloc::vec![n, n]);
    for i in 0..n {
        m.values_mut()[i * n + i] = 1.0;
    }
    g.constant(m)
}

fn row_mask(g: &mut Graph, mask: &[bool], keep_forget: bool) -> Node {
    let vals: Vec<f64> = mask
        .iter()
        .map(|&f| if f == keep_forget { 1.0 } else { 0.0 })
        .collect();
    g.constant(Tensor::new(alloc::vec![mask.len(), 1], vals).expect("mask tensor"))
}

fn forget_offdiag_mask(g: &mut Graph, mask: &[bool]) -> Node {
    let n = mask.len();
    let mut m = Tensor::zeros(alloc::vec![n, n]);
    for i in 0..n {
        for j in 0..n {
            if i != j && mask[i] && mask[j] {
                m.values_mut()[i * n + j] = 1.0;
            }
        }
    }
    g.constant(m)
}

/// Per-row ingredients shared by the softmax-style losses: S/τ, row-wise
/// and column-wise log-sum-exp (both B×1), and the diagonal (B×1).
struct SoftmaxParts {
    row_lse: Node,
    col_lse: Node,
    diag: Node,
}

fn softmax_parts(g: &mut Graph, st: Node) -> Result<SoftmaxParts> {
    let n = g.value(st).shape()[0];
    let row_lse = g.lse_axis(st, 1)?;
    let col = g.lse_axis(st, 0)?;
    let col_lse = g.transpose(col)?;
    let eye = eye_mask(g, n);
    let masked = g.mul(st, eye)?;
    let diag = g.sum_axis(masked, 1)?;
    Ok(SoftmaxParts { row_lse, col_lse, diag })
}

/// Symmetric CLIP cross-entropy: positives on the diagonal, denominators
/// over the whole batch, image→text and text→image averaged.
pub fn clip_contrastive_loss(
    g: &mut Graph,
    emb: &BatchEmbeddings,
    tau: f64,
    geo: &GeometryConfig,
) -> Result<Node> {
    check_tau(tau)?;
    let n = emb.rows(g);
    if n == 0 {
        return Err(Error::EmptyInput { op: "clip_contrastive_loss" });
    }
    let s = similarity_matrix_nodes(g, emb, geo)?;
    let st = g.scale(s, 1.0 / tau)?;
    let p = softmax_parts(g, st)?;
    let two_d = g.add(p.diag, p.diag)?;
    let minus_rows = g.sub(two_d, p.row_lse)?;
    let per_row = g.sub(minus_rows, p.col_lse)?;
    let total = g.sum(per_row)?;
    g.scale(total, -1.0 / (2.0 * n as f64))
}

/// Retain loss: the CLIP cross-entropy restricted to retain positives
/// while both softmax denominators still range over the entire combined
/// batch, so forget embeddings keep acting as negatives.
pub fn retain_loss(g: &mut Graph, batch: &EmbeddingBatch, tau: f64, geo: &GeometryConfig) -> Result<Node> {
    check_tau(tau)?;
    let n_r = batch.n_retain();
    if n_r == 0 {
        return Err(Error::EmptyInput { op: "retain_loss" });
    }
    let s = similarity_matrix_nodes(g, batch.embeddings(), geo)?;
    let st = g.scale(s, 1.0 / tau)?;
    let p = softmax_parts(g, st)?;
    let two_d = g.add(p.diag, p.diag)?;
    let minus_rows = g.sub(two_d, p.row_lse)?;
    let per_row = g.sub(minus_rows, p.col_lse)?;
    let retain = row_mask(g, batch.forget_mask(), false);
    let masked = g.mul(per_row, retain)?;
    let total = g.sum(masked)?;
    g.scale(total, -1.0 / (2.0 * n_r as f64))
}

/// Forget-side term that pushes every *cross* forget pair (i ≠ j) together:
/// −(1/(2N_f²))·Σ_i Σ_{j≠i} (sim(x_i,t_j) + sim(x_j,t_i))/τ. The printed
/// 1/(2N_f²) normalization is kept as-is.
pub fn negative_alignment_loss(
    g: &mut Graph,
    batch: &EmbeddingBatch,
    tau: f64,
    geo: &GeometryConfig,
) -> Result<Node> {
    check_tau(tau)?;
    let n_f = batch.n_forget();
    if n_f == 0 {
        return Err(Error::EmptyInput { op: "negative_alignment_loss" });
    }
    let s = similarity_matrix_nodes(g, batch.embeddings(), geo)?;
    let st = g.scale(s, 1.0 / tau)?;
    let m = forget_offdiag_mask(g, batch.forget_mask());
    let fwd = g.mul(st, m)?;
    let fwd_sum = g.sum(fwd)?;
    let stt = g.transpose(st)?;
    let bwd = g.mul(stt, m)?;
    let bwd_sum = g.sum(bwd)?;
    let total = g.add(fwd_sum, bwd_sum)?;
    g.scale(total, -1.0 / (2.0 * (n_f * n_f) as f64))
}

/// Forget-side term that directly attacks each forget pair's own
/// association: (1/N_f)·Σ_i sim(x_i, t_i)/τ. Minimizing it pulls paired
/// similarities down.
pub fn positive_alignment_loss(
    g: &mut Graph,
    batch: &EmbeddingBatch,
    tau: f64,
    geo: &GeometryConfig,
) -> Result<Node> {
    check_tau(tau)?;
    let n_f = batch.n_forget();
    if n_f == 0 {
        return Err(Error::EmptyInput { op: "positive_alignment_loss" });
    }
    let s = similarity_matrix_nodes(g, batch.embeddings(), geo)?;
    let st = g.scale(s, 1.0 / tau)?;
    let n = batch.len();
    let eye = eye_mask(g, n);
    let masked = g.mul(st, eye)?;
    let diag = g.sum_axis(masked, 1)?;
    let forget = row_mask(g, batch.forget_mask(), true);
    let sel = g.mul(diag, forget)?;
    let total = g.sum(sel)?;
    g.scale(total, 1.0 / n_f as f64)
}

/// Keeps forget embeddings useful as negatives for everything else:
/// (1/(2N_f))·Σ_i [log((1/2N)·Σ_j e^{sim(x_i^f,t_j)/τ}) + symmetric].
pub fn performance_preserving_loss(
    g: &mut Graph,
    batch: &EmbeddingBatch,
    tau: f64,
    geo: &GeometryConfig,
) -> Result<Node> {
    check_tau(tau)?;
    let n_f = batch.n_forget();
    if n_f == 0 {
        return Err(Error::EmptyInput { op: "performance_preserving_loss" });
    }
    let n = batch.len();
    let s = similarity_matrix_nodes(g, batch.embeddings(), geo)?;
    let st = g.scale(s, 1.0 / tau)?;
    let p = softmax_parts(g, st)?;
    let log_n = math::ln(n as f64);
    let rows = g.shift(p.row_lse, -log_n)?;
    let cols = g.shift(p.col_lse, -log_n)?;
    let forget = row_mask(g, batch.forget_mask(), true);
    let mr = g.mul(rows, forget)?;
    let mc = g.mul(cols, forget)?;
    let sr = g.sum(mr)?;
    let sc = g.sum(mc)?;
    let total = g.add(sr, sc)?;
    g.scale(total, 1.0 / (2.0 * n_f as f64))
}

/// Weighted forget objective: α·negative + β·positive + γ·performance.
pub fn forget_loss(
    g: &mut Graph,
    batch: &EmbeddingBatch,
    tau: f64,
    geo: &GeometryConfig,
    hp: &UnlearnHyperParams,
) -> Result<Node> {
    hp.validate()?;
    let neg = negative_alignment_loss(g, batch, tau, geo)?;
    let pos = positive_alignment_loss(g, batch, tau, geo)?;
    let perf = performance_preserving_loss(g, batch, tau, geo)?;
    let a = g.scale(neg, hp.alpha)?;
    let b = g.scale(pos, hp.beta)?;
    let c = g.scale(perf, hp.gamma)?;
    let ab = g.add(a, b)?;
    g.add(ab, c)
}

fn hyperbolic_pairs<'a>(
    op: &'static str,
    emb: &'a BatchEmbeddings,
) -> Result<(&'a LorentzNodes, &'a LorentzNodes)> {
    match emb {
        BatchEmbeddings::Hyperbolic { image, text } => Ok((image, text)),
        BatchEmbeddings::Euclidean { .. } => Err(Error::invalid(format!(
            "{op} requires hyperbolic embeddings"
        ))),
    }
}

/// Row-wise entailment hinge max(0, ext(x_i, t_i) − aper(t_i)): positive
/// when the image falls outside its text's cone.
fn entailment_hinge_rows(
    g: &mut Graph,
    image: &LorentzNodes,
    text: &LorentzNodes,
    geo: &GeometryConfig,
) -> Result<Node> {
    let ext = exterior_angle_nodes(g, image, text, geo)?;
    let aper = half_aperture_nodes(g, text, geo)?;
    let diff = g.sub(ext, aper)?;
    g.relu(diff)
}

/// Mean entailment hinge over all pairs of a batch; the auxiliary term
/// hyperbolic pretraining adds to its contrastive loss.
pub fn entailment_penalty(
    g: &mut Graph,
    image: &LorentzNodes,
    text: &LorentzNodes,
    geo: &GeometryConfig,
) -> Result<Node> {
    let hinge = entailment_hinge_rows(g, image, text, geo)?;
    g.mean(hinge)
}

/// Keeps retain images inside their texts' cones:
/// (1/N_r)·Σ max(0, ext − aper) over retain pairs.
pub fn retain_entailment_loss(
    g: &mut Graph,
    batch: &EmbeddingBatch,
    geo: &GeometryConfig,
) -> Result<Node> {
    let (image, text) = hyperbolic_pairs("retain_entailment_loss", batch.embeddings())?;
    let n_r = batch.n_retain();
    if n_r == 0 {
        return Err(Error::EmptyInput { op: "retain_entailment_loss" });
    }
    let hinge = entailment_hinge_rows(g, image, text, geo)?;
    let retain = row_mask(g, batch.forget_mask(), false);
    let masked = g.mul(hinge, retain)?;
    let total = g.sum(masked)?;
    g.scale(total, 1.0 / n_r as f64)
}

/// Pushes forget images out to the cone boundary:
/// (1/N_f)·Σ max(0, aper − ext) over forget pairs; zero once the image is
/// at or beyond the edge.
pub fn forget_entailment_loss(
    g: &mut Graph,
    batch: &EmbeddingBatch,
    geo: &GeometryConfig,
) -> Result<Node> {
    let (image, text) = hyperbolic_pairs("forget_entailment_loss", batch.embeddings())?;
    let n_f = batch.n_forget();
    if n_f == 0 {
        return Err(Error::EmptyInput { op: "forget_entailment_loss" });
    }
    let ext = exterior_angle_nodes(g, image, text, geo)?;
    let aper = half_aperture_nodes(g, text, geo)?;
    let diff = g.sub(aper, ext)?;
    let hinge = g.relu(diff)?;
    let forget = row_mask(g, batch.forget_mask(), true);
    let masked = g.mul(hinge, forget)?;
    let total = g.sum(masked)?;
    g.scale(total, 1.0 / n_f as f64)
}

/// Mean over forget pairs of (distance-to-origin of image + of text); with
/// `literal_lorentz_norm` set, the literal Lorentzian norms instead (a
/// constant on the manifold — kept for auditing that degeneracy).
pub fn norm_regularization(
    g: &mut Graph,
    batch: &EmbeddingBatch,
    geo: &GeometryConfig,
) -> Result<Node> {
    let (image, text) = hyperbolic_pairs("norm_regularization", batch.embeddings())?;
    let n_f = batch.n_forget();
    if n_f == 0 {
        return Err(Error::EmptyInput { op: "norm_regularization" });
    }
    let (ni, nt) = if geo.literal_lorentz_norm {
        (literal_norm_nodes(g, image)?, literal_norm_nodes(g, text)?)
    } else {
        (
            origin_distance_nodes(g, image, geo)?,
            origin_distance_nodes(g, text, geo)?,
        )
    };
    let s = g.add(ni, nt)?;
    let forget = row_mask(g, batch.forget_mask(), true);
    let masked = g.mul(s, forget)?;
    let total = g.sum(masked)?;
    g.scale(total, 1.0 / n_f as f64)
}

// ── combined objectives ─────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectiveMode {
    /// retain + ε·forget (either similarity kind).
    Ac,
    /// AC plus both entailment hinges (hyperbolic only).
    Hac,
    /// HAC plus norm regularization (hyperbolic only).
    HacReg,
}

/// The scalar nodes of one assembled objective. `total` is the weighted
/// sum; the components stay addressable so training logs can report exact
/// decompositions.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveNodes {
    pub total: Node,
    pub retain: Node,
    pub negative_alignment: Option<Node>,
    pub positive_alignment: Option<Node>,
    pub performance_preserving: Option<Node>,
    pub forget: Option<Node>,
    pub retain_entailment: Option<Node>,
    pub forget_entailment: Option<Node>,
    pub norm_reg: Option<Node>,
}

/// Build the full objective for `mode`, reusing every component node.
///
/// A batch without forget pairs is accepted only when nothing would weight
/// them (ε = ω_f = λ = 0); the objective then reduces to the retain side
/// exactly.
pub fn assemble_objective(
    g: &mut Graph,
    batch: &EmbeddingBatch,
    hp: &UnlearnHyperParams,
    geo: &GeometryConfig,
    mode: ObjectiveMode,
) -> Result<ObjectiveNodes> {
    hp.validate()?;
    geo.validate()?;
    if mode != ObjectiveMode::Ac {
        hyperbolic_pairs("hyperbolic objective", batch.embeddings())?;
    }
    let has_forget = batch.n_forget() > 0;
    let needs_forget = hp.epsilon > 0.0
        || (mode != ObjectiveMode::Ac && hp.omega_f > 0.0)
        || (mode == ObjectiveMode::HacReg && hp.lambda_reg > 0.0);
    if !has_forget && needs_forget {
        return Err(Error::EmptyInput { op: "assemble_objective (forget side)" });
    }

    let retain = retain_loss(g, batch, hp.tau, geo)?;
    let mut out = ObjectiveNodes {
        total: retain,
        retain,
        negative_alignment: None,
        positive_alignment: None,
        performance_preserving: None,
        forget: None,
        retain_entailment: None,
        forget_entailment: None,
        norm_reg: None,
    };

    let mut total = retain;
    if has_forget {
        let neg = negative_alignment_loss(g, batch, hp.tau, geo)?;
        let pos = positive_alignment_loss(g, batch, hp.tau, geo)?;
        let perf = performance_preserving_loss(g, batch, hp.tau, geo)?;
        let a = g.scale(neg, hp.alpha)?;
        let b = g.scale(pos, hp.beta)?;
        let c = g.scale(perf, hp.gamma)?;
        let ab = g.add(a, b)?;
        let fl = g.add(ab, c)?;
        let weighted = g.scale(fl, hp.epsilon)?;
        total = g.add(total, weighted)?;
        out.negative_alignment = Some(neg);
        out.positive_alignment = Some(pos);
        out.performance_preserving = Some(perf);
        out.forget = Some(fl);
    }

    if mode != ObjectiveMode::Ac {
        let r_ent = retain_entailment_loss(g, batch, geo)?;
        let wr = g.scale(r_ent, hp.omega_r)?;
        total = g.add(total, wr)?;
        out.retain_entailment = Some(r_ent);
        if has_forget {
            let f_ent = forget_entailment_loss(g, batch, geo)?;
            let wf = g.scale(f_ent, hp.omega_f)?;
            total = g.add(total, wf)?;
            out.forget_entailment = Some(f_ent);
        }
    }

    if mode == ObjectiveMode::HacReg && has_forget {
        let reg = norm_regularization(g, batch, geo)?;
        let wl = g.scale(reg, hp.lambda_reg)?;
        total = g.add(total, wl)?;
        out.norm_reg = Some(reg);
    }

    out.total = total;
    Ok(out)
}

/// retain + ε·forget.
pub fn ac_total(
    g: &mut Graph,
    batch: &EmbeddingBatch,
    hp: &UnlearnHyperParams,
    geo: &GeometryConfig,
) -> Result<Node> {
    Ok(assemble_objective(g, batch, hp, geo, ObjectiveMode::Ac)?.total)
}

/// retain + ε·forget + ω_r·retain-entailment + ω_f·forget-entailment.
pub fn hac_total(
    g: &mut Graph,
    batch: &EmbeddingBatch,
    hp: &UnlearnHyperParams,
    geo: &GeometryConfig,
) -> Result<Node> {
    Ok(assemble_objective(g, batch, hp, geo, ObjectiveMode::Hac)?.total)
}

/// hac_total + λ·norm regularization.
pub fn hac_reg_total(
    g: &mut Graph,
    batch: &EmbeddingBatch,
    hp: &UnlearnHyperParams,
    geo: &GeometryConfig,
) -> Result<Node> {
    Ok(assemble_objective(g, batch, hp, geo, ObjectiveMode::HacReg)?.total)
}

// ── unlearning-definition audit ─────────────────────────────────────────

/// Aligned image/text embeddings for a set of pairs, value-level.
#[derive(Debug, Clone)]
pub struct PairedEmbeddings {
    pub image: Vec<Embedding>,
    pub text: Vec<Embedding>,
}

impl PairedEmbeddings {
    pub fn len(&self) -> Result<usize> {
        if self.image.len() != self.text.len() {
            return Err(Error::ShapeMismatch {
                op: "paired_embeddings",
                lhs: alloc::vec![self.image.len()],
                rhs: alloc::vec![self.text.len()],
            });
        }
        Ok(self.image.len())
    }
}

/// What the audit measures, for an updated model against the original.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AuditReport {
    pub retain_pairs: usize,
    pub forget_pairs: usize,
    /// Fraction of forget pairs whose *image* is now more similar to some
    /// retain text than to its own text.
    pub image_detachment_fraction: f64,
    /// Fraction of forget pairs whose *text* is now more similar to some
    /// retain image than to its own image.
    pub text_detachment_fraction: f64,
    /// Mean |sim_updated − sim_original| over retain pairs.
    pub retain_drift: f64,
    /// Mean |sim_updated − sim_original| over forget pairs.
    pub forget_drift: f64,
}

/// Check the behavioral definition of unlearning: forget pairs should have
/// lost their association (their own similarity undercut by similarities
/// to retain counterparts) while retain pairs keep theirs (small drift).
pub fn unlearning_definition_audit(
    original_retain: &PairedEmbeddings,
    original_forget: &PairedEmbeddings,
    updated_retain: &PairedEmbeddings,
    updated_forget: &PairedEmbeddings,
) -> Result<AuditReport> {
    let n_r = original_retain.len()?;
    let n_f = original_forget.len()?;
    if updated_retain.len()? != n_r || updated_forget.len()? != n_f {
        return Err(Error::invalid(
            "audit: original and updated sample sets differ in size",
        ));
    }
    if n_r == 0 || n_f == 0 {
        return Err(Error::EmptyInput { op: "unlearning_definition_audit" });
    }

    let mut image_detached = 0usize;
    let mut text_detached = 0usize;
    for i in 0..n_f {
        let own = similarity(&updated_forget.image[i], &updated_forget.text[i])?;
        let mut img = false;
        let mut txt = false;
        for j in 0..n_r {
            if similarity(&updated_forget.image[i], &updated_retain.text[j])? > own {
                img = true;
            }
            if similarity(&updated_retain.image[j], &updated_forget.text[i])? > own {
                txt = true;
            }
            if img && txt {
                break;
            }
        }
        image_detached += img as usize;
        text_detached += txt as usize;
    }

    let drift = |orig: &PairedEmbeddings, upd: &PairedEmbeddings, n: usize| -> Result<f64> {
        let mut acc = 0.0;
        for i in 0..n {
            let a = similarity(&orig.image[i], &orig.text[i])?;
            let b = similarity(&upd.image[i], &upd.text[i])?;
            acc += math::abs(a - b);
        }
        Ok(acc / n as f64)
    };

    Ok(AuditReport {
        retain_pairs: n_r,
        forget_pairs: n_f,
        image_detachment_fraction: image_detached as f64 / n_f as f64,
        text_detachment_fraction: text_detached as f64 / n_f as f64,
        retain_drift: drift(original_retain, updated_retain, n_r)?,
        forget_drift: drift(original_forget, updated_forget, n_f)?,
    })
}

/// Convenience used by trainers and tests: lift raw B×d image/text feature
/// nodes into a hyperbolic batch.
pub fn lift_batch(
    g: &mut Graph,
    image: Node,
    text: Node,
    geo: &GeometryConfig,
) -> Result<BatchEmbeddings> {
    let i = lift_nodes(g, image, geo.curvature)?;
    let t = lift_nodes(g, text, geo.curvature)?;
    Ok(BatchEmbeddings::Hyperbolic { image: i, text: t })
}
