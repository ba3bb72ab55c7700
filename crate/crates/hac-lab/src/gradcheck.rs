//! Finite-difference verification of every loss gradient.
//!
//! Each check names one loss in one geometry, rebuilds it from raw feature
//! leaves at twenty seeded points, and compares analytic gradients against
//! central differences. The `grad-check` verb renders the resulting report
//! and fails if any loss disagrees beyond [`REL_ERR_THRESHOLD`].

use hac_core::autodiff::{grad_check, Graph, Node};
use hac_core::geometry::GeometryConfig;
use hac_core::losses::{
    ac_total, clip_contrastive_loss, entailment_penalty, forget_entailment_loss, forget_loss,
    hac_reg_total, hac_total, lift_batch, negative_alignment_loss, norm_regularization,
    performance_preserving_loss, positive_alignment_loss, retain_entailment_loss, retain_loss,
    BatchEmbeddings, EmbeddingBatch, UnlearnHyperParams,
};
use hac_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{LabError, LabResult};

/// A gradient check fails when analytic and numeric disagree beyond this.
pub const REL_ERR_THRESHOLD: f64 = 1e-4;

const POINTS: usize = 20;
const ROWS: usize = 4;
const DIM: usize = 4;
const STEP: f64 = 1e-6;
const MASK: [bool; ROWS] = [false, true, false, true];

/// Rebuilds one scalar loss from raw `ROWS × DIM` image/text leaves.
pub type LossBuilder = Box<dyn Fn(&mut Graph, &[Node]) -> hac_core::Result<Node> + Send + Sync>;

pub struct NamedCheck {
    pub name: String,
    pub build: LossBuilder,
}

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: String,
    pub max_rel_err: f64,
}

impl CheckOutcome {
    pub fn pass(&self) -> bool {
        self.max_rel_err < REL_ERR_THRESHOLD
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub outcomes: Vec<CheckOutcome>,
}

impl GradCheckReport {
    pub fn all_pass(&self) -> bool {
        self.outcomes.iter().all(CheckOutcome::pass)
    }

    pub fn failures(&self) -> usize {
        self.outcomes.iter().filter(|o| !o.pass()).count()
    }

    /// One line per loss: name, worst relative error, verdict.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for o in &self.outcomes {
            let verdict = if o.pass() { "ok" } else { "FAIL" };
            out.push_str(&format!(
                "{:<44} max rel err {:>10.3e}  {}\n",
                o.name, o.max_rel_err, verdict
            ));
        }
        out
    }
}

/// Runs every check at `POINTS` seeded feature batches and records the
/// worst relative error each loss produced.
pub fn run_checks(checks: &[NamedCheck], seed: u64) -> LabResult<GradCheckReport> {
    let mut outcomes = Vec::with_capacity(checks.len());
    for check in checks {
        // Every loss sees the same point sequence so reports are comparable.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = 0.0f64;
        for _ in 0..POINTS {
            let image = random_features(&mut rng)?;
            let text = random_features(&mut rng)?;
            let err = grad_check(&check.build, &[image, text], STEP).map_err(LabError::from)?;
            worst = worst.max(err);
        }
        outcomes.push(CheckOutcome { name: check.name.clone(), max_rel_err: worst });
    }
    Ok(GradCheckReport { outcomes })
}

/// Report a failing run as the numerical error the CLI maps to exit 2.
pub fn report_to_result(report: &GradCheckReport) -> LabResult<()> {
    if report.all_pass() {
        Ok(())
    } else {
        Err(LabError::Numerical(format!(
            "gradient check failed: {} of {} losses exceed max relative error {REL_ERR_THRESHOLD:e}",
            report.failures(),
            report.outcomes.len()
        )))
    }
}

fn random_features(rng: &mut ChaCha8Rng) -> LabResult<Tensor> {
    let rows: Vec<Vec<f64>> = (0..ROWS)
        .map(|_| loop {
            let row: Vec<f64> = (0..DIM).map(|_| rng.random_range(-1.5..1.5)).collect();
            // Rows near the origin make cosine normalization and cone
            // apertures ill-conditioned; resample them.
            if row.iter().map(|v| v * v).sum::<f64>().sqrt() > 0.3 {
                break row;
            }
        })
        .collect();
    Tensor::from_rows(&rows).map_err(LabError::from)
}

fn euclid(g: &Graph, nodes: &[Node]) -> hac_core::Result<EmbeddingBatch> {
    let emb = BatchEmbeddings::Euclidean { image: nodes[0], text: nodes[1] };
    EmbeddingBatch::new(g, emb, MASK.to_vec())
}

fn hyper(g: &mut Graph, nodes: &[Node], geo: &GeometryConfig) -> hac_core::Result<EmbeddingBatch> {
    let emb = lift_batch(g, nodes[0], nodes[1], geo)?;
    EmbeddingBatch::new(g, emb, MASK.to_vec())
}

/// Every loss the trainers can assemble, in both geometries where the loss
/// is defined, under hyperparameters that leave no term weightless.
pub fn default_checks() -> Vec<NamedCheck> {
    let geo = GeometryConfig::default();
    let tau = 0.7;
    let hp = UnlearnHyperParams {
        alpha: 0.4,
        beta: 0.3,
        gamma: 0.6,
        epsilon: 0.2,
        omega_r: 0.3,
        omega_f: 0.7,
        lambda_reg: 0.15,
        tau,
    };

    let mut checks: Vec<NamedCheck> = Vec::new();
    let mut push = |name: &str, build: LossBuilder| {
        checks.push(NamedCheck { name: name.to_string(), build });
    };

    push("clip_contrastive[euclidean]", {
        let geo = geo.clone();
        Box::new(move |g: &mut Graph, nodes: &[Node]| {
            let emb = BatchEmbeddings::Euclidean { image: nodes[0], text: nodes[1] };
            clip_contrastive_loss(g, &emb, tau, &geo)
        })
    });
    push("clip_contrastive[hyperbolic]", {
        let geo = geo.clone();
        Box::new(move |g: &mut Graph, nodes: &[Node]| {
            let emb = lift_batch(g, nodes[0], nodes[1], &geo)?;
            clip_contrastive_loss(g, &emb, tau, &geo)
        })
    });

    type BatchLoss =
        fn(&mut Graph, &EmbeddingBatch, f64, &GeometryConfig) -> hac_core::Result<Node>;
    let batch_losses: [(&str, BatchLoss); 4] = [
        ("retain", retain_loss),
        ("negative_alignment", negative_alignment_loss),
        ("positive_alignment", positive_alignment_loss),
        ("performance_preserving", performance_preserving_loss),
    ];
    for (name, f) in batch_losses {
        push(&format!("{name}[euclidean]"), {
            Box::new(move |g: &mut Graph, nodes: &[Node]| {
                let batch = euclid(g, nodes)?;
                f(g, &batch, tau, &GeometryConfig::default())
            })
        });
        push(&format!("{name}[hyperbolic]"), {
            let geo = geo.clone();
            Box::new(move |g: &mut Graph, nodes: &[Node]| {
                let batch = hyper(g, nodes, &geo)?;
                f(g, &batch, tau, &geo)
            })
        });
    }

    push("forget[euclidean]", {
        Box::new(move |g: &mut Graph, nodes: &[Node]| {
            let batch = euclid(g, nodes)?;
            forget_loss(g, &batch, tau, &GeometryConfig::default(), &hp)
        })
    });
    push("forget[hyperbolic]", {
        let geo = geo.clone();
        Box::new(move |g: &mut Graph, nodes: &[Node]| {
            let batch = hyper(g, nodes, &geo)?;
            forget_loss(g, &batch, tau, &geo, &hp)
        })
    });
    push("ac_total[euclidean]", {
        Box::new(move |g: &mut Graph, nodes: &[Node]| {
            let batch = euclid(g, nodes)?;
            ac_total(g, &batch, &hp, &GeometryConfig::default())
        })
    });
    push("ac_total[hyperbolic]", {
        let geo = geo.clone();
        Box::new(move |g: &mut Graph, nodes: &[Node]| {
            let batch = hyper(g, nodes, &geo)?;
            ac_total(g, &batch, &hp, &geo)
        })
    });

    push("entailment_penalty[hyperbolic]", {
        let geo = geo.clone();
        Box::new(move |g: &mut Graph, nodes: &[Node]| {
            match lift_batch(g, nodes[0], nodes[1], &geo)? {
                BatchEmbeddings::Hyperbolic { image, text } => {
                    entailment_penalty(g, &image, &text, &geo)
                }
                BatchEmbeddings::Euclidean { .. } => unreachable!("lift_batch is hyperbolic"),
            }
        })
    });
    push("retain_entailment[hyperbolic]", {
        let geo = geo.clone();
        Box::new(move |g: &mut Graph, nodes: &[Node]| {
            let batch = hyper(g, nodes, &geo)?;
            retain_entailment_loss(g, &batch, &geo)
        })
    });
    push("forget_entailment[hyperbolic]", {
        let geo = geo.clone();
        Box::new(move |g: &mut Graph, nodes: &[Node]| {
            let batch = hyper(g, nodes, &geo)?;
            forget_entailment_loss(g, &batch, &geo)
        })
    });
    push("norm_regularization[hyperbolic]", {
        let geo = geo.clone();
        Box::new(move |g: &mut Graph, nodes: &[Node]| {
            let batch = hyper(g, nodes, &geo)?;
            norm_regularization(g, &batch, &geo)
        })
    });
    push("hac_total[hyperbolic]", {
        let geo = geo.clone();
        Box::new(move |g: &mut Graph, nodes: &[Node]| {
            let batch = hyper(g, nodes, &geo)?;
            hac_total(g, &batch, &hp, &geo)
        })
    });
    push("hac_reg_total[hyperbolic]", {
        let geo = geo.clone();
        Box::new(move |g: &mut Graph, nodes: &[Node]| {
            let batch = hyper(g, nodes, &geo)?;
            hac_reg_total(g, &batch, &hp, &geo)
        })
    });

    checks
}
