//! Lorentz-model hyperbolic geometry: the hyperboloid ⟨x,x⟩_L = −1/c, its
//! exponential map at the origin, geodesic distances, and entailment cones
//! (half-aperture and exterior angle).
//!
//! Every kernel exists twice: a plain-value version on [`LorentzPoint`]s
//! (evaluation, audits, test oracles) and a graph version on batched
//! [`LorentzNodes`] (training). Tests pin the two routes against each other.
//!
//! Convention: a point is (space, time) with ⟨x,y⟩_L = x_space·y_space −
//! x_time·y_time; time is determined by the manifold constraint as
//! time = sqrt(1/c + ‖space‖²).

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{Graph, Node};
use crate::error::{Error, Result};
use crate::math;


/// How far ⟨x,x⟩_L may drift from −1/c before a checked constructor rejects.
pub const MANIFOLD_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct GeometryConfig {
    /// Curvature magnitude c > 0 (fixed, not learned).
    pub curvature: f64,
    /// Aperture constant K in aper(t) = asin(min(1, 2K/(√c‖t_space‖))).
    pub aperture_k: f64,
    /// Dead-zone width for guarded acosh/asin/acos derivatives. Keeps
    /// gradients finite at coincident points and cone boundaries.
    pub acosh_eps: f64,
    /// Norm regularization reads the literal Lorentzian norm ‖·‖_L instead
    /// of the geodesic distance to the origin. On the manifold the literal
    /// norm is the constant 1/√c, so this switch exists for auditing the
    /// difference, not for actual training.
    pub literal_lorentz_norm: bool,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        GeometryConfig {
            curvature: 1.0,
            aperture_k: 0.1,
            acosh_eps: 1e-8,
            literal_lorentz_norm: false,
        }
    }
}

impl GeometryConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.curvature.is_finite() && self.curvature > 0.0) {
            return Err(Error::invalid(format!(
                "curvature must be finite and positive, got {}",
                self.curvature
            )));
        }
        if !(self.aperture_k.is_finite() && self.aperture_k > 0.0) {
            return Err(Error::invalid(format!(
                "aperture constant must be finite and positive, got {}",
                self.aperture_k
            )));
        }
        if !(self.acosh_eps.is_finite() && self.acosh_eps > 0.0) {
            return Err(Error::invalid(format!(
                "acosh guard epsilon must be finite and positive, got {}",
                self.acosh_eps
            )));
        }
        Ok(())
    }
}

// ── plain points ────────────────────────────────────────────────────────

/// One on-manifold point. Fields are private so the constraint cannot be
/// broken after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct LorentzPoint {
    space: Vec<f64>,
    time: f64,
    curvature: f64,
}

impl LorentzPoint {
    /// Build from spatial components; the time component is derived, so the
    /// result is on-manifold by construction.
    pub fn from_space(space: Vec<f64>, curvature: f64) -> Result<Self> {
        if !(curvature.is_finite() && curvature > 0.0) {
            return Err(Error::invalid("curvature must be finite and positive"));
        }
        if space.is_empty() {
            return Err(Error::EmptyInput { op: "lorentz_point" });
        }
        if space.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "lorentz_point" });
        }
        let sumsq: f64 = space.iter().map(|v| v * v).sum();
        let time = math::sqrt(1.0 / curvature + sumsq);
        Ok(LorentzPoint { space, time, curvature })
    }

    /// Build from explicit components, rejecting off-manifold input.
    pub fn new(space: Vec<f64>, time: f64, curvature: f64) -> Result<Self> {
        let p = LorentzPoint::from_space(space, curvature)?;
        if math::abs(time - p.time) > MANIFOLD_TOL {
            return Err(Error::Domain {
                op: "lorentz_point",
                detail: format!("time {time} is off-manifold (expected {})", p.time),
            });
        }
        Ok(p)
    }

    pub fn origin(dim: usize, curvature: f64) -> Result<Self> {
        LorentzPoint::from_space(vec![0.0; dim], curvature)
    }

    pub fn space(&self) -> &[f64] {
        &self.space
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn curvature(&self) -> f64 {
        self.curvature
    }

    pub fn dim(&self) -> usize {
        self.space.len()
    }

    pub fn space_norm(&self) -> f64 {
        crate::tensor::l2_slice(&self.space)
    }
}

fn check_pair(op: &'static str, x: &LorentzPoint, y: &LorentzPoint) -> Result<()> {
    if x.dim() != y.dim() {
        return Err(Error::ShapeMismatch {
            op,
            lhs: vec![x.dim()],
            rhs: vec![y.dim()],
        });
    }
    if x.curvature != y.curvature {
        return Err(Error::invalid(format!(
            "{op}: curvature mismatch ({} vs {})",
            x.curvature, y.curvature
        )));
    }
    Ok(())
}

/// Lorentzian inner product ⟨x,y⟩_L = x_s·y_s − x_t·y_t.
pub fn lorentz_inner(x: &LorentzPoint, y: &LorentzPoint) -> Result<f64> {
    check_pair("lorentz_inner", x, y)?;
    let dot: f64 = x.space.iter().zip(&y.space).map(|(a, b)| a * b).sum();
    Ok(dot - x.time * y.time)
}

/// Lorentzian norm sqrt(|⟨x,x⟩_L|); for on-manifold points this is the
/// constant 1/√c.
pub fn lorentz_norm(x: &LorentzPoint) -> f64 {
    let inner = lorentz_inner(x, x).expect("same point");
    math::sqrt(math::abs(inner))
}

/// Exponential map at the origin: lifts a tangent vector v ∈ R^d onto the
/// hyperboloid. ‖v‖ becomes the geodesic distance from the origin.
pub fn exp_map_origin(v: &[f64], curvature: f64) -> Result<LorentzPoint> {
    if !(curvature.is_finite() && curvature > 0.0) {
        return Err(Error::invalid("curvature must be finite and positive"));
    }
    if v.is_empty() {
        return Err(Error::EmptyInput { op: "exp_map_origin" });
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite { op: "exp_map_origin" });
    }
    let sc = math::sqrt(curvature);
    let r = crate::tensor::l2_slice(v);
    let scale = math::sinhc(sc * r);
    let space: Vec<f64> = v.iter().map(|&x| scale * x).collect();
    LorentzPoint::from_space(space, curvature)
}

/// Geodesic distance d_L(x,y) = (1/√c)·acosh(−c·⟨x,y⟩_L), with the acosh
/// argument clamped up to 1 so coincident points give exactly zero.
pub fn lorentz_distance(x: &LorentzPoint, y: &LorentzPoint) -> Result<f64> {
    check_pair("lorentz_distance", x, y)?;
    let c = x.curvature;
    let arg = (-c * lorentz_inner(x, y)?).max(1.0);
    Ok(math::acosh(arg) / math::sqrt(c))
}

/// Geodesic distance to the origin, (1/√c)·acosh(√c·x_time).
pub fn distance_to_origin(x: &LorentzPoint) -> f64 {
    let sc = math::sqrt(x.curvature);
    math::acosh((sc * x.time).max(1.0)) / sc
}

/// Half-aperture of the entailment cone at t:
/// asin(min(1, 2K/(√c‖t_space‖))). Errors when t sits at the origin, where
/// the cone is undefined.
pub fn half_aperture(t: &LorentzPoint, cfg: &GeometryConfig) -> Result<f64> {
    cfg.validate()?;
    let norm = t.space_norm();
    if norm == 0.0 {
        return Err(Error::Domain {
            op: "half_aperture",
            detail: "cone apex at the origin".into(),
        });
    }
    let arg = (2.0 * cfg.aperture_k / (math::sqrt(t.curvature) * norm)).min(1.0);
    Ok(math::asin(arg))
}

/// Exterior angle at apex t toward member x:
/// acos((x_time + t_time·c·⟨x,t⟩_L) / (‖t_space‖·sqrt((c⟨x,t⟩_L)² − 1))),
/// acos argument clamped to [−1, 1]. x inside the cone of t iff
/// ext(x,t) ≤ aper(t).
pub fn exterior_angle(x: &LorentzPoint, t: &LorentzPoint) -> Result<f64> {
    check_pair("exterior_angle", x, t)?;
    let c = x.curvature;
    let tnorm = t.space_norm();
    if tnorm == 0.0 {
        return Err(Error::Domain {
            op: "exterior_angle",
            detail: "cone apex at the origin".into(),
        });
    }
    let ci = c * lorentz_inner(x, t)?;
    let denom_sq = (ci * ci - 1.0).max(0.0);
    let denom = tnorm * math::sqrt(denom_sq);
    if denom == 0.0 {
        return Err(Error::Domain {
            op: "exterior_angle",
            detail: "coincident points leave the angle undefined".into(),
        });
    }
    let num = x.time + t.time * ci;
    Ok(math::acos((num / denom).clamp(-1.0, 1.0)))
}

// ── graph kernels ───────────────────────────────────────────────────────

/// A batch of B on-manifold points living on an autodiff graph:
/// `space` is B×d, `time` is B×1.
#[derive(Debug, Clone, Copy)]
pub struct LorentzNodes {
    pub space: Node,
    pub time: Node,
    pub curvature: f64,
}

/// Lift a B×d tensor of tangent vectors onto the hyperboloid.
pub fn lift_nodes(g: &mut Graph, v: Node, curvature: f64) -> Result<LorentzNodes> {
    if !(curvature.is_finite() && curvature > 0.0) {
        return Err(Error::invalid("curvature must be finite and positive"));
    }
    if g.value(v).rank() != 2 {
        return Err(Error::InvalidShape {
            op: "lift",
            detail: format!("expected rank 2, got {:?}", g.value(v).shape()),
        });
    }
    let sc = math::sqrt(curvature);
    let r = g.l2norm_axis(v, 1)?;
    let u = g.scale(r, sc)?;
    let s = g.sinhc(u)?;
    let space = g.mul(v, s)?;
    let sq = g.mul(space, space)?;
    let sumsq = g.sum_axis(sq, 1)?;
    let shifted = g.shift(sumsq, 1.0 / curvature)?;
    let time = g.sqrt(shifted)?;
    Ok(LorentzNodes { space, time, curvature })
}

fn check_node_pair(op: &'static str, g: &Graph, a: &LorentzNodes, b: &LorentzNodes) -> Result<()> {
    if a.curvature != b.curvature {
        return Err(Error::invalid(format!(
            "{op}: curvature mismatch ({} vs {})",
            a.curvature, b.curvature
        )));
    }
    let (sa, sb) = (g.value(a.space).shape(), g.value(b.space).shape());
    if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
        return Err(Error::ShapeMismatch {
            op,
            lhs: sa.to_vec(),
            rhs: sb.to_vec(),
        });
    }
    Ok(())
}

/// All-pairs Lorentzian inner products: result[i][j] = ⟨a_i, b_j⟩_L (A×B).
pub fn pairwise_inner_nodes(g: &mut Graph, a: &LorentzNodes, b: &LorentzNodes) -> Result<Node> {
    check_node_pair("pairwise_inner", g, a, b)?;
    let bt = g.transpose(b.space)?;
    let space = g.matmul(a.space, bt)?;
    let tt = g.transpose(b.time)?;
    let time = g.matmul(a.time, tt)?;
    g.sub(space, time)
}

/// All-pairs negated geodesic distance, the hyperbolic similarity matrix.
pub fn pairwise_neg_distance_nodes(
    g: &mut Graph,
    a: &LorentzNodes,
    b: &LorentzNodes,
    cfg: &GeometryConfig,
) -> Result<Node> {
    cfg.validate()?;
    let c = a.curvature;
    let inner = pairwise_inner_nodes(g, a, b)?;
    let arg = g.scale(inner, -c)?;
    let ac = g.acosh_guarded(arg, cfg.acosh_eps)?;
    let d = g.scale(ac, 1.0 / math::sqrt(c))?;
    g.neg(d)
}

/// Row-aligned Lorentzian inner products: result[i] = ⟨a_i, b_i⟩_L (B×1).
pub fn rowwise_inner_nodes(g: &mut Graph, a: &LorentzNodes, b: &LorentzNodes) -> Result<Node> {
    check_node_pair("rowwise_inner", g, a, b)?;
    let prod = g.mul(a.space, b.space)?;
    let space = g.sum_axis(prod, 1)?;
    let time = g.mul(a.time, b.time)?;
    g.sub(space, time)
}

/// Row-aligned exterior angles ext(x_i, t_i) (B×1).
pub fn exterior_angle_nodes(
    g: &mut Graph,
    x: &LorentzNodes,
    t: &LorentzNodes,
    cfg: &GeometryConfig,
) -> Result<Node> {
    cfg.validate()?;
    let c = x.curvature;
    let inner = rowwise_inner_nodes(g, x, t)?;
    let ci = g.scale(inner, c)?;
    let prod = g.mul(t.time, ci)?;
    let num = g.add(x.time, prod)?;
    let tnorm = g.l2norm_axis(t.space, 1)?;
    let ci2 = g.mul(ci, ci)?;
    let m1 = g.shift(ci2, -1.0)?;
    let m1c = g.clamp_min(m1, 0.0)?;
    let root = g.sqrt(m1c)?;
    let denom = g.mul(tnorm, root)?;
    let ratio = g.div(num, denom)?;
    g.acos_guarded(ratio, cfg.acosh_eps)
}

/// Row-aligned half-apertures aper(t_i) (B×1).
pub fn half_aperture_nodes(g: &mut Graph, t: &LorentzNodes, cfg: &GeometryConfig) -> Result<Node> {
    cfg.validate()?;
    let tnorm = g.l2norm_axis(t.space, 1)?;
    let k = g.scalar(2.0 * cfg.aperture_k / math::sqrt(t.curvature))?;
    let arg = g.div(k, tnorm)?;
    let argc = g.clamp_max(arg, 1.0)?;
    g.asin_guarded(argc, cfg.acosh_eps)
}

/// Row-aligned geodesic distances to the origin (B×1).
pub fn origin_distance_nodes(g: &mut Graph, p: &LorentzNodes, cfg: &GeometryConfig) -> Result<Node> {
    cfg.validate()?;
    let sc = math::sqrt(p.curvature);
    let arg = g.scale(p.time, sc)?;
    let ac = g.acosh_guarded(arg, cfg.acosh_eps)?;
    g.scale(ac, 1.0 / sc)
}

/// Row-aligned literal Lorentzian norms sqrt(|⟨p,p⟩_L|) (B×1). On-manifold
/// this is constant; see [`GeometryConfig::literal_lorentz_norm`].
pub fn literal_norm_nodes(g: &mut Graph, p: &LorentzNodes) -> Result<Node> {
    let inner = rowwise_inner_nodes(g, p, p)?;
    let pos = g.neg(inner)?;
    let clamped = g.clamp_min(pos, 0.0)?;
    g.sqrt(clamped)
}
