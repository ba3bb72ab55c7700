//! Reverse-mode automatic differentiation over dense f64 tensors.
//!
//! A [`Graph`] is an append-only tape: applying a primitive evaluates it
//! eagerly, stores the result, and records the inputs. [`Graph::backward`]
//! walks the tape once in reverse, accumulating vector-Jacobian products.
//! Everything is sequential and allocation-order deterministic: the same
//! graph built twice yields bitwise-identical values and gradients.
//!
//! Domain-restricted primitives come in two flavors: strict (out-of-domain
//! input is an error) and guarded (input clamped into the domain, with a
//! zero-derivative dead zone so the clamped branch never produces infinite
//! gradients). Every primitive checks its output for NaN/Inf and fails
//! loudly instead of letting poison propagate.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::tensor::Tensor;

/// Handle to a node in a [`Graph`]. Only meaningful for the graph that
/// created it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Node(usize);

impl Node {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Primitive operations. Parameters (clamp bounds, reduction axis, guard
/// epsilon) travel inside the variant, so one `apply` entry point covers
/// the whole set.
#[derive(Debug, Clone, PartialEq)]
pub enum Prim {
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Exp,
    Log,
    Sqrt,
    Sinh,
    Cosh,
    /// sinh(x)/x, continuous through 0 (used by the exponential map).
    Sinhc,
    /// `guard: None` errors for x < 1; `Some(eps)` clamps the input up to 1
    /// and zeroes the derivative for x ≤ 1 + eps.
    Acosh { guard: Option<f64> },
    /// `guard: None` errors for |x| > 1; `Some(eps)` clamps into [-1, 1]
    /// and zeroes the derivative for |x| ≥ 1 − eps.
    Asin { guard: Option<f64> },
    Acos { guard: Option<f64> },
    /// max(x, 0).
    Relu,
    /// min(max(x, lo), hi); derivative 1 inside [lo, hi], 0 outside.
    Clamp { lo: f64, hi: f64 },
    MatMul,
    Transpose,
    /// `axis: None` reduces everything to a scalar; `Some(axis)` reduces one
    /// axis of a rank-2 tensor, keeping it as extent 1.
    Sum { axis: Option<usize> },
    Mean { axis: Option<usize> },
    LogSumExp { axis: Option<usize> },
    L2Norm { axis: Option<usize> },
    /// Materialize at a broadcast-compatible target shape.
    Broadcast { shape: Vec<usize> },
}

impl Prim {
    pub fn name(&self) -> &'static str {
        match self {
            Prim::Add => "add",
            Prim::Sub => "sub",
            Prim::Mul => "mul",
            Prim::Div => "div",
            Prim::Neg => "neg",
            Prim::Exp => "exp",
            Prim::Log => "log",
            Prim::Sqrt => "sqrt",
            Prim::Sinh => "sinh",
            Prim::Cosh => "cosh",
            Prim::Sinhc => "sinhc",
            Prim::Acosh { .. } => "acosh",
            Prim::Asin { .. } => "asin",
            Prim::Acos { .. } => "acos",
            Prim::Relu => "relu",
            Prim::Clamp { .. } => "clamp",
            Prim::MatMul => "matmul",
            Prim::Transpose => "transpose",
            Prim::Sum { .. } => "sum",
            Prim::Mean { .. } => "mean",
            Prim::LogSumExp { .. } => "log_sum_exp",
            Prim::L2Norm { .. } => "l2_norm",
            Prim::Broadcast { .. } => "broadcast",
        }
    }

    fn arity(&self) -> usize {
        match self {
            Prim::Add | Prim::Sub | Prim::Mul | Prim::Div | Prim::MatMul => 2,
            _ => 1,
        }
    }
}

enum Record {
    Leaf { requires_grad: bool },
    Prim { prim: Prim, inputs: Vec<Node> },
}

struct NodeData {
    value: Tensor,
    record: Record,
}

/// Gradients from one `backward` call, indexed by node.
pub struct GradientMap {
    grads: Vec<Option<Tensor>>,
}

impl GradientMap {
    /// Gradient of the loss with respect to `node`, if one was computed.
    /// Every node passed as `wrt` to `backward` is present (zero-filled if
    /// the loss does not depend on it).
    pub fn get(&self, node: Node) -> Option<&Tensor> {
        self.grads.get(node.0).and_then(|g| g.as_ref())
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<NodeData>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, record: Record) -> Node {
        self.nodes.push(NodeData { value, record });
        Node(self.nodes.len() - 1)
    }

    /// Differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Node {
        self.push(value, Record::Leaf { requires_grad: true })
    }

    /// Non-differentiable input (masks, targets, fixed scalars).
    pub fn constant(&mut self, value: Tensor) -> Node {
        self.push(value, Record::Leaf { requires_grad: false })
    }

    pub fn scalar(&mut self, v: f64) -> Result<Node> {
        Ok(self.constant(Tensor::scalar(v)?))
    }

    pub fn value(&self, node: Node) -> &Tensor {
        &self.nodes[node.0].value
    }

    fn input_value(&self, op: &'static str, node: Node) -> Result<&Tensor> {
        self.nodes
            .get(node.0)
            .map(|n| &n.value)
            .ok_or(Error::Invalid {
                detail: format!("{op}: unknown node id {}", node.0),
            })
    }

    /// Apply one primitive: validate, evaluate, record. The single entry
    /// point every convenience method goes through.
    pub fn apply(&mut self, prim: Prim, inputs: &[Node]) -> Result<Node> {
        let op = prim.name();
        if inputs.len() != prim.arity() {
            return Err(Error::Invalid {
                detail: format!("{op}: expected {} inputs, got {}", prim.arity(), inputs.len()),
            });
        }
        for &n in inputs {
            self.input_value(op, n)?;
        }
        let value = self.forward(&prim, inputs)?;
        if value.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op });
        }
        Ok(self.push(
            value,
            Record::Prim {
                prim,
                inputs: inputs.to_vec(),
            },
        ))
    }

    fn forward(&self, prim: &Prim, inputs: &[Node]) -> Result<Tensor> {
        let x = self.value(inputs[0]);
        match prim {
            Prim::Add => x.zip(self.value(inputs[1]), "add", |a, b| a + b),
            Prim::Sub => x.zip(self.value(inputs[1]), "sub", |a, b| a - b),
            Prim::Mul => x.zip(self.value(inputs[1]), "mul", |a, b| a * b),
            Prim::Div => {
                let b = self.value(inputs[1]);
                if b.values().iter().any(|&v| v == 0.0) {
                    return Err(Error::Domain {
                        op: "div",
                        detail: "division by zero".into(),
                    });
                }
                x.zip(b, "div", |a, b| a / b)
            }
            Prim::Neg => Ok(x.map(|v| -v)),
            Prim::Exp => Ok(x.map(math::exp)),
            Prim::Log => {
                if x.values().iter().any(|&v| v <= 0.0) {
                    return Err(Error::Domain {
                        op: "log",
                        detail: "input must be positive".into(),
                    });
                }
                Ok(x.map(math::ln))
            }
            Prim::Sqrt => {
                if x.values().iter().any(|&v| v < 0.0) {
                    return Err(Error::Domain {
                        op: "sqrt",
                        detail: "input must be non-negative".into(),
                    });
                }
                Ok(x.map(math::sqrt))
            }
            Prim::Sinh => Ok(x.map(math::sinh)),
            Prim::Cosh => Ok(x.map(math::cosh)),
            Prim::Sinhc => Ok(x.map(math::sinhc)),
            Prim::Acosh { guard } => match guard {
                None => {
                    if x.values().iter().any(|&v| v < 1.0) {
                        return Err(Error::Domain {
                            op: "acosh",
                            detail: "input must be >= 1 (use the guarded variant to clamp)".into(),
                        });
                    }
                    Ok(x.map(math::acosh))
                }
                Some(_) => Ok(x.map(|v| math::acosh(v.max(1.0)))),
            },
            Prim::Asin { guard } => match guard {
                None => {
                    if x.values().iter().any(|&v| math::abs(v) > 1.0) {
                        return Err(Error::Domain {
                            op: "asin",
                            detail: "input must lie in [-1, 1] (use the guarded variant to clamp)".into(),
                        });
                    }
                    Ok(x.map(math::asin))
                }
                Some(_) => Ok(x.map(|v| math::asin(v.clamp(-1.0, 1.0)))),
            },
            Prim::Acos { guard } => match guard {
                None => {
                    if x.values().iter().any(|&v| math::abs(v) > 1.0) {
                        return Err(Error::Domain {
                            op: "acos",
                            detail: "input must lie in [-1, 1] (use the guarded variant to clamp)".into(),
                        });
                    }
                    Ok(x.map(math::acos))
                }
                Some(_) => Ok(x.map(|v| math::acos(v.clamp(-1.0, 1.0)))),
            },
            Prim::Relu => Ok(x.map(|v| v.max(0.0))),
            Prim::Clamp { lo, hi } => {
                if lo > hi {
                    return Err(Error::Invalid {
                        detail: format!("clamp: lo {lo} exceeds hi {hi}"),
                    });
                }
                let (lo, hi) = (*lo, *hi);
                Ok(x.map(|v| v.min(hi).max(lo)))
            }
            Prim::MatMul => x.matmul(self.value(inputs[1])),
            Prim::Transpose => x.transpose(),
            Prim::Sum { axis } => match axis {
                None => Tensor::scalar(x.sum_all()),
                Some(ax) => x.sum_axis(*ax),
            },
            Prim::Mean { axis } => match axis {
                None => {
                    if x.is_empty() {
                        return Err(Error::EmptyInput { op: "mean" });
                    }
                    Tensor::scalar(x.sum_all() / x.len() as f64)
                }
                Some(ax) => x.mean_axis(*ax),
            },
            Prim::LogSumExp { axis } => {
                if x.is_empty() {
                    return Err(Error::EmptyInput { op: "log_sum_exp" });
                }
                match axis {
                    None => Tensor::scalar(crate::tensor::lse_slice(x.values())),
                    Some(ax) => x.lse_axis(*ax),
                }
            }
            Prim::L2Norm { axis } => match axis {
                None => Tensor::scalar(crate::tensor::l2_slice(x.values())),
                Some(ax) => x.l2_axis(*ax),
            },
            Prim::Broadcast { shape } => x.broadcast_to(shape),
        }
    }

    /// Reverse pass from a scalar `loss`. Returns gradients for every node
    /// in `wrt`; nodes the loss does not depend on get zero tensors.
    /// Requesting a gradient for a `constant` is an error. The graph is not
    /// mutated, so repeated calls give identical results.
    pub fn backward(&self, loss: Node, wrt: &[Node]) -> Result<GradientMap> {
        let loss_val = self.input_value("backward", loss)?;
        if loss_val.len() != 1 {
            return Err(Error::InvalidShape {
                op: "backward",
                detail: format!("loss must be scalar, got shape {:?}", loss_val.shape()),
            });
        }
        for &n in wrt {
            match self.nodes.get(n.0).map(|d| &d.record) {
                None => {
                    return Err(Error::Invalid {
                        detail: format!("backward: unknown node id {}", n.0),
                    })
                }
                Some(Record::Leaf { requires_grad: false }) => {
                    return Err(Error::Invalid {
                        detail: format!("backward: node {} has gradients disabled", n.0),
                    })
                }
                _ => {}
            }
        }

        // Which nodes can carry gradient: grad-enabled leaves, requested
        // nodes, and anything computed from them.
        let mut needs = vec![false; self.nodes.len()];
        for &n in wrt {
            needs[n.0] = true;
        }
        for (i, data) in self.nodes.iter().enumerate() {
            match &data.record {
                Record::Leaf { requires_grad } => needs[i] |= *requires_grad,
                Record::Prim { inputs, .. } => {
                    needs[i] |= inputs.iter().any(|n| needs[n.0]);
                }
            }
        }

        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::filled(loss_val.shape().to_vec(), 1.0));

        for id in (0..=loss.0).rev() {
            if grads[id].is_none() || !needs[id] {
                continue;
            }
            let (prim, inputs) = match &self.nodes[id].record {
                Record::Leaf { .. } => continue,
                Record::Prim { prim, inputs } => (prim, inputs),
            };
            let d = grads[id].take().unwrap();
            let contributions = self.vjp(prim, inputs, Node(id), &d)?;
            grads[id] = Some(d);
            for (n, g) in inputs.iter().zip(contributions) {
                if !needs[n.0] {
                    continue;
                }
                let g = match g {
                    Some(g) => g,
                    None => continue,
                };
                grads[n.0] = Some(match grads[n.0].take() {
                    None => g,
                    Some(acc) => acc.zip(&g, "grad_accumulate", |a, b| a + b)?,
                });
            }
        }

        for &n in wrt {
            let shape = self.nodes[n.0].value.shape().to_vec();
            let g = grads[n.0].get_or_insert_with(|| Tensor::zeros(shape));
            if g.values().iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { op: "backward" });
            }
        }
        Ok(GradientMap { grads })
    }

    /// Per-input gradient contributions for one record (None = input is not
    /// differentiable through this primitive, which never happens for the
    /// current set).
    fn vjp(&self, prim: &Prim, inputs: &[Node], out: Node, d: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let x = self.value(inputs[0]);
        let y = self.value(out);
        let one = |t: Tensor| Ok(vec![Some(t)]);
        match prim {
            Prim::Add => {
                let b = self.value(inputs[1]);
                Ok(vec![
                    Some(d.reduce_to(x.shape())?),
                    Some(d.reduce_to(b.shape())?),
                ])
            }
            Prim::Sub => {
                let b = self.value(inputs[1]);
                Ok(vec![
                    Some(d.reduce_to(x.shape())?),
                    Some(d.map(|v| -v).reduce_to(b.shape())?),
                ])
            }
            Prim::Mul => {
                let b = self.value(inputs[1]);
                Ok(vec![
                    Some(d.zip(b, "mul_vjp", |d, b| d * b)?.reduce_to(x.shape())?),
                    Some(d.zip(x, "mul_vjp", |d, a| d * a)?.reduce_to(b.shape())?),
                ])
            }
            Prim::Div => {
                let b = self.value(inputs[1]);
                let da = d.zip(b, "div_vjp", |d, b| d / b)?.reduce_to(x.shape())?;
                let db = d
                    .zip(y, "div_vjp", |d, y| d * y)?
                    .zip(b, "div_vjp", |t, b| -t / b)?
                    .reduce_to(b.shape())?;
                Ok(vec![Some(da), Some(db)])
            }
            Prim::Neg => one(d.map(|v| -v)),
            Prim::Exp => one(d.zip(y, "exp_vjp", |d, y| d * y)?),
            Prim::Log => one(d.zip(x, "log_vjp", |d, x| d / x)?),
            Prim::Sqrt => one(d.zip(y, "sqrt_vjp", |d, y| if y == 0.0 { 0.0 } else { d * 0.5 / y })?),
            Prim::Sinh => one(d.zip(x, "sinh_vjp", |d, x| d * math::cosh(x))?),
            Prim::Cosh => one(d.zip(x, "cosh_vjp", |d, x| d * math::sinh(x))?),
            Prim::Sinhc => one(d.zip(x, "sinhc_vjp", |d, x| d * math::sinhc_deriv(x))?),
            Prim::Acosh { guard } => {
                let eps = guard.unwrap_or(0.0);
                one(d.zip(x, "acosh_vjp", |d, x| {
                    if x <= 1.0 + eps {
                        0.0
                    } else {
                        d / math::sqrt(x * x - 1.0)
                    }
                })?)
            }
            Prim::Asin { guard } => {
                let eps = guard.unwrap_or(0.0);
                one(d.zip(x, "asin_vjp", |d, x| {
                    if math::abs(x) >= 1.0 - eps {
                        0.0
                    } else {
                        d / math::sqrt(1.0 - x * x)
                    }
                })?)
            }
            Prim::Acos { guard } => {
                let eps = guard.unwrap_or(0.0);
                one(d.zip(x, "acos_vjp", |d, x| {
                    if math::abs(x) >= 1.0 - eps {
                        0.0
                    } else {
                        -d / math::sqrt(1.0 - x * x)
                    }
                })?)
            }
            Prim::Relu => one(d.zip(x, "relu_vjp", |d, x| if x > 0.0 { d } else { 0.0 })?),
            Prim::Clamp { lo, hi } => {
                let (lo, hi) = (*lo, *hi);
                one(d.zip(x, "clamp_vjp", |d, x| if x >= lo && x <= hi { d } else { 0.0 })?)
            }
            Prim::MatMul => {
                let b = self.value(inputs[1]);
                Ok(vec![
                    Some(d.matmul(&b.transpose()?)?),
                    Some(x.transpose()?.matmul(d)?),
                ])
            }
            Prim::Transpose => one(d.transpose()?),
            Prim::Sum { axis } => match axis {
                None => one(Tensor::filled(x.shape().to_vec(), d.item()?)),
                Some(_) => one(d.broadcast_to(x.shape())?),
            },
            Prim::Mean { axis } => match axis {
                None => one(Tensor::filled(x.shape().to_vec(), d.item()? / x.len() as f64)),
                Some(ax) => {
                    let n = x.shape()[*ax] as f64;
                    one(d.map(|v| v / n).broadcast_to(x.shape())?)
                }
            },
            Prim::LogSumExp { axis } => {
                // d * softmax(x), with the softmax recovered from the saved
                // output: exp(x - lse).
                let w = match axis {
                    None => x.zip(y, "lse_vjp", |x, y| math::exp(x - y))?,
                    Some(_) => x.zip(y, "lse_vjp", |x, y| math::exp(x - y))?,
                };
                one(w.zip(d, "lse_vjp", |w, d| w * d)?)
            }
            Prim::L2Norm { axis } => {
                let ratio = match axis {
                    None => d.zip(y, "l2_vjp", |d, y| if y == 0.0 { 0.0 } else { d / y })?,
                    Some(_) => d.zip(y, "l2_vjp", |d, y| if y == 0.0 { 0.0 } else { d / y })?,
                };
                one(x.zip(&ratio, "l2_vjp", |x, r| x * r)?)
            }
            Prim::Broadcast { .. } => one(d.reduce_to(x.shape())?),
        }
    }
}

// ── convenience builders ────────────────────────────────────────────────

macro_rules! unary_method {
    ($(($name:ident, $prim:expr)),* $(,)?) => {
        impl Graph {
            $(
                pub fn $name(&mut self, x: Node) -> Result<Node> {
                    self.apply($prim, &[x])
                }
            )*
        }
    };
}

macro_rules! binary_method {
    ($(($name:ident, $prim:expr)),* $(,)?) => {
        impl Graph {
            $(
                pub fn $name(&mut self, a: Node, b: Node) -> Result<Node> {
                    self.apply($prim, &[a, b])
                }
            )*
        }
    };
}

unary_method!(
    (neg, Prim::Neg),
    (exp, Prim::Exp),
    (log, Prim::Log),
    (sqrt, Prim::Sqrt),
    (sinh, Prim::Sinh),
    (cosh, Prim::Cosh),
    (sinhc, Prim::Sinhc),
    (relu, Prim::Relu),
    (transpose, Prim::Transpose),
    (acosh, Prim::Acosh { guard: None }),
    (asin, Prim::Asin { guard: None }),
    (acos, Prim::Acos { guard: None }),
    (sum, Prim::Sum { axis: None }),
    (mean, Prim::Mean { axis: None }),
    (lse, Prim::LogSumExp { axis: None }),
    (l2norm, Prim::L2Norm { axis: None }),
);

binary_method!(
    (add, Prim::Add),
    (sub, Prim::Sub),
    (mul, Prim::Mul),
    (div, Prim::Div),
    (matmul, Prim::MatMul),
);

impl Graph {
    pub fn acosh_guarded(&mut self, x: Node, eps: f64) -> Result<Node> {
        self.apply(Prim::Acosh { guard: Some(eps) }, &[x])
    }

    pub fn asin_guarded(&mut self, x: Node, eps: f64) -> Result<Node> {
        self.apply(Prim::Asin { guard: Some(eps) }, &[x])
    }

    pub fn acos_guarded(&mut self, x: Node, eps: f64) -> Result<Node> {
        self.apply(Prim::Acos { guard: Some(eps) }, &[x])
    }

    pub fn clamp(&mut self, x: Node, lo: f64, hi: f64) -> Result<Node> {
        self.apply(Prim::Clamp { lo, hi }, &[x])
    }

    pub fn clamp_max(&mut self, x: Node, hi: f64) -> Result<Node> {
        self.apply(Prim::Clamp { lo: f64::NEG_INFINITY, hi }, &[x])
    }

    pub fn clamp_min(&mut self, x: Node, lo: f64) -> Result<Node> {
        self.apply(Prim::Clamp { lo, hi: f64::INFINITY }, &[x])
    }

    pub fn sum_axis(&mut self, x: Node, axis: usize) -> Result<Node> {
        self.apply(Prim::Sum { axis: Some(axis) }, &[x])
    }

    pub fn mean_axis(&mut self, x: Node, axis: usize) -> Result<Node> {
        self.apply(Prim::Mean { axis: Some(axis) }, &[x])
    }

    pub fn lse_axis(&mut self, x: Node, axis: usize) -> Result<Node> {
        self.apply(Prim::LogSumExp { axis: Some(axis) }, &[x])
    }

    pub fn l2norm_axis(&mut self, x: Node, axis: usize) -> Result<Node> {
        self.apply(Prim::L2Norm { axis: Some(axis) }, &[x])
    }

    pub fn broadcast(&mut self, x: Node, shape: &[usize]) -> Result<Node> {
        self.apply(Prim::Broadcast { shape: shape.to_vec() }, &[x])
    }

    /// x * k for a plain scalar k.
    pub fn scale(&mut self, x: Node, k: f64) -> Result<Node> {
        let k = self.scalar(k)?;
        self.mul(x, k)
    }

    /// x + k for a plain scalar k.
    pub fn shift(&mut self, x: Node, k: f64) -> Result<Node> {
        let k = self.scalar(k)?;
        self.add(x, k)
    }
}

// ── gradient checking ───────────────────────────────────────────────────

/// Maximum relative disagreement between analytic gradients and central
/// finite differences for a scalar-valued function of several tensors.
///
/// `build` must construct the same computation for any input values; it is
/// re-run on a fresh graph for every perturbed coordinate. Relative error
/// is |analytic − numeric| / max(1, |analytic|).
pub fn grad_check<F>(build: F, points: &[Tensor], step: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[Node]) -> Result<Node>,
{
    if step <= 0.0 {
        return Err(Error::invalid("grad_check: step must be positive"));
    }
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let nodes: Vec<Node> = values.iter().map(|t| g.leaf(t.clone())).collect();
        let loss = build(&mut g, &nodes)?;
        g.value(loss).item()
    };

    let mut g = Graph::new();
    let nodes: Vec<Node> = points.iter().map(|t| g.leaf(t.clone())).collect();
    let loss = build(&mut g, &nodes)?;
    if g.value(loss).len() != 1 {
        return Err(Error::InvalidShape {
            op: "grad_check",
            detail: format!("function must be scalar-valued, got {:?}", g.value(loss).shape()),
        });
    }
    let grads = g.backward(loss, &nodes)?;

    let mut worst = 0.0f64;
    for (i, point) in points.iter().enumerate() {
        let analytic = grads.get(nodes[i]).expect("wrt gradient present");
        for k in 0..point.len() {
            let mut plus = points.to_vec();
            plus[i].values_mut()[k] += step;
            let mut minus = points.to_vec();
            minus[i].values_mut()[k] -= step;
            let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * step);
            let a = analytic.values()[k];
            let rel = math::abs(a - numeric) / math::abs(a).max(1.0);
            if rel > worst {
                worst = rel;
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], vals: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), vals.to_vec()).unwrap()
    }

    #[test]
    fn forward_values_match_hand_examples() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(0.0).unwrap());
        let ex = g.exp(x).unwrap();
        assert_eq!(g.value(ex).item().unwrap(), 1.0);

        let one = g.leaf(Tensor::scalar(1.0).unwrap());
        let ac = g.acosh(one).unwrap();
        assert_eq!(g.value(ac).item().unwrap(), 0.0);

        let a = g.leaf(Tensor::filled(vec![2, 3], 1.0));
        let b = g.leaf(Tensor::filled(vec![3, 2], 1.0));
        let m = g.matmul(a, b).unwrap();
        assert_eq!(g.value(m).values(), &[3., 3., 3., 3.]);
    }

    #[test]
    fn acosh_derivative_matches_closed_form_and_fd() {
        // d/dx acosh(x) = 1/sqrt(x^2-1); at x=2 that is 1/sqrt(3).
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(2.0).unwrap());
        let y = g.acosh(x).unwrap();
        let grads = g.backward(y, &[x]).unwrap();
        let got = grads.get(x).unwrap().item().unwrap();
        assert!((got - 0.5773502691896258).abs() < 1e-15);

        let err = grad_check(
            |g, n| {
                let y = g.acosh(n[0])?;
                g.sum(y)
            },
            &[t(&[], &[2.0])],
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-8, "fd disagreement {err}");
    }

    #[test]
    fn lse_and_mean_spread_gradient_evenly() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[2], &[0.7, 0.7]));
        let y = g.lse(x).unwrap();
        let grads = g.backward(y, &[x]).unwrap();
        for &v in grads.get(x).unwrap().values() {
            assert!((v - 0.5).abs() < 1e-15);
        }

        let mut g = Graph::new();
        let x = g.leaf(t(&[2], &[3.0, 3.0]));
        let y = g.mean(x).unwrap();
        let grads = g.backward(y, &[x]).unwrap();
        assert_eq!(grads.get(x).unwrap().values(), &[0.5, 0.5]);
    }

    #[test]
    fn backward_is_linear_and_idempotent() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[3], &[0.3, -0.2, 1.1]));
        let sq = g.mul(x, x).unwrap();
        let loss = g.sum(sq).unwrap();
        let doubled = g.scale(loss, 2.0).unwrap();

        let g1 = g.backward(loss, &[x]).unwrap();
        let g2 = g.backward(doubled, &[x]).unwrap();
        for (a, b) in g1.get(x).unwrap().values().iter().zip(g2.get(x).unwrap().values()) {
            assert_eq!(2.0 * a, *b);
        }
        // Same call twice: bitwise identical.
        let g1b = g.backward(loss, &[x]).unwrap();
        assert_eq!(g1.get(x).unwrap(), g1b.get(x).unwrap());
    }

    #[test]
    fn unused_inputs_get_zero_gradients_and_constants_refuse() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(1.5).unwrap());
        let unused = g.leaf(t(&[2], &[1.0, 2.0]));
        let c = g.constant(Tensor::scalar(4.0).unwrap());
        let y = g.mul(x, c).unwrap();
        let grads = g.backward(y, &[x, unused]).unwrap();
        assert_eq!(grads.get(x).unwrap().item().unwrap(), 4.0);
        assert_eq!(grads.get(unused).unwrap().values(), &[0.0, 0.0]);
        assert!(matches!(g.backward(y, &[c]), Err(Error::Invalid { .. })));
    }

    #[test]
    fn gradient_of_interior_node_is_supported() {
        // loss = sum(mask * x); gradient wrt the mask node is x even though
        // the mask subgraph contains no differentiable leaves.
        let mut g = Graph::new();
        let x = g.leaf(t(&[2], &[2.0, 5.0]));
        let mask_raw = g.constant(t(&[2], &[0.5, 1.5]));
        let mask = g.relu(mask_raw).unwrap();
        let prod = g.mul(mask, x).unwrap();
        let loss = g.sum(prod).unwrap();
        let grads = g.backward(loss, &[mask]).unwrap();
        assert_eq!(grads.get(mask).unwrap().values(), &[2.0, 5.0]);
    }

    #[test]
    fn error_paths_surface_honestly() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(0.5).unwrap());
        assert!(matches!(g.acosh(x), Err(Error::Domain { .. })));
        let neg = g.leaf(Tensor::scalar(-1.0).unwrap());
        assert!(matches!(g.log(neg), Err(Error::Domain { .. })));
        assert!(matches!(g.sqrt(neg), Err(Error::Domain { .. })));
        let zero = g.leaf(Tensor::scalar(0.0).unwrap());
        assert!(matches!(g.div(x, zero), Err(Error::Domain { .. })));
        let big = g.leaf(Tensor::scalar(1000.0).unwrap());
        assert!(matches!(g.exp(big), Err(Error::NonFinite { .. })));

        let a = g.leaf(Tensor::zeros(vec![2, 3]));
        let b = g.leaf(Tensor::zeros(vec![2, 3]));
        assert!(matches!(g.matmul(a, b), Err(Error::ShapeMismatch { .. })));

        // Backward from a non-scalar.
        let v = g.leaf(t(&[2], &[1.0, 2.0]));
        assert!(matches!(g.backward(v, &[v]), Err(Error::InvalidShape { .. })));
    }

    #[test]
    fn guarded_primitives_clamp_forward_and_flatten_gradient() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(0.2).unwrap());
        let y = g.acosh_guarded(x, 1e-8).unwrap();
        assert_eq!(g.value(y).item().unwrap(), 0.0);
        let grads = g.backward(y, &[x]).unwrap();
        assert_eq!(grads.get(x).unwrap().item().unwrap(), 0.0);

        let over = g.leaf(Tensor::scalar(3.5).unwrap());
        let z = g.asin_guarded(over, 1e-8).unwrap();
        assert!((g.value(z).item().unwrap() - core::f64::consts::FRAC_PI_2).abs() < 1e-15);
        let grads = g.backward(z, &[over]).unwrap();
        assert_eq!(grads.get(over).unwrap().item().unwrap(), 0.0);
    }

    /// Draw a tensor with entries in [lo, hi].
    fn rand_t(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
        let n: usize = shape.iter().product();
        let vals: Vec<f64> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
        Tensor::new(shape.to_vec(), vals).unwrap()
    }

    /// Every primitive's backward agrees with central differences at random
    /// in-domain points. Loss is sum(op(x) * w) with a fixed random
    /// cotangent w so the whole Jacobian is exercised.
    #[test]
    fn every_primitive_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        // (primitive, sampling interval) — intervals keep points in-domain
        // and away from kinks (clamp edges, relu corner, guard zones).
        let unary: Vec<(Prim, f64, f64)> = vec![
            (Prim::Neg, -2.0, 2.0),
            (Prim::Exp, -2.0, 2.0),
            (Prim::Log, 0.3, 3.0),
            (Prim::Sqrt, 0.3, 3.0),
            (Prim::Sinh, -2.0, 2.0),
            (Prim::Cosh, -2.0, 2.0),
            (Prim::Sinhc, -2.0, 2.0),
            (Prim::Acosh { guard: None }, 1.2, 3.0),
            (Prim::Acosh { guard: Some(1e-8) }, 1.2, 3.0),
            (Prim::Asin { guard: None }, -0.8, 0.8),
            (Prim::Asin { guard: Some(1e-8) }, -0.8, 0.8),
            (Prim::Acos { guard: None }, -0.8, 0.8),
            (Prim::Acos { guard: Some(1e-8) }, -0.8, 0.8),
            (Prim::Relu, 0.2, 2.0),
            (Prim::Clamp { lo: -1.0, hi: 1.0 }, -0.8, 0.8),
            (Prim::Transpose, -2.0, 2.0),
            (Prim::Sum { axis: None }, -2.0, 2.0),
            (Prim::Sum { axis: Some(0) }, -2.0, 2.0),
            (Prim::Sum { axis: Some(1) }, -2.0, 2.0),
            (Prim::Mean { axis: None }, -2.0, 2.0),
            (Prim::Mean { axis: Some(1) }, -2.0, 2.0),
            (Prim::LogSumExp { axis: None }, -2.0, 2.0),
            (Prim::LogSumExp { axis: Some(0) }, -2.0, 2.0),
            (Prim::LogSumExp { axis: Some(1) }, -2.0, 2.0),
            (Prim::L2Norm { axis: None }, 0.3, 2.0),
            (Prim::L2Norm { axis: Some(1) }, 0.3, 2.0),
            (Prim::Broadcast { shape: vec![4, 3] }, -2.0, 2.0),
        ];
        for (prim, lo, hi) in unary {
            let in_shape: &[usize] = match prim {
                Prim::Broadcast { .. } => &[1, 3],
                _ => &[2, 3],
            };
            for trial in 0..8 {
                let x = rand_t(&mut rng, in_shape, lo, hi);
                let p = prim.clone();
                // Cotangent drawn outside the closure so both the analytic
                // and the perturbed evaluations see the same weights.
                let w_holder = core::cell::RefCell::new(None::<Tensor>);
                let err = grad_check(
                    |g, n| {
                        let y = g.apply(p.clone(), &[n[0]])?;
                        let mut slot = w_holder.borrow_mut();
                        let w = slot.get_or_insert_with(|| {
                            Tensor::new(
                                g.value(y).shape().to_vec(),
                                (0..g.value(y).len()).map(|i| 0.3 + 0.1 * i as f64).collect(),
                            )
                            .unwrap()
                        });
                        let wn = g.constant(w.clone());
                        let prod = g.mul(y, wn)?;
                        g.sum(prod)
                    },
                    &[x],
                    1e-6,
                )
                .unwrap();
                assert!(err < 1e-5, "{} trial {trial}: fd error {err}", prim.name());
            }
        }

        let binary: Vec<(Prim, f64, f64)> = vec![
            (Prim::Add, -2.0, 2.0),
            (Prim::Sub, -2.0, 2.0),
            (Prim::Mul, -2.0, 2.0),
            (Prim::Div, 0.4, 2.0),
            (Prim::MatMul, -2.0, 2.0),
        ];
        for (prim, lo, hi) in binary {
            for trial in 0..8 {
                // Exercise broadcasting for the elementwise ops.
                let shapes: (&[usize], &[usize]) = match (&prim, trial % 3) {
                    (Prim::MatMul, _) => (&[2, 3], &[3, 2]),
                    (_, 0) => (&[2, 3], &[2, 3]),
                    (_, 1) => (&[2, 3], &[1, 3]),
                    (_, _) => (&[2, 3], &[2, 1]),
                };
                let a = rand_t(&mut rng, shapes.0, lo, hi);
                let b = rand_t(&mut rng, shapes.1, lo, hi);
                let p = prim.clone();
                let err = grad_check(
                    |g, n| {
                        let y = g.apply(p.clone(), &[n[0], n[1]])?;
                        let sq = g.mul(y, y)?;
                        g.sum(sq)
                    },
                    &[a, b],
                    1e-6,
                )
                .unwrap();
                assert!(err < 1e-5, "{} trial {trial}: fd error {err}", prim.name());
            }
        }
    }

    #[test]
    fn graph_rebuild_is_bitwise_deterministic() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            let mut g = Graph::new();
            let x = g.leaf(rand_t(&mut rng, &[3, 4], -1.0, 1.0));
            let w = g.leaf(rand_t(&mut rng, &[4, 2], -1.0, 1.0));
            let h = g.matmul(x, w).unwrap();
            let e = g.exp(h).unwrap();
            let l = g.lse_axis(e, 1).unwrap();
            let loss = g.sum(l).unwrap();
            let grads = g.backward(loss, &[x, w]).unwrap();
            (
                g.value(loss).item().unwrap(),
                grads.get(x).unwrap().clone(),
                grads.get(w).unwrap().clone(),
            )
        };
        let (l1, gx1, gw1) = run();
        let (l2, gx2, gw2) = run();
        assert_eq!(l1.to_bits(), l2.to_bits());
        assert_eq!(gx1, gx2);
        assert_eq!(gw1, gw2);
    }
}
