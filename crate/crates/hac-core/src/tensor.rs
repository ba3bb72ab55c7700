//! Dense row-major `f64` tensors with numpy-style broadcasting.
//!
//! Rank 0 (scalar), 1, and 2 are what the rest of the crate uses; the
//! broadcasting and reduction helpers are written for arbitrary rank anyway
//! because the general code is no longer than special cases.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Row-major strides; dimensions of extent 1 get stride 0 so the same
/// machinery walks broadcast operands.
fn broadcast_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![0usize; shape.len()];
    let mut acc = 1;
    for (i, &dim) in shape.iter().enumerate().rev() {
        strides[i] = if dim == 1 { 0 } else { acc };
        acc *= dim;
    }
    strides
}

/// Combined shape two operands broadcast to, or a shape-mismatch error.
pub fn broadcast_shapes(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0usize; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = if da == db {
            da
        } else if da == 1 {
            db
        } else if db == 1 {
            da
        } else {
            return Err(Error::ShapeMismatch {
                op,
                lhs: a.to_vec(),
                rhs: b.to_vec(),
            });
        };
    }
    Ok(out)
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if numel(&shape) != values.len() {
            return Err(Error::InvalidShape {
                op: "tensor",
                detail: format!("shape {shape:?} needs {} values, got {}", numel(&shape), values.len()),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "tensor" });
        }
        Ok(Tensor { shape, values })
    }

    pub fn scalar(v: f64) -> Result<Self> {
        Tensor::new(vec![], vec![v])
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = numel(&shape);
        Tensor {
            shape,
            values: vec![0.0; n],
        }
    }

    pub fn filled(shape: Vec<usize>, v: f64) -> Self {
        let n = numel(&shape);
        Tensor {
            shape,
            values: vec![v; n],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyInput { op: "from_rows" });
        }
        let cols = rows[0].len();
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidShape {
                op: "from_rows",
                detail: format!("ragged rows (first has {cols} columns)"),
            });
        }
        let mut values = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            values.extend_from_slice(r);
        }
        Tensor::new(vec![rows.len(), cols], values)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// The single value of a scalar (or any one-element) tensor.
    pub fn item(&self) -> Result<f64> {
        if self.values.len() == 1 {
            Ok(self.values[0])
        } else {
            Err(Error::InvalidShape {
                op: "item",
                detail: format!("expected one element, shape is {:?}", self.shape),
            })
        }
    }

    /// Rank-2 row view.
    pub fn row(&self, r: usize) -> &[f64] {
        let cols = self.shape[1];
        &self.values[r * cols..(r + 1) * cols]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise combine with broadcasting.
    pub fn zip(&self, other: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape == other.shape {
            let values = self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect();
            return Ok(Tensor {
                shape: self.shape.clone(),
                values,
            });
        }
        let out_shape = broadcast_shapes(op, &self.shape, &other.shape)?;
        let a = self.padded_strides(out_shape.len());
        let b = other.padded_strides(out_shape.len());
        let n = numel(&out_shape);
        let mut values = Vec::with_capacity(n);
        let mut idx = vec![0usize; out_shape.len()];
        for _ in 0..n {
            let (mut ia, mut ib) = (0usize, 0usize);
            for (k, &i) in idx.iter().enumerate() {
                ia += i * a[k];
                ib += i * b[k];
            }
            values.push(f(self.values[ia], other.values[ib]));
            for k in (0..out_shape.len()).rev() {
                idx[k] += 1;
                if idx[k] < out_shape[k] {
                    break;
                }
                idx[k] = 0;
            }
        }
        Ok(Tensor {
            shape: out_shape,
            values,
        })
    }

    fn padded_strides(&self, rank: usize) -> Vec<usize> {
        let mut shape = vec![1usize; rank - self.shape.len()];
        shape.extend_from_slice(&self.shape);
        broadcast_strides(&shape)
    }

    /// Materialize this tensor at a broadcast target shape.
    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Tensor> {
        let target = broadcast_shapes("broadcast", &self.shape, shape)?;
        if target != shape {
            return Err(Error::ShapeMismatch {
                op: "broadcast",
                lhs: self.shape.clone(),
                rhs: shape.to_vec(),
            });
        }
        Tensor::zeros(shape.to_vec()).zip(self, "broadcast", |_, v| v)
    }

    /// Sum this tensor down to `target` shape (inverse of broadcasting);
    /// used by gradient accumulation.
    pub fn reduce_to(&self, target: &[usize]) -> Result<Tensor> {
        if self.shape == target {
            return Ok(self.clone());
        }
        // Validate that target broadcasts to self.shape.
        let combined = broadcast_shapes("reduce_to", target, &self.shape)?;
        if combined != self.shape {
            return Err(Error::ShapeMismatch {
                op: "reduce_to",
                lhs: self.shape.clone(),
                rhs: target.to_vec(),
            });
        }
        let rank = self.shape.len();
        let mut padded = vec![1usize; rank - target.len()];
        padded.extend_from_slice(target);
        let tstrides = broadcast_strides(&padded);
        let mut out = vec![0.0; numel(target)];
        let mut idx = vec![0usize; rank];
        for &v in &self.values {
            let mut it = 0usize;
            for (k, &i) in idx.iter().enumerate() {
                it += i * tstrides[k];
            }
            out[it] += v;
            for k in (0..rank).rev() {
                idx[k] += 1;
                if idx[k] < self.shape[k] {
                    break;
                }
                idx[k] = 0;
            }
        }
        Ok(Tensor {
            shape: target.to_vec(),
            values: out,
        })
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.rank() != 2 || other.rank() != 2 || self.shape[1] != other.shape[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        let (m, k, n) = (self.shape[0], self.shape[1], other.shape[1]);
        let mut values = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let a = self.values[i * k + p];
                if a == 0.0 {
                    continue;
                }
                let brow = &other.values[p * n..(p + 1) * n];
                let orow = &mut values[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] += a * brow[j];
                }
            }
        }
        Ok(Tensor {
            shape: vec![m, n],
            values,
        })
    }

    pub fn transpose(&self) -> Result<Tensor> {
        if self.rank() != 2 {
            return Err(Error::InvalidShape {
                op: "transpose",
                detail: format!("expected rank 2, got {:?}", self.shape),
            });
        }
        let (r, c) = (self.shape[0], self.shape[1]);
        let mut values = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                values[j * r + i] = self.values[i * c + j];
            }
        }
        Ok(Tensor {
            shape: vec![c, r],
            values,
        })
    }

    fn check_axis(&self, op: &'static str, axis: usize) -> Result<()> {
        if self.rank() != 2 || axis > 1 {
            Err(Error::InvalidShape {
                op,
                detail: format!("axis reductions need rank 2 and axis 0/1, got shape {:?} axis {axis}", self.shape),
            })
        } else {
            Ok(())
        }
    }

    /// Reduce one axis of a rank-2 tensor, keeping the axis as extent 1.
    fn reduce_axis(&self, op: &'static str, axis: usize, f: impl Fn(&[f64]) -> f64) -> Result<Tensor> {
        self.check_axis(op, axis)?;
        let (r, c) = (self.shape[0], self.shape[1]);
        if axis == 1 {
            let values = (0..r).map(|i| f(self.row(i))).collect();
            Tensor::new(vec![r, 1], values)
        } else {
            let mut values = Vec::with_capacity(c);
            let mut col = vec![0.0; r];
            for j in 0..c {
                for i in 0..r {
                    col[i] = self.values[i * c + j];
                }
                values.push(f(&col));
            }
            Tensor::new(vec![1, c], values)
        }
    }

    pub fn sum_all(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn sum_axis(&self, axis: usize) -> Result<Tensor> {
        self.reduce_axis("sum", axis, |s| s.iter().sum())
    }

    pub fn mean_axis(&self, axis: usize) -> Result<Tensor> {
        self.reduce_axis("mean", axis, |s| s.iter().sum::<f64>() / s.len() as f64)
    }

    pub fn lse_axis(&self, axis: usize) -> Result<Tensor> {
        self.reduce_axis("log_sum_exp", axis, |s| lse_slice(s))
    }

    pub fn l2_axis(&self, axis: usize) -> Result<Tensor> {
        self.reduce_axis("l2_norm", axis, |s| l2_slice(s))
    }
}

/// Max-stabilized log(Σ exp(xᵢ)).
pub fn lse_slice(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = xs.iter().map(|&x| math::exp(x - m)).sum();
    m + math::ln(s)
}

pub fn l2_slice(xs: &[f64]) -> f64 {
    math::sqrt(xs.iter().map(|&x| x * x).sum())
}
