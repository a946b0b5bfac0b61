use super::check_axis;
use crate::element::Element;
use crate::error::{shape_err, Result};
use crate::tape::{Op, Tape, Var};
use crate::tensor::{split_axis, Tensor};

impl<F: Element> Tape<F> {
    /// Sum of all entries, as a scalar.
    pub fn sum(&self, x: Var) -> Result<Var> {
        let (xi, xt) = self.get(x)?;
        let s: F = xt.data().iter().copied().sum();
        Ok(self.push(Tensor::scalar(s), Op::Sum(xi), &[xi]))
    }

    /// Mean of all entries, as a scalar.
    pub fn mean(&self, x: Var) -> Result<Var> {
        let n = self.get(x)?.1.numel();
        let s = self.sum(x)?;
        self.scale(s, 1.0 / n as f64)
    }

    pub fn sum_axis(&self, x: Var, axis: usize) -> Result<Var> {
        self.reduce_axis("sum_axis", x, axis, false)
    }

    pub fn mean_axis(&self, x: Var, axis: usize) -> Result<Var> {
        self.reduce_axis("mean_axis", x, axis, true)
    }

    fn reduce_axis(&self, op: &'static str, x: Var, axis: usize, mean: bool) -> Result<Var> {
        let (xi, xt) = self.get(x)?;
        check_axis(op, axis, xt.rank())?;
        let (outer, dim, inner) = split_axis(xt.shape(), axis);
        let scale = if mean { F::one() / F::of_usize(dim) } else { F::one() };
        let d = xt.data();
        let mut out = vec![F::zero(); outer * inner];
        for o in 0..outer {
            for k in 0..dim {
                let base = (o * dim + k) * inner;
                for i in 0..inner {
                    out[o * inner + i] += d[base + i];
                }
            }
        }
        out.iter_mut().for_each(|v| *v *= scale);
        let shape = reduced_shape(xt.shape(), axis);
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::SumAxis {
                x: xi,
                outer,
                dim,
                inner,
                scale,
            },
            &[xi],
        ))
    }

    /// Maximum along `axis` (axis removed). Ties route the gradient to the first maximum.
    pub fn max_axis(&self, x: Var, axis: usize) -> Result<Var> {
        let (xi, xt) = self.get(x)?;
        check_axis("max_axis", axis, xt.rank())?;
        let dim = xt.shape()[axis];
        let (out, source) = pool_along(&xt, axis, dim, dim);
        Ok(self.push(
            Tensor::from_parts(reduced_shape(xt.shape(), axis), out),
            Op::Select { x: xi, source },
            &[xi],
        ))
    }

    /// Windowed max along `axis`. A trailing partial window is pooled as-is,
    /// so the output extent is `ceil((len - window) / stride) + 1`.
    pub fn max_pool(&self, x: Var, axis: usize, window: usize, stride: usize) -> Result<Var> {
        let (xi, xt) = self.get(x)?;
        check_axis("max_pool", axis, xt.rank())?;
        if window == 0 || stride == 0 {
            return Err(shape_err("max_pool", "window and stride must be positive"));
        }
        let (out, source) = pool_along(&xt, axis, window, stride);
        let mut shape = xt.shape().to_vec();
        shape[axis] = pooled_len(shape[axis], window, stride);
        Ok(self.push(Tensor::from_parts(shape, out), Op::Select { x: xi, source }, &[xi]))
    }
}

fn reduced_shape(shape: &[usize], axis: usize) -> Vec<usize> {
    shape
        .iter()
        .enumerate()
        .filter(|&(ax, _)| ax != axis)
        .map(|(_, &d)| d)
        .collect()
}

fn pooled_len(len: usize, window: usize, stride: usize) -> usize {
    if len <= window {
        1
    } else {
        (len - window).div_ceil(stride) + 1
    }
}

fn pool_along<F: Element>(xt: &Tensor<F>, axis: usize, window: usize, stride: usize) -> (Vec<F>, Vec<usize>) {
    let (outer, dim, inner) = split_axis(xt.shape(), axis);
    let windows = pooled_len(dim, window, stride);
    let d = xt.data();
    let mut out = Vec::with_capacity(outer * windows * inner);
    let mut source = Vec::with_capacity(outer * windows * inner);
    for o in 0..outer {
        for w in 0..windows {
            let lo = w * stride;
            let hi = (lo + window).min(dim);
            for i in 0..inner {
                let mut best = (o * dim + lo) * inner + i;
                for k in lo + 1..hi {
                    let at = (o * dim + k) * inner + i;
                    if d[at] > d[best] {
                        best = at;
                    }
                }
                out.push(d[best]);
                source.push(best);
            }
        }
    }
    (out, source)
}
