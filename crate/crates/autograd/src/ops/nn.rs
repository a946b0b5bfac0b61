use super::check_axis;
use crate::element::Element;
use crate::error::{invalid, shape_err, Result};
use crate::rng::DropoutKey;
use crate::tape::{Op, Tape, Var};
use crate::tensor::{split_axis, Tensor};

/// Soft targets may deviate from a unit row sum by at most this much.
pub const TARGET_SUM_TOLERANCE: f64 = 1e-6;

impl<F: Element> Tape<F> {
    pub fn softmax(&self, x: Var, axis: usize) -> Result<Var> {
        let (xi, xt) = self.get(x)?;
        check_axis("softmax", axis, xt.rank())?;
        let (outer, dim, inner) = split_axis(xt.shape(), axis);
        let out = along_axis(xt.data(), outer, dim, inner, |col| {
            let max = col.iter().copied().fold(F::neg_infinity(), F::max);
            let mut z = F::zero();
            for v in col.iter_mut() {
                *v = (*v - max).exp();
                z += *v;
            }
            col.iter_mut().for_each(|v| *v = *v / z);
        });
        Ok(self.push(
            Tensor::from_parts(xt.shape().to_vec(), out),
            Op::Softmax { x: xi, outer, dim, inner },
            &[xi],
        ))
    }

    pub fn log_softmax(&self, x: Var, axis: usize) -> Result<Var> {
        let (xi, xt) = self.get(x)?;
        check_axis("log_softmax", axis, xt.rank())?;
        let (outer, dim, inner) = split_axis(xt.shape(), axis);
        let out = along_axis(xt.data(), outer, dim, inner, |col| {
            let max = col.iter().copied().fold(F::neg_infinity(), F::max);
            let lse = max + col.iter().map(|&v| (v - max).exp()).sum::<F>().ln();
            col.iter_mut().for_each(|v| *v = *v - lse);
        });
        Ok(self.push(
            Tensor::from_parts(xt.shape().to_vec(), out),
            Op::LogSoftmax { x: xi, outer, dim, inner },
            &[xi],
        ))
    }

    /// Normalizes over the last axis, then applies `gamma * x + beta`.
    pub fn layer_norm(&self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (xi, xt) = self.get(x)?;
        let (gi, gt) = self.get(gamma)?;
        let (bi, bt) = self.get(beta)?;
        let cols = *xt.shape().last().ok_or_else(|| shape_err("layer_norm", "scalar input"))?;
        if gt.shape() != [cols] || bt.shape() != [cols] {
            return Err(shape_err(
                "layer_norm",
                format!("affine {:?}/{:?} vs last axis {cols}", gt.shape(), bt.shape()),
            ));
        }
        let eps = F::of_f64(eps);
        let n = F::of_usize(cols);
        let rows = xt.numel() / cols;
        let mut normed = Vec::with_capacity(xt.numel());
        let mut rstd = Vec::with_capacity(rows);
        for row in xt.data().chunks_exact(cols) {
            let mean = row.iter().copied().sum::<F>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / n;
            let r = (var + eps).sqrt().recip();
            rstd.push(r);
            normed.extend(row.iter().map(|&v| (v - mean) * r));
        }
        let (gd, bd) = (gt.data(), bt.data());
        let out = normed
            .chunks_exact(cols)
            .flat_map(|row| row.iter().zip(gd).zip(bd).map(|((&v, &g), &b)| v * g + b))
            .collect();
        Ok(self.push(
            Tensor::from_parts(xt.shape().to_vec(), out),
            Op::LayerNorm {
                x: xi,
                gamma: gi,
                beta: bi,
                cols,
                normed,
                rstd,
            },
            &[xi, gi, bi],
        ))
    }

    /// Inverted dropout. Identity when `train` is false or `p == 0`.
    pub fn dropout(&self, x: Var, p: f64, key: DropoutKey, train: bool) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(invalid("dropout", format!("rate {p} outside [0, 1)")));
        }
        let (xi, xt) = self.get(x)?;
        if !train || p == 0.0 {
            return Ok(x);
        }
        let keep = F::of_f64(1.0 / (1.0 - p));
        let mask: Vec<F> = key
            .uniforms(xt.numel())
            .map(|u| if u >= p { keep } else { F::zero() })
            .collect();
        let out = xt.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        Ok(self.push(
            Tensor::from_parts(xt.shape().to_vec(), out),
            Op::Dropout { x: xi, mask },
            &[xi],
        ))
    }

    /// Mean over rows of `-sum_c target[r, c] * log softmax(logits[r])[c]`.
    ///
    /// `logits` is `[.., classes]`; `target` has the same shape and each row is
    /// a probability distribution.
    pub fn cross_entropy(&self, logits: Var, target: &Tensor<F>) -> Result<Var> {
        let (li, lt) = self.get(logits)?;
        if lt.shape() != target.shape() || lt.rank() == 0 {
            return Err(shape_err(
                "cross_entropy",
                format!("logits {:?} vs target {:?}", lt.shape(), target.shape()),
            ));
        }
        let cols = *lt.shape().last().unwrap_or(&1);
        let rows = lt.numel() / cols;
        for (r, row) in target.data().chunks_exact(cols).enumerate() {
            let s: F = row.iter().copied().sum();
            if row.iter().any(|&v| v < F::zero()) || (s.as_f64() - 1.0).abs() > TARGET_SUM_TOLERANCE {
                return Err(invalid(
                    "cross_entropy",
                    format!("target row {r} is not a distribution (sum {s})"),
                ));
            }
        }
        let mut total = F::zero();
        for (row, t) in lt.data().chunks_exact(cols).zip(target.data().chunks_exact(cols)) {
            let max = row.iter().copied().fold(F::neg_infinity(), F::max);
            let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<F>().ln();
            for (&v, &tv) in row.iter().zip(t) {
                if tv != F::zero() {
                    total -= tv * (v - lse);
                }
            }
        }
        let loss = total / F::of_usize(rows);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits: li,
                target: target.clone(),
                rows,
                cols,
            },
            &[li],
        ))
    }
}

/// Copies `data` and applies `f` to every 1-D column along the split axis.
fn along_axis<F: Element>(data: &[F], outer: usize, dim: usize, inner: usize, f: impl Fn(&mut [F])) -> Vec<F> {
    let mut out = data.to_vec();
    if inner == 1 {
        out.chunks_exact_mut(dim).for_each(f);
        return out;
    }
    let mut col = vec![F::zero(); dim];
    for o in 0..outer {
        for i in 0..inner {
            for (k, c) in col.iter_mut().enumerate() {
                *c = data[(o * dim + k) * inner + i];
            }
            f(&mut col);
            for (k, &c) in col.iter().enumerate() {
                out[(o * dim + k) * inner + i] = c;
            }
        }
    }
    out
}
