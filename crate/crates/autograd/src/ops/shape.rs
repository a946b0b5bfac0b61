use super::check_axis;
use crate::element::Element;
use crate::error::{shape_err, AutogradError, Result};
use crate::tape::{Op, Tape, Var};
use crate::tensor::{numel, split_axis, Tensor};

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

impl<F: Element> Tape<F> {
    fn select(&self, xi: usize, xt: &Tensor<F>, shape: Vec<usize>, source: Vec<usize>) -> Var {
        let data = source.iter().map(|&s| xt.data()[s]).collect();
        self.push(Tensor::from_parts(shape, data), Op::Select { x: xi, source }, &[xi])
    }

    pub fn reshape(&self, x: Var, shape: &[usize]) -> Result<Var> {
        let (xi, xt) = self.get(x)?;
        let v = xt.reshape(shape)?;
        Ok(self.push(v, Op::Reshape(xi), &[xi]))
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&self, x: Var, perm: &[usize]) -> Result<Var> {
        let (xi, xt) = self.get(x)?;
        let rank = xt.rank();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
            return Err(shape_err("permute", format!("{perm:?} is not a permutation of rank {rank}")));
        }
        let in_strides = strides(xt.shape());
        let shape: Vec<usize> = perm.iter().map(|&p| xt.shape()[p]).collect();
        let total = xt.numel();
        let mut source = Vec::with_capacity(total);
        let mut idx = vec![0usize; rank];
        for _ in 0..total {
            source.push(idx.iter().zip(perm).map(|(&i, &p)| i * in_strides[p]).sum());
            for ax in (0..rank).rev() {
                idx[ax] += 1;
                if idx[ax] < shape[ax] {
                    break;
                }
                idx[ax] = 0;
            }
        }
        Ok(self.select(xi, &xt, shape, source))
    }

    pub fn concat(&self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = xs
            .first()
            .ok_or_else(|| shape_err("concat", "no inputs"))
            .and_then(|&v| self.shape(v))?;
        check_axis("concat", axis, first.len())?;
        let mut ids = Vec::with_capacity(xs.len());
        let mut vals = Vec::with_capacity(xs.len());
        for &x in xs {
            let (i, t) = self.get(x)?;
            let sh = t.shape();
            let compatible = sh.len() == first.len()
                && sh.iter().zip(&first).enumerate().all(|(ax, (a, b))| ax == axis || a == b);
            if !compatible {
                return Err(shape_err("concat", format!("{sh:?} vs {first:?} along axis {axis}")));
            }
            ids.push(i);
            vals.push(t);
        }
        let (outer, _, inner) = split_axis(&first, axis);
        let dims: Vec<usize> = vals.iter().map(|t| t.shape()[axis]).collect();
        let total: usize = dims.iter().sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (t, &d) in vals.iter().zip(&dims) {
                data.extend_from_slice(&t.data()[o * d * inner..(o + 1) * d * inner]);
            }
        }
        let mut shape = first.clone();
        shape[axis] = total;
        Ok(self.push(
            Tensor::from_parts(shape, data),
            Op::Concat {
                xs: ids.clone(),
                outer,
                dims,
                inner,
            },
            &ids,
        ))
    }

    /// `len` consecutive entries along `axis`, starting at `start`.
    pub fn slice(&self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let (xi, xt) = self.get(x)?;
        check_axis("slice", axis, xt.rank())?;
        let (outer, dim, inner) = split_axis(xt.shape(), axis);
        if len == 0 || start + len > dim {
            return Err(AutogradError::Index {
                op: "slice",
                index: start + len,
                extent: dim,
            });
        }
        let mut source = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * dim + start) * inner;
            source.extend(base..base + len * inner);
        }
        let mut shape = xt.shape().to_vec();
        shape[axis] = len;
        Ok(self.select(xi, &xt, shape, source))
    }

    /// Embedding lookup: rows of a `[rows, cols]` table.
    pub fn gather(&self, table: Var, indices: &[usize]) -> Result<Var> {
        let (ti, tt) = self.get(table)?;
        if tt.rank() != 2 {
            return Err(shape_err("gather", format!("table must be rank 2, got {:?}", tt.shape())));
        }
        let (rows, cols) = (tt.shape()[0], tt.shape()[1]);
        if indices.is_empty() {
            return Err(shape_err("gather", "no indices"));
        }
        let mut source = Vec::with_capacity(indices.len() * cols);
        for &r in indices {
            if r >= rows {
                return Err(AutogradError::Index {
                    op: "gather",
                    index: r,
                    extent: rows,
                });
            }
            source.extend(r * cols..(r + 1) * cols);
        }
        Ok(self.select(ti, &tt, vec![indices.len(), cols], source))
    }

    /// Repeats a size-1 axis `times` times.
    pub fn repeat(&self, x: Var, axis: usize, times: usize) -> Result<Var> {
        let (xi, xt) = self.get(x)?;
        check_axis("repeat", axis, xt.rank())?;
        if xt.shape()[axis] != 1 || times == 0 {
            return Err(shape_err(
                "repeat",
                format!("axis {axis} of {:?} must have extent 1", xt.shape()),
            ));
        }
        let (outer, _, inner) = split_axis(xt.shape(), axis);
        let mut source = Vec::with_capacity(outer * times * inner);
        for o in 0..outer {
            for _ in 0..times {
                source.extend(o * inner..(o + 1) * inner);
            }
        }
        let mut shape = xt.shape().to_vec();
        shape[axis] = times;
        debug_assert_eq!(numel(&shape), source.len());
        Ok(self.select(xi, &xt, shape, source))
    }
}
