use crate::element::Element;
use crate::error::{shape_err, Result};
use crate::tape::{Op, Tape, Var};
use crate::tensor::Tensor;

impl<F: Element> Tape<F> {
    /// `a @ b` over the last two axes of `a`.
    ///
    /// `b` is either a `[k, n]` matrix shared by every leading index of `a`,
    /// or has the same leading axes as `a` (batched product).
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a @ b^T` over the last two axes; `b` is `[n, k]` or batched `[.., n, k]`.
    pub fn matmul_nt(&self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let op = if trans_b { "matmul_nt" } else { "matmul" };
        let (ai, at) = self.get(a)?;
        let (bi, bt) = self.get(b)?;
        let (ash, bsh) = (at.shape(), bt.shape());
        if ash.len() < 2 || bsh.len() < 2 {
            return Err(shape_err(op, format!("operands need rank >= 2, got {ash:?} and {bsh:?}")));
        }
        let (m, k) = (ash[ash.len() - 2], ash[ash.len() - 1]);
        let (bk, n) = if trans_b {
            (bsh[bsh.len() - 1], bsh[bsh.len() - 2])
        } else {
            (bsh[bsh.len() - 2], bsh[bsh.len() - 1])
        };
        if bk != k {
            return Err(shape_err(op, format!("inner dimensions differ: {ash:?} vs {bsh:?}")));
        }
        let lead = &ash[..ash.len() - 2];
        let batch: usize = lead.iter().product();
        let shared_rhs = bsh.len() == 2;
        if !shared_rhs && &bsh[..bsh.len() - 2] != lead {
            return Err(shape_err(op, format!("batch axes differ: {ash:?} vs {bsh:?}")));
        }
        let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
        let mut out = vec![F::zero(); batch * m * n];
        let (ad, bd) = (at.data(), bt.data());
        if shared_rhs {
            F::gemm(batch * m, k, n, F::one(), ad, k as isize, 1, bd, rsb, csb, F::zero(), &mut out, n as isize, 1);
        } else {
            for r in 0..batch {
                F::gemm(
                    m,
                    k,
                    n,
                    F::one(),
                    &ad[r * m * k..],
                    k as isize,
                    1,
                    &bd[r * k * n..],
                    rsb,
                    csb,
                    F::zero(),
                    &mut out[r * m * n..],
                    n as isize,
                    1,
                );
            }
        }
        let mut shape = lead.to_vec();
        shape.extend([m, n]);
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::Matmul {
                a: ai,
                b: bi,
                batch,
                m,
                k,
                n,
                shared_rhs,
                trans_b,
            },
            &[ai, bi],
        ))
    }
}
