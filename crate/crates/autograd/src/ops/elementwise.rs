use crate::backward::{gelu, sigmoid};
use crate::element::Element;
use crate::error::{shape_err, Result};
use crate::tape::{Op, Tape, Var};
use crate::tensor::Tensor;

impl<F: Element> Tape<F> {
    fn binary(&self, op: &'static str, a: Var, b: Var, f: impl Fn(F, F) -> F) -> Result<(usize, usize, Tensor<F>)> {
        let (ai, at) = self.get(a)?;
        let (bi, bt) = self.get(b)?;
        if at.shape() != bt.shape() {
            return Err(shape_err(op, format!("{:?} vs {:?}", at.shape(), bt.shape())));
        }
        let data = at.data().iter().zip(bt.data()).map(|(&x, &y)| f(x, y)).collect();
        Ok((ai, bi, Tensor::from_parts(at.shape().to_vec(), data)))
    }

    fn unary(&self, x: Var, f: impl Fn(F) -> F, op: impl FnOnce(usize) -> Op<F>) -> Result<Var> {
        let (xi, xt) = self.get(x)?;
        Ok(self.push(xt.map(f), op(xi), &[xi]))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi, v) = self.binary("add", a, b, |x, y| x + y)?;
        Ok(self.push(v, Op::Add(ai, bi), &[ai, bi]))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi, v) = self.binary("sub", a, b, |x, y| x - y)?;
        Ok(self.push(v, Op::Sub(ai, bi), &[ai, bi]))
    }

    /// Elementwise product.
    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi, v) = self.binary("mul", a, b, |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(ai, bi), &[ai, bi]))
    }

    /// Adds a vector along the last axis. The only broadcasting form supported.
    pub fn add_bias(&self, x: Var, bias: Var) -> Result<Var> {
        let (xi, xt) = self.get(x)?;
        let (bi, bt) = self.get(bias)?;
        let cols = *xt.shape().last().unwrap_or(&1);
        if bt.rank() != 1 || bt.numel() != cols || xt.rank() == 0 {
            return Err(shape_err(
                "add_bias",
                format!("bias {:?} does not match last axis of {:?}", bt.shape(), xt.shape()),
            ));
        }
        let bd = bt.data();
        let data = xt
            .data()
            .chunks_exact(cols)
            .flat_map(|row| row.iter().zip(bd).map(|(&v, &b)| v + b))
            .collect();
        Ok(self.push(
            Tensor::from_parts(xt.shape().to_vec(), data),
            Op::AddBias { x: xi, bias: bi },
            &[xi, bi],
        ))
    }

    pub fn scale(&self, x: Var, s: f64) -> Result<Var> {
        let s = F::of_f64(s);
        self.unary(x, |v| v * s, |i| Op::Scale(i, s))
    }

    pub fn relu(&self, x: Var) -> Result<Var> {
        self.unary(x, |v| v.max(F::zero()), Op::Relu)
    }

    /// Tanh approximation of GELU.
    pub fn gelu(&self, x: Var) -> Result<Var> {
        self.unary(x, gelu, Op::Gelu)
    }

    pub fn sigmoid(&self, x: Var) -> Result<Var> {
        self.unary(x, sigmoid, Op::Sigmoid)
    }

    /// `log(sigmoid(x))`, stable for large |x|.
    pub fn log_sigmoid(&self, x: Var) -> Result<Var> {
        self.unary(
            x,
            |v| {
                // -softplus(-v)
                let z = -v;
                -(z.max(F::zero()) + (-z.abs()).exp().ln_1p())
            },
            Op::LogSigmoid,
        )
    }

    pub fn log(&self, x: Var) -> Result<Var> {
        self.unary(x, |v| v.ln(), Op::Log)
    }

    pub fn exp(&self, x: Var) -> Result<Var> {
        self.unary(x, |v| v.exp(), Op::Exp)
    }
}
