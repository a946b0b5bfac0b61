//! Vector-Jacobian products for every recorded op.

use crate::element::Element;
use crate::tape::{Node, Op};
use crate::tensor::Tensor;

/// Gradient buffer of node `j`, or `None` when it is not traced.
fn slot<'a, F: Element>(
    grads: &'a mut [Option<Vec<F>>],
    nodes: &[Node<F>],
    j: usize,
) -> Option<&'a mut Vec<F>> {
    if !nodes[j].traced {
        return None;
    }
    Some(grads[j].get_or_insert_with(|| vec![F::zero(); nodes[j].value.numel()]))
}

fn input<F: Element>(nodes: &[Node<F>], j: usize) -> &[F] {
    nodes[j].value.data()
}

fn unary<F: Element>(
    grads: &mut [Option<Vec<F>>],
    nodes: &[Node<F>],
    x: usize,
    g: &[F],
    local: impl Fn(usize) -> F,
) {
    if let Some(gx) = slot(grads, nodes, x) {
        for (i, (dst, &gi)) in gx.iter_mut().zip(g).enumerate() {
            *dst += gi * local(i);
        }
    }
}

pub(crate) fn propagate<F: Element>(
    op: &Op<F>,
    out: &Tensor<F>,
    g: &[F],
    nodes: &[Node<F>],
    grads: &mut [Option<Vec<F>>],
) {
    match op {
        Op::Leaf => {}
        &Op::Matmul {
            a,
            b,
            batch,
            m,
            k,
            n,
            shared_rhs,
            trans_b,
        } => matmul_backward(grads, nodes, g, (a, b), (batch, m, k, n), shared_rhs, trans_b),
        &Op::Add(a, b) => {
            unary(grads, nodes, a, g, |_| F::one());
            unary(grads, nodes, b, g, |_| F::one());
        }
        &Op::Sub(a, b) => {
            unary(grads, nodes, a, g, |_| F::one());
            unary(grads, nodes, b, g, |_| -F::one());
        }
        &Op::Mul(a, b) => {
            let (av, bv) = (input(nodes, a), input(nodes, b));
            unary(grads, nodes, a, g, |i| bv[i]);
            unary(grads, nodes, b, g, |i| av[i]);
        }
        &Op::AddBias { x, bias } => {
            unary(grads, nodes, x, g, |_| F::one());
            if let Some(gb) = slot(grads, nodes, bias) {
                let cols = gb.len();
                for row in g.chunks_exact(cols) {
                    for (d, &v) in gb.iter_mut().zip(row) {
                        *d += v;
                    }
                }
            }
        }
        &Op::Scale(x, s) => unary(grads, nodes, x, g, |_| s),
        &Op::Relu(x) => {
            let xv = input(nodes, x);
            unary(grads, nodes, x, g, |i| {
                if xv[i] > F::zero() {
                    F::one()
                } else {
                    F::zero()
                }
            })
        }
        &Op::Gelu(x) => {
            let xv = input(nodes, x);
            unary(grads, nodes, x, g, |i| gelu_grad(xv[i]))
        }
        &Op::Sigmoid(x) => {
            let y = out.data();
            unary(grads, nodes, x, g, |i| y[i] * (F::one() - y[i]))
        }
        &Op::LogSigmoid(x) => {
            let xv = input(nodes, x);
            // d/dx log sigmoid(x) = sigmoid(-x)
            unary(grads, nodes, x, g, |i| sigmoid(-xv[i]))
        }
        &Op::Log(x) => {
            let xv = input(nodes, x);
            unary(grads, nodes, x, g, |i| xv[i].recip())
        }
        &Op::Exp(x) => {
            let y = out.data();
            unary(grads, nodes, x, g, |i| y[i])
        }
        &Op::Sum(x) => {
            if let Some(gx) = slot(grads, nodes, x) {
                for d in gx.iter_mut() {
                    *d += g[0];
                }
            }
        }
        &Op::SumAxis {
            x,
            outer,
            dim,
            inner,
            scale,
        } => {
            if let Some(gx) = slot(grads, nodes, x) {
                for o in 0..outer {
                    for d in 0..dim {
                        let base = (o * dim + d) * inner;
                        for i in 0..inner {
                            gx[base + i] += g[o * inner + i] * scale;
                        }
                    }
                }
            }
        }
        Op::Select { x, source } => {
            if let Some(gx) = slot(grads, nodes, *x) {
                for (&s, &gi) in source.iter().zip(g) {
                    gx[s] += gi;
                }
            }
        }
        &Op::Softmax {
            x,
            outer,
            dim,
            inner,
        } => {
            let y = out.data();
            if let Some(gx) = slot(grads, nodes, x) {
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |d: usize| (o * dim + d) * inner + i;
                        let dot: F = (0..dim).map(|d| g[at(d)] * y[at(d)]).sum();
                        for d in 0..dim {
                            gx[at(d)] += y[at(d)] * (g[at(d)] - dot);
                        }
                    }
                }
            }
        }
        &Op::LogSoftmax {
            x,
            outer,
            dim,
            inner,
        } => {
            let y = out.data();
            if let Some(gx) = slot(grads, nodes, x) {
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |d: usize| (o * dim + d) * inner + i;
                        let total: F = (0..dim).map(|d| g[at(d)]).sum();
                        for d in 0..dim {
                            gx[at(d)] += g[at(d)] - y[at(d)].exp() * total;
                        }
                    }
                }
            }
        }
        Op::LayerNorm {
            x,
            gamma,
            beta,
            cols,
            normed,
            rstd,
        } => layer_norm_backward(grads, nodes, g, (*x, *gamma, *beta), *cols, normed, rstd),
        Op::Concat {
            xs,
            outer,
            dims,
            inner,
        } => {
            let total: usize = dims.iter().sum();
            let mut offset = 0;
            for (&x, &d) in xs.iter().zip(dims) {
                if let Some(gx) = slot(grads, nodes, x) {
                    for o in 0..*outer {
                        let src = (o * total + offset) * inner;
                        let dst = o * d * inner;
                        for (a, &b) in gx[dst..dst + d * inner].iter_mut().zip(&g[src..src + d * inner]) {
                            *a += b;
                        }
                    }
                }
                offset += d;
            }
        }
        &Op::Reshape(x) => unary(grads, nodes, x, g, |_| F::one()),
        Op::Dropout { x, mask } => unary(grads, nodes, *x, g, |i| mask[i]),
        Op::CrossEntropy {
            logits,
            target,
            rows,
            cols,
        } => {
            let lv = input(nodes, *logits);
            let t = target.data();
            let scale = g[0] / F::of_usize(*rows);
            if let Some(gl) = slot(grads, nodes, *logits) {
                for r in 0..*rows {
                    let row = &lv[r * cols..(r + 1) * cols];
                    let max = row.iter().copied().fold(F::neg_infinity(), F::max);
                    let z: F = row.iter().map(|&v| (v - max).exp()).sum();
                    let tsum: F = t[r * cols..(r + 1) * cols].iter().copied().sum();
                    for c in 0..*cols {
                        let p = (row[c] - max).exp() / z;
                        gl[r * cols + c] += scale * (p * tsum - t[r * cols + c]);
                    }
                }
            }
        }
    }
}

pub(crate) fn sigmoid<F: Element>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

// 1 + tanh(u) = 2 sigmoid(2u): one exp instead of a tanh
fn gelu_gate<F: Element>(x: F) -> F {
    let u = F::of_f64(GELU_C) * (x + F::of_f64(GELU_A) * x * x * x);
    F::one() / (F::one() + (-(u + u)).exp())
}

pub(crate) fn gelu<F: Element>(x: F) -> F {
    x * gelu_gate(x)
}

fn gelu_grad<F: Element>(x: F) -> F {
    let s = gelu_gate(x);
    let du = F::of_f64(GELU_C) * (F::one() + F::of_f64(3.0 * GELU_A) * x * x);
    s + (x + x) * s * (F::one() - s) * du
}

#[allow(clippy::too_many_arguments)]
fn matmul_backward<F: Element>(
    grads: &mut [Option<Vec<F>>],
    nodes: &[Node<F>],
    g: &[F],
    (a, b): (usize, usize),
    (batch, m, k, n): (usize, usize, usize, usize),
    shared_rhs: bool,
    trans_b: bool,
) {
    let av = input(nodes, a);
    let bv = input(nodes, b);
    let one = F::one();
    // rhs viewed as [k, n]; when trans_b it is stored [n, k].
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    if let Some(ga) = slot(grads, nodes, a) {
        // dA = dC @ B^T; B^T strides swap the rhs strides.
        let rows = if shared_rhs { batch * m } else { m };
        let reps = if shared_rhs { 1 } else { batch };
        for r in 0..reps {
            F::gemm(
                rows,
                n,
                k,
                one,
                &g[r * rows * n..],
                n as isize,
                1,
                &bv[r * k * n..],
                csb,
                rsb,
                one,
                &mut ga[r * rows * k..],
                k as isize,
                1,
            );
        }
    }
    if let Some(gb) = slot(grads, nodes, b) {
        let rows = if shared_rhs { batch * m } else { m };
        let reps = if shared_rhs { 1 } else { batch };
        for r in 0..reps {
            let (a_r, g_r, b_r) = (&av[r * rows * k..], &g[r * rows * n..], &mut gb[r * k * n..]);
            if trans_b {
                // dB_stored[n,k] = dC^T @ A
                F::gemm(n, rows, k, one, g_r, 1, n as isize, a_r, k as isize, 1, one, b_r, k as isize, 1);
            } else {
                // dB[k,n] = A^T @ dC
                F::gemm(k, rows, n, one, a_r, 1, k as isize, g_r, n as isize, 1, one, b_r, n as isize, 1);
            }
        }
    }
}

fn layer_norm_backward<F: Element>(
    grads: &mut [Option<Vec<F>>],
    nodes: &[Node<F>],
    g: &[F],
    (x, gamma, beta): (usize, usize, usize),
    cols: usize,
    normed: &[F],
    rstd: &[F],
) {
    let gv = input(nodes, gamma);
    let rows = normed.len() / cols;
    if let Some(gg) = slot(grads, nodes, gamma) {
        for r in 0..rows {
            for c in 0..cols {
                gg[c] += g[r * cols + c] * normed[r * cols + c];
            }
        }
    }
    if let Some(gb) = slot(grads, nodes, beta) {
        for r in 0..rows {
            for c in 0..cols {
                gb[c] += g[r * cols + c];
            }
        }
    }
    if let Some(gx) = slot(grads, nodes, x) {
        let inv_n = F::one() / F::of_usize(cols);
        for r in 0..rows {
            let xh = &normed[r * cols..(r + 1) * cols];
            let gr = &g[r * cols..(r + 1) * cols];
            let mut mean_dy = F::zero();
            let mut mean_dy_xh = F::zero();
            for c in 0..cols {
                let dy = gr[c] * gv[c];
                mean_dy += dy;
                mean_dy_xh += dy * xh[c];
            }
            mean_dy *= inv_n;
            mean_dy_xh *= inv_n;
            for c in 0..cols {
                let dy = gr[c] * gv[c];
                gx[r * cols + c] += rstd[r] * (dy - mean_dy - xh[c] * mean_dy_xh);
            }
        }
    }
}
