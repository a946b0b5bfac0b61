use std::cell::RefCell;
use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU32, Ordering};

use crate::element::Element;
use crate::error::{invalid, AutogradError, Result};
use crate::tensor::Tensor;

static NEXT_TAPE_ID: AtomicU32 = AtomicU32::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var {
    tape: u32,
    index: u32,
}

impl Var {
    pub fn index(self) -> usize {
        self.index as usize
    }
}

/// Recorded operation together with whatever the reverse pass needs.
pub(crate) enum Op<F> {
    Leaf,
    Matmul {
        a: usize,
        b: usize,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
        shared_rhs: bool,
        trans_b: bool,
    },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddBias { x: usize, bias: usize },
    Scale(usize, F),
    Relu(usize),
    Gelu(usize),
    Sigmoid(usize),
    LogSigmoid(usize),
    Log(usize),
    Exp(usize),
    Sum(usize),
    SumAxis { x: usize, outer: usize, dim: usize, inner: usize, scale: F },
    /// Each output element takes its gradient from one input position.
    Select { x: usize, source: Vec<usize> },
    Softmax { x: usize, outer: usize, dim: usize, inner: usize },
    LogSoftmax { x: usize, outer: usize, dim: usize, inner: usize },
    LayerNorm { x: usize, gamma: usize, beta: usize, cols: usize, normed: Vec<F>, rstd: Vec<F> },
    Concat { xs: Vec<usize>, outer: usize, dims: Vec<usize>, inner: usize },
    Reshape(usize),
    Dropout { x: usize, mask: Vec<F> },
    CrossEntropy { logits: usize, target: Tensor<F>, rows: usize, cols: usize },
}

pub(crate) struct Node<F> {
    pub(crate) value: Tensor<F>,
    pub(crate) op: Op<F>,
    pub(crate) traced: bool,
    pub(crate) param: bool,
}

/// Gradients of a scalar with respect to every traced leaf of a tape.
#[derive(Debug, Clone)]
pub struct GradientMap<F> {
    grads: BTreeMap<Var, Tensor<F>>,
}

impl<F: Element> GradientMap<F> {
    pub fn get(&self, v: Var) -> Option<&Tensor<F>> {
        self.grads.get(&v)
    }

    pub fn contains(&self, v: Var) -> bool {
        self.grads.contains_key(&v)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Var, &Tensor<F>)> {
        self.grads.iter()
    }
}

/// Records primitives applied to tensors so they can be differentiated.
///
/// A tape belongs to one thread; it is not `Sync`.
pub struct Tape<F> {
    id: u32,
    pub(crate) nodes: RefCell<Vec<Node<F>>>,
}

impl<F: Element> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Element> Tape<F> {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: RefCell::new(Vec::new()),
        }
    }

    /// Registers a leaf that requires gradients.
    pub fn param(&self, t: Tensor<F>) -> Var {
        self.push_node(Node {
            value: t,
            op: Op::Leaf,
            traced: true,
            param: true,
        })
    }

    /// Registers an untraced input.
    pub fn constant(&self, t: Tensor<F>) -> Var {
        self.push_node(Node {
            value: t,
            op: Op::Leaf,
            traced: false,
            param: false,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn value(&self, v: Var) -> Result<Tensor<F>> {
        let i = self.index(v)?;
        Ok(self.nodes.borrow()[i].value.clone())
    }

    pub fn shape(&self, v: Var) -> Result<Vec<usize>> {
        let i = self.index(v)?;
        Ok(self.nodes.borrow()[i].value.shape().to_vec())
    }

    pub fn is_traced(&self, v: Var) -> Result<bool> {
        let i = self.index(v)?;
        Ok(self.nodes.borrow()[i].traced)
    }

    pub(crate) fn index(&self, v: Var) -> Result<usize> {
        if v.tape != self.id {
            return Err(AutogradError::Usage("variable belongs to a different tape".into()));
        }
        let i = v.index as usize;
        if i >= self.nodes.borrow().len() {
            return Err(AutogradError::Usage(format!("unknown variable {i}")));
        }
        Ok(i)
    }

    pub(crate) fn get(&self, v: Var) -> Result<(usize, Tensor<F>)> {
        let i = self.index(v)?;
        Ok((i, self.nodes.borrow()[i].value.clone()))
    }

    fn push_node(&self, node: Node<F>) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        Var {
            tape: self.id,
            index: (nodes.len() - 1) as u32,
        }
    }

    /// Appends an op result; it is traced when any input is.
    pub(crate) fn push(&self, value: Tensor<F>, op: Op<F>, inputs: &[usize]) -> Var {
        let traced = {
            let nodes = self.nodes.borrow();
            inputs.iter().any(|&i| nodes[i].traced)
        };
        self.push_node(Node {
            value,
            op,
            traced,
            param: false,
        })
    }

    /// Reverse pass from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<GradientMap<F>> {
        let root = self.index(loss)?;
        let nodes = self.nodes.borrow();
        if nodes[root].value.numel() != 1 {
            return Err(invalid(
                "backward",
                format!("loss must be a scalar, got shape {:?}", nodes[root].value.shape()),
            ));
        }
        if !nodes[root].traced {
            return Err(AutogradError::Usage(
                "backward called on a value that does not depend on any parameter".into(),
            ));
        }
        let mut grads: Vec<Option<Vec<F>>> = (0..=root).map(|_| None).collect();
        grads[root] = Some(vec![F::one()]);
        let mut out = BTreeMap::new();
        for i in (0..=root).rev() {
            let node = &nodes[i];
            if !node.traced {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            if node.param {
                out.insert(self.var(i), Tensor::from_parts(node.value.shape().to_vec(), g));
                continue;
            }
            crate::backward::propagate(&node.op, &node.value, &g, &nodes, &mut grads);
        }
        for (i, node) in nodes.iter().enumerate() {
            if node.param {
                out.entry(self.var(i))
                    .or_insert_with(|| Tensor::zeros(node.value.shape()));
            }
        }
        Ok(GradientMap { grads: out })
    }

    fn var(&self, i: usize) -> Var {
        Var {
            tape: self.id,
            index: i as u32,
        }
    }
}
