//! Reverse-mode automatic differentiation on dynamically shaped `f64` tensors.
//!
//! The engine is tape-based: every operation appends a node to an append-only
//! graph, so node ids are already topologically ordered. The backward pass
//! builds its vector-Jacobian products *as new graph nodes*, which makes
//! gradients themselves differentiable — taking a gradient of a gradient
//! (needed for input-gradient penalties and eikonal terms) works with the
//! same `grad` entry point.
//!
//! Everything is single-threaded by design; a [`Tape`] is cheap to create and
//! is dropped wholesale at the end of each training step.

mod ops;

pub use ops::{concat, conv2d_shape};

use ndarray::{ArrayD, IxDyn};
use std::cell::RefCell;
use std::rc::Rc;

/// Dynamically shaped f64 tensor, the only value type the engine moves around.
pub type Tensor = ArrayD<f64>;

/// Build a rank-0 tensor from a scalar.
pub fn scalar(x: f64) -> Tensor {
    ArrayD::from_elem(IxDyn(&[]), x)
}

pub(crate) struct Node {
    pub value: Tensor,
    pub parents: Vec<usize>,
    pub op: Option<Box<dyn ops::Op>>,
    pub needs_grad: bool,
}

struct TapeInner {
    nodes: RefCell<Vec<Node>>,
}

/// Append-only computation graph. Clones share the same storage.
#[derive(Clone)]
pub struct Tape {
    inner: Rc<TapeInner>,
}

/// Handle to a node on a [`Tape`]. Cheap to clone.
#[derive(Clone)]
pub struct Var {
    tape: Tape,
    pub(crate) id: usize,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            inner: Rc::new(TapeInner {
                nodes: RefCell::new(Vec::new()),
            }),
        }
    }

    pub fn len(&self) -> usize {
        self.inner.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Leaf that participates in differentiation.
    pub fn param(&self, value: Tensor) -> Var {
        self.push(Node {
            value,
            parents: vec![],
            op: None,
            needs_grad: true,
        })
    }

    /// Leaf treated as a constant; gradients never flow into it.
    pub fn constant(&self, value: Tensor) -> Var {
        self.push(Node {
            value,
            parents: vec![],
            op: None,
            needs_grad: false,
        })
    }

    pub fn constant_scalar(&self, x: f64) -> Var {
        self.constant(scalar(x))
    }

    pub(crate) fn push(&self, node: Node) -> Var {
        let mut nodes = self.inner.nodes.borrow_mut();
        nodes.push(node);
        Var {
            tape: self.clone(),
            id: nodes.len() - 1,
        }
    }

    pub(crate) fn apply(&self, op: Box<dyn ops::Op>, parents: &[&Var], value: Tensor) -> Var {
        let needs_grad = {
            let nodes = self.inner.nodes.borrow();
            parents.iter().any(|p| nodes[p.id].needs_grad)
        };
        self.push(Node {
            value,
            parents: parents.iter().map(|p| p.id).collect(),
            op: Some(op),
            needs_grad,
        })
    }

    pub(crate) fn value_of(&self, id: usize) -> Tensor {
        self.inner.nodes.borrow()[id].value.clone()
    }

    pub(crate) fn with_value<R>(&self, id: usize, f: impl FnOnce(&Tensor) -> R) -> R {
        f(&self.inner.nodes.borrow()[id].value)
    }

    pub fn var(&self, id: usize) -> Var {
        Var {
            tape: self.clone(),
            id,
        }
    }
}

impl Var {
    pub fn tape(&self) -> &Tape {
        &self.tape
    }

    /// Snapshot of this node's value.
    pub fn value(&self) -> Tensor {
        self.tape.value_of(self.id)
    }

    /// Borrowing access to the value without cloning.
    pub fn with_value<R>(&self, f: impl FnOnce(&Tensor) -> R) -> R {
        self.tape.with_value(self.id, f)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.with_value(|v| v.shape().to_vec())
    }

    pub fn needs_grad(&self) -> bool {
        self.tape.inner.nodes.borrow()[self.id].needs_grad
    }

    /// Scalar read; panics when the tensor has more than one element.
    pub fn scalar_value(&self) -> f64 {
        self.with_value(|v| {
            assert!(
                v.len() == 1,
                "scalar_value on tensor of shape {:?}",
                v.shape()
            );
            *v.iter().next().unwrap()
        })
    }

    /// Re-enter the value as a constant leaf: blocks gradient flow.
    pub fn detach(&self) -> Var {
        self.tape.constant(self.value())
    }
}

/// Gradients of scalar `y` with respect to each of `xs`.
///
/// Returns one `Var` per requested input; inputs unreachable from `y` get
/// zero tensors. The returned vars live on the same tape and are themselves
/// differentiable.
pub fn grad(y: &Var, xs: &[&Var]) -> Vec<Var> {
    let ones = {
        let shape = y.shape();
        assert!(
            shape.iter().product::<usize>() == 1,
            "grad: output must be scalar, got shape {:?}",
            shape
        );
        y.tape().constant(ArrayD::ones(IxDyn(&shape)))
    };
    grad_seeded(y, &ones, xs)
}

/// Like [`grad`] but with an explicit output adjoint (same shape as `y`).
pub fn grad_seeded(y: &Var, seed: &Var, xs: &[&Var]) -> Vec<Var> {
    let tape = y.tape().clone();
    let horizon = y.id + 1;
    let mut adjoints: Vec<Option<Var>> = vec![None; horizon];
    adjoints[y.id] = Some(seed.clone());

    for id in (0..horizon).rev() {
        let Some(adj) = adjoints[id].take() else {
            continue;
        };
        // Keep the adjoint around in case `id` is one of the requested inputs.
        adjoints[id] = Some(adj.clone());
        let (op, parents, needs) = {
            let nodes = tape.inner.nodes.borrow();
            let n = &nodes[id];
            if n.op.is_none() || !n.needs_grad {
                continue;
            }
            // Op objects stay owned by the node; temporarily take a raw copy of
            // parent ids and flags, then call vjp outside the borrow so that
            // vjp can append nodes.
            let needs: Vec<bool> = n
                .parents
                .iter()
                .map(|&p| nodes[p].needs_grad)
                .collect();
            (
                n.op.as_ref().map(|o| o.boxed_clone()).unwrap(),
                n.parents.clone(),
                needs,
            )
        };
        let contribs = op.vjp(&tape, id, &parents, &adj, &needs);
        debug_assert_eq!(contribs.len(), parents.len());
        for (slot, contrib) in parents.iter().zip(contribs) {
            let Some(c) = contrib else { continue };
            adjoints[*slot] = Some(match adjoints[*slot].take() {
                None => c,
                Some(prev) => prev.add(&c),
            });
        }
    }

    xs.iter()
        .map(|x| {
            assert!(
                Rc::ptr_eq(&x.tape().inner, &tape.inner),
                "grad: input on a different tape"
            );
            match adjoints.get(x.id).and_then(|a| a.clone()) {
                Some(a) => a,
                None => tape.constant(ArrayD::zeros(IxDyn(&x.shape()))),
            }
        })
        .collect()
}

/// Max relative error between analytic gradients of `f` and central finite
/// differences, probing every coordinate of every parameter.
///
/// `f` must rebuild its computation from scratch on the given tape each call
/// and return a scalar. Intended for small test instances.
pub fn finite_diff_check<F>(f:F, params: &[Tensor], eps: f64) -> f64
where
    F: Fn(&Tape, &[Var]) -> Var,
{
    let tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let y = f(&tape, &vars);
    let var_refs: Vec<&Var> = vars.iter().collect();
    let grads = grad(&y, &var_refs);
    let analytic: Vec<Tensor> = grads
        .iter()
        .map(|g| g.value().as_standard_layout().to_owned())
        .collect();

    let eval = |ps: &[Tensor]| -> f64 {
        let t = Tape::new();
        let vs: Vec<Var> = ps.iter().map(|p| t.constant(p.clone())).collect();
        f(&t, &vs).scalar_value()
    };

    let mut worst = 0.0f64;
    let mut probe: Vec<Tensor> = params.to_vec();
    for (pi, p) in params.iter().enumerate() {
        for idx in 0..p.len() {
            let orig = p.as_slice().unwrap()[idx];
            probe[pi].as_slice_mut().unwrap()[idx] = orig + eps;
            let up = eval(&probe);
            probe[pi].as_slice_mut().unwrap()[idx] = orig - eps;
            let down = eval(&probe);
            probe[pi].as_slice_mut().unwrap()[idx] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic[pi].as_slice().unwrap()[idx];
            // Relative error with an absolute floor so near-zero gradients are
            // compared absolutely instead of amplifying finite-difference noise.
            let scale = a.abs().max(numeric.abs()).max(1e-2);
            worst = worst.max((a - numeric).abs() / scale);
        }
    }
    worst
}
