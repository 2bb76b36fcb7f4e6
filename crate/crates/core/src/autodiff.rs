//! Reverse-mode automatic differentiation over dense 2-D tensors.
//!
//! The graph is a tape rebuilt on every forward pass: each operation
//! produces a new [`Node`] holding its value, an accumulated gradient, and
//! edges to its parents with vector-Jacobian-product closures. Calling
//! [`Node::backward`] on a scalar root walks the tape in reverse
//! topological order and accumulates `d root / d node` into every
//! reachable node that requires gradients. Gradients accumulate across
//! repeated backward calls until explicitly reset.
//!
//! All arithmetic is 64-bit. SoftPlus uses the overflow-safe form
//! `max(x, 0) + log1p(exp(-|x|))`. A graph and its nodes are confined to
//! one thread; distinct graphs may live on distinct threads.

use std::cell::{Ref, RefCell};
use std::collections::hash_map::Entry;
use std::collections::{HashMap, HashSet};
use std::rc::Rc;

use crate::error::{EvibError, Result};
use crate::tensor::Tensor;

/// Adam first-moment decay.
pub const ADAM_BETA1: f64 = 0.9;
/// Adam second-moment decay.
pub const ADAM_BETA2: f64 = 0.999;
/// Adam denominator stabilizer.
pub const ADAM_EPSILON: f64 = 1e-8;

// ---------------------------------------------------------------------------
// Graph nodes
// ---------------------------------------------------------------------------

/// Edge to an upstream node together with the local vector-Jacobian
/// product: maps the adjoint of this node's output to the adjoint
/// contribution for the parent.
struct Edge {
    parent: Node,
    vjp: Box<dyn Fn(&Tensor) -> Tensor>,
}

struct NodeData {
    value: RefCell<Tensor>,
    grad: RefCell<Tensor>,
    requires_grad: bool,
    parents: Vec<Edge>,
}

/// Handle to one node of the computation graph. Cloning is cheap (shared
/// reference); the underlying value and gradient are shared.
#[derive(Clone)]
pub struct Node(Rc<NodeData>);

impl std::fmt::Debug for Node {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Node")
            .field("shape", &self.shape())
            .field("requires_grad", &self.0.requires_grad)
            .field("parents", &self.0.parents.len())
            .finish()
    }
}

/// Named trainable tensor: a gradient-tracking [`Node`] plus the name used
/// for checkpointing. Names must be unique within a model.
#[derive(Clone, Debug)]
pub struct Parameter {
    /// The underlying graph leaf; `requires_grad` is always true.
    pub node: Node,
    /// Checkpoint key for this tensor.
    pub name: String,
}

impl Parameter {
    /// Creates a trainable parameter from an initial value.
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        Parameter { node: Node::leaf(value), name: name.into() }
    }
}

impl Node {
    fn from_parts(value: Tensor, requires_grad: bool, parents: Vec<Edge>) -> Node {
        let grad = Tensor::zeros(value.rows(), value.cols());
        Node(Rc::new(NodeData {
            value: RefCell::new(value),
            grad: RefCell::new(grad),
            requires_grad,
            parents,
        }))
    }

    /// Non-trainable input node (no gradient is tracked through it).
    pub fn constant(value: Tensor) -> Node {
        Node::from_parts(value, false, Vec::new())
    }

    /// Trainable leaf node.
    pub fn leaf(value: Tensor) -> Node {
        Node::from_parts(value, true, Vec::new())
    }

    /// Shared borrow of the current value.
    pub fn value(&self) -> Ref<'_, Tensor> {
        self.0.value.borrow()
    }

    /// Clone of the current value.
    pub fn value_clone(&self) -> Tensor {
        self.0.value.borrow().clone()
    }

    /// Shared borrow of the accumulated gradient.
    pub fn grad(&self) -> Ref<'_, Tensor> {
        self.0.grad.borrow()
    }

    /// Clone of the accumulated gradient.
    pub fn grad_clone(&self) -> Tensor {
        self.0.grad.borrow().clone()
    }

    /// Whether backward propagates into this node.
    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.value.borrow().shape()
    }

    /// Resets the accumulated gradient to zero.
    pub fn zero_grad(&self) {
        let mut g = self.0.grad.borrow_mut();
        let z = Tensor::zeros(g.rows(), g.cols());
        *g = z;
    }

    /// Overwrites the stored value in place (used by the optimizer; the
    /// tape is rebuilt each pass, so old graphs never observe this).
    pub fn set_value(&self, value: Tensor) {
        assert_eq!(
            self.shape(),
            value.shape(),
            "set_value must preserve the node shape"
        );
        *self.0.value.borrow_mut() = value;
    }

    fn binary(
        a: &Node,
        b: &Node,
        value: Tensor,
        vjp_a: impl Fn(&Tensor) -> Tensor + 'static,
        vjp_b: impl Fn(&Tensor) -> Tensor + 'static,
    ) -> Node {
        let requires_grad = a.requires_grad() || b.requires_grad();
        let mut parents = Vec::new();
        if requires_grad {
            if a.requires_grad() {
                parents.push(Edge { parent: a.clone(), vjp: Box::new(vjp_a) });
            }
            if b.requires_grad() {
                parents.push(Edge { parent: b.clone(), vjp: Box::new(vjp_b) });
            }
        }
        Node::from_parts(value, requires_grad, parents)
    }

    /// Elementwise sum with broadcasting.
    pub fn add(&self, other: &Node) -> Result<Node> {
        let value = self.value().broadcast_zip(&other.value(), |x, y| x + y)?;
        let (ar, ac) = self.shape();
        let (br, bc) = other.shape();
        Ok(Node::binary(
            self,
            other,
            value,
            move |g| g.reduce_to(ar, ac),
            move |g| g.reduce_to(br, bc),
        ))
    }

    /// Elementwise difference with broadcasting.
    pub fn sub(&self, other: &Node) -> Result<Node> {
        let value = self.value().broadcast_zip(&other.value(), |x, y| x - y)?;
        let (ar, ac) = self.shape();
        let (br, bc) = other.shape();
        Ok(Node::binary(
            self,
            other,
            value,
            move |g| g.reduce_to(ar, ac),
            move |g| g.map(|x| -x).reduce_to(br, bc),
        ))
    }

    /// Elementwise product with broadcasting.
    pub fn mul(&self, other: &Node) -> Result<Node> {
        let va = self.value_clone();
        let vb = other.value_clone();
        let value = va.broadcast_zip(&vb, |x, y| x * y)?;
        let (ar, ac) = self.shape();
        let (br, bc) = other.shape();
        let va2 = va.clone();
        let vb2 = vb.clone();
        Ok(Node::binary(
            self,
            other,
            value,
            move |g| {
                g.broadcast_zip(&vb2, |gv, y| gv * y)
                    .expect("shapes verified at forward")
                    .reduce_to(ar, ac)
            },
            move |g| {
                g.broadcast_zip(&va2, |gv, x| gv * x)
                    .expect("shapes verified at forward")
                    .reduce_to(br, bc)
            },
        ))
    }

    /// Elementwise quotient with broadcasting.
    pub fn div(&self, other: &Node) -> Result<Node> {
        let va = self.value_clone();
        let vb = other.value_clone();
        let value = va.broadcast_zip(&vb, |x, y| x / y)?;
        let (ar, ac) = self.shape();
        let (br, bc) = other.shape();
        let vb_for_a = vb.clone();
        Ok(Node::binary(
            self,
            other,
            value,
            move |g| {
                g.broadcast_zip(&vb_for_a, |gv, y| gv / y)
                    .expect("shapes verified at forward")
                    .reduce_to(ar, ac)
            },
            move |g| {
                g.broadcast_zip(&va, |gv, x| gv * (-x))
                    .expect("shapes verified at forward")
                    .broadcast_zip(&vb, |t, y| t / (y * y))
                    .expect("shapes verified at forward")
                    .reduce_to(br, bc)
            },
        ))
    }

    /// Matrix product.
    pub fn matmul(&self, other: &Node) -> Result<Node> {
        let value = self.value().matmul(&other.value())?;
        let va_t = self.value().transpose();
        let vb_t = other.value().transpose();
        Ok(Node::binary(
            self,
            other,
            value,
            move |g| g.matmul(&vb_t).expect("shapes verified at forward"),
            move |g| va_t.matmul(g).expect("shapes verified at forward"),
        ))
    }

    fn unary(
        &self,
        value: Tensor,
        vjp: impl Fn(&Tensor) -> Tensor + 'static,
    ) -> Node {
        let requires_grad = self.requires_grad();
        let parents = if requires_grad {
            vec![Edge { parent: self.clone(), vjp: Box::new(vjp) }]
        } else {
            Vec::new()
        };
        Node::from_parts(value, requires_grad, parents)
    }

    /// Elementwise map with caller-supplied function and exact derivative.
    /// Both closures receive the input value; the backward pass multiplies
    /// the incoming adjoint by `df` pointwise.
    pub fn apply_unary(
        &self,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64) -> f64 + 'static,
    ) -> Node {
        let vx = self.value_clone();
        let value = vx.map(&f);
        self.unary(value, move |g| {
            let mut out = g.clone();
            for (o, &x) in out.data_mut().iter_mut().zip(vx.data()) {
                *o *= df(x);
            }
            out
        })
    }

    /// Overflow-safe SoftPlus: `max(x, 0) + log1p(exp(-|x|))`.
    pub fn softplus(&self) -> Node {
        self.apply_unary(softplus_scalar, sigmoid_scalar)
    }

    /// Elementwise exponential.
    pub fn exp(&self) -> Node {
        self.apply_unary(f64::exp, f64::exp)
    }

    /// Elementwise natural logarithm. Every entry must be strictly
    /// positive.
    pub fn log(&self) -> Result<Node> {
        {
            let v = self.value();
            if let Some((i, &x)) = v.data().iter().enumerate().find(|(_, x)| **x <= 0.0) {
                let (r, c) = (i / v.cols(), i % v.cols());
                return Err(EvibError::Domain(format!(
                    "log requires strictly positive input; found {x} at index ({r}, {c})"
                )));
            }
        }
        Ok(self.apply_unary(f64::ln, |x| 1.0 / x))
    }

    /// Elementwise square.
    pub fn square(&self) -> Node {
        self.apply_unary(|x| x * x, |x| 2.0 * x)
    }

    /// Elementwise negation.
    pub fn negate(&self) -> Node {
        self.apply_unary(|x| -x, |_| -1.0)
    }

    /// Elementwise rectifier; the derivative at 0 is taken as 0.
    pub fn relu(&self) -> Node {
        self.apply_unary(|x| x.max(0.0), |x| if x > 0.0 { 1.0 } else { 0.0 })
    }

    /// Elementwise hyperbolic tangent.
    pub fn tanh(&self) -> Node {
        self.apply_unary(f64::tanh, |x| {
            let t = x.tanh();
            1.0 - t * t
        })
    }

    /// Per-row sums: B x C -> B x 1.
    pub fn row_sum(&self) -> Node {
        let value = self.value().row_sums();
        let (rows, cols) = self.shape();
        self.unary(value, move |g| {
            let mut out = Tensor::zeros(rows, cols);
            for r in 0..rows {
                let gv = g.get(r, 0);
                for c in 0..cols {
                    out.set(r, c, gv);
                }
            }
            out
        })
    }

    /// Sum of all elements into a scalar node.
    pub fn sum(&self) -> Result<Node> {
        if self.value().is_empty() {
            return Err(EvibError::Empty("sum over an empty tensor".into()));
        }
        let value = Tensor::scalar(self.value().sum_all());
        let (rows, cols) = self.shape();
        Ok(self.unary(value, move |g| Tensor::full(rows, cols, g.item())))
    }

    /// Mean of all elements into a scalar node.
    pub fn mean(&self) -> Result<Node> {
        if self.value().is_empty() {
            return Err(EvibError::Empty("mean over an empty tensor".into()));
        }
        let n = self.value().len() as f64;
        let value = Tensor::scalar(self.value().sum_all() / n);
        let (rows, cols) = self.shape();
        Ok(self.unary(value, move |g| Tensor::full(rows, cols, g.item() / n)))
    }

    /// Populates gradients of every reachable gradient-tracking node with
    /// `d self / d node` via reverse topological traversal. The root must
    /// be scalar (1 x 1). Repeated calls without a reset accumulate.
    pub fn backward(&self) -> Result<()> {
        if self.shape() != (1, 1) {
            return Err(EvibError::Input(format!(
                "backward requires a scalar root, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Ok(());
        }

        // Post-order DFS over gradient-tracking nodes; reversed, it is a
        // topological order from the root toward the leaves.
        let mut order: Vec<Node> = Vec::new();
        let mut visited: HashSet<*const NodeData> = HashSet::new();
        let mut stack: Vec<(Node, usize)> = vec![(self.clone(), 0)];
        visited.insert(Rc::as_ptr(&self.0));
        while let Some((node, idx)) = stack.pop() {
            if idx < node.0.parents.len() {
                let parent = node.0.parents[idx].parent.clone();
                stack.push((node, idx + 1));
                let ptr = Rc::as_ptr(&parent.0);
                if parent.0.requires_grad && !visited.contains(&ptr) {
                    visited.insert(ptr);
                    stack.push((parent, 0));
                }
            } else {
                order.push(node);
            }
        }

        let mut adjoint: HashMap<*const NodeData, Tensor> = HashMap::new();
        adjoint.insert(Rc::as_ptr(&self.0), Tensor::scalar(1.0));
        for node in order.iter().rev() {
            let Some(a) = adjoint.remove(&Rc::as_ptr(&node.0)) else {
                continue;
            };
            node.0.grad.borrow_mut().add_assign(&a);
            for edge in &node.0.parents {
                if !edge.parent.0.requires_grad {
                    continue;
                }
                let contribution = (edge.vjp)(&a);
                match adjoint.entry(Rc::as_ptr(&edge.parent.0)) {
                    Entry::Occupied(mut e) => e.get_mut().add_assign(&contribution),
                    Entry::Vacant(e) => {
                        e.insert(contribution);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Overflow-safe scalar SoftPlus.
pub fn softplus_scalar(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Overflow-safe logistic sigmoid (the SoftPlus derivative).
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

// ---------------------------------------------------------------------------
// Dispatchers mirroring the coarse operation surface
// ---------------------------------------------------------------------------

/// Elementwise operation selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryKind {
    Softplus,
    Exp,
    Log,
    Square,
    Negate,
    Relu,
}

/// Applies one elementwise operation. Only `Log` can fail (non-positive
/// input).
pub fn elementwise(input: &Node, kind: UnaryKind) -> Result<Node> {
    Ok(match kind {
        UnaryKind::Softplus => input.softplus(),
        UnaryKind::Exp => input.exp(),
        UnaryKind::Log => input.log()?,
        UnaryKind::Square => input.square(),
        UnaryKind::Negate => input.negate(),
        UnaryKind::Relu => input.relu(),
    })
}

/// Reduction selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
}

/// Reduces every element to a scalar node. Fails on empty input.
pub fn reduce(input: &Node, kind: ReduceKind) -> Result<Node> {
    match kind {
        ReduceKind::Sum => input.sum(),
        ReduceKind::Mean => input.mean(),
    }
}

/// Affine layer `input . W + b`. `input` is B x I, `weights` I x O,
/// `bias` 1 x O; gradients flow into all three.
pub fn linear_combine(input: &Node, weights: &Parameter, bias: &Parameter) -> Result<Node> {
    let in_shape = input.shape();
    let w_shape = weights.node.shape();
    if in_shape.1 != w_shape.0 {
        return Err(EvibError::Dimension(format!(
            "linear_combine: input shape {in_shape:?} does not match weight shape {w_shape:?}"
        )));
    }
    let b_shape = bias.node.shape();
    if b_shape != (1, w_shape.1) {
        return Err(EvibError::Dimension(format!(
            "linear_combine: bias shape {b_shape:?} does not match weight shape {w_shape:?}"
        )));
    }
    input.matmul(&weights.node)?.add(&bias.node)
}

// ---------------------------------------------------------------------------
// Gradient utilities and the optimizer
// ---------------------------------------------------------------------------

/// Resets the gradients of every parameter to zero.
pub fn zero_gradients(params: &[Parameter]) {
    for p in params {
        p.node.zero_grad();
    }
}

/// Scales all gradients by `max_norm / g` when the global L2 norm `g`
/// exceeds `max_norm`; otherwise leaves them unchanged. Returns the
/// pre-clip norm. `max_norm` must be positive (caller contract).
pub fn clip_gradient_norm(params: &[Parameter], max_norm: f64) -> f64 {
    debug_assert!(max_norm > 0.0, "max_norm must be positive");
    let sq: f64 = params.iter().map(|p| p.node.grad().sq_norm()).sum();
    let norm = sq.sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for p in params {
            p.node.0.grad.borrow_mut().scale_assign(scale);
        }
    }
    norm
}

/// Update rule selector for [`optimizer_step`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    /// Plain gradient descent: `p -= lr * g`.
    PlainGradient,
    /// Adam with the module-level default moment constants.
    Adam,
}

/// Per-parameter optimizer state. Construct once per training run.
pub struct OptimizerState {
    kind: OptimizerKind,
    step: u64,
    first_moment: Vec<Tensor>,
    second_moment: Vec<Tensor>,
}

impl OptimizerState {
    /// State for plain gradient descent (stateless rule).
    pub fn plain_gradient() -> Self {
        OptimizerState {
            kind: OptimizerKind::PlainGradient,
            step: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        }
    }

    /// Adam state with zeroed moments matching `params`.
    pub fn adam(params: &[Parameter]) -> Self {
        let zeros: Vec<Tensor> = params
            .iter()
            .map(|p| {
                let (r, c) = p.node.shape();
                Tensor::zeros(r, c)
            })
            .collect();
        OptimizerState {
            kind: OptimizerKind::Adam,
            step: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
        }
    }

    /// Number of completed steps.
    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// Applies one in-place optimizer update using the gradients currently
/// stored on `params`. Gradients are not reset here; call
/// [`zero_gradients`] afterward.
pub fn optimizer_step(params: &[Parameter], state: &mut OptimizerState, lr: f64) -> Result<()> {
    if lr <= 0.0 {
        return Err(EvibError::Config(format!(
            "learning rate must be positive, got {lr}"
        )));
    }
    state.step += 1;
    match state.kind {
        OptimizerKind::PlainGradient => {
            for p in params {
                let g = p.node.grad_clone();
                let mut v = p.node.0.value.borrow_mut();
                for (x, gi) in v.data_mut().iter_mut().zip(g.data()) {
                    *x -= lr * gi;
                }
            }
        }
        OptimizerKind::Adam => {
            assert_eq!(
                params.len(),
                state.first_moment.len(),
                "optimizer state was built for a different parameter list"
            );
            let t = state.step as i32;
            let bias1 = 1.0 - ADAM_BETA1.powi(t);
            let bias2 = 1.0 - ADAM_BETA2.powi(t);
            for (i, p) in params.iter().enumerate() {
                let g = p.node.grad_clone();
                let m = &mut state.first_moment[i];
                let v = &mut state.second_moment[i];
                let mut val = p.node.0.value.borrow_mut();
                for (((x, gi), mi), vi) in val
                    .data_mut()
                    .iter_mut()
                    .zip(g.data())
                    .zip(m.data_mut())
                    .zip(v.data_mut())
                {
                    *mi = ADAM_BETA1 * *mi + (1.0 - ADAM_BETA1) * gi;
                    *vi = ADAM_BETA2 * *vi + (1.0 - ADAM_BETA2) * gi * gi;
                    let m_hat = *mi / bias1;
                    let v_hat = *vi / bias2;
                    *x -= lr * m_hat / (v_hat.sqrt() + ADAM_EPSILON);
                }
            }
        }
    }
    Ok(())
}

/// Cosine learning-rate schedule: `base * (1 + cos(pi * step / total)) / 2`
/// for `step` in `[0, total]`.
pub fn cosine_lr(base_lr: f64, step: u64, total: u64) -> f64 {
    if total == 0 {
        return base_lr;
    }
    let frac = step as f64 / total as f64;
    base_lr * (1.0 + (std::f64::consts::PI * frac).cos()) / 2.0
}
