//! Append-only gradient tape.
//!
//! Nodes are recorded in evaluation order, so insertion order is a
//! topological order and [`Tape::backward`] is a single reverse sweep.

use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::kernels;
use crate::shape::Shape;
use crate::tensor::Tensor;

pub type NodeId = usize;

/// Backward rule for an operation defined outside this crate.
///
/// The forward value is computed by the caller and handed to
/// [`Tape::custom`]; `backward` maps the upstream gradient to one optional
/// gradient per input (`None` meaning zero).
pub trait CustomOp<T: Element> {
    fn name(&self) -> &'static str;

    fn backward(
        &self,
        grad_out: &Tensor<T>,
        inputs: &[&Tensor<T>],
        needs_grad: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>>;
}

enum Op<T: Element> {
    /// Input tensor; a parameter when the node requires a gradient.
    Leaf,
    /// Result of operations on constants only.
    Constant,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    AddChannel(NodeId, NodeId),
    Scale(NodeId, T),
    AddScalar(NodeId),
    MatMul(NodeId, NodeId),
    Conv2d {
        input: NodeId,
        kernel: NodeId,
        bias: NodeId,
    },
    PRelu {
        input: NodeId,
        slope: NodeId,
    },
    ChannelAffine {
        input: NodeId,
        scale: NodeId,
        shift: NodeId,
    },
    MeanAbs(NodeId),
    Sum(NodeId),
    Tanh(NodeId),
    Custom {
        inputs: Vec<NodeId>,
        op: Box<dyn CustomOp<T>>,
    },
}

impl<T: Element> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Constant => "constant",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::AddChannel(..) => "add_channel",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::MatMul(..) => "matmul",
            Op::Conv2d { .. } => "conv2d",
            Op::PRelu { .. } => "prelu",
            Op::ChannelAffine { .. } => "channel_affine",
            Op::MeanAbs(..) => "mean_abs",
            Op::Sum(..) => "sum",
            Op::Tanh(..) => "tanh",
            Op::Custom { op, .. } => op.name(),
        }
    }
}

struct Node<T: Element> {
    value: Rc<Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

/// Recording context for one forward/backward pass.
pub struct Tape<T: Element> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
        }
    }
}

impl<T: Element> fmt::Debug for Tape<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("nodes", &self.len()).finish()
    }
}

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Element> {
    tape: &'t Tape<T>,
    id: NodeId,
}

impl<T: Element> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var(#{} {})", self.id, self.value().shape())
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Result<Var<'_, T>> {
        value.ensure_finite(op.name())?;
        let op = if requires_grad || matches!(op, Op::Leaf) {
            op
        } else {
            Op::Constant
        };
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
        });
        Ok(Var {
            tape: self,
            id: nodes.len() - 1,
        })
    }

    /// Records a trainable tensor.
    pub fn param(&self, value: Tensor<T>) -> Result<Var<'_, T>> {
        self.push(value, Op::Leaf, true)
    }

    /// Records a tensor that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Result<Var<'_, T>> {
        self.push(value, Op::Leaf, false)
    }

    /// Records the result of an externally computed operation.
    pub fn custom(
        &self,
        inputs: &[Var<'_, T>],
        value: Tensor<T>,
        op: Box<dyn CustomOp<T>>,
    ) -> Result<Var<'_, T>> {
        for v in inputs {
            self.check_owner(v, "custom")?;
        }
        let requires_grad = inputs.iter().any(|v| v.requires_grad());
        let inputs = inputs.iter().map(|v| v.id).collect();
        self.push(value, Op::Custom { inputs, op }, requires_grad)
    }

    fn check_owner(&self, v: &Var<'_, T>, op: &'static str) -> Result<()> {
        if std::ptr::eq(self, v.tape) {
            Ok(())
        } else {
            Err(TensorError::ForeignTape { op })
        }
    }

    fn value_of(&self, id: NodeId) -> Rc<Tensor<T>> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn requires_grad_of(&self, id: NodeId) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Gradients of a scalar `loss` with respect to every node it depends on.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        let shape = loss.value().shape().clone();
        if !shape.is_scalar() {
            return Err(TensorError::NonScalarLoss {
                dims: shape.dims().to_vec(),
            });
        }
        self.backward_with(loss, Tensor::ones(shape))
    }

    /// Reverse sweep seeded with an arbitrary upstream gradient for `output`.
    pub fn backward_with(&self, output: Var<'_, T>, seed: Tensor<T>) -> Result<Gradients<T>> {
        self.check_owner(&output, "backward")?;
        if !output.requires_grad() {
            return Err(TensorError::DetachedLoss);
        }
        output.value().expect_same_shape(&seed, "backward seed")?;
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; nodes.len()];
        grads[output.id] = Some(seed);

        for id in (0..=output.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let contributions = backward_node(&nodes, node, &g)?;
            grads[id] = Some(g);
            for (input, contribution) in contributions {
                if !nodes[input].requires_grad {
                    continue;
                }
                contribution.ensure_finite("backward")?;
                match &mut grads[input] {
                    Some(existing) => existing.accumulate(&contribution)?,
                    slot @ None => *slot = Some(contribution),
                }
            }
        }
        // Only differentiable leaves and interior nodes keep their gradients.
        for (slot, node) in grads.iter_mut().zip(nodes.iter()) {
            if !node.requires_grad {
                *slot = None;
            }
        }
        Ok(Gradients { grads })
    }
}

fn need(nodes: &[Node<impl Element>], id: NodeId) -> bool {
    nodes[id].requires_grad
}

/// Input gradients contributed by one node given its upstream gradient.
fn backward_node<T: Element>(
    nodes: &[Node<T>],
    node: &Node<T>,
    g: &Tensor<T>,
) -> Result<Vec<(NodeId, Tensor<T>)>> {
    let val = |id: NodeId| -> &Tensor<T> { &nodes[id].value };
    let mut out = Vec::with_capacity(3);
    match &node.op {
        Op::Leaf | Op::Constant => {}
        Op::Add(a, b) => {
            out.push((*a, g.clone()));
            out.push((*b, g.clone()));
        }
        Op::Sub(a, b) => {
            out.push((*a, g.clone()));
            if need(nodes, *b) {
                out.push((*b, g.map(|v| -v)));
            }
        }
        Op::Mul(a, b) => {
            if need(nodes, *a) {
                out.push((*a, g.zip_map(val(*b), "mul backward", |gv, bv| gv * bv)?));
            }
            if need(nodes, *b) {
                out.push((*b, g.zip_map(val(*a), "mul backward", |gv, av| gv * av)?));
            }
        }
        Op::Div(a, b) => {
            let bv = val(*b);
            if need(nodes, *a) {
                out.push((*a, g.zip_map(bv, "div backward", |gv, d| gv / d)?));
            }
            if need(nodes, *b) {
                let q = node.value.zip_map(bv, "div backward", |q, d| q / d)?;
                out.push((*b, g.zip_map(&q, "div backward", |gv, qv| -gv * qv)?));
            }
        }
        Op::AddChannel(x, b) => {
            out.push((*x, g.clone()));
            if need(nodes, *b) {
                out.push((*b, kernels::channel_sum(g, val(*b).numel())?));
            }
        }
        Op::Scale(a, s) => {
            let s = *s;
            out.push((*a, g.map(|v| v * s)));
        }
        Op::AddScalar(a) => out.push((*a, g.clone())),
        Op::MatMul(a, b) => {
            let (ga, gb) = kernels::matmul_backward(val(*a), val(*b), g)?;
            out.push((*a, ga));
            out.push((*b, gb));
        }
        Op::Conv2d {
            input,
            kernel,
            bias,
        } => {
            let grads = kernels::conv2d_backward(
                val(*input),
                val(*kernel),
                val(*bias),
                g,
                [
                    need(nodes, *input),
                    need(nodes, *kernel),
                    need(nodes, *bias),
                ],
            )?;
            out.extend(grads.input.map(|t| (*input, t)));
            out.extend(grads.kernel.map(|t| (*kernel, t)));
            out.extend(grads.bias.map(|t| (*bias, t)));
        }
        Op::PRelu { input, slope } => {
            let (dx, ds) = kernels::prelu_backward(val(*input), val(*slope), g)?;
            out.push((*input, dx));
            out.push((*slope, ds));
        }
        Op::ChannelAffine {
            input,
            scale,
            shift,
        } => {
            let (dx, dscale, dshift) =
                kernels::channel_affine_backward(val(*input), val(*scale), g)?;
            out.push((*input, dx));
            out.push((*scale, dscale));
            out.push((*shift, dshift));
        }
        Op::MeanAbs(a) => {
            let x = val(*a);
            let gv = g.item()?;
            let inv = T::one() / T::from_usize(x.numel()).expect("element count fits");
            // sign(0) = 0 keeps the subgradient bounded at the kink
            out.push((*a, x.map(|v| gv * sign(v) * inv)));
        }
        Op::Sum(a) => {
            let gv = g.item()?;
            out.push((*a, Tensor::full(val(*a).shape().clone(), gv)));
        }
        Op::Tanh(a) => {
            out.push((
                *a,
                g.zip_map(&node.value, "tanh backward", |gv, y| {
                    gv * (T::one() - y * y)
                })?,
            ));
        }
        Op::Custom { inputs, op } => {
            let values: Vec<&Tensor<T>> = inputs.iter().map(|&i| val(i)).collect();
            let needs: Vec<bool> = inputs.iter().map(|&i| need(nodes, i)).collect();
            let grads = op.backward(g, &values, &needs)?;
            if grads.len() != inputs.len() {
                return Err(TensorError::invalid(
                    "custom backward",
                    format!(
                        "{} returned {} gradients for {} inputs",
                        op.name(),
                        grads.len(),
                        inputs.len()
                    ),
                ));
            }
            for (&i, gi) in inputs.iter().zip(grads) {
                if let Some(gi) = gi {
                    if gi.shape() != val(i).shape() {
                        return Err(TensorError::ShapeMismatch {
                            op: "custom backward",
                            lhs: val(i).dims().to_vec(),
                            rhs: gi.dims().to_vec(),
                        });
                    }
                    out.push((i, gi));
                }
            }
        }
    }
    Ok(out)
}

fn sign<T: Element>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

/// Gradients produced by one backward sweep. Missing entries mean zero.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Element> Gradients<T> {
    pub fn get(&self, var: Var<'_, T>) -> Option<&Tensor<T>> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var<'_, T>) -> Option<Tensor<T>> {
        self.grads.get_mut(var.id).and_then(Option::take)
    }

    /// Gradient for `var`, materializing zeros when it received none.
    pub fn get_or_zeros(&self, var: Var<'_, T>) -> Tensor<T> {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(var.value().shape().clone()))
    }
}

impl<'t, T: Element> Var<'t, T> {
    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor<T>> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Shape {
        self.value().shape().clone()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad_of(self.id)
    }

    fn binary(
        self,
        other: Var<'t, T>,
        op: &'static str,
    ) -> Result<(Rc<Tensor<T>>, Rc<Tensor<T>>, bool)> {
        self.tape.check_owner(&other, op)?;
        Ok((
            self.value(),
            other.value(),
            self.requires_grad() || other.requires_grad(),
        ))
    }

    /// Same-shape elementwise sum, or a per-channel broadcast when `other`
    /// has shape `[C]` and `self` is `[N, C, ...]`.
    pub fn add(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let (a, b, rg) = self.binary(other, "add")?;
        if a.shape() != b.shape() && b.dims().len() == 1 && a.dims().len() >= 2 {
            let v = kernels::add_channel(&a, &b)?;
            return self.tape.push(v, Op::AddChannel(self.id, other.id), rg);
        }
        let v = a.zip_map(&b, "add", |x, y| x + y)?;
        self.tape.push(v, Op::Add(self.id, other.id), rg)
    }

    pub fn sub(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let (a, b, rg) = self.binary(other, "sub")?;
        let v = a.zip_map(&b, "sub", |x, y| x - y)?;
        self.tape.push(v, Op::Sub(self.id, other.id), rg)
    }

    pub fn mul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let (a, b, rg) = self.binary(other, "mul")?;
        let v = a.zip_map(&b, "mul", |x, y| x * y)?;
        self.tape.push(v, Op::Mul(self.id, other.id), rg)
    }

    pub fn div(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let (a, b, rg) = self.binary(other, "div")?;
        let v = a.zip_map(&b, "div", |x, y| x / y)?;
        self.tape.push(v, Op::Div(self.id, other.id), rg)
    }

    pub fn scale(self, s: T) -> Result<Var<'t, T>> {
        let v = self.value().map(|x| x * s);
        self.tape
            .push(v, Op::Scale(self.id, s), self.requires_grad())
    }

    pub fn add_scalar(self, s: T) -> Result<Var<'t, T>> {
        let v = self.value().map(|x| x + s);
        self.tape
            .push(v, Op::AddScalar(self.id), self.requires_grad())
    }

    pub fn matmul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let (a, b, rg) = self.binary(other, "matmul")?;
        let v = kernels::matmul(&a, &b)?;
        self.tape.push(v, Op::MatMul(self.id, other.id), rg)
    }

    pub fn conv2d(self, kernel: Var<'t, T>, bias: Var<'t, T>) -> Result<Var<'t, T>> {
        self.tape.check_owner(&kernel, "conv2d")?;
        self.tape.check_owner(&bias, "conv2d")?;
        let v = kernels::conv2d(&self.value(), &kernel.value(), &bias.value())?;
        let rg = self.requires_grad() || kernel.requires_grad() || bias.requires_grad();
        self.tape.push(
            v,
            Op::Conv2d {
                input: self.id,
                kernel: kernel.id,
                bias: bias.id,
            },
            rg,
        )
    }

    pub fn prelu(self, slope: Var<'t, T>) -> Result<Var<'t, T>> {
        let (x, s, rg) = self.binary(slope, "prelu")?;
        let v = kernels::prelu(&x, &s)?;
        self.tape.push(
            v,
            Op::PRelu {
                input: self.id,
                slope: slope.id,
            },
            rg,
        )
    }

    pub fn channel_affine(self, scale: Var<'t, T>, shift: Var<'t, T>) -> Result<Var<'t, T>> {
        self.tape.check_owner(&scale, "channel_affine")?;
        self.tape.check_owner(&shift, "channel_affine")?;
        let v = kernels::channel_affine(&self.value(), &scale.value(), &shift.value())?;
        let rg = self.requires_grad() || scale.requires_grad() || shift.requires_grad();
        self.tape.push(
            v,
            Op::ChannelAffine {
                input: self.id,
                scale: scale.id,
                shift: shift.id,
            },
            rg,
        )
    }

    /// Mean of absolute values; the L1 loss building block.
    pub fn mean_abs(self) -> Result<Var<'t, T>> {
        let x = self.value();
        let total = x.data().iter().fold(T::zero(), |acc, &v| acc + v.abs());
        let mean = total / T::from_usize(x.numel()).expect("element count fits");
        self.tape.push(
            Tensor::scalar(mean),
            Op::MeanAbs(self.id),
            self.requires_grad(),
        )
    }

    pub fn sum(self) -> Result<Var<'t, T>> {
        let s = self.value().sum();
        self.tape
            .push(Tensor::scalar(s), Op::Sum(self.id), self.requires_grad())
    }

    pub fn tanh(self) -> Result<Var<'t, T>> {
        let v = self.value().map(|x| x.tanh());
        self.tape.push(v, Op::Tanh(self.id), self.requires_grad())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec_t(v: Vec<f64>) -> Tensor<f64> {
        let n = v.len();
        Tensor::from_vec(&[n], v).unwrap()
    }

    #[test]
    fn add_and_identity() {
        let tape = Tape::new();
        let a = tape.param(vec_t(vec![1.0, 2.0])).unwrap();
        let b = tape.constant(vec_t(vec![3.0, 4.0])).unwrap();
        assert_eq!(a.add(b).unwrap().value().data(), &[4.0, 6.0]);
        let z = tape.constant(vec_t(vec![0.0, 0.0])).unwrap();
        assert_eq!(*a.add(z).unwrap().value(), *a.value());
    }

    #[test]
    fn product_rule() {
        let tape = Tape::new();
        let a = tape.param(vec_t(vec![1.0, -2.0, 3.0])).unwrap();
        let b = tape.constant(vec_t(vec![4.0, 5.0, -6.0])).unwrap();
        let s = a.mul(b).unwrap().sum().unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(a).unwrap().data(), &[4.0, 5.0, -6.0]);
        assert!(g.get(b).is_none());
    }

    #[test]
    fn sum_gradient_is_ones() {
        let tape = Tape::new();
        let w = tape.param(vec_t(vec![0.3, 0.1, -2.0])).unwrap();
        let g = tape.backward(w.sum().unwrap()).unwrap();
        assert_eq!(g.get(w).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn independent_parameter_has_no_gradient() {
        let tape = Tape::new();
        let w = tape.param(vec_t(vec![1.0, 2.0, 3.0])).unwrap();
        let v = tape.param(vec_t(vec![1.0])).unwrap();
        let g = tape.backward(v.sum().unwrap()).unwrap();
        assert!(g.get(w).is_none());
        assert_eq!(g.get_or_zeros(w).data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn mean_abs_values_and_gradient() {
        let tape = Tape::new();
        let a = tape.param(vec_t(vec![1.0, -1.0, 2.0])).unwrap();
        assert!((a.mean_abs().unwrap().value().item().unwrap() - 4.0 / 3.0).abs() < 1e-15);
        let z = tape.param(vec_t(vec![0.0; 4])).unwrap();
        assert_eq!(z.mean_abs().unwrap().value().item().unwrap(), 0.0);
        let b = tape.param(vec_t(vec![3.0, -2.0])).unwrap();
        let g = tape.backward(b.mean_abs().unwrap()).unwrap();
        assert_eq!(g.get(b).unwrap().data(), &[0.5, -0.5]);
        let zg = tape.backward(z.mean_abs().unwrap()).unwrap();
        assert_eq!(zg.get(z).unwrap().data(), &[0.0; 4]);
    }

    #[test]
    fn rejects_non_scalar_and_detached_losses() {
        let tape = Tape::new();
        let w = tape.param(vec_t(vec![1.0, 2.0])).unwrap();
        assert!(matches!(
            tape.backward(w),
            Err(TensorError::NonScalarLoss { .. })
        ));
        let c = tape.constant(vec_t(vec![1.0])).unwrap();
        assert_eq!(tape.backward(c).err(), Some(TensorError::DetachedLoss));
    }

    #[test]
    fn non_finite_results_are_errors() {
        let tape = Tape::new();
        let a = tape.constant(vec_t(vec![1.0])).unwrap();
        let z = tape.constant(vec_t(vec![0.0])).unwrap();
        assert!(matches!(a.div(z), Err(TensorError::NonFinite { .. })));
        assert!(tape.constant(vec_t(vec![f64::INFINITY])).is_err());
    }

    #[test]
    fn foreign_tape_is_rejected() {
        let t1 = Tape::new();
        let t2 = Tape::new();
        let a = t1.param(vec_t(vec![1.0])).unwrap();
        let b = t2.param(vec_t(vec![1.0])).unwrap();
        assert!(matches!(a.add(b), Err(TensorError::ForeignTape { .. })));
    }

    #[test]
    fn channel_broadcast_add() {
        let tape = Tape::new();
        let x = tape
            .param(Tensor::from_vec(&[1, 2, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap())
            .unwrap();
        let b = tape.param(vec_t(vec![10.0, 20.0])).unwrap();
        let y = x.add(b).unwrap();
        assert_eq!(y.value().data(), &[11.0, 12.0, 23.0, 24.0]);
        let g = tape.backward(y.sum().unwrap()).unwrap();
        assert_eq!(g.get(b).unwrap().data(), &[2.0, 2.0]);
    }
}
