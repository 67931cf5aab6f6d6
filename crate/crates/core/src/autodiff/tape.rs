//! Wengert-list reverse-mode differentiation.
//!
//! Every op appends a node holding its output value. Nodes whose inputs do
//! not require gradients are still stored (their values may feed later ops)
//! but are skipped during [`Tape::backward`].

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use super::kernels::{self, Padding};
use crate::error::{Result, SegError};
use crate::tensor::{Real, Shape, Tensor};

/// Probability clamp used by [`Tape::bce_loss`].
pub const BCE_CLAMP: f64 = 1e-7;

/// Smoothing term of [`Tape::soft_dice_loss`].
pub const DICE_SMOOTH: f64 = 1.0;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d { x: Var, w: Var, b: Var, padding: Padding },
    Relu(Var),
    Sigmoid(Var),
    MaxPool { x: Var, argmax: Vec<usize> },
    Upsample(Var),
    Concat(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Bce { prob: Var, truth: Var },
    SoftDice { prob: Var, truth: Var },
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match *self {
            Op::Leaf => vec![],
            Op::Conv2d { x, w, b, .. } => vec![x, w, b],
            Op::Relu(x) | Op::Sigmoid(x) | Op::Upsample(x) | Op::Scale(x, _) | Op::Sum(x) => vec![x],
            Op::MaxPool { x, .. } => vec![x],
            Op::Concat(a, b) | Op::Add(a, b) | Op::Mul(a, b) => vec![a, b],
            Op::Bce { prob, truth } | Op::SoftDice { prob, truth } => vec![prob, truth],
        }
    }
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op,
    requires_grad: bool,
}

/// Records tensor operations for one forward/backward pass.
///
/// A tape is a single-threaded unit; build a fresh one per training step.
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of a leaf that requires gradients. Leaves the loss does not
    /// depend on get zeros; `None` means the variable never asked for one.
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Adds an input tensor. Set `requires_grad` for trainable parameters.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> Shape {
        self.nodes[var.0].value.shape()
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op, requires_grad: bool) -> Var {
        debug_assert!(op.inputs().iter().all(|v| v.0 < self.nodes.len()));
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|&v| self.nodes[v.0].requires_grad)
    }

    fn push_op(&mut self, value: Tensor<T>, op: Op) -> Var {
        let rg = self.any_grad(&op.inputs());
        self.push(value, op, rg)
    }

    /// Convolution with a `(1, co, 1, 1)` bias tensor.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, padding: Padding) -> Result<Var> {
        let out = kernels::conv2d(self.value(x), self.value(w), self.value(b).data(), padding)?;
        Ok(self.push_op(out, Op::Conv2d { x, w, b, padding }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = kernels::relu(self.value(x));
        self.push_op(out, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = kernels::sigmoid(self.value(x));
        self.push_op(out, Op::Sigmoid(x))
    }

    pub fn maxpool2x2(&mut self, x: Var) -> Result<Var> {
        let (out, argmax) = kernels::maxpool2x2(self.value(x))?;
        Ok(self.push_op(out, Op::MaxPool { x, argmax }))
    }

    pub fn upsample_nearest2x(&mut self, x: Var) -> Var {
        let out = kernels::upsample_nearest2x(self.value(x));
        self.push_op(out, Op::Upsample(x))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = kernels::concat_channels(self.value(a), self.value(b))?;
        Ok(self.push_op(out, Op::Concat(a, b)))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        SegError::check_shape(op, self.shape(b), self.shape(a))
    }

    /// Elementwise sum of two same-shaped tensors.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let out = Tensor::from_vec(self.shape(a), data)?;
        Ok(self.push_op(out, Op::Add(a, b)))
    }

    /// Elementwise product of two same-shaped tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let out = Tensor::from_vec(self.shape(a), data)?;
        Ok(self.push_op(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let k = T::of(factor);
        let out = self.value(x).map(|v| v * k);
        self.push_op(out, Op::Scale(x, factor))
    }

    /// Sum of all elements, as a scalar tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        self.push_op(out, Op::Sum(x))
    }

    /// Mean binary cross-entropy with probabilities clamped to
    /// `[BCE_CLAMP, 1 - BCE_CLAMP]`.
    pub fn bce_loss(&mut self, prob: Var, truth: Var) -> Result<Var> {
        self.same_shape("bce_loss", prob, truth)?;
        let (lo, hi) = (T::of(BCE_CLAMP), T::of(1.0 - BCE_CLAMP));
        let p = self.value(prob).data();
        let t = self.value(truth).data();
        let mut acc = 0.0f64;
        for (&pv, &tv) in p.iter().zip(t) {
            let pc = pv.max(lo).min(hi).f64();
            let tv = tv.f64();
            acc -= tv * pc.ln() + (1.0 - tv) * (1.0 - pc).ln();
        }
        let out = Tensor::scalar(T::of(acc / p.len().max(1) as f64));
        Ok(self.push_op(out, Op::Bce { prob, truth }))
    }

    /// `1 - (2 sum(p t) + s) / (sum(p) + sum(t) + s)` per batch item with
    /// smoothing `s = DICE_SMOOTH`, averaged over the batch.
    pub fn soft_dice_loss(&mut self, prob: Var, truth: Var) -> Result<Var> {
        self.same_shape("soft_dice_loss", prob, truth)?;
        let terms = dice_terms(self.value(prob), self.value(truth));
        let n = terms.len().max(1) as f64;
        let loss: f64 = terms
            .iter()
            .map(|&(i, s)| 1.0 - (2.0 * i + DICE_SMOOTH) / (s + DICE_SMOOTH))
            .sum::<f64>()
            / n;
        let out = Tensor::scalar(T::of(loss));
        Ok(self.push_op(out, Op::SoftDice { prob, truth }))
    }

    /// Hash of every data-dependent branch taken in the forward pass (ReLU
    /// signs and pooling winners). Finite-difference checks compare it across
    /// perturbations to skip points that straddle a kink.
    pub fn kink_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(x) => {
                    for v in self.value(*x).data() {
                        (*v > T::zero()).hash(&mut h);
                    }
                }
                Op::MaxPool { argmax, .. } => argmax.hash(&mut h),
                _ => {}
            }
        }
        h.finish()
    }

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let numel = self.value(loss).numel();
        if numel != 1 {
            return Err(SegError::shape("backward", "loss numel", numel, 1));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(Tensor::scalar(T::one()));
        }
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
        }
        for (id, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.requires_grad {
                if grads[id].is_none() {
                    grads[id] = Some(Tensor::zeros(node.value.shape()));
                }
            } else {
                grads[id] = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        match node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, padding } => {
                let cg =
                    kernels::conv2d_backward(self.value(x), self.value(w), g, padding, [wants(x), wants(w), wants(b)])?;
                if let Some(dx) = cg.dx {
                    accumulate(grads, x, dx);
                }
                if let Some(dw) = cg.dweight {
                    accumulate(grads, w, dw);
                }
                if let Some(db) = cg.dbias {
                    accumulate(grads, b, Tensor::from_vec(self.shape(b), db)?);
                }
            }
            Op::Relu(x) => accumulate(grads, x, kernels::relu_backward(self.value(x), g)),
            Op::Sigmoid(x) => accumulate(grads, x, kernels::sigmoid_backward(&node.value, g)),
            Op::MaxPool { x, ref argmax } => {
                accumulate(grads, x, kernels::maxpool2x2_backward(self.shape(x), argmax, g))
            }
            Op::Upsample(x) => accumulate(grads, x, kernels::upsample_nearest2x_backward(g)),
            Op::Concat(a, b) => {
                let (da, db) = kernels::concat_channels_backward(g, self.shape(a).c);
                if wants(a) {
                    accumulate(grads, a, da);
                }
                if wants(b) {
                    accumulate(grads, b, db);
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if wants(v) {
                        accumulate(grads, v, g.clone());
                    }
                }
            }
            Op::Mul(a, b) => {
                for (v, other) in [(a, b), (b, a)] {
                    if wants(v) {
                        let data = g
                            .data()
                            .iter()
                            .zip(self.value(other).data())
                            .map(|(&gv, &o)| gv * o)
                            .collect();
                        accumulate(grads, v, Tensor::from_vec(g.shape(), data)?);
                    }
                }
            }
            Op::Scale(x, k) => {
                let k = T::of(k);
                accumulate(grads, x, g.map(|v| v * k));
            }
            Op::Sum(x) => {
                let up = g.item()?;
                accumulate(grads, x, Tensor::full(self.shape(x), up));
            }
            Op::Bce { prob, truth } => {
                if wants(prob) {
                    accumulate(grads, prob, self.bce_grad(prob, truth, g.item()?));
                }
            }
            Op::SoftDice { prob, truth } => {
                if wants(prob) {
                    accumulate(grads, prob, self.soft_dice_grad(prob, truth, g.item()?));
                }
            }
        }
        Ok(())
    }

    fn bce_grad(&self, prob: Var, truth: Var, up: T) -> Tensor<T> {
        let (lo, hi) = (T::of(BCE_CLAMP), T::of(1.0 - BCE_CLAMP));
        let p = self.value(prob);
        let t = self.value(truth);
        let scale = up / T::of(p.numel().max(1) as f64);
        let data = p
            .data()
            .iter()
            .zip(t.data())
            .map(|(&pv, &tv)| {
                if pv < lo || pv > hi {
                    T::zero()
                } else {
                    scale * ((T::one() - tv) / (T::one() - pv) - tv / pv)
                }
            })
            .collect();
        Tensor::from_vec(p.shape(), data).expect("same shape")
    }

    fn soft_dice_grad(&self, prob: Var, truth: Var, up: T) -> Tensor<T> {
        let p = self.value(prob);
        let t = self.value(truth);
        let s = p.shape();
        let terms = dice_terms(p, t);
        let per = s.c * s.plane();
        let mut out = Vec::with_capacity(p.numel());
        for (b, &(inter, total)) in terms.iter().enumerate() {
            let denom = total + DICE_SMOOTH;
            let num = 2.0 * inter + DICE_SMOOTH;
            let k = up.f64() / s.n as f64;
            for &tv in &t.data()[b * per..(b + 1) * per] {
                // d/dp_i of -(num/denom)
                out.push(T::of(-k * (2.0 * tv.f64() * denom - num) / (denom * denom)));
            }
        }
        Tensor::from_vec(s, out).expect("same shape")
    }
}

/// Per batch item: `(sum(p * t), sum(p) + sum(t))`, accumulated in f64.
fn dice_terms<T: Real>(p: &Tensor<T>, t: &Tensor<T>) -> Vec<(f64, f64)> {
    let s = p.shape();
    let per = s.c * s.plane();
    (0..s.n)
        .map(|b| {
            let range = b * per..(b + 1) * per;
            let mut inter = 0.0;
            let mut total = 0.0;
            for (&pv, &tv) in p.data()[range.clone()].iter().zip(&t.data()[range]) {
                inter += pv.f64() * tv.f64();
                total += pv.f64() + tv.f64();
            }
            (inter, total)
        })
        .collect()
}

fn accumulate<T: Real>(grads: &mut [Option<Tensor<T>>], var: Var, g: Tensor<T>) {
    match &mut grads[var.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: Shape, data: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn grad_of_sum_is_ones() {
        let mut tape = Tape::new();
        let x = tape.param(t(Shape::new(1, 1, 2, 2), &[1.0, -2.0, 3.0, 0.5]));
        let loss = tape.sum(x);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0; 4]);
    }

    #[test]
    fn relu_of_negatives_has_zero_grad() {
        let mut tape = Tape::new();
        let x = tape.param(t(Shape::new(1, 1, 2, 2), &[-1.0, -2.0, -3.0, -0.5]));
        let r = tape.relu(x);
        let loss = tape.sum(r);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.0; 4]);

        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(3.0));
        let r = tape.relu(x);
        let g = tape.backward(r).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0]);
    }

    #[test]
    fn untouched_leaves_get_zero_and_constants_get_none() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(2.0));
        let unused = tape.param(Tensor::ones(Shape::new(1, 2, 1, 1)));
        let c = tape.constant(Tensor::scalar(5.0));
        let y = tape.mul(x, c).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[5.0]);
        assert_eq!(g.get(unused).unwrap().data(), &[0.0, 0.0]);
        assert!(g.get(c).is_none());
        assert!(g.get(y).is_none());
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::ones(Shape::new(1, 1, 2, 2)));
        let r = tape.relu(x);
        assert!(matches!(
            tape.backward(r),
            Err(SegError::Shape { dim: "loss numel", .. })
        ));
    }

    #[test]
    fn shared_inputs_accumulate() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::scalar(3.0));
        let y = tape.mul(x, x).unwrap();
        let z = tape.add(y, x).unwrap();
        let g = tape.backward(z).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[7.0]);
    }

    #[test]
    fn soft_dice_values() {
        let shape = Shape::new(1, 1, 4, 4);
        let mut tape = Tape::<f64>::new();
        let p = tape.param(Tensor::ones(shape));
        let truth = tape.constant(Tensor::ones(shape));
        let l = tape.soft_dice_loss(p, truth).unwrap();
        assert!(tape.value(l).item().unwrap().abs() < 1e-15);

        let half = tape.param(Tensor::full(shape, 0.5));
        let l = tape.soft_dice_loss(half, truth).unwrap();
        // 1 - (2*8 + 1) / (8 + 16 + 1)
        assert!((tape.value(l).item().unwrap() - 0.32).abs() < 1e-12);
    }

    #[test]
    fn bce_values() {
        let shape = Shape::new(1, 1, 2, 2);
        let mut tape = Tape::new();
        let p = tape.param(Tensor::full(shape, 0.5));
        let truth = tape.constant(t(shape, &[0.0, 1.0, 1.0, 0.0]));
        let l = tape.bce_loss(p, truth).unwrap();
        assert!((tape.value(l).item().unwrap() - std::f64::consts::LN_2).abs() < 1e-12);

        let exact = tape.param(t(shape, &[0.0, 1.0, 1.0, 0.0]));
        let l = tape.bce_loss(exact, truth).unwrap();
        assert!(tape.value(l).item().unwrap() <= 1e-6);
    }

    #[test]
    fn mismatched_loss_shapes_error() {
        let mut tape = Tape::<f64>::new();
        let p = tape.param(Tensor::zeros(Shape::new(1, 1, 2, 2)));
        let q = tape.constant(Tensor::zeros(Shape::new(1, 1, 2, 3)));
        assert!(tape.bce_loss(p, q).is_err());
        assert!(tape.soft_dice_loss(p, q).is_err());
        assert!(tape.add(p, q).is_err());
    }

    #[test]
    fn topological_order_holds() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::ones(Shape::new(1, 1, 4, 4)));
        let p = tape.maxpool2x2(x).unwrap();
        let u = tape.upsample_nearest2x(p);
        let c = tape.concat_channels(u, x).unwrap();
        for (i, node) in tape.nodes.iter().enumerate() {
            assert!(node.op.inputs().iter().all(|v| v.0 < i));
        }
        assert_eq!(tape.shape(c), Shape::new(1, 2, 4, 4));
    }
}
