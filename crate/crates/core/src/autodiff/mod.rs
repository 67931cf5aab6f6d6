//! Tensor ops with reverse-mode differentiation.
//!
//! [`Graph`] abstracts over where the ops run: [`Tape`] records them for a
//! backward pass, [`Eager`] evaluates them directly and lets intermediates
//! drop as soon as they are consumed. Model code is written once against
//! the trait.

use std::borrow::Cow;
use std::marker::PhantomData;

pub mod kernels;
mod tape;

pub use kernels::Padding;
pub use tape::{Gradients, Tape, Var, BCE_CLAMP, DICE_SMOOTH};

use crate::error::Result;
use crate::tensor::{Real, Shape, Tensor};

pub trait Graph<T: Real> {
    type Node;

    fn shape(&self, x: &Self::Node) -> Shape;
    fn conv2d(&mut self, x: &Self::Node, w: &Self::Node, b: &Self::Node, padding: Padding) -> Result<Self::Node>;
    fn relu(&mut self, x: &Self::Node) -> Self::Node;
    fn sigmoid(&mut self, x: &Self::Node) -> Self::Node;
    fn maxpool2x2(&mut self, x: &Self::Node) -> Result<Self::Node>;
    fn upsample_nearest2x(&mut self, x: &Self::Node) -> Self::Node;
    fn concat_channels(&mut self, a: &Self::Node, b: &Self::Node) -> Result<Self::Node>;
}

impl<T: Real> Graph<T> for Tape<T> {
    type Node = Var;

    fn shape(&self, x: &Var) -> Shape {
        Tape::shape(self, *x)
    }

    fn conv2d(&mut self, x: &Var, w: &Var, b: &Var, padding: Padding) -> Result<Var> {
        Tape::conv2d(self, *x, *w, *b, padding)
    }

    fn relu(&mut self, x: &Var) -> Var {
        Tape::relu(self, *x)
    }

    fn sigmoid(&mut self, x: &Var) -> Var {
        Tape::sigmoid(self, *x)
    }

    fn maxpool2x2(&mut self, x: &Var) -> Result<Var> {
        Tape::maxpool2x2(self, *x)
    }

    fn upsample_nearest2x(&mut self, x: &Var) -> Var {
        Tape::upsample_nearest2x(self, *x)
    }

    fn concat_channels(&mut self, a: &Var, b: &Var) -> Result<Var> {
        Tape::concat_channels(self, *a, *b)
    }
}

/// Gradient-free executor. Parameters can be borrowed, so inference never
/// copies the model.
#[derive(Debug, Default, Clone, Copy)]
pub struct Eager<'a>(PhantomData<&'a ()>);

impl Eager<'_> {
    pub fn new() -> Self {
        Eager(PhantomData)
    }
}

impl<'a, T: Real> Graph<T> for Eager<'a> {
    type Node = Cow<'a, Tensor<T>>;

    fn shape(&self, x: &Self::Node) -> Shape {
        x.shape()
    }

    fn conv2d(&mut self, x: &Self::Node, w: &Self::Node, b: &Self::Node, padding: Padding) -> Result<Self::Node> {
        kernels::conv2d(x, w, b.data(), padding).map(Cow::Owned)
    }

    fn relu(&mut self, x: &Self::Node) -> Self::Node {
        Cow::Owned(kernels::relu(x))
    }

    fn sigmoid(&mut self, x: &Self::Node) -> Self::Node {
        Cow::Owned(kernels::sigmoid(x))
    }

    fn maxpool2x2(&mut self, x: &Self::Node) -> Result<Self::Node> {
        kernels::maxpool2x2(x).map(|(y, _)| Cow::Owned(y))
    }

    fn upsample_nearest2x(&mut self, x: &Self::Node) -> Self::Node {
        Cow::Owned(kernels::upsample_nearest2x(x))
    }

    fn concat_channels(&mut self, a: &Self::Node, b: &Self::Node) -> Result<Self::Node> {
        kernels::concat_channels(a, b).map(Cow::Owned)
    }
}
