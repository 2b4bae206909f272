//! Minimal dense layers with hand-written reverse passes.
//!
//! Every layer exposes a training forward that returns a cache, an inference
//! forward without one, and a backward that maps an upstream gradient to the
//! input gradient while optionally accumulating parameter gradients into a
//! layer of the same shape. All parameters are stored as 2-D arrays so that
//! optimizers, checksums and checkpoints treat them uniformly.

mod conv;
mod lstm;
mod optim;

use std::fmt::{Debug, Display};

use ndarray::{Array2, ArrayView2, Axis, LinalgScalar, ScalarOperand, Zip};
use num_traits::{Float, FromPrimitive};
use rand::Rng;
use rand_distr::{Distribution, Uniform};

pub use conv::{ConvEncoder, ConvEncoderCache};
pub use lstm::{BiLstm, BiLstmCache};
pub use optim::{GroupOptimizer, OptimizerKind};

/// Floating point scalar usable by every layer.
pub trait Real:
    Float
    + FromPrimitive
    + LinalgScalar
    + ScalarOperand
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + std::iter::Sum
    + 'static
{
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal fits the scalar type")
    }

    /// Little-endian bytes, used for checksums and checkpoints.
    fn le_bytes(self) -> Vec<u8>;

    fn from_le(bytes: &[u8]) -> Option<Self>;

    const WIDTH: usize;
}

impl Real for f32 {
    fn le_bytes(self) -> Vec<u8> {
        self.to_le_bytes().to_vec()
    }

    fn from_le(bytes: &[u8]) -> Option<Self> {
        Some(f32::from_le_bytes(bytes.try_into().ok()?))
    }

    const WIDTH: usize = 4;
}

impl Real for f64 {
    fn le_bytes(self) -> Vec<u8> {
        self.to_le_bytes().to_vec()
    }

    fn from_le(bytes: &[u8]) -> Option<Self> {
        Some(f64::from_le_bytes(bytes.try_into().ok()?))
    }

    const WIDTH: usize = 8;
}

/// Uniform access to the trainable tensors of a component.
pub trait Parameters<R: Real> {
    fn params(&self) -> Vec<&Array2<R>>;
    fn params_mut(&mut self) -> Vec<&mut Array2<R>>;

    fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    fn zero(&mut self) {
        for p in self.params_mut() {
            p.fill(R::zero());
        }
    }
}

pub fn sigmoid<R: Real>(x: R) -> R {
    R::one() / (R::one() + (-x).exp())
}

pub fn sigmoid_array<R: Real>(x: &Array2<R>) -> Array2<R> {
    x.mapv(sigmoid)
}

pub fn relu_array<R: Real>(x: &Array2<R>) -> Array2<R> {
    x.mapv(|v| v.max(R::zero()))
}

/// Zero the gradient wherever the forward activation was clipped by ReLU.
pub fn relu_backward<R: Real>(activated: &Array2<R>, grad: &mut Array2<R>) {
    Zip::from(grad).and(activated).for_each(|g, &a| {
        if a <= R::zero() {
            *g = R::zero();
        }
    });
}

/// Glorot-uniform matrix of shape `rows x cols`.
pub fn glorot<R: Real>(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<R> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    uniform(rows, cols, limit, rng)
}

pub fn uniform<R: Real>(rows: usize, cols: usize, limit: f64, rng: &mut impl Rng) -> Array2<R> {
    let dist = Uniform::new_inclusive(-limit, limit).expect("finite bounds");
    Array2::from_shape_simple_fn((rows, cols), || R::lit(dist.sample(rng)))
}

/// Affine layer `y = x W + b` with `W: in x out` and `b: 1 x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<R: Real> {
    pub weight: Array2<R>,
    pub bias: Array2<R>,
}

impl<R: Real> Linear<R> {
    pub fn new(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        Self {
            weight: glorot(inputs, outputs, rng),
            bias: Array2::zeros((1, outputs)),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn forward(&self, x: &ArrayView2<R>) -> Array2<R> {
        let mut y = x.dot(&self.weight);
        y += &self.bias;
        y
    }

    /// Input gradient for `dy`; parameter gradients are added into `grad` when given.
    pub fn backward(
        &self,
        x: &ArrayView2<R>,
        dy: &Array2<R>,
        grad: Option<&mut Linear<R>>,
    ) -> Array2<R> {
        if let Some(g) = grad {
            g.weight += &x.t().dot(dy);
            g.bias += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
        }
        dy.dot(&self.weight.t())
    }

    /// Parameter gradients only, when the input gradient is not needed.
    pub fn accumulate(&self, x: &ArrayView2<R>, dy: &Array2<R>, grad: &mut Linear<R>) {
        grad.weight += &x.t().dot(dy);
        grad.bias += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
    }
}

impl<R: Real> Parameters<R> for Linear<R> {
    fn params(&self) -> Vec<&Array2<R>> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Array2<R>> {
        vec![&mut self.weight, &mut self.bias]
    }
}
