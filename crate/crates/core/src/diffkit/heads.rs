use rand::Rng;

use super::dense::Dense;
use super::params::{GradTape, ParamSet};
use crate::scalar::{sigmoid, softmax, Scalar};

/// Output heads reading the top LSTM state: segment location as
/// `(center, width)`, class logits over `K + 1` labels, and the mean of the
/// next observation position.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Heads {
    pub loc: Dense,
    pub cls: Dense,
    pub next: Dense,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadOutput<S> {
    pub center: S,
    pub width: S,
    pub logits: Vec<S>,
    pub probs: Vec<S>,
    pub xi_mean: S,
}

/// Upstream gradients on the post-activation head outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadGrads<S> {
    pub d_center: S,
    pub d_width: S,
    pub d_logits: Vec<S>,
    pub d_xi_mean: S,
}

impl<S: Scalar> HeadGrads<S> {
    pub fn zeros(num_classes: usize) -> Self {
        Self {
            d_center: S::zero(),
            d_width: S::zero(),
            d_logits: vec![S::zero(); num_classes],
            d_xi_mean: S::zero(),
        }
    }
}

impl Heads {
    pub fn register<S: Scalar, R: Rng + ?Sized>(
        params: &mut ParamSet<S>,
        hidden: usize,
        num_classes: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            loc: Dense::register(params, "head.loc", hidden, 2, rng),
            cls: Dense::register(params, "head.cls", hidden, num_classes, rng),
            next: Dense::register(params, "head.next", hidden, 1, rng),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.cls.output
    }

    pub fn forward<S: Scalar>(&self, params: &ParamSet<S>, h: &[S]) -> HeadOutput<S> {
        let loc = self.loc.forward(params, h);
        let logits = self.cls.forward(params, h);
        let next = self.next.forward(params, h);
        HeadOutput {
            center: sigmoid(loc[0]),
            width: sigmoid(loc[1]),
            probs: softmax(&logits),
            logits,
            xi_mean: sigmoid(next[0]),
        }
    }

    /// Accumulates head gradients and returns `dL/dh`.
    pub fn backward<S: Scalar>(
        &self,
        params: &ParamSet<S>,
        h: &[S],
        out: &HeadOutput<S>,
        grads: &HeadGrads<S>,
        tape: &mut GradTape<S>,
    ) -> Vec<S> {
        let dsig = |y: S| y * (S::one() - y);
        let d_loc = [grads.d_center * dsig(out.center), grads.d_width * dsig(out.width)];
        let d_next = [grads.d_xi_mean * dsig(out.xi_mean)];
        let mut dh = self.loc.backward(params, h, &d_loc, tape);
        for (a, b) in dh.iter_mut().zip(self.cls.backward(params, h, &grads.d_logits, tape)) {
            *a += b;
        }
        for (a, b) in dh.iter_mut().zip(self.next.backward(params, h, &d_next, tape)) {
            *a += b;
        }
        dh
    }
}
