use rand::Rng;

use super::params::{GradTape, ParamSet, TensorId};
use crate::scalar::Scalar;

/// Affine layer `y = W x + b`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dense {
    pub w: TensorId,
    pub b: TensorId,
    pub input: usize,
    pub output: usize,
}

impl Dense {
    /// Registers uniformly initialized weights and a zero bias.
    pub fn register<S: Scalar, R: Rng + ?Sized>(
        params: &mut ParamSet<S>,
        prefix: &str,
        input: usize,
        output: usize,
        rng: &mut R,
    ) -> Self {
        let w = params.add_uniform(format!("{prefix}.w"), output, input, input, rng);
        let b = params.add_zeros(format!("{prefix}.b"), output, 1);
        Self { w, b, input, output }
    }

    pub fn forward<S: Scalar>(&self, params: &ParamSet<S>, x: &[S]) -> Vec<S> {
        debug_assert_eq!(x.len(), self.input);
        let w = params.get(self.w);
        let b = &params.get(self.b).data;
        (0..self.output)
            .map(|r| b[r] + dot(w.row(r), x))
            .collect()
    }

    /// Accumulates parameter gradients and returns `dL/dx`.
    pub fn backward<S: Scalar>(
        &self,
        params: &ParamSet<S>,
        x: &[S],
        dy: &[S],
        tape: &mut GradTape<S>,
    ) -> Vec<S> {
        let w = params.get(self.w);
        let mut dx = vec![S::zero(); self.input];
        {
            let gw = tape.grad_mut(self.w);
            for (r, &d) in dy.iter().enumerate() {
                if d == S::zero() {
                    continue;
                }
                let row = &mut gw[r * self.input..(r + 1) * self.input];
                for ((g, &xi), (dxi, &wi)) in row.iter_mut().zip(x).zip(dx.iter_mut().zip(w.row(r))) {
                    *g += d * xi;
                    *dxi += d * wi;
                }
            }
        }
        let gb = tape.grad_mut(self.b);
        for (g, &d) in gb.iter_mut().zip(dy) {
            *g += d;
        }
        dx
    }
}

#[inline]
pub(crate) fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).fold(S::zero(), |acc, (&x, &y)| acc + x * y)
}
