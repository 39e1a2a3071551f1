use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a tensor inside a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TensorId(pub usize);

/// Row-major matrix with a name. Biases are `rows x 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<S> {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    #[inline]
    pub fn at(&self, r: usize, c: usize) -> S {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[S] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// Flat, named parameter store.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet<S> {
    tensors: Vec<Tensor<S>>,
}

impl<S: Scalar> ParamSet<S> {
    pub fn new() -> Self {
        Self { tensors: Vec::new() }
    }

    pub fn push(&mut self, tensor: Tensor<S>) -> TensorId {
        self.tensors.push(tensor);
        TensorId(self.tensors.len() - 1)
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> TensorId {
        self.push(Tensor {
            name: name.into(),
            rows,
            cols,
            data: vec![S::zero(); rows * cols],
        })
    }

    /// Adds a tensor drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn add_uniform<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        fan_in: usize,
        rng: &mut R,
    ) -> TensorId {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| S::lit(rng.gen_range(-bound..=bound)))
            .collect();
        self.push(Tensor {
            name: name.into(),
            rows,
            cols,
            data,
        })
    }

    #[inline]
    pub fn get(&self, id: TensorId) -> &Tensor<S> {
        &self.tensors[id.0]
    }

    #[inline]
    pub fn get_mut(&mut self, id: TensorId) -> &mut Tensor<S> {
        &mut self.tensors[id.0]
    }

    pub fn tensors(&self) -> &[Tensor<S>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<S>] {
        &mut self.tensors
    }

    pub fn find(&self, name: &str) -> Option<TensorId> {
        self.tensors.iter().position(|t| t.name == name).map(TensorId)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|x| x.is_finite()))
    }

    /// Flat view over every scalar, in tensor order.
    pub fn flat_get(&self, mut index: usize) -> S {
        for t in &self.tensors {
            if index < t.data.len() {
                return t.data[index];
            }
            index -= t.data.len();
        }
        panic!("flat parameter index out of range");
    }

    pub fn flat_set(&mut self, mut index: usize, value: S) {
        for t in &mut self.tensors {
            if index < t.data.len() {
                t.data[index] = value;
                return;
            }
            index -= t.data.len();
        }
        panic!("flat parameter index out of range");
    }

    /// Copies values from `other` after checking names and shapes agree.
    pub fn load_from(&mut self, other: &ParamSet<S>) -> Result<()> {
        for t in &mut self.tensors {
            let src = other
                .tensors
                .iter()
                .find(|o| o.name == t.name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{}`", t.name)))?;
            if (src.rows, src.cols) != (t.rows, t.cols) {
                return Err(Error::Checkpoint(format!(
                    "tensor `{}` has shape {}x{}, expected {}x{}",
                    t.name, src.rows, src.cols, t.rows, t.cols
                )));
            }
            t.data.clone_from(&src.data);
        }
        Ok(())
    }

    pub fn cast<T: Scalar>(&self) -> ParamSet<T> {
        ParamSet {
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor {
                    name: t.name.clone(),
                    rows: t.rows,
                    cols: t.cols,
                    data: t.data.iter().map(|x| T::lit(x.as_f64())).collect(),
                })
                .collect(),
        }
    }
}

/// Gradient accumulator, shape-matched to a [`ParamSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradTape<S> {
    grads: Vec<Vec<S>>,
    /// Number of contributions merged into this tape.
    pub steps: usize,
}

impl<S: Scalar> GradTape<S> {
    pub fn zeros_like(params: &ParamSet<S>) -> Self {
        Self {
            grads: params
                .tensors
                .iter()
                .map(|t| vec![S::zero(); t.data.len()])
                .collect(),
            steps: 0,
        }
    }

    pub fn zero(&mut self) {
        for g in &mut self.grads {
            g.iter_mut().for_each(|x| *x = S::zero());
        }
        self.steps = 0;
    }

    #[inline]
    pub fn grad(&self, id: TensorId) -> &[S] {
        &self.grads[id.0]
    }

    #[inline]
    pub fn grad_mut(&mut self, id: TensorId) -> &mut [S] {
        &mut self.grads[id.0]
    }

    pub fn grads(&self) -> &[Vec<S>] {
        &self.grads
    }

    pub fn flat_get(&self, mut index: usize) -> S {
        for g in &self.grads {
            if index < g.len() {
                return g[index];
            }
            index -= g.len();
        }
        panic!("flat gradient index out of range");
    }

    pub fn merge(&mut self, other: &GradTape<S>) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
        self.steps += other.steps;
    }

    pub fn scale(&mut self, factor: S) {
        for g in &mut self.grads {
            g.iter_mut().for_each(|x| *x *= factor);
        }
    }

    pub fn global_norm(&self) -> S {
        self.grads
            .iter()
            .flat_map(|g| g.iter())
            .map(|&x| x * x)
            .sum::<S>()
            .sqrt()
    }

    /// Rescales so the global norm is at most `max_norm`; returns the norm before clipping.
    pub fn clip_global_norm(&mut self, max_norm: S) -> S {
        let norm = self.global_norm();
        if norm > max_norm && norm > S::zero() {
            self.scale(max_norm / norm);
        }
        norm
    }

    pub fn all_finite(&self) -> bool {
        self.grads.iter().all(|g| g.iter().all(|x| x.is_finite()))
    }

    pub fn is_zero(&self) -> bool {
        self.grads.iter().all(|g| g.iter().all(|x| *x == S::zero()))
    }
}
