use rand::Rng;

use super::dense::dot;
use super::params::{GradTape, ParamSet, TensorId};
use crate::error::{Error, Result};
use crate::scalar::{sigmoid, Scalar};

/// Gate blocks are stacked in the order input, forget, candidate, output.
const GATES: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct LstmLayer {
    wx: TensorId,
    wh: TensorId,
    b: TensorId,
    input: usize,
}

/// Stacked LSTM whose weights live in a [`ParamSet`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Lstm {
    layers: Vec<LstmLayer>,
    input_dim: usize,
    hidden: usize,
}

/// Hidden and cell state of every layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmState<S> {
    pub h: Vec<Vec<S>>,
    pub c: Vec<Vec<S>>,
}

impl<S: Scalar> LstmState<S> {
    /// Hidden state of the top layer.
    pub fn top(&self) -> &[S] {
        self.h.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

#[derive(Clone, Debug)]
struct LayerCache<S> {
    x: Vec<S>,
    h_prev: Vec<S>,
    c_prev: Vec<S>,
    i: Vec<S>,
    f: Vec<S>,
    g: Vec<S>,
    o: Vec<S>,
    tanh_c: Vec<S>,
}

/// Intermediates of one time step, all layers.
#[derive(Clone, Debug)]
pub struct LstmStepCache<S> {
    layers: Vec<LayerCache<S>>,
}

/// Per-step caches of a whole sequence.
pub type LstmCache<S> = Vec<LstmStepCache<S>>;

impl Lstm {
    /// Registers `layers` stacked cells. Weights are uniform in
    /// `+-1/sqrt(fan_in)`, the forget-gate bias starts at 1.
    pub fn register<S: Scalar, R: Rng + ?Sized>(
        params: &mut ParamSet<S>,
        prefix: &str,
        input_dim: usize,
        hidden: usize,
        layers: usize,
        rng: &mut R,
    ) -> Self {
        let mut out = Vec::with_capacity(layers);
        for l in 0..layers {
            let input = if l == 0 { input_dim } else { hidden };
            let wx = params.add_uniform(format!("{prefix}.l{l}.wx"), GATES * hidden, input, input, rng);
            let wh = params.add_uniform(format!("{prefix}.l{l}.wh"), GATES * hidden, hidden, hidden, rng);
            let b = params.add_zeros(format!("{prefix}.l{l}.b"), GATES * hidden, 1);
            for v in &mut params.get_mut(b).data[hidden..2 * hidden] {
                *v = S::one();
            }
            out.push(LstmLayer { wx, wh, b, input });
        }
        Self {
            layers: out,
            input_dim,
            hidden,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn zero_state<S: Scalar>(&self) -> LstmState<S> {
        LstmState {
            h: vec![vec![S::zero(); self.hidden]; self.layers.len()],
            c: vec![vec![S::zero(); self.hidden]; self.layers.len()],
        }
    }

    /// Advances every layer by one step.
    pub fn step<S: Scalar>(
        &self,
        params: &ParamSet<S>,
        x: &[S],
        state: &LstmState<S>,
    ) -> Result<(LstmState<S>, LstmStepCache<S>)> {
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                context: "lstm input",
                expected: self.input_dim,
                actual: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("lstm input".into()));
        }
        let hsz = self.hidden;
        let mut next = LstmState {
            h: Vec::with_capacity(self.layers.len()),
            c: Vec::with_capacity(self.layers.len()),
        };
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut input = x.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            let wx = params.get(layer.wx);
            let wh = params.get(layer.wh);
            let b = &params.get(layer.b).data;
            let h_prev = &state.h[l];
            let c_prev = &state.c[l];
            let mut i = vec![S::zero(); hsz];
            let mut f = vec![S::zero(); hsz];
            let mut g = vec![S::zero(); hsz];
            let mut o = vec![S::zero(); hsz];
            for k in 0..hsz {
                let pre = |gate: usize| {
                    let r = gate * hsz + k;
                    b[r] + dot(wx.row(r), &input) + dot(wh.row(r), h_prev)
                };
                i[k] = sigmoid(pre(0));
                f[k] = sigmoid(pre(1));
                g[k] = pre(2).tanh();
                o[k] = sigmoid(pre(3));
            }
            let c: Vec<S> = (0..hsz).map(|k| f[k] * c_prev[k] + i[k] * g[k]).collect();
            let tanh_c: Vec<S> = c.iter().map(|v| v.tanh()).collect();
            let h: Vec<S> = (0..hsz).map(|k| o[k] * tanh_c[k]).collect();
            caches.push(LayerCache {
                x: std::mem::replace(&mut input, h.clone()),
                h_prev: h_prev.clone(),
                c_prev: c_prev.clone(),
                i,
                f,
                g,
                o,
                tanh_c,
            });
            next.h.push(h);
            next.c.push(c);
        }
        Ok((next, LstmStepCache { layers: caches }))
    }

    /// Runs a whole sequence; returns the top-layer hidden state per step.
    pub fn forward<S: Scalar>(
        &self,
        params: &ParamSet<S>,
        inputs: &[Vec<S>],
        initial: &LstmState<S>,
    ) -> Result<(Vec<Vec<S>>, LstmState<S>, LstmCache<S>)> {
        let mut state = initial.clone();
        let mut hs = Vec::with_capacity(inputs.len());
        let mut cache = Vec::with_capacity(inputs.len());
        for x in inputs {
            let (next, step_cache) = self.step(params, x, &state)?;
            hs.push(next.top().to_vec());
            cache.push(step_cache);
            state = next;
        }
        Ok((hs, state, cache))
    }

    /// Backpropagation through time from gradients on the top-layer hidden
    /// states. The final state is treated as having zero gradient. Returns
    /// the gradient with respect to every input vector.
    pub fn backward<S: Scalar>(
        &self,
        params: &ParamSet<S>,
        cache: &[LstmStepCache<S>],
        dh_top: &[Vec<S>],
        tape: &mut GradTape<S>,
    ) -> Result<Vec<Vec<S>>> {
        if cache.len() != dh_top.len() {
            return Err(Error::DimensionMismatch {
                context: "lstm backward steps",
                expected: cache.len(),
                actual: dh_top.len(),
            });
        }
        let hsz = self.hidden;
        let steps = cache.len();
        let mut from_above: Vec<Vec<S>> = dh_top.to_vec();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let wx = params.get(layer.wx);
            let wh = params.get(layer.wh);
            let mut dx_all = vec![vec![S::zero(); layer.input]; steps];
            let mut dh_next = vec![S::zero(); hsz];
            let mut dc_next = vec![S::zero(); hsz];
            let mut dz = vec![S::zero(); GATES * hsz];
            let mut gwx = vec![S::zero(); GATES * hsz * layer.input];
            let mut gwh = vec![S::zero(); GATES * hsz * hsz];
            let mut gb = vec![S::zero(); GATES * hsz];
            for t in (0..steps).rev() {
                let lc = &cache[t].layers[l];
                for k in 0..hsz {
                    let dh = from_above[t][k] + dh_next[k];
                    let one = S::one();
                    let dc = dc_next[k] + dh * lc.o[k] * (one - lc.tanh_c[k] * lc.tanh_c[k]);
                    dz[k] = dc * lc.g[k] * lc.i[k] * (one - lc.i[k]);
                    dz[hsz + k] = dc * lc.c_prev[k] * lc.f[k] * (one - lc.f[k]);
                    dz[2 * hsz + k] = dc * lc.i[k] * (one - lc.g[k] * lc.g[k]);
                    dz[3 * hsz + k] = dh * lc.tanh_c[k] * lc.o[k] * (one - lc.o[k]);
                    dc_next[k] = dc * lc.f[k];
                }
                dh_next.iter_mut().for_each(|v| *v = S::zero());
                let dx = &mut dx_all[t];
                for (r, &d) in dz.iter().enumerate() {
                    if d == S::zero() {
                        continue;
                    }
                    gb[r] += d;
                    let xr = &mut gwx[r * layer.input..(r + 1) * layer.input];
                    for ((g, &xv), (dxv, &w)) in xr.iter_mut().zip(&lc.x).zip(dx.iter_mut().zip(wx.row(r))) {
                        *g += d * xv;
                        *dxv += d * w;
                    }
                    let hr = &mut gwh[r * hsz..(r + 1) * hsz];
                    for ((g, &hv), (dhv, &w)) in hr.iter_mut().zip(&lc.h_prev).zip(dh_next.iter_mut().zip(wh.row(r))) {
                        *g += d * hv;
                        *dhv += d * w;
                    }
                }
            }
            accumulate(tape.grad_mut(layer.wx), &gwx);
            accumulate(tape.grad_mut(layer.wh), &gwh);
            accumulate(tape.grad_mut(layer.b), &gb);
            from_above = dx_all;
        }
        tape.steps += 1;
        Ok(from_above)
    }
}

fn accumulate<S: Scalar>(dst: &mut [S], src: &[S]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
