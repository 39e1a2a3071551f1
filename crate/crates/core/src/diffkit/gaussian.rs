use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// `log N(x; mean, variance)` and its derivative with respect to `mean`.
pub fn gaussian_logpdf<S: Scalar>(x: S, mean: S, variance: S) -> Result<(S, S)> {
    if !(variance > S::zero()) || !variance.is_finite() {
        return Err(Error::Config(format!("gaussian variance must be > 0, got {variance}")));
    }
    let two = S::lit(2.0);
    let diff = x - mean;
    let two_pi = S::lit(std::f64::consts::TAU);
    let logp = -(two_pi * variance).ln() / two - diff * diff / (two * variance);
    Ok((logp, diff / variance))
}
