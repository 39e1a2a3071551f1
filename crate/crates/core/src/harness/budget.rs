use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-component costs of one detection pass, in milliseconds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetCostModel {
    /// Feature extraction per frame.
    pub feature_ms: f64,
    /// Frame difference per frame.
    pub diff_ms: f64,
    /// One recurrent policy step.
    pub recurrent_ms: f64,
    /// One boundary regression.
    pub regression_ms: f64,
    /// Frames read around each selected frame.
    pub neighborhood: usize,
    /// Frames sampled by the boundary regressor.
    pub kappa: usize,
}

impl Default for BudgetCostModel {
    fn default() -> Self {
        Self {
            feature_ms: 3.0,
            diff_ms: 0.1,
            recurrent_ms: 5.4,
            regression_ms: 5.5,
            neighborhood: 15,
            kappa: 10,
        }
    }
}

impl BudgetCostModel {
    pub fn validate(&self) -> Result<()> {
        let costs = [self.feature_ms, self.diff_ms, self.recurrent_ms, self.regression_ms];
        if costs.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::Config("budget costs must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// Estimated milliseconds for `steps` policy steps, plus one regression
/// pass when `regression` is set.
pub fn estimate_budget(model: &BudgetCostModel, steps: usize, regression: bool) -> Result<f64> {
    model.validate()?;
    if steps == 0 {
        return Err(Error::Config("budget needs at least one step".into()));
    }
    let t = steps as f64;
    let nbhd = model.neighborhood as f64;
    let mut ms = model.diff_ms * nbhd * t + model.feature_ms * nbhd * t + model.recurrent_ms * t;
    if regression {
        let k = model.kappa as f64;
        ms += model.diff_ms * k + model.feature_ms * k + model.regression_ms;
    }
    Ok(ms)
}
