//! Online failure detector: once the first m steps of the predicted future
//! have actually been observed, score how likely they were under the
//! prediction and switch when that likelihood is too low.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{GaussianTrajectory, Trajectory, LABEL_LEN};

use super::{decide, SwitchDecision, SwitchDirection};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BayesMode {
    GaussianLikelihood,
    L2Proxy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BayesConfig {
    /// Observed prediction steps before the decision is available.
    pub m: usize,
    pub tau: f64,
    pub mode: BayesMode,
}

impl BayesConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.m > LABEL_LEN {
            return Err(Error::invalid(
                "bayes config",
                format!("m = {} out of range 1..={LABEL_LEN}", self.m),
            ));
        }
        Ok(())
    }
}

/// Likelihood score of the first m observed steps under the prediction.
/// gaussian mode: geometric mean of the per-step densities. l2 mode:
/// exp(-mean distance), so -ln(score) is exactly the m-step ADE.
pub fn bayes_likelihood(
    pred: &GaussianTrajectory,
    observed: &Trajectory,
    m: usize,
    mode: BayesMode,
) -> Result<f64> {
    if m == 0 || m > pred.steps.len() || m > observed.len() {
        return Err(Error::invalid(
            "bayes likelihood",
            format!(
                "m = {m} out of range for prediction of {} and observation of {}",
                pred.steps.len(),
                observed.len()
            ),
        ));
    }
    match mode {
        BayesMode::L2Proxy => {
            let sum: f64 = pred
                .steps
                .iter()
                .zip(&observed.points)
                .take(m)
                .map(|(s, p)| ((p.x - s.mu_x).powi(2) + (p.y - s.mu_y).powi(2)).sqrt())
                .sum();
            Ok((-sum / m as f64).exp())
        }
        BayesMode::GaussianLikelihood => {
            const LN_2PI: f64 = 1.837_877_066_409_345_6;
            let mut log_sum = 0.0;
            for (s, p) in pred.steps.iter().zip(&observed.points).take(m) {
                for (mu, sg, x) in [(s.mu_x, s.sigma_x, p.x), (s.mu_y, s.sigma_y, p.y)] {
                    log_sum += -0.5 * LN_2PI - sg.ln() - (x - mu) * (x - mu) / (2.0 * sg * sg);
                }
            }
            Ok((log_sum / m as f64).exp())
        }
    }
}

/// Switch when the likelihood score falls below tau.
pub fn bayes_switch(score: f64, tau: f64) -> SwitchDecision {
    SwitchDecision {
        score,
        decision: decide(score, tau, SwitchDirection::Below),
        threshold_used: tau,
    }
}
