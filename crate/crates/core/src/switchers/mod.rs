//! Switching detectors: given a scene and the end-to-end prediction, decide
//! whether to fall back to the planning-based predictor. Four detectors are
//! provided plus shared threshold tuning and ground-truth labeling.

pub mod bayes;
pub mod classifier;
pub mod ensemble;
pub mod gan;

pub use bayes::{bayes_likelihood, bayes_switch, BayesConfig, BayesMode};
pub use classifier::{
    ce_loss, classifier_features, classifier_score, classifier_switch, classifier_train,
    BadPredictionClassifier, ClassifierConfig,
};
pub use ensemble::{
    disagreement_from_finals, ensemble_disagreement, ensemble_switch, train_ensemble, worker_cap,
    Ensemble, ENSEMBLE_SIZE,
};
pub use gan::{
    bce, bce_dout, gan_sample, gan_score, gan_score_flat, gan_switch, gan_train, GanConfig,
    GanPair,
};

use serde::{Deserialize, Serialize};

use crate::e2e::E2EModel;
use crate::error::{Error, Result};
use crate::types::{ade, Dataset};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwitchDecision {
    pub score: f64,
    /// 0 = trust the end-to-end predictor, 1 = switch to the planner.
    pub decision: u8,
    pub threshold_used: f64,
}

/// Which side of the threshold triggers a switch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SwitchDirection {
    /// Switch when score < tau (low likelihood / low realness).
    Below,
    /// Switch when score >= tau (high disagreement).
    AboveOrEqual,
}

pub fn decide(score: f64, tau: f64, direction: SwitchDirection) -> u8 {
    let switch = match direction {
        SwitchDirection::Below => score < tau,
        SwitchDirection::AboveOrEqual => score >= tau,
    };
    switch as u8
}

/// True when the ADE falls in the bad tail under the 2-sigma rule.
pub fn label_rule(ade: f64, mean: f64, std: f64) -> u8 {
    (ade > mean + 2.0 * std) as u8
}

/// Apply the 2-sigma rule to a list of ADEs using its own statistics.
/// Returns (labels, mean, population std).
pub fn labels_from_ades(ades: &[f64]) -> (Vec<u8>, f64, f64) {
    let n = ades.len().max(1) as f64;
    let mean = ades.iter().sum::<f64>() / n;
    let var = ades.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    let labels = ades.iter().map(|a| label_rule(*a, mean, std)).collect();
    (labels, mean, std)
}

/// Per-segment ADE of the model's most probable prediction, then the
/// 2-sigma labeling rule over this dataset's statistics.
pub fn label_bad_predictions(model: &E2EModel, data: &Dataset) -> Result<(Vec<u8>, f64, f64)> {
    if data.segments.is_empty() {
        return Err(Error::invalid("labeling set", "no segments"));
    }
    let mut ades = Vec::with_capacity(data.segments.len());
    for seg in &data.segments {
        let pred = model.predict(&seg.scene)?.most_probable();
        ades.push(ade(&pred, &seg.label)?);
    }
    Ok(labels_from_ades(&ades))
}

/// Balanced accuracy of thresholded decisions against binary labels.
pub fn balanced_accuracy(
    scores: &[f64],
    labels: &[u8],
    tau: f64,
    direction: SwitchDirection,
) -> f64 {
    let mut hits = [0usize; 2];
    let mut totals = [0usize; 2];
    for (s, l) in scores.iter().zip(labels) {
        let c = *l as usize;
        totals[c] += 1;
        if decide(*s, tau, direction) == *l {
            hits[c] += 1;
        }
    }
    let acc = |c: usize| {
        if totals[c] == 0 {
            0.0
        } else {
            hits[c] as f64 / totals[c] as f64
        }
    };
    (acc(0) + acc(1)) / 2.0
}

/// Sweep midpoints of sorted unique scores and return the threshold with
/// maximal balanced accuracy; ties resolve to the smallest threshold.
pub fn tune_threshold(
    scores: &[f64],
    labels: &[u8],
    direction: SwitchDirection,
) -> Result<f64> {
    assert_eq!(scores.len(), labels.len());
    let positives = labels.iter().filter(|l| **l == 1).count();
    if positives == 0 || positives == labels.len() {
        return Err(Error::SingleClass {
            positives,
            total: labels.len(),
        });
    }
    let mut unique: Vec<f64> = scores.to_vec();
    unique.sort_by(|a, b| a.partial_cmp(b).unwrap());
    unique.dedup();
    let mut best: Option<(f64, f64)> = None;
    for w in unique.windows(2) {
        let tau = (w[0] + w[1]) / 2.0;
        let acc = balanced_accuracy(scores, labels, tau, direction);
        match best {
            Some((ba, bt)) if acc < ba || (acc == ba && bt <= tau) => {}
            _ => best = Some((acc, tau)),
        }
    }
    best.map(|(_, t)| t).ok_or(Error::SingleClass {
        positives,
        total: labels.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn label_rule_hand_cases() {
        assert_eq!(label_rule(1.2, 0.5, 0.25), 1);
        assert_eq!(label_rule(0.9, 0.5, 0.25), 0);
        // Exactly at the threshold is not strictly beyond it.
        assert_eq!(label_rule(1.0, 0.5, 0.25), 0);
    }

    #[test]
    fn identical_ades_all_zero_labels() {
        let (labels, _, std) = labels_from_ades(&[0.5; 12]);
        assert_eq!(std, 0.0);
        assert!(labels.iter().all(|l| *l == 0));
    }

    #[test]
    fn tune_separated_scores_is_perfect() {
        // Bad examples have low scores (Below direction).
        let scores = [0.9, 0.8, 0.85, 0.1, 0.2];
        let labels = [0, 0, 0, 1, 1];
        let tau = tune_threshold(&scores, &labels, SwitchDirection::Below).unwrap();
        assert!(tau > 0.2 && tau < 0.8);
        assert_eq!(
            balanced_accuracy(&scores, &labels, tau, SwitchDirection::Below),
            1.0
        );
    }

    #[test]
    fn tune_random_labels_is_chance_level() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let scores: Vec<f64> = (0..1000).map(|_| rng.gen_range(0.0..1.0)).collect();
        let labels: Vec<u8> = (0..1000).map(|_| rng.gen_range(0..2) as u8).collect();
        let tau = tune_threshold(&scores, &labels, SwitchDirection::Below).unwrap();
        let acc = balanced_accuracy(&scores, &labels, tau, SwitchDirection::Below);
        // Best-of-sweep on random labels sits just above chance.
        assert!((acc - 0.5).abs() < 0.1, "balanced accuracy {acc}");
    }

    #[test]
    fn tune_scale_equivariance() {
        let scores = [0.9, 0.8, 0.3, 0.1, 0.2, 0.7];
        let labels = [0, 0, 1, 1, 1, 0];
        let tau = tune_threshold(&scores, &labels, SwitchDirection::Below).unwrap();
        let doubled: Vec<f64> = scores.iter().map(|s| s * 2.0).collect();
        let tau2 = tune_threshold(&doubled, &labels, SwitchDirection::Below).unwrap();
        assert!((tau2 - 2.0 * tau).abs() < 1e-12);
        for (s, d) in scores.iter().zip(&doubled) {
            assert_eq!(
                decide(*s, tau, SwitchDirection::Below),
                decide(*d, tau2, SwitchDirection::Below)
            );
        }
    }

    #[test]
    fn tune_single_class_is_error() {
        let err = tune_threshold(&[0.1, 0.2], &[0, 0], SwitchDirection::Below).unwrap_err();
        assert!(matches!(err, Error::SingleClass { positives: 0, total: 2 }));
    }

    #[test]
    fn tie_break_prefers_smallest_tau() {
        // Midpoints 0.5 and 2.5 both reach balanced accuracy 0.75; the
        // smaller one wins.
        let scores = [0.0, 1.0, 2.0, 3.0];
        let labels = [1, 0, 1, 0];
        let tau = tune_threshold(&scores, &labels, SwitchDirection::Below).unwrap();
        assert_eq!(tau, 0.5);
    }
}
