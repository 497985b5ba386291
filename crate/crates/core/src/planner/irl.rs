//! Max-entropy cost learning. The demonstrated future competes against the
//! sampled candidate family in a softmax over negated costs; projected
//! gradient descent on the weights keeps them nonnegative.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::map::World;
use crate::types::Dataset;

use super::{segment_features, PlanConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    pub theta: [f64; 6],
    pub beta: f64,
}

impl CostWeights {
    pub fn new(theta: [f64; 6], beta: f64) -> Self {
        CostWeights { theta, beta }
    }

    pub fn cost(&self, f: [f64; 6]) -> f64 {
        self.theta.iter().zip(f).map(|(t, x)| t * x).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.beta <= 0.0 || !self.beta.is_finite() {
            return Err(Error::invalid("cost weights", "beta must be positive"));
        }
        if self.theta.iter().any(|t| *t < 0.0 || !t.is_finite()) {
            return Err(Error::invalid("cost weights", "theta must be nonnegative"));
        }
        Ok(())
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        serde_json::to_writer_pretty(BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let w: CostWeights = serde_json::from_reader(BufReader::new(file))?;
        w.validate()?;
        Ok(w)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IrlConfig {
    pub learning_rate: f64,
    pub iterations: usize,
    pub l2_reg: f64,
    pub beta: f64,
    pub seed: u64,
}

impl Default for IrlConfig {
    fn default() -> Self {
        IrlConfig {
            learning_rate: 0.05,
            iterations: 300,
            l2_reg: 1e-4,
            beta: 1.0,
            seed: 0,
        }
    }
}

/// Feature matrices for one training segment: the demonstrated future plus
/// every sampled candidate.
#[derive(Debug, Clone)]
pub struct SegmentFeatures {
    pub demo: [f64; 6],
    pub candidates: Vec<[f64; 6]>,
}

#[derive(Debug, Clone)]
pub struct IrlResult {
    pub weights: CostWeights,
    /// Mean negative log-likelihood plus regularizer after each iteration.
    pub loss_history: Vec<f64>,
}

fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Mean negative log-likelihood over segments plus l2 penalty, and its
/// gradient in theta. The partition set of each segment is its candidates
/// with the demonstration appended.
pub fn irl_loss(
    theta: &[f64; 6],
    beta: f64,
    l2_reg: f64,
    segments: &[SegmentFeatures],
) -> Result<(f64, [f64; 6])> {
    let n = segments.len().max(1) as f64;
    let mut loss = 0.0;
    let mut grad = [0.0; 6];
    for (i, seg) in segments.iter().enumerate() {
        let mut neg_costs: Vec<f64> = Vec::with_capacity(seg.candidates.len() + 1);
        let mut feats: Vec<&[f64; 6]> = Vec::with_capacity(seg.candidates.len() + 1);
        for f in seg.candidates.iter().chain(std::iter::once(&seg.demo)) {
            let c: f64 = theta.iter().zip(f).map(|(t, x)| t * x).sum();
            neg_costs.push(-beta * c);
            feats.push(f);
        }
        let lse = logsumexp(&neg_costs);
        let demo_cost: f64 = theta.iter().zip(&seg.demo).map(|(t, x)| t * x).sum();
        let nll = beta * demo_cost + lse;
        if !nll.is_finite() {
            return Err(Error::NonFiniteLoss {
                stage: "irl",
                index: i,
            });
        }
        loss += nll / n;
        // Softmax expectation of the features.
        let mut expected = [0.0; 6];
        for (nc, f) in neg_costs.iter().zip(&feats) {
            let p = (nc - lse).exp();
            for j in 0..6 {
                expected[j] += p * f[j];
            }
        }
        for j in 0..6 {
            grad[j] += beta * (seg.demo[j] - expected[j]) / n;
        }
    }
    for j in 0..6 {
        loss += l2_reg * theta[j] * theta[j];
        grad[j] += 2.0 * l2_reg * theta[j];
    }
    Ok((loss, grad))
}

/// Projected gradient descent on precomputed feature matrices. Features are
/// rescaled internally so each dimension has comparable magnitude; the
/// returned weights are expressed against the raw features.
pub fn irl_train_features(segments: &[SegmentFeatures], config: &IrlConfig) -> Result<IrlResult> {
    if segments.is_empty() {
        return Err(Error::invalid("irl training set", "no segments"));
    }
    let mut scale = [0.0f64; 6];
    let mut count = 0usize;
    for seg in segments {
        for f in seg.candidates.iter().chain(std::iter::once(&seg.demo)) {
            for j in 0..6 {
                scale[j] += f[j].abs();
            }
            count += 1;
        }
    }
    for s in &mut scale {
        *s = (*s / count as f64).max(1e-8);
    }
    let scaled: Vec<SegmentFeatures> = segments
        .iter()
        .map(|seg| SegmentFeatures {
            demo: std::array::from_fn(|j| seg.demo[j] / scale[j]),
            candidates: seg
                .candidates
                .iter()
                .map(|f| std::array::from_fn(|j| f[j] / scale[j]))
                .collect(),
        })
        .collect();

    let mut theta = [1.0 / 6.0; 6];
    let mut history = Vec::with_capacity(config.iterations);
    for _ in 0..config.iterations {
        let (loss, grad) = irl_loss(&theta, config.beta, config.l2_reg, &scaled)?;
        history.push(loss);
        for j in 0..6 {
            theta[j] = (theta[j] - config.learning_rate * grad[j]).max(0.0);
        }
    }
    let theta = std::array::from_fn(|j| theta[j] / scale[j]);
    Ok(IrlResult {
        weights: CostWeights::new(theta, config.beta),
        loss_history: history,
    })
}

/// Extract features for every segment of the dataset and fit cost weights.
pub fn irl_train(
    data: &Dataset,
    worlds: &[World],
    plan: &PlanConfig,
    config: &IrlConfig,
) -> Result<IrlResult> {
    plan.family.validate()?;
    if plan.family.count() < 2 {
        return Err(Error::invalid(
            "candidate family",
            "need at least 2 candidates per segment",
        ));
    }
    let mut features = Vec::with_capacity(data.segments.len());
    for segment in &data.segments {
        let world = worlds
            .iter()
            .find(|w| w.map_id == segment.scene.map_id)
            .ok_or_else(|| Error::invalid("dataset", format!("unknown map {}", segment.scene.map_id)))?;
        features.push(segment_features(segment, world, plan)?);
    }
    irl_train_features(&features, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{finite_difference, relative_error};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cost_hand_cases() {
        let w = CostWeights::new([1.0; 6], 1.0);
        assert_eq!(w.cost([1.0, 2.0, 3.0, 4.0, 5.0, 6.0]), 21.0);
        let zero = CostWeights::new([0.0; 6], 1.0);
        assert_eq!(zero.cost([1.0, 2.0, 3.0, 4.0, 5.0, 6.0]), 0.0);
        let e2 = CostWeights::new([0.0, 1.0, 0.0, 0.0, 0.0, 0.0], 1.0);
        assert_eq!(e2.cost([1.0, 2.0, 3.0, 4.0, 5.0, 6.0]), 2.0);
    }

    fn random_segment(rng: &mut ChaCha8Rng, candidates: usize) -> SegmentFeatures {
        let mut f = || std::array::from_fn(|_| rng.gen_range(0.0..3.0));
        SegmentFeatures {
            demo: f(),
            candidates: (0..candidates).map(|_| f()).collect(),
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let segs = vec![random_segment(&mut rng, 8), random_segment(&mut rng, 8)];
            let theta: [f64; 6] = std::array::from_fn(|_| rng.gen_range(0.0..1.0));
            let beta = rng.gen_range(0.5..2.0);
            let (_, grad) = irl_loss(&theta, beta, 1e-3, &segs).unwrap();
            let mut params = theta.to_vec();
            for j in 0..6 {
                let numeric = finite_difference(&mut params, j, 1e-5, |p| {
                    let t: [f64; 6] = p.try_into().unwrap();
                    irl_loss(&t, beta, 1e-3, &segs).unwrap().0
                });
                assert!(
                    relative_error(grad[j], numeric) <= 1e-4,
                    "component {j}: analytic {} vs numeric {numeric}",
                    grad[j]
                );
            }
        }
    }

    fn toy_segments(n: usize) -> Vec<SegmentFeatures> {
        let a = [1.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let b = [0.0, 1.0, 0.0, 0.0, 0.0, 0.0];
        (0..n)
            .map(|_| SegmentFeatures {
                demo: a,
                candidates: vec![a, b],
            })
            .collect()
    }

    #[test]
    fn two_candidate_toy_weights_penalized_feature() {
        let segs = toy_segments(50);
        let config = IrlConfig {
            iterations: 500,
            ..IrlConfig::default()
        };
        let r = irl_train_features(&segs, &config).unwrap();
        // Demos always avoid feature 2, so its weight must dominate.
        assert!(r.weights.theta[1] > r.weights.theta[0]);
    }

    #[test]
    fn loss_monotone_at_small_learning_rate() {
        let segs = toy_segments(20);
        let config = IrlConfig {
            learning_rate: 1e-3,
            iterations: 200,
            ..IrlConfig::default()
        };
        let r = irl_train_features(&segs, &config).unwrap();
        for w in r.loss_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "loss increased: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn generate_and_recover_direction() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let theta_star = [0.6, 0.1, 0.3, 0.05, 0.8, 0.2];
        let beta = 1.0;
        let mut segs = Vec::new();
        for _ in 0..400 {
            let candidates: Vec<[f64; 6]> = (0..40)
                .map(|_| std::array::from_fn(|_| rng.gen_range(0.0..3.0)))
                .collect();
            // Sample the demo from P proportional to exp(-beta * theta* . f).
            let weights: Vec<f64> = candidates
                .iter()
                .map(|f| {
                    let c: f64 = theta_star.iter().zip(f).map(|(t, x)| t * x).sum();
                    (-beta * c).exp()
                })
                .collect();
            let total: f64 = weights.iter().sum();
            let mut u = rng.gen_range(0.0..total);
            let mut pick = 0;
            for (i, w) in weights.iter().enumerate() {
                if u < *w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            segs.push(SegmentFeatures {
                demo: candidates[pick],
                candidates,
            });
        }
        let config = IrlConfig {
            iterations: 600,
            ..IrlConfig::default()
        };
        let r = irl_train_features(&segs, &config).unwrap();
        let dot: f64 = r.weights.theta.iter().zip(&theta_star).map(|(a, b)| a * b).sum();
        let na: f64 = r.weights.theta.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nb: f64 = theta_star.iter().map(|a| a * a).sum::<f64>().sqrt();
        let cos = dot / (na * nb);
        assert!(cos >= 0.9, "cosine similarity {cos}");
    }

    #[test]
    fn weights_stay_nonnegative() {
        let segs = toy_segments(30);
        let r = irl_train_features(&segs, &IrlConfig::default()).unwrap();
        assert!(r.weights.theta.iter().all(|t| *t >= 0.0));
    }

    #[test]
    fn non_finite_features_are_reported() {
        let mut segs = toy_segments(3);
        segs[1].demo[0] = f64::NAN;
        let err = irl_loss(&[1.0; 6], 1.0, 0.0, &segs).unwrap_err();
        assert!(matches!(err, Error::NonFiniteLoss { index: 1, .. }));
    }

    #[test]
    fn json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("weights.json");
        let w = CostWeights::new([0.1, 0.2, 0.3, 0.4, 0.5, 0.6], 1.5);
        w.save_json(&p).unwrap();
        let back = CostWeights::load_json(&p).unwrap();
        assert_eq!(w, back);
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.contains("\"theta\""));
        assert!(text.contains("\"beta\""));
    }

    #[test]
    fn determinism() {
        let segs = toy_segments(30);
        let a = irl_train_features(&segs, &IrlConfig::default()).unwrap();
        let b = irl_train_features(&segs, &IrlConfig::default()).unwrap();
        assert_eq!(a.weights, b.weights);
        assert_eq!(a.loss_history, b.loss_history);
    }
}
