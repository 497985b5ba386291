//! Bad-prediction classifier: a feedforward network over the centered
//! history, the predicted means, and a small context summary, trained on
//! the 2-sigma labels with inverse-frequency class weights.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::e2e::E2EModel;
use crate::error::{Error, Result};
use crate::model_io::{format_err, BinReader, BinWriter};
use crate::nn::{MlpSpec, OutAct, SgdMomentum};
use crate::scenario::experiment::derive_seed;
use crate::scenario::map::World;
use crate::types::{Dataset, GaussianTrajectory, Scene, HISTORY_LEN, LABEL_LEN};

use super::{label_bad_predictions, SwitchDecision};

const MAGIC: &[u8; 4] = b"BCLF";
const VERSION: u32 = 1;
const COORD_SCALE: f64 = 0.1;
/// Stand-in stop-sign distance when the map has no stop signs.
const NO_SIGN_DISTANCE: f64 = 100.0;
/// history (2*10) + predicted means (2*30) + context summary (4).
pub const CLASSIFIER_INPUT: usize = 2 * HISTORY_LEN + 2 * LABEL_LEN + 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub hidden: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub grad_clip: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            hidden: 64,
            learning_rate: 0.02,
            epochs: 60,
            batch_size: 32,
            seed: 0,
            grad_clip: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BadPredictionClassifier {
    pub config: ClassifierConfig,
    pub params: Vec<f64>,
}

fn spec(config: &ClassifierConfig) -> MlpSpec {
    MlpSpec::new(vec![CLASSIFIER_INPUT, config.hidden, 2], OutAct::Linear)
}

/// Build the classifier input vector for one scene and its prediction
/// (absolute coordinates).
pub fn classifier_features(
    scene: &Scene,
    world: &World,
    pred: &GaussianTrajectory,
) -> Result<Vec<f64>> {
    let center = scene.target_history.final_position()?;
    let path = world
        .paths
        .get(scene.reference_path)
        .ok_or_else(|| Error::invalid("scene", "reference path out of range"))?;
    let mut x = Vec::with_capacity(CLASSIFIER_INPUT);
    for p in &scene.target_history.points {
        x.push((p.x - center.x) * COORD_SCALE);
        x.push((p.y - center.y) * COORD_SCALE);
    }
    let means = pred.most_probable();
    for p in &means.points {
        x.push((p.x - center.x) * COORD_SCALE);
        x.push((p.y - center.y) * COORD_SCALE);
    }

    let s0 = path.to_frenet(center).s;
    let mut max_lateral: f64 = 0.0;
    let mut min_sign_dist = NO_SIGN_DISTANCE;
    for p in &means.points {
        let f = path.to_frenet(*p);
        max_lateral = max_lateral.max(f.d.abs());
        for sign in &scene.stop_signs {
            min_sign_dist = min_sign_dist.min(p.distance(sign));
        }
    }
    let progress = path
        .to_frenet(*means.points.last().ok_or(Error::EmptyTrajectory)?)
        .s
        - s0;
    let min_speed = means
        .speeds()
        .into_iter()
        .fold(f64::INFINITY, f64::min)
        .min(1e9);
    x.push(max_lateral * COORD_SCALE);
    x.push(progress * COORD_SCALE);
    x.push(min_sign_dist * COORD_SCALE);
    x.push(min_speed * COORD_SCALE);
    debug_assert_eq!(x.len(), CLASSIFIER_INPUT);
    Ok(x)
}

fn softmax2(logits: &[f64]) -> [f64; 2] {
    let m = logits[0].max(logits[1]);
    let a = (logits[0] - m).exp();
    let b = (logits[1] - m).exp();
    [a / (a + b), b / (a + b)]
}

/// Weighted cross-entropy loss of one example plus logit gradient.
pub fn ce_loss(logits: &[f64], label: u8, weight: f64) -> (f64, [f64; 2]) {
    let p = softmax2(logits);
    let y = label as usize;
    let loss = -weight * p[y].max(1e-12).ln();
    let mut dlogits = [weight * p[0], weight * p[1]];
    dlogits[y] -= weight;
    (loss, dlogits)
}

/// Probability that a prediction is bad (class 1).
pub fn classifier_score(
    clf: &BadPredictionClassifier,
    scene: &Scene,
    world: &World,
    pred: &GaussianTrajectory,
) -> Result<f64> {
    let x = classifier_features(scene, world, pred)?;
    let logits = spec(&clf.config).forward(&clf.params, &x);
    Ok(softmax2(&logits)[1])
}

/// Switch when the bad-probability is at least 0.5.
pub fn classifier_switch(
    clf: &BadPredictionClassifier,
    scene: &Scene,
    world: &World,
    pred: &GaussianTrajectory,
) -> Result<SwitchDecision> {
    let score = classifier_score(clf, scene, world, pred)?;
    Ok(SwitchDecision {
        score,
        decision: (score >= 0.5) as u8,
        threshold_used: 0.5,
    })
}

fn train_on(
    features: &[Vec<f64>],
    labels: &[u8],
    config: &ClassifierConfig,
) -> Result<BadPredictionClassifier> {
    let positives = labels.iter().filter(|l| **l == 1).count();
    if positives == 0 || positives == labels.len() {
        return Err(Error::SingleClass {
            positives,
            total: labels.len(),
        });
    }
    let n = labels.len() as f64;
    let class_weight = [
        n / (2.0 * (labels.len() - positives) as f64),
        n / (2.0 * positives as f64),
    ];
    let spec = spec(config);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 0xc1));
    let mut params = spec.init(&mut rng);
    let mut opt = SgdMomentum::new(config.learning_rate, 0.9, config.grad_clip, params.len());
    let mut order: Vec<usize> = (0..labels.len()).collect();
    let mut grads = vec![0.0; params.len()];
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for (bi, batch) in order.chunks(config.batch_size).enumerate() {
            grads.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / batch.len() as f64;
            let mut batch_loss = 0.0;
            for &i in batch {
                let cache = spec.forward_cached(&params, &features[i]);
                let logits = cache.acts.last().unwrap().clone();
                let (loss, dlogits) = ce_loss(&logits, labels[i], class_weight[labels[i] as usize]);
                batch_loss += loss * scale;
                let dl = [dlogits[0] * scale, dlogits[1] * scale];
                spec.backward(&params, &cache, &dl, &mut grads);
            }
            if !batch_loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    stage: "classifier",
                    index: epoch * 1_000_000 + bi,
                });
            }
            opt.step(&mut params, &grads);
        }
    }
    Ok(BadPredictionClassifier {
        config: config.clone(),
        params,
    })
}

/// Label the dataset with the 2-sigma rule on the model's own errors, then
/// fit the classifier.
pub fn classifier_train(
    model: &E2EModel,
    data: &Dataset,
    worlds: &[World],
    config: &ClassifierConfig,
) -> Result<BadPredictionClassifier> {
    let (labels, _, _) = label_bad_predictions(model, data)?;
    let mut features = Vec::with_capacity(data.segments.len());
    for seg in &data.segments {
        let world = World::find(worlds, &seg.scene.map_id)?;
        let pred = model.predict(&seg.scene)?;
        features.push(classifier_features(&seg.scene, world, &pred)?);
    }
    train_on(&features, &labels, config)
}

impl BadPredictionClassifier {
    pub fn save_binary(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let display = path.display().to_string();
        let file = File::create(path).map_err(|e| Error::io(display.clone(), e))?;
        let mut w = BinWriter::new(BufWriter::new(file), display);
        w.magic(MAGIC, VERSION)?;
        w.u32(self.config.hidden as u32)?;
        w.f64(self.config.learning_rate)?;
        w.u32(self.config.epochs as u32)?;
        w.u32(self.config.batch_size as u32)?;
        w.u64(self.config.seed)?;
        w.f64(self.config.grad_clip)?;
        w.f64_vec(&self.params)
    }

    pub fn load_binary(path: impl AsRef<Path>) -> Result<BadPredictionClassifier> {
        let path = path.as_ref();
        let display = path.display().to_string();
        let file = File::open(path).map_err(|e| Error::io(display.clone(), e))?;
        let mut r = BinReader::new(BufReader::new(file), display);
        r.magic(MAGIC, VERSION)?;
        let config = ClassifierConfig {
            hidden: r.u32()? as usize,
            learning_rate: r.f64()?,
            epochs: r.u32()? as usize,
            batch_size: r.u32()? as usize,
            seed: r.u64()?,
            grad_clip: r.f64()?,
        };
        let params = r.f64_vec()?;
        if params.len() != spec(&config).param_count() {
            return Err(format_err(r.path(), "parameter count mismatch"));
        }
        Ok(BadPredictionClassifier { config, params })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{finite_difference, relative_error};
    use rand::Rng;

    fn random_features(rng: &mut ChaCha8Rng, n: usize) -> (Vec<Vec<f64>>, Vec<u8>) {
        // Separable toy: label depends on the sign of the first coordinate.
        let mut xs = Vec::with_capacity(n);
        let mut ys = Vec::with_capacity(n);
        for _ in 0..n {
            let mut x: Vec<f64> = (0..CLASSIFIER_INPUT)
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect();
            let label = (x[0] > 0.3) as u8;
            x[1] = x[0] * 2.0;
            xs.push(x);
            ys.push(label);
        }
        (xs, ys)
    }

    #[test]
    fn learns_a_separable_rule() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (xs, ys) = random_features(&mut rng, 300);
        let config = ClassifierConfig {
            hidden: 16,
            epochs: 40,
            ..ClassifierConfig::default()
        };
        let clf = train_on(&xs, &ys, &config).unwrap();
        let s = spec(&config);
        let correct = xs
            .iter()
            .zip(&ys)
            .filter(|(x, y)| {
                let logits = s.forward(&clf.params, x);
                let p_bad = softmax2(&logits)[1];
                ((p_bad >= 0.5) as u8) == **y
            })
            .count();
        assert!(
            correct as f64 / ys.len() as f64 > 0.9,
            "train accuracy {}",
            correct as f64 / ys.len() as f64
        );
    }

    #[test]
    fn deterministic_training() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (xs, ys) = random_features(&mut rng, 60);
        let config = ClassifierConfig {
            hidden: 8,
            epochs: 3,
            ..ClassifierConfig::default()
        };
        let a = train_on(&xs, &ys, &config).unwrap();
        let b = train_on(&xs, &ys, &config).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_class_is_error() {
        let xs = vec![vec![0.0; CLASSIFIER_INPUT]; 4];
        let ys = vec![0u8; 4];
        assert!(matches!(
            train_on(&xs, &ys, &ClassifierConfig::default()),
            Err(Error::SingleClass { .. })
        ));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let config = ClassifierConfig {
            hidden: 6,
            ..ClassifierConfig::default()
        };
        let s = spec(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut params = s.init(&mut rng);
        let x: Vec<f64> = (0..CLASSIFIER_INPUT)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let label = 1u8;
        let weight = 2.5;
        let cache = s.forward_cached(&params, &x);
        let logits = cache.acts.last().unwrap().clone();
        let (_, dlogits) = ce_loss(&logits, label, weight);
        let mut grads = vec![0.0; params.len()];
        s.backward(&params, &cache, &dlogits, &mut grads);
        for _ in 0..10 {
            let i = rng.gen_range(0..params.len());
            let numeric = finite_difference(&mut params, i, 1e-5, |p| {
                let logits = s.forward(p, &x);
                ce_loss(&logits, label, weight).0
            });
            assert!(
                relative_error(grads[i], numeric) <= 1e-4,
                "param {i}: {} vs {numeric}",
                grads[i]
            );
        }
    }

    #[test]
    fn decision_rule_hand_cases() {
        let mk = |score: f64| SwitchDecision {
            score,
            decision: (score >= 0.5) as u8,
            threshold_used: 0.5,
        };
        assert_eq!(mk(0.8).decision, 1);
        assert_eq!(mk(0.2).decision, 0);
    }

    #[test]
    fn binary_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let (xs, ys) = random_features(&mut rng, 40);
        let config = ClassifierConfig {
            hidden: 4,
            epochs: 2,
            ..ClassifierConfig::default()
        };
        let clf = train_on(&xs, &ys, &config).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("clf.bin");
        clf.save_binary(&p).unwrap();
        assert_eq!(BadPredictionClassifier::load_binary(&p).unwrap(), clf);
    }
}
