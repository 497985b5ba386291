//! The end-to-end predictor: a shared recurrent cell encodes each agent's
//! history, neighbor hidden states are max-pooled around the target, and a
//! feedforward decoder emits a per-step Gaussian over future positions.
//! All gradients are hand-rolled and finite-difference checked.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model_io::{format_err, BinReader, BinWriter};
use crate::nn::{init_block, matvec_acc, matvec_t_acc, outer_acc, sigmoid, softplus, MlpCache, MlpSpec, OutAct, SgdMomentum};
use crate::scenario::experiment::derive_seed;
use crate::types::{
    center_on_target, ade, Dataset, GaussianStep, GaussianTrajectory, Scene, Trajectory, LABEL_LEN,
    SIGMA_FLOOR,
};

/// Per-step input features: (x, y, dx, dy) in the centered frame.
const INPUT_DIM: usize = 4;
/// Coordinates are shrunk by this factor before entering the network.
const COORD_SCALE: f64 = 0.1;

const MAGIC: &[u8; 4] = b"E2EM";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct E2EConfig {
    pub hidden_size: usize,
    pub pooling_radius: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub grad_clip: f64,
}

impl Default for E2EConfig {
    fn default() -> Self {
        E2EConfig {
            hidden_size: 32,
            pooling_radius: 15.0,
            learning_rate: 0.01,
            epochs: 30,
            batch_size: 32,
            seed: 0,
            grad_clip: 5.0,
        }
    }
}

impl E2EConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_size == 0 {
            return Err(Error::invalid("e2e config", "hidden_size must be >= 1"));
        }
        if self.pooling_radius <= 0.0 {
            return Err(Error::invalid("e2e config", "pooling_radius must be > 0"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("e2e config", "batch_size must be >= 1"));
        }
        Ok(())
    }
}

/// Offsets of the recurrent-cell parameter blocks inside the flat vector.
/// Layout: Wz, Uz, bz, Wr, Ur, br, Wc, Uc, bc, then the decoder.
#[derive(Debug, Clone, Copy)]
struct Cell {
    h: usize,
}

impl Cell {
    fn param_count(&self) -> usize {
        3 * (self.h * INPUT_DIM + self.h * self.h + self.h)
    }

    /// (W offset, U offset, b offset) of gate g in 0..3.
    fn gate(&self, g: usize) -> (usize, usize, usize) {
        let block = self.h * INPUT_DIM + self.h * self.h + self.h;
        let base = g * block;
        (base, base + self.h * INPUT_DIM, base + self.h * INPUT_DIM + self.h * self.h)
    }
}

/// Per-step intermediates of one encoded sequence, kept for backprop.
struct CellCache {
    xs: Vec<[f64; INPUT_DIM]>,
    /// hs[0] is the zero initial state; hs[t+1] the state after step t.
    hs: Vec<Vec<f64>>,
    zs: Vec<Vec<f64>>,
    rs: Vec<Vec<f64>>,
    hcs: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct E2EModel {
    pub config: E2EConfig,
    pub params: Vec<f64>,
    pub epoch_losses: Vec<f64>,
}

struct ForwardCache {
    target: CellCache,
    /// Encoded caches of the pooled neighbors, in scene order.
    neighbors: Vec<CellCache>,
    /// For each pooled element, which neighbor (index into `neighbors`)
    /// supplied the max; None when the pool is empty.
    pool_src: Vec<Option<usize>>,
    decoder: MlpCache,
    raw: Vec<f64>,
}

fn featurize(history: &Trajectory) -> Vec<[f64; INPUT_DIM]> {
    history
        .points
        .iter()
        .enumerate()
        .map(|(t, p)| {
            let (dx, dy) = if t == 0 {
                (0.0, 0.0)
            } else {
                let prev = history.points[t - 1];
                (p.x - prev.x, p.y - prev.y)
            };
            [
                p.x * COORD_SCALE,
                p.y * COORD_SCALE,
                dx * COORD_SCALE,
                dy * COORD_SCALE,
            ]
        })
        .collect()
}

impl E2EModel {
    fn cell(&self) -> Cell {
        Cell {
            h: self.config.hidden_size,
        }
    }

    fn decoder_spec(&self) -> MlpSpec {
        let h = self.config.hidden_size;
        MlpSpec::new(vec![2 * h, 2 * h, 4 * LABEL_LEN], OutAct::Linear)
    }

    pub fn param_count(config: &E2EConfig) -> usize {
        let cell = Cell {
            h: config.hidden_size,
        };
        let dec = MlpSpec::new(
            vec![
                2 * config.hidden_size,
                2 * config.hidden_size,
                4 * LABEL_LEN,
            ],
            OutAct::Linear,
        );
        cell.param_count() + dec.param_count()
    }

    pub fn init(config: &E2EConfig) -> Result<E2EModel> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 0xe2e));
        let cell = Cell {
            h: config.hidden_size,
        };
        let mut params = vec![0.0; cell.param_count()];
        for g in 0..3 {
            let (wo, uo, _bo) = cell.gate(g);
            init_block(&mut rng, &mut params[wo..wo + cell.h * INPUT_DIM], INPUT_DIM);
            init_block(&mut rng, &mut params[uo..uo + cell.h * cell.h], cell.h);
            // Biases stay zero.
        }
        let model = E2EModel {
            config: config.clone(),
            params,
            epoch_losses: vec![],
        };
        let dec = model.decoder_spec().init(&mut rng);
        let mut model = model;
        model.params.extend(dec);
        Ok(model)
    }

    fn encode(&self, history: &Trajectory) -> CellCache {
        let cell = self.cell();
        let h = cell.h;
        let xs = featurize(history);
        let mut cache = CellCache {
            hs: vec![vec![0.0; h]],
            zs: vec![],
            rs: vec![],
            hcs: vec![],
            xs,
        };
        for t in 0..cache.xs.len() {
            let x = &cache.xs[t];
            let prev = cache.hs[t].clone();
            let mut z = vec![0.0; h];
            let mut r = vec![0.0; h];
            let mut hc = vec![0.0; h];
            for (g, out) in [(0, &mut z), (1, &mut r)] {
                let (wo, uo, bo) = cell.gate(g);
                out.copy_from_slice(&self.params[bo..bo + h]);
                matvec_acc(&self.params[wo..wo + h * INPUT_DIM], x, out, h, INPUT_DIM);
                matvec_acc(&self.params[uo..uo + h * h], &prev, out, h, h);
                for v in out.iter_mut() {
                    *v = sigmoid(*v);
                }
            }
            let (wo, uo, bo) = cell.gate(2);
            hc.copy_from_slice(&self.params[bo..bo + h]);
            matvec_acc(&self.params[wo..wo + h * INPUT_DIM], x, &mut hc, h, INPUT_DIM);
            let gated: Vec<f64> = prev.iter().zip(&r).map(|(p, r)| p * r).collect();
            matvec_acc(&self.params[uo..uo + h * h], &gated, &mut hc, h, h);
            for v in hc.iter_mut() {
                *v = v.tanh();
            }
            let next: Vec<f64> = (0..h)
                .map(|i| (1.0 - z[i]) * prev[i] + z[i] * hc[i])
                .collect();
            cache.hs.push(next);
            cache.zs.push(z);
            cache.rs.push(r);
            cache.hcs.push(hc);
        }
        cache
    }

    /// Backprop through one encoded sequence given the gradient at its final
    /// hidden state; accumulates into `grads` (cell block only).
    fn encode_backward(&self, cache: &CellCache, dfinal: &[f64], grads: &mut [f64]) {
        let cell = self.cell();
        let h = cell.h;
        let mut dh = dfinal.to_vec();
        for t in (0..cache.xs.len()).rev() {
            let x = &cache.xs[t];
            let prev = &cache.hs[t];
            let z = &cache.zs[t];
            let r = &cache.rs[t];
            let hc = &cache.hcs[t];
            let mut dprev = vec![0.0; h];
            let mut da_c = vec![0.0; h];
            let mut da_z = vec![0.0; h];
            for i in 0..h {
                let dz = dh[i] * (hc[i] - prev[i]);
                let dhc = dh[i] * z[i];
                dprev[i] += dh[i] * (1.0 - z[i]);
                da_c[i] = dhc * (1.0 - hc[i] * hc[i]);
                da_z[i] = dz * z[i] * (1.0 - z[i]);
            }
            let gated: Vec<f64> = prev.iter().zip(r).map(|(p, r)| p * r).collect();
            let (wo, uo, bo) = cell.gate(2);
            outer_acc(&mut grads[wo..wo + h * INPUT_DIM], &da_c, x, h, INPUT_DIM);
            outer_acc(&mut grads[uo..uo + h * h], &da_c, &gated, h, h);
            for i in 0..h {
                grads[bo + i] += da_c[i];
            }
            let mut dgated = vec![0.0; h];
            matvec_t_acc(&self.params[uo..uo + h * h], &da_c, &mut dgated, h, h);
            let mut da_r = vec![0.0; h];
            for i in 0..h {
                dprev[i] += dgated[i] * r[i];
                da_r[i] = dgated[i] * prev[i] * r[i] * (1.0 - r[i]);
            }
            for (g, da) in [(0usize, &da_z), (1usize, &da_r)] {
                let (wo, uo, bo) = cell.gate(g);
                outer_acc(&mut grads[wo..wo + h * INPUT_DIM], da, x, h, INPUT_DIM);
                outer_acc(&mut grads[uo..uo + h * h], da, prev, h, h);
                for i in 0..h {
                    grads[bo + i] += da[i];
                }
                matvec_t_acc(&self.params[uo..uo + h * h], da, &mut dprev, h, h);
            }
            dh = dprev;
        }
    }

    fn forward_cached(&self, scene: &Scene) -> ForwardCache {
        let h = self.config.hidden_size;
        let scene = center_on_target(scene);
        let target = self.encode(&scene.target_history);

        let mut neighbors = Vec::new();
        for n in &scene.neighbor_histories {
            let last = match n.final_position() {
                Ok(p) => p,
                Err(_) => continue,
            };
            // Target sits at the origin in the centered frame.
            if (last.x * last.x + last.y * last.y).sqrt() <= self.config.pooling_radius {
                neighbors.push(self.encode(n));
            }
        }
        let mut pool = vec![0.0; h];
        let mut pool_src = vec![None; h];
        for (ni, n) in neighbors.iter().enumerate() {
            let hn = n.hs.last().unwrap();
            for i in 0..h {
                if pool_src[i].is_none() || hn[i] > pool[i] {
                    pool[i] = hn[i];
                    pool_src[i] = Some(ni);
                }
            }
        }

        let mut concat = target.hs.last().unwrap().clone();
        concat.extend_from_slice(&pool);
        let spec = self.decoder_spec();
        let cell_count = self.cell().param_count();
        let decoder = spec.forward_cached(&self.params[cell_count..], &concat);
        let raw = decoder.acts.last().unwrap().clone();
        ForwardCache {
            target,
            neighbors,
            pool_src,
            decoder,
            raw,
        }
    }

    /// Prediction in the centered frame (the target's last observed position
    /// is the origin).
    pub fn forward(&self, scene: &Scene) -> GaussianTrajectory {
        let cache = self.forward_cached(scene);
        raw_to_gaussian(&cache.raw, scene.target_history.dt)
    }

    /// Prediction in absolute coordinates.
    pub fn predict(&self, scene: &Scene) -> Result<GaussianTrajectory> {
        let center = scene.target_history.final_position()?;
        Ok(self.forward(scene).translated(center.x, center.y))
    }

    /// NLL of one segment plus its parameter gradient (accumulated into
    /// `grads` when provided).
    pub fn example_loss(
        &self,
        scene: &Scene,
        label: &Trajectory,
        mut grads: Option<&mut [f64]>,
    ) -> Result<f64> {
        let center = scene.target_history.final_position()?;
        let label_c = label.translated(-center.x, -center.y);
        let cache = self.forward_cached(scene);
        let pred = raw_to_gaussian(&cache.raw, label.dt);
        let loss = nll_loss(&pred, &label_c)?;
        if let Some(grads) = grads.as_deref_mut() {
            let mut draw = vec![0.0; cache.raw.len()];
            for (t, (step, truth)) in pred.steps.iter().zip(&label_c.points).enumerate() {
                for (axis, (mu, sg, x)) in [
                    (step.mu_x, step.sigma_x, truth.x),
                    (step.mu_y, step.sigma_y, truth.y),
                ]
                .into_iter()
                .enumerate()
                {
                    let dmu = -(x - mu) / (sg * sg);
                    let dsg = 1.0 / sg - (x - mu) * (x - mu) / (sg * sg * sg);
                    // Chain through the output parameterization.
                    let raw_s = cache.raw[4 * t + 2 + axis];
                    draw[4 * t + axis] = dmu / COORD_SCALE;
                    draw[4 * t + 2 + axis] = dsg * sigmoid(raw_s) / COORD_SCALE;
                }
            }
            let cell_count = self.cell().param_count();
            let spec = self.decoder_spec();
            let dconcat = spec.backward(
                &self.params[cell_count..],
                &cache.decoder,
                &draw,
                &mut grads[cell_count..],
            );
            let h = self.config.hidden_size;
            self.encode_backward(&cache.target, &dconcat[..h], grads);
            // Route pooled gradients to the neighbors that won the max.
            let mut dneighbors = vec![vec![0.0; h]; cache.neighbors.len()];
            for i in 0..h {
                if let Some(ni) = cache.pool_src[i] {
                    dneighbors[ni][i] = dconcat[h + i];
                }
            }
            for (n, dn) in cache.neighbors.iter().zip(&dneighbors) {
                if dn.iter().any(|v| *v != 0.0) {
                    self.encode_backward(n, dn, grads);
                }
            }
        }
        Ok(loss)
    }

    pub fn save_binary(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let display = path.display().to_string();
        let file = File::create(path).map_err(|e| Error::io(display.clone(), e))?;
        let mut w = BinWriter::new(BufWriter::new(file), display);
        w.magic(MAGIC, VERSION)?;
        w.u32(self.config.hidden_size as u32)?;
        w.f64(self.config.pooling_radius)?;
        w.f64(self.config.learning_rate)?;
        w.u32(self.config.epochs as u32)?;
        w.u32(self.config.batch_size as u32)?;
        w.u64(self.config.seed)?;
        w.f64(self.config.grad_clip)?;
        w.f64_vec(&self.epoch_losses)?;
        w.f64_vec(&self.params)
    }

    pub fn load_binary(path: impl AsRef<Path>) -> Result<E2EModel> {
        let path = path.as_ref();
        let display = path.display().to_string();
        let file = File::open(path).map_err(|e| Error::io(display.clone(), e))?;
        let mut r = BinReader::new(BufReader::new(file), display);
        r.magic(MAGIC, VERSION)?;
        let config = E2EConfig {
            hidden_size: r.u32()? as usize,
            pooling_radius: r.f64()?,
            learning_rate: r.f64()?,
            epochs: r.u32()? as usize,
            batch_size: r.u32()? as usize,
            seed: r.u64()?,
            grad_clip: r.f64()?,
        };
        let epoch_losses = r.f64_vec()?;
        let params = r.f64_vec()?;
        let expected = E2EModel::param_count(&config);
        if params.len() != expected {
            return Err(format_err(
                r.path(),
                format!("{} parameters, expected {expected}", params.len()),
            ));
        }
        config.validate()?;
        Ok(E2EModel {
            config,
            params,
            epoch_losses,
        })
    }
}

fn raw_to_gaussian(raw: &[f64], dt: f64) -> GaussianTrajectory {
    let steps = raw
        .chunks_exact(4)
        .map(|c| GaussianStep {
            mu_x: c[0] / COORD_SCALE,
            mu_y: c[1] / COORD_SCALE,
            sigma_x: softplus(c[2]) / COORD_SCALE + SIGMA_FLOOR,
            sigma_y: softplus(c[3]) / COORD_SCALE + SIGMA_FLOOR,
        })
        .collect();
    GaussianTrajectory { steps, dt }
}

/// Negative log-likelihood of the truth under per-step independent
/// axis-aligned Gaussians.
pub fn nll_loss(pred: &GaussianTrajectory, truth: &Trajectory) -> Result<f64> {
    if pred.steps.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: pred.steps.len(),
            right: truth.len(),
        });
    }
    const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;
    let mut loss = 0.0;
    for (step, p) in pred.steps.iter().zip(&truth.points) {
        for (mu, sg, x) in [
            (step.mu_x, step.sigma_x, p.x),
            (step.mu_y, step.sigma_y, p.y),
        ] {
            loss += HALF_LN_2PI + sg.ln() + (x - mu) * (x - mu) / (2.0 * sg * sg);
        }
    }
    Ok(loss)
}

/// Mini-batch momentum SGD on mean NLL. Deterministic for a fixed seed.
pub fn train(data: &Dataset, config: &E2EConfig) -> Result<E2EModel> {
    if data.segments.is_empty() {
        return Err(Error::invalid("e2e training set", "no segments"));
    }
    let mut model = E2EModel::init(config)?;
    let dim = model.params.len();
    let mut opt = SgdMomentum::new(config.learning_rate, 0.9, config.grad_clip, dim);
    let mut order: Vec<usize> = (0..data.segments.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 0x51));
    let mut grads = vec![0.0; dim];
    for epoch in 0..config.epochs {
        // Step-decayed learning rate: halve at 50% and again at 75% of the
        // schedule so late epochs refine instead of oscillating.
        let mut lr = config.learning_rate;
        if config.epochs >= 4 {
            if epoch * 2 >= config.epochs {
                lr *= 0.5;
            }
            if epoch * 4 >= config.epochs * 3 {
                lr *= 0.5;
            }
        }
        opt.lr = lr;
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (bi, batch) in order.chunks(config.batch_size).enumerate() {
            grads.iter_mut().for_each(|g| *g = 0.0);
            let mut batch_loss = 0.0;
            for &idx in batch {
                let seg = &data.segments[idx];
                batch_loss += model.example_loss(&seg.scene, &seg.label, Some(&mut grads))?;
            }
            let scale = 1.0 / batch.len() as f64;
            batch_loss *= scale;
            if !batch_loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    stage: "e2e",
                    index: epoch * 1_000_000 + bi,
                });
            }
            grads.iter_mut().for_each(|g| *g *= scale);
            opt.step(&mut model.params, &grads);
            epoch_loss += batch_loss * batch.len() as f64;
        }
        model.epoch_losses.push(epoch_loss / data.segments.len() as f64);
    }
    Ok(model)
}

/// Per-segment ADE of the model's most probable prediction.
pub fn model_ade(model: &E2EModel, scene: &Scene, label: &Trajectory) -> Result<f64> {
    ade(&model.predict(scene)?.most_probable(), label)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{finite_difference, relative_error};
    use crate::types::{Point, Segment, Split, DT};
    use rand::Rng;

    fn const_vel_history(x0: f64, y0: f64, vx: f64, vy: f64, n: usize) -> Trajectory {
        Trajectory::new(
            (0..n)
                .map(|i| {
                    let t = i as f64 - (n - 1) as f64;
                    Point::new(x0 + vx * t * DT, y0 + vy * t * DT)
                })
                .collect(),
            DT,
        )
    }

    fn scene(neighbors: Vec<Trajectory>) -> Scene {
        Scene {
            target_history: const_vel_history(20.0, 5.0, 4.0, 0.5, 10),
            neighbor_histories: neighbors,
            reference_path: 0,
            map_id: "m".into(),
            stop_signs: vec![],
            speed_limit: 8.0,
        }
    }

    fn tiny_config() -> E2EConfig {
        E2EConfig {
            hidden_size: 4,
            ..E2EConfig::default()
        }
    }

    fn gaussian(steps: Vec<(f64, f64, f64, f64)>) -> GaussianTrajectory {
        GaussianTrajectory {
            steps: steps
                .into_iter()
                .map(|(mu_x, mu_y, sigma_x, sigma_y)| GaussianStep {
                    mu_x,
                    mu_y,
                    sigma_x,
                    sigma_y,
                })
                .collect(),
            dt: DT,
        }
    }

    #[test]
    fn nll_hand_cases() {
        let pred = gaussian(vec![(0.0, 0.0, 1.0, 1.0)]);
        let truth = Trajectory::from_xy(&[(0.0, 0.0)], DT);
        let loss = nll_loss(&pred, &truth).unwrap();
        assert!((loss - (2.0 * std::f64::consts::PI).ln()).abs() < 1e-12);

        let wide = gaussian(vec![(0.0, 0.0, 2.0, 2.0)]);
        let loss2 = nll_loss(&wide, &truth).unwrap();
        assert!((loss2 - loss - 2.0 * 2.0f64.ln()).abs() < 1e-12);

        // Overconfidence: truth 1 m off the mean, sigma shrinking below that
        // distance must increase the loss.
        let off = Trajectory::from_xy(&[(1.0, 0.0)], DT);
        let confident = gaussian(vec![(0.0, 0.0, 0.1, 0.1)]);
        let calibrated = gaussian(vec![(0.0, 0.0, 1.0, 1.0)]);
        assert!(nll_loss(&confident, &off).unwrap() > nll_loss(&calibrated, &off).unwrap());

        let too_long = Trajectory::from_xy(&[(0.0, 0.0), (1.0, 0.0)], DT);
        assert!(matches!(
            nll_loss(&pred, &too_long),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn nll_matches_direct_density_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let steps: Vec<(f64, f64, f64, f64)> = (0..5)
                .map(|_| {
                    (
                        rng.gen_range(-3.0..3.0),
                        rng.gen_range(-3.0..3.0),
                        rng.gen_range(0.2..2.0),
                        rng.gen_range(0.2..2.0),
                    )
                })
                .collect();
            let pred = gaussian(steps.clone());
            let truth = Trajectory::from_xy(
                &(0..5)
                    .map(|_| (rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)))
                    .collect::<Vec<_>>(),
                DT,
            );
            let loss = nll_loss(&pred, &truth).unwrap();
            // Independent oracle: evaluate each axis density directly.
            let mut direct = 0.0;
            for (step, p) in steps.iter().zip(&truth.points) {
                let pdf = |x: f64, mu: f64, sg: f64| {
                    (-((x - mu) * (x - mu)) / (2.0 * sg * sg)).exp()
                        / (sg * (2.0 * std::f64::consts::PI).sqrt())
                };
                direct -= pdf(p.x, step.0, step.2).ln();
                direct -= pdf(p.y, step.1, step.3).ln();
            }
            assert!((loss - direct).abs() < 1e-10);
        }
    }

    #[test]
    fn forward_shape_and_sigma_floor() {
        let model = E2EModel::init(&tiny_config()).unwrap();
        let out = model.forward(&scene(vec![]));
        assert_eq!(out.steps.len(), LABEL_LEN);
        for s in &out.steps {
            assert!(s.mu_x.is_finite() && s.mu_y.is_finite());
            assert!(s.sigma_x >= SIGMA_FLOOR && s.sigma_y >= SIGMA_FLOOR);
        }
    }

    #[test]
    fn duplicate_neighbors_change_nothing() {
        let model = E2EModel::init(&tiny_config()).unwrap();
        let n = const_vel_history(25.0, 6.0, 3.0, 0.0, 10);
        let one = model.forward(&scene(vec![n.clone()]));
        let two = model.forward(&scene(vec![n.clone(), n]));
        assert_eq!(one, two);
    }

    #[test]
    fn neighbor_order_is_irrelevant() {
        let model = E2EModel::init(&tiny_config()).unwrap();
        let a = const_vel_history(25.0, 6.0, 3.0, 0.0, 10);
        let b = const_vel_history(15.0, 4.0, 5.0, 1.0, 10);
        let ab = model.forward(&scene(vec![a.clone(), b.clone()]));
        let ba = model.forward(&scene(vec![b, a]));
        assert_eq!(ab, ba);
    }

    #[test]
    fn translation_invariance_after_centering() {
        let model = E2EModel::init(&tiny_config()).unwrap();
        let base = scene(vec![const_vel_history(25.0, 6.0, 3.0, 0.0, 10)]);
        let mut shifted = base.clone();
        shifted.target_history = shifted.target_history.translated(120.0, -60.0);
        shifted.neighbor_histories = shifted
            .neighbor_histories
            .iter()
            .map(|t| t.translated(120.0, -60.0))
            .collect();
        // Centering subtracts the (shifted) anchor, so agreement is exact up
        // to float cancellation in the subtraction.
        let a = model.forward(&base);
        let b = model.forward(&shifted);
        for (x, y) in a.steps.iter().zip(&b.steps) {
            assert!((x.mu_x - y.mu_x).abs() < 1e-9);
            assert!((x.mu_y - y.mu_y).abs() < 1e-9);
            assert!((x.sigma_x - y.sigma_x).abs() < 1e-9);
            assert!((x.sigma_y - y.sigma_y).abs() < 1e-9);
        }
    }

    #[test]
    fn out_of_radius_neighbor_is_ignored() {
        let model = E2EModel::init(&tiny_config()).unwrap();
        let far = const_vel_history(200.0, 200.0, 3.0, 0.0, 10);
        assert_eq!(model.forward(&scene(vec![])), model.forward(&scene(vec![far])));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut model = E2EModel::init(&tiny_config()).unwrap();
        let sc = scene(vec![
            const_vel_history(25.0, 6.0, 3.0, 0.0, 10),
            const_vel_history(14.0, 4.0, 5.0, 1.0, 10),
        ]);
        let label = const_vel_history(32.0, 6.5, 4.0, 0.5, LABEL_LEN).translated(1.2, 0.8);
        let mut grads = vec![0.0; model.params.len()];
        model.example_loss(&sc, &label, Some(&mut grads)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let count = model.params.len();
        let mut params = model.params.clone();
        for _ in 0..10 {
            let i = rng.gen_range(0..count);
            let numeric = finite_difference(&mut params, i, 1e-5, |p| {
                let mut m = model.clone();
                m.params = p.to_vec();
                m.example_loss(&sc, &label, None).unwrap()
            });
            assert!(
                relative_error(grads[i], numeric) <= 1e-4,
                "param {i}: analytic {} vs numeric {numeric}",
                grads[i]
            );
        }
        model.params = params;
    }

    fn toy_dataset(n: usize) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let segments = (0..n)
            .map(|_| {
                let x0 = rng.gen_range(-20.0..20.0);
                let y0 = rng.gen_range(-20.0..20.0);
                let vx = rng.gen_range(-6.0..6.0);
                let vy = rng.gen_range(-6.0..6.0);
                let track = const_vel_history(x0, y0, vx, vy, 10 + LABEL_LEN);
                let history = Trajectory::new(track.points[..10].to_vec(), DT);
                let label = Trajectory::new(track.points[10..].to_vec(), DT);
                Segment {
                    scene: Scene {
                        target_history: history,
                        neighbor_histories: vec![],
                        reference_path: 0,
                        map_id: "m".into(),
                        stop_signs: vec![],
                        speed_limit: 8.0,
                    },
                    label,
                    noisy: false,
                }
            })
            .collect();
        Dataset::new(segments, Split::Train, "toy")
    }

    #[test]
    fn training_reduces_loss() {
        let config = E2EConfig {
            hidden_size: 8,
            epochs: 6,
            ..E2EConfig::default()
        };
        let model = train(&toy_dataset(80), &config).unwrap();
        assert_eq!(model.epoch_losses.len(), 6);
        assert!(
            model.epoch_losses[5] < model.epoch_losses[0],
            "losses {:?}",
            model.epoch_losses
        );
    }

    #[test]
    fn training_is_bitwise_deterministic() {
        let config = E2EConfig {
            hidden_size: 6,
            epochs: 2,
            ..E2EConfig::default()
        };
        let data = toy_dataset(30);
        let a = train(&data, &config).unwrap();
        let b = train(&data, &config).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.epoch_losses, b.epoch_losses);
    }

    #[test]
    fn binary_round_trip() {
        let mut model = E2EModel::init(&tiny_config()).unwrap();
        model.epoch_losses = vec![3.0, 2.5];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("model.bin");
        model.save_binary(&p).unwrap();
        let back = E2EModel::load_binary(&p).unwrap();
        assert_eq!(model, back);

        std::fs::write(&p, b"NOPE0000").unwrap();
        assert!(matches!(
            E2EModel::load_binary(&p),
            Err(Error::ModelFormat { .. })
        ));
    }

    #[test]
    fn most_probable_ignores_sigma() {
        let a = gaussian(vec![(1.0, 2.0, 0.5, 0.5), (3.0, 4.0, 0.5, 0.5)]);
        let b = gaussian(vec![(1.0, 2.0, 9.0, 9.0), (3.0, 4.0, 0.1, 0.1)]);
        assert_eq!(a.most_probable(), b.most_probable());
        assert_eq!(a.most_probable().len(), 2);
        let zero = gaussian(vec![(0.0, 0.0, 1.0, 1.0)]);
        assert_eq!(zero.most_probable().points[0], Point::new(0.0, 0.0));
    }
}
