//! Generative detector: a small GAN over centered 10-step histories. At
//! test time only the discriminator is used; a low realness score flags the
//! input as out of distribution.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model_io::{format_err, BinReader, BinWriter};
use crate::nn::{MlpSpec, OutAct, SgdMomentum};
use crate::scenario::experiment::derive_seed;
use crate::types::{center_on_target, Scene, Trajectory, HISTORY_LEN};

use super::{decide, SwitchDecision, SwitchDirection};

const MAGIC: &[u8; 4] = b"GANP";
const VERSION: u32 = 1;
/// Input coordinates are shrunk by this factor, as in the e2e predictor.
const COORD_SCALE: f64 = 0.1;
/// Real examples are labeled 0.9 (one-sided label smoothing).
const REAL_LABEL: f64 = 0.9;
const HISTORY_FLAT: usize = 2 * HISTORY_LEN;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GanConfig {
    pub noise_dim: usize,
    pub hidden: usize,
    pub learning_rate: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for GanConfig {
    fn default() -> Self {
        GanConfig {
            noise_dim: 8,
            hidden: 64,
            learning_rate: 0.005,
            steps: 2000,
            batch_size: 32,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GanPair {
    pub config: GanConfig,
    pub gen_params: Vec<f64>,
    pub disc_params: Vec<f64>,
    /// Steps at which discriminator collapse was detected (warning only).
    pub collapse_warnings: Vec<usize>,
}

fn gen_spec(config: &GanConfig) -> MlpSpec {
    MlpSpec::new(
        vec![config.noise_dim, config.hidden, HISTORY_FLAT],
        OutAct::Linear,
    )
}

fn disc_spec(config: &GanConfig) -> MlpSpec {
    MlpSpec::new(vec![HISTORY_FLAT, config.hidden, 1], OutAct::Sigmoid)
}

/// Flatten a centered history into the discriminator's input layout.
pub fn flatten_history(history: &Trajectory) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * history.len());
    for p in &history.points {
        out.push(p.x * COORD_SCALE);
        out.push(p.y * COORD_SCALE);
    }
    out
}

pub fn bce(p: f64, y: f64) -> f64 {
    let p = p.clamp(1e-7, 1.0 - 1e-7);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

pub fn bce_dout(p: f64, y: f64) -> f64 {
    let p = p.clamp(1e-7, 1.0 - 1e-7);
    -y / p + (1.0 - y) / (1.0 - p)
}

/// Alternating adversarial training on centered length-10 histories.
pub fn gan_train(histories: &[Trajectory], config: &GanConfig) -> Result<GanPair> {
    if histories.is_empty() {
        return Err(Error::invalid("gan training set", "no histories"));
    }
    for h in histories {
        if h.len() != HISTORY_LEN {
            return Err(Error::invalid(
                "gan training set",
                format!("history of length {} (need {HISTORY_LEN})", h.len()),
            ));
        }
    }
    let flat: Vec<Vec<f64>> = histories.iter().map(flatten_history).collect();
    let gspec = gen_spec(config);
    let dspec = disc_spec(config);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 0x9a));
    let mut gen_params = gspec.init(&mut rng);
    let mut disc_params = dspec.init(&mut rng);
    let mut gopt = SgdMomentum::new(config.learning_rate, 0.5, 5.0, gen_params.len());
    let mut dopt = SgdMomentum::new(config.learning_rate, 0.5, 5.0, disc_params.len());
    let mut collapse_warnings = Vec::new();
    let mut collapse_streak = 0usize;

    let sample_noise = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..config.noise_dim)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect()
    };

    for step in 0..config.steps {
        // Discriminator update on a real batch and a fresh fake batch.
        let mut dgrads = vec![0.0; disc_params.len()];
        let mut dloss = 0.0;
        let denom = (2 * config.batch_size) as f64;
        for _ in 0..config.batch_size {
            let real = &flat[rng.gen_range(0..flat.len())];
            let cache = dspec.forward_cached(&disc_params, real);
            let p = cache.acts.last().unwrap()[0];
            dloss += bce(p, REAL_LABEL) / denom;
            dspec.backward(
                &disc_params,
                &cache,
                &[bce_dout(p, REAL_LABEL) / denom],
                &mut dgrads,
            );

            let fake = gspec.forward(&gen_params, &sample_noise(&mut rng));
            let cache = dspec.forward_cached(&disc_params, &fake);
            let p = cache.acts.last().unwrap()[0];
            dloss += bce(p, 0.0) / denom;
            dspec.backward(
                &disc_params,
                &cache,
                &[bce_dout(p, 0.0) / denom],
                &mut dgrads,
            );
        }
        if !dloss.is_finite() {
            return Err(Error::NonFiniteLoss {
                stage: "gan discriminator",
                index: step,
            });
        }
        dopt.step(&mut disc_params, &dgrads);
        if dloss < 1e-6 {
            collapse_streak += 1;
            if collapse_streak == 100 {
                collapse_warnings.push(step);
                collapse_streak = 0;
            }
        } else {
            collapse_streak = 0;
        }

        // Generator update: push generated samples toward "real".
        let mut ggrads = vec![0.0; gen_params.len()];
        let gscale = 1.0 / config.batch_size as f64;
        let mut gloss = 0.0;
        for _ in 0..config.batch_size {
            let z = sample_noise(&mut rng);
            let gcache = gspec.forward_cached(&gen_params, &z);
            let fake = gcache.acts.last().unwrap().clone();
            let dcache = dspec.forward_cached(&disc_params, &fake);
            let p = dcache.acts.last().unwrap()[0];
            gloss += bce(p, 1.0) * gscale;
            let mut scratch = vec![0.0; disc_params.len()];
            let dinput = dspec.backward(
                &disc_params,
                &dcache,
                &[bce_dout(p, 1.0) * gscale],
                &mut scratch,
            );
            gspec.backward(&gen_params, &gcache, &dinput, &mut ggrads);
        }
        if !gloss.is_finite() {
            return Err(Error::NonFiniteLoss {
                stage: "gan generator",
                index: step,
            });
        }
        gopt.step(&mut gen_params, &ggrads);
    }

    Ok(GanPair {
        config: config.clone(),
        gen_params,
        disc_params,
        collapse_warnings,
    })
}

/// Discriminator realness score of a centered history, strictly in (0, 1).
pub fn gan_score(pair: &GanPair, history: &Trajectory) -> f64 {
    let spec = disc_spec(&pair.config);
    let p = spec.forward(&pair.disc_params, &flatten_history(history))[0];
    p.clamp(1e-12, 1.0 - 1e-12)
}

/// Generate one sample from the generator (used by tests and diagnostics).
pub fn gan_sample(pair: &GanPair, rng: &mut impl Rng) -> Vec<f64> {
    let z: Vec<f64> = (0..pair.config.noise_dim)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    gen_spec(&pair.config).forward(&pair.gen_params, &z)
}

/// Score the discriminator on a flat (already scaled) input vector.
pub fn gan_score_flat(pair: &GanPair, flat: &[f64]) -> f64 {
    let p = disc_spec(&pair.config).forward(&pair.disc_params, flat)[0];
    p.clamp(1e-12, 1.0 - 1e-12)
}

/// Switch when the centered target history looks fake (score < tau).
pub fn gan_switch(pair: &GanPair, scene: &Scene, tau: f64) -> SwitchDecision {
    let centered = center_on_target(scene);
    let score = gan_score(pair, &centered.target_history);
    SwitchDecision {
        score,
        decision: decide(score, tau, SwitchDirection::Below),
        threshold_used: tau,
    }
}

impl GanPair {
    pub fn save_binary(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let display = path.display().to_string();
        let file = File::create(path).map_err(|e| Error::io(display.clone(), e))?;
        let mut w = BinWriter::new(BufWriter::new(file), display);
        w.magic(MAGIC, VERSION)?;
        w.u32(self.config.noise_dim as u32)?;
        w.u32(self.config.hidden as u32)?;
        w.f64(self.config.learning_rate)?;
        w.u32(self.config.steps as u32)?;
        w.u32(self.config.batch_size as u32)?;
        w.u64(self.config.seed)?;
        w.u64(self.collapse_warnings.len() as u64)?;
        for c in &self.collapse_warnings {
            w.u64(*c as u64)?;
        }
        w.f64_vec(&self.gen_params)?;
        w.f64_vec(&self.disc_params)
    }

    pub fn load_binary(path: impl AsRef<Path>) -> Result<GanPair> {
        let path = path.as_ref();
        let display = path.display().to_string();
        let file = File::open(path).map_err(|e| Error::io(display.clone(), e))?;
        let mut r = BinReader::new(BufReader::new(file), display);
        r.magic(MAGIC, VERSION)?;
        let config = GanConfig {
            noise_dim: r.u32()? as usize,
            hidden: r.u32()? as usize,
            learning_rate: r.f64()?,
            steps: r.u32()? as usize,
            batch_size: r.u32()? as usize,
            seed: r.u64()?,
        };
        let n_warn = r.u64()? as usize;
        let mut collapse_warnings = Vec::with_capacity(n_warn.min(1 << 20));
        for _ in 0..n_warn {
            collapse_warnings.push(r.u64()? as usize);
        }
        let gen_params = r.f64_vec()?;
        let disc_params = r.f64_vec()?;
        if gen_params.len() != gen_spec(&config).param_count()
            || disc_params.len() != disc_spec(&config).param_count()
        {
            return Err(format_err(r.path(), "parameter count mismatch"));
        }
        Ok(GanPair {
            config,
            gen_params,
            disc_params,
            collapse_warnings,
        })
    }
}
