//! Minimal hand-rolled neural-net machinery over flat `Vec<f64>` parameter
//! blocks. Keeping all parameters in one flat vector makes the optimizer,
//! serialization, and finite-difference gradient checks uniform.

use rand::Rng;

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Numerically stable ln(1 + e^x).
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// y += W x where W is rows x cols, row-major.
pub fn matvec_acc(w: &[f64], x: &[f64], y: &mut [f64], rows: usize, cols: usize) {
    debug_assert_eq!(w.len(), rows * cols);
    debug_assert_eq!(x.len(), cols);
    debug_assert_eq!(y.len(), rows);
    for r in 0..rows {
        let row = &w[r * cols..(r + 1) * cols];
        let mut acc = 0.0;
        for c in 0..cols {
            acc += row[c] * x[c];
        }
        y[r] += acc;
    }
}

/// y += W^T g (accumulate input gradient).
pub fn matvec_t_acc(w: &[f64], g: &[f64], y: &mut [f64], rows: usize, cols: usize) {
    debug_assert_eq!(w.len(), rows * cols);
    debug_assert_eq!(g.len(), rows);
    debug_assert_eq!(y.len(), cols);
    for r in 0..rows {
        let row = &w[r * cols..(r + 1) * cols];
        let gr = g[r];
        for c in 0..cols {
            y[c] += row[c] * gr;
        }
    }
}

/// dW += g x^T (outer product accumulation).
pub fn outer_acc(dw: &mut [f64], g: &[f64], x: &[f64], rows: usize, cols: usize) {
    debug_assert_eq!(dw.len(), rows * cols);
    for r in 0..rows {
        let gr = g[r];
        let row = &mut dw[r * cols..(r + 1) * cols];
        for c in 0..cols {
            row[c] += gr * x[c];
        }
    }
}

/// Uniform +-1/sqrt(fan_in) initialization of a weight block.
pub fn init_block(rng: &mut impl Rng, block: &mut [f64], fan_in: usize) {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    for v in block.iter_mut() {
        *v = rng.gen_range(-bound..bound);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutAct {
    Linear,
    Sigmoid,
}

/// Feedforward network spec: tanh hidden layers, configurable output
/// activation. Parameters live in an external flat slice laid out as
/// (W1, b1, W2, b2, ...).
#[derive(Debug, Clone)]
pub struct MlpSpec {
    pub sizes: Vec<usize>,
    pub out: OutAct,
}

/// Cached forward pass: post-activation values per layer (layer 0 = input).
pub struct MlpCache {
    pub acts: Vec<Vec<f64>>,
}

impl MlpSpec {
    pub fn new(sizes: Vec<usize>, out: OutAct) -> Self {
        assert!(sizes.len() >= 2);
        MlpSpec { sizes, out }
    }

    pub fn param_count(&self) -> usize {
        self.sizes
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    pub fn init(&self, rng: &mut impl Rng) -> Vec<f64> {
        let mut params = vec![0.0; self.param_count()];
        let mut off = 0;
        for w in self.sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            init_block(rng, &mut params[off..off + fan_in * fan_out], fan_in);
            off += fan_in * fan_out + fan_out; // biases stay zero
        }
        params
    }

    pub fn forward(&self, params: &[f64], x: &[f64]) -> Vec<f64> {
        self.forward_cached(params, x).acts.pop().unwrap()
    }

    pub fn forward_cached(&self, params: &[f64], x: &[f64]) -> MlpCache {
        debug_assert_eq!(x.len(), self.sizes[0]);
        debug_assert_eq!(params.len(), self.param_count());
        let mut acts = vec![x.to_vec()];
        let mut off = 0;
        let last = self.sizes.len() - 2;
        for (li, w) in self.sizes.windows(2).enumerate() {
            let (cin, cout) = (w[0], w[1]);
            let wmat = &params[off..off + cin * cout];
            let bias = &params[off + cin * cout..off + cin * cout + cout];
            off += cin * cout + cout;
            let mut z = bias.to_vec();
            matvec_acc(wmat, acts.last().unwrap(), &mut z, cout, cin);
            let a = if li < last {
                z.into_iter().map(f64::tanh).collect()
            } else {
                match self.out {
                    OutAct::Linear => z,
                    OutAct::Sigmoid => z.into_iter().map(sigmoid).collect(),
                }
            };
            acts.push(a);
        }
        MlpCache { acts }
    }

    /// Backward pass. `dout` is the gradient at the network output
    /// (post-activation). Accumulates parameter gradients into `grads`
    /// (same layout as params) and returns the gradient at the input.
    pub fn backward(
        &self,
        params: &[f64],
        cache: &MlpCache,
        dout: &[f64],
        grads: &mut [f64],
    ) -> Vec<f64> {
        debug_assert_eq!(grads.len(), self.param_count());
        // Offsets of each layer's parameter block.
        let mut offsets = Vec::new();
        let mut off = 0;
        for w in self.sizes.windows(2) {
            offsets.push(off);
            off += w[0] * w[1] + w[1];
        }
        let last = self.sizes.len() - 2;
        let mut d = dout.to_vec();
        for li in (0..=last).rev() {
            let (cin, cout) = (self.sizes[li], self.sizes[li + 1]);
            let a_out = &cache.acts[li + 1];
            // Through the activation to pre-activation gradient.
            let mut dz = vec![0.0; cout];
            if li < last {
                for i in 0..cout {
                    dz[i] = d[i] * (1.0 - a_out[i] * a_out[i]);
                }
            } else {
                match self.out {
                    OutAct::Linear => dz.copy_from_slice(&d),
                    OutAct::Sigmoid => {
                        for i in 0..cout {
                            dz[i] = d[i] * a_out[i] * (1.0 - a_out[i]);
                        }
                    }
                }
            }
            let o = offsets[li];
            let wmat = &params[o..o + cin * cout];
            let a_in = &cache.acts[li];
            outer_acc(&mut grads[o..o + cin * cout], &dz, a_in, cout, cin);
            for i in 0..cout {
                grads[o + cin * cout + i] += dz[i];
            }
            let mut dx = vec![0.0; cin];
            matvec_t_acc(wmat, &dz, &mut dx, cout, cin);
            d = dx;
        }
        d
    }
}

/// Momentum SGD with global-norm gradient clipping.
pub struct SgdMomentum {
    pub lr: f64,
    pub momentum: f64,
    pub grad_clip: f64,
    velocity: Vec<f64>,
}

impl SgdMomentum {
    pub fn new(lr: f64, momentum: f64, grad_clip: f64, dim: usize) -> Self {
        SgdMomentum {
            lr,
            momentum,
            grad_clip,
            velocity: vec![0.0; dim],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        debug_assert_eq!(params.len(), grads.len());
        let norm: f64 = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
        let scale = if self.grad_clip > 0.0 && norm > self.grad_clip {
            self.grad_clip / norm
        } else {
            1.0
        };
        for i in 0..params.len() {
            self.velocity[i] = self.momentum * self.velocity[i] - self.lr * grads[i] * scale;
            params[i] += self.velocity[i];
        }
    }
}

/// Central finite-difference gradient of a scalar loss with respect to one
/// parameter. Used by the gradient-check oracles; intentionally independent
/// of the analytic backward passes.
pub fn finite_difference<F>(params: &mut [f64], index: usize, eps: f64, mut loss: F) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    let orig = params[index];
    params[index] = orig + eps;
    let plus = loss(params);
    params[index] = orig - eps;
    let minus = loss(params);
    params[index] = orig;
    (plus - minus) / (2.0 * eps)
}

/// Relative error between an analytic and a numerical gradient entry.
///
/// The denominator is floored at 1e-4: below that scale a central difference
/// of an O(1) loss is dominated by floating-point cancellation, so the check
/// degrades gracefully into an absolute tolerance instead of amplifying
/// round-off noise on near-zero gradient entries.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-4);
    (analytic - numeric).abs() / denom
}
