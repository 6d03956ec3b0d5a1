//! Synthetic objectives with seeded stochastic gradient oracles.
//!
//! Every stochastic gradient is a pure function of `(seed, worker, step, x)`,
//! so calls can run in any order or in parallel.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vector::{check_dims, ParamVector};

/// Problem description as it appears in a run config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemSpec {
    /// `f(x) = ½(x−x*)ᵀA(x−x*)` with diagonal `A`, spectrum spread linearly
    /// over `[mu, l]`, and a random minimizer of scale `target_scale`.
    Quadratic {
        mu: f64,
        l: f64,
        #[serde(default = "default_target_scale")]
        target_scale: f64,
    },
    /// Logistic regression over `samples` synthetic points, sharded by
    /// `j mod n` across workers, with minibatches of `batch`.
    Logistic {
        samples: usize,
        batch: usize,
        #[serde(default)]
        label_noise: f64,
    },
    /// One tanh hidden layer regressing a synthetic teacher. The parameter
    /// dimension must equal `hidden·(inputs+2) + 1`.
    MlpTiny {
        inputs: usize,
        hidden: usize,
        samples: usize,
        batch: usize,
    },
}

fn default_target_scale() -> f64 {
    1.0
}

#[derive(Debug, Clone)]
enum Objective {
    Quadratic { diag: Vec<f64>, b: Vec<f64>, minimizer: Vec<f64> },
    Logistic { features: Vec<Vec<f64>>, labels: Vec<f64>, batch: usize },
    Mlp { inputs: usize, hidden: usize, features: Vec<Vec<f64>>, targets: Vec<f64>, batch: usize },
}

/// Seeded gradient oracle shared by all simulated workers.
#[derive(Debug, Clone)]
pub struct GradientOracle {
    objective: Objective,
    dim: usize,
    n_workers: usize,
    sigma: f64,
    seed: u64,
    g_inf_clip: Option<f64>,
}

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent stream per `(seed, domain, a, b)`.
fn stream(seed: u64, domain: u64, a: u64, b: u64) -> ChaCha8Rng {
    let mut h = mix(seed ^ 0x9e37_79b9_7f4a_7c15);
    for word in [domain, a, b] {
        h = mix(h ^ word.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    }
    ChaCha8Rng::seed_from_u64(h)
}

const DOMAIN_SETUP: u64 = 1;
const DOMAIN_NOISE: u64 = 2;
const DOMAIN_BATCH: u64 = 3;
const DOMAIN_INIT: u64 = 4;

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

impl GradientOracle {
    pub fn from_spec(spec: &ProblemSpec, dim: usize, n_workers: usize, sigma: f64, seed: u64) -> Result<Self> {
        if n_workers == 0 || dim == 0 {
            return Err(Error::InvalidConfig("problem needs at least one worker and one dimension".into()));
        }
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidConfig(format!("sigma must be non-negative, got {sigma}")));
        }
        let mut rng = stream(seed, DOMAIN_SETUP, 0, 0);
        let objective = match *spec {
            ProblemSpec::Quadratic { mu, l, target_scale } => {
                if !(mu > 0.0 && l >= mu) {
                    return Err(Error::InvalidConfig(format!("quadratic needs 0 < mu <= l, got {mu}, {l}")));
                }
                let diag: Vec<f64> = (0..dim)
                    .map(|i| if dim == 1 { l } else { mu + (l - mu) * i as f64 / (dim - 1) as f64 })
                    .collect();
                let minimizer: Vec<f64> = (0..dim).map(|_| target_scale * normal(&mut rng)).collect();
                let b = diag.iter().zip(&minimizer).map(|(a, x)| a * x).collect();
                Objective::Quadratic { diag, b, minimizer }
            }
            ProblemSpec::Logistic { samples, batch, label_noise } => {
                if samples < n_workers || batch == 0 {
                    return Err(Error::InvalidConfig("logistic needs samples >= n_workers and batch >= 1".into()));
                }
                let truth: Vec<f64> = (0..dim).map(|_| normal(&mut rng)).collect();
                let mut features = Vec::with_capacity(samples);
                let mut labels = Vec::with_capacity(samples);
                for _ in 0..samples {
                    let a: Vec<f64> = (0..dim).map(|_| normal(&mut rng) / (dim as f64).sqrt()).collect();
                    let margin: f64 = a.iter().zip(&truth).map(|(p, q)| p * q).sum();
                    let flip = rng.random::<f64>() < label_noise;
                    let y = if (margin >= 0.0) != flip { 1.0 } else { -1.0 };
                    features.push(a);
                    labels.push(y);
                }
                Objective::Logistic { features, labels, batch }
            }
            ProblemSpec::MlpTiny { inputs, hidden, samples, batch } => {
                let expected = hidden * (inputs + 2) + 1;
                if dim != expected {
                    return Err(Error::InvalidConfig(format!(
                        "mlp_tiny with {inputs} inputs and {hidden} hidden units needs dim {expected}, got {dim}"
                    )));
                }
                if samples < n_workers || batch == 0 {
                    return Err(Error::InvalidConfig("mlp_tiny needs samples >= n_workers and batch >= 1".into()));
                }
                let teacher: Vec<f64> = (0..dim).map(|_| normal(&mut rng)).collect();
                let mut features = Vec::with_capacity(samples);
                let mut targets = Vec::with_capacity(samples);
                for _ in 0..samples {
                    let a: Vec<f64> = (0..inputs).map(|_| normal(&mut rng)).collect();
                    targets.push(mlp_forward(&teacher, inputs, hidden, &a).0);
                    features.push(a);
                }
                Objective::Mlp { inputs, hidden, features, targets, batch }
            }
        };
        Ok(Self { objective, dim, n_workers, sigma, seed, g_inf_clip: None })
    }

    /// Quadratic with explicit diagonal `A` and linear term `b`.
    pub fn quadratic(diag: Vec<f64>, b: Vec<f64>, n_workers: usize, sigma: f64, seed: u64) -> Result<Self> {
        check_dims(diag.len(), b.len())?;
        if diag.iter().any(|&a| a.is_nan() || a <= 0.0) {
            return Err(Error::InvalidConfig("quadratic diagonal must be positive".into()));
        }
        let minimizer = b.iter().zip(&diag).map(|(b, a)| b / a).collect();
        Ok(Self {
            dim: diag.len(),
            objective: Objective::Quadratic { diag, b, minimizer },
            n_workers,
            sigma,
            seed,
            g_inf_clip: None,
        })
    }

    pub fn with_clip(mut self, g_inf_clip: Option<f64>) -> Self {
        self.g_inf_clip = g_inf_clip;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_workers(&self) -> usize {
        self.n_workers
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn g_inf_clip(&self) -> Option<f64> {
        self.g_inf_clip
    }

    /// Smoothness constant when one is known in closed form.
    pub fn known_l(&self) -> Option<f64> {
        match &self.objective {
            Objective::Quadratic { diag, .. } => Some(diag.iter().fold(0.0, |a: f64, &b| a.max(b))),
            // λ_max(AᵀA)/N ≤ mean ‖a_j‖², and the logistic curvature is at most ¼.
            Objective::Logistic { features, .. } => {
                let mean_sq = features.iter().map(|a| a.iter().map(|v| v * v).sum::<f64>()).sum::<f64>()
                    / features.len() as f64;
                Some(mean_sq / 4.0)
            }
            Objective::Mlp { .. } => None,
        }
    }

    /// The minimizer, where it is known.
    pub fn minimizer(&self) -> Option<ParamVector> {
        match &self.objective {
            Objective::Quadratic { minimizer, .. } => Some(ParamVector::from_raw(minimizer.clone())),
            _ => None,
        }
    }

    /// Starting point: the origin for convex problems, a small seeded draw for
    /// the MLP so hidden units start out distinct.
    pub fn initial_point(&self) -> ParamVector {
        match &self.objective {
            Objective::Mlp { .. } => {
                let mut rng = stream(self.seed, DOMAIN_INIT, 0, 0);
                ParamVector::from_raw((0..self.dim).map(|_| 0.1 * normal(&mut rng)).collect())
            }
            _ => ParamVector::zeros(self.dim),
        }
    }

    /// Noise-free objective. Quadratics report `f − f*`.
    pub fn loss(&self, x: &ParamVector) -> Result<f64> {
        check_dims(self.dim, x.len())?;
        let x = x.as_slice();
        Ok(match &self.objective {
            Objective::Quadratic { diag, minimizer, .. } => {
                0.5 * diag.iter().zip(x).zip(minimizer).fold(0.0, |acc, ((a, xi), s)| acc + a * (xi - s) * (xi - s))
            }
            Objective::Logistic { features, labels, .. } => {
                let total: f64 = features.iter().zip(labels).map(|(a, &y)| softplus(-y * dot(a, x))).sum();
                total / features.len() as f64
            }
            Objective::Mlp { inputs, hidden, features, targets, .. } => {
                let total: f64 = features
                    .iter()
                    .zip(targets)
                    .map(|(a, &y)| {
                        let r = mlp_forward(x, *inputs, *hidden, a).0 - y;
                        0.5 * r * r
                    })
                    .sum();
                total / features.len() as f64
            }
        })
    }

    /// Exact gradient `∇f(x)`.
    pub fn full_grad(&self, x: &ParamVector) -> Result<ParamVector> {
        check_dims(self.dim, x.len())?;
        let xs = x.as_slice();
        let g = match &self.objective {
            Objective::Quadratic { diag, b, .. } => diag.iter().zip(xs).zip(b).map(|((a, xi), bi)| a * xi - bi).collect(),
            Objective::Logistic { features, labels, .. } => {
                let idx: Vec<usize> = (0..features.len()).collect();
                logistic_grad(features, labels, &idx, xs)
            }
            Objective::Mlp { inputs, hidden, features, targets, .. } => {
                let idx: Vec<usize> = (0..features.len()).collect();
                mlp_grad(*inputs, *hidden, features, targets, &idx, xs)
            }
        };
        Ok(ParamVector::from_raw(g))
    }

    /// Stochastic gradient of worker `worker` at step `t`.
    ///
    /// Quadratic: `Ax − b` plus Gaussian noise of per-coordinate standard
    /// deviation `σ/√d`, so `E‖noise‖² = σ²`. Logistic and MLP: a minibatch
    /// drawn with replacement from the worker's shard, plus the same additive
    /// noise. With clipping on, each coordinate is clamped to `[−G∞, G∞]`.
    pub fn grad(&self, worker: usize, t: usize, x: &ParamVector) -> Result<ParamVector> {
        check_dims(self.dim, x.len())?;
        if worker >= self.n_workers {
            return Err(Error::WorkerCountMismatch { expected: self.n_workers, got: worker + 1 });
        }
        let xs = x.as_slice();
        let mut g = match &self.objective {
            Objective::Quadratic { .. } => self.full_grad(x)?.into_vec(),
            Objective::Logistic { features, labels, batch } => {
                let idx = self.minibatch(worker, t, features.len(), *batch);
                logistic_grad(features, labels, &idx, xs)
            }
            Objective::Mlp { inputs, hidden, features, targets, batch } => {
                let idx = self.minibatch(worker, t, features.len(), *batch);
                mlp_grad(*inputs, *hidden, features, targets, &idx, xs)
            }
        };
        if self.sigma > 0.0 {
            let std = self.sigma / (self.dim as f64).sqrt();
            let mut rng = stream(self.seed, DOMAIN_NOISE, worker as u64, t as u64);
            g.iter_mut().for_each(|gi| *gi += std * normal(&mut rng));
        }
        if let Some(clip) = self.g_inf_clip {
            g.iter_mut().for_each(|gi| *gi = gi.clamp(-clip, clip));
        }
        Ok(ParamVector::from_raw(g))
    }

    /// Indices `j ≡ worker (mod n)` sampled with replacement.
    fn minibatch(&self, worker: usize, t: usize, samples: usize, batch: usize) -> Vec<usize> {
        let shard = (samples - worker).div_ceil(self.n_workers);
        let mut rng = stream(self.seed, DOMAIN_BATCH, worker as u64, t as u64);
        (0..batch).map(|_| worker + self.n_workers * rng.random_range(0..shard)).collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (p, q)| acc + p * q)
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn logistic_grad(features: &[Vec<f64>], labels: &[f64], idx: &[usize], x: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    for &j in idx {
        let (a, y) = (&features[j], labels[j]);
        // d/dx softplus(−y aᵀx) = −y σ(−y aᵀx) a
        let w = -y * sigmoid(-y * dot(a, x));
        g.iter_mut().zip(a).for_each(|(gi, ai)| *gi += w * ai);
    }
    let inv = 1.0 / idx.len() as f64;
    g.iter_mut().for_each(|gi| *gi *= inv);
    g
}

// Layout: W1 (hidden × inputs, row-major), b1 (hidden), w2 (hidden), b2.
fn mlp_forward(p: &[f64], inputs: usize, hidden: usize, a: &[f64]) -> (f64, Vec<f64>) {
    let (w1, rest) = p.split_at(hidden * inputs);
    let (b1, rest) = rest.split_at(hidden);
    let (w2, b2) = rest.split_at(hidden);
    let h: Vec<f64> = (0..hidden).map(|k| (dot(&w1[k * inputs..(k + 1) * inputs], a) + b1[k]).tanh()).collect();
    (dot(w2, &h) + b2[0], h)
}

fn mlp_grad(
    inputs: usize,
    hidden: usize,
    features: &[Vec<f64>],
    targets: &[f64],
    idx: &[usize],
    p: &[f64],
) -> Vec<f64> {
    let mut g = vec![0.0; p.len()];
    let w2 = &p[hidden * inputs + hidden..hidden * inputs + 2 * hidden];
    for &j in idx {
        let a = &features[j];
        let (out, h) = mlp_forward(p, inputs, hidden, a);
        let r = out - targets[j];
        for k in 0..hidden {
            let dz = r * w2[k] * (1.0 - h[k] * h[k]);
            for (i, ai) in a.iter().enumerate() {
                g[k * inputs + i] += dz * ai;
            }
            g[hidden * inputs + k] += dz;
            g[hidden * inputs + hidden + k] += r * h[k];
        }
        g[hidden * inputs + 2 * hidden] += r;
    }
    let inv = 1.0 / idx.len() as f64;
    g.iter_mut().for_each(|gi| *gi *= inv);
    g
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::new(v.to_vec()).unwrap()
    }

    fn finite_difference(oracle: &GradientOracle, x: &ParamVector) -> Vec<f64> {
        let h = 1e-6;
        (0..x.len())
            .map(|i| {
                let mut plus = x.clone().into_vec();
                let mut minus = plus.clone();
                plus[i] += h;
                minus[i] -= h;
                (oracle.loss(&pv(&plus)).unwrap() - oracle.loss(&pv(&minus)).unwrap()) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn quadratic_examples() {
        let q = GradientOracle::quadratic(vec![2.0], vec![0.0], 1, 0.0, 1).unwrap();
        assert_eq!(q.grad(0, 0, &pv(&[3.0])).unwrap(), pv(&[6.0]));
        assert_eq!(q.loss(&pv(&[3.0])).unwrap(), 9.0);

        let spec = ProblemSpec::Quadratic { mu: 0.5, l: 2.0, target_scale: 1.0 };
        let q = GradientOracle::from_spec(&spec, 6, 2, 0.0, 9).unwrap();
        let star = q.minimizer().unwrap();
        assert!(q.grad(1, 5, &star).unwrap().norm_inf() <= 1e-15);
        assert_eq!(q.loss(&star).unwrap(), 0.0);
        assert_eq!(q.known_l(), Some(2.0));
    }

    #[test]
    fn grad_is_deterministic() {
        let spec = ProblemSpec::Quadratic { mu: 0.1, l: 1.0, target_scale: 1.0 };
        let q = GradientOracle::from_spec(&spec, 8, 3, 0.7, 42).unwrap();
        let x = pv(&[0.3; 8]);
        assert_eq!(q.grad(2, 17, &x).unwrap(), q.grad(2, 17, &x).unwrap());
        assert_ne!(q.grad(2, 17, &x).unwrap(), q.grad(1, 17, &x).unwrap());
        assert_ne!(q.grad(2, 17, &x).unwrap(), q.grad(2, 18, &x).unwrap());
    }

    #[test]
    fn clipping_bounds_infinity_norm() {
        let spec = ProblemSpec::Quadratic { mu: 1.0, l: 4.0, target_scale: 5.0 };
        let q = GradientOracle::from_spec(&spec, 10, 2, 3.0, 5).unwrap().with_clip(Some(0.5));
        for t in 0..50 {
            assert!(q.grad(t % 2, t, &ParamVector::zeros(10)).unwrap().norm_inf() <= 0.5);
        }
    }

    #[test]
    fn logistic_gradient_matches_finite_differences() {
        let spec = ProblemSpec::Logistic { samples: 40, batch: 8, label_noise: 0.1 };
        let o = GradientOracle::from_spec(&spec, 5, 4, 0.0, 3).unwrap();
        let x = pv(&[0.2, -0.4, 0.1, 0.9, -0.3]);
        let fd = finite_difference(&o, &x);
        let g = o.full_grad(&x).unwrap();
        for (a, b) in g.iter().zip(&fd) {
            assert!((a - b).abs() < 1e-7, "{a} vs {b}");
        }
    }

    #[test]
    fn logistic_separable_large_margin_has_small_loss() {
        let spec = ProblemSpec::Logistic { samples: 64, batch: 4, label_noise: 0.0 };
        let o = GradientOracle::from_spec(&spec, 4, 2, 0.0, 8).unwrap();
        // Recover the generating direction from the labelled data itself.
        let Objective::Logistic { features, labels, .. } = &o.objective else { unreachable!() };
        let mut w = vec![0.0; 4];
        for (a, y) in features.iter().zip(labels) {
            w.iter_mut().zip(a).for_each(|(wi, ai)| *wi += y * ai);
        }
        let margin_ok = features.iter().zip(labels).all(|(a, y)| y * dot(a, &w) > 0.0);
        let direct = |scale: f64| {
            let x: Vec<f64> = w.iter().map(|v| v * scale).collect();
            features.iter().zip(labels).map(|(a, &y)| (1.0 + (-y * dot(a, &x)).exp()).ln()).sum::<f64>()
                / features.len() as f64
        };
        if margin_ok {
            let x = pv(&w.iter().map(|v| v * 1e4).collect::<Vec<_>>());
            let loss = o.loss(&x).unwrap();
            assert!((loss - direct(1e4)).abs() < 1e-12);
            assert!(loss < 1e-6);
        }
        assert!((o.loss(&pv(&w)).unwrap() - direct(1.0)).abs() < 1e-12);
    }

    #[test]
    fn minibatches_respect_shards() {
        let spec = ProblemSpec::Logistic { samples: 30, batch: 16, label_noise: 0.0 };
        let o = GradientOracle::from_spec(&spec, 3, 4, 0.0, 1).unwrap();
        for worker in 0..4 {
            for t in 0..20 {
                let idx = o.minibatch(worker, t, 30, 16);
                assert!(idx.iter().all(|&j| j < 30 && j % 4 == worker));
            }
        }
    }

    #[test]
    fn mlp_gradient_matches_finite_differences() {
        let spec = ProblemSpec::MlpTiny { inputs: 3, hidden: 4, samples: 20, batch: 5 };
        let dim = 4 * (3 + 2) + 1;
        let o = GradientOracle::from_spec(&spec, dim, 2, 0.0, 4).unwrap();
        let x = pv(&(0..dim).map(|i| ((i * 37 % 11) as f64 - 5.0) / 10.0).collect::<Vec<_>>());
        let fd = finite_difference(&o, &x);
        let g = o.full_grad(&x).unwrap();
        for (a, b) in g.iter().zip(&fd) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
        assert!(GradientOracle::from_spec(&spec, dim + 1, 2, 0.0, 4).is_err());
    }

    #[test]
    fn quadratic_smoothness_holds_on_random_pairs() {
        let spec = ProblemSpec::Quadratic { mu: 0.2, l: 3.0, target_scale: 1.0 };
        let q = GradientOracle::from_spec(&spec, 12, 1, 0.0, 77).unwrap();
        let l = q.known_l().unwrap();
        let mut rng = stream(5, 99, 0, 0);
        for _ in 0..200 {
            let x = pv(&(0..12).map(|_| normal(&mut rng)).collect::<Vec<_>>());
            let y = pv(&(0..12).map(|_| normal(&mut rng)).collect::<Vec<_>>());
            let gx = q.full_grad(&x).unwrap();
            let gy = q.full_grad(&y).unwrap();
            let dg: f64 = gx.iter().zip(gy.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            let dx: f64 = x.iter().zip(y.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            assert!(dg <= l * dx * (1.0 + 1e-12));
        }
    }

    #[test]
    fn noise_is_unbiased() {
        let (d, sigma, draws) = (4, 2.0, 100_000);
        let q = GradientOracle::quadratic(vec![1.0; d], vec![0.0; d], 1, sigma, 13).unwrap();
        let x = ParamVector::zeros(d);
        let mut sum = vec![0.0; d];
        for t in 0..draws {
            let g = q.grad(0, t, &x).unwrap();
            sum.iter_mut().zip(g.iter()).for_each(|(s, gi)| *s += gi);
        }
        let bound = 5.0 * sigma / (draws as f64).sqrt();
        assert!(sum.iter().all(|s| (s / draws as f64).abs() <= bound));
    }
}
