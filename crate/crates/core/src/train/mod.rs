//! Output-error training of parametrized systems.
//!
//! The objective is the mean squared output error `J(w)` plus weighted
//! regularizers: link-flow sparsity, dissipativity of the resistive
//! elements and an equilibrium at the origin. Gradients come from forward
//! sensitivities, the optimizer is Adam, and a primal-dual scheme minimizes
//! the sparsity term subject to `J(w) <= epsilon`.

mod adam;
mod loss;
mod objective;

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use loss::{loss_mse, reg_dissipativity, reg_equilibrium, reg_sparsity};
pub use objective::{grad_total_loss, simulate_like, total_loss, Objective, ObjectiveGrad};

use crate::error::{Error, Result};
use crate::network::OdeSystem;
use crate::odesolve::{Method, Trajectory};
use objective::{evaluate, evaluate_grad, Terms};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DissipMode {
    /// Penalize only negative power (energy generation).
    #[default]
    Hinge,
    /// Time average of the signed power.
    Integral,
}

/// How the squared error of one sample is normalized.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MseNormalization {
    /// Mean over output components.
    #[default]
    PerEntry,
    /// Squared Euclidean norm of the sample.
    PerSample,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BatchStrategy {
    #[default]
    Full,
    /// One trajectory drawn uniformly at random per iteration.
    OnePerIteration,
}

fn default_h() -> f64 {
    0.05
}

fn default_max_iterations() -> usize {
    1000
}

fn default_epsilon() -> f64 {
    1e-4
}

fn default_alpha() -> f64 {
    0.1
}

fn default_inner() -> usize {
    50
}

fn default_tolerance() -> f64 {
    1e-14
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub method: Method,
    /// Solver step; must divide the data sampling period.
    #[serde(default = "default_h")]
    pub h: f64,
    /// Training horizon; the full data length when absent.
    pub horizon: Option<f64>,
    pub lambda_sparsity: f64,
    pub lambda_dissip: f64,
    pub lambda_equilibrium: f64,
    pub dissip_mode: DissipMode,
    pub mse_normalization: MseNormalization,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub primal_dual: bool,
    /// Accuracy target of the primal-dual scheme.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Dual step.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_inner")]
    pub inner_iterations: usize,
    pub lambda0: f64,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    pub seed: u64,
    pub batch: BatchStrategy,
    /// Stop once `J` falls to this value.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            method: Method::Midpoint,
            h: default_h(),
            horizon: None,
            lambda_sparsity: 0.0,
            lambda_dissip: 0.0,
            lambda_equilibrium: 0.0,
            dissip_mode: DissipMode::Hinge,
            mse_normalization: MseNormalization::PerEntry,
            lr: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            adam_eps: adam.eps,
            primal_dual: false,
            epsilon: default_epsilon(),
            alpha: default_alpha(),
            inner_iterations: default_inner(),
            lambda0: 0.0,
            max_iterations: default_max_iterations(),
            seed: 0,
            batch: BatchStrategy::Full,
            tolerance: default_tolerance(),
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::config(name, format!("must be positive, got {v}")))
            }
        };
        let nonneg = |name: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::config(name, format!("must be nonnegative, got {v}")))
            }
        };
        positive("h", self.h)?;
        if let Some(t) = self.horizon {
            positive("horizon", t)?;
        }
        nonneg("lambda_sparsity", self.lambda_sparsity)?;
        nonneg("lambda_dissip", self.lambda_dissip)?;
        nonneg("lambda_equilibrium", self.lambda_equilibrium)?;
        positive("lr", self.lr)?;
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(name, format!("must lie in [0, 1), got {b}")));
            }
        }
        positive("adam_eps", self.adam_eps)?;
        nonneg("tolerance", self.tolerance)?;
        if self.primal_dual {
            positive("epsilon", self.epsilon)?;
            positive("alpha", self.alpha)?;
            nonneg("lambda0", self.lambda0)?;
            if self.inner_iterations == 0 {
                return Err(Error::config("inner_iterations", "must be at least 1"));
            }
        }
        Ok(())
    }
}

/// One optimizer iteration. `r` is the weighted regularization for plain
/// training and the sparsity term for the primal-dual scheme.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub j: f64,
    pub r: f64,
    pub lambda: f64,
    pub wall_ms: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub records: Vec<IterationRecord>,
    /// Dual variable after each dual update (primal-dual only).
    pub lambda_trace: Vec<f64>,
    pub params: Vec<f64>,
    /// `J` on the full training set before and after training.
    pub initial_j: f64,
    pub final_j: f64,
    pub final_r: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Optimizer state after the last step; resuming from it continues the
    /// run exactly.
    pub checkpoint: Checkpoint,
}

/// Optimizer state needed to continue a plain training run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    /// Number of completed iterations.
    pub iteration: usize,
    pub adam: AdamState,
}

impl TrainReport {
    pub fn mean_wall_ms(&self) -> f64 {
        if self.records.is_empty() {
            0.0
        } else {
            self.records.iter().map(|r| r.wall_ms).sum::<f64>() / self.records.len() as f64
        }
    }
}

fn all(data: &[Trajectory]) -> Vec<&Trajectory> {
    data.iter().collect()
}

fn diverged(iteration: usize, last: &[f64]) -> Error {
    Error::Diverged {
        iteration,
        last_finite: last.to_vec(),
    }
}

fn finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Minimizes `J + sum lambda_r R_r` with Adam from `w0`.
pub fn train<S: OdeSystem + ?Sized>(sys: &S, data: &[Trajectory], w0: &[f64], cfg: &TrainConfig) -> Result<TrainReport> {
    train_resume(sys, data, w0, None, cfg)
}

/// Batch drawn at a given iteration; depends only on the seed and the
/// iteration number.
fn batch_index(seed: u64, iteration: usize, len: usize) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(iteration as u64);
    rng.gen_range(0..len)
}

/// Like [`train`], continuing from a checkpoint of an earlier run.
/// `max_iterations` counts the additional iterations.
pub fn train_resume<S: OdeSystem + ?Sized>(
    sys: &S,
    data: &[Trajectory],
    w0: &[f64],
    resume: Option<&Checkpoint>,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Structure("no training data".into()));
    }
    let full = all(data);
    let terms = Terms::from_config(cfg);
    let initial = evaluate(sys, &full, w0, cfg, terms).map_err(|e| if e.is_numerical() { diverged(0, w0) } else { e })?;
    let mut report = TrainReport {
        initial_j: initial.j,
        ..TrainReport::default()
    };
    let mut w = w0.to_vec();
    let (first, mut state) = match resume {
        Some(c) if c.adam.m.len() == w.len() && c.adam.v.len() == w.len() => (c.iteration, c.adam.clone()),
        Some(c) => return Err(Error::dim("checkpoint moments", w.len(), c.adam.m.len())),
        None => (0, AdamState::new(w.len())),
    };
    let adam = cfg.adam();
    report.checkpoint = Checkpoint {
        iteration: first,
        adam: state.clone(),
    };
    for it in first..first + cfg.max_iterations {
        let start = Instant::now();
        let batch: Vec<&Trajectory> = match cfg.batch {
            BatchStrategy::Full => full.clone(),
            BatchStrategy::OnePerIteration => vec![&data[batch_index(cfg.seed, it, data.len())]],
        };
        let g = match evaluate_grad(sys, &batch, &w, cfg, terms) {
            Ok(g) => g,
            Err(e) if e.is_numerical() => return Err(diverged(it, &w)),
            Err(e) => return Err(e),
        };
        let grad = g.total(cfg);
        if !g.value.is_finite() || !finite(&grad) {
            return Err(diverged(it, &w));
        }
        let done = cfg.batch == BatchStrategy::Full && g.value.j <= cfg.tolerance;
        if !done {
            adam_step(&mut w, &grad, &mut state, &adam);
        }
        report.records.push(IterationRecord {
            iter: it,
            j: g.value.j,
            r: g.value.weighted_regularization(cfg),
            lambda: 0.0,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
        report.iterations = it + 1 - first;
        report.checkpoint = Checkpoint {
            iteration: it + 1,
            adam: state.clone(),
        };
        if done {
            report.converged = true;
            break;
        }
    }
    let last = first + report.records.len();
    let fin = evaluate(sys, &full, &w, cfg, terms).map_err(|e| if e.is_numerical() { diverged(last, &w) } else { e })?;
    if !fin.is_finite() {
        return Err(diverged(last, &w));
    }
    report.final_j = fin.j;
    report.final_r = fin.weighted_regularization(cfg);
    report.params = w;
    Ok(report)
}

/// Projected dual ascent `lambda <- max(0, lambda + alpha (J - epsilon))`.
pub fn dual_update(lambda: f64, alpha: f64, j: f64, epsilon: f64) -> f64 {
    (lambda + alpha * (j - epsilon)).max(0.0)
}

/// Minimizes the link-flow sparsity term subject to `J <= epsilon`: blocks
/// of `inner_iterations` Adam steps on `R + lambda (J - epsilon)`
/// alternate with dual updates. The dual step is halved after three
/// consecutive sign changes of `J - epsilon`. `max_iterations` bounds the
/// total number of primal steps.
pub fn train_sparse_primal_dual<S: OdeSystem + ?Sized>(
    sys: &S,
    data: &[Trajectory],
    w0: &[f64],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    let mut cfg = cfg.clone();
    cfg.primal_dual = true;
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Structure("no training data".into()));
    }
    let full = all(data);
    let terms = Terms {
        sparsity: true,
        dissipativity: false,
        equilibrium: false,
    };
    let initial = evaluate(sys, &full, w0, &cfg, terms).map_err(|e| if e.is_numerical() { diverged(0, w0) } else { e })?;
    let mut report = TrainReport {
        initial_j: initial.j,
        ..TrainReport::default()
    };
    let mut w = w0.to_vec();
    let mut state = AdamState::new(w.len());
    let adam = cfg.adam();
    let mut lambda = cfg.lambda0;
    let mut alpha = cfg.alpha;
    let mut last_sign = 0.0f64;
    let mut flips = 0usize;
    let outer = cfg.max_iterations.div_ceil(cfg.inner_iterations);
    let mut it = 0usize;
    let mut last_r = f64::INFINITY;
    for _ in 0..outer {
        for _ in 0..cfg.inner_iterations {
            let start = Instant::now();
            let g = match evaluate_grad(sys, &full, &w, &cfg, terms) {
                Ok(g) => g,
                Err(e) if e.is_numerical() => return Err(diverged(it, &w)),
                Err(e) => return Err(e),
            };
            let grad = g.combine(lambda, 1.0, 0.0, 0.0);
            if !g.value.is_finite() || !finite(&grad) {
                return Err(diverged(it, &w));
            }
            adam_step(&mut w, &grad, &mut state, &adam);
            report.records.push(IterationRecord {
                iter: it,
                j: g.value.j,
                r: g.value.sparsity,
                lambda,
                wall_ms: start.elapsed().as_secs_f64() * 1e3,
            });
            it += 1;
        }
        let now = evaluate(sys, &full, &w, &cfg, terms).map_err(|e| if e.is_numerical() { diverged(it, &w) } else { e })?;
        if !now.is_finite() {
            return Err(diverged(it, &w));
        }
        let gap = now.j - cfg.epsilon;
        let sign = gap.signum();
        if last_sign != 0.0 && sign != last_sign {
            flips += 1;
            if flips >= 3 {
                alpha *= 0.5;
                flips = 0;
            }
        } else {
            flips = 0;
        }
        last_sign = sign;
        lambda = dual_update(lambda, alpha, now.j, cfg.epsilon);
        report.lambda_trace.push(lambda);
        let settled = (last_r - now.sparsity).abs() <= 1e-6 * (1.0 + now.sparsity);
        last_r = now.sparsity;
        if now.j <= 1.1 * cfg.epsilon && settled {
            report.converged = true;
            break;
        }
    }
    let fin = evaluate(sys, &full, &w, &cfg, terms)?;
    report.final_j = fin.j;
    report.final_r = fin.sparsity;
    report.iterations = it;
    report.params = w;
    Ok(report)
}

#[cfg(test)]
mod tests;
