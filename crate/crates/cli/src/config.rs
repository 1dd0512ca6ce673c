use std::path::PathBuf;
use std::str::FromStr;

use phlearn::odesolve::Method;
use phlearn::train::{BatchStrategy, TrainConfig};
use phlearn::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Pendulum,
    Swarm,
    MsdDemo,
    RlcDemo,
    SparseToy,
}

impl Experiment {
    pub const ALL: [Experiment; 5] = [
        Experiment::Pendulum,
        Experiment::Swarm,
        Experiment::MsdDemo,
        Experiment::RlcDemo,
        Experiment::SparseToy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Pendulum => "pendulum",
            Experiment::Swarm => "swarm",
            Experiment::MsdDemo => "msd-demo",
            Experiment::RlcDemo => "rlc-demo",
            Experiment::SparseToy => "sparse-toy",
        }
    }
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::Config {
                field: "experiment".into(),
                reason: format!("unknown experiment `{s}`"),
            })
    }
}

/// System and data settings. Fields a given experiment does not use are
/// ignored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    /// Hidden width of the learned network.
    pub hidden: usize,
    pub input_scale: f64,
    pub output_scale: f64,
    /// Particle count and spatial dimension (swarm).
    pub particles: usize,
    pub dim: usize,
    /// Number of training trajectories (swarm); the pendulum always uses
    /// its four corner initial conditions.
    pub series: usize,
    pub ic_range: [f64; 2],
    /// Data horizon and sampling period.
    pub t_end: f64,
    pub sample_h: f64,
    /// Internal rk4 steps per sampling period for ground-truth data.
    pub substeps: usize,
    /// Fresh initial conditions used by `eval`.
    pub eval_count: usize,
    /// Coefficients of the ground-truth and initial linear networks.
    pub true_coefficients: Vec<f64>,
    pub init_coefficients: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub seed: u64,
    pub out: PathBuf,
    /// Directory holding generated trajectories; `<out>/data` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_dir: Option<PathBuf>,
    pub system: SystemConfig,
    pub train: TrainConfig,
}

impl ExperimentConfig {
    pub fn default_for(experiment: Experiment) -> Self {
        let base_system = SystemConfig {
            hidden: 0,
            input_scale: 1.0,
            output_scale: 1.0,
            particles: 0,
            dim: 1,
            series: 2,
            ic_range: [-1.0, 1.0],
            t_end: 10.0,
            sample_h: 0.05,
            substeps: 10,
            eval_count: 10,
            true_coefficients: Vec::new(),
            init_coefficients: Vec::new(),
        };
        let base_train = TrainConfig::default();
        let (system, train) = match experiment {
            Experiment::Pendulum => (
                SystemConfig {
                    hidden: 50,
                    output_scale: 0.1,
                    t_end: 6.0,
                    sample_h: 0.05,
                    series: 4,
                    ic_range: [-0.2, 0.2],
                    eval_count: 20,
                    init_coefficients: vec![1.0, 1.0, 1.0, 1.0],
                    ..base_system
                },
                TrainConfig {
                    method: Method::Midpoint,
                    h: 0.05,
                    lr: 1e-2,
                    lambda_equilibrium: 1e-3,
                    max_iterations: 3000,
                    batch: BatchStrategy::Full,
                    ..base_train
                },
            ),
            Experiment::Swarm => (
                SystemConfig {
                    hidden: 100,
                    input_scale: 0.1,
                    output_scale: 10.0,
                    particles: 10,
                    dim: 2,
                    series: 5,
                    ic_range: [-10.0, 10.0],
                    t_end: 10.0,
                    sample_h: 0.1,
                    eval_count: 10,
                    ..base_system
                },
                TrainConfig {
                    method: Method::Midpoint,
                    h: 0.1,
                    lr: 1e-2,
                    lambda_equilibrium: 1e-2,
                    max_iterations: 2000,
                    batch: BatchStrategy::OnePerIteration,
                    ..base_train
                },
            ),
            Experiment::MsdDemo => (
                SystemConfig {
                    true_coefficients: vec![1.0, 1.0, 0.5],
                    init_coefficients: vec![2.0, 0.5, 1.0],
                    ..base_system
                },
                TrainConfig {
                    method: Method::Rk4,
                    h: 0.05,
                    lr: 2e-2,
                    max_iterations: 1500,
                    ..base_train
                },
            ),
            Experiment::RlcDemo => (
                SystemConfig {
                    true_coefficients: vec![0.5, 1.0, 1.0],
                    init_coefficients: vec![1.0, 2.0, 0.5],
                    ..base_system
                },
                TrainConfig {
                    method: Method::Rk4,
                    h: 0.05,
                    lr: 2e-2,
                    max_iterations: 1500,
                    ..base_train
                },
            ),
            Experiment::SparseToy => (
                SystemConfig {
                    series: 1,
                    t_end: 10.0,
                    true_coefficients: vec![1.0, 2.0, 0.0],
                    init_coefficients: vec![1.2, 1.5, 0.5],
                    ..base_system
                },
                TrainConfig {
                    method: Method::Rk4,
                    h: 0.05,
                    lr: 3e-2,
                    primal_dual: true,
                    epsilon: 1e-4,
                    alpha: 1e4,
                    lambda0: 1e4,
                    inner_iterations: 50,
                    max_iterations: 5000,
                    ..base_train
                },
            ),
        };
        Self {
            experiment,
            seed: 0,
            out: PathBuf::from("runs").join(experiment.name()),
            data_dir: None,
            system,
            train,
        }
    }

    pub fn data_dir(&self) -> PathBuf {
        self.data_dir.clone().unwrap_or_else(|| self.out.join("data"))
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// SHA-256 of the canonical TOML rendering.
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_toml()?.as_bytes())))
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.system;
        let bad = |field: &str, reason: &str| {
            Err(Error::Config {
                field: format!("system.{field}"),
                reason: reason.into(),
            })
        };
        if !(s.t_end.is_finite() && s.t_end > 0.0) {
            return bad("t_end", "must be positive");
        }
        if !(s.sample_h.is_finite() && s.sample_h > 0.0 && s.sample_h <= s.t_end) {
            return bad("sample_h", "must be positive and at most t_end");
        }
        if s.substeps == 0 {
            return bad("substeps", "must be at least 1");
        }
        if !(s.ic_range[0] < s.ic_range[1]) {
            return bad("ic_range", "lower bound must be below upper bound");
        }
        match self.experiment {
            Experiment::Pendulum | Experiment::Swarm if s.hidden == 0 => return bad("hidden", "must be at least 1"),
            Experiment::Swarm if s.particles < 2 => return bad("particles", "need at least two particles"),
            Experiment::Swarm if !(1..=3).contains(&s.dim) => return bad("dim", "must be 1, 2 or 3"),
            Experiment::Swarm if s.series == 0 => return bad("series", "must be at least 1"),
            Experiment::MsdDemo | Experiment::RlcDemo | Experiment::SparseToy
                if s.true_coefficients.len() != 3 || s.init_coefficients.len() != 3 =>
            {
                return bad("true_coefficients", "need three coefficients");
            }
            Experiment::Pendulum if s.init_coefficients.len() != 4 => {
                return bad("init_coefficients", "need M, J, d1, d2");
            }
            _ => {}
        }
        if s
            .true_coefficients
            .iter()
            .chain(&s.init_coefficients)
            .any(|v| !(v.is_finite() && *v >= 0.0))
        {
            return bad("true_coefficients", "coefficients must be nonnegative");
        }
        self.train.validate().map_err(|e| match e {
            Error::Config { field, reason } => Error::Config {
                field: format!("train.{field}"),
                reason,
            },
            other => other,
        })
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Parses a config file: the experiment's defaults overlaid with the given
/// keys.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let table: toml::Table = toml::from_str(text)?;
    let experiment = match table.get("experiment") {
        Some(toml::Value::String(s)) => s.parse::<Experiment>()?,
        Some(_) => {
            return Err(Error::Config {
                field: "experiment".into(),
                reason: "must be a string".into(),
            })
        }
        None => {
            return Err(Error::Config {
                field: "experiment".into(),
                reason: "missing".into(),
            })
        }
    };
    let mut base: toml::Table = toml::from_str(&ExperimentConfig::default_for(experiment).to_toml()?)?;
    merge(&mut base, table);
    let cfg: ExperimentConfig = base.try_into().map_err(|e: toml::de::Error| Error::Parse(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}
