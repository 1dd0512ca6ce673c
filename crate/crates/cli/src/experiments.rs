use phlearn::constructs::Signal;
use phlearn::network::{assemble_ode, msd_network, rlc_network, AssembledSystem, MsdSpec, Network, OdeSystem, RlcSpec};
use phlearn::odesolve::{integrate_sampled, Method, NoInput, Trajectory};
use phlearn::systems::{
    build_pendulum_surrogate, build_sparse_toy, default_initial_conditions, generate_pendulum_data,
    generate_swarm_data, random_initial_conditions, random_swarm_states, simulate_swarm, surrogate_ids,
    ClosedLoopPendulum, CsParams, PendulumDataSpec, SparseToySpec, SurrogateSpec, SwarmDataSpec, SwarmModel,
    SwarmModelSpec,
};
use phlearn::train::{loss_mse, simulate_like, train, train_sparse_primal_dual, TrainReport};
use phlearn::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{Experiment, ExperimentConfig};

/// Seed offset separating evaluation initial conditions from training ones.
const EVAL_SEED_OFFSET: u64 = 0x5eed_0001;
/// Seed offset for parameter initialization.
const INIT_SEED_OFFSET: u64 = 0x5eed_0002;

/// A trainable model together with its parameter layout.
pub enum Model {
    Network(Box<AssembledSystem>),
    Swarm(SwarmModel),
}

impl Model {
    pub fn system(&self) -> &dyn OdeSystem {
        match self {
            Model::Network(s) => s.as_ref(),
            Model::Swarm(s) => s,
        }
    }

    /// Named slices of the parameter vector.
    pub fn slices(&self) -> Vec<phlearn::constructs::ParamSlice> {
        match self {
            Model::Network(s) => s.params().slices().to_vec(),
            Model::Swarm(s) => vec![phlearn::constructs::ParamSlice {
                name: "pair_force".into(),
                start: 0,
                len: s.param_dim(),
            }],
        }
    }
}

fn sine(amplitude: f64, frequency: f64) -> Signal {
    Signal::Sine {
        amplitude,
        frequency,
        phase: 0.0,
    }
}

fn linear_network(cfg: &ExperimentConfig, coefficients: &[f64]) -> Result<Network> {
    let c = coefficients;
    Ok(match cfg.experiment {
        Experiment::MsdDemo => msd_network(&MsdSpec {
            m: c[0],
            k: c[1],
            d: c[2],
            force: sine(1.0, 0.2),
        }),
        Experiment::RlcDemo => rlc_network(&RlcSpec {
            r: c[0],
            l: c[1],
            c: c[2],
            voltage: Some(sine(1.0, 0.15)),
        }),
        Experiment::SparseToy => build_sparse_toy(&SparseToySpec {
            m: c[0],
            k: c[1],
            d: c[2],
            ..SparseToySpec::ground_truth()
        }),
        other => {
            return Err(Error::Structure(format!("`{}` is not a linear network experiment", other.name())));
        }
    })
}

fn swarm_data_spec(cfg: &ExperimentConfig, series: usize, seed: u64) -> SwarmDataSpec {
    let s = &cfg.system;
    SwarmDataSpec {
        particles: s.particles,
        series,
        dim: s.dim,
        t_end: s.t_end,
        h: s.sample_h,
        ic_range: (s.ic_range[0], s.ic_range[1]),
        substeps: s.substeps,
        seed,
    }
}

fn network_data(cfg: &ExperimentConfig, initial_outputs: &[Vec<f64>]) -> Result<Vec<Trajectory>> {
    let truth = assemble_ode(&linear_network(cfg, &cfg.system.true_coefficients)?)?;
    let w = truth.params().values().to_vec();
    initial_outputs
        .iter()
        .map(|y0| {
            let (x0, _) = truth.initial_state(y0, &w)?;
            integrate_sampled(&truth, &x0, &w, &NoInput, cfg.system.t_end, cfg.system.sample_h, cfg.system.substeps, Method::Rk4)
        })
        .collect()
}

fn random_outputs(cfg: &ExperimentConfig, count: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [lo, hi] = cfg.system.ic_range;
    (0..count).map(|_| (0..dim).map(|_| rng.gen_range(lo..=hi)).collect()).collect()
}

fn pendulum_spec(cfg: &ExperimentConfig, ics: Vec<[f64; 4]>) -> PendulumDataSpec {
    PendulumDataSpec {
        t_end: cfg.system.t_end,
        h: cfg.system.sample_h,
        substeps: cfg.system.substeps,
        initial_conditions: ics,
    }
}

/// Ground-truth training trajectories.
pub fn training_data(cfg: &ExperimentConfig) -> Result<Vec<Trajectory>> {
    match cfg.experiment {
        Experiment::Pendulum => generate_pendulum_data(
            &ClosedLoopPendulum::reference(),
            &pendulum_spec(cfg, default_initial_conditions()),
        ),
        Experiment::Swarm => {
            generate_swarm_data(&swarm_data_spec(cfg, cfg.system.series, cfg.seed), &CsParams::reference())
        }
        _ => network_data(cfg, &random_outputs(cfg, cfg.system.series, 2, cfg.seed)),
    }
}

/// Ground-truth trajectories from fresh initial conditions.
pub fn evaluation_data(cfg: &ExperimentConfig) -> Result<Vec<Trajectory>> {
    let seed = cfg.seed.wrapping_add(EVAL_SEED_OFFSET);
    let count = cfg.system.eval_count;
    match cfg.experiment {
        Experiment::Pendulum => generate_pendulum_data(
            &ClosedLoopPendulum::reference(),
            &pendulum_spec(cfg, random_initial_conditions(count, seed)),
        ),
        Experiment::Swarm => {
            let spec = swarm_data_spec(cfg, count, seed);
            random_swarm_states(&spec, count, seed)
                .iter()
                .map(|x0| simulate_swarm(&spec, &CsParams::reference(), x0))
                .collect()
        }
        _ => network_data(cfg, &random_outputs(cfg, count, 2, seed)),
    }
}

/// Untrained model and its initial parameters.
pub fn build_model(cfg: &ExperimentConfig) -> Result<(Model, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(INIT_SEED_OFFSET));
    let s = &cfg.system;
    match cfg.experiment {
        Experiment::Pendulum => {
            let c = &s.init_coefficients;
            let spec = SurrogateSpec {
                hidden: s.hidden,
                input_scale: s.input_scale,
                output_scale: s.output_scale,
                init_mass: c[0],
                init_inertia: c[1],
                init_cart_damping: c[2],
                init_pole_damping: c[3],
                ..SurrogateSpec::default()
            };
            let sys = assemble_ode(&build_pendulum_surrogate(&spec, &mut rng)?)?;
            let w = sys.params().values().to_vec();
            Ok((Model::Network(Box::new(sys)), w))
        }
        Experiment::Swarm => {
            let model = SwarmModel::new(&SwarmModelSpec {
                particles: s.particles,
                dim: s.dim,
                hidden: s.hidden,
                input_scale: s.input_scale,
                output_scale: s.output_scale,
            })?;
            let w = model.init_params(&mut rng);
            Ok((Model::Swarm(model), w))
        }
        _ => {
            let sys = assemble_ode(&linear_network(cfg, &s.init_coefficients)?)?;
            let w = sys.params().values().to_vec();
            Ok((Model::Network(Box::new(sys)), w))
        }
    }
}

/// Parameters of the data-generating model when it belongs to the model
/// family (the linear network experiments).
pub fn true_params(cfg: &ExperimentConfig) -> Result<Option<Vec<f64>>> {
    match cfg.experiment {
        Experiment::Pendulum | Experiment::Swarm => Ok(None),
        _ => {
            let truth = assemble_ode(&linear_network(cfg, &cfg.system.true_coefficients)?)?;
            Ok(Some(truth.params().values().to_vec()))
        }
    }
}

pub fn run_training(cfg: &ExperimentConfig, model: &Model, data: &[Trajectory], w0: &[f64]) -> Result<TrainReport> {
    let mut tc = cfg.train.clone();
    tc.seed = cfg.seed;
    if cfg.experiment == Experiment::SparseToy || tc.primal_dual {
        train_sparse_primal_dual(model.system(), data, w0, &tc)
    } else {
        train(model.system(), data, w0, &tc)
    }
}

/// Output MSE of the model on each trajectory.
pub fn per_trajectory_mse(cfg: &ExperimentConfig, model: &Model, w: &[f64], data: &[Trajectory]) -> Result<Vec<f64>> {
    let sys = model.system();
    if w.len() != sys.param_dim() {
        return Err(Error::Dimension {
            what: "parameters".into(),
            expected: sys.param_dim(),
            got: w.len(),
        });
    }
    data.par_iter()
        .map(|t| {
            let sim = simulate_like(sys, t, w, &cfg.train)?;
            let meas = Trajectory {
                times: t.times[..sim.len()].to_vec(),
                states: t.states[..sim.len()].to_vec(),
                inputs: t.inputs[..sim.len()].to_vec(),
                outputs: t.outputs[..sim.len()].to_vec(),
            };
            loss_mse(&[meas], &[sim], cfg.train.mse_normalization)
        })
        .collect()
}

/// Index of the coupling network in the pendulum surrogate parameter vector.
pub fn pendulum_coupling_range(model: &Model) -> Option<std::ops::Range<usize>> {
    match model {
        Model::Network(s) => s.params().range(surrogate_ids::COUPLING),
        Model::Swarm(_) => None,
    }
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}
