use nalgebra::DMatrix;
use rand::SeedableRng;

use super::*;
use crate::constructs::Signal;
use crate::network::{assemble_ode, msd_network, MsdSpec};
use crate::odesolve::{integrate, NoInput};

struct Decay;

impl OdeSystem for Decay {
    fn state_dim(&self) -> usize {
        1
    }

    fn param_dim(&self) -> usize {
        1
    }

    fn rhs(&self, _t: f64, x: &[f64], _u: &[f64], w: &[f64], dx: &mut [f64]) {
        dx[0] = -w[0] * x[0];
    }

    fn rhs_partials(
        &self,
        _t: f64,
        x: &[f64],
        _u: &[f64],
        w: &[f64],
        dx: &mut [f64],
        dfdx: &mut DMatrix<f64>,
        dfdw: &mut DMatrix<f64>,
    ) {
        dx[0] = -w[0] * x[0];
        dfdx[(0, 0)] = -w[0];
        dfdw[(0, 0)] = -x[0];
    }
}

fn traj(times: &[f64], outputs: &[&[f64]]) -> Trajectory {
    Trajectory {
        times: times.to_vec(),
        states: outputs.iter().map(|y| y.to_vec()).collect(),
        inputs: vec![vec![]; times.len()],
        outputs: outputs.iter().map(|y| y.to_vec()).collect(),
    }
}

fn decay_data(w: f64) -> Vec<Trajectory> {
    vec![integrate(&Decay, &[1.0], &[w], &NoInput, 2.0, 0.1, Method::Midpoint).unwrap()]
}

fn decay_cfg() -> TrainConfig {
    TrainConfig {
        h: 0.1,
        ..TrainConfig::default()
    }
}

#[test]
fn mse_of_identical_trajectories_is_zero() {
    let a = traj(&[0.0, 1.0], &[&[1.0], &[2.0]]);
    assert_eq!(loss_mse(&[a.clone()], &[a], MseNormalization::PerEntry).unwrap(), 0.0);
}

#[test]
fn mse_of_constant_offset() {
    let a = traj(&[0.0, 0.5, 1.0], &[&[1.0], &[2.0], &[3.0]]);
    let b = traj(&[0.0, 0.5, 1.0], &[&[1.1], &[2.1], &[3.1]]);
    assert!((loss_mse(&[a], &[b], MseNormalization::PerEntry).unwrap() - 0.01).abs() < 1e-12);
}

#[test]
fn mse_normalizations_on_a_two_component_pair() {
    let a = traj(&[0.0, 1.0], &[&[0.0, 1.0], &[0.0, 0.0]]);
    let b = traj(&[0.0, 1.0], &[&[0.0, 0.0], &[0.0, 0.0]]);
    let per_sample = loss_mse(&[a.clone()], &[b.clone()], MseNormalization::PerSample).unwrap();
    let per_entry = loss_mse(&[a], &[b], MseNormalization::PerEntry).unwrap();
    assert!((per_sample - 0.5).abs() < 1e-15);
    assert!((per_entry - 0.25).abs() < 1e-15);
}

#[test]
fn mse_rejects_grid_mismatch() {
    let a = traj(&[0.0, 1.0], &[&[0.0], &[0.0]]);
    let b = traj(&[0.0, 1.5], &[&[0.0], &[0.0]]);
    assert!(loss_mse(&[a.clone()], &[b], MseNormalization::PerEntry).is_err());
    let c = traj(&[0.0], &[&[0.0]]);
    assert!(loss_mse(&[a], &[c], MseNormalization::PerEntry).is_err());
}

#[test]
fn sparsity_examples() {
    assert_eq!(reg_sparsity(&[vec![0.0; 5], vec![0.0; 5]], 0.1), 0.0);
    assert!((reg_sparsity(&[vec![1.0; 11], vec![-1.0; 11]], 0.1) - 2.0).abs() < 1e-12);
    assert!((reg_sparsity(&[vec![0.0, 0.5, 1.0]], 0.5) - 0.5).abs() < 1e-15);
}

#[test]
fn dissipativity_examples() {
    assert_eq!(reg_dissipativity(&[vec![0.0, 1.0, 2.0]], 0.5, DissipMode::Hinge), 0.0);
    assert!((reg_dissipativity(&[vec![-1.0; 11]], 0.1, DissipMode::Hinge) - 1.0).abs() < 1e-12);
    let h = 1e-3;
    let sine: Vec<f64> = (0..=1000).map(|k| (std::f64::consts::TAU * k as f64 * h).sin()).collect();
    let r = reg_dissipativity(&[sine.clone()], h, DissipMode::Hinge);
    // trapezoid error of the hinge of a sine is -(pi / 3) h^2
    let err = r - 1.0 / std::f64::consts::PI;
    assert!((err / (h * h) + std::f64::consts::PI / 3.0).abs() < 1e-3);
    assert!(reg_dissipativity(&[sine], h, DissipMode::Integral).abs() < 1e-12);
}

#[test]
fn equilibrium_of_linear_system_is_zero() {
    let sys = assemble_ode(&msd_network(&MsdSpec::default())).unwrap();
    assert_eq!(reg_equilibrium(&sys, sys.params().values()), 0.0);
}

#[test]
fn equilibrium_of_biased_surrogate() {
    use crate::systems::{build_pendulum_surrogate, surrogate_ids, SurrogateSpec};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
    let sys = assemble_ode(&build_pendulum_surrogate(&SurrogateSpec::default(), &mut rng).unwrap()).unwrap();
    let mut w = sys.params().values().to_vec();
    let range = sys.params().range(surrogate_ids::COUPLING).unwrap();
    let end = range.end;
    w[range].iter_mut().for_each(|v| *v = 0.0);
    // output bias of the first coupling port
    w[end - 2] = 0.1;
    assert!((reg_equilibrium(&sys, &w) - 0.01).abs() < 1e-15);
}

#[test]
fn dual_update_examples() {
    assert!((dual_update(0.0, 0.1, 0.5, 0.1) - 0.04).abs() < 1e-15);
    assert_eq!(dual_update(0.01, 1.0, 0.0, 0.1), 0.0);
}

#[test]
fn gradient_vanishes_at_the_generating_parameter() {
    let data = decay_data(1.0);
    let g = grad_total_loss(&Decay, &all(&data), &[1.0], &decay_cfg()).unwrap();
    assert!(g.value.j < 1e-28);
    assert!(g.total(&decay_cfg())[0].abs() <= 1e-6);
}

#[test]
fn gradient_points_back_toward_the_generating_parameter() {
    let data = decay_data(1.0);
    let g = grad_total_loss(&Decay, &all(&data), &[2.0], &decay_cfg()).unwrap();
    assert!(g.j[0] > 0.0);
    let g = grad_total_loss(&Decay, &all(&data), &[0.5], &decay_cfg()).unwrap();
    assert!(g.j[0] < 0.0);
}

fn central_difference<S: OdeSystem>(sys: &S, data: &[Trajectory], w: &[f64], cfg: &TrainConfig, i: usize) -> f64 {
    let eps = 1e-6 * (1.0 + w[i].abs());
    let mut wp = w.to_vec();
    wp[i] += eps;
    let fp = total_loss(sys, &all(data), &wp, cfg).unwrap().total(cfg);
    wp[i] -= 2.0 * eps;
    let fm = total_loss(sys, &all(data), &wp, cfg).unwrap().total(cfg);
    (fp - fm) / (2.0 * eps)
}

#[test]
fn gradient_with_all_regularizers_matches_finite_differences() {
    let truth = MsdSpec {
        force: Signal::Sine {
            amplitude: 1.0,
            frequency: 0.3,
            phase: 0.2,
        },
        ..MsdSpec::default()
    };
    let gt = assemble_ode(&msd_network(&truth)).unwrap();
    let w_true = gt.params().values().to_vec();
    let data: Vec<Trajectory> = [[0.5, 0.0], [-0.3, 0.4]]
        .iter()
        .map(|y0| {
            let (x0, _) = gt.initial_state(y0, &w_true).unwrap();
            integrate(&gt, &x0, &w_true, &NoInput, 3.0, 0.05, Method::Rk4).unwrap()
        })
        .collect();
    let cfg = TrainConfig {
        method: Method::Rk4,
        h: 0.025,
        lambda_sparsity: 0.3,
        lambda_dissip: 0.2,
        lambda_equilibrium: 0.1,
        dissip_mode: DissipMode::Integral,
        ..TrainConfig::default()
    };
    let w = vec![1.3, 0.7, 0.9];
    let g = grad_total_loss(&gt, &all(&data), &w, &cfg).unwrap();
    let total = g.total(&cfg);
    for i in 0..w.len() {
        let fd = central_difference(&gt, &data, &w, &cfg, i);
        assert!((total[i] - fd).abs() <= 1e-6 * (1.0 + fd.abs()), "{i}: {} vs {fd}", total[i]);
    }
}

#[test]
fn training_at_the_generating_parameter_stops_immediately() {
    let data = decay_data(1.0);
    let report = train(&Decay, &data, &[1.0], &decay_cfg()).unwrap();
    assert!(report.converged);
    assert_eq!(report.iterations, 1);
    assert_eq!(report.params, vec![1.0]);
}

#[test]
fn training_recovers_the_decay_rate_and_is_reproducible() {
    let data = decay_data(1.0);
    let cfg = TrainConfig {
        lr: 0.05,
        max_iterations: 400,
        ..decay_cfg()
    };
    let a = train(&Decay, &data, &[2.0], &cfg).unwrap();
    let b = train(&Decay, &data, &[2.0], &cfg).unwrap();
    assert!(a.final_j < a.initial_j);
    assert!((a.params[0] - 1.0).abs() < 1e-2);
    assert_eq!(a.params, b.params);
    assert_eq!(a.records.len(), b.records.len());
}

#[test]
fn divergence_reports_the_last_finite_iterate() {
    let data = decay_data(1.0);
    let cfg = TrainConfig {
        lr: 1e6,
        max_iterations: 50,
        ..decay_cfg()
    };
    match train(&Decay, &data, &[2.0], &cfg) {
        Err(Error::Diverged { last_finite, .. }) => assert!(last_finite.iter().all(|v| v.is_finite())),
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn config_validation() {
    assert!(TrainConfig::default().validate().is_ok());
    let bad = TrainConfig {
        lr: 0.0,
        ..TrainConfig::default()
    };
    assert!(matches!(bad.validate(), Err(Error::Config { field, .. }) if field == "lr"));
    let bad = TrainConfig {
        beta2: 1.0,
        ..TrainConfig::default()
    };
    assert!(bad.validate().is_err());
    let bad = TrainConfig {
        primal_dual: true,
        epsilon: 0.0,
        ..TrainConfig::default()
    };
    assert!(bad.validate().is_err());
    let bad = TrainConfig {
        h: 0.03,
        ..TrainConfig::default()
    };
    let data = decay_data(1.0);
    assert!(matches!(train(&Decay, &data, &[1.0], &bad), Err(Error::Config { .. })));
}

#[test]
fn resuming_from_a_checkpoint_continues_exactly() {
    let data = vec![decay_data(1.0)[0].clone(), integrate(&Decay, &[0.5], &[1.0], &NoInput, 2.0, 0.1, Method::Midpoint).unwrap()];
    let cfg = TrainConfig {
        lr: 0.05,
        max_iterations: 20,
        batch: BatchStrategy::OnePerIteration,
        seed: 3,
        ..decay_cfg()
    };
    let whole = train(&Decay, &data, &[2.0], &cfg).unwrap();
    let half = TrainConfig {
        max_iterations: 12,
        ..cfg.clone()
    };
    let a = train(&Decay, &data, &[2.0], &half).unwrap();
    assert_eq!(a.checkpoint.iteration, 12);
    let rest = TrainConfig {
        max_iterations: 8,
        ..cfg
    };
    let b = train_resume(&Decay, &data, &a.params, Some(&a.checkpoint), &rest).unwrap();
    assert_eq!(b.params, whole.params);
    assert_eq!(b.records[0].iter, 12);
    assert_eq!(b.checkpoint, whole.checkpoint);
}
