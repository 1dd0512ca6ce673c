use crate::error::{Error, Result};
use crate::network::OdeSystem;
use crate::odesolve::Trajectory;

use super::{DissipMode, MseNormalization};

/// Squared error of one sample under the chosen normalization.
pub(crate) fn sample_error(sim: &[f64], meas: &[f64], norm: MseNormalization) -> f64 {
    let s: f64 = sim.iter().zip(meas).map(|(a, b)| (a - b) * (a - b)).sum();
    match norm {
        MseNormalization::PerEntry => s / sim.len().max(1) as f64,
        MseNormalization::PerSample => s,
    }
}

/// Mean over trajectories of the time-averaged squared output error.
pub fn loss_mse(measured: &[Trajectory], simulated: &[Trajectory], norm: MseNormalization) -> Result<f64> {
    if measured.len() != simulated.len() {
        return Err(Error::dim("trajectory count", measured.len(), simulated.len()));
    }
    if measured.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (m, s) in measured.iter().zip(simulated) {
        if m.len() != s.len() {
            return Err(Error::dim("trajectory samples", m.len(), s.len()));
        }
        if m.is_empty() {
            return Err(Error::Structure("empty trajectory".into()));
        }
        let mut acc = 0.0;
        for k in 0..m.len() {
            if (m.times[k] - s.times[k]).abs() > 1e-9 * (1.0 + m.times[k].abs()) {
                return Err(Error::Structure(format!(
                    "time grids differ at sample {k}: {} vs {}",
                    m.times[k], s.times[k]
                )));
            }
            if m.outputs[k].len() != s.outputs[k].len() {
                return Err(Error::dim("output", m.outputs[k].len(), s.outputs[k].len()));
            }
            acc += sample_error(&s.outputs[k], &m.outputs[k], norm);
        }
        total += acc / m.len() as f64;
    }
    Ok(total / measured.len() as f64)
}

/// Trapezoid weights of a uniform grid with `samples` nodes and step `h`,
/// divided by the horizon.
pub(crate) fn trapezoid_weights(samples: usize, h: f64) -> Vec<f64> {
    if samples < 2 {
        return vec![1.0; samples];
    }
    let horizon = (samples - 1) as f64 * h;
    (0..samples)
        .map(|k| if k == 0 || k + 1 == samples { 0.5 * h / horizon } else { h / horizon })
        .collect()
}

fn time_average(series: &[f64], h: f64, f: impl Fn(f64) -> f64) -> f64 {
    trapezoid_weights(series.len(), h)
        .iter()
        .zip(series)
        .map(|(c, v)| c * f(*v))
        .sum()
}

/// `sum_j (1/T) int |f_j| dt` over link flow series sampled with step `h`.
pub fn reg_sparsity(link_flows: &[Vec<f64>], h: f64) -> f64 {
    link_flows.iter().map(|s| time_average(s, h, f64::abs)).sum()
}

/// Time-averaged penalty on element powers: the negative part only
/// (`Hinge`) or the signed power itself (`Integral`).
pub fn reg_dissipativity(powers: &[Vec<f64>], h: f64, mode: DissipMode) -> f64 {
    powers
        .iter()
        .map(|s| match mode {
            DissipMode::Hinge => time_average(s, h, |p| (-p).max(0.0)),
            DissipMode::Integral => time_average(s, h, |p| p),
        })
        .sum()
}

/// `|f(0, u = 0; w)|^2`
pub fn reg_equilibrium<S: OdeSystem + ?Sized>(sys: &S, w: &[f64]) -> f64 {
    let n = sys.state_dim();
    let mut dx = vec![0.0; n];
    sys.rhs(0.0, &vec![0.0; n], &vec![0.0; sys.input_dim()], w, &mut dx);
    dx.iter().map(|v| v * v).sum()
}

/// Value and parameter gradient of the equilibrium penalty.
pub(crate) fn reg_equilibrium_grad<S: OdeSystem + ?Sized>(sys: &S, w: &[f64]) -> (f64, Vec<f64>) {
    let (n, m) = (sys.state_dim(), sys.param_dim());
    let mut dx = vec![0.0; n];
    let mut a = nalgebra::DMatrix::zeros(n, n);
    let mut b = nalgebra::DMatrix::zeros(n, m);
    sys.rhs_partials(0.0, &vec![0.0; n], &vec![0.0; sys.input_dim()], w, &mut dx, &mut a, &mut b);
    let value = dx.iter().map(|v| v * v).sum();
    let grad = (0..m).map(|c| 2.0 * b.column(c).iter().zip(&dx).map(|(p, q)| p * q).sum::<f64>()).collect();
    (value, grad)
}
