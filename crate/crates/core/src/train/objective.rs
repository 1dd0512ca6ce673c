use nalgebra::DMatrix;
use rayon::prelude::*;

use super::loss::{reg_equilibrium, reg_equilibrium_grad, sample_error, trapezoid_weights};
use super::{DissipMode, MseNormalization, TrainConfig};
use crate::error::{Error, Result};
use crate::network::{Aux, OdeSystem};
use crate::odesolve::{integrate_sampled, sensitivity_sweep, InputSignal, NoInput, SampledInput, Trajectory};

/// Loss components at one parameter vector. Regularizers are unweighted.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Objective {
    pub j: f64,
    pub sparsity: f64,
    pub dissipativity: f64,
    pub equilibrium: f64,
}

impl Objective {
    /// `J + sum lambda_r R_r` with the configured weights.
    pub fn total(&self, cfg: &TrainConfig) -> f64 {
        self.j
            + cfg.lambda_sparsity * self.sparsity
            + cfg.lambda_dissip * self.dissipativity
            + cfg.lambda_equilibrium * self.equilibrium
    }

    /// Weighted regularization part of the total.
    pub fn weighted_regularization(&self, cfg: &TrainConfig) -> f64 {
        self.total(cfg) - self.j
    }

    pub fn is_finite(&self) -> bool {
        self.j.is_finite() && self.sparsity.is_finite() && self.dissipativity.is_finite() && self.equilibrium.is_finite()
    }
}

/// Loss components with their parameter gradients.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ObjectiveGrad {
    pub value: Objective,
    pub j: Vec<f64>,
    pub sparsity: Vec<f64>,
    pub dissipativity: Vec<f64>,
    pub equilibrium: Vec<f64>,
}

impl ObjectiveGrad {
    pub fn total(&self, cfg: &TrainConfig) -> Vec<f64> {
        self.combine(1.0, cfg.lambda_sparsity, cfg.lambda_dissip, cfg.lambda_equilibrium)
    }

    /// `cj dJ + cs dR_s + cd dR_d + ce dR_e`
    pub fn combine(&self, cj: f64, cs: f64, cd: f64, ce: f64) -> Vec<f64> {
        (0..self.j.len())
            .map(|i| cj * self.j[i] + cs * self.sparsity[i] + cd * self.dissipativity[i] + ce * self.equilibrium[i])
            .collect()
    }
}

/// Which terms must be evaluated.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Terms {
    pub sparsity: bool,
    pub dissipativity: bool,
    pub equilibrium: bool,
}

impl Terms {
    pub fn from_config(cfg: &TrainConfig) -> Self {
        Self {
            sparsity: cfg.lambda_sparsity > 0.0,
            dissipativity: cfg.lambda_dissip > 0.0,
            equilibrium: cfg.lambda_equilibrium > 0.0,
        }
    }
}

/// Integer number of solver steps per data sample and the number of samples
/// within the training horizon.
fn grid(traj: &Trajectory, cfg: &TrainConfig) -> Result<(usize, usize, f64)> {
    traj.validate()?;
    if traj.len() < 2 {
        return Err(Error::Structure("training trajectories need at least two samples".into()));
    }
    let hs = traj.times[1] - traj.times[0];
    let ratio = hs / cfg.h;
    let substeps = ratio.round();
    if substeps < 1.0 || (ratio - substeps).abs() > 1e-6 * ratio {
        return Err(Error::config(
            "h",
            format!("solver step {} does not divide the sampling period {hs}", cfg.h),
        ));
    }
    let samples = match cfg.horizon {
        Some(t) => traj.times.iter().take_while(|&&s| s <= t + 1e-9 * (1.0 + t)).count(),
        None => traj.len(),
    };
    if samples < 2 {
        return Err(Error::config("horizon", "shorter than one sampling period"));
    }
    Ok((substeps as usize, samples, hs))
}

fn input_for(sys_inputs: usize, traj: &Trajectory) -> Box<dyn InputSignal + '_> {
    if sys_inputs == 0 {
        Box::new(NoInput)
    } else {
        Box::new(SampledInput::from_trajectory(traj))
    }
}

fn check_outputs<S: OdeSystem + ?Sized>(sys: &S, traj: &Trajectory) -> Result<()> {
    if traj.output_dim() != sys.output_dim() {
        return Err(Error::dim("measured outputs", sys.output_dim(), traj.output_dim()));
    }
    if sys.input_dim() > 0 && traj.input_dim() != sys.input_dim() {
        return Err(Error::dim("measured inputs", sys.input_dim(), traj.input_dim()));
    }
    Ok(())
}

/// Simulates the model from the initial output of `measured` over the
/// configured horizon, sampled on the data grid.
pub fn simulate_like<S: OdeSystem + ?Sized>(
    sys: &S,
    measured: &Trajectory,
    w: &[f64],
    cfg: &TrainConfig,
) -> Result<Trajectory> {
    check_outputs(sys, measured)?;
    let (substeps, samples, hs) = grid(measured, cfg)?;
    let (x0, _) = sys.initial_state(&measured.outputs[0], w)?;
    let input = input_for(sys.input_dim(), measured);
    let t_end = (samples - 1) as f64 * hs;
    integrate_sampled(sys, &x0, w, input.as_ref(), t_end, hs, substeps, cfg.method)
}

fn trajectory_value<S: OdeSystem + ?Sized>(
    sys: &S,
    measured: &Trajectory,
    w: &[f64],
    cfg: &TrainConfig,
    terms: Terms,
) -> Result<Objective> {
    let sim = simulate_like(sys, measured, w, cfg)?;
    let samples = sim.len();
    let hs = measured.times[1] - measured.times[0];
    let j = (0..samples)
        .map(|k| sample_error(&sim.outputs[k], &measured.outputs[k], cfg.mse_normalization))
        .sum::<f64>()
        / samples as f64;
    let weights = trapezoid_weights(samples, hs);
    let mut out = Objective { j, ..Objective::default() };
    for (aux, on) in [(Aux::LinkFlows, terms.sparsity), (Aux::DissipatorPowers, terms.dissipativity)] {
        if !on {
            continue;
        }
        let mut buf = vec![0.0; sys.aux_dim(aux)];
        let mut acc = 0.0;
        for k in 0..samples {
            sys.aux(aux, sim.times[k], &sim.states[k], &sim.inputs[k], w, &mut buf, None);
            acc += weights[k]
                * buf
                    .iter()
                    .map(|&v| penalty(aux, cfg.dissip_mode, v).0)
                    .sum::<f64>();
        }
        match aux {
            Aux::LinkFlows => out.sparsity = acc,
            Aux::DissipatorPowers => out.dissipativity = acc,
        }
    }
    Ok(out)
}

/// Pointwise penalty and its derivative.
fn penalty(aux: Aux, mode: DissipMode, v: f64) -> (f64, f64) {
    match (aux, mode) {
        (Aux::LinkFlows, _) => (v.abs(), if v > 0.0 { 1.0 } else if v < 0.0 { -1.0 } else { 0.0 }),
        (Aux::DissipatorPowers, DissipMode::Hinge) => {
            if v < 0.0 {
                (-v, -1.0)
            } else {
                (0.0, 0.0)
            }
        }
        (Aux::DissipatorPowers, DissipMode::Integral) => (v, 1.0),
    }
}

/// Accumulates `g += (Cx S + Cw)^T v`.
fn chain(g: &mut [f64], s: &DMatrix<f64>, cx: &DMatrix<f64>, cw: &DMatrix<f64>, v: &[f64]) {
    let n = s.nrows();
    let mut vx = vec![0.0; n];
    for (r, &vr) in v.iter().enumerate() {
        if vr == 0.0 {
            continue;
        }
        for c in 0..n {
            vx[c] += cx[(r, c)] * vr;
        }
        for (c, gc) in g.iter_mut().enumerate() {
            *gc += cw[(r, c)] * vr;
        }
    }
    for (c, gc) in g.iter_mut().enumerate() {
        *gc += s.column(c).iter().zip(&vx).map(|(a, b)| a * b).sum::<f64>();
    }
}

fn trajectory_grad<S: OdeSystem + ?Sized>(
    sys: &S,
    measured: &Trajectory,
    w: &[f64],
    cfg: &TrainConfig,
    terms: Terms,
) -> Result<ObjectiveGrad> {
    check_outputs(sys, measured)?;
    let (substeps, samples, hs) = grid(measured, cfg)?;
    let (n, m, p) = (sys.state_dim(), sys.param_dim(), sys.output_dim());
    let (x0, s0) = sys.initial_state(&measured.outputs[0], w)?;
    let input = input_for(sys.input_dim(), measured);
    let t_end = (samples - 1) as f64 * hs;
    let weights = trapezoid_weights(samples, hs);
    let scale = match cfg.mse_normalization {
        MseNormalization::PerEntry => 1.0 / (p.max(1) * samples) as f64,
        MseNormalization::PerSample => 1.0 / samples as f64,
    };

    let mut out = ObjectiveGrad {
        j: vec![0.0; m],
        sparsity: vec![0.0; m],
        dissipativity: vec![0.0; m],
        equilibrium: vec![0.0; m],
        ..ObjectiveGrad::default()
    };
    let mut y = vec![0.0; p];
    let mut cx = DMatrix::zeros(p, n);
    let mut cw = DMatrix::zeros(p, m);
    let aux_terms: Vec<(Aux, usize)> = [(Aux::LinkFlows, terms.sparsity), (Aux::DissipatorPowers, terms.dissipativity)]
        .into_iter()
        .filter(|(_, on)| *on)
        .map(|(a, _)| (a, sys.aux_dim(a)))
        .collect();
    let mut aux_bufs: Vec<(Vec<f64>, DMatrix<f64>, DMatrix<f64>)> = aux_terms
        .iter()
        .map(|&(_, d)| (vec![0.0; d], DMatrix::zeros(d, n), DMatrix::zeros(d, m)))
        .collect();

    sensitivity_sweep(sys, &x0, &s0, w, input.as_ref(), t_end, hs / substeps as f64, cfg.method, |node| {
        if node.index % substeps != 0 {
            return Ok(());
        }
        let k = node.index / substeps;
        sys.output_partials(node.t, node.x, node.u, w, &mut y, &mut cx, &mut cw);
        let ym = &measured.outputs[k];
        let e: Vec<f64> = y.iter().zip(ym).map(|(a, b)| a - b).collect();
        out.value.j += scale * e.iter().map(|v| v * v).sum::<f64>();
        let v: Vec<f64> = e.iter().map(|v| 2.0 * scale * v).collect();
        chain(&mut out.j, node.s, &cx, &cw, &v);
        for ((aux, _), (buf, ax, aw)) in aux_terms.iter().zip(aux_bufs.iter_mut()) {
            sys.aux(*aux, node.t, node.x, node.u, w, buf, Some((ax, aw)));
            let mut value = 0.0;
            let dv: Vec<f64> = buf
                .iter()
                .map(|&f| {
                    let (pv, dp) = penalty(*aux, cfg.dissip_mode, f);
                    value += pv;
                    weights[k] * dp
                })
                .collect();
            let (target, grad) = match aux {
                Aux::LinkFlows => (&mut out.value.sparsity, &mut out.sparsity),
                Aux::DissipatorPowers => (&mut out.value.dissipativity, &mut out.dissipativity),
            };
            *target += weights[k] * value;
            chain(grad, node.s, ax, aw, &dv);
        }
        Ok(())
    })?;
    Ok(out)
}

fn map_batch<T: Send, F>(data: &[&Trajectory], f: F) -> Result<Vec<T>>
where
    F: Fn(&Trajectory) -> Result<T> + Sync + Send,
{
    if data.len() > 1 {
        data.par_iter().map(|t| f(t)).collect()
    } else {
        data.iter().map(|t| f(t)).collect()
    }
}

/// Loss components averaged over the batch (equilibrium evaluated once).
pub fn total_loss<S: OdeSystem + ?Sized>(
    sys: &S,
    data: &[&Trajectory],
    w: &[f64],
    cfg: &TrainConfig,
) -> Result<Objective> {
    evaluate(sys, data, w, cfg, Terms::from_config(cfg))
}

pub(crate) fn evaluate<S: OdeSystem + ?Sized>(
    sys: &S,
    data: &[&Trajectory],
    w: &[f64],
    cfg: &TrainConfig,
    terms: Terms,
) -> Result<Objective> {
    if data.is_empty() {
        return Err(Error::Structure("no training data".into()));
    }
    if w.len() != sys.param_dim() {
        return Err(Error::dim("parameters", sys.param_dim(), w.len()));
    }
    let parts = map_batch(data, |t| trajectory_value(sys, t, w, cfg, terms))?;
    let inv = 1.0 / parts.len() as f64;
    let mut out = Objective::default();
    for o in &parts {
        out.j += inv * o.j;
        out.sparsity += inv * o.sparsity;
        out.dissipativity += inv * o.dissipativity;
    }
    if terms.equilibrium {
        out.equilibrium = reg_equilibrium(sys, w);
    }
    Ok(out)
}

/// Gradient of `J + sum lambda_r R_r` assembled from forward sensitivities,
/// returned together with the per-term values and gradients.
pub fn grad_total_loss<S: OdeSystem + ?Sized>(
    sys: &S,
    data: &[&Trajectory],
    w: &[f64],
    cfg: &TrainConfig,
) -> Result<ObjectiveGrad> {
    evaluate_grad(sys, data, w, cfg, Terms::from_config(cfg))
}

pub(crate) fn evaluate_grad<S: OdeSystem + ?Sized>(
    sys: &S,
    data: &[&Trajectory],
    w: &[f64],
    cfg: &TrainConfig,
    terms: Terms,
) -> Result<ObjectiveGrad> {
    if data.is_empty() {
        return Err(Error::Structure("no training data".into()));
    }
    if w.len() != sys.param_dim() {
        return Err(Error::dim("parameters", sys.param_dim(), w.len()));
    }
    let m = w.len();
    let parts = map_batch(data, |t| trajectory_grad(sys, t, w, cfg, terms))?;
    let inv = 1.0 / parts.len() as f64;
    let mut out = ObjectiveGrad {
        j: vec![0.0; m],
        sparsity: vec![0.0; m],
        dissipativity: vec![0.0; m],
        equilibrium: vec![0.0; m],
        ..ObjectiveGrad::default()
    };
    for g in &parts {
        out.value.j += inv * g.value.j;
        out.value.sparsity += inv * g.value.sparsity;
        out.value.dissipativity += inv * g.value.dissipativity;
        for i in 0..m {
            out.j[i] += inv * g.j[i];
            out.sparsity[i] += inv * g.sparsity[i];
            out.dissipativity[i] += inv * g.dissipativity[i];
        }
    }
    if terms.equilibrium {
        let (v, g) = reg_equilibrium_grad(sys, w);
        out.value.equilibrium = v;
        out.equilibrium = g;
    }
    Ok(out)
}
