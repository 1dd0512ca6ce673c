//! Fixed-step explicit integrators and forward sensitivity propagation.

use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Aux, OdeSystem};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    #[default]
    Midpoint,
    Rk4,
}

impl Method {
    pub fn stages(self) -> usize {
        match self {
            Method::Midpoint => 2,
            Method::Rk4 => 4,
        }
    }

    /// `(c_i, a_i)`: stage time offset and the multiple of the previous stage
    /// derivative used to build the stage state.
    fn tableau(self) -> &'static [(f64, f64)] {
        match self {
            Method::Midpoint => &[(0.0, 0.0), (0.5, 0.5)],
            Method::Rk4 => &[(0.0, 0.0), (0.5, 0.5), (0.5, 0.5), (1.0, 1.0)],
        }
    }

    fn weights(self) -> &'static [f64] {
        match self {
            Method::Midpoint => &[0.0, 1.0],
            Method::Rk4 => &[1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0],
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "midpoint" => Ok(Method::Midpoint),
            "rk4" => Ok(Method::Rk4),
            other => Err(Error::config("method", format!("unknown method `{other}`"))),
        }
    }
}

/// Time-dependent input `u(t)`.
pub trait InputSignal: Sync {
    fn input(&self, t: f64, u: &mut [f64]);
}

/// No external input.
#[derive(Clone, Copy, Debug, Default)]
pub struct NoInput;

impl InputSignal for NoInput {
    fn input(&self, _t: f64, u: &mut [f64]) {
        u.iter_mut().for_each(|v| *v = 0.0);
    }
}

impl<F: Fn(f64, &mut [f64]) + Sync> InputSignal for F {
    fn input(&self, t: f64, u: &mut [f64]) {
        self(t, u)
    }
}

/// Zero-order hold over recorded samples.
#[derive(Clone, Debug)]
pub struct SampledInput {
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl SampledInput {
    pub fn from_trajectory(traj: &Trajectory) -> Self {
        Self {
            times: traj.times.clone(),
            values: traj.inputs.clone(),
        }
    }
}

impl InputSignal for SampledInput {
    fn input(&self, t: f64, u: &mut [f64]) {
        if self.times.is_empty() {
            u.iter_mut().for_each(|v| *v = 0.0);
            return;
        }
        // last sample at or before t, with a little slack for rounding
        let k = self.times.partition_point(|&s| s <= t + 1e-9).saturating_sub(1);
        u.copy_from_slice(&self.values[k]);
    }
}

/// Time grid with state, input and output samples.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub inputs: Vec<Vec<f64>>,
    pub outputs: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.states.first().map(Vec::len).unwrap_or(0)
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.first().map(Vec::len).unwrap_or(0)
    }

    pub fn output_dim(&self) -> usize {
        self.outputs.first().map(Vec::len).unwrap_or(0)
    }

    /// Sampling step (first interval).
    pub fn step(&self) -> Option<f64> {
        (self.times.len() >= 2).then(|| self.times[1] - self.times[0])
    }

    pub fn duration(&self) -> f64 {
        match (self.times.first(), self.times.last()) {
            (Some(a), Some(b)) => b - a,
            _ => 0.0,
        }
    }

    /// Checks lengths, per-sample dimensions and a strictly increasing grid.
    pub fn validate(&self) -> Result<()> {
        let n = self.times.len();
        for (what, len) in [("states", self.states.len()), ("inputs", self.inputs.len()), ("outputs", self.outputs.len())] {
            if len != n {
                return Err(Error::dim(format!("trajectory {what}"), n, len));
            }
        }
        for (what, rows) in [("state", &self.states), ("input", &self.inputs), ("output", &self.outputs)] {
            if let Some(first) = rows.first() {
                if let Some(bad) = rows.iter().find(|r| r.len() != first.len()) {
                    return Err(Error::dim(format!("trajectory {what} sample"), first.len(), bad.len()));
                }
            }
        }
        if self.times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Parse("trajectory times must be strictly increasing".into()));
        }
        Ok(())
    }
}

/// Per-sample sensitivity matrices `S_k = dx_k/dw`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SensitivityTrace {
    pub matrices: Vec<DMatrix<f64>>,
}

/// Wraps a system and counts rhs evaluations (plain and with partials).
pub struct CountingSystem<'a, S: OdeSystem + ?Sized> {
    pub inner: &'a S,
    count: AtomicUsize,
}

impl<'a, S: OdeSystem + ?Sized> CountingSystem<'a, S> {
    pub fn new(inner: &'a S) -> Self {
        Self {
            inner,
            count: AtomicUsize::new(0),
        }
    }

    pub fn count(&self) -> usize {
        self.count.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.count.store(0, Ordering::Relaxed);
    }
}

impl<S: OdeSystem + ?Sized> OdeSystem for CountingSystem<'_, S> {
    fn state_dim(&self) -> usize {
        self.inner.state_dim()
    }
    fn param_dim(&self) -> usize {
        self.inner.param_dim()
    }
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }
    fn rhs(&self, t: f64, x: &[f64], u: &[f64], w: &[f64], dx: &mut [f64]) {
        self.count.fetch_add(1, Ordering::Relaxed);
        self.inner.rhs(t, x, u, w, dx)
    }
    fn rhs_partials(
        &self,
        t: f64,
        x: &[f64],
        u: &[f64],
        w: &[f64],
        dx: &mut [f64],
        dfdx: &mut DMatrix<f64>,
        dfdw: &mut DMatrix<f64>,
    ) {
        self.count.fetch_add(1, Ordering::Relaxed);
        self.inner.rhs_partials(t, x, u, w, dx, dfdx, dfdw)
    }
    fn output_dim(&self) -> usize {
        self.inner.output_dim()
    }
    fn output(&self, t: f64, x: &[f64], u: &[f64], w: &[f64], y: &mut [f64]) {
        self.inner.output(t, x, u, w, y)
    }
    fn output_partials(
        &self,
        t: f64,
        x: &[f64],
        u: &[f64],
        w: &[f64],
        y: &mut [f64],
        dydx: &mut DMatrix<f64>,
        dydw: &mut DMatrix<f64>,
    ) {
        self.inner.output_partials(t, x, u, w, y, dydx, dydw)
    }
    fn aux_dim(&self, aux: Aux) -> usize {
        self.inner.aux_dim(aux)
    }
    fn aux(
        &self,
        aux: Aux,
        t: f64,
        x: &[f64],
        u: &[f64],
        w: &[f64],
        values: &mut [f64],
        partials: Option<(&mut DMatrix<f64>, &mut DMatrix<f64>)>,
    ) {
        self.inner.aux(aux, t, x, u, w, values, partials)
    }
    fn initial_state(&self, y0: &[f64], w: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)> {
        self.inner.initial_state(y0, w)
    }
}

fn check_finite(v: &[f64], t: f64) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Integration {
            t,
            reason: "non-finite state derivative".into(),
        })
    }
}

/// One step of `dx/dt = f(t, x)`.
pub fn step<F>(method: Method, mut f: F, t: f64, x: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    if !(h > 0.0) {
        return Err(Error::config("h", "step size must be positive"));
    }
    let n = x.len();
    let mut k = vec![0.0; n];
    let mut stage = x.to_vec();
    let mut acc = x.to_vec();
    for (i, (&(c, a), &b)) in method.tableau().iter().zip(method.weights()).enumerate() {
        if i > 0 {
            for j in 0..n {
                stage[j] = x[j] + a * h * k[j];
            }
        }
        f(t + c * h, &stage, &mut k);
        check_finite(&k, t + c * h)?;
        for j in 0..n {
            acc[j] += b * h * k[j];
        }
    }
    check_finite(&acc, t + h)?;
    Ok(acc)
}

fn step_count(t_end: f64, h: f64) -> Result<usize> {
    if !(t_end > 0.0) || !t_end.is_finite() {
        return Err(Error::config("t_end", "horizon must be positive"));
    }
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::config("h", "step size must be positive"));
    }
    let steps = (t_end / h).round();
    if (steps * h - t_end).abs() > 1e-9 * t_end.max(1.0) || steps < 1.0 {
        return Err(Error::config("h", format!("step {h} does not divide horizon {t_end}")));
    }
    Ok(steps as usize)
}

fn sample<S: OdeSystem + ?Sized, I: InputSignal + ?Sized>(
    sys: &S,
    input: &I,
    w: &[f64],
    traj: &mut Trajectory,
    t: f64,
    x: &[f64],
) {
    let mut u = vec![0.0; sys.input_dim()];
    input.input(t, &mut u);
    let mut y = vec![0.0; sys.output_dim()];
    sys.output(t, x, &u, w, &mut y);
    traj.times.push(t);
    traj.states.push(x.to_vec());
    traj.inputs.push(u);
    traj.outputs.push(y);
}

/// Simulates on the grid `0, h, ..., t_end`.
pub fn integrate<S: OdeSystem + ?Sized, I: InputSignal + ?Sized>(
    sys: &S,
    x0: &[f64],
    w: &[f64],
    input: &I,
    t_end: f64,
    h: f64,
    method: Method,
) -> Result<Trajectory> {
    integrate_sampled(sys, x0, w, input, t_end, h, 1, method)
}

/// Simulates with `substeps` internal steps per sampling interval `h`.
#[allow(clippy::too_many_arguments)]
pub fn integrate_sampled<S: OdeSystem + ?Sized, I: InputSignal + ?Sized>(
    sys: &S,
    x0: &[f64],
    w: &[f64],
    input: &I,
    t_end: f64,
    h: f64,
    substeps: usize,
    method: Method,
) -> Result<Trajectory> {
    if x0.len() != sys.state_dim() {
        return Err(Error::dim("initial state", sys.state_dim(), x0.len()));
    }
    if w.len() != sys.param_dim() {
        return Err(Error::dim("parameters", sys.param_dim(), w.len()));
    }
    let samples = step_count(t_end, h)?;
    let substeps = substeps.max(1);
    let dt = h / substeps as f64;
    let mut u = vec![0.0; sys.input_dim()];
    let mut traj = Trajectory::default();
    let mut x = x0.to_vec();
    sample(sys, input, w, &mut traj, 0.0, &x);
    for k in 0..samples {
        for s in 0..substeps {
            let t = k as f64 * h + s as f64 * dt;
            x = step(
                method,
                |tt, xx, dx| {
                    input.input(tt, &mut u);
                    sys.rhs(tt, xx, &u, w, dx)
                },
                t,
                &x,
                dt,
            )?;
        }
        sample(sys, input, w, &mut traj, (k + 1) as f64 * h, &x);
    }
    Ok(traj)
}

/// State and sensitivity at one grid node, handed to a sweep visitor.
pub struct Node<'a> {
    pub index: usize,
    pub t: f64,
    pub x: &'a [f64],
    pub u: &'a [f64],
    pub s: &'a DMatrix<f64>,
}

/// Integrates the state together with `S = dx/dw`, propagating
/// `dS/dt = (df/dx) S + df/dw` with the same method and stage states. The
/// visitor sees every grid node, including the initial one.
#[allow(clippy::too_many_arguments)]
pub fn sensitivity_sweep<S, I, V>(
    sys: &S,
    x0: &[f64],
    s0: &DMatrix<f64>,
    w: &[f64],
    input: &I,
    t_end: f64,
    h: f64,
    method: Method,
    mut visit: V,
) -> Result<()>
where
    S: OdeSystem + ?Sized,
    I: InputSignal + ?Sized,
    V: FnMut(Node<'_>) -> Result<()>,
{
    let (n, m) = (sys.state_dim(), sys.param_dim());
    if x0.len() != n {
        return Err(Error::dim("initial state", n, x0.len()));
    }
    if w.len() != m {
        return Err(Error::dim("parameters", m, w.len()));
    }
    if s0.shape() != (n, m) {
        return Err(Error::dim("initial sensitivity rows", n, s0.nrows()));
    }
    let steps = step_count(t_end, h)?;
    let mut x = x0.to_vec();
    let mut s = s0.clone();
    let mut u = vec![0.0; sys.input_dim()];
    let mut k = vec![0.0; n];
    let mut a = DMatrix::zeros(n, n);
    let mut b = DMatrix::zeros(n, m);
    let mut ks = DMatrix::zeros(n, m);
    let mut xs = vec![0.0; n];
    let mut ss = DMatrix::zeros(n, m);
    let mut x_acc = vec![0.0; n];
    let mut s_acc = DMatrix::zeros(n, m);

    input.input(0.0, &mut u);
    visit(Node { index: 0, t: 0.0, x: &x, u: &u, s: &s })?;
    for step_i in 0..steps {
        let t = step_i as f64 * h;
        x_acc.copy_from_slice(&x);
        s_acc.copy_from(&s);
        for (i, (&(c, coef), &wt)) in method.tableau().iter().zip(method.weights()).enumerate() {
            if i == 0 {
                xs.copy_from_slice(&x);
                ss.copy_from(&s);
            } else {
                for j in 0..n {
                    xs[j] = x[j] + coef * h * k[j];
                }
                ss.copy_from(&s);
                axpy(&mut ss, coef * h, &ks);
            }
            let ts = t + c * h;
            input.input(ts, &mut u);
            sys.rhs_partials(ts, &xs, &u, w, &mut k, &mut a, &mut b);
            check_finite(&k, ts)?;
            // ks = a ss + b
            ks.copy_from(&b);
            ks.gemm(1.0, &a, &ss, 1.0);
            if wt != 0.0 {
                for j in 0..n {
                    x_acc[j] += wt * h * k[j];
                }
                axpy(&mut s_acc, wt * h, &ks);
            }
        }
        std::mem::swap(&mut x, &mut x_acc);
        std::mem::swap(&mut s, &mut s_acc);
        let t1 = (step_i + 1) as f64 * h;
        check_finite(&x, t1)?;
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::Integration {
                t: t1,
                reason: "non-finite sensitivity".into(),
            });
        }
        input.input(t1, &mut u);
        visit(Node { index: step_i + 1, t: t1, x: &x, u: &u, s: &s })?;
    }
    Ok(())
}

fn axpy(y: &mut DMatrix<f64>, a: f64, x: &DMatrix<f64>) {
    for (yi, xi) in y.as_mut_slice().iter_mut().zip(x.as_slice()) {
        *yi += a * xi;
    }
}

/// Trajectory and sensitivity trace on the grid `0, h, ..., t_end`, with
/// `S(0) = 0`.
pub fn integrate_with_sensitivity<S: OdeSystem + ?Sized, I: InputSignal + ?Sized>(
    sys: &S,
    x0: &[f64],
    w: &[f64],
    input: &I,
    t_end: f64,
    h: f64,
    method: Method,
) -> Result<(Trajectory, SensitivityTrace)> {
    let s0 = DMatrix::zeros(sys.state_dim(), sys.param_dim());
    let mut traj = Trajectory::default();
    let mut trace = SensitivityTrace::default();
    let mut y = vec![0.0; sys.output_dim()];
    sensitivity_sweep(sys, x0, &s0, w, input, t_end, h, method, |node| {
        sys.output(node.t, node.x, node.u, w, &mut y);
        traj.times.push(node.t);
        traj.states.push(node.x.to_vec());
        traj.inputs.push(node.u.to_vec());
        traj.outputs.push(y.clone());
        trace.matrices.push(node.s.clone());
        Ok(())
    })?;
    Ok((traj, trace))
}

/// Result of a convergence experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct OrderEstimate {
    pub steps: Vec<f64>,
    pub errors: Vec<f64>,
    /// Least-squares slope of `log(error)` against `log(h)`; `None` when
    /// every error is zero (the method is exact on the problem).
    pub order: Option<f64>,
}

pub const ORDER_STEPS: [f64; 4] = [0.1, 0.05, 0.025, 0.0125];

/// Empirical convergence order of `method` on a scalar or vector problem
/// with known solution, measured at `t_end` over [`ORDER_STEPS`].
pub fn order_estimate<F, E>(method: Method, f: F, exact: E, x0: &[f64], t_end: f64) -> Result<OrderEstimate>
where
    F: Fn(f64, &[f64], &mut [f64]),
    E: Fn(f64) -> Vec<f64>,
{
    let target = exact(t_end);
    let mut errors = Vec::new();
    for &h in &ORDER_STEPS {
        let steps = step_count(t_end, h)?;
        let mut x = x0.to_vec();
        for k in 0..steps {
            x = step(method, &f, k as f64 * h, &x, h)?;
        }
        let err = x.iter().zip(&target).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        errors.push(err);
    }
    let order = if errors.iter().all(|&e| e == 0.0) {
        None
    } else {
        let pts: Vec<(f64, f64)> = ORDER_STEPS
            .iter()
            .zip(&errors)
            .filter(|(_, &e)| e > 0.0)
            .map(|(&h, &e)| (h.ln(), e.ln()))
            .collect();
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        Some(sxy / sxx)
    };
    Ok(OrderEstimate {
        steps: ORDER_STEPS.to_vec(),
        errors,
        order,
    })
}
