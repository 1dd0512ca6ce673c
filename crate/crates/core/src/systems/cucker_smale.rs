//! Cucker-Smale particle model with an attraction/repulsion potential.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::OdeSystem;
use crate::odesolve::{integrate_sampled, Method, NoInput, Trajectory};

/// Interaction kernel `G(r) = (1 + r^2)^-gamma` and potential
/// `U(r) = -C_A exp(-r/l_A) + C_R exp(-r/l_R)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsParams {
    pub gamma: f64,
    pub c_a: f64,
    pub l_a: f64,
    pub c_r: f64,
    pub l_r: f64,
}

impl Default for CsParams {
    fn default() -> Self {
        Self::reference()
    }
}

impl CsParams {
    pub fn reference() -> Self {
        Self {
            gamma: 0.15,
            c_a: 200.0,
            l_a: 100.0,
            c_r: 500.0,
            l_r: 2.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.gamma, self.c_a, self.l_a, self.c_r, self.l_r];
        if all.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Structure("Cucker-Smale parameters must be positive".into()));
        }
        Ok(())
    }

    pub fn interaction(&self, r: f64) -> f64 {
        (1.0 + r * r).powf(-self.gamma)
    }

    pub fn interaction_deriv(&self, r: f64) -> f64 {
        -2.0 * self.gamma * r * (1.0 + r * r).powf(-self.gamma - 1.0)
    }

    pub fn potential(&self, r: f64) -> f64 {
        -self.c_a * (-r / self.l_a).exp() + self.c_r * (-r / self.l_r).exp()
    }

    /// `U'(r)`
    pub fn potential_grad(&self, r: f64) -> f64 {
        self.c_a / self.l_a * (-r / self.l_a).exp() - self.c_r / self.l_r * (-r / self.l_r).exp()
    }

    /// `U''(r)`
    pub fn potential_second(&self, r: f64) -> f64 {
        -self.c_a / (self.l_a * self.l_a) * (-r / self.l_a).exp()
            + self.c_r / (self.l_r * self.l_r) * (-r / self.l_r).exp()
    }

    /// One-dimensional gradient `U'(|x|) sign(x)`, zero at coincidence.
    pub fn potential_grad_signed(&self, x: f64) -> f64 {
        if x == 0.0 {
            0.0
        } else {
            self.potential_grad(x.abs()) * x.signum()
        }
    }

    /// Root of `U'` (equilibrium pair spacing), by bisection on `[lo, hi]`.
    pub fn equilibrium_spacing(&self) -> Option<f64> {
        let (mut lo, mut hi) = (1e-9, 1e4);
        let f = |r| self.potential_grad(r);
        if f(lo).signum() == f(hi).signum() {
            return None;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid).signum() == f(lo).signum() {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Some(0.5 * (lo + hi))
    }
}

/// Right-hand side of the particle model. Positions and velocities are
/// flat `N x dim` row-major arrays; returns `(dx/dt, dv/dt)`.
pub fn cs_rhs(
    positions: &[f64],
    velocities: &[f64],
    dim: usize,
    params: &CsParams,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(1..=3).contains(&dim) {
        return Err(Error::Structure(format!("particle dimension must be 1, 2 or 3, got {dim}")));
    }
    if positions.len() != velocities.len() || !positions.len().is_multiple_of(dim) {
        return Err(Error::dim("particle state", positions.len(), velocities.len()));
    }
    let n = positions.len() / dim;
    if n < 2 {
        return Err(Error::Structure("need at least two particles".into()));
    }
    let mut acc = vec![0.0; n * dim];
    cs_accel(positions, velocities, dim, params, &mut acc, true);
    Ok((velocities.to_vec(), acc))
}

pub(crate) fn cs_accel(
    x: &[f64],
    v: &[f64],
    dim: usize,
    params: &CsParams,
    acc: &mut [f64],
    with_alignment: bool,
) {
    let n = x.len() / dim;
    let inv_n = 1.0 / n as f64;
    acc.iter_mut().for_each(|a| *a = 0.0);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let mut r2 = 0.0;
            for k in 0..dim {
                let d = x[i * dim + k] - x[j * dim + k];
                r2 += d * d;
            }
            let r = r2.sqrt();
            let g = if with_alignment { params.interaction(r) } else { 0.0 };
            let up = if r > 0.0 { params.potential_grad(r) / r } else { 0.0 };
            for k in 0..dim {
                let delta = x[i * dim + k] - x[j * dim + k];
                acc[i * dim + k] += inv_n * (g * (v[j * dim + k] - v[i * dim + k]) - up * delta);
            }
        }
    }
}

/// Ground-truth particle system. State layout: positions then velocities.
#[derive(Clone, Debug)]
pub struct CsSystem {
    pub particles: usize,
    pub dim: usize,
    pub params: CsParams,
    /// Drop the alignment term (potential forces only).
    pub alignment: bool,
}

impl CsSystem {
    pub fn new(particles: usize, dim: usize, params: CsParams) -> Result<Self> {
        params.validate()?;
        if particles < 2 || !(1..=3).contains(&dim) {
            return Err(Error::Structure(format!(
                "invalid particle system: {particles} particles in dimension {dim}"
            )));
        }
        Ok(Self {
            particles,
            dim,
            params,
            alignment: true,
        })
    }
}

impl OdeSystem for CsSystem {
    fn state_dim(&self) -> usize {
        2 * self.particles * self.dim
    }

    fn param_dim(&self) -> usize {
        0
    }

    fn rhs(&self, _t: f64, x: &[f64], _u: &[f64], _w: &[f64], dx: &mut [f64]) {
        let half = self.particles * self.dim;
        let (pos, vel) = x.split_at(half);
        dx[..half].copy_from_slice(vel);
        cs_accel(pos, vel, self.dim, &self.params, &mut dx[half..], self.alignment);
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
        super::fd_partials(self, t, x, u, w, dx, dfdx, dfdw);
    }
}

/// Settings for swarm data generation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwarmDataSpec {
    pub particles: usize,
    pub series: usize,
    pub dim: usize,
    pub t_end: f64,
    pub h: f64,
    pub ic_range: (f64, f64),
    /// Internal rk4 steps per sampling interval.
    pub substeps: usize,
    pub seed: u64,
}

impl Default for SwarmDataSpec {
    fn default() -> Self {
        Self {
            particles: 10,
            series: 5,
            dim: 2,
            t_end: 10.0,
            h: 0.1,
            ic_range: (-10.0, 10.0),
            substeps: 10,
            seed: 0,
        }
    }
}

/// Random initial states (positions and velocities uniform in the range).
pub fn random_swarm_states(spec: &SwarmDataSpec, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 2 * spec.particles * spec.dim;
    let (lo, hi) = spec.ic_range;
    (0..count)
        .map(|_| (0..n).map(|_| rng.gen_range(lo..=hi)).collect())
        .collect()
}

pub fn simulate_swarm(spec: &SwarmDataSpec, params: &CsParams, x0: &[f64]) -> Result<Trajectory> {
    let sys = CsSystem::new(spec.particles, spec.dim, *params)?;
    integrate_sampled(&sys, x0, &[], &NoInput, spec.t_end, spec.h, spec.substeps.max(1), Method::Rk4)
}

/// Ground-truth trajectories sampled on the `h` grid.
pub fn generate_swarm_data(spec: &SwarmDataSpec, params: &CsParams) -> Result<Vec<Trajectory>> {
    if spec.particles < 2 {
        return Err(Error::Structure("need at least two particles".into()));
    }
    random_swarm_states(spec, spec.series, spec.seed)
        .iter()
        .map(|x0| simulate_swarm(spec, params, x0))
        .collect()
}
