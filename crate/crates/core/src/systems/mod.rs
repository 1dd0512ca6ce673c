//! Ground-truth generators, reference networks and surrogate builders.

mod cucker_smale;
mod equivalent;
mod pendulum;
mod swarm;

use nalgebra::DMatrix;

use crate::network::OdeSystem;

pub use cucker_smale::{
    cs_rhs, generate_swarm_data, random_swarm_states, simulate_swarm, CsParams, CsSystem, SwarmDataSpec,
};
pub use equivalent::{
    build_msd_equivalent_cs, build_sparse_toy, msd_equivalent_state, pair_spring_id, sparse_ids, SparseToySpec,
};
pub use pendulum::{
    build_pendulum_surrogate, default_initial_conditions, generate_pendulum_data, pendulum_controller,
    pendulum_rhs, random_initial_conditions, surrogate_ids, surrogate_param_count, ClosedLoopPendulum,
    PendulumDataSpec, PendulumParams, SurrogateSpec, CONTROLLER_GAIN, STABILIZING_SIGN,
};
pub use swarm::{default_q_grid, recover_potential_curve, PotentialCurve, SwarmModel, SwarmModelSpec};

/// Central-difference state Jacobian; `dfdw` is left zero.
#[allow(clippy::too_many_arguments)]
pub(crate) fn fd_partials<S: OdeSystem + ?Sized>(
    sys: &S,
    t: f64,
    x: &[f64],
    u: &[f64],
    w: &[f64],
    dx: &mut [f64],
    dfdx: &mut DMatrix<f64>,
    dfdw: &mut DMatrix<f64>,
) {
    sys.rhs(t, x, u, w, dx);
    dfdw.fill(0.0);
    let n = x.len();
    let mut xp = x.to_vec();
    let mut fp = vec![0.0; n];
    let mut fm = vec![0.0; n];
    for j in 0..n {
        let h = 1e-6 * (1.0 + x[j].abs());
        xp[j] = x[j] + h;
        sys.rhs(t, &xp, u, w, &mut fp);
        xp[j] = x[j] - h;
        sys.rhs(t, &xp, u, w, &mut fm);
        xp[j] = x[j];
        for i in 0..n {
            dfdx[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
}
