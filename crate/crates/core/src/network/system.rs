use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::odesolve::Trajectory;

/// Auxiliary signals a system may expose besides its rhs and outputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Aux {
    /// Flows on the links between junctions.
    LinkFlows,
    /// Power `e f` absorbed by each dissipative element.
    DissipatorPowers,
}

/// Explicit dynamics `dx/dt = f(t, x, u; w)`, `y = h(t, x, u; w)`, with
/// analytic partials.
pub trait OdeSystem: Sync {
    fn state_dim(&self) -> usize;
    fn param_dim(&self) -> usize;

    fn input_dim(&self) -> usize {
        0
    }

    fn rhs(&self, t: f64, x: &[f64], u: &[f64], w: &[f64], dx: &mut [f64]);

    /// `dx` plus `df/dx` (`n x n`) and `df/dw` (`n x m`).
    #[allow(clippy::too_many_arguments)]
    fn rhs_partials(
        &self,
        t: f64,
        x: &[f64],
        u: &[f64],
        w: &[f64],
        dx: &mut [f64],
        dfdx: &mut DMatrix<f64>,
        dfdw: &mut DMatrix<f64>,
    );

    fn output_dim(&self) -> usize {
        self.state_dim()
    }

    fn output(&self, _t: f64, x: &[f64], _u: &[f64], _w: &[f64], y: &mut [f64]) {
        y.copy_from_slice(x);
    }

    #[allow(clippy::too_many_arguments)]
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
        self.output(t, x, u, w, y);
        dydx.fill(0.0);
        for i in 0..y.len().min(x.len()) {
            dydx[(i, i)] = 1.0;
        }
        dydw.fill(0.0);
    }

    fn aux_dim(&self, _aux: Aux) -> usize {
        0
    }

    /// Values of an auxiliary signal and, when `partials` is given, their
    /// derivatives with respect to state and parameters.
    fn aux(
        &self,
        _aux: Aux,
        _t: f64,
        _x: &[f64],
        _u: &[f64],
        _w: &[f64],
        _values: &mut [f64],
        _partials: Option<(&mut DMatrix<f64>, &mut DMatrix<f64>)>,
    ) {
    }

    /// State and its parameter sensitivity matching an observed initial
    /// output. The default requires outputs to be the state itself.
    fn initial_state(&self, y0: &[f64], _w: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)> {
        if y0.len() != self.state_dim() || self.output_dim() != self.state_dim() {
            return Err(Error::dim("initial output", self.state_dim(), y0.len()));
        }
        Ok((y0.to_vec(), DMatrix::zeros(self.state_dim(), self.param_dim())))
    }
}

/// Per-link flow series along a trajectory (`result[j][k]` is link `j` at
/// sample `k`).
pub fn link_flows<S: OdeSystem + ?Sized>(
    sys: &S,
    traj: &Trajectory,
    w: &[f64],
) -> Result<Vec<Vec<f64>>> {
    let m = sys.aux_dim(Aux::LinkFlows);
    let mut out = vec![Vec::with_capacity(traj.len()); m];
    let mut buf = vec![0.0; m];
    for k in 0..traj.len() {
        let x = &traj.states[k];
        if x.len() != sys.state_dim() {
            return Err(Error::dim("trajectory state", sys.state_dim(), x.len()));
        }
        let u = traj.inputs.get(k).map(Vec::as_slice).unwrap_or(&[]);
        sys.aux(Aux::LinkFlows, traj.times[k], x, u, w, &mut buf, None);
        for (series, v) in out.iter_mut().zip(&buf) {
            series.push(*v);
        }
    }
    Ok(out)
}
