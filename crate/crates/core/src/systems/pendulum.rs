//! Cart-pole with a linear state-feedback controller, and the
//! port-Hamiltonian surrogate learned from its closed-loop trajectories.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::fd_partials;
use crate::constructs::{
    positive_raw, Causality, ConstructKind, EnergyMap, Mlp, QuadraticForm, ResistiveMap, Signal,
};
use crate::error::{Error, Result};
use crate::network::{JunctionKind, JunctionPort, Network, OdeSystem, Quantity};
use crate::odesolve::{integrate_sampled, Method, NoInput, Trajectory};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct PendulumParams {
    /// cart mass
    pub M: f64,
    /// pole mass
    pub m: f64,
    /// pole half-length
    pub l: f64,
    pub g: f64,
    /// pole inertia
    pub J: f64,
    /// cart friction
    pub b: f64,
}

impl Default for PendulumParams {
    fn default() -> Self {
        Self::table()
    }
}

impl PendulumParams {
    /// Reference values used throughout the experiments.
    pub fn table() -> Self {
        Self {
            M: 0.5,
            m: 0.2,
            l: 0.3,
            g: 9.81,
            J: 0.006,
            b: 0.1,
        }
    }

    /// All parameters positive and the mass-matrix determinant negative for
    /// every angle (its maximum over the angle is at `cos = 1`).
    pub fn validate(&self) -> Result<()> {
        let all = [self.M, self.m, self.l, self.g, self.J, self.b];
        if all.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Structure("pendulum parameters must be positive".into()));
        }
        let worst = (self.m * self.l).powi(2) - (self.m + self.M) * (self.J + self.m * self.l * self.l);
        if worst >= 0.0 {
            return Err(Error::Structure("pendulum parameters give a singular mass matrix".into()));
        }
        Ok(())
    }

    fn denominator(&self, theta: f64) -> f64 {
        (self.m * self.l * theta.cos()).powi(2) - (self.m + self.M) * (self.J + self.m * self.l * self.l)
    }
}

/// Time derivative of `z = (x, v, theta, omega)` under cart force `force`.
pub fn pendulum_rhs(z: &[f64; 4], force: f64, p: &PendulumParams) -> Result<[f64; 4]> {
    let [_, v, th, om] = *z;
    let den = p.denominator(th);
    if den.abs() < 1e-12 {
        return Err(Error::Structure(format!("singular pendulum dynamics at theta = {th}")));
    }
    let (s, c) = th.sin_cos();
    let ml = p.m * p.l;
    let vdot = ((p.J + ml * p.l) * (p.b * v - force - ml * om * om * s) - ml * ml * p.g * s * c) / den;
    let wdot = ml * (force * c + ml * om * om * s * c - p.b * v * c + (p.m + p.M) * p.g * s) / den;
    Ok([v, vdot, om, wdot])
}

/// Reference controller gain.
pub const CONTROLLER_GAIN: [f64; 4] = [1.2501, 2.7612, -16.3099, -3.7814];

/// Sign of the physical cart force relative to `K . z` that stabilizes the
/// upright equilibrium: the closed loop uses `F = STABILIZING_SIGN * K . z`.
pub const STABILIZING_SIGN: f64 = -1.0;

/// `F = sign * K . z`
pub fn pendulum_controller(z: &[f64; 4], gain: &[f64; 4], sign: f64) -> f64 {
    sign * gain.iter().zip(z).map(|(k, v)| k * v).sum::<f64>()
}

/// Closed-loop cart-pole as an ODE with no trainable parameters.
#[derive(Clone, Debug)]
pub struct ClosedLoopPendulum {
    pub params: PendulumParams,
    pub gain: [f64; 4],
    pub sign: f64,
}

impl ClosedLoopPendulum {
    pub fn new(params: PendulumParams, gain: [f64; 4], sign: f64) -> Result<Self> {
        params.validate()?;
        Ok(Self { params, gain, sign })
    }

    pub fn reference() -> Self {
        Self {
            params: PendulumParams::table(),
            gain: CONTROLLER_GAIN,
            sign: STABILIZING_SIGN,
        }
    }
}

impl OdeSystem for ClosedLoopPendulum {
    fn state_dim(&self) -> usize {
        4
    }

    fn param_dim(&self) -> usize {
        0
    }

    fn rhs(&self, _t: f64, x: &[f64], _u: &[f64], _w: &[f64], dx: &mut [f64]) {
        let z = [x[0], x[1], x[2], x[3]];
        let f = pendulum_controller(&z, &self.gain, self.sign);
        match pendulum_rhs(&z, f, &self.params) {
            Ok(d) => dx.copy_from_slice(&d),
            Err(_) => dx.iter_mut().for_each(|v| *v = f64::NAN),
        }
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
        fd_partials(self, t, x, u, w, dx, dfdx, dfdw);
    }
}

/// Initial-condition set and sampling grid for closed-loop data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PendulumDataSpec {
    pub t_end: f64,
    pub h: f64,
    /// Internal rk4 steps per sampling interval.
    pub substeps: usize,
    pub initial_conditions: Vec<[f64; 4]>,
}

impl Default for PendulumDataSpec {
    fn default() -> Self {
        Self {
            t_end: 6.0,
            h: 0.05,
            substeps: 10,
            initial_conditions: default_initial_conditions(),
        }
    }
}

/// `x0 in {-0.2, 0.2}`, `theta0 in {-0.1, 0.1}`, zero velocities.
pub fn default_initial_conditions() -> Vec<[f64; 4]> {
    let mut ics = Vec::new();
    for &x0 in &[-0.2, 0.2] {
        for &th0 in &[-0.1, 0.1] {
            ics.push([x0, 0.0, th0, 0.0]);
        }
    }
    ics
}

/// Random initial conditions in the validation box
/// `|x| <= 0.2, |v| <= 0.1, |theta| <= 0.2, |omega| <= 0.1`.
pub fn random_initial_conditions(count: usize, seed: u64) -> Vec<[f64; 4]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            [
                rng.gen_range(-0.2..=0.2),
                rng.gen_range(-0.1..=0.1),
                rng.gen_range(-0.2..=0.2),
                rng.gen_range(-0.1..=0.1),
            ]
        })
        .collect()
}

/// Closed-loop trajectories with the full state observed.
pub fn generate_pendulum_data(system: &ClosedLoopPendulum, spec: &PendulumDataSpec) -> Result<Vec<Trajectory>> {
    spec.initial_conditions
        .iter()
        .map(|ic| integrate_sampled(system, ic, &[], &NoInput, spec.t_end, spec.h, spec.substeps, Method::Rk4))
        .collect()
}

/// Hyperparameters of the surrogate network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurrogateSpec {
    pub hidden: usize,
    pub gain: [f64; 4],
    pub sign: f64,
    /// Initial effective values of the inertias and dampers.
    pub init_mass: f64,
    pub init_inertia: f64,
    pub init_cart_damping: f64,
    pub init_pole_damping: f64,
    pub input_scale: f64,
    pub output_scale: f64,
}

impl Default for SurrogateSpec {
    fn default() -> Self {
        Self {
            hidden: 50,
            gain: CONTROLLER_GAIN,
            sign: STABILIZING_SIGN,
            init_mass: 1.0,
            init_inertia: 1.0,
            init_cart_damping: 0.1,
            init_pole_damping: 0.1,
            input_scale: 1.0,
            output_scale: 1.0,
        }
    }
}

/// Construct ids of the surrogate; the state order is
/// `(cart momentum, cart position, pole angle, pole momentum)`.
pub mod surrogate_ids {
    pub const CART_MASS: &str = "cart_mass";
    pub const CART_POSITION: &str = "cart_position";
    pub const CART_DAMPER: &str = "cart_damper";
    pub const POLE_INERTIA: &str = "pole_inertia";
    pub const POLE_ANGLE: &str = "pole_angle";
    pub const POLE_DAMPER: &str = "pole_damper";
    pub const COUPLING: &str = "coupling";
    pub const FORCE: &str = "force";
}

/// Surrogate: a translational and a rotational inertia, each with a linear
/// damper, coupled by a learned solved map `(f, tau) = h(v, omega)`, with the
/// cart driven by the feedback controller. Position trackers are zero-energy
/// effort stores that integrate the velocities. Outputs are
/// `(x, v, theta, omega)`.
pub fn build_pendulum_surrogate<R: Rng + ?Sized>(spec: &SurrogateSpec, rng: &mut R) -> Result<Network> {
    use surrogate_ids::*;
    if spec.hidden == 0 {
        return Err(Error::Structure("surrogate hidden layer must be nonempty".into()));
    }
    let inertia = || ConstructKind::FlowStore {
        energy: EnergyMap::Quadratic { form: QuadraticForm::Inertia },
        dim: 1,
    };
    let tracker = || ConstructKind::EffortStore { energy: EnergyMap::Null, dim: 1 };
    let damper = || ConstructKind::Resistive {
        map: ResistiveMap::Linear,
        causality: Causality::Admittance,
    };
    let net_h = Mlp::new(2, spec.hidden, 2).with_scales(spec.input_scale, spec.output_scale);
    let h_params = net_h.init_params(rng);

    let mut net = Network::new();
    net.add(CART_MASS, inertia(), vec![positive_raw(spec.init_mass)])
        .add(CART_POSITION, tracker(), vec![])
        .add(CART_DAMPER, damper(), vec![positive_raw(spec.init_cart_damping)])
        .add(POLE_INERTIA, inertia(), vec![positive_raw(spec.init_inertia)])
        .add(POLE_ANGLE, tracker(), vec![])
        .add(POLE_DAMPER, damper(), vec![positive_raw(spec.init_pole_damping)])
        .add(COUPLING, ConstructKind::SolvedMap { net: net_h }, h_params)
        .add(
            FORCE,
            ConstructKind::FlowSource {
                signal: Signal::Feedback {
                    gain: spec.gain.to_vec(),
                    sign: spec.sign,
                },
            },
            vec![],
        )
        .junction(
            "cart",
            JunctionKind::CommonEffort,
            vec![
                JunctionPort::construct(CART_MASS, 0, -1.0),
                JunctionPort::construct(CART_POSITION, 0, -1.0),
                JunctionPort::construct(CART_DAMPER, 0, -1.0),
                JunctionPort::construct(FORCE, 0, 1.0),
                JunctionPort::construct(COUPLING, 0, 1.0),
            ],
        )
        .junction(
            "pole",
            JunctionKind::CommonEffort,
            vec![
                JunctionPort::construct(POLE_INERTIA, 0, -1.0),
                JunctionPort::construct(POLE_ANGLE, 0, -1.0),
                JunctionPort::construct(POLE_DAMPER, 0, -1.0),
                JunctionPort::construct(COUPLING, 1, 1.0),
            ],
        )
        .observe(Quantity::State, CART_POSITION)
        .observe(Quantity::Effort, CART_MASS)
        .observe(Quantity::State, POLE_ANGLE)
        .observe(Quantity::Effort, POLE_INERTIA);
    Ok(net)
}

/// Trainable parameter count of the surrogate: the coupling network plus
/// two inertias and two dampers.
pub fn surrogate_param_count(hidden: usize) -> usize {
    (hidden * 2 + hidden + 2 * hidden + 2) + 4
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equilibria_are_exact() {
        let p = PendulumParams::table();
        assert_eq!(pendulum_rhs(&[0.0; 4], 0.0, &p).unwrap(), [0.0; 4]);
        let hanging = pendulum_rhs(&[0.0, 0.0, std::f64::consts::PI, 0.0], 0.0, &p).unwrap();
        assert!(hanging.iter().all(|v| v.abs() < 1e-14), "{hanging:?}");
    }

    #[test]
    fn tilted_pole_matches_independent_evaluation() {
        // expanded by hand: D = (0.06 cos 0.1)^2 - 0.7 * 0.024
        let p = PendulumParams::table();
        let (s, c) = 0.1f64.sin_cos();
        let d = (0.06 * c).powi(2) - 0.7 * 0.024;
        let vdot = (-0.0036 * 9.81 * s * c) / d;
        let wdot = 0.06 * (0.7 * 9.81 * s) / d;
        let z = pendulum_rhs(&[0.0, 0.0, 0.1, 0.0], 0.0, &p).unwrap();
        assert!((z[1] - vdot).abs() < 1e-12);
        assert!((z[3] - wdot).abs() < 1e-12);
        assert_eq!(z[0], 0.0);
        assert_eq!(z[2], 0.0);
    }

    #[test]
    fn table_values_are_nonsingular() {
        PendulumParams::table().validate().unwrap();
        let bad = PendulumParams { J: 0.0, ..PendulumParams::table() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn controller_is_linear_and_zero_at_origin() {
        let z = [0.1, -0.2, 0.05, 0.3];
        let z2 = z.map(|v| 2.0 * v);
        assert_eq!(pendulum_controller(&[0.0; 4], &CONTROLLER_GAIN, -1.0), 0.0);
        let f = pendulum_controller(&z, &CONTROLLER_GAIN, -1.0);
        assert!((pendulum_controller(&z2, &CONTROLLER_GAIN, -1.0) - 2.0 * f).abs() < 1e-15);
    }

    #[test]
    fn surrogate_parameter_count() {
        assert_eq!(surrogate_param_count(50), 256);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = build_pendulum_surrogate(&SurrogateSpec::default(), &mut rng).unwrap();
        assert_eq!(net.param_vector().unwrap().len(), 256);
    }

    #[test]
    fn only_the_chosen_sign_stabilizes() {
        let z0 = [0.2, 0.0, 0.1, 0.0];
        let end = |sign: f64| {
            let sys = ClosedLoopPendulum::new(PendulumParams::table(), CONTROLLER_GAIN, sign).unwrap();
            let traj = integrate_sampled(&sys, &z0, &[], &NoInput, 6.0, 0.05, 10, Method::Rk4);
            traj.ok().and_then(|t| {
                let z = t.states.last().unwrap();
                let n = z.iter().map(|v| v * v).sum::<f64>().sqrt();
                n.is_finite().then_some(n)
            })
        };
        assert!(end(STABILIZING_SIGN).unwrap() <= 0.05);
        assert!(end(-STABILIZING_SIGN).map_or(true, |n| n > 0.05));
    }

    #[test]
    fn default_data_has_four_converging_trajectories() {
        let data = generate_pendulum_data(&ClosedLoopPendulum::reference(), &PendulumDataSpec::default()).unwrap();
        assert_eq!(data.len(), 4);
        for t in &data {
            assert_eq!(t.len(), 121);
            let z = t.states.last().unwrap();
            assert!(z.iter().map(|v| v * v).sum::<f64>().sqrt() <= 0.05);
        }
    }

    #[test]
    fn zero_surrogate_is_at_rest_at_origin() {
        use crate::network::assemble_ode;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = build_pendulum_surrogate(&SurrogateSpec::default(), &mut rng).unwrap();
        let sys = assemble_ode(&net).unwrap();
        let mut w = sys.params().values().to_vec();
        let range = sys.params().range(surrogate_ids::COUPLING).unwrap();
        w[range].iter_mut().for_each(|v| *v = 0.0);
        let mut dx = vec![1.0; 4];
        sys.rhs(0.0, &[0.0; 4], &[], &w, &mut dx);
        assert_eq!(dx, vec![0.0; 4]);
    }
}
