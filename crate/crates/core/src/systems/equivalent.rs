use serde::{Deserialize, Serialize};

use super::CsParams;
use crate::constructs::{positive_raw, Causality, ConstructKind, EnergyMap, QuadraticForm, ResistiveMap, Signal};
use crate::error::{Error, Result};
use crate::network::{JunctionKind, JunctionPort, Network, Quantity};

fn mass_id(i: usize) -> String {
    format!("m{i}")
}

fn position_id(i: usize) -> String {
    format!("x{i}")
}

/// Spring between particles `i < j`; its state is `x_i - x_j`.
pub fn pair_spring_id(i: usize, j: usize) -> String {
    format!("k{i}.{j}")
}

fn pair_damper_id(i: usize, j: usize) -> String {
    format!("d{i}.{j}")
}

/// Fully connected one-dimensional mass-spring-damper network whose
/// dynamics coincide with the particle model: unit masses, pair springs
/// storing `U(|q|) / N` and pair dampers with coefficient `G(|q|) / N`
/// modulated by the spring elongation. Observed outputs are the positions
/// followed by the velocities (1-based particle ids).
pub fn build_msd_equivalent_cs(particles: usize, params: &CsParams) -> Result<Network> {
    params.validate()?;
    if particles < 2 {
        return Err(Error::Structure("need at least two particles".into()));
    }
    let scale = 1.0 / particles as f64;
    let mut net = Network::new();
    let mut nodes: Vec<Vec<JunctionPort>> = (1..=particles)
        .map(|i| {
            net.add(
                &mass_id(i),
                ConstructKind::FlowStore {
                    energy: EnergyMap::Quadratic { form: QuadraticForm::Inertia },
                    dim: 1,
                },
                vec![positive_raw(1.0)],
            )
            .add(&position_id(i), ConstructKind::EffortStore { energy: EnergyMap::Null, dim: 1 }, vec![]);
            vec![
                JunctionPort::construct(mass_id(i), 0, -1.0),
                JunctionPort::construct(position_id(i), 0, -1.0),
            ]
        })
        .collect();
    for i in 1..=particles {
        for j in i + 1..=particles {
            let (k, d) = (pair_spring_id(i, j), pair_damper_id(i, j));
            let (bi, bj, bs) = (format!("b{i}.{j}.a"), format!("b{i}.{j}.b"), format!("b{i}.{j}.s"));
            net.add(
                &k,
                ConstructKind::EffortStore {
                    energy: EnergyMap::CsPairPotential { params: *params, scale },
                    dim: 1,
                },
                vec![],
            )
            .add(
                &d,
                ConstructKind::Resistive {
                    map: ResistiveMap::CsAlignment {
                        params: *params,
                        scale,
                        modulator: k.clone(),
                    },
                    causality: Causality::Admittance,
                },
                vec![],
            )
            .bond(&bi)
            .bond(&bj)
            .bond(&bs);
            nodes[i - 1].push(JunctionPort::bond(&bi, -1.0));
            nodes[j - 1].push(JunctionPort::bond(&bj, 1.0));
            // common force, relative velocity v_i - v_j across the pair
            net.junction(
                &format!("L{i}.{j}"),
                JunctionKind::CommonFlow,
                vec![
                    JunctionPort::bond(&bi, 1.0),
                    JunctionPort::bond(&bj, -1.0),
                    JunctionPort::bond(&bs, -1.0),
                ],
            )
            .junction(
                &format!("P{i}.{j}"),
                JunctionKind::CommonEffort,
                vec![
                    JunctionPort::bond(&bs, 1.0),
                    JunctionPort::construct(&k, 0, -1.0),
                    JunctionPort::construct(&d, 0, -1.0),
                ],
            );
        }
    }
    for (i, ports) in nodes.into_iter().enumerate() {
        net.junction(&format!("N{}", i + 1), JunctionKind::CommonEffort, ports);
    }
    for i in 1..=particles {
        net.observe(Quantity::State, &position_id(i));
    }
    for i in 1..=particles {
        net.observe(Quantity::Effort, &mass_id(i));
    }
    Ok(net)
}

/// State vector of [`build_msd_equivalent_cs`] for given particle positions
/// and velocities, laid out in the assembled system's state order.
pub fn msd_equivalent_state(state_names: &[String], positions: &[f64], velocities: &[f64]) -> Result<Vec<f64>> {
    let n = positions.len();
    if velocities.len() != n {
        return Err(Error::dim("particle velocities", n, velocities.len()));
    }
    state_names
        .iter()
        .map(|name| {
            let idx = |s: &str| -> Result<usize> {
                s.parse::<usize>()
                    .ok()
                    .filter(|i| (1..=n).contains(i))
                    .ok_or_else(|| Error::Structure(format!("unexpected state `{name}`")))
            };
            let base = name.as_str();
            if let Some(rest) = base.strip_prefix('m') {
                Ok(velocities[idx(rest)? - 1])
            } else if let Some(rest) = base.strip_prefix('x') {
                Ok(positions[idx(rest)? - 1])
            } else if let Some(rest) = base.strip_prefix('k') {
                let (a, b) = rest
                    .split_once('.')
                    .ok_or_else(|| Error::Structure(format!("unexpected state `{name}`")))?;
                Ok(positions[idx(a)? - 1] - positions[idx(b)? - 1])
            } else {
                Err(Error::Structure(format!("unexpected state `{name}`")))
            }
        })
        .collect()
}

/// Ids of the redundant two-link network.
pub mod sparse_ids {
    pub const MASS: &str = "m";
    pub const FORCE: &str = "F";
    pub const SPRING: &str = "k_a";
    pub const DAMPER: &str = "d_b";
    pub const SPRING_LINK: &str = "link_a";
    pub const DAMPER_LINK: &str = "link_b";
}

/// Mass driven by a sinusoidal force and attached through two separate
/// links to a spring and to a damper.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseToySpec {
    pub m: f64,
    pub k: f64,
    pub d: f64,
    pub force: Signal,
}

impl SparseToySpec {
    /// Data-generating values: the damper link carries no flow.
    pub fn ground_truth() -> Self {
        Self {
            m: 1.0,
            k: 2.0,
            d: 0.0,
            force: Signal::Sine {
                amplitude: 1.0,
                frequency: 0.2,
                phase: 0.0,
            },
        }
    }

    /// Initial guess for training.
    pub fn initial_guess() -> Self {
        Self {
            m: 1.2,
            k: 1.5,
            d: 0.5,
            ..Self::ground_truth()
        }
    }
}

/// Observes the spring elongation and the mass velocity.
pub fn build_sparse_toy(spec: &SparseToySpec) -> Network {
    use sparse_ids::*;
    let mut net = Network::new();
    net.add(FORCE, ConstructKind::FlowSource { signal: spec.force.clone() }, vec![])
        .add(
            MASS,
            ConstructKind::FlowStore {
                energy: EnergyMap::Quadratic { form: QuadraticForm::Inertia },
                dim: 1,
            },
            vec![positive_raw(spec.m)],
        )
        .add(
            SPRING,
            ConstructKind::EffortStore {
                energy: EnergyMap::Quadratic { form: QuadraticForm::Stiffness },
                dim: 1,
            },
            vec![positive_raw(spec.k)],
        )
        .add(
            DAMPER,
            ConstructKind::Resistive {
                map: ResistiveMap::Linear,
                causality: Causality::Admittance,
            },
            vec![positive_raw(spec.d)],
        )
        .bond(SPRING_LINK)
        .bond(DAMPER_LINK)
        .junction(
            "J0",
            JunctionKind::CommonEffort,
            vec![
                JunctionPort::construct(MASS, 0, -1.0),
                JunctionPort::construct(FORCE, 0, 1.0),
                JunctionPort::bond(SPRING_LINK, -1.0),
                JunctionPort::bond(DAMPER_LINK, -1.0),
            ],
        )
        .junction(
            "Ja",
            JunctionKind::CommonEffort,
            vec![JunctionPort::bond(SPRING_LINK, 1.0), JunctionPort::construct(SPRING, 0, -1.0)],
        )
        .junction(
            "Jb",
            JunctionKind::CommonEffort,
            vec![JunctionPort::bond(DAMPER_LINK, 1.0), JunctionPort::construct(DAMPER, 0, -1.0)],
        )
        .observe(Quantity::State, SPRING)
        .observe(Quantity::Effort, MASS);
    net
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{assemble_ode, link_flows, OdeSystem};
    use crate::odesolve::{integrate, Method, NoInput};
    use crate::systems::CsSystem;

    #[test]
    fn network_rhs_equals_particle_rhs() {
        let params = CsParams::reference();
        let sys = assemble_ode(&build_msd_equivalent_cs(3, &params).unwrap()).unwrap();
        let (pos, vel) = ([-2.0, 0.5, 3.0], [1.0, -0.3, 0.2]);
        let x = msd_equivalent_state(&sys.state_names(), &pos, &vel).unwrap();
        let w = sys.params().values().to_vec();
        let mut dx = vec![0.0; x.len()];
        sys.rhs(0.0, &x, &[], &w, &mut dx);
        let (_, acc) = cs_rhs_1d(&pos, &vel, &params);
        for i in 1..=3 {
            let k = sys.state_index(&format!("m{i}")).unwrap();
            assert!((dx[k] - acc[i - 1]).abs() < 1e-12, "{} vs {}", dx[k], acc[i - 1]);
            let k = sys.state_index(&format!("x{i}")).unwrap();
            assert!((dx[k] - vel[i - 1]).abs() < 1e-15);
        }
    }

    fn cs_rhs_1d(pos: &[f64], vel: &[f64], params: &CsParams) -> (Vec<f64>, Vec<f64>) {
        crate::systems::cs_rhs(pos, vel, 1, params).unwrap()
    }

    #[test]
    fn trajectories_coincide() {
        let params = CsParams::reference();
        let sys = assemble_ode(&build_msd_equivalent_cs(3, &params).unwrap()).unwrap();
        let (pos, vel) = ([-4.0, 1.0, 2.5], [0.5, -1.0, 0.0]);
        let x0 = msd_equivalent_state(&sys.state_names(), &pos, &vel).unwrap();
        let w = sys.params().values().to_vec();
        let a = integrate(&sys, &x0, &w, &NoInput, 1.0, 0.01, Method::Rk4).unwrap();
        let cs = CsSystem::new(3, 1, params).unwrap();
        let z0: Vec<f64> = pos.iter().chain(&vel).copied().collect();
        let b = integrate(&cs, &z0, &[], &NoInput, 1.0, 0.01, Method::Rk4).unwrap();
        for (ya, yb) in a.outputs.iter().zip(&b.outputs) {
            for (p, q) in ya.iter().zip(yb) {
                assert!((p - q).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn equal_velocities_leave_springs_at_rest() {
        let params = CsParams::reference();
        let sys = assemble_ode(&build_msd_equivalent_cs(3, &params).unwrap()).unwrap();
        let x = msd_equivalent_state(&sys.state_names(), &[0.0, 1.0, 5.0], &[0.7; 3]).unwrap();
        let mut dx = vec![0.0; x.len()];
        sys.rhs(0.0, &x, &[], sys.params().values(), &mut dx);
        for (i, j) in [(1, 2), (1, 3), (2, 3)] {
            assert_eq!(dx[sys.state_index(&pair_spring_id(i, j)).unwrap()], 0.0);
        }
    }

    #[test]
    fn ground_truth_toy_has_idle_damper_link() {
        let sys = assemble_ode(&build_sparse_toy(&SparseToySpec::ground_truth())).unwrap();
        assert_eq!(sys.link_names(), vec![sparse_ids::SPRING_LINK, sparse_ids::DAMPER_LINK]);
        let w = sys.params().values().to_vec();
        let traj = integrate(&sys, &[0.0, 0.0], &w, &NoInput, 5.0, 0.05, Method::Midpoint).unwrap();
        let flows = link_flows(&sys, &traj, &w).unwrap();
        assert!(flows[1].iter().all(|f| *f == 0.0));
        assert!(flows[0].iter().any(|f| f.abs() > 1e-3));
    }
}
