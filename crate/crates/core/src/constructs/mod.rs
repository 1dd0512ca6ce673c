//! Atomic port-Hamiltonian elements and their parametrized constitutive maps.
//!
//! Every port carries an effort `e` and a flow `f`; `e * f` is the power
//! through it. Stores integrate one port variable and expose the gradient of
//! their energy as the other:
//!
//! * flow store: `dx/dt = f`, `e = dH/dx`
//! * effort store: `dx/dt = e`, `f = dH/dx`
//!
//! Resistive elements are explicit maps in one of two causal forms, sources
//! impose one port variable from a [`Signal`], and two-ports relate the
//! variables of their two ports.

mod maps;
mod mlp;
mod params;

use serde::{Deserialize, Serialize};

pub use maps::{
    instantaneous_power, EnergyMap, QuadraticForm, ResistiveMap, ScalarLocal, DEFAULT_POLY_DEGREE,
};
pub use mlp::{Mlp, MlpEval, ScalarMlpSecondOrder};
pub use params::{positive, positive_deriv, positive_raw, ParamSlice, ParamVector};

use crate::error::{Error, Result};

/// Which port variable a resistive map reads.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Causality {
    /// `f = R(e)`
    #[default]
    Admittance,
    /// `e = R(f)`
    Impedance,
}

/// Time (or state) dependent value imposed by a source.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Signal {
    Constant { value: f64 },
    Step { time: f64, before: f64, after: f64 },
    Sine { amplitude: f64, frequency: f64, phase: f64 },
    /// `sign * gain . y`, where `y` is the network's observed vector. Every
    /// observed variable it reads must be available from store states alone.
    Feedback { gain: Vec<f64>, sign: f64 },
    /// Component `index` of the externally supplied input vector.
    External { index: usize },
}

impl Signal {
    /// Value of a signal that depends on time only.
    pub fn at(&self, t: f64) -> Option<f64> {
        match *self {
            Signal::Constant { value } => Some(value),
            Signal::Step { time, before, after } => Some(if t < time { before } else { after }),
            Signal::Sine { amplitude, frequency, phase } => {
                Some(amplitude * (std::f64::consts::TAU * frequency * t + phase).sin())
            }
            Signal::Feedback { .. } | Signal::External { .. } => None,
        }
    }
}

/// Constitutive variant of a construct.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "kebab-case")]
pub enum ConstructKind {
    FlowStore {
        energy: EnergyMap,
        #[serde(default = "one")]
        dim: usize,
    },
    EffortStore {
        energy: EnergyMap,
        #[serde(default = "one")]
        dim: usize,
    },
    Resistive {
        map: ResistiveMap,
        #[serde(default)]
        causality: Causality,
    },
    /// `e1 = n e2`, `f2 = n f1`; one unconstrained parameter `n`.
    Transformer,
    /// `e1 = r f2`, `e2 = r f1`; one unconstrained parameter `r`.
    Gyrator,
    /// Learned explicit solution of an implicit multi-port relation: reads
    /// the efforts of all its ports and returns their flows, `f = net(e)`.
    SolvedMap { net: Mlp },
    FlowSource { signal: Signal },
    EffortSource { signal: Signal },
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Construct {
    pub id: String,
    #[serde(flatten)]
    pub kind: ConstructKind,
}

/// Orientation of a construct port relative to the junction it attaches to:
/// `Absorbing` ports take power out of the junction, `Delivering` ones push
/// power into it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PortOrientation {
    Absorbing,
    Delivering,
}

impl PortOrientation {
    /// Junction sign a consistently oriented attachment carries.
    pub fn junction_sign(self) -> f64 {
        match self {
            PortOrientation::Absorbing => -1.0,
            PortOrientation::Delivering => 1.0,
        }
    }
}

impl Construct {
    pub fn new(id: impl Into<String>, kind: ConstructKind) -> Self {
        Self { id: id.into(), kind }
    }

    pub fn port_count(&self) -> usize {
        match &self.kind {
            ConstructKind::Transformer | ConstructKind::Gyrator => 2,
            ConstructKind::SolvedMap { net } => net.input,
            _ => 1,
        }
    }

    /// Number of state slots the construct owns.
    pub fn state_dim(&self) -> usize {
        match &self.kind {
            ConstructKind::FlowStore { dim, .. } | ConstructKind::EffortStore { dim, .. } => *dim,
            _ => 0,
        }
    }

    pub fn param_count(&self) -> usize {
        match &self.kind {
            ConstructKind::FlowStore { energy, .. } | ConstructKind::EffortStore { energy, .. } => {
                energy.param_count()
            }
            ConstructKind::Resistive { map, .. } => map.param_count(),
            ConstructKind::Transformer | ConstructKind::Gyrator => 1,
            ConstructKind::SolvedMap { net } => net.param_count(),
            ConstructKind::FlowSource { .. } | ConstructKind::EffortSource { .. } => 0,
        }
    }

    pub fn is_store(&self) -> bool {
        self.state_dim() > 0
    }

    pub fn is_source(&self) -> bool {
        matches!(
            self.kind,
            ConstructKind::FlowSource { .. } | ConstructKind::EffortSource { .. }
        )
    }

    pub fn is_resistive(&self) -> bool {
        matches!(self.kind, ConstructKind::Resistive { .. })
    }

    pub fn orientation(&self, port: usize) -> PortOrientation {
        match &self.kind {
            ConstructKind::FlowSource { .. }
            | ConstructKind::EffortSource { .. }
            | ConstructKind::SolvedMap { .. } => PortOrientation::Delivering,
            ConstructKind::Transformer | ConstructKind::Gyrator if port == 1 => {
                PortOrientation::Delivering
            }
            _ => PortOrientation::Absorbing,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::Structure("construct id must not be empty".into()));
        }
        match &self.kind {
            ConstructKind::FlowStore { energy, dim } | ConstructKind::EffortStore { energy, dim } => {
                if *dim == 0 {
                    return Err(Error::Structure(format!("store `{}` has zero state dimension", self.id)));
                }
                energy.validate(*dim)
            }
            ConstructKind::Resistive { map, causality } => {
                map.validate()?;
                if map.modulator().is_some() && *causality != Causality::Admittance {
                    return Err(Error::Structure(format!(
                        "modulated resistive `{}` must use admittance causality",
                        self.id
                    )));
                }
                Ok(())
            }
            ConstructKind::SolvedMap { net } => {
                net.validate()?;
                if net.input != net.output {
                    return Err(Error::dim(format!("solved map `{}` outputs", self.id), net.input, net.output));
                }
                Ok(())
            }
            ConstructKind::FlowSource { signal } | ConstructKind::EffortSource { signal } => {
                if let Signal::Feedback { sign, .. } = signal {
                    if !sign.is_finite() {
                        return Err(Error::Structure(format!("source `{}` has non-finite sign", self.id)));
                    }
                }
                Ok(())
            }
            ConstructKind::Transformer | ConstructKind::Gyrator => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sources_own_no_parameters() {
        let s = Construct::new("F", ConstructKind::FlowSource { signal: Signal::Constant { value: 1.0 } });
        assert_eq!(s.param_count(), 0);
        assert_eq!(s.state_dim(), 0);
        assert_eq!(s.orientation(0), PortOrientation::Delivering);
    }

    #[test]
    fn store_owns_one_slot_per_dimension() {
        let c = Construct::new(
            "m",
            ConstructKind::FlowStore {
                energy: EnergyMap::Quadratic { form: QuadraticForm::Inertia },
                dim: 2,
            },
        );
        assert_eq!(c.state_dim(), 2);
        assert_eq!(c.param_count(), 1);
    }

    #[test]
    fn step_signal_switches_at_its_time() {
        let s = Signal::Step { time: 1.0, before: 0.0, after: 2.0 };
        assert_eq!(s.at(0.999), Some(0.0));
        assert_eq!(s.at(1.0), Some(2.0));
        assert_eq!(Signal::External { index: 0 }.at(0.0), None);
    }
}
