use serde::{Deserialize, Serialize};

use super::{JunctionKind, JunctionPort, Network, Observed, Quantity};
use crate::constructs::{positive_raw, Causality, ConstructKind, EnergyMap, QuadraticForm, ResistiveMap, Signal};
use crate::error::{Error, Result};

fn inertia() -> ConstructKind {
    ConstructKind::FlowStore {
        energy: EnergyMap::Quadratic { form: QuadraticForm::Inertia },
        dim: 1,
    }
}

fn spring() -> ConstructKind {
    ConstructKind::EffortStore {
        energy: EnergyMap::Quadratic { form: QuadraticForm::Stiffness },
        dim: 1,
    }
}

fn damper(causality: Causality) -> ConstructKind {
    ConstructKind::Resistive {
        map: ResistiveMap::Linear,
        causality,
    }
}

/// Mass-spring-damper driven by a force source. Efforts are velocities,
/// flows are forces; state order is `(q, p)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MsdSpec {
    pub m: f64,
    pub k: f64,
    pub d: f64,
    pub force: Signal,
}

impl Default for MsdSpec {
    fn default() -> Self {
        Self {
            m: 1.0,
            k: 1.0,
            d: 1.0,
            force: Signal::Constant { value: 0.0 },
        }
    }
}

pub fn msd_network(spec: &MsdSpec) -> Network {
    let mut net = Network::new();
    net.add("F", ConstructKind::FlowSource { signal: spec.force.clone() }, vec![])
        .add("d", damper(Causality::Admittance), vec![positive_raw(spec.d)])
        .add("k", spring(), vec![positive_raw(spec.k)])
        .add("m", inertia(), vec![positive_raw(spec.m)])
        .junction(
            "J",
            JunctionKind::CommonEffort,
            vec![
                JunctionPort::construct("m", 0, -1.0),
                JunctionPort::construct("k", 0, -1.0),
                JunctionPort::construct("d", 0, -1.0),
                JunctionPort::construct("F", 0, 1.0),
            ],
        )
        .observe(Quantity::State, "k")
        .observe(Quantity::Effort, "m");
    net
}

/// Series RLC loop, optionally driven by a voltage source. Efforts are
/// voltages, flows currents; state order is `(q, phi)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RlcSpec {
    pub r: f64,
    pub l: f64,
    pub c: f64,
    pub voltage: Option<Signal>,
}

impl Default for RlcSpec {
    fn default() -> Self {
        Self {
            r: 1.0,
            l: 1.0,
            c: 1.0,
            voltage: None,
        }
    }
}

pub fn rlc_network(spec: &RlcSpec) -> Network {
    let mut net = Network::new();
    // capacitor: dq/dt = i, v = q / C; inductor: dphi/dt = v, i = phi / L
    net.add("C", inertia(), vec![positive_raw(spec.c)])
        .add("L", inertia_effort(), vec![positive_raw(spec.l)])
        .add("R", damper(Causality::Impedance), vec![positive_raw(spec.r)]);
    let mut ports = vec![
        JunctionPort::construct("C", 0, -1.0),
        JunctionPort::construct("L", 0, -1.0),
        JunctionPort::construct("R", 0, -1.0),
    ];
    if let Some(v) = &spec.voltage {
        net.add("V", ConstructKind::EffortSource { signal: v.clone() }, vec![]);
        ports.push(JunctionPort::construct("V", 0, 1.0));
    }
    net.junction("loop", JunctionKind::CommonFlow, ports)
        .observe(Quantity::State, "C")
        .observe(Quantity::Flow, "L");
    net
}

fn inertia_effort() -> ConstructKind {
    ConstructKind::EffortStore {
        energy: EnergyMap::Quadratic { form: QuadraticForm::Inertia },
        dim: 1,
    }
}

/// Chain of basic layers. Each layer is a spring `k1` parallel to a damper
/// `d1`, in series with a mass `m2` that is grounded through a spring `k2`
/// and a damper `d2`. Layer 1 is driven by a velocity source.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayeredSpec {
    pub layers: usize,
    pub m2: f64,
    pub k1: f64,
    pub d1: f64,
    pub k2: f64,
    pub d2: f64,
    pub source: Signal,
    /// Defaults to the velocity of every mass.
    #[serde(default)]
    pub observed: Vec<Observed>,
}

impl Default for LayeredSpec {
    fn default() -> Self {
        Self {
            layers: 1,
            m2: 1.0,
            k1: 1.0,
            d1: 0.5,
            k2: 1.0,
            d2: 0.5,
            source: Signal::Constant { value: 0.0 },
            observed: Vec::new(),
        }
    }
}

/// Id of construct `name` (`d1`, `k1`, `m2`, `k2`, `d2`) in layer `i` (1-based).
pub fn layer_id(i: usize, name: &str) -> String {
    format!("L{i:02}.{name}")
}

pub fn build_layered_network(spec: &LayeredSpec) -> Result<Network> {
    if spec.layers == 0 {
        return Err(Error::Structure("a layered network needs at least one layer".into()));
    }
    let mut net = Network::new();
    net.add("source", ConstructKind::EffortSource { signal: spec.source.clone() }, vec![]);
    for i in 1..=spec.layers {
        let id = |n: &str| layer_id(i, n);
        let (c, p, nj) = (format!("C{i:02}"), format!("P{i:02}"), format!("N{i:02}"));
        let (b_in, b_p, b_n) = (format!("b{i:02}.in"), format!("b{i:02}.p"), format!("b{i:02}.n"));
        net.add(&id("k1"), spring(), vec![positive_raw(spec.k1)])
            .add(&id("d1"), damper(Causality::Admittance), vec![positive_raw(spec.d1)])
            .add(&id("m2"), inertia(), vec![positive_raw(spec.m2)])
            .add(&id("k2"), spring(), vec![positive_raw(spec.k2)])
            .add(&id("d2"), damper(Causality::Admittance), vec![positive_raw(spec.d2)]);
        net.bond(&b_p).bond(&b_n);
        let upstream = if i == 1 {
            JunctionPort::construct("source", 0, 1.0)
        } else {
            net.bond(&b_in);
            JunctionPort::bond(&b_in, 1.0)
        };
        // shared force through the series element; velocities add up
        net.junction(
            &c,
            JunctionKind::CommonFlow,
            vec![upstream, JunctionPort::bond(&b_p, -1.0), JunctionPort::bond(&b_n, -1.0)],
        );
        net.junction(
            &p,
            JunctionKind::CommonEffort,
            vec![
                JunctionPort::bond(&b_p, 1.0),
                JunctionPort::construct(id("k1"), 0, -1.0),
                JunctionPort::construct(id("d1"), 0, -1.0),
            ],
        );
        let mut node = vec![
            JunctionPort::bond(&b_n, 1.0),
            JunctionPort::construct(id("m2"), 0, -1.0),
            JunctionPort::construct(id("k2"), 0, -1.0),
            JunctionPort::construct(id("d2"), 0, -1.0),
        ];
        if i < spec.layers {
            node.push(JunctionPort::bond(format!("b{:02}.in", i + 1), -1.0));
        }
        net.junction(&nj, JunctionKind::CommonEffort, node);
    }
    if spec.observed.is_empty() {
        for i in 1..=spec.layers {
            net.observe(Quantity::Effort, &layer_id(i, "m2"));
        }
    } else {
        net.observed = spec.observed.clone();
    }
    Ok(net)
}
