//! Construct networks joined by junctions, and their reduction to explicit
//! ODEs.
//!
//! A junction is either [`JunctionKind::CommonEffort`] (shared effort, signed
//! flows sum to zero) or [`JunctionKind::CommonFlow`] (shared flow, signed
//! efforts sum to zero). A port's sign is `+1` when it delivers power into the
//! junction and `-1` when it takes power out. Junctions are linked to each
//! other by bonds; a bond carries one effort and one flow and appears in the
//! port lists of exactly two junctions. Bond flows are the "links" penalized
//! by the sparsity regularizer.

mod assemble;
mod builders;
mod system;

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::constructs::{Construct, ConstructKind, ParamVector, Signal};
use crate::error::{Error, Result};

pub use assemble::{assemble_ode, check_dirac, AssembledSystem, PortValues};
pub use builders::{build_layered_network, layer_id, msd_network, rlc_network, LayeredSpec, MsdSpec, RlcSpec};
pub use system::{link_flows, Aux, OdeSystem};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JunctionKind {
    CommonEffort,
    CommonFlow,
}

/// One entry of a junction's port list: either a construct port or a bond.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JunctionPort {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub construct: Option<String>,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub port: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bond: Option<String>,
    pub sign: f64,
}

fn is_zero(v: &usize) -> bool {
    *v == 0
}

impl JunctionPort {
    pub fn construct(id: impl Into<String>, port: usize, sign: f64) -> Self {
        Self {
            construct: Some(id.into()),
            port,
            bond: None,
            sign,
        }
    }

    pub fn bond(id: impl Into<String>, sign: f64) -> Self {
        Self {
            construct: None,
            port: 0,
            bond: Some(id.into()),
            sign,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Junction {
    pub id: String,
    pub kind: JunctionKind,
    pub ports: Vec<JunctionPort>,
}

impl Junction {
    pub fn new(id: impl Into<String>, kind: JunctionKind, ports: Vec<JunctionPort>) -> Self {
        Self {
            id: id.into(),
            kind,
            ports,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Quantity {
    State,
    Effort,
    Flow,
}

/// A measured network variable; the observed list defines the output vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observed {
    pub quantity: Quantity,
    pub construct: String,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub port: usize,
}

impl Observed {
    pub fn new(quantity: Quantity, construct: impl Into<String>) -> Self {
        Self {
            quantity,
            construct: construct.into(),
            port: 0,
        }
    }
}

/// A construct together with its stored parameter values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Element {
    #[serde(flatten)]
    pub construct: Construct,
    /// Stored (unconstrained) parameters; empty means "initialize".
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub params: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Network {
    #[serde(default)]
    pub elements: Vec<Element>,
    #[serde(default)]
    pub junctions: Vec<Junction>,
    #[serde(default)]
    pub bonds: Vec<String>,
    #[serde(default)]
    pub observed: Vec<Observed>,
}

impl Network {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, id: &str, kind: ConstructKind, params: Vec<f64>) -> &mut Self {
        self.elements.push(Element {
            construct: Construct::new(id, kind),
            params,
        });
        self
    }

    pub fn junction(&mut self, id: &str, kind: JunctionKind, ports: Vec<JunctionPort>) -> &mut Self {
        self.junctions.push(Junction::new(id, kind, ports));
        self
    }

    pub fn bond(&mut self, id: &str) -> &mut Self {
        self.bonds.push(id.to_string());
        self
    }

    pub fn observe(&mut self, quantity: Quantity, construct: &str) -> &mut Self {
        self.observed.push(Observed::new(quantity, construct));
        self
    }

    pub fn element(&self, id: &str) -> Option<&Element> {
        self.elements.iter().find(|e| e.construct.id == id)
    }

    pub fn element_mut(&mut self, id: &str) -> Option<&mut Element> {
        self.elements.iter_mut().find(|e| e.construct.id == id)
    }

    /// Element indices in canonical (lexicographic id) order.
    pub fn canonical_order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.elements.len()).collect();
        idx.sort_by(|&a, &b| self.elements[a].construct.id.cmp(&self.elements[b].construct.id));
        idx
    }

    /// Ids of the source constructs (the network boundary).
    pub fn boundary(&self) -> Vec<&str> {
        self.canonical_order()
            .into_iter()
            .map(|i| &self.elements[i].construct)
            .filter(|c| c.is_source())
            .map(|c| c.id.as_str())
            .collect()
    }

    /// Number of external inputs referenced by source signals.
    pub fn input_dim(&self) -> usize {
        self.elements
            .iter()
            .filter_map(|e| match &e.construct.kind {
                ConstructKind::FlowSource { signal: Signal::External { index } }
                | ConstructKind::EffortSource { signal: Signal::External { index } } => Some(index + 1),
                _ => None,
            })
            .max()
            .unwrap_or(0)
    }

    /// Parameter vector in canonical order, one slice per element that owns
    /// parameters.
    pub fn param_vector(&self) -> Result<ParamVector> {
        let mut pv = ParamVector::new();
        for i in self.canonical_order() {
            let el = &self.elements[i];
            let want = el.construct.param_count();
            if want == 0 {
                continue;
            }
            if el.params.len() != want {
                return Err(Error::dim(format!("parameters of `{}`", el.construct.id), want, el.params.len()));
            }
            pv.push(el.construct.id.clone(), &el.params);
        }
        Ok(pv)
    }

    /// Writes a parameter vector back into the elements.
    pub fn set_params(&mut self, w: &[f64]) -> Result<()> {
        let total: usize = self.elements.iter().map(|e| e.construct.param_count()).sum();
        if w.len() != total {
            return Err(Error::dim("network parameters", total, w.len()));
        }
        let mut cursor = 0;
        for i in self.canonical_order() {
            let n = self.elements[i].construct.param_count();
            if n > 0 {
                self.elements[i].params = w[cursor..cursor + n].to_vec();
                cursor += n;
            }
        }
        Ok(())
    }

    /// Fills every element whose parameters are missing: linear maps and
    /// quadratic energies get effective coefficient 1, neural maps a random
    /// draw, two-ports a unit ratio.
    pub fn init_missing_params<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for i in self.canonical_order() {
            let el = &mut self.elements[i];
            if el.params.len() == el.construct.param_count() {
                continue;
            }
            el.params = match &el.construct.kind {
                ConstructKind::FlowStore { energy, .. } | ConstructKind::EffortStore { energy, .. } => {
                    energy.init_params(1.0, rng)
                }
                ConstructKind::Resistive { map, .. } => map.init_params(1.0, rng),
                ConstructKind::SolvedMap { net } => net.init_params(rng),
                ConstructKind::Transformer | ConstructKind::Gyrator => vec![1.0],
                ConstructKind::FlowSource { .. } | ConstructKind::EffortSource { .. } => Vec::new(),
            };
        }
    }

    /// Structural checks: unique ids, every port attached exactly once, every
    /// bond used by exactly two junctions, observed variables exist and the
    /// whole graph is connected.
    pub fn validate(&self) -> Result<()> {
        let mut ids = BTreeSet::new();
        for el in &self.elements {
            el.construct.validate()?;
            if let ConstructKind::FlowStore { dim, .. } | ConstructKind::EffortStore { dim, .. } = el.construct.kind {
                if dim != 1 {
                    return Err(Error::Structure(format!(
                        "store `{}`: network ports are scalar, state dimension must be 1",
                        el.construct.id
                    )));
                }
            }
            if !ids.insert(el.construct.id.as_str()) {
                return Err(Error::Structure(format!("duplicate construct id `{}`", el.construct.id)));
            }
        }
        let mut bond_ids = BTreeSet::new();
        for b in &self.bonds {
            if ids.contains(b.as_str()) || !bond_ids.insert(b.as_str()) {
                return Err(Error::Structure(format!("duplicate bond id `{b}`")));
            }
        }
        let mut junction_ids = BTreeSet::new();
        for j in &self.junctions {
            if !junction_ids.insert(j.id.as_str()) {
                return Err(Error::Structure(format!("duplicate junction id `{}`", j.id)));
            }
        }

        let mut port_owner: BTreeMap<(&str, usize), &str> = BTreeMap::new();
        let mut bond_uses: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for j in &self.junctions {
            if j.ports.is_empty() {
                return Err(Error::Structure(format!("junction `{}` has no ports", j.id)));
            }
            for p in &j.ports {
                if !(p.sign == 1.0 || p.sign == -1.0) {
                    return Err(Error::Structure(format!("junction `{}`: port sign must be +1 or -1", j.id)));
                }
                match (&p.construct, &p.bond) {
                    (Some(c), None) => {
                        let el = self.element(c).ok_or_else(|| {
                            Error::Structure(format!("junction `{}` references unknown construct `{c}`", j.id))
                        })?;
                        if p.port >= el.construct.port_count() {
                            return Err(Error::Structure(format!(
                                "junction `{}` references port {} of `{c}`, which has {} port(s)",
                                j.id,
                                p.port,
                                el.construct.port_count()
                            )));
                        }
                        if let Some(prev) = port_owner.insert((c.as_str(), p.port), j.id.as_str()) {
                            return Err(Error::Structure(format!(
                                "port {} of `{c}` attached to both `{prev}` and `{}`",
                                p.port, j.id
                            )));
                        }
                    }
                    (None, Some(b)) => {
                        if !bond_ids.contains(b.as_str()) {
                            return Err(Error::Structure(format!("junction `{}` references unknown bond `{b}`", j.id)));
                        }
                        bond_uses.entry(b.as_str()).or_default().push(j.id.as_str());
                    }
                    _ => {
                        return Err(Error::Structure(format!(
                            "junction `{}`: each port entry names exactly one construct or bond",
                            j.id
                        )))
                    }
                }
            }
        }
        for el in &self.elements {
            for port in 0..el.construct.port_count() {
                if !port_owner.contains_key(&(el.construct.id.as_str(), port)) {
                    return Err(Error::Structure(format!(
                        "port {port} of `{}` is not attached to any junction",
                        el.construct.id
                    )));
                }
            }
        }
        for b in &self.bonds {
            let uses = bond_uses.get(b.as_str()).map(Vec::len).unwrap_or(0);
            if uses != 2 {
                return Err(Error::Structure(format!("bond `{b}` must join exactly two junctions, found {uses}")));
            }
        }
        for o in &self.observed {
            let el = self
                .element(&o.construct)
                .ok_or_else(|| Error::Structure(format!("observed construct `{}` does not exist", o.construct)))?;
            if o.quantity == Quantity::State && !el.construct.is_store() {
                return Err(Error::Structure(format!("observed state of `{}`, which stores nothing", o.construct)));
            }
            if o.port >= el.construct.port_count() {
                return Err(Error::Structure(format!("observed port {} of `{}` does not exist", o.port, o.construct)));
            }
        }
        for el in &self.elements {
            if let ConstructKind::Resistive { map, .. } = &el.construct.kind {
                if let Some(m) = map.modulator() {
                    let ok = self.element(m).map(|e| e.construct.is_store()).unwrap_or(false);
                    if !ok {
                        return Err(Error::Structure(format!(
                            "resistive `{}` is modulated by `{m}`, which is not a store",
                            el.construct.id
                        )));
                    }
                }
            }
            if let ConstructKind::FlowSource { signal: Signal::Feedback { gain, .. } }
            | ConstructKind::EffortSource { signal: Signal::Feedback { gain, .. } } = &el.construct.kind
            {
                if gain.len() != self.observed.len() {
                    return Err(Error::dim(
                        format!("feedback gain of `{}`", el.construct.id),
                        self.observed.len(),
                        gain.len(),
                    ));
                }
            }
        }
        self.check_connected()
    }

    fn check_connected(&self) -> Result<()> {
        if self.junctions.is_empty() {
            return Err(Error::Structure("network has no junctions".into()));
        }
        // union-find over junctions; constructs and bonds glue them
        let mut parent: Vec<usize> = (0..self.junctions.len()).collect();
        fn find(p: &mut [usize], mut i: usize) -> usize {
            while p[i] != i {
                p[i] = p[p[i]];
                i = p[i];
            }
            i
        }
        let mut first_seen: BTreeMap<&str, usize> = BTreeMap::new();
        for (ji, j) in self.junctions.iter().enumerate() {
            for p in &j.ports {
                let key = p.construct.as_deref().or(p.bond.as_deref()).unwrap_or_default();
                match first_seen.get(key) {
                    Some(&other) => {
                        let (a, b) = (find(&mut parent, ji), find(&mut parent, other));
                        parent[a] = b;
                    }
                    None => {
                        first_seen.insert(key, ji);
                    }
                }
            }
        }
        let root = find(&mut parent, 0);
        for ji in 1..self.junctions.len() {
            if find(&mut parent, ji) != root {
                return Err(Error::Structure(format!(
                    "network is not connected: junction `{}` is unreachable from `{}`",
                    self.junctions[ji].id, self.junctions[0].id
                )));
            }
        }
        Ok(())
    }
}
