//! Causal reduction of a network to an evaluation schedule, and its
//! forward-mode evaluation.
//!
//! Every edge (construct port or bond) owns an effort and a flow slot.
//! Junctions identify slots (shared effort or shared flow) and contribute one
//! balance equation each. Constructs contribute their constitutive relations.
//! Propagation starts from store outputs and sources and applies any relation
//! with exactly one unknown until nothing changes. Leftover unknowns mean an
//! implicit algebraic loop.

use nalgebra::DMatrix;

use super::system::{Aux, OdeSystem};
use super::{JunctionKind, Network, Quantity};
use crate::constructs::{
    positive, positive_deriv, Causality, ConstructKind, EnergyMap, ParamVector, QuadraticForm,
    Signal,
};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
enum Scale {
    Mul,
    Div,
}

#[derive(Clone, Debug)]
enum Op {
    Store { elem: usize, state: usize, out: usize },
    Source { elem: usize, out: usize },
    Resistive { elem: usize, input: usize, out: usize, modulator: Option<usize> },
    TwoPort { elem: usize, input: usize, out: usize, scale: Scale },
    Solved { elem: usize, inputs: Vec<usize>, outputs: Vec<usize> },
    Balance { out: usize, out_sign: f64, terms: Vec<(usize, f64)> },
}

#[derive(Clone, Debug)]
enum Relation {
    Store { elem: usize },
    Source { elem: usize, deps: Vec<usize> },
    Resistive { elem: usize, input: usize, out: usize },
    /// `y = c x` with `c` the element's parameter.
    Linear { elem: usize, x: usize, y: usize },
    Solved { elem: usize },
    Balance { junction: usize },
}

#[derive(Clone, Copy, Debug)]
enum OutSrc {
    State(usize),
    Var(usize),
}

/// Balanced variable of each edge of a junction, with its sign.
#[derive(Clone, Debug)]
struct JunctionInfo {
    terms: Vec<(usize, f64)>,
}

/// Port variables of every element at one evaluation point.
#[derive(Clone, Debug, PartialEq)]
pub struct PortValues {
    /// `(id, [(e, f) per port])`, canonical order
    pub elements: Vec<(String, Vec<(f64, f64)>)>,
    /// Flow on each link, in link order.
    pub links: Vec<f64>,
}

impl PortValues {
    pub fn port(&self, id: &str, port: usize) -> Option<(f64, f64)> {
        self.elements.iter().find(|(n, _)| n == id).map(|(_, p)| p[port])
    }
}

/// A network reduced to an explicit ODE.
#[derive(Clone, Debug)]
pub struct AssembledSystem {
    net: Network,
    n: usize,
    m: usize,
    inputs: usize,
    nvars: usize,
    schedule: Vec<Op>,
    /// state index of each element (stores only)
    state_of: Vec<Option<usize>>,
    /// parameter offset of each element
    param_of: Vec<usize>,
    /// element index of each state slot
    state_elems: Vec<usize>,
    /// var giving each state derivative
    rhs_vars: Vec<usize>,
    outputs: Vec<OutSrc>,
    port_vars: Vec<Vec<(usize, usize)>>,
    links: Vec<(String, usize)>,
    dissipators: Vec<usize>,
    junctions: Vec<(String, JunctionInfo)>,
    params: ParamVector,
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, mut i: usize) -> usize {
        while self.0[i] != i {
            self.0[i] = self.0[self.0[i]];
            i = self.0[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Reduces a loop-free network to an explicit ODE.
pub fn assemble_ode(net: &Network) -> Result<AssembledSystem> {
    net.validate()?;
    let mut net = net.clone();
    // canonical element order makes state and parameter layout independent
    // of declaration order
    net.elements.sort_by(|a, b| a.construct.id.cmp(&b.construct.id));
    let mut bonds = net.bonds.clone();
    bonds.sort();

    let n_el = net.elements.len();
    let mut edge_of_port: Vec<Vec<usize>> = Vec::with_capacity(n_el);
    let mut n_edges = 0;
    for el in &net.elements {
        let k = el.construct.port_count();
        edge_of_port.push((n_edges..n_edges + k).collect());
        n_edges += k;
    }
    let bond_edge = |name: &str| n_edges + bonds.iter().position(|b| b == name).expect("validated");
    let total_edges = n_edges + bonds.len();
    let elem_index = |id: &str| net.elements.iter().position(|e| e.construct.id == id).expect("validated");

    // slot 2i is the effort of edge i, slot 2i+1 its flow
    let mut uf = UnionFind((0..2 * total_edges).collect());
    let mut raw_junctions = Vec::new();
    for j in &net.junctions {
        let mut edges = Vec::new();
        for p in &j.ports {
            let edge = match (&p.construct, &p.bond) {
                (Some(c), _) => edge_of_port[elem_index(c)][p.port],
                (_, Some(b)) => bond_edge(b),
                _ => unreachable!("validated"),
            };
            edges.push((edge, p.sign));
        }
        let shared_off = match j.kind {
            JunctionKind::CommonEffort => 0,
            JunctionKind::CommonFlow => 1,
        };
        for w in edges.windows(2) {
            uf.union(2 * w[0].0 + shared_off, 2 * w[1].0 + shared_off);
        }
        raw_junctions.push((j.id.clone(), shared_off, edges));
    }
    let mut var_of_slot = vec![usize::MAX; 2 * total_edges];
    let mut nvars = 0;
    for s in 0..2 * total_edges {
        let r = uf.find(s);
        if var_of_slot[r] == usize::MAX {
            var_of_slot[r] = nvars;
            nvars += 1;
        }
        var_of_slot[s] = var_of_slot[r];
    }
    let ev = |edge: usize| var_of_slot[2 * edge];
    let fv = |edge: usize| var_of_slot[2 * edge + 1];

    let junctions: Vec<(String, JunctionInfo)> = raw_junctions
        .into_iter()
        .map(|(id, off, edges)| {
            let terms = edges
                .iter()
                .map(|&(e, s)| (var_of_slot[2 * e + 1 - off], s))
                .collect();
            (id, JunctionInfo { terms })
        })
        .collect();
    for (id, info) in &junctions {
        let mut seen: Vec<usize> = info.terms.iter().map(|t| t.0).collect();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Structure(format!(
                "junction `{id}` balances a variable it also shares; check for parallel bonds"
            )));
        }
    }

    let port_vars: Vec<Vec<(usize, usize)>> = edge_of_port
        .iter()
        .map(|ports| ports.iter().map(|&e| (ev(e), fv(e))).collect())
        .collect();

    // layout
    let mut state_of = vec![None; n_el];
    let mut state_elems = Vec::new();
    let mut param_of = vec![0; n_el];
    let mut m = 0;
    for (i, el) in net.elements.iter().enumerate() {
        if el.construct.is_store() {
            state_of[i] = Some(state_elems.len());
            state_elems.push(i);
        }
        param_of[i] = m;
        m += el.construct.param_count();
    }
    let n = state_elems.len();

    let obs_src: Vec<OutSrc> = net
        .observed
        .iter()
        .map(|o| {
            let i = elem_index(&o.construct);
            match o.quantity {
                Quantity::State => OutSrc::State(state_of[i].expect("validated")),
                Quantity::Effort => OutSrc::Var(port_vars[i][o.port].0),
                Quantity::Flow => OutSrc::Var(port_vars[i][o.port].1),
            }
        })
        .collect();

    // relations
    let mut relations = Vec::new();
    for (i, el) in net.elements.iter().enumerate() {
        let pv = &port_vars[i];
        match &el.construct.kind {
            ConstructKind::FlowStore { .. } | ConstructKind::EffortStore { .. } => {
                relations.push(Relation::Store { elem: i })
            }
            ConstructKind::FlowSource { signal } | ConstructKind::EffortSource { signal } => {
                let deps = match signal {
                    Signal::Feedback { gain, .. } => gain
                        .iter()
                        .zip(&obs_src)
                        .filter(|(g, _)| **g != 0.0)
                        .filter_map(|(_, s)| match s {
                            OutSrc::Var(v) => Some(*v),
                            OutSrc::State(_) => None,
                        })
                        .collect(),
                    _ => Vec::new(),
                };
                relations.push(Relation::Source { elem: i, deps });
            }
            ConstructKind::Resistive { causality, .. } => {
                let (e, f) = pv[0];
                let (input, out) = match causality {
                    Causality::Admittance => (e, f),
                    Causality::Impedance => (f, e),
                };
                relations.push(Relation::Resistive { elem: i, input, out });
            }
            ConstructKind::Transformer => {
                relations.push(Relation::Linear { elem: i, x: pv[1].0, y: pv[0].0 });
                relations.push(Relation::Linear { elem: i, x: pv[0].1, y: pv[1].1 });
            }
            ConstructKind::Gyrator => {
                relations.push(Relation::Linear { elem: i, x: pv[1].1, y: pv[0].0 });
                relations.push(Relation::Linear { elem: i, x: pv[0].1, y: pv[1].0 });
            }
            ConstructKind::SolvedMap { .. } => relations.push(Relation::Solved { elem: i }),
        }
    }
    for j in 0..junctions.len() {
        relations.push(Relation::Balance { junction: j });
    }

    let mut known = vec![false; nvars];
    let mut used = vec![false; relations.len()];
    let mut schedule = Vec::new();
    let id_of = |i: usize| net.elements[i].construct.id.clone();
    let conflict = |what: String| Err(Error::Structure(format!("over-determined network: {what}")));

    loop {
        let mut progress = false;
        for (ri, rel) in relations.iter().enumerate() {
            if used[ri] {
                continue;
            }
            match rel {
                Relation::Store { elem } => {
                    let (e, f) = port_vars[*elem][0];
                    let out = match net.elements[*elem].construct.kind {
                        ConstructKind::FlowStore { .. } => e,
                        _ => f,
                    };
                    if known[out] {
                        return conflict(format!("output of store `{}` is imposed twice", id_of(*elem)));
                    }
                    schedule.push(Op::Store { elem: *elem, state: state_of[*elem].unwrap(), out });
                    known[out] = true;
                }
                Relation::Source { elem, deps } => {
                    let (e, f) = port_vars[*elem][0];
                    let out = match net.elements[*elem].construct.kind {
                        ConstructKind::FlowSource { .. } => f,
                        _ => e,
                    };
                    if known[out] {
                        return conflict(format!("source `{}` imposes a variable fixed elsewhere", id_of(*elem)));
                    }
                    if !deps.iter().all(|&d| known[d]) {
                        continue;
                    }
                    schedule.push(Op::Source { elem: *elem, out });
                    known[out] = true;
                }
                Relation::Resistive { elem, input, out } => {
                    if known[*out] {
                        return conflict(format!(
                            "the output of resistive `{}` is imposed elsewhere; change its causality",
                            id_of(*elem)
                        ));
                    }
                    if !known[*input] {
                        continue;
                    }
                    let modulator = match &net.elements[*elem].construct.kind {
                        ConstructKind::Resistive { map, .. } => {
                            map.modulator().map(|id| state_of[elem_index(id)].expect("validated"))
                        }
                        _ => None,
                    };
                    schedule.push(Op::Resistive { elem: *elem, input: *input, out: *out, modulator });
                    known[*out] = true;
                }
                Relation::Linear { elem, x, y } => match (known[*x], known[*y]) {
                    (true, true) => {
                        return conflict(format!("both sides of two-port `{}` are imposed", id_of(*elem)))
                    }
                    (true, false) => {
                        schedule.push(Op::TwoPort { elem: *elem, input: *x, out: *y, scale: Scale::Mul });
                        known[*y] = true;
                    }
                    (false, true) => {
                        schedule.push(Op::TwoPort { elem: *elem, input: *y, out: *x, scale: Scale::Div });
                        known[*x] = true;
                    }
                    (false, false) => continue,
                },
                Relation::Solved { elem } => {
                    let pv = &port_vars[*elem];
                    if pv.iter().any(|p| known[p.1]) {
                        return conflict(format!("a flow of solved map `{}` is imposed elsewhere", id_of(*elem)));
                    }
                    if !pv.iter().all(|p| known[p.0]) {
                        continue;
                    }
                    schedule.push(Op::Solved {
                        elem: *elem,
                        inputs: pv.iter().map(|p| p.0).collect(),
                        outputs: pv.iter().map(|p| p.1).collect(),
                    });
                    pv.iter().for_each(|p| known[p.1] = true);
                }
                Relation::Balance { junction } => {
                    let info = &junctions[*junction].1;
                    let unknown: Vec<&(usize, f64)> = info.terms.iter().filter(|t| !known[t.0]).collect();
                    match unknown.len() {
                        0 => {
                            return conflict(format!(
                                "every port of junction `{}` has its balanced variable imposed",
                                junctions[*junction].0
                            ))
                        }
                        1 => {
                            let (out, out_sign) = *unknown[0];
                            let terms = info.terms.iter().filter(|t| t.0 != out).copied().collect();
                            schedule.push(Op::Balance { out, out_sign, terms });
                            known[out] = true;
                        }
                        _ => continue,
                    }
                }
            }
            used[ri] = true;
            progress = true;
        }
        if !progress {
            break;
        }
    }

    if used.iter().any(|u| !u) || known.iter().any(|k| !k) {
        let mut names: Vec<String> = Vec::new();
        for (ri, rel) in relations.iter().enumerate() {
            if used[ri] {
                continue;
            }
            let name = match rel {
                Relation::Store { elem }
                | Relation::Source { elem, .. }
                | Relation::Resistive { elem, .. }
                | Relation::Linear { elem, .. }
                | Relation::Solved { elem } => id_of(*elem),
                Relation::Balance { junction } => format!("junction {}", junctions[*junction].0),
            };
            if !names.contains(&name) {
                names.push(name);
            }
        }
        return Err(Error::AlgebraicLoop(names));
    }

    let rhs_vars = state_elems
        .iter()
        .map(|&i| {
            let (e, f) = port_vars[i][0];
            match net.elements[i].construct.kind {
                ConstructKind::FlowStore { .. } => f,
                _ => e,
            }
        })
        .collect();

    let links = bonds.iter().map(|b| (b.clone(), fv(bond_edge(b)))).collect();
    let dissipators = (0..n_el).filter(|&i| net.elements[i].construct.is_resistive()).collect();
    let params = net.param_vector().unwrap_or_default();
    let inputs = net.input_dim();

    Ok(AssembledSystem {
        net,
        n,
        m,
        inputs,
        nvars,
        schedule,
        state_of,
        param_of,
        state_elems,
        rhs_vars,
        outputs: obs_src,
        port_vars,
        links,
        dissipators,
        junctions,
        params,
    })
}

/// Variable values and, optionally, dense gradients over `[x, w]`.
struct Tape {
    width: usize,
    val: Vec<f64>,
    grad: Option<Vec<f64>>,
}

impl Tape {
    fn add_row(&mut self, dst: usize, src: usize, coef: f64) {
        if coef == 0.0 {
            return;
        }
        if let Some(g) = self.grad.as_mut() {
            let w = self.width;
            for c in 0..w {
                g[dst * w + c] += coef * g[src * w + c];
            }
        }
    }

    fn add_col(&mut self, dst: usize, col: usize, coef: f64) {
        if let Some(g) = self.grad.as_mut() {
            g[dst * self.width + col] += coef;
        }
    }

    fn row(&self, v: usize) -> &[f64] {
        let g = self.grad.as_ref().expect("gradients enabled");
        &g[v * self.width..(v + 1) * self.width]
    }
}

impl AssembledSystem {
    pub fn network(&self) -> &Network {
        &self.net
    }

    /// Parameter layout with the network's stored values.
    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn state_names(&self) -> Vec<String> {
        self.state_elems.iter().map(|&i| self.net.elements[i].construct.id.clone()).collect()
    }

    pub fn link_names(&self) -> Vec<String> {
        self.links.iter().map(|l| l.0.clone()).collect()
    }

    pub fn output_names(&self) -> Vec<String> {
        self.net
            .observed
            .iter()
            .map(|o| {
                let q = match o.quantity {
                    Quantity::State => "state",
                    Quantity::Effort => "effort",
                    Quantity::Flow => "flow",
                };
                format!("{q}:{}", o.construct)
            })
            .collect()
    }

    /// Ids of the dissipative elements in power-channel order.
    pub fn dissipator_names(&self) -> Vec<String> {
        self.dissipators.iter().map(|&i| self.net.elements[i].construct.id.clone()).collect()
    }

    pub fn state_index(&self, id: &str) -> Option<usize> {
        let i = self.net.elements.iter().position(|e| e.construct.id == id)?;
        self.state_of[i]
    }

    fn param_slice<'a>(&self, elem: usize, w: &'a [f64]) -> &'a [f64] {
        let off = self.param_of[elem];
        &w[off..off + self.net.elements[elem].construct.param_count()]
    }

    fn evaluate(&self, t: f64, x: &[f64], u: &[f64], w: &[f64], grads: bool) -> Tape {
        assert_eq!(x.len(), self.n, "state dimension");
        assert_eq!(w.len(), self.m, "parameter dimension");
        let width = self.n + self.m;
        let mut tape = Tape {
            width,
            val: vec![0.0; self.nvars],
            grad: grads.then(|| vec![0.0; self.nvars * width]),
        };
        let n = self.n;
        for op in &self.schedule {
            match op {
                Op::Store { elem, state, out } => {
                    let energy = match &self.net.elements[*elem].construct.kind {
                        ConstructKind::FlowStore { energy, .. } | ConstructKind::EffortStore { energy, .. } => energy,
                        _ => unreachable!(),
                    };
                    let ws = self.param_slice(*elem, w);
                    if grads {
                        let l = energy.local(x[*state], ws);
                        tape.val[*out] = l.value;
                        tape.add_col(*out, *state, l.d_input);
                        for (k, d) in l.d_params.iter().enumerate() {
                            tape.add_col(*out, n + self.param_of[*elem] + k, *d);
                        }
                    } else {
                        tape.val[*out] = store_value(energy, x[*state], ws);
                    }
                }
                Op::Source { elem, out } => {
                    let signal = match &self.net.elements[*elem].construct.kind {
                        ConstructKind::FlowSource { signal } | ConstructKind::EffortSource { signal } => signal,
                        _ => unreachable!(),
                    };
                    tape.val[*out] = match signal {
                        Signal::External { index } => u.get(*index).copied().unwrap_or(0.0),
                        Signal::Feedback { gain, sign } => {
                            let mut v = 0.0;
                            for (g, src) in gain.iter().zip(&self.outputs) {
                                if *g == 0.0 {
                                    continue;
                                }
                                match *src {
                                    OutSrc::State(s) => {
                                        v += g * x[s];
                                        tape.add_col(*out, s, sign * g);
                                    }
                                    OutSrc::Var(var) => {
                                        v += g * tape.val[var];
                                        tape.add_row(*out, var, sign * g);
                                    }
                                }
                            }
                            sign * v
                        }
                        s => s.at(t).expect("time signal"),
                    };
                }
                Op::Resistive { elem, input, out, modulator } => {
                    let map = match &self.net.elements[*elem].construct.kind {
                        ConstructKind::Resistive { map, .. } => map,
                        _ => unreachable!(),
                    };
                    let q = modulator.map(|s| x[s]).unwrap_or(0.0);
                    let l = map.local(tape.val[*input], q, self.param_slice(*elem, w));
                    tape.val[*out] = l.value;
                    if grads {
                        tape.add_row(*out, *input, l.d_input);
                        for (k, d) in l.d_params.iter().enumerate() {
                            tape.add_col(*out, n + self.param_of[*elem] + k, *d);
                        }
                        if let Some(s) = modulator {
                            tape.add_col(*out, *s, l.d_modulator);
                        }
                    }
                }
                Op::TwoPort { elem, input, out, scale } => {
                    let c = w[self.param_of[*elem]];
                    let a = tape.val[*input];
                    let col = n + self.param_of[*elem];
                    match scale {
                        Scale::Mul => {
                            tape.val[*out] = c * a;
                            tape.add_row(*out, *input, c);
                            tape.add_col(*out, col, a);
                        }
                        Scale::Div => {
                            tape.val[*out] = a / c;
                            tape.add_row(*out, *input, 1.0 / c);
                            tape.add_col(*out, col, -a / (c * c));
                        }
                    }
                }
                Op::Solved { elem, inputs, outputs } => {
                    let net = match &self.net.elements[*elem].construct.kind {
                        ConstructKind::SolvedMap { net } => net,
                        _ => unreachable!(),
                    };
                    let input: Vec<f64> = inputs.iter().map(|&v| tape.val[v]).collect();
                    let ws = self.param_slice(*elem, w);
                    if grads {
                        let e = net.eval_with_jacobians_unchecked(&input, ws);
                        let off = n + self.param_of[*elem];
                        for (i, &o) in outputs.iter().enumerate() {
                            tape.val[o] = e.output[i];
                            for (j, &iv) in inputs.iter().enumerate() {
                                tape.add_row(o, iv, e.d_input[(i, j)]);
                            }
                            for k in 0..ws.len() {
                                tape.add_col(o, off + k, e.d_params[(i, k)]);
                            }
                        }
                    } else {
                        let mut out = vec![0.0; outputs.len()];
                        net.eval_into(&input, ws, &mut out);
                        for (&o, v) in outputs.iter().zip(out) {
                            tape.val[o] = v;
                        }
                    }
                }
                Op::Balance { out, out_sign, terms } => {
                    let mut s = 0.0;
                    for &(v, sign) in terms {
                        s += sign * tape.val[v];
                        tape.add_row(*out, v, -sign / out_sign);
                    }
                    tape.val[*out] = -s / out_sign;
                }
            }
        }
        tape
    }

    fn copy_partials(&self, tape: &Tape, vars: impl Iterator<Item = usize>, dx: &mut DMatrix<f64>, dw: &mut DMatrix<f64>) {
        for (i, v) in vars.enumerate() {
            let row = tape.row(v);
            for c in 0..self.n {
                dx[(i, c)] = row[c];
            }
            for c in 0..self.m {
                dw[(i, c)] = row[self.n + c];
            }
        }
    }

    /// Effort and flow of every port.
    pub fn port_values(&self, t: f64, x: &[f64], u: &[f64], w: &[f64]) -> PortValues {
        let tape = self.evaluate(t, x, u, w, false);
        PortValues {
            elements: self
                .net
                .elements
                .iter()
                .zip(&self.port_vars)
                .map(|(el, pv)| {
                    (
                        el.construct.id.clone(),
                        pv.iter().map(|&(e, f)| (tape.val[e], tape.val[f])).collect(),
                    )
                })
                .collect(),
            links: self.links.iter().map(|l| tape.val[l.1]).collect(),
        }
    }

    /// Sum of the junction constraint residuals plus the magnitude of the
    /// net power delivered to all construct ports in their physical
    /// orientation.
    pub fn dirac_residual(&self, t: f64, x: &[f64], u: &[f64], w: &[f64]) -> f64 {
        let tape = self.evaluate(t, x, u, w, false);
        let mut residual = 0.0;
        for (_, info) in &self.junctions {
            let s: f64 = info.terms.iter().map(|&(v, sign)| sign * tape.val[v]).sum();
            residual += s.abs();
        }
        let mut power = 0.0;
        for (el, pv) in self.net.elements.iter().zip(&self.port_vars) {
            for (k, &(e, f)) in pv.iter().enumerate() {
                power += el.construct.orientation(k).junction_sign() * tape.val[e] * tape.val[f];
            }
        }
        residual + power.abs()
    }

    /// Total stored energy.
    pub fn total_energy(&self, x: &[f64], w: &[f64]) -> Result<f64> {
        let mut h = 0.0;
        for (s, &i) in self.state_elems.iter().enumerate() {
            if let ConstructKind::FlowStore { energy, .. } | ConstructKind::EffortStore { energy, .. } =
                &self.net.elements[i].construct.kind
            {
                h += energy.energy(&x[s..s + 1], self.param_slice(i, w))?;
            }
        }
        Ok(h)
    }

    /// Power delivered by each source, in canonical order.
    pub fn source_powers(&self, t: f64, x: &[f64], u: &[f64], w: &[f64]) -> Vec<f64> {
        let tape = self.evaluate(t, x, u, w, false);
        self.net
            .elements
            .iter()
            .zip(&self.port_vars)
            .filter(|(el, _)| el.construct.is_source())
            .map(|(_, pv)| tape.val[pv[0].0] * tape.val[pv[0].1])
            .collect()
    }
}

fn store_value(energy: &EnergyMap, x: f64, w: &[f64]) -> f64 {
    match energy {
        EnergyMap::Quadratic { form: QuadraticForm::Stiffness } => positive(w[0]) * x,
        EnergyMap::Quadratic { form: QuadraticForm::Inertia } => x / positive(w[0]),
        EnergyMap::Null => 0.0,
        other => other.local(x, w).value,
    }
}

impl OdeSystem for AssembledSystem {
    fn state_dim(&self) -> usize {
        self.n
    }

    fn param_dim(&self) -> usize {
        self.m
    }

    fn input_dim(&self) -> usize {
        self.inputs
    }

    fn rhs(&self, t: f64, x: &[f64], u: &[f64], w: &[f64], dx: &mut [f64]) {
        let tape = self.evaluate(t, x, u, w, false);
        for (d, &v) in dx.iter_mut().zip(&self.rhs_vars) {
            *d = tape.val[v];
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
        let tape = self.evaluate(t, x, u, w, true);
        for (d, &v) in dx.iter_mut().zip(&self.rhs_vars) {
            *d = tape.val[v];
        }
        self.copy_partials(&tape, self.rhs_vars.iter().copied(), dfdx, dfdw);
    }

    fn output_dim(&self) -> usize {
        self.outputs.len()
    }

    fn output(&self, t: f64, x: &[f64], u: &[f64], w: &[f64], y: &mut [f64]) {
        let needs_tape = self.outputs.iter().any(|o| matches!(o, OutSrc::Var(_)));
        let tape = needs_tape.then(|| self.evaluate(t, x, u, w, false));
        for (yi, o) in y.iter_mut().zip(&self.outputs) {
            *yi = match *o {
                OutSrc::State(s) => x[s],
                OutSrc::Var(v) => tape.as_ref().unwrap().val[v],
            };
        }
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
        let tape = self.evaluate(t, x, u, w, true);
        dydx.fill(0.0);
        dydw.fill(0.0);
        for (i, o) in self.outputs.iter().enumerate() {
            match *o {
                OutSrc::State(s) => {
                    y[i] = x[s];
                    dydx[(i, s)] = 1.0;
                }
                OutSrc::Var(v) => {
                    y[i] = tape.val[v];
                    let row = tape.row(v);
                    for c in 0..self.n {
                        dydx[(i, c)] = row[c];
                    }
                    for c in 0..self.m {
                        dydw[(i, c)] = row[self.n + c];
                    }
                }
            }
        }
    }

    fn aux_dim(&self, aux: Aux) -> usize {
        match aux {
            Aux::LinkFlows => self.links.len(),
            Aux::DissipatorPowers => self.dissipators.len(),
        }
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
        let tape = self.evaluate(t, x, u, w, partials.is_some());
        match aux {
            Aux::LinkFlows => {
                for (v, l) in values.iter_mut().zip(&self.links) {
                    *v = tape.val[l.1];
                }
                if let Some((dx, dw)) = partials {
                    self.copy_partials(&tape, self.links.iter().map(|l| l.1), dx, dw);
                }
            }
            Aux::DissipatorPowers => {
                for (v, &i) in values.iter_mut().zip(&self.dissipators) {
                    let (e, f) = self.port_vars[i][0];
                    *v = tape.val[e] * tape.val[f];
                }
                if let Some((dx, dw)) = partials {
                    for (r, &i) in self.dissipators.iter().enumerate() {
                        let (e, f) = self.port_vars[i][0];
                        let (ve, vf) = (tape.val[e], tape.val[f]);
                        let (ge, gf) = (tape.row(e), tape.row(f));
                        for c in 0..self.n {
                            dx[(r, c)] = vf * ge[c] + ve * gf[c];
                        }
                        for c in 0..self.m {
                            dw[(r, c)] = vf * ge[self.n + c] + ve * gf[self.n + c];
                        }
                    }
                }
            }
        }
    }

    /// Observed states are copied; stores observed only through the co-energy
    /// of a quadratic energy are inverted; every other store starts at rest.
    fn initial_state(&self, y0: &[f64], w: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)> {
        if y0.len() != self.outputs.len() {
            return Err(Error::dim("initial output", self.outputs.len(), y0.len()));
        }
        let mut x0 = vec![0.0; self.n];
        let mut s0 = DMatrix::zeros(self.n, self.m);
        let mut set = vec![false; self.n];
        for (k, o) in self.net.observed.iter().enumerate() {
            if o.quantity == Quantity::State {
                let s = self.state_index(&o.construct).expect("validated");
                x0[s] = y0[k];
                set[s] = true;
            }
        }
        for (k, o) in self.net.observed.iter().enumerate() {
            let Some(s) = self.state_index(&o.construct) else { continue };
            if set[s] {
                continue;
            }
            let elem = self.state_elems[s];
            let (energy, co_energy) = match &self.net.elements[elem].construct.kind {
                ConstructKind::FlowStore { energy, .. } => (energy, Quantity::Effort),
                ConstructKind::EffortStore { energy, .. } => (energy, Quantity::Flow),
                _ => unreachable!(),
            };
            if o.quantity != co_energy {
                continue;
            }
            let EnergyMap::Quadratic { form } = energy else { continue };
            let off = self.param_of[elem];
            let r = w[off];
            let c = positive(r);
            let y = y0[k];
            match form {
                QuadraticForm::Inertia => {
                    x0[s] = c * y;
                    s0[(s, off)] = positive_deriv(r) * y;
                }
                QuadraticForm::Stiffness => {
                    x0[s] = y / c;
                    s0[(s, off)] = -y * positive_deriv(r) / (c * c);
                }
            }
            set[s] = true;
        }
        Ok((x0, s0))
    }
}

/// Dirac-structure residual of a network at a state (sources at `t = 0`).
pub fn check_dirac(net: &Network, x: &[f64], u: &[f64], w: &[f64]) -> Result<f64> {
    let sys = assemble_ode(net)?;
    if x.len() != sys.n {
        return Err(Error::dim("state", sys.n, x.len()));
    }
    if w.len() != sys.m {
        return Err(Error::dim("parameters", sys.m, w.len()));
    }
    Ok(sys.dirac_residual(0.0, x, u, w))
}
