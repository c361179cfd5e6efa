//! Quantum walk search built from setup, update and checking hyperedges.
//!
//! An instance is a connected graph `G` with resistances normalized to
//! `Σ_e 1/r_e = 1/2`, marked sets `M_x`, a database `D_{v,x} ∈ 𝒮`, and three
//! kinds of routines: `S_v` computes `D_{v,x}`, `U_e` moves it along an edge,
//! and `C_{v,D}` checks whether `v ∈ M_x` when `D = D_{v,x}`.
//!
//! Two tiers share one code path. Size tables alone give the closed-form
//! witness sizes ([`BoundReport`]). When the instance also carries the
//! routines' hyperedge problems and witnesses ([`Payload`]), the same flows
//! and potentials are used to place every routine in a hypergraph and
//! [`composition::compose`] produces the composed solution.

use std::collections::HashMap;

use log::warn;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::composition::{self, ComposedResult, HypergraphInstance, PlacedHyperedge, RESISTANCE_FLOOR};
use crate::error::{Error, Result};
use crate::markov::{self, Edge, WeightedGraph};
use crate::numerics::{pseudoinverse, DEFAULT_RANK_TOL};
use crate::reflection::{self, HyperedgeProblem, Involution, StateReflectionProblem, WitnessFamily};

/// Allowed deviation of `Σ_e 1/r_e` from 1/2 before resistances are rescaled.
pub const NORMALIZATION_TOL: f64 = 1e-9;
/// Distributions must sum to one within this.
pub const DISTRIBUTION_TOL: f64 = 1e-9;
/// Marked mass must equal `ε` within this in fraction mode.
pub const FRACTION_TOL: f64 = 1e-10;
/// Relative floor for vanishing per-routine maxima in the variable-query
/// rescaling, which would otherwise divide by zero.
pub const SCALE_FLOOR: f64 = 1e-9;
/// Slack for the inequality checks in this module.
pub const BOUND_TOL: f64 = 1e-9;

pub const SOURCE: &str = "s";
pub const SINK: &str = "t";

/// `(plus, minus)` witness size per input.
pub type Sizes = Vec<(f64, f64)>;

/// Size tables of all routines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutineSizes {
    /// Per vertex.
    pub setup: Vec<Sizes>,
    /// Per edge.
    pub update: Vec<Sizes>,
    /// Per vertex, per database state.
    pub check: Vec<Vec<Sizes>>,
}

impl RoutineSizes {
    /// Every routine costs `size` on every input.
    pub fn uniform(vertices: usize, edges: usize, states: usize, inputs: usize, size: (f64, f64)) -> Self {
        let row = vec![size; inputs];
        Self {
            setup: vec![row.clone(); vertices],
            update: vec![row.clone(); edges],
            check: vec![vec![row; states]; vertices],
        }
    }
}

/// A routine's hyperedge problem with feasible witnesses.
#[derive(Debug, Clone, PartialEq)]
pub struct Routine {
    pub problem: HyperedgeProblem,
    pub witnesses: WitnessFamily,
}

/// Concrete routines. Vertex order is fixed:
/// - `S_v` on `[s, (v,D₀), …, (v,D_{k−1})]`, flow `s → (v,D_{v,x})`;
/// - `U_e` on `[(tail,D₀), …, (head,D₀), …]`, flow `(tail,D_{tail,x}) → (head,D_{head,x})`;
/// - `C_{v,D}` on `[(v,D), t]`, span-program shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Payload {
    pub setup: Vec<Routine>,
    pub update: Vec<Routine>,
    pub check: Vec<Vec<Routine>>,
}

/// An instance of quantum walk search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawInstance", into = "RawInstance")]
pub struct QWalkInstance {
    graph: WeightedGraph,
    labels: Vec<String>,
    marked: Vec<Vec<usize>>,
    states: Vec<String>,
    /// `database[v][x] = D_{v,x}`, an index into `states`.
    database: Vec<Vec<usize>>,
    sizes: RoutineSizes,
    payload: Option<Payload>,
}

#[derive(Serialize, Deserialize)]
struct RawInstance {
    vertices: Vec<String>,
    edges: Vec<Edge>,
    inputs: Vec<String>,
    marked: Vec<Vec<usize>>,
    states: Vec<String>,
    database: Vec<Vec<usize>>,
    sizes: RoutineSizes,
}

impl TryFrom<RawInstance> for QWalkInstance {
    type Error = Error;

    fn try_from(raw: RawInstance) -> Result<Self> {
        let graph = WeightedGraph::new(raw.vertices, raw.edges)?;
        QWalkInstance::new(graph, raw.inputs, raw.marked, raw.states, raw.database, raw.sizes)
    }
}

impl From<QWalkInstance> for RawInstance {
    fn from(q: QWalkInstance) -> Self {
        RawInstance {
            vertices: q.graph.vertices().to_vec(),
            edges: q.graph.edges().to_vec(),
            inputs: q.labels,
            marked: q.marked,
            states: q.states,
            database: q.database,
            sizes: q.sizes,
        }
    }
}

fn check_sizes(table: &Sizes, inputs: usize, what: &str) -> Result<()> {
    if table.len() != inputs {
        return Err(Error::DimensionMismatch(format!("{what} has {} sizes for {inputs} inputs", table.len())));
    }
    if let Some((p, m)) = table.iter().find(|(p, m)| !(*p >= 0.0 && *m >= 0.0 && p.is_finite() && m.is_finite())) {
        return Err(Error::InvalidInstance(format!("{what} has size ({p}, {m})")));
    }
    Ok(())
}

impl QWalkInstance {
    /// Symbolic instance from size tables. Resistances that do not satisfy
    /// `Σ_e 1/r_e = 1/2` are rescaled uniformly, with a warning.
    pub fn new(
        graph: WeightedGraph,
        labels: Vec<String>,
        marked: Vec<Vec<usize>>,
        states: Vec<String>,
        database: Vec<Vec<usize>>,
        sizes: RoutineSizes,
    ) -> Result<Self> {
        let graph = normalize_graph(graph)?;
        let (n, m, k, nx) = (graph.n(), graph.edges().len(), states.len(), labels.len());
        if nx == 0 {
            return Err(Error::InvalidInstance("the input domain is empty".into()));
        }
        if k == 0 {
            return Err(Error::InvalidInstance("the database alphabet is empty".into()));
        }
        if marked.len() != nx {
            return Err(Error::DimensionMismatch(format!("{} marked sets for {nx} inputs", marked.len())));
        }
        let mut marked = marked;
        for (x, set) in marked.iter_mut().enumerate() {
            set.sort_unstable();
            set.dedup();
            if set.iter().any(|&v| v >= n) {
                return Err(Error::InvalidInstance(format!("marked set of input {} names a missing vertex", labels[x])));
            }
        }
        if database.len() != n || database.iter().any(|row| row.len() != nx) {
            return Err(Error::DimensionMismatch("the database needs one entry per vertex and input".into()));
        }
        if database.iter().flatten().any(|&d| d >= k) {
            return Err(Error::InvalidInstance("database entry outside the alphabet".into()));
        }
        if sizes.setup.len() != n || sizes.update.len() != m || sizes.check.len() != n {
            return Err(Error::DimensionMismatch("size tables do not match the graph".into()));
        }
        for (v, t) in sizes.setup.iter().enumerate() {
            check_sizes(t, nx, &format!("S_{}", graph.vertices()[v]))?;
        }
        for (e, t) in sizes.update.iter().enumerate() {
            check_sizes(t, nx, &format!("U_{e}"))?;
        }
        for (v, row) in sizes.check.iter().enumerate() {
            if row.len() != k {
                return Err(Error::DimensionMismatch(format!("checks of vertex {v} do not cover the alphabet")));
            }
            for (d, t) in row.iter().enumerate() {
                check_sizes(t, nx, &format!("C_{},{}", graph.vertices()[v], states[d]))?;
            }
        }
        Ok(Self {
            graph,
            labels,
            marked,
            states,
            database,
            sizes,
            payload: None,
        })
    }

    /// Concrete instance. Sizes are read off the witnesses: `‖w⁺‖²/c²` for
    /// flow `c(1_a − 1_b)` and `b²‖w⁻‖²` where `b` maps the routine's
    /// potential onto the canonical one (1 on `s` and the entered states).
    pub fn concrete(
        graph: WeightedGraph,
        labels: Vec<String>,
        marked: Vec<Vec<usize>>,
        states: Vec<String>,
        database: Vec<Vec<usize>>,
        payload: Payload,
    ) -> Result<Self> {
        let (n, m, k, nx) = (graph.n(), graph.edges().len(), states.len(), labels.len());
        if payload.setup.len() != n || payload.update.len() != m || payload.check.len() != n {
            return Err(Error::DimensionMismatch("payload does not match the graph".into()));
        }
        if database.len() != n || database.iter().any(|row| row.len() != nx) {
            return Err(Error::DimensionMismatch("the database needs one entry per vertex and input".into()));
        }
        let is_marked = |v: usize, x: usize| marked.get(x).is_some_and(|s| s.contains(&v));
        let mut setup = Vec::with_capacity(n);
        for v in 0..n {
            let name = format!("S_{}", graph.vertices()[v]);
            let ends: Vec<_> = (0..nx).map(|x| (0, 1 + database[v][x])).collect();
            setup.push(canonical_sizes(&payload.setup[v], &name, 1 + k, &labels, &ends, true)?.0);
        }
        let mut update = Vec::with_capacity(m);
        for (e, edge) in graph.edges().iter().enumerate() {
            if edge.tail == edge.head {
                return Err(Error::InvalidInstance(format!("edge {e} is a loop")));
            }
            let ends: Vec<_> = (0..nx)
                .map(|x| (database[edge.tail][x], k + database[edge.head][x]))
                .collect();
            update.push(canonical_sizes(&payload.update[e], &format!("U_{e}"), 2 * k, &labels, &ends, true)?.0);
        }
        let mut check = Vec::with_capacity(n);
        for v in 0..n {
            if payload.check[v].len() != k {
                return Err(Error::DimensionMismatch(format!("checks of vertex {v} do not cover the alphabet")));
            }
            let mut row = Vec::with_capacity(k);
            for d in 0..k {
                let name = format!("C_{},{}", graph.vertices()[v], states[d]);
                let ends = vec![(0, 1); nx];
                let (sizes, values) = canonical_sizes(&payload.check[v][d], &name, 2, &labels, &ends, false)?;
                for x in 0..nx {
                    if database[v][x] == d && values[x] != is_marked(v, x) {
                        return Err(Error::InvalidInstance(format!(
                            "{name} answers {} on input {} although the database entry is correct",
                            values[x], labels[x]
                        )));
                    }
                }
                row.push(sizes);
            }
            check.push(row);
        }
        let mut q = Self::new(graph, labels, marked, states, database, RoutineSizes { setup, update, check })?;
        q.payload = Some(payload);
        Ok(q)
    }

    pub fn graph(&self) -> &WeightedGraph {
        &self.graph
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn marked(&self) -> &[Vec<usize>] {
        &self.marked
    }

    pub fn states(&self) -> &[String] {
        &self.states
    }

    pub fn database(&self) -> &[Vec<usize>] {
        &self.database
    }

    pub fn sizes(&self) -> &RoutineSizes {
        &self.sizes
    }

    pub fn payload(&self) -> Option<&Payload> {
        self.payload.as_ref()
    }

    pub fn n(&self) -> usize {
        self.graph.n()
    }

    /// `M_x ≠ ∅`.
    pub fn is_positive(&self, x: usize) -> bool {
        !self.marked[x].is_empty()
    }

    /// Sizes of `C_{v,D_{v,x}}` on input `x`.
    pub fn check_at(&self, v: usize, x: usize) -> (f64, f64) {
        self.sizes.check[v][self.database[v][x]][x]
    }

    /// The same instance without its payload.
    pub fn symbolic(&self) -> Self {
        Self {
            payload: None,
            ..self.clone()
        }
    }
}

fn normalize_graph(graph: WeightedGraph) -> Result<WeightedGraph> {
    if graph.edges().is_empty() {
        return Err(Error::NotNormalized("the graph has no edges".into()));
    }
    if let Some(e) = graph.edges().iter().position(|e| e.tail == e.head) {
        return Err(Error::InvalidInstance(format!("edge {e} is a loop")));
    }
    if !graph.is_connected() {
        return Err(Error::Disconnected);
    }
    let total = graph.total_conductance();
    if (total - 0.5).abs() > NORMALIZATION_TOL {
        warn!("Σ 1/r = {total}; rescaling resistances to make it 1/2");
        return Ok(graph.normalized(0.5));
    }
    Ok(graph)
}

/// Per-input canonical sizes of a routine whose flow is `c(1_a − 1_b)`.
/// Returns the sizes and whether each input carries flow.
fn canonical_sizes(
    routine: &Routine,
    name: &str,
    vertices: usize,
    labels: &[String],
    ends: &[(usize, usize)],
    must_flow: bool,
) -> Result<(Sizes, Vec<bool>)> {
    let p = &routine.problem;
    if p.vertices().len() != vertices {
        return Err(Error::DimensionMismatch(format!(
            "{name} has {} vertices, expected {vertices}",
            p.vertices().len()
        )));
    }
    if p.labels() != labels {
        return Err(Error::InvalidInstance(format!("{name} has a different input domain")));
    }
    if routine.witnesses.len() != labels.len() {
        return Err(Error::DimensionMismatch(format!("{name} has the wrong number of witnesses")));
    }
    let mut sizes = Vec::with_capacity(labels.len());
    let mut flowing = Vec::with_capacity(labels.len());
    for (x, inp) in p.inputs().iter().enumerate() {
        let (a, b) = ends[x];
        let c = inp.flow[a];
        let mut expected = DVector::zeros(vertices);
        expected[a] = c;
        expected[b] = -c;
        if (&inp.flow - expected).amax() > 1e-10 * c.abs().max(1.0) {
            return Err(Error::InvalidInstance(format!(
                "{name}, input {}: flow is not a multiple of 1_{a} − 1_{b}",
                inp.label
            )));
        }
        let flows = c.abs() > 1e-12;
        if must_flow && !flows {
            return Err(Error::InvalidInstance(format!("{name}, input {}: carries no flow", inp.label)));
        }
        let plus = if flows { routine.witnesses.plus[x].norm_squared() / (c * c) } else { 0.0 };
        let minus = if flows && !must_flow {
            // A true check: its potential is constant and never crosses a cut.
            0.0
        } else {
            let mut target = DVector::zeros(vertices);
            target[a] = 1.0;
            if must_flow {
                target[b] = 1.0;
            }
            let (_, scale) = composition::fit_potential(&inp.potential, &target).ok_or_else(|| {
                Error::InvalidInstance(format!("{name}, input {}: potential has the wrong shape", inp.label))
            })?;
            scale * scale * routine.witnesses.minus[x].norm_squared()
        };
        sizes.push((plus, minus));
        flowing.push(flows);
    }
    Ok((sizes, flowing))
}

/// Witness-size contributions of the three routine families.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Terms {
    pub setup: f64,
    pub update: f64,
    pub check: f64,
}

impl Terms {
    pub fn total(&self) -> f64 {
        self.setup + self.update + self.check
    }

    pub fn max_term(&self) -> f64 {
        self.setup.max(self.update).max(self.check)
    }
}

/// Sizes of one input. Detection gives positive inputs only `plus` and
/// negative ones only `minus`; finding gives every input both.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InputBound {
    pub label: String,
    pub plus: Option<Terms>,
    pub minus: Option<Terms>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub inputs: Vec<InputBound>,
    pub max_plus: f64,
    pub max_minus: f64,
    /// `√(max R⁺ · max R⁻)`
    pub objective: f64,
}

impl BoundReport {
    pub fn new(inputs: Vec<InputBound>) -> Self {
        let max_plus = inputs.iter().filter_map(|i| i.plus.map(|t| t.total())).fold(0.0, f64::max);
        let max_minus = inputs.iter().filter_map(|i| i.minus.map(|t| t.total())).fold(0.0, f64::max);
        Self {
            inputs,
            max_plus,
            max_minus,
            objective: (max_plus * max_minus).sqrt(),
        }
    }

    /// `(R⁺_x, R⁻_x)` with absent sides as 0, comparable to composed sizes.
    pub fn sizes(&self) -> Vec<(f64, f64)> {
        self.inputs
            .iter()
            .map(|i| (i.plus.map_or(0.0, |t| t.total()), i.minus.map_or(0.0, |t| t.total())))
            .collect()
    }
}

/// Result of a builder: the closed-form sizes, and in the concrete tier the
/// composed solution.
#[derive(Debug, Clone)]
pub struct QWalkBuild {
    pub report: BoundReport,
    pub composed: Option<ComposedResult>,
    /// Minimum-energy flow on the update edges, per input that carries flow.
    pub flows: Vec<Option<DVector<f64>>>,
    pub mu: Vec<Option<DVector<f64>>>,
    pub nu: Vec<Option<DVector<f64>>>,
    /// Fraction mode, concrete tier: the unit-norm problem `|⊥⟩ ± |ψ_x⟩`
    /// over the sinks, whose feasible region contains the composed witnesses.
    pub unit_problem: Option<StateReflectionProblem>,
}

impl QWalkBuild {
    /// Largest gap between closed-form and composed sizes.
    pub fn formula_gap(&self) -> Option<f64> {
        self.composed.as_ref().map(|c| {
            self.report
                .sizes()
                .iter()
                .zip(&c.sizes)
                .map(|(a, b)| (a.0 - b.0).abs().max((a.1 - b.1).abs()))
                .fold(0.0, f64::max)
        })
    }
}

/// Weight multipliers per routine. A multiplier `κ` scales positive sizes by
/// `κ` and negative ones by `1/κ`.
#[derive(Debug, Clone, PartialEq)]
struct Scales {
    setup: Vec<f64>,
    update: Vec<f64>,
    check: Vec<Vec<f64>>,
}

impl Scales {
    fn ones(q: &QWalkInstance) -> Self {
        Self {
            setup: vec![1.0; q.n()],
            update: vec![1.0; q.graph.edges().len()],
            check: vec![vec![1.0; q.states.len()]; q.n()],
        }
    }

    fn uniform(q: &QWalkInstance, s: f64, u: f64, c: f64) -> Self {
        Self {
            setup: vec![s; q.n()],
            update: vec![u; q.graph.edges().len()],
            check: vec![vec![c; q.states.len()]; q.n()],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Sinks {
    /// Detection: one sink `t`.
    Single,
    /// Finding: a sink `t:v:D` behind every check.
    PerState,
}

struct Plan<'a> {
    sigma: &'a DVector<f64>,
    tau: &'a DVector<f64>,
    mu: Vec<Option<DVector<f64>>>,
    nu: Vec<Option<DVector<f64>>>,
    /// Inputs that get the cut potential.
    negative: Vec<bool>,
    sinks: Sinks,
    scales: Scales,
}

fn check_distribution(p: &DVector<f64>, n: usize, name: &str) -> Result<()> {
    if p.len() != n {
        return Err(Error::DimensionMismatch(format!("{name} has {} entries for {n} vertices", p.len())));
    }
    if p.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) || (p.sum() - 1.0).abs() > DISTRIBUTION_TOL {
        return Err(Error::InvalidInstance(format!("{name} is not a probability distribution")));
    }
    Ok(())
}

fn check_support(p: &DVector<f64>, allowed: impl Fn(usize) -> bool, what: &str) -> Result<()> {
    match (0..p.len()).find(|&v| p[v] > 0.0 && !allowed(v)) {
        Some(v) => Err(Error::SupportViolation(format!("{what} puts mass on vertex {v}"))),
        None => Ok(()),
    }
}

/// Resistances usable for routing: zeros are lifted to a relative floor, and
/// an all-zero vector (every update free) becomes uniform.
fn floored(rs: &[f64]) -> Vec<f64> {
    let top = rs.iter().cloned().fold(0.0f64, f64::max);
    if top <= 0.0 {
        return vec![1.0; rs.len()];
    }
    rs.iter().map(|&r| r.max(RESISTANCE_FLOOR * top)).collect()
}

/// Minimum-energy flow for net-flow `delta` with edge resistances `rs`.
/// Zero resistances are floored for routing; the energy uses the true ones.
fn route(g: &WeightedGraph, rs: &[f64], delta: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
    let m = rs.len();
    if delta.amax() == 0.0 {
        return Ok((DVector::zeros(m), 0.0));
    }
    let (_, flow) = markov::resistance(&g.with_resistances(&floored(rs))?, delta)?;
    let energy = flow.values.iter().zip(rs).map(|(f, r)| f * f * r).sum();
    Ok((flow.values, energy))
}

fn update_resistances(q: &QWalkInstance, scales: &Scales, x: usize) -> Vec<f64> {
    q.graph
        .edges()
        .iter()
        .enumerate()
        .map(|(e, edge)| edge.resistance * scales.update[e] * q.sizes.update[e][x].0)
        .collect()
}

fn assemble(q: &QWalkInstance, plan: Plan) -> Result<QWalkBuild> {
    let n = q.n();
    let r = q.graph.resistances();
    let mut inputs = Vec::with_capacity(q.labels.len());
    let mut flows = Vec::with_capacity(q.labels.len());
    for (x, label) in q.labels.iter().enumerate() {
        let plus = match (&plan.mu[x], &plan.nu[x]) {
            (Some(mu), Some(nu)) => {
                let setup = (0..n)
                    .filter(|&v| plan.sigma[v] > 0.0)
                    .map(|v| plan.scales.setup[v] * mu[v] * mu[v] / plan.sigma[v] * q.sizes.setup[v][x].0)
                    .sum();
                let (f, update) = route(&q.graph, &update_resistances(q, &plan.scales, x), &(mu - nu))?;
                let check = (0..n)
                    .filter(|&v| plan.tau[v] > 0.0)
                    .map(|v| {
                        let d = q.database[v][x];
                        plan.scales.check[v][d] * nu[v] * nu[v] / plan.tau[v] * q.sizes.check[v][d][x].0
                    })
                    .sum();
                flows.push(Some(f));
                Some(Terms { setup, update, check })
            }
            _ => {
                flows.push(None);
                None
            }
        };
        let minus = plan.negative[x].then(|| Terms {
            setup: (0..n)
                .filter(|&v| plan.sigma[v] > 0.0)
                .map(|v| plan.sigma[v] * q.sizes.setup[v][x].1 / plan.scales.setup[v])
                .sum(),
            update: (0..r.len())
                .map(|e| q.sizes.update[e][x].1 / (r[e] * plan.scales.update[e]))
                .sum(),
            check: (0..n)
                .filter(|&v| plan.tau[v] > 0.0 && !q.marked[x].contains(&v))
                .map(|v| {
                    let d = q.database[v][x];
                    plan.tau[v] * q.sizes.check[v][d][x].1 / plan.scales.check[v][d]
                })
                .sum(),
        });
        inputs.push(InputBound {
            label: label.clone(),
            plus,
            minus,
        });
    }
    let report = BoundReport::new(inputs);
    let (composed, unit_problem) = match &q.payload {
        Some(payload) => {
            let composed = compose_concrete(q, payload, &plan, &flows)?;
            (Some(composed), None)
        }
        None => (None, None),
    };
    Ok(QWalkBuild {
        report,
        composed,
        flows,
        mu: plan.mu,
        nu: plan.nu,
        unit_problem,
    })
}

fn state_vertex(q: &QWalkInstance, v: usize, d: usize) -> String {
    format!("{}:{}", q.graph.vertices()[v], q.states[d])
}

fn sink_vertex(q: &QWalkInstance, sinks: Sinks, v: usize, d: usize) -> String {
    match sinks {
        Sinks::Single => SINK.to_string(),
        Sinks::PerState => format!("{SINK}:{}", state_vertex(q, v, d)),
    }
}

/// Hypergraph vertices and boundary of a plan.
fn layout(q: &QWalkInstance, sinks: Sinks, tau: &DVector<f64>) -> (Vec<String>, Vec<String>) {
    let (n, k) = (q.n(), q.states.len());
    let mut boundary = vec![SOURCE.to_string()];
    match sinks {
        Sinks::Single => boundary.push(SINK.to_string()),
        Sinks::PerState => {
            for v in (0..n).filter(|&v| tau[v] > 0.0) {
                for d in 0..k {
                    boundary.push(sink_vertex(q, sinks, v, d));
                }
            }
        }
    }
    let mut vertices = boundary.clone();
    for v in 0..n {
        for d in 0..k {
            vertices.push(state_vertex(q, v, d));
        }
    }
    (vertices, boundary)
}

fn compose_concrete(
    q: &QWalkInstance,
    payload: &Payload,
    plan: &Plan,
    flows: &[Option<DVector<f64>>],
) -> Result<ComposedResult> {
    let (n, k, nx) = (q.n(), q.states.len(), q.labels.len());
    let (vertices, boundary) = layout(q, plan.sinks, plan.tau);
    let index: HashMap<&str, usize> = vertices.iter().enumerate().map(|(i, v)| (v.as_str(), i)).collect();

    // Potential per input over all hypergraph vertices: 1 on the source, on
    // every (v, D_{v,x}) and on the sinks that receive flow, when the input
    // is cut; 0 everywhere otherwise.
    let potentials: Vec<Vec<f64>> = (0..nx)
        .map(|x| {
            let mut u = vec![0.0; vertices.len()];
            if plan.negative[x] {
                u[index[SOURCE]] = 1.0;
                for v in 0..n {
                    u[index[state_vertex(q, v, q.database[v][x]).as_str()]] = 1.0;
                }
                if plan.sinks == Sinks::PerState {
                    for &v in q.marked[x].iter().filter(|&&v| plan.tau[v] > 0.0) {
                        u[index[sink_vertex(q, plan.sinks, v, q.database[v][x]).as_str()]] = 1.0;
                    }
                }
            }
            u
        })
        .collect();

    let place = |name: String, names: Vec<String>, routine: &Routine, lead: &dyn Fn(usize) -> usize, amount: &dyn Fn(usize) -> f64, weight: f64| -> Result<PlacedHyperedge> {
        let ids: Vec<usize> = names.iter().map(|v| index[v.as_str()]).collect();
        let mut scales = Vec::with_capacity(nx);
        let mut pots = Vec::with_capacity(nx);
        for x in 0..nx {
            let want = amount(x);
            let c = routine.problem.inputs()[x].flow[lead(x)];
            if want != 0.0 && c.abs() <= 1e-12 {
                return Err(Error::InvalidInstance(format!(
                    "{name} must carry flow on input {} but does not",
                    q.labels[x]
                )));
            }
            scales.push(if want == 0.0 { 0.0 } else { want / c });
            pots.push(DVector::from_iterator(ids.len(), ids.iter().map(|&i| potentials[x][i])));
        }
        let (problem, witnesses) = composition::place(&routine.problem, &routine.witnesses, &scales, &pots)
            .map_err(|err| Error::UnsupportedShape(format!("{name}: {err}")))?;
        Ok(PlacedHyperedge::new(name, names, problem, witnesses).with_weight(weight))
    };

    let mut edges = Vec::new();
    for v in (0..n).filter(|&v| plan.sigma[v] > 0.0) {
        let mut names = vec![SOURCE.to_string()];
        names.extend((0..k).map(|d| state_vertex(q, v, d)));
        let amount = |x: usize| plan.mu[x].as_ref().map_or(0.0, |mu| mu[v]);
        edges.push(place(
            format!("S:{}", q.graph.vertices()[v]),
            names,
            &payload.setup[v],
            &|_| 0,
            &amount,
            plan.scales.setup[v] / plan.sigma[v],
        )?);
    }
    for (e, edge) in q.graph.edges().iter().enumerate() {
        let mut names: Vec<String> = (0..k).map(|d| state_vertex(q, edge.tail, d)).collect();
        names.extend((0..k).map(|d| state_vertex(q, edge.head, d)));
        let amount = |x: usize| flows[x].as_ref().map_or(0.0, |f| f[e]);
        let lead = |x: usize| q.database[edge.tail][x];
        edges.push(place(
            format!("U:{e}"),
            names,
            &payload.update[e],
            &lead,
            &amount,
            edge.resistance * plan.scales.update[e],
        )?);
    }
    for v in (0..n).filter(|&v| plan.tau[v] > 0.0) {
        for d in 0..k {
            let names = vec![state_vertex(q, v, d), sink_vertex(q, plan.sinks, v, d)];
            let amount = |x: usize| match &plan.nu[x] {
                Some(nu) if q.database[v][x] == d => nu[v],
                _ => 0.0,
            };
            edges.push(place(
                format!("C:{}", state_vertex(q, v, d)),
                names,
                &payload.check[v][d],
                &|_| 0,
                &amount,
                plan.scales.check[v][d] / plan.tau[v],
            )?);
        }
    }
    composition::compose(&HypergraphInstance::new(vertices, boundary, edges)?)
}

/// Detection: positive inputs route `μ_x` from `s` through the setups, the
/// minimum-energy flow of `μ_x − ν_x` through the updates (resistances
/// `r_e·(U_e)⁺_x`), and `ν_x` through the checks into `t`. Negative inputs
/// get potential 1 on `s` and every `(v, D_{v,x})`.
///
/// `mu` and `nu` are read for positive inputs only.
pub fn build_detection(
    q: &QWalkInstance,
    sigma: &DVector<f64>,
    tau: &DVector<f64>,
    mu: &[Option<DVector<f64>>],
    nu: &[Option<DVector<f64>>],
) -> Result<QWalkBuild> {
    detection_scaled(q, sigma, tau, mu, nu, Scales::ones(q))
}

fn detection_scaled(
    q: &QWalkInstance,
    sigma: &DVector<f64>,
    tau: &DVector<f64>,
    mu: &[Option<DVector<f64>>],
    nu: &[Option<DVector<f64>>],
    scales: Scales,
) -> Result<QWalkBuild> {
    let (n, nx) = (q.n(), q.labels.len());
    check_distribution(sigma, n, "σ")?;
    check_distribution(tau, n, "τ")?;
    if mu.len() != nx || nu.len() != nx {
        return Err(Error::DimensionMismatch("need μ and ν entries for every input".into()));
    }
    let mut mus = Vec::with_capacity(nx);
    let mut nus = Vec::with_capacity(nx);
    for x in 0..nx {
        if !q.is_positive(x) {
            mus.push(None);
            nus.push(None);
            continue;
        }
        let label = &q.labels[x];
        let (m, v) = match (&mu[x], &nu[x]) {
            (Some(m), Some(v)) => (m, v),
            _ => return Err(Error::SupportViolation(format!("positive input {label} needs μ and ν"))),
        };
        check_distribution(m, n, &format!("μ_{label}"))?;
        check_distribution(v, n, &format!("ν_{label}"))?;
        check_support(m, |i| sigma[i] > 0.0, &format!("μ_{label}"))?;
        check_support(v, |i| tau[i] > 0.0 && q.marked[x].contains(&i), &format!("ν_{label}"))?;
        mus.push(Some(m.clone()));
        nus.push(Some(v.clone()));
    }
    let negative = (0..nx).map(|x| !q.is_positive(x)).collect();
    assemble(
        q,
        Plan {
            sigma,
            tau,
            mu: mus,
            nu: nus,
            negative,
            sinks: Sinks::Single,
            scales,
        },
    )
}

/// `μ_x = σ` and, for every positive input, the `ν_x` on `M_x ∩ supp(τ)`
/// that minimizes the positive size
/// `R_eff(G, r∘(U)⁺_x; σ − ν) + Σ_v ν_v²(C_{v,D_{v,x}})⁺_x/τ_v`.
pub fn detection_flows(
    q: &QWalkInstance,
    sigma: &DVector<f64>,
    tau: &DVector<f64>,
) -> Result<(Vec<Option<DVector<f64>>>, Vec<Option<DVector<f64>>>)> {
    optimal_flows(q, sigma, tau, &Scales::ones(q))
}

#[allow(clippy::type_complexity)]
fn optimal_flows(
    q: &QWalkInstance,
    sigma: &DVector<f64>,
    tau: &DVector<f64>,
    scales: &Scales,
) -> Result<(Vec<Option<DVector<f64>>>, Vec<Option<DVector<f64>>>)> {
    let n = q.n();
    check_distribution(sigma, n, "σ")?;
    check_distribution(tau, n, "τ")?;
    let mut mus = Vec::new();
    let mut nus = Vec::new();
    for x in 0..q.labels.len() {
        if !q.is_positive(x) {
            mus.push(None);
            nus.push(None);
            continue;
        }
        let targets: Vec<usize> = q.marked[x].iter().copied().filter(|&v| tau[v] > 0.0).collect();
        if targets.is_empty() {
            return Err(Error::SupportViolation(format!(
                "input {}: no marked vertex is in the support of τ",
                q.labels[x]
            )));
        }
        let rs = update_resistances(q, scales, x);
        let lp = pseudoinverse(&q.graph.with_resistances(&floored(&rs))?.laplacian(), DEFAULT_RANK_TOL);
        let extra: Vec<f64> = (0..n)
            .map(|v| {
                if tau[v] > 0.0 {
                    let d = q.database[v][x];
                    scales.check[v][d] * q.sizes.check[v][d][x].0 / tau[v]
                } else {
                    0.0
                }
            })
            .collect();
        let (_, nu) = markov::nearest_distribution(&lp, sigma, &targets, &extra);
        mus.push(Some(sigma.clone()));
        nus.push(Some(clean_distribution(nu)));
    }
    Ok((mus, nus))
}

/// Clip rounding noise and renormalize.
fn clean_distribution(p: DVector<f64>) -> DVector<f64> {
    let p = p.map(|v| if v > 1e-15 { v } else { 0.0 });
    let s = p.sum();
    p / s
}

/// Finding variants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FindingMode {
    /// `|M_x| = 1` for all inputs.
    Unique,
    /// `Pr_{v∼τ}[v ∈ M_x] = ε` for all inputs.
    Fraction(f64),
}

/// Finding: every input routes `μ_x` into the marked sinks and is cut at
/// the same time. Each check `C_{v,D}` ends in its own sink `t:v:D`, so the
/// flow reveals the marked vertex and erring checks stay isolated.
///
/// In unique mode `ν_x = 1_{m_x}` and the composed boundary problem is the
/// function evaluation `s → t:m_x:D`. In fraction mode `ν_x = τ|_{M_x}/ε` and
/// the boundary problem is the known-fraction hyperedge; its unit-norm form
/// is returned in [`QWalkBuild::unit_problem`].
pub fn build_finding(
    q: &QWalkInstance,
    sigma: &DVector<f64>,
    tau: &DVector<f64>,
    mode: FindingMode,
    mu: &[DVector<f64>],
) -> Result<QWalkBuild> {
    let (n, nx) = (q.n(), q.labels.len());
    check_distribution(sigma, n, "σ")?;
    check_distribution(tau, n, "τ")?;
    if mu.len() != nx {
        return Err(Error::DimensionMismatch("need μ for every input".into()));
    }
    let mut nus = Vec::with_capacity(nx);
    for x in 0..nx {
        let label = &q.labels[x];
        check_distribution(&mu[x], n, &format!("μ_{label}"))?;
        check_support(&mu[x], |i| sigma[i] > 0.0, &format!("μ_{label}"))?;
        let nu = match mode {
            FindingMode::Unique => {
                let m = match q.marked[x].as_slice() {
                    [m] => *m,
                    _ => return Err(Error::NotUnique(label.clone())),
                };
                if tau[m] <= 0.0 {
                    return Err(Error::SupportViolation(format!(
                        "the marked vertex of input {label} is outside the support of τ"
                    )));
                }
                let mut nu = DVector::zeros(n);
                nu[m] = 1.0;
                nu
            }
            FindingMode::Fraction(eps) => {
                if !(eps > 0.0 && eps <= 1.0) {
                    return Err(Error::InvalidInstance(format!("ε = {eps} is not in (0, 1]")));
                }
                let mass: f64 = q.marked[x].iter().map(|&v| tau[v]).sum();
                if (mass - eps).abs() > FRACTION_TOL {
                    return Err(Error::FractionMismatch {
                        input: label.clone(),
                        found: mass,
                        expected: eps,
                    });
                }
                let mut nu = DVector::zeros(n);
                for &v in &q.marked[x] {
                    nu[v] = tau[v] / eps;
                }
                nu
            }
        };
        nus.push(Some(nu));
    }
    let mut build = assemble(
        q,
        Plan {
            sigma,
            tau,
            mu: mu.iter().cloned().map(Some).collect(),
            nu: nus,
            negative: vec![true; nx],
            sinks: Sinks::PerState,
            scales: Scales::ones(q),
        },
    )?;
    if let (FindingMode::Fraction(eps), Some(composed)) = (mode, &build.composed) {
        build.unit_problem = Some(fraction_unit_problem(q, tau, eps, composed)?);
    }
    Ok(build)
}

/// Sink masses, marked sinks per input and composed oracles, in the order of
/// the composed boundary without the source.
fn fraction_data(
    q: &QWalkInstance,
    tau: &DVector<f64>,
    composed: &ComposedResult,
) -> (DVector<f64>, Vec<Vec<usize>>, Vec<Involution>) {
    let sinks = &composed.problem.vertices()[1..];
    let pos: HashMap<&str, usize> = sinks.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let k = q.states.len();
    let mut pi = DVector::zeros(sinks.len());
    for v in (0..q.n()).filter(|&v| tau[v] > 0.0) {
        for d in 0..k {
            pi[pos[sink_vertex(q, Sinks::PerState, v, d).as_str()]] = tau[v];
        }
    }
    let marked = (0..q.labels.len())
        .map(|x| {
            q.marked[x]
                .iter()
                .filter(|&&v| tau[v] > 0.0)
                .map(|&v| pos[sink_vertex(q, Sinks::PerState, v, q.database[v][x]).as_str()])
                .collect()
        })
        .collect();
    let oracles = composed.problem.inputs().iter().map(|i| i.oracle.clone()).collect();
    (pi, marked, oracles)
}

fn fraction_unit_problem(
    q: &QWalkInstance,
    tau: &DVector<f64>,
    eps: f64,
    composed: &ComposedResult,
) -> Result<StateReflectionProblem> {
    let (pi, marked, oracles) = fraction_data(q, tau, composed);
    reflection::known_fraction_problem(&pi, eps, &q.labels, &marked, &oracles)
}

/// Map a fraction-mode composition back through
/// [`reflection::known_fraction_rescale`]: the returned hyperedge problem
/// should coincide with the composed boundary problem.
pub fn fraction_rescaled(
    q: &QWalkInstance,
    tau: &DVector<f64>,
    eps: f64,
    composed: &ComposedResult,
    tol: f64,
) -> Result<(HyperedgeProblem, WitnessFamily)> {
    let (pi, marked, oracles) = fraction_data(q, tau, composed);
    let sinks = composed.problem.vertices()[1..].to_vec();
    reflection::known_fraction_rescale(&pi, eps, &sinks, &q.labels, &marked, &oracles, &composed.witnesses, tol)
}

/// Maxima `(M⁺, M⁻)` over routines and inputs for setup, update and the
/// checks `C_{v,D_{v,x}}`.
pub fn aggregate_sizes(q: &QWalkInstance) -> [(f64, f64); 3] {
    let fold = |it: &mut dyn Iterator<Item = (f64, f64)>| it.fold((0.0f64, 0.0f64), |a, b| (a.0.max(b.0), a.1.max(b.1)));
    let s = fold(&mut q.sizes.setup.iter().flatten().copied());
    let u = fold(&mut q.sizes.update.iter().flatten().copied());
    let c = fold(&mut (0..q.n()).flat_map(|v| (0..q.labels.len()).map(move |x| (v, x))).map(|(v, x)| q.check_at(v, x)));
    [s, u, c]
}

/// The unified bound for aggregate sizes `(M⁺, M⁻)`, `t ≥ 1` and
/// `R ≥ R_eff(P^t; σ ↔ M_x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UnifiedBound {
    pub t: u32,
    pub r: f64,
    /// `S + √(tR)·U + √(1+R)·C` with `M = √(M⁺M⁻)`.
    pub value: f64,
    /// `S² + tR·U² + 4(1+R)·C²`, bounding every positive size after the
    /// rescaling to `M⁻ = 1`.
    pub positive: f64,
    /// Bound on every negative size after the rescaling.
    pub negative: f64,
}

pub fn unified_bound(s: (f64, f64), u: (f64, f64), c: (f64, f64), t: u32, r: f64) -> UnifiedBound {
    let g = |m: (f64, f64)| (m.0 * m.1).sqrt();
    let (s, u, c) = (g(s), g(u), g(c));
    let tr = t as f64 * r;
    // A vanishing routine contributes nothing even when R is infinite
    // (periodic walks at even t).
    let term = |a: f64, b: f64| if b == 0.0 { 0.0 } else { a * b };
    UnifiedBound {
        t,
        r,
        value: s + term(tr.sqrt(), u) + term((1.0 + r).sqrt(), c),
        positive: s * s + term(tr, u * u) + term(4.0 * (1.0 + r), c * c),
        negative: 3.0,
    }
}

/// One point of the `t` sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepPoint {
    pub bound: UnifiedBound,
    pub max_plus: f64,
    pub max_minus: f64,
    pub holds: bool,
}

#[derive(Debug, Clone)]
pub struct UnifiedReport {
    /// `(M⁺, M⁻)` for setup, update and check before rescaling.
    pub aggregates: [(f64, f64); 3],
    pub tau: DVector<f64>,
    pub build: QWalkBuild,
    pub sweep: Vec<SweepPoint>,
}

/// `max_x min_{ν ∈ Δ(M_x)} R_eff(P^t; σ − ν)` over positive inputs.
pub fn walk_resistance(q: &QWalkInstance, sigma: &DVector<f64>, t: u32) -> Result<f64> {
    let (chain, pi) = markov::graph_to_chain(&q.graph)?;
    let eig = markov::symmetrized_spectrum(&chain, &pi)?;
    let form = markov::spectral_form(&eig, &pi, t);
    let k = form.matrix();
    let mut worst = 0.0f64;
    for x in (0..q.labels.len()).filter(|&x| q.is_positive(x)) {
        let (_, nu) = markov::nearest_distribution(&k, sigma, &q.marked[x], &[]);
        worst = worst.max(form.evaluate(&(sigma - nu)));
    }
    Ok(worst)
}

/// The unified construction: every routine family is rescaled to `M⁻ = 1`,
/// `τ = (σ + π)/2`, `μ_x = σ`, and `ν_x` minimizes the positive size, so the
/// construction does not depend on `t`. The sweep checks the composed (or
/// closed-form) sizes against [`unified_bound`] for every `t` in `ts`.
pub fn unified_detection(q: &QWalkInstance, sigma: &DVector<f64>, ts: &[u32]) -> Result<UnifiedReport> {
    check_distribution(sigma, q.n(), "σ")?;
    let (_, pi) = markov::graph_to_chain(&q.graph)?;
    let tau = (sigma + &pi) * 0.5;
    let aggregates = aggregate_sizes(q);
    let unit = |m: (f64, f64)| if m.1 > 0.0 { m.1 } else { 1.0 };
    let scales = Scales::uniform(q, unit(aggregates[0]), unit(aggregates[1]), unit(aggregates[2]));
    let (mu, nu) = optimal_flows(q, sigma, &tau, &scales)?;
    let build = detection_scaled(q, sigma, &tau, &mu, &nu, scales)?;
    let (max_plus, max_minus) = match &build.composed {
        Some(c) => c
            .sizes
            .iter()
            .fold((0.0f64, 0.0f64), |a, s| (a.0.max(s.0), a.1.max(s.1))),
        None => (build.report.max_plus, build.report.max_minus),
    };
    let mut sweep = Vec::with_capacity(ts.len());
    for &t in ts {
        assert!(t >= 1, "t must be positive");
        let r = walk_resistance(q, sigma, t)?;
        let bound = unified_bound(aggregates[0], aggregates[1], aggregates[2], t, r);
        let holds = max_plus <= bound.positive * (1.0 + BOUND_TOL) + BOUND_TOL && max_minus <= bound.negative + BOUND_TOL;
        sweep.push(SweepPoint {
            bound,
            max_plus,
            max_minus,
            holds,
        });
    }
    Ok(UnifiedReport {
        aggregates,
        tau,
        build,
        sweep,
    })
}

/// The two definitional bundles of `(R, ν_x, ε)` in the variable-query
/// bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    /// `ν_x` minimizes `R_eff(G, r; σ − ν)` on `M_x`;
    /// `ε_x = (Σ_v ν_v²/τ_v)⁻¹`.
    One,
    /// `ε_x = τ(M_x)`, `ν_x = τ|_{M_x}/ε_x`.
    Two,
}

#[derive(Debug, Clone)]
pub struct VariableQueryReport {
    pub variant: Variant,
    /// `max_x R_eff(G, r; σ − ν_x)`, floored at [`SCALE_FLOOR`].
    pub r: f64,
    pub eps: f64,
    pub eps_x: Vec<Option<f64>>,
    /// `E_{v∼σ}[S⁺_v]` (1 when it vanishes).
    pub setup_mean: f64,
    /// `U⁺_e` per edge and `C⁺_{v,D}` as used in the rescaling (floored).
    pub update_max: Vec<f64>,
    pub check_max: Vec<Vec<f64>>,
    /// Sizes of the rescaled composition.
    pub build: QWalkBuild,
    /// Largest of the three positive terms over positive inputs.
    pub max_positive_term: f64,
    /// The amortized negative expression per negative input.
    pub amortized: Vec<Option<f64>>,
    pub positive_ok: bool,
    pub negative_ok: bool,
}

/// `E_{v∼π, w∼P_v}[f_{vw}]` for a per-edge quantity. With `Σ_e 1/r_e = 1/2`
/// every edge has `π_vP_{vw} = 1/r_e` in both directions.
fn edge_expectation(q: &QWalkInstance, f: impl Fn(usize) -> f64) -> f64 {
    q.graph.edges().iter().enumerate().map(|(e, edge)| 2.0 * f(e) / edge.resistance).sum()
}

/// Variable-query detection: rescale `S_v` by `E_σ[S⁺]^{∓1}`, `U_e` by
/// `(R·U⁺_e)^{∓1}` and `C_{v,D}` by `(C⁺_{v,D}/ε)^{∓1}`, then build the
/// detection composition with `μ_x = σ`. Each positive term is at most 1 and
/// every negative size is at most the amortized expression
/// `E_σ[S⁺]E_σ[S⁻_x] + R·E_{π,P}[U⁺U⁻_x] + E_τ[C⁺C⁻_x]/ε`.
pub fn variable_query_bounds(
    q: &QWalkInstance,
    sigma: &DVector<f64>,
    tau: &DVector<f64>,
    variant: Variant,
) -> Result<VariableQueryReport> {
    let (n, nx, k) = (q.n(), q.labels.len(), q.states.len());
    check_distribution(sigma, n, "σ")?;
    check_distribution(tau, n, "τ")?;
    for (name, p) in [("σ", sigma), ("τ", tau)] {
        if let Some(v) = (0..n).find(|&v| p[v] <= 0.0) {
            return Err(Error::SupportViolation(format!("{name} vanishes on vertex {v}")));
        }
    }
    let lp = pseudoinverse(&q.graph.laplacian(), DEFAULT_RANK_TOL);
    let positive: Vec<usize> = (0..nx).filter(|&x| q.is_positive(x)).collect();
    let mut nus: Vec<Option<DVector<f64>>> = vec![None; nx];
    let mut eps_x = vec![None; nx];
    let mut r = 0.0f64;
    for &x in &positive {
        let nu = match variant {
            Variant::One => clean_distribution(markov::nearest_distribution(&lp, sigma, &q.marked[x], &[]).1),
            Variant::Two => {
                let mass: f64 = q.marked[x].iter().map(|&v| tau[v]).sum();
                let mut nu = DVector::zeros(n);
                for &v in &q.marked[x] {
                    nu[v] = tau[v] / mass;
                }
                nu
            }
        };
        let e = match variant {
            Variant::One => 1.0 / (0..n).map(|v| nu[v] * nu[v] / tau[v]).sum::<f64>(),
            Variant::Two => q.marked[x].iter().map(|&v| tau[v]).sum(),
        };
        let (res, _) = markov::resistance(&q.graph, &(sigma - &nu))?;
        r = r.max(res);
        eps_x[x] = Some(e);
        nus[x] = Some(nu);
    }
    let r = r.max(SCALE_FLOOR);
    let eps = eps_x.iter().flatten().cloned().fold(1.0f64, f64::min);

    let pos_max = |it: &mut dyn Iterator<Item = f64>| it.fold(0.0f64, f64::max);
    let setup_max: Vec<f64> = (0..n)
        .map(|v| pos_max(&mut positive.iter().map(|&x| q.sizes.setup[v][x].0)))
        .collect();
    let setup_mean = (0..n).map(|v| sigma[v] * setup_max[v]).sum::<f64>();
    let setup_mean = if setup_mean > 0.0 { setup_mean } else { 1.0 };
    let lift = |vals: Vec<f64>, top: f64| -> Vec<f64> {
        let floor = SCALE_FLOOR * top.max(1.0);
        vals.into_iter().map(|a| a.max(floor)).collect()
    };
    let update_raw: Vec<f64> = (0..q.graph.edges().len())
        .map(|e| pos_max(&mut positive.iter().map(|&x| q.sizes.update[e][x].0)))
        .collect();
    let top = update_raw.iter().cloned().fold(0.0, f64::max);
    let update_max = lift(update_raw, top);
    let mut check_max = vec![vec![0.0f64; k]; n];
    for v in 0..n {
        for &x in &positive {
            let d = q.database[v][x];
            check_max[v][d] = check_max[v][d].max(q.sizes.check[v][d][x].0);
        }
    }
    let top = check_max.iter().flatten().cloned().fold(0.0, f64::max);
    let check_max: Vec<Vec<f64>> = check_max.into_iter().map(|row| lift(row, top)).collect();

    let scales = Scales {
        setup: vec![1.0 / setup_mean; n],
        update: update_max.iter().map(|u| 1.0 / (r * u)).collect(),
        check: check_max.iter().map(|row| row.iter().map(|c| eps / c).collect()).collect(),
    };
    let mu: Vec<Option<DVector<f64>>> = (0..nx).map(|x| q.is_positive(x).then(|| sigma.clone())).collect();
    let build = detection_scaled(q, sigma, tau, &mu, &nus, scales)?;

    let max_positive_term = build
        .report
        .inputs
        .iter()
        .filter_map(|i| i.plus.map(|t| t.max_term()))
        .fold(0.0, f64::max);
    let amortized: Vec<Option<f64>> = (0..nx)
        .map(|x| {
            (!q.is_positive(x)).then(|| {
                let s: f64 = (0..n).map(|v| sigma[v] * q.sizes.setup[v][x].1).sum();
                let u = edge_expectation(q, |e| update_max[e] * q.sizes.update[e][x].1);
                let c: f64 = (0..n)
                    .map(|v| tau[v] * check_max[v][q.database[v][x]] * q.check_at(v, x).1)
                    .sum();
                setup_mean * s + r * u + c / eps
            })
        })
        .collect();
    let negative_ok = build
        .report
        .inputs
        .iter()
        .zip(&amortized)
        .all(|(i, a)| match (i.minus, a) {
            (Some(t), Some(a)) => t.total() <= a * (1.0 + BOUND_TOL) + BOUND_TOL,
            _ => true,
        });
    Ok(VariableQueryReport {
        variant,
        r,
        eps,
        eps_x,
        setup_mean,
        update_max,
        check_max,
        positive_ok: max_positive_term <= 1.0 + BOUND_TOL,
        build,
        max_positive_term,
        amortized,
        negative_ok,
    })
}

/// `R_eff(G, r; π − π|_M/ε) ≤ (1/ε − 1)/δ ≤ 1/(δε)` for the walk of `g`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MnrsCheck {
    pub eps: f64,
    pub gap: f64,
    pub resistance: f64,
    /// `(1/ε − 1)/δ`
    pub bound: f64,
    /// `1/(δε)`
    pub loose_bound: f64,
    pub slack: f64,
    pub holds: bool,
}

/// Check the MNRS resistance inequality for marked set `marked` on the walk
/// defined by `g` (resistances are taken up to scale, loops allowed).
pub fn mnrs_inequality(g: &WeightedGraph, marked: &[usize]) -> Result<MnrsCheck> {
    if marked.is_empty() {
        return Err(Error::InvalidInstance("the marked set is empty".into()));
    }
    let (chain, pi) = markov::graph_to_chain(g)?;
    let (_, gap) = markov::stationary_and_gap(&chain)?;
    let walk = markov::chain_to_graph(&chain, &pi)?;
    let eps: f64 = marked.iter().map(|&v| pi[v]).sum();
    let mut xi = pi.clone();
    for &v in marked {
        xi[v] -= pi[v] / eps;
    }
    let (resistance, _) = markov::resistance(&walk, &xi)?;
    let bound = (1.0 / eps - 1.0) / gap;
    Ok(MnrsCheck {
        eps,
        gap,
        resistance,
        bound,
        loose_bound: 1.0 / (gap * eps),
        slack: bound - resistance,
        holds: resistance <= bound + BOUND_TOL * (1.0 + bound),
    })
}

#[derive(Debug, Clone)]
pub struct MnrsReport {
    pub variable: VariableQueryReport,
    pub gap: f64,
    /// Per positive input.
    pub checks: Vec<Option<MnrsCheck>>,
    /// The corollary's negative bound per negative input:
    /// `E_π[S⁺]E_π[S⁻_x] + ((1/δ)E_{π,P}[U⁺U⁻_x] + E_π[C⁺C⁻_x])/ε`.
    pub corollary: Vec<Option<f64>>,
    pub holds: bool,
}

/// Variable-query MNRS: [`variable_query_bounds`] with `σ = τ = π`
/// (variant two), the resistance inequality per positive input, and the
/// corollary's negative bound.
pub fn mnrs_bounds(q: &QWalkInstance) -> Result<MnrsReport> {
    let (chain, pi) = markov::graph_to_chain(&q.graph)?;
    let (_, gap) = markov::stationary_and_gap(&chain)?;
    let variable = variable_query_bounds(q, &pi, &pi, Variant::Two)?;
    let n = q.n();
    let nx = q.labels.len();
    let checks: Vec<Option<MnrsCheck>> = (0..nx)
        .map(|x| q.is_positive(x).then(|| mnrs_inequality(&q.graph, &q.marked[x])).transpose())
        .collect::<Result<_>>()?;
    let corollary: Vec<Option<f64>> = (0..nx)
        .map(|x| {
            (!q.is_positive(x)).then(|| {
                let s: f64 = (0..n).map(|v| pi[v] * q.sizes.setup[v][x].1).sum();
                let u = edge_expectation(q, |e| variable.update_max[e] * q.sizes.update[e][x].1);
                let c: f64 = (0..n)
                    .map(|v| pi[v] * variable.check_max[v][q.database[v][x]] * q.check_at(v, x).1)
                    .sum();
                variable.setup_mean * s + (u / gap + c) / variable.eps
            })
        })
        .collect();
    let within = variable
        .build
        .report
        .inputs
        .iter()
        .zip(&corollary)
        .all(|(i, b)| match (i.minus, b) {
            (Some(t), Some(b)) => t.total() <= b * (1.0 + BOUND_TOL) + BOUND_TOL,
            _ => true,
        });
    let holds = within && variable.positive_ok && checks.iter().flatten().all(|c| c.holds);
    Ok(MnrsReport {
        variable,
        gap,
        checks,
        corollary,
        holds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gen::{random_distribution, random_qwalk_instance, random_qwalk_with_marked};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + b.abs())
    }

    fn edge_instance(marked: Vec<Vec<usize>>) -> QWalkInstance {
        let g = WeightedGraph::from_labeled(&["a", "b"], &[("a", "b", 2.0)]).unwrap();
        let nx = marked.len();
        let labels = (0..nx).map(|x| format!("x{x}")).collect();
        QWalkInstance::new(
            g,
            labels,
            marked,
            vec!["d".into()],
            vec![vec![0; nx]; 2],
            RoutineSizes::uniform(2, 1, 1, nx, (1.0, 1.0)),
        )
        .unwrap()
    }

    fn point(n: usize, v: usize) -> DVector<f64> {
        let mut p = DVector::zeros(n);
        p[v] = 1.0;
        p
    }

    #[test]
    fn single_edge_detection() {
        let q = edge_instance(vec![vec![], vec![1]]);
        let (sigma, tau) = (point(2, 0), point(2, 1));
        let b = build_detection(&q, &sigma, &tau, &[None, Some(sigma.clone())], &[None, Some(tau.clone())]).unwrap();
        let plus = b.report.inputs[1].plus.unwrap();
        assert_eq!((plus.setup, plus.check), (1.0, 1.0));
        assert!(close(plus.update, 2.0, 1e-12));
        let minus = b.report.inputs[0].minus.unwrap();
        assert!(close(minus.total(), 2.5, 1e-12));
        assert!(close(b.report.objective, 10f64.sqrt(), 1e-12));
    }

    #[test]
    fn single_edge_unique_finding() {
        let q = edge_instance(vec![vec![1]]);
        let (sigma, tau) = (point(2, 0), point(2, 1));
        let b = build_finding(&q, &sigma, &tau, FindingMode::Unique, &[sigma.clone()]).unwrap();
        assert!(close(b.report.max_plus, 4.0, 1e-12));
        assert!(close(b.report.max_minus, 1.5, 1e-12));
    }

    #[test]
    fn unnormalized_graph_is_rescaled() {
        let g = WeightedGraph::from_labeled(&["a", "b"], &[("a", "b", 1.0)]).unwrap();
        let q = QWalkInstance::new(g, vec!["x".into()], vec![vec![]], vec!["d".into()], vec![vec![0]; 2], RoutineSizes::uniform(2, 1, 1, 1, (1.0, 1.0))).unwrap();
        assert!(close(q.graph().edges()[0].resistance, 2.0, 1e-12));
    }

    #[test]
    fn finding_mode_errors() {
        let q = edge_instance(vec![vec![0, 1]]);
        let s = DVector::from_vec(vec![0.5, 0.5]);
        assert!(matches!(
            build_finding(&q, &s, &s, FindingMode::Unique, &[s.clone()]),
            Err(Error::NotUnique(_))
        ));
        assert!(matches!(
            build_finding(&q, &s, &s, FindingMode::Fraction(0.5), &[s.clone()]),
            Err(Error::FractionMismatch { .. })
        ));
        let b = build_finding(&q, &s, &s, FindingMode::Fraction(1.0), &[s.clone()]).unwrap();
        // ν = τ = μ: no update flow, checks cost Σ τ_v = 1.
        let plus = b.report.inputs[0].plus.unwrap();
        assert!(close(plus.setup, 1.0, 1e-12) && plus.update.abs() < 1e-12 && close(plus.check, 1.0, 1e-12));
        let q = edge_instance(vec![vec![1]]);
        assert!(matches!(
            build_finding(&q, &s, &point(2, 0), FindingMode::Unique, &[s.clone()]),
            Err(Error::SupportViolation(_))
        ));
    }

    #[test]
    fn unified_bound_examples() {
        let b = unified_bound((1.0, 1.0), (1.0, 1.0), (1.0, 1.0), 1, 1.0);
        assert!(close(b.value, 2.0 + 2f64.sqrt(), 1e-15));
        let b = unified_bound((4.0, 1.0), (9.0, 1.0), (1.0, 9.0), 3, 0.0);
        assert!(close(b.value, 2.0 + 3.0, 1e-15));
        assert_eq!(b.negative, 3.0);
    }

    #[test]
    fn detection_matches_composition() {
        for seed in 0..6 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let q = random_qwalk_instance(&mut rng, 5, 2, 4, true);
            let sigma = random_distribution(&mut rng, 5);
            let tau = random_distribution(&mut rng, 5);
            let (mu, nu) = detection_flows(&q, &sigma, &tau).unwrap();
            let b = build_detection(&q, &sigma, &tau, &mu, &nu).unwrap();
            assert!(b.formula_gap().unwrap() < 1e-8, "seed {seed}: {:?}", b.formula_gap());
            assert!(b.composed.as_ref().unwrap().check(1e-8).unwrap().feasible);
        }
    }

    #[test]
    fn optimal_nu_beats_alternatives() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let q = random_qwalk_instance(&mut rng, 6, 2, 3, false);
        let sigma = random_distribution(&mut rng, 6);
        let tau = random_distribution(&mut rng, 6);
        let (mu, nu) = detection_flows(&q, &sigma, &tau).unwrap();
        let best = build_detection(&q, &sigma, &tau, &mu, &nu).unwrap().report;
        for x in (0..3).filter(|&x| q.is_positive(x)) {
            for &m in &q.marked()[x] {
                let mut alt = nu.clone();
                alt[x] = Some(point(6, m));
                let other = build_detection(&q, &sigma, &tau, &mu, &alt).unwrap().report;
                let (a, b) = (best.inputs[x].plus.unwrap().total(), other.inputs[x].plus.unwrap().total());
                assert!(a <= b + 1e-9);
            }
        }
    }

    #[test]
    fn unique_finding_evaluates_the_marked_vertex() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let marked = vec![vec![0], vec![3], vec![2]];
        let q = random_qwalk_with_marked(&mut rng, 4, 2, marked.clone(), true);
        let sigma = random_distribution(&mut rng, 4);
        let tau = random_distribution(&mut rng, 4);
        let b = build_finding(&q, &sigma, &tau, FindingMode::Unique, &vec![sigma.clone(); 3]).unwrap();
        assert!(b.formula_gap().unwrap() < 1e-8);
        let c = b.composed.unwrap();
        assert!(c.check(1e-8).unwrap().feasible);
        for (x, m) in marked.iter().enumerate() {
            let sink = sink_vertex(&q, Sinks::PerState, m[0], q.database()[m[0]][x]);
            let i = c.problem.index_of(&sink).unwrap();
            let inp = &c.problem.inputs()[x];
            assert!(close(inp.flow[0], 1.0, 1e-9) && close(inp.flow[i], -1.0, 1e-9));
            assert!(close(inp.potential[0], inp.potential[i], 1e-9));
        }
    }

    #[test]
    fn fraction_finding_is_the_known_fraction_problem() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let marked = vec![vec![0, 1], vec![2, 5], vec![1, 4]];
        let q = random_qwalk_with_marked(&mut rng, 6, 2, marked, true);
        let tau = DVector::from_element(6, 1.0 / 6.0);
        let sigma = random_distribution(&mut rng, 6);
        let eps = 1.0 / 3.0;
        let b = build_finding(&q, &sigma, &tau, FindingMode::Fraction(eps), &vec![sigma.clone(); 3]).unwrap();
        assert!(b.formula_gap().unwrap() < 1e-8);
        let c = b.composed.as_ref().unwrap();
        let unit = b.unit_problem.as_ref().unwrap();
        assert!(reflection::check_feasibility(unit, &c.witnesses, 1e-8).unwrap().feasible);
        let (rescaled, _) = fraction_rescaled(&q, &tau, eps, c, 1e-8).unwrap();
        for (a, b) in rescaled.inputs().iter().zip(c.problem.inputs()) {
            assert!((&a.flow - &b.flow).amax() < 1e-9);
            assert!((&a.potential - &b.potential).amax() < 1e-9);
        }
    }

    #[test]
    fn unit_costs_give_negative_at_most_three() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let base = random_qwalk_instance(&mut rng, 6, 2, 4, false);
        let sizes = RoutineSizes::uniform(6, base.graph().edges().len(), 2, 4, (1.0, 1.0));
        let q = QWalkInstance::new(
            base.graph().clone(),
            base.labels().to_vec(),
            base.marked().to_vec(),
            base.states().to_vec(),
            base.database().to_vec(),
            sizes,
        )
        .unwrap();
        let sigma = random_distribution(&mut rng, 6);
        let u = unified_detection(&q, &sigma, &[1, 2, 3, 4, 5]).unwrap();
        assert!(u.build.report.max_minus <= 3.0 + 1e-9);
        assert!(u.sweep.iter().all(|p| p.holds));
    }

    #[test]
    fn walk_resistance_at_one_step_matches_graph_resistance() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let q = random_qwalk_instance(&mut rng, 5, 1, 2, false);
        let sigma = random_distribution(&mut rng, 5);
        // With Σ 1/r = 1/2, P^1 is the walk of G itself.
        let m = q.marked()[1][0];
        let (direct, _) = markov::resistance(q.graph(), &(&sigma - point(5, m))).unwrap();
        assert!(close(walk_resistance(&q, &sigma, 1).unwrap(), direct, 1e-8));
    }

    #[test]
    fn mnrs_on_complete_graph() {
        let labels = ["0", "1", "2", "3"];
        let edges: Vec<(&str, &str, f64)> = vec![("0", "1", 1.0), ("0", "2", 1.0), ("0", "3", 1.0), ("1", "2", 1.0), ("1", "3", 1.0), ("2", "3", 1.0)];
        let g = WeightedGraph::from_labeled(&labels, &edges).unwrap();
        let c = mnrs_inequality(&g, &[0]).unwrap();
        // K₄: π uniform, P has eigenvalues 1 and −1/3, so δ = 4/3.
        assert!(close(c.eps, 0.25, 1e-12) && close(c.gap, 4.0 / 3.0, 1e-10));
        assert!(close(c.bound, 9.0 / 4.0, 1e-10));
        assert!(c.holds && c.resistance <= c.loose_bound);
    }

    #[test]
    fn variable_query_and_mnrs_reports() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let q = random_qwalk_instance(&mut rng, 6, 2, 5, true);
        let sigma = random_distribution(&mut rng, 6);
        let tau = random_distribution(&mut rng, 6);
        for variant in [Variant::One, Variant::Two] {
            let r = variable_query_bounds(&q, &sigma, &tau, variant).unwrap();
            assert!(r.positive_ok && r.negative_ok, "{variant:?}: {}", r.max_positive_term);
            assert!(r.build.report.max_plus <= 3.0 + 1e-9);
            assert!(r.build.formula_gap().unwrap() < 1e-8);
        }
        let m = mnrs_bounds(&q).unwrap();
        assert!(m.holds);
    }

    #[test]
    fn json_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let q = random_qwalk_instance(&mut rng, 4, 2, 3, true);
        let text = serde_json::to_string(&q).unwrap();
        let back: QWalkInstance = serde_json::from_str(&text).unwrap();
        assert_eq!(back, q.symbolic());
    }

    #[test]
    fn rejects_bad_instances() {
        let g = WeightedGraph::from_labeled(&["a", "b", "c"], &[("a", "b", 4.0)]).unwrap();
        let r = QWalkInstance::new(g, vec!["x".into()], vec![vec![]], vec!["d".into()], vec![vec![0]; 3], RoutineSizes::uniform(3, 1, 1, 1, (1.0, 1.0)));
        assert!(matches!(r, Err(Error::Disconnected)));
        let g = WeightedGraph::from_labeled(&["a", "b"], &[("a", "b", 2.0)]).unwrap();
        let mut sizes = RoutineSizes::uniform(2, 1, 1, 1, (1.0, 1.0));
        sizes.update[0][0].1 = -1.0;
        let r = QWalkInstance::new(g, vec!["x".into()], vec![vec![]], vec!["d".into()], vec![vec![0]; 2], sizes);
        assert!(matches!(r, Err(Error::InvalidInstance(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn mnrs_inequality_holds(seed in any::<u64>(), n in 2usize..8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = crate::gen::random_walk_graph(&mut rng, n, 0.4, 0.3, (0.5, 2.0));
            let size = rand::Rng::gen_range(&mut rng, 1..n);
            let marked: Vec<usize> = rand::seq::index::sample(&mut rng, n, size).into_vec();
            let c = mnrs_inequality(&g, &marked).unwrap();
            prop_assert!(c.holds, "{c:?}");
            prop_assert!(c.bound <= c.loose_bound + 1e-12);
        }

        #[test]
        fn formula_sizes_equal_composed(seed in any::<u64>(), n in 2usize..6, k in 1usize..3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let q = random_qwalk_instance(&mut rng, n, k, 3, true);
            let sigma = random_distribution(&mut rng, n);
            let u = unified_detection(&q, &sigma, &[1, 3]).unwrap();
            prop_assert!(u.build.formula_gap().unwrap() < 1e-8);
            prop_assert!(u.sweep.iter().all(|p| p.holds));
        }

        #[test]
        fn symbolic_sizes_scale_with_kappa(seed in any::<u64>(), kappa in 0.2f64..5.0) {
            // Scaling every plus size by κ and minus by 1/κ leaves the objective unchanged.
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let q = random_qwalk_instance(&mut rng, 5, 2, 3, false);
            let sigma = random_distribution(&mut rng, 5);
            let tau = random_distribution(&mut rng, 5);
            let scale = |t: &mut Sizes| t.iter_mut().for_each(|s| { s.0 *= kappa; s.1 /= kappa; });
            let mut sizes = q.sizes().clone();
            sizes.setup.iter_mut().chain(sizes.update.iter_mut()).chain(sizes.check.iter_mut().flatten()).for_each(scale);
            let q2 = QWalkInstance::new(q.graph().clone(), q.labels().to_vec(), q.marked().to_vec(), q.states().to_vec(), q.database().to_vec(), sizes).unwrap();
            let (mu, nu) = detection_flows(&q, &sigma, &tau).unwrap();
            let a = build_detection(&q, &sigma, &tau, &mu, &nu).unwrap().report;
            let b = build_detection(&q2, &sigma, &tau, &mu, &nu).unwrap().report;
            prop_assert!(close(b.max_plus, kappa * a.max_plus, 1e-8));
            prop_assert!(close(b.max_minus, a.max_minus / kappa, 1e-8));
        }
    }
}
