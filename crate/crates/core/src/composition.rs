//! Generalized graph composition over hypergraphs.
//!
//! Every hyperedge carries its own hyperedge problem and feasible witnesses.
//! When flows cancel at internal vertices and potentials agree wherever
//! hyperedges meet, the direct sum of the witnesses solves the hyperedge
//! problem seen from the boundary, with additive witness sizes.
//!
//! The builders here ([`resistance_cut`], [`classic_embed`],
//! [`divide_conquer`]) pick flows and potentials per input, [`place`] each
//! hyperedge accordingly, and hand the result to [`compose`].

use std::collections::{BTreeSet, HashMap, VecDeque};

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::markov::{self, Edge, WeightedGraph};
use crate::numerics::{concat, CMatrix, CVector, C64};
use crate::reflection::{self, HyperedgeInput, HyperedgeProblem, Involution, WitnessFamily};

/// Relative floor for zero resistances when routing flow. Such edges
/// contribute nothing to witness sizes, so the floor only steers routing.
pub const RESISTANCE_FLOOR: f64 = 1e-12;

/// A hyperedge problem attached to vertices of a hypergraph.
#[derive(Debug, Clone, PartialEq)]
pub struct PlacedHyperedge {
    pub name: String,
    /// Hypergraph vertex for each vertex of `problem`, in order.
    pub vertices: Vec<String>,
    pub problem: HyperedgeProblem,
    pub witnesses: WitnessFamily,
    pub weight: f64,
}

impl PlacedHyperedge {
    pub fn new(name: impl Into<String>, vertices: Vec<String>, problem: HyperedgeProblem, witnesses: WitnessFamily) -> Self {
        Self {
            name: name.into(),
            vertices,
            problem,
            witnesses,
            weight: 1.0,
        }
    }

    pub fn with_weight(mut self, weight: f64) -> Self {
        self.weight = weight;
        self
    }
}

/// A hypergraph with boundary and one hyperedge problem per hyperedge.
#[derive(Debug, Clone, PartialEq)]
pub struct HypergraphInstance {
    vertices: Vec<String>,
    boundary: Vec<String>,
    edges: Vec<PlacedHyperedge>,
    index: HashMap<String, usize>,
    incident: Vec<Vec<usize>>,
}

impl HypergraphInstance {
    pub fn new(vertices: Vec<String>, boundary: Vec<String>, edges: Vec<PlacedHyperedge>) -> Result<Self> {
        let mut index = HashMap::new();
        for (i, v) in vertices.iter().enumerate() {
            if index.insert(v.clone(), i).is_some() {
                return Err(Error::InvalidInstance(format!("vertex {v} is declared twice")));
            }
        }
        for b in &boundary {
            if !index.contains_key(b) {
                return Err(Error::InvalidInstance(format!("boundary vertex {b} is not a vertex")));
            }
        }
        let labels = edges.first().map(|e| e.problem.labels());
        let mut incident = Vec::with_capacity(edges.len());
        for e in &edges {
            if !(e.weight > 0.0 && e.weight.is_finite()) {
                return Err(Error::InvalidInstance(format!("hyperedge {} has weight {}", e.name, e.weight)));
            }
            if e.vertices.len() != e.problem.vertices().len() {
                return Err(Error::InvalidInstance(format!(
                    "hyperedge {} lists {} vertices, its problem has {}",
                    e.name,
                    e.vertices.len(),
                    e.problem.vertices().len()
                )));
            }
            let mut ids = Vec::with_capacity(e.vertices.len());
            for v in &e.vertices {
                let &i = index
                    .get(v)
                    .ok_or_else(|| Error::InvalidInstance(format!("hyperedge {} uses unknown vertex {v}", e.name)))?;
                if ids.contains(&i) {
                    return Err(Error::InvalidInstance(format!("hyperedge {} repeats vertex {v}", e.name)));
                }
                ids.push(i);
            }
            if Some(e.problem.labels()) != labels {
                return Err(Error::InvalidInstance(format!("hyperedge {} has a different input domain", e.name)));
            }
            if e.witnesses.len() != e.problem.len() {
                return Err(Error::DimensionMismatch(format!("hyperedge {} has the wrong number of witnesses", e.name)));
            }
            let h = e.problem.oracle_dim();
            if e.witnesses.plus.iter().chain(&e.witnesses.minus).any(|w| w.len() != h) {
                return Err(Error::DimensionMismatch(format!("witnesses of hyperedge {} do not match its oracle", e.name)));
            }
            incident.push(ids);
        }
        Ok(Self {
            vertices,
            boundary,
            edges,
            index,
            incident,
        })
    }

    pub fn vertices(&self) -> &[String] {
        &self.vertices
    }

    pub fn boundary(&self) -> &[String] {
        &self.boundary
    }

    pub fn edges(&self) -> &[PlacedHyperedge] {
        &self.edges
    }

    pub fn labels(&self) -> Vec<String> {
        self.edges.first().map(|e| e.problem.labels()).unwrap_or_default()
    }

    pub fn index_of(&self, v: &str) -> Option<usize> {
        self.index.get(v).copied()
    }

    /// Vertex indices of hyperedge `e`, aligned with its problem's vertices.
    pub fn edge_vertices(&self, e: usize) -> &[usize] {
        &self.incident[e]
    }

    fn is_boundary(&self) -> Vec<bool> {
        let mut out = vec![false; self.vertices.len()];
        for b in &self.boundary {
            out[self.index[b]] = true;
        }
        out
    }
}

/// Per-input, per-vertex residuals of the composition conditions.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    /// Net flow at internal vertices (zero at boundary vertices).
    pub flow_residuals: DMatrix<f64>,
    /// Spread of the potentials hyperedges assign to each vertex.
    pub potential_residuals: DMatrix<f64>,
    pub max_flow_residual: f64,
    pub max_potential_residual: f64,
    /// `(input, vertex, residual)` of the worst flow violation.
    pub worst_flow: Option<(String, String, f64)>,
    pub worst_potential: Option<(String, String, f64)>,
    pub valid: bool,
}

/// Check flow conservation at internal vertices and potential consistency at
/// every vertex.
pub fn validate_instance(inst: &HypergraphInstance, tol: f64) -> ValidationReport {
    let labels = inst.labels();
    let (n, nv) = (labels.len(), inst.vertices.len());
    let boundary = inst.is_boundary();
    let mut flow = DMatrix::zeros(n, nv);
    let mut potential = DMatrix::zeros(n, nv);
    let mut worst_flow: Option<(String, String, f64)> = None;
    let mut worst_potential: Option<(String, String, f64)> = None;
    for x in 0..n {
        let mut net = vec![0.0; nv];
        let mut lo = vec![f64::INFINITY; nv];
        let mut hi = vec![f64::NEG_INFINITY; nv];
        for (e, edge) in inst.edges.iter().enumerate() {
            let inp = &edge.problem.inputs()[x];
            for (k, &v) in inst.incident[e].iter().enumerate() {
                net[v] += inp.flow[k];
                lo[v] = lo[v].min(inp.potential[k]);
                hi[v] = hi[v].max(inp.potential[k]);
            }
        }
        for v in 0..nv {
            let f = if boundary[v] { 0.0 } else { net[v].abs() };
            let p = if hi[v] >= lo[v] { hi[v] - lo[v] } else { 0.0 };
            flow[(x, v)] = f;
            potential[(x, v)] = p;
            if worst_flow.as_ref().map_or(f > 0.0, |w| f > w.2) {
                worst_flow = Some((labels[x].clone(), inst.vertices[v].clone(), f));
            }
            if worst_potential.as_ref().map_or(p > 0.0, |w| p > w.2) {
                worst_potential = Some((labels[x].clone(), inst.vertices[v].clone(), p));
            }
        }
    }
    let max_flow_residual = worst_flow.as_ref().map_or(0.0, |w| w.2);
    let max_potential_residual = worst_potential.as_ref().map_or(0.0, |w| w.2);
    ValidationReport {
        flow_residuals: flow,
        potential_residuals: potential,
        max_flow_residual,
        max_potential_residual,
        worst_flow,
        worst_potential,
        valid: max_flow_residual <= tol && max_potential_residual <= tol,
    }
}

/// Boundary problem and combined witnesses of a composition.
#[derive(Debug, Clone, PartialEq)]
pub struct ComposedResult {
    pub problem: HyperedgeProblem,
    pub witnesses: WitnessFamily,
    /// `(R⁺_x, R⁻_x)` per input.
    pub sizes: Vec<(f64, f64)>,
    /// `(hyperedge name, offset, dimension)` of each summand of the oracle
    /// space.
    pub layout: Vec<(String, usize, usize)>,
}

impl ComposedResult {
    pub fn check(&self, tol: f64) -> Result<reflection::FeasibilityReport> {
        reflection::check_hyperedge(&self.problem, &self.witnesses, tol)
    }
}

/// Tolerance used by [`compose`] to validate its instance.
pub const COMPOSE_TOL: f64 = 1e-9;

/// Combine the hyperedges of a valid instance. Each hyperedge's witnesses are
/// first rescaled by its weight `w_e`, so sizes add up to
/// `Σ_e w_e^{±1}(R^e)^±_x`.
pub fn compose(inst: &HypergraphInstance) -> Result<ComposedResult> {
    let report = validate_instance(inst, COMPOSE_TOL);
    if !report.valid {
        let describe = |w: &Option<(String, String, f64)>| {
            w.as_ref()
                .map(|(x, v, r)| format!("input {x} at vertex {v} ({r:.3e})"))
                .unwrap_or_default()
        };
        return Err(Error::InvalidInstance(if report.max_flow_residual > COMPOSE_TOL {
            format!("net flow does not vanish: {}", describe(&report.worst_flow))
        } else {
            format!("potentials disagree: {}", describe(&report.worst_potential))
        }));
    }
    let labels = inst.labels();
    let n = labels.len();

    let mut scaled = Vec::with_capacity(inst.edges.len());
    let mut layout = Vec::with_capacity(inst.edges.len());
    let mut offset = 0;
    for e in &inst.edges {
        let w = if e.weight == 1.0 {
            e.witnesses.clone()
        } else {
            // D = I/√w keeps the states and moves the weight into the witnesses.
            let v = e.problem.vertices().len();
            let d = CMatrix::identity(v, v).unscale(e.weight.sqrt());
            let (_, w) = reflection::rescale(
                &e.problem.to_reflection(),
                &e.witnesses,
                &d,
                C64::new(e.weight.sqrt(), 0.0),
                C64::new(1.0 / e.weight.sqrt(), 0.0),
            )?;
            w
        };
        let dim = e.problem.oracle_dim();
        layout.push((e.name.clone(), offset, dim));
        offset += dim;
        scaled.push(w);
    }

    let bidx: Vec<usize> = inst.boundary.iter().map(|b| inst.index[b]).collect();
    let mut inputs = Vec::with_capacity(n);
    let mut plus = Vec::with_capacity(n);
    let mut minus = Vec::with_capacity(n);
    for x in 0..n {
        let nv = inst.vertices.len();
        let mut net = vec![0.0; nv];
        let mut pot: Vec<Option<f64>> = vec![None; nv];
        for (e, edge) in inst.edges.iter().enumerate() {
            let inp = &edge.problem.inputs()[x];
            for (k, &v) in inst.incident[e].iter().enumerate() {
                net[v] += inp.flow[k];
                pot[v].get_or_insert(inp.potential[k]);
            }
        }
        let oracles: Vec<&Involution> = inst.edges.iter().map(|e| &e.problem.inputs()[x].oracle).collect();
        inputs.push(HyperedgeInput {
            label: labels[x].clone(),
            flow: DVector::from_iterator(bidx.len(), bidx.iter().map(|&v| net[v])),
            potential: DVector::from_iterator(bidx.len(), bidx.iter().map(|&v| pot[v].unwrap_or(0.0))),
            oracle: Involution::direct_sum(&oracles),
        });
        plus.push(concat(&scaled.iter().map(|w| w.plus[x].clone()).collect::<Vec<CVector>>()));
        minus.push(concat(&scaled.iter().map(|w| w.minus[x].clone()).collect::<Vec<CVector>>()));
    }
    let problem = match HyperedgeProblem::new(inst.boundary.clone(), inputs.clone()) {
        Ok(p) => p,
        Err(err) => {
            warn!("composed boundary problem is not a proper hyperedge problem: {err}");
            HyperedgeProblem::from_parts(inst.boundary.clone(), inputs)
        }
    };
    let witnesses = WitnessFamily::new(plus, minus);
    let sizes = witnesses.sizes();
    Ok(ComposedResult {
        problem,
        witnesses,
        sizes,
        layout,
    })
}

/// Write `target` as `a·𝟙 + b·base`. Returns `None` if impossible.
/// `b = 0` whenever `base` is constant.
pub fn fit_potential(base: &DVector<f64>, target: &DVector<f64>) -> Option<(f64, f64)> {
    let n = base.len();
    if n == 0 {
        return Some((0.0, 0.0));
    }
    let (bm, tm) = (base.mean(), target.mean());
    let centered = base.add_scalar(-bm);
    let var = centered.norm_squared();
    let scale = base.amax().max(1.0);
    let b = if var <= 1e-24 * scale * scale {
        0.0
    } else {
        centered.dot(&target.add_scalar(-tm)) / var
    };
    let a = tm - b * bm;
    let residual = (target - (base * b).add_scalar(a)).amax();
    (residual <= 1e-9 * target.amax().max(1.0)).then_some((a, b))
}

/// Scale a hyperedge problem per input: `δ'_x = f_x δ_x` and
/// `U'_x = a_x𝟙 + b_x U_x = potentials[x]`, with witnesses
/// `(f_x w⁺_x, b_x w⁻_x)`. Feasibility is preserved.
pub fn place(
    problem: &HyperedgeProblem,
    witnesses: &WitnessFamily,
    flow_scale: &[f64],
    potentials: &[DVector<f64>],
) -> Result<(HyperedgeProblem, WitnessFamily)> {
    let n = problem.len();
    if flow_scale.len() != n || potentials.len() != n {
        return Err(Error::DimensionMismatch("need one flow scale and one potential per input".into()));
    }
    let mut inputs = Vec::with_capacity(n);
    let mut plus = Vec::with_capacity(n);
    let mut minus = Vec::with_capacity(n);
    for (x, inp) in problem.inputs().iter().enumerate() {
        let (_, b) = fit_potential(&inp.potential, &potentials[x]).ok_or_else(|| {
            Error::UnsupportedShape(format!(
                "input {}: the requested potential is not an affine image of the hyperedge's potential",
                inp.label
            ))
        })?;
        let f = flow_scale[x];
        inputs.push(HyperedgeInput {
            label: inp.label.clone(),
            flow: &inp.flow * f,
            potential: potentials[x].clone(),
            oracle: inp.oracle.clone(),
        });
        plus.push(witnesses.plus[x].scale(f));
        minus.push(witnesses.minus[x].scale(b));
    }
    Ok((
        HyperedgeProblem::new(problem.vertices().to_vec(), inputs)?,
        WitnessFamily::new(plus, minus),
    ))
}

/// Flow choice for [`resistance_cut`].
#[derive(Debug, Clone, PartialEq)]
pub enum FlowSpec {
    /// The minimum-energy unit flow.
    Auto,
    /// Per input, per hyperedge, the multiple of its base flow to send.
    Given(Vec<Vec<f64>>),
}

/// Cut choice for [`resistance_cut`].
#[derive(Debug, Clone, PartialEq)]
pub enum CutSpec {
    /// All hyperedges leaving the flow's component.
    Auto,
    /// Per input, hyperedge indices.
    Given(Vec<Vec<usize>>),
}

/// Outcome of [`resistance_cut`].
#[derive(Debug, Clone, PartialEq)]
pub struct CutReport {
    pub composed: ComposedResult,
    /// The boundary vertex the flow reaches, per input.
    pub outputs: Vec<String>,
    pub cuts: Vec<Vec<usize>>,
    /// `(Σ_e w_e f_e² (R^e)⁺, Σ_{e∈C} (R^e)⁻/w_e)` per input; the first entry
    /// is the effective resistance when the flow is automatic.
    pub predicted: Vec<(f64, f64)>,
}

/// `(u, v, c)` with `δ = c(1_u − 1_v)`, `c > 0`, in local vertex indices.
fn flow_pair(inp: &HyperedgeInput, edge: &str) -> Result<Option<(usize, usize, f64)>> {
    let scale = inp.flow.amax();
    if scale == 0.0 {
        return Ok(None);
    }
    let support: Vec<usize> = (0..inp.flow.len()).filter(|&k| inp.flow[k].abs() > 1e-12 * scale).collect();
    match support.as_slice() {
        [a, b] => {
            let (u, v) = if inp.flow[*a] > 0.0 { (*a, *b) } else { (*b, *a) };
            Ok(Some((u, v, inp.flow[u])))
        }
        _ => Err(Error::UnsupportedShape(format!(
            "hyperedge {edge}, input {}: net-flow is supported on {} vertices",
            inp.label,
            support.len()
        ))),
    }
}

fn floor_resistances(rs: &mut [f64]) {
    let top = rs.iter().cloned().fold(1.0f64, f64::max);
    for r in rs.iter_mut() {
        if *r <= RESISTANCE_FLOOR * top {
            *r = RESISTANCE_FLOOR * top;
        }
    }
}

/// Per-input flow scales and potentials, then compose.
fn place_all(
    inst: &HypergraphInstance,
    boundary: Vec<String>,
    scales: &[Vec<f64>],
    potentials: &[Vec<f64>],
) -> Result<ComposedResult> {
    let n = inst.labels().len();
    let mut edges = Vec::with_capacity(inst.edges.len());
    for (e, edge) in inst.edges.iter().enumerate() {
        let f: Vec<f64> = (0..n).map(|x| scales[x][e]).collect();
        let u: Vec<DVector<f64>> = (0..n)
            .map(|x| DVector::from_iterator(inst.incident[e].len(), inst.incident[e].iter().map(|&v| potentials[x][v])))
            .collect();
        let (problem, witnesses) = place(&edge.problem, &edge.witnesses, &f, &u)
            .map_err(|err| Error::UnsupportedShape(format!("hyperedge {}: {err}", edge.name)))?;
        edges.push(PlacedHyperedge {
            name: edge.name.clone(),
            vertices: edge.vertices.clone(),
            problem,
            witnesses,
            weight: edge.weight,
        });
    }
    compose(&HypergraphInstance::new(inst.vertices.clone(), boundary, edges)?)
}

/// Minimum-energy flow of `amount` from `s` to `t` over the listed pairs.
/// Returns the multiple of each pair's base flow and the energy.
fn route(nv: usize, pairs: &[(usize, usize, usize, f64, f64)], s: usize, t: usize) -> Result<(Vec<(usize, f64)>, f64)> {
    // pairs: (edge, u, v, c, r) with base flow c(1_u − 1_v) and resistance r
    // per unit of physical flow.
    if pairs.is_empty() {
        return Ok((Vec::new(), 0.0));
    }
    let mut rs: Vec<f64> = pairs.iter().map(|p| p.4).collect();
    floor_resistances(&mut rs);
    let edges = pairs
        .iter()
        .zip(&rs)
        .map(|(p, &r)| Edge {
            tail: p.1,
            head: p.2,
            resistance: r,
        })
        .collect();
    let g = WeightedGraph::new((0..nv).map(|i| i.to_string()).collect(), edges)?;
    let mut delta = DVector::zeros(nv);
    delta[s] += 1.0;
    delta[t] -= 1.0;
    let (_, flow) = markov::resistance(&g, &delta)?;
    let out: Vec<(usize, f64)> = pairs.iter().zip(flow.values.iter()).map(|(p, &phi)| (p.0, phi / p.3)).collect();
    let energy = pairs
        .iter()
        .zip(flow.values.iter())
        .map(|(p, &phi)| phi * phi * p.4)
        .sum();
    Ok((out, energy))
}

/// Resistance-cut construction for function evaluation and database
/// updates.
///
/// Every hyperedge's flow must be supported on at most two vertices. Per
/// input, the flow-connected pairs form a graph `G(x)` that must link
/// `source` to exactly one other boundary vertex `t_x`. Unit flow is routed
/// from `source` to `t_x`; the potential is 1 on everything reachable from
/// them and 0 elsewhere.
pub fn resistance_cut(inst: &HypergraphInstance, source: &str, flow: &FlowSpec, cut: &CutSpec) -> Result<CutReport> {
    let s = inst
        .index_of(source)
        .ok_or_else(|| Error::InvalidInstance(format!("source {source} is not a vertex")))?;
    if !inst.boundary.iter().any(|b| b == source) {
        return Err(Error::InvalidInstance(format!("source {source} is not a boundary vertex")));
    }
    let labels = inst.labels();
    let boundary = inst.is_boundary();
    let nv = inst.vertices.len();
    let ne = inst.edges.len();
    let mut scales = Vec::with_capacity(labels.len());
    let mut potentials = Vec::with_capacity(labels.len());
    let mut outputs = Vec::with_capacity(labels.len());
    let mut cuts = Vec::with_capacity(labels.len());
    let mut predicted = Vec::with_capacity(labels.len());

    for (x, label) in labels.iter().enumerate() {
        // Flow-connected pairs, in hypergraph indices.
        let mut pairs = Vec::new();
        for (e, edge) in inst.edges.iter().enumerate() {
            let inp = &edge.problem.inputs()[x];
            if let Some((u, v, c)) = flow_pair(inp, &edge.name)? {
                let r = edge.weight * edge.witnesses.plus[x].norm_squared() / (c * c);
                pairs.push((e, inst.incident[e][u], inst.incident[e][v], c, r));
            }
        }
        let mut adj = vec![Vec::new(); nv];
        for &(e, u, v, _, _) in &pairs {
            adj[u].push((v, e));
            adj[v].push((u, e));
        }
        let component = bfs(&[s], &adj, |_| true);
        let targets: Vec<usize> = (0..nv).filter(|&v| component[v] && boundary[v] && v != s).collect();
        let t = match targets.as_slice() {
            [t] => *t,
            [] => return Err(Error::NotConnected(label.clone())),
            _ => return Err(Error::NotCut(label.clone())),
        };
        outputs.push(inst.vertices[t].clone());

        let mut f = vec![0.0; ne];
        let plus_cost = match flow {
            FlowSpec::Auto => {
                let (routed, energy) = route(nv, &pairs, s, t)?;
                for (e, val) in routed {
                    f[e] += val;
                }
                energy
            }
            FlowSpec::Given(given) => {
                let row = given
                    .get(x)
                    .ok_or_else(|| Error::DimensionMismatch(format!("no flow given for input {label}")))?;
                if row.len() != ne {
                    return Err(Error::DimensionMismatch(format!("flow for input {label} has the wrong length")));
                }
                let mut cost = 0.0;
                for (e, &val) in row.iter().enumerate() {
                    match pairs.iter().find(|p| p.0 == e) {
                        Some(p) => cost += val * val * p.3 * p.3 * p.4,
                        None if val != 0.0 => {
                            return Err(Error::InvalidInstance(format!(
                                "input {label}: hyperedge {} carries no flow",
                                inst.edges[e].name
                            )))
                        }
                        None => {}
                    }
                    f[e] = val;
                }
                cost
            }
        };

        let (reach, cut_edges) = match cut {
            CutSpec::Auto => {
                let reach = bfs(&[s, t], &adj, |_| true);
                let cut_edges = (0..ne)
                    .filter(|&e| {
                        let vs = &inst.incident[e];
                        vs.iter().any(|&v| reach[v]) && vs.iter().any(|&v| !reach[v])
                    })
                    .collect();
                (reach, cut_edges)
            }
            CutSpec::Given(given) => {
                let cut_edges: Vec<usize> = given
                    .get(x)
                    .ok_or_else(|| Error::DimensionMismatch(format!("no cut given for input {label}")))?
                    .clone();
                let in_cut: BTreeSet<usize> = cut_edges.iter().copied().collect();
                // Hyperedges outside the cut can be crossed between any two of
                // their vertices.
                let mut full = adj.clone();
                for e in (0..ne).filter(|e| !in_cut.contains(e)) {
                    let vs = &inst.incident[e];
                    for &a in vs {
                        for &b in vs {
                            if a != b {
                                full[a].push((b, e));
                            }
                        }
                    }
                }
                let reach = bfs(&[s, t], &full, |_| true);
                (reach, cut_edges)
            }
        };
        if let Some(v) = (0..nv).find(|&v| reach[v] && boundary[v] && v != s && v != t) {
            return Err(Error::NotCut(format!("{label} (boundary vertex {} is reachable)", inst.vertices[v])));
        }
        let minus_cost = cut_edges
            .iter()
            .map(|&e| inst.edges[e].witnesses.minus[x].norm_squared() / inst.edges[e].weight)
            .sum();
        predicted.push((plus_cost, minus_cost));
        cuts.push(cut_edges);
        scales.push(f);
        potentials.push((0..nv).map(|v| if reach[v] { 1.0 } else { 0.0 }).collect());
    }
    let composed = place_all(inst, inst.boundary.clone(), &scales, &potentials)?;
    Ok(CutReport {
        composed,
        outputs,
        cuts,
        predicted,
    })
}

fn bfs(starts: &[usize], adj: &[Vec<(usize, usize)>], open: impl Fn(usize) -> bool) -> Vec<bool> {
    let mut seen = vec![false; adj.len()];
    let mut queue = VecDeque::new();
    for &s in starts {
        if !seen[s] {
            seen[s] = true;
            queue.push_back(s);
        }
    }
    while let Some(u) = queue.pop_front() {
        for &(v, e) in &adj[u] {
            if !seen[v] && open(e) {
                seen[v] = true;
                queue.push_back(v);
            }
        }
    }
    seen
}

/// One edge of a classic graph composition: a two-vertex span-program
/// hyperedge placed on `u → v`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassicEdge {
    pub name: String,
    pub u: String,
    pub v: String,
    pub problem: HyperedgeProblem,
    pub witnesses: WitnessFamily,
}

/// Outcome of [`classic_embed`].
#[derive(Debug, Clone, PartialEq)]
pub struct ClassicReport {
    pub composed: ComposedResult,
    /// Whether `s` and `t` are connected in `G(x)`.
    pub values: Vec<bool>,
    /// `R_eff(G(x), R⁺; s↔t)` for positive inputs and
    /// `R_eff(Ḡ(x), 1/R⁻; s↔t)⁻¹` for negative ones.
    pub predicted: Vec<f64>,
}

/// Embed a classic graph composition of span programs. Positive inputs send
/// the minimum-energy unit `st`-flow through `G(x)`; negative inputs use the
/// electrical potential of the contracted graph `Ḡ(x)` with `U_s − U_t = 1`.
pub fn classic_embed(
    vertices: Vec<String>,
    edges: Vec<ClassicEdge>,
    s: &str,
    t: &str,
    declared: Option<&[bool]>,
) -> Result<ClassicReport> {
    let placed = edges
        .iter()
        .map(|e| {
            if e.problem.vertices().len() != 2 {
                return Err(Error::UnsupportedShape(format!("edge {} is not a two-vertex hyperedge", e.name)));
            }
            Ok(PlacedHyperedge::new(e.name.clone(), vec![e.u.clone(), e.v.clone()], e.problem.clone(), e.witnesses.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    let inst = HypergraphInstance::new(vertices, vec![s.to_string(), t.to_string()], placed)?;
    let (si, ti) = (inst.index_of(s).unwrap(), inst.index_of(t).unwrap());
    if si == ti {
        return Err(Error::InvalidInstance("source and sink coincide".into()));
    }
    let labels = inst.labels();
    let nv = inst.vertices.len();
    let ne = edges.len();
    let mut scales = Vec::new();
    let mut potentials = Vec::new();
    let mut values = Vec::new();
    let mut predicted = Vec::new();
    for (x, label) in labels.iter().enumerate() {
        let mut pairs = Vec::new();
        for (e, edge) in inst.edges.iter().enumerate() {
            if let Some((u, v, c)) = flow_pair(&edge.problem.inputs()[x], &edge.name)? {
                let r = edge.witnesses.plus[x].norm_squared() / (c * c);
                pairs.push((e, inst.incident[e][u], inst.incident[e][v], c, r));
            }
        }
        let mut adj = vec![Vec::new(); nv];
        for &(e, u, v, _, _) in &pairs {
            adj[u].push((v, e));
            adj[v].push((u, e));
        }
        let comp = components(&adj);
        let positive = comp[si] == comp[ti];
        if let Some(d) = declared {
            if d.get(x).copied() != Some(positive) {
                return Err(Error::NotConnected(format!(
                    "{label} (declared {}, but s and t are {}connected)",
                    if d.get(x).copied().unwrap_or(false) { "positive" } else { "negative" },
                    if positive { "" } else { "not " }
                )));
            }
        }
        values.push(positive);
        let mut f = vec![0.0; ne];
        if positive {
            let (routed, energy) = route(nv, &pairs, si, ti)?;
            for (e, val) in routed {
                f[e] += val;
            }
            predicted.push(energy);
            potentials.push(vec![0.0; nv]);
        } else {
            let (u, conductance) = contracted_potential(&inst, x, &comp, si, ti)?;
            predicted.push(conductance);
            potentials.push(u);
        }
        scales.push(f);
    }
    let composed = place_all(&inst, inst.boundary.clone(), &scales, &potentials)?;
    Ok(ClassicReport {
        composed,
        values,
        predicted,
    })
}

fn components(adj: &[Vec<(usize, usize)>]) -> Vec<usize> {
    let mut comp = vec![usize::MAX; adj.len()];
    let mut next = 0;
    for v in 0..adj.len() {
        if comp[v] == usize::MAX {
            for (u, &seen) in bfs(&[v], adj, |_| true).iter().enumerate() {
                if seen {
                    comp[u] = next;
                }
            }
            next += 1;
        }
    }
    comp
}

/// Electrical potential on `Ḡ(x)` with conductances `R⁻_e`, normalized to
/// `U_s = 1`, `U_t = 0`, lifted back to the original vertices. Also returns
/// the effective conductance `Σ_e R⁻_e (ΔU_e)²`.
fn contracted_potential(
    inst: &HypergraphInstance,
    x: usize,
    comp: &[usize],
    s: usize,
    t: usize,
) -> Result<(Vec<f64>, f64)> {
    let nc = comp.iter().max().map_or(0, |m| m + 1);
    let mut edges = Vec::new();
    for (e, edge) in inst.edges.iter().enumerate() {
        let g = edge.witnesses.minus[x].norm_squared();
        let (a, b) = (comp[inst.incident[e][0]], comp[inst.incident[e][1]]);
        if a != b && g > 0.0 {
            edges.push(Edge {
                tail: a,
                head: b,
                resistance: 1.0 / g,
            });
        }
    }
    let graph = WeightedGraph::new((0..nc).map(|i| i.to_string()).collect(), edges)?;
    let cc = graph.components();
    let (cs, ct) = (comp[s], comp[t]);
    let mut u = vec![0.0; nc];
    let mut conductance = 0.0;
    if cc[cs] != cc[ct] {
        for c in 0..nc {
            if cc[c] == cc[cs] {
                u[c] = 1.0;
            }
        }
    } else {
        let lp = crate::numerics::pseudoinverse(&graph.laplacian(), crate::numerics::DEFAULT_RANK_TOL);
        let p = lp.column(cs) - lp.column(ct);
        let r = p[cs] - p[ct];
        for c in 0..nc {
            if cc[c] == cc[cs] {
                u[c] = (p[c] - p[ct]) / r;
            }
        }
        conductance = 1.0 / r;
    }
    Ok((comp.iter().map(|&c| u[c]).collect(), conductance))
}

/// Name of the shared sink in [`divide_conquer`].
pub const DC_SINK: &str = "⊤";

/// One branch `h^{(s)}` of a divide-and-conquer composition: a two-vertex
/// span-program hyperedge whose flow runs from its first vertex to its
/// second.
#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub output: String,
    pub problem: HyperedgeProblem,
    pub witnesses: WitnessFamily,
}

/// Outcome of [`divide_conquer`].
#[derive(Debug, Clone, PartialEq)]
pub struct DivideReport {
    pub composed: ComposedResult,
    /// `f_aux(x)` per input.
    pub outputs: Vec<String>,
    /// `h^{(f_aux(x))}(x)` per input.
    pub values: Vec<bool>,
}

/// Run the auxiliary function-evaluation hyperedge, then the branch hanging
/// off its output. Vertex 0 of `aux` is its source; its other vertices are
/// the output labels.
pub fn divide_conquer(aux: &HyperedgeProblem, aux_witnesses: &WitnessFamily, branches: &[Branch]) -> Result<DivideReport> {
    let av = aux.vertices();
    if av.is_empty() {
        return Err(Error::InvalidInstance("auxiliary hyperedge has no vertices".into()));
    }
    let outs: BTreeSet<&String> = av[1..].iter().collect();
    let given: BTreeSet<&String> = branches.iter().map(|b| &b.output).collect();
    if outs != given || branches.len() != av.len() - 1 {
        return Err(Error::OutputMismatch(format!(
            "auxiliary outputs {:?}, branches {:?}",
            outs, given
        )));
    }
    if av.iter().any(|v| v == DC_SINK) {
        return Err(Error::InvalidInstance(format!("vertex name {DC_SINK} is reserved")));
    }
    let source = av[0].clone();
    let mut vertices = av.to_vec();
    vertices.push(DC_SINK.to_string());
    let mut edges = vec![PlacedHyperedge::new("aux", av.to_vec(), aux.clone(), aux_witnesses.clone())];
    for b in branches {
        if b.problem.vertices().len() != 2 {
            return Err(Error::UnsupportedShape(format!("branch {} is not a two-vertex hyperedge", b.output)));
        }
        edges.push(PlacedHyperedge::new(
            format!("h[{}]", b.output),
            vec![b.output.clone(), DC_SINK.to_string()],
            b.problem.clone(),
            b.witnesses.clone(),
        ));
    }
    let inst = HypergraphInstance::new(vertices, vec![source.clone(), DC_SINK.to_string()], edges)?;
    let labels = inst.labels();
    let nv = inst.vertices.len();
    let mut scales = Vec::new();
    let mut potentials = Vec::new();
    let mut outputs = Vec::new();
    let mut values = Vec::new();
    for (x, label) in labels.iter().enumerate() {
        let inp = &aux.inputs()[x];
        let out = match flow_pair(inp, "aux")? {
            Some((0, v, c)) if (c - 1.0).abs() < 1e-9 => v,
            _ => {
                return Err(Error::UnsupportedShape(format!(
                    "auxiliary hyperedge is not function evaluation at input {label}"
                )))
            }
        };
        let branch_edge = 1 + branches.iter().position(|br| br.output == av[out]).unwrap();
        let pair = flow_pair(&inst.edges[branch_edge].problem.inputs()[x], &inst.edges[branch_edge].name)?;
        let positive = match pair {
            Some((0, 1, c)) => Some(c),
            None => None,
            Some(_) => {
                return Err(Error::UnsupportedShape(format!(
                    "branch {} sends flow towards its output at input {label}",
                    av[out]
                )))
            }
        };
        outputs.push(av[out].clone());
        values.push(positive.is_some());
        let mut f = vec![0.0; inst.edges.len()];
        let mut u = vec![0.0; nv];
        match positive {
            Some(c) => {
                f[0] = 1.0;
                f[branch_edge] = 1.0 / c;
            }
            None => {
                u[0] = 1.0;
                u[out] = 1.0;
            }
        }
        scales.push(f);
        potentials.push(u);
    }
    let composed = place_all(&inst, inst.boundary.clone(), &scales, &potentials)?;
    Ok(DivideReport {
        composed,
        outputs,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reflection::{check_hyperedge, full_query_hyperedge, single_query_hyperedge, BOTTOM};
    use proptest::prelude::*;

    fn s(v: &str) -> String {
        v.to_string()
    }

    fn labels(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("x{i}")).collect()
    }

    fn dv(xs: &[f64]) -> DVector<f64> {
        DVector::from_vec(xs.to_vec())
    }

    /// Function evaluation `a → b` on two vertices, the same for every input.
    fn transfer(n: usize, flip: bool) -> (HyperedgeProblem, WitnessFamily) {
        let f = if flip { dv(&[-1.0, 1.0]) } else { dv(&[1.0, -1.0]) };
        full_query_hyperedge(vec![s("a"), s("b")], &labels(n), &vec![f; n], &vec![dv(&[1.0, 1.0]); n]).unwrap()
    }

    #[test]
    fn single_edge_all_boundary() {
        let (h, w) = single_query_hyperedge(&labels(2), &[true, false]);
        let inst = HypergraphInstance::new(
            vec![s("s"), s("t")],
            vec![s("s"), s("t")],
            vec![PlacedHyperedge::new("e", vec![s("s"), s("t")], h.clone(), w.clone())],
        )
        .unwrap();
        assert!(validate_instance(&inst, 1e-12).valid);
        let out = compose(&inst).unwrap();
        assert_eq!(out.sizes, w.sizes());
        assert!(out.check(1e-12).unwrap().feasible);
    }

    fn chain(flip_second: bool) -> HypergraphInstance {
        let (h1, w1) = transfer(2, false);
        let (h2, w2) = transfer(2, flip_second);
        HypergraphInstance::new(
            vec![s("s"), s("m"), s("t")],
            vec![s("s"), s("t")],
            vec![
                PlacedHyperedge::new("e1", vec![s("s"), s("m")], h1, w1),
                PlacedHyperedge::new("e2", vec![s("m"), s("t")], h2, w2),
            ],
        )
        .unwrap()
    }

    #[test]
    fn chained_function_evaluation_is_valid() {
        let inst = chain(false);
        let rep = validate_instance(&inst, 1e-12);
        assert!(rep.valid);
        let out = compose(&inst).unwrap();
        assert!(out.check(1e-10).unwrap().feasible);
        assert_eq!(out.problem.inputs()[0].flow, dv(&[1.0, -1.0]));
    }

    #[test]
    fn reversed_flow_is_reported() {
        let rep = validate_instance(&chain(true), 1e-12);
        assert!(!rep.valid);
        assert!((rep.max_flow_residual - 2.0).abs() < 1e-15);
        assert_eq!(rep.worst_flow.as_ref().unwrap().1, "m");
        assert!(matches!(compose(&chain(true)), Err(Error::InvalidInstance(_))));
    }

    #[test]
    fn weights_rescale_contributions() {
        let (h, w) = single_query_hyperedge(&labels(2), &[true, false]);
        let edge = PlacedHyperedge::new("e", vec![s("s"), s("t")], h, w.clone()).with_weight(2.0);
        let inst = HypergraphInstance::new(vec![s("s"), s("t")], vec![s("s"), s("t")], vec![edge]).unwrap();
        let out = compose(&inst).unwrap();
        assert!((out.sizes[0].0 - 2.0).abs() < 1e-12);
        assert!((out.sizes[1].1 - 0.5).abs() < 1e-12);
        assert!(out.check(1e-12).unwrap().feasible);
    }

    #[test]
    fn fit_potential_cases() {
        assert_eq!(fit_potential(&dv(&[0.0, -1.0]), &dv(&[1.0, 0.0])), Some((1.0, 1.0)));
        assert_eq!(fit_potential(&dv(&[0.0, -1.0]), &dv(&[0.0, 1.0])), Some((0.0, -1.0)));
        assert_eq!(fit_potential(&dv(&[0.0, 0.0]), &dv(&[3.0, 3.0])), Some((3.0, 0.0)));
        assert_eq!(fit_potential(&dv(&[0.0, 0.0]), &dv(&[0.0, 1.0])), None);
        assert_eq!(fit_potential(&dv(&[0.0, 0.0, 1.0]), &dv(&[0.0, 1.0, 1.0])), None);
    }

    /// Single-query edge on `(u, v)` computing `x_j = b`, over all of
    /// `{0,1}^n`.
    fn query_edge(name: &str, u: &str, v: &str, n: usize, j: usize, b: bool) -> ClassicEdge {
        let inputs: Vec<Vec<bool>> = (0..1usize << n).map(|m| (0..n).map(|i| m >> i & 1 == 1).collect()).collect();
        let names: Vec<String> = inputs
            .iter()
            .map(|x| x.iter().map(|&b| if b { '1' } else { '0' }).collect())
            .collect();
        let values: Vec<bool> = inputs.iter().map(|x| x[j] == b).collect();
        let (problem, witnesses) = single_query_hyperedge(&names, &values);
        ClassicEdge {
            name: name.into(),
            u: u.into(),
            v: v.into(),
            problem,
            witnesses,
        }
    }

    fn index(x: &str) -> usize {
        x.chars().enumerate().map(|(i, c)| if c == '1' { 1 << i } else { 0 }).sum()
    }

    #[test]
    fn series_and() {
        let edges = vec![query_edge("e1", "s", "m", 2, 0, true), query_edge("e2", "m", "t", 2, 1, true)];
        let rep = classic_embed(vec![s("s"), s("m"), s("t")], edges, "s", "t", None).unwrap();
        let x = index("11");
        assert!(rep.values[x]);
        assert!((rep.composed.sizes[x].0 - 2.0).abs() < 1e-9);
        // x = 10: cut at the second edge.
        let y = index("10");
        assert!(!rep.values[y]);
        assert!((rep.composed.sizes[y].1 - 1.0).abs() < 1e-9);
        assert!(rep.composed.check(1e-9).unwrap().feasible);
    }

    #[test]
    fn parallel_or() {
        let edges = vec![query_edge("e1", "s", "t", 2, 0, true), query_edge("e2", "s", "t", 2, 1, true)];
        let rep = classic_embed(vec![s("s"), s("t")], edges, "s", "t", None).unwrap();
        let sizes = &rep.composed.sizes;
        assert!((sizes[index("11")].0 - 0.5).abs() < 1e-9);
        assert!((sizes[index("10")].0 - 1.0).abs() < 1e-9);
        assert!((sizes[index("00")].1 - 2.0).abs() < 1e-9);
        for (x, &(p, m)) in sizes.iter().enumerate() {
            let expect = rep.predicted[x];
            let got = if rep.values[x] { p } else { m };
            assert!((got - expect).abs() < 1e-9);
        }
        assert!(rep.composed.check(1e-9).unwrap().feasible);
    }

    #[test]
    fn classic_declared_mismatch() {
        let edges = vec![query_edge("e1", "s", "t", 1, 0, true)];
        let err = classic_embed(vec![s("s"), s("t")], edges, "s", "t", Some(&[true, true])).unwrap_err();
        assert!(matches!(err, Error::NotConnected(_)));
    }

    /// Series chain of `k` edges `[x_j = 1]`, boundary `{s, t}` with a
    /// function-evaluation view: source `s`, the only output `t`.
    fn series_cut(k: usize) -> HypergraphInstance {
        let mut vs = vec![s("s")];
        for i in 1..k {
            vs.push(format!("m{i}"));
        }
        vs.push(s("t"));
        let edges = (0..k)
            .map(|j| {
                let e = query_edge(&format!("e{j}"), &vs[j], &vs[j + 1], k, j, true);
                PlacedHyperedge::new(e.name, vec![e.u, e.v], e.problem, e.witnesses)
            })
            .collect();
        HypergraphInstance::new(vs.clone(), vec![s("s"), s("t")], edges).unwrap()
    }

    #[test]
    fn series_resistance_cut() {
        let k = 3;
        let inst = series_cut(k);
        // Only the all-ones input is connected; restrict to it.
        let all = (1 << k) - 1;
        let restricted = restrict(&inst, &[all]);
        let rep = resistance_cut(&restricted, "s", &FlowSpec::Auto, &CutSpec::Auto).unwrap();
        assert!((rep.composed.sizes[0].0 - k as f64).abs() < 1e-9);
        assert!((rep.predicted[0].0 - k as f64).abs() < 1e-9);
        assert!(rep.cuts[0].is_empty());
        assert_eq!(rep.outputs[0], "t");
        assert!(rep.composed.check(1e-9).unwrap().feasible);
        // Any other input leaves t unreachable.
        let broken = restrict(&inst, &[all - 2]);
        assert!(matches!(
            resistance_cut(&broken, "s", &FlowSpec::Auto, &CutSpec::Auto),
            Err(Error::NotConnected(_))
        ));
    }

    fn restrict(inst: &HypergraphInstance, keep: &[usize]) -> HypergraphInstance {
        let edges = inst
            .edges()
            .iter()
            .map(|e| {
                let inputs: Vec<HyperedgeInput> = keep.iter().map(|&x| e.problem.inputs()[x].clone()).collect();
                let problem = HyperedgeProblem::new(e.problem.vertices().to_vec(), inputs).unwrap();
                let w = WitnessFamily::new(
                    keep.iter().map(|&x| e.witnesses.plus[x].clone()).collect(),
                    keep.iter().map(|&x| e.witnesses.minus[x].clone()).collect(),
                );
                PlacedHyperedge { problem, witnesses: w, ..e.clone() }
            })
            .collect();
        HypergraphInstance::new(inst.vertices().to_vec(), inst.boundary().to_vec(), edges).unwrap()
    }

    #[test]
    fn parallel_duplicate_halves_resistance() {
        let e1 = query_edge("e1", "s", "t", 1, 0, true);
        let e2 = query_edge("e2", "s", "t", 1, 0, true);
        let one = HypergraphInstance::new(
            vec![s("s"), s("t")],
            vec![s("s"), s("t")],
            vec![PlacedHyperedge::new("e1", vec![s("s"), s("t")], e1.problem.clone(), e1.witnesses.clone())],
        )
        .unwrap();
        let two = HypergraphInstance::new(
            vec![s("s"), s("t")],
            vec![s("s"), s("t")],
            vec![
                PlacedHyperedge::new("e1", vec![s("s"), s("t")], e1.problem, e1.witnesses),
                PlacedHyperedge::new("e2", vec![s("s"), s("t")], e2.problem, e2.witnesses),
            ],
        )
        .unwrap();
        let a = resistance_cut(&restrict(&one, &[1]), "s", &FlowSpec::Auto, &CutSpec::Auto).unwrap();
        let b = resistance_cut(&restrict(&two, &[1]), "s", &FlowSpec::Auto, &CutSpec::Auto).unwrap();
        assert!((b.composed.sizes[0].0 - a.composed.sizes[0].0 / 2.0).abs() < 1e-9);
    }

    /// First-marked-index instance with weights `α_j`, `β_j`.
    fn first_marked(n: usize, alpha: &[f64], beta: &[f64]) -> HypergraphInstance {
        let xs: Vec<usize> = (1..1usize << n).collect();
        let names: Vec<String> = xs.iter().map(|m| (0..n).map(|i| if m >> i & 1 == 1 { '1' } else { '0' }).collect()).collect();
        let mut vs: Vec<String> = (1..=n + 1).map(|j| format!("v{j}")).collect();
        vs.extend((1..=n).map(|j| format!("leaf{j}")));
        let mut boundary = vec![s("v1")];
        boundary.extend((1..=n).map(|j| format!("leaf{j}")));
        let mut edges = Vec::new();
        for j in 0..n {
            let zero: Vec<bool> = xs.iter().map(|m| m >> j & 1 == 0).collect();
            let one: Vec<bool> = zero.iter().map(|b| !b).collect();
            let (hz, wz) = single_query_hyperedge(&names, &zero);
            let (ho, wo) = single_query_hyperedge(&names, &one);
            edges.push(
                PlacedHyperedge::new(format!("a{}", j + 1), vec![vs[j].clone(), vs[j + 1].clone()], hz, wz)
                    .with_weight(alpha[j]),
            );
            edges.push(
                PlacedHyperedge::new(format!("b{}", j + 1), vec![vs[j].clone(), format!("leaf{}", j + 1)], ho, wo)
                    .with_weight(beta[j]),
            );
        }
        HypergraphInstance::new(vs, boundary, edges).unwrap()
    }

    #[test]
    fn first_marked_index_sizes() {
        let n = 4;
        let alpha: Vec<f64> = (1..=n).map(|j| 1.0 / (j as f64).sqrt()).collect();
        let beta: Vec<f64> = (1..=n).map(|j| (j as f64).sqrt()).collect();
        let inst = first_marked(n, &alpha, &beta);
        let rep = resistance_cut(&inst, "v1", &FlowSpec::Auto, &CutSpec::Auto).unwrap();
        for (x, &(p, m)) in rep.composed.sizes.iter().enumerate() {
            let mask = x + 1;
            let i = mask.trailing_zeros() as usize; // 0-based first marked index
            let expect_p: f64 = alpha[..i].iter().sum::<f64>() + beta[i];
            let expect_m: f64 = beta[..i].iter().map(|b| 1.0 / b).sum::<f64>() + 1.0 / alpha[i];
            assert!((p - expect_p).abs() < 1e-9, "x={mask:b}: {p} vs {expect_p}");
            assert!((m - expect_m).abs() < 1e-9, "x={mask:b}: {m} vs {expect_m}");
            assert_eq!(rep.outputs[x], format!("leaf{}", i + 1));
        }
        assert!(rep.composed.check(1e-9).unwrap().feasible);
    }

    #[test]
    fn given_cut_must_separate() {
        let n = 2;
        let inst = first_marked(n, &[1.0; 2], &[1.0; 2]);
        // x = 10 (mask 1): flow s → leaf1. Cutting nothing lets everything
        // through, which reaches leaf2.
        let restricted = restrict(&inst, &[0]);
        let err = resistance_cut(&restricted, "v1", &FlowSpec::Auto, &CutSpec::Given(vec![vec![]])).unwrap_err();
        assert!(matches!(err, Error::NotCut(_)));
        // Cutting a1 and b1's siblings is enough.
        let ok = resistance_cut(&restricted, "v1", &FlowSpec::Auto, &CutSpec::Given(vec![vec![0]])).unwrap();
        assert!(ok.composed.check(1e-9).unwrap().feasible);
        assert!((ok.composed.sizes[0].1 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn given_flow_costs_at_least_auto() {
        // Two parallel routes of different resistance; force all flow on the
        // worse one.
        let (h, w) = transfer(1, false);
        let inst = HypergraphInstance::new(
            vec![s("s"), s("t")],
            vec![s("s"), s("t")],
            vec![
                PlacedHyperedge::new("a", vec![s("s"), s("t")], h.clone(), w.clone()),
                PlacedHyperedge::new("b", vec![s("s"), s("t")], h, w).with_weight(3.0),
            ],
        )
        .unwrap();
        let auto = resistance_cut(&inst, "s", &FlowSpec::Auto, &CutSpec::Auto).unwrap();
        let forced = resistance_cut(&inst, "s", &FlowSpec::Given(vec![vec![0.0, 1.0]]), &CutSpec::Auto).unwrap();
        assert!(forced.composed.check(1e-9).unwrap().feasible);
        assert!(auto.composed.sizes[0].0 <= forced.composed.sizes[0].0 + 1e-12);
    }

    #[test]
    fn unsupported_shape_detected() {
        let n = 1;
        let (h, w) = full_query_hyperedge(
            vec![s("a"), s("b"), s("c")],
            &labels(n),
            &[dv(&[2.0, -1.0, -1.0])],
            &[dv(&[1.0, 1.0, 1.0])],
        )
        .unwrap();
        let inst = HypergraphInstance::new(
            vec![s("a"), s("b"), s("c")],
            vec![s("a"), s("b"), s("c")],
            vec![PlacedHyperedge::new("e", vec![s("a"), s("b"), s("c")], h, w)],
        )
        .unwrap();
        assert!(matches!(
            resistance_cut(&inst, "a", &FlowSpec::Auto, &CutSpec::Auto),
            Err(Error::UnsupportedShape(_))
        ));
    }

    /// Aux: function evaluation `⊥ → x₀` over `{0,1}³`; branch `b`
    /// computes `x_{1+b}`.
    fn divide_fixture(same_branches: bool) -> (HyperedgeProblem, WitnessFamily, Vec<Branch>, Vec<Vec<bool>>) {
        let xs: Vec<Vec<bool>> = (0..8usize).map(|m| (0..3).map(|i| m >> i & 1 == 1).collect()).collect();
        let names: Vec<String> = xs
            .iter()
            .map(|x| x.iter().map(|&b| if b { '1' } else { '0' }).collect())
            .collect();
        let verts = vec![s(BOTTOM), s("0"), s("1")];
        let flows: Vec<DVector<f64>> = xs
            .iter()
            .map(|x| if x[0] { dv(&[1.0, 0.0, -1.0]) } else { dv(&[1.0, -1.0, 0.0]) })
            .collect();
        let pots: Vec<DVector<f64>> = xs
            .iter()
            .map(|x| if x[0] { dv(&[1.0, 0.0, 1.0]) } else { dv(&[1.0, 1.0, 0.0]) })
            .collect();
        let (aux, aw) = full_query_hyperedge(verts, &names, &flows, &pots).unwrap();
        let branches = (0..2)
            .map(|b| {
                let j = if same_branches { 1 } else { 1 + b };
                let values: Vec<bool> = xs.iter().map(|x| x[j]).collect();
                let (problem, witnesses) = single_query_hyperedge(&names, &values);
                Branch {
                    output: b.to_string(),
                    problem,
                    witnesses,
                }
            })
            .collect();
        (aux, aw, branches, xs)
    }

    #[test]
    fn divide_conquer_sums_sizes() {
        let (aux, aw, branches, xs) = divide_fixture(false);
        let rep = divide_conquer(&aux, &aw, &branches).unwrap();
        assert!(rep.composed.check(1e-9).unwrap().feasible);
        for (x, bits) in xs.iter().enumerate() {
            let out = bits[0] as usize;
            assert_eq!(rep.outputs[x], out.to_string());
            assert_eq!(rep.values[x], bits[1 + out]);
            let (ap, am) = (aw.plus[x].norm_squared(), aw.minus[x].norm_squared());
            let (bp, bm) = (
                branches[out].witnesses.plus[x].norm_squared(),
                branches[out].witnesses.minus[x].norm_squared(),
            );
            let (p, m) = rep.composed.sizes[x];
            if rep.values[x] {
                assert!((p - (ap + bp)).abs() < 1e-9 && m == 0.0);
            } else {
                assert!((m - (am + bm)).abs() < 1e-9 && p == 0.0);
            }
        }
    }

    #[test]
    fn divide_conquer_identical_branches() {
        let (aux, aw, branches, _) = divide_fixture(true);
        let rep = divide_conquer(&aux, &aw, &branches).unwrap();
        assert!(rep.composed.check(1e-9).unwrap().feasible);
    }

    #[test]
    fn divide_conquer_matches_flat_instance() {
        let (aux, aw, branches, xs) = divide_fixture(false);
        let rep = divide_conquer(&aux, &aw, &branches).unwrap();
        // Hand-built flat instance: every edge's states and witnesses written
        // out directly from the case analysis.
        let names = aux.labels();
        let mut aux_in = Vec::new();
        let (mut ap, mut am) = (Vec::new(), Vec::new());
        let mut br_in = vec![Vec::new(), Vec::new()];
        let mut br_w = vec![(Vec::new(), Vec::new()), (Vec::new(), Vec::new())];
        for (x, bits) in xs.iter().enumerate() {
            let out = bits[0] as usize;
            let pos = bits[1 + out];
            let o = &aux.inputs()[x];
            let mut u = dv(&[0.0, 0.0, 0.0]);
            if !pos {
                u[0] = 1.0;
                u[1 + out] = 1.0;
            }
            aux_in.push(HyperedgeInput {
                flow: if pos { o.flow.clone() } else { dv(&[0.0; 3]) },
                potential: u,
                ..o.clone()
            });
            ap.push(if pos { aw.plus[x].clone() } else { aw.plus[x].scale(0.0) });
            am.push(if pos { aw.minus[x].scale(0.0) } else { aw.minus[x].clone() });
            for b in 0..2 {
                let bi = &branches[b].problem.inputs()[x];
                let live = b == out;
                br_in[b].push(HyperedgeInput {
                    flow: if live && pos { dv(&[1.0, -1.0]) } else { dv(&[0.0, 0.0]) },
                    potential: if live && !pos { dv(&[1.0, 0.0]) } else { dv(&[0.0, 0.0]) },
                    ..bi.clone()
                });
                let bw = &branches[b].witnesses;
                br_w[b].0.push(bw.plus[x].scale(if live && pos { 1.0 } else { 0.0 }));
                br_w[b].1.push(bw.minus[x].scale(if live && !pos { 1.0 } else { 0.0 }));
            }
        }
        let mut edges = vec![PlacedHyperedge::new(
            "aux",
            vec![s(BOTTOM), s("0"), s("1")],
            HyperedgeProblem::new(aux.vertices().to_vec(), aux_in).unwrap(),
            WitnessFamily::new(ap, am),
        )];
        for b in 0..2 {
            let (p, m) = br_w[b].clone();
            edges.push(PlacedHyperedge::new(
                format!("h[{b}]"),
                vec![b.to_string(), s(DC_SINK)],
                HyperedgeProblem::new(vec![s("s"), s("t")], br_in[b].clone()).unwrap(),
                WitnessFamily::new(p, m),
            ));
        }
        let flat = HypergraphInstance::new(
            vec![s(BOTTOM), s("0"), s("1"), s(DC_SINK)],
            vec![s(BOTTOM), s(DC_SINK)],
            edges,
        )
        .unwrap();
        let flat = compose(&flat).unwrap();
        assert_eq!(flat.problem.labels(), names);
        for x in 0..xs.len() {
            assert!((&flat.witnesses.plus[x] - &rep.composed.witnesses.plus[x]).norm() < 1e-12);
            assert!((&flat.witnesses.minus[x] - &rep.composed.witnesses.minus[x]).norm() < 1e-12);
            assert_eq!(flat.problem.inputs()[x].flow, rep.composed.problem.inputs()[x].flow);
        }
    }

    #[test]
    fn divide_conquer_output_mismatch() {
        let (aux, aw, mut branches, _) = divide_fixture(false);
        branches[1].output = s("2");
        assert!(matches!(divide_conquer(&aux, &aw, &branches), Err(Error::OutputMismatch(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn compose_is_feasible_and_additive(w1 in 0.1f64..10.0, w2 in 0.1f64..10.0, k in 1usize..4) {
            let inst = first_marked(k, &vec![w1; k], &vec![w2; k]);
            let rep = resistance_cut(&inst, "v1", &FlowSpec::Auto, &CutSpec::Auto).unwrap();
            prop_assert!(check_hyperedge(&rep.composed.problem, &rep.composed.witnesses, 1e-8).unwrap().feasible);
            for (x, &(p, m)) in rep.composed.sizes.iter().enumerate() {
                prop_assert!((p - rep.predicted[x].0).abs() < 1e-10 * p.max(1.0));
                prop_assert!((m - rep.predicted[x].1).abs() < 1e-10 * m.max(1.0));
            }
        }

        #[test]
        fn classic_series_parallel_laws(k in 1usize..4, parallel in any::<bool>()) {
            let n = k;
            let mut vs = vec![s("s")];
            let edges: Vec<ClassicEdge> = if parallel {
                vs.push(s("t"));
                (0..k).map(|j| query_edge(&format!("e{j}"), "s", "t", n, j, true)).collect()
            } else {
                for i in 1..k {
                    vs.push(format!("m{i}"));
                }
                vs.push(s("t"));
                (0..k).map(|j| query_edge(&format!("e{j}"), &vs[j].clone(), &vs[j + 1].clone(), n, j, true)).collect()
            };
            let rep = classic_embed(vs, edges, "s", "t", None).unwrap();
            prop_assert!(rep.composed.check(1e-8).unwrap().feasible);
            for (x, &(p, m)) in rep.composed.sizes.iter().enumerate() {
                let ones = x.count_ones() as f64;
                if parallel {
                    if ones > 0.0 { prop_assert!((p - 1.0 / ones).abs() < 1e-9); }
                    else { prop_assert!((m - k as f64).abs() < 1e-9); }
                } else if x == (1 << k) - 1 {
                    prop_assert!((p - k as f64).abs() < 1e-9);
                } else {
                    // One contracted zero edge per block; the potential drops
                    // evenly across the k − ones open edges.
                    let open = k as f64 - ones;
                    prop_assert!((m - 1.0 / open).abs() < 1e-9, "x={x}, m={m}");
                }
            }
        }
    }
}
