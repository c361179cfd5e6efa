//! Reversible Markov chains and the electrical networks they correspond to.
//!
//! A connected graph with edge resistances defines a reversible random walk
//! and every irreducible reversible chain arises this way. Effective
//! resistance is computed twice, once through the Laplacian pseudoinverse and
//! once as the energy of the minimal-norm solution of `B f = δ`, so each route
//! checks the other.

use std::collections::VecDeque;

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{hermitian_eig, min_norm_solve, pseudoinverse, DEFAULT_RANK_TOL};

/// Tolerance for structural checks (stochastic rows, detailed balance).
pub const STRUCTURE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub tail: usize,
    pub head: usize,
    pub resistance: f64,
}

/// Undirected graph with positive edge resistances. Edge orientation only
/// fixes the sign convention of flows.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedGraph {
    vertices: Vec<String>,
    edges: Vec<Edge>,
}

impl WeightedGraph {
    pub fn new(vertices: Vec<String>, edges: Vec<Edge>) -> Result<Self> {
        let n = vertices.len();
        for (i, e) in edges.iter().enumerate() {
            if e.tail >= n || e.head >= n {
                return Err(Error::InvalidInstance(format!("edge {i} references a missing vertex")));
            }
            if !(e.resistance > 0.0) || !e.resistance.is_finite() {
                return Err(Error::InvalidInstance(format!(
                    "edge {i} has resistance {}",
                    e.resistance
                )));
            }
        }
        let mut seen = std::collections::HashSet::new();
        for v in &vertices {
            if !seen.insert(v) {
                return Err(Error::InvalidInstance(format!("duplicate vertex label {v}")));
            }
        }
        Ok(Self { vertices, edges })
    }

    /// Build from labels; vertices are created in order of first appearance
    /// unless listed up front.
    pub fn from_labeled(vertices: &[&str], edges: &[(&str, &str, f64)]) -> Result<Self> {
        let verts: Vec<String> = vertices.iter().map(|s| s.to_string()).collect();
        let idx = |l: &str| {
            verts
                .iter()
                .position(|v| v == l)
                .ok_or_else(|| Error::InvalidInstance(format!("unknown vertex {l}")))
        };
        let es = edges
            .iter()
            .map(|&(a, b, r)| {
                Ok(Edge {
                    tail: idx(a)?,
                    head: idx(b)?,
                    resistance: r,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(verts, es)
    }

    pub fn vertices(&self) -> &[String] {
        &self.vertices
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn n(&self) -> usize {
        self.vertices.len()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.vertices.iter().position(|v| v == label)
    }

    pub fn resistances(&self) -> DVector<f64> {
        DVector::from_iterator(self.edges.len(), self.edges.iter().map(|e| e.resistance))
    }

    /// Same topology with new resistances.
    pub fn with_resistances(&self, r: &[f64]) -> Result<Self> {
        assert_eq!(r.len(), self.edges.len());
        let edges = self
            .edges
            .iter()
            .zip(r)
            .map(|(e, &res)| Edge {
                resistance: res,
                ..e.clone()
            })
            .collect();
        Self::new(self.vertices.clone(), edges)
    }

    /// Connected-component id of every vertex.
    pub fn components(&self) -> Vec<usize> {
        let n = self.n();
        let mut adj = vec![Vec::new(); n];
        for e in &self.edges {
            adj[e.tail].push(e.head);
            adj[e.head].push(e.tail);
        }
        let mut comp = vec![usize::MAX; n];
        let mut next = 0;
        for start in 0..n {
            if comp[start] != usize::MAX {
                continue;
            }
            comp[start] = next;
            let mut queue = VecDeque::from([start]);
            while let Some(v) = queue.pop_front() {
                for &w in &adj[v] {
                    if comp[w] == usize::MAX {
                        comp[w] = next;
                        queue.push_back(w);
                    }
                }
            }
            next += 1;
        }
        comp
    }

    pub fn is_connected(&self) -> bool {
        self.components().iter().all(|&c| c == 0)
    }

    /// Weighted incidence matrix: `+1/√r_e` at the tail, `−1/√r_e` at the
    /// head, and a zero column for self-loops.
    pub fn incidence(&self) -> DMatrix<f64> {
        let mut b = DMatrix::zeros(self.n(), self.edges.len());
        for (j, e) in self.edges.iter().enumerate() {
            if e.tail != e.head {
                let s = 1.0 / e.resistance.sqrt();
                b[(e.tail, j)] = s;
                b[(e.head, j)] = -s;
            }
        }
        b
    }

    pub fn laplacian(&self) -> DMatrix<f64> {
        let mut l = DMatrix::zeros(self.n(), self.n());
        for e in &self.edges {
            if e.tail != e.head {
                let c = 1.0 / e.resistance;
                l[(e.tail, e.tail)] += c;
                l[(e.head, e.head)] += c;
                l[(e.tail, e.head)] -= c;
                l[(e.head, e.tail)] -= c;
            }
        }
        l
    }

    /// `Σ_e 1/r_e`, which equals 1/2 for graphs normalized as walk graphs.
    pub fn total_conductance(&self) -> f64 {
        self.edges.iter().map(|e| 1.0 / e.resistance).sum()
    }

    /// Rescale all resistances so that `Σ_e 1/r_e = target`.
    pub fn normalized(&self, target: f64) -> Self {
        let c = self.total_conductance() / target;
        let r: Vec<f64> = self.edges.iter().map(|e| e.resistance * c).collect();
        self.with_resistances(&r).expect("scaling keeps resistances positive")
    }
}

/// Row-stochastic transition matrix over labeled states.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovChain {
    states: Vec<String>,
    p: DMatrix<f64>,
}

impl MarkovChain {
    pub fn new(states: Vec<String>, p: DMatrix<f64>) -> Result<Self> {
        let n = states.len();
        if p.shape() != (n, n) {
            return Err(Error::DimensionMismatch(format!(
                "{} states but a {}x{} transition matrix",
                n,
                p.nrows(),
                p.ncols()
            )));
        }
        for i in 0..n {
            let row = p.row(i);
            if row.iter().any(|&x| x < -STRUCTURE_TOL || !x.is_finite()) {
                return Err(Error::InvalidInstance(format!("row {i} has a negative entry")));
            }
            if (row.sum() - 1.0).abs() > STRUCTURE_TOL {
                return Err(Error::InvalidInstance(format!("row {i} sums to {}", row.sum())));
            }
        }
        Ok(Self { states, p })
    }

    /// States labeled `0..n`.
    pub fn from_matrix(p: DMatrix<f64>) -> Result<Self> {
        let states = (0..p.nrows()).map(|i| i.to_string()).collect();
        Self::new(states, p)
    }

    pub fn states(&self) -> &[String] {
        &self.states
    }

    pub fn p(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn n(&self) -> usize {
        self.states.len()
    }

    pub fn is_irreducible(&self) -> bool {
        let n = self.n();
        if n == 0 {
            return false;
        }
        let reach = |forward: bool| {
            let mut seen = vec![false; n];
            seen[0] = true;
            let mut queue = VecDeque::from([0]);
            while let Some(v) = queue.pop_front() {
                for w in 0..n {
                    let x = if forward { self.p[(v, w)] } else { self.p[(w, v)] };
                    if x > 0.0 && !seen[w] {
                        seen[w] = true;
                        queue.push_back(w);
                    }
                }
            }
            seen.into_iter().all(|s| s)
        };
        reach(true) && reach(false)
    }

    /// Largest detailed-balance deviation `|π_v P_vw − π_w P_wv|`.
    pub fn detailed_balance_defect(&self, pi: &DVector<f64>) -> f64 {
        let n = self.n();
        let mut worst = 0.0f64;
        for v in 0..n {
            for w in 0..n {
                worst = worst.max((pi[v] * self.p[(v, w)] - pi[w] * self.p[(w, v)]).abs());
            }
        }
        worst
    }

    /// `P^t`.
    pub fn power(&self, t: u32) -> DMatrix<f64> {
        let mut out = DMatrix::identity(self.n(), self.n());
        for _ in 0..t {
            out = &out * &self.p;
        }
        out
    }
}

/// Random walk on a weighted graph, together with its stationary
/// distribution.
pub fn graph_to_chain(g: &WeightedGraph) -> Result<(MarkovChain, DVector<f64>)> {
    let n = g.n();
    if n == 0 || !g.is_connected() {
        return Err(Error::Disconnected);
    }
    let mut conductance = vec![0.0; n];
    for e in g.edges() {
        conductance[e.tail] += 1.0 / e.resistance;
        if e.head != e.tail {
            conductance[e.head] += 1.0 / e.resistance;
        }
    }
    if conductance.iter().any(|&c| c == 0.0) {
        // Only a single isolated vertex gets here.
        return Err(Error::Disconnected);
    }
    let mut p = DMatrix::zeros(n, n);
    for e in g.edges() {
        // r_v / r_e with r_v = 1 / conductance(v)
        let c = 1.0 / e.resistance;
        p[(e.tail, e.head)] += c / conductance[e.tail];
        if e.head != e.tail {
            p[(e.head, e.tail)] += c / conductance[e.head];
        }
    }
    let total: f64 = conductance.iter().sum();
    let pi = DVector::from_iterator(n, conductance.iter().map(|c| c / total));
    Ok((MarkovChain::new(g.vertices().to_vec(), p)?, pi))
}

/// Weighted graph whose random walk is `M`: `r_vw = 1/(π_v P_vw)`.
///
/// Self-loops of the chain become loop edges. They carry no Laplacian term but
/// keep the round trip through [`graph_to_chain`] exact.
pub fn chain_to_graph(m: &MarkovChain, pi: &DVector<f64>) -> Result<WeightedGraph> {
    if !m.is_irreducible() {
        return Err(Error::NotIrreducible);
    }
    let defect = m.detailed_balance_defect(pi);
    if defect > STRUCTURE_TOL {
        return Err(Error::NotReversible(defect));
    }
    let n = m.n();
    let mut edges = Vec::new();
    for v in 0..n {
        for w in v..n {
            let flow = pi[v] * m.p()[(v, w)];
            if m.p()[(v, w)] > 0.0 && flow > 0.0 {
                edges.push(Edge {
                    tail: v,
                    head: w,
                    resistance: 1.0 / flow,
                });
            }
        }
    }
    if edges.iter().all(|e| e.tail == e.head) && n > 1 {
        return Err(Error::NotIrreducible);
    }
    WeightedGraph::new(m.states().to_vec(), edges)
}

/// Stationary distribution and spectral gap.
///
/// The gap is `1 − λ₂` where `λ₂` is the largest eigenvalue of the
/// symmetrized matrix `D^{1/2} P D^{−1/2}` after the Perron eigenvalue. For a
/// periodic chain the eigenvalue `−1` therefore does not close the gap. A
/// single-state chain has an infinite gap.
pub fn stationary_and_gap(m: &MarkovChain) -> Result<(DVector<f64>, f64)> {
    if !m.is_irreducible() {
        return Err(Error::NotIrreducible);
    }
    let pi = stationary(m);
    let values = symmetrized_spectrum(m, &pi)?.values;
    let gap = if values.len() < 2 {
        f64::INFINITY
    } else {
        1.0 - values[1]
    };
    Ok((pi, gap))
}

fn stationary(m: &MarkovChain) -> DVector<f64> {
    let n = m.n();
    // Stack (Pᵀ − I) on top of 1ᵀ and solve for the normalized null vector.
    let mut a = DMatrix::zeros(n + 1, n);
    a.view_mut((0, 0), (n, n))
        .copy_from(&(m.p().transpose() - DMatrix::identity(n, n)));
    a.row_mut(n).fill(1.0);
    let mut b = DVector::zeros(n + 1);
    b[n] = 1.0;
    let mut pi = min_norm_solve(&a, &b);
    pi.apply(|x| *x = x.max(0.0));
    let s = pi.sum();
    pi / s
}

/// Eigendecomposition of `D^{1/2} P D^{−1/2}` (its Hermitian part, which is
/// the matrix itself for reversible chains).
pub fn symmetrized_spectrum(
    m: &MarkovChain,
    pi: &DVector<f64>,
) -> Result<crate::numerics::EigDecomp<f64>> {
    let n = m.n();
    let s = DMatrix::from_fn(n, n, |i, j| pi[i].sqrt() * m.p()[(i, j)] / pi[j].sqrt());
    let sym = (&s + s.transpose()).scale(0.5);
    hermitian_eig(&sym, 1e-9)
}

/// `L = diag(π)(I − P)`; equals the Laplacian of [`chain_to_graph`] up to
/// the diagonal terms of self-loops, which cancel.
pub fn chain_laplacian(m: &MarkovChain, pi: &DVector<f64>) -> DMatrix<f64> {
    let n = m.n();
    DMatrix::from_diagonal(pi) * (DMatrix::identity(n, n) - m.p())
}

/// A flow on the edges of a graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Flow {
    pub values: DVector<f64>,
    pub energy: f64,
}

impl Flow {
    /// Net flow out of every vertex.
    pub fn net_flow(&self, g: &WeightedGraph) -> DVector<f64> {
        let mut out = DVector::zeros(g.n());
        for (e, &f) in g.edges().iter().zip(self.values.iter()) {
            if e.tail != e.head {
                out[e.tail] += f;
                out[e.head] -= f;
            }
        }
        out
    }
}

/// Both resistance routes, for cross-checking.
#[derive(Debug, Clone, PartialEq)]
pub struct ResistanceRoutes {
    /// `δᵀL⁺δ`
    pub laplacian: f64,
    /// `‖B⁺δ‖²`
    pub incidence: f64,
    pub flow: Flow,
}

fn check_routable(g: &WeightedGraph, delta: &DVector<f64>) -> Result<()> {
    if delta.len() != g.n() {
        return Err(Error::DimensionMismatch(format!(
            "net-flow has {} entries for {} vertices",
            delta.len(),
            g.n()
        )));
    }
    let comp = g.components();
    let ncomp = comp.iter().cloned().max().map_or(0, |c| c + 1);
    let mut net = vec![0.0; ncomp];
    let mut mass = vec![0.0; ncomp];
    for (v, &c) in comp.iter().enumerate() {
        net[c] += delta[v];
        mass[c] += delta[v].abs();
    }
    for c in 0..ncomp {
        if net[c].abs() > STRUCTURE_TOL * mass[c].max(1.0) {
            return Err(Error::CrossComponent {
                component: c,
                net: net[c],
            });
        }
    }
    Ok(())
}

/// Effective resistance and minimum-energy flow for net-flow `δ`.
pub fn resistance(g: &WeightedGraph, delta: &DVector<f64>) -> Result<(f64, Flow)> {
    let routes = resistance_routes(g, delta)?;
    Ok((routes.laplacian, routes.flow))
}

/// Compute `R_eff` through the Laplacian pseudoinverse and through the
/// minimal-norm incidence solve.
pub fn resistance_routes(g: &WeightedGraph, delta: &DVector<f64>) -> Result<ResistanceRoutes> {
    check_routable(g, delta)?;
    let l = g.laplacian();
    let lp = pseudoinverse(&l, DEFAULT_RANK_TOL);
    let laplacian = delta.dot(&(&lp * delta));

    let b = g.incidence();
    let embedded = min_norm_solve(&b, delta);
    let incidence = embedded.norm_squared();
    let values = DVector::from_iterator(
        g.edges().len(),
        g.edges()
            .iter()
            .zip(embedded.iter())
            .map(|(e, &f)| f / e.resistance.sqrt()),
    );
    Ok(ResistanceRoutes {
        laplacian,
        incidence,
        flow: Flow {
            values,
            energy: incidence,
        },
    })
}

/// Effective resistance of `P^t` for net-flow `ξ` through the spectral formula
/// `Σ_{j≥2} |ξ̃ᵀv_j|² / (1 − λ_j^t)` with `ξ̃ = D^{−1/2}ξ`.
///
/// Terms with `λ_j^t = 1` (periodic chains at even `t`) give `+∞` when `ξ̃`
/// has weight there and are dropped otherwise.
pub fn spectral_resistance(m: &MarkovChain, pi: &DVector<f64>, xi: &DVector<f64>, t: u32) -> Result<f64> {
    let eig = symmetrized_spectrum(m, pi)?;
    Ok(spectral_form(&eig, pi, t).evaluate(xi))
}

/// The quadratic form `ξ ↦ R_eff(P^t; ξ)` in diagonalized form.
#[derive(Debug, Clone)]
pub struct SpectralForm {
    /// `D^{−1/2} v_j` for the non-Perron eigenvectors.
    directions: Vec<DVector<f64>>,
    /// `1/(1 − λ_j^t)`, or `∞` where the denominator vanishes.
    weights: Vec<f64>,
}

const DEGENERATE: f64 = 1e-13;

pub fn spectral_form(eig: &crate::numerics::EigDecomp<f64>, pi: &DVector<f64>, t: u32) -> SpectralForm {
    let n = pi.len();
    let mut directions = Vec::new();
    let mut weights = Vec::new();
    for j in 1..n {
        let v = eig.vectors.column(j);
        let dir = DVector::from_fn(n, |i, _| v[i] / pi[i].sqrt());
        let denom = 1.0 - eig.values[j].powi(t as i32);
        directions.push(dir);
        weights.push(if denom.abs() <= DEGENERATE { f64::INFINITY } else { 1.0 / denom });
    }
    SpectralForm { directions, weights }
}

impl SpectralForm {
    pub fn evaluate(&self, xi: &DVector<f64>) -> f64 {
        let scale = xi.norm_squared().max(1e-300);
        let mut total = 0.0;
        for (d, &w) in self.directions.iter().zip(&self.weights) {
            let c = d.dot(xi).powi(2);
            if w.is_infinite() {
                if c > 1e-20 * scale {
                    return f64::INFINITY;
                }
            } else {
                total += c * w;
            }
        }
        total
    }

    /// The matrix of the form, with degenerate directions dropped.
    pub fn matrix(&self) -> DMatrix<f64> {
        let n = self.directions.first().map_or(0, |d| d.len());
        let mut k = DMatrix::zeros(n, n);
        for (d, &w) in self.directions.iter().zip(&self.weights) {
            if w.is_finite() {
                k += d * d.transpose() * w;
            }
        }
        k
    }
}

/// One checked inequality `lhs ≤ rhs + slack`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Inequality {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

impl Inequality {
    pub fn check(lhs: f64, rhs: f64, slack: f64) -> Self {
        Self {
            lhs,
            rhs,
            holds: lhs <= rhs + slack,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LemmaReport {
    /// `R(P;ξ) ≤ t·R(P^t;ξ)`
    pub fast_forward: Inequality,
    /// `R(P;ξ) ≤ ‖D^{−1/2}ξ‖²/δ_gap`, absent when the gap is zero.
    pub gap_bound: Option<Inequality>,
    /// `Σ ν²/π ≤ 2·R(P^t; σ − ν)`
    pub fraction: Inequality,
    pub gap: f64,
}

impl LemmaReport {
    pub fn all_hold(&self) -> bool {
        self.fast_forward.holds && self.gap_bound.map_or(true, |g| g.holds) && self.fraction.holds
    }
}

/// Check the fast-forwarding and fraction-versus-resistance inequalities for
/// one draw of `(ξ, t, σ, ν)` with absolute slack `slack`.
pub fn check_resistance_lemmas(
    m: &MarkovChain,
    xi: &DVector<f64>,
    t: u32,
    sigma: &DVector<f64>,
    nu: &DVector<f64>,
    slack: f64,
) -> Result<LemmaReport> {
    assert!(t >= 1, "t must be positive");
    let n = m.n();
    for (name, v) in [("ξ", xi), ("σ", sigma), ("ν", nu)] {
        if v.len() != n {
            return Err(Error::DimensionMismatch(format!("{name} has {} entries for {n} states", v.len())));
        }
    }
    for i in 0..n {
        if sigma[i] > 0.0 && nu[i] > 0.0 {
            return Err(Error::OverlappingSupport(m.states()[i].clone()));
        }
    }
    let (pi, gap) = stationary_and_gap(m)?;
    let g = chain_to_graph(m, &pi)?;
    let (r1, _) = resistance(&g, xi)?;
    let eig = symmetrized_spectrum(m, &pi)?;
    let form_t = spectral_form(&eig, &pi, t);

    let fast_forward = Inequality::check(r1, t as f64 * form_t.evaluate(xi), slack);
    let gap_bound = if gap > 0.0 {
        let weighted: f64 = (0..n).map(|i| xi[i] * xi[i] / pi[i]).sum();
        Some(Inequality::check(r1, weighted / gap, slack))
    } else {
        warn!("spectral gap is zero; skipping the gap bound");
        None
    };
    let lhs: f64 = (0..n).map(|i| nu[i] * nu[i] / pi[i]).sum();
    let fraction = Inequality::check(lhs, 2.0 * form_t.evaluate(&(sigma - nu)), slack);
    Ok(LemmaReport {
        fast_forward,
        gap_bound,
        fraction,
        gap,
    })
}

/// Minimize `(σ − ν)ᵀK(σ − ν) + Σ_v c_v ν_v²` over probability distributions
/// `ν` supported on `targets`.
///
/// `K` must be positive semidefinite. This is the resistance between `σ` and
/// a vertex set when `K = L⁺`, with `c` adding per-vertex costs. Returns the
/// optimal value and `ν`.
pub fn nearest_distribution(
    k: &DMatrix<f64>,
    sigma: &DVector<f64>,
    targets: &[usize],
    extra: &[f64],
) -> (f64, DVector<f64>) {
    let n = sigma.len();
    assert!(!targets.is_empty(), "need at least one target vertex");
    let m = targets.len();
    // f(ν) = ½νᵀHν + gᵀν + const on the target coordinates.
    let ks = k * sigma;
    let h = DMatrix::from_fn(m, m, |i, j| {
        let diag = if i == j { extra.get(targets[i]).copied().unwrap_or(0.0) } else { 0.0 };
        2.0 * (k[(targets[i], targets[j])] + diag)
    });
    let g = DVector::from_fn(m, |i, _| -2.0 * ks[targets[i]]);

    let mut nu = DVector::from_element(m, 1.0 / m as f64);
    let mut free = vec![true; m];
    for _ in 0..(10 * m + 50) {
        let idx: Vec<usize> = (0..m).filter(|&i| free[i]).collect();
        let f = idx.len();
        // KKT system of the equality-constrained problem on the free set.
        let mut a = DMatrix::zeros(f + 1, f + 1);
        let mut rhs = DVector::zeros(f + 1);
        for (a_i, &i) in idx.iter().enumerate() {
            for (a_j, &j) in idx.iter().enumerate() {
                a[(a_i, a_j)] = h[(i, j)];
            }
            a[(a_i, f)] = 1.0;
            a[(f, a_i)] = 1.0;
            rhs[a_i] = -g[i];
        }
        rhs[f] = 1.0;
        let sol = min_norm_solve(&a, &rhs);
        let mut target = DVector::zeros(m);
        for (a_i, &i) in idx.iter().enumerate() {
            target[i] = sol[a_i];
        }
        let step = &target - &nu;
        if step.amax() <= 1e-14 {
            // Stationary on the free set: release a bound coordinate whose
            // multiplier has the wrong sign, if any.
            let grad = &h * &nu + &g;
            let lambda = -sol[f];
            let worst = (0..m)
                .filter(|&i| !free[i])
                .map(|i| (i, grad[i] - lambda))
                .min_by(|a, b| a.1.total_cmp(&b.1));
            match worst {
                Some((i, mu)) if mu < -1e-12 => free[i] = true,
                _ => break,
            }
            continue;
        }
        let mut alpha = 1.0;
        let mut blocking = None;
        for i in 0..m {
            if free[i] && step[i] < 0.0 {
                let a_i = -nu[i] / step[i];
                if a_i < alpha {
                    alpha = a_i;
                    blocking = Some(i);
                }
            }
        }
        nu += step * alpha;
        if let Some(i) = blocking {
            nu[i] = 0.0;
            free[i] = false;
        }
    }
    nu.apply(|x| *x = x.max(0.0));
    nu /= nu.sum();
    let mut full = DVector::zeros(n);
    for (i, &v) in targets.iter().enumerate() {
        full[v] = nu[i];
    }
    let diff = sigma - &full;
    let value = diff.dot(&(k * &diff))
        + targets
            .iter()
            .map(|&v| extra.get(v).copied().unwrap_or(0.0) * full[v] * full[v])
            .sum::<f64>();
    (value, full)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gen;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_vec(xs.to_vec())
    }

    #[test]
    fn single_edge_walk() {
        let g = WeightedGraph::from_labeled(&["a", "b"], &[("a", "b", 2.0)]).unwrap();
        let (m, pi) = graph_to_chain(&g).unwrap();
        assert_eq!(m.p(), &DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
        assert_eq!(pi, v(&[0.5, 0.5]));
        let back = chain_to_graph(&m, &pi).unwrap();
        assert_eq!(back.edges().len(), 1);
        assert!((back.edges()[0].resistance - 2.0).abs() < 1e-15);
    }

    #[test]
    fn triangle_and_path_walks() {
        let tri = WeightedGraph::from_labeled(&["a", "b", "c"], &[("a", "b", 3.0), ("b", "c", 3.0), ("c", "a", 3.0)])
            .unwrap();
        let (m, pi) = graph_to_chain(&tri).unwrap();
        for i in 0..3 {
            assert!((pi[i] - 1.0 / 3.0).abs() < 1e-15);
            for j in 0..3 {
                let want = if i == j { 0.0 } else { 0.5 };
                assert!((m.p()[(i, j)] - want).abs() < 1e-15);
            }
        }
        let path = WeightedGraph::from_labeled(&["a", "b", "c"], &[("a", "b", 1.0), ("b", "c", 1.0)]).unwrap();
        let (m, pi) = graph_to_chain(&path).unwrap();
        assert_eq!(m.p()[(1, 0)], 0.5);
        assert_eq!(m.p()[(1, 2)], 0.5);
        assert_eq!(pi, v(&[0.25, 0.5, 0.25]));
    }

    #[test]
    fn disconnected_graph_rejected() {
        let g = WeightedGraph::from_labeled(&["a", "b", "c"], &[("a", "b", 1.0)]).unwrap();
        assert_eq!(graph_to_chain(&g).unwrap_err(), Error::Disconnected);
    }

    #[test]
    fn identity_chain_is_not_irreducible() {
        let m = MarkovChain::from_matrix(DMatrix::identity(3, 3)).unwrap();
        let pi = DVector::from_element(3, 1.0 / 3.0);
        assert_eq!(chain_to_graph(&m, &pi).unwrap_err(), Error::NotIrreducible);
    }

    #[test]
    fn non_reversible_chain_rejected() {
        // Directed 3-cycle with a little laziness.
        let p = DMatrix::from_row_slice(3, 3, &[0.2, 0.8, 0.0, 0.0, 0.2, 0.8, 0.8, 0.0, 0.2]);
        let m = MarkovChain::from_matrix(p).unwrap();
        let (pi, _) = stationary_and_gap(&m).unwrap();
        assert!(matches!(chain_to_graph(&m, &pi), Err(Error::NotReversible(_))));
    }

    #[test]
    fn random_chain_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = gen::random_connected_graph(&mut rng, 6, 0.5, (0.1, 10.0));
        let (m, pi) = graph_to_chain(&g).unwrap();
        let back = chain_to_graph(&m, &pi).unwrap();
        let (m2, pi2) = graph_to_chain(&back).unwrap();
        assert!((m.p() - m2.p()).amax() < 1e-10);
        assert!((pi - pi2).amax() < 1e-12);
    }

    #[test]
    fn gap_conventions() {
        let flip = MarkovChain::from_matrix(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])).unwrap();
        let (pi, gap) = stationary_and_gap(&flip).unwrap();
        assert!((pi - v(&[0.5, 0.5])).amax() < 1e-14);
        // The only non-Perron eigenvalue is −1, so the gap is 2.
        assert!((gap - 2.0).abs() < 1e-12);
        let lazy = MarkovChain::from_matrix(DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5])).unwrap();
        let (_, gap) = stationary_and_gap(&lazy).unwrap();
        assert!((gap - 1.0).abs() < 1e-12);
    }

    #[test]
    fn doubly_stochastic_has_uniform_stationary() {
        let p = DMatrix::from_row_slice(3, 3, &[0.1, 0.6, 0.3, 0.6, 0.3, 0.1, 0.3, 0.1, 0.6]);
        let (pi, _) = stationary_and_gap(&MarkovChain::from_matrix(p).unwrap()).unwrap();
        assert!((pi - DVector::from_element(3, 1.0 / 3.0)).amax() < 1e-12);
    }

    #[test]
    fn series_and_parallel_laws() {
        let single = WeightedGraph::from_labeled(&["a", "b"], &[("a", "b", 2.0)]).unwrap();
        let (r, f) = resistance(&single, &v(&[1.0, -1.0])).unwrap();
        assert!((r - 2.0).abs() < 1e-12);
        assert!((f.values[0] - 1.0).abs() < 1e-12);

        let series = WeightedGraph::from_labeled(&["s", "m", "t"], &[("s", "m", 1.0), ("m", "t", 1.0)]).unwrap();
        let (r, _) = resistance(&series, &v(&[1.0, 0.0, -1.0])).unwrap();
        assert!((r - 2.0).abs() < 1e-12);

        let par = WeightedGraph::from_labeled(&["s", "t"], &[("s", "t", 1.0), ("s", "t", 1.0)]).unwrap();
        let (r, f) = resistance(&par, &v(&[1.0, -1.0])).unwrap();
        assert!((r - 0.5).abs() < 1e-12);
        assert!((f.values[0] - 0.5).abs() < 1e-12 && (f.values[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn cross_component_flow_rejected() {
        let g = WeightedGraph::from_labeled(&["a", "b", "c", "d"], &[("a", "b", 1.0), ("c", "d", 1.0)]).unwrap();
        assert!(matches!(
            resistance(&g, &v(&[1.0, 0.0, -1.0, 0.0])),
            Err(Error::CrossComponent { .. })
        ));
        // Balanced inside each component is fine.
        let (r, _) = resistance(&g, &v(&[1.0, -1.0, 1.0, -1.0])).unwrap();
        assert!((r - 2.0).abs() < 1e-12);
    }

    #[test]
    fn four_cycle_fast_forwarding() {
        let g = WeightedGraph::from_labeled(
            &["0", "1", "2", "3"],
            &[("0", "1", 8.0), ("1", "2", 8.0), ("2", "3", 8.0), ("3", "0", 8.0)],
        )
        .unwrap();
        assert!((g.total_conductance() - 0.5).abs() < 1e-15);
        let (m, pi) = graph_to_chain(&g).unwrap();
        let xi = v(&[1.0, 0.0, -1.0, 0.0]);
        let (r, _) = resistance(&g, &xi).unwrap();
        assert!((r - 8.0).abs() < 1e-10);
        // t = 1: the spectral formula reproduces the graph resistance.
        assert!((spectral_resistance(&m, &pi, &xi, 1).unwrap() - 8.0).abs() < 1e-10);
        for t in 2..=4 {
            let rt = spectral_resistance(&m, &pi, &xi, t).unwrap();
            assert!(t as f64 * rt >= 8.0 - 1e-9, "t={t}: {rt}");
        }
    }

    #[test]
    fn lemma_t1_is_tight() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = gen::random_connected_graph(&mut rng, 5, 0.6, (0.5, 2.0));
        let (m, _) = graph_to_chain(&g).unwrap();
        let xi = gen::random_mean_zero(&mut rng, 5);
        let (sigma, nu) = gen::disjoint_distributions(&mut rng, 5);
        let rep = check_resistance_lemmas(&m, &xi, 1, &sigma, &nu, 1e-9).unwrap();
        assert!((rep.fast_forward.lhs - rep.fast_forward.rhs).abs() < 1e-9 * rep.fast_forward.lhs.max(1.0));
    }

    #[test]
    fn lemmas_on_random_eight_state_chain() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let g = gen::random_connected_graph(&mut rng, 8, 0.4, (0.1, 10.0));
        let (m, _) = graph_to_chain(&g).unwrap();
        for _ in 0..50 {
            let xi = gen::random_mean_zero(&mut rng, 8);
            let t = rng.gen_range(1..=5);
            let (sigma, nu) = gen::disjoint_distributions(&mut rng, 8);
            let rep = check_resistance_lemmas(&m, &xi, t, &sigma, &nu, 1e-9).unwrap();
            assert!(rep.all_hold(), "{rep:?}");
        }
    }

    #[test]
    fn overlapping_support_rejected() {
        let g = WeightedGraph::from_labeled(&["a", "b"], &[("a", "b", 2.0)]).unwrap();
        let (m, _) = graph_to_chain(&g).unwrap();
        let s = v(&[1.0, 0.0]);
        let err = check_resistance_lemmas(&m, &v(&[1.0, -1.0]), 1, &s, &s, 1e-9).unwrap_err();
        assert!(matches!(err, Error::OverlappingSupport(_)));
    }

    #[test]
    fn nearest_distribution_matches_contraction() {
        // Path s - a - b with unit resistances, target set {a, b}: all mass
        // should leave through a, at resistance 1.
        let g = WeightedGraph::from_labeled(&["s", "a", "b"], &[("s", "a", 1.0), ("a", "b", 1.0)]).unwrap();
        let lp = pseudoinverse(&g.laplacian(), DEFAULT_RANK_TOL);
        let (val, nu) = nearest_distribution(&lp, &v(&[1.0, 0.0, 0.0]), &[1, 2], &[]);
        assert!((val - 1.0).abs() < 1e-10);
        assert!((nu - v(&[0.0, 1.0, 0.0])).amax() < 1e-10);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn routes_agree_and_flow_is_valid(seed in any::<u64>(), n in 2usize..12) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = gen::random_connected_graph(&mut rng, n, 0.3, (0.1, 10.0));
            let delta = gen::random_mean_zero(&mut rng, n);
            let routes = resistance_routes(&g, &delta).unwrap();
            prop_assert!((routes.laplacian - routes.incidence).abs() <= 1e-8 * routes.laplacian.abs().max(1e-12));
            prop_assert!((routes.flow.net_flow(&g) - &delta).amax() < 1e-10);
            let energy: f64 = routes.flow.values.iter().zip(g.edges()).map(|(f, e)| f * f * e.resistance).sum();
            prop_assert!((energy - routes.laplacian).abs() <= 1e-8 * routes.laplacian.max(1e-12));
        }

        #[test]
        fn detailed_balance_and_laplacian_identity(seed in any::<u64>(), n in 2usize..9) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = gen::random_connected_graph(&mut rng, n, 0.5, (0.1, 10.0));
            let (m, pi) = graph_to_chain(&g).unwrap();
            prop_assert!(m.detailed_balance_defect(&pi) < 1e-10);
            let back = chain_to_graph(&m, &pi).unwrap();
            prop_assert!((chain_laplacian(&m, &pi) - back.laplacian()).amax() < 1e-10);
        }

        #[test]
        fn rayleigh_monotonicity(seed in any::<u64>(), n in 2usize..9, bump in 1.0f64..5.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = gen::random_connected_graph(&mut rng, n, 0.4, (0.1, 10.0));
            let delta = gen::random_mean_zero(&mut rng, n);
            let (before, _) = resistance(&g, &delta).unwrap();
            let e = rng.gen_range(0..g.edges().len());
            let mut r: Vec<f64> = g.resistances().iter().cloned().collect();
            r[e] *= bump;
            let (after, _) = resistance(&g.with_resistances(&r).unwrap(), &delta).unwrap();
            prop_assert!(after >= before - 1e-9 * before.max(1.0));
        }
    }
}
