//! Decision trees, their weighting schemes, and the conversion of a weighted
//! tree into a graph composition.
//!
//! A weighting scheme assigns `w_v ≥ 0` to every node, zero at the leaves,
//! together with certificates `X, Y ⪰ 0` over the children of each internal
//! node such that `X[c,c'] − Y[c,c'] = 1` off the diagonal and
//! `w_v − w_c ≥ X[c,c] + Y[c,c]`. The optimal scheme is found bottom-up by a
//! small SDP per node ([`solve_node_sdp`], [`wdt`]).

use std::collections::{BTreeMap, HashSet};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::composition::{self, ComposedResult, HypergraphInstance, PlacedHyperedge};
use crate::error::{Error, Result};
use crate::numerics::{complexify_vector, direct_sum, kron_vec, psd_factor, spectral_norm, CVector};
use crate::reflection::{HyperedgeInput, HyperedgeProblem, Involution, WitnessFamily};

/// Default duality-gap target of the node solver.
pub const SDP_TOL: f64 = 1e-7;
/// Iteration cap of the node solver.
pub const SDP_MAX_ITER: usize = 500;
/// Negative eigenvalues above `−PSD_CLIP` are rounded to zero when factoring
/// certificates.
pub const PSD_CLIP: f64 = 1e-10;
/// Eigenvalue tolerance for certificates in [`validate_scheme`].
pub const CERT_PSD_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Color {
    Red,
    Black,
}

/// A node is internal when it has a query, a leaf when it has an output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    /// Child node id for each query outcome.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub children: BTreeMap<String, usize>,
}

impl TreeNode {
    pub fn leaf(output: impl Into<String>) -> Self {
        Self {
            query: None,
            output: Some(output.into()),
            children: BTreeMap::new(),
        }
    }

    pub fn internal(query: usize, children: BTreeMap<String, usize>) -> Self {
        Self {
            query: Some(query),
            output: None,
            children,
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RawTree {
    nodes: Vec<TreeNode>,
    root: usize,
    alphabet: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    coloring: Option<Vec<Color>>,
}

/// A rooted decision tree. `coloring[v]` is the color of the edge into `v`
/// (ignored at the root).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTree", into = "RawTree")]
pub struct DecisionTree {
    nodes: Vec<TreeNode>,
    root: usize,
    alphabet: Vec<String>,
    coloring: Option<Vec<Color>>,
    parent: Vec<Option<usize>>,
    /// Children first, root last.
    postorder: Vec<usize>,
}

impl TryFrom<RawTree> for DecisionTree {
    type Error = Error;

    fn try_from(raw: RawTree) -> Result<Self> {
        let mut tree = Self::new(raw.nodes, raw.root, raw.alphabet)?;
        if let Some(c) = raw.coloring {
            tree = tree.with_coloring(c)?;
        }
        Ok(tree)
    }
}

impl From<DecisionTree> for RawTree {
    fn from(t: DecisionTree) -> Self {
        Self {
            nodes: t.nodes,
            root: t.root,
            alphabet: t.alphabet,
            coloring: t.coloring,
        }
    }
}

impl DecisionTree {
    pub fn new(nodes: Vec<TreeNode>, root: usize, alphabet: Vec<String>) -> Result<Self> {
        let n = nodes.len();
        if root >= n {
            return Err(Error::InvalidInstance(format!("root {root} out of range")));
        }
        let symbols: HashSet<&String> = alphabet.iter().collect();
        let mut parent = vec![None; n];
        for (v, node) in nodes.iter().enumerate() {
            match (node.query, &node.output, node.children.is_empty()) {
                (Some(_), None, false) | (None, Some(_), true) => {}
                _ => {
                    return Err(Error::InvalidInstance(format!(
                        "node {v} must either query with children or be a leaf with an output"
                    )))
                }
            }
            for (sym, &c) in &node.children {
                if !symbols.contains(sym) {
                    return Err(Error::InvalidInstance(format!("node {v} branches on unknown symbol {sym}")));
                }
                if c >= n || c == root {
                    return Err(Error::InvalidInstance(format!("node {v} has invalid child {c}")));
                }
                if parent[c].replace(v).is_some() {
                    return Err(Error::InvalidInstance(format!("node {c} has two parents")));
                }
            }
        }
        // Iterative DFS from the root; every node must be reached exactly once.
        let mut postorder = Vec::with_capacity(n);
        let mut stack = vec![(root, false)];
        let mut seen = vec![false; n];
        while let Some((v, done)) = stack.pop() {
            if done {
                postorder.push(v);
                continue;
            }
            if std::mem::replace(&mut seen[v], true) {
                return Err(Error::InvalidInstance("tree contains a cycle".into()));
            }
            stack.push((v, true));
            for &c in nodes[v].children.values().rev() {
                stack.push((c, false));
            }
        }
        if postorder.len() != n {
            return Err(Error::InvalidInstance("some nodes are not reachable from the root".into()));
        }
        Ok(Self {
            nodes,
            root,
            alphabet,
            coloring: None,
            parent,
            postorder,
        })
    }

    /// Attach a red/black coloring; at most one black edge may leave a node.
    pub fn with_coloring(mut self, coloring: Vec<Color>) -> Result<Self> {
        if coloring.len() != self.nodes.len() {
            return Err(Error::InvalidColoring(format!(
                "{} colors for {} nodes",
                coloring.len(),
                self.nodes.len()
            )));
        }
        for (v, node) in self.nodes.iter().enumerate() {
            let black = node.children.values().filter(|&&c| coloring[c] == Color::Black).count();
            if black > 1 {
                return Err(Error::InvalidColoring(format!("node {v} has {black} black children")));
            }
        }
        self.coloring = Some(coloring);
        Ok(self)
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn alphabet(&self) -> &[String] {
        &self.alphabet
    }

    pub fn coloring(&self) -> Option<&[Color]> {
        self.coloring.as_deref()
    }

    pub fn parent(&self, v: usize) -> Option<usize> {
        self.parent[v]
    }

    /// Children of `v` in symbol order.
    pub fn children(&self, v: usize) -> Vec<usize> {
        self.nodes[v].children.values().copied().collect()
    }

    /// Node ids with every child before its parent.
    pub fn postorder(&self) -> &[usize] {
        &self.postorder
    }

    pub fn leaves(&self) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&v| self.nodes[v].is_leaf()).collect()
    }

    /// Internal nodes on the way from the root to `v`, each with the position
    /// of the child taken.
    pub fn path(&self, v: usize) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut cur = v;
        while let Some(p) = self.parent[cur] {
            let slot = self.nodes[p].children.values().position(|&c| c == cur).expect("child of its parent");
            out.push((p, slot));
            cur = p;
        }
        out.reverse();
        out
    }

    /// Largest number of queries on a root-to-leaf path.
    pub fn depth(&self) -> usize {
        self.leaves().iter().map(|&l| self.path(l).len()).max().unwrap_or(0)
    }

    /// Largest number of red edges on a root-to-leaf path, if colored.
    pub fn red_count(&self) -> Option<usize> {
        let coloring = self.coloring.as_ref()?;
        Some(
            self.leaves()
                .iter()
                .map(|&l| self.path(l).iter().filter(|&&(p, s)| coloring[self.children(p)[s]] == Color::Red).count())
                .max()
                .unwrap_or(0),
        )
    }

    pub fn leaf_only() -> Self {
        Self::new(vec![TreeNode::leaf("0")], 0, vec!["0".into(), "1".into()]).expect("valid")
    }

    /// A caterpillar: node `i` queries position `i`; outcome `0` continues
    /// (black edge), every other of the `k` outcomes ends in a leaf (red).
    pub fn path_tree(depth: usize, k: usize) -> Self {
        assert!(k >= 1);
        let alphabet: Vec<String> = (0..k).map(|s| s.to_string()).collect();
        let mut nodes = Vec::new();
        let mut coloring = Vec::new();
        fn push(nodes: &mut Vec<TreeNode>, coloring: &mut Vec<Color>, node: TreeNode, color: Color) -> usize {
            nodes.push(node);
            coloring.push(color);
            nodes.len() - 1
        }
        let root = push(&mut nodes, &mut coloring, TreeNode::leaf("end"), Color::Black);
        let mut cur = root;
        for i in 0..depth {
            let mut children = BTreeMap::new();
            for s in 1..k {
                let leaf = push(&mut nodes, &mut coloring, TreeNode::leaf(format!("{i}:{s}")), Color::Red);
                children.insert(s.to_string(), leaf);
            }
            let next = push(&mut nodes, &mut coloring, TreeNode::leaf("end"), Color::Black);
            children.insert("0".to_string(), next);
            nodes[cur] = TreeNode::internal(i, children);
            cur = next;
        }
        Self::new(nodes, root, alphabet)
            .and_then(|t| t.with_coloring(coloring))
            .expect("valid path tree")
    }

    /// Complete `k`-ary tree of the given depth; a node at level `ℓ` queries
    /// position `ℓ`. Outcome `0` is black, the rest red.
    pub fn complete(depth: usize, k: usize) -> Self {
        assert!(k >= 1);
        let alphabet: Vec<String> = (0..k).map(|s| s.to_string()).collect();
        let mut nodes = vec![TreeNode::leaf("")];
        let mut coloring = vec![Color::Black];
        let mut frontier = vec![(0usize, String::new())];
        for level in 0..depth {
            let mut next = Vec::new();
            for (v, prefix) in frontier {
                let mut children = BTreeMap::new();
                for s in 0..k {
                    let label = format!("{prefix}{s}");
                    nodes.push(TreeNode::leaf(label.clone()));
                    coloring.push(if s == 0 { Color::Black } else { Color::Red });
                    children.insert(s.to_string(), nodes.len() - 1);
                    next.push((nodes.len() - 1, label));
                }
                nodes[v] = TreeNode::internal(level, children);
            }
            frontier = next;
        }
        Self::new(nodes, 0, alphabet)
            .and_then(|t| t.with_coloring(coloring))
            .expect("valid complete tree")
    }
}

/// `X` and `Y` over the children of one node, in symbol order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    #[serde(with = "crate::numerics::rows")]
    pub x: DMatrix<f64>,
    #[serde(with = "crate::numerics::rows")]
    pub y: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightingScheme {
    pub weights: Vec<f64>,
    /// `Some` exactly at internal nodes.
    pub certificates: Vec<Option<Certificate>>,
}

impl WeightingScheme {
    pub fn root_weight(&self, tree: &DecisionTree) -> f64 {
        self.weights[tree.root()]
    }
}

/// Worst violation per invariant class, with the node where it occurs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SchemeReport {
    /// Largest `|w_leaf|` and most negative weight, as one number.
    pub weight: (f64, Option<usize>),
    /// Most negative certificate eigenvalue (as a positive violation).
    pub psd: (f64, Option<usize>),
    /// Largest `|X[c,c'] − Y[c,c'] − 1|`.
    pub off_diagonal: (f64, Option<usize>),
    /// Largest `X[c,c] + Y[c,c] − (w_v − w_c)`.
    pub drop: (f64, Option<usize>),
    pub tol: f64,
    pub valid: bool,
}

/// Check every weighting-scheme condition. Structural mismatches (missing
/// certificates, wrong sizes) count as infinite violations.
pub fn validate_scheme(tree: &DecisionTree, scheme: &WeightingScheme, tol: f64) -> SchemeReport {
    let n = tree.nodes().len();
    let mut weight = (0.0, None);
    let mut psd = (0.0, None);
    let mut off = (0.0, None);
    let mut drop = (0.0, None);
    let bump = |slot: &mut (f64, Option<usize>), v: f64, at: usize| {
        if v > slot.0 || (v.is_nan() && !slot.0.is_nan()) {
            *slot = (v, Some(at));
        }
    };
    if scheme.weights.len() != n || scheme.certificates.len() != n {
        let inf = (f64::INFINITY, None);
        return SchemeReport {
            weight: inf,
            psd: inf,
            off_diagonal: inf,
            drop: inf,
            tol,
            valid: false,
        };
    }
    for v in 0..n {
        let w = scheme.weights[v];
        bump(&mut weight, (-w).max(0.0), v);
        let children = tree.children(v);
        if children.is_empty() {
            bump(&mut weight, w.abs(), v);
            continue;
        }
        let k = children.len();
        let Some(cert) = &scheme.certificates[v] else {
            bump(&mut psd, f64::INFINITY, v);
            continue;
        };
        if cert.x.shape() != (k, k) || cert.y.shape() != (k, k) {
            bump(&mut psd, f64::INFINITY, v);
            continue;
        }
        for m in [&cert.x, &cert.y] {
            let asym = (m - m.transpose()).amax();
            let low = crate::numerics::min_eigenvalue(m);
            bump(&mut psd, (-low).max(0.0).max(asym), v);
        }
        for i in 0..k {
            for j in 0..k {
                if i != j {
                    bump(&mut off, (cert.x[(i, j)] - cert.y[(i, j)] - 1.0).abs(), v);
                }
            }
            let need = cert.x[(i, i)] + cert.y[(i, i)];
            bump(&mut drop, need - (w - scheme.weights[children[i]]), v);
        }
    }
    let valid = weight.0 <= tol && psd.0 <= CERT_PSD_TOL.max(tol) && off.0 <= tol && drop.0 <= tol;
    SchemeReport {
        weight,
        psd,
        off_diagonal: off,
        drop,
        tol,
        valid,
    }
}

/// Optimal weight over two children with weights `a`, `b`, and certificates
/// `X = [[w_v − a, 1], [1, w_v − b]]`, `Y = 0`.
pub fn binary_analytic(a: f64, b: f64) -> (f64, Certificate) {
    let wv = (a + b + ((a - b).powi(2) + 4.0).sqrt()) / 2.0;
    let x = DMatrix::from_row_slice(2, 2, &[wv - a, 1.0, 1.0, wv - b]);
    (
        wv,
        Certificate {
            x,
            y: DMatrix::zeros(2, 2),
        },
    )
}

/// Primal certificate, dual certificate, and the bracket between them.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeSolution {
    /// `max_c (w_c + X[c,c] + Y[c,c])` for the returned certificate.
    pub value: f64,
    pub certificate: Certificate,
    /// Zero diagonal, `‖Γ‖ ≤ 1`.
    #[serde(with = "crate::numerics::rows")]
    pub gamma: DMatrix<f64>,
    /// `‖diag(w) + Γ‖`, a lower bound on the optimum.
    pub dual_value: f64,
    pub gap: f64,
    pub iterations: usize,
}

/// The node SDP in standard form over one block-diagonal PSD variable
/// `Z = diag(X, Y, s_1, …, s_k, t)`: minimize `t` subject to
/// `t − X_cc − Y_cc − s_c = w_c` and `X_ij − Y_ij = 1` for `i < j`.
struct NodeSdp {
    k: usize,
    n: usize,
    /// Symmetric entries `(row, col, value)` of each constraint matrix.
    a: Vec<Vec<(usize, usize, f64)>>,
    b: DVector<f64>,
}

impl NodeSdp {
    fn new(w: &[f64]) -> Self {
        let k = w.len();
        let n = 3 * k + 1;
        let t = 3 * k;
        let mut a = Vec::new();
        let mut b = Vec::new();
        for (c, &wc) in w.iter().enumerate() {
            a.push(vec![(t, t, 1.0), (c, c, -1.0), (k + c, k + c, -1.0), (2 * k + c, 2 * k + c, -1.0)]);
            b.push(wc);
        }
        for i in 0..k {
            for j in (i + 1)..k {
                a.push(vec![(i, j, 0.5), (j, i, 0.5), (k + i, k + j, -0.5), (k + j, k + i, -0.5)]);
                b.push(1.0);
            }
        }
        Self {
            k,
            n,
            a,
            b: DVector::from_vec(b),
        }
    }

    fn m(&self) -> usize {
        self.a.len()
    }

    fn cost(&self) -> DMatrix<f64> {
        let mut c = DMatrix::zeros(self.n, self.n);
        c[(self.n - 1, self.n - 1)] = 1.0;
        c
    }

    fn apply(&self, z: &DMatrix<f64>) -> DVector<f64> {
        DVector::from_iterator(self.m(), self.a.iter().map(|ai| ai.iter().map(|&(r, c, v)| v * z[(r, c)]).sum()))
    }

    fn adjoint(&self, y: &DVector<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.n, self.n);
        for (ai, &yi) in self.a.iter().zip(y.iter()) {
            for &(r, c, v) in ai {
                out[(r, c)] += yi * v;
            }
        }
        out
    }

    /// `M_ij = tr(A_i Z A_j S⁻¹)`.
    fn schur(&self, z: &DMatrix<f64>, sinv: &DMatrix<f64>) -> DMatrix<f64> {
        let m = self.m();
        let mut out = DMatrix::zeros(m, m);
        for j in 0..m {
            let mut za = DMatrix::zeros(self.n, self.n);
            for &(r, c, v) in &self.a[j] {
                let col = z.column(r) * v;
                let mut dst = za.column_mut(c);
                dst += col;
            }
            let b = za * sinv;
            for i in 0..m {
                out[(i, j)] = self.a[i].iter().map(|&(r, c, v)| v * b[(c, r)]).sum();
            }
        }
        (&out + out.transpose()).scale(0.5)
    }

    /// Repair the `(X, Y)` part of `z` into an exactly feasible certificate.
    fn primal_certificate(&self, z: &DMatrix<f64>, w: &[f64]) -> (f64, Certificate) {
        let k = self.k;
        let sym = |m: DMatrix<f64>| (&m + m.transpose()).scale(0.5);
        let mut x = sym(z.view((0, 0), (k, k)).into_owned());
        let mut y = sym(z.view((k, k), (k, k)).into_owned());
        for i in 0..k {
            for j in 0..k {
                if i != j {
                    x[(i, j)] = y[(i, j)] + 1.0;
                }
            }
        }
        for m in [&mut x, &mut y] {
            let low = crate::numerics::min_eigenvalue(m);
            if low < 0.0 {
                for i in 0..k {
                    m[(i, i)] -= low;
                }
            }
        }
        let value = (0..k).map(|c| w[c] + x[(c, c)] + y[(c, c)]).fold(f64::NEG_INFINITY, f64::max);
        (value, Certificate { x, y })
    }

    /// `Γ = D⁻¹GD⁻¹` from the multipliers, `p_c = y_c`, `G_ij = y_ij/2`,
    /// `D = diag(√p)`, scaled into the unit ball.
    fn dual_certificate(&self, y: &DVector<f64>, w: &[f64]) -> (f64, DMatrix<f64>) {
        let k = self.k;
        let p: Vec<f64> = (0..k).map(|c| y[c].max(0.0)).collect();
        let top = p.iter().cloned().fold(0.0, f64::max);
        let mut gamma = DMatrix::zeros(k, k);
        let mut idx = k;
        for i in 0..k {
            for j in (i + 1)..k {
                if p[i] > 1e-14 * top && p[j] > 1e-14 * top {
                    let g = (y[idx] / 2.0 / (p[i] * p[j]).sqrt()).clamp(-1.0, 1.0);
                    gamma[(i, j)] = g;
                    gamma[(j, i)] = g;
                }
                idx += 1;
            }
        }
        let norm = spectral_norm(&gamma);
        if norm > 1.0 {
            gamma.unscale_mut(norm);
        }
        (dual_value(w, &gamma), gamma)
    }
}

/// `‖diag(w) + Γ‖`.
pub fn dual_value(w: &[f64], gamma: &DMatrix<f64>) -> f64 {
    let mut m = gamma.clone();
    for (c, &wc) in w.iter().enumerate() {
        m[(c, c)] += wc;
    }
    spectral_norm(&m)
}

/// Largest `α` with `Z + α dZ ⪰ 0`, i.e. `−1/λ_min(L⁻¹ dZ L⁻ᵀ)` for
/// `Z = LLᵀ`.
fn max_step(z: &DMatrix<f64>, dz: &DMatrix<f64>) -> Option<f64> {
    let l = z.clone().cholesky()?.l();
    let li = l.try_inverse()?;
    let t = &li * dz * li.transpose();
    let low = crate::numerics::min_eigenvalue(&t);
    Some(if low < 0.0 { -1.0 / low } else { f64::INFINITY })
}

/// Shrink `alpha` until `Z + α dZ` has a Cholesky factor.
fn safe_step(z: &DMatrix<f64>, dz: &DMatrix<f64>, mut alpha: f64) -> f64 {
    for _ in 0..30 {
        if (z + dz * alpha).cholesky().is_some() {
            return alpha;
        }
        alpha *= 0.8;
    }
    0.0
}

fn inverse_spd(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    m.clone().cholesky().map(|c| c.inverse())
}

/// Solve the node SDP over child weights `w` by a primal-dual interior-point
/// method (HKM direction, Mehrotra predictor-corrector, infeasible start).
///
/// Stops once the rounded primal and dual certificates are within `tol` of
/// each other. Fails with [`Error::NoConvergence`] if that does not happen
/// within [`SDP_MAX_ITER`] iterations.
pub fn solve_node_sdp(w: &[f64], tol: f64) -> Result<NodeSolution> {
    let k = w.len();
    if k == 0 {
        return Err(Error::InvalidInstance("node without children".into()));
    }
    if w.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
        return Err(Error::InvalidInstance("child weights must be finite and nonnegative".into()));
    }
    if k == 1 {
        return Ok(NodeSolution {
            value: w[0],
            certificate: Certificate {
                x: DMatrix::zeros(1, 1),
                y: DMatrix::zeros(1, 1),
            },
            gamma: DMatrix::zeros(1, 1),
            dual_value: w[0],
            gap: 0.0,
            iterations: 0,
        });
    }
    // Shifting all weights by their minimum shifts the optimum by the same
    // amount and keeps the iterates well scaled.
    let shift = w.iter().cloned().fold(f64::INFINITY, f64::min);
    let ws: Vec<f64> = w.iter().map(|&x| x - shift).collect();
    let sdp = NodeSdp::new(&ws);
    let n = sdp.n;
    let c = sdp.cost();
    let top = ws.iter().cloned().fold(0.0, f64::max);
    let mut z = DMatrix::identity(n, n) * (10.0 * (1.0 + top));
    let mut s = DMatrix::identity(n, n) * 10.0;
    let mut y = DVector::zeros(sdp.m());

    let mut best: Option<NodeSolution> = None;
    let finish = |best: &mut Option<NodeSolution>, z: &DMatrix<f64>, y: &DVector<f64>, it: usize| {
        let (pv, cert) = sdp.primal_certificate(z, &ws);
        let (dv, gamma) = sdp.dual_certificate(y, &ws);
        let better_primal = best.as_ref().map_or(true, |b| pv + shift < b.value);
        let better_dual = best.as_ref().map_or(true, |b| dv + shift > b.dual_value);
        let b = best.get_or_insert_with(|| NodeSolution {
            value: pv + shift,
            certificate: cert.clone(),
            gamma: gamma.clone(),
            dual_value: dv + shift,
            gap: f64::INFINITY,
            iterations: it,
        });
        if better_primal {
            b.value = pv + shift;
            b.certificate = cert;
        }
        if better_dual {
            b.gamma = gamma;
            b.dual_value = dual_value(w, &b.gamma);
        }
        b.gap = b.value - b.dual_value;
        b.iterations = it;
    };

    for it in 0..SDP_MAX_ITER {
        finish(&mut best, &z, &y, it);
        if best.as_ref().is_some_and(|b| b.gap <= tol) {
            return Ok(best.expect("set"));
        }
        let rp = &sdp.b - sdp.apply(&z);
        let rd = &c - sdp.adjoint(&y) - &s;
        let mu = z.dot(&s) / n as f64;
        let Some(sinv) = inverse_spd(&s) else { break };
        let schur = sdp.schur(&z, &sinv);
        // The Schur complement loses definiteness numerically near the
        // optimum; LU still gives a usable direction there.
        let chol = schur.clone().cholesky();
        let lu = schur.clone().lu();
        let solve = |r: &DVector<f64>| match &chol {
            Some(c) => Some(c.solve(r)),
            None => lu.solve(r),
        };

        // dZ = σμS⁻¹ − Z − (Z dS + K) S⁻¹, dS = R_d − A*(dy), A(dZ) = r_p.
        let direction = |sigma: f64, k: Option<&DMatrix<f64>>| {
            let mut base = &sinv * (sigma * mu) - &z - &z * &rd * &sinv;
            if let Some(k) = k {
                base -= k * &sinv;
            }
            let dy = solve(&(&rp - sdp.apply(&base)))?;
            let ds = &rd - sdp.adjoint(&dy);
            let mut dz = &sinv * (sigma * mu) - &z - (&z * &ds) * &sinv;
            if let Some(k) = k {
                dz -= k * &sinv;
            }
            let dz = (&dz + dz.transpose()).scale(0.5);
            Some((dz, dy, ds))
        };
        let steps = |dz: &DMatrix<f64>, ds: &DMatrix<f64>, frac: f64| -> Option<(f64, f64)> {
            let ap = max_step(&z, dz)?;
            let ad = max_step(&s, ds)?;
            Some(((frac * ap).min(1.0), (frac * ad).min(1.0)))
        };
        let Some((dza, _, dsa)) = direction(0.0, None) else { break };
        let Some((apa, ada)) = steps(&dza, &dsa, 1.0) else { break };
        let mu_aff = (&z + &dza * apa).dot(&(&s + &dsa * ada)) / n as f64;
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);
        let corr = &dza * &dsa;
        let Some((dz, dy, ds)) = direction(sigma, Some(&corr)) else { break };
        let Some((ap, ad)) = steps(&dz, &ds, 0.95) else { break };
        let (ap, ad) = (safe_step(&z, &dz, ap), safe_step(&s, &ds, ad));
        if ap == 0.0 && ad == 0.0 {
            break;
        }
        z += dz * ap;
        y += dy * ad;
        s += ds * ad;
        z = (&z + z.transpose()).scale(0.5);
        s = (&s + s.transpose()).scale(0.5);
    }
    let gap = best.as_ref().map_or(f64::INFINITY, |b| b.gap);
    let iterations = best.as_ref().map_or(0, |b| b.iterations);
    if gap <= tol {
        return Ok(best.expect("set"));
    }
    Err(Error::NoConvergence { iterations, gap })
}

/// The optimal weighting scheme, computed leaf to root.
pub fn wdt(tree: &DecisionTree, tol: f64) -> Result<(WeightingScheme, f64)> {
    let n = tree.nodes().len();
    let mut weights = vec![0.0; n];
    let mut certificates = vec![None; n];
    for &v in tree.postorder() {
        let children = tree.children(v);
        if children.is_empty() {
            continue;
        }
        let cw: Vec<f64> = children.iter().map(|&c| weights[c]).collect();
        let sol = solve_node_sdp(&cw, tol)?;
        weights[v] = sol.value;
        certificates[v] = Some(sol.certificate);
    }
    let root = weights[tree.root()];
    Ok((WeightingScheme { weights, certificates }, root))
}

/// The explicit scheme with `α = √(T/G)`: per node, `v = [1/√α] ⊕ [√α]^{k−1}`,
/// `X = vvᵀ` and `Y = (α − 1)J` away from slot 0. Slot 0 is the black child,
/// or the heaviest child when no edge is black. Black edges then drop by
/// `1/α`, red ones by `2α − 1`.
///
/// `depth` and `red` default to the tree's own depth and red count; `G` is
/// at least 1 and `T` at least `G`.
pub fn bt20_scheme(tree: &DecisionTree, depth: Option<usize>, red: Option<usize>) -> Result<WeightingScheme> {
    let coloring = tree
        .coloring()
        .ok_or_else(|| Error::InvalidColoring("tree has no coloring".into()))?;
    let g = red.unwrap_or_else(|| tree.red_count().unwrap_or(0)).max(1);
    let t = depth.unwrap_or_else(|| tree.depth()).max(g);
    if let Some(actual) = tree.red_count() {
        if actual > g {
            return Err(Error::InvalidColoring(format!("a path has {actual} red edges, more than G = {g}")));
        }
    }
    let alpha = (t as f64 / g as f64).sqrt();
    let n = tree.nodes().len();
    let mut weights = vec![0.0f64; n];
    let mut certificates = vec![None; n];
    for &v in tree.postorder() {
        let children = tree.children(v);
        let k = children.len();
        if k == 0 {
            continue;
        }
        let slot0 = children
            .iter()
            .position(|&c| coloring[c] == Color::Black)
            .unwrap_or_else(|| (0..k).max_by(|&a, &b| weights[children[a]].total_cmp(&weights[children[b]])).expect("k ≥ 1"));
        let mut vv = DVector::from_element(k, alpha.sqrt());
        vv[slot0] = 1.0 / alpha.sqrt();
        let x = &vv * vv.transpose();
        let mut y = DMatrix::from_element(k, k, alpha - 1.0);
        y.row_mut(slot0).fill(0.0);
        y.column_mut(slot0).fill(0.0);
        weights[v] = (0..k)
            .map(|c| weights[children[c]] + x[(c, c)] + y[(c, c)])
            .fold(f64::NEG_INFINITY, f64::max);
        certificates[v] = Some(Certificate { x, y });
    }
    Ok(WeightingScheme { weights, certificates })
}

/// Vertex name of node `v` in [`tree_to_composition`].
pub fn node_vertex(v: usize) -> String {
    format!("n{v}")
}

/// Turn a weighted tree into a composition: one function-evaluation
/// hyperedge over `{v} ∪ C_v` per internal node, inputs are the leaves.
/// For an input passing through `v` with outcome `a`, the witnesses are
/// `w^± = (u⁺_a ⊕ ±u⁻_a) ⊗ (1_⊥ ± 1_a)` where `X = U₊ᵀU₊`, `Y = U₋ᵀU₋`,
/// and the oracle is a swap of `⊥` and `a` on every copy. Per-input sizes are
/// `2Σ (X[a,a] + Y[a,a])` along the path, at most `2w_root`.
pub fn tree_to_composition(tree: &DecisionTree, scheme: &WeightingScheme) -> Result<(HypergraphInstance, ComposedResult)> {
    let report = validate_scheme(tree, scheme, 1e-8);
    if !report.valid {
        return Err(Error::InvalidScheme(format!(
            "weights {:.3e}, psd {:.3e}, off-diagonal {:.3e}, drop {:.3e}",
            report.weight.0, report.psd.0, report.off_diagonal.0, report.drop.0
        )));
    }
    let leaves = tree.leaves();
    let labels: Vec<String> = leaves.iter().map(|&l| node_vertex(l)).collect();
    let root = tree.root();
    let vertices: Vec<String> = (0..tree.nodes().len()).map(node_vertex).collect();
    let mut boundary = vec![node_vertex(root)];
    boundary.extend(labels.iter().filter(|&l| *l != node_vertex(root)).cloned());

    if tree.nodes()[root].is_leaf() {
        let input = HyperedgeInput {
            label: labels[0].clone(),
            flow: DVector::zeros(1),
            potential: DVector::from_element(1, 1.0),
            oracle: Involution::identity(0),
        };
        let problem = HyperedgeProblem::new(boundary.clone(), vec![input])?;
        let inst = HypergraphInstance::new(vertices, boundary, Vec::new())?;
        let witnesses = WitnessFamily::zeros(1, 0);
        return Ok((
            inst,
            ComposedResult {
                problem,
                sizes: witnesses.sizes(),
                witnesses,
                layout: Vec::new(),
            },
        ));
    }

    // Outcome taken at each node by each input, if the input passes there.
    let mut taken: Vec<Vec<Option<usize>>> = vec![vec![None; leaves.len()]; tree.nodes().len()];
    for (x, &l) in leaves.iter().enumerate() {
        for (p, slot) in tree.path(l) {
            taken[p][x] = Some(slot);
        }
    }

    let mut edges = Vec::new();
    for &v in tree.postorder() {
        let children = tree.children(v);
        let k = children.len();
        if k == 0 {
            continue;
        }
        let cert = scheme.certificates[v].as_ref().expect("validated");
        let factor = |m: &DMatrix<f64>| {
            psd_factor(m, PSD_CLIP).map_err(|low| {
                Error::InvalidScheme(format!("certificate at node {v} has eigenvalue {low:.3e}"))
            })
        };
        let (up, um) = (factor(&cert.x)?, factor(&cert.y)?);
        let reg = k + 1;
        let dim = 2 * k * reg;
        let mut hv = vec![node_vertex(v)];
        hv.extend(children.iter().map(|&c| node_vertex(c)));
        let mut inputs = Vec::with_capacity(leaves.len());
        let mut plus = Vec::with_capacity(leaves.len());
        let mut minus = Vec::with_capacity(leaves.len());
        for (x, label) in labels.iter().enumerate() {
            let mut flow = DVector::zeros(k + 1);
            let mut potential = DVector::zeros(k + 1);
            match taken[v][x] {
                Some(a) => {
                    flow[0] = 1.0;
                    flow[a + 1] = -1.0;
                    potential[0] = 1.0;
                    potential[a + 1] = 1.0;
                    let (ua, va) = (up.column(a).into_owned(), um.column(a).into_owned());
                    let mut e_plus = DVector::zeros(reg);
                    e_plus[0] = 1.0;
                    e_plus[a + 1] = 1.0;
                    let mut e_minus = DVector::zeros(reg);
                    e_minus[0] = 1.0;
                    e_minus[a + 1] = -1.0;
                    plus.push(complexify_vector(&kron_vec(&direct_sum(&ua, &va), &e_plus)));
                    minus.push(complexify_vector(&kron_vec(&direct_sum(&ua, &(-va)), &e_minus)));
                    inputs.push(HyperedgeInput {
                        label: label.clone(),
                        flow,
                        potential,
                        oracle: Involution::swap(reg, 0, a + 1).repeat(2 * k),
                    });
                }
                None => {
                    plus.push(CVector::zeros(dim));
                    minus.push(CVector::zeros(dim));
                    inputs.push(HyperedgeInput {
                        label: label.clone(),
                        flow,
                        potential,
                        oracle: Involution::identity(dim),
                    });
                }
            }
        }
        let problem = HyperedgeProblem::new(hv.clone(), inputs)?;
        edges.push(PlacedHyperedge::new(
            format!("node{v}"),
            hv,
            problem,
            WitnessFamily::new(plus, minus),
        ));
    }
    let inst = HypergraphInstance::new(vertices, boundary, edges)?;
    let composed = composition::compose(&inst)?;
    Ok((inst, composed))
}

/// The zero-diagonal `Γ` that certifies a binary node: Pauli `X`.
pub fn binary_dual() -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])
}
