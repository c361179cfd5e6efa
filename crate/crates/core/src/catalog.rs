//! Worked constructions with closed-form witness sizes.
//!
//! Every fixture is built from single-query hyperedges (oracle `±1` on `ℂ`,
//! both witness sizes 1) and comes in two forms: `raw`, the hypergraph as
//! drawn, and `placed`, with the flows and potentials that achieve the
//! closed forms already applied, so [`compose`](composition::compose)
//! reproduces `expected`.

use nalgebra::DVector;

use crate::composition::{self, ComposedResult, HypergraphInstance, PlacedHyperedge};
use crate::error::{Error, Result};
use crate::reflection::{single_query_hyperedge, FeasibilityReport};

#[derive(Debug, Clone, PartialEq)]
pub struct CatalogFixture {
    pub name: String,
    pub description: String,
    pub raw: HypergraphInstance,
    pub placed: HypergraphInstance,
    /// Closed-form `(R⁺_x, R⁻_x)` per input.
    pub expected: Vec<(f64, f64)>,
}

/// Outcome of [`CatalogFixture::verify`].
#[derive(Debug, Clone)]
pub struct FixtureCheck {
    pub composed: ComposedResult,
    /// Largest deviation of composed sizes from the closed forms.
    pub size_error: f64,
    pub feasibility: FeasibilityReport,
}

impl FixtureCheck {
    pub fn passes(&self, size_tol: f64) -> bool {
        self.size_error <= size_tol && self.feasibility.feasible
    }
}

impl CatalogFixture {
    pub fn compose(&self) -> Result<ComposedResult> {
        composition::compose(&self.placed)
    }

    pub fn verify(&self, feasibility_tol: f64) -> Result<FixtureCheck> {
        let composed = self.compose()?;
        let size_error = composed
            .sizes
            .iter()
            .zip(&self.expected)
            .map(|(a, b)| (a.0 - b.0).abs().max((a.1 - b.1).abs()))
            .fold(0.0, f64::max);
        let feasibility = composed.check(feasibility_tol)?;
        Ok(FixtureCheck {
            composed,
            size_error,
            feasibility,
        })
    }
}

/// A single-query edge `u → v` that is available when `values[x]` holds.
struct QueryEdge {
    name: String,
    u: String,
    v: String,
    values: Vec<bool>,
    weight: f64,
}

/// Per input: flow multiple on every edge and potential on every vertex.
struct Placement {
    flows: Vec<Vec<f64>>,
    potentials: Vec<Vec<f64>>,
}

fn assemble(
    vertices: Vec<String>,
    boundary: Vec<String>,
    labels: &[String],
    edges: &[QueryEdge],
    placement: &Placement,
) -> Result<(HypergraphInstance, HypergraphInstance)> {
    let index = |v: &str| vertices.iter().position(|w| w == v).expect("edge endpoints are vertices");
    let mut raw = Vec::with_capacity(edges.len());
    let mut placed = Vec::with_capacity(edges.len());
    for (e, edge) in edges.iter().enumerate() {
        let (problem, witnesses) = single_query_hyperedge(labels, &edge.values);
        let (a, b) = (index(&edge.u), index(&edge.v));
        let scales: Vec<f64> = placement.flows.iter().map(|f| f[e]).collect();
        let pots: Vec<DVector<f64>> = placement
            .potentials
            .iter()
            .map(|u| DVector::from_vec(vec![u[a], u[b]]))
            .collect();
        let (pp, pw) = composition::place(&problem, &witnesses, &scales, &pots)?;
        let ends = vec![edge.u.clone(), edge.v.clone()];
        raw.push(PlacedHyperedge::new(edge.name.clone(), ends.clone(), problem, witnesses).with_weight(edge.weight));
        placed.push(PlacedHyperedge::new(edge.name.clone(), ends, pp, pw).with_weight(edge.weight));
    }
    Ok((
        HypergraphInstance::new(vertices.clone(), boundary.clone(), raw)?,
        HypergraphInstance::new(vertices, boundary, placed)?,
    ))
}

fn bits(x: &[bool]) -> String {
    x.iter().map(|&b| if b { '1' } else { '0' }).collect()
}

/// First marked index on the inputs `0^{i−1}1^{n−i+1}`, `i = 1..n`.
pub fn first_marked_index(n: usize, alpha: &[f64], beta: &[f64]) -> Result<CatalogFixture> {
    let inputs: Vec<Vec<bool>> = (0..n).map(|i| (0..n).map(|j| j >= i).collect()).collect();
    first_marked_index_on(n, alpha, beta, &inputs)
}

/// The comb: a spine `v₁ → ⋯ → v_{n+1}` whose `j`th edge is available when
/// `x_j = 0` (weight `α_j`), and a tooth `v_j → leaf_j` available when
/// `x_j = 1` (weight `β_j`). Flow runs down the spine to the first one and
/// out through its tooth; the cut takes the earlier teeth and the spine edge
/// below the first one, so
/// `R⁺_x = Σ_{j<i(x)} α_j + β_{i(x)}` and `R⁻_x = Σ_{j<i(x)} 1/β_j + 1/α_{i(x)}`.
pub fn first_marked_index_on(n: usize, alpha: &[f64], beta: &[f64], inputs: &[Vec<bool>]) -> Result<CatalogFixture> {
    if n == 0 || alpha.len() != n || beta.len() != n {
        return Err(Error::DimensionMismatch(format!("need n ≥ 1 and n weights of each kind, n = {n}")));
    }
    if let Some(w) = alpha.iter().chain(beta).find(|w| !(**w > 0.0 && w.is_finite())) {
        return Err(Error::InvalidInstance(format!("weight {w} is not positive")));
    }
    let mut firsts = Vec::with_capacity(inputs.len());
    for x in inputs {
        if x.len() != n {
            return Err(Error::DimensionMismatch(format!("input {} has length {}", bits(x), x.len())));
        }
        firsts.push(x.iter().position(|&b| b).ok_or(Error::AllZeroInput)?);
    }
    let labels: Vec<String> = inputs.iter().map(|x| bits(x)).collect();
    let spine = |j: usize| format!("v{}", j + 1);
    let leaf = |j: usize| format!("leaf{}", j + 1);
    let mut vertices: Vec<String> = (0..=n).map(spine).collect();
    vertices.extend((0..n).map(leaf));
    let mut boundary = vec![spine(0)];
    boundary.extend((0..n).map(leaf));

    let mut edges = Vec::with_capacity(2 * n);
    for j in 0..n {
        edges.push(QueryEdge {
            name: format!("a{}", j + 1),
            u: spine(j),
            v: spine(j + 1),
            values: inputs.iter().map(|x| !x[j]).collect(),
            weight: alpha[j],
        });
        edges.push(QueryEdge {
            name: format!("b{}", j + 1),
            u: spine(j),
            v: leaf(j),
            values: inputs.iter().map(|x| x[j]).collect(),
            weight: beta[j],
        });
    }
    // Edge 2j is a_{j+1}, 2j+1 is b_{j+1}; vertex j is v_{j+1}, n+1+j is leaf_{j+1}.
    let mut placement = Placement {
        flows: Vec::new(),
        potentials: Vec::new(),
    };
    for &i in &firsts {
        let mut f = vec![0.0; 2 * n];
        let mut u = vec![0.0; vertices.len()];
        for j in 0..i {
            f[2 * j] = 1.0;
        }
        f[2 * i + 1] = 1.0;
        for s in u.iter_mut().take(i + 1) {
            *s = 1.0;
        }
        u[n + 1 + i] = 1.0;
        placement.flows.push(f);
        placement.potentials.push(u);
    }
    let expected = firsts
        .iter()
        .map(|&i| {
            (
                alpha[..i].iter().sum::<f64>() + beta[i],
                beta[..i].iter().map(|b| 1.0 / b).sum::<f64>() + 1.0 / alpha[i],
            )
        })
        .collect();
    let (raw, placed) = assemble(vertices, boundary, &labels, &edges, &placement)?;
    Ok(CatalogFixture {
        name: format!("first_marked_index({n})"),
        description: "comb: spine edges [x_j = 0] with weight α_j, teeth [x_j = 1] with weight β_j".into(),
        raw,
        placed,
        expected,
    })
}

/// Complete binary tree of depth `n` whose edge from prefix `p` to `pb`
/// is available when `x_{|p|+1} = b`. Every input follows one root-to-leaf
/// path of `n` edges, and cutting the `n` unavailable siblings along it
/// gives `R⁺_x = R⁻_x = n`. The domain is all of `{0,1}^n`.
pub fn dense_learning(n: usize) -> Result<CatalogFixture> {
    if n == 0 {
        return Err(Error::InvalidInstance("need n ≥ 1".into()));
    }
    if n > 16 {
        return Err(Error::InvalidInstance(format!("n = {n} gives 2^{n} inputs")));
    }
    let inputs: Vec<Vec<bool>> = (0..1usize << n)
        .map(|m| (0..n).map(|j| m >> (n - 1 - j) & 1 == 1).collect())
        .collect();
    let labels: Vec<String> = inputs.iter().map(|x| bits(x)).collect();
    let name = |p: &[bool]| if p.is_empty() { "s".to_string() } else { format!("p{}", bits(p)) };
    // Prefixes in breadth-first order.
    let mut prefixes: Vec<Vec<bool>> = vec![Vec::new()];
    let mut level = vec![Vec::new()];
    for _ in 0..n {
        let next: Vec<Vec<bool>> = level
            .iter()
            .flat_map(|p: &Vec<bool>| [false, true].map(|b| [p.as_slice(), &[b]].concat()))
            .collect();
        prefixes.extend(next.iter().cloned());
        level = next;
    }
    let vertices: Vec<String> = prefixes.iter().map(|p| name(p)).collect();
    let mut boundary = vec![name(&[])];
    boundary.extend(level.iter().map(|p| name(p)));

    let children: Vec<&Vec<bool>> = prefixes.iter().skip(1).collect();
    let edges: Vec<QueryEdge> = children
        .iter()
        .map(|c| {
            let (parent, b) = (&c[..c.len() - 1], c[c.len() - 1]);
            QueryEdge {
                name: format!("e{}", bits(c)),
                u: name(parent),
                v: name(c),
                values: inputs.iter().map(|x| x[c.len() - 1] == b).collect(),
                weight: 1.0,
            }
        })
        .collect();
    let on_path = |x: &[bool], p: &[bool]| x.starts_with(p);
    let placement = Placement {
        flows: inputs
            .iter()
            .map(|x| children.iter().map(|c| if on_path(x, c) { 1.0 } else { 0.0 }).collect())
            .collect(),
        potentials: inputs
            .iter()
            .map(|x| prefixes.iter().map(|p| if on_path(x, p) { 1.0 } else { 0.0 }).collect())
            .collect(),
    };
    let (raw, placed) = assemble(vertices, boundary, &labels, &edges, &placement)?;
    Ok(CatalogFixture {
        name: format!("dense_learning({n})"),
        description: "complete binary tree with edges [x_j = b]".into(),
        raw,
        placed,
        expected: vec![(n as f64, n as f64); inputs.len()],
    })
}

/// `H_m = Σ_{k=1}^m 1/k`.
pub fn harmonic(m: usize) -> f64 {
    (1..=m).map(|k| 1.0 / k as f64).sum()
}

/// Minimum finding on the `n` cyclic shifts of `(0, 1, …, n−1)`, so every
/// index is the minimum once.
pub fn minimum_finding(n: usize) -> Result<CatalogFixture> {
    if n < 2 {
        return Err(Error::InvalidInstance("need n ≥ 2".into()));
    }
    let inputs: Vec<Vec<i64>> = (0..n).map(|r| (0..n).map(|k| ((k + n - r) % n) as i64).collect()).collect();
    minimum_finding_on(&inputs)
}

/// A star of `n` paths from `s`; path `i` has `n` edges `[x_i ≤ x_k]`,
/// `k = 1..n`, and ends at leaf `i`. Only the minimum's path is fully
/// available; unit flow along it gives `R⁺_x = n`. The `j`th smallest
/// element's path has `j − 1` unavailable edges, and dropping the potential
/// by `1/(j−1)` across each of them costs `1/(j−1)` per path, so
/// `R⁻_x = Σ_{j=2}^n 1/(j−1) = H_{n−1}`.
pub fn minimum_finding_on(inputs: &[Vec<i64>]) -> Result<CatalogFixture> {
    let n = inputs.first().map_or(0, |x| x.len());
    if n < 2 {
        return Err(Error::InvalidInstance("need n ≥ 2".into()));
    }
    for x in inputs {
        if x.len() != n {
            return Err(Error::DimensionMismatch(format!("input of length {} for n = {n}", x.len())));
        }
        let mut sorted = x.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::NotDistinct(format!("{x:?}")));
        }
    }
    let labels: Vec<String> = inputs
        .iter()
        .map(|x| x.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","))
        .collect();
    let node = |i: usize, k: usize| match k {
        0 => "s".to_string(),
        k if k == n => format!("leaf{}", i + 1),
        k => format!("b{}:{}", i + 1, k),
    };
    let mut vertices = vec![node(0, 0)];
    for i in 0..n {
        vertices.extend((1..=n).map(|k| node(i, k)));
    }
    let mut boundary = vec![node(0, 0)];
    boundary.extend((0..n).map(|i| node(i, n)));
    let vid = |i: usize, k: usize| if k == 0 { 0 } else { 1 + i * n + (k - 1) };

    let mut edges = Vec::with_capacity(n * n);
    for i in 0..n {
        for k in 0..n {
            edges.push(QueryEdge {
                name: format!("c{}<={}", i + 1, k + 1),
                u: node(i, k),
                v: node(i, k + 1),
                values: inputs.iter().map(|x| x[i] <= x[k]).collect(),
                weight: 1.0,
            });
        }
    }
    let mut placement = Placement {
        flows: Vec::new(),
        potentials: Vec::new(),
    };
    for x in inputs {
        let min = (0..n).min_by_key(|&i| x[i]).expect("n ≥ 2");
        let mut f = vec![0.0; n * n];
        let mut u = vec![0.0; vertices.len()];
        u[0] = 1.0;
        for i in 0..n {
            if i == min {
                for k in 0..n {
                    f[i * n + k] = 1.0;
                    u[vid(i, k + 1)] = 1.0;
                }
                continue;
            }
            let unavailable = (0..n).filter(|&k| x[i] > x[k]).count();
            let mut left = unavailable;
            for k in 0..n {
                if x[i] > x[k] {
                    left -= 1;
                }
                u[vid(i, k + 1)] = left as f64 / unavailable as f64;
            }
        }
        placement.flows.push(f);
        placement.potentials.push(u);
    }
    let (raw, placed) = assemble(vertices, boundary, &labels, &edges, &placement)?;
    Ok(CatalogFixture {
        name: format!("minimum_finding({n})"),
        description: "star of comparison paths [x_i ≤ x_k]".into(),
        raw,
        placed,
        expected: vec![(n as f64, harmonic(n - 1)); inputs.len()],
    })
}

/// The fixture corpus used by the self-test: dense learning `n ≤ 8`,
/// minimum finding `n ≤ 16` and first marked index `n ≤ 32` under both
/// weightings.
pub fn standard_fixtures() -> Result<Vec<CatalogFixture>> {
    let mut out = Vec::new();
    for n in 1..=8 {
        out.push(dense_learning(n)?);
    }
    for n in 2..=16 {
        out.push(minimum_finding(n)?);
    }
    let sqrt: (Vec<f64>, Vec<f64>) = (1..=32).map(|j| (1.0 / (j as f64).sqrt(), (j as f64).sqrt())).unzip();
    out.push(first_marked_index(32, &sqrt.0, &sqrt.1)?);
    let harm: Vec<f64> = (1..=32).map(|j| 1.0 / j as f64).collect();
    out.push(first_marked_index(32, &harm, &[1.0; 32])?);
    Ok(out)
}
