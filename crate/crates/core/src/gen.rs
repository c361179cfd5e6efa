//! Random instance generators for fuzzing and self-tests.
//!
//! All generators take the caller's RNG so seeded runs are reproducible.

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::dectree::{Color, DecisionTree, TreeNode};
use crate::markov::{Edge, WeightedGraph};
use crate::numerics::{CMatrix, CVector, C64};
use crate::qwalk::{Payload, QWalkInstance, Routine, RoutineSizes, Sizes};
use crate::reflection::{
    full_query_hyperedge, run_query_algorithm, span_states, BlockOperator, QueryTrace, StateConversionProblem,
};

/// Connected graph on `n` vertices: a random spanning tree plus each
/// remaining pair with probability `extra`. Resistances are uniform in
/// `range`.
pub fn random_connected_graph<R: Rng>(rng: &mut R, n: usize, extra: f64, range: (f64, f64)) -> WeightedGraph {
    let vertices: Vec<String> = (0..n).map(|i| i.to_string()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut edges = Vec::new();
    let mut present = vec![vec![false; n]; n];
    let draw = |rng: &mut R| rng.gen_range(range.0..=range.1);
    for i in 1..n {
        let j = order[rng.gen_range(0..i)];
        let (a, b) = (order[i], j);
        present[a][b] = true;
        present[b][a] = true;
        edges.push(Edge {
            tail: a,
            head: b,
            resistance: draw(rng),
        });
    }
    for a in 0..n {
        for b in (a + 1)..n {
            if !present[a][b] && rng.gen_bool(extra) {
                edges.push(Edge {
                    tail: a,
                    head: b,
                    resistance: draw(rng),
                });
            }
        }
    }
    WeightedGraph::new(vertices, edges).expect("generated graph is valid")
}

/// Like [`random_connected_graph`] but each vertex also gets a self-loop with
/// probability `loops`, which makes the walk lazy there.
pub fn random_walk_graph<R: Rng>(rng: &mut R, n: usize, extra: f64, loops: f64, range: (f64, f64)) -> WeightedGraph {
    let g = random_connected_graph(rng, n, extra, range);
    let mut edges = g.edges().to_vec();
    for v in 0..n {
        if rng.gen_bool(loops) {
            edges.push(Edge {
                tail: v,
                head: v,
                resistance: rng.gen_range(range.0..=range.1),
            });
        }
    }
    WeightedGraph::new(g.vertices().to_vec(), edges).expect("generated graph is valid")
}

/// Nonzero real vector whose entries sum to zero.
pub fn random_mean_zero<R: Rng>(rng: &mut R, n: usize) -> DVector<f64> {
    loop {
        let mut v = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let mean = v.mean();
        v.add_scalar_mut(-mean);
        if v.norm() > 1e-3 {
            return v;
        }
    }
}

/// Probability distribution supported exactly on `support`.
pub fn random_distribution_on<R: Rng>(rng: &mut R, n: usize, support: &[usize]) -> DVector<f64> {
    let mut v = DVector::zeros(n);
    for &i in support {
        v[i] = rng.gen_range(0.05..1.0);
    }
    let s = v.sum();
    v / s
}

/// Full-support probability distribution.
pub fn random_distribution<R: Rng>(rng: &mut R, n: usize) -> DVector<f64> {
    let all: Vec<usize> = (0..n).collect();
    random_distribution_on(rng, n, &all)
}

/// Two distributions with disjoint, nonempty supports (`n ≥ 2`).
pub fn disjoint_distributions<R: Rng>(rng: &mut R, n: usize) -> (DVector<f64>, DVector<f64>) {
    assert!(n >= 2);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let cut = rng.gen_range(1..n);
    let rest = rng.gen_range(cut..n) + 1;
    (
        random_distribution_on(rng, n, &order[..cut]),
        random_distribution_on(rng, n, &order[cut..rest]),
    )
}

pub fn random_complex_vector<R: Rng>(rng: &mut R, n: usize) -> CVector {
    CVector::from_fn(n, |_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
}

pub fn random_unit_vector<R: Rng>(rng: &mut R, n: usize) -> CVector {
    let v = random_complex_vector(rng, n);
    let norm = v.norm();
    v.unscale(norm)
}

pub fn random_complex_matrix<R: Rng>(rng: &mut R, r: usize, c: usize) -> CMatrix {
    CMatrix::from_fn(r, c, |_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
}

/// Haar-ish random unitary from the QR decomposition of a Gaussian-like
/// matrix.
pub fn random_unitary<R: Rng>(rng: &mut R, n: usize) -> CMatrix {
    random_complex_matrix(rng, n, n).qr().q()
}

/// Random decision tree of depth at most `depth` with 1 to `max_k` children
/// per internal node. With `colored`, each node gets a black child with
/// probability 0.7.
pub fn random_decision_tree<R: Rng>(rng: &mut R, depth: usize, max_k: usize, colored: bool) -> DecisionTree {
    let alphabet: Vec<String> = (0..max_k).map(|s| s.to_string()).collect();
    let mut nodes = vec![TreeNode::leaf("")];
    let mut colors = vec![Color::Black];
    let mut frontier = vec![(0usize, 0usize)];
    while let Some((v, level)) = frontier.pop() {
        let branch = level == 0 || (level < depth && rng.gen_bool(0.7));
        if !branch {
            nodes[v] = TreeNode::leaf(format!("out{v}"));
            continue;
        }
        let k = rng.gen_range(1..=max_k);
        let mut symbols = alphabet.clone();
        symbols.shuffle(rng);
        let black = (colored && rng.gen_bool(0.7)).then(|| rng.gen_range(0..k));
        let mut children = std::collections::BTreeMap::new();
        for (i, sym) in symbols.into_iter().take(k).enumerate() {
            nodes.push(TreeNode::leaf(""));
            colors.push(if black == Some(i) { Color::Black } else { Color::Red });
            children.insert(sym, nodes.len() - 1);
            frontier.push((nodes.len() - 1, level + 1));
        }
        nodes[v] = TreeNode::internal(rng.gen_range(0..depth.max(1)), children);
    }
    let tree = DecisionTree::new(nodes, 0, alphabet).expect("generated tree is valid");
    if colored {
        tree.with_coloring(colors).expect("at most one black child")
    } else {
        tree
    }
}

/// Random quantum walk instance on a connected graph with `n` vertices,
/// `k` database states and `inputs ≥ 2` inputs. Input 0 is negative and
/// input 1 positive; the rest are negative with probability 1/4.
pub fn random_qwalk_instance<R: Rng>(rng: &mut R, n: usize, k: usize, inputs: usize, concrete: bool) -> QWalkInstance {
    assert!(inputs >= 2 && n >= 2);
    let mut marked = vec![Vec::new(), vec![rng.gen_range(0..n)]];
    for _ in 2..inputs {
        if rng.gen_bool(0.25) {
            marked.push(Vec::new());
        } else {
            let size = rng.gen_range(1..=n.min(3));
            let all: Vec<usize> = (0..n).collect();
            marked.push(all.choose_multiple(rng, size).copied().collect());
        }
    }
    random_qwalk_with_marked(rng, n, k, marked, concrete)
}

/// Random quantum walk instance with the given marked sets. Symbolic sizes
/// are uniform in `[0.2, 3]`. Concrete routines are full-query solutions
/// with a random witness balance, and checks at wrong database states
/// answer at random.
pub fn random_qwalk_with_marked<R: Rng>(
    rng: &mut R,
    n: usize,
    k: usize,
    marked: Vec<Vec<usize>>,
    concrete: bool,
) -> QWalkInstance {
    let graph = random_connected_graph(rng, n, 0.3, (0.5, 2.0)).normalized(0.5);
    let nx = marked.len();
    let labels: Vec<String> = (0..nx).map(|x| format!("x{x}")).collect();
    let states: Vec<String> = (0..k).map(|d| format!("d{d}")).collect();
    let database: Vec<Vec<usize>> = (0..n).map(|_| (0..nx).map(|_| rng.gen_range(0..k)).collect()).collect();
    if !concrete {
        let table = |rng: &mut R| -> Sizes { (0..nx).map(|_| (rng.gen_range(0.2..3.0), rng.gen_range(0.2..3.0))).collect() };
        let setup = (0..n).map(|_| table(rng)).collect();
        let update = (0..graph.edges().len()).map(|_| table(rng)).collect();
        let check = (0..n).map(|_| (0..k).map(|_| table(rng)).collect()).collect();
        return QWalkInstance::new(graph, labels, marked, states, database, RoutineSizes { setup, update, check })
            .expect("generated instance is valid");
    }
    let names = |prefix: &str, len: usize| -> Vec<String> { (0..len).map(|i| format!("{prefix}{i}")).collect() };
    let routine = |rng: &mut R, vertices: Vec<String>, flows: Vec<DVector<f64>>, potentials: Vec<DVector<f64>>| {
        let (problem, witnesses) =
            full_query_hyperedge(vertices, &labels, &flows, &potentials).expect("full-query routine");
        let a = rng.gen_range(0.5..2.0);
        Routine {
            problem,
            witnesses: witnesses.scaled(a, 1.0 / a),
        }
    };
    let pair = |len: usize, a: usize, b: usize, sign: f64| {
        let mut v = DVector::zeros(len);
        v[a] = 1.0;
        v[b] = sign;
        v
    };
    let mut setup = Vec::with_capacity(n);
    for v in 0..n {
        let flows = (0..nx).map(|x| pair(k + 1, 0, 1 + database[v][x], -1.0)).collect();
        let pots = (0..nx).map(|x| pair(k + 1, 0, 1 + database[v][x], 1.0)).collect();
        setup.push(routine(rng, names("s", k + 1), flows, pots));
    }
    let mut update = Vec::new();
    for edge in graph.edges() {
        let ends = |x: usize| (database[edge.tail][x], k + database[edge.head][x]);
        let flows = (0..nx).map(|x| pair(2 * k, ends(x).0, ends(x).1, -1.0)).collect();
        let pots = (0..nx).map(|x| pair(2 * k, ends(x).0, ends(x).1, 1.0)).collect();
        update.push(routine(rng, names("u", 2 * k), flows, pots));
    }
    let mut check = Vec::with_capacity(n);
    for v in 0..n {
        let mut row = Vec::with_capacity(k);
        for d in 0..k {
            let (flows, pots): (Vec<_>, Vec<_>) = (0..nx)
                .map(|x| {
                    let value = if database[v][x] == d { marked[x].contains(&v) } else { rng.gen_bool(0.5) };
                    span_states(value)
                })
                .unzip();
            row.push(routine(rng, names("c", 2), flows, pots));
        }
        check.push(row);
    }
    QWalkInstance::concrete(graph, labels, marked, states, database, Payload { setup, update, check })
        .expect("generated instance is valid")
}

/// Random algorithm on `ℂ² ⊗ ℂ^k` with a phase oracle controlled on the
/// first qubit, run on `e₀`. Oracles are diagonal `±1` (Hermitian) or random
/// phases.
pub fn random_query_algorithm<R: Rng>(
    rng: &mut R,
    inputs: usize,
    k: usize,
    steps: usize,
    hermitian: bool,
) -> (StateConversionProblem, Vec<QueryTrace>, Vec<CVector>) {
    let d = 2 * k;
    let mut control = CMatrix::zeros(d, d);
    for i in k..d {
        control[(i, i)] = C64::new(1.0, 0.0);
    }
    let oracles: Vec<BlockOperator> = (0..inputs)
        .map(|_| {
            let mut o = CMatrix::identity(d, d);
            for i in k..d {
                o[(i, i)] = if hermitian {
                    C64::new(if rng.gen_bool(0.5) { 1.0 } else { -1.0 }, 0.0)
                } else {
                    C64::from_polar(1.0, rng.gen_range(0.0..std::f64::consts::TAU))
                };
            }
            BlockOperator::from_matrix(o)
        })
        .collect();
    let unitaries: Vec<CMatrix> = (0..=steps).map(|_| random_unitary(rng, d)).collect();
    let mut start = CVector::zeros(d);
    start[0] = C64::new(1.0, 0.0);
    let labels: Vec<String> = (0..inputs).map(|i| format!("x{i}")).collect();
    run_query_algorithm(&labels, &oracles, &unitaries, &control, &start).expect("controlled queries commute")
}
