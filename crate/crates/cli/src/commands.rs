//! One function per subcommand. Each returns a report, or an error that the
//! caller turns into exit code 2.

use std::path::Path;

use ggc::catalog;
use ggc::composition::{self, ComposedResult};
use ggc::dectree::{self, DecisionTree, WeightingScheme};
use ggc::markov::{self, MarkovChain, WeightedGraph};
use ggc::numerics::C64;
use ggc::qwalk::{self, FindingMode, QWalkBuild, QWalkInstance, Variant};
use ggc::reflection::{self, FeasibilityReport, Sign, StateReflectionProblem, Violation, WitnessFamily};
use ggc::transducer;
use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::report::{Cell, Check, Report, Section, Table};
use crate::schema::{dense_over, distribution_over, Document, LemmaJson, SchemaError, SchemaResult};

/// `⟨x±|y±⟩`, the constraint a violation belongs to.
pub fn violation_location(v: &Violation) -> String {
    format!("⟨{}{}|{}{}⟩", v.x, v.s.symbol(), v.y, v.t.symbol())
}

fn feasibility_check(name: &str, rep: &FeasibilityReport, tol: f64) -> Check {
    Check::at_most(name, rep.max_violation, tol).at(rep.worst.as_ref().filter(|_| !rep.feasible).map(violation_location))
}

fn sizes_table(title: &str, labels: &[String], sizes: &[(f64, f64)], expected: Option<&[(f64, f64)]>) -> Table {
    let mut cols = vec!["input", "R+", "R-"];
    if expected.is_some() {
        cols.extend(["expected R+", "expected R-"]);
    }
    let mut t = Table::new(title, &cols);
    for (i, (l, s)) in labels.iter().zip(sizes).enumerate() {
        let mut row: Vec<Cell> = vec![l.clone().into(), s.0.into(), s.1.into()];
        if let Some(e) = expected {
            row.push(e.get(i).map(|e| e.0).into());
            row.push(e.get(i).map(|e| e.1).into());
        }
        t.push(row);
    }
    t
}

// ---------------------------------------------------------------- verify

pub fn verify(path: &Path, tol: Option<f64>) -> SchemaResult<Report> {
    let tol = tol.unwrap_or(1e-8);
    let mut report = Report::new("verify");
    match Document::load(path)? {
        Document::Reflection { problem, witnesses } => {
            let p = problem.to_problem()?;
            let w = witnesses.to_family()?;
            if p.is_empty() && w.is_empty() {
                return Ok(report);
            }
            let mut s = Section::new("state-reflection problem");
            s.check(feasibility_check("max Gram violation", &reflection::check_feasibility(&p, &w, tol)?, tol));
            s.table(sizes_table("witness sizes", &p.labels(), &w.sizes(), None));
            report.push(s);
        }
        Document::Hyperedge { problem, witnesses } => {
            let p = problem.to_problem()?;
            let w = witnesses.to_family()?;
            if p.is_empty() && w.is_empty() {
                return Ok(report);
            }
            let mut s = Section::new("hyperedge problem");
            s.check(Check::at_most("potential constant on flow support", p.potential_defect(), tol));
            s.check(feasibility_check("max Gram violation", &reflection::check_hyperedge(&p, &w, tol)?, tol));
            s.table(sizes_table("witness sizes", &p.labels(), &w.sizes(), None));
            report.push(s);
        }
        Document::Hypergraph {
            name, instance, expected, ..
        } => {
            let inst = instance.to_instance()?;
            if inst.edges().is_empty() {
                return Ok(report);
            }
            let mut s = Section::new(name.unwrap_or_else(|| "hypergraph instance".into()));
            let v = composition::validate_instance(&inst, tol);
            s.check(Check::at_most("internal net-flows cancel", v.max_flow_residual, tol));
            s.check(Check::at_most("potentials agree", v.max_potential_residual, tol));
            if v.valid {
                let c = composition::compose(&inst)?;
                s.check(feasibility_check("composed Gram violation", &c.check(tol)?, tol));
                let labels = c.problem.labels();
                let exp: Option<Vec<(f64, f64)>> = expected.map(|e| e.iter().map(|e| (e.plus, e.minus)).collect());
                if let Some(e) = &exp {
                    let (gap, at) = e
                        .iter()
                        .zip(&c.sizes)
                        .zip(&labels)
                        .map(|((a, b), l)| ((a.0 - b.0).abs().max((a.1 - b.1).abs()), l.clone()))
                        .fold((0.0, None), |m, (g, l)| if g > m.0 { (g, Some(l)) } else { m });
                    let count_ok = e.len() == c.sizes.len();
                    s.check(Check::flag("one expected size per input", count_ok));
                    s.check(Check::at_most("sizes vs closed form", gap, 1e-9).at(at.filter(|_| gap > 1e-9)));
                }
                s.table(sizes_table("composed sizes", &labels, &c.sizes, exp.as_deref()));
            }
            report.push(s);
        }
        other => {
            return Err(SchemaError::Invalid(format!(
                "verify reads reflection, hyperedge or hypergraph documents, not {}",
                other.kind()
            )))
        }
    }
    Ok(report)
}

// ---------------------------------------------------------------- resistance

fn lemma_section(chain: &MarkovChain, xi: Option<&DVector<f64>>, lemmas: &LemmaJson) -> SchemaResult<Section> {
    let states = chain.states();
    let sigma = distribution_over(states, &lemmas.sigma, "sigma")?;
    let nu = distribution_over(states, &lemmas.nu, "nu")?;
    let xi = xi.cloned().unwrap_or_else(|| &sigma - &nu);
    let mut s = Section::new("resistance lemmas");
    let mut t = Table::new(
        "per walk length",
        &["t", "R(P;ξ)", "t·R(P^t;ξ)", "gap bound", "Σν²/π", "2R(P^t;σ−ν)"],
    );
    for &step in &lemmas.steps {
        if step == 0 {
            return Err(SchemaError::Invalid("walk lengths start at 1".into()));
        }
        let r = markov::check_resistance_lemmas(chain, &xi, step, &sigma, &nu, 1e-9)?;
        s.check(Check::flag(format!("t = {step}: fast-forwarding"), r.fast_forward.holds));
        if let Some(g) = r.gap_bound {
            s.check(Check::flag(format!("t = {step}: spectral-gap bound"), g.holds));
        }
        s.check(Check::flag(format!("t = {step}: fraction bound"), r.fraction.holds));
        t.push(vec![
            (step as usize).into(),
            r.fast_forward.lhs.into(),
            r.fast_forward.rhs.into(),
            r.gap_bound.map(|g| g.rhs).into(),
            r.fraction.lhs.into(),
            r.fraction.rhs.into(),
        ]);
    }
    s.table(t);
    Ok(s)
}

fn resistance_section(g: &WeightedGraph, delta: &DVector<f64>, tol: f64) -> SchemaResult<Section> {
    let r = markov::resistance_routes(g, delta)?;
    let mut s = Section::new("effective resistance");
    let rel = (r.laplacian - r.incidence).abs() / r.laplacian.abs().max(f64::MIN_POSITIVE);
    s.check(Check::at_most("Laplacian vs incidence (relative)", rel, tol));
    let conservation = (r.flow.net_flow(g) - delta).amax();
    s.check(Check::at_most("flow meets the net-flow", conservation, tol));
    let mut t = Table::new("resistance", &["route", "R_eff"]);
    t.push(vec!["Laplacian pseudoinverse".into(), r.laplacian.into()]);
    t.push(vec!["incidence least squares".into(), r.incidence.into()]);
    s.table(t);
    let v = g.vertices();
    let mut f = Table::new("minimum-energy flow", &["edge", "resistance", "flow"]);
    for (e, &x) in g.edges().iter().zip(r.flow.values.iter()) {
        f.push(vec![format!("{} → {}", v[e.tail], v[e.head]).into(), e.resistance.into(), x.into()]);
    }
    s.table(f);
    Ok(s)
}

pub fn resistance(path: &Path, tol: Option<f64>) -> SchemaResult<Report> {
    let tol = tol.unwrap_or(1e-8);
    let mut report = Report::new("resistance");
    let (graph, chain, net_flow, lemmas) = match Document::load(path)? {
        Document::Graph { graph, net_flow, lemmas } => {
            let g = graph.to_graph()?;
            let chain = match &lemmas {
                Some(_) => Some(markov::graph_to_chain(&g)?.0),
                None => None,
            };
            (g, chain, net_flow, lemmas)
        }
        Document::Chain { chain, net_flow, lemmas } => {
            let m = chain.to_chain()?;
            let (pi, _) = markov::stationary_and_gap(&m)?;
            (markov::chain_to_graph(&m, &pi)?, Some(m), net_flow, lemmas)
        }
        other => {
            return Err(SchemaError::Invalid(format!(
                "resistance reads graph or chain documents, not {}",
                other.kind()
            )))
        }
    };
    let delta = net_flow.map(|m| dense_over(graph.vertices(), &m, "net_flow")).transpose()?;
    if let Some(d) = &delta {
        report.push(resistance_section(&graph, d, tol)?);
    }
    if let (Some(l), Some(m)) = (&lemmas, &chain) {
        report.push(lemma_section(m, delta.as_ref(), l)?);
    }
    Ok(report)
}

// ---------------------------------------------------------------- wdt

pub fn wdt(path: &Path, tol: Option<f64>) -> SchemaResult<Report> {
    let tol = tol.unwrap_or(1e-8);
    let tree: DecisionTree = match Document::load(path)? {
        Document::Tree { tree } => tree,
        other => return Err(SchemaError::Invalid(format!("wdt reads tree documents, not {}", other.kind()))),
    };
    let mut report = Report::new("wdt");
    let n = tree.nodes().len();
    let mut weights = vec![0.0; n];
    let mut certificates = vec![None; n];
    let mut nodes = Table::new("internal nodes", &["node", "children", "weight", "dual bound", "gap"]);
    let mut max_gap: f64 = 0.0;
    for &v in tree.postorder() {
        let children = tree.children(v);
        if children.is_empty() {
            continue;
        }
        let cw: Vec<f64> = children.iter().map(|&c| weights[c]).collect();
        let sol = dectree::solve_node_sdp(&cw, 1e-9)?;
        max_gap = max_gap.max(sol.gap);
        nodes.push(vec![v.into(), children.len().into(), sol.value.into(), sol.dual_value.into(), sol.gap.into()]);
        weights[v] = sol.value;
        certificates[v] = Some(sol.certificate);
    }
    let scheme = WeightingScheme { weights, certificates };
    let mut s = Section::new("optimal weighting scheme");
    let v = dectree::validate_scheme(&tree, &scheme, tol);
    s.check(Check::flag("scheme validates", v.valid));
    s.check(Check::at_most("dual-primal gap", max_gap, 1e-6));
    let mut t = Table::new("WDT", &["root weight", "depth", "nodes"]);
    t.push(vec![scheme.root_weight(&tree).into(), tree.depth().into(), n.into()]);
    s.table(t);
    if !nodes.rows.is_empty() {
        s.table(nodes);
    }
    report.push(s);
    if tree.coloring().is_some() {
        let bt = dectree::bt20_scheme(&tree, None, None)?;
        let g = tree.red_count().unwrap_or(0).max(1);
        let depth = tree.depth().max(g);
        let bound = 3.0 * ((g * depth) as f64).sqrt();
        let mut s = Section::new("colored scheme");
        s.check(Check::flag("scheme validates", dectree::validate_scheme(&tree, &bt, tol).valid));
        s.check(Check::at_most("root weight vs 3√(GT)", bt.root_weight(&tree), bound + 1e-6));
        report.push(s);
    }
    Ok(report)
}

// ---------------------------------------------------------------- qwalk

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum WalkMode {
    Detection,
    FindingUnique,
    FindingFraction,
    VariableOne,
    VariableTwo,
    Mnrs,
}

struct WalkInput {
    q: QWalkInstance,
    sigma: DVector<f64>,
    tau: DVector<f64>,
    eps: Option<f64>,
}

/// Finding modes need every input marked: one vertex each for unique
/// finding, two each for a marked fraction of 2/5 under uniform τ.
fn walk_input(path: Option<&Path>, seed: u64, mode: WalkMode) -> SchemaResult<WalkInput> {
    let Some(path) = path else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let marks = |rng: &mut ChaCha8Rng, size: usize| -> Vec<Vec<usize>> {
            let all: Vec<usize> = (0..5).collect();
            (0..4).map(|_| all.choose_multiple(rng, size).copied().collect()).collect()
        };
        let q = match mode {
            WalkMode::FindingUnique => {
                let m = marks(&mut rng, 1);
                ggc::gen::random_qwalk_with_marked(&mut rng, 5, 2, m, true)
            }
            WalkMode::FindingFraction => {
                let m = marks(&mut rng, 2);
                ggc::gen::random_qwalk_with_marked(&mut rng, 5, 2, m, true)
            }
            _ => ggc::gen::random_qwalk_instance(&mut rng, 5, 2, 4, true),
        };
        let n = q.n();
        return Ok(WalkInput {
            q,
            sigma: DVector::from_element(n, 1.0 / n as f64),
            tau: DVector::from_element(n, 1.0 / n as f64),
            eps: None,
        });
    };
    match Document::load(path)? {
        Document::QWalk { instance, sigma, tau, eps } => {
            let v = instance.graph().vertices().to_vec();
            let uniform = DVector::from_element(v.len(), 1.0 / v.len() as f64);
            let sigma = sigma.map(|m| distribution_over(&v, &m, "sigma")).transpose()?.unwrap_or(uniform);
            let tau = tau.map(|m| distribution_over(&v, &m, "tau")).transpose()?.unwrap_or_else(|| sigma.clone());
            Ok(WalkInput {
                q: instance,
                sigma,
                tau,
                eps,
            })
        }
        other => Err(SchemaError::Invalid(format!("qwalk reads qwalk documents, not {}", other.kind()))),
    }
}

fn bound_table(b: &QWalkBuild) -> Table {
    let mut t = Table::new(
        "per-input sizes",
        &["input", "R+ setup", "R+ update", "R+ check", "R- setup", "R- update", "R- check", "composed R+", "composed R-"],
    );
    for (i, inp) in b.report.inputs.iter().enumerate() {
        let part = |x: Option<qwalk::Terms>, f: fn(&qwalk::Terms) -> f64| -> Cell { x.as_ref().map(f).into() };
        let composed = b.composed.as_ref().map(|c| c.sizes[i]);
        t.push(vec![
            inp.label.clone().into(),
            part(inp.plus, |t| t.setup),
            part(inp.plus, |t| t.update),
            part(inp.plus, |t| t.check),
            part(inp.minus, |t| t.setup),
            part(inp.minus, |t| t.update),
            part(inp.minus, |t| t.check),
            composed.map(|c| c.0).into(),
            composed.map(|c| c.1).into(),
        ]);
    }
    t
}

fn build_checks(s: &mut Section, b: &QWalkBuild, tol: f64) -> SchemaResult<()> {
    if let Some(gap) = b.formula_gap() {
        s.check(Check::at_most("closed form vs composed sizes", gap, tol));
    }
    if let Some(c) = &b.composed {
        let rep = match &b.unit_problem {
            Some(unit) => reflection::check_feasibility(unit, &c.witnesses, tol)?,
            None => c.check(tol)?,
        };
        s.check(feasibility_check("composed Gram violation", &rep, tol));
    }
    let mut t = Table::new("objective", &["max R+", "max R-", "√(R+·R-)"]);
    t.push(vec![b.report.max_plus.into(), b.report.max_minus.into(), b.report.objective.into()]);
    s.table(t);
    s.table(bound_table(b));
    Ok(())
}

pub fn qwalk(path: Option<&Path>, mode: WalkMode, ts: &[u32], tol: Option<f64>, seed: u64) -> SchemaResult<Report> {
    let tol = tol.unwrap_or(1e-8);
    let WalkInput { q, sigma, tau, eps } = walk_input(path, seed, mode)?;
    let mut report = Report::new("qwalk");
    match mode {
        WalkMode::Detection => {
            let (mu, nu) = qwalk::detection_flows(&q, &sigma, &tau)?;
            let b = qwalk::build_detection(&q, &sigma, &tau, &mu, &nu)?;
            let mut s = Section::new("detection");
            build_checks(&mut s, &b, tol)?;
            report.push(s);
            if ts.iter().any(|&t| t == 0) {
                return Err(SchemaError::Invalid("walk lengths start at 1".into()));
            }
            if !ts.is_empty() {
                let u = qwalk::unified_detection(&q, &sigma, ts)?;
                let mut s = Section::new("unified bound sweep");
                let mut t = Table::new("sweep", &["t", "R", "bound", "positive bound", "max R+", "max R-"]);
                for p in &u.sweep {
                    s.check(Check::flag(format!("t = {}: bound dominates composed sizes", p.bound.t), p.holds));
                    t.push(vec![
                        (p.bound.t as usize).into(),
                        p.bound.r.into(),
                        p.bound.value.into(),
                        p.bound.positive.into(),
                        p.max_plus.into(),
                        p.max_minus.into(),
                    ]);
                }
                if let Some(p) = u.sweep.first() {
                    s.check(Check::at_most("negative size after rescaling", p.max_minus, 3.0 + 1e-9));
                }
                s.table(t);
                report.push(s);
            }
        }
        WalkMode::FindingUnique | WalkMode::FindingFraction => {
            let finding = if mode == WalkMode::FindingUnique {
                FindingMode::Unique
            } else {
                let eps = match eps {
                    Some(e) => e,
                    None => (0..q.labels().len())
                        .find(|&x| q.is_positive(x))
                        .map(|x| q.marked()[x].iter().map(|&v| tau[v]).sum())
                        .ok_or_else(|| SchemaError::Invalid("no input has a marked vertex".into()))?,
                };
                FindingMode::Fraction(eps)
            };
            let mu = vec![sigma.clone(); q.labels().len()];
            let b = qwalk::build_finding(&q, &sigma, &tau, finding, &mu)?;
            let mut s = Section::new(if mode == WalkMode::FindingUnique { "unique finding" } else { "fraction finding" });
            build_checks(&mut s, &b, tol)?;
            report.push(s);
        }
        WalkMode::VariableOne | WalkMode::VariableTwo => {
            let variant = if mode == WalkMode::VariableOne { Variant::One } else { Variant::Two };
            let r = qwalk::variable_query_bounds(&q, &sigma, &tau, variant)?;
            let mut s = Section::new("variable-query detection");
            s.check(Check::at_most("largest positive term", r.max_positive_term, 1.0 + 1e-9));
            s.check(Check::flag("negative sizes within the amortized expression", r.negative_ok));
            s.check(Check::flag("positive terms at most 1", r.positive_ok));
            build_checks(&mut s, &r.build, tol)?;
            let mut t = Table::new("parameters", &["R", "ε", "E_σ[S+]"]);
            t.push(vec![r.r.into(), r.eps.into(), r.setup_mean.into()]);
            s.table(t);
            report.push(s);
        }
        WalkMode::Mnrs => {
            let r = qwalk::mnrs_bounds(&q)?;
            let mut s = Section::new("MNRS regime");
            s.check(Check::flag("resistance inequality on every positive input", r.checks.iter().flatten().all(|c| c.holds)));
            s.check(Check::flag("variable-query bounds hold", r.holds));
            let mut t = Table::new("per input", &["input", "ε", "R_eff", "(1/ε−1)/δ", "corollary bound"]);
            for (x, l) in q.labels().iter().enumerate() {
                let c = r.checks[x];
                t.push(vec![
                    l.clone().into(),
                    c.map(|c| c.eps).into(),
                    c.map(|c| c.resistance).into(),
                    c.map(|c| c.bound).into(),
                    r.corollary[x].into(),
                ]);
            }
            s.table(t);
            let mut g = Table::new("walk", &["spectral gap"]);
            g.push(vec![r.gap.into()]);
            s.table(g);
            report.push(s);
        }
    }
    Ok(report)
}

// ---------------------------------------------------------------- transduce

fn reflection_input(doc: Document) -> SchemaResult<(StateReflectionProblem, WitnessFamily)> {
    match doc {
        Document::Reflection { problem, witnesses } => Ok((problem.to_problem()?, witnesses.to_family()?)),
        Document::Hyperedge { problem, witnesses } => Ok((problem.to_problem()?.to_reflection(), witnesses.to_family()?)),
        Document::Hypergraph { instance, .. } => {
            let ComposedResult { problem, witnesses, .. } = composition::compose(&instance.to_instance()?)?;
            Ok((problem.to_reflection(), witnesses))
        }
        other => Err(SchemaError::Invalid(format!(
            "transduce reads reflection, hyperedge or hypergraph documents, not {}",
            other.kind()
        ))),
    }
}

pub fn transduce(path: &Path, ks: &[usize], tol: Option<f64>) -> SchemaResult<Report> {
    let tol = tol.unwrap_or(1e-9);
    if ks.iter().any(|&k| k == 0) {
        return Err(SchemaError::Invalid("-K values must be positive".into()));
    }
    let (p, w) = reflection_input(Document::load(path)?)?;
    let mut report = Report::new("transduce");
    if p.is_empty() {
        return Ok(report);
    }
    let t = transducer::build_reflection(&p, &w, tol.max(1e-8))?;
    let exact = transducer::verify_all(&t, &p, &w, tol)?;
    let mut s = Section::new("transducer");
    s.check(Check::at_most("U(I⊕O_x)(σ⊕w) = ±σ⊕w", exact, tol));
    let rows: Vec<Vec<(String, f64, f64, f64, Vec<transducer::Emulation>)>> = (0..p.len())
        .into_par_iter()
        .map(|x| {
            let tx = t.with_oracle(&p.inputs()[x].oracle)?;
            Sign::BOTH
                .iter()
                .map(|&sg| {
                    let sigma = p.state(x, sg);
                    let sol = transducer::transduce_solve(&tx, sigma)?;
                    let err = (&sol.output - sigma * C64::new(sg.value(), 0.0)).norm();
                    let runs = ks.iter().map(|&k| transducer::emulate_from(&tx, sigma, &sol, k)).collect();
                    Ok((
                        format!("{}{}", p.inputs()[x].label, sg.symbol()),
                        err,
                        sol.catalyst.norm(),
                        w.get(x, sg).norm(),
                        runs,
                    ))
                })
                .collect::<ggc::Result<Vec<_>>>()
        })
        .collect::<ggc::Result<_>>()?;
    let rows: Vec<_> = rows.into_iter().flatten().collect();
    let out = rows.iter().map(|r| r.1).fold(0.0, f64::max);
    s.check(Check::at_most("solved output vs ±σ", out, 1e-8));
    let (excess, at) = rows
        .iter()
        .map(|r| (r.2 - r.3, r.0.clone()))
        .fold((f64::NEG_INFINITY, None), |m, (v, l)| if v > m.0 { (v, Some(l)) } else { m });
    s.check(Check::at_most("‖w_min‖ − ‖w_supplied‖", excess, 1e-9).at(at.filter(|_| excess > 1e-9)));
    let mut cat = Table::new("catalysts", &["input", "‖w_min‖", "‖w_supplied‖", "output error"]);
    for r in &rows {
        cat.push(vec![r.0.clone().into(), r.2.into(), r.3.into(), r.1.into()]);
    }
    s.table(cat);
    if !ks.is_empty() {
        let mut em = Table::new("emulation", &["input", "K", "state error", "output error", "2‖w_min‖/√K"]);
        for r in &rows {
            for e in &r.4 {
                em.push(vec![
                    r.0.clone().into(),
                    e.calls.into(),
                    e.state_error.into(),
                    e.output_error.into(),
                    e.bound.into(),
                ]);
            }
        }
        s.table(em);
    }
    report.push(s);
    Ok(report)
}

// ---------------------------------------------------------------- catalog

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum FixtureName {
    DenseLearning,
    MinimumFinding,
    /// `α_j = 1/√j`, `β_j = √j`.
    FirstMarkedSqrt,
    /// `α_j = 1/j`, `β_j = 1`.
    FirstMarkedHarmonic,
}

pub fn catalog_document(name: FixtureName, n: Option<usize>) -> SchemaResult<Document> {
    let f = match name {
        FixtureName::DenseLearning => {
            let n = n.unwrap_or(3);
            if !(1..=16).contains(&n) {
                return Err(SchemaError::Invalid("dense learning takes 1 ≤ n ≤ 16".into()));
            }
            catalog::dense_learning(n)?
        }
        FixtureName::MinimumFinding => {
            let n = n.unwrap_or(4);
            if n < 2 {
                return Err(SchemaError::Invalid("minimum finding takes n ≥ 2".into()));
            }
            catalog::minimum_finding(n)?
        }
        FixtureName::FirstMarkedSqrt | FixtureName::FirstMarkedHarmonic => {
            let n = n.unwrap_or(5);
            let (a, b): (Vec<f64>, Vec<f64>) = (1..=n)
                .map(|j| {
                    let j = j as f64;
                    if name == FixtureName::FirstMarkedSqrt {
                        (1.0 / j.sqrt(), j.sqrt())
                    } else {
                        (1.0 / j, 1.0)
                    }
                })
                .unzip();
            catalog::first_marked_index(n, &a, &b)?
        }
    };
    Ok(Document::from_fixture(&f))
}

/// Write a document to `path`, creating parent directories.
pub fn save(doc: &Document, path: &Path) -> SchemaResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| SchemaError::Io {
            path: dir.display().to_string(),
            message: e.to_string(),
        })?;
    }
    std::fs::write(path, crate::report::to_json_bytes(doc)).map_err(|e| SchemaError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}
