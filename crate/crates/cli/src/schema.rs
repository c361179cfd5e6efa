//! JSON documents read and written by the command-line tool.
//!
//! Complex numbers are `[re, im]`, matrices are row-major nested arrays and
//! distributions are maps from label to probability. Every document carries
//! a `kind` tag.

use std::collections::BTreeMap;

use ggc::catalog::CatalogFixture;
use ggc::composition::{HypergraphInstance, PlacedHyperedge};
use ggc::dectree::DecisionTree;
use ggc::markov::{Edge, MarkovChain, WeightedGraph};
use ggc::numerics::{CMatrix, CVector, C64};
use ggc::qwalk::QWalkInstance;
use ggc::reflection::{
    BlockOperator, HyperedgeInput, HyperedgeProblem, Involution, ReflectionInput, StateReflectionProblem, WitnessFamily,
};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Distributions must sum to 1 within this.
pub const DISTRIBUTION_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("malformed JSON: {0}")]
    Parse(String),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Library(#[from] ggc::Error),
}

pub type SchemaResult<T> = std::result::Result<T, SchemaError>;

fn invalid<T>(msg: impl Into<String>) -> SchemaResult<T> {
    Err(SchemaError::Invalid(msg.into()))
}

pub type ComplexJson = [f64; 2];
pub type VectorJson = Vec<ComplexJson>;
pub type MatrixJson = Vec<Vec<ComplexJson>>;

pub fn vector_to_json(v: &CVector) -> VectorJson {
    v.iter().map(|z| [z.re, z.im]).collect()
}

pub fn vector_from_json(v: &[ComplexJson]) -> CVector {
    CVector::from_iterator(v.len(), v.iter().map(|z| C64::new(z[0], z[1])))
}

pub fn matrix_to_json(m: &CMatrix) -> MatrixJson {
    m.row_iter().map(|r| r.iter().map(|z| [z.re, z.im]).collect()).collect()
}

pub fn matrix_from_json(rows: &[Vec<ComplexJson>]) -> SchemaResult<CMatrix> {
    let ncols = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != ncols) {
        return invalid("matrix rows have different lengths");
    }
    Ok(CMatrix::from_fn(rows.len(), ncols, |i, j| C64::new(rows[i][j][0], rows[i][j][1])))
}

pub fn real_matrix_from_json(rows: &[Vec<f64>]) -> SchemaResult<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != ncols) {
        return invalid("matrix rows have different lengths");
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

/// Block-diagonal involution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleJson {
    pub blocks: Vec<MatrixJson>,
}

impl OracleJson {
    pub fn from_involution(o: &Involution) -> Self {
        Self {
            blocks: o.op().blocks().iter().map(matrix_to_json).collect(),
        }
    }

    pub fn to_involution(&self) -> SchemaResult<Involution> {
        let blocks = self.blocks.iter().map(|b| matrix_from_json(b)).collect::<SchemaResult<Vec<_>>>()?;
        if blocks.iter().any(|b| b.nrows() != b.ncols()) {
            return invalid("oracle blocks must be square");
        }
        Ok(Involution::new(BlockOperator::new(blocks))?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WitnessJson {
    pub plus: Vec<VectorJson>,
    pub minus: Vec<VectorJson>,
}

impl WitnessJson {
    pub fn from_family(w: &WitnessFamily) -> Self {
        Self {
            plus: w.plus.iter().map(vector_to_json).collect(),
            minus: w.minus.iter().map(vector_to_json).collect(),
        }
    }

    pub fn to_family(&self) -> SchemaResult<WitnessFamily> {
        if self.plus.len() != self.minus.len() {
            return invalid("need as many negative witnesses as positive ones");
        }
        Ok(WitnessFamily::new(
            self.plus.iter().map(|v| vector_from_json(v)).collect(),
            self.minus.iter().map(|v| vector_from_json(v)).collect(),
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReflectionInputJson {
    pub label: String,
    pub plus: VectorJson,
    pub minus: VectorJson,
    pub oracle: OracleJson,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReflectionJson {
    pub inputs: Vec<ReflectionInputJson>,
}

impl ReflectionJson {
    pub fn from_problem(p: &StateReflectionProblem) -> Self {
        Self {
            inputs: p
                .inputs()
                .iter()
                .map(|i| ReflectionInputJson {
                    label: i.label.clone(),
                    plus: vector_to_json(&i.plus),
                    minus: vector_to_json(&i.minus),
                    oracle: OracleJson::from_involution(&i.oracle),
                })
                .collect(),
        }
    }

    pub fn to_problem(&self) -> SchemaResult<StateReflectionProblem> {
        let inputs = self
            .inputs
            .iter()
            .map(|i| {
                Ok(ReflectionInput {
                    label: i.label.clone(),
                    plus: vector_from_json(&i.plus),
                    minus: vector_from_json(&i.minus),
                    oracle: i.oracle.to_involution()?,
                })
            })
            .collect::<SchemaResult<Vec<_>>>()?;
        Ok(StateReflectionProblem::new(inputs)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperedgeInputJson {
    pub label: String,
    pub flow: Vec<f64>,
    pub potential: Vec<f64>,
    pub oracle: OracleJson,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperedgeJson {
    pub vertices: Vec<String>,
    pub inputs: Vec<HyperedgeInputJson>,
}

impl HyperedgeJson {
    pub fn from_problem(p: &HyperedgeProblem) -> Self {
        Self {
            vertices: p.vertices().to_vec(),
            inputs: p
                .inputs()
                .iter()
                .map(|i| HyperedgeInputJson {
                    label: i.label.clone(),
                    flow: i.flow.iter().copied().collect(),
                    potential: i.potential.iter().copied().collect(),
                    oracle: OracleJson::from_involution(&i.oracle),
                })
                .collect(),
        }
    }

    pub fn to_problem(&self) -> SchemaResult<HyperedgeProblem> {
        let inputs = self
            .inputs
            .iter()
            .map(|i| {
                Ok(HyperedgeInput {
                    label: i.label.clone(),
                    flow: DVector::from_vec(i.flow.clone()),
                    potential: DVector::from_vec(i.potential.clone()),
                    oracle: i.oracle.to_involution()?,
                })
            })
            .collect::<SchemaResult<Vec<_>>>()?;
        Ok(HyperedgeProblem::new(self.vertices.clone(), inputs)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacedJson {
    pub name: String,
    pub vertices: Vec<String>,
    pub weight: f64,
    pub problem: HyperedgeJson,
    pub witnesses: WitnessJson,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypergraphJson {
    pub vertices: Vec<String>,
    pub boundary: Vec<String>,
    pub edges: Vec<PlacedJson>,
}

impl HypergraphJson {
    pub fn from_instance(inst: &HypergraphInstance) -> Self {
        Self {
            vertices: inst.vertices().to_vec(),
            boundary: inst.boundary().to_vec(),
            edges: inst
                .edges()
                .iter()
                .map(|e| PlacedJson {
                    name: e.name.clone(),
                    vertices: e.vertices.clone(),
                    weight: e.weight,
                    problem: HyperedgeJson::from_problem(&e.problem),
                    witnesses: WitnessJson::from_family(&e.witnesses),
                })
                .collect(),
        }
    }

    pub fn to_instance(&self) -> SchemaResult<HypergraphInstance> {
        let edges = self
            .edges
            .iter()
            .map(|e| {
                Ok(PlacedHyperedge::new(
                    e.name.clone(),
                    e.vertices.clone(),
                    e.problem.to_problem()?,
                    e.witnesses.to_family()?,
                )
                .with_weight(e.weight))
            })
            .collect::<SchemaResult<Vec<_>>>()?;
        Ok(HypergraphInstance::new(self.vertices.clone(), self.boundary.clone(), edges)?)
    }
}

/// Edges name their endpoints by label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeJson {
    pub tail: String,
    pub head: String,
    pub resistance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphJson {
    pub vertices: Vec<String>,
    pub edges: Vec<EdgeJson>,
}

impl GraphJson {
    pub fn from_graph(g: &WeightedGraph) -> Self {
        let v = g.vertices();
        Self {
            vertices: v.to_vec(),
            edges: g
                .edges()
                .iter()
                .map(|e| EdgeJson {
                    tail: v[e.tail].clone(),
                    head: v[e.head].clone(),
                    resistance: e.resistance,
                })
                .collect(),
        }
    }

    pub fn to_graph(&self) -> SchemaResult<WeightedGraph> {
        let index = |l: &str| {
            self.vertices
                .iter()
                .position(|v| v == l)
                .ok_or_else(|| SchemaError::Invalid(format!("edge endpoint {l} is not a vertex")))
        };
        let edges = self
            .edges
            .iter()
            .map(|e| {
                Ok(Edge {
                    tail: index(&e.tail)?,
                    head: index(&e.head)?,
                    resistance: e.resistance,
                })
            })
            .collect::<SchemaResult<Vec<_>>>()?;
        Ok(WeightedGraph::new(self.vertices.clone(), edges)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainJson {
    pub states: Vec<String>,
    pub p: Vec<Vec<f64>>,
}

impl ChainJson {
    pub fn from_chain(m: &MarkovChain) -> Self {
        Self {
            states: m.states().to_vec(),
            p: m.p().row_iter().map(|r| r.iter().copied().collect()).collect(),
        }
    }

    pub fn to_chain(&self) -> SchemaResult<MarkovChain> {
        Ok(MarkovChain::new(self.states.clone(), real_matrix_from_json(&self.p)?)?)
    }
}

pub type Distribution = BTreeMap<String, f64>;

/// Dense vector over `labels` from a label map. Labels missing from the map
/// get 0.
pub fn dense_over(labels: &[String], map: &BTreeMap<String, f64>, what: &str) -> SchemaResult<DVector<f64>> {
    for k in map.keys() {
        if !labels.contains(k) {
            return invalid(format!("{what} mentions unknown label {k}"));
        }
    }
    Ok(DVector::from_iterator(labels.len(), labels.iter().map(|l| map.get(l).copied().unwrap_or(0.0))))
}

/// Like [`dense_over`], and checks nonnegativity and total mass 1.
pub fn distribution_over(labels: &[String], map: &Distribution, what: &str) -> SchemaResult<DVector<f64>> {
    let v = dense_over(labels, map, what)?;
    if v.iter().any(|&p| !(p >= 0.0)) {
        return invalid(format!("{what} has a negative or non-numeric probability"));
    }
    let total = v.sum();
    if (total - 1.0).abs() > DISTRIBUTION_TOL {
        return invalid(format!("{what} sums to {total}, not 1"));
    }
    Ok(v)
}

pub fn distribution_to_json(labels: &[String], v: &DVector<f64>) -> Distribution {
    labels.iter().cloned().zip(v.iter().copied()).filter(|(_, p)| *p != 0.0).collect()
}

/// Closed-form sizes shipped with exported fixtures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectedJson {
    pub label: String,
    pub plus: f64,
    pub minus: f64,
}

/// Every document the tool reads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Document {
    /// A graph, optionally with a net-flow and a lemma-check draw.
    Graph {
        graph: GraphJson,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        net_flow: Option<BTreeMap<String, f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lemmas: Option<LemmaJson>,
    },
    Chain {
        chain: ChainJson,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        net_flow: Option<BTreeMap<String, f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lemmas: Option<LemmaJson>,
    },
    Reflection {
        problem: ReflectionJson,
        witnesses: WitnessJson,
    },
    Hyperedge {
        problem: HyperedgeJson,
        witnesses: WitnessJson,
    },
    Hypergraph {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        description: Option<String>,
        instance: HypergraphJson,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        expected: Option<Vec<ExpectedJson>>,
    },
    Tree {
        tree: DecisionTree,
    },
    #[serde(rename = "qwalk")]
    QWalk {
        instance: QWalkInstance,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sigma: Option<Distribution>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tau: Option<Distribution>,
        /// Marked fraction for fraction finding.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        eps: Option<f64>,
    },
}

/// Disjoint-support distributions `σ`, `ν` and walk lengths for the lemma
/// checks of `resistance`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LemmaJson {
    pub sigma: Distribution,
    pub nu: Distribution,
    #[serde(default = "default_steps")]
    pub steps: Vec<u32>,
}

fn default_steps() -> Vec<u32> {
    (1..=5).collect()
}

impl Document {
    pub fn kind(&self) -> &'static str {
        match self {
            Document::Graph { .. } => "graph",
            Document::Chain { .. } => "chain",
            Document::Reflection { .. } => "reflection",
            Document::Hyperedge { .. } => "hyperedge",
            Document::Hypergraph { .. } => "hypergraph",
            Document::Tree { .. } => "tree",
            Document::QWalk { .. } => "qwalk",
        }
    }

    pub fn parse(text: &str) -> SchemaResult<Self> {
        serde_json::from_str(text).map_err(|e| SchemaError::Parse(e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> SchemaResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| SchemaError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text)
    }

    pub fn from_fixture(f: &CatalogFixture) -> Self {
        let labels = f.placed.labels();
        Document::Hypergraph {
            name: Some(f.name.clone()),
            description: Some(f.description.clone()),
            instance: HypergraphJson::from_instance(&f.placed),
            expected: Some(
                labels
                    .into_iter()
                    .zip(&f.expected)
                    .map(|(label, &(plus, minus))| ExpectedJson { label, plus, minus })
                    .collect(),
            ),
        }
    }
}
