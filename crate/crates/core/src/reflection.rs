//! State-conversion and state-reflection problems and their witnesses.
//!
//! A state-reflection problem asks, for every input `x`, to reflect about the
//! state `σ⁺_x` while flipping the sign of `σ⁻_x`, with access to an
//! involution oracle `O_x`. A witness family is feasible when
//!
//! ```text
//! ⟨w^s_x|(I − O_x† O_y)|w^t_y⟩ = (1 − st)·⟨σ^s_x|σ^t_y⟩     for all x, y and s, t ∈ {±1}
//! ```
//!
//! [`check_feasibility`] verifies exactly this. The constructors in this module
//! turn other objects (conversion problems, span programs, database updates,
//! query algorithms) into problems with feasible witnesses, or rescale
//! problems without leaving the feasible region.

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::numerics::{
    complexify_vector, concat, direct_sum, kron_vec, min_norm_solve, CMatrix, CVector, C64,
};

/// Tolerance for structural checks on oracles and projectors.
pub const ORACLE_TOL: f64 = 1e-9;

fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

/// A block-diagonal operator `⊕_i B_i`.
///
/// Composed oracles are direct sums of many small oracles; storing the blocks
/// keeps them cheap to apply.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockOperator {
    blocks: Vec<CMatrix>,
}

impl BlockOperator {
    pub fn new(blocks: Vec<CMatrix>) -> Self {
        for b in &blocks {
            assert_eq!(b.nrows(), b.ncols(), "operator blocks must be square");
        }
        Self { blocks }
    }

    pub fn from_matrix(m: CMatrix) -> Self {
        Self::new(vec![m])
    }

    pub fn identity(dim: usize) -> Self {
        Self::new(vec![CMatrix::identity(dim, dim)])
    }

    pub fn blocks(&self) -> &[CMatrix] {
        &self.blocks
    }

    pub fn dim(&self) -> usize {
        self.blocks.iter().map(|b| b.nrows()).sum()
    }

    pub fn apply(&self, v: &CVector) -> CVector {
        assert_eq!(v.len(), self.dim(), "operator applied to a vector of the wrong size");
        let mut out = CVector::zeros(v.len());
        let mut at = 0;
        for b in &self.blocks {
            let n = b.nrows();
            let part = b * v.rows(at, n);
            out.rows_mut(at, n).copy_from(&part);
            at += n;
        }
        out
    }

    pub fn adjoint(&self) -> Self {
        Self::new(self.blocks.iter().map(|b| b.adjoint()).collect())
    }

    pub fn to_dense(&self) -> CMatrix {
        crate::numerics::block_diag(&self.blocks)
    }

    /// `⊕_i ops_i`.
    pub fn direct_sum(ops: &[&BlockOperator]) -> Self {
        Self::new(ops.iter().flat_map(|o| o.blocks.iter().cloned()).collect())
    }

    /// `I_m ⊗ self`, i.e. `m` copies along the diagonal.
    pub fn repeat(&self, m: usize) -> Self {
        let mut blocks = Vec::with_capacity(m * self.blocks.len());
        for _ in 0..m {
            blocks.extend(self.blocks.iter().cloned());
        }
        Self::new(blocks)
    }

    /// `max_i ‖B_i†B_i − I‖_F`.
    pub fn unitarity_defect(&self) -> f64 {
        self.blocks
            .iter()
            .map(|b| (b.adjoint() * b - CMatrix::identity(b.nrows(), b.nrows())).norm())
            .fold(0.0, f64::max)
    }

    /// `max_i ‖B_i² − I‖_F`.
    pub fn involution_defect(&self) -> f64 {
        self.blocks
            .iter()
            .map(|b| (b * b - CMatrix::identity(b.nrows(), b.nrows())).norm())
            .fold(0.0, f64::max)
    }
}

/// An operator with `O² = I` (within [`ORACLE_TOL`]).
#[derive(Debug, Clone, PartialEq)]
pub struct Involution(BlockOperator);

impl Involution {
    pub fn new(op: BlockOperator) -> Result<Self> {
        let d = op.involution_defect();
        if d > ORACLE_TOL {
            return Err(Error::InvalidInstance(format!("oracle is not an involution (‖O²−I‖ = {d:.3e})")));
        }
        Ok(Self(op))
    }

    pub fn from_matrix(m: CMatrix) -> Result<Self> {
        Self::new(BlockOperator::from_matrix(m))
    }

    pub fn identity(dim: usize) -> Self {
        Self(BlockOperator::identity(dim))
    }

    /// The 1×1 oracle `±1`.
    pub fn sign(positive: bool) -> Self {
        let v = if positive { 1.0 } else { -1.0 };
        Self(BlockOperator::from_matrix(CMatrix::from_element(1, 1, c(v))))
    }

    /// Permutation matrix swapping basis vectors `a` and `b` of `ℂ^dim`.
    pub fn swap(dim: usize, a: usize, b: usize) -> Self {
        let mut m = CMatrix::identity(dim, dim);
        if a != b {
            m[(a, a)] = c(0.0);
            m[(b, b)] = c(0.0);
            m[(a, b)] = c(1.0);
            m[(b, a)] = c(1.0);
        }
        Self(BlockOperator::from_matrix(m))
    }

    /// `2Π − I` for an orthogonal projector `Π`.
    pub fn from_projector(p: &CMatrix) -> Result<Self> {
        let n = p.nrows();
        Self::from_matrix(p.scale(2.0) - CMatrix::identity(n, n))
    }

    pub fn op(&self) -> &BlockOperator {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }

    pub fn apply(&self, v: &CVector) -> CVector {
        self.0.apply(v)
    }

    /// Direct sum of involutions.
    pub fn direct_sum(parts: &[&Involution]) -> Self {
        Self(BlockOperator::direct_sum(&parts.iter().map(|p| &p.0).collect::<Vec<_>>()))
    }

    /// `I_m ⊗ O`.
    pub fn repeat(&self, m: usize) -> Self {
        Self(self.0.repeat(m))
    }

    /// Projection onto the `sign` eigenspace, `(v + sign·Ov)/2`.
    pub fn project(&self, v: &CVector, sign: Sign) -> CVector {
        (v + self.apply(v) * c(sign.value())).scale(0.5)
    }
}

/// Sign label of the two halves of a state-reflection problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub const BOTH: [Sign; 2] = [Sign::Plus, Sign::Minus];

    pub fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }

    pub fn symbol(self) -> char {
        match self {
            Sign::Plus => '+',
            Sign::Minus => '-',
        }
    }
}

/// One input of a state-conversion problem: map `source` to `target` using
/// the unitary `oracle`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConversionInput {
    pub label: String,
    pub source: CVector,
    pub target: CVector,
    pub oracle: BlockOperator,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateConversionProblem {
    inputs: Vec<ConversionInput>,
}

impl StateConversionProblem {
    pub fn new(inputs: Vec<ConversionInput>) -> Result<Self> {
        if let Some(first) = inputs.first() {
            let (d1, d2, m) = (first.source.len(), first.target.len(), first.oracle.dim());
            for inp in &inputs {
                if inp.source.len() != d1 || inp.target.len() != d2 || inp.oracle.dim() != m {
                    return Err(Error::DimensionMismatch(format!("input {} has inconsistent dimensions", inp.label)));
                }
                let d = inp.oracle.unitarity_defect();
                if d > ORACLE_TOL {
                    return Err(Error::InvalidInstance(format!(
                        "oracle of input {} is not unitary (defect {d:.3e})",
                        inp.label
                    )));
                }
            }
        }
        Ok(Self { inputs })
    }

    pub fn inputs(&self) -> &[ConversionInput] {
        &self.inputs
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Dimension of the oracle space `ℳ`.
    pub fn oracle_dim(&self) -> usize {
        self.inputs.first().map_or(0, |i| i.oracle.dim())
    }

    /// Whether every `‖σ_x‖ = ‖τ_x‖ = 1`.
    pub fn is_unit_norm(&self, tol: f64) -> bool {
        self.inputs
            .iter()
            .all(|i| (i.source.norm() - 1.0).abs() <= tol && (i.target.norm() - 1.0).abs() <= tol)
    }

    /// The same problem with oracle `(I_m ⊗ O_x) ⊕ (I_m ⊗ O_x†)`, i.e. with
    /// access to the oracle and its inverse. Witnesses produced by
    /// [`from_reflection`] are feasible for this problem.
    pub fn bidirectional(&self, m: usize) -> Self {
        let inputs = self
            .inputs
            .iter()
            .map(|i| ConversionInput {
                oracle: BlockOperator::direct_sum(&[&i.oracle.repeat(m), &i.oracle.adjoint().repeat(m)]),
                ..i.clone()
            })
            .collect();
        Self { inputs }
    }
}

/// One input of a state-reflection problem.
#[derive(Debug, Clone, PartialEq)]
pub struct ReflectionInput {
    pub label: String,
    pub plus: CVector,
    pub minus: CVector,
    pub oracle: Involution,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateReflectionProblem {
    inputs: Vec<ReflectionInput>,
}

impl StateReflectionProblem {
    pub fn new(inputs: Vec<ReflectionInput>) -> Result<Self> {
        if let Some(first) = inputs.first() {
            let (v, h) = (first.plus.len(), first.oracle.dim());
            for inp in &inputs {
                if inp.plus.len() != v || inp.minus.len() != v || inp.oracle.dim() != h {
                    return Err(Error::DimensionMismatch(format!("input {} has inconsistent dimensions", inp.label)));
                }
                let overlap = inp.plus.dotc(&inp.minus).norm();
                if overlap > 1e-9 * (inp.plus.norm() * inp.minus.norm()).max(1.0) {
                    return Err(Error::InvalidInstance(format!(
                        "states of input {} are not orthogonal (overlap {overlap:.3e})",
                        inp.label
                    )));
                }
            }
        }
        Ok(Self { inputs })
    }

    pub fn inputs(&self) -> &[ReflectionInput] {
        &self.inputs
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn labels(&self) -> Vec<String> {
        self.inputs.iter().map(|i| i.label.clone()).collect()
    }

    /// Dimension of the state space `𝒱`.
    pub fn state_dim(&self) -> usize {
        self.inputs.first().map_or(0, |i| i.plus.len())
    }

    /// Dimension of the oracle space `ℋ`.
    pub fn oracle_dim(&self) -> usize {
        self.inputs.first().map_or(0, |i| i.oracle.dim())
    }

    pub fn state(&self, x: usize, s: Sign) -> &CVector {
        match s {
            Sign::Plus => &self.inputs[x].plus,
            Sign::Minus => &self.inputs[x].minus,
        }
    }
}

/// Positive and negative witnesses, aligned with the problem's inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct WitnessFamily {
    pub plus: Vec<CVector>,
    pub minus: Vec<CVector>,
}

impl WitnessFamily {
    pub fn new(plus: Vec<CVector>, minus: Vec<CVector>) -> Self {
        assert_eq!(plus.len(), minus.len(), "witness lists must align");
        Self { plus, minus }
    }

    pub fn zeros(n: usize, dim: usize) -> Self {
        Self::new(vec![CVector::zeros(dim); n], vec![CVector::zeros(dim); n])
    }

    pub fn len(&self) -> usize {
        self.plus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.plus.is_empty()
    }

    pub fn get(&self, x: usize, s: Sign) -> &CVector {
        match s {
            Sign::Plus => &self.plus[x],
            Sign::Minus => &self.minus[x],
        }
    }

    /// `(R⁺_x, R⁻_x)` for every input.
    pub fn sizes(&self) -> Vec<(f64, f64)> {
        self.plus
            .iter()
            .zip(&self.minus)
            .map(|(p, m)| (p.norm_squared(), m.norm_squared()))
            .collect()
    }

    /// `(max R⁺, max R⁻)`.
    pub fn max_sizes(&self) -> (f64, f64) {
        self.sizes()
            .into_iter()
            .fold((0.0, 0.0), |(a, b), (p, m)| (a.max(p), b.max(m)))
    }

    /// `√(max R⁺ · max R⁻)`, the objective bounding the adversary value.
    pub fn objective(&self) -> f64 {
        let (p, m) = self.max_sizes();
        (p * m).sqrt()
    }

    /// `max ‖O_x w^±_x ∓ w^±_x‖`.
    pub fn normal_form_defect(&self, problem: &StateReflectionProblem) -> f64 {
        let mut worst = 0.0f64;
        for (x, inp) in problem.inputs().iter().enumerate() {
            for s in Sign::BOTH {
                let w = self.get(x, s);
                worst = worst.max((inp.oracle.apply(w) - w * c(s.value())).norm());
            }
        }
        worst
    }

    /// Project every witness onto its oracle eigenspace. Warns when the
    /// discarded part exceeds `tol`; returns the largest discarded norm.
    pub fn normalized(&self, problem: &StateReflectionProblem, tol: f64) -> (Self, f64) {
        let mut worst = 0.0f64;
        let mut out = self.clone();
        for (x, inp) in problem.inputs().iter().enumerate() {
            for s in Sign::BOTH {
                let w = self.get(x, s);
                let p = inp.oracle.project(w, s);
                worst = worst.max((w - &p).norm());
                match s {
                    Sign::Plus => out.plus[x] = p,
                    Sign::Minus => out.minus[x] = p,
                }
            }
        }
        if worst > tol {
            warn!("witness family was not in normal form; discarded a component of norm {worst:.3e}");
        }
        (out, worst)
    }

    /// Multiply positive witnesses by `a` and negative ones by `b`.
    pub fn scaled(&self, a: f64, b: f64) -> Self {
        Self::new(
            self.plus.iter().map(|w| w.scale(a)).collect(),
            self.minus.iter().map(|w| w.scale(b)).collect(),
        )
    }
}

/// The worst constraint of a feasibility check.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub x: String,
    pub y: String,
    pub s: Sign,
    pub t: Sign,
    pub value: f64,
}

/// Outcome of a Gram-constraint check.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityReport {
    pub max_violation: f64,
    pub worst: Option<Violation>,
    /// Largest violation over sign pairs, per input pair.
    pub pair_residuals: DMatrix<f64>,
    pub tol: f64,
    pub feasible: bool,
}

impl FeasibilityReport {
    fn from_residuals(residuals: DMatrix<f64>, worst: Option<Violation>, tol: f64) -> Self {
        let max_violation = worst.as_ref().map_or(0.0, |v| v.value);
        Self {
            max_violation,
            worst,
            pair_residuals: residuals,
            tol,
            feasible: max_violation <= tol,
        }
    }
}

/// Check every Gram constraint of a state-reflection problem.
pub fn check_feasibility(
    problem: &StateReflectionProblem,
    witnesses: &WitnessFamily,
    tol: f64,
) -> Result<FeasibilityReport> {
    let n = problem.len();
    if witnesses.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} witness pairs for {n} inputs",
            witnesses.len()
        )));
    }
    let h = problem.oracle_dim();
    for x in 0..n {
        for s in Sign::BOTH {
            if witnesses.get(x, s).len() != h {
                return Err(Error::DimensionMismatch(format!(
                    "witness {}{} has dimension {}, oracle space has {h}",
                    problem.inputs()[x].label,
                    s.symbol(),
                    witnesses.get(x, s).len()
                )));
            }
        }
    }
    // O_x w^s_x, computed once.
    let applied: Vec<[CVector; 2]> = (0..n)
        .map(|x| {
            let o = &problem.inputs()[x].oracle;
            [o.apply(&witnesses.plus[x]), o.apply(&witnesses.minus[x])]
        })
        .collect();
    let idx = |s: Sign| if s == Sign::Plus { 0 } else { 1 };
    let mut residuals = DMatrix::zeros(n, n);
    let mut worst: Option<Violation> = None;
    for x in 0..n {
        for y in x..n {
            let mut pair: f64 = 0.0;
            for s in Sign::BOTH {
                for t in Sign::BOTH {
                    let wx = witnesses.get(x, s);
                    let wy = witnesses.get(y, t);
                    let lhs = wx.dotc(wy) - applied[x][idx(s)].dotc(&applied[y][idx(t)]);
                    let rhs = problem.state(x, s).dotc(problem.state(y, t)) * c(1.0 - s.value() * t.value());
                    let v = (lhs - rhs).norm();
                    pair = pair.max(v);
                    if worst.as_ref().map_or(true, |w| v > w.value) {
                        worst = Some(Violation {
                            x: problem.inputs()[x].label.clone(),
                            y: problem.inputs()[y].label.clone(),
                            s,
                            t,
                            value: v,
                        });
                    }
                }
            }
            residuals[(x, y)] = pair;
            residuals[(y, x)] = pair;
        }
    }
    Ok(FeasibilityReport::from_residuals(residuals, worst, tol))
}

/// Check the Gram constraints of a state-conversion problem,
/// `⟨σ_x|σ_y⟩ − ⟨τ_x|τ_y⟩ = ⟨w_x|(I − (I_m⊗O_x)†(I_m⊗O_y))|w_y⟩`, where the
/// multiplicity `m` is read off the witness length.
pub fn check_conversion(problem: &StateConversionProblem, witnesses: &[CVector], tol: f64) -> Result<FeasibilityReport> {
    let n = problem.len();
    if witnesses.len() != n {
        return Err(Error::DimensionMismatch(format!("{} witnesses for {n} inputs", witnesses.len())));
    }
    let d = problem.oracle_dim();
    let m = multiplicity(witnesses, d)?;
    let applied: Vec<CVector> = problem
        .inputs()
        .iter()
        .zip(witnesses)
        .map(|(inp, w)| inp.oracle.repeat(m).apply(w))
        .collect();
    let mut residuals = DMatrix::zeros(n, n);
    let mut worst: Option<Violation> = None;
    for x in 0..n {
        for y in x..n {
            let (px, py) = (&problem.inputs()[x], &problem.inputs()[y]);
            let lhs = witnesses[x].dotc(&witnesses[y]) - applied[x].dotc(&applied[y]);
            let rhs = px.source.dotc(&py.source) - px.target.dotc(&py.target);
            let v = (lhs - rhs).norm();
            residuals[(x, y)] = v;
            residuals[(y, x)] = v;
            if worst.as_ref().map_or(true, |w| v > w.value) {
                worst = Some(Violation {
                    x: px.label.clone(),
                    y: py.label.clone(),
                    s: Sign::Plus,
                    t: Sign::Plus,
                    value: v,
                });
            }
        }
    }
    Ok(FeasibilityReport::from_residuals(residuals, worst, tol))
}

fn multiplicity(witnesses: &[CVector], d: usize) -> Result<usize> {
    let Some(first) = witnesses.first() else {
        return Ok(1);
    };
    let len = first.len();
    if d == 0 || len % d != 0 || witnesses.iter().any(|w| w.len() != len) {
        return Err(Error::DimensionMismatch(format!(
            "witness length {len} is not a common multiple of the oracle dimension {d}"
        )));
    }
    Ok(len / d)
}

/// `Ō = [[0, O'†], [O', 0]]` with `O' = I_m ⊗ O`: the swap of `O' ⊕ O'†`.
fn swapped_oracle(o: &BlockOperator, m: usize) -> Result<Involution> {
    let op = o.repeat(m).to_dense();
    let n = op.nrows();
    let mut big = CMatrix::zeros(2 * n, 2 * n);
    big.view_mut((0, n), (n, n)).copy_from(&op.adjoint());
    big.view_mut((n, 0), (n, n)).copy_from(&op);
    Involution::from_matrix(big)
}

fn reflection_states(inp: &ConversionInput) -> (CVector, CVector) {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    (
        direct_sum(&inp.source, &inp.target).scale(r),
        direct_sum(&inp.source, &(-&inp.target)).scale(r),
    )
}

/// The state-reflection problem `(σ ⊕ ±τ)/√2` with oracle `Ō_x` that a
/// conversion problem reduces to, for witnesses of multiplicity `m`.
pub fn reflection_of(problem: &StateConversionProblem, m: usize) -> Result<StateReflectionProblem> {
    let inputs = problem
        .inputs()
        .iter()
        .map(|inp| {
            let (plus, minus) = reflection_states(inp);
            Ok(ReflectionInput {
                label: inp.label.clone(),
                plus,
                minus,
                oracle: swapped_oracle(&inp.oracle, m)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    StateReflectionProblem::new(inputs)
}

/// Turn a feasible conversion solution into a state-reflection solution of
/// the same size: `w^±_x = (w_x ⊕ ±O_x w_x)/√2`.
pub fn to_reflection(
    problem: &StateConversionProblem,
    witnesses: &[CVector],
    tol: f64,
) -> Result<(StateReflectionProblem, WitnessFamily)> {
    let report = check_conversion(problem, witnesses, tol)?;
    if !report.feasible {
        return Err(Error::InfeasibleInput(format!(
            "conversion witnesses violate a constraint by {:.3e}",
            report.max_violation
        )));
    }
    let m = multiplicity(witnesses, problem.oracle_dim())?;
    let reflected = reflection_of(problem, m)?;
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let mut plus = Vec::with_capacity(problem.len());
    let mut minus = Vec::with_capacity(problem.len());
    for (inp, w) in problem.inputs().iter().zip(witnesses) {
        let ow = inp.oracle.repeat(m).apply(w);
        plus.push(direct_sum(w, &ow).scale(r));
        minus.push(direct_sum(w, &(-&ow)).scale(r));
    }
    Ok((reflected, WitnessFamily::new(plus, minus)))
}

/// Recover conversion witnesses from a feasible solution of
/// [`reflection_of`]`(problem, m)`.
///
/// With `(v)_b = (I + bŌ_x)v/2`, the output is
/// `w_x = [(w⁺)_+ + (w⁻)_− ; (w⁺)_− + (w⁻)_+] / √2` and
/// `‖w_x‖² = (R⁺_x + R⁻_x)/2`. It is feasible for
/// `problem.bidirectional(m)` with multiplicity 2, and for `problem` itself
/// with multiplicity `4m` when every oracle is Hermitian.
pub fn from_reflection(
    problem: &StateConversionProblem,
    witnesses: &WitnessFamily,
    tol: f64,
) -> Result<(StateConversionProblem, Vec<CVector>)> {
    let d = problem.oracle_dim();
    let len = witnesses.plus.first().map_or(2 * d, |w| w.len());
    if d == 0 || len % (2 * d) != 0 {
        return Err(Error::DimensionMismatch(format!(
            "reflection witnesses of length {len} do not match oracle dimension {d}"
        )));
    }
    let m = len / (2 * d);
    let reflected = reflection_of(problem, m)?;
    let report = check_feasibility(&reflected, witnesses, tol)?;
    if !report.feasible {
        return Err(Error::InfeasibleInput(format!(
            "reflection witnesses violate a constraint by {:.3e}",
            report.max_violation
        )));
    }
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let out = reflected
        .inputs()
        .iter()
        .enumerate()
        .map(|(x, inp)| {
            let o = &inp.oracle;
            let (wp, wm) = (&witnesses.plus[x], &witnesses.minus[x]);
            let first = o.project(wp, Sign::Plus) + o.project(wm, Sign::Minus);
            let second = o.project(wp, Sign::Minus) + o.project(wm, Sign::Plus);
            direct_sum(&first, &second).scale(r)
        })
        .collect();
    Ok((problem.bidirectional(m), out))
}

/// Rescale a state-reflection problem: states become `α₊Dσ⁺_x` and
/// `α₋(D⁻¹)†σ⁻_x`, witnesses `α₊w⁺_x` and `α₋w⁻_x`. Feasibility is preserved.
pub fn rescale(
    problem: &StateReflectionProblem,
    witnesses: &WitnessFamily,
    d: &CMatrix,
    alpha_plus: C64,
    alpha_minus: C64,
) -> Result<(StateReflectionProblem, WitnessFamily)> {
    let v = problem.state_dim();
    if d.shape() != (v, v) {
        return Err(Error::DimensionMismatch(format!(
            "scaling matrix is {}x{}, state space has dimension {v}",
            d.nrows(),
            d.ncols()
        )));
    }
    let inv_adj = if v == 0 {
        CMatrix::zeros(0, 0)
    } else {
        let sv = crate::numerics::singular_values(&d);
        let (lo, hi) = sv.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &s| (lo.min(s), hi.max(s)));
        if !(lo > 1e-12 * hi) {
            return Err(Error::SingularScaling(lo));
        }
        d.clone()
            .try_inverse()
            .ok_or(Error::SingularScaling(lo))?
            .adjoint()
    };
    let inputs = problem
        .inputs()
        .iter()
        .map(|inp| ReflectionInput {
            label: inp.label.clone(),
            plus: (d * &inp.plus) * alpha_plus,
            minus: (&inv_adj * &inp.minus) * alpha_minus,
            oracle: inp.oracle.clone(),
        })
        .collect();
    let w = WitnessFamily::new(
        witnesses.plus.iter().map(|w| w * alpha_plus).collect(),
        witnesses.minus.iter().map(|w| w * alpha_minus).collect(),
    );
    Ok((StateReflectionProblem { inputs }, w))
}

/// One input of a hyperedge problem: a net-flow and a potential over the
/// hyperedge's vertices.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperedgeInput {
    pub label: String,
    pub flow: DVector<f64>,
    pub potential: DVector<f64>,
    pub oracle: Involution,
}

/// A state-reflection problem whose positive states are mean-zero net-flows
/// and whose negative states are potentials constant on the flow's support.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperedgeProblem {
    vertices: Vec<String>,
    inputs: Vec<HyperedgeInput>,
}

/// Tolerance for the hyperedge invariants.
pub const HYPEREDGE_TOL: f64 = 1e-10;

impl HyperedgeProblem {
    pub fn new(vertices: Vec<String>, inputs: Vec<HyperedgeInput>) -> Result<Self> {
        let n = vertices.len();
        let h = inputs.first().map(|i| i.oracle.dim());
        for inp in &inputs {
            if inp.flow.len() != n || inp.potential.len() != n {
                return Err(Error::DimensionMismatch(format!(
                    "input {} does not match the {n} hyperedge vertices",
                    inp.label
                )));
            }
            if Some(inp.oracle.dim()) != h {
                return Err(Error::DimensionMismatch(format!("oracle of input {} has the wrong size", inp.label)));
            }
            let scale = inp.flow.amax().max(1.0);
            if inp.flow.sum().abs() > HYPEREDGE_TOL * scale {
                return Err(Error::InvalidInstance(format!(
                    "net-flow of input {} sums to {:.3e}",
                    inp.label,
                    inp.flow.sum()
                )));
            }
            if let Some(spread) = potential_spread_on_support(&inp.flow, &inp.potential) {
                if spread > HYPEREDGE_TOL * inp.potential.amax().max(1.0) {
                    return Err(Error::InvalidInstance(format!(
                        "potential of input {} varies by {spread:.3e} on the flow's support",
                        inp.label
                    )));
                }
            }
        }
        Ok(Self { vertices, inputs })
    }

    /// Skips the potential check; composed boundaries are hyperedge problems
    /// by construction but may be assembled from flows in several pieces.
    pub(crate) fn from_parts(vertices: Vec<String>, inputs: Vec<HyperedgeInput>) -> Self {
        Self { vertices, inputs }
    }

    /// Largest spread of a potential on its flow's support.
    pub fn potential_defect(&self) -> f64 {
        self.inputs
            .iter()
            .filter_map(|i| potential_spread_on_support(&i.flow, &i.potential))
            .fold(0.0, f64::max)
    }

    pub fn vertices(&self) -> &[String] {
        &self.vertices
    }

    pub fn inputs(&self) -> &[HyperedgeInput] {
        &self.inputs
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn labels(&self) -> Vec<String> {
        self.inputs.iter().map(|i| i.label.clone()).collect()
    }

    pub fn oracle_dim(&self) -> usize {
        self.inputs.first().map_or(0, |i| i.oracle.dim())
    }

    pub fn index_of(&self, vertex: &str) -> Option<usize> {
        self.vertices.iter().position(|v| v == vertex)
    }

    /// View as a state-reflection problem (`σ⁺ = δ`, `σ⁻ = U`).
    pub fn to_reflection(&self) -> StateReflectionProblem {
        StateReflectionProblem {
            inputs: self
                .inputs
                .iter()
                .map(|i| ReflectionInput {
                    label: i.label.clone(),
                    plus: complexify_vector(&i.flow),
                    minus: complexify_vector(&i.potential),
                    oracle: i.oracle.clone(),
                })
                .collect(),
        }
    }

    /// Same problem on relabeled vertices.
    pub fn relabeled(&self, vertices: Vec<String>) -> Result<Self> {
        assert_eq!(vertices.len(), self.vertices.len());
        Self::new(vertices, self.inputs.clone())
    }
}

fn potential_spread_on_support(flow: &DVector<f64>, potential: &DVector<f64>) -> Option<f64> {
    let scale = flow.amax();
    let on: Vec<f64> = (0..flow.len())
        .filter(|&v| flow[v].abs() > 1e-12 * scale.max(1e-300) && scale > 0.0)
        .map(|v| potential[v])
        .collect();
    if on.is_empty() {
        return None;
    }
    let (lo, hi) = on.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    Some(hi - lo)
}

/// Check a hyperedge problem's witnesses.
pub fn check_hyperedge(problem: &HyperedgeProblem, witnesses: &WitnessFamily, tol: f64) -> Result<FeasibilityReport> {
    check_feasibility(&problem.to_reflection(), witnesses, tol)
}

/// Shift every potential by a constant, `U_x ← U_x + C_x·𝟙`. The feasible
/// region is unchanged.
pub fn shift_potential(problem: &HyperedgeProblem, shift: &[f64]) -> HyperedgeProblem {
    assert_eq!(shift.len(), problem.len(), "one shift per input");
    let inputs = problem
        .inputs
        .iter()
        .zip(shift)
        .map(|(i, &s)| HyperedgeInput {
            potential: i.potential.add_scalar(s),
            ..i.clone()
        })
        .collect();
    HyperedgeProblem {
        vertices: problem.vertices.clone(),
        inputs,
    }
}

/// A span program `(ℋ, x ↦ ℋ(x), 𝒦, w₀)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpanProgram {
    pub labels: Vec<String>,
    /// Orthogonal projector onto `ℋ(x)`, per input.
    pub available: Vec<CMatrix>,
    /// Orthonormal basis of `𝒦`, as columns (possibly zero columns wide).
    pub kernel: CMatrix,
    pub target: CVector,
}

impl SpanProgram {
    pub fn new(labels: Vec<String>, available: Vec<CMatrix>, kernel: CMatrix, target: CVector) -> Result<Self> {
        let d = target.len();
        if labels.len() != available.len() {
            return Err(Error::DimensionMismatch("one projector per input".into()));
        }
        if kernel.nrows() != d && kernel.ncols() > 0 {
            return Err(Error::DimensionMismatch("kernel basis has the wrong height".into()));
        }
        for (l, p) in labels.iter().zip(&available) {
            if p.shape() != (d, d) {
                return Err(Error::DimensionMismatch(format!("projector of input {l} has the wrong size")));
            }
            let defect = (p * p - p).norm() + (p - p.adjoint()).norm();
            if defect > ORACLE_TOL {
                return Err(Error::InvalidInstance(format!("ℋ({l}) is not an orthogonal projector")));
            }
        }
        let kernel = if kernel.ncols() == 0 { CMatrix::zeros(d, 0) } else { kernel };
        if (kernel.adjoint() * &kernel - CMatrix::identity(kernel.ncols(), kernel.ncols())).norm() > ORACLE_TOL {
            return Err(Error::InvalidInstance("kernel basis is not orthonormal".into()));
        }
        if (kernel.adjoint() * &target).norm() > ORACLE_TOL {
            return Err(Error::InvalidInstance("target is not orthogonal to the kernel".into()));
        }
        Ok(Self {
            labels,
            available,
            kernel,
            target,
        })
    }

    pub fn dim(&self) -> usize {
        self.target.len()
    }

    fn kernel_projector(&self) -> CMatrix {
        &self.kernel * self.kernel.adjoint()
    }

    /// Check a witness for input `x` as positive (`positive = true`) or
    /// negative.
    pub fn check_witness(&self, x: usize, positive: bool, w: &CVector) -> Result<()> {
        let tol = ORACLE_TOL * w.norm().max(1.0);
        let p = &self.available[x];
        let k = self.kernel_projector();
        let label = &self.labels[x];
        if positive {
            if (p * w - w).norm() > tol {
                return Err(Error::InvalidWitness(format!("positive witness of {label} leaves ℋ(x)")));
            }
            let diff = w - &self.target;
            if (&k * &diff - &diff).norm() > tol {
                return Err(Error::InvalidWitness(format!("positive witness of {label} minus w₀ leaves 𝒦")));
            }
        } else {
            if (p * w).norm() > tol || (&k * w).norm() > tol {
                return Err(Error::InvalidWitness(format!(
                    "negative witness of {label} is not orthogonal to ℋ(x) + 𝒦"
                )));
            }
            if (self.target.dotc(w) - c(1.0)).norm() > tol {
                return Err(Error::InvalidWitness(format!("negative witness of {label} has ⟨w₀|w⟩ ≠ 1")));
            }
        }
        Ok(())
    }

    /// `C = √(max positive size · max negative size)` for a witness set.
    pub fn complexity(&self, f: &[bool], witnesses: &[CVector]) -> f64 {
        let (mut p, mut n) = (0.0f64, 0.0f64);
        for (&fx, w) in f.iter().zip(witnesses) {
            if fx {
                p = p.max(w.norm_squared());
            } else {
                n = n.max(w.norm_squared());
            }
        }
        (p * n).sqrt()
    }
}

/// Vertex labels of a span-program hyperedge.
pub const SPAN_SOURCE: &str = "s";
pub const SPAN_SINK: &str = "t";

/// The two-vertex hyperedge of a boolean value: a unit flow `s → t` with zero
/// potential when `value` is true, no flow and potential `−1_t` otherwise.
pub fn span_states(value: bool) -> (DVector<f64>, DVector<f64>) {
    if value {
        (DVector::from_vec(vec![1.0, -1.0]), DVector::zeros(2))
    } else {
        (DVector::zeros(2), DVector::from_vec(vec![0.0, -1.0]))
    }
}

/// Convert a span program with witnesses into a two-vertex hyperedge
/// problem with oracle `2Π_{ℋ(x)} − I`. Witness sizes carry over exactly.
pub fn span_to_hyperedge(
    program: &SpanProgram,
    f: &[bool],
    witnesses: &[CVector],
) -> Result<(HyperedgeProblem, WitnessFamily)> {
    let n = program.labels.len();
    if f.len() != n || witnesses.len() != n {
        return Err(Error::DimensionMismatch("need one value and one witness per input".into()));
    }
    let d = program.dim();
    let mut inputs = Vec::with_capacity(n);
    let mut plus = Vec::with_capacity(n);
    let mut minus = Vec::with_capacity(n);
    for x in 0..n {
        program.check_witness(x, f[x], &witnesses[x])?;
        let (flow, potential) = span_states(f[x]);
        inputs.push(HyperedgeInput {
            label: program.labels[x].clone(),
            flow,
            potential,
            oracle: Involution::from_projector(&program.available[x])?,
        });
        if f[x] {
            plus.push(witnesses[x].clone());
            minus.push(CVector::zeros(d));
        } else {
            plus.push(CVector::zeros(d));
            minus.push(witnesses[x].clone());
        }
    }
    let problem = HyperedgeProblem::new(vec![SPAN_SOURCE.into(), SPAN_SINK.into()], inputs)?;
    Ok((problem, WitnessFamily::new(plus, minus)))
}

/// Recover a span program from a feasible two-vertex hyperedge solution of
/// span shape. Returns the program, the computed function and its witnesses.
pub fn hyperedge_to_span(
    problem: &HyperedgeProblem,
    witnesses: &WitnessFamily,
) -> Result<(SpanProgram, Vec<bool>, Vec<CVector>)> {
    if problem.vertices().len() != 2 {
        return Err(Error::UnsupportedShape("span programs need a two-vertex hyperedge".into()));
    }
    let d = problem.oracle_dim();
    let f: Vec<bool> = problem.inputs().iter().map(|i| i.flow.amax() > 0.5).collect();
    let positives: Vec<usize> = (0..f.len()).filter(|&x| f[x]).collect();
    let negatives: Vec<usize> = (0..f.len()).filter(|&x| !f[x]).collect();

    // 𝒦 = span of differences of positive witnesses, w₀ = the part of one
    // positive witness orthogonal to it.
    let mut basis: Vec<CVector> = Vec::new();
    if let Some(&x0) = positives.first() {
        for &x in &positives[1..] {
            let mut v = &witnesses.plus[x] - &witnesses.plus[x0];
            for b in &basis {
                v -= b * b.dotc(&v);
            }
            let norm = v.norm();
            if norm > 1e-10 {
                basis.push(v.unscale(norm));
            }
        }
    }
    let kernel = if basis.is_empty() {
        CMatrix::zeros(d, 0)
    } else {
        CMatrix::from_columns(&basis)
    };
    let target = if let Some(&x0) = positives.first() {
        let w = &witnesses.plus[x0];
        w - &kernel * (kernel.adjoint() * w)
    } else if !negatives.is_empty() {
        // No positive inputs: the least-norm w₀ with ⟨w₀|w_y⟩ = 1 for all y.
        let a = CMatrix::from_fn(negatives.len(), d, |i, j| witnesses.minus[negatives[i]][j].conj());
        let b = CVector::from_element(negatives.len(), c(1.0));
        min_norm_solve(&a, &b)
    } else {
        CVector::zeros(d)
    };
    let available = problem
        .inputs()
        .iter()
        .map(|i| {
            let o = i.oracle.op().to_dense();
            (o + CMatrix::identity(d, d)).scale(0.5)
        })
        .collect();
    let program = SpanProgram::new(problem.labels(), available, kernel, target)?;
    let ws: Vec<CVector> = (0..f.len())
        .map(|x| if f[x] { witnesses.plus[x].clone() } else { witnesses.minus[x].clone() })
        .collect();
    for x in 0..f.len() {
        program.check_witness(x, f[x], &ws[x])?;
    }
    Ok((program, f, ws))
}

/// The single-query span program hyperedge for a boolean value: oracle
/// `±1` on `ℂ`, both witnesses equal to 1.
pub fn single_query_hyperedge(labels: &[String], values: &[bool]) -> (HyperedgeProblem, WitnessFamily) {
    let one = CVector::from_element(1, c(1.0));
    let zero = CVector::zeros(1);
    let mut inputs = Vec::new();
    let mut plus = Vec::new();
    let mut minus = Vec::new();
    for (l, &v) in labels.iter().zip(values) {
        let (flow, potential) = span_states(v);
        inputs.push(HyperedgeInput {
            label: l.clone(),
            flow,
            potential,
            oracle: Involution::sign(v),
        });
        plus.push(if v { one.clone() } else { zero.clone() });
        minus.push(if v { zero.clone() } else { one.clone() });
    }
    let problem = HyperedgeProblem::new(vec![SPAN_SOURCE.into(), SPAN_SINK.into()], inputs)
        .expect("span states are valid hyperedge states");
    (problem, WitnessFamily::new(plus, minus))
}

/// Database update `ξ_x → η_x` (function evaluation when `ξ_x` is a fixed
/// `⊥`): `δ_x = 1_ξ − 1_η`, `U_x = 1_ξ + 1_η`. The witnesses must be
/// feasible for the corresponding state-reflection problem.
pub fn database_hyperedge(
    vertices: Vec<String>,
    labels: &[String],
    inputs: &[usize],
    outputs: &[usize],
    oracles: &[Involution],
    witnesses: &WitnessFamily,
    tol: f64,
) -> Result<(HyperedgeProblem, WitnessFamily)> {
    let problem = database_problem(vertices, labels, inputs, outputs, oracles)?;
    let report = check_hyperedge(&problem, witnesses, tol)?;
    if !report.feasible {
        return Err(Error::InfeasibleInput(format!(
            "database witnesses violate a constraint by {:.3e}",
            report.max_violation
        )));
    }
    Ok((problem, witnesses.clone()))
}

/// The hyperedge problem of a database update, without witnesses.
pub fn database_problem(
    vertices: Vec<String>,
    labels: &[String],
    inputs: &[usize],
    outputs: &[usize],
    oracles: &[Involution],
) -> Result<HyperedgeProblem> {
    let n = vertices.len();
    let items = labels
        .iter()
        .enumerate()
        .map(|(x, l)| {
            let mut flow = DVector::zeros(n);
            let mut potential = DVector::zeros(n);
            flow[inputs[x]] += 1.0;
            flow[outputs[x]] -= 1.0;
            potential[inputs[x]] += 1.0;
            potential[outputs[x]] += 1.0;
            HyperedgeInput {
                label: l.clone(),
                flow,
                potential,
                oracle: oracles[x].clone(),
            }
        })
        .collect();
    HyperedgeProblem::new(vertices, items)
}

/// Label of the extra vertex in function evaluation and fraction recovery.
pub const BOTTOM: &str = "⊥";

/// `|⊥⟩ ± |ψ_x⟩` with `ψ_x = Σ_{v∈M_x} √π_v |v⟩ / √ε`: the state-reflection
/// problem whose feasible region equals that of [`known_fraction_rescale`].
pub fn known_fraction_problem(
    pi: &DVector<f64>,
    eps: f64,
    labels: &[String],
    marked: &[Vec<usize>],
    oracles: &[Involution],
) -> Result<StateReflectionProblem> {
    check_fraction(pi, eps, labels, marked)?;
    let n = pi.len();
    let inputs = labels
        .iter()
        .enumerate()
        .map(|(x, l)| {
            let mut psi = CVector::zeros(n + 1);
            for &v in &marked[x] {
                psi[v + 1] = c((pi[v] / eps).sqrt());
            }
            let mut bottom = CVector::zeros(n + 1);
            bottom[0] = c(1.0);
            ReflectionInput {
                label: l.clone(),
                plus: &bottom + &psi,
                minus: &bottom - &psi,
                oracle: oracles[x].clone(),
            }
        })
        .collect();
    StateReflectionProblem::new(inputs)
}

fn check_fraction(pi: &DVector<f64>, eps: f64, labels: &[String], marked: &[Vec<usize>]) -> Result<()> {
    for (l, m) in labels.iter().zip(marked) {
        let mass: f64 = m.iter().map(|&v| pi[v]).sum();
        if (mass - eps).abs() > 1e-10 {
            return Err(Error::FractionMismatch {
                input: l.clone(),
                found: mass,
                expected: eps,
            });
        }
    }
    Ok(())
}

/// The diagonal map `⊥ ↦ ⊥`, `v ↦ −√(π_v/ε) v` relating the two fraction
/// problems.
pub fn fraction_scaling(pi: &DVector<f64>, eps: f64) -> CMatrix {
    let n = pi.len();
    let mut d = CMatrix::identity(n + 1, n + 1);
    for v in 0..n {
        d[(v + 1, v + 1)] = c(-(pi[v] / eps).sqrt());
    }
    d
}

/// Rescale a feasible solution of [`known_fraction_problem`] into the
/// hyperedge problem `δ_x = 1_⊥ − π|_{M_x}/ε`, `U_x = 1_⊥ + 1_{M_x}` on
/// `{⊥} ∪ V`. Witnesses are unchanged.
pub fn known_fraction_rescale(
    pi: &DVector<f64>,
    eps: f64,
    vertices: &[String],
    labels: &[String],
    marked: &[Vec<usize>],
    oracles: &[Involution],
    witnesses: &WitnessFamily,
    tol: f64,
) -> Result<(HyperedgeProblem, WitnessFamily)> {
    let unit = known_fraction_problem(pi, eps, labels, marked, oracles)?;
    let report = check_feasibility(&unit, witnesses, tol)?;
    if !report.feasible {
        return Err(Error::InfeasibleInput(format!(
            "witnesses violate the fraction problem by {:.3e}",
            report.max_violation
        )));
    }
    let d = fraction_scaling(pi, eps);
    let (scaled, w) = rescale(&unit, witnesses, &d, c(1.0), c(1.0))?;
    let mut names = vec![BOTTOM.to_string()];
    names.extend(vertices.iter().cloned());
    let inputs = scaled
        .inputs()
        .iter()
        .map(|i| HyperedgeInput {
            label: i.label.clone(),
            flow: i.plus.map(|z| z.re),
            potential: i.minus.map(|z| z.re),
            oracle: i.oracle.clone(),
        })
        .collect();
    Ok((HyperedgeProblem::new(names, inputs)?, w))
}

/// Query-controlled components `Π_{ℋ_t} ψ_{x,t}` of one run of a query
/// algorithm, one vector per step.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryTrace {
    pub steps: Vec<CVector>,
}

/// Las Vegas witnesses
/// `w^±_x = ⊕_t √(α_t^{±1}) (Π_tψ_{x,t} ⊕ ±O_xΠ_tψ_{x,t})/√2`, feasible for
/// [`las_vegas_problem`]. Traces shorter than the longest one are padded
/// with zero steps (the algorithm has stopped).
pub fn las_vegas_witnesses(traces: &[QueryTrace], oracles: &[BlockOperator], alpha: &[f64]) -> Result<WitnessFamily> {
    let steps = traces.iter().map(|t| t.steps.len()).max().unwrap_or(0);
    if alpha.len() < steps {
        return Err(Error::ScheduleMismatch {
            have: alpha.len(),
            need: steps,
        });
    }
    if let Some(a) = alpha.iter().take(steps).find(|&&a| !(a > 0.0)) {
        return Err(Error::InvalidInstance(format!("schedule entry {a} is not positive")));
    }
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let mut plus = Vec::new();
    let mut minus = Vec::new();
    for (trace, o) in traces.iter().zip(oracles) {
        let d = o.dim();
        let mut p_parts = Vec::with_capacity(steps);
        let mut m_parts = Vec::with_capacity(steps);
        for t in 0..steps {
            let v = trace.steps.get(t).cloned().unwrap_or_else(|| CVector::zeros(d));
            let ov = o.apply(&v);
            p_parts.push(direct_sum(&v, &ov).scale(r * alpha[t].sqrt()));
            m_parts.push(direct_sum(&v, &(-&ov)).scale(r / alpha[t].sqrt()));
        }
        plus.push(concat(&p_parts));
        minus.push(concat(&m_parts));
    }
    Ok(WitnessFamily::new(plus, minus))
}

/// The state-reflection problem `((σ ⊕ ±τ)/√2, ⊕_{t<T} Ō_x)` that
/// [`las_vegas_witnesses`] solve for `T` steps.
pub fn las_vegas_problem(problem: &StateConversionProblem, steps: usize) -> Result<StateReflectionProblem> {
    let inputs = problem
        .inputs()
        .iter()
        .map(|inp| {
            let (plus, minus) = reflection_states(inp);
            let single = swapped_oracle(&inp.oracle, 1)?;
            Ok(ReflectionInput {
                label: inp.label.clone(),
                plus,
                minus,
                oracle: single.repeat(steps),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    StateReflectionProblem::new(inputs)
}

/// `(E[Σ_{t<T} α_t], E[Σ_{t<T} 1/α_t])` for a stopping-time distribution
/// given as `(T, probability)` pairs.
pub fn las_vegas_sizes(stop: &[(usize, f64)], alpha: &[f64]) -> Result<(f64, f64)> {
    let need = stop.iter().map(|&(t, _)| t).max().unwrap_or(0);
    if alpha.len() < need {
        return Err(Error::ScheduleMismatch {
            have: alpha.len(),
            need,
        });
    }
    let mut plus = 0.0;
    let mut minus = 0.0;
    for &(t, p) in stop {
        plus += p * alpha[..t].iter().sum::<f64>();
        minus += p * alpha[..t].iter().map(|a| 1.0 / a).sum::<f64>();
    }
    Ok((plus, minus))
}

/// Feasible witnesses for any state-reflection problem given by its states,
/// using one query to the whole input.
///
/// The oracle on `ℂ^r ⊗ ℂ^{{⊥} ∪ 𝒟}` is `I_r ⊗ swap(⊥, x)`. Writing the
/// cross-Gram matrix `G_xy = ⟨σ⁺_x|σ⁻_y⟩ = UΣVᴴ`, the witnesses are
/// `w⁺_x = a_x ⊗ (e_⊥ + e_x)` and `w⁻_y = b_y ⊗ (e_⊥ − e_y)` with
/// `a_x = √Σ conj(U_x·)` and `b_y = √Σ conj(V_y·)`. Then
/// `⟨w⁺_x|w⁻_y⟩ = G_xy(1 − [x = y]) = G_xy` because `G_xx = 0`.
pub fn full_query_solution(
    labels: &[String],
    plus: &[CVector],
    minus: &[CVector],
) -> Result<(StateReflectionProblem, WitnessFamily)> {
    let n = labels.len();
    let g = CMatrix::from_fn(n, n, |x, y| plus[x].dotc(&minus[y]));
    // Relative cut with an absolute floor: singular values at rounding level
    // would turn into witnesses of size √ε.
    let top = crate::numerics::singular_values(&g).first().copied().unwrap_or(0.0);
    let svd = crate::numerics::thin_svd(&g, 1e-13 * top.max(1.0) / top.max(f64::MIN_POSITIVE));
    let keep: Vec<usize> = (0..svd.s.len()).collect();
    let r = keep.len().max(1);
    let reg = n + 1;
    let mut inputs = Vec::with_capacity(n);
    let mut wp = Vec::with_capacity(n);
    let mut wm = Vec::with_capacity(n);
    for x in 0..n {
        let mut a = CVector::zeros(r);
        let mut b = CVector::zeros(r);
        for (i, &k) in keep.iter().enumerate() {
            let s = svd.s[k].sqrt();
            a[i] = svd.u[(x, k)].conj() * c(s);
            b[i] = svd.v[(x, k)].conj() * c(s);
        }
        let mut up = CVector::zeros(reg);
        up[0] = c(1.0);
        up[x + 1] = c(1.0);
        let mut down = CVector::zeros(reg);
        down[0] = c(1.0);
        down[x + 1] = c(-1.0);
        wp.push(kron_vec(&a, &up));
        wm.push(kron_vec(&b, &down));
        inputs.push(ReflectionInput {
            label: labels[x].clone(),
            plus: plus[x].clone(),
            minus: minus[x].clone(),
            oracle: Involution::swap(reg, 0, x + 1).repeat(r),
        });
    }
    Ok((StateReflectionProblem::new(inputs)?, WitnessFamily::new(wp, wm)))
}

/// [`full_query_solution`] for hyperedge states.
pub fn full_query_hyperedge(
    vertices: Vec<String>,
    labels: &[String],
    flows: &[DVector<f64>],
    potentials: &[DVector<f64>],
) -> Result<(HyperedgeProblem, WitnessFamily)> {
    let plus: Vec<CVector> = flows.iter().map(complexify_vector).collect();
    let minus: Vec<CVector> = potentials.iter().map(complexify_vector).collect();
    let (reflection, w) = full_query_solution(labels, &plus, &minus)?;
    let inputs = reflection
        .inputs()
        .iter()
        .zip(flows.iter().zip(potentials))
        .map(|(i, (f, p))| HyperedgeInput {
            label: i.label.clone(),
            flow: f.clone(),
            potential: p.clone(),
            oracle: i.oracle.clone(),
        })
        .collect();
    Ok((HyperedgeProblem::new(vertices, inputs)?, w))
}

/// Run a query algorithm `U_T O U_{T−1} ⋯ U_1 O U_0` with controlled queries
/// and record its trace.
///
/// `control` projects onto the query register's "query" subspace and must
/// commute with every oracle; the controlled query is `O_xΠ + (I − Π)`.
/// Returns the conversion problem `ψ₀ ↦ ψ_{x,T}`, the per-input traces and
/// the conversion witnesses `⊕_t Π ψ_{x,t}`.
pub fn run_query_algorithm(
    labels: &[String],
    oracles: &[BlockOperator],
    unitaries: &[CMatrix],
    control: &CMatrix,
    start: &CVector,
) -> Result<(StateConversionProblem, Vec<QueryTrace>, Vec<CVector>)> {
    assert!(!unitaries.is_empty(), "need at least U_0");
    let d = start.len();
    let mut inputs = Vec::new();
    let mut traces = Vec::new();
    let mut witnesses = Vec::new();
    for (l, o) in labels.iter().zip(oracles) {
        let dense = o.to_dense();
        if (&dense * control - control * &dense).norm() > ORACLE_TOL {
            return Err(Error::InvalidInstance(format!("oracle of {l} does not commute with the control")));
        }
        let query = &dense * control + (CMatrix::identity(d, d) - control);
        let mut psi = &unitaries[0] * start;
        let mut steps = Vec::new();
        for u in &unitaries[1..] {
            steps.push(control * &psi);
            psi = u * (&query * &psi);
        }
        witnesses.push(concat(&steps));
        traces.push(QueryTrace { steps });
        inputs.push(ConversionInput {
            label: l.clone(),
            source: start.clone(),
            target: psi,
            oracle: o.clone(),
        });
    }
    Ok((StateConversionProblem::new(inputs)?, traces, witnesses))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gen;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn labels(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("x{i}")).collect()
    }

    fn cv(xs: &[f64]) -> CVector {
        CVector::from_iterator(xs.len(), xs.iter().map(|&x| c(x)))
    }

    fn random_algorithm(
        rng: &mut ChaCha8Rng,
        inputs: usize,
        k: usize,
        steps: usize,
        hermitian: bool,
    ) -> (StateConversionProblem, Vec<QueryTrace>, Vec<CVector>) {
        gen::random_query_algorithm(rng, inputs, k, steps, hermitian)
    }

    #[test]
    fn block_operator_applies_blockwise() {
        let a = CMatrix::from_element(1, 1, c(2.0));
        let b = Involution::swap(2, 0, 1).op().to_dense();
        let op = BlockOperator::new(vec![a, b]);
        let out = op.apply(&cv(&[1.0, 3.0, 4.0]));
        assert_eq!(out, cv(&[2.0, 4.0, 3.0]));
        assert_eq!(op.repeat(2).dim(), 6);
    }

    #[test]
    fn involution_rejects_non_involutions() {
        let m = CMatrix::from_element(1, 1, c(2.0));
        assert!(Involution::from_matrix(m).is_err());
    }

    #[test]
    fn single_input_zero_witness_reflection() {
        let p = StateConversionProblem::new(vec![ConversionInput {
            label: "x".into(),
            source: cv(&[1.0, 0.0]),
            target: cv(&[0.0, 1.0]),
            oracle: BlockOperator::identity(1),
        }])
        .unwrap();
        let w = vec![CVector::zeros(1)];
        let (r, fam) = to_reflection(&p, &w, 1e-12).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!((r.inputs()[0].plus.clone() - cv(&[s, 0.0, 0.0, s])).norm() < 1e-15);
        assert!((r.inputs()[0].minus.clone() - cv(&[s, 0.0, 0.0, -s])).norm() < 1e-15);
        assert_eq!(fam.sizes(), vec![(0.0, 0.0)]);
        assert!(check_feasibility(&r, &fam, 1e-12).unwrap().feasible);
    }

    #[test]
    fn query_algorithm_witnesses_are_feasible() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (p, _, w) = random_algorithm(&mut rng, 3, 2, 3, false);
        assert!(p.is_unit_norm(1e-12));
        let rep = check_conversion(&p, &w, 1e-10).unwrap();
        assert!(rep.feasible, "{rep:?}");
    }

    #[test]
    fn to_reflection_on_function_instance() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (p, _, w) = random_algorithm(&mut rng, 3, 2, 2, false);
        let (r, fam) = to_reflection(&p, &w, 1e-10).unwrap();
        assert!(check_feasibility(&r, &fam, 1e-9).unwrap().feasible);
        assert!(fam.normal_form_defect(&r) < 1e-9);
        for (x, (a, b)) in fam.sizes().into_iter().enumerate() {
            let n = w[x].norm_squared();
            assert!((a - n).abs() < 1e-12 && (b - n).abs() < 1e-12);
        }
    }

    #[test]
    fn to_reflection_rejects_infeasible_witness() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let (p, _, mut w) = random_algorithm(&mut rng, 2, 2, 2, false);
        // Index 2 is inside the controlled (queried) subspace.
        w[0][2] += c(0.3);
        assert!(matches!(to_reflection(&p, &w, 1e-9), Err(Error::InfeasibleInput(_))));
    }

    #[test]
    fn round_trip_preserves_witness_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (p, _, w) = random_algorithm(&mut rng, 3, 2, 3, false);
        let (_, fam) = to_reflection(&p, &w, 1e-10).unwrap();
        let (bi, back) = from_reflection(&p, &fam, 1e-9).unwrap();
        for x in 0..3 {
            assert!((back[x].norm_squared() - w[x].norm_squared()).abs() < 1e-9);
        }
        assert!(check_conversion(&bi, &back, 1e-9).unwrap().feasible);
    }

    #[test]
    fn from_reflection_hermitian_oracles_solve_original_problem() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let (p, _, w) = random_algorithm(&mut rng, 2, 2, 2, true);
        let (_, fam) = to_reflection(&p, &w, 1e-10).unwrap();
        let (_, back) = from_reflection(&p, &fam, 1e-9).unwrap();
        assert!(check_conversion(&p, &back, 1e-9).unwrap().feasible);
    }

    #[test]
    fn from_reflection_handles_rescaled_family() {
        // (c·w⁺, w⁻/c) stays feasible for the same problem; the reverse map
        // must still produce a feasible conversion witness.
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let (p, _, w) = random_algorithm(&mut rng, 3, 2, 2, false);
        let (_, fam) = to_reflection(&p, &w, 1e-10).unwrap();
        let skewed = fam.scaled(2.0, 0.5);
        let (bi, back) = from_reflection(&p, &skewed, 1e-9).unwrap();
        assert!(check_conversion(&bi, &back, 1e-9).unwrap().feasible);
        for (x, (a, b)) in skewed.sizes().into_iter().enumerate() {
            assert!((back[x].norm_squared() - (a + b) / 2.0).abs() < 1e-9);
        }
    }

    #[test]
    fn from_reflection_constant_problem() {
        let s = cv(&[0.6, 0.8]);
        let p = StateConversionProblem::new(
            (0..2)
                .map(|i| ConversionInput {
                    label: format!("x{i}"),
                    source: s.clone(),
                    target: s.clone(),
                    oracle: BlockOperator::identity(1),
                })
                .collect(),
        )
        .unwrap();
        let fam = WitnessFamily::zeros(2, 2);
        let (_, back) = from_reflection(&p, &fam, 1e-12).unwrap();
        assert!(back.iter().all(|w| w.norm() == 0.0));
        assert!(check_conversion(&p, &back, 1e-12).unwrap().feasible);
    }

    #[test]
    fn empty_domain_is_feasible() {
        let r = StateReflectionProblem::new(vec![]).unwrap();
        let rep = check_feasibility(&r, &WitnessFamily::zeros(0, 0), 1e-12).unwrap();
        assert!(rep.feasible);
        assert_eq!(rep.max_violation, 0.0);
    }

    #[test]
    fn single_query_program_is_feasible_and_probe_detected() {
        let (h, w) = single_query_hyperedge(&labels(2), &[true, false]);
        let rep = check_hyperedge(&h, &w, 1e-12).unwrap();
        assert!(rep.feasible);
        let mut bad = w.clone();
        bad.plus[0][0] += c(0.1);
        let rep = check_hyperedge(&h, &bad, 1e-9).unwrap();
        assert!(!rep.feasible);
        assert!(rep.max_violation > 0.05 && rep.max_violation < 0.5, "{}", rep.max_violation);
        assert!(rep.worst.is_some());
    }

    #[test]
    fn span_program_on_two_dimensions() {
        // f(x) = x₁ with ℋ = ℂ², ℋ(x) = span{e_{x₁}}, w₀ = e₁.
        let e = |i: usize| {
            let mut p = CMatrix::zeros(2, 2);
            p[(i, i)] = c(1.0);
            p
        };
        let sp = SpanProgram::new(labels(2), vec![e(0), e(1)], CMatrix::zeros(2, 0), cv(&[0.0, 1.0])).unwrap();
        let f = [false, true];
        let ws = vec![cv(&[0.0, 1.0]), cv(&[0.0, 1.0])];
        let (h, fam) = span_to_hyperedge(&sp, &f, &ws).unwrap();
        assert_eq!(fam.sizes(), vec![(0.0, 1.0), (1.0, 0.0)]);
        assert!(check_hyperedge(&h, &fam, 1e-12).unwrap().feasible);
        let (sp2, f2, ws2) = hyperedge_to_span(&h, &fam).unwrap();
        assert_eq!(f2, f);
        assert_eq!(ws2, ws);
        assert!((sp2.complexity(&f2, &ws2) - sp.complexity(&f, &ws)).abs() < 1e-15);
    }

    #[test]
    fn constant_true_span_program() {
        let w0 = cv(&[3.0, 4.0]);
        let sp = SpanProgram::new(labels(3), vec![CMatrix::identity(2, 2); 3], CMatrix::zeros(2, 0), w0.clone()).unwrap();
        let (h, fam) = span_to_hyperedge(&sp, &[true; 3], &vec![w0.clone(); 3]).unwrap();
        for (p, m) in fam.sizes() {
            assert_eq!((p, m), (25.0, 0.0));
        }
        assert!(check_hyperedge(&h, &fam, 1e-12).unwrap().feasible);
    }

    #[test]
    fn invalid_span_witness_rejected() {
        let sp = SpanProgram::new(labels(1), vec![CMatrix::zeros(1, 1)], CMatrix::zeros(1, 0), cv(&[1.0])).unwrap();
        // Negative input with ⟨w₀|w⟩ = 2.
        assert!(matches!(
            span_to_hyperedge(&sp, &[false], &[cv(&[2.0])]),
            Err(Error::InvalidWitness(_))
        ));
    }

    #[test]
    fn function_evaluation_hyperedge() {
        // 1-bit identity function ⊥ → x₁ via a full-query solution.
        let verts: Vec<String> = vec![BOTTOM.into(), "0".into(), "1".into()];
        let flows = vec![
            DVector::from_vec(vec![1.0, -1.0, 0.0]),
            DVector::from_vec(vec![1.0, 0.0, -1.0]),
        ];
        let pots = vec![
            DVector::from_vec(vec![1.0, 1.0, 0.0]),
            DVector::from_vec(vec![1.0, 0.0, 1.0]),
        ];
        let (h0, w0) = full_query_hyperedge(verts.clone(), &labels(2), &flows, &pots).unwrap();
        let oracles: Vec<Involution> = h0.inputs().iter().map(|i| i.oracle.clone()).collect();
        let (h, w) = database_hyperedge(verts, &labels(2), &[0, 0], &[1, 2], &oracles, &w0, 1e-12).unwrap();
        assert_eq!(h.inputs()[0].flow, flows[0]);
        assert_eq!(h.inputs()[1].potential, pots[1]);
        assert!(check_hyperedge(&h, &w, 1e-12).unwrap().feasible);
    }

    #[test]
    fn noop_database_update() {
        let verts: Vec<String> = vec!["a".into(), "b".into()];
        let oracles = vec![Involution::identity(1); 2];
        let h = database_problem(verts, &labels(2), &[0, 1], &[0, 1], &oracles).unwrap();
        assert_eq!(h.inputs()[0].flow, DVector::zeros(2));
        assert_eq!(h.inputs()[1].potential, DVector::from_vec(vec![0.0, 2.0]));
        assert!(check_hyperedge(&h, &WitnessFamily::zeros(2, 1), 1e-12).unwrap().feasible);
    }

    #[test]
    fn database_update_two_inputs() {
        // Inputs 0 → 2 and 1 → 3 on four labels.
        let verts: Vec<String> = ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect();
        let mut flows = Vec::new();
        let mut pots = Vec::new();
        for (i, o) in [(0, 2), (1, 3)] {
            let mut f = DVector::zeros(4);
            let mut p = DVector::zeros(4);
            f[i] = 1.0;
            f[o] = -1.0;
            p[i] = 1.0;
            p[o] = 1.0;
            flows.push(f);
            pots.push(p);
        }
        let (h, w) = full_query_hyperedge(verts.clone(), &labels(2), &flows, &pots).unwrap();
        let oracles: Vec<Involution> = h.inputs().iter().map(|i| i.oracle.clone()).collect();
        let (h2, w2) = database_hyperedge(verts, &labels(2), &[0, 1], &[2, 3], &oracles, &w, 1e-12).unwrap();
        for inp in h2.inputs() {
            assert!(inp.flow.sum().abs() < 1e-15);
        }
        assert!(check_hyperedge(&h2, &w2, 1e-12).unwrap().feasible);
    }

    #[test]
    fn shift_potential_keeps_feasibility() {
        let verts: Vec<String> = vec![BOTTOM.into(), "0".into(), "1".into()];
        let flows = vec![
            DVector::from_vec(vec![1.0, -1.0, 0.0]),
            DVector::from_vec(vec![1.0, 0.0, -1.0]),
        ];
        let pots = vec![
            DVector::from_vec(vec![1.0, 1.0, 0.0]),
            DVector::from_vec(vec![1.0, 0.0, 1.0]),
        ];
        let (h, w) = full_query_hyperedge(verts, &labels(2), &flows, &pots).unwrap();
        assert_eq!(shift_potential(&h, &[0.0, 0.0]), h);
        let shifted = shift_potential(&h, &[5.0, 5.0]);
        assert!(check_hyperedge(&shifted, &w, 1e-12).unwrap().feasible);
        assert_eq!(shift_potential(&shifted, &[-5.0, -5.0]), h);
        let uneven = shift_potential(&h, &[2.0, -3.0]);
        assert!(check_hyperedge(&uneven, &w, 1e-12).unwrap().feasible);
    }

    #[test]
    fn rescale_scalar_case() {
        let (h, w) = single_query_hyperedge(&labels(2), &[true, false]);
        let r = h.to_reflection();
        let id = CMatrix::identity(2, 2);
        let (r2, w2) = rescale(&r, &w, &id, c(3.0), c(1.0 / 3.0)).unwrap();
        assert!(check_feasibility(&r2, &w2, 1e-12).unwrap().feasible);
        assert_eq!(w2.sizes(), vec![(9.0, 0.0), (0.0, 1.0 / 9.0)]);
        assert!((w2.objective() - w.objective()).abs() < 1e-15);
        let (r3, w3) = rescale(&r, &w, &id, c(1.0), c(1.0)).unwrap();
        assert_eq!((r3, w3), (r, w));
    }

    #[test]
    fn rescale_rejects_singular() {
        let (h, w) = single_query_hyperedge(&labels(1), &[true]);
        let z = CMatrix::zeros(2, 2);
        assert!(matches!(
            rescale(&h.to_reflection(), &w, &z, c(1.0), c(1.0)),
            Err(Error::SingularScaling(_))
        ));
    }

    fn fraction_instance(rng: &mut ChaCha8Rng) -> (DVector<f64>, Vec<Vec<usize>>, f64) {
        // π uniform on 6 vertices, two marked per input, ε = 1/3.
        let pi = DVector::from_element(6, 1.0 / 6.0);
        let marked: Vec<Vec<usize>> = (0..4)
            .map(|_| {
                let a = rng.gen_range(0..6);
                let b = (a + rng.gen_range(1..6)) % 6;
                vec![a, b]
            })
            .collect();
        (pi, marked, 1.0 / 3.0)
    }

    #[test]
    fn known_fraction_preserves_feasibility() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (pi, marked, eps) = fraction_instance(&mut rng);
        let l = labels(4);
        let identity = vec![Involution::identity(1); 4];
        let unit = known_fraction_problem(&pi, eps, &l, &marked, &identity).unwrap();
        let plus: Vec<CVector> = unit.inputs().iter().map(|i| i.plus.clone()).collect();
        let minus: Vec<CVector> = unit.inputs().iter().map(|i| i.minus.clone()).collect();
        let (solved, w) = full_query_solution(&l, &plus, &minus).unwrap();
        let oracles: Vec<Involution> = solved.inputs().iter().map(|i| i.oracle.clone()).collect();
        let verts: Vec<String> = (0..6).map(|v| format!("v{v}")).collect();
        let (h, w2) = known_fraction_rescale(&pi, eps, &verts, &l, &marked, &oracles, &w, 1e-10).unwrap();
        assert!(check_hyperedge(&h, &w2, 1e-10).unwrap().feasible);
        for (x, inp) in h.inputs().iter().enumerate() {
            assert!((inp.flow[0] - 1.0).abs() < 1e-15);
            for &v in &marked[x] {
                assert!((inp.flow[v + 1] + 0.5).abs() < 1e-12);
                assert!((inp.potential[v + 1] - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn known_fraction_small_cases() {
        let pi = DVector::from_element(2, 0.5);
        let l = labels(1);
        let oracles = vec![Involution::identity(1)];
        let unit = known_fraction_problem(&pi, 0.5, &l, &[vec![0]], &oracles).unwrap();
        let d = fraction_scaling(&pi, 0.5);
        let plus = &d * &unit.inputs()[0].plus;
        assert!((plus - cv(&[1.0, -1.0, 0.0])).norm() < 1e-15);
        // ε = 1: everything marked, δ = 1_⊥ − π.
        let unit = known_fraction_problem(&pi, 1.0, &l, &[vec![0, 1]], &oracles).unwrap();
        let plus = fraction_scaling(&pi, 1.0) * &unit.inputs()[0].plus;
        assert!((plus - cv(&[1.0, -0.5, -0.5])).norm() < 1e-15);
    }

    #[test]
    fn fraction_mismatch_detected() {
        let pi = DVector::from_element(3, 1.0 / 3.0);
        let err = known_fraction_problem(&pi, 1.0 / 3.0, &labels(2), &[vec![0], vec![0, 1]], &[
            Involution::identity(1),
            Involution::identity(1),
        ])
        .unwrap_err();
        assert!(matches!(err, Error::FractionMismatch { .. }));
    }

    #[test]
    fn las_vegas_deterministic_sizes() {
        let (p, m) = las_vegas_sizes(&[(5, 1.0)], &[1.0; 5]).unwrap();
        assert_eq!((p, m), (5.0, 5.0));
        let alpha: Vec<f64> = (0..6).map(|t| (t + 1) as f64).collect();
        let (p, _) = las_vegas_sizes(&[(6, 1.0)], &alpha).unwrap();
        assert_eq!(p, 21.0);
        assert!(matches!(las_vegas_sizes(&[(3, 1.0)], &[1.0]), Err(Error::ScheduleMismatch { .. })));
    }

    #[test]
    fn las_vegas_empty_trace() {
        let traces = vec![QueryTrace { steps: vec![] }];
        let w = las_vegas_witnesses(&traces, &[BlockOperator::identity(2)], &[]).unwrap();
        assert_eq!(w.sizes(), vec![(0.0, 0.0)]);
    }

    #[test]
    fn las_vegas_witnesses_are_feasible() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let steps = 3;
        let (p, traces, _) = random_algorithm(&mut rng, 3, 2, steps, false);
        let oracles: Vec<BlockOperator> = p.inputs().iter().map(|i| i.oracle.clone()).collect();
        let alpha = [0.5, 2.0, 3.0];
        let w = las_vegas_witnesses(&traces, &oracles, &alpha).unwrap();
        let r = las_vegas_problem(&p, steps).unwrap();
        assert!(check_feasibility(&r, &w, 1e-9).unwrap().feasible);
        for (x, (wp, wm)) in w.sizes().into_iter().enumerate() {
            let expect_p: f64 = (0..steps).map(|t| alpha[t] * traces[x].steps[t].norm_squared()).sum();
            let expect_m: f64 = (0..steps).map(|t| traces[x].steps[t].norm_squared() / alpha[t]).sum();
            assert!((wp - expect_p).abs() < 1e-12 && (wm - expect_m).abs() < 1e-12);
        }
    }

    #[test]
    fn normalization_projects_onto_eigenspaces() {
        let (h, mut w) = single_query_hyperedge(&labels(1), &[true]);
        let r = h.to_reflection();
        w.minus[0][0] = c(0.25); // oracle is +1, so this is discarded
        let (fixed, discarded) = w.normalized(&r, 1e-9);
        assert!((discarded - 0.25).abs() < 1e-15);
        assert!(fixed.normal_form_defect(&r) < 1e-15);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn full_query_solutions_are_feasible(seed in any::<u64>(), n in 1usize..6, dim in 2usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let plus: Vec<CVector> = (0..n).map(|_| gen::random_complex_vector(&mut rng, dim)).collect();
            // Make each σ⁻ orthogonal to its σ⁺.
            let minus: Vec<CVector> = plus
                .iter()
                .map(|p| {
                    let v = gen::random_complex_vector(&mut rng, dim);
                    &v - p * (p.dotc(&v) / c(p.norm_squared()))
                })
                .collect();
            let (r, w) = full_query_solution(&labels(n), &plus, &minus).unwrap();
            prop_assert!(check_feasibility(&r, &w, 1e-9).unwrap().feasible);
            prop_assert!(w.normal_form_defect(&r) < 1e-12);
        }

        #[test]
        fn rescale_round_trip(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (h, w) = single_query_hyperedge(&labels(3), &[true, false, true]);
            let r = h.to_reflection();
            let d = gen::random_complex_matrix(&mut rng, 2, 2) + CMatrix::identity(2, 2).scale(2.0);
            let (ap, am) = (C64::new(rng.gen_range(0.5..2.0), 0.3), C64::new(rng.gen_range(0.5..2.0), -0.2));
            let (r2, w2) = rescale(&r, &w, &d, ap, am).unwrap();
            prop_assert!(check_feasibility(&r2, &w2, 1e-9).unwrap().feasible);
            let dinv = d.clone().try_inverse().unwrap();
            let (r3, w3) = rescale(&r2, &w2, &dinv, c(1.0) / ap, c(1.0) / am).unwrap();
            for x in 0..3 {
                prop_assert!((&r3.inputs()[x].plus - &r.inputs()[x].plus).norm() < 1e-9);
                prop_assert!((&r3.inputs()[x].minus - &r.inputs()[x].minus).norm() < 1e-9);
                prop_assert!((&w3.plus[x] - &w.plus[x]).norm() < 1e-9);
            }
        }

        #[test]
        fn reflection_round_trip_norms(seed in any::<u64>(), steps in 1usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (p, _, w) = random_algorithm(&mut rng, 3, 2, steps, false);
            let (r, fam) = to_reflection(&p, &w, 1e-9).unwrap();
            prop_assert!(check_feasibility(&r, &fam, 1e-9).unwrap().feasible);
            let (bi, back) = from_reflection(&p, &fam, 1e-8).unwrap();
            for x in 0..3 {
                prop_assert!((back[x].norm_squared() - w[x].norm_squared()).abs() < 1e-9);
            }
            prop_assert!(check_conversion(&bi, &back, 1e-9).unwrap().feasible);
        }
    }
}
