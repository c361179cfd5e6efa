//! Explicit transducers built from feasible witness families.
//!
//! A transducer is a unitary `U` on `𝒱 ⊕ ℋ`. With the oracle applied to the
//! work register, `U(I ⊕ O_x)` maps `σ ⊕ w` to `τ ⊕ w` for a catalyst `w`,
//! and so transduces `σ` into `τ`.

use log::warn;

use crate::error::{Error, Result};
use crate::numerics::{direct_sum, min_norm_solve_tol, CMatrix, CVector, C64};
use crate::reflection::{Involution, StateReflectionProblem, WitnessFamily};

/// Relative rank cut for the Gram-Schmidt basis of `𝒜`.
pub const RANK_TOL: f64 = 1e-10;

/// A unitary on `𝒱 ⊕ ℋ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Transducer {
    u: CMatrix,
    v_dim: usize,
    h_dim: usize,
}

impl Transducer {
    pub fn new(u: CMatrix, v_dim: usize, h_dim: usize) -> Result<Self> {
        let n = v_dim + h_dim;
        if u.shape() != (n, n) {
            return Err(Error::DimensionMismatch(format!(
                "transducer is {}x{}, expected {n}x{n}",
                u.nrows(),
                u.ncols()
            )));
        }
        let defect = (u.adjoint() * &u - CMatrix::identity(n, n)).norm();
        if defect > 1e-9 * (n as f64).max(1.0) {
            return Err(Error::InvalidInstance(format!("transducer is not unitary (defect {defect:.3e})")));
        }
        Ok(Self { u, v_dim, h_dim })
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.u
    }

    pub fn v_dim(&self) -> usize {
        self.v_dim
    }

    pub fn h_dim(&self) -> usize {
        self.h_dim
    }

    /// `U(I ⊕ O_x)`.
    pub fn with_oracle(&self, oracle: &Involution) -> Result<Transducer> {
        if oracle.dim() != self.h_dim {
            return Err(Error::DimensionMismatch(format!(
                "oracle acts on {} dimensions, work register has {}",
                oracle.dim(),
                self.h_dim
            )));
        }
        let mut u = self.u.clone();
        // Right-multiplying by I ⊕ O mixes only the work columns.
        let mut at = self.v_dim;
        for block in oracle.op().blocks() {
            let k = block.nrows();
            let cols = u.columns(at, k) * block;
            u.columns_mut(at, k).copy_from(&cols);
            at += k;
        }
        Ok(Transducer {
            u,
            v_dim: self.v_dim,
            h_dim: self.h_dim,
        })
    }

    /// Blocks `[[A, B], [C, D]]` over `𝒱 ⊕ ℋ`.
    pub fn blocks(&self) -> (CMatrix, CMatrix, CMatrix, CMatrix) {
        let (v, h) = (self.v_dim, self.h_dim);
        (
            self.u.view((0, 0), (v, v)).into_owned(),
            self.u.view((0, v), (v, h)).into_owned(),
            self.u.view((v, 0), (h, v)).into_owned(),
            self.u.view((v, v), (h, h)).into_owned(),
        )
    }

    pub fn apply(&self, v: &CVector) -> CVector {
        &self.u * v
    }
}

/// Orthonormal basis of the span of `vectors`, by modified Gram-Schmidt with
/// one re-orthogonalization pass.
pub fn orthonormal_basis(vectors: &[CVector], rel_tol: f64) -> Vec<CVector> {
    let scale = vectors.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let mut basis: Vec<CVector> = Vec::new();
    for v in vectors {
        let mut r = v.clone();
        for _ in 0..2 {
            for b in &basis {
                let c = b.dotc(&r);
                r -= b * c;
            }
        }
        let norm = r.norm();
        if norm > rel_tol * scale && norm > 0.0 {
            basis.push(r.unscale(norm));
        }
    }
    basis
}

/// Largest `|⟨σ⁺_x ⊕ w⁺_x | σ⁻_y ⊕ −w⁻_y⟩|`. Zero for feasible families in
/// normal form: feasibility forces `⟨w⁺_x|w⁻_y⟩ = ⟨σ⁺_x|σ⁻_y⟩`.
pub fn sandwich_residual(problem: &StateReflectionProblem, witnesses: &WitnessFamily) -> f64 {
    let mut worst = 0.0f64;
    for (x, a) in problem.inputs().iter().enumerate() {
        for (y, b) in problem.inputs().iter().enumerate() {
            let v = a.plus.dotc(&b.minus) - witnesses.plus[x].dotc(&witnesses.minus[y]);
            worst = worst.max(v.norm());
        }
    }
    worst
}

/// `U = 2Π_𝒜 − I` for `𝒜 = span{σ⁺_x ⊕ w⁺_x}`.
///
/// Witnesses are first brought into normal form. Fails with `NotOrthogonal`
/// when some `σ⁻_y ⊕ −w⁻_y` is not orthogonal to `𝒜`.
pub fn build_reflection(problem: &StateReflectionProblem, witnesses: &WitnessFamily, tol: f64) -> Result<Transducer> {
    let (v, h) = (problem.state_dim(), problem.oracle_dim());
    let (w, discarded) = witnesses.normalized(problem, tol);
    if discarded > tol {
        warn!("witnesses were projected onto the oracle eigenspaces before building the transducer");
    }
    let residual = sandwich_residual(problem, &w);
    if residual > tol {
        return Err(Error::NotOrthogonal(residual));
    }
    let vectors: Vec<CVector> = problem
        .inputs()
        .iter()
        .zip(&w.plus)
        .map(|(i, wp)| direct_sum(&i.plus, wp))
        .collect();
    let basis = orthonormal_basis(&vectors, RANK_TOL);
    let n = v + h;
    let mut u = -CMatrix::identity(n, n);
    for b in &basis {
        u += (b * b.adjoint()).scale(2.0);
    }
    Transducer::new(u, v, h)
}

/// Residuals of `U(I ⊕ O_x)(σ^± ⊕ w^±) = ±σ^± ⊕ w^±`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransductionReport {
    pub plus_residual: f64,
    pub minus_residual: f64,
    pub ok: bool,
}

pub fn verify_transduction(
    t: &Transducer,
    oracle: &Involution,
    plus: (&CVector, &CVector),
    minus: (&CVector, &CVector),
    tol: f64,
) -> Result<TransductionReport> {
    let tx = t.with_oracle(oracle)?;
    let check = |sigma: &CVector, w: &CVector, sign: f64| -> Result<f64> {
        if sigma.len() != t.v_dim || w.len() != t.h_dim {
            return Err(Error::DimensionMismatch("state or witness does not fit the transducer".into()));
        }
        let out = tx.apply(&direct_sum(sigma, w));
        let want = direct_sum(&(sigma * C64::new(sign, 0.0)), w);
        Ok((out - want).norm())
    };
    let plus_residual = check(plus.0, plus.1, 1.0)?;
    let minus_residual = check(minus.0, minus.1, -1.0)?;
    Ok(TransductionReport {
        plus_residual,
        minus_residual,
        ok: plus_residual <= tol && minus_residual <= tol,
    })
}

/// Worst transduction residual over every input of a problem.
pub fn verify_all(t: &Transducer, problem: &StateReflectionProblem, witnesses: &WitnessFamily, tol: f64) -> Result<f64> {
    let mut worst = 0.0f64;
    for (x, inp) in problem.inputs().iter().enumerate() {
        let r = verify_transduction(
            t,
            &inp.oracle,
            (&inp.plus, &witnesses.plus[x]),
            (&inp.minus, &witnesses.minus[x]),
            tol,
        )?;
        worst = worst.max(r.plus_residual).max(r.minus_residual);
    }
    Ok(worst)
}

/// Output and minimal catalyst of a transduction.
#[derive(Debug, Clone, PartialEq)]
pub struct Transduction {
    pub output: CVector,
    pub catalyst: CVector,
    /// `‖T(σ ⊕ w) − τ ⊕ w‖`.
    pub residual: f64,
}

/// Tolerance on the fixed-point residual of [`transduce_solve`].
pub const SOLVE_TOL: f64 = 1e-8;

/// Solve `(I − D)w = Cσ` for the minimal-norm catalyst `w`; the output is
/// `τ = Aσ + Bw`.
pub fn transduce_solve(t: &Transducer, sigma: &CVector) -> Result<Transduction> {
    if sigma.len() != t.v_dim {
        return Err(Error::DimensionMismatch(format!(
            "input state has dimension {}, transducer expects {}",
            sigma.len(),
            t.v_dim
        )));
    }
    let (a, b, c, d) = t.blocks();
    let h = t.h_dim;
    let lhs = CMatrix::identity(h, h) - d;
    let rhs = &c * sigma;
    let w = min_norm_solve_tol(&lhs, &rhs, 1e-10);
    let tau = &a * sigma + &b * &w;
    let residual = (t.apply(&direct_sum(sigma, &w)) - direct_sum(&tau, &w)).norm();
    let scale = sigma.norm().max(1.0) * (1.0 + w.norm());
    if residual > SOLVE_TOL * scale {
        return Err(Error::NumericalFailure(format!(
            "catalyst equation left a residual of {residual:.3e}"
        )));
    }
    Ok(Transduction {
        output: tau,
        catalyst: w,
        residual,
    })
}

/// Result of [`emulate`].
#[derive(Debug, Clone, PartialEq)]
pub struct Emulation {
    pub calls: usize,
    /// `Σ_k v_k/√K`.
    pub output: CVector,
    /// `‖output − τ‖`.
    pub output_error: f64,
    /// Distance of the final joint state from `τ ⊗ u ⊕ 0`.
    pub state_error: f64,
    /// `2‖w_min‖/√K`.
    pub bound: f64,
    pub catalyst_norm: f64,
}

/// Emulate the transduction with `K` calls to `T` and a zero-initialized
/// work register.
///
/// The input register holds `σ ⊗ u` with `u` uniform over a `K`-valued
/// counter. Call `k` applies `T` to slot `k` together with the shared work
/// register. If `w` is the catalyst, the work register's error after call `k`
/// is `−D^k w/√K`, so the joint state ends within
/// `√(2(‖w‖² − Re⟨w|D^K w⟩)/K) ≤ 2‖w‖/√K` of `τ ⊗ u ⊕ 0`.
pub fn emulate(t: &Transducer, sigma: &CVector, k: usize) -> Result<Emulation> {
    let exact = transduce_solve(t, sigma)?;
    Ok(emulate_from(t, sigma, &exact, k))
}

/// [`emulate`] against an already solved transduction of `sigma`, so a sweep
/// over `K` pays for the catalyst solve once.
pub fn emulate_from(t: &Transducer, sigma: &CVector, exact: &Transduction, k: usize) -> Emulation {
    assert!(k >= 1, "need at least one call");
    let (v, h) = (t.v_dim, t.h_dim);
    let root = (k as f64).sqrt();
    let slot = sigma.unscale(root);
    let mut work = CVector::zeros(h);
    let mut outputs = Vec::with_capacity(k);
    for _ in 0..k {
        let out = t.apply(&direct_sum(&slot, &work));
        outputs.push(out.rows(0, v).into_owned());
        work = out.rows(v, h).into_owned();
    }
    let target = exact.output.unscale(root);
    let mut err2 = work.norm_squared();
    let mut sum = CVector::zeros(v);
    for o in &outputs {
        err2 += (o - &target).norm_squared();
        sum += o;
    }
    let output = sum.unscale(root);
    let catalyst_norm = exact.catalyst.norm();
    Emulation {
        calls: k,
        output_error: (&output - &exact.output).norm(),
        output,
        state_error: err2.sqrt(),
        bound: 2.0 * catalyst_norm / root,
        catalyst_norm,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gen;
    use crate::reflection::{full_query_solution, single_query_hyperedge, ReflectionInput};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn labels(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("x{i}")).collect()
    }

    fn cv(xs: &[f64]) -> CVector {
        CVector::from_iterator(xs.len(), xs.iter().map(|&x| C64::new(x, 0.0)))
    }

    #[test]
    fn full_and_empty_spans() {
        // 𝒜 = whole space: σ⁺ = e₀ with a 0-dim... use 𝒱 = ℂ, ℋ = ℂ.
        let r = StateReflectionProblem::new(vec![
            ReflectionInput {
                label: "a".into(),
                plus: cv(&[1.0]),
                minus: cv(&[0.0]),
                oracle: Involution::sign(true),
            },
            ReflectionInput {
                label: "b".into(),
                plus: cv(&[0.0]),
                minus: cv(&[0.0]),
                oracle: Involution::sign(true),
            },
        ])
        .unwrap();
        let w = WitnessFamily::new(vec![cv(&[0.0]), cv(&[1.0])], vec![cv(&[0.0]), cv(&[0.0])]);
        let t = build_reflection(&r, &w, 1e-12).unwrap();
        assert!((t.matrix() - CMatrix::identity(2, 2)).norm() < 1e-15);

        let r = StateReflectionProblem::new(vec![ReflectionInput {
            label: "a".into(),
            plus: cv(&[0.0]),
            minus: cv(&[1.0]),
            oracle: Involution::sign(true),
        }])
        .unwrap();
        let t = build_reflection(&r, &WitnessFamily::zeros(1, 1), 1e-12).unwrap();
        assert!((t.matrix() + CMatrix::identity(2, 2)).norm() < 1e-15);
    }

    #[test]
    fn single_query_transduces() {
        let (h, w) = single_query_hyperedge(&labels(2), &[true, false]);
        let r = h.to_reflection();
        let t = build_reflection(&r, &w, 1e-12).unwrap();
        assert!(verify_all(&t, &r, &w, 1e-12).unwrap() < 1e-12);
        let u = t.matrix();
        assert!((u - u.adjoint()).norm() < 1e-12);
        assert!((u * u - CMatrix::identity(3, 3)).norm() < 1e-12);
    }

    #[test]
    fn literal_sandwich_overlap_is_twice_the_state_overlap() {
        let (h, w) = single_query_hyperedge(&labels(2), &[true, false]);
        let r = h.to_reflection();
        let a = direct_sum(&r.inputs()[0].plus, &w.plus[0]);
        let b = direct_sum(&r.inputs()[1].minus, &w.minus[1]);
        let state = r.inputs()[0].plus.dotc(&r.inputs()[1].minus);
        assert!((a.dotc(&b) - state * C64::new(2.0, 0.0)).norm() < 1e-15);
        assert!(sandwich_residual(&r, &w) < 1e-15);
    }

    #[test]
    fn infeasible_family_is_rejected() {
        let (h, mut w) = single_query_hyperedge(&labels(2), &[true, false]);
        w.minus[1][0] = C64::new(2.0, 0.0);
        assert!(matches!(
            build_reflection(&h.to_reflection(), &w, 1e-9),
            Err(Error::NotOrthogonal(_))
        ));
    }

    #[test]
    fn corrupted_witness_is_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (r, w) = random_instance(&mut rng, 3, 3);
        let t = build_reflection(&r, &w, 1e-9).unwrap();
        let mut bad = w.clone();
        let noise = gen::random_unit_vector(&mut rng, bad.plus[0].len()).scale(0.1);
        bad.plus[0] += noise;
        let inp = &r.inputs()[0];
        let rep = verify_transduction(&t, &inp.oracle, (&inp.plus, &bad.plus[0]), (&inp.minus, &bad.minus[0]), 1e-9).unwrap();
        assert!(!rep.ok);
        assert!(rep.plus_residual > 0.01, "{}", rep.plus_residual);
    }

    #[test]
    fn trivial_solves() {
        let sigma = cv(&[0.6, 0.8]);
        let t = Transducer::new(CMatrix::identity(3, 3), 2, 1).unwrap();
        let s = transduce_solve(&t, &sigma).unwrap();
        assert_eq!(s.output, sigma);
        assert_eq!(s.catalyst.norm(), 0.0);
        let mut m = CMatrix::identity(3, 3);
        m[(0, 0)] = C64::new(-1.0, 0.0);
        m[(1, 1)] = C64::new(-1.0, 0.0);
        let t = Transducer::new(m, 2, 1).unwrap();
        let s = transduce_solve(&t, &sigma).unwrap();
        assert!((s.output + &sigma).norm() < 1e-15);
        assert_eq!(s.catalyst.norm(), 0.0);
        let e = emulate(&t, &sigma, 5).unwrap();
        assert!(e.output_error < 1e-9 && e.state_error < 1e-9);
    }

    fn random_instance(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> (StateReflectionProblem, WitnessFamily) {
        let plus: Vec<CVector> = (0..n).map(|_| gen::random_complex_vector(rng, dim)).collect();
        let minus: Vec<CVector> = plus
            .iter()
            .map(|p| {
                let v = gen::random_complex_vector(rng, dim);
                &v - p * (p.dotc(&v) / C64::new(p.norm_squared(), 0.0))
            })
            .collect();
        full_query_solution(&labels(n), &plus, &minus).unwrap()
    }

    #[test]
    fn solve_recovers_signs_and_minimal_catalyst() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (r, w) = random_instance(&mut rng, 4, 3);
        let t = build_reflection(&r, &w, 1e-9).unwrap();
        for (x, inp) in r.inputs().iter().enumerate() {
            let tx = t.with_oracle(&inp.oracle).unwrap();
            let p = transduce_solve(&tx, &inp.plus).unwrap();
            assert!((&p.output - &inp.plus).norm() < 1e-8);
            assert!(p.catalyst.norm_squared() <= w.plus[x].norm_squared() + 1e-9);
            let m = transduce_solve(&tx, &inp.minus).unwrap();
            assert!((&m.output + &inp.minus).norm() < 1e-8);
            assert!(m.catalyst.norm_squared() <= w.minus[x].norm_squared() + 1e-9);
            assert!((p.output.norm() - inp.plus.norm()).abs() < 1e-9);
        }
    }

    #[test]
    fn emulation_error_formula_and_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let (r, w) = random_instance(&mut rng, 3, 3);
        let t = build_reflection(&r, &w, 1e-9).unwrap();
        let inp = &r.inputs()[1];
        let tx = t.with_oracle(&inp.oracle).unwrap();
        let exact = transduce_solve(&tx, &inp.plus).unwrap();
        let (_, _, _, d) = tx.blocks();
        for k in [1usize, 2, 4, 8, 16] {
            let e = emulate(&tx, &inp.plus, k).unwrap();
            let mut dk = exact.catalyst.clone();
            for _ in 0..k {
                dk = &d * dk;
            }
            let wn = exact.catalyst.norm_squared();
            let predicted = (2.0 * (wn - exact.catalyst.dotc(&dk).re) / k as f64).max(0.0).sqrt();
            assert!((e.state_error - predicted).abs() < 1e-9, "K={k}: {} vs {predicted}", e.state_error);
            assert!(e.state_error <= e.bound + 1e-9);
            assert!(e.output_error <= e.state_error + 1e-9);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn reflections_are_unitary_and_transduce(seed in any::<u64>(), n in 1usize..5, dim in 1usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (r, w) = random_instance(&mut rng, n, dim);
            let t = build_reflection(&r, &w, 1e-9).unwrap();
            let u = t.matrix();
            let id = CMatrix::identity(u.nrows(), u.nrows());
            prop_assert!((u - u.adjoint()).norm() < 1e-9);
            prop_assert!((u * u - &id).norm() < 1e-9);
            prop_assert!(sandwich_residual(&r, &w) < 1e-9);
            prop_assert!(verify_all(&t, &r, &w, 1e-9).unwrap() < 1e-9);
        }
    }
}
