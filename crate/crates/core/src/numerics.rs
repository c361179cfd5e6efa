//! Dense linear algebra shared by every other module.
//!
//! Everything is generic over the scalar type so the same routines serve the
//! real Laplacians of [`crate::markov`] and the complex oracles and witnesses
//! of [`crate::reflection`]. Storage and products come from `nalgebra`;
//! Hermitian eigendecompositions from `faer`, whose solver stays accurate on
//! nearly singular input. This module adds the conventions the rest of the
//! crate relies on (descending eigenvalues, relative rank cuts, Hermitian
//! checks).

use nalgebra::{ComplexField, DMatrix, DVector};

use crate::error::{Error, Result};

pub use nalgebra::Complex;

pub type C64 = Complex<f64>;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

/// Scalars the crate works with: `f64` or `Complex<f64>`.
pub trait Scalar: ComplexField<RealField = f64> + Copy {
    /// Eigenvalues (ascending) and eigenvectors of a Hermitian matrix.
    fn eigh(m: &DMatrix<Self>) -> Option<(Vec<f64>, DMatrix<Self>)>;
}

impl Scalar for f64 {
    fn eigh(m: &DMatrix<f64>) -> Option<(Vec<f64>, DMatrix<f64>)> {
        let n = m.nrows();
        let f = faer::Mat::<f64>::from_fn(n, n, |i, j| m[(i, j)]);
        let ev = f.self_adjoint_eigen(faer::Side::Lower).ok()?;
        let (u, s) = (ev.U(), ev.S());
        Some(((0..n).map(|k| s[k]).collect(), DMatrix::from_fn(n, n, |i, j| u[(i, j)])))
    }
}

impl Scalar for C64 {
    fn eigh(m: &CMatrix) -> Option<(Vec<f64>, CMatrix)> {
        let n = m.nrows();
        let f = faer::Mat::<faer::c64>::from_fn(n, n, |i, j| m[(i, j)]);
        let ev = f.self_adjoint_eigen(faer::Side::Lower).ok()?;
        let (u, s) = (ev.U(), ev.S());
        Some(((0..n).map(|k| s[k].re).collect(), CMatrix::from_fn(n, n, |i, j| u[(i, j)])))
    }
}

/// Relative rank cut used when none is given.
pub const DEFAULT_RANK_TOL: f64 = 1e-12;

/// Eigendecomposition `M = V diag(values) Vᴴ` with eigenvalues sorted
/// descending.
#[derive(Debug, Clone)]
pub struct EigDecomp<T: Scalar> {
    pub values: DVector<f64>,
    pub vectors: DMatrix<T>,
}

impl<T: Scalar> EigDecomp<T> {
    /// `V diag(f(λ)) Vᴴ`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> DMatrix<T> {
        let n = self.values.len();
        let mut scaled = self.vectors.clone();
        for j in 0..n {
            scaled.column_mut(j).scale_mut(f(self.values[j]));
        }
        &scaled * self.vectors.adjoint()
    }

    pub fn reconstruct(&self) -> DMatrix<T> {
        self.map(|x| x)
    }
}

/// Operator 2-norm (largest singular value).
pub fn spectral_norm<T: Scalar>(m: &DMatrix<T>) -> f64 {
    singular_values(m).first().copied().unwrap_or(0.0)
}

/// `[[0, A], [Aᴴ, 0]]`, whose eigenvalues are `±` the singular values of `A`.
fn jordan_wielandt<T: Scalar>(a: &DMatrix<T>) -> DMatrix<T> {
    let (r, c) = a.shape();
    let mut h = DMatrix::zeros(r + c, r + c);
    h.view_mut((0, r), (r, c)).copy_from(a);
    h.view_mut((r, 0), (c, r)).copy_from(&a.adjoint());
    h
}

/// Singular values in descending order, `min(rows, cols)` of them.
///
/// Computed from the Hermitian eigenvalues of `[[0, A], [Aᴴ, 0]]`; the
/// library SVD is not reliable on rank-deficient complex input.
pub fn singular_values<T: Scalar>(a: &DMatrix<T>) -> Vec<f64> {
    let k = a.nrows().min(a.ncols());
    if k == 0 {
        return Vec::new();
    }
    let eig = hermitian_eig(&jordan_wielandt(a), 1e-9).expect("Hermitian by construction");
    eig.values.iter().take(k).map(|&s| s.max(0.0)).collect()
}

/// Singular triplets `A ≈ Σ_k s_k u_k v_kᴴ` with `s_k > rel_cut · s_max`.
#[derive(Debug, Clone)]
pub struct ThinSvd<T: Scalar> {
    pub u: DMatrix<T>,
    pub s: Vec<f64>,
    pub v: DMatrix<T>,
}

/// Thin SVD through the Hermitian eigenproblem of `[[0, A], [Aᴴ, 0]]`: an
/// eigenvector for `s > 0` is `(u; v)/√2`.
pub fn thin_svd<T: Scalar>(a: &DMatrix<T>, rel_cut: f64) -> ThinSvd<T> {
    let (r, c) = a.shape();
    if r == 0 || c == 0 {
        return ThinSvd {
            u: DMatrix::zeros(r, 0),
            s: Vec::new(),
            v: DMatrix::zeros(c, 0),
        };
    }
    let eig = hermitian_eig(&jordan_wielandt(a), 1e-9).expect("Hermitian by construction");
    let top = eig.values[0].max(0.0);
    let keep: Vec<usize> = (0..r.min(c)).filter(|&k| eig.values[k] > rel_cut * top && eig.values[k] > 0.0).collect();
    let root2 = T::from_real(std::f64::consts::SQRT_2);
    let u = DMatrix::from_fn(r, keep.len(), |i, j| eig.vectors[(i, keep[j])] * root2);
    let v = DMatrix::from_fn(c, keep.len(), |i, j| eig.vectors[(r + i, keep[j])] * root2);
    ThinSvd {
        u,
        s: keep.iter().map(|&k| eig.values[k]).collect(),
        v,
    }
}

/// `‖M − Mᴴ‖_F`, a cheap Hermiticity measure.
pub fn hermitian_defect<T: Scalar>(m: &DMatrix<T>) -> f64 {
    if m.nrows() != m.ncols() {
        return f64::INFINITY;
    }
    (m - m.adjoint()).norm()
}

/// Hermitian eigendecomposition with eigenvalues in descending order.
///
/// `tol` bounds the accepted relative Hermiticity defect.
pub fn hermitian_eig<T: Scalar>(m: &DMatrix<T>, tol: f64) -> Result<EigDecomp<T>> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "eigendecomposition of a {}x{} matrix",
            m.nrows(),
            m.ncols()
        )));
    }
    let scale = m.norm().max(f64::MIN_POSITIVE);
    let defect = hermitian_defect(m);
    if defect > tol * scale {
        return Err(Error::NotHermitian(defect / scale));
    }
    let n = m.nrows();
    if n == 0 {
        return Ok(EigDecomp {
            values: DVector::zeros(0),
            vectors: DMatrix::zeros(0, 0),
        });
    }
    // Symmetrize so rounding in the input cannot leak into the solver.
    let sym = (m + m.adjoint()).scale(0.5);
    let (vals, vecs) = T::eigh(&sym).ok_or_else(|| Error::NumericalFailure("eigensolver did not converge".into()))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| vals[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (j, &i) in order.iter().enumerate() {
        vectors.set_column(j, &vecs.column(i));
    }
    Ok(EigDecomp { values, vectors })
}

/// Moore–Penrose pseudoinverse.
///
/// Singular values (or eigenvalues, for Hermitian positive semidefinite
/// input) below `rank_tol` times the largest one are treated as zero.
pub fn pseudoinverse<T: Scalar>(m: &DMatrix<T>, rank_tol: f64) -> DMatrix<T> {
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return DMatrix::zeros(c, r);
    }
    if r == c {
        let scale = m.norm();
        if scale == 0.0 {
            return DMatrix::zeros(c, r);
        }
        if hermitian_defect(m) <= 1e-13 * scale {
            if let Ok(eig) = hermitian_eig(m, 1e-12) {
                let top = eig.values.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
                let bottom = eig.values.iter().cloned().fold(f64::INFINITY, f64::min);
                if bottom >= -rank_tol * top {
                    let cut = rank_tol * top;
                    return eig.map(|l| if l > cut { 1.0 / l } else { 0.0 });
                }
            }
        }
    }
    svd_pinv(m, rank_tol)
}

fn svd_pinv<T: Scalar>(m: &DMatrix<T>, rank_tol: f64) -> DMatrix<T> {
    let svd = thin_svd(m, rank_tol);
    let mut scaled = svd.v.clone();
    for (k, &s) in svd.s.iter().enumerate() {
        scaled.column_mut(k).unscale_mut(s);
    }
    scaled * svd.u.adjoint()
}

/// Minimal-norm least-squares solution `A⁺b`.
pub fn min_norm_solve<T: Scalar>(a: &DMatrix<T>, b: &DVector<T>) -> DVector<T> {
    min_norm_solve_tol(a, b, DEFAULT_RANK_TOL)
}

pub fn min_norm_solve_tol<T: Scalar>(a: &DMatrix<T>, b: &DVector<T>, rank_tol: f64) -> DVector<T> {
    assert_eq!(a.nrows(), b.len(), "min_norm_solve: row count must match rhs");
    if a.ncols() == 0 {
        return DVector::zeros(0);
    }
    if a.nrows() == 0 {
        return DVector::zeros(a.ncols());
    }
    let svd = thin_svd(a, rank_tol);
    let mut x = DVector::zeros(a.ncols());
    for (k, &s) in svd.s.iter().enumerate() {
        let coeff = svd.u.column(k).dotc(b).unscale(s);
        x += svd.v.column(k) * coeff;
    }
    x
}

/// Gram matrix `G_ij = ⟨v_i|v_j⟩` (conjugate-linear in the first slot).
pub fn gram<T: Scalar>(vectors: &[DVector<T>]) -> DMatrix<T> {
    let n = vectors.len();
    DMatrix::from_fn(n, n, |i, j| vectors[i].dotc(&vectors[j]))
}

pub fn complexify_vector(v: &DVector<f64>) -> CVector {
    v.map(|x| C64::new(x, 0.0))
}

pub fn complexify_matrix(m: &DMatrix<f64>) -> CMatrix {
    m.map(|x| C64::new(x, 0.0))
}

/// Direct sum `a ⊕ b` of two vectors.
pub fn direct_sum<T: Scalar>(a: &DVector<T>, b: &DVector<T>) -> DVector<T> {
    DVector::from_iterator(a.len() + b.len(), a.iter().chain(b.iter()).cloned())
}

/// Concatenation of many vectors.
pub fn concat<T: Scalar>(parts: &[DVector<T>]) -> DVector<T> {
    let n = parts.iter().map(|p| p.len()).sum();
    DVector::from_iterator(n, parts.iter().flat_map(|p| p.iter().cloned()))
}

/// Block-diagonal matrix `a ⊕ b`.
pub fn block_diag<T: Scalar>(blocks: &[DMatrix<T>]) -> DMatrix<T> {
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), b.shape()).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// Kronecker product of two vectors, `a ⊗ b` with `b` varying fastest.
pub fn kron_vec<T: Scalar>(a: &DVector<T>, b: &DVector<T>) -> DVector<T> {
    DVector::from_iterator(
        a.len() * b.len(),
        a.iter().flat_map(|&x| b.iter().map(move |&y| x * y)),
    )
}

/// Factor a positive semidefinite matrix as `M = FᴴF` by an eigen square root.
///
/// Eigenvalues in `(−clip, 0)` are zeroed; anything more negative is reported
/// as `Err(λ_min)`.
pub fn psd_factor<T: Scalar>(m: &DMatrix<T>, clip: f64) -> std::result::Result<DMatrix<T>, f64> {
    let eig = hermitian_eig(m, 1e-9).map_err(|_| f64::NAN)?;
    let n = m.nrows();
    if let Some(&low) = eig.values.iter().last() {
        if low < -clip {
            return Err(low);
        }
    }
    // F = diag(√λ) Vᴴ
    let mut f = eig.vectors.adjoint();
    for i in 0..n {
        let s = eig.values[i].max(0.0).sqrt();
        f.row_mut(i).scale_mut(s);
    }
    Ok(f)
}

/// Smallest eigenvalue of a Hermitian matrix (`+∞` for the empty matrix).
pub fn min_eigenvalue<T: Scalar>(m: &DMatrix<T>) -> f64 {
    if m.is_empty() {
        return f64::INFINITY;
    }
    let sym = (m + m.adjoint()).scale(0.5);
    hermitian_eig(&sym, f64::INFINITY).map_or(f64::NAN, |e| e.values[e.values.len() - 1])
}

/// Largest eigenvalue of a Hermitian matrix (`−∞` for the empty matrix).
pub fn max_eigenvalue<T: Scalar>(m: &DMatrix<T>) -> f64 {
    if m.is_empty() {
        return f64::NEG_INFINITY;
    }
    let sym = (m + m.adjoint()).scale(0.5);
    hermitian_eig(&sym, f64::INFINITY).map_or(f64::NAN, |e| e.values[0])
}

/// Serde adapter writing a real matrix as row-major nested arrays.
pub mod rows {
    use nalgebra::DMatrix;
    use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != c) {
            return Err(D::Error::custom("matrix rows have different lengths"));
        }
        Ok(DMatrix::from_row_iterator(rows.len(), c, rows.into_iter().flatten()))
    }
}
