//! Small-dimension complex linear algebra: Hermitian eigensystems,
//! commutators, expectation values and outer products for dimensions 2-4.
//!
//! Everything here is dense, row-major and allocation-light. The eigensolver
//! is a cyclic Jacobi iteration, which converges in a handful of sweeps for
//! the 2x2..4x4 Hermitian matrices this crate works with and needs no
//! external linear-algebra dependency.

use num_complex::Complex64;
use thiserror::Error;

/// Complex scalar used throughout the crate.
pub type C64 = Complex64;

/// Hermiticity tolerance applied when validating inputs.
pub const HERMITIAN_TOL: f64 = 1e-12;

/// Components below this magnitude are ignored when fixing eigenvector phases.
const PHASE_FIX_TOL: f64 = 1e-9;

/// Errors produced by the linear-algebra layer.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum QmathError {
    #[error("matrix is not Hermitian (max |M - M^H| entry = {deviation:.3e})")]
    NotHermitian { deviation: f64 },
    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },
    #[error("unsupported dimension {0}, expected 2..=4")]
    BadDimension(usize),
    #[error("entries must be finite")]
    NonFinite,
    #[error("entry count {entries} does not match dimension {dim}")]
    BadShape { dim: usize, entries: usize },
    #[error("vector is not normalized (|norm - 1| = {0:.3e})")]
    NotNormalized(f64),
    #[error("vector norm {0:.3e} is too small to normalize")]
    ZeroVector(f64),
    #[error("eigensolver did not converge within {sweeps} sweeps (off-diagonal norm {off:.3e})")]
    NoConvergence { sweeps: usize, off: f64 },
}

/// Dense complex square matrix of dimension 2..=4, row-major storage.
#[derive(Debug, Clone, PartialEq)]
pub struct CMatrix {
    dim: usize,
    entries: Vec<C64>,
}

impl CMatrix {
    /// Builds a matrix from row-major entries, validating shape and finiteness.
    pub fn new(dim: usize, entries: Vec<C64>) -> Result<Self, QmathError> {
        if !(2..=4).contains(&dim) {
            return Err(QmathError::BadDimension(dim));
        }
        if entries.len() != dim * dim {
            return Err(QmathError::BadShape {
                dim,
                entries: entries.len(),
            });
        }
        if entries.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(QmathError::NonFinite);
        }
        Ok(Self { dim, entries })
    }

    /// Builds a matrix from real row-major entries.
    pub fn from_real(dim: usize, entries: &[f64]) -> Result<Self, QmathError> {
        Self::new(dim, entries.iter().map(|&x| C64::new(x, 0.0)).collect())
    }

    pub fn zero(dim: usize) -> Self {
        Self {
            dim,
            entries: vec![C64::new(0.0, 0.0); dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zero(dim);
        for i in 0..dim {
            m.set(i, i, C64::new(1.0, 0.0));
        }
        m
    }

    /// Diagonal matrix from real diagonal entries.
    pub fn diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zero(diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m.set(i, i, C64::new(d, 0.0));
        }
        m
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> C64 {
        self.entries[row * self.dim + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: C64) {
        self.entries[row * self.dim + col] = value;
    }

    pub fn entries(&self) -> &[C64] {
        &self.entries
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> Self {
        let mut out = Self::zero(self.dim);
        for i in 0..self.dim {
            for j in 0..self.dim {
                out.set(j, i, self.get(i, j).conj());
            }
        }
        out
    }

    pub fn scale(&self, factor: C64) -> Self {
        Self {
            dim: self.dim,
            entries: self.entries.iter().map(|&z| z * factor).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self, QmathError> {
        self.check_same_dim(other)?;
        Ok(Self {
            dim: self.dim,
            entries: self
                .entries
                .iter()
                .zip(&other.entries)
                .map(|(&a, &b)| a + b)
                .collect(),
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self, QmathError> {
        self.check_same_dim(other)?;
        Ok(Self {
            dim: self.dim,
            entries: self
                .entries
                .iter()
                .zip(&other.entries)
                .map(|(&a, &b)| a - b)
                .collect(),
        })
    }

    pub fn matmul(&self, other: &Self) -> Result<Self, QmathError> {
        self.check_same_dim(other)?;
        let n = self.dim;
        let mut out = Self::zero(n);
        for i in 0..n {
            for j in 0..n {
                let mut acc = C64::new(0.0, 0.0);
                for k in 0..n {
                    acc += self.get(i, k) * other.get(k, j);
                }
                out.set(i, j, acc);
            }
        }
        Ok(out)
    }

    /// Matrix-vector product.
    pub fn mul_vec(&self, v: &[C64]) -> Result<Vec<C64>, QmathError> {
        if v.len() != self.dim {
            return Err(QmathError::DimMismatch {
                left: self.dim,
                right: v.len(),
            });
        }
        let mut out = vec![C64::new(0.0, 0.0); self.dim];
        for i in 0..self.dim {
            for (k, &vk) in v.iter().enumerate() {
                out[i] += self.get(i, k) * vk;
            }
        }
        Ok(out)
    }

    pub fn trace(&self) -> C64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    /// Largest entry-wise deviation from the conjugate transpose.
    pub fn hermiticity_deviation(&self) -> f64 {
        let adj = self.adjoint();
        self.entries
            .iter()
            .zip(&adj.entries)
            .map(|(&a, &b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// Validates Hermiticity within [`HERMITIAN_TOL`].
    pub fn require_hermitian(&self) -> Result<(), QmathError> {
        let deviation = self.hermiticity_deviation();
        if deviation > HERMITIAN_TOL {
            Err(QmathError::NotHermitian { deviation })
        } else {
            Ok(())
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.entries
            .iter()
            .zip(&other.entries)
            .map(|(&a, &b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    fn check_same_dim(&self, other: &Self) -> Result<(), QmathError> {
        if self.dim != other.dim {
            return Err(QmathError::DimMismatch {
                left: self.dim,
                right: other.dim,
            });
        }
        Ok(())
    }
}

/// Unit-norm complex state vector.
#[derive(Debug, Clone, PartialEq)]
pub struct QState {
    amplitudes: Vec<C64>,
}

impl QState {
    /// Accepts a vector whose Euclidean norm is 1 within 1e-12.
    pub fn new(amplitudes: Vec<C64>) -> Result<Self, QmathError> {
        if amplitudes.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(QmathError::NonFinite);
        }
        let norm = vec_norm(&amplitudes);
        if (norm - 1.0).abs() > 1e-12 {
            return Err(QmathError::NotNormalized((norm - 1.0).abs()));
        }
        Ok(Self { amplitudes })
    }

    /// Normalizes an arbitrary nonzero vector.
    pub fn from_unnormalized(v: &[C64]) -> Result<Self, QmathError> {
        let norm = vec_norm(v);
        if norm < 1e-12 {
            return Err(QmathError::ZeroVector(norm));
        }
        Ok(Self {
            amplitudes: v.iter().map(|&z| z / norm).collect(),
        })
    }

    /// Real state helper.
    pub fn from_real(v: &[f64]) -> Result<Self, QmathError> {
        Self::new(v.iter().map(|&x| C64::new(x, 0.0)).collect())
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amplitudes
    }

    /// Inner product `<self|other>` (conjugate-linear in `self`).
    pub fn inner(&self, other: &QState) -> C64 {
        inner(&self.amplitudes, other.amplitudes())
    }

    /// |<self|other>|, the phase-insensitive overlap.
    pub fn overlap(&self, other: &QState) -> f64 {
        self.inner(other).norm()
    }
}

/// `<u|v>` on raw slices.
pub fn inner(u: &[C64], v: &[C64]) -> C64 {
    u.iter().zip(v).map(|(&a, &b)| a.conj() * b).sum()
}

pub fn vec_norm(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Eigendecomposition of a Hermitian matrix, eigenvalues ascending and
/// eigenvectors normalized with the first significant component made real
/// positive.
#[derive(Debug, Clone)]
pub struct EigenSystem {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Vec<Vec<C64>>,
}

impl EigenSystem {
    /// Rebuilds `sum_i lambda_i |v_i><v_i|`.
    pub fn reconstruct(&self) -> CMatrix {
        let dim = self.eigenvalues.len();
        let mut m = CMatrix::zero(dim);
        for (lambda, v) in self.eigenvalues.iter().zip(&self.eigenvectors) {
            for i in 0..dim {
                for j in 0..dim {
                    let cur = m.get(i, j);
                    m.set(i, j, cur + v[i] * v[j].conj() * *lambda);
                }
            }
        }
        m
    }
}

/// Cyclic-Jacobi eigensolver for Hermitian matrices of dimension 2..=4.
///
/// Off-diagonal Frobenius norm is driven below 1e-14 (at most 100 sweeps).
/// Within a degenerate eigenspace the returned basis is re-orthonormalized
/// in ascending sorted order, so repeated eigenvalues still come back in a
/// reproducible basis.
pub fn hermitian_eigensystem(m: &CMatrix) -> Result<EigenSystem, QmathError> {
    m.require_hermitian()?;
    let n = m.dim();

    // Work on the Hermitian average so tiny asymmetries cannot bias the sweep.
    let mut a = m.add(&m.adjoint())?.scale(C64::new(0.5, 0.0));
    let mut v = CMatrix::identity(n);

    let off = |a: &CMatrix| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += a.get(i, j).norm_sqr();
                }
            }
        }
        s.sqrt()
    };

    let mut sweeps = 0;
    while off(&a) > 1e-14 {
        if sweeps >= 100 {
            return Err(QmathError::NoConvergence {
                sweeps,
                off: off(&a),
            });
        }
        for p in 0..n - 1 {
            for q in p + 1..n {
                let apq = a.get(p, q);
                let r = apq.norm();
                if r == 0.0 {
                    continue;
                }
                let alpha = apq / r; // unit phase of the pivot entry
                let app = a.get(p, p).re;
                let aqq = a.get(q, q).re;
                let theta = 0.5 * (2.0 * r).atan2(app - aqq);
                let (s, c) = theta.sin_cos();
                // J differs from the identity in the (p,q) block:
                //   [  c        -s*alpha ]
                //   [  s*conj(alpha)  c  ]
                let jpp = C64::new(c, 0.0);
                let jpq = -alpha * s;
                let jqp = alpha.conj() * s;
                let jqq = C64::new(c, 0.0);

                // A <- J^H A J, applied as row then column updates.
                for k in 0..n {
                    let akp = a.get(k, p);
                    let akq = a.get(k, q);
                    a.set(k, p, akp * jpp + akq * jqp);
                    a.set(k, q, akp * jpq + akq * jqq);
                }
                for k in 0..n {
                    let apk = a.get(p, k);
                    let aqk = a.get(q, k);
                    a.set(p, k, jpp.conj() * apk + jqp.conj() * aqk);
                    a.set(q, k, jpq.conj() * apk + jqq.conj() * aqk);
                }
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, vkp * jpp + vkq * jqp);
                    v.set(k, q, vkp * jpq + vkq * jqq);
                }
            }
        }
        sweeps += 1;
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        a.get(i, i)
            .re
            .partial_cmp(&a.get(j, j).re)
            .unwrap()
            .then(i.cmp(&j))
    });

    let mut eigenvalues = Vec::with_capacity(n);
    let mut eigenvectors: Vec<Vec<C64>> = Vec::with_capacity(n);
    for &idx in &order {
        eigenvalues.push(a.get(idx, idx).re);
        eigenvectors.push((0..n).map(|k| v.get(k, idx)).collect());
    }

    // Re-orthonormalize degenerate clusters in sorted order, then fix phases.
    let scale = eigenvalues.iter().fold(1.0f64, |m, &x| m.max(x.abs()));
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && (eigenvalues[end] - eigenvalues[end - 1]).abs() <= 1e-8 * scale {
            end += 1;
        }
        if end - start > 1 {
            for i in start..end {
                for j in start..i {
                    let proj = inner(&eigenvectors[j], &eigenvectors[i]);
                    let prev = eigenvectors[j].clone();
                    for (k, amp) in eigenvectors[i].iter_mut().enumerate() {
                        *amp -= proj * prev[k];
                    }
                }
                let norm = vec_norm(&eigenvectors[i]);
                for amp in eigenvectors[i].iter_mut() {
                    *amp /= norm;
                }
            }
        }
        start = end;
    }
    for vec in eigenvectors.iter_mut() {
        fix_phase(vec);
    }

    Ok(EigenSystem {
        eigenvalues,
        eigenvectors,
    })
}

/// Multiplies by a unit phase so the first component with |.| > 1e-9 becomes
/// real positive. No-op for (numerically) zero vectors.
pub fn fix_phase(v: &mut [C64]) {
    if let Some(z) = v.iter().find(|z| z.norm() > PHASE_FIX_TOL).copied() {
        let phase = z.conj() / z.norm();
        for amp in v.iter_mut() {
            *amp *= phase;
        }
    }
}

/// `AB - BA`.
pub fn commutator(a: &CMatrix, b: &CMatrix) -> Result<CMatrix, QmathError> {
    a.matmul(b)?.sub(&b.matmul(a)?)
}

/// Returns `(<M>, Var M)` in the given state. The mean's imaginary part
/// (below 1e-12 for a validated Hermitian input) is discarded and the
/// variance is clamped at zero to absorb rounding.
pub fn expectation_variance(m: &CMatrix, psi: &QState) -> Result<(f64, f64), QmathError> {
    m.require_hermitian()?;
    if m.dim() != psi.dim() {
        return Err(QmathError::DimMismatch {
            left: m.dim(),
            right: psi.dim(),
        });
    }
    let mpsi = m.mul_vec(psi.amplitudes())?;
    let mean = inner(psi.amplitudes(), &mpsi).re;
    // <M^2> = ||M psi||^2 for Hermitian M.
    let second = mpsi.iter().map(|z| z.norm_sqr()).sum::<f64>();
    let variance = (second - mean * mean).max(0.0);
    Ok((mean, variance))
}

/// `|u><v|`, i.e. entries `u_i * conj(v_j)`. Inputs need not be normalized.
pub fn outer_product(u: &[C64], v: &[C64]) -> Result<CMatrix, QmathError> {
    if u.len() != v.len() {
        return Err(QmathError::DimMismatch {
            left: u.len(),
            right: v.len(),
        });
    }
    let n = u.len();
    if !(2..=4).contains(&n) {
        return Err(QmathError::BadDimension(n));
    }
    let mut m = CMatrix::zero(n);
    for i in 0..n {
        for j in 0..n {
            m.set(i, j, u[i] * v[j].conj());
        }
    }
    if m.entries.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(QmathError::NonFinite);
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SQRT1_2: f64 = std::f64::consts::FRAC_1_SQRT_2;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    /// Spin-1 Jx in the normalized (angular-momentum) convention.
    fn jx_norm() -> CMatrix {
        CMatrix::from_real(
            3,
            &[
                0.0, SQRT1_2, 0.0, //
                SQRT1_2, 0.0, SQRT1_2, //
                0.0, SQRT1_2, 0.0,
            ],
        )
        .unwrap()
    }

    fn jy_norm() -> CMatrix {
        CMatrix::new(
            3,
            vec![
                c(0.0, 0.0),
                c(0.0, SQRT1_2),
                c(0.0, 0.0),
                c(0.0, -SQRT1_2),
                c(0.0, 0.0),
                c(0.0, SQRT1_2),
                c(0.0, 0.0),
                c(0.0, -SQRT1_2),
                c(0.0, 0.0),
            ],
        )
        .unwrap()
    }

    fn assert_vec_close(actual: &[C64], expected: &[C64], tol: f64) {
        for (a, e) in actual.iter().zip(expected) {
            assert!(
                (a - e).norm() < tol,
                "component mismatch: {a} vs {e} (tol {tol})"
            );
        }
    }

    #[test]
    fn eigensystem_of_diagonal_matrix_is_sorted_standard_basis() {
        let m = CMatrix::diagonal(&[1.0, 0.0, -1.0]);
        let eig = hermitian_eigensystem(&m).unwrap();
        assert_eq!(eig.eigenvalues, vec![-1.0, 0.0, 1.0]);
        assert_vec_close(&eig.eigenvectors[0], &[c(0., 0.), c(0., 0.), c(1., 0.)], 1e-14);
        assert_vec_close(&eig.eigenvectors[1], &[c(0., 0.), c(1., 0.), c(0., 0.)], 1e-14);
        assert_vec_close(&eig.eigenvectors[2], &[c(1., 0.), c(0., 0.), c(0., 0.)], 1e-14);
    }

    #[test]
    fn eigensystem_of_identity_returns_standard_basis() {
        let eig = hermitian_eigensystem(&CMatrix::identity(3)).unwrap();
        assert_eq!(eig.eigenvalues, vec![1.0, 1.0, 1.0]);
        for (i, v) in eig.eigenvectors.iter().enumerate() {
            let mut expected = vec![c(0., 0.); 3];
            expected[i] = c(1., 0.);
            assert_vec_close(v, &expected, 1e-14);
        }
    }

    #[test]
    fn eigensystem_of_normalized_jx() {
        // Independent oracle: check M v = lambda v by explicit products.
        let m = jx_norm();
        let eig = hermitian_eigensystem(&m).unwrap();
        for (lambda, v) in [-1.0, 0.0, 1.0].iter().zip(&eig.eigenvectors) {
            let mv = m.mul_vec(v).unwrap();
            for (a, b) in mv.iter().zip(v) {
                assert!((a - b * *lambda).norm() < 1e-10);
            }
        }
        for (got, want) in eig.eigenvalues.iter().zip(&[-1.0, 0.0, 1.0]) {
            assert!((got - want).abs() < 1e-12);
        }
        // Eigenvector of +1 is proportional to (1, sqrt(2), 1)/2.
        let plus = &eig.eigenvectors[2];
        let expected = [c(0.5, 0.0), c(SQRT1_2, 0.0), c(0.5, 0.0)];
        assert_vec_close(plus, &expected, 1e-10);
    }

    #[test]
    fn non_hermitian_input_is_rejected() {
        let mut m = CMatrix::zero(2);
        m.set(0, 1, c(1.0, 0.0));
        match hermitian_eigensystem(&m) {
            Err(QmathError::NotHermitian { .. }) => {}
            other => panic!("expected NotHermitian, got {other:?}"),
        }
    }

    #[test]
    fn self_commutator_vanishes() {
        let m = jx_norm();
        let comm = commutator(&m, &m).unwrap();
        assert!(comm.max_abs_diff(&CMatrix::zero(3)) < 1e-15);
    }

    #[test]
    fn commutator_of_normalized_spin_matrices() {
        // [Jx, Jy] = -i Jz with Jz = diag(1, 0, -1), verified against a
        // direct 3x3 multiplication oracle (matmul is that oracle).
        let comm = commutator(&jx_norm(), &jy_norm()).unwrap();
        let expected = CMatrix::diagonal(&[1.0, 0.0, -1.0]).scale(c(0.0, -1.0));
        assert!(comm.max_abs_diff(&expected) < 1e-14);
    }

    #[test]
    fn commutator_of_paulis() {
        let sx = CMatrix::from_real(2, &[0.0, 1.0, 1.0, 0.0]).unwrap();
        let sy = CMatrix::new(2, vec![c(0., 0.), c(0., -1.), c(0., 1.), c(0., 0.)]).unwrap();
        let sz = CMatrix::diagonal(&[1.0, -1.0]);
        let comm = commutator(&sx, &sy).unwrap();
        assert!(comm.max_abs_diff(&sz.scale(c(0.0, 2.0))) < 1e-15);
    }

    #[test]
    fn commutator_dim_mismatch() {
        let a = CMatrix::identity(2);
        let b = CMatrix::identity(3);
        assert!(matches!(
            commutator(&a, &b),
            Err(QmathError::DimMismatch { .. })
        ));
    }

    #[test]
    fn expectation_variance_on_pauli_x() {
        let sx = CMatrix::from_real(2, &[0.0, 1.0, 1.0, 0.0]).unwrap();
        let zero = QState::from_real(&[1.0, 0.0]).unwrap();
        let (mean, var) = expectation_variance(&sx, &zero).unwrap();
        assert!(mean.abs() < 1e-15);
        assert!((var - 1.0).abs() < 1e-15);
    }

    #[test]
    fn expectation_on_family_state() {
        // <Jz> on (sin phi, 0, cos phi) is sin^2 - cos^2 = -cos(2 phi),
        // from the symbolic expansion oracle.
        let jz = CMatrix::diagonal(&[1.0, 0.0, -1.0]);
        for phi in [0.3, std::f64::consts::FRAC_PI_4, 2.4] {
            let psi = QState::from_real(&[phi.sin(), 0.0, phi.cos()]).unwrap();
            let (mean, _) = expectation_variance(&jz, &psi).unwrap();
            assert!((mean + (2.0 * phi).cos()).abs() < 1e-14);
        }
    }

    #[test]
    fn jx_on_pi_over_4_family_state() {
        // Brute-force matrix oracle: mean 0, variance 1 at phi = pi/4, the
        // point where the product-form relation trivializes.
        let phi = std::f64::consts::FRAC_PI_4;
        let psi = QState::from_real(&[phi.sin(), 0.0, phi.cos()]).unwrap();
        let (mean, var) = expectation_variance(&jx_norm(), &psi).unwrap();
        assert!(mean.abs() < 1e-14);
        assert!((var - 1.0).abs() < 1e-14);
    }

    #[test]
    fn outer_product_examples() {
        let e0 = [c(1., 0.), c(0., 0.), c(0., 0.)];
        let m = outer_product(&e0, &e0).unwrap();
        assert!(m.max_abs_diff(&CMatrix::diagonal(&[1.0, 0.0, 0.0])) < 1e-15);

        let e1 = [c(0., 0.), c(1., 0.), c(0., 0.)];
        let e2 = [c(0., 0.), c(0., 0.), c(1., 0.)];
        let m = outer_product(&e1, &e2).unwrap();
        let mut expected = CMatrix::zero(3);
        expected.set(1, 2, c(1., 0.));
        assert!(m.max_abs_diff(&expected) < 1e-15);

        let u = [c(2f64.sqrt(), 0.), c(0., 0.), c(0., 0.)];
        let m = outer_product(&u, &u).unwrap();
        assert!(m.max_abs_diff(&CMatrix::diagonal(&[2.0, 0.0, 0.0])) < 1e-15);
    }

    #[test]
    fn variance_matches_eigensystem_route() {
        // Two-path equality: Var = sum_i p_i (lambda_i - <M>)^2.
        let m = jx_norm();
        let psi = QState::from_unnormalized(&[c(0.3, 0.1), c(-0.2, 0.7), c(0.5, -0.4)]).unwrap();
        let (mean, var) = expectation_variance(&m, &psi).unwrap();
        let eig = hermitian_eigensystem(&m).unwrap();
        let mut var_spec = 0.0;
        for (lambda, v) in eig.eigenvalues.iter().zip(&eig.eigenvectors) {
            let p = inner(v, psi.amplitudes()).norm_sqr();
            var_spec += p * (lambda - mean).powi(2);
        }
        assert!((var - var_spec).abs() < 1e-10);
    }

    #[test]
    fn state_normalization_is_enforced() {
        assert!(matches!(
            QState::from_real(&[0.7, 0.3]),
            Err(QmathError::NotNormalized(_))
        ));
        assert!(QState::from_real(&[0.6, 0.8]).is_ok());
    }
}
