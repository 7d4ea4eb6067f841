//! Dense complex linear algebra on small Hilbert spaces.
//!
//! Inner products are conjugate-linear in the second slot, `<u, v> = sum u_k conj(v_k)`,
//! so the projector onto `psi` acts as `u -> <u, psi> psi`, i.e. the outer product
//! `psi psi^H`. Everything is stored densely; dimensions are desk scale.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Largest tolerated entry of `M - M^H` for a Hermitian operator.
pub const HERMITIAN_TOL: f64 = 1e-12;
/// Most negative eigenvalue still accepted as positive semi-definite.
pub const PSD_TOL: f64 = 1e-10;
/// Allowed deviation of a density operator's trace from one.
pub const TRACE_TOL: f64 = 1e-12;
/// Allowed `||U^H U - I||` for a unitary.
pub const UNITARY_TOL: f64 = 1e-10;

/// A vector of complex field amplitudes.
///
/// Used both for prequantum field samples (arbitrary norm) and quantum states.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "Vec<[f64; 2]>", try_from = "Vec<[f64; 2]>")]
pub struct FieldVector(DVector<C64>);

impl FieldVector {
    pub fn new(components: Vec<C64>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidArgument("field vector must have dimension >= 1".into()));
        }
        Ok(FieldVector(DVector::from_vec(components)))
    }

    pub fn from_dvector(v: DVector<C64>) -> Result<Self> {
        if v.is_empty() {
            return Err(Error::InvalidArgument("field vector must have dimension >= 1".into()));
        }
        Ok(FieldVector(v))
    }

    pub fn from_real(components: &[f64]) -> Result<Self> {
        Self::new(components.iter().map(|&x| C64::new(x, 0.0)).collect())
    }

    pub fn zeros(dim: usize) -> Self {
        FieldVector(DVector::zeros(dim.max(1)))
    }

    pub fn basis(dim: usize, index: usize) -> Self {
        let mut v = DVector::zeros(dim);
        v[index] = C64::new(1.0, 0.0);
        FieldVector(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn components(&self) -> &DVector<C64> {
        &self.0
    }

    pub fn as_slice(&self) -> &[C64] {
        self.0.as_slice()
    }

    pub fn into_dvector(self) -> DVector<C64> {
        self.0
    }

    /// `||phi||^2 = sum |phi_k|^2`.
    pub fn norm_sqr(&self) -> f64 {
        self.0.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    /// `<self, other> = sum self_k conj(other_k)`.
    pub fn inner(&self, other: &FieldVector) -> Result<C64> {
        check_dim(self.dim(), other.dim())?;
        Ok(self.0.iter().zip(other.0.iter()).map(|(a, b)| a * b.conj()).sum())
    }

    pub fn normalized(&self) -> Result<FieldVector> {
        let norm = self.norm();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::ZeroVector);
        }
        Ok(FieldVector(self.0.unscale(norm)))
    }

    pub fn scaled(&self, factor: C64) -> FieldVector {
        FieldVector(self.0.map(|z| z * factor))
    }

    pub fn conj(&self) -> FieldVector {
        FieldVector(self.0.map(|z| z.conj()))
    }

    pub fn sub(&self, other: &FieldVector) -> Result<FieldVector> {
        check_dim(self.dim(), other.dim())?;
        Ok(FieldVector(&self.0 - &other.0))
    }

    pub fn add(&self, other: &FieldVector) -> Result<FieldVector> {
        check_dim(self.dim(), other.dim())?;
        Ok(FieldVector(&self.0 + &other.0))
    }

    pub fn kron(&self, other: &FieldVector) -> FieldVector {
        kron_vector(self, other)
    }
}

impl From<FieldVector> for Vec<[f64; 2]> {
    fn from(v: FieldVector) -> Self {
        v.0.iter().map(|z| [z.re, z.im]).collect()
    }
}

impl TryFrom<Vec<[f64; 2]>> for FieldVector {
    type Error = Error;

    fn try_from(pairs: Vec<[f64; 2]>) -> Result<Self> {
        FieldVector::new(pairs.into_iter().map(|[re, im]| C64::new(re, im)).collect())
    }
}

/// Self-adjoint operator. Hermiticity is checked on construction, never patched silently.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "Vec<Vec<[f64; 2]>>", try_from = "Vec<Vec<[f64; 2]>>")]
pub struct HermitianOperator(DMatrix<C64>);

impl HermitianOperator {
    /// Accepts `m` if `max |M - M^H| <= 1e-12`.
    pub fn new(m: DMatrix<C64>) -> Result<Self> {
        check_square(&m)?;
        let defect = hermitian_defect(&m);
        if defect > HERMITIAN_TOL || !defect.is_finite() {
            return Err(Error::NotHermitian(defect));
        }
        Ok(HermitianOperator(m))
    }

    /// Explicit projection `(M + M^H)/2` onto the Hermitian part.
    pub fn symmetrized(m: DMatrix<C64>) -> Result<Self> {
        check_square(&m)?;
        let h = (&m + m.adjoint()).unscale(2.0);
        Ok(HermitianOperator(h))
    }

    pub fn from_real_diagonal(diag: &[f64]) -> Result<Self> {
        if diag.is_empty() {
            return Err(Error::InvalidArgument("operator must have dimension >= 1".into()));
        }
        let v = DVector::from_iterator(diag.len(), diag.iter().map(|&x| C64::new(x, 0.0)));
        Ok(HermitianOperator(DMatrix::from_diagonal(&v)))
    }

    /// Builds from real row-major entries; the matrix must be symmetric.
    pub fn from_real_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::NotSquare { rows: n, cols: rows.first().map_or(0, |r| r.len()) });
        }
        let m = DMatrix::from_fn(n, n, |i, j| C64::new(rows[i][j], 0.0));
        Self::new(m)
    }

    pub fn identity(dim: usize) -> Self {
        HermitianOperator(DMatrix::identity(dim, dim))
    }

    pub fn zeros(dim: usize) -> Self {
        HermitianOperator(DMatrix::zeros(dim, dim))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.diagonal().iter().map(|z| z.re).sum()
    }

    /// Eigenvalues in ascending order with the matching orthonormal eigenvectors as columns.
    pub fn eigh(&self) -> (Vec<f64>, DMatrix<C64>) {
        let eig = self.0.clone().symmetric_eigen();
        let n = self.dim();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
        let vectors = DMatrix::from_fn(n, n, |i, j| eig.eigenvectors[(i, order[j])]);
        (values, vectors)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigh().0[0]
    }

    pub fn scaled(&self, factor: f64) -> HermitianOperator {
        HermitianOperator(self.0.scale(factor))
    }

    pub fn add(&self, other: &HermitianOperator) -> Result<HermitianOperator> {
        check_dim(self.dim(), other.dim())?;
        Ok(HermitianOperator(&self.0 + &other.0))
    }

    pub fn sub(&self, other: &HermitianOperator) -> Result<HermitianOperator> {
        check_dim(self.dim(), other.dim())?;
        Ok(HermitianOperator(&self.0 - &other.0))
    }

    /// `self + shift * I`.
    pub fn shifted(&self, shift: f64) -> HermitianOperator {
        let mut m = self.0.clone();
        for k in 0..self.dim() {
            m[(k, k)] += C64::new(shift, 0.0);
        }
        HermitianOperator(m)
    }

    pub fn transpose(&self) -> HermitianOperator {
        HermitianOperator(self.0.transpose())
    }

    pub fn tensor(&self, other: &HermitianOperator) -> HermitianOperator {
        tensor_product(self, other)
    }

    pub fn apply(&self, v: &FieldVector) -> Result<FieldVector> {
        check_dim(self.dim(), v.dim())?;
        Ok(FieldVector(&self.0 * v.components()))
    }

    /// `max_ij |self_ij - other_ij|`.
    pub fn max_abs_diff(&self, other: &HermitianOperator) -> f64 {
        max_abs_diff(&self.0, &other.0)
    }

    pub fn is_zero_within(&self, tol: f64) -> bool {
        self.0.iter().all(|z| z.norm() <= tol)
    }
}

impl From<HermitianOperator> for Vec<Vec<[f64; 2]>> {
    fn from(op: HermitianOperator) -> Self {
        matrix_to_pairs(&op.0)
    }
}

impl TryFrom<Vec<Vec<[f64; 2]>>> for HermitianOperator {
    type Error = Error;

    fn try_from(rows: Vec<Vec<[f64; 2]>>) -> Result<Self> {
        HermitianOperator::new(matrix_from_pairs(&rows)?)
    }
}

/// Positive semi-definite, unit-trace Hermitian operator.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(into = "Vec<Vec<[f64; 2]>>")]
pub struct DensityOperator(HermitianOperator);

impl DensityOperator {
    pub fn new(op: HermitianOperator) -> Result<Self> {
        let trace = op.trace();
        if (trace - 1.0).abs() > TRACE_TOL {
            return Err(Error::InvalidTrace(trace));
        }
        let min = op.min_eigenvalue();
        if min < -PSD_TOL {
            return Err(Error::NotPositive(min));
        }
        Ok(DensityOperator(op))
    }

    pub fn pure(psi: &FieldVector) -> Result<Self> {
        Ok(DensityOperator(projector_from_state(psi)?))
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        DensityOperator(HermitianOperator::identity(dim).scaled(1.0 / dim as f64))
    }

    pub fn diagonal(probabilities: &[f64]) -> Result<Self> {
        Self::new(HermitianOperator::from_real_diagonal(probabilities)?)
    }

    pub fn operator(&self) -> &HermitianOperator {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }
}

impl From<DensityOperator> for Vec<Vec<[f64; 2]>> {
    fn from(rho: DensityOperator) -> Self {
        rho.0.into()
    }
}

impl<'de> Deserialize<'de> for DensityOperator {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let op = HermitianOperator::deserialize(deserializer)?;
        DensityOperator::new(op).map_err(serde::de::Error::custom)
    }
}

/// Unitary matrix, e.g. a time-evolution propagator.
#[derive(Clone, Debug, PartialEq)]
pub struct Unitary(DMatrix<C64>);

impl Unitary {
    pub fn new(m: DMatrix<C64>) -> Result<Self> {
        check_square(&m)?;
        let u = Unitary(m);
        let defect = u.unitarity_defect();
        if defect > UNITARY_TOL || !defect.is_finite() {
            return Err(Error::InvalidArgument(format!("matrix is not unitary (defect {defect:e})")));
        }
        Ok(u)
    }

    pub(crate) fn from_matrix_unchecked(m: DMatrix<C64>) -> Self {
        Unitary(m)
    }

    pub fn identity(dim: usize) -> Self {
        Unitary(DMatrix::identity(dim, dim))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.0
    }

    pub fn adjoint(&self) -> Unitary {
        Unitary(self.0.adjoint())
    }

    pub fn compose(&self, other: &Unitary) -> Result<Unitary> {
        check_dim(self.dim(), other.dim())?;
        Ok(Unitary(&self.0 * &other.0))
    }

    pub fn apply(&self, v: &FieldVector) -> Result<FieldVector> {
        check_dim(self.dim(), v.dim())?;
        Ok(FieldVector(&self.0 * v.components()))
    }

    /// `U A U^H`, re-projected onto the Hermitian part to absorb round-off.
    pub fn conjugate(&self, op: &HermitianOperator) -> Result<HermitianOperator> {
        check_dim(self.dim(), op.dim())?;
        HermitianOperator::symmetrized(&self.0 * op.matrix() * self.0.adjoint())
    }

    /// `max_ij |(U^H U - I)_ij|`.
    pub fn unitarity_defect(&self) -> f64 {
        let n = self.dim();
        max_abs_diff(&(self.0.adjoint() * &self.0), &DMatrix::identity(n, n))
    }
}

/// Electric and magnetic field components on a common grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EMFieldPair {
    pub electric: Vec<f64>,
    pub magnetic: Vec<f64>,
}

impl EMFieldPair {
    pub fn new(electric: Vec<f64>, magnetic: Vec<f64>) -> Result<Self> {
        check_dim(electric.len(), magnetic.len())?;
        if electric.is_empty() {
            return Err(Error::InvalidArgument("field pair must have dimension >= 1".into()));
        }
        Ok(EMFieldPair { electric, magnetic })
    }

    /// Discrete field energy `||E||^2 + ||B||^2`.
    pub fn energy(&self) -> f64 {
        self.electric.iter().chain(self.magnetic.iter()).map(|x| x * x).sum()
    }
}

/// Riemann-Silberstein packaging `phi_k = E_k + i B_k`.
pub fn riemann_silberstein(fields: &EMFieldPair) -> FieldVector {
    FieldVector(DVector::from_iterator(
        fields.electric.len(),
        fields.electric.iter().zip(&fields.magnetic).map(|(&e, &b)| C64::new(e, b)),
    ))
}

/// Inverse of [`riemann_silberstein`].
pub fn split_riemann_silberstein(phi: &FieldVector) -> EMFieldPair {
    EMFieldPair { electric: phi.0.iter().map(|z| z.re).collect(), magnetic: phi.0.iter().map(|z| z.im).collect() }
}

/// Orthogonal projector `psi psi^H / ||psi||^2`.
pub fn projector_from_state(psi: &FieldVector) -> Result<HermitianOperator> {
    let unit = psi.normalized()?;
    let v = unit.components();
    let m = v * v.adjoint();
    // exact Hermitian up to the conjugation in each entry
    HermitianOperator::symmetrized(m)
}

/// `Re Tr(D A)`; the imaginary residue must vanish to 1e-12 relative to `||D|| ||A||`.
pub fn trace_product(d: &HermitianOperator, a: &HermitianOperator) -> Result<f64> {
    check_dim(d.dim(), a.dim())?;
    let n = d.dim();
    let mut tr = C64::new(0.0, 0.0);
    for i in 0..n {
        for k in 0..n {
            tr += d.0[(i, k)] * a.0[(k, i)];
        }
    }
    let scale = (d.0.norm() * a.0.norm()).max(1.0);
    if tr.im.abs() > HERMITIAN_TOL * scale {
        return Err(Error::ImaginaryResidue(tr.im));
    }
    Ok(tr.re)
}

/// Kronecker product `A (x) B`, index `(i*n_b + k, j*n_b + l)`.
pub fn tensor_product(a: &HermitianOperator, b: &HermitianOperator) -> HermitianOperator {
    HermitianOperator(a.0.kronecker(&b.0))
}

/// Kronecker product of state vectors, component `j*n_2 + k` equals `psi1_j psi2_k`.
pub fn kron_vector(psi1: &FieldVector, psi2: &FieldVector) -> FieldVector {
    FieldVector(psi1.0.kronecker(&psi2.0))
}

/// Reshapes a bipartite vector of dimension `n*n` into the `n x n` coefficient matrix
/// `M_jk = psi_{j n + k}`.
pub fn coefficient_matrix(psi: &FieldVector) -> Result<DMatrix<C64>> {
    let n = exact_sqrt(psi.dim()).ok_or(Error::NonSquareDimension(psi.dim()))?;
    Ok(DMatrix::from_fn(n, n, |j, k| psi.0[j * n + k]))
}

/// Partial trace over the second factor of an operator on `C^n1 (x) C^n2`.
pub fn partial_trace_second(op: &HermitianOperator, n1: usize, n2: usize) -> Result<HermitianOperator> {
    check_dim(op.dim(), n1 * n2)?;
    let m = DMatrix::from_fn(n1, n1, |i, j| (0..n2).map(|k| op.0[(i * n2 + k, j * n2 + k)]).sum());
    HermitianOperator::symmetrized(m)
}

/// Partial trace over the first factor of an operator on `C^n1 (x) C^n2`.
pub fn partial_trace_first(op: &HermitianOperator, n1: usize, n2: usize) -> Result<HermitianOperator> {
    check_dim(op.dim(), n1 * n2)?;
    let m = DMatrix::from_fn(n2, n2, |k, l| (0..n1).map(|i| op.0[(i * n2 + k, i * n2 + l)]).sum());
    HermitianOperator::symmetrized(m)
}

pub(crate) fn exact_sqrt(n: usize) -> Option<usize> {
    let r = (n as f64).sqrt().round() as usize;
    (r * r == n && r > 0).then_some(r)
}

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}

fn check_square(m: &DMatrix<C64>) -> Result<()> {
    if m.nrows() != m.ncols() || m.nrows() == 0 {
        return Err(Error::NotSquare { rows: m.nrows(), cols: m.ncols() });
    }
    Ok(())
}

pub(crate) fn hermitian_defect(m: &DMatrix<C64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

pub(crate) fn max_abs_diff(a: &DMatrix<C64>, b: &DMatrix<C64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

pub(crate) fn matrix_to_pairs(m: &DMatrix<C64>) -> Vec<Vec<[f64; 2]>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect()).collect()
}

pub(crate) fn matrix_from_pairs(rows: &[Vec<[f64; 2]>]) -> Result<DMatrix<C64>> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(Error::NotSquare { rows: n, cols: rows.first().map_or(0, |r| r.len()) });
    }
    Ok(DMatrix::from_fn(n, n, |i, j| C64::new(rows[i][j][0], rows[i][j][1])))
}

/// Seeded random draws of states, observables and unitaries for tests and experiments.
pub mod random {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn gaussian_c64<R: Rng + ?Sized>(rng: &mut R) -> C64 {
        C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
    }

    /// Haar-random unit vector.
    pub fn unit_vector<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> FieldVector {
        loop {
            let v = FieldVector(DVector::from_fn(dim, |_, _| gaussian_c64(rng)));
            if let Ok(u) = v.normalized() {
                return u;
            }
        }
    }

    /// GUE-like Hermitian matrix with entries of order `scale`.
    pub fn hermitian<R: Rng + ?Sized>(dim: usize, scale: f64, rng: &mut R) -> HermitianOperator {
        let g = DMatrix::from_fn(dim, dim, |_, _| gaussian_c64(rng));
        let h = (&g + g.adjoint()).scale(0.5 * scale / 2f64.sqrt());
        HermitianOperator(h)
    }

    /// Haar-random unitary via QR of a complex Ginibre matrix.
    pub fn unitary<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Unitary {
        let g = DMatrix::from_fn(dim, dim, |_, _| gaussian_c64(rng));
        let qr = g.qr();
        let (q, r) = (qr.q(), qr.r());
        let phases = DMatrix::from_diagonal(&DVector::from_fn(dim, |k, _| {
            let d = r[(k, k)];
            if d.norm() > 0.0 {
                d / d.norm()
            } else {
                C64::new(1.0, 0.0)
            }
        }));
        Unitary(q * phases)
    }

    /// Random density operator `G G^H / Tr(G G^H)`.
    pub fn density<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> DensityOperator {
        let g = DMatrix::from_fn(dim, dim, |_, _| gaussian_c64(rng));
        let m = &g * g.adjoint();
        let tr: f64 = m.diagonal().iter().map(|z| z.re).sum();
        let op = HermitianOperator::symmetrized(m.unscale(tr)).expect("square");
        DensityOperator(op)
    }
}
