//! Generalized Bloch representation of d-level quantum states.
//!
//! Every Hermitian unit-trace d×d matrix is written as
//!
//! ```text
//! ϱ = 1/d + Σ_i w_i σ_i,     Tr(σ_i σ_j) = 2 δ_ij,
//! ```
//!
//! where the σ_i are the d²−1 generalized Gell-Mann matrices. The basis is
//! ordered in three blocks of "X-type" (real off-diagonal), "Y-type"
//! (imaginary off-diagonal) and "Z-type" (diagonal) generators. The block
//! boundaries matter: the hardness encoding assigns radii by block.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::ops::Range;

use crate::error::{Error, Result};
use crate::json;

/// Dense complex matrix.
pub type CMatrix = DMatrix<Complex64>;

/// Tolerance for the Hermitian and trace checks on density operators.
pub const HERMITIAN_TOL: f64 = 1e-12;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// The ordered generalized Gell-Mann basis for dimension `d`.
#[derive(Debug, Clone)]
pub struct GellMannBasis {
    dim: usize,
    pairs: Vec<(usize, usize)>,
    matrices: Vec<CMatrix>,
}

impl GellMannBasis {
    /// Builds the basis: X-block over pairs j<k in lexicographic order, then the
    /// Y-block in the same order, then the diagonal generators l = 1..d−1.
    pub fn new(dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidDimension(dim));
        }
        let pairs: Vec<(usize, usize)> = (0..dim)
            .flat_map(|j| ((j + 1)..dim).map(move |k| (j, k)))
            .collect();

        let mut matrices = Vec::with_capacity(dim * dim - 1);
        for &(j, k) in &pairs {
            let mut m = CMatrix::zeros(dim, dim);
            m[(j, k)] = ONE;
            m[(k, j)] = ONE;
            matrices.push(m);
        }
        for &(j, k) in &pairs {
            // −i(|j⟩⟨k| − |k⟩⟨j|)
            let mut m = CMatrix::zeros(dim, dim);
            m[(j, k)] = Complex64::new(0.0, -1.0);
            m[(k, j)] = Complex64::new(0.0, 1.0);
            matrices.push(m);
        }
        for l in 1..dim {
            let norm = (2.0 / (l * (l + 1)) as f64).sqrt();
            let mut m = CMatrix::zeros(dim, dim);
            for j in 0..l {
                m[(j, j)] = Complex64::new(norm, 0.0);
            }
            m[(l, l)] = Complex64::new(-(l as f64) * norm, 0.0);
            matrices.push(m);
        }
        Ok(Self { dim, pairs, matrices })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of generators, d²−1.
    pub fn len(&self) -> usize {
        self.matrices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matrices.is_empty()
    }

    pub fn matrices(&self) -> &[CMatrix] {
        &self.matrices
    }

    pub fn matrix(&self, index: usize) -> &CMatrix {
        &self.matrices[index]
    }

    /// i_d = d(d−1)/2, the size of the X- and Y-blocks.
    pub fn block_size(&self) -> usize {
        self.pairs.len()
    }

    /// Block boundaries (i_d, 2·i_d) as zero-based exclusive ends.
    pub fn block_boundaries(&self) -> (usize, usize) {
        (self.block_size(), 2 * self.block_size())
    }

    pub fn x_block(&self) -> Range<usize> {
        0..self.block_size()
    }

    pub fn y_block(&self) -> Range<usize> {
        self.block_size()..2 * self.block_size()
    }

    pub fn z_block(&self) -> Range<usize> {
        2 * self.block_size()..self.len()
    }

    /// The (j, k) index pairs labelling the off-diagonal generators.
    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    /// Tr(M σ_i) for every generator, assuming `m` is Hermitian.
    ///
    /// Evaluated from the sparse structure of the generators.
    pub fn coefficients(&self, m: &CMatrix) -> Vec<f64> {
        let d = self.dim;
        let mut out = Vec::with_capacity(self.len());
        for &(j, k) in &self.pairs {
            out.push(m[(j, k)].re + m[(k, j)].re);
        }
        for &(j, k) in &self.pairs {
            // −i(M_kj − M_jk)
            let z = (m[(k, j)] - m[(j, k)]) * Complex64::new(0.0, -1.0);
            out.push(z.re);
        }
        let mut prefix = 0.0;
        for l in 1..d {
            prefix += m[(l - 1, l - 1)].re;
            let norm = (2.0 / (l * (l + 1)) as f64).sqrt();
            out.push(norm * (prefix - l as f64 * m[(l, l)].re));
        }
        out
    }

    /// ⟨ψ|σ_i|ψ⟩ for every generator (no normalization applied to ψ).
    pub fn expectations(&self, psi: &[Complex64]) -> Vec<f64> {
        let d = self.dim;
        debug_assert_eq!(psi.len(), d);
        let mut out = vec![0.0; self.len()];
        let n = self.pairs.len();
        for (idx, &(j, k)) in self.pairs.iter().enumerate() {
            let z = psi[j].conj() * psi[k];
            out[idx] = 2.0 * z.re;
            out[n + idx] = 2.0 * z.im;
        }
        let mut prefix = 0.0;
        for l in 1..d {
            prefix += psi[l - 1].norm_sqr();
            let norm = (2.0 / (l * (l + 1)) as f64).sqrt();
            out[2 * n + l - 1] = norm * (prefix - l as f64 * psi[l].norm_sqr());
        }
        out
    }

    /// Σ_i c_i σ_i as a dense matrix.
    pub fn combine(&self, coeffs: &[f64]) -> CMatrix {
        let d = self.dim;
        debug_assert_eq!(coeffs.len(), self.len());
        let n = self.pairs.len();
        let mut m = CMatrix::zeros(d, d);
        for (idx, &(j, k)) in self.pairs.iter().enumerate() {
            let z = Complex64::new(coeffs[idx], -coeffs[n + idx]);
            m[(j, k)] += z;
            m[(k, j)] += z.conj();
        }
        for l in 1..d {
            let c = coeffs[2 * n + l - 1] * (2.0 / (l * (l + 1)) as f64).sqrt();
            for j in 0..l {
                m[(j, j)].re += c;
            }
            m[(l, l)].re -= l as f64 * c;
        }
        m
    }
}

/// A Hermitian unit-trace matrix. Positivity is not required; use
/// [`DensityOperator::is_psd`] to test it.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityOperator {
    matrix: CMatrix,
}

impl DensityOperator {
    /// Validates hermiticity and unit trace (both within 1e-12) and stores the
    /// Hermitian part of `matrix`.
    pub fn new(matrix: CMatrix) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::InvalidInput(format!(
                "matrix is {}x{}, expected square",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        let d = matrix.nrows();
        if d < 2 {
            return Err(Error::InvalidDimension(d));
        }
        if !is_hermitian(&matrix, HERMITIAN_TOL) {
            return Err(Error::InvalidInput("matrix is not Hermitian".into()));
        }
        let trace = matrix.trace();
        if (trace.re - 1.0).abs() > HERMITIAN_TOL || trace.im.abs() > HERMITIAN_TOL {
            return Err(Error::InvalidInput(format!(
                "trace is {}{:+}i, expected 1",
                trace.re, trace.im
            )));
        }
        Ok(Self { matrix: hermitian_part(&matrix) })
    }

    /// Wraps a matrix that is Hermitian with unit trace by construction.
    pub(crate) fn from_hermitian_unchecked(matrix: CMatrix) -> Self {
        Self { matrix }
    }

    /// The maximally mixed state 1/d.
    pub fn maximally_mixed(dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidDimension(dim));
        }
        let m = CMatrix::identity(dim, dim) * Complex64::new(1.0 / dim as f64, 0.0);
        Ok(Self { matrix: m })
    }

    /// Diagonal operator with the given (real) entries.
    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        let m = CMatrix::from_diagonal(&DVector::from_iterator(
            diag.len(),
            diag.iter().map(|&x| Complex64::new(x, 0.0)),
        ));
        Self::new(m)
    }

    /// The projector |ψ⟩⟨ψ|/⟨ψ|ψ⟩.
    pub fn pure(psi: &[Complex64]) -> Result<Self> {
        let norm: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
        if norm <= 0.0 {
            return Err(Error::InvalidInput("zero vector".into()));
        }
        let v = DVector::from_column_slice(psi);
        let m = &v * v.adjoint() * Complex64::new(1.0 / norm, 0.0);
        Self::new(m)
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    /// True when all entries are real, i.e. the operator is real symmetric.
    pub fn is_real(&self, tol: f64) -> bool {
        self.matrix.iter().all(|z| z.im.abs() <= tol)
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        sorted_eigenvalues(&self.matrix)
    }

    pub fn mineig(&self) -> f64 {
        min_eigenvalue(&self.matrix)
    }

    pub fn maxeig(&self) -> f64 {
        *self.eigenvalues().last().expect("non-empty spectrum")
    }

    /// PSD test with tolerance 1e-10·(1 + ‖ϱ‖∞).
    pub fn is_psd(&self) -> bool {
        let eig = self.eigenvalues();
        let spectral_norm = eig.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        eig[0] >= -1e-10 * (1.0 + spectral_norm)
    }

    /// ⟨ψ|ϱ|ψ⟩ (no normalization applied to ψ).
    pub fn expectation(&self, psi: &[Complex64]) -> f64 {
        quadratic_form(&self.matrix, psi)
    }

    /// Frobenius norm ‖ϱ − σ‖₂.
    pub fn frobenius_distance(&self, other: &DensityOperator) -> f64 {
        (&self.matrix - &other.matrix).norm()
    }
}

impl Serialize for DensityOperator {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        json::DensityOperatorJson {
            dim: self.dim(),
            matrix: json::complex_matrix_to_json(&self.matrix),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for DensityOperator {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = json::DensityOperatorJson::deserialize(d)?;
        let m = json::complex_matrix_from_json(&raw.matrix).map_err(serde::de::Error::custom)?;
        if m.nrows() != raw.dim {
            return Err(serde::de::Error::custom(format!(
                "dim {} does not match matrix size {}",
                raw.dim,
                m.nrows()
            )));
        }
        DensityOperator::new(m).map_err(serde::de::Error::custom)
    }
}

/// Coordinates w of ϱ = 1/d + Σ w_i σ_i.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlochVector {
    pub dim: usize,
    pub coords: Vec<f64>,
}

impl BlochVector {
    pub fn new(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidDimension(dim));
        }
        if coords.len() != dim * dim - 1 {
            return Err(Error::DimensionMismatch { expected: dim * dim - 1, found: coords.len() });
        }
        Ok(Self { dim, coords })
    }

    pub fn zero(dim: usize) -> Self {
        Self { dim, coords: vec![0.0; dim * dim - 1] }
    }

    pub fn norm(&self) -> f64 {
        self.coords.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

/// w_i = Tr(ϱ σ_i)/2.
pub fn to_bloch(rho: &DensityOperator, basis: &GellMannBasis) -> Result<BlochVector> {
    if rho.dim() != basis.dim() {
        return Err(Error::DimensionMismatch { expected: basis.dim(), found: rho.dim() });
    }
    let coords = basis.coefficients(rho.matrix()).into_iter().map(|c| 0.5 * c).collect();
    Ok(BlochVector { dim: rho.dim(), coords })
}

/// ϱ = 1/d + Σ w_i σ_i. The result is Hermitian with unit trace but need not be PSD.
pub fn from_bloch(w: &BlochVector, basis: &GellMannBasis) -> Result<DensityOperator> {
    if w.dim != basis.dim() {
        return Err(Error::DimensionMismatch { expected: basis.dim(), found: w.dim });
    }
    if w.coords.len() != basis.len() {
        return Err(Error::DimensionMismatch { expected: basis.len(), found: w.coords.len() });
    }
    Ok(DensityOperator { matrix: bloch_matrix(&w.coords, basis) })
}

pub(crate) fn bloch_matrix(coords: &[f64], basis: &GellMannBasis) -> CMatrix {
    let d = basis.dim();
    let mut m = basis.combine(coords);
    for i in 0..d {
        m[(i, i)].re += 1.0 / d as f64;
    }
    m
}

/// Normalization of a pure-state vector: ‖ψ‖² = 1 or ‖ψ‖² = d.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormConvention {
    Unit,
    SqrtD,
}

impl NormConvention {
    pub fn squared_norm(self, dim: usize) -> f64 {
        match self {
            NormConvention::Unit => 1.0,
            NormConvention::SqrtD => dim as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PureStateVector {
    amplitudes: Vec<Complex64>,
    convention: NormConvention,
}

impl PureStateVector {
    /// Validates that ‖ψ‖² matches the convention within 1e-9 (relative).
    pub fn new(amplitudes: Vec<Complex64>, convention: NormConvention) -> Result<Self> {
        let d = amplitudes.len();
        if d < 2 {
            return Err(Error::InvalidDimension(d));
        }
        let expected = convention.squared_norm(d);
        let found: f64 = amplitudes.iter().map(|z| z.norm_sqr()).sum();
        if (found - expected).abs() > 1e-9 * expected {
            return Err(Error::WrongNorm { expected, found });
        }
        Ok(Self { amplitudes, convention })
    }

    /// Rescales an arbitrary non-zero vector to the requested convention.
    pub fn normalized(amplitudes: Vec<Complex64>, convention: NormConvention) -> Result<Self> {
        let d = amplitudes.len();
        if d < 2 {
            return Err(Error::InvalidDimension(d));
        }
        let norm: f64 = amplitudes.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::InvalidInput("cannot normalize a zero vector".into()));
        }
        let scale = convention.squared_norm(d).sqrt() / norm;
        Ok(Self { amplitudes: amplitudes.into_iter().map(|z| z * scale).collect(), convention })
    }

    /// Real-amplitude convenience constructor; rescales like [`Self::normalized`].
    pub fn from_real(values: &[f64], convention: NormConvention) -> Result<Self> {
        Self::normalized(values.iter().map(|&x| Complex64::new(x, 0.0)).collect(), convention)
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn convention(&self) -> NormConvention {
        self.convention
    }

    pub fn with_convention(&self, convention: NormConvention) -> Self {
        Self::normalized(self.amplitudes.clone(), convention).expect("non-zero by construction")
    }
}

/// v_i = ⟨Ψ|σ_i|Ψ⟩ under the vector's stored normalization.
pub fn pure_bloch_coords(psi: &PureStateVector, basis: &GellMannBasis) -> Result<Vec<f64>> {
    if psi.dim() != basis.dim() {
        return Err(Error::DimensionMismatch { expected: basis.dim(), found: psi.dim() });
    }
    Ok(basis.expectations(psi.amplitudes()))
}

/// Smallest eigenvalue.
pub fn mineig(rho: &DensityOperator) -> f64 {
    rho.mineig()
}

/// Smallest eigenvalue of an arbitrary square complex matrix, which must be
/// Hermitian within 1e-12 (relative to its largest entry).
pub fn hermitian_mineig(m: &CMatrix) -> Result<f64> {
    if !m.is_square() || !is_hermitian(m, HERMITIAN_TOL) {
        return Err(Error::InvalidInput("matrix is not Hermitian".into()));
    }
    Ok(min_eigenvalue(&hermitian_part(m)))
}

/// max(0, −mineig ϱ): a lower bound on the Frobenius distance from ϱ to the PSD cone.
pub fn psd_distance_lower_bound(rho: &DensityOperator) -> f64 {
    (-rho.mineig()).max(0.0)
}

pub fn is_hermitian(m: &CMatrix, tol: f64) -> bool {
    if !m.is_square() {
        return false;
    }
    let scale = m.iter().fold(1.0_f64, |acc, z| acc.max(z.norm()));
    let n = m.nrows();
    for i in 0..n {
        for j in i..n {
            if (m[(i, j)] - m[(j, i)].conj()).norm() > tol * scale {
                return false;
            }
        }
    }
    true
}

pub(crate) fn hermitian_part(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()) * Complex64::new(0.5, 0.0)
}

pub(crate) fn sorted_eigenvalues(m: &CMatrix) -> Vec<f64> {
    let mut eig: Vec<f64> = m.clone().symmetric_eigenvalues().iter().copied().collect();
    eig.sort_by(|a, b| a.total_cmp(b));
    eig
}

/// Smallest eigenvalue of a Hermitian matrix; closed form for 2×2.
pub(crate) fn min_eigenvalue(m: &CMatrix) -> f64 {
    if m.nrows() == 2 {
        let a = m[(0, 0)].re;
        let d = m[(1, 1)].re;
        let b = m[(0, 1)];
        let half_gap = (0.25 * (a - d) * (a - d) + b.norm_sqr()).sqrt();
        return 0.5 * (a + d) - half_gap;
    }
    sorted_eigenvalues(m)[0]
}

/// Eigenvector for the smallest eigenvalue of a Hermitian matrix.
pub(crate) fn min_eigenpair(m: &CMatrix) -> (f64, Vec<Complex64>) {
    let eig = m.clone().symmetric_eigen();
    let (idx, val) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, v)| (i, *v))
        .expect("non-empty spectrum");
    (val, eig.eigenvectors.column(idx).iter().copied().collect())
}

pub(crate) fn quadratic_form(m: &CMatrix, psi: &[Complex64]) -> f64 {
    let n = psi.len();
    let mut acc = ZERO;
    for i in 0..n {
        let mut row = ZERO;
        for j in 0..n {
            row += m[(i, j)] * psi[j];
        }
        acc += psi[i].conj() * row;
    }
    acc.re
}

/// Haar-random unit vector in C^d.
pub fn random_pure_state<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<Complex64> {
    let mut v: Vec<Complex64> = (0..dim)
        .map(|_| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
        .collect();
    let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    v.iter_mut().for_each(|z| *z /= norm);
    v
}

/// Random full-rank density operator (Ginibre ensemble).
pub fn random_density_operator<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> DensityOperator {
    let g = CMatrix::from_fn(dim, dim, |_, _| {
        Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
    });
    let m = &g * g.adjoint();
    let t = m.trace().re;
    DensityOperator::new(m * Complex64::new(1.0 / t, 0.0)).expect("Ginibre matrix is a state")
}

/// Random Hermitian unit-trace operator, typically not PSD.
pub fn random_hermitian_unit_trace<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> DensityOperator {
    let basis = GellMannBasis::new(dim).expect("dim >= 2");
    let coords: Vec<f64> = (0..basis.len()).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    DensityOperator { matrix: bloch_matrix(&coords, &basis) }
}
