//! Measurement designs, linear inversion and confidence ellipsoids.
//!
//! Expected outcomes of a design {E_k} are affine in the Bloch coordinates:
//!
//! ```text
//! y_k = Tr(E_k ϱ) = Tr(E_k)/d + Σ_i Q_ki w_i,      Q_ki = Tr(E_k σ_i).
//! ```
//!
//! An outcome ellipsoid (y − ŷ)ᵀ B (y − ŷ) ≤ 1 pulls back to
//! (w − ŵ)ᵀ QᵀBQ (w − ŵ) ≤ 1, whose eigendecomposition QᵀBQ = O D Oᵀ gives the
//! orientation and radii R_i = D_ii^{−1/2} of a [`StateEllipsoid`].

use nalgebra::{DMatrix, DVector};
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ellipsoid::{Orientation, StateEllipsoid};
use crate::error::{Error, Result};
use crate::json::{self, ComplexMatrixJson, RealMatrixJson};
use crate::rng;
use crate::statespace::{is_hermitian, sorted_eigenvalues, CMatrix, DensityOperator, GellMannBasis, HERMITIAN_TOL};

const RANK_TOL: f64 = 1e-10;
const SYMMETRY_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct MeasurementDesign {
    dim: usize,
    operators: Vec<CMatrix>,
    q: DMatrix<f64>,
    offsets: Vec<f64>,
    pinv: DMatrix<f64>,
    basis: GellMannBasis,
}

impl MeasurementDesign {
    /// Validates hermiticity and tomographic completeness.
    pub fn new(dim: usize, operators: Vec<CMatrix>) -> Result<Self> {
        let basis = GellMannBasis::new(dim)?;
        let n = basis.len();
        for op in &operators {
            if op.nrows() != dim || op.ncols() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: op.nrows() });
            }
            if !is_hermitian(op, HERMITIAN_TOL) {
                return Err(Error::InvalidInput("measurement operator is not Hermitian".into()));
            }
        }
        let m = operators.len();
        let mut q = DMatrix::zeros(m, n);
        for (k, op) in operators.iter().enumerate() {
            for (i, c) in basis.coefficients(op).into_iter().enumerate() {
                q[(k, i)] = c;
            }
        }
        let offsets = operators.iter().map(|op| op.trace().re / dim as f64).collect();
        let rank = if m == 0 {
            0
        } else {
            let sv = q.clone().svd(false, false).singular_values;
            let top = sv.max();
            sv.iter().filter(|&&s| s > RANK_TOL * top.max(1.0)).count()
        };
        if m < n || rank < n {
            return Err(Error::IncompleteDesign { rank, required: n });
        }
        let pinv = (q.transpose() * &q)
            .cholesky()
            .ok_or(Error::IncompleteDesign { rank, required: n })?
            .solve(&q.transpose());
        Ok(Self { dim, operators, q, offsets, pinv, basis })
    }

    /// The generators themselves, E_k = σ_k, for which Q = 2·Id.
    pub fn generators(dim: usize) -> Result<Self> {
        let basis = GellMannBasis::new(dim)?;
        Self::new(dim, basis.matrices().to_vec())
    }

    /// Projectors onto the computational basis and onto (|j⟩ ± |k⟩)/√2 and
    /// (|j⟩ ± i|k⟩)/√2; complete and overcomplete, with spectra in [0, 1].
    pub fn projective(dim: usize) -> Result<Self> {
        use num_complex::Complex64;
        let mut ops = Vec::new();
        for j in 0..dim {
            let mut p = CMatrix::zeros(dim, dim);
            p[(j, j)] = Complex64::new(1.0, 0.0);
            ops.push(p);
        }
        for j in 0..dim {
            for k in j + 1..dim {
                for phase in [Complex64::new(1.0, 0.0), Complex64::new(-1.0, 0.0), Complex64::new(0.0, 1.0), Complex64::new(0.0, -1.0)] {
                    let mut v = DVector::<Complex64>::zeros(dim);
                    v[j] = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
                    v[k] = phase * std::f64::consts::FRAC_1_SQRT_2;
                    ops.push(&v * v.adjoint());
                }
            }
        }
        Self::new(dim, ops)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of settings m.
    pub fn len(&self) -> usize {
        self.operators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.operators.is_empty()
    }

    pub fn operators(&self) -> &[CMatrix] {
        &self.operators
    }

    pub fn design_matrix(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }

    pub fn basis(&self) -> &GellMannBasis {
        &self.basis
    }

    /// y_k = Tr(E_k ϱ).
    pub fn forward(&self, rho: &DensityOperator) -> Result<Vec<f64>> {
        if rho.dim() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: rho.dim() });
        }
        let w = DVector::from_vec(self.basis.coefficients(rho.matrix())) * 0.5;
        Ok((&self.q * w).iter().zip(&self.offsets).map(|(y, o)| y + o).collect())
    }

    fn bloch_from_outcomes(&self, y: &[f64]) -> DVector<f64> {
        let centered = DVector::from_iterator(y.len(), y.iter().zip(&self.offsets).map(|(y, o)| y - o));
        &self.pinv * centered
    }
}

/// Least-squares estimate ŵ = (QᵀQ)⁻¹Qᵀ(ŷ − offsets); positivity is not enforced.
pub fn linear_inversion(design: &MeasurementDesign, y_hat: &[f64]) -> Result<DensityOperator> {
    if y_hat.len() != design.len() {
        return Err(Error::DimensionMismatch { expected: design.len(), found: y_hat.len() });
    }
    let w = design.bloch_from_outcomes(y_hat);
    let d = design.dim;
    let m = CMatrix::identity(d, d) * num_complex::Complex64::new(1.0 / d as f64, 0.0) + design.basis.combine(w.as_slice());
    Ok(DensityOperator::from_hermitian_unchecked(m))
}

/// {y : (y − ŷ)ᵀ B (y − ŷ) ≤ 1}.
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeEllipsoid {
    center: Vec<f64>,
    shape: DMatrix<f64>,
}

impl OutcomeEllipsoid {
    pub fn new(center: Vec<f64>, shape: DMatrix<f64>) -> Result<Self> {
        let m = center.len();
        if shape.nrows() != m || shape.ncols() != m {
            return Err(Error::DimensionMismatch { expected: m, found: shape.nrows() });
        }
        let scale = shape.amax().max(1.0);
        if (&shape - shape.transpose()).amax() > SYMMETRY_TOL * scale {
            return Err(Error::InvalidInput("outcome ellipsoid shape is not symmetric".into()));
        }
        let sym = (&shape + shape.transpose()) * 0.5;
        if sym.clone().symmetric_eigenvalues().min() < -SYMMETRY_TOL * scale {
            return Err(Error::InvalidInput("outcome ellipsoid shape is not positive semidefinite".into()));
        }
        Ok(Self { center, shape: sym })
    }

    /// Ellipsoid of Mahalanobis radius `radius` for a Gaussian with covariance `cov`.
    pub fn from_gaussian(center: Vec<f64>, cov: &DMatrix<f64>, radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::InvalidRadius(radius));
        }
        let inv = cov
            .clone()
            .cholesky()
            .ok_or_else(|| Error::InvalidInput("covariance is not positive definite".into()))?
            .inverse();
        Self::new(center, inv / (radius * radius))
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn shape(&self) -> &DMatrix<f64> {
        &self.shape
    }

    /// (y − ŷ)ᵀ B (y − ŷ).
    pub fn quadratic(&self, y: &[f64]) -> f64 {
        let diff = DVector::from_iterator(y.len(), y.iter().zip(&self.center).map(|(a, b)| a - b));
        diff.dot(&(&self.shape * &diff))
    }
}

/// Pulls an outcome ellipsoid back to a state ellipsoid centred at the linear
/// inversion estimate.
pub fn confidence_ellipsoid(design: &MeasurementDesign, oe: &OutcomeEllipsoid) -> Result<StateEllipsoid> {
    if oe.center.len() != design.len() {
        return Err(Error::DimensionMismatch { expected: design.len(), found: oe.center.len() });
    }
    let center = linear_inversion(design, &oe.center)?;
    let b = design.q.transpose() * &oe.shape * &design.q;
    let b = (&b + b.transpose()) * 0.5;
    let eig = b.symmetric_eigen();
    let top = eig.eigenvalues.max();
    if !(top > 0.0) || eig.eigenvalues.min() <= RANK_TOL * top {
        return Err(Error::DegenerateEllipsoid);
    }
    let radii = eig.eigenvalues.iter().map(|l| 1.0 / l.sqrt()).collect();
    StateEllipsoid::new(center, radii, Orientation::Matrix(eig.eigenvectors))
}

/// Simulated two-outcome frequencies and their plug-in Gaussian covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedData {
    pub y_hat: Vec<f64>,
    pub gaussian_cov: RealMatrixJson,
    pub shots_per_setting: u64,
}

/// Samples binomial counts for each effect E_k with success probability Tr(E_k ϱ₀).
pub fn simulate_counts(design: &MeasurementDesign, rho0: &DensityOperator, shots_per_setting: i64, seed: u64) -> Result<SimulatedData> {
    if shots_per_setting <= 0 {
        return Err(Error::InvalidShots(shots_per_setting));
    }
    if !rho0.is_psd() {
        return Err(Error::InvalidInput("true state is not positive semidefinite".into()));
    }
    for (index, op) in design.operators.iter().enumerate() {
        let eig = sorted_eigenvalues(op);
        if eig[0] < -1e-12 || eig[eig.len() - 1] > 1.0 + 1e-12 {
            return Err(Error::InvalidEffect { index });
        }
    }
    let probs = design.forward(rho0)?;
    let shots = shots_per_setting as u64;
    let y_hat: Vec<f64> = probs
        .par_iter()
        .enumerate()
        .map(|(k, &p)| {
            let mut r = rng::stream(seed, k as u64);
            let dist = Binomial::new(shots, p.clamp(0.0, 1.0)).expect("probability in [0, 1]");
            dist.sample(&mut r) as f64 / shots as f64
        })
        .collect();
    let m = y_hat.len();
    let cov = DMatrix::from_fn(m, m, |i, j| if i == j { y_hat[i] * (1.0 - y_hat[i]) / shots as f64 } else { 0.0 });
    Ok(SimulatedData { y_hat, gaussian_cov: json::real_matrix_to_json(&cov), shots_per_setting: shots })
}

#[derive(Serialize, Deserialize)]
struct DesignJson {
    dim: usize,
    operators: Vec<ComplexMatrixJson>,
}

impl Serialize for MeasurementDesign {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        DesignJson { dim: self.dim, operators: self.operators.iter().map(json::complex_matrix_to_json).collect() }
            .serialize(s)
    }
}

impl<'de> Deserialize<'de> for MeasurementDesign {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let raw = DesignJson::deserialize(d)?;
        let ops = raw
            .operators
            .iter()
            .map(json::complex_matrix_from_json)
            .collect::<Result<Vec<_>>>()
            .map_err(D::Error::custom)?;
        MeasurementDesign::new(raw.dim, ops).map_err(D::Error::custom)
    }
}

#[derive(Serialize, Deserialize)]
struct OutcomeEllipsoidJson {
    center: Vec<f64>,
    shape: RealMatrixJson,
}

impl Serialize for OutcomeEllipsoid {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        OutcomeEllipsoidJson { center: self.center.clone(), shape: json::real_matrix_to_json(&self.shape) }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for OutcomeEllipsoid {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let raw = OutcomeEllipsoidJson::deserialize(d)?;
        let shape = json::real_matrix_from_json(&raw.shape).map_err(D::Error::custom)?;
        OutcomeEllipsoid::new(raw.center, shape).map_err(D::Error::custom)
    }
}
