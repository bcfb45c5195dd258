//! Ellipsoids in the space of Hermitian unit-trace matrices and the question
//! whether they lie inside the PSD states.
//!
//! An ellipsoid is
//!
//! ```text
//! E = { ϱ̂ + Σ_i R_i u_i σ'_i : ‖u‖ ≤ 1 },     σ'_i = Σ_j O_ji σ_j.
//! ```
//!
//! It is contained in the PSD states iff for every unit vector Ψ
//!
//! ```text
//! ⟨Ψ|ϱ̂|Ψ⟩ − √(Σ_i R_i² ⟨Ψ|σ'_i|Ψ⟩²) ≥ 0,
//! ```
//!
//! the worst u for a given Ψ being u = −R∘v' / ‖R∘v'‖ with v'_i = ⟨Ψ|σ'_i|Ψ⟩.
//! Deciding this is hard in general; [`check_containment`] searches for the
//! minimum numerically and reports a verified witness when it finds a
//! violation.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::json::{self, RealMatrixJson};
use crate::rng;
use crate::statespace::{
    min_eigenpair, min_eigenvalue, quadratic_form, CMatrix, DensityOperator, GellMannBasis,
    NormConvention, PureStateVector,
};

/// Slack on ‖u‖ ≤ 1 for membership tests.
pub const MEMBERSHIP_TOL: f64 = 1e-9;

/// Default threshold above which a minimum certifies containment.
pub const DEFAULT_CERTIFY_MARGIN: f64 = 1e-7;

const ORTHOGONALITY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub enum Orientation {
    Identity,
    Matrix(DMatrix<f64>),
}

impl Orientation {
    pub fn is_identity(&self) -> bool {
        matches!(self, Orientation::Identity)
    }

    /// O x
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Orientation::Identity => x.to_vec(),
            Orientation::Matrix(o) => (o * DVector::from_column_slice(x)).iter().copied().collect(),
        }
    }

    /// Oᵀ x
    fn apply_transpose(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Orientation::Identity => x.to_vec(),
            Orientation::Matrix(o) => (o.tr_mul(&DVector::from_column_slice(x))).iter().copied().collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct StateEllipsoid {
    center: DensityOperator,
    radii: Vec<f64>,
    orientation: Orientation,
    basis: GellMannBasis,
}

impl PartialEq for StateEllipsoid {
    fn eq(&self, other: &Self) -> bool {
        self.center == other.center && self.radii == other.radii && self.orientation == other.orientation
    }
}

impl StateEllipsoid {
    pub fn new(center: DensityOperator, radii: Vec<f64>, orientation: Orientation) -> Result<Self> {
        let basis = GellMannBasis::new(center.dim())?;
        let n = basis.len();
        if radii.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: radii.len() });
        }
        if let Some(&r) = radii.iter().find(|r| !(**r > 0.0) || !r.is_finite()) {
            return Err(Error::InvalidRadius(r));
        }
        if let Orientation::Matrix(o) = &orientation {
            if o.nrows() != n || o.ncols() != n {
                return Err(Error::DimensionMismatch { expected: n, found: o.nrows() });
            }
            let defect = (o.transpose() * o - DMatrix::<f64>::identity(n, n)).amax();
            if defect > ORTHOGONALITY_TOL {
                return Err(Error::InvalidInput(format!("orientation is not orthogonal (defect {defect:e})")));
            }
        }
        Ok(Self { center, radii, orientation, basis })
    }

    /// Ball of radius `radius` around `center`.
    pub fn isotropic(center: DensityOperator, radius: f64) -> Result<Self> {
        let n = center.dim() * center.dim() - 1;
        Self::new(center, vec![radius; n], Orientation::Identity)
    }

    pub fn dim(&self) -> usize {
        self.center.dim()
    }

    /// Number of ellipsoid axes, d² − 1.
    pub fn n_params(&self) -> usize {
        self.radii.len()
    }

    pub fn center(&self) -> &DensityOperator {
        &self.center
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    pub fn orientation(&self) -> &Orientation {
        &self.orientation
    }

    pub fn basis(&self) -> &GellMannBasis {
        &self.basis
    }

    /// Coefficients w of ϱ − ϱ̂ = Σ_j w_j σ_j for ellipsoid coordinates u.
    fn displacement(&self, u: &[f64]) -> Vec<f64> {
        let scaled: Vec<f64> = u.iter().zip(&self.radii).map(|(u, r)| u * r).collect();
        self.orientation.apply(&scaled)
    }

    fn point_unchecked(&self, u: &[f64]) -> CMatrix {
        self.center.matrix() + self.basis.combine(&self.displacement(u))
    }

    /// ϱ̂ + Σ_i R_i u_i σ'_i.
    pub fn point_at(&self, u: &[f64]) -> Result<DensityOperator> {
        if u.len() != self.n_params() {
            return Err(Error::DimensionMismatch { expected: self.n_params(), found: u.len() });
        }
        let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(norm <= 1.0 + MEMBERSHIP_TOL) {
            return Err(Error::OutOfEllipsoid(norm));
        }
        Ok(DensityOperator::from_hermitian_unchecked(self.point_unchecked(u)))
    }

    /// Ellipsoid coordinates u of an arbitrary Hermitian unit-trace operator.
    pub fn coordinates(&self, rho: &DensityOperator) -> Result<Vec<f64>> {
        if rho.dim() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: rho.dim() });
        }
        let diff = rho.matrix() - self.center.matrix();
        let w: Vec<f64> = self.basis.coefficients(&diff).into_iter().map(|c| 0.5 * c).collect();
        let rotated = self.orientation.apply_transpose(&w);
        Ok(rotated.iter().zip(&self.radii).map(|(x, r)| x / r).collect())
    }

    pub fn contains(&self, rho: &DensityOperator) -> Result<bool> {
        let u = self.coordinates(rho)?;
        Ok(u.iter().map(|x| x * x).sum::<f64>().sqrt() <= 1.0 + MEMBERSHIP_TOL)
    }

    /// v' = Oᵀ v for a unit vector, and R∘v'.
    fn weighted_coords(&self, psi: &[Complex64]) -> Vec<f64> {
        let v = self.basis.expectations(psi);
        let vp = self.orientation.apply_transpose(&v);
        vp.iter().zip(&self.radii).map(|(x, r)| x * r).collect()
    }

    /// Functional value for a unit vector.
    fn functional_unit(&self, psi: &[Complex64]) -> f64 {
        let rv = self.weighted_coords(psi);
        quadratic_form(self.center.matrix(), psi) - rv.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Value and Euclidean gradient 2(ϱ̂ − M)ψ for a unit vector.
    fn functional_and_gradient(&self, psi: &[Complex64]) -> (f64, Vec<Complex64>) {
        let rv = self.weighted_coords(psi);
        let s = rv.iter().map(|x| x * x).sum::<f64>().sqrt();
        let mut a = self.center.matrix().clone();
        if s > 0.0 {
            let r2v: Vec<f64> = rv.iter().zip(&self.radii).map(|(x, r)| x * r / s).collect();
            a -= self.basis.combine(&self.orientation.apply(&r2v));
        }
        let f = quadratic_form(self.center.matrix(), psi) - s;
        let psi_v = DVector::from_column_slice(psi);
        let g = (a * psi_v) * Complex64::new(2.0, 0.0);
        (f, g.iter().copied().collect())
    }

    /// ⟨Ψ|ϱ̂|Ψ⟩ − √(Σ R_i² ⟨Ψ|σ'_i|Ψ⟩²) with Ψ rescaled to unit norm.
    pub fn positivity_functional(&self, psi: &PureStateVector) -> Result<f64> {
        if psi.dim() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: psi.dim() });
        }
        Ok(self.functional_unit(&unit(psi.amplitudes())))
    }

    /// The u on the unit sphere minimizing ⟨Ψ|ϱ(u)|Ψ⟩; zero when Ψ sees no
    /// direction of the ellipsoid.
    pub fn minimizing_u(&self, psi: &PureStateVector) -> Result<Vec<f64>> {
        if psi.dim() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: psi.dim() });
        }
        Ok(self.minimizing_u_unit(&unit(psi.amplitudes())))
    }

    fn minimizing_u_unit(&self, psi: &[Complex64]) -> Vec<f64> {
        let rv = self.weighted_coords(psi);
        let s = rv.iter().map(|x| x * x).sum::<f64>().sqrt();
        if s == 0.0 {
            return vec![0.0; rv.len()];
        }
        rv.iter().map(|x| -x / s).collect()
    }

    /// Hilbert-Schmidt volume of the ellipsoid.
    pub fn hs_volume(&self) -> f64 {
        let n = self.n_params() as f64;
        let ln = 0.5 * n * (std::f64::consts::PI.ln() + std::f64::consts::LN_2) - libm::lgamma(0.5 * n + 1.0)
            + self.radii.iter().map(|r| r.ln()).sum::<f64>();
        ln.exp()
    }

    /// Whether the search may stay real: real symmetric center, identity
    /// orientation, one radius on the X-block and one (not larger) elsewhere.
    pub fn admits_real_restriction(&self) -> bool {
        if !self.center.is_real(1e-12) || !self.orientation.is_identity() {
            return false;
        }
        let x = self.basis.x_block();
        let r1 = self.radii[x.start];
        let r2 = self.radii[x.end];
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs());
        self.radii[x.clone()].iter().all(|&r| close(r, r1))
            && self.radii[x.end..].iter().all(|&r| close(r, r2))
            && r1 >= r2 * (1.0 - 1e-12)
    }
}

fn unit(psi: &[Complex64]) -> Vec<Complex64> {
    let norm = psi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    psi.iter().map(|z| z / norm).collect()
}

/// √(d/(2(d−1))) · mineig ϱ̂, the largest ball around ϱ̂ inside the PSD states.
pub fn sphere_threshold(center: &DensityOperator) -> f64 {
    let d = center.dim() as f64;
    (d / (2.0 * (d - 1.0))).sqrt() * center.mineig()
}

/// Whether the ball of radius R around `center` lies in the PSD states.
pub fn sphere_contained_in_psd(center: &DensityOperator, radius: f64) -> Result<bool> {
    if !(radius > 0.0) {
        return Err(Error::InvalidRadius(radius));
    }
    Ok(radius <= sphere_threshold(center))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ContainmentStatus {
    ContainedCertified,
    Violated,
    Undecided,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContainmentOptions {
    /// Random starts in addition to the structured ones.
    pub restarts: usize,
    /// Grid resolution per angle for d = 2, 3.
    pub grid_depth: usize,
    pub certify_margin: f64,
    pub restrict_real: bool,
    pub seed: u64,
}

impl Default for ContainmentOptions {
    fn default() -> Self {
        Self { restarts: 32, grid_depth: 24, certify_margin: DEFAULT_CERTIFY_MARGIN, restrict_real: false, seed: 0 }
    }
}

/// A state of the ellipsoid with a negative expectation value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub psi: PureStateVector,
    pub state: DensityOperator,
    pub u: Vec<f64>,
    pub u_norm: f64,
    /// ⟨Ψ|ϱ|Ψ⟩ for the unit-norm Ψ.
    pub expectation: f64,
    pub mineig: f64,
    /// ‖u‖ ≤ 1 (within tolerance).
    pub in_closed_ball: bool,
    /// ‖u‖ = 1 (within tolerance).
    pub on_sphere: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContainmentVerdict {
    pub status: ContainmentStatus,
    /// Smallest functional value found.
    pub margin: f64,
    pub certify_margin: f64,
    pub witness: Option<Witness>,
    pub restrict_real: bool,
    pub starts: usize,
}

/// Searches for the minimum of the positivity functional over unit Ψ.
pub fn check_containment(e: &StateEllipsoid, opts: &ContainmentOptions) -> Result<ContainmentVerdict> {
    if opts.restrict_real && !e.admits_real_restriction() {
        return Err(Error::InvalidOption(
            "restrict_real needs a real symmetric center, identity orientation and block radii R_X >= R_YZ".into(),
        ));
    }
    if !(opts.certify_margin >= 0.0) {
        return Err(Error::InvalidOption(format!("certify_margin {} must be non-negative", opts.certify_margin)));
    }
    let real = opts.restrict_real;
    let starts = initial_points(e, opts);
    let results: Vec<(f64, Vec<Complex64>)> = starts.par_iter().map(|s| optimize(e, s.clone(), real)).collect();
    let mut best = 0;
    for (i, r) in results.iter().enumerate() {
        if r.0 < results[best].0 {
            best = i;
        }
    }
    let (margin, psi) = results[best].clone();

    let mut witness = None;
    if margin < 0.0 {
        witness = build_witness(e, &psi)?;
    }
    let status = if witness.is_some() {
        ContainmentStatus::Violated
    } else if margin > opts.certify_margin {
        ContainmentStatus::ContainedCertified
    } else {
        ContainmentStatus::Undecided
    };
    Ok(ContainmentVerdict {
        status,
        margin,
        certify_margin: opts.certify_margin,
        witness,
        restrict_real: real,
        starts: starts.len(),
    })
}

/// Re-verifies a candidate independently of the optimizer: the state at the
/// minimizing u must lie in the ellipsoid and have a negative eigenvalue.
fn build_witness(e: &StateEllipsoid, psi: &[Complex64]) -> Result<Option<Witness>> {
    let u = e.minimizing_u_unit(psi);
    let u_norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    if u_norm > 1.0 + MEMBERSHIP_TOL {
        return Ok(None);
    }
    let state = e.point_at(&u)?;
    let (mineig, vec) = min_eigenpair(state.matrix());
    if !(mineig < 0.0) {
        return Ok(None);
    }
    let psi = PureStateVector::normalized(vec, NormConvention::Unit)?;
    let expectation = quadratic_form(state.matrix(), psi.amplitudes());
    if !(expectation < 0.0) {
        return Ok(None);
    }
    Ok(Some(Witness {
        psi,
        state,
        u,
        u_norm,
        expectation,
        mineig,
        in_closed_ball: u_norm <= 1.0 + MEMBERSHIP_TOL,
        on_sphere: (u_norm - 1.0).abs() <= MEMBERSHIP_TOL,
    }))
}

fn real_vec(x: &[f64]) -> Vec<Complex64> {
    unit(&x.iter().map(|&v| Complex64::new(v, 0.0)).collect::<Vec<_>>())
}

fn initial_points(e: &StateEllipsoid, opts: &ContainmentOptions) -> Vec<Vec<Complex64>> {
    let d = e.dim();
    let mut out = Vec::new();
    for j in 0..d {
        let mut x = vec![0.0; d];
        x[j] = 1.0;
        out.push(real_vec(&x));
    }
    if d <= 13 {
        for mask in 0..(1u64 << (d - 1)) {
            let x: Vec<f64> = (0..d).map(|j| if j > 0 && mask >> (j - 1) & 1 == 1 { -1.0 } else { 1.0 }).collect();
            out.push(real_vec(&x));
        }
    } else {
        let mut r = rng::stream(opts.seed, u64::MAX);
        for _ in 0..512 {
            let x: Vec<f64> = (0..d).map(|j| if j > 0 && r.random::<bool>() { -1.0 } else { 1.0 }).collect();
            out.push(real_vec(&x));
        }
    }
    for j in 0..d {
        for k in j + 1..d {
            for phase in [Complex64::new(1.0, 0.0), Complex64::new(-1.0, 0.0), Complex64::new(0.0, 1.0), Complex64::new(0.0, -1.0)] {
                if opts.restrict_real && phase.im != 0.0 {
                    continue;
                }
                let mut v = vec![Complex64::new(0.0, 0.0); d];
                v[j] = Complex64::new(1.0, 0.0);
                v[k] = phase;
                out.push(unit(&v));
            }
        }
    }
    for i in 0..opts.restarts {
        let mut r = rng::stream(opts.seed, i as u64);
        let v: Vec<Complex64> = (0..d)
            .map(|_| {
                let re: f64 = r.sample(StandardNormal);
                let im: f64 = if opts.restrict_real { 0.0 } else { r.sample(StandardNormal) };
                Complex64::new(re, im)
            })
            .collect();
        out.push(unit(&v));
    }
    if let Some(g) = grid_best(e, opts) {
        out.push(g);
    }
    out
}

/// Best point of a coarse angular grid over unit vectors for d = 2, 3.
fn grid_best(e: &StateEllipsoid, opts: &ContainmentOptions) -> Option<Vec<Complex64>> {
    let d = e.dim();
    let depth = opts.grid_depth;
    if depth == 0 || d > 3 {
        return None;
    }
    let pi = std::f64::consts::PI;
    let mut best: Option<(f64, Vec<Complex64>)> = None;
    let mut consider = |v: Vec<Complex64>| {
        let f = e.functional_unit(&v);
        if best.as_ref().is_none_or(|b| f < b.0) {
            best = Some((f, v));
        }
    };
    let polar = |z: f64, phase: f64| Complex64::from_polar(z, phase);
    if d == 2 {
        let phases: Vec<f64> = if opts.restrict_real {
            vec![0.0, pi]
        } else {
            (0..2 * depth).map(|k| pi * k as f64 / depth as f64).collect()
        };
        for i in 0..=depth {
            let t = 0.5 * pi * i as f64 / depth as f64;
            for &p in &phases {
                consider(vec![Complex64::new(t.cos(), 0.0), polar(t.sin(), p)]);
            }
        }
    } else {
        let depth = depth.min(12);
        let phases: Vec<f64> = if opts.restrict_real {
            vec![0.0, pi]
        } else {
            (0..2 * depth).map(|k| pi * k as f64 / depth as f64).collect()
        };
        for i in 0..=depth {
            let t = 0.5 * pi * i as f64 / depth as f64;
            for j in 0..=depth {
                let s = 0.5 * pi * j as f64 / depth as f64;
                for &p1 in &phases {
                    for &p2 in &phases {
                        consider(vec![
                            Complex64::new(t.cos(), 0.0),
                            polar(t.sin() * s.cos(), p1),
                            polar(t.sin() * s.sin(), p2),
                        ]);
                    }
                }
            }
        }
    }
    best.map(|b| b.1)
}

const GRADIENT_STEPS: usize = 200;
const POLISH_STEPS: usize = 500;

/// Projected gradient descent on the unit sphere followed by alternating
/// minimization over (u, Ψ). Returns the final value and unit vector.
fn optimize(e: &StateEllipsoid, mut psi: Vec<Complex64>, real: bool) -> (f64, Vec<Complex64>) {
    let mut step = 0.5;
    let (mut f, _) = e.functional_and_gradient(&psi);
    for _ in 0..GRADIENT_STEPS {
        let (fv, mut g) = e.functional_and_gradient(&psi);
        f = fv;
        let radial: f64 = psi.iter().zip(&g).map(|(p, g)| (p.conj() * g).re).sum();
        for (gi, pi) in g.iter_mut().zip(&psi) {
            *gi -= pi * radial;
            if real {
                gi.im = 0.0;
            }
        }
        let gnorm2: f64 = g.iter().map(|z| z.norm_sqr()).sum();
        if gnorm2 < 1e-24 {
            break;
        }
        let mut t = step;
        let mut accepted = None;
        while t > 1e-14 {
            let trial = unit(&psi.iter().zip(&g).map(|(p, g)| p - g * t).collect::<Vec<_>>());
            let ft = e.functional_unit(&trial);
            if ft <= f - 1e-4 * t * gnorm2 {
                accepted = Some((ft, trial));
                break;
            }
            t *= 0.5;
        }
        match accepted {
            Some((ft, trial)) => {
                let gain = f - ft;
                psi = trial;
                f = ft;
                step = (2.0 * t).min(4.0);
                if gain < 1e-15 {
                    break;
                }
            }
            None => break,
        }
    }
    for _ in 0..POLISH_STEPS {
        let u = e.minimizing_u_unit(&psi);
        let m = e.point_unchecked(&u);
        let next = if real { real_min_eigvec(&m) } else { min_eigenpair(&m).1 };
        let fn_ = e.functional_unit(&next);
        if !(fn_ < f - 1e-15) {
            break;
        }
        psi = next;
        f = fn_;
    }
    (f, psi)
}

fn real_min_eigvec(m: &CMatrix) -> Vec<Complex64> {
    let re = DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)].re);
    let eig = re.symmetric_eigen();
    let idx = eig.eigenvalues.imin();
    eig.eigenvectors.column(idx).iter().map(|&x| Complex64::new(x, 0.0)).collect()
}

/// Monte Carlo estimate of the Hilbert-Schmidt volume of E ∩ S⁺.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VolumeEstimate {
    pub samples: usize,
    pub psd_fraction: f64,
    /// Binomial standard error of `psd_fraction`.
    pub stderr: f64,
    pub ellipsoid_volume: f64,
    pub volume_estimate: f64,
    pub volume_stderr: f64,
}

const VOLUME_CHUNK: usize = 4096;

/// Uniform samples from the unit ball mapped into the ellipsoid.
pub fn truncate_and_sample_volume(e: &StateEllipsoid, n: usize, seed: u64) -> Result<VolumeEstimate> {
    if n == 0 {
        return Err(Error::InvalidArgument("sample count must be at least 1".into()));
    }
    let dim = e.n_params();
    let chunks = n.div_ceil(VOLUME_CHUNK);
    let hits: usize = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut r = rng::stream(seed, c as u64);
            let count = VOLUME_CHUNK.min(n - c * VOLUME_CHUNK);
            let mut hits = 0;
            for _ in 0..count {
                let mut u: Vec<f64> = (0..dim).map(|_| r.sample(StandardNormal)).collect();
                let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
                let radius = r.random::<f64>().powf(1.0 / dim as f64);
                u.iter_mut().for_each(|x| *x *= radius / norm);
                let m = e.point_unchecked(&u);
                let scale = m.iter().fold(0.0_f64, |acc, z| acc.max(z.norm()));
                if min_eigenvalue(&m) >= -1e-10 * (1.0 + scale) {
                    hits += 1;
                }
            }
            hits
        })
        .collect::<Vec<_>>()
        .into_iter()
        .sum();
    let p = hits as f64 / n as f64;
    let stderr = (p * (1.0 - p) / n as f64).sqrt();
    let vol = e.hs_volume();
    Ok(VolumeEstimate {
        samples: n,
        psd_fraction: p,
        stderr,
        ellipsoid_volume: vol,
        volume_estimate: p * vol,
        volume_stderr: stderr * vol,
    })
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum OrientationJson {
    Named(String),
    Matrix(RealMatrixJson),
}

#[derive(Serialize, Deserialize)]
struct StateEllipsoidJson {
    center: DensityOperator,
    radii: Vec<f64>,
    orientation: OrientationJson,
}

impl Serialize for StateEllipsoid {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let orientation = match &self.orientation {
            Orientation::Identity => OrientationJson::Named("identity".into()),
            Orientation::Matrix(o) => OrientationJson::Matrix(json::real_matrix_to_json(o)),
        };
        StateEllipsoidJson { center: self.center.clone(), radii: self.radii.clone(), orientation }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for StateEllipsoid {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let raw = StateEllipsoidJson::deserialize(d)?;
        let orientation = match raw.orientation {
            OrientationJson::Named(s) if s == "identity" => Orientation::Identity,
            OrientationJson::Named(s) => return Err(D::Error::custom(format!("unknown orientation {s:?}"))),
            OrientationJson::Matrix(m) => Orientation::Matrix(json::real_matrix_from_json(&m).map_err(D::Error::custom)?),
        };
        StateEllipsoid::new(raw.center, raw.radii, orientation).map_err(D::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::statespace::random_pure_state;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mixed(d: usize) -> DensityOperator {
        DensityOperator::maximally_mixed(d).unwrap()
    }

    #[test]
    fn point_at_center_and_axis() {
        let e = StateEllipsoid::isotropic(mixed(2), 0.3).unwrap();
        assert_eq!(e.point_at(&[0.0; 3]).unwrap(), mixed(2));
        let p = e.point_at(&[0.0, 0.0, 1.0]).unwrap();
        assert!((p.matrix()[(0, 0)].re - 0.8).abs() < 1e-15);
        assert!((p.matrix()[(1, 1)].re - 0.2).abs() < 1e-15);
        assert!(matches!(e.point_at(&[0.0, 1.0, 1.0]), Err(Error::OutOfEllipsoid(_))));
    }

    #[test]
    fn coordinates_invert_point_at() {
        let mut r = ChaCha8Rng::seed_from_u64(3);
        let n = 8;
        // random orthogonal matrix from a QR factorization
        let g = DMatrix::<f64>::from_fn(n, n, |_, _| r.sample(StandardNormal));
        let q = g.qr().q();
        let radii: Vec<f64> = (0..n).map(|i| 0.05 + 0.01 * i as f64).collect();
        let e = StateEllipsoid::new(mixed(3), radii, Orientation::Matrix(q)).unwrap();
        for _ in 0..20 {
            let mut u: Vec<f64> = (0..n).map(|_| r.sample(StandardNormal)).collect();
            let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
            u.iter_mut().for_each(|x| *x *= 0.9 / norm);
            let rho = e.point_at(&u).unwrap();
            assert!((rho.matrix().trace().re - 1.0).abs() < 1e-14);
            let back = e.coordinates(&rho).unwrap();
            for (a, b) in u.iter().zip(&back) {
                assert!((a - b).abs() < 1e-12);
            }
            assert!(e.contains(&rho).unwrap());
        }
    }

    #[test]
    fn rejects_bad_construction() {
        assert!(matches!(StateEllipsoid::isotropic(mixed(2), 0.0), Err(Error::InvalidRadius(_))));
        assert!(matches!(
            StateEllipsoid::new(mixed(2), vec![0.1; 4], Orientation::Identity),
            Err(Error::DimensionMismatch { .. })
        ));
        let skew = DMatrix::from_row_slice(3, 3, &[1.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        assert!(StateEllipsoid::new(mixed(2), vec![0.1; 3], Orientation::Matrix(skew)).is_err());
    }

    #[test]
    fn sphere_thresholds() {
        assert!(sphere_contained_in_psd(&mixed(2), 0.5).unwrap());
        assert!(!sphere_contained_in_psd(&mixed(2), 0.5 + 1e-6).unwrap());
        assert!((sphere_threshold(&mixed(3)) - (1.0f64 / 12.0).sqrt()).abs() < 1e-12);
        assert!(matches!(sphere_contained_in_psd(&mixed(2), -1.0), Err(Error::InvalidRadius(_))));
    }

    #[test]
    fn functional_isotropic_closed_form() {
        let mut r = ChaCha8Rng::seed_from_u64(5);
        for d in 2..5 {
            let radius = 0.13;
            let e = StateEllipsoid::isotropic(mixed(d), radius).unwrap();
            let psi = PureStateVector::normalized(random_pure_state(d, &mut r), NormConvention::SqrtD).unwrap();
            let df = d as f64;
            let expected = 1.0 / df - radius * (2.0 * (df - 1.0) / df).sqrt();
            assert!((e.positivity_functional(&psi).unwrap() - expected).abs() < 1e-13);
        }
        let e = StateEllipsoid::isotropic(mixed(2), 0.5).unwrap();
        let psi = PureStateVector::from_real(&[1.0, 0.0], NormConvention::Unit).unwrap();
        assert!(e.positivity_functional(&psi).unwrap().abs() < 1e-15);
    }

    #[test]
    fn functional_matches_expectation_at_minimizing_u() {
        let mut r = ChaCha8Rng::seed_from_u64(9);
        for d in 2..5 {
            let n = d * d - 1;
            let radii: Vec<f64> = (0..n).map(|_| 0.02 + 0.1 * r.random::<f64>()).collect();
            let center = crate::statespace::random_density_operator(d, &mut r);
            let e = StateEllipsoid::new(center, radii, Orientation::Identity).unwrap();
            for _ in 0..10 {
                let psi = PureStateVector::normalized(random_pure_state(d, &mut r), NormConvention::Unit).unwrap();
                let u = e.minimizing_u(&psi).unwrap();
                let rho = e.point_at(&u).unwrap();
                let lhs = e.positivity_functional(&psi).unwrap();
                assert!((lhs - rho.expectation(psi.amplitudes())).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut r = ChaCha8Rng::seed_from_u64(11);
        let d = 3;
        let radii: Vec<f64> = (0..8).map(|_| 0.05 + 0.1 * r.random::<f64>()).collect();
        let e = StateEllipsoid::new(crate::statespace::random_density_operator(d, &mut r), radii, Orientation::Identity).unwrap();
        let psi = random_pure_state(d, &mut r);
        // derivative of the unnormalized extension along a tangent direction
        let (_, g) = e.functional_and_gradient(&psi);
        let dir = random_pure_state(d, &mut r);
        let h = 1e-6;
        let plus: Vec<Complex64> = psi.iter().zip(&dir).map(|(p, q)| p + q * h).collect();
        let minus: Vec<Complex64> = psi.iter().zip(&dir).map(|(p, q)| p - q * h).collect();
        let ext = |v: &[Complex64]| {
            let rv = e.weighted_coords(v);
            quadratic_form(e.center().matrix(), v) - rv.iter().map(|x| x * x).sum::<f64>().sqrt()
        };
        let fd = (ext(&plus) - ext(&minus)) / (2.0 * h);
        let analytic: f64 = g.iter().zip(&dir).map(|(g, q)| (g.conj() * q).re).sum();
        assert!((fd - analytic).abs() < 1e-7, "{fd} vs {analytic}");
    }

    #[test]
    fn isotropic_decisions() {
        let opts = ContainmentOptions::default();
        let v = check_containment(&StateEllipsoid::isotropic(mixed(2), 0.4).unwrap(), &opts).unwrap();
        assert_eq!(v.status, ContainmentStatus::ContainedCertified);
        let v = check_containment(&StateEllipsoid::isotropic(mixed(2), 0.6).unwrap(), &opts).unwrap();
        assert_eq!(v.status, ContainmentStatus::Violated);
        let w = v.witness.unwrap();
        assert!(w.mineig < 0.0 && w.in_closed_ball && w.on_sphere);
    }

    #[test]
    fn restrict_real_requires_hypotheses() {
        let e = StateEllipsoid::new(mixed(2), vec![0.1, 0.2, 0.1], Orientation::Identity).unwrap();
        let opts = ContainmentOptions { restrict_real: true, ..Default::default() };
        assert!(matches!(check_containment(&e, &opts), Err(Error::InvalidOption(_))));
    }

    #[test]
    fn verdict_is_deterministic() {
        let mut r = ChaCha8Rng::seed_from_u64(2);
        let center = crate::statespace::random_density_operator(3, &mut r);
        let e = StateEllipsoid::isotropic(center, 0.1).unwrap();
        let opts = ContainmentOptions { seed: 17, ..Default::default() };
        let a = check_containment(&e, &opts).unwrap();
        let b = check_containment(&e, &opts).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn volume_of_bloch_ball_fraction() {
        let e = StateEllipsoid::isotropic(mixed(2), 1.0).unwrap();
        let v = truncate_and_sample_volume(&e, 200_000, 1).unwrap();
        assert!((v.psd_fraction - 0.125).abs() < 3.0 * v.stderr, "{v:?}");
        let inside = StateEllipsoid::isotropic(mixed(2), 0.3).unwrap();
        assert_eq!(truncate_and_sample_volume(&inside, 10_000, 1).unwrap().psd_fraction, 1.0);
        assert!(truncate_and_sample_volume(&inside, 0, 1).is_err());
        // Bloch ball of radius 1/2 in HS coordinates √2·w has volume 4π/3·(1/√2)³
        let ball = 4.0 / 3.0 * std::f64::consts::PI * 0.5f64.sqrt().powi(3);
        assert!((StateEllipsoid::isotropic(mixed(2), 0.5).unwrap().hs_volume() - ball).abs() < 1e-12);
    }

    #[test]
    fn json_round_trip() {
        let e = StateEllipsoid::isotropic(mixed(2), 0.25).unwrap();
        let text = serde_json::to_string(&e).unwrap();
        assert!(text.contains("\"orientation\":\"identity\""));
        let back: StateEllipsoid = serde_json::from_str(&text).unwrap();
        assert_eq!(back, e);
        let rot = StateEllipsoid::new(mixed(2), vec![0.1, 0.2, 0.3], Orientation::Matrix(DMatrix::identity(3, 3))).unwrap();
        let back: StateEllipsoid = serde_json::from_str(&serde_json::to_string(&rot).unwrap()).unwrap();
        assert_eq!(back, rot);
    }
}
