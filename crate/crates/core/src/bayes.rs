//! Gaussian posteriors truncated to the PSD states.
//!
//! Posteriors live in the Hilbert-Schmidt orthonormal coordinates
//! x_i = Tr(ϱ σ_i)/√2, in which the flat HS measure is Lebesgue measure and
//! ‖x − x'‖ is the Frobenius distance. A Gaussian with mean θ and covariance Σ
//! restricted to S⁺ has density C·π_{θ,Σ}, and its minimum-volume credible
//! region at level α is E(r⁺_α) ∩ S⁺, where E(r) is the Mahalanobis ball of
//! radius r. Whenever E(r_{α/C}) ⊂ S⁺ the truncated radius equals the
//! unconstrained radius at level α/C; otherwise it is strictly larger.
//!
//! C and r⁺ are estimated by Monte Carlo: Gaussian samples are drawn in
//! chunks with one RNG stream per chunk, PSD ones are kept, and r⁺ is the
//! empirical α-quantile of their Mahalanobis distances.

use nalgebra::{Cholesky, DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ellipsoid::StateEllipsoid;
use crate::error::{Error, Result};
use crate::hardness::{self, BalancedSumEncoding, BalancedSumInstance};
use crate::json::{self, RealMatrixJson};
use crate::rng;
use crate::specialfn::{chi_density, mvcr_radius, reg_inc_gamma, series_partial, series_to_accuracy};
use crate::statespace::{min_eigenvalue, CMatrix, DensityOperator, GellMannBasis};

/// Samples per RNG stream.
pub const SAMPLE_CHUNK: usize = 65_536;
pub const DEFAULT_SAMPLES: usize = 1_000_000;
pub const BOOTSTRAP_RESAMPLES: usize = 200;
/// Standard errors required to call a difference resolved.
pub const Z_SCORE: f64 = 3.0;
/// Fewest accepted samples for a quantile estimate.
pub const MIN_ACCEPTED: usize = 100;
/// Accuracy used for unconstrained radii.
const RADIUS_ACCURACY: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct GaussianPosterior {
    mean: DensityOperator,
    cov: DMatrix<f64>,
    chol: DMatrix<f64>,
    mean_coords: DVector<f64>,
    basis: GellMannBasis,
}

impl PartialEq for GaussianPosterior {
    fn eq(&self, other: &Self) -> bool {
        self.mean == other.mean && self.cov == other.cov
    }
}

impl GaussianPosterior {
    pub fn new(mean: DensityOperator, cov: DMatrix<f64>) -> Result<Self> {
        let basis = GellMannBasis::new(mean.dim())?;
        let n = basis.len();
        if cov.nrows() != n || cov.ncols() != n {
            return Err(Error::DimensionMismatch { expected: n, found: cov.nrows() });
        }
        let scale = cov.amax();
        if (&cov - cov.transpose()).amax() > 1e-10 * scale.max(1.0) {
            return Err(Error::InvalidInput("covariance is not symmetric".into()));
        }
        let cov = (&cov + cov.transpose()) * 0.5;
        let eig = cov.clone().symmetric_eigenvalues();
        if !(eig.min() > 1e-12 * eig.max()) {
            return Err(Error::InvalidInput("covariance is not positive definite".into()));
        }
        let chol = Cholesky::new(cov.clone())
            .ok_or_else(|| Error::InvalidInput("covariance is not positive definite".into()))?
            .l();
        let mean_coords = hs_coords(&mean, &basis);
        Ok(Self { mean, cov, chol, mean_coords, basis })
    }

    /// Σ = s²·Id.
    pub fn isotropic(mean: DensityOperator, s: f64) -> Result<Self> {
        let n = mean.dim() * mean.dim() - 1;
        Self::new(mean, DMatrix::identity(n, n) * (s * s))
    }

    pub fn dim(&self) -> usize {
        self.mean.dim()
    }

    /// N = d² − 1.
    pub fn n_params(&self) -> usize {
        self.cov.nrows()
    }

    pub fn mean(&self) -> &DensityOperator {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// HS coordinates Tr(ϱ σ_i)/√2.
    pub fn coordinates(&self, rho: &DensityOperator) -> Result<Vec<f64>> {
        if rho.dim() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: rho.dim() });
        }
        Ok(hs_coords(rho, &self.basis).iter().copied().collect())
    }

    /// ‖x − x_θ‖_Σ.
    pub fn mahalanobis(&self, rho: &DensityOperator) -> Result<f64> {
        let x = DVector::from_vec(self.coordinates(rho)?);
        let diff = x - &self.mean_coords;
        let z = self
            .chol
            .solve_lower_triangular(&diff)
            .ok_or_else(|| Error::InvalidInput("singular covariance factor".into()))?;
        Ok(z.norm())
    }

    fn state_matrix(&self, x: &[f64]) -> CMatrix {
        let d = self.dim();
        let w: Vec<f64> = x.iter().map(|v| v * std::f64::consts::FRAC_1_SQRT_2).collect();
        CMatrix::identity(d, d) * Complex64::new(1.0 / d as f64, 0.0) + self.basis.combine(&w)
    }

    /// Mahalanobis distances of the PSD samples among n Gaussian draws, in
    /// sampling order.
    fn accepted_distances(&self, n: usize, seed: u64) -> Vec<f64> {
        let chunks = n.div_ceil(SAMPLE_CHUNK);
        let dim = self.n_params();
        let per_chunk: Vec<Vec<f64>> = (0..chunks)
            .into_par_iter()
            .map(|c| {
                let mut r = rng::stream(seed, c as u64);
                let count = SAMPLE_CHUNK.min(n - c * SAMPLE_CHUNK);
                let mut out = Vec::new();
                let mut z = DVector::<f64>::zeros(dim);
                for _ in 0..count {
                    z.iter_mut().for_each(|v| *v = r.sample(StandardNormal));
                    let x = &self.mean_coords + &self.chol * &z;
                    if is_positive(&self.state_matrix(x.as_slice())) {
                        out.push(z.norm());
                    }
                }
                out
            })
            .collect();
        per_chunk.into_iter().flatten().collect()
    }
}

fn hs_coords(rho: &DensityOperator, basis: &GellMannBasis) -> DVector<f64> {
    DVector::from_iterator(
        basis.len(),
        basis.coefficients(rho.matrix()).into_iter().map(|c| c * std::f64::consts::FRAC_1_SQRT_2),
    )
}

fn is_positive(m: &CMatrix) -> bool {
    if m.nrows() == 2 {
        min_eigenvalue(m) >= 0.0
    } else {
        Cholesky::new(m.clone()).is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum NormalizationEstimator {
    MonteCarlo { seed: u64, samples: usize },
    Series { k0: usize },
}

/// A Gaussian posterior together with its normalization constant on S⁺.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncatedGaussianPosterior {
    pub base: GaussianPosterior,
    pub c: f64,
    pub c_stderr: f64,
    pub samples: usize,
    pub accepted: usize,
    pub estimator: NormalizationEstimator,
    /// Sorted Mahalanobis distances of the accepted samples.
    #[serde(skip)]
    distances: Vec<f64>,
}

/// C = n / #PSD samples with delta-method standard error C·√((1−p)/(np)).
pub fn estimate_normalization(post: &GaussianPosterior, n: usize, seed: u64) -> Result<TruncatedGaussianPosterior> {
    if n < 1000 {
        return Err(Error::InvalidArgument(format!("need at least 1000 samples, got {n}")));
    }
    let mut distances = post.accepted_distances(n, seed);
    let accepted = distances.len();
    if accepted == 0 {
        // with no hits the PSD mass is below 3/n at 95% confidence
        return Err(Error::NormalizationUnresolvable { samples: n, lower_bound: n as f64 / 3.0 });
    }
    distances.sort_by(|a, b| a.total_cmp(b));
    let p = accepted as f64 / n as f64;
    let c = 1.0 / p;
    let c_stderr = c * ((1.0 - p) / (n as f64 * p)).sqrt();
    Ok(TruncatedGaussianPosterior {
        base: post.clone(),
        c,
        c_stderr,
        samples: n,
        accepted,
        estimator: NormalizationEstimator::MonteCarlo { seed, samples: n },
        distances,
    })
}

/// Outcome of comparing r⁺_α with r_{α/C}.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CriterionOutcome {
    Equal,
    StrictlyGreater,
    Unresolved,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CredibleRadiusPair {
    pub alpha: f64,
    pub c: f64,
    pub c_stderr: f64,
    /// r_{α/C}.
    pub r_unconstrained: f64,
    /// Uncertainty of r_{α/C} inherited from C.
    pub r_unconstrained_error: f64,
    /// r⁺_α.
    pub r_truncated: f64,
    /// Bootstrap standard error of r⁺_α.
    pub r_truncated_error: f64,
    pub combined_error: f64,
    /// r⁺_α − r_{α/C}.
    pub difference: f64,
    /// Resolution gap supplied by the caller.
    pub gap: f64,
    /// max(gap/2, z·combined_error).
    pub threshold: f64,
    pub criterion_holds: CriterionOutcome,
    pub accepted: usize,
    pub samples: usize,
}

impl TruncatedGaussianPosterior {
    /// Wraps a series estimate of C; no samples are attached, so radii cannot
    /// be read off it.
    pub fn from_series(post: &GaussianPosterior, est: &SeriesNormalization) -> Self {
        TruncatedGaussianPosterior {
            base: post.clone(),
            c: est.c_tilde,
            c_stderr: est.error,
            samples: 0,
            accepted: 0,
            estimator: NormalizationEstimator::Series { k0: est.k0 },
            distances: Vec::new(),
        }
    }

    pub fn distances(&self) -> &[f64] {
        &self.distances
    }

    /// Empirical α-quantile of the accepted Mahalanobis distances.
    pub fn truncated_radius(&self, alpha: f64) -> Result<f64> {
        check_alpha(alpha)?;
        let k = self.distances.len();
        if k < MIN_ACCEPTED {
            return Err(Error::InsufficientSamples(k));
        }
        Ok(self.distances[quantile_rank(alpha, k) - 1])
    }

    /// Bootstrap standard error of the α-quantile. The m-th order statistic of
    /// k uniform resample positions is Beta(m, k − m + 1) distributed, so each
    /// resample costs one Beta draw.
    pub fn bootstrap_error(&self, alpha: f64, resamples: usize, seed: u64) -> Result<f64> {
        check_alpha(alpha)?;
        let k = self.distances.len();
        if k < MIN_ACCEPTED {
            return Err(Error::InsufficientSamples(k));
        }
        let m = quantile_rank(alpha, k);
        let beta = Beta::new(m as f64, (k - m + 1) as f64).expect("positive shape parameters");
        let mut r = rng::stream(seed, u64::MAX - 1);
        let values: Vec<f64> = (0..resamples)
            .map(|_| {
                let u: f64 = beta.sample(&mut r);
                self.distances[((u * k as f64) as usize).min(k - 1)]
            })
            .collect();
        let mean = values.iter().sum::<f64>() / resamples as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (resamples as f64 - 1.0);
        Ok(var.sqrt())
    }

    /// Compares r⁺_α with r_{α/C}; differences within max(gap/2, z·error)
    /// count as equal.
    pub fn credible_radius_pair(&self, alpha: f64, gap: f64, seed: u64) -> Result<CredibleRadiusPair> {
        check_alpha(alpha)?;
        let n_params = self.base.n_params() as u32;
        let r_truncated = self.truncated_radius(alpha)?;
        let r_truncated_error = self.bootstrap_error(alpha, BOOTSTRAP_RESAMPLES, seed)?;
        let level = alpha / self.c;
        let r_unconstrained = mvcr_radius(n_params, level, RADIUS_ACCURACY)?.radius;
        // dr/dβ = 1/f(r) at β = α/C, and σ_β = α σ_C / C²
        let density = chi_density(n_params, r_unconstrained);
        let r_unconstrained_error = alpha * self.c_stderr / (self.c * self.c) / density;
        let combined_error = r_truncated_error.hypot(r_unconstrained_error);
        let difference = r_truncated - r_unconstrained;
        let threshold = (0.5 * gap).max(Z_SCORE * combined_error);
        let criterion_holds = if difference.abs() <= threshold {
            CriterionOutcome::Equal
        } else if difference > threshold {
            CriterionOutcome::StrictlyGreater
        } else {
            CriterionOutcome::Unresolved
        };
        Ok(CredibleRadiusPair {
            alpha,
            c: self.c,
            c_stderr: self.c_stderr,
            r_unconstrained,
            r_unconstrained_error,
            r_truncated,
            r_truncated_error,
            combined_error,
            difference,
            gap,
            threshold,
            criterion_holds,
            accepted: self.distances.len(),
            samples: self.samples,
        })
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("credibility α = {alpha} must lie in (0, 1)")));
    }
    Ok(())
}

/// 1-based rank ⌈αk⌉ of the empirical α-quantile.
fn quantile_rank(alpha: f64, k: usize) -> usize {
    ((alpha * k as f64).ceil() as usize).clamp(1, k)
}

/// Samples the posterior and compares r⁺_α with r_{α/C}.
pub fn truncated_mvcr_radius(post: &GaussianPosterior, alpha: f64, n: usize, seed: u64) -> Result<CredibleRadiusPair> {
    check_alpha(alpha)?;
    estimate_normalization(post, n, seed)?.credible_radius_pair(alpha, 0.0, seed)
}

/// A radius estimate with an absolute error bound, as returned by a
/// truncated-radius oracle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadiusEstimate {
    pub radius: f64,
    pub error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesNormalization {
    /// Radius of the Mahalanobis ball guaranteed inside S⁺.
    pub ball_radius: f64,
    /// Radius r actually used, min(ball_radius, 1).
    pub r: f64,
    pub k0: usize,
    /// α̃ = P_{k₀}(N/2, r²/2).
    pub alpha_tilde: f64,
    pub radius_plus: f64,
    pub radius_error: f64,
    /// P_{k₀}(N/2, (r⁺)²/2).
    pub p_k0: f64,
    /// Series error ε' at (r⁺)²/2.
    pub series_error: f64,
    /// Bound on the change of P from the oracle's radius error.
    pub radius_term: f64,
    pub c_tilde: f64,
    pub relative_error: f64,
    pub error: f64,
}

/// C̃ = α̃ / P_{k₀}(N/2, (r⁺_{α̃})²/2) for an α̃ whose credible ball is known to
/// lie inside S⁺, with the error propagated from the series and the oracle.
pub fn lemma10_normalization<F>(post: &GaussianPosterior, oracle: F, series_target: f64) -> Result<SeriesNormalization>
where
    F: Fn(f64) -> Result<RadiusEstimate>,
{
    let theta_min = post.mean().mineig();
    if !(theta_min > 0.0) {
        return Err(Error::LemmaInapplicable(format!("mean has smallest eigenvalue {theta_min:e}, not strictly positive")));
    }
    let d = post.dim() as f64;
    let a = post.n_params() as f64 / 2.0;
    let max_cov = post.cov().clone().symmetric_eigenvalues().max();
    let ball_radius = (d / (2.0 * (d - 1.0))).sqrt() * theta_min / max_cov.sqrt();
    let r = ball_radius.min(1.0);
    let head = series_to_accuracy(a, 0.5 * r * r, series_target)?;
    let alpha_tilde = head.partial_sum;
    let est = oracle(alpha_tilde)?;
    let x = 0.5 * est.radius * est.radius;
    let tail = series_to_accuracy(a, x, series_target)?;
    let p_k0 = series_partial(a, x, tail.k0)?.partial_sum;
    let series_error = tail.remainder_bound + tail.rounding_bound;
    let radius_term = 0.5 * (2.0 * est.radius * est.error + est.error * est.error);
    let slack = series_error + radius_term;
    if !(p_k0 > slack) {
        return Err(Error::ConvergenceFailure("radius error swamps the series value".into()));
    }
    let c_tilde = alpha_tilde / p_k0;
    let relative_error = slack / (p_k0 - slack);
    Ok(SeriesNormalization {
        ball_radius,
        r,
        k0: tail.k0,
        alpha_tilde,
        radius_plus: est.radius,
        radius_error: est.error,
        p_k0,
        series_error,
        radius_term,
        c_tilde,
        relative_error,
        error: c_tilde * relative_error,
    })
}

/// Gaussian whose α/C credible ellipsoid is the given state ellipsoid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedPosterior {
    pub posterior: GaussianPosterior,
    /// P(N/2, 1): the credibility of E(√2) under the untruncated Gaussian.
    pub alpha_over_c: f64,
}

/// Mean ϱ̂ and Σ = O·diag(R²)·Oᵀ in HS coordinates; the ellipsoid boundary
/// then sits at Mahalanobis distance √2.
pub fn encode_ellipsoid_as_posterior(e: &StateEllipsoid) -> Result<EncodedPosterior> {
    let n = e.n_params();
    let diag = DMatrix::from_diagonal(&DVector::from_iterator(n, e.radii().iter().map(|r| r * r)));
    let cov = match e.orientation() {
        crate::ellipsoid::Orientation::Identity => diag,
        crate::ellipsoid::Orientation::Matrix(o) => o * diag * o.transpose(),
    };
    let posterior = GaussianPosterior::new(e.center().clone(), cov)?;
    let alpha_over_c = reg_inc_gamma(n as f64 / 2.0, 1.0, 1e-14)?.value;
    Ok(EncodedPosterior { posterior, alpha_over_c })
}

/// Lower bound on r⁺_α − r_{α/C} for an encoded instance with a partition,
/// from the volume of the ellipsoid sticking out of S⁺. Returns
/// (squared-radius gap, radius gap).
pub fn encoded_radius_gap(enc: &BalancedSumEncoding) -> (f64, f64) {
    let e = &enc.ellipsoid;
    let n = e.n_params() as f64;
    let ln_det_sqrt: f64 = e.radii().iter().map(|r| r.ln()).sum();
    let max_cov = e.radii().iter().fold(0.0_f64, |m, r| m.max(r * r));
    let ln = std::f64::consts::LN_2 - 4.0 + 0.5 * n * std::f64::consts::PI.ln() + ln_det_sqrt
        - 0.5 * n * std::f64::consts::LN_2
        - libm::lgamma(0.5 * n + 1.0)
        - n * (2.0 * max_cov / enc.violation_bound).ln();
    let r2 = ln.exp();
    (r2, r2 / (4.0 * std::f64::consts::SQRT_2))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CriterionDecision {
    Contained,
    Violated,
    Unresolved,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriterionBudget {
    pub samples: usize,
    pub seed: u64,
    /// Radius gap below which differences are not resolvable.
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionReport {
    pub alpha_over_c: f64,
    /// None when C·P(N/2, 1) ≥ 1, i.e. no credibility level encodes the ellipsoid.
    pub pair: Option<CredibleRadiusPair>,
    pub c: f64,
    pub c_stderr: f64,
    pub decision: CriterionDecision,
}

/// Decides containment of `e` in S⁺ through the credible-radius criterion.
pub fn criterion_decides_containment(e: &StateEllipsoid, budget: &CriterionBudget) -> Result<CriterionReport> {
    let enc = encode_ellipsoid_as_posterior(e)?;
    let t = estimate_normalization(&enc.posterior, budget.samples, budget.seed)?;
    let alpha = t.c * enc.alpha_over_c;
    if alpha >= 1.0 {
        return Ok(CriterionReport {
            alpha_over_c: enc.alpha_over_c,
            pair: None,
            c: t.c,
            c_stderr: t.c_stderr,
            decision: CriterionDecision::Unresolved,
        });
    }
    let pair = t.credible_radius_pair(alpha, budget.gap, budget.seed)?;
    let decision = match pair.criterion_holds {
        CriterionOutcome::Equal => CriterionDecision::Contained,
        CriterionOutcome::StrictlyGreater => CriterionDecision::Violated,
        CriterionOutcome::Unresolved => CriterionDecision::Unresolved,
    };
    Ok(CriterionReport { alpha_over_c: enc.alpha_over_c, c: t.c, c_stderr: t.c_stderr, pair: Some(pair), decision })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionVerification {
    pub criterion: CriterionOutcome,
    pub decision: CriterionDecision,
    /// Exact solver answer.
    pub partition: Option<Vec<i8>>,
    /// Answer of the containment optimizer on the same encoding.
    pub geometric_partition_exists: bool,
    /// The criterion agrees with both the solver and the optimizer.
    pub consistent: bool,
    /// Radius gap used as the comparison threshold.
    pub gap: f64,
    pub gap_squared_radius: f64,
    pub violation_bound: f64,
    pub report: CriterionReport,
}

/// Encodes the instance, runs the credible-radius criterion with the
/// encoder's gap as threshold, and cross-checks against the exact solver and
/// the geometric decision.
pub fn verify_criterion(inst: &BalancedSumInstance, samples: usize, seed: u64) -> Result<CriterionVerification> {
    let enc = hardness::encode(inst)?;
    let (gap_squared_radius, gap) = encoded_radius_gap(&enc);
    let report = criterion_decides_containment(&enc.ellipsoid, &CriterionBudget { samples, seed, gap })?;
    let criterion = report.pair.as_ref().map_or(CriterionOutcome::Unresolved, |p| p.criterion_holds);
    let partition = hardness::solve_balanced_sum(inst)?;
    let geometric = hardness::decide_via_geometry(&enc, seed)?;
    let consistent = match criterion {
        CriterionOutcome::Equal => partition.is_none() && !geometric.partition_exists,
        CriterionOutcome::StrictlyGreater => partition.is_some() && geometric.partition_exists,
        CriterionOutcome::Unresolved => false,
    };
    Ok(CriterionVerification {
        criterion,
        decision: report.decision,
        partition,
        geometric_partition_exists: geometric.partition_exists,
        consistent,
        gap,
        gap_squared_radius,
        violation_bound: enc.violation_bound,
        report,
    })
}

#[derive(Serialize, Deserialize)]
struct GaussianPosteriorJson {
    dim: usize,
    mean: DensityOperator,
    cov: RealMatrixJson,
}

impl Serialize for GaussianPosterior {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        GaussianPosteriorJson { dim: self.dim(), mean: self.mean.clone(), cov: json::real_matrix_to_json(&self.cov) }
            .serialize(s)
    }
}

impl<'de> Deserialize<'de> for GaussianPosterior {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let raw = GaussianPosteriorJson::deserialize(d)?;
        if raw.dim != raw.mean.dim() {
            return Err(D::Error::custom(format!("dim {} does not match mean of dimension {}", raw.dim, raw.mean.dim())));
        }
        let cov = json::real_matrix_from_json(&raw.cov).map_err(D::Error::custom)?;
        GaussianPosterior::new(raw.mean, cov).map_err(D::Error::custom)
    }
}
