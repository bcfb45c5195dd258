//! Regularized incomplete gamma function with certified error bounds, and the
//! credible radius of an N-dimensional standard Gaussian.
//!
//! P(a, x) = γ(a, x)/Γ(a) is the radial CDF of an N-dimensional standard
//! Gaussian at a = N/2, x = r²/2, so the minimum-volume credible radius r_α
//! solves P(N/2, r_α²/2) = α. Since x ↦ P(a, x) is strictly increasing the
//! radius is found by bisection, each step evaluating P to a known accuracy.
//!
//! Below x = a + 1 the power series
//!
//! ```text
//! P(a, x) = x^a e^{−x} / Γ(a+1) · Σ_k x^k / (a+1)_k
//! ```
//!
//! is summed up to k₀, and the tail is bounded by
//! `x^{a+k₀} e^{−x} / Γ(a+k₀+1) · (a+k₀)/(a+k₀−x−1)`. Above it the
//! Legendre continued fraction for Q = 1 − P is used instead; its tail elements
//! are positive, so successive convergents bracket the limit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Accuracy floor for any requested error target.
pub const MIN_TARGET_ERR: f64 = 1e-15;

/// Per-term rounding allowance.
const ROUNDING: f64 = 4.0 * f64::EPSILON;

const MAX_TERMS: usize = 100_000;

/// Value of P(a, x) with a rigorous bound on its error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaEval {
    pub a: f64,
    pub x: f64,
    pub value: f64,
    pub error_bound: f64,
    pub terms_used: usize,
}

/// Truncated power series P_{k₀}(a, x) together with the bound on the dropped tail.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesEval {
    /// P_{k₀}(a, x), a lower bound of P(a, x) up to rounding.
    pub partial_sum: f64,
    /// Upper bound on P(a, x) − P_{k₀}(a, x).
    pub remainder_bound: f64,
    /// Floating-point error allowance on `partial_sum`.
    pub rounding_bound: f64,
    pub k0: usize,
}

fn check_args(a: f64, x: f64, target_err: f64) -> Result<()> {
    if !(a > 0.0) || !a.is_finite() {
        return Err(Error::InvalidArgument(format!("shape a = {a} must be positive")));
    }
    if !(x >= 0.0) || !x.is_finite() {
        return Err(Error::InvalidArgument(format!("x = {x} must be non-negative")));
    }
    if !(target_err > 0.0) {
        return Err(Error::InvalidArgument(format!("target error {target_err} must be positive")));
    }
    if target_err < MIN_TARGET_ERR {
        return Err(Error::PrecisionUnreachable(target_err));
    }
    Ok(())
}

/// Relative error allowance of exp(ln_value) given the magnitudes that were
/// summed to form `ln_value`.
fn exp_relative_error(magnitudes: &[f64]) -> f64 {
    ROUNDING * (1.0 + magnitudes.iter().map(|m| m.abs()).sum::<f64>())
}

/// x^a e^{−x}/Γ(a+1) and its relative error allowance.
fn series_prefactor(a: f64, x: f64) -> (f64, f64) {
    let lg = libm::lgamma(a + 1.0);
    let la = a * x.ln();
    ((la - x - lg).exp(), exp_relative_error(&[la, x, lg]))
}

/// Compensated summation of positive terms.
struct Neumaier {
    sum: f64,
    carry: f64,
}

impl Neumaier {
    fn new(first: f64) -> Self {
        Neumaier { sum: first, carry: 0.0 }
    }

    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.carry += (self.sum - t) + v;
        } else {
            self.carry += (v - t) + self.sum;
        }
        self.sum = t;
    }

    fn total(&self) -> f64 {
        self.sum + self.carry
    }
}

/// Rounding allowance of pre · Σ t_k: term k carries k + 1 roundings of the
/// running product and the compensated sum two more, each charged at the
/// safety factor.
fn series_rounding(pre: f64, pre_rel: f64, sum: f64, weighted: f64) -> f64 {
    pre * (pre_rel * sum + ROUNDING * (weighted + 2.0 * sum) / 4.0)
}

/// Truncated series P_{k₀}(a, x) where k₀ is the smallest index whose remainder
/// bound is at most `remainder_target`.
pub fn series_to_accuracy(a: f64, x: f64, remainder_target: f64) -> Result<SeriesEval> {
    check_args(a, x, 1.0)?;
    if x == 0.0 {
        return Ok(SeriesEval { partial_sum: 0.0, remainder_bound: 0.0, rounding_bound: 0.0, k0: 0 });
    }
    let (pre, pre_rel) = series_prefactor(a, x);
    let mut term = 1.0;
    let mut sum = Neumaier::new(1.0);
    let mut weighted = 1.0;
    for k0 in 0..MAX_TERMS {
        if k0 > 0 {
            term *= x / (a + k0 as f64);
            sum.add(term);
            weighted += term * (k0 as f64 + 1.0);
        }
        let shifted = a + k0 as f64;
        if shifted > x + 1.0 {
            let remainder = pre * term * shifted / (shifted - x - 1.0);
            if remainder <= remainder_target {
                let sum = sum.total();
                let partial = pre * sum;
                let rounding = series_rounding(pre, pre_rel, sum, weighted);
                return Ok(SeriesEval { partial_sum: partial, remainder_bound: remainder, rounding_bound: rounding, k0 });
            }
        }
    }
    Err(Error::ConvergenceFailure(format!("series for P({a}, {x}) did not reach {remainder_target:e}")))
}

/// P_{k₀}(a, x) for a fixed truncation index.
pub fn series_partial(a: f64, x: f64, k0: usize) -> Result<SeriesEval> {
    check_args(a, x, 1.0)?;
    if x == 0.0 {
        return Ok(SeriesEval { partial_sum: 0.0, remainder_bound: 0.0, rounding_bound: 0.0, k0 });
    }
    let (pre, pre_rel) = series_prefactor(a, x);
    let mut term = 1.0;
    let mut sum = Neumaier::new(1.0);
    let mut weighted = 1.0;
    for k in 1..=k0 {
        term *= x / (a + k as f64);
        sum.add(term);
        weighted += term * (k as f64 + 1.0);
    }
    let sum = sum.total();
    let shifted = a + k0 as f64;
    let remainder = if shifted > x + 1.0 {
        pre * term * shifted / (shifted - x - 1.0)
    } else {
        f64::INFINITY
    };
    let partial = pre * sum;
    Ok(SeriesEval {
        partial_sum: partial,
        remainder_bound: remainder.min(1.0),
        rounding_bound: series_rounding(pre, pre_rel, sum, weighted),
        k0,
    })
}

/// Q(a, x) from the uncontracted Legendre continued fraction
///
/// ```text
/// Γ(a, x) = e^{−x} x^a · 1/(x + (1−a)/(1 + 1/(x + (2−a)/(1 + 2/(x + …)))))
/// ```
///
/// evaluated by the modified Lentz method. Once every remaining element is
/// positive the tail lies in (0, ∞), so the limit is bracketed by two
/// consecutive convergents. Returns (value, error, terms).
fn continued_fraction_q(a: f64, x: f64, target_err: f64) -> Result<(f64, f64, usize)> {
    let lg = libm::lgamma(a);
    let la = a * x.ln();
    let pre = (la - x - lg).exp();
    let pre_rel = exp_relative_error(&[la, x, lg]);

    const TINY: f64 = 1e-300;
    // f = 1/(x + …) is computed as the fraction K(a_m / b_m) with a_1 = 1, b_1 = x
    let mut f = TINY;
    let mut c = f;
    let mut d = 0.0;
    let mut prev = f;
    for m in 1..MAX_TERMS {
        let (am, bm) = if m == 1 {
            (1.0, x)
        } else if m % 2 == 0 {
            ((m / 2) as f64 - a, 1.0)
        } else {
            ((m / 2) as f64, x)
        };
        d = bm + am * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = bm + am / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        f *= c * d;
        // the elements after m are all positive once (m + 1)/2 exceeds a
        if m >= 2 && ((m + 1) / 2) as f64 > a {
            let truncation = pre * (f - prev).abs();
            let value = pre * f;
            let rounding = value * (pre_rel + 0.5 * ROUNDING * (m as f64 + 2.0));
            if truncation + rounding <= target_err {
                return Ok((value, truncation + rounding, m));
            }
        }
        prev = f;
    }
    Err(Error::ConvergenceFailure(format!("continued fraction for Q({a}, {x}) did not converge")))
}

/// Largest x for which the power series is evaluated without overflow.
const SERIES_X_MAX: f64 = 600.0;

/// Allowance for forming 1 − v from a value v in [0, 1].
const COMPLEMENT: f64 = f64::EPSILON;

fn series_eval(a: f64, x: f64, target_err: f64) -> Result<GammaEval> {
    let s = series_to_accuracy(a, x, target_err)?;
    // the midpoint of [partial, partial + remainder] halves the truncation error
    let value = (s.partial_sum + 0.5 * s.remainder_bound).min(1.0);
    let error_bound = 0.5 * s.remainder_bound + s.rounding_bound;
    if error_bound > target_err {
        return Err(Error::PrecisionUnreachable(target_err));
    }
    Ok(GammaEval { a, x, value, error_bound, terms_used: s.k0 + 1 })
}

fn complement(g: GammaEval, target_err: f64) -> Result<GammaEval> {
    let error_bound = g.error_bound + COMPLEMENT;
    if error_bound > target_err {
        return Err(Error::PrecisionUnreachable(target_err));
    }
    Ok(GammaEval { value: (1.0 - g.value).clamp(0.0, 1.0), error_bound, ..g })
}

fn lower_inner(a: f64, x: f64, target_err: f64) -> Result<GammaEval> {
    if x < a + 1.0 {
        series_eval(a, x, target_err)
    } else {
        complement(upper_inner(a, x, target_err - COMPLEMENT)?, target_err)
    }
}

/// Q(a, x) by continued fraction, falling back to the series when the
/// fraction cannot reach the target.
fn upper_inner(a: f64, x: f64, target_err: f64) -> Result<GammaEval> {
    if x < a + 1.0 {
        return complement(series_eval(a, x, target_err - COMPLEMENT)?, target_err);
    }
    match continued_fraction_q(a, x, target_err) {
        Ok((q, err, terms)) => Ok(GammaEval { a, x, value: q.clamp(0.0, 1.0), error_bound: err, terms_used: terms }),
        Err(e) if x > SERIES_X_MAX => Err(e),
        Err(_) => complement(series_eval(a, x, target_err - COMPLEMENT)?, target_err),
    }
}

/// P(a, x) with |value − P(a, x)| ≤ error_bound ≤ target_err.
pub fn reg_inc_gamma(a: f64, x: f64, target_err: f64) -> Result<GammaEval> {
    check_args(a, x, target_err)?;
    if x == 0.0 {
        return Ok(GammaEval { a, x, value: 0.0, error_bound: 0.0, terms_used: 0 });
    }
    lower_inner(a, x, target_err)
}

/// Q(a, x) = 1 − P(a, x) with the same guarantee; accurate in relative terms
/// in the upper tail.
pub fn reg_inc_gamma_upper(a: f64, x: f64, target_err: f64) -> Result<GammaEval> {
    check_args(a, x, target_err)?;
    if x == 0.0 {
        return Ok(GammaEval { a, x, value: 1.0, error_bound: 0.0, terms_used: 0 });
    }
    upper_inner(a, x, target_err)
}

/// Upper bound on P(a, x_hi) − P(a, x_lo).
///
/// For a ≥ 1 the integrand t^{a−1}e^{−t}/Γ(a) never exceeds 1 and the bound is
/// x_hi − x_lo. For a < 1 the integrand is unbounded at 0 and the bound
/// (x_hi^a − x_lo^a)/Γ(a+1) from dropping e^{−t} is used instead.
pub fn gamma_difference_bound(a: f64, x_lo: f64, x_hi: f64) -> Result<f64> {
    if !(a > 0.0) {
        return Err(Error::InvalidArgument(format!("shape a = {a} must be positive")));
    }
    if !(x_lo >= 0.0) || !(x_hi >= x_lo) {
        return Err(Error::InvalidArgument(format!(
            "need 0 <= x_lo <= x_hi, got x_lo = {x_lo}, x_hi = {x_hi}"
        )));
    }
    let raw = if a >= 1.0 {
        x_hi - x_lo
    } else {
        (x_hi.powf(a) - x_lo.powf(a)) / libm::tgamma(a + 1.0)
    };
    Ok(raw.min(1.0))
}

/// Density of the Mahalanobis radius of an N-dimensional standard Gaussian.
pub fn chi_density(n: u32, r: f64) -> f64 {
    if r <= 0.0 {
        return if n == 1 { (2.0 / std::f64::consts::PI).sqrt() } else { 0.0 };
    }
    let a = n as f64 / 2.0;
    let ln = (n as f64 - 1.0) * r.ln() - 0.5 * r * r - (a - 1.0) * std::f64::consts::LN_2 - libm::lgamma(a);
    ln.exp()
}

/// Radius r_α of the minimum-volume credible ellipsoid of an N-dimensional Gaussian.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadiusSolution {
    pub alpha: f64,
    pub n: u32,
    pub radius: f64,
    /// Requested credibility accuracy δ.
    pub accuracy: f64,
    /// Certified bound on |P(N/2, radius²/2) − α|; never exceeds `accuracy`.
    pub error_bound: f64,
    /// Radii bracketing the exact solution.
    pub radius_interval: (f64, f64),
    pub evaluations: usize,
    pub t_max: f64,
}

fn check_accuracy(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument(format!("accuracy δ = {delta} must lie in (0, 1)")));
    }
    let inv = 1.0 / delta;
    if (inv - inv.round()).abs() > 1e-6 * inv {
        return Err(Error::InvalidArgument(format!("1/δ = {inv} is not a positive integer")));
    }
    if delta < 4.0 * MIN_TARGET_ERR {
        return Err(Error::PrecisionUnreachable(delta));
    }
    Ok(())
}

/// Solves P(N/2, r²/2) = α to credibility accuracy δ by bisection on x = r²/2.
///
/// For α > 0.9 the equivalent equation Q(N/2, x) = 1 − α is solved to keep the
/// accuracy of the upper tail.
pub fn mvcr_radius(n: u32, alpha: f64, delta: f64) -> Result<RadiusSolution> {
    if n == 0 {
        return Err(Error::InvalidArgument("dimension N must be at least 1".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("credibility α = {alpha} must lie in (0, 1)")));
    }
    check_accuracy(delta)?;
    let a = n as f64 / 2.0;
    let use_complement = alpha > 0.9;
    let eval_target = 0.25 * delta;
    let mut evaluations = 0;
    // signed residual G(x), increasing in x, with its error bound
    let mut residual = |x: f64| -> Result<(f64, f64)> {
        evaluations += 1;
        if use_complement {
            let q = reg_inc_gamma_upper(a, x, eval_target)?;
            Ok(((1.0 - alpha) - q.value, q.error_bound))
        } else {
            let p = reg_inc_gamma(a, x, eval_target)?;
            Ok((p.value - alpha, p.error_bound))
        }
    };

    let mut hi = wilson_hilferty_start(n, alpha);
    loop {
        let (g, err) = residual(hi)?;
        if g.abs() + err <= delta {
            let r = (2.0 * hi).sqrt();
            return Ok(RadiusSolution {
                alpha,
                n,
                radius: r,
                accuracy: delta,
                error_bound: g.abs() + err,
                radius_interval: (r, r),
                evaluations,
                t_max: hi,
            });
        }
        if g > 0.0 {
            break;
        }
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::ConvergenceFailure("no finite upper bracket".into()));
        }
    }
    let t_max = hi;
    let mut lo = 0.0;
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            return Err(Error::ConvergenceFailure(format!(
                "bisection stalled at x = {mid} before reaching δ = {delta:e}"
            )));
        }
        let (g, err) = residual(mid)?;
        if g.abs() + err <= delta {
            let r = (2.0 * mid).sqrt();
            return Ok(RadiusSolution {
                alpha,
                n,
                radius: r,
                accuracy: delta,
                error_bound: g.abs() + err,
                radius_interval: ((2.0 * lo).sqrt(), (2.0 * hi).sqrt()),
                evaluations,
                t_max,
            });
        }
        if g < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
}

/// Wilson–Hilferty estimate of the chi-square quantile, halved to x = χ²/2 and
/// inflated so that it usually already brackets the root.
fn wilson_hilferty_start(n: u32, alpha: f64) -> f64 {
    let nf = n as f64;
    // crude upper bound on the standard normal quantile
    let z = if alpha > 0.5 { (-2.0 * (1.0 - alpha).ln()).sqrt() } else { 0.0 };
    let c = 2.0 / (9.0 * nf);
    let cube = (1.0 - c + z * c.sqrt()).max(0.1);
    (0.5 * nf * cube.powi(3)).max(0.5)
}
