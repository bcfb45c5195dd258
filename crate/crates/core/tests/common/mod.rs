//! Independent reference values for the integration tests.
#![allow(dead_code)]

use quadrature::double_exponential;

/// P(a, x) by tanh-sinh quadrature of t^{a-1} e^{-t} / Γ(a), split into
/// pieces of width about √a so the peak is always resolved.
pub fn gamma_p(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let lg = libm::lgamma(a);
    let f = move |t: f64| {
        if t <= 0.0 {
            0.0
        } else {
            ((a - 1.0) * t.ln() - t - lg).exp()
        }
    };
    let end = x.min(a + 60.0 * a.sqrt() + 60.0);
    let width = a.sqrt().max(1.0);
    // first piece with u = t^a, which removes the singularity at 0
    let mut lo = end.min(1.0);
    let g = move |u: f64| (-u.powf(1.0 / a) - lg).exp() / a;
    let mut sum = double_exponential::integrate(g, 0.0, lo.powf(a), 1e-18).integral;
    if lo >= end {
        return sum;
    }
    let mut hi = (lo + width).min(end);
    let mut comp = 0.0;
    loop {
        let piece = double_exponential::integrate(f, lo, hi, 1e-18).integral;
        let y = piece - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
        if hi >= end {
            break;
        }
        lo = hi;
        hi = (hi + width).min(end);
    }
    sum
}

/// Chi density with three degrees of freedom.
pub fn chi3_density(r: f64) -> f64 {
    (2.0 / std::f64::consts::PI).sqrt() * r * r * (-0.5 * r * r).exp()
}

/// Fraction of a sphere of radius r, centred at distance delta from the
/// centre of a ball of radius b, that lies inside the ball.
pub fn sphere_fraction_in_ball(r: f64, delta: f64, b: f64) -> f64 {
    if r <= 0.0 {
        return if delta <= b { 1.0 } else { 0.0 };
    }
    if r + delta <= b {
        return 1.0;
    }
    if r >= b + delta || delta >= r + b {
        return 0.0;
    }
    ((b * b - (delta - r).powi(2)) / (4.0 * r * delta)).clamp(0.0, 1.0)
}

/// Qubit posterior with isotropic covariance s²·Id in HS coordinates and mean
/// at HS distance delta from I/2. The states form the ball of radius 1/√2.
pub struct QubitRadialOracle {
    pub delta: f64,
    pub s: f64,
}

impl QubitRadialOracle {
    const BALL: f64 = std::f64::consts::FRAC_1_SQRT_2;

    /// Gaussian mass of the states within Mahalanobis distance rho.
    pub fn mass(&self, rho: f64) -> f64 {
        let b = Self::BALL;
        let mut cuts = vec![0.0, ((b - self.delta).abs() / self.s).min(rho), ((b + self.delta) / self.s).min(rho), rho];
        cuts.sort_by(|a, b| a.total_cmp(b));
        let f = |r: f64| chi3_density(r) * sphere_fraction_in_ball(self.s * r, self.delta, b);
        cuts.windows(2)
            .filter(|w| w[1] > w[0])
            .map(|w| double_exponential::integrate(f, w[0], w[1], 1e-14).integral)
            .sum()
    }

    pub fn total_mass(&self) -> f64 {
        self.mass(40.0)
    }

    /// C = 1 / (mass of the states).
    pub fn normalization(&self) -> f64 {
        1.0 / self.total_mass()
    }

    /// Truncated credible radius: mass(r)/total = alpha.
    pub fn truncated_radius(&self, alpha: f64) -> f64 {
        let total = self.total_mass();
        let (mut lo, mut hi) = (0.0, 40.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.mass(mid) / total < alpha {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

/// Qubit state diag(1/2 + δ/√2, 1/2 − δ/√2), at HS distance δ from I/2.
pub fn qubit_on_axis(delta: f64) -> qst_regions::statespace::DensityOperator {
    let h = delta * std::f64::consts::FRAC_1_SQRT_2;
    qst_regions::statespace::DensityOperator::from_diagonal(&[0.5 + h, 0.5 - h]).unwrap()
}
