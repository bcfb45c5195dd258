//! Encoding of balanced-sum instances as state ellipsoids.
//!
//! For a ∈ ℕ^d the encoded ellipsoid has center
//!
//! ```text
//! ϱ̂ = (q/d)·1 + ((1−q)/a²)·|a⟩⟨a|,      a² = Σ a_k²,
//! ```
//!
//! radius R1 along the X-block generators and R2 = ε·R1 along all others. The
//! constants are tuned so that, with ‖ψ‖² = d,
//!
//! ```text
//! κ² − Δ = 2(R1² − R2²)·(C1 − objective(ψ)),
//! κ = ⟨ψ|ϱ̂|ψ⟩,   Δ = R1² Σ_X v_i² + R2² Σ_{Y,Z} v_i²,
//! ```
//!
//! so the ellipsoid leaves the PSD cone iff some ψ pushes the objective above
//! C1, which happens iff a has a balanced partition.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::ellipsoid::{check_containment, ContainmentOptions, ContainmentStatus, ContainmentVerdict, Orientation, StateEllipsoid};
use crate::error::{Error, Result};
use crate::statespace::{CMatrix, DensityOperator, NormConvention, PureStateVector};

/// Largest instance handled by plain enumeration.
pub const EXHAUSTIVE_MAX: usize = 24;
/// Largest instance handled at all (meet in the middle).
pub const SOLVER_MAX: usize = 30;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<u64>", into = "Vec<u64>")]
pub struct BalancedSumInstance {
    a: Vec<u64>,
}

impl BalancedSumInstance {
    pub fn new(a: Vec<u64>) -> Result<Self> {
        if a.len() < 2 {
            return Err(Error::InvalidInstance(format!("need at least 2 entries, got {}", a.len())));
        }
        if a.contains(&0) {
            return Err(Error::InvalidInstance("entries must be positive integers".into()));
        }
        Ok(Self { a })
    }

    pub fn entries(&self) -> &[u64] {
        &self.a
    }

    pub fn dim(&self) -> usize {
        self.a.len()
    }

    /// a² = Σ a_k².
    pub fn norm_sqr(&self) -> f64 {
        self.a.iter().map(|&x| (x as f64) * (x as f64)).sum()
    }

    /// a·ψ
    pub fn dot(&self, psi: &[f64]) -> f64 {
        self.a.iter().zip(psi).map(|(&a, p)| a as f64 * p).sum()
    }

    /// Whether ψ ∈ {−1, 1}^d with a·ψ = 0.
    pub fn is_partition(&self, psi: &[i8]) -> bool {
        psi.len() == self.a.len()
            && psi.iter().all(|&s| s == 1 || s == -1)
            && self.a.iter().zip(psi).map(|(&a, &s)| a as i128 * s as i128).sum::<i128>() == 0
    }
}

impl TryFrom<Vec<u64>> for BalancedSumInstance {
    type Error = Error;
    fn try_from(a: Vec<u64>) -> Result<Self> {
        Self::new(a)
    }
}

impl From<BalancedSumInstance> for Vec<u64> {
    fn from(inst: BalancedSumInstance) -> Self {
        inst.a
    }
}

/// A sign vector ψ with a·ψ = 0, or `None`.
pub fn solve_balanced_sum(inst: &BalancedSumInstance) -> Result<Option<Vec<i8>>> {
    let d = inst.dim();
    if d > SOLVER_MAX {
        return Err(Error::InstanceTooLarge { size: d, max: SOLVER_MAX });
    }
    let total: u128 = inst.a.iter().map(|&x| x as u128).sum();
    if total % 2 == 1 {
        return Ok(None);
    }
    if d <= EXHAUSTIVE_MAX {
        Ok(enumerate(&inst.a))
    } else {
        Ok(meet_in_the_middle(&inst.a))
    }
}

/// Gray-code walk over signs of entries 1..d with ψ_0 = +1 fixed.
fn enumerate(a: &[u64]) -> Option<Vec<i8>> {
    let d = a.len();
    let mut signs = vec![1i8; d];
    let mut sum: i128 = a.iter().map(|&x| x as i128).sum();
    if sum == 0 {
        return Some(signs);
    }
    for step in 1u64..(1u64 << (d - 1)) {
        let bit = step.trailing_zeros() as usize + 1;
        signs[bit] = -signs[bit];
        sum += 2 * signs[bit] as i128 * a[bit] as i128;
        if sum == 0 {
            return Some(signs);
        }
    }
    None
}

fn half_sums(a: &[u64]) -> Vec<(i128, u64)> {
    (0..(1u64 << a.len()))
        .map(|mask| {
            let s = a
                .iter()
                .enumerate()
                .map(|(i, &x)| if mask >> i & 1 == 1 { -(x as i128) } else { x as i128 })
                .sum();
            (s, mask)
        })
        .collect()
}

fn meet_in_the_middle(a: &[u64]) -> Option<Vec<i8>> {
    let mid = a.len() / 2;
    let left = half_sums(&a[..mid]);
    let mut right = half_sums(&a[mid..]);
    right.sort_unstable();
    for &(s, lmask) in &left {
        let idx = right.partition_point(|&(r, _)| r < -s);
        if idx < right.len() && right[idx].0 == -s {
            let rmask = right[idx].1;
            let mut signs = Vec::with_capacity(a.len());
            signs.extend((0..mid).map(|i| if lmask >> i & 1 == 1 { -1 } else { 1 }));
            signs.extend((0..a.len() - mid).map(|i| if rmask >> i & 1 == 1 { -1 } else { 1 }));
            return Some(signs);
        }
    }
    None
}

/// p(x) = 2x⁴.
pub fn p_poly(x: f64) -> f64 {
    2.0 * x.powi(4)
}

/// All constants of the encoding together with the resulting ellipsoid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalancedSumEncoding {
    pub instance: BalancedSumInstance,
    pub dim: usize,
    /// a² = Σ a_k².
    pub a_norm_sqr: f64,
    pub eps_sqr: f64,
    pub r1: f64,
    pub r2: f64,
    pub q: f64,
    pub b1: f64,
    pub b2: f64,
    pub c1: f64,
    pub c2: f64,
    /// Separation 2/p(a·d) of the objective between solvable and unsolvable instances.
    pub gap: f64,
    /// Lower bound on the positivity functional (unit-norm Ψ) when no partition exists.
    pub functional_gap: f64,
    /// Certified lower bound on −mineig of the witness state when a partition exists.
    pub violation_bound: f64,
    /// Residual of the relation √2·√((d²−d−B1)(1−ε²) + d(d−1)ε²)·R1 = q.
    pub equivalence_residual: f64,
    /// Residual between C1 = 2d² − d − 1/p(ad) and C1 from its defining relation.
    pub c1_residual: f64,
    pub ellipsoid: StateEllipsoid,
}

pub fn encode(inst: &BalancedSumInstance) -> Result<BalancedSumEncoding> {
    let d = inst.dim();
    let df = d as f64;
    let a2 = inst.norm_sqr();
    let ad = a2.sqrt() * df;
    let pad = p_poly(ad);
    let b1 = 1.0 / pad;
    let b2 = df * a2 / (1.0 + a2);
    let eps_sqr = 1.0 / (2.0 * df - 1.0);
    let dd = df * (df - 1.0);
    let num = dd - b1 * (1.0 - eps_sqr);
    let den = dd - (b1 - b2) * (1.0 - eps_sqr);
    let r1 = num.sqrt() / (std::f64::consts::SQRT_2 * den);
    let q = num / den;
    let r2 = eps_sqr.sqrt() * r1;
    let big_d = r1 * r1 - r2 * r2;
    let c2 = (1.0 - q).powi(2) / (2.0 * a2 * a2 * big_d);
    let c1 = 2.0 * df * df - df - b1;
    let c1_def = df * df + (0.5 * q * q - dd * r2 * r2) / big_d;
    let equivalence = std::f64::consts::SQRT_2 * ((df * df - df - b1) * (1.0 - eps_sqr) + dd * eps_sqr).sqrt() * r1;

    let mut center = CMatrix::identity(d, d) * Complex64::new(q / df, 0.0);
    for i in 0..d {
        for j in 0..d {
            center[(i, j)] += Complex64::new((1.0 - q) * inst.a[i] as f64 * inst.a[j] as f64 / a2, 0.0);
        }
    }
    let center = DensityOperator::new(center)?;
    let n = d * d - 1;
    let id = d * (d - 1) / 2;
    let radii: Vec<f64> = (0..n).map(|i| if i < id { r1 } else { r2 }).collect();
    let ellipsoid = StateEllipsoid::new(center, radii, Orientation::Identity)?;

    let g = 2.0 * big_d / pad;
    let lambda_max = q / df + (1.0 - q);
    let functional_gap = g / (2.0 * df * df * lambda_max);
    let violation_bound = (big_d / (2.0 * df * q * pad)).min(2.0 * q / df);

    Ok(BalancedSumEncoding {
        instance: inst.clone(),
        dim: d,
        a_norm_sqr: a2,
        eps_sqr,
        r1,
        r2,
        q,
        b1,
        b2,
        c1,
        c2,
        gap: 2.0 / pad,
        functional_gap,
        violation_bound,
        equivalence_residual: (equivalence - q).abs(),
        c1_residual: (c1 - c1_def).abs(),
        ellipsoid,
    })
}

impl BalancedSumEncoding {
    /// Positivity functional at a partition vector, −(q/d)(√(1 + G/q²) − 1)
    /// with G = 2(R1² − R2²)/p(ad).
    pub fn partition_functional(&self) -> f64 {
        let df = self.dim as f64;
        let g = 2.0 * (self.r1 * self.r1 - self.r2 * self.r2) * self.b1;
        -(self.q / df) * ((1.0 + g / (self.q * self.q)).sqrt() - 1.0)
    }
}

/// f(ψ) − C2·(a·ψ)⁴ with f(ψ) = 2d² − Σψ_k⁴ − 2d(a·ψ)²/(1 + a²); needs ‖ψ‖² = d.
pub fn objective(enc: &BalancedSumEncoding, psi: &[f64]) -> Result<f64> {
    let d = enc.dim;
    if psi.len() != d {
        return Err(Error::DimensionMismatch { expected: d, found: psi.len() });
    }
    let df = d as f64;
    let norm = psi.iter().map(|x| x * x).sum::<f64>();
    if (norm - df).abs() > 1e-9 * df {
        return Err(Error::WrongNorm { expected: df, found: norm });
    }
    let s = enc.instance.dot(psi);
    let quartic: f64 = psi.iter().map(|x| x.powi(4)).sum();
    Ok(2.0 * df * df - quartic - 2.0 * df * s * s / (1.0 + enc.a_norm_sqr) - enc.c2 * s.powi(4))
}

/// The worst state of the ellipsoid for Ψ = ψ/√d at a partition vector ψ.
pub fn violation_witness(enc: &BalancedSumEncoding, psi: &[i8]) -> Result<DensityOperator> {
    if !enc.instance.is_partition(psi) {
        return Err(Error::InvalidWitnessInput);
    }
    let values: Vec<f64> = psi.iter().map(|&s| s as f64).collect();
    let state = PureStateVector::from_real(&values, NormConvention::Unit)?;
    let u = enc.ellipsoid.minimizing_u(&state)?;
    enc.ellipsoid.point_at(&u)
}

/// Geometric answer to the balanced-sum question together with the verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometricDecision {
    pub partition_exists: bool,
    pub verdict: ContainmentVerdict,
}

/// Real-restricted containment check with certification threshold half the
/// functional gap; an undecided verdict is an error, never a guess.
pub fn decide_via_geometry(enc: &BalancedSumEncoding, seed: u64) -> Result<GeometricDecision> {
    let opts = ContainmentOptions {
        certify_margin: 0.5 * enc.functional_gap,
        restrict_real: true,
        seed,
        ..ContainmentOptions::default()
    };
    let verdict = check_containment(&enc.ellipsoid, &opts)?;
    match verdict.status {
        ContainmentStatus::Violated => Ok(GeometricDecision { partition_exists: true, verdict }),
        ContainmentStatus::ContainedCertified => Ok(GeometricDecision { partition_exists: false, verdict }),
        ContainmentStatus::Undecided => Err(Error::ResolutionFailure { margin: verdict.margin }),
    }
}
