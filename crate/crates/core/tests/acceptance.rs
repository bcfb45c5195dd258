//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use qst_regions::bayes::{self, CriterionOutcome, GaussianPosterior};
use qst_regions::ellipsoid::{self, check_containment, ContainmentOptions, ContainmentStatus, StateEllipsoid};
use qst_regions::hardness::{self, BalancedSumInstance};
use qst_regions::rng;
use qst_regions::specialfn::{mvcr_radius, reg_inc_gamma};
use qst_regions::statespace::{random_density_operator, CMatrix, DensityOperator, GellMannBasis};
use qst_regions::tomography::{self, MeasurementDesign, OutcomeEllipsoid};

const BASIS_TOL: f64 = 1e-12;
const THRESHOLD_TOL: f64 = 1e-12;
const SPHERE_CENTERS: usize = 200;
const OBJECTIVE_TOL: f64 = 1e-9;
const EQUIV_TOL: f64 = 1e-10;
const RANDOM_INSTANCES: usize = 100;
const CLOSED_FORM_TOL: f64 = 1e-12;
const CLOSED_FORM_POINTS: usize = 1000;
const GAMMA_TARGET: f64 = 1e-12;
const QUADRATURE_POINTS: usize = 300;
/// Accuracy of the quadrature oracle, checked against 30-digit reference values.
const ORACLE_ACCURACY: f64 = 5e-14;
const RADIUS_TRIPLES: usize = 500;
const MC_SAMPLES: usize = 1_000_000;
const SIGMAS: f64 = 3.0;
const INVERSION_TOL: f64 = 1e-10;
const SURFACE_TOL: f64 = 1e-8;

type Outcome = Result<String, String>;

struct Suite {
    failed: usize,
}

impl Suite {
    fn run(&mut self, id: &str, title: &str, limit: Duration, f: impl FnOnce() -> Outcome) {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        self.report(id, title, limit, start.elapsed(), outcome);
    }

    fn report(&mut self, id: &str, title: &str, limit: Duration, elapsed: Duration, outcome: Outcome) {
        let outcome = match outcome {
            Ok(detail) if elapsed > limit => Err(format!("{detail}; runtime {elapsed:.1?} exceeds {limit:?}")),
            other => other,
        };
        match outcome {
            Ok(detail) => println!("PASS {id} {title}: {detail} [{elapsed:.2?}]"),
            Err(detail) => {
                self.failed += 1;
                println!("FAIL {id} {title}: {detail} [{elapsed:.2?}]");
            }
        }
    }
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn pauli() -> [CMatrix; 3] {
    let c = |re: f64, im: f64| Complex64::new(re, im);
    [
        CMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)]),
        CMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(0.0, -1.0), c(0.0, 1.0), c(0.0, 0.0)]),
        CMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(-1.0, 0.0)]),
    ]
}

fn criterion_1() -> Outcome {
    let mut worst = 0.0_f64;
    for d in 2..=6 {
        let basis = GellMannBasis::new(d).map_err(|e| e.to_string())?;
        let ms = basis.matrices();
        check(ms.len() == d * d - 1, || format!("d={d}: {} generators", ms.len()))?;
        for (i, a) in ms.iter().enumerate() {
            worst = worst.max((a - a.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max));
            worst = worst.max(a.trace().norm());
            for (j, b) in ms.iter().enumerate() {
                let expected = if i == j { 2.0 } else { 0.0 };
                worst = worst.max(((a * b).trace() - Complex64::new(expected, 0.0)).norm());
            }
        }
    }
    check(worst <= BASIS_TOL, || format!("max deviation {worst:e} > {BASIS_TOL:e}"))?;
    let qubit = GellMannBasis::new(2).unwrap();
    check(qubit.matrices() == pauli().as_slice(), || "d=2 generators differ from the Pauli matrices".into())?;
    Ok(format!("d=2..6, max deviation {worst:.1e}, d=2 equals Pauli exactly"))
}

fn criterion_2() -> Outcome {
    let mut worst = 0.0_f64;
    for d in 2..=6usize {
        let df = d as f64;
        let t = ellipsoid::sphere_threshold(&DensityOperator::maximally_mixed(d).unwrap());
        worst = worst.max((t - (1.0 / (2.0 * df * (df - 1.0))).sqrt()).abs());
    }
    check(worst <= THRESHOLD_TOL, || format!("threshold deviation {worst:e}"))?;
    let (mut disagreements, mut undecided) = (0, 0);
    for i in 0..SPHERE_CENTERS {
        let mut r = rng::stream(2, i as u64);
        let d = if i < SPHERE_CENTERS / 2 { 2 } else { 3 };
        let center = random_density_operator(d, &mut r);
        let factor = if i % 2 == 0 { r.random_range(0.5..0.9) } else { r.random_range(1.1..1.5) };
        let radius = factor * ellipsoid::sphere_threshold(&center);
        let closed = ellipsoid::sphere_contained_in_psd(&center, radius).unwrap();
        let e = StateEllipsoid::isotropic(center, radius).unwrap();
        let opts = ContainmentOptions { seed: i as u64, ..ContainmentOptions::default() };
        match check_containment(&e, &opts).map_err(|e| e.to_string())?.status {
            ContainmentStatus::Undecided => undecided += 1,
            ContainmentStatus::ContainedCertified if !closed => disagreements += 1,
            ContainmentStatus::Violated if closed => disagreements += 1,
            _ => {}
        }
    }
    check(disagreements == 0 && undecided == 0, || {
        format!("{disagreements} disagreements, {undecided} undecided of {SPHERE_CENTERS}")
    })?;
    Ok(format!("threshold deviation {worst:.1e}; {SPHERE_CENTERS} random centers, 0 disagreements, 0 undecided"))
}

fn all_instances(d: usize, max_entry: u64) -> Vec<Vec<u64>> {
    let mut out = vec![vec![]];
    for _ in 0..d {
        out = out
            .into_iter()
            .flat_map(|v| {
                (1..=max_entry).map(move |x| {
                    let mut w = v.clone();
                    w.push(x);
                    w
                })
            })
            .collect();
    }
    out
}

fn sign_vectors(d: usize) -> impl Iterator<Item = Vec<i8>> {
    (0..1u32 << d).map(move |m| (0..d).map(|k| if m >> k & 1 == 1 { -1 } else { 1 }).collect())
}

fn reduction_instances() -> Vec<Vec<u64>> {
    let mut list: Vec<Vec<u64>> = (2..=4).flat_map(|d| all_instances(d, 3)).collect();
    for i in 0..RANDOM_INSTANCES {
        let mut r = rng::stream(3, i as u64);
        let d = r.random_range(2..=6);
        list.push((0..d).map(|_| r.random_range(1..=4)).collect());
    }
    list
}

/// Criteria 3 and 4 share the instance sweep.
fn criteria_3_and_4() -> (Outcome, Outcome) {
    let instances = reduction_instances();
    let mut disagreements = Vec::new();
    let (mut worst_obj, mut worst_equiv, mut partitions) = (0.0_f64, 0.0_f64, 0usize);
    let (mut solvable, mut witness_failures, mut min_slack) = (0usize, Vec::new(), f64::INFINITY);
    for (i, a) in instances.iter().enumerate() {
        let inst = BalancedSumInstance::new(a.clone()).unwrap();
        let enc = hardness::encode(&inst).unwrap();
        let oracle = hardness::solve_balanced_sum(&inst).unwrap();
        let geometric = hardness::decide_via_geometry(&enc, i as u64);
        match geometric {
            Ok(g) if g.partition_exists == oracle.is_some() => {}
            Ok(_) => disagreements.push(format!("{a:?}")),
            Err(e) => disagreements.push(format!("{a:?}: {e}")),
        }
        let d = a.len();
        let df = d as f64;
        for psi in sign_vectors(d).filter(|p| inst.is_partition(p)) {
            let v: Vec<f64> = psi.iter().map(|&s| s as f64).collect();
            let f = hardness::objective(&enc, &v).unwrap();
            worst_obj = worst_obj.max((f - (2.0 * df * df - df)).abs());
            partitions += 1;
        }
        let lhs = std::f64::consts::SQRT_2
            * ((df * df - df - enc.b1) * (1.0 - enc.eps_sqr) + df * (df - 1.0) * enc.eps_sqr).sqrt()
            * enc.r1;
        worst_equiv = worst_equiv.max((lhs - enc.q).abs());
        if let Some(p) = &oracle {
            solvable += 1;
            let w = hardness::violation_witness(&enc, p).unwrap();
            let slack = -w.mineig() - enc.violation_bound;
            min_slack = min_slack.min(slack / enc.violation_bound);
            if !(enc.violation_bound > 0.0 && w.mineig() <= -enc.violation_bound) {
                witness_failures.push(format!("{a:?}: mineig {:e}, bound {:e}", w.mineig(), enc.violation_bound));
            }
        }
    }
    let c3 = if !disagreements.is_empty() {
        Err(format!("{} disagreements, first {}", disagreements.len(), disagreements[0]))
    } else if worst_obj > OBJECTIVE_TOL {
        Err(format!("objective deviation {worst_obj:e}"))
    } else if worst_equiv > EQUIV_TOL {
        Err(format!("equivalence residual {worst_equiv:e}"))
    } else {
        Ok(format!(
            "{} instances, 0 disagreements; objective at {partitions} partition vectors within {worst_obj:.1e}; \
             equivalence residual {worst_equiv:.1e}",
            instances.len()
        ))
    };
    let c4 = if witness_failures.is_empty() {
        Ok(format!("{solvable} solvable instances, every witness below -violation_bound (min relative slack {min_slack:.2})"))
    } else {
        Err(format!("{} failures, first {}", witness_failures.len(), witness_failures[0]))
    };
    (c3, c4)
}

fn criterion_5() -> Outcome {
    let mut worst_closed = 0.0_f64;
    for i in 0..CLOSED_FORM_POINTS {
        let x = 50.0 * (i as f64 + 0.5) / CLOSED_FORM_POINTS as f64;
        let p1 = reg_inc_gamma(1.0, x, GAMMA_TARGET).map_err(|e| e.to_string())?.value;
        let ph = reg_inc_gamma(0.5, x, GAMMA_TARGET).map_err(|e| e.to_string())?.value;
        worst_closed = worst_closed.max((p1 + (-x).exp_m1()).abs()).max((ph - libm::erf(x.sqrt())).abs());
    }
    check(worst_closed <= CLOSED_FORM_TOL, || format!("closed-form deviation {worst_closed:e}"))?;

    let mut r = rng::stream(5, 0);
    let mut violations = Vec::new();
    let mut worst_ratio = 0.0_f64;
    for _ in 0..QUADRATURE_POINTS {
        let a = (r.random_range(0.5f64.ln()..50f64.ln())).exp();
        let x = r.random_range(0.0..(4.0 * a + 20.0));
        let g = reg_inc_gamma(a, x, GAMMA_TARGET).map_err(|e| e.to_string())?;
        let oracle = common::gamma_p(a, x);
        let allowed = g.error_bound + ORACLE_ACCURACY;
        let err = (g.value - oracle).abs();
        worst_ratio = worst_ratio.max(err / allowed);
        if err > allowed {
            violations.push(format!("a={a}, x={x}: |err| {err:e} > bound {:e}", g.error_bound));
        }
    }
    check(violations.is_empty(), || format!("{} bound violations, first {}", violations.len(), violations[0]))?;

    let mut worst_radius = 0.0_f64;
    for i in 0..RADIUS_TRIPLES {
        let mut r = rng::stream(55, i as u64);
        let n = r.random_range(1..=40u32);
        let alpha = r.random_range(0.001..0.999);
        let k = (r.random_range(10f64.ln()..1e9f64.ln())).exp().round();
        let delta = 1.0 / k;
        let sol = mvcr_radius(n, alpha, delta).map_err(|e| format!("N={n}, α={alpha}, δ={delta}: {e}"))?;
        let p = common::gamma_p(n as f64 / 2.0, 0.5 * sol.radius * sol.radius);
        let miss = (p - alpha).abs();
        worst_radius = worst_radius.max(miss / delta);
        check(miss <= delta, || format!("N={n}, α={alpha}, δ={delta}: |P − α| = {miss:e}"))?;
    }
    Ok(format!(
        "closed forms within {worst_closed:.1e} on {CLOSED_FORM_POINTS} points; {QUADRATURE_POINTS} quadrature checks, \
         worst error/bound {worst_ratio:.2}; {RADIUS_TRIPLES} radii, worst |P − α|/δ {worst_radius:.2}"
    ))
}

fn criterion_6() -> Outcome {
    let cases = [(0.0, 0.2, 0.9), (0.0, 0.5, 0.9), (0.35, 0.3, 0.8), (std::f64::consts::FRAC_1_SQRT_2, 0.1, 0.9), (std::f64::consts::FRAC_1_SQRT_2, 0.4, 0.5)];
    let mut lines = Vec::new();
    for (i, &(delta, s, alpha)) in cases.iter().enumerate() {
        let post = GaussianPosterior::isotropic(common::qubit_on_axis(delta), s).unwrap();
        let t = bayes::estimate_normalization(&post, MC_SAMPLES, 60 + i as u64).map_err(|e| e.to_string())?;
        let pair = t.credible_radius_pair(alpha, 0.0, 60 + i as u64).map_err(|e| e.to_string())?;
        let oracle = common::QubitRadialOracle { delta, s };
        let c_ref = oracle.normalization();
        let r_ref = oracle.truncated_radius(alpha);
        let zc = (t.c - c_ref).abs() / t.c_stderr.max(f64::MIN_POSITIVE);
        let zr = (pair.r_truncated - r_ref).abs() / pair.r_truncated_error;
        check(t.c >= 1.0, || format!("case {i}: C = {} < 1", t.c))?;
        check(zc <= SIGMAS || (t.c - c_ref).abs() < 1e-12, || format!("case {i}: C {} vs oracle {c_ref} ({zc:.1}σ)", t.c))?;
        check(zr <= SIGMAS, || format!("case {i}: r⁺ {} vs oracle {r_ref} ({zr:.1}σ)", pair.r_truncated))?;
        lines.push(format!("δ={delta:.2},s={s}: C {:.4}/{c_ref:.4} ({zc:.1}σ), r⁺ {:.4}/{r_ref:.4} ({zr:.1}σ)", t.c, pair.r_truncated));
    }
    Ok(lines.join("; "))
}

fn criterion_7(a: &[u64], expected: CriterionOutcome) -> Outcome {
    let inst = BalancedSumInstance::new(a.to_vec()).unwrap();
    let v = bayes::verify_criterion(&inst, MC_SAMPLES, 7).map_err(|e| e.to_string())?;
    let pair = v.report.pair.as_ref();
    let detail = format!(
        "criterion {:?}, r⁺ − r_(α/C) = {:.3e}, threshold {:.3e} (gap {:.3e}), solver partition {:?}, geometric {}",
        v.criterion,
        pair.map_or(f64::NAN, |p| p.difference),
        pair.map_or(f64::NAN, |p| p.threshold),
        v.gap,
        v.partition,
        v.geometric_partition_exists,
    );
    if v.criterion == expected && v.consistent {
        Ok(detail)
    } else {
        Err(format!("expected {expected:?}; {detail}"))
    }
}

fn random_spd(n: usize, r: &mut impl Rng) -> DMatrix<f64> {
    let g = DMatrix::<f64>::from_fn(n, n, |_, _| r.sample(StandardNormal));
    &g * g.transpose() + DMatrix::identity(n, n) * 0.5
}

fn criterion_8() -> Outcome {
    let mut worst_inv = 0.0_f64;
    let mut worst_surface = 0.0_f64;
    for d in [2usize, 3] {
        let mut r = rng::stream(8, d as u64);
        for design in [MeasurementDesign::generators(d).unwrap(), MeasurementDesign::projective(d).unwrap()] {
            for _ in 0..20 {
                let rho = random_density_operator(d, &mut r);
                let y = design.forward(&rho).unwrap();
                let est = tomography::linear_inversion(&design, &y).unwrap();
                worst_inv = worst_inv.max(est.frobenius_distance(&rho));
            }
        }
        let design = MeasurementDesign::generators(d).unwrap();
        let m = design.len();
        check(m == d * d - 1, || format!("minimal design has {m} settings"))?;
        let rho = random_density_operator(d, &mut r);
        let center = design.forward(&rho).unwrap();
        let shape = random_spd(m, &mut r) * 1e3;
        let oe = OutcomeEllipsoid::new(center, shape).unwrap();
        let e = tomography::confidence_ellipsoid(&design, &oe).unwrap();
        for _ in 0..100 {
            let mut u: Vec<f64> = (0..m).map(|_| r.sample(StandardNormal)).collect();
            let n = u.iter().map(|x| x * x).sum::<f64>().sqrt();
            u.iter_mut().for_each(|x| *x /= n);
            let y = design.forward(&e.point_at(&u).unwrap()).unwrap();
            worst_surface = worst_surface.max((oe.quadratic(&y) - 1.0).abs());
        }
    }
    check(worst_inv <= INVERSION_TOL, || format!("inversion error {worst_inv:e}"))?;
    check(worst_surface <= SURFACE_TOL, || format!("surface deviation {worst_surface:e}"))?;
    Ok(format!("inversion error {worst_inv:.1e}; boundary maps to outcome surface within {worst_surface:.1e}"))
}

fn main() -> ExitCode {
    let mut suite = Suite { failed: 0 };
    let secs = Duration::from_secs;
    suite.run("1", "basis suite", secs(1), criterion_1);
    suite.run("2", "sphere criterion", secs(120), criterion_2);
    let start = Instant::now();
    let (c3, c4) = catch_unwind(criteria_3_and_4).unwrap_or_else(|_| (Err("panicked".into()), Err("panicked".into())));
    let spent = start.elapsed();
    suite.report("3", "reduction correctness", secs(600), spent, c3);
    suite.report("4", "witness suite", secs(600), spent, c4);
    suite.run("5", "gamma suite", secs(60), criterion_5);
    suite.run("6", "truncated-Gaussian suite", secs(300), criterion_6);
    suite.run("7a", "criterion end-to-end, a=(1,2)", secs(300), || criterion_7(&[1, 2], CriterionOutcome::Equal));
    suite.run("7b", "criterion end-to-end, a=(1,1)", secs(300), || criterion_7(&[1, 1], CriterionOutcome::StrictlyGreater));
    suite.run("8", "tomography round-trip", secs(60), criterion_8);
    println!("acceptance: {} failed", suite.failed);
    if suite.failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
