use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use qst_regions::bayes::{self, GaussianPosterior};
use qst_regions::ellipsoid::{check_containment, ContainmentOptions, StateEllipsoid};
use qst_regions::hardness::{self, BalancedSumEncoding, BalancedSumInstance};
use qst_regions::json::complex_matrix_to_json;
use qst_regions::specialfn::mvcr_radius;
use qst_regions::statespace::{DensityOperator, GellMannBasis};
use qst_regions::tomography::{self, MeasurementDesign, OutcomeEllipsoid, SimulatedData};

#[derive(Parser, Debug)]
#[command(name = "qst-regions", version, about = "Error regions for quantum state tomography")]
struct Cli {
    /// Also write the output document to this file.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generalized Gell-Mann basis of dimension d.
    Basis {
        #[arg(long)]
        dim: usize,
    },
    /// Least-squares state estimate from outcome frequencies.
    LinearInversion {
        #[command(flatten)]
        design: DesignArgs,
        /// JSON array of frequencies, or the output of `simulate`.
        #[arg(long)]
        data: PathBuf,
    },
    /// Maps an outcome-space ellipsoid to a state-space ellipsoid.
    ConfidenceEllipsoid {
        #[command(flatten)]
        design: DesignArgs,
        #[arg(long)]
        outcome: PathBuf,
    },
    /// Decides whether an ellipsoid lies inside the quantum states.
    CheckContainment {
        /// Ellipsoid JSON, or an encoding that embeds one.
        #[arg(long)]
        ellipsoid: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 32)]
        restarts: usize,
        #[arg(long, default_value_t = 24)]
        grid_depth: usize,
        #[arg(long, default_value_t = qst_regions::ellipsoid::DEFAULT_CERTIFY_MARGIN)]
        certify_margin: f64,
        #[arg(long)]
        restrict_real: bool,
    },
    /// Encodes a balanced-sum instance as a state ellipsoid.
    EncodeInstance {
        #[arg(long, value_delimiter = ',', required = true)]
        a: Vec<u64>,
    },
    /// Exact balanced-sum solver.
    SolveBalancedSum {
        #[arg(long, value_delimiter = ',', required = true)]
        a: Vec<u64>,
    },
    /// Answers the balanced-sum question for an encoding via containment.
    DecideGeometry {
        encoding: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Radius of the minimum-volume credible ball of a standard Gaussian.
    MvcrRadius {
        /// Number of Gaussian parameters N.
        #[arg(long)]
        dim: u32,
        #[arg(long)]
        alpha: f64,
        #[arg(long, default_value_t = 1e-9)]
        delta: f64,
    },
    /// Credible radius of a Gaussian posterior truncated to the states.
    TruncatedMvcr {
        #[arg(long)]
        posterior: PathBuf,
        #[arg(long)]
        alpha: f64,
        #[arg(long, default_value_t = bayes::DEFAULT_SAMPLES)]
        samples: usize,
        #[arg(long)]
        seed: u64,
    },
    /// Runs the credible-radius criterion on an encoded balanced-sum instance.
    VerifyCriterion {
        #[arg(long, value_delimiter = ',', required = true)]
        a: Vec<u64>,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = bayes::DEFAULT_SAMPLES)]
        samples: usize,
    },
    /// Simulates binomial outcome counts.
    Simulate {
        #[command(flatten)]
        design: DesignArgs,
        #[arg(long)]
        state: PathBuf,
        #[arg(long)]
        shots: i64,
        #[arg(long)]
        seed: u64,
    },
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum Builtin {
    Generators,
    Projective,
}

#[derive(Args, Debug)]
struct DesignArgs {
    /// Design JSON file.
    #[arg(long, conflicts_with = "builtin")]
    design: Option<PathBuf>,
    #[arg(long, requires = "dim")]
    builtin: Option<Builtin>,
    #[arg(long)]
    dim: Option<usize>,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Basis { .. } => "basis",
            Command::LinearInversion { .. } => "linear-inversion",
            Command::ConfidenceEllipsoid { .. } => "confidence-ellipsoid",
            Command::CheckContainment { .. } => "check-containment",
            Command::EncodeInstance { .. } => "encode-instance",
            Command::SolveBalancedSum { .. } => "solve-balanced-sum",
            Command::DecideGeometry { .. } => "decide-geometry",
            Command::MvcrRadius { .. } => "mvcr-radius",
            Command::TruncatedMvcr { .. } => "truncated-mvcr",
            Command::VerifyCriterion { .. } => "verify-criterion",
            Command::Simulate { .. } => "simulate",
        }
    }

    fn seed(&self) -> Option<u64> {
        match self {
            Command::CheckContainment { seed, .. }
            | Command::DecideGeometry { seed, .. }
            | Command::TruncatedMvcr { seed, .. }
            | Command::VerifyCriterion { seed, .. }
            | Command::Simulate { seed, .. } => Some(*seed),
            _ => None,
        }
    }
}

struct Failure {
    code: u8,
    kind: String,
    message: String,
}

impl From<qst_regions::error::Error> for Failure {
    fn from(e: qst_regions::error::Error) -> Self {
        Failure { code: if e.is_numeric_failure() { 3 } else { 2 }, kind: e.kind().to_string(), message: e.to_string() }
    }
}

fn input_error(kind: &str, message: String) -> Failure {
    Failure { code: 2, kind: kind.to_string(), message }
}

#[derive(Serialize)]
struct Envelope<'a> {
    command: &'a str,
    version: &'a str,
    seed: Option<u64>,
    result: Value,
    diagnostics: Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<Value>,
}

type Outcome = Result<(Value, Value), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let _ = e.print();
            let env = Envelope {
                command: "",
                version: qst_regions::VERSION,
                seed: None,
                result: Value::Null,
                diagnostics: json!({}),
                error: Some(json!({"kind": "invalid-arguments", "message": e.kind().to_string()})),
            };
            println!("{}", serde_json::to_string_pretty(&env).expect("serializable"));
            return ExitCode::from(2);
        }
    };
    let name = cli.command.name();
    let seed = cli.command.seed();
    let (env, code) = match run(&cli.command) {
        Ok((result, diagnostics)) => (
            Envelope { command: name, version: qst_regions::VERSION, seed, result, diagnostics, error: None },
            0,
        ),
        Err(f) => {
            eprintln!("error: {}", f.message);
            (
                Envelope {
                    command: name,
                    version: qst_regions::VERSION,
                    seed,
                    result: Value::Null,
                    diagnostics: json!({}),
                    error: Some(json!({"kind": f.kind, "message": f.message})),
                },
                f.code,
            )
        }
    };
    let text = serde_json::to_string_pretty(&env).expect("serializable");
    println!("{text}");
    if let Some(path) = &cli.out {
        if let Err(e) = fs::write(path, format!("{text}\n")) {
            eprintln!("error: cannot write {}: {e}", path.display());
            return ExitCode::from(2);
        }
    }
    ExitCode::from(code)
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("serializable")
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = fs::read_to_string(path).map_err(|e| input_error("io", format!("cannot read {}: {e}", path.display())))?;
    let mut v: Value =
        serde_json::from_str(&text).map_err(|e| input_error("schema-violation", format!("{}: {e}", path.display())))?;
    // accept the output document of another command as input
    if let Value::Object(m) = &mut v {
        if m.contains_key("command") && m.contains_key("result") {
            v = m.remove("result").expect("checked");
        }
    }
    serde_json::from_value(v).map_err(|e| input_error("schema-violation", format!("{}: {e}", path.display())))
}

fn load_design(args: &DesignArgs) -> Result<MeasurementDesign, Failure> {
    match (&args.design, args.builtin) {
        (Some(path), None) => read_json(path),
        (None, Some(kind)) => {
            let dim = args.dim.ok_or_else(|| input_error("invalid-arguments", "--builtin needs --dim".into()))?;
            Ok(match kind {
                Builtin::Generators => MeasurementDesign::generators(dim)?,
                Builtin::Projective => MeasurementDesign::projective(dim)?,
            })
        }
        _ => Err(input_error("invalid-arguments", "give exactly one of --design or --builtin".into())),
    }
}

fn load_frequencies(path: &Path) -> Result<Vec<f64>, Failure> {
    let v: Value = read_json(path)?;
    let v = match v {
        Value::Object(ref m) if m.contains_key("y_hat") => m["y_hat"].clone(),
        other => other,
    };
    serde_json::from_value(v).map_err(|e| input_error("schema-violation", format!("{}: {e}", path.display())))
}

fn run(cmd: &Command) -> Outcome {
    match cmd {
        Command::Basis { dim } => {
            let basis = GellMannBasis::new(*dim)?;
            let matrices: Vec<_> = basis.matrices().iter().map(complex_matrix_to_json).collect();
            Ok((json!({"dim": dim, "count": basis.len(), "matrices": matrices}), json!({})))
        }
        Command::LinearInversion { design, data } => {
            let design = load_design(design)?;
            let y = load_frequencies(data)?;
            let rho = tomography::linear_inversion(&design, &y)?;
            let mineig = rho.mineig();
            Ok((json!({"state": rho, "mineig": mineig, "is_psd": rho.is_psd()}), json!({"settings": design.len()})))
        }
        Command::ConfidenceEllipsoid { design, outcome } => {
            let design = load_design(design)?;
            let oe: OutcomeEllipsoid = read_json(outcome)?;
            let e = tomography::confidence_ellipsoid(&design, &oe)?;
            Ok((to_value(&e), json!({"settings": design.len()})))
        }
        Command::CheckContainment { ellipsoid, seed, restarts, grid_depth, certify_margin, restrict_real } => {
            let mut v: Value = read_json(ellipsoid)?;
            if let Some(inner) = v.get_mut("ellipsoid") {
                v = inner.take();
            }
            let e: StateEllipsoid = serde_json::from_value(v)
                .map_err(|e| input_error("schema-violation", format!("{}: {e}", ellipsoid.display())))?;
            let opts = ContainmentOptions {
                restarts: *restarts,
                grid_depth: *grid_depth,
                certify_margin: *certify_margin,
                restrict_real: *restrict_real,
                seed: *seed,
            };
            let verdict = check_containment(&e, &opts)?;
            Ok((to_value(&verdict), json!({"options": opts})))
        }
        Command::EncodeInstance { a } => {
            let enc = hardness::encode(&BalancedSumInstance::new(a.clone())?)?;
            Ok((to_value(&enc), json!({})))
        }
        Command::SolveBalancedSum { a } => {
            let inst = BalancedSumInstance::new(a.clone())?;
            let partition = hardness::solve_balanced_sum(&inst)?;
            Ok((json!({"exists": partition.is_some(), "partition": partition}), json!({"dim": inst.dim()})))
        }
        Command::DecideGeometry { encoding, seed } => {
            let given: BalancedSumEncoding = read_json(encoding)?;
            let enc = hardness::encode(&given.instance)?;
            let drift = (enc.functional_gap - given.functional_gap).abs().max((enc.r1 - given.r1).abs());
            if drift > 1e-12 * enc.r1.abs().max(1.0) || enc.ellipsoid != given.ellipsoid {
                return Err(input_error("schema-violation", "encoding does not match its instance".into()));
            }
            let decision = hardness::decide_via_geometry(&enc, *seed)?;
            Ok((to_value(&decision), json!({"functional_gap": enc.functional_gap})))
        }
        Command::MvcrRadius { dim, alpha, delta } => {
            let sol = mvcr_radius(*dim, *alpha, *delta)?;
            Ok((to_value(&sol), json!({})))
        }
        Command::TruncatedMvcr { posterior, alpha, samples, seed } => {
            let post: GaussianPosterior = read_json(posterior)?;
            let t = bayes::estimate_normalization(&post, *samples, *seed)?;
            let pair = t.credible_radius_pair(*alpha, 0.0, *seed)?;
            Ok((
                json!({"normalization": t, "radii": pair}),
                json!({"samples": t.samples, "accepted": t.accepted}),
            ))
        }
        Command::VerifyCriterion { a, seed, samples } => {
            let v = bayes::verify_criterion(&BalancedSumInstance::new(a.clone())?, *samples, *seed)?;
            Ok((to_value(&v), json!({"samples": samples})))
        }
        Command::Simulate { design, state, shots, seed } => {
            let design = load_design(design)?;
            let rho: DensityOperator = read_json(state)?;
            let data: SimulatedData = tomography::simulate_counts(&design, &rho, *shots, *seed)?;
            Ok((to_value(&data), json!({"settings": design.len()})))
        }
    }
}
