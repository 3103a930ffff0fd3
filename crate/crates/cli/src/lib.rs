//! Command-line front end. `run_command` is the whole program; `main` only
//! forwards the process arguments and exit code.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use subradius::access::{perturb_reduce, verify_certificate, z_delta_profile, PerturbConfig};
use subradius::barabanov::{compute_barabanov, compute_upper_barabanov, BarabanovConfig};
use subradius::domination::{
    find_multicone_2d, least_domination_index, test_domination, DominationConfig, MulticoneConfig, MulticoneSearch,
    Verdict,
};
use subradius::estimators::{subradius_bracket, upper_radius_bracket, BracketConfig, DEFAULT_BUDGET};
use subradius::io::{load_certificate, load_matrix_set, matrix_set_to_json, sha256_hex, to_canonical_json, RunRecord};
use subradius::probe::{
    continuity_check, gallery, resists_impurities_probe, rotation_scan, Continuity, ContinuityConfig, GallerySpec,
};
use subradius::{Error, MatrixSet};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_UNDETERMINED: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "subradius", version, about = "Lower spectral radius brackets and certificates")]
struct Cli {
    /// Write the JSON report here instead of stdout; a run record goes to `<out>.run.json`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Optional CSV output, where the command has one.
    #[arg(long, global = true)]
    csv: Option<PathBuf>,
    /// Exit with status 2 on undetermined verdicts.
    #[arg(long, global = true)]
    strict: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct SetArg {
    /// Matrix-set JSON file.
    #[arg(long)]
    set: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Brackets for the lower (and optionally upper) spectral radius.
    Bracket {
        #[command(flatten)]
        set: SetArg,
        #[arg(long, default_value_t = 12)]
        n_max: usize,
        #[arg(long, default_value_t = DEFAULT_BUDGET)]
        budget: u64,
        /// Also bracket the upper spectral radius.
        #[arg(long)]
        upper: bool,
        #[arg(long)]
        no_fast_path: bool,
    },
    /// Domination reports per k and the least domination index.
    Dominate {
        #[command(flatten)]
        set: SetArg,
        #[arg(long, default_value_t = 10)]
        n_max: usize,
        /// Test a single index instead of all.
        #[arg(long)]
        k: Option<usize>,
    },
    /// Barabanov function on a multicone (planar sets).
    Barabanov {
        #[command(flatten)]
        set: SetArg,
        #[arg(long, default_value_t = 4096)]
        grid: usize,
        /// Upper variant instead of the lower one.
        #[arg(long)]
        upper: bool,
    },
    /// Area functional profile over words of a length range.
    Zeta {
        #[command(flatten)]
        set: SetArg,
        #[arg(long)]
        ell: usize,
        #[arg(long, default_value_t = 0.1)]
        delta: f64,
        #[arg(long, default_value_t = 1)]
        n_min: usize,
        #[arg(long, default_value_t = 8)]
        n_max: usize,
    },
    /// Perturbation certificates lowering the lower spectral radius.
    Perturb {
        #[command(flatten)]
        set: SetArg,
        #[arg(long)]
        epsilon: Option<f64>,
        /// Re-check this certificate against the set instead of searching.
        #[arg(long)]
        verify_cert: Option<PathBuf>,
    },
    /// Continuity verdicts, scans, gallery sets and the impurity probe.
    #[command(subcommand)]
    Probe(ProbeCommand),
}

#[derive(Subcommand, Debug)]
enum ProbeCommand {
    Continuity {
        #[command(flatten)]
        set: SetArg,
        #[arg(long, default_value_t = 12)]
        n_max: usize,
    },
    RotationScan {
        #[command(flatten)]
        set: SetArg,
        /// Comma-separated angles; overrides the uniform grid.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        thetas: Option<Vec<f64>>,
        #[arg(long, default_value_t = -0.05, allow_hyphen_values = true)]
        theta_min: f64,
        #[arg(long, default_value_t = 0.05)]
        theta_max: f64,
        #[arg(long, default_value_t = 11)]
        steps: usize,
        #[arg(long, default_value_t = 12)]
        n_max: usize,
    },
    /// Prints a named example set as a matrix-set file.
    Gallery {
        #[arg(long)]
        name: String,
        #[arg(long, default_value_t = 1)]
        n: u32,
        #[arg(long, default_value_t = 3)]
        p: u32,
        #[arg(long, default_value_t = 1, allow_hyphen_values = true)]
        q: i32,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 4)]
        m: u32,
        /// JSON parameters for block_direct_sum: {"b1", "b2", "lambda", "r1", "r2"}.
        #[arg(long)]
        params: Option<PathBuf>,
    },
    /// Needs a set with exactly two unit-determinant matrices `H`, `R`.
    Impurities {
        #[command(flatten)]
        set: SetArg,
        #[arg(long, value_delimiter = ',', default_value = "0,0.1,0.2")]
        eps: Vec<f64>,
        #[arg(long, default_value_t = 12)]
        n_max: usize,
    },
}

struct Outcome {
    report: String,
    csv: Option<String>,
    undetermined: bool,
    input: Option<PathBuf>,
    config: serde_json::Value,
}

impl Outcome {
    fn new<T: Serialize>(report: &T, config: serde_json::Value) -> Result<Self, Error> {
        Ok(Self {
            report: to_canonical_json(report)?,
            csv: None,
            undetermined: false,
            input: None,
            config,
        })
    }

    fn input(mut self, p: &Path) -> Self {
        self.input = Some(p.to_path_buf());
        self
    }
}

fn configure_threads() {
    if let Some(n) = std::env::var("SUBRADIUS_THREADS").ok().and_then(|s| s.parse::<usize>().ok()) {
        if n > 0 {
            // Fails only if a pool already exists, which keeps its own size.
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Bracket { .. } => "bracket",
        Command::Dominate { .. } => "dominate",
        Command::Barabanov { .. } => "barabanov",
        Command::Zeta { .. } => "zeta",
        Command::Perturb { .. } => "perturb",
        Command::Probe(ProbeCommand::Continuity { .. }) => "probe continuity",
        Command::Probe(ProbeCommand::RotationScan { .. }) => "probe rotation-scan",
        Command::Probe(ProbeCommand::Gallery { .. }) => "probe gallery",
        Command::Probe(ProbeCommand::Impurities { .. }) => "probe impurities",
    }
}

/// Parses `argv` (including the program name), runs the command and returns
/// the exit status.
pub fn run_command<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
        }
    };
    configure_threads();
    let started = Instant::now();
    let name = command_name(&cli.command);
    match execute(&cli.command) {
        Ok(out) => match emit(&cli, name, out, started) {
            Ok(code) => code,
            Err(e) => {
                eprintln!("error: {e}");
                EXIT_ERROR
            }
        },
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}

fn emit(cli: &Cli, name: &str, out: Outcome, started: Instant) -> Result<i32, Error> {
    let mut outputs = Vec::new();
    match &cli.out {
        Some(path) => {
            std::fs::write(path, &out.report)?;
            outputs.push(path.display().to_string());
        }
        None => print!("{}", out.report),
    }
    if let (Some(path), Some(csv)) = (&cli.csv, &out.csv) {
        std::fs::write(path, csv)?;
        outputs.push(path.display().to_string());
    }
    if let Some(path) = &cli.out {
        let input_digest = match &out.input {
            Some(p) => Some(sha256_hex(&std::fs::read(p)?)),
            None => None,
        };
        let record = RunRecord {
            command: name.to_string(),
            input_digest,
            config: out.config,
            outputs,
            wall_time_secs: started.elapsed().as_secs_f64(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        };
        let mut rec_path = path.clone().into_os_string();
        rec_path.push(".run.json");
        std::fs::write(PathBuf::from(rec_path), to_canonical_json(&record)?)?;
    }
    Ok(if cli.strict && out.undetermined { EXIT_UNDETERMINED } else { EXIT_OK })
}

#[derive(Serialize)]
struct BarabanovSummary {
    kind: subradius::barabanov::Extremum,
    beta: f64,
    radius: f64,
    residual: f64,
    contraction_estimate: f64,
    error_bar: f64,
    lipschitz: f64,
    lipschitz_bound: f64,
    iterations: usize,
    grid_size: usize,
    support: subradius::domination::MulticoneApprox,
}

fn execute(cmd: &Command) -> Result<Outcome, Error> {
    match cmd {
        Command::Bracket {
            set,
            n_max,
            budget,
            upper,
            no_fast_path,
        } => {
            let a = load_matrix_set(&set.set)?;
            let cfg = BracketConfig {
                budget: *budget,
                commuting_fast_path: !*no_fast_path,
                ..BracketConfig::default()
            };
            let lower = subradius_bracket(&a, *n_max, &cfg)?;
            let up = if *upper {
                Some(upper_radius_bracket(&a, *n_max, *budget)?)
            } else {
                None
            };
            let report = json!({
                "set_digest": a.digest(),
                "lower_spectral_radius": lower,
                "upper_spectral_radius": up,
            });
            let config = json!({"n_max": n_max, "budget": budget, "upper": upper, "no_fast_path": no_fast_path});
            Ok(Outcome::new(&report, config)?.input(&set.set))
        }
        Command::Dominate { set, n_max, k } => {
            let a = load_matrix_set(&set.set)?;
            let cfg = DominationConfig::default();
            let (ell, reports) = match k {
                Some(k) => (None, vec![test_domination(&a, *k, *n_max, &cfg)?]),
                None => {
                    let l = least_domination_index(&a, *n_max, &cfg)?;
                    (Some(l.ell), l.per_k)
                }
            };
            let undetermined = reports.iter().any(|r| r.verdict == Verdict::Undetermined);
            let mut csv = String::from("k,n,log_ratio\n");
            for r in &reports {
                for (i, v) in r.profile.iter().enumerate() {
                    csv.push_str(&format!("{},{},{:.17e}\n", r.k, i + 1, v));
                }
            }
            let report = json!({"set_digest": a.digest(), "ell": ell, "reports": reports});
            let mut out = Outcome::new(&report, json!({"n_max": n_max, "k": k}))?.input(&set.set);
            out.csv = Some(csv);
            out.undetermined = undetermined;
            Ok(out)
        }
        Command::Barabanov { set, grid, upper } => {
            let a = load_matrix_set(&set.set)?;
            let cfg = BarabanovConfig {
                grid_size: *grid,
                ..BarabanovConfig::default()
            };
            let config = json!({"grid": grid, "upper": upper});
            match find_multicone_2d(&a, &MulticoneConfig::default())? {
                MulticoneSearch::Found(cone) => {
                    let r = if *upper {
                        compute_upper_barabanov(&a, &cone, &cfg)?
                    } else {
                        compute_barabanov(&a, &cone, &cfg)?
                    };
                    let summary = BarabanovSummary {
                        kind: r.kind,
                        beta: r.beta,
                        radius: r.radius(),
                        residual: r.residual,
                        contraction_estimate: r.contraction_estimate,
                        error_bar: r.error_bar,
                        lipschitz: r.lipschitz,
                        lipschitz_bound: r.lipschitz_bound,
                        iterations: r.iterations,
                        grid_size: *grid,
                        support: cone,
                    };
                    let mut out = Outcome::new(&json!({"set_digest": a.digest(), "result": summary}), config)?
                        .input(&set.set);
                    out.csv = Some(r.psi.to_csv());
                    Ok(out)
                }
                failed @ MulticoneSearch::Failed { .. } => {
                    let mut out =
                        Outcome::new(&json!({"set_digest": a.digest(), "multicone": failed}), config)?.input(&set.set);
                    out.undetermined = true;
                    Ok(out)
                }
            }
        }
        Command::Zeta {
            set,
            ell,
            delta,
            n_min,
            n_max,
        } => {
            let a = load_matrix_set(&set.set)?;
            let z = z_delta_profile(&a, *delta, *ell, *n_min..=*n_max, DEFAULT_BUDGET)?;
            let mut csv = String::from("n,value,qualifying\n");
            for e in &z.entries {
                let v = if e.value.is_finite() { format!("{:.17e}", e.value) } else { "inf".into() };
                csv.push_str(&format!("{},{},{}\n", e.n, v, e.qualifying));
            }
            let config = json!({"ell": ell, "delta": delta, "n_min": n_min, "n_max": n_max});
            let mut out = Outcome::new(&json!({"set_digest": a.digest(), "profile": z}), config)?.input(&set.set);
            out.csv = Some(csv);
            Ok(out)
        }
        Command::Perturb {
            set,
            epsilon,
            verify_cert,
        } => {
            let a = load_matrix_set(&set.set)?;
            if let Some(path) = verify_cert {
                let cert = load_certificate(path)?;
                let check = verify_certificate(&a, &cert)?;
                if !check.valid {
                    return Err(Error::InvalidArgument(format!(
                        "certificate rejected: {}",
                        check.failures.join("; ")
                    )));
                }
                let config = json!({"verify_cert": path.display().to_string()});
                return Ok(Outcome::new(&check, config)?.input(&set.set));
            }
            let eps = epsilon.ok_or_else(|| Error::InvalidArgument("--epsilon is required".into()))?;
            let config = json!({"epsilon": eps});
            match perturb_reduce(&a, eps, &PerturbConfig::default()) {
                Ok(cert) => Ok(Outcome::new(&cert, config)?.input(&set.set)),
                Err(Error::NoCertificate { reason, min_epsilon }) => {
                    let report = json!({
                        "base_set_id": a.digest(),
                        "epsilon": eps,
                        "outcome": "no-certificate",
                        "reason": reason,
                        "min_epsilon": min_epsilon,
                    });
                    let mut out = Outcome::new(&report, config)?.input(&set.set);
                    out.undetermined = true;
                    Ok(out)
                }
                Err(e) => Err(e),
            }
        }
        Command::Probe(p) => execute_probe(p),
    }
}

fn execute_probe(cmd: &ProbeCommand) -> Result<Outcome, Error> {
    match cmd {
        ProbeCommand::Continuity { set, n_max } => {
            let a = load_matrix_set(&set.set)?;
            let cfg = ContinuityConfig {
                n_max: *n_max,
                ..ContinuityConfig::default()
            };
            let v = continuity_check(&a, &cfg)?;
            let mut out = Outcome::new(&v, json!({"n_max": n_max}))?.input(&set.set);
            out.undetermined = v.verdict == Continuity::Undetermined;
            Ok(out)
        }
        ProbeCommand::RotationScan {
            set,
            thetas,
            theta_min,
            theta_max,
            steps,
            n_max,
        } => {
            let a = load_matrix_set(&set.set)?;
            let grid: Vec<f64> = match thetas {
                Some(t) => t.clone(),
                None if *steps <= 1 => vec![*theta_min],
                None => (0..*steps)
                    .map(|i| theta_min + (theta_max - theta_min) * i as f64 / (*steps - 1) as f64)
                    .collect(),
            };
            let scan = rotation_scan(&a, &grid, *n_max, &BracketConfig::default())?;
            let mut out = Outcome::new(&scan, json!({"thetas": grid, "n_max": n_max}))?.input(&set.set);
            out.csv = Some(scan.to_csv());
            Ok(out)
        }
        ProbeCommand::Gallery {
            name,
            n,
            p,
            q,
            delta,
            seed,
            m,
            params,
        } => {
            let spec = match name.as_str() {
                "simple" => GallerySpec::Simple,
                "simple_perturbed" => GallerySpec::SimplePerturbed { n: *n },
                "nasty1" => GallerySpec::Nasty1,
                "no_discontinuity" => GallerySpec::NoDiscontinuity,
                "non_dom_invertibilized" => GallerySpec::NonDomInvertibilized { m: *m },
                "rational_rotation" => GallerySpec::RationalRotation {
                    p: *p,
                    q: *q,
                    delta: *delta,
                    seed: *seed,
                },
                "block_direct_sum" => {
                    let path = params
                        .as_ref()
                        .ok_or_else(|| Error::InvalidArgument("block_direct_sum needs --params".into()))?;
                    let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path)?)
                        .map_err(|e| Error::Format(e.to_string()))?;
                    v["name"] = json!("block_direct_sum");
                    serde_json::from_value(v).map_err(|e| Error::Format(e.to_string()))?
                }
                other => return Err(Error::Gallery(format!("unknown gallery entry {other:?}"))),
            };
            let set: MatrixSet = gallery(&spec)?;
            Ok(Outcome {
                report: matrix_set_to_json(&set),
                csv: None,
                undetermined: false,
                input: None,
                config: serde_json::to_value(&spec).map_err(|e| Error::Format(e.to_string()))?,
            })
        }
        ProbeCommand::Impurities { set, eps, n_max } => {
            let a = load_matrix_set(&set.set)?;
            if a.len() != 2 {
                return Err(Error::InvalidArgument("impurity probe needs exactly two matrices H, R".into()));
            }
            let probe = resists_impurities_probe(a.matrix(0), a.matrix(1), eps, *n_max)?;
            Ok(Outcome::new(&probe, json!({"eps": eps, "n_max": n_max}))?.input(&set.set))
        }
    }
}
