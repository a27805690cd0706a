//! `hsc` command-line front-end.
//!
//! Exit codes: 0 success, 1 usage error, 2 domain/validation error,
//! 3 I/O error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hsc::guarantee::{calibrate_threshold, delta_for, epsilon_for, evaluate_certificate, n_for};
use hsc::hierarchy::{parse_hierarchy, Hierarchy};
use hsc::metrics::{self, LossKind};
use hsc::rules::{RuleId, DEFAULT_EPS_TIGHT};
use hsc::scores::{fit_temperature, load_scores, ScoreKind, ScoreTable, Temperature};
use hsc::synth::{monte_carlo_theorem1, random_hierarchy, synth_scores, GeneratorConfig};

#[derive(Parser)]
#[command(
    name = "hsc",
    version,
    about = "Hierarchical selective classification toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate a hierarchy file, printing node/leaf counts.
    Validate {
        #[arg(long)]
        hierarchy: PathBuf,
    },
    /// Evaluate an inference rule: hAURC, selective baseline, hierarchical
    /// gain, full-coverage risk and ECE.
    Eval {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value = "climbing")]
        rule: RuleId,
        #[arg(long, default_value = "zero-one")]
        loss: LossKind,
        #[arg(long, default_value_t = 15)]
        bins: usize,
        /// Write the risk-coverage curve CSV alongside the report.
        #[arg(long)]
        curve_out: Option<PathBuf>,
        /// Report JSON destination (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Emit a breakpoint-exact risk or calibration curve as CSV.
    Curve {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value = "climbing")]
        rule: RuleId,
        /// Which curve to emit: risk or ece.
        #[arg(long = "curve-kind", default_value = "risk")]
        curve_kind: String,
        #[arg(long, default_value = "zero-one")]
        loss: LossKind,
        #[arg(long, default_value_t = 15)]
        bins: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Calibrate a threshold with a distribution-free accuracy guarantee, or
    /// solve for the fourth of (alpha, delta, epsilon, n) given three.
    Calibrate {
        #[arg(long)]
        hierarchy: Option<PathBuf>,
        #[arg(long)]
        scores: Option<PathBuf>,
        #[arg(long, default_value = "probs")]
        kind: ScoreKind,
        #[arg(long, default_value = "climbing")]
        rule: RuleId,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        n: Option<u64>,
        #[arg(long, default_value_t = DEFAULT_EPS_TIGHT)]
        eps_tight: f64,
        /// Held-out scores CSV to evaluate the calibrated threshold on.
        #[arg(long)]
        eval_on: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a seeded synthetic hierarchy and score table, optionally
    /// running the threshold-guarantee Monte Carlo check.
    Simulate {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 50)]
        n_leaves: usize,
        #[arg(long, default_value_t = 4)]
        max_branching: usize,
        #[arg(long, default_value_t = 2.0)]
        sharpness: f64,
        #[arg(long, default_value_t = 0.85)]
        correct_prob: f64,
        #[arg(long, default_value_t = 1000)]
        n_samples: usize,
        /// Directory receiving hierarchy.tsv, scores.csv, and summary.json.
        #[arg(long)]
        out_dir: PathBuf,
        /// Run the guarantee Monte Carlo harness and add it to the summary.
        #[arg(long)]
        theorem1: bool,
        #[arg(long, default_value_t = 0.1)]
        alpha: f64,
        #[arg(long, default_value_t = 0.1)]
        delta: f64,
        #[arg(long, default_value_t = 1000)]
        n_cal: usize,
        #[arg(long, default_value_t = 2000)]
        trials: usize,
        #[arg(long, default_value_t = 100_000)]
        test_pool: usize,
    },
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    hierarchy: PathBuf,
    #[arg(long)]
    scores: PathBuf,
    #[arg(long, default_value = "probs")]
    kind: ScoreKind,
    /// Temperature mode: `off`, `fit`, or a fixed positive value.
    /// Defaults to `fit` for logits and `off` for probabilities.
    #[arg(long)]
    temperature: Option<String>,
}

enum CliError {
    Usage(String),
    Domain(String),
    Io(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Domain(_) => 2,
            CliError::Io(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Domain(m) | CliError::Io(m) => m,
        }
    }
}

fn read_file(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn write_output(out: &Option<PathBuf>, content: &str) -> Result<(), CliError> {
    match out {
        Some(path) => {
            fs::write(path, content).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
        }
        None => {
            println!("{content}");
            Ok(())
        }
    }
}

fn load_hierarchy(path: &Path) -> Result<Hierarchy, CliError> {
    let text = read_file(path)?;
    parse_hierarchy(&text).map_err(|e| CliError::Domain(e.to_string()))
}

fn load_table(path: &Path, h: &Hierarchy, kind: ScoreKind) -> Result<ScoreTable, CliError> {
    let text = read_file(path)?;
    load_scores(text.as_bytes(), h, kind).map_err(|e| CliError::Domain(e.to_string()))
}

/// Resolves the temperature mode and returns a probability table.
fn prepare_probs(
    table: &ScoreTable,
    h: &Hierarchy,
    mode: &Option<String>,
) -> Result<(ScoreTable, Option<Temperature>), CliError> {
    let mode = match mode.as_deref() {
        Some(m) => m.to_owned(),
        None => match table.kind() {
            ScoreKind::Logits => "fit".to_owned(),
            ScoreKind::Probs => "off".to_owned(),
        },
    };
    match (mode.as_str(), table.kind()) {
        ("off", ScoreKind::Probs) => Ok((table.clone(), None)),
        ("off", ScoreKind::Logits) => Ok((table.to_probs(Temperature(1.0)), None)),
        ("fit", _) => {
            let logits = match table.kind() {
                ScoreKind::Logits => table.clone(),
                ScoreKind::Probs => table.to_surrogate_logits(),
            };
            let t = fit_temperature(&logits, h).map_err(|e| CliError::Domain(e.to_string()))?;
            Ok((logits.to_probs(t), Some(t)))
        }
        (fixed, _) => {
            let t: f64 = fixed
                .parse()
                .map_err(|_| CliError::Usage(format!("invalid temperature mode: {fixed}")))?;
            if t <= 0.0 {
                return Err(CliError::Usage("temperature must be positive".into()));
            }
            let logits = match table.kind() {
                ScoreKind::Logits => table.clone(),
                ScoreKind::Probs => table.to_surrogate_logits(),
            };
            Ok((logits.to_probs(Temperature(t)), Some(Temperature(t))))
        }
    }
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable")
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Validate { hierarchy } => {
            let h = load_hierarchy(&hierarchy)?;
            println!("nodes={} leaves={}", h.node_count(), h.leaves().len());
            Ok(())
        }
        Command::Eval {
            data,
            rule,
            loss,
            bins,
            curve_out,
            out,
        } => {
            let h = load_hierarchy(&data.hierarchy)?;
            let table = load_table(&data.scores, &h, data.kind)?;
            let (probs, _) = prepare_probs(&table, &h, &data.temperature)?;
            let (report, curve) = metrics::evaluate(&h, &probs, rule, loss, bins)
                .map_err(|e| CliError::Domain(e.to_string()))?;
            if let Some(path) = curve_out {
                write_output(&Some(path), &curve.to_csv())?;
            }
            write_output(&out, &to_json(&report))
        }
        Command::Curve {
            data,
            rule,
            curve_kind,
            loss,
            bins,
            out,
        } => {
            let h = load_hierarchy(&data.hierarchy)?;
            let table = load_table(&data.scores, &h, data.kind)?;
            let (probs, _) = prepare_probs(&table, &h, &data.temperature)?;
            let curve = match curve_kind.as_str() {
                "risk" => metrics::rc_curve(&h, &probs, rule, loss),
                "ece" => metrics::cc_curve(&h, &probs, rule, bins),
                other => return Err(CliError::Usage(format!("unknown curve kind: {other}"))),
            }
            .map_err(|e| CliError::Domain(e.to_string()))?;
            write_output(&out, &curve.to_csv())
        }
        Command::Calibrate {
            hierarchy,
            scores,
            kind,
            rule,
            alpha,
            delta,
            epsilon,
            n,
            eps_tight,
            eval_on,
            out,
        } => match scores {
            None => {
                let given = [
                    alpha.is_some(),
                    delta.is_some(),
                    epsilon.is_some(),
                    n.is_some(),
                ]
                .iter()
                .filter(|&&g| g)
                .count();
                if given > 3 {
                    return Err(CliError::Usage("OverdeterminedParameters".into()));
                }
                if given < 3 {
                    return Err(CliError::Usage("UnderdeterminedParameters".into()));
                }
                let solved = match (alpha, delta, epsilon, n) {
                    (Some(a), Some(d), None, Some(n)) => {
                        epsilon_for(n, a, d).map(|e| serde_json::json!({ "epsilon": e }))
                    }
                    (Some(a), None, Some(e), Some(n)) => {
                        delta_for(n, a, e).map(|d| serde_json::json!({ "delta": d }))
                    }
                    (Some(a), Some(d), Some(e), None) => {
                        n_for(a, e, d).map(|n| serde_json::json!({ "n": n }))
                    }
                    (None, Some(_), Some(_), Some(_)) => return Err(CliError::Usage(
                        "solving for alpha is not supported; fix alpha and solve another parameter"
                            .into(),
                    )),
                    _ => unreachable!("exactly three given"),
                }
                .map_err(|e| CliError::Domain(e.to_string()))?;
                write_output(&out, &to_json(&solved))
            }
            Some(scores_path) => {
                let hierarchy = hierarchy.ok_or_else(|| {
                    CliError::Usage("--hierarchy is required with --scores".into())
                })?;
                let alpha = alpha.ok_or_else(|| CliError::Usage("--alpha is required".into()))?;
                let delta = delta.ok_or_else(|| CliError::Usage("--delta is required".into()))?;
                let h = load_hierarchy(&hierarchy)?;
                let table = load_table(&scores_path, &h, kind)?;
                let outcome = calibrate_threshold(&h, &table, rule, alpha, delta, eps_tight)
                    .map_err(|e| CliError::Domain(e.to_string()))?;
                let mut doc = serde_json::to_value(&outcome.certificate).expect("serializable");
                if let Some(test_path) = eval_on {
                    let test = load_table(&test_path, &h, kind)?;
                    let eval =
                        evaluate_certificate(&outcome.certificate, outcome.temperature, &h, &test)
                            .map_err(|e| CliError::Domain(e.to_string()))?;
                    doc["evaluation"] = serde_json::to_value(&eval).expect("serializable");
                }
                write_output(&out, &to_json(&doc))
            }
        },
        Command::Simulate {
            seed,
            n_leaves,
            max_branching,
            sharpness,
            correct_prob,
            n_samples,
            out_dir,
            theorem1,
            alpha,
            delta,
            n_cal,
            trials,
            test_pool,
        } => {
            let cfg = GeneratorConfig {
                seed,
                n_leaves,
                max_branching,
                sharpness,
                correct_prob,
            };
            cfg.validate().map_err(|e| {
                CliError::Domain(if n_leaves < 2 {
                    "FewerThanTwoLeaves".into()
                } else {
                    e
                })
            })?;
            fs::create_dir_all(&out_dir)
                .map_err(|e| CliError::Io(format!("{}: {e}", out_dir.display())))?;
            let h = random_hierarchy(&cfg);
            let table = synth_scores(&cfg, &h, n_samples);
            let hierarchy_path = out_dir.join("hierarchy.tsv");
            let scores_path = out_dir.join("scores.csv");
            fs::write(&hierarchy_path, h.to_edge_list())
                .map_err(|e| CliError::Io(e.to_string()))?;
            fs::write(&scores_path, table.to_csv(&h)).map_err(|e| CliError::Io(e.to_string()))?;

            let mut summary = serde_json::json!({
                "config": cfg,
                "nodes": h.node_count(),
                "leaves": h.leaves().len(),
                "n_samples": n_samples,
                "hierarchy": hierarchy_path,
                "scores": scores_path,
            });
            if theorem1 {
                let mc = monte_carlo_theorem1(&cfg, alpha, delta, n_cal, trials, test_pool);
                summary["theorem1"] = serde_json::to_value(&mc).expect("serializable");
            }
            let text = to_json(&summary);
            fs::write(out_dir.join("summary.json"), &text)
                .map_err(|e| CliError::Io(e.to_string()))?;
            println!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.message());
            ExitCode::from(e.code())
        }
    }
}
