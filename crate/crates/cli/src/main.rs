//! `mastery`: fit, evaluate and report ability/difficulty models from the
//! command line.
//!
//! Exit status: 0 ok, 1 input or usage error, 2 a fit did not converge.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use mastery_core::analytics::StudentSelector;
use mastery_core::fit::check_gradient;
use mastery_core::ingest::{write_canonical_csv, ColumnRef};
use mastery_core::model::{ModelParams, PriorConfig};
use mastery_core::pipeline::{
    self, EvaluationMode, RunConfig, SENSITIVITY_SEEDS, SENSITIVITY_SIZES,
};
use mastery_core::rng::SeededRng;
use mastery_core::synth::{self, Gaussian, ResponsesPerStudent, SynthSpec};

const EXIT_INPUT: u8 = 1;
const EXIT_CONVERGENCE: u8 = 2;

#[derive(Parser, Debug)]
#[command(
    name = "mastery",
    version,
    about = "Student ability and skill difficulty estimation"
)]
struct Cli {
    /// TOML file supplying any run option; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// More log output on stderr (repeat for more).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit both models and write every report.
    Fit {
        #[command(flatten)]
        run: RunArgs,
        /// Run the subsample-size x seed stability grid instead of a single fit.
        #[arg(long)]
        sensitivity: bool,
    },
    /// Score a saved params.json on a data file.
    Evaluate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        params: PathBuf,
    },
    /// Write the analytics reports for a saved params.json.
    Report {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        params: PathBuf,
    },
    /// Generate a synthetic response log and its true parameters.
    Simulate(SimulateArgs),
    /// Compare the analytic gradient with central differences on a data file.
    CheckGradient {
        #[command(flatten)]
        run: RunArgs,
        /// Random parameter vectors drawn uniformly from [-3, 3].
        #[arg(long, default_value_t = 5)]
        trials: usize,
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
    },
}

#[derive(Args, Debug, Default)]
struct RunArgs {
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long = "output", short = 'o')]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    subsample: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    sigma_squared: Option<f64>,
    /// Hold out this fraction of records for scoring instead of in-sample.
    #[arg(long)]
    holdout: Option<f64>,

    /// Column name, or `#N` for the zero-based position N.
    #[arg(long)]
    student_column: Option<ColumnRef>,
    #[arg(long)]
    skill_column: Option<ColumnRef>,
    #[arg(long)]
    correct_column: Option<ColumnRef>,
    #[arg(long)]
    order_column: Option<ColumnRef>,
    /// Single character; `tab` or `\t` for tab.
    #[arg(long)]
    delimiter: Option<String>,
    #[arg(long)]
    no_header: bool,
    #[arg(long)]
    multi_skill_separator: Option<String>,
    #[arg(long)]
    expand_multi_skill: bool,
    /// Comma-separated tokens meaning correct.
    #[arg(long, value_delimiter = ',')]
    correct_values: Option<Vec<String>>,
    /// Comma-separated tokens meaning incorrect.
    #[arg(long, value_delimiter = ',')]
    incorrect_values: Option<Vec<String>>,

    #[arg(long)]
    max_iterations: Option<usize>,
    #[arg(long)]
    gradient_tolerance: Option<f64>,
    #[arg(long)]
    objective_tolerance: Option<f64>,
    #[arg(long)]
    history_size: Option<usize>,
    #[arg(long)]
    initial_value: Option<f64>,

    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long)]
    histogram_bins: Option<usize>,
    #[arg(long)]
    calibration_bins: Option<usize>,
    /// `lowest`, `highest` or a student label.
    #[arg(long)]
    trajectory: Option<StudentSelector>,
    /// params.json of known parameters; writes recovery.json.
    #[arg(long)]
    truth: Option<PathBuf>,
}

fn parse_delimiter(s: &str) -> Result<char> {
    match s {
        "tab" | "\\t" => Ok('\t'),
        _ => {
            let mut chars = s.chars();
            match (chars.next(), chars.next()) {
                (Some(c), None) => Ok(c),
                _ => anyhow::bail!("delimiter must be a single character, got `{s}`"),
            }
        }
    }
}

impl RunArgs {
    fn apply(self, c: &mut RunConfig) -> Result<()> {
        macro_rules! set {
            ($($flag:ident => $($field:ident).+),* $(,)?) => {
                $(if let Some(v) = self.$flag { c.$($field).+ = v; })*
            };
        }
        set!(
            input => input,
            output_dir => output_dir,
            seed => seed,
            sigma_squared => sigma_squared,
            student_column => schema.student_column,
            skill_column => schema.skill_column,
            correct_column => schema.correct_column,
            correct_values => schema.vocab.correct,
            incorrect_values => schema.vocab.incorrect,
            max_iterations => fit.max_iterations,
            gradient_tolerance => fit.gradient_tolerance,
            objective_tolerance => fit.objective_relative_tolerance,
            history_size => fit.history_size,
            initial_value => fit.initial_value,
            top_k => top_k,
            histogram_bins => histogram_bins,
            calibration_bins => calibration_bins,
            trajectory => trajectory,
        );
        if self.subsample.is_some() {
            c.subsample_size = self.subsample;
        }
        if let Some(f) = self.holdout {
            c.evaluation = EvaluationMode::Holdout { fraction: f };
        }
        if self.order_column.is_some() {
            c.schema.order_column = self.order_column;
        }
        if let Some(d) = self.delimiter {
            c.schema.delimiter = parse_delimiter(&d)?;
        }
        if self.no_header {
            c.schema.has_header = false;
        }
        if self.multi_skill_separator.is_some() {
            c.schema.multi_skill_separator = self.multi_skill_separator;
        }
        if self.expand_multi_skill {
            c.schema.expand_multi_skill = true;
        }
        if self.truth.is_some() {
            c.truth = self.truth;
        }
        Ok(())
    }
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long)]
    students: usize,
    #[arg(long)]
    skills: usize,
    /// Fixed number of attempts per student.
    #[arg(long, conflicts_with_all = ["min_per_student", "max_per_student"])]
    per_student: Option<usize>,
    #[arg(long, requires = "max_per_student")]
    min_per_student: Option<usize>,
    #[arg(long, requires = "min_per_student")]
    max_per_student: Option<usize>,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    theta_mean: f64,
    #[arg(long, default_value_t = 1.0)]
    theta_sd: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    beta_mean: f64,
    #[arg(long, default_value_t = 1.0)]
    beta_sd: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Directory for responses.csv and truth.json.
    #[arg(long = "output", short = 'o')]
    output_dir: PathBuf,
}

/// Config file layout: every `RunConfig` key at top level plus `sensitivity`.
#[derive(Deserialize, Default)]
struct FileConfig {
    #[serde(flatten)]
    run: RunConfig,
    #[serde(default)]
    sensitivity: bool,
}

fn load_file_config(path: Option<&Path>) -> Result<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn run_config(file: FileConfig, args: RunArgs) -> Result<RunConfig> {
    let mut config = file.run;
    args.apply(&mut config)?;
    config.validate()?;
    Ok(config)
}

enum Status {
    Ok,
    NotConverged,
}

fn simulate(args: SimulateArgs) -> Result<Status> {
    let responses_per_student = match (args.per_student, args.min_per_student, args.max_per_student)
    {
        (Some(n), _, _) => ResponsesPerStudent::Fixed(n),
        (None, Some(min), Some(max)) => ResponsesPerStudent::Range { min, max },
        _ => anyhow::bail!("give --per-student or both --min-per-student and --max-per-student"),
    };
    let spec = SynthSpec {
        num_students: args.students,
        num_skills: args.skills,
        responses_per_student,
        theta: Gaussian {
            mean: args.theta_mean,
            sd: args.theta_sd,
        },
        beta: Gaussian {
            mean: args.beta_mean,
            sd: args.beta_sd,
        },
        skill_weights: None,
        seed: args.seed,
    };
    let data = synth::generate(&spec)?;
    fs::create_dir_all(&args.output_dir)?;
    let csv_path = args.output_dir.join("responses.csv");
    write_canonical_csv(&data.table, BufWriter::new(File::create(&csv_path)?))?;
    let doc = data.truth.to_document(&data.table, &PriorConfig::default());
    serde_json::to_writer_pretty(
        BufWriter::new(File::create(args.output_dir.join("truth.json"))?),
        &doc,
    )?;
    log::info!(
        "wrote {} records for {} students and {} skills to {}",
        data.table.len(),
        data.table.num_students(),
        data.table.num_skills(),
        csv_path.display()
    );
    Ok(Status::Ok)
}

fn check_gradient_cmd(config: &RunConfig, trials: usize, step: f64) -> Result<Status> {
    let (table, _) = pipeline::prepare_table(config)?;
    let prior = config.prior()?;
    let mut rng = SeededRng::new(config.seed);
    let mut worst = 0.0_f64;
    for trial in 0..trials {
        let mut point = ModelParams::for_table(&table);
        for v in point.theta.iter_mut().chain(point.beta.iter_mut()) {
            *v = -3.0 + 6.0 * rng.unit_f64();
        }
        let err = check_gradient(&table, &prior, &point, step)?;
        log::info!("trial {trial}: max relative error {err:.3e}");
        worst = worst.max(err);
    }
    println!("max_relative_error={worst:e} trials={trials} step={step:e}");
    Ok(Status::Ok)
}

fn run(cli: Cli) -> Result<Status> {
    let file = load_file_config(cli.config.as_deref())?;
    match cli.command {
        Command::Simulate(args) => simulate(args),
        Command::Fit { run, sensitivity } => {
            let sensitivity = sensitivity || file.sensitivity;
            let config = run_config(file, run)?;
            if sensitivity {
                let rows =
                    pipeline::run_sensitivity(&config, &SENSITIVITY_SIZES, &SENSITIVITY_SEEDS)?;
                return Ok(if rows.iter().all(|r| r.converged) {
                    Status::Ok
                } else {
                    Status::NotConverged
                });
            }
            let outcome = pipeline::run_pipeline(&config)?;
            for m in &outcome.metrics.models {
                log::info!(
                    "{}: auc {} log_loss {:.4}",
                    m.model,
                    m.auc
                        .map_or_else(|| "undefined".into(), |a| format!("{a:.4}")),
                    m.log_loss
                );
            }
            Ok(if outcome.converged {
                Status::Ok
            } else {
                Status::NotConverged
            })
        }
        Command::Evaluate { run, params } => {
            let config = run_config(file, run)?;
            pipeline::run_evaluate(&config, &params)?;
            Ok(Status::Ok)
        }
        Command::Report { run, params } => {
            let config = run_config(file, run)?;
            pipeline::run_report(&config, &params)?;
            Ok(Status::Ok)
        }
        Command::CheckGradient { run, trials, step } => {
            let config = run_config(file, run)?;
            check_gradient_cmd(&config, trials, step)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::NotConverged) => {
            log::error!("a fit stopped at max_iterations before converging");
            ExitCode::from(EXIT_CONVERGENCE)
        }
        Err(e) => {
            log::error!("{e:#}");
            let optimizer = matches!(
                e.downcast_ref::<mastery_core::Error>(),
                Some(mastery_core::Error::Optimization(_))
            );
            ExitCode::from(if optimizer {
                EXIT_CONVERGENCE
            } else {
                EXIT_INPUT
            })
        }
    }
}
