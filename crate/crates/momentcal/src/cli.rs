//! Command-line front door: `train`, `audit`, `intervals`, `cover`,
//! `calc-n`, and `synth` subcommands over the library, with reproducible
//! seeded runs and provenance headers on every output file.
//!
//! `train` reads a TOML run configuration; every parameter can be
//! overridden by a flag, and flags win. Exit codes: 0 success, 2
//! configuration or precondition error, 3 run completed but an iteration
//! cap was exceeded (statistical failure events logged), 4 IO or parse
//! error.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::auditor::{sample_size_calculator, SampleSizeTargets};
use crate::bundle::MomentKind;
use crate::cover::{
    brute_force_cover, build_cover_instance, build_cover_instance_empirical, greedy_cover,
};
use crate::data::LabeledExample;
use crate::error::{Error, Result};
use crate::eval::{
    coverage_audit, empirical_calibration_audit, exact_calibration_audit, CalibrationReport,
};
use crate::exact::{exact_alternating_descent, ExactTrainConfig};
use crate::intervals::{prediction_interval, IntervalParams};
use crate::io;
use crate::io::FileHeader;
use crate::oracle::{oracle_alternating_descent, AgnosticOracle, ExhaustiveOracle, StumpOracle, SubprocessOracle};
use crate::predicate::GroupFamily;
use crate::sample::{
    sample_alternating_descent, DistributionSampler, PoolSource, SampleStream, SampleTrainConfig,
};
use crate::synth::SyntheticSpec;
use crate::trace::HaltReason;

#[derive(Parser)]
#[command(
    name = "momentcal",
    version,
    about = "Mean and higher-moment multicalibration with marginal prediction intervals"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Train a predictor bundle (exact, sample, or oracle mode).
    Train(TrainArgs),
    /// Audit a bundle's calibration against a distribution or dataset.
    Audit(AuditArgs),
    /// Emit per-point prediction intervals and a coverage table.
    Intervals(IntervalsArgs),
    /// Build and solve the multi-moment interval cover.
    Cover(CoverArgs),
    /// Worst-case sample-size plan for target calibration levels.
    CalcN(CalcNArgs),
    /// Generate a synthetic distribution and dataset.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Exact,
    Sample,
    Oracle,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub mode: TrainMode,
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub data: DataConfig,
    pub trainer: TrainerSection,
    #[serde(default)]
    pub oracle: OracleSection,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct DataConfig {
    pub distribution: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub synthetic: Option<SyntheticSpec>,
    pub groups: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainerSection {
    pub alpha: f64,
    pub beta: f64,
    pub delta: Option<f64>,
    pub n: Option<usize>,
    pub bucket_count: u32,
    pub max_degree: u32,
    pub moment_degrees: Option<Vec<u32>>,
    #[serde(default)]
    pub moment_kind: MomentKind,
    #[serde(default)]
    pub max_violation_search: bool,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct OracleSection {
    /// `exhaustive` (default), `stump`, or `subprocess`.
    pub kind: Option<String>,
    pub rho: Option<f64>,
    pub program: Option<String>,
    pub args: Option<Vec<String>>,
}

#[derive(Args)]
pub struct TrainArgs {
    /// TOML run configuration.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub mode: Option<TrainMode>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    /// Fresh-block size (sample and oracle modes).
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub bucket_count: Option<u32>,
    #[arg(long)]
    pub max_degree: Option<u32>,
    /// Worker pool size for parallel block evaluation.
    #[arg(long)]
    pub threads: Option<usize>,
}

pub fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Audit(args) => cmd_audit(args).map(|_| 0),
        Command::Intervals(args) => cmd_intervals(args).map(|_| 0),
        Command::Cover(args) => cmd_cover(args).map(|_| 0),
        Command::CalcN(args) => cmd_calc_n(args).map(|_| 0),
        Command::Synth(args) => cmd_synth(args).map(|_| 0),
    }
}

fn load_family(path: &Option<PathBuf>) -> Result<GroupFamily> {
    match path {
        Some(p) => io::load_group_family(p),
        None => Ok(GroupFamily::whole_domain()),
    }
}

fn sample_source(config: &RunConfig) -> Result<Box<dyn SampleStream + Send>> {
    if let Some(path) = &config.data.dataset {
        let examples = io::load_dataset(path)?;
        let dim = examples
            .first()
            .map(|e| e.features.values.len())
            .ok_or_else(|| Error::Format(format!("{}: empty dataset", path.display())))?;
        return Ok(Box::new(PoolSource::from_examples(dim, &examples)?));
    }
    if let Some(spec) = &config.data.synthetic {
        return spec.stream(config.seed);
    }
    if let Some(path) = &config.data.distribution {
        let dist = io::load_distribution(path)?;
        return Ok(Box::new(DistributionSampler::new(dist, config.seed)));
    }
    Err(Error::InvalidParameter(
        "sample-mode training needs a dataset, synthetic spec, or distribution".into(),
    ))
}

fn build_oracle(config: &RunConfig, family: &GroupFamily) -> Result<Box<dyn AgnosticOracle>> {
    let kind = config.oracle.kind.as_deref().unwrap_or("exhaustive");
    match kind {
        "exhaustive" => Ok(Box::new(ExhaustiveOracle::from_family(family)?)),
        "stump" => Ok(Box::new(StumpOracle::new(config.oracle.rho.unwrap_or(0.05)))),
        "subprocess" => {
            let program = config.oracle.program.clone().ok_or_else(|| {
                Error::InvalidParameter("subprocess oracle needs a program".into())
            })?;
            Ok(Box::new(SubprocessOracle {
                program,
                args: config.oracle.args.clone().unwrap_or_default(),
                rho: config.oracle.rho.unwrap_or(0.0),
            }))
        }
        other => Err(Error::InvalidParameter(format!(
            "unknown oracle kind {other:?}"
        ))),
    }
}

pub fn cmd_train(args: TrainArgs) -> Result<i32> {
    let text = std::fs::read_to_string(&args.config)?;
    let mut config: RunConfig = toml::from_str(&text)?;
    // Flags win over the configuration file.
    if let Some(v) = args.mode {
        config.mode = v;
    }
    if let Some(v) = args.seed {
        config.seed = v;
    }
    if let Some(v) = args.output_dir {
        config.output_dir = v;
    }
    if let Some(v) = args.alpha {
        config.trainer.alpha = v;
    }
    if let Some(v) = args.beta {
        config.trainer.beta = v;
    }
    if let Some(v) = args.delta {
        config.trainer.delta = Some(v);
    }
    if let Some(v) = args.n {
        config.trainer.n = Some(v);
    }
    if let Some(v) = args.bucket_count {
        config.trainer.bucket_count = v;
    }
    if let Some(v) = args.max_degree {
        config.trainer.max_degree = v;
    }
    if let Some(threads) = args.threads {
        // Build errors only if a global pool already exists; keep going.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }

    std::fs::create_dir_all(&config.output_dir)?;
    let family = load_family(&config.data.groups)?;
    let header = FileHeader::new(serde_json::to_value(&config)?);

    let t = &config.trainer;
    let degrees = t
        .moment_degrees
        .clone()
        .unwrap_or_else(|| crate::bundle::even_degrees(t.max_degree));

    let outcome = match config.mode {
        TrainMode::Exact => {
            let dist = match (&config.data.distribution, &config.data.synthetic) {
                (Some(path), _) => io::load_distribution(path)?,
                (None, Some(spec)) => spec.distribution(config.seed)?,
                (None, None) => {
                    return Err(Error::InvalidParameter(
                        "exact-mode training needs a distribution file or a finite synthetic spec"
                            .into(),
                    ))
                }
            };
            let train_config = ExactTrainConfig {
                alpha: t.alpha,
                beta: t.beta,
                bucket_count: t.bucket_count,
                max_degree: t.max_degree,
                moment_degrees: degrees,
                moment_kind: t.moment_kind,
                max_violation_search: t.max_violation_search,
            };
            let out = exact_alternating_descent(&train_config, &dist, &family)?;
            crate::sample::SampleOutcome {
                bundle: out.bundle,
                report: out.report,
                trace: out.trace,
            }
        }
        TrainMode::Sample | TrainMode::Oracle => {
            let delta = t.delta.ok_or_else(|| {
                Error::InvalidParameter("sample-mode training needs delta".into())
            })?;
            let n = t.n.ok_or_else(|| {
                Error::InvalidParameter("sample-mode training needs a block size n".into())
            })?;
            let train_config = SampleTrainConfig {
                alpha: t.alpha,
                beta: t.beta,
                delta,
                n,
                bucket_count: t.bucket_count,
                max_degree: t.max_degree,
                moment_degrees: degrees,
                moment_kind: t.moment_kind,
            };
            let mut source = sample_source(&config)?;
            if config.mode == TrainMode::Sample {
                sample_alternating_descent(&train_config, source.as_mut(), &family)?
            } else {
                let oracle = build_oracle(&config, &family)?;
                oracle_alternating_descent(&train_config, source.as_mut(), &family, oracle.as_ref())?
            }
        }
    };

    io::save_bundle(
        &config.output_dir.join("bundle.json"),
        &outcome.bundle,
        header.clone(),
    )?;
    io::save_trace(&config.output_dir.join("trace.jsonl"), &outcome.trace, &header)?;
    io::save_report(
        &config.output_dir.join("report.json"),
        &header,
        &outcome.report,
    )?;
    println!(
        "halted after {} outer rounds, {} updates ({} blocks, {} samples)",
        outcome.report.outer_iterations,
        outcome.report.total_updates,
        outcome.report.blocks_consumed,
        outcome.report.samples_consumed
    );
    println!("bundle: {}", config.output_dir.join("bundle.json").display());
    if outcome.report.halt_reason == HaltReason::ConvergedWithCapOverrun {
        println!(
            "note: {} iteration-cap overruns were logged (statistical failure events)",
            outcome.report.statistical_failures
        );
        return Ok(3);
    }
    Ok(0)
}

#[derive(Args)]
pub struct AuditArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    /// Finite distribution for an exact audit.
    #[arg(long)]
    pub distribution: Option<PathBuf>,
    /// Held-out dataset for an empirical audit.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub groups: Option<PathBuf>,
    #[arg(long)]
    pub alpha: f64,
    #[arg(long)]
    pub beta: f64,
    /// Annotate empirical rows with the Chernoff radius at this delta.
    #[arg(long)]
    pub annotate_delta: Option<f64>,
    /// Flat slack added to empirical budgets.
    #[arg(long, default_value_t = 0.0)]
    pub slack: f64,
    #[arg(long)]
    pub out: PathBuf,
}

fn report_rows(report: &CalibrationReport, family: &GroupFamily) -> Vec<Vec<String>> {
    report
        .rows
        .iter()
        .map(|row| {
            vec![
                row.cell.describe(family),
                format!("{:.6}", row.mass),
                format!("{:.6}", row.mean_gap),
                format!("{:.6}", row.mean_budget),
                row.mean_pass.to_string(),
                row.moment_gap.map(|v| format!("{v:.6}")).unwrap_or_default(),
                row.moment_budget
                    .map(|v| format!("{v:.6}"))
                    .unwrap_or_default(),
                row.moment_pass.map(|v| v.to_string()).unwrap_or_default(),
                format!("{:.4}", row.worst_ratio),
            ]
        })
        .collect()
}

pub fn cmd_audit(args: AuditArgs) -> Result<CalibrationReport> {
    let (bundle, _) = io::load_bundle(&args.bundle)?;
    let family = load_family(&args.groups)?;
    let params = serde_json::json!({
        "bundle": args.bundle, "alpha": args.alpha, "beta": args.beta,
        "slack": args.slack,
    });
    let header = FileHeader::new(params);
    let report = match (&args.distribution, &args.data) {
        (Some(path), _) => {
            let dist = io::load_distribution(path)?;
            exact_calibration_audit(&bundle, &dist, &family, args.alpha, args.beta)?
        }
        (None, Some(path)) => {
            let data = io::load_dataset(path)?;
            empirical_calibration_audit(
                &bundle,
                &data,
                &family,
                args.alpha,
                args.beta,
                args.annotate_delta,
                args.slack,
            )?
        }
        (None, None) => {
            return Err(Error::InvalidParameter(
                "audit needs a distribution or a dataset".into(),
            ))
        }
    };
    std::fs::create_dir_all(&args.out)?;
    io::save_report(&args.out.join("calibration.json"), &header, &report)?;
    io::save_table(
        &args.out.join("calibration.csv"),
        &header,
        &[
            "cell",
            "mass",
            "mean_gap",
            "mean_budget",
            "mean_pass",
            "moment_gap",
            "moment_budget",
            "moment_pass",
            "worst_ratio",
        ],
        &report_rows(&report, &family),
    )?;
    println!(
        "{} cells audited, {} violations, worst gap/budget ratio {:.4}",
        report.rows.len(),
        report.violations,
        report.worst_ratio
    );
    for row in report.rows.iter().take(5) {
        println!(
            "  {} mass {:.4} mean gap {:.4}/{:.4}{}",
            row.cell.describe(&family),
            row.mass,
            row.mean_gap,
            row.mean_budget,
            row.moment_gap
                .map(|g| format!(" moment gap {g:.4}/{:.4}", row.moment_budget.unwrap()))
                .unwrap_or_default()
        );
    }
    Ok(report)
}

#[derive(Args)]
pub struct IntervalsArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub groups: Option<PathBuf>,
    /// Minimum cell mass the guarantee applies to.
    #[arg(long)]
    pub gamma: f64,
    /// Coverage failure probability.
    #[arg(long)]
    pub delta: f64,
    /// Moment degree used for the tail bound.
    #[arg(long)]
    pub degree: u32,
    /// Training levels the bundle was produced with (set the slacks).
    #[arg(long)]
    pub train_alpha: f64,
    #[arg(long)]
    pub train_beta: f64,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn cmd_intervals(args: IntervalsArgs) -> Result<()> {
    let (bundle, _) = io::load_bundle(&args.bundle)?;
    let family = load_family(&args.groups)?;
    let data = io::load_dataset(&args.data)?;
    let params = IntervalParams::for_trained_bundle(
        &bundle,
        args.degree,
        args.gamma,
        args.delta,
        args.train_alpha,
        args.train_beta,
    )?;
    let header = FileHeader::new(serde_json::to_value(&params)?);
    let d_idx = bundle.degree_index(args.degree).expect("validated degree");
    let mut rows = Vec::with_capacity(data.len());
    for ex in &data {
        let pred = bundle.evaluate(&family, &ex.features.values)?;
        let interval = prediction_interval(&bundle, &family, &ex.features.values, &params)?;
        let i = crate::bucket::bucket_of(pred.mean, bundle.bucket_count);
        let j = crate::bucket::bucket_of(pred.moments[d_idx], bundle.bucket_count);
        rows.push(vec![
            ex.features.id.clone(),
            format!("{}", pred.mean),
            format!("{}", pred.moments[d_idx]),
            format!("{}", interval.width),
            format!("{}", interval.raw_lo),
            format!("{}", interval.raw_hi),
            format!("{}", interval.lo),
            format!("{}", interval.hi),
            format!("mean@{i},m{}@{j}", args.degree),
        ]);
    }
    std::fs::create_dir_all(&args.out)?;
    io::save_table(
        &args.out.join("intervals.csv"),
        &header,
        &[
            "id", "mean", "moment", "width", "raw_lo", "raw_hi", "lo", "hi", "cell",
        ],
        &rows,
    )?;
    let coverage = coverage_audit(&bundle, &data, &family, &params, 0.0)?;
    let coverage_rows: Vec<Vec<String>> = coverage
        .iter()
        .map(|row| {
            vec![
                row.cell.describe(&family),
                format!("{:.6}", row.mass),
                format!("{:.6}", row.coverage),
                format!("{:.6}", row.required),
                row.pass.to_string(),
            ]
        })
        .collect();
    io::save_table(
        &args.out.join("coverage.csv"),
        &header,
        &["cell", "mass", "coverage", "required", "pass"],
        &coverage_rows,
    )?;
    println!(
        "{} intervals written; {} qualifying cells, {} below target coverage",
        rows.len(),
        coverage.len(),
        coverage.iter().filter(|r| !r.pass).count()
    );
    Ok(())
}

#[derive(Args)]
pub struct CoverArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long)]
    pub distribution: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub groups: Option<PathBuf>,
    #[arg(long)]
    pub gamma: f64,
    #[arg(long)]
    pub delta: f64,
    /// Degrees to build candidate sets from (default: all tracked even
    /// degrees).
    #[arg(long, value_delimiter = ',')]
    pub degrees: Option<Vec<u32>>,
    #[arg(long)]
    pub train_alpha: f64,
    #[arg(long)]
    pub train_beta: f64,
    /// Also compute the brute-force optimum for comparison.
    #[arg(long, default_value_t = false)]
    pub exhaustive: bool,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn cmd_cover(args: CoverArgs) -> Result<()> {
    let (bundle, _) = io::load_bundle(&args.bundle)?;
    let family = load_family(&args.groups)?;
    let degrees = args.degrees.clone().unwrap_or_else(|| {
        bundle
            .moment_degrees
            .iter()
            .copied()
            .filter(|a| a % 2 == 0)
            .collect()
    });
    let params: Vec<IntervalParams> = degrees
        .iter()
        .map(|&a| {
            IntervalParams::for_trained_bundle(
                &bundle,
                a,
                args.gamma,
                args.delta,
                args.train_alpha,
                args.train_beta,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let instance = match (&args.distribution, &args.data) {
        (Some(path), _) => {
            let dist = io::load_distribution(path)?;
            build_cover_instance(&bundle, &family, &dist, &params)?
        }
        (None, Some(path)) => {
            let data = io::load_dataset(path)?;
            build_cover_instance_empirical(&bundle, &family, &data, &params)?
        }
        (None, None) => {
            return Err(Error::InvalidParameter(
                "cover needs a distribution or a dataset".into(),
            ))
        }
    };
    let solution = greedy_cover(&instance)?;
    let header = FileHeader::new(serde_json::json!({
        "gamma": args.gamma, "delta": args.delta, "degrees": degrees,
        "empirical_masses": instance.empirical_masses,
    }));
    std::fs::create_dir_all(&args.out)?;
    io::save_report(&args.out.join("cover_instance.json"), &header, &instance)?;
    io::save_report(&args.out.join("cover_solution.json"), &header, &solution)?;
    println!(
        "{} candidate sets over {} points{}; greedy chose {} sets, expected width {:.6}",
        instance.sets.len(),
        instance.masses.len(),
        if instance.empirical_masses {
            " (empirical masses)"
        } else {
            ""
        },
        solution.chosen.len(),
        solution.objective
    );
    if args.exhaustive {
        let opt = brute_force_cover(&instance)?;
        io::save_report(&args.out.join("cover_optimum.json"), &header, &opt)?;
        println!(
            "brute-force optimum {:.6} (greedy/optimum = {:.4})",
            opt.objective,
            solution.objective / opt.objective.max(f64::MIN_POSITIVE)
        );
    }
    Ok(())
}

#[derive(Args)]
pub struct CalcNArgs {
    #[arg(long)]
    pub alpha_prime: f64,
    #[arg(long)]
    pub beta_prime: f64,
    #[arg(long)]
    pub delta_prime: f64,
    #[arg(long)]
    pub epsilon: f64,
    /// Number of groups in the audited family.
    #[arg(long)]
    pub groups: u64,
    #[arg(long)]
    pub max_degree: u32,
    #[arg(long)]
    pub buckets: u32,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn cmd_calc_n(args: CalcNArgs) -> Result<()> {
    let targets = SampleSizeTargets {
        alpha_prime: args.alpha_prime,
        beta_prime: args.beta_prime,
        delta_prime: args.delta_prime,
        epsilon: args.epsilon,
        group_count: args.groups,
        max_degree: args.max_degree,
        bucket_count: args.buckets,
    };
    let plan = sample_size_calculator(&targets)?;
    println!("worst-case update count  Q_bar = {:.6e}", plan.q_bar);
    println!("per-test failure prob    delta = {:.6e}", plan.delta);
    println!("per-parameter sizes      n_alpha = {:.6e}, n_beta = {:.6e}", plan.n_alpha, plan.n_beta);
    println!("trainer levels           alpha = {:.8}, beta = {:.8}", plan.alpha, plan.beta);
    println!("fresh-block size         n = {:.6e}", plan.n);
    if let Some(path) = args.out {
        let header = FileHeader::new(serde_json::to_value(&targets)?);
        io::save_report(&path, &header, &plan)?;
        println!("plan written to {}", path.display());
    }
    Ok(())
}

#[derive(Args)]
pub struct SynthArgs {
    /// twopoint | grid | bernoulli-grid | bernoulli-field | constant
    #[arg(long)]
    pub spec: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of sampled rows for the dataset file.
    #[arg(long, default_value_t = 1000)]
    pub samples: usize,
    #[arg(long)]
    pub points: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub label_values: Option<usize>,
    #[arg(long)]
    pub intercept: Option<f64>,
    #[arg(long)]
    pub slope: Option<f64>,
    #[arg(long)]
    pub value: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn cmd_synth(args: SynthArgs) -> Result<()> {
    let spec = match args.spec.as_str() {
        "twopoint" => SyntheticSpec::TwoPoint,
        "grid" => SyntheticSpec::FiniteGrid {
            points: args.points.unwrap_or(40),
            dim: args.dim.unwrap_or(2),
            label_values: args.label_values.unwrap_or(3),
        },
        "bernoulli-grid" => SyntheticSpec::BernoulliGrid {
            points: args.points.unwrap_or(20),
            intercept: args.intercept.unwrap_or(0.15),
            slope: args.slope.unwrap_or(0.7),
        },
        "bernoulli-field" => SyntheticSpec::BernoulliField {
            dim: args.dim.unwrap_or(1),
            intercept: args.intercept.unwrap_or(0.15),
            slope: args.slope.unwrap_or(0.7),
        },
        "constant" => SyntheticSpec::ConstantLabel {
            dim: args.dim.unwrap_or(1),
            value: args.value.unwrap_or(0.5),
        },
        other => {
            return Err(Error::InvalidParameter(format!(
                "unknown synthetic spec {other:?}"
            )))
        }
    };
    spec.validate()?;
    std::fs::create_dir_all(&args.out)?;
    if let Ok(dist) = spec.distribution(args.seed) {
        io::save_distribution(&args.out.join("dist.json"), &dist)?;
        println!("distribution: {}", args.out.join("dist.json").display());
    }
    let mut stream = spec.stream(args.seed)?;
    let block = stream.draw_block(args.samples)?;
    let examples: Vec<LabeledExample> = (0..block.len())
        .map(|i| LabeledExample {
            features: crate::data::FeatureVector {
                id: format!("s{i}"),
                values: block.features(i).to_vec(),
            },
            label: block.labels[i],
        })
        .collect();
    io::save_dataset(&args.out.join("data.csv"), &examples)?;
    println!("dataset: {}", args.out.join("data.csv").display());
    Ok(())
}

/// Shared helper for examples and tests: load a dataset written by
/// `cmd_synth` back as labeled examples.
pub fn load_examples(path: &Path) -> Result<Vec<LabeledExample>> {
    io::load_dataset(path)
}
