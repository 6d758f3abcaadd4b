//! Command-line front end: `gen | build | replay | ablate | sweep | report | describe`.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or validation error.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use safeload_core::model::{ClassWeight, TrainConfig};
use safeload_core::pipeline::{build_pipeline, BuildConfig, Toggles};
use safeload_core::quota::QuotaParams;
use safeload_core::rules::RuleConfig;
use safeload_core::sim::{
    replay, run_ablation, sweep_params, CostModel, FeedbackTiming, ReplayConfig,
};
use safeload_core::workload::{describe, generate, GenConfig};
use safeload_core::{FeatureSchema, QueryRecord};

use crate::bundle::{load_bundle, save_bundle, BundleError};
use crate::config::{ConfigError, RunConfig};
use crate::report;
use crate::traceio::{read_trace, write_trace, TraceError};

#[derive(Parser, Debug)]
#[command(
    name = "safeload",
    version,
    about = "Admission control for memory-overloading queries"
)]
struct Cli {
    /// Master seed; generator and trainer streams derive from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// `key = value` file; flags given on the command line win.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic daily traces.
    Gen(GenArgs),
    /// Build an artifact bundle from a training trace.
    Build(BuildArgs),
    /// Replay a trace through a bundle.
    Replay(ReplayArgs),
    /// Build on one day, replay the next under every single-stage ablation.
    Ablate(AblateArgs),
    /// Replay under a grid of quota parameters.
    Sweep(SweepArgs),
    /// Tabulate decision logs.
    Report(ReportArgs),
    /// Summarize a trace.
    Describe(DescribeArgs),
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    clusters: Option<usize>,
    #[arg(long)]
    per_cluster: Option<usize>,
    #[arg(long)]
    mo_ratio: Option<f64>,
    #[arg(long)]
    repeat_rate: Option<f64>,
    #[arg(long)]
    group_size: Option<usize>,
    #[arg(long)]
    hard_neg: Option<f64>,
    #[arg(long)]
    days: Option<usize>,
}

#[derive(Args, Debug, Default)]
struct BuildOpts {
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    max_depth: Option<usize>,
    #[arg(long)]
    local_threshold: Option<usize>,
    #[arg(long)]
    positive_retention: Option<f64>,
    #[arg(long)]
    negative_retention: Option<f64>,
    #[command(flatten)]
    quota: QuotaOpts,
}

#[derive(Args, Debug, Default)]
struct QuotaOpts {
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    c_min: Option<f64>,
    #[arg(long)]
    daily_multiplier: Option<f64>,
    #[arg(long)]
    min_daily_quota: Option<f64>,
}

#[derive(Args, Debug)]
struct ReplayOpts {
    /// When false negatives become known: `completion` or `immediate`.
    #[arg(long)]
    feedback: Option<String>,
    #[arg(long)]
    provisioned_rate: Option<f64>,
    #[arg(long)]
    serverless_rate: Option<f64>,
    #[arg(long)]
    free_allowance: Option<f64>,
}

#[derive(Args, Debug)]
struct BuildArgs {
    #[arg(long)]
    trace: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    opts: BuildOpts,
}

#[derive(Args, Debug)]
struct ReplayArgs {
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long)]
    trace: PathBuf,
    /// Directory for summary.txt and decisions.csv; summary goes to stdout otherwise.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    no_rule: bool,
    #[arg(long)]
    no_correction: bool,
    #[arg(long)]
    no_locals: bool,
    #[arg(long)]
    no_quota: bool,
    #[command(flatten)]
    replay: ReplayOpts,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    test: PathBuf,
    /// Directory for the bundle, the table and one report per variant.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    build: BuildOpts,
    #[command(flatten)]
    replay: ReplayOpts,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long)]
    trace: PathBuf,
    #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
    gamma: Vec<f64>,
    #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
    beta: Vec<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    replay: ReplayOpts,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Decision logs; each row is named after the log's directory.
    #[arg(required = true)]
    logs: Vec<PathBuf>,
}

#[derive(Args, Debug)]
struct DescribeArgs {
    #[arg(long)]
    trace: PathBuf,
}

/// Failure classes, mapped to exit codes.
#[derive(Debug, thiserror::Error)]
enum Failure {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<TraceError> for Failure {
    fn from(e: TraceError) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<BundleError> for Failure {
    fn from(e: BundleError) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<safeload_core::Error> for Failure {
    fn from(e: safeload_core::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<report::LogError> for Failure {
    fn from(e: report::LogError) -> Self {
        Failure::Data(e.to_string())
    }
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Failure + '_ {
    move |e| Failure::Data(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(io(path))
}

fn create_dir(path: &Path) -> Result<(), Failure> {
    fs::create_dir_all(path).map_err(io(path))
}

struct Ctx<'a> {
    cfg: RunConfig,
    seed: u64,
    stdout: &'a mut dyn Write,
}

impl Ctx<'_> {
    fn say(&mut self, text: &str) -> Result<(), Failure> {
        self.stdout
            .write_all(text.as_bytes())
            .map_err(|e| Failure::Data(format!("stdout: {e}")))
    }
}

/// Trace file name of day `d` inside a `gen` output directory.
pub fn day_file(d: usize) -> String {
    format!("day-{d}.csv")
}

fn gen_config(ctx: &Ctx<'_>, a: &GenArgs) -> Result<GenConfig, Failure> {
    let c = &ctx.cfg;
    let d = GenConfig::default();
    Ok(GenConfig {
        seed: ctx.seed,
        n_clusters: c.resolve("clusters", a.clusters, d.n_clusters)?,
        queries_per_cluster: c.resolve("per_cluster", a.per_cluster, d.queries_per_cluster)?,
        mo_ratio: c.resolve("mo_ratio", a.mo_ratio, d.mo_ratio)?,
        repeat_rate: c.resolve("repeat_rate", a.repeat_rate, d.repeat_rate)?,
        mo_group_size: c.resolve("group_size", a.group_size, d.mo_group_size)?,
        hard_negative_rate: c.resolve("hard_neg", a.hard_neg, d.hard_negative_rate)?,
        days: c.resolve("days", a.days, d.days)?,
        mean_cpu_mo_s: c.resolve("mean_cpu_mo_s", None, d.mean_cpu_mo_s)?,
        mean_cpu_non_mo_s: c.resolve("mean_cpu_non_mo_s", None, d.mean_cpu_non_mo_s)?,
    })
}

fn quota_params(c: &RunConfig, q: &QuotaOpts) -> Result<QuotaParams, Failure> {
    let d = QuotaParams::default();
    let params = QuotaParams {
        gamma: c.resolve("gamma", q.gamma, d.gamma)?,
        beta: c.resolve("beta", q.beta, d.beta)?,
        c_min: c.resolve("c_min", q.c_min, d.c_min)?,
        daily_multiplier: c.resolve("daily_multiplier", q.daily_multiplier, d.daily_multiplier)?,
        min_daily_quota: c.resolve("min_daily_quota", q.min_daily_quota, d.min_daily_quota)?,
    };
    params.validate()?;
    Ok(params)
}

fn build_config(ctx: &Ctx<'_>, o: &BuildOpts) -> Result<BuildConfig, Failure> {
    let c = &ctx.cfg;
    let d = BuildConfig::default();
    let t = TrainConfig::default();
    Ok(BuildConfig {
        rule: RuleConfig {
            positive_retention_bound: c.resolve(
                "positive_retention",
                o.positive_retention,
                d.rule.positive_retention_bound,
            )?,
            negative_retention_bound: c.resolve(
                "negative_retention",
                o.negative_retention,
                d.rule.negative_retention_bound,
            )?,
        },
        train: TrainConfig {
            rounds: c.resolve("rounds", o.rounds, t.rounds)?,
            learning_rate: c.resolve("learning_rate", o.learning_rate, t.learning_rate)?,
            max_depth: c.resolve("max_depth", o.max_depth, t.max_depth)?,
            min_child_weight: c.resolve("min_child_weight", None, t.min_child_weight)?,
            lambda: c.resolve("lambda", None, t.lambda)?,
            positive_class_weight: ClassWeight::Auto,
            seed: ctx.seed,
        },
        local_threshold: c.resolve("local_threshold", o.local_threshold, d.local_threshold)?,
        quota: quota_params(c, &o.quota)?,
        seed: ctx.seed,
    })
}

fn replay_config(ctx: &Ctx<'_>, o: &ReplayOpts, toggles: Toggles) -> Result<ReplayConfig, Failure> {
    let c = &ctx.cfg;
    let feedback = match o.feedback.as_deref().or(c.raw("feedback")) {
        None | Some("completion") => FeedbackTiming::Completion,
        Some("immediate") => FeedbackTiming::Immediate,
        Some(other) => {
            return Err(Failure::Usage(format!(
                "feedback must be `completion` or `immediate`, got {other:?}"
            )))
        }
    };
    let d = CostModel::default();
    let cost = CostModel {
        provisioned_rate: c.resolve("provisioned_rate", o.provisioned_rate, d.provisioned_rate)?,
        serverless_rate: c.resolve("serverless_rate", o.serverless_rate, d.serverless_rate)?,
        free_serverless_allowance: c.resolve(
            "free_allowance",
            o.free_allowance,
            d.free_serverless_allowance,
        )?,
    };
    cost.validate()?;
    Ok(ReplayConfig {
        toggles,
        cost,
        feedback,
    })
}

/// Loads a bundle matching the trace's feature dimension.
fn load_for(
    bundle: &Path,
    trace: &[QueryRecord],
) -> Result<safeload_core::pipeline::ArtifactBundle, Failure> {
    Ok(load_bundle(
        bundle,
        trace.first().map(|r| r.features.len()),
    )?)
}

fn write_report(dir: &Path, r: &safeload_core::sim::ReplayReport) -> Result<(), Failure> {
    create_dir(dir)?;
    write_file(&dir.join("summary.txt"), &report::render_summary(r))?;
    write_file(&dir.join("decisions.csv"), &report::render_decision_log(r))
}

fn cmd_gen(ctx: &mut Ctx<'_>, a: &GenArgs) -> Result<(), Failure> {
    let config = gen_config(ctx, a)?;
    let days = generate(&config)?;
    create_dir(&a.out)?;
    for (d, day) in days.iter().enumerate() {
        write_trace(
            day,
            safeload_core::schema::DEFAULT_DIMENSION,
            a.out.join(day_file(d)),
        )?;
    }
    let total: usize = days.iter().map(Vec::len).sum();
    ctx.say(&format!(
        "wrote {} day(s), {total} records to {}\n",
        days.len(),
        a.out.display()
    ))
}

fn cmd_build(ctx: &mut Ctx<'_>, a: &BuildArgs) -> Result<(), Failure> {
    let config = build_config(ctx, &a.opts)?;
    let trace = read_trace(&a.trace)?;
    let schema = schema_for(&trace)?;
    let built = build_pipeline(&trace, &schema, &config)?;
    save_bundle(&built.bundle, &a.out)?;
    ctx.say(&report::render_build_summary(&built.summary))
}

/// Building needs the default feature layout.
fn schema_for(trace: &[QueryRecord]) -> Result<FeatureSchema, Failure> {
    let schema = FeatureSchema::default();
    match trace.first() {
        Some(r) if r.features.len() != schema.dimension() => Err(Failure::Data(format!(
            "trace has {} features; the default schema needs {}",
            r.features.len(),
            schema.dimension()
        ))),
        _ => Ok(schema),
    }
}

fn cmd_replay(ctx: &mut Ctx<'_>, a: &ReplayArgs) -> Result<(), Failure> {
    let toggles = Toggles {
        rule_filter: !a.no_rule,
        correction: !a.no_correction,
        local_models: !a.no_locals,
        quota: !a.no_quota,
    };
    let config = replay_config(ctx, &a.replay, toggles)?;
    let trace = read_trace(&a.trace)?;
    let bundle = load_for(&a.bundle, &trace)?;
    let r = replay(&trace, &bundle, &config)?;
    match &a.out {
        Some(dir) => {
            write_report(dir, &r)?;
            let m = &r.metrics;
            ctx.say(&format!(
                "precision {:.4} recall {:.4} f1 {:.4}; report in {}\n",
                m.precision,
                m.recall,
                m.f1,
                dir.display()
            ))
        }
        None => ctx.say(&report::render_summary(&r)),
    }
}

fn cmd_ablate(ctx: &mut Ctx<'_>, a: &AblateArgs) -> Result<(), Failure> {
    let build = build_config(ctx, &a.build)?;
    let config = replay_config(ctx, &a.replay, Toggles::ALL_ON)?;
    let train = read_trace(&a.train)?;
    let test = read_trace(&a.test)?;
    let schema = schema_for(&train)?;
    let built = build_pipeline(&train, &schema, &build)?;
    let rows = run_ablation(&built.bundle, &test, &config)?;
    let table = report::render_ablation(&rows);
    if let Some(dir) = &a.out {
        create_dir(dir)?;
        save_bundle(&built.bundle, dir.join("bundle"))?;
        for row in &rows {
            write_report(&dir.join(row.variant.label()), &row.report)?;
        }
        write_file(&dir.join("ablation.txt"), &table)?;
    }
    ctx.say(&table)
}

fn cmd_sweep(ctx: &mut Ctx<'_>, a: &SweepArgs) -> Result<(), Failure> {
    let config = replay_config(ctx, &a.replay, Toggles::ALL_ON)?;
    let trace = read_trace(&a.trace)?;
    let bundle = load_for(&a.bundle, &trace)?;
    let cells = sweep_params(&bundle, &trace, &a.gamma, &a.beta, &config)?;
    let table = report::render_sweep(&cells);
    if let Some(dir) = &a.out {
        create_dir(dir)?;
        write_file(&dir.join("sweep.txt"), &table)?;
    }
    ctx.say(&table)
}

fn cmd_report(ctx: &mut Ctx<'_>, a: &ReportArgs) -> Result<(), Failure> {
    let mut rows = Vec::with_capacity(a.logs.len());
    for path in &a.logs {
        let text = fs::read_to_string(path).map_err(io(path))?;
        let log = report::parse_decision_log(&text)?;
        let name = path
            .parent()
            .and_then(Path::file_name)
            .or_else(|| path.file_stem())
            .map_or_else(
                || path.display().to_string(),
                |n| n.to_string_lossy().into_owned(),
            );
        rows.push((name, report::recount(&log)));
    }
    ctx.say(&report::render_metrics_table(&rows))
}

fn cmd_describe(ctx: &mut Ctx<'_>, a: &DescribeArgs) -> Result<(), Failure> {
    let trace = read_trace(&a.trace)?;
    ctx.say(&report::render_profile(&describe(&trace)))
}

fn execute(cli: Cli, stdout: &mut dyn Write) -> Result<(), Failure> {
    let cfg = match &cli.config {
        Some(path) => RunConfig::parse(
            &fs::read_to_string(path)
                .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?,
        )?,
        None => RunConfig::default(),
    };
    let seed = cfg.resolve("seed", cli.seed, 0u64)?;
    let mut ctx = Ctx { cfg, seed, stdout };
    match &cli.command {
        Command::Gen(a) => cmd_gen(&mut ctx, a),
        Command::Build(a) => cmd_build(&mut ctx, a),
        Command::Replay(a) => cmd_replay(&mut ctx, a),
        Command::Ablate(a) => cmd_ablate(&mut ctx, a),
        Command::Sweep(a) => cmd_sweep(&mut ctx, a),
        Command::Report(a) => cmd_report(&mut ctx, a),
        Command::Describe(a) => cmd_describe(&mut ctx, a),
    }
}

/// Runs the CLI on `args` (program name first) and returns the exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let informational =
                matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion);
            let rendered = e.render().to_string();
            if informational {
                let _ = stdout.write_all(rendered.as_bytes());
                return 0;
            }
            let _ = stderr.write_all(rendered.as_bytes());
            return 1;
        }
    };
    match execute(cli, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            match e {
                Failure::Usage(_) => 1,
                Failure::Data(_) => 2,
            }
        }
    }
}
