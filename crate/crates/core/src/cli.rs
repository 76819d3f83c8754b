//! Command-line front end. Every subcommand writes CSV; reports are also printed as JSON.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::data::{open_sessions, read_dataset, read_header, write_dataset, DatasetPaths, SessionReader};
use crate::error::{invalid, Result};
use crate::estimators::{build, report_from_values, session_values, EstimateReport, EstimatorKind, FittedModels, SessionDiagnostics};
use crate::harness::{
    run_misspecification_study, run_power_study, run_sweep, verify_theory, SweepConfig, TheoryConfig, TheoryRow,
};
use crate::sim::{generate_dataset, SimConfig};
use crate::variance::{run_test, RerandomizedStatistic, TestOptions, TestReport, VarianceMethod};

#[derive(Parser, Debug)]
#[command(name = "dqlab", version, about = "Treatment effects under Markovian interference")]
pub struct Cli {
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Overrides the seed in the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Simulate an experiment and write `<out>.ndjson`, `<out>.holdout.ndjson`, `<out>.header.json`.
    Simulate(SimulateArgs),
    /// Run estimators over a dataset.
    Estimate(EstimateArgs),
    /// Sharp-null test of the DQ statistic.
    Test(TestArgs),
    /// Expansion identity and remainder bound on random tabular MDPs.
    VerifyTheory(TheoryArgs),
    /// Estimator accuracy over effects, viewer counts and seeds.
    Sweep(StudyArgs),
    /// Rejection rates of the sharp-null tests.
    Power(StudyArgs),
    /// Bias when estimators are told the wrong treatment probability.
    Misspec(StudyArgs),
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// SimConfig JSON, or a sweep config whose `base` is used.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output path prefix.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub n_viewers: Option<usize>,
    #[arg(long)]
    pub tau_star: Option<f64>,
}

#[derive(Args, Debug)]
pub struct EstimateArgs {
    /// Dataset path prefix.
    #[arg(long)]
    pub data: PathBuf,
    /// Comma-separated estimator names.
    #[arg(long, value_delimiter = ',', default_value = "naive,naive_dr,ope,ope_dr,dq,dq_dr")]
    pub estimators: Vec<String>,
    /// Treatment probability given to the estimators; the header's nominal one by default.
    #[arg(long)]
    pub p: Option<f64>,
    /// CSV output; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Sessions per block while streaming the file.
    #[arg(long, default_value_t = 65_536)]
    pub chunk: usize,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum MethodArg {
    ClosedForm,
    ExactM2,
    ApproxM,
    Rerandomization,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum StatisticArg {
    Dq,
    DqDr,
}

#[derive(Args, Debug)]
pub struct TestArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "closed-form")]
    pub method: MethodArg,
    #[arg(long, value_enum, default_value = "dq")]
    pub statistic: StatisticArg,
    #[arg(long, default_value_t = 0.9)]
    pub level: f64,
    #[arg(long, default_value_t = 10_000)]
    pub draws: usize,
    #[arg(long)]
    pub p: Option<f64>,
    /// CSV output; the JSON report always goes to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TheoryArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// CSV output; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct StudyArgs {
    /// SweepConfig JSON; defaults apply to missing fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides `output_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write long-format `plot_data.csv`.
    #[arg(long)]
    pub emit_plot_data: bool,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

fn load_sim_config(path: Option<&Path>) -> Result<SimConfig> {
    let Some(path) = path else {
        return Ok(SimConfig::default());
    };
    let v: serde_json::Value = read_json(path)?;
    if v.get("base").is_some() {
        Ok(serde_json::from_value::<SweepConfig>(v)?.base)
    } else {
        Ok(serde_json::from_value(v)?)
    }
}

fn load_sweep(args: &StudyArgs, seed: Option<u64>) -> Result<SweepConfig> {
    let mut cfg: SweepConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => SweepConfig::default(),
    };
    if let Some(s) = seed {
        cfg.base.seed = s;
    }
    if let Some(o) = &args.out {
        cfg.output_dir = o.clone();
    }
    cfg.emit_plot_data |= args.emit_plot_data;
    Ok(cfg)
}

fn csv_out(out: Option<&Path>) -> Result<csv::Writer<Box<dyn Write>>> {
    let w: Box<dyn Write> = match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            Box::new(File::create(p)?)
        }
        None => Box::new(std::io::stdout()),
    };
    Ok(csv::Writer::from_writer(w))
}

fn simulate(args: &SimulateArgs, seed: Option<u64>) -> Result<()> {
    let mut cfg = load_sim_config(args.config.as_deref())?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(n) = args.n_viewers {
        cfg.n_viewers = n;
    }
    if let Some(t) = args.tau_star {
        cfg.tau_star = t;
    }
    let ds = generate_dataset(&cfg)?;
    let paths = write_dataset(&ds, &args.out, Some(&cfg))?;
    log::info!("wrote {} sessions to {}", ds.sessions.len(), paths.main.display());
    Ok(())
}

/// Streams the main sessions in blocks, so memory is bounded by the block size.
pub fn estimate_file(prefix: &Path, kinds: &[EstimatorKind], p: Option<f64>, chunk: usize) -> Result<Vec<EstimateReport>> {
    let header = read_header(prefix)?;
    let p = p.unwrap_or(header.p_nominal);
    let models = if kinds.iter().any(|k| k.needs_q_model() || k.needs_reward_model()) {
        let f = File::open(DatasetPaths::new(prefix).holdout)?;
        let holdout = SessionReader::new(BufReader::new(f), &header.truncated_viewers).collect::<Result<Vec<_>>>()?;
        Some(FittedModels::fit(&holdout)?)
    } else {
        None
    };
    let stats = kinds
        .iter()
        .map(|&k| build(k, p, models.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    let mut values = vec![Vec::new(); stats.len()];
    let mut diags = vec![SessionDiagnostics::default(); stats.len()];
    let mut truncated = 0;
    let mut reader = open_sessions(prefix, &header)?;
    let chunk = chunk.max(1);
    loop {
        let block = reader.by_ref().take(chunk).collect::<Result<Vec<_>>>()?;
        if block.is_empty() {
            break;
        }
        truncated += block.iter().filter(|s| !s.terminated).count();
        for ((stat, vals), diag) in stats.iter().zip(values.iter_mut()).zip(diags.iter_mut()) {
            let (v, d) = session_values(stat.as_ref(), &block);
            vals.extend(v);
            diag.max_weight = diag.max_weight.max(d.max_weight);
            diag.form_gap = diag.form_gap.max(d.form_gap);
        }
    }
    stats
        .iter()
        .zip(values)
        .zip(diags)
        .map(|((stat, v), d)| report_from_values(stat.as_ref(), v, d, truncated, false))
        .collect()
}

fn estimate(args: &EstimateArgs) -> Result<()> {
    let kinds = args
        .estimators
        .iter()
        .map(|s| EstimatorKind::parse(s.trim()))
        .collect::<Result<Vec<_>>>()?;
    let reports = estimate_file(&args.data, &kinds, args.p, args.chunk)?;
    let mut w = csv_out(args.out.as_deref())?;
    w.write_record(EstimateReport::CSV_HEADER)?;
    for r in &reports {
        w.write_record(r.csv_record())?;
    }
    w.flush()?;
    Ok(())
}

fn test(args: &TestArgs, seed: Option<u64>) -> Result<()> {
    let (ds, _) = read_dataset(&args.data)?;
    let opts = TestOptions {
        method: match args.method {
            MethodArg::ClosedForm => VarianceMethod::ClosedForm,
            MethodArg::ExactM2 => VarianceMethod::ExactM2,
            MethodArg::ApproxM => VarianceMethod::ApproxM,
            MethodArg::Rerandomization => VarianceMethod::Rerandomization,
        },
        statistic: match args.statistic {
            StatisticArg::Dq => RerandomizedStatistic::DqMc,
            StatisticArg::DqDr => RerandomizedStatistic::DqDr,
        },
        level: args.level,
        p: args.p,
        n_draws: args.draws,
        seed: seed.unwrap_or(0),
    };
    let report = run_test(&ds, &opts)?;
    for w in &report.warnings {
        log::warn!("{w}");
    }
    println!("{}", serde_json::to_string_pretty(&report)?);
    if let Some(out) = &args.out {
        let mut w = csv_out(Some(out))?;
        w.write_record(TestReport::CSV_HEADER)?;
        w.write_record(report.csv_record())?;
        w.flush()?;
    }
    Ok(())
}

fn theory(args: &TheoryArgs, seed: Option<u64>) -> Result<()> {
    let mut cfg: TheoryConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => TheoryConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let rows = verify_theory(&cfg)?;
    let max_order = cfg.orders.iter().copied().max().unwrap_or(0);
    let mut w = csv_out(args.out.as_deref())?;
    w.write_record(TheoryRow::csv_header(max_order))?;
    for r in &rows {
        w.write_record(r.csv_record(max_order))?;
    }
    w.flush()?;
    let failed = rows.iter().filter(|r| !r.pass()).count();
    if failed > 0 {
        log::warn!("{failed} of {} expansions failed", rows.len());
    }
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate(a) => simulate(a, cli.seed),
        Command::Estimate(a) => estimate(a),
        Command::Test(a) => test(a, cli.seed),
        Command::VerifyTheory(a) => theory(a, cli.seed),
        Command::Sweep(a) => {
            let cfg = load_sweep(a, cli.seed)?;
            run_sweep(&cfg)?.write(&cfg.output_dir, cfg.emit_plot_data)
        }
        Command::Power(a) => {
            let cfg = load_sweep(a, cli.seed)?;
            run_power_study(&cfg)?.write(&cfg.output_dir, cfg.emit_plot_data)
        }
        Command::Misspec(a) => {
            let cfg = load_sweep(a, cli.seed)?;
            run_misspecification_study(&cfg)?.write(&cfg.output_dir, cfg.emit_plot_data)
        }
    }
}

/// Parses arguments and runs; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let result = match cli.threads {
        Some(0) => Err(invalid("threads", "must be positive")),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| dispatch(&cli)),
            Err(e) => Err(invalid("threads", e.to_string())),
        },
        None => dispatch(&cli),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
