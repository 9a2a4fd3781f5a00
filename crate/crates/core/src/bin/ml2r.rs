use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ml2r::bench::{
    cmd_bench, cmd_calibrate, cmd_compare, cmd_plan, read_rows_from, resolve_params, write_compare,
    write_derived, write_plan_rows, write_rows, BenchConfig, ParamSource,
};
use ml2r::engine::{replicate, run, with_threads, LevelSampler};
use ml2r::models::{Model, ModelConfig};
use ml2r::plan::{make_plan, CostRegime, Kind, Overrides, Plan, Rounding, StructuralParams};
use ml2r::{Error, Result};

#[derive(Parser)]
#[command(name = "ml2r", version, about = "Multilevel Richardson-Romberg and MLMC toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate V1 and var(Y0) of a model.
    Calibrate(Common),
    /// Optimal parameters over a grid of targets.
    Plan(PlanArgs),
    /// Execute a single plan.
    Run(RunArgs),
    /// Plan and replicate over a grid of targets, writing a result table.
    Bench(Common),
    /// Cost and time ratios of two result tables.
    Compare(CompareArgs),
}

#[derive(Args, Clone)]
struct Common {
    /// Bench configuration document; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model preset (call, lookback, barrier, nested, synthetic).
    #[arg(long)]
    model: Option<String>,
    /// Model configuration document.
    #[arg(long)]
    model_config: Option<PathBuf>,
    #[arg(long)]
    kind: Option<Kind>,
    /// Comma separated exponents k of eps = 2^-k.
    #[arg(long, value_delimiter = ',')]
    eps_grid: Option<Vec<i32>>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    m_max: Option<u64>,
    #[arg(long)]
    rounding: Option<Rounding>,
    #[arg(long)]
    regime: Option<CostRegime>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    budget_seconds: Option<f64>,
    #[arg(long)]
    threads: Option<usize>,
    /// Calibration sample size.
    #[arg(long)]
    samples: Option<u64>,
    /// `published` values for presets, or `calibrate`.
    #[arg(long)]
    params: Option<String>,
    /// Structural parameters document, bypassing both sources.
    #[arg(long)]
    params_file: Option<PathBuf>,
}

#[derive(Args)]
struct PlanArgs {
    #[command(flatten)]
    common: Common,
    /// Plan every kind in this list instead of `--kind`.
    #[arg(long, value_delimiter = ',')]
    kinds: Option<Vec<Kind>>,
    /// Pin the refiner root.
    #[arg(long)]
    m: Option<u64>,
    /// Write the plan document of the first cell here.
    #[arg(long)]
    save: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// Plan document; planned from the first grid target otherwise.
    #[arg(long)]
    plan: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    a: PathBuf,
    b: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Calibrate(c) => {
            let cfg = config(&c)?;
            in_pool(&cfg, || calibrate(&cfg))
        }
        Command::Plan(p) => plan(p),
        Command::Run(r) => {
            let cfg = config(&r.common)?;
            in_pool(&cfg, || run_plan(&cfg, &r))
        }
        Command::Bench(c) => {
            let cfg = config(&c)?;
            let params_file = c.params_file.clone();
            in_pool(&cfg, || bench(&cfg, params_file.as_deref()))
        }
        Command::Compare(c) => {
            let rows = cmd_compare(&read_rows_from(&c.a)?, &read_rows_from(&c.b)?)?;
            write_compare(output(c.out.as_deref())?, &rows)
        }
    }
}

fn in_pool(cfg: &BenchConfig, f: impl FnOnce() -> Result<()> + Send) -> Result<()> {
    match cfg.threads {
        Some(t) => with_threads(t, f)?,
        None => f(),
    }
}

fn config(c: &Common) -> Result<BenchConfig> {
    let mut cfg = match &c.config {
        Some(path) => BenchConfig::from_text(&fs::read_to_string(path)?)?,
        None => BenchConfig::default(),
    };
    if let Some(path) = &c.model_config {
        cfg.model = ModelConfig::from_text(&fs::read_to_string(path)?)?;
    }
    if let Some(m) = &c.model {
        cfg.model = ModelConfig::preset(m);
    }
    if let Some(v) = c.kind {
        cfg.kind = v;
    }
    if let Some(v) = &c.eps_grid {
        cfg.eps_grid = v.clone();
    }
    if let Some(v) = c.reps {
        cfg.reps = v;
    }
    if let Some(v) = c.seed {
        cfg.seed = v;
    }
    if let Some(v) = c.m_max {
        cfg.m_max = v;
    }
    if let Some(v) = c.rounding {
        cfg.rounding = v;
    }
    if let Some(v) = c.regime {
        cfg.regime = Some(v);
    }
    if let Some(v) = &c.out {
        cfg.out = Some(v.display().to_string());
    }
    if let Some(v) = c.budget_seconds {
        cfg.budget_seconds = Some(v);
    }
    if let Some(v) = c.threads {
        cfg.threads = Some(v);
    }
    if let Some(v) = c.samples {
        cfg.calibration_samples = v;
    }
    if let Some(v) = &c.params {
        cfg.params = match v.as_str() {
            "published" => ParamSource::Published,
            "calibrate" => ParamSource::Calibrate,
            other => return Err(Error::Parse(format!("unknown parameter source `{other}`"))),
        };
    }
    cfg.validate()?;
    Ok(cfg)
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(fs::File::create(p)?),
        None => Box::new(io::stdout().lock()),
    })
}

fn params_for(cfg: &BenchConfig, model: &Model, file: Option<&Path>) -> Result<StructuralParams> {
    match file {
        Some(path) => {
            let p: StructuralParams =
                toml::from_str(&fs::read_to_string(path)?).map_err(|e| Error::Parse(e.to_string()))?;
            p.validate()?;
            Ok(p)
        }
        None => resolve_params(cfg, model),
    }
}

fn calibrate(cfg: &BenchConfig) -> Result<()> {
    let model = cfg.model.build()?;
    let cal = cmd_calibrate(&model, cfg.calibration_samples, cfg.m_max, cfg.seed)?;
    let p = &cal.params;
    eprintln!(
        "{}: alpha = {}, beta = {}, V1 = {:.4}, var(Y0) = {:.4}, theta = {:.4}",
        model.id, p.alpha, p.beta, p.v1, p.var_y0, cal.theta
    );
    let text = toml::to_string(p).map_err(|e| Error::Parse(e.to_string()))?;
    let mut out = output(cfg.out.as_deref().map(Path::new))?;
    out.write_all(text.as_bytes())?;
    Ok(())
}

fn plan(args: PlanArgs) -> Result<()> {
    let cfg = config(&args.common)?;
    let model = cfg.model.build()?;
    let params = params_for(&cfg, &model, args.common.params_file.as_deref())?;
    let kinds = args.kinds.clone().unwrap_or_else(|| vec![cfg.kind]);
    let overrides = Overrides { m: args.m, ..Default::default() };
    let regime = cfg.regime.unwrap_or_else(|| model.preferred_regime());
    let rows = cmd_plan(&kinds, &params, &cfg.epsilons(), regime, cfg.rounding, cfg.m_max, &overrides)?;
    if let (Some(path), Some(first)) = (&args.save, rows.first()) {
        fs::write(path, first.plan.to_text())?;
    }
    for row in &rows {
        for w in &row.plan.warnings {
            eprintln!("warning: {w}");
        }
    }
    write_plan_rows(output(cfg.out.as_deref().map(Path::new))?, &rows)
}

fn run_plan(cfg: &BenchConfig, args: &RunArgs) -> Result<()> {
    let model = cfg.model.build()?;
    let plan = match &args.plan {
        Some(path) => Plan::from_text(&fs::read_to_string(path)?)?,
        None => {
            let params = params_for(cfg, &model, args.common.params_file.as_deref())?;
            let (_, eps) = *cfg.epsilons().first().ok_or_else(|| Error::InvalidParameter("empty eps grid".into()))?;
            let regime = cfg.regime.unwrap_or_else(|| model.preferred_regime());
            make_plan(cfg.kind, eps, &params, regime, cfg.rounding, cfg.m_max, &Overrides::default())?
        }
    };
    let mut out = output(cfg.out.as_deref().map(Path::new))?;
    if args.common.reps.is_some() {
        let st = replicate(&plan, &model, cfg.reps, cfg.seed, model.reference)?;
        writeln!(out, "L = {}", st.l)?;
        writeln!(out, "mean = {}", st.mean_estimate)?;
        writeln!(out, "nu_tilde = {}", st.nu_tilde)?;
        if let (Some(mu), Some(e)) = (st.mu_tilde, st.eps_tilde) {
            writeln!(out, "bias = {mu}")?;
            writeln!(out, "l2_error = {e}")?;
        }
        writeln!(out, "time_s = {}", st.mean_time.as_secs_f64())?;
    } else {
        let r = run(&plan, &model, cfg.seed)?;
        writeln!(out, "estimate = {}", r.estimate)?;
        writeln!(out, "nu_bar = {}", r.nu_bar)?;
        writeln!(out, "N_j = {:?}", r.level_counts())?;
        writeln!(out, "cost = {}", r.cost_units)?;
        writeln!(out, "time_s = {}", r.wall_time.as_secs_f64())?;
    }
    Ok(())
}

fn bench(cfg: &BenchConfig, params_file: Option<&Path>) -> Result<()> {
    let model = cfg.model.build()?;
    let params = params_for(cfg, &model, params_file)?;
    let res = cmd_bench(cfg, &model, &params)?;
    if res.aborted {
        eprintln!("warning: wall-clock budget exhausted after {} rows", res.rows.len());
    }
    write_rows(output(cfg.out.as_deref().map(Path::new))?, &res.rows)?;
    if let Some(out) = &cfg.out {
        write_derived(fs::File::create(format!("{out}.derived.csv"))?, &res.derived)?;
    }
    Ok(())
}
