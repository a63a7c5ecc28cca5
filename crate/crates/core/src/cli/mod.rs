//! Command-line front end: estimation, the three batch studies, and named
//! oracle checks.
//!
//! Every study writes its CSV tables plus a `manifest.txt` into the output
//! directory. The manifest is itself a config file holding the fully
//! resolved settings, so `--config out/manifest.txt` reruns the study and
//! reproduces the tables byte for byte.

pub mod checks;
pub mod config;
pub mod output;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::experiments::{
    run_convergence, run_portfolio_study, run_reinforcement, ConvergenceConfig, PortfolioStudy, Progress,
    ReinforcementConfig, SimulationConfig, SimulationParams,
};
use crate::model::{split_seed, Ranking, UniformCorrelationModel};
use crate::recursive::{conditional_moments, QuadratureSpec};

use self::checks::{run_check, CheckParams, CHECK_NAMES};
use self::config::{ConfigFile, ConfigWriter, Section};
use self::output::{real, CsvTable};

pub const MANIFEST_NAME: &str = "manifest.txt";

#[derive(Debug, Clone, Parser)]
#[command(name = "rankmoments", version, about = "Conditional moments of equicorrelated normals given a ranking")]
pub struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub workers: Option<usize>,

    /// Master seed; overrides the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    #[command(flatten)]
    pub quadrature: QuadratureArgs,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct QuadratureArgs {
    /// Simpson nodes of the common-factor grid (odd).
    #[arg(long, global = true)]
    pub m_nodes: Option<usize>,
    /// Nodes of each inner running-integral grid.
    #[arg(long, global = true)]
    pub x_nodes: Option<usize>,
    /// Half-width of the common-factor grid.
    #[arg(long, global = true)]
    pub m_halfwidth: Option<f64>,
    /// Inner grid padding in conditional SDs.
    #[arg(long, global = true)]
    pub x_padding: Option<f64>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Conditional means and SDs of one model given a ranking.
    Estimate(EstimateArgs),
    /// Conditional SD of quantile components across n and rho.
    Convergence(StudyArgs),
    /// Conditional SD of the median component as the prior means tilt.
    Reinforce(StudyArgs),
    /// Certainty-equivalent returns of prior, rank and clairvoyant portfolios.
    Portfolio(StudyArgs),
    /// Run a named cross-validation check and print its verdict.
    Oracle(OracleArgs),
}

#[derive(Debug, Clone, Args)]
pub struct EstimateArgs {
    /// Config file with a [model] section.
    #[arg(long)]
    pub config: PathBuf,
    /// One-based component indices from lowest to highest, comma separated.
    #[arg(long)]
    pub ranking: Option<String>,
    /// Write the CSV here (plus a manifest beside it) instead of stdout.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct StudyArgs {
    /// Config file; missing keys take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory for the CSV tables and manifest.
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    /// Print the resolved config and exit without running.
    #[arg(long)]
    pub print_config: bool,
}

#[derive(Debug, Clone, Args)]
pub struct OracleArgs {
    /// One of: exchangeability, closed-form-n2, engine-vs-rejection,
    /// order-stat, limit-mean, variance-identity, shift-invariance.
    pub check: String,
    #[arg(long)]
    pub n: Option<usize>,
    /// One-based order-statistic index.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub rho: Option<f64>,
    /// Quantile level.
    #[arg(long)]
    pub p: Option<f64>,
    /// Accepted samples or replications.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Random portfolio problems.
    #[arg(long)]
    pub problems: Option<usize>,
    /// Expected value for order-stat.
    #[arg(long)]
    pub target: Option<f64>,
}

/// What a successful invocation produced.
#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Done,
    /// An oracle check ran but its verdict was FAIL.
    CheckFailed,
}

const DEFAULT_ORACLE_SEED: u64 = 20_240_601;

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

fn read_config(path: &Path) -> Result<ConfigFile> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    ConfigFile::parse(&text).map_err(|e| e.tagged(path.display().to_string()))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// Fresh seed for runs that did not specify one.
fn generated_seed() -> u64 {
    let nanos = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_nanos());
    split_seed(nanos as u64, &[(nanos >> 64) as u64, std::process::id() as u64])
}

/// Config values, then command-line overrides, then validation.
pub fn resolve_quadrature(cfg: &ConfigFile, overrides: &QuadratureArgs) -> Result<QuadratureSpec> {
    let sec = cfg.section("quadrature");
    let mut spec = QuadratureSpec::default();
    if let Some(v) = sec.get("m_nodes")? {
        spec.m_nodes = v;
    }
    if let Some(v) = sec.get("x_nodes")? {
        spec.x_nodes = v;
    }
    if let Some(v) = sec.get("m_halfwidth")? {
        spec.m_halfwidth = v;
    }
    if let Some(v) = sec.get("x_padding")? {
        spec.x_padding = v;
    }
    sec.finish()?;
    if let Some(v) = overrides.m_nodes {
        spec.m_nodes = v;
    }
    if let Some(v) = overrides.x_nodes {
        spec.x_nodes = v;
    }
    if let Some(v) = overrides.m_halfwidth {
        spec.m_halfwidth = v;
    }
    if let Some(v) = overrides.x_padding {
        spec.x_padding = v;
    }
    spec.validate()?;
    Ok(spec)
}

fn write_quadrature(w: &mut ConfigWriter, spec: &QuadratureSpec) {
    w.section("quadrature")
        .value("m_nodes", spec.m_nodes)
        .value("x_nodes", spec.x_nodes)
        .value("m_halfwidth", spec.m_halfwidth)
        .value("x_padding", spec.x_padding);
}

fn set<T: std::str::FromStr>(sec: &Section, key: &str, slot: &mut T) -> Result<()> {
    if let Some(v) = sec.get(key)? {
        *slot = v;
    }
    Ok(())
}

fn set_list<T: std::str::FromStr>(sec: &Section, key: &str, slot: &mut Vec<T>) -> Result<()> {
    if let Some(v) = sec.get_list(key)? {
        *slot = v;
    }
    Ok(())
}

/// Model and ranking from a `[model]` section: either `n` (and `rho`) for
/// the standard structure, or `mu`, `sigma` and `rho` lists. `ranking`
/// lists one-based indices from lowest to highest and defaults to the
/// identity.
pub fn resolve_model(cfg: &ConfigFile, ranking_override: Option<&str>) -> Result<(UniformCorrelationModel, Ranking)> {
    let sec = cfg.section("model");
    let rho: f64 = sec.get("rho")?.ok_or_else(|| Error::Config {
        line: 0,
        message: "[model] needs 'rho'".into(),
    })?;
    let n: Option<usize> = sec.get("n")?;
    let mu: Option<Vec<f64>> = sec.get_list("mu")?;
    let sigma: Option<Vec<f64>> = sec.get_list("sigma")?;
    let model = match (n, mu) {
        (Some(n), None) => {
            let sigma = sigma.unwrap_or_else(|| vec![1.0; n]);
            UniformCorrelationModel::new(vec![0.0; n], sigma, rho)?
        }
        (n, Some(mu)) => {
            if let Some(n) = n {
                if n != mu.len() {
                    return Err(Error::Config {
                        line: sec.line_of("n"),
                        message: format!("n = {n} but mu has {} entries", mu.len()),
                    });
                }
            }
            let sigma = sigma.unwrap_or_else(|| vec![1.0; mu.len()]);
            UniformCorrelationModel::new(mu, sigma, rho)?
        }
        (None, None) => {
            return Err(Error::Config {
                line: 0,
                message: "[model] needs 'n' or 'mu'".into(),
            })
        }
    };
    let ranking_line = sec.line_of("ranking");
    let listed: Option<Vec<usize>> = match ranking_override {
        Some(text) => Some(parse_one_based(text).map_err(|e| e.tagged("--ranking"))?),
        None => {
            let r: Option<Vec<usize>> = sec.get_list("ranking")?;
            r
        }
    };
    sec.finish()?;
    let ranking = match listed {
        None => Ranking::identity(model.n()),
        Some(one_based) => {
            if one_based.contains(&0) {
                return Err(Error::Config {
                    line: ranking_line,
                    message: "ranking indices are one-based".into(),
                });
            }
            let ranking = Ranking::new(one_based.iter().map(|i| i - 1).collect())?;
            if ranking.len() != model.n() {
                return Err(Error::DimensionMismatch {
                    expected: model.n(),
                    got: ranking.len(),
                });
            }
            ranking
        }
    };
    Ok((model, ranking))
}

fn parse_one_based(text: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| Error::Domain(format!("cannot parse ranking entry '{}'", s.trim())))
        })
        .collect()
}

fn write_model(w: &mut ConfigWriter, model: &UniformCorrelationModel, ranking: &Ranking) {
    let one_based: Vec<usize> = ranking.order().iter().map(|i| i + 1).collect();
    w.section("model")
        .value("rho", model.rho())
        .list("mu", model.mu())
        .list("sigma", model.sigma())
        .list("ranking", &one_based);
}

pub fn resolve_convergence(cfg: &ConfigFile, quadrature: QuadratureSpec) -> Result<ConvergenceConfig> {
    let sec = cfg.section("convergence");
    let mut c = ConvergenceConfig {
        quadrature,
        ..Default::default()
    };
    set_list(&sec, "n_values", &mut c.n_values)?;
    set_list(&sec, "rho_values", &mut c.rho_values)?;
    set_list(&sec, "quantiles", &mut c.quantiles)?;
    sec.finish()?;
    Ok(c)
}

fn write_convergence(c: &ConvergenceConfig) -> ConfigWriter {
    let mut w = ConfigWriter::default();
    w.section("convergence")
        .list("n_values", &c.n_values)
        .list("rho_values", &c.rho_values)
        .list("quantiles", &c.quantiles);
    write_quadrature(&mut w, &c.quadrature);
    w
}

pub fn resolve_reinforcement(cfg: &ConfigFile, quadrature: QuadratureSpec) -> Result<ReinforcementConfig> {
    let sec = cfg.section("reinforce");
    let mut c = ReinforcementConfig {
        quadrature,
        ..Default::default()
    };
    set_list(&sec, "n_values", &mut c.n_values)?;
    set_list(&sec, "rho_values", &mut c.rho_values)?;
    set_list(&sec, "r_values", &mut c.r_values)?;
    set(&sec, "quantile", &mut c.quantile)?;
    sec.finish()?;
    Ok(c)
}

fn write_reinforcement(c: &ReinforcementConfig) -> ConfigWriter {
    let mut w = ConfigWriter::default();
    w.section("reinforce")
        .list("n_values", &c.n_values)
        .list("rho_values", &c.rho_values)
        .list("r_values", &c.r_values)
        .value("quantile", c.quantile);
    write_quadrature(&mut w, &c.quadrature);
    w
}

/// The seed comes from `--seed`, then the config, then a fresh one.
pub fn resolve_simulation(
    cfg: &ConfigFile,
    quadrature: QuadratureSpec,
    seed_override: Option<u64>,
) -> Result<SimulationConfig> {
    let sec = cfg.section("portfolio");
    let mut c = SimulationConfig {
        quadrature,
        ..Default::default()
    };
    set_list(&sec, "n_values", &mut c.n_values)?;
    set_list(&sec, "rho_values", &mut c.rho_values)?;
    set(&sec, "instances", &mut c.instances)?;
    let mut p = SimulationParams::default();
    set(&sec, "sigma_mu", &mut p.sigma_mu)?;
    set(&sec, "sigma2_big_sigma", &mut p.sigma2_big_sigma)?;
    set(&sec, "tau", &mut p.tau)?;
    set(&sec, "gamma", &mut p.gamma)?;
    c.params = p;
    let configured: Option<u64> = sec.get("seed")?;
    sec.finish()?;
    c.master_seed = seed_override.or(configured).unwrap_or_else(generated_seed);
    Ok(c)
}

fn write_simulation(c: &SimulationConfig) -> ConfigWriter {
    let mut w = ConfigWriter::default();
    w.section("portfolio")
        .list("n_values", &c.n_values)
        .list("rho_values", &c.rho_values)
        .value("instances", c.instances)
        .value("sigma_mu", c.params.sigma_mu)
        .value("sigma2_big_sigma", c.params.sigma2_big_sigma)
        .value("tau", c.params.tau)
        .value("gamma", c.params.gamma)
        .value("seed", c.master_seed);
    write_quadrature(&mut w, &c.quadrature);
    w
}

/// Runs one parsed invocation on a private thread pool of the requested
/// size. Progress goes to standard error.
pub fn run(cli: &Cli) -> Result<Outcome> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.workers.unwrap_or(0))
        .build()
        .map_err(|e| Error::NumericalFailure(format!("cannot start worker pool: {e}")))?;
    let workers = pool.current_num_threads();
    let progress = |msg: &str| eprintln!("{msg}");
    pool.install(|| match &cli.command {
        Command::Estimate(args) => cmd_estimate(cli, args, workers),
        Command::Convergence(args) => cmd_convergence(cli, args, workers, &progress),
        Command::Reinforce(args) => cmd_reinforce(cli, args, workers, &progress),
        Command::Portfolio(args) => cmd_portfolio(cli, args, workers, &progress),
        Command::Oracle(args) => cmd_oracle(cli, args),
    })
}

/// Parses `args`, runs, and maps the result to an exit status: 0 on
/// success, 1 on any error or failed check, 2 on usage errors.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(Outcome::Done) => 0,
        Ok(Outcome::CheckFailed) => 1,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

struct Manifest<'a> {
    subcommand: &'a str,
    seed: Option<u64>,
    workers: usize,
    started: u64,
    outputs: Vec<PathBuf>,
}

impl Manifest<'_> {
    fn render(&self, resolved: &ConfigWriter) -> String {
        let mut w = ConfigWriter::default();
        w.comment("rankmoments run manifest; pass it back with --config to rerun")
            .section("run")
            .value("subcommand", self.subcommand)
            .value("version", env!("CARGO_PKG_VERSION"));
        if let Some(seed) = self.seed {
            w.value("seed", seed);
        }
        w.value("workers", self.workers)
            .value("started_unix", self.started)
            .value("finished_unix", unix_now());
        let outputs: Vec<String> = self.outputs.iter().map(|p| p.display().to_string()).collect();
        w.list("outputs", &outputs);
        format!("{}\n{}", w.finish(), resolved.finish())
    }
}

fn study_config(args: &StudyArgs, section: &str) -> Result<ConfigFile> {
    let cfg = match &args.config {
        Some(path) => read_config(path)?,
        None => ConfigFile::default(),
    };
    cfg.check_sections(&[section, "quadrature", "run"])?;
    Ok(cfg)
}

fn prepare_out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn cmd_estimate(cli: &Cli, args: &EstimateArgs, workers: usize) -> Result<Outcome> {
    let started = unix_now();
    let cfg = read_config(&args.config)?;
    cfg.check_sections(&["model", "quadrature", "run"])?;
    let spec = resolve_quadrature(&cfg, &cli.quadrature)?;
    let (model, ranking) = resolve_model(&cfg, args.ranking.as_deref())?;
    let res = conditional_moments(&model, &ranking, &spec)?;
    let one_based: Vec<String> = ranking.order().iter().map(|i| (i + 1).to_string()).collect();
    let mut table = CsvTable::new(&["index", "mean", "sd"])
        .comment(format!("log_prob = {}", real(res.log_prob)))
        .comment(format!("ranking (lowest to highest) = {}", one_based.join(" ")));
    for i in 0..model.n() {
        table.push(vec![(i + 1).to_string(), real(res.mean[i]), real(res.sd[i])]);
    }
    let csv = table.render();
    match &args.output {
        None => print!("{csv}"),
        Some(path) => {
            write_file(path, &csv)?;
            let mut resolved = ConfigWriter::default();
            write_model(&mut resolved, &model, &ranking);
            write_quadrature(&mut resolved, &spec);
            let manifest = Manifest {
                subcommand: "estimate",
                seed: None,
                workers,
                started,
                outputs: vec![path.clone()],
            };
            write_file(&path.with_extension("manifest.txt"), &manifest.render(&resolved))?;
        }
    }
    Ok(Outcome::Done)
}

pub fn convergence_csv(rows: &[crate::experiments::ConvergenceRow]) -> String {
    let mut t = CsvTable::new(&["n", "rho", "quantile", "index", "sd"])
        .comment("conditional SD of component ceil(quantile n) under the standard structure, identity ranking");
    for r in rows {
        t.push(vec![
            r.n.to_string(),
            real(r.rho),
            real(r.quantile),
            r.index.to_string(),
            real(r.sd),
        ]);
    }
    t.render()
}

pub fn reinforcement_csv(rows: &[crate::experiments::ReinforcementRow]) -> String {
    let mut t = CsvTable::new(&["n", "rho", "r", "sd"])
        .comment("conditional SD of the quantile component with prior means tilted by r");
    for r in rows {
        t.push(vec![r.n.to_string(), real(r.rho), real(r.r), real(r.sd)]);
    }
    t.render()
}

pub fn instances_csv(study: &PortfolioStudy) -> String {
    let mut t = CsvTable::new(&["n", "rho", "instance", "seed", "ceq_prior", "ceq_clair", "ceq_rank"]);
    for r in &study.instances {
        t.push(vec![
            r.n.to_string(),
            real(r.rho),
            r.instance.to_string(),
            r.seed.to_string(),
            real(r.ceq_prior),
            real(r.ceq_clair),
            real(r.ceq_rank),
        ]);
    }
    t.render()
}

pub fn aggregate_csv(study: &PortfolioStudy, instances: usize) -> String {
    let mut t = CsvTable::new(&[
        "n",
        "rho",
        "mean_prior",
        "mean_clair",
        "mean_rank",
        "pct_diff_clair_rank",
    ])
    .comment("pct_diff_clair_rank = 100 (mean_clair - mean_rank) / |mean_clair|");
    for a in &study.aggregates {
        if a.completed < instances {
            t = t.comment(format!(
                "INCOMPLETE: n={} rho={} averages {} of {} instances",
                a.n, a.rho, a.completed, instances
            ));
        }
    }
    for a in &study.aggregates {
        t.push(vec![
            a.n.to_string(),
            real(a.rho),
            real(a.mean_prior),
            real(a.mean_clair),
            real(a.mean_rank),
            real(a.pct_diff_clair_rank),
        ]);
    }
    t.render()
}

fn quoted(text: &str) -> String {
    format!("\"{}\"", text.replace('"', "\"\""))
}

fn failures_csv(study: &PortfolioStudy) -> String {
    let mut t = CsvTable::new(&["n", "rho", "instance", "seed", "error"]);
    for f in &study.failures {
        t.push(vec![
            f.n.to_string(),
            real(f.rho),
            f.instance.to_string(),
            f.seed.to_string(),
            quoted(&f.error),
        ]);
    }
    t.render()
}

fn timings_csv(study: &PortfolioStudy) -> String {
    let mut t = CsvTable::new(&["n", "rho", "instance", "prior_ms", "clair_ms", "rank_ms"])
        .comment("wall-clock timings; not reproducible");
    for r in &study.instances {
        t.push(vec![
            r.n.to_string(),
            real(r.rho),
            r.instance.to_string(),
            real(r.timings.prior_ms),
            real(r.timings.clair_ms),
            real(r.timings.rank_ms),
        ]);
    }
    t.render()
}

fn cmd_convergence(cli: &Cli, args: &StudyArgs, workers: usize, progress: Progress) -> Result<Outcome> {
    let started = unix_now();
    let cfg = study_config(args, "convergence")?;
    let c = resolve_convergence(&cfg, resolve_quadrature(&cfg, &cli.quadrature)?)?;
    let resolved = write_convergence(&c);
    if args.print_config {
        print!("{}", resolved.finish());
        return Ok(Outcome::Done);
    }
    prepare_out_dir(&args.out_dir)?;
    let rows = run_convergence(&c, progress)?;
    let path = args.out_dir.join("convergence.csv");
    write_file(&path, &convergence_csv(&rows))?;
    let manifest = Manifest {
        subcommand: "convergence",
        seed: None,
        workers,
        started,
        outputs: vec![path],
    };
    write_file(&args.out_dir.join(MANIFEST_NAME), &manifest.render(&resolved))?;
    Ok(Outcome::Done)
}

fn cmd_reinforce(cli: &Cli, args: &StudyArgs, workers: usize, progress: Progress) -> Result<Outcome> {
    let started = unix_now();
    let cfg = study_config(args, "reinforce")?;
    let c = resolve_reinforcement(&cfg, resolve_quadrature(&cfg, &cli.quadrature)?)?;
    let resolved = write_reinforcement(&c);
    if args.print_config {
        print!("{}", resolved.finish());
        return Ok(Outcome::Done);
    }
    prepare_out_dir(&args.out_dir)?;
    let rows = run_reinforcement(&c, progress)?;
    let path = args.out_dir.join("reinforce.csv");
    write_file(&path, &reinforcement_csv(&rows))?;
    let manifest = Manifest {
        subcommand: "reinforce",
        seed: None,
        workers,
        started,
        outputs: vec![path],
    };
    write_file(&args.out_dir.join(MANIFEST_NAME), &manifest.render(&resolved))?;
    Ok(Outcome::Done)
}

fn cmd_portfolio(cli: &Cli, args: &StudyArgs, workers: usize, progress: Progress) -> Result<Outcome> {
    let started = unix_now();
    let cfg = study_config(args, "portfolio")?;
    let c = resolve_simulation(&cfg, resolve_quadrature(&cfg, &cli.quadrature)?, cli.seed)?;
    let resolved = write_simulation(&c);
    if args.print_config {
        print!("{}", resolved.finish());
        return Ok(Outcome::Done);
    }
    prepare_out_dir(&args.out_dir)?;
    progress(&format!("portfolio study, master seed {}", c.master_seed));
    let study = run_portfolio_study(&c, progress)?;
    let mut outputs = Vec::new();
    for (name, text) in [
        ("portfolio_instances.csv", instances_csv(&study)),
        ("portfolio_aggregate.csv", aggregate_csv(&study, c.instances)),
        ("portfolio_timings.csv", timings_csv(&study)),
    ] {
        let path = args.out_dir.join(name);
        write_file(&path, &text)?;
        outputs.push(path);
    }
    let failures_path = args.out_dir.join("portfolio_failures.csv");
    if study.failures.is_empty() {
        if failures_path.exists() {
            fs::remove_file(&failures_path).map_err(|e| io_err(&failures_path, e))?;
        }
    } else {
        write_file(&failures_path, &failures_csv(&study))?;
        outputs.push(failures_path.clone());
    }
    let manifest = Manifest {
        subcommand: "portfolio",
        seed: Some(c.master_seed),
        workers,
        started,
        outputs,
    };
    write_file(&args.out_dir.join(MANIFEST_NAME), &manifest.render(&resolved))?;
    if study.failures.is_empty() {
        Ok(Outcome::Done)
    } else {
        Err(Error::NumericalFailure(format!(
            "{} instance(s) failed; see {}",
            study.failures.len(),
            failures_path.display()
        )))
    }
}

fn cmd_oracle(cli: &Cli, args: &OracleArgs) -> Result<Outcome> {
    if !CHECK_NAMES.contains(&args.check.as_str()) {
        return Err(Error::Domain(format!(
            "unknown check '{}'; available checks: {}",
            args.check,
            CHECK_NAMES.join(", ")
        )));
    }
    let spec = resolve_quadrature(&ConfigFile::default(), &cli.quadrature)?;
    let seed = cli.seed.unwrap_or(DEFAULT_ORACLE_SEED);
    let params = CheckParams {
        n: args.n,
        k: args.k,
        rho: args.rho,
        p: args.p,
        seed: Some(seed),
        samples: args.samples,
        problems: args.problems,
        target: args.target,
    };
    let report = run_check(&args.check, &params, &spec)?;
    println!("{report} seed={seed}");
    Ok(if report.pass { Outcome::Done } else { Outcome::CheckFailed })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> ConfigFile {
        ConfigFile::parse(text).unwrap()
    }

    #[test]
    fn quadrature_overrides_beat_config() {
        let cfg = parse("[quadrature]\nm_nodes = 51\nx_nodes = 401\n");
        let spec = resolve_quadrature(
            &cfg,
            &QuadratureArgs {
                x_nodes: Some(801),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!((spec.m_nodes, spec.x_nodes), (51, 801));
        let bad = parse("[quadrature]\nm_nodes = 50\n");
        assert!(resolve_quadrature(&bad, &QuadratureArgs::default()).is_err());
        let unknown = parse("[quadrature]\nnodes = 50\n");
        assert!(matches!(
            resolve_quadrature(&unknown, &QuadratureArgs::default()),
            Err(Error::Config { line: 2, .. })
        ));
    }

    #[test]
    fn model_forms() {
        let (m, r) = resolve_model(&parse("[model]\nn = 3\nrho = 0.5\n"), None).unwrap();
        assert!(m.is_standard() && r.is_identity());
        let (m, r) = resolve_model(&parse("[model]\nrho = 0\nmu = 1, 2\nranking = 2, 1\n"), None).unwrap();
        assert_eq!(m.mu(), &[1.0, 2.0]);
        assert_eq!(r.order(), &[1, 0]);
        let (_, r) = resolve_model(&parse("[model]\nn = 3\nrho = 0\n"), Some("3,1,2")).unwrap();
        assert_eq!(r.order(), &[2, 0, 1]);
        assert!(resolve_model(&parse("[model]\nn = 3\nrho = 0\nranking = 0, 1, 2\n"), None).is_err());
        assert!(resolve_model(&parse("[model]\nn = 3\nrho = 0\nranking = 1, 2\n"), None).is_err());
        assert!(resolve_model(&parse("[model]\nn = 3\nmu = 0, 0\nrho = 0\n"), None).is_err());
        assert!(resolve_model(&parse("[model]\nn = 3\n"), None).is_err());
    }

    #[test]
    fn resolved_configs_round_trip() {
        let c = resolve_simulation(&ConfigFile::default(), QuadratureSpec::default(), Some(7)).unwrap();
        assert_eq!(c.master_seed, 7);
        let text = write_simulation(&c).finish();
        let back = parse(&text);
        let spec = resolve_quadrature(&back, &QuadratureArgs::default()).unwrap();
        assert_eq!(resolve_simulation(&back, spec, None).unwrap(), c);

        let r = resolve_reinforcement(&ConfigFile::default(), QuadratureSpec::default()).unwrap();
        let back = parse(&write_reinforcement(&r).finish());
        assert_eq!(resolve_reinforcement(&back, QuadratureSpec::default()).unwrap(), r);

        let v = resolve_convergence(&ConfigFile::default(), QuadratureSpec::default()).unwrap();
        let back = parse(&write_convergence(&v).finish());
        assert_eq!(resolve_convergence(&back, QuadratureSpec::default()).unwrap(), v);
    }

    #[test]
    fn missing_seed_is_generated() {
        let c = resolve_simulation(&ConfigFile::default(), QuadratureSpec::default(), None).unwrap();
        let d = resolve_simulation(&parse("[portfolio]\nseed = 99\n"), QuadratureSpec::default(), None).unwrap();
        assert_eq!(d.master_seed, 99);
        let text = write_simulation(&c).finish();
        assert!(text.contains(&format!("seed = {}", c.master_seed)));
    }

    #[test]
    fn failure_messages_are_quoted() {
        assert_eq!(quoted("a, \"b\""), "\"a, \"\"b\"\"\"");
    }
}
