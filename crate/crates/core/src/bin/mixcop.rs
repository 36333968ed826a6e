use clap::{Args, Parser, Subcommand, ValueEnum};
use mixcop::copula::Family;
use mixcop::crm::StructureKind;
use mixcop::error::Result;
use mixcop::experiments::{
    run_crm_report, run_kl3d_table, run_kl_table, run_rho_table, run_selfcheck, write_crm_report, write_table,
    ExperimentConfig, ExperimentKind, OutputFormat,
};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "mixcop", version, about = "Transformed copula experiments and collective risk reports")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// KL divergence between a copula and its transformed distribution.
    KlTable(TableArgs),
    /// Spearman's rho of the copula and of the transformed distribution.
    RhoTable(TableArgs),
    /// KL divergence table for three-dimensional copulas.
    Kl3dTable(TableArgs),
    /// Closed-form statistics of the transformed collective risk model.
    CrmReport(CrmArgs),
    /// Runs a fast invariant suite.
    Selfcheck {
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Md,
}

impl From<FormatArg> for OutputFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => OutputFormat::Csv,
            FormatArg::Md => OutputFormat::Md,
        }
    }
}

#[derive(Args)]
struct Common {
    /// TOML experiment file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Monte Carlo sample (or path) count.
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    format: FormatArg,
}

#[derive(Args)]
struct TableArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    family: Option<Family>,
    #[arg(long)]
    alpha: Vec<f64>,
    /// Poisson mean of the discrete margin; repeatable.
    #[arg(long)]
    lambda: Vec<f64>,
    /// Kendall's tau, converted to the family parameter; repeatable.
    #[arg(long, allow_negative_numbers = true)]
    tau: Vec<f64>,
    /// Copula parameter; repeatable, takes precedence over --tau.
    #[arg(long, allow_negative_numbers = true)]
    theta: Vec<f64>,
    /// Student t degrees of freedom.
    #[arg(long)]
    dof: Option<f64>,
    /// Bivariate KL by tensor Gauss-Legendre quadrature.
    #[arg(long)]
    quadrature: bool,
}

#[derive(Args)]
struct CrmArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_parser = parse_structure)]
    structure: Option<StructureKind>,
    #[arg(long, allow_negative_numbers = true)]
    rho1: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    rho2: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    xi: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Poisson mean of the claim count.
    #[arg(long)]
    lambda: Option<f64>,
    /// Skip the Monte Carlo cross-validation.
    #[arg(long)]
    no_simulate: bool,
}

fn parse_structure(s: &str) -> std::result::Result<StructureKind, String> {
    match s.to_ascii_lowercase().as_str() {
        "exchangeable" | "exch" => Ok(StructureKind::Exchangeable),
        "autoregressive" | "ar" => Ok(StructureKind::Autoregressive),
        other => Err(format!("unknown structure '{other}'")),
    }
}

fn load(common: &Common, kind: ExperimentKind) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::from_file(p)?,
        None => ExperimentConfig::default(),
    };
    cfg.experiment = kind;
    if let Some(n) = common.samples {
        cfg.sample_count = n;
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn table_config(a: &TableArgs, kind: ExperimentKind) -> Result<ExperimentConfig> {
    let mut cfg = load(&a.common, kind)?;
    if let Some(f) = a.family {
        cfg.family = f;
    }
    if !a.alpha.is_empty() {
        cfg.alphas = a.alpha.clone();
    }
    if !a.lambda.is_empty() {
        cfg.poisson_means = a.lambda.clone();
    }
    if !a.theta.is_empty() {
        cfg.thetas = Some(a.theta.clone());
        cfg.taus = None;
    } else if !a.tau.is_empty() {
        cfg.taus = Some(a.tau.clone());
        cfg.thetas = None;
    }
    if a.dof.is_some() {
        cfg.dof = a.dof;
    }
    if a.quadrature {
        cfg.quadrature = true;
    }
    Ok(cfg)
}

fn crm_config(a: &CrmArgs) -> Result<ExperimentConfig> {
    let mut cfg = load(&a.common, ExperimentKind::CrmReport)?;
    let mut crm = cfg.crm.take().unwrap_or_default();
    if let Some(v) = a.structure {
        crm.structure = v;
    }
    if let Some(v) = a.rho1 {
        crm.rho1 = v;
    }
    if let Some(v) = a.rho2 {
        crm.rho2 = v;
    }
    if let Some(v) = a.xi {
        crm.xi = v;
    }
    if let Some(v) = a.sigma {
        crm.sigma = v;
    }
    if let Some(v) = a.alpha {
        crm.alpha = v;
    }
    if let Some(v) = a.lambda {
        crm.poisson_mean = v;
        crm.pmf = None;
    }
    if a.no_simulate {
        crm.simulate = false;
    }
    cfg.crm = Some(crm);
    Ok(cfg)
}

fn report(paths: &[PathBuf]) {
    for p in paths {
        println!("{}", p.display());
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::KlTable(a) => {
            let t = run_kl_table(&table_config(&a, ExperimentKind::KlTable)?)?;
            eprintln!("kl-table: {:.1} s", t.metadata.wall_time_secs);
            report(&write_table(&t, &a.common.out, a.common.format.into())?);
        }
        Command::RhoTable(a) => {
            let t = run_rho_table(&table_config(&a, ExperimentKind::RhoTable)?)?;
            eprintln!("rho-table: {:.1} s", t.metadata.wall_time_secs);
            report(&write_table(&t, &a.common.out, a.common.format.into())?);
        }
        Command::Kl3dTable(a) => {
            let t = run_kl3d_table(&table_config(&a, ExperimentKind::Kl3dTable)?)?;
            eprintln!("kl3d-table: {:.1} s", t.metadata.wall_time_secs);
            report(&write_table(&t, &a.common.out, a.common.format.into())?);
        }
        Command::CrmReport(a) => {
            let r = run_crm_report(&crm_config(&a)?)?;
            eprintln!("crm-report: {:.1} s", r.metadata.wall_time_secs);
            report(&write_crm_report(&r, &a.common.out, a.common.format.into())?);
        }
        Command::Selfcheck { seed } => {
            let mut ok = true;
            for r in run_selfcheck(seed) {
                println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
                ok &= r.passed;
            }
            return Ok(ok);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 1 } else { 2 })
        }
    }
}
