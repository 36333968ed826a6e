//! Table harness: declarative configs, per-cell estimation and CSV /
//! markdown writers. Output files carry a reproducibility header and never
//! include timing, so identical configs give identical bytes.

use crate::copula::{theta_from_tau, CopulaSpec, Family, DEFAULT_DOF};
use crate::crm::{
    aggregate_cdf, aggregate_mean, aggregate_quantile, aggregate_var, average_severity_params, check_pd,
    conditional_severity_law, ar_variance_alternative, simulate_crm, two_part_equivalence_check, CorrelationStructure,
    CrmSpec, EquivalenceReport, PdDiagnostic, StructureKind,
};
use crate::error::{Error, Result};
use crate::marginal::DiscreteMarginal;
use crate::metrics::{
    kl_copula_vs_transformed, kl_quadrature, spearman_rho_copula, spearman_rho_transformed, EstimateMethod,
};
use crate::streams::derive_seed;
use crate::transform::TransformedCopula;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

pub const MIN_SAMPLE_COUNT: usize = 10_000;
pub const DEFAULT_SAMPLE_COUNT: usize = 1_000_000;
pub const DEFAULT_SEED: u64 = 20_240_601;
pub const DEFAULT_ALPHAS: [f64; 4] = [0.25, 0.5, 0.75, 1.0];
pub const DEFAULT_POISSON_MEANS: [f64; 5] = [0.1, 0.5, 1.0, 5.0, 10.0];
pub const DEFAULT_TAUS: [f64; 7] = [-0.8, -0.3, -0.1, 0.0, 0.1, 0.3, 0.8];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    KlTable,
    RhoTable,
    Kl3dTable,
    CrmReport,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::KlTable => "kl",
            ExperimentKind::RhoTable => "rho",
            ExperimentKind::Kl3dTable => "kl3d",
            ExperimentKind::CrmReport => "crm",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Md,
}

/// Collective risk model block of a config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrmConfig {
    pub structure: StructureKind,
    pub rho1: f64,
    pub rho2: f64,
    pub xi: f64,
    pub sigma: f64,
    pub alpha: f64,
    /// Poisson claim counts with this mean, unless `pmf` is given.
    pub poisson_mean: f64,
    /// Explicit claim-count probabilities P[N = 0], P[N = 1], ...
    pub pmf: Option<Vec<f64>>,
    /// Largest n listed in the parameter table.
    pub max_n: usize,
    /// Probability levels at which the aggregate CDF is probed.
    pub probe_levels: Vec<f64>,
    /// Cross-validate against direct simulation.
    pub simulate: bool,
}

impl Default for CrmConfig {
    fn default() -> Self {
        CrmConfig {
            structure: StructureKind::Exchangeable,
            rho1: 0.3,
            rho2: 0.2,
            xi: 1.0,
            sigma: 0.5,
            alpha: 0.5,
            poisson_mean: 1.0,
            pmf: None,
            max_n: 10,
            probe_levels: vec![0.05, 0.1, 0.25, 0.4, 0.5, 0.6, 0.75, 0.9, 0.95, 0.99],
            simulate: true,
        }
    }
}

impl CrmConfig {
    pub fn to_spec(&self) -> Result<CrmSpec> {
        let marginal = match &self.pmf {
            Some(p) => DiscreteMarginal::explicit(p.clone())?,
            None => DiscreteMarginal::poisson(self.poisson_mean)?,
        };
        let structure = CorrelationStructure::new(self.structure, self.rho1, self.rho2)?;
        CrmSpec::new(marginal, self.xi, self.sigma, structure, self.alpha)
    }
}

/// Declarative experiment description, read from TOML. Every field has a
/// default; CLI flags override file values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub family: Family,
    pub alphas: Vec<f64>,
    pub poisson_means: Vec<f64>,
    /// Kendall's tau grid, converted to copula parameters. Ignored when
    /// `thetas` is given. Defaults to the family's admissible part of
    /// {-0.8, -0.3, -0.1, 0, 0.1, 0.3, 0.8}.
    pub taus: Option<Vec<f64>>,
    pub thetas: Option<Vec<f64>>,
    pub dof: Option<f64>,
    pub sample_count: usize,
    pub seed: u64,
    /// Bivariate KL by tensor quadrature instead of Monte Carlo.
    pub quadrature: bool,
    pub quadrature_nodes: usize,
    pub crm: Option<CrmConfig>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            experiment: ExperimentKind::KlTable,
            family: Family::Gaussian,
            alphas: DEFAULT_ALPHAS.to_vec(),
            poisson_means: DEFAULT_POISSON_MEANS.to_vec(),
            taus: None,
            thetas: None,
            dof: None,
            sample_count: DEFAULT_SAMPLE_COUNT,
            seed: DEFAULT_SEED,
            quadrature: false,
            quadrature_nodes: 256,
            crm: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    fn dim(&self) -> usize {
        if self.experiment == ExperimentKind::Kl3dTable {
            3
        } else {
            2
        }
    }

    /// Degrees of freedom passed to the copula (Student t only).
    pub fn effective_dof(&self) -> Option<f64> {
        (self.family == Family::StudentT).then(|| self.dof.unwrap_or(DEFAULT_DOF))
    }

    /// The theta grid: explicit thetas, else converted taus, else the
    /// family's default tau grid.
    pub fn theta_grid(&self) -> Result<Vec<f64>> {
        if let Some(t) = &self.thetas {
            return Ok(t.clone());
        }
        let taus: Vec<f64> = match &self.taus {
            Some(t) => t.clone(),
            None => {
                let nonneg = matches!(self.family, Family::Clayton | Family::Gumbel)
                    || self.experiment == ExperimentKind::Kl3dTable;
                DEFAULT_TAUS.iter().copied().filter(|&t| !nonneg || t >= 0.0).collect()
            }
        };
        taus.iter()
            .map(|&t| theta_from_tau(self.family, t).map_err(|e| Error::Config(e.to_string())))
            .collect()
    }

    /// Checks grids and builds every copula once so that bad parameters are
    /// reported before any sampling starts.
    pub fn validate(&self) -> Result<()> {
        if self.sample_count < MIN_SAMPLE_COUNT {
            return Err(Error::Config(format!(
                "sample_count must be >= {MIN_SAMPLE_COUNT}, got {}",
                self.sample_count
            )));
        }
        if self.experiment == ExperimentKind::CrmReport {
            return self.crm.clone().unwrap_or_default().to_spec().map(|_| ());
        }
        if self.alphas.is_empty() || self.poisson_means.is_empty() {
            return Err(Error::Config("alpha and lambda grids must be non-empty".into()));
        }
        if let Some(a) = self.alphas.iter().find(|a| !(**a > 0.0 && **a <= 1.0)) {
            return Err(Error::Config(format!("alpha = {a} outside (0, 1]")));
        }
        if let Some(l) = self.poisson_means.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
            return Err(Error::Config(format!("poisson mean {l} must be positive")));
        }
        if self.dof.is_some() && self.family != Family::StudentT {
            return Err(Error::Config("dof only applies to the student-t family".into()));
        }
        if self.quadrature && self.quadrature_nodes < 2 {
            return Err(Error::Config("quadrature_nodes must be >= 2".into()));
        }
        let thetas = self.theta_grid()?;
        if thetas.is_empty() {
            return Err(Error::Config("theta grid is empty".into()));
        }
        if self.experiment == ExperimentKind::Kl3dTable {
            if !matches!(self.family, Family::Gaussian | Family::Clayton) {
                return Err(Error::Config(format!(
                    "kl3d-table supports gaussian and clayton, not {}",
                    self.family
                )));
            }
            if let Some(t) = thetas.iter().find(|t| **t < 0.0) {
                return Err(Error::Config(format!("kl3d-table needs theta >= 0, got {t}")));
            }
        }
        if self.experiment == ExperimentKind::RhoTable && self.quadrature {
            return Err(Error::Config("quadrature mode applies to KL tables only".into()));
        }
        for &t in &thetas {
            let c = CopulaSpec::new(self.family, self.dim(), t, self.effective_dof())
                .map_err(|e| Error::Config(e.to_string()))?;
            if !c.supports_density() || !c.supports_sampling() {
                return Err(Error::Config(format!("{} does not support dimension {}", self.family, self.dim())));
            }
        }
        Ok(())
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))[..16].to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Cell {
    pub value: f64,
    pub std_error: f64,
    pub method: EstimateMethod,
}

/// One grid of cells for a fixed alpha: rows theta, columns lambda.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Panel {
    pub alpha: f64,
    /// "kl", "rho_p" or "rho_q".
    pub metric: &'static str,
    pub cells: Vec<Vec<Cell>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metadata {
    pub version: &'static str,
    pub config_hash: String,
    pub seed: u64,
    pub sample_count: usize,
    /// Not written to output files.
    pub wall_time_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableResult {
    pub kind: ExperimentKind,
    pub family: Family,
    pub dim: usize,
    pub thetas: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub panels: Vec<Panel>,
    pub metadata: Metadata,
}

impl TableResult {
    pub fn panel(&self, metric: &str, alpha: f64) -> Option<&Panel> {
        self.panels.iter().find(|p| p.metric == metric && p.alpha == alpha)
    }

    /// Cell at (theta index, lambda index) of the given panel.
    pub fn cell(&self, metric: &str, alpha: f64, ti: usize, li: usize) -> Option<Cell> {
        self.panel(metric, alpha).map(|p| p.cells[ti][li])
    }
}

fn cell_seed(cfg: &ExperimentConfig, tag: u64, alpha: f64, theta: f64, lambda: f64) -> u64 {
    derive_seed(
        cfg.seed,
        &[tag, cfg.family as u64, cfg.dim() as u64, alpha.to_bits(), theta.to_bits(), lambda.to_bits()],
    )
}

fn metadata(cfg: &ExperimentConfig, start: Instant) -> Metadata {
    Metadata {
        version: env!("CARGO_PKG_VERSION"),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        sample_count: cfg.sample_count,
        wall_time_secs: start.elapsed().as_secs_f64(),
    }
}

type CellJob = (usize, usize, usize);

fn grid_jobs(na: usize, nt: usize, nl: usize) -> Vec<CellJob> {
    let mut v = Vec::with_capacity(na * nt * nl);
    for a in 0..na {
        for t in 0..nt {
            for l in 0..nl {
                v.push((a, t, l));
            }
        }
    }
    v
}

fn transformed(cfg: &ExperimentConfig, alpha: f64, theta: f64, lambda: f64) -> Result<TransformedCopula> {
    let c = CopulaSpec::new(cfg.family, cfg.dim(), theta, cfg.effective_dof())?;
    TransformedCopula::new(c, DiscreteMarginal::poisson(lambda)?, alpha)
}

fn kl_cells(cfg: &ExperimentConfig, thetas: &[f64]) -> Result<Vec<Cell>> {
    let jobs = grid_jobs(cfg.alphas.len(), thetas.len(), cfg.poisson_means.len());
    jobs.par_iter()
        .map(|&(a, t, l)| {
            let (alpha, theta, lambda) = (cfg.alphas[a], thetas[t], cfg.poisson_means[l]);
            let tc = transformed(cfg, alpha, theta, lambda)?;
            let est = if cfg.quadrature && tc.dim() == 2 {
                kl_quadrature(&tc, cfg.quadrature_nodes)?
            } else {
                kl_copula_vs_transformed(&tc, cfg.sample_count, cell_seed(cfg, 1, alpha, theta, lambda))?
            };
            Ok(Cell { value: est.value, std_error: est.std_error, method: est.method })
        })
        .collect()
}

fn into_panels(cfg: &ExperimentConfig, metric: &'static str, nt: usize, cells: &[Cell]) -> Vec<Panel> {
    let nl = cfg.poisson_means.len();
    cfg.alphas
        .iter()
        .enumerate()
        .map(|(a, &alpha)| Panel {
            alpha,
            metric,
            cells: (0..nt).map(|t| cells[(a * nt + t) * nl..(a * nt + t + 1) * nl].to_vec()).collect(),
        })
        .collect()
}

fn table(cfg: &ExperimentConfig, thetas: Vec<f64>, panels: Vec<Panel>, start: Instant) -> TableResult {
    TableResult {
        kind: cfg.experiment,
        family: cfg.family,
        dim: cfg.dim(),
        thetas,
        lambdas: cfg.poisson_means.clone(),
        alphas: cfg.alphas.clone(),
        panels,
        metadata: metadata(cfg, start),
    }
}

fn expect_kind(cfg: &ExperimentConfig, kind: ExperimentKind) -> Result<ExperimentConfig> {
    let mut c = cfg.clone();
    c.experiment = kind;
    c.validate()?;
    Ok(c)
}

/// KL divergence D(C, transformed C) over the (alpha, theta, lambda) grid.
pub fn run_kl_table(cfg: &ExperimentConfig) -> Result<TableResult> {
    let cfg = expect_kind(cfg, ExperimentKind::KlTable)?;
    let start = Instant::now();
    let thetas = cfg.theta_grid()?;
    let cells = kl_cells(&cfg, &thetas)?;
    let panels = into_panels(&cfg, "kl", thetas.len(), &cells);
    Ok(table(&cfg, thetas, panels, start))
}

/// As `run_kl_table` with three-dimensional exchangeable copulas.
pub fn run_kl3d_table(cfg: &ExperimentConfig) -> Result<TableResult> {
    let cfg = expect_kind(cfg, ExperimentKind::Kl3dTable)?;
    let start = Instant::now();
    let thetas = cfg.theta_grid()?;
    let cells = kl_cells(&cfg, &thetas)?;
    let panels = into_panels(&cfg, "kl", thetas.len(), &cells);
    Ok(table(&cfg, thetas, panels, start))
}

/// Spearman's rho of the copula and of the transformed distribution; two
/// panels ("rho_p", "rho_q") per alpha.
pub fn run_rho_table(cfg: &ExperimentConfig) -> Result<TableResult> {
    let cfg = expect_kind(cfg, ExperimentKind::RhoTable)?;
    let start = Instant::now();
    let thetas = cfg.theta_grid()?;
    let jobs = grid_jobs(cfg.alphas.len(), thetas.len(), cfg.poisson_means.len());
    let pairs: Vec<(Cell, Cell)> = jobs
        .par_iter()
        .map(|&(a, t, l)| {
            let (alpha, theta, lambda) = (cfg.alphas[a], thetas[t], cfg.poisson_means[l]);
            let tc = transformed(&cfg, alpha, theta, lambda)?;
            let p = spearman_rho_copula(tc.base(), cfg.sample_count, cell_seed(&cfg, 2, alpha, theta, lambda))?;
            let q = spearman_rho_transformed(&tc, cfg.sample_count, cell_seed(&cfg, 3, alpha, theta, lambda))?;
            Ok((
                Cell { value: p.value, std_error: p.std_error, method: p.method },
                Cell { value: q.value, std_error: q.std_error, method: q.method },
            ))
        })
        .collect::<Result<_>>()?;
    let (p, q): (Vec<Cell>, Vec<Cell>) = pairs.into_iter().unzip();
    let mut panels = into_panels(&cfg, "rho_p", thetas.len(), &p);
    panels.extend(into_panels(&cfg, "rho_q", thetas.len(), &q));
    Ok(table(&cfg, thetas, panels, start))
}

/// Formats with 6 significant digits, trailing zeros trimmed.
pub fn fmt_sig(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let e = x.abs().log10().floor() as i32;
    if (-4..15).contains(&e) {
        let s = format!("{:.*}", (5 - e).max(0) as usize, x);
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        format!("{x:.5e}")
    }
}

fn header(meta: &Metadata) -> String {
    format!(
        "# mixcop {} config_hash={} seed={} samples={}\n",
        meta.version, meta.config_hash, meta.seed, meta.sample_count
    )
}

fn se_text(c: &Cell) -> String {
    match c.method {
        EstimateMethod::Exact => "exact".into(),
        EstimateMethod::Quadrature => "quadrature".into(),
        EstimateMethod::MonteCarlo => fmt_sig(c.std_error),
    }
}

fn panel_csv(t: &TableResult, p: &Panel, se: bool) -> String {
    let mut s = header(&t.metadata);
    s.push_str("theta");
    for &l in &t.lambdas {
        let _ = write!(s, ",{}", fmt_sig(l));
    }
    s.push('\n');
    for (theta, row) in t.thetas.iter().zip(&p.cells) {
        s.push_str(&fmt_sig(*theta));
        for c in row {
            s.push(',');
            s.push_str(&if se { se_text(c) } else { fmt_sig(c.value) });
        }
        s.push('\n');
    }
    s
}

fn stem(t: &TableResult, p: &Panel) -> String {
    let name = if t.kind == ExperimentKind::RhoTable { p.metric } else { t.kind.name() };
    format!("{name}_{}_alpha{}", t.family.name(), fmt_sig(p.alpha))
}

fn md_cell(c: &Cell) -> String {
    match c.method {
        EstimateMethod::MonteCarlo => format!("{} ± {}", fmt_sig(c.value), fmt_sig(c.std_error)),
        EstimateMethod::Exact => format!("{} (exact)", fmt_sig(c.value)),
        EstimateMethod::Quadrature => format!("{} (quad)", fmt_sig(c.value)),
    }
}

/// Markdown rendering: one section per alpha; rho tables show
/// "rho(P) / rho(Q)" in each cell.
pub fn render_markdown(t: &TableResult) -> String {
    let mut s = String::new();
    let m = &t.metadata;
    let _ = writeln!(s, "# {} table, {} copula, dimension {}\n", t.kind.name(), t.family, t.dim);
    let _ = writeln!(
        s,
        "mixcop {}, config hash `{}`, seed {}, {} samples per cell.\n",
        m.version, m.config_hash, m.seed, m.sample_count
    );
    for &alpha in &t.alphas {
        let _ = writeln!(s, "## alpha = {}\n", fmt_sig(alpha));
        s.push_str("| theta |");
        for &l in &t.lambdas {
            let _ = write!(s, " lambda = {} |", fmt_sig(l));
        }
        s.push_str("\n|---|");
        s.push_str(&"---|".repeat(t.lambdas.len()));
        s.push('\n');
        for (ti, theta) in t.thetas.iter().enumerate() {
            let _ = write!(s, "| {} |", fmt_sig(*theta));
            for li in 0..t.lambdas.len() {
                let text = match t.kind {
                    ExperimentKind::RhoTable => {
                        let p = t.cell("rho_p", alpha, ti, li).expect("rho_p panel");
                        let q = t.cell("rho_q", alpha, ti, li).expect("rho_q panel");
                        format!("{} / {}", md_cell(&p), md_cell(&q))
                    }
                    _ => md_cell(&t.cell("kl", alpha, ti, li).expect("kl panel")),
                };
                let _ = write!(s, " {text} |");
            }
            s.push('\n');
        }
        s.push('\n');
    }
    s
}

/// Writes the table to `out`: per-panel value and `_se` CSV files, or one
/// markdown file. Returns the written paths.
pub fn write_table(t: &TableResult, out: &Path, format: OutputFormat) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out)?;
    let mut written = Vec::new();
    match format {
        OutputFormat::Csv => {
            for p in &t.panels {
                let base = stem(t, p);
                for (suffix, se) in [("", false), ("_se", true)] {
                    let path = out.join(format!("{base}{suffix}.csv"));
                    std::fs::write(&path, panel_csv(t, p, se))?;
                    written.push(path);
                }
            }
        }
        OutputFormat::Md => {
            let path = out.join(format!("{}_{}.md", t.kind.name(), t.family.name()));
            std::fs::write(&path, render_markdown(t))?;
            written.push(path);
        }
    }
    Ok(written)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrmParamRow {
    pub n: usize,
    pub pmf: f64,
    pub f_alpha: f64,
    pub mu: f64,
    pub sigma_sq: f64,
    /// 1' Cov 1 / n^2 from the conditional covariance matrix.
    pub sigma_sq_matrix: f64,
    /// Alternative autoregressive closed form, for comparison only.
    pub sigma_sq_alternative: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrmProbe {
    pub level: f64,
    pub s: f64,
    pub cdf: f64,
    pub mc_cdf: Option<f64>,
    pub mc_std_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrmMonteCarlo {
    pub paths: usize,
    pub mean: f64,
    pub mean_std_error: f64,
    pub var: f64,
    pub var_std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrmReport {
    pub config: CrmConfig,
    pub params: Vec<CrmParamRow>,
    pub mean: f64,
    pub var: f64,
    /// rho1 = 0 makes E[S] = xi E[N] an identity.
    pub mean_is_identity: bool,
    pub pd: Vec<(usize, PdDiagnostic)>,
    pub equivalence: EquivalenceReport,
    pub probes: Vec<CrmProbe>,
    pub monte_carlo: Option<CrmMonteCarlo>,
    pub metadata: Metadata,
}

/// Sample mean and variance with standard errors (the variance one from
/// the fourth central moment).
pub fn mean_var_with_se(x: &[f64]) -> (f64, f64, f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let (mut m2, mut m4) = (0.0, 0.0);
    for &v in x {
        let d = (v - mean) * (v - mean);
        m2 += d;
        m4 += d * d;
    }
    let var = m2 / (n - 1.0);
    let m4 = m4 / n;
    let pop = m2 / n;
    (mean, (var / n).sqrt(), var, ((m4 - pop * pop).max(0.0) / n).sqrt())
}

pub fn run_crm_report(cfg: &ExperimentConfig) -> Result<CrmReport> {
    let cfg = expect_kind(cfg, ExperimentKind::CrmReport)?;
    let start = Instant::now();
    let crm = cfg.crm.clone().unwrap_or_default();
    let spec = crm.to_spec()?;
    let f = spec.marginal();
    let kmax = spec.max_count();
    let mut params = Vec::new();
    for n in 1..=crm.max_n.min(kmax) {
        let p = f.masses()[n];
        if p <= 0.0 {
            continue;
        }
        let (mu, s2) = average_severity_params(&spec, n)?;
        let law = conditional_severity_law(&spec, n)?;
        params.push(CrmParamRow {
            n,
            pmf: p,
            f_alpha: f.f_alpha(spec.alpha(), n as u64)?,
            mu,
            sigma_sq: s2,
            sigma_sq_matrix: law.covariance.sum() / (n * n) as f64,
            sigma_sq_alternative: (crm.structure == StructureKind::Autoregressive)
                .then(|| ar_variance_alternative(crm.rho1, crm.rho2, n)),
        });
    }
    let pd = (0..=kmax.min(crm.max_n)).map(|k| (k, check_pd(crm.structure, crm.rho1, crm.rho2, k))).collect();
    let sims = if crm.simulate { Some(simulate_crm(&spec, derive_seed(cfg.seed, &[0xc0]), cfg.sample_count)?) } else { None };
    let mut probes = Vec::new();
    for &level in &crm.probe_levels {
        let s = aggregate_quantile(&spec, level)?;
        let cdf = aggregate_cdf(&spec, s)?;
        let (mc_cdf, mc_std_error) = match &sims {
            Some(x) => {
                let p = x.iter().filter(|&&v| v <= s).count() as f64 / x.len() as f64;
                (Some(p), Some((p * (1.0 - p) / x.len() as f64).sqrt()))
            }
            None => (None, None),
        };
        probes.push(CrmProbe { level, s, cdf, mc_cdf, mc_std_error });
    }
    let monte_carlo = sims.map(|x| {
        let (mean, mean_std_error, var, var_std_error) = mean_var_with_se(&x);
        CrmMonteCarlo { paths: x.len(), mean, mean_std_error, var, var_std_error }
    });
    Ok(CrmReport {
        params,
        mean: aggregate_mean(&spec)?,
        var: aggregate_var(&spec)?,
        mean_is_identity: crm.rho1 == 0.0,
        pd,
        equivalence: two_part_equivalence_check(&spec)?,
        probes,
        monte_carlo,
        metadata: metadata(&cfg, start),
        config: crm,
    })
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt_sig).unwrap_or_default()
}

/// Writes `crm_params.csv`, `crm_summary.csv` and `crm_cdf.csv`, or
/// `crm_report.md`.
pub fn write_crm_report(r: &CrmReport, out: &Path, format: OutputFormat) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out)?;
    let h = header(&r.metadata);
    let mut files: Vec<(String, String)> = Vec::new();
    match format {
        OutputFormat::Csv => {
            let mut s = h.clone();
            s.push_str("n,pmf,f_alpha,mu_n,sigma_n_sq,sigma_n_sq_matrix,sigma_n_sq_alternative\n");
            for p in &r.params {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{},{}",
                    p.n,
                    fmt_sig(p.pmf),
                    fmt_sig(p.f_alpha),
                    fmt_sig(p.mu),
                    fmt_sig(p.sigma_sq),
                    fmt_sig(p.sigma_sq_matrix),
                    opt(p.sigma_sq_alternative)
                );
            }
            files.push(("crm_params.csv".into(), s));

            let mut s = h.clone();
            s.push_str("quantity,value,std_error,mc_value,mc_std_error,delta\n");
            let mc = r.monte_carlo.as_ref();
            let row = |name: &str, v: f64, mcv: Option<f64>, mcse: Option<f64>| {
                format!(
                    "{name},{},exact,{},{},{}\n",
                    fmt_sig(v),
                    opt(mcv),
                    opt(mcse),
                    opt(mcv.map(|m| m - v))
                )
            };
            s.push_str(&row("mean", r.mean, mc.map(|m| m.mean), mc.map(|m| m.mean_std_error)));
            s.push_str(&row("var", r.var, mc.map(|m| m.var), mc.map(|m| m.var_std_error)));
            let e = &r.equivalence;
            let _ = writeln!(s, "two_part_equivalent,{},exact,,,", e.is_equivalent);
            let _ = writeln!(s, "offdiag_max,{},exact,,,", fmt_sig(e.offdiag_max));
            if let Some(s0) = e.sigma0_sq {
                let _ = writeln!(s, "sigma0_sq,{},exact,,,", fmt_sig(s0));
            }
            let _ = writeln!(s, "mean_is_identity,{},exact,,,", r.mean_is_identity);
            for (k, d) in &r.pd {
                let _ = writeln!(s, "pd_k{k},{},exact,,,", d.holds && d.cholesky_ok);
            }
            files.push(("crm_summary.csv".into(), s));

            let mut s = h;
            s.push_str("level,s,cdf,mc_cdf,mc_std_error,delta\n");
            for p in &r.probes {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{}",
                    fmt_sig(p.level),
                    fmt_sig(p.s),
                    fmt_sig(p.cdf),
                    opt(p.mc_cdf),
                    opt(p.mc_std_error),
                    opt(p.mc_cdf.map(|m| m - p.cdf))
                );
            }
            files.push(("crm_cdf.csv".into(), s));
        }
        OutputFormat::Md => files.push(("crm_report.md".into(), render_crm_markdown(r))),
    }
    let mut written = Vec::new();
    for (name, text) in files {
        let path = out.join(name);
        std::fs::write(&path, text)?;
        written.push(path);
    }
    Ok(written)
}

pub fn render_crm_markdown(r: &CrmReport) -> String {
    let c = &r.config;
    let m = &r.metadata;
    let mut s = String::new();
    let _ = writeln!(s, "# Collective risk model report\n");
    let _ = writeln!(
        s,
        "mixcop {}, config hash `{}`, seed {}, {} paths.\n",
        m.version, m.config_hash, m.seed, m.sample_count
    );
    let law = match &c.pmf {
        Some(p) => format!("explicit pmf {p:?}"),
        None => format!("Poisson({})", fmt_sig(c.poisson_mean)),
    };
    let _ = writeln!(
        s,
        "Structure {:?}, rho1 = {}, rho2 = {}, xi = {}, sigma = {}, alpha = {}, N ~ {law}.\n",
        c.structure,
        fmt_sig(c.rho1),
        fmt_sig(c.rho2),
        fmt_sig(c.xi),
        fmt_sig(c.sigma),
        fmt_sig(c.alpha)
    );
    s.push_str("## Average severity given N = n\n\n| n | P[N=n] | F_alpha(n) | mu_n | sigma_n^2 | matrix sum |");
    let ar = c.structure == StructureKind::Autoregressive;
    if ar {
        s.push_str(" alternative formula |");
    }
    s.push_str(if ar { "\n|---|---|---|---|---|---|---|\n" } else { "\n|---|---|---|---|---|---|\n" });
    for p in &r.params {
        let _ = write!(
            s,
            "| {} | {} | {} | {} | {} | {} |",
            p.n,
            fmt_sig(p.pmf),
            fmt_sig(p.f_alpha),
            fmt_sig(p.mu),
            fmt_sig(p.sigma_sq),
            fmt_sig(p.sigma_sq_matrix)
        );
        if ar {
            let _ = write!(s, " {} |", opt(p.sigma_sq_alternative));
        }
        s.push('\n');
    }
    s.push_str("\n## Aggregate loss\n\n| quantity | closed form | Monte Carlo | delta / s.e. |\n|---|---|---|---|\n");
    let mc = r.monte_carlo.as_ref();
    for (name, v, mv, se) in [
        ("E[S]", r.mean, mc.map(|m| m.mean), mc.map(|m| m.mean_std_error)),
        ("Var[S]", r.var, mc.map(|m| m.var), mc.map(|m| m.var_std_error)),
    ] {
        let z = match (mv, se) {
            (Some(a), Some(b)) if b > 0.0 => fmt_sig((a - v) / b),
            _ => String::new(),
        };
        let mvs = match (mv, se) {
            (Some(a), Some(b)) => format!("{} ± {}", fmt_sig(a), fmt_sig(b)),
            _ => String::new(),
        };
        let _ = writeln!(s, "| {name} | {} | {mvs} | {z} |", fmt_sig(v));
    }
    if r.mean_is_identity {
        s.push_str("\nrho1 = 0, so E[S] = xi E[N] holds identically.\n");
    }
    s.push_str("\n## Aggregate CDF\n\n| level | s | P[S <= s] | empirical | delta / s.e. |\n|---|---|---|---|---|\n");
    for p in &r.probes {
        let z = match (p.mc_cdf, p.mc_std_error) {
            (Some(a), Some(b)) if b > 0.0 => fmt_sig((a - p.cdf) / b),
            _ => String::new(),
        };
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {z} |",
            fmt_sig(p.level),
            fmt_sig(p.s),
            fmt_sig(p.cdf),
            opt(p.mc_cdf)
        );
    }
    s.push_str("\n## Positive definiteness\n\n| k | analytic | Cholesky | simple condition |\n|---|---|---|---|\n");
    for (k, d) in &r.pd {
        let _ = writeln!(s, "| {k} | {} | {} | {} |", d.holds, d.cholesky_ok, d.simple_condition);
    }
    let e = &r.equivalence;
    s.push_str("\n## Two-part equivalence\n\n");
    if e.is_equivalent {
        let _ = writeln!(
            s,
            "Equivalent to a two-part model: severities are conditionally i.i.d. Normal(mu_n, sigma0^2) with sigma0^2 = {}.",
            opt(e.sigma0_sq)
        );
    } else {
        let _ = writeln!(
            s,
            "Not equivalent: largest off-diagonal conditional covariance is {}.",
            fmt_sig(e.offdiag_max)
        );
    }
    s
}

/// One line of the selfcheck suite.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, f: impl FnOnce() -> Result<(bool, String)>) -> CheckResult {
    match f() {
        Ok((passed, detail)) => CheckResult { name, passed, detail },
        Err(e) => CheckResult { name, passed: false, detail: e.to_string() },
    }
}

/// Fast invariant suite behind `mixcop selfcheck`.
pub fn run_selfcheck(seed: u64) -> Vec<CheckResult> {
    let mut out = Vec::new();
    out.push(check("first margin of the transformed distribution is uniform", || {
        let mut worst: f64 = 0.0;
        for (fam, theta) in [
            (Family::Gaussian, -0.951),
            (Family::StudentT, 0.454),
            (Family::Clayton, 8.0),
            (Family::Gumbel, 1.429),
        ] {
            let dof = (fam == Family::StudentT).then_some(DEFAULT_DOF);
            let c = CopulaSpec::new(fam, 2, theta, dof)?;
            let t = TransformedCopula::new(c, DiscreteMarginal::poisson(1.0)?, 0.25)?;
            for i in 1..100 {
                let u = i as f64 / 100.0;
                worst = worst.max((t.cdf(u, &[1.0])? - u).abs());
            }
        }
        Ok((worst < 1e-10, format!("max |E(u,1) - u| = {worst:.2e}")))
    }));
    out.push(check("KL of a law against itself is zero", || {
        let t = TransformedCopula::new(CopulaSpec::clayton(2, 0.0)?, DiscreteMarginal::poisson(1.0)?, 0.5)?;
        let k = kl_copula_vs_transformed(&t, 1000, seed)?;
        Ok((k.value == 0.0, format!("D = {}", k.value)))
    }));
    out.push(check("KL quadrature agrees with Monte Carlo", || {
        let c = CopulaSpec::gaussian(2, 0.454)?;
        let t = TransformedCopula::new(c, DiscreteMarginal::poisson(0.5)?, 0.25)?;
        let q = kl_quadrature(&t, 64)?;
        let m = kl_copula_vs_transformed(&t, 200_000, seed)?;
        let ok = (q.value - m.value).abs() < 4.0 * m.std_error + 1e-3;
        Ok((ok, format!("quadrature {:.5}, MC {:.5} ± {:.5}", q.value, m.value, m.std_error)))
    }));
    out.push(check("Gaussian Spearman rho matches the arcsine law", || {
        let c = CopulaSpec::gaussian(2, 0.454)?;
        let r = spearman_rho_copula(&c, 200_000, seed)?;
        let want = 6.0 / std::f64::consts::PI * (0.227f64).asin();
        Ok(((r.value - want).abs() < 4.0 * r.std_error, format!("{:.5} vs {want:.5}", r.value)))
    }));
    out.push(check("PD gates agree with Cholesky", || {
        let mut bad = 0;
        for kind in [StructureKind::Exchangeable, StructureKind::Autoregressive] {
            for k in [1, 2, 5, 10] {
                for i in 0..20 {
                    for j in 0..20 {
                        let r1 = -0.95 + 0.1 * i as f64;
                        let r2 = -0.95 + 0.1 * j as f64;
                        let d = check_pd(kind, r1, r2, k);
                        bad += usize::from(d.holds != d.cholesky_ok);
                    }
                }
            }
        }
        Ok((bad == 0, format!("{bad} disagreements")))
    }));
    out.push(check("average severity variance equals the covariance sum", || {
        let mut worst: f64 = 0.0;
        for kind in [StructureKind::Exchangeable, StructureKind::Autoregressive] {
            let spec = CrmSpec::new(
                DiscreteMarginal::explicit(vec![0.2; 5])?,
                1.0,
                2.0,
                CorrelationStructure::new(kind, 0.4, 0.5)?,
                0.5,
            )?;
            for n in 1..=4 {
                let law = conditional_severity_law(&spec, n)?;
                let (_, s2) = average_severity_params(&spec, n)?;
                worst = worst.max((s2 - law.covariance.sum() / (n * n) as f64).abs());
            }
        }
        Ok((worst < 1e-12, format!("max deviation {worst:.2e}")))
    }));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn significant_digit_formatting() {
        assert_eq!(fmt_sig(0.0), "0");
        assert_eq!(fmt_sig(4.532123456), "4.53212");
        assert_eq!(fmt_sig(0.009), "0.009");
        assert_eq!(fmt_sig(-0.951057), "-0.951057");
        assert_eq!(fmt_sig(13.0684), "13.0684");
        assert_eq!(fmt_sig(123456789.0), "123456789");
        assert_eq!(fmt_sig(1.5e-7), "1.50000e-7");
        assert_eq!(fmt_sig(10.0), "10");
    }

    #[test]
    fn default_grids() {
        let mut c = ExperimentConfig::default();
        assert_eq!(c.theta_grid().unwrap().len(), 7);
        c.family = Family::Clayton;
        let t = c.theta_grid().unwrap();
        assert_eq!(t.len(), 4);
        assert_eq!(t[0], 0.0);
        assert!((t[3] - 8.0).abs() < 1e-12);
        c.family = Family::Gumbel;
        assert_eq!(c.theta_grid().unwrap()[0], 1.0);
    }

    #[test]
    fn toml_round_trip_and_validation() {
        let c = ExperimentConfig::from_toml_str(
            "experiment = \"rho-table\"\nfamily = \"clayton\"\nalphas = [0.5]\npoisson_means = [1.0]\n\
             taus = [0.3]\nsample_count = 20000\nseed = 7\n",
        )
        .unwrap();
        assert_eq!(c.experiment, ExperimentKind::RhoTable);
        assert!(c.validate().is_ok());
        assert!(ExperimentConfig::from_toml_str("bogus = 1").unwrap_err().is_config());
        let small = ExperimentConfig { sample_count: 10, ..c.clone() };
        assert!(small.validate().is_err());
        let neg = ExperimentConfig { taus: Some(vec![-0.3]), ..c.clone() };
        assert!(neg.validate().is_err());
        let t3 = ExperimentConfig { experiment: ExperimentKind::Kl3dTable, family: Family::Gumbel, ..c };
        assert!(t3.validate().is_err());
    }

    #[test]
    fn independence_cells_are_exact_zero() {
        let cfg = ExperimentConfig {
            family: Family::Gumbel,
            alphas: vec![0.5],
            poisson_means: vec![1.0],
            taus: Some(vec![0.0, 0.3]),
            sample_count: 10_000,
            ..Default::default()
        };
        let t = run_kl_table(&cfg).unwrap();
        let c = t.cell("kl", 0.5, 0, 0).unwrap();
        assert_eq!((c.value, c.method), (0.0, EstimateMethod::Exact));
        assert!(t.cell("kl", 0.5, 1, 0).unwrap().value > 0.0);
        let csv = panel_csv(&t, t.panel("kl", 0.5).unwrap(), true);
        assert!(csv.lines().nth(2).unwrap().ends_with(",exact"));
    }

    #[test]
    fn cells_do_not_depend_on_grid_shape() {
        let base = ExperimentConfig {
            alphas: vec![0.5],
            poisson_means: vec![1.0],
            thetas: Some(vec![0.454]),
            sample_count: 10_000,
            ..Default::default()
        };
        let wide = ExperimentConfig { alphas: vec![0.25, 0.5], poisson_means: vec![0.1, 1.0], ..base.clone() };
        let a = run_kl_table(&base).unwrap().cell("kl", 0.5, 0, 0).unwrap();
        let b = run_kl_table(&wide).unwrap().cell("kl", 0.5, 0, 1).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn selfcheck_passes() {
        for r in run_selfcheck(1) {
            assert!(r.passed, "{}: {}", r.name, r.detail);
        }
    }
}
