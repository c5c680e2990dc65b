//! Simulation benchmark: replicate datasets per scenario cell, fit both estimators and summarize
//! MSE, bias, empirical and average standard errors, coverage and relative efficiency.

use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::config::Config;
use crate::error::{Error, Result};
use crate::estimator::{
    default_init, fit_pairwise_onestep, fit_two_step, parameter_layout, FitResult, InitialValues,
    Method,
};
use crate::gev::{MarginalDesign, SiteCatalog};
use crate::godambe::{godambe_for_fit, AVariant};
use crate::likelihood::{PairwiseProblem, Step1Problem, ThresholdSpec};
use crate::optim::NelderMeadOptions;
use crate::rng::StreamFactory;
use crate::simulate::{simulate_daily_panel, Scenario};
use crate::smith::SmithDispersion;

/// Failure share above which a cell is flagged.
pub const FLAG_FAILURE_RATE: f64 = 0.05;
const Z_95: f64 = 1.959_963_984_540_054;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum DependenceLevel {
    /// `4Q`
    Sigma1,
    /// `16Q`
    Sigma2,
}

impl DependenceLevel {
    pub fn dispersion(self) -> SmithDispersion {
        let c = match self {
            DependenceLevel::Sigma1 => 4.0,
            DependenceLevel::Sigma2 => 16.0,
        };
        SmithDispersion::scaled_correlation(c, 0.5).expect("constant dispersion is SPD")
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DependenceLevel::Sigma1 => "sigma1",
            DependenceLevel::Sigma2 => "sigma2",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sigma1" | "1" => Ok(DependenceLevel::Sigma1),
            "sigma2" | "2" => Ok(DependenceLevel::Sigma2),
            other => Err(Error::InvalidArgument(format!(
                "unknown dependence level '{other}'"
            ))),
        }
    }
}

/// Marginal design and true coefficients for the two benchmark models.
pub fn marginal_model(id: u8) -> Result<(MarginalDesign, Vec<f64>)> {
    match id {
        1 => Ok((MarginalDesign::model1(), vec![5.0, -0.5, 1.0, 2.5, 0.2])),
        2 => Ok((
            MarginalDesign::model2(),
            vec![5.0, -0.5, 1.0, 2.5, 0.2, -0.2, 0.2],
        )),
        other => Err(Error::InvalidArgument(format!(
            "unknown marginal model {other}"
        ))),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Cell {
    pub model: u8,
    pub dependence: DependenceLevel,
    pub n_sites: usize,
    pub n_blocks: usize,
}

impl Cell {
    pub fn label(&self) -> String {
        format!(
            "model{}-{}-S{}-n{}",
            self.model,
            self.dependence.as_str(),
            self.n_sites,
            self.n_blocks
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkConfig {
    pub models: Vec<u8>,
    pub dependence: Vec<DependenceLevel>,
    pub sites: Vec<usize>,
    pub blocks: Vec<usize>,
    pub replicates: usize,
    pub block_size: usize,
    pub seed: u64,
    pub methods: Vec<Method>,
    pub threshold_quantile: f64,
    pub a_variant: AVariant,
    /// Square study region `[lo, hi]²` holding the site grid.
    pub region: (f64, f64),
    pub max_evals: usize,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            models: vec![1],
            dependence: vec![DependenceLevel::Sigma1],
            sites: vec![25],
            blocks: vec![20],
            replicates: 100,
            block_size: 60,
            seed: 1,
            methods: vec![Method::TwoStep, Method::PairwiseOnestep],
            threshold_quantile: 0.95,
            a_variant: AVariant::Fd,
            region: (-5.0, 5.0),
            max_evals: NelderMeadOptions::default().max_evals,
        }
    }
}

const CONFIG_KEYS: &[&str] = &[
    "benchmark.models",
    "benchmark.dependence",
    "benchmark.sites",
    "benchmark.blocks",
    "benchmark.replicates",
    "benchmark.block_size",
    "benchmark.seed",
    "benchmark.methods",
    "benchmark.threshold_quantile",
    "benchmark.a_variant",
    "benchmark.region",
    "benchmark.max_evals",
];

impl BenchmarkConfig {
    pub fn from_config(c: &Config) -> Result<Self> {
        c.check_keys(CONFIG_KEYS)?;
        let d = Self::default();
        let dependence = match c.get_list::<String>("benchmark.dependence")? {
            Some(v) => v
                .iter()
                .map(|s| DependenceLevel::parse(s))
                .collect::<Result<_>>()?,
            None => d.dependence,
        };
        let methods = match c.get_list::<String>("benchmark.methods")? {
            Some(v) => v.iter().map(|s| Method::parse(s)).collect::<Result<_>>()?,
            None => d.methods,
        };
        let region = match c.get_list::<f64>("benchmark.region")? {
            Some(v) if v.len() == 2 => (v[0], v[1]),
            Some(_) => {
                return Err(Error::InvalidArgument(
                    "benchmark.region needs two numbers".into(),
                ))
            }
            None => d.region,
        };
        let cfg = Self {
            models: c.get_list("benchmark.models")?.unwrap_or(d.models),
            dependence,
            sites: c.get_list("benchmark.sites")?.unwrap_or(d.sites),
            blocks: c.get_list("benchmark.blocks")?.unwrap_or(d.blocks),
            replicates: c.get_or("benchmark.replicates", d.replicates)?,
            block_size: c.get_or("benchmark.block_size", d.block_size)?,
            seed: c.get_or("benchmark.seed", d.seed)?,
            methods,
            threshold_quantile: c.get_or("benchmark.threshold_quantile", d.threshold_quantile)?,
            a_variant: match c.raw("benchmark.a_variant") {
                Some(v) => AVariant::parse(v)?,
                None => d.a_variant,
            },
            region,
            max_evals: c.get_or("benchmark.max_evals", d.max_evals)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.replicates < 2 {
            return bad("benchmark needs at least 2 replicates");
        }
        if self.models.is_empty()
            || self.dependence.is_empty()
            || self.sites.is_empty()
            || self.blocks.is_empty()
            || self.methods.is_empty()
        {
            return bad("every benchmark factor needs at least one level");
        }
        for &s in &self.sites {
            let k = (s as f64).sqrt().round() as usize;
            if k * k != s || k < 2 {
                return Err(Error::InvalidArgument(format!(
                    "site count {s} is not a square grid of at least 2x2"
                )));
            }
        }
        for &m in &self.models {
            marginal_model(m)?;
        }
        if self.blocks.contains(&0) || self.block_size == 0 {
            return bad("blocks and block size must be positive");
        }
        if !(self.threshold_quantile > 0.0 && self.threshold_quantile < 1.0) {
            return bad("threshold quantile must lie in (0, 1)");
        }
        if !(self.region.0 < self.region.1) {
            return bad("region must satisfy lo < hi");
        }
        Ok(())
    }

    /// Cells in the order model, dependence, sites, blocks.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &model in &self.models {
            for &dependence in &self.dependence {
                for &n_sites in &self.sites {
                    for &n_blocks in &self.blocks {
                        out.push(Cell {
                            model,
                            dependence,
                            n_sites,
                            n_blocks,
                        });
                    }
                }
            }
        }
        out
    }

    fn scenario(&self, cell: &Cell, seed: u64) -> Result<Scenario> {
        let (design, beta) = marginal_model(cell.model)?;
        let k = (cell.n_sites as f64).sqrt().round() as usize;
        Ok(Scenario {
            sites: SiteCatalog::grid(k, self.region.0, self.region.1),
            design,
            beta,
            sigma: cell.dependence.dispersion(),
            n_blocks: cell.n_blocks,
            block_size: self.block_size,
            seed,
        })
    }
}

/// Estimates and standard errors of one method on one replicate.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MethodOutcome {
    pub method: Method,
    pub estimate: Vec<f64>,
    pub se: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub evaluations: usize,
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReplicateRecord {
    pub cell: String,
    pub replicate: usize,
    pub seed: u64,
    pub outcomes: Vec<MethodOutcome>,
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub elapsed_ms: Option<f64>,
}

/// Data and fits for one replicate; shared by the benchmark and integration tests.
pub struct ReplicateData {
    pub scenario: Scenario,
    pub step1: Step1Problem,
    pub step2: PairwiseProblem,
}

impl ReplicateData {
    pub fn simulate(scenario: Scenario, threshold_quantile: f64) -> Result<Self> {
        let (panel, maxima) = simulate_daily_panel(&scenario, &StreamFactory::new(scenario.seed))?;
        let th = ThresholdSpec::from_panel(&panel, threshold_quantile)?;
        let step1 = Step1Problem::new(&panel, &th, &scenario.design, &scenario.sites, false)?;
        let step2 = PairwiseProblem::new(&maxima, &scenario.sites, &scenario.design)?;
        Ok(Self {
            scenario,
            step1,
            step2,
        })
    }

    pub fn default_init(&self) -> Result<InitialValues> {
        // Rebuild maxima view from the pairwise problem.
        let n_sites = self.step2.n_sites();
        let mut m = crate::decluster::BlockMaxima::empty(
            self.scenario.sites.ids(),
            (1..=self.step2.n_blocks() as i64).collect(),
        );
        for s in 0..n_sites {
            for t in 0..self.step2.n_blocks() {
                m.set(s, t, self.step2.maximum(s, t));
            }
        }
        default_init(&m, &self.scenario.design, &self.scenario.sites)
    }

    /// Pairwise fit from the default initializer, then the two-step fit started at the pairwise
    /// estimates.
    pub fn fit_both(&self, opts: &NelderMeadOptions) -> Result<(FitResult, FitResult)> {
        let m1 = fit_pairwise_onestep(&self.step2, &self.default_init()?, opts)?;
        let init = InitialValues {
            beta: m1.beta_hat.clone(),
            theta: m1.theta_hat,
        };
        let m2 = fit_two_step(&self.step1, &self.step2, &init, opts)?;
        Ok((m1, m2))
    }
}

fn outcome(fit: &FitResult, data: &ReplicateData, variant: AVariant) -> Result<MethodOutcome> {
    let g = godambe_for_fit(fit, Some(&data.step1), &data.step2, variant)?;
    Ok(MethodOutcome {
        method: fit.method,
        estimate: fit.eta(),
        se: g.se,
        converged: fit.convergence.converged,
        iterations: fit.convergence.iterations,
        evaluations: fit.convergence.evaluations,
        note: fit.convergence.note.clone(),
    })
}

/// Replicate seed derived from the configuration seed, cell index and replicate index.
pub fn replicate_seed(seed: u64, cell: usize, replicate: usize) -> u64 {
    let f = StreamFactory::new(seed)
        .derive(cell as u64)
        .derive(replicate as u64);
    let mut rng = f.stream(0);
    rand::Rng::random(&mut rng)
}

fn run_replicate(
    cfg: &BenchmarkConfig,
    cell_idx: usize,
    cell: &Cell,
    rep: usize,
) -> ReplicateRecord {
    let seed = replicate_seed(cfg.seed, cell_idx, rep);
    let start = Instant::now();
    let opts = NelderMeadOptions {
        max_evals: cfg.max_evals,
        ..Default::default()
    };
    let result = (|| -> Result<Vec<MethodOutcome>> {
        let data = ReplicateData::simulate(cfg.scenario(cell, seed)?, cfg.threshold_quantile)?;
        let want = |m: Method| cfg.methods.contains(&m);
        let mut out = Vec::new();
        let m1 = fit_pairwise_onestep(&data.step2, &data.default_init()?, &opts)?;
        for &method in &cfg.methods {
            match method {
                Method::PairwiseOnestep => out.push(outcome(&m1, &data, AVariant::Fd)?),
                Method::TwoStep => {
                    let init = InitialValues {
                        beta: m1.beta_hat.clone(),
                        theta: m1.theta_hat,
                    };
                    let m2 = fit_two_step(&data.step1, &data.step2, &init, &opts)?;
                    out.push(outcome(&m2, &data, cfg.a_variant)?);
                }
            }
        }
        debug_assert!(want(out[0].method));
        Ok(out)
    })();
    let elapsed_ms = Some(start.elapsed().as_secs_f64() * 1e3);
    match result {
        Ok(outcomes) => ReplicateRecord {
            cell: cell.label(),
            replicate: rep,
            seed,
            outcomes,
            error: None,
            elapsed_ms,
        },
        Err(e) => ReplicateRecord {
            cell: cell.label(),
            replicate: rep,
            seed,
            outcomes: Vec::new(),
            error: Some(e.to_string()),
            elapsed_ms,
        },
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsRow {
    pub cell: Cell,
    pub parameter: String,
    pub method: Method,
    pub truth: f64,
    pub bias: f64,
    pub mse: f64,
    pub ese: f64,
    pub ase: f64,
    /// Percentage of 95% intervals containing the truth.
    pub coverage: f64,
    /// `MSE(two-step) / MSE(pairwise)`; NaN when either method is absent.
    pub relative_efficiency: f64,
    pub used: usize,
    pub failed: usize,
    pub nonconverged: usize,
    pub flagged: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsTable {
    pub rows: Vec<MetricsRow>,
}

fn fmt_num(x: f64) -> String {
    if x.is_nan() {
        "NA".to_string()
    } else {
        format!("{x}")
    }
}

impl MetricsTable {
    pub const HEADER: &'static str = "cell,model,dependence,sites,blocks,parameter,method,truth,\
bias,mse,ese,ase,coverage,relative_efficiency,used,failed,nonconverged,flagged";

    pub fn row(&self, cell: &Cell, parameter: &str, method: Method) -> Option<&MetricsRow> {
        self.rows
            .iter()
            .find(|r| &r.cell == cell && r.parameter == parameter && r.method == method)
    }

    /// CSV body with the header row; the caller prepends the provenance line.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        s.push_str(Self::HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.cell.label(),
                r.cell.model,
                r.cell.dependence.as_str(),
                r.cell.n_sites,
                r.cell.n_blocks,
                r.parameter,
                r.method.as_str(),
                fmt_num(r.truth),
                fmt_num(r.bias),
                fmt_num(r.mse),
                fmt_num(r.ese),
                fmt_num(r.ase),
                fmt_num(r.coverage),
                fmt_num(r.relative_efficiency),
                r.used,
                r.failed,
                r.nonconverged,
                r.flagged,
            );
        }
        s
    }
}

/// Full benchmark output.
#[derive(Clone, Debug)]
pub struct BenchmarkRun {
    pub table: MetricsTable,
    pub records: Vec<ReplicateRecord>,
}

impl BenchmarkRun {
    /// One JSON record per replicate. Wall-clock timings are included only on request so that
    /// default output is reproducible byte for byte.
    pub fn log_lines(&self, timings: bool) -> String {
        let mut s = String::new();
        for r in &self.records {
            let mut r = r.clone();
            if !timings {
                r.elapsed_ms = None;
            }
            s.push_str(&serde_json::to_string(&r).expect("records serialize"));
            s.push('\n');
        }
        s
    }
}

fn summarize(
    cfg: &BenchmarkConfig,
    cell: &Cell,
    records: &[&ReplicateRecord],
) -> Result<Vec<MetricsRow>> {
    let (design, beta) = marginal_model(cell.model)?;
    let mut truth = beta;
    truth.extend_from_slice(&cell.dependence.dispersion().as_array());
    let names = parameter_layout(&design);
    let ok: Vec<&ReplicateRecord> = records
        .iter()
        .copied()
        .filter(|r| r.error.is_none())
        .collect();
    let failed = records.len() - ok.len();
    let flagged = failed as f64 > FLAG_FAILURE_RATE * records.len() as f64;
    let mut stats = Vec::new();
    for (mi, &method) in cfg.methods.iter().enumerate() {
        // With no usable replicate every summary is NaN and the cell is flagged.
        let outs: Vec<&MethodOutcome> = ok.iter().map(|r| &r.outcomes[mi]).collect();
        let nonconverged = outs.iter().filter(|o| !o.converged).count();
        let k = outs.len() as f64;
        let mut per_param = Vec::new();
        for (j, name) in names.iter().enumerate() {
            let est: Vec<f64> = outs.iter().map(|o| o.estimate[j]).collect();
            let mean = est.iter().sum::<f64>() / k;
            let bias = mean - truth[j];
            let mse = est.iter().map(|e| (e - truth[j]).powi(2)).sum::<f64>() / k;
            let ese = (est.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt();
            let ase = outs.iter().map(|o| o.se[j]).sum::<f64>() / k;
            let covered = outs
                .iter()
                .filter(|o| (o.estimate[j] - truth[j]).abs() <= Z_95 * o.se[j])
                .count();
            per_param.push(MetricsRow {
                cell: *cell,
                parameter: name.clone(),
                method,
                truth: truth[j],
                bias,
                mse,
                ese,
                ase,
                coverage: 100.0 * covered as f64 / k,
                relative_efficiency: f64::NAN,
                used: outs.len(),
                failed,
                nonconverged,
                flagged,
            });
        }
        stats.push(per_param);
    }
    let m2 = cfg.methods.iter().position(|&m| m == Method::TwoStep);
    let m1 = cfg
        .methods
        .iter()
        .position(|&m| m == Method::PairwiseOnestep);
    if let (Some(a), Some(b)) = (m2, m1) {
        for j in 0..names.len() {
            let re = stats[a][j].mse / stats[b][j].mse;
            stats[a][j].relative_efficiency = re;
            stats[b][j].relative_efficiency = re;
        }
    }
    // Rows grouped by parameter, methods in configuration order.
    let mut rows = Vec::new();
    for j in 0..names.len() {
        for s in &stats {
            rows.push(s[j].clone());
        }
    }
    Ok(rows)
}

/// Runs every replicate of every cell. Replicates run in parallel on the current rayon pool; the
/// output does not depend on the number of threads.
pub fn run_benchmark(cfg: &BenchmarkConfig) -> Result<BenchmarkRun> {
    cfg.validate()?;
    let cells = cfg.cells();
    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..cfg.replicates).map(move |r| (c, r)))
        .collect();
    let records: Vec<ReplicateRecord> = jobs
        .par_iter()
        .map(|&(c, r)| run_replicate(cfg, c, &cells[c], r))
        .collect();
    for r in records.iter().filter(|r| r.error.is_some()) {
        log::warn!(
            "{} replicate {} excluded: {}",
            r.cell,
            r.replicate,
            r.error.as_deref().unwrap_or("")
        );
    }
    let mut rows = Vec::new();
    for (c, cell) in cells.iter().enumerate() {
        let recs: Vec<&ReplicateRecord> = records
            .iter()
            .skip(c * cfg.replicates)
            .take(cfg.replicates)
            .collect();
        rows.extend(summarize(cfg, cell, &recs)?);
    }
    Ok(BenchmarkRun {
        table: MetricsTable { rows },
        records,
    })
}
