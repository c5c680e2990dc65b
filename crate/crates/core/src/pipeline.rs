//! Command implementations behind the `spatmax` binary: scenario configuration, data loading and
//! the artifact writers for each subcommand.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::benchmark::{marginal_model, run_benchmark, BenchmarkConfig, DependenceLevel};
use crate::config::Config;
use crate::decluster::{block_maxima, runs_decluster, site_threshold, BlockMaxima};
use crate::error::{Error, Result};
use crate::estimator::{
    default_init, fit_pairwise_onestep, fit_two_step, FitResult, InitialValues, Method,
};
use crate::gev::{MarginalDesign, SiteCatalog};
use crate::godambe::{godambe_for_fit, AVariant, GodambeResult};
use crate::io::{self, ProvenanceLine};
use crate::likelihood::{PairwiseProblem, Step1Problem, ThresholdSpec};
use crate::optim::NelderMeadOptions;
use crate::risk::{
    draw_params, eta_feasible, joint_return_level_for_pair, return_level_interval,
    t_year_maxima_draws, ParamDraws,
};
use crate::rng::StreamFactory;
use crate::simulate::{simulate_daily_panel, DailyPanel, Scenario};
use crate::smith::SmithDispersion;

/// Environment variable capping the worker threads.
pub const THREADS_ENV: &str = "SPATMAX_THREADS";

/// Runs `f` on a rayon pool sized by `SPATMAX_THREADS` (all cores when unset).
pub fn with_thread_pool<T: Send>(f: impl FnOnce() -> T + Send) -> Result<T> {
    let threads = match std::env::var(THREADS_ENV) {
        Ok(v) => v.trim().parse::<usize>().map_err(|_| {
            Error::InvalidArgument(format!(
                "{THREADS_ENV} must be a positive integer, got '{v}'"
            ))
        })?,
        Err(_) => 0,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Parses `model1`, `model2`, or `mu=0,1;sigma=;xi=` (covariate indices, 0-based).
pub fn parse_design(spec: &str) -> Result<MarginalDesign> {
    match spec {
        "model1" | "1" => return Ok(MarginalDesign::model1()),
        "model2" | "2" => return Ok(MarginalDesign::model2()),
        "constant" => return Ok(MarginalDesign::new(vec![], vec![], vec![])),
        _ => {}
    }
    let (mut mu, mut sigma, mut xi) = (Vec::new(), Vec::new(), Vec::new());
    for part in spec.split(';').filter(|p| !p.trim().is_empty()) {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| Error::InvalidArgument(format!("bad design term '{part}'")))?;
        let idx = v
            .split(',')
            .filter(|x| !x.trim().is_empty())
            .map(|x| {
                x.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::InvalidArgument(format!("bad covariate index '{x}'")))
            })
            .collect::<Result<Vec<_>>>()?;
        match k.trim() {
            "mu" => mu = idx,
            "sigma" => sigma = idx,
            "xi" => xi = idx,
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown design parameter '{other}'"
                )))
            }
        }
    }
    Ok(MarginalDesign::new(mu, sigma, xi))
}

const SCENARIO_KEYS: &[&str] = &[
    "scenario.grid",
    "scenario.region",
    "scenario.sites_file",
    "scenario.model",
    "scenario.design",
    "scenario.beta",
    "scenario.sigma",
    "scenario.dependence",
    "scenario.blocks",
    "scenario.block_size",
    "scenario.seed",
];

/// Builds a [`Scenario`] from `scenario.*` keys. Relative site-file paths resolve against
/// `base_dir`.
pub fn scenario_from_config(c: &Config, base_dir: &Path) -> Result<Scenario> {
    c.check_keys(SCENARIO_KEYS)?;
    let sites = match c.raw("scenario.sites_file") {
        Some(f) => io::read_sites(&base_dir.join(f))?,
        None => {
            let k: usize = c.get_or("scenario.grid", 5)?;
            let region = c
                .get_list::<f64>("scenario.region")?
                .unwrap_or(vec![-5.0, 5.0]);
            if region.len() != 2 || k < 1 {
                return Err(Error::InvalidArgument(
                    "scenario.region needs two numbers and scenario.grid must be positive".into(),
                ));
            }
            SiteCatalog::grid(k, region[0], region[1])
        }
    };
    let model: Option<u8> = c.get("scenario.model")?;
    let (design, default_beta) = match (c.raw("scenario.design"), model) {
        (Some(d), _) => (parse_design(d)?, None),
        (None, Some(m)) => {
            let (d, b) = marginal_model(m)?;
            (d, Some(b))
        }
        (None, None) => {
            let (d, b) = marginal_model(1)?;
            (d, Some(b))
        }
    };
    let beta = match c.get_list::<f64>("scenario.beta")? {
        Some(b) => b,
        None => default_beta.ok_or_else(|| {
            Error::InvalidArgument("scenario.beta is required with a custom design".into())
        })?,
    };
    if beta.len() != design.n_coef() {
        return Err(Error::Dimension(format!(
            "scenario.beta has {} values, the design needs {}",
            beta.len(),
            design.n_coef()
        )));
    }
    let sigma = match (
        c.get_list::<f64>("scenario.sigma")?,
        c.raw("scenario.dependence"),
    ) {
        (Some(v), _) => SmithDispersion::from_slice(&v)?,
        (None, Some(d)) => DependenceLevel::parse(d)?.dispersion(),
        (None, None) => DependenceLevel::Sigma1.dispersion(),
    };
    let sc = Scenario {
        sites,
        design,
        beta,
        sigma,
        n_blocks: c.get_or("scenario.blocks", 50)?,
        block_size: c.get_or("scenario.block_size", 60)?,
        seed: c.get_or("scenario.seed", 1)?,
    };
    sc.validate()?;
    Ok(sc)
}

fn config_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// `simulate`: writes `sites.csv`, `daily.csv` and `maxima.csv` into `out_dir`.
pub fn simulate_command(config_path: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let cfg = Config::load(config_path)?;
    let sc = scenario_from_config(&cfg, &config_dir(config_path))?;
    let (panel, maxima) = simulate_daily_panel(&sc, &StreamFactory::new(sc.seed))?;
    let prov = ProvenanceLine {
        config_hash: Some(cfg.hash().to_string()),
        seed: Some(sc.seed),
    };
    let paths = ["sites.csv", "daily.csv", "maxima.csv"].map(|f| out_dir.join(f));
    io::write_sites(io::create(&paths[0])?, &sc.sites, &prov)?;
    io::write_daily(io::create(&paths[1])?, &panel, &prov)?;
    io::write_maxima(io::create(&paths[2])?, &maxima, &prov)?;
    Ok(paths.to_vec())
}

/// `decluster`: per-site thresholds and runs clusters as `site_id,block,start_day,end_day,max`,
/// optionally also block maxima under the missingness rule.
pub fn decluster_command(
    daily: &Path,
    sites: &Path,
    quantile: f64,
    out: &Path,
    maxima_out: Option<&Path>,
    max_missing_frac: f64,
) -> Result<usize> {
    let catalog = io::read_sites(sites)?;
    let panel = io::read_daily(daily, &catalog)?;
    let prov = ProvenanceLine {
        config_hash: None,
        seed: None,
    };
    let mut w = io::create(out)?;
    writeln!(w, "{}", prov.render())?;
    writeln!(w, "site_id,threshold,block,start_day,end_day,max")?;
    let mut count = 0;
    for (s, id) in panel.site_ids().iter().enumerate() {
        let u = site_threshold(panel.site_series(s), quantile)?;
        for (t, label) in panel.block_labels().iter().enumerate() {
            for c in runs_decluster(panel.block(s, t), u) {
                writeln!(w, "{id},{u},{label},{},{},{}", c.start + 1, c.end, c.max)?;
                count += 1;
            }
        }
    }
    w.flush()?;
    if let Some(path) = maxima_out {
        let m = block_maxima(&panel, max_missing_frac)?;
        io::write_maxima(io::create(path)?, &m, &prov)?;
    }
    Ok(count)
}

/// Everything `fit` needs besides the method.
#[derive(Clone, Debug)]
pub struct FitInputs {
    pub sites: PathBuf,
    pub daily: Option<PathBuf>,
    pub maxima: Option<PathBuf>,
    pub design: MarginalDesign,
    pub threshold_quantile: f64,
    pub decluster: bool,
    pub max_missing_frac: f64,
}

/// Loaded data for fitting and variance estimation.
pub struct DataBundle {
    pub sites: SiteCatalog,
    pub panel: Option<DailyPanel>,
    pub maxima: BlockMaxima,
}

impl FitInputs {
    pub fn load(&self) -> Result<DataBundle> {
        let sites = io::read_sites(&self.sites)?;
        let panel = match &self.daily {
            Some(p) => Some(io::read_daily(p, &sites)?),
            None => None,
        };
        let maxima = match (&self.maxima, &panel) {
            (Some(p), _) => io::read_maxima(p, &sites)?,
            (None, Some(panel)) => block_maxima(panel, self.max_missing_frac)?,
            (None, None) => {
                return Err(Error::InvalidArgument(
                    "need --maxima or --daily to obtain block maxima".into(),
                ))
            }
        };
        Ok(DataBundle {
            sites,
            panel,
            maxima,
        })
    }

    pub fn step1(&self, data: &DataBundle) -> Result<Step1Problem> {
        let panel = data
            .panel
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("the two-step method needs --daily".into()))?;
        if panel.block_labels() != data.maxima.block_labels() {
            return Err(Error::Dimension(
                "daily panel and maxima cover different blocks".into(),
            ));
        }
        let th = ThresholdSpec::from_panel(panel, self.threshold_quantile)?;
        Step1Problem::new(panel, &th, &self.design, &data.sites, self.decluster)
    }

    pub fn step2(&self, data: &DataBundle) -> Result<PairwiseProblem> {
        PairwiseProblem::new(&data.maxima, &data.sites, &self.design)
    }
}

/// Serialized fit with what is needed to rebuild the likelihoods.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub design: MarginalDesign,
    pub threshold_quantile: f64,
    pub decluster: bool,
    pub max_missing_frac: f64,
    pub fit: FitResult,
}

/// `fit`: the two-step fit starts from the pairwise estimates.
pub fn fit_command(inputs: &FitInputs, method: Method) -> Result<FitReport> {
    let data = inputs.load()?;
    let step2 = inputs.step2(&data)?;
    let opts = NelderMeadOptions::default();
    let init = default_init(&data.maxima, &inputs.design, &data.sites)?;
    let pairwise = fit_pairwise_onestep(&step2, &init, &opts)?;
    let fit = match method {
        Method::PairwiseOnestep => pairwise,
        Method::TwoStep => {
            let step1 = inputs.step1(&data)?;
            let start = InitialValues {
                beta: pairwise.beta_hat.clone(),
                theta: pairwise.theta_hat,
            };
            fit_two_step(&step1, &step2, &start, &opts)?
        }
    };
    Ok(FitReport {
        design: inputs.design.clone(),
        threshold_quantile: inputs.threshold_quantile,
        decluster: inputs.decluster,
        max_missing_frac: inputs.max_missing_frac,
        fit,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = io::create(path)?;
    serde_json::to_writer_pretty(&mut w, value)
        .map_err(|e| Error::Numeric(format!("serializing {}: {e}", path.display())))?;
    writeln!(w)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        line: e.line(),
        msg: e.to_string(),
    })
}

/// Serialized sandwich estimate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    pub method: Method,
    pub variant: AVariant,
    pub parameter_layout: Vec<String>,
    pub estimate: Vec<f64>,
    pub se: Vec<f64>,
    pub n: usize,
    pub condition: f64,
    pub omega: Vec<Vec<f64>>,
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
}

fn rows(m: &nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

impl VarianceReport {
    pub fn new(fit: &FitResult, g: &GodambeResult) -> Self {
        Self {
            method: fit.method,
            variant: g.variant,
            parameter_layout: fit.parameter_layout.clone(),
            estimate: fit.eta(),
            se: g.se.clone(),
            n: g.n,
            condition: g.condition,
            omega: rows(&g.omega),
            a: rows(&g.a),
            b: rows(&g.b),
        }
    }

    pub fn omega_matrix(&self) -> nalgebra::DMatrix<f64> {
        let d = self.omega.len();
        nalgebra::DMatrix::from_fn(d, d, |i, j| self.omega[i][j])
    }

    /// `parameter,estimate,se,lower,upper` with 95% normal intervals.
    pub fn to_csv(&self, prov: &ProvenanceLine) -> String {
        let mut s = format!("{}\nparameter,estimate,se,lower,upper\n", prov.render());
        for ((name, e), se) in self
            .parameter_layout
            .iter()
            .zip(&self.estimate)
            .zip(&self.se)
        {
            s.push_str(&format!(
                "{name},{e},{se},{},{}\n",
                e - 1.96 * se,
                e + 1.96 * se
            ));
        }
        s
    }
}

/// Inputs for `fit` rebuilt from a saved report.
pub fn inputs_from_report(
    report: &FitReport,
    sites: PathBuf,
    daily: Option<PathBuf>,
    maxima: Option<PathBuf>,
) -> FitInputs {
    FitInputs {
        sites,
        daily,
        maxima,
        design: report.design.clone(),
        threshold_quantile: report.threshold_quantile,
        decluster: report.decluster,
        max_missing_frac: report.max_missing_frac,
    }
}

/// `variance`: sandwich standard errors for a saved fit.
pub fn variance_command(
    report: &FitReport,
    inputs: &FitInputs,
    variant: AVariant,
) -> Result<VarianceReport> {
    let data = inputs.load()?;
    let step2 = inputs.step2(&data)?;
    let step1 = match report.fit.method {
        Method::TwoStep => Some(inputs.step1(&data)?),
        Method::PairwiseOnestep => None,
    };
    let g = godambe_for_fit(&report.fit, step1.as_ref(), &step2, variant)?;
    Ok(VarianceReport::new(&report.fit, &g))
}

/// Resolves `a:b,c:d` site-id pairs against the catalog.
pub fn parse_pairs(spec: &str, sites: &SiteCatalog) -> Result<Vec<(usize, usize)>> {
    spec.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            let (a, b) = p
                .split_once(':')
                .ok_or_else(|| Error::InvalidArgument(format!("pair '{p}' is not 'id:id'")))?;
            let idx = |id: &str| {
                sites
                    .index_of(id.trim())
                    .ok_or_else(|| Error::InvalidArgument(format!("unknown site id '{id}'")))
            };
            Ok((idx(a)?, idx(b)?))
        })
        .collect()
}

/// One output row of `return-level`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReturnLevelRow {
    pub site1: String,
    pub site2: String,
    pub estimate: f64,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

/// `return-level`: point estimates, and intervals from `n_draws` parameter draws when a variance
/// report is given.
pub fn return_level_command(
    report: &FitReport,
    variance: Option<&VarianceReport>,
    sites: &SiteCatalog,
    pairs: &[(usize, usize)],
    period: f64,
    n_draws: usize,
    seed: u64,
) -> Result<(Vec<ReturnLevelRow>, Option<ParamDraws>)> {
    let fit = &report.fit;
    let design = &report.design;
    let draws = match variance {
        Some(v) if n_draws > 0 => Some(draw_params(
            &fit.eta(),
            &v.omega_matrix(),
            v.n,
            n_draws,
            &StreamFactory::new(seed),
            |eta| eta_feasible(design, sites, eta),
        )?),
        _ => None,
    };
    let ids = sites.ids();
    let mut out = Vec::new();
    for &pair in pairs {
        let (estimate, lower, upper) = match &draws {
            Some(d) => {
                let ci = return_level_interval(sites, design, pair, &fit.eta(), d, period)?;
                (ci.estimate, Some(ci.lower), Some(ci.upper))
            }
            None => (
                joint_return_level_for_pair(
                    sites,
                    pair,
                    &fit.beta_hat,
                    &fit.theta_hat,
                    design,
                    period,
                )?,
                None,
                None,
            ),
        };
        out.push(ReturnLevelRow {
            site1: ids[pair.0].clone(),
            site2: ids[pair.1].clone(),
            estimate,
            lower,
            upper,
        });
    }
    Ok((out, draws))
}

pub fn write_return_levels(
    path: &Path,
    rows: &[ReturnLevelRow],
    period: f64,
    prov: &ProvenanceLine,
) -> Result<()> {
    let mut w = io::create(path)?;
    writeln!(w, "{}", prov.render())?;
    writeln!(w, "site1,site2,period,estimate,lower,upper")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{period},{},{},{}",
            r.site1,
            r.site2,
            r.estimate,
            io::fmt_value(r.lower),
            io::fmt_value(r.upper)
        )?;
    }
    Ok(())
}

/// `maxima-draws`: `N` rows of T-block maxima, one column per site.
pub fn maxima_draws_command(
    report: &FitReport,
    sites: &SiteCatalog,
    period: f64,
    n_draws: usize,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let fit = &report.fit;
    let draws = t_year_maxima_draws(
        sites,
        &fit.beta_hat,
        &fit.theta_hat,
        &report.design,
        period,
        n_draws,
        &StreamFactory::new(seed),
    )?;
    let mut w = io::create(out)?;
    let prov = ProvenanceLine {
        config_hash: None,
        seed: Some(seed),
    };
    writeln!(w, "{}", prov.render())?;
    writeln!(w, "draw,{}", sites.ids().join(","))?;
    for (i, row) in draws.iter().enumerate() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        writeln!(w, "{},{}", i + 1, cells.join(","))?;
    }
    Ok(())
}

/// `benchmark`: metrics table CSV and JSON-lines run log.
pub fn benchmark_command(
    config_path: &Path,
    out: &Path,
    log: Option<&Path>,
    timings: bool,
) -> Result<()> {
    let cfg_file = Config::load(config_path)?;
    let cfg = BenchmarkConfig::from_config(&cfg_file)?;
    let run = run_benchmark(&cfg)?;
    let prov = ProvenanceLine {
        config_hash: Some(cfg_file.hash().to_string()),
        seed: Some(cfg.seed),
    };
    let mut w = io::create(out)?;
    writeln!(w, "{}", prov.render())?;
    w.write_all(run.table.to_csv().as_bytes())?;
    w.flush()?;
    if let Some(path) = log {
        let mut w = io::create(path)?;
        w.write_all(run.log_lines(timings).as_bytes())?;
        w.flush()?;
    }
    let flagged = run.table.rows.iter().filter(|r| r.flagged).count();
    if flagged > 0 {
        log::warn!("{flagged} metric rows belong to cells with more than 5% failed replicates");
    }
    Ok(())
}
