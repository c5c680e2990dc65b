use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use spatmax::decluster::DEFAULT_MAX_MISSING_FRAC;
use spatmax::estimator::Method;
use spatmax::godambe::AVariant;
use spatmax::io::{self, ProvenanceLine};
use spatmax::pipeline::{self, FitInputs, FitReport, VarianceReport};
use spatmax::{Error, Result};

#[derive(Parser)]
#[command(
    name = "spatmax",
    version,
    about = "Composite-likelihood inference for spatial maxima"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct DataArgs {
    /// Site catalog CSV (site_id,x1,x2,cov1..covK).
    #[arg(long)]
    sites: PathBuf,
    /// Daily CSV (site_id,block,day,value).
    #[arg(long)]
    daily: Option<PathBuf>,
    /// Block-maxima CSV (site_id,block,max); derived from --daily when absent.
    #[arg(long)]
    maxima: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a daily panel and its block maxima from a scenario config.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Runs-decluster each site above its threshold quantile.
    Decluster {
        #[arg(long)]
        daily: PathBuf,
        #[arg(long)]
        sites: PathBuf,
        #[arg(long, default_value_t = 0.95)]
        quantile: f64,
        #[arg(long)]
        out: PathBuf,
        /// Also write block maxima here.
        #[arg(long)]
        maxima_out: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_MAX_MISSING_FRAC)]
        max_missing: f64,
    },
    /// Fit marginal and dependence parameters.
    Fit {
        #[arg(long, value_parser = parse_method)]
        method: Method,
        #[command(flatten)]
        data: DataArgs,
        /// model1, model2, constant, or mu=i,j;sigma=k;xi=
        #[arg(long, default_value = "model1")]
        design: String,
        #[arg(long, default_value_t = 0.95)]
        quantile: f64,
        /// Use cluster maxima above the threshold in the marginal likelihood.
        #[arg(long)]
        decluster: bool,
        #[arg(long, default_value_t = DEFAULT_MAX_MISSING_FRAC)]
        max_missing: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sandwich standard errors for a saved fit.
    Variance {
        #[arg(long)]
        fit: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value = "fd", value_parser = parse_variant)]
        a_variant: AVariant,
        /// parameter,estimate,se,lower,upper
        #[arg(long)]
        out: PathBuf,
        /// Full report including the covariance matrix.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Joint return levels for site pairs.
    ReturnLevel {
        #[arg(long)]
        fit: PathBuf,
        /// JSON written by `variance --json`; needed for intervals.
        #[arg(long)]
        variance: Option<PathBuf>,
        #[arg(long)]
        sites: PathBuf,
        /// Comma-separated id pairs, e.g. s1:s2,s3:s4
        #[arg(long)]
        pairs: String,
        #[arg(long, default_value_t = 50.0)]
        period: f64,
        /// Parameter draws for the interval; 0 gives point estimates only.
        #[arg(long, default_value_t = 5000)]
        draws: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draws of T-block maxima at every site under the fitted model.
    MaximaDraws {
        #[arg(long)]
        fit: PathBuf,
        #[arg(long)]
        sites: PathBuf,
        #[arg(long)]
        period: f64,
        #[arg(long)]
        draws: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulation study: metrics table and per-replicate run log.
    Benchmark {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// JSON-lines run log.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Include wall-clock timings in the run log (breaks byte-identity across runs).
        #[arg(long)]
        timings: bool,
    },
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    Method::parse(s).map_err(|e| e.to_string())
}

fn parse_variant(s: &str) -> std::result::Result<AVariant, String> {
    AVariant::parse(s).map_err(|e| e.to_string())
}

fn no_prov() -> ProvenanceLine {
    ProvenanceLine {
        config_hash: None,
        seed: None,
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Simulate { config, out } => {
            std::fs::create_dir_all(&out)?;
            for p in pipeline::simulate_command(&config, &out)? {
                log::info!("wrote {}", p.display());
            }
        }
        Command::Decluster {
            daily,
            sites,
            quantile,
            out,
            maxima_out,
            max_missing,
        } => {
            let n = pipeline::decluster_command(
                &daily,
                &sites,
                quantile,
                &out,
                maxima_out.as_deref(),
                max_missing,
            )?;
            log::info!("{n} clusters");
        }
        Command::Fit {
            method,
            data,
            design,
            quantile,
            decluster,
            max_missing,
            out,
        } => {
            let inputs = FitInputs {
                sites: data.sites,
                daily: data.daily,
                maxima: data.maxima,
                design: pipeline::parse_design(&design)?,
                threshold_quantile: quantile,
                decluster,
                max_missing_frac: max_missing,
            };
            let report = pipeline::with_thread_pool(|| pipeline::fit_command(&inputs, method))??;
            if !report.fit.convergence.converged {
                log::warn!("optimizer did not meet every convergence check; see the report");
            }
            pipeline::write_json(&out, &report)?;
        }
        Command::Variance {
            fit,
            data,
            a_variant,
            out,
            json,
        } => {
            let report: FitReport = pipeline::read_json(&fit)?;
            let inputs = pipeline::inputs_from_report(&report, data.sites, data.daily, data.maxima);
            let v = pipeline::with_thread_pool(|| {
                pipeline::variance_command(&report, &inputs, a_variant)
            })??;
            let mut w = io::create(&out)?;
            std::io::Write::write_all(&mut w, v.to_csv(&no_prov()).as_bytes())?;
            if let Some(path) = json {
                pipeline::write_json(&path, &v)?;
            }
        }
        Command::ReturnLevel {
            fit,
            variance,
            sites,
            pairs,
            period,
            draws,
            seed,
            out,
        } => {
            let report: FitReport = pipeline::read_json(&fit)?;
            let v: Option<VarianceReport> = match variance {
                Some(p) => Some(pipeline::read_json(&p)?),
                None => None,
            };
            if v.is_none() && draws > 0 {
                return Err(Error::InvalidArgument(
                    "intervals need --variance; pass --draws 0 for point estimates".into(),
                ));
            }
            let catalog = io::read_sites(&sites)?;
            let pairs = pipeline::parse_pairs(&pairs, &catalog)?;
            let (rows, d) = pipeline::with_thread_pool(|| {
                pipeline::return_level_command(
                    &report,
                    v.as_ref(),
                    &catalog,
                    &pairs,
                    period,
                    draws,
                    seed,
                )
            })??;
            if let Some(d) = d {
                log::info!("{} parameter draws, {} rejected", d.draws.len(), d.rejected);
            }
            let prov = ProvenanceLine {
                config_hash: None,
                seed: Some(seed),
            };
            pipeline::write_return_levels(&out, &rows, period, &prov)?;
        }
        Command::MaximaDraws {
            fit,
            sites,
            period,
            draws,
            seed,
            out,
        } => {
            let report: FitReport = pipeline::read_json(&fit)?;
            let catalog = io::read_sites(&sites)?;
            pipeline::maxima_draws_command(&report, &catalog, period, draws, seed, &out)?;
        }
        Command::Benchmark {
            config,
            out,
            log,
            timings,
        } => {
            pipeline::with_thread_pool(|| {
                pipeline::benchmark_command(&config, &out, log.as_deref(), timings)
            })??;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let record = serde_json::json!({
                "error": e.kind(),
                "message": e.to_string(),
                "exit_code": e.exit_code(),
            });
            eprintln!("{record}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
