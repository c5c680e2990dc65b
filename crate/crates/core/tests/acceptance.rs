//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and exits nonzero when
//! any criterion fails. Positional arguments select criteria by number, e.g.
//! `cargo test --test acceptance -- 1 7`.

use std::path::PathBuf;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spatmax::benchmark::{
    marginal_model, replicate_seed, run_benchmark, BenchmarkConfig, Cell, DependenceLevel,
    MetricsTable, ReplicateData,
};
use spatmax::estimator::{FitResult, Method};
use spatmax::godambe::{estimate_a_bartlett, estimate_a_fd, godambe_for_fit, AVariant};
use spatmax::likelihood::block_scores;
use spatmax::optim::NelderMeadOptions;
use spatmax::risk::{draw_params, eta_feasible, joint_return_level, return_level_interval};
use spatmax::rng::StreamFactory;
use spatmax::simulate::{apply_gev_margins, simulate_daily_panel, Scenario, SmithSimulator};
use spatmax::smith::{
    bivariate_cdf_frechet, extremal_coefficient, log_bivariate_density_frechet, mahalanobis_a,
    SmithDispersion,
};
use spatmax::{GevParams, MarginalDesign, Site, SiteCatalog};

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

/// 1% two-sided Kolmogorov–Smirnov critical value (asymptotic).
const KS_CRIT_01: f64 = 1.6276;

fn ks_stat(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

fn rel(a: f64, b: f64) -> f64 {
    ((a - b) / b).abs()
}

// ---------------------------------------------------------------------------------------------
// 1. closed-form and numeric oracles

fn criterion_1() -> Outcome {
    let mut failures = Vec::new();

    // Density against the mixed central difference of the CDF, evaluated in 60-digit arithmetic.
    let table = include_str!("data/smith_density_oracle.csv");
    let mut worst = 0.0f64;
    let mut rows = 0;
    for line in table.lines().skip(1).filter(|l| !l.trim().is_empty()) {
        let v: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        let d = log_bivariate_density_frechet(v[0], v[1], v[2])
            .unwrap()
            .exp();
        worst = worst.max(rel(d, v[3]));
        rows += 1;
    }
    if rows != 100 || worst >= 1e-5 {
        failures.push(format!(
            "density vs mixed difference: {rows} points, max rel {worst:.2e}"
        ));
    }

    // Max-stability in log space.
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst_ms = 0.0f64;
    for _ in 0..1000 {
        let z1 = rng.random_range(0.05..50.0);
        let z2 = rng.random_range(0.05..50.0);
        let a = rng.random_range(0.01..20.0);
        let k = rng.random_range(0.1..10.0);
        let lhs = k * bivariate_cdf_frechet(k * z1, k * z2, a).unwrap().ln();
        let rhs = bivariate_cdf_frechet(z1, z2, a).unwrap().ln();
        worst_ms = worst_ms.max((lhs - rhs).abs() / rhs.abs().max(1.0));
    }
    if worst_ms >= 1e-12 {
        failures.push(format!("max-stability: {worst_ms:.2e}"));
    }

    // GEV round trips.
    let mut worst_q = 0.0f64;
    let mut worst_f = 0.0f64;
    for _ in 0..1000 {
        let xi = match rng.random_range(0..4) {
            0 => 0.0,
            1 => 5e-9,
            _ => rng.random_range(-0.5..1.0),
        };
        let p = GevParams::new(
            rng.random_range(-10.0..10.0),
            rng.random_range(0.1..5.0),
            xi,
        )
        .unwrap();
        let prob = rng.random_range(1e-6..1.0 - 1e-6);
        let y = p.quantile(prob).unwrap();
        worst_q = worst_q.max((p.cdf(y).unwrap() - prob).abs());
        let z = p.to_frechet(y).unwrap();
        worst_f =
            worst_f.max(rel(apply_gev_margins(z, &p), y).min((apply_gev_margins(z, &p) - y).abs()));
        let v = rng.random_range(0.05..100.0);
        worst_f = worst_f.max(rel(p.to_frechet(apply_gev_margins(v, &p)).unwrap(), v));
    }
    if worst_q >= 1e-10 {
        failures.push(format!("cdf/quantile round trip: {worst_q:.2e}"));
    }
    if worst_f >= 1e-10 {
        failures.push(format!("frechet/margin round trip: {worst_f:.2e}"));
    }

    // Hand-computed dependence distances.
    let a5 = mahalanobis_a([3.0, 4.0], &SmithDispersion::new(1.0, 0.0, 1.0).unwrap()).unwrap();
    let a1 = mahalanobis_a([2.0, 0.0], &SmithDispersion::new(4.0, 0.0, 4.0).unwrap()).unwrap();
    let a3 = mahalanobis_a([1.0, 1.0], &SmithDispersion::new(4.0, 2.0, 4.0).unwrap()).unwrap();
    let hand = (a5 - 5.0)
        .abs()
        .max((a1 - 1.0).abs())
        .max((a3 * a3 - 1.0 / 3.0).abs());
    if hand > 1e-12 {
        failures.push(format!("a hand cases: {a5}, {a1}, {}", a3 * a3));
    }

    Outcome::new(
        failures.is_empty(),
        if failures.is_empty() {
            format!(
                "density {worst:.1e}, max-stability {worst_ms:.1e}, quantile {worst_q:.1e}, \
                 margins {worst_f:.1e}, a {hand:.1e}"
            )
        } else {
            failures.join("; ")
        },
    )
}

// ---------------------------------------------------------------------------------------------
// 2. simulation law

fn two_sites(dx: [f64; 2]) -> SiteCatalog {
    let site = |id: &str, coord: [f64; 2]| Site {
        id: id.into(),
        coord,
        covariates: vec![],
    };
    SiteCatalog::new(vec![site("a", [0.0, 0.0]), site("b", dx)]).unwrap()
}

fn criterion_2() -> Outcome {
    let mut failures = Vec::new();
    let mut notes = Vec::new();
    let sigma = DependenceLevel::Sigma1.dispersion();
    let n = 100_000usize;

    let single = SmithSimulator::new(&SiteCatalog::grid(1, 0.0, 0.0), &sigma).unwrap();
    let f = StreamFactory::new(101);
    let draws: Vec<f64> = (0..n)
        .map(|i| single.sample(&mut f.stream(i as u64))[0])
        .collect();
    let d = ks_stat(draws, |z| (-1.0 / z).exp());
    let crit = KS_CRIT_01 / (n as f64).sqrt();
    notes.push(format!("single-site D={d:.4} (crit {crit:.4})"));
    if d >= crit {
        failures.push("single-site KS".to_string());
    }

    let mut worst_z = 0.0f64;
    for (k, dx) in [[1.0, 0.0], [2.5, 0.0], [1.5, -2.0]]
        .into_iter()
        .enumerate()
    {
        let a = mahalanobis_a(dx, &sigma).unwrap();
        let sim = SmithSimulator::new(&two_sites(dx), &sigma).unwrap();
        let f = StreamFactory::new(200 + k as u64);
        let pairs: Vec<f64> = (0..n)
            .map(|i| {
                let z = sim.sample(&mut f.stream(i as u64));
                z[0].max(z[1])
            })
            .collect();
        for z in [0.5, 1.0, 3.0] {
            let p = (-extremal_coefficient(a) / z).exp();
            let hits = pairs.iter().filter(|&&m| m <= z).count() as f64 / n as f64;
            let se = (p * (1.0 - p) / n as f64).sqrt();
            let score = (hits - p).abs() / se;
            worst_z = worst_z.max(score);
            if score >= 3.0 {
                failures.push(format!(
                    "extremal coefficient dx={dx:?} z={z}: {score:.2} SE"
                ));
            }
        }
    }
    notes.push(format!("extremal coefficient worst {worst_z:.2} SE"));

    let (design, beta) = marginal_model(1).unwrap();
    let sites = SiteCatalog::grid(2, -5.0, 5.0);
    let sc = Scenario {
        sites: sites.clone(),
        design: design.clone(),
        beta: beta.clone(),
        sigma,
        n_blocks: 2000,
        block_size: 60,
        seed: 303,
    };
    let (_, maxima) = simulate_daily_panel(&sc, &StreamFactory::new(sc.seed)).unwrap();
    let params = design.site_params(&sites, &beta).unwrap();
    let crit = KS_CRIT_01 / 2000f64.sqrt();
    for (s, p) in params.iter().enumerate() {
        let xs: Vec<f64> = (0..2000).map(|t| maxima.get(s, t).unwrap()).collect();
        let d = ks_stat(xs, |y| p.cdf(y).unwrap());
        notes.push(format!("block maxima site {} D={d:.4}", s + 1));
        if d >= crit {
            failures.push(format!("block maxima KS at site {}", s + 1));
        }
    }
    notes.push(format!("crit {crit:.4}"));
    let mut detail = notes.join(", ");
    if !failures.is_empty() {
        detail = format!("{}; {detail}", failures.join("; "));
    }
    Outcome::new(failures.is_empty(), detail)
}

// ---------------------------------------------------------------------------------------------
// 3. estimator recovery

fn scenario(
    model: u8,
    n_sites_side: usize,
    n_blocks: usize,
    block_size: usize,
    seed: u64,
) -> Scenario {
    let (design, beta) = marginal_model(model).unwrap();
    Scenario {
        sites: SiteCatalog::grid(n_sites_side, -5.0, 5.0),
        design,
        beta,
        sigma: DependenceLevel::Sigma1.dispersion(),
        n_blocks,
        block_size,
        seed,
    }
}

fn truth_eta(sc: &Scenario) -> Vec<f64> {
    let mut eta = sc.beta.clone();
    eta.extend(sc.sigma.as_array());
    eta
}

fn criterion_3() -> Outcome {
    let reps = 20;
    let opts = NelderMeadOptions::default();
    let mut inside = 0;
    let mut total = 0;
    let mut errors = 0;
    for r in 0..reps {
        let sc = scenario(1, 3, 200, 60, replicate_seed(3, 0, r));
        let truth = truth_eta(&sc);
        let result = ReplicateData::simulate(sc, 0.95).and_then(|data| {
            let (_, m2) = data.fit_both(&opts)?;
            let g = godambe_for_fit(&m2, Some(&data.step1), &data.step2, AVariant::Fd)?;
            Ok((m2.eta(), g.se))
        });
        match result {
            Ok((est, se)) => {
                for j in 0..truth.len() {
                    total += 1;
                    if (est[j] - truth[j]).abs() <= 3.0 * se[j] {
                        inside += 1;
                    }
                }
            }
            Err(_) => {
                errors += 1;
                total += truth.len();
            }
        }
    }
    let frac = inside as f64 / total as f64;
    Outcome::new(
        frac >= 0.90,
        format!(
            "{inside}/{total} cells within 3 SE ({:.1}%), {errors} failed fits",
            100.0 * frac
        ),
    )
}

// ---------------------------------------------------------------------------------------------
// 4 and 5. benchmark cells

fn benchmark_cell(n_blocks: usize, replicates: usize, seed: u64) -> (MetricsTable, Cell, usize) {
    let cfg = BenchmarkConfig {
        models: vec![1],
        dependence: vec![DependenceLevel::Sigma1],
        sites: vec![25],
        blocks: vec![n_blocks],
        replicates,
        block_size: 60,
        seed,
        ..Default::default()
    };
    let cell = cfg.cells()[0];
    let run = run_benchmark(&cfg).expect("benchmark");
    let failed = run.records.iter().filter(|r| r.error.is_some()).count();
    (run.table, cell, failed)
}

fn criterion_4() -> Outcome {
    let (table, cell, failed) = benchmark_cell(20, 100, 4);
    let re = |p: &str| {
        table
            .row(&cell, p, Method::TwoStep)
            .unwrap()
            .relative_efficiency
    };
    let checks: [(&str, f64, f64); 6] = [
        ("beta_mu_1", 0.0, 0.10),
        ("beta_mu_2", 0.0, 0.10),
        ("beta_xi_0", 0.0, 0.5),
        ("sigma11", 0.5, 1.05),
        ("sigma12", 0.5, 1.05),
        ("sigma22", 0.5, 1.05),
    ];
    let mut pass = true;
    let parts: Vec<String> = checks
        .iter()
        .map(|&(p, lo, hi)| {
            let v = re(p);
            let ok = v > lo && v < hi;
            pass &= ok;
            format!("{p}={v:.3}{}", if ok { "" } else { "(out)" })
        })
        .collect();
    Outcome::new(
        pass,
        format!("RE {}; {failed} failed replicates", parts.join(" ")),
    )
}

fn criterion_5() -> Outcome {
    let (table, cell, failed) = benchmark_cell(50, 200, 5);
    let mut pass = true;
    let mut cov_range = (f64::INFINITY, f64::NEG_INFINITY);
    let mut worst_bias = 0.0f64;
    let mut bad = Vec::new();
    for r in table
        .rows
        .iter()
        .filter(|r| r.cell == cell && r.method == Method::TwoStep)
    {
        cov_range = (cov_range.0.min(r.coverage), cov_range.1.max(r.coverage));
        worst_bias = worst_bias.max(r.bias.abs() / r.ese);
        let ok = (88.0..=99.0).contains(&r.coverage) && r.bias.abs() < 2.0 * r.ese;
        if !ok {
            pass = false;
            bad.push(format!(
                "{} cov={:.1} bias/ese={:.2} ase/ese={:.2}",
                r.parameter,
                r.coverage,
                r.bias / r.ese,
                r.ase / r.ese
            ));
        }
    }
    let mut detail = format!(
        "two-step coverage {:.1}-{:.1}%, max |bias|/ESE {worst_bias:.2}, {failed} failed replicates",
        cov_range.0, cov_range.1
    );
    if !bad.is_empty() {
        detail.push_str(&format!("; out of range: {}", bad.join(", ")));
    }
    Outcome::new(pass, detail)
}

// ---------------------------------------------------------------------------------------------
// 6. Bartlett against finite-difference sensitivity

fn criterion_6() -> Outcome {
    let sc = scenario(1, 3, 200, 60, 606);
    let data = ReplicateData::simulate(sc, 0.95).unwrap();
    let (_, m2) = data.fit_both(&NelderMeadOptions::default()).unwrap();
    let a_fd = estimate_a_fd(&m2.beta_hat, &m2.theta_hat, &data.step1, &data.step2).unwrap();
    let scores = block_scores(&m2.beta_hat, &m2.theta_hat, &data.step1, &data.step2).unwrap();
    let a_b = estimate_a_bartlett(&scores).unwrap();
    let ratio = (&a_b - &a_fd).norm() / a_fd.norm();
    Outcome::new(
        ratio < 0.15,
        format!("relative Frobenius difference {ratio:.4}"),
    )
}

// ---------------------------------------------------------------------------------------------
// 7. joint return level closed forms

fn criterion_7() -> Outcome {
    let unit = GevParams::unit_frechet();
    let indep = joint_return_level(&unit, &unit, f64::INFINITY, 50.0).unwrap();
    let dep = joint_return_level(&unit, &unit, 0.0, 50.0).unwrap();
    let mut pass = rel(indep, 6.5587) < 1e-4 && rel(dep, 49.4983) < 1e-4;
    let mut prev = dep;
    let mut ordered = true;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut grid: Vec<f64> = (-24..=24).map(|k| 10f64.powf(k as f64 / 4.0)).collect();
    for _ in 0..50 {
        grid.push(10f64.powf(rng.random_range(-6.0..6.0)));
    }
    grid.sort_by(f64::total_cmp);
    for &a in &grid {
        let y = joint_return_level(&unit, &unit, a, 50.0).unwrap();
        if !(y >= indep * (1.0 - 1e-12) && y <= dep * (1.0 + 1e-12) && y <= prev * (1.0 + 1e-12)) {
            ordered = false;
        }
        prev = y;
    }
    pass &= ordered;
    Outcome::new(
        pass,
        format!(
            "independence {indep:.6}, complete dependence {dep:.6}, {} values of a ordered: {ordered}",
            grid.len()
        ),
    )
}

// ---------------------------------------------------------------------------------------------
// 8. data-fusion gains on a twenty-site network

/// Twenty stations with covariates (longitude, latitude, elevation in 100 m) centered at a
/// reference point; coordinates are the first two covariates in degrees.
fn network() -> SiteCatalog {
    let mut rng = ChaCha8Rng::seed_from_u64(1948);
    let mut sites = vec![
        ("st01", 0.13, 0.65, 0.1),
        ("st02", 0.41, 0.90, 0.4),
        ("st03", 0.60, 0.91, 0.2),
    ];
    let ids: Vec<String> = (4..=20).map(|i| format!("st{i:02}")).collect();
    for id in &ids {
        let lon = rng.random_range(-1.5..4.0);
        let lat = rng.random_range(-3.5..3.0);
        let elev = rng.random_range(0.0..15.0);
        sites.push((id.as_str(), lon, lat, elev));
    }
    SiteCatalog::new(
        sites
            .into_iter()
            .map(|(id, lon, lat, elev)| Site {
                id: id.into(),
                coord: [lon, lat],
                covariates: vec![lon, lat, elev],
            })
            .collect(),
    )
    .unwrap()
}

fn interval_widths(
    fit: &FitResult,
    omega: &nalgebra::DMatrix<f64>,
    n: usize,
    sites: &SiteCatalog,
    design: &MarginalDesign,
    pairs: &[(usize, usize)],
) -> Vec<f64> {
    let draws = draw_params(&fit.eta(), omega, n, 5000, &StreamFactory::new(50), |eta| {
        eta_feasible(design, sites, eta)
    })
    .unwrap();
    pairs
        .iter()
        .map(|&p| {
            return_level_interval(sites, design, p, &fit.eta(), &draws, 50.0)
                .unwrap()
                .width()
        })
        .collect()
}

fn criterion_8() -> Outcome {
    let sites = network();
    let design = MarginalDesign::new(vec![0, 1, 2], vec![0, 1, 2], vec![]);
    let sc = Scenario {
        sites: sites.clone(),
        design: design.clone(),
        beta: vec![5.7, -0.8, -0.18, 0.17, 2.37, -0.36, -0.13, 0.06, 0.09],
        sigma: SmithDispersion::new(0.301, -0.494, 0.882).unwrap(),
        n_blocks: 55,
        block_size: 121,
        seed: 2002,
    };
    let data = match ReplicateData::simulate(sc, 0.95) {
        Ok(d) => d,
        Err(e) => return Outcome::new(false, format!("simulation failed: {e}")),
    };
    let result = data
        .fit_both(&NelderMeadOptions::default())
        .and_then(|(m1, m2)| {
            let g1 = godambe_for_fit(&m1, None, &data.step2, AVariant::Fd)?;
            let g2 = godambe_for_fit(&m2, Some(&data.step1), &data.step2, AVariant::Fd)?;
            Ok((m1, m2, g1, g2))
        });
    let (m1, m2, g1, g2) = match result {
        Ok(x) => x,
        Err(e) => return Outcome::new(false, format!("fit failed: {e}")),
    };
    let smaller = g1.se.iter().zip(&g2.se).filter(|(s1, s2)| s2 < s1).count();
    let pairs = [(0, 1), (0, 2), (1, 2)];
    let w1 = interval_widths(&m1, &g1.omega, g1.n, &sites, &design, &pairs);
    let w2 = interval_widths(&m2, &g2.omega, g2.n, &sites, &design, &pairs);
    let narrower = w1.iter().zip(&w2).all(|(a, b)| b < a);
    let fmt = |w: &[f64]| {
        w.iter()
            .map(|x| format!("{x:.2}"))
            .collect::<Vec<_>>()
            .join("/")
    };
    Outcome::new(
        smaller >= 10 && narrower,
        format!(
            "two-step SE smaller for {smaller}/{} parameters; CI widths pairwise {} vs two-step {}",
            g1.se.len(),
            fmt(&w1),
            fmt(&w2)
        ),
    )
}

// ---------------------------------------------------------------------------------------------
// 9. determinism of the benchmark command

fn criterion_9() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bench.cfg");
    std::fs::write(
        &cfg,
        "benchmark.models = 1, 2\nbenchmark.dependence = sigma1\nbenchmark.sites = 9\n\
         benchmark.blocks = 10\nbenchmark.replicates = 3\nbenchmark.block_size = 30\n\
         benchmark.seed = 99\n",
    )
    .unwrap();
    let run = |threads: &str, tag: &str| -> Option<(Vec<u8>, Vec<u8>)> {
        let out: PathBuf = dir.path().join(format!("metrics_{tag}.csv"));
        let log: PathBuf = dir.path().join(format!("log_{tag}.jsonl"));
        let status = Command::new(env!("CARGO_BIN_EXE_spatmax"))
            .env("SPATMAX_THREADS", threads)
            .args(["benchmark", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out)
            .arg("--log")
            .arg(&log)
            .status()
            .ok()?;
        if !status.success() {
            return None;
        }
        Some((std::fs::read(out).ok()?, std::fs::read(log).ok()?))
    };
    let a = run("1", "a");
    let b = run("1", "b");
    let c = run("4", "c");
    match (a, b, c) {
        (Some(a), Some(b), Some(c)) => {
            let same = a == b && a == c;
            Outcome::new(
                same,
                format!(
                    "{} metrics bytes, {} log bytes, identical across runs and 1/4 threads: {same}",
                    a.0.len(),
                    a.1.len()
                ),
            )
        }
        _ => Outcome::new(false, "benchmark command failed"),
    }
}

fn main() {
    type Criterion = (usize, &'static str, fn() -> Outcome);
    let criteria: [Criterion; 9] = [
        (1, "oracles", criterion_1),
        (2, "simulation law", criterion_2),
        (3, "estimator recovery", criterion_3),
        (4, "relative efficiency", criterion_4),
        (5, "coverage calibration", criterion_5),
        (6, "Bartlett vs finite-difference A", criterion_6),
        (7, "joint return level closed forms", criterion_7),
        (8, "twenty-site data fusion", criterion_8),
        (9, "benchmark determinism", criterion_9),
    ];
    let selected: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = Vec::new();
    for (id, name, run) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = run();
        println!(
            "criterion {id} [{name}]: {} ({:.1}s) {}",
            if outcome.pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64(),
            outcome.detail
        );
        if !outcome.pass {
            failed.push(id);
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
