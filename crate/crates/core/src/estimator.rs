//! Optimization drivers: step-1 marginal fit, step-2 dependence fit, the two-step estimator and
//! the one-step pairwise baseline.

use serde::{Deserialize, Serialize};

use crate::decluster::BlockMaxima;
use crate::error::{Error, Result};
use crate::gev::{MarginalDesign, SiteCatalog};
use crate::likelihood::{PairwiseProblem, Step1Problem};
use crate::optim::{fd_gradient, nelder_mead, NelderMeadOptions};
use crate::smith::SmithDispersion;

/// Open interval the site shape parameters are kept in during optimization.
pub const XI_LOWER: f64 = -0.5;
pub const XI_UPPER: f64 = 1.0;
/// Distance to a box edge at which a fit counts as on the boundary.
const BOUNDARY_TOL: f64 = 1e-3;
/// Step for the gradient check at exit.
const GRAD_STEP: f64 = 1e-6;
/// First-order tolerance relative to `1 + |NLL|`.
const GRAD_TOL: f64 = 1e-4;

pub const THETA_NAMES: [&str; 3] = ["sigma11", "sigma12", "sigma22"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    TwoStep,
    PairwiseOnestep,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::TwoStep => "two-step",
            Method::PairwiseOnestep => "pairwise",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "two-step" | "two_step" | "M2" => Ok(Method::TwoStep),
            "pairwise" | "pairwise-onestep" | "M1" => Ok(Method::PairwiseOnestep),
            other => Err(Error::InvalidArgument(format!("unknown method '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    pub converged: bool,
    pub iterations: usize,
    pub evaluations: usize,
    /// Max-norm of the finite-difference gradient in the optimized coordinates. Infinite (stored
    /// as JSON `null`) when a difference step was infeasible.
    #[serde(deserialize_with = "null_as_infinity")]
    pub gradient_norm: f64,
    pub note: Option<String>,
}

impl Convergence {
    fn merge(parts: &[&Convergence]) -> Self {
        let notes: Vec<&str> = parts.iter().filter_map(|c| c.note.as_deref()).collect();
        Self {
            converged: parts.iter().all(|c| c.converged),
            iterations: parts.iter().map(|c| c.iterations).sum(),
            evaluations: parts.iter().map(|c| c.evaluations).sum(),
            gradient_norm: parts.iter().map(|c| c.gradient_norm).fold(0.0, f64::max),
            note: (!notes.is_empty()).then(|| notes.join("; ")),
        }
    }
}

fn null_as_infinity<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
}

/// Outcome of a single-stage fit.
#[derive(Clone, Debug, PartialEq)]
pub struct StageFit {
    pub estimate: Vec<f64>,
    pub nll: f64,
    pub convergence: Convergence,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub beta_hat: Vec<f64>,
    pub theta_hat: SmithDispersion,
    pub method: Method,
    /// `(step 1, step 2)` for the two-step fit, `(pairwise)` for the one-step fit.
    pub nll_values: Vec<f64>,
    pub convergence: Convergence,
    pub parameter_layout: Vec<String>,
    pub n_blocks: usize,
}

impl FitResult {
    /// `η̂ = (β̂, σ11, σ12, σ22)`.
    pub fn eta(&self) -> Vec<f64> {
        let mut e = self.beta_hat.clone();
        e.extend_from_slice(&self.theta_hat.as_array());
        e
    }
}

/// Parameter names in `η` order.
pub fn parameter_layout(design: &MarginalDesign) -> Vec<String> {
    let mut names = design.param_names();
    names.extend(THETA_NAMES.iter().map(|s| s.to_string()));
    names
}

/// Starting values when none are supplied.
#[derive(Clone, Debug, PartialEq)]
pub struct InitialValues {
    pub beta: Vec<f64>,
    pub theta: SmithDispersion,
}

/// Pooled heuristics: `μ₀` = median of the maxima, `σ₀` = IQR/1.35, `ξ₀` = 0.1, slopes zero,
/// and `θ₀` = diag of the squared mean nearest-neighbour distance.
pub fn default_init(
    maxima: &BlockMaxima,
    design: &MarginalDesign,
    sites: &SiteCatalog,
) -> Result<InitialValues> {
    let mut obs: Vec<f64> = maxima.observed().collect();
    if obs.len() < 4 {
        return Err(Error::Infeasible(
            "too few observed block maxima to build starting values".into(),
        ));
    }
    obs.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let h = p * (obs.len() - 1) as f64;
        let (lo, frac) = (h.floor() as usize, h.fract());
        let hi = (lo + 1).min(obs.len() - 1);
        obs[lo] + frac * (obs[hi] - obs[lo])
    };
    let mut sigma0 = (q(0.75) - q(0.25)) / 1.35;
    if !(sigma0 > 0.0) {
        sigma0 = 1.0;
    }
    let mut beta = vec![0.0; design.n_coef()];
    beta[0] = q(0.5);
    beta[design.sigma_intercept()] = sigma0;
    beta[design.xi_intercept()] = 0.1;
    Ok(InitialValues {
        beta,
        theta: default_theta(sites),
    })
}

fn xi_in_box(design: &MarginalDesign, sites: &SiteCatalog, beta: &[f64]) -> bool {
    sites.sites().iter().all(|s| {
        let (_, _, xi) = design.raw_params(&s.covariates, beta);
        xi > XI_LOWER && xi < XI_UPPER
    })
}

fn on_boundary(design: &MarginalDesign, sites: &SiteCatalog, beta: &[f64]) -> bool {
    sites.sites().iter().any(|s| {
        let (_, _, xi) = design.raw_params(&s.covariates, beta);
        xi - XI_LOWER < BOUNDARY_TOL || XI_UPPER - xi < BOUNDARY_TOL
    })
}

fn beta_steps(design: &MarginalDesign, beta: &[f64]) -> Vec<f64> {
    let xi0 = design.xi_intercept();
    beta.iter()
        .enumerate()
        .map(|(j, b)| {
            if j == 0 || j == design.sigma_intercept() {
                0.1 * b.abs().max(1.0)
            } else if j == xi0 {
                0.05
            } else {
                0.05 * b.abs().max(1.0)
            }
        })
        .collect()
}

const THETA_STEPS: [f64; 3] = [0.3, 0.3, 0.3];

fn finish<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    min: crate::optim::Minimum,
    boundary: bool,
) -> StageFit {
    let grad = fd_gradient(&mut f, &min.x, GRAD_STEP);
    let gradient_norm = grad.iter().map(|g| g.abs()).fold(0.0, f64::max);
    let gradient_norm = if grad.iter().any(|g| !g.is_finite()) {
        f64::INFINITY
    } else {
        gradient_norm
    };
    let mut notes = Vec::new();
    if !min.converged {
        notes.push("evaluation limit reached before tolerance".to_string());
    }
    if boundary {
        notes.push(format!(
            "shape parameter on the box boundary ({XI_LOWER}, {XI_UPPER})"
        ));
    }
    let grad_ok = gradient_norm <= GRAD_TOL * (1.0 + min.f.abs());
    if !grad_ok && !boundary {
        notes.push(format!("gradient norm {gradient_norm:.3e} above tolerance"));
    }
    StageFit {
        estimate: min.x,
        nll: min.f,
        convergence: Convergence {
            converged: min.converged && grad_ok && !boundary,
            iterations: min.iterations,
            evaluations: min.evaluations,
            gradient_norm,
            note: (!notes.is_empty()).then(|| notes.join("; ")),
        },
    }
}

/// Maximizes the step-1 likelihood over β.
pub fn fit_step1(
    problem: &Step1Problem,
    init_beta: &[f64],
    opts: &NelderMeadOptions,
) -> Result<StageFit> {
    let (design, sites) = (problem.design(), problem.sites());
    if init_beta.len() != design.n_coef() {
        return Err(Error::Dimension(format!(
            "initial beta has length {}, design needs {}",
            init_beta.len(),
            design.n_coef()
        )));
    }
    let objective = |b: &[f64]| {
        if xi_in_box(design, sites, b) {
            problem.nll(b)
        } else {
            f64::INFINITY
        }
    };
    if !objective(init_beta).is_finite() {
        return Err(Error::Infeasible(
            "initial beta gives an infinite step-1 likelihood; try the data-driven defaults \
             (median/IQR of the maxima, shape 0.1)"
                .into(),
        ));
    }
    let min = nelder_mead(objective, init_beta, &beta_steps(design, init_beta), opts);
    let boundary = on_boundary(design, sites, &min.x);
    Ok(finish(objective, min, boundary))
}

/// Isotropic start `diag(d̄²)` from the mean nearest-neighbour distance.
pub fn default_theta(sites: &SiteCatalog) -> SmithDispersion {
    let d = sites.mean_nearest_neighbor_distance();
    let d2 = if d > 0.0 && d.is_finite() { d * d } else { 1.0 };
    SmithDispersion::new(d2, 0.0, d2).expect("isotropic dispersion is SPD")
}

/// Maximizes the pairwise likelihood over θ with β fixed. The search runs from `init_theta` and
/// from the isotropic default, keeping the better optimum. The estimate is reported as
/// `(σ11, σ12, σ22)`.
pub fn fit_step2(
    problem: &PairwiseProblem,
    beta_hat: &[f64],
    init_theta: &SmithDispersion,
    opts: &NelderMeadOptions,
) -> Result<StageFit> {
    let margins = problem.margins(beta_hat)?;
    let objective = |c: &[f64]| match SmithDispersion::from_log_cholesky(c) {
        Ok(th) => problem.nll_with_margins(&th, &margins),
        Err(_) => f64::INFINITY,
    };
    let mut starts = vec![init_theta.to_log_cholesky()];
    let iso = default_theta(problem.sites()).to_log_cholesky();
    if iso != starts[0] {
        starts.push(iso);
    }
    let mut best: Option<crate::optim::Minimum> = None;
    let (mut iterations, mut evaluations) = (0, 0);
    for c0 in starts
        .iter()
        .filter(|c| objective(c.as_slice()).is_finite())
    {
        let min = nelder_mead(objective, c0, &THETA_STEPS, opts);
        iterations += min.iterations;
        evaluations += min.evaluations;
        if best.as_ref().is_none_or(|b| min.f < b.f) {
            best = Some(min);
        }
    }
    let Some(mut min) = best else {
        return Err(Error::Infeasible(
            "initial dispersion gives an infinite pairwise likelihood".into(),
        ));
    };
    min.iterations = iterations;
    min.evaluations = evaluations;
    let mut fit = finish(objective, min, false);
    fit.estimate = SmithDispersion::from_log_cholesky(&fit.estimate)?
        .as_array()
        .to_vec();
    Ok(fit)
}

/// Step 1 then step 2 with β fixed at β̂.
pub fn fit_two_step(
    step1: &Step1Problem,
    step2: &PairwiseProblem,
    init: &InitialValues,
    opts: &NelderMeadOptions,
) -> Result<FitResult> {
    if step1.n_blocks() != step2.n_blocks() {
        return Err(Error::Dimension(format!(
            "daily panel has {} blocks, maxima {}",
            step1.n_blocks(),
            step2.n_blocks()
        )));
    }
    let s1 = fit_step1(step1, &init.beta, opts)?;
    let s2 = fit_step2(step2, &s1.estimate, &init.theta, opts)?;
    Ok(FitResult {
        theta_hat: SmithDispersion::from_slice(&s2.estimate)?,
        beta_hat: s1.estimate,
        method: Method::TwoStep,
        nll_values: vec![s1.nll, s2.nll],
        convergence: Convergence::merge(&[&s1.convergence, &s2.convergence]),
        parameter_layout: parameter_layout(step1.design()),
        n_blocks: step1.n_blocks(),
    })
}

/// Maximizes the likelihood of the block maxima treated as independent across sites.
pub fn fit_independence(
    problem: &PairwiseProblem,
    init_beta: &[f64],
    opts: &NelderMeadOptions,
) -> Result<StageFit> {
    let (design, sites) = (problem.design(), problem.sites());
    let objective = |b: &[f64]| {
        if xi_in_box(design, sites, b) {
            problem.independence_nll(b)
        } else {
            f64::INFINITY
        }
    };
    if !objective(init_beta).is_finite() {
        return Err(Error::Infeasible(
            "initial beta gives an infinite independence likelihood".into(),
        ));
    }
    let min = nelder_mead(objective, init_beta, &beta_steps(design, init_beta), opts);
    let boundary = on_boundary(design, sites, &min.x);
    Ok(finish(objective, min, boundary))
}

/// Joint minimization of the pairwise likelihood over `(β, θ)`. β is first fitted treating sites
/// as independent, θ is then fitted with that β, and finally all coordinates move together.
pub fn fit_pairwise_onestep(
    problem: &PairwiseProblem,
    init: &InitialValues,
    opts: &NelderMeadOptions,
) -> Result<FitResult> {
    let (design, sites) = (problem.design(), problem.sites());
    let p = design.n_coef();
    if init.beta.len() != p {
        return Err(Error::Dimension(format!(
            "initial beta has length {}, design needs {p}",
            init.beta.len()
        )));
    }
    if !xi_in_box(design, sites, &init.beta) {
        return Err(Error::Infeasible("initial shape outside the box".into()));
    }
    let beta0 = match fit_independence(problem, &init.beta, opts) {
        Ok(f) => f.estimate,
        Err(_) => init.beta.clone(),
    };
    let warm = fit_step2(problem, &beta0, &init.theta, opts)?;
    let theta0 = SmithDispersion::from_slice(&warm.estimate)?;

    let objective = |x: &[f64]| {
        let (b, c) = x.split_at(p);
        if !xi_in_box(design, sites, b) {
            return f64::INFINITY;
        }
        match SmithDispersion::from_log_cholesky(c) {
            Ok(th) => problem.nll(&th, b),
            Err(_) => f64::INFINITY,
        }
    };
    let mut x0 = beta0.clone();
    x0.extend_from_slice(&theta0.to_log_cholesky());
    let mut steps = beta_steps(design, &beta0);
    steps.extend_from_slice(&THETA_STEPS);
    let min = nelder_mead(objective, &x0, &steps, opts);
    let boundary = on_boundary(design, sites, &min.x[..p]);
    let fit = finish(objective, min, boundary);
    let (b, c) = fit.estimate.split_at(p);
    Ok(FitResult {
        beta_hat: b.to_vec(),
        theta_hat: SmithDispersion::from_log_cholesky(c)?,
        method: Method::PairwiseOnestep,
        nll_values: vec![fit.nll],
        convergence: Convergence::merge(&[&warm.convergence, &fit.convergence]),
        parameter_layout: parameter_layout(design),
        n_blocks: problem.n_blocks(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decluster::block_maxima;
    use crate::likelihood::ThresholdSpec;
    use crate::rng::StreamFactory;
    use crate::simulate::{simulate_daily_panel, DailyPanel, Scenario};

    fn scenario(grid: usize, n: usize, m: usize, seed: u64) -> Scenario {
        Scenario {
            sites: SiteCatalog::grid(grid, -5.0, 5.0),
            design: MarginalDesign::model1(),
            beta: vec![5.0, -0.5, 1.0, 2.5, 0.2],
            sigma: SmithDispersion::scaled_correlation(4.0, 0.5).unwrap(),
            n_blocks: n,
            block_size: m,
            seed,
        }
    }

    fn problems(sc: &Scenario) -> (DailyPanel, BlockMaxima, Step1Problem, PairwiseProblem) {
        let (panel, maxima) = simulate_daily_panel(sc, &StreamFactory::new(sc.seed)).unwrap();
        let th = ThresholdSpec::from_panel(&panel, 0.95).unwrap();
        let s1 = Step1Problem::new(&panel, &th, &sc.design, &sc.sites, false).unwrap();
        let s2 = PairwiseProblem::new(&maxima, &sc.sites, &sc.design).unwrap();
        (panel, maxima, s1, s2)
    }

    #[test]
    fn two_step_is_composition_and_deterministic() {
        let sc = scenario(2, 30, 30, 11);
        let (_, maxima, s1, s2) = problems(&sc);
        let init = default_init(&maxima, &sc.design, &sc.sites).unwrap();
        let opts = NelderMeadOptions::default();
        let fit = fit_two_step(&s1, &s2, &init, &opts).unwrap();
        let again = fit_two_step(&s1, &s2, &init, &opts).unwrap();
        assert_eq!(fit, again);
        let a = fit_step1(&s1, &init.beta, &opts).unwrap();
        let b = fit_step2(&s2, &a.estimate, &init.theta, &opts).unwrap();
        assert_eq!(fit.beta_hat, a.estimate);
        assert_eq!(fit.theta_hat.as_array().to_vec(), b.estimate);
        assert_eq!(fit.nll_values, vec![a.nll, b.nll]);
        assert!(fit.theta_hat.is_spd());
        assert_eq!(fit.parameter_layout.len(), 8);
        assert_eq!(fit.method, Method::TwoStep);
    }

    #[test]
    fn step1_refit_is_idempotent() {
        let sc = scenario(2, 30, 30, 12);
        let (_, maxima, s1, _) = problems(&sc);
        let init = default_init(&maxima, &sc.design, &sc.sites).unwrap();
        let opts = NelderMeadOptions::default();
        let a = fit_step1(&s1, &init.beta, &opts).unwrap();
        assert!(a.convergence.converged, "{:?}", a.convergence);
        let b = fit_step1(&s1, &a.estimate, &opts).unwrap();
        assert!(b.nll >= a.nll - 1e-8 * a.nll.abs());
        for (x, y) in a.estimate.iter().zip(&b.estimate) {
            assert!((x - y).abs() < 1e-4 * x.abs().max(1.0), "{x} vs {y}");
        }
    }

    #[test]
    fn step1_location_equivariance() {
        let sc = scenario(2, 30, 30, 13);
        let (panel, maxima, s1, _) = problems(&sc);
        let c = 7.25;
        let mut shifted = panel.clone();
        for s in 0..panel.n_sites() {
            for t in 0..panel.n_blocks() {
                for v in shifted.block_mut(s, t) {
                    *v += c;
                }
            }
        }
        let th = ThresholdSpec::from_panel(&shifted, 0.95).unwrap();
        let s1c = Step1Problem::new(&shifted, &th, &sc.design, &sc.sites, false).unwrap();
        let init = default_init(&maxima, &sc.design, &sc.sites).unwrap();
        let mut init_c = init.beta.clone();
        init_c[0] += c;
        let opts = NelderMeadOptions::default();
        let a = fit_step1(&s1, &init.beta, &opts).unwrap();
        let b = fit_step1(&s1c, &init_c, &opts).unwrap();
        assert!((b.estimate[0] - a.estimate[0] - c).abs() < 1e-4);
        for j in 1..5 {
            assert!((a.estimate[j] - b.estimate[j]).abs() < 1e-4, "{j}");
        }
    }

    #[test]
    fn infeasible_start_is_rejected() {
        let sc = scenario(2, 10, 30, 14);
        let (_, _, s1, s2) = problems(&sc);
        let bad = [100.0, 0.0, 0.0, 1.0, 0.2];
        assert!(matches!(
            fit_step1(&s1, &bad, &NelderMeadOptions::default()),
            Err(Error::Infeasible(_))
        ));
        assert!(matches!(
            fit_step2(&s2, &bad, &sc.sigma, &NelderMeadOptions::default()),
            Err(Error::Support { .. })
        ));
    }

    #[test]
    fn pairwise_objective_matches_step2() {
        let sc = scenario(2, 20, 20, 15);
        let (_, maxima, _, s2) = problems(&sc);
        let init = default_init(&maxima, &sc.design, &sc.sites).unwrap();
        let opts = NelderMeadOptions {
            max_evals: 3000,
            ..Default::default()
        };
        let fit = fit_pairwise_onestep(&s2, &init, &opts).unwrap();
        let direct = crate::likelihood::step2_nll(
            &fit.theta_hat,
            &fit.beta_hat,
            &maxima,
            &sc.sites,
            &sc.design,
        )
        .unwrap();
        assert!((direct - fit.nll_values[0]).abs() < 1e-9 * direct.abs());
        assert_eq!(fit.method, Method::PairwiseOnestep);
    }

    #[test]
    fn default_init_is_feasible_on_simulated_data() {
        let sc = scenario(3, 15, 30, 16);
        let (panel, maxima, s1, s2) = problems(&sc);
        let init = default_init(&maxima, &sc.design, &sc.sites).unwrap();
        assert!(s1.nll(&init.beta).is_finite());
        assert!(s2.nll(&init.theta, &init.beta).is_finite());
        assert_eq!(init.beta[2], 0.0);
        assert_eq!(init.beta[4], 0.1);
        let bm = block_maxima(&panel, 0.05).unwrap();
        assert_eq!(bm.n_blocks(), 15);
    }
}
