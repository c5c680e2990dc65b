//! Joint return levels, parameter draws from the normal approximation of the estimator, and
//! T-block maxima fields.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimator::{XI_LOWER, XI_UPPER};
use crate::gev::{GevParams, MarginalDesign, SiteCatalog};
use crate::rng::{tag, StreamFactory};
use crate::simulate::SmithSimulator;
use crate::smith::{bivariate_cdf_frechet, mahalanobis_a, SmithDispersion};

/// Default number of parameter draws.
pub const DEFAULT_DRAWS: usize = 5000;
/// Relative bracket width at which bisection stops.
const ROOT_RTOL: f64 = 1e-12;
/// Redraw attempts per accepted draw before giving up.
const MAX_ATTEMPTS_PER_DRAW: usize = 100;

/// `P(Y1 > y, Y2 > y)` for GEV margins joined by the Smith copula with distance `a`.
pub fn joint_exceedance(y: f64, p1: &GevParams, p2: &GevParams, a: f64) -> Result<f64> {
    let g1 = p1.cdf(y)?;
    let g2 = p2.cdf(y)?;
    if g1 == 0.0 || g2 == 0.0 {
        return Ok(1.0 - g1.max(g2));
    }
    if g1 == 1.0 || g2 == 1.0 {
        return Ok(0.0);
    }
    let z1 = p1.to_frechet(y)?;
    let z2 = p2.to_frechet(y)?;
    let f12 = bivariate_cdf_frechet(z1, z2, a)?;
    Ok((1.0 - g1 - g2 + f12).clamp(0.0, 1.0))
}

/// Level `y` exceeded simultaneously at both sites with probability `1/T`, by bracketing and
/// bisection.
pub fn joint_return_level(p1: &GevParams, p2: &GevParams, a: f64, period: f64) -> Result<f64> {
    if !(period >= 2.0) {
        return Err(Error::InvalidArgument(format!(
            "return period must be at least 2, got {period}"
        )));
    }
    if a.is_nan() || a < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "a must be non-negative, got {a}"
        )));
    }
    let target = 1.0 / period;
    let excess = |y: f64| joint_exceedance(y, p1, p2, a).map(|p| p - target);

    // The joint exceedance is at most each marginal one, so it is ≤ 1/T at the larger marginal
    // return level; search downward for a sign change.
    let level = 1.0 - target;
    let mut hi = p1.quantile(level)?.max(p2.quantile(level)?);
    let width = hi.abs().max(p1.sigma).max(p2.sigma);
    let mut lo = hi - width;
    let mut found = false;
    for _ in 0..200 {
        if excess(lo)? >= 0.0 {
            found = true;
            break;
        }
        hi = lo;
        lo -= width * 2f64.powi(1 + (hi - lo).abs().log2().max(0.0) as i32);
    }
    if !found {
        return Err(Error::Numeric(
            "joint exceedance probability stays below 1/T over the feasible range".into(),
        ));
    }
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if excess(mid)? >= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if (hi - lo).abs() <= ROOT_RTOL * mid.abs().max(1e-300) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Joint return level for catalog sites `i` and `j` under `(β, θ)`.
pub fn joint_return_level_for_pair(
    sites: &SiteCatalog,
    pair: (usize, usize),
    beta: &[f64],
    theta: &SmithDispersion,
    design: &MarginalDesign,
    period: f64,
) -> Result<f64> {
    let (i, j) = pair;
    let s = sites.sites();
    if i >= s.len() || j >= s.len() {
        return Err(Error::InvalidArgument(format!(
            "site index out of range in ({i}, {j})"
        )));
    }
    let p1 = design.marginal_params_at_site(&s[i], beta)?;
    let p2 = design.marginal_params_at_site(&s[j], beta)?;
    let dx = [s[i].coord[0] - s[j].coord[0], s[i].coord[1] - s[j].coord[1]];
    let a = mahalanobis_a(dx, theta)?;
    joint_return_level(&p1, &p2, a, period)
}

/// Parameter draws with bookkeeping.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamDraws {
    pub draws: Vec<Vec<f64>>,
    pub rejected: usize,
    /// Whether `Ω/n` needed eigenvalue clipping to be factorized.
    pub repaired: bool,
}

/// Factor `L` with `L Lᵀ = M`; falls back to clipping negative eigenvalues.
fn psd_factor(m: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    if let Some(ch) = m.clone().cholesky() {
        return (ch.l(), false);
    }
    let eig = m.clone().symmetric_eigen();
    let d = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    (&eig.eigenvectors * DMatrix::from_diagonal(&d), true)
}

/// Feasibility of `η = (β, σ11, σ12, σ22)`: positive scales and boxed shapes at every site and
/// an SPD dispersion.
pub fn eta_feasible(design: &MarginalDesign, sites: &SiteCatalog, eta: &[f64]) -> bool {
    let p = design.n_coef();
    if eta.len() != p + 3 || SmithDispersion::from_slice(&eta[p..]).is_err() {
        return false;
    }
    sites.sites().iter().all(|s| {
        let (mu, sigma, xi) = design.raw_params(&s.covariates, &eta[..p]);
        mu.is_finite() && sigma > 0.0 && xi > XI_LOWER && xi < XI_UPPER
    })
}

/// Draws `η̂ + Lζ` with `L Lᵀ = Ω/n`. Infeasible draws are redrawn; more than half rejected is an
/// error.
pub fn draw_params<F>(
    eta_hat: &[f64],
    omega: &DMatrix<f64>,
    n: usize,
    n_draws: usize,
    streams: &StreamFactory,
    feasible: F,
) -> Result<ParamDraws>
where
    F: Fn(&[f64]) -> bool + Sync,
{
    let d = eta_hat.len();
    if omega.shape() != (d, d) {
        return Err(Error::Dimension(format!(
            "omega is {:?} for {d} parameters",
            omega.shape()
        )));
    }
    if n == 0 || n_draws == 0 {
        return Err(Error::InvalidArgument(
            "need n ≥ 1 and at least one draw".into(),
        ));
    }
    let (l, repaired) = psd_factor(&(omega / n as f64));
    if repaired {
        log::warn!("omega/n is not positive definite; negative eigenvalues clipped to zero");
    }
    let center = DVector::from_column_slice(eta_hat);
    let streams = streams.derive(tag::PARAMS);
    let results: Vec<(Option<Vec<f64>>, usize)> = (0..n_draws)
        .into_par_iter()
        .map(|i| {
            let mut rng = streams.stream(i as u64);
            let mut rejected = 0;
            for _ in 0..MAX_ATTEMPTS_PER_DRAW {
                let zeta = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
                let x = &center + &l * zeta;
                if feasible(x.as_slice()) {
                    return (Some(x.as_slice().to_vec()), rejected);
                }
                rejected += 1;
            }
            (None, rejected)
        })
        .collect();
    let rejected: usize = results.iter().map(|r| r.1).sum();
    if rejected * 2 > rejected + n_draws || results.iter().any(|r| r.0.is_none()) {
        return Err(Error::Numeric(format!(
            "{rejected} infeasible parameter draws for {n_draws} accepted; the normal \
             approximation is unusable"
        )));
    }
    if rejected > 0 {
        log::info!("{rejected} infeasible parameter draws rejected");
    }
    Ok(ParamDraws {
        draws: results.into_iter().filter_map(|r| r.0).collect(),
        rejected,
        repaired,
    })
}

/// One field of T-block maxima: `y_s = G_s⁻¹(exp(-1/(T·Z_s)))` with `Z` a simple Smith field.
/// Marginally `y_s` follows `G_s^T`.
pub fn sample_t_year_maxima<R: Rng + ?Sized>(
    simulator: &SmithSimulator,
    params: &[GevParams],
    period: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if params.len() != simulator.n_sites() {
        return Err(Error::Dimension(format!(
            "{} margins for {} sites",
            params.len(),
            simulator.n_sites()
        )));
    }
    if !(period >= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "period must be ≥ 1, got {period}"
        )));
    }
    let z = simulator.sample(rng);
    Ok(z.iter()
        .zip(params)
        .map(|(z, p)| p.from_frechet(period * z))
        .collect())
}

/// `N` independent T-block maxima fields, row `i` drawn from stream `i`.
pub fn t_year_maxima_draws(
    sites: &SiteCatalog,
    beta: &[f64],
    theta: &SmithDispersion,
    design: &MarginalDesign,
    period: f64,
    n_draws: usize,
    streams: &StreamFactory,
) -> Result<Vec<Vec<f64>>> {
    let params = design.site_params(sites, beta)?;
    let sim = SmithSimulator::new(sites, theta)?;
    let streams = streams.derive(tag::MAXIMA);
    (0..n_draws)
        .into_par_iter()
        .map(|i| sample_t_year_maxima(&sim, &params, period, &mut streams.stream(i as u64)))
        .collect()
}

/// Linear-interpolation empirical quantile of unsorted values.
pub fn empirical_quantile(values: &[f64], p: f64) -> f64 {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = p * (v.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(v.len() - 1);
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

/// Point estimate and 95% interval (2.5% and 97.5% empirical quantiles of the draws).
#[derive(Clone, Debug, PartialEq)]
pub struct ReturnLevelInterval {
    pub pair: (usize, usize),
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
    pub values: Vec<f64>,
}

impl ReturnLevelInterval {
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

/// Joint return level at `η̂` and its interval from parameter draws.
pub fn return_level_interval(
    sites: &SiteCatalog,
    design: &MarginalDesign,
    pair: (usize, usize),
    eta_hat: &[f64],
    draws: &ParamDraws,
    period: f64,
) -> Result<ReturnLevelInterval> {
    let p = design.n_coef();
    let level = |eta: &[f64]| {
        let theta = SmithDispersion::from_slice(&eta[p..])?;
        joint_return_level_for_pair(sites, pair, &eta[..p], &theta, design, period)
    };
    let estimate = level(eta_hat)?;
    let values = draws
        .draws
        .par_iter()
        .map(|eta| level(eta))
        .collect::<Result<Vec<_>>>()?;
    Ok(ReturnLevelInterval {
        pair,
        estimate,
        lower: empirical_quantile(&values, 0.025),
        upper: empirical_quantile(&values, 0.975),
        values,
    })
}
