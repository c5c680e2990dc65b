//! Step-1 point-process independence likelihood, step-2 pairwise likelihood of block maxima,
//! and per-block score vectors.
//!
//! Sums run over blocks in ascending order and, inside a block, over sites (step 1) or over
//! lexicographically ordered pairs (step 2), with compensated summation.

use nalgebra::DMatrix;

use crate::decluster::{runs_decluster, site_threshold, BlockMaxima};
use crate::error::{Error, Result};
use crate::gev::{GevParams, MarginalDesign, SiteCatalog, GUMBEL_EPS};
use crate::simulate::DailyPanel;
use crate::smith::{SmithDispersion, A_COMPLETE_DEPENDENCE};
use crate::special::{ln_norm_cdf, ln_norm_pdf, norm_cdf};

/// Relative step for finite-difference scores.
pub const SCORE_STEP: f64 = 1e-6;

#[inline]
pub(crate) fn fd_step(x: f64, rel: f64) -> f64 {
    rel * x.abs().max(1.0)
}

/// Neumaier compensated sum.
#[derive(Default, Clone, Copy)]
pub(crate) struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

pub(crate) fn kahan(xs: impl IntoIterator<Item = f64>) -> f64 {
    let mut k = KahanSum::default();
    for x in xs {
        k.add(x);
    }
    k.value()
}

/// Per-site thresholds for the point-process likelihood.
#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdSpec {
    pub u: Vec<f64>,
    pub quantile_level: f64,
}

impl ThresholdSpec {
    /// Empirical `quantile_level` quantile of every site's observed days.
    pub fn from_panel(panel: &DailyPanel, quantile_level: f64) -> Result<Self> {
        let u = (0..panel.n_sites())
            .map(|s| site_threshold(panel.site_series(s), quantile_level))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { u, quantile_level })
    }
}

/// Point-process log-likelihood contribution of one site in one block:
/// `-[1 + ξ(u-μ)/σ]^{-1/ξ} + Σ_{Y>u} [-ln σ - (1/ξ + 1) ln{1 + ξ(Y-μ)/σ}]`.
///
/// Missing days (NaN) are skipped. Returns `-∞` when the threshold or an exceedance lies outside
/// the support.
pub fn step1_block_site_ll(block_data: &[f64], p: &GevParams, u: f64) -> f64 {
    let exceed: Vec<f64> = block_data.iter().copied().filter(|&y| y > u).collect();
    pp_ll(&exceed, p, u)
}

#[inline]
fn pp_ll(exceedances: &[f64], p: &GevParams, u: f64) -> f64 {
    let ln_sigma = p.sigma.ln();
    if p.xi.abs() < GUMBEL_EPS {
        let mut ll = -(-(u - p.mu) / p.sigma).exp();
        for &y in exceedances {
            ll += -ln_sigma - (y - p.mu) / p.sigma;
        }
        return ll;
    }
    let su = p.xi * (u - p.mu) / p.sigma;
    if su <= -1.0 {
        return f64::NEG_INFINITY;
    }
    let mut ll = -(-su.ln_1p() / p.xi).exp();
    let power = 1.0 / p.xi + 1.0;
    for &y in exceedances {
        let sy = p.xi * (y - p.mu) / p.sigma;
        if sy <= -1.0 {
            return f64::NEG_INFINITY;
        }
        ll += -ln_sigma - power * sy.ln_1p();
    }
    ll
}

fn site_permutation(ids: &[String], sites: &SiteCatalog) -> Result<Vec<usize>> {
    ids.iter()
        .map(|id| {
            sites
                .index_of(id)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown site id '{id}'")))
        })
        .collect()
}

/// Step-1 data prepared for repeated likelihood evaluation.
#[derive(Clone, Debug)]
pub struct Step1Problem {
    sites: SiteCatalog,
    design: MarginalDesign,
    n_blocks: usize,
    /// Exceedances per `(t, s)`, index `t·S + s`.
    exceedances: Vec<Vec<f64>>,
    /// Whether site `s` has any observed day in block `t`.
    active: Vec<bool>,
    /// Thresholds in catalog order.
    u: Vec<f64>,
}

impl Step1Problem {
    /// With `decluster`, runs of consecutive exceedances within a block are replaced by their
    /// maximum; the other days of the run count as non-exceedances.
    pub fn new(
        panel: &DailyPanel,
        thresholds: &ThresholdSpec,
        design: &MarginalDesign,
        sites: &SiteCatalog,
        decluster: bool,
    ) -> Result<Self> {
        if thresholds.u.len() != panel.n_sites() {
            return Err(Error::Dimension(format!(
                "{} thresholds for {} panel sites",
                thresholds.u.len(),
                panel.n_sites()
            )));
        }
        if panel.n_sites() != sites.len() {
            return Err(Error::Dimension(format!(
                "panel has {} sites, catalog {}",
                panel.n_sites(),
                sites.len()
            )));
        }
        design.check_covariates(sites.n_covariates())?;
        if thresholds.u.iter().any(|u| !u.is_finite()) {
            return Err(Error::NonFinite("threshold"));
        }
        let perm = site_permutation(panel.site_ids(), sites)?;
        let (n, n_sites) = (panel.n_blocks(), sites.len());
        let mut exceedances = vec![Vec::new(); n * n_sites];
        let mut active = vec![false; n * n_sites];
        let mut u = vec![0.0; n_sites];
        for (ps, &cs) in perm.iter().enumerate() {
            let us = thresholds.u[ps];
            u[cs] = us;
            for t in 0..n {
                let block = panel.block(ps, t);
                active[t * n_sites + cs] = block.iter().any(|v| !v.is_nan());
                exceedances[t * n_sites + cs] = if decluster {
                    runs_decluster(block, us).iter().map(|c| c.max).collect()
                } else {
                    block.iter().copied().filter(|&y| y > us).collect()
                };
            }
        }
        Ok(Self {
            sites: sites.clone(),
            design: design.clone(),
            n_blocks: n,
            exceedances,
            active,
            u,
        })
    }

    pub fn n_blocks(&self) -> usize {
        self.n_blocks
    }

    pub fn n_sites(&self) -> usize {
        self.sites.len()
    }

    pub fn n_coef(&self) -> usize {
        self.design.n_coef()
    }

    pub fn design(&self) -> &MarginalDesign {
        &self.design
    }

    pub fn sites(&self) -> &SiteCatalog {
        &self.sites
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.u
    }

    pub fn n_exceedances(&self) -> usize {
        self.exceedances.iter().map(Vec::len).sum()
    }

    /// Per `(t, s)` contributions `ℓ_{1t,s}` into `out` (index `t·S + s`). Returns `false` when
    /// β gives an invalid margin or a support violation.
    pub fn terms_into(&self, beta: &[f64], out: &mut [f64]) -> bool {
        let Ok(params) = self.design.site_params(&self.sites, beta) else {
            return false;
        };
        let n_sites = self.sites.len();
        for t in 0..self.n_blocks {
            for s in 0..n_sites {
                let i = t * n_sites + s;
                out[i] = if self.active[i] {
                    let v = pp_ll(&self.exceedances[i], &params[s], self.u[s]);
                    if !v.is_finite() {
                        return false;
                    }
                    v
                } else {
                    0.0
                };
            }
        }
        true
    }

    pub fn terms(&self, beta: &[f64]) -> Option<Vec<f64>> {
        let mut out = vec![0.0; self.n_blocks * self.sites.len()];
        self.terms_into(beta, &mut out).then_some(out)
    }

    /// `ℓ_{1t}` for every block.
    pub fn block_ll(&self, beta: &[f64]) -> Option<Vec<f64>> {
        let n_sites = self.sites.len();
        self.terms(beta).map(|v| {
            v.chunks(n_sites)
                .map(|c| kahan(c.iter().copied()))
                .collect()
        })
    }

    /// Negative log-likelihood; `+∞` when infeasible.
    pub fn nll(&self, beta: &[f64]) -> f64 {
        match self.terms(beta) {
            Some(v) => -kahan(v),
            None => f64::INFINITY,
        }
    }
}

/// Convenience wrapper building a [`Step1Problem`] for a single evaluation.
pub fn step1_nll(
    beta: &[f64],
    panel: &DailyPanel,
    thresholds: &ThresholdSpec,
    design: &MarginalDesign,
    sites: &SiteCatalog,
) -> Result<f64> {
    if beta.len() != design.n_coef() {
        return Err(Error::Dimension(format!(
            "coefficient vector has length {}, design needs {}",
            beta.len(),
            design.n_coef()
        )));
    }
    Ok(Step1Problem::new(panel, thresholds, design, sites, false)?.nll(beta))
}

/// A pair of sites `i < j` (catalog indices) and their coordinate difference.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SitePair {
    pub i: usize,
    pub j: usize,
    pub dx: [f64; 2],
}

/// Block maxima on the log unit-Fréchet scale, block-major (`t·S + s`); NaN marks missing.
#[derive(Clone, Debug)]
pub struct FrechetMargins {
    ln_z: Vec<f64>,
    ln_jac: Vec<f64>,
}

/// Step-2 data prepared for repeated evaluation.
#[derive(Clone, Debug)]
pub struct PairwiseProblem {
    sites: SiteCatalog,
    design: MarginalDesign,
    n_blocks: usize,
    /// Maxima block-major, catalog site order.
    maxima: Vec<f64>,
    pairs: Vec<SitePair>,
}

struct PairGeometry {
    a: f64,
    inv_a: f64,
    ln_a: f64,
}

impl PairwiseProblem {
    pub fn new(maxima: &BlockMaxima, sites: &SiteCatalog, design: &MarginalDesign) -> Result<Self> {
        if maxima.n_sites() != sites.len() {
            return Err(Error::Dimension(format!(
                "maxima cover {} sites, catalog {}",
                maxima.n_sites(),
                sites.len()
            )));
        }
        design.check_covariates(sites.n_covariates())?;
        let perm = site_permutation(maxima.site_ids(), sites)?;
        let (n, n_sites) = (maxima.n_blocks(), sites.len());
        let mut values = vec![f64::NAN; n * n_sites];
        for (ms, &cs) in perm.iter().enumerate() {
            for t in 0..n {
                values[t * n_sites + cs] = maxima.get(ms, t).unwrap_or(f64::NAN);
            }
        }
        let coords: Vec<[f64; 2]> = sites.sites().iter().map(|s| s.coord).collect();
        let mut pairs = Vec::with_capacity(n_sites * n_sites.saturating_sub(1) / 2);
        for i in 0..n_sites {
            for j in i + 1..n_sites {
                pairs.push(SitePair {
                    i,
                    j,
                    dx: [coords[i][0] - coords[j][0], coords[i][1] - coords[j][1]],
                });
            }
        }
        Ok(Self {
            sites: sites.clone(),
            design: design.clone(),
            n_blocks: n,
            maxima: values,
            pairs,
        })
    }

    pub fn n_blocks(&self) -> usize {
        self.n_blocks
    }

    pub fn n_sites(&self) -> usize {
        self.sites.len()
    }

    pub fn n_pairs(&self) -> usize {
        self.pairs.len()
    }

    pub fn n_coef(&self) -> usize {
        self.design.n_coef()
    }

    pub fn pairs(&self) -> &[SitePair] {
        &self.pairs
    }

    pub fn design(&self) -> &MarginalDesign {
        &self.design
    }

    pub fn sites(&self) -> &SiteCatalog {
        &self.sites
    }

    /// Observed maximum of catalog site `s` in block `t`.
    pub fn maximum(&self, s: usize, t: usize) -> Option<f64> {
        let v = self.maxima[t * self.sites.len() + s];
        (!v.is_nan()).then_some(v)
    }

    /// Transforms every observed maximum to the unit Fréchet scale under β. Fails with the
    /// offending site and block when a maximum lies outside its GEV support.
    pub fn margins(&self, beta: &[f64]) -> Result<FrechetMargins> {
        let params = self.design.site_params(&self.sites, beta)?;
        let n_sites = self.sites.len();
        let mut ln_z = vec![f64::NAN; self.maxima.len()];
        let mut ln_jac = vec![f64::NAN; self.maxima.len()];
        for t in 0..self.n_blocks {
            for (s, p) in params.iter().enumerate() {
                let i = t * n_sites + s;
                let m = self.maxima[i];
                if m.is_nan() {
                    continue;
                }
                let lz = p.ln_to_frechet(m).map_err(|_| Error::Support {
                    value: m,
                    site: Some(self.sites.sites()[s].id.clone()),
                    block: Some(t),
                })?;
                ln_z[i] = lz;
                ln_jac[i] = p.ln_jacobian(lz);
            }
        }
        Ok(FrechetMargins { ln_z, ln_jac })
    }

    fn geometry(&self, theta: &SmithDispersion) -> Option<Vec<PairGeometry>> {
        if !theta.is_spd() {
            return None;
        }
        self.pairs
            .iter()
            .map(|p| {
                let a = theta.quad_form(p.dx).max(0.0).sqrt();
                (a >= A_COMPLETE_DEPENDENCE).then(|| PairGeometry {
                    a,
                    inv_a: 1.0 / a,
                    ln_a: a.ln(),
                })
            })
            .collect()
    }

    /// Pair log densities into `out` (index `t·P + p`, zero where either maximum is missing).
    /// Returns `false` for a non-SPD θ or a degenerate pair.
    pub fn pair_terms_into(
        &self,
        theta: &SmithDispersion,
        margins: &FrechetMargins,
        out: &mut [f64],
    ) -> bool {
        let Some(geo) = self.geometry(theta) else {
            return false;
        };
        let n_sites = self.sites.len();
        let n_pairs = self.pairs.len();
        for t in 0..self.n_blocks {
            let lz = &margins.ln_z[t * n_sites..(t + 1) * n_sites];
            let lj = &margins.ln_jac[t * n_sites..(t + 1) * n_sites];
            let row = &mut out[t * n_pairs..(t + 1) * n_pairs];
            for ((pair, g), o) in self.pairs.iter().zip(&geo).zip(row.iter_mut()) {
                let (l1, l2) = (lz[pair.i], lz[pair.j]);
                *o = if l1.is_nan() || l2.is_nan() {
                    0.0
                } else {
                    ln_density_kernel(l1, l2, g) + lj[pair.i] + lj[pair.j]
                };
            }
        }
        true
    }

    pub fn pair_terms(
        &self,
        theta: &SmithDispersion,
        margins: &FrechetMargins,
    ) -> Option<Vec<f64>> {
        let mut out = vec![0.0; self.n_blocks * self.pairs.len()];
        self.pair_terms_into(theta, margins, &mut out)
            .then_some(out)
    }

    /// `ℓ_{2t}` for every block.
    pub fn block_ll(&self, theta: &SmithDispersion, margins: &FrechetMargins) -> Option<Vec<f64>> {
        let n_pairs = self.pairs.len().max(1);
        self.pair_terms(theta, margins).map(|v| {
            v.chunks(n_pairs)
                .map(|c| kahan(c.iter().copied()))
                .collect()
        })
    }

    /// Negative pairwise log-likelihood with fixed margins; `+∞` when infeasible.
    pub fn nll_with_margins(&self, theta: &SmithDispersion, margins: &FrechetMargins) -> f64 {
        match self.pair_terms(theta, margins) {
            Some(v) => {
                let total = -kahan(v);
                if total.is_nan() {
                    f64::INFINITY
                } else {
                    total
                }
            }
            None => f64::INFINITY,
        }
    }

    /// Negative log-likelihood of the maxima treated as independent GEV draws; `+∞` when
    /// infeasible.
    pub fn independence_nll(&self, beta: &[f64]) -> f64 {
        let Ok(m) = self.margins(beta) else {
            return f64::INFINITY;
        };
        let mut k = KahanSum::default();
        for (lz, lj) in m.ln_z.iter().zip(&m.ln_jac) {
            if !lz.is_nan() {
                k.add(-(-lz).exp() - 2.0 * lz + lj);
            }
        }
        -k.value()
    }

    /// Negative pairwise log-likelihood at `(θ, β)`; `+∞` when infeasible.
    pub fn nll(&self, theta: &SmithDispersion, beta: &[f64]) -> f64 {
        match self.margins(beta) {
            Ok(m) => self.nll_with_margins(theta, &m),
            Err(_) => f64::INFINITY,
        }
    }
}

#[inline]
fn ln_density_kernel(lz1: f64, lz2: f64, g: &PairGeometry) -> f64 {
    let r = lz2 - lz1;
    let w = 0.5 * g.a + r * g.inv_a;
    let v = g.a - w;
    let (pw, pv) = (norm_cdf(w), norm_cdf(v));
    let big_v = pw * (-lz1).exp() + pv * (-lz2).exp();
    let ln_pw = if pw > 1e-300 { pw.ln() } else { ln_norm_cdf(w) };
    let ln_pv = if pv > 1e-300 { pv.ln() } else { ln_norm_cdf(v) };
    let t1 = ln_pw + ln_pv - lz2;
    let t2 = ln_norm_pdf(w) - g.ln_a;
    let (hi, lo) = if t1 > t2 { (t1, t2) } else { (t2, t1) };
    -big_v - 2.0 * lz1 - lz2 + hi + (lo - hi).exp().ln_1p()
}

/// Convenience wrapper: `-Σ_t Σ_{i<j} ln f_ij` at `(θ, β)`; `+∞` on any infeasibility.
pub fn step2_nll(
    theta: &SmithDispersion,
    beta: &[f64],
    maxima: &BlockMaxima,
    sites: &SiteCatalog,
    design: &MarginalDesign,
) -> Result<f64> {
    if beta.len() != design.n_coef() {
        return Err(Error::Dimension(format!(
            "coefficient vector has length {}, design needs {}",
            beta.len(),
            design.n_coef()
        )));
    }
    Ok(PairwiseProblem::new(maxima, sites, design)?.nll(theta, beta))
}

/// Per-block scores at one parameter point, plus the per-site and per-pair components.
#[derive(Clone, Debug)]
pub struct BlockScores {
    /// `ψ_{1t} = ∂ℓ_{1t}/∂β`, n × dim β.
    pub psi1: DMatrix<f64>,
    /// `ψ_{2t} = ∂ℓ_{2t}/∂θ`, n × 3.
    pub psi2: DMatrix<f64>,
    /// `φ_{2t} = ∂ℓ_{2t}/∂β`, n × dim β.
    pub phi2: DMatrix<f64>,
    /// `ψ_{1t,s}`, rows `t·S + s`.
    pub psi1_site: DMatrix<f64>,
    /// `ψ_{2t,(i,j)}`, rows `t·P + p`.
    pub psi2_pair: DMatrix<f64>,
    /// `φ_{2t,(i,j)}`, rows `t·P + p`.
    pub phi2_pair: DMatrix<f64>,
    pub n_sites: usize,
    pub n_pairs: usize,
}

impl BlockScores {
    pub fn n_blocks(&self) -> usize {
        self.psi1.nrows()
    }

    /// Two-step score rows `ψ_t = (ψ_{1t}, ψ_{2t})`, n × (dim β + 3).
    pub fn two_step(&self) -> DMatrix<f64> {
        hcat(&self.psi1, &self.psi2)
    }

    /// One-step pairwise score rows `(φ_{2t}, ψ_{2t})`, n × (dim β + 3).
    pub fn pairwise(&self) -> DMatrix<f64> {
        hcat(&self.phi2, &self.psi2)
    }
}

pub(crate) fn hcat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    out
}

fn infeasible(what: &str) -> Error {
    Error::Numeric(format!(
        "finite-difference step for {what} left the feasible region"
    ))
}

/// Sums rows in groups of `group` consecutive rows.
fn group_rows(m: &DMatrix<f64>, group: usize) -> DMatrix<f64> {
    let n = m.nrows().checked_div(group).unwrap_or(0);
    DMatrix::from_fn(n, m.ncols(), |t, j| {
        kahan((0..group).map(|r| m[(t * group + r, j)]))
    })
}

/// Central-difference derivatives of a vector-valued function, one column per coordinate. A
/// coordinate whose forward or backward step is infeasible falls back to a one-sided difference.
fn fd_jacobian(
    x: &[f64],
    len: usize,
    mut f: impl FnMut(&[f64]) -> Option<Vec<f64>>,
    what: &str,
) -> Result<DMatrix<f64>> {
    let mut out = DMatrix::zeros(len, x.len());
    let mut xp = x.to_vec();
    let mut center: Option<Vec<f64>> = None;
    for j in 0..x.len() {
        let h = fd_step(x[j], SCORE_STEP);
        xp[j] = x[j] + h;
        let plus = f(&xp);
        xp[j] = x[j] - h;
        let minus = f(&xp);
        xp[j] = x[j];
        let (a, b, span) = match (plus, minus) {
            (Some(p), Some(m)) => (p, m, 2.0 * h),
            (p, m) => {
                if center.is_none() {
                    center = Some(f(x).ok_or_else(|| infeasible(what))?);
                }
                let c = center.clone().expect("set above");
                match (p, m) {
                    (Some(p), None) => (p, c, h),
                    (None, Some(m)) => (c, m, h),
                    _ => return Err(infeasible(what)),
                }
            }
        };
        for (r, (u, v)) in a.iter().zip(&b).enumerate() {
            out[(r, j)] = (u - v) / span;
        }
    }
    Ok(out)
}

/// Per-site step-1 scores `ψ_{1t,s}` (rows `t·S + s`).
pub fn step1_site_scores(step1: &Step1Problem, beta: &[f64]) -> Result<DMatrix<f64>> {
    let len = step1.n_blocks() * step1.n_sites();
    fd_jacobian(beta, len, |b| step1.terms(b), "beta in step 1")
}

/// Per-pair scores with respect to θ at fixed margins (rows `t·P + p`).
pub fn pair_theta_scores(
    step2: &PairwiseProblem,
    theta: &SmithDispersion,
    margins: &FrechetMargins,
) -> Result<DMatrix<f64>> {
    let len = step2.n_blocks() * step2.n_pairs();
    fd_jacobian(
        &theta.as_array(),
        len,
        |th| {
            let th = SmithDispersion::from_slice(th).ok()?;
            step2.pair_terms(&th, margins)
        },
        "theta",
    )
}

/// Per-pair scores with respect to β at fixed θ (rows `t·P + p`).
pub fn pair_beta_scores(
    step2: &PairwiseProblem,
    theta: &SmithDispersion,
    beta: &[f64],
) -> Result<DMatrix<f64>> {
    let len = step2.n_blocks() * step2.n_pairs();
    fd_jacobian(
        beta,
        len,
        |b| step2.pair_terms(theta, &step2.margins(b).ok()?),
        "beta in the pairwise likelihood",
    )
}

/// Per-block scores `ψ_{1t}`, `ψ_{2t}`, `φ_{2t}` at `(β, θ)` by central differences.
pub fn block_scores(
    beta: &[f64],
    theta: &SmithDispersion,
    step1: &Step1Problem,
    step2: &PairwiseProblem,
) -> Result<BlockScores> {
    if step1.n_blocks() != step2.n_blocks() {
        return Err(Error::Dimension(format!(
            "step 1 has {} blocks, step 2 has {}",
            step1.n_blocks(),
            step2.n_blocks()
        )));
    }
    if step1.nll(beta).is_infinite() {
        return Err(Error::Infeasible(
            "beta is infeasible for the daily data".into(),
        ));
    }
    let margins = step2.margins(beta)?;
    if step2.nll_with_margins(theta, &margins).is_infinite() {
        return Err(Error::Infeasible(
            "(beta, theta) is infeasible for the maxima".into(),
        ));
    }
    let psi1_site = step1_site_scores(step1, beta)?;
    let psi2_pair = pair_theta_scores(step2, theta, &margins)?;
    let phi2_pair = pair_beta_scores(step2, theta, beta)?;
    let (n_sites, n_pairs) = (step1.n_sites(), step2.n_pairs());
    Ok(BlockScores {
        psi1: group_rows(&psi1_site, n_sites),
        psi2: group_rows(&psi2_pair, n_pairs),
        phi2: group_rows(&phi2_pair, n_pairs),
        psi1_site,
        psi2_pair,
        phi2_pair,
        n_sites,
        n_pairs,
    })
}

/// Step-1 block scores only, n × dim β.
pub fn step1_block_scores(step1: &Step1Problem, beta: &[f64]) -> Result<DMatrix<f64>> {
    Ok(group_rows(
        &step1_site_scores(step1, beta)?,
        step1.n_sites(),
    ))
}

/// `ψ_{2t}` only, n × 3.
pub fn step2_theta_block_scores(
    step2: &PairwiseProblem,
    theta: &SmithDispersion,
    beta: &[f64],
) -> Result<DMatrix<f64>> {
    let margins = step2.margins(beta)?;
    Ok(group_rows(
        &pair_theta_scores(step2, theta, &margins)?,
        step2.n_pairs(),
    ))
}

/// `φ_{2t}` only, n × dim β.
pub fn step2_beta_block_scores(
    step2: &PairwiseProblem,
    theta: &SmithDispersion,
    beta: &[f64],
) -> Result<DMatrix<f64>> {
    Ok(group_rows(
        &pair_beta_scores(step2, theta, beta)?,
        step2.n_pairs(),
    ))
}
