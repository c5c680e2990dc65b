//! Exact simulation of the simple Smith process and of daily panels whose block maxima follow
//! the spatial GEV / Smith model.
//!
//! Storms form a Poisson process with intensity `dξ/ξ² × dc` on `(0, ∞) × B`. Ordering by
//! intensity, `ξ_i = |B| / Γ_i` with `Γ_i` the arrival times of a unit-rate Poisson process, and the
//! field is `Z(x) = max_i ξ_i g(x - c_i)` with `g` the N(0, Σ) density. Once `|B| g_max / Γ_i`
//! drops below the smallest value of the running field no later storm can change any site, so
//! the loop stops with the exact maximum over storms centred in `B`.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decluster::{BlockMaxima, Provenance};
use crate::error::{Error, Result};
use crate::gev::{GevParams, MarginalDesign, SiteCatalog};
use crate::rng::{tag, StreamFactory};
use crate::smith::SmithDispersion;

/// Padding of the storm window around the sites, in standard deviations of the storm profile.
pub const WINDOW_PAD_SD: f64 = 6.0;

/// Pre-processed sampler for one site set and dispersion.
#[derive(Clone, Debug)]
pub struct SmithSimulator {
    coords: Vec<[f64; 2]>,
    sigma: SmithDispersion,
    lo: [f64; 2],
    span: [f64; 2],
    area: f64,
    g_max: f64,
}

impl SmithSimulator {
    pub fn new(sites: &SiteCatalog, sigma: &SmithDispersion) -> Result<Self> {
        if sites.is_empty() {
            return Err(Error::InvalidArgument("no sites to simulate".into()));
        }
        if !sigma.is_spd() {
            return Err(Error::NotPositiveDefinite);
        }
        let pad = WINDOW_PAD_SD * sigma.max_eigenvalue().sqrt();
        let (lo, hi) = sites.bounding_box();
        let lo = [lo[0] - pad, lo[1] - pad];
        let span = [hi[0] + pad - lo[0], hi[1] + pad - lo[1]];
        Ok(Self {
            coords: sites.sites().iter().map(|s| s.coord).collect(),
            sigma: *sigma,
            lo,
            span,
            area: span[0] * span[1],
            g_max: 1.0 / (2.0 * std::f64::consts::PI * sigma.det().sqrt()),
        })
    }

    pub fn n_sites(&self) -> usize {
        self.coords.len()
    }

    /// Draws one field into `out` (unit Fréchet margins).
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.coords.len());
        out.fill(0.0);
        let mut floor = 0.0f64;
        let mut gamma = 0.0f64;
        let scale = self.area * self.g_max;
        loop {
            let e: f64 = Exp1.sample(rng);
            gamma += e;
            let top = scale / gamma;
            if top < floor {
                break;
            }
            let c = [
                self.lo[0] + self.span[0] * rng.random::<f64>(),
                self.lo[1] + self.span[1] * rng.random::<f64>(),
            ];
            let mut touched = false;
            for (z, x) in out.iter_mut().zip(&self.coords) {
                if top <= *z {
                    continue;
                }
                let v = top * (-0.5 * self.sigma.quad_form([x[0] - c[0], x[1] - c[1]])).exp();
                if v > *z {
                    *z = v;
                    touched = true;
                }
            }
            if touched {
                floor = out.iter().copied().fold(f64::INFINITY, f64::min);
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut out = vec![0.0; self.coords.len()];
        self.sample_into(rng, &mut out);
        out
    }
}

/// One realization of the simple Smith process at the catalog's coordinates.
pub fn simulate_smith_field<R: Rng + ?Sized>(
    sites: &SiteCatalog,
    sigma: &SmithDispersion,
    rng: &mut R,
) -> Result<Vec<f64>> {
    Ok(SmithSimulator::new(sites, sigma)?.sample(rng))
}

/// Maps a unit Fréchet value onto a GEV margin, `μ + σ(v^ξ - 1)/ξ`.
pub fn apply_gev_margins(frechet_value: f64, p: &GevParams) -> f64 {
    p.from_frechet(frechet_value)
}

/// Everything needed to generate a synthetic dataset.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Scenario {
    pub sites: SiteCatalog,
    pub design: MarginalDesign,
    pub beta: Vec<f64>,
    pub sigma: SmithDispersion,
    pub n_blocks: usize,
    pub block_size: usize,
    pub seed: u64,
}

impl Scenario {
    pub fn validate(&self) -> Result<Vec<GevParams>> {
        if self.n_blocks == 0 || self.block_size == 0 {
            return Err(Error::InvalidArgument(
                "scenario needs at least one block of at least one day".into(),
            ));
        }
        self.design.check_covariates(self.sites.n_covariates())?;
        if !self.sigma.is_spd() {
            return Err(Error::NotPositiveDefinite);
        }
        self.design.site_params(&self.sites, &self.beta)
    }
}

/// Daily records `Y[s][t][k]`; missing days are stored as NaN.
#[derive(Clone, Debug, PartialEq)]
pub struct DailyPanel {
    site_ids: Vec<String>,
    block_labels: Vec<i64>,
    block_size: usize,
    values: Vec<f64>,
}

impl DailyPanel {
    /// Panel with every day missing.
    pub fn empty(site_ids: Vec<String>, block_labels: Vec<i64>, block_size: usize) -> Self {
        let len = site_ids.len() * block_labels.len() * block_size;
        Self {
            site_ids,
            block_labels,
            block_size,
            values: vec![f64::NAN; len],
        }
    }

    pub fn n_sites(&self) -> usize {
        self.site_ids.len()
    }

    pub fn n_blocks(&self) -> usize {
        self.block_labels.len()
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn site_ids(&self) -> &[String] {
        &self.site_ids
    }

    pub fn block_labels(&self) -> &[i64] {
        &self.block_labels
    }

    #[inline]
    fn offset(&self, s: usize, t: usize) -> usize {
        (s * self.block_labels.len() + t) * self.block_size
    }

    /// Day values of site `s` in block `t` (NaN where missing).
    pub fn block(&self, s: usize, t: usize) -> &[f64] {
        let o = self.offset(s, t);
        &self.values[o..o + self.block_size]
    }

    pub fn block_mut(&mut self, s: usize, t: usize) -> &mut [f64] {
        let o = self.offset(s, t);
        &mut self.values[o..o + self.block_size]
    }

    /// Whole series of site `s`, blocks in order.
    pub fn site_series(&self, s: usize) -> &[f64] {
        let o = self.offset(s, 0);
        &self.values[o..o + self.block_labels.len() * self.block_size]
    }

    pub fn get(&self, s: usize, t: usize, k: usize) -> Option<f64> {
        let v = self.values[self.offset(s, t) + k];
        (!v.is_nan()).then_some(v)
    }

    pub fn set(&mut self, s: usize, t: usize, k: usize, value: Option<f64>) {
        let o = self.offset(s, t) + k;
        self.values[o] = value.unwrap_or(f64::NAN);
    }
}

/// Simulates `n·m` independent days: each day one simple Smith field divided by `m`, mapped to the
/// site GEV margins. Blockwise maxima then follow the spatial model exactly by max-stability.
///
/// Day `t·m + k` draws from stream `t·m + k` of `streams.derive(DAYS)`, so the panel does not
/// depend on the number of worker threads.
pub fn simulate_daily_panel(
    scenario: &Scenario,
    streams: &StreamFactory,
) -> Result<(DailyPanel, BlockMaxima)> {
    let params = scenario.validate()?;
    let sim = SmithSimulator::new(&scenario.sites, &scenario.sigma)?;
    let (n, m, n_sites) = (scenario.n_blocks, scenario.block_size, scenario.sites.len());
    let days = streams.derive(tag::DAYS);
    let inv_m = 1.0 / m as f64;

    // Block-major scratch [t][k][s], reshaped afterwards.
    let blocks: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|t| {
            let mut buf = vec![0.0; m * n_sites];
            for k in 0..m {
                let mut rng = days.stream((t * m + k) as u64);
                let day = &mut buf[k * n_sites..(k + 1) * n_sites];
                sim.sample_into(&mut rng, day);
                for (y, p) in day.iter_mut().zip(&params) {
                    *y = p.from_frechet(*y * inv_m);
                }
            }
            buf
        })
        .collect();

    let mut panel = DailyPanel::empty(scenario.sites.ids(), (1..=n as i64).collect(), m);
    let mut maxima = BlockMaxima::empty(scenario.sites.ids(), (1..=n as i64).collect());
    maxima.provenance = Provenance::FromSimulation;
    for (t, buf) in blocks.iter().enumerate() {
        for s in 0..n_sites {
            let dst = panel.block_mut(s, t);
            let mut mx = f64::NEG_INFINITY;
            for k in 0..m {
                let y = buf[k * n_sites + s];
                dst[k] = y;
                mx = mx.max(y);
            }
            maxima.set(s, t, Some(mx));
        }
    }
    Ok((panel, maxima))
}
