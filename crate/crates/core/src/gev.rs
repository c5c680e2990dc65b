//! Univariate GEV margins, covariate links and the GEV / unit Fréchet transform.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this |ξ| every formula switches to its Gumbel limit.
pub const GUMBEL_EPS: f64 = 1e-8;

/// Location, scale and shape of a GEV distribution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GevParams {
    pub mu: f64,
    pub sigma: f64,
    pub xi: f64,
}

impl GevParams {
    pub fn new(mu: f64, sigma: f64, xi: f64) -> Result<Self> {
        if !mu.is_finite() {
            return Err(Error::NonFinite("mu"));
        }
        if !xi.is_finite() {
            return Err(Error::NonFinite("xi"));
        }
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "GEV scale must be positive, got {sigma}"
            )));
        }
        Ok(Self { mu, sigma, xi })
    }

    /// Unit Fréchet, GEV(1, 1, 1).
    pub fn unit_frechet() -> Self {
        Self {
            mu: 1.0,
            sigma: 1.0,
            xi: 1.0,
        }
    }

    #[inline]
    fn is_gumbel(&self) -> bool {
        self.xi.abs() < GUMBEL_EPS
    }

    /// `ξ(y - μ)/σ`; the support is where this exceeds -1.
    #[inline]
    fn scaled(&self, y: f64) -> f64 {
        self.xi * (y - self.mu) / self.sigma
    }

    /// Whether `y` lies strictly inside the support.
    #[inline]
    pub fn in_support(&self, y: f64) -> bool {
        y.is_finite() && (self.is_gumbel() || self.scaled(y) > -1.0)
    }

    /// Distribution function. Points below (above) the support map to 0 (1).
    pub fn cdf(&self, y: f64) -> Result<f64> {
        if !y.is_finite() {
            return Err(Error::NonFinite("y"));
        }
        if self.is_gumbel() {
            return Ok((-(-(y - self.mu) / self.sigma).exp()).exp());
        }
        let s = self.scaled(y);
        if s <= -1.0 {
            return Ok(if self.xi > 0.0 { 0.0 } else { 1.0 });
        }
        Ok((-(-s.ln_1p() / self.xi).exp()).exp())
    }

    /// Inverse of [`GevParams::cdf`] on (0, 1).
    pub fn quantile(&self, prob: f64) -> Result<f64> {
        if !(prob > 0.0 && prob < 1.0) {
            return Err(Error::Probability(prob));
        }
        let ln_y = (-prob.ln()).ln();
        if self.is_gumbel() {
            return Ok(self.mu - self.sigma * ln_y);
        }
        Ok(self.mu + self.sigma * (-self.xi * ln_y).exp_m1() / self.xi)
    }

    /// `ln z` where `z = F⁻¹(G(m))` with F unit Fréchet.
    pub fn ln_to_frechet(&self, m: f64) -> Result<f64> {
        if !m.is_finite() {
            return Err(Error::NonFinite("m"));
        }
        if self.is_gumbel() {
            return Ok((m - self.mu) / self.sigma);
        }
        let s = self.scaled(m);
        if s <= -1.0 {
            return Err(Error::Support {
                value: m,
                site: None,
                block: None,
            });
        }
        Ok(s.ln_1p() / self.xi)
    }

    /// Maps a GEV value onto the unit Fréchet scale: `[1 + ξ(m-μ)/σ]^{1/ξ}`.
    pub fn to_frechet(&self, m: f64) -> Result<f64> {
        self.ln_to_frechet(m).map(f64::exp)
    }

    /// Inverse of [`GevParams::to_frechet`]: `μ + σ(v^ξ - 1)/ξ`.
    pub fn from_frechet(&self, v: f64) -> f64 {
        let ln_v = v.ln();
        if self.is_gumbel() {
            self.mu + self.sigma * ln_v
        } else {
            self.mu + self.sigma * (self.xi * ln_v).exp_m1() / self.xi
        }
    }

    /// `ln |dz/dm| = (1 - ξ) ln z - ln σ`, given `ln z`.
    #[inline]
    pub fn ln_jacobian(&self, ln_z: f64) -> f64 {
        (1.0 - self.xi) * ln_z - self.sigma.ln()
    }

    /// The GEV whose CDF is `self.cdf(y)^k` (max-stability of the margin).
    pub fn power(&self, k: f64) -> GevParams {
        if self.is_gumbel() {
            return GevParams {
                mu: self.mu + self.sigma * k.ln(),
                sigma: self.sigma,
                xi: self.xi,
            };
        }
        let kx = k.powf(self.xi);
        GevParams {
            mu: self.mu + self.sigma * (self.xi * k.ln()).exp_m1() / self.xi,
            sigma: self.sigma * kx,
            xi: self.xi,
        }
    }
}

/// Link function between a GEV parameter and its linear predictor.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    #[default]
    Identity,
}

impl Link {
    /// Parameter value for a linear predictor.
    #[inline]
    pub fn inverse(self, eta: f64) -> f64 {
        match self {
            Link::Identity => eta,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "identity" => Ok(Link::Identity),
            other => Err(Error::InvalidArgument(format!(
                "unsupported link '{other}'"
            ))),
        }
    }
}

/// A monitoring site: identifier, planar coordinates and covariate vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Site {
    pub id: String,
    pub coord: [f64; 2],
    pub covariates: Vec<f64>,
}

/// Validated set of sites sharing one covariate layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiteCatalog {
    sites: Vec<Site>,
}

impl SiteCatalog {
    pub fn new(sites: Vec<Site>) -> Result<Self> {
        if sites.is_empty() {
            return Err(Error::InvalidArgument("site catalog is empty".into()));
        }
        let k = sites[0].covariates.len();
        let mut seen = std::collections::HashSet::new();
        for s in &sites {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate site id '{}'",
                    s.id
                )));
            }
            if s.covariates.len() != k {
                return Err(Error::Dimension(format!(
                    "site '{}' has {} covariates, expected {k}",
                    s.id,
                    s.covariates.len()
                )));
            }
            if !(s.coord[0].is_finite() && s.coord[1].is_finite()) {
                return Err(Error::NonFinite("site coordinate"));
            }
            if s.covariates.iter().any(|c| !c.is_finite()) {
                return Err(Error::NonFinite("site covariate"));
            }
        }
        Ok(Self { sites })
    }

    /// `k × k` square grid over `[lo, hi]²`; covariates are the two coordinates.
    pub fn grid(k: usize, lo: f64, hi: f64) -> Self {
        assert!(k >= 1);
        let step = if k > 1 {
            (hi - lo) / (k - 1) as f64
        } else {
            0.0
        };
        let mut sites = Vec::with_capacity(k * k);
        for i in 0..k {
            for j in 0..k {
                let x = [lo + step * j as f64, lo + step * i as f64];
                sites.push(Site {
                    id: format!("s{:03}", i * k + j + 1),
                    coord: x,
                    covariates: x.to_vec(),
                });
            }
        }
        Self { sites }
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn n_covariates(&self) -> usize {
        self.sites[0].covariates.len()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.sites.iter().position(|s| s.id == id)
    }

    pub fn ids(&self) -> Vec<String> {
        self.sites.iter().map(|s| s.id.clone()).collect()
    }

    /// Mean distance from each site to its nearest neighbour (0 for a single site).
    pub fn mean_nearest_neighbor_distance(&self) -> f64 {
        if self.sites.len() < 2 {
            return 0.0;
        }
        let total: f64 = self
            .sites
            .iter()
            .enumerate()
            .map(|(i, a)| {
                self.sites
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .map(|(_, b)| (a.coord[0] - b.coord[0]).hypot(a.coord[1] - b.coord[1]))
                    .fold(f64::INFINITY, f64::min)
            })
            .sum();
        total / self.sites.len() as f64
    }

    /// Bounding box `([min x1, min x2], [max x1, max x2])`.
    pub fn bounding_box(&self) -> ([f64; 2], [f64; 2]) {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for s in &self.sites {
            for d in 0..2 {
                lo[d] = lo[d].min(s.coord[d]);
                hi[d] = hi[d].max(s.coord[d]);
            }
        }
        (lo, hi)
    }

    /// Same catalog with sites reordered by `perm` (new position i holds old site `perm[i]`).
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            sites: perm.iter().map(|&i| self.sites[i].clone()).collect(),
        }
    }
}

/// Which covariates enter each GEV parameter. Every parameter carries an intercept; the
/// coefficient vector is laid out as `(β_μ, β_σ, β_ξ)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarginalDesign {
    pub mu_covariates: Vec<usize>,
    pub sigma_covariates: Vec<usize>,
    pub xi_covariates: Vec<usize>,
    #[serde(default)]
    pub link_mu: Link,
    #[serde(default)]
    pub link_sigma: Link,
    #[serde(default)]
    pub link_xi: Link,
}

impl MarginalDesign {
    pub fn new(mu: Vec<usize>, sigma: Vec<usize>, xi: Vec<usize>) -> Self {
        Self {
            mu_covariates: mu,
            sigma_covariates: sigma,
            xi_covariates: xi,
            link_mu: Link::Identity,
            link_sigma: Link::Identity,
            link_xi: Link::Identity,
        }
    }

    /// Location linear in both coordinates, constant scale and shape.
    pub fn model1() -> Self {
        Self::new(vec![0, 1], vec![], vec![])
    }

    /// Location and scale linear in both coordinates, constant shape.
    pub fn model2() -> Self {
        Self::new(vec![0, 1], vec![0, 1], vec![])
    }

    pub fn n_mu(&self) -> usize {
        1 + self.mu_covariates.len()
    }

    pub fn n_sigma(&self) -> usize {
        1 + self.sigma_covariates.len()
    }

    pub fn n_xi(&self) -> usize {
        1 + self.xi_covariates.len()
    }

    pub fn n_coef(&self) -> usize {
        self.n_mu() + self.n_sigma() + self.n_xi()
    }

    /// Index of the shape intercept in the coefficient vector.
    pub fn xi_intercept(&self) -> usize {
        self.n_mu() + self.n_sigma()
    }

    /// Index of the scale intercept in the coefficient vector.
    pub fn sigma_intercept(&self) -> usize {
        self.n_mu()
    }

    /// Coefficient names such as `beta_mu_0`, `beta_mu_1`; covariate `j` is named `j + 1`.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.n_coef());
        for (tag, covs) in [
            ("mu", &self.mu_covariates),
            ("sigma", &self.sigma_covariates),
            ("xi", &self.xi_covariates),
        ] {
            names.push(format!("beta_{tag}_0"));
            names.extend(covs.iter().map(|c| format!("beta_{tag}_{}", c + 1)));
        }
        names
    }

    pub fn check_covariates(&self, n_covariates: usize) -> Result<()> {
        let max = self
            .mu_covariates
            .iter()
            .chain(&self.sigma_covariates)
            .chain(&self.xi_covariates)
            .max();
        match max {
            Some(&m) if m >= n_covariates => Err(Error::Dimension(format!(
                "design references covariate {m} but sites carry {n_covariates}"
            ))),
            _ => Ok(()),
        }
    }

    /// Raw `(μ, σ, ξ)` before validation.
    #[inline]
    pub fn raw_params(&self, x: &[f64], beta: &[f64]) -> (f64, f64, f64) {
        let lin = |offset: usize, covs: &[usize]| -> f64 {
            beta[offset]
                + covs
                    .iter()
                    .enumerate()
                    .map(|(k, &c)| beta[offset + 1 + k] * x[c])
                    .sum::<f64>()
        };
        let mu = lin(0, &self.mu_covariates);
        let sigma = lin(self.n_mu(), &self.sigma_covariates);
        let xi = lin(self.n_mu() + self.n_sigma(), &self.xi_covariates);
        (
            self.link_mu.inverse(mu),
            self.link_sigma.inverse(sigma),
            self.link_xi.inverse(xi),
        )
    }

    /// GEV parameters at one site.
    pub fn marginal_params_at_site(&self, site: &Site, beta: &[f64]) -> Result<GevParams> {
        if beta.len() != self.n_coef() {
            return Err(Error::Dimension(format!(
                "coefficient vector has length {}, design needs {}",
                beta.len(),
                self.n_coef()
            )));
        }
        let (mu, sigma, xi) = self.raw_params(&site.covariates, beta);
        if !(sigma > 0.0 && sigma.is_finite()) || !mu.is_finite() || !xi.is_finite() {
            return Err(Error::InvalidMarginal {
                site: site.id.clone(),
                detail: format!("mu={mu}, sigma={sigma}, xi={xi}"),
            });
        }
        Ok(GevParams { mu, sigma, xi })
    }

    /// GEV parameters at every site of the catalog.
    pub fn site_params(&self, sites: &SiteCatalog, beta: &[f64]) -> Result<Vec<GevParams>> {
        sites
            .sites()
            .iter()
            .map(|s| self.marginal_params_at_site(s, beta))
            .collect()
    }
}
