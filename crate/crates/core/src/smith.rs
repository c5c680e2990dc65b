//! Smith (Gaussian extreme value) max-stable model: pairwise distribution function, density and
//! extremal coefficient.
//!
//! With unit Fréchet margins the bivariate CDF is `exp{-V(z1, z2)}` where
//!
//! ```text
//! V = Φ(w)/z1 + Φ(v)/z2,   w = a/2 + ln(z2/z1)/a,   v = a - w,
//! ```
//!
//! and `a² = Δxᵀ Σ⁻¹ Δx`. Using `φ(w)/z1 = φ(v)/z2`, the partial derivatives collapse to
//! `V1 = -Φ(w)/z1²`, `V2 = -Φ(v)/z2²`, `V12 = -φ(w)/(a z1² z2)`, and the density
//! `F (V1 V2 - V12)` becomes
//!
//! ```text
//! f = F / (z1² z2) · [Φ(w) Φ(v) / z2 + φ(w) / a].
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gev::GevParams;
use crate::special::{ln_norm_cdf, ln_norm_pdf, norm_cdf};

/// Below this `a` the pair is treated as completely dependent.
pub const A_COMPLETE_DEPENDENCE: f64 = 1e-12;

/// Symmetric positive definite 2×2 dispersion matrix Σ of the Gaussian storm profile.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmithDispersion {
    pub sigma11: f64,
    pub sigma12: f64,
    pub sigma22: f64,
}

impl SmithDispersion {
    pub fn new(sigma11: f64, sigma12: f64, sigma22: f64) -> Result<Self> {
        let d = Self {
            sigma11,
            sigma12,
            sigma22,
        };
        if d.is_spd() {
            Ok(d)
        } else {
            Err(Error::NotPositiveDefinite)
        }
    }

    pub fn from_slice(theta: &[f64]) -> Result<Self> {
        if theta.len() != 3 {
            return Err(Error::Dimension(format!(
                "dispersion needs 3 entries, got {}",
                theta.len()
            )));
        }
        Self::new(theta[0], theta[1], theta[2])
    }

    /// `c · Q` where Q is the correlation matrix with off-diagonal `rho`.
    pub fn scaled_correlation(c: f64, rho: f64) -> Result<Self> {
        Self::new(c, c * rho, c)
    }

    pub fn is_spd(&self) -> bool {
        self.sigma11.is_finite()
            && self.sigma12.is_finite()
            && self.sigma22.is_finite()
            && self.sigma11 > 0.0
            && self.sigma22 > 0.0
            && self.det() > 0.0
    }

    pub fn det(&self) -> f64 {
        self.sigma11 * self.sigma22 - self.sigma12 * self.sigma12
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.sigma11, self.sigma12, self.sigma22]
    }

    /// Largest eigenvalue.
    pub fn max_eigenvalue(&self) -> f64 {
        let half_tr = 0.5 * (self.sigma11 + self.sigma22);
        let half_diff = 0.5 * (self.sigma11 - self.sigma22);
        half_tr + half_diff.hypot(self.sigma12)
    }

    /// `Δxᵀ Σ⁻¹ Δx`.
    #[inline]
    pub fn quad_form(&self, dx: [f64; 2]) -> f64 {
        (self.sigma22 * dx[0] * dx[0] - 2.0 * self.sigma12 * dx[0] * dx[1]
            + self.sigma11 * dx[1] * dx[1])
            / self.det()
    }

    /// Build from unconstrained Cholesky coordinates `(ln L11, L21, ln L22)`.
    pub fn from_log_cholesky(c: &[f64]) -> Result<Self> {
        let l11 = c[0].exp();
        let l22 = c[2].exp();
        let l21 = c[1];
        Self::new(l11 * l11, l21 * l11, l21 * l21 + l22 * l22)
    }

    pub fn to_log_cholesky(&self) -> [f64; 3] {
        let l11 = self.sigma11.sqrt();
        let l21 = self.sigma12 / l11;
        let l22 = (self.sigma22 - l21 * l21).sqrt();
        [l11.ln(), l21, l22.ln()]
    }
}

/// Dependence distance `a = sqrt(Δxᵀ Σ⁻¹ Δx)`.
pub fn mahalanobis_a(dx: [f64; 2], sigma: &SmithDispersion) -> Result<f64> {
    if !sigma.is_spd() {
        return Err(Error::NotPositiveDefinite);
    }
    Ok(sigma.quad_form(dx).max(0.0).sqrt())
}

/// Extremal coefficient `2Φ(a/2)`, between 1 (complete dependence) and 2 (independence).
pub fn extremal_coefficient(a: f64) -> f64 {
    if a.is_infinite() {
        2.0
    } else {
        2.0 * norm_cdf(0.5 * a.max(0.0))
    }
}

/// Exponent `V(z1, z2)` from the log ratio `r = ln(z2/z1)`.
#[inline]
fn exponent(z1: f64, z2: f64, r: f64, a: f64) -> f64 {
    if a < A_COMPLETE_DEPENDENCE {
        (1.0 / z1).max(1.0 / z2)
    } else if a.is_infinite() {
        1.0 / z1 + 1.0 / z2
    } else {
        let w = 0.5 * a + r / a;
        let v = a - w;
        norm_cdf(w) / z1 + norm_cdf(v) / z2
    }
}

fn check_z(z1: f64, z2: f64) -> Result<()> {
    if !(z1 > 0.0 && z2 > 0.0) || z1.is_nan() || z2.is_nan() {
        return Err(Error::InvalidArgument(format!(
            "Fréchet values must be positive, got ({z1}, {z2})"
        )));
    }
    Ok(())
}

/// `P(Z1 ≤ z1, Z2 ≤ z2)` for the simple Smith process.
pub fn bivariate_cdf_frechet(z1: f64, z2: f64, a: f64) -> Result<f64> {
    check_z(z1, z2)?;
    if a.is_nan() || a < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "a must be non-negative, got {a}"
        )));
    }
    if z1.is_infinite() || z2.is_infinite() {
        return Ok((-1.0 / z1.min(z2)).exp());
    }
    Ok((-exponent(z1, z2, (z2 / z1).ln(), a)).exp())
}

/// Log density from `ln z1`, `ln z2`; `a` must be positive.
#[inline]
pub(crate) fn ln_density_from_logs(lz1: f64, lz2: f64, r: f64, a: f64) -> f64 {
    let inv_z1 = (-lz1).exp();
    let inv_z2 = (-lz2).exp();
    if a.is_infinite() {
        return -inv_z1 - inv_z2 - 2.0 * lz1 - 2.0 * lz2;
    }
    let w = 0.5 * a + r / a;
    let v = a - w;
    let (pw, pv) = (norm_cdf(w), norm_cdf(v));
    let big_v = pw * inv_z1 + pv * inv_z2;
    let ln_pw = if pw > 1e-300 { pw.ln() } else { ln_norm_cdf(w) };
    let ln_pv = if pv > 1e-300 { pv.ln() } else { ln_norm_cdf(v) };
    let t1 = ln_pw + ln_pv - lz2;
    let t2 = ln_norm_pdf(w) - a.ln();
    let (hi, lo) = if t1 > t2 { (t1, t2) } else { (t2, t1) };
    let lse = hi + (lo - hi).exp().ln_1p();
    -big_v - 2.0 * lz1 - lz2 + lse
}

/// Log of the bivariate density of the simple Smith process at `(z1, z2)`.
pub fn log_bivariate_density_frechet(z1: f64, z2: f64, a: f64) -> Result<f64> {
    check_z(z1, z2)?;
    if !(a >= A_COMPLETE_DEPENDENCE) {
        return Err(Error::InvalidArgument(format!(
            "the pairwise density is degenerate for a = {a}"
        )));
    }
    Ok(ln_density_from_logs(z1.ln(), z2.ln(), (z2 / z1).ln(), a))
}

/// Log density of a pair of block maxima with GEV margins.
pub fn log_pairwise_density_gev(
    m1: f64,
    m2: f64,
    p1: &GevParams,
    p2: &GevParams,
    a: f64,
) -> Result<f64> {
    if !(a >= A_COMPLETE_DEPENDENCE) {
        return Err(Error::InvalidArgument(format!(
            "the pairwise density is degenerate for a = {a}"
        )));
    }
    let lz1 = p1.ln_to_frechet(m1)?;
    let lz2 = p2.ln_to_frechet(m2)?;
    Ok(ln_density_from_logs(lz1, lz2, lz2 - lz1, a) + p1.ln_jacobian(lz1) + p2.ln_jacobian(lz2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cdf(z1: f64, z2: f64, a: f64) -> f64 {
        bivariate_cdf_frechet(z1, z2, a).unwrap()
    }

    fn mixed_fd(z1: f64, z2: f64, a: f64) -> f64 {
        let h1 = 1e-4 * z1;
        let h2 = 1e-4 * z2;
        (cdf(z1 + h1, z2 + h2, a) - cdf(z1 + h1, z2 - h2, a) - cdf(z1 - h1, z2 + h2, a)
            + cdf(z1 - h1, z2 - h2, a))
            / (4.0 * h1 * h2)
    }

    #[test]
    fn mahalanobis_examples() {
        let id = SmithDispersion::new(1.0, 0.0, 1.0).unwrap();
        assert!((mahalanobis_a([3.0, 4.0], &id).unwrap() - 5.0).abs() < 1e-12);
        let four = SmithDispersion::new(4.0, 0.0, 4.0).unwrap();
        assert!((mahalanobis_a([2.0, 0.0], &four).unwrap() - 1.0).abs() < 1e-12);
        let s1 = SmithDispersion::scaled_correlation(4.0, 0.5).unwrap();
        let a = mahalanobis_a([1.0, 1.0], &s1).unwrap();
        assert!((a * a - 1.0 / 3.0).abs() < 1e-12);
        assert!((a - 0.577_350_269_189_625_8).abs() < 1e-12);
        assert_eq!(mahalanobis_a([0.0, 0.0], &s1).unwrap(), 0.0);
        let bad = SmithDispersion {
            sigma11: 1.0,
            sigma12: 2.0,
            sigma22: 1.0,
        };
        assert!(mahalanobis_a([1.0, 0.0], &bad).is_err());
        assert!(SmithDispersion::new(1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn cdf_limits() {
        let indep = cdf(1.0, 1.0, 1e8);
        assert!((indep - (-2.0f64).exp()).abs() < 1e-12);
        assert!((cdf(1.0, 3.0, 0.0) - (-1.0f64).exp()).abs() < 1e-15);
        assert!((cdf(1.0, 1.0, f64::INFINITY) - (-2.0f64).exp()).abs() < 1e-15);
        // Φ(0.5) = 0.6914624612740131 from the series oracle in `special`.
        let expected = (-2.0 * 0.691_462_461_274_013_1f64).exp();
        assert!((cdf(1.0, 1.0, 1.0) - expected).abs() < 1e-12);
        assert!((cdf(1.0, 1.0, 1.0) - (-1.382_925f64).exp()).abs() < 1e-6);
        assert!(bivariate_cdf_frechet(0.0, 1.0, 1.0).is_err());
        assert!(bivariate_cdf_frechet(1.0, -1.0, 1.0).is_err());
    }

    #[test]
    fn extremal_coefficient_examples() {
        assert_eq!(extremal_coefficient(0.0), 1.0);
        assert_eq!(extremal_coefficient(f64::INFINITY), 2.0);
        assert!((extremal_coefficient(60.0) - 2.0).abs() < 1e-15);
        assert!((extremal_coefficient(1.0) - 1.382_925).abs() < 1e-6);
        let mut prev = 1.0;
        for i in 1..100 {
            let t = extremal_coefficient(i as f64 * 0.1);
            assert!(t >= prev);
            prev = t;
        }
    }

    #[test]
    fn density_matches_mixed_difference_at_unit_point() {
        let h = 1e-4;
        let fd =
            (cdf(1.0 + h, 1.0 + h, 1.0) - cdf(1.0 + h, 1.0 - h, 1.0) - cdf(1.0 - h, 1.0 + h, 1.0)
                + cdf(1.0 - h, 1.0 - h, 1.0))
                / (4.0 * h * h);
        let f = log_bivariate_density_frechet(1.0, 1.0, 1.0).unwrap().exp();
        assert!(((f - fd) / fd).abs() < 1e-5, "f={f} fd={fd}");
        assert!(log_bivariate_density_frechet(1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn density_matches_high_precision_oracle() {
        // Mixed central differences of the CDF evaluated in 60-digit arithmetic at 100 uniform
        // points; see tests/data/gen_smith_oracle.py.
        let data = include_str!("../tests/data/smith_density_oracle.csv");
        let mut n = 0;
        for line in data.lines().skip(1) {
            let v: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
            let f = log_bivariate_density_frechet(v[0], v[1], v[2])
                .unwrap()
                .exp();
            assert!(((f - v[3]) / v[3]).abs() < 1e-5, "{line}: {f}");
            n += 1;
        }
        assert_eq!(n, 100);
    }

    #[test]
    fn density_matches_double_precision_difference() {
        // Where the CDF is well conditioned an ordinary mixed difference is accurate enough.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let z1 = rng.random_range(0.5..5.0);
            let z2 = z1 * rng.random_range(0.7..1.4);
            let a = rng.random_range(0.5..3.0);
            let fd = mixed_fd(z1, z2, a);
            let f = log_bivariate_density_frechet(z1, z2, a).unwrap().exp();
            assert!(
                ((f - fd) / fd).abs() < 1e-5,
                "z=({z1},{z2}) a={a}: {f} vs {fd}"
            );
        }
    }

    /// Composite Simpson rule.
    fn simpson(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
        let h = (hi - lo) / n as f64;
        let mut s = f(lo) + f(hi);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(lo + h * i as f64);
        }
        s * h / 3.0
    }

    #[test]
    fn density_integrates_to_marginal_derivative() {
        // ∫ f(1, z2) dz2 over (0, 200) = ∂/∂z1 exp(-1/z1) at z1 = 1 = e^{-1}; substitute z2 = e^u.
        let integrand = |u: f64| {
            let z2 = u.exp();
            log_bivariate_density_frechet(1.0, z2, 1.0).unwrap().exp() * z2
        };
        let total = simpson(integrand, (1e-4f64).ln(), 200f64.ln(), 20_000);
        assert!((total - (-1.0f64).exp()).abs() < 1e-3, "{total}");
    }

    #[test]
    fn unit_frechet_margins_reduce_to_simple_density() {
        let p = GevParams::unit_frechet();
        for (m1, m2, a) in [(0.7, 2.0, 0.8), (3.0, 1.1, 2.5), (10.0, 0.3, 0.2)] {
            let g = log_pairwise_density_gev(m1, m2, &p, &p, a).unwrap();
            let f = log_bivariate_density_frechet(m1, m2, a).unwrap();
            assert!((g - f).abs() < 1e-12);
        }
    }

    #[test]
    fn gev_density_support_error() {
        let p = GevParams::new(0.0, 1.0, 0.5).unwrap();
        assert!(matches!(
            log_pairwise_density_gev(-3.0, 1.0, &p, &p, 1.0),
            Err(Error::Support { .. })
        ));
    }

    #[test]
    fn gev_density_total_probability_monte_carlo() {
        let p1 = GevParams::new(5.0, 2.5, 0.2).unwrap();
        let p2 = GevParams::new(3.0, 1.5, -0.1).unwrap();
        let a = 0.9;
        let (l1, u1, l2, u2) = (3.0, 12.0, 1.0, 6.0);
        let joint = |y1: f64, y2: f64| {
            bivariate_cdf_frechet(p1.to_frechet(y1).unwrap(), p2.to_frechet(y2).unwrap(), a)
                .unwrap()
        };
        let mass = joint(u1, u2) - joint(l1, u2) - joint(u1, l2) + joint(l1, l2);
        let area = (u1 - l1) * (u2 - l2);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 200_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let y1 = rng.random_range(l1..u1);
            let y2 = rng.random_range(l2..u2);
            let v = area * log_pairwise_density_gev(y1, y2, &p1, &p2, a).unwrap().exp();
            s += v;
            s2 += v * v;
        }
        let mean = s / n as f64;
        let se = ((s2 / n as f64 - mean * mean) / n as f64).sqrt();
        assert!(
            (mean - mass).abs() < 3.0 * se,
            "mean={mean} mass={mass} se={se}"
        );
    }

    #[test]
    fn log_cholesky_round_trip() {
        let s = SmithDispersion::new(0.301, -0.494, 0.882).unwrap();
        let back = SmithDispersion::from_log_cholesky(&s.to_log_cholesky()).unwrap();
        for (x, y) in s.as_array().iter().zip(back.as_array()) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    proptest! {
        #[test]
        fn max_stability(z1 in 0.05..50.0f64, z2 in 0.05..50.0f64, a in 0.01..20.0f64) {
            for k in [2.0, 5.0, 365.0] {
                let lhs = k * bivariate_cdf_frechet(k * z1, k * z2, a).unwrap().ln();
                let rhs = bivariate_cdf_frechet(z1, z2, a).unwrap().ln();
                prop_assert!(((lhs - rhs) / rhs).abs() < 1e-12);
            }
        }

        #[test]
        fn cdf_bounds_and_monotone(z1 in 0.05..50.0f64, z2 in 0.05..50.0f64, a in 0.0..20.0f64, dz in 0.0..3.0f64) {
            let f = cdf(z1, z2, a);
            let upper = (-1.0 / z1).exp().min((-1.0 / z2).exp());
            let lower = (-1.0 / z1 - 1.0 / z2).exp();
            prop_assert!(f <= upper * (1.0 + 1e-14));
            prop_assert!(f >= lower * (1.0 - 1e-14));
            prop_assert!(cdf(z1 + dz, z2, a) >= f * (1.0 - 1e-14));
            prop_assert!(cdf(z1, z2 + dz, a) >= f * (1.0 - 1e-14));
        }

        #[test]
        fn density_symmetric(z1 in 0.05..50.0f64, z2 in 0.05..50.0f64, a in 0.01..20.0f64) {
            let f12 = log_bivariate_density_frechet(z1, z2, a).unwrap();
            let f21 = log_bivariate_density_frechet(z2, z1, a).unwrap();
            prop_assert!((f12 - f21).abs() < 1e-10 * f12.abs().max(1.0));
        }

        #[test]
        fn a_is_sign_invariant(dx in -10.0..10.0f64, dy in -10.0..10.0f64) {
            let s = SmithDispersion::new(4.0, 2.0, 4.0).unwrap();
            let a = mahalanobis_a([dx, dy], &s).unwrap();
            let b = mahalanobis_a([-dx, -dy], &s).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
