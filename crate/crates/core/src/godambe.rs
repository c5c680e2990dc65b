//! Sandwich variance: `B_n`, finite-difference and Bartlett-identity `A_n`, and
//! `Ω = A⁻¹ B A⁻ᵀ` with standard errors.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{FitResult, Method};
use crate::likelihood::{
    fd_step, step1_block_scores, step2_beta_block_scores, step2_theta_block_scores, BlockScores,
    PairwiseProblem, Step1Problem,
};
use crate::smith::SmithDispersion;

/// Relative step for differencing score functions.
pub const JACOBIAN_STEP: f64 = 1e-4;
/// Condition number above which `A` is rejected.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AVariant {
    Fd,
    Bartlett,
}

impl AVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            AVariant::Fd => "fd",
            AVariant::Bartlett => "bartlett",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "fd" => Ok(AVariant::Fd),
            "bartlett" => Ok(AVariant::Bartlett),
            other => Err(Error::InvalidArgument(format!(
                "unknown A variant '{other}'"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GodambeResult {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub omega: DMatrix<f64>,
    pub se: Vec<f64>,
    pub variant: AVariant,
    pub n: usize,
    pub condition: f64,
}

fn check_finite(m: &DMatrix<f64>, what: &'static str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

/// `B_n = n⁻¹ Σ_t ψ_t ψ_tᵀ` from per-block score rows.
pub fn estimate_b(scores: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_finite(scores, "block scores")?;
    let n = scores.nrows();
    if n == 0 {
        return Err(Error::InvalidArgument("no blocks".into()));
    }
    if n < scores.ncols() {
        log::warn!(
            "B estimated from {n} blocks for {} parameters; it is rank deficient",
            scores.ncols()
        );
    }
    let b = scores.transpose() * scores / n as f64;
    Ok((&b + b.transpose()) * 0.5)
}

/// `n⁻¹ Σ_t ∂ψ_t/∂ηᵀ` for a generic score sum, by central differences with step
/// `1e-4·max(1, |η_j|)`.
pub fn jacobian_of_score_sum<F>(eta: &[f64], n: usize, mut score_sum: F) -> Result<DMatrix<f64>>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let d = eta.len();
    let mut out = DMatrix::zeros(0, d);
    let mut x = eta.to_vec();
    for j in 0..d {
        let h = fd_step(eta[j], JACOBIAN_STEP);
        x[j] = eta[j] + h;
        let plus = score_sum(&x)?;
        x[j] = eta[j] - h;
        let minus = score_sum(&x)?;
        x[j] = eta[j];
        if out.nrows() == 0 {
            out = DMatrix::zeros(plus.len(), d);
        }
        for (i, (a, b)) in plus.iter().zip(&minus).enumerate() {
            out[(i, j)] = (a - b) / (2.0 * h * n as f64);
        }
    }
    check_finite(&out, "score Jacobian")?;
    Ok(out)
}

fn column_sums(m: &DMatrix<f64>) -> Vec<f64> {
    (0..m.ncols())
        .map(|j| crate::likelihood::kahan(m.column(j).iter().copied()))
        .collect()
}

fn theta_of(x: &[f64]) -> Result<SmithDispersion> {
    SmithDispersion::from_slice(x)
}

/// Two-step `A_n` by differencing the score sums. The `(β rows, θ columns)` block is zero because
/// step 1 does not involve θ.
pub fn estimate_a_fd(
    beta: &[f64],
    theta: &SmithDispersion,
    step1: &Step1Problem,
    step2: &PairwiseProblem,
) -> Result<DMatrix<f64>> {
    let p = beta.len();
    let n = step1.n_blocks();
    let th = theta.as_array();
    let a_bb = jacobian_of_score_sum(beta, n, |b| Ok(column_sums(&step1_block_scores(step1, b)?)))?;
    let a_tb = jacobian_of_score_sum(beta, n, |b| {
        Ok(column_sums(&step2_theta_block_scores(step2, theta, b)?))
    })?;
    let a_tt = jacobian_of_score_sum(&th, n, |t| {
        Ok(column_sums(&step2_theta_block_scores(
            step2,
            &theta_of(t)?,
            beta,
        )?))
    })?;
    let mut a = DMatrix::zeros(p + 3, p + 3);
    a.view_mut((0, 0), (p, p)).copy_from(&a_bb);
    a.view_mut((p, 0), (3, p)).copy_from(&a_tb);
    a.view_mut((p, p), (3, 3)).copy_from(&a_tt);
    condition_number(&a)?;
    Ok(a)
}

/// One-step pairwise `A_n`: full Jacobian of `(φ₂, ψ₂)` in `(β, θ)`.
pub fn estimate_a_fd_pairwise(
    beta: &[f64],
    theta: &SmithDispersion,
    step2: &PairwiseProblem,
) -> Result<DMatrix<f64>> {
    let p = beta.len();
    let mut eta = beta.to_vec();
    eta.extend_from_slice(&theta.as_array());
    let a = jacobian_of_score_sum(&eta, step2.n_blocks(), |x| {
        let (b, t) = x.split_at(p);
        let th = theta_of(t)?;
        let mut s = column_sums(&step2_beta_block_scores(step2, &th, b)?);
        s.extend(column_sums(&step2_theta_block_scores(step2, &th, b)?));
        Ok(s)
    })?;
    condition_number(&a)?;
    Ok(a)
}

fn neg_outer_sum(rows_a: &DMatrix<f64>, rows_b: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    -(rows_a.transpose() * rows_b) / n as f64
}

/// Two-step `Â_n` from the second Bartlett identity applied per site (step 1) and per pair
/// (step 2).
pub fn estimate_a_bartlett(scores: &BlockScores) -> Result<DMatrix<f64>> {
    check_finite(&scores.psi1_site, "site scores")?;
    check_finite(&scores.psi2_pair, "pair scores")?;
    check_finite(&scores.phi2_pair, "pair scores")?;
    let n = scores.n_blocks();
    let p = scores.psi1.ncols();
    let mut a = DMatrix::zeros(p + 3, p + 3);
    a.view_mut((0, 0), (p, p))
        .copy_from(&neg_outer_sum(&scores.psi1_site, &scores.psi1_site, n));
    a.view_mut((p, 0), (3, p))
        .copy_from(&neg_outer_sum(&scores.psi2_pair, &scores.phi2_pair, n));
    a.view_mut((p, p), (3, 3))
        .copy_from(&neg_outer_sum(&scores.psi2_pair, &scores.psi2_pair, n));
    Ok(a)
}

/// One-step pairwise `Â_n = -n⁻¹ Σ_t Σ_(i,j) g g ᵀ` with `g = (φ₂, ψ₂)` per pair.
pub fn estimate_a_bartlett_pairwise(scores: &BlockScores) -> Result<DMatrix<f64>> {
    let g = crate::likelihood::hcat(&scores.phi2_pair, &scores.psi2_pair);
    check_finite(&g, "pair scores")?;
    Ok(neg_outer_sum(&g, &g, scores.n_blocks()))
}

/// 2-norm condition number; errors above [`MAX_CONDITION`].
pub fn condition_number(a: &DMatrix<f64>) -> Result<f64> {
    let sv = a.clone().svd(false, false).singular_values;
    let max = sv.iter().copied().fold(0.0, f64::max);
    let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
    let cond = if min > 0.0 { max / min } else { f64::INFINITY };
    if !(cond <= MAX_CONDITION) {
        return Err(Error::IllConditioned {
            cond,
            hint: "use the Bartlett variant of A or simplify the marginal design".into(),
        });
    }
    Ok(cond)
}

/// `Ω = A⁻¹ B A⁻ᵀ`, symmetrized, with `se_i = sqrt(Ω_ii / n)`.
pub fn sandwich(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    n: usize,
    variant: AVariant,
) -> Result<GodambeResult> {
    if a.nrows() != a.ncols() || a.shape() != b.shape() {
        return Err(Error::Dimension(format!(
            "A is {:?}, B is {:?}",
            a.shape(),
            b.shape()
        )));
    }
    check_finite(a, "A")?;
    check_finite(b, "B")?;
    let condition = condition_number(a)?;
    let lu = a.clone().lu();
    let a_inv = lu
        .try_inverse()
        .ok_or_else(|| Error::Numeric("A is singular".into()))?;
    let omega = &a_inv * b * a_inv.transpose();
    let omega = (&omega + omega.transpose()) * 0.5;
    let se = omega
        .diagonal()
        .iter()
        .map(|v| (v.max(0.0) / n as f64).sqrt())
        .collect();
    Ok(GodambeResult {
        a: a.clone(),
        b: b.clone(),
        omega,
        se,
        variant,
        n,
        condition,
    })
}

/// Sandwich for a fitted model. For the two-step fit `step1` must be given.
pub fn godambe_for_fit(
    fit: &FitResult,
    step1: Option<&Step1Problem>,
    step2: &PairwiseProblem,
    variant: AVariant,
) -> Result<GodambeResult> {
    let n = step2.n_blocks();
    match fit.method {
        Method::TwoStep => {
            let step1 = step1.ok_or_else(|| {
                Error::InvalidArgument("the two-step variance needs the daily panel".into())
            })?;
            let scores =
                crate::likelihood::block_scores(&fit.beta_hat, &fit.theta_hat, step1, step2)?;
            let b = estimate_b(&scores.two_step())?;
            let a = match variant {
                AVariant::Fd => estimate_a_fd(&fit.beta_hat, &fit.theta_hat, step1, step2)?,
                AVariant::Bartlett => estimate_a_bartlett(&scores)?,
            };
            sandwich(&a, &b, n, variant)
        }
        Method::PairwiseOnestep => {
            let margins = step2.margins(&fit.beta_hat)?;
            let psi2_pair = crate::likelihood::pair_theta_scores(step2, &fit.theta_hat, &margins)?;
            let phi2_pair =
                crate::likelihood::pair_beta_scores(step2, &fit.theta_hat, &fit.beta_hat)?;
            let np = step2.n_pairs();
            let group = |m: &DMatrix<f64>| {
                DMatrix::from_fn(n, m.ncols(), |t, j| {
                    crate::likelihood::kahan((0..np).map(|r| m[(t * np + r, j)]))
                })
            };
            let block = crate::likelihood::hcat(&group(&phi2_pair), &group(&psi2_pair));
            let b = estimate_b(&block)?;
            let a = match variant {
                AVariant::Fd => estimate_a_fd_pairwise(&fit.beta_hat, &fit.theta_hat, step2)?,
                AVariant::Bartlett => {
                    let g = crate::likelihood::hcat(&phi2_pair, &psi2_pair);
                    neg_outer_sum(&g, &g, n)
                }
            };
            sandwich(&a, &b, n, variant)
        }
    }
}
