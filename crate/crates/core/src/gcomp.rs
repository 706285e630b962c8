//! Standardized cost-effectiveness contrasts computed from posterior draws.
//!
//! For one retained draw, each subject's assigned cluster parameters are
//! pushed through both treatment arms at the subject's own confounders:
//! the restricted mean survival E[T ^ tau_V | a, l] comes from the step
//! hazard in closed form, and the expected cost E[Y | a, l] follows either
//! by linearity (Gaussian) or by adaptive quadrature of E[Y | T = t] f(t)
//! across the grid plus the survivor mass parked at the horizon (log-normal).
//! The population contrast weights subjects by one Bayesian-bootstrap draw
//! p ~ Dir(1/n, ..., 1/n), giving
//!
//!   psi(kappa) = kappa * sum_i p_i dT_i - sum_i p_i dY_i,
//!
//! which is affine in kappa, so acceptability curves and the ratio of cost
//! to survival differences replay from the stored (dT, dY) pieces without
//! touching the sampler again. All expectations truncate at the grid horizon:
//! the step model says nothing about hazard beyond it.

use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::data::{CostModel, Dataset};
use crate::diag::quantile_type7;
use crate::edp::EdpState;
use crate::error::{Error, Result};
use crate::hazard::HazardCurve;
use crate::likelihood::{CostParams, SurvParams};

/// Survival differences smaller than this in absolute value make the
/// cost-per-time ratio numerically meaningless; such draws are flagged and
/// excluded from ratio summaries.
pub const ICER_DENOM_EPS: f64 = 1e-8;

/// One draw of the population contrast and the per-subject pieces behind it.
/// `psi_i[i] = kappa * dt_i[i] - dy_i[i]`, and `psi = kappa*dt_bar - dy_bar`
/// with the bars weighted by `weights`.
#[derive(Debug, Clone, PartialEq)]
pub struct GcompDraw {
    pub kappa: f64,
    pub psi: f64,
    pub psi_i: Vec<f64>,
    pub dt_i: Vec<f64>,
    pub dy_i: Vec<f64>,
    pub dt_bar: f64,
    pub dy_bar: f64,
    pub weights: Vec<f64>,
}

/// Restricted mean survival and expected cost for one arm at one profile.
pub fn expected_t_y(
    model: CostModel,
    omega: &CostParams,
    theta: &SurvParams,
    curve: &HazardCurve,
    a: u8,
    l: &[f64],
) -> Result<(f64, f64)> {
    let eta = theta.eta(a, l);
    let rmean = curve.restricted_mean(eta);
    let ey = match model {
        // E[beta' (T^tau, a, l)] reuses the linear predictor at t = E[T^tau].
        CostModel::Gaussian => omega.mean(rmean, a, l),
        CostModel::LogNormal => lognormal_expected_cost(omega, theta, curve, a, l)?,
    };
    Ok((rmean, ey))
}

/// kappa * E[T ^ tau_V | a, l] - E[Y | a, l].
pub fn expected_mv(
    model: CostModel,
    omega: &CostParams,
    theta: &SurvParams,
    curve: &HazardCurve,
    a: u8,
    l: &[f64],
    kappa: f64,
) -> Result<f64> {
    let (t, y) = expected_t_y(model, omega, theta, curve, a, l)?;
    Ok(kappa * t - y)
}

/// E[Y] under the log-normal cost model: integrate
/// exp(mu(t) + phi/2) * lambda_v e^eta exp(-e^eta Lambda_0(t)) over each grid
/// interval, then add the horizon mass S(tau_V) exp(mu(tau_V) + phi/2).
fn lognormal_expected_cost(
    omega: &CostParams,
    theta: &SurvParams,
    curve: &HazardCurve,
    a: u8,
    l: &[f64],
) -> Result<f64> {
    let eta = theta.eta(a, l);
    let e_eta = eta.exp();
    let grid = curve.grid();
    let mut total = 0.0;
    let mut cum = 0.0; // baseline cumulative hazard at the interval's left edge
    for (v, &lam) in curve.lambda().iter().enumerate() {
        let lo = grid.lower(v);
        let hi = grid.upper(v);
        let cum_lo = cum;
        let f = |t: f64| {
            let lam0 = cum_lo + lam * (t - lo);
            (omega.mean(t, a, l) + omega.phi / 2.0).exp() * lam * e_eta * (-e_eta * lam0).exp()
        };
        total += adaptive_simpson(&f, lo, hi)?;
        cum += lam * grid.width();
    }
    let horizon = grid.horizon();
    let tail = (-e_eta * cum).exp() * (omega.mean(horizon, a, l) + omega.phi / 2.0).exp();
    let ey = total + tail;
    if !ey.is_finite() {
        return Err(Error::numeric("expected cost", "log-normal mean overflowed"));
    }
    Ok(ey)
}

const SIMPSON_MAX_DEPTH: u32 = 40;

/// Adaptive Simpson with the usual Richardson acceptance test. Errors out on
/// non-finite integrand values or failure to converge within the depth limit.
fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> Result<f64> {
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    if !fa.is_finite() || !fm.is_finite() || !fb.is_finite() {
        return Err(Error::numeric("quadrature", "integrand not finite"));
    }
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    let tol = 1e-12 * (1.0 + whole.abs());
    simpson_step(f, a, b, fa, fm, fb, whole, tol, SIMPSON_MAX_DEPTH)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> Result<f64> {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let (flm, frm) = (f(lm), f(rm));
    if !flm.is_finite() || !frm.is_finite() {
        return Err(Error::numeric("quadrature", "integrand not finite"));
    }
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let err = left + right - whole;
    if err.abs() <= 15.0 * tol {
        return Ok(left + right + err / 15.0);
    }
    if depth == 0 {
        return Err(Error::numeric("quadrature", "adaptive refinement did not converge"));
    }
    let half = 0.5 * tol;
    Ok(simpson_step(f, a, m, fa, flm, fm, left, half, depth - 1)?
        + simpson_step(f, m, b, fm, frm, fb, right, half, depth - 1)?)
}

/// (dT_i, dY_i): treated-minus-control restricted mean and expected cost at
/// one subject's confounders under one set of cluster parameters.
pub fn subject_contrast(
    model: CostModel,
    omega: &CostParams,
    theta: &SurvParams,
    curve: &HazardCurve,
    l: &[f64],
) -> Result<(f64, f64)> {
    let (t1, y1) = expected_t_y(model, omega, theta, curve, 1, l)?;
    let (t0, y0) = expected_t_y(model, omega, theta, curve, 0, l)?;
    Ok((t1 - t0, y1 - y0))
}

/// One Dirichlet(1/n, ..., 1/n) draw via normalized Gamma(1/n, 1) variables.
pub fn draw_bootstrap_weights<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    assert!(n >= 1);
    if n == 1 {
        return vec![1.0];
    }
    let gamma = Gamma::new(1.0 / n as f64, 1.0).expect("positive shape");
    let mut w: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
    let total: f64 = w.iter().sum();
    if !(total > 0.0) {
        // Every component underflowed: astronomically unlikely, but a uniform
        // fallback keeps the weights on the simplex.
        return vec![1.0 / n as f64; n];
    }
    for x in &mut w {
        *x /= total;
    }
    w
}

/// Population contrast for one retained draw with freshly drawn bootstrap
/// weights.
pub fn psi_draw<R: Rng>(
    state: &EdpState,
    curve: &HazardCurve,
    data: &Dataset,
    model: CostModel,
    kappa: f64,
    rng: &mut R,
) -> Result<GcompDraw> {
    let weights = draw_bootstrap_weights(data.n(), rng);
    psi_draw_with_weights(state, curve, data, model, kappa, weights)
}

/// Same contrast with caller-supplied weights (the uniform-weights test hook
/// and the replay path).
pub fn psi_draw_with_weights(
    state: &EdpState,
    curve: &HazardCurve,
    data: &Dataset,
    model: CostModel,
    kappa: f64,
    weights: Vec<f64>,
) -> Result<GcompDraw> {
    let n = data.n();
    debug_assert_eq!(weights.len(), n);
    debug_assert!(weights.iter().all(|&w| w >= 0.0));
    debug_assert!((weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    let mut dt_i = Vec::with_capacity(n);
    let mut dy_i = Vec::with_capacity(n);
    let mut psi_i = Vec::with_capacity(n);
    let (mut dt_bar, mut dy_bar) = (0.0, 0.0);
    for i in 0..n {
        let (dt, dy) = subject_contrast(
            model,
            state.cost_params_of(i),
            state.surv_params_of(i),
            curve,
            &data.subject(i).l,
        )?;
        dt_bar += weights[i] * dt;
        dy_bar += weights[i] * dy;
        psi_i.push(kappa * dt - dy);
        dt_i.push(dt);
        dy_i.push(dy);
    }
    Ok(GcompDraw {
        kappa,
        psi: kappa * dt_bar - dy_bar,
        psi_i,
        dt_i,
        dy_i,
        dt_bar,
        dy_bar,
        weights,
    })
}

/// Posterior mean with an equal-tailed 95% interval from linearly
/// interpolated empirical quantiles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NmbSummary {
    pub mean: f64,
    pub lo95: f64,
    pub hi95: f64,
}

pub fn summarize_nmb(psi: &[f64]) -> NmbSummary {
    assert!(!psi.is_empty(), "no draws to summarize");
    let mean = psi.iter().sum::<f64>() / psi.len() as f64;
    let mut sorted = psi.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite draws"));
    NmbSummary {
        mean,
        lo95: quantile_type7(&sorted, 0.025),
        hi95: quantile_type7(&sorted, 0.975),
    }
}

/// Acceptability curve: share of draws with positive net benefit per kappa.
#[derive(Debug, Clone, PartialEq)]
pub struct CeaCurve {
    pub kappa: Vec<f64>,
    pub prob: Vec<f64>,
}

/// `contrasts` holds one (dt_bar, dy_bar) pair per draw; psi at any kappa is
/// the affine recombination, so no draw re-computation is involved.
pub fn ceac(contrasts: &[(f64, f64)], kappa_grid: &[f64]) -> CeaCurve {
    assert!(!contrasts.is_empty(), "no draws for the acceptability curve");
    let m = contrasts.len() as f64;
    let prob = kappa_grid
        .iter()
        .map(|&k| contrasts.iter().filter(|(dt, dy)| k * dt - dy > 0.0).count() as f64 / m)
        .collect();
    CeaCurve { kappa: kappa_grid.to_vec(), prob }
}

/// Per-draw cost-per-survival ratios with near-zero denominators flagged out.
#[derive(Debug, Clone, PartialEq)]
pub struct IcerSummary {
    /// One entry per draw, in draw order; None marks a flagged denominator.
    pub per_draw: Vec<Option<f64>>,
    pub flagged: usize,
    /// Summary over the retained draws; None when every draw was flagged.
    pub summary: Option<NmbSummary>,
}

pub fn icer(contrasts: &[(f64, f64)]) -> IcerSummary {
    let per_draw: Vec<Option<f64>> = contrasts
        .iter()
        .map(|&(dt, dy)| if dt.abs() < ICER_DENOM_EPS { None } else { Some(dy / dt) })
        .collect();
    let kept: Vec<f64> = per_draw.iter().flatten().copied().collect();
    IcerSummary {
        flagged: contrasts.len() - kept.len(),
        summary: if kept.is_empty() { None } else { Some(summarize_nmb(&kept)) },
        per_draw,
    }
}

/// Per-subject effect summaries across draws: `draws[m]` is the psi_i vector
/// of draw m.
pub fn ite_summary(draws: &[Vec<f64>]) -> Vec<NmbSummary> {
    assert!(!draws.is_empty(), "no draws to summarize");
    let n = draws[0].len();
    (0..n)
        .map(|i| {
            let col: Vec<f64> = draws.iter().map(|d| d[i]).collect();
            summarize_nmb(&col)
        })
        .collect()
}
