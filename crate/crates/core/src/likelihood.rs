//! Subject-level likelihood kernels for the joint cost/survival model.
//!
//! A subject's contribution factorizes as p(y | t, a, l) * p(t, delta | a, l):
//! a conditional cost density given follow-up time, times a
//! proportional-hazards survival term under the piecewise-constant baseline.
//! Censored subjects contribute the full cost density at their censoring time
//! and the survival probability only.
//!
//! Coefficient layout is fixed everywhere: cost design (t, a, l_1..l_q) with
//! variance phi, survival design (a, l_1..l_q) acting on the log hazard.

use serde::{Deserialize, Serialize};

use crate::data::{CostModel, Subject};
use crate::error::Result;
use crate::hazard::HazardCurve;

const LN_2PI: f64 = 1.8378770664093455; // ln(2 pi)

/// Cost-regression parameters: coefficients over (t, a, l_1..l_q) plus the
/// Gaussian variance phi (of y, or of ln y under the lognormal model).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    pub beta: Vec<f64>,
    pub phi: f64,
}

impl CostParams {
    pub fn dim(q: usize) -> usize {
        2 + q
    }

    /// Linear predictor beta' (t, a, l).
    pub fn mean(&self, t: f64, a: u8, l: &[f64]) -> f64 {
        debug_assert_eq!(self.beta.len(), 2 + l.len());
        let mut m = self.beta[0] * t + self.beta[1] * a as f64;
        for (coef, x) in self.beta[2..].iter().zip(l) {
            m += coef * x;
        }
        m
    }
}

/// Proportional-hazards coefficients over (a, l_1..l_q).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvParams {
    pub coef: Vec<f64>,
}

impl SurvParams {
    pub fn dim(q: usize) -> usize {
        1 + q
    }

    /// Linear predictor eta = coef' (a, l).
    pub fn eta(&self, a: u8, l: &[f64]) -> f64 {
        debug_assert_eq!(self.coef.len(), 1 + l.len());
        let mut e = self.coef[0] * a as f64;
        for (coef, x) in self.coef[1..].iter().zip(l) {
            e += coef * x;
        }
        e
    }
}

/// Log density of the observed cost given follow-up time and covariates.
pub fn cost_loglik(model: CostModel, params: &CostParams, y: f64, t: f64, a: u8, l: &[f64]) -> f64 {
    let mu = params.mean(t, a, l);
    match model {
        CostModel::Gaussian => normal_lpdf(y, mu, params.phi),
        // ln y ~ N(mu, phi); the -ln y term is the change of variables.
        CostModel::LogNormal => {
            let z = y.ln();
            normal_lpdf(z, mu, params.phi) - z
        }
    }
}

fn normal_lpdf(x: f64, mu: f64, var: f64) -> f64 {
    -0.5 * (LN_2PI + var.ln()) - (x - mu) * (x - mu) / (2.0 * var)
}

/// Subject-level cumulative hazard e^eta * Lambda_0(t).
///
/// # Errors
/// Domain error when `t` lies outside the grid.
pub fn cumulative_hazard(t: f64, eta: f64, curve: &HazardCurve) -> Result<f64> {
    Ok(curve.cumulative0(t)? * eta.exp())
}

/// Log survival likelihood: ln lambda_0(t) + eta - Lambda(t) for an observed
/// event, -Lambda(t) for a censored subject.
pub fn surv_loglik(t: f64, delta: u8, eta: f64, curve: &HazardCurve) -> Result<f64> {
    let cum = cumulative_hazard(t, eta, curve)?;
    if delta == 1 {
        Ok(curve.lambda_at(t)?.ln() + eta - cum)
    } else {
        Ok(-cum)
    }
}

/// Joint subject log likelihood under one (cost, survival) parameter pair.
pub fn joint_loglik(
    model: CostModel,
    cost: &CostParams,
    surv: &SurvParams,
    subject: &Subject,
    curve: &HazardCurve,
) -> Result<f64> {
    let eta = surv.eta(subject.a, &subject.l);
    let c = cost_loglik(model, cost, subject.y, subject.t, subject.a, &subject.l);
    Ok(c + surv_loglik(subject.t, subject.delta, eta, curve)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hazard::{Grid, GRID_MARGIN};

    fn subject() -> Subject {
        Subject { y: 2.3, t: 1.2, delta: 1, a: 1, l: vec![0.5] }
    }

    fn params() -> CostParams {
        CostParams { beta: vec![1.1, -0.7, 0.3], phi: 0.8 }
    }

    #[test]
    fn gaussian_cost_matches_reference_density() {
        let s = subject();
        let ll = cost_loglik(CostModel::Gaussian, &params(), s.y, s.t, s.a, &s.l);
        // 50-digit reference for N(2.3; 0.77, 0.8).
        assert!((ll - (-2.2704292575475678639)).abs() < 1e-14, "{ll}");
    }

    #[test]
    fn lognormal_cost_matches_reference_density() {
        let s = subject();
        let ll = cost_loglik(CostModel::LogNormal, &params(), s.y, s.t, s.a, &s.l);
        // 50-digit reference for LN(2.3; 0.77, 0.8).
        assert!((ll - (-1.6427493540754618888)).abs() < 1e-14, "{ll}");
    }

    #[test]
    fn lognormal_is_gaussian_on_logs_with_jacobian() {
        let s = subject();
        let p = params();
        let on_logs = cost_loglik(CostModel::Gaussian, &p, s.y.ln(), s.t, s.a, &s.l);
        let direct = cost_loglik(CostModel::LogNormal, &p, s.y, s.t, s.a, &s.l);
        assert!((direct - (on_logs - s.y.ln())).abs() < 1e-14);
    }

    #[test]
    fn cumulative_hazard_splits_across_intervals() {
        // Two unit intervals, rates (1, 2), eta = 0, t = 1.5 -> 1 + 2 * 0.5 = 2.
        let g = Grid::build(2.0 / (1.0 + GRID_MARGIN), 2).unwrap();
        let curve = HazardCurve::new(g, vec![1.0, 2.0]);
        assert!((cumulative_hazard(1.5, 0.0, &curve).unwrap() - 2.0).abs() < 1e-12);
        // Proportionality in eta.
        let base = cumulative_hazard(1.5, 0.0, &curve).unwrap();
        let shifted = cumulative_hazard(1.5, 0.7, &curve).unwrap();
        assert!((shifted - base * 0.7f64.exp()).abs() < 1e-12);
        assert!(cumulative_hazard(2.5, 0.0, &curve).is_err());
    }

    #[test]
    fn survival_loglik_constant_hazard_closed_forms() {
        let lam = 0.6;
        let g = Grid::build(4.0 / (1.0 + GRID_MARGIN), 4).unwrap();
        let curve = HazardCurve::new(g, vec![lam; 4]);
        let t = 2.2;
        let censored = surv_loglik(t, 0, 0.0, &curve).unwrap();
        assert!((censored - (-lam * t)).abs() < 1e-12);
        let event = surv_loglik(t, 1, 0.0, &curve).unwrap();
        assert!((event - (lam.ln() - lam * t)).abs() < 1e-12);
    }

    #[test]
    fn event_density_integrates_to_one_on_the_grid() {
        // exp(surv_loglik(t, delta=1)) is a density on (0, horizon] with the
        // leftover mass surviving past the horizon.
        let g = Grid::build(2.0, 5).unwrap();
        let curve = HazardCurve::new(g, vec![0.4, 1.3, 0.1, 2.2, 0.8]);
        let eta = 0.25f64;
        let n = 2_000_000;
        let h = curve.grid().horizon() / n as f64;
        let mut mass = 0.0;
        for i in 0..n {
            let t = h * (i as f64 + 0.5);
            mass += surv_loglik(t, 1, eta, &curve).unwrap().exp() * h;
        }
        let tail = (-cumulative_hazard(curve.grid().horizon(), eta, &curve).unwrap()).exp();
        assert!((mass + tail - 1.0).abs() < 1e-6, "mass {mass} tail {tail}");
    }

    #[test]
    fn joint_is_the_sum_of_its_parts() {
        let g = Grid::build(2.0, 3).unwrap();
        let curve = HazardCurve::new(g, vec![0.5, 0.7, 0.9]);
        let s = subject();
        let cost = params();
        let surv = SurvParams { coef: vec![0.4, -0.2] };
        let eta = surv.eta(s.a, &s.l);
        let want = cost_loglik(CostModel::Gaussian, &cost, s.y, s.t, s.a, &s.l)
            + surv_loglik(s.t, s.delta, eta, &curve).unwrap();
        let got = joint_loglik(CostModel::Gaussian, &cost, &surv, &s, &curve).unwrap();
        assert!((got - want).abs() < 1e-14);
    }
}
