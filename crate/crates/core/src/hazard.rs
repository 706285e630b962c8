//! Dependent gamma-process prior on a piecewise-constant baseline hazard.
//!
//! Time is cut into V equal-width intervals (0, tau_1], (tau_1, tau_2], ...,
//! with tau_V just past the largest follow-up. The baseline hazard is constant
//! at lambda_v on interval v. The prior ties neighboring intervals through a
//! latent chain of Poisson counts u_v and exponential weights c_v:
//!
//! ```text
//! lambda_1             ~ Gamma(b * ls_1, b)
//! c_v                  ~ Exp(mean xi)
//! u_v | lambda_v, c_v  ~ Poisson(c_v * lambda_v)
//! lambda_{v+1} | u, c  ~ Gamma(b * ls_{v+1} + u_v, b + c_v)
//! ```
//!
//! where ls_v is the increment of a named centering hazard's cumulative over
//! interval v. Shapes are b-scaled and rates equal b plus chain terms, so
//! marginally E[lambda_v] = ls_v: the process is centered on the named hazard,
//! b controls dispersion around it, and xi controls neighbor coupling
//! (E[lambda_{v+1} | lambda_v, c_v] pulls toward lambda_v with weight
//! c_v / (b + c_v), so xi >> b gives a near-random-walk hazard while
//! xi -> 0 decouples the intervals).
//!
//! Conditional posteriors, from collecting the joint's factors in each
//! variable (a_v = b * ls_v; d_v deaths in interval v; r_v the at-risk
//! exposure sum_i exp(eta_i) * overlap((0, t_i], interval v)):
//!
//! ```text
//! c_v | .  (v<V)  ∝ c^{u_v} exp{-(lambda_v + lambda_{v+1} + 1/xi) c} (b+c)^{a_{v+1} + u_v}
//! c_V | .         ~ Gamma(u_V + 1, rate lambda_V + 1/xi)
//! u_v | .  (v<V)  ∝ [c_v lambda_v lambda_{v+1} (b + c_v)]^u / (u! * Gamma(a_{v+1} + u))
//! u_V | .         ~ Poisson(c_V lambda_V)
//! lambda_v | .    ~ Gamma(d_v + u_v + u_{v-1} + a_v, rate b + c_v + c_{v-1} + r_v)
//! ```
//!
//! (u_{v-1}, c_{v-1} terms drop at v = 1). The c_v step for v < V has no
//! closed form and uses adaptive random-walk Metropolis on log c with the
//! change-of-variables Jacobian; u_v is drawn exactly from its pmf normalized
//! over the capped grid {0, .., grid_cap}.

use rand::Rng;
use rand_distr::{Distribution, Exp, Gamma, Normal, Poisson};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::tuner::MhTuner;

/// Default cap for the u_v sampling grid.
pub const DEFAULT_GRID_CAP: u64 = 10_000;

/// Relative margin by which the grid horizon extends past the largest follow-up.
pub const GRID_MARGIN: f64 = 1e-6;

/// Named parametric hazard used to center the process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "family")]
pub enum CenteringHazard {
    /// Cumulative hazard `(t / scale)^shape`.
    Weibull { shape: f64, scale: f64 },
    /// Cumulative hazard `rate * t`.
    Exponential { rate: f64 },
}

impl CenteringHazard {
    pub fn cumulative(&self, t: f64) -> f64 {
        match *self {
            CenteringHazard::Weibull { shape, scale } => (t / scale).powf(shape),
            CenteringHazard::Exponential { rate } => rate * t,
        }
    }

    /// Cumulative-hazard increments over the grid intervals; these are the
    /// prior means of the interval rates.
    pub fn increments(&self, grid: &Grid) -> Vec<f64> {
        (0..grid.v())
            .map(|k| self.cumulative(grid.upper(k)) - self.cumulative(grid.lower(k)))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            CenteringHazard::Weibull { shape, scale } => {
                shape > 0.0 && scale > 0.0 && shape.is_finite() && scale.is_finite()
            }
            CenteringHazard::Exponential { rate } => rate > 0.0 && rate.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!("centering hazard parameters must be positive: {self:?}")))
        }
    }
}

/// Equal-width partition of (0, tau_V]. Interval k (0-based) is
/// (lower(k), upper(k)], and upper(V-1) = (1 + 1e-6) * max follow-up so every
/// observed time falls strictly inside the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    taus: Vec<f64>,
    width: f64,
}

impl Grid {
    pub fn build(max_t: f64, v: usize) -> Result<Grid> {
        if !(max_t.is_finite() && max_t > 0.0) {
            return Err(Error::validation(format!("grid needs a positive max time, got {max_t}")));
        }
        if v < 2 {
            return Err(Error::config(format!("grid needs V >= 2 intervals, got {v}")));
        }
        let horizon = (1.0 + GRID_MARGIN) * max_t;
        let width = horizon / v as f64;
        let mut taus: Vec<f64> = (1..=v).map(|k| width * k as f64).collect();
        taus[v - 1] = horizon; // pin the upper end exactly despite rounding
        Ok(Grid { taus, width })
    }

    pub fn v(&self) -> usize {
        self.taus.len()
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn upper(&self, k: usize) -> f64 {
        self.taus[k]
    }

    pub fn lower(&self, k: usize) -> f64 {
        if k == 0 {
            0.0
        } else {
            self.taus[k - 1]
        }
    }

    pub fn horizon(&self) -> f64 {
        self.taus[self.v() - 1]
    }

    pub fn taus(&self) -> &[f64] {
        &self.taus
    }

    /// 0-based interval containing `t`: the k with lower(k) < t <= upper(k).
    ///
    /// # Errors
    /// Domain error when `t <= 0` or `t` lies beyond the horizon.
    pub fn interval_of(&self, t: f64) -> Result<usize> {
        if !(t > 0.0 && t <= self.horizon()) {
            return Err(Error::validation(format!(
                "time {t} outside the hazard grid (0, {}]",
                self.horizon()
            )));
        }
        let mut k = ((t / self.width).ceil() as usize).saturating_sub(1).min(self.v() - 1);
        // Boundary rounding can be off by one step in either direction.
        while k > 0 && t <= self.taus[k - 1] {
            k -= 1;
        }
        while t > self.taus[k] {
            k += 1;
        }
        Ok(k)
    }
}

/// Deaths per interval.
pub fn death_counts(grid: &Grid, times: &[f64], deltas: &[u8]) -> Result<Vec<f64>> {
    let mut d = vec![0.0; grid.v()];
    for (&t, &delta) in times.iter().zip(deltas) {
        if delta == 1 {
            d[grid.interval_of(t)?] += 1.0;
        }
    }
    Ok(d)
}

/// At-risk exposure per interval: r_v = sum_i exp(eta_i) * overlap((0, t_i], v).
/// O(n + V): partial overlaps bin directly, full-width contributions come from
/// a suffix accumulation over follow-up intervals.
pub fn risk_sums(grid: &Grid, times: &[f64], etas: &[f64]) -> Result<Vec<f64>> {
    assert_eq!(times.len(), etas.len());
    let v = grid.v();
    let mut partial = vec![0.0; v];
    let mut ending = vec![0.0; v]; // total exp(eta) of subjects whose follow-up ends in k
    for (&t, &eta) in times.iter().zip(etas) {
        let w = eta.exp();
        if !w.is_finite() {
            return Err(Error::numeric("risk_sums", format!("exp(eta) overflowed for eta = {eta}")));
        }
        let k = grid.interval_of(t)?;
        partial[k] += w * (t - grid.lower(k));
        ending[k] += w;
    }
    let mut beyond = 0.0; // weight of subjects followed past interval k
    let mut risk = vec![0.0; v];
    for k in (0..v).rev() {
        risk[k] = partial[k] + beyond * (grid.upper(k) - grid.lower(k));
        beyond += ending[k];
    }
    Ok(risk)
}

/// Baseline hazard state: the step rates plus their latent dependence chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HazardState {
    grid: Grid,
    lambda_star: Vec<f64>,
    pub lambda: Vec<f64>,
    pub u: Vec<u64>,
    pub c: Vec<f64>,
    b: f64,
    xi: f64,
}

impl HazardState {
    /// Deterministic cold start at the prior center: lambda = lambda_star,
    /// u = 0, c = xi.
    pub fn new(grid: Grid, centering: &CenteringHazard, b: f64, xi: f64) -> Result<Self> {
        centering.validate()?;
        if !(b > 0.0 && b.is_finite()) {
            return Err(Error::config(format!("dispersion b must be positive and finite, got {b}")));
        }
        if !(xi > 0.0 && xi.is_finite()) {
            return Err(Error::config(format!("dependence xi must be positive and finite, got {xi}")));
        }
        let lambda_star = centering.increments(&grid);
        if lambda_star.iter().any(|&ls| !(ls > 0.0 && ls.is_finite())) {
            return Err(Error::config(format!(
                "centering increments must be positive and finite, got {lambda_star:?}"
            )));
        }
        let v = grid.v();
        Ok(HazardState {
            grid,
            lambda: lambda_star.clone(),
            lambda_star,
            u: vec![0; v],
            c: vec![xi; v],
            b,
            xi,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn lambda_star(&self) -> &[f64] {
        &self.lambda_star
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn xi(&self) -> f64 {
        self.xi
    }

    /// Immutable snapshot with interval prefix sums for O(1) cumulative-hazard
    /// evaluation.
    pub fn curve(&self) -> HazardCurve {
        HazardCurve::new(self.grid.clone(), self.lambda.clone())
    }

    /// One sweep over the c chain: adaptive random-walk MH on log c_v for
    /// v < V, exact gamma draw for the terminal c_V. `tuner` must have one
    /// coordinate per interval; only the MH coordinates record outcomes.
    pub fn update_c<R: Rng>(&mut self, rng: &mut R, tuner: &mut MhTuner) {
        assert_eq!(tuner.dim(), self.grid.v());
        let v = self.grid.v();
        for k in 0..v - 1 {
            let shape_next = self.b * self.lambda_star[k + 1] + self.u[k] as f64;
            let rate = self.lambda[k] + self.lambda[k + 1] + 1.0 / self.xi;
            let (u_k, b) = (self.u[k] as f64, self.b);
            let log_target = move |c: f64| u_k * c.ln() - rate * c + shape_next * (b + c).ln();
            let cur = self.c[k];
            let step: f64 = Normal::new(0.0, tuner.sd(k)).expect("positive sd").sample(rng);
            let prop = (cur.ln() + step).exp();
            // log-scale walk: Jacobian contributes ln(prop) - ln(cur)
            let log_ratio = log_target(prop) - log_target(cur) + prop.ln() - cur.ln();
            let accept = prop > 0.0
                && prop.is_finite()
                && (log_ratio >= 0.0 || rng.gen::<f64>().ln() < log_ratio);
            if accept {
                self.c[k] = prop;
            }
            tuner.record(k, accept);
        }
        // Terminal coordinate: c_V ~ Gamma(u_V + 1, rate lambda_V + 1/xi).
        let shape = self.u[v - 1] as f64 + 1.0;
        let rate = self.lambda[v - 1] + 1.0 / self.xi;
        let draw = Gamma::new(shape, 1.0 / rate).expect("valid gamma").sample(rng);
        self.c[v - 1] = draw.max(f64::MIN_POSITIVE);
    }

    /// One sweep over the u chain: exact grid draw for v < V, Poisson for v = V.
    pub fn update_u<R: Rng>(&mut self, rng: &mut R, grid_cap: u64) -> Result<()> {
        let v = self.grid.v();
        for k in 0..v - 1 {
            let arg = self.c[k] * self.lambda[k] * self.lambda[k + 1] * (self.b + self.c[k]);
            let a = self.b * self.lambda_star[k + 1];
            self.u[k] = sample_u_grid(rng, arg, a, grid_cap)?;
        }
        let mean = self.c[v - 1] * self.lambda[v - 1];
        self.u[v - 1] = poisson_draw(rng, mean, "update_u")? as u64;
        Ok(())
    }

    /// Draws every interval rate from its gamma conditional, in index order.
    /// `d` are per-interval death counts and `risk` the per-interval at-risk
    /// exposures (zero vectors for a prior-only cycle).
    pub fn update_lambda<R: Rng>(&mut self, rng: &mut R, d: &[f64], risk: &[f64]) -> Result<()> {
        let v = self.grid.v();
        assert_eq!(d.len(), v);
        assert_eq!(risk.len(), v);
        for k in 0..v {
            let mut shape = d[k] + self.u[k] as f64 + self.b * self.lambda_star[k];
            let mut rate = self.b + self.c[k] + risk[k];
            if k > 0 {
                shape += self.u[k - 1] as f64;
                rate += self.c[k - 1];
            }
            if !(shape > 0.0 && rate > 0.0 && shape.is_finite() && rate.is_finite()) {
                return Err(Error::numeric(
                    "update_lambda",
                    format!(
                        "invalid Gamma(shape {shape}, rate {rate}) at interval {k}: \
                         d={}, u={:?}, c={:?}, risk={}",
                        d[k], self.u, self.c, risk[k]
                    ),
                ));
            }
            let draw = Gamma::new(shape, 1.0 / rate)
                .map_err(|e| Error::numeric("update_lambda", e.to_string()))?
                .sample(rng);
            // Tiny shapes can underflow to zero; keep the rate positive.
            self.lambda[k] = draw.max(f64::MIN_POSITIVE);
        }
        Ok(())
    }

    /// Full conditional cycle c -> u -> lambda.
    pub fn gibbs_cycle<R: Rng>(
        &mut self,
        rng: &mut R,
        tuner: &mut MhTuner,
        grid_cap: u64,
        d: &[f64],
        risk: &[f64],
    ) -> Result<()> {
        self.update_c(rng, tuner);
        self.update_u(rng, grid_cap)?;
        self.update_lambda(rng, d, risk)
    }
}

/// Exact draw from the pmf p(u) ∝ arg^u / (u! * Gamma(a + u)) on {0..cap}.
///
/// Terms are evaluated relative to the modal term via the multiplicative
/// recursion t_{u+1}/t_u = arg / ((u+1)(a+u)), expanding outward from the mode
/// until terms vanish in f64 (those terms are exactly zero after scaling, so
/// the normalization over the full grid is preserved).
fn sample_u_grid<R: Rng>(rng: &mut R, arg: f64, a: f64, cap: u64) -> Result<u64> {
    if arg == 0.0 {
        return Ok(0);
    }
    if !(arg > 0.0 && arg.is_finite() && a > 0.0) {
        return Err(Error::numeric(
            "sample_u_grid",
            format!("invalid pmf parameters arg = {arg}, a = {a}"),
        ));
    }
    // Mode: largest u with (u+1)(a+u) <= arg, from the ratio recursion.
    let disc = (a + 1.0) * (a + 1.0) - 4.0 * (a - arg);
    let mode = if disc <= 0.0 {
        0
    } else {
        let root = (-(a + 1.0) + disc.sqrt()) / 2.0;
        (root.max(0.0).floor() as u64).min(cap)
    };
    let ratio = |u: u64| arg / ((u as f64 + 1.0) * (a + u as f64));

    // Scaled weights, modal term = 1. Support typically spans a few dozen u.
    let mut us: Vec<u64> = Vec::with_capacity(64);
    let mut ws: Vec<f64> = Vec::with_capacity(64);
    us.push(mode);
    ws.push(1.0);
    let mut w = 1.0;
    let mut u = mode;
    while u > 0 {
        w /= ratio(u - 1);
        if w == 0.0 || !w.is_finite() {
            break;
        }
        u -= 1;
        us.push(u);
        ws.push(w);
    }
    us.reverse();
    ws.reverse();
    w = 1.0;
    u = mode;
    while u < cap {
        w *= ratio(u);
        if w == 0.0 || !w.is_finite() {
            break;
        }
        u += 1;
        us.push(u);
        ws.push(w);
    }

    let total: f64 = ws.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::numeric(
            "sample_u_grid",
            format!("pmf normalization failed (total {total}) for arg = {arg}, a = {a}"),
        ));
    }
    let x = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    for (&uu, &ww) in us.iter().zip(&ws) {
        acc += ww;
        if x < acc {
            return Ok(uu);
        }
    }
    Ok(*us.last().expect("nonempty support"))
}

/// Log of the normalized pmf over {0..cap}, for density-comparison tests and
/// diagnostics. Independent callers can cross-check sampled frequencies.
pub fn u_conditional_log_pmf(arg: f64, a: f64, cap: u64, u: u64) -> f64 {
    if arg == 0.0 {
        return if u == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    let term =
        |k: u64| k as f64 * arg.ln() - ln_gamma(k as f64 + 1.0) - ln_gamma(a + k as f64);
    let max = (0..=cap).map(term).fold(f64::NEG_INFINITY, f64::max);
    let log_z = max + (0..=cap).map(|k| (term(k) - max).exp()).sum::<f64>().ln();
    term(u) - log_z
}

/// Poisson draw that tolerates extreme means. rand_distr returns -1 for
/// subnormal means, and means below 1e-12 put P(X >= 1) under f64 noise, so
/// both collapse to an exact 0.
fn poisson_draw<R: Rng>(rng: &mut R, mean: f64, context: &str) -> Result<f64> {
    if mean < 1e-12 {
        return Ok(0.0);
    }
    let x: f64 = Poisson::new(mean)
        .map_err(|_| Error::numeric(context, format!("invalid Poisson mean {mean}")))?
        .sample(rng);
    Ok(x.max(0.0))
}

/// Forward-simulated prior hazard paths (lambda_1..lambda_V per path).
pub fn prior_predictive_draws<R: Rng>(
    lambda_star: &[f64],
    b: f64,
    xi: f64,
    count: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    if lambda_star.is_empty() {
        return Err(Error::config("prior predictive needs at least one interval"));
    }
    let exp = Exp::new(1.0 / xi).map_err(|_| Error::config(format!("invalid xi {xi}")))?;
    let mut paths = Vec::with_capacity(count);
    for _ in 0..count {
        let mut path = Vec::with_capacity(lambda_star.len());
        let first = Gamma::new(b * lambda_star[0], 1.0 / b)
            .map_err(|e| Error::numeric("prior_predictive", e.to_string()))?
            .sample(rng)
            .max(f64::MIN_POSITIVE);
        path.push(first);
        for ls in &lambda_star[1..] {
            let lam = *path.last().expect("nonempty");
            let c: f64 = exp.sample(rng);
            let u = poisson_draw(rng, c * lam, "prior_predictive")?;
            let next = Gamma::new(b * ls + u, 1.0 / (b + c))
                .map_err(|e| Error::numeric("prior_predictive", e.to_string()))?
                .sample(rng)
                .max(f64::MIN_POSITIVE);
            path.push(next);
        }
        paths.push(path);
    }
    Ok(paths)
}

/// Step-hazard snapshot with prefix sums: cum[k] is the baseline cumulative
/// hazard at upper(k), so baseline evaluation at any t is O(1).
#[derive(Debug, Clone, PartialEq)]
pub struct HazardCurve {
    grid: Grid,
    lambda: Vec<f64>,
    cum: Vec<f64>,
}

impl HazardCurve {
    pub fn new(grid: Grid, lambda: Vec<f64>) -> Self {
        assert_eq!(grid.v(), lambda.len());
        let mut cum = Vec::with_capacity(lambda.len());
        let mut acc = 0.0;
        for (k, &lam) in lambda.iter().enumerate() {
            acc += lam * (grid.upper(k) - grid.lower(k));
            cum.push(acc);
        }
        HazardCurve { grid, lambda, cum }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    /// Baseline hazard level at `t`.
    pub fn lambda_at(&self, t: f64) -> Result<f64> {
        Ok(self.lambda[self.grid.interval_of(t)?])
    }

    /// Baseline cumulative hazard at `t`.
    pub fn cumulative0(&self, t: f64) -> Result<f64> {
        let k = self.grid.interval_of(t)?;
        let below = if k == 0 { 0.0 } else { self.cum[k - 1] };
        Ok(below + self.lambda[k] * (t - self.grid.lower(k)))
    }

    /// Baseline survival at the horizon.
    pub fn survival0_horizon(&self) -> f64 {
        (-self.cum[self.cum.len() - 1]).exp()
    }

    /// Restricted mean survival time E[min(T, horizon)] for linear predictor
    /// `eta`, via the closed form sum_v S(lower(v)) * (1 - e^{-x_v}) / rate_v
    /// with x_v = lambda_v e^eta * width_v (interval-wise exponential pieces).
    pub fn restricted_mean(&self, eta: f64) -> f64 {
        let e = eta.exp();
        let mut total = 0.0;
        let mut log_s: f64 = 0.0; // log survival at interval lower edge
        for k in 0..self.grid.v() {
            let width = self.grid.upper(k) - self.grid.lower(k);
            let rate = self.lambda[k] * e;
            let x = rate * width;
            // (1 - e^{-x}) / rate, stable as x -> 0 where it tends to width.
            let piece = if x < 1e-12 { width * (1.0 - x / 2.0) } else { (-(-x).exp_m1()) / rate };
            total += log_s.exp() * piece;
            log_s -= x;
        }
        total
    }

    /// Samples an event time from the step-hazard model with linear predictor
    /// `eta`; `None` when the subject outlives the horizon.
    pub fn sample_time<R: Rng>(&self, eta: f64, rng: &mut R) -> Option<f64> {
        let target = -rng.gen::<f64>().ln() * (-eta).exp(); // Exp(1) / e^eta
        let v = self.grid.v();
        if target > self.cum[v - 1] {
            return None;
        }
        let k = self.cum.partition_point(|&c| c < target).min(v - 1);
        let below = if k == 0 { 0.0 } else { self.cum[k - 1] };
        let t = self.grid.lower(k) + (target - below) / self.lambda[k];
        Some(t.clamp(f64::MIN_POSITIVE, self.grid.upper(k)))
    }
}
