//! Run configuration: documented keys, defaults, and the flat key-value file
//! format.
//!
//! Config files hold one `key = value` pair per line; `#` starts a comment and
//! blank lines are ignored. Every key has a default, so an empty (or absent)
//! file is a valid configuration. Unknown and duplicated keys are rejected
//! rather than silently ignored. [`RunConfig::echo`] renders the effective
//! configuration as a sorted key-value map; every output artifact embeds that
//! echo so results carry their provenance.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::data::CostModel;
use crate::error::{Error, Result};
use crate::hazard::CenteringHazard;

/// Where the base measure gets its centering vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Centering {
    /// Zero centers with variances scaled off the data (flat).
    Null,
    /// Caller-supplied centers via `beta_center` / `theta_center`.
    User,
    /// Cost center from an internal least-squares fit; survival center
    /// caller-supplied or zero.
    Ols,
}

impl FromStr for Centering {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "null" => Ok(Centering::Null),
            "user" => Ok(Centering::User),
            "ols" => Ok(Centering::Ols),
            other => Err(Error::config(format!(
                "unknown centering '{other}' (expected 'null', 'user', or 'ols')"
            ))),
        }
    }
}

/// Centering-hazard family for the baseline prior.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LambdaStarFamily {
    Exponential,
    Weibull,
}

impl FromStr for LambdaStarFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exponential" => Ok(LambdaStarFamily::Exponential),
            "weibull" => Ok(LambdaStarFamily::Weibull),
            other => Err(Error::config(format!(
                "unknown lambda_star_family '{other}' (expected 'exponential' or 'weibull')"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Total MCMC iterations (burn-in included).
    pub iters: usize,
    pub burnin: usize,
    pub thin: usize,
    pub seed: u64,
    /// Hazard grid intervals; 0 selects min(50, #distinct event times),
    /// floored at 2.
    pub v: usize,
    pub b: f64,
    pub xi: f64,
    pub lambda_star_family: LambdaStarFamily,
    /// Family parameters: empty means data-driven (exponential rate = crude
    /// event rate); exponential takes `rate`, weibull takes `shape,scale`.
    pub lambda_star_params: Vec<f64>,
    pub nu_theta: f64,
    pub nu_omega: f64,
    pub a_0: f64,
    pub centering: Centering,
    pub cost_model: CostModel,
    /// Willingness-to-pay used for the stored per-draw net-benefit contrasts.
    pub kappa: f64,
    pub kappa_grid: Vec<f64>,
    pub add_intercept: bool,
    /// Cap of the latent-count sampling grid.
    pub grid_cap: u64,
    /// Iterations between proposal-scale adaptations during burn-in.
    pub mh_window: usize,
    /// Survival centering coefficients (a, l_1..l_q), for centering = user/ols.
    pub theta_center: Option<Vec<f64>>,
    /// Cost centering coefficients (t, a, l_1..l_q), for centering = user.
    pub beta_center: Option<Vec<f64>>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            iters: 2000,
            burnin: 1000,
            thin: 2,
            seed: 17,
            v: 0,
            b: 1e-6,
            xi: 1e-3,
            lambda_star_family: LambdaStarFamily::Exponential,
            lambda_star_params: Vec::new(),
            nu_theta: 100.0,
            nu_omega: 100.0,
            a_0: 2.0,
            centering: Centering::Null,
            cost_model: CostModel::Gaussian,
            kappa: 1.0,
            kappa_grid: (0..=10).map(|i| i as f64 * 0.2).collect(),
            add_intercept: false,
            grid_cap: crate::hazard::DEFAULT_GRID_CAP,
            mh_window: 50,
            theta_center: None,
            beta_center: None,
        }
    }
}

impl RunConfig {
    /// Parses a config file and validates the result.
    pub fn from_file(path: impl AsRef<Path>) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path.as_ref())?;
        let mut cfg = RunConfig::default();
        let mut seen = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(format!("line {}: expected 'key = value', got '{line}'", lineno + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            if seen.contains(&key.to_string()) {
                return Err(Error::config(format!("line {}: duplicate key '{key}'", lineno + 1)));
            }
            seen.push(key.to_string());
            cfg.set(key, value)
                .map_err(|e| Error::config(format!("line {}: {e}", lineno + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies one key-value override (the CLI flag path uses this too).
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "iters" => self.iters = parse_num(key, value)?,
            "burnin" => self.burnin = parse_num(key, value)?,
            "thin" => self.thin = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "V" => self.v = parse_num(key, value)?,
            "b" => self.b = parse_num(key, value)?,
            "xi" => self.xi = parse_num(key, value)?,
            "lambda_star_family" => self.lambda_star_family = value.parse()?,
            "lambda_star_params" => self.lambda_star_params = parse_list(key, value)?,
            "nu_theta" => self.nu_theta = parse_num(key, value)?,
            "nu_omega" => self.nu_omega = parse_num(key, value)?,
            "a_0" => self.a_0 = parse_num(key, value)?,
            "centering" => self.centering = value.parse()?,
            "cost_model" => self.cost_model = value.parse()?,
            "kappa" => self.kappa = parse_num(key, value)?,
            "kappa_grid" => self.kappa_grid = parse_list(key, value)?,
            "add_intercept" => self.add_intercept = parse_bool(key, value)?,
            "grid_cap" => self.grid_cap = parse_num(key, value)?,
            "mh_window" => self.mh_window = parse_num(key, value)?,
            "theta_center" => self.theta_center = Some(parse_list(key, value)?),
            "beta_center" => self.beta_center = Some(parse_list(key, value)?),
            other => return Err(Error::config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::config(msg));
        if self.iters == 0 {
            return fail("iters must be positive".into());
        }
        if self.burnin >= self.iters {
            return fail(format!("burnin ({}) must be below iters ({})", self.burnin, self.iters));
        }
        if self.thin == 0 {
            return fail("thin must be at least 1".into());
        }
        if self.v == 1 {
            return fail("V must be 0 (auto) or at least 2".into());
        }
        if !(self.b > 0.0 && self.b.is_finite()) {
            return fail(format!("b must be positive and finite, got {}", self.b));
        }
        if !(self.xi > 0.0 && self.xi.is_finite()) {
            return fail(format!("xi must be positive and finite, got {}", self.xi));
        }
        match self.lambda_star_family {
            LambdaStarFamily::Exponential => {
                if self.lambda_star_params.len() > 1 {
                    return fail("exponential lambda_star takes at most one parameter (rate)".into());
                }
            }
            LambdaStarFamily::Weibull => {
                if self.lambda_star_params.len() != 2 {
                    return fail("weibull lambda_star needs exactly two parameters (shape, scale)".into());
                }
            }
        }
        if self.lambda_star_params.iter().any(|p| !((*p) > 0.0 && p.is_finite())) {
            return fail(format!("lambda_star_params must be positive: {:?}", self.lambda_star_params));
        }
        for (name, v) in [("nu_theta", self.nu_theta), ("nu_omega", self.nu_omega)] {
            if !(v > 0.0 && v.is_finite()) {
                return fail(format!("{name} must be positive and finite, got {v}"));
            }
        }
        if !(self.a_0 > 1.0 && self.a_0.is_finite()) {
            return fail(format!("a_0 must exceed 1 (finite base-measure mean), got {}", self.a_0));
        }
        if !self.kappa.is_finite() || self.kappa < 0.0 {
            return fail(format!("kappa must be finite and nonnegative, got {}", self.kappa));
        }
        if self.kappa_grid.is_empty() {
            return fail("kappa_grid must have at least one value".into());
        }
        if self.kappa_grid.iter().any(|k| !k.is_finite() || *k < 0.0) {
            return fail(format!("kappa_grid values must be finite and nonnegative: {:?}", self.kappa_grid));
        }
        if self.grid_cap == 0 {
            return fail("grid_cap must be positive".into());
        }
        if self.mh_window == 0 {
            return fail("mh_window must be positive".into());
        }
        Ok(())
    }

    /// Resolved interval count for a dataset: explicit V, or
    /// min(50, #distinct event times) floored at 2.
    pub fn resolve_v(&self, distinct_event_times: usize) -> usize {
        if self.v >= 2 {
            self.v
        } else {
            distinct_event_times.min(50).max(2)
        }
    }

    /// Centering hazard for a dataset. The data-driven exponential default
    /// uses the crude event rate (#events / total follow-up).
    pub fn centering_hazard(&self, n_events: usize, total_followup: f64) -> Result<CenteringHazard> {
        match self.lambda_star_family {
            LambdaStarFamily::Exponential => {
                let rate = match self.lambda_star_params.first() {
                    Some(&r) => r,
                    None => {
                        if n_events == 0 || total_followup <= 0.0 {
                            return Err(Error::validation(
                                "data-driven exponential centering needs at least one event",
                            ));
                        }
                        n_events as f64 / total_followup
                    }
                };
                Ok(CenteringHazard::Exponential { rate })
            }
            LambdaStarFamily::Weibull => Ok(CenteringHazard::Weibull {
                shape: self.lambda_star_params[0],
                scale: self.lambda_star_params[1],
            }),
        }
    }

    /// The effective configuration as sorted key-value text pairs.
    pub fn echo(&self) -> BTreeMap<String, String> {
        let fmt_list =
            |xs: &[f64]| xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let mut m = BTreeMap::new();
        m.insert("iters".into(), self.iters.to_string());
        m.insert("burnin".into(), self.burnin.to_string());
        m.insert("thin".into(), self.thin.to_string());
        m.insert("seed".into(), self.seed.to_string());
        m.insert("V".into(), self.v.to_string());
        m.insert("b".into(), self.b.to_string());
        m.insert("xi".into(), self.xi.to_string());
        m.insert(
            "lambda_star_family".into(),
            match self.lambda_star_family {
                LambdaStarFamily::Exponential => "exponential".into(),
                LambdaStarFamily::Weibull => "weibull".to_string(),
            },
        );
        m.insert("lambda_star_params".into(), fmt_list(&self.lambda_star_params));
        m.insert("nu_theta".into(), self.nu_theta.to_string());
        m.insert("nu_omega".into(), self.nu_omega.to_string());
        m.insert("a_0".into(), self.a_0.to_string());
        m.insert(
            "centering".into(),
            match self.centering {
                Centering::Null => "null",
                Centering::User => "user",
                Centering::Ols => "ols",
            }
            .into(),
        );
        m.insert("cost_model".into(), self.cost_model.to_string());
        m.insert("kappa".into(), self.kappa.to_string());
        m.insert("kappa_grid".into(), fmt_list(&self.kappa_grid));
        m.insert("add_intercept".into(), self.add_intercept.to_string());
        m.insert("grid_cap".into(), self.grid_cap.to_string());
        m.insert("mh_window".into(), self.mh_window.to_string());
        if let Some(tc) = &self.theta_center {
            m.insert("theta_center".into(), fmt_list(tc));
        }
        if let Some(bc) = &self.beta_center {
            m.insert("beta_center".into(), fmt_list(bc));
        }
        m
    }
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse::<T>()
        .map_err(|_| Error::config(format!("key '{key}': cannot parse '{value}'")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<f64>> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|part| parse_num(key, part.trim())).collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        other => Err(Error::config(format!("key '{key}': expected a boolean, got '{other}'"))),
    }
}
