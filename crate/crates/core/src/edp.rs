//! Nested two-level mixture over subject-specific effect parameters.
//!
//! The outer level clusters subjects on cost parameters omega = (beta, phi);
//! nested inside each outer cluster, an inner level clusters on hazard
//! coefficients theta. A subject's assignment is the pair (j, k). Membership
//! is resampled one subject at a time with a single auxiliary proposal per
//! "new" option; after removing subject i the unnormalized weights are
//!
//!   existing (j,k):  n_j n_jk / (n_j + alpha_theta) * p(y, t | omega_j, theta_jk)
//!   new k inside j:  n_j alpha_theta / (n_j + alpha_theta) * p(y, t | omega_j, theta~)
//!   new (j,k):       alpha_omega * p(y, t | omega~, theta~)
//!
//! with counts taken without subject i and tilde parameters drawn fresh from
//! the base measure — except that parameters freed by removing a singleton
//! stay on as the freed slot's own proposal, which is what keeps the sweep a
//! valid kernel with one auxiliary per option. Weights are normalized after
//! subtracting the max log term, so shifting every log-likelihood by a
//! constant cannot change the draw.
//!
//! Cost parameters are conjugate (independent normal prior on beta, inverse
//! gamma on phi, Gaussian likelihood on the model scale), so clusters are
//! refreshed with exact Gibbs draws. Hazard coefficients have no conjugate
//! pair; each subcluster takes one coordinate-wise random-walk MH pass whose
//! proposal scales live in a tuner shared across subclusters. Concentration
//! parameters carry Gam(1,1) priors: alpha_omega uses the beta-augmentation
//! scheme (mixture of two gammas given an auxiliary beta variable), and
//! alpha_theta takes a log-scale random-walk MH step on its conditional
//!   Gam(1,1)(a) * prod_j a^{K_j} Gamma(a) / Gamma(a + n_j).
//!
//! Cluster ids are arena slots, recycled on deletion; nothing here tries to
//! give ids cross-iteration meaning.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::{Beta, Distribution, Gamma, StandardNormal};
use statrs::function::gamma::ln_gamma;

use crate::config::{Centering, RunConfig};
use crate::data::{CostModel, Dataset, Subject};
use crate::error::{Error, Result};
use crate::hazard::HazardCurve;
use crate::likelihood::{cost_loglik, surv_loglik, CostParams, SurvParams};
use crate::tuner::MhTuner;

/// Gam(shape, rate) prior shared by both concentration parameters.
pub const CONC_PRIOR_SHAPE: f64 = 1.0;
pub const CONC_PRIOR_RATE: f64 = 1.0;

/// Variance floor for empirically centered coefficient priors, so a noiseless
/// least-squares fit still yields a proper base measure.
const OLS_COV_FLOOR: f64 = 1e-10;

/// Independent product base measure the cluster parameters are drawn from:
/// beta ~ N(beta_center, diag beta_cov), phi ~ InvGamma(phi_shape, phi_scale),
/// theta ~ N(theta_center, diag theta_cov).
#[derive(Debug, Clone, PartialEq)]
pub struct BaseMeasure {
    pub beta_center: Vec<f64>,
    pub beta_cov: Vec<f64>,
    pub phi_shape: f64,
    pub phi_scale: f64,
    pub theta_center: Vec<f64>,
    pub theta_cov: Vec<f64>,
}

impl BaseMeasure {
    pub fn validate(&self) -> Result<()> {
        if self.beta_center.len() != self.beta_cov.len() {
            return Err(Error::config("base measure: beta center/cov length mismatch"));
        }
        if self.theta_center.len() != self.theta_cov.len() {
            return Err(Error::config("base measure: theta center/cov length mismatch"));
        }
        let pos = |v: &[f64]| v.iter().all(|x| x.is_finite() && *x > 0.0);
        if !pos(&self.beta_cov) || !pos(&self.theta_cov) {
            return Err(Error::config("base measure: covariance entries must be positive"));
        }
        if !(self.phi_shape > 0.0) || !(self.phi_scale > 0.0) {
            return Err(Error::config("base measure: inverse-gamma parameters must be positive"));
        }
        Ok(())
    }

    pub fn sample_cost<R: Rng>(&self, rng: &mut R) -> CostParams {
        let beta = self
            .beta_center
            .iter()
            .zip(&self.beta_cov)
            .map(|(m, v)| {
                let z: f64 = StandardNormal.sample(rng);
                m + v.sqrt() * z
            })
            .collect();
        CostParams { beta, phi: self.sample_phi(rng) }
    }

    /// phi ~ InvGamma(shape, scale): the reciprocal of a Gamma(shape, rate = scale) draw.
    pub fn sample_phi<R: Rng>(&self, rng: &mut R) -> f64 {
        let g = Gamma::new(self.phi_shape, 1.0 / self.phi_scale)
            .expect("validated inverse-gamma parameters")
            .sample(rng);
        (1.0 / g).clamp(f64::MIN_POSITIVE, 1e300)
    }

    pub fn sample_surv<R: Rng>(&self, rng: &mut R) -> SurvParams {
        let coef = self
            .theta_center
            .iter()
            .zip(&self.theta_cov)
            .map(|(m, v)| {
                let z: f64 = StandardNormal.sample(rng);
                m + v.sqrt() * z
            })
            .collect();
        SurvParams { coef }
    }

    /// Log-density change of the theta prior when coordinate `c` moves.
    fn surv_log_prior_delta(&self, c: usize, cur: f64, prop: f64) -> f64 {
        let m = self.theta_center[c];
        let v = self.theta_cov[c];
        ((cur - m) * (cur - m) - (prop - m) * (prop - m)) / (2.0 * v)
    }
}

/// Design rows (t, a, l_1..l_q) and the model-scale responses (y, or ln y).
pub fn cost_design(data: &Dataset, model: CostModel) -> (Vec<Vec<f64>>, Vec<f64>) {
    let rows = data
        .subjects()
        .iter()
        .map(|s| {
            let mut r = Vec::with_capacity(2 + s.l.len());
            r.push(s.t);
            r.push(s.a as f64);
            r.extend_from_slice(&s.l);
            r
        })
        .collect();
    let ys = data
        .subjects()
        .iter()
        .map(|s| match model {
            CostModel::Gaussian => s.y,
            CostModel::LogNormal => s.y.ln(),
        })
        .collect();
    (rows, ys)
}

/// Design rows (a, l_1..l_q) for the hazard linear predictor.
pub fn surv_design(data: &Dataset) -> Vec<Vec<f64>> {
    data.subjects()
        .iter()
        .map(|s| {
            let mut r = Vec::with_capacity(1 + s.l.len());
            r.push(s.a as f64);
            r.extend_from_slice(&s.l);
            r
        })
        .collect()
}

/// Builds the base measure from the data and config. Returns the measure and
/// whether an `ols` request fell back to null centering (singular design or
/// too few rows for a residual variance).
pub fn build_base_measure(data: &Dataset, cfg: &RunConfig) -> Result<(BaseMeasure, bool)> {
    let p = CostParams::dim(data.q());
    let d = SurvParams::dim(data.q());
    let (rows, ys) = cost_design(data, cfg.cost_model);
    let (_, s2) = crate::diag::mean_var(&ys);
    if !(s2 > 0.0) {
        return Err(Error::validation("cost responses are constant; no scale to center on"));
    }

    let theta_center = match &cfg.theta_center {
        Some(c) if cfg.centering == Centering::Null => {
            return Err(Error::config(format!(
                "theta_center (length {}) conflicts with centering = null",
                c.len()
            )));
        }
        Some(c) => {
            if c.len() != d {
                return Err(Error::config(format!(
                    "theta_center has length {}, expected {} (a, l_1..l_q)",
                    c.len(),
                    d
                )));
            }
            c.clone()
        }
        None => vec![0.0; d],
    };

    let mut fell_back = false;
    let (beta_center, beta_cov) = match cfg.centering {
        Centering::Null | Centering::User => {
            let center = match &cfg.beta_center {
                Some(c) if cfg.centering == Centering::Null => {
                    return Err(Error::config(format!(
                        "beta_center (length {}) conflicts with centering = null",
                        c.len()
                    )));
                }
                Some(c) => {
                    if c.len() != p {
                        return Err(Error::config(format!(
                            "beta_center has length {}, expected {} (t, a, l_1..l_q)",
                            c.len(),
                            p
                        )));
                    }
                    c.clone()
                }
                None => vec![0.0; p],
            };
            (center, vec![cfg.nu_omega * s2; p])
        }
        Centering::Ols => {
            if cfg.beta_center.is_some() {
                return Err(Error::config(
                    "beta_center conflicts with centering = ols (the center is estimated)",
                ));
            }
            match ols_center(&rows, &ys, p, cfg.nu_omega) {
                Some(pair) => pair,
                None => {
                    fell_back = true;
                    (vec![0.0; p], vec![cfg.nu_omega * s2; p])
                }
            }
        }
    };

    let base = BaseMeasure {
        beta_center,
        beta_cov,
        phi_shape: cfg.a_0,
        phi_scale: s2 * (cfg.a_0 + 1.0),
        theta_center,
        theta_cov: vec![cfg.nu_theta; d],
    };
    base.validate()?;
    Ok((base, fell_back))
}

/// Least-squares center and nu-scaled squared standard errors, or None when
/// the design is rank deficient or has no residual degrees of freedom.
fn ols_center(rows: &[Vec<f64>], ys: &[f64], p: usize, nu: f64) -> Option<(Vec<f64>, Vec<f64>)> {
    let n = rows.len();
    if n <= p {
        return None;
    }
    let x = DMatrix::from_fn(n, p, |r, c| rows[r][c]);
    let yv = DVector::from_column_slice(ys);
    let svd = x.clone().svd(true, true);
    let max_sv = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    if !(max_sv > 0.0) {
        return None;
    }
    let eps = max_sv * (n.max(p) as f64) * f64::EPSILON;
    if svd.rank(eps) < p {
        return None;
    }
    let beta = svd.solve(&yv, eps).ok()?;
    let rss = (&yv - &x * &beta).norm_squared();
    let sigma2 = rss / (n - p) as f64;
    // diag of (X'X)^{-1} from the SVD factors: sum_m V[k,m]^2 / s_m^2.
    let vt = svd.v_t.as_ref()?;
    let sv = &svd.singular_values;
    let cov = (0..p)
        .map(|k| {
            let xtx_inv_kk: f64 = (0..sv.len()).map(|m| vt[(m, k)].powi(2) / (sv[m] * sv[m])).sum();
            (nu * sigma2 * xtx_inv_kk).max(OLS_COV_FLOOR)
        })
        .collect();
    Some((beta.iter().copied().collect(), cov))
}

struct ThetaSub {
    theta: SurvParams,
    count: usize,
}

struct OmegaCluster {
    omega: CostParams,
    count: usize,
    subs: Vec<Option<ThetaSub>>,
}

/// What removing a subject freed up, if anything. Freed parameters become the
/// removal sweep's proposals for the matching "new" option.
enum Removal {
    Kept,
    FreedTheta { j: usize, theta: SurvParams },
    FreedPair { omega: CostParams, theta: SurvParams },
}

/// A membership option for one subject: an occupied pair, a fresh subcluster
/// inside an occupied outer cluster, or a fresh pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Candidate {
    Existing { j: usize, k: usize },
    NewSub { j: usize },
    NewPair,
}

/// Mixture state: per-subject assignments, parameter tables keyed by arena
/// slot, and the two concentration parameters. Zero concentrations are
/// tolerated as degenerate fixtures (they disable the matching "new" options);
/// the concentration updates themselves keep the values positive.
pub struct EdpState {
    assign: Vec<(usize, usize)>,
    clusters: Vec<Option<OmegaCluster>>,
    pub alpha_omega: f64,
    pub alpha_theta: f64,
}

const UNASSIGNED: usize = usize::MAX;

impl EdpState {
    /// Cold start: every subject in one cluster whose parameters come from the base.
    pub fn init<R: Rng>(
        n: usize,
        alpha_omega: f64,
        alpha_theta: f64,
        base: &BaseMeasure,
        rng: &mut R,
    ) -> EdpState {
        assert!(n >= 1, "state needs at least one subject");
        let cluster = OmegaCluster {
            omega: base.sample_cost(rng),
            count: n,
            subs: vec![Some(ThetaSub { theta: base.sample_surv(rng), count: n })],
        };
        EdpState {
            assign: vec![(0, 0); n],
            clusters: vec![Some(cluster)],
            alpha_omega,
            alpha_theta,
        }
    }

    pub fn n(&self) -> usize {
        self.assign.len()
    }

    pub fn assignments(&self) -> &[(usize, usize)] {
        &self.assign
    }

    /// Number of occupied outer clusters (J).
    pub fn num_clusters(&self) -> usize {
        self.clusters.iter().flatten().count()
    }

    /// (K_j, n_j) per occupied outer cluster, in slot order.
    pub fn occupancy(&self) -> Vec<(usize, usize)> {
        self.clusters
            .iter()
            .flatten()
            .map(|cl| (cl.subs.iter().flatten().count(), cl.count))
            .collect()
    }

    /// (slot, params, n_j) per occupied outer cluster.
    pub fn omega_entries(&self) -> Vec<(usize, &CostParams, usize)> {
        self.clusters
            .iter()
            .enumerate()
            .filter_map(|(j, c)| c.as_ref().map(|cl| (j, &cl.omega, cl.count)))
            .collect()
    }

    /// (slot j, slot k, params, n_jk) per occupied subcluster.
    pub fn theta_entries(&self) -> Vec<(usize, usize, &SurvParams, usize)> {
        let mut out = Vec::new();
        for (j, cl) in self.clusters.iter().enumerate() {
            if let Some(cl) = cl {
                for (k, sub) in cl.subs.iter().enumerate() {
                    if let Some(sub) = sub {
                        out.push((j, k, &sub.theta, sub.count));
                    }
                }
            }
        }
        out
    }

    pub fn cost_params_of(&self, i: usize) -> &CostParams {
        let (j, _) = self.assign[i];
        &self.clusters[j].as_ref().expect("assigned cluster occupied").omega
    }

    pub fn surv_params_of(&self, i: usize) -> &SurvParams {
        let (j, k) = self.assign[i];
        &self.clusters[j].as_ref().expect("assigned cluster occupied").subs[k]
            .as_ref()
            .expect("assigned subcluster occupied")
            .theta
    }

    /// Per-subject hazard linear predictors under current assignments.
    pub fn etas(&self, data: &Dataset) -> Vec<f64> {
        (0..self.n())
            .map(|i| {
                let s = data.subject(i);
                self.surv_params_of(i).eta(s.a, &s.l)
            })
            .collect()
    }

    fn occupied_cluster_ids(&self) -> Vec<usize> {
        self.clusters
            .iter()
            .enumerate()
            .filter_map(|(j, c)| c.as_ref().map(|_| j))
            .collect()
    }

    fn remove_subject(&mut self, i: usize) -> Removal {
        let (j, k) = self.assign[i];
        self.assign[i] = (UNASSIGNED, UNASSIGNED);
        let cluster = self.clusters[j].as_mut().expect("removing from occupied cluster");
        cluster.count -= 1;
        let sub = cluster.subs[k].as_mut().expect("removing from occupied subcluster");
        sub.count -= 1;
        if sub.count > 0 {
            return Removal::Kept;
        }
        let theta = cluster.subs[k].take().expect("checked occupied").theta;
        if cluster.count > 0 {
            return Removal::FreedTheta { j, theta };
        }
        let omega = self.clusters[j].take().expect("checked occupied").omega;
        Removal::FreedPair { omega, theta }
    }

    fn insert_existing(&mut self, i: usize, j: usize, k: usize) {
        let cluster = self.clusters[j].as_mut().expect("target cluster occupied");
        cluster.count += 1;
        cluster.subs[k].as_mut().expect("target subcluster occupied").count += 1;
        self.assign[i] = (j, k);
    }

    fn insert_new_sub(&mut self, i: usize, j: usize, theta: SurvParams) {
        let cluster = self.clusters[j].as_mut().expect("target cluster occupied");
        cluster.count += 1;
        let k = alloc_slot(&mut cluster.subs, ThetaSub { theta, count: 1 });
        self.assign[i] = (j, k);
    }

    fn insert_new_pair(&mut self, i: usize, omega: CostParams, theta: SurvParams) {
        let cluster = OmegaCluster {
            omega,
            count: 1,
            subs: vec![Some(ThetaSub { theta, count: 1 })],
        };
        let j = alloc_slot(&mut self.clusters, cluster);
        self.assign[i] = (j, 0);
    }

    /// Log weight per candidate, in a deterministic order: occupied clusters by
    /// slot, subclusters by slot within each, each cluster's "new subcluster"
    /// option right after its occupied ones, and "new pair" last. `aux_subs`
    /// must align with the occupied clusters (empty to drop those options);
    /// `aux_pair` of None drops the new-pair option.
    fn candidate_log_weights(
        &self,
        subject: &Subject,
        model: CostModel,
        curve: &HazardCurve,
        aux_subs: &[(usize, SurvParams)],
        aux_pair: Option<&(CostParams, SurvParams)>,
    ) -> Result<(Vec<Candidate>, Vec<f64>)> {
        let mut cands = Vec::new();
        let mut logw = Vec::new();
        let occ = self.occupied_cluster_ids();
        for (pos, &j) in occ.iter().enumerate() {
            let cl = self.clusters[j].as_ref().expect("occupied");
            let cost_ll =
                cost_loglik(model, &cl.omega, subject.y, subject.t, subject.a, &subject.l);
            let n_j = cl.count as f64;
            let denom = (n_j + self.alpha_theta).ln();
            for (k, sub) in cl.subs.iter().enumerate() {
                if let Some(sub) = sub {
                    let eta = sub.theta.eta(subject.a, &subject.l);
                    let sl = surv_loglik(subject.t, subject.delta, eta, curve)?;
                    cands.push(Candidate::Existing { j, k });
                    logw.push(n_j.ln() + (sub.count as f64).ln() - denom + cost_ll + sl);
                }
            }
            if let Some((aj, theta)) = aux_subs.get(pos) {
                debug_assert_eq!(*aj, j, "auxiliary list misaligned with occupied clusters");
                let eta = theta.eta(subject.a, &subject.l);
                let sl = surv_loglik(subject.t, subject.delta, eta, curve)?;
                cands.push(Candidate::NewSub { j });
                logw.push(n_j.ln() + self.alpha_theta.ln() - denom + cost_ll + sl);
            }
        }
        if let Some((omega, theta)) = aux_pair {
            let cost_ll = cost_loglik(model, omega, subject.y, subject.t, subject.a, &subject.l);
            let eta = theta.eta(subject.a, &subject.l);
            let sl = surv_loglik(subject.t, subject.delta, eta, curve)?;
            cands.push(Candidate::NewPair);
            logw.push(self.alpha_omega.ln() + cost_ll + sl);
        }
        Ok((cands, logw))
    }

    /// One full membership sweep in ascending subject order.
    pub fn update_memberships<R: Rng>(
        &mut self,
        data: &Dataset,
        model: CostModel,
        curve: &HazardCurve,
        base: &BaseMeasure,
        rng: &mut R,
    ) -> Result<()> {
        for i in 0..self.n() {
            let removal = self.remove_subject(i);
            let (mut freed_theta, mut freed_pair) = match removal {
                Removal::Kept => (None, None),
                Removal::FreedTheta { j, theta } => (Some((j, theta)), None),
                Removal::FreedPair { omega, theta } => (None, Some((omega, theta))),
            };

            let occ = self.occupied_cluster_ids();
            if occ.is_empty() {
                // Sole subject: the new pair is the only option.
                let (omega, theta) = freed_pair
                    .take()
                    .unwrap_or_else(|| (base.sample_cost(rng), base.sample_surv(rng)));
                self.insert_new_pair(i, omega, theta);
                continue;
            }

            let aux_subs: Vec<(usize, SurvParams)> = if self.alpha_theta > 0.0 {
                occ.iter()
                    .map(|&j| match &freed_theta {
                        Some((fj, _)) if *fj == j => {
                            let (_, theta) = freed_theta.take().expect("matched above");
                            (j, theta)
                        }
                        _ => (j, base.sample_surv(rng)),
                    })
                    .collect()
            } else {
                Vec::new()
            };
            let aux_pair: Option<(CostParams, SurvParams)> = if self.alpha_omega > 0.0 {
                Some(
                    freed_pair
                        .take()
                        .unwrap_or_else(|| (base.sample_cost(rng), base.sample_surv(rng))),
                )
            } else {
                None
            };

            let subject = data.subject(i);
            let (cands, logw) =
                self.candidate_log_weights(subject, model, curve, &aux_subs, aux_pair.as_ref())?;
            let probs = normalize_log_weights(&logw);
            let u: f64 = rng.gen();
            let mut choice = cands.len() - 1;
            let mut acc = 0.0;
            for (idx, p) in probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    choice = idx;
                    break;
                }
            }
            match cands[choice] {
                Candidate::Existing { j, k } => self.insert_existing(i, j, k),
                Candidate::NewSub { j } => {
                    let theta = aux_subs
                        .into_iter()
                        .find(|(aj, _)| *aj == j)
                        .expect("chosen auxiliary present")
                        .1;
                    self.insert_new_sub(i, j, theta);
                }
                Candidate::NewPair => {
                    let (omega, theta) = aux_pair.expect("chosen auxiliary present");
                    self.insert_new_pair(i, omega, theta);
                }
            }
        }
        #[cfg(debug_assertions)]
        self.check_consistency();
        Ok(())
    }

    fn cluster_member_lists(&self) -> Vec<Vec<usize>> {
        let mut lists = vec![Vec::new(); self.clusters.len()];
        for (i, &(j, _)) in self.assign.iter().enumerate() {
            lists[j].push(i);
        }
        lists
    }

    fn sub_member_lists(&self) -> Vec<Vec<Vec<usize>>> {
        let mut lists: Vec<Vec<Vec<usize>>> = self
            .clusters
            .iter()
            .map(|c| match c {
                Some(cl) => vec![Vec::new(); cl.subs.len()],
                None => Vec::new(),
            })
            .collect();
        for (i, &(j, k)) in self.assign.iter().enumerate() {
            lists[j][k].push(i);
        }
        lists
    }

    /// Exact conjugate refresh of every cluster's (beta, phi): beta given phi,
    /// then phi given the new beta. `rows`/`ys` are the full-data cost design.
    pub fn update_cost_params<R: Rng>(
        &mut self,
        rows: &[Vec<f64>],
        ys: &[f64],
        base: &BaseMeasure,
        rng: &mut R,
    ) -> Result<()> {
        let lists = self.cluster_member_lists();
        for j in 0..self.clusters.len() {
            if self.clusters[j].is_none() {
                continue;
            }
            let members = &lists[j];
            assert!(!members.is_empty(), "occupied cluster with no members");
            let xs: Vec<&[f64]> = members.iter().map(|&i| rows[i].as_slice()).collect();
            let ysm: Vec<f64> = members.iter().map(|&i| ys[i]).collect();
            let phi_old = self.clusters[j].as_ref().expect("occupied").omega.phi;
            let beta = draw_cost_beta(&xs, &ysm, phi_old, base, rng)?;
            let phi = draw_cost_phi(&xs, &ysm, &beta, base, rng);
            self.clusters[j].as_mut().expect("occupied").omega = CostParams { beta, phi };
        }
        Ok(())
    }

    /// One coordinate-wise MH pass over every subcluster's theta. Acceptance
    /// is only driven by the linear predictor, so the per-member baseline
    /// cumulative hazards are cached and only eta differences are formed.
    pub fn update_surv_params<R: Rng>(
        &mut self,
        data: &Dataset,
        srows: &[Vec<f64>],
        curve: &HazardCurve,
        base: &BaseMeasure,
        tuner: &mut MhTuner,
        rng: &mut R,
    ) -> Result<()> {
        let lists = self.sub_member_lists();
        let dim = SurvParams::dim(data.q());
        debug_assert_eq!(tuner.dim(), dim);
        for j in 0..self.clusters.len() {
            if self.clusters[j].is_none() {
                continue;
            }
            let n_subs = self.clusters[j].as_ref().expect("occupied").subs.len();
            for k in 0..n_subs {
                if self.clusters[j].as_ref().expect("occupied").subs[k].is_none() {
                    continue;
                }
                let members = &lists[j][k];
                assert!(!members.is_empty(), "occupied subcluster with no members");
                let mut theta = self.clusters[j].as_ref().expect("occupied").subs[k]
                    .as_ref()
                    .expect("occupied")
                    .theta
                    .clone();

                let cums: Vec<f64> = {
                    let mut v = Vec::with_capacity(members.len());
                    for &i in members {
                        v.push(curve.cumulative0(data.subject(i).t)?);
                    }
                    v
                };
                let devs: Vec<f64> =
                    members.iter().map(|&i| data.subject(i).delta as f64).collect();
                let mut etas: Vec<f64> =
                    members.iter().map(|&i| dot(&srows[i], &theta.coef)).collect();

                for c in 0..dim {
                    let z: f64 = StandardNormal.sample(rng);
                    let u: f64 = rng.gen();
                    let cur = theta.coef[c];
                    let prop = cur + tuner.sd(c) * z;
                    let mut dll = 0.0;
                    let mut des = Vec::with_capacity(members.len());
                    for (m, &i) in members.iter().enumerate() {
                        let de = (prop - cur) * srows[i][c];
                        // Event indicator picks up eta linearly; every member
                        // pays the change in the integrated hazard.
                        dll += devs[m] * de - ((etas[m] + de).exp() - etas[m].exp()) * cums[m];
                        des.push(de);
                    }
                    let log_acc = dll + base.surv_log_prior_delta(c, cur, prop);
                    let accepted = !log_acc.is_nan() && u.ln() < log_acc;
                    if accepted {
                        theta.coef[c] = prop;
                        for (e, de) in etas.iter_mut().zip(&des) {
                            *e += de;
                        }
                    }
                    tuner.record(c, accepted);
                }

                self.clusters[j].as_mut().expect("occupied").subs[k]
                    .as_mut()
                    .expect("occupied")
                    .theta = theta;
            }
        }
        Ok(())
    }

    /// Beta-augmentation refresh of the outer concentration given (J, n).
    pub fn update_alpha_omega<R: Rng>(&mut self, rng: &mut R) {
        self.alpha_omega = escobar_west_step(self.alpha_omega, self.num_clusters(), self.n(), rng);
    }

    /// Log-scale random-walk MH on the nested concentration's conditional.
    pub fn update_alpha_theta<R: Rng>(&mut self, tuner: &mut MhTuner, rng: &mut R) {
        let groups = self.occupancy();
        let z: f64 = StandardNormal.sample(rng);
        let u: f64 = rng.gen();
        let cur = self.alpha_theta;
        let prop = (cur.ln() + tuner.sd(0) * z).exp();
        let log_acc = dp_concentration_log_conditional(prop, &groups)
            - dp_concentration_log_conditional(cur, &groups)
            + prop.ln()
            - cur.ln();
        let accepted = prop.is_finite() && prop > 0.0 && !log_acc.is_nan() && u.ln() < log_acc;
        if accepted {
            self.alpha_theta = prop;
        }
        tuner.record(0, accepted);
    }

    /// Overwrites the sole cluster's parameters; scaffolding for tests that
    /// need a state with known values.
    #[cfg(test)]
    pub(crate) fn set_params_for_tests(&mut self, omega: CostParams, theta: SurvParams) {
        assert_eq!(self.num_clusters(), 1, "helper expects the cold-start state");
        let cl = self.clusters.iter_mut().flatten().next().expect("one cluster");
        cl.omega = omega;
        cl.subs.iter_mut().flatten().next().expect("one subcluster").theta = theta;
    }

    /// Recounts occupancy from the assignments and panics on any mismatch:
    /// orphan table entries, empty occupied slots, or stale counts.
    pub fn check_consistency(&self) {
        let n = self.n();
        let mut cluster_counts = vec![0usize; self.clusters.len()];
        let mut sub_counts: Vec<Vec<usize>> = self
            .clusters
            .iter()
            .map(|c| match c {
                Some(cl) => vec![0; cl.subs.len()],
                None => Vec::new(),
            })
            .collect();
        for (i, &(j, k)) in self.assign.iter().enumerate() {
            assert!(
                j < self.clusters.len() && self.clusters[j].is_some(),
                "subject {i} assigned to vacant cluster slot {j}"
            );
            let cl = self.clusters[j].as_ref().expect("checked");
            assert!(
                k < cl.subs.len() && cl.subs[k].is_some(),
                "subject {i} assigned to vacant subcluster slot ({j},{k})"
            );
            cluster_counts[j] += 1;
            sub_counts[j][k] += 1;
        }
        let mut total = 0;
        for (j, cl) in self.clusters.iter().enumerate() {
            if let Some(cl) = cl {
                assert_eq!(cl.count, cluster_counts[j], "stale count on cluster {j}");
                assert!(cl.count > 0, "occupied cluster {j} with zero members");
                let mut sub_total = 0;
                for (k, sub) in cl.subs.iter().enumerate() {
                    if let Some(sub) = sub {
                        assert_eq!(sub.count, sub_counts[j][k], "stale count on ({j},{k})");
                        assert!(sub.count > 0, "occupied subcluster ({j},{k}) with zero members");
                        sub_total += sub.count;
                    } else {
                        assert_eq!(sub_counts[j][k], 0, "members assigned to vacant ({j},{k})");
                    }
                }
                assert_eq!(sub_total, cl.count, "subcluster counts do not add up in cluster {j}");
                total += cl.count;
            } else {
                assert_eq!(cluster_counts[j], 0, "members assigned to vacant cluster {j}");
            }
        }
        assert_eq!(total, n, "cluster counts do not add up to n");
        assert!(
            self.alpha_omega.is_finite() && self.alpha_omega >= 0.0,
            "alpha_omega out of range"
        );
        assert!(
            self.alpha_theta.is_finite() && self.alpha_theta >= 0.0,
            "alpha_theta out of range"
        );
    }
}

fn alloc_slot<T>(arena: &mut Vec<Option<T>>, value: T) -> usize {
    match arena.iter().position(Option::is_none) {
        Some(idx) => {
            arena[idx] = Some(value);
            idx
        }
        None => {
            arena.push(Some(value));
            arena.len() - 1
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Probabilities from log weights via max-log normalization. If every weight
/// is zero (all -inf: possible only in pathological states) the distribution
/// is undefined and the fallback is uniform, which self-corrects next sweep.
fn normalize_log_weights(logw: &[f64]) -> Vec<f64> {
    assert!(!logw.is_empty());
    let m = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return vec![1.0 / logw.len() as f64; logw.len()];
    }
    let w: Vec<f64> = logw.iter().map(|l| (l - m).exp()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

/// Exact draw from N(mu_n, Lambda_n^{-1}) with
///   Lambda_n = diag(1/v_0) + X'X / phi,
///   mu_n = Lambda_n^{-1} (diag(1/v_0) m_0 + X'y / phi).
pub fn draw_cost_beta<R: Rng>(
    xs: &[&[f64]],
    ys: &[f64],
    phi: f64,
    base: &BaseMeasure,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let p = base.beta_center.len();
    let mut prec = DMatrix::<f64>::zeros(p, p);
    let mut rhs = DVector::<f64>::zeros(p);
    for k in 0..p {
        prec[(k, k)] = 1.0 / base.beta_cov[k];
        rhs[k] = base.beta_center[k] / base.beta_cov[k];
    }
    for (x, &y) in xs.iter().zip(ys) {
        for r in 0..p {
            rhs[r] += x[r] * y / phi;
            for c in 0..p {
                prec[(r, c)] += x[r] * x[c] / phi;
            }
        }
    }
    let chol = Cholesky::new(prec)
        .ok_or_else(|| Error::numeric("cost update", "posterior precision not positive definite"))?;
    let mu = chol.solve(&rhs);
    let z = DVector::from_fn(p, |_, _| StandardNormal.sample(rng));
    // Lambda = L L', so L'^{-1} z has covariance Lambda^{-1}.
    let w = chol
        .l()
        .transpose()
        .solve_upper_triangular(&z)
        .ok_or_else(|| Error::numeric("cost update", "singular Cholesky factor"))?;
    Ok((mu + w).iter().copied().collect())
}

/// Exact draw from InvGamma(a_0 + n/2, s_0 + RSS/2) given the coefficients.
pub fn draw_cost_phi<R: Rng>(
    xs: &[&[f64]],
    ys: &[f64],
    beta: &[f64],
    base: &BaseMeasure,
    rng: &mut R,
) -> f64 {
    let rss: f64 = xs.iter().zip(ys).map(|(x, &y)| (y - dot(x, beta)).powi(2)).sum();
    let shape = base.phi_shape + xs.len() as f64 / 2.0;
    let scale = base.phi_scale + rss / 2.0;
    let g = Gamma::new(shape, 1.0 / scale).expect("positive shape and scale").sample(rng);
    (1.0 / g).clamp(f64::MIN_POSITIVE, 1e300)
}

/// One beta-augmentation step for a DP concentration under the Gam(1,1)
/// prior: draw zeta ~ Beta(alpha+1, n), then alpha from a two-component
/// gamma mixture whose odds are (a + J - 1) / (n (b - ln zeta)).
pub fn escobar_west_step<R: Rng>(alpha: f64, n_clusters: usize, n: usize, rng: &mut R) -> f64 {
    let (a, b) = (CONC_PRIOR_SHAPE, CONC_PRIOR_RATE);
    let jj = n_clusters as f64;
    let zeta: f64 = Beta::new(alpha + 1.0, n as f64).expect("positive beta parameters").sample(rng);
    let rate = b - zeta.ln();
    let odds = (a + jj - 1.0) / (n as f64 * rate);
    let u: f64 = rng.gen();
    let shape = if u < odds / (1.0 + odds) { a + jj } else { a + jj - 1.0 };
    Gamma::new(shape, 1.0 / rate)
        .expect("positive shape and rate")
        .sample(rng)
        .max(f64::MIN_POSITIVE)
}

/// Log conditional density (up to a constant) of a DP concentration with a
/// Gam(1,1) prior given cluster-count groups: for each group with K clusters
/// over n items the likelihood contributes alpha^K Gamma(alpha)/Gamma(alpha+n).
/// The outer concentration is the single group [(J, n)]; the nested one takes
/// one group per outer cluster.
pub fn dp_concentration_log_conditional(alpha: f64, groups: &[(usize, usize)]) -> f64 {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return f64::NEG_INFINITY;
    }
    let mut f = (CONC_PRIOR_SHAPE - 1.0) * alpha.ln() - CONC_PRIOR_RATE * alpha;
    for &(k, n) in groups {
        f += k as f64 * alpha.ln() + ln_gamma(alpha) - ln_gamma(alpha + n as f64);
    }
    f
}
