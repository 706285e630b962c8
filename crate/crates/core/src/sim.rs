//! Synthetic data generator and brute-force ground truth for the evaluation
//! harness.
//!
//! Each subject carries a latent binary class `c` that flips how the
//! confounder and treatment enter the hazard: with `p_c = 0` the data are a
//! plain Weibull proportional-hazards / Gaussian-cost model (one mode), with
//! `p_c = 0.5` the population is an even mixture of a class with no treatment
//! effect on survival and a class with hazard ratio e^2 (two modes). Death
//! and censoring times use the same Weibull recipe, so exactly half of
//! subjects have `C < D` and the censoring fraction is `p_delta / 2`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use std::io::Write as _;
use std::path::Path;

use crate::data::{CostModel, Dataset, Subject};
use crate::error::{Error, Result};

/// Weibull shape of both the death and censoring time distributions.
const WEIBULL_SHAPE: f64 = 10.0;
/// Residual standard deviation of the cost outcome.
const COST_SD: f64 = 0.5;

/// Treatment coefficients of the generating process, isolated so the truth
/// oracle can be run under a forced null. `cost_a` enters the cost mean;
/// `surv_a` multiplies `c` in the log hazard.
#[derive(Debug, Clone, Copy)]
struct TreatmentCoefs {
    cost_a: f64,
    surv_a: f64,
}

const DEFAULT_COEFS: TreatmentCoefs = TreatmentCoefs { cost_a: -3.0, surv_a: 2.0 };

/// Generator settings: sample size, latent-class probability, censoring
/// thinning probability, willingness-to-pay for the oracle, and the seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DgpConfig {
    pub n: usize,
    pub p_c: f64,
    pub p_delta: f64,
    pub kappa: f64,
    pub seed: u64,
}

impl DgpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::validation("simulated sample size must be at least 1"));
        }
        for (name, p) in [("p_c", self.p_c), ("p_delta", self.p_delta)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::validation(format!("{name} must be in [0,1], got {p}")));
            }
        }
        if !self.kappa.is_finite() {
            return Err(Error::validation("kappa must be finite"));
        }
        Ok(())
    }
}

/// Latent state the fitting path never sees: the class and both underlying
/// times, kept for diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthRecord {
    pub i: usize,
    pub c: u8,
    pub death: f64,
    pub censor: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub data: Dataset,
    pub truth: Vec<TruthRecord>,
}

fn expit(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Inverse-CDF draw of a Weibull PH time: survival exp(−e^eta t^shape).
fn weibull_ph_time(z: f64, eta: f64) -> f64 {
    (-z.ln() * (-eta).exp()).powf(1.0 / WEIBULL_SHAPE)
}

fn log_hazard_shift(c: u8, l: f64, a: u8, coefs: TreatmentCoefs) -> f64 {
    let c = f64::from(c);
    (1.0 - 2.0 * c) * l + coefs.surv_a * c * f64::from(a)
}

fn cost_mean(c: u8, l: f64, a: u8, t: f64, coefs: TreatmentCoefs) -> f64 {
    5.0 + 5.0 * f64::from(c) + 0.1 * l + coefs.cost_a * f64::from(a) + t
}

/// Generates one dataset with its latent truth sidecar. Each subject
/// consumes a fixed number of RNG draws in a fixed order (class, confounder,
/// treatment, death, censoring, thinning, cost noise), so output is
/// reproducible byte-for-byte from the seed alone and unaffected by any
/// branch a subject takes.
pub fn simulate(cfg: &DgpConfig) -> Result<SimOutput> {
    cfg.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let mut subjects = Vec::with_capacity(cfg.n);
    let mut truth = Vec::with_capacity(cfg.n);
    for i in 0..cfg.n {
        let c = u8::from(rng.gen::<f64>() < cfg.p_c);
        let l: f64 = StandardNormal.sample(&mut rng);
        let a = u8::from(rng.gen::<f64>() < expit(0.1 * l));
        let eta = log_hazard_shift(c, l, a, DEFAULT_COEFS);
        let death = weibull_ph_time(rng.gen(), eta);
        let censor = weibull_ph_time(rng.gen(), eta);
        let thinned = rng.gen::<f64>() < cfg.p_delta;
        let noise: f64 = StandardNormal.sample(&mut rng);

        let (t, delta) = if censor < death && thinned { (censor, 0) } else { (death, 1) };
        let y = cost_mean(c, l, a, t, DEFAULT_COEFS) + COST_SD * noise;
        subjects.push(Subject { y, t, delta, a, l: vec![l] });
        truth.push(TruthRecord { i, c, death, censor });
    }
    let data = Dataset::new(subjects, CostModel::Gaussian)?;
    Ok(SimOutput { data, truth })
}

/// Ground truth from potential-outcome Monte Carlo: per rep one subject's
/// (c, L) is drawn, then both arms are played out with independent event
/// times and cost noise, with no censoring.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleTruth {
    pub kappa: f64,
    pub psi: f64,
    pub psi_se: f64,
    /// Mean survival time under arm a = 0, 1.
    pub e_t: [f64; 2],
    pub e_t_se: [f64; 2],
    /// Mean cost under arm a = 0, 1.
    pub e_y: [f64; 2],
    pub e_y_se: [f64; 2],
    pub reps: usize,
}

pub fn oracle_truth(cfg: &DgpConfig, reps: usize) -> Result<OracleTruth> {
    cfg.validate()?;
    if reps < 1_000_000 {
        return Err(Error::validation(format!(
            "truth oracle needs at least 1e6 replications for a usable standard error, got {reps}"
        )));
    }
    Ok(oracle_truth_with(cfg, reps, DEFAULT_COEFS))
}

fn oracle_truth_with(cfg: &DgpConfig, reps: usize, coefs: TreatmentCoefs) -> OracleTruth {
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    // Running mean/M2 per tracked quantity: T0, T1, Y0, Y1, psi.
    let mut mean = [0.0f64; 5];
    let mut m2 = [0.0f64; 5];
    for rep in 0..reps {
        let c = u8::from(rng.gen::<f64>() < cfg.p_c);
        let l: f64 = StandardNormal.sample(&mut rng);
        let mut t_arm = [0.0f64; 2];
        let mut y_arm = [0.0f64; 2];
        for a in 0..2u8 {
            let eta = log_hazard_shift(c, l, a, coefs);
            let t = weibull_ph_time(rng.gen(), eta);
            let noise: f64 = StandardNormal.sample(&mut rng);
            t_arm[a as usize] = t;
            y_arm[a as usize] = cost_mean(c, l, a, t, coefs) + COST_SD * noise;
        }
        let psi = cfg.kappa * (t_arm[1] - t_arm[0]) - (y_arm[1] - y_arm[0]);
        let vals = [t_arm[0], t_arm[1], y_arm[0], y_arm[1], psi];
        let k = (rep + 1) as f64;
        for (j, v) in vals.into_iter().enumerate() {
            let d = v - mean[j];
            mean[j] += d / k;
            m2[j] += d * (v - mean[j]);
        }
    }
    let n = reps as f64;
    let se = |j: usize| (m2[j] / (n - 1.0)).sqrt() / n.sqrt();
    OracleTruth {
        kappa: cfg.kappa,
        psi: mean[4],
        psi_se: se(4),
        e_t: [mean[0], mean[1]],
        e_t_se: [se(0), se(1)],
        e_y: [mean[2], mean[3]],
        e_y_se: [se(2), se(3)],
        reps,
    }
}

/// Writes the latent truth sidecar (`i,c,death,censor`).
pub fn save_truth(path: impl AsRef<Path>, truth: &[TruthRecord]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "i,c,death,censor")?;
    for r in truth {
        writeln!(out, "{},{},{},{}", r.i, r.c, r.death, r.censor)?;
    }
    out.flush()?;
    Ok(())
}

pub fn load_truth(path: impl AsRef<Path>) -> Result<Vec<TruthRecord>> {
    let path = path.as_ref();
    let loc = |row: usize| format!("{}:row {row}", path.display());
    let mut reader =
        csv::Reader::from_path(path).map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
    let mut truth = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let row = idx + 1;
        let record = record.map_err(|e| Error::parse(loc(row), e.to_string()))?;
        let parse = |col: usize, name: &str| -> Result<f64> {
            record
                .get(col)
                .ok_or_else(|| Error::parse(loc(row), format!("missing column {name}")))?
                .trim()
                .parse::<f64>()
                .map_err(|_| Error::parse(loc(row), format!("bad {name} value")))
        };
        truth.push(TruthRecord {
            i: parse(0, "i")? as usize,
            c: parse(1, "c")? as u8,
            death: parse(2, "death")?,
            censor: parse(3, "censor")?,
        });
    }
    Ok(truth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diag::ks_distance;

    fn cfg(n: usize, p_c: f64, p_delta: f64, seed: u64) -> DgpConfig {
        DgpConfig { n, p_c, p_delta, kappa: 1.0, seed }
    }

    #[test]
    fn rejects_bad_settings() {
        assert!(cfg(0, 0.5, 0.1, 1).validate().is_err());
        assert!(cfg(10, -0.1, 0.1, 1).validate().is_err());
        assert!(cfg(10, 0.5, 1.2, 1).validate().is_err());
        assert!(DgpConfig { kappa: f64::NAN, ..cfg(10, 0.5, 0.1, 1) }.validate().is_err());
        assert!(oracle_truth(&cfg(10, 0.0, 0.1, 1), 1000).is_err());
    }

    #[test]
    fn fixed_seed_reproduces_and_seeds_differ() {
        let a = simulate(&cfg(50, 0.5, 0.4, 9)).unwrap();
        let b = simulate(&cfg(50, 0.5, 0.4, 9)).unwrap();
        assert_eq!(a, b);
        let c = simulate(&cfg(50, 0.5, 0.4, 10)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn class_probability_extremes_pin_the_latent_class() {
        let out = simulate(&cfg(200, 0.0, 0.1, 3)).unwrap();
        assert!(out.truth.iter().all(|r| r.c == 0));
        let out = simulate(&cfg(200, 1.0, 0.1, 3)).unwrap();
        assert!(out.truth.iter().all(|r| r.c == 1));
    }

    #[test]
    fn zero_thinning_observes_every_death() {
        let out = simulate(&cfg(5000, 0.5, 0.0, 4)).unwrap();
        assert!(out.data.subjects().iter().all(|s| s.delta == 1));
        // Observed times are the death times from the sidecar.
        for (s, r) in out.data.subjects().iter().zip(&out.truth) {
            assert_eq!(s.t, r.death);
        }
    }

    #[test]
    fn censoring_bookkeeping_is_exact_per_subject() {
        let out = simulate(&cfg(5000, 0.5, 0.7, 5)).unwrap();
        for (s, r) in out.data.subjects().iter().zip(&out.truth) {
            if s.delta == 1 {
                assert_eq!(s.t, r.death);
            } else {
                assert_eq!(s.t, r.censor);
                assert!(r.censor < r.death);
            }
        }
    }

    #[test]
    fn censoring_fractions_hit_their_targets() {
        // C and D are exchangeable, so P(C < D) = 1/2 and the censored
        // fraction is p_delta / 2.
        for (p_delta, want) in [(0.1, 0.05), (0.4, 0.20)] {
            let out = simulate(&cfg(100_000, 0.5, p_delta, 6)).unwrap();
            let frac = out.data.subjects().iter().filter(|s| s.delta == 0).count() as f64
                / out.data.n() as f64;
            assert!(
                (frac - want).abs() < 0.02,
                "p_delta {p_delta}: censored fraction {frac}, want about {want}"
            );
        }
    }

    #[test]
    fn baseline_time_is_weibull_with_the_declared_shape() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let draws: Vec<f64> = (0..100_000).map(|_| weibull_ph_time(rng.gen(), 0.0)).collect();
        let d = ks_distance(&draws, |t| 1.0 - (-t.powf(WEIBULL_SHAPE)).exp());
        assert!(d < 0.01, "KS distance {d}");
    }

    /// Newton fit of the Cox partial likelihood (no ties in continuous time),
    /// an estimator entirely unrelated to the generator's inverse-CDF path.
    fn cox_fit(times: &[f64], events: &[u8], x: &[Vec<f64>]) -> Vec<f64> {
        let p = x[0].len();
        let mut order: Vec<usize> = (0..times.len()).collect();
        order.sort_by(|&a, &b| times[b].partial_cmp(&times[a]).unwrap());
        let mut beta = vec![0.0; p];
        for _ in 0..25 {
            let mut score = vec![0.0; p];
            let mut info = vec![vec![0.0; p]; p];
            let mut s0 = 0.0;
            let mut s1 = vec![0.0; p];
            let mut s2 = vec![vec![0.0; p]; p];
            for &i in &order {
                let xi = &x[i];
                let w = xi.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>().exp();
                s0 += w;
                for r in 0..p {
                    s1[r] += w * xi[r];
                    for c in 0..p {
                        s2[r][c] += w * xi[r] * xi[c];
                    }
                }
                if events[i] == 1 {
                    for r in 0..p {
                        let e_r = s1[r] / s0;
                        score[r] += xi[r] - e_r;
                        for c in 0..p {
                            info[r][c] += s2[r][c] / s0 - e_r * s1[c] / s0;
                        }
                    }
                }
            }
            // Solve info * step = score by Gaussian elimination.
            let mut aug = info.clone();
            let mut rhs = score.clone();
            for col in 0..p {
                let piv = (col..p)
                    .max_by(|&a, &b| aug[a][col].abs().partial_cmp(&aug[b][col].abs()).unwrap())
                    .unwrap();
                aug.swap(col, piv);
                rhs.swap(col, piv);
                for row in (col + 1)..p {
                    let f = aug[row][col] / aug[col][col];
                    for c2 in col..p {
                        aug[row][c2] -= f * aug[col][c2];
                    }
                    rhs[row] -= f * rhs[col];
                }
            }
            let mut step = vec![0.0; p];
            for row in (0..p).rev() {
                let mut v = rhs[row];
                for c2 in (row + 1)..p {
                    v -= aug[row][c2] * step[c2];
                }
                step[row] = v / aug[row][row];
            }
            let sq: f64 = step.iter().map(|s| s * s).sum();
            for r in 0..p {
                beta[r] += step[r];
            }
            if sq < 1e-14 {
                break;
            }
        }
        beta
    }

    #[test]
    fn class_one_treatment_holds_log_hazard_ratio_two() {
        let out = simulate(&cfg(100_000, 1.0, 0.0, 8)).unwrap();
        let times: Vec<f64> = out.data.subjects().iter().map(|s| s.t).collect();
        let events: Vec<u8> = out.data.subjects().iter().map(|s| s.delta).collect();
        let x: Vec<Vec<f64>> =
            out.data.subjects().iter().map(|s| vec![f64::from(s.a), s.l[0]]).collect();
        let beta = cox_fit(&times, &events, &x);
        assert!((beta[0] - 2.0).abs() < 0.05, "treatment log hazard ratio {}", beta[0]);
        assert!((beta[1] + 1.0).abs() < 0.05, "confounder coefficient {}", beta[1]);
    }

    #[test]
    fn class_zero_treatment_leaves_the_hazard_alone() {
        let out = simulate(&cfg(100_000, 0.0, 0.0, 11)).unwrap();
        let times: Vec<f64> = out.data.subjects().iter().map(|s| s.t).collect();
        let events: Vec<u8> = out.data.subjects().iter().map(|s| s.delta).collect();
        let x: Vec<Vec<f64>> =
            out.data.subjects().iter().map(|s| vec![f64::from(s.a), s.l[0]]).collect();
        let beta = cox_fit(&times, &events, &x);
        assert!(beta[0].abs() < 0.05, "treatment log hazard ratio {}", beta[0]);
        assert!((beta[1] - 1.0).abs() < 0.05, "confounder coefficient {}", beta[1]);
    }

    #[test]
    fn truth_sidecar_round_trips() {
        let out = simulate(&cfg(40, 0.5, 0.4, 12)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("truth.csv");
        save_truth(&path, &out.truth).unwrap();
        let back = load_truth(&path).unwrap();
        assert_eq!(back.len(), out.truth.len());
        for (a, b) in out.truth.iter().zip(&back) {
            assert_eq!(a.i, b.i);
            assert_eq!(a.c, b.c);
            assert!((a.death - b.death).abs() < 1e-12);
            assert!((a.censor - b.censor).abs() < 1e-12);
        }
    }

    #[test]
    fn oracle_contrast_is_three_at_unit_willingness() {
        // kappa(E T1 - E T0) - (E Y1 - E Y0) with the cost mean carrying T
        // linearly collapses to 3 + (kappa-1)(E T1 - E T0); at kappa = 1 the
        // survival term cancels in both settings.
        for p_c in [0.0, 0.5] {
            let truth = oracle_truth(&cfg(1, p_c, 0.1, 13), 1_000_000).unwrap();
            assert!(
                (truth.psi - 3.0).abs() < 3.0 * truth.psi_se,
                "p_c {p_c}: psi {} se {}",
                truth.psi,
                truth.psi_se
            );
        }
    }

    #[test]
    fn oracle_matches_closed_form_means() {
        // With c = 0, T^a = (-ln Z)^{1/10} e^{-L/10}, independent factors:
        // E T^a = Gamma(1.1) e^{1/200} in both arms, and E Y^a layers the
        // linear cost mean over it.
        let g11 = statrs::function::gamma::gamma(1.1);
        let e_t = g11 * (1.0f64 / 200.0).exp();
        let truth = oracle_truth(&cfg(1, 0.0, 0.1, 14), 1_000_000).unwrap();
        for a in 0..2 {
            assert!(
                (truth.e_t[a] - e_t).abs() < 4.0 * truth.e_t_se[a],
                "arm {a}: E T {} want {e_t}",
                truth.e_t[a]
            );
            let want_y = 5.0 - 3.0 * a as f64 + e_t;
            assert!(
                (truth.e_y[a] - want_y).abs() < 4.0 * truth.e_y_se[a],
                "arm {a}: E Y {} want {want_y}",
                truth.e_y[a]
            );
        }

        // Mixture setting: the treated arm's class-1 half carries the
        // e^{-1/5} proportional-hazards shrinkage of mean survival.
        let shift = 0.5 * g11 * (1.0f64 / 200.0).exp() * ((-0.2f64).exp() - 1.0);
        let truth = oracle_truth(&cfg(1, 0.5, 0.1, 15), 2_000_000).unwrap();
        let dt = truth.e_t[1] - truth.e_t[0];
        let dt_se = (truth.e_t_se[0].powi(2) + truth.e_t_se[1].powi(2)).sqrt();
        assert!((dt - shift).abs() < 4.0 * dt_se, "mean survival contrast {dt} want {shift}");
    }

    #[test]
    fn forced_null_zeroes_the_contrast() {
        let null = TreatmentCoefs { cost_a: 0.0, surv_a: 0.0 };
        let truth = oracle_truth_with(&cfg(1, 0.5, 0.1, 16), 1_000_000, null);
        assert!(
            truth.psi.abs() < 3.0 * truth.psi_se,
            "psi {} se {}",
            truth.psi,
            truth.psi_se
        );
    }

    #[test]
    fn doubling_replications_shrinks_error_by_root_two() {
        let one = oracle_truth(&cfg(1, 0.5, 0.1, 17), 1_000_000).unwrap();
        let two = oracle_truth(&cfg(1, 0.5, 0.1, 17), 2_000_000).unwrap();
        let ratio = two.psi_se / one.psi_se;
        assert!((ratio - 1.0 / 2.0f64.sqrt()).abs() < 0.03, "se ratio {ratio}");
    }
}
