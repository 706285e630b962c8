//! Small numerical diagnostics shared by the samplers, summaries, and the
//! validation suite: empirical-CDF distances, goodness-of-fit, batch-means
//! Monte Carlo standard errors, and quantiles.

use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Kolmogorov–Smirnov distance between a sample and a reference CDF.
pub fn ks_distance(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    assert!(!samples.is_empty());
    let mut xs = samples.to_vec();
    xs.sort_by(|a, b| a.partial_cmp(b).expect("KS input must be finite"));
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max((f - i as f64 / n).abs());
        d = d.max((f - (i as f64 + 1.0) / n).abs());
    }
    d
}

/// Pearson chi-square statistic and its upper-tail p-value for observed vs
/// expected counts. Bins with expected count below `min_expected` are pooled
/// into their successor (the final bin absorbs leftovers backwards).
pub fn chi_square_gof(observed: &[f64], expected: &[f64], min_expected: f64) -> (f64, usize, f64) {
    assert_eq!(observed.len(), expected.len());
    let mut obs = Vec::new();
    let mut exp = Vec::new();
    let (mut o_acc, mut e_acc) = (0.0, 0.0);
    for (&o, &e) in observed.iter().zip(expected) {
        o_acc += o;
        e_acc += e;
        if e_acc >= min_expected {
            obs.push(o_acc);
            exp.push(e_acc);
            o_acc = 0.0;
            e_acc = 0.0;
        }
    }
    if e_acc > 0.0 || o_acc > 0.0 {
        match exp.last_mut() {
            Some(last_e) => {
                *last_e += e_acc;
                *obs.last_mut().expect("parallel vectors") += o_acc;
            }
            None => {
                obs.push(o_acc);
                exp.push(e_acc);
            }
        }
    }
    let stat: f64 = obs
        .iter()
        .zip(&exp)
        .map(|(&o, &e)| {
            let d = o - e;
            d * d / e
        })
        .sum();
    let df = obs.len().saturating_sub(1).max(1);
    let p = 1.0 - ChiSquared::new(df as f64).expect("df >= 1").cdf(stat);
    (stat, df, p)
}

/// Chain mean and its batch-means Monte Carlo standard error.
pub fn batch_mean_se(chain: &[f64], n_batches: usize) -> (f64, f64) {
    assert!(n_batches >= 2 && chain.len() >= 2 * n_batches);
    let batch_len = chain.len() / n_batches;
    let used = batch_len * n_batches;
    let mean = chain[..used].iter().sum::<f64>() / used as f64;
    let mut ss = 0.0;
    for b in 0..n_batches {
        let bm = chain[b * batch_len..(b + 1) * batch_len].iter().sum::<f64>() / batch_len as f64;
        ss += (bm - mean) * (bm - mean);
    }
    let var_bm = ss / (n_batches as f64 - 1.0);
    (mean, (var_bm / n_batches as f64).sqrt())
}

/// Sample mean and unbiased variance.
pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    assert!(xs.len() >= 2);
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Lag-1 sample autocorrelation.
pub fn autocorr_lag1(xs: &[f64]) -> f64 {
    let (mean, var) = mean_var(xs);
    if var == 0.0 {
        return 0.0;
    }
    let n = xs.len();
    let cov = xs
        .windows(2)
        .map(|w| (w[0] - mean) * (w[1] - mean))
        .sum::<f64>()
        / (n as f64 - 1.0);
    cov / var
}

/// Linear-interpolation quantile (type 7): with sorted input of length n,
/// the p-quantile sits at fractional rank (n - 1)p.
pub fn quantile_type7(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty() && (0.0..=1.0).contains(&p));
    let h = (sorted.len() as f64 - 1.0) * p;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if lo + 1 >= sorted.len() {
        sorted[sorted.len() - 1]
    } else {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ks_distance_of_perfect_grid_is_small() {
        // Midpoints of n equal probability bins under U(0,1): D = 1/(2n).
        let n = 100;
        let xs: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        let d = ks_distance(&xs, |x| x.clamp(0.0, 1.0));
        assert!((d - 0.005).abs() < 1e-12, "d = {d}");
    }

    #[test]
    fn chi_square_pools_sparse_bins() {
        let observed = [3.0, 2.0, 50.0, 45.0];
        let expected = [2.5, 2.5, 47.5, 47.5];
        let (_, df, p) = chi_square_gof(&observed, &expected, 5.0);
        // First two bins pool into the third: 3 effective bins, df = 2.
        assert_eq!(df, 2);
        assert!(p > 0.5, "p = {p}");
    }

    #[test]
    fn quantile_matches_interpolation_convention() {
        let xs: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        assert!((quantile_type7(&xs, 0.025) - 3.475).abs() < 1e-12);
        assert!((quantile_type7(&xs, 0.975) - 97.525).abs() < 1e-12);
        assert_eq!(quantile_type7(&xs, 0.0), 1.0);
        assert_eq!(quantile_type7(&xs, 1.0), 100.0);
    }

    #[test]
    fn batch_means_shrink_with_sample_size() {
        let xs: Vec<f64> = (0..10_000).map(|i| ((i * 2654435761u64 as usize) % 1000) as f64).collect();
        let (_, se_full) = batch_mean_se(&xs, 50);
        let (_, se_half) = batch_mean_se(&xs[..5000], 50);
        assert!(se_full < se_half * 1.5);
    }
}
