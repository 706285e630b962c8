//! Coordinate-wise adaptive scaling for random-walk Metropolis proposals.
//!
//! Each coordinate keeps its own proposal standard deviation. During burn-in
//! the caller periodically invokes [`MhTuner::adapt`], which nudges every sd
//! by a fixed multiplicative factor `exp(0.1)` toward a 0.234 windowed
//! acceptance rate — above target widens, below target narrows, exactly on
//! target leaves the sd untouched. After [`MhTuner::freeze`] the sds are
//! immutable and acceptance is tracked separately so post-burn-in rates can
//! be reported.

/// Optimal acceptance target for random-walk Metropolis.
pub const ACCEPTANCE_TARGET: f64 = 0.234;

const ADAPT_STEP: f64 = 0.1;

#[derive(Debug, Clone)]
pub struct MhTuner {
    sds: Vec<f64>,
    accepted: Vec<u64>,
    proposed: Vec<u64>,
    post_accepted: Vec<u64>,
    post_proposed: Vec<u64>,
    frozen: bool,
}

impl MhTuner {
    pub fn new(dim: usize, initial_sd: f64) -> Self {
        assert!(initial_sd > 0.0, "initial proposal sd must be positive");
        MhTuner {
            sds: vec![initial_sd; dim],
            accepted: vec![0; dim],
            proposed: vec![0; dim],
            post_accepted: vec![0; dim],
            post_proposed: vec![0; dim],
            frozen: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.sds.len()
    }

    pub fn sd(&self, k: usize) -> f64 {
        self.sds[k]
    }

    /// Records one proposal outcome for coordinate `k`.
    pub fn record(&mut self, k: usize, accepted: bool) {
        self.proposed[k] += 1;
        if accepted {
            self.accepted[k] += 1;
        }
        if self.frozen {
            self.post_proposed[k] += 1;
            if accepted {
                self.post_accepted[k] += 1;
            }
        }
    }

    /// One adaptation step from the windowed rates; clears the window.
    /// No-op once frozen or for coordinates with an empty window.
    pub fn adapt(&mut self) {
        if self.frozen {
            return;
        }
        for k in 0..self.sds.len() {
            if self.proposed[k] == 0 {
                continue;
            }
            let rate = self.accepted[k] as f64 / self.proposed[k] as f64;
            if rate > ACCEPTANCE_TARGET {
                self.sds[k] *= ADAPT_STEP.exp();
            } else if rate < ACCEPTANCE_TARGET {
                self.sds[k] *= (-ADAPT_STEP).exp();
            }
            self.accepted[k] = 0;
            self.proposed[k] = 0;
        }
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Post-freeze acceptance rate per coordinate; `None` where no proposal
    /// has been made since freezing.
    pub fn post_freeze_rates(&self) -> Vec<Option<f64>> {
        self.post_proposed
            .iter()
            .zip(&self.post_accepted)
            .map(|(&p, &a)| if p == 0 { None } else { Some(a as f64 / p as f64) })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn widens_when_hot_narrows_when_cold() {
        let mut t = MhTuner::new(2, 1.0);
        for _ in 0..100 {
            t.record(0, true); // rate 1.0 > target
            t.record(1, false); // rate 0.0 < target
        }
        t.adapt();
        assert!(t.sd(0) > 1.0);
        assert!(t.sd(1) < 1.0);
    }

    #[test]
    fn exact_target_rate_leaves_sd_unchanged() {
        let mut t = MhTuner::new(1, 0.7);
        // 117/500 == 0.234 exactly in reals; both sides round to the same f64.
        for i in 0..500 {
            t.record(0, i < 117);
        }
        t.adapt();
        assert_eq!(t.sd(0), 0.7);
    }

    #[test]
    fn frozen_tuner_keeps_sds_and_tracks_rates() {
        let mut t = MhTuner::new(1, 2.0);
        t.freeze();
        for i in 0..10 {
            t.record(0, i % 2 == 0);
        }
        t.adapt();
        assert_eq!(t.sd(0), 2.0);
        assert_eq!(t.post_freeze_rates(), vec![Some(0.5)]);
    }

    #[test]
    fn empty_window_is_a_no_op() {
        let mut t = MhTuner::new(1, 1.5);
        t.adapt();
        assert_eq!(t.sd(0), 1.5);
        assert_eq!(t.post_freeze_rates(), vec![None]);
    }
}
