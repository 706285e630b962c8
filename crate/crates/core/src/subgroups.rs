//! Subgroup structure recovered from co-clustering, sidestepping label
//! switching: cluster ids mean nothing across iterations, but "are subjects
//! i and j in the same cluster right now" is label-free. Each retained draw
//! contributes a binary adjacency matrix; their average P estimates the
//! co-membership probability, the stored draw closest to P in Frobenius
//! distance serves as a representative partition, and a per-draw R-squared
//! (between-cluster over total sum of squares of the subject-level effects)
//! says how much effect heterogeneity the clustering explains.
//!
//! "Same cluster" means the full assignment pair (outer and nested); an
//! outer-only variant is available as a diagnostic.

use crate::error::{Error, Result};

/// Dense symmetric n x n matrix with unit diagonal: one draw's adjacency
/// (binary) or the across-draw average P (entries in [0,1]).
#[derive(Debug, Clone, PartialEq)]
pub struct CoClusterMatrix {
    n: usize,
    vals: Vec<f64>,
}

impl CoClusterMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.vals[i * self.n + j]
    }
}

/// Binary adjacency of one draw: 1 iff both assignment coordinates agree.
pub fn adjacency(assign: &[(usize, usize)]) -> CoClusterMatrix {
    adjacency_by(assign, |a| *a)
}

/// Outer-cluster-only adjacency (diagnostic companion).
pub fn adjacency_outer(assign: &[(usize, usize)]) -> CoClusterMatrix {
    adjacency_by(assign, |a| a.0)
}

fn adjacency_by<K: PartialEq>(assign: &[(usize, usize)], key: impl Fn(&(usize, usize)) -> K) -> CoClusterMatrix {
    let n = assign.len();
    let keys: Vec<K> = assign.iter().map(key).collect();
    let mut vals = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if keys[i] == keys[j] {
                vals[i * n + j] = 1.0;
            }
        }
    }
    CoClusterMatrix { n, vals }
}

/// Streaming accumulator for P: feeds on per-draw assignments and never holds
/// more than the running sum.
#[derive(Debug, Clone)]
pub struct CoClusterAccum {
    n: usize,
    sum: Vec<f64>,
    draws: usize,
    outer_only: bool,
}

impl CoClusterAccum {
    pub fn new(n: usize) -> CoClusterAccum {
        CoClusterAccum { n, sum: vec![0.0; n * n], draws: 0, outer_only: false }
    }

    /// Accumulator over the outer coordinate only.
    pub fn new_outer(n: usize) -> CoClusterAccum {
        CoClusterAccum { outer_only: true, ..CoClusterAccum::new(n) }
    }

    pub fn add_draw(&mut self, assign: &[(usize, usize)]) {
        assert_eq!(assign.len(), self.n, "assignment length changed across draws");
        for i in 0..self.n {
            for j in 0..self.n {
                let same = if self.outer_only {
                    assign[i].0 == assign[j].0
                } else {
                    assign[i] == assign[j]
                };
                if same {
                    self.sum[i * self.n + j] += 1.0;
                }
            }
        }
        self.draws += 1;
    }

    pub fn draws(&self) -> usize {
        self.draws
    }

    pub fn finish(self) -> CoClusterMatrix {
        assert!(self.draws > 0, "no draws accumulated");
        let m = self.draws as f64;
        CoClusterMatrix { n: self.n, vals: self.sum.into_iter().map(|s| s / m).collect() }
    }
}

/// Squared Frobenius distance between one draw's adjacency and P, formed
/// without materializing the binary matrix.
pub fn frobenius_distance2(assign: &[(usize, usize)], p: &CoClusterMatrix) -> f64 {
    let n = assign.len();
    assert_eq!(n, p.n());
    let mut d2 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let pij = p.get(i, j);
            d2 += if assign[i] == assign[j] { (1.0 - pij) * (1.0 - pij) } else { pij * pij };
        }
    }
    d2
}

/// Index of the stored draw whose adjacency is Frobenius-closest to P; ties
/// go to the earliest draw. The result is always one of the inputs — no
/// synthetic partition is ever produced.
pub fn mode_partition(draws: &[Vec<(usize, usize)>], p: &CoClusterMatrix) -> usize {
    assert!(!draws.is_empty(), "no draws to choose a representative from");
    let mut best = 0;
    let mut best_d2 = f64::INFINITY;
    for (m, assign) in draws.iter().enumerate() {
        let d2 = frobenius_distance2(assign, p);
        if d2 < best_d2 {
            best = m;
            best_d2 = d2;
        }
    }
    best
}

/// One draw's heterogeneity index. `dsi` centers both sums at the unweighted
/// grand mean of psi_i, which makes it a literal regression R-squared in
/// [0,1]; `dsi_weighted_center` centers at the draw's bootstrap-weighted
/// population value instead and is carried as a diagnostic. Either is None
/// when its denominator vanishes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DsiDraw {
    pub dsi: Option<f64>,
    pub dsi_weighted_center: Option<f64>,
}

/// Per-draw indices plus a count of draws whose canonical DSI was undefined
/// (all subject effects identical).
#[derive(Debug, Clone, PartialEq)]
pub struct DsiDraws {
    pub per_draw: Vec<DsiDraw>,
    pub missing: usize,
}

/// Between-over-total sum of squares of psi_i around cluster means, for one
/// draw. `psi_weighted` is the draw's weighted population contrast.
pub fn dsi_draw(psi_i: &[f64], assign: &[(usize, usize)], psi_weighted: f64) -> DsiDraw {
    let n = psi_i.len();
    assert!(n >= 2, "heterogeneity needs at least two subjects");
    assert_eq!(n, assign.len());

    // Unweighted within-cluster means of psi_i.
    let mut sums: Vec<((usize, usize), f64, usize)> = Vec::new();
    for (a, &p) in assign.iter().zip(psi_i) {
        match sums.iter_mut().find(|(key, _, _)| key == a) {
            Some((_, s, c)) => {
                *s += p;
                *c += 1;
            }
            None => sums.push((*a, p, 1)),
        }
    }
    let cluster_mean = |a: &(usize, usize)| {
        let (_, s, c) = sums.iter().find(|(key, _, _)| key == a).expect("seen above");
        s / *c as f64
    };

    let grand = psi_i.iter().sum::<f64>() / n as f64;
    let ratio_at = |center: f64| {
        let mut between = 0.0;
        let mut total = 0.0;
        for (a, &p) in assign.iter().zip(psi_i) {
            let m = cluster_mean(a);
            between += (m - center) * (m - center);
            total += (p - center) * (p - center);
        }
        if total > 0.0 {
            Some(between / total)
        } else {
            None
        }
    };
    DsiDraw { dsi: ratio_at(grand), dsi_weighted_center: ratio_at(psi_weighted) }
}

/// All draws at once; inputs are parallel per-draw vectors.
pub fn dsi(
    per_draw_psi_i: &[Vec<f64>],
    per_draw_assign: &[Vec<(usize, usize)>],
    per_draw_psi: &[f64],
) -> DsiDraws {
    assert_eq!(per_draw_psi_i.len(), per_draw_assign.len());
    assert_eq!(per_draw_psi_i.len(), per_draw_psi.len());
    let per_draw: Vec<DsiDraw> = per_draw_psi_i
        .iter()
        .zip(per_draw_assign)
        .zip(per_draw_psi)
        .map(|((psi_i, assign), &psi)| dsi_draw(psi_i, assign, psi))
        .collect();
    let missing = per_draw.iter().filter(|d| d.dsi.is_none()).count();
    DsiDraws { per_draw, missing }
}

/// Node attributes for plotting: the representative partition's assignment
/// and the posterior mean subject effect.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphNode {
    pub id: usize,
    pub cluster: (usize, usize),
    pub psi_mean: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphEdge {
    pub i: usize,
    pub j: usize,
    pub weight: f64,
}

/// Thresholded upper-triangle edge list of P plus per-node attributes, for
/// external graph layout.
pub fn export_graph(
    p: &CoClusterMatrix,
    threshold: f64,
    mode: &[(usize, usize)],
    psi_mean: &[f64],
) -> Result<(Vec<GraphNode>, Vec<GraphEdge>)> {
    if !(0.0..1.0).contains(&threshold) {
        return Err(Error::config(format!("edge threshold must be in [0,1), got {threshold}")));
    }
    let n = p.n();
    assert_eq!(mode.len(), n);
    assert_eq!(psi_mean.len(), n);
    let nodes = (0..n)
        .map(|id| GraphNode { id, cluster: mode[id], psi_mean: psi_mean[id] })
        .collect();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let w = p.get(i, j);
            if w > threshold {
                edges.push(GraphEdge { i, j, weight: w });
            }
        }
    }
    Ok((nodes, edges))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn random_assign(rng: &mut ChaCha12Rng, n: usize, j_max: usize, k_max: usize) -> Vec<(usize, usize)> {
        (0..n).map(|_| (rng.gen_range(0..j_max), rng.gen_range(0..k_max))).collect()
    }

    #[test]
    fn adjacency_matches_definition() {
        let c = adjacency(&[(1, 1), (1, 1), (2, 1)]);
        let want = [[1.0, 1.0, 0.0], [1.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(c.get(i, j), want[i][j]);
            }
        }

        // All singletons: the identity.
        let c = adjacency(&[(0, 0), (1, 0), (2, 0), (3, 0)]);
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(c.get(i, j), f64::from(u8::from(i == j)));
            }
        }

        // Same outer, different nested: joint adjacency separates them, the
        // outer diagnostic does not.
        let assign = [(0, 0), (0, 1)];
        assert_eq!(adjacency(&assign).get(0, 1), 0.0);
        assert_eq!(adjacency_outer(&assign).get(0, 1), 1.0);
    }

    #[test]
    fn adjacency_agrees_with_pairwise_brute_force() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        for _ in 0..20 {
            let assign = random_assign(&mut rng, 12, 3, 2);
            let c = adjacency(&assign);
            for i in 0..12 {
                for j in 0..12 {
                    let want = f64::from(u8::from(assign[i] == assign[j]));
                    assert_eq!(c.get(i, j), want);
                    assert_eq!(c.get(i, j), c.get(j, i));
                }
            }
        }
    }

    #[test]
    fn adjacency_is_invariant_to_label_permutation() {
        let assign = [(0, 0), (1, 0), (0, 1), (1, 0), (2, 0)];
        // Relabel outer 0<->1 and nested 0<->1 within outer 0.
        let relabeled = [(1, 1), (0, 0), (1, 0), (0, 0), (2, 0)];
        assert_eq!(adjacency(&assign), adjacency(&relabeled));
    }

    #[test]
    fn streamed_average_equals_batch_average() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let draws: Vec<Vec<(usize, usize)>> =
            (0..20).map(|_| random_assign(&mut rng, 10, 3, 2)).collect();
        let mut accum = CoClusterAccum::new(10);
        for d in &draws {
            accum.add_draw(d);
        }
        let p = accum.finish();
        for i in 0..10 {
            for j in 0..10 {
                let batch: f64 =
                    draws.iter().map(|d| adjacency(d).get(i, j)).sum::<f64>() / 20.0;
                assert!((p.get(i, j) - batch).abs() < 1e-12);
                assert!((0.0..=1.0).contains(&p.get(i, j)));
            }
        }
        assert_eq!(p.get(3, 3), 1.0);
    }

    #[test]
    fn single_draw_average_is_its_own_adjacency() {
        let assign = vec![(0, 0), (1, 0), (0, 0)];
        let mut accum = CoClusterAccum::new(3);
        accum.add_draw(&assign);
        assert_eq!(accum.finish(), adjacency(&assign));
    }

    #[test]
    fn disjoint_partitions_average_to_halves() {
        let mut accum = CoClusterAccum::new(3);
        accum.add_draw(&[(0, 0), (0, 0), (1, 0)]);
        accum.add_draw(&[(0, 0), (1, 0), (1, 0)]);
        let p = accum.finish();
        assert_eq!(p.get(0, 1), 0.5);
        assert_eq!(p.get(1, 2), 0.5);
        assert_eq!(p.get(0, 2), 0.0);
        assert_eq!(p.get(0, 0), 1.0);
    }

    #[test]
    fn mode_partition_matches_exhaustive_search() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let draws: Vec<Vec<(usize, usize)>> =
            (0..5).map(|_| random_assign(&mut rng, 6, 2, 2)).collect();
        let mut accum = CoClusterAccum::new(6);
        for d in &draws {
            accum.add_draw(d);
        }
        let p = accum.finish();

        // Materialized distances, computed the slow way.
        let exhaustive: Vec<f64> = draws
            .iter()
            .map(|d| {
                let c = adjacency(d);
                let mut d2 = 0.0;
                for i in 0..6 {
                    for j in 0..6 {
                        d2 += (c.get(i, j) - p.get(i, j)).powi(2);
                    }
                }
                d2
            })
            .collect();
        let want = exhaustive
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        let got = mode_partition(&draws, &p);
        assert_eq!(got, want);
        for (d, &e) in draws.iter().zip(&exhaustive) {
            assert!((frobenius_distance2(d, &p) - e).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_draws_pick_the_first_at_distance_zero() {
        let draws: Vec<Vec<(usize, usize)>> = vec![vec![(0, 0), (1, 0), (1, 0)]; 4];
        let mut accum = CoClusterAccum::new(3);
        for d in &draws {
            accum.add_draw(d);
        }
        let p = accum.finish();
        assert_eq!(mode_partition(&draws, &p), 0);
        assert_eq!(frobenius_distance2(&draws[0], &p), 0.0);
    }

    #[test]
    fn dsi_anova_decomposition_edge_cases() {
        // Singleton clusters: cluster mean is the value itself, ratio 1.
        let d = dsi_draw(&[1.0, 2.0, 5.0], &[(0, 0), (1, 0), (2, 0)], 0.0);
        assert_eq!(d.dsi, Some(1.0));

        // One cluster: cluster mean is the grand mean, ratio 0.
        let d = dsi_draw(&[1.0, 2.0, 5.0], &[(0, 0), (0, 0), (0, 0)], 0.0);
        assert_eq!(d.dsi, Some(0.0));

        // Perfectly separated pair of clusters.
        let d = dsi_draw(&[0.0, 0.0, 10.0, 10.0], &[(0, 0), (0, 0), (1, 0), (1, 0)], 0.0);
        assert!((d.dsi.unwrap() - 1.0).abs() < 1e-12);

        // The same values split across both clusters explain nothing.
        let d = dsi_draw(&[0.0, 10.0, 0.0, 10.0], &[(0, 0), (0, 0), (1, 0), (1, 0)], 0.0);
        assert!(d.dsi.unwrap().abs() < 1e-12);
    }

    #[test]
    fn dsi_flags_degenerate_draws_and_stays_bounded() {
        let flat = dsi_draw(&[2.0, 2.0, 2.0], &[(0, 0), (0, 0), (1, 0)], 2.0);
        assert_eq!(flat.dsi, None);
        // Weighted center off the common value still defines the diagnostic:
        // cluster means equal the values, so it collapses to 1.
        let off = dsi_draw(&[2.0, 2.0, 2.0], &[(0, 0), (0, 0), (1, 0)], 3.0);
        assert_eq!(off.dsi_weighted_center, Some(1.0));

        let all = dsi(
            &[vec![1.0, 2.0], vec![3.0, 3.0]],
            &[vec![(0, 0), (1, 0)], vec![(0, 0), (1, 0)]],
            &[1.4, 3.0],
        );
        assert_eq!(all.missing, 1);
        assert_eq!(all.per_draw[0].dsi, Some(1.0));

        // Both variants live in [0,1] on arbitrary draws: between-cluster
        // spread never exceeds the total around any common center.
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        for _ in 0..200 {
            let n = rng.gen_range(2..12);
            let assign = random_assign(&mut rng, n, 3, 2);
            let psi_i: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * 10.0 - 5.0).collect();
            let center = rng.gen::<f64>() * 10.0 - 5.0;
            let d = dsi_draw(&psi_i, &assign, center);
            for v in [d.dsi, d.dsi_weighted_center].into_iter().flatten() {
                assert!((-1e-12..=1.0 + 1e-12).contains(&v), "ratio {v} out of bounds");
            }
        }
    }

    #[test]
    fn graph_export_thresholds_edges() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let draws: Vec<Vec<(usize, usize)>> =
            (0..9).map(|_| random_assign(&mut rng, 8, 2, 1)).collect();
        let mut accum = CoClusterAccum::new(8);
        for d in &draws {
            accum.add_draw(d);
        }
        let p = accum.finish();
        let mode = draws[0].clone();
        let psi = vec![0.5; 8];

        let (nodes, edges) = export_graph(&p, 0.35, &mode, &psi).unwrap();
        assert_eq!(nodes.len(), 8);
        let brute = {
            let mut c = 0;
            for i in 0..8 {
                for j in (i + 1)..8 {
                    if p.get(i, j) > 0.35 {
                        c += 1;
                    }
                }
            }
            c
        };
        assert_eq!(edges.len(), brute);
        assert!(edges.iter().all(|e| e.i < e.j && e.weight > 0.35));

        // Identity P keeps no edges at a high threshold; with 9 draws of two
        // clusters every off-diagonal is positive, so threshold 0 keeps all.
        let singletons = adjacency(&(0..8).map(|i| (i, 0)).collect::<Vec<_>>());
        let (_, none) = export_graph(&singletons, 0.99, &mode, &psi).unwrap();
        assert!(none.is_empty());
        let (_, all) = export_graph(&p, 0.0, &mode, &psi).unwrap();
        let positive = {
            let mut c = 0;
            for i in 0..8 {
                for j in (i + 1)..8 {
                    if p.get(i, j) > 0.0 {
                        c += 1;
                    }
                }
            }
            c
        };
        assert_eq!(all.len(), positive);

        assert!(export_graph(&p, 1.0, &mode, &psi).is_err());
    }
}
