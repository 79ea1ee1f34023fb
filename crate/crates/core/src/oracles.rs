//! The two probability oracles.
//!
//! Both follow the same recipe. During preprocessing every training tuple's
//! self-excluded k-vicinity is summarized by one number (its radius, or the
//! target uncertainty inside it) and the numbers are sorted into a
//! [`RankList`]. At query time the query's own number is ranked against that
//! list, and the rank fraction `r` is turned into a probability with the
//! normal CDF, `Φ((r − μ) / σ)`, where `1 − μ` is the expected fraction of
//! outlying (or uncertain) tuples.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Points, Targets};
use crate::error::{Error, Result};
use crate::knn::{KnnIndex, Neighborhood};
use crate::metrics::MetricId;
pub use crate::stats::std_normal_cdf;

/// Parameters shared by both oracles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleParams {
    /// Neighborhood size.
    pub k: usize,
    /// `1 − c`, with `c` the expected outlier ratio.
    pub mu_o: f64,
    pub sigma_o: f64,
    /// `1 − u`, with `u` the expected uncertainty ratio.
    pub mu_u: f64,
    pub sigma_u: f64,
    pub metric: MetricId,
    /// For binary classification, use the neighborhood entropy itself as
    /// `p_u` instead of its rank transform.
    pub binary_entropy_direct: bool,
}

impl Default for OracleParams {
    fn default() -> Self {
        OracleParams {
            k: 10,
            mu_o: 0.9,
            sigma_o: 0.1,
            mu_u: 0.9,
            sigma_u: 0.1,
            metric: MetricId::Euclidean,
            binary_entropy_direct: false,
        }
    }
}

impl OracleParams {
    pub fn outlier_ratio(&self) -> f64 {
        1.0 - self.mu_o
    }

    pub fn uncertainty_ratio(&self) -> f64 {
        1.0 - self.mu_u
    }

    pub fn with_outlier_ratio(mut self, c: f64) -> Self {
        self.mu_o = 1.0 - c;
        self
    }

    pub fn with_uncertainty_ratio(mut self, u: f64) -> Self {
        self.mu_u = 1.0 - u;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidParams("k must be at least 1".into()));
        }
        for (name, mu) in [("outlier", self.mu_o), ("uncertainty", self.mu_u)] {
            if !(mu > 0.0 && mu <= 1.0) {
                return Err(Error::InvalidParams(format!(
                    "{name} mean {mu} outside (0, 1]; the ratio must lie in [0, 1)"
                )));
            }
        }
        for (name, s) in [("sigma", self.sigma_o), ("sigma_u", self.sigma_u)] {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::InvalidParams(format!("{name} must be positive, got {s}")));
            }
        }
        Ok(())
    }
}

/// Sorted multiset of per-tuple values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankList {
    values: Vec<f64>,
}

impl RankList {
    pub fn from_unsorted(mut values: Vec<f64>) -> Self {
        values.sort_by(f64::total_cmp);
        RankList { values }
    }

    /// Wraps values that must already be sorted ascending.
    pub fn from_sorted(values: Vec<f64>) -> Result<Self> {
        if values.windows(2).any(|w| w[0] > w[1]) || values.iter().any(|v| v.is_nan()) {
            return Err(Error::Integrity("rank list is not sorted".into()));
        }
        Ok(RankList { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn min(&self) -> Option<f64> {
        self.values.first().copied()
    }

    pub fn max(&self) -> Option<f64> {
        self.values.last().copied()
    }

    /// Fraction of entries not larger than `value`.
    pub fn rank_fraction(&self, value: f64) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        let at_most = self.values.partition_point(|&x| x <= value);
        at_most as f64 / self.values.len() as f64
    }
}

/// `Φ((rank − mu) / sigma)`.
#[inline]
pub fn rank_probability(rank: f64, mu: f64, sigma: f64) -> f64 {
    std_normal_cdf((rank - mu) / sigma)
}

fn entropy_of(ids: impl Iterator<Item = u32>, classes: usize) -> f64 {
    let mut counts = vec![0usize; classes.max(1)];
    let mut total = 0usize;
    for id in ids {
        let id = id as usize;
        if id >= counts.len() {
            counts.resize(id + 1, 0);
        }
        counts[id] += 1;
        total += 1;
    }
    if total == 0 {
        return 0.0;
    }
    let total = total as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.log2()
        })
        .sum::<f64>()
        .max(0.0)
}

/// Shannon entropy (bits) of class labels.
pub fn entropy(labels: &[u32]) -> f64 {
    let classes = labels.iter().max().map_or(0, |&m| m as usize + 1);
    entropy_of(labels.iter().copied(), classes)
}

/// Residual sum of squares about the mean.
pub fn rss(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let m = values.iter().sum::<f64>() / values.len() as f64;
    values.iter().map(|y| (y - m) * (y - m)).sum()
}

/// Target uncertainty among the rows `rows`: entropy for class targets, RSS
/// for real-valued ones.
pub fn uncertainty(targets: &Targets, rows: &[usize]) -> f64 {
    match targets {
        Targets::Classes { ids, labels } => entropy_of(rows.iter().map(|&r| ids[r]), labels.len()),
        Targets::Values(v) => {
            let ys: Vec<f64> = rows.iter().map(|&r| v[r]).collect();
            rss(&ys)
        }
    }
}

/// Self-excluded k-NN of every training row, in row order.
pub fn self_neighborhoods(points: &Points, index: &KnnIndex, k: usize) -> Result<Vec<Neighborhood>> {
    let n = points.len();
    if k == 0 || k >= n {
        return Err(Error::KOutOfRange {
            k,
            max: n.saturating_sub(1),
        });
    }
    (0..n)
        .into_par_iter()
        .map(|i| index.knn(points.row(i), k, Some(i)))
        .collect()
}

/// Sorted self-excluded k-vicinity radii of all training rows.
pub fn preprocess_representation(points: &Points, index: &KnnIndex, k: usize) -> Result<RankList> {
    let radii = self_neighborhoods(points, index, k)?
        .iter()
        .map(Neighborhood::radius)
        .collect();
    Ok(RankList::from_unsorted(radii))
}

/// Sorted self-excluded neighborhood uncertainties of all training rows.
pub fn preprocess_uncertainty(
    points: &Points,
    targets: &Targets,
    index: &KnnIndex,
    k: usize,
) -> Result<RankList> {
    let values = self_neighborhoods(points, index, k)?
        .iter()
        .map(|nb| uncertainty(targets, &nb.indices))
        .collect();
    Ok(RankList::from_unsorted(values))
}

/// Rank and probability of a query's k-vicinity radius.
pub fn representation_probability(gamma: &RankList, radius: f64, params: &OracleParams) -> (f64, f64) {
    let r = gamma.rank_fraction(radius);
    (r, rank_probability(r, params.mu_o, params.sigma_o))
}

/// Rank and probability of a query's neighborhood uncertainty. In direct
/// mode (binary targets only) the entropy itself is the probability.
pub fn certainty_probability(
    gamma_u: &RankList,
    value: f64,
    params: &OracleParams,
    binary_target: bool,
) -> (f64, f64) {
    let r = gamma_u.rank_fraction(value);
    if params.binary_entropy_direct && binary_target {
        (r, value.clamp(0.0, 1.0))
    } else {
        (r, rank_probability(r, params.mu_u, params.sigma_u))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{example_two, EXAMPLE_TWO_RADII};

    fn example_index() -> (Points, KnnIndex) {
        let p = example_two();
        let idx = KnnIndex::build(&p, MetricId::Euclidean).unwrap();
        (p, idx)
    }

    #[test]
    fn example_two_radius_multiset() {
        let (p, idx) = example_index();
        let gamma = preprocess_representation(&p, &idx, 2).unwrap();
        let mut printed = EXAMPLE_TWO_RADII.to_vec();
        printed.sort_by(f64::total_cmp);
        // the reference column keeps three decimals by truncation
        for (got, want) in gamma.values().iter().zip(&printed) {
            assert_eq!((got * 1000.0).floor() / 1000.0, *want, "{got} vs {want}");
            assert!((got - want).abs() < 1e-3);
        }
    }

    #[test]
    fn example_two_p_o() {
        let (p, idx) = example_index();
        let gamma = preprocess_representation(&p, &idx, 2).unwrap();
        let params = OracleParams {
            k: 2,
            mu_o: 0.8,
            sigma_o: 0.1,
            ..OracleParams::default()
        };
        let rho = idx.kvicinity_radius(&[0.81, 0.76], 2, None).unwrap();
        let (r, po) = representation_probability(&gamma, rho, &params);
        assert_eq!(r, 0.9);
        assert!((po - 0.8413).abs() <= 1e-3);
    }

    #[test]
    fn pair_radii_equal_pairwise_distance() {
        let p = Points::from_rows(&[[0.0, 0.0], [0.3, 0.4]]).unwrap();
        let idx = KnnIndex::build(&p, MetricId::Euclidean).unwrap();
        let g = preprocess_representation(&p, &idx, 1).unwrap();
        assert_eq!(g.values(), &[0.5, 0.5]);
    }

    #[test]
    fn identical_points_have_zero_radii() {
        let p = Points::from_rows(&[[0.2, 0.2]; 6]).unwrap();
        let idx = KnnIndex::build(&p, MetricId::Euclidean).unwrap();
        let g = preprocess_representation(&p, &idx, 3).unwrap();
        assert!(g.values().iter().all(|&r| r == 0.0));
    }

    #[test]
    fn k_must_leave_room_for_self_exclusion() {
        let (p, idx) = example_index();
        assert!(matches!(
            preprocess_representation(&p, &idx, 10),
            Err(Error::KOutOfRange { k: 10, max: 9 })
        ));
    }

    #[test]
    fn rank_fraction_boundaries() {
        let (p, idx) = example_index();
        let g = preprocess_representation(&p, &idx, 2).unwrap();
        assert_eq!(g.rank_fraction(0.286), 0.9);
        assert_eq!(g.rank_fraction(0.0), 0.0);
        assert_eq!(g.rank_fraction(g.max().unwrap()), 1.0);
    }

    #[test]
    fn far_and_dense_queries() {
        let (p, idx) = example_index();
        let g = preprocess_representation(&p, &idx, 2).unwrap();
        let params = OracleParams { k: 2, ..OracleParams::default() };
        let far = idx.kvicinity_radius(&[50.0, 50.0], 2, None).unwrap();
        let (r, po) = representation_probability(&g, far, &params);
        assert_eq!(r, 1.0);
        assert!((po - 0.841345).abs() < 1e-5);
        // t4 sits in the densest spot (radius 0.082): rank of its own
        // un-excluded radius is tiny
        let dense = idx.kvicinity_radius(&[0.13, 0.9], 2, None).unwrap();
        let (r, po) = representation_probability(&g, dense, &params);
        assert!(r <= 0.1);
        assert!(po < 1e-9);
    }

    #[test]
    fn entropy_and_rss_values() {
        let five_five: Vec<u32> = [0; 5].into_iter().chain([1; 5]).collect();
        assert_eq!(entropy(&five_five), 1.0);
        assert_eq!(entropy(&[0; 10]), 0.0);
        let nine_one: Vec<u32> = [0; 9].into_iter().chain([1]).collect();
        // closed form evaluated independently of the counting path
        let expected = -(0.9f64 * 0.9f64.log2()) - 0.1 * 0.1f64.log2();
        assert!((entropy(&nine_one) - expected).abs() < 1e-12);
        assert!((entropy(&nine_one) - 0.4690).abs() < 1e-4);
        assert_eq!(rss(&[1.0, 2.0, 3.0]), 2.0);
    }

    #[test]
    fn constant_targets_give_zero_uncertainty_lists() {
        let (p, idx) = example_index();
        let cls = Targets::classes_from_labels(&["a"; 10]);
        let g = preprocess_uncertainty(&p, &cls, &idx, 3).unwrap();
        assert!(g.values().iter().all(|&u| u == 0.0));
        let reg = Targets::Values(vec![4.2; 10]);
        let g = preprocess_uncertainty(&p, &reg, &idx, 3).unwrap();
        assert!(g.values().iter().all(|&u| u == 0.0));
    }

    /// Brute-force neighborhood entropy on a fine checkerboard: every
    /// 10-NN straddles cells, so entries sit near one bit.
    #[test]
    fn checkerboard_uncertainty_near_one() {
        let side = 20;
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..side {
            for j in 0..side {
                rows.push([i as f64 / side as f64, j as f64 / side as f64]);
                labels.push(((i + j) % 2) as u32);
            }
        }
        let p = Points::from_rows(&rows).unwrap();
        let t = Targets::Classes { ids: labels.clone(), labels: vec!["0".into(), "1".into()] };
        let idx = KnnIndex::build(&p, MetricId::Euclidean).unwrap();
        let g = preprocess_uncertainty(&p, &t, &idx, 10).unwrap();

        // oracle: sort all other rows by (distance, id) and count labels
        let mut brute = Vec::new();
        for i in 0..rows.len() {
            let mut d: Vec<(f64, usize)> = (0..rows.len())
                .filter(|&j| j != i)
                .map(|j| (MetricId::Euclidean.eval(&rows[i], &rows[j]), j))
                .collect();
            d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let ones = d[..10].iter().filter(|(_, j)| labels[*j] == 1).count() as f64 / 10.0;
            let h = if ones == 0.0 || ones == 1.0 {
                0.0
            } else {
                -ones * ones.log2() - (1.0 - ones) * (1.0 - ones).log2()
            };
            brute.push(h);
        }
        brute.sort_by(f64::total_cmp);
        for (a, b) in g.values().iter().zip(&brute) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(g.values().iter().all(|&u| u >= 0.7), "{:?}", g.min());
        assert!(crate::stats::mean(g.values()) > 0.9);
    }

    #[test]
    fn direct_and_rank_modes() {
        let g = RankList::from_unsorted(vec![0.0, 0.0, 0.2, 0.5, 0.9]);
        let direct = OracleParams { binary_entropy_direct: true, ..OracleParams::default() };
        assert_eq!(certainty_probability(&g, 1.0, &direct, true).1, 1.0);
        let rank = OracleParams::default();
        let (r, p) = certainty_probability(&g, 1.0, &rank, true);
        assert_eq!(r, 1.0);
        assert!((p - 0.8413).abs() <= 1e-3);
        // the flag is ignored for non-binary targets
        let (r, p) = certainty_probability(&g, 0.2, &direct, false);
        assert_eq!(r, 0.6);
        assert_eq!(p, rank_probability(0.6, 0.9, 0.1));
    }

    #[test]
    fn params_validation() {
        assert!(OracleParams::default().validate().is_ok());
        assert!(OracleParams { k: 0, ..Default::default() }.validate().is_err());
        assert!(OracleParams { mu_o: 0.0, ..Default::default() }.validate().is_err());
        assert!(OracleParams { mu_u: 1.2, ..Default::default() }.validate().is_err());
        assert!(OracleParams { sigma_u: 0.0, ..Default::default() }.validate().is_err());
        let p = OracleParams::default().with_outlier_ratio(0.2);
        assert!((p.mu_o - 0.8).abs() < 1e-15);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn rank_fraction_matches_linear_count(
                values in prop::collection::vec(0u32..50, 1..200),
                probe in 0u32..55,
            ) {
                let vals: Vec<f64> = values.iter().map(|&v| v as f64 / 10.0).collect();
                let list = RankList::from_unsorted(vals.clone());
                let v = probe as f64 / 10.0;
                let naive = vals.iter().filter(|&&x| x <= v).count() as f64 / vals.len() as f64;
                prop_assert_eq!(list.rank_fraction(v), naive);
            }

            #[test]
            fn p_o_monotone_in_radius(
                values in prop::collection::vec(0.0f64..1.0, 1..100),
                a in 0.0f64..1.2, b in 0.0f64..1.2,
            ) {
                let list = RankList::from_unsorted(values);
                let params = OracleParams::default();
                let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                let plo = representation_probability(&list, lo, &params).1;
                let phi = representation_probability(&list, hi, &params).1;
                prop_assert!(plo <= phi);
                prop_assert!((0.0..=1.0).contains(&plo) && (0.0..=1.0).contains(&phi));
            }

            #[test]
            fn entropy_bounded_by_log_classes(labels in prop::collection::vec(0u32..5, 1..40)) {
                let h = entropy(&labels);
                let distinct = {
                    let mut l = labels.clone();
                    l.sort();
                    l.dedup();
                    l.len()
                };
                prop_assert!(h >= 0.0);
                prop_assert!(h <= (distinct as f64).log2() + 1e-12);
            }

            #[test]
            fn rss_nonnegative(values in prop::collection::vec(-1e3f64..1e3, 1..30)) {
                prop_assert!(rss(&values) >= 0.0);
            }

            #[test]
            fn duplicating_rows_keeps_rank_fractions(
                values in prop::collection::vec(0.0f64..1.0, 1..60), probe in 0.0f64..1.0,
            ) {
                let once = RankList::from_unsorted(values.clone());
                let twice = RankList::from_unsorted(values.iter().chain(&values).copied().collect());
                prop_assert_eq!(once.rank_fraction(probe), twice.rank_fraction(probe));
            }
        }
    }
}
