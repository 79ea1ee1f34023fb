//! Choosing the outlier ratio `c`, the neighborhood size `k` and the
//! uncertainty ratio `u` from the data.
//!
//! For a candidate `(c, k)` the `m = ⌊c·n⌋` largest self-excluded k-vicinity
//! radii are taken as outliers and the next `m` as the inliers closest to
//! them. `T_{c,k}` is the standardized difference of their mean log radii.
//! Each `c` keeps its best `k`. The `c` whose statistic sits furthest into
//! its noncentral t distribution (`df = 2m − 2`) wins.
//!
//! The uncertainty ratio is the knee of the reverse cumulative curve of
//! per-row neighborhood uncertainties.

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::knn::{KnnIndex, Neighborhood};
use crate::metrics::MetricId;
use crate::oracles;
use crate::stats::{mean, sample_variance};
pub use crate::stats::noncentral_t_cdf;

/// Radii below this are clamped before taking logs.
pub const RADIUS_FLOOR: f64 = 1e-12;
/// Fallback uncertainty ratio when the curve has no knee.
pub const DEFAULT_U: f64 = 0.1;

/// Candidate values for `c` and `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningGrid {
    pub c_values: Vec<f64>,
    pub k_values: Vec<usize>,
}

impl Default for TuningGrid {
    fn default() -> Self {
        TuningGrid {
            c_values: vec![0.05, 0.1, 0.2],
            k_values: vec![5, 10, 20],
        }
    }
}

impl TuningGrid {
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.c_values.is_empty() || self.k_values.is_empty() {
            return Err(Error::InvalidParams("tuning grid is empty".into()));
        }
        for &c in &self.c_values {
            if !(c > 0.0 && c < 0.5) {
                return Err(Error::InvalidParams(format!("c = {c} outside (0, 0.5)")));
            }
            if group_size(c, n) < 2 {
                return Err(Error::InvalidParams(format!(
                    "c = {c} gives fewer than 2 outliers for n = {n}"
                )));
            }
        }
        for &k in &self.k_values {
            if k == 0 || k >= n {
                return Err(Error::KOutOfRange {
                    k,
                    max: n.saturating_sub(1),
                });
            }
        }
        Ok(())
    }
}

/// `⌊c·n⌋`.
pub fn group_size(c: f64, n: usize) -> usize {
    (c * n as f64).floor() as usize
}

/// Log-radius moments of the outlier and inlier groups.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupMoments {
    pub size: usize,
    pub mean_out: f64,
    pub mean_in: f64,
    pub var_out: f64,
    pub var_in: f64,
}

impl GroupMoments {
    /// Splits `log_desc` (log radii, sorted descending) into the top `m`
    /// and the next `m`.
    fn from_sorted_logs(log_desc: &[f64], m: usize) -> Result<Self> {
        if m < 2 || 2 * m > log_desc.len() {
            return Err(Error::InvalidParams(format!(
                "group size {m} needs 2..={} for {} rows",
                log_desc.len() / 2,
                log_desc.len()
            )));
        }
        let (out, inl) = (&log_desc[..m], &log_desc[m..2 * m]);
        Ok(GroupMoments {
            size: m,
            mean_out: mean(out),
            mean_in: mean(inl),
            var_out: sample_variance(out),
            var_in: sample_variance(inl),
        })
    }

    /// `(μ_out − μ_in) / sqrt((σ²_out + σ²_in) / m)`.
    pub fn statistic(&self) -> Result<f64> {
        let pooled = (self.var_out + self.var_in) / self.size as f64;
        if pooled.is_nan() || pooled <= 0.0 {
            return Err(Error::Degenerate("zero variance in both radius groups".into()));
        }
        Ok((self.mean_out - self.mean_in) / pooled.sqrt())
    }

    fn average(all: &[GroupMoments]) -> GroupMoments {
        let avg = |f: fn(&GroupMoments) -> f64| all.iter().map(f).sum::<f64>() / all.len() as f64;
        GroupMoments {
            size: all[0].size,
            mean_out: avg(|g| g.mean_out),
            mean_in: avg(|g| g.mean_in),
            var_out: avg(|g| g.var_out),
            var_in: avg(|g| g.var_in),
        }
    }
}

fn sorted_log_radii(hoods: &[Neighborhood]) -> Vec<f64> {
    let mut logs: Vec<f64> = hoods.iter().map(|nb| nb.radius().max(RADIUS_FLOOR).ln()).collect();
    logs.sort_by(|a, b| b.total_cmp(a));
    logs
}

/// `T_{c,k}` from a list of radii.
pub fn t_statistic_from_radii(radii: &[f64], c: f64) -> Result<f64> {
    let mut logs: Vec<f64> = radii.iter().map(|r| r.max(RADIUS_FLOOR).ln()).collect();
    logs.sort_by(|a, b| b.total_cmp(a));
    GroupMoments::from_sorted_logs(&logs, group_size(c, radii.len()))?.statistic()
}

/// `T_{c,k}` over the self-excluded k-vicinity radii of `dataset`.
pub fn t_statistic(dataset: &Dataset, index: &KnnIndex, c: f64, k: usize) -> Result<f64> {
    let hoods = oracles::self_neighborhoods(&dataset.points, index, k)?;
    let logs = sorted_log_radii(&hoods);
    GroupMoments::from_sorted_logs(&logs, group_size(c, dataset.len()))?.statistic()
}

/// Which group moments enter the noncentrality parameter of each `c`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NcpMoments {
    /// Moments averaged over every `k` in the grid.
    #[default]
    KGridAverage,
    /// Moments at the selected `k*_c` only. The noncentrality then equals
    /// the statistic itself and every quantile sits near one half.
    BestK,
}

/// Per-`c` row of the tuning report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CRow {
    pub c: f64,
    pub group_size: usize,
    pub df: usize,
    /// `T_{c,k}` per grid `k`; `None` where degenerate.
    pub t: Vec<Option<f64>>,
    pub best_k: Option<usize>,
    pub ncp: Option<f64>,
    /// `P(z < T_{c,k*_c}; df, ncp)`.
    pub quantile: Option<f64>,
}

/// One point of the reverse cumulative uncertainty curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VPoint {
    pub r: f64,
    pub v: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyEstimate {
    pub u_hat: f64,
    /// True when the curve had no knee and `u_hat` is the fallback.
    pub degenerate: bool,
    pub v_curve: Vec<VPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningReport {
    pub n: usize,
    pub k_values: Vec<usize>,
    pub rows: Vec<CRow>,
    pub c_opt: f64,
    pub k_opt: usize,
    pub ncp_moments: NcpMoments,
    pub uncertainty: Option<UncertaintyEstimate>,
}

/// Joint `(c, k)` selection over a Euclidean index with the default
/// noncentrality moments.
pub fn tune_ck(dataset: &Dataset, grid: &TuningGrid) -> Result<TuningReport> {
    tune_ck_with(dataset, grid, NcpMoments::default())
}

/// Joint selection over a Euclidean index.
pub fn tune_ck_with(dataset: &Dataset, grid: &TuningGrid, moments: NcpMoments) -> Result<TuningReport> {
    grid.validate(dataset.len())?;
    let index = KnnIndex::build(&dataset.points, MetricId::Euclidean)?;
    tune_ck_on(dataset, &index, grid, moments)
}

/// As [`tune_ck_with`] over an existing index, which fixes the metric.
pub fn tune_ck_on(
    dataset: &Dataset,
    index: &KnnIndex,
    grid: &TuningGrid,
    moments: NcpMoments,
) -> Result<TuningReport> {
    let n = dataset.len();
    grid.validate(n)?;
    let logs_per_k: Vec<Vec<f64>> = grid
        .k_values
        .iter()
        .map(|&k| Ok(sorted_log_radii(&oracles::self_neighborhoods(&dataset.points, index, k)?)))
        .collect::<Result<_>>()?;

    let mut rows = Vec::with_capacity(grid.c_values.len());
    for &c in &grid.c_values {
        let m = group_size(c, n);
        let cell_moments: Vec<GroupMoments> = logs_per_k
            .iter()
            .map(|logs| GroupMoments::from_sorted_logs(logs, m))
            .collect::<Result<_>>()?;
        let t: Vec<Option<f64>> = cell_moments.iter().map(|g| g.statistic().ok()).collect();
        let best = t
            .iter()
            .enumerate()
            .filter_map(|(j, v)| v.map(|v| (j, v)))
            .fold(None::<(usize, f64)>, |acc, (j, v)| match acc {
                Some((bj, bv)) if bv > v || (bv == v && grid.k_values[bj] <= grid.k_values[j]) => acc,
                _ => Some((j, v)),
            });
        let df = 2 * m - 2;
        let (best_k, ncp, quantile) = match best {
            None => (None, None, None),
            Some((j, t_best)) => {
                let ncp = match moments {
                    NcpMoments::KGridAverage => GroupMoments::average(&cell_moments).statistic().ok(),
                    NcpMoments::BestK => Some(t_best),
                };
                let q = ncp.map(|ncp| noncentral_t_cdf(t_best, df as f64, ncp));
                (Some(grid.k_values[j]), ncp, q)
            }
        };
        rows.push(CRow {
            c,
            group_size: m,
            df,
            t,
            best_k,
            ncp,
            quantile,
        });
    }

    let mut choice: Option<(f64, f64, usize)> = None;
    for row in &rows {
        let (Some(q), Some(k)) = (row.quantile, row.best_k) else { continue };
        let better = match choice {
            None => true,
            Some((bq, bc, bk)) => q > bq || (q == bq && (row.c < bc || (row.c == bc && k < bk))),
        };
        if better {
            choice = Some((q, row.c, k));
        }
    }
    let (_, c_opt, k_opt) = choice.ok_or_else(|| Error::Degenerate("every tuning grid cell is degenerate".into()))?;
    Ok(TuningReport {
        n,
        k_values: grid.k_values.clone(),
        rows,
        c_opt,
        k_opt,
        ncp_moments: moments,
        uncertainty: None,
    })
}

/// Reverse cumulative curve and knee of the per-row self-excluded
/// neighborhood uncertainties.
pub fn estimate_u(dataset: &Dataset, index: &KnnIndex, k: usize) -> Result<UncertaintyEstimate> {
    let values: Vec<f64> = oracles::self_neighborhoods(&dataset.points, index, k)?
        .iter()
        .map(|nb| oracles::uncertainty(&dataset.targets, &nb.indices))
        .collect();
    knee_of(&values)
}

/// `V(r)` for `r = 0.01, 0.02, …, 0.50`, where a fraction `r` of the values
/// exceed `V(r)`, and the grid point with the largest second difference.
pub fn knee_of(values: &[f64]) -> Result<UncertaintyEstimate> {
    if values.is_empty() {
        return Err(Error::EmptyTable);
    }
    let n = values.len();
    let mut desc = values.to_vec();
    desc.sort_by(|a, b| b.total_cmp(a));
    let v_curve: Vec<VPoint> = (1..=50usize)
        .map(|i| VPoint {
            r: i as f64 / 100.0,
            v: desc[(i * n / 100).min(n - 1)],
        })
        .collect();
    let mut knee: Option<(usize, f64)> = None;
    for i in 1..v_curve.len() - 1 {
        let d2 = v_curve[i + 1].v - 2.0 * v_curve[i].v + v_curve[i - 1].v;
        if knee.is_none_or(|(_, best)| d2 > best) {
            knee = Some((i, d2));
        }
    }
    Ok(match knee {
        Some((i, d2)) if d2 > 0.0 => UncertaintyEstimate {
            u_hat: v_curve[i].r,
            degenerate: false,
            v_curve,
        },
        _ => UncertaintyEstimate {
            u_hat: DEFAULT_U,
            degenerate: true,
            v_curve,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Points, Targets};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dataset(rows: &[[f64; 2]]) -> Dataset {
        let ys = vec![0.0; rows.len()];
        Dataset::from_encoded(Points::from_rows(rows).unwrap(), Targets::Values(ys)).unwrap()
    }

    fn random_rows(n: usize, seed: u64) -> Vec<[f64; 2]> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| [rng.random::<f64>(), rng.random::<f64>()]).collect()
    }

    /// Direct evaluation of the formula, independent of the grouping code.
    fn t_by_hand(out: &[f64], inl: &[f64]) -> f64 {
        let lo: Vec<f64> = out.iter().map(|r| r.ln()).collect();
        let li: Vec<f64> = inl.iter().map(|r| r.ln()).collect();
        let m = lo.len() as f64;
        let mo = lo.iter().sum::<f64>() / m;
        let mi = li.iter().sum::<f64>() / m;
        let vo = lo.iter().map(|x| (x - mo).powi(2)).sum::<f64>() / (m - 1.0);
        let vi = li.iter().map(|x| (x - mi).powi(2)).sum::<f64>() / (m - 1.0);
        (mo - mi) / ((vo + vi) / m).sqrt()
    }

    #[test]
    fn separated_clusters_give_large_t() {
        let out = [1.0, 0.9, 1.1, 0.95];
        let inl = [0.011, 0.009, 0.010, 0.0105];
        let mut radii: Vec<f64> = out.iter().chain(&inl).copied().collect();
        radii.extend(std::iter::repeat_n(0.001, 32));
        let t = t_statistic_from_radii(&radii, 0.1).unwrap();
        assert!((t - t_by_hand(&out, &inl)).abs() < 1e-9 * t.abs());
        assert!(t > 50.0);
    }

    #[test]
    fn equal_radii_are_degenerate() {
        assert!(matches!(
            t_statistic_from_radii(&[0.5; 40], 0.1),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn forty_rows_give_groups_of_four() {
        let d = dataset(&random_rows(40, 1));
        let idx = KnnIndex::build(&d.points, MetricId::Euclidean).unwrap();
        assert_eq!(group_size(0.1, 40), 4);
        assert!(t_statistic(&d, &idx, 0.1, 3).unwrap().is_finite());
    }

    #[test]
    fn zero_radii_are_floored() {
        let mut rows = vec![[0.5, 0.5]; 30];
        rows.extend(random_rows(30, 2));
        let d = dataset(&rows);
        let idx = KnnIndex::build(&d.points, MetricId::Euclidean).unwrap();
        assert!(t_statistic(&d, &idx, 0.1, 2).unwrap().is_finite());
    }

    #[test]
    fn scaling_shifts_means_and_keeps_t() {
        for seed in 0..5 {
            let rows = random_rows(120, seed);
            let d = dataset(&rows);
            let idx = KnnIndex::build(&d.points, MetricId::Euclidean).unwrap();
            let t = t_statistic(&d, &idx, 0.1, 5).unwrap();
            let base = sorted_log_radii(&oracles::self_neighborhoods(&d.points, &idx, 5).unwrap());
            for lambda in [0.5, 3.0] {
                let scaled: Vec<[f64; 2]> = rows.iter().map(|r| [r[0] * lambda, r[1] * lambda]).collect();
                let ds = dataset(&scaled);
                let is = KnnIndex::build(&ds.points, MetricId::Euclidean).unwrap();
                let ts = t_statistic(&ds, &is, 0.1, 5).unwrap();
                assert!((ts - t).abs() <= 1e-8 * t.abs().max(1.0), "{ts} vs {t}");
                let logs = sorted_log_radii(&oracles::self_neighborhoods(&ds.points, &is, 5).unwrap());
                let g0 = GroupMoments::from_sorted_logs(&base, 12).unwrap();
                let g1 = GroupMoments::from_sorted_logs(&logs, 12).unwrap();
                assert!((g1.mean_out - g0.mean_out - lambda.ln()).abs() < 1e-10);
                assert!((g1.mean_in - g0.mean_in - lambda.ln()).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn single_cell_grid_returns_that_pair() {
        let d = dataset(&random_rows(200, 3));
        let grid = TuningGrid {
            c_values: vec![0.1],
            k_values: vec![7],
        };
        let r = tune_ck(&d, &grid).unwrap();
        assert_eq!((r.c_opt, r.k_opt), (0.1, 7));
    }

    #[test]
    fn blobs_with_noise_give_well_formed_report() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut rows = Vec::new();
        for center in [[0.3, 0.3], [0.7, 0.7]] {
            for _ in 0..225 {
                let dx: f64 = rng.sample(rand_distr::StandardNormal);
                let dy: f64 = rng.sample(rand_distr::StandardNormal);
                rows.push([center[0] + 0.03 * dx, center[1] + 0.03 * dy]);
            }
        }
        rows.extend((0..50).map(|_| [rng.random::<f64>(), rng.random::<f64>()]));
        let r = tune_ck(&dataset(&rows), &TuningGrid::default()).unwrap();
        assert!([0.05, 0.1, 0.2].contains(&r.c_opt));
        assert_eq!(r.rows.len(), 3);
        for row in &r.rows {
            let q = row.quantile.unwrap();
            assert!((0.0..=1.0).contains(&q));
            assert_eq!(row.df, 2 * row.group_size - 2);
        }
        let chosen = r.rows.iter().find(|row| row.c == r.c_opt).unwrap();
        assert_eq!(chosen.best_k, Some(r.k_opt));
    }

    #[test]
    fn tuning_ignores_row_order() {
        let rows = random_rows(150, 5);
        let mut reversed = rows.clone();
        reversed.reverse();
        let a = tune_ck(&dataset(&rows), &TuningGrid::default()).unwrap();
        let b = tune_ck(&dataset(&reversed), &TuningGrid::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_grids() {
        let d = dataset(&random_rows(30, 6));
        let bad_c = TuningGrid { c_values: vec![0.6], k_values: vec![3] };
        assert!(tune_ck(&d, &bad_c).is_err());
        let tiny_c = TuningGrid { c_values: vec![0.05], k_values: vec![3] };
        assert!(tune_ck(&d, &tiny_c).is_err());
        let big_k = TuningGrid { c_values: vec![0.1], k_values: vec![30] };
        assert!(tune_ck(&d, &big_k).is_err());
    }

    #[test]
    fn knee_at_ten_percent_step() {
        let mut values = vec![0.0; 900];
        values.extend((0..100).map(|i| 0.99 + i as f64 * 1e-4));
        let e = knee_of(&values).unwrap();
        assert!(!e.degenerate);
        assert!((e.u_hat - 0.10).abs() <= 0.01 + 1e-12, "{}", e.u_hat);
        assert_eq!(e.v_curve.len(), 50);
    }

    #[test]
    fn constant_values_fall_back() {
        let e = knee_of(&[0.3; 500]).unwrap();
        assert!(e.degenerate);
        assert_eq!(e.u_hat, DEFAULT_U);
    }

    #[test]
    fn v_curve_is_nonincreasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let values: Vec<f64> = (0..777).map(|_| rng.random::<f64>()).collect();
        let e = knee_of(&values).unwrap();
        assert!(e.v_curve.windows(2).all(|w| w[0].v >= w[1].v));
        for p in &e.v_curve {
            let above = values.iter().filter(|&&v| v > p.v).count() as f64 / values.len() as f64;
            assert!((above - p.r).abs() <= 0.01, "r={} frac={}", p.r, above);
        }
    }
}
