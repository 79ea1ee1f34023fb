//! Scoring without access to the training rows.
//!
//! Two regressors learn the k-vicinity radius and the k-vicinity uncertainty
//! as functions of the query coordinates. Each is sized by exponential
//! search: draw `N_s` labeled samples from the query space, fit on 80%,
//! measure RMSE on the remaining 20%, and double `N_s` until the RMSE drops
//! to `ε` or the sample cap is reached.
//!
//! The regressor is distance-weighted nearest-neighbor regression over the
//! drawn sample. A query that coincides with sample points gets the mean of
//! their values, so a sample point is reproduced exactly.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Points;
use crate::distrust::{DistrustModel, DistrustScore, Surrogates};
use crate::error::{Error, Result};
use crate::knn::KnnIndex;
use crate::metrics::MetricId;
use crate::oracles::{self, OracleParams, RankList};

/// Number of sample points blended per prediction.
pub const REFERENCE_NEIGHBORS: usize = 8;
/// Offset in the inverse-distance weight `1 / (d + δ)`.
pub const WEIGHT_OFFSET: f64 = 1e-9;
/// Sample sizes stop doubling at this multiple of the training size.
pub const CAP_FACTOR: usize = 64;
/// Per-side inflation of the bounding box for uniform samples.
pub const BOX_INFLATION: f64 = 0.2;
/// Bootstrap jitter standard deviation as a fraction of each column range.
pub const JITTER_SCALE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Radius,
    Uncertainty,
}

/// One round of the exponential search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchStep {
    pub sample_size: usize,
    pub rmse: f64,
}

/// A trained regressor from query coordinates to radius or uncertainty.
#[derive(Debug, Clone)]
pub struct SurrogateEstimator {
    pub(crate) kind: EstimatorKind,
    pub(crate) sample: Points,
    pub(crate) values: Vec<f64>,
    index: KnnIndex,
    pub(crate) epsilon: f64,
    pub(crate) achieved_rmse: f64,
    pub(crate) converged: bool,
    pub(crate) trajectory: Vec<SearchStep>,
}

impl PartialEq for SurrogateEstimator {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind
            && self.sample == other.sample
            && self.values == other.values
            && self.epsilon.to_bits() == other.epsilon.to_bits()
            && self.achieved_rmse.to_bits() == other.achieved_rmse.to_bits()
            && self.converged == other.converged
            && self.trajectory == other.trajectory
    }
}

impl SurrogateEstimator {
    /// Fits the regressor on a labeled sample, with no search metadata.
    pub fn from_sample(kind: EstimatorKind, sample: Points, values: Vec<f64>) -> Result<Self> {
        Self::from_parts(kind, sample, values, f64::INFINITY, 0.0, true, Vec::new())
    }

    pub(crate) fn from_parts(
        kind: EstimatorKind,
        sample: Points,
        values: Vec<f64>,
        epsilon: f64,
        achieved_rmse: f64,
        converged: bool,
        trajectory: Vec<SearchStep>,
    ) -> Result<Self> {
        if sample.len() != values.len() {
            return Err(Error::LengthMismatch(format!(
                "{} sample points but {} values",
                sample.len(),
                values.len()
            )));
        }
        let index = KnnIndex::build(&sample, MetricId::Euclidean)?;
        Ok(SurrogateEstimator {
            kind,
            sample,
            values,
            index,
            epsilon,
            achieved_rmse,
            converged,
            trajectory,
        })
    }

    pub fn kind(&self) -> EstimatorKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.sample.dim()
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Held-out RMSE of the final round.
    pub fn achieved_rmse(&self) -> f64 {
        self.achieved_rmse
    }

    /// Whether the final RMSE met `ε` before the cap.
    pub fn converged(&self) -> bool {
        self.converged
    }

    pub fn trajectory(&self) -> &[SearchStep] {
        &self.trajectory
    }

    /// `N_s` of the final round, or the reference size without a search.
    pub fn sample_size(&self) -> usize {
        self.trajectory.last().map_or(self.sample.len(), |s| s.sample_size)
    }

    /// Number of reference points the predictor blends from.
    pub fn reference_size(&self) -> usize {
        self.sample.len()
    }

    pub fn predict(&self, q: &[f64]) -> Result<f64> {
        let k = REFERENCE_NEIGHBORS.min(self.sample.len());
        let nb = self.index.knn(q, k, None)?;
        let exact: Vec<f64> = nb
            .indices
            .iter()
            .zip(&nb.distances)
            .take_while(|(_, &d)| d == 0.0)
            .map(|(&i, _)| self.values[i])
            .collect();
        let v = if let Some(&first) = exact.first() {
            if exact.iter().all(|&v| v == first) {
                first
            } else {
                exact.iter().sum::<f64>() / exact.len() as f64
            }
        } else {
            let (mut num, mut den) = (0.0, 0.0);
            for (&i, &d) in nb.indices.iter().zip(&nb.distances) {
                let w = 1.0 / (d + WEIGHT_OFFSET);
                num += w * self.values[i];
                den += w;
            }
            num / den
        };
        Ok(v.max(0.0))
    }
}

/// Draws `count` query-space points: a `mix` fraction uniform over the
/// inflated bounding box of the training data, the rest resampled training
/// rows plus Gaussian jitter.
pub fn sample_query_space(model: &DistrustModel, count: usize, mix: f64, seed: u64) -> Result<Points> {
    sample_with_jitter(&model.dataset().points, count, mix, JITTER_SCALE, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// As [`sample_query_space`] with an explicit jitter scale.
pub fn sample_query_space_with_jitter(
    model: &DistrustModel,
    count: usize,
    mix: f64,
    jitter_scale: f64,
    seed: u64,
) -> Result<Points> {
    sample_with_jitter(&model.dataset().points, count, mix, jitter_scale, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn sample_with_jitter(
    points: &Points,
    count: usize,
    mix: f64,
    jitter_scale: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Points> {
    if !(0.0..=1.0).contains(&mix) {
        return Err(Error::InvalidParams(format!("mix must lie in [0, 1], got {mix}")));
    }
    if !(jitter_scale >= 0.0 && jitter_scale.is_finite()) {
        return Err(Error::InvalidParams(format!("invalid jitter scale {jitter_scale}")));
    }
    let dim = points.dim();
    let bounds = points.bounds();
    let uniform = (mix * count as f64).round() as usize;
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(count);
    for _ in 0..uniform {
        rows.push(
            bounds
                .iter()
                .map(|&(lo, hi)| {
                    let pad = BOX_INFLATION * (hi - lo);
                    let (a, b) = (lo - pad, hi + pad);
                    if b > a {
                        rng.random_range(a..b)
                    } else {
                        a
                    }
                })
                .collect(),
        );
    }
    for _ in uniform..count {
        let base = points.row(rng.random_range(0..points.len()));
        rows.push(
            base.iter()
                .zip(&bounds)
                .map(|(&v, &(lo, hi))| {
                    let z: f64 = rng.sample(StandardNormal);
                    v + jitter_scale * (hi - lo) * z
                })
                .collect(),
        );
    }
    rows.shuffle(rng);
    Points::new(rows.into_iter().flatten().collect(), dim)
}

/// Exact labels for `samples` against the training data (no self-exclusion).
pub fn label_samples(model: &DistrustModel, kind: EstimatorKind, samples: &Points) -> Result<Vec<f64>> {
    let k = model.params().k;
    (0..samples.len())
        .into_par_iter()
        .map(|i| {
            let nb = model.index().knn(samples.row(i), k, None)?;
            Ok(match kind {
                EstimatorKind::Radius => nb.radius(),
                EstimatorKind::Uncertainty => oracles::uncertainty(&model.dataset().targets, &nb.indices),
            })
        })
        .collect()
}

/// Exponential-search settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub epsilon: f64,
    pub mix: f64,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            epsilon: 1e-2,
            mix: 0.5,
            seed: 42,
        }
    }
}

fn rmse(estimator: &SurrogateEstimator, test: &Points, truth: &[f64]) -> Result<f64> {
    if truth.is_empty() {
        return Ok(0.0);
    }
    let sq: Vec<f64> = (0..test.len())
        .into_par_iter()
        .map(|i| estimator.predict(test.row(i)).map(|p| (p - truth[i]) * (p - truth[i])))
        .collect::<Result<_>>()?;
    Ok((sq.iter().sum::<f64>() / sq.len() as f64).sqrt())
}

fn split_rows(points: &Points, values: &[f64], train: usize) -> Result<(Points, Vec<f64>, Points, Vec<f64>)> {
    let dim = points.dim();
    let cut = train * dim;
    let data = points.as_slice();
    Ok((
        Points::new(data[..cut].to_vec(), dim)?,
        values[..train].to_vec(),
        Points::new(data[cut..].to_vec(), dim)?,
        values[train..].to_vec(),
    ))
}

/// Trains one estimator with the default mix.
pub fn train_surrogate(
    model: &DistrustModel,
    kind: EstimatorKind,
    epsilon: f64,
    seed: u64,
) -> Result<SurrogateEstimator> {
    train_surrogate_with(
        model,
        kind,
        &SearchConfig {
            epsilon,
            seed,
            ..SearchConfig::default()
        },
    )
}

pub fn train_surrogate_with(
    model: &DistrustModel,
    kind: EstimatorKind,
    config: &SearchConfig,
) -> Result<SurrogateEstimator> {
    if config.epsilon.is_nan() || config.epsilon <= 0.0 {
        return Err(Error::InvalidParams(format!("epsilon must be positive, got {}", config.epsilon)));
    }
    let n = model.len();
    let cap = CAP_FACTOR * n;
    let stream = match kind {
        EstimatorKind::Radius => 0,
        EstimatorKind::Uncertainty => 1 << 32,
    };
    let mut size = n.max(2);
    let mut trajectory = Vec::new();
    let mut round = 0u64;
    loop {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(stream + round);
        let samples = sample_with_jitter(&model.dataset().points, size, config.mix, JITTER_SCALE, &mut rng)?;
        let labels = label_samples(model, kind, &samples)?;
        let train = (size * 4 / 5).max(1);
        let (train_pts, train_vals, test_pts, test_vals) = split_rows(&samples, &labels, train)?;
        let mut est = SurrogateEstimator::from_sample(kind, train_pts, train_vals)?;
        let err = rmse(&est, &test_pts, &test_vals)?;
        trajectory.push(SearchStep {
            sample_size: size,
            rmse: err,
        });
        let converged = err <= config.epsilon;
        if converged || size * 2 > cap {
            est.epsilon = config.epsilon;
            est.achieved_rmse = err;
            est.converged = converged;
            est.trajectory = trajectory;
            return Ok(est);
        }
        size *= 2;
        round += 1;
    }
}

/// Trains both estimators and attaches them to a copy of `model`.
pub fn train_surrogates(model: &DistrustModel, config: &SearchConfig) -> Result<Surrogates> {
    Ok(Surrogates {
        radius: train_surrogate_with(model, EstimatorKind::Radius, config)?,
        uncertainty: train_surrogate_with(model, EstimatorKind::Uncertainty, config)?,
    })
}

/// Scores queries from rank lists and estimators alone.
#[derive(Debug, Clone)]
pub struct NoDataScorer {
    params: OracleParams,
    gamma_d: RankList,
    gamma_u: RankList,
    reg_rho: SurrogateEstimator,
    reg_u: SurrogateEstimator,
    binary_target: bool,
}

impl NoDataScorer {
    pub fn new(
        params: OracleParams,
        gamma_d: RankList,
        gamma_u: RankList,
        reg_rho: SurrogateEstimator,
        reg_u: SurrogateEstimator,
        binary_target: bool,
    ) -> Result<Self> {
        params.validate()?;
        if reg_rho.kind != EstimatorKind::Radius || reg_u.kind != EstimatorKind::Uncertainty {
            return Err(Error::InvalidParams("estimators passed in the wrong order".into()));
        }
        if reg_rho.dim() != reg_u.dim() {
            return Err(Error::DimensionMismatch {
                expected: reg_rho.dim(),
                found: reg_u.dim(),
            });
        }
        Ok(NoDataScorer {
            params,
            gamma_d,
            gamma_u,
            reg_rho,
            reg_u,
            binary_target,
        })
    }

    pub fn dim(&self) -> usize {
        self.reg_rho.dim()
    }

    pub fn score(&self, q: &[f64]) -> Result<DistrustScore> {
        if q.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: q.len(),
            });
        }
        let rho = self.reg_rho.predict(q)?;
        let u = self.reg_u.predict(q)?;
        let (r_q, p_o) = oracles::representation_probability(&self.gamma_d, rho, &self.params);
        let (r_uq, p_u) = oracles::certainty_probability(&self.gamma_u, u, &self.params, self.binary_target);
        Ok(DistrustScore::from_parts(rho, r_q, p_o, u, r_uq, p_u))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Dataset, Targets};
    use rand_distr::{Distribution, Normal};

    fn gaussian_model(n: usize, seed: u64, labels: impl Fn(f64, f64) -> &'static str) -> DistrustModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.5, 0.15).unwrap();
        let rows: Vec<[f64; 2]> = (0..n)
            .map(|_| [normal.sample(&mut rng), normal.sample(&mut rng)])
            .collect();
        let ys: Vec<&str> = rows.iter().map(|r| labels(r[0], r[1])).collect();
        let data = Dataset::from_encoded(Points::from_rows(&rows).unwrap(), Targets::classes_from_labels(&ys)).unwrap();
        DistrustModel::fit(data, OracleParams::default()).unwrap()
    }

    fn split_labels(x: f64, _y: f64) -> &'static str {
        if x < 0.5 {
            "a"
        } else {
            "b"
        }
    }

    #[test]
    fn uniform_samples_stay_in_inflated_box() {
        let m = gaussian_model(200, 1, split_labels);
        let s = sample_query_space(&m, 100, 1.0, 7).unwrap();
        assert_eq!(s.len(), 100);
        for (j, (lo, hi)) in m.dataset().points.bounds().into_iter().enumerate() {
            let pad = 0.2 * (hi - lo);
            assert!(s.rows().all(|r| r[j] >= lo - pad && r[j] <= hi + pad));
        }
    }

    #[test]
    fn zero_jitter_bootstrap_returns_training_rows() {
        let m = gaussian_model(50, 2, split_labels);
        let s = sample_query_space_with_jitter(&m, 100, 0.0, 0.0, 3).unwrap();
        let train: Vec<&[f64]> = m.dataset().points.rows().collect();
        assert!(s.rows().all(|r| train.contains(&r)));
    }

    #[test]
    fn sampler_is_deterministic() {
        let m = gaussian_model(80, 3, split_labels);
        let a = sample_query_space(&m, 64, 0.5, 11).unwrap();
        let b = sample_query_space(&m, 64, 0.5, 11).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, sample_query_space(&m, 64, 0.5, 12).unwrap());
    }

    #[test]
    fn infinite_epsilon_stops_at_n() {
        let m = gaussian_model(120, 4, split_labels);
        let est = train_surrogate(&m, EstimatorKind::Radius, f64::INFINITY, 42).unwrap();
        assert_eq!(est.sample_size(), 120);
        assert_eq!(est.trajectory().len(), 1);
        assert!(est.converged());
    }

    #[test]
    fn constant_labels_give_zero_uncertainty_error() {
        let m = gaussian_model(100, 5, |_, _| "only");
        let est = train_surrogate(&m, EstimatorKind::Uncertainty, 1e-6, 42).unwrap();
        assert_eq!(est.trajectory().len(), 1);
        assert_eq!(est.achieved_rmse(), 0.0);
    }

    #[test]
    fn sizes_double_and_respect_the_cap() {
        let m = gaussian_model(60, 6, split_labels);
        // unreachable target forces the full search
        let est = train_surrogate(&m, EstimatorKind::Uncertainty, 1e-12, 1).unwrap();
        let sizes: Vec<usize> = est.trajectory().iter().map(|s| s.sample_size).collect();
        assert_eq!(sizes.first(), Some(&60));
        assert!(sizes.windows(2).all(|w| w[1] == 2 * w[0]));
        assert_eq!(*sizes.last().unwrap(), 64 * 60);
        assert!(!est.converged());
    }

    #[test]
    fn memorized_estimator_reproduces_exact_scores() {
        let m = gaussian_model(150, 7, split_labels);
        let sample = sample_query_space(&m, 300, 0.5, 9).unwrap();
        let rho = label_samples(&m, EstimatorKind::Radius, &sample).unwrap();
        let unc = label_samples(&m, EstimatorKind::Uncertainty, &sample).unwrap();
        let scorer = NoDataScorer::new(
            *m.params(),
            m.gamma_d().clone(),
            m.gamma_u().clone(),
            SurrogateEstimator::from_sample(EstimatorKind::Radius, sample.clone(), rho).unwrap(),
            SurrogateEstimator::from_sample(EstimatorKind::Uncertainty, sample.clone(), unc).unwrap(),
            m.binary_target(),
        )
        .unwrap();
        for q in sample.rows() {
            assert_eq!(scorer.score(q).unwrap(), m.score(q).unwrap());
        }
    }

    #[test]
    fn far_queries_stay_in_range() {
        let m = gaussian_model(100, 8, split_labels);
        let mut m = m;
        let s = train_surrogates(&m, &SearchConfig { epsilon: f64::INFINITY, ..Default::default() }).unwrap();
        m.set_surrogates(Some(s));
        let scorer = m.no_data_scorer().unwrap();
        let score = scorer.score(&[25.0, -40.0]).unwrap();
        assert!(score.rho_q >= 0.0);
        for p in [score.p_o, score.p_u, score.sdt, score.wdt] {
            assert!((0.0..=1.0).contains(&p));
        }
    }

    #[test]
    fn weighted_blend_and_clamp() {
        let sample = Points::from_rows(&[[0.0], [1.0]]).unwrap();
        let est = SurrogateEstimator::from_sample(EstimatorKind::Radius, sample, vec![0.0, 1.0]).unwrap();
        assert!((est.predict(&[0.5]).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(est.predict(&[1.0]).unwrap(), 1.0);
        let p = est.predict(&[0.25]).unwrap();
        assert!((p - 0.25).abs() < 1e-8, "{p}");
    }

    #[test]
    fn rejects_bad_settings() {
        let m = gaussian_model(30, 9, split_labels);
        assert!(train_surrogate(&m, EstimatorKind::Radius, 0.0, 1).is_err());
        assert!(sample_query_space(&m, 10, 1.5, 1).is_err());
    }
}
