//! The fitted model and the strong/weak distrust measures.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec;
use crate::dataset::{Dataset, Task};
use crate::error::{Error, Result};
use crate::knn::KnnIndex;
use crate::oracles::{self, OracleParams, RankList};
use crate::surrogate::{NoDataScorer, SurrogateEstimator};

/// Version written into every model file.
pub const FORMAT_VERSION: u32 = 1;

/// Per-query record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistrustScore {
    /// k-vicinity radius of the query.
    pub rho_q: f64,
    /// Rank fraction of `rho_q` among the training radii.
    pub r_q: f64,
    pub p_o: f64,
    /// Target uncertainty inside the query's k-vicinity.
    pub u_q: f64,
    /// Rank fraction of `u_q` among the training uncertainties.
    pub r_uq: f64,
    pub p_u: f64,
    pub sdt: f64,
    pub wdt: f64,
}

impl DistrustScore {
    pub fn from_parts(rho_q: f64, r_q: f64, p_o: f64, u_q: f64, r_uq: f64, p_u: f64) -> Self {
        let (sdt, wdt) = combine(p_o, p_u);
        DistrustScore {
            rho_q,
            r_q,
            p_o,
            u_q,
            r_uq,
            p_u,
            sdt,
            wdt,
        }
    }
}

/// `(sdt, wdt)` for independent `p_o` and `p_u`.
///
/// `wdt` is evaluated as `1 − (1 − p_o)(1 − p_u)`. For `p_u` below one ulp
/// of `p_o` that form can round under `max(p_o, p_u)`, so it is floored there.
#[inline]
pub fn combine(p_o: f64, p_u: f64) -> (f64, f64) {
    let sdt = p_o * p_u;
    let wdt = (1.0 - (1.0 - p_o) * (1.0 - p_u)).max(p_o.max(p_u));
    (sdt, wdt)
}

/// Trained surrogate pair stored alongside a model.
#[derive(Debug, Clone, PartialEq)]
pub struct Surrogates {
    pub radius: SurrogateEstimator,
    pub uncertainty: SurrogateEstimator,
}

/// Everything needed to score queries: the training data, its index, both
/// rank lists and the oracle parameters.
#[derive(Debug, Clone)]
pub struct DistrustModel {
    pub(crate) data: Dataset,
    pub(crate) index: KnnIndex,
    pub(crate) gamma_d: RankList,
    pub(crate) gamma_u: RankList,
    pub(crate) params: OracleParams,
    pub(crate) surrogates: Option<Surrogates>,
}

impl PartialEq for DistrustModel {
    /// The index is a pure function of points and metric, so it is skipped.
    fn eq(&self, other: &Self) -> bool {
        self.data == other.data
            && self.gamma_d == other.gamma_d
            && self.gamma_u == other.gamma_u
            && self.params == other.params
            && self.surrogates == other.surrogates
    }
}

impl DistrustModel {
    /// Builds the index and both rank lists. Needs `1 <= k <= n - 1`.
    pub fn fit(data: Dataset, params: OracleParams) -> Result<Self> {
        params.validate()?;
        let n = data.len();
        if params.k >= n {
            return Err(Error::KOutOfRange {
                k: params.k,
                max: n.saturating_sub(1),
            });
        }
        let index = KnnIndex::build(&data.points, params.metric)?;
        let hoods = oracles::self_neighborhoods(&data.points, &index, params.k)?;
        let (radii, uncertainties): (Vec<f64>, Vec<f64>) = hoods
            .par_iter()
            .map(|nb| (nb.radius(), oracles::uncertainty(&data.targets, &nb.indices)))
            .unzip();
        Ok(DistrustModel {
            data,
            index,
            gamma_d: RankList::from_unsorted(radii),
            gamma_u: RankList::from_unsorted(uncertainties),
            params,
            surrogates: None,
        })
    }

    /// Reassembles a model from stored parts, rebuilding the index.
    pub(crate) fn from_parts(
        data: Dataset,
        gamma_d: RankList,
        gamma_u: RankList,
        params: OracleParams,
        surrogates: Option<Surrogates>,
    ) -> Result<Self> {
        params.validate()?;
        let n = data.len();
        if gamma_d.len() != n || gamma_u.len() != n {
            return Err(Error::Integrity(format!(
                "rank lists have {} and {} entries for {n} rows",
                gamma_d.len(),
                gamma_u.len()
            )));
        }
        if params.k >= n {
            return Err(Error::Integrity(format!("stored k = {} with {n} rows", params.k)));
        }
        let index = KnnIndex::build(&data.points, params.metric)?;
        Ok(DistrustModel {
            data,
            index,
            gamma_d,
            gamma_u,
            params,
            surrogates,
        })
    }

    pub fn params(&self) -> &OracleParams {
        &self.params
    }

    pub fn dataset(&self) -> &Dataset {
        &self.data
    }

    pub fn index(&self) -> &KnnIndex {
        &self.index
    }

    pub fn gamma_d(&self) -> &RankList {
        &self.gamma_d
    }

    pub fn gamma_u(&self) -> &RankList {
        &self.gamma_u
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.data.dim()
    }

    /// Binary classification, where direct entropy mode may apply.
    pub fn binary_target(&self) -> bool {
        self.data.task() == Task::Classification && self.data.targets.class_count() <= 2
    }

    pub fn surrogates(&self) -> Option<&Surrogates> {
        self.surrogates.as_ref()
    }

    pub fn set_surrogates(&mut self, surrogates: Option<Surrogates>) {
        self.surrogates = surrogates;
    }

    /// Replaces the probability transform settings. `k` and the metric shape
    /// the stored rank lists, so changing either is refused.
    pub fn set_params(&mut self, params: OracleParams) -> Result<()> {
        params.validate()?;
        if params.k != self.params.k || params.metric != self.params.metric {
            return Err(Error::InvalidParams(format!(
                "model was fitted with k = {} and {}; refit to change them",
                self.params.k, self.params.metric
            )));
        }
        self.params = params;
        Ok(())
    }

    fn check_dim(&self, q: &[f64]) -> Result<()> {
        if q.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: q.len(),
            });
        }
        Ok(())
    }

    /// Lack-of-representation probability of `q`.
    pub fn p_o(&self, q: &[f64]) -> Result<f64> {
        self.check_dim(q)?;
        let rho = self.index.kvicinity_radius(q, self.params.k, None)?;
        Ok(oracles::representation_probability(&self.gamma_d, rho, &self.params).1)
    }

    /// Lack-of-certainty probability of `q`.
    pub fn p_u(&self, q: &[f64]) -> Result<f64> {
        self.check_dim(q)?;
        let nb = self.index.knn(q, self.params.k, None)?;
        let u = oracles::uncertainty(&self.data.targets, &nb.indices);
        Ok(oracles::certainty_probability(&self.gamma_u, u, &self.params, self.binary_target()).1)
    }

    /// Full score: one k-NN lookup and two binary searches.
    pub fn score(&self, q: &[f64]) -> Result<DistrustScore> {
        self.check_dim(q)?;
        let nb = self.index.knn(q, self.params.k, None)?;
        let rho = nb.radius();
        let u = oracles::uncertainty(&self.data.targets, &nb.indices);
        let (r_q, p_o) = oracles::representation_probability(&self.gamma_d, rho, &self.params);
        let (r_uq, p_u) =
            oracles::certainty_probability(&self.gamma_u, u, &self.params, self.binary_target());
        Ok(DistrustScore::from_parts(rho, r_q, p_o, u, r_uq, p_u))
    }

    /// Scores many queries in parallel, preserving order.
    pub fn score_batch<R: AsRef<[f64]> + Sync>(&self, queries: &[R]) -> Result<Vec<DistrustScore>> {
        queries.par_iter().map(|q| self.score(q.as_ref())).collect()
    }

    /// A scorer holding only the parameters, rank lists and estimators.
    pub fn no_data_scorer(&self) -> Result<NoDataScorer> {
        let s = self
            .surrogates
            .as_ref()
            .ok_or_else(|| Error::InvalidParams("model has no surrogate estimators".into()))?;
        NoDataScorer::new(
            self.params,
            self.gamma_d.clone(),
            self.gamma_u.clone(),
            s.radius.clone(),
            s.uncertainty.clone(),
            self.binary_target(),
        )
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        codec::encode_model(self)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        codec::decode_model(bytes)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
