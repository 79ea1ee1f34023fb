//! Checking that distrust predicts model failure.
//!
//! A synthetic 2D task (correlated Gaussian inputs, labels given by a
//! region) is scored on a uniform query grid. Queries are bucketed by their
//! distrust value and a model's per-bucket quality is compared against the
//! bucket index.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{ColumnKind, ColumnSpec, Dataset, Points, Schema, Targets, Task};
use crate::distrust::{DistrustModel, DistrustScore, FORMAT_VERSION};
use crate::error::{Error, Result};
use crate::knn::KnnIndex;
use crate::metrics::MetricId;
use crate::oracles::OracleParams;
use crate::stats::spearman;

/// Label of points inside the region (class id 0).
pub const INSIDE_LABEL: &str = "-1";
/// Label of points outside the region (class id 1).
pub const OUTSIDE_LABEL: &str = "+1";
pub const BUCKETS: usize = 10;

/// Ground-truth region in normalized `[0, 1]²` coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase")]
pub enum Region {
    Disk { center: [f64; 2], radius: f64 },
    Polygon { vertices: Vec<[f64; 2]> },
}

impl Region {
    /// A cat head: face plus two pointed ears.
    pub fn cat() -> Self {
        Region::Polygon {
            vertices: vec![
                [0.40, 0.20],
                [0.75, 0.20],
                [0.82, 0.45],
                [0.80, 0.72],
                [0.70, 0.58],
                [0.58, 0.61],
                [0.46, 0.58],
                [0.36, 0.72],
                [0.33, 0.45],
            ],
        }
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        match self {
            Region::Disk { center, radius } => {
                let (dx, dy) = (p[0] - center[0], p[1] - center[1]);
                (dx * dx + dy * dy).sqrt() <= *radius
            }
            Region::Polygon { vertices } => {
                // even-odd ray casting
                let mut inside = false;
                let n = vertices.len();
                for i in 0..n {
                    let (a, b) = (vertices[i], vertices[(i + n - 1) % n]);
                    if (a[1] > p[1]) != (b[1] > p[1]) {
                        let x = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
                        if p[0] < x {
                            inside = !inside;
                        }
                    }
                }
                inside
            }
        }
    }
}

/// Parameters of the synthetic classification task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub mean: [f64; 2],
    pub covariance: [[f64; 2]; 2],
    pub region: Region,
    /// Query grid side; the grid has `side²` cell centers.
    pub grid_side: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n: 1000,
            mean: [0.0, 0.0],
            covariance: [[6.0, 4.0], [4.0, 6.0]],
            region: Region::Disk {
                center: [0.8, 0.3],
                radius: 0.35,
            },
            grid_side: 80,
            seed: 42,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let [[a, b], [c, d]] = self.covariance;
        if b != c {
            return Err(Error::InvalidParams("covariance must be symmetric".into()));
        }
        if !(a > 0.0 && a * d - b * c > 0.0) {
            return Err(Error::InvalidParams("covariance must be positive definite".into()));
        }
        if self.n < 2 || self.grid_side == 0 {
            return Err(Error::InvalidParams("need n >= 2 and a non-empty grid".into()));
        }
        Ok(())
    }
}

/// Training set plus labeled query grid.
#[derive(Debug, Clone)]
pub struct Synthetic {
    pub dataset: Dataset,
    pub queries: Points,
    pub truths: Targets,
}

fn region_labels(region: &Region, points: &Points) -> Targets {
    let ids = points
        .rows()
        .map(|r| if region.contains([r[0], r[1]]) { 0 } else { 1 })
        .collect();
    Targets::Classes {
        ids,
        labels: vec![INSIDE_LABEL.into(), OUTSIDE_LABEL.into()],
    }
}

/// Draws the Gaussian sample, min-max normalizes it, and labels it and the
/// uniform grid of cell centers by the region.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<Synthetic> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let [[a, b], [_, d]] = spec.covariance;
    let (l11, l21) = (a.sqrt(), b / a.sqrt());
    let l22 = (d - l21 * l21).sqrt();
    let raw: Vec<[f64; 2]> = (0..spec.n)
        .map(|_| {
            let z1: f64 = rng.sample(StandardNormal);
            let z2: f64 = rng.sample(StandardNormal);
            [spec.mean[0] + l11 * z1, spec.mean[1] + l21 * z1 + l22 * z2]
        })
        .collect();

    let mut columns = Vec::new();
    let mut bounds = [(f64::INFINITY, f64::NEG_INFINITY); 2];
    for r in &raw {
        for j in 0..2 {
            bounds[j].0 = bounds[j].0.min(r[j]);
            bounds[j].1 = bounds[j].1.max(r[j]);
        }
    }
    for (j, &(min, max)) in bounds.iter().enumerate() {
        columns.push(ColumnSpec {
            name: format!("x{}", j + 1),
            kind: ColumnKind::Ordinal,
            min,
            max,
            categories: Vec::new(),
            scaled: true,
        });
    }
    columns.push(ColumnSpec {
        name: "y".into(),
        kind: ColumnKind::Target,
        min: 0.0,
        max: 0.0,
        categories: Vec::new(),
        scaled: true,
    });
    let scaled: Vec<[f64; 2]> = raw
        .iter()
        .map(|r| {
            let s = |j: usize| (r[j] - bounds[j].0) / (bounds[j].1 - bounds[j].0);
            [s(0), s(1)]
        })
        .collect();
    let points = Points::from_rows(&scaled)?;
    let targets = region_labels(&spec.region, &points);
    let schema = Schema {
        columns,
        target: "y".into(),
        task: Task::Classification,
    };
    let dataset = Dataset::new(points, targets, schema)?;

    let side = spec.grid_side;
    let queries = Points::from_rows(
        &(0..side * side)
            .map(|i| [((i / side) as f64 + 0.5) / side as f64, ((i % side) as f64 + 0.5) / side as f64])
            .collect::<Vec<_>>(),
    )?;
    let truths = region_labels(&spec.region, &queries);
    Ok(Synthetic {
        dataset,
        queries,
        truths,
    })
}

/// k-NN baseline: majority vote (ties to the lower class id) or mean.
pub fn baseline_predict(dataset: &Dataset, queries: &Points, k: usize) -> Result<Targets> {
    let index = KnnIndex::build(&dataset.points, MetricId::Euclidean)?;
    let hoods = (0..queries.len())
        .into_par_iter()
        .map(|i| index.knn(queries.row(i), k, None))
        .collect::<Result<Vec<_>>>()?;
    Ok(match &dataset.targets {
        Targets::Classes { ids, labels } => Targets::Classes {
            ids: hoods
                .iter()
                .map(|nb| {
                    let mut votes = vec![0usize; labels.len()];
                    for &i in &nb.indices {
                        votes[ids[i] as usize] += 1;
                    }
                    // max_by_key keeps the last maximum, so scan in reverse
                    votes
                        .iter()
                        .enumerate()
                        .rev()
                        .max_by_key(|(_, &v)| v)
                        .map_or(0, |(c, _)| c as u32)
                })
                .collect(),
            labels: labels.clone(),
        },
        Targets::Values(y) => Targets::Values(
            hoods
                .iter()
                .map(|nb| nb.indices.iter().map(|&i| y[i]).sum::<f64>() / nb.len() as f64)
                .collect(),
        ),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Measure {
    Sdt,
    Wdt,
}

impl Measure {
    pub fn of(self, s: &DistrustScore) -> f64 {
        match self {
            Measure::Sdt => s.sdt,
            Measure::Wdt => s.wdt,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Measure::Sdt => "sdt",
            Measure::Wdt => "wdt",
        }
    }
}

/// `floor(v·10)`, with 1.0 folded into the top bucket.
pub fn bucket_of(v: f64) -> usize {
    ((v * BUCKETS as f64).floor().max(0.0) as usize).min(BUCKETS - 1)
}

/// Model quality on the queries of one distrust interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub index: usize,
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub accuracy: Option<f64>,
    pub f1: Option<f64>,
    pub fpr: Option<f64>,
    pub fnr: Option<f64>,
    /// `1 − accuracy`.
    pub error_rate: Option<f64>,
    /// Sum of squared prediction errors (regression).
    pub rss: Option<f64>,
    /// `rss / count` (regression).
    pub mean_rss: Option<f64>,
}

impl Bucket {
    fn empty(index: usize) -> Self {
        Bucket {
            index,
            lower: index as f64 / BUCKETS as f64,
            upper: (index + 1) as f64 / BUCKETS as f64,
            count: 0,
            accuracy: None,
            f1: None,
            fpr: None,
            fnr: None,
            error_rate: None,
            rss: None,
            mean_rss: None,
        }
    }

    /// The failure measure correlated against the bucket index.
    pub fn failure(&self) -> Option<f64> {
        self.error_rate.or(self.mean_rss)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketReport {
    pub format_version: u32,
    pub measure: Measure,
    pub task: Task,
    /// Class treated as positive for f1/fpr/fnr.
    pub positive_class: Option<String>,
    pub count: usize,
    pub buckets: Vec<Bucket>,
    /// Spearman correlation of bucket index against error rate (or mean
    /// RSS) over non-empty buckets.
    pub spearman_rho: Option<f64>,
}

impl BucketReport {
    pub fn non_empty(&self) -> impl Iterator<Item = &Bucket> {
        self.buckets.iter().filter(|b| b.count > 0)
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Buckets `scores` by `measure` and summarizes `predictions` against
/// `truths` per bucket. Class id 0 is the positive class. A rate whose
/// denominator is empty inside a non-empty bucket is 0 (f1 is 1 when the
/// bucket has no positives at all, predicted or true).
pub fn bucketize(
    scores: &[DistrustScore],
    measure: Measure,
    predictions: &Targets,
    truths: &Targets,
) -> Result<BucketReport> {
    if scores.len() != predictions.len() || scores.len() != truths.len() {
        return Err(Error::LengthMismatch(format!(
            "{} scores, {} predictions, {} truths",
            scores.len(),
            predictions.len(),
            truths.len()
        )));
    }
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); BUCKETS];
    for (i, s) in scores.iter().enumerate() {
        members[bucket_of(measure.of(s))].push(i);
    }
    let (task, positive_class) = match (predictions, truths) {
        (Targets::Classes { .. }, Targets::Classes { labels, .. }) => {
            (Task::Classification, labels.first().cloned())
        }
        (Targets::Values(_), Targets::Values(_)) => (Task::Regression, None),
        _ => return Err(Error::InvalidParams("predictions and truths have different tasks".into())),
    };
    let buckets: Vec<Bucket> = members
        .iter()
        .enumerate()
        .map(|(b, rows)| {
            let mut out = Bucket::empty(b);
            out.count = rows.len();
            if rows.is_empty() {
                return out;
            }
            match (predictions, truths) {
                (Targets::Classes { ids: p, .. }, Targets::Classes { ids: t, .. }) => {
                    let (mut tp, mut fp, mut tn, mut fneg) = (0, 0, 0, 0);
                    let mut correct = 0;
                    for &i in rows {
                        correct += usize::from(p[i] == t[i]);
                        match (p[i] == 0, t[i] == 0) {
                            (true, true) => tp += 1,
                            (true, false) => fp += 1,
                            (false, true) => fneg += 1,
                            (false, false) => tn += 1,
                        }
                    }
                    let acc = ratio(correct, rows.len());
                    out.accuracy = Some(acc);
                    out.error_rate = Some(1.0 - acc);
                    out.f1 = Some(if tp + fp + fneg == 0 {
                        1.0
                    } else {
                        2.0 * tp as f64 / (2 * tp + fp + fneg) as f64
                    });
                    out.fpr = Some(ratio(fp, fp + tn));
                    out.fnr = Some(ratio(fneg, fneg + tp));
                }
                (Targets::Values(p), Targets::Values(t)) => {
                    let rss: f64 = rows.iter().map(|&i| (p[i] - t[i]) * (p[i] - t[i])).sum();
                    out.rss = Some(rss);
                    out.mean_rss = Some(rss / rows.len() as f64);
                }
                _ => unreachable!(),
            }
            out
        })
        .collect();
    let (idx, fail): (Vec<f64>, Vec<f64>) = buckets
        .iter()
        .filter_map(|b| b.failure().map(|f| (b.index as f64, f)))
        .unzip();
    Ok(BucketReport {
        format_version: FORMAT_VERSION,
        measure,
        task,
        positive_class,
        count: scores.len(),
        buckets,
        spearman_rho: spearman(&idx, &fail),
    })
}

/// Paths written by [`render_report`].
#[derive(Debug, Clone, PartialEq)]
pub struct ReportFiles {
    pub json: PathBuf,
    pub csv: PathBuf,
    pub svg: PathBuf,
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| format!("{v}"))
}

/// Per-bucket CSV: a header and one row per non-empty bucket.
pub fn report_csv(report: &BucketReport) -> String {
    let mut s = String::from("bucket,lower,upper,count,accuracy,f1,fpr,fnr,error_rate,rss,mean_rss\n");
    for b in report.non_empty() {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{}",
            b.index,
            b.lower,
            b.upper,
            b.count,
            opt(b.accuracy),
            opt(b.f1),
            opt(b.fpr),
            opt(b.fnr),
            opt(b.error_rate),
            opt(b.rss),
            opt(b.mean_rss)
        );
    }
    s
}

/// Standalone SVG bar chart of the failure measure per bucket.
pub fn report_svg(report: &BucketReport) -> String {
    let (w, h) = (640.0, 360.0);
    let (left, right, top, bottom) = (60.0, 20.0, 40.0, 60.0);
    let plot_w = w - left - right;
    let plot_h = h - top - bottom;
    let (label, max) = match report.task {
        Task::Classification => ("error rate", 1.0),
        Task::Regression => (
            "mean RSS",
            report
                .non_empty()
                .filter_map(|b| b.mean_rss)
                .fold(0.0f64, f64::max)
                .max(f64::MIN_POSITIVE),
        ),
    };
    let slot = plot_w / BUCKETS as f64;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" font-family="sans-serif" font-size="16" text-anchor="middle">{} by {} bucket</text>"#,
        w / 2.0,
        label,
        report.measure.name().to_uppercase()
    );
    let _ = writeln!(
        s,
        r#"<line x1="{left}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#,
        top + plot_h,
        left + plot_w,
        top + plot_h
    );
    let _ = writeln!(s, r#"<line x1="{left}" y1="{top}" x2="{left}" y2="{}" stroke="black"/>"#, top + plot_h);
    let mut omitted = Vec::new();
    for b in &report.buckets {
        let x = left + slot * b.index as f64;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="10" text-anchor="middle">{:.1}-{:.1}</text>"#,
            x + slot / 2.0,
            top + plot_h + 14.0,
            b.lower,
            b.upper
        );
        match b.failure() {
            Some(v) if b.count > 0 => {
                let bh = (v / max).clamp(0.0, 1.0) * plot_h;
                let _ = writeln!(
                    s,
                    r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#c0392b"><title>bucket {}: n={} {}={}</title></rect>"##,
                    x + slot * 0.1,
                    top + plot_h - bh,
                    slot * 0.8,
                    bh,
                    b.index,
                    b.count,
                    label,
                    v
                );
            }
            _ => omitted.push(b.index.to_string()),
        }
    }
    let legend = if omitted.is_empty() {
        "all buckets non-empty".to_string()
    } else {
        format!("empty buckets omitted: {}", omitted.join(", "))
    };
    let _ = writeln!(
        s,
        r#"<text x="{left}" y="{}" font-family="sans-serif" font-size="11">{legend}; spearman rho = {}</text>"#,
        h - 16.0,
        report.spearman_rho.map_or("n/a".to_string(), |r| format!("{r:.3}"))
    );
    s.push_str("</svg>\n");
    s
}

/// Writes `<stem>.json`, `<stem>.csv` and `<stem>.svg`.
pub fn render_report(report: &BucketReport, stem: impl AsRef<Path>) -> Result<ReportFiles> {
    let stem = stem.as_ref();
    let with = |ext: &str| {
        let mut p = stem.as_os_str().to_owned();
        p.push(".");
        p.push(ext);
        PathBuf::from(p)
    };
    let files = ReportFiles {
        json: with("json"),
        csv: with("csv"),
        svg: with("svg"),
    };
    let write = |p: &Path, body: String| std::fs::write(p, body).map_err(|e| Error::io(p, e));
    write(&files.json, serde_json::to_string_pretty(report)?)?;
    write(&files.csv, report_csv(report))?;
    write(&files.svg, report_svg(report))?;
    Ok(files)
}

/// Both bucket reports for one scored query set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub sdt: BucketReport,
    pub wdt: BucketReport,
}

/// Scores `queries` and buckets them against external predictions.
pub fn evaluate_predictions(
    model: &DistrustModel,
    queries: &Points,
    predictions: &Targets,
    truths: &Targets,
) -> Result<Evaluation> {
    let rows: Vec<&[f64]> = queries.rows().collect();
    let scores = model.score_batch(&rows)?;
    Ok(Evaluation {
        sdt: bucketize(&scores, Measure::Sdt, predictions, truths)?,
        wdt: bucketize(&scores, Measure::Wdt, predictions, truths)?,
    })
}

/// The synthetic pipeline end to end, with the k-NN baseline as the model
/// under test.
pub fn evaluate_synthetic(spec: &SyntheticSpec, params: OracleParams, baseline_k: usize) -> Result<Evaluation> {
    let syn = gen_synthetic(spec)?;
    let predictions = baseline_predict(&syn.dataset, &syn.queries, baseline_k)?;
    let model = DistrustModel::fit(syn.dataset, params)?;
    evaluate_predictions(&model, &syn.queries, &predictions, &syn.truths)
}
