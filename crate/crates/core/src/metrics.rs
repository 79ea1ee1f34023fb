//! Distance functions for the vicinity machinery.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Supported distance functions. `Cityblock` and `Manhattan` are the same
/// L1 distance under two names.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricId {
    Euclidean,
    Cityblock,
    Manhattan,
    Chebyshev,
    Canberra,
    Braycurtis,
}

impl MetricId {
    pub const ALL: [MetricId; 6] = [
        MetricId::Euclidean,
        MetricId::Cityblock,
        MetricId::Manhattan,
        MetricId::Chebyshev,
        MetricId::Canberra,
        MetricId::Braycurtis,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MetricId::Euclidean => "euclidean",
            MetricId::Cityblock => "cityblock",
            MetricId::Manhattan => "manhattan",
            MetricId::Chebyshev => "chebyshev",
            MetricId::Canberra => "canberra",
            MetricId::Braycurtis => "braycurtis",
        }
    }

    /// Stable one-byte code used by the model file.
    pub fn code(self) -> u8 {
        match self {
            MetricId::Euclidean => 0,
            MetricId::Cityblock => 1,
            MetricId::Manhattan => 2,
            MetricId::Chebyshev => 3,
            MetricId::Canberra => 4,
            MetricId::Braycurtis => 5,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        MetricId::ALL.into_iter().find(|m| m.code() == code)
    }

    /// Whether a bounding-box lower bound is valid for this distance, i.e.
    /// it is a Minkowski norm of the coordinate differences.
    pub fn supports_box_bound(self) -> bool {
        matches!(
            self,
            MetricId::Euclidean | MetricId::Cityblock | MetricId::Manhattan | MetricId::Chebyshev
        )
    }

    /// Distance between two equal-length slices. Callers guarantee lengths.
    #[inline]
    pub fn eval(self, a: &[f64], b: &[f64]) -> f64 {
        debug_assert_eq!(a.len(), b.len());
        match self {
            MetricId::Euclidean => {
                let mut s = 0.0;
                for (x, y) in a.iter().zip(b) {
                    let d = x - y;
                    s += d * d;
                }
                s.sqrt()
            }
            MetricId::Cityblock | MetricId::Manhattan => {
                let mut s = 0.0;
                for (x, y) in a.iter().zip(b) {
                    s += (x - y).abs();
                }
                s
            }
            MetricId::Chebyshev => {
                let mut m = 0.0f64;
                for (x, y) in a.iter().zip(b) {
                    m = m.max((x - y).abs());
                }
                m
            }
            MetricId::Canberra => {
                let mut s = 0.0;
                for (x, y) in a.iter().zip(b) {
                    let den = x.abs() + y.abs();
                    if den > 0.0 {
                        s += (x - y).abs() / den;
                    }
                }
                s
            }
            MetricId::Braycurtis => {
                let (mut num, mut den) = (0.0, 0.0);
                for (x, y) in a.iter().zip(b) {
                    num += (x - y).abs();
                    den += (x + y).abs();
                }
                if den > 0.0 {
                    num / den
                } else {
                    0.0
                }
            }
        }
    }

    /// Lower bound on `eval(q, p)` for any `p` inside the axis-aligned box
    /// `[lo, hi]`. Accumulates in the same order as `eval` so the bound never
    /// exceeds a computed distance, even after rounding.
    #[inline]
    pub(crate) fn box_lower_bound(self, q: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
        let gap = |i: usize| {
            let v = q[i];
            if v < lo[i] {
                lo[i] - v
            } else if v > hi[i] {
                v - hi[i]
            } else {
                0.0
            }
        };
        match self {
            MetricId::Euclidean => {
                let mut s = 0.0;
                for i in 0..q.len() {
                    let g = gap(i);
                    s += g * g;
                }
                s.sqrt()
            }
            MetricId::Cityblock | MetricId::Manhattan => (0..q.len()).map(gap).fold(0.0, |s, g| s + g),
            MetricId::Chebyshev => (0..q.len()).map(gap).fold(0.0f64, f64::max),
            MetricId::Canberra | MetricId::Braycurtis => 0.0,
        }
    }
}

impl fmt::Display for MetricId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MetricId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        MetricId::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidParams(format!("unknown metric `{s}`")))
    }
}

/// Checked distance between two points.
pub fn distance(a: &[f64], b: &[f64], metric: MetricId) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    Ok(metric.eval(a, b))
}
