//! Tabular ingestion: CSV loading, schema inference, min-max scaling and
//! one-hot encoding into the numeric space the index operates on.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major matrix of encoded points.
#[derive(Debug, Clone, PartialEq)]
pub struct Points {
    data: Vec<f64>,
    dim: usize,
}

impl Points {
    pub fn new(data: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParams("points need at least one dimension".into()));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: data.len() % dim,
            });
        }
        Ok(Points { data, dim })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Points::new(data, dim)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Per-dimension `(min, max)` over all rows.
    pub fn bounds(&self) -> Vec<(f64, f64)> {
        let mut bounds = vec![(f64::INFINITY, f64::NEG_INFINITY); self.dim];
        for row in self.rows() {
            for (b, &v) in bounds.iter_mut().zip(row) {
                b.0 = b.0.min(v);
                b.1 = b.1.max(v);
            }
        }
        bounds
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Classification,
    Regression,
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "classification" => Ok(Task::Classification),
            "regression" => Ok(Task::Regression),
            other => Err(Error::InvalidParams(format!("unknown task `{other}`"))),
        }
    }
}

/// Target column of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    /// Dense class ids plus the label each id stands for.
    Classes { ids: Vec<u32>, labels: Vec<String> },
    Values(Vec<f64>),
}

impl Targets {
    /// Maps raw labels to dense ids in first-appearance order.
    pub fn classes_from_labels<S: AsRef<str>>(raw: &[S]) -> Self {
        let mut labels: Vec<String> = Vec::new();
        let mut lookup: HashMap<String, u32> = HashMap::new();
        let ids = raw
            .iter()
            .map(|s| {
                let s = s.as_ref();
                *lookup.entry(s.to_string()).or_insert_with(|| {
                    labels.push(s.to_string());
                    (labels.len() - 1) as u32
                })
            })
            .collect();
        Targets::Classes { ids, labels }
    }

    pub fn len(&self) -> usize {
        match self {
            Targets::Classes { ids, .. } => ids.len(),
            Targets::Values(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn task(&self) -> Task {
        match self {
            Targets::Classes { .. } => Task::Classification,
            Targets::Values(_) => Task::Regression,
        }
    }

    pub fn class_count(&self) -> usize {
        match self {
            Targets::Classes { labels, .. } => labels.len(),
            Targets::Values(_) => 0,
        }
    }

    /// Returns the rows selected by `rows`, keeping the label table.
    pub fn select(&self, rows: &[usize]) -> Targets {
        match self {
            Targets::Classes { ids, labels } => Targets::Classes {
                ids: rows.iter().map(|&r| ids[r]).collect(),
                labels: labels.clone(),
            },
            Targets::Values(v) => Targets::Values(rows.iter().map(|&r| v[r]).collect()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Ordinal,
    Categorical,
    Target,
}

impl std::str::FromStr for ColumnKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ordinal" | "numeric" => Ok(ColumnKind::Ordinal),
            "categorical" => Ok(ColumnKind::Categorical),
            "target" => Ok(ColumnKind::Target),
            other => Err(Error::InvalidParams(format!("unknown column kind `{other}`"))),
        }
    }
}

/// One raw column and how it maps into encoded space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
    /// Observed training minimum (ordinal only).
    pub min: f64,
    /// Observed training maximum (ordinal only).
    pub max: f64,
    /// One-hot categories in first-appearance order (categorical only).
    pub categories: Vec<String>,
    /// When false, the ordinal value is passed through unscaled.
    pub scaled: bool,
}

impl ColumnSpec {
    fn new(name: &str, kind: ColumnKind) -> Self {
        ColumnSpec {
            name: name.to_string(),
            kind,
            min: 0.0,
            max: 0.0,
            categories: Vec::new(),
            scaled: true,
        }
    }

    /// Number of encoded dimensions this column occupies.
    pub fn width(&self) -> usize {
        match self.kind {
            ColumnKind::Ordinal => 1,
            ColumnKind::Categorical => self.categories.len(),
            ColumnKind::Target => 0,
        }
    }

    #[inline]
    fn scale(&self, v: f64) -> f64 {
        if !self.scaled {
            v
        } else if self.max > self.min {
            (v - self.min) / (self.max - self.min)
        } else {
            0.0
        }
    }

    fn encode_into(&self, raw: &str, out: &mut Vec<f64>) -> Result<()> {
        match self.kind {
            ColumnKind::Ordinal => out.push(self.scale(parse_number(&self.name, raw)?)),
            ColumnKind::Categorical => {
                let raw = raw.trim();
                let hit = self
                    .categories
                    .iter()
                    .position(|c| c == raw)
                    .ok_or_else(|| Error::UnseenCategory {
                        column: self.name.clone(),
                        category: raw.to_string(),
                    })?;
                out.extend((0..self.categories.len()).map(|i| if i == hit { 1.0 } else { 0.0 }));
            }
            ColumnKind::Target => {}
        }
        Ok(())
    }
}

/// Column metadata plus the encoding map used for future queries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub columns: Vec<ColumnSpec>,
    pub target: String,
    pub task: Task,
}

impl Schema {
    /// Schema for already-encoded points: `d` pass-through ordinal columns.
    pub fn identity(dim: usize, task: Task) -> Self {
        let mut columns: Vec<ColumnSpec> = (0..dim)
            .map(|i| {
                let mut c = ColumnSpec::new(&format!("x{}", i + 1), ColumnKind::Ordinal);
                c.scaled = false;
                c.max = 1.0;
                c
            })
            .collect();
        columns.push(ColumnSpec::new("y", ColumnKind::Target));
        Schema {
            columns,
            target: "y".into(),
            task,
        }
    }

    /// Disables min-max scaling for every ordinal column.
    pub fn with_identity_scaling(mut self) -> Self {
        for c in &mut self.columns {
            c.scaled = false;
        }
        self
    }

    pub fn features(&self) -> impl Iterator<Item = &ColumnSpec> {
        self.columns.iter().filter(|c| c.kind != ColumnKind::Target)
    }

    /// Encoded dimensionality.
    pub fn dim(&self) -> usize {
        self.columns.iter().map(ColumnSpec::width).sum()
    }

    /// Encodes one raw record whose fields are named by `header`. Columns not
    /// in the schema (including the target) are ignored.
    pub fn encode_record<S: AsRef<str>, T: AsRef<str>>(
        &self,
        header: &[S],
        fields: &[T],
    ) -> Result<Vec<f64>> {
        if header.len() != fields.len() {
            return Err(Error::RaggedRow {
                row: 0,
                expected: header.len(),
                found: fields.len(),
            });
        }
        let mut out = Vec::with_capacity(self.dim());
        for col in self.features() {
            let pos = header
                .iter()
                .position(|h| h.as_ref().trim() == col.name)
                .ok_or_else(|| Error::MissingColumn(col.name.clone()))?;
            col.encode_into(fields[pos].as_ref(), &mut out)?;
        }
        Ok(out)
    }
}

/// Rows as read from disk, all fields still text.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl RawTable {
    pub fn from_rows(headers: Vec<String>, rows: Vec<Vec<String>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyTable);
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != headers.len() {
                return Err(Error::RaggedRow {
                    row: i + 1,
                    expected: headers.len(),
                    found: row.len(),
                });
            }
            if let Some(j) = row.iter().position(|f| f.trim().is_empty()) {
                return Err(Error::MissingValue {
                    column: headers[j].clone(),
                    row: i + 1,
                });
            }
        }
        Ok(RawTable { headers, rows })
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }

    fn column(&self, j: usize) -> impl Iterator<Item = &str> {
        self.rows.iter().map(move |r| r[j].trim())
    }
}

/// Reads a headered CSV without interpreting any field.
pub fn read_csv(path: impl AsRef<Path>) -> Result<RawTable> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv_from(file)
}

pub fn read_csv_from<R: std::io::Read>(reader: R) -> Result<RawTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if headers.iter().all(|h| h.is_empty()) {
        return Err(Error::EmptyTable);
    }
    let mut rows = Vec::new();
    for record in rdr.records() {
        rows.push(record?.iter().map(str::to_string).collect());
    }
    RawTable::from_rows(headers, rows)
}

/// Loads a CSV and infers its schema; see [`infer_schema`].
pub fn load_csv(
    path: impl AsRef<Path>,
    target: &str,
    kinds: Option<&HashMap<String, ColumnKind>>,
) -> Result<(RawTable, Schema)> {
    let raw = read_csv(path)?;
    let schema = infer_schema(&raw, target, kinds)?;
    Ok((raw, schema))
}

fn parse_number(column: &str, raw: &str) -> Result<f64> {
    let raw = raw.trim();
    match raw.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(Error::NotNumeric {
            column: column.to_string(),
            value: raw.to_string(),
        }),
    }
}

/// Assigns a kind to every column. Explicit `kinds` win; otherwise a column
/// whose every value parses as a number is ordinal and anything else is
/// categorical. The task is classification unless the target is numeric with
/// at least one non-integer value (or is hinted `ordinal`).
pub fn infer_schema(
    raw: &RawTable,
    target: &str,
    kinds: Option<&HashMap<String, ColumnKind>>,
) -> Result<Schema> {
    let target_idx = raw
        .column_index(target)
        .ok_or_else(|| Error::MissingTargetColumn(target.to_string()))?;
    let hint = |name: &str| kinds.and_then(|k| k.get(name).copied());
    let all_numeric = |j: usize| raw.column(j).all(|v| v.parse::<f64>().is_ok_and(f64::is_finite));

    let mut columns = Vec::with_capacity(raw.headers.len());
    for (j, name) in raw.headers.iter().enumerate() {
        if j == target_idx {
            columns.push(ColumnSpec::new(name, ColumnKind::Target));
            continue;
        }
        let kind = match hint(name) {
            Some(ColumnKind::Target) => {
                return Err(Error::InvalidParams(format!(
                    "column `{name}` hinted as target but target is `{target}`"
                )))
            }
            Some(k) => k,
            None if all_numeric(j) => ColumnKind::Ordinal,
            None => ColumnKind::Categorical,
        };
        columns.push(ColumnSpec::new(name, kind));
    }
    if columns.iter().all(|c| c.kind == ColumnKind::Target) {
        return Err(Error::InvalidParams("no feature columns besides the target".into()));
    }

    let task = match hint(target) {
        Some(ColumnKind::Categorical) => Task::Classification,
        Some(ColumnKind::Ordinal) => Task::Regression,
        _ if all_numeric(target_idx)
            && raw
                .column(target_idx)
                .any(|v| v.parse::<f64>().is_ok_and(|x| x.fract() != 0.0)) =>
        {
            Task::Regression
        }
        _ => Task::Classification,
    };
    Ok(Schema {
        columns,
        target: target.to_string(),
        task,
    })
}

/// An encoded training set. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub points: Points,
    pub targets: Targets,
    pub schema: Schema,
}

impl Dataset {
    /// Wraps already-encoded points with an identity schema.
    pub fn from_encoded(points: Points, targets: Targets) -> Result<Self> {
        let schema = Schema::identity(points.dim(), targets.task());
        Dataset::new(points, targets, schema)
    }

    pub fn new(points: Points, targets: Targets, schema: Schema) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyTable);
        }
        if points.len() != targets.len() {
            return Err(Error::LengthMismatch(format!(
                "{} points but {} targets",
                points.len(),
                targets.len()
            )));
        }
        if schema.dim() != points.dim() {
            return Err(Error::DimensionMismatch {
                expected: schema.dim(),
                found: points.dim(),
            });
        }
        if schema.task != targets.task() {
            return Err(Error::InvalidParams("schema task does not match targets".into()));
        }
        Ok(Dataset {
            points,
            targets,
            schema,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.dim()
    }

    pub fn task(&self) -> Task {
        self.targets.task()
    }

    /// Encodes a raw query row using the training encoding map.
    pub fn encode_query<S: AsRef<str>, T: AsRef<str>>(
        &self,
        header: &[S],
        fields: &[T],
    ) -> Result<Vec<f64>> {
        self.schema.encode_record(header, fields)
    }
}

/// Fits the encoding map on `raw` (observed min/max, category lists, class
/// ids) and encodes every row with it.
pub fn encode(raw: &RawTable, mut schema: Schema) -> Result<Dataset> {
    let idx_of = |name: &str| raw.column_index(name).ok_or_else(|| Error::MissingColumn(name.to_string()));
    for col in &mut schema.columns {
        let j = idx_of(&col.name)?;
        match col.kind {
            ColumnKind::Ordinal => {
                let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
                for v in raw.column(j) {
                    let v = parse_number(&col.name, v)?;
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
                col.min = lo;
                col.max = hi;
            }
            ColumnKind::Categorical => {
                col.categories.clear();
                for v in raw.column(j) {
                    if !col.categories.iter().any(|c| c == v) {
                        col.categories.push(v.to_string());
                    }
                }
            }
            ColumnKind::Target => {}
        }
    }

    let dim = schema.dim();
    let mut data = Vec::with_capacity(raw.rows.len() * dim);
    for row in &raw.rows {
        let encoded = schema.encode_record(&raw.headers, row)?;
        data.extend(encoded);
    }
    let points = Points::new(data, dim)?;

    let t = idx_of(&schema.target)?;
    let targets = match schema.task {
        Task::Classification => {
            let labels: Vec<&str> = raw.column(t).collect();
            Targets::classes_from_labels(&labels)
        }
        Task::Regression => Targets::Values(
            raw.column(t)
                .map(|v| parse_number(&schema.target, v))
                .collect::<Result<_>>()?,
        ),
    };
    Dataset::new(points, targets, schema)
}
