//! Binary container for fitted models.
//!
//! Layout: 4-byte magic, `u32` format version, then tagged sections
//! (`u8` tag, `u64` byte length, payload), then a CRC32 of everything before
//! it. Integers and doubles are little-endian; doubles are stored as raw
//! IEEE-754 bits so round trips are exact. The k-NN index is not stored; it
//! is rebuilt from the points on load.

use crate::dataset::{ColumnKind, ColumnSpec, Dataset, Points, Schema, Targets, Task};
use crate::distrust::{DistrustModel, Surrogates, FORMAT_VERSION};
use crate::error::{Error, Result};
use crate::metrics::MetricId;
use crate::oracles::{OracleParams, RankList};
use crate::surrogate::{EstimatorKind, SearchStep, SurrogateEstimator};

const MAGIC: &[u8; 4] = b"DTRM";

const TAG_HEADER: u8 = 1;
const TAG_SCHEMA: u8 = 2;
const TAG_PARAMS: u8 = 3;
const TAG_POINTS: u8 = 4;
const TAG_TARGETS: u8 = 5;
const TAG_GAMMA_D: u8 = 6;
const TAG_GAMMA_U: u8 = 7;
const TAG_SURROGATE_RADIUS: u8 = 8;
const TAG_SURROGATE_UNCERTAINTY: u8 = 9;

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn usize(&mut self, v: usize) {
        self.u64(v as u64);
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_bits().to_le_bytes());
    }
    fn f64s(&mut self, vs: &[f64]) {
        self.usize(vs.len());
        for &v in vs {
            self.f64(v);
        }
    }
    fn str(&mut self, s: &str) {
        self.usize(s.len());
        self.buf.extend_from_slice(s.as_bytes());
    }
    fn section(&mut self, tag: u8, body: Writer) {
        self.u8(tag);
        self.usize(body.buf.len());
        self.buf.extend_from_slice(&body.buf);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

fn truncated() -> Error {
    Error::Integrity("unexpected end of data".into())
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or_else(truncated)?;
        let s = self.buf.get(self.pos..end).ok_or_else(truncated)?;
        self.pos = end;
        Ok(s)
    }
    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Integrity("length overflows usize".into()))
    }
    /// A count of items each at least `unit` bytes long, checked against
    /// what is left so corrupt lengths cannot trigger huge allocations.
    fn count(&mut self, unit: usize) -> Result<usize> {
        let n = self.usize()?;
        if n.saturating_mul(unit) > self.buf.len() - self.pos {
            return Err(truncated());
        }
        Ok(n)
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }
    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.count(8)?;
        (0..n).map(|_| self.f64()).collect()
    }
    fn str(&mut self) -> Result<String> {
        let n = self.count(1)?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Integrity("invalid utf-8".into()))
    }
    fn bool(&mut self) -> Result<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(Error::Integrity(format!("invalid flag byte {b}"))),
        }
    }
}

fn task_code(t: Task) -> u8 {
    match t {
        Task::Classification => 0,
        Task::Regression => 1,
    }
}

fn task_from(code: u8) -> Result<Task> {
    match code {
        0 => Ok(Task::Classification),
        1 => Ok(Task::Regression),
        c => Err(Error::Integrity(format!("unknown task code {c}"))),
    }
}

fn kind_code(k: ColumnKind) -> u8 {
    match k {
        ColumnKind::Ordinal => 0,
        ColumnKind::Categorical => 1,
        ColumnKind::Target => 2,
    }
}

fn kind_from(code: u8) -> Result<ColumnKind> {
    match code {
        0 => Ok(ColumnKind::Ordinal),
        1 => Ok(ColumnKind::Categorical),
        2 => Ok(ColumnKind::Target),
        c => Err(Error::Integrity(format!("unknown column kind {c}"))),
    }
}

fn metric_from(code: u8) -> Result<MetricId> {
    MetricId::from_code(code).ok_or_else(|| Error::Integrity(format!("unknown metric code {code}")))
}

fn write_schema(s: &Schema) -> Writer {
    let mut w = Writer::default();
    w.str(&s.target);
    w.u8(task_code(s.task));
    w.usize(s.columns.len());
    for c in &s.columns {
        w.str(&c.name);
        w.u8(kind_code(c.kind));
        w.f64(c.min);
        w.f64(c.max);
        w.u8(c.scaled as u8);
        w.usize(c.categories.len());
        for cat in &c.categories {
            w.str(cat);
        }
    }
    w
}

fn read_schema(r: &mut Reader) -> Result<Schema> {
    let target = r.str()?;
    let task = task_from(r.u8()?)?;
    let ncols = r.count(1)?;
    let mut columns = Vec::with_capacity(ncols);
    for _ in 0..ncols {
        let name = r.str()?;
        let kind = kind_from(r.u8()?)?;
        let min = r.f64()?;
        let max = r.f64()?;
        let scaled = r.bool()?;
        let ncat = r.count(8)?;
        let categories = (0..ncat).map(|_| r.str()).collect::<Result<_>>()?;
        columns.push(ColumnSpec {
            name,
            kind,
            min,
            max,
            categories,
            scaled,
        });
    }
    Ok(Schema {
        columns,
        target,
        task,
    })
}

fn write_params(p: &OracleParams) -> Writer {
    let mut w = Writer::default();
    w.usize(p.k);
    w.f64(p.mu_o);
    w.f64(p.sigma_o);
    w.f64(p.mu_u);
    w.f64(p.sigma_u);
    w.u8(p.metric.code());
    w.u8(p.binary_entropy_direct as u8);
    w
}

fn read_params(r: &mut Reader) -> Result<OracleParams> {
    Ok(OracleParams {
        k: r.usize()?,
        mu_o: r.f64()?,
        sigma_o: r.f64()?,
        mu_u: r.f64()?,
        sigma_u: r.f64()?,
        metric: metric_from(r.u8()?)?,
        binary_entropy_direct: r.bool()?,
    })
}

fn write_points(w: &mut Writer, p: &Points) {
    w.usize(p.dim());
    w.f64s(p.as_slice());
}

fn read_points(r: &mut Reader) -> Result<Points> {
    let dim = r.usize()?;
    let data = r.f64s()?;
    Points::new(data, dim).map_err(|e| Error::Integrity(format!("points: {e}")))
}

fn write_targets(t: &Targets) -> Writer {
    let mut w = Writer::default();
    match t {
        Targets::Classes { ids, labels } => {
            w.u8(0);
            w.usize(labels.len());
            for l in labels {
                w.str(l);
            }
            w.usize(ids.len());
            for &id in ids {
                w.u32(id);
            }
        }
        Targets::Values(v) => {
            w.u8(1);
            w.f64s(v);
        }
    }
    w
}

fn read_targets(r: &mut Reader) -> Result<Targets> {
    match r.u8()? {
        0 => {
            let nl = r.count(8)?;
            let labels: Vec<String> = (0..nl).map(|_| r.str()).collect::<Result<_>>()?;
            let n = r.count(4)?;
            let ids: Vec<u32> = (0..n).map(|_| r.u32()).collect::<Result<_>>()?;
            if ids.iter().any(|&id| id as usize >= labels.len()) {
                return Err(Error::Integrity("class id without a label".into()));
            }
            Ok(Targets::Classes { ids, labels })
        }
        1 => Ok(Targets::Values(r.f64s()?)),
        c => Err(Error::Integrity(format!("unknown target kind {c}"))),
    }
}

fn write_rank_list(g: &RankList) -> Writer {
    let mut w = Writer::default();
    w.f64s(g.values());
    w
}

fn read_rank_list(r: &mut Reader) -> Result<RankList> {
    RankList::from_sorted(r.f64s()?)
}

fn write_estimator(e: &SurrogateEstimator) -> Writer {
    let mut w = Writer::default();
    w.u8(match e.kind {
        EstimatorKind::Radius => 0,
        EstimatorKind::Uncertainty => 1,
    });
    w.f64(e.epsilon);
    w.f64(e.achieved_rmse);
    w.u8(e.converged as u8);
    w.usize(e.trajectory.len());
    for s in &e.trajectory {
        w.usize(s.sample_size);
        w.f64(s.rmse);
    }
    write_points(&mut w, &e.sample);
    w.f64s(&e.values);
    w
}

fn read_estimator(r: &mut Reader) -> Result<SurrogateEstimator> {
    let kind = match r.u8()? {
        0 => EstimatorKind::Radius,
        1 => EstimatorKind::Uncertainty,
        c => return Err(Error::Integrity(format!("unknown estimator kind {c}"))),
    };
    let epsilon = r.f64()?;
    let achieved_rmse = r.f64()?;
    let converged = r.bool()?;
    let steps = r.count(16)?;
    let trajectory = (0..steps)
        .map(|_| {
            Ok(SearchStep {
                sample_size: r.usize()?,
                rmse: r.f64()?,
            })
        })
        .collect::<Result<_>>()?;
    let sample = read_points(r)?;
    let values = r.f64s()?;
    SurrogateEstimator::from_parts(kind, sample, values, epsilon, achieved_rmse, converged, trajectory)
        .map_err(|e| Error::Integrity(format!("surrogate: {e}")))
}

pub(crate) fn encode_model(m: &DistrustModel) -> Vec<u8> {
    let mut w = Writer::default();
    w.buf.extend_from_slice(MAGIC);
    w.u32(FORMAT_VERSION);

    let mut header = Writer::default();
    header.usize(m.len());
    header.usize(m.dim());
    header.u8(task_code(m.data.task()));
    w.section(TAG_HEADER, header);
    w.section(TAG_SCHEMA, write_schema(&m.data.schema));
    w.section(TAG_PARAMS, write_params(&m.params));
    let mut points = Writer::default();
    write_points(&mut points, &m.data.points);
    w.section(TAG_POINTS, points);
    w.section(TAG_TARGETS, write_targets(&m.data.targets));
    w.section(TAG_GAMMA_D, write_rank_list(&m.gamma_d));
    w.section(TAG_GAMMA_U, write_rank_list(&m.gamma_u));
    if let Some(s) = &m.surrogates {
        w.section(TAG_SURROGATE_RADIUS, write_estimator(&s.radius));
        w.section(TAG_SURROGATE_UNCERTAINTY, write_estimator(&s.uncertainty));
    }

    let crc = crc32fast::hash(&w.buf);
    w.u32(crc);
    w.buf
}

pub(crate) fn decode_model(bytes: &[u8]) -> Result<DistrustModel> {
    if bytes.len() < 8 {
        return Err(truncated());
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Integrity("not a model file (bad magic)".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            expected: FORMAT_VERSION,
            found: version,
        });
    }
    if bytes.len() < 12 {
        return Err(truncated());
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    if crc32fast::hash(body) != stored {
        return Err(Error::Integrity("checksum mismatch".into()));
    }

    let mut r = Reader::new(&body[8..]);
    let mut header = None;
    let mut schema = None;
    let mut params = None;
    let mut points = None;
    let mut targets = None;
    let mut gamma_d = None;
    let mut gamma_u = None;
    let mut reg_rho = None;
    let mut reg_u = None;
    while !r.done() {
        let tag = r.u8()?;
        let len = r.usize()?;
        let mut s = Reader::new(r.take(len)?);
        match tag {
            TAG_HEADER => header = Some((s.usize()?, s.usize()?, task_from(s.u8()?)?)),
            TAG_SCHEMA => schema = Some(read_schema(&mut s)?),
            TAG_PARAMS => params = Some(read_params(&mut s)?),
            TAG_POINTS => points = Some(read_points(&mut s)?),
            TAG_TARGETS => targets = Some(read_targets(&mut s)?),
            TAG_GAMMA_D => gamma_d = Some(read_rank_list(&mut s)?),
            TAG_GAMMA_U => gamma_u = Some(read_rank_list(&mut s)?),
            TAG_SURROGATE_RADIUS => reg_rho = Some(read_estimator(&mut s)?),
            TAG_SURROGATE_UNCERTAINTY => reg_u = Some(read_estimator(&mut s)?),
            other => return Err(Error::Integrity(format!("unknown section tag {other}"))),
        }
        if !s.done() {
            return Err(Error::Integrity(format!("trailing bytes in section {tag}")));
        }
    }

    let missing = |what: &str| Error::Integrity(format!("missing {what} section"));
    let (n, dim, task) = header.ok_or_else(|| missing("header"))?;
    let points = points.ok_or_else(|| missing("points"))?;
    if points.len() != n || points.dim() != dim {
        return Err(Error::Integrity("header does not match stored points".into()));
    }
    let data = Dataset::new(
        points,
        targets.ok_or_else(|| missing("targets"))?,
        schema.ok_or_else(|| missing("schema"))?,
    )
    .map_err(|e| Error::Integrity(format!("dataset: {e}")))?;
    if data.task() != task {
        return Err(Error::Integrity("header task does not match targets".into()));
    }
    let surrogates = match (reg_rho, reg_u) {
        (Some(radius), Some(uncertainty)) => Some(Surrogates {
            radius,
            uncertainty,
        }),
        (None, None) => None,
        _ => return Err(Error::Integrity("only one surrogate section present".into())),
    };
    DistrustModel::from_parts(
        data,
        gamma_d.ok_or_else(|| missing("radius rank list"))?,
        gamma_u.ok_or_else(|| missing("uncertainty rank list"))?,
        params.ok_or_else(|| missing("params"))?,
        surrogates,
    )
}
