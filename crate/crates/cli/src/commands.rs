use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use distrust_core::dataset::{self, ColumnKind, RawTable};
use distrust_core::eval::{self, BucketReport, Evaluation, Region, SyntheticSpec};
use distrust_core::surrogate::{self, SearchConfig, SurrogateEstimator};
use distrust_core::tuning::{self, NcpMoments, TuningGrid};
use distrust_core::{Dataset, DistrustModel, Error, KnnIndex, OracleParams, Points, Targets, Task};
use serde_json::{json, Value};

use crate::config::Settings;
use crate::CliError;

fn params(s: &Settings) -> OracleParams {
    OracleParams {
        k: s.k,
        mu_o: 1.0 - s.c,
        sigma_o: s.sigma,
        mu_u: 1.0 - s.u,
        sigma_u: s.sigma_u,
        metric: s.metric,
        binary_entropy_direct: s.binary_entropy_direct,
    }
}

fn parse_kinds(s: &Settings) -> Result<HashMap<String, ColumnKind>, CliError> {
    let mut kinds = HashMap::new();
    if let Some(spec) = s.kinds.as_deref() {
        for item in spec.split(',').map(str::trim).filter(|i| !i.is_empty()) {
            let (name, kind) = item
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("column kind `{item}` is not name=kind")))?;
            let kind: ColumnKind = kind.trim().parse().map_err(|e: Error| CliError::Config(e.to_string()))?;
            kinds.insert(name.trim().to_string(), kind);
        }
    }
    if let (Some(task), Some(target)) = (s.task, s.target.as_ref()) {
        let hint = match task {
            Task::Classification => ColumnKind::Categorical,
            Task::Regression => ColumnKind::Ordinal,
        };
        kinds.insert(target.clone(), hint);
    }
    Ok(kinds)
}

fn load_dataset(s: &Settings, path: &Path) -> Result<Dataset, CliError> {
    let target = s.require_target()?;
    let kinds = parse_kinds(s)?;
    let raw = dataset::read_csv(path)?;
    let mut schema = dataset::infer_schema(&raw, target, Some(&kinds))?;
    if !s.normalize {
        schema = schema.with_identity_scaling();
    }
    Ok(dataset::encode(&raw, schema)?)
}

/// Loads a model and applies any transform settings given explicitly.
fn load_model(s: &Settings, path: &Path) -> Result<DistrustModel, CliError> {
    let mut model = DistrustModel::load(path)?;
    let e = &s.explicit;
    let mut p = *model.params();
    if let Some(k) = e.k {
        p.k = k;
    }
    if let Some(m) = e.metric {
        p.metric = m;
    }
    if let Some(c) = e.c {
        p.mu_o = 1.0 - c;
    }
    if let Some(v) = e.sigma {
        p.sigma_o = v;
    }
    if let Some(u) = e.u {
        p.mu_u = 1.0 - u;
    }
    if let Some(v) = e.sigma_u {
        p.sigma_u = v;
    }
    if let Some(b) = e.binary_entropy_direct {
        p.binary_entropy_direct = b;
    }
    if p != *model.params() {
        model.set_params(p)?;
    }
    let effective = serde_json::to_string(model.params()).map_err(CliError::output)?;
    eprintln!("model params: {effective}");
    Ok(model)
}

fn write_json(path: &Path, value: &Value) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(CliError::output)?;
    fs::write(path, text + "\n").map_err(|e| CliError::output(format!("{}: {e}", path.display())))
}

fn print_json(value: &Value) {
    println!("{}", serde_json::to_string_pretty(value).expect("json values always serialize"));
}

/// Rows of a query file encoded with the model's schema. An empty file
/// yields no rows.
fn encode_queries(model: &DistrustModel, path: &Path) -> Result<(Option<RawTable>, Vec<Vec<f64>>), CliError> {
    let raw = match dataset::read_csv(path) {
        Ok(raw) => raw,
        Err(Error::EmptyTable) => return Ok((None, Vec::new())),
        Err(e) => return Err(e.into()),
    };
    let rows = raw
        .rows
        .iter()
        .enumerate()
        .map(|(i, row)| {
            model
                .dataset()
                .encode_query(&raw.headers, row)
                .map_err(|e| CliError::Input(format!("query row {i}: {e}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((Some(raw), rows))
}

pub fn preprocess(s: &Settings, data: &Path, out: &Path) -> Result<(), CliError> {
    let ds = load_dataset(s, data)?;
    let model = DistrustModel::fit(ds, params(s))?;
    model.save(out).map_err(CliError::output)?;
    let (gd, gu) = (model.gamma_d(), model.gamma_u());
    print_json(&json!({
        "model": out,
        "n": model.len(),
        "d": model.dim(),
        "task": model.dataset().task(),
        "k": model.params().k,
        "metric": model.params().metric,
        "gamma_d_min": gd.min(),
        "gamma_d_max": gd.max(),
        "gamma_u_min": gu.min(),
        "gamma_u_max": gu.max(),
        "config": s.to_json(),
    }));
    Ok(())
}

pub fn score(s: &Settings, model_path: &Path, queries: &Path, no_data: bool) -> Result<(), CliError> {
    let model = load_model(s, model_path)?;
    let scorer = if no_data { Some(model.no_data_scorer()?) } else { None };
    let (_, rows) = encode_queries(&model, queries)?;
    let scores = match &scorer {
        Some(sc) => rows.iter().map(|q| sc.score(q)).collect::<Result<Vec<_>, _>>()?,
        None => model.score_batch(&rows)?,
    };
    let stdout = std::io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    for (i, sc) in scores.iter().enumerate() {
        let mut v = serde_json::to_value(sc).map_err(CliError::output)?;
        v["row_id"] = json!(i);
        writeln!(out, "{v}").map_err(CliError::output)?;
    }
    out.flush().map_err(CliError::output)
}

fn vcurve_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "tune".into());
    out.with_file_name(format!("{stem}.vcurve.csv"))
}

pub fn tune(s: &Settings, data: &Path, out: &Path) -> Result<(), CliError> {
    let ds = load_dataset(s, data)?;
    let grid = TuningGrid {
        c_values: s.c_grid.clone(),
        k_values: s.k_grid.clone(),
    };
    grid.validate(ds.len())?;
    let index = KnnIndex::build(&ds.points, s.metric)?;
    let mut report = tuning::tune_ck_on(&ds, &index, &grid, NcpMoments::default())?;
    let u = tuning::estimate_u(&ds, &index, report.k_opt)?;
    let vpath = vcurve_path(out);
    let mut csv = String::from("r,v\n");
    for p in &u.v_curve {
        csv.push_str(&format!("{},{}\n", p.r, p.v));
    }
    fs::write(&vpath, csv).map_err(|e| CliError::output(format!("{}: {e}", vpath.display())))?;
    let summary = json!({
        "c_opt": report.c_opt,
        "k_opt": report.k_opt,
        "u_hat": u.u_hat,
        "u_degenerate": u.degenerate,
        "report": out,
        "v_curve": vpath,
    });
    report.uncertainty = Some(u);
    let mut doc = serde_json::to_value(&report).map_err(CliError::output)?;
    doc["config"] = s.to_json();
    write_json(out, &doc)?;
    print_json(&summary);
    Ok(())
}

fn estimator_summary(e: &SurrogateEstimator) -> Value {
    json!({
        "kind": e.kind(),
        "sample_size": e.sample_size(),
        "reference_size": e.reference_size(),
        "epsilon": if e.epsilon().is_finite() { json!(e.epsilon()) } else { json!(e.epsilon().to_string()) },
        "achieved_rmse": e.achieved_rmse(),
        "converged": e.converged(),
        "trajectory": e.trajectory(),
    })
}

pub fn surrogate_train(
    s: &Settings,
    model_path: &Path,
    out: Option<&Path>,
    report: Option<&Path>,
) -> Result<(), CliError> {
    let mut model = load_model(s, model_path)?;
    let config = SearchConfig {
        epsilon: s.epsilon,
        mix: s.mix,
        seed: s.seed,
    };
    let trained = surrogate::train_surrogates(&model, &config)?;
    let summary = json!({
        "n": model.len(),
        "radius": estimator_summary(&trained.radius),
        "uncertainty": estimator_summary(&trained.uncertainty),
        "config": s.to_json(),
    });
    model.set_surrogates(Some(trained));
    let target = out.unwrap_or(model_path);
    model.save(target).map_err(CliError::output)?;
    if let Some(path) = report {
        write_json(path, &summary)?;
    }
    print_json(&summary);
    Ok(())
}

fn brief(r: &BucketReport) -> Value {
    json!({
        "spearman_rho": r.spearman_rho,
        "counts": r.buckets.iter().map(|b| b.count).collect::<Vec<_>>(),
        "failure": r.buckets.iter().map(|b| b.failure()).collect::<Vec<_>>(),
    })
}

fn write_evaluation(s: &Settings, ev: &Evaluation, out: &Path, extra: Value) -> Result<(), CliError> {
    fs::create_dir_all(out).map_err(|e| CliError::output(format!("{}: {e}", out.display())))?;
    eval::render_report(&ev.sdt, out.join("sdt")).map_err(CliError::output)?;
    eval::render_report(&ev.wdt, out.join("wdt")).map_err(CliError::output)?;
    let summary = json!({
        "source": extra,
        "sdt": brief(&ev.sdt),
        "wdt": brief(&ev.wdt),
        "config": s.to_json(),
    });
    write_json(&out.join("summary.json"), &summary)?;
    print_json(&summary);
    Ok(())
}

pub fn evaluate_synthetic(s: &Settings, n: usize, region: &str, baseline_k: usize, out: &Path) -> Result<(), CliError> {
    let region = match region {
        "disk" => SyntheticSpec::default().region,
        "cat" => Region::cat(),
        other => return Err(CliError::Config(format!("unknown region `{other}` (disk or cat)"))),
    };
    let spec = SyntheticSpec {
        n,
        region,
        seed: s.seed,
        ..SyntheticSpec::default()
    };
    let ev = eval::evaluate_synthetic(&spec, params(s), baseline_k)?;
    let source = json!({ "synthetic": spec, "baseline_k": baseline_k });
    write_evaluation(s, &ev, out, source)
}

/// Maps labels to the model's class ids, appending ids for labels the
/// training data never produced.
fn class_targets(labels: &mut Vec<String>, raw: &[String]) -> Vec<u32> {
    raw.iter()
        .map(|v| match labels.iter().position(|l| l == v) {
            Some(i) => i as u32,
            None => {
                labels.push(v.clone());
                (labels.len() - 1) as u32
            }
        })
        .collect()
}

fn value_targets(what: &str, raw: &[String]) -> Result<Vec<f64>, CliError> {
    raw.iter()
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| CliError::Input(format!("{what} `{v}` is not a number")))
        })
        .collect()
}

pub fn evaluate_external(
    s: &Settings,
    model_path: &Path,
    queries: &Path,
    predictions: &Path,
    out: &Path,
) -> Result<(), CliError> {
    let model = load_model(s, model_path)?;
    let (raw_queries, rows) = encode_queries(&model, queries)?;
    let n = rows.len();
    let preds = dataset::read_csv(predictions)?;
    let col = |name: &str| preds.column_index(name);
    let (id_col, pred_col) = match (col("row_id"), col("prediction")) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(CliError::Input("predictions need `row_id` and `prediction` columns".into())),
    };
    let truth_col = col("truth");

    let mut pred_raw: Vec<Option<String>> = vec![None; n];
    let mut truth_raw: Vec<Option<String>> = vec![None; n];
    for row in &preds.rows {
        let id: usize = row[id_col]
            .trim()
            .parse()
            .ok()
            .filter(|&i| i < n)
            .ok_or_else(|| CliError::Input(format!("row_id `{}` matches no query row", row[id_col])))?;
        pred_raw[id] = Some(row[pred_col].trim().to_string());
        truth_raw[id] = truth_col.map(|j| row[j].trim().to_string());
    }
    let target = &model.dataset().schema.target;
    let query_truth = raw_queries.as_ref().and_then(|r| r.column_index(target).map(|j| (r, j)));
    let mut p_all = Vec::with_capacity(n);
    let mut t_all = Vec::with_capacity(n);
    for i in 0..n {
        let p = pred_raw[i]
            .take()
            .ok_or_else(|| CliError::Input(format!("no prediction for query row {i}")))?;
        let t = match (truth_raw[i].take(), query_truth) {
            (Some(t), _) => t,
            (None, Some((r, j))) => r.rows[i][j].trim().to_string(),
            (None, None) => return Err(CliError::Input(format!("no ground truth for query row {i}"))),
        };
        p_all.push(p);
        t_all.push(t);
    }

    let (predicted, truths) = match &model.dataset().targets {
        Targets::Classes { labels, .. } => {
            let mut labels = labels.clone();
            let p = class_targets(&mut labels, &p_all);
            let t = class_targets(&mut labels, &t_all);
            (
                Targets::Classes {
                    ids: p,
                    labels: labels.clone(),
                },
                Targets::Classes { ids: t, labels },
            )
        }
        Targets::Values(_) => (
            Targets::Values(value_targets("prediction", &p_all)?),
            Targets::Values(value_targets("truth", &t_all)?),
        ),
    };
    let points = Points::new(rows.concat(), model.dim())?;
    let ev = eval::evaluate_predictions(&model, &points, &predicted, &truths)?;
    let source = json!({ "model": model_path, "queries": queries, "predictions": predictions });
    write_evaluation(s, &ev, out, source)
}
