//! Layered settings: command-line flags over a `key = value` file over
//! built-in defaults.

use std::path::Path;
use std::str::FromStr;

use clap::Args;
use distrust_core::{MetricId, Task};
use serde_json::{json, Value};

use crate::CliError;

/// Flags shared by every subcommand. Each mirrors a config-file key.
#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// key = value settings file; flags given here take precedence
    #[arg(long, global = true)]
    pub config: Option<std::path::PathBuf>,
    /// Target column name
    #[arg(long, global = true)]
    pub target: Option<String>,
    /// Force the task instead of inferring it from the target column
    #[arg(long, global = true)]
    pub task: Option<Task>,
    /// Column kinds, e.g. `color=categorical,age=ordinal`
    #[arg(long, global = true)]
    pub kinds: Option<String>,
    /// Keep ordinal columns unscaled
    #[arg(long, global = true)]
    pub no_normalize: bool,
    #[arg(long, global = true)]
    pub metric: Option<MetricId>,
    /// Neighborhood size
    #[arg(long, global = true)]
    pub k: Option<usize>,
    /// Expected outlier ratio
    #[arg(long, global = true)]
    pub c: Option<f64>,
    #[arg(long, global = true)]
    pub sigma: Option<f64>,
    /// Expected uncertainty ratio
    #[arg(long, global = true)]
    pub u: Option<f64>,
    #[arg(long, global = true)]
    pub sigma_u: Option<f64>,
    /// Use the neighborhood entropy itself as p_u for binary targets
    #[arg(long, global = true)]
    pub binary_entropy_direct: bool,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Target held-out RMSE of the surrogate search
    #[arg(long, global = true)]
    pub epsilon: Option<f64>,
    /// Fraction of surrogate samples drawn uniformly
    #[arg(long, global = true)]
    pub mix: Option<f64>,
    /// Candidate outlier ratios for `tune`, comma separated
    #[arg(long, global = true)]
    pub c_grid: Option<String>,
    /// Candidate neighborhood sizes for `tune`, comma separated
    #[arg(long, global = true)]
    pub k_grid: Option<String>,
}

/// One layer of optional values.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Layer {
    pub target: Option<String>,
    pub task: Option<Task>,
    pub kinds: Option<String>,
    pub normalize: Option<bool>,
    pub metric: Option<MetricId>,
    pub k: Option<usize>,
    pub c: Option<f64>,
    pub sigma: Option<f64>,
    pub u: Option<f64>,
    pub sigma_u: Option<f64>,
    pub binary_entropy_direct: Option<bool>,
    pub seed: Option<u64>,
    pub epsilon: Option<f64>,
    pub mix: Option<f64>,
    pub c_grid: Option<String>,
    pub k_grid: Option<String>,
}

impl Layer {
    fn from_flags(f: &Flags) -> Self {
        Layer {
            target: f.target.clone(),
            task: f.task,
            kinds: f.kinds.clone(),
            normalize: f.no_normalize.then_some(false),
            metric: f.metric,
            k: f.k,
            c: f.c,
            sigma: f.sigma,
            u: f.u,
            sigma_u: f.sigma_u,
            binary_entropy_direct: f.binary_entropy_direct.then_some(true),
            seed: f.seed,
            epsilon: f.epsilon,
            mix: f.mix,
            c_grid: f.c_grid.clone(),
            k_grid: f.k_grid.clone(),
        }
    }

    /// Parses `key = value` lines. Blank lines and `#` comments are skipped;
    /// `-` and `_` are interchangeable in keys.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut layer = Layer::default();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("config line {}: expected key = value", no + 1)))?;
            let key = key.trim().replace('-', "_");
            let value = value.trim();
            let bad = |what: &str| CliError::Config(format!("config line {}: invalid {what} `{value}`", no + 1));
            fn parse<T: FromStr>(v: &str) -> Option<T> {
                v.parse().ok()
            }
            match key.as_str() {
                "target" => layer.target = Some(value.to_string()),
                "task" => layer.task = Some(parse(value).ok_or_else(|| bad("task"))?),
                "kinds" => layer.kinds = Some(value.to_string()),
                "normalize" => layer.normalize = Some(parse(value).ok_or_else(|| bad("boolean"))?),
                "no_normalize" => {
                    layer.normalize = Some(!parse::<bool>(value).ok_or_else(|| bad("boolean"))?)
                }
                "metric" => layer.metric = Some(parse(value).ok_or_else(|| bad("metric"))?),
                "k" => layer.k = Some(parse(value).ok_or_else(|| bad("k"))?),
                "c" => layer.c = Some(parse(value).ok_or_else(|| bad("c"))?),
                "sigma" => layer.sigma = Some(parse(value).ok_or_else(|| bad("sigma"))?),
                "u" => layer.u = Some(parse(value).ok_or_else(|| bad("u"))?),
                "sigma_u" => layer.sigma_u = Some(parse(value).ok_or_else(|| bad("sigma_u"))?),
                "binary_entropy_direct" => {
                    layer.binary_entropy_direct = Some(parse(value).ok_or_else(|| bad("boolean"))?)
                }
                "seed" => layer.seed = Some(parse(value).ok_or_else(|| bad("seed"))?),
                "epsilon" => layer.epsilon = Some(parse(value).ok_or_else(|| bad("epsilon"))?),
                "mix" => layer.mix = Some(parse(value).ok_or_else(|| bad("mix"))?),
                "c_grid" => layer.c_grid = Some(value.to_string()),
                "k_grid" => layer.k_grid = Some(value.to_string()),
                other => {
                    return Err(CliError::Config(format!(
                        "config line {}: unknown key `{other}`",
                        no + 1
                    )))
                }
            }
        }
        Ok(layer)
    }

    /// Fills every unset field from `lower`.
    fn over(self, lower: Layer) -> Layer {
        Layer {
            target: self.target.or(lower.target),
            task: self.task.or(lower.task),
            kinds: self.kinds.or(lower.kinds),
            normalize: self.normalize.or(lower.normalize),
            metric: self.metric.or(lower.metric),
            k: self.k.or(lower.k),
            c: self.c.or(lower.c),
            sigma: self.sigma.or(lower.sigma),
            u: self.u.or(lower.u),
            sigma_u: self.sigma_u.or(lower.sigma_u),
            binary_entropy_direct: self.binary_entropy_direct.or(lower.binary_entropy_direct),
            seed: self.seed.or(lower.seed),
            epsilon: self.epsilon.or(lower.epsilon),
            mix: self.mix.or(lower.mix),
            c_grid: self.c_grid.or(lower.c_grid),
            k_grid: self.k_grid.or(lower.k_grid),
        }
    }
}

/// Effective settings after merging. `explicit` keeps what the user set so
/// commands can tell a default from a choice.
#[derive(Debug, Clone)]
pub struct Settings {
    pub explicit: Layer,
    pub target: Option<String>,
    pub task: Option<Task>,
    pub kinds: Option<String>,
    pub normalize: bool,
    pub metric: MetricId,
    pub k: usize,
    pub c: f64,
    pub sigma: f64,
    pub u: f64,
    pub sigma_u: f64,
    pub binary_entropy_direct: bool,
    pub seed: u64,
    pub epsilon: f64,
    pub mix: f64,
    pub c_grid: Vec<f64>,
    pub k_grid: Vec<usize>,
}

fn list<T: FromStr>(s: &str, what: &str) -> Result<Vec<T>, CliError> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse()
                .map_err(|_| CliError::Config(format!("invalid {what} entry `{}`", v.trim())))
        })
        .collect()
}

impl Settings {
    pub fn resolve(flags: &Flags) -> Result<Self, CliError> {
        let file = match &flags.config {
            Some(path) => read_config(path)?,
            None => Layer::default(),
        };
        let explicit = Layer::from_flags(flags).over(file);
        let l = explicit.clone();
        Ok(Settings {
            target: l.target,
            task: l.task,
            kinds: l.kinds,
            normalize: l.normalize.unwrap_or(true),
            metric: l.metric.unwrap_or(MetricId::Euclidean),
            k: l.k.unwrap_or(10),
            c: l.c.unwrap_or(0.1),
            sigma: l.sigma.unwrap_or(0.1),
            u: l.u.unwrap_or(0.1),
            sigma_u: l.sigma_u.unwrap_or(0.1),
            binary_entropy_direct: l.binary_entropy_direct.unwrap_or(false),
            seed: l.seed.unwrap_or(42),
            epsilon: l.epsilon.unwrap_or(1e-2),
            mix: l.mix.unwrap_or(0.5),
            c_grid: list(l.c_grid.as_deref().unwrap_or("0.05,0.1,0.2"), "c grid")?,
            k_grid: list(l.k_grid.as_deref().unwrap_or("5,10,20"), "k grid")?,
            explicit,
        })
    }

    pub fn require_target(&self) -> Result<&str, CliError> {
        self.target
            .as_deref()
            .ok_or_else(|| CliError::Config("a target column is required (--target or `target` in the config)".into()))
    }

    pub fn to_json(&self) -> Value {
        json!({
            "target": self.target,
            "task": self.task,
            "kinds": self.kinds,
            "normalize": self.normalize,
            "metric": self.metric,
            "k": self.k,
            "c": self.c,
            "sigma": self.sigma,
            "u": self.u,
            "sigma_u": self.sigma_u,
            "binary_entropy_direct": self.binary_entropy_direct,
            "seed": self.seed,
            "epsilon": if self.epsilon.is_finite() { json!(self.epsilon) } else { json!(self.epsilon.to_string()) },
            "mix": self.mix,
            "c_grid": self.c_grid,
            "k_grid": self.k_grid,
        })
    }
}

fn read_config(path: &Path) -> Result<Layer, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    Layer::parse(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_keys_and_comments() {
        let l = Layer::parse("# defaults\nk = 5\nsigma-u=0.2\nmetric = chebyshev\n\nbinary_entropy_direct = true\n").unwrap();
        assert_eq!(l.k, Some(5));
        assert_eq!(l.sigma_u, Some(0.2));
        assert_eq!(l.metric, Some(MetricId::Chebyshev));
        assert_eq!(l.binary_entropy_direct, Some(true));
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(matches!(Layer::parse("kk = 3"), Err(CliError::Config(_))));
        assert!(matches!(Layer::parse("k = three"), Err(CliError::Config(_))));
        assert!(matches!(Layer::parse("just text"), Err(CliError::Config(_))));
    }

    #[test]
    fn flags_override_file_override_defaults() {
        let file = Layer::parse("k = 5\nc = 0.2\n").unwrap();
        let flags = Layer {
            k: Some(7),
            ..Layer::default()
        };
        let merged = flags.over(file);
        assert_eq!(merged.k, Some(7));
        assert_eq!(merged.c, Some(0.2));
        assert_eq!(merged.sigma, None);
    }
}
