//! Offline datasets of joint actions and their sample statistics.

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::rng;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("invalid dataset spec: {0}")]
    InvalidSpec(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("max power must be at least 2, got {0}")]
    PowerTooSmall(usize),
    #[error("weights must be non-negative, finite, and sum to a positive value")]
    InvalidWeights,
    #[error("malformed dataset csv: {0}")]
    Csv(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<csv::Error> for DatasetError {
    fn from(e: csv::Error) -> Self {
        DatasetError::Csv(e.to_string())
    }
}

/// One stored joint action `(a_x, a_y)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointActionSample {
    pub id: usize,
    pub a_x: f64,
    pub a_y: f64,
}

impl JointActionSample {
    pub fn new(id: usize, a_x: f64, a_y: f64) -> Self {
        Self { id, a_x, a_y }
    }
}

/// Means, population variances and raw power moments of each agent's actions.
///
/// `moments_x[p]` is `E[a_x^p]` for `p = 0..=P`.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetStats {
    pub mean_x: f64,
    pub mean_y: f64,
    pub var_x: f64,
    pub var_y: f64,
    pub moments_x: Vec<f64>,
    pub moments_y: Vec<f64>,
}

impl DatasetStats {
    pub fn max_power(&self) -> usize {
        self.moments_x.len().min(self.moments_y.len()) - 1
    }

    /// Stats of a distribution with given means and variances, with moments
    /// only up to the second power. Handy for closed-form analysis.
    pub fn from_mean_var(mean_x: f64, mean_y: f64, var_x: f64, var_y: f64) -> Self {
        Self {
            mean_x,
            mean_y,
            var_x,
            var_y,
            moments_x: vec![1.0, mean_x, var_x + mean_x * mean_x],
            moments_y: vec![1.0, mean_y, var_y + mean_y * mean_y],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DatasetKind {
    /// Independent uniform draws in `[low, high)` per agent.
    UniformBox { x: (f64, f64), y: (f64, f64) },
    /// Independent normal draws per agent.
    GaussianCentered { center: (f64, f64), sigma: (f64, f64) },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    pub size: usize,
    pub seed: u64,
}

impl DatasetSpec {
    pub fn uniform(low: f64, high: f64, size: usize, seed: u64) -> Self {
        Self {
            kind: DatasetKind::UniformBox {
                x: (low, high),
                y: (low, high),
            },
            size,
            seed,
        }
    }

    pub fn gaussian(center: (f64, f64), sigma: f64, size: usize, seed: u64) -> Self {
        Self {
            kind: DatasetKind::GaussianCentered {
                center,
                sigma: (sigma, sigma),
            },
            size,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.size == 0 {
            return Err(DatasetError::InvalidSpec("size must be at least 1".into()));
        }
        match self.kind {
            DatasetKind::UniformBox { x, y } => {
                for (name, (lo, hi)) in [("x", x), ("y", y)] {
                    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                        return Err(DatasetError::InvalidSpec(format!(
                            "uniform {name} range needs finite low < high, got ({lo}, {hi})"
                        )));
                    }
                }
            }
            DatasetKind::GaussianCentered { center, sigma } => {
                if !(center.0.is_finite() && center.1.is_finite()) {
                    return Err(DatasetError::InvalidSpec("center must be finite".into()));
                }
                for (name, s) in [("x", sigma.0), ("y", sigma.1)] {
                    if !(s.is_finite() && s >= 0.0) {
                        return Err(DatasetError::InvalidSpec(format!(
                            "sigma {name} must be finite and >= 0, got {s}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Draws a dataset. Output depends only on the spec (including its seed).
pub fn generate(spec: &DatasetSpec) -> Result<Vec<JointActionSample>, DatasetError> {
    spec.validate()?;
    let mut rng = rng::stream(spec.seed, rng::STREAM_DATASET);
    let samples = match spec.kind {
        DatasetKind::UniformBox { x, y } => (0..spec.size)
            .map(|id| {
                let a_x = rng.random_range(x.0..x.1);
                let a_y = rng.random_range(y.0..y.1);
                JointActionSample::new(id, a_x, a_y)
            })
            .collect(),
        DatasetKind::GaussianCentered { center, sigma } => {
            let nx = normal_or_point(center.0, sigma.0)?;
            let ny = normal_or_point(center.1, sigma.1)?;
            (0..spec.size)
                .map(|id| {
                    let a_x = nx.map_or(center.0, |d| d.sample(&mut rng));
                    let a_y = ny.map_or(center.1, |d| d.sample(&mut rng));
                    JointActionSample::new(id, a_x, a_y)
                })
                .collect()
        }
    };
    Ok(samples)
}

fn normal_or_point(mean: f64, sigma: f64) -> Result<Option<Normal<f64>>, DatasetError> {
    if sigma == 0.0 {
        return Ok(None);
    }
    Normal::new(mean, sigma)
        .map(Some)
        .map_err(|e| DatasetError::InvalidSpec(e.to_string()))
}

/// Population-convention statistics with raw moments up to `max_power`.
///
/// Each agent's values are sorted before summation, so the result is bitwise
/// independent of sample order.
pub fn compute_stats(
    samples: &[JointActionSample],
    max_power: usize,
) -> Result<DatasetStats, DatasetError> {
    if samples.is_empty() {
        return Err(DatasetError::EmptyDataset);
    }
    if max_power < 2 {
        return Err(DatasetError::PowerTooSmall(max_power));
    }
    let mut xs: Vec<f64> = samples.iter().map(|s| s.a_x).collect();
    let mut ys: Vec<f64> = samples.iter().map(|s| s.a_y).collect();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let (moments_x, var_x) = agent_moments(&xs, max_power);
    let (moments_y, var_y) = agent_moments(&ys, max_power);
    Ok(DatasetStats {
        mean_x: moments_x[1],
        mean_y: moments_y[1],
        var_x,
        var_y,
        moments_x,
        moments_y,
    })
}

fn agent_moments(values: &[f64], max_power: usize) -> (Vec<f64>, f64) {
    let n = values.len() as f64;
    let mut sums = vec![0.0; max_power + 1];
    for &v in values {
        let mut p = 1.0;
        for s in sums.iter_mut() {
            *s += p;
            p *= v;
        }
    }
    let mut moments: Vec<f64> = sums.into_iter().map(|s| s / n).collect();
    moments[0] = 1.0;
    let mean = moments[1];
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (moments, var)
}

/// Statistics of the distribution that picks sample `k` with probability
/// `weights[k] / sum(weights)`.
pub fn compute_weighted_stats(
    samples: &[JointActionSample],
    weights: &[f64],
    max_power: usize,
) -> Result<DatasetStats, DatasetError> {
    if samples.is_empty() {
        return Err(DatasetError::EmptyDataset);
    }
    if max_power < 2 {
        return Err(DatasetError::PowerTooSmall(max_power));
    }
    if weights.len() != samples.len() || weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(DatasetError::InvalidWeights);
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(DatasetError::InvalidWeights);
    }
    let mut mx = vec![0.0; max_power + 1];
    let mut my = vec![0.0; max_power + 1];
    for (s, &w) in samples.iter().zip(weights) {
        let (mut px, mut py) = (w, w);
        for p in 0..=max_power {
            mx[p] += px;
            my[p] += py;
            px *= s.a_x;
            py *= s.a_y;
        }
    }
    mx.iter_mut().chain(my.iter_mut()).for_each(|m| *m /= total);
    mx[0] = 1.0;
    my[0] = 1.0;
    let var_x = (mx[2] - mx[1] * mx[1]).max(0.0);
    let var_y = (my[2] - my[1] * my[1]).max(0.0);
    Ok(DatasetStats {
        mean_x: mx[1],
        mean_y: my[1],
        var_x,
        var_y,
        moments_x: mx,
        moments_y: my,
    })
}

pub const DATASET_CSV_HEADER: &str = "id,a_x,a_y";

/// Writes `id,a_x,a_y` rows.
pub fn write_csv<W: Write>(samples: &[JointActionSample], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{DATASET_CSV_HEADER}")?;
    for s in samples {
        writeln!(out, "{},{},{}", s.id, s.a_x, s.a_y)?;
    }
    out.flush()
}

/// Reads a dataset written by [`write_csv`] or produced externally with the same header.
pub fn read_csv<R: Read>(input: R) -> Result<Vec<JointActionSample>, DatasetError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    if header != ["id", "a_x", "a_y"] {
        return Err(DatasetError::Csv(format!(
            "expected header `{DATASET_CSV_HEADER}`, got `{}`",
            header.join(",")
        )));
    }
    let mut samples = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let field = |k: usize| -> Result<&str, DatasetError> {
            record
                .get(k)
                .ok_or_else(|| DatasetError::Csv(format!("row {}: missing column {k}", line + 1)))
        };
        let bad = |what: &str| DatasetError::Csv(format!("row {}: bad {what}", line + 1));
        let id: usize = field(0)?.parse().map_err(|_| bad("id"))?;
        let a_x: f64 = field(1)?.parse().map_err(|_| bad("a_x"))?;
        let a_y: f64 = field(2)?.parse().map_err(|_| bad("a_y"))?;
        if !(a_x.is_finite() && a_y.is_finite()) {
            return Err(bad("non-finite action"));
        }
        samples.push(JointActionSample::new(id, a_x, a_y));
    }
    Ok(samples)
}
