use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::EvalError;

/// A metric over independent runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub metric: String,
    pub values: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation; absent with fewer than two runs.
    pub std: Option<f64>,
}

impl EvalResult {
    pub fn from_values(metric: &str, values: Vec<f64>) -> Result<Self, EvalError> {
        if values.is_empty() {
            return Err(EvalError::InvalidInput("no values".into()));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.len() >= 2)
            .then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
        Ok(Self {
            metric: metric.into(),
            values,
            mean,
            std,
        })
    }
}

/// Runs `run` once per seed; values are kept in seed order.
pub fn multi_seed<F>(metric: &str, seeds: &[u64], run: F) -> Result<EvalResult, EvalError>
where
    F: Fn(u64) -> Result<f64, EvalError> + Sync,
{
    let values = seeds.par_iter().map(|&s| run(s)).collect::<Result<Vec<_>, _>>()?;
    EvalResult::from_values(metric, values)
}

/// CSV with columns `task,metric,mean,std,values`; values are `;`-separated.
pub fn write_results_csv<W: Write>(out: W, rows: &[(String, EvalResult)]) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["task", "metric", "mean", "std", "values"])?;
    for (task, r) in rows {
        let values = r.values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(";");
        let std = r.std.map(|s| s.to_string()).unwrap_or_default();
        w.write_record([task.as_str(), &r.metric, &r.mean.to_string(), &std, &values])?;
    }
    w.flush()?;
    Ok(())
}
