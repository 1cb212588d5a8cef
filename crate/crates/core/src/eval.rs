//! Evaluation: per-step averaged-absolute error norms, the root-mean
//! sum-of-squared-errors aggregate, per-step error distributions with
//! box-plot statistics, model comparison, and the practical-mode cascade
//! that chains a body-rate predictor into a velocity predictor.

use crate::data::SampleWindow;
use crate::error::{Error, Result};
use crate::init::PairModel;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

/// Conversion factor from radians to degrees.
pub const RAD_TO_DEG: f64 = 180.0 / std::f64::consts::PI;

// ---------------------------------------------------------------------------
// Error norms
// ---------------------------------------------------------------------------

/// Error norm for a three-channel signal group (velocity, body-rate, or
/// Euler-rate error): the absolute values averaged over the three
/// perpendicular components, `(|e1| + |e2| + |e3|) / 3`.
pub fn step_error_norm(e: &[f64]) -> Result<f64> {
    if e.len() != 3 {
        return Err(Error::Dim {
            op: "step_error_norm",
            expected: "a 3-component error".into(),
            got: format!("{} components", e.len()),
        });
    }
    Ok(row_mean_abs(e))
}

/// Mean absolute value of an error row of any width; coincides with
/// [`step_error_norm`] on three-channel rows.
pub fn row_mean_abs(e: &[f64]) -> f64 {
    if e.is_empty() {
        return 0.0;
    }
    e.iter().map(|v| v.abs()).sum::<f64>() / e.len() as f64
}

/// Elementwise prediction errors `target - pred`, row by row.
pub fn error_rows(pred: &[Vec<f64>], target: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    if pred.len() != target.len() {
        return Err(Error::Dim {
            op: "error_rows",
            expected: format!("{} rows", target.len()),
            got: format!("{}", pred.len()),
        });
    }
    pred.iter()
        .zip(target)
        .map(|(p, y)| {
            if p.len() != y.len() {
                return Err(Error::Dim {
                    op: "error_rows",
                    expected: format!("rows of width {}", y.len()),
                    got: format!("{}", p.len()),
                });
            }
            Ok(p.iter().zip(y).map(|(a, b)| b - a).collect())
        })
        .collect()
}

/// Root Mean Sum of Squared Errors over a test set, computed exactly as the
/// display is written:
///
/// `sqrt( (1/(T_pred * n)) * sum_i sum_{k=tau+1}^{T_pred} e_i(k)^T e_i(k) )`
///
/// `errors[i]` holds window `i`'s prediction-phase error rows, i.e. the
/// terms for `k = tau+1 .. T_pred`, so `T_pred = tau + errors[i].len()`.
/// Note the divisor uses the final absolute step index `T_pred`, not the
/// number of summed terms — for `tau > 0` the two differ.
pub fn rmsse(errors: &[Vec<Vec<f64>>], tau: usize) -> Result<f64> {
    if errors.is_empty() || errors[0].is_empty() {
        return Err(Error::Config(
            "the aggregate error measure needs a nonempty test set with at least one prediction step"
                .into(),
        ));
    }
    let horizon = errors[0].len();
    let mut total = 0.0;
    for rows in errors {
        if rows.len() != horizon {
            return Err(Error::Dim {
                op: "rmsse",
                expected: format!("{horizon} prediction steps per window"),
                got: format!("{}", rows.len()),
            });
        }
        for e in rows {
            total += e.iter().map(|v| v * v).sum::<f64>();
        }
    }
    let t_pred = (tau + horizon) as f64;
    Ok((total / (t_pred * errors.len() as f64)).sqrt())
}

// ---------------------------------------------------------------------------
// Distributions
// ---------------------------------------------------------------------------

/// Quantile of an ascending-sorted slice by linear interpolation between
/// the order statistics at fractional position `q * (n - 1)`.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty sample");
    assert!((0.0..=1.0).contains(&q), "quantile fraction out of range");
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let w = pos - lo as f64;
        sorted[lo] * (1.0 - w) + sorted[hi] * w
    }
}

/// Box-plot summary of the error norms observed at one prediction step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    /// 1-based prediction step.
    pub step: usize,
    pub mean: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    /// Most extreme data points within 1.5 interquartile ranges of the box.
    pub whisker_low: f64,
    pub whisker_high: f64,
    /// Data points beyond the whiskers.
    pub outliers: usize,
}

/// Summarize the error norms of one prediction step across all test
/// windows: mean, quartiles by linear interpolation, and 1.5-IQR whiskers
/// clamped to the most extreme data points inside the fences.
pub fn summarize_step(step: usize, values: &[f64]) -> StepStats {
    assert!(!values.is_empty(), "step summary of an empty sample");
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite error norms"));
    let mean = sorted.iter().sum::<f64>() / sorted.len() as f64;
    let q25 = quantile_sorted(&sorted, 0.25);
    let median = quantile_sorted(&sorted, 0.50);
    let q75 = quantile_sorted(&sorted, 0.75);
    let iqr = q75 - q25;
    let lo_fence = q25 - 1.5 * iqr;
    let hi_fence = q75 + 1.5 * iqr;
    let whisker_low = sorted
        .iter()
        .copied()
        .find(|v| *v >= lo_fence)
        .unwrap_or(sorted[0]);
    let whisker_high = sorted
        .iter()
        .rev()
        .copied()
        .find(|v| *v <= hi_fence)
        .unwrap_or(sorted[sorted.len() - 1]);
    let outliers = sorted
        .iter()
        .filter(|v| **v < lo_fence || **v > hi_fence)
        .count();
    StepStats {
        step,
        mean,
        q25,
        median,
        q75,
        whisker_low,
        whisker_high,
        outliers,
    }
}

/// Per-step error-norm distributions plus the aggregate measure for one
/// model on one test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionReport {
    pub model_id: String,
    pub dataset_id: String,
    /// Initialization history length the windows were cut with.
    pub tau: usize,
    /// Number of prediction steps (length of `steps`).
    pub horizon: usize,
    pub rmsse: f64,
    /// Empirical 99th percentile of the absolute component errors.
    pub p99_abs: f64,
    pub steps: Vec<StepStats>,
}

impl PredictionReport {
    /// CSV body, one row per prediction step.
    pub fn csv_body(&self) -> String {
        let mut out =
            String::from("step,mean,q25,median,q75,whisker_low,whisker_high,outliers\n");
        for s in &self.steps {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                s.step, s.mean, s.q25, s.median, s.q75, s.whisker_low, s.whisker_high, s.outliers
            )
            .expect("string write");
        }
        out
    }

    /// Aggregate summary as TOML.
    pub fn summary_toml(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Summary<'a> {
            model_id: &'a str,
            dataset_id: &'a str,
            tau: usize,
            horizon: usize,
            rmsse: f64,
            p99_abs: f64,
        }
        toml::to_string_pretty(&Summary {
            model_id: &self.model_id,
            dataset_id: &self.dataset_id,
            tau: self.tau,
            horizon: self.horizon,
            rmsse: self.rmsse,
            p99_abs: self.p99_abs,
        })
        .map_err(|e| Error::Data(format!("report summary serialization: {e}")))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.csv_body())?;
        Ok(())
    }

    pub fn write_summary(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.summary_toml()?)?;
        Ok(())
    }
}

/// Build the per-step distribution report from per-window error rows
/// (`errors[i][k]` = window `i`, prediction step `k+1`, in physical units).
/// Each step's error norms across windows are summarized with box-plot
/// statistics; the aggregate measure uses the same rows.
pub fn distributions(
    errors: &[Vec<Vec<f64>>],
    tau: usize,
    model_id: &str,
    dataset_id: &str,
) -> Result<PredictionReport> {
    let agg = rmsse(errors, tau)?;
    let horizon = errors[0].len();
    let mut steps = Vec::with_capacity(horizon);
    for k in 0..horizon {
        let norms: Vec<f64> = errors.iter().map(|rows| row_mean_abs(&rows[k])).collect();
        steps.push(summarize_step(k + 1, &norms));
    }
    let mut abs_all: Vec<f64> = errors
        .iter()
        .flat_map(|rows| rows.iter())
        .flat_map(|row| row.iter().map(|v| v.abs()))
        .collect();
    abs_all.sort_by(|a, b| a.partial_cmp(b).expect("finite errors"));
    let p99_abs = quantile_sorted(&abs_all, 0.99);
    Ok(PredictionReport {
        model_id: model_id.into(),
        dataset_id: dataset_id.into(),
        tau,
        horizon,
        rmsse: agg,
        p99_abs,
        steps,
    })
}

// ---------------------------------------------------------------------------
// Comparison
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Winner {
    A,
    B,
    Tie,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepDelta {
    pub step: usize,
    pub a_mean: f64,
    pub b_mean: f64,
    /// `a_mean - b_mean`; negative means model A is better at this step.
    pub delta: f64,
    pub winner: Winner,
}

/// Side-by-side comparison of two reports over the same test setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub model_a: String,
    pub model_b: String,
    pub per_step: Vec<StepDelta>,
    /// `a.rmsse / b.rmsse`; below 1 means model A is better in aggregate.
    pub rmsse_ratio: f64,
}

impl Comparison {
    pub fn csv_body(&self) -> String {
        let mut out = String::from("step,a_mean,b_mean,delta,winner\n");
        for d in &self.per_step {
            let w = match d.winner {
                Winner::A => "a",
                Winner::B => "b",
                Winner::Tie => "tie",
            };
            writeln!(out, "{},{},{},{},{}", d.step, d.a_mean, d.b_mean, d.delta, w)
                .expect("string write");
        }
        out
    }
}

/// Per-step mean-error deltas and the aggregate ratio between two reports.
/// The reports must cover the same horizon and dataset.
pub fn compare(a: &PredictionReport, b: &PredictionReport) -> Result<Comparison> {
    if a.horizon != b.horizon || a.steps.len() != b.steps.len() {
        return Err(Error::Dim {
            op: "compare",
            expected: format!("reports over the same horizon ({})", a.horizon),
            got: format!("{}", b.horizon),
        });
    }
    if a.dataset_id != b.dataset_id {
        return Err(Error::Config(format!(
            "comparing reports from different datasets: '{}' vs '{}'",
            a.dataset_id, b.dataset_id
        )));
    }
    let per_step = a
        .steps
        .iter()
        .zip(&b.steps)
        .map(|(sa, sb)| {
            let delta = sa.mean - sb.mean;
            let winner = if delta < 0.0 {
                Winner::A
            } else if delta > 0.0 {
                Winner::B
            } else {
                Winner::Tie
            };
            StepDelta {
                step: sa.step,
                a_mean: sa.mean,
                b_mean: sb.mean,
                delta,
                winner,
            }
        })
        .collect();
    Ok(Comparison {
        model_a: a.model_id.clone(),
        model_b: b.model_id.clone(),
        per_step,
        rmsse_ratio: a.rmsse / b.rmsse,
    })
}

// ---------------------------------------------------------------------------
// Practical-mode cascade
// ---------------------------------------------------------------------------

/// Replace columns `at .. at + replacement_width` of every row with the
/// corresponding replacement row. Rows where the replacement equals the
/// original slice come back bit-identical.
pub fn splice_columns(
    rows: &[Vec<f64>],
    at: usize,
    replacement: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>> {
    if rows.len() != replacement.len() {
        return Err(Error::Dim {
            op: "splice_columns",
            expected: format!("{} replacement rows", rows.len()),
            got: format!("{}", replacement.len()),
        });
    }
    rows.iter()
        .zip(replacement)
        .map(|(row, rep)| {
            if at + rep.len() > row.len() {
                return Err(Error::Dim {
                    op: "splice_columns",
                    expected: format!("columns {at}..{} inside width {}", at + rep.len(), row.len()),
                    got: "replacement beyond row end".into(),
                });
            }
            let mut out = row.clone();
            out[at..at + rep.len()].copy_from_slice(rep);
            Ok(out)
        })
        .collect()
}

/// Velocity prediction with externally supplied body-rate rows spliced into
/// the input columns `rate_at ..`: the single code path both the
/// teacher-forced evaluation (measured rates) and the practical-mode
/// cascade (predicted rates) run through, so equal rate rows give
/// bit-identical outputs.
pub fn predict_with_rates(
    velocity: &PairModel,
    theta_v: &[f64],
    window: &SampleWindow,
    rates: &[Vec<f64>],
    rate_at: usize,
) -> Result<Vec<Vec<f64>>> {
    let spliced = splice_columns(&window.pred_u, rate_at, rates)?;
    velocity.predict(theta_v, &window.init_segment(), &spliced)
}

/// Practical-mode cascade: roll the body-rate model over its window, then
/// feed its per-step predictions into the velocity model's body-rate input
/// columns. Both models are initialized from measured history; only the
/// prediction-phase rate inputs are substituted.
pub fn cascade_predict(
    bodyrate: &PairModel,
    theta_r: &[f64],
    rate_window: &SampleWindow,
    velocity: &PairModel,
    theta_v: &[f64],
    vel_window: &SampleWindow,
    rate_at: usize,
) -> Result<Vec<Vec<f64>>> {
    if rate_window.horizon() != vel_window.horizon() {
        return Err(Error::Dim {
            op: "cascade_predict",
            expected: format!("aligned horizons ({})", vel_window.horizon()),
            got: format!("{}", rate_window.horizon()),
        });
    }
    let rate_width = bodyrate.predictor().output_dim();
    if rate_at + rate_width > velocity.predictor().input_dim() {
        return Err(Error::Dim {
            op: "cascade_predict",
            expected: format!(
                "rate columns {rate_at}..{} inside the velocity input width {}",
                rate_at + rate_width,
                velocity.predictor().input_dim()
            ),
            got: "incompatible model interfaces".into(),
        });
    }
    let rate_preds = bodyrate.predict(theta_r, &rate_window.init_segment(), &rate_window.pred_u)?;
    predict_with_rates(velocity, theta_v, vel_window, &rate_preds, rate_at)
}
