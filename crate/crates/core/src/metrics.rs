//! Forecast evaluation.
//!
//! Deterministic scores assume targets already normalized to the `[0, 1]`
//! capacity scale, so NMAE and NRMSE are plain MAE and RMSE there.
//!
//! Probabilistic scores:
//!
//! - QS: mean pinball loss over all samples and levels of the grid.
//! - CRPS: `2 × QS`, the quantile-decomposition approximation of the
//!   continuous ranked probability score.
//! - PICP: share of observations inside `[lower, upper]` (inclusive).
//! - ACE: `PICP − PINC`.
//! - PINAW: mean interval width (targets on `[0, 1]`, so the range is 1).
//! - Winkler: width plus `(2/λ)·(l − y)` below or `(2/λ)·(y − u)` above the
//!   interval, `λ = 1 − PINC`, averaged over samples.
//!
//! An interval at nominal confidence `p` uses the quantile levels
//! `(1 − p)/2` and `(1 + p)/2`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::QuantileForecast;

fn check_pair(y: &[f64], yhat: &[f64]) -> Result<()> {
    if y.is_empty() {
        return Err(Error::EmptyData("no observations".into()));
    }
    if y.len() != yhat.len() {
        return Err(Error::Shape(format!(
            "{} observations for {} forecasts",
            y.len(),
            yhat.len()
        )));
    }
    Ok(())
}

pub fn r2(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_pair(y, yhat)?;
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
    if ss_tot == 0.0 {
        return Err(Error::UndefinedDenominator(
            "R² is undefined for a constant target".into(),
        ));
    }
    let ss_res: f64 = y.iter().zip(yhat).map(|(a, b)| (b - a) * (b - a)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

pub fn nmae(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_pair(y, yhat)?;
    Ok(y.iter().zip(yhat).map(|(a, b)| (b - a).abs()).sum::<f64>() / y.len() as f64)
}

pub fn nrmse(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_pair(y, yhat)?;
    let mse = y
        .iter()
        .zip(yhat)
        .map(|(a, b)| (b - a) * (b - a))
        .sum::<f64>()
        / y.len() as f64;
    Ok(mse.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeterministicReport {
    pub r2: f64,
    pub nmae: f64,
    pub nrmse: f64,
    pub n: usize,
}

pub fn deterministic_report(y: &[f64], yhat: &[f64]) -> Result<DeterministicReport> {
    Ok(DeterministicReport {
        r2: r2(y, yhat)?,
        nmae: nmae(y, yhat)?,
        nrmse: nrmse(y, yhat)?,
        n: y.len(),
    })
}

#[inline]
fn pinball(q: f64, y: f64, yhat: f64) -> f64 {
    if y >= yhat {
        q * (y - yhat)
    } else {
        (1.0 - q) * (yhat - y)
    }
}

pub fn quantile_score(forecast: &QuantileForecast, y: &[f64]) -> Result<f64> {
    if forecast.n_samples() != y.len() {
        return Err(Error::Shape(format!(
            "{} forecast rows for {} observations",
            forecast.n_samples(),
            y.len()
        )));
    }
    if y.is_empty() {
        return Err(Error::EmptyData("no observations".into()));
    }
    let levels = forecast.levels.as_slice();
    let total: f64 = y
        .iter()
        .enumerate()
        .map(|(r, &obs)| {
            forecast
                .values
                .row(r)
                .iter()
                .zip(levels)
                .map(|(&v, &q)| pinball(q, obs, v))
                .sum::<f64>()
        })
        .sum();
    Ok(total / (y.len() * levels.len()) as f64)
}

pub fn crps_from_quantiles(forecast: &QuantileForecast, y: &[f64]) -> Result<f64> {
    if forecast.levels.len() < 2 {
        return Err(Error::InsufficientGrid(
            "CRPS needs at least two quantile levels".into(),
        ));
    }
    Ok(2.0 * quantile_score(forecast, y)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalForecast {
    pub pinc: f64,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl IntervalForecast {
    pub fn new(pinc: f64, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if !(pinc > 0.0 && pinc < 1.0) {
            return Err(Error::Config(format!("PINC {pinc} is outside (0, 1)")));
        }
        if lower.len() != upper.len() {
            return Err(Error::Shape(
                "lower and upper bounds differ in length".into(),
            ));
        }
        if let Some(i) = lower.iter().zip(&upper).position(|(l, u)| u < l) {
            return Err(Error::Integrity(format!(
                "upper bound below lower bound at sample {i}"
            )));
        }
        Ok(Self { pinc, lower, upper })
    }

    /// Central interval at confidence `pinc` from a quantile forecast.
    pub fn from_quantiles(forecast: &QuantileForecast, pinc: f64) -> Result<Self> {
        let lo_q = (1.0 - pinc) / 2.0;
        let hi_q = (1.0 + pinc) / 2.0;
        let (lower, upper) = match (forecast.at_level(lo_q), forecast.at_level(hi_q)) {
            (Some(l), Some(u)) => (l, u),
            _ => {
                return Err(Error::InsufficientGrid(format!(
                    "levels {lo_q} and {hi_q} are needed for a {}% interval",
                    pinc * 100.0
                )))
            }
        };
        Self::new(pinc, lower, upper)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalMetrics {
    pub picp: f64,
    pub ace: f64,
    pub pinaw: f64,
    pub winkler: f64,
}

pub fn interval_metrics(intervals: &IntervalForecast, y: &[f64]) -> Result<IntervalMetrics> {
    let IntervalForecast { pinc, lower, upper } = intervals;
    check_pair(y, lower)?;
    if let Some(i) = lower.iter().zip(upper).position(|(l, u)| u < l) {
        return Err(Error::Integrity(format!(
            "upper bound below lower bound at sample {i}"
        )));
    }
    let n = y.len() as f64;
    let lambda = 1.0 - pinc;
    let mut covered = 0usize;
    let mut width = 0.0;
    let mut winkler = 0.0;
    for ((&obs, &l), &u) in y.iter().zip(lower).zip(upper) {
        let w = u - l;
        width += w;
        let score = if obs < l {
            w + 2.0 / lambda * (l - obs)
        } else if obs > u {
            w + 2.0 / lambda * (obs - u)
        } else {
            covered += 1;
            w
        };
        winkler += score;
    }
    let picp = covered as f64 / n;
    Ok(IntervalMetrics {
        picp,
        ace: picp - pinc,
        pinaw: width / n,
        winkler: winkler / n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilisticReport {
    pub qs: f64,
    pub crps: f64,
    /// Interval scores keyed by PINC in percent, e.g. `"90"`.
    pub intervals: BTreeMap<String, IntervalMetrics>,
}

pub fn pinc_key(pinc: f64) -> String {
    format!("{}", (pinc * 100.0).round() as i64)
}

pub fn probabilistic_report(
    forecast: &QuantileForecast,
    y: &[f64],
    pincs: &[f64],
) -> Result<ProbabilisticReport> {
    let mut intervals = BTreeMap::new();
    for &p in pincs {
        let iv = IntervalForecast::from_quantiles(forecast, p)?;
        intervals.insert(pinc_key(p), interval_metrics(&iv, y)?);
    }
    Ok(ProbabilisticReport {
        qs: quantile_score(forecast, y)?,
        crps: crps_from_quantiles(forecast, y)?,
        intervals,
    })
}
