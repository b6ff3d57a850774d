//! Synthetic wind farm data for demos and tests.
//!
//! Wind speed at 100 m follows a mean-reverting AR(1) process, 10 m speed is
//! derived from it through a power-law shear with its own jitter, and the
//! direction drifts as a random walk. Power is a cubic power curve of both
//! speeds, modulated by direction, plus Gaussian noise, clipped to
//! `[0, capacity]`.

use chrono::{Duration, NaiveDate};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{Column, TimeSeriesFrame};

pub const NWP_COLUMNS: [&str; 4] = ["WS10", "WD10", "WS100", "WD100"];
pub const TARGET_COLUMN: &str = "power";
pub const TIMESTAMP_COLUMN: &str = "timestamp";

#[derive(Debug, Clone, Copy)]
pub struct SynthConfig {
    pub rows: usize,
    pub seed: u64,
    pub capacity: f64,
    pub noise_sd: f64,
    pub step_minutes: i64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            rows: 3000,
            seed: 2024,
            capacity: 100.0,
            noise_sd: 0.03,
            step_minutes: 15,
        }
    }
}

/// Normalized power curve: cut-in 3 m/s, rated 12 m/s, cut-out 25 m/s.
pub fn power_curve(ws: f64) -> f64 {
    if !(3.0..25.0).contains(&ws) {
        0.0
    } else if ws >= 12.0 {
        1.0
    } else {
        ((ws - 3.0) / 9.0).powi(3)
    }
}

/// Noise-free share of capacity produced for the given conditions.
pub fn ideal_output(ws10: f64, ws100: f64, wd100: f64) -> f64 {
    let base = 0.8 * power_curve(ws100) + 0.2 * power_curve(1.25 * ws10);
    let directional = 0.9 + 0.1 * (wd100 - 225.0).to_radians().cos();
    (base * directional).clamp(0.0, 1.0)
}

pub fn generate(cfg: &SynthConfig) -> TimeSeriesFrame {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    let start = NaiveDate::from_ymd_opt(2024, 1, 1)
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .expect("valid date");

    let (mean_ws, phi, sd_ws): (f64, f64, f64) = (8.5, 0.97, 0.75);
    let mut ws100: f64 = mean_ws;
    let mut wd100: f64 = 225.0;
    let mut cols: [Vec<f64>; 5] = Default::default();
    let mut timestamps = Vec::with_capacity(cfg.rows);
    for i in 0..cfg.rows {
        ws100 = (mean_ws + phi * (ws100 - mean_ws) + sd_ws * std.sample(&mut rng)).clamp(0.0, 30.0);
        wd100 = (wd100 + 6.0 * std.sample(&mut rng)).rem_euclid(360.0);
        let ws10 = (ws100 * 0.1_f64.powf(0.14) + 0.4 * std.sample(&mut rng)).max(0.0);
        let wd10 = (wd100 - 8.0 + 4.0 * std.sample(&mut rng)).rem_euclid(360.0);
        let share = ideal_output(ws10, ws100, wd100) + cfg.noise_sd * std.sample(&mut rng);
        let power = share.clamp(0.0, 1.0) * cfg.capacity;
        timestamps.push(start + Duration::minutes(cfg.step_minutes * i as i64));
        for (c, v) in cols.iter_mut().zip([power, ws10, wd10, ws100, wd100]) {
            c.push(v);
        }
    }
    let [power, ws10, wd10, ws100, wd100] = cols;
    let features = NWP_COLUMNS
        .iter()
        .zip([ws10, wd10, ws100, wd100])
        .map(|(name, values)| Column {
            name: name.to_string(),
            values,
        })
        .collect();
    TimeSeriesFrame::new(
        timestamps,
        Column {
            name: TARGET_COLUMN.to_string(),
            values: power,
        },
        features,
    )
    .expect("generator emits a valid frame")
}
