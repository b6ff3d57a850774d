//! Model-agnostic explanations over a prediction callback.
//!
//! [`permutation_importance`] measures, per feature, how much the mean squared
//! error grows once that feature's column is shuffled. [`fit_lime`] fits a
//! weighted ridge regression to the model's answers on Gaussian perturbations
//! around a single instance and reports each feature's contribution
//! `coefficient × value` at that instance.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Seed of an independent stream for task `(a, b)` under `base`, so that
/// per-feature/per-repeat work does not depend on evaluation order.
pub fn derive_seed(base: u64, a: u64, b: u64) -> u64 {
    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    splitmix(base ^ splitmix(a.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ splitmix(b)))
}

fn mse(y: &[f64], yhat: &[f64]) -> f64 {
    y.iter()
        .zip(yhat)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / y.len() as f64
}

fn call<F>(predict: &F, x: &Matrix) -> Result<Vec<f64>>
where
    F: Fn(&Matrix) -> Result<Vec<f64>>,
{
    let out = predict(x)?;
    if out.len() != x.rows() {
        return Err(Error::Shape(format!(
            "predictor returned {} values for {} rows",
            out.len(),
            x.rows()
        )));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub name: String,
    /// Error after shuffling this feature, one entry per repeat.
    pub e_per: Vec<f64>,
    pub e_per_mean: f64,
    /// `e_per_mean − e_ori`.
    pub fi: f64,
    /// Sample standard deviation of `e_per − e_ori` across repeats.
    pub fi_std: f64,
    /// Share of the total positive importance, in `[0, 1]`.
    pub share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportanceReport {
    pub e_ori: f64,
    pub features: Vec<FeatureImportance>,
    pub repeats: usize,
    pub seed: u64,
}

impl FeatureImportanceReport {
    pub fn fi(&self) -> Vec<f64> {
        self.features.iter().map(|f| f.fi).collect()
    }
}

/// Permutation feature importance with MSE as the error function.
pub fn permutation_importance<F>(
    predict: &F,
    x: &Matrix,
    y: &[f64],
    feature_names: &[String],
    repeats: usize,
    seed: u64,
) -> Result<FeatureImportanceReport>
where
    F: Fn(&Matrix) -> Result<Vec<f64>>,
{
    if x.rows() != y.len() {
        return Err(Error::Shape(format!(
            "{} feature rows for {} targets",
            x.rows(),
            y.len()
        )));
    }
    if feature_names.len() != x.cols() {
        return Err(Error::Shape(format!(
            "{} feature names for {} columns",
            feature_names.len(),
            x.cols()
        )));
    }
    if y.len() < 2 {
        return Err(Error::InsufficientData(
            "permutation importance needs at least two rows".into(),
        ));
    }
    if repeats == 0 {
        return Err(Error::Config("repeats must be >= 1".into()));
    }
    let e_ori = mse(y, &call(predict, x)?);

    let mut features = Vec::with_capacity(x.cols());
    let mut shuffled = x.clone();
    for (i, name) in feature_names.iter().enumerate() {
        let original = x.column(i);
        let mut e_per = Vec::with_capacity(repeats);
        for r in 0..repeats {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64, r as u64));
            let mut col = original.clone();
            col.shuffle(&mut rng);
            shuffled.set_column(i, &col);
            e_per.push(mse(y, &call(predict, &shuffled)?));
        }
        shuffled.set_column(i, &original);

        // offset form is exact when every shuffle leaves the error unchanged
        let e_per_mean =
            e_per[0] + e_per.iter().map(|e| e - e_per[0]).sum::<f64>() / repeats as f64;
        let fi = e_per_mean - e_ori;
        let fi_std = if repeats > 1 {
            let ss: f64 = e_per
                .iter()
                .map(|e| (e - e_ori - fi) * (e - e_ori - fi))
                .sum();
            (ss / (repeats - 1) as f64).sqrt()
        } else {
            0.0
        };
        features.push(FeatureImportance {
            name: name.clone(),
            e_per,
            e_per_mean,
            fi,
            fi_std,
            share: 0.0,
        });
    }
    let positive: f64 = features.iter().map(|f| f.fi.max(0.0)).sum();
    if positive > 0.0 {
        for f in &mut features {
            f.share = f.fi.max(0.0) / positive;
        }
    }
    Ok(FeatureImportanceReport {
        e_ori,
        features,
        repeats,
        seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LimeConfig {
    pub n_samples: usize,
    /// Perturbation standard deviation as a multiple of each feature's spread.
    pub perturb_scale: f64,
    /// Proximity kernel width; `None` weights every perturbation equally.
    pub kernel_width: Option<f64>,
    pub ridge_lambda: f64,
    pub seed: u64,
}

impl Default for LimeConfig {
    fn default() -> Self {
        Self {
            n_samples: 1000,
            perturb_scale: 0.1,
            kernel_width: None,
            ridge_lambda: 1e-6,
            seed: 0,
        }
    }
}

impl LimeConfig {
    fn validate(&self, d: usize) -> Result<()> {
        if self.n_samples < d + 2 {
            return Err(Error::Config(format!(
                "n_samples = {} is below d + 2 = {}",
                self.n_samples,
                d + 2
            )));
        }
        if !(self.perturb_scale > 0.0) {
            return Err(Error::Config("perturb_scale must be > 0".into()));
        }
        if !(self.ridge_lambda >= 0.0) {
            return Err(Error::Config("ridge_lambda must be >= 0".into()));
        }
        if let Some(w) = self.kernel_width {
            if !(w > 0.0) {
                return Err(Error::Config("kernel_width must be > 0".into()));
            }
        }
        Ok(())
    }
}

/// Row 0 is `instance` itself; row `j` adds independent
/// `N(0, (perturb_scale·stdᵢ)²)` noise to every feature.
pub fn generate_perturbations(instance: &[f64], stats: &[f64], cfg: &LimeConfig) -> Result<Matrix> {
    let d = instance.len();
    if stats.len() != d {
        return Err(Error::Shape(format!(
            "{} feature spreads for {d} features",
            stats.len()
        )));
    }
    cfg.validate(d)?;
    if stats.iter().all(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(Error::DegeneratePerturbation);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Matrix::zeros(cfg.n_samples, d);
    out.row_mut(0).copy_from_slice(instance);
    for j in 1..cfg.n_samples {
        let row = out.row_mut(j);
        for ((v, &x), &s) in row.iter_mut().zip(instance).zip(stats) {
            let z: f64 = StandardNormal.sample(&mut rng);
            let sd = if s.is_finite() {
                cfg.perturb_scale * s
            } else {
                0.0
            };
            *v = x + z * sd;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimeExplanation {
    pub feature_names: Vec<String>,
    pub instance: Vec<f64>,
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    /// `coefficients[i] × instance[i]`.
    pub contributions: Vec<f64>,
    /// `intercept + Σ contributions`.
    pub local_prediction: f64,
    pub model_prediction: f64,
    /// Weighted R² of the surrogate on the perturbation set.
    pub surrogate_r2: f64,
}

/// Weighted ridge least squares with an unpenalized intercept, solved through
/// the centred normal equations. Returns `(intercept, coefficients)`.
pub fn weighted_ridge(x: &Matrix, y: &[f64], w: &[f64], lambda: f64) -> Result<(f64, Vec<f64>)> {
    let (n, d) = x.shape();
    let w_sum: f64 = w.iter().sum();
    if n == 0 || !(w_sum > 0.0) {
        return Err(Error::EmptyData("no weighted samples".into()));
    }
    let mut x_mean = vec![0.0; d];
    let mut y_mean = 0.0;
    for j in 0..n {
        for (m, v) in x_mean.iter_mut().zip(x.row(j)) {
            *m += w[j] * v;
        }
        y_mean += w[j] * y[j];
    }
    x_mean.iter_mut().for_each(|m| *m /= w_sum);
    y_mean /= w_sum;

    let mut a = DMatrix::<f64>::zeros(d, d);
    let mut b = DVector::<f64>::zeros(d);
    let mut xc = vec![0.0; d];
    for j in 0..n {
        for (c, (v, m)) in xc.iter_mut().zip(x.row(j).iter().zip(&x_mean)) {
            *c = v - m;
        }
        let yc = y[j] - y_mean;
        for p in 0..d {
            let wp = w[j] * xc[p];
            b[p] += wp * yc;
            for q in p..d {
                a[(p, q)] += wp * xc[q];
            }
        }
    }
    for p in 0..d {
        for q in 0..p {
            a[(p, q)] = a[(q, p)];
        }
        a[(p, p)] += lambda;
    }
    let max_diag = (0..d).map(|p| a[(p, p)]).fold(0.0_f64, f64::max);
    let chol = nalgebra::Cholesky::new(a).ok_or(Error::RankDeficient)?;
    let l = chol.l();
    let min_pivot = (0..d)
        .map(|p| l[(p, p)] * l[(p, p)])
        .fold(f64::INFINITY, f64::min);
    if lambda == 0.0 && !(min_pivot > max_diag * 1e-13) {
        return Err(Error::RankDeficient);
    }
    let coef = chol.solve(&b);
    let intercept = y_mean - coef.iter().zip(&x_mean).map(|(c, m)| c * m).sum::<f64>();
    Ok((intercept, coef.iter().copied().collect()))
}

/// Local linear surrogate of `predict` around `instance`.
pub fn fit_lime<F>(
    predict: &F,
    instance: &[f64],
    stats: &[f64],
    feature_names: &[String],
    cfg: &LimeConfig,
) -> Result<LimeExplanation>
where
    F: Fn(&Matrix) -> Result<Vec<f64>>,
{
    if feature_names.len() != instance.len() {
        return Err(Error::Shape(format!(
            "{} feature names for {} features",
            feature_names.len(),
            instance.len()
        )));
    }
    let samples = generate_perturbations(instance, stats, cfg)?;
    let responses = call(predict, &samples)?;
    let weights: Vec<f64> = match cfg.kernel_width {
        None => vec![1.0; samples.rows()],
        Some(width) => samples
            .row_iter()
            .map(|row| {
                let dist2: f64 = row
                    .iter()
                    .zip(instance)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                (-dist2 / (width * width)).exp()
            })
            .collect(),
    };
    let (intercept, coefficients) =
        weighted_ridge(&samples, &responses, &weights, cfg.ridge_lambda)?;

    let w_sum: f64 = weights.iter().sum();
    let y_mean = weights
        .iter()
        .zip(&responses)
        .map(|(w, y)| w * y)
        .sum::<f64>()
        / w_sum;
    let (mut ss_res, mut ss_tot) = (0.0, 0.0);
    for (j, row) in samples.row_iter().enumerate() {
        let fit = intercept
            + row
                .iter()
                .zip(&coefficients)
                .map(|(x, c)| x * c)
                .sum::<f64>();
        ss_res += weights[j] * (responses[j] - fit).powi(2);
        ss_tot += weights[j] * (responses[j] - y_mean).powi(2);
    }
    let surrogate_r2 = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else {
        1.0
    };

    let contributions: Vec<f64> = coefficients
        .iter()
        .zip(instance)
        .map(|(c, x)| c * x)
        .collect();
    let local_prediction = intercept + contributions.iter().sum::<f64>();
    // row 0 of the perturbation set is the instance itself
    let model_prediction = responses[0];
    Ok(LimeExplanation {
        feature_names: feature_names.to_vec(),
        instance: instance.to_vec(),
        intercept,
        coefficients,
        contributions,
        local_prediction,
        model_prediction,
        surrogate_r2,
    })
}

/// Serialized explanation, tagged by `kind`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ExplanationReport {
    Pfi {
        feature_names: Vec<String>,
        /// Raw importances `FI_i`.
        values: Vec<f64>,
        /// Importances as shares of the total positive importance.
        normalized_shares: Vec<f64>,
        fi_std: Vec<f64>,
        e_ori: f64,
        e_per_mean: Vec<f64>,
        repeats: usize,
        seed: u64,
        split: String,
        n_rows: usize,
    },
    Lime {
        feature_names: Vec<String>,
        /// Contributions `η_i·x_i`.
        values: Vec<f64>,
        coefficients: Vec<f64>,
        intercept: f64,
        local_prediction: f64,
        model_prediction: f64,
        surrogate_r2: f64,
        instance: Vec<f64>,
        instance_index: usize,
        config: LimeConfig,
    },
}

impl ExplanationReport {
    pub fn from_pfi(r: &FeatureImportanceReport, split: &str, n_rows: usize) -> Self {
        ExplanationReport::Pfi {
            feature_names: r.features.iter().map(|f| f.name.clone()).collect(),
            values: r.fi(),
            normalized_shares: r.features.iter().map(|f| f.share).collect(),
            fi_std: r.features.iter().map(|f| f.fi_std).collect(),
            e_ori: r.e_ori,
            e_per_mean: r.features.iter().map(|f| f.e_per_mean).collect(),
            repeats: r.repeats,
            seed: r.seed,
            split: split.to_string(),
            n_rows,
        }
    }

    pub fn from_lime(e: &LimeExplanation, instance_index: usize, config: LimeConfig) -> Self {
        ExplanationReport::Lime {
            feature_names: e.feature_names.clone(),
            values: e.contributions.clone(),
            coefficients: e.coefficients.clone(),
            intercept: e.intercept,
            local_prediction: e.local_prediction,
            model_prediction: e.model_prediction,
            surrogate_r2: e.surrogate_r2,
            instance: e.instance.clone(),
            instance_index,
            config,
        }
    }

    pub fn feature_names(&self) -> &[String] {
        match self {
            ExplanationReport::Pfi { feature_names, .. }
            | ExplanationReport::Lime { feature_names, .. } => feature_names,
        }
    }

    pub fn values(&self) -> &[f64] {
        match self {
            ExplanationReport::Pfi { values, .. } | ExplanationReport::Lime { values, .. } => {
                values
            }
        }
    }
}
