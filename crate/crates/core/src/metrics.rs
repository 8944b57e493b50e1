//! Output-space diversity measures: pairwise KL divergence, prediction
//! disagreement ratio, and the bias-variance-covariance decomposition of an
//! equally weighted ensemble's squared error.

use crate::error::{Error, Result};

/// Probabilities below this are clamped before any logarithm so softmax
/// underflow cannot produce log(0).
pub const PROB_FLOOR: f64 = 1e-12;

/// Output distributions of `models` classifiers on `samples` inputs:
/// row-major `[models, samples, classes]`. Every per-sample row must be a
/// probability distribution (nonnegative, sums to 1 within 1e-9).
#[derive(Debug, Clone)]
pub struct PredictionSet {
    probs: Vec<f64>,
    models: usize,
    samples: usize,
    classes: usize,
}

impl PredictionSet {
    pub fn new(probs: Vec<f64>, models: usize, samples: usize, classes: usize) -> Result<Self> {
        if models == 0 || samples == 0 || classes == 0 {
            return Err(Error::InvalidArgument("prediction set dimensions must be positive".into()));
        }
        if probs.len() != models * samples * classes {
            return Err(Error::Shape {
                context: "PredictionSet::new".into(),
                detail: format!(
                    "{} values != {models} x {samples} x {classes}",
                    probs.len()
                ),
            });
        }
        for (i, row) in probs.chunks(classes).enumerate() {
            if row.iter().any(|&p| p < 0.0 || !p.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "row {i} contains a negative or non-finite probability"
                )));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!(
                    "row {i} sums to {total}, expected 1 within 1e-9"
                )));
            }
        }
        Ok(PredictionSet { probs, models, samples, classes })
    }

    pub fn models(&self) -> usize {
        self.models
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    fn row(&self, model: usize, sample: usize) -> &[f64] {
        let start = (model * self.samples + sample) * self.classes;
        &self.probs[start..start + self.classes]
    }

    /// Mean directional KL divergence over all ordered model pairs (i != j),
    /// each pair averaged over samples.
    pub fn kl_pairwise(&self) -> Result<f64> {
        if self.models < 2 {
            return Err(Error::InvalidArgument("kl_pairwise needs at least 2 models".into()));
        }
        let mut total = 0.0;
        let mut pairs = 0usize;
        for i in 0..self.models {
            for j in 0..self.models {
                if i == j {
                    continue;
                }
                let mut acc = 0.0;
                for n in 0..self.samples {
                    acc += kl_divergence(self.row(i, n), self.row(j, n))?;
                }
                total += acc / self.samples as f64;
                pairs += 1;
            }
        }
        Ok(total / pairs as f64)
    }

    /// Mean prediction-disagreement ratio over all unordered model pairs:
    /// the fraction of samples whose argmax labels differ. Argmax ties break
    /// toward the lowest class index.
    pub fn pdr(&self) -> Result<f64> {
        if self.models < 2 {
            return Err(Error::InvalidArgument("pdr needs at least 2 models".into()));
        }
        let labels: Vec<usize> = (0..self.models)
            .flat_map(|m| (0..self.samples).map(move |n| argmax(self.row(m, n))))
            .collect();
        let mut total = 0.0;
        let mut pairs = 0usize;
        for i in 0..self.models {
            for j in i + 1..self.models {
                let a = &labels[i * self.samples..(i + 1) * self.samples];
                let b = &labels[j * self.samples..(j + 1) * self.samples];
                let differing = a.iter().zip(b).filter(|(x, y)| x != y).count();
                total += differing as f64 / self.samples as f64;
                pairs += 1;
            }
        }
        Ok(total / pairs as f64)
    }
}

/// Directional KL divergence `sum_c p_c ln(p_c / q_c)` with both
/// distributions floored at [`PROB_FLOOR`].
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Shape {
            context: "kl_divergence".into(),
            detail: format!("{} vs {} classes", p.len(), q.len()),
        });
    }
    let mut acc = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        let pf = pi.max(PROB_FLOOR);
        let qf = qi.max(PROB_FLOOR);
        if qf <= 0.0 {
            return Err(Error::NonFinite("zero probability in KL denominator after flooring".into()));
        }
        acc += pf * (pf / qf).ln();
    }
    Ok(acc)
}

/// First index of the maximum value (deterministic tie-break).
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Terms of the ensemble squared-error decomposition
/// `mse = bias^2 + var / M + (1 - 1/M) covar`.
///
/// Expectations are empirical means over samples, applied to the residuals
/// `f_i - y` so the identity holds exactly for per-sample targets. With a
/// single model the covariance term is absent and `mse = bias^2 + var`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decomposition {
    pub bias_bar: f64,
    pub var_bar: f64,
    pub covar_bar: Option<f64>,
    pub mse: f64,
}

impl Decomposition {
    /// Right-hand side of the decomposition identity.
    pub fn identity_rhs(&self, models: usize) -> f64 {
        let m = models as f64;
        match self.covar_bar {
            Some(c) => self.bias_bar * self.bias_bar + self.var_bar / m + (1.0 - 1.0 / m) * c,
            None => self.bias_bar * self.bias_bar + self.var_bar,
        }
    }
}

/// Bias-variance-covariance decomposition for scalar regression outputs.
/// `predictions` is row-major `[models, samples]`.
pub fn bias_var_covar(
    predictions: &[f64],
    models: usize,
    samples: usize,
    targets: &[f64],
) -> Result<Decomposition> {
    if models == 0 || samples == 0 {
        return Err(Error::InvalidArgument("decomposition needs models >= 1 and samples >= 1".into()));
    }
    if predictions.len() != models * samples {
        return Err(Error::Shape {
            context: "bias_var_covar".into(),
            detail: format!("{} predictions != {models} x {samples}", predictions.len()),
        });
    }
    if targets.len() != samples {
        return Err(Error::Shape {
            context: "bias_var_covar".into(),
            detail: format!("{} targets != {samples} samples", targets.len()),
        });
    }
    let inv_n = 1.0 / samples as f64;

    // residual means E[f_i - y] per model
    let mut res_mean = vec![0.0; models];
    for i in 0..models {
        let row = &predictions[i * samples..(i + 1) * samples];
        res_mean[i] = row.iter().zip(targets).map(|(f, y)| f - y).sum::<f64>() * inv_n;
    }
    let bias_bar = res_mean.iter().sum::<f64>() / models as f64;

    let mut var_bar = 0.0;
    for i in 0..models {
        let row = &predictions[i * samples..(i + 1) * samples];
        let v: f64 = row
            .iter()
            .zip(targets)
            .map(|(f, y)| {
                let d = f - y - res_mean[i];
                d * d
            })
            .sum::<f64>()
            * inv_n;
        var_bar += v;
    }
    var_bar /= models as f64;

    let covar_bar = if models >= 2 {
        let mut acc = 0.0;
        for i in 0..models {
            for j in 0..models {
                if i == j {
                    continue;
                }
                let ri = &predictions[i * samples..(i + 1) * samples];
                let rj = &predictions[j * samples..(j + 1) * samples];
                let c: f64 = (0..samples)
                    .map(|n| (ri[n] - targets[n] - res_mean[i]) * (rj[n] - targets[n] - res_mean[j]))
                    .sum::<f64>()
                    * inv_n;
                acc += c;
            }
        }
        Some(acc / (models * (models - 1)) as f64)
    } else {
        None
    };

    let mse: f64 = (0..samples)
        .map(|n| {
            let mean: f64 =
                (0..models).map(|i| predictions[i * samples + n]).sum::<f64>() / models as f64;
            let d = mean - targets[n];
            d * d
        })
        .sum::<f64>()
        * inv_n;

    Ok(Decomposition { bias_bar, var_bar, covar_bar, mse })
}
