//! Summary-statistic features and two classical classifiers over them.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalharness::metrics::decide;
use crate::gazedata::{Label, CHANNELS, CHANNEL_NAMES};
use crate::gradcore::sigmoid_scalar;
use crate::preprocess::{Datapoint, Sequence};

pub const FEATURES: usize = 4 * CHANNELS + 3;

/// Default gaze-speed threshold, in normalized screen units per sample.
pub const SACCADE_THRESHOLD: f64 = 0.02;

/// Column names in feature order: `<channel>_{mean,std,min,max}` for each
/// channel, then `path_length`, `saccade_count`, `length`.
pub fn feature_names() -> Vec<String> {
    let mut names: Vec<String> = CHANNEL_NAMES
        .iter()
        .flat_map(|c| ["mean", "std", "min", "max"].map(|s| format!("{c}_{s}")))
        .collect();
    names.extend(["path_length", "saccade_count", "length"].map(String::from));
    names
}

pub type FeatureVector = [f64; FEATURES];

/// Summary features of a sequence. Saccades are counted as upward crossings
/// of `saccade_threshold` by the per-step gaze speed.
pub fn sequence_features(seq: &Sequence, saccade_threshold: f64) -> Result<FeatureVector> {
    let rows = seq.rows();
    if rows.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "features need at least 2 samples, got {}",
            rows.len()
        )));
    }
    let n = rows.len() as f64;
    let mut f = [0.0; FEATURES];
    for c in 0..CHANNELS {
        let col = rows.iter().map(|r| r[c]);
        let mean = col.clone().sum::<f64>() / n;
        let var = col.clone().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        f[4 * c] = mean;
        f[4 * c + 1] = var.sqrt();
        f[4 * c + 2] = col.clone().fold(f64::INFINITY, f64::min);
        f[4 * c + 3] = col.fold(f64::NEG_INFINITY, f64::max);
    }
    let mut path = 0.0;
    let mut saccades = 0usize;
    let mut above = false;
    for w in rows.windows(2) {
        let step = (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]);
        path += step;
        let fast = step > saccade_threshold;
        if fast && !above {
            saccades += 1;
        }
        above = fast;
    }
    f[4 * CHANNELS] = path;
    f[4 * CHANNELS + 1] = saccades as f64;
    f[4 * CHANNELS + 2] = n;
    Ok(f)
}

pub fn extract_features(dp: &Datapoint) -> Result<FeatureVector> {
    sequence_features(&dp.seq, SACCADE_THRESHOLD)
}

/// One CSV row per datapoint: identifiers, label, then every feature.
pub fn write_feature_csv<W: Write>(datapoints: &[Datapoint], mut out: W) -> Result<()> {
    writeln!(out, "user_id,task,label,split_index,{}", feature_names().join(","))?;
    for dp in datapoints {
        let f = extract_features(dp)?;
        let values: Vec<String> = f.iter().map(|v| v.to_string()).collect();
        writeln!(
            out,
            "{},{},{},{},{}",
            dp.user_id,
            dp.task,
            dp.label.as_str(),
            dp.split_index,
            values.join(",")
        )?;
    }
    Ok(())
}

fn check_fit_input(features: &[Vec<f64>], labels: &[Label]) -> Result<usize> {
    if features.len() != labels.len() {
        return Err(Error::shape("fit", format!("{} rows, {} labels", features.len(), labels.len())));
    }
    let dim = features.first().map(Vec::len).ok_or(Error::EmptyInput("fit features"))?;
    if features.iter().any(|r| r.len() != dim) {
        return Err(Error::shape("fit", "ragged feature rows"));
    }
    if features.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("feature value".into()));
    }
    let positives = labels.iter().filter(|l| l.is_positive()).count();
    if positives == 0 || positives == labels.len() {
        return Err(Error::SingleClass("fit labels"));
    }
    Ok(dim)
}

/// Gaussian naive Bayes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianNb {
    /// Indexed by class index, then feature.
    pub means: [Vec<f64>; 2],
    pub variances: [Vec<f64>; 2],
    pub log_priors: [f64; 2],
}

pub const GNB_VARIANCE_FLOOR: f64 = 1e-9;

impl GaussianNb {
    pub fn fit(features: &[Vec<f64>], labels: &[Label]) -> Result<Self> {
        let dim = check_fit_input(features, labels)?;
        let mut means = [vec![0.0; dim], vec![0.0; dim]];
        let mut variances = [vec![0.0; dim], vec![0.0; dim]];
        let mut counts = [0usize; 2];
        for (x, l) in features.iter().zip(labels) {
            let c = l.class_index();
            counts[c] += 1;
            means[c].iter_mut().zip(x).for_each(|(m, v)| *m += v);
        }
        for c in 0..2 {
            means[c].iter_mut().for_each(|m| *m /= counts[c] as f64);
        }
        for (x, l) in features.iter().zip(labels) {
            let c = l.class_index();
            for j in 0..dim {
                variances[c][j] += (x[j] - means[c][j]).powi(2);
            }
        }
        for c in 0..2 {
            variances[c]
                .iter_mut()
                .for_each(|v| *v = (*v / counts[c] as f64).max(GNB_VARIANCE_FLOOR));
        }
        let n = labels.len() as f64;
        Ok(GaussianNb {
            means,
            variances,
            log_priors: counts.map(|k| (k as f64 / n).ln()),
        })
    }

    /// Posterior `[p_patient, p_control]`.
    pub fn predict_proba(&self, x: &[f64]) -> Result<[f64; 2]> {
        if x.len() != self.means[0].len() {
            return Err(Error::shape("gnb predict", format!("{} features", x.len())));
        }
        let log_joint: [f64; 2] = std::array::from_fn(|c| {
            self.log_priors[c]
                + x.iter()
                    .zip(&self.means[c])
                    .zip(&self.variances[c])
                    .map(|((v, m), var)| -0.5 * ((2.0 * std::f64::consts::PI * var).ln() + (v - m).powi(2) / var))
                    .sum::<f64>()
        });
        let top = log_joint[0].max(log_joint[1]);
        let e = log_joint.map(|l| (l - top).exp());
        let s = e[0] + e[1];
        Ok([e[0] / s, e[1] / s])
    }

    pub fn predict(&self, x: &[f64]) -> Result<(Label, f64)> {
        let p = self.predict_proba(x)?[0];
        Ok((decide(p), p))
    }
}

/// Per-feature z-scoring fitted on training rows. Constant features map to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map(Vec::len).ok_or(Error::EmptyInput("standardizer"))?;
        let n = rows.len() as f64;
        let mean: Vec<f64> = (0..dim).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let std = (0..dim)
            .map(|j| (rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n).sqrt())
            .collect();
        Ok(Standardizer { mean, std })
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| if *s < 1e-12 { 0.0 } else { (v - m) / s })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRegConfig {
    pub l2: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        LogRegConfig {
            l2: 1e-3,
            tolerance: 1e-6,
            max_iterations: 10_000,
        }
    }
}

/// Binary logistic regression; the positive class is `Patient`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticRegression {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub iterations: usize,
    /// Objective value before every step, plus the final value.
    pub loss_history: Vec<f64>,
}

fn logreg_objective(x: &[Vec<f64>], y: &[f64], w: &[f64], b: f64, l2: f64) -> (f64, Vec<f64>, f64) {
    let n = x.len() as f64;
    let mut loss = 0.0;
    let mut gw = vec![0.0; w.len()];
    let mut gb = 0.0;
    for (row, &t) in x.iter().zip(y) {
        let z = b + row.iter().zip(w).map(|(a, c)| a * c).sum::<f64>();
        // log(1 + e^z) - t z, computed without overflow
        loss += z.max(0.0) + (-z.abs()).exp().ln_1p() - t * z;
        let r = sigmoid_scalar(z) - t;
        gw.iter_mut().zip(row).for_each(|(g, a)| *g += r * a);
        gb += r;
    }
    let wsq = w.iter().map(|v| v * v).sum::<f64>();
    gw.iter_mut().zip(w).for_each(|(g, v)| *g = *g / n + l2 * v);
    (loss / n + 0.5 * l2 * wsq, gw, gb / n)
}

impl LogisticRegression {
    /// Full-batch gradient descent with step `1 / L`, where `L` bounds the
    /// Lipschitz constant of the gradient; the bias is not penalized.
    pub fn fit(features: &[Vec<f64>], labels: &[Label], config: &LogRegConfig) -> Result<Self> {
        let dim = check_fit_input(features, labels)?;
        if config.l2.is_nan() || config.l2 < 0.0 {
            return Err(Error::InvalidArgument(format!("l2 must be non-negative, got {}", config.l2)));
        }
        let y: Vec<f64> = labels.iter().map(|l| if l.is_positive() { 1.0 } else { 0.0 }).collect();
        let n = features.len() as f64;
        let trace = features.iter().map(|r| 1.0 + r.iter().map(|v| v * v).sum::<f64>()).sum::<f64>() / n;
        let step = 1.0 / (0.25 * trace + config.l2);

        let mut w = vec![0.0; dim];
        let mut b = 0.0;
        let mut history = Vec::new();
        let mut iterations = 0;
        loop {
            let (loss, gw, gb) = logreg_objective(features, &y, &w, b, config.l2);
            history.push(loss);
            let norm = (gw.iter().map(|g| g * g).sum::<f64>() + gb * gb).sqrt();
            if norm < config.tolerance || iterations == config.max_iterations {
                break;
            }
            w.iter_mut().zip(&gw).for_each(|(v, g)| *v -= step * g);
            b -= step * gb;
            iterations += 1;
        }
        Ok(LogisticRegression {
            weights: w,
            bias: b,
            iterations,
            loss_history: history,
        })
    }

    pub fn p_patient(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.weights.len() {
            return Err(Error::shape("logreg predict", format!("{} features", x.len())));
        }
        Ok(sigmoid_scalar(self.bias + x.iter().zip(&self.weights).map(|(a, c)| a * c).sum::<f64>()))
    }

    pub fn predict(&self, x: &[f64]) -> Result<(Label, f64)> {
        let p = self.p_patient(x)?;
        Ok((decide(p), p))
    }

    pub fn weight_norm(&self) -> f64 {
        self.weights.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}
