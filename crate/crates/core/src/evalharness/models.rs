//! Classifiers wired into the cross-validation contract.

use serde_json::json;

use super::cv::{FoldInput, FoldModel};
use crate::baselines::{extract_features, GaussianNb, LogRegConfig, LogisticRegression, Standardizer};
use crate::error::Result;
use crate::preprocess::{normalize_datapoint, Datapoint};
use crate::vtnet::{fit, predict, VTNetConfig};

/// `VTNet_full`, `VTNet_1000`, ... with `_att` when attention is enabled.
pub fn vtnet_name(cutoff: Option<usize>, attention: bool) -> String {
    let len = cutoff.map_or_else(|| "full".to_string(), |c| c.to_string());
    let suffix = if attention { "_att" } else { "" };
    format!("VTNet_{len}{suffix}")
}

/// Trains a fresh network per fold. The fold seed drives both the
/// initialization and the shuffling/dropout stream; `config.seed` is unused.
#[derive(Debug, Clone)]
pub struct VtnetModel {
    pub config: VTNetConfig,
    pub cutoff: Option<usize>,
}

impl VtnetModel {
    pub fn new(mut config: VTNetConfig, cutoff: Option<usize>) -> Self {
        if cutoff.is_some() && config.max_seq_len.is_none() {
            config.max_seq_len = cutoff;
        }
        VtnetModel { config, cutoff }
    }
}

impl FoldModel for VtnetModel {
    fn name(&self) -> String {
        vtnet_name(self.cutoff, self.config.attention_enabled)
    }

    fn config_json(&self) -> String {
        json!({ "model": "vtnet", "cutoff": self.cutoff, "vtnet": self.config }).to_string()
    }

    fn fit_predict(&self, fold: &FoldInput<'_>) -> Result<Vec<f64>> {
        let train_set: Vec<Datapoint> = fold.train.iter().map(|d| normalize_datapoint(d, fold.stats)).collect();
        let outcome = fit(&train_set, &self.config, fold.seed)?;
        fold.test
            .iter()
            .map(|d| Ok(predict(&outcome.params, &self.config, &normalize_datapoint(d, fold.stats))?.p_patient))
            .collect()
    }
}

fn features_of(data: &[Datapoint]) -> Result<Vec<Vec<f64>>> {
    data.iter().map(|d| Ok(extract_features(d)?.to_vec())).collect()
}

fn labels_of(data: &[Datapoint]) -> Vec<crate::gazedata::Label> {
    data.iter().map(|d| d.label).collect()
}

/// Gaussian naive Bayes on summary features.
#[derive(Debug, Clone, Copy, Default)]
pub struct GnbModel;

impl FoldModel for GnbModel {
    fn name(&self) -> String {
        "GNB".into()
    }

    fn config_json(&self) -> String {
        json!({ "model": "gnb", "variance_floor": crate::baselines::GNB_VARIANCE_FLOOR }).to_string()
    }

    fn fit_predict(&self, fold: &FoldInput<'_>) -> Result<Vec<f64>> {
        let model = GaussianNb::fit(&features_of(fold.train)?, &labels_of(fold.train))?;
        features_of(fold.test)?
            .iter()
            .map(|x| Ok(model.predict_proba(x)?[0]))
            .collect()
    }
}

/// L2 logistic regression on z-scored summary features.
#[derive(Debug, Clone, Copy, Default)]
pub struct LogRegModel {
    pub config: LogRegConfig,
}

impl FoldModel for LogRegModel {
    fn name(&self) -> String {
        "LogReg".into()
    }

    fn config_json(&self) -> String {
        json!({ "model": "logreg", "logreg": self.config }).to_string()
    }

    fn fit_predict(&self, fold: &FoldInput<'_>) -> Result<Vec<f64>> {
        let raw = features_of(fold.train)?;
        let scaler = Standardizer::fit(&raw)?;
        let x: Vec<Vec<f64>> = raw.iter().map(|r| scaler.apply(r)).collect();
        let model = LogisticRegression::fit(&x, &labels_of(fold.train), &self.config)?;
        features_of(fold.test)?
            .iter()
            .map(|r| model.p_patient(&scaler.apply(r)))
            .collect()
    }
}

/// Emits the same score for every datapoint.
#[derive(Debug, Clone, Copy)]
pub struct ConstantModel(pub f64);

impl FoldModel for ConstantModel {
    fn name(&self) -> String {
        "Constant".into()
    }

    fn config_json(&self) -> String {
        json!({ "model": "constant", "p": self.0 }).to_string()
    }

    fn fit_predict(&self, fold: &FoldInput<'_>) -> Result<Vec<f64>> {
        Ok(vec![self.0; fold.test.len()])
    }
}

/// Reads the true label. An upper bound for harness tests.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleModel;

impl FoldModel for OracleModel {
    fn name(&self) -> String {
        "Oracle".into()
    }

    fn config_json(&self) -> String {
        json!({ "model": "oracle" }).to_string()
    }

    fn fit_predict(&self, fold: &FoldInput<'_>) -> Result<Vec<f64>> {
        Ok(fold
            .test
            .iter()
            .map(|d| if d.label.is_positive() { 1.0 } else { 0.0 })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names() {
        assert_eq!(vtnet_name(None, false), "VTNet_full");
        assert_eq!(vtnet_name(Some(1000), true), "VTNet_1000_att");
        assert_eq!(vtnet_name(Some(2000), false), "VTNet_2000");
        let m = VtnetModel::new(VTNetConfig::default().with_attention(true), None);
        assert_eq!(m.name(), "VTNet_full_att");
    }

    #[test]
    fn cutoff_caps_sequence_length() {
        let m = VtnetModel::new(VTNetConfig::desk(), Some(500));
        assert_eq!(m.config.max_seq_len, Some(500));
    }
}
