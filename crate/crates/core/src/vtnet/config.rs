use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gazedata::CHANNELS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub filters: usize,
    pub kernel: usize,
}

/// Architecture and training hyperparameters. Every field has a default,
/// so partial JSON objects deserialize.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VTNetConfig {
    pub gru_hidden: usize,
    pub cnn_out: usize,
    pub fusion_hidden: usize,
    pub image_height: usize,
    pub image_width: usize,
    pub conv1: ConvSpec,
    pub conv2: ConvSpec,
    /// Dropout on the fused vector, training only.
    pub dropout: f64,
    pub attention_enabled: bool,
    /// Longest accepted sequence; `None` accepts any length.
    pub max_seq_len: Option<usize>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for VTNetConfig {
    fn default() -> Self {
        VTNetConfig {
            gru_hidden: 256,
            cnn_out: 50,
            fusion_hidden: 128,
            image_height: 64,
            image_width: 64,
            conv1: ConvSpec { filters: 8, kernel: 5 },
            conv2: ConvSpec { filters: 16, kernel: 5 },
            dropout: 0.5,
            attention_enabled: false,
            max_seq_len: None,
            learning_rate: 1e-3,
            epochs: 60,
            batch_size: 16,
            seed: 0,
        }
    }
}

impl VTNetConfig {
    /// Smallest useful network, for gradient checks and memorization tests.
    pub fn tiny() -> Self {
        VTNetConfig {
            gru_hidden: 8,
            cnn_out: 4,
            fusion_hidden: 8,
            image_height: 16,
            image_width: 16,
            conv1: ConvSpec { filters: 2, kernel: 3 },
            conv2: ConvSpec { filters: 3, kernel: 3 },
            dropout: 0.0,
            attention_enabled: false,
            max_seq_len: None,
            learning_rate: 1e-2,
            epochs: 500,
            batch_size: 8,
            seed: 0,
        }
    }

    /// Reduced network that trains a few-dozen-user synthetic cohort in
    /// seconds per fold on one core.
    pub fn desk() -> Self {
        VTNetConfig {
            gru_hidden: 16,
            cnn_out: 8,
            fusion_hidden: 16,
            image_height: 32,
            image_width: 32,
            conv1: ConvSpec { filters: 4, kernel: 5 },
            conv2: ConvSpec { filters: 8, kernel: 5 },
            dropout: 0.2,
            attention_enabled: false,
            max_seq_len: None,
            learning_rate: 3e-3,
            epochs: 10,
            batch_size: 16,
            seed: 0,
        }
    }

    pub fn with_attention(mut self, enabled: bool) -> Self {
        self.attention_enabled = enabled;
        self
    }

    pub fn input_channels(&self) -> usize {
        CHANNELS
    }

    /// Width of the concatenated GRU state and CNN vector.
    pub fn fusion_input(&self) -> usize {
        self.gru_hidden + self.cnn_out
    }

    /// Spatial size after each conv + pool stage.
    pub fn feature_map_sizes(&self) -> Result<[(usize, usize); 2]> {
        let stage = |h: usize, w: usize, k: usize| -> Option<(usize, usize)> {
            if k == 0 || k > h || k > w {
                return None;
            }
            let (ch, cw) = (h - k + 1, w - k + 1);
            (ch >= 2 && cw >= 2).then_some((ch / 2, cw / 2))
        };
        let first = stage(self.image_height, self.image_width, self.conv1.kernel);
        let second = first.and_then(|(h, w)| stage(h, w, self.conv2.kernel));
        match (first, second) {
            (Some(a), Some(b)) => Ok([a, b]),
            _ => Err(Error::InvalidArgument(format!(
                "image {}x{} too small for kernels {} and {}",
                self.image_height, self.image_width, self.conv1.kernel, self.conv2.kernel
            ))),
        }
    }

    /// Length of the flattened second pooling output.
    pub fn cnn_flatten_width(&self) -> Result<usize> {
        let [_, (h, w)] = self.feature_map_sizes()?;
        Ok(self.conv2.filters * h * w)
    }

    pub fn validate(&self) -> Result<()> {
        let extents = [
            ("gru_hidden", self.gru_hidden),
            ("cnn_out", self.cnn_out),
            ("fusion_hidden", self.fusion_hidden),
            ("conv1.filters", self.conv1.filters),
            ("conv2.filters", self.conv2.filters),
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
        ];
        if let Some((name, _)) = extents.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidArgument(format!("{name} must be positive")));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument("learning_rate must be finite and >= 0".into()));
        }
        if self.max_seq_len == Some(0) {
            return Err(Error::InvalidArgument("max_seq_len must be positive".into()));
        }
        self.feature_map_sizes().map(|_| ())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_fusion_width_is_306() {
        let c = VTNetConfig::default();
        assert_eq!(c.fusion_input(), 306);
        // 64 -> 60 -> 30 -> 26 -> 13
        assert_eq!(c.feature_map_sizes().unwrap(), [(30, 30), (13, 13)]);
        assert_eq!(c.cnn_flatten_width().unwrap(), 16 * 13 * 13);
        c.validate().unwrap();
        VTNetConfig::tiny().validate().unwrap();
        VTNetConfig::desk().validate().unwrap();
    }

    #[test]
    fn partial_json_fills_defaults() {
        let c: VTNetConfig = serde_json::from_str(r#"{"gru_hidden": 32, "attention_enabled": true}"#).unwrap();
        assert_eq!(c.gru_hidden, 32);
        assert!(c.attention_enabled);
        assert_eq!(c.cnn_out, 50);
        assert!(serde_json::from_str::<VTNetConfig>(r#"{"gru_hiden": 3}"#).is_err());
    }

    #[test]
    fn rejects_bad_values() {
        let c = VTNetConfig { dropout: 1.0, ..VTNetConfig::default() };
        assert!(c.validate().is_err());
        let c = VTNetConfig { image_height: 8, ..VTNetConfig::default() };
        assert!(c.validate().is_err());
        let c = VTNetConfig { batch_size: 0, ..VTNetConfig::default() };
        assert!(c.validate().is_err());
    }
}
