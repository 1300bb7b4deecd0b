use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::VTNetConfig;
use crate::error::Result;
use crate::gradcore::params::join;
use crate::gradcore::{AttentionParams, Conv2dParams, GruParams, LinearParams, Parameters, Tensor};

/// Every trainable array of the classifier. The attention block is present
/// only when the configuration enables it.
#[derive(Debug, Clone, PartialEq)]
pub struct VTNetParams {
    pub attention: Option<AttentionParams>,
    pub gru: GruParams,
    pub conv1: Conv2dParams,
    pub conv2: Conv2dParams,
    pub cnn_proj: LinearParams,
    pub fusion: LinearParams,
    pub output: LinearParams,
}

impl VTNetParams {
    /// Glorot-uniform weights and zero biases, drawn in a fixed order from
    /// a generator seeded with `seed`.
    pub fn init(config: &VTNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let channels = config.input_channels();
        let attention = config
            .attention_enabled
            .then(|| AttentionParams::init(channels, &mut rng));
        let gru = GruParams::init(channels, config.gru_hidden, &mut rng);
        let conv1 = Conv2dParams::init(1, config.conv1.filters, config.conv1.kernel, config.conv1.kernel, &mut rng);
        let conv2 = Conv2dParams::init(
            config.conv1.filters,
            config.conv2.filters,
            config.conv2.kernel,
            config.conv2.kernel,
            &mut rng,
        );
        let cnn_proj = LinearParams::init(config.cnn_flatten_width()?, config.cnn_out, &mut rng);
        let fusion = LinearParams::init(config.fusion_input(), config.fusion_hidden, &mut rng);
        let output = LinearParams::init(config.fusion_hidden, 2, &mut rng);
        Ok(VTNetParams {
            attention,
            gru,
            conv1,
            conv2,
            cnn_proj,
            fusion,
            output,
        })
    }

    /// All-zero parameters with the shapes implied by `config`.
    pub fn zeros(config: &VTNetConfig) -> Result<Self> {
        Ok(VTNetParams::init(config, 0)?.zeros_like())
    }
}

impl Parameters for VTNetParams {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        if let Some(a) = &self.attention {
            a.visit(&join(prefix, "attention"), f);
        }
        self.gru.visit(&join(prefix, "gru"), f);
        self.conv1.visit(&join(prefix, "conv1"), f);
        self.conv2.visit(&join(prefix, "conv2"), f);
        self.cnn_proj.visit(&join(prefix, "cnn_proj"), f);
        self.fusion.visit(&join(prefix, "fusion"), f);
        self.output.visit(&join(prefix, "output"), f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        if let Some(a) = &mut self.attention {
            a.visit_mut(f);
        }
        self.gru.visit_mut(f);
        self.conv1.visit_mut(f);
        self.conv2.visit_mut(f);
        self.cnn_proj.visit_mut(f);
        self.fusion.visit_mut(f);
        self.output.visit_mut(f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcore::params::glorot_limit;

    #[test]
    fn same_seed_same_parameters() {
        let cfg = VTNetConfig::tiny().with_attention(true);
        let a = VTNetParams::init(&cfg, 11).unwrap();
        let b = VTNetParams::init(&cfg, 11).unwrap();
        let c = VTNetParams::init(&cfg, 12).unwrap();
        assert_eq!(a.to_flat(), b.to_flat());
        assert_ne!(a.to_flat(), c.to_flat());
    }

    #[test]
    fn weights_respect_glorot_limits_and_biases_are_zero() {
        let cfg = VTNetConfig::default().with_attention(true);
        let p = VTNetParams::init(&cfg, 5).unwrap();
        for (name, t) in p.named() {
            let s = t.shape();
            if name.ends_with("bias") || name.contains(".b_") {
                assert!(t.data().iter().all(|&v| v == 0.0), "{name}");
                continue;
            }
            let limit = match s {
                [a, b] => glorot_limit(*a, *b),
                [o, i, kh, kw] => glorot_limit(i * kh * kw, o * kh * kw),
                _ => panic!("unexpected shape {s:?} for {name}"),
            };
            let max = t.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(max <= limit, "{name}: {max} > {limit}");
            assert!(max > 0.5 * limit, "{name} looks uninitialized");
        }
    }

    #[test]
    fn default_shapes() {
        let p = VTNetParams::init(&VTNetConfig::default(), 0).unwrap();
        assert!(p.attention.is_none());
        assert_eq!(p.gru.w_z.shape(), &[256, 6]);
        assert_eq!(p.gru.u_n.shape(), &[256, 256]);
        assert_eq!(p.conv1.kernels.shape(), &[8, 1, 5, 5]);
        assert_eq!(p.conv2.kernels.shape(), &[16, 8, 5, 5]);
        assert_eq!(p.cnn_proj.weight.shape(), &[2704, 50]);
        assert_eq!(p.fusion.weight.shape(), &[306, 128]);
        assert_eq!(p.output.weight.shape(), &[128, 2]);
    }
}
