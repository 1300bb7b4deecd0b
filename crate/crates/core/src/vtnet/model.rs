//! Forward and backward passes of the two-branch classifier.
//!
//! Temporal branch: `[self-attention] -> GRU final state`.
//! Visual branch: `scanpath -> conv -> relu -> pool -> conv -> relu -> pool
//! -> linear -> relu`.
//! Head: `concat -> [dropout] -> linear -> relu -> linear -> softmax`.

use rand::Rng;

use super::config::VTNetConfig;
use super::params::VTNetParams;
use crate::error::{Error, Result};
use crate::gazedata::{Label, CHANNELS};
use crate::gradcore::attention::AttentionCache;
use crate::gradcore::gru::GruSequenceCache;
use crate::gradcore::{
    conv2d, conv2d_backward, gru_sequence, gru_sequence_backward, linear, linear_backward, maxpool2,
    maxpool2_backward, relu, relu_backward, self_attention, self_attention_backward, softmax_xent,
    MaxPoolCache, Parameters, Tensor,
};
use crate::preprocess::{Datapoint, Scanpath};

/// One model input: a `T x 6` sequence with its validity mask and the
/// scanpath image.
#[derive(Debug, Clone)]
pub struct ModelInput {
    pub seq: Tensor,
    pub mask: Vec<bool>,
    pub image: Tensor,
}

impl ModelInput {
    pub fn new(seq: Tensor, mask: Vec<bool>, scanpath: &Scanpath) -> Result<Self> {
        seq.expect_2d("model input", Some(mask.len()), Some(CHANNELS))?;
        let image = Tensor::new(
            vec![1, scanpath.height(), scanpath.width()],
            scanpath.pixels().to_vec(),
        )?;
        Ok(ModelInput { seq, mask, image })
    }

    pub fn from_datapoint(dp: &Datapoint) -> Result<Self> {
        if dp.seq.is_empty() {
            return Err(Error::EmptyInput("datapoint sequence"));
        }
        let seq = Tensor::new(vec![dp.seq.len(), CHANNELS], dp.seq.as_flat().to_vec())?;
        ModelInput::new(seq, vec![true; dp.seq.len()], &dp.scanpath)
    }

    /// Appends `steps` masked rows filled with `value`.
    pub fn with_padding(&self, steps: usize, value: f64) -> Self {
        let t = self.mask.len() + steps;
        let mut data = self.seq.data().to_vec();
        data.resize(t * CHANNELS, value);
        let mut mask = self.mask.clone();
        mask.resize(t, false);
        ModelInput {
            seq: Tensor::new(vec![t, CHANNELS], data).expect("padded shape"),
            mask,
            image: self.image.clone(),
        }
    }
}

/// Everything the backward pass of one item needs.
#[derive(Debug, Clone)]
pub struct ItemCache {
    attention: Option<AttentionCache>,
    gru_input: Tensor,
    gru: GruSequenceCache,
    image: Tensor,
    conv1_pre: Tensor,
    pool1: MaxPoolCache,
    pool1_out: Tensor,
    conv2_pre: Tensor,
    pool2: MaxPoolCache,
    pool2_shape: Vec<usize>,
    flat: Tensor,
    cnn_pre: Tensor,
    /// Concatenated vector after dropout.
    fused: Tensor,
    dropout: Option<Vec<f64>>,
    hidden_pre: Tensor,
    hidden: Tensor,
    pub gru_state: Vec<f64>,
    pub cnn_vector: Vec<f64>,
    pub logits: [f64; 2],
}

impl ItemCache {
    /// The concatenated GRU and CNN vector fed to the fusion layer.
    pub fn fused(&self) -> &[f64] {
        self.fused.data()
    }
}

fn check_input(config: &VTNetConfig, input: &ModelInput) -> Result<()> {
    if input.image.shape() != [1, config.image_height, config.image_width] {
        return Err(Error::shape(
            "vtnet",
            format!(
                "scanpath {:?}, expected 1x{}x{}",
                input.image.shape(),
                config.image_height,
                config.image_width
            ),
        ));
    }
    if let Some(max) = config.max_seq_len {
        let valid = input.mask.iter().filter(|&&m| m).count();
        if valid > max {
            return Err(Error::InvalidArgument(format!(
                "sequence of {valid} steps exceeds max_seq_len {max}"
            )));
        }
    }
    Ok(())
}

/// Inverted dropout mask: kept units are scaled by `1 / (1 - rate)`.
pub fn dropout_mask<R: Rng + ?Sized>(width: usize, rate: f64, rng: &mut R) -> Vec<f64> {
    let keep = 1.0 - rate;
    (0..width)
        .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
        .collect()
}

pub fn forward_item(
    params: &VTNetParams,
    config: &VTNetConfig,
    input: &ModelInput,
    dropout: Option<Vec<f64>>,
) -> Result<ItemCache> {
    check_input(config, input)?;
    if params.attention.is_some() != config.attention_enabled {
        return Err(Error::shape("vtnet", "attention parameters do not match configuration"));
    }

    let (attention, gru_input) = match &params.attention {
        Some(ap) => {
            let (out, cache) = self_attention(ap, &input.seq, &input.mask)?;
            (Some(cache), out)
        }
        None => (None, input.seq.clone()),
    };
    let (gru_state, gru) = gru_sequence(&params.gru, &gru_input, &input.mask)?;

    let conv1_pre = conv2d(&input.image, &params.conv1)?;
    let (pool1_out, pool1) = maxpool2(&relu(&conv1_pre))?;
    let conv2_pre = conv2d(&pool1_out, &params.conv2)?;
    let (pool2_out, pool2) = maxpool2(&relu(&conv2_pre))?;
    let pool2_shape = pool2_out.shape().to_vec();
    let flat_len = pool2_out.len();
    let flat = pool2_out.reshape(vec![1, flat_len])?;
    let cnn_pre = linear(&flat, &params.cnn_proj)?;
    let cnn_vector = relu(&cnn_pre).into_data();

    let mut fused: Vec<f64> = gru_state.iter().chain(&cnn_vector).copied().collect();
    if let Some(mask) = &dropout {
        if mask.len() != fused.len() {
            return Err(Error::shape("vtnet dropout", "mask width"));
        }
        fused.iter_mut().zip(mask).for_each(|(v, m)| *v *= m);
    }
    let width = fused.len();
    let fused = Tensor::new(vec![1, width], fused)?;
    let hidden_pre = linear(&fused, &params.fusion)?;
    let hidden = relu(&hidden_pre);
    let logits_t = linear(&hidden, &params.output)?;
    let logits = [logits_t.data()[0], logits_t.data()[1]];

    Ok(ItemCache {
        attention,
        gru_input,
        gru,
        image: input.image.clone(),
        conv1_pre,
        pool1,
        pool1_out,
        conv2_pre,
        pool2,
        pool2_shape,
        flat,
        cnn_pre,
        fused,
        dropout,
        hidden_pre,
        hidden,
        gru_state,
        cnn_vector,
        logits,
    })
}

/// Adds the gradients of one item, given `dL/dlogits`, into `grads`.
pub fn backward_item(
    params: &VTNetParams,
    cache: &ItemCache,
    dlogits: [f64; 2],
    grads: &mut VTNetParams,
) -> Result<()> {
    let dlogits = Tensor::new(vec![1, 2], dlogits.to_vec())?;
    let dhidden = linear_backward(&cache.hidden, &params.output, &dlogits, &mut grads.output)?;
    let dhidden_pre = relu_backward(&cache.hidden_pre, &dhidden);
    let mut dfused = linear_backward(&cache.fused, &params.fusion, &dhidden_pre, &mut grads.fusion)?.into_data();
    if let Some(mask) = &cache.dropout {
        dfused.iter_mut().zip(mask).for_each(|(g, m)| *g *= m);
    }
    let hdim = cache.gru_state.len();
    let (dgru, dcnn) = dfused.split_at(hdim);

    let dcnn_pre = relu_backward(&cache.cnn_pre, &Tensor::new(vec![1, dcnn.len()], dcnn.to_vec())?);
    let dflat = linear_backward(&cache.flat, &params.cnn_proj, &dcnn_pre, &mut grads.cnn_proj)?;
    let dpool2 = dflat.reshape(cache.pool2_shape.clone())?;
    let drelu2 = maxpool2_backward(&cache.pool2, &dpool2)?;
    let dconv2 = relu_backward(&cache.conv2_pre, &drelu2);
    let dpool1 = conv2d_backward(&cache.pool1_out, &params.conv2, &dconv2, &mut grads.conv2)?;
    let drelu1 = maxpool2_backward(&cache.pool1, &dpool1)?;
    let dconv1 = relu_backward(&cache.conv1_pre, &drelu1);
    conv2d_backward(&cache.image, &params.conv1, &dconv1, &mut grads.conv1)?;

    let dgru_input = gru_sequence_backward(&params.gru, &cache.gru_input, &cache.gru, dgru, &mut grads.gru)?;
    if let (Some(ap), Some(ac)) = (&params.attention, &cache.attention) {
        let ag = grads
            .attention
            .as_mut()
            .ok_or_else(|| Error::shape("vtnet backward", "gradient buffer lacks attention"))?;
        self_attention_backward(ap, ac, &dgru_input, ag)?;
    }
    Ok(())
}

fn probs_of(logits: [f64; 2]) -> [f64; 2] {
    let m = logits[0].max(logits[1]);
    let e = [(logits[0] - m).exp(), (logits[1] - m).exp()];
    let s = e[0] + e[1];
    [e[0] / s, e[1] / s]
}

#[derive(Debug, Clone)]
pub struct BatchCache {
    pub items: Vec<ItemCache>,
    pub probs: Tensor,
}

/// Batched forward pass. Dropout masks are drawn from `rng` in item order
/// when `train` is set.
pub fn forward<R: Rng + ?Sized>(
    params: &VTNetParams,
    config: &VTNetConfig,
    batch: &[Datapoint],
    train: bool,
    rng: &mut R,
) -> Result<(Tensor, BatchCache)> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("vtnet forward batch"));
    }
    let mut items = Vec::with_capacity(batch.len());
    let mut probs = Vec::with_capacity(batch.len() * 2);
    for dp in batch {
        let input = ModelInput::from_datapoint(dp)?;
        let mask = (train && config.dropout > 0.0)
            .then(|| dropout_mask(config.fusion_input(), config.dropout, rng));
        let cache = forward_item(params, config, &input, mask)?;
        probs.extend(probs_of(cache.logits));
        items.push(cache);
    }
    let probs = Tensor::new(vec![batch.len(), 2], probs)?;
    Ok((probs.clone(), BatchCache { items, probs }))
}

/// Mean cross-entropy of a batch and its gradient.
pub fn backward(params: &VTNetParams, cache: &BatchCache, labels: &[Label]) -> Result<(f64, VTNetParams)> {
    let n = cache.items.len();
    if labels.len() != n {
        return Err(Error::shape("vtnet backward", "label count"));
    }
    let classes: Vec<usize> = labels.iter().map(|l| l.class_index()).collect();
    let logits: Vec<f64> = cache.items.iter().flat_map(|c| c.logits).collect();
    let (probs, loss) = softmax_xent(&Tensor::new(vec![n, 2], logits)?, &classes)?;
    let mut grads = params.zeros_like();
    for ((item, p), &class) in cache.items.iter().zip(probs.data().chunks_exact(2)).zip(&classes) {
        let mut d = [p[0] / n as f64, p[1] / n as f64];
        d[class] -= 1.0 / n as f64;
        backward_item(params, item, d, &mut grads)?;
    }
    Ok((loss, grads))
}

/// Class decision and patient probability for one datapoint, dropout off.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub label: Label,
    pub p_patient: f64,
}

impl Prediction {
    /// Argmax over `(patient, control)`; an exact tie predicts control.
    pub fn from_probs(probs: [f64; 2]) -> Self {
        let label = if probs[0] > probs[1] { Label::Patient } else { Label::Control };
        Prediction {
            label,
            p_patient: probs[0],
        }
    }
}

pub fn predict_input(params: &VTNetParams, config: &VTNetConfig, input: &ModelInput) -> Result<Prediction> {
    let cache = forward_item(params, config, input, None)?;
    Ok(Prediction::from_probs(probs_of(cache.logits)))
}

pub fn predict(params: &VTNetParams, config: &VTNetConfig, dp: &Datapoint) -> Result<Prediction> {
    predict_input(params, config, &ModelInput::from_datapoint(dp)?)
}
