use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::VTNetConfig;
use super::model::{backward_item, dropout_mask, forward_item, ModelInput};
use super::params::VTNetParams;
use crate::error::{Error, Result};
use crate::gradcore::{softmax_xent, Adam, AdamConfig, Parameters, Tensor};
use crate::preprocess::Datapoint;
use crate::seed::derive_seed;

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters at the end of the epoch with the lowest mean loss.
    pub params: VTNetParams,
    /// Mean minibatch loss of every epoch.
    pub loss_history: Vec<f64>,
    pub best_epoch: usize,
}

impl TrainOutcome {
    pub fn best_loss(&self) -> f64 {
        self.loss_history[self.best_epoch]
    }
}

/// Shuffled minibatch Adam on mean softmax cross-entropy. Inputs are
/// expected to be normalized already.
pub fn train<R: Rng + ?Sized>(
    mut params: VTNetParams,
    data: &[Datapoint],
    config: &VTNetConfig,
    rng: &mut R,
) -> Result<TrainOutcome> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyInput("training set"));
    }
    let inputs: Vec<ModelInput> = data.iter().map(ModelInput::from_datapoint).collect::<Result<_>>()?;
    let classes: Vec<usize> = data.iter().map(|d| d.label.class_index()).collect();
    let mut adam = Adam::new(
        params.num_values(),
        AdamConfig {
            lr: config.learning_rate,
            ..AdamConfig::default()
        },
    );
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64, VTNetParams)> = None;

    for epoch in 0..config.epochs {
        order.shuffle(rng);
        let mut epoch_loss = 0.0;
        for (batch_no, batch) in order.chunks(config.batch_size).enumerate() {
            let n = batch.len() as f64;
            let mut grads = params.zeros_like();
            let mut batch_loss = 0.0;
            for &i in batch {
                let mask = (config.dropout > 0.0)
                    .then(|| dropout_mask(config.fusion_input(), config.dropout, rng));
                let cache = forward_item(&params, config, &inputs[i], mask)?;
                let logits = Tensor::new(vec![1, 2], cache.logits.to_vec())?;
                let (probs, loss) = softmax_xent(&logits, &classes[i..=i])?;
                let mut d = [probs.data()[0] / n, probs.data()[1] / n];
                d[classes[i]] -= 1.0 / n;
                backward_item(&params, &cache, d, &mut grads)?;
                batch_loss += loss;
            }
            if !batch_loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: batch_no,
                    loss: batch_loss / n,
                });
            }
            adam.step(&mut params, &grads)?;
            epoch_loss += batch_loss;
        }
        let mean = epoch_loss / data.len() as f64;
        history.push(mean);
        if best.as_ref().is_none_or(|(_, l, _)| mean < *l) {
            best = Some((epoch, mean, params.clone()));
        }
    }
    let (best_epoch, _, params) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        params,
        loss_history: history,
        best_epoch,
    })
}

/// Initializes from `derive_seed(seed, 0)` and trains with a shuffling and
/// dropout stream seeded by `derive_seed(seed, 1)`.
pub fn fit(data: &[Datapoint], config: &VTNetConfig, seed: u64) -> Result<TrainOutcome> {
    let params = VTNetParams::init(config, derive_seed(seed, 0))?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1));
    train(params, data, config, &mut rng)
}
