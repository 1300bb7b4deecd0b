//! Finite-difference checks of every differentiable kernel and of the tiny
//! end-to-end network.
//!
//! Each kernel is reduced to a scalar through a random linear functional
//! `sum(c * y)`, so the upstream gradient is `c`. Parameters and inputs are
//! checked together.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::gazedata::CHANNELS;
use crate::gradcore::{
    conv2d, conv2d_backward, finite_diff_check, gru_sequence, gru_sequence_backward, linear, linear_backward,
    maxpool2, maxpool2_backward, relu, relu_backward, self_attention, self_attention_backward, sigmoid,
    sigmoid_backward, softmax_xent, softmax_xent_backward, tanh, tanh_backward, AttentionParams, Conv2dParams,
    GruParams, LinearParams, Parameters, Tensor,
};
use crate::vtnet::model::{backward_item, forward_item, ModelInput};
use crate::vtnet::{VTNetConfig, VTNetParams};

pub const STATELESS_THRESHOLD: f64 = 1e-6;
pub const RECURRENT_THRESHOLD: f64 = 1e-5;
pub const END_TO_END_THRESHOLD: f64 = 1e-4;
pub const EPS: f64 = crate::gradcore::gradcheck::DEFAULT_EPS;

/// Deliberate corruption of one backward pass, for testing the checker.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Negates the analytic gradient of the linear layer.
    LinearSignFlip,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub threshold: f64,
    pub coordinates: usize,
    pub passed: bool,
}

/// Coordinates whose true gradient is identically zero. Their central
/// differences are pure roundoff, so they are checked in absolute terms.
pub const ZERO_ANALYTIC_TOLERANCE: f64 = 1e-12;
pub const ZERO_NUMERIC_TOLERANCE: f64 = 1e-8;

fn record(name: &str, threshold: f64, theta: &[f64], analytic: &[f64], loss: impl FnMut(&[f64]) -> f64) -> LayerCheck {
    record_with_zero(name, threshold, theta, analytic, &[], loss)
}

fn record_with_zero(
    name: &str,
    threshold: f64,
    theta: &[f64],
    analytic: &[f64],
    zero: &[Range<usize>],
    mut loss: impl FnMut(&[f64]) -> f64,
) -> LayerCheck {
    let is_zero = |i: usize| zero.iter().any(|r| r.contains(&i));
    let keep: Vec<usize> = (0..theta.len()).filter(|&i| !is_zero(i)).collect();
    let sub_x: Vec<f64> = keep.iter().map(|&i| theta[i]).collect();
    let sub_a: Vec<f64> = keep.iter().map(|&i| analytic[i]).collect();
    let mut full = theta.to_vec();
    let r = finite_diff_check(
        |s| {
            for (&i, &v) in keep.iter().zip(s) {
                full[i] = v;
            }
            loss(&full)
        },
        &sub_x,
        &sub_a,
        EPS,
    );
    let mut zero_ok = true;
    let mut point = theta.to_vec();
    for i in (0..theta.len()).filter(|&i| is_zero(i)) {
        point[i] = theta[i] + EPS;
        let plus = loss(&point);
        point[i] = theta[i] - EPS;
        let minus = loss(&point);
        point[i] = theta[i];
        let numeric = (plus - minus) / (2.0 * EPS);
        zero_ok &= analytic[i].abs() <= ZERO_ANALYTIC_TOLERANCE && numeric.abs() <= ZERO_NUMERIC_TOLERANCE;
    }
    LayerCheck {
        name: name.to_string(),
        max_rel_error: r.max_rel_error,
        threshold,
        coordinates: theta.len(),
        passed: r.max_rel_error < threshold && zero_ok,
    }
}

/// Flat index range of the named array within `p`.
fn param_range<P: Parameters>(p: &P, name: &str) -> Range<usize> {
    let mut offset = 0;
    let mut found = None;
    p.visit("", &mut |n, t| {
        if n == name {
            found = Some(offset..offset + t.len());
        }
        offset += t.len();
    });
    found.unwrap_or_else(|| panic!("no parameter named {name}"))
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-scale..scale))
}

fn functional(y: &Tensor, c: &Tensor) -> f64 {
    y.data().iter().zip(c.data()).map(|(a, b)| a * b).sum()
}

/// `theta = params ++ input`.
fn pack<P: Parameters>(p: &P, x: &Tensor) -> Vec<f64> {
    let mut v = p.to_flat();
    v.extend_from_slice(x.data());
    v
}

fn unpack<P: Parameters>(template: &P, x: &Tensor, theta: &[f64]) -> (P, Tensor) {
    let n = template.num_values();
    let mut p = template.clone();
    p.assign_flat(&theta[..n]);
    let x = Tensor::new(x.shape().to_vec(), theta[n..].to_vec()).expect("same shape");
    (p, x)
}

/// Distinct values spaced far beyond the finite-difference step, so no
/// pooling window changes its argmax under perturbation.
fn tie_free(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let mut ranks: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        ranks.swap(i, rng.random_range(0..=i));
    }
    Tensor::new(shape.to_vec(), ranks.iter().map(|&r| r as f64 * 0.01 - 0.3).collect()).expect("shape")
}

/// Values bounded away from the relu kink.
fn kink_free(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let v: f64 = rng.random_range(0.05..1.0);
        if rng.random::<bool>() { v } else { -v }
    })
}

fn check_linear(rng: &mut ChaCha8Rng, fault: Option<Fault>) -> Result<LayerCheck> {
    let p = LinearParams::init(3, 2, rng);
    let mut p = p;
    p.bias = uniform(rng, &[2], 0.5);
    let x = uniform(rng, &[4, 3], 1.0);
    let c = uniform(rng, &[4, 2], 1.0);
    let mut g = p.zeros_like();
    let dx = linear_backward(&x, &p, &c, &mut g)?;
    let mut analytic = pack(&g, &dx);
    if fault == Some(Fault::LinearSignFlip) {
        analytic.iter_mut().for_each(|v| *v = -*v);
    }
    let theta = pack(&p, &x);
    Ok(record("linear", STATELESS_THRESHOLD, &theta, &analytic, |t| {
        let (p, x) = unpack(&p, &x, t);
        functional(&linear(&x, &p).expect("shapes"), &c)
    }))
}

fn check_conv(rng: &mut ChaCha8Rng) -> Result<LayerCheck> {
    let mut p = Conv2dParams::init(2, 3, 3, 3, rng);
    p.bias = uniform(rng, &[3], 0.5);
    let x = uniform(rng, &[2, 6, 7], 1.0);
    let c = uniform(rng, &[3, 4, 5], 1.0);
    let mut g = p.zeros_like();
    let dx = conv2d_backward(&x, &p, &c, &mut g)?;
    let theta = pack(&p, &x);
    Ok(record("conv2d", STATELESS_THRESHOLD, &theta, &pack(&g, &dx), |t| {
        let (p, x) = unpack(&p, &x, t);
        functional(&conv2d(&x, &p).expect("shapes"), &c)
    }))
}

fn check_maxpool(rng: &mut ChaCha8Rng) -> Result<LayerCheck> {
    let x = tie_free(rng, &[2, 5, 6]);
    let c = uniform(rng, &[2, 2, 3], 1.0);
    let (_, cache) = maxpool2(&x)?;
    let dx = maxpool2_backward(&cache, &c)?;
    Ok(record("maxpool2", STATELESS_THRESHOLD, x.data(), dx.data(), |t| {
        let x = Tensor::new(vec![2, 5, 6], t.to_vec()).expect("shape");
        functional(&maxpool2(&x).expect("shape").0, &c)
    }))
}

fn check_elementwise(
    rng: &mut ChaCha8Rng,
    name: &str,
    f: fn(&Tensor) -> Tensor,
    df: impl Fn(&Tensor, &Tensor, &Tensor) -> Tensor,
) -> LayerCheck {
    let x = kink_free(rng, &[3, 5]);
    let c = uniform(rng, &[3, 5], 1.0);
    let y = f(&x);
    let dx = df(&x, &y, &c);
    record(name, STATELESS_THRESHOLD, x.data(), dx.data(), |t| {
        functional(&f(&Tensor::new(vec![3, 5], t.to_vec()).expect("shape")), &c)
    })
}

fn check_softmax_xent(rng: &mut ChaCha8Rng) -> Result<LayerCheck> {
    let logits = uniform(rng, &[5, 2], 3.0);
    let labels: Vec<usize> = (0..5).map(|_| rng.random_range(0..2)).collect();
    let (probs, _) = softmax_xent(&logits, &labels)?;
    let d = softmax_xent_backward(&probs, &labels)?;
    Ok(record("softmax_xent", STATELESS_THRESHOLD, logits.data(), d.data(), |t| {
        softmax_xent(&Tensor::new(vec![5, 2], t.to_vec()).expect("shape"), &labels)
            .expect("labels")
            .1
    }))
}

fn gru_params(rng: &mut ChaCha8Rng, input: usize, hidden: usize) -> GruParams {
    let mut p = GruParams::init(input, hidden, rng);
    for b in [&mut p.b_z, &mut p.b_r, &mut p.b_n] {
        *b = uniform(rng, &[hidden], 0.5);
    }
    p
}

fn check_gru(rng: &mut ChaCha8Rng, name: &str, valid: usize, padded: usize) -> Result<LayerCheck> {
    let hidden = 4;
    let p = gru_params(rng, CHANNELS, hidden);
    let t = valid + padded;
    let x = uniform(rng, &[t, CHANNELS], 1.0);
    let mask: Vec<bool> = (0..t).map(|i| i < valid).collect();
    let c: Vec<f64> = (0..hidden).map(|_| rng.random_range(-1.0..1.0)).collect();
    let (_, cache) = gru_sequence(&p, &x, &mask)?;
    let mut g = p.zeros_like();
    let dx = gru_sequence_backward(&p, &x, &cache, &c, &mut g)?;
    let theta = pack(&p, &x);
    Ok(record(name, RECURRENT_THRESHOLD, &theta, &pack(&g, &dx), |th| {
        let (p, x) = unpack(&p, &x, th);
        let (h, _) = gru_sequence(&p, &x, &mask).expect("shapes");
        h.iter().zip(&c).map(|(a, b)| a * b).sum()
    }))
}

fn attention_params(rng: &mut ChaCha8Rng, dim: usize) -> AttentionParams {
    let mut p = AttentionParams::init(dim, rng);
    for l in [&mut p.query, &mut p.key, &mut p.value, &mut p.output] {
        l.bias = uniform(rng, &[dim], 0.5);
    }
    p
}

fn check_attention(rng: &mut ChaCha8Rng, name: &str, valid: usize, padded: usize) -> Result<LayerCheck> {
    let p = attention_params(rng, CHANNELS);
    let t = valid + padded;
    let x = uniform(rng, &[t, CHANNELS], 1.5);
    let mask: Vec<bool> = (0..t).map(|i| i < valid).collect();
    let c = uniform(rng, &[t, CHANNELS], 1.0);
    let (_, cache) = self_attention(&p, &x, &mask)?;
    let mut g = p.zeros_like();
    let dx = self_attention_backward(&p, &cache, &c, &mut g)?;
    let theta = pack(&p, &x);
    // The key bias adds a constant to every score in a row, which the
    // softmax cancels.
    let key_bias = param_range(&p, "key.bias");
    Ok(record_with_zero(name, RECURRENT_THRESHOLD, &theta, &pack(&g, &dx), &[key_bias], |th| {
        let (p, x) = unpack(&p, &x, th);
        functional(&self_attention(&p, &x, &mask).expect("shapes").0, &c)
    }))
}

/// Random inputs for the tiny network: `T = 12` sequences and scanpath-like
/// images with values in `[0, 1]`.
pub fn tiny_inputs(config: &VTNetConfig, rng: &mut ChaCha8Rng, count: usize) -> Vec<ModelInput> {
    (0..count)
        .map(|_| ModelInput {
            seq: uniform(rng, &[12, CHANNELS], 1.5),
            mask: vec![true; 12],
            image: Tensor::from_fn(&[1, config.image_height, config.image_width], |_| rng.random::<f64>()),
        })
        .collect()
}

fn batch_loss(params: &VTNetParams, config: &VTNetConfig, inputs: &[ModelInput], labels: &[usize]) -> f64 {
    let logits: Vec<f64> = inputs
        .iter()
        .flat_map(|i| forward_item(params, config, i, None).expect("tiny forward").logits)
        .collect();
    softmax_xent(&Tensor::new(vec![inputs.len(), 2], logits).expect("shape"), labels)
        .expect("labels")
        .1
}

fn check_vtnet(rng: &mut ChaCha8Rng, attention: bool) -> Result<LayerCheck> {
    let config = VTNetConfig::tiny().with_attention(attention);
    let mut params = VTNetParams::init(&config, rng.random())?;
    // non-zero biases exercise every bias gradient
    params.visit_mut(&mut |t| {
        if t.shape().len() == 1 {
            t.data_mut().iter_mut().for_each(|v| *v = rng.random_range(0.0..0.2));
        }
    });
    let inputs = tiny_inputs(&config, rng, 2);
    let labels = [0usize, 1];
    let n = inputs.len() as f64;
    let mut grads = params.zeros_like();
    for (input, &label) in inputs.iter().zip(&labels) {
        let cache = forward_item(&params, &config, input, None)?;
        let (probs, _) = softmax_xent(&Tensor::new(vec![1, 2], cache.logits.to_vec())?, &[label])?;
        let mut d = [probs.data()[0] / n, probs.data()[1] / n];
        d[label] -= 1.0 / n;
        backward_item(&params, &cache, d, &mut grads)?;
    }
    let name = if attention { "vtnet_tiny_att" } else { "vtnet_tiny" };
    let theta = params.to_flat();
    let zero: Vec<Range<usize>> = attention.then(|| param_range(&params, "attention.key.bias")).into_iter().collect();
    Ok(record_with_zero(name, END_TO_END_THRESHOLD, &theta, &grads.to_flat(), &zero, |th| {
        let mut p = params.clone();
        p.assign_flat(th);
        batch_loss(&p, &config, &inputs, &labels)
    }))
}

/// Every check, in a fixed order, from one seed.
pub fn run_gradsuite(seed: u64, fault: Option<Fault>) -> Result<Vec<LayerCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rng = &mut rng;
    Ok(vec![
        check_linear(rng, fault)?,
        check_conv(rng)?,
        check_maxpool(rng)?,
        check_elementwise(rng, "relu", relu, |x, _, d| relu_backward(x, d)),
        check_elementwise(rng, "sigmoid", sigmoid, |_, y, d| sigmoid_backward(y, d)),
        check_elementwise(rng, "tanh", tanh, |_, y, d| tanh_backward(y, d)),
        check_softmax_xent(rng)?,
        check_gru(rng, "gru_5_steps", 5, 0)?,
        check_gru(rng, "gru_padded", 4, 2)?,
        check_attention(rng, "attention", 8, 0)?,
        check_attention(rng, "attention_padded", 6, 2)?,
        check_vtnet(rng, false)?,
        check_vtnet(rng, true)?,
    ])
}
