//! Single-head scaled dot-product self-attention with key padding mask.
//! No residual connection and no normalization: the output replaces the
//! input sequence.

use rand::Rng;

use super::gru::valid_length;
use super::linear::{linear, linear_backward, LinearParams};
use super::loss::softmax_in_place;
use super::params::{join, Parameters};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub query: LinearParams,
    pub key: LinearParams,
    pub value: LinearParams,
    pub output: LinearParams,
}

impl AttentionParams {
    pub fn init<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        AttentionParams {
            query: LinearParams::init(dim, dim, rng),
            key: LinearParams::init(dim, dim, rng),
            value: LinearParams::init(dim, dim, rng),
            output: LinearParams::init(dim, dim, rng),
        }
    }

    pub fn dim(&self) -> usize {
        self.query.inputs()
    }
}

impl Parameters for AttentionParams {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        self.query.visit(&join(prefix, "query"), f);
        self.key.visit(&join(prefix, "key"), f);
        self.value.visit(&join(prefix, "value"), f);
        self.output.visit(&join(prefix, "output"), f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        self.query.visit_mut(f);
        self.key.visit_mut(f);
        self.value.visit_mut(f);
        self.output.visit_mut(f);
    }
}

#[derive(Debug, Clone)]
pub struct AttentionCache {
    total_steps: usize,
    valid: usize,
    x: Tensor,
    q: Tensor,
    /// Keys and values stored transposed (`D x valid`) so the per-row
    /// loops run over time steps.
    kt: Vec<f64>,
    vt: Vec<f64>,
    weights: Vec<f64>,
    context: Tensor,
}

impl AttentionCache {
    /// Row-stochastic `valid x valid` attention weights. Padded keys are
    /// excluded, so their weight is exactly zero.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn valid_steps(&self) -> usize {
        self.valid
    }
}

fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    for (r, row) in a.chunks_exact(cols).enumerate() {
        for (c, &v) in row.iter().enumerate() {
            out[c * rows + r] = v;
        }
    }
    out
}

#[inline]
fn axpy(out: &mut [f64], alpha: f64, x: &[f64]) {
    for (o, &v) in out.iter_mut().zip(x) {
        *o += alpha * v;
    }
}

/// Dot product with four independent accumulators.
#[inline]
fn dot4(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for lane in 0..4 {
            acc[lane] += x[lane] * y[lane];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Returns a `T x D` tensor; rows at padded positions are zero.
pub fn self_attention(p: &AttentionParams, x: &Tensor, mask: &[bool]) -> Result<(Tensor, AttentionCache)> {
    let d = p.dim();
    let (t, _) = x.expect_2d("self_attention", Some(mask.len()), Some(d))?;
    let l = valid_length(mask, "self_attention")?;
    let xv = Tensor::new(vec![l, d], x.data()[..l * d].to_vec())?;
    let q = linear(&xv, &p.query)?;
    let kt = transpose(linear(&xv, &p.key)?.data(), l, d);
    let vt = transpose(linear(&xv, &p.value)?.data(), l, d);
    let scale = 1.0 / (d as f64).sqrt();
    let mut weights = vec![0.0; l * l];
    let mut context = vec![0.0; l * d];
    for (i, row) in weights.chunks_exact_mut(l).enumerate() {
        for c in 0..d {
            axpy(row, q.data()[i * d + c] * scale, &kt[c * l..(c + 1) * l]);
        }
        softmax_in_place(row);
        for c in 0..d {
            context[i * d + c] = dot4(row, &vt[c * l..(c + 1) * l]);
        }
    }
    let context = Tensor::new(vec![l, d], context)?;
    let out_valid = linear(&context, &p.output)?;
    let mut out = out_valid.into_data();
    out.resize(t * d, 0.0);
    let out = Tensor::new(vec![t, d], out)?.debug_check("self_attention")?;
    Ok((
        out,
        AttentionCache {
            total_steps: t,
            valid: l,
            x: xv,
            q,
            kt,
            vt,
            weights,
            context,
        },
    ))
}

pub fn self_attention_backward(
    p: &AttentionParams,
    cache: &AttentionCache,
    dout: &Tensor,
    grads: &mut AttentionParams,
) -> Result<Tensor> {
    let d = p.dim();
    let (t, l) = (cache.total_steps, cache.valid);
    if dout.shape() != [t, d] {
        return Err(Error::shape("self_attention_backward", "upstream gradient shape"));
    }
    let d_out = Tensor::new(vec![l, d], dout.data()[..l * d].to_vec())?;
    let d_context = linear_backward(&cache.context, &p.output, &d_out, &mut grads.output)?;
    let scale = 1.0 / (d as f64).sqrt();
    let (kt, vt, q) = (&cache.kt, &cache.vt, cache.q.data());
    let mut dq = vec![0.0; l * d];
    let mut dkt = vec![0.0; d * l];
    let mut dvt = vec![0.0; d * l];
    let mut ds = vec![0.0; l];
    for (i, a) in cache.weights.chunks_exact(l).enumerate() {
        let dc = &d_context.data()[i * d..(i + 1) * d];
        ds.fill(0.0);
        for c in 0..d {
            axpy(&mut ds, dc[c], &vt[c * l..(c + 1) * l]);
            axpy(&mut dvt[c * l..(c + 1) * l], dc[c], a);
        }
        // Softmax backward, folded with the score scale.
        let inner = dot4(&ds, a);
        for (g, &w) in ds.iter_mut().zip(a) {
            *g = w * (*g - inner) * scale;
        }
        for c in 0..d {
            dq[i * d + c] = dot4(&ds, &kt[c * l..(c + 1) * l]);
            axpy(&mut dkt[c * l..(c + 1) * l], q[i * d + c], &ds);
        }
    }
    let dq = Tensor::new(vec![l, d], dq)?;
    let dk = Tensor::new(vec![l, d], transpose(&dkt, d, l))?;
    let dv = Tensor::new(vec![l, d], transpose(&dvt, d, l))?;
    let mut dx = linear_backward(&cache.x, &p.query, &dq, &mut grads.query)?;
    dx.add_assign(&linear_backward(&cache.x, &p.key, &dk, &mut grads.key)?);
    dx.add_assign(&linear_backward(&cache.x, &p.value, &dv, &mut grads.value)?);
    let mut full = dx.into_data();
    full.resize(t * d, 0.0);
    Tensor::new(vec![t, d], full)?.debug_check("self_attention_backward")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params(seed: u64) -> AttentionParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = AttentionParams::init(6, &mut rng);
        for (i, v) in p.value.bias.data_mut().iter_mut().enumerate() {
            *v = 0.1 * i as f64;
        }
        p.output.bias.data_mut()[2] = -0.3;
        p
    }

    fn project(x: &Tensor, lp: &LinearParams) -> Tensor {
        linear(x, lp).unwrap()
    }

    #[test]
    fn single_step_attends_to_itself() {
        let p = params(1);
        let x = Tensor::from_fn(&[1, 6], |i| i as f64 - 2.5);
        let (out, cache) = self_attention(&p, &x, &[true]).unwrap();
        assert_eq!(cache.weights(), &[1.0]);
        let expected = project(&project(&x, &p.value), &p.output);
        for (a, b) in out.data().iter().zip(expected.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_query_key_gives_uniform_mean() {
        let mut p = params(2);
        p.query.weight.fill(0.0);
        p.key.weight.fill(0.0);
        let x = Tensor::from_fn(&[5, 6], |i| ((i * 7) % 11) as f64 * 0.3 - 1.0);
        let (out, cache) = self_attention(&p, &x, &[true; 5]).unwrap();
        assert!(cache.weights().iter().all(|&w| (w - 0.2).abs() < 1e-15));
        let v = project(&x, &p.value);
        let mut mean = vec![0.0; 6];
        for row in v.data().chunks(6) {
            mean.iter_mut().zip(row).for_each(|(m, r)| *m += r / 5.0);
        }
        let expected = project(&Tensor::new(vec![1, 6], mean).unwrap(), &p.output);
        for row in out.data().chunks(6) {
            for (a, b) in row.iter().zip(expected.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn masked_keys_get_no_weight_and_rows_sum_to_one() {
        let p = params(3);
        let x = Tensor::from_fn(&[8, 6], |i| (i as f64 * 0.37).sin());
        let mask: Vec<bool> = (0..8).map(|i| i < 5).collect();
        let (out, cache) = self_attention(&p, &x, &mask).unwrap();
        assert_eq!(cache.valid_steps(), 5);
        for row in cache.weights().chunks(5) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        let short = Tensor::new(vec![5, 6], x.data()[..30].to_vec()).unwrap();
        let (out_short, _) = self_attention(&p, &short, &[true; 5]).unwrap();
        assert_eq!(&out.data()[..30], out_short.data());
        assert!(out.data()[30..].iter().all(|&v| v == 0.0));
        assert!(self_attention(&p, &x, &[false; 8]).is_err());
    }
}
