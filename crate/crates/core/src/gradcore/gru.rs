//! Gated recurrent unit with the reset gate applied to `U_n h`:
//!
//! ```text
//! z = sigmoid(W_z x + U_z h + b_z)
//! r = sigmoid(W_r x + U_r h + b_r)
//! n = tanh(W_n x + r * (U_n h) + b_n)
//! h' = (1 - z) * n + z * h
//! ```

use rand::Rng;

use super::activation::sigmoid_scalar;
use super::params::{glorot_uniform, join, Parameters};
use super::tensor::{dot, Tensor};
use crate::error::{Error, Result};

/// `W_*: hidden x input`, `U_*: hidden x hidden`, `b_*: hidden`.
#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    pub w_z: Tensor,
    pub w_r: Tensor,
    pub w_n: Tensor,
    pub u_z: Tensor,
    pub u_r: Tensor,
    pub u_n: Tensor,
    pub b_z: Tensor,
    pub b_r: Tensor,
    pub b_n: Tensor,
}

impl GruParams {
    pub fn init<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let mut w = || glorot_uniform(&[hidden, input], input, hidden, rng);
        let (w_z, w_r, w_n) = (w(), w(), w());
        let mut u = || glorot_uniform(&[hidden, hidden], hidden, hidden, rng);
        let (u_z, u_r, u_n) = (u(), u(), u());
        GruParams {
            w_z,
            w_r,
            w_n,
            u_z,
            u_r,
            u_n,
            b_z: Tensor::zeros(&[hidden]),
            b_r: Tensor::zeros(&[hidden]),
            b_n: Tensor::zeros(&[hidden]),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_z.shape()[0]
    }

    pub fn input(&self) -> usize {
        self.w_z.shape()[1]
    }

    fn check(&self) -> Result<()> {
        let (h, i) = (self.hidden(), self.input());
        let ok = [&self.w_z, &self.w_r, &self.w_n].iter().all(|t| t.shape() == [h, i])
            && [&self.u_z, &self.u_r, &self.u_n].iter().all(|t| t.shape() == [h, h])
            && [&self.b_z, &self.b_r, &self.b_n].iter().all(|t| t.shape() == [h]);
        if ok {
            Ok(())
        } else {
            Err(Error::shape("gru", "inconsistent parameter shapes"))
        }
    }
}

impl Parameters for GruParams {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        for (name, t) in [
            ("w_z", &self.w_z),
            ("w_r", &self.w_r),
            ("w_n", &self.w_n),
            ("u_z", &self.u_z),
            ("u_r", &self.u_r),
            ("u_n", &self.u_n),
            ("b_z", &self.b_z),
            ("b_r", &self.b_r),
            ("b_n", &self.b_n),
        ] {
            f(join(prefix, name), t);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        for t in [
            &mut self.w_z,
            &mut self.w_r,
            &mut self.w_n,
            &mut self.u_z,
            &mut self.u_r,
            &mut self.u_n,
            &mut self.b_z,
            &mut self.b_r,
            &mut self.b_n,
        ] {
            f(t);
        }
    }
}

/// Intermediate values of one step needed by the backward pass.
#[derive(Debug, Clone)]
pub struct GruStepCache {
    pub h_prev: Vec<f64>,
    pub z: Vec<f64>,
    pub r: Vec<f64>,
    pub n: Vec<f64>,
    /// `U_n h_prev`
    pub un: Vec<f64>,
}

fn step(p: &GruParams, x: &[f64], h_prev: &[f64]) -> (Vec<f64>, GruStepCache) {
    let (hd, id) = (p.hidden(), p.input());
    let (wz, wr, wn) = (p.w_z.data(), p.w_r.data(), p.w_n.data());
    let (uz, ur, un_w) = (p.u_z.data(), p.u_r.data(), p.u_n.data());
    let mut z = vec![0.0; hd];
    let mut r = vec![0.0; hd];
    let mut n = vec![0.0; hd];
    let mut un = vec![0.0; hd];
    let mut h = vec![0.0; hd];
    for j in 0..hd {
        let wrow = j * id..(j + 1) * id;
        let urow = j * hd..(j + 1) * hd;
        z[j] = sigmoid_scalar(dot(&wz[wrow.clone()], x) + dot(&uz[urow.clone()], h_prev) + p.b_z.data()[j]);
        r[j] = sigmoid_scalar(dot(&wr[wrow.clone()], x) + dot(&ur[urow.clone()], h_prev) + p.b_r.data()[j]);
        un[j] = dot(&un_w[urow], h_prev);
        n[j] = (dot(&wn[wrow], x) + r[j] * un[j] + p.b_n.data()[j]).tanh();
        h[j] = (1.0 - z[j]) * n[j] + z[j] * h_prev[j];
    }
    (
        h,
        GruStepCache {
            h_prev: h_prev.to_vec(),
            z,
            r,
            n,
            un,
        },
    )
}

pub fn gru_cell(p: &GruParams, x: &[f64], h_prev: &[f64]) -> Result<(Vec<f64>, GruStepCache)> {
    p.check()?;
    if x.len() != p.input() || h_prev.len() != p.hidden() {
        return Err(Error::shape(
            "gru_cell",
            format!("x {} / h {} vs params {}x{}", x.len(), h_prev.len(), p.hidden(), p.input()),
        ));
    }
    Ok(step(p, x, h_prev))
}

fn add_outer(g: &mut [f64], a: &[f64], b: &[f64]) {
    let m = b.len();
    for (row, &ai) in g.chunks_exact_mut(m).zip(a) {
        if ai != 0.0 {
            row.iter_mut().zip(b).for_each(|(gv, &bj)| *gv += ai * bj);
        }
    }
}

fn add_transposed_matvec(out: &mut [f64], w: &[f64], v: &[f64]) {
    let m = out.len();
    for (row, &vi) in w.chunks_exact(m).zip(v) {
        if vi != 0.0 {
            out.iter_mut().zip(row).for_each(|(o, &wij)| *o += vi * wij);
        }
    }
}

/// Accumulates parameter gradients, adds the input gradient into `dx` and
/// returns the gradient with respect to `h_prev`.
pub fn gru_cell_backward(
    p: &GruParams,
    x: &[f64],
    cache: &GruStepCache,
    dh: &[f64],
    grads: &mut GruParams,
    dx: &mut [f64],
) -> Vec<f64> {
    let hd = p.hidden();
    let mut da_z = vec![0.0; hd];
    let mut da_r = vec![0.0; hd];
    let mut da_n = vec![0.0; hd];
    let mut dun = vec![0.0; hd];
    let mut dh_prev = vec![0.0; hd];
    for j in 0..hd {
        let (z, r, n) = (cache.z[j], cache.r[j], cache.n[j]);
        let dn = dh[j] * (1.0 - z);
        let dz = dh[j] * (cache.h_prev[j] - n);
        dh_prev[j] = dh[j] * z;
        da_n[j] = dn * (1.0 - n * n);
        dun[j] = da_n[j] * r;
        da_r[j] = da_n[j] * cache.un[j] * r * (1.0 - r);
        da_z[j] = dz * z * (1.0 - z);
    }
    let h = &cache.h_prev;
    add_outer(grads.w_z.data_mut(), &da_z, x);
    add_outer(grads.w_r.data_mut(), &da_r, x);
    add_outer(grads.w_n.data_mut(), &da_n, x);
    add_outer(grads.u_z.data_mut(), &da_z, h);
    add_outer(grads.u_r.data_mut(), &da_r, h);
    add_outer(grads.u_n.data_mut(), &dun, h);
    for (g, d) in [
        (&mut grads.b_z, &da_z),
        (&mut grads.b_r, &da_r),
        (&mut grads.b_n, &da_n),
    ] {
        g.data_mut().iter_mut().zip(d).for_each(|(a, b)| *a += b);
    }
    add_transposed_matvec(&mut dh_prev, p.u_z.data(), &da_z);
    add_transposed_matvec(&mut dh_prev, p.u_r.data(), &da_r);
    add_transposed_matvec(&mut dh_prev, p.u_n.data(), &dun);
    add_transposed_matvec(dx, p.w_z.data(), &da_z);
    add_transposed_matvec(dx, p.w_r.data(), &da_r);
    add_transposed_matvec(dx, p.w_n.data(), &da_n);
    dh_prev
}

/// Number of leading `true` entries, after checking the mask is a run of
/// `true` followed only by `false`.
pub fn valid_length(mask: &[bool], op: &'static str) -> Result<usize> {
    let len = mask.iter().take_while(|&&m| m).count();
    if len == 0 {
        return Err(Error::InvalidArgument(format!("{op}: mask has no valid steps")));
    }
    if mask[len..].iter().any(|&m| m) {
        return Err(Error::InvalidArgument(format!(
            "{op}: mask must be valid steps followed by padding"
        )));
    }
    Ok(len)
}

#[derive(Debug, Clone)]
pub struct GruSequenceCache {
    steps: Vec<GruStepCache>,
    total_steps: usize,
}

/// Runs the cell from a zero state over the valid prefix of `x` (`T x input`)
/// and returns the state at the last valid step.
pub fn gru_sequence(p: &GruParams, x: &Tensor, mask: &[bool]) -> Result<(Vec<f64>, GruSequenceCache)> {
    p.check()?;
    let (t, _) = x.expect_2d("gru_sequence", Some(mask.len()), Some(p.input()))?;
    let len = valid_length(mask, "gru_sequence")?;
    let id = p.input();
    let mut h = vec![0.0; p.hidden()];
    let mut steps = Vec::with_capacity(len);
    for row in x.data().chunks_exact(id).take(len) {
        let (next, cache) = step(p, row, &h);
        steps.push(cache);
        h = next;
    }
    if cfg!(debug_assertions) && !h.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("gru_sequence".into()));
    }
    Ok((h, GruSequenceCache { steps, total_steps: t }))
}

/// Backpropagation through time. Padded steps receive zero gradient.
pub fn gru_sequence_backward(
    p: &GruParams,
    x: &Tensor,
    cache: &GruSequenceCache,
    dh_final: &[f64],
    grads: &mut GruParams,
) -> Result<Tensor> {
    let id = p.input();
    if x.shape() != [cache.total_steps, id] || dh_final.len() != p.hidden() {
        return Err(Error::shape("gru_sequence_backward", "input or gradient shape"));
    }
    let mut dx = Tensor::zeros(&[cache.total_steps, id]);
    let mut dh = dh_final.to_vec();
    for (t, step_cache) in cache.steps.iter().enumerate().rev() {
        let xt = &x.data()[t * id..(t + 1) * id];
        let dxt = &mut dx.data_mut()[t * id..(t + 1) * id];
        dh = gru_cell_backward(p, xt, step_cache, &dh, grads, dxt);
    }
    dx.debug_check("gru_sequence_backward")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero_params(input: usize, hidden: usize) -> GruParams {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        GruParams::init(input, hidden, &mut rng).zeros_like()
    }

    #[test]
    fn zero_parameters_keep_zero_state() {
        let p = zero_params(6, 4);
        let (h, cache) = gru_cell(&p, &[1.0, -2.0, 0.5, 3.0, 0.0, 1.0], &[0.0; 4]).unwrap();
        assert_eq!(h, vec![0.0; 4]);
        assert_eq!(cache.z, vec![0.5; 4]);
        assert_eq!(cache.n, vec![0.0; 4]);
    }

    #[test]
    fn half_update_gate_averages_with_zeroed_candidate() {
        // z = sigmoid(0) = 0.5 and n = tanh(0) = 0, so h = 0.5 * 2.
        let p = zero_params(1, 1);
        let (h, _) = gru_cell(&p, &[0.7], &[2.0]).unwrap();
        assert_eq!(h, vec![1.0]);
    }

    #[test]
    fn shape_errors() {
        let p = zero_params(6, 4);
        assert!(gru_cell(&p, &[0.0; 5], &[0.0; 4]).is_err());
        let x = Tensor::zeros(&[3, 6]);
        assert!(gru_sequence(&p, &x, &[false, false, false]).is_err());
        assert!(gru_sequence(&p, &x, &[true, false, true]).is_err());
        assert!(gru_sequence(&p, &x, &[true, true]).is_err());
    }

    #[test]
    fn single_step_sequence_is_one_cell() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = GruParams::init(6, 5, &mut rng);
        let x = Tensor::from_fn(&[1, 6], |i| i as f64 * 0.1);
        let (h, _) = gru_sequence(&p, &x, &[true]).unwrap();
        let (cell, _) = gru_cell(&p, x.data(), &[0.0; 5]).unwrap();
        assert_eq!(h, cell);
    }

    #[test]
    fn padding_does_not_change_final_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = GruParams::init(6, 5, &mut rng);
        let x = Tensor::from_fn(&[5, 6], |i| (i as f64).cos());
        let (h, _) = gru_sequence(&p, &x, &[true; 5]).unwrap();
        let mut padded = x.data().to_vec();
        padded.extend(std::iter::repeat_n(9.0, 4 * 6));
        let xp = Tensor::new(vec![9, 6], padded).unwrap();
        let mask: Vec<bool> = (0..9).map(|i| i < 5).collect();
        let (hp, _) = gru_sequence(&p, &xp, &mask).unwrap();
        assert_eq!(h, hp);
    }
}
