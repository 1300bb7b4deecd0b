//! Valid-padding, stride-1 2-D cross-correlation and 2x2 max pooling over
//! `channels x height x width` tensors.

use rand::Rng;

use super::params::{glorot_uniform, join, Parameters};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2dParams {
    /// `out x in x kh x kw`
    pub kernels: Tensor,
    pub bias: Tensor,
}

impl Conv2dParams {
    pub fn init<R: Rng + ?Sized>(c_in: usize, c_out: usize, kh: usize, kw: usize, rng: &mut R) -> Self {
        let field = kh * kw;
        Conv2dParams {
            kernels: glorot_uniform(&[c_out, c_in, kh, kw], c_in * field, c_out * field, rng),
            bias: Tensor::zeros(&[c_out]),
        }
    }

    fn dims(&self) -> (usize, usize, usize, usize) {
        let s = self.kernels.shape();
        (s[0], s[1], s[2], s[3])
    }
}

impl Parameters for Conv2dParams {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        f(join(prefix, "kernels"), &self.kernels);
        f(join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        f(&mut self.kernels);
        f(&mut self.bias);
    }
}

fn chw(x: &Tensor, op: &'static str) -> Result<(usize, usize, usize)> {
    match x.shape()[..] {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(Error::shape(op, format!("expected C x H x W, got {:?}", x.shape()))),
    }
}

/// Output shape `(out, H - kh + 1, W - kw + 1)`.
pub fn conv2d_output_shape(h: usize, w: usize, kh: usize, kw: usize) -> Option<(usize, usize)> {
    (kh <= h && kw <= w).then(|| (h - kh + 1, w - kw + 1))
}

fn check_conv(x: &Tensor, p: &Conv2dParams, op: &'static str) -> Result<(usize, usize, usize, usize, usize, usize, usize)> {
    let (c_in, h, w) = chw(x, op)?;
    let (c_out, k_in, kh, kw) = p.dims();
    if k_in != c_in || p.bias.len() != c_out {
        return Err(Error::shape(
            op,
            format!("input has {c_in} channels, kernels {:?}", p.kernels.shape()),
        ));
    }
    let (oh, ow) = conv2d_output_shape(h, w, kh, kw)
        .ok_or_else(|| Error::shape(op, format!("kernel {kh}x{kw} larger than input {h}x{w}")))?;
    Ok((c_in, h, w, c_out, kh, kw, oh * ow))
}

pub fn conv2d(x: &Tensor, p: &Conv2dParams) -> Result<Tensor> {
    let (c_in, h, w, c_out, kh, kw, _) = check_conv(x, p, "conv2d")?;
    let (oh, ow) = (h - kh + 1, w - kw + 1);
    let xd = x.data();
    let kd = p.kernels.data();
    let mut out = vec![0.0; c_out * oh * ow];
    for o in 0..c_out {
        let plane = &mut out[o * oh * ow..(o + 1) * oh * ow];
        plane.fill(p.bias.data()[o]);
        for c in 0..c_in {
            let xin = &xd[c * h * w..(c + 1) * h * w];
            for i in 0..kh {
                for j in 0..kw {
                    let k = kd[((o * c_in + c) * kh + i) * kw + j];
                    for y in 0..oh {
                        let src = &xin[(y + i) * w + j..(y + i) * w + j + ow];
                        let dst = &mut plane[y * ow..(y + 1) * ow];
                        dst.iter_mut().zip(src).for_each(|(d, s)| *d += k * s);
                    }
                }
            }
        }
    }
    Tensor::new(vec![c_out, oh, ow], out)?.debug_check("conv2d")
}

/// Accumulates kernel and bias gradients; returns the input gradient.
pub fn conv2d_backward(x: &Tensor, p: &Conv2dParams, dy: &Tensor, grads: &mut Conv2dParams) -> Result<Tensor> {
    let (c_in, h, w, c_out, kh, kw, _) = check_conv(x, p, "conv2d_backward")?;
    let (oh, ow) = (h - kh + 1, w - kw + 1);
    if dy.shape() != [c_out, oh, ow] {
        return Err(Error::shape(
            "conv2d_backward",
            format!("upstream gradient {:?}, expected {:?}", dy.shape(), [c_out, oh, ow]),
        ));
    }
    let xd = x.data();
    let kd = p.kernels.data();
    let dyd = dy.data();
    let mut dx = vec![0.0; c_in * h * w];
    let gk = grads.kernels.data_mut();
    for o in 0..c_out {
        let g = &dyd[o * oh * ow..(o + 1) * oh * ow];
        grads.bias.data_mut()[o] += g.iter().sum::<f64>();
        for c in 0..c_in {
            let xin = &xd[c * h * w..(c + 1) * h * w];
            let dxin = &mut dx[c * h * w..(c + 1) * h * w];
            for i in 0..kh {
                for j in 0..kw {
                    let kidx = ((o * c_in + c) * kh + i) * kw + j;
                    let k = kd[kidx];
                    let mut acc = 0.0;
                    for y in 0..oh {
                        let off = (y + i) * w + j;
                        let grow = &g[y * ow..(y + 1) * ow];
                        acc += grow
                            .iter()
                            .zip(&xin[off..off + ow])
                            .map(|(a, b)| a * b)
                            .sum::<f64>();
                        dxin[off..off + ow]
                            .iter_mut()
                            .zip(grow)
                            .for_each(|(d, gv)| *d += k * gv);
                    }
                    gk[kidx] += acc;
                }
            }
        }
    }
    Tensor::new(vec![c_in, h, w], dx)?.debug_check("conv2d_backward")
}

/// Argmax positions (flat input indices) of a 2x2 max pool.
#[derive(Debug, Clone)]
pub struct MaxPoolCache {
    input_shape: Vec<usize>,
    argmax: Vec<usize>,
}

/// 2x2 windows, stride 2; a trailing odd row or column is dropped. Ties go
/// to the first element in row-major window order.
pub fn maxpool2(x: &Tensor) -> Result<(Tensor, MaxPoolCache)> {
    let (c, h, w) = chw(x, "maxpool2")?;
    if h < 2 || w < 2 {
        return Err(Error::shape("maxpool2", format!("input {h}x{w} smaller than 2x2")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let xd = x.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut argmax = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let base = ch * h * w;
        for y in 0..oh {
            for xx in 0..ow {
                let top = base + 2 * y * w + 2 * xx;
                let mut best = top;
                for idx in [top + 1, top + w, top + w + 1] {
                    if xd[idx] > xd[best] {
                        best = idx;
                    }
                }
                out.push(xd[best]);
                argmax.push(best);
            }
        }
    }
    let y = Tensor::new(vec![c, oh, ow], out)?;
    Ok((
        y,
        MaxPoolCache {
            input_shape: x.shape().to_vec(),
            argmax,
        },
    ))
}

pub fn maxpool2_backward(cache: &MaxPoolCache, dy: &Tensor) -> Result<Tensor> {
    if dy.len() != cache.argmax.len() {
        return Err(Error::shape("maxpool2_backward", "upstream gradient size"));
    }
    let mut dx = Tensor::zeros(&cache.input_shape);
    let d = dx.data_mut();
    for (&idx, &g) in cache.argmax.iter().zip(dy.data()) {
        d[idx] += g;
    }
    Ok(dx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_kernel_is_identity() {
        let x = Tensor::from_fn(&[1, 4, 5], |i| i as f64 * 0.5 - 3.0);
        let p = Conv2dParams {
            kernels: Tensor::new(vec![1, 1, 1, 1], vec![1.0]).unwrap(),
            bias: Tensor::zeros(&[1]),
        };
        assert_eq!(conv2d(&x, &p).unwrap(), x);
    }

    #[test]
    fn ones_kernel_sums_windows() {
        let x = Tensor::from_fn(&[1, 3, 3], |_| 1.0);
        let p = Conv2dParams {
            kernels: Tensor::from_fn(&[1, 1, 2, 2], |_| 1.0),
            bias: Tensor::zeros(&[1]),
        };
        let y = conv2d(&x, &p).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2]);
        assert_eq!(y.data(), &[4.0; 4]);
    }

    #[test]
    fn kernel_larger_than_input_fails() {
        let x = Tensor::zeros(&[1, 2, 2]);
        let p = Conv2dParams {
            kernels: Tensor::zeros(&[1, 1, 3, 3]),
            bias: Tensor::zeros(&[1]),
        };
        assert!(conv2d(&x, &p).is_err());
    }

    #[test]
    fn pool_single_window() {
        let x = Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, _) = maxpool2(&x).unwrap();
        assert_eq!(y.data(), &[4.0]);
        assert!(maxpool2(&Tensor::zeros(&[1, 1, 4])).is_err());
    }

    #[test]
    fn pool_drops_odd_edge_and_breaks_ties_first() {
        let x = Tensor::from_fn(&[2, 5, 5], |_| 1.0);
        let (y, cache) = maxpool2(&x).unwrap();
        assert_eq!(y.shape(), &[2, 2, 2]);
        let dx = maxpool2_backward(&cache, &Tensor::from_fn(&[2, 2, 2], |_| 1.0)).unwrap();
        let hot: Vec<usize> = dx
            .data()
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(hot, vec![0, 2, 10, 12, 25, 27, 35, 37]);
    }
}
