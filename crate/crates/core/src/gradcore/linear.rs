use rand::Rng;

use super::params::{glorot_uniform, join, Parameters};
use super::tensor::{matmul, matmul_nt, matmul_tn, Tensor};
use crate::error::{Error, Result};

/// Dense layer `y = x W + b` with `W: in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl LinearParams {
    pub fn init<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        LinearParams {
            weight: glorot_uniform(&[inputs, outputs], inputs, outputs, rng),
            bias: Tensor::zeros(&[outputs]),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[1]
    }
}

impl Parameters for LinearParams {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        f(join(prefix, "weight"), &self.weight);
        f(join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

pub fn linear(x: &Tensor, p: &LinearParams) -> Result<Tensor> {
    let (i, o) = (p.inputs(), p.outputs());
    let (n, _) = x.expect_2d("linear", None, Some(i))?;
    if p.bias.len() != o {
        return Err(Error::shape("linear", "bias length differs from output width"));
    }
    let mut y = matmul(x.data(), p.weight.data(), n, i, o);
    for row in y.chunks_exact_mut(o) {
        row.iter_mut().zip(p.bias.data()).for_each(|(v, b)| *v += b);
    }
    Tensor::new(vec![n, o], y)?.debug_check("linear")
}

/// Accumulates `dW = x^T dY` and `db = colsum(dY)` into `grads`; returns
/// `dX = dY W^T`.
pub fn linear_backward(x: &Tensor, p: &LinearParams, dy: &Tensor, grads: &mut LinearParams) -> Result<Tensor> {
    let (i, o) = (p.inputs(), p.outputs());
    let (n, _) = x.expect_2d("linear_backward", None, Some(i))?;
    dy.expect_2d("linear_backward", Some(n), Some(o))?;
    let dw = matmul_tn(x.data(), dy.data(), n, i, o);
    grads
        .weight
        .data_mut()
        .iter_mut()
        .zip(&dw)
        .for_each(|(g, d)| *g += d);
    for row in dy.data().chunks_exact(o) {
        grads
            .bias
            .data_mut()
            .iter_mut()
            .zip(row)
            .for_each(|(g, d)| *g += d);
    }
    let dx = matmul_nt(dy.data(), p.weight.data(), n, o, i);
    Tensor::new(vec![n, i], dx)?.debug_check("linear_backward")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_weight_passes_input() {
        let p = LinearParams {
            weight: Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
            bias: Tensor::zeros(&[2]),
        };
        let x = Tensor::new(vec![3, 2], vec![1.0, -2.0, 3.5, 4.0, 0.0, 7.0]).unwrap();
        assert_eq!(linear(&x, &p).unwrap(), x);
    }

    #[test]
    fn scalar_case() {
        let p = LinearParams {
            weight: Tensor::new(vec![1, 1], vec![3.0]).unwrap(),
            bias: Tensor::new(vec![1], vec![1.0]).unwrap(),
        };
        let x = Tensor::new(vec![1, 1], vec![2.0]).unwrap();
        assert_eq!(linear(&x, &p).unwrap().data(), &[7.0]);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let p = LinearParams {
            weight: Tensor::zeros(&[3, 2]),
            bias: Tensor::zeros(&[2]),
        };
        let x = Tensor::zeros(&[4, 2]);
        assert!(matches!(linear(&x, &p), Err(Error::ShapeMismatch { .. })));
    }
}
