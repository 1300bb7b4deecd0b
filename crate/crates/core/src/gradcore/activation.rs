//! Elementwise nonlinearities. Backward passes take whichever of the input
//! or output makes the derivative cheapest.

use super::tensor::Tensor;

#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn map(x: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    let mut y = x.clone();
    y.data_mut().iter_mut().for_each(|v| *v = f(*v));
    y
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    debug_assert_eq!(a.shape(), b.shape());
    let mut out = a.clone();
    out.data_mut()
        .iter_mut()
        .zip(b.data())
        .for_each(|(v, &d)| *v = f(*v, d));
    out
}

pub fn relu(x: &Tensor) -> Tensor {
    map(x, |v| v.max(0.0))
}

/// Takes the forward input `x`.
pub fn relu_backward(x: &Tensor, dy: &Tensor) -> Tensor {
    zip_map(x, dy, |v, d| if v > 0.0 { d } else { 0.0 })
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    map(x, sigmoid_scalar)
}

/// Takes the forward output `y`.
pub fn sigmoid_backward(y: &Tensor, dy: &Tensor) -> Tensor {
    zip_map(y, dy, |s, d| d * s * (1.0 - s))
}

pub fn tanh(x: &Tensor) -> Tensor {
    map(x, f64::tanh)
}

/// Takes the forward output `y`.
pub fn tanh_backward(y: &Tensor, dy: &Tensor) -> Tensor {
    zip_map(y, dy, |t, d| d * (1.0 - t * t))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64]) -> Tensor {
        Tensor::new(vec![v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn fixed_points() {
        assert_eq!(sigmoid(&t(&[0.0])).data(), &[0.5]);
        assert_eq!(tanh(&t(&[0.0])).data(), &[0.0]);
        assert_eq!(relu(&t(&[-1.0])).data(), &[0.0]);
    }

    #[test]
    fn relu_gradient() {
        let g = relu_backward(&t(&[2.0, -2.0]), &t(&[1.0, 1.0]));
        assert_eq!(g.data(), &[1.0, 0.0]);
    }

    #[test]
    fn sigmoid_slope_at_zero_matches_central_difference() {
        let analytic = sigmoid_backward(&sigmoid(&t(&[0.0])), &t(&[1.0])).data()[0];
        let h = 1e-5;
        let numeric = (sigmoid_scalar(h) - sigmoid_scalar(-h)) / (2.0 * h);
        assert_eq!(analytic, 0.25);
        assert!((analytic - numeric).abs() < 1e-10);
    }

    #[test]
    fn sigmoid_is_stable_for_large_inputs() {
        assert_eq!(sigmoid_scalar(-1000.0), 0.0);
        assert_eq!(sigmoid_scalar(1000.0), 1.0);
    }
}
