use rand::Rng;

use super::tensor::Tensor;

/// A fixed, ordered collection of named trainable arrays.
///
/// Gradient buffers and optimizer moments use the same type as the
/// parameters they belong to, so visiting order is the only layout contract.
pub trait Parameters: Clone {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor));

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.visit_mut(&mut |t| t.fill(0.0));
        z
    }

    fn num_values(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, t| n += t.len());
        n
    }

    fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        self.visit("", &mut |name, t| out.push((name, t)));
        out
    }

    fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_values());
        self.visit("", &mut |_, t| out.extend_from_slice(t.data()));
        out
    }

    /// # Panics
    /// If `values` does not hold exactly [`Parameters::num_values`] entries.
    fn assign_flat(&mut self, values: &[f64]) {
        let mut offset = 0;
        self.visit_mut(&mut |t| {
            let n = t.len();
            t.data_mut().copy_from_slice(&values[offset..offset + n]);
            offset += n;
        });
        assert_eq!(offset, values.len(), "flat parameter length mismatch");
    }

    fn add_assign(&mut self, other: &Self) {
        let flat = other.to_flat();
        let mut offset = 0;
        self.visit_mut(&mut |t| {
            let n = t.len();
            t.data_mut()
                .iter_mut()
                .zip(&flat[offset..offset + n])
                .for_each(|(a, b)| *a += b);
            offset += n;
        });
    }

    fn scale(&mut self, factor: f64) {
        self.visit_mut(&mut |t| t.scale(factor));
    }

    fn all_finite(&self) -> bool {
        let mut ok = true;
        self.visit("", &mut |_, t| ok &= t.all_finite());
        ok
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Uniform `[-limit, limit]` with `limit = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor {
    let limit = glorot_limit(fan_in, fan_out);
    Tensor::from_fn(shape, |_| rng.random_range(-limit..=limit))
}

pub fn glorot_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}
