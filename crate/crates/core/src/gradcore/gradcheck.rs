//! Central finite-difference gradient checking.

pub const DEFAULT_EPS: f64 = 1e-5;

/// `|a - n| / max(1e-8, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Compares `analytic` against central differences of `loss` around `x`,
/// one coordinate at a time.
///
/// # Panics
/// If `x` and `analytic` differ in length.
pub fn finite_diff_check<F>(mut loss: F, x: &[f64], analytic: &[f64], eps: f64) -> GradCheck
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(x.len(), analytic.len(), "gradient length mismatch");
    let mut point = x.to_vec();
    let mut worst = GradCheck {
        max_rel_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    for i in 0..x.len() {
        point[i] = x[i] + eps;
        let plus = loss(&point);
        point[i] = x[i] - eps;
        let minus = loss(&point);
        point[i] = x[i];
        let numeric = (plus - minus) / (2.0 * eps);
        let err = relative_error(analytic[i], numeric);
        if err > worst.max_rel_error || i == 0 {
            worst = GradCheck {
                max_rel_error: err,
                worst_index: i,
                analytic: analytic[i],
                numeric,
            };
        }
    }
    worst
}
