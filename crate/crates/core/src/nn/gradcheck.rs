//! Central finite differences for checking analytic gradients.

pub const STEP: f64 = 1e-5;

/// Numeric gradient of `loss` with respect to every parameter exposed by `params`.
pub fn numeric_gradient<M>(
    model: &mut M,
    params: impl for<'a> Fn(&'a mut M) -> Vec<&'a mut [f64]>,
    loss: impl Fn(&M) -> f64,
) -> Vec<f64> {
    let sizes: Vec<usize> = params(model).iter().map(|p| p.len()).collect();
    let mut out = Vec::new();
    for (slot, &len) in sizes.iter().enumerate() {
        for i in 0..len {
            let orig = params(model)[slot][i];
            params(model)[slot][i] = orig + STEP;
            let up = loss(model);
            params(model)[slot][i] = orig - STEP;
            let down = loss(model);
            params(model)[slot][i] = orig;
            out.push((up - down) / (2.0 * STEP));
        }
    }
    out
}

/// Numeric gradient of a scalar function of a plain vector.
pub fn numeric_gradient_of(f: impl Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + STEP;
            let up = f(&x);
            x[i] = orig - STEP;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * STEP)
        })
        .collect()
}

/// Largest `|a - n| / max(|a|, |n|, 1e-6)` over paired entries.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient lengths differ");
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
        .fold(0.0, f64::max)
}
