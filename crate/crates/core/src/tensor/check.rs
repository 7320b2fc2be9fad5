use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Central-difference gradient of a scalar function, one coordinate at a time.
pub fn finite_diff_grad<R: Real>(
    mut f: impl FnMut(&Tensor<R>) -> R,
    x: &Tensor<R>,
    h: R,
) -> Result<Tensor<R>> {
    if h.partial_cmp(&R::zero()) != Some(std::cmp::Ordering::Greater) {
        return Err(Error::InvalidConfig(format!("finite difference step must be positive, got {h}")));
    }
    let two_h = h + h;
    let mut probe = x.clone();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe.values()[i];
        probe.values_mut()[i] = orig + h;
        let up = f(&probe);
        probe.values_mut()[i] = orig - h;
        let down = f(&probe);
        probe.values_mut()[i] = orig;
        grad.push((up - down) / two_h);
    }
    Tensor::new(x.shape().to_vec(), grad)
}

/// Largest elementwise `|a - b| / max(|a|, |b|, 1e-6)`.
///
/// The floor keeps entries that are analytically zero from dominating with
/// pure rounding noise.
pub fn max_relative_error<R: Real>(a: &Tensor<R>, b: &Tensor<R>) -> f64 {
    assert_eq!(a.shape(), b.shape(), "relative error needs equal shapes");
    a.values()
        .iter()
        .zip(b.values())
        .map(|(&x, &y)| {
            let (x, y) = (x.to_f64().unwrap(), y.to_f64().unwrap());
            (x - y).abs() / x.abs().max(y.abs()).max(1e-6)
        })
        .fold(0.0, f64::max)
}
