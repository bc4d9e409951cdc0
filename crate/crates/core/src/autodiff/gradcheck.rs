use super::Array;

/// Central-difference estimate of the gradient of `f` at `point`.
///
/// Each coordinate costs two evaluations of `f`:
/// `(f(x + εeᵢ) − f(x − εeᵢ)) / 2ε`.
pub fn finite_difference_grad<E, F>(mut f: F, point: &Array, epsilon: f64) -> Result<Array, E>
where
    F: FnMut(&Array) -> Result<f64, E>,
{
    assert!(epsilon > 0.0, "epsilon must be positive");
    let mut probe = point.clone();
    let mut grad = Array::zeros(point.shape());
    for i in 0..point.len() {
        let orig = point.data()[i];
        probe.data_mut()[i] = orig + epsilon;
        let plus = f(&probe)?;
        probe.data_mut()[i] = orig - epsilon;
        let minus = f(&probe)?;
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (plus - minus) / (2.0 * epsilon);
    }
    Ok(grad)
}

/// `|a − b| / max(|a|, |b|, floor)`; the floor keeps near-zero pairs from
/// reporting huge relative errors.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}
