//! Central finite-difference gradient verification.

use super::{Element, Graph, Shape, TensorId, TensorResult};

/// Compares the reverse-mode gradient of `f` at `x` against central finite
/// differences with step `h` and returns the worst relative error.
///
/// Coordinates where analytic and numeric gradients agree within `atol`
/// count as exact; this keeps finite-difference noise on near-zero
/// gradients from masquerading as relative error. `f` must build a scalar
/// loss from the supplied leaf.
pub fn grad_check_with<T, F>(
    f: &F,
    x: &[T],
    shape: &Shape,
    h: T,
    atol: T,
) -> TensorResult<T>
where
    T: Element,
    F: Fn(&mut Graph<T>, TensorId) -> TensorResult<TensorId>,
{
    let mut g = Graph::new();
    let leaf = g.leaf(x.to_vec(), shape.clone(), true)?;
    let loss = f(&mut g, leaf)?;
    g.backward(loss)?;
    let analytic = g.grad(leaf).expect("leaf requires grad").to_vec();

    let two = T::from_f64c(2.0);
    let mut worst = T::zero();
    for i in 0..x.len() {
        let eval = |v: T| -> TensorResult<T> {
            let mut probe = x.to_vec();
            probe[i] = v;
            let mut g = Graph::new();
            let leaf = g.leaf(probe, shape.clone(), false)?;
            let loss = f(&mut g, leaf)?;
            Ok(g.value(loss)[0])
        };
        let numeric = (eval(x[i] + h)? - eval(x[i] - h)?) / (two * h);
        let diff = (analytic[i] - numeric).abs();
        if diff <= atol {
            continue;
        }
        let scale = analytic[i].abs().max(numeric.abs());
        let rel = if scale > T::zero() { diff / scale } else { diff };
        if rel > worst {
            worst = rel;
        }
    }
    Ok(worst)
}

/// [`grad_check_with`] using an absolute floor of `100 h^2`, the truncation
/// scale of the central difference.
pub fn grad_check<T, F>(f: &F, x: &[T], shape: &Shape, h: T) -> TensorResult<T>
where
    T: Element,
    F: Fn(&mut Graph<T>, TensorId) -> TensorResult<TensorId>,
{
    let atol = T::from_f64c(100.0) * h * h;
    grad_check_with(f, x, shape, h, atol)
}
