//! Finite-difference gradient checking.

use super::{Result, Tensor, TensorError};

pub const DEFAULT_STEP: f64 = 1e-6;

/// Compare the reverse-mode gradient of a scalar-valued function against
/// central differences at `point`, returning the worst relative error
/// `|analytic - numeric| / max(1, |analytic|, |numeric|)` over coordinates.
///
/// `point` must be a leaf with `requires_grad`; it is restored on return.
pub fn grad_check<F>(f: F, point: &Tensor, step: f64) -> Result<f64>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    if !point.requires_grad() {
        return Err(TensorError::InvalidArg {
            op: "grad_check",
            msg: "point must require grad".into(),
        });
    }
    if step <= 0.0 {
        return Err(TensorError::InvalidArg {
            op: "grad_check",
            msg: format!("step must be positive, got {}", step),
        });
    }

    let out = f(point)?;
    if out.numel() != 1 {
        return Err(TensorError::InvalidArg {
            op: "grad_check",
            msg: format!("function output must be scalar, got shape {:?}", out.shape()),
        });
    }
    point.zero_grad();
    out.backward()?;
    let analytic = point.grad().ok_or_else(|| TensorError::InvalidArg {
        op: "grad_check",
        msg: "function output does not depend on point".into(),
    })?;

    let base = point.data();
    let mut worst = 0.0f64;
    let mut probe = base.clone();
    for i in 0..base.len() {
        probe[i] = base[i] + step;
        point.set_data(&probe);
        let plus = f(point)?.item();
        probe[i] = base[i] - step;
        point.set_data(&probe);
        let minus = f(point)?.item();
        probe[i] = base[i];

        let numeric = (plus - minus) / (2.0 * step);
        let err = (analytic[i] - numeric).abs() / 1.0f64.max(analytic[i].abs()).max(numeric.abs());
        worst = worst.max(err);
    }
    point.set_data(&base);
    Ok(worst)
}
