use crate::error::{Error, Result};
use crate::formats::DenseMatrix;

fn check_shapes(a: &[DenseMatrix], b: &[DenseMatrix], what: &str) -> Result<()> {
    if a.len() != b.len() || a.iter().zip(b).any(|(x, y)| x.shape() != y.shape()) {
        return Err(Error::ShapeMismatch(format!(
            "{what} do not match the parameters"
        )));
    }
    Ok(())
}

/// Classical Nesterov momentum step.
///
/// `grads` must be evaluated at the look-ahead point `w + μ·v`; then
/// `v' = μ·v − lr·g` and `w' = w + v'`.
pub fn nesterov_step(
    params: &mut [DenseMatrix],
    velocity: &mut [DenseMatrix],
    grads: &[DenseMatrix],
    lr: f64,
    momentum: f64,
) -> Result<()> {
    check_shapes(params, velocity, "velocities")?;
    check_shapes(params, grads, "gradients")?;
    for ((w, v), g) in params.iter_mut().zip(velocity.iter_mut()).zip(grads) {
        for ((wi, vi), gi) in w
            .values_mut()
            .iter_mut()
            .zip(v.values_mut().iter_mut())
            .zip(g.values())
        {
            *vi = momentum * *vi - lr * gi;
            *wi += *vi;
        }
    }
    Ok(())
}

/// Nesterov momentum in look-ahead form.
///
/// The stored parameters are the look-ahead point `θ = w + μ·v`, so the
/// gradient of the current model is exactly the gradient Nesterov needs:
/// `v' = μ·v − lr·g(θ)`, `θ' = θ + μ·v' − lr·g(θ)`. The underlying
/// classical iterate is recoverable as `θ − μ·v`.
#[derive(Debug, Clone, PartialEq)]
pub struct NesterovMomentum {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<DenseMatrix>,
}

impl NesterovMomentum {
    pub fn new(params: &[DenseMatrix], lr: f64, momentum: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Config(format!(
                "momentum must lie in [0, 1), got {momentum}"
            )));
        }
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
        }
        Ok(Self {
            lr,
            momentum,
            velocity: params
                .iter()
                .map(|p| DenseMatrix::zeros(p.rows(), p.cols()))
                .collect(),
        })
    }

    pub fn velocity(&self) -> &[DenseMatrix] {
        &self.velocity
    }

    pub fn velocity_mut(&mut self) -> &mut [DenseMatrix] {
        &mut self.velocity
    }

    pub fn step(&mut self, params: &mut [DenseMatrix], grads: &[DenseMatrix]) -> Result<()> {
        check_shapes(params, &self.velocity, "velocities")?;
        check_shapes(params, grads, "gradients")?;
        let (lr, mu) = (self.lr, self.momentum);
        for ((w, v), g) in params.iter_mut().zip(self.velocity.iter_mut()).zip(grads) {
            for ((wi, vi), gi) in w
                .values_mut()
                .iter_mut()
                .zip(v.values_mut().iter_mut())
                .zip(g.values())
            {
                *vi = mu * *vi - lr * gi;
                *wi += mu * *vi - lr * gi;
            }
        }
        Ok(())
    }
}

/// Rescales `grads` so their joint ℓ2 norm is at most `max_norm`; returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [DenseMatrix], max_norm: f64) -> f64 {
    let norm = grads.iter().map(DenseMatrix::squared_norm).sum::<f64>().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().for_each(|g| g.scale(s));
    }
    norm
}
