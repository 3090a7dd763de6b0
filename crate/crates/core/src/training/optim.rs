use crate::error::{Error, Result};
use crate::params::{ParamKind, ParamSet};
use crate::tensor::{cst, Real, Tensor};

/// Plain gradient step `θ ← θ − lr·g` on every trainable parameter.
pub fn sgd_update<T: Real>(params: &mut ParamSet<T>, grads: &[Tensor<T>], lr: f64) -> Result<()> {
    check_grads(params, grads)?;
    let lr = cst::<T>(lr);
    let ids: Vec<_> = params.ids().collect();
    for (id, g) in ids.into_iter().zip(grads) {
        if params.entry(id).kind != ParamKind::Trainable {
            continue;
        }
        for (p, &d) in params.get_mut(id).data_mut().iter_mut().zip(g.data()) {
            *p -= lr * d;
        }
    }
    Ok(())
}

fn check_grads<T: Real>(params: &ParamSet<T>, grads: &[Tensor<T>]) -> Result<()> {
    if grads.len() != params.len() {
        return Err(Error::ShapeMismatch(format!("{} gradients for {} parameters", grads.len(), params.len())));
    }
    for ((_, e), g) in params.iter().zip(grads) {
        if e.value.dims() != g.dims() {
            return Err(Error::ShapeMismatch(format!("gradient {:?} for {} {:?}", g.dims(), e.name, e.value.dims())));
        }
        if !g.is_finite() {
            return Err(Error::NonFiniteGradient(e.name.clone()));
        }
    }
    Ok(())
}

/// SGD with optional heavy-ball momentum; zero momentum is exactly
/// [`sgd_update`].
#[derive(Clone, Debug)]
pub struct Sgd<T: Real> {
    pub momentum: f64,
    velocity: Vec<Tensor<T>>,
}

impl<T: Real> Sgd<T> {
    pub fn new(momentum: f64) -> Self {
        Self { momentum, velocity: Vec::new() }
    }

    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &[Tensor<T>], lr: f64) -> Result<()> {
        if self.momentum == 0.0 {
            return sgd_update(params, grads, lr);
        }
        check_grads(params, grads)?;
        if self.velocity.is_empty() {
            self.velocity = grads.iter().map(|g| Tensor::zeros(g.dims())).collect();
        }
        let mu = cst::<T>(self.momentum);
        for (v, g) in self.velocity.iter_mut().zip(grads) {
            for (vi, &gi) in v.data_mut().iter_mut().zip(g.data()) {
                *vi = mu * *vi + gi;
            }
        }
        sgd_update(params, &self.velocity, lr)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::Init;

    #[test]
    fn single_step_and_stationary() {
        let mut ps = ParamSet::<f64>::new(0);
        let id = ps.add("t", &[1], Init::Constant(1.0), ParamKind::Trainable);
        sgd_update(&mut ps, &[Tensor::scalar(1.0)], 0.1).unwrap();
        assert!((ps.get(id).data()[0] - 0.9).abs() < 1e-15);
        sgd_update(&mut ps, &[Tensor::scalar(0.0)], 0.1).unwrap();
        assert!((ps.get(id).data()[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn buffers_are_not_stepped() {
        let mut ps = ParamSet::<f64>::new(0);
        let b = ps.add("b", &[1], Init::Constant(1.0), ParamKind::Buffer);
        sgd_update(&mut ps, &[Tensor::scalar(5.0)], 0.1).unwrap();
        assert_eq!(ps.get(b).data(), &[1.0]);
    }
}
