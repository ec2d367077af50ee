use crate::error::{Error, Result};

use super::{Scalar, Tensor};

/// SGD-with-momentum state: `v ← μ·v − lr·g; p ← p + v`, after optional
/// global-norm gradient clipping.
#[derive(Clone, Debug)]
pub struct OptimizerState<T> {
    pub learning_rate: f64,
    pub momentum: f64,
    pub clip_threshold: Option<f64>,
    pub velocity: Vec<Tensor<T>>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepInfo {
    /// Global L2 norm of the gradient before clipping.
    pub grad_norm: f64,
    pub clipped: bool,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(
        params: &[&Tensor<T>],
        learning_rate: f64,
        momentum: f64,
        clip_threshold: Option<f64>,
    ) -> Result<Self> {
        if !(learning_rate > 0.0) {
            return Err(Error::contract("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::contract("momentum must lie in [0, 1)"));
        }
        if let Some(c) = clip_threshold {
            if !(c > 0.0) {
                return Err(Error::contract("clip threshold must be positive"));
            }
        }
        Ok(OptimizerState {
            learning_rate,
            momentum,
            clip_threshold,
            velocity: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        })
    }
}

pub fn global_norm<T: Scalar>(grads: &[Tensor<T>]) -> f64 {
    grads.iter().map(|g| g.sum_sq()).sum::<f64>().sqrt()
}

/// Rescales `grads` in place so their joint L2 norm is at most `threshold`.
/// Returns the norm before rescaling.
pub fn clip_global_norm<T: Scalar>(grads: &mut [Tensor<T>], threshold: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > threshold {
        let s = T::lit(threshold / norm);
        for g in grads.iter_mut() {
            g.scale(s);
        }
    }
    norm
}

/// One momentum step over parallel lists of parameters and gradients.
pub fn sgd_momentum_step<'a, T: Scalar>(
    params: impl IntoIterator<Item = &'a mut Tensor<T>>,
    grads: &mut [Tensor<T>],
    state: &mut OptimizerState<T>,
) -> Result<StepInfo> {
    let params: Vec<&mut Tensor<T>> = params.into_iter().collect();
    if params.len() != grads.len() || params.len() != state.velocity.len() {
        return Err(Error::dim(format!(
            "{} params, {} grads, {} velocity tensors",
            params.len(),
            grads.len(),
            state.velocity.len()
        )));
    }
    for ((p, g), v) in params.iter().zip(grads.iter()).zip(&state.velocity) {
        if p.shape() != g.shape() || p.shape() != v.shape() {
            return Err(Error::dim(format!(
                "param {:?} / grad {:?} / velocity {:?} shape mismatch",
                p.shape(),
                g.shape(),
                v.shape()
            )));
        }
    }
    let (grad_norm, clipped) = match state.clip_threshold {
        Some(c) => {
            let n = clip_global_norm(grads, c);
            (n, n > c)
        }
        None => (global_norm(grads), false),
    };
    let mu = T::lit(state.momentum);
    let lr = T::lit(state.learning_rate);
    for ((p, g), v) in params.into_iter().zip(grads.iter()).zip(state.velocity.iter_mut()) {
        for ((pv, &gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *vv = mu * *vv - lr * gv;
            *pv += *vv;
        }
    }
    Ok(StepInfo { grad_norm, clipped })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Tensor<f64> {
        Tensor::scalar(v)
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let mut p = vec![scalar(1.5)];
        let mut st = OptimizerState::new(&[&p[0]], 0.1, 0.9, None).unwrap();
        let mut g = vec![scalar(0.0)];
        sgd_momentum_step(p.iter_mut(), &mut g, &mut st).unwrap();
        assert_eq!(p[0].data()[0], 1.5);
    }

    #[test]
    fn plain_sgd_step() {
        let mut p = vec![scalar(1.0)];
        let mut st = OptimizerState::new(&[&p[0]], 0.1, 0.0, None).unwrap();
        let mut g = vec![scalar(0.5)];
        sgd_momentum_step(p.iter_mut(), &mut g, &mut st).unwrap();
        assert_eq!(p[0].data()[0], 0.95);
    }

    #[test]
    fn two_momentum_steps_match_unrolled_recurrence() {
        let (lr, mu) = (0.05, 0.9);
        let (p0, g1, g2) = (2.0f64, 0.7f64, -0.3f64);
        let v1 = mu * 0.0 - lr * g1;
        let p1 = p0 + v1;
        let v2 = mu * v1 - lr * g2;
        let p2 = p1 + v2;

        let mut p = vec![scalar(p0)];
        let mut st = OptimizerState::new(&[&p[0]], lr, mu, None).unwrap();
        sgd_momentum_step(p.iter_mut(), &mut [scalar(g1)], &mut st).unwrap();
        assert_eq!(p[0].data()[0], p1);
        sgd_momentum_step(p.iter_mut(), &mut [scalar(g2)], &mut st).unwrap();
        assert_eq!(p[0].data()[0], p2);
    }

    #[test]
    fn clipping_bounds_global_norm() {
        let mut g = vec![
            Tensor::<f64>::from_vec(&[2], vec![3.0, 4.0]).unwrap(),
            Tensor::<f64>::from_vec(&[1], vec![12.0]).unwrap(),
        ];
        let before = clip_global_norm(&mut g, 5.0);
        assert!((before - 13.0).abs() < 1e-12);
        assert!(global_norm(&g) <= 5.0 + 1e-9);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = vec![Tensor::<f64>::zeros(&[2])];
        let mut st = OptimizerState::new(&[&p[0]], 0.1, 0.5, None).unwrap();
        let mut g = vec![Tensor::<f64>::zeros(&[3])];
        assert!(matches!(
            sgd_momentum_step(p.iter_mut(), &mut g, &mut st),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn invalid_hyperparameters() {
        let p = Tensor::<f32>::zeros(&[1]);
        assert!(OptimizerState::new(&[&p], 0.0, 0.5, None).is_err());
        assert!(OptimizerState::new(&[&p], 0.1, 1.0, None).is_err());
        assert!(OptimizerState::new(&[&p], 0.1, 0.5, Some(0.0)).is_err());
    }
}
