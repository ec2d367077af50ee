use rand::Rng;

use crate::error::{Error, Result};

use super::{DetRng, Scalar, Tensor};

/// A named parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
}

/// Ordered parameter list of a model. Gradients are `Vec<Tensor<T>>` in the same order.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamSet<T> {
    params: Vec<Param<T>>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet { params: Vec::new() }
    }

    pub fn push(&mut self, name: &str, value: Tensor<T>) -> usize {
        self.params.push(Param {
            name: name.to_string(),
            value,
        });
        self.params.len() - 1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, i: usize) -> &Tensor<T> {
        &self.params[i].value
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Tensor<T> {
        &mut self.params[i].value
    }

    pub fn name(&self, i: usize) -> &str {
        &self.params[i].name
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.params.iter_mut().map(|p| &mut p.value)
    }

    pub fn zeros_like(&self) -> Vec<Tensor<T>> {
        self.params
            .iter()
            .map(|p| Tensor::zeros(p.value.shape()))
            .collect()
    }

    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                })
                .collect(),
        }
    }

    pub fn ensure_finite(&self) -> Result<()> {
        for p in &self.params {
            p.value
                .ensure_finite()
                .map_err(|e| Error::Numeric(format!("parameter {}: {e}", p.name)))?;
        }
        Ok(())
    }

    /// Replaces values from `other`, which must have identical names and shapes.
    pub fn assign(&mut self, other: &ParamSet<T>) -> Result<()> {
        if self.params.len() != other.params.len() {
            return Err(Error::dim("parameter count mismatch"));
        }
        for (a, b) in self.params.iter_mut().zip(&other.params) {
            if a.name != b.name || a.value.shape() != b.value.shape() {
                return Err(Error::dim(format!(
                    "parameter {} {:?} does not match {} {:?}",
                    a.name,
                    a.value.shape(),
                    b.name,
                    b.value.shape()
                )));
            }
            a.value = b.value.clone();
        }
        Ok(())
    }
}

/// Anything trained by the optimizer and checked by the gradient checker.
pub trait HasParams<T: Scalar> {
    fn params(&self) -> &ParamSet<T>;
    fn params_mut(&mut self) -> &mut ParamSet<T>;
}

/// Uniform Glorot initialization in `[-s, s]`, `s = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot<T: Scalar>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut DetRng) -> Tensor<T> {
    let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::lit(rng.gen_range(-s..=s))).collect();
    Tensor::from_vec(shape, data).expect("glorot shape")
}

/// Glorot range widened fourfold, the usual choice for layers feeding a
/// logistic nonlinearity.
pub fn glorot_logistic<T: Scalar>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut DetRng) -> Tensor<T> {
    let mut t = glorot(shape, fan_in, fan_out, rng);
    for v in t.data_mut() {
        *v = *v * T::lit(4.0);
    }
    t
}

/// Adds `b` into `a` elementwise for every gradient tensor.
pub fn accumulate<T: Scalar>(a: &mut [Tensor<T>], b: &[Tensor<T>]) {
    for (x, y) in a.iter_mut().zip(b) {
        for (p, &q) in x.data_mut().iter_mut().zip(y.data()) {
            *p += q;
        }
    }
}

pub fn scale_all<T: Scalar>(a: &mut [Tensor<T>], s: T) {
    for x in a {
        x.scale(s);
    }
}
