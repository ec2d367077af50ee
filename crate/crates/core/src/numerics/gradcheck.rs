//! Central-difference verification of hand-derived gradients.

use rand::seq::index::sample;

use crate::error::{Error, Result};

use super::{DetRng, HasParams, Tensor};

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    pub eps: f64,
    pub tol: f64,
    /// Coordinates sampled per parameter tensor; `None` checks every coordinate.
    pub max_coords: Option<usize>,
    /// Lower bound on the denominator of the relative error, so that
    /// gradients that are zero up to round-off do not register as failures.
    pub abs_floor: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            eps: 1e-5,
            tol: 1e-4,
            max_coords: None,
            abs_floor: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub passed: bool,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn all_passed(&self) -> bool {
        self.params.iter().all(|p| p.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for p in &self.params {
            writeln!(
                f,
                "{:>10} {:<8} n={:<5} max_rel={:.3e} (analytic {:.6e} vs numeric {:.6e} at {})",
                if p.passed { "ok" } else { "FAIL" },
                p.name,
                p.checked,
                p.max_rel_error,
                p.analytic,
                p.numeric,
                p.worst_index
            )?;
        }
        Ok(())
    }
}

/// `|a − n| / max(|a| + |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(floor)
}

/// Compares `analytic` gradients with central differences of `loss`, perturbing
/// the model's own parameters in place (restored afterwards).
pub fn gradient_check<M, F>(
    model: &mut M,
    analytic: &[Tensor<f64>],
    mut loss: F,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    M: HasParams<f64>,
    F: FnMut(&M) -> Result<f64>,
{
    if analytic.len() != model.params().len() {
        return Err(Error::dim(format!(
            "{} analytic gradients for {} parameters",
            analytic.len(),
            model.params().len()
        )));
    }
    let mut rng = DetRng::new(cfg.seed);
    let mut report = Vec::with_capacity(analytic.len());
    for (pi, grad) in analytic.iter().enumerate() {
        let n = model.params().get(pi).len();
        if grad.len() != n {
            return Err(Error::dim(format!(
                "gradient for {} has {} entries, parameter has {}",
                model.params().name(pi),
                grad.len(),
                n
            )));
        }
        let coords: Vec<usize> = match cfg.max_coords {
            Some(m) if m < n => {
                let mut c = sample(&mut rng, n, m).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..n).collect(),
        };
        let mut check = ParamCheck {
            name: model.params().name(pi).to_string(),
            checked: coords.len(),
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
            passed: true,
        };
        for &i in &coords {
            let orig = model.params().get(pi).data()[i];
            model.params_mut().get_mut(pi).data_mut()[i] = orig + cfg.eps;
            let fp = loss(model)?;
            model.params_mut().get_mut(pi).data_mut()[i] = orig - cfg.eps;
            let fm = loss(model)?;
            model.params_mut().get_mut(pi).data_mut()[i] = orig;
            if !fp.is_finite() || !fm.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss while perturbing {}[{i}]",
                    check.name
                )));
            }
            let numeric = (fp - fm) / (2.0 * cfg.eps);
            let a = grad.data()[i];
            let rel = relative_error(a, numeric, cfg.abs_floor);
            if rel > check.max_rel_error || (check.max_rel_error == 0.0 && i == coords[0]) {
                check.max_rel_error = rel;
                check.worst_index = i;
                check.analytic = a;
                check.numeric = numeric;
            }
        }
        check.passed = check.max_rel_error <= cfg.tol;
        report.push(check);
    }
    Ok(GradCheckReport { params: report })
}
