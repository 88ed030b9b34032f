//! Central finite-difference verification of reverse-mode gradients.

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tape::{Tape, Var};

/// Which coordinates of each trainable tensor are perturbed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coordinates {
    All,
    /// At most this many per tensor, evenly strided (always includes the first and last).
    Sample(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst_parameter: String,
    pub worst_index: usize,
    pub checked: usize,
}

fn coordinates(numel: usize, which: Coordinates) -> Vec<usize> {
    match which {
        Coordinates::All => (0..numel).collect(),
        Coordinates::Sample(k) if k >= numel => (0..numel).collect(),
        Coordinates::Sample(k) if k <= 1 => vec![0],
        Coordinates::Sample(k) => {
            let mut idx: Vec<usize> = (0..k).map(|i| i * (numel - 1) / (k - 1)).collect();
            idx.dedup();
            idx
        }
    }
}

/// Compares the tape gradient of `loss` with central differences
/// `(L(θ+ε) − L(θ−ε)) / 2ε` for every selected coordinate of every
/// trainable tensor in `params`. Returns the largest
/// `|analytic − numeric| / max(1, |numeric|)`.
///
/// `loss` must evaluate a scalar; it is called twice per coordinate.
pub fn finite_diff_check<F>(params: &mut ParamStore<f64>, eps: f64, which: Coordinates, mut loss: F) -> Result<GradCheckReport>
where
    F: for<'p> FnMut(&mut Tape<'p, f64>, &'p ParamStore<f64>) -> Result<Var>,
{
    let analytic: Vec<(String, Vec<f64>)> = {
        let mut tape = Tape::new();
        let out = loss(&mut tape, params)?;
        tape.backward(out)?;
        let mut grads: Vec<(String, Vec<f64>)> = Vec::new();
        for (name, t) in params.trainable() {
            let mut g = vec![0.0; t.numel()];
            for (pname, pg) in tape.param_grads() {
                if pname == name {
                    if let Some(pg) = pg {
                        g.iter_mut().zip(pg.data()).for_each(|(a, &b)| *a += b);
                    }
                }
            }
            grads.push((name.to_string(), g));
        }
        grads
    };

    let mut eval = |params: &ParamStore<f64>| -> Result<f64> {
        let mut tape = Tape::new();
        let out = loss(&mut tape, params)?;
        Ok(tape.tensor(out).item())
    };

    let mut report =
        GradCheckReport { max_relative_error: 0.0, worst_parameter: String::new(), worst_index: 0, checked: 0 };
    for (name, grad) in &analytic {
        for i in coordinates(grad.len(), which) {
            let original = params.get(name)?.data()[i];
            params.get_mut(name)?.data_mut()[i] = original + eps;
            let plus = eval(params)?;
            params.get_mut(name)?.data_mut()[i] = original - eps;
            let minus = eval(params)?;
            params.get_mut(name)?.data_mut()[i] = original;
            let numeric = (plus - minus) / (2.0 * eps);
            if !numeric.is_finite() || !grad[i].is_finite() {
                return Err(Error::NonFiniteGradient(name.clone()));
            }
            let err = (grad[i] - numeric).abs() / numeric.abs().max(1.0);
            report.checked += 1;
            if report.checked == 1 || err > report.max_relative_error {
                report.max_relative_error = err;
                report.worst_parameter = name.clone();
                report.worst_index = i;
            }
        }
    }
    Ok(report)
}
