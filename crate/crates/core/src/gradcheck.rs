//! Central finite-difference gradient checking.
//!
//! The checker only ever runs forward passes: it perturbs one input entry at a
//! time and compares `(f(x+h) - f(x-h)) / 2h` against the tape's gradient.
//!
//! Piecewise-linear units such as ReLU make `f` non-differentiable where an
//! activation crosses zero. If such a crossing falls inside the stencil, the
//! difference quotient averages two slopes and is no oracle for either. An
//! entry is set aside as a kink only when the tape's own gradient, evaluated
//! at `x-h` and `x+h`, differs by at least the observed mismatch. A wrong
//! backward rule in a smooth region leaves the gradient nearly constant across
//! the stencil, so it still fails.

use crate::error::Result;
use crate::tensor::{Tape, Tensor, Var};

pub const DEFAULT_STEP: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Largest [`rel_error`] over all entries.
    pub max_rel_error: f64,
    pub worst_input: usize,
    pub worst_entry: usize,
    pub entries_checked: usize,
    /// Entries excluded from `max_rel_error` because the stencil straddles a
    /// kink.
    pub kinks: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

/// Magnitudes below this are compared on absolute rather than relative error.
pub const REL_ERROR_FLOOR: f64 = 1e-2;

/// Mismatches at or below this are accepted without looking for a kink.
const KINK_SCREEN: f64 = 1e-6;

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Checks every entry of every input. `f` must build a scalar from the given
/// leaves on a fresh tape and be a pure function of the input values.
pub fn check<F>(inputs: &[Tensor], step: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    // Inputs the output does not depend on have zero gradient.
    let grads_at = |values: &[Tensor]| -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.param(t.clone())).collect();
        let root = f(&mut tape, &vars)?;
        tape.backward(root)?;
        Ok(vars
            .iter()
            .zip(values)
            .map(|(&v, t)| {
                tape.grad(v)
                    .map(<[f64]>::to_vec)
                    .unwrap_or_else(|| vec![0.0; t.numel()])
            })
            .collect())
    };
    let analytic = grads_at(inputs)?;

    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut t = Tape::new();
        let vs: Vec<Var> = values.iter().map(|x| t.constant(x.clone())).collect();
        let r = f(&mut t, &vs)?;
        Ok(t.value(r).item())
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_input: 0,
        worst_entry: 0,
        entries_checked: 0,
        kinks: 0,
    };
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (ii, input) in inputs.iter().enumerate() {
        debug_assert_eq!(analytic[ii].len(), input.numel());
        for (e, &want) in analytic[ii].iter().enumerate() {
            let orig = input.data[e];
            work[ii].data[e] = orig + step;
            let plus = eval(&work)?;
            work[ii].data[e] = orig - step;
            let minus = eval(&work)?;
            let numeric = (plus - minus) / (2.0 * step);
            let err = rel_error(want, numeric);
            report.entries_checked += 1;
            if err > KINK_SCREEN {
                let g_minus = grads_at(&work)?[ii][e];
                work[ii].data[e] = orig + step;
                let g_plus = grads_at(&work)?[ii][e];
                if (g_plus - g_minus).abs() >= (want - numeric).abs() {
                    report.kinks += 1;
                    work[ii].data[e] = orig;
                    continue;
                }
            }
            work[ii].data[e] = orig;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst_input = ii;
                report.worst_entry = e;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square_with(detach: bool) -> impl Fn(&mut Tape, &[Var]) -> Result<Var> {
        move |t, v| {
            let other = if detach {
                t.constant(t.value(v[0]).clone())
            } else {
                v[0]
            };
            let sq = t.hadamard(v[0], other)?;
            Ok(t.sum(sq))
        }
    }

    #[test]
    fn smooth_function_passes() {
        let x = [Tensor::vector(vec![0.7, -1.3, 2.0])];
        let r = check(&x, DEFAULT_STEP, square_with(false)).unwrap();
        assert!(r.passes(1e-8) && r.kinks == 0, "{r:?}");
    }

    #[test]
    fn dropped_gradient_path_fails() {
        let x = [Tensor::vector(vec![0.7, -1.3, 2.0])];
        let r = check(&x, DEFAULT_STEP, square_with(true)).unwrap();
        assert!(!r.passes(1e-4), "{r:?}");
        assert_eq!(r.kinks, 0);
    }

    #[test]
    fn relu_crossing_inside_the_stencil_is_a_kink() {
        let x = [Tensor::vector(vec![3e-6, 0.5, -0.5])];
        let r = check(&x, DEFAULT_STEP, |t, v| {
            let y = t.relu(v[0]);
            Ok(t.sum(y))
        })
        .unwrap();
        assert_eq!((r.kinks, r.entries_checked), (1, 3));
        assert!(r.passes(1e-8), "{r:?}");
    }
}
