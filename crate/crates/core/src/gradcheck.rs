//! Central finite-difference gradient checking.
//!
//! Only forward evaluations of the closure are used for the numerical side, so
//! the check is independent of the backward rules it verifies.

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Worst elementwise relative error over all inputs.
    pub max_rel_err: f64,
    /// `(input, element)` of the worst entry.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err <= tol
    }
}

/// Compares analytic gradients of the scalar built by `f` against central
/// differences with step `h`.
///
/// The relative error of an entry is `|a - n| / max(|a|, |n|, floor)` where the
/// floor is `1e-3` times the largest analytic magnitude of that input, so
/// entries whose true gradient is vanishingly small do not dominate.
/// `skip(input, element)` excludes entries (e.g. near-singular spectral bins).
pub fn check_with<F, S>(inputs: &[Tensor], h: f64, f: F, skip: S) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
    S: Fn(usize, usize) -> bool,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let root = f(&mut tape, &vars)?;
    let grads = tape.backward(root)?;

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let mut t = Tape::new();
        let vs: Vec<Var> = perturbed.iter().map(|x| t.constant(x.clone())).collect();
        let r = f(&mut t, &vs)?;
        Ok(t.value(r).data()[0])
    };

    let mut report =
        GradCheckReport { max_rel_err: 0.0, worst: (0, 0), analytic: 0.0, numeric: 0.0, checked: 0 };
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads
            .get(*v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[i].shape().to_vec()));
        let scale = analytic.data().iter().fold(0.0f64, |m, a| m.max(a.abs()));
        let floor = (1e-3 * scale).max(1e-10);
        for e in 0..inputs[i].numel() {
            if skip(i, e) {
                continue;
            }
            let orig = inputs[i].data()[e];
            work[i].data_mut()[e] = orig + h;
            let up = eval(&work)?;
            work[i].data_mut()[e] = orig - h;
            let down = eval(&work)?;
            work[i].data_mut()[e] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.data()[e];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            report.checked += 1;
            if rel > report.max_rel_err {
                report = GradCheckReport { max_rel_err: rel, worst: (i, e), analytic: a, numeric, ..report };
            }
        }
    }
    Ok(report)
}

pub fn check<F>(inputs: &[Tensor], h: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    check_with(inputs, h, f, |_, _| false)
}
