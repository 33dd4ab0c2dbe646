//! Central finite-difference gradient checker.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Compares tape gradients with central differences.
///
/// `build` records a scalar loss from leaf vars bound to `params` (in order).
/// At most `max_coords` coordinates per parameter are checked, evenly strided.
/// Returns `max |analytic - numeric| / max(|analytic|, |numeric|, 1e-12)`.
pub fn grad_check<F>(build: F, params: &[Tensor], h: f64, max_coords: usize) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |ps: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.leaf(p.clone())).collect();
        let out = build(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let out = build(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    let mut work: Vec<Tensor> = params.to_vec();
    let mut worst: f64 = 0.0;
    for (pi, var) in vars.iter().enumerate() {
        let n = params[pi].len();
        let analytic = grads.get(*var).cloned().unwrap_or_else(|| Tensor::zeros(params[pi].shape()));
        if analytic.len() != n {
            return Err(Error::State("gradient shape mismatch".into()));
        }
        let stride = n.div_ceil(max_coords.max(1)).max(1);
        for i in (0..n).step_by(stride) {
            let orig = work[pi].data()[i];
            work[pi].data_mut()[i] = orig + h;
            let fp = eval(&work)?;
            work[pi].data_mut()[i] = orig - h;
            let fm = eval(&work)?;
            work[pi].data_mut()[i] = orig;
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic.data()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-12);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_tight() {
        let err = grad_check(
            |t, v| {
                let sq = t.mul(v[0], v[0])?;
                t.sum(sq)
            },
            &[Tensor::scalar(1.7)],
            1e-5,
            10,
        )
        .unwrap();
        assert!(err < 1e-8, "{}", err);
    }
}
