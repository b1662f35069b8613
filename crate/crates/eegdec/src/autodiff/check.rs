//! Finite-difference gradient verification.

use rand::seq::index::sample;

use super::Tensor;
use crate::seed;
use crate::Result;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub n_checked: usize,
    pub max_rel_err: f64,
    pub worst_param: usize,
    pub worst_coord: usize,
    pub pass: bool,
}

const FD_STEP: f64 = 1e-5;
const MIN_SUBSET: usize = 50;

/// Compare backprop gradients against central finite differences.
///
/// `f` evaluates the scalar graph on the given parameters and returns the
/// loss together with one gradient vector per parameter. The finite
/// difference uses only the loss value, so it is independent of every
/// backward rule it checks.
///
/// All coordinates are checked when the total count is small; otherwise a
/// seeded random subset of at least [`MIN_SUBSET`] coordinates.
pub fn gradient_check<F>(params: &[Tensor], tolerance: f64, seed_val: u64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor]) -> Result<(f64, Vec<Vec<f64>>)>,
{
    let (_, grads) = f(params)?;
    assert_eq!(grads.len(), params.len(), "one gradient vector per parameter");

    let total: usize = params.iter().map(Tensor::numel).sum();
    let budget = MIN_SUBSET.max(total.min(400));
    let coords: Vec<usize> = if total <= budget {
        (0..total).collect()
    } else {
        let mut rng = seed::rng(seed_val, "gradient-check");
        sample(&mut rng, total, budget).into_iter().collect()
    };

    let mut report = GradCheckReport {
        n_checked: coords.len(),
        max_rel_err: 0.0,
        worst_param: 0,
        worst_coord: 0,
        pass: true,
    };

    for flat in coords {
        // map the flat coordinate to (param index, offset)
        let mut p = 0;
        let mut off = flat;
        while off >= params[p].numel() {
            off -= params[p].numel();
            p += 1;
        }
        let bp = grads[p][off];

        let eval_at = |delta: f64| -> Result<f64> {
            let mut perturbed = params.to_vec();
            let mut data = perturbed[p].data().to_vec();
            data[off] += delta;
            let mut t = Tensor::from_vec(perturbed[p].shape().to_vec(), data)?;
            t.requires_grad = perturbed[p].requires_grad;
            perturbed[p] = t;
            Ok(f(&perturbed)?.0)
        };
        let fd = (eval_at(FD_STEP)? - eval_at(-FD_STEP)?) / (2.0 * FD_STEP);

        let rel = (bp - fd).abs() / bp.abs().max(fd.abs()).max(1e-6);
        if rel > report.max_rel_err {
            report.max_rel_err = rel;
            report.worst_param = p;
            report.worst_coord = off;
        }
    }
    report.pass = report.max_rel_err < tolerance;
    Ok(report)
}
