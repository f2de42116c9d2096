//! Central finite-difference verification of the analytic gradients.

use ndarray::ArrayView2;

use super::{backward, bce_loss, forward, ModelError, NetworkParams};

/// Step used for the symmetric difference quotient.
pub const FD_STEP: f64 = 1e-5;
/// Coordinates where both gradients are below this are treated as zero
/// and skipped (0/0 guard).
const ZERO_GUARD: f64 = 1e-10;
/// Denominator floor for the relative error. The difference quotient
/// carries ~eps*|loss|/(2h) of roundoff (about 1e-11 here), so
/// coordinates smaller than this floor are held to an absolute bound of
/// tolerance * floor instead of a pure ratio.
const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_coord: usize,
    pub n_checked: usize,
    pub n_skipped: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }
}

/// Compare analytic gradients against central finite differences for
/// every parameter coordinate.
///
/// `train_seed` fixes the dropout masks so the differentiated function
/// is deterministic; use the same seed policy as the forward pass being
/// verified.
pub fn grad_check(
    params: &NetworkParams,
    chunk: &ArrayView2<f64>,
    label: f64,
    dropout_rate: f64,
    train_seed: Option<u64>,
    tolerance: f64,
) -> Result<GradCheckReport, ModelError> {
    let (_, cache) = forward(params, chunk, dropout_rate, train_seed)?;
    let (_, grads) = backward(params, &cache, label)?;
    let analytic = grads.to_flat();

    let dims = params.dims;
    let loss_at = |flat: &[f64]| -> Result<f64, ModelError> {
        let p = NetworkParams::from_flat(dims, flat)?;
        let (prob, _) = forward(&p, chunk, dropout_rate, train_seed)?;
        Ok(bce_loss(prob, label))
    };

    let mut flat = params.to_flat();
    let mut numeric = vec![0.0; flat.len()];
    for i in 0..flat.len() {
        let orig = flat[i];
        flat[i] = orig + FD_STEP;
        let plus = loss_at(&flat)?;
        flat[i] = orig - FD_STEP;
        let minus = loss_at(&flat)?;
        flat[i] = orig;
        numeric[i] = (plus - minus) / (2.0 * FD_STEP);
    }

    Ok(compare(&analytic, &numeric, tolerance))
}

/// Relative-error comparison used by [`grad_check`]; exposed so tests
/// can verify that a corrupted gradient is caught.
pub fn compare(analytic: &[f64], numeric: &[f64], tolerance: f64) -> GradCheckReport {
    assert_eq!(analytic.len(), numeric.len());
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_coord: 0,
        n_checked: 0,
        n_skipped: 0,
        tolerance,
    };
    for (i, (&a, &n)) in analytic.iter().zip(numeric.iter()).enumerate() {
        if a.abs().max(n.abs()) < ZERO_GUARD {
            report.n_skipped += 1;
            continue;
        }
        report.n_checked += 1;
        let rel = (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR);
        if rel > report.max_rel_err {
            report.max_rel_err = rel;
            report.worst_coord = i;
        }
    }
    report
}
