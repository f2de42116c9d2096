//! Regression deltas over time.

use ndarray::{s, Array2, ArrayView2};

use super::{N_FEATURES, N_MELS};

const DELTA_WINDOW: isize = 2;

/// Append first- and second-order temporal regression deltas, tripling
/// the row count to 192. Edge frames use replicated padding.
pub fn append_deltas(logmel: &Array2<f64>) -> Array2<f64> {
    let n = logmel.ncols();
    let mut out = Array2::zeros((N_FEATURES, n));
    out.slice_mut(s![..N_MELS, ..]).assign(logmel);
    let d1 = regression_delta(&logmel.view());
    out.slice_mut(s![N_MELS..2 * N_MELS, ..]).assign(&d1);
    let d2 = regression_delta(&d1.view());
    out.slice_mut(s![2 * N_MELS.., ..]).assign(&d2);
    out
}

/// delta[d,t] = sum_{n=1..2} n * (x[d,t+n] - x[d,t-n]) / (2 * sum n^2),
/// with out-of-range frames clamped to the edges.
fn regression_delta(x: &ArrayView2<f64>) -> Array2<f64> {
    let (rows, n) = (x.nrows(), x.ncols());
    let denom: f64 = 2.0 * (1..=DELTA_WINDOW).map(|k| (k * k) as f64).sum::<f64>();
    let clamp = |t: isize| t.clamp(0, n as isize - 1) as usize;
    Array2::from_shape_fn((rows, n), |(d, t)| {
        let t = t as isize;
        (1..=DELTA_WINDOW)
            .map(|k| k as f64 * (x[[d, clamp(t + k)]] - x[[d, clamp(t - k)]]))
            .sum::<f64>()
            / denom
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn constant_input_has_zero_deltas() {
        let logmel = Array2::from_elem((N_MELS, 10), 3.7);
        let out = append_deltas(&logmel);
        assert_eq!(out.nrows(), N_FEATURES);
        for v in out.slice(s![N_MELS.., ..]).iter() {
            assert_eq!(*v, 0.0);
        }
    }

    #[test]
    fn linear_ramp_has_unit_delta_in_the_interior() {
        // x[d,t] = t; hand evaluation of the regression formula gives
        // (1*2 + 2*4) / 10 = 1 away from the edges.
        let logmel = Array2::from_shape_fn((N_MELS, 12), |(_, t)| t as f64);
        let out = append_deltas(&logmel);
        for t in 2..10 {
            for d in 0..N_MELS {
                assert!((out[[N_MELS + d, t]] - 1.0).abs() < 1e-12, "t={t}");
            }
        }
        // and the second-order delta vanishes deep in the interior
        for t in 4..8 {
            assert!(out[[2 * N_MELS, t]].abs() < 1e-12, "t={t}");
        }
    }

    #[test]
    fn edge_replication_matches_hand_computation() {
        // t=0 on a ramp: (1*(x1-x0) + 2*(x2-x0)) / 10 = (1 + 4)/10.
        let logmel = Array2::from_shape_fn((1, 6), |(_, t)| t as f64);
        let full = append_deltas(&Array2::from_shape_fn((N_MELS, 6), |(_, t)| t as f64));
        assert!((full[[N_MELS, 0]] - 0.5).abs() < 1e-12);
        drop(logmel);
    }

    #[test]
    fn single_frame_has_all_zero_deltas() {
        let logmel = Array2::from_elem((N_MELS, 1), 2.0);
        let out = append_deltas(&logmel);
        assert_eq!(out.ncols(), 1);
        for d in N_MELS..N_FEATURES {
            assert_eq!(out[[d, 0]], 0.0);
        }
    }
}
