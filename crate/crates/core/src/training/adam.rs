//! Adam with L2 regularization folded into the gradient, plus the
//! plateau learning-rate machinery living in [`OptimizerState`].

use crate::model::{Dims, Gradients, ModelError, NetworkParams};

use super::TrainError;

/// Learning rate is never reduced below this floor.
pub const LR_FLOOR: f64 = 1e-8;
/// Epochs without improvement before a reduction.
pub const PLATEAU_PATIENCE: u32 = 3;
/// Required absolute improvement of the monitored loss.
pub const IMPROVEMENT_EPS: f64 = 1e-6;

/// Adam moments plus step count, current learning rate and the plateau
/// counter. Moments are congruent with the flattened parameters.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub lr: f64,
    pub plateau_counter: u32,
    pub best_val_loss: f64,
    pub lr_at_floor: bool,
}

impl OptimizerState {
    pub fn new(dims: Dims, lr: f64) -> Self {
        assert!(lr > 0.0);
        let n = dims.param_count();
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
            lr,
            plateau_counter: 0,
            best_val_loss: f64::INFINITY,
            lr_at_floor: false,
        }
    }
}

/// One Adam update. The effective gradient is `g + l2 * theta`; moments
/// use beta1/beta2 with bias correction.
pub fn adam_step(
    params: &NetworkParams,
    grads: &Gradients,
    state: &mut OptimizerState,
    beta1: f64,
    beta2: f64,
    eps: f64,
    l2: f64,
) -> Result<NetworkParams, TrainError> {
    adam_step_flat(params, &grads.to_flat(), state, beta1, beta2, eps, l2)
}

/// [`adam_step`] on an already-flattened gradient (the training loop
/// accumulates sub-batch gradients in flat form).
pub fn adam_step_flat(
    params: &NetworkParams,
    g: &[f64],
    state: &mut OptimizerState,
    beta1: f64,
    beta2: f64,
    eps: f64,
    l2: f64,
) -> Result<NetworkParams, TrainError> {
    let mut theta = params.to_flat();
    assert_eq!(theta.len(), g.len(), "gradient shape mismatch");
    assert_eq!(theta.len(), state.m.len(), "optimizer state shape mismatch");

    state.step += 1;
    let t = state.step as i32;
    let m_corr = 1.0 - beta1.powi(t);
    let v_corr = 1.0 - beta2.powi(t);

    for i in 0..theta.len() {
        let grad = g[i] + l2 * theta[i];
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * grad;
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * grad * grad;
        let m_hat = state.m[i] / m_corr;
        let v_hat = state.v[i] / v_corr;
        theta[i] -= state.lr * m_hat / (v_hat.sqrt() + eps);
        if !theta[i].is_finite() {
            return Err(TrainError::Model(ModelError::NumericalBlowup {
                context: format!("adam update at coordinate {i}"),
            }));
        }
    }
    Ok(NetworkParams::from_flat(params.dims, &theta).expect("congruent shapes"))
}

/// Plateau scheduler: after `PLATEAU_PATIENCE` consecutive epochs
/// without the validation loss improving by more than
/// `IMPROVEMENT_EPS`, divide the learning rate by 10. The rate never
/// drops below [`LR_FLOOR`]; a refused reduction marks the floor
/// reached, which the training loop uses as its early-stop signal.
pub fn plateau_step(state: &mut OptimizerState, epoch_val_loss: f64) {
    if state.best_val_loss - epoch_val_loss > IMPROVEMENT_EPS {
        state.best_val_loss = epoch_val_loss;
        state.plateau_counter = 0;
        return;
    }
    state.plateau_counter += 1;
    if state.plateau_counter >= PLATEAU_PATIENCE {
        state.plateau_counter = 0;
        let reduced = state.lr / 10.0;
        if reduced >= LR_FLOOR {
            state.lr = reduced;
            if state.lr <= LR_FLOOR {
                state.lr_at_floor = true;
            }
        } else {
            state.lr_at_floor = true;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::NetworkParams;

    const DIMS: Dims = Dims {
        input: 6,
        hidden1: 4,
        hidden2: 4,
        fc: 4,
    };

    fn grads_of(params: &NetworkParams, fill: f64) -> Gradients {
        let flat = vec![fill; params.dims.param_count()];
        let p = NetworkParams::from_flat(params.dims, &flat).unwrap();
        Gradients {
            dims: p.dims,
            layer1: p.layer1,
            layer2: p.layer2,
            fc_w: p.fc_w,
            fc_b: p.fc_b,
            head_w: p.head_w,
            head_b: fill,
        }
    }

    #[test]
    fn zero_grads_zero_params_is_a_fixed_point() {
        let params = NetworkParams::zeros(DIMS);
        let grads = grads_of(&params, 0.0);
        let mut state = OptimizerState::new(DIMS, 1e-4);
        let next = adam_step(&params, &grads, &mut state, 0.9, 0.999, 1e-8, 1e-4).unwrap();
        assert_eq!(next.to_flat(), params.to_flat());
        assert_eq!(state.step, 1);
    }

    #[test]
    fn first_step_matches_hand_evaluated_bias_corrected_update() {
        // theta=0, g=1, t=1: m_hat=1, v_hat=1 -> delta = -lr/(1+eps)
        let params = NetworkParams::zeros(DIMS);
        let grads = grads_of(&params, 1.0);
        let mut state = OptimizerState::new(DIMS, 1e-4);
        let next = adam_step(&params, &grads, &mut state, 0.9, 0.999, 1e-8, 1e-4).unwrap();
        let expect = -1e-4 / (1.0 + 1e-8);
        for v in next.to_flat() {
            assert!((v - expect).abs() < 1e-18, "{v} vs {expect}");
        }
    }

    #[test]
    fn l2_alone_shrinks_parameters() {
        let flat = vec![1.0; DIMS.param_count()];
        let params = NetworkParams::from_flat(DIMS, &flat).unwrap();
        let grads = grads_of(&params, 0.0);
        let mut state = OptimizerState::new(DIMS, 1e-3);
        let next = adam_step(&params, &grads, &mut state, 0.9, 0.999, 1e-8, 1e-4).unwrap();
        let norm_before: f64 = params.to_flat().iter().map(|v| v * v).sum();
        let norm_after: f64 = next.to_flat().iter().map(|v| v * v).sum();
        assert!(norm_after < norm_before);
    }

    #[test]
    fn improving_losses_keep_the_rate() {
        let mut state = OptimizerState::new(DIMS, 1e-4);
        for loss in [1.0, 0.9, 0.8] {
            plateau_step(&mut state, loss);
        }
        assert_eq!(state.lr, 1e-4);
        assert!(!state.lr_at_floor);
    }

    #[test]
    fn three_flat_epochs_trigger_one_reduction() {
        let mut state = OptimizerState::new(DIMS, 1e-4);
        for _ in 0..4 {
            plateau_step(&mut state, 1.0);
        }
        assert!((state.lr - 1e-5).abs() < 1e-20);
    }

    #[test]
    fn eight_flat_epochs_trigger_exactly_two_reductions() {
        let mut state = OptimizerState::new(DIMS, 1e-4);
        for _ in 0..8 {
            plateau_step(&mut state, 1.0);
        }
        assert!((state.lr - 1e-6).abs() < 1e-21);
        assert_eq!(state.plateau_counter, 1);
    }

    #[test]
    fn rate_stays_on_the_decade_grid_and_respects_the_floor() {
        let mut state = OptimizerState::new(DIMS, 2e-3);
        let mut seen = vec![state.lr];
        for _ in 0..40 {
            plateau_step(&mut state, 1.0);
            seen.push(state.lr);
        }
        for lr in &seen {
            let ratio = 2e-3 / lr;
            let m = ratio.log10().round();
            assert!(
                (ratio - 10f64.powf(m)).abs() / ratio < 1e-12,
                "lr {lr} off the decade grid"
            );
            assert!(*lr >= LR_FLOOR);
        }
        assert!(state.lr_at_floor);
        assert!((state.lr - 2e-8).abs() < 1e-22);
    }
}
