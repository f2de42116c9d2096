//! Exact analytic gradients through pooling and both BiLSTM layers.
//!
//! Batched like the forward pass: per timestep, the gate deltas of all
//! chunks form one (B x 4H) matrix and every weight-gradient update is
//! a GEMM. Batch gradients are the mean over chunk losses.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, Array3, ArrayView3, Axis, Zip};

use super::{
    BiLstmLayer, Dims, ForwardCache, LstmDirection, ModelError, NetworkParams, PROB_CLAMP,
};

/// Parameter gradients, shape-congruent with [`NetworkParams`].
#[derive(Debug, Clone)]
pub struct Gradients {
    pub dims: Dims,
    pub layer1: BiLstmLayer,
    pub layer2: BiLstmLayer,
    pub fc_w: Array2<f64>,
    pub fc_b: Array1<f64>,
    pub head_w: Array1<f64>,
    pub head_b: f64,
}

impl Gradients {
    /// Same coordinate order as [`NetworkParams::to_flat`].
    pub fn to_flat(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.dims.param_count());
        for dir in [
            &self.layer1.fwd,
            &self.layer1.bwd,
            &self.layer2.fwd,
            &self.layer2.bwd,
        ] {
            flat.extend(dir.w_x.iter());
            flat.extend(dir.w_h.iter());
            flat.extend(dir.bias.iter());
        }
        flat.extend(self.fc_w.iter());
        flat.extend(self.fc_b.iter());
        flat.extend(self.head_w.iter());
        flat.push(self.head_b);
        flat
    }
}

/// Binary cross entropy with the probability clamped to
/// [1e-7, 1 - 1e-7] so a saturated sigmoid cannot produce infinity.
pub fn bce_loss(p: f64, label: f64) -> f64 {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    -(label * p.ln() + (1.0 - label) * (1.0 - p).ln())
}

struct DirGrads {
    w_x: Array2<f64>,
    w_h: Array2<f64>,
    bias: Array1<f64>,
}

/// BPTT through one LSTM direction.
///
/// `x` is the layer input sequence (T, B, in); `d_h_out` the incoming
/// gradient on each hidden state (T, B, H). Walks the processing order
/// backwards, so `reverse` must match the forward call.
fn lstm_dir_backward(
    dir: &LstmDirection,
    x: ArrayView3<f64>,
    cache: &super::forward::DirCache,
    d_h_out: ArrayView3<f64>,
    reverse: bool,
    compute_dx: bool,
) -> (DirGrads, Option<Array3<f64>>) {
    let (t_len, batch, input) = x.dim();
    let hidden = dir.hidden();
    let steps: Vec<usize> = if reverse {
        (0..t_len).rev().collect()
    } else {
        (0..t_len).collect()
    };

    let mut grads = DirGrads {
        w_x: Array2::zeros((4 * hidden, input)),
        w_h: Array2::zeros((4 * hidden, hidden)),
        bias: Array1::zeros(4 * hidden),
    };
    let mut d_x = compute_dx.then(|| Array3::zeros((t_len, batch, input)));

    let mut dh = Array2::zeros((batch, hidden));
    let mut dc = Array2::zeros((batch, hidden));
    let mut dh_carry = Array2::<f64>::zeros((batch, hidden));
    let mut dc_carry = Array2::<f64>::zeros((batch, hidden));
    let mut dz = Array2::zeros((batch, 4 * hidden));

    for s in (0..t_len).rev() {
        let t = steps[s];
        let gates = cache.gates.index_axis(Axis(0), t);
        let (g_i, g_f, g_g, g_o) = (
            gates.slice(s![.., ..hidden]),
            gates.slice(s![.., hidden..2 * hidden]),
            gates.slice(s![.., 2 * hidden..3 * hidden]),
            gates.slice(s![.., 3 * hidden..]),
        );
        let tanh_c = cache.tanh_c.index_axis(Axis(0), t);

        Zip::from(&mut dh)
            .and(&d_h_out.index_axis(Axis(0), t))
            .and(&dh_carry)
            .for_each(|d, &out, &carry| *d = out + carry);
        Zip::from(&mut dc)
            .and(&dh)
            .and(&g_o)
            .and(&tanh_c)
            .and(&dc_carry)
            .for_each(|dc, &dh, &o, &tc, &carry| *dc = dh * o * (1.0 - tc * tc) + carry);

        {
            let (mut dz_i, mut dz_f, mut dz_g, mut dz_o) = dz.multi_slice_mut((
                s![.., ..hidden],
                s![.., hidden..2 * hidden],
                s![.., 2 * hidden..3 * hidden],
                s![.., 3 * hidden..],
            ));
            Zip::from(&mut dz_o)
                .and(&dh)
                .and(&tanh_c)
                .and(&g_o)
                .for_each(|dz, &dh, &tc, &o| *dz = dh * tc * o * (1.0 - o));
            if s > 0 {
                let c_prev = cache.c.index_axis(Axis(0), steps[s - 1]);
                Zip::from(&mut dz_f)
                    .and(&dc)
                    .and(&c_prev)
                    .and(&g_f)
                    .for_each(|dz, &dc, &cp, &f| *dz = dc * cp * f * (1.0 - f));
            } else {
                dz_f.fill(0.0); // initial cell state is zero
            }
            Zip::from(&mut dz_i)
                .and(&dc)
                .and(&g_g)
                .and(&g_i)
                .for_each(|dz, &dc, &g, &i| *dz = dc * g * i * (1.0 - i));
            Zip::from(&mut dz_g)
                .and(&dc)
                .and(&g_i)
                .and(&g_g)
                .for_each(|dz, &dc, &i, &g| *dz = dc * i * (1.0 - g * g));
        }

        Zip::from(&mut dc_carry)
            .and(&dc)
            .and(&g_f)
            .for_each(|out, &dc, &f| *out = dc * f);

        general_mat_mul(1.0, &dz.t(), &x.index_axis(Axis(0), t), 1.0, &mut grads.w_x);
        if s > 0 {
            let h_prev = cache.h.index_axis(Axis(0), steps[s - 1]);
            general_mat_mul(1.0, &dz.t(), &h_prev, 1.0, &mut grads.w_h);
        }
        grads.bias += &dz.sum_axis(Axis(0));
        general_mat_mul(1.0, &dz, &dir.w_h, 0.0, &mut dh_carry);
        if let Some(d_x) = d_x.as_mut() {
            let mut slot = d_x.index_axis_mut(Axis(0), t);
            general_mat_mul(1.0, &dz, &dir.w_x, 0.0, &mut slot);
        }
    }
    (grads, d_x)
}

/// Mean BCE loss and exact gradients for a cached batch.
pub fn backward_batch(
    params: &NetworkParams,
    cache: &ForwardCache,
    labels: &Array1<f64>,
) -> Result<(f64, Gradients), ModelError> {
    let dims = params.dims;
    let batch = cache.probs.len();
    assert_eq!(labels.len(), batch, "label count mismatch");
    let t_len = cache.x.dim().0;

    let mut loss = 0.0;
    let mut dlogit = Array1::zeros(batch);
    for b in 0..batch {
        loss += bce_loss(cache.probs[b], labels[b]);
        dlogit[b] = (cache.probs[b] - labels[b]) / batch as f64;
    }
    loss /= batch as f64;
    if !loss.is_finite() {
        return Err(ModelError::NumericalBlowup {
            context: "batch loss".into(),
        });
    }

    // logistic head
    let head_w_grad = cache.fc_dropped.t().dot(&dlogit);
    let head_b_grad = dlogit.sum();

    // feedforward layer (through dropout and tanh)
    let mut d_act = Array2::from_shape_fn((batch, dims.fc), |(b, j)| {
        dlogit[b] * params.head_w[j]
    });
    if let Some(mask) = &cache.mask_fc {
        d_act *= mask;
    }
    let mut d_u = d_act;
    Zip::from(&mut d_u)
        .and(&cache.fc_act)
        .for_each(|d, &a| *d *= 1.0 - a * a);
    let fc_w_grad = d_u.t().dot(&cache.pooled);
    let fc_b_grad = d_u.sum_axis(Axis(0));
    let d_pooled = d_u.dot(&params.fc_w);

    // mean pooling spreads the gradient uniformly over time
    let h2 = dims.hidden2;
    let scale = 1.0 / t_len as f64;
    let mut d_h2f = Array3::zeros((t_len, batch, h2));
    let mut d_h2b = Array3::zeros((t_len, batch, h2));
    for t in 0..t_len {
        d_h2f
            .index_axis_mut(Axis(0), t)
            .assign(&(&d_pooled.slice(s![.., ..h2]) * scale));
        d_h2b
            .index_axis_mut(Axis(0), t)
            .assign(&(&d_pooled.slice(s![.., h2..]) * scale));
    }

    // layer 2 BPTT, collecting gradients w.r.t. its input sequence
    let (l2f_grads, dx_f) = lstm_dir_backward(
        &params.layer2.fwd,
        cache.l2_input.view(),
        &cache.l2_fwd,
        d_h2f.view(),
        false,
        true,
    );
    let (l2b_grads, dx_b) = lstm_dir_backward(
        &params.layer2.bwd,
        cache.l2_input.view(),
        &cache.l2_bwd,
        d_h2b.view(),
        true,
        true,
    );
    let mut d_l1_out = dx_f.expect("dx requested");
    d_l1_out += &dx_b.expect("dx requested");
    if let Some(mask) = &cache.mask1 {
        d_l1_out *= mask;
    }

    // layer 1 BPTT; input gradients are not needed
    let h1 = dims.hidden1;
    let d_h1f = d_l1_out.slice(s![.., .., ..h1]);
    let d_h1b = d_l1_out.slice(s![.., .., h1..]);
    let (l1f_grads, _) = lstm_dir_backward(
        &params.layer1.fwd,
        cache.x.view(),
        &cache.l1_fwd,
        d_h1f,
        false,
        false,
    );
    let (l1b_grads, _) = lstm_dir_backward(
        &params.layer1.bwd,
        cache.x.view(),
        &cache.l1_bwd,
        d_h1b,
        true,
        false,
    );

    let to_layer = |f: DirGrads, b: DirGrads| BiLstmLayer {
        fwd: LstmDirection {
            w_x: f.w_x,
            w_h: f.w_h,
            bias: f.bias,
        },
        bwd: LstmDirection {
            w_x: b.w_x,
            w_h: b.w_h,
            bias: b.bias,
        },
    };
    Ok((
        loss,
        Gradients {
            dims,
            layer1: to_layer(l1f_grads, l1b_grads),
            layer2: to_layer(l2f_grads, l2b_grads),
            fc_w: fc_w_grad,
            fc_b: fc_b_grad,
            head_w: head_w_grad,
            head_b: head_b_grad,
        },
    ))
}

/// Loss and gradients for a single chunk whose forward pass produced
/// `cache` (training mode with the dropout mask retained there).
pub fn backward(
    params: &NetworkParams,
    cache: &ForwardCache,
    label: f64,
) -> Result<(f64, Gradients), ModelError> {
    backward_batch(params, cache, &ndarray::arr1(&[label]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{forward, Dims};
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const TINY: Dims = Dims {
        input: 6,
        hidden1: 8,
        hidden2: 8,
        fc: 8,
    };

    fn random_chunk(input: usize, t_len: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((input, t_len), |_| rng.random::<f64>() * 2.0 - 1.0)
    }

    #[test]
    fn zero_network_loss_is_ln_two() {
        let params = crate::model::NetworkParams::zeros(TINY);
        let chunk = random_chunk(TINY.input, 4, 1);
        let (p, cache) = forward(&params, &chunk.view(), 0.0, Some(0)).unwrap();
        assert_eq!(p, 0.5);
        let (loss, _) = backward(&params, &cache, 1.0).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn head_bias_gradient_is_p_minus_y() {
        let params = crate::model::NetworkParams::init(TINY, 4);
        let chunk = random_chunk(TINY.input, 5, 2);
        for label in [0.0, 1.0] {
            let (p, cache) = forward(&params, &chunk.view(), 0.0, Some(0)).unwrap();
            let (_, grads) = backward(&params, &cache, label).unwrap();
            assert!((grads.head_b - (p - label)).abs() < 1e-14);
        }
    }

    #[test]
    fn batch_gradient_is_mean_of_chunk_gradients() {
        let params = crate::model::NetworkParams::init(TINY, 8);
        let a = random_chunk(TINY.input, 5, 3);
        let b = random_chunk(TINY.input, 5, 4);

        let mut x = ndarray::Array3::zeros((5, 2, TINY.input));
        for t in 0..5 {
            x.slice_mut(ndarray::s![t, 0, ..]).assign(&a.column(t));
            x.slice_mut(ndarray::s![t, 1, ..]).assign(&b.column(t));
        }
        let (_, cache) = crate::model::forward_batch(&params, x, 0.0, None).unwrap();
        let (loss, grads) = backward_batch(&params, &cache, &ndarray::arr1(&[1.0, 0.0])).unwrap();

        let (_, ca) = forward(&params, &a.view(), 0.0, None).unwrap();
        let (la, ga) = backward(&params, &ca, 1.0).unwrap();
        let (_, cb) = forward(&params, &b.view(), 0.0, None).unwrap();
        let (lb, gb) = backward(&params, &cb, 0.0).unwrap();

        assert!((loss - (la + lb) / 2.0).abs() < 1e-12);
        let flat = grads.to_flat();
        let fa = ga.to_flat();
        let fb = gb.to_flat();
        for i in 0..flat.len() {
            let mean = (fa[i] + fb[i]) / 2.0;
            assert!((flat[i] - mean).abs() < 1e-12, "coord {i}");
        }
    }

    #[test]
    fn bce_clamps_extreme_probabilities() {
        assert!(bce_loss(0.0, 1.0).is_finite());
        assert!(bce_loss(1.0, 0.0).is_finite());
        assert!((bce_loss(0.5, 1.0) - std::f64::consts::LN_2).abs() < 1e-12);
    }
}
