//! Batched forward pass with cached activations for BPTT.
//!
//! Chunks are processed as a (T, B, input) tensor so each timestep is a
//! single (B x input) GEMM against the gate weights. The per-chunk
//! public entry point [`forward`] is the B = 1 case of the same code
//! path, so training, inference and the unit oracles all exercise
//! identical arithmetic.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, Array3, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{sigmoid, LstmDirection, ModelError, NetworkParams};

/// Per-direction activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct DirCache {
    /// Activated gates (T, B, 4H), blocks i | f | g | o.
    pub gates: Array3<f64>,
    /// Cell states (T, B, H).
    pub c: Array3<f64>,
    /// tanh of cell states (T, B, H).
    pub tanh_c: Array3<f64>,
    /// Hidden states (T, B, H).
    pub h: Array3<f64>,
}

/// Everything the backward pass needs, captured during forward.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Network input (T, B, input).
    pub x: Array3<f64>,
    pub l1_fwd: DirCache,
    pub l1_bwd: DirCache,
    /// Layer-2 input: layer-1 concat output after dropout (T, B, 2H1).
    pub l2_input: Array3<f64>,
    /// Dropout multipliers for the layer-1 output, when training.
    pub mask1: Option<Array3<f64>>,
    pub l2_fwd: DirCache,
    pub l2_bwd: DirCache,
    /// Temporal mean of the layer-2 output (B, 2H2).
    pub pooled: Array2<f64>,
    /// tanh(fc pre-activation) (B, fc).
    pub fc_act: Array2<f64>,
    /// fc activations after dropout (B, fc).
    pub fc_dropped: Array2<f64>,
    /// Dropout multipliers for the fc output, when training.
    pub mask_fc: Option<Array2<f64>>,
    pub logits: Array1<f64>,
    pub probs: Array1<f64>,
}

impl DirCache {
    fn new(t_len: usize, batch: usize, hidden: usize) -> Self {
        Self {
            gates: Array3::zeros((t_len, batch, 4 * hidden)),
            c: Array3::zeros((t_len, batch, hidden)),
            tanh_c: Array3::zeros((t_len, batch, hidden)),
            h: Array3::zeros((t_len, batch, hidden)),
        }
    }
}

/// One LSTM direction over the whole sequence. `reverse` selects the
/// processing order (backward-in-time direction of a BiLSTM).
fn run_direction(dir: &LstmDirection, x: &Array3<f64>, reverse: bool) -> DirCache {
    let (t_len, batch, _) = x.dim();
    let hidden = dir.hidden();
    let mut cache = DirCache::new(t_len, batch, hidden);

    let wx_t = dir.w_x.t();
    let wh_t = dir.w_h.t();
    let mut h_prev = Array2::zeros((batch, hidden));
    let mut c_prev = Array2::zeros((batch, hidden));
    let mut z = Array2::zeros((batch, 4 * hidden));

    let steps: Vec<usize> = if reverse {
        (0..t_len).rev().collect()
    } else {
        (0..t_len).collect()
    };
    for &t in &steps {
        general_mat_mul(1.0, &x.index_axis(Axis(0), t), &wx_t, 0.0, &mut z);
        general_mat_mul(1.0, &h_prev, &wh_t, 1.0, &mut z);
        z += &dir.bias;

        {
            let (mut zi, mut zf, mut zg, mut zo) = z.multi_slice_mut((
                s![.., ..hidden],
                s![.., hidden..2 * hidden],
                s![.., 2 * hidden..3 * hidden],
                s![.., 3 * hidden..],
            ));
            zi.mapv_inplace(sigmoid);
            zf.mapv_inplace(sigmoid);
            zg.mapv_inplace(f64::tanh);
            zo.mapv_inplace(sigmoid);

            let mut c_t = cache.c.index_axis_mut(Axis(0), t);
            Zip::from(&mut c_t)
                .and(&zf)
                .and(&c_prev)
                .and(&zi)
                .and(&zg)
                .for_each(|c, &f, &cp, &i, &g| *c = f * cp + i * g);
            let mut tanh_t = cache.tanh_c.index_axis_mut(Axis(0), t);
            Zip::from(&mut tanh_t)
                .and(&c_t)
                .for_each(|tc, &c| *tc = c.tanh());
            let mut h_t = cache.h.index_axis_mut(Axis(0), t);
            Zip::from(&mut h_t)
                .and(&zo)
                .and(&tanh_t)
                .for_each(|h, &o, &tc| *h = o * tc);

            c_prev.assign(&c_t);
            h_prev.assign(&h_t);
        }
        cache.gates.index_axis_mut(Axis(0), t).assign(&z);
    }
    cache
}

fn dropout_mask3(dim: (usize, usize, usize), rate: f64, rng: &mut ChaCha8Rng) -> Array3<f64> {
    let scale = 1.0 / (1.0 - rate);
    Array3::from_shape_simple_fn(dim, || {
        if rng.random::<f64>() < rate {
            0.0
        } else {
            scale
        }
    })
}

fn dropout_mask2(dim: (usize, usize), rate: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let scale = 1.0 / (1.0 - rate);
    Array2::from_shape_simple_fn(dim, || {
        if rng.random::<f64>() < rate {
            0.0
        } else {
            scale
        }
    })
}

/// Run the classifier on a batch of chunks.
///
/// `x` has shape (T, B, input). `train_seed` switches to training mode:
/// inverted dropout is applied to the layer-1 output and the fc output
/// with masks drawn from a ChaCha stream seeded by the value, and the
/// cache retains those masks for the backward pass. `None` is inference
/// mode: no dropout, deterministic output.
pub fn forward_batch(
    params: &NetworkParams,
    x: Array3<f64>,
    dropout_rate: f64,
    train_seed: Option<u64>,
) -> Result<(Array1<f64>, ForwardCache), ModelError> {
    let dims = params.dims;
    let (t_len, batch, input) = x.dim();
    assert!(t_len >= 1, "empty chunk");
    assert_eq!(input, dims.input, "input width mismatch");
    assert!(
        (0.0..1.0).contains(&dropout_rate),
        "dropout rate must be in [0, 1)"
    );

    let mut rng = train_seed.map(ChaCha8Rng::seed_from_u64);
    let dropping = rng.is_some() && dropout_rate > 0.0;

    // layer 1
    let l1_fwd = run_direction(&params.layer1.fwd, &x, false);
    let l1_bwd = run_direction(&params.layer1.bwd, &x, true);
    let h1 = dims.hidden1;
    let mut l2_input = Array3::zeros((t_len, batch, 2 * h1));
    l2_input.slice_mut(s![.., .., ..h1]).assign(&l1_fwd.h);
    l2_input.slice_mut(s![.., .., h1..]).assign(&l1_bwd.h);
    let mask1 = dropping.then(|| {
        dropout_mask3((t_len, batch, 2 * h1), dropout_rate, rng.as_mut().unwrap())
    });
    if let Some(m) = &mask1 {
        l2_input *= m;
    }

    // layer 2
    let l2_fwd = run_direction(&params.layer2.fwd, &l2_input, false);
    let l2_bwd = run_direction(&params.layer2.bwd, &l2_input, true);

    // temporal mean pooling of the concatenated layer-2 output
    let h2 = dims.hidden2;
    let mut pooled = Array2::zeros((batch, 2 * h2));
    pooled
        .slice_mut(s![.., ..h2])
        .assign(&l2_fwd.h.mean_axis(Axis(0)).expect("t_len >= 1"));
    pooled
        .slice_mut(s![.., h2..])
        .assign(&l2_bwd.h.mean_axis(Axis(0)).expect("t_len >= 1"));

    // feedforward layer with tanh, then the logistic head
    let mut fc_act = pooled.dot(&params.fc_w.t());
    fc_act += &params.fc_b;
    fc_act.mapv_inplace(f64::tanh);
    let mask_fc = dropping
        .then(|| dropout_mask2((batch, dims.fc), dropout_rate, rng.as_mut().unwrap()));
    let fc_dropped = match &mask_fc {
        Some(m) => &fc_act * m,
        None => fc_act.clone(),
    };
    let mut logits = fc_dropped.dot(&params.head_w);
    logits += params.head_b;
    if !logits.iter().all(|v| v.is_finite()) {
        return Err(ModelError::NumericalBlowup {
            context: "forward logits".into(),
        });
    }
    let probs = logits.mapv(sigmoid);

    let cache = ForwardCache {
        x,
        l1_fwd,
        l1_bwd,
        l2_input,
        mask1,
        l2_fwd,
        l2_bwd,
        pooled,
        fc_act,
        fc_dropped,
        mask_fc,
        logits,
        probs: probs.clone(),
    };
    Ok((probs, cache))
}

/// Score a single 192 x T chunk. Returns the COVID probability and the
/// cached activations needed by [`super::backward`].
pub fn forward(
    params: &NetworkParams,
    chunk: &ArrayView2<f64>,
    dropout_rate: f64,
    train_seed: Option<u64>,
) -> Result<(f64, ForwardCache), ModelError> {
    let (input, t_len) = chunk.dim();
    let mut x = Array3::zeros((t_len, 1, input));
    for t in 0..t_len {
        x.slice_mut(s![t, 0, ..]).assign(&chunk.column(t));
    }
    let (probs, cache) = forward_batch(params, x, dropout_rate, train_seed)?;
    Ok((probs[0], cache))
}
