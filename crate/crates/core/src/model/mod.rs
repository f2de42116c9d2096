//! The baseline classifier: two stacked BiLSTM layers, temporal mean
//! pooling, a tanh feedforward layer and a logistic head, with exact
//! analytic gradients computed in-module (no autodiff framework).
//!
//! All training-path arithmetic is 64-bit. Parameters flatten to a
//! single vector in a fixed documented order (see [`NetworkParams::to_flat`]),
//! which is also the checkpoint layout and the optimizer's coordinate
//! space.

mod backward;
mod forward;
mod gradcheck;

pub use backward::{backward, backward_batch, bce_loss, Gradients};
pub use forward::{forward, forward_batch, ForwardCache};
pub use gradcheck::{grad_check, GradCheckReport};

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Probabilities are clamped to [CLAMP, 1 - CLAMP] before the loss.
pub const PROB_CLAMP: f64 = 1e-7;

const CKPT_MAGIC: &[u8; 8] = b"AUSCKPT\0";
const CKPT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("non-finite activations encountered in '{context}'")]
    NumericalBlowup { context: String },
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad checkpoint '{path}': {detail}")]
    Format { path: String, detail: String },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

/// Layer sizes of the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub input: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    pub fc: usize,
}

/// Production architecture: 192 -> BiLSTM(128) -> BiLSTM(128) -> FC(64) -> 1.
pub const DEFAULT_DIMS: Dims = Dims {
    input: 192,
    hidden1: 128,
    hidden2: 128,
    fc: 64,
};

impl Dims {
    /// Input width of the second BiLSTM (both directions concatenated).
    pub fn layer2_input(&self) -> usize {
        2 * self.hidden1
    }

    /// Pooled embedding width feeding the feedforward layer.
    pub fn pooled(&self) -> usize {
        2 * self.hidden2
    }

    fn lstm_params(input: usize, hidden: usize) -> usize {
        4 * hidden * (input + hidden) + 4 * hidden
    }

    /// Exact total parameter count.
    pub fn param_count(&self) -> usize {
        2 * Self::lstm_params(self.input, self.hidden1)
            + 2 * Self::lstm_params(self.layer2_input(), self.hidden2)
            + self.fc * self.pooled()
            + self.fc
            + self.fc
            + 1
    }
}

/// One direction of an LSTM layer. Gate rows are packed in the order
/// input, forget, cell candidate, output.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmDirection {
    /// (4*hidden, input)
    pub w_x: Array2<f64>,
    /// (4*hidden, hidden)
    pub w_h: Array2<f64>,
    /// (4*hidden)
    pub bias: Array1<f64>,
}

impl LstmDirection {
    fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w_x: Array2::zeros((4 * hidden, input)),
            w_h: Array2::zeros((4 * hidden, hidden)),
            bias: Array1::zeros(4 * hidden),
        }
    }

    fn init(input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut dir = Self::zeros(input, hidden);
        uniform_fill(&mut dir.w_x, input, rng);
        uniform_fill(&mut dir.w_h, hidden, rng);
        // forget-gate bias starts at 1 so early training does not forget
        dir.bias.slice_mut(ndarray::s![hidden..2 * hidden]).fill(1.0);
        dir
    }

    pub fn hidden(&self) -> usize {
        self.w_h.ncols()
    }
}

/// Forward + backward directions of one BiLSTM layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BiLstmLayer {
    pub fwd: LstmDirection,
    pub bwd: LstmDirection,
}

/// All weights of the classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub dims: Dims,
    pub layer1: BiLstmLayer,
    pub layer2: BiLstmLayer,
    /// (fc, 2*hidden2)
    pub fc_w: Array2<f64>,
    /// (fc)
    pub fc_b: Array1<f64>,
    /// (fc)
    pub head_w: Array1<f64>,
    pub head_b: f64,
}

fn uniform_fill(m: &mut Array2<f64>, fan_in: usize, rng: &mut ChaCha8Rng) {
    let bound = 1.0 / (fan_in as f64).sqrt();
    m.mapv_inplace(|_| rng.random_range(-1.0..1.0) * bound);
}

impl NetworkParams {
    /// All-zero network of the given dimensions.
    pub fn zeros(dims: Dims) -> Self {
        let params = Self {
            dims,
            layer1: BiLstmLayer {
                fwd: LstmDirection::zeros(dims.input, dims.hidden1),
                bwd: LstmDirection::zeros(dims.input, dims.hidden1),
            },
            layer2: BiLstmLayer {
                fwd: LstmDirection::zeros(dims.layer2_input(), dims.hidden2),
                bwd: LstmDirection::zeros(dims.layer2_input(), dims.hidden2),
            },
            fc_w: Array2::zeros((dims.fc, dims.pooled())),
            fc_b: Array1::zeros(dims.fc),
            head_w: Array1::zeros(dims.fc),
            head_b: 0.0,
        };
        debug_assert_eq!(params.to_flat().len(), dims.param_count());
        params
    }

    /// Seeded initialization: weights uniform in +-1/sqrt(fan_in),
    /// forget-gate biases 1, everything else 0.
    pub fn init(dims: Dims, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Self::zeros(dims);
        params.layer1 = BiLstmLayer {
            fwd: LstmDirection::init(dims.input, dims.hidden1, &mut rng),
            bwd: LstmDirection::init(dims.input, dims.hidden1, &mut rng),
        };
        params.layer2 = BiLstmLayer {
            fwd: LstmDirection::init(dims.layer2_input(), dims.hidden2, &mut rng),
            bwd: LstmDirection::init(dims.layer2_input(), dims.hidden2, &mut rng),
        };
        uniform_fill(&mut params.fc_w, dims.pooled(), &mut rng);
        let fc_bound = 1.0 / (dims.fc as f64).sqrt();
        params.head_w.mapv_inplace(|_| rng.random_range(-1.0..1.0) * fc_bound);
        assert_eq!(params.to_flat().len(), dims.param_count());
        params
    }

    pub fn all_finite(&self) -> bool {
        self.to_flat().iter().all(|v| v.is_finite())
    }

    /// Flatten in the fixed order: layer1 fwd (w_x row-major, w_h, bias),
    /// layer1 bwd, layer2 fwd, layer2 bwd, fc_w, fc_b, head_w, head_b.
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

    /// Inverse of [`Self::to_flat`].
    pub fn from_flat(dims: Dims, flat: &[f64]) -> Result<Self, ModelError> {
        if flat.len() != dims.param_count() {
            return Err(ModelError::ShapeMismatch(format!(
                "expected {} parameters, got {}",
                dims.param_count(),
                flat.len()
            )));
        }
        let mut params = Self::zeros(dims);
        let mut cursor = 0usize;
        {
            let mut take = |n: usize| {
                let s = &flat[cursor..cursor + n];
                cursor += n;
                s.to_vec()
            };
            for (input, hidden, dir) in [
                (dims.input, dims.hidden1, &mut params.layer1.fwd),
                (dims.input, dims.hidden1, &mut params.layer1.bwd),
                (dims.layer2_input(), dims.hidden2, &mut params.layer2.fwd),
                (dims.layer2_input(), dims.hidden2, &mut params.layer2.bwd),
            ] {
                dir.w_x = Array2::from_shape_vec((4 * hidden, input), take(4 * hidden * input))
                    .expect("w_x shape");
                dir.w_h = Array2::from_shape_vec((4 * hidden, hidden), take(4 * hidden * hidden))
                    .expect("w_h shape");
                dir.bias = Array1::from_vec(take(4 * hidden));
            }
            params.fc_w = Array2::from_shape_vec((dims.fc, dims.pooled()), take(dims.fc * dims.pooled()))
                .expect("fc shape");
            params.fc_b = Array1::from_vec(take(dims.fc));
            params.head_w = Array1::from_vec(take(dims.fc));
            params.head_b = flat[cursor];
            cursor += 1;
        }
        debug_assert_eq!(cursor, flat.len());
        Ok(params)
    }

    /// Write a versioned binary checkpoint.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(CKPT_MAGIC)?;
        w.write_all(&CKPT_VERSION.to_le_bytes())?;
        for d in [
            self.dims.input,
            self.dims.hidden1,
            self.dims.hidden2,
            self.dims.fc,
        ] {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for v in self.to_flat() {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let path = path.as_ref();
        let display = path.display().to_string();
        let bad = |detail: String| ModelError::Format {
            path: display.clone(),
            detail,
        };
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CKPT_MAGIC {
            return Err(bad(format!("bad magic {magic:02x?}")));
        }
        let mut word = [0u8; 4];
        r.read_exact(&mut word)?;
        let version = u32::from_le_bytes(word);
        if version != CKPT_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let mut dim = [0usize; 4];
        for d in dim.iter_mut() {
            r.read_exact(&mut word)?;
            *d = u32::from_le_bytes(word) as usize;
        }
        let dims = Dims {
            input: dim[0],
            hidden1: dim[1],
            hidden2: dim[2],
            fc: dim[3],
        };
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.len() != dims.param_count() * 8 {
            return Err(bad(format!(
                "expected {} parameter bytes, found {}",
                dims.param_count() * 8,
                bytes.len()
            )));
        }
        let flat: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::from_flat(dims, &flat)
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_dims_param_count_is_exact() {
        // 2*(512*192 + 512*128 + 512) + 2*(512*256 + 512*128 + 512)
        //   + 64*256 + 64 + 64 + 1
        assert_eq!(DEFAULT_DIMS.param_count(), 739_457);
        let p = NetworkParams::zeros(DEFAULT_DIMS);
        assert_eq!(p.to_flat().len(), 739_457);
    }

    #[test]
    fn flat_roundtrip_is_lossless() {
        let dims = Dims {
            input: 6,
            hidden1: 8,
            hidden2: 8,
            fc: 8,
        };
        let p = NetworkParams::init(dims, 42);
        let flat = p.to_flat();
        let q = NetworkParams::from_flat(dims, &flat).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn init_is_seed_deterministic_and_finite() {
        let dims = Dims {
            input: 6,
            hidden1: 4,
            hidden2: 4,
            fc: 4,
        };
        let a = NetworkParams::init(dims, 7);
        let b = NetworkParams::init(dims, 7);
        let c = NetworkParams::init(dims, 8);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.all_finite());
    }

    #[test]
    fn forget_gate_bias_initializes_to_one() {
        let dims = Dims {
            input: 6,
            hidden1: 4,
            hidden2: 4,
            fc: 4,
        };
        let p = NetworkParams::init(dims, 1);
        for dir in [&p.layer1.fwd, &p.layer1.bwd, &p.layer2.fwd, &p.layer2.bwd] {
            for j in 4..8 {
                assert_eq!(dir.bias[j], 1.0);
            }
            for j in (0..4).chain(8..16) {
                assert_eq!(dir.bias[j], 0.0);
            }
        }
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let dims = Dims {
            input: 6,
            hidden1: 5,
            hidden2: 3,
            fc: 4,
        };
        let p = NetworkParams::init(dims, 9);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        p.save(&path).unwrap();
        let q = NetworkParams::load(&path).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn truncated_checkpoint_is_rejected() {
        let dims = Dims {
            input: 6,
            hidden1: 5,
            hidden2: 3,
            fc: 4,
        };
        let p = NetworkParams::init(dims, 9);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        p.save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
        assert!(matches!(
            NetworkParams::load(&path),
            Err(ModelError::Format { .. })
        ));
    }
}
