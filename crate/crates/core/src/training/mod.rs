//! Fold-wise classifier training: balanced chunk batches, Adam with L2,
//! plateau learning-rate scheduling, best-validation-AUC checkpointing.
//!
//! The loop is single-threaded and fully seeded; two runs with the same
//! inputs and seed produce bit-identical parameters and logs.

pub mod chunks;
mod adam;
mod sampler;

pub use adam::{
    adam_step, adam_step_flat, plateau_step, OptimizerState, IMPROVEMENT_EPS, LR_FLOOR,
    PLATEAU_PATIENCE,
};
pub use sampler::{ChunkDraw, ChunkPool};

use std::io::Write;
use std::path::Path;

use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::features::FeatureMatrix;
use crate::metrics::{self, MetricsError};
use crate::model::{
    backward_batch, bce_loss, forward_batch, Dims, ModelError, NetworkParams, DEFAULT_DIMS,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("no chunks available for class {label}")]
    EmptyClass { label: u8 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("bad training config: {0}")]
    Config(String),
    #[error("log i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// All training hyperparameters. Defaults follow the baseline recipe:
/// Adam at 1e-4 with l2 1e-4, dropout 0.1, batches of 1024 chunks.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparams {
    pub learning_rate: f64,
    pub l2: f64,
    pub dropout: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// `None` derives one pass over the pool: ceil(chunks / batch).
    pub steps_per_epoch: Option<usize>,
    /// Layer sizes; not part of the key=value surface.
    pub dims: Dims,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            l2: 1e-4,
            dropout: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 1024,
            max_epochs: 25,
            steps_per_epoch: None,
            dims: DEFAULT_DIMS,
        }
    }
}

impl Hyperparams {
    /// Parse a key=value config file. Unknown keys are rejected; absent
    /// keys keep their defaults. `steps_per_epoch=auto` is the default
    /// one-pass behavior.
    pub fn from_kv_text(text: &str) -> Result<Self, TrainError> {
        let mut hp = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(TrainError::Config(format!(
                    "line {}: expected key=value, found '{line}'",
                    lineno + 1
                )));
            };
            let (key, value) = (key.trim(), value.trim());
            let bad = |what: &str| {
                TrainError::Config(format!("line {}: bad {what} '{value}'", lineno + 1))
            };
            match key {
                "learning_rate" => hp.learning_rate = value.parse().map_err(|_| bad(key))?,
                "l2" => hp.l2 = value.parse().map_err(|_| bad(key))?,
                "dropout" => hp.dropout = value.parse().map_err(|_| bad(key))?,
                "beta1" => hp.beta1 = value.parse().map_err(|_| bad(key))?,
                "beta2" => hp.beta2 = value.parse().map_err(|_| bad(key))?,
                "epsilon" => hp.epsilon = value.parse().map_err(|_| bad(key))?,
                "batch_size" => hp.batch_size = value.parse().map_err(|_| bad(key))?,
                "max_epochs" => hp.max_epochs = value.parse().map_err(|_| bad(key))?,
                "steps_per_epoch" => {
                    hp.steps_per_epoch = if value == "auto" {
                        None
                    } else {
                        Some(value.parse().map_err(|_| bad(key))?)
                    }
                }
                other => {
                    return Err(TrainError::Config(format!(
                        "line {}: unknown key '{other}'",
                        lineno + 1
                    )))
                }
            }
        }
        if !(0.0..1.0).contains(&hp.dropout) {
            return Err(TrainError::Config(format!(
                "dropout {} outside [0, 1)",
                hp.dropout
            )));
        }
        if hp.batch_size < 2 || hp.batch_size % 2 != 0 {
            return Err(TrainError::Config(format!(
                "batch_size {} must be even and >= 2",
                hp.batch_size
            )));
        }
        Ok(hp)
    }
}

/// One row of the per-epoch training log. Epoch 0 is the evaluation of
/// the freshly initialized network, with no train loss.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: Option<f64>,
    pub val_loss: f64,
    pub val_auc: f64,
    pub lr: f64,
}

pub fn write_epoch_log(path: impl AsRef<Path>, log: &[EpochLog]) -> Result<(), TrainError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "epoch,train_loss,val_loss,val_auc,lr")?;
    for row in log {
        let train = row.train_loss.map(|v| v.to_string()).unwrap_or_default();
        writeln!(
            f,
            "{},{},{},{},{}",
            row.epoch, train, row.val_loss, row.val_auc, row.lr
        )?;
    }
    f.flush()?;
    Ok(())
}

#[derive(Debug)]
pub struct TrainOutcome {
    /// Checkpoint with the best validation AUC.
    pub params: NetworkParams,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_auc: f64,
}

/// Chunk-level validation loss and file-level validation AUC.
fn evaluate_validation(
    params: &NetworkParams,
    val: &[(&FeatureMatrix, u8)],
) -> Result<(f64, f64), TrainError> {
    let mut loss_sum = 0.0;
    let mut n_chunks = 0usize;
    let mut file_pairs = Vec::with_capacity(val.len());
    for (feat, label) in val {
        let probs = chunks::score_chunks(params, &feat.values)?;
        for p in &probs {
            loss_sum += bce_loss(*p, f64::from(*label));
        }
        let mean = probs.iter().sum::<f64>() / probs.len() as f64;
        n_chunks += probs.len();
        file_pairs.push((mean, *label == 1));
    }
    let curve = metrics::roc_from_pairs(&file_pairs)?;
    Ok((loss_sum / n_chunks as f64, metrics::auc_trapezoid(&curve)))
}

/// One optimizer step over a balanced batch: sub-batches of fixed size
/// are processed sequentially and their gradients combined in order, so
/// the result does not depend on batch size internals.
fn train_step(
    params: &NetworkParams,
    pool: &ChunkPool,
    batch: &[ChunkDraw],
    hp: &Hyperparams,
    opt: &mut OptimizerState,
    dropout_seeds: &mut ChaCha8Rng,
) -> Result<(f64, NetworkParams), TrainError> {
    let mut grad_acc = vec![0.0; hp.dims.param_count()];
    let mut loss_acc = 0.0;
    for group in batch.chunks(chunks::SUB_BATCH) {
        let draws: Vec<(usize, usize)> = group.iter().map(|d| (d.matrix, d.start)).collect();
        let labels = Array1::from_iter(group.iter().map(|d| f64::from(d.label)));
        let x = chunks::assemble_batch(&pool.matrices, &draws);
        let seed = dropout_seeds.random::<u64>();
        let (_, cache) = forward_batch(params, x, hp.dropout, Some(seed))?;
        let (loss, grads) = backward_batch(params, &cache, &labels)?;
        let weight = group.len() as f64 / batch.len() as f64;
        loss_acc += loss * weight;
        for (acc, g) in grad_acc.iter_mut().zip(grads.to_flat()) {
            *acc += g * weight;
        }
    }
    let next = adam_step_flat(
        params, &grad_acc, opt, hp.beta1, hp.beta2, hp.epsilon, hp.l2,
    )?;
    Ok((loss_acc, next))
}

/// Train one fold: balanced batches from `train`, per-epoch validation
/// on `val`, plateau scheduling on the validation loss, checkpoint
/// selection by best validation AUC, early stop once the learning rate
/// hits its floor.
pub fn train_fold(
    train: &[(&FeatureMatrix, u8)],
    val: &[(&FeatureMatrix, u8)],
    hp: &Hyperparams,
    seed: u64,
) -> Result<TrainOutcome, TrainError> {
    let pool = ChunkPool::build(train);
    let mut params = NetworkParams::init(hp.dims, seed);
    let mut opt = OptimizerState::new(hp.dims, hp.learning_rate);
    // independent deterministic streams for sampling and dropout masks
    let mut sampler_rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x5351_4d50));
    let mut dropout_seeds = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x4452_4f50));

    let steps_per_epoch = hp
        .steps_per_epoch
        .unwrap_or_else(|| pool.total_chunks().div_ceil(hp.batch_size))
        .max(1);

    let (val_loss, val_auc) = evaluate_validation(&params, val)?;
    let mut log = vec![EpochLog {
        epoch: 0,
        train_loss: None,
        val_loss,
        val_auc,
        lr: opt.lr,
    }];
    let mut best = (params.clone(), 0usize, val_auc);

    for epoch in 1..=hp.max_epochs {
        let lr_used = opt.lr;
        let mut train_loss = 0.0;
        for _ in 0..steps_per_epoch {
            let batch = pool.balanced_batch(hp.batch_size, &mut sampler_rng)?;
            let (loss, next) =
                train_step(&params, &pool, &batch, hp, &mut opt, &mut dropout_seeds)?;
            params = next;
            train_loss += loss;
        }
        train_loss /= steps_per_epoch as f64;

        let (val_loss, val_auc) = evaluate_validation(&params, val)?;
        plateau_step(&mut opt, val_loss);
        log.push(EpochLog {
            epoch,
            train_loss: Some(train_loss),
            val_loss,
            val_auc,
            lr: lr_used,
        });
        if val_auc > best.2 {
            best = (params.clone(), epoch, val_auc);
        }
        if opt.lr_at_floor {
            break;
        }
    }

    Ok(TrainOutcome {
        params: best.0,
        log,
        best_epoch: best.1,
        best_val_auc: best.2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::N_FEATURES;
    use ndarray::Array2;
    use rand::Rng;

    fn synthetic_file(id: &str, n_frames: usize, class_shift: f64, rng: &mut ChaCha8Rng) -> FeatureMatrix {
        let values = Array2::from_shape_fn((N_FEATURES, n_frames), |(d, _)| {
            let base: f64 = rng.random::<f64>() - 0.5;
            if d < 32 {
                base + class_shift * (rng.random::<f64>() - 0.2)
            } else {
                base
            }
        });
        FeatureMatrix {
            values,
            source_id: id.into(),
        }
    }

    fn tiny_hp() -> Hyperparams {
        Hyperparams {
            batch_size: 16,
            max_epochs: 2,
            steps_per_epoch: Some(3),
            learning_rate: 1e-3,
            dims: Dims {
                input: N_FEATURES,
                hidden1: 6,
                hidden2: 6,
                fc: 6,
            },
            ..Default::default()
        }
    }

    fn tiny_dataset(seed: u64) -> Vec<(FeatureMatrix, u8)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..10)
            .map(|i| {
                let label = u8::from(i % 2 == 0);
                let shift = if label == 1 { 1.5 } else { 0.0 };
                (
                    synthetic_file(&format!("f{i}"), 80 + 7 * i, shift, &mut rng),
                    label,
                )
            })
            .collect()
    }

    #[test]
    fn same_seed_same_trajectory() {
        let data = tiny_dataset(1);
        let refs: Vec<(&FeatureMatrix, u8)> = data.iter().map(|(f, l)| (f, *l)).collect();
        let (train, val) = refs.split_at(6);
        let hp = tiny_hp();
        let a = train_fold(train, val, &hp, 7).unwrap();
        let b = train_fold(train, val, &hp, 7).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.params.to_flat(), b.params.to_flat());
        let c = train_fold(train, val, &hp, 8).unwrap();
        assert_ne!(a.params.to_flat(), c.params.to_flat());
    }

    #[test]
    fn zero_epochs_returns_initialized_params_and_one_log_row() {
        let data = tiny_dataset(2);
        let refs: Vec<(&FeatureMatrix, u8)> = data.iter().map(|(f, l)| (f, *l)).collect();
        let (train, val) = refs.split_at(6);
        let hp = Hyperparams {
            max_epochs: 0,
            ..tiny_hp()
        };
        let out = train_fold(train, val, &hp, 3).unwrap();
        assert_eq!(out.log.len(), 1);
        assert_eq!(out.log[0].epoch, 0);
        assert!(out.log[0].train_loss.is_none());
        assert_eq!(out.best_epoch, 0);
        let init = NetworkParams::init(hp.dims, 3);
        assert_eq!(out.params.to_flat(), init.to_flat());
    }

    #[test]
    fn epoch_log_csv_has_contract_columns() {
        let log = vec![
            EpochLog {
                epoch: 0,
                train_loss: None,
                val_loss: 0.7,
                val_auc: 0.5,
                lr: 1e-4,
            },
            EpochLog {
                epoch: 1,
                train_loss: Some(0.68),
                val_loss: 0.66,
                val_auc: 0.61,
                lr: 1e-4,
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.csv");
        write_epoch_log(&path, &log).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("epoch,train_loss,val_loss,val_auc,lr"));
        assert_eq!(lines.next(), Some("0,,0.7,0.5,0.0001"));
        assert_eq!(lines.next(), Some("1,0.68,0.66,0.61,0.0001"));
    }

    #[test]
    fn kv_config_parses_and_rejects_unknown_keys() {
        let hp = Hyperparams::from_kv_text(
            "# comment\nlearning_rate = 0.001\nbatch_size=64\nsteps_per_epoch=auto\nmax_epochs=5\n",
        )
        .unwrap();
        assert_eq!(hp.learning_rate, 1e-3);
        assert_eq!(hp.batch_size, 64);
        assert_eq!(hp.steps_per_epoch, None);
        assert_eq!(hp.max_epochs, 5);
        assert_eq!(hp.l2, 1e-4);

        assert!(Hyperparams::from_kv_text("learning_rte=0.1").is_err());
        assert!(Hyperparams::from_kv_text("batch_size=7").is_err());
        assert!(Hyperparams::from_kv_text("dropout=1.5").is_err());
    }
}
