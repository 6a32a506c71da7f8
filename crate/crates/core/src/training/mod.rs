//! Masked cross-entropy training with Adam.

mod adam;
mod gradcheck;
mod loss;

pub use adam::{adam_step, AdamConfig, AdamState, Slot};
pub use gradcheck::{gradcheck, rel_error, GradCheckEntry, GradCheckReport, FLOOR_SCALE};
pub use loss::{
    argmax, batch_loss, summed_sentence_probability, story_gradients, story_loss, story_loss_on, token_metrics, LossTerms,
    StoryGradients,
};

use std::fs::File;
use std::io::Write;
use std::path::Path;

use log::{debug, info};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::StoryRecord;
use crate::decoder::ModelParameters;
use crate::error::{Error, Result};
use crate::numerics::RealArray;
use crate::rng::SplitMix64;

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const LOSS_LOG_FILE: &str = "loss.csv";

const SHUFFLE_STREAM: u64 = 0x5348_5546;
const DROPOUT_STREAM: u64 = 0x4452_4f50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub dropout_p: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Set from the run's top-level seed.
    #[serde(skip)]
    pub seed: u64,
    pub grad_clip_norm: f64,
    /// Words per sentence (`L`).
    pub sentence_len: usize,
    /// Images, and sentences, per story (`N`).
    pub images_per_story: usize,
    /// Hidden and embedding size (`D`).
    pub hidden: usize,
    /// Spatial locations per image (`M`).
    pub locations: usize,
    pub raw_dim: usize,
    pub freeze_embeddings: bool,
    /// Also score the `<NULL>` that ends each short sentence.
    pub learn_stop: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            dropout_p: 0.4,
            learning_rate: 1e-3,
            epochs: 300,
            seed: 7,
            grad_clip_norm: 5.0,
            sentence_len: 15,
            images_per_story: 5,
            hidden: 64,
            locations: 9,
            raw_dim: 32,
            freeze_embeddings: false,
            learn_stop: true,
        }
    }
}

impl TrainConfig {
    // The negated comparisons also reject NaN.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!("dropout_p must be in [0, 1), got {}", self.dropout_p)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if !(self.grad_clip_norm > 0.0) {
            return Err(Error::Config(format!("grad_clip_norm must be positive, got {}", self.grad_clip_norm)));
        }
        for (name, v) in [
            ("sentence_len", self.sentence_len),
            ("images_per_story", self.images_per_story),
            ("hidden", self.hidden),
            ("locations", self.locations),
            ("raw_dim", self.raw_dim),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Training loss per unmasked token, averaged over the epoch.
    pub mean_loss: f64,
    pub token_accuracy: f64,
}

impl EpochStats {
    pub fn csv_line(&self) -> String {
        format!("{},{},{}", self.epoch, self.mean_loss, self.token_accuracy)
    }
}

pub const LOSS_LOG_HEADER: &str = "epoch,mean_loss,token_accuracy";

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParameters,
    pub log: Vec<EpochStats>,
}

/// Trains `params` on `corpus`.
///
/// Results are bit-identical for any `jobs`: every story draws dropout from
/// its own stream keyed by `(seed, epoch, story)` and per-story gradients are
/// summed in batch order. With `out_dir`, a checkpoint is written before the
/// first epoch and after every epoch, and the loss log is appended per epoch.
pub fn train(
    corpus: &[StoryRecord],
    mut params: ModelParameters,
    cfg: &TrainConfig,
    jobs: usize,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::EmptyInput("training corpus"));
    }
    if cfg.freeze_embeddings {
        params.word_table.trainable = false;
        params.sentence_table.trainable = false;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;

    let mut csv = None;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        params.to_checkpoint().write(&dir.join(CHECKPOINT_FILE))?;
        let mut f = File::create(dir.join(LOSS_LOG_FILE))?;
        writeln!(f, "{LOSS_LOG_HEADER}")?;
        csv = Some(f);
    }

    let names: Vec<String> = params.named().into_iter().map(|(n, _)| n).collect();
    let mut state = AdamState::new(params.named().iter().map(|(_, t)| t.shape()));
    let adam = AdamConfig {
        clip_norm: Some(cfg.grad_clip_norm),
        ..AdamConfig::new(cfg.learning_rate)
    };
    let n = corpus.len();
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        SplitMix64::stream(cfg.seed ^ SHUFFLE_STREAM, epoch as u64).shuffle(&mut order);
        let (mut nll, mut tokens, mut correct) = (0.0, 0usize, 0usize);

        for batch in order.chunks(cfg.batch_size) {
            let shared = &params;
            let results: Vec<StoryGradients> = pool.install(|| {
                batch
                    .par_iter()
                    .map(|&i| {
                        let key = (epoch as u64 - 1) * n as u64 + i as u64;
                        let mut rng = SplitMix64::stream(cfg.seed ^ DROPOUT_STREAM, key);
                        story_gradients(&corpus[i], shared, cfg.dropout_p, &mut rng, cfg.learn_stop)
                    })
                    .collect::<Result<_>>()
            })?;

            let mut grads: Vec<RealArray> = results[0].grads.clone();
            for r in &results[1..] {
                for (acc, g) in grads.iter_mut().zip(&r.grads) {
                    acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a += b);
                }
            }
            let inv = 1.0 / batch.len() as f64;
            for g in &mut grads {
                g.data_mut().iter_mut().for_each(|x| *x *= inv);
            }
            for r in &results {
                nll += r.loss;
                tokens += r.tokens;
                correct += r.correct;
            }
            if !nll.is_finite() {
                return Err(Error::Diverged { epoch, loss: nll });
            }

            let mut slots: Vec<Slot<'_>> = params
                .tensors_mut()
                .into_iter()
                .zip(&names)
                .map(|((value, trainable), name)| Slot {
                    name,
                    value,
                    trainable,
                })
                .collect();
            let norm = adam_step(&mut slots, &grads, &mut state, &adam)?;
            debug!("epoch {epoch} step {}: grad norm {norm:.4}", state.step);
        }

        let stats = EpochStats {
            epoch,
            mean_loss: if tokens == 0 { 0.0 } else { nll / tokens as f64 },
            token_accuracy: if tokens == 0 { 0.0 } else { correct as f64 / tokens as f64 },
        };
        info!(
            "epoch {epoch}: loss {:.5}, token accuracy {:.4}",
            stats.mean_loss, stats.token_accuracy
        );
        if let (Some(dir), Some(f)) = (out_dir, csv.as_mut()) {
            params.to_checkpoint().write(&dir.join(CHECKPOINT_FILE))?;
            writeln!(f, "{}", stats.csv_line())?;
        }
        log.push(stats);
    }
    Ok(TrainOutcome { params, log })
}
