//! End-to-end optimization: Adam updates, channel-in-the-loop training with
//! per-batch SNR sampling, deterministic validation, early stopping, and
//! bit-exact checkpoint/resume.
//!
//! Determinism: shuffling, channel draws, and validation noise come from
//! separate ChaCha streams of the run seed, so (seed, config, data) fully
//! determines the trained model and its history.

use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::config::Config;
use crate::encoder::Encoder;
use crate::loss::LossValues;
use crate::model::{ChannelDraw, Pipeline, PipelineError, QuantMode};
use crate::pointcloud::{fps, load_ply, FpsStart, PatchGrouping, PointCloud};
use crate::random::{rng_stream, stream, uniform_open01};
use crate::tensor::{Tape, Tensor};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("NaN loss in term `{term}` at epoch {epoch}, step {step}")]
    NanLoss {
        term: &'static str,
        epoch: usize,
        step: usize,
    },
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// One training cloud with its precomputed patch grouping.
pub struct DatasetItem {
    pub cloud: PointCloud,
    pub grouping: PatchGrouping,
}

pub struct Dataset {
    pub train: Vec<DatasetItem>,
    pub val: Vec<DatasetItem>,
}

impl Dataset {
    /// Builds the configured dataset: synthetic shapes or a directory of
    /// PLY files, each normalized, FPS-resampled to `data.points`, grouped
    /// into patches, and split train/validation deterministically.
    pub fn build(cfg: &Config, pipeline: &Pipeline) -> Result<Dataset, TrainError> {
        let clouds: Vec<PointCloud> = match cfg.data.kind.as_str() {
            "synthetic" => crate::pointcloud::synthetic::dataset(cfg.seed, cfg.data.count, cfg.data.points),
            "ply-dir" => {
                let dir = cfg.data.path.as_ref().expect("validated");
                let mut paths: Vec<_> = std::fs::read_dir(dir)?
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|p| p.extension().is_some_and(|e| e == "ply"))
                    .collect();
                paths.sort();
                if paths.is_empty() {
                    return Err(TrainError::Dataset(format!("no .ply files under {dir}")));
                }
                let mut out = Vec::with_capacity(paths.len());
                for p in paths {
                    let pc = load_ply(&p).map_err(|e| TrainError::Dataset(e.to_string()))?;
                    out.push(resample(&pc, cfg.data.points).map_err(TrainError::Dataset)?);
                }
                out
            }
            other => return Err(TrainError::Dataset(format!("unknown data.kind {other}"))),
        };

        let mut items = Vec::with_capacity(clouds.len());
        for cloud in clouds {
            let grouping = pipeline.grouping_for(&cloud).map_err(PipelineError::Geometry)?;
            items.push(DatasetItem { cloud, grouping });
        }
        let val_count = ((items.len() as f64) * cfg.data.val_fraction).round() as usize;
        let val_count = val_count.min(items.len().saturating_sub(1));
        let split = items.len() - val_count;
        let val = items.split_off(split);
        Ok(Dataset { train: items, val })
    }
}

/// Normalizes and FPS-downsamples a cloud to exactly `n` points.
pub fn resample(pc: &PointCloud, n: usize) -> Result<PointCloud, String> {
    let normalized = pc.normalize_bbox().map_err(|e| e.to_string())?;
    if normalized.len() < n {
        return Err(format!(
            "cloud has {} points, need at least {n}",
            normalized.len()
        ));
    }
    if normalized.len() == n {
        return Ok(normalized);
    }
    let idx = fps(&normalized, n, FpsStart::NearestCentroid).map_err(|e| e.to_string())?;
    Ok(PointCloud::new(idx.iter().map(|&i| normalized.points()[i]).collect()))
}

/// Builds the [B,T,k,3] relative-coordinate tensor and [B,N,3] reference
/// tensor for a batch of items.
pub fn batch_tensors(items: &[&DatasetItem]) -> (Tensor, Tensor) {
    let groupings: Vec<&PatchGrouping> = items.iter().map(|it| &it.grouping).collect();
    let rel = Encoder::batch_relative_coords(&groupings);
    let n = items[0].cloud.len();
    let mut data = Vec::with_capacity(items.len() * n * 3);
    for it in items {
        for p in it.cloud.points() {
            data.extend_from_slice(p);
        }
    }
    (rel, Tensor::from_vec(&[items.len(), n, 3], data))
}

/// Textbook Adam with bias correction; weight decay enters as an additive
/// L2 gradient term.
pub struct Adam {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(learning_rate: f64, weight_decay: f64, sizes: &[usize]) -> Adam {
        Adam {
            learning_rate,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: sizes.iter().map(|&s| vec![0.0; s]).collect(),
            v: sizes.iter().map(|&s| vec![0.0; s]).collect(),
        }
    }

    /// One update over the parameter list; parameters without gradients are
    /// skipped. Gradients are consumed (zeroed) afterwards.
    pub fn step(&mut self, params: &[(String, Tensor)]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (slot, (_, p)) in params.iter().enumerate() {
            let Some(grad) = p.grad() else { continue };
            let mut data = p.to_vec();
            let m = &mut self.m[slot];
            let v = &mut self.v[slot];
            for i in 0..data.len() {
                let g = grad[i] + self.weight_decay * data[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                data[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.eps);
            }
            p.set_data(&data);
            p.zero_grad();
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train: LossValues,
    pub val_cd: f64,
}

/// CSV rendering of a training history (deterministic shortest-round-trip
/// float formatting).
pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_cd,train_sym,train_sparsity,train_diversity,train_total,val_cd\n");
    for r in history {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.epoch, r.train.cd, r.train.sym, r.train.sparsity, r.train.diversity, r.train.total, r.val_cd
        ));
    }
    out
}

struct BestState {
    epoch: usize,
    val_cd: f64,
    params: Vec<Vec<f64>>,
}

/// Training driver; owns the optimizer and RNG streams so state can be
/// checkpointed and resumed bit-identically.
pub struct Trainer {
    pub adam: Adam,
    pub epoch: usize,
    pub history: Vec<EpochRecord>,
    shuffle_rng: ChaCha8Rng,
    channel_rng: ChaCha8Rng,
    best: Option<BestState>,
    since_best: usize,
}

/// Result summary of a training run.
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_cd: f64,
    pub stopped_early: bool,
}

impl Trainer {
    pub fn new(pipeline: &Pipeline, cfg: &Config) -> Trainer {
        let sizes: Vec<usize> = pipeline.parameters().iter().map(|(_, p)| p.len()).collect();
        Trainer {
            adam: Adam::new(cfg.train.learning_rate, cfg.train.weight_decay, &sizes),
            epoch: 0,
            history: Vec::new(),
            shuffle_rng: rng_stream(cfg.seed, stream::SHUFFLE),
            channel_rng: rng_stream(cfg.seed, stream::TRAIN_CHANNEL),
            best: None,
            since_best: 0,
        }
    }

    /// Mean validation chamfer through the soft path at the midpoint of the
    /// training SNR range, with identical noise every epoch (fresh stream).
    pub fn validation_chamfer(pipeline: &Pipeline, cfg: &Config, items: &[DatasetItem]) -> Result<f64, TrainError> {
        if items.is_empty() {
            return Ok(f64::NAN);
        }
        let snr = 0.5 * (cfg.train.snr_low_db + cfg.train.snr_high_db);
        let mut rng = rng_stream(cfg.seed, stream::EVAL_CHANNEL);
        let t = cfg.encoder.tokens;
        let d = cfg.encoder.dim;
        let mut acc = 0.0;
        let mut count = 0usize;
        for chunk in items.chunks(cfg.train.batch_size) {
            let refs: Vec<&DatasetItem> = chunk.iter().collect();
            let (rel, reference) = batch_tensors(&refs);
            let draw = ChannelDraw::sample(
                pipeline.config.channel_kind(),
                snr,
                0.0,
                chunk.len(),
                t * d,
                &mut rng,
            );
            let g = Tape::no_grad();
            let out = pipeline.forward_train(
                &g,
                &rel,
                &reference,
                &draw,
                pipeline.config.loss_weights(),
                pipeline.config.loss.tau,
                QuantMode::Hard,
                pipeline.config.channel.csi_equalize,
            )?;
            acc += out.breakdown.cd.item() * chunk.len() as f64;
            count += chunk.len();
        }
        Ok(acc / count as f64)
    }

    /// One epoch of optimization plus a validation pass.
    pub fn run_epoch(&mut self, pipeline: &Pipeline, cfg: &Config, dataset: &Dataset) -> Result<EpochRecord, TrainError> {
        if dataset.train.is_empty() {
            return Err(TrainError::Dataset("empty training set".into()));
        }
        let params = pipeline.parameters();
        let t = cfg.encoder.tokens;
        let d = cfg.encoder.dim;
        let weights = cfg.loss_weights();

        let mut order: Vec<usize> = (0..dataset.train.len()).collect();
        crate::random::shuffle(&mut self.shuffle_rng, &mut order);

        let mut sums = LossValues {
            cd: 0.0,
            sym: 0.0,
            sparsity: 0.0,
            diversity: 0.0,
            total: 0.0,
        };
        let mut steps = 0usize;
        for (step, batch_idx) in order.chunks(cfg.train.batch_size).enumerate() {
            let items: Vec<&DatasetItem> = batch_idx.iter().map(|&i| &dataset.train[i]).collect();
            let (rel, reference) = batch_tensors(&items);
            let snr = cfg.train.snr_low_db
                + uniform_open01(&mut self.channel_rng) * (cfg.train.snr_high_db - cfg.train.snr_low_db);
            let draw = ChannelDraw::sample(
                cfg.channel_kind(),
                snr,
                0.0,
                items.len(),
                t * d,
                &mut self.channel_rng,
            );
            let g = Tape::new();
            let out = pipeline.forward_train(
                &g,
                &rel,
                &reference,
                &draw,
                weights,
                cfg.loss.tau,
                QuantMode::Hard,
                cfg.channel.csi_equalize,
            )?;
            let v = out.breakdown.values();
            for (term, value) in [
                ("cd", v.cd),
                ("sym", v.sym),
                ("sparsity", v.sparsity),
                ("diversity", v.diversity),
                ("total", v.total),
            ] {
                if !value.is_finite() {
                    return Err(TrainError::NanLoss {
                        term,
                        epoch: self.epoch,
                        step,
                    });
                }
            }
            g.backward(&out.breakdown.total);
            self.adam.step(&params);
            sums.cd += v.cd;
            sums.sym += v.sym;
            sums.sparsity += v.sparsity;
            sums.diversity += v.diversity;
            sums.total += v.total;
            steps += 1;
        }
        let scale = 1.0 / steps as f64;
        let record = EpochRecord {
            epoch: self.epoch,
            train: LossValues {
                cd: sums.cd * scale,
                sym: sums.sym * scale,
                sparsity: sums.sparsity * scale,
                diversity: sums.diversity * scale,
                total: sums.total * scale,
            },
            val_cd: Self::validation_chamfer(pipeline, cfg, &dataset.val)?,
        };
        self.epoch += 1;
        self.history.push(record);

        // best-checkpoint bookkeeping on validation chamfer
        let val = record.val_cd;
        let improved = match &self.best {
            None => true,
            Some(b) => val.is_finite() && val < b.val_cd,
        };
        if improved {
            self.best = Some(BestState {
                epoch: record.epoch,
                val_cd: val,
                params: params.iter().map(|(_, p)| p.to_vec()).collect(),
            });
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        Ok(record)
    }

    /// Full run: up to `max_epochs` with early stopping on validation
    /// chamfer; the best-validation parameters are restored at the end.
    pub fn train(&mut self, pipeline: &Pipeline, cfg: &Config, dataset: &Dataset) -> Result<TrainOutcome, TrainError> {
        let mut stopped_early = false;
        while self.epoch < cfg.train.max_epochs {
            self.run_epoch(pipeline, cfg, dataset)?;
            if self.since_best > cfg.train.patience {
                stopped_early = true;
                break;
            }
        }
        let params = pipeline.parameters();
        let (best_epoch, best_val) = match &self.best {
            Some(best) => {
                for ((_, p), data) in params.iter().zip(&best.params) {
                    p.set_data(data);
                }
                (best.epoch, best.val_cd)
            }
            None => (0, f64::NAN),
        };
        Ok(TrainOutcome {
            history: self.history.clone(),
            best_epoch,
            best_val_cd: best_val,
            stopped_early,
        })
    }

    pub(crate) fn rng_states(&self) -> [(u64, u128); 2] {
        [
            (self.shuffle_rng.get_stream(), self.shuffle_rng.get_word_pos()),
            (self.channel_rng.get_stream(), self.channel_rng.get_word_pos()),
        ]
    }

    pub(crate) fn restore_rng_states(&mut self, cfg: &Config, states: &[(u64, u128)]) {
        self.shuffle_rng = rng_stream(cfg.seed, states[0].0);
        self.shuffle_rng.set_word_pos(states[0].1);
        self.channel_rng = rng_stream(cfg.seed, states[1].0);
        self.channel_rng.set_word_pos(states[1].1);
    }

    pub(crate) fn best_snapshot(&self) -> Option<(usize, f64, &[Vec<f64>])> {
        self.best.as_ref().map(|b| (b.epoch, b.val_cd, b.params.as_slice()))
    }

    pub(crate) fn restore_best(&mut self, epoch: usize, val_cd: f64, params: Vec<Vec<f64>>, since_best: usize) {
        self.best = Some(BestState {
            epoch,
            val_cd,
            params,
        });
        self.since_best = since_best;
    }

    pub(crate) fn since_best(&self) -> usize {
        self.since_best
    }
}
