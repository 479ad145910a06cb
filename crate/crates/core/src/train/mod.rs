//! Adam training loop, per-fold model selection, checkpoints and k-fold
//! cross-validation.
//!
//! Everything here is single-threaded and seeded, so a run repeated with the
//! same inputs produces byte-identical logs and checkpoints. The shuffle
//! order of epoch `e` is drawn from stream `e` of a ChaCha generator seeded
//! with the run seed, so resuming never needs saved RNG state.

pub mod adam;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use adam::{adam_step, AdamConfig, AdamState};

use crate::arch::{Checkpoint, Forward, Model, NamedTensor, NetworkConfig};
use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::io::{Case, DatasetSplit};
use crate::loss::{combined_loss_node, LossValue};
use crate::metrics::{evaluate_tensors, MetricsReport, Scores, DEFAULT_THRESHOLD};
use crate::nn::NormMode;
use crate::tensor::Tensor;

pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LOG_FILE: &str = "train_log.tsv";

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    /// Write checkpoints every this many epochs (and after the last one);
    /// 0 disables periodic checkpoints.
    pub checkpoint_every: usize,
    /// Stop after this many epochs without a validation DC improvement.
    pub patience: Option<usize>,
    pub threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 1,
            seed: 0,
            adam: AdamConfig::default(),
            checkpoint_every: 1,
            patience: None,
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.adam.lr > 0.0 && self.adam.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.adam.lr)));
        }
        Ok(())
    }
}

/// One network input/target pair, each `[1, 1, D, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: Tensor,
    pub label: Tensor,
}

impl Sample {
    pub fn from_case(case: &Case) -> Self {
        Sample {
            id: case.id.clone(),
            image: case.image.to_tensor(),
            label: case.label.to_tensor(),
        }
    }
}

fn stack(items: &[&Tensor]) -> Result<Tensor> {
    let first = items[0].shape();
    let mut data = Vec::with_capacity(items.len() * items[0].len());
    for t in items {
        if t.shape() != first {
            return Err(Error::ShapeMismatch {
                lhs: first.to_vec(),
                rhs: t.shape().to_vec(),
                context: "batch items must share a shape",
            });
        }
        data.extend_from_slice(t.data());
    }
    let mut shape = first.to_vec();
    shape[0] = items.len();
    Tensor::new(shape, data)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    pub loss: LossValue,
    pub val: Scores,
}

/// Per-epoch training loss (mean over steps) and validation means.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<EpochRow>,
}

const LOG_HEADER: &str = "epoch\tloss\tdice_term\tbce_term\tval_dc\tval_ji\tval_ac";

impl TrainLog {
    pub fn to_text(&self) -> String {
        let mut out = format!("{LOG_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{}\t{:.9}\t{:.9}\t{:.9}\t{:.9}\t{:.9}\t{:.9}",
                r.epoch, r.loss.total, r.loss.dice_term, r.loss.bce_term, r.val.dc, r.val.ji, r.val.ac
            );
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(LOG_HEADER) {
            return Err(Error::InvalidValue(format!("training log must start with '{LOG_HEADER}'")));
        }
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let f: Vec<&str> = line.split('\t').collect();
            let bad = || Error::InvalidValue(format!("training log line {}: malformed row '{line}'", i + 2));
            if f.len() != 7 {
                return Err(bad());
            }
            let epoch = f[0].parse().map_err(|_| bad())?;
            let v: Vec<f64> = f[1..].iter().map(|s| s.parse()).collect::<std::result::Result<_, _>>().map_err(|_| bad())?;
            rows.push(EpochRow {
                epoch,
                loss: LossValue {
                    total: v[0],
                    dice_term: v[1],
                    bce_term: v[2],
                },
                val: Scores {
                    dc: v[3],
                    ji: v[4],
                    ac: v[5],
                },
            });
        }
        Ok(TrainLog { rows })
    }
}

#[derive(Clone, Debug)]
pub struct BestModel {
    pub epoch: usize,
    pub scores: Scores,
    pub model: Model,
}

/// Everything needed to continue training exactly where it stopped.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub model: Model,
    pub adam: AdamState,
    pub epochs_done: usize,
    pub log: TrainLog,
    pub best: Option<BestModel>,
}

fn scalar_entry(name: &str, v: f64) -> NamedTensor {
    NamedTensor {
        name: name.to_string(),
        value: Tensor::scalar(v),
    }
}

fn read_scalar(ckpt: &Checkpoint, name: &str) -> Result<f64> {
    ckpt.get(name)
        .ok_or_else(|| Error::InvalidValue(format!("checkpoint is missing '{name}'")))?
        .item()
}

impl TrainState {
    pub fn new(model: Model, adam: AdamConfig) -> Self {
        let adam = AdamState::new(model.store().params(), adam);
        TrainState {
            model,
            adam,
            epochs_done: 0,
            log: TrainLog::default(),
            best: None,
        }
    }

    /// Model, optimizer moments and epoch counter in one checkpoint.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ckpt = self.model.to_checkpoint();
        for (p, (m, v)) in self.model.store().params().iter().zip(self.adam.m.iter().zip(&self.adam.v)) {
            ckpt.entries.push(NamedTensor {
                name: format!("adam.m.{}", p.name),
                value: m.clone(),
            });
            ckpt.entries.push(NamedTensor {
                name: format!("adam.v.{}", p.name),
                value: v.clone(),
            });
        }
        ckpt.entries.push(scalar_entry("adam.t", self.adam.t as f64));
        ckpt.entries.push(scalar_entry("train.epoch", self.epochs_done as f64));
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint, adam: AdamConfig) -> Result<Self> {
        let model = Model::from_checkpoint(ckpt)?;
        let mut state = AdamState::new(model.store().params(), adam);
        for (i, p) in model.store().params().iter().enumerate() {
            for (prefix, slot) in [("adam.m.", &mut state.m[i]), ("adam.v.", &mut state.v[i])] {
                let name = format!("{prefix}{}", p.name);
                let t = ckpt
                    .get(&name)
                    .ok_or_else(|| Error::InvalidValue(format!("checkpoint is missing '{name}'")))?;
                if t.shape() != slot.shape() {
                    return Err(Error::InvalidValue(format!("'{name}' has shape {:?}", t.shape())));
                }
                *slot = t.clone();
            }
        }
        state.t = read_scalar(ckpt, "adam.t")? as u64;
        let epochs_done = read_scalar(ckpt, "train.epoch")? as usize;
        Ok(TrainState {
            model,
            adam: state,
            epochs_done,
            log: TrainLog::default(),
            best: None,
        })
    }

    /// Writes `last.ckpt`, `best.ckpt` (when a best model exists) and the log.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.to_checkpoint().save(dir.join(LAST_CHECKPOINT))?;
        if let Some(best) = &self.best {
            let mut ckpt = best.model.to_checkpoint();
            ckpt.entries.push(scalar_entry("best.epoch", best.epoch as f64));
            ckpt.entries.push(scalar_entry("best.dc", best.scores.dc));
            ckpt.entries.push(scalar_entry("best.ji", best.scores.ji));
            ckpt.entries.push(scalar_entry("best.ac", best.scores.ac));
            ckpt.save(dir.join(BEST_CHECKPOINT))?;
        }
        let log = dir.join(LOG_FILE);
        std::fs::write(&log, self.log.to_text()).map_err(|e| Error::io(log, e))
    }

    /// Restores a run directory written by [`save`](Self::save).
    pub fn resume(dir: &Path, adam: AdamConfig) -> Result<Self> {
        let last = Checkpoint::load(dir.join(LAST_CHECKPOINT))?;
        let mut state = TrainState::from_checkpoint(&last, adam)?;
        let log_path = dir.join(LOG_FILE);
        let text = std::fs::read_to_string(&log_path).map_err(|e| Error::io(&log_path, e))?;
        state.log = TrainLog::from_text(&text).map_err(|e| Error::format(&log_path, e.to_string()))?;
        state.log.rows.truncate(state.epochs_done);
        let best_path = dir.join(BEST_CHECKPOINT);
        if best_path.exists() {
            let ckpt = Checkpoint::load(&best_path)?;
            state.best = Some(BestModel {
                epoch: read_scalar(&ckpt, "best.epoch")? as usize,
                scores: Scores {
                    dc: read_scalar(&ckpt, "best.dc")?,
                    ji: read_scalar(&ckpt, "best.ji")?,
                    ac: read_scalar(&ckpt, "best.ac")?,
                },
                model: Model::from_checkpoint(&ckpt)?,
            });
        }
        Ok(state)
    }
}

/// Forward in train mode, combined loss, backward, running-stat update and
/// one Adam step on a stacked batch.
pub fn train_step(model: &mut Model, adam: &mut AdamState, batch: &[&Sample]) -> Result<LossValue> {
    let images: Vec<&Tensor> = batch.iter().map(|s| &s.image).collect();
    let labels: Vec<&Tensor> = batch.iter().map(|s| &s.label).collect();
    let x = stack(&images)?;
    let y = stack(&labels)?;
    let mut graph = Graph::new();
    let input = graph.constant(x);
    let mut f = Forward::new(&mut graph, model.store(), NormMode::Train, true);
    let pred = model.forward(&mut f, input)?;
    let binding = f.finish();
    let (loss, value) = combined_loss_node(&mut graph, pred, &y)?;
    if !value.total.is_finite() {
        return Err(Error::NonFinite(format!("training loss is {}", value.total)));
    }
    let grads = graph.backward(loss)?;
    let grads = binding.parameter_grads(model.store(), &grads);
    adam_step(model.store_mut().params_mut(), &grads, adam)?;
    model.apply_norm_updates(&binding.updates);
    Ok(value)
}

/// Inference-mode scores for each sample.
pub fn evaluate_samples(model: &Model, samples: &[Sample], threshold: f64) -> Result<MetricsReport> {
    let mut report = MetricsReport::default();
    for s in samples {
        let p = model.predict(&s.image)?;
        report.push(s.id.clone(), evaluate_tensors(&s.label, &p, threshold)?);
    }
    Ok(report)
}

/// Runs one epoch of shuffled mini-batches and returns the mean loss.
pub fn train_epoch(state: &mut TrainState, train: &[Sample], config: &TrainConfig) -> Result<LossValue> {
    let epoch = state.epochs_done + 1;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(epoch as u64);
    order.shuffle(&mut rng);
    let mut sum = LossValue {
        total: 0.0,
        dice_term: 0.0,
        bce_term: 0.0,
    };
    let mut steps = 0usize;
    for (step, chunk) in order.chunks(config.batch_size).enumerate() {
        let batch: Vec<&Sample> = chunk.iter().map(|&i| &train[i]).collect();
        let v = train_step(&mut state.model, &mut state.adam, &batch).map_err(|e| match e {
            Error::NonFinite(msg) => Error::NonFinite(format!("epoch {epoch}, step {}: {msg}", step + 1)),
            other => other,
        })?;
        sum.total += v.total;
        sum.dice_term += v.dice_term;
        sum.bce_term += v.bce_term;
        steps += 1;
    }
    let n = steps as f64;
    Ok(LossValue {
        total: sum.total / n,
        dice_term: sum.dice_term / n,
        bce_term: sum.bce_term / n,
    })
}

/// Trains until `config.epochs` epochs are done (continuing from
/// `state.epochs_done`), validating after every epoch and keeping the model
/// with the best mean validation DC. With `run_dir`, checkpoints and the log
/// are written at the configured cadence; a non-finite loss aborts the run
/// and leaves the last written checkpoint untouched.
pub fn train_fold(
    mut state: TrainState,
    train: &[Sample],
    val: &[Sample],
    config: &TrainConfig,
    run_dir: Option<&Path>,
) -> Result<TrainState> {
    config.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Config(format!(
            "training needs non-empty train and validation sets (got {} and {})",
            train.len(),
            val.len()
        )));
    }
    if let Some(dup) = train.iter().find(|t| val.iter().any(|v| v.id == t.id)) {
        return Err(Error::Config(format!("case '{}' is in both train and validation sets", dup.id)));
    }
    let mut since_best = 0usize;
    while state.epochs_done < config.epochs {
        let loss = train_epoch(&mut state, train, config)?;
        state.epochs_done += 1;
        let epoch = state.epochs_done;
        let val_scores = evaluate_samples(&state.model, val, config.threshold)?
            .aggregate()
            .expect("validation set is non-empty");
        state.log.rows.push(EpochRow {
            epoch,
            loss,
            val: val_scores,
        });
        log::info!(
            "epoch {epoch}: loss {:.5} (dice {:.5}, bce {:.5}), val dc {:.4}",
            loss.total,
            loss.dice_term,
            loss.bce_term,
            val_scores.dc
        );
        let improved = state.best.as_ref().is_none_or(|b| val_scores.dc > b.scores.dc);
        if improved {
            state.best = Some(BestModel {
                epoch,
                scores: val_scores,
                model: state.model.clone(),
            });
            since_best = 0;
        } else {
            since_best += 1;
        }
        let stop = config.patience.is_some_and(|p| since_best >= p);
        if let Some(dir) = run_dir {
            let cadence = config.checkpoint_every > 0 && epoch.is_multiple_of(config.checkpoint_every);
            if cadence || epoch == config.epochs || stop {
                state.save(dir)?;
            }
        }
        if stop {
            log::info!("no validation improvement for {since_best} epochs, stopping");
            break;
        }
    }
    Ok(state)
}

#[derive(Clone, Debug)]
pub struct FoldOutcome {
    pub fold: usize,
    pub log: TrainLog,
    pub best_epoch: usize,
    /// Best model scored on its own training cases.
    pub train_report: MetricsReport,
    /// Best model scored on the validation fold.
    pub val_report: MetricsReport,
    pub best_model: Model,
}

#[derive(Clone, Debug)]
pub struct CvReport {
    pub folds: Vec<FoldOutcome>,
    /// Index into `folds` of the model used on the test set.
    pub selected_fold: usize,
    pub test_report: MetricsReport,
}

fn mean_scores(reports: impl Iterator<Item = Scores>) -> Scores {
    let all: Vec<Scores> = reports.collect();
    let n = all.len().max(1) as f64;
    Scores {
        dc: all.iter().map(|s| s.dc).sum::<f64>() / n,
        ji: all.iter().map(|s| s.ji).sum::<f64>() / n,
        ac: all.iter().map(|s| s.ac).sum::<f64>() / n,
    }
}

impl CvReport {
    pub fn train_mean(&self) -> Scores {
        mean_scores(self.folds.iter().filter_map(|f| f.train_report.aggregate()))
    }

    pub fn validation_mean(&self) -> Scores {
        mean_scores(self.folds.iter().filter_map(|f| f.val_report.aggregate()))
    }

    /// AC, DC and JI per set: training and validation are means over folds
    /// of each fold's best-epoch model; test uses the selected fold's model.
    pub fn summary_table(&self) -> String {
        let mut out = format!(
            "# best-epoch means over {} folds; test scored with fold {} (best validation DC)\nset\tAC\tDC\tJI\n",
            self.folds.len(),
            self.folds[self.selected_fold].fold
        );
        let test = self.test_report.aggregate().unwrap_or(Scores {
            dc: f64::NAN,
            ji: f64::NAN,
            ac: f64::NAN,
        });
        for (name, s) in [("train", self.train_mean()), ("validation", self.validation_mean()), ("test", test)] {
            let _ = writeln!(out, "{name}\t{:.4}\t{:.4}\t{:.4}", s.ac, s.dc, s.ji);
        }
        out
    }
}

fn pick(samples: &[Sample], ids: &[String]) -> Result<Vec<Sample>> {
    ids.iter()
        .map(|id| {
            samples
                .iter()
                .find(|s| &s.id == id)
                .cloned()
                .ok_or_else(|| Error::Config(format!("split references unknown case '{id}'")))
        })
        .collect()
}

/// Trains one model per fold (model seed `config.seed + fold`), scores each
/// fold's best model on its train and validation cases, and scores the
/// model with the highest validation DC on the held-out test cases. With
/// `out_dir`, fold `i` writes its run into `out_dir/fold-i`.
pub fn cross_validate(
    samples: &[Sample],
    split: &DatasetSplit,
    net: &NetworkConfig,
    config: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<CvReport> {
    config.validate()?;
    let test = pick(samples, &split.test_ids)?;
    let mut folds = Vec::with_capacity(split.k());
    for fold in 0..split.k() {
        log::info!("fold {}/{}", fold + 1, split.k());
        let train = pick(samples, &split.train_ids(fold))?;
        let val = pick(samples, split.validation_ids(fold))?;
        let model = Model::new(net.clone(), config.seed.wrapping_add(fold as u64))?;
        let fold_dir: Option<PathBuf> = out_dir.map(|d| d.join(format!("fold-{fold}")));
        let state = train_fold(
            TrainState::new(model, config.adam),
            &train,
            &val,
            config,
            fold_dir.as_deref(),
        )?;
        let best = state.best.expect("at least one epoch ran");
        folds.push(FoldOutcome {
            fold,
            log: state.log,
            best_epoch: best.epoch,
            train_report: evaluate_samples(&best.model, &train, config.threshold)?,
            val_report: evaluate_samples(&best.model, &val, config.threshold)?,
            best_model: best.model,
        });
    }
    let selected_fold = (0..folds.len())
        .max_by(|&a, &b| {
            let da = folds[a].val_report.aggregate().map_or(0.0, |s| s.dc);
            let db = folds[b].val_report.aggregate().map_or(0.0, |s| s.dc);
            // ties resolve to the lower fold index
            da.total_cmp(&db).then(b.cmp(&a))
        })
        .expect("k >= 2");
    let test_report = evaluate_samples(&folds[selected_fold].best_model, &test, config.threshold)?;
    let report = CvReport {
        folds,
        selected_fold,
        test_report,
    };
    if let Some(dir) = out_dir {
        let write = |name: &str, text: String| {
            let p = dir.join(name);
            std::fs::write(&p, text).map_err(|e| Error::io(p, e))
        };
        for f in &report.folds {
            write(&format!("fold-{}/val_metrics.tsv", f.fold), f.val_report.to_table())?;
        }
        write("test_metrics.tsv", report.test_report.to_table())?;
        write("summary.tsv", report.summary_table())?;
        write("split.tsv", split.to_manifest())?;
    }
    Ok(report)
}
