use std::borrow::Cow;
use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Instant;

use hfc_tensor::{Adam, AdamConfig, Graph, Real};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::augment::augment;
use super::history::{EpochRecord, HistoryLog};
use super::{LossKind, TrainConfig};
use crate::checkpoint::{write_atomic, Checkpoint};
use crate::datasets::{batch_tensors, SegmentationSample};
use crate::error::{CoreError, Result};
use crate::evaluation::evaluate;
use crate::network::Model;

pub const BEST_FILE: &str = "best.ckpt";
pub const LAST_FILE: &str = "last.ckpt";
pub const HISTORY_FILE: &str = "history.jsonl";

const SINCE_BEST_KEY: &str = "epochs_since_best";
const TRAIN_CONFIG_KEY: &str = "train_config";

#[derive(Debug, Clone)]
pub struct TrainOutcome<T: Real> {
    /// Checkpoint with the best selection metric: validation DSC, or negated
    /// training loss when the validation set is empty.
    pub best: Checkpoint<T>,
    pub last: Checkpoint<T>,
    pub history: HistoryLog,
    pub stopped_early: bool,
}

/// State needed to continue an interrupted run.
#[derive(Debug, Clone)]
pub struct ResumeState<T: Real> {
    pub last: Checkpoint<T>,
    pub best: Checkpoint<T>,
    pub history: HistoryLog,
}

fn rng_bytes(rng: &ChaCha8Rng) -> Vec<u8> {
    let mut out = rng.get_seed().to_vec();
    out.extend_from_slice(&rng.get_stream().to_le_bytes());
    out.extend_from_slice(&rng.get_word_pos().to_le_bytes());
    out
}

fn rng_from_bytes(b: &[u8]) -> Result<ChaCha8Rng> {
    if b.len() != 32 + 8 + 16 {
        return Err(CoreError::Data(format!("rng state has {} bytes, expected 56", b.len())));
    }
    let mut rng = ChaCha8Rng::from_seed(b[..32].try_into().expect("32 bytes"));
    rng.set_stream(u64::from_le_bytes(b[32..40].try_into().expect("8 bytes")));
    rng.set_word_pos(u128::from_le_bytes(b[40..56].try_into().expect("16 bytes")));
    Ok(rng)
}

/// Reads `last.ckpt`, `best.ckpt` and `history.jsonl` from a checkpoint
/// directory. Returns `None` when no run has been started there.
pub fn load_resume_state<T: Real>(dir: &Path) -> Result<Option<ResumeState<T>>> {
    let last_path = dir.join(LAST_FILE);
    if !last_path.exists() {
        return Ok(None);
    }
    let last = Checkpoint::<T>::load(&last_path)?;
    let best_path = dir.join(BEST_FILE);
    let best = if best_path.exists() {
        Checkpoint::load(&best_path)?
    } else {
        last.clone()
    };
    let hist_path = dir.join(HISTORY_FILE);
    let mut history = if hist_path.exists() {
        HistoryLog::load(&hist_path)?
    } else {
        HistoryLog::default()
    };
    // An interruption between the history append and the checkpoint write
    // leaves extra records behind.
    history.records.retain(|r| r.epoch <= last.epoch);
    Ok(Some(ResumeState { last, best, history }))
}

/// Trains from freshly initialised parameters.
pub fn train<T: Real>(
    model: &Model,
    train_set: &[SegmentationSample],
    val_set: &[SegmentationSample],
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    train_resume(model, train_set, val_set, cfg, None)
}

fn check_sets(model: &Model, train_set: &[SegmentationSample], val_set: &[SegmentationSample]) -> Result<()> {
    if train_set.is_empty() {
        return Err(CoreError::Precondition("training set is empty".into()));
    }
    let (h, w) = model.config().input_size;
    for s in train_set.iter().chain(val_set) {
        s.validate()?;
        if (s.height, s.width) != (h, w) {
            return Err(CoreError::Precondition(format!(
                "sample {} is {}x{} but the model expects {h}x{w}",
                s.id(),
                s.height,
                s.width
            )));
        }
    }
    let train_ids: BTreeSet<String> = train_set.iter().filter(|s| !s.is_noise).map(|s| s.id()).collect();
    if let Some(dup) = val_set.iter().filter(|s| !s.is_noise).find(|s| train_ids.contains(&s.id())) {
        return Err(CoreError::Precondition(format!(
            "sample {} appears in both the training and validation sets",
            dup.id()
        )));
    }
    Ok(())
}

fn snapshot(dir: Option<&PathBuf>, epoch: usize, batch: usize, ids: &[String], what: &str) -> String {
    let mut msg = format!("{what} at epoch {epoch}, batch {batch} (samples: {})", ids.join(", "));
    if let Some(dir) = dir {
        let path = dir.join(format!("nonfinite_epoch{epoch}_batch{batch}.json"));
        let body = serde_json::json!({ "epoch": epoch, "batch": batch, "samples": ids, "what": what });
        if write_atomic(&path, body.to_string().as_bytes()).is_ok() {
            msg.push_str(&format!("; snapshot written to {}", path.display()));
        }
    }
    msg
}

/// Trains, optionally continuing from `resume`. Writes `last.ckpt` every
/// epoch, `best.ckpt` on improvement and appends to `history.jsonl` when
/// `cfg.checkpoint_dir` is set.
pub fn train_resume<T: Real>(
    model: &Model,
    train_set: &[SegmentationSample],
    val_set: &[SegmentationSample],
    cfg: &TrainConfig,
    resume: Option<ResumeState<T>>,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    check_sets(model, train_set, val_set)?;
    let dir = cfg.checkpoint_dir.as_ref();
    if let Some(d) = dir {
        std::fs::create_dir_all(d).map_err(|e| CoreError::io(d, e))?;
    }
    let adam_cfg = AdamConfig {
        lr: cfg.learning_rate,
        ..AdamConfig::default()
    };
    let cfg_text = serde_json::to_string(cfg).expect("config serialises");

    let mut last_ckpt = None;
    let (mut params, mut adam, mut rng, mut history, mut best, start, mut since_best) = match resume {
        Some(state) => {
            if &state.last.config != model.config() {
                return Err(CoreError::Incompatible {
                    module: "model".into(),
                    msg: "resumed checkpoint was written for a different model configuration".into(),
                });
            }
            model.check_params(&state.last.params)?;
            let rng = rng_from_bytes(&state.last.rng_state)?;
            let adam = Adam::with_state(adam_cfg, state.last.optimizer.clone().unwrap_or_default());
            let since = state
                .last
                .extra
                .get(SINCE_BEST_KEY)
                .and_then(|v| v.parse().ok())
                .unwrap_or(0usize);
            let out = (
                state.last.params.clone(),
                adam,
                rng,
                state.history,
                state.best,
                state.last.epoch,
                since,
            );
            last_ckpt = Some(state.last);
            out
        }
        None => {
            if let Some(d) = dir {
                let hist = d.join(HISTORY_FILE);
                if hist.exists() {
                    std::fs::remove_file(&hist).map_err(|e| CoreError::io(&hist, e))?;
                }
            }
            let params = model.init_params::<T>()?;
            let best = Checkpoint::new(model.config().clone(), params.clone());
            (
                params,
                Adam::new(adam_cfg),
                ChaCha8Rng::seed_from_u64(cfg.seed),
                HistoryLog::default(),
                best,
                0,
                0,
            )
        }
    };

    let hist_path = dir.map(|d| d.join(HISTORY_FILE));
    let balanced = cfg.loss == LossKind::ClassBalancedBce;
    let identity_aug = cfg.augment.is_identity();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut stopped_early = cfg.early_stop_patience.is_some_and(|p| since_best >= p);
    let mut epoch = start;

    while epoch < cfg.epochs && !stopped_early {
        epoch += 1;
        let t0 = Instant::now();
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut clamped_total = 0;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<Cow<'_, SegmentationSample>> = chunk
                .iter()
                .map(|&i| {
                    if identity_aug {
                        Cow::Borrowed(&train_set[i])
                    } else {
                        Cow::Owned(augment(&train_set[i], &cfg.augment, &mut rng))
                    }
                })
                .collect();
            let refs: Vec<&SegmentationSample> = batch.iter().map(|c| c.as_ref()).collect();
            let (x, y) = batch_tensors::<T>(&refs)?;
            let mut g = Graph::new();
            let xi = g.input(x);
            let out = model.forward(&mut g, &params, xi)?;
            let (loss, clamped) = g.bce(out.prob, &y, balanced, cfg.eps)?;
            let value = g.value(loss).data()[0].as_f64();
            let ids = || refs.iter().map(|s| s.id()).collect::<Vec<_>>();
            if !value.is_finite() {
                let msg = snapshot(dir, epoch, bi, &ids(), &format!("loss {value}"));
                return Err(CoreError::NonFinite(msg));
            }
            let grads = g.backward(loss)?.into_param_grads();
            if let Some((name, _)) = grads.iter().find(|(_, t)| !t.all_finite()) {
                let msg = snapshot(dir, epoch, bi, &ids(), &format!("gradient of {name}"));
                return Err(CoreError::NonFinite(msg));
            }
            adam.step(&mut params, &grads)?;
            loss_sum += value * chunk.len() as f64;
            clamped_total += clamped;
        }
        if clamped_total > 0 {
            log::debug!("epoch {epoch}: {clamped_total} predictions clamped by the loss");
        }
        let train_loss = loss_sum / train_set.len() as f64;

        let (val_dsc, val_miou) = if val_set.is_empty() {
            (None, None)
        } else {
            let report = evaluate(model, &params, val_set, cfg.threshold, cfg.batch_size)?;
            let agg = report.aggregate.expect("non-empty split");
            (Some(agg.dsc), Some(agg.miou))
        };
        let metric = val_dsc.unwrap_or(-train_loss);
        let improved = metric > best.best_metric;
        if improved {
            since_best = 0;
        } else {
            since_best += 1;
        }

        let mut last = Checkpoint::new(model.config().clone(), params.clone());
        last.epoch = epoch;
        last.rng_state = rng_bytes(&rng);
        last.optimizer = Some(adam.state.clone());
        last.extra.insert(TRAIN_CONFIG_KEY.into(), cfg_text.clone());
        last.extra.insert(SINCE_BEST_KEY.into(), since_best.to_string());
        last.best_metric = if improved { metric } else { best.best_metric };
        if improved {
            best = last.clone();
            best.best_metric = metric;
        }

        let record = EpochRecord {
            epoch,
            train_loss,
            val_dsc,
            val_miou,
            clamped: clamped_total,
            optimizer_step: adam.state.step,
            improved,
            wall_time_s: t0.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}/{}: loss {train_loss:.5}{}",
            cfg.epochs,
            val_dsc.map(|d| format!(", val dsc {d:.4}")).unwrap_or_default()
        );
        history.append(record, hist_path.as_deref())?;
        if let Some(d) = dir {
            if improved {
                best.save(&d.join(BEST_FILE))?;
            }
            last.save(&d.join(LAST_FILE))?;
        }
        last_ckpt = Some(last);
        stopped_early = cfg.early_stop_patience.is_some_and(|p| since_best >= p);
        if stopped_early {
            log::info!("no improvement for {since_best} epochs, stopping");
        }
    }

    let last = last_ckpt.expect("at least one epoch ran or a checkpoint was resumed");
    Ok(TrainOutcome {
        best,
        last,
        history,
        stopped_early,
    })
}
