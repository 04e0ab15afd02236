use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use deal_tensor::{optimizer_step, save_checkpoint, OptimizerConfig, OptimizerState, Scalar, Tape};

use super::cycle::{run_cycle, CycleKind};
use super::select::SelectionPolicy;
use crate::error::{DealError, Result};
use crate::model::{Deal, ModelConfig};
use crate::scene::Dataset;

/// Epochs in the "1x" schedule.
pub const SCHEDULE_1X_EPOCHS: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Outer cycles `T` per image.
    pub cycles: usize,
    /// Inner prompting steps `K` per cycle.
    pub steps: usize,
    pub lr: f64,
    /// Cosine decay from `lr` to `lr * lr_final_factor` over the run.
    pub lr_final_factor: f64,
    /// Linear warm-up length in optimizer steps.
    pub warmup_steps: usize,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    pub seed: u64,
    /// Checkpoint every this many epochs; 0 writes only the final one.
    pub checkpoint_every: usize,
    pub policy: SelectionPolicy,
    /// Raise the query count to the number of target objects during training.
    pub cover_targets: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: SCHEDULE_1X_EPOCHS,
            cycles: 1,
            steps: 2,
            lr: 1e-3,
            lr_final_factor: 0.1,
            warmup_steps: 100,
            grad_clip: 1.0,
            seed: 0,
            checkpoint_every: 1,
            policy: SelectionPolicy::Safe,
            cover_targets: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cycles == 0 || self.steps == 0 {
            return Err(DealError::Config(format!(
                "cycles (T = {}) and steps (K = {}) must both be at least 1",
                self.cycles, self.steps
            )));
        }
        if self.epochs == 0 {
            return Err(DealError::Config("epochs must be at least 1".into()));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) || !(0.0..=1.0).contains(&self.lr_final_factor) || self.grad_clip < 0.0 {
            return Err(DealError::Config("lr, lr_final_factor and grad_clip are out of range".into()));
        }
        Ok(())
    }

    pub fn learning_rate(&self, step: usize, total_steps: usize) -> f64 {
        let warm = if self.warmup_steps > 0 {
            ((step + 1) as f64 / self.warmup_steps as f64).min(1.0)
        } else {
            1.0
        };
        let progress = if total_steps > 1 { step as f64 / (total_steps - 1) as f64 } else { 1.0 };
        let cosine = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        self.lr * warm * (self.lr_final_factor + (1.0 - self.lr_final_factor) * cosine)
    }
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub epoch: usize,
    pub scene_id: String,
    pub cycle: String,
    pub k: usize,
    pub n_prompts: usize,
    pub n_query: usize,
    pub l_cls: f64,
    pub l_reg: f64,
    pub l_density: f64,
    pub total: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub steps: usize,
    /// Mean per-image loss for each epoch.
    pub epoch_losses: Vec<f64>,
    /// Per-image loss of every optimizer step, in order.
    pub step_losses: Vec<f64>,
    pub checkpoints: Vec<PathBuf>,
    pub seconds: f64,
}

fn mix(seed: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(seed ^ 0x5DEE_CE66_D1CE_4E5B, |acc, &p| {
        let z = acc.wrapping_add(p.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        let z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    })
}

/// Builds a model seeded from `train.seed` and trains it.
pub fn train(dataset: &Dataset, model: &ModelConfig, train: &TrainConfig, out_dir: Option<&Path>) -> Result<(Deal<f64>, TrainReport)> {
    let mut deal = Deal::new(model.clone(), train.seed)?;
    let report = train_with_model(&mut deal, dataset, train, out_dir)?;
    Ok((deal, report))
}

/// PG-CPP training. Per image and outer cycle: one intra-class cycle per
/// present category, then one inter-class cycle; the summed cycle losses are
/// backpropagated once per image. With `out_dir`, writes `metrics.ndjson`,
/// `ckpt_epoch{n}.ckpt` at the cadence and `final.ckpt`.
pub fn train_with_model<S: Scalar>(model: &mut Deal<S>, dataset: &Dataset, cfg: &TrainConfig, out_dir: Option<&Path>) -> Result<TrainReport> {
    cfg.validate()?;
    let usable: Vec<usize> = (0..dataset.len()).filter(|&i| !dataset.scenes[i].annotations.is_empty()).collect();
    if usable.is_empty() {
        return Err(DealError::Argument("training needs at least one annotated scene".into()));
    }
    let mut log = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            Some(BufWriter::new(File::create(dir.join("metrics.ndjson"))?))
        }
        None => None,
    };
    let started = Instant::now();
    let total_steps = cfg.epochs * usable.len();
    let mut opt = OptimizerConfig::adam(cfg.lr);
    let mut state = OptimizerState::new();
    let mut report = TrainReport::default();
    let mut order_rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, &[0]));
    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        let mut order = usable.clone();
        order.shuffle(&mut order_rng);
        let mut epoch_sum = 0.0;
        for &idx in &order {
            let scene = &dataset.scenes[idx];
            let tape = Tape::new();
            let p = model.params.bind(&tape);
            let features = model.encode(&p, tape.constant(&scene.image.cast::<S>()))?;
            let mut kinds: Vec<CycleKind> = scene.categories_present().into_iter().map(CycleKind::Intra).collect();
            kinds.push(CycleKind::Inter);
            let mut total = None;
            let mut records = Vec::new();
            for t in 0..cfg.cycles {
                for (ci, &kind) in kinds.iter().enumerate() {
                    let seed = mix(cfg.seed, &[epoch as u64, idx as u64, t as u64, ci as u64]);
                    let cycle = run_cycle(model, &p, &features, scene, kind, cfg.steps, seed, cfg.policy, cfg.cover_targets)?;
                    for r in &cycle.history {
                        records.push(LossRecord {
                            step,
                            epoch,
                            scene_id: scene.id.clone(),
                            cycle: kind.to_string(),
                            k: r.k,
                            n_prompts: r.n_prompts,
                            n_query: r.n_query,
                            l_cls: r.losses.cls,
                            l_reg: r.losses.reg,
                            l_density: r.losses.density,
                            total: r.losses.total,
                        });
                    }
                    total = Some(match total {
                        Some(acc) => cycle.loss.add(acc)?,
                        None => cycle.loss,
                    });
                }
            }
            let loss = total.expect("at least one cycle");
            let value = loss.item().as_f64();
            if let Some(w) = log.as_mut() {
                for r in &records {
                    serde_json::to_writer(&mut *w, r)?;
                    w.write_all(b"\n")?;
                }
            }
            let mut grads = tape.backward(loss)?;
            let mut flat: Vec<Option<Vec<S>>> = p.vars().iter().map(|&v| grads.take(v)).collect();
            let finite = value.is_finite() && flat.iter().flatten().all(|g| g.iter().all(|x| x.is_finite()));
            if !finite {
                log::error!("non-finite loss on scene `{}` at step {step}", scene.id);
                if let Some(dir) = out_dir {
                    if let Some(w) = log.as_mut() {
                        w.flush()?;
                    }
                    let path = dir.join("last_good.ckpt");
                    save_checkpoint(&path, &model.params)?;
                    report.checkpoints.push(path);
                }
                return Err(DealError::NonFiniteLoss { scene_id: scene.id.clone() });
            }
            if cfg.grad_clip > 0.0 {
                let norm = flat
                    .iter()
                    .flatten()
                    .flat_map(|g| g.iter())
                    .map(|x| x.as_f64() * x.as_f64())
                    .sum::<f64>()
                    .sqrt();
                if norm > cfg.grad_clip {
                    let factor = S::lit(cfg.grad_clip / norm);
                    flat.iter_mut().flatten().for_each(|g| g.iter_mut().for_each(|x| *x *= factor));
                }
            }
            opt.lr = cfg.learning_rate(step, total_steps);
            optimizer_step(&mut model.params, &flat, &opt, &mut state)?;
            report.step_losses.push(value);
            epoch_sum += value;
            step += 1;
            if step % 100 == 0 {
                log::info!(
                    "epoch {epoch} step {step}/{total_steps} loss {value:.4} ({:.0}s)",
                    started.elapsed().as_secs_f64()
                );
            }
        }
        report.epoch_losses.push(epoch_sum / order.len() as f64);
        if let Some(dir) = out_dir {
            if cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 {
                let path = dir.join(format!("ckpt_epoch{epoch}.ckpt"));
                save_checkpoint(&path, &model.params)?;
                report.checkpoints.push(path);
            }
        }
    }
    if let Some(dir) = out_dir {
        let path = dir.join("final.ckpt");
        save_checkpoint(&path, &model.params)?;
        report.checkpoints.push(path);
    }
    if let Some(mut w) = log {
        w.flush()?;
    }
    report.steps = step;
    report.seconds = started.elapsed().as_secs_f64();
    Ok(report)
}
