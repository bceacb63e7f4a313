//! Loss aggregation, the SGD loop and multi-stage training plans.

mod config;
mod data;
mod loss;

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use config::{ExtractorKey, Mode, PathwayKey, TrainConfig, TRAIN_CONFIG_KEYS};
pub use data::{load_resized, prepare_samples, Loaded, ObjectTarget, Sample};
pub use loss::{total_loss, LossBreakdown};

use crate::datamodel::{Combination, Head, Producer, SupervisionConfig};
use crate::error::{Error, Result};
use crate::model::{Checkpoint, Model, TrainState};
use crate::seeds::{derive, keyed, Stream};

/// Training aborts once the batch loss exceeds this.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub heads: Vec<Head>,
    pub epochs: usize,
    pub lr: f64,
    /// Optional cap on the number of steps in this stage.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingPlan {
    pub stages: Vec<Stage>,
    pub batch_size: usize,
    /// Short-edge length images are resized to; `None` keeps them as is.
    pub short_edge: Option<usize>,
    pub seed: u64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Global gradient-norm cap applied before each update.
    #[serde(default)]
    pub clip_norm: Option<f64>,
}

pub const DEFAULT_CLIP_NORM: f64 = 1.0;

/// Shared plan settings for the presets.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanOptions {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub short_edge: Option<usize>,
    pub seed: u64,
    pub max_steps: Option<u64>,
}

impl Default for PlanOptions {
    fn default() -> Self {
        PlanOptions {
            epochs: 6,
            lr: 0.1,
            batch_size: 8,
            short_edge: Some(800),
            seed: 0,
            max_steps: None,
        }
    }
}

impl TrainingPlan {
    fn with_stages(stages: Vec<Stage>, o: &PlanOptions) -> Self {
        TrainingPlan {
            stages,
            batch_size: o.batch_size,
            short_edge: o.short_edge,
            seed: o.seed,
            momentum: 0.9,
            weight_decay: 0.0,
            clip_norm: Some(DEFAULT_CLIP_NORM),
        }
    }

    fn stage(heads: Vec<Head>, o: &PlanOptions) -> Stage {
        Stage {
            heads,
            epochs: o.epochs,
            lr: o.lr,
            max_steps: o.max_steps,
        }
    }

    /// One stage with every enabled head.
    pub fn mtl(cfg: &SupervisionConfig, o: &PlanOptions) -> Self {
        Self::with_stages(vec![Self::stage(cfg.heads.keys().copied().collect(), o)], o)
    }

    /// Classification alone, then one more head per stage in `order`, each
    /// stage with the same epoch budget.
    pub fn curriculum(order: &[Head], o: &PlanOptions) -> Self {
        let mut heads = vec![Head::Cls];
        let mut stages = vec![Self::stage(heads.clone(), o)];
        for &h in order.iter().filter(|&&h| h != Head::Cls) {
            heads.push(h);
            stages.push(Self::stage(heads.clone(), o));
        }
        Self::with_stages(stages, o)
    }

    /// The plan a supervision config asks for.
    pub fn from_supervision(cfg: &SupervisionConfig, o: &PlanOptions) -> Self {
        match &cfg.combination {
            Combination::Mtl => Self::mtl(cfg, o),
            Combination::Cl { stages } => Self::curriculum(stages, o),
        }
    }

    /// A rotation-only stage in front of the plan for `cfg`.
    pub fn rotation_pretrain(cfg: &SupervisionConfig, o: &PlanOptions, pretrain_epochs: usize) -> Self {
        let mut plan = Self::from_supervision(cfg, o);
        let mut first = Self::stage(vec![Head::Rotation], o);
        first.epochs = pretrain_epochs;
        plan.stages.insert(0, first);
        plan
    }

    /// Every stage uses enabled heads only and every enabled head trains
    /// in some stage; classification leads unless the first stage is the
    /// rotation pretext.
    pub fn check(&self, cfg: &SupervisionConfig) -> Result<()> {
        if self.stages.is_empty() || self.batch_size == 0 {
            return Err(Error::Config("plan needs at least one stage and a positive batch size".into()));
        }
        if self.clip_norm.is_some_and(|c| !(c > 0.0 && c.is_finite())) {
            return Err(Error::Config("clip_norm must be positive".into()));
        }
        let first = &self.stages[0].heads;
        if !first.contains(&Head::Cls) && first.as_slice() != [Head::Rotation] {
            return Err(Error::Config("the first stage must train cls".into()));
        }
        let mut seen = BTreeSet::new();
        for (i, s) in self.stages.iter().enumerate() {
            if s.heads.is_empty() || !(s.lr >= 0.0 && s.lr.is_finite()) {
                return Err(Error::Config(format!("stage {i} needs heads and a finite lr >= 0")));
            }
            for h in &s.heads {
                if !cfg.enabled(*h) {
                    return Err(Error::Config(format!("stage {i} uses head {h}, which is not enabled")));
                }
                seen.insert(*h);
            }
        }
        for h in cfg.heads.keys() {
            if !seen.contains(h) {
                return Err(Error::Config(format!("enabled head {h} is in no stage")));
            }
        }
        Ok(())
    }
}

/// `eta0 * (1 + cos(pi * t / total)) / 2`.
pub fn cosine_lr(eta0: f64, t: u64, total: u64) -> f64 {
    if total == 0 {
        return eta0;
    }
    eta0 * 0.5 * (1.0 + (PI * t as f64 / total as f64).cos())
}

/// SGD with heavy-ball momentum: `v = mu * v + g; p -= lr * v`, where `g`
/// is first rescaled to norm at most `clip_norm`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    pub clip_norm: Option<f64>,
    pub velocity: Vec<f64>,
}

impl Sgd {
    pub fn new(len: usize, momentum: f64, weight_decay: f64) -> Self {
        Sgd {
            momentum,
            weight_decay,
            clip_norm: None,
            velocity: vec![0.0; len],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        let scale = match self.clip_norm {
            Some(c) => {
                let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
                if norm > c { c / norm } else { 1.0 }
            }
            None => 1.0,
        };
        for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            let g = g * scale;
            let g = if self.weight_decay != 0.0 { g + self.weight_decay * *p } else { g };
            *v = self.momentum * *v + g;
            *p -= lr * *v;
        }
    }
}

/// Metrics of one finished epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub stage: usize,
    pub epoch: usize,
    /// Steps completed in the stage.
    pub step: u64,
    pub lr: f64,
    /// Mean unweighted loss per head over the epoch's batches.
    pub losses: BTreeMap<Head, f64>,
    pub total: f64,
    pub train_acc: f64,
    pub val_acc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageLog {
    pub stage: usize,
    pub heads: Vec<Head>,
    pub new_heads: Vec<Head>,
    pub steps: u64,
    /// The cosine schedule starts over at every stage.
    pub schedule_restarted: bool,
    pub epochs: Vec<EpochLog>,
    /// Probe-batch loss on entry with the new heads weighted 0, when this
    /// stage extends the previous one.
    pub entry_probe: Option<f64>,
    /// Probe-batch loss after the last step.
    pub exit_probe: f64,
    /// Batch losses in step order.
    pub step_losses: Vec<f64>,
}

/// Training and optional validation samples.
pub struct TrainData {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
}

/// Where a run writes its artifacts.
#[derive(Debug, Clone, Default)]
pub struct RunOutputs {
    pub metrics_csv: Option<PathBuf>,
    pub checkpoint_dir: Option<PathBuf>,
    pub config_hash: String,
    pub producer: Option<Producer>,
    /// Lines written as `# ` comments ahead of a new metrics file.
    pub preamble: Vec<String>,
}

pub const METRICS_HEADER: &str = "step,stage,head,loss,lr,acc";

fn append_metrics(path: &Path, log: &EpochLog, preamble: &[String]) -> Result<()> {
    let fresh = !path.exists();
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut text = String::new();
    if fresh {
        for line in preamble {
            text.push_str(&format!("# {line}\n"));
        }
        text.push_str(METRICS_HEADER);
        text.push('\n');
    }
    let acc = log.val_acc.map(|a| format!("{a}")).unwrap_or_default();
    for (h, l) in &log.losses {
        text.push_str(&format!("{},{},{},{},{},{}\n", log.step, log.stage, h, l, log.lr, acc));
    }
    text.push_str(&format!("{},{},total,{},{},{}\n", log.step, log.stage, log.total, log.lr, acc));
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Top-1 base classification accuracy over the objects of `samples`.
pub fn accuracy(model: &Model, samples: &[Sample]) -> Result<f64> {
    let mut weights = BTreeMap::new();
    weights.insert(Head::Cls, 1.0);
    let mut correct = 0;
    let mut total = 0;
    for s in samples {
        let b = total_loss(model, &[s], &weights, 0, None)?;
        correct += b.correct;
        total += b.objects;
    }
    Ok(if total == 0 { 0.0 } else { correct as f64 / total as f64 })
}

fn stage_weights(cfg: &SupervisionConfig, heads: &[Head], zero: &[Head]) -> BTreeMap<Head, f64> {
    heads
        .iter()
        .map(|&h| (h, if zero.contains(&h) { 0.0 } else { cfg.weight(h) }))
        .collect()
}

fn probe_seed(seed: u64) -> u64 {
    derive(seed, "probe")
}

/// Loss of the first `batch_size` training samples with fixed edits.
pub fn probe_loss(model: &Model, data: &TrainData, batch_size: usize, weights: &BTreeMap<Head, f64>, seed: u64) -> Result<f64> {
    let batch: Vec<&Sample> = data.train.iter().take(batch_size).collect();
    Ok(total_loss(model, &batch, weights, probe_seed(seed), None)?.total)
}

/// Runs stage `index` of `plan` from its first step, or from just after
/// `resume` when given.
#[allow(clippy::too_many_arguments)]
pub fn run_stage(
    plan: &TrainingPlan,
    index: usize,
    cfg: &SupervisionConfig,
    model: &mut Model,
    data: &TrainData,
    outputs: &RunOutputs,
    resume: Option<&TrainState>,
    previous: Option<&[Head]>,
) -> Result<StageLog> {
    let stage = &plan.stages[index];
    let n = data.train.len();
    if n == 0 {
        return Err(Error::Config("no training samples".into()));
    }
    let per_epoch = n.div_ceil(plan.batch_size) as u64;
    let mut total = per_epoch * stage.epochs as u64;
    if let Some(cap) = stage.max_steps {
        total = total.min(cap);
    }
    let new_heads: Vec<Head> = stage
        .heads
        .iter()
        .copied()
        .filter(|h| previous.is_none_or(|p| !p.contains(h)))
        .collect();
    let weights = stage_weights(cfg, &stage.heads, &[]);

    let mut sgd = Sgd::new(model.params.values.len(), plan.momentum, plan.weight_decay);
    sgd.clip_norm = plan.clip_norm;
    let (mut step, first_epoch) = match resume {
        Some(st) => {
            sgd.velocity.clone_from(&st.velocity);
            (st.step, st.epoch + 1)
        }
        None => (0, 0),
    };
    let mut entry_probe = None;
    if resume.is_none() {
        for &h in &new_heads {
            model.reinit_head(h);
        }
        if let Some(prev) = previous {
            if prev.iter().all(|h| stage.heads.contains(h)) {
                let w0 = stage_weights(cfg, &stage.heads, &new_heads);
                entry_probe = Some(probe_loss(model, data, plan.batch_size, &w0, plan.seed)?);
            }
        }
        log::info!(
            "stage {index}: heads {:?}, {} steps, cosine schedule restarted at lr {}",
            stage.heads,
            total,
            stage.lr
        );
    }

    let order_seed = derive(plan.seed, "order");
    let edit_seed = derive(plan.seed, "edit");
    let mut epochs = Vec::new();
    let mut step_losses = Vec::new();
    let mut epoch = first_epoch;
    while step < total {
        let mut order: Vec<usize> = (0..n).collect();
        Stream::new(keyed(keyed(order_seed, index as u64), epoch as u64)).shuffle(&mut order);
        let mut sums: BTreeMap<Head, f64> = BTreeMap::new();
        let (mut tot, mut batches, mut correct, mut objects) = (0.0, 0usize, 0usize, 0usize);
        let mut lr = stage.lr;
        for chunk in order.chunks(plan.batch_size) {
            if step >= total {
                break;
            }
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &data.train[i]).collect();
            let mut grads = model.params.zeros_like();
            let seed = keyed(keyed(edit_seed, index as u64), step);
            let b = total_loss(model, &batch, &weights, seed, Some(&mut grads))?;
            if b.total.is_nan() || b.total > DIVERGENCE_LIMIT {
                log::error!("stage {index} step {step}: loss {} diverged", b.total);
                return Err(Error::Divergence { step, loss: b.total });
            }
            lr = cosine_lr(stage.lr, step, total);
            sgd.step(&mut model.params.values, &grads.0, lr);
            step += 1;
            step_losses.push(b.total);
            for (h, v) in &b.terms {
                *sums.entry(*h).or_default() += v;
            }
            tot += b.total;
            batches += 1;
            correct += b.correct;
            objects += b.objects;
        }
        let val_acc = if data.val.is_empty() {
            None
        } else {
            Some(accuracy(model, &data.val)?)
        };
        let log = EpochLog {
            stage: index,
            epoch,
            step,
            lr,
            losses: sums.into_iter().map(|(h, v)| (h, v / batches as f64)).collect(),
            total: tot / batches as f64,
            train_acc: if objects == 0 { 0.0 } else { correct as f64 / objects as f64 },
            val_acc,
        };
        if let Some(path) = &outputs.metrics_csv {
            append_metrics(path, &log, &outputs.preamble)?;
        }
        if let Some(dir) = &outputs.checkpoint_dir {
            let state = TrainState {
                stage: index,
                epoch,
                step,
                velocity: sgd.velocity.clone(),
            };
            let mut ck = Checkpoint::from_model(model, &outputs.config_hash, Some(state));
            ck.producer = outputs.producer.clone();
            ck.write(&dir.join(checkpoint_name(index, epoch)))?;
        }
        epochs.push(log);
        epoch += 1;
    }
    let exit_probe = probe_loss(model, data, plan.batch_size, &weights, plan.seed)?;
    Ok(StageLog {
        stage: index,
        heads: stage.heads.clone(),
        new_heads,
        steps: step,
        schedule_restarted: true,
        epochs,
        entry_probe,
        exit_probe,
        step_losses,
    })
}

pub fn checkpoint_name(stage: usize, epoch: usize) -> String {
    format!("stage{stage:02}-epoch{epoch:03}.ckpt.json")
}

/// Runs every stage in order; later stages continue from the parameters
/// the previous one left. With `resume`, stages already finished are
/// skipped and the interrupted one continues after its last epoch.
pub fn run_plan(
    plan: &TrainingPlan,
    cfg: &SupervisionConfig,
    model: &mut Model,
    data: &TrainData,
    outputs: &RunOutputs,
    resume: Option<&TrainState>,
) -> Result<Vec<StageLog>> {
    cfg.check()?;
    plan.check(cfg)?;
    let mut logs = Vec::new();
    for index in 0..plan.stages.len() {
        let previous = index.checked_sub(1).map(|i| plan.stages[i].heads.as_slice());
        let state = match resume {
            Some(st) if st.stage > index => continue,
            Some(st) if st.stage == index => Some(st),
            _ => None,
        };
        logs.push(run_stage(plan, index, cfg, model, data, outputs, state, previous)?);
    }
    Ok(logs)
}
