//! Stage-1 (per frame) and stage-2 (per sequence) training loops.

use std::io::Write;
use std::time::Instant;

use mvx_autograd::optim::{accumulate_grads, clip_grad_norm, Adam};
use mvx_autograd::{Graph, ParamStore, Tensor, Var};
use mvx_core::geometry::angular_distance;
use mvx_model::loss::{estimate_loss, quaternion_of, stage1_total, LossConfig};
use mvx_model::network::is_temporal_param;
use mvx_model::CalibNet;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Head, Model};
use crate::config::TrainConfig;
use crate::data::{deviation, filter_by_distance, PreparedSequence, Sample};
use crate::PipelineError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    /// Everything trainable.
    Joint,
    /// Only the temporal module trainable.
    TemporalOnly,
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub stage: u8,
    pub phase: Phase,
    pub epoch: usize,
    pub lr: f64,
    /// Means over the epoch's samples.
    pub loss: f64,
    pub rotation_loss: f64,
    pub point_loss: f64,
    /// Mean angular error of the final estimate, degrees.
    pub train_error_deg: f64,
    pub samples: usize,
    pub steps: u64,
    pub wall_time_s: f64,
    pub head: Head,
    pub iterations: usize,
}

/// Loss of one sample. For stage 1 the rotation and point terms belong to
/// the last iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    pub total: f64,
    pub rotation: f64,
    pub point: f64,
    pub error_deg: f64,
}

fn scalar(g: &Graph<f32>, v: Var) -> f64 {
    g.value(v).to_f64_vec()[0]
}

/// Stage-1 objective: every iteration's flow goes through the frame head
/// and the per-iteration losses are combined with `γ^(n−i)` weights.
pub fn frame_loss(net: &CalibNet, g: &Graph<f32>, p: &ParamStore<f32>, sample: &Sample, loss: &LossConfig) -> Result<(Var, LossTerms), PipelineError> {
    let input = sample.inputs.last().ok_or_else(|| PipelineError::Data("empty sample".into()))?;
    let target = &sample.targets[sample.targets.len() - 1..];
    let flows = net.refine_frame(g, p, input, net.cfg.refine.iterations)?;
    let quats = net.stage1_estimates(g, p, &flows)?;
    let gt = sample.delta.rotation;
    let mut per_iter = Vec::with_capacity(quats.len());
    let mut last = None;
    for &q in &quats {
        let (total, rot, pt) = estimate_loss(g, q, &gt, target, loss)?;
        per_iter.push(total);
        last = Some((q, rot, pt));
    }
    let total = stage1_total(g, &per_iter, loss.gamma)?;
    let (q, rot, pt) = last.expect("at least one iteration");
    let terms = LossTerms {
        total: scalar(g, total),
        rotation: scalar(g, rot),
        point: scalar(g, pt),
        error_deg: error_deg(g, q, &gt),
    };
    Ok((total, terms))
}

/// Stage-2 objective on the temporal module's sequence estimate.
pub fn sequence_loss(net: &CalibNet, g: &Graph<f32>, p: &ParamStore<f32>, sample: &Sample, loss: &LossConfig) -> Result<(Var, LossTerms), PipelineError> {
    let iters = net.cfg.refine.iterations;
    let flows = sample
        .inputs
        .iter()
        .map(|x| net.refine_frame(g, p, x, iters))
        .collect::<mvx_autograd::Result<Vec<_>>>()?;
    let q = net.sequence_estimate(g, p, &flows)?;
    let gt = sample.delta.rotation;
    let (total, rot, pt) = estimate_loss(g, q, &gt, &sample.targets, loss)?;
    let terms = LossTerms {
        total: scalar(g, total),
        rotation: scalar(g, rot),
        point: scalar(g, pt),
        error_deg: error_deg(g, q, &gt),
    };
    Ok((total, terms))
}

/// Stage-2 objective from flows computed earlier by a frozen prefix.
pub fn cached_sequence_loss(
    net: &CalibNet,
    g: &Graph<f32>,
    p: &ParamStore<f32>,
    flows: &[Vec<Tensor<f32>>],
    sample: &Sample,
    loss: &LossConfig,
) -> Result<(Var, LossTerms), PipelineError> {
    let vars: Vec<Vec<Var>> = flows.iter().map(|f| f.iter().map(|t| g.constant(t.clone())).collect()).collect();
    let q = net.sequence_estimate(g, p, &vars)?;
    let gt = sample.delta.rotation;
    let (total, rot, pt) = estimate_loss(g, q, &gt, &sample.targets, loss)?;
    let terms = LossTerms {
        total: scalar(g, total),
        rotation: scalar(g, rot),
        point: scalar(g, pt),
        error_deg: error_deg(g, q, &gt),
    };
    Ok((total, terms))
}

/// Flow maps of every frame of `sample`, as plain tensors.
pub fn sample_flows(net: &CalibNet, p: &ParamStore<f32>, sample: &Sample) -> Result<Vec<Vec<Tensor<f32>>>, PipelineError> {
    let g = Graph::new();
    let iters = net.cfg.refine.iterations;
    let mut out = Vec::with_capacity(sample.inputs.len());
    for x in &sample.inputs {
        let flows = net.refine_frame(&g, p, x, iters)?;
        out.push(flows.iter().map(|&f| g.value(f).clone()).collect());
    }
    Ok(out)
}

fn error_deg(g: &Graph<f32>, q: Var, gt: &mvx_core::geometry::UnitQuaternion) -> f64 {
    quaternion_of(g, q).map_or(f64::NAN, |q| angular_distance(&q, gt).to_degrees())
}

/// Receives each finished epoch; the default sink discards it.
pub trait EpochSink {
    fn record(&mut self, rec: &EpochRecord) -> Result<(), PipelineError>;
}

impl EpochSink for () {
    fn record(&mut self, _: &EpochRecord) -> Result<(), PipelineError> {
        Ok(())
    }
}

/// Writes one JSON object per line.
pub struct JsonLines<W: Write>(pub W);

impl<W: Write> EpochSink for JsonLines<W> {
    fn record(&mut self, rec: &EpochRecord) -> Result<(), PipelineError> {
        let line = serde_json::to_string(rec).expect("record serializes");
        writeln!(self.0, "{line}")?;
        self.0.flush()?;
        Ok(())
    }
}

impl EpochSink for Vec<EpochRecord> {
    fn record(&mut self, rec: &EpochRecord) -> Result<(), PipelineError> {
        self.push(rec.clone());
        Ok(())
    }
}

type LossFn = fn(&CalibNet, &Graph<f32>, &ParamStore<f32>, &Sample, &LossConfig) -> Result<(Var, LossTerms), PipelineError>;

/// Shared epoch loop. `items` are `(sequence, first frame)` pairs; each
/// sample covers `frames` consecutive frames from there.
struct Loop<'a> {
    model: &'a mut Model,
    data: &'a [PreparedSequence],
    cfg: &'a TrainConfig,
    loss: &'a LossConfig,
    items: Vec<(usize, usize)>,
    frames: usize,
    objective: LossFn,
    opt: Adam,
    /// Samples and frozen-prefix flows per item, filled on first use.
    /// Only valid while the prefix is frozen and deviations are fixed.
    cache: Vec<Option<(Sample, Vec<Vec<Tensor<f32>>>)>>,
}

impl Loop<'_> {
    fn epoch(&mut self, epoch: usize, phase: Phase, sink: &mut dyn EpochSink) -> Result<EpochRecord, PipelineError> {
        let start = Instant::now();
        let lr = self.cfg.lr_at(epoch);
        self.opt.lr = lr as f32;
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(epoch as u64);
        let mut order: Vec<(usize, (usize, usize))> = self.items.iter().copied().enumerate().collect();
        order.shuffle(&mut rng);

        let n = order.len();
        let mut sums = [0.0f64; 4];
        for (batch, chunk) in order.chunks(self.cfg.batch_size).enumerate() {
            let mut acc: Vec<Option<Tensor<f32>>> = Vec::new();
            for &(item, (s, first)) in chunk {
                let seq = &self.data[s];
                let delta = deviation(&seq.seq, self.cfg.resample_perturbation, self.cfg.perturb_deg, &mut rng);
                let g = Graph::new();
                let use_cache = phase == Phase::TemporalOnly && !self.cfg.resample_perturbation;
                let at = |e: PipelineError| match e {
                    PipelineError::Graph(e) => PipelineError::Numeric(format!("stage {} epoch {epoch} batch {batch}: {e} on sequence {s}", self.cfg.stage)),
                    other => other,
                };
                let (total, terms) = if use_cache {
                    if self.cache[item].is_none() {
                        let sample = Sample::build(seq, first..first + self.frames, delta, &self.model.meta.net, self.cfg.point_stride)?;
                        let flows = sample_flows(&self.model.net, &self.model.store, &sample).map_err(at)?;
                        self.cache[item] = Some((sample, flows));
                    }
                    let (sample, flows) = self.cache[item].as_ref().expect("filled above");
                    cached_sequence_loss(&self.model.net, &g, &self.model.store, flows, sample, self.loss).map_err(at)?
                } else {
                    let sample = Sample::build(seq, first..first + self.frames, delta, &self.model.meta.net, self.cfg.point_stride)?;
                    (self.objective)(&self.model.net, &g, &self.model.store, &sample, self.loss).map_err(at)?
                };
                if !terms.total.is_finite() {
                    return Err(PipelineError::Numeric(format!(
                        "stage {} epoch {epoch} batch {batch}: non-finite loss on sequence {s}",
                        self.cfg.stage
                    )));
                }
                let grads = g.backward(g.scale(total, 1.0 / chunk.len() as f64)).map_err(|e| at(e.into()))?;
                accumulate_grads(&mut acc, grads.param_grads(&self.model.store));
                for (sum, v) in sums.iter_mut().zip([terms.total, terms.rotation, terms.point, terms.error_deg]) {
                    *sum += v;
                }
            }
            let max_norm = if self.cfg.clip_norm > 0.0 { self.cfg.clip_norm as f32 } else { f32::INFINITY };
            let norm = clip_grad_norm(&mut acc, max_norm);
            if !norm.is_finite() {
                return Err(PipelineError::Numeric(format!(
                    "stage {} epoch {epoch} batch {batch}: non-finite gradient",
                    self.cfg.stage
                )));
            }
            self.opt.step(&mut self.model.store, &acc);
        }
        let denom = n.max(1) as f64;
        let rec = EpochRecord {
            stage: self.cfg.stage,
            phase,
            epoch,
            lr,
            loss: sums[0] / denom,
            rotation_loss: sums[1] / denom,
            point_loss: sums[2] / denom,
            train_error_deg: sums[3] / denom,
            samples: n,
            steps: self.opt.steps_taken(),
            wall_time_s: start.elapsed().as_secs_f64(),
            head: self.model.meta.head,
            iterations: self.model.iterations(),
        };
        sink.record(&rec)?;
        Ok(rec)
    }
}

fn check_stage(cfg: &TrainConfig, stage: u8) -> Result<(), PipelineError> {
    cfg.validate()?;
    if cfg.stage != stage {
        return Err(PipelineError::Config(format!("config is for stage {}, not {stage}", cfg.stage)));
    }
    Ok(())
}

/// Trains encoders, refinement and the frame head on every frame of every
/// sequence (optionally distance filtered).
pub fn train_stage1(
    model: &mut Model,
    data: &[PreparedSequence],
    cfg: &TrainConfig,
    loss: &LossConfig,
    sink: &mut dyn EpochSink,
) -> Result<Vec<EpochRecord>, PipelineError> {
    check_stage(cfg, 1)?;
    loss.validate().map_err(|e| PipelineError::Config(e.0))?;
    let seqs: Vec<_> = data.iter().map(|d| d.seq.clone()).collect();
    let items: Vec<(usize, usize)> = filter_by_distance(&seqs, cfg.distance_threshold)
        .into_iter()
        .flat_map(|s| (0..data[s].len()).map(move |f| (s, f)))
        .collect();
    if items.is_empty() {
        return Err(PipelineError::Data("no training frames".into()));
    }
    model.store.set_trainable(|_| true, true);
    let mut lp = Loop {
        model,
        data,
        cfg,
        loss,
        items,
        frames: 1,
        objective: frame_loss,
        opt: Adam::new(cfg.lr as f32),
        cache: Vec::new(),
    };
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        log.push(lp.epoch(epoch, Phase::Joint, sink)?);
    }
    model.meta.stage = 1;
    model.meta.head = Head::Frame;
    model.meta.perturb_deg = cfg.perturb_deg;
    model.meta.epochs = cfg.epochs;
    Ok(log)
}

/// Trains the temporal module on sequences within the distance threshold,
/// first alone (when `freeze_prefix`), then jointly with the rest.
pub fn train_stage2(
    model: &mut Model,
    data: &[PreparedSequence],
    cfg: &TrainConfig,
    loss: &LossConfig,
    sink: &mut dyn EpochSink,
) -> Result<Vec<EpochRecord>, PipelineError> {
    check_stage(cfg, 2)?;
    loss.validate().map_err(|e| PipelineError::Config(e.0))?;
    if model.meta.stage < 1 {
        return Err(PipelineError::Config("stage 2 starts from a stage-1 checkpoint".into()));
    }
    let frames = model.meta.net.temporal.frames;
    let seqs: Vec<_> = data.iter().map(|d| d.seq.clone()).collect();
    let items: Vec<(usize, usize)> = filter_by_distance(&seqs, cfg.distance_threshold)
        .into_iter()
        .filter(|&s| data[s].len() >= frames)
        .map(|s| (s, 0))
        .collect();
    if items.is_empty() {
        return Err(PipelineError::Data(format!(
            "no sequence with {frames} frames within {:?} m",
            cfg.distance_threshold
        )));
    }
    let n_items = items.len();
    let frozen = if cfg.freeze_prefix { cfg.frozen_epochs } else { 0 };
    let mut lp = Loop {
        model,
        data,
        cfg,
        loss,
        items,
        frames,
        objective: sequence_loss,
        opt: Adam::new(cfg.lr as f32),
        cache: vec![None; n_items],
    };
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let phase = if epoch < frozen { Phase::TemporalOnly } else { Phase::Joint };
        lp.model.store.set_trainable(|_| true, true);
        if phase == Phase::TemporalOnly {
            lp.model.store.set_trainable(|n| !is_temporal_param(n), false);
        } else if epoch == frozen && frozen > 0 {
            lp.opt = Adam::new(cfg.lr as f32);
        }
        log.push(lp.epoch(epoch, phase, sink)?);
    }
    model.store.set_trainable(|_| true, true);
    model.meta.stage = 2;
    model.meta.head = Head::Temporal;
    model.meta.perturb_deg = cfg.perturb_deg;
    model.meta.epochs += cfg.epochs;
    Ok(log)
}
