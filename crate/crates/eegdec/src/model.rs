//! The 3D inception CNN and its two CNN comparators, with seeded
//! initialization, mini-batch Adam training, early stopping, and
//! checkpointing.
//!
//! Architecture notes: "3×3×25" kernels are (rows × cols × time) —
//! 3×3 on the scalp grid, 25 temporal samples (0.25 s at 100 Hz).
//! Max-pooling acts on the temporal axis only (the 3×7 grid is too
//! small to pool spatially). Inception band channel counts are
//! (⌊out/3⌋, ⌊out/3⌋, ⌊out/6⌋, remainder) with out = round(1.5·in),
//! ties rounded up.

use std::path::Path;

use rayon::prelude::*;

use crate::autodiff::{Adam, AdamParams, ConvKernel3D, NodeId, Padding, Tape, Tensor};
use crate::dataset::N_CLASSES;
use crate::eval::argmax_lowest;
use crate::seed;
use crate::tensorize::GridTrial;
use crate::{Error, Result};

const SHALLOW_LOG_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Inception3d,
    Simple3d,
    Shallow,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Inception3d, ModelKind::Simple3d, ModelKind::Shallow];

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "inception3d" => Ok(Self::Inception3d),
            "simple3d" => Ok(Self::Simple3d),
            "shallow" => Ok(Self::Shallow),
            other => Err(Error::Config(format!(
                "unknown model '{other}' (expected inception3d, simple3d, or shallow)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Inception3d => "inception3d",
            Self::Simple3d => "simple3d",
            Self::Shallow => "shallow",
        }
    }
}

/// Channel arithmetic of one inception block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InceptionBlockSpec {
    pub in_channels: usize,
}

impl InceptionBlockSpec {
    pub fn new(in_channels: usize) -> Result<Self> {
        if in_channels < 4 {
            return Err(Error::Config(format!(
                "inception block needs ≥ 4 input channels, got {in_channels}"
            )));
        }
        Ok(Self { in_channels })
    }

    /// round(1.5 × in), ties up.
    pub fn out_channels(&self) -> usize {
        (3 * self.in_channels + 1) / 2
    }

    /// (b1, b2, b3, b4) = (⌊out/3⌋, ⌊out/3⌋, ⌊out/6⌋, remainder).
    pub fn bands(&self) -> (usize, usize, usize, usize) {
        let out = self.out_channels();
        let (b1, b2, b3) = (out / 3, out / 3, out / 6);
        (b1, b2, b3, out - b1 - b2 - b3)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub rows: usize,
    pub cols: usize,
    pub time: usize,
    pub n_classes: usize,
    pub stem_channels: usize,
    pub stage1_blocks: usize,
    pub stage2_blocks: usize,
    pub temporal_kernel: usize,
    pub head_temporal_kernel: usize,
    pub head_channels: (usize, usize),
    /// temporal max-pool window == stride
    pub pool_stride: usize,
    pub shallow_filters: usize,
    pub shallow_temporal_kernel: usize,
    pub shallow_pool_window: usize,
    pub shallow_pool_stride: usize,
}

impl ModelSpec {
    /// The full-size architecture for 3×7 grids at 100 Hz.
    pub fn paper(kind: ModelKind) -> Self {
        Self {
            kind,
            rows: 3,
            cols: 7,
            time: 300,
            n_classes: N_CLASSES,
            stem_channels: 16,
            stage1_blocks: 2,
            stage2_blocks: 3,
            temporal_kernel: 25,
            head_temporal_kernel: 11,
            head_channels: (64, 32),
            pool_stride: 3,
            shallow_filters: 40,
            shallow_temporal_kernel: 13,
            shallow_pool_window: 35,
            shallow_pool_stride: 7,
        }
    }

    /// Scaled-down variant for gradient checking and fast tests.
    pub fn tiny(kind: ModelKind) -> Self {
        Self {
            kind,
            rows: 3,
            cols: 3,
            time: 20,
            n_classes: N_CLASSES,
            stem_channels: 4,
            stage1_blocks: 2,
            stage2_blocks: 3,
            temporal_kernel: 5,
            head_temporal_kernel: 3,
            head_channels: (8, 8),
            pool_stride: 3,
            shallow_filters: 4,
            shallow_temporal_kernel: 5,
            shallow_pool_window: 5,
            shallow_pool_stride: 2,
        }
    }

    /// (in, out) channel pairs for every block, stage 1 then stage 2.
    pub fn channel_schedule(&self) -> Result<Vec<(usize, usize)>> {
        let mut pairs = Vec::new();
        let mut ch = self.stem_channels;
        for _ in 0..self.stage1_blocks + self.stage2_blocks {
            let out = InceptionBlockSpec::new(ch)?.out_channels();
            pairs.push((ch, out));
            ch = out;
        }
        Ok(pairs)
    }
}

// ---------------------------------------------------------------------------
// Parameters and the layer plan
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
enum Param {
    Conv(ConvKernel3D),
    Plain(Tensor),
}

#[derive(Debug, Clone, Copy)]
struct BlockParams {
    b1: usize,
    b2p: usize,
    b2c: usize,
    b3p: usize,
    b3c1: usize,
    b3c2: usize,
    b4: usize,
}

#[derive(Debug, Clone, Copy)]
enum Step {
    Conv { param: usize, padding: Padding, relu: bool },
    Inception(BlockParams),
    MaxPoolT { window: usize, stride: usize },
    AvgPoolT { window: usize, stride: usize },
    GlobalAvgPool,
    Square,
    Log,
    Flatten,
    Dense { w: usize, b: usize },
}

enum Bound {
    Conv(NodeId, NodeId),
    Plain(NodeId),
}

#[derive(Debug, Clone)]
pub struct Model {
    pub spec: ModelSpec,
    names: Vec<String>,
    params: Vec<Param>,
    plan: Vec<Step>,
}

struct Builder {
    rng: rand_chacha::ChaCha8Rng,
    names: Vec<String>,
    params: Vec<Param>,
    plan: Vec<Step>,
}

impl Builder {
    fn conv(
        &mut self,
        name: &str,
        extents: (usize, usize, usize),
        c_in: usize,
        c_out: usize,
    ) -> Result<usize> {
        let k = ConvKernel3D::he_uniform(extents, c_in, c_out, &mut self.rng)?;
        self.names.push(name.to_string());
        self.params.push(Param::Conv(k));
        Ok(self.params.len() - 1)
    }

    fn dense(&mut self, name: &str, out: usize, input: usize) -> Result<(usize, usize)> {
        use rand::Rng;
        // classifier head: keep the seeded directions but start near zero,
        // so initial logits are ~uniform instead of feature-offset noise
        // the optimizer must first unlearn
        let bound = 0.01 * (6.0 / input as f64).sqrt();
        let w: Vec<f64> = (0..out * input).map(|_| self.rng.gen_range(-bound..bound)).collect();
        self.names.push(format!("{name}.w"));
        self.params.push(Param::Plain(Tensor::from_vec(vec![out, input], w)?.with_grad()));
        self.names.push(format!("{name}.b"));
        self.params.push(Param::Plain(Tensor::zeros(vec![out]).with_grad()));
        Ok((self.params.len() - 2, self.params.len() - 1))
    }

    fn inception_block(&mut self, tag: &str, spec: InceptionBlockSpec, kt: usize) -> Result<()> {
        let c = spec.in_channels;
        let (b1, b2, b3, b4) = spec.bands();
        debug_assert_eq!(b1 + b2 + b3 + b4, spec.out_channels());
        let block = BlockParams {
            b1: self.conv(&format!("{tag}.b1"), (1, 1, 1), c, b1)?,
            b2p: self.conv(&format!("{tag}.b2p"), (1, 1, 1), c, b2)?,
            b2c: self.conv(&format!("{tag}.b2c"), (3, 3, kt), b2, b2)?,
            b3p: self.conv(&format!("{tag}.b3p"), (1, 1, 1), c, b3)?,
            b3c1: self.conv(&format!("{tag}.b3c1"), (3, 3, kt), b3, b3)?,
            b3c2: self.conv(&format!("{tag}.b3c2"), (3, 3, kt), b3, b3)?,
            b4: self.conv(&format!("{tag}.b4"), (1, 1, 1), c, b4)?,
        };
        self.plan.push(Step::Inception(block));
        Ok(())
    }
}

/// Materialize a seeded model; same seed → bit-identical weights.
pub fn build_model(spec: &ModelSpec, seed_val: u64) -> Result<Model> {
    let mut b = Builder {
        rng: seed::rng(seed_val, "init"),
        names: Vec::new(),
        params: Vec::new(),
        plan: Vec::new(),
    };
    let kt = spec.temporal_kernel;

    match spec.kind {
        ModelKind::Inception3d | ModelKind::Simple3d => {
            let stem = b.conv("stem", (3, 3, kt), 1, spec.stem_channels)?;
            b.plan.push(Step::Conv { param: stem, padding: Padding::Same, relu: true });
            let schedule = spec.channel_schedule()?;
            for (i, &(c_in, c_out)) in schedule.iter().enumerate() {
                let (stage, idx) = if i < spec.stage1_blocks {
                    (1, i)
                } else {
                    (2, i - spec.stage1_blocks)
                };
                let tag = format!("s{stage}b{idx}");
                match spec.kind {
                    ModelKind::Inception3d => {
                        b.inception_block(&tag, InceptionBlockSpec::new(c_in)?, kt)?;
                    }
                    _ => {
                        let p = b.conv(&tag, (3, 3, kt), c_in, c_out)?;
                        b.plan.push(Step::Conv { param: p, padding: Padding::Same, relu: true });
                    }
                }
                if i + 1 == spec.stage1_blocks {
                    b.plan.push(Step::MaxPoolT { window: spec.pool_stride, stride: spec.pool_stride });
                }
            }
            b.plan.push(Step::MaxPoolT { window: spec.pool_stride, stride: spec.pool_stride });
            let last = spec.channel_schedule()?.last().map(|&(_, o)| o).unwrap_or(spec.stem_channels);
            let h1 = b.conv("head1", (3, 3, spec.head_temporal_kernel), last, spec.head_channels.0)?;
            b.plan.push(Step::Conv { param: h1, padding: Padding::Same, relu: true });
            let h2 = b.conv("head2", (1, 1, 1), spec.head_channels.0, spec.head_channels.1)?;
            b.plan.push(Step::Conv { param: h2, padding: Padding::Same, relu: true });
            b.plan.push(Step::GlobalAvgPool);
            b.plan.push(Step::Flatten);
            let (w, bias) = b.dense("fc", spec.n_classes, spec.head_channels.1)?;
            b.plan.push(Step::Dense { w, b: bias });
        }
        ModelKind::Shallow => {
            let t = b.conv("temporal", (1, 1, spec.shallow_temporal_kernel), 1, spec.shallow_filters)?;
            b.plan.push(Step::Conv { param: t, padding: Padding::Same, relu: false });
            let s = b.conv(
                "spatial",
                (spec.rows, spec.cols, 1),
                spec.shallow_filters,
                spec.shallow_filters,
            )?;
            b.plan.push(Step::Conv { param: s, padding: Padding::Valid, relu: false });
            b.plan.push(Step::Square);
            b.plan.push(Step::AvgPoolT {
                window: spec.shallow_pool_window,
                stride: spec.shallow_pool_stride,
            });
            b.plan.push(Step::Log);
            b.plan.push(Step::Flatten);
            let t_pooled = (spec.time - spec.shallow_pool_window) / spec.shallow_pool_stride + 1;
            let (w, bias) = b.dense("fc", spec.n_classes, spec.shallow_filters * t_pooled)?;
            b.plan.push(Step::Dense { w, b: bias });
        }
    }
    Ok(Model { spec: spec.clone(), names: b.names, params: b.params, plan: b.plan })
}

impl Model {
    /// (name, (kr, kc, kt), c_in, c_out) for every conv kernel.
    pub fn kernel_summary(&self) -> Vec<(String, (usize, usize, usize), usize, usize)> {
        self.names
            .iter()
            .zip(&self.params)
            .filter_map(|(name, p)| match p {
                Param::Conv(k) => {
                    Some((name.clone(), k.extents, k.in_channels, k.out_channels))
                }
                Param::Plain(_) => None,
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.params
            .iter()
            .map(|p| match p {
                Param::Conv(k) => k.weights.numel() + k.bias.numel(),
                Param::Plain(t) => t.numel(),
            })
            .sum()
    }

    /// One flat optimizer block per weight/bias buffer, in a fixed order.
    pub fn block_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, p) in self.names.iter().zip(&self.params) {
            match p {
                Param::Conv(_) => {
                    out.push(format!("{name}.w"));
                    out.push(format!("{name}.b"));
                }
                Param::Plain(_) => out.push(name.clone()),
            }
        }
        out
    }

    pub fn block_sizes(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for p in &self.params {
            match p {
                Param::Conv(k) => {
                    out.push(k.weights.numel());
                    out.push(k.bias.numel());
                }
                Param::Plain(t) => out.push(t.numel()),
            }
        }
        out
    }

    pub fn flat_blocks(&self) -> Vec<Vec<f64>> {
        let mut out = Vec::new();
        for p in &self.params {
            match p {
                Param::Conv(k) => {
                    out.push(k.weights.data().to_vec());
                    out.push(k.bias.data().to_vec());
                }
                Param::Plain(t) => out.push(t.data().to_vec()),
            }
        }
        out
    }

    pub fn set_flat_blocks(&mut self, blocks: &[Vec<f64>]) -> Result<()> {
        let sizes = self.block_sizes();
        if blocks.len() != sizes.len() || blocks.iter().zip(&sizes).any(|(b, &s)| b.len() != s) {
            return Err(Error::State("checkpoint blocks do not match model layout".into()));
        }
        let mut it = blocks.iter();
        for p in &mut self.params {
            match p {
                Param::Conv(k) => {
                    k.weights.data_mut().copy_from_slice(it.next().unwrap());
                    k.bias.data_mut().copy_from_slice(it.next().unwrap());
                }
                Param::Plain(t) => t.data_mut().copy_from_slice(it.next().unwrap()),
            }
        }
        Ok(())
    }

    fn bind(&self, tape: &mut Tape) -> Vec<Bound> {
        self.params
            .iter()
            .map(|p| match p {
                Param::Conv(k) => {
                    let (w, b) = tape.kernel(k);
                    Bound::Conv(w, b)
                }
                Param::Plain(t) => Bound::Plain(tape.leaf(t.clone())),
            })
            .collect()
    }

    fn conv_ids(bound: &[Bound], idx: usize) -> (NodeId, NodeId) {
        match bound[idx] {
            Bound::Conv(w, b) => (w, b),
            Bound::Plain(_) => unreachable!("plan/param mismatch"),
        }
    }

    fn plain_id(bound: &[Bound], idx: usize) -> NodeId {
        match bound[idx] {
            Bound::Plain(id) => id,
            Bound::Conv(..) => unreachable!("plan/param mismatch"),
        }
    }

    fn forward_bound(&self, tape: &mut Tape, input: NodeId, bound: &[Bound]) -> Result<NodeId> {
        let mut x = input;
        for step in &self.plan {
            x = match *step {
                Step::Conv { param, padding, relu } => {
                    let (w, b) = Self::conv_ids(bound, param);
                    let y = tape.conv3d(x, w, b, padding)?;
                    if relu {
                        tape.relu(y)
                    } else {
                        y
                    }
                }
                Step::Inception(bp) => {
                    let path = |tape: &mut Tape, x: NodeId, idx: usize, pad: Padding| -> Result<NodeId> {
                        let (w, b) = Self::conv_ids(bound, idx);
                        let y = tape.conv3d(x, w, b, pad)?;
                        Ok(tape.relu(y))
                    };
                    let y1 = path(tape, x, bp.b1, Padding::Same)?;
                    let y2 = {
                        let p = path(tape, x, bp.b2p, Padding::Same)?;
                        path(tape, p, bp.b2c, Padding::Same)?
                    };
                    let y3 = {
                        let p = path(tape, x, bp.b3p, Padding::Same)?;
                        let p = path(tape, p, bp.b3c1, Padding::Same)?;
                        path(tape, p, bp.b3c2, Padding::Same)?
                    };
                    let y4 = {
                        let pooled = tape.avg_pool3d(x, (3, 3, 3), (1, 1, 1), Padding::Same)?;
                        path(tape, pooled, bp.b4, Padding::Same)?
                    };
                    tape.concat_channels(&[y1, y2, y3, y4])?
                }
                Step::MaxPoolT { window, stride } => {
                    tape.max_pool3d(x, (1, 1, window), (1, 1, stride), Padding::Valid)?
                }
                Step::AvgPoolT { window, stride } => {
                    tape.avg_pool3d(x, (1, 1, window), (1, 1, stride), Padding::Valid)?
                }
                Step::GlobalAvgPool => {
                    let shape = tape.value(x).shape().to_vec();
                    tape.avg_pool3d(x, (shape[1], shape[2], shape[3]), (1, 1, 1), Padding::Valid)?
                }
                Step::Square => tape.square(x),
                Step::Log => tape.ln_clamped(x, SHALLOW_LOG_FLOOR),
                Step::Flatten => tape.flatten(x),
                Step::Dense { w, b } => {
                    tape.dense(x, Self::plain_id(bound, w), Self::plain_id(bound, b))?
                }
            };
        }
        Ok(x)
    }

    /// Forward pass on a fresh graph; returns the logits node and the
    /// bound parameter nodes (for gradient extraction after backward).
    pub fn forward(&self, tape: &mut Tape, input: &Tensor) -> Result<(NodeId, Vec<NodeId>)> {
        let bound = self.bind(tape);
        let x = tape.leaf(input.clone());
        let logits = self.forward_bound(tape, x, &bound)?;
        let mut ids = Vec::new();
        for b in &bound {
            match *b {
                Bound::Conv(w, bias) => {
                    ids.push(w);
                    ids.push(bias);
                }
                Bound::Plain(id) => ids.push(id),
            }
        }
        Ok((logits, ids))
    }
}

/// Softmax probabilities for each trial; rows sum to 1 within 1e-9.
pub fn predict(model: &Model, grids: &[GridTrial]) -> Result<Vec<Vec<f64>>> {
    grids
        .par_iter()
        .map(|g| {
            let mut tape = Tape::new();
            let (logits, _) = model.forward(&mut tape, &g.data)?;
            Ok(tape.softmax_values(logits))
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub patience: usize,
    /// stratified carve-out from the training split for early stopping
    pub val_fraction: f64,
    /// global-norm gradient clip applied to the averaged batch gradient
    pub max_grad_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 8,
            batch_size: 16,
            lr: 2e-3,
            seed: 0,
            patience: 4,
            val_fraction: 0.1,
            max_grad_norm: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(0.0..=0.5).contains(&self.val_fraction) {
            return Err(Error::Config(format!(
                "val_fraction {} outside [0, 0.5]",
                self.val_fraction
            )));
        }
        if !(self.max_grad_norm > 0.0) {
            return Err(Error::Config(format!(
                "max_grad_norm must be positive, got {}",
                self.max_grad_norm
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: Option<f64>,
    pub val_acc: Option<f64>,
}

/// Everything needed to continue training bit-exactly.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub epoch_done: usize,
    pub stopped_early: bool,
    pub adam_t: u64,
    pub adam_moments: Vec<(Vec<f64>, Vec<f64>)>,
    pub best_monitor: f64,
    pub since_best: usize,
    pub best_blocks: Option<Vec<Vec<f64>>>,
    pub history: Vec<EpochStats>,
}

impl TrainState {
    fn fresh() -> Self {
        Self {
            epoch_done: 0,
            stopped_early: false,
            adam_t: 0,
            adam_moments: Vec::new(),
            best_monitor: f64::INFINITY,
            since_best: 0,
            best_blocks: None,
            history: Vec::new(),
        }
    }
}

fn trial_loss_grads(
    model: &Model,
    grid: &GridTrial,
) -> Result<(f64, bool, Vec<Vec<f64>>)> {
    let mut tape = Tape::new();
    let (logits, param_ids) = model.forward(&mut tape, &grid.data)?;
    let probs = tape.softmax_values(logits);
    let correct = argmax_lowest(&probs) == grid.label as usize;
    let loss = tape.softmax_cross_entropy(logits, grid.label as usize)?;
    let loss_val = tape.value(loss).item();
    tape.backward(loss)?;
    let grads = param_ids
        .iter()
        .map(|&id| {
            tape.grad(id)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; tape.value(id).numel()])
        })
        .collect();
    Ok((loss_val, correct, grads))
}

fn eval_loss_acc(model: &Model, grids: &[GridTrial], idx: &[usize]) -> Result<(f64, f64)> {
    let stats: Vec<(f64, bool)> = idx
        .par_iter()
        .map(|&i| {
            let g = &grids[i];
            let mut tape = Tape::new();
            let (logits, _) = model.forward(&mut tape, &g.data)?;
            let probs = tape.softmax_values(logits);
            let loss = tape.softmax_cross_entropy(logits, g.label as usize)?;
            Ok((tape.value(loss).item(), argmax_lowest(&probs) == g.label as usize))
        })
        .collect::<Result<_>>()?;
    let n = stats.len() as f64;
    let loss = stats.iter().map(|(l, _)| l).sum::<f64>() / n;
    let acc = stats.iter().filter(|(_, c)| *c).count() as f64 / n;
    Ok((loss, acc))
}

fn adam_apply(
    params: &mut [Param],
    block_names: &[String],
    grads: &[Vec<f64>],
    adam: &mut Adam,
) -> Result<()> {
    let mut blocks: Vec<(&str, &mut [f64], &[f64])> = Vec::with_capacity(grads.len());
    let mut gi = 0;
    for p in params.iter_mut() {
        match p {
            Param::Conv(k) => {
                blocks.push((block_names[gi].as_str(), k.weights.data_mut(), &grads[gi]));
                gi += 1;
                blocks.push((block_names[gi].as_str(), k.bias.data_mut(), &grads[gi]));
                gi += 1;
            }
            Param::Plain(t) => {
                blocks.push((block_names[gi].as_str(), t.data_mut(), &grads[gi]));
                gi += 1;
            }
        }
    }
    adam.step(&mut blocks)
}

/// Deterministic stratified validation carve-out.
fn validation_split(grids: &[GridTrial], config: &TrainConfig) -> (Vec<usize>, Vec<usize>) {
    use rand::seq::SliceRandom;
    let mut rng = seed::rng(config.seed, "validation");
    let mut train = Vec::new();
    let mut val = Vec::new();
    for class in 0..N_CLASSES as u8 {
        let mut idx: Vec<usize> = grids
            .iter()
            .enumerate()
            .filter(|(_, g)| g.label == class)
            .map(|(i, _)| i)
            .collect();
        idx.shuffle(&mut rng);
        let n_val = (config.val_fraction * idx.len() as f64).floor() as usize;
        val.extend_from_slice(&idx[..n_val]);
        train.extend_from_slice(&idx[n_val..]);
    }
    (train, val)
}

/// Continue (or start, when `resume` is None) a training run. The model
/// is left at its *current* weights; the best-validation snapshot lives
/// in the returned state (see [`apply_best`]).
pub fn train_from(
    model: &mut Model,
    grids: &[GridTrial],
    config: &TrainConfig,
    resume: Option<TrainState>,
) -> Result<TrainState> {
    use rand::seq::SliceRandom;
    config.validate()?;
    let mut present = [false; N_CLASSES];
    grids.iter().for_each(|g| present[g.label as usize] = true);
    if let Some(missing) = present.iter().position(|&p| !p) {
        return Err(Error::Input(format!("training split has no trials of class {missing}")));
    }

    let (train_idx, val_idx) = validation_split(grids, config);
    let block_names = model.block_names();
    let hp = AdamParams { lr: config.lr, ..AdamParams::default() };
    let mut adam = Adam::new(hp, &model.block_sizes());
    let mut state = resume.unwrap_or_else(TrainState::fresh);
    if !state.adam_moments.is_empty() {
        adam.restore(state.adam_t, state.adam_moments.clone());
    }

    for epoch in state.epoch_done..config.epochs {
        if state.best_blocks.is_some() && state.since_best >= config.patience {
            state.stopped_early = true;
            break;
        }
        let mut order = train_idx.clone();
        order.shuffle(&mut seed::rng(config.seed, &format!("epoch-{epoch}")));

        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for (batch_no, batch) in order.chunks(config.batch_size).enumerate() {
            let located = |e: Error| match e {
                Error::Numeric(msg) | Error::Optimization(msg) => Error::Optimization(format!(
                    "epoch {epoch}, batch {batch_no}: {msg}"
                )),
                other => other,
            };
            let per_trial: Vec<(f64, bool, Vec<Vec<f64>>)> = batch
                .par_iter()
                .map(|&i| trial_loss_grads(model, &grids[i]))
                .collect::<Result<_>>()
                .map_err(located)?;

            let scale = 1.0 / batch.len() as f64;
            let mut grads: Vec<Vec<f64>> =
                model.block_sizes().iter().map(|&s| vec![0.0; s]).collect();
            for (loss, ok, trial_grads) in &per_trial {
                if !loss.is_finite() {
                    return Err(Error::Optimization(format!(
                        "epoch {epoch}, batch {batch_no}: non-finite loss {loss}"
                    )));
                }
                loss_sum += loss;
                correct += usize::from(*ok);
                for (acc, g) in grads.iter_mut().zip(trial_grads) {
                    for (a, v) in acc.iter_mut().zip(g) {
                        *a += v * scale;
                    }
                }
            }
            let norm = grads.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
            if norm > config.max_grad_norm {
                let s = config.max_grad_norm / norm;
                grads.iter_mut().flatten().for_each(|v| *v *= s);
            }
            adam_apply(&mut model.params, &block_names, &grads, &mut adam).map_err(located)?;
        }

        let train_loss = loss_sum / train_idx.len() as f64;
        let train_acc = correct as f64 / train_idx.len() as f64;
        let (val_loss, val_acc) = if val_idx.is_empty() {
            (None, None)
        } else {
            let (l, a) = eval_loss_acc(model, grids, &val_idx)?;
            (Some(l), Some(a))
        };
        state.history.push(EpochStats { epoch, train_loss, train_acc, val_loss, val_acc });

        let monitor = val_loss.unwrap_or(train_loss);
        if monitor < state.best_monitor {
            state.best_monitor = monitor;
            state.since_best = 0;
            state.best_blocks = Some(model.flat_blocks());
        } else {
            state.since_best += 1;
        }
        state.epoch_done = epoch + 1;
    }

    state.adam_t = adam.t;
    state.adam_moments = adam.moments().to_vec();
    Ok(state)
}

/// Restore the best-validation weights into the model.
pub fn apply_best(model: &mut Model, state: &TrainState) -> Result<()> {
    if let Some(best) = &state.best_blocks {
        model.set_flat_blocks(best)?;
    }
    Ok(())
}

/// Train from scratch and leave the model at its best-validation weights.
pub fn train(model: &mut Model, grids: &[GridTrial], config: &TrainConfig) -> Result<TrainState> {
    let state = train_from(model, grids, config, None)?;
    apply_best(model, &state)?;
    Ok(state)
}

/// Plain-text history log: one epoch per line.
pub fn history_text(history: &[EpochStats]) -> String {
    let mut s = String::from("# epoch train_loss train_acc val_loss val_acc\n");
    for h in history {
        let fmt = |v: Option<f64>| v.map_or("nan".to_string(), |x| format!("{x:.6}"));
        s.push_str(&format!(
            "{} {:.6} {:.6} {} {}\n",
            h.epoch,
            h.train_loss,
            h.train_acc,
            fmt(h.val_loss),
            fmt(h.val_acc),
        ));
    }
    s
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

const CKPT_MAGIC: &[u8; 4] = b"EEGD";
const CKPT_VERSION: u16 = 2;

fn spec_text(spec: &ModelSpec) -> String {
    format!(
        "kind = {}\nrows = {}\ncols = {}\ntime = {}\nn_classes = {}\nstem = {}\n\
         stage1 = {}\nstage2 = {}\ntemporal_kernel = {}\nhead_temporal_kernel = {}\n\
         head0 = {}\nhead1 = {}\npool = {}\nshallow_filters = {}\nshallow_temporal_kernel = {}\n\
         shallow_pool_window = {}\nshallow_pool_stride = {}\n",
        spec.kind.name(),
        spec.rows,
        spec.cols,
        spec.time,
        spec.n_classes,
        spec.stem_channels,
        spec.stage1_blocks,
        spec.stage2_blocks,
        spec.temporal_kernel,
        spec.head_temporal_kernel,
        spec.head_channels.0,
        spec.head_channels.1,
        spec.pool_stride,
        spec.shallow_filters,
        spec.shallow_temporal_kernel,
        spec.shallow_pool_window,
        spec.shallow_pool_stride,
    )
}

fn spec_from_text(text: &str) -> Result<ModelSpec> {
    let mut kind = None;
    let mut nums = std::collections::HashMap::new();
    for line in text.lines() {
        let Some((k, v)) = line.split_once('=') else { continue };
        let (k, v) = (k.trim(), v.trim());
        if k == "kind" {
            kind = Some(ModelKind::parse(v)?);
        } else {
            let n: usize = v
                .parse()
                .map_err(|_| Error::Format { offset: 0, reason: format!("bad spec value {k}={v}") })?;
            nums.insert(k.to_string(), n);
        }
    }
    let get = |k: &str| {
        nums.get(k)
            .copied()
            .ok_or_else(|| Error::Format { offset: 0, reason: format!("spec echo missing '{k}'") })
    };
    Ok(ModelSpec {
        kind: kind.ok_or_else(|| Error::Format { offset: 0, reason: "spec echo missing kind".into() })?,
        rows: get("rows")?,
        cols: get("cols")?,
        time: get("time")?,
        n_classes: get("n_classes")?,
        stem_channels: get("stem")?,
        stage1_blocks: get("stage1")?,
        stage2_blocks: get("stage2")?,
        temporal_kernel: get("temporal_kernel")?,
        head_temporal_kernel: get("head_temporal_kernel")?,
        head_channels: (get("head0")?, get("head1")?),
        pool_stride: get("pool")?,
        shallow_filters: get("shallow_filters")?,
        shallow_temporal_kernel: get("shallow_temporal_kernel")?,
        shallow_pool_window: get("shallow_pool_window")?,
        shallow_pool_stride: get("shallow_pool_stride")?,
    })
}

fn push_section(out: &mut Vec<u8>, name: &str, values: &[f64]) {
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Checkpoint: spec echo + named f64 sections (current weights, best
/// weights, Adam state, training meta, history), CRC-32 trailer.
/// Weights are stored at full precision so resuming is bit-exact.
pub fn save_checkpoint(model: &Model, state: &TrainState, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(CKPT_MAGIC);
    out.extend_from_slice(&CKPT_VERSION.to_le_bytes());
    let spec = spec_text(&model.spec);
    out.extend_from_slice(&(spec.len() as u32).to_le_bytes());
    out.extend_from_slice(spec.as_bytes());

    let names = model.block_names();
    let current = model.flat_blocks();
    let mut sections: Vec<(String, Vec<f64>)> = Vec::new();
    for (n, b) in names.iter().zip(&current) {
        sections.push((format!("param.{n}"), b.clone()));
    }
    if let Some(best) = &state.best_blocks {
        for (n, b) in names.iter().zip(best) {
            sections.push((format!("best.{n}"), b.clone()));
        }
    }
    sections.push(("adam.t".into(), vec![state.adam_t as f64]));
    for (n, (m, v)) in names.iter().zip(&state.adam_moments) {
        sections.push((format!("adam.m.{n}"), m.clone()));
        sections.push((format!("adam.v.{n}"), v.clone()));
    }
    sections.push((
        "meta".into(),
        vec![
            state.epoch_done as f64,
            f64::from(u8::from(state.stopped_early)),
            state.best_monitor,
            state.since_best as f64,
        ],
    ));
    let mut hist = Vec::with_capacity(state.history.len() * 5);
    for h in &state.history {
        hist.extend_from_slice(&[
            h.epoch as f64,
            h.train_loss,
            h.train_acc,
            h.val_loss.unwrap_or(f64::NAN),
            h.val_acc.unwrap_or(f64::NAN),
        ]);
    }
    sections.push(("history".into(), hist));

    out.extend_from_slice(&(sections.len() as u32).to_le_bytes());
    for (name, values) in &sections {
        push_section(&mut out, name, values);
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    std::fs::write(path, out)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(Model, TrainState)> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < 14 {
        return Err(Error::Format { offset: 0, reason: "checkpoint too short".into() });
    }
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    let actual = crc32fast::hash(&bytes[..bytes.len() - 4]);
    if stored != actual {
        return Err(Error::Format {
            offset: (bytes.len() - 4) as u64,
            reason: format!("CRC mismatch: stored {stored:#010x}, computed {actual:#010x}"),
        });
    }
    let body = &bytes[..bytes.len() - 4];
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize, what: &str| -> Result<&[u8]> {
        if *pos + n > body.len() {
            return Err(Error::Format {
                offset: *pos as u64,
                reason: format!("truncated while reading {what}"),
            });
        }
        let s = &body[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    if take(&mut pos, 4, "magic")? != CKPT_MAGIC {
        return Err(Error::Format { offset: 0, reason: "bad checkpoint magic".into() });
    }
    let version = u16::from_le_bytes(take(&mut pos, 2, "version")?.try_into().unwrap());
    if version != CKPT_VERSION {
        return Err(Error::Format { offset: 4, reason: format!("unsupported version {version}") });
    }
    let spec_len = u32::from_le_bytes(take(&mut pos, 4, "spec length")?.try_into().unwrap()) as usize;
    let spec_bytes = take(&mut pos, spec_len, "spec echo")?;
    let spec = spec_from_text(
        std::str::from_utf8(spec_bytes)
            .map_err(|_| Error::Format { offset: pos as u64, reason: "spec echo not UTF-8".into() })?,
    )?;
    let n_sections = u32::from_le_bytes(take(&mut pos, 4, "section count")?.try_into().unwrap());
    let mut sections = std::collections::HashMap::new();
    for _ in 0..n_sections {
        let name_len =
            u16::from_le_bytes(take(&mut pos, 2, "section name length")?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(take(&mut pos, name_len, "section name")?)
            .map_err(|_| Error::Format { offset: pos as u64, reason: "section name not UTF-8".into() })?
            .to_string();
        let count =
            u64::from_le_bytes(take(&mut pos, 8, "section length")?.try_into().unwrap()) as usize;
        let raw = take(&mut pos, count * 8, "section values")?;
        let values: Vec<f64> =
            raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        sections.insert(name, values);
    }

    let mut model = build_model(&spec, 0)?;
    let names = model.block_names();
    let grab = |prefix: &str, n: &str| -> Result<Vec<f64>> {
        sections
            .get(&format!("{prefix}.{n}"))
            .cloned()
            .ok_or_else(|| Error::Format { offset: 0, reason: format!("missing section {prefix}.{n}") })
    };
    let current: Vec<Vec<f64>> = names.iter().map(|n| grab("param", n)).collect::<Result<_>>()?;
    model.set_flat_blocks(&current)?;

    let best_blocks = if sections.contains_key(&format!("best.{}", names[0])) {
        Some(names.iter().map(|n| grab("best", n)).collect::<Result<Vec<_>>>()?)
    } else {
        None
    };
    let adam_moments = names
        .iter()
        .map(|n| Ok((grab("adam.m", n)?, grab("adam.v", n)?)))
        .collect::<Result<Vec<_>>>()
        .unwrap_or_default();
    let meta = sections
        .get("meta")
        .filter(|m| m.len() == 4)
        .ok_or_else(|| Error::Format { offset: 0, reason: "missing meta section".into() })?;
    let history = sections
        .get("history")
        .map(|h| {
            h.chunks_exact(5)
                .map(|c| EpochStats {
                    epoch: c[0] as usize,
                    train_loss: c[1],
                    train_acc: c[2],
                    val_loss: (!c[3].is_nan()).then_some(c[3]),
                    val_acc: (!c[4].is_nan()).then_some(c[4]),
                })
                .collect()
        })
        .unwrap_or_default();
    let adam_t = sections.get("adam.t").and_then(|v| v.first()).copied().unwrap_or(0.0) as u64;

    let state = TrainState {
        epoch_done: meta[0] as usize,
        stopped_early: meta[1] != 0.0,
        adam_t,
        adam_moments,
        best_monitor: meta[2],
        since_best: meta[3] as usize,
        best_blocks,
        history,
    };
    Ok((model, state))
}
