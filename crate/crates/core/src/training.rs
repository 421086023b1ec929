//! Overlap-aware sample construction and the co-training loop.
//!
//! Training runs in two stages. A spatial stage first fits the frozen
//! group as a single-frame model (conditioned on another frame of the same
//! clip) with every temporal module bypassed; it stands in for the
//! pretrained image backbone. Co-training then updates only the temporal
//! groups: one coin per step picks the branch, an unconditional step
//! replaces the whole condition by the null condition and updates φ, a
//! conditional step updates θ and φ.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::model::{ConditionBundle, LatentCodec, ParamGroup, VideoModel};
use crate::numcore::{adam_step, Rng, Tape, Tensor};
use crate::schedule::q_sample;
use crate::synthdata::Clip;

pub const GRAD_CLIP: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Probability of the unconditional branch.
    pub p: f64,
    pub n_c_min: usize,
    pub n_c_max: usize,
    pub n_g: usize,
    /// Co-training steps.
    pub steps: usize,
    pub lr: f32,
    pub batch: usize,
    pub seed: u64,
    /// Spatial pretraining steps run before co-training.
    pub pretrain_steps: usize,
    pub pretrain_lr: f32,
    pub pretrain_batch: usize,
    /// Weight each item's ε-MSE by `1/ᾱ_t`, i.e. train the network output
    /// on the v target. Plain ε-MSE when false.
    #[serde(default = "yes")]
    pub v_loss: bool,
}

fn yes() -> bool {
    true
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            p: 0.1,
            n_c_min: 1,
            n_c_max: 4,
            n_g: 8,
            steps: 5000,
            lr: 5e-4,
            batch: 1,
            seed: 0,
            pretrain_steps: 6000,
            pretrain_lr: 1e-3,
            pretrain_batch: 8,
            v_loss: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!((0.0..=1.0).contains(&self.p), Config, "p must lie in [0, 1], got {}", self.p);
        ensure!(1 <= self.n_c_min && self.n_c_min <= self.n_c_max && self.n_c_max <= self.n_g, Config,
            "need 1 <= n_c_min <= n_c_max <= n_g, got {}..={} with n_g = {}", self.n_c_min, self.n_c_max, self.n_g);
        ensure!(self.batch >= 1 && self.pretrain_batch >= 1, Config, "batch sizes must be >= 1");
        ensure!(self.lr >= 0.0 && self.pretrain_lr >= 0.0, Config, "learning rates must be >= 0");
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Conditional,
    Unconditional,
}

impl Branch {
    pub fn label(self) -> &'static str {
        match self {
            Branch::Conditional => "cond",
            Branch::Unconditional => "uncond",
        }
    }

    /// One coin: unconditional with probability `p`.
    pub fn draw(p: f64, rng: &mut Rng) -> Branch {
        if rng.bernoulli(p) {
            Branch::Unconditional
        } else {
            Branch::Conditional
        }
    }

    /// Groups that receive gradients during co-training.
    pub fn trainable(self, group: ParamGroup) -> bool {
        match self {
            Branch::Conditional => matches!(group, ParamGroup::Theta | ParamGroup::Phi),
            Branch::Unconditional => group == ParamGroup::Phi,
        }
    }
}

/// One training example: the latent target and what it is conditioned on.
#[derive(Clone, Debug)]
pub struct TrainItem {
    pub target: Tensor,
    pub bundle: ConditionBundle,
}

/// Encodes the first `n_g` frames of `clip` and conditions on the first
/// `n_c` of them.
pub fn build_sample(codec: &LatentCodec, clip: &Tensor, caption: &[u32], n_c: usize, n_g: usize) -> Result<TrainItem> {
    ensure!(clip.rank() == 4 && clip.shape()[0] >= n_g, Config,
        "clip of shape {:?} is shorter than n_g = {}", clip.shape(), n_g);
    ensure!(1 <= n_c && n_c <= n_g, Config, "need 1 <= n_c <= n_g, got n_c = {}, n_g = {}", n_c, n_g);
    let target = codec.encode(&clip.slice_axis0(0, n_g)?)?;
    let frames = target.slice_axis0(0, n_c)?;
    Ok(TrainItem { target, bundle: ConditionBundle::new(frames, caption.to_vec())? })
}

/// Gradient statistics of one step, per group.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct GradNorms {
    pub theta: f64,
    pub phi: f64,
    pub frozen: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    pub loss: f32,
    pub branch: Branch,
    /// Norms before clipping.
    pub grad_norms: GradNorms,
}

/// One optimisation step over `items`.
///
/// Every parameter whose group passes `trainable` is a gradient leaf; all
/// others are constants on the tape and are never written.
fn optimise(
    model: &mut VideoModel,
    items: &[TrainItem],
    trainable: &dyn Fn(ParamGroup) -> bool,
    temporal: bool,
    lr: f32,
    v_loss: bool,
    rng: &mut Rng,
) -> Result<(f32, GradNorms)> {
    ensure!(!items.is_empty(), Config, "empty batch");
    let tape = Tape::new();
    let (loss, updates, norms) = {
        let p = model.store().bind(&tape, trainable);
        let mut total = None;
        for item in items {
            let n_g = item.target.shape()[0];
            let t = rng.below(model.schedule().len());
            let eps = rng.randn(item.target.shape())?;
            let z_t = q_sample(&item.target, t, &eps, model.schedule())?;
            let (cond, text) = model.condition(&p, &item.bundle, n_g, temporal)?;
            let pred = model.eps(&p, &z_t, t, cond, text, temporal)?;
            let mut l = pred.mse(tape.constant(eps))?;
            if v_loss {
                // ε̂ − ε = √ᾱ·(net − net*), so this is the network's own
                // error; plain ε-MSE would all but ignore high-noise steps.
                // At ᾱ = 0 the prediction is exactly z_t = ε and carries no
                // gradient, so the floor only keeps the weight finite.
                l = l.scale((1.0 / model.schedule().alpha_bar(t)?.max(1e-6)) as f32);
            }
            total = Some(match total {
                None => l,
                Some(acc) => l.add(acc)?,
            });
        }
        let loss = total.expect("non-empty batch").scale(1.0 / items.len() as f32);
        let value = loss.value().item()?;
        ensure!(value.is_finite(), Numeric, "non-finite training loss {}", value);
        let grads = tape.backward(loss)?;
        let mut norms = GradNorms::default();
        let mut updates = Vec::new();
        for (param, var) in model.store().iter().zip(p.vars()) {
            let Some(g) = grads.get(*var) else {
                updates.push(None);
                continue;
            };
            let sq: f64 = g.data().iter().map(|&v| (v as f64).powi(2)).sum();
            match param.group {
                ParamGroup::Theta => norms.theta += sq,
                ParamGroup::Phi => norms.phi += sq,
                ParamGroup::Frozen => norms.frozen += sq,
            }
            updates.push(Some(g.clone()));
        }
        (value, updates, norms)
    };
    let norms = GradNorms { theta: norms.theta.sqrt(), phi: norms.phi.sqrt(), frozen: norms.frozen.sqrt() };
    let global = (norms.theta.powi(2) + norms.phi.powi(2) + norms.frozen.powi(2)).sqrt();
    ensure!(global.is_finite(), Numeric, "non-finite gradient norm");
    let clip = if global > GRAD_CLIP { (GRAD_CLIP / global) as f32 } else { 1.0 };
    for (param, g) in model.store_mut().iter_mut().zip(updates) {
        let Some(g) = g else { continue };
        let g = if clip < 1.0 { g.scale(clip) } else { g };
        adam_step(&mut param.value, &g, &mut param.adam, lr)?;
    }
    Ok((loss, norms))
}

/// Co-training step; `forced` pins the branch instead of drawing the coin.
pub fn co_train_step(
    model: &mut VideoModel,
    batch: &[TrainItem],
    cfg: &TrainConfig,
    rng: &mut Rng,
    forced: Option<Branch>,
) -> Result<StepReport> {
    let branch = forced.unwrap_or_else(|| Branch::draw(cfg.p, rng));
    let items: Vec<TrainItem> = match branch {
        Branch::Conditional => batch.to_vec(),
        Branch::Unconditional => batch
            .iter()
            .map(|it| TrainItem { target: it.target.clone(), bundle: ConditionBundle::null() })
            .collect(),
    };
    let (loss, grad_norms) = optimise(model, &items, &|g| branch.trainable(g), true, cfg.lr, cfg.v_loss, rng)?;
    Ok(StepReport { loss, branch, grad_norms })
}

/// Spatial pretraining step on single frames; only the frozen group moves.
pub fn pretrain_step(model: &mut VideoModel, batch: &[TrainItem], cfg: &TrainConfig, rng: &mut Rng) -> Result<StepReport> {
    let branch = Branch::draw(cfg.p, rng);
    let items: Vec<TrainItem> = batch
        .iter()
        .map(|it| TrainItem {
            target: it.target.clone(),
            bundle: if branch == Branch::Unconditional { ConditionBundle::null() } else { it.bundle.clone() },
        })
        .collect();
    let (loss, grad_norms) =
        optimise(model, &items, &|g| g == ParamGroup::Frozen, false, cfg.pretrain_lr, cfg.v_loss, rng)?;
    Ok(StepReport { loss, branch, grad_norms })
}

/// Share of pretraining items whose condition frame is the target itself,
/// so the frozen image sampler learns to carry layout as well as content.
pub const SELF_COND_RATE: f64 = 0.5;

/// A random `n_g`-frame window of a random clip with a uniform `n_c`.
pub fn draw_item(codec: &LatentCodec, clips: &[Clip], cfg: &TrainConfig, rng: &mut Rng) -> Result<TrainItem> {
    let clip = &clips[rng.below(clips.len())];
    let len = clip.video.shape()[0];
    ensure!(len >= cfg.n_g, Config, "clip of {} frames is shorter than n_g = {}", len, cfg.n_g);
    let start = rng.range_inclusive(0, len - cfg.n_g);
    let n_c = rng.range_inclusive(cfg.n_c_min, cfg.n_c_max);
    build_sample(codec, &clip.video.slice_axis0(start, start + cfg.n_g)?, &clip.caption, n_c, cfg.n_g)
}

/// One target frame conditioned on itself (probability [`SELF_COND_RATE`])
/// or on a different frame of the same clip.
pub fn draw_frame_item(codec: &LatentCodec, clips: &[Clip], rng: &mut Rng) -> Result<TrainItem> {
    let clip = &clips[rng.below(clips.len())];
    let len = clip.video.shape()[0];
    let a = rng.below(len);
    let b = if len > 1 && !rng.bernoulli(SELF_COND_RATE) { (a + 1 + rng.below(len - 1)) % len } else { a };
    let target = codec.encode(&clip.video.slice_axis0(a, a + 1)?)?;
    let cond = codec.encode(&clip.video.slice_axis0(b, b + 1)?)?;
    Ok(TrainItem { target, bundle: ConditionBundle::new(cond, clip.caption.clone())? })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Pretrain,
    Cotrain,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LossRow {
    pub stage: Stage,
    pub step: usize,
    pub loss: f32,
    pub branch: Branch,
}

/// Spatial stage only.
pub fn pretrain(
    model: &mut VideoModel,
    clips: &[Clip],
    cfg: &TrainConfig,
    mut on_step: impl FnMut(&LossRow),
) -> Result<Vec<LossRow>> {
    cfg.validate()?;
    ensure!(!clips.is_empty(), Config, "training set is empty");
    let root = Rng::new(cfg.seed).derive("pretrain");
    let (mut data_rng, mut step_rng) = (root.derive("data"), root.derive("step"));
    let codec = model.codec().clone();
    let mut rows = Vec::with_capacity(cfg.pretrain_steps);
    for step in 0..cfg.pretrain_steps {
        let batch = (0..cfg.pretrain_batch)
            .map(|_| draw_frame_item(&codec, clips, &mut data_rng))
            .collect::<Result<Vec<_>>>()?;
        let r = pretrain_step(model, &batch, cfg, &mut step_rng)?;
        rows.push(LossRow { stage: Stage::Pretrain, step, loss: r.loss, branch: r.branch });
        on_step(rows.last().expect("just pushed"));
    }
    Ok(rows)
}

/// Co-training stage only.
pub fn co_train(
    model: &mut VideoModel,
    clips: &[Clip],
    cfg: &TrainConfig,
    mut on_step: impl FnMut(&LossRow),
) -> Result<Vec<LossRow>> {
    cfg.validate()?;
    ensure!(!clips.is_empty(), Config, "training set is empty");
    let root = Rng::new(cfg.seed).derive("cotrain");
    let (mut data_rng, mut step_rng) = (root.derive("data"), root.derive("step"));
    let codec = model.codec().clone();
    let mut rows = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let batch = (0..cfg.batch)
            .map(|_| draw_item(&codec, clips, cfg, &mut data_rng))
            .collect::<Result<Vec<_>>>()?;
        let r = co_train_step(model, &batch, cfg, &mut step_rng, None)?;
        rows.push(LossRow { stage: Stage::Cotrain, step, loss: r.loss, branch: r.branch });
        on_step(rows.last().expect("just pushed"));
    }
    Ok(rows)
}

/// Spatial stage followed by co-training. Deterministic given `cfg.seed`,
/// the clips and the initial model.
pub fn train(
    model: &mut VideoModel,
    clips: &[Clip],
    cfg: &TrainConfig,
    mut on_step: impl FnMut(&LossRow),
) -> Result<Vec<LossRow>> {
    let mut rows = pretrain(model, clips, cfg, &mut on_step)?;
    rows.extend(co_train(model, clips, cfg, &mut on_step)?);
    Ok(rows)
}

pub fn loss_csv(rows: &[LossRow]) -> String {
    let mut out = String::from("stage,step,loss,branch\n");
    for r in rows {
        let stage = match r.stage {
            Stage::Pretrain => "pretrain",
            Stage::Cotrain => "cotrain",
        };
        let _ = writeln!(out, "{},{},{},{}", stage, r.step, r.loss, r.branch.label());
    }
    out
}

/// Mean loss over the first and the last `window` rows.
pub fn loss_drop(rows: &[LossRow], window: usize) -> Option<(f64, f64)> {
    if rows.is_empty() || window == 0 {
        return None;
    }
    let w = window.min(rows.len());
    let mean = |r: &[LossRow]| r.iter().map(|x| x.loss as f64).sum::<f64>() / r.len() as f64;
    Some((mean(&rows[..w]), mean(&rows[rows.len() - w..])))
}
