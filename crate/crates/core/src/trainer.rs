//! Two-stage optimization and evaluation sweeps.
//!
//! Stage one fits the feature codec on noise-free roundtrips. Stage two
//! trains the whole chain through the straight-through link, starting either
//! from a stage-one checkpoint or from scratch.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Checkpoint;
use crate::config::KvConfig;
use crate::error::{Error, Result};
use crate::featurecodec;
use crate::link::{ChannelKind, LinkConfig};
use crate::metrics::{evaluate_frame, ExperimentReport, LossWeights, MetricOptions, MetricRecord};
use crate::nn::{Adam, Graph, ParamStore, StepLr};
use crate::pcdata::ScenePair;
use crate::pipeline::{add_stage_two_params, forward_frame, frame_loss, init_model, reconstruct, LinkUse, ModelConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Pretrain,
    Finetune,
}

impl FromStr for Stage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pretrain" => Ok(Stage::Pretrain),
            "finetune" => Ok(Stage::Finetune),
            _ => Err(Error::Config(format!("unknown stage '{s}'"))),
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Pretrain => "pretrain",
            Stage::Finetune => "finetune",
        })
    }
}

/// Training SNR: one value, or drawn uniformly per frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SnrMode {
    Fixed(f64),
    Uniform(f64, f64),
}

impl SnrMode {
    pub fn draw<R: Rng>(&self, rng: &mut R) -> f64 {
        match *self {
            SnrMode::Fixed(s) => s,
            SnrMode::Uniform(lo, hi) => rng.gen_range(lo..=hi),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub stage: Stage,
    pub epochs: usize,
    pub learning_rate: f64,
    pub step_size: usize,
    pub gamma: f64,
    pub batch_size: usize,
    pub snr_mode: SnrMode,
    pub channel: ChannelKind,
    pub seed: u64,
    /// Stage two only: keep the feature codec weights fixed.
    pub freeze_codec: bool,
    pub weights: LossWeights,
}

impl TrainConfig {
    pub fn pretrain() -> Self {
        TrainConfig {
            stage: Stage::Pretrain,
            epochs: 80,
            learning_rate: 1e-3,
            step_size: 15,
            gamma: 0.5,
            batch_size: 1,
            snr_mode: SnrMode::Fixed(10.0),
            channel: ChannelKind::Awgn,
            seed: 0,
            freeze_codec: false,
            weights: LossWeights::default(),
        }
    }

    pub fn finetune() -> Self {
        TrainConfig {
            stage: Stage::Finetune,
            epochs: 20,
            step_size: 4,
            gamma: 0.8,
            ..Self::pretrain()
        }
    }

    pub fn defaults_for(stage: Stage) -> Self {
        match stage {
            Stage::Pretrain => Self::pretrain(),
            Stage::Finetune => Self::finetune(),
        }
    }

    pub fn schedule(&self) -> StepLr {
        StepLr {
            lr0: self.learning_rate,
            step: self.step_size,
            gamma: self.gamma,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size != 1 {
            return Err(Error::Config("batch_size must be 1".into()));
        }
        if self.epochs == 0 || self.step_size == 0 {
            return Err(Error::Config("epochs and step_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.gamma > 0.0) {
            return Err(Error::Config("learning_rate and gamma must be positive".into()));
        }
        if let SnrMode::Uniform(lo, hi) = self.snr_mode {
            if !(lo <= hi) {
                return Err(Error::Config("snr_lo must not exceed snr_hi".into()));
            }
        }
        Ok(())
    }

    /// Reads `stage` first and fills unspecified keys from that stage's defaults.
    pub fn from_kv(cfg: &KvConfig) -> Result<Self> {
        let stage = cfg.get_or("stage", Stage::Pretrain)?;
        let d = Self::defaults_for(stage);
        let snr_mode = match cfg.raw("snr_mode").unwrap_or("fixed") {
            "fixed" => SnrMode::Fixed(cfg.get_or("snr_db", 10.0)?),
            "uniform" => SnrMode::Uniform(cfg.get_or("snr_lo", 0.0)?, cfg.get_or("snr_hi", 10.0)?),
            other => return Err(Error::Config(format!("unknown snr_mode '{other}'"))),
        };
        let t = TrainConfig {
            stage,
            epochs: cfg.get_or("epochs", d.epochs)?,
            learning_rate: cfg.get_or("learning_rate", d.learning_rate)?,
            step_size: cfg.get_or("step_size", d.step_size)?,
            gamma: cfg.get_or("gamma", d.gamma)?,
            batch_size: cfg.get_or("batch_size", 1)?,
            snr_mode,
            channel: cfg.get_or("channel", d.channel)?,
            seed: cfg.get_or("seed", 0)?,
            freeze_codec: cfg.get_or("freeze_codec", false)?,
            weights: LossWeights {
                alpha_density: cfg.get_or("alpha_density", d.weights.alpha_density)?,
                beta_cardinality: cfg.get_or("beta_cardinality", d.weights.beta_cardinality)?,
            },
        };
        t.validate()?;
        Ok(t)
    }

    pub fn to_kv(&self, cfg: &mut KvConfig) {
        cfg.set("stage", self.stage);
        cfg.set("epochs", self.epochs);
        cfg.set("learning_rate", self.learning_rate);
        cfg.set("step_size", self.step_size);
        cfg.set("gamma", self.gamma);
        cfg.set("batch_size", self.batch_size);
        match self.snr_mode {
            SnrMode::Fixed(s) => {
                cfg.set("snr_mode", "fixed");
                cfg.set("snr_db", s);
            }
            SnrMode::Uniform(lo, hi) => {
                cfg.set("snr_mode", "uniform");
                cfg.set("snr_lo", lo);
                cfg.set("snr_hi", hi);
            }
        }
        cfg.set("channel", self.channel);
        cfg.set("seed", self.seed);
        cfg.set("freeze_codec", self.freeze_codec);
        cfg.set("alpha_density", self.weights.alpha_density);
        cfg.set("beta_cardinality", self.weights.beta_cardinality);
    }
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    pub mean_loss: f64,
    pub mean_cd: f64,
    pub lr: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochLog>,
    /// Frames that went through the link.
    pub link_calls: usize,
}

/// Where stage two starts from.
pub enum FinetuneInit<'a> {
    Pretrained(&'a Checkpoint),
    Scratch,
}

fn stage_rngs(seed: u64) -> (ChaCha8Rng, ChaCha8Rng) {
    // Initialization and data order use separate streams so that runs with
    // different starting points still see identical frames and noise.
    let mut init = ChaCha8Rng::seed_from_u64(seed);
    init.set_stream(0);
    let mut data = ChaCha8Rng::seed_from_u64(seed);
    data.set_stream(1);
    (init, data)
}

fn snapshot(model: &ModelConfig, cfg: &TrainConfig) -> KvConfig {
    let mut kv = KvConfig::new();
    model.to_kv(&mut kv);
    cfg.to_kv(&mut kv);
    kv
}

fn run_epochs(
    data: &[ScenePair],
    model: &ModelConfig,
    cfg: &TrainConfig,
    params: &mut ParamStore,
    rng: &mut ChaCha8Rng,
    trainable: &dyn Fn(&str) -> bool,
) -> Result<(Vec<EpochLog>, usize)> {
    if data.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let schedule = cfg.schedule();
    let mut adam = Adam::default();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut link_calls = 0;
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..cfg.epochs {
        let lr = schedule.lr_at(epoch);
        order.shuffle(rng);
        let (mut loss_sum, mut cd_sum) = (0.0, 0.0);
        for (frame, &i) in order.iter().enumerate() {
            let pair = &data[i];
            let diverged = Error::Diverged {
                epoch: epoch + 1,
                frame,
                lr,
            };
            let grads = {
                let mut g = Graph::with_params(params);
                let rx_to_tx = pair.tx_to_rx.inverse();
                let fwd = match cfg.stage {
                    Stage::Pretrain => forward_frame(&mut g, model, pair.tx.points(), None, None)?,
                    Stage::Finetune => {
                        let link = LinkConfig {
                            channel: cfg.channel,
                            snr_db: cfg.snr_mode.draw(rng),
                            ..model.link.clone()
                        };
                        let rx = model.use_fusion.then_some((pair.rx.points(), &rx_to_tx));
                        let use_link = LinkUse { cfg: link, rng: &mut *rng };
                        forward_frame(&mut g, model, pair.tx.points(), rx, Some(use_link))?
                    }
                };
                if fwd.chain.is_some() {
                    link_calls += 1;
                }
                let parts = frame_loss(&mut g, model, &fwd, pair.tx.points(), &cfg.weights);
                let loss = g.value(parts.total).item();
                if !loss.is_finite() {
                    return Err(diverged);
                }
                loss_sum += loss;
                cd_sum += parts.chamfer;
                g.backward(parts.total).params(&g)
            };
            adam.step(params, &grads, lr, trainable);
            if !params.all_finite() {
                return Err(diverged);
            }
        }
        let n = data.len() as f64;
        log.push(EpochLog {
            epoch: epoch + 1,
            mean_loss: loss_sum / n,
            mean_cd: cd_sum / n,
            lr,
        });
    }
    Ok((log, link_calls))
}

fn finish(params: ParamStore, model: &ModelConfig, cfg: &TrainConfig, rng: &ChaCha8Rng) -> Checkpoint {
    let mut ck = Checkpoint::new(params, snapshot(model, cfg), &cfg.stage.to_string(), cfg.epochs);
    ck.rng_seed = cfg.seed;
    ck.rng_stream = rng.get_stream();
    ck.rng_word_pos = rng.get_word_pos();
    ck
}

/// Stage one: feature codec only, no link in the graph.
pub fn pretrain(data: &[ScenePair], model: &ModelConfig, cfg: &TrainConfig) -> Result<TrainOutcome> {
    if cfg.stage != Stage::Pretrain {
        return Err(Error::Config("pretrain needs stage=pretrain".into()));
    }
    cfg.validate()?;
    model.validate()?;
    let (mut init_rng, mut rng) = stage_rngs(cfg.seed);
    let mut params = ParamStore::new();
    featurecodec::init_params(&mut params, &model.codec, &mut init_rng)?;
    let (log, link_calls) = run_epochs(data, model, cfg, &mut params, &mut rng, &|_| true)?;
    Ok(TrainOutcome {
        checkpoint: finish(params, model, cfg, &rng),
        log,
        link_calls,
    })
}

/// Stage two: the whole chain through the straight-through link.
pub fn finetune(data: &[ScenePair], model: &ModelConfig, cfg: &TrainConfig, init: FinetuneInit<'_>) -> Result<TrainOutcome> {
    if cfg.stage != Stage::Finetune {
        return Err(Error::Config("finetune needs stage=finetune".into()));
    }
    cfg.validate()?;
    model.validate()?;
    let (mut init_rng, mut rng) = stage_rngs(cfg.seed);
    let mut params = match init {
        FinetuneInit::Pretrained(ck) => {
            let mut p = ck.params.clone();
            if !p.names().any(|n| n.starts_with("feature_enc")) {
                return Err(Error::Checkpoint("checkpoint holds no feature codec weights".into()));
            }
            add_stage_two_params(&mut p, model, &mut init_rng);
            p
        }
        FinetuneInit::Scratch => init_model(model, &mut init_rng)?,
    };
    let freeze = cfg.freeze_codec;
    let trainable = move |name: &str| !(freeze && name.starts_with("feature_"));
    let (log, link_calls) = run_epochs(data, model, cfg, &mut params, &mut rng, &trainable)?;
    Ok(TrainOutcome {
        checkpoint: finish(params, model, cfg, &rng),
        log,
        link_calls,
    })
}

/// Link conditions of an evaluation sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalPlan {
    /// `None` evaluates the noise-free compression roundtrip only.
    pub snrs: Option<Vec<f64>>,
    pub channel: ChannelKind,
    pub seed: u64,
    pub metrics: MetricOptions,
}

impl EvalPlan {
    pub fn link(snrs: &[f64], channel: ChannelKind, seed: u64) -> Self {
        EvalPlan {
            snrs: Some(snrs.to_vec()),
            channel,
            seed,
            metrics: MetricOptions::default(),
        }
    }

    pub fn noise_free() -> Self {
        EvalPlan {
            snrs: None,
            channel: ChannelKind::Awgn,
            seed: 0,
            metrics: MetricOptions::default(),
        }
    }
}

/// Frame `i` draws its link noise from stream `i` of the plan seed, so every
/// SNR point of a sweep sees the same underlying noise and fading samples.
pub fn frame_rng(seed: u64, frame: usize) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(frame as u64);
    r
}

/// Per-frame metrics for every (SNR, frame) pair, SNR-major.
pub fn evaluate(params: &ParamStore, model: &ModelConfig, data: &[ScenePair], plan: &EvalPlan, label: &str) -> Result<ExperimentReport> {
    model.validate()?;
    let mut report = ExperimentReport::new(label);
    let snrs: Vec<Option<f64>> = match &plan.snrs {
        Some(v) => v.iter().copied().map(Some).collect(),
        None => vec![None],
    };
    for snr in snrs {
        for (i, pair) in data.iter().enumerate() {
            let mut rng = frame_rng(plan.seed, i);
            let link = snr.map(|s| LinkUse {
                cfg: LinkConfig {
                    channel: plan.channel,
                    snr_db: s,
                    ..model.link.clone()
                },
                rng: &mut rng,
            });
            let m = if snr.is_some() { model.clone() } else { ModelConfig { use_fusion: false, ..model.clone() } };
            let (recon, _) = reconstruct(params, &m, pair, link)?;
            let (cd, d1, d2) = evaluate_frame(&pair.tx, &recon, &plan.metrics)?;
            report.records.push(MetricRecord {
                frame_id: pair.tx.frame_id.clone(),
                snr_db: snr.unwrap_or(f64::INFINITY),
                bpp: model.bpp(pair.tx.len())?,
                cd,
                d1_psnr: d1,
                d2_psnr: d2,
                failed: false,
            });
        }
    }
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AblationAxis {
    AbsPos,
    ChannelCodec,
    Fusion,
}

impl AblationAxis {
    pub fn label(self) -> &'static str {
        match self {
            AblationAxis::AbsPos => "no_abs_pos",
            AblationAxis::ChannelCodec => "no_channel_codec",
            AblationAxis::Fusion => "no_fusion",
        }
    }

    pub fn apply(self, mut m: ModelConfig) -> ModelConfig {
        match self {
            AblationAxis::AbsPos => m.codec.use_abs_pos = false,
            AblationAxis::ChannelCodec => m.use_channel_codec = false,
            AblationAxis::Fusion => m.use_fusion = false,
        }
        m
    }
}

impl FromStr for AblationAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "use_abs_pos" | "abs_pos" => Ok(AblationAxis::AbsPos),
            "use_channel_codec" | "channel_codec" => Ok(AblationAxis::ChannelCodec),
            "use_fusion" | "fusion" => Ok(AblationAxis::Fusion),
            _ => Err(Error::Config(format!("unknown ablation axis '{s}'"))),
        }
    }
}

/// Shared settings of an ablation study.
pub struct AblationPlan<'a> {
    pub base: ModelConfig,
    pub pretrain: TrainConfig,
    pub finetune: TrainConfig,
    pub train: &'a [ScenePair],
    pub test: &'a [ScenePair],
    pub eval: EvalPlan,
}

pub struct AblationResult {
    pub label: String,
    pub model: ModelConfig,
    /// Noise-free compression quality of the variant's stage-one weights.
    pub noise_free: ExperimentReport,
    pub report: ExperimentReport,
    pub log: Vec<EpochLog>,
}

/// Trains and evaluates the full model and one variant per axis. Variants
/// that keep the stage-one architecture share `pretrained` (trained once
/// when absent); the absolute-position variant gets its own stage one.
pub fn run_ablation(plan: &AblationPlan<'_>, axes: &[AblationAxis], pretrained: Option<&Checkpoint>) -> Result<Vec<AblationResult>> {
    let own;
    let shared = match pretrained {
        Some(c) => c,
        None => {
            own = pretrain(plan.train, &plan.base, &plan.pretrain)?.checkpoint;
            &own
        }
    };
    let mut variants = vec![("full".to_string(), plan.base.clone())];
    for &a in axes {
        variants.push((a.label().to_string(), a.apply(plan.base.clone())));
    }
    let mut out = Vec::new();
    for (label, model) in variants {
        let separate;
        let stage_one = if model.codec.use_abs_pos == plan.base.codec.use_abs_pos {
            shared
        } else {
            separate = pretrain(plan.train, &model, &plan.pretrain)?.checkpoint;
            &separate
        };
        let noise_free = evaluate(&stage_one.params, &model, plan.test, &EvalPlan { snrs: None, ..plan.eval.clone() }, &label)?;
        let tuned = finetune(plan.train, &model, &plan.finetune, FinetuneInit::Pretrained(stage_one))?;
        let report = evaluate(&tuned.checkpoint.params, &model, plan.test, &plan.eval, &label)?;
        out.push(AblationResult {
            label,
            model,
            noise_free,
            report,
            log: tuned.log,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featurecodec::CodecConfig;
    use crate::pcdata::{synth_dataset, SceneParams};

    fn tiny_model() -> ModelConfig {
        ModelConfig {
            codec: CodecConfig {
                hidden_dims: vec![8, 8, 8],
                k_neighbors: 8,
                ..CodecConfig::default()
            },
            ..ModelConfig::default()
        }
        .normalized()
    }

    fn tiny_data(seed: u64, n: usize) -> Vec<ScenePair> {
        let p = SceneParams {
            n_points: 256,
            beams: 16,
            azimuth_steps: 180,
            ..SceneParams::default()
        };
        synth_dataset(seed, n, &p).unwrap()
    }

    #[test]
    fn defaults_follow_the_schedule_table() {
        let p = TrainConfig::pretrain();
        assert_eq!((p.epochs, p.learning_rate, p.step_size, p.gamma), (80, 1e-3, 15, 0.5));
        let f = TrainConfig::finetune();
        assert_eq!((f.epochs, f.learning_rate, f.step_size, f.gamma), (20, 1e-3, 4, 0.8));
        assert_eq!(f.batch_size, 1);
    }

    #[test]
    fn kv_roundtrip_and_validation() {
        let t = TrainConfig {
            snr_mode: SnrMode::Uniform(-2.0, 12.0),
            channel: ChannelKind::Rayleigh,
            seed: 9,
            freeze_codec: true,
            ..TrainConfig::finetune()
        };
        let mut kv = KvConfig::new();
        t.to_kv(&mut kv);
        assert_eq!(TrainConfig::from_kv(&kv).unwrap(), t);
        let mut only_stage = KvConfig::new();
        only_stage.set("stage", "finetune");
        assert_eq!(TrainConfig::from_kv(&only_stage).unwrap(), TrainConfig::finetune());
        kv.set("batch_size", 4);
        assert!(TrainConfig::from_kv(&kv).is_err());
    }

    #[test]
    fn pretrain_is_deterministic_and_never_uses_the_link() {
        let data = tiny_data(10, 3);
        let cfg = TrainConfig {
            epochs: 2,
            ..TrainConfig::pretrain()
        };
        let a = pretrain(&data, &tiny_model(), &cfg).unwrap();
        let b = pretrain(&data, &tiny_model(), &cfg).unwrap();
        assert_eq!(a.link_calls, 0);
        assert_eq!(a.log, b.log);
        assert_eq!(a.checkpoint, b.checkpoint);
        assert_eq!(a.log.len(), 2);
        assert!(a.checkpoint.params.names().all(|n| n.starts_with("feature_")));
        assert!(pretrain(&data, &tiny_model(), &TrainConfig::finetune()).is_err());
    }

    #[test]
    fn finetune_runs_every_frame_through_the_link() {
        let data = tiny_data(20, 3);
        let model = tiny_model();
        let pre = pretrain(&data, &model, &TrainConfig { epochs: 1, ..TrainConfig::pretrain() }).unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            snr_mode: SnrMode::Uniform(0.0, 10.0),
            freeze_codec: true,
            ..TrainConfig::finetune()
        };
        let out = finetune(&data, &model, &cfg, FinetuneInit::Pretrained(&pre.checkpoint)).unwrap();
        assert_eq!(out.link_calls, 6);
        for (name, t) in pre.checkpoint.params.iter() {
            assert_eq!(out.checkpoint.params.get(name), Some(t), "{name} moved while frozen");
        }
        assert!(out.checkpoint.params.names().any(|n| n.starts_with("fusion.")));
        assert_eq!(out.checkpoint.stage, "finetune");
    }

    #[test]
    fn divergence_is_reported() {
        let data = tiny_data(30, 2);
        let cfg = TrainConfig {
            epochs: 3,
            learning_rate: 1e300,
            ..TrainConfig::pretrain()
        };
        match pretrain(&data, &tiny_model(), &cfg) {
            Err(Error::Diverged { epoch, lr, .. }) => {
                assert!(epoch >= 1);
                assert_eq!(lr, 1e300);
            }
            other => panic!("expected divergence, got {:?}", other.map(|o| o.log)),
        }
    }

    #[test]
    fn evaluation_is_reproducible_from_a_saved_checkpoint() {
        let data = tiny_data(40, 2);
        let model = tiny_model();
        let params = init_model(&model, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let ck = Checkpoint::new(params, snapshot(&model, &TrainConfig::finetune()), "finetune", 0);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ckpt");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        let model_back = ModelConfig::from_kv(&back.config).unwrap();
        assert_eq!(model_back, model);
        let plan = EvalPlan::link(&[0.0, 5.0, 10.0], ChannelKind::Rayleigh, 7);
        let a = evaluate(&ck.params, &model, &data, &plan, "a").unwrap();
        let b = evaluate(&back.params, &model_back, &data, &plan, "a").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.records.len(), 6);
        let nf = evaluate(&ck.params, &model, &data, &EvalPlan::noise_free(), "nf").unwrap();
        assert_eq!(nf.records.len(), 2);
        assert!(nf.records[0].snr_db.is_infinite());
    }
}
