use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

use lpcft::checkpoint::Checkpoint;
use lpcft::config::KvConfig;
use lpcft::link::{ChannelKind, LinkConfig};
use lpcft::metrics::{evaluate_frame, ExperimentReport, MetricOptions, MetricRecord};
use lpcft::pcdata::{load_point_cloud, nearest_indices, save_point_cloud, synth_dataset, CloudFormat, SceneParams, ScenePair};
use lpcft::pipeline::{reconstruct, LinkUse, ModelConfig};
use lpcft::trainer::{self, frame_rng, AblationAxis, AblationPlan, EvalPlan, FinetuneInit, TrainConfig};
use lpcft_baseline::{baseline_sweep, depth_for_bpp, BaselineConfig, Bbox, CodeRate};

use crate::args::{Cli, Command, GlobalArgs, LinkArgs};
use crate::dataset::{load_dataset, save_dataset};
use crate::manifest::{now_unix, RunManifest};
use crate::plot::plot_csvs;
use crate::records::{write_log, write_metrics, write_summary};
use crate::UsageError;

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const LOG_FILE: &str = "train_log.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Config file, then `--set` pairs, then `--seed`.
pub fn effective_config(g: &GlobalArgs) -> Result<KvConfig> {
    let mut cfg = match &g.config {
        Some(p) => {
            if !p.is_file() {
                return Err(usage(format!("config file {} not found", p.display())));
            }
            KvConfig::load(p)?
        }
        None => KvConfig::new(),
    };
    for kv in &g.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| usage(format!("--set expects KEY=VALUE, got '{kv}'")))?;
        cfg.set(k.trim(), v.trim());
    }
    if let Some(s) = g.seed {
        cfg.set("seed", s);
    }
    Ok(cfg)
}

fn prepare_out(out: &Path, force: bool) -> Result<()> {
    if out.exists() {
        let non_empty = std::fs::read_dir(out)?.next().is_some();
        if non_empty && !force {
            return Err(usage(format!("{} is not empty; pass --force to reuse it", out.display())));
        }
    }
    std::fs::create_dir_all(out)?;
    Ok(())
}

fn require(path: &Path, what: &str) -> Result<()> {
    if !path.exists() {
        return Err(usage(format!("{what} {} not found", path.display())));
    }
    Ok(())
}

fn channel(s: &str) -> Result<ChannelKind> {
    s.parse().map_err(|e: lpcft::Error| usage(e.to_string()))
}

fn stage_view(cfg: &KvConfig, stage: &str) -> KvConfig {
    let mut v = cfg.scoped(stage);
    v.set("stage", stage);
    v
}

fn load_checkpoint(path: &Path) -> Result<(Checkpoint, ModelConfig)> {
    require(path, "checkpoint")?;
    let ck = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
    let model = ModelConfig::from_kv(&ck.config)?;
    let model = if ck.stage == "pretrain" { model.frozen_stage_one() } else { model };
    Ok((ck, model))
}

fn cloud_format(path: &Path) -> Result<CloudFormat> {
    CloudFormat::from_extension(path).ok_or_else(|| usage(format!("unknown cloud extension: {}", path.display())))
}

fn write_sweep(out: &Path, reports: &[&ExperimentReport], overlay: Option<&Path>) -> Result<()> {
    let csv = out.join(METRICS_FILE);
    write_metrics(&csv, reports)?;
    write_summary(&out.join(SUMMARY_FILE), reports)?;
    plot_csvs(&[csv.clone()], out, "")?;
    if let Some(o) = overlay {
        plot_csvs(&[csv, o.to_path_buf()], out, "overlay_")?;
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    let cfg = effective_config(g)?;
    let seed: u64 = cfg.get_or("seed", 0)?;
    let started = now_unix();
    let name = match &cli.command {
        Command::Synth { .. } => "synth",
        Command::Train { .. } => "train",
        Command::Finetune { .. } => "finetune",
        Command::Eval { .. } => "eval",
        Command::Baseline { .. } => "baseline",
        Command::Transmit { .. } => "transmit",
        Command::Ablate { .. } => "ablate",
        Command::Plot { .. } => "plot",
    };
    for input in inputs(&cli.command) {
        require(&input, "input")?;
    }
    prepare_out(&g.out, g.force)?;
    let out = g.out.as_path();
    match &cli.command {
        Command::Synth { count } => cmd_synth(&cfg, *count, out)?,
        Command::Train { data } => cmd_train(&cfg, data, out)?,
        Command::Finetune { data, init, .. } => cmd_finetune(&cfg, data, init.as_deref(), out)?,
        Command::Eval { checkpoint, data, link, noise_free } => cmd_eval(&cfg, checkpoint, data, link, *noise_free, seed, out)?,
        Command::Baseline { data, depth, target_bpp, rate, link, overlay } => {
            let rate: CodeRate = rate.parse().map_err(|e: lpcft::Error| usage(e.to_string()))?;
            cmd_baseline(&cfg, data, *depth, *target_bpp, rate, link, overlay.as_deref(), seed, out)?
        }
        Command::Transmit { checkpoint, tx, rx, snr, channel: ch, no_link } => {
            let link = (!no_link).then(|| (*snr, ch.as_str()));
            cmd_transmit(checkpoint, tx, rx.as_deref(), link, seed, out)?
        }
        Command::Ablate { data, test, axes, pretrained, link } => cmd_ablate(&cfg, data, test, axes, pretrained.as_deref(), link, seed, out)?,
        Command::Plot { csv } => {
            plot_csvs(csv, out, "")?;
        }
    }
    RunManifest::new(name, g.config.as_deref(), &cfg, seed, out, started).write(out)
}

fn inputs(c: &Command) -> Vec<PathBuf> {
    match c {
        Command::Synth { .. } => vec![],
        Command::Train { data } => vec![data.clone()],
        Command::Finetune { data, init, .. } => std::iter::once(data.clone()).chain(init.clone()).collect(),
        Command::Eval { checkpoint, data, .. } => vec![checkpoint.clone(), data.clone()],
        Command::Baseline { data, overlay, .. } => std::iter::once(data.clone()).chain(overlay.clone()).collect(),
        Command::Transmit { checkpoint, tx, rx, .. } => [checkpoint.clone(), tx.clone()].into_iter().chain(rx.clone()).collect(),
        Command::Ablate { data, test, pretrained, .. } => [data.clone(), test.clone()].into_iter().chain(pretrained.clone()).collect(),
        Command::Plot { csv } => csv.clone(),
    }
}

pub fn cmd_synth(cfg: &KvConfig, count: Option<usize>, out: &Path) -> Result<()> {
    let (params, seed) = SceneParams::from_kv(cfg)?;
    let count = match count {
        Some(c) => c,
        None => cfg.get_or("count", 200)?,
    };
    let pairs = synth_dataset(seed, count, &params)?;
    save_dataset(out, &pairs)?;
    Ok(())
}

pub fn cmd_train(cfg: &KvConfig, data: &Path, out: &Path) -> Result<()> {
    let view = stage_view(cfg, "pretrain");
    let tc = TrainConfig::from_kv(&view)?;
    let model = ModelConfig::from_kv(&view)?;
    let pairs = load_dataset(data)?;
    let res = trainer::pretrain(&pairs, &model, &tc)?;
    res.checkpoint.save(out.join(CHECKPOINT_FILE))?;
    write_log(&out.join(LOG_FILE), &res.log)
}

pub fn cmd_finetune(cfg: &KvConfig, data: &Path, init: Option<&Path>, out: &Path) -> Result<()> {
    let view = stage_view(cfg, "finetune");
    let tc = TrainConfig::from_kv(&view)?;
    let pairs = load_dataset(data)?;
    let res = match init {
        Some(p) => {
            let (ck, _) = load_checkpoint(p)?;
            let mut merged = ck.config.clone();
            merged.merge(&view);
            let model = ModelConfig::from_kv(&merged)?;
            trainer::finetune(&pairs, &model, &tc, FinetuneInit::Pretrained(&ck))?
        }
        None => trainer::finetune(&pairs, &ModelConfig::from_kv(&view)?, &tc, FinetuneInit::Scratch)?,
    };
    res.checkpoint.save(out.join(CHECKPOINT_FILE))?;
    write_log(&out.join(LOG_FILE), &res.log)
}

pub fn cmd_eval(cfg: &KvConfig, checkpoint: &Path, data: &Path, link: &LinkArgs, noise_free: bool, seed: u64, out: &Path) -> Result<()> {
    let (ck, model) = load_checkpoint(checkpoint)?;
    let pairs = load_dataset(data)?;
    let plan = if noise_free {
        EvalPlan::noise_free()
    } else {
        EvalPlan::link(&link.snr, channel(&link.channel)?, seed)
    };
    let label = cfg.raw("label").unwrap_or("lpcft");
    let rep = trainer::evaluate(&ck.params, &model, &pairs, &plan, label)?;
    write_sweep(out, &[&rep], None)
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_baseline(
    cfg: &KvConfig,
    data: &Path,
    depth: Option<u8>,
    target_bpp: f64,
    rate: CodeRate,
    link: &LinkArgs,
    overlay: Option<&Path>,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let clouds: Vec<_> = load_dataset(data)?.into_iter().map(|p| p.tx).collect();
    let bbox = Bbox::crop_box();
    let depth = match depth {
        Some(d) => d,
        None => depth_for_bpp(&clouds, &bbox, target_bpp)?,
    };
    let link_cfg = LinkConfig {
        channel: channel(&link.channel)?,
        ..LinkConfig::from_kv(cfg)?
    };
    let bc = BaselineConfig {
        code_seed: cfg.get_or("ldpc_seed", 0)?,
        ..BaselineConfig::new(depth, rate, link_cfg)
    };
    let label = cfg.raw("label").unwrap_or("baseline");
    let rep = baseline_sweep(&clouds, &bc, &link.snr, seed, label)?;
    write_sweep(out, &[&rep], overlay)
}

/// `link` is `(snr_db, channel)`, or `None` for the codec roundtrip alone.
pub fn cmd_transmit(checkpoint: &Path, tx: &Path, rx: Option<&Path>, link: Option<(f64, &str)>, seed: u64, out: &Path) -> Result<()> {
    let (ck, model) = load_checkpoint(checkpoint)?;
    let tx_pc = load_point_cloud(tx, cloud_format(tx)?)?;
    let needs_rx = model.use_fusion && link.is_some();
    let (rx_pc, tx_to_rx) = match rx {
        Some(p) => {
            let rx_pc = load_point_cloud(p, cloud_format(p)?)?;
            let (Some(tp), Some(rp)) = (tx_pc.sensor_pose, rx_pc.sensor_pose) else {
                return Err(usage("both clouds need a sensor_pose to relate their frames"));
            };
            (rx_pc, rp.inverse() * tp)
        }
        None if needs_rx => return Err(usage("this model fuses the receiver's view: pass --rx")),
        None => (tx_pc.clone(), Default::default()),
    };
    let pair = ScenePair {
        tx: tx_pc,
        rx: rx_pc,
        tx_to_rx,
        separation: tx_to_rx.translation.vector.norm(),
    };
    let mut rng = frame_rng(seed, 0);
    let use_link = match link {
        Some((snr, ch)) => Some(LinkUse {
            cfg: LinkConfig {
                snr_db: snr,
                channel: channel(ch)?,
                ..model.link.clone()
            },
            rng: &mut rng,
        }),
        None => None,
    };
    let snr = link.map(|l| l.0).unwrap_or(f64::INFINITY);
    let m = if use_link.is_some() { model.clone() } else { ModelConfig { use_fusion: false, ..model.clone() } };
    let (recon, _) = reconstruct(&ck.params, &m, &pair, use_link)?;
    let (_, d2) = nearest_indices(pair.tx.points(), recon.points());
    let nn_error: Vec<f32> = d2.iter().map(|d| d.sqrt() as f32).collect();
    save_point_cloud(out.join("recon.ply"), &recon, CloudFormat::PlyBinaryLe, &[("nn_error", &nn_error)])?;
    let (cd, d1, d2p) = evaluate_frame(&pair.tx, &recon, &MetricOptions::default())?;
    let rep = ExperimentReport {
        label: "transmit".into(),
        records: vec![MetricRecord {
            frame_id: pair.tx.frame_id.clone(),
            snr_db: snr,
            bpp: model.bpp(pair.tx.len())?,
            cd,
            d1_psnr: d1,
            d2_psnr: d2p,
            failed: false,
        }],
    };
    write_metrics(&out.join(METRICS_FILE), &[&rep])
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_ablate(
    cfg: &KvConfig,
    data: &Path,
    test: &Path,
    axes: &[String],
    pretrained: Option<&Path>,
    link: &LinkArgs,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let axes: Vec<AblationAxis> = axes
        .iter()
        .map(|a| a.parse().map_err(|e: lpcft::Error| usage(e.to_string())))
        .collect::<Result<_>>()?;
    let train = load_dataset(data)?;
    let test = load_dataset(test)?;
    let pre = pretrained.map(load_checkpoint).transpose()?;
    let plan = AblationPlan {
        base: ModelConfig::from_kv(cfg)?,
        pretrain: TrainConfig::from_kv(&stage_view(cfg, "pretrain"))?,
        finetune: TrainConfig::from_kv(&stage_view(cfg, "finetune"))?,
        train: &train,
        test: &test,
        eval: EvalPlan::link(&link.snr, channel(&link.channel)?, seed),
    };
    let results = trainer::run_ablation(&plan, &axes, pre.as_ref().map(|(c, _)| c))?;

    let mut w = csv::Writer::from_path(out.join("ablation.csv"))?;
    w.write_record(["variant", "snr_db", "mean_cd", "median_cd", "mean_d1_psnr", "mean_d2_psnr"])?;
    for r in &results {
        for s in r.noise_free.summary().iter().chain(r.report.summary().iter()) {
            w.write_record([
                r.label.clone(),
                s.snr_db.to_string(),
                s.mean_cd.to_string(),
                s.median_cd.to_string(),
                s.mean_d1_psnr.to_string(),
                s.mean_d2_psnr.to_string(),
            ])?;
        }
        write_log(&out.join(format!("train_log_{}.csv", r.label)), &r.log)?;
    }
    w.flush()?;
    let reports: Vec<&ExperimentReport> = results.iter().map(|r| &r.report).collect();
    write_sweep(out, &reports, None)
}
