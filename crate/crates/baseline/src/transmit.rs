use rand::RngCore;

use lpcft::link::{apply_channel, constellation, modulate, zf_equalize, BitFrame, LinkConfig, Modulation, SymbolFrame};
use lpcft::metrics::{evaluate_frame, ExperimentReport, MetricOptions, MetricRecord};
use lpcft::pcdata::PointCloud;
use lpcft::trainer::frame_rng;
use lpcft::Result;

use crate::ldpc::{CodeRate, LdpcCode, DEFAULT_N};
use crate::octree::{octree_decode, octree_decode_prefix, octree_encode, Bbox, OctreeCode};

const LLR_CAP: f64 = 40.0;

/// Settings of the separate-coding reference.
#[derive(Clone, Debug)]
pub struct BaselineConfig {
    pub depth: u8,
    pub rate: CodeRate,
    /// Modulation, channel and SNR; the quantizer width is unused here.
    pub link: LinkConfig,
    pub bbox: Bbox,
    pub code_seed: u64,
    pub metrics: MetricOptions,
}

impl BaselineConfig {
    pub fn new(depth: u8, rate: CodeRate, link: LinkConfig) -> Self {
        BaselineConfig {
            depth,
            rate,
            link,
            bbox: Bbox::crop_box(),
            code_seed: 0,
            metrics: MetricOptions::default(),
        }
    }

    pub fn code(&self) -> Result<LdpcCode> {
        LdpcCode::new(DEFAULT_N, self.rate, self.code_seed)
    }
}

/// One transmitted frame.
#[derive(Clone, Debug)]
pub struct BaselineFrame {
    pub recon: PointCloud,
    pub record: MetricRecord,
    pub blocks: usize,
    /// Set when an LDPC block failed to converge or the stream did not parse.
    pub failed: bool,
    /// Octree level of the fallback reconstruction on failure.
    pub fallback_level: Option<u8>,
    /// Channel bits per input point: error-free prefix plus coded blocks.
    pub transmitted_bpp: f64,
}

/// Exact per-bit LLRs (`ln P(0)/P(1)`) of equalized symbols whose residual
/// noise has variance `noise_var`. Zero noise gives capped hard decisions;
/// infinite noise gives zeros.
pub fn llrs(eq: &SymbolFrame, noise_var: f64, m: Modulation) -> Vec<f64> {
    let table = constellation(m);
    let bps = m.bits_per_symbol();
    let mut out = Vec::with_capacity(eq.len() * bps);
    for y in &eq.symbols {
        if !noise_var.is_finite() {
            out.extend(std::iter::repeat(0.0).take(bps));
            continue;
        }
        let metric: Vec<f64> = table.iter().map(|(_, s)| -(y - s).norm_sqr()).collect();
        for i in 0..bps {
            let best = |bit: u8| {
                table
                    .iter()
                    .zip(&metric)
                    .filter(|((b, _), _)| b[i] == bit)
                    .map(|(_, &d)| d)
                    .fold(f64::NEG_INFINITY, f64::max)
            };
            let llr = if noise_var == 0.0 {
                (best(0) - best(1)).signum() * LLR_CAP
            } else {
                let lse = |bit: u8| {
                    let top = best(bit);
                    let s: f64 = table
                        .iter()
                        .zip(&metric)
                        .filter(|((b, _), _)| b[i] == bit)
                        .map(|(_, &d)| ((d - top) / noise_var).exp())
                        .sum();
                    top / noise_var + s.ln()
                };
                lse(0) - lse(1)
            };
            out.push(llr.clamp(-LLR_CAP, LLR_CAP));
        }
    }
    out
}

fn unpack(bytes: &[u8]) -> Vec<u8> {
    bytes.iter().flat_map(|b| (0..8).rev().map(move |k| (b >> k) & 1)).collect()
}

fn pack(bits: &[u8]) -> Vec<u8> {
    bits.chunks(8)
        .map(|c| c.iter().enumerate().fold(0u8, |acc, (i, &b)| acc | (b << (7 - i))))
        .collect()
}

/// Octree coding with the first eighth of the occupancy bits delivered
/// error-free and the rest LDPC-protected over the link. A frame whose
/// blocks do not all converge, or whose stream does not parse, falls back to
/// the coarse octree described by the error-free prefix and is flagged.
pub fn baseline_transmit(pc: &PointCloud, cfg: &BaselineConfig, code: &LdpcCode, rng: &mut dyn RngCore) -> Result<BaselineFrame> {
    cfg.link.validate()?;
    let tree = octree_encode(pc, cfg.depth, &cfg.bbox)?;
    let bits = unpack(&tree.occupancy);
    let prefix = bits.len().div_ceil(8);
    let rest = &bits[prefix..];
    let blocks = rest.len().div_ceil(code.k);

    let mut coded = Vec::with_capacity(blocks * code.n);
    for chunk in rest.chunks(code.k) {
        let mut u = chunk.to_vec();
        u.resize(code.k, 0);
        coded.extend(code.encode(&u)?);
    }
    let symbols = modulate(&BitFrame { bits: coded }, cfg.link.modulation)?;
    let (received, real) = apply_channel(&symbols, &cfg.link, rng);
    let (eq, _) = zf_equalize(&received, real.h);
    let gain = real.h.norm_sqr();
    let eff_var = if gain > 0.0 { real.noise_var / gain } else { f64::INFINITY };
    let soft = llrs(&eq, eff_var, cfg.link.modulation);

    let mut delivered = bits[..prefix].to_vec();
    let mut failed = false;
    for b in 0..blocks {
        let out = code.decode(&soft[b * code.n..(b + 1) * code.n])?;
        if !out.converged {
            // The frame is lost once any block is; later blocks are moot.
            failed = true;
            break;
        }
        delivered.extend(out.payload);
    }

    let mut fallback_level = None;
    let recon = if failed {
        None
    } else {
        delivered.truncate(bits.len());
        let rx = OctreeCode {
            occupancy: pack(&delivered),
            ..tree.clone()
        };
        octree_decode(&rx).ok()
    };
    let recon = match recon {
        Some(r) => r,
        None => {
            failed = true;
            let (r, level) = octree_decode_prefix(&tree, prefix / 8)?;
            fallback_level = Some(level);
            r
        }
    };

    let (cd, d1, d2) = evaluate_frame(pc, &recon, &cfg.metrics)?;
    let n = pc.len() as f64;
    Ok(BaselineFrame {
        record: MetricRecord {
            frame_id: pc.frame_id.clone(),
            snr_db: cfg.link.snr_db,
            bpp: tree.occupancy_bits() as f64 / n,
            cd,
            d1_psnr: d1,
            d2_psnr: d2,
            failed,
        },
        recon,
        blocks,
        failed,
        fallback_level,
        transmitted_bpp: (prefix + blocks * code.n) as f64 / n,
    })
}

/// Every cloud at every SNR; frame `i` uses noise stream `i` of `seed`.
pub fn baseline_sweep(clouds: &[PointCloud], cfg: &BaselineConfig, snrs: &[f64], seed: u64, label: &str) -> Result<ExperimentReport> {
    let code = cfg.code()?;
    let mut report = ExperimentReport::new(label);
    for &snr in snrs {
        let c = BaselineConfig {
            link: LinkConfig { snr_db: snr, ..cfg.link.clone() },
            ..cfg.clone()
        };
        for (i, pc) in clouds.iter().enumerate() {
            let mut rng = frame_rng(seed, i);
            report.records.push(baseline_transmit(pc, &c, &code, &mut rng)?.record);
        }
    }
    Ok(report)
}

/// Depth whose mean occupancy bits per point is closest to `target_bpp`.
pub fn depth_for_bpp(clouds: &[PointCloud], bbox: &Bbox, target_bpp: f64) -> Result<u8> {
    let mut best = (f64::INFINITY, 1u8);
    for depth in 1..=16u8 {
        let mut sum = 0.0;
        for pc in clouds {
            sum += octree_encode(pc, depth, bbox)?.occupancy_bits() as f64 / pc.len() as f64;
        }
        let gap = (sum / clouds.len() as f64 - target_bpp).abs();
        if gap < best.0 {
            best = (gap, depth);
        }
    }
    Ok(best.1)
}
