use rand::Rng;

use super::{repeat_index, CodecConfig, LatentRepresentation};
use crate::error::{Error, Result};
use crate::nn::{Graph, Linear, Mlp, ParamStore, Tensor, Var};
use crate::pcdata::PointCloud;

/// Handles to the weights of one upsampling block.
#[derive(Clone, Debug)]
pub struct DecoderBlock {
    pub index: usize,
    pub c_in: usize,
    pub width: usize,
    pub k_max: usize,
    pub pre: Mlp,
    /// Per-candidate feature transforms, stacked: `W -> K_max * W`.
    pub subconv: Linear,
    pub offset: Linear,
    pub radius: Linear,
    pub count: Linear,
}

fn dims(cfg: &CodecConfig, t: usize) -> (usize, usize) {
    let n = cfg.n_stages;
    let c_in = if t == 0 {
        cfg.bottleneck_dim
    } else {
        cfg.hidden_dims[n - t]
    };
    (c_in, cfg.hidden_dims[n - 1 - t])
}

/// Initial logit lead of the `K = f_s` class.
const COUNT_BIAS: f64 = 3.0;
const COUNT_WEIGHT_SCALE: f64 = 0.1;

impl DecoderBlock {
    pub fn init<R: Rng>(store: &mut ParamStore, cfg: &CodecConfig, t: usize, rng: &mut R) -> Self {
        let (c_in, w) = dims(cfg, t);
        let p = format!("feature_dec.b{t}");
        Mlp::init(store, &format!("{p}.pre"), &[c_in + 3, w, w], rng);
        Linear::init(store, &format!("{p}.subconv"), w, cfg.k_max * w, rng);
        Linear::init(store, &format!("{p}.offset"), w, cfg.k_max * 3, rng);
        Linear::init(store, &format!("{p}.radius"), w, 1, rng);
        let count = Linear::init(store, &format!("{p}.count"), w, cfg.k_max, rng);
        let wt = store.get_mut(&count.weight_name()).unwrap();
        wt.data.iter_mut().for_each(|v| *v *= COUNT_WEIGHT_SCALE);
        let b = store.get_mut(&count.bias_name()).unwrap();
        b.data.iter_mut().for_each(|v| *v = 0.0);
        b.data[cfg.downsample_factor - 1] = COUNT_BIAS;
        Self::bind(cfg, t)
    }

    pub fn bind(cfg: &CodecConfig, t: usize) -> Self {
        let (c_in, w) = dims(cfg, t);
        let p = format!("feature_dec.b{t}");
        DecoderBlock {
            index: t,
            c_in,
            width: w,
            k_max: cfg.k_max,
            pre: Mlp::bind(&format!("{p}.pre"), &[c_in + 3, w, w]),
            subconv: Linear::bind(&format!("{p}.subconv"), w, cfg.k_max * w),
            offset: Linear::bind(&format!("{p}.offset"), w, cfg.k_max * 3),
            radius: Linear::bind(&format!("{p}.radius"), w, 1),
            count: Linear::bind(&format!("{p}.count"), w, cfg.k_max),
        }
    }
}

/// Graph nodes of one upsampling block.
pub struct BlockNodes {
    /// `M K_max x 3` candidate coordinates.
    pub candidates: Var,
    /// `M K_max x W` candidate features.
    pub candidate_feats: Var,
    /// `M x 1` radii.
    pub radius: Var,
    /// `M x K_max` count logits.
    pub count_logits: Var,
    /// Chosen child count per parent.
    pub k: Vec<usize>,
    pub children: Var,
    pub child_feats: Var,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DecodeOptions {
    /// Use this child count for every parent instead of the predicted one.
    pub force_k: Option<usize>,
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

fn block_forward(
    g: &mut Graph,
    block: &DecoderBlock,
    cfg: &CodecConfig,
    parents: Var,
    feats: Var,
    opts: &DecodeOptions,
) -> Result<BlockNodes> {
    let m = g.shape(parents).0;
    let km = block.k_max;
    if let Some(k) = opts.force_k {
        if k == 0 || k > km {
            return Err(Error::invalid(format!("forced child count {k} outside 1..={km}")));
        }
    }
    let pn = g.scale(parents, 1.0 / cfg.coord_scale);
    let x = g.concat(&[feats, pn]);
    let h = block.pre.forward(g, x);

    let sub = block.subconv.forward(g, h);
    let sub = g.reshape(sub, m * km, block.width);
    let candidate_feats = g.relu(sub);

    let raw = block.offset.forward(g, h);
    let raw = g.tanh(raw);
    let raw = g.reshape(raw, m * km, 3);
    let r = block.radius.forward(g, h);
    let r = g.sigmoid(r);
    let radius = g.scale(r, cfg.r_max);
    let rep = repeat_index(m, km);
    let r_rep = g.gather(radius, rep.clone());
    let r_rep = g.scale(r_rep, 1.0 / 3f64.sqrt());
    let off = g.mul_col(raw, r_rep);
    let base = g.gather(parents, rep);
    let candidates = g.add(base, off);

    let count_logits = block.count.forward(g, h);
    let lv = g.value(count_logits);
    let k: Vec<usize> = (0..m)
        .map(|i| opts.force_k.unwrap_or_else(|| argmax(lv.row(i)) + 1))
        .collect();
    let sel: Vec<usize> = k
        .iter()
        .enumerate()
        .flat_map(|(i, &ki)| (0..ki).map(move |c| i * km + c))
        .collect();
    let children = g.gather(candidates, sel.clone());
    let child_feats = g.gather(candidate_feats, sel);
    Ok(BlockNodes {
        candidates,
        candidate_feats,
        radius,
        count_logits,
        k,
        children,
        child_feats,
    })
}

/// Per-block record of a decoder run.
pub struct DecoderStage {
    /// Parent coordinates at the block input.
    pub parents: Vec<[f64; 3]>,
    pub nodes: BlockNodes,
}

pub struct DecoderTrace {
    pub stages: Vec<DecoderStage>,
    /// Final reconstruction, rows are points.
    pub points: Var,
}

/// Builds the decoder on `g`, whose parameter store must hold `feature_dec.*`.
pub fn decode_graph(
    g: &mut Graph,
    coords: &[[f64; 3]],
    feats: Var,
    cfg: &CodecConfig,
    opts: &DecodeOptions,
) -> Result<DecoderTrace> {
    cfg.validate()?;
    if g.shape(feats) != (coords.len(), cfg.bottleneck_dim) {
        return Err(Error::invalid(format!(
            "latent features are {:?}, expected {} x {}",
            g.shape(feats),
            coords.len(),
            cfg.bottleneck_dim
        )));
    }
    let mut parents = g.constant(Tensor::from_vec(
        coords.len(),
        3,
        coords.iter().flatten().copied().collect(),
    ));
    let mut feats = feats;
    let mut stages = Vec::with_capacity(cfg.n_stages);
    for t in 0..cfg.n_stages {
        let block = DecoderBlock::bind(cfg, t);
        let parent_pts = g.value(parents).to_points();
        let nodes = block_forward(g, &block, cfg, parents, feats, opts)?;
        parents = nodes.children;
        feats = nodes.child_feats;
        stages.push(DecoderStage {
            parents: parent_pts,
            nodes,
        });
    }
    Ok(DecoderTrace {
        stages,
        points: parents,
    })
}

/// Inference-only decoder.
pub fn decode(latent: &LatentRepresentation, cfg: &CodecConfig, params: &ParamStore) -> Result<PointCloud> {
    let mut g = Graph::with_params(params);
    let f = g.constant(Tensor::from_vec(latent.len(), latent.dim, latent.feats.clone()));
    let t = decode_graph(&mut g, &latent.coords, f, cfg, &DecodeOptions::default())?;
    PointCloud::new(g.value(t.points).to_points())
}

/// First upsampling block evaluated on a latent, before child selection.
#[derive(Clone, Debug, PartialEq)]
pub struct UpsampleOutput {
    /// Per parent, `K_max` candidate coordinates.
    pub points: Vec<Vec<[f64; 3]>>,
    /// Per parent, `K_max` candidate feature rows of the block width.
    pub feats: Vec<Vec<Vec<f64>>>,
    pub k: Vec<usize>,
    pub r: Vec<f64>,
}

impl UpsampleOutput {
    /// Parent plus its first `K_i` candidates.
    pub fn selected(&self) -> Vec<[f64; 3]> {
        self.points
            .iter()
            .zip(&self.k)
            .flat_map(|(c, &k)| c[..k].iter().copied())
            .collect()
    }
}

pub fn upsample_block(latent: &LatentRepresentation, cfg: &CodecConfig, params: &ParamStore) -> Result<UpsampleOutput> {
    let mut g = Graph::with_params(params);
    let block = DecoderBlock::bind(cfg, 0);
    let p = g.constant(Tensor::from_vec(latent.len(), 3, latent.coords.iter().flatten().copied().collect()));
    let f = g.constant(Tensor::from_vec(latent.len(), latent.dim, latent.feats.clone()));
    let nodes = block_forward(&mut g, &block, cfg, p, f, &DecodeOptions::default())?;
    let km = cfg.k_max;
    let cand = g.value(nodes.candidates).to_points();
    let cf = g.value(nodes.candidate_feats);
    Ok(UpsampleOutput {
        points: cand.chunks(km).map(<[_]>::to_vec).collect(),
        feats: (0..latent.len())
            .map(|i| (0..km).map(|c| cf.row(i * km + c).to_vec()).collect())
            .collect(),
        k: nodes.k,
        r: g.value(nodes.radius).data.clone(),
    })
}
