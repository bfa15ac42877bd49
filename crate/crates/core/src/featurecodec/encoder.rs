use rand::Rng;

use super::{repeat_index, CodecConfig, LatentRepresentation};
use crate::error::{Error, Result};
use crate::nn::{Graph, Linear, Mlp, ParamStore, Tensor, Var};
use crate::pcdata::{count_within, farthest_point_indices, knn_points, NeighborIndex, PointCloud};

/// Handles to the weights of one downsampling stage.
#[derive(Clone, Debug)]
pub struct EncoderBlock {
    pub stage: usize,
    pub c_in: usize,
    pub width: usize,
    pub c_out: usize,
    pub density: Mlp,
    pub local_pos: Mlp,
    pub local_attn: Linear,
    pub phi: Linear,
    pub psi: Linear,
    pub alpha: Linear,
    pub theta: Mlp,
    pub beta: Option<Mlp>,
    pub gamma: Mlp,
    pub fuse: Mlp,
}

fn prefix(s: usize) -> String {
    format!("feature_enc.s{s}")
}

impl EncoderBlock {
    pub fn init<R: Rng>(store: &mut ParamStore, cfg: &CodecConfig, s: usize, rng: &mut R) -> Self {
        let (c_in, d, c_out) = (cfg.stage_in(s), cfg.hidden_dims[s], cfg.stage_out(s));
        let p = prefix(s);
        EncoderBlock {
            stage: s,
            c_in,
            width: d,
            c_out,
            density: Mlp::init(store, &format!("{p}.density"), &[1, d, d], rng),
            local_pos: Mlp::init(store, &format!("{p}.local_pos"), &[3, d, d], rng),
            local_attn: Linear::init(store, &format!("{p}.local_attn"), d, d, rng),
            phi: Linear::init(store, &format!("{p}.phi"), c_in, d, rng),
            psi: Linear::init(store, &format!("{p}.psi"), c_in, d, rng),
            alpha: Linear::init(store, &format!("{p}.alpha"), c_in, d, rng),
            theta: Mlp::init(store, &format!("{p}.theta"), &[3, d, d], rng),
            beta: cfg
                .use_abs_pos
                .then(|| Mlp::init(store, &format!("{p}.beta"), &[3, d, d], rng)),
            gamma: Mlp::init(store, &format!("{p}.gamma"), &[d, d, d], rng),
            fuse: Mlp::init(store, &format!("{p}.fuse"), &[3 * d, d, c_out], rng),
        }
    }

    pub fn bind(cfg: &CodecConfig, s: usize) -> Self {
        let (c_in, d, c_out) = (cfg.stage_in(s), cfg.hidden_dims[s], cfg.stage_out(s));
        let p = prefix(s);
        EncoderBlock {
            stage: s,
            c_in,
            width: d,
            c_out,
            density: Mlp::bind(&format!("{p}.density"), &[1, d, d]),
            local_pos: Mlp::bind(&format!("{p}.local_pos"), &[3, d, d]),
            local_attn: Linear::bind(&format!("{p}.local_attn"), d, d),
            phi: Linear::bind(&format!("{p}.phi"), c_in, d),
            psi: Linear::bind(&format!("{p}.psi"), c_in, d),
            alpha: Linear::bind(&format!("{p}.alpha"), c_in, d),
            theta: Mlp::bind(&format!("{p}.theta"), &[3, d, d]),
            beta: cfg.use_abs_pos.then(|| Mlp::bind(&format!("{p}.beta"), &[3, d, d])),
            gamma: Mlp::bind(&format!("{p}.gamma"), &[d, d, d]),
            fuse: Mlp::bind(&format!("{p}.fuse"), &[3 * d, d, c_out]),
        }
    }
}

fn rows_tensor(rows: &[[f64; 3]], scale: f64) -> Tensor {
    Tensor::from_vec(
        rows.len(),
        3,
        rows.iter().flatten().map(|v| v / scale).collect(),
    )
}

/// Perceptron image of the (log-normalized) number of `support` points within
/// `radius` of every parent.
pub fn density_embedding(
    g: &mut Graph,
    block: &EncoderBlock,
    parents: &[[f64; 3]],
    support: &[[f64; 3]],
    radius: f64,
    k: usize,
) -> Var {
    let norm = (1.0 + k as f64).ln();
    let counts: Vec<f64> = count_within(support, parents, radius)
        .into_iter()
        .map(|c| (1.0 + c as f64).ln() / norm)
        .collect();
    let x = g.constant(Tensor::column(&counts));
    block.density.forward(g, x)
}

/// Attention-pooled embedding of neighbor offsets `(p_j - p_i) / radius`.
/// Returns the pooled `M x D` embedding and the `M k x D` pooling weights.
pub fn local_position_embedding(
    g: &mut Graph,
    block: &EncoderBlock,
    parents: &[[f64; 3]],
    support: &[[f64; 3]],
    neighbors: &NeighborIndex,
    radius: f64,
) -> Result<(Var, Var)> {
    check_neighbors(neighbors, parents.len(), support.len())?;
    let k = neighbors.k;
    let mut off = Vec::with_capacity(parents.len() * k * 3);
    for (i, p) in parents.iter().enumerate() {
        for &j in neighbors.row(i) {
            let q = support[j];
            off.extend_from_slice(&[(q[0] - p[0]) / radius, (q[1] - p[1]) / radius, (q[2] - p[2]) / radius]);
        }
    }
    let x = g.constant(Tensor::from_vec(parents.len() * k, 3, off));
    let e = block.local_pos.forward(g, x);
    let score = block.local_attn.forward(g, e);
    let w = g.group_softmax(score, k);
    let we = g.mul(w, e);
    Ok((g.group_sum(we, k), w))
}

fn check_neighbors(nb: &NeighborIndex, queries: usize, support: usize) -> Result<()> {
    if nb.k == 0 || nb.queries() != queries {
        return Err(Error::invalid(format!(
            "neighbor table has {} rows for {queries} queries",
            nb.queries()
        )));
    }
    if let Some(bad) = nb.indices.iter().find(|&&j| j >= support) {
        return Err(Error::invalid(format!(
            "neighbor index {bad} out of range for {support} support points"
        )));
    }
    Ok(())
}

/// Perceptron image of coordinates divided by `coord_scale`.
pub fn absolute_position_encoding(g: &mut Graph, block: &EncoderBlock, p: &[[f64; 3]], coord_scale: f64) -> Result<Var> {
    let beta = block
        .beta
        .as_ref()
        .ok_or_else(|| Error::invalid("block has no absolute position encoder"))?;
    let x = g.constant(rows_tensor(p, coord_scale));
    Ok(beta.forward(g, x))
}

pub struct TransformerInputs<'a> {
    pub queries: &'a [[f64; 3]],
    pub query_feats: Var,
    pub support_pts: &'a [[f64; 3]],
    pub support_feats: Var,
    pub neighbors: &'a NeighborIndex,
    /// Relative offsets are divided by this before the position encoder.
    pub rel_scale: f64,
    pub coord_scale: f64,
}

/// Vector attention over each query's neighbors:
/// `y_i = sum_j softmax_j(gamma(phi(f_j) - psi(f_i) + delta)) * (alpha(f_j) + delta)`
/// with `delta = theta(p_i - p_j)`, plus `beta(p_i)` when `use_abs_pos`.
/// Returns `y` (`M x D`) and the per-channel weights (`M k x D`).
pub fn point_transformer(
    g: &mut Graph,
    block: &EncoderBlock,
    inp: &TransformerInputs,
    use_abs_pos: bool,
) -> Result<(Var, Var)> {
    let m = inp.queries.len();
    check_neighbors(inp.neighbors, m, inp.support_pts.len())?;
    if g.shape(inp.support_feats).0 != inp.support_pts.len() || g.shape(inp.query_feats).0 != m {
        return Err(Error::invalid("feature rows do not match point counts"));
    }
    let k = inp.neighbors.k;
    let rep = repeat_index(m, k);

    let mut rel = Vec::with_capacity(m * k * 3);
    for (i, p) in inp.queries.iter().enumerate() {
        for &j in inp.neighbors.row(i) {
            let q = inp.support_pts[j];
            let s = inp.rel_scale;
            rel.extend_from_slice(&[(p[0] - q[0]) / s, (p[1] - q[1]) / s, (p[2] - q[2]) / s]);
        }
    }
    let rel = g.constant(Tensor::from_vec(m * k, 3, rel));
    let mut delta = block.theta.forward(g, rel);
    if use_abs_pos {
        let b = absolute_position_encoding(g, block, inp.queries, inp.coord_scale)?;
        let b_rep = g.gather(b, rep.clone());
        delta = g.add(delta, b_rep);
    }

    let phi = block.phi.forward(g, inp.support_feats);
    let alpha = block.alpha.forward(g, inp.support_feats);
    let psi = block.psi.forward(g, inp.query_feats);
    let nb = inp.neighbors.indices.clone();
    let phi_j = g.gather(phi, nb.clone());
    let alpha_j = g.gather(alpha, nb);
    let psi_i = g.gather(psi, rep);

    let a = g.sub(phi_j, psi_i);
    let a = g.add(a, delta);
    let logits = block.gamma.forward(g, a);
    let w = g.group_softmax(logits, k);
    let v = g.add(alpha_j, delta);
    let wv = g.mul(w, v);
    Ok((g.group_sum(wv, k), w))
}

/// Everything the encoder produced for one cloud.
pub struct EncoderTrace {
    /// Point sets of every level: the input first, the latent anchors last.
    pub levels: Vec<Vec<[f64; 3]>>,
    /// Latent features, `N_s x C`.
    pub feats: Var,
    /// Attention weights of each stage's point transformer.
    pub attention: Vec<Var>,
}

impl EncoderTrace {
    pub fn coords(&self) -> &[[f64; 3]] {
        self.levels.last().expect("at least one level")
    }
}

/// Builds the encoder on `g`, whose parameter store must hold `feature_enc.*`.
pub fn encode_graph(g: &mut Graph, points: &[[f64; 3]], cfg: &CodecConfig) -> Result<EncoderTrace> {
    cfg.validate()?;
    cfg.latent_points(points.len())?;
    let mut levels = vec![points.to_vec()];
    let mut feats = g.constant(rows_tensor(points, cfg.coord_scale));
    let mut attention = Vec::with_capacity(cfg.n_stages);
    for s in 0..cfg.n_stages {
        let block = EncoderBlock::bind(cfg, s);
        let support = levels.last().unwrap().clone();
        let m = support.len() / cfg.downsample_factor;
        let picks = farthest_point_indices(&support, m, 0)?;
        let parents: Vec<[f64; 3]> = picks.iter().map(|&i| support[i]).collect();
        let k = cfg.k_neighbors.min(support.len());
        let nb = knn_points(&support, &parents, k)?;
        let radius = cfg.density_radius(s);

        let dens = density_embedding(g, &block, &parents, &support, radius, cfg.k_neighbors);
        let (local, _) = local_position_embedding(g, &block, &parents, &support, &nb, radius)?;
        let query_feats = g.gather(feats, picks);
        let inp = TransformerInputs {
            queries: &parents,
            query_feats,
            support_pts: &support,
            support_feats: feats,
            neighbors: &nb,
            rel_scale: radius,
            coord_scale: cfg.coord_scale,
        };
        let (pt, w) = point_transformer(g, &block, &inp, cfg.use_abs_pos)?;
        attention.push(w);
        let cat = g.concat(&[dens, local, pt]);
        feats = block.fuse.forward(g, cat);
        levels.push(parents);
    }
    Ok(EncoderTrace {
        levels,
        feats,
        attention,
    })
}

/// Inference-only encoder.
pub fn encode(pc: &PointCloud, cfg: &CodecConfig, params: &ParamStore) -> Result<LatentRepresentation> {
    let mut g = Graph::with_params(params);
    let t = encode_graph(&mut g, pc.points(), cfg)?;
    Ok(LatentRepresentation {
        coords: t.coords().to_vec(),
        feats: g.value(t.feats).data.clone(),
        dim: cfg.bottleneck_dim,
    })
}
