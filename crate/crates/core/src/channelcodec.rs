//! Position- and SNR-conditioned self-attention over the latent anchors,
//! used as channel encoder (followed by a bounded activation) and, with its
//! own weights, as channel decoder.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::featurecodec::{repeat_index, LatentRepresentation};
use crate::nn::{Graph, Linear, Mlp, ParamStore, Tensor, Var};

/// Terminal nonlinearity of the channel encoder.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Activation {
    #[default]
    Tanh,
    HardTanh,
    None,
}

impl FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "hardtanh" => Ok(Activation::HardTanh),
            "none" => Ok(Activation::None),
            _ => Err(Error::invalid(format!("unknown activation {s:?}"))),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Tanh => "tanh",
            Activation::HardTanh => "hardtanh",
            Activation::None => "none",
        })
    }
}

pub fn nonlinear_activation(x: &[f64], kind: Activation) -> Vec<f64> {
    x.iter()
        .map(|&v| match kind {
            Activation::Tanh => v.tanh(),
            Activation::HardTanh => v.clamp(-1.0, 1.0),
            Activation::None => v,
        })
        .collect()
}

pub fn activate(g: &mut Graph, x: Var, kind: Activation) -> Var {
    match kind {
        Activation::Tanh => g.tanh(x),
        Activation::HardTanh => g.hardtanh(x),
        Activation::None => x,
    }
}

/// SNR values fed to the embedding perceptrons are clamped to this range so
/// that a noiseless (`+inf` dB) frame still has a finite conditioning input.
pub const SNR_INPUT_RANGE: (f64, f64) = (-30.0, 50.0);

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelCodecConfig {
    /// Latent feature width `C`.
    pub dim: usize,
    pub activation: Activation,
    /// When false the SNR embedding sees a constant zero.
    pub use_snr: bool,
    pub coord_scale: f64,
}

impl Default for ChannelCodecConfig {
    fn default() -> Self {
        ChannelCodecConfig {
            dim: 8,
            activation: Activation::Tanh,
            use_snr: true,
            coord_scale: 70.0,
        }
    }
}

impl ChannelCodecConfig {
    pub(crate) fn snr_input(&self, snr_db: f64) -> f64 {
        if self.use_snr {
            snr_db.clamp(SNR_INPUT_RANGE.0, SNR_INPUT_RANGE.1)
        } else {
            0.0
        }
    }
}

/// Embedding and attention weights shared by the channel codec and fusion.
#[derive(Clone, Debug)]
pub struct AttentionBlock {
    pub dim: usize,
    /// `E^p`: coordinates to `C`.
    pub pos: Mlp,
    /// `E^f`: features to `2C`.
    pub feat: Mlp,
    /// `E^sigma`: SNR in dB to `C`.
    pub snr: Mlp,
    pub query: Mlp,
    pub key: Mlp,
    /// Relative position encoder.
    pub xi: Mlp,
    /// Attention output branch.
    pub out: Linear,
}

impl AttentionBlock {
    pub fn init<R: Rng>(store: &mut ParamStore, prefix: &str, c: usize, rng: &mut R) -> Self {
        Mlp::init(store, &format!("{prefix}.pos"), &[3, c, c], rng);
        Mlp::init(store, &format!("{prefix}.feat"), &[c, 2 * c, 2 * c], rng);
        Mlp::init(store, &format!("{prefix}.snr"), &[1, c, c], rng);
        Mlp::init(store, &format!("{prefix}.query"), &[4 * c, c, c], rng);
        Mlp::init(store, &format!("{prefix}.key"), &[4 * c, c, c], rng);
        Mlp::init(store, &format!("{prefix}.xi"), &[3, c, c], rng);
        Linear::init(store, &format!("{prefix}.out"), c, c, rng);
        Self::bind(prefix, c)
    }

    pub fn bind(prefix: &str, c: usize) -> Self {
        AttentionBlock {
            dim: c,
            pos: Mlp::bind(&format!("{prefix}.pos"), &[3, c, c]),
            feat: Mlp::bind(&format!("{prefix}.feat"), &[c, 2 * c, 2 * c]),
            snr: Mlp::bind(&format!("{prefix}.snr"), &[1, c, c]),
            query: Mlp::bind(&format!("{prefix}.query"), &[4 * c, c, c]),
            key: Mlp::bind(&format!("{prefix}.key"), &[4 * c, c, c]),
            xi: Mlp::bind(&format!("{prefix}.xi"), &[3, c, c]),
            out: Linear::bind(&format!("{prefix}.out"), c, c),
        }
    }

    /// `concat(E^p(pos), E^f(f), E^sigma(snr))`, width `4C`. `pos` is already
    /// normalized; `snr_in` is broadcast to every row.
    pub fn unify(&self, g: &mut Graph, pos: &[[f64; 3]], feats: Var, snr_in: f64) -> Var {
        let n = pos.len();
        let p = g.constant(Tensor::from_vec(n, 3, pos.iter().flatten().copied().collect()));
        let ep = self.pos.forward(g, p);
        let ef = self.feat.forward(g, feats);
        let s = g.constant(Tensor::column(&vec![snr_in; n]));
        let es = self.snr.forward(g, s);
        g.concat(&[ep, ef, es])
    }
}

pub const ENCODER_PREFIX: &str = "channel_enc";
pub const DECODER_PREFIX: &str = "channel_dec";

/// `sum_j softmax_j(q_i - k_j + xi(rel_ij)) * v_j` for every query `i` over
/// all keys. `rel` holds `(p_i - p_j)` already scaled, row `i * n_k + j`.
/// Returns the pooled values (`n_q x C`) and the weights (`n_q n_k x C`).
pub(crate) fn attend(
    g: &mut Graph,
    block: &AttentionBlock,
    q: Var,
    k: Var,
    v: Var,
    rel: Tensor,
) -> (Var, Var) {
    let nq = g.shape(q).0;
    let nk = g.shape(k).0;
    let q_rep = g.gather(q, repeat_index(nq, nk));
    let tile: Vec<usize> = (0..nq).flat_map(|_| 0..nk).collect();
    let k_tile = g.gather(k, tile.clone());
    let rel = g.constant(rel);
    let xi = block.xi.forward(g, rel);
    let logits = g.sub(q_rep, k_tile);
    let logits = g.add(logits, xi);
    let w = g.group_softmax(logits, nk);
    let v_tile = g.gather(v, tile);
    let wv = g.mul(w, v_tile);
    (g.group_sum(wv, nk), w)
}

pub(crate) fn relative_offsets(a: &[[f64; 3]], b: &[[f64; 3]], scale: f64) -> Tensor {
    let mut d = Vec::with_capacity(a.len() * b.len() * 3);
    for p in a {
        for q in b {
            d.extend_from_slice(&[(p[0] - q[0]) / scale, (p[1] - q[1]) / scale, (p[2] - q[2]) / scale]);
        }
    }
    Tensor::from_vec(a.len() * b.len(), 3, d)
}

/// Unified embedding `E^u` of one latent.
pub fn unify_embeddings(
    g: &mut Graph,
    block: &AttentionBlock,
    cfg: &ChannelCodecConfig,
    coords: &[[f64; 3]],
    feats: Var,
    snr_db: f64,
) -> Var {
    let pos: Vec<[f64; 3]> = coords
        .iter()
        .map(|p| [p[0] / cfg.coord_scale, p[1] / cfg.coord_scale, p[2] / cfg.coord_scale])
        .collect();
    block.unify(g, &pos, feats, cfg.snr_input(snr_db))
}

/// `f + W_o(sum_j a_ij * f_j)` with full attention over the anchors.
pub fn channel_attend(
    g: &mut Graph,
    block: &AttentionBlock,
    cfg: &ChannelCodecConfig,
    e_u: Var,
    feats: Var,
    coords: &[[f64; 3]],
) -> (Var, Var) {
    let q = block.query.forward(g, e_u);
    let k = block.key.forward(g, e_u);
    let rel = relative_offsets(coords, coords, cfg.coord_scale);
    let (pooled, w) = attend(g, block, q, k, feats, rel);
    let o = block.out.forward(g, pooled);
    (g.add(feats, o), w)
}

fn run(g: &mut Graph, prefix: &str, cfg: &ChannelCodecConfig, coords: &[[f64; 3]], feats: Var, snr_db: f64) -> Var {
    let block = AttentionBlock::bind(prefix, cfg.dim);
    let e = unify_embeddings(g, &block, cfg, coords, feats, snr_db);
    channel_attend(g, &block, cfg, e, feats, coords).0
}

/// Channel encoder followed by the configured activation.
pub fn channel_encode_graph(g: &mut Graph, cfg: &ChannelCodecConfig, coords: &[[f64; 3]], feats: Var, snr_db: f64) -> Var {
    let y = run(g, ENCODER_PREFIX, cfg, coords, feats, snr_db);
    activate(g, y, cfg.activation)
}

/// Channel decoder; no terminal activation.
pub fn channel_decode_graph(g: &mut Graph, cfg: &ChannelCodecConfig, coords: &[[f64; 3]], feats: Var, snr_db: f64) -> Var {
    run(g, DECODER_PREFIX, cfg, coords, feats, snr_db)
}

pub fn init_params<R: Rng>(store: &mut ParamStore, cfg: &ChannelCodecConfig, rng: &mut R) {
    AttentionBlock::init(store, ENCODER_PREFIX, cfg.dim, rng);
    AttentionBlock::init(store, DECODER_PREFIX, cfg.dim, rng);
}

fn with_latent(
    latent: &LatentRepresentation,
    params: &ParamStore,
    f: impl FnOnce(&mut Graph, Var) -> Var,
) -> LatentRepresentation {
    let mut g = Graph::with_params(params);
    let x = g.constant(Tensor::from_vec(latent.len(), latent.dim, latent.feats.clone()));
    let y = f(&mut g, x);
    LatentRepresentation {
        coords: latent.coords.clone(),
        feats: g.value(y).data.clone(),
        dim: latent.dim,
    }
}

pub fn channel_encode(latent: &LatentRepresentation, snr_db: f64, cfg: &ChannelCodecConfig, params: &ParamStore) -> LatentRepresentation {
    with_latent(latent, params, |g, x| channel_encode_graph(g, cfg, &latent.coords, x, snr_db))
}

pub fn channel_decode(latent: &LatentRepresentation, snr_db: f64, cfg: &ChannelCodecConfig, params: &ParamStore) -> LatentRepresentation {
    with_latent(latent, params, |g, x| channel_decode_graph(g, cfg, &latent.coords, x, snr_db))
}
