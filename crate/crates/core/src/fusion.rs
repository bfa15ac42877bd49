//! Cross-attention of the decoded transmitter latent over the receiver's own
//! latent. Both streams go through the same embedding perceptrons; queries
//! come from the transmitter, keys and values from the receiver.

use nalgebra::Isometry3;
use rand::Rng;

use crate::channelcodec::{attend, relative_offsets, AttentionBlock, ChannelCodecConfig};
use crate::featurecodec::LatentRepresentation;
use crate::nn::{Graph, ParamStore, Tensor, Var};
use crate::pcdata::transform_point;

pub const PREFIX: &str = "fusion";

/// Registers fusion weights; the attention output branch starts at zero so
/// fusion is the identity on the transmitter features at initialization.
pub fn init_params<R: Rng>(store: &mut ParamStore, dim: usize, rng: &mut R) {
    let b = AttentionBlock::init(store, PREFIX, dim, rng);
    b.out.zero(store);
}

fn centroid(p: &[[f64; 3]]) -> [f64; 3] {
    let n = p.len() as f64;
    let mut c = [0.0; 3];
    for q in p {
        for k in 0..3 {
            c[k] += q[k];
        }
    }
    [c[0] / n, c[1] / n, c[2] / n]
}

/// `f^t_i + W_o(sum_j a_ij * f^r_j)`, softmax over receiver anchors `j`.
///
/// Positions are embedded relative to the transmitter centroid so the result
/// depends only on the relative geometry of the two anchor sets. Both sets
/// must be expressed in one frame. Returns the fused features and the
/// `N_t N_r x C` attention weights.
pub fn fuse_graph(
    g: &mut Graph,
    cfg: &ChannelCodecConfig,
    tx_coords: &[[f64; 3]],
    tx_feats: Var,
    rx_coords: &[[f64; 3]],
    rx_feats: Var,
    snr_db: f64,
) -> (Var, Var) {
    let block = AttentionBlock::bind(PREFIX, cfg.dim);
    let c = centroid(tx_coords);
    let s = cfg.coord_scale;
    let local = |p: &[[f64; 3]]| -> Vec<[f64; 3]> {
        p.iter()
            .map(|q| [(q[0] - c[0]) / s, (q[1] - c[1]) / s, (q[2] - c[2]) / s])
            .collect()
    };
    let snr = cfg.snr_input(snr_db);
    let et = block.unify(g, &local(tx_coords), tx_feats, snr);
    let er = block.unify(g, &local(rx_coords), rx_feats, snr);
    let q = block.query.forward(g, et);
    let k = block.key.forward(g, er);
    let rel = relative_offsets(tx_coords, rx_coords, s);
    let (pooled, w) = attend(g, &block, q, k, rx_feats, rel);
    let o = block.out.forward(g, pooled);
    (g.add(tx_feats, o), w)
}

/// Re-expresses a receiver latent in the transmitter frame.
pub fn align_receiver(rx: &LatentRepresentation, rx_to_tx: &Isometry3<f64>) -> LatentRepresentation {
    LatentRepresentation {
        coords: rx.coords.iter().map(|p| transform_point(rx_to_tx, p)).collect(),
        feats: rx.feats.clone(),
        dim: rx.dim,
    }
}

/// Inference-only fusion of two latents in a common frame.
pub fn fuse(
    tx: &LatentRepresentation,
    rx: &LatentRepresentation,
    snr_db: f64,
    cfg: &ChannelCodecConfig,
    params: &ParamStore,
) -> LatentRepresentation {
    let mut g = Graph::with_params(params);
    let ft = g.constant(Tensor::from_vec(tx.len(), tx.dim, tx.feats.clone()));
    let fr = g.constant(Tensor::from_vec(rx.len(), rx.dim, rx.feats.clone()));
    let (y, _) = fuse_graph(&mut g, cfg, &tx.coords, ft, &rx.coords, fr, snr_db);
    LatentRepresentation {
        coords: tx.coords.clone(),
        feats: g.value(y).data.clone(),
        dim: tx.dim,
    }
}
