//! End-to-end frame processing: feature encoder, optional channel codec,
//! digital link, optional fusion with the receiver's own latent, and the
//! feature decoder. The same graph serves training and evaluation.

use nalgebra::Isometry3;
use rand::{Rng, RngCore};

use crate::channelcodec::{self, activate, channel_decode_graph, channel_encode_graph, ChannelCodecConfig};
use crate::config::KvConfig;
use crate::error::{Error, Result};
use crate::featurecodec::{self, decode_graph, encode_graph, CodecConfig, DecodeOptions, DecoderTrace, EncoderTrace};
use crate::fusion::{self, fuse_graph};
use crate::link::{ste_transmit, ChainOutput, LinkConfig};
use crate::metrics::{total_loss, LossParts, LossWeights};
use crate::nn::{Graph, ParamStore, Var};
use crate::pcdata::{nearest_indices, transform_point, PointCloud, ScenePair};

/// Architecture and link settings shared by training and evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub codec: CodecConfig,
    pub channel: ChannelCodecConfig,
    pub link: LinkConfig,
    pub use_channel_codec: bool,
    pub use_fusion: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            codec: CodecConfig::default(),
            channel: ChannelCodecConfig::default(),
            link: LinkConfig::default(),
            use_channel_codec: true,
            use_fusion: true,
        }
    }
}

impl ModelConfig {
    /// Keeps the channel codec width and coordinate scale in step with the codec.
    pub fn normalized(mut self) -> Self {
        self.channel.dim = self.codec.bottleneck_dim;
        self.channel.coord_scale = self.codec.coord_scale;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.codec.validate()?;
        self.link.validate()?;
        if self.channel.dim != self.codec.bottleneck_dim {
            return Err(Error::Config("channel codec width must equal bottleneck_dim".into()));
        }
        Ok(())
    }

    pub fn from_kv(cfg: &KvConfig) -> Result<Self> {
        let d = ChannelCodecConfig::default();
        let m = ModelConfig {
            codec: CodecConfig::from_kv(cfg)?,
            channel: ChannelCodecConfig {
                activation: cfg.get_or("activation", d.activation)?,
                use_snr: cfg.get_or("use_snr", d.use_snr)?,
                ..d
            },
            link: LinkConfig::from_kv(cfg)?,
            use_channel_codec: cfg.get_or("use_channel_codec", true)?,
            use_fusion: cfg.get_or("use_fusion", true)?,
        }
        .normalized();
        m.validate()?;
        Ok(m)
    }

    pub fn to_kv(&self, cfg: &mut KvConfig) {
        self.codec.to_kv(cfg);
        self.link.to_kv(cfg);
        cfg.set("activation", self.channel.activation);
        cfg.set("use_snr", self.channel.use_snr);
        cfg.set("use_channel_codec", self.use_channel_codec);
        cfg.set("use_fusion", self.use_fusion);
    }

    /// How a stage-one (pretrained) model is sent over the link: latent
    /// features go straight to the quantizer, with no channel codec, no
    /// fusion and no activation, since none of those were trained.
    pub fn frozen_stage_one(self) -> Self {
        ModelConfig {
            channel: ChannelCodecConfig {
                activation: channelcodec::Activation::None,
                ..self.channel
            },
            use_channel_codec: false,
            use_fusion: false,
            ..self
        }
    }

    /// Feature payload bits per input point.
    pub fn bpp(&self, n_points: usize) -> Result<f64> {
        let ns = self.codec.latent_points(n_points)?;
        Ok(crate::metrics::bpp(ns, self.codec.bottleneck_dim, self.link.bits, n_points))
    }
}

/// Weights of every module, freshly initialized.
pub fn init_model<R: Rng>(model: &ModelConfig, rng: &mut R) -> Result<ParamStore> {
    let mut s = ParamStore::new();
    featurecodec::init_params(&mut s, &model.codec, rng)?;
    add_stage_two_params(&mut s, model, rng);
    Ok(s)
}

/// Adds channel codec and fusion weights that are not in `store` yet.
pub fn add_stage_two_params<R: Rng>(store: &mut ParamStore, model: &ModelConfig, rng: &mut R) {
    let c = model.codec.bottleneck_dim;
    if !store.names().any(|n| n.starts_with(channelcodec::ENCODER_PREFIX)) {
        let mut fresh = ParamStore::new();
        channelcodec::init_params(&mut fresh, &model.channel, rng);
        store.extend_from(&fresh);
    }
    if !store.names().any(|n| n.starts_with(fusion::PREFIX)) {
        let mut fresh = ParamStore::new();
        fusion::init_params(&mut fresh, c, rng);
        store.extend_from(&fresh);
    }
}

/// Link state for one frame.
pub struct LinkUse<'r> {
    pub cfg: LinkConfig,
    pub rng: &'r mut dyn RngCore,
}

/// Graph handles of one processed frame.
pub struct FrameForward {
    pub encoder: EncoderTrace,
    /// Features that were (or would have been) put on the link.
    pub sent: Var,
    pub decoder: DecoderTrace,
    pub recon: Var,
    pub chain: Option<ChainOutput>,
}

/// Builds one frame on `g`.
///
/// Without `link` the frame is a noise-free compression roundtrip through the
/// feature codec alone. With `link` the full chain runs; the channel codec and
/// fusion are included according to `model`. `rx` is the receiver cloud and
/// the transform from receiver to transmitter sensor coordinates.
pub fn forward_frame(
    g: &mut Graph,
    model: &ModelConfig,
    tx: &[[f64; 3]],
    rx: Option<(&[[f64; 3]], &Isometry3<f64>)>,
    link: Option<LinkUse<'_>>,
) -> Result<FrameForward> {
    let enc = encode_graph(g, tx, &model.codec)?;
    let coords = enc.coords().to_vec();
    let feats = enc.feats;
    let (sent, received, chain) = match link {
        None => (feats, feats, None),
        Some(LinkUse { cfg, rng }) => {
            let snr = cfg.snr_db;
            let x = if model.use_channel_codec {
                channel_encode_graph(g, &model.channel, &coords, feats, snr)
            } else {
                activate(g, feats, model.channel.activation)
            };
            let (y, out) = ste_transmit(g, x, &cfg, rng)?;
            let z = if model.use_channel_codec {
                channel_decode_graph(g, &model.channel, &coords, y, snr)
            } else {
                y
            };
            let z = match (model.use_fusion, rx) {
                (true, Some((rx_pts, rx_to_tx))) => {
                    let r = encode_graph(g, rx_pts, &model.codec)?;
                    let rc: Vec<[f64; 3]> = r.coords().iter().map(|p| transform_point(rx_to_tx, p)).collect();
                    fuse_graph(g, &model.channel, &coords, z, &rc, r.feats, snr).0
                }
                (true, None) => return Err(Error::invalid("fusion needs the receiver cloud")),
                (false, _) => z,
            };
            (x, z, Some(out))
        }
    };
    let dec = decode_graph(g, &coords, received, &model.codec, &DecodeOptions::default())?;
    let recon = dec.points;
    Ok(FrameForward {
        encoder: enc,
        sent,
        decoder: dec,
        recon,
        chain,
    })
}

/// Reference child counts per decoder block: every point of the encoder
/// level one step finer is assigned to its nearest decoder parent.
pub fn reference_counts(fwd: &FrameForward) -> Vec<Vec<f64>> {
    let levels = &fwd.encoder.levels;
    let n = levels.len() - 1;
    fwd.decoder
        .stages
        .iter()
        .enumerate()
        .map(|(t, st)| {
            let finer = &levels[n - 1 - t];
            let (owner, _) = nearest_indices(&st.parents, finer);
            let mut counts = vec![0.0; st.parents.len()];
            for o in owner {
                counts[o] += 1.0;
            }
            counts
        })
        .collect()
}

/// Training objective of a frame against the transmitted cloud.
pub fn frame_loss(g: &mut Graph, model: &ModelConfig, fwd: &FrameForward, tx: &[[f64; 3]], weights: &LossWeights) -> LossParts {
    let counts = reference_counts(fwd);
    let stages: Vec<(Var, Vec<f64>)> = fwd
        .decoder
        .stages
        .iter()
        .zip(counts)
        .map(|(s, c)| (s.nodes.count_logits, c))
        .collect();
    total_loss(
        g,
        fwd.recon,
        tx,
        &stages,
        weights,
        model.codec.density_radius(0),
        model.codec.k_neighbors,
        model.codec.k_max,
    )
}

/// Inference on one scene pair. Returns the reconstruction (transmitter
/// frame) and the link record when a link was used.
pub fn reconstruct(
    params: &ParamStore,
    model: &ModelConfig,
    pair: &ScenePair,
    link: Option<LinkUse<'_>>,
) -> Result<(PointCloud, Option<ChainOutput>)> {
    let mut g = Graph::with_params(params);
    let rx_to_tx = pair.tx_to_rx.inverse();
    let rx = model.use_fusion.then_some((pair.rx.points(), &rx_to_tx));
    let fwd = forward_frame(&mut g, model, pair.tx.points(), rx, link)?;
    let pc = PointCloud::new(g.value(fwd.recon).to_points())?.with_frame_id(pair.tx.frame_id.clone());
    Ok((pc, fwd.chain))
}
