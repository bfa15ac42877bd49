//! Density-preserving feature codec: a cascade of downsampling blocks that
//! turns a scan into a small latent (anchor coordinates plus features), and
//! a cascade of adaptive upsampling blocks that rebuilds a dense cloud.

mod decoder;
mod encoder;

pub use decoder::{decode, BlockNodes, DecoderStage, decode_graph, upsample_block, DecodeOptions, DecoderBlock, DecoderTrace, UpsampleOutput};
pub use encoder::{
    absolute_position_encoding, density_embedding, encode, encode_graph, local_position_embedding,
    point_transformer, EncoderBlock, EncoderTrace, TransformerInputs,
};

use rand::Rng;

use crate::config::KvConfig;
use crate::error::{Error, Result};
use crate::nn::ParamStore;

#[derive(Clone, Debug, PartialEq)]
pub struct CodecConfig {
    pub n_stages: usize,
    /// Point reduction per stage.
    pub downsample_factor: usize,
    /// Latent feature width `C`.
    pub bottleneck_dim: usize,
    pub k_neighbors: usize,
    /// Largest number of children a decoder parent may emit.
    pub k_max: usize,
    /// Bound on a child's distance from its parent, meters.
    pub r_max: f64,
    /// Feature width of each encoder stage; decoder block `t` uses entry `n - 1 - t`.
    pub hidden_dims: Vec<usize>,
    /// Density neighborhood radius at stage 0, doubled every stage.
    pub r_density: f64,
    /// Coordinates are divided by this before entering any perceptron.
    pub coord_scale: f64,
    pub use_abs_pos: bool,
}

impl Default for CodecConfig {
    fn default() -> Self {
        CodecConfig {
            n_stages: 3,
            downsample_factor: 4,
            bottleneck_dim: 8,
            k_neighbors: 16,
            k_max: 8,
            r_max: 2.0,
            hidden_dims: vec![64, 128, 256],
            r_density: 1.0,
            coord_scale: 70.0,
            use_abs_pos: true,
        }
    }
}

impl CodecConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_stages < 1 {
            return bad("n_stages must be at least 1".into());
        }
        if self.downsample_factor < 2 {
            return bad("downsample_factor must be at least 2".into());
        }
        if self.k_max < self.downsample_factor {
            return bad(format!(
                "k_max ({}) must be at least downsample_factor ({})",
                self.k_max, self.downsample_factor
            ));
        }
        if self.bottleneck_dim < 1 || self.k_neighbors < 1 {
            return bad("bottleneck_dim and k_neighbors must be positive".into());
        }
        if self.hidden_dims.len() != self.n_stages || self.hidden_dims.contains(&0) {
            return bad(format!(
                "hidden_dims needs {} positive widths, got {:?}",
                self.n_stages, self.hidden_dims
            ));
        }
        if !(self.r_max > 0.0 && self.r_density > 0.0 && self.coord_scale > 0.0) {
            return bad("radii and coord_scale must be positive".into());
        }
        Ok(())
    }

    /// `f_s^n`.
    pub fn total_factor(&self) -> usize {
        self.downsample_factor.pow(self.n_stages as u32)
    }

    /// Latent point count for an `n`-point input.
    pub fn latent_points(&self, n: usize) -> Result<usize> {
        let f = self.total_factor();
        if n == 0 || n % f != 0 {
            return Err(Error::invalid(format!(
                "point count {n} is not a multiple of {f}"
            )));
        }
        Ok(n / f)
    }

    pub fn density_radius(&self, stage: usize) -> f64 {
        self.r_density * (1u64 << stage) as f64
    }

    /// Output width of encoder stage `s`.
    pub fn stage_out(&self, s: usize) -> usize {
        if s + 1 == self.n_stages {
            self.bottleneck_dim
        } else {
            self.hidden_dims[s]
        }
    }

    /// Input width of encoder stage `s`.
    pub fn stage_in(&self, s: usize) -> usize {
        if s == 0 {
            3
        } else {
            self.stage_out(s - 1)
        }
    }

    pub fn from_kv(cfg: &KvConfig) -> Result<Self> {
        let d = CodecConfig::default();
        let hidden_dims = match cfg.raw("hidden_dims") {
            None => d.hidden_dims.clone(),
            Some(s) => s
                .split(',')
                .map(|v| {
                    v.trim()
                        .parse::<usize>()
                        .map_err(|e| Error::Config(format!("hidden_dims = {s:?}: {e}")))
                })
                .collect::<Result<Vec<_>>>()?,
        };
        let c = CodecConfig {
            n_stages: cfg.get_or("n_stages", d.n_stages)?,
            downsample_factor: cfg.get_or("downsample_factor", d.downsample_factor)?,
            bottleneck_dim: cfg.get_or("bottleneck_dim", d.bottleneck_dim)?,
            k_neighbors: cfg.get_or("k_neighbors", d.k_neighbors)?,
            k_max: cfg.get_or("k_max", d.k_max)?,
            r_max: cfg.get_or("r_max", d.r_max)?,
            hidden_dims,
            r_density: cfg.get_or("r_density", d.r_density)?,
            coord_scale: cfg.get_or("coord_scale", d.coord_scale)?,
            use_abs_pos: cfg.get_or("use_abs_pos", d.use_abs_pos)?,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn to_kv(&self, cfg: &mut KvConfig) {
        cfg.set("n_stages", self.n_stages);
        cfg.set("downsample_factor", self.downsample_factor);
        cfg.set("bottleneck_dim", self.bottleneck_dim);
        cfg.set("k_neighbors", self.k_neighbors);
        cfg.set("k_max", self.k_max);
        cfg.set("r_max", self.r_max);
        let dims: Vec<String> = self.hidden_dims.iter().map(|d| d.to_string()).collect();
        cfg.set("hidden_dims", dims.join(","));
        cfg.set("r_density", self.r_density);
        cfg.set("coord_scale", self.coord_scale);
        cfg.set("use_abs_pos", self.use_abs_pos);
    }
}

/// Anchor coordinates and their features.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentRepresentation {
    pub coords: Vec<[f64; 3]>,
    /// Row-major `coords.len() x C`.
    pub feats: Vec<f64>,
    pub dim: usize,
}

impl LatentRepresentation {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn feat_row(&self, i: usize) -> &[f64] {
        &self.feats[i * self.dim..(i + 1) * self.dim]
    }
}

/// Registers freshly initialized encoder and decoder weights.
pub fn init_params<R: Rng>(store: &mut ParamStore, cfg: &CodecConfig, rng: &mut R) -> Result<()> {
    cfg.validate()?;
    for s in 0..cfg.n_stages {
        EncoderBlock::init(store, cfg, s, rng);
    }
    for t in 0..cfg.n_stages {
        DecoderBlock::init(store, cfg, t, rng);
    }
    Ok(())
}

/// Row indices `[0; k] ++ [1; k] ++ ...` for `m` groups.
pub fn repeat_index(m: usize, k: usize) -> Vec<usize> {
    (0..m).flat_map(|i| std::iter::repeat(i).take(k)).collect()
}
