//! Versioned parameter container.
//!
//! Layout: the 8-byte magic `LPCFTCKP`, a little-endian `u32` format version,
//! a `u32` header length, a UTF-8 header, then one little-endian `f32` payload
//! per manifest entry in manifest order. The header has three sections:
//! `[meta]` and `[config]` hold `key=value` lines, `[manifest]` holds
//! `name rows cols f32` lines.

use std::path::Path;

use crate::config::KvConfig;
use crate::error::{Error, Result};
use crate::nn::{ParamStore, Tensor};

pub const MAGIC: &[u8; 8] = b"LPCFTCKP";
pub const VERSION: u32 = 1;

/// Trained weights plus what is needed to resume or evaluate them.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// Weights, already rounded to the stored precision.
    pub params: ParamStore,
    /// Run configuration snapshot.
    pub config: KvConfig,
    /// `pretrain` or `finetune`.
    pub stage: String,
    /// Completed epochs.
    pub epoch: usize,
    /// Training RNG state: seed, stream and word position.
    pub rng_seed: u64,
    pub rng_stream: u64,
    pub rng_word_pos: u128,
}

impl Checkpoint {
    /// Rounds `params` to `f32` so an in-memory checkpoint and its reloaded
    /// copy behave identically.
    pub fn new(mut params: ParamStore, config: KvConfig, stage: &str, epoch: usize) -> Self {
        params.round_to_f32();
        Checkpoint {
            params,
            config,
            stage: stage.to_string(),
            epoch,
            rng_seed: 0,
            rng_stream: 0,
            rng_word_pos: 0,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = String::from("[meta]\n");
        header += &format!("stage={}\nepoch={}\n", self.stage, self.epoch);
        header += &format!(
            "rng_seed={}\nrng_stream={}\nrng_word_pos={}\n",
            self.rng_seed, self.rng_stream, self.rng_word_pos
        );
        header += "[config]\n";
        header += &self.config.to_text();
        header += "[manifest]\n";
        for (name, t) in self.params.iter() {
            header += &format!("{name} {} {} f32\n", t.rows, t.cols);
        }
        let mut out = Vec::with_capacity(16 + header.len() + 4 * self.params.numel());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        for (_, t) in self.params.iter() {
            for v in &t.data {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let hlen = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let header = bytes
            .get(16..16 + hlen)
            .ok_or_else(|| bad("truncated header"))?;
        let header = std::str::from_utf8(header).map_err(|_| bad("header is not UTF-8"))?;

        let mut meta = KvConfig::new();
        let mut config_text = String::new();
        let mut manifest = Vec::new();
        let mut section = "";
        for line in header.lines() {
            match line {
                "[meta]" | "[config]" | "[manifest]" => section = line,
                _ if section == "[meta]" => {
                    let (k, v) = line.split_once('=').ok_or_else(|| bad("bad meta line"))?;
                    meta.set(k, v);
                }
                _ if section == "[config]" => {
                    config_text += line;
                    config_text.push('\n');
                }
                _ if section == "[manifest]" => {
                    let f: Vec<&str> = line.split_whitespace().collect();
                    let [name, rows, cols, dtype] = f[..] else {
                        return Err(Error::Checkpoint(format!("bad manifest line '{line}'")));
                    };
                    if dtype != "f32" {
                        return Err(Error::Checkpoint(format!("unsupported dtype {dtype}")));
                    }
                    let dim = |s: &str| s.parse::<usize>().map_err(|_| bad("bad shape"));
                    manifest.push((name.to_string(), dim(rows)?, dim(cols)?));
                }
                _ => return Err(bad("header line outside a section")),
            }
        }
        let req = |k: &str| -> Result<String> {
            meta.raw(k)
                .map(str::to_string)
                .ok_or_else(|| Error::Checkpoint(format!("missing meta key {k}")))
        };
        let num = |k: &str| -> Result<u128> {
            req(k)?
                .parse()
                .map_err(|_| Error::Checkpoint(format!("bad meta value for {k}")))
        };

        let mut params = ParamStore::new();
        let mut pos = 16 + hlen;
        for (name, rows, cols) in manifest {
            let n = rows * cols;
            let chunk = bytes
                .get(pos..pos + 4 * n)
                .ok_or_else(|| Error::Checkpoint(format!("truncated payload for {name}")))?;
            let data = chunk
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect();
            params.insert(name, Tensor::from_vec(rows, cols, data));
            pos += 4 * n;
        }
        if pos != bytes.len() {
            return Err(bad("trailing bytes after payload"));
        }
        Ok(Checkpoint {
            params,
            config: KvConfig::parse(&config_text)?,
            stage: req("stage")?,
            epoch: num("epoch")? as usize,
            rng_seed: num("rng_seed")? as u64,
            rng_stream: num("rng_stream")? as u64,
            rng_word_pos: num("rng_word_pos")?,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
