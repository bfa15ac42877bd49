//! Digital transmission chain: uniform quantizer, QPSK / 16-QAM mapping,
//! block-fading channel, zero-forcing equalizer and hard-decision demapper,
//! plus the straight-through bridge that lets training see the chain.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::config::KvConfig;
use crate::error::{Error, Result};
use crate::nn::{Graph, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Modulation {
    Qpsk,
    Qam16,
}

impl Modulation {
    pub fn bits_per_symbol(self) -> usize {
        match self {
            Modulation::Qpsk => 2,
            Modulation::Qam16 => 4,
        }
    }
}

impl FromStr for Modulation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "qpsk" => Ok(Modulation::Qpsk),
            "qam16" => Ok(Modulation::Qam16),
            _ => Err(Error::invalid(format!("unknown modulation {s:?}"))),
        }
    }
}

impl fmt::Display for Modulation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modulation::Qpsk => "qpsk",
            Modulation::Qam16 => "qam16",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChannelKind {
    Awgn,
    Rayleigh,
}

impl FromStr for ChannelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "awgn" => Ok(ChannelKind::Awgn),
            "rayleigh" => Ok(ChannelKind::Rayleigh),
            _ => Err(Error::invalid(format!("unknown channel {s:?}"))),
        }
    }
}

impl fmt::Display for ChannelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ChannelKind::Awgn => "awgn",
            ChannelKind::Rayleigh => "rayleigh",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinkConfig {
    /// Bits per feature value, one of 2, 4, 6, 8.
    pub bits: u32,
    pub modulation: Modulation,
    pub channel: ChannelKind,
    /// Average SNR in dB; `f64::INFINITY` gives a noiseless channel.
    pub snr_db: f64,
    pub seed: u64,
}

impl Default for LinkConfig {
    fn default() -> Self {
        LinkConfig {
            bits: 8,
            modulation: Modulation::Qpsk,
            channel: ChannelKind::Awgn,
            snr_db: 10.0,
            seed: 0,
        }
    }
}

impl LinkConfig {
    pub fn validate(&self) -> Result<()> {
        if ![2, 4, 6, 8].contains(&self.bits) {
            return Err(Error::invalid(format!("bits must be 2, 4, 6 or 8, got {}", self.bits)));
        }
        if self.snr_db.is_nan() {
            return Err(Error::invalid("snr_db is NaN"));
        }
        Ok(())
    }

    /// Linear noise variance for unit signal power.
    pub fn noise_var(&self) -> f64 {
        10f64.powf(-self.snr_db / 10.0)
    }

    pub fn from_kv(cfg: &KvConfig) -> Result<Self> {
        let d = LinkConfig::default();
        let c = LinkConfig {
            bits: cfg.get_or("bits", d.bits)?,
            modulation: cfg.get_or("modulation", d.modulation)?,
            channel: cfg.get_or("channel", d.channel)?,
            snr_db: cfg.get_or("snr_db", d.snr_db)?,
            seed: cfg.get_or("seed", d.seed)?,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn to_kv(&self, cfg: &mut KvConfig) {
        cfg.set("bits", self.bits);
        cfg.set("modulation", self.modulation);
        cfg.set("channel", self.channel);
        cfg.set("snr_db", self.snr_db);
    }
}

/// Binary payload, one entry per bit.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct BitFrame {
    pub bits: Vec<u8>,
}

impl BitFrame {
    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// Little-endian `u32` bit count, then the bits packed MSB-first with zero padding.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = (self.bits.len() as u32).to_le_bytes().to_vec();
        for chunk in self.bits.chunks(8) {
            let mut byte = 0u8;
            for (i, b) in chunk.iter().enumerate() {
                byte |= (b & 1) << (7 - i);
            }
            out.push(byte);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(Error::parse(bytes.len() as u64, "missing bit-count prefix"));
        }
        let n = u32::from_le_bytes(bytes[..4].try_into().unwrap()) as usize;
        let body = &bytes[4..];
        if body.len() != n.div_ceil(8) {
            return Err(Error::parse(
                bytes.len() as u64,
                format!("{n} bits need {} payload bytes, found {}", n.div_ceil(8), body.len()),
            ));
        }
        let bits = (0..n).map(|i| (body[i / 8] >> (7 - i % 8)) & 1).collect();
        Ok(BitFrame { bits })
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct SymbolFrame {
    pub symbols: Vec<Complex64>,
}

impl SymbolFrame {
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn mean_energy(&self) -> f64 {
        self.symbols.iter().map(|s| s.norm_sqr()).sum::<f64>() / self.symbols.len().max(1) as f64
    }
}

/// One block-fading draw.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelRealization {
    pub h: Complex64,
    pub noise_var: f64,
    pub kind: ChannelKind,
}

/// Quantizer output with the number of inputs that had to be clipped.
#[derive(Clone, Debug, PartialEq)]
pub struct Quantized {
    pub frame: BitFrame,
    pub clipped: usize,
}

fn max_code(bits: u32) -> u32 {
    (1u32 << bits) - 1
}

pub fn quantize(x: &[f64], bits: u32) -> Result<Quantized> {
    if !(1..=16).contains(&bits) {
        return Err(Error::invalid(format!("unsupported bit depth {bits}")));
    }
    let levels = max_code(bits) as f64;
    let mut out = Vec::with_capacity(x.len() * bits as usize);
    let mut clipped = 0;
    for (i, &v) in x.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite(i));
        }
        if !(-1.0..=1.0).contains(&v) {
            clipped += 1;
        }
        let code = ((v.clamp(-1.0, 1.0) + 1.0) / 2.0 * levels).round() as u32;
        for k in (0..bits).rev() {
            out.push(((code >> k) & 1) as u8);
        }
    }
    Ok(Quantized {
        frame: BitFrame { bits: out },
        clipped,
    })
}

pub fn dequantize(frame: &BitFrame, bits: u32) -> Result<Vec<f64>> {
    let b = bits as usize;
    if b == 0 || frame.len() % b != 0 {
        return Err(Error::invalid(format!(
            "{} bits is not a multiple of {bits}",
            frame.len()
        )));
    }
    let levels = max_code(bits) as f64;
    Ok(frame
        .bits
        .chunks_exact(b)
        .map(|c| {
            let code = c.iter().fold(0u32, |acc, bit| (acc << 1) | *bit as u32);
            code as f64 / levels * 2.0 - 1.0
        })
        .collect())
}

const INV_SQRT2: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Gray-coded 16-QAM axis level (unscaled) for a bit pair.
fn qam16_level(hi: u8, lo: u8) -> f64 {
    match (hi, lo) {
        (0, 0) => -3.0,
        (0, 1) => -1.0,
        (1, 1) => 1.0,
        _ => 3.0,
    }
}

fn qam16_bits(v: f64) -> (u8, u8) {
    if v < -2.0 {
        (0, 0)
    } else if v < 0.0 {
        (0, 1)
    } else if v < 2.0 {
        (1, 1)
    } else {
        (1, 0)
    }
}

fn qam16_scale() -> f64 {
    1.0 / 10f64.sqrt()
}

/// Every constellation point with its bit label (MSB first).
pub fn constellation(m: Modulation) -> Vec<(Vec<u8>, Complex64)> {
    let bps = m.bits_per_symbol();
    (0..1usize << bps)
        .map(|label| {
            let bits: Vec<u8> = (0..bps).rev().map(|k| ((label >> k) & 1) as u8).collect();
            let s = modulate(&BitFrame { bits: bits.clone() }, m).unwrap().symbols[0];
            (bits, s)
        })
        .collect()
}

pub fn modulate(frame: &BitFrame, m: Modulation) -> Result<SymbolFrame> {
    let bps = m.bits_per_symbol();
    if frame.len() % bps != 0 {
        return Err(Error::invalid(format!(
            "{} bits do not fill whole {m} symbols",
            frame.len()
        )));
    }
    let symbols = frame
        .bits
        .chunks_exact(bps)
        .map(|c| match m {
            Modulation::Qpsk => Complex64::new(
                (1.0 - 2.0 * c[0] as f64) * INV_SQRT2,
                (1.0 - 2.0 * c[1] as f64) * INV_SQRT2,
            ),
            Modulation::Qam16 => {
                Complex64::new(qam16_level(c[0], c[1]), qam16_level(c[2], c[3])) * qam16_scale()
            }
        })
        .collect();
    Ok(SymbolFrame { symbols })
}

/// Circularly symmetric complex Gaussian sample with variance `var`.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, var: f64) -> Complex64 {
    let s = (var / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re * s, im * s)
}

/// `y = h s + n` with one fading coefficient for the whole frame.
pub fn apply_channel<R: Rng + ?Sized>(
    s: &SymbolFrame,
    cfg: &LinkConfig,
    rng: &mut R,
) -> (SymbolFrame, ChannelRealization) {
    let h = match cfg.channel {
        ChannelKind::Awgn => Complex64::new(1.0, 0.0),
        ChannelKind::Rayleigh => complex_gaussian(rng, 1.0),
    };
    let noise_var = cfg.noise_var();
    let symbols = s
        .symbols
        .iter()
        .map(|x| {
            let n = if noise_var > 0.0 {
                complex_gaussian(rng, noise_var)
            } else {
                Complex64::new(0.0, 0.0)
            };
            h * x + n
        })
        .collect();
    (
        SymbolFrame { symbols },
        ChannelRealization {
            h,
            noise_var,
            kind: cfg.channel,
        },
    )
}

/// Fading magnitude below which a frame is flagged as a deep fade.
pub const H_MIN: f64 = 1e-6;

/// Multiplies by `h* / |h|^2`. The flag reports a deep fade (`|h| <= H_MIN`);
/// the frame is equalized either way.
pub fn zf_equalize(received: &SymbolFrame, h: Complex64) -> (SymbolFrame, bool) {
    let deep_fade = h.norm() <= H_MIN;
    let g = h.conj() / h.norm_sqr();
    let symbols = received.symbols.iter().map(|y| g * y).collect();
    (SymbolFrame { symbols }, deep_fade)
}

/// Minimum-distance hard decisions.
pub fn demodulate(s: &SymbolFrame, m: Modulation) -> BitFrame {
    let mut bits = Vec::with_capacity(s.len() * m.bits_per_symbol());
    for y in &s.symbols {
        match m {
            Modulation::Qpsk => {
                bits.push((y.re < 0.0) as u8);
                bits.push((y.im < 0.0) as u8);
            }
            Modulation::Qam16 => {
                let k = 1.0 / qam16_scale();
                let (a, b) = qam16_bits(y.re * k);
                let (c, d) = qam16_bits(y.im * k);
                bits.extend_from_slice(&[a, b, c, d]);
            }
        }
    }
    BitFrame { bits }
}

/// Everything observed while pushing one frame of features through the link.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainOutput {
    pub values: Vec<f64>,
    pub realization: ChannelRealization,
    pub clipped: usize,
    pub deep_fade: bool,
    pub bit_errors: usize,
}

/// quantize, modulate, channel, equalize, demodulate, dequantize.
pub fn transmit<R: Rng + ?Sized>(x: &[f64], cfg: &LinkConfig, rng: &mut R) -> Result<ChainOutput> {
    cfg.validate()?;
    let q = quantize(x, cfg.bits)?;
    let s = modulate(&q.frame, cfg.modulation)?;
    let (received, realization) = apply_channel(&s, cfg, rng);
    let (eq, deep_fade) = zf_equalize(&received, realization.h);
    let bits = demodulate(&eq, cfg.modulation);
    let bit_errors = bits.bits.iter().zip(&q.frame.bits).filter(|(a, b)| a != b).count();
    Ok(ChainOutput {
        values: dequantize(&bits, cfg.bits)?,
        realization,
        clipped: q.clipped,
        deep_fade,
        bit_errors,
    })
}

/// Graph node whose forward value is the chain output and whose gradient is
/// the identity with respect to `x`.
pub fn ste_transmit<R: Rng + ?Sized>(
    g: &mut Graph,
    x: Var,
    cfg: &LinkConfig,
    rng: &mut R,
) -> Result<(Var, ChainOutput)> {
    let (rows, cols) = g.shape(x);
    let out = transmit(&g.value(x).data, cfg, rng)?;
    let y = Tensor::from_vec(rows, cols, out.values.clone());
    Ok((g.straight_through(x, y), out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn quantizer_edges() {
        let q = quantize(&[-1.0, 1.0, 0.0], 8).unwrap();
        assert_eq!(&q.frame.bits[..8], &[0; 8]);
        assert_eq!(&q.frame.bits[8..16], &[1; 8]);
        assert_eq!(&q.frame.bits[16..], &[1, 0, 0, 0, 0, 0, 0, 0]);
        let v = dequantize(&q.frame, 8).unwrap();
        assert_eq!(v[0], -1.0);
        assert_eq!(v[1], 1.0);
        assert!((v[2] - 0.003922).abs() < 1e-6);
        assert_eq!(quantize(&[2.5, -3.0, 0.2], 8).unwrap().clipped, 2);
        assert!(dequantize(&BitFrame { bits: vec![0; 9] }, 8).is_err());
    }

    #[test]
    fn qpsk_mapping_and_energy() {
        let s = modulate(&BitFrame { bits: vec![0, 0, 1, 1] }, Modulation::Qpsk).unwrap();
        assert_eq!(s.symbols[0], Complex64::new(INV_SQRT2, INV_SQRT2));
        assert_eq!(s.symbols[1], Complex64::new(-INV_SQRT2, -INV_SQRT2));
        let e: f64 = constellation(Modulation::Qpsk).iter().map(|(_, s)| s.norm_sqr()).sum::<f64>() / 4.0;
        assert!((e - 1.0).abs() < 1e-15);
        let e16: f64 =
            constellation(Modulation::Qam16).iter().map(|(_, s)| s.norm_sqr()).sum::<f64>() / 16.0;
        assert!((e16 - 1.0).abs() < 1e-15);
        assert!(modulate(&BitFrame { bits: vec![0; 6] }, Modulation::Qam16).is_err());
    }

    #[test]
    fn demodulation_is_minimum_distance() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for m in [Modulation::Qpsk, Modulation::Qam16] {
            let points = constellation(m);
            for (bits, s) in &points {
                assert_eq!(&demodulate(&SymbolFrame { symbols: vec![*s] }, m).bits, bits);
            }
            for _ in 0..2000 {
                let y = complex_gaussian(&mut rng, 2.0);
                let best = points
                    .iter()
                    .min_by(|a, b| (a.1 - y).norm_sqr().total_cmp(&(b.1 - y).norm_sqr()))
                    .unwrap();
                assert_eq!(demodulate(&SymbolFrame { symbols: vec![y] }, m).bits, best.0);
            }
        }
    }

    #[test]
    fn neighbouring_regions_differ_in_one_bit() {
        for m in [Modulation::Qpsk, Modulation::Qam16] {
            let points = constellation(m);
            let dmin = points
                .iter()
                .flat_map(|a| points.iter().map(move |b| (a.1 - b.1).norm()))
                .filter(|d| *d > 1e-9)
                .fold(f64::INFINITY, f64::min);
            for a in &points {
                for b in &points {
                    if ((a.1 - b.1).norm() - dmin).abs() < 1e-9 {
                        let diff = a.0.iter().zip(&b.0).filter(|(x, y)| x != y).count();
                        assert_eq!(diff, 1);
                    }
                }
            }
        }
    }

    #[test]
    fn zf_inverts_known_fading() {
        let s = modulate(&BitFrame { bits: vec![0, 1, 1, 0, 1, 1] }, Modulation::Qpsk).unwrap();
        let h = Complex64::new(0.6, 0.8);
        let faded = SymbolFrame {
            symbols: s.symbols.iter().map(|x| h * x).collect(),
        };
        let (eq, deep) = zf_equalize(&faded, h);
        assert!(!deep);
        for (a, b) in eq.symbols.iter().zip(&s.symbols) {
            assert!((a - b).norm() < 1e-12);
        }
        assert!(zf_equalize(&faded, Complex64::new(1e-7, 0.0)).1);
    }

    #[test]
    fn noiseless_awgn_is_exact() {
        let cfg = LinkConfig {
            snr_db: f64::INFINITY,
            ..LinkConfig::default()
        };
        let s = modulate(&BitFrame { bits: vec![1, 0, 0, 1] }, Modulation::Qpsk).unwrap();
        let (y, r) = apply_channel(&s, &cfg, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(y, s);
        assert_eq!(r.h, Complex64::new(1.0, 0.0));
        assert_eq!(r.noise_var, 0.0);
    }

    #[test]
    fn bit_frame_bytes() {
        let f = BitFrame { bits: vec![1, 0, 1, 1, 0, 0, 0, 0, 1, 1] };
        let bytes = f.to_bytes();
        assert_eq!(bytes, vec![10, 0, 0, 0, 0b1011_0000, 0b1100_0000]);
        assert_eq!(BitFrame::from_bytes(&bytes).unwrap(), f);
        assert!(BitFrame::from_bytes(&bytes[..5]).is_err());
    }

    #[test]
    fn same_seed_same_output() {
        let cfg = LinkConfig {
            channel: ChannelKind::Rayleigh,
            snr_db: 3.0,
            ..LinkConfig::default()
        };
        let x: Vec<f64> = (0..64).map(|i| (i as f64 / 32.0) - 1.0).collect();
        let a = transmit(&x, &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = transmit(&x, &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ste_forward_and_gradient() {
        let cfg = LinkConfig {
            snr_db: 2.0,
            ..LinkConfig::default()
        };
        let x = Tensor::from_vec(4, 2, vec![0.1, -0.5, 0.9, 0.0, -0.99, 0.3, 0.7, -0.2]);
        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let (y, out) = ste_transmit(&mut g, xv, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let chain = transmit(&x.data, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(g.value(y).data, chain.values);
        assert_eq!(out, chain);
        let s = g.sum(y);
        assert!(g.backward(s).get(xv).unwrap().data.iter().all(|d| *d == 1.0));
    }

    proptest! {
        #[test]
        fn noiseless_chain_error_is_one_step(x in prop::collection::vec(-1.0f64..=1.0, 1..64), b in prop::sample::select(vec![2u32, 4, 6, 8])) {
            let cfg = LinkConfig { bits: b, snr_db: f64::INFINITY, ..LinkConfig::default() };
            let out = transmit(&x, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
            let step = 1.0 / max_code(b) as f64;
            for (a, y) in x.iter().zip(&out.values) {
                prop_assert!((a - y).abs() <= step + 1e-15);
            }
        }
    }
}
