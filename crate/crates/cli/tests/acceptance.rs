//! Acceptance suite. Runs every criterion in order and prints one line per
//! criterion; the process fails if any criterion fails.
//!
//! `cargo test -p lpcft-cli --test acceptance -- 3 5` runs criteria 3 and 5 only.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lpcft::channelcodec::{
    channel_attend, channel_decode, channel_decode_graph, channel_encode, channel_encode_graph, unify_embeddings,
    Activation, AttentionBlock, ChannelCodecConfig, DECODER_PREFIX, ENCODER_PREFIX,
};
use lpcft::checkpoint::Checkpoint;
use lpcft::featurecodec::{decode_graph, encode, encode_graph, CodecConfig, DecodeOptions, LatentRepresentation};
use lpcft::fusion::{fuse, fuse_graph};
use lpcft::link::{
    apply_channel, constellation, demodulate, modulate, ste_transmit, transmit, zf_equalize, BitFrame, ChannelKind,
    LinkConfig, Modulation, SymbolFrame,
};
use lpcft::metrics::{bpp, chamfer, d1_psnr, point_to_point_mse, psnr_from_mse};
use lpcft::nn::gradcheck::{check_params, GradCheckReport, REL_TOL};
use lpcft::nn::{Graph, Linear, ParamStore, Tensor};
use lpcft::pcdata::{nearest_indices, synth_dataset, PointCloud, SceneParams, ScenePair};
use lpcft::pipeline::{init_model, ModelConfig};
use lpcft::trainer::{
    evaluate, finetune, pretrain, run_ablation, AblationAxis, AblationPlan, AblationResult, EpochLog, EvalPlan,
    FinetuneInit, SnrMode, TrainConfig, TrainOutcome,
};
use lpcft_baseline::{
    baseline_sweep, depth_for_bpp, llrs, octree_decode, octree_encode, BaselineConfig, Bbox, CodeRate, LdpcCode,
};

/// Accumulates named checks; the criterion passes when all of them hold.
#[derive(Default)]
struct Verdict {
    pass: bool,
    notes: Vec<String>,
}

impl Verdict {
    fn new() -> Self {
        Verdict { pass: true, notes: Vec::new() }
    }

    fn check(&mut self, ok: bool, note: impl Into<String>) {
        let note = note.into();
        self.notes.push(if ok { note } else { format!("FAILED {note}") });
        self.pass &= ok;
    }

    fn within(&mut self, started: Instant, limit: Duration) {
        let t = started.elapsed();
        self.check(t < limit, format!("runtime {:.0}s < {:.0}s", t.as_secs_f64(), limit.as_secs_f64()));
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn minutes(m: u64) -> Duration {
    Duration::from_secs(60 * m)
}

fn random_bits(rng: &mut ChaCha8Rng, n: usize) -> BitFrame {
    BitFrame { bits: (0..n).map(|_| rng.gen_range(0..2u8)).collect() }
}

fn random_points(rng: &mut ChaCha8Rng, n: usize, half: f64) -> Vec<[f64; 3]> {
    (0..n)
        .map(|_| [rng.gen_range(-half..half), rng.gen_range(-half..half), rng.gen_range(-half..half) * 0.1])
        .collect()
}

fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

// ---------------------------------------------------------------- criterion 1

fn c1_link_statistics() -> Verdict {
    let t0 = Instant::now();
    let mut v = Verdict::new();
    let mut rng = ChaCha8Rng::seed_from_u64(101);

    let awgn = LinkConfig { snr_db: 10.0, ..LinkConfig::default() };
    let s = modulate(&random_bits(&mut rng, 2_000_000), Modulation::Qpsk).unwrap();
    let (y, _) = apply_channel(&s, &awgn, &mut rng);
    let p = y.symbols.iter().zip(&s.symbols).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>() / s.len() as f64;
    v.check(rel(p, 0.1) <= 0.02, format!("AWGN noise power {p:.5} vs 0.1"));

    let ray = LinkConfig { channel: ChannelKind::Rayleigh, ..awgn.clone() };
    let one = SymbolFrame { symbols: vec![Complex64::new(1.0, 0.0)] };
    let frames = 100_000;
    let e_h = (0..frames).map(|_| apply_channel(&one, &ray, &mut rng).1.h.norm_sqr()).sum::<f64>() / frames as f64;
    v.check(rel(e_h, 1.0) <= 0.02, format!("E|h|^2 {e_h:.4}"));

    let block = modulate(&random_bits(&mut rng, 100_000), Modulation::Qpsk).unwrap();
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let (y, r) = apply_channel(&block, &ray, &mut rng);
        let (eq, _) = zf_equalize(&y, r.h);
        let measured = eq.symbols.iter().zip(&block.symbols).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>() / block.len() as f64;
        worst = worst.max(rel(measured, r.noise_var / r.h.norm_sqr()));
    }
    v.check(worst <= 0.03, format!("post-ZF noise vs sigma^2/|h|^2 worst rel {worst:.4}"));
    v.within(t0, minutes(1));
    v
}

// ---------------------------------------------------------------- criterion 2

fn q_function(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(x / std::f64::consts::SQRT_2)
}

fn c2_digital_chain() -> Verdict {
    let t0 = Instant::now();
    let mut v = Verdict::new();
    let mut rng = ChaCha8Rng::seed_from_u64(202);

    let mut exact = true;
    for m in [Modulation::Qpsk, Modulation::Qam16] {
        let bits: Vec<u8> = constellation(m).into_iter().flat_map(|(b, _)| b).collect();
        let frame = BitFrame { bits };
        let s = modulate(&frame, m).unwrap();
        for kind in [ChannelKind::Awgn, ChannelKind::Rayleigh] {
            let cfg = LinkConfig { modulation: m, channel: kind, snr_db: f64::INFINITY, ..LinkConfig::default() };
            for _ in 0..100 {
                let (y, r) = apply_channel(&s, &cfg, &mut rng);
                let (eq, _) = zf_equalize(&y, r.h);
                exact &= demodulate(&eq, m) == frame;
            }
        }
    }
    v.check(exact, "noiseless symbol roundtrip exact for every constellation point");

    let x: Vec<f64> = (0..100_000).map(|_| rng.gen_range(-1.0..=1.0)).collect();
    let bound = 1.0 / 255.0;
    let mut worst: f64 = 0.0;
    for kind in [ChannelKind::Awgn, ChannelKind::Rayleigh] {
        let cfg = LinkConfig { channel: kind, snr_db: f64::INFINITY, ..LinkConfig::default() };
        let out = transmit(&x, &cfg, &mut rng).unwrap();
        worst = worst.max(out.values.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }
    // One ulp of slack for the dequantizer's floating-point arithmetic.
    v.check(worst <= bound * (1.0 + f64::EPSILON), format!("noiseless chain max error {worst:.3e} vs 1/255"));

    // Q(sqrt(2 Eb/N0)) with Eb/N0 = Es/N0 / 2 for unit-energy QPSK.
    let total_bits = 10_000_000;
    let chunk = 1_000_000;
    for snr in [0.0, 5.0, 10.0] {
        let cfg = LinkConfig { snr_db: snr, ..LinkConfig::default() };
        let mut errors = 0usize;
        for _ in 0..total_bits / chunk {
            let frame = random_bits(&mut rng, chunk);
            let s = modulate(&frame, Modulation::Qpsk).unwrap();
            let (y, r) = apply_channel(&s, &cfg, &mut rng);
            let (eq, _) = zf_equalize(&y, r.h);
            let hat = demodulate(&eq, Modulation::Qpsk);
            errors += hat.bits.iter().zip(&frame.bits).filter(|(a, b)| a != b).count();
        }
        let ber = errors as f64 / total_bits as f64;
        let ebn0 = 10f64.powf(snr / 10.0) / 2.0;
        let theory = q_function((2.0 * ebn0).sqrt());
        v.check(rel(ber, theory) <= 0.05, format!("BER@{snr}dB {ber:.3e} vs {theory:.3e}"));
    }
    v.within(t0, minutes(5));
    v
}

// ---------------------------------------------------------------- criterion 3

fn c3_straight_through() -> Verdict {
    let t0 = Instant::now();
    let mut v = Verdict::new();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let x = Tensor::from_vec(40, 8, (0..320).map(|_| rng.gen_range(-1.3..1.3)).collect());
    let w = random_tensor(&mut rng, 40, 8);

    let mut all_bitwise = true;
    let mut worst_identity: f64 = 0.0;
    let mut worst_fd: f64 = 0.0;
    for (kind, snr) in [(ChannelKind::Awgn, 3.0), (ChannelKind::Rayleigh, 10.0), (ChannelKind::Awgn, f64::INFINITY)] {
        let cfg = LinkConfig { channel: kind, snr_db: snr, ..LinkConfig::default() };
        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let (y, _) = ste_transmit(&mut g, xv, &cfg, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let direct = transmit(&x.data, &cfg, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        all_bitwise &= g.value(y).data.iter().zip(&direct.values).all(|(a, b)| a.to_bits() == b.to_bits());

        let wc = g.constant(w.clone());
        let prod = g.mul(y, wc);
        let loss = g.sum(prod);
        let grads = g.backward(loss);
        let gx = grads.get(xv).unwrap();
        worst_identity = worst_identity.max(gx.max_abs_diff(&w));

        // Surrogate of the chain in the backward pass: the identity map.
        let surrogate = |x: &[f64]| x.iter().zip(&w.data).map(|(a, b)| a * b).sum::<f64>();
        let h = 1e-5;
        for i in (0..x.len()).step_by(7) {
            let mut p = x.data.clone();
            p[i] += h;
            let mut m = x.data.clone();
            m[i] -= h;
            let fd = (surrogate(&p) - surrogate(&m)) / (2.0 * h);
            worst_fd = worst_fd.max(rel(gx.data[i], fd));
        }
    }
    v.check(all_bitwise, "forward equals chain output bitwise");
    v.check(worst_identity == 0.0, format!("backward is the identity (max dev {worst_identity:e})"));
    v.check(worst_fd <= REL_TOL, format!("finite differences of the surrogate, worst rel {worst_fd:.2e}"));
    v.within(t0, minutes(1));
    v
}

// ---------------------------------------------------------------- criterion 4

fn exhaustive_mse(from: &[[f64; 3]], to: &[[f64; 3]]) -> f64 {
    let mut total = 0.0;
    for p in from {
        let mut best = f64::INFINITY;
        for q in to {
            let (dx, dy, dz) = (p[0] - q[0], p[1] - q[1], p[2] - q[2]);
            best = best.min(dx * dx + dy * dy + dz * dz);
        }
        total += best;
    }
    total / from.len() as f64
}

fn c4_metric_oracles() -> Verdict {
    let t0 = Instant::now();
    let mut v = Verdict::new();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut mismatches = 0;
    for _ in 0..100 {
        let n = rng.gen_range(1..=500);
        let m = rng.gen_range(1..=500);
        let a = random_points(&mut rng, n, 30.0);
        let b = random_points(&mut rng, m, 30.0);
        let (pa, pb) = (PointCloud::new(a.clone()).unwrap(), PointCloud::new(b.clone()).unwrap());
        let (ab, ba) = (exhaustive_mse(&a, &b), exhaustive_mse(&b, &a));
        if point_to_point_mse(&pa, &pb).unwrap() != (ab, ba) || chamfer(&pa, &pb).unwrap() != ab + ba {
            mismatches += 1;
        }
    }
    v.check(mismatches == 0, format!("chamfer/point_to_point_mse equal the O(N^2) oracle on 100 pairs ({mismatches} mismatches)"));

    let direct = psnr_from_mse(0.003, 1.0);
    v.check(direct == 30.0, format!("psnr(mse = 0.003, peak 1) = {direct}"));
    let p = PointCloud::new(vec![[0.0, 0.0, 0.0]]).unwrap();
    let q = PointCloud::new(vec![[0.0, 0.003f64.sqrt(), 0.0]]).unwrap();
    let (e1, e2) = point_to_point_mse(&p, &q).unwrap();
    let from_clouds = d1_psnr(&p, &q, 1.0).unwrap();
    // The cloud pair only reaches mse = 0.003 up to the rounding of sqrt(0.003)^2.
    v.check(
        from_clouds == psnr_from_mse(e1.max(e2), 1.0) && (from_clouds - 30.0).abs() < 1e-12,
        format!("d1_psnr of a cloud pair = {from_clouds:.6} (max mse {:.6})", e1.max(e2)),
    );
    v.within(t0, minutes(1));
    v
}

// ---------------------------------------------------------------- criterion 5

fn summarize(reports: &[GradCheckReport]) -> (f64, String) {
    let worst = reports.iter().max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error)).unwrap();
    let refined: usize = reports.iter().map(|r| r.refined).sum();
    let probed: usize = reports.iter().map(|r| r.checked).sum();
    (
        worst.max_rel_error,
        format!(
            "{} tensors, worst {} {:.2e}, {refined}/{probed} entries needed a smaller step",
            reports.len(),
            worst.name,
            worst.max_rel_error
        ),
    )
}

fn covers(reports: &[GradCheckReport], store: &ParamStore, prefix: &str) -> bool {
    store.names().filter(|n| n.starts_with(prefix)).all(|n| reports.iter().any(|r| r.name == n))
}

fn c5_gradients() -> Verdict {
    let t0 = Instant::now();
    let mut v = Verdict::new();
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let codec = CodecConfig {
        hidden_dims: vec![4, 5, 6],
        bottleneck_dim: 3,
        k_neighbors: 4,
        k_max: 5,
        ..CodecConfig::default()
    };
    let model = ModelConfig { codec: codec.clone(), ..ModelConfig::default() }.normalized();
    let mut store = init_model(&model, &mut rng).unwrap();
    // Zero-initialized output maps would hide every upstream fusion gradient.
    Linear::init(&mut store, "fusion.out", 3, 3, &mut rng);

    let pts = random_points(&mut rng, 128, 20.0);
    let enc = check_params(&store, &["feature_enc."], 4, |g| {
        let t = encode_graph(g, &pts, &codec).unwrap();
        let sq = g.mul(t.feats, t.feats);
        g.sum(sq)
    });
    let (e, note) = summarize(&enc);
    let named = ["gamma", "phi", "psi", "alpha", "theta", "beta"].iter().all(|n| enc.iter().any(|r| r.name.contains(n)));
    v.check(e <= REL_TOL && named && covers(&enc, &store, "feature_enc."), format!("encoder: {note}"));

    let coords = random_points(&mut rng, 4, 10.0);
    let feats = random_tensor(&mut rng, 4, 3);
    let dec = check_params(&store, &["feature_dec."], 4, |g| {
        let f = g.constant(feats.clone());
        let t = decode_graph(g, &coords, f, &codec, &DecodeOptions::default()).unwrap();
        let n = g.shape(t.points).0;
        let target = g.constant(Tensor::from_vec(n, 3, (0..n * 3).map(|i| (i % 5) as f64 * 0.3).collect()));
        let d = g.sub(t.points, target);
        let sq = g.mul(d, d);
        let mut acc = g.mean(sq);
        for st in &t.stages {
            let p = g.row_softmax(st.nodes.count_logits);
            let pp = g.mul(p, p);
            let s1 = g.sum(pp);
            acc = g.add(acc, s1);
            let cf = g.tanh(st.nodes.child_feats);
            let s2 = g.mean(cf);
            acc = g.add(acc, s2);
        }
        acc
    });
    let (e, note) = summarize(&dec);
    let named = ["offset", "count", "radius"].iter().all(|n| dec.iter().any(|r| r.name.contains(n)));
    v.check(e <= REL_TOL && named && covers(&dec, &store, "feature_dec."), format!("decoder (K and offset heads): {note}"));

    let cc = model.channel;
    let ch = check_params(&store, &["channel_enc.", "channel_dec."], 6, |g| {
        let f = g.constant(feats.clone());
        let y = channel_encode_graph(g, &cc, &coords, f, 4.0);
        let z = channel_decode_graph(g, &cc, &coords, y, 4.0);
        let sq = g.mul(z, z);
        g.sum(sq)
    });
    let (e, note) = summarize(&ch);
    let named = ["xi", "query", "key"].iter().all(|n| ch.iter().any(|r| r.name.contains(n)));
    v.check(
        e <= REL_TOL && named && covers(&ch, &store, "channel_enc.") && covers(&ch, &store, "channel_dec."),
        format!("channel codec: {note}"),
    );

    let rx_coords = random_points(&mut rng, 5, 10.0);
    let rx_feats = random_tensor(&mut rng, 5, 3);
    let fu = check_params(&store, &["fusion."], 6, |g| {
        let a = g.constant(feats.clone());
        let b = g.constant(rx_feats.clone());
        let (y, _) = fuse_graph(g, &cc, &coords, a, &rx_coords, b, 2.0);
        let sq = g.mul(y, y);
        g.sum(sq)
    });
    let (e, note) = summarize(&fu);
    v.check(e <= REL_TOL && covers(&fu, &store, "fusion."), format!("fusion: {note}"));
    v.within(t0, minutes(5));
    v
}

// ---------------------------------------------------------------- criterion 6

fn worst_group_sum(w: &Tensor, group: usize) -> f64 {
    let mut worst: f64 = 0.0;
    for g0 in (0..w.rows).step_by(group) {
        for c in 0..w.cols {
            let s: f64 = (g0..g0 + group).map(|r| w.get(r, c)).sum();
            worst = worst.max((s - 1.0).abs());
        }
    }
    worst
}

fn permuted(lat: &LatentRepresentation, perm: &[usize]) -> LatentRepresentation {
    LatentRepresentation {
        coords: perm.iter().map(|&i| lat.coords[i]).collect(),
        feats: perm.iter().flat_map(|&i| lat.feat_row(i).to_vec()).collect(),
        dim: lat.dim,
    }
}

fn c6_attention() -> Verdict {
    let t0 = Instant::now();
    let mut v = Verdict::new();
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let model = ModelConfig {
        codec: CodecConfig { hidden_dims: vec![16, 32, 64], ..CodecConfig::default() },
        ..ModelConfig::default()
    }
    .normalized();
    let mut store = init_model(&model, &mut rng).unwrap();
    Linear::init(&mut store, "fusion.out", 8, 8, &mut rng);

    let pts = random_points(&mut rng, 1024, 40.0);
    let mut g = Graph::with_params(&store);
    let trace = encode_graph(&mut g, &pts, &model.codec).unwrap();
    let mut worst: f64 = 0.0;
    for (s, w) in trace.attention.iter().enumerate() {
        let queries = trace.levels[s + 1].len();
        let w = g.value(*w);
        worst = worst.max(worst_group_sum(w, w.rows / queries));
    }
    v.check(worst <= 1e-6, format!("point transformer weights sum to 1 (worst {worst:.1e})"));

    let lat = LatentRepresentation {
        coords: random_points(&mut rng, 32, 40.0),
        feats: (0..32 * 8).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        dim: 8,
    };
    let cc = model.channel;
    let mut worst: f64 = 0.0;
    for prefix in [ENCODER_PREFIX, DECODER_PREFIX] {
        let block = AttentionBlock::bind(prefix, 8);
        let f = g.constant(Tensor::from_vec(32, 8, lat.feats.clone()));
        let e = unify_embeddings(&mut g, &block, &cc, &lat.coords, f, 5.0);
        let (_, w) = channel_attend(&mut g, &block, &cc, e, f, &lat.coords);
        worst = worst.max(worst_group_sum(g.value(w), 32));
    }
    let rx = LatentRepresentation {
        coords: random_points(&mut rng, 24, 40.0),
        feats: (0..24 * 8).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        dim: 8,
    };
    let ft = g.constant(Tensor::from_vec(32, 8, lat.feats.clone()));
    let fr = g.constant(Tensor::from_vec(24, 8, rx.feats.clone()));
    let (_, w) = fuse_graph(&mut g, &cc, &lat.coords, ft, &rx.coords, fr, 5.0);
    worst = worst.max(worst_group_sum(g.value(w), 24));
    v.check(worst <= 1e-6, format!("channel codec and fusion weights sum to 1 (worst {worst:.1e})"));

    let mut equivariant = true;
    for _ in 0..10 {
        let mut perm: Vec<usize> = (0..32).collect();
        rand::seq::SliceRandom::shuffle(&mut perm[..], &mut rng);
        let p = permuted(&lat, &perm);
        let (a, b) = (channel_encode(&lat, 5.0, &cc, &store), channel_encode(&p, 5.0, &cc, &store));
        let (c, d) = (channel_decode(&lat, 5.0, &cc, &store), channel_decode(&p, 5.0, &cc, &store));
        for (r, &i) in perm.iter().enumerate() {
            equivariant &= b.feat_row(r) == a.feat_row(i) && d.feat_row(r) == c.feat_row(i);
        }
    }
    v.check(equivariant, "channel encoder and decoder are permutation-equivariant (bitwise)");

    let base = fuse(&lat, &rx, 5.0, &cc, &store);
    let mut invariant = true;
    for _ in 0..10 {
        let mut perm: Vec<usize> = (0..24).collect();
        rand::seq::SliceRandom::shuffle(&mut perm[..], &mut rng);
        invariant &= fuse(&lat, &permuted(&rx, &perm), 5.0, &cc, &store).feats == base.feats;
    }
    v.check(invariant, "fusion is invariant to receiver permutations (bitwise)");
    v.within(t0, minutes(1));
    v
}

// ---------------------------------------------------------------- criterion 7

fn c7_codec_structure() -> Verdict {
    let t0 = Instant::now();
    let mut v = Verdict::new();
    let model = ModelConfig::default();
    let c = &model.codec;
    v.check(
        c.n_stages == 3 && c.downsample_factor == 4 && c.bottleneck_dim == 8 && model.link.bits == 8,
        "default codec: 3 stages, f_s = 4, C = 8, b = 8",
    );
    v.check(model.bpp(2048).unwrap() == 1.0 && bpp(32, 8, 8, 2048) == 1.0, "bpp = 1.0 at N = 2048");

    let frames = synth_dataset(7_000, 10, &SceneParams::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let random = init_model(&model, &mut rng).unwrap();
    // Saturated heads: every parent asks for K_max children at the largest radius.
    let mut saturated = random.clone();
    for t in 0..c.n_stages {
        let b = saturated.get_mut(&format!("feature_dec.b{t}.count.b")).unwrap();
        b.data.iter_mut().for_each(|x| *x = 0.0);
        b.data[c.k_max - 1] = 50.0;
        saturated.get_mut(&format!("feature_dec.b{t}.radius.b")).unwrap().data[0] = 30.0;
    }

    let mut shapes_ok = true;
    let mut k_ok = true;
    let mut worst_offset: f64 = 0.0;
    let mut worst_radius: f64 = 0.0;
    for params in [&random, &saturated] {
        for pair in &frames {
            shapes_ok &= pair.tx.len() == 2048;
            let lat = encode(&pair.tx, c, params).unwrap();
            shapes_ok &= lat.coords.len() == 32 && lat.dim == 8 && lat.feats.len() == 32 * 8;
            let mut g = Graph::with_params(params);
            let f = g.constant(Tensor::from_vec(lat.len(), lat.dim, lat.feats.clone()));
            let trace = decode_graph(&mut g, &lat.coords, f, c, &DecodeOptions::default()).unwrap();
            for st in &trace.stages {
                let n = &st.nodes;
                k_ok &= n.k.iter().all(|&k| (1..=c.k_max).contains(&k));
                let radius = g.value(n.radius);
                let children = g.value(n.children).to_points();
                let mut row = 0;
                for (i, parent) in st.parents.iter().enumerate() {
                    let r = radius.get(i, 0);
                    worst_radius = worst_radius.max(r / c.r_max);
                    for child in &children[row..row + n.k[i]] {
                        let d = ((child[0] - parent[0]).powi(2) + (child[1] - parent[1]).powi(2) + (child[2] - parent[2]).powi(2)).sqrt();
                        worst_offset = worst_offset.max(d / r);
                    }
                    row += n.k[i];
                }
            }
        }
    }
    v.check(shapes_ok, "latent 32 x 3 coordinates + 32 x 8 features on every frame");
    v.check(k_ok, "1 <= K_i <= K_max on every parent");
    v.check(
        worst_offset <= 1.0 + 1e-12 && worst_radius <= 1.0,
        format!("offsets within r_i (worst |o|/r {worst_offset:.4}), r_i <= r_max (worst {worst_radius:.4})"),
    );
    v.within(t0, minutes(5));
    v
}

// ---------------------------------------------------------------- criterion 8

fn c8_baseline() -> Verdict {
    let t0 = Instant::now();
    let mut v = Verdict::new();
    let mut rng = ChaCha8Rng::seed_from_u64(808);

    let bbox = Bbox::new([-64.0, -64.0, -64.0], [64.0, 64.0, 64.0]).unwrap();
    let mut worst: f64 = 0.0;
    for depth in 6..=12u8 {
        for _ in 0..5 {
            let n = rng.gen_range(1..=2000);
            let pts: Vec<[f64; 3]> = (0..n).map(|_| [rng.gen_range(-64.0..64.0), rng.gen_range(-64.0..64.0), rng.gen_range(-64.0..64.0)]).collect();
            let pc = PointCloud::new(pts).unwrap();
            let rec = octree_decode(&octree_encode(&pc, depth, &bbox).unwrap()).unwrap();
            let half = bbox.cell_diagonal(depth) / 2.0;
            let (_, there) = nearest_indices(rec.points(), pc.points());
            let (_, back) = nearest_indices(pc.points(), rec.points());
            let e = there.iter().chain(&back).fold(0.0f64, |m, d| m.max(d.sqrt()));
            worst = worst.max(e / half);
        }
    }
    v.check(worst <= 1.0, format!("octree roundtrip within half a leaf diagonal, depths 6-12 (worst ratio {worst:.4})"));

    let code = LdpcCode::new(1024, CodeRate::Half, 0).unwrap();
    let cfg = LinkConfig { snr_db: 5.0, ..LinkConfig::default() };
    let mut errors = 0usize;
    let mut sent = 0usize;
    while sent < 1_000_000 {
        let payload: Vec<u8> = (0..code.k).map(|_| rng.gen_range(0..2u8)).collect();
        let word = code.encode(&payload).unwrap();
        let s = modulate(&BitFrame { bits: word }, Modulation::Qpsk).unwrap();
        let (y, r) = apply_channel(&s, &cfg, &mut rng);
        let (eq, _) = zf_equalize(&y, r.h);
        let out = code.decode(&llrs(&eq, r.noise_var, Modulation::Qpsk)).unwrap();
        errors += out.payload.iter().zip(&payload).filter(|(a, b)| a != b).count();
        sent += code.k;
    }
    let ber = errors as f64 / sent as f64;
    v.check(ber < 1e-5, format!("LDPC 1/2 residual BER at 5 dB {ber:.1e} over {sent} bits"));

    let clouds: Vec<PointCloud> = synth_dataset(8_000, 20, &SceneParams::default()).unwrap().into_iter().map(|p| p.tx).collect();
    let depth = 10;
    let awgn = BaselineConfig::new(depth, CodeRate::Half, LinkConfig::default());
    let snrs: Vec<f64> = (-6..=10).map(f64::from).collect();
    let sweep = baseline_sweep(&clouds, &awgn, &snrs, 81, "baseline").unwrap();
    let summary = sweep.summary();
    let threshold = summary.iter().find(|s| s.failures * 2 <= s.frames).map(|s| s.snr_db);
    match threshold {
        Some(t) if t - 4.0 >= snrs[0] && t + 4.0 <= *snrs.last().unwrap() => {
            let (lo, hi) = (sweep.at(t - 4.0).unwrap().mean_cd, sweep.at(t + 4.0).unwrap().mean_cd);
            v.check(lo / hi >= 10.0, format!("AWGN cliff at {t} dB (depth {depth}): CD {lo:.4} -> {hi:.4}, ratio {:.0}", lo / hi));
        }
        other => v.check(false, format!("AWGN threshold {other:?} not inside the swept range")),
    }
    let matched = depth_for_bpp(&clouds, &Bbox::crop_box(), 1.0).unwrap();
    let at_rate = baseline_sweep(&clouds[..5], &BaselineConfig::new(matched, CodeRate::Half, LinkConfig::default()), &[-6.0, 10.0], 82, "b").unwrap();
    v.notes.push(format!(
        "info: at the 1 bpp depth {matched} the same sweep spans CD {:.3} -> {:.3}",
        at_rate.at(-6.0).unwrap().mean_cd,
        at_rate.at(10.0).unwrap().mean_cd
    ));

    let ray = BaselineConfig::new(depth, CodeRate::Half, LinkConfig { channel: ChannelKind::Rayleigh, ..LinkConfig::default() });
    let mut cds = Vec::new();
    let mut failures = 0;
    for seed in 0..5 {
        let rep = baseline_sweep(&clouds, &ray, &[15.0], 90 + seed, "rayleigh").unwrap();
        failures += rep.records.iter().filter(|r| r.failed).count();
        cds.extend(rep.records.iter().map(|r| r.cd));
    }
    let (mean, median) = lpcft::metrics::mean_median(&cds);
    v.check(
        mean >= 5.0 * median,
        format!("Rayleigh 15 dB over {} frames: mean CD {mean:.4} vs median {median:.4} ({failures} failed)", cds.len()),
    );
    v.within(t0, minutes(20));
    v
}

// ------------------------------------------------------- shared training runs

const TRAIN_PAIRS: usize = 200;
const SUBSET: usize = 50;
const TEST_PAIRS: usize = 20;
const EPOCHS: usize = 20;
const EVAL_SEED: u64 = 900;

struct Data {
    model: ModelConfig,
    train: Vec<ScenePair>,
    test: Vec<ScenePair>,
}

/// Full-resolution scenes; the transformer widths are reduced to fit a CPU budget.
fn data() -> &'static Data {
    static D: OnceLock<Data> = OnceLock::new();
    D.get_or_init(|| {
        let params = SceneParams::default();
        Data {
            model: ModelConfig {
                codec: CodecConfig { hidden_dims: vec![16, 32, 64], ..CodecConfig::default() },
                ..ModelConfig::default()
            }
            .normalized(),
            train: synth_dataset(0, TRAIN_PAIRS, &params).unwrap(),
            test: synth_dataset(10_000, TEST_PAIRS, &params).unwrap(),
        }
    })
}

fn pretrain_cfg() -> TrainConfig {
    TrainConfig { epochs: EPOCHS, seed: 1, ..TrainConfig::pretrain() }
}

fn finetune_cfg(snr: SnrMode) -> TrainConfig {
    TrainConfig { epochs: EPOCHS, snr_mode: snr, channel: ChannelKind::Awgn, seed: 2, ..TrainConfig::finetune() }
}

fn timed<T>(what: &str, f: impl FnOnce() -> T) -> T {
    let t = Instant::now();
    let out = f();
    println!("    ({what}: {:.0}s)", t.elapsed().as_secs_f64());
    out
}

fn stage_one() -> &'static TrainOutcome {
    static P: OnceLock<TrainOutcome> = OnceLock::new();
    P.get_or_init(|| {
        let d = data();
        timed("stage one, 200 pairs", || pretrain(&d.train, &d.model, &pretrain_cfg()).unwrap())
    })
}

fn stage_one_subset() -> &'static Checkpoint {
    static P: OnceLock<Checkpoint> = OnceLock::new();
    P.get_or_init(|| {
        let d = data();
        timed("stage one, 50 pairs", || pretrain(&d.train[..SUBSET], &d.model, &pretrain_cfg()).unwrap().checkpoint)
    })
}

fn mean_cd_at(params: &ParamStore, model: &ModelConfig, snr: f64) -> f64 {
    let plan = EvalPlan::link(&[snr], ChannelKind::Awgn, EVAL_SEED);
    evaluate(params, model, &data().test, &plan, "eval").unwrap().at(snr).unwrap().mean_cd
}

fn losses(log: &[EpochLog]) -> String {
    log.iter().map(|l| format!("{:.3}", l.mean_loss)).collect::<Vec<_>>().join(" ")
}

// ---------------------------------------------------------------- criterion 9

fn c9_training() -> Verdict {
    let t0 = Instant::now();
    let mut v = Verdict::new();
    let d = data();
    let p1 = stage_one();
    let (first, last) = (p1.log[0].mean_cd, p1.log[EPOCHS - 1].mean_cd);
    v.check(
        last < 0.6 * first,
        format!("stage one mean CD {first:.3} -> {last:.3} by epoch {EPOCHS} (ratio {:.3})", last / first),
    );

    let tuned = timed("stage two at 5 dB, 200 pairs", || {
        finetune(&d.train, &d.model, &finetune_cfg(SnrMode::Fixed(5.0)), FinetuneInit::Pretrained(&p1.checkpoint)).unwrap()
    });
    let frozen = mean_cd_at(&p1.checkpoint.params, &d.model.clone().frozen_stage_one(), 5.0);
    let ours = mean_cd_at(&tuned.checkpoint.params, &d.model, 5.0);
    v.check(ours < frozen, format!("test CD at 5 dB: stage two {ours:.4} vs frozen stage one {frozen:.4}"));
    v.within(t0, minutes(240));
    v
}

// --------------------------------------------------------------- criterion 10

fn ablation() -> &'static Vec<AblationResult> {
    static A: OnceLock<Vec<AblationResult>> = OnceLock::new();
    A.get_or_init(|| {
        let d = data();
        let plan = AblationPlan {
            base: d.model.clone(),
            pretrain: pretrain_cfg(),
            finetune: finetune_cfg(SnrMode::Uniform(0.0, 10.0)),
            train: &d.train[..SUBSET],
            test: &d.test,
            eval: EvalPlan::link(&[0.0, 5.0, 10.0], ChannelKind::Awgn, EVAL_SEED),
        };
        let axes = [AblationAxis::AbsPos, AblationAxis::ChannelCodec, AblationAxis::Fusion];
        timed("ablations", || run_ablation(&plan, &axes, Some(stage_one_subset())).unwrap())
    })
}

fn c10_orderings() -> Verdict {
    let t0 = Instant::now();
    let mut v = Verdict::new();
    let d = data();
    let subset = &d.train[..SUBSET];

    let results = ablation();
    let cd0: Vec<(String, f64)> = results.iter().map(|r| (r.label.clone(), r.report.at(0.0).unwrap().mean_cd)).collect();
    let full = cd0[0].1;
    let table = cd0.iter().map(|(l, c)| format!("{l} {c:.4}")).collect::<Vec<_>>().join(", ");
    v.check(cd0[1..].iter().all(|(_, c)| full <= *c), format!("(a) CD at 0 dB: {table}"));

    let rep = &results[0].report;
    let at = |s: f64| rep.at(s).unwrap().mean_cd;
    let (c0, c5, c10) = (at(0.0), at(5.0), at(10.0));
    v.check(c10 <= c5 && c5 <= c0, format!("(b) full model CD 10/5/0 dB: {c10:.4} / {c5:.4} / {c0:.4}"));

    let p = stage_one_subset();
    let cfg10 = finetune_cfg(SnrMode::Fixed(10.0));
    let warm = timed("10 dB from stage one", || finetune(subset, &d.model, &cfg10, FinetuneInit::Pretrained(p)).unwrap());
    let cold = timed("10 dB from scratch", || finetune(subset, &d.model, &cfg10, FinetuneInit::Scratch).unwrap());
    let dominates = warm.log.iter().zip(&cold.log).all(|(a, b)| a.mean_loss <= b.mean_loss);
    v.check(dominates, format!("(c) loss per epoch, pretrained [{}] vs scratch [{}]", losses(&warm.log), losses(&cold.log)));

    let cfg5 = finetune_cfg(SnrMode::Fixed(5.0));
    let with_tanh = d.model.clone();
    let mut without = d.model.clone();
    without.channel = ChannelCodecConfig { activation: Activation::None, ..without.channel };
    let t = timed("5 dB with tanh", || finetune(subset, &with_tanh, &cfg5, FinetuneInit::Pretrained(p)).unwrap());
    let n = timed("5 dB without activation", || finetune(subset, &without, &cfg5, FinetuneInit::Pretrained(p)));
    let t_finite = t.log.iter().all(|l| l.mean_loss.is_finite());
    let t_last = t.log.last().unwrap().mean_loss;
    let t_cd = mean_cd_at(&t.checkpoint.params, &with_tanh, 5.0);
    let t_converges = t_finite && t_last < t.log[0].mean_loss;
    match n {
        Err(e) => v.check(t_converges, format!("(d) tanh converges [{}]; none diverged: {e}", losses(&t.log))),
        Ok(n) => {
            let n_last = n.log.last().unwrap().mean_loss;
            let n_cd = mean_cd_at(&n.checkpoint.params, &without, 5.0);
            v.check(
                t_converges && n_last > t_last && n_cd > t_cd,
                format!(
                    "(d) tanh [{}] test CD {t_cd:.4}; none [{}] test CD {n_cd:.4}",
                    losses(&t.log),
                    losses(&n.log)
                ),
            );
        }
    }
    v.notes.push(format!("runtime {:.0}s", t0.elapsed().as_secs_f64()));
    v
}

// ---------------------------------------------------------------------- main

type Criterion = (u32, &'static str, fn() -> Verdict);

fn main() {
    let criteria: [Criterion; 10] = [
        (1, "link statistics", c1_link_statistics),
        (2, "digital chain fidelity", c2_digital_chain),
        (3, "straight-through estimator", c3_straight_through),
        (4, "metric oracles", c4_metric_oracles),
        (5, "gradient suite", c5_gradients),
        (6, "attention normalization and equivariance", c6_attention),
        (7, "codec structure", c7_codec_structure),
        (8, "octree + LDPC baseline", c8_baseline),
        (9, "training viability", c9_training),
        (10, "qualitative orderings", c10_orderings),
    ];
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    if std::env::args().any(|a| a == "--list") {
        for (n, name, _) in &criteria {
            println!("criterion_{n:02}_{}: test", name.replace(' ', "_"));
        }
        return;
    }
    let mut failed = Vec::new();
    for (n, name, run) in criteria {
        if !wanted.is_empty() && !wanted.contains(&n) {
            continue;
        }
        let t = Instant::now();
        let verdict = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Verdict { pass: false, notes: vec![format!("panicked: {}", msg.unwrap_or_default())] }
        });
        let status = if verdict.pass { "PASS" } else { "FAIL" };
        println!("criterion {n:>2} {status} [{name}] ({:.1}s)", t.elapsed().as_secs_f64());
        for note in &verdict.notes {
            println!("    {note}");
        }
        if !verdict.pass {
            failed.push(n);
        }
    }
    if !failed.is_empty() {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
    println!("acceptance: all selected criteria passed");
}
