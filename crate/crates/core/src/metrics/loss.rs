//! Differentiable training objective: Chamfer reconstruction term, local
//! density term and child-count (cardinality) term.
//!
//! Nearest-neighbor assignments are read off the current values and held
//! fixed within a step, so gradients flow through the matched coordinates.

use crate::nn::{Graph, Tensor, Var};
use crate::pcdata::{knn_points, nearest_indices};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub alpha_density: f64,
    pub beta_cardinality: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha_density: 5e-4,
            beta_cardinality: 5e-6,
        }
    }
}

impl LossWeights {
    pub fn zero() -> Self {
        LossWeights {
            alpha_density: 0.0,
            beta_cardinality: 0.0,
        }
    }
}

fn points_tensor(p: &[[f64; 3]]) -> Tensor {
    Tensor::from_vec(p.len(), 3, p.iter().flatten().copied().collect())
}

/// `e_PQ + e_QP` between `gt` and the rows of `recon` (M x 3).
pub fn chamfer_loss(g: &mut Graph, recon: Var, gt: &[[f64; 3]]) -> Var {
    let rp = g.value(recon).to_points();
    let (to_recon, _) = nearest_indices(&rp, gt);
    let (to_gt, _) = nearest_indices(gt, &rp);

    let matched = g.gather(recon, to_recon);
    let gt_t = g.constant(points_tensor(gt));
    let d = g.sub(matched, gt_t);
    let sq = g.mul(d, d);
    let s = g.sum(sq);
    let e_pq = g.scale(s, 1.0 / gt.len() as f64);

    let targets: Vec<[f64; 3]> = to_gt.iter().map(|&i| gt[i]).collect();
    let tt = g.constant(points_tensor(&targets));
    let d = g.sub(recon, tt);
    let sq = g.mul(d, d);
    let s = g.sum(sq);
    let e_qp = g.scale(s, 1.0 / rp.len() as f64);
    g.add(e_pq, e_qp)
}

/// Up to `k` nearest other points within `radius` for every point.
fn neighborhoods(pts: &[[f64; 3]], radius: f64, k: usize) -> Vec<Vec<(usize, f64)>> {
    let kk = (k + 1).min(pts.len());
    let nn = knn_points(pts, pts, kk).expect("kk is within bounds");
    (0..pts.len())
        .map(|i| {
            nn.row(i)
                .iter()
                .zip(nn.row_distances(i))
                .filter(|(j, d)| **j != i && **d <= radius)
                .take(k)
                .map(|(j, d)| (*j, *d))
                .collect()
        })
        .collect()
}

/// Values of the two density sub-terms, averaged over ground-truth points.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DensityTerms {
    pub cardinality: f64,
    pub distance: f64,
}

/// Each ground-truth point is paired with its nearest reconstructed point.
/// Per pair the squared difference of neighborhood sizes (divided by `k`)
/// and of mean neighbor distances is taken; the result is their mean.
pub fn density_loss(g: &mut Graph, recon: Var, gt: &[[f64; 3]], radius: f64, k: usize) -> (Var, DensityTerms) {
    let rp = g.value(recon).to_points();
    let (matched, _) = nearest_indices(&rp, gt);
    let gt_nb = neighborhoods(gt, radius, k);
    let rc_nb = neighborhoods(&rp, radius, k);

    let mut src = Vec::new();
    let mut dst = Vec::new();
    let mut inv_count = vec![0.0; rp.len()];
    for (j, nb) in rc_nb.iter().enumerate() {
        for &(o, _) in nb {
            src.push(j);
            dst.push(o);
        }
        if !nb.is_empty() {
            inv_count[j] = 1.0 / nb.len() as f64;
        }
    }

    let n = gt.len() as f64;
    let mut card = 0.0;
    let mut gt_mean = Vec::with_capacity(gt.len());
    for (i, nb) in gt_nb.iter().enumerate() {
        let c_gt = nb.len() as f64 / k as f64;
        let c_rc = rc_nb[matched[i]].len() as f64 / k as f64;
        card += (c_gt - c_rc).powi(2);
        gt_mean.push(if nb.is_empty() {
            0.0
        } else {
            nb.iter().map(|(_, d)| d).sum::<f64>() / nb.len() as f64
        });
    }
    card /= n;

    let mean_rc = if src.is_empty() {
        g.constant(Tensor::zeros(rp.len(), 1))
    } else {
        let a = g.gather(recon, src.clone());
        let b = g.gather(recon, dst);
        let d = g.sub(a, b);
        let sq = g.mul(d, d);
        let d2 = g.sum_cols(sq);
        let dist = g.sqrt_eps(d2);
        let per = g.segment_sum(dist, src, rp.len());
        let inv = g.constant(Tensor::column(&inv_count));
        g.mul(per, inv)
    };
    let at_gt = g.gather(mean_rc, matched);
    let target = g.constant(Tensor::column(&gt_mean));
    let diff = g.sub(at_gt, target);
    let sq = g.mul(diff, diff);
    let s = g.sum(sq);
    let dist_term = g.scale(s, 1.0 / n);
    let distance = g.value(dist_term).item();
    let card_c = g.constant(Tensor::scalar(card));
    let total = g.add(dist_term, card_c);
    (
        total,
        DensityTerms {
            cardinality: card,
            distance,
        },
    )
}

/// Mean squared difference between predicted and reference child counts.
pub fn cardinality_mse(predicted: &[f64], reference: &[f64]) -> f64 {
    assert_eq!(predicted.len(), reference.len());
    predicted
        .iter()
        .zip(reference)
        .map(|(p, r)| (p - r).powi(2))
        .sum::<f64>()
        / predicted.len().max(1) as f64
}

/// Per decoder stage: expected count under the softmax of the count logits
/// (parents x `k_max`) against reference counts clamped to `[1, k_max]`.
/// Averaged over stages.
pub fn cardinality_loss(g: &mut Graph, stages: &[(Var, Vec<f64>)], k_max: usize) -> Var {
    assert!(!stages.is_empty(), "cardinality loss needs at least one stage");
    let ks: Vec<f64> = (1..=k_max).map(|v| v as f64).collect();
    let kcol = g.constant(Tensor::column(&ks));
    let mut acc = None;
    for (logits, counts) in stages {
        assert_eq!(g.shape(*logits), (counts.len(), k_max), "count logits shape");
        let probs = g.row_softmax(*logits);
        let ek = g.matmul(probs, kcol);
        let clamped: Vec<f64> = counts.iter().map(|c| c.clamp(1.0, k_max as f64)).collect();
        let t = g.constant(Tensor::column(&clamped));
        let d = g.sub(ek, t);
        let sq = g.mul(d, d);
        let m = g.mean(sq);
        acc = Some(match acc {
            None => m,
            Some(a) => g.add(a, m),
        });
    }
    let sum = acc.unwrap();
    g.scale(sum, 1.0 / stages.len() as f64)
}

/// Graph node of the full objective plus the value of each term.
#[derive(Clone, Copy, Debug)]
pub struct LossParts {
    pub total: Var,
    pub chamfer: f64,
    pub density: DensityTerms,
    pub cardinality: f64,
}

/// `L_cha + alpha * L_den + beta * L_card`. Terms with a zero weight are not built.
pub fn total_loss(
    g: &mut Graph,
    recon: Var,
    gt: &[[f64; 3]],
    stages: &[(Var, Vec<f64>)],
    weights: &LossWeights,
    density_radius: f64,
    density_k: usize,
    k_max: usize,
) -> LossParts {
    let cha = chamfer_loss(g, recon, gt);
    let chamfer = g.value(cha).item();
    let mut total = cha;
    let mut density = DensityTerms::default();
    let mut cardinality = 0.0;
    if weights.alpha_density != 0.0 {
        let (d, terms) = density_loss(g, recon, gt, density_radius, density_k);
        density = terms;
        let w = g.scale(d, weights.alpha_density);
        total = g.add(total, w);
    }
    if weights.beta_cardinality != 0.0 && !stages.is_empty() {
        let c = cardinality_loss(g, stages, k_max);
        cardinality = g.value(c).item();
        let w = g.scale(c, weights.beta_cardinality);
        total = g.add(total, w);
    }
    LossParts {
        total,
        chamfer,
        density,
        cardinality,
    }
}
