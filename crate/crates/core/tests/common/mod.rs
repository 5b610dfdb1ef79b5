//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use emoforge_core::adapter::AdapterParams;
use image::RgbImage;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| (rng.random::<f64>() * 2.0 - 1.0) * scale)
}

pub fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    assert_eq!(a.dim(), b.dim());
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn matmul(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let (n, m, p) = (a.nrows(), a.ncols(), b.ncols());
    let mut out = Array2::zeros((n, p));
    for i in 0..n {
        for j in 0..p {
            let mut s = 0.0;
            for k in 0..m {
                s += a[[i, k]] * b[[k, j]];
            }
            out[[i, j]] = s;
        }
    }
    out
}

/// softmax(Q Kᵀ / √d_k) V with explicit loops.
pub fn naive_attention(q: &Array2<f64>, k: &Array2<f64>, v: &Array2<f64>, dk: usize) -> Array2<f64> {
    let mut out = Array2::zeros((q.nrows(), v.ncols()));
    for i in 0..q.nrows() {
        let mut logits = Vec::with_capacity(k.nrows());
        for j in 0..k.nrows() {
            let mut dot = 0.0;
            for c in 0..q.ncols() {
                dot += q[[i, c]] * k[[j, c]];
            }
            logits.push(dot / (dk as f64).sqrt());
        }
        let denom: f64 = logits.iter().map(|l| l.exp()).sum();
        for j in 0..k.nrows() {
            let w = logits[j].exp() / denom;
            for c in 0..v.ncols() {
                out[[i, c]] += w * v[[j, c]];
            }
        }
    }
    out
}

fn columns(m: &Array2<f64>, from: usize, to: usize) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), to - from), |(i, j)| m[[i, from + j]])
}

/// Multi-head attention without output projection, head outputs placed side by side.
pub fn naive_mha(
    x_query: &Array2<f64>,
    x_kv: &Array2<f64>,
    wq: &Array2<f64>,
    wk: &Array2<f64>,
    wv: &Array2<f64>,
    heads: usize,
) -> Array2<f64> {
    let d = wq.ncols();
    let dk = d / heads;
    let (q, k, v) = (matmul(x_query, wq), matmul(x_kv, wk), matmul(x_kv, wv));
    let mut out = Array2::zeros((x_query.nrows(), d));
    for h in 0..heads {
        let (a, b) = (h * dk, (h + 1) * dk);
        let o = naive_attention(&columns(&q, a, b), &columns(&k, a, b), &columns(&v, a, b), dk);
        for i in 0..o.nrows() {
            for j in 0..dk {
                out[[i, a + j]] = o[[i, j]];
            }
        }
    }
    out
}

pub fn stack_rows(top: &Array2<f64>, bottom: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros((top.nrows() + bottom.nrows(), top.ncols()));
    for i in 0..top.nrows() {
        for j in 0..top.ncols() {
            out[[i, j]] = top[[i, j]];
        }
    }
    for i in 0..bottom.nrows() {
        for j in 0..bottom.ncols() {
            out[[top.nrows() + i, j]] = bottom[[i, j]];
        }
    }
    out
}

pub fn naive_self_attend(p: &AdapterParams, block: usize, q_state: &Array2<f64>, e_t: &Array2<f64>) -> Array2<f64> {
    let b = &p.blocks[block];
    let x = stack_rows(q_state, e_t);
    naive_mha(&x, &x, &b.self_q, &b.self_k, &b.self_v, p.config.num_heads)
}

pub fn naive_cross_attend(p: &AdapterParams, block: usize, a_s: &Array2<f64>, e_i: &Array2<f64>) -> Array2<f64> {
    let b = &p.blocks[block];
    naive_mha(a_s, e_i, &b.cross_q, &b.cross_k, &b.cross_v, p.config.num_heads)
}

/// Attention-only adapter forward composed from the two per-block oracles.
pub fn naive_forward_plain(p: &AdapterParams, e_t: &Array2<f64>, e_i: &Array2<f64>) -> Array2<f64> {
    let mut x = stack_rows(&p.queries, e_t);
    for block in 0..p.blocks.len() {
        let b = &p.blocks[block];
        let a_s = naive_mha(&x, &x, &b.self_q, &b.self_k, &b.self_v, p.config.num_heads);
        x = naive_cross_attend(p, block, &a_s, e_i);
    }
    Array2::from_shape_fn((p.config.num_queries, x.ncols()), |(i, j)| x[[i, j]])
}

/// Minimum-SSE partition of `points` into two non-empty groups by
/// enumerating every split. Returned as a canonical label vector.
pub fn best_two_partition(points: &[[f64; 2]]) -> Vec<usize> {
    let n = points.len();
    assert!(n >= 2 && n <= 22);
    let mut best = (f64::INFINITY, 0u32);
    for mask in 1u32..(1 << (n - 1)) {
        let mut sse = 0.0;
        for side in 0..2u32 {
            let members: Vec<&[f64; 2]> = (0..n).filter(|i| ((mask >> i) & 1) == side).map(|i| &points[i]).collect();
            let m = members.len() as f64;
            let c = [members.iter().map(|p| p[0]).sum::<f64>() / m, members.iter().map(|p| p[1]).sum::<f64>() / m];
            sse += members.iter().map(|p| (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)).sum::<f64>();
        }
        if sse < best.0 {
            best = (sse, mask);
        }
    }
    canonical_labels(&(0..n).map(|i| ((best.1 >> i) & 1) as usize).collect::<Vec<_>>())
}

/// Relabels so that labels appear in first-occurrence order.
pub fn canonical_labels(labels: &[usize]) -> Vec<usize> {
    let mut map = std::collections::HashMap::new();
    labels
        .iter()
        .map(|l| {
            let next = map.len();
            *map.entry(*l).or_insert(next)
        })
        .collect()
}

/// Connected components of the graph with an edge wherever `adj(i, j)`.
pub fn connected_components(n: usize, adj: impl Fn(usize, usize) -> bool) -> Vec<Vec<usize>> {
    let mut seen = vec![false; n];
    let mut comps = Vec::new();
    for start in 0..n {
        if seen[start] {
            continue;
        }
        let mut stack = vec![start];
        let mut comp = Vec::new();
        seen[start] = true;
        while let Some(i) = stack.pop() {
            comp.push(i);
            for j in 0..n {
                if !seen[j] && adj(i, j) {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        comp.sort_unstable();
        comps.push(comp);
    }
    comps
}

fn luma(img: &RgbImage) -> Vec<Vec<f64>> {
    (0..img.height())
        .map(|y| {
            (0..img.width())
                .map(|x| {
                    let p = img.get_pixel(x, y);
                    0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64
                })
                .collect()
        })
        .collect()
}

/// Mean SSIM over every 11×11 window position, each window evaluated
/// directly with a 2-D Gaussian weight table.
pub fn naive_ssim(a: &RgbImage, b: &RgbImage) -> f64 {
    let (x, y) = (luma(a), luma(b));
    let (h, w) = (x.len(), x[0].len());
    let size = 11;
    let sigma: f64 = 1.5;
    let mut g = vec![vec![0.0; size]; size];
    let mut total = 0.0;
    for i in 0..size {
        for j in 0..size {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            g[i][j] = (-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp();
            total += g[i][j];
        }
    }
    let (c1, c2) = ((0.01f64 * 255.0).powi(2), (0.03f64 * 255.0).powi(2));
    let mut acc = 0.0;
    let mut count = 0;
    for oy in 0..=h - size {
        for ox in 0..=w - size {
            let (mut mx, mut my) = (0.0, 0.0);
            for i in 0..size {
                for j in 0..size {
                    let wt = g[i][j] / total;
                    mx += wt * x[oy + i][ox + j];
                    my += wt * y[oy + i][ox + j];
                }
            }
            let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
            for i in 0..size {
                for j in 0..size {
                    let wt = g[i][j] / total;
                    let (dx, dy) = (x[oy + i][ox + j] - mx, y[oy + i][ox + j] - my);
                    vx += wt * dx * dx;
                    vy += wt * dy * dy;
                    cov += wt * dx * dy;
                }
            }
            acc += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    acc / count as f64
}

/// The gate written as one boolean expression.
pub fn gate_predicate(clip_i: f64, clip_t: f64, emotion_score: f64) -> bool {
    (0.75..=0.9).contains(&clip_i) && (0.25..=1.0).contains(&clip_t) && emotion_score > 0.3
}

/// Worst elementwise relative error between the analytic gradient of
/// `Σ weights ⊙ c_e` and central differences, per parameter tensor.
pub fn gradient_check(
    p: &AdapterParams,
    e_t: &emoforge_core::adapter::EmotionEmbedding,
    e_i: &emoforge_core::adapter::ImageEmbedding,
    weights: &Array2<f64>,
) -> Vec<(String, f64)> {
    let loss = |q: &AdapterParams| (q.forward(e_t, e_i).unwrap().as_array() * weights).sum();
    let (_, tape) = p.forward_tape(e_t, e_i).unwrap();
    let grads = p.backward(&tape, weights).unwrap();
    let h = 1e-4;
    let mut out = Vec::new();
    for (t, (name, g)) in grads.tensors().into_iter().enumerate() {
        let mut worst: f64 = 0.0;
        for idx in 0..g.len() {
            let (r, c) = (idx / g.ncols(), idx % g.ncols());
            let mut plus = p.clone();
            plus.tensors_mut()[t].1[[r, c]] += h;
            let mut minus = p.clone();
            minus.tensors_mut()[t].1[[r, c]] -= h;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let analytic = g[[r, c]];
            // entries below 1e-6 are dominated by difference roundoff
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
        }
        out.push((name, worst));
    }
    out
}

pub fn passing_scores() -> emoforge_core::dataset::CandidateScores {
    emoforge_core::dataset::CandidateScores { clip_i: 0.8, clip_t: 0.4, emotion_score: 0.6, aesthetic: 5.0 }
}

pub fn record(
    source: &str,
    emotion: emoforge_core::EmotionLabel,
    status: emoforge_core::dataset::ReviewStatus,
) -> emoforge_core::dataset::PairRecord {
    emoforge_core::dataset::PairRecord {
        id: emoforge_core::dataset::PairRecord::pair_id(source, emotion),
        source_id: source.into(),
        source_hash: "00".into(),
        emotion,
        target_id: "11".into(),
        instruction: format!("Add something for {emotion}"),
        factor_summary: "something".into(),
        scores: passing_scores(),
        review_status: status,
    }
}

/// Ten sources with 26 accepted pairs (six sources with three directions,
/// four with two), plus pending and rejected records that must not count.
pub fn ten_source_records() -> Vec<emoforge_core::dataset::PairRecord> {
    use emoforge_core::dataset::ReviewStatus::*;
    use emoforge_core::EmotionLabel;
    let mut out = Vec::new();
    for s in 0..10 {
        let directions = if s < 6 { 3 } else { 2 };
        for e in EmotionLabel::ALL.iter().take(directions) {
            out.push(record(&format!("src{s}"), *e, Accepted));
        }
        out.push(record(&format!("src{s}"), EmotionLabel::ALL[5], if s % 2 == 0 { Pending } else { Rejected }));
    }
    out.push(record("unreviewed", EmotionLabel::ALL[0], Pending));
    out
}

/// A manual-review manifest with `n` pending records, saved under `dir`.
pub fn pending_manifest(dir: &std::path::Path, n: usize) -> emoforge_core::dataset::Manifest {
    use emoforge_core::dataset::{GateConfig, Manifest, ManifestHeader, ReviewMode, ReviewStatus};
    let records = (0..n)
        .map(|i| record(&format!("s{i:02}"), emoforge_core::EmotionLabel::ALL[i % 8], ReviewStatus::Pending))
        .collect();
    let m = Manifest { header: ManifestHeader::new(ReviewMode::Manual, 0, GateConfig::default()), records };
    m.save(dir).unwrap();
    m
}
