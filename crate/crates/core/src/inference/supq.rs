//! Simulation of `sup Q(k)`, the limit of `supF(k)` under the null.
//!
//! `Q(Λ_k)` equals `(Σ_j ‖B(λ_{j+1}) − B(λ_j)‖²/(λ_{j+1} − λ_j) − ‖B(1)‖²)/(k·p_w)`
//! (with `λ_0 = 0`, `λ_{k+1} = 1`), so its supremum over a grid is a max-plus
//! dynamic program over segment lengths of at least `⌈εG⌉` grid steps.

use rand_distr::{Distribution, StandardNormal};

use crate::rng::{self, var};

/// One trimming level: minimum segment length in grid steps and the largest `k` wanted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridTrim {
    pub min_len: usize,
    pub k_max: usize,
}

impl GridTrim {
    pub fn new(epsilon: f64, grid: usize, k_max: usize) -> Self {
        let min_len = ((epsilon * grid as f64 - 1e-9).ceil() as usize).max(1);
        Self { min_len, k_max }
    }
}

/// Brownian paths on `0, 1/G, …, 1`, one per dimension, from replication `rep`'s key.
pub fn brownian_paths(seed: u64, rep: u64, dims: usize, grid: usize) -> Vec<Vec<f64>> {
    let scale = (grid as f64).sqrt().recip();
    (0..dims)
        .map(|d| {
            let mut rng = rng::stream(seed, rep, rng::COMMON, var::BROWNIAN + d as u64);
            let mut path = Vec::with_capacity(grid + 1);
            let mut acc = 0.0;
            path.push(0.0);
            for _ in 0..grid {
                let z: f64 = StandardNormal.sample(&mut rng);
                acc += z * scale;
                path.push(acc);
            }
            path
        })
        .collect()
}

/// `Q(Λ_k)` at explicit fractions, straight from the defining sum.
pub fn q_at(paths: &[Vec<f64>], grid: usize, points: &[usize]) -> f64 {
    let p_w = paths.len();
    let k = points.len();
    let b = |t: usize| -> Vec<f64> { paths.iter().map(|p| p[t]).collect() };
    let mut lambdas: Vec<f64> = points.iter().map(|&t| t as f64 / grid as f64).collect();
    lambdas.push(1.0);
    let mut idx = points.to_vec();
    idx.push(grid);
    let mut total = 0.0;
    for j in 0..k {
        let (lj, lj1) = (lambdas[j], lambdas[j + 1]);
        let (bj, bj1) = (b(idx[j]), b(idx[j + 1]));
        let num: f64 = (0..p_w).map(|d| (lj * bj1[d] - lj1 * bj[d]).powi(2)).sum();
        total += num / (lj * lj1 * (lj1 - lj));
    }
    total / (k * p_w) as f64
}

/// `sup Q(k)` for `k = 1..=k_max`, for every dimension `p = 1..=paths.len()` and every trim.
///
/// The result is indexed `[p − 1][trim][k − 1]`; dimension `p` uses the first `p` paths.
pub fn sup_q(paths: &[Vec<f64>], grid: usize, trims: &[GridTrim]) -> Vec<Vec<Vec<f64>>> {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: the CPU supports AVX2, checked just above.
            return unsafe { sup_q_avx2(paths, grid, trims) };
        }
    }
    sup_q_generic(paths, grid, trims)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn sup_q_avx2(paths: &[Vec<f64>], grid: usize, trims: &[GridTrim]) -> Vec<Vec<Vec<f64>>> {
    sup_q_body(paths, grid, trims)
}

fn sup_q_generic(paths: &[Vec<f64>], grid: usize, trims: &[GridTrim]) -> Vec<Vec<Vec<f64>>> {
    sup_q_body(paths, grid, trims)
}

// Max and add are exact per element, so lane order never changes the result.
#[inline(always)]
fn max_plus(v: &[f64], r: &[f64]) -> f64 {
    let n = v.len().min(r.len());
    let (v, r) = (&v[..n], &r[..n]);
    let mut acc = [f64::NEG_INFINITY; 8];
    let chunks = n / 8;
    for c in 0..chunks {
        let o = c * 8;
        for l in 0..8 {
            let s = v[o + l] + r[o + l];
            acc[l] = if s > acc[l] { s } else { acc[l] };
        }
    }
    let mut m = f64::NEG_INFINITY;
    for a in acc {
        m = if a > m { a } else { m };
    }
    for i in chunks * 8..n {
        let s = v[i] + r[i];
        m = if s > m { s } else { m };
    }
    m
}

#[inline(always)]
fn sup_q_body(paths: &[Vec<f64>], grid: usize, trims: &[GridTrim]) -> Vec<Vec<Vec<f64>>> {
    let dims = paths.len();
    let g = grid;
    // rrev[g − t + s] = G/(t − s)
    let rrev: Vec<f64> = (0..=g)
        .map(|i| if i < g { g as f64 / (g - i) as f64 } else { f64::INFINITY })
        .collect();
    let h_min = trims.iter().map(|t| t.min_len).min().unwrap_or(1);
    // values[p][trim][j][t]: best sum over j + 1 segments ending at t.
    let mut values: Vec<Vec<Vec<Vec<f64>>>> = (0..dims)
        .map(|_| {
            trims
                .iter()
                .map(|tr| vec![vec![f64::NEG_INFINITY; g + 1]; tr.k_max + 1])
                .collect()
        })
        .collect();
    let mut rows = vec![vec![0.0; g + 1]; dims];
    for t in h_min..=g {
        let s_hi = t - h_min;
        let weights = &rrev[g - t..=g - t + s_hi];
        for p in 0..dims {
            let path = &paths[p];
            let bt = path[t];
            let (before, rest) = rows.split_at_mut(p);
            let row = &mut rest[0][..=s_hi];
            if p == 0 {
                for ((r, &bs), &w) in row.iter_mut().zip(&path[..=s_hi]).zip(weights) {
                    let d = bt - bs;
                    *r = d * d * w;
                }
            } else {
                let prev = &before[p - 1][..=s_hi];
                for (((r, &bs), &w), &q) in row.iter_mut().zip(&path[..=s_hi]).zip(weights).zip(prev) {
                    let d = bt - bs;
                    *r = q + d * d * w;
                }
            }
        }
        for (ti, tr) in trims.iter().enumerate() {
            let h = tr.min_len;
            if t < h || (t > g - h && t != g) {
                continue;
            }
            for p in 0..dims {
                let row = &rows[p];
                let layers = &mut values[p][ti];
                layers[0][t] = row[0];
                for j in 1..=tr.k_max {
                    if t < (j + 1) * h {
                        break;
                    }
                    let (lo, hi) = (j * h, t - h);
                    let m = max_plus(&layers[j - 1][lo..=hi], &row[lo..=hi]);
                    layers[j][t] = m;
                }
            }
        }
    }
    let mut end_norm = 0.0;
    (0..dims)
        .map(|p| {
            end_norm += paths[p][g] * paths[p][g];
            trims
                .iter()
                .enumerate()
                .map(|(ti, tr)| {
                    (1..=tr.k_max)
                        .map(|k| (values[p][ti][k][g] - end_norm) / (k * (p + 1)) as f64)
                        .collect()
                })
                .collect()
        })
        .collect()
}
