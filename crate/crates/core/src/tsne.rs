//! Exact (O(K^2)) t-SNE.
//!
//! Points are processed in the lexicographic order of their identifiers and
//! each point's initial position is drawn from a generator seeded by its
//! identifier, so permuting the input rows permutes the output rows exactly.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub const DEFAULT_PERPLEXITY: f64 = 30.0;
pub const DEFAULT_ITERATIONS: usize = 1000;
pub const DEFAULT_LEARNING_RATE: f64 = 200.0;
pub const EARLY_EXAGGERATION: f64 = 12.0;
pub const EXAGGERATION_ITERATIONS: usize = 250;
pub const INIT_SCALE: f64 = 1e-4;
const MOMENTUM_SWITCH: usize = 250;
const ENTROPY_TOLERANCE: f64 = 1e-10;
const MAX_BANDWIDTH_STEPS: usize = 200;
const MIN_GAIN: f64 = 0.01;
const P_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TsneParams {
    /// `None` picks `min(30, (K - 1) / 3)`.
    pub perplexity: Option<f64>,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    pub exaggeration_iterations: usize,
    pub seed: u64,
}

impl Default for TsneParams {
    fn default() -> Self {
        Self {
            perplexity: None,
            iterations: DEFAULT_ITERATIONS,
            learning_rate: DEFAULT_LEARNING_RATE,
            early_exaggeration: EARLY_EXAGGERATION,
            exaggeration_iterations: EXAGGERATION_ITERATIONS,
            seed: 0,
        }
    }
}

/// Largest perplexity accepted for `points` inputs.
pub fn max_perplexity(points: usize) -> f64 {
    (points as f64 - 1.0) / 3.0
}

pub fn resolve_perplexity(params: &TsneParams, points: usize) -> Result<f64> {
    let max = max_perplexity(points);
    let p = params.perplexity.unwrap_or_else(|| DEFAULT_PERPLEXITY.min(max));
    if points < 4 || !(p > 1.0) || p > max {
        return Err(Error::PerplexityInfeasible { perplexity: p, points, max });
    }
    Ok(p)
}

#[derive(Debug, Clone)]
pub struct Tsne {
    /// Row-major `K x 2`, in input row order.
    pub coords: Vec<f64>,
    /// Precision (1 / 2 sigma^2) of each point's conditional distribution,
    /// in input row order.
    pub betas: Vec<f64>,
    pub perplexity: f64,
    /// KL(P || Q) with unexaggerated P, one entry per iteration.
    pub objective: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Row-major squared Euclidean distances.
pub fn squared_distances(data: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut d = vec![0.0; rows * rows];
    for i in 0..rows {
        for j in i + 1..rows {
            let v = sq_dist(&data[i * cols..(i + 1) * cols], &data[j * cols..(j + 1) * cols]);
            d[i * rows + j] = v;
            d[j * rows + i] = v;
        }
    }
    d
}

/// Conditional distribution `p_{j|i}` for precision `beta` given the squared
/// distances from point `i` (entry `i` itself is ignored), and its entropy in
/// nats.
pub fn conditional_row(dist_row: &[f64], i: usize, beta: f64) -> (Vec<f64>, f64) {
    let min = dist_row
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &d)| d)
        .fold(f64::INFINITY, f64::min);
    let mut p: Vec<f64> = dist_row
        .iter()
        .enumerate()
        .map(|(j, &d)| if j == i { 0.0 } else { libm::exp(-beta * (d - min)) })
        .collect();
    let sum: f64 = p.iter().sum();
    let weighted: f64 = p.iter().zip(dist_row).map(|(pj, d)| pj * (d - min)).sum();
    let entropy = libm::log(sum) + beta * weighted / sum;
    p.iter_mut().for_each(|v| *v /= sum);
    (p, entropy)
}

fn search_beta(dist_row: &[f64], i: usize, target: f64) -> (Vec<f64>, f64) {
    let (mut lo, mut hi) = (0.0_f64, f64::INFINITY);
    let mut beta = 1.0;
    let mut best = conditional_row(dist_row, i, beta);
    for _ in 0..MAX_BANDWIDTH_STEPS {
        let diff = best.1 - target;
        if diff.abs() < ENTROPY_TOLERANCE {
            break;
        }
        if diff > 0.0 {
            lo = beta;
            beta = if hi.is_infinite() { beta * 2.0 } else { 0.5 * (beta + hi) };
        } else {
            hi = beta;
            beta = 0.5 * (beta + lo);
        }
        best = conditional_row(dist_row, i, beta);
    }
    (best.0, beta)
}

/// Runs t-SNE on the rows of a `rows x cols` matrix identified by `ids`.
pub fn tsne(data: &[f64], rows: usize, cols: usize, ids: &[String], params: &TsneParams) -> Result<Tsne> {
    if data.len() != rows * cols {
        return Err(Error::LengthMismatch { left: data.len(), right: rows * cols });
    }
    if ids.len() != rows {
        return Err(Error::LengthMismatch { left: ids.len(), right: rows });
    }
    let perplexity = resolve_perplexity(params, rows)?;
    if !(params.learning_rate > 0.0) {
        return Err(Error::InvalidParameter {
            name: "learning_rate",
            reason: format!("{} must be positive", params.learning_rate),
        });
    }
    if let Some(bad) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter { name: "data", reason: format!("non-finite entry {bad}") });
    }

    // canonical order by identifier
    let mut order: Vec<usize> = (0..rows).collect();
    order.sort_by(|&a, &b| ids[a].cmp(&ids[b]));
    if let Some(w) = order.windows(2).find(|w| ids[w[0]] == ids[w[1]]) {
        return Err(Error::IdMismatch(format!("duplicate id {:?}", ids[w[0]])));
    }
    let canon: Vec<f64> = order.iter().flat_map(|&r| data[r * cols..(r + 1) * cols].iter().copied()).collect();
    let k = rows;
    let dist = squared_distances(&canon, k, cols);

    let target = libm::log(perplexity);
    let mut cond = vec![0.0; k * k];
    let mut betas_canon = vec![0.0; k];
    for i in 0..k {
        let (row, beta) = search_beta(&dist[i * k..(i + 1) * k], i, target);
        cond[i * k..(i + 1) * k].copy_from_slice(&row);
        betas_canon[i] = beta;
    }
    let mut p = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            if i != j {
                p[i * k + j] = ((cond[i * k + j] + cond[j * k + i]) / (2.0 * k as f64)).max(P_FLOOR);
            }
        }
    }

    let mut y = vec![0.0; k * 2];
    for (c, &r) in order.iter().enumerate() {
        let mut g = rng::seeded(params.seed ^ rng::fnv1a(ids[r].as_bytes()));
        y[c * 2] = INIT_SCALE * rng::normal(&mut g);
        y[c * 2 + 1] = INIT_SCALE * rng::normal(&mut g);
    }

    let mut update = vec![0.0; k * 2];
    let mut gains = vec![1.0_f64; k * 2];
    let mut num = vec![0.0; k * k];
    let mut grad = vec![0.0; k * 2];
    let mut objective = Vec::with_capacity(params.iterations);
    for it in 0..params.iterations {
        let exaggeration = if it < params.exaggeration_iterations { params.early_exaggeration } else { 1.0 };
        let momentum = if it < MOMENTUM_SWITCH { 0.5 } else { 0.8 };

        let mut sum_num = 0.0;
        for i in 0..k {
            for j in i + 1..k {
                let dx = y[i * 2] - y[j * 2];
                let dy = y[i * 2 + 1] - y[j * 2 + 1];
                let v = 1.0 / (1.0 + dx * dx + dy * dy);
                num[i * k + j] = v;
                num[j * k + i] = v;
                sum_num += 2.0 * v;
            }
        }
        let mut kl = 0.0;
        for i in 0..k {
            let (mut gx, mut gy) = (0.0, 0.0);
            for j in 0..k {
                if i == j {
                    continue;
                }
                let pij = p[i * k + j];
                let q = (num[i * k + j] / sum_num).max(f64::MIN_POSITIVE);
                kl += pij * libm::log(pij / q);
                let mult = (exaggeration * pij - q) * num[i * k + j];
                gx += mult * (y[i * 2] - y[j * 2]);
                gy += mult * (y[i * 2 + 1] - y[j * 2 + 1]);
            }
            grad[i * 2] = 4.0 * gx;
            grad[i * 2 + 1] = 4.0 * gy;
        }
        objective.push(kl);

        for d in 0..k * 2 {
            gains[d] = if (grad[d] > 0.0) != (update[d] > 0.0) { gains[d] + 0.2 } else { gains[d] * 0.8 };
            gains[d] = gains[d].max(MIN_GAIN);
            update[d] = momentum * update[d] - params.learning_rate * gains[d] * grad[d];
            y[d] += update[d];
        }
        for axis in 0..2 {
            let m = (0..k).map(|i| y[i * 2 + axis]).sum::<f64>() / k as f64;
            (0..k).for_each(|i| y[i * 2 + axis] -= m);
        }
        if !kl.is_finite() || y.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "learning_rate",
                reason: format!("optimisation diverged at iteration {it}"),
            });
        }
    }

    let mut coords = vec![0.0; k * 2];
    let mut betas = vec![0.0; k];
    for (c, &r) in order.iter().enumerate() {
        coords[r * 2] = y[c * 2];
        coords[r * 2 + 1] = y[c * 2 + 1];
        betas[r] = betas_canon[c];
    }
    Ok(Tsne { coords, betas, perplexity, objective })
}

/// Entropy in bits of point `i`'s conditional distribution at precision `beta`.
pub fn entropy_bits(data: &[f64], cols: usize, i: usize, beta: f64) -> f64 {
    let rows = data.len() / cols;
    let xi = &data[i * cols..(i + 1) * cols];
    let row: Vec<f64> = (0..rows).map(|j| sq_dist(xi, &data[j * cols..(j + 1) * cols])).collect();
    conditional_row(&row, i, beta).1 / core::f64::consts::LN_2
}
