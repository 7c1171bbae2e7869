//! Principal component analysis through the smaller Gram matrix.
//!
//! With K models and N pairs, the K x K matrix `X X^T` is decomposed when
//! K <= N and the N x N matrix `X^T X` otherwise. Both share the nonzero
//! spectrum of the centered data.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::symmetric_eigen;

#[derive(Debug, Clone)]
pub struct Pca {
    /// Row-major `rows x dims` projected coordinates.
    pub coords: Vec<f64>,
    pub dims: usize,
    /// Principal directions in input space, one unit vector per component.
    pub components: Vec<Vec<f64>>,
    /// Sample variance along each component (eigenvalue / (K - 1)).
    pub variances: Vec<f64>,
    /// Fraction of total variance captured by each component.
    pub explained_ratio: Vec<f64>,
    /// Column means subtracted before projection.
    pub mean: Vec<f64>,
    /// Number of eigenvalues above the numerical noise floor.
    pub rank: usize,
}

impl Pca {
    pub fn coord(&self, row: usize, dim: usize) -> f64 {
        self.coords[row * self.dims + dim]
    }

    /// Maps coordinates back into input space.
    pub fn reconstruct(&self, row: usize) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (k, w) in self.components.iter().enumerate() {
            let c = self.coord(row, k);
            for (o, wi) in out.iter_mut().zip(w) {
                *o += c * wi;
            }
        }
        out
    }
}

/// PCA of a row-major `rows x cols` matrix, keeping `dims` components.
///
/// Each component is signed so that its largest-magnitude loading is positive.
pub fn pca(data: &[f64], rows: usize, cols: usize, dims: usize) -> Result<Pca> {
    if data.len() != rows * cols {
        return Err(Error::LengthMismatch { left: data.len(), right: rows * cols });
    }
    if rows < 2 {
        return Err(Error::TooShort { len: rows, min: 2 });
    }
    if dims == 0 || dims > rows.min(cols) {
        return Err(Error::InvalidParameter {
            name: "dims",
            reason: alloc::format!("{dims} is outside 1..={}", rows.min(cols)),
        });
    }
    let mut mean = vec![0.0; cols];
    for r in 0..rows {
        for (m, v) in mean.iter_mut().zip(&data[r * cols..(r + 1) * cols]) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= rows as f64);
    let x: Vec<f64> = data
        .chunks(cols)
        .flat_map(|row| row.iter().zip(&mean).map(|(v, m)| v - m))
        .collect();

    // (eigenvalues, unit directions in input space)
    let (eigenvalues, directions): (Vec<f64>, Vec<Vec<f64>>) = if rows <= cols {
        let mut gram = vec![0.0; rows * rows];
        for i in 0..rows {
            for j in i..rows {
                let dot: f64 = x[i * cols..(i + 1) * cols]
                    .iter()
                    .zip(&x[j * cols..(j + 1) * cols])
                    .map(|(a, b)| a * b)
                    .sum();
                gram[i * rows + j] = dot;
                gram[j * rows + i] = dot;
            }
        }
        let eig = symmetric_eigen(&gram, rows);
        let dirs = (0..dims)
            .map(|k| {
                let u = eig.vector(k);
                let mut w = vec![0.0; cols];
                for (i, ui) in u.iter().enumerate() {
                    for (wc, xc) in w.iter_mut().zip(&x[i * cols..(i + 1) * cols]) {
                        *wc += ui * xc;
                    }
                }
                normalize(&mut w);
                w
            })
            .collect();
        (eig.values, dirs)
    } else {
        let mut cov = vec![0.0; cols * cols];
        for row in x.chunks(cols) {
            for a in 0..cols {
                for b in a..cols {
                    cov[a * cols + b] += row[a] * row[b];
                }
            }
        }
        for a in 0..cols {
            for b in 0..a {
                cov[a * cols + b] = cov[b * cols + a];
            }
        }
        let eig = symmetric_eigen(&cov, cols);
        let dirs = (0..dims).map(|k| eig.vector(k)).collect();
        (eig.values, dirs)
    };

    let top = eigenvalues.first().copied().unwrap_or(0.0).max(0.0);
    let floor = top * rows.max(cols) as f64 * f64::EPSILON * 16.0;
    let rank = eigenvalues.iter().filter(|&&l| l > floor && l > 0.0).count();
    if dims > rank {
        return Err(Error::RankDeficient { requested: dims, rank });
    }
    let total: f64 = eigenvalues.iter().filter(|&&l| l > 0.0).sum();

    let mut components = directions;
    for w in &mut components {
        let pivot = w.iter().copied().fold(0.0_f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
        if pivot < 0.0 {
            w.iter_mut().for_each(|v| *v = -*v);
        }
    }
    let mut coords = vec![0.0; rows * dims];
    for r in 0..rows {
        let xr = &x[r * cols..(r + 1) * cols];
        for (k, w) in components.iter().enumerate() {
            coords[r * dims + k] = xr.iter().zip(w).map(|(a, b)| a * b).sum();
        }
    }
    let variances = eigenvalues[..dims].iter().map(|l| l / (rows - 1) as f64).collect();
    let explained_ratio = eigenvalues[..dims].iter().map(|l| l / total).collect();
    Ok(Pca { coords, dims, components, variances, explained_ratio, mean, rank })
}

fn normalize(v: &mut [f64]) {
    let norm = libm::sqrt(v.iter().map(|x| x * x).sum());
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}
