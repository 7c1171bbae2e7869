//! 2-D model maps.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::divergence::Space;
use crate::error::Result;
use crate::matrix::{center_slice, LogLikelihoodMatrix};
use crate::pca::pca;
use crate::tsne::{tsne, TsneParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapMethod {
    Pca,
    Tsne,
}

impl MapMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            MapMethod::Pca => "pca",
            MapMethod::Tsne => "tsne",
        }
    }
}

/// Parameters recorded with every map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum MapParams {
    Pca { space: Space },
    Tsne {
        space: Space,
        perplexity: f64,
        iterations: usize,
        learning_rate: f64,
        early_exaggeration: f64,
        exaggeration_iterations: usize,
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapEmbedding {
    pub model_ids: Vec<String>,
    /// Row-major `K x 2`.
    pub coords: Vec<f64>,
    pub method: MapMethod,
    pub params: MapParams,
}

impl MapEmbedding {
    pub fn point(&self, i: usize) -> (f64, f64) {
        (self.coords[i * 2], self.coords[i * 2 + 1])
    }
}

fn rows_in_space(m: &LogLikelihoodMatrix, space: Space) -> Vec<f64> {
    match space {
        Space::Raw => m.values.clone(),
        Space::Centered => m.rows().flat_map(center_slice).collect(),
    }
}

/// PCA map of the matrix rows (uncentered rows by default on maps).
pub fn pca_map(m: &LogLikelihoodMatrix, space: Space) -> Result<MapEmbedding> {
    m.check()?;
    let data = rows_in_space(m, space);
    let p = pca(&data, m.n_models(), m.n_pairs(), 2)?;
    Ok(MapEmbedding {
        model_ids: m.model_ids.clone(),
        coords: p.coords,
        method: MapMethod::Pca,
        params: MapParams::Pca { space },
    })
}

pub fn tsne_map(m: &LogLikelihoodMatrix, space: Space, params: &TsneParams) -> Result<MapEmbedding> {
    m.check()?;
    let data = rows_in_space(m, space);
    let t = tsne(&data, m.n_models(), m.n_pairs(), &m.model_ids, params)?;
    Ok(MapEmbedding {
        model_ids: m.model_ids.clone(),
        coords: t.coords,
        method: MapMethod::Tsne,
        params: MapParams::Tsne {
            space,
            perplexity: t.perplexity,
            iterations: params.iterations,
            learning_rate: params.learning_rate,
            early_exaggeration: params.early_exaggeration,
            exaggeration_iterations: params.exaggeration_iterations,
            seed: params.seed,
        },
    })
}
