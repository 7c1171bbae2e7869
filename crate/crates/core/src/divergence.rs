//! KL-divergence and mutual-information estimators, semantic distance.
//!
//! The vector estimator rests on the small-perturbation identity
//! `KL(p_i, p_j) ~ Var[log p_i(y|x) - log p_j(y|x)] / 2` under the
//! data-generating distribution. With centered log-likelihood vectors the
//! empirical variance is `|xi_i - xi_j|^2 / N`.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{center_slice, LogLikelihoodMatrix, ModelVector, VectorKind};

/// Which vectors pairwise distances are measured on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Space {
    /// Uncentered log-likelihoods, as visualised on maps.
    Raw,
    /// Centered vectors; the KL approximation proper.
    #[default]
    Centered,
}

impl Space {
    pub fn as_str(self) -> &'static str {
        match self {
            Space::Raw => "raw",
            Space::Centered => "centered",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceKind {
    KlVector,
    /// `|l_i - l_j|^2 / 2N` on uncentered rows.
    KlVectorRaw,
    /// Directed Monte Carlo KL; row is the generating model.
    KlMc,
    KlMcSymmetric,
    /// Symmetrized KL by exact enumeration of oracle models.
    KlExact,
    Semdist,
}

impl DistanceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DistanceKind::KlVector => "kl_vector",
            DistanceKind::KlVectorRaw => "kl_vector_raw",
            DistanceKind::KlMc => "kl_mc",
            DistanceKind::KlMcSymmetric => "kl_mc_symmetric",
            DistanceKind::KlExact => "kl_exact",
            DistanceKind::Semdist => "semdist",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Self::KlVector, Self::KlVectorRaw, Self::KlMc, Self::KlMcSymmetric, Self::KlExact, Self::Semdist]
            .into_iter()
            .find(|k| k.as_str() == s)
    }
}

/// K x K matrix of model-to-model distances.
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseDistanceMatrix {
    pub model_ids: Vec<String>,
    /// Row-major K x K.
    pub values: Vec<f64>,
    pub kind: DistanceKind,
}

impl PairwiseDistanceMatrix {
    pub fn len(&self) -> usize {
        self.model_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.model_ids.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.len() + j]
    }

    /// Upper-triangle entries `(i, j, value)` with `i < j`.
    pub fn upper_triangle(&self) -> Vec<(usize, usize, f64)> {
        let k = self.len();
        let mut out = Vec::with_capacity(k * k.saturating_sub(1) / 2);
        for i in 0..k {
            for j in i + 1..k {
                out.push((i, j, self.get(i, j)));
            }
        }
        out
    }

    pub fn from_fn(model_ids: Vec<String>, kind: DistanceKind, f: impl Fn(usize, usize) -> f64) -> Self {
        let k = model_ids.len();
        let mut values = vec![0.0; k * k];
        for i in 0..k {
            for j in 0..k {
                values[i * k + j] = f(i, j);
            }
        }
        Self { model_ids, values, kind }
    }
}

fn half_mean_sq_dist(a: &[f64], b: &[f64]) -> f64 {
    let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    sq / (2.0 * a.len() as f64)
}

fn symmetric_pairwise(rows: &[Vec<f64>]) -> Vec<f64> {
    let k = rows.len();
    let mut values = vec![0.0; k * k];
    for i in 0..k {
        for j in i + 1..k {
            let d = half_mean_sq_dist(&rows[i], &rows[j]);
            values[i * k + j] = d;
            values[j * k + i] = d;
        }
    }
    values
}

/// `|xi_i - xi_j|^2 / 2N` for two centered vectors.
pub fn kl_from_vectors(xi_i: &ModelVector, xi_j: &ModelVector) -> Result<f64> {
    xi_i.expect_kind(VectorKind::Centered)?;
    xi_j.expect_kind(VectorKind::Centered)?;
    if xi_i.len() != xi_j.len() {
        return Err(Error::LengthMismatch { left: xi_i.len(), right: xi_j.len() });
    }
    if xi_i.len() < 2 {
        return Err(Error::TooShort { len: xi_i.len(), min: 2 });
    }
    Ok(half_mean_sq_dist(&xi_i.values, &xi_j.values))
}

/// All pairwise vector KL estimates. Rows are centered internally unless
/// `space` is [`Space::Raw`].
pub fn pairwise_kl(matrix: &LogLikelihoodMatrix, space: Space) -> Result<PairwiseDistanceMatrix> {
    matrix.check()?;
    if matrix.n_models() < 2 {
        return Err(Error::TooShort { len: matrix.n_models(), min: 2 });
    }
    if matrix.n_pairs() < 2 {
        return Err(Error::TooShort { len: matrix.n_pairs(), min: 2 });
    }
    let rows: Vec<Vec<f64>> = match space {
        Space::Centered => matrix.rows().map(center_slice).collect(),
        Space::Raw => matrix.rows().map(<[f64]>::to_vec).collect(),
    };
    let kind = match space {
        Space::Centered => DistanceKind::KlVector,
        Space::Raw => DistanceKind::KlVectorRaw,
    };
    Ok(PairwiseDistanceMatrix { model_ids: matrix.model_ids.clone(), values: symmetric_pairwise(&rows), kind })
}

/// Log-likelihoods of responses sampled from one generator, scored by
/// several models. `scores[m][s] = log p_m(y_s | x_s)` where `y_s` was drawn
/// from the generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledLogLiks {
    pub generator_model: String,
    pub scores: BTreeMap<String, Vec<f64>>,
}

impl SampledLogLiks {
    fn scores_of(&self, model: &str) -> Result<&[f64]> {
        let v = self.scores.get(model).ok_or_else(|| Error::MissingModel(model.into()))?;
        if let Some(bad) = v.iter().position(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "scores",
                reason: format!("non-finite score for {model:?} at prompt {bad}"),
            });
        }
        Ok(v)
    }

    /// Per-prompt `log p_gen(y|x) - log p_other(y|x)`.
    pub fn log_ratios(&self, other: &str) -> Result<Vec<f64>> {
        let own = self.scores_of(&self.generator_model)?;
        let theirs = self.scores_of(other)?;
        if own.len() != theirs.len() {
            return Err(Error::LengthMismatch { left: own.len(), right: theirs.len() });
        }
        if own.is_empty() {
            return Err(Error::TooShort { len: 0, min: 1 });
        }
        Ok(own.iter().zip(theirs).map(|(a, b)| a - b).collect())
    }
}

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub value: f64,
    /// Sample standard deviation over sqrt(n); zero when n = 1.
    pub std_error: f64,
    pub n: usize,
}

/// Monte Carlo `KL(generator, other)`: mean log-ratio over the generator's
/// own samples. May be negative for finite samples.
pub fn mc_kl(samples: &SampledLogLiks, other: &str) -> Result<f64> {
    Ok(mc_kl_estimate(samples, other)?.value)
}

pub fn mc_kl_estimate(samples: &SampledLogLiks, other: &str) -> Result<McEstimate> {
    let r = samples.log_ratios(other)?;
    let n = r.len();
    let value = crate::matrix::mean(&r);
    let std_error = if n > 1 {
        libm::sqrt(crate::stats::sample_variance(&r)? / n as f64)
    } else {
        0.0
    };
    Ok(McEstimate { value, std_error, n })
}

pub fn symmetrize_kl(kl_ij: f64, kl_ji: f64) -> f64 {
    0.5 * (kl_ij + kl_ji)
}

/// Directed MC-KL for every ordered pair; row `i` uses generator `i`'s samples.
pub fn pairwise_mc_kl(
    model_ids: &[String],
    samples: &[SampledLogLiks],
) -> Result<PairwiseDistanceMatrix> {
    let by_gen: BTreeMap<&str, &SampledLogLiks> =
        samples.iter().map(|s| (s.generator_model.as_str(), s)).collect();
    let k = model_ids.len();
    let mut values = vec![0.0; k * k];
    for (i, gen) in model_ids.iter().enumerate() {
        let s = by_gen.get(gen.as_str()).ok_or_else(|| Error::MissingModel(gen.clone()))?;
        for (j, other) in model_ids.iter().enumerate() {
            values[i * k + j] = mc_kl(s, other)?;
        }
    }
    Ok(PairwiseDistanceMatrix { model_ids: model_ids.to_vec(), values, kind: DistanceKind::KlMc })
}

/// Symmetrized copy of a directed MC-KL matrix.
pub fn symmetrize_matrix(directed: &PairwiseDistanceMatrix) -> PairwiseDistanceMatrix {
    let mut out = PairwiseDistanceMatrix::from_fn(
        directed.model_ids.clone(),
        DistanceKind::KlMcSymmetric,
        |i, j| symmetrize_kl(directed.get(i, j), directed.get(j, i)),
    );
    let k = out.len();
    for i in 0..k {
        out.values[i * k + i] = 0.0;
    }
    out
}

/// Mean of a PMI vector: the MI estimate under the empirical distribution.
pub fn mi_mean_pmi(delta: &ModelVector) -> Result<f64> {
    delta.expect_kind(VectorKind::Pmi)?;
    if delta.is_empty() {
        return Err(Error::TooShort { len: 0, min: 1 });
    }
    Ok(crate::matrix::mean(&delta.values))
}

/// Heuristic MI estimate `|eta|^2 / 2N` from a centered PMI vector.
pub fn mi_norm(eta: &ModelVector) -> Result<f64> {
    eta.expect_kind(VectorKind::CenteredPmi)?;
    if eta.len() < 2 {
        return Err(Error::TooShort { len: eta.len(), min: 2 });
    }
    let sq: f64 = eta.values.iter().map(|v| v * v).sum();
    Ok(sq / (2.0 * eta.len() as f64))
}

/// Unit-norm response embeddings of one model: `n_prompts` groups of
/// `per_prompt` vectors of dimension `dim`, stored contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub model_id: String,
    n_prompts: usize,
    per_prompt: usize,
    dim: usize,
    data: Vec<f64>,
}

pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

impl EmbeddingSet {
    pub fn new(
        model_id: impl Into<String>,
        n_prompts: usize,
        per_prompt: usize,
        dim: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        let model_id = model_id.into();
        if n_prompts * per_prompt * dim != data.len() {
            return Err(Error::LengthMismatch { left: n_prompts * per_prompt * dim, right: data.len() });
        }
        if n_prompts == 0 || per_prompt == 0 || dim == 0 {
            return Err(Error::TooShort { len: 0, min: 1 });
        }
        for (index, e) in data.chunks(dim).enumerate() {
            let norm = libm::sqrt(e.iter().map(|v| v * v).sum());
            if !((norm - 1.0).abs() <= UNIT_NORM_TOLERANCE) {
                return Err(Error::NotUnitNorm { model: model_id, index, norm });
            }
        }
        Ok(Self { model_id, n_prompts, per_prompt, dim, data })
    }

    /// From nested `[prompt][sample][dim]` vectors.
    pub fn from_nested(model_id: impl Into<String>, nested: &[Vec<Vec<f64>>]) -> Result<Self> {
        let n = nested.len();
        let per = nested.first().map_or(0, Vec::len);
        let dim = nested.first().and_then(|p| p.first()).map_or(0, Vec::len);
        for group in nested {
            if group.len() != per {
                return Err(Error::LengthMismatch { left: group.len(), right: per });
            }
            for e in group {
                if e.len() != dim {
                    return Err(Error::LengthMismatch { left: e.len(), right: dim });
                }
            }
        }
        let data = nested.iter().flatten().flatten().copied().collect();
        Self::new(model_id, n, per, dim, data)
    }

    pub fn n_prompts(&self) -> usize {
        self.n_prompts
    }

    pub fn per_prompt(&self) -> usize {
        self.per_prompt
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn embedding(&self, prompt: usize, sample: usize) -> &[f64] {
        let start = (prompt * self.per_prompt + sample) * self.dim;
        &self.data[start..start + self.dim]
    }

    /// Mean embedding for one prompt, not re-normalized.
    pub fn mean_vector(&self, prompt: usize) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for a in 0..self.per_prompt {
            for (acc, v) in m.iter_mut().zip(self.embedding(prompt, a)) {
                *acc += v;
            }
        }
        let scale = self.per_prompt as f64;
        m.iter_mut().for_each(|x| *x /= scale);
        m
    }
}

/// Mean over prompts of `1 - <mean_a, mean_b>` with per-prompt mean embeddings.
pub fn semdist(a: &EmbeddingSet, b: &EmbeddingSet) -> Result<f64> {
    if a.n_prompts != b.n_prompts {
        return Err(Error::LengthMismatch { left: a.n_prompts, right: b.n_prompts });
    }
    if a.per_prompt != b.per_prompt {
        return Err(Error::LengthMismatch { left: a.per_prompt, right: b.per_prompt });
    }
    if a.dim != b.dim {
        return Err(Error::LengthMismatch { left: a.dim, right: b.dim });
    }
    let total: f64 = (0..a.n_prompts)
        .map(|s| {
            let (ma, mb) = (a.mean_vector(s), b.mean_vector(s));
            1.0 - ma.iter().zip(&mb).map(|(x, y)| x * y).sum::<f64>()
        })
        .sum();
    Ok(total / a.n_prompts as f64)
}

/// Semantic distance over prompts restricted to `indices` (bootstrap helper).
pub fn semdist_subset(a: &EmbeddingSet, b: &EmbeddingSet, indices: &[usize]) -> Result<f64> {
    if indices.is_empty() {
        return Err(Error::TooShort { len: 0, min: 1 });
    }
    if a.n_prompts != b.n_prompts || a.per_prompt != b.per_prompt || a.dim != b.dim {
        return Err(Error::LengthMismatch { left: a.n_prompts, right: b.n_prompts });
    }
    let total: f64 = indices
        .iter()
        .map(|&s| {
            let (ma, mb) = (a.mean_vector(s), b.mean_vector(s));
            1.0 - ma.iter().zip(&mb).map(|(x, y)| x * y).sum::<f64>()
        })
        .sum();
    Ok(total / indices.len() as f64)
}

pub fn pairwise_semdist(sets: &[EmbeddingSet]) -> Result<PairwiseDistanceMatrix> {
    let k = sets.len();
    let mut values = vec![0.0; k * k];
    for i in 0..k {
        for j in i + 1..k {
            let d = semdist(&sets[i], &sets[j])?;
            values[i * k + j] = d;
            values[j * k + i] = d;
        }
    }
    Ok(PairwiseDistanceMatrix {
        model_ids: sets.iter().map(|s| s.model_id.clone()).collect(),
        values,
        kind: DistanceKind::Semdist,
    })
}

/// Vector KL between two rows restricted to a column subset, centering over
/// that subset (bootstrap helper).
pub fn kl_rows_subset(a: &[f64], b: &[f64], indices: &[usize], space: Space) -> Result<f64> {
    if indices.len() < 2 {
        return Err(Error::TooShort { len: indices.len(), min: 2 });
    }
    let diff: Vec<f64> = indices.iter().map(|&s| a[s] - b[s]).collect();
    let diff = match space {
        Space::Centered => center_slice(&diff),
        Space::Raw => diff,
    };
    Ok(diff.iter().map(|d| d * d).sum::<f64>() / (2.0 * diff.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::{center, Mode};
    use alloc::string::ToString;
    use approx::assert_relative_eq;

    fn centered(v: Vec<f64>) -> ModelVector {
        ModelVector::new("m", v, VectorKind::Centered)
    }

    #[test]
    fn kl_vector_examples() {
        let a = centered(vec![1.0, -1.0, 0.0]);
        assert_eq!(kl_from_vectors(&a, &a).unwrap(), 0.0);
        let z = centered(vec![0.0; 3]);
        assert_relative_eq!(kl_from_vectors(&a, &z).unwrap(), 1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn kl_vector_errors() {
        let a = centered(vec![1.0, -1.0, 0.0]);
        let b = centered(vec![1.0, -1.0]);
        assert!(matches!(kl_from_vectors(&a, &b), Err(Error::LengthMismatch { .. })));
        let raw = ModelVector::raw("m", vec![1.0, 2.0, 3.0]);
        assert!(matches!(kl_from_vectors(&a, &raw), Err(Error::WrongKind { .. })));
    }

    #[test]
    fn pairwise_matches_individual_calls() {
        let rows = [vec![-1.0, -2.0, -4.0], vec![-1.5, -2.5, -3.0], vec![-3.0, -1.0, -2.0]];
        let ids: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let m = LogLikelihoodMatrix::from_rows(
            ids.clone(),
            ["p0", "p1", "p2"].iter().map(|s| s.to_string()).collect(),
            &rows,
            Mode::Conditional,
        )
        .unwrap();
        let d = pairwise_kl(&m, Space::Centered).unwrap();
        for i in 0..3 {
            assert_eq!(d.get(i, i), 0.0);
            for j in 0..3 {
                let xi = center(&ModelVector::raw("x", rows[i].clone())).unwrap();
                let xj = center(&ModelVector::raw("y", rows[j].clone())).unwrap();
                assert_relative_eq!(d.get(i, j), kl_from_vectors(&xi, &xj).unwrap(), epsilon = 1e-14);
                assert_eq!(d.get(i, j), d.get(j, i));
            }
        }
    }

    #[test]
    fn pairwise_identical_rows_is_zero() {
        let m = LogLikelihoodMatrix::from_rows(
            vec!["a".into(), "b".into()],
            vec!["p0".into(), "p1".into()],
            &[vec![-1.0, -3.0], vec![-1.0, -3.0]],
            Mode::Conditional,
        )
        .unwrap();
        assert_eq!(pairwise_kl(&m, Space::Centered).unwrap().values, vec![0.0; 4]);
    }

    #[test]
    fn raw_space_adds_mean_gap() {
        let m = LogLikelihoodMatrix::from_rows(
            vec!["a".into(), "b".into()],
            vec!["p0".into(), "p1".into()],
            &[vec![0.0, 0.0], vec![-1.0, -1.0]],
            Mode::Conditional,
        )
        .unwrap();
        assert_eq!(pairwise_kl(&m, Space::Centered).unwrap().get(0, 1), 0.0);
        assert_eq!(pairwise_kl(&m, Space::Raw).unwrap().get(0, 1), 0.5);
    }

    fn samples(gen: &str, own: Vec<f64>, other: Vec<f64>) -> SampledLogLiks {
        let mut scores = BTreeMap::new();
        scores.insert(gen.to_string(), own);
        scores.insert("j".to_string(), other);
        SampledLogLiks { generator_model: gen.into(), scores }
    }

    #[test]
    fn mc_kl_examples() {
        let s = samples("i", vec![-1.0, -2.0], vec![-1.0, -2.0]);
        assert_eq!(mc_kl(&s, "j").unwrap(), 0.0);
        let s = samples("i", vec![-1.0, -2.0], vec![-1.2, -2.4]);
        assert_relative_eq!(mc_kl(&s, "j").unwrap(), 0.3, epsilon = 1e-12);
        // negative values are allowed
        let s = samples("i", vec![-2.0], vec![-1.0]);
        assert_eq!(mc_kl(&s, "j").unwrap(), -1.0);
        assert!(matches!(mc_kl(&s, "nobody"), Err(Error::MissingModel(_))));
    }

    #[test]
    fn symmetrize_examples() {
        assert_eq!(symmetrize_kl(0.0, 0.0), 0.0);
        assert_eq!(symmetrize_kl(1.0, 3.0), 2.0);
    }

    #[test]
    fn mi_examples() {
        let d = ModelVector::new("m", vec![2.0, 4.0], VectorKind::Pmi);
        assert_eq!(mi_mean_pmi(&d).unwrap(), 3.0);
        assert_eq!(mi_mean_pmi(&ModelVector::new("m", vec![0.0; 4], VectorKind::Pmi)).unwrap(), 0.0);
        let eta = ModelVector::new("m", vec![-1.0, 1.0], VectorKind::CenteredPmi);
        assert_eq!(mi_norm(&eta).unwrap(), 0.5);
        assert_eq!(mi_norm(&ModelVector::new("m", vec![0.0; 3], VectorKind::CenteredPmi)).unwrap(), 0.0);
        assert!(mi_norm(&d).is_err());
    }

    #[test]
    fn semdist_examples() {
        let s = core::f64::consts::FRAC_1_SQRT_2;
        let a = EmbeddingSet::from_nested("a", &[vec![vec![s, s], vec![s, s]]]).unwrap();
        assert_relative_eq!(semdist(&a, &a).unwrap(), 0.0, epsilon = 1e-15);

        let x = EmbeddingSet::from_nested("x", &[vec![vec![1.0, 0.0]], vec![vec![0.0, 1.0]]]).unwrap();
        let y = EmbeddingSet::from_nested("y", &[vec![vec![0.0, 1.0]], vec![vec![-1.0, 0.0]]]).unwrap();
        assert_eq!(semdist(&x, &y).unwrap(), 1.0);

        let a = EmbeddingSet::from_nested("a", &[vec![vec![1.0, 0.0], vec![0.0, 1.0]]]).unwrap();
        let b = EmbeddingSet::from_nested("b", &[vec![vec![1.0, 0.0], vec![1.0, 0.0]]]).unwrap();
        assert_eq!(a.mean_vector(0), vec![0.5, 0.5]);
        assert_eq!(semdist(&a, &b).unwrap(), 0.5);
        assert_eq!(semdist(&b, &a).unwrap(), 0.5);
    }

    #[test]
    fn semdist_rejects_mismatch_and_bad_norm() {
        let a = EmbeddingSet::from_nested("a", &[vec![vec![1.0, 0.0]]]).unwrap();
        let b = EmbeddingSet::from_nested("b", &[vec![vec![1.0, 0.0, 0.0]]]).unwrap();
        assert!(semdist(&a, &b).is_err());
        assert!(matches!(
            EmbeddingSet::from_nested("c", &[vec![vec![1.0, 1.0]]]),
            Err(Error::NotUnitNorm { .. })
        ));
    }
}
