//! Pair sets, log-likelihood matrices and the per-model vector forms.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Violation};

/// Default clipping percentile (bottom 2% of all model-text entries).
pub const DEFAULT_CLIP_PERCENTILE: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextPair {
    pub id: String,
    pub prompt: String,
    pub response: String,
}

impl TextPair {
    pub fn new(id: impl Into<String>, prompt: impl Into<String>, response: impl Into<String>) -> Self {
        Self { id: id.into(), prompt: prompt.into(), response: response.into() }
    }
}

/// Ordered prompt-response pairs. Column `s` of every matrix built over this
/// set corresponds to `pairs()[s]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairSet {
    pairs: Vec<TextPair>,
}

impl PairSet {
    /// Builds a pair set, rejecting duplicate ids, empty responses and sets
    /// with fewer than two pairs.
    pub fn new(pairs: Vec<TextPair>) -> Result<Self> {
        if pairs.len() < 2 {
            return Err(Error::TooShort { len: pairs.len(), min: 2 });
        }
        let mut seen = BTreeMap::new();
        for p in &pairs {
            if p.response.is_empty() {
                return Err(Error::EmptyResponse(p.id.clone()));
            }
            if seen.insert(p.id.as_str(), ()).is_some() {
                return Err(Error::DuplicatePairId(p.id.clone()));
            }
        }
        Ok(Self { pairs })
    }

    pub fn pairs(&self) -> &[TextPair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn ids(&self) -> Vec<String> {
        self.pairs.iter().map(|p| p.id.clone()).collect()
    }

    pub fn into_pairs(self) -> Vec<TextPair> {
        self.pairs
    }
}

/// What a matrix row measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// `log p(y_s | x_s)`.
    Conditional,
    /// `log p(y_s)`.
    Unconditional,
    /// Conditional minus unconditional.
    Pmi,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Conditional => "conditional",
            Mode::Unconditional => "unconditional",
            Mode::Pmi => "pmi",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "conditional" => Some(Mode::Conditional),
            "unconditional" => Some(Mode::Unconditional),
            "pmi" => Some(Mode::Pmi),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipInfo {
    pub percentile: f64,
    pub threshold: f64,
}

/// K x N matrix of log-likelihoods, one row per model, one column per pair.
#[derive(Debug, Clone, PartialEq)]
pub struct LogLikelihoodMatrix {
    pub model_ids: Vec<String>,
    pub pair_ids: Vec<String>,
    /// Row-major, `model_ids.len() * pair_ids.len()` entries.
    pub values: Vec<f64>,
    pub mode: Mode,
    pub clipped: Option<ClipInfo>,
    /// Rows have had their own mean subtracted.
    pub centered: bool,
}

impl LogLikelihoodMatrix {
    /// Builds and validates a matrix.
    pub fn new(
        model_ids: Vec<String>,
        pair_ids: Vec<String>,
        values: Vec<f64>,
        mode: Mode,
    ) -> Result<Self> {
        let m = Self { model_ids, pair_ids, values, mode, clipped: None, centered: false };
        m.check()?;
        Ok(m)
    }

    pub fn from_rows(
        model_ids: Vec<String>,
        pair_ids: Vec<String>,
        rows: &[Vec<f64>],
        mode: Mode,
    ) -> Result<Self> {
        let n = pair_ids.len();
        if let Some(bad) = rows.iter().position(|r| r.len() != n) {
            return Err(Error::LengthMismatch { left: rows[bad].len(), right: n });
        }
        let values = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self::new(model_ids, pair_ids, values, mode)
    }

    pub fn n_models(&self) -> usize {
        self.model_ids.len()
    }

    pub fn n_pairs(&self) -> usize {
        self.pair_ids.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.n_pairs();
        &self.values[i * n..(i + 1) * n]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.n_pairs().max(1))
    }

    pub fn model_index(&self, id: &str) -> Option<usize> {
        self.model_ids.iter().position(|m| m == id)
    }

    pub fn row_kind(&self) -> VectorKind {
        match (self.mode, self.centered) {
            (Mode::Pmi, false) => VectorKind::Pmi,
            (Mode::Pmi, true) => VectorKind::CenteredPmi,
            (_, false) => VectorKind::Raw,
            (_, true) => VectorKind::Centered,
        }
    }

    /// Row `i` as a [`ModelVector`].
    pub fn model_vector(&self, i: usize) -> ModelVector {
        ModelVector {
            model_id: self.model_ids[i].clone(),
            values: self.row(i).to_vec(),
            kind: self.row_kind(),
        }
    }

    /// Full structural report. An empty report means the matrix is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let (k, n) = (self.n_models(), self.n_pairs());
        duplicates(&self.model_ids, &mut out, |id, first, second| Violation::DuplicateModelId {
            id,
            first,
            second,
        });
        duplicates(&self.pair_ids, &mut out, |id, first, second| Violation::DuplicatePairId {
            id,
            first,
            second,
        });
        if self.values.len() != k * n {
            out.push(Violation::Shape { rows: k, cols: n, len: self.values.len() });
            return out;
        }
        for (idx, &v) in self.values.iter().enumerate() {
            if !v.is_finite() {
                out.push(Violation::NonFinite { row: idx / n, col: idx % n, value: v });
            }
        }
        if let Some(c) = self.clipped {
            for (idx, &v) in self.values.iter().enumerate() {
                if v < c.threshold {
                    out.push(Violation::BelowClipThreshold {
                        row: idx / n,
                        col: idx % n,
                        value: v,
                        threshold: c.threshold,
                    });
                }
            }
        }
        out
    }

    pub fn check(&self) -> Result<()> {
        let report = self.validate();
        if report.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidMatrix(report))
        }
    }

    /// Returns a copy with every row centered.
    pub fn centered(&self) -> Result<Self> {
        if self.n_pairs() < 2 {
            return Err(Error::TooShort { len: self.n_pairs(), min: 2 });
        }
        let values = self.rows().flat_map(center_slice).collect();
        Ok(Self { values, centered: true, ..self.clone() })
    }

    /// Clipped copy. See [`clip_threshold`] for the quantile convention.
    pub fn clip(&self, percentile: f64) -> Result<Self> {
        let threshold = clip_threshold(&[self], percentile)?;
        Ok(self.clip_at(percentile, threshold))
    }

    fn clip_at(&self, percentile: f64, threshold: f64) -> Self {
        let values = self.values.iter().map(|&v| if v < threshold { threshold } else { v }).collect();
        Self { values, clipped: Some(ClipInfo { percentile, threshold }), ..self.clone() }
    }

    fn same_ids(&self, other: &Self) -> Result<()> {
        if self.model_ids != other.model_ids {
            return Err(Error::IdMismatch("model ids differ in content or order".into()));
        }
        if self.pair_ids != other.pair_ids {
            return Err(Error::IdMismatch("pair ids differ in content or order".into()));
        }
        Ok(())
    }
}

fn duplicates(
    ids: &[String],
    out: &mut Vec<Violation>,
    make: impl Fn(String, usize, usize) -> Violation,
) {
    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, id) in ids.iter().enumerate() {
        if let Some(&first) = seen.get(id.as_str()) {
            out.push(make(id.clone(), first, i));
        } else {
            seen.insert(id, i);
        }
    }
}

fn check_percentile(percentile: f64) -> Result<()> {
    if !(percentile > 0.0 && percentile < 1.0) {
        return Err(Error::InvalidParameter {
            name: "percentile",
            reason: format!("{percentile} is outside (0, 1)"),
        });
    }
    Ok(())
}

/// Lower nearest-rank quantile over all entries of `matrices`: entries sorted
/// ascending, index `floor(percentile * (M - 1))`.
pub fn clip_threshold(matrices: &[&LogLikelihoodMatrix], percentile: f64) -> Result<f64> {
    check_percentile(percentile)?;
    let mut all: Vec<f64> = matrices.iter().flat_map(|m| m.values.iter().copied()).collect();
    if all.is_empty() {
        return Err(Error::TooShort { len: 0, min: 1 });
    }
    all.sort_by(f64::total_cmp);
    let idx = libm::floor(percentile * (all.len() - 1) as f64) as usize;
    Ok(all[idx])
}

/// Clips one matrix at its own threshold.
pub fn clip_matrix(m: &LogLikelihoodMatrix, percentile: f64) -> Result<LogLikelihoodMatrix> {
    m.clip(percentile)
}

/// Clips several matrices at one threshold computed over all of them.
pub fn clip_jointly(
    matrices: &[&LogLikelihoodMatrix],
    percentile: f64,
) -> Result<Vec<LogLikelihoodMatrix>> {
    let threshold = clip_threshold(matrices, percentile)?;
    Ok(matrices.iter().map(|m| m.clip_at(percentile, threshold)).collect())
}

/// Entrywise `cond - uncond`. Ids must match exactly, in order.
pub fn pmi_matrix(
    cond: &LogLikelihoodMatrix,
    uncond: &LogLikelihoodMatrix,
) -> Result<LogLikelihoodMatrix> {
    if cond.mode != Mode::Conditional || uncond.mode != Mode::Unconditional {
        return Err(Error::IdMismatch(format!(
            "pmi needs conditional and unconditional inputs, got {} and {}",
            cond.mode.as_str(),
            uncond.mode.as_str()
        )));
    }
    if cond.centered || uncond.centered {
        return Err(Error::WrongKind { expected: "raw", found: "centered" });
    }
    cond.same_ids(uncond)?;
    let values = cond.values.iter().zip(&uncond.values).map(|(a, b)| a - b).collect();
    Ok(LogLikelihoodMatrix {
        model_ids: cond.model_ids.clone(),
        pair_ids: cond.pair_ids.clone(),
        values,
        mode: Mode::Pmi,
        clipped: None,
        centered: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VectorKind {
    Raw,
    Centered,
    Pmi,
    CenteredPmi,
}

impl VectorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            VectorKind::Raw => "raw",
            VectorKind::Centered => "centered",
            VectorKind::Pmi => "pmi",
            VectorKind::CenteredPmi => "centered_pmi",
        }
    }

    pub fn is_centered(self) -> bool {
        matches!(self, VectorKind::Centered | VectorKind::CenteredPmi)
    }
}

/// One model's row in one of its four forms.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelVector {
    pub model_id: String,
    pub values: Vec<f64>,
    pub kind: VectorKind,
}

impl ModelVector {
    pub fn new(model_id: impl Into<String>, values: Vec<f64>, kind: VectorKind) -> Self {
        Self { model_id: model_id.into(), values, kind }
    }

    pub fn raw(model_id: impl Into<String>, values: Vec<f64>) -> Self {
        Self::new(model_id, values, VectorKind::Raw)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub(crate) fn expect_kind(&self, expected: VectorKind) -> Result<()> {
        if self.kind != expected {
            return Err(Error::WrongKind { expected: expected.as_str(), found: self.kind.as_str() });
        }
        Ok(())
    }
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

pub(crate) fn center_slice(values: &[f64]) -> Vec<f64> {
    let m = mean(values);
    values.iter().map(|v| v - m).collect()
}

/// Subtracts the vector's own mean: raw becomes centered, pmi becomes
/// centered_pmi.
pub fn center(v: &ModelVector) -> Result<ModelVector> {
    let kind = match v.kind {
        VectorKind::Raw => VectorKind::Centered,
        VectorKind::Pmi => VectorKind::CenteredPmi,
        other => return Err(Error::WrongKind { expected: "raw or pmi", found: other.as_str() }),
    };
    if v.len() < 2 {
        return Err(Error::TooShort { len: v.len(), min: 2 });
    }
    Ok(ModelVector { model_id: v.model_id.clone(), values: center_slice(&v.values), kind })
}

/// Mean log-likelihood of a raw vector, the map colouring statistic.
pub fn mean_loglik(v: &ModelVector) -> Result<f64> {
    v.expect_kind(VectorKind::Raw)?;
    if v.is_empty() {
        return Err(Error::TooShort { len: 0, min: 1 });
    }
    Ok(mean(&v.values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    fn ids(prefix: &str, n: usize) -> Vec<String> {
        (0..n).map(|i| format!("{prefix}{i}")).collect()
    }

    #[test]
    fn clean_matrix_validates() {
        let m = LogLikelihoodMatrix::new(ids("m", 2), ids("p", 3), vec![-1.0; 6], Mode::Conditional);
        assert!(m.is_ok());
        assert!(m.unwrap().validate().is_empty());
    }

    #[test]
    fn nan_is_reported_with_position() {
        let mut values = vec![-1.0; 6];
        values[1] = f64::NAN;
        let m = LogLikelihoodMatrix {
            model_ids: ids("m", 2),
            pair_ids: ids("p", 3),
            values,
            mode: Mode::Conditional,
            clipped: None,
            centered: false,
        };
        let report = m.validate();
        assert_eq!(report.len(), 1);
        assert!(matches!(report[0], Violation::NonFinite { row: 0, col: 1, .. }));
        assert!(matches!(m.check(), Err(Error::InvalidMatrix(_))));
    }

    #[test]
    fn duplicate_model_id_is_reported() {
        let err = LogLikelihoodMatrix::new(
            vec!["a".into(), "a".into()],
            ids("p", 2),
            vec![0.0; 4],
            Mode::Conditional,
        )
        .unwrap_err();
        match err {
            Error::InvalidMatrix(v) => assert_eq!(
                v,
                vec![Violation::DuplicateModelId { id: "a".into(), first: 0, second: 1 }]
            ),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let err = LogLikelihoodMatrix::new(ids("m", 2), ids("p", 3), vec![0.0; 5], Mode::Conditional);
        assert!(err.unwrap_err().to_string().contains("expected 2x3"));
    }

    #[test]
    fn clip_one_to_hundred() {
        let values: Vec<f64> = (1..=100).map(f64::from).collect();
        let m = LogLikelihoodMatrix::new(ids("m", 1), ids("p", 100), values.clone(), Mode::Conditional)
            .unwrap();
        let c = clip_matrix(&m, 0.02).unwrap();
        assert_eq!(c.clipped.unwrap().threshold, 2.0);
        assert_eq!(c.values[0], 2.0);
        assert_eq!(&c.values[1..], &values[1..]);
        assert!(c.check().is_ok());
    }

    #[test]
    fn clip_constant_matrix_is_unchanged() {
        let m = LogLikelihoodMatrix::new(ids("m", 2), ids("p", 3), vec![-4.5; 6], Mode::Unconditional)
            .unwrap();
        for p in [0.01, 0.02, 0.5, 0.99] {
            assert_eq!(m.clip(p).unwrap().values, m.values);
        }
    }

    #[test]
    fn clip_rejects_bad_percentile() {
        let m = LogLikelihoodMatrix::new(ids("m", 1), ids("p", 2), vec![0.0, 1.0], Mode::Conditional)
            .unwrap();
        for p in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(matches!(m.clip(p), Err(Error::InvalidParameter { .. })));
        }
    }

    #[test]
    fn joint_clip_shares_threshold() {
        let a = LogLikelihoodMatrix::new(ids("m", 1), ids("p", 2), vec![-10.0, 0.0], Mode::Conditional)
            .unwrap();
        let b = LogLikelihoodMatrix::new(ids("m", 1), ids("p", 2), vec![-1.0, 0.0], Mode::Conditional)
            .unwrap();
        let out = clip_jointly(&[&a, &b], 0.4).unwrap();
        // sorted: -10, -1, 0, 0 ; index floor(0.4 * 3) = 1
        assert_eq!(out[0].values, vec![-1.0, 0.0]);
        assert_eq!(out[1].values, vec![-1.0, 0.0]);
        assert_eq!(out[0].clipped, out[1].clipped);
    }

    #[test]
    fn center_examples() {
        let c = center(&ModelVector::raw("m", vec![1.0, 2.0, 3.0])).unwrap();
        assert_eq!(c.values, vec![-1.0, 0.0, 1.0]);
        assert_eq!(c.kind, VectorKind::Centered);
        let c = center(&ModelVector::raw("m", vec![5.0, 5.0, 5.0])).unwrap();
        assert_eq!(c.values, vec![0.0, 0.0, 0.0]);
        let c = center(&ModelVector::raw("m", vec![-125.7, -85.0])).unwrap();
        assert!((c.values[0] + 20.35).abs() < 1e-12);
        assert!((c.values[1] - 20.35).abs() < 1e-12);
        let c = center(&ModelVector::new("m", vec![2.0, 4.0], VectorKind::Pmi)).unwrap();
        assert_eq!(c.kind, VectorKind::CenteredPmi);
    }

    #[test]
    fn center_errors() {
        assert!(matches!(
            center(&ModelVector::raw("m", vec![1.0])),
            Err(Error::TooShort { len: 1, min: 2 })
        ));
        let already = ModelVector::new("m", vec![1.0, -1.0], VectorKind::Centered);
        assert!(matches!(center(&already), Err(Error::WrongKind { .. })));
    }

    #[test]
    fn mean_loglik_examples() {
        assert_eq!(mean_loglik(&ModelVector::raw("m", vec![2.0, 4.0])).unwrap(), 3.0);
        assert_eq!(mean_loglik(&ModelVector::raw("m", vec![0.0; 3])).unwrap(), 0.0);
        assert_eq!(mean_loglik(&ModelVector::raw("m", vec![-7.25; 11])).unwrap(), -7.25);
        assert!(mean_loglik(&ModelVector::raw("m", vec![])).is_err());
    }

    #[test]
    fn pmi_entrywise() {
        let c = LogLikelihoodMatrix::new(ids("m", 1), ids("p", 2), vec![-5.0, -3.0], Mode::Conditional)
            .unwrap();
        let u = LogLikelihoodMatrix::new(ids("m", 1), ids("p", 2), vec![-7.0, -3.0], Mode::Unconditional)
            .unwrap();
        let p = pmi_matrix(&c, &u).unwrap();
        assert_eq!(p.values, vec![2.0, 0.0]);
        assert_eq!(p.row_kind(), VectorKind::Pmi);
    }

    #[test]
    fn pmi_rejects_reordered_ids() {
        let c = LogLikelihoodMatrix::new(ids("m", 1), ids("p", 2), vec![-5.0, -3.0], Mode::Conditional)
            .unwrap();
        let u = LogLikelihoodMatrix::new(
            ids("m", 1),
            vec!["p1".to_string(), "p0".to_string()],
            vec![-3.0, -7.0],
            Mode::Unconditional,
        )
        .unwrap();
        assert!(matches!(pmi_matrix(&c, &u), Err(Error::IdMismatch(_))));
    }

    #[test]
    fn pair_set_rules() {
        let ok = PairSet::new(vec![TextPair::new("a", "x", "y"), TextPair::new("b", "x", "z")]);
        assert_eq!(ok.unwrap().len(), 2);
        let dup = PairSet::new(vec![TextPair::new("a", "x", "y"), TextPair::new("a", "x", "z")]);
        assert!(matches!(dup, Err(Error::DuplicatePairId(id)) if id == "a"));
        let empty = PairSet::new(vec![TextPair::new("a", "x", ""), TextPair::new("b", "x", "z")]);
        assert!(matches!(empty, Err(Error::EmptyResponse(_))));
        assert!(PairSet::new(vec![TextPair::new("a", "x", "y")]).is_err());
    }
}
