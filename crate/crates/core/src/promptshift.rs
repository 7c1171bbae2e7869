//! Prompt transformations and the geometry of the shifts they induce.
//!
//! For each model the four settings base, cot, repeat and repeat+cot give
//! four log-likelihood vectors over the same responses. Shift vectors are
//! differences against base; additive compositionality asks whether
//! `v_rep_cot ~ v_cot + v_rep`.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::divergence::Space;
use crate::error::{Error, Result};
use crate::matrix::{center_slice, mean, LogLikelihoodMatrix, PairSet, TextPair};
use crate::pca::pca;
use crate::stats;

pub const DEFAULT_COT_PHRASE: &str = "Let's think step by step.";
pub const DEFAULT_ANGLE_TOLERANCE: f64 = 1e-6;
const DENOMINATOR_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    Cot,
    Repeat,
    RepeatCot,
}

impl TransformKind {
    pub const ALL: [TransformKind; 3] = [TransformKind::Cot, TransformKind::Repeat, TransformKind::RepeatCot];

    pub fn as_str(self) -> &'static str {
        match self {
            TransformKind::Cot => "cot",
            TransformKind::Repeat => "repeat",
            TransformKind::RepeatCot => "repeat_cot",
        }
    }

    /// Suffix appended to pair ids of transformed pair sets.
    pub fn id_suffix(self) -> &'static str {
        match self {
            TransformKind::Cot => "#cot",
            TransformKind::Repeat => "#repeat",
            TransformKind::RepeatCot => "#repeat_cot",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTransform {
    kind: TransformKind,
    cot_phrase: String,
}

impl PromptTransform {
    pub fn new(kind: TransformKind, cot_phrase: impl Into<String>) -> Result<Self> {
        let cot_phrase = cot_phrase.into();
        if kind != TransformKind::Repeat && cot_phrase.is_empty() {
            return Err(Error::InvalidParameter { name: "cot_phrase", reason: "must not be empty".into() });
        }
        Ok(Self { kind, cot_phrase })
    }

    pub fn with_default_phrase(kind: TransformKind) -> Self {
        Self { kind, cot_phrase: DEFAULT_COT_PHRASE.into() }
    }

    pub fn kind(&self) -> TransformKind {
        self.kind
    }

    pub fn apply(&self, prompt: &str) -> String {
        match self.kind {
            TransformKind::Cot => format!("{prompt}\n{}", self.cot_phrase),
            TransformKind::Repeat => format!("{prompt}\n\n{prompt}"),
            TransformKind::RepeatCot => format!("{prompt}\n\n{prompt}\n{}", self.cot_phrase),
        }
    }
}

/// Rewrites every prompt; responses and order are kept, ids get the
/// transform's suffix.
pub fn apply_transform(pairs: &PairSet, t: &PromptTransform) -> PairSet {
    let out = pairs
        .pairs()
        .iter()
        .map(|p| TextPair {
            id: format!("{}{}", p.id, t.kind.id_suffix()),
            prompt: t.apply(&p.prompt),
            response: p.response.clone(),
        })
        .collect();
    PairSet::new(out).expect("suffixing unique ids keeps them unique")
}

/// Strips a transform suffix from a pair id, if present.
pub fn base_pair_id(id: &str) -> &str {
    for k in TransformKind::ALL {
        if let Some(stripped) = id.strip_suffix(k.id_suffix()) {
            return stripped;
        }
    }
    id
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    Base,
    Cot,
    Repeat,
    RepeatCot,
}

impl Setting {
    pub const ALL: [Setting; 4] = [Setting::Base, Setting::Cot, Setting::Repeat, Setting::RepeatCot];

    pub fn as_str(self) -> &'static str {
        match self {
            Setting::Base => "base",
            Setting::Cot => "cot",
            Setting::Repeat => "repeat",
            Setting::RepeatCot => "repeat_cot",
        }
    }
}

/// The four aligned matrices of a prompt-shift experiment.
#[derive(Debug, Clone)]
pub struct ShiftSet {
    base: LogLikelihoodMatrix,
    cot: LogLikelihoodMatrix,
    rep: LogLikelihoodMatrix,
    rep_cot: LogLikelihoodMatrix,
}

/// The three shift vectors of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct Shifts {
    pub cot: Vec<f64>,
    pub rep: Vec<f64>,
    pub rep_cot: Vec<f64>,
}

impl ShiftSet {
    /// Checks that all four matrices list the same models in the same order
    /// and the same pairs (transform suffixes ignored) in the same order.
    pub fn new(
        base: LogLikelihoodMatrix,
        cot: LogLikelihoodMatrix,
        rep: LogLikelihoodMatrix,
        rep_cot: LogLikelihoodMatrix,
    ) -> Result<Self> {
        for (name, m) in [("base", &base), ("cot", &cot), ("repeat", &rep), ("repeat_cot", &rep_cot)] {
            m.check()?;
            if m.centered {
                return Err(Error::WrongKind { expected: "raw", found: "centered" });
            }
            if m.model_ids != base.model_ids {
                return Err(Error::IdMismatch(format!("{name} model ids differ from base")));
            }
            let aligned = m.pair_ids.len() == base.pair_ids.len()
                && m.pair_ids.iter().zip(&base.pair_ids).all(|(a, b)| base_pair_id(a) == base_pair_id(b));
            if !aligned {
                return Err(Error::IdMismatch(format!("{name} pair ids differ from base")));
            }
        }
        if base.n_pairs() < 2 {
            return Err(Error::TooShort { len: base.n_pairs(), min: 2 });
        }
        Ok(Self { base, cot, rep, rep_cot })
    }

    pub fn model_ids(&self) -> &[String] {
        &self.base.model_ids
    }

    pub fn n_models(&self) -> usize {
        self.base.n_models()
    }

    pub fn n_pairs(&self) -> usize {
        self.base.n_pairs()
    }

    pub fn matrix(&self, setting: Setting) -> &LogLikelihoodMatrix {
        match setting {
            Setting::Base => &self.base,
            Setting::Cot => &self.cot,
            Setting::Repeat => &self.rep,
            Setting::RepeatCot => &self.rep_cot,
        }
    }

    fn index(&self, model: &str) -> Result<usize> {
        self.base.model_index(model).ok_or_else(|| Error::MissingModel(model.into()))
    }

    fn row(&self, setting: Setting, i: usize, space: Space) -> Vec<f64> {
        let r = self.matrix(setting).row(i);
        match space {
            Space::Raw => r.to_vec(),
            Space::Centered => center_slice(r),
        }
    }

    fn shifts_at(&self, i: usize, space: Space) -> Shifts {
        let base = self.row(Setting::Base, i, space);
        let diff = |s: Setting| -> Vec<f64> {
            self.row(s, i, space).iter().zip(&base).map(|(a, b)| a - b).collect()
        };
        Shifts { cot: diff(Setting::Cot), rep: diff(Setting::Repeat), rep_cot: diff(Setting::RepeatCot) }
    }

    /// Shift vectors of `model` in raw log-likelihood space.
    pub fn shift_vectors(&self, model: &str) -> Result<Shifts> {
        Ok(self.shifts_at(self.index(model)?, Space::Raw))
    }

    /// Mean base vector across models in the given space.
    fn base_mean(&self, space: Space) -> Vec<f64> {
        let n = self.n_pairs();
        let mut m = alloc::vec![0.0; n];
        for i in 0..self.n_models() {
            for (acc, v) in m.iter_mut().zip(self.row(Setting::Base, i, space)) {
                *acc += v;
            }
        }
        m.iter_mut().for_each(|v| *v /= self.n_models() as f64);
        m
    }

    fn error_at(&self, i: usize, space: Space, base_mean: &[f64]) -> Result<f64> {
        let s = self.shifts_at(i, space);
        let base = self.row(Setting::Base, i, space);
        let mut num = 0.0;
        let mut den = 0.0;
        for t in 0..self.n_pairs() {
            let r = s.cot[t] + s.rep[t] - s.rep_cot[t];
            num += r * r;
            let d = s.rep_cot[t] + (base[t] - base_mean[t]);
            den += d * d;
        }
        let den = libm::sqrt(den);
        if den < DENOMINATOR_FLOOR {
            return Err(Error::DegenerateDenominator { model: self.model_ids()[i].clone(), norm: den });
        }
        Ok(libm::sqrt(num) / den)
    }

    /// Relative error `|v_cot + v_rep - v_rep_cot| / |v_rep_cot + c_i|` where
    /// `c_i` is the model's base vector minus the cross-model mean base
    /// vector. In centered space every vector is first replaced by its
    /// centered form.
    pub fn compositionality_error(&self, model: &str, space: Space) -> Result<f64> {
        if self.n_models() < 2 {
            return Err(Error::TooShort { len: self.n_models(), min: 2 });
        }
        let i = self.index(model)?;
        self.error_at(i, space, &self.base_mean(space))
    }

    pub fn compositionality_summary(&self, space: Space) -> Result<CompositionalitySummary> {
        if self.n_models() < 2 {
            return Err(Error::TooShort { len: self.n_models(), min: 2 });
        }
        let bm = self.base_mean(space);
        let errors = (0..self.n_models())
            .map(|i| Ok((self.model_ids()[i].clone(), self.error_at(i, space, &bm)?)))
            .collect::<Result<Vec<_>>>()?;
        let values: Vec<f64> = errors.iter().map(|e| e.1).collect();
        Ok(CompositionalitySummary {
            space,
            median: stats::median(&values)?,
            mean: mean(&values),
            errors,
        })
    }

    /// Changes in mean log-likelihood per transform and the Pearson
    /// correlation between `delta_rep_cot` and `delta_cot + delta_rep`.
    pub fn delta_mean_additivity(&self) -> Result<DeltaAdditivity> {
        if self.n_models() < 2 {
            return Err(Error::TooShort { len: self.n_models(), min: 2 });
        }
        let deltas: Vec<ModelDeltas> = (0..self.n_models())
            .map(|i| {
                let b = mean(self.base.row(i));
                ModelDeltas {
                    model_id: self.model_ids()[i].clone(),
                    cot: mean(self.cot.row(i)) - b,
                    rep: mean(self.rep.row(i)) - b,
                    rep_cot: mean(self.rep_cot.row(i)) - b,
                }
            })
            .collect();
        let combined: Vec<f64> = deltas.iter().map(|d| d.rep_cot).collect();
        let summed: Vec<f64> = deltas.iter().map(|d| d.cot + d.rep).collect();
        let pearson = stats::pearson(&combined, &summed)?;
        Ok(DeltaAdditivity { pearson, deltas })
    }

    /// Orthonormal basis of the span of the cross-model mean shift vectors.
    pub fn mean_shift_basis(&self, space: Space, tolerance: f64) -> Result<SubspaceProjector> {
        let n = self.n_pairs();
        let (mut vc, mut vr) = (alloc::vec![0.0; n], alloc::vec![0.0; n]);
        for i in 0..self.n_models() {
            let s = self.shifts_at(i, space);
            vc.iter_mut().zip(&s.cot).for_each(|(a, v)| *a += v);
            vr.iter_mut().zip(&s.rep).for_each(|(a, v)| *a += v);
        }
        let k = self.n_models() as f64;
        vc.iter_mut().for_each(|v| *v /= k);
        vr.iter_mut().for_each(|v| *v /= k);
        SubspaceProjector::from_pair(&vc, &vr, tolerance)
    }

    /// Projects all 4K vectors onto the mean-shift plane and runs PCA there.
    pub fn mean_shift_projection(&self, space: Space, tolerance: f64) -> Result<ShiftProjection> {
        let basis = self.mean_shift_basis(space, tolerance)?;
        let mut plane = Vec::with_capacity(self.n_models() * 8);
        let mut tags = Vec::with_capacity(self.n_models() * 4);
        for i in 0..self.n_models() {
            for setting in Setting::ALL {
                let (a, b) = basis.coords(&self.row(setting, i, space));
                plane.push(a);
                plane.push(b);
                tags.push((self.model_ids()[i].clone(), setting));
            }
        }
        let p = pca(&plane, tags.len(), 2, 2)?;
        let points = tags
            .into_iter()
            .enumerate()
            .map(|(r, (model_id, setting))| ProjectedPoint { model_id, setting, x: p.coord(r, 0), y: p.coord(r, 1) })
            .collect();
        Ok(ShiftProjection { points, basis, explained_ratio: p.explained_ratio })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompositionalitySummary {
    pub space: Space,
    pub errors: Vec<(String, f64)>,
    pub median: f64,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDeltas {
    pub model_id: String,
    pub cot: f64,
    pub rep: f64,
    pub rep_cot: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeltaAdditivity {
    pub pearson: f64,
    pub deltas: Vec<ModelDeltas>,
}

/// Orthogonal projector onto a 2-D subspace of R^N.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceProjector {
    pub e1: Vec<f64>,
    pub e2: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl SubspaceProjector {
    /// Gram-Schmidt on `(first, second)` in that order. Fails when the angle
    /// between them is within `tolerance` of 0 or pi, or either is zero.
    pub fn from_pair(first: &[f64], second: &[f64], tolerance: f64) -> Result<Self> {
        let n1 = libm::sqrt(dot(first, first));
        let n2 = libm::sqrt(dot(second, second));
        if n1 == 0.0 || n2 == 0.0 || !n1.is_finite() || !n2.is_finite() {
            return Err(Error::Collinear { angle: 0.0, tolerance });
        }
        let e1: Vec<f64> = first.iter().map(|v| v / n1).collect();
        let along = dot(second, &e1);
        let mut w: Vec<f64> = second.iter().zip(&e1).map(|(s, e)| s - along * e).collect();
        let wn = libm::sqrt(dot(&w, &w));
        let angle = libm::atan2(wn, along);
        if angle <= tolerance || core::f64::consts::PI - angle <= tolerance || wn == 0.0 {
            return Err(Error::Collinear { angle, tolerance });
        }
        w.iter_mut().for_each(|v| *v /= wn);
        Ok(Self { e1, e2: w })
    }

    pub fn coords(&self, v: &[f64]) -> (f64, f64) {
        (dot(v, &self.e1), dot(v, &self.e2))
    }

    /// Orthogonal projection of `v` back in R^N.
    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        let (a, b) = self.coords(v);
        self.e1.iter().zip(&self.e2).map(|(x, y)| a * x + b * y).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectedPoint {
    pub model_id: String,
    pub setting: Setting,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShiftProjection {
    /// Four points per model, in model order then setting order.
    pub points: Vec<ProjectedPoint>,
    pub basis: SubspaceProjector,
    pub explained_ratio: Vec<f64>,
}
