//! Command implementations.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

use llmap_core::bootstrap::bootstrap_ci;
use llmap_core::divergence::{
    kl_rows_subset, mi_mean_pmi, mi_norm, pairwise_kl, pairwise_mc_kl, pairwise_semdist, symmetrize_matrix,
};
use llmap_core::mapping::{pca_map, tsne_map};
use llmap_core::matrix::{center, clip_jointly, clip_matrix, pmi_matrix};
use llmap_core::oracle::ScoreMode;
use llmap_core::promptshift::{apply_transform, PromptTransform, ShiftSet, TransformKind};
use llmap_core::tsne::TsneParams;
use llmap_core::{LogLikelihoodMatrix, Mode, ModelVector, VectorKind};
use serde_json::{json, Value};

use crate::cli::{
    BootstrapArgs, ClipArgs, Command, IoArgs, KlArgs, MapArgs, MapMethodArg, McKlArgs, PmiArgs, RerunArgs, ScoreArgs,
    ShiftBuildArgs, ShiftErrorArgs, ShiftInputs, ShiftProjectArgs, Statistic,
};
use crate::error::{CliError, Result};
use crate::formats::{self, fmt_f64, write_text};
use crate::manifest::{digests, manifest_path_for, sha256_file, Manifest};
use crate::scorer::{fetch_scores, ScorerConfig};

/// What a command read, wrote and wants recorded.
#[derive(Debug, Default)]
pub struct Outcome {
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub details: BTreeMap<String, Value>,
    /// Text for standard output.
    pub report: String,
    pub output_is_dir: bool,
}

impl Outcome {
    pub(crate) fn new(inputs: Vec<PathBuf>, outputs: Vec<PathBuf>) -> Self {
        Self { inputs, outputs, ..Self::default() }
    }

    fn detail(mut self, key: &str, value: Value) -> Self {
        self.details.insert(key.into(), value);
        self
    }
}

/// Runs `cmd`, writes its manifest and returns the report text.
pub fn run(mut cmd: Command) -> Result<String> {
    if let Command::Rerun(a) = &cmd {
        return rerun(a);
    }
    cmd.absolutize();
    let outcome = execute(&cmd)?;
    let first = outcome.outputs.first().cloned().unwrap_or_default();
    let manifest_path = manifest_path_for(&first, outcome.output_is_dir);
    let outputs = if outcome.output_is_dir {
        outcome.outputs.iter().skip(1).cloned().collect::<Vec<_>>()
    } else {
        outcome.outputs.clone()
    };
    let manifest = Manifest {
        tool: "llmap".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: cmd,
        inputs: digests(&outcome.inputs)?,
        outputs: digests(&outputs)?,
        details: outcome.details,
    };
    manifest.save(&manifest_path)?;
    let mut report = outcome.report;
    let _ = writeln!(report, "manifest: {}", manifest_path.display());
    Ok(report)
}

fn execute(cmd: &Command) -> Result<Outcome> {
    match cmd {
        Command::Score(a) => score(a),
        Command::Clip(a) => clip(a),
        Command::Center(a) => center_cmd(a),
        Command::Pmi(a) => pmi(a),
        Command::Kl(a) => kl(a),
        Command::McKl(a) => mc_kl(a),
        Command::Mi(a) => mi(a),
        Command::ShiftBuild(a) => shift_build(a),
        Command::ShiftError(a) => shift_error(a),
        Command::ShiftProject(a) => shift_project(a),
        Command::Map(a) => map(a),
        Command::Semdist(a) => semdist(a),
        Command::Bootstrap(a) => bootstrap(a),
        Command::OracleRun(a) => crate::oracle_run::oracle_run(a),
        Command::Rerun(_) => unreachable!("handled by run"),
    }
}

fn rerun(a: &RerunArgs) -> Result<String> {
    let before = formats::read_text(&a.manifest)?;
    let m = Manifest::load(&a.manifest)?;
    for d in &m.inputs {
        if sha256_file(&d.path)? != d.sha256 {
            return Err(CliError::Validation(format!("input {} changed since the manifest was written", d.path.display())));
        }
    }
    run(m.command.clone())?;
    let mut changed = Vec::new();
    for d in &m.outputs {
        if sha256_file(&d.path)? != d.sha256 {
            changed.push(d.path.display().to_string());
        }
    }
    if formats::read_text(&a.manifest)? != before {
        changed.push(a.manifest.display().to_string());
    }
    if !changed.is_empty() {
        return Err(CliError::Validation(format!("rerun differs from the manifest: {}", changed.join(", "))));
    }
    Ok(format!("reproduced {} outputs byte-identically\n", m.outputs.len()))
}

fn score(a: &ScoreArgs) -> Result<Outcome> {
    let pairs = formats::load_pairs(&a.input)?;
    let mut inputs = vec![a.input.clone()];
    let mut out = Outcome::default();
    let (ids, rows) = if let Some(endpoint) = &a.endpoint {
        if a.model_ids.is_empty() {
            return Err(CliError::Usage("--endpoint needs at least one --model-id".into()));
        }
        if a.empty_prompt {
            return Err(CliError::Usage("--empty-prompt applies only to --oracle".into()));
        }
        let cfg = ScorerConfig {
            batch_size: a.batch_size,
            retries: a.retries,
            concurrency: a.concurrency,
            backoff_base: Duration::from_millis(a.backoff_ms),
            ..ScorerConfig::default()
        };
        let rows = a
            .model_ids
            .iter()
            .map(|id| Ok(fetch_scores(endpoint, id, &pairs, a.mode, &cfg)?.values))
            .collect::<Result<Vec<_>>>()?;
        out.details.insert("endpoint".into(), json!(endpoint));
        (a.model_ids.clone(), rows)
    } else {
        let path = a.oracle.as_ref().expect("clap requires --endpoint or --oracle");
        inputs.push(path.clone());
        let family = formats::load_family(path)?;
        let members: Vec<_> = if a.model_ids.is_empty() {
            family.models.iter().collect()
        } else {
            a.model_ids
                .iter()
                .map(|id| {
                    family
                        .models
                        .iter()
                        .find(|m| &m.model_id == id)
                        .ok_or_else(|| CliError::Validation(format!("model {id:?} is not in {}", path.display())))
                })
                .collect::<Result<_>>()?
        };
        let mode = match (a.mode, a.empty_prompt) {
            (Mode::Unconditional, true) => ScoreMode::EmptyPrompt,
            (Mode::Unconditional, false) => ScoreMode::Unconditional,
            (_, true) => return Err(CliError::Usage("--empty-prompt needs --mode unconditional".into())),
            _ => ScoreMode::Conditional,
        };
        let rows = members.iter().map(|m| Ok(m.model.score_pairs(pairs.pairs(), mode)?)).collect::<Result<Vec<_>>>()?;
        out.details.insert("score_mode".into(), json!(mode));
        (members.iter().map(|m| m.model_id.clone()).collect(), rows)
    };
    let m = LogLikelihoodMatrix::from_rows(ids, pairs.ids(), &rows, a.mode)?;
    formats::save_matrix(&m, &a.output)?;
    out.inputs = inputs;
    out.outputs = vec![a.output.clone()];
    out.report = format!("scored {} pairs with {} models\n", m.n_pairs(), m.n_models());
    Ok(out)
}

fn clip(a: &ClipArgs) -> Result<Outcome> {
    if a.input.len() != a.output.len() {
        return Err(CliError::Usage(format!("{} inputs but {} outputs", a.input.len(), a.output.len())));
    }
    let ms = a.input.iter().map(|p| formats::load_matrix(p)).collect::<Result<Vec<_>>>()?;
    let clipped = if a.joint {
        clip_jointly(&ms.iter().collect::<Vec<_>>(), a.percentile)?
    } else {
        ms.iter().map(|m| clip_matrix(m, a.percentile)).collect::<llmap_core::Result<Vec<_>>>()?
    };
    let mut report = String::new();
    let mut thresholds = Vec::new();
    for (m, path) in clipped.iter().zip(&a.output) {
        formats::save_matrix(m, path)?;
        let t = m.clipped.expect("clipping records its threshold").threshold;
        thresholds.push(t);
        let _ = writeln!(report, "{}: threshold {t}", path.display());
    }
    let mut out = Outcome::new(a.input.clone(), a.output.clone()).detail("thresholds", json!(thresholds));
    out.report = report;
    Ok(out)
}

fn center_cmd(a: &IoArgs) -> Result<Outcome> {
    let m = formats::load_matrix(&a.input)?.centered()?;
    formats::save_matrix(&m, &a.output)?;
    Ok(Outcome::new(vec![a.input.clone()], vec![a.output.clone()]))
}

fn pmi(a: &PmiArgs) -> Result<Outcome> {
    let m = pmi_matrix(&formats::load_matrix(&a.input)?, &formats::load_matrix(&a.uncond)?)?;
    formats::save_matrix(&m, &a.output)?;
    Ok(Outcome::new(vec![a.input.clone(), a.uncond.clone()], vec![a.output.clone()]))
}

fn kl(a: &KlArgs) -> Result<Outcome> {
    let d = pairwise_kl(&formats::load_matrix(&a.input)?, a.space)?;
    formats::save_distances(&d, &a.output)?;
    Ok(Outcome::new(vec![a.input.clone()], vec![a.output.clone()]))
}

fn mc_kl(a: &McKlArgs) -> Result<Outcome> {
    let samples = formats::load_sampled(&a.input)?;
    let ids: Vec<String> = samples.iter().map(|s| s.generator_model.clone()).collect();
    let mut d = pairwise_mc_kl(&ids, &samples)?;
    if a.symmetric {
        d = symmetrize_matrix(&d);
    }
    formats::save_distances(&d, &a.output)?;
    Ok(Outcome::new(vec![a.input.clone()], vec![a.output.clone()]))
}

fn require_pmi(m: &LogLikelihoodMatrix, path: &Path) -> Result<()> {
    if m.mode != Mode::Pmi || m.centered {
        return Err(CliError::Validation(format!("{} is not an uncentered PMI matrix", path.display())));
    }
    Ok(())
}

fn mi(a: &IoArgs) -> Result<Outcome> {
    let m = formats::load_matrix(&a.input)?;
    require_pmi(&m, &a.input)?;
    let mut text = String::new();
    for i in 0..m.n_models() {
        let v = m.model_vector(i);
        let _ = writeln!(
            text,
            "{{\"model_id\":{},\"mi_mean_pmi\":{},\"mi_norm\":{}}}",
            serde_json::to_string(&v.model_id).expect("strings serialize"),
            fmt_f64(mi_mean_pmi(&v)?),
            fmt_f64(mi_norm(&center(&v)?)?),
        );
    }
    write_text(&a.output, &text)?;
    Ok(Outcome::new(vec![a.input.clone()], vec![a.output.clone()]))
}

fn shift_build(a: &ShiftBuildArgs) -> Result<Outcome> {
    let pairs = formats::load_pairs(&a.input)?;
    let mut outputs = vec![a.output.clone()];
    for kind in TransformKind::ALL {
        let t = PromptTransform::new(kind, a.cot_phrase.clone())?;
        let path = a.output.join(format!("{}.jsonl", kind.as_str()));
        formats::save_pairs(&apply_transform(&pairs, &t), &path)?;
        outputs.push(path);
    }
    let mut out = Outcome::new(vec![a.input.clone()], outputs);
    out.output_is_dir = true;
    Ok(out)
}

fn load_shift_set(i: &ShiftInputs) -> Result<(ShiftSet, Value)> {
    let load = |p: &PathBuf| -> Result<LogLikelihoodMatrix> {
        let m = formats::load_matrix(p)?;
        Ok(if i.no_clip { m } else { clip_matrix(&m, i.percentile)? })
    };
    let ms = [load(&i.base)?, load(&i.cot)?, load(&i.repeat)?, load(&i.repeat_cot)?];
    let thresholds: Vec<Option<f64>> = ms.iter().map(|m| m.clipped.map(|c| c.threshold)).collect();
    let [b, c, r, rc] = ms;
    Ok((ShiftSet::new(b, c, r, rc)?, json!(thresholds)))
}

fn shift_paths(i: &ShiftInputs) -> Vec<PathBuf> {
    vec![i.base.clone(), i.cot.clone(), i.repeat.clone(), i.repeat_cot.clone()]
}

fn shift_error(a: &ShiftErrorArgs) -> Result<Outcome> {
    let (s, thresholds) = load_shift_set(&a.inputs)?;
    let summary = s.compositionality_summary(a.space)?;
    let add = s.delta_mean_additivity()?;
    let report = json!({
        "space": a.space,
        "median": summary.median,
        "mean": summary.mean,
        "errors": summary.errors.iter().map(|(id, e)| json!({"model_id": id, "error": e})).collect::<Vec<_>>(),
        "delta_pearson": add.pearson,
        "deltas": add.deltas.iter().map(|d| json!({
            "model_id": d.model_id, "cot": d.cot, "repeat": d.rep, "repeat_cot": d.rep_cot
        })).collect::<Vec<_>>(),
    });
    write_text(&a.output, &(serde_json::to_string_pretty(&report).expect("reports serialize") + "\n"))?;
    let mut out = Outcome::new(shift_paths(&a.inputs), vec![a.output.clone()]).detail("clip_thresholds", thresholds);
    out.report = format!("median {} mean {} delta pearson {}\n", summary.median, summary.mean, add.pearson);
    Ok(out)
}

fn shift_project(a: &ShiftProjectArgs) -> Result<Outcome> {
    let (s, thresholds) = load_shift_set(&a.inputs)?;
    let p = s.mean_shift_projection(a.space, a.angle_tolerance)?;
    let mut text = String::new();
    for pt in &p.points {
        let _ = writeln!(
            text,
            "{{\"model_id\":{},\"setting\":\"{}\",\"x\":{},\"y\":{}}}",
            serde_json::to_string(&pt.model_id).expect("strings serialize"),
            pt.setting.as_str(),
            fmt_f64(pt.x),
            fmt_f64(pt.y)
        );
    }
    write_text(&a.output, &text)?;
    Ok(Outcome::new(shift_paths(&a.inputs), vec![a.output.clone()])
        .detail("clip_thresholds", thresholds)
        .detail("explained_ratio", json!(p.explained_ratio)))
}

fn map(a: &MapArgs) -> Result<Outcome> {
    let m = formats::load_matrix(&a.input)?;
    let e = match a.method {
        MapMethodArg::Pca => pca_map(&m, a.space)?,
        MapMethodArg::Tsne => tsne_map(
            &m,
            a.space,
            &TsneParams {
                perplexity: a.perplexity,
                iterations: a.iterations,
                learning_rate: a.learning_rate,
                seed: a.seed,
                ..TsneParams::default()
            },
        )?,
    };
    let mut inputs = vec![a.input.clone()];
    let metadata = match &a.metadata {
        Some(p) => {
            inputs.push(p.clone());
            formats::load_metadata(p)?
        }
        None => Default::default(),
    };
    formats::save_map(&e, &metadata, &a.output)?;
    Ok(Outcome::new(inputs, vec![a.output.clone()]).detail("params", json!(e.params)))
}

fn semdist(a: &IoArgs) -> Result<Outcome> {
    let d = pairwise_semdist(&formats::load_embeddings(&a.input)?)?;
    formats::save_distances(&d, &a.output)?;
    Ok(Outcome::new(vec![a.input.clone()], vec![a.output.clone()]))
}

fn bootstrap(a: &BootstrapArgs) -> Result<Outcome> {
    let m = formats::load_matrix(&a.input)?;
    let want = if a.statistic == Statistic::Kl { 2 } else { 1 };
    if a.models.len() != want {
        return Err(CliError::Usage(format!("{:?} needs {want} --model flags", a.statistic)));
    }
    let rows = a
        .models
        .iter()
        .map(|id| m.model_index(id).map(|i| m.row(i)).ok_or_else(|| CliError::Validation(format!("model {id:?} not in matrix"))))
        .collect::<Result<Vec<_>>>()?;
    if matches!(a.statistic, Statistic::MeanPmi | Statistic::MiNorm) {
        require_pmi(&m, &a.input)?;
    }
    let pick = |idx: &[usize]| -> Vec<f64> { idx.iter().map(|&s| rows[0][s]).collect() };
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let ci = bootstrap_ci(
        |idx| match a.statistic {
            Statistic::Kl => kl_rows_subset(rows[0], rows[1], idx, a.space),
            Statistic::MeanPmi | Statistic::MeanLoglik => Ok(mean(&pick(idx))),
            Statistic::MiNorm => mi_norm(&center(&ModelVector::new("", pick(idx), VectorKind::Pmi))?),
        },
        m.n_pairs(),
        a.resamples,
        a.seed,
        a.level,
    )?;
    let report = json!({
        "statistic": a.statistic,
        "models": a.models,
        "point": ci.point,
        "lower": ci.lower,
        "upper": ci.upper,
        "level": ci.level,
        "resamples": ci.resamples,
        "seed": a.seed,
    });
    write_text(&a.output, &(serde_json::to_string_pretty(&report).expect("reports serialize") + "\n"))?;
    let mut out = Outcome::new(vec![a.input.clone()], vec![a.output.clone()]);
    out.report = format!("{} [{}, {}]\n", ci.point, ci.lower, ci.upper);
    Ok(out)
}
