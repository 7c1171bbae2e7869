//! End-to-end validation on oracle models: sample, score, clip, center,
//! estimate KL and MI, map, and compare against exact values.

use std::fmt::Write as _;
use std::path::PathBuf;

use llmap_core::divergence::{
    mi_mean_pmi, mi_norm, pairwise_kl, pairwise_mc_kl, symmetrize_kl, symmetrize_matrix, DistanceKind,
    PairwiseDistanceMatrix, Space,
};
use llmap_core::mapping::tsne_map;
use llmap_core::matrix::{center, clip_matrix, pmi_matrix};
use llmap_core::oracle::{
    enumerate_kl, enumerate_mi, perturb, sample_pairs, sampled_logliks, OracleConfig, ScoreMode, SyntheticModel,
};
use llmap_core::rng::fnv1a;
use llmap_core::stats::{median, pearson, spearman};
use llmap_core::tsne::TsneParams;
use llmap_core::{LogLikelihoodMatrix, Mode};
use serde_json::json;

use crate::cli::OracleRunArgs;
use crate::commands::Outcome;
use crate::error::{CliError, Result};
use crate::formats::{self, fmt_f64, write_text, FamilyMember, OracleFamily};

fn derived(seed: u64, label: &str) -> u64 {
    seed ^ fnv1a(label.as_bytes())
}

pub fn oracle_run(a: &OracleRunArgs) -> Result<Outcome> {
    if a.models < 5 {
        return Err(CliError::Usage("--models must be at least 5 for a t-SNE map".into()));
    }
    let mut inputs = Vec::new();
    let config = match &a.config {
        Some(p) => {
            inputs.push(p.clone());
            serde_json::from_str(&formats::read_text(p)?).map_err(|e| CliError::parse(p, e.line(), e.to_string()))?
        }
        None => OracleConfig::default(),
    };
    let dir = &a.output;
    let mut outputs: Vec<PathBuf> = vec![dir.clone()];
    let mut save = |name: &str, text: String| -> Result<()> {
        let path = dir.join(name);
        write_text(&path, &text)?;
        outputs.push(path);
        Ok(())
    };

    let base = SyntheticModel::random(&config, a.seed)?;
    let ids: Vec<String> = (0..a.models).map(|k| format!("m{k:02}")).collect();
    let models = ids
        .iter()
        .map(|id| perturb(&base, a.epsilon, derived(a.seed, id)))
        .collect::<llmap_core::Result<Vec<_>>>()?;
    let family = OracleFamily {
        models: ids.iter().zip(&models).map(|(id, m)| FamilyMember { model_id: id.clone(), model: m.clone() }).collect(),
    };
    save("family.json", formats::family_to_string(&family))?;

    let pairs = sample_pairs(&base, a.n, a.seed)?;
    save("pairs.jsonl", formats::pairs_to_string(&pairs))?;

    let score = |mode: ScoreMode, as_mode: Mode| -> Result<LogLikelihoodMatrix> {
        let rows = models.iter().map(|m| m.score_pairs(pairs.pairs(), mode)).collect::<llmap_core::Result<Vec<_>>>()?;
        Ok(LogLikelihoodMatrix::from_rows(ids.clone(), pairs.ids(), &rows, as_mode)?)
    };
    let cond = score(ScoreMode::Conditional, Mode::Conditional)?;
    let uncond = score(ScoreMode::Unconditional, Mode::Unconditional)?;
    save("scores_conditional.jsonl", formats::matrix_to_string(&cond))?;
    save("scores_unconditional.jsonl", formats::matrix_to_string(&uncond))?;

    let cond_c = clip_matrix(&cond, a.percentile)?;
    let uncond_c = clip_matrix(&uncond, a.percentile)?;
    save("clipped_conditional.jsonl", formats::matrix_to_string(&cond_c))?;
    save("clipped_unconditional.jsonl", formats::matrix_to_string(&uncond_c))?;
    save("centered.jsonl", formats::matrix_to_string(&cond_c.centered()?))?;

    let vector = pairwise_kl(&cond_c, Space::Centered)?;
    save("kl_vector.jsonl", formats::distances_to_string(&vector))?;

    let k = models.len();
    let mut directed = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            if i != j {
                directed[i * k + j] = enumerate_kl(&models[i], &models[j])?;
            }
        }
    }
    let exact = PairwiseDistanceMatrix::from_fn(ids.clone(), DistanceKind::KlExact, |i, j| {
        symmetrize_kl(directed[i * k + j], directed[j * k + i])
    });
    save("kl_exact.jsonl", formats::distances_to_string(&exact))?;

    let prompts = base.sample_prompts(a.mc_samples, derived(a.seed, "mc-prompts"));
    let scorers: Vec<(&str, &SyntheticModel)> = ids.iter().map(String::as_str).zip(&models).collect();
    let samples = scorers
        .iter()
        .map(|&(id, m)| sampled_logliks((id, m), &scorers, &prompts, derived(a.seed, &format!("mc-{id}"))))
        .collect::<llmap_core::Result<Vec<_>>>()?;
    let mc = symmetrize_matrix(&pairwise_mc_kl(&ids, &samples)?);
    save("kl_mc.jsonl", formats::distances_to_string(&mc))?;

    let pmi = pmi_matrix(&cond_c, &uncond_c)?;
    save("pmi.jsonl", formats::matrix_to_string(&pmi))?;
    let mut mi_text = String::new();
    let (mut mean_pmis, mut norms) = (Vec::new(), Vec::new());
    for (i, m) in models.iter().enumerate() {
        let v = pmi.model_vector(i);
        let (mp, mn) = (mi_mean_pmi(&v)?, mi_norm(&center(&v)?)?);
        mean_pmis.push(mp);
        norms.push(mn);
        let _ = writeln!(
            mi_text,
            "{{\"model_id\":\"{}\",\"mi_exact\":{},\"mi_mean_pmi\":{},\"mi_norm\":{}}}",
            ids[i],
            fmt_f64(enumerate_mi(m)),
            fmt_f64(mp),
            fmt_f64(mn)
        );
    }
    save("mi.jsonl", mi_text)?;

    let params = TsneParams { perplexity: a.perplexity, iterations: a.iterations, seed: a.seed, ..TsneParams::default() };
    let map = tsne_map(&cond_c, Space::Raw, &params)?;
    save("map.jsonl", formats::map_to_string(&map, &Default::default()))?;

    let mut table = String::from("model_i\tmodel_j\texact_kl\tvector_kl\tmc_kl\n");
    let (mut ex, mut ve, mut mcv, mut ratios) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (i, j, e) in exact.upper_triangle() {
        let (v, m) = (vector.get(i, j), mc.get(i, j));
        let _ = writeln!(table, "{}\t{}\t{e:.6e}\t{v:.6e}\t{m:.6e}", ids[i], ids[j]);
        ex.push(e);
        ve.push(v);
        mcv.push(m);
        ratios.push(v / e);
    }
    save("comparison.tsv", table.clone())?;
    let summary = json!({
        "pairs": ex.len(),
        "spearman_vector_exact": spearman(&ve, &ex)?,
        "spearman_mc_exact": spearman(&mcv, &ex)?,
        "spearman_vector_mc": spearman(&ve, &mcv)?,
        "median_ratio_vector_exact": median(&ratios)?,
        "pearson_mi_norm_mean_pmi": pearson(&norms, &mean_pmis).ok(),
        "clip_threshold_conditional": cond_c.clipped.map(|c| c.threshold),
        "clip_threshold_unconditional": uncond_c.clipped.map(|c| c.threshold),
        "tsne_perplexity": match map.params {
            llmap_core::mapping::MapParams::Tsne { perplexity, .. } => Some(perplexity),
            _ => None,
        },
    });
    let summary_text = serde_json::to_string_pretty(&summary).expect("summaries serialize") + "\n";
    save("summary.json", summary_text.clone())?;

    let mut out = Outcome::new(inputs, outputs);
    out.output_is_dir = true;
    out.details.insert("summary".into(), summary);
    out.details.insert("config".into(), json!(config));
    out.report = format!("{table}\n{summary_text}");
    Ok(out)
}
