//! Command-line surface.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use llmap_core::divergence::Space;
use llmap_core::promptshift::{DEFAULT_ANGLE_TOLERANCE, DEFAULT_COT_PHRASE};
use llmap_core::Mode;
use serde::{Deserialize, Serialize};

use crate::error::EXIT_STATUS_HELP;

#[derive(Debug, Parser)]
#[command(name = "llmap", version, about = "Map language models by their log-likelihood vectors", after_help = EXIT_STATUS_HELP)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum Command {
    /// Score a pair file with a remote scorer or oracle models.
    Score(ScoreArgs),
    /// Floor entries at a lower percentile.
    Clip(ClipArgs),
    /// Subtract each row's mean.
    Center(IoArgs),
    /// Conditional minus unconditional log-likelihoods.
    Pmi(PmiArgs),
    /// Pairwise KL from log-likelihood vectors.
    Kl(KlArgs),
    /// Pairwise Monte Carlo KL from sampled log-likelihoods.
    McKl(McKlArgs),
    /// Mutual information per model from a PMI matrix.
    Mi(IoArgs),
    /// Write the cot, repeat and repeat_cot variants of a pair file.
    ShiftBuild(ShiftBuildArgs),
    /// Compositionality errors of prompt shifts.
    ShiftError(ShiftErrorArgs),
    /// Project all settings onto the mean-shift plane.
    ShiftProject(ShiftProjectArgs),
    /// Two-dimensional model map.
    Map(MapArgs),
    /// Pairwise semantic distance from response embeddings.
    Semdist(IoArgs),
    /// Percentile bootstrap interval over prompts.
    Bootstrap(BootstrapArgs),
    /// Validate the estimators end to end on synthetic oracle models.
    OracleRun(OracleRunArgs),
    /// Re-execute the command recorded in a manifest and verify its outputs.
    #[serde(skip)]
    Rerun(RerunArgs),
}

fn parse_space(s: &str) -> Result<Space, String> {
    match s {
        "raw" => Ok(Space::Raw),
        "centered" => Ok(Space::Centered),
        _ => Err(format!("expected raw or centered, got {s:?}")),
    }
}

fn parse_score_mode(s: &str) -> Result<Mode, String> {
    match Mode::parse(s) {
        Some(m @ (Mode::Conditional | Mode::Unconditional)) => Ok(m),
        _ => Err(format!("expected conditional or unconditional, got {s:?}")),
    }
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct IoArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
#[command(group = clap::ArgGroup::new("scorer").required(true).args(["endpoint", "oracle"]))]
pub struct ScoreArgs {
    /// Pair file.
    #[arg(long)]
    pub input: PathBuf,
    /// Matrix file, one row per model.
    #[arg(long)]
    pub output: PathBuf,
    /// Base URL of the scorer; requests go to `{endpoint}/score`.
    #[arg(long)]
    pub endpoint: Option<String>,
    /// Oracle family file to score with instead of a remote scorer.
    #[arg(long)]
    pub oracle: Option<PathBuf>,
    /// Models to score (repeatable). With --oracle, defaults to every model.
    #[arg(long = "model-id")]
    pub model_ids: Vec<String>,
    #[arg(long, default_value = "conditional", value_parser = parse_score_mode)]
    pub mode: Mode,
    /// With --oracle and unconditional mode, score against an averaged
    /// empty prompt instead of the exact marginal.
    #[arg(long)]
    pub empty_prompt: bool,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 3)]
    pub retries: usize,
    #[arg(long, default_value_t = 4)]
    pub concurrency: usize,
    /// First retry delay in milliseconds, doubled on each further retry.
    #[arg(long, default_value_t = 1000)]
    pub backoff_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ClipArgs {
    /// Matrix files (repeatable).
    #[arg(long, required = true)]
    pub input: Vec<PathBuf>,
    /// One output per input, in the same order.
    #[arg(long, required = true)]
    pub output: Vec<PathBuf>,
    #[arg(long, default_value_t = 0.02)]
    pub percentile: f64,
    /// Use one threshold computed over all inputs together.
    #[arg(long)]
    pub joint: bool,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct PmiArgs {
    /// Conditional matrix.
    #[arg(long)]
    pub input: PathBuf,
    /// Unconditional matrix with the same ids.
    #[arg(long)]
    pub uncond: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct KlArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value = "centered", value_parser = parse_space)]
    pub space: Space,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct McKlArgs {
    /// Sampled log-likelihood file, one generator per line.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Average the two directions.
    #[arg(long)]
    pub symmetric: bool,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ShiftBuildArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value = DEFAULT_COT_PHRASE)]
    pub cot_phrase: String,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ShiftInputs {
    #[arg(long)]
    pub base: PathBuf,
    #[arg(long)]
    pub cot: PathBuf,
    #[arg(long)]
    pub repeat: PathBuf,
    #[arg(long)]
    pub repeat_cot: PathBuf,
    /// Use the matrices as given instead of clipping each one first.
    #[arg(long)]
    pub no_clip: bool,
    #[arg(long, default_value_t = 0.02)]
    pub percentile: f64,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ShiftErrorArgs {
    #[command(flatten)]
    pub inputs: ShiftInputs,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value = "raw", value_parser = parse_space)]
    pub space: Space,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ShiftProjectArgs {
    #[command(flatten)]
    pub inputs: ShiftInputs,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value = "raw", value_parser = parse_space)]
    pub space: Space,
    /// Minimum angle in radians between the two mean shift vectors.
    #[arg(long, default_value_t = DEFAULT_ANGLE_TOLERANCE)]
    pub angle_tolerance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapMethodArg {
    Pca,
    Tsne,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct MapArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, value_enum, default_value_t = MapMethodArg::Tsne)]
    pub method: MapMethodArg,
    #[arg(long, default_value = "raw", value_parser = parse_space)]
    pub space: Space,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Defaults to min(30, (K - 1) / 3).
    #[arg(long)]
    pub perplexity: Option<f64>,
    #[arg(long, default_value_t = 1000)]
    pub iterations: usize,
    #[arg(long, default_value_t = 200.0)]
    pub learning_rate: f64,
    /// Per-model metadata joined into each record.
    #[arg(long)]
    pub metadata: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Statistic {
    /// Vector KL between two models.
    Kl,
    /// Mean PMI of one model (PMI matrix input).
    MeanPmi,
    /// Squared norm of the centered PMI vector over 2N.
    MiNorm,
    /// Mean log-likelihood of one model.
    MeanLoglik,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct BootstrapArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, value_enum)]
    pub statistic: Statistic,
    /// One model, or two for kl (repeatable).
    #[arg(long = "model", required = true)]
    pub models: Vec<String>,
    #[arg(long, default_value = "centered", value_parser = parse_space)]
    pub space: Space,
    #[arg(long, default_value_t = 1000)]
    pub resamples: usize,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct OracleRunArgs {
    /// Output directory.
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub models: usize,
    #[arg(long, default_value_t = 0.02)]
    pub epsilon: f64,
    /// Pairs sampled from the base model.
    #[arg(long, default_value_t = 10_000)]
    pub n: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Samples per generator for Monte Carlo KL.
    #[arg(long, default_value_t = 100_000)]
    pub mc_samples: usize,
    #[arg(long, default_value_t = 0.02)]
    pub percentile: f64,
    #[arg(long)]
    pub perplexity: Option<f64>,
    #[arg(long, default_value_t = 1000)]
    pub iterations: usize,
    /// Oracle configuration; built-in defaults when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct RerunArgs {
    #[arg(long)]
    pub manifest: PathBuf,
}

fn abs(p: &mut PathBuf) {
    if let Ok(a) = std::path::absolute(&*p) {
        *p = a;
    }
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Score(_) => "score",
            Command::Clip(_) => "clip",
            Command::Center(_) => "center",
            Command::Pmi(_) => "pmi",
            Command::Kl(_) => "kl",
            Command::McKl(_) => "mc-kl",
            Command::Mi(_) => "mi",
            Command::ShiftBuild(_) => "shift-build",
            Command::ShiftError(_) => "shift-error",
            Command::ShiftProject(_) => "shift-project",
            Command::Map(_) => "map",
            Command::Semdist(_) => "semdist",
            Command::Bootstrap(_) => "bootstrap",
            Command::OracleRun(_) => "oracle-run",
            Command::Rerun(_) => "rerun",
        }
    }

    /// Makes every path absolute so a manifest can be replayed from anywhere.
    pub fn absolutize(&mut self) {
        fn shift(i: &mut ShiftInputs) {
            [&mut i.base, &mut i.cot, &mut i.repeat, &mut i.repeat_cot].into_iter().for_each(abs);
        }
        match self {
            Command::Score(a) => {
                abs(&mut a.input);
                abs(&mut a.output);
                a.oracle.iter_mut().for_each(abs);
            }
            Command::Clip(a) => a.input.iter_mut().chain(a.output.iter_mut()).for_each(abs),
            Command::Center(a) | Command::Mi(a) | Command::Semdist(a) => {
                abs(&mut a.input);
                abs(&mut a.output);
            }
            Command::Pmi(a) => [&mut a.input, &mut a.uncond, &mut a.output].into_iter().for_each(abs),
            Command::Kl(a) => [&mut a.input, &mut a.output].into_iter().for_each(abs),
            Command::McKl(a) => [&mut a.input, &mut a.output].into_iter().for_each(abs),
            Command::ShiftBuild(a) => [&mut a.input, &mut a.output].into_iter().for_each(abs),
            Command::ShiftError(a) => {
                shift(&mut a.inputs);
                abs(&mut a.output);
            }
            Command::ShiftProject(a) => {
                shift(&mut a.inputs);
                abs(&mut a.output);
            }
            Command::Map(a) => {
                abs(&mut a.input);
                abs(&mut a.output);
                a.metadata.iter_mut().for_each(abs);
            }
            Command::Bootstrap(a) => [&mut a.input, &mut a.output].into_iter().for_each(abs),
            Command::OracleRun(a) => {
                abs(&mut a.output);
                a.config.iter_mut().for_each(abs);
            }
            Command::Rerun(a) => abs(&mut a.manifest),
        }
    }
}
