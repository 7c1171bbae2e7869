//! Newline-delimited JSON file formats.
//!
//! Log-likelihoods and coordinates are written with 17 significant digits
//! so that every `f64` survives a save/load cycle bit for bit.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use llmap_core::divergence::{DistanceKind, EmbeddingSet, PairwiseDistanceMatrix, SampledLogLiks};
use llmap_core::mapping::{MapEmbedding, MapMethod, MapParams};
use llmap_core::oracle::SyntheticModel;
use llmap_core::{ClipInfo, LogLikelihoodMatrix, Mode, PairSet, TextPair};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{CliError, Result};

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn json_string(s: &str) -> String {
    serde_json::to_string(s).expect("strings always serialize")
}

fn push_array(out: &mut String, values: &[f64]) {
    out.push('[');
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&fmt_f64(*v));
    }
    out.push(']');
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| CliError::Read { path: path.into(), source })
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| CliError::Write { path: dir.into(), source })?;
    }
    fs::write(path, text).map_err(|source| CliError::Write { path: path.into(), source })
}

/// Non-blank lines with their 1-based line numbers.
fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().map(|(i, l)| (i + 1, l)).filter(|(_, l)| !l.trim().is_empty())
}

fn parse_line<T: DeserializeOwned>(path: &Path, line: usize, text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| CliError::parse(path, line, e.to_string()))
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>> {
    let text = read_text(path)?;
    lines(&text).map(|(n, l)| Ok((n, parse_line(path, n, l)?))).collect()
}

#[derive(Deserialize)]
struct PairRecord {
    id: String,
    prompt: String,
    response: String,
}

pub fn parse_pairs(text: &str, path: &Path) -> Result<PairSet> {
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut pairs = Vec::new();
    for (n, l) in lines(text) {
        let r: PairRecord = parse_line(path, n, l)?;
        if let Some(first) = seen.insert(r.id.clone(), n) {
            return Err(CliError::Validation(format!(
                "{}: duplicate pair id {:?} at lines {first} and {n}",
                path.display(),
                r.id
            )));
        }
        if r.response.is_empty() {
            return Err(CliError::Validation(format!(
                "{}:{n}: pair {:?} has an empty response",
                path.display(),
                r.id
            )));
        }
        pairs.push(TextPair { id: r.id, prompt: r.prompt, response: r.response });
    }
    Ok(PairSet::new(pairs)?)
}

pub fn load_pairs(path: &Path) -> Result<PairSet> {
    parse_pairs(&read_text(path)?, path)
}

pub fn pairs_to_string(pairs: &PairSet) -> String {
    let mut out = String::new();
    for p in pairs.pairs() {
        out.push_str(&serde_json::to_string(p).expect("pairs always serialize"));
        out.push('\n');
    }
    out
}

pub fn save_pairs(pairs: &PairSet, path: &Path) -> Result<()> {
    write_text(path, &pairs_to_string(pairs))
}

#[derive(Serialize, Deserialize)]
struct MatrixHeader {
    pair_ids: Vec<String>,
    mode: String,
    clipped: Option<ClipInfo>,
    centered: bool,
}

#[derive(Deserialize)]
struct RowRecord {
    model_id: String,
    values: Vec<f64>,
}

fn row_line(out: &mut String, id: &str, values: &[f64]) {
    let _ = write!(out, "{{\"model_id\":{},\"values\":", json_string(id));
    push_array(out, values);
    out.push_str("}\n");
}

pub fn matrix_to_string(m: &LogLikelihoodMatrix) -> String {
    let header = MatrixHeader {
        pair_ids: m.pair_ids.clone(),
        mode: m.mode.as_str().into(),
        clipped: m.clipped,
        centered: m.centered,
    };
    let mut out = serde_json::to_string(&header).expect("headers always serialize");
    out.push('\n');
    for (id, row) in m.model_ids.iter().zip(m.rows()) {
        row_line(&mut out, id, row);
    }
    out
}

pub fn save_matrix(m: &LogLikelihoodMatrix, path: &Path) -> Result<()> {
    write_text(path, &matrix_to_string(m))
}

/// Header line plus one row record per model, each of the header's width.
fn parse_rows<H: DeserializeOwned>(
    text: &str,
    path: &Path,
    width: impl Fn(&H) -> usize,
) -> Result<(H, Vec<String>, Vec<f64>)> {
    let mut it = lines(text);
    let (n, first) = it.next().ok_or_else(|| CliError::parse(path, 1, "missing header record"))?;
    let header: H = parse_line(path, n, first)?;
    let w = width(&header);
    let (mut ids, mut values) = (Vec::new(), Vec::new());
    for (n, l) in it {
        let r: RowRecord = parse_line(path, n, l)?;
        if r.values.len() != w {
            return Err(CliError::Validation(format!(
                "{}:{n}: row {:?} has {} values, expected {w}",
                path.display(),
                r.model_id,
                r.values.len()
            )));
        }
        ids.push(r.model_id);
        values.extend(r.values);
    }
    Ok((header, ids, values))
}

pub fn parse_matrix(text: &str, path: &Path) -> Result<LogLikelihoodMatrix> {
    let (h, ids, values) = parse_rows::<MatrixHeader>(text, path, |h| h.pair_ids.len())?;
    let mode = Mode::parse(&h.mode).ok_or_else(|| CliError::parse(path, 1, format!("unknown mode {:?}", h.mode)))?;
    let mut m = LogLikelihoodMatrix::new(ids, h.pair_ids, values, mode)?;
    m.clipped = h.clipped;
    m.centered = h.centered;
    m.check()?;
    Ok(m)
}

pub fn load_matrix(path: &Path) -> Result<LogLikelihoodMatrix> {
    parse_matrix(&read_text(path)?, path)
}

#[derive(Serialize, Deserialize)]
struct DistanceHeader {
    kind: String,
    model_ids: Vec<String>,
}

pub fn distances_to_string(d: &PairwiseDistanceMatrix) -> String {
    let header = DistanceHeader { kind: d.kind.as_str().into(), model_ids: d.model_ids.clone() };
    let mut out = serde_json::to_string(&header).expect("headers always serialize");
    out.push('\n');
    let k = d.len();
    for (i, id) in d.model_ids.iter().enumerate() {
        row_line(&mut out, id, &d.values[i * k..(i + 1) * k]);
    }
    out
}

pub fn save_distances(d: &PairwiseDistanceMatrix, path: &Path) -> Result<()> {
    write_text(path, &distances_to_string(d))
}

pub fn load_distances(path: &Path) -> Result<PairwiseDistanceMatrix> {
    let text = read_text(path)?;
    let (h, ids, values) = parse_rows::<DistanceHeader>(&text, path, |h| h.model_ids.len())?;
    let kind = DistanceKind::parse(&h.kind)
        .ok_or_else(|| CliError::parse(path, 1, format!("unknown distance kind {:?}", h.kind)))?;
    if ids != h.model_ids {
        return Err(CliError::Validation(format!("{}: row ids differ from header", path.display())));
    }
    Ok(PairwiseDistanceMatrix { model_ids: ids, values, kind })
}

/// One line of a map file.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct MapRecord {
    pub model_id: String,
    pub x: f64,
    pub y: f64,
    pub method: MapMethod,
    pub params: MapParams,
    pub metadata: Option<Map<String, Value>>,
}

/// Per-model metadata keyed by model id.
pub type Metadata = BTreeMap<String, Map<String, Value>>;

/// Records sorted by model id; models without metadata get `null`.
pub fn map_to_string(e: &MapEmbedding, metadata: &Metadata) -> String {
    let mut order: Vec<usize> = (0..e.model_ids.len()).collect();
    order.sort_by(|&a, &b| e.model_ids[a].cmp(&e.model_ids[b]));
    let params = serde_json::to_string(&e.params).expect("params always serialize");
    let mut out = String::new();
    for i in order {
        let id = &e.model_ids[i];
        let (x, y) = e.point(i);
        let meta = metadata
            .get(id)
            .map_or_else(|| "null".into(), |m| serde_json::to_string(m).expect("metadata always serializes"));
        let _ = writeln!(
            out,
            "{{\"model_id\":{},\"x\":{},\"y\":{},\"method\":\"{}\",\"params\":{params},\"metadata\":{meta}}}",
            json_string(id),
            fmt_f64(x),
            fmt_f64(y),
            e.method.as_str(),
        );
    }
    out
}

pub fn save_map(e: &MapEmbedding, metadata: &Metadata, path: &Path) -> Result<()> {
    write_text(path, &map_to_string(e, metadata))
}

pub fn load_map(path: &Path) -> Result<Vec<MapRecord>> {
    Ok(read_jsonl(path)?.into_iter().map(|(_, r)| r).collect())
}

/// Objects with a string `model_id` and any other fields.
pub fn load_metadata(path: &Path) -> Result<Metadata> {
    let mut out = Metadata::new();
    for (n, mut obj) in read_jsonl::<Map<String, Value>>(path)? {
        let id = match obj.remove("model_id") {
            Some(Value::String(s)) => s,
            _ => return Err(CliError::parse(path, n, "missing string field model_id")),
        };
        if out.insert(id.clone(), obj).is_some() {
            return Err(CliError::Validation(format!("{}:{n}: duplicate model id {id:?}", path.display())));
        }
    }
    Ok(out)
}

#[derive(Deserialize)]
struct EmbeddingRecord {
    model_id: String,
    embeddings: Vec<Vec<Vec<f64>>>,
}

/// One model per line: `embeddings[prompt][sample][dim]`.
pub fn load_embeddings(path: &Path) -> Result<Vec<EmbeddingSet>> {
    read_jsonl::<EmbeddingRecord>(path)?
        .into_iter()
        .map(|(_, r)| Ok(EmbeddingSet::from_nested(r.model_id, &r.embeddings)?))
        .collect()
}

/// One generator per line.
pub fn load_sampled(path: &Path) -> Result<Vec<SampledLogLiks>> {
    Ok(read_jsonl(path)?.into_iter().map(|(_, r)| r).collect())
}

pub fn sampled_to_string(samples: &[SampledLogLiks]) -> String {
    let mut out = String::new();
    for s in samples {
        let _ = write!(out, "{{\"generator_model\":{},\"scores\":{{", json_string(&s.generator_model));
        for (i, (id, v)) in s.scores.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            let _ = write!(out, "{}:", json_string(id));
            push_array(&mut out, v);
        }
        out.push_str("}}\n");
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyMember {
    pub model_id: String,
    pub model: SyntheticModel,
}

/// A set of oracle models sharing alphabets and prompt distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleFamily {
    pub models: Vec<FamilyMember>,
}

pub fn load_family(path: &Path) -> Result<OracleFamily> {
    let f: OracleFamily = serde_json::from_str(&read_text(path)?).map_err(|e| CliError::parse(path, e.line(), e.to_string()))?;
    for m in &f.models {
        m.model.validate()?;
    }
    Ok(f)
}

pub fn family_to_string(f: &OracleFamily) -> String {
    let mut s = serde_json::to_string(f).expect("families always serialize");
    s.push('\n');
    s
}
