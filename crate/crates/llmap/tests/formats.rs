//! File format round trips.

use std::path::Path;

use llmap::formats::{
    load_distances, load_map, load_matrix, load_metadata, load_pairs, map_to_string, save_distances, save_map,
    save_matrix, save_pairs,
};
use llmap_core::divergence::{pairwise_kl, Space};
use llmap_core::mapping::{MapEmbedding, MapMethod, MapParams};
use llmap_core::{LogLikelihoodMatrix, Mode};
use serde_json::json;

#[test]
fn pairs_round_trip_byte_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("in.jsonl");
    let text = concat!(
        "{\"id\":\"a\",\"prompt\":\"line one\\nline two\",\"response\":\"ok\"}\n",
        "{\"id\":\"b\",\"prompt\":\"caf\u{e9} \u{1f600} \\\"quoted\\\"\",\"response\":\"\\t tab\"}\n",
    );
    std::fs::write(&src, text).unwrap();
    let pairs = load_pairs(&src).unwrap();
    assert_eq!(pairs.len(), 2);
    assert_eq!(pairs.pairs()[0].prompt, "line one\nline two");
    let out = dir.path().join("out.jsonl");
    save_pairs(&pairs, &out).unwrap();
    assert_eq!(std::fs::read_to_string(&out).unwrap(), text);
}

#[test]
fn duplicate_pair_id_names_both_lines() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("dup.jsonl");
    std::fs::write(
        &p,
        "{\"id\":\"x\",\"prompt\":\"p\",\"response\":\"r\"}\n{\"id\":\"y\",\"prompt\":\"p\",\"response\":\"r\"}\n\
         {\"id\":\"x\",\"prompt\":\"q\",\"response\":\"s\"}\n",
    )
    .unwrap();
    let e = load_pairs(&p).unwrap_err().to_string();
    assert!(e.contains("\"x\"") && e.contains("lines 1 and 3"), "{e}");
}

#[test]
fn empty_response_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("e.jsonl");
    std::fs::write(&p, "{\"id\":\"x\",\"prompt\":\"p\",\"response\":\"r\"}\n{\"id\":\"y\",\"prompt\":\"p\",\"response\":\"\"}\n")
        .unwrap();
    assert!(load_pairs(&p).unwrap_err().to_string().contains("empty response"));
}

fn awkward_matrix() -> LogLikelihoodMatrix {
    let values = vec![-0.1, -1.0 / 3.0, -1e-300, -123.456789012345678, -2.0_f64.sqrt(), -std::f64::consts::PI];
    LogLikelihoodMatrix::new(vec!["m\"1".into(), "m2".into()], vec!["p1".into(), "p2".into(), "p3".into()], values, Mode::Conditional)
        .unwrap()
}

#[test]
fn matrix_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.jsonl");
    let m = awkward_matrix().clip(0.2).unwrap();
    save_matrix(&m, &p).unwrap();
    let back = load_matrix(&p).unwrap();
    assert_eq!(back, m);
    assert!(back.values.iter().zip(&m.values).all(|(a, b)| a.to_bits() == b.to_bits()));
    assert_eq!(back.mode, Mode::Conditional);
    let first = std::fs::read_to_string(&p).unwrap();
    assert!(first.lines().next().unwrap().contains("\"mode\":\"conditional\""));
    save_matrix(&back, &p).unwrap();
    assert_eq!(std::fs::read_to_string(&p).unwrap(), first);
}

#[test]
fn distances_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("d.jsonl");
    let d = pairwise_kl(&awkward_matrix(), Space::Centered).unwrap();
    save_distances(&d, &p).unwrap();
    assert_eq!(load_distances(&p).unwrap(), d);
}

fn embedding() -> MapEmbedding {
    MapEmbedding {
        model_ids: vec!["zeta".into(), "alpha".into()],
        coords: vec![0.1, -7.25, 1.0 / 3.0, 1e-17],
        method: MapMethod::Pca,
        params: MapParams::Pca { space: Space::Raw },
    }
}

#[test]
fn map_records_are_sorted_with_null_metadata() {
    let text = map_to_string(&embedding(), &Default::default());
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("{\"model_id\":\"alpha\""));
    assert!(lines.iter().all(|l| l.ends_with("\"metadata\":null}")));
}

#[test]
fn map_round_trip_with_metadata_join() {
    let dir = tempfile::tempdir().unwrap();
    let meta_path = dir.path().join("meta.jsonl");
    std::fs::write(&meta_path, "{\"model_id\":\"zeta\",\"family\":\"llama\",\"score\":0.5}\n").unwrap();
    let meta = load_metadata(&meta_path).unwrap();
    let p = dir.path().join("map.jsonl");
    save_map(&embedding(), &meta, &p).unwrap();
    let records = load_map(&p).unwrap();
    assert_eq!(records[0].model_id, "alpha");
    assert_eq!((records[0].x, records[0].y), (1.0 / 3.0, 1e-17));
    assert_eq!((records[1].x, records[1].y), (0.1, -7.25));
    assert!(records[0].metadata.is_none());
    assert_eq!(records[1].metadata.as_ref().unwrap()["family"], json!("llama"));
    assert_eq!(records[1].params, MapParams::Pca { space: Space::Raw });
}

#[test]
fn missing_file_is_an_input_error() {
    let e = load_matrix(Path::new("/nonexistent/m.jsonl")).unwrap_err();
    assert_eq!(e.exit_code(), llmap::error::EXIT_INPUT);
}
