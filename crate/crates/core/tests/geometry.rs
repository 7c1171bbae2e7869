//! PCA, t-SNE, prompt-shift geometry and bootstrap coverage.

use approx::assert_relative_eq;
use llmap_core::bootstrap::{bootstrap_ci, DEFAULT_LEVEL};
use llmap_core::divergence::Space;
use llmap_core::pca::pca;
use llmap_core::promptshift::{
    Setting, ShiftSet, SubspaceProjector, TransformKind, DEFAULT_ANGLE_TOLERANCE,
};
use llmap_core::tsne::{entropy_bits, tsne, TsneParams};
use llmap_core::{Error, LogLikelihoodMatrix, Mode};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};

fn random_matrix(rows: usize, cols: usize, seed: u64) -> Vec<f64> {
    let mut r = ChaCha20Rng::seed_from_u64(seed);
    let n = Normal::new(0.0, 1.0).unwrap();
    (0..rows * cols).map(|i| n.sample(&mut r) * (1.0 + (i % cols) as f64)).collect()
}

#[test]
fn pca_variances_match_dense_eigensolver() {
    for seed in 0..10 {
        let data = random_matrix(20, 5, seed);
        let p = pca(&data, 20, 5, 5).unwrap();
        let x = DMatrix::from_row_slice(20, 5, &data);
        let mean = x.row_mean();
        let centered = DMatrix::from_fn(20, 5, |r, c| x[(r, c)] - mean[c]);
        let cov = centered.transpose() * &centered / 19.0;
        let mut expected: Vec<f64> = cov.symmetric_eigen().eigenvalues.iter().copied().collect();
        expected.sort_by(|a, b| b.total_cmp(a));
        for (got, want) in p.variances.iter().zip(&expected) {
            assert_relative_eq!(got, want, max_relative = 1e-8);
        }
        let total: f64 = p.explained_ratio.iter().sum();
        assert!(total <= 1.0 + 1e-12);
    }
}

#[test]
fn pca_gram_path_matches_covariance_path() {
    // 6 x 30 goes through the row Gram matrix
    let data = random_matrix(6, 30, 3);
    let p = pca(&data, 6, 30, 3).unwrap();
    let x = DMatrix::from_row_slice(6, 30, &data);
    let mean = x.row_mean();
    let centered = DMatrix::from_fn(6, 30, |r, c| x[(r, c)] - mean[c]);
    let mut expected: Vec<f64> =
        (&centered * centered.transpose() / 5.0).symmetric_eigen().eigenvalues.iter().copied().collect();
    expected.sort_by(|a, b| b.total_cmp(a));
    for (got, want) in p.variances.iter().zip(&expected) {
        assert_relative_eq!(got, want, max_relative = 1e-8);
    }
}

#[test]
fn planar_points_reconstruct_exactly() {
    let mut r = ChaCha20Rng::seed_from_u64(11);
    let (u, v, o) = ([1.0, 2.0, -1.0, 0.5], [0.0, 1.0, 1.0, -3.0], [5.0, -2.0, 0.0, 1.0]);
    let mut data = Vec::new();
    for _ in 0..12 {
        let (a, b): (f64, f64) = (r.random_range(-3.0..3.0), r.random_range(-3.0..3.0));
        data.extend((0..4).map(|c| o[c] + a * u[c] + b * v[c]));
    }
    let p = pca(&data, 12, 4, 2).unwrap();
    for row in 0..12 {
        for (got, want) in p.reconstruct(row).iter().zip(&data[row * 4..row * 4 + 4]) {
            assert!((got - want).abs() < 1e-9);
        }
    }
    assert!(matches!(pca(&data, 12, 4, 3), Err(Error::RankDeficient { rank: 2, .. })));
}

#[test]
fn collinear_points_explain_everything() {
    let p = pca(&[0.0, 0.0, 1.0, 2.0, 3.0, 6.0], 3, 2, 1).unwrap();
    assert_relative_eq!(p.explained_ratio[0], 1.0, epsilon = 1e-12);
}

proptest! {
    #[test]
    fn pca_translation_invariant_and_orthonormal(seed in 0u64..10_000, shift in -50.0..50.0f64) {
        let data = random_matrix(9, 4, seed);
        let moved: Vec<f64> = data.iter().enumerate().map(|(i, v)| v + shift * (i % 4) as f64).collect();
        let a = pca(&data, 9, 4, 3).unwrap();
        let b = pca(&moved, 9, 4, 3).unwrap();
        for (x, y) in a.coords.iter().zip(&b.coords) {
            prop_assert!((x - y).abs() < 1e-8);
        }
        for i in 0..3 {
            for j in 0..3 {
                let d: f64 = a.components[i].iter().zip(&a.components[j]).map(|(x, y)| x * y).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                prop_assert!((d - want).abs() < 1e-9);
            }
        }
        prop_assert!(a.variances.windows(2).all(|w| w[0] >= w[1]));
    }
}

fn clusters(per: usize, seed: u64) -> (Vec<f64>, Vec<usize>, Vec<String>) {
    let mut r = ChaCha20Rng::seed_from_u64(seed);
    let n = Normal::new(0.0, 1.0).unwrap();
    let centers = [[0.0, 0.0, 0.0, 0.0, 0.0], [40.0, 0.0, 0.0, 0.0, 0.0], [0.0, 40.0, 0.0, 0.0, 0.0]];
    let (mut data, mut labels, mut ids) = (Vec::new(), Vec::new(), Vec::new());
    for (c, center) in centers.iter().enumerate() {
        for k in 0..per {
            data.extend(center.iter().map(|m| m + n.sample(&mut r)));
            labels.push(c);
            ids.push(format!("c{c}-{k:02}"));
        }
    }
    (data, labels, ids)
}

#[test]
fn tsne_separates_three_clusters() {
    let (data, labels, ids) = clusters(20, 4);
    let t = tsne(&data, 60, 5, &ids, &TsneParams { seed: 9, ..TsneParams::default() }).unwrap();
    let mut centroid = [[0.0f64; 2]; 3];
    for (i, &l) in labels.iter().enumerate() {
        centroid[l][0] += t.coords[2 * i] / 20.0;
        centroid[l][1] += t.coords[2 * i + 1] / 20.0;
    }
    for (i, &l) in labels.iter().enumerate() {
        let d = |c: &[f64; 2]| (t.coords[2 * i] - c[0]).powi(2) + (t.coords[2 * i + 1] - c[1]).powi(2);
        let nearest = (0..3).min_by(|&a, &b| d(&centroid[a]).total_cmp(&d(&centroid[b]))).unwrap();
        assert_eq!(nearest, l);
    }
    for i in 0..60 {
        assert!((entropy_bits(&data, 5, i, t.betas[i]) - t.perplexity.log2()).abs() < 1e-5);
    }
    assert!(t.objective.iter().all(|v| v.is_finite()));
}

#[test]
fn tsne_objective_settles() {
    let (data, _, ids) = clusters(50, 0);
    let t = tsne(&data, 150, 5, &ids, &TsneParams { seed: 9, ..TsneParams::default() }).unwrap();
    assert_eq!(t.objective.len(), 1000);
    assert!(t.objective[999] <= t.objective[899] + 1e-6);
}

#[test]
fn tsne_is_deterministic_and_permutation_equivariant() {
    let (data, _, ids) = clusters(4, 8);
    let params = TsneParams { seed: 3, iterations: 300, ..TsneParams::default() };
    let a = tsne(&data, 12, 5, &ids, &params).unwrap();
    let b = tsne(&data, 12, 5, &ids, &params).unwrap();
    assert_eq!(a.coords, b.coords);
    let perm: Vec<usize> = (0..12).rev().collect();
    let pdata: Vec<f64> = perm.iter().flat_map(|&i| data[i * 5..i * 5 + 5].to_vec()).collect();
    let pids: Vec<String> = perm.iter().map(|&i| ids[i].clone()).collect();
    let c = tsne(&pdata, 12, 5, &pids, &params).unwrap();
    for (new, &old) in perm.iter().enumerate() {
        assert_eq!(c.coords[2 * new], a.coords[2 * old]);
        assert_eq!(c.coords[2 * new + 1], a.coords[2 * old + 1]);
    }
}

fn matrix(ids: &[&str], pairs: &[String], rows: &[Vec<f64>]) -> LogLikelihoodMatrix {
    LogLikelihoodMatrix::from_rows(ids.iter().map(|s| s.to_string()).collect(), pairs.to_vec(), rows, Mode::Conditional)
        .unwrap()
}

/// Builds a shift set from per-model base rows and shift rows.
fn shift_set(base: &[Vec<f64>], cot: &[Vec<f64>], rep: &[Vec<f64>], rep_cot: &[Vec<f64>]) -> ShiftSet {
    let n = base[0].len();
    let ids: Vec<String> = (0..base.len()).map(|i| format!("m{i}")).collect();
    let ids: Vec<&str> = ids.iter().map(String::as_str).collect();
    let pair_ids = |suffix: &str| (0..n).map(|s| format!("p{s}{suffix}")).collect::<Vec<_>>();
    let add = |shift: &[Vec<f64>]| -> Vec<Vec<f64>> {
        base.iter().zip(shift).map(|(b, v)| b.iter().zip(v).map(|(x, y)| x + y).collect()).collect()
    };
    ShiftSet::new(
        matrix(&ids, &pair_ids(""), base),
        matrix(&ids, &pair_ids(TransformKind::Cot.id_suffix()), &add(cot)),
        matrix(&ids, &pair_ids(TransformKind::Repeat.id_suffix()), &add(rep)),
        matrix(&ids, &pair_ids(TransformKind::RepeatCot.id_suffix()), &add(rep_cot)),
    )
    .unwrap()
}

#[test]
fn hand_computed_compositionality_error() {
    let s = shift_set(
        &[vec![0.0, 0.0], vec![2.0, 2.0]],
        &[vec![1.0, 0.0], vec![0.0, 0.0]],
        &[vec![0.0, 1.0], vec![0.0, 0.0]],
        &[vec![1.0, 2.0], vec![1.0, 1.0]],
    );
    assert_eq!(s.compositionality_error("m0", Space::Raw).unwrap(), 1.0);
}

#[test]
fn exact_additivity_gives_zero_error_and_unit_pearson() {
    let mut r = ChaCha20Rng::seed_from_u64(2);
    let mut draw = |k: usize, n: usize| -> Vec<Vec<f64>> {
        (0..k).map(|_| (0..n).map(|_| r.random_range(-3.0..0.0)).collect()).collect()
    };
    let (base, cot, rep) = (draw(5, 16), draw(5, 16), draw(5, 16));
    let rep_cot: Vec<Vec<f64>> =
        cot.iter().zip(&rep).map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect()).collect();
    let s = shift_set(&base, &cot, &rep, &rep_cot);
    for space in [Space::Raw, Space::Centered] {
        let summary = s.compositionality_summary(space).unwrap();
        assert!(summary.errors.iter().all(|(_, e)| e.abs() < 1e-12));
    }
    assert_relative_eq!(s.delta_mean_additivity().unwrap().pearson, 1.0, epsilon = 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn shift_identity_holds(seed in any::<u64>(), k in 1usize..5, n in 2usize..20) {
        let mut r = ChaCha20Rng::seed_from_u64(seed);
        let mut draw = || -> Vec<Vec<f64>> {
            (0..k).map(|_| (0..n).map(|_| r.random_range(-40.0..0.0)).collect()).collect()
        };
        let (lb, lc, lr, lrc) = (draw(), draw(), draw(), draw());
        let ids: Vec<String> = (0..k).map(|i| format!("m{i}")).collect();
        let ids: Vec<&str> = ids.iter().map(String::as_str).collect();
        let p: Vec<String> = (0..n).map(|s| format!("p{s}")).collect();
        let s = ShiftSet::new(matrix(&ids, &p, &lb), matrix(&ids, &p, &lc), matrix(&ids, &p, &lr), matrix(&ids, &p, &lrc))
            .unwrap();
        for i in 0..k {
            let v = s.shift_vectors(ids[i]).unwrap();
            for t in 0..n {
                let lhs = v.rep_cot[t] - v.cot[t] - v.rep[t];
                let rhs = lrc[i][t] - lc[i][t] - lr[i][t] + lb[i][t];
                prop_assert!((lhs - rhs).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn centered_error_ignores_global_offset(seed in any::<u64>(), offset in -20.0..20.0f64) {
        let mut r = ChaCha20Rng::seed_from_u64(seed);
        let mut draw = || -> Vec<Vec<f64>> {
            (0..3).map(|_| (0..8).map(|_| r.random_range(-5.0..0.0)).collect()).collect()
        };
        let (b, c, p, rc) = (draw(), draw(), draw(), draw());
        let moved: Vec<Vec<f64>> = b.iter().map(|row| row.iter().map(|v| v + offset).collect()).collect();
        let s1 = shift_set(&b, &c, &p, &rc);
        let s2 = shift_set(&moved, &c, &p, &rc);
        for id in ["m0", "m1", "m2"] {
            let e1 = s1.compositionality_error(id, Space::Centered).unwrap();
            let e2 = s2.compositionality_error(id, Space::Centered).unwrap();
            prop_assert!((e1 - e2).abs() <= 1e-9 * e1.max(1.0));
        }
    }

    #[test]
    fn projector_is_idempotent(seed in any::<u64>()) {
        let mut r = ChaCha20Rng::seed_from_u64(seed);
        let mut v = || -> Vec<f64> { (0..10).map(|_| r.random_range(-1.0..1.0)).collect() };
        let (a, b, x) = (v(), v(), v());
        let p = SubspaceProjector::from_pair(&a, &b, DEFAULT_ANGLE_TOLERANCE).unwrap();
        let once = p.project(&x);
        for (u, w) in p.project(&once).iter().zip(&once) {
            prop_assert!((u - w).abs() <= 1e-9);
        }
    }
}

#[test]
fn unit_shifts_map_to_unit_square() {
    let n = 6;
    let e = |k: usize| (0..n).map(|s| if s == k { 1.0 } else { 0.0 }).collect::<Vec<f64>>();
    let base: Vec<Vec<f64>> = (0..3).map(|i| (0..n).map(|s| if s >= 2 { -(i as f64 + 1.0) } else { 0.0 }).collect()).collect();
    let s = shift_set(&base, &vec![e(0); 3], &vec![e(1); 3], &vec![(0..n).map(|s| if s < 2 { 1.0 } else { 0.0 }).collect(); 3]);
    let proj = s.mean_shift_projection(Space::Raw, DEFAULT_ANGLE_TOLERANCE).unwrap();
    for quad in proj.points.chunks(4) {
        let d = |a: usize, b: usize| ((quad[a].x - quad[b].x).powi(2) + (quad[a].y - quad[b].y).powi(2)).sqrt();
        assert_eq!(quad[0].setting, Setting::Base);
        assert!((d(0, 1) - 1.0).abs() < 1e-9);
        assert!((d(0, 2) - 1.0).abs() < 1e-9);
        assert!((d(0, 3) - 2f64.sqrt()).abs() < 1e-9);
    }
}

#[test]
fn zero_shifts_are_collinear() {
    let base = vec![vec![-1.0, -2.0, -3.0], vec![-2.0, -2.0, -1.0]];
    let zero = vec![vec![0.0; 3]; 2];
    let s = shift_set(&base, &zero, &zero, &zero);
    assert!(matches!(s.mean_shift_projection(Space::Raw, DEFAULT_ANGLE_TOLERANCE), Err(Error::Collinear { .. })));
}

#[test]
fn bootstrap_covers_true_mean() {
    let normal = Normal::new(3.0, 2.0).unwrap();
    let trials = 1000;
    let mut covered = 0;
    for trial in 0..trials {
        let mut r = ChaCha20Rng::seed_from_u64(50_000 + trial);
        let x: Vec<f64> = (0..100).map(|_| normal.sample(&mut r)).collect();
        let ci = bootstrap_ci(
            |idx| Ok(idx.iter().map(|&i| x[i]).sum::<f64>() / idx.len() as f64),
            x.len(),
            1000,
            trial,
            DEFAULT_LEVEL,
        )
        .unwrap();
        if ci.lower <= 3.0 && 3.0 <= ci.upper {
            covered += 1;
        }
    }
    let rate = covered as f64 / trials as f64;
    assert!((0.93..=0.97).contains(&rate), "coverage {rate}");
}
