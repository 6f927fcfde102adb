use dgpvae::autodiff::Tensor;
use dgpvae::dci::{
    completeness, disentanglement, fit_importance, grouped_importance, pool_time_steps, ConceptMap, DciConfig,
    DciScores, ImportanceMatrix, PredictorKind, TargetKind,
};
use dgpvae::rng::seeded;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

/// `1 − H₂(0.8, 0.2)` evaluated by hand: H₂ = −0.8·log₂0.8 − 0.2·log₂0.2.
const TWO_BY_TWO: f64 = 0.278_071_905_112_637_7;

fn names(k: usize) -> Vec<String> {
    (0..k).map(|j| format!("f{j}")).collect()
}

/// `n` samples of `k` independent discrete factors with values in `0..card`.
fn discrete_factors(n: usize, k: usize, card: u32, seed: u64) -> Tensor {
    let mut rng = seeded(seed);
    let data = (0..n * k).map(|_| f64::from(rng.gen_range(0..card))).collect();
    Tensor::matrix(n, k, data).unwrap()
}

fn noise(n: usize, m: usize, seed: u64) -> Tensor {
    let mut rng = seeded(seed);
    Tensor::matrix(n, m, (0..n * m).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
}

#[test]
fn hand_computed_entropy_cases() {
    let r = ImportanceMatrix::from_rows(&[vec![0.8, 0.2], vec![0.2, 0.8]]).unwrap();
    assert!((disentanglement(&r).unwrap() - TWO_BY_TWO).abs() < 1e-12);
    assert!((completeness(&r).unwrap() - TWO_BY_TWO).abs() < 1e-12);
    let uniform = ImportanceMatrix::new(3, 3, vec![1.0; 9]).unwrap();
    assert!(disentanglement(&uniform).unwrap().abs() < 1e-12);
    assert!(completeness(&uniform).unwrap().abs() < 1e-12);
}

#[test]
fn uniform_column_contributes_zero_completeness() {
    let r = ImportanceMatrix::from_rows(&[vec![1.0, 0.5], vec![0.0, 0.5]]).unwrap();
    assert!((completeness(&r).unwrap() - 0.5).abs() < 1e-12);
}

fn permutation(perm: &[usize]) -> ImportanceMatrix {
    let n = perm.len();
    let mut rows = vec![vec![0.0; n]; n];
    for (i, &p) in perm.iter().enumerate() {
        rows[i][p] = 1.0;
    }
    ImportanceMatrix::from_rows(&rows).unwrap()
}

#[test]
fn permutation_matrices_score_one() {
    let r = permutation(&[2, 0, 3, 1]);
    assert_eq!(disentanglement(&r).unwrap(), 1.0);
    assert_eq!(completeness(&r).unwrap(), 1.0);
}

proptest! {
    #[test]
    fn scores_are_scale_and_permutation_invariant(
        values in proptest::collection::vec(0.01f64..1.0, 12),
        scale in 0.1f64..100.0,
    ) {
        let r = ImportanceMatrix::new(4, 3, values.clone()).unwrap();
        let (d, c) = (disentanglement(&r).unwrap(), completeness(&r).unwrap());
        prop_assert!((0.0..=1.0).contains(&d) && (0.0..=1.0).contains(&c));

        let scaled = ImportanceMatrix::new(4, 3, values.iter().map(|v| v * scale).collect()).unwrap();
        prop_assert!((disentanglement(&scaled).unwrap() - d).abs() < 1e-12);
        prop_assert!((completeness(&scaled).unwrap() - c).abs() < 1e-12);

        let row_perm = [2usize, 0, 3, 1];
        let rows: Vec<Vec<f64>> = row_perm.iter().map(|&i| r.row(i).to_vec()).collect();
        let permuted = ImportanceMatrix::from_rows(&rows).unwrap();
        prop_assert!((disentanglement(&permuted).unwrap() - d).abs() < 1e-12);
        prop_assert!((completeness(&permuted).unwrap() - c).abs() < 1e-12);

        let cols: Vec<Vec<f64>> = (0..4).map(|i| vec![r.get(i, 2), r.get(i, 0), r.get(i, 1)]).collect();
        let col_permuted = ImportanceMatrix::from_rows(&cols).unwrap();
        prop_assert!((completeness(&col_permuted).unwrap() - c).abs() < 1e-12);
    }
}

#[test]
fn copied_factors_give_the_identity() {
    let factors = discrete_factors(2000, 3, 10, 1);
    let fit = fit_importance(&factors, &factors, &[TargetKind::Discrete; 3], &names(3), &DciConfig::default())
        .unwrap();
    for i in 0..3 {
        for j in 0..3 {
            let want = if i == j { 1.0 } else { 0.0 };
            assert!((fit.importance.get(i, j) - want).abs() < 1e-9, "R[{i}][{j}]");
        }
    }
    for info in &fit.informativeness {
        assert_eq!(info.score, Some(1.0));
        let baseline = info.majority_baseline.unwrap();
        assert!(baseline > 0.05 && baseline < 0.2, "{baseline}");
    }
    let scores = DciScores::from_fit(fit).unwrap();
    assert!((scores.disentanglement - 1.0).abs() < 1e-6 && (scores.completeness - 1.0).abs() < 1e-6);
}

#[test]
fn pure_noise_latents_are_uninformative() {
    let factors = discrete_factors(5000, 2, 4, 2);
    let latents = noise(5000, 5, 3);
    let fit = fit_importance(&latents, &factors, &[TargetKind::Discrete; 2], &names(2), &DciConfig::default())
        .unwrap();
    for j in 0..2 {
        let col = fit.importance.column(j);
        let spread = col.iter().cloned().fold(0.0, f64::max) - col.iter().cloned().fold(1.0, f64::min);
        assert!(spread < 0.2, "column {j}: {col:?}");
    }
    for info in &fit.informativeness {
        let acc = info.score.unwrap();
        assert!(acc < 0.5, "accuracy {acc} on a 4-valued factor");
    }
}

#[test]
fn duplicated_channel_keeps_mass_on_the_pair() {
    let mut rng = seeded(4);
    let n = 3000;
    let mut latent = Vec::with_capacity(n * 3);
    let mut target = Vec::with_capacity(n);
    for _ in 0..n {
        let z: f64 = rng.sample(StandardNormal);
        let other: f64 = rng.sample(StandardNormal);
        latent.extend([z, z, other]);
        target.push((2.0 * z).round());
    }
    let latents = Tensor::matrix(n, 3, latent).unwrap();
    let targets = Tensor::matrix(n, 1, target).unwrap();
    let fit = fit_importance(&latents, &targets, &[TargetKind::Discrete], &names(1), &DciConfig::default()).unwrap();
    let col = fit.importance.column(0);
    assert!(col[0] + col[1] > 0.99, "{col:?}");
}

#[test]
fn lasso_fit_is_bit_reproducible() {
    let factors = discrete_factors(1500, 2, 5, 5);
    let mut latents = noise(1500, 4, 6);
    for r in 0..1500 {
        latents.data_mut()[r * 4] += factors.data()[r * 2];
    }
    let cfg = DciConfig {
        seed: 9,
        ..DciConfig::default()
    };
    let a = fit_importance(&latents, &factors, &[TargetKind::Discrete; 2], &names(2), &cfg).unwrap();
    let b = fit_importance(&latents, &factors, &[TargetKind::Discrete; 2], &names(2), &cfg).unwrap();
    assert_eq!(a, b);
    assert!(a.importance.get(0, 0) > 0.9);
}

#[test]
fn constant_factor_has_undefined_informativeness() {
    let mut factors = discrete_factors(500, 2, 3, 7);
    for r in 0..500 {
        factors.data_mut()[r * 2 + 1] = 4.0;
    }
    let fit = fit_importance(&factors, &factors, &[TargetKind::Discrete; 2], &names(2), &DciConfig::default())
        .unwrap();
    assert!(fit.informativeness[1].degenerate);
    assert_eq!(fit.informativeness[1].score, None);
    assert_eq!(fit.importance.column(1), vec![0.0, 0.0]);
    let scores = DciScores::from_fit(fit).unwrap();
    assert_eq!(scores.completeness_per_factor[1], None);
}

#[test]
fn boosted_stumps_find_the_informative_latent() {
    let factors = discrete_factors(1500, 2, 4, 8);
    let mut latents = noise(1500, 3, 9);
    for r in 0..1500 {
        latents.data_mut()[r * 3 + 2] = factors.data()[r * 2] + 0.1 * latents.data()[r * 3 + 2];
        latents.data_mut()[r * 3] = factors.data()[r * 2 + 1] + 0.1 * latents.data()[r * 3];
    }
    let cfg = DciConfig {
        predictor: PredictorKind::BoostedStumps,
        ..DciConfig::default()
    };
    let fit = fit_importance(&latents, &factors, &[TargetKind::Discrete; 2], &names(2), &cfg).unwrap();
    assert!(fit.importance.get(2, 0) > 0.9, "{:?}", fit.importance);
    assert!(fit.importance.get(0, 1) > 0.9, "{:?}", fit.importance);
    assert!(fit.informativeness.iter().all(|i| i.score.unwrap() > 0.9));
}

#[test]
fn too_few_samples_is_an_error() {
    let f = discrete_factors(3, 1, 2, 0);
    assert!(fit_importance(&f, &f, &[TargetKind::Discrete], &names(1), &DciConfig::default()).is_err());
}

#[test]
fn pooling_flattens_time() {
    let z = Tensor::new(vec![2, 3, 1], vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
    let c = Tensor::new(vec![2, 3, 2], (0..12).map(f64::from).collect()).unwrap();
    let (zp, cp) = pool_time_steps(&z, &c).unwrap();
    assert_eq!(zp.shape(), &[6, 1]);
    assert_eq!(cp.shape(), &[6, 2]);
    assert_eq!(&cp.data()[10..], &[10.0, 11.0]);
    assert!(pool_time_steps(&z, &Tensor::zeros(&[2, 2, 1])).is_err());
}

fn feature_matrix(rows: &[Vec<f64>], features: &[&str]) -> ImportanceMatrix {
    let k = features.len();
    ImportanceMatrix::with_names(rows.len(), k, rows.concat(), features.iter().map(|s| s.to_string()).collect())
        .unwrap()
}

#[test]
fn singleton_groups_leave_the_matrix_unchanged() {
    let r = feature_matrix(&[vec![0.6, 0.1], vec![0.4, 0.9]], &["hr", "map"]);
    let grouped = grouped_importance(&r, &ConceptMap::singletons(&r.factor_names)).unwrap();
    for (a, b) in grouped.values.iter().zip(&r.values) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn merging_identical_columns_is_idempotent() {
    let r = feature_matrix(&[vec![0.3, 0.3], vec![0.7, 0.7]], &["a", "b"]);
    let map = ConceptMap::from_pairs(&[("a", "g"), ("b", "g")]).unwrap();
    let grouped = grouped_importance(&r, &map).unwrap();
    assert!((grouped.get(0, 0) - 0.3).abs() < 1e-15 && (grouped.get(1, 0) - 0.7).abs() < 1e-15);
}

#[test]
fn disjoint_blocks_are_fully_disentangled() {
    let r = feature_matrix(
        &[
            vec![0.5, 0.2, 0.0, 0.0],
            vec![0.5, 0.8, 0.0, 0.0],
            vec![0.0, 0.0, 0.3, 1.0],
        ],
        &["hr", "rr", "lactate", "ph"],
    );
    let map = ConceptMap::from_pairs(&[("hr", "cardio"), ("rr", "cardio"), ("lactate", "metab"), ("ph", "metab")])
        .unwrap();
    let grouped = grouped_importance(&r, &map).unwrap();
    assert_eq!(grouped.factor_names, vec!["cardio", "metab"]);
    assert!((disentanglement(&grouped).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn unmapped_features_are_listed() {
    let r = feature_matrix(&[vec![1.0, 1.0, 1.0]], &["a", "b", "c"]);
    let map = ConceptMap::from_pairs(&[("a", "g")]).unwrap();
    let err = grouped_importance(&r, &map).unwrap_err().to_string();
    assert!(err.contains("b, c"), "{err}");
}

#[test]
fn concept_map_reads_csv_and_rejects_duplicates() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("concepts.csv");
    std::fs::write(&path, "feature,concept\nhr,cardio\nmap,cardio\nph,metab\n").unwrap();
    let map = ConceptMap::read_csv(&path).unwrap();
    assert_eq!(map.groups, vec!["cardio", "metab"]);
    assert_eq!(map.assignment["ph"], 1);
    assert!(ConceptMap::from_pairs(&[("a", "x"), ("a", "y")]).is_err());
}

#[test]
fn importance_csv_has_one_row_per_latent() {
    let dir = tempfile::tempdir().unwrap();
    let scores = DciScores::from_matrix(feature_matrix(&[vec![1.0, 0.0], vec![0.0, 1.0]], &["x", "y"])).unwrap();
    let path = dir.path().join("importance.csv");
    scores.write_importance_csv(&path).unwrap();
    let text = std::fs::read_to_string(path).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.starts_with("latent,x,y"));
}
