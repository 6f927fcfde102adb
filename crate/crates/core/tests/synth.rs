mod common;

use std::collections::BTreeMap;

use common::{dense_change_fraction, max_factor_correlation, mean_index_changes};
use dgpvae::kernels::KernelSpec;
use dgpvae::rng::seeded;
use dgpvae::synth::{
    build_corpus, generate_corpus, render_lookup, sample_factor_traces, Cardinality, Corpus, CorpusConfig,
    FactorSpec, IngestedDataset, Labeler, MixerSpec, Renderer, METADATA, OBSERVATIONS, TRACES,
};

fn three_scale_specs() -> Vec<FactorSpec> {
    [2.0, 10.0, 50.0]
        .iter()
        .enumerate()
        .map(|(i, &l)| FactorSpec::rbf_with_constant(format!("f{i}"), 10, l, 0.9).unwrap())
        .collect()
}

fn small_config(seed: u64, n: usize, t: usize) -> CorpusConfig {
    let mut cfg = CorpusConfig::desk_default(seed);
    cfg.n_series = n;
    cfg.series_length = t;
    cfg
}

#[test]
fn constant_kernel_gives_constant_indices() {
    let spec = FactorSpec {
        name: "flat".into(),
        cardinality: Cardinality::Discrete(7),
        kernel: KernelSpec::constant(1.0).unwrap(),
    };
    let traces = sample_factor_traces(&[spec], 30, 20, &mut seeded(3)).unwrap();
    for tr in &traces {
        assert!(tr.indices[0].iter().all(|&v| v == tr.indices[0][0]));
    }
}

#[test]
fn cardinality_one_maps_everything_to_zero() {
    let spec = FactorSpec::rbf_with_constant("one", 1, 2.0, 0.9).unwrap();
    let traces = sample_factor_traces(&[spec], 25, 10, &mut seeded(4)).unwrap();
    assert!(traces.iter().all(|t| t.indices[0].iter().all(|&v| v == 0)));
}

#[test]
fn short_length_scale_changes_more_often() {
    let specs = vec![
        FactorSpec::rbf_with_constant("fast", 10, 2.0, 0.9).unwrap(),
        FactorSpec::rbf_with_constant("slow", 10, 50.0, 0.9).unwrap(),
    ];
    let traces = sample_factor_traces(&specs, 100, 1000, &mut seeded(5)).unwrap();
    let changes = mean_index_changes(&traces);
    assert!(changes[0] > changes[1], "{changes:?}");
}

#[test]
fn generated_traces_satisfy_the_synthesis_invariants() {
    let traces = sample_factor_traces(&three_scale_specs(), 100, 1000, &mut seeded(6)).unwrap();
    let corr = max_factor_correlation(&traces);
    assert!(corr < 0.05, "max cross-factor correlation {corr}");
    let changes = mean_index_changes(&traces);
    assert!(changes[0] > changes[1] && changes[1] > changes[2], "{changes:?}");
    assert!(dense_change_fraction(&traces) > 0.0);
    for tr in &traces {
        for (row, idx) in tr.continuous.iter().zip(&tr.indices) {
            assert!(idx.iter().all(|&v| v < 10));
            for a in 0..row.len() {
                for b in 0..row.len() {
                    if row[a] > row[b] {
                        assert!(idx[a] >= idx[b]);
                    }
                }
            }
        }
    }
}

fn micro_dataset() -> IngestedDataset {
    let mut frames = BTreeMap::new();
    for a in 0..3u32 {
        for b in 0..3u32 {
            let base = f64::from(a * 3 + b);
            frames.insert(vec![a, b], vec![base, base + 0.25, -base, f64::from(a)]);
        }
    }
    IngestedDataset {
        factor_names: vec!["a".into(), "b".into()],
        cardinalities: vec![3, 3],
        frame_shape: vec![2, 2],
        frames,
    }
}

#[test]
fn lookup_rendering_reproduces_every_stored_frame() {
    let ds = micro_dataset();
    let specs = vec![
        FactorSpec::rbf_with_constant("a", 3, 1.0, 0.9).unwrap(),
        FactorSpec::rbf_with_constant("b", 3, 1.0, 0.9).unwrap(),
    ];
    let traces = sample_factor_traces(&specs, 200, 5, &mut seeded(7)).unwrap();
    let mut seen = std::collections::BTreeSet::new();
    for tr in &traces {
        let x = render_lookup(&ds, tr).unwrap();
        for t in 0..tr.len() {
            let tuple = tr.tuple_at(t);
            assert_eq!(&x[t * 4..(t + 1) * 4], ds.frames[&tuple].as_slice());
            seen.insert(tuple);
        }
    }
    assert_eq!(seen.len(), 9, "every grid cell should be visited");
}

#[test]
fn lookup_corpus_round_trips_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let ds_dir = dir.path().join("dataset");
    micro_dataset().save(&ds_dir).unwrap();
    assert_eq!(IngestedDataset::load(&ds_dir).unwrap(), micro_dataset());
    let cfg = CorpusConfig {
        seed: 1,
        n_series: 4,
        series_length: 6,
        train_fraction: 0.5,
        factors: vec![
            FactorSpec::rbf_with_constant("a", 3, 2.0, 0.9).unwrap(),
            FactorSpec::rbf_with_constant("b", 3, 2.0, 0.9).unwrap(),
        ],
        renderer: Renderer::Lookup { dataset: ds_dir },
        labeler: None,
    };
    let corpus = build_corpus(&cfg, &dir.path().join("corpus")).unwrap();
    assert_eq!(corpus.metadata.obs_shape, vec![2, 2]);
    assert_eq!(Corpus::load(&dir.path().join("corpus")).unwrap(), corpus);
}

#[test]
fn minimal_corpus_reads_back_identically() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = build_corpus(&small_config(2, 1, 1), dir.path()).unwrap();
    assert_eq!(corpus.observations.len(), 12);
    assert_eq!(Corpus::load(dir.path()).unwrap(), corpus);
}

#[test]
fn regeneration_is_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = small_config(11, 8, 20);
    build_corpus(&cfg, a.path()).unwrap();
    build_corpus(&cfg, b.path()).unwrap();
    for name in [METADATA, OBSERVATIONS, TRACES, "factor_indices.bin", "labels.bin"] {
        let x = std::fs::read(a.path().join(name)).unwrap();
        let y = std::fs::read(b.path().join(name)).unwrap();
        assert_eq!(x, y, "{name} differs");
    }
    let other = generate_corpus(&small_config(12, 8, 20)).unwrap();
    assert_ne!(other.observations, Corpus::load(a.path()).unwrap().observations);
}

#[test]
fn corrupted_corpus_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    build_corpus(&small_config(2, 3, 5), dir.path()).unwrap();
    std::fs::write(dir.path().join(TRACES), [0u8; 16]).unwrap();
    let err = Corpus::load(dir.path()).unwrap_err().to_string();
    assert!(err.contains(TRACES), "{err}");
}

#[test]
fn median_labels_are_balanced() {
    let mut cfg = small_config(13, 1000, 30);
    cfg.labeler = Some(Labeler::FactorMeanAboveMedian { factor: 0 });
    let corpus = generate_corpus(&cfg).unwrap();
    let ones = corpus.labels.unwrap().iter().filter(|&&l| l == 1).count();
    let frac = ones as f64 / 1000.0;
    assert!((0.45..=0.55).contains(&frac), "{frac}");
}

#[test]
fn labels_ignore_observation_noise() {
    let mut quiet = small_config(14, 50, 20);
    let mut loud = quiet.clone();
    if let Renderer::Mixer(spec) = &mut quiet.renderer {
        spec.noise_std = 0.0;
    }
    if let Renderer::Mixer(spec) = &mut loud.renderer {
        *spec = MixerSpec {
            noise_std: 2.0,
            ..spec.clone()
        };
    }
    let (a, b) = (generate_corpus(&quiet).unwrap(), generate_corpus(&loud).unwrap());
    assert_ne!(a.observations, b.observations);
    assert_eq!(a.labels, b.labels);
}

#[test]
fn config_round_trips_through_toml() {
    let cfg = CorpusConfig::desk_default(3);
    let text = toml::to_string(&cfg).unwrap();
    let back: CorpusConfig = toml::from_str(&text).unwrap();
    assert_eq!(back, cfg);
    assert_eq!(cfg.n_series, 500);
    assert_eq!(cfg.series_length, 100);
}
