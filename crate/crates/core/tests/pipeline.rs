use std::sync::LazyLock;

use proptest::prelude::*;
use rand::Rng;

use spoofbench::annotator::{build_ensemble, Ensemble, DEFAULT_ENGINES};
use spoofbench::archive::inject_entry;
use spoofbench::attacks::{spoof_dos, DosAttackConfig, DosMode, DosSelection, LabeledApps};
use spoofbench::corpus::{default_catalog, generate_corpus, ApiPool, AppArchive, Corpus, CorpusConfig, Label};
use spoofbench::features::{
    extract_drebin, extract_mamadroid, FeatureDictionary, ProjectionSparsity, RandomProjection,
};
use spoofbench::rng;

static CORPUS: LazyLock<Corpus> = LazyLock::new(|| {
    generate_corpus(&CorpusConfig { n_benign: 40, n_malicious: 20, seed: 11, ..Default::default() }).unwrap()
});

static ENSEMBLE: LazyLock<Ensemble> =
    LazyLock::new(|| build_ensemble(&default_catalog(), &CORPUS.families, DEFAULT_ENGINES, 11).unwrap());

fn drebin_dictionary(corpus: &Corpus) -> FeatureDictionary {
    let sets: Vec<_> = corpus.apps.iter().map(|a| extract_drebin(a).unwrap()).collect();
    FeatureDictionary::build(&sets).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn injection_leaves_features_untouched(
        app in 0usize..60,
        row in 0usize..10,
        dir in prop::sample::select(vec!["res/", "res/raw/", "res/drawable/", "res/raw/extra/"]),
        seed in any::<u64>(),
    ) {
        let roots = ApiPool::package_roots();
        let catalog = default_catalog();
        let app = &CORPUS.apps[app];
        let entry = &catalog[row % catalog.len()];
        let injected = AppArchive { archive: inject_entry(&app.archive, entry, dir, seed).unwrap(), ..app.clone() };
        prop_assert_eq!(extract_drebin(&injected).unwrap(), extract_drebin(app).unwrap());
        prop_assert_eq!(extract_mamadroid(&injected, &roots).unwrap(), extract_mamadroid(app, &roots).unwrap());
    }

    #[test]
    fn dos_records_change_only_the_label(
        ratio in 0.0f64..0.5,
        budget in prop::option::of(0usize..10),
        append in any::<bool>(),
        clustered in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let roots = ApiPool::package_roots();
        let train = LabeledApps { apps: CORPUS.apps.clone(), labels: CORPUS.apps.iter().map(|a| a.true_label).collect() };
        let cfg = DosAttackConfig {
            ratio,
            budget,
            mode: if append { DosMode::Append } else { DosMode::Replace },
            selection: if clustered { DosSelection::Clustered } else { DosSelection::Uniform },
            seed,
            ..Default::default()
        };
        let (out, records) = spoof_dos(&train, &cfg, &default_catalog(), &ENSEMBLE).unwrap();
        if let Some(b) = budget {
            prop_assert!(records.len() <= b);
        }
        for r in &records {
            prop_assert_eq!(r.annotation.label, Label::Malicious);
            prop_assert_eq!(r.annotation.family.as_deref(), Some(r.family.as_str()));
            let src = CORPUS.get(&r.source_id).unwrap();
            let poisoned = out.apps.iter().find(|a| a.id == r.poisoned_id).unwrap();
            prop_assert_eq!(extract_drebin(poisoned).unwrap(), extract_drebin(src).unwrap());
            prop_assert_eq!(extract_mamadroid(poisoned, &roots).unwrap(), extract_mamadroid(src, &roots).unwrap());
        }
    }
}

#[test]
fn markov_rows_are_stochastic_on_corpus() {
    let roots = ApiPool::package_roots();
    for app in &CORPUS.apps {
        let m = extract_mamadroid(app, &roots).unwrap();
        for i in 0..m.n_states() {
            let s: f64 = m.row(i).iter().sum();
            assert!(s == 0.0 || (s - 1.0).abs() < 1e-9, "{} row {i} sums to {s}", app.id);
            assert!(m.row(i).iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
    }
}

#[test]
fn extraction_is_pure() {
    let again = generate_corpus(&CorpusConfig { n_benign: 40, n_malicious: 20, seed: 11, ..Default::default() }).unwrap();
    let roots = ApiPool::package_roots();
    for (a, b) in CORPUS.apps.iter().zip(&again.apps) {
        assert_eq!(extract_drebin(a).unwrap(), extract_drebin(b).unwrap());
        assert_eq!(extract_mamadroid(a, &roots).unwrap(), extract_mamadroid(b, &roots).unwrap());
    }
}

#[test]
fn projection_keeps_pairwise_distances() {
    let dict = drebin_dictionary(&CORPUS);
    let vecs: Vec<_> = CORPUS.apps.iter().map(|a| dict.vectorize(&extract_drebin(a).unwrap())).collect();
    let proj = RandomProjection::new(dict.len(), 512, 5, ProjectionSparsity::Achlioptas).unwrap();
    let projected: Vec<Vec<f64>> = vecs.iter().map(|v| proj.project(v).unwrap()).collect();
    let dense = |i: usize| {
        let mut d = vec![0.0; dict.len()];
        for &j in &vecs[i].ones {
            d[j as usize] = 1.0;
        }
        d
    };
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
    let mut r = rng::substream(5, "pairs", 0);
    let mut worst = 0.0f64;
    let mut pairs = 0;
    while pairs < 200 {
        let (i, j) = (r.gen_range(0..vecs.len()), r.gen_range(0..vecs.len()));
        let orig = sq(&dense(i), &dense(j));
        if orig == 0.0 {
            continue;
        }
        worst = worst.max((orig - sq(&projected[i], &projected[j])).abs() / orig);
        pairs += 1;
    }
    assert!(worst <= 0.35, "worst relative distortion {worst}");
}

#[test]
fn dictionary_size_is_stable() {
    let cfg = CorpusConfig { n_benign: 500, n_malicious: 500, seed: 4, ..Default::default() };
    let a = drebin_dictionary(&generate_corpus(&cfg).unwrap());
    let b = drebin_dictionary(&generate_corpus(&cfg).unwrap());
    assert_eq!(a.len(), b.len());
    assert!(a.names().eq(b.names()));
}
