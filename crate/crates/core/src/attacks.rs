//! Label-spoofing attacks: availability poisoning by flipping benign
//! training apps, and integrity poisoning by surrounding one target with
//! spoofed near-duplicates.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::annotator::{label_app, Annotation, Ensemble, DEFAULT_LABEL_THRESHOLD};
use crate::archive::inject_entry;
use crate::corpus::{dexl, repack, AppArchive, DexLiteProgram, Guard, Label, MalwareCatalogEntry, Method, Statement, DEXL_PATH};
use crate::error::{Error, Result};
use crate::features::extract_drebin;
use crate::{par, rng};

pub const INJECTION_DIR: &str = "res/raw/";
/// Trace token emitted where a self-call cycle cuts the trace short.
pub const CYCLE_MARKER: &str = "<cycle>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DosMode {
    /// Poisoned copies take their originals' place.
    #[default]
    Replace,
    /// Poisoned copies are added next to the originals.
    Append,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DosSelection {
    /// Victims drawn uniformly among benign apps.
    #[default]
    Uniform,
    /// Whole app groups are poisoned before moving on to the next group, so
    /// victims sit next to each other in feature space.
    Clustered,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase", tag = "policy", content = "row")]
pub enum CatalogChoice {
    #[default]
    Random,
    Fixed(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DosAttackConfig {
    pub ratio: f64,
    pub budget: Option<usize>,
    pub catalog: CatalogChoice,
    pub mode: DosMode,
    pub selection: DosSelection,
    pub seed: u64,
}

impl Default for DosAttackConfig {
    fn default() -> Self {
        Self { ratio: 0.0, budget: None, catalog: CatalogChoice::Random, mode: DosMode::Replace, selection: DosSelection::Uniform, seed: 0 }
    }
}

impl DosAttackConfig {
    pub fn validate(&self, catalog_len: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.ratio) {
            return Err(Error::Config(format!("poisoning ratio {} outside [0, 1]", self.ratio)));
        }
        if let CatalogChoice::Fixed(row) = self.catalog {
            if row >= catalog_len {
                return Err(Error::Config(format!("catalog row {row} out of range for {catalog_len} rows")));
            }
        }
        Ok(())
    }

    /// Number of apps to poison out of a training set of `n`.
    pub fn target_count(&self, n: usize) -> usize {
        let k = (self.ratio * n as f64 + 1e-9).floor() as usize;
        self.budget.map_or(k, |b| k.min(b))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoisonRecord {
    pub source_id: String,
    pub poisoned_id: String,
    pub family: String,
    pub annotation: Annotation,
}

impl PoisonRecord {
    /// `source  poisoned  family  detections  label`, tab separated.
    pub fn to_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}",
            self.source_id,
            self.poisoned_id,
            self.family,
            self.annotation.detections,
            self.annotation.label.as_u8()
        )
    }
}

pub fn records_to_text(records: &[PoisonRecord]) -> String {
    let mut out = String::from("source_id\tpoisoned_id\tfamily\tdetections\tlabel\n");
    for r in records {
        let _ = writeln!(out, "{}", r.to_line());
    }
    out
}

/// Training apps with the labels the learner will see.
#[derive(Debug, Clone)]
pub struct LabeledApps {
    pub apps: Vec<AppArchive>,
    pub labels: Vec<Label>,
}

/// Injects `entry` under `res/`, repacks and rescans. Returns `None` when the
/// app cannot be repacked.
pub fn spoof_app(
    app: &AppArchive,
    entry: &MalwareCatalogEntry,
    ensemble: &Ensemble,
    seed: u64,
    new_id: String,
) -> Result<Option<(AppArchive, Annotation)>> {
    let injected = AppArchive { archive: inject_entry(&app.archive, entry, INJECTION_DIR, seed)?, ..app.clone() };
    let spoofed = match repack(&injected) {
        Ok(a) => a,
        Err(Error::Repack(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    let spoofed = AppArchive { id: new_id, ..spoofed };
    let annotation = label_app(ensemble, &spoofed, DEFAULT_LABEL_THRESHOLD);
    Ok(Some((spoofed, annotation)))
}

fn victim_order(train: &LabeledApps, cfg: &DosAttackConfig) -> Vec<usize> {
    let benign: Vec<usize> = (0..train.apps.len()).filter(|&i| train.labels[i] == Label::Benign).collect();
    let mut r = rng::stream(cfg.seed, "dos-victims");
    match cfg.selection {
        DosSelection::Uniform => {
            let mut order = benign;
            order.shuffle(&mut r);
            order
        }
        DosSelection::Clustered => {
            let mut groups: Vec<&str> = benign.iter().map(|&i| train.apps[i].group.as_str()).collect();
            groups.sort_unstable();
            groups.dedup();
            groups.shuffle(&mut r);
            let mut order = Vec::with_capacity(benign.len());
            for g in groups {
                let mut members: Vec<usize> = benign.iter().copied().filter(|&i| train.apps[i].group == g).collect();
                members.shuffle(&mut r);
                order.extend(members);
            }
            order
        }
    }
}

/// Flips `⌊p·|train|⌋` benign training apps to malicious through payload
/// injection. Apps that fail to repack or to flip are skipped and the next
/// candidate is drawn.
pub fn spoof_dos(
    train: &LabeledApps,
    cfg: &DosAttackConfig,
    catalog: &[MalwareCatalogEntry],
    ensemble: &Ensemble,
) -> Result<(LabeledApps, Vec<PoisonRecord>)> {
    cfg.validate(catalog.len())?;
    if train.apps.len() != train.labels.len() {
        return Err(Error::Shape { expected: train.apps.len(), got: train.labels.len() });
    }
    let want = cfg.target_count(train.apps.len());
    let mut out = train.clone();
    if want == 0 {
        return Ok((out, Vec::new()));
    }
    let order = victim_order(train, cfg);
    let mut records = Vec::with_capacity(want);
    let mut chosen = Vec::with_capacity(want);
    // Candidates are tried in batches so the spoofing work runs in parallel
    // while the accepted set stays a prefix of `order`.
    let mut cursor = 0;
    while records.len() < want && cursor < order.len() {
        let end = (cursor + (want - records.len()) * 2).min(order.len());
        let batch: Vec<(usize, usize)> = (cursor..end).map(|k| (k, order[k])).collect();
        let results = par::map(&batch, |&(k, i)| {
            let row = match cfg.catalog {
                CatalogChoice::Fixed(row) => row,
                CatalogChoice::Random => rng::substream(cfg.seed, "dos-catalog", k as u64).gen_range(0..catalog.len()),
            };
            let app = &train.apps[i];
            let seed = rng::derive_seed(cfg.seed, "dos-inject", k as u64);
            spoof_app(app, &catalog[row], ensemble, seed, format!("{}.spoofed", app.id)).map(|o| (i, row, o))
        });
        for res in results {
            if records.len() == want {
                break;
            }
            let (i, row, outcome) = res?;
            match outcome {
                Some((app, ann)) if ann.label == Label::Malicious => {
                    records.push(PoisonRecord {
                        source_id: train.apps[i].id.clone(),
                        poisoned_id: app.id.clone(),
                        family: catalog[row].family.clone(),
                        annotation: ann,
                    });
                    chosen.push((i, app));
                }
                Some(_) => log::warn!("{}: payload did not flip the label, drawing another app", train.apps[i].id),
                None => log::info!("{}: repack failed, drawing another app", train.apps[i].id),
            }
        }
        cursor = end;
    }
    if records.len() < want {
        return Err(Error::Attack(format!(
            "only {} of {want} benign apps could be spoofed; candidate pool exhausted",
            records.len()
        )));
    }
    for (i, app) in chosen {
        match cfg.mode {
            DosMode::Replace => {
                out.apps[i] = app;
                out.labels[i] = Label::Malicious;
            }
            DosMode::Append => {
                out.apps.push(app);
                out.labels.push(Label::Malicious);
            }
        }
    }
    Ok((out, records))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegrityAttackConfig {
    /// Picked per repeat by the experiment runner when absent.
    pub target_id: Option<String>,
    pub q: usize,
    pub n_add: usize,
    pub catalog_row: usize,
    pub seed: u64,
}

impl Default for IntegrityAttackConfig {
    fn default() -> Self {
        Self { target_id: None, q: 50, n_add: 25, catalog_row: 0, seed: 0 }
    }
}

/// Largest Jaccard distance a clone may sit from its target.
pub const MAX_CLONE_DISTANCE: f64 = 0.2;

fn binomial_at_least(n: usize, k: usize, q: usize) -> bool {
    // C(n, k) >= q without overflow.
    let mut c: u128 = 1;
    for i in 0..k {
        c = c * (n - i) as u128 / (i + 1) as u128;
        if c >= q as u128 {
            return true;
        }
    }
    c >= q as u128
}

/// `q` spoofed variants of `target`, each with `n_add` extra API calls behind
/// opaque predicates in a fresh method.
pub fn make_clones(
    target: &AppArchive,
    cfg: &IntegrityAttackConfig,
    api_pool: &[String],
    catalog: &[MalwareCatalogEntry],
    ensemble: &Ensemble,
) -> Result<(Vec<AppArchive>, Vec<PoisonRecord>)> {
    if cfg.q == 0 {
        return Err(Error::Config("integrity attack needs q >= 1".into()));
    }
    let entry = catalog
        .get(cfg.catalog_row)
        .ok_or_else(|| Error::Config(format!("catalog row {} out of range", cfg.catalog_row)))?;
    if !target.repackable {
        return Err(Error::Attack(format!("target {} cannot be repackaged", target.id)));
    }
    let program = target.program()?;
    let target_features = extract_drebin(target)?;
    let own: BTreeSet<&str> = program.calls().map(|(_, c)| c).collect();
    let mut fresh: Vec<&str> = api_pool.iter().map(String::as_str).filter(|a| !own.contains(a)).collect();
    fresh.sort_unstable();
    fresh.dedup();
    if fresh.len() < cfg.n_add || !binomial_at_least(fresh.len(), cfg.n_add, cfg.q) {
        let max = if fresh.len() < cfg.n_add { 0 } else { achievable(fresh.len(), cfg.n_add) };
        return Err(Error::Attack(format!(
            "{} unused APIs allow at most {max} distinct variants with {} additions each, {} requested",
            fresh.len(),
            cfg.n_add,
            cfg.q
        )));
    }
    let method_name = (0..).map(|k| format!("opq{k}")).find(|n| program.method(n).is_none()).unwrap();

    let mut seen: BTreeSet<Vec<usize>> = BTreeSet::new();
    let mut picks = Vec::with_capacity(cfg.q);
    let mut attempt = 0u64;
    while picks.len() < cfg.q {
        let mut r = rng::substream(cfg.seed, "clone-apis", attempt);
        attempt += 1;
        let mut chosen: Vec<usize> = sample(&mut r, fresh.len(), cfg.n_add).into_vec();
        chosen.sort_unstable();
        if seen.insert(chosen.clone()) {
            picks.push(chosen);
        }
    }

    let built = par::map_range(cfg.q, |j| -> Result<(AppArchive, PoisonRecord)> {
        let mut p = program.clone();
        let body = picks[j].iter().map(|&k| Statement::guarded_call(fresh[k])).collect();
        p.push_method(Method { name: method_name.clone(), body })?;
        let mut archive = target.archive.clone();
        archive.replace(DEXL_PATH, p.to_text().into_bytes())?;
        let variant = AppArchive { archive, ..target.clone() };
        let id = format!("{}.clone{j:04}", target.id);
        let seed = rng::derive_seed(cfg.seed, "clone-inject", j as u64);
        let (clone, ann) = spoof_app(&variant, entry, ensemble, seed, id)?
            .ok_or_else(|| Error::Attack(format!("clone {j} of {} failed to repack", target.id)))?;
        if ann.label != Label::Malicious {
            return Err(Error::Attack(format!("clone {j} of {} was not flagged", target.id)));
        }
        let dist = extract_drebin(&clone)?.jaccard_distance(&target_features);
        if dist > MAX_CLONE_DISTANCE {
            return Err(Error::Attack(format!(
                "clone {j} sits at Jaccard distance {dist:.3} from {}; target too small for {} additions",
                target.id, cfg.n_add
            )));
        }
        let record = PoisonRecord {
            source_id: target.id.clone(),
            poisoned_id: clone.id.clone(),
            family: entry.family.clone(),
            annotation: ann,
        };
        Ok((clone, record))
    });
    let (clones, records) = built.into_iter().collect::<Result<Vec<_>>>()?.into_iter().unzip();
    Ok((clones, records))
}

fn achievable(n: usize, k: usize) -> usize {
    let mut c: u128 = 1;
    for i in 0..k {
        c = c * (n - i) as u128 / (i + 1) as u128;
    }
    c.min(usize::MAX as u128) as usize
}

/// External calls the app would perform: unguarded calls in method order,
/// with internal calls expanded one level.
pub fn behavioral_trace(app: &AppArchive) -> Result<Vec<String>> {
    Ok(trace_program(&app.program()?))
}

pub fn trace_program(program: &DexLiteProgram) -> Vec<String> {
    let mut out = Vec::new();
    for m in program.methods() {
        for s in &m.body {
            let Statement::Call { guard: Guard::Unguarded, callee } = s else { continue };
            match dexl::internal_target(callee) {
                None => out.push(callee.clone()),
                Some(inner) if inner == m.name => {
                    out.push(CYCLE_MARKER.to_owned());
                    return out;
                }
                Some(inner) => {
                    let Some(callee_method) = program.method(inner) else { continue };
                    for t in &callee_method.body {
                        if let Statement::Call { guard: Guard::Unguarded, callee } = t {
                            match dexl::internal_target(callee) {
                                None => out.push(callee.clone()),
                                Some(back) if back == m.name || back == inner => {
                                    out.push(CYCLE_MARKER.to_owned());
                                    return out;
                                }
                                Some(_) => {}
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotator::{build_ensemble, DEFAULT_ENGINES};
    use crate::corpus::{default_catalog, generate_corpus, CorpusConfig};

    fn setup() -> (crate::corpus::Corpus, Ensemble) {
        let cfg = CorpusConfig { n_benign: 60, n_malicious: 20, seed: 4, ..Default::default() };
        let corpus = generate_corpus(&cfg).unwrap();
        let ens = build_ensemble(&default_catalog(), &corpus.families, DEFAULT_ENGINES, 4).unwrap();
        (corpus, ens)
    }

    fn labeled(corpus: &crate::corpus::Corpus) -> LabeledApps {
        LabeledApps { apps: corpus.apps.clone(), labels: corpus.apps.iter().map(|a| a.true_label).collect() }
    }

    #[test]
    fn zero_ratio_is_identity() {
        let (corpus, ens) = setup();
        let train = labeled(&corpus);
        let (out, rec) = spoof_dos(&train, &DosAttackConfig::default(), &default_catalog(), &ens).unwrap();
        assert!(rec.is_empty());
        assert_eq!(out.labels, train.labels);
    }

    #[test]
    fn counts_follow_training_size() {
        let cfg = DosAttackConfig { ratio: 0.01, ..Default::default() };
        assert_eq!(cfg.target_count(800), 8);
        for (p, k) in [(0.02, 16), (0.05, 40), (0.10, 80), (0.20, 160)] {
            assert_eq!(DosAttackConfig { ratio: p, ..Default::default() }.target_count(800), k);
        }
        assert_eq!(DosAttackConfig { ratio: 0.2, budget: Some(5), ..Default::default() }.target_count(800), 5);
    }

    #[test]
    fn dos_flips_labels_only() {
        let (corpus, ens) = setup();
        let train = labeled(&corpus);
        let catalog = default_catalog();
        for mode in [DosMode::Replace, DosMode::Append] {
            let cfg = DosAttackConfig { ratio: 0.1, mode, seed: 2, ..Default::default() };
            let (out, rec) = spoof_dos(&train, &cfg, &catalog, &ens).unwrap();
            assert_eq!(rec.len(), 8);
            for r in &rec {
                assert_eq!(r.annotation.label, Label::Malicious);
                assert_eq!(r.annotation.family.as_deref(), Some(r.family.as_str()));
                let src = corpus.get(&r.source_id).unwrap();
                let p = out.apps.iter().find(|a| a.id == r.poisoned_id).unwrap();
                assert_eq!(extract_drebin(src).unwrap(), extract_drebin(p).unwrap());
            }
            let flipped = out.labels.iter().filter(|&&l| l == Label::Malicious).count();
            assert_eq!(flipped, 20 + 8);
            let expected_len = if mode == DosMode::Replace { 80 } else { 88 };
            assert_eq!(out.apps.len(), expected_len);
        }
    }

    #[test]
    fn clustered_selection_groups_victims() {
        let cfg = CorpusConfig { n_benign: 60, n_malicious: 20, n_categories: Some(6), seed: 4, ..Default::default() };
        let corpus = generate_corpus(&cfg).unwrap();
        let ens = build_ensemble(&default_catalog(), &corpus.families, DEFAULT_ENGINES, 4).unwrap();
        let cfg = DosAttackConfig { ratio: 0.1, selection: DosSelection::Clustered, seed: 1, ..Default::default() };
        let (_, rec) = spoof_dos(&labeled(&corpus), &cfg, &default_catalog(), &ens).unwrap();
        let groups: BTreeSet<&str> = rec.iter().map(|r| corpus.get(&r.source_id).unwrap().group.as_str()).collect();
        // 8 victims from groups of 10.
        assert!(groups.len() <= 2, "{groups:?}");
    }

    #[test]
    fn clones_surround_and_preserve_behaviour() {
        let (corpus, ens) = setup();
        let target = corpus.apps.iter().find(|a| a.true_label == Label::Benign && a.repackable).unwrap();
        let cfg = IntegrityAttackConfig { q: 5, seed: 3, ..Default::default() };
        let (clones, records) = make_clones(target, &cfg, &corpus.pool.all(), &default_catalog(), &ens).unwrap();
        assert_eq!(clones.len(), 5);
        let tf = extract_drebin(target).unwrap();
        let sets: Vec<_> = clones.iter().map(|c| extract_drebin(c).unwrap()).collect();
        for (i, s) in sets.iter().enumerate() {
            assert!(s.features.is_superset(&tf.features));
            assert_eq!(s.len(), tf.len() + 25);
            for t in &sets[i + 1..] {
                assert_ne!(s, t);
            }
        }
        let trace = behavioral_trace(target).unwrap();
        for c in &clones {
            assert_eq!(behavioral_trace(c).unwrap(), trace);
        }
        assert!(records.iter().all(|r| r.annotation.label == Label::Malicious && r.family == "groooboor"));
        assert_eq!(extract_drebin(target).unwrap(), tf);
    }

    #[test]
    fn clone_pool_too_small() {
        let (corpus, ens) = setup();
        let target = corpus.apps.iter().find(|a| a.true_label == Label::Benign && a.repackable).unwrap();
        let cfg = IntegrityAttackConfig { q: 10, n_add: 2, ..Default::default() };
        let pool = vec!["z.q.A.a".to_owned(), "z.q.A.b".to_owned(), "z.q.A.c".to_owned()];
        let err = make_clones(target, &cfg, &pool, &default_catalog(), &ens).unwrap_err();
        assert!(err.to_string().contains("at most 3"), "{err}");
    }

    #[test]
    fn trace_rules() {
        let p = DexLiteProgram::parse("DEXL1\nM main\nC u a.B.c\nC g x.Y.z\nC u self.h\nM h\nC u k.L.m\nC g k.L.n\n").unwrap();
        assert_eq!(trace_program(&p), vec!["a.B.c", "k.L.m", "k.L.m"]);
        let cyc = DexLiteProgram::parse("DEXL1\nM a\nC u p.Q.r\nC u self.a\nC u p.Q.s\n").unwrap();
        assert_eq!(trace_program(&cyc), vec!["p.Q.r", CYCLE_MARKER]);
    }

    #[test]
    fn injection_leaves_trace_alone() {
        let (corpus, ens) = setup();
        let app = corpus.apps.iter().find(|a| a.repackable).unwrap();
        let (spoofed, _) = spoof_app(app, &default_catalog()[3], &ens, 1, "x".into()).unwrap().unwrap();
        assert_eq!(behavioral_trace(&spoofed).unwrap(), behavioral_trace(app).unwrap());
    }
}
