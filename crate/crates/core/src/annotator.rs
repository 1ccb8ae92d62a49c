//! Simulated crowd-sourced labeling oracle: an ensemble of whole-file
//! digest engines plus a plurality vote over normalized family names.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use crate::archive::{parse_archive, Archive};
use crate::corpus::{family_marker_bytes, AppArchive, Label, MalwareCatalogEntry};
use crate::error::{Error, Result};
use crate::rng;

pub type Digest = [u8; 32];

pub const DEFAULT_ENGINES: usize = 62;
/// Detections above this count make a sample malicious.
pub const DEFAULT_LABEL_THRESHOLD: usize = 4;
/// Bounds on how many engines know a corpus family's marker file, for the
/// reference 62-engine ensemble.
const FAMILY_DETECTIONS: (usize, usize) = (20, 62);
const GENERIC_NOISE_RATE: f64 = 0.1;

pub fn digest(bytes: &[u8]) -> Digest {
    Sha256::digest(bytes).into()
}

/// Vendor spellings; `{F}` is the capitalized family, `{f}` lowercase.
const VENDOR_TEMPLATES: &[&str] = &[
    "Android.Trojan.{F}.A",
    "Trojan:AndroidOS/{F}.B",
    "a.gen.{f}",
    "HEUR:Trojan.AndroidOS.{F}",
    "{F}!tr",
    "Variant.{F}.12",
    "Android/{F}.C!tr",
    "Trojan.{f}",
    "gen.{f}",
    "{F}.A",
];

const GENERIC_LABELS: &[&str] = &["Generic.Malware", "Trojan.Agent.Gen", "Riskware.Heur!c", "Malicious (score: 99)"];

/// Tokens that never name a family.
const STOP_TOKENS: &[&str] = &[
    "android", "androidos", "trojan", "gen", "heur", "generic", "malware", "variant", "agent", "riskware",
    "malicious", "score", "tr", "a", "b", "c",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AvEngine {
    pub id: String,
    pub signature_db: BTreeSet<Digest>,
    pub family_alias: BTreeMap<Digest, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    engines: Vec<AvEngine>,
    /// Normalized token to canonical family.
    alias_table: BTreeMap<String, String>,
    index: HashMap<Digest, Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScanReport {
    pub detections: usize,
    pub total_engines: usize,
    /// Engine id to the vendor family string, absent when the engine is clean.
    pub verdicts: BTreeMap<String, Option<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub label: Label,
    pub family: Option<String>,
    pub detections: usize,
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(first) => first.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn render(template: &str, family: &str) -> String {
    template.replace("{F}", &capitalize(family)).replace("{f}", family)
}

pub fn engine_id(i: usize) -> String {
    format!("av{i:02}")
}

/// Builds `total_engines` engines holding every catalog digest per its
/// profile and every corpus family marker on a seeded subset of engines.
pub fn build_ensemble(
    catalog: &[MalwareCatalogEntry],
    corpus_families: &[String],
    total_engines: usize,
    seed: u64,
) -> Result<Ensemble> {
    if total_engines == 0 {
        return Err(Error::Config("ensemble needs at least one engine".into()));
    }
    let mut engines: Vec<AvEngine> = (0..total_engines)
        .map(|i| AvEngine { id: engine_id(i), signature_db: BTreeSet::new(), family_alias: BTreeMap::new() })
        .collect();
    let mut alias_table = BTreeMap::new();

    let add = |engines: &mut Vec<AvEngine>, d: Digest, family: &str, holders: &[usize], label: &str| {
        let mut r = rng::stream(seed, label);
        let max_noise = holders.len() / 4;
        let mut noise = 0;
        for &e in holders {
            let alias = if noise < max_noise && r.gen_bool(GENERIC_NOISE_RATE) {
                noise += 1;
                GENERIC_LABELS[r.gen_range(0..GENERIC_LABELS.len())].to_owned()
            } else {
                render(VENDOR_TEMPLATES[e % VENDOR_TEMPLATES.len()], family)
            };
            engines[e].signature_db.insert(d);
            engines[e].family_alias.insert(d, alias);
        }
    };

    for (i, entry) in catalog.iter().enumerate() {
        if entry.detection_profile.len() > total_engines || entry.detection_profile.iter().any(|&e| e >= total_engines) {
            return Err(Error::Config(format!(
                "catalog entry {i} ({}) has a detection profile larger than the {total_engines}-engine ensemble",
                entry.family
            )));
        }
        let holders: Vec<usize> = entry.detection_profile.iter().copied().collect();
        add(&mut engines, digest(&entry.bytes), &entry.family, &holders, &format!("catalog-alias-{i}"));
        alias_table.insert(entry.family.to_lowercase(), entry.family.clone());
    }

    let scale = |n: usize| ((n * total_engines) as f64 / DEFAULT_ENGINES as f64).round() as usize;
    let (lo, hi) = (scale(FAMILY_DETECTIONS.0).max(1).min(total_engines), scale(FAMILY_DETECTIONS.1).min(total_engines));
    for family in corpus_families {
        let mut r = rng::stream(seed, &format!("family-engines:{family}"));
        let count = r.gen_range(lo..=hi);
        let mut order: Vec<usize> = (0..total_engines).collect();
        order.shuffle(&mut r);
        let mut holders = order[..count].to_vec();
        holders.sort_unstable();
        add(&mut engines, digest(&family_marker_bytes(family)), family, &holders, &format!("family-alias:{family}"));
        alias_table.insert(family.to_lowercase(), family.clone());
    }

    let mut index: HashMap<Digest, Vec<usize>> = HashMap::new();
    for (i, e) in engines.iter().enumerate() {
        for d in &e.signature_db {
            index.entry(*d).or_default().push(i);
        }
    }
    Ok(Ensemble { engines, alias_table, index })
}

impl Ensemble {
    pub fn engines(&self) -> &[AvEngine] {
        &self.engines
    }

    pub fn len(&self) -> usize {
        self.engines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.engines.is_empty()
    }

    /// Maps a vendor family string to a canonical family, dropping generic
    /// labels.
    pub fn normalize(&self, vendor: &str) -> Option<String> {
        normalize_with(&self.alias_table, vendor)
    }

    pub fn alias_table(&self) -> &BTreeMap<String, String> {
        &self.alias_table
    }

    /// Unpacks nothing: scans the entries of an in-memory archive. An engine
    /// fires when any entry's digest is in its database; its verdict is the
    /// alias for the first matching entry.
    pub fn scan_archive(&self, archive: &Archive) -> ScanReport {
        let mut verdicts: Vec<Option<String>> = vec![None; self.engines.len()];
        for entry in archive.entries() {
            let d = digest(entry.bytes());
            if let Some(holders) = self.index.get(&d) {
                for &e in holders {
                    if verdicts[e].is_none() {
                        verdicts[e] = self.engines[e].family_alias.get(&d).cloned();
                    }
                }
            }
        }
        let detections = verdicts.iter().filter(|v| v.is_some()).count();
        ScanReport {
            detections,
            total_engines: self.engines.len(),
            verdicts: self.engines.iter().map(|e| e.id.clone()).zip(verdicts).collect(),
        }
    }
}

fn normalize_with(table: &BTreeMap<String, String>, vendor: &str) -> Option<String> {
    vendor
        .to_lowercase()
        .split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|t| !t.is_empty() && !STOP_TOKENS.contains(t) && !t.chars().all(|c| c.is_ascii_digit()))
        .find_map(|t| table.get(t).cloned())
}

pub fn scan(ensemble: &Ensemble, app: &AppArchive) -> ScanReport {
    ensemble.scan_archive(&app.archive)
}

/// Scans a serialized archive, unpacking it first.
pub fn scan_bytes(ensemble: &Ensemble, id: &str, bytes: &[u8]) -> Result<ScanReport> {
    let archive = parse_archive(bytes).map_err(|e| Error::Scan { id: id.to_owned(), reason: e.to_string() })?;
    Ok(ensemble.scan_archive(&archive))
}

/// Plurality over normalized verdicts; ties go to the lexicographically
/// smallest canonical name.
pub fn family_vote(ensemble: &Ensemble, report: &ScanReport) -> Option<String> {
    family_vote_with(&ensemble.alias_table, report)
}

pub fn family_vote_with(alias_table: &BTreeMap<String, String>, report: &ScanReport) -> Option<String> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for v in report.verdicts.values().flatten() {
        if let Some(f) = normalize_with(alias_table, v) {
            *counts.entry(f).or_default() += 1;
        }
    }
    // BTreeMap iterates names in order, so keeping the first maximum
    // implements the tie rule.
    let mut best: Option<(&String, usize)> = None;
    for (name, &n) in &counts {
        if best.map_or(true, |(_, b)| n > b) {
            best = Some((name, n));
        }
    }
    best.map(|(n, _)| n.clone())
}

pub fn annotate(ensemble: &Ensemble, report: &ScanReport, label_threshold: usize) -> Annotation {
    let label = if report.detections > label_threshold { Label::Malicious } else { Label::Benign };
    let family = match label {
        Label::Malicious => family_vote(ensemble, report),
        Label::Benign => None,
    };
    Annotation { label, family, detections: report.detections }
}

/// Scan and annotate in one step.
pub fn label_app(ensemble: &Ensemble, app: &AppArchive, label_threshold: usize) -> Annotation {
    annotate(ensemble, &scan(ensemble, app), label_threshold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archive::inject_entry;
    use crate::corpus::{default_catalog, generate_corpus, repack, CorpusConfig};

    fn ensemble(families: &[String]) -> Ensemble {
        build_ensemble(&default_catalog(), families, DEFAULT_ENGINES, 9).unwrap()
    }

    fn report(verdicts: &[(&str, Option<&str>)]) -> ScanReport {
        let verdicts: BTreeMap<_, _> = verdicts.iter().map(|(e, v)| (e.to_string(), v.map(str::to_owned))).collect();
        ScanReport { detections: verdicts.values().filter(|v| v.is_some()).count(), total_engines: 62, verdicts }
    }

    #[test]
    fn catalog_file_alone_matches_profile() {
        let ens = ensemble(&[]);
        for (i, entry) in default_catalog().iter().enumerate() {
            let mut a = Archive::new();
            a.push(format!("res/{}", entry.filename), entry.bytes.clone()).unwrap();
            let r = ens.scan_archive(&a);
            assert_eq!(r.detections, entry.detection_profile.len(), "row {i}");
            assert_eq!(r.total_engines, 62);
        }
        assert_eq!(ens.scan_archive(&Archive::new()).detections, 0);
    }

    #[test]
    fn build_is_deterministic_and_validates_profiles() {
        let fams = vec!["drokorvex".to_owned()];
        assert_eq!(ensemble(&fams), ensemble(&fams));
        assert!(matches!(build_ensemble(&default_catalog(), &[], 40, 0), Err(Error::Config(_))));
    }

    #[test]
    fn vote_rules() {
        let mut table = BTreeMap::new();
        table.insert("chopper".to_owned(), "chopper".to_owned());
        table.insert("alpha".to_owned(), "alpha".to_owned());
        table.insert("beta".to_owned(), "beta".to_owned());
        let r = report(&[("e1", Some("Chopper.A")), ("e2", Some("trojan.chopper")), ("e3", Some("gen.chopper"))]);
        assert_eq!(family_vote_with(&table, &r).as_deref(), Some("chopper"));
        let r = report(&[("e1", Some("beta")), ("e2", Some("Alpha.A")), ("e3", Some("Beta!tr")), ("e4", Some("alpha"))]);
        assert_eq!(family_vote_with(&table, &r).as_deref(), Some("alpha"));
        assert_eq!(family_vote_with(&table, &report(&[("e1", None)])), None);
        assert_eq!(family_vote_with(&table, &report(&[("e1", Some("Generic.Malware"))])), None);
    }

    #[test]
    fn threshold_is_strict() {
        let ens = ensemble(&[]);
        let mk = |n: usize| ScanReport { detections: n, total_engines: 62, verdicts: BTreeMap::new() };
        assert_eq!(annotate(&ens, &mk(0), 4), Annotation { label: Label::Benign, family: None, detections: 0 });
        assert_eq!(annotate(&ens, &mk(4), 4).label, Label::Benign);
        assert_eq!(annotate(&ens, &mk(13), 4).label, Label::Malicious);
    }

    #[test]
    fn spoofing_flips_benign_and_repack_alone_does_not() {
        let corpus = generate_corpus(&CorpusConfig { n_benign: 20, n_malicious: 20, seed: 5, ..Default::default() }).unwrap();
        let ens = ensemble(&corpus.families);
        let catalog = default_catalog();
        for app in &corpus.apps {
            let clean = label_app(&ens, app, DEFAULT_LABEL_THRESHOLD);
            assert_eq!(clean.label, app.true_label, "{}", app.id);
            if app.true_label == Label::Malicious {
                assert_eq!(clean.family.as_deref(), Some(app.group.as_str()));
                assert!((20..=62).contains(&clean.detections));
                continue;
            }
            assert_eq!(clean.detections, 0);
            let mut forced = app.clone();
            forced.repackable = true;
            assert_eq!(label_app(&ens, &repack(&forced).unwrap(), 4).detections, 0);
            for entry in &catalog {
                let spoofed = AppArchive { archive: inject_entry(&app.archive, entry, "res/", 1).unwrap(), ..app.clone() };
                let ann = label_app(&ens, &spoofed, DEFAULT_LABEL_THRESHOLD);
                assert_eq!(ann.label, Label::Malicious);
                assert_eq!(ann.detections, entry.detection_profile.len());
                assert_eq!(ann.family.as_deref(), Some(entry.family.as_str()));
            }
        }
        // The webshell row in the table: 22 detections.
        let app = &corpus.apps[0];
        let spoofed = inject_entry(&app.archive, &catalog[5], "res/", 0).unwrap();
        assert_eq!(ens.scan_archive(&spoofed).detections, 22);
    }

    #[test]
    fn detections_are_monotone_in_entries() {
        let ens = ensemble(&[]);
        let catalog = default_catalog();
        let mut a = Archive::new();
        let mut last = 0;
        for e in &catalog {
            a.push(format!("res/{}", e.filename), e.bytes.clone()).unwrap();
            let d = ens.scan_archive(&a).detections;
            assert!(d >= last);
            last = d;
        }
    }

    #[test]
    fn scan_bytes_rejects_garbage() {
        let ens = ensemble(&[]);
        assert!(matches!(scan_bytes(&ens, "x", b"nope"), Err(Error::Scan { .. })));
    }
}
