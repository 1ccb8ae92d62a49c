//! Experiment orchestration: split, poison, extract, defend, train, score
//! and aggregate, repeated over seeded train/test splits.

mod metrics;
mod report;
mod split;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::annotator::{build_ensemble, label_app, Ensemble, DEFAULT_ENGINES, DEFAULT_LABEL_THRESHOLD};
use crate::attacks::{make_clones, spoof_dos, DosAttackConfig, IntegrityAttackConfig, LabeledApps};
use crate::corpus::{catalog_for_ensemble, generate_corpus_with_shape, AppArchive, ApiPool, Corpus, CorpusConfig, CorpusShape, Label, MalwareCatalogEntry};
use crate::defense::{defend_and_retrain, DefenseConfig};
use crate::error::{Error, Result};
use crate::features::{extract_drebin, extract_mamadroid, DrebinFeatureSet, FeatureDictionary, FeatureMatrix, FeatureSetKind, MarkovFeatures};
use crate::models::{predict, train, Dataset, ModelConfig, ModelKind};
use crate::{par, rng};

pub use metrics::{
    frozen_point, fpr_at_tpr, mean_std, operating_point, pearson, pearson_r, ranks, roc_curve, spearman, tpr_at_fpr, Roc,
    RocPoint,
};
pub use report::{write_report_files, ExperimentReport, ReportRow, RunRecord};
pub use split::stratified_split;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AttackKind {
    #[default]
    None,
    Dos,
    Integrity,
}

impl AttackKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AttackKind::None => "none",
            AttackKind::Dos => "dos",
            AttackKind::Integrity => "integrity",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct AttackSpec {
    pub kind: AttackKind,
    /// Poisoning ratios for `dos`, clone counts for `integrity`. Level 0 is
    /// the attack-free baseline.
    pub levels: Vec<f64>,
    /// `ratio` and `seed` are set per level and repeat.
    pub dos: DosAttackConfig,
    /// `q` and `seed` are set per level and repeat.
    pub integrity: IntegrityAttackConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdSource {
    /// Operating points read off the test split's own ROC curve.
    #[default]
    Test,
    /// Operating points fit on a calibration slice held out of training.
    Calibration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub corpus: CorpusConfig,
    pub shape: CorpusShape,
    pub feature_set: FeatureSetKind,
    /// Defaults to lsvm, gbt and nn for drebin and rf for mamadroid.
    pub models: Vec<ModelKind>,
    /// Hyperparameters; `kind` and `seed` are set per model and repeat.
    pub model: ModelConfig,
    pub attack: AttackSpec,
    pub defense: Option<DefenseConfig>,
    pub split: f64,
    pub repeats: usize,
    pub fpr_targets: Vec<f64>,
    /// Defaults to 0.95 for drebin and 0.90 for mamadroid.
    pub tpr_freeze: Option<f64>,
    pub thresholds: ThresholdSource,
    pub calibration_fraction: f64,
    pub engines: usize,
    pub permutations: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            corpus: CorpusConfig::default(),
            shape: CorpusShape::default(),
            feature_set: FeatureSetKind::Drebin,
            models: Vec::new(),
            model: ModelConfig::default(),
            attack: AttackSpec::default(),
            defense: None,
            split: 0.8,
            repeats: 10,
            fpr_targets: vec![0.001, 0.01],
            tpr_freeze: None,
            thresholds: ThresholdSource::Test,
            calibration_fraction: 0.2,
            engines: DEFAULT_ENGINES,
            permutations: 10_000,
        }
    }
}

pub const DOS_LEVELS: [f64; 6] = [0.0, 0.01, 0.02, 0.05, 0.10, 0.20];
pub const INTEGRITY_LEVELS: [f64; 8] = [0.0, 5.0, 10.0, 50.0, 100.0, 200.0, 500.0, 1000.0];

impl ExperimentConfig {
    /// Fills every defaulted field with its concrete value. The corpus seed
    /// follows the master seed.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        c.corpus.seed = self.seed;
        if c.models.is_empty() {
            c.models = match c.feature_set {
                FeatureSetKind::Drebin => vec![ModelKind::Lsvm, ModelKind::Gbt, ModelKind::Nn],
                FeatureSetKind::Mamadroid => vec![ModelKind::Rf],
            };
        }
        if c.attack.levels.is_empty() {
            c.attack.levels = match c.attack.kind {
                AttackKind::None => vec![0.0],
                AttackKind::Dos => DOS_LEVELS.to_vec(),
                AttackKind::Integrity => INTEGRITY_LEVELS.to_vec(),
            };
        }
        c.tpr_freeze.get_or_insert(match c.feature_set {
            FeatureSetKind::Drebin => 0.95,
            FeatureSetKind::Mamadroid => 0.90,
        });
        c
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.split > 0.0 && self.split < 1.0) {
            return bad(format!("split {} outside (0, 1)", self.split));
        }
        if self.repeats == 0 {
            return bad("repeats must be at least 1".into());
        }
        if self.fpr_targets.is_empty() || self.fpr_targets.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return bad("fpr_targets must be a non-empty list of rates in [0, 1]".into());
        }
        if self.tpr_freeze.is_some_and(|b| !(0.0..=1.0).contains(&b)) {
            return bad("tpr_freeze outside [0, 1]".into());
        }
        if !(self.calibration_fraction > 0.0 && self.calibration_fraction < 1.0) {
            return bad("calibration_fraction outside (0, 1)".into());
        }
        if self.engines == 0 {
            return bad("engines must be at least 1".into());
        }
        self.corpus.validate()?;
        self.shape.validate()?;
        let mut seen = self.models.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.models.len() {
            return bad("models lists a kind twice".into());
        }
        for &level in &self.attack.levels {
            match self.attack.kind {
                AttackKind::Dos if !(0.0..=1.0).contains(&level) => return bad(format!("dos level {level} outside [0, 1]")),
                AttackKind::Integrity if level < 0.0 || level.fract() != 0.0 => {
                    return bad(format!("integrity level {level} is not a clone count"))
                }
                _ => {}
            }
        }
        self.corpus.validate()?;
        for &kind in &self.models {
            ModelConfig { kind, ..self.model.clone() }.validate()?;
        }
        Ok(())
    }
}

/// Everything that stays fixed across repeats.
pub struct Prepared {
    pub corpus: Corpus,
    pub catalog: Vec<MalwareCatalogEntry>,
    pub ensemble: Ensemble,
    pub labels: Vec<Label>,
    pub drebin: Vec<DrebinFeatureSet>,
    pub markov: Vec<Option<MarkovFeatures>>,
    pub packages: Vec<String>,
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    let corpus = generate_corpus_with_shape(&cfg.corpus, &cfg.shape)?;
    let catalog = catalog_for_ensemble(cfg.engines);
    let ensemble = build_ensemble(&catalog, &corpus.families, cfg.engines, rng::derive_seed(cfg.seed, "ensemble", 0))?;
    let labels = par::map(&corpus.apps, |a| label_app(&ensemble, a, DEFAULT_LABEL_THRESHOLD).label);
    let drebin = par::map(&corpus.apps, extract_drebin).into_iter().collect::<Result<Vec<_>>>()?;
    let packages = ApiPool::package_roots();
    let markov = match cfg.feature_set {
        FeatureSetKind::Mamadroid => par::map(&corpus.apps, |a| extract_mamadroid(a, &packages).map(Some))
            .into_iter()
            .collect::<Result<Vec<_>>>()?,
        FeatureSetKind::Drebin => vec![None; corpus.apps.len()],
    };
    Ok(Prepared { corpus, catalog, ensemble, labels, drebin, markov, packages })
}

/// Train/test rows for one repeat, plus the integrity target when there is
/// one.
struct RepeatPlan {
    train: Vec<usize>,
    test: Vec<usize>,
    calibration: Vec<usize>,
    target: Option<usize>,
}

fn plan_repeat(cfg: &ExperimentConfig, prep: &Prepared, repeat: usize) -> Result<RepeatPlan> {
    let y: Vec<u8> = prep.labels.iter().map(|l| l.as_u8()).collect();
    let (mut train, mut test) = stratified_split(&y, cfg.split, rng::derive_seed(cfg.seed, "split", repeat as u64))?;
    let mut target = None;
    if cfg.attack.kind == AttackKind::Integrity {
        let n_add = cfg.attack.integrity.n_add;
        let t = match &cfg.attack.integrity.target_id {
            Some(id) => {
                let idx = prep
                    .corpus
                    .apps
                    .iter()
                    .position(|a| &a.id == id)
                    .ok_or_else(|| Error::Config(format!("integrity target `{id}` not in corpus")))?;
                if prep.labels[idx] != Label::Benign {
                    return Err(Error::Attack(format!("integrity target `{id}` is not labeled benign")));
                }
                if let Some(pos) = train.iter().position(|&i| i == idx) {
                    // Swap with a seeded test benign so class sizes hold.
                    let pool: Vec<usize> = test.iter().copied().filter(|&i| prep.labels[i] == Label::Benign).collect();
                    let other = pool[rng::substream(cfg.seed, "target-swap", repeat as u64).gen_range(0..pool.len())];
                    train[pos] = other;
                    let tpos = test.iter().position(|&i| i == other).unwrap();
                    test[tpos] = idx;
                    train.sort_unstable();
                    test.sort_unstable();
                }
                idx
            }
            None => {
                let pool: Vec<usize> = test
                    .iter()
                    .copied()
                    .filter(|&i| {
                        prep.labels[i] == Label::Benign && prep.corpus.apps[i].repackable && prep.drebin[i].len() >= 4 * n_add
                    })
                    .collect();
                *pool
                    .choose(&mut rng::substream(cfg.seed, "target", repeat as u64))
                    .ok_or_else(|| Error::Attack("no benign test app is large enough to target".into()))?
            }
        };
        target = Some(t);
    }
    let mut calibration = Vec::new();
    if cfg.thresholds == ThresholdSource::Calibration {
        let ty: Vec<u8> = train.iter().map(|&i| prep.labels[i].as_u8()).collect();
        let (fit, cal) =
            stratified_split(&ty, 1.0 - cfg.calibration_fraction, rng::derive_seed(cfg.seed, "calibration", repeat as u64))?;
        calibration = cal.iter().map(|&k| train[k]).collect();
        train = fit.iter().map(|&k| train[k]).collect();
    }
    Ok(RepeatPlan { train, test, calibration, target })
}

struct Side {
    drebin: Vec<DrebinFeatureSet>,
    markov: Vec<Option<MarkovFeatures>>,
    y: Vec<u8>,
    ids: Vec<String>,
}

impl Side {
    fn from_rows(prep: &Prepared, rows: &[usize]) -> Self {
        Side {
            drebin: rows.iter().map(|&i| prep.drebin[i].clone()).collect(),
            markov: rows.iter().map(|&i| prep.markov[i].clone()).collect(),
            y: rows.iter().map(|&i| prep.labels[i].as_u8()).collect(),
            ids: rows.iter().map(|&i| prep.corpus.apps[i].id.clone()).collect(),
        }
    }
}

fn featurize_apps(prep: &Prepared, kind: FeatureSetKind, apps: &[AppArchive]) -> Result<(Vec<DrebinFeatureSet>, Vec<Option<MarkovFeatures>>)> {
    let drebin = par::map(apps, extract_drebin).into_iter().collect::<Result<Vec<_>>>()?;
    let markov = match kind {
        FeatureSetKind::Mamadroid => par::map(apps, |a| extract_mamadroid(a, &prep.packages).map(Some)).into_iter().collect::<Result<_>>()?,
        FeatureSetKind::Drebin => vec![None; apps.len()],
    };
    Ok((drebin, markov))
}

fn to_dataset(kind: FeatureSetKind, side: &Side, dict: Option<&FeatureDictionary>) -> Result<Dataset> {
    let x = match kind {
        FeatureSetKind::Drebin => {
            let dict = dict.expect("drebin needs a dictionary");
            FeatureMatrix::Sparse { dim: dict.len(), rows: side.drebin.iter().map(|f| dict.vectorize(f)).collect() }
        }
        FeatureSetKind::Mamadroid => {
            let rows: Vec<Vec<f64>> = side.markov.iter().map(|m| m.as_ref().expect("markov features").matrix.clone()).collect();
            let dim = rows.first().map_or(0, Vec::len);
            FeatureMatrix::Dense { dim, rows }
        }
    };
    Dataset::new(x, side.y.clone(), side.ids.clone())
}

/// Poisoned training side for one `(repeat, level)`.
fn poisoned_training(cfg: &ExperimentConfig, prep: &Prepared, plan: &RepeatPlan, repeat: usize, level: f64) -> Result<(Side, usize)> {
    let mut side = Side::from_rows(prep, &plan.train);
    match cfg.attack.kind {
        AttackKind::None => Ok((side, 0)),
        AttackKind::Dos => {
            let train = LabeledApps {
                apps: plan.train.iter().map(|&i| prep.corpus.apps[i].clone()).collect(),
                labels: plan.train.iter().map(|&i| prep.labels[i]).collect(),
            };
            let dcfg = DosAttackConfig { ratio: level, seed: rng::derive_seed(cfg.seed, "dos", repeat as u64), ..cfg.attack.dos.clone() };
            let (poisoned, records) = spoof_dos(&train, &dcfg, &prep.catalog, &prep.ensemble)?;
            let (drebin, markov) = featurize_apps(prep, cfg.feature_set, &poisoned.apps)?;
            side = Side {
                drebin,
                markov,
                y: poisoned.labels.iter().map(|l| l.as_u8()).collect(),
                ids: poisoned.apps.iter().map(|a| a.id.clone()).collect(),
            };
            Ok((side, records.len()))
        }
        AttackKind::Integrity => {
            let q = level as usize;
            if q == 0 {
                return Ok((side, 0));
            }
            let target = &prep.corpus.apps[plan.target.expect("integrity plan has a target")];
            let icfg = IntegrityAttackConfig { q, seed: rng::derive_seed(cfg.seed, "clones", repeat as u64), ..cfg.attack.integrity.clone() };
            let (clones, records) = make_clones(target, &icfg, &prep.corpus.pool.all(), &prep.catalog, &prep.ensemble)?;
            let (drebin, markov) = featurize_apps(prep, cfg.feature_set, &clones)?;
            side.drebin.extend(drebin);
            side.markov.extend(markov);
            side.y.extend(records.iter().map(|r| r.annotation.label.as_u8()));
            side.ids.extend(clones.into_iter().map(|c| c.id));
            Ok((side, records.len()))
        }
    }
}

fn split_scores(scores: &[f64], y: &[u8]) -> (Vec<f64>, Vec<f64>) {
    let mut b = Vec::new();
    let mut m = Vec::new();
    for (s, &l) in scores.iter().zip(y) {
        if l == 1 {
            m.push(*s)
        } else {
            b.push(*s)
        }
    }
    (b, m)
}

fn rate_at(scores: &[f64], threshold: f64) -> f64 {
    scores.iter().filter(|&&s| s >= threshold).count() as f64 / scores.len() as f64
}

fn run_task(cfg: &ExperimentConfig, prep: &Prepared, repeat: usize, level: f64) -> Result<Vec<RunRecord>> {
    let plan = plan_repeat(cfg, prep, repeat)?;
    let (train_side, n_poison) = poisoned_training(cfg, prep, &plan, repeat, level)?;
    let test_side = Side::from_rows(prep, &plan.test);
    let cal_side = Side::from_rows(prep, &plan.calibration);
    let dict = match cfg.feature_set {
        FeatureSetKind::Drebin => Some(FeatureDictionary::build(&train_side.drebin)?),
        FeatureSetKind::Mamadroid => None,
    };
    let train_ds = to_dataset(cfg.feature_set, &train_side, dict.as_ref())?;
    let test_ds = to_dataset(cfg.feature_set, &test_side, dict.as_ref())?;
    let target_row = plan.target.map(|t| plan.test.iter().position(|&i| i == t).expect("target is in test"));
    let beta = cfg.tpr_freeze.expect("resolved config");

    let mut out = Vec::with_capacity(cfg.models.len());
    for &kind in &cfg.models {
        let mcfg = ModelConfig { kind, seed: rng::derive_seed(cfg.seed, "model", repeat as u64), ..cfg.model.clone() };
        let (model, removed) = match &cfg.defense {
            Some(d) => {
                let (m, f) = defend_and_retrain(&train_ds, d, &mcfg)?;
                (m, Some(f.removed.len()))
            }
            None => (train(&mcfg, &train_ds)?, None),
        };
        let scores = predict(&model, &test_ds.x)?;
        let (b, m) = split_scores(&scores, &test_ds.y);
        let roc = roc_curve(&b, &m)?;
        let (tpr, thresholds, fpr_frozen) = match cfg.thresholds {
            ThresholdSource::Test => (
                cfg.fpr_targets.iter().map(|&a| tpr_at_fpr(&roc, a)).collect::<Vec<_>>(),
                cfg.fpr_targets.iter().map(|&a| operating_point(&roc, a).threshold).collect::<Vec<_>>(),
                fpr_at_tpr(&roc, beta),
            ),
            ThresholdSource::Calibration => {
                let cal_ds = to_dataset(cfg.feature_set, &cal_side, dict.as_ref())?;
                let cs = predict(&model, &cal_ds.x)?;
                let (cb, cm) = split_scores(&cs, &cal_ds.y);
                let cal_roc = roc_curve(&cb, &cm)?;
                let th: Vec<f64> = cfg.fpr_targets.iter().map(|&a| operating_point(&cal_roc, a).threshold).collect();
                (th.iter().map(|&t| rate_at(&m, t)).collect(), th, rate_at(&b, frozen_point(&cal_roc, beta).threshold))
            }
        };
        let target_score = target_row.map(|r| scores[r]);
        let success = target_score.map(|s| thresholds.iter().map(|&t| s >= t).collect()).unwrap_or_default();
        out.push(RunRecord {
            model: kind,
            level,
            repeat,
            n_train: train_ds.len(),
            n_poison,
            n_removed: removed,
            auc: roc.auc,
            tpr,
            fpr_at_frozen_tpr: fpr_frozen,
            target_id: plan.target.map(|t| prep.corpus.apps[t].id.clone()),
            target_score,
            success,
            roc: roc.points.iter().map(|p| [p.fpr, p.tpr]).collect(),
        });
    }
    log::info!("repeat {repeat} level {level}: {} poison rows, {} models scored", n_poison, out.len());
    Ok(out)
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let cfg = cfg.resolved();
    cfg.validate()?;
    let prep = prepare(&cfg)?;
    run_prepared(&cfg, &prep)
}

/// As [`run_experiment`] with the corpus work already done; `cfg` must be
/// resolved.
pub fn run_prepared(cfg: &ExperimentConfig, prep: &Prepared) -> Result<ExperimentReport> {
    let tasks: Vec<(usize, f64)> =
        (0..cfg.repeats).flat_map(|r| cfg.attack.levels.iter().map(move |&l| (r, l))).collect();
    let results = par::map(&tasks, |&(r, l)| run_task(cfg, prep, r, l).map_err(|e| e.in_repeat(r)));
    let mut runs: Vec<RunRecord> = Vec::new();
    for res in results {
        runs.extend(res?);
    }
    runs.sort_by(|a, b| a.model.cmp(&b.model).then(a.level.total_cmp(&b.level)).then(a.repeat.cmp(&b.repeat)));
    Ok(ExperimentReport { config: cfg.clone(), rows: aggregate(cfg, &runs)?, runs })
}

fn aggregate(cfg: &ExperimentConfig, runs: &[RunRecord]) -> Result<Vec<ReportRow>> {
    let mut groups: BTreeMap<(ModelKind, u64), Vec<&RunRecord>> = BTreeMap::new();
    for r in runs {
        groups.entry((r.model, level_key(r.level))).or_default().push(r);
    }
    let mut correlation: BTreeMap<ModelKind, (Option<f64>, Option<f64>)> = BTreeMap::new();
    if cfg.attack.kind == AttackKind::Dos && cfg.attack.levels.len() >= 3 {
        for (mi, &model) in cfg.models.iter().enumerate() {
            let xs: Vec<f64> = cfg.attack.levels.clone();
            let ys: Vec<f64> = xs
                .iter()
                .map(|&l| mean_std(&groups[&(model, level_key(l))].iter().map(|r| r.fpr_at_frozen_tpr).collect::<Vec<_>>()).0)
                .collect();
            let seed = rng::derive_seed(cfg.seed, "pearson", mi as u64);
            let entry = match pearson(&xs, &ys, cfg.permutations, seed) {
                Ok((r, p)) => (Some(r), Some(p)),
                Err(Error::DegenerateInput(msg)) => {
                    log::warn!("{model}: no correlation reported ({msg})");
                    (None, None)
                }
                Err(e) => return Err(e),
            };
            correlation.insert(model, entry);
        }
    }
    let mut rows = Vec::new();
    for &model in &cfg.models {
        for &level in &cfg.attack.levels {
            let g = &groups[&(model, level_key(level))];
            let (fpr_frozen, _) = mean_std(&g.iter().map(|r| r.fpr_at_frozen_tpr).collect::<Vec<_>>());
            let (auc, _) = mean_std(&g.iter().map(|r| r.auc).collect::<Vec<_>>());
            let (pr, pp) = correlation.get(&model).copied().unwrap_or((None, None));
            for (k, &alpha) in cfg.fpr_targets.iter().enumerate() {
                let (tpr_mean, tpr_std) = mean_std(&g.iter().map(|r| r.tpr[k]).collect::<Vec<_>>());
                let asr = (cfg.attack.kind == AttackKind::Integrity)
                    .then(|| g.iter().filter(|r| r.success[k]).count() as f64 / g.len() as f64);
                rows.push(ReportRow {
                    model,
                    feature_set: cfg.feature_set,
                    attack: cfg.attack.kind,
                    level,
                    fpr_target: alpha,
                    tpr_mean,
                    tpr_std,
                    fpr_at_frozen_tpr: fpr_frozen,
                    auc_mean: auc,
                    asr,
                    pearson_r: pr,
                    pearson_p: pp,
                });
            }
        }
    }
    Ok(rows)
}

fn level_key(level: f64) -> u64 {
    level.to_bits()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(kind: AttackKind) -> ExperimentConfig {
        let mut cfg = ExperimentConfig {
            seed: 3,
            corpus: CorpusConfig { n_benign: 60, n_malicious: 60, ..Default::default() },
            models: vec![ModelKind::Lsvm],
            repeats: 2,
            permutations: 200,
            ..Default::default()
        };
        cfg.attack.kind = kind;
        cfg.attack.levels = match kind {
            AttackKind::None => vec![0.0],
            AttackKind::Dos => vec![0.0, 0.1, 0.2],
            AttackKind::Integrity => vec![0.0, 5.0],
        };
        cfg
    }

    #[test]
    fn clean_run_shapes() {
        let rep = run_experiment(&tiny(AttackKind::None)).unwrap();
        assert_eq!(rep.runs.len(), 2);
        assert_eq!(rep.rows.len(), 2);
        for row in &rep.rows {
            assert!((0.0..=1.0).contains(&row.tpr_mean) && row.tpr_std >= 0.0);
            assert!(row.asr.is_none() && row.pearson_r.is_none());
        }
        assert_eq!(rep.config.tpr_freeze, Some(0.95));
    }

    #[test]
    fn dos_run_reports_correlation() {
        let rep = run_experiment(&tiny(AttackKind::Dos)).unwrap();
        assert_eq!(rep.rows.len(), 6);
        let counts: Vec<usize> = rep.runs.iter().filter(|r| r.repeat == 0).map(|r| r.n_poison).collect();
        assert_eq!(counts, vec![0, 9, 19]);
        assert!(rep.rows.iter().all(|r| r.pearson_p.is_none_or(|p| p > 0.0 && p <= 1.0)));
    }

    #[test]
    fn integrity_run_reports_asr() {
        let rep = run_experiment(&tiny(AttackKind::Integrity)).unwrap();
        assert!(rep.rows.iter().all(|r| r.asr.is_some()));
        let run = rep.runs.iter().find(|r| r.level == 5.0).unwrap();
        assert_eq!(run.n_poison, 5);
        assert!(run.target_id.as_deref().is_some_and(|t| t.starts_with('b')));
    }

    #[test]
    fn calibration_mode_runs() {
        let mut cfg = tiny(AttackKind::None);
        cfg.thresholds = ThresholdSource::Calibration;
        let rep = run_experiment(&cfg).unwrap();
        assert!(rep.runs.iter().all(|r| r.n_train < 96));
    }

    #[test]
    fn config_rejects_bad_values() {
        let mut cfg = tiny(AttackKind::Dos);
        cfg.split = 1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = tiny(AttackKind::Dos);
        cfg.attack.levels = vec![1.5];
        assert!(cfg.validate().is_err());
    }
}
