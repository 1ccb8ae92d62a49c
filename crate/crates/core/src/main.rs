use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use spoofbench::annotator::{annotate, build_ensemble, scan_bytes, Ensemble, DEFAULT_LABEL_THRESHOLD};
use spoofbench::archive::{parse_archive, write_archive, inject_entry};
use spoofbench::attacks::{
    make_clones, records_to_text, spoof_dos, CatalogChoice, DosAttackConfig, DosMode, DosSelection, IntegrityAttackConfig,
    LabeledApps, PoisonRecord, INJECTION_DIR,
};
use spoofbench::bench::{run_experiment, write_report_files, ExperimentConfig, ExperimentReport};
use spoofbench::cli::{config_path, load_config, RunManifest};
use spoofbench::corpus::{catalog_for_ensemble, MalwareCatalogEntry};
use spoofbench::corpus::{family_name, load_corpus, save_corpus, AppArchive, ApiPool, Label, ARCHIVE_EXT};
use spoofbench::defense::deep_knn_filter;
use spoofbench::features::{
    extract_drebin, extract_mamadroid, FeatureDictionary, FeatureMatrix, FeatureSetKind, MatrixFile,
};
use spoofbench::models::{train, Dataset, ModelConfig, ModelKind};
use spoofbench::{io, par, rng, Error, Result};

#[derive(Parser, Debug)]
#[command(name = "spoofbench", version, about = "Label-spoofing poisoning test bench for static Android malware classifiers")]
struct Cli {
    /// Config file with dotted keys. Defaults to $SPOOFBENCH_CONFIG.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Config override `key.path=value`, applied after the file. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads. Defaults to the available parallelism.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Where to write the run manifest. Defaults to a file next to the outputs.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic corpus into a directory.
    Gen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        benign: Option<usize>,
        #[arg(long)]
        malicious: Option<usize>,
    },
    /// Inject one catalog payload into an app under res/raw/.
    Inject {
        #[arg(long)]
        app: PathBuf,
        #[arg(long)]
        catalog_row: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Scan archives or corpus directories; prints one annotation per app.
    Scan {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Extract a feature matrix from a corpus directory.
    Extract {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value = "drebin")]
        features: String,
        #[arg(long)]
        out: PathBuf,
        /// Reuse a Drebin dictionary (one feature per line) instead of building one.
        #[arg(long)]
        dictionary: Option<PathBuf>,
        /// Write the Drebin dictionary used.
        #[arg(long)]
        dictionary_out: Option<PathBuf>,
    },
    /// Train a model on a feature matrix.
    Train {
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long)]
        model: ModelKind,
        #[arg(long)]
        out: PathBuf,
    },
    /// Poison a corpus directory.
    Attack {
        #[command(subcommand)]
        kind: AttackCommand,
    },
    /// Filter a feature matrix with Deep KNN, optionally retraining.
    Defend {
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long, default_value_t = 11)]
        k: usize,
        /// Kept rows as a feature matrix.
        #[arg(long)]
        out: PathBuf,
        /// Per-row vote tallies.
        #[arg(long)]
        tallies: Option<PathBuf>,
        #[arg(long, requires = "model_out")]
        model: Option<ModelKind>,
        #[arg(long, requires = "model")]
        model_out: Option<PathBuf>,
    },
    /// Run a full experiment and write the report.
    Run {
        #[arg(long)]
        out: PathBuf,
    },
    /// Render CSV and SVG files from a report JSON.
    Report {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand, Debug)]
enum AttackCommand {
    /// Label-spoof a share of the benign apps.
    Dos(DosArgs),
    /// Add label-spoofed clones of one benign app.
    Integrity(IntegrityArgs),
}

#[derive(Args, Debug)]
struct DosArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    ratio: f64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    catalog_row: Option<usize>,
    #[arg(long, default_value = "replace", value_parser = ["replace", "append"])]
    mode: String,
    #[arg(long, default_value = "uniform", value_parser = ["uniform", "clustered"])]
    selection: String,
}

#[derive(Args, Debug)]
struct IntegrityArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    target: String,
    #[arg(long, default_value_t = 50)]
    q: usize,
    #[arg(long, default_value_t = 25)]
    n_add: usize,
    #[arg(long, default_value_t = 0)]
    catalog_row: usize,
    #[arg(long)]
    out: PathBuf,
}

const MANIFEST_FILE: &str = "run_manifest.json";
const RECORDS_FILE: &str = "poison_records.tsv";

fn require_seed(seed: Option<u64>, command: &str) -> Result<u64> {
    seed.ok_or_else(|| Error::Config(format!("`{command}` needs --seed")))
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Gen { .. } => "gen",
        Command::Inject { .. } => "inject",
        Command::Scan { .. } => "scan",
        Command::Extract { .. } => "extract",
        Command::Train { .. } => "train",
        Command::Attack { kind: AttackCommand::Dos(_) } => "attack dos",
        Command::Attack { kind: AttackCommand::Integrity(_) } => "attack integrity",
        Command::Defend { .. } => "defend",
        Command::Run { .. } => "run",
        Command::Report { .. } => "report",
    }
}

fn needs_seed(c: &Command) -> bool {
    matches!(c, Command::Gen { .. } | Command::Inject { .. } | Command::Scan { .. } | Command::Train { .. } | Command::Attack { .. } | Command::Run { .. })
}

/// Catalog and ensemble as the experiment runner builds them.
fn world(cfg: &ExperimentConfig) -> Result<(Vec<MalwareCatalogEntry>, Ensemble)> {
    let catalog = catalog_for_ensemble(cfg.engines);
    let families: Vec<String> = (0..cfg.corpus.families()).map(family_name).collect();
    let ensemble = build_ensemble(&catalog, &families, cfg.engines, rng::derive_seed(cfg.seed, "ensemble", 0))?;
    Ok((catalog, ensemble))
}

fn manifest_beside_file(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    out.with_file_name(name)
}

fn archive_paths(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut files: Vec<PathBuf> = std::fs::read_dir(p)?
                .map(|e| e.map(|e| e.path()))
                .collect::<std::io::Result<_>>()?;
            files.retain(|f| f.extension().is_some_and(|e| e == ARCHIVE_EXT));
            files.sort();
            out.extend(files);
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}

fn app_id(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn labeled(apps: Vec<AppArchive>) -> LabeledApps {
    let labels = apps.iter().map(|a| a.true_label).collect();
    LabeledApps { apps, labels }
}

/// Saves apps with the label column holding the training label.
fn save_labeled(set: &LabeledApps, dir: &Path) -> Result<()> {
    let apps: Vec<AppArchive> =
        set.apps.iter().zip(&set.labels).map(|(a, &l)| AppArchive { true_label: l, ..a.clone() }).collect();
    save_corpus(&apps, dir)
}

fn write_records(dir: &Path, records: &[PoisonRecord]) -> Result<PathBuf> {
    let p = dir.join(RECORDS_FILE);
    io::write_atomic(&p, records_to_text(records).as_bytes())?;
    Ok(p)
}

fn read_dictionary(path: &Path) -> Result<FeatureDictionary> {
    let text = std::fs::read_to_string(path)?;
    Ok(FeatureDictionary::from_names(text.lines().filter(|l| !l.is_empty()).map(str::to_owned)))
}

fn extract_matrix(
    apps: &[AppArchive],
    kind: FeatureSetKind,
    dictionary: Option<FeatureDictionary>,
) -> Result<(MatrixFile, Option<FeatureDictionary>)> {
    let ids = apps.iter().map(|a| a.id.clone()).collect();
    let labels = apps.iter().map(|a| a.true_label.as_u8()).collect();
    match kind {
        FeatureSetKind::Drebin => {
            let sets = par::map(apps, extract_drebin).into_iter().collect::<Result<Vec<_>>>()?;
            let dict = match dictionary {
                Some(d) => d,
                None => FeatureDictionary::build(&sets)?,
            };
            let matrix = FeatureMatrix::Sparse { dim: dict.len(), rows: sets.iter().map(|s| dict.vectorize(s)).collect() };
            Ok((MatrixFile { kind, ids, labels, matrix }, Some(dict)))
        }
        FeatureSetKind::Mamadroid => {
            let roots = ApiPool::package_roots();
            let rows = par::map(apps, |a| extract_mamadroid(a, &roots).map(|m| m.matrix))
                .into_iter()
                .collect::<Result<Vec<_>>>()?;
            let dim = rows.first().map_or(0, Vec::len);
            Ok((MatrixFile { kind, ids, labels, matrix: FeatureMatrix::Dense { dim, rows } }, None))
        }
    }
}

fn dataset(m: &MatrixFile) -> Result<Dataset> {
    Dataset::new(m.matrix.clone(), m.labels.clone(), m.ids.clone())
}

fn execute(cli: Cli, cfg: ExperimentConfig, workers: usize) -> Result<()> {
    let name = command_name(&cli.command);
    let mut manifest = RunManifest::new(name, &cfg, cli.seed, workers)?;
    let default_manifest: Option<PathBuf>;
    match cli.command {
        Command::Gen { out, .. } => {
            let corpus = manifest.time("generate", || spoofbench::corpus::generate_corpus_with_shape(&cfg.corpus, &cfg.shape))?;
            manifest.time("write", || save_corpus(&corpus.apps, &out))?;
            info!("wrote {} apps to {}", corpus.apps.len(), out.display());
            manifest.outputs.push(out.clone());
            default_manifest = Some(out.join(MANIFEST_FILE));
        }
        Command::Inject { app, catalog_row, out } => {
            let catalog = catalog_for_ensemble(cfg.engines);
            let entry = catalog
                .get(catalog_row)
                .ok_or_else(|| Error::Config(format!("catalog row {catalog_row} out of range for {} rows", catalog.len())))?;
            let bytes = manifest.time("inject", || {
                let archive = parse_archive(&std::fs::read(&app)?)?;
                write_archive(&inject_entry(&archive, entry, INJECTION_DIR, rng::derive_seed(cfg.seed, "inject", 0))?)
            })?;
            io::write_atomic(&out, &bytes)?;
            info!("injected {} ({}) into {}", entry.mime, entry.family, out.display());
            manifest.outputs.push(out.clone());
            default_manifest = Some(manifest_beside_file(&out));
        }
        Command::Scan { paths, out } => {
            let (_, ensemble) = manifest.time("ensemble", || world(&cfg))?;
            let files = archive_paths(&paths)?;
            let lines = manifest.time("scan", || {
                par::map(&files, |p| -> Result<String> {
                    let id = app_id(p);
                    let report = scan_bytes(&ensemble, &id, &std::fs::read(p)?)?;
                    let a = annotate(&ensemble, &report, DEFAULT_LABEL_THRESHOLD);
                    Ok(format!("{id}\t{}\t{}\t{}", a.label.as_u8(), a.family.as_deref().unwrap_or("-"), a.detections))
                })
                .into_iter()
                .collect::<Result<Vec<_>>>()
            })?;
            let mut text = String::from("id\tlabel\tfamily\tdetections\n");
            for l in lines {
                text.push_str(&l);
                text.push('\n');
            }
            match &out {
                Some(p) => {
                    io::write_atomic(p, text.as_bytes())?;
                    manifest.outputs.push(p.clone());
                    default_manifest = Some(manifest_beside_file(p));
                }
                None => {
                    print!("{text}");
                    default_manifest = None;
                }
            }
        }
        Command::Extract { corpus, features, out, dictionary, dictionary_out } => {
            let kind = FeatureSetKind::parse(&features)
                .ok_or_else(|| Error::Config(format!("unknown feature set `{features}`")))?;
            let apps = manifest.time("load", || load_corpus(&corpus))?;
            let dict = dictionary.as_deref().map(read_dictionary).transpose()?;
            let (matrix, dict) = manifest.time("extract", || extract_matrix(&apps, kind, dict))?;
            matrix.save(&out)?;
            manifest.outputs.push(out.clone());
            if let (Some(p), Some(d)) = (dictionary_out, dict) {
                let mut text = String::new();
                for n in d.names() {
                    text.push_str(n);
                    text.push('\n');
                }
                io::write_atomic(&p, text.as_bytes())?;
                manifest.outputs.push(p);
            }
            info!("{} rows x {} columns", matrix.matrix.n_rows(), matrix.matrix.dim());
            default_manifest = Some(manifest_beside_file(&out));
        }
        Command::Train { matrix, model, out } => {
            let m = MatrixFile::load(&matrix)?;
            let mcfg = ModelConfig { kind: model, seed: rng::derive_seed(cfg.seed, "model", 0), ..cfg.model.clone() };
            let trained = manifest.time("train", || train(&mcfg, &dataset(&m)?))?;
            trained.save(&out)?;
            manifest.outputs.push(out.clone());
            default_manifest = Some(manifest_beside_file(&out));
        }
        Command::Attack { kind: AttackCommand::Dos(a) } => {
            let (catalog, ensemble) = world(&cfg)?;
            let apps = load_corpus(&a.corpus)?;
            let dcfg = DosAttackConfig {
                ratio: a.ratio,
                budget: a.budget,
                catalog: a.catalog_row.map_or(CatalogChoice::Random, CatalogChoice::Fixed),
                mode: if a.mode == "append" { DosMode::Append } else { DosMode::Replace },
                selection: if a.selection == "clustered" { DosSelection::Clustered } else { DosSelection::Uniform },
                seed: rng::derive_seed(cfg.seed, "dos", 0),
            };
            let (poisoned, records) = manifest.time("attack", || spoof_dos(&labeled(apps), &dcfg, &catalog, &ensemble))?;
            save_labeled(&poisoned, &a.out)?;
            manifest.outputs.push(a.out.clone());
            manifest.outputs.push(write_records(&a.out, &records)?);
            info!("poisoned {} apps", records.len());
            default_manifest = Some(a.out.join(MANIFEST_FILE));
        }
        Command::Attack { kind: AttackCommand::Integrity(a) } => {
            let (catalog, ensemble) = world(&cfg)?;
            let apps = load_corpus(&a.corpus)?;
            let target = apps
                .iter()
                .find(|x| x.id == a.target)
                .ok_or_else(|| Error::Config(format!("target `{}` not in corpus", a.target)))?;
            if target.true_label != Label::Benign {
                return Err(Error::Attack(format!("target `{}` is not labeled benign", a.target)));
            }
            let icfg = IntegrityAttackConfig {
                target_id: Some(a.target.clone()),
                q: a.q,
                n_add: a.n_add,
                catalog_row: a.catalog_row,
                seed: rng::derive_seed(cfg.seed, "clones", 0),
            };
            let pool = ApiPool::new(cfg.corpus.api_pool_size, &cfg.shape).all();
            let (clones, records) = manifest.time("attack", || make_clones(target, &icfg, &pool, &catalog, &ensemble))?;
            let mut set = labeled(apps);
            for (c, r) in clones.into_iter().zip(&records) {
                set.apps.push(c);
                set.labels.push(r.annotation.label);
            }
            save_labeled(&set, &a.out)?;
            manifest.outputs.push(a.out.clone());
            manifest.outputs.push(write_records(&a.out, &records)?);
            info!("added {} clones of {}", records.len(), a.target);
            default_manifest = Some(a.out.join(MANIFEST_FILE));
        }
        Command::Defend { matrix, k, out, tallies, model, model_out } => {
            let m = MatrixFile::load(&matrix)?;
            let filter = manifest.time("filter", || deep_knn_filter(&m.matrix, &m.labels, k))?;
            let kept = MatrixFile {
                kind: m.kind,
                ids: filter.kept.iter().map(|&i| m.ids[i].clone()).collect(),
                labels: filter.kept.iter().map(|&i| m.labels[i]).collect(),
                matrix: m.matrix.select(&filter.kept),
            };
            kept.save(&out)?;
            manifest.outputs.push(out.clone());
            if let Some(p) = tallies {
                io::write_atomic(&p, filter.to_text(&m.ids, &m.labels).as_bytes())?;
                manifest.outputs.push(p);
            }
            if let (Some(kind), Some(p)) = (model, model_out) {
                let seed = require_seed(cli.seed, "defend --model")?;
                let mcfg = ModelConfig { kind, seed: rng::derive_seed(seed, "model", 0), ..cfg.model.clone() };
                let trained = manifest.time("retrain", || train(&mcfg, &dataset(&kept)?))?;
                trained.save(&p)?;
                manifest.outputs.push(p);
            }
            info!("kept {} of {} rows", filter.kept.len(), m.labels.len());
            default_manifest = Some(manifest_beside_file(&out));
        }
        Command::Run { out } => {
            let report = manifest.time("experiment", || run_experiment(&cfg))?;
            let files = manifest.time("report", || write_report_files(&report, &out))?;
            manifest.outputs.extend(files);
            default_manifest = Some(out.join(MANIFEST_FILE));
        }
        Command::Report { report, out } => {
            let rep = ExperimentReport::load(&report)?;
            let files = manifest.time("report", || write_report_files(&rep, &out))?;
            manifest.outputs.extend(files);
            default_manifest = Some(out.join(MANIFEST_FILE));
        }
    }
    match cli.manifest.or(default_manifest) {
        Some(p) => manifest.save(&p)?,
        None => info!("manifest: {}", String::from_utf8_lossy(&manifest.to_json()?).trim_end()),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let name = command_name(&cli.command);
    if needs_seed(&cli.command) {
        require_seed(cli.seed, name)?;
    }
    let mut cfg = load_config(config_path(cli.config.clone()).as_deref(), &cli.sets)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Command::Gen { benign, malicious, .. } = &cli.command {
        cfg.corpus.n_benign = benign.unwrap_or(cfg.corpus.n_benign);
        cfg.corpus.n_malicious = malicious.unwrap_or(cfg.corpus.n_malicious);
    }
    let cfg = cfg.resolved();
    cfg.validate()?;
    let workers = cli.workers.unwrap_or_else(par::default_workers);
    if workers == 0 {
        return Err(Error::Config("--workers must be at least 1".into()));
    }
    info!("{name}: seed {:?}, {workers} workers", cli.seed);
    par::with_workers(workers, || execute(cli, cfg, workers))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).format_timestamp(None).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
