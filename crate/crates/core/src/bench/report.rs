use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{AttackKind, ExperimentConfig};
use crate::error::{Error, Result};
use crate::features::FeatureSetKind;
use crate::io::write_atomic;
use crate::models::ModelKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: ModelKind,
    pub feature_set: FeatureSetKind,
    pub attack: AttackKind,
    pub level: f64,
    pub fpr_target: f64,
    pub tpr_mean: f64,
    pub tpr_std: f64,
    pub fpr_at_frozen_tpr: f64,
    pub auc_mean: f64,
    pub asr: Option<f64>,
    pub pearson_r: Option<f64>,
    pub pearson_p: Option<f64>,
}

/// One trained model in one repeat at one attack level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub model: ModelKind,
    pub level: f64,
    pub repeat: usize,
    pub n_train: usize,
    pub n_poison: usize,
    pub n_removed: Option<usize>,
    pub auc: f64,
    /// One entry per FPR target.
    pub tpr: Vec<f64>,
    pub fpr_at_frozen_tpr: f64,
    pub target_id: Option<String>,
    pub target_score: Option<f64>,
    /// Per FPR target, whether the target was flagged.
    pub success: Vec<bool>,
    /// `[fpr, tpr]` sweep points.
    pub roc: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub rows: Vec<ReportRow>,
    pub runs: Vec<RunRecord>,
}

impl ExperimentReport {
    pub fn to_json(&self) -> Result<Vec<u8>> {
        let mut v = serde_json::to_vec_pretty(self)?;
        v.push(b'\n');
        Ok(v)
    }

    pub fn load(path: &Path) -> Result<Self> {
        serde_json::from_slice(&std::fs::read(path)?).map_err(|e| Error::Format { path: path.to_owned(), reason: e.to_string() })
    }

    pub fn rows_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "model",
            "feature_set",
            "attack",
            "level",
            "fpr_target",
            "tpr_mean",
            "tpr_std",
            "fpr_at_frozen_tpr",
            "auc_mean",
            "asr",
            "pearson_r",
            "pearson_p",
        ])
        .map_err(csv_err)?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            w.write_record([
                r.model.as_str().to_owned(),
                r.feature_set.as_str().to_owned(),
                r.attack.as_str().to_owned(),
                r.level.to_string(),
                r.fpr_target.to_string(),
                r.tpr_mean.to_string(),
                r.tpr_std.to_string(),
                r.fpr_at_frozen_tpr.to_string(),
                r.auc_mean.to_string(),
                opt(r.asr),
                opt(r.pearson_r),
                opt(r.pearson_p),
            ])
            .map_err(csv_err)?;
        }
        w.into_inner().map_err(|e| Error::Io(e.into_error()))
    }

    fn roc_csv(run: &RunRecord) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["fpr", "tpr"]).map_err(csv_err)?;
        for p in &run.roc {
            w.write_record([p[0].to_string(), p[1].to_string()]).map_err(csv_err)?;
        }
        w.into_inner().map_err(|e| Error::Io(e.into_error()))
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Writes `report.json`, `report.csv`, one ROC CSV per run under `roc/`,
/// and SVG plots under `plots/`. Returns the written paths.
pub fn write_report_files(report: &ExperimentReport, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir.join("roc"))?;
    std::fs::create_dir_all(dir.join("plots"))?;
    let mut written = Vec::new();
    let mut put = |p: PathBuf, bytes: &[u8]| -> Result<()> {
        write_atomic(&p, bytes)?;
        written.push(p);
        Ok(())
    };
    put(dir.join("report.json"), &report.to_json()?)?;
    put(dir.join("report.csv"), &report.rows_csv()?)?;
    for run in &report.runs {
        let name = format!("{}_{}_{}.csv", run.model, run.level, run.repeat);
        put(dir.join("roc").join(name), &ExperimentReport::roc_csv(run)?)?;
    }
    for model in &report.config.models {
        put(dir.join("plots").join(format!("roc_{model}.svg")), roc_svg(report, *model).as_bytes())?;
    }
    put(dir.join("plots").join("tpr_vs_level.svg"), trend_svg(report).as_bytes())?;
    Ok(written)
}

const PALETTE: [&str; 8] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];
const W: f64 = 480.0;
const H: f64 = 360.0;
const PAD: f64 = 48.0;

fn frame(title: &str, xlabel: &str, ylabel: &str) -> String {
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{title}</text>\n",
        W / 2.0
    );
    let (x0, y0, x1, y1) = (PAD, H - PAD, W - PAD / 2.0, PAD);
    let _ = writeln!(s, "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>");
    let _ = writeln!(s, "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"black\"/>");
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"12\">{xlabel}</text>", (x0 + x1) / 2.0, H - 12.0);
    let _ = writeln!(
        s,
        "<text x=\"14\" y=\"{}\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 14 {})\">{ylabel}</text>",
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    );
    s
}

fn polyline(points: &[(f64, f64)], color: &str) -> String {
    let (x0, y0) = (PAD, H - PAD);
    let (sx, sy) = (W - 1.5 * PAD, H - 2.0 * PAD);
    let pts: Vec<String> = points.iter().map(|(x, y)| format!("{:.2},{:.2}", x0 + x * sx, y0 - y * sy)).collect();
    format!("<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n", pts.join(" "))
}

fn legend(s: &mut String, k: usize, label: &str, color: &str) {
    let y = PAD + 14.0 * k as f64;
    let _ = writeln!(s, "<text x=\"{}\" y=\"{y}\" font-size=\"11\" fill=\"{color}\">{label}</text>", W - PAD * 2.5);
}

/// ROC curves of repeat 0, one per attack level.
fn roc_svg(report: &ExperimentReport, model: ModelKind) -> String {
    let mut s = frame(&format!("ROC, {model}"), "FPR", "TPR");
    let runs: Vec<&RunRecord> = report.runs.iter().filter(|r| r.model == model && r.repeat == 0).collect();
    for (k, run) in runs.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let pts: Vec<(f64, f64)> = run.roc.iter().map(|p| (p[0], p[1])).collect();
        s.push_str(&polyline(&pts, color));
        legend(&mut s, k, &format!("level {}", run.level), color);
    }
    s.push_str("</svg>\n");
    s
}

/// Mean TPR against attack level, one line per model and FPR target.
fn trend_svg(report: &ExperimentReport) -> String {
    let mut s = frame("Mean TPR by attack level", "level (scaled to max)", "TPR");
    let max_level = report.rows.iter().map(|r| r.level).fold(0.0, f64::max);
    let scale = if max_level > 0.0 { max_level } else { 1.0 };
    let mut k = 0;
    for &model in &report.config.models {
        for &alpha in &report.config.fpr_targets {
            let pts: Vec<(f64, f64)> = report
                .rows
                .iter()
                .filter(|r| r.model == model && r.fpr_target == alpha)
                .map(|r| (r.level / scale, r.tpr_mean))
                .collect();
            let color = PALETTE[k % PALETTE.len()];
            s.push_str(&polyline(&pts, color));
            legend(&mut s, k, &format!("{model} @ FPR {alpha}"), color);
            k += 1;
        }
    }
    s.push_str("</svg>\n");
    s
}
