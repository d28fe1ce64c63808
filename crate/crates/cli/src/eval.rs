//! Scores run outputs against synthetic ground truth.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use artps_core::depthpp::read_ard1;
use artps_core::localize::{iou, RotatedBox};
use artps_core::metrics::{
    confusion_stats, dcg_at_k, delta_accuracy, depth_errors, fpr_at_recall, kendall, pr_auc, roc_auc, spearman,
    DepthErrors, DetectionStats, DELTA_THRESHOLDS,
};
use artps_core::synth::{files, SceneTruth, TruthRegion};
use artps_core::{io, RunReport};
use serde::{Deserialize, Serialize};

use crate::{FeatureRecord, LabelRecord};

pub const NDCG_K: usize = 10;
pub const FPR_RECALL: f64 = 0.8;
/// Minimum rotated IoU for a predicted region to claim a truth region.
pub const MATCH_IOU: f64 = 0.1;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    /// Run output directory, relative to the reports directory.
    pub run: PathBuf,
    /// Synth `truth.json`, relative to the manifest.
    pub truth: PathBuf,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub frames: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub run: String,
    pub frame_id: String,
    pub pixel_auroc: f64,
    pub pixel_ap: f64,
    pub pixel_fpr_at_recall: f64,
    /// Thresholded mask against the anomaly mask.
    pub mask: Option<DetectionStats>,
    pub ndcg_at_10: f64,
    pub spearman: Option<f64>,
    pub kendall: Option<f64>,
    /// Relevance credited to each report region, in ranking order.
    pub gains: Vec<f64>,
    pub depth: Option<DepthErrors>,
    pub depth_delta: Option<[f64; 3]>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub frames: Vec<FrameMetrics>,
    /// Mean of every defined per-frame metric.
    pub mean: BTreeMap<String, f64>,
    pub warnings: Vec<String>,
}

fn scene_truth_pairs(reports: &Path, truth: &Path) -> anyhow::Result<Vec<(PathBuf, PathBuf)>> {
    let text = std::fs::read_to_string(truth).with_context(|| format!("reading {}", truth.display()))?;
    if let Ok(m) = serde_json::from_str::<Manifest>(&text) {
        let base = truth.parent().unwrap_or(Path::new("."));
        return Ok(m.frames.into_iter().map(|e| (reports.join(e.run), base.join(e.truth))).collect());
    }
    serde_json::from_str::<SceneTruth>(&text)
        .with_context(|| format!("{} is neither a truth manifest nor a synth truth file", truth.display()))?;
    Ok(vec![(reports.to_path_buf(), truth.to_path_buf())])
}

/// Greedy matching in ranking order: each report region claims the unclaimed
/// truth region with the highest IoU (at least [`MATCH_IOU`]), or one whose
/// center it contains.
pub fn match_gains(report: &RunReport, truth: &[TruthRegion]) -> Vec<f64> {
    let mut claimed = vec![false; truth.len()];
    let mut gains = Vec::with_capacity(report.regions.len());
    for id in &report.ranking {
        let r = report.regions.iter().find(|r| r.id == *id).expect("ranking ids exist");
        let pred = RotatedBox::new(r.cx, r.cy, r.w, r.h, r.angle_deg);
        let best = truth
            .iter()
            .enumerate()
            .filter(|(i, _)| !claimed[*i])
            .map(|(i, t)| (i, iou(&pred, &t.bbox), pred.contains(t.bbox.center(), 0.5)))
            .filter(|(_, o, inside)| *o >= MATCH_IOU || *inside)
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
        match best {
            Some((i, _, _)) => {
                claimed[i] = true;
                gains.push(truth[i].relevance);
            }
            None => gains.push(0.0),
        }
    }
    gains
}

fn ndcg_against_truth(gains: &[f64], truth: &[TruthRegion]) -> f64 {
    let mut ideal: Vec<f64> = truth.iter().map(|t| t.relevance).collect();
    ideal.sort_by(|a, b| b.total_cmp(a));
    let idcg = dcg_at_k(&ideal, NDCG_K);
    if idcg == 0.0 {
        0.0
    } else {
        dcg_at_k(gains, NDCG_K) / idcg
    }
}

fn eval_frame(run_dir: &Path, truth_path: &Path) -> anyhow::Result<(FrameMetrics, Vec<FeatureRecord>, Vec<LabelRecord>)> {
    let report: RunReport = serde_json::from_str(
        &std::fs::read_to_string(run_dir.join("report.json"))
            .with_context(|| format!("reading report in {}", run_dir.display()))?,
    )?;
    let truth: SceneTruth = serde_json::from_str(&std::fs::read_to_string(truth_path)?)?;
    let truth_dir = truth_path.parent().unwrap_or(Path::new("."));
    let mut m = FrameMetrics {
        run: run_dir.display().to_string(),
        frame_id: report.frame_id.clone(),
        ..Default::default()
    };

    let fused = io::read_image(run_dir.join("fused.png"))?;
    let anomaly = io::read_mask(truth_dir.join(files::ANOMALY_MASK))?;
    if fused.dims() != (anomaly.width, anomaly.height) {
        bail!(
            "{}: fused map is {:?} but the anomaly mask is {:?}",
            run_dir.display(),
            fused.dims(),
            (anomaly.width, anomaly.height)
        );
    }
    let scores: Vec<f64> = fused.data().iter().map(|&v| v as f64).collect();
    if anomaly.data.iter().all(|&b| b) || !anomaly.data.iter().any(|&b| b) {
        m.warnings.push("anomaly mask has a single class; pixel metrics set to 0".into());
    } else {
        m.pixel_auroc = roc_auc(&scores, &anomaly.data)?;
        m.pixel_ap = pr_auc(&scores, &anomaly.data)?;
        m.pixel_fpr_at_recall = fpr_at_recall(&scores, &anomaly.data, FPR_RECALL)?;
    }
    if let Ok(mask) = io::read_mask(run_dir.join("mask.png")) {
        let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
        for (&p, &t) in mask.data.iter().zip(&anomaly.data) {
            match (p, t) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => tn += 1,
            }
        }
        m.mask = Some(confusion_stats(tp, fp, fn_, tn));
    }

    m.gains = match_gains(&report, &truth.regions);
    if report.regions.is_empty() {
        m.warnings.push("no predicted regions; ranking metrics set to 0".into());
    }
    m.ndcg_at_10 = ndcg_against_truth(&m.gains, &truth.regions);
    let curiosity: Vec<f64> = report.ranking.iter().map(|id| report.regions[*id as usize - 1].curiosity).collect();
    m.spearman = spearman(&curiosity, &m.gains).ok();
    m.kendall = kendall(&curiosity, &m.gains).ok();
    if report.regions.len() >= 2 && m.spearman.is_none() {
        m.warnings.push("rank correlations undefined (constant scores or gains)".into());
    }

    let depth_path = run_dir.join("depth.ard1");
    let truth_depth_path = truth_dir.join(files::DEPTH_TRUTH);
    if depth_path.exists() && truth_depth_path.exists() {
        let pred = read_ard1(&depth_path)?;
        let gt = read_ard1(&truth_depth_path)?;
        if pred.dims() == gt.dims() {
            let (d, d_hat): (Vec<f64>, Vec<f64>) = gt
                .data()
                .iter()
                .zip(pred.data())
                .filter(|(g, p)| **g > 0.0 && **p > 0.0)
                .map(|(g, p)| (*g as f64, *p as f64))
                .unzip();
            if !d.is_empty() {
                m.depth = Some(depth_errors(&d, &d_hat)?);
                let mut delta = [0.0; 3];
                for (k, t) in DELTA_THRESHOLDS.iter().enumerate() {
                    delta[k] = delta_accuracy(&d, &d_hat, *t)?;
                }
                m.depth_delta = Some(delta);
            }
        } else {
            m.warnings.push("depth output and truth differ in size; depth metrics skipped".into());
        }
    }

    let features = report
        .regions
        .iter()
        .map(|r| FeatureRecord {
            frame: report.frame_id.clone(),
            region_id: r.id,
            features: r.features,
        })
        .collect();
    let labels = report
        .ranking
        .iter()
        .zip(&m.gains)
        .map(|(id, g)| LabelRecord {
            frame: report.frame_id.clone(),
            region_id: *id,
            relevance: *g,
        })
        .collect();
    Ok((m, features, labels))
}

fn summarize(frames: &[FrameMetrics]) -> BTreeMap<String, f64> {
    let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    let mut add = |k: &str, v: Option<f64>| {
        if let Some(v) = v {
            let e = acc.entry(k.to_string()).or_insert((0.0, 0));
            e.0 += v;
            e.1 += 1;
        }
    };
    for f in frames {
        add("pixel_auroc", Some(f.pixel_auroc));
        add("pixel_ap", Some(f.pixel_ap));
        add("pixel_fpr_at_recall", Some(f.pixel_fpr_at_recall));
        add("mask_f1", f.mask.map(|s| s.f1));
        add("mask_fpr", f.mask.map(|s| s.fpr));
        add("ndcg_at_10", Some(f.ndcg_at_10));
        add("spearman", f.spearman);
        add("kendall", f.kendall);
        add("depth_rae", f.depth.map(|d| d.rae));
        add("depth_rmse", f.depth.map(|d| d.rmse));
        add("depth_delta1", f.depth_delta.map(|d| d[0]));
    }
    acc.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
}

/// Evaluates every run listed by `truth` (a manifest, or one synth truth file
/// when `reports` is a single run directory). With `export`, also writes
/// `features.json` and `labels.json` for `train`.
pub fn cmd_eval(reports: &Path, truth: &Path, export: Option<&Path>) -> anyhow::Result<EvalSummary> {
    let pairs = scene_truth_pairs(reports, truth)?;
    if pairs.is_empty() {
        bail!("truth manifest lists no frames");
    }
    let mut summary = EvalSummary::default();
    let mut all_features = Vec::new();
    let mut all_labels = Vec::new();
    for (run, t) in &pairs {
        let (m, f, l) = eval_frame(run, t).with_context(|| format!("evaluating {}", run.display()))?;
        summary
            .warnings
            .extend(m.warnings.iter().map(|w| format!("{}: {w}", m.run)));
        summary.frames.push(m);
        all_features.extend(f);
        all_labels.extend(l);
    }
    summary.mean = summarize(&summary.frames);
    if let Some(dir) = export {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("features.json"), serde_json::to_string_pretty(&all_features)? + "\n")?;
        std::fs::write(dir.join("labels.json"), serde_json::to_string_pretty(&all_labels)? + "\n")?;
    }
    Ok(summary)
}
