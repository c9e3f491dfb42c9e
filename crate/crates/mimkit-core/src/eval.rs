//! Cohort evaluation: ROC curves, AUC (two independent routes),
//! product-moment and rank correlations, distribution summaries, and
//! the experiment driver crossing bundles x cohorts x segment masks.

use std::io::Write;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::load_imitation_set;
use crate::net::ModelBundle;
use crate::score::{cami_from_cosines, segment_cosines, ScoreOptions};
use crate::synth::GroupLabel;

/// Binary class label of a scored pair. `Positive` is the group the
/// classifier should flag (the weaker-imitation group in cohort runs).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Label {
    Positive,
    Negative,
}

/// A score with its ground-truth label.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabeledScore {
    pub pair_id: String,
    pub score: f64,
    pub label: Label,
}

impl LabeledScore {
    pub fn new(pair_id: impl Into<String>, score: f64, label: Label) -> Self {
        LabeledScore {
            pair_id: pair_id.into(),
            score,
            label,
        }
    }
}

/// Which side of the threshold counts as predicted-positive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Orientation {
    /// Scores at or below the threshold are predicted positive.
    LowScorePositive,
    /// Scores at or above the threshold are predicted positive.
    HighScorePositive,
}

/// ROC sweep result.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RocResult {
    pub thresholds: Vec<f64>,
    pub fpr: Vec<f64>,
    pub tpr: Vec<f64>,
    /// Trapezoidal area under the (fpr, tpr) curve.
    pub auc: f64,
}

fn split_counts(scores: &[LabeledScore]) -> Result<(usize, usize)> {
    let n_pos = scores.iter().filter(|s| s.label == Label::Positive).count();
    let n_neg = scores.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::contract(
            "roc_auc needs at least one score from each class",
        ));
    }
    if scores.iter().any(|s| !s.score.is_finite()) {
        return Err(Error::contract("roc_auc got a non-finite score"));
    }
    Ok((n_pos, n_neg))
}

/// ROC curve by threshold sweep over the unique scores, with the AUC
/// integrated trapezoidally.
pub fn roc_auc(scores: &[LabeledScore], orientation: Orientation) -> Result<RocResult> {
    let (n_pos, n_neg) = split_counts(scores)?;

    // Sort so that predicted-positive sets grow as the sweep proceeds.
    let mut sorted: Vec<&LabeledScore> = scores.iter().collect();
    match orientation {
        Orientation::LowScorePositive => {
            sorted.sort_by(|a, b| a.score.partial_cmp(&b.score).expect("finite scores"));
        }
        Orientation::HighScorePositive => {
            sorted.sort_by(|a, b| b.score.partial_cmp(&a.score).expect("finite scores"));
        }
    }

    let mut thresholds = Vec::new();
    let mut fpr = vec![0.0];
    let mut tpr = vec![0.0];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut idx = 0;
    while idx < sorted.len() {
        let threshold = sorted[idx].score;
        // Consume the whole tie group at once.
        while idx < sorted.len() && sorted[idx].score == threshold {
            match sorted[idx].label {
                Label::Positive => tp += 1,
                Label::Negative => fp += 1,
            }
            idx += 1;
        }
        thresholds.push(threshold);
        tpr.push(tp as f64 / n_pos as f64);
        fpr.push(fp as f64 / n_neg as f64);
    }

    let mut auc = 0.0;
    for i in 1..fpr.len() {
        auc += (fpr[i] - fpr[i - 1]) * (tpr[i] + tpr[i - 1]) / 2.0;
    }
    Ok(RocResult {
        thresholds,
        fpr,
        tpr,
        auc,
    })
}

/// AUC by Mann-Whitney pair counting: the fraction of
/// (positive, negative) pairs ranked correctly, ties counting one half.
///
/// Independent of [`roc_auc`]; the two must agree to within 1e-9.
pub fn auc_mann_whitney(scores: &[LabeledScore], orientation: Orientation) -> Result<f64> {
    let (n_pos, n_neg) = split_counts(scores)?;
    let mut correct = 0.0;
    for p in scores.iter().filter(|s| s.label == Label::Positive) {
        for n in scores.iter().filter(|s| s.label == Label::Negative) {
            let ranked = match orientation {
                Orientation::LowScorePositive => p.score < n.score,
                Orientation::HighScorePositive => p.score > n.score,
            };
            if ranked {
                correct += 1.0;
            } else if p.score == n.score {
                correct += 0.5;
            }
        }
    }
    Ok(correct / (n_pos * n_neg) as f64)
}

/// Pearson product-moment correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::dim(format!(
            "pearson on lengths {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 3 {
        return Err(Error::contract("pearson needs at least 3 samples"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (&xi, &yi) in x.iter().zip(y) {
        cov += (xi - mx) * (yi - my);
        vx += (xi - mx) * (xi - mx);
        vy += (yi - my) * (yi - my);
    }
    if vx == 0.0 || vy == 0.0 {
        return Err(Error::contract("pearson undefined for zero variance"));
    }
    Ok(cov / (vx.sqrt() * vy.sqrt()))
}

/// Fractional ranks with ties assigned the average of their positions.
fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).expect("finite values"));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        // Positions i..=j share the value; average their 1-based ranks.
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation: Pearson over average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::dim(format!(
            "spearman on lengths {} vs {}",
            x.len(),
            y.len()
        )));
    }
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Quartiles, mean and standard deviation of one group's scores.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupStats {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

/// Distribution summary of a slice of scores (empty slices disallowed).
pub fn group_stats(values: &[f64]) -> Result<GroupStats> {
    if values.is_empty() {
        return Err(Error::contract("group_stats on empty group"));
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let quantile = |q: f64| -> f64 {
        // Linear interpolation between closest ranks.
        let pos = q * (n - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        if lo == hi {
            sorted[lo]
        } else {
            sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
        }
    };
    Ok(GroupStats {
        n,
        mean,
        sd: var.sqrt(),
        q1: quantile(0.25),
        median: quantile(0.5),
        q3: quantile(0.75),
    })
}

/// Median of a non-empty slice.
pub fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}


/// Disentangled encodings of one labeled sequence, flattened and
/// concatenated across all five segments.
#[derive(Debug, Clone)]
pub struct EncodedSequence {
    pub motion: Vec<f64>,
    pub shape: Vec<f64>,
    pub view: Vec<f64>,
    pub motion_class: usize,
    pub skeleton_id: String,
    pub viewpoint_id: usize,
}

/// Encodes labeled members (normalized, cropped, segment-sliced) for
/// retrieval checks.
pub fn encode_labeled(
    bundle: &ModelBundle<f32>,
    members: &[crate::synth::TupleMember],
) -> Result<Vec<EncodedSequence>> {
    use crate::pose::{normalize, segment_slice};
    members
        .par_iter()
        .map(|member| {
            let seq = normalize(&member.seq, &bundle.stats)?
                .crop_to_multiple(crate::net::TIME_STRIDE)?;
            let mut motion = Vec::new();
            let mut shape = Vec::new();
            let mut view = Vec::new();
            for (name, _) in &bundle.segmentation.segments {
                let net = bundle.net(name)?;
                let enc = net.encode(&segment_slice(&seq, &bundle.segmentation, name)?)?;
                motion.extend(enc.motion.data().iter().map(|v| *v as f64));
                shape.extend(enc.shape.data().iter().map(|v| *v as f64));
                view.extend(enc.view.data().iter().map(|v| *v as f64));
            }
            Ok(EncodedSequence {
                motion,
                shape,
                view,
                motion_class: member.motion_class,
                skeleton_id: member.skeleton_id.clone(),
                viewpoint_id: member.viewpoint_id,
            })
        })
        .collect()
}

/// Leave-one-out nearest-neighbour accuracy in Euclidean space.
pub fn nn_retrieval_accuracy<L: PartialEq>(items: &[(Vec<f64>, L)]) -> f64 {
    if items.len() < 2 {
        return 0.0;
    }
    let mut hits = 0usize;
    for (i, (query, label)) in items.iter().enumerate() {
        let mut best = f64::INFINITY;
        let mut best_j = usize::MAX;
        for (j, (other, _)) in items.iter().enumerate() {
            if i == j {
                continue;
            }
            let d: f64 = query
                .iter()
                .zip(other)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            if d < best {
                best = d;
                best_j = j;
            }
        }
        if items[best_j].1 == *label {
            hits += 1;
        }
    }
    hits as f64 / items.len() as f64
}

/// Mean reconstruction error of full sequences through the trained
/// autoencoder, averaged per joint over all segments.
pub fn heldout_reconstruction_mse(
    bundle: &ModelBundle<f32>,
    seqs: &[crate::pose::PoseSequence],
) -> Result<f64> {
    use crate::loss::reconstruction_value;
    use crate::pose::{normalize, segment_slice};
    let per_seq: Vec<f64> = seqs
        .par_iter()
        .map(|raw| {
            let seq = normalize(raw, &bundle.stats)?.crop_to_multiple(crate::net::TIME_STRIDE)?;
            let mut total = 0.0;
            let mut joints = 0usize;
            for (name, idx) in &bundle.segmentation.segments {
                let net = bundle.net(name)?;
                let seg = segment_slice(&seq, &bundle.segmentation, name)?;
                let enc = net.encode(&seg)?;
                let rec = net.decode(&enc, seq.fps, "recon")?;
                total += reconstruction_value(&seg, &rec)? * idx.len() as f64;
                joints += idx.len();
            }
            Ok(total / joints as f64)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_seq.iter().sum::<f64>() / per_seq.len().max(1) as f64)
}

/// A named segment mask. `segments: None` means the whole body.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MaskSpec {
    pub name: String,
    pub segments: Option<Vec<String>>,
}

/// Resolves a mask name: `whole`, `upper_with_torso`,
/// `upper_without_torso`, or segment names joined with `+`.
pub fn parse_mask(name: &str) -> Result<MaskSpec> {
    let segments = match name {
        "whole" => None,
        "upper_with_torso" => Some(vec![
            "left_arm".to_string(),
            "right_arm".to_string(),
            "torso".to_string(),
        ]),
        "upper_without_torso" => Some(vec!["left_arm".to_string(), "right_arm".to_string()]),
        other => Some(other.split('+').map(|s| s.trim().to_string()).collect()),
    };
    Ok(MaskSpec {
        name: name.to_string(),
        segments,
    })
}

/// Inputs of one experiment run.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    /// Labeled bundle checkpoint stems.
    pub bundles: Vec<(String, PathBuf)>,
    /// Labeled cohort manifests.
    pub cohorts: Vec<(String, PathBuf)>,
    pub masks: Vec<MaskSpec>,
    pub score: ScoreOptions,
}

/// Scores of one pair inside a cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoredPair {
    pub pair_id: String,
    pub cami: f64,
    pub degradation: f64,
    pub group: GroupLabel,
}

/// One (bundle, cohort, mask) cell of the experiment grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellResult {
    pub cell_id: String,
    pub bundle: String,
    pub cohort: String,
    pub mask: String,
    pub auc: f64,
    pub n_pos: usize,
    pub n_neg: usize,
    pub poor: GroupStats,
    pub good: GroupStats,
    pub pearson_vs_degradation: f64,
    pub spearman_vs_degradation: f64,
    pub roc: RocResult,
    pub scores: Vec<ScoredPair>,
}

/// All cells of one experiment run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub cells: Vec<CellResult>,
}

/// Runs the cross product of bundles, cohorts, and masks.
///
/// Per (bundle, cohort) the expensive per-segment cosines are computed
/// once; masks only re-aggregate them. The trapezoidal AUC is checked
/// against Mann-Whitney pair counting to 1e-9 in every cell.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    if config.bundles.is_empty() || config.cohorts.is_empty() || config.masks.is_empty() {
        return Err(Error::Manifest(
            "experiment needs at least one bundle, cohort, and mask".into(),
        ));
    }
    let mut cells = Vec::new();
    for (bundle_label, stem) in &config.bundles {
        let bundle = ModelBundle::<f32>::load(stem)?;
        for (cohort_label, manifest_path) in &config.cohorts {
            let (_, pairs) = load_imitation_set(manifest_path)?;
            if pairs.is_empty() {
                return Err(Error::Manifest(format!("cohort {cohort_label} is empty")));
            }
            let cosines: Vec<Vec<(String, f64)>> = pairs
                .par_iter()
                .map(|p| {
                    segment_cosines(&bundle, &p.actor, &p.imitation, &config.score)
                        .map(|(c, _, _)| c)
                })
                .collect::<Result<Vec<_>>>()?;

            for mask in &config.masks {
                let mut scores = Vec::with_capacity(pairs.len());
                for (pair, cos) in pairs.iter().zip(&cosines) {
                    let (cami, _) =
                        cami_from_cosines(&bundle, cos, mask.segments.as_deref())?;
                    scores.push(ScoredPair {
                        pair_id: pair.pair_id.clone(),
                        cami,
                        degradation: pair.degradation,
                        group: pair.group_label,
                    });
                }
                cells.push(evaluate_cell(bundle_label, cohort_label, &mask.name, scores)?);
            }
        }
    }
    Ok(ExperimentReport { cells })
}

/// Computes the metrics of one cell from its scored pairs.
pub fn evaluate_cell(
    bundle: &str,
    cohort: &str,
    mask: &str,
    scores: Vec<ScoredPair>,
) -> Result<CellResult> {
    let labeled: Vec<LabeledScore> = scores
        .iter()
        .map(|s| {
            LabeledScore::new(
                s.pair_id.clone(),
                s.cami,
                if s.group == GroupLabel::Poor {
                    Label::Positive
                } else {
                    Label::Negative
                },
            )
        })
        .collect();
    let roc = roc_auc(&labeled, Orientation::LowScorePositive)?;
    let mw = auc_mann_whitney(&labeled, Orientation::LowScorePositive)?;
    if (roc.auc - mw).abs() > 1e-9 {
        return Err(Error::contract(format!(
            "AUC routes disagree: trapezoid {} vs pair-count {mw}",
            roc.auc
        )));
    }
    let poor_scores: Vec<f64> = scores
        .iter()
        .filter(|s| s.group == GroupLabel::Poor)
        .map(|s| s.cami)
        .collect();
    let good_scores: Vec<f64> = scores
        .iter()
        .filter(|s| s.group == GroupLabel::Good)
        .map(|s| s.cami)
        .collect();
    let camis: Vec<f64> = scores.iter().map(|s| s.cami).collect();
    let degradations: Vec<f64> = scores.iter().map(|s| s.degradation).collect();
    Ok(CellResult {
        cell_id: format!("{bundle}/{cohort}/{mask}"),
        bundle: bundle.to_string(),
        cohort: cohort.to_string(),
        mask: mask.to_string(),
        auc: roc.auc,
        n_pos: poor_scores.len(),
        n_neg: good_scores.len(),
        poor: group_stats(&poor_scores)?,
        good: group_stats(&good_scores)?,
        pearson_vs_degradation: pearson(&camis, &degradations)?,
        spearman_vs_degradation: spearman(&camis, &degradations)?,
        roc,
        scores,
    })
}

/// Writes `summary.csv`, `roc_points.csv`, `correlations.csv`, and
/// `report.json` into `dir`.
pub fn write_reports(report: &ExperimentReport, dir: &std::path::Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;

    let mut summary = Vec::new();
    writeln!(
        summary,
        "cell_id,bundle,cohort,mask,auc,n_pos,n_neg,poor_mean,poor_sd,poor_q1,poor_median,poor_q3,good_mean,good_sd,good_q1,good_median,good_q3"
    )?;
    for c in &report.cells {
        writeln!(
            summary,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            c.cell_id,
            c.bundle,
            c.cohort,
            c.mask,
            c.auc,
            c.n_pos,
            c.n_neg,
            c.poor.mean,
            c.poor.sd,
            c.poor.q1,
            c.poor.median,
            c.poor.q3,
            c.good.mean,
            c.good.sd,
            c.good.q1,
            c.good.median,
            c.good.q3
        )?;
    }
    std::fs::write(dir.join("summary.csv"), summary)?;

    let mut roc_points = Vec::new();
    writeln!(roc_points, "cell_id,threshold,fpr,tpr")?;
    for c in &report.cells {
        // The sweep prepends the empty-prediction point; align rows by
        // pairing threshold i with curve point i + 1.
        for (i, t) in c.roc.thresholds.iter().enumerate() {
            writeln!(
                roc_points,
                "{},{},{},{}",
                c.cell_id,
                t,
                c.roc.fpr[i + 1],
                c.roc.tpr[i + 1]
            )?;
        }
    }
    std::fs::write(dir.join("roc_points.csv"), roc_points)?;

    let mut correlations = Vec::new();
    writeln!(correlations, "cell_id,pearson_vs_degradation,spearman_vs_degradation")?;
    for c in &report.cells {
        writeln!(
            correlations,
            "{},{},{}",
            c.cell_id, c.pearson_vs_degradation, c.spearman_vs_degradation
        )?;
    }
    std::fs::write(dir.join("correlations.csv"), correlations)?;

    let json = serde_json::to_vec_pretty(report)?;
    std::fs::write(dir.join("report.json"), json)?;
    Ok(())
}
