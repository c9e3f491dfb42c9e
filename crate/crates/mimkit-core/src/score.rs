//! Imitation scoring: encode actor and imitator, refine their motion
//! encodings against the frozen decoder, align with DTW, and average
//! clamped per-segment cosine similarities into one score.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamParams, OptimizerState, Scalar, Tape, Tensor};
use crate::dtw;
use crate::error::{Error, Result};
use crate::loss::reconstruction_loss;
use crate::net::{sequences_to_batch, ActionEncoding, Calibration, ModelBundle, SegmentNet, TIME_STRIDE};
use crate::pose::{normalize, segment_slice, PoseSequence};

/// Knobs of the scoring pipeline with their fixed defaults.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreOptions {
    /// Refinement iteration budget.
    pub refine_max_iters: usize,
    /// Refinement Adam learning rate.
    pub refine_lr: f64,
    /// Stop when the relative loss improvement over
    /// `refine_window` iterations falls below this.
    pub refine_tol: f64,
    pub refine_window: usize,
    /// Average per-frame cosines along the alignment path instead of
    /// one cosine over the flattened warped encodings.
    pub per_frame_cosine: bool,
}

impl Default for ScoreOptions {
    fn default() -> Self {
        ScoreOptions {
            refine_max_iters: 50,
            refine_lr: 1e-3,
            refine_tol: 1e-5,
            refine_window: 5,
            per_frame_cosine: false,
        }
    }
}

/// Cosine and its clamped form for one segment.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SegmentScore {
    pub cosine: f64,
    pub clamped: f64,
}

/// Full result of scoring one actor/imitator pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreReport {
    pub pair_id: String,
    pub actor_id: String,
    pub imitator_id: String,
    pub per_segment: BTreeMap<String, SegmentScore>,
    pub cami: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cami_normalized: Option<f64>,
    pub refinement_iters: usize,
    pub flags: Vec<String>,
}

/// Outcome of refining one motion encoding.
pub struct Refined<F> {
    pub encoding: ActionEncoding<F>,
    pub iterations: usize,
    pub final_loss: f64,
    /// Set when a non-finite loss forced an early return.
    pub warned: bool,
}

fn refine_loss_and_grad<F: Scalar>(
    net: &SegmentNet<F>,
    motion: &Tensor<F>,
    shape: &Tensor<F>,
    view: &Tensor<F>,
    target: &Tensor<F>,
    want_grad: bool,
) -> Result<(f64, Option<Tensor<F>>)> {
    let mut tape = Tape::new(false);
    let ids = net.insert_params(&mut tape);
    let m = if want_grad {
        tape.param(motion.clone())
    } else {
        tape.leaf(motion.clone())
    };
    let s = tape.leaf(shape.clone());
    let v = tape.leaf(view.clone());
    let t = tape.leaf(target.clone());
    let decoded = net.decode_on_tape(&mut tape, &ids, m, s, v, 0)?;
    let per_el = reconstruction_loss(&mut tape, decoded, t)?;
    let loss = tape.mean_all(per_el);
    let value = tape.value(loss).item().to_f64();
    if !want_grad {
        return Ok((value, None));
    }
    // The decoder parameters also receive gradients on this tape, but
    // only the motion leaf is read out; everything else stays frozen.
    let mut grads = tape.backward(loss)?;
    Ok((value, grads.take(m)))
}

/// Gradient descent on the motion map alone, minimizing reconstruction
/// error against the frozen decoder, shape, and view.
///
/// `target` is the normalized segment sequence the encoding came from.
/// Accepted iterates never increase the loss; the best visited motion
/// map is returned.
pub fn refine_motion<F: Scalar>(
    enc: &ActionEncoding<F>,
    target: &PoseSequence,
    net: &SegmentNet<F>,
    opts: &ScoreOptions,
) -> Result<Refined<F>> {
    let target_batch = sequences_to_batch::<F>(std::slice::from_ref(target))?;
    let mut adam = OptimizerState::<F>::new(
        AdamParams {
            base_lr: opts.refine_lr,
            weight_decay: 0.0,
            steps_per_decay: usize::MAX,
            ..AdamParams::default()
        },
        &[enc.motion.shape()],
    );

    let mut current = enc.motion.clone();
    let mut best = current.clone();
    let mut best_loss = f64::INFINITY;
    let mut history: Vec<f64> = Vec::new();
    let mut iterations = 0;
    let mut warned = false;

    for it in 0..opts.refine_max_iters {
        let (loss, grad) =
            refine_loss_and_grad(net, &current, &enc.shape, &enc.view, &target_batch, true)?;
        iterations = it + 1;
        if !loss.is_finite() {
            warned = true;
            current = best.clone();
            break;
        }
        if loss < best_loss {
            best_loss = loss;
            best = current.clone();
        } else if it > 0 {
            // A non-improving iterate: keep the best and stop.
            break;
        }
        history.push(loss);
        if history.len() > opts.refine_window {
            let before = history[history.len() - 1 - opts.refine_window];
            if before - loss < opts.refine_tol * before.max(1e-12) {
                break;
            }
        }
        let grad = grad.ok_or_else(|| Error::Graph("refinement lost its gradient".into()))?;
        adam.adam_step(&mut [&mut current], &[&grad])?;
    }
    let _ = current;

    Ok(Refined {
        encoding: ActionEncoding {
            motion: best,
            shape: enc.shape.clone(),
            view: enc.view.clone(),
            segment: enc.segment.clone(),
        },
        iterations,
        final_loss: best_loss,
        warned,
    })
}

fn motion_frames<F: Scalar>(m: &Tensor<F>) -> Vec<Vec<f64>> {
    let (c, b, t) = (m.channels(), m.batch(), m.time());
    debug_assert_eq!(b, 1);
    (0..t)
        .map(|tt| (0..c).map(|cc| m.data()[(cc * b) * t + tt].to_f64()).collect())
        .collect()
}

/// Cosine similarity between two motion encodings after DTW alignment
/// of their time axes.
pub fn motion_cosine<F: Scalar>(
    m_a: &Tensor<F>,
    m_b: &Tensor<F>,
    opts: &ScoreOptions,
) -> Result<f64> {
    if m_a.channels() != m_b.channels() {
        return Err(Error::dim("motion encodings disagree on channels"));
    }
    let fa = motion_frames(m_a);
    let fb = motion_frames(m_b);
    let path = dtw::dtw_align(&fa, &fb)?;
    let (wa, wb) = dtw::warp_to_path(&fa, &fb, &path)?;

    if opts.per_frame_cosine {
        let mut acc = 0.0;
        for (a, b) in wa.iter().zip(&wb) {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            if na == 0.0 || nb == 0.0 {
                return Err(Error::UndefinedSimilarity(
                    "zero-norm encoding frame".into(),
                ));
            }
            acc += dot / (na * nb);
        }
        return Ok(acc / wa.len() as f64);
    }

    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (a, b) in wa.iter().zip(&wb) {
        for (x, y) in a.iter().zip(b) {
            dot += x * y;
            na += x * x;
            nb += y * y;
        }
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::UndefinedSimilarity("zero-norm motion encoding".into()));
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

/// Per-segment refined cosines for one pair, in segmentation order.
/// Returns `(segment, cosine)` plus total refinement iterations and
/// any warning flags.
pub fn segment_cosines<F: Scalar>(
    bundle: &ModelBundle<F>,
    actor: &PoseSequence,
    imitator: &PoseSequence,
    opts: &ScoreOptions,
) -> Result<(Vec<(String, f64)>, usize, Vec<String>)> {
    actor.validate_min_frames()?;
    imitator.validate_min_frames()?;
    let actor_n = normalize(actor, &bundle.stats)?;
    let imit_n = normalize(imitator, &bundle.stats)?;
    let mut flags = Vec::new();
    let actor_c = actor_n.crop_to_multiple(TIME_STRIDE)?;
    let imit_c = imit_n.crop_to_multiple(TIME_STRIDE)?;
    if actor_c.frame_count() != actor_n.frame_count() {
        flags.push(format!(
            "actor cropped to {} frames",
            actor_c.frame_count()
        ));
    }
    if imit_c.frame_count() != imit_n.frame_count() {
        flags.push(format!(
            "imitator cropped to {} frames",
            imit_c.frame_count()
        ));
    }

    let mut cosines = Vec::with_capacity(bundle.segmentation.segments.len());
    let mut total_iters = 0;
    for (name, _) in &bundle.segmentation.segments {
        let net = bundle.net(name)?;
        let a_seg = segment_slice(&actor_c, &bundle.segmentation, name)?;
        let i_seg = segment_slice(&imit_c, &bundle.segmentation, name)?;
        let a_enc = net.encode(&a_seg)?;
        let i_enc = net.encode(&i_seg)?;
        let a_ref = refine_motion(&a_enc, &a_seg, net, opts)?;
        let i_ref = refine_motion(&i_enc, &i_seg, net, opts)?;
        total_iters += a_ref.iterations + i_ref.iterations;
        if a_ref.warned || i_ref.warned {
            flags.push(format!("non-finite refinement loss in {name}"));
        }
        let cosine = motion_cosine(&a_ref.encoding.motion, &i_ref.encoding.motion, opts)?;
        cosines.push((name.clone(), cosine));
    }
    Ok((cosines, total_iters, flags))
}

/// Aggregates per-segment cosines into the weighted score.
///
/// Segments outside `mask` (when given) are excluded and the remaining
/// weights renormalized to sum to one. Cosines are clamped at zero per
/// segment before weighting.
pub fn cami_from_cosines<F: Scalar>(
    bundle: &ModelBundle<F>,
    cosines: &[(String, f64)],
    mask: Option<&[String]>,
) -> Result<(f64, BTreeMap<String, SegmentScore>)> {
    let in_mask = |name: &str| -> bool {
        match mask {
            None => true,
            Some(names) => names.iter().any(|n| n == name),
        }
    };
    if let Some(names) = mask {
        for n in names {
            bundle.segmentation.joint_indices(n)?;
        }
    }
    let mut weight_sum = 0.0;
    for (name, _) in cosines {
        if in_mask(name) {
            weight_sum += bundle.segmentation.weight_of(name)?;
        }
    }
    if weight_sum <= 0.0 {
        return Err(Error::config("segment mask leaves zero total weight"));
    }
    let mut cami = 0.0;
    let mut per_segment = BTreeMap::new();
    for (name, cosine) in cosines {
        if !in_mask(name) {
            continue;
        }
        let clamped = cosine.max(0.0);
        cami += bundle.segmentation.weight_of(name)? / weight_sum * clamped;
        per_segment.insert(
            name.clone(),
            SegmentScore {
                cosine: *cosine,
                clamped,
            },
        );
    }
    Ok((cami, per_segment))
}

/// Scores how well `imitator` reproduces `actor`, segment by segment.
pub fn cami_score<F: Scalar>(
    actor: &PoseSequence,
    imitator: &PoseSequence,
    bundle: &ModelBundle<F>,
    mask: Option<&[String]>,
    opts: &ScoreOptions,
) -> Result<ScoreReport> {
    let (cosines, refinement_iters, flags) = segment_cosines(bundle, actor, imitator, opts)?;
    let (cami, per_segment) = cami_from_cosines(bundle, &cosines, mask)?;
    let cami_normalized = bundle.calibration.map(|c| apply_calibration(cami, c));
    Ok(ScoreReport {
        pair_id: format!("{}|{}", actor.id, imitator.id),
        actor_id: actor.id.clone(),
        imitator_id: imitator.id.clone(),
        per_segment,
        cami,
        cami_normalized,
        refinement_iters,
        flags,
    })
}

/// Debug facility: writes the accumulated DTW cost matrix of the two
/// refined motion-encoding series, one CSV per segment, into `dir`.
pub fn dump_dtw_matrices<F: Scalar>(
    bundle: &ModelBundle<F>,
    actor: &PoseSequence,
    imitator: &PoseSequence,
    opts: &ScoreOptions,
    dir: &std::path::Path,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    actor.validate_min_frames()?;
    imitator.validate_min_frames()?;
    let actor_n = normalize(actor, &bundle.stats)?.crop_to_multiple(TIME_STRIDE)?;
    let imit_n = normalize(imitator, &bundle.stats)?.crop_to_multiple(TIME_STRIDE)?;
    for (name, _) in &bundle.segmentation.segments {
        let net = bundle.net(name)?;
        let a_seg = segment_slice(&actor_n, &bundle.segmentation, name)?;
        let i_seg = segment_slice(&imit_n, &bundle.segmentation, name)?;
        let a_ref = refine_motion(&net.encode(&a_seg)?, &a_seg, net, opts)?;
        let i_ref = refine_motion(&net.encode(&i_seg)?, &i_seg, net, opts)?;
        let fa = motion_frames(&a_ref.encoding.motion);
        let fb = motion_frames(&i_ref.encoding.motion);
        let file = std::fs::File::create(dir.join(format!("{name}.csv")))?;
        dtw::write_cost_matrix_csv(&fa, &fb, std::io::BufWriter::new(file))?;
    }
    Ok(())
}

/// Min-max calibration over a cohort of scores.
pub fn calibrate(scores: &[f64]) -> Result<(Calibration, Vec<f64>)> {
    if scores.len() < 2 {
        return Err(Error::contract("calibration needs at least two scores"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::contract("calibration over non-finite scores"));
    }
    let min = scores.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == min {
        return Err(Error::DegenerateCalibration(format!(
            "all {} scores equal {min}",
            scores.len()
        )));
    }
    let cal = Calibration { min, max };
    let normalized = scores.iter().map(|&s| apply_calibration(s, cal)).collect();
    Ok((cal, normalized))
}

/// Maps a score through a stored calibration, clipping out-of-cohort
/// values into `[0, 1]`.
pub fn apply_calibration(score: f64, cal: Calibration) -> f64 {
    ((score - cal.min) / (cal.max - cal.min)).clamp(0.0, 1.0)
}
