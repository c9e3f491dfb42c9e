//! Mixed-batch training over synthetic tuples and imitation pairs, and
//! cross-validated segment-weight fitting.
//!
//! Every batch holds `batch_size / 2` tuples and as many pairs. The
//! synthetic side drives the disentanglement triplet/quadruplet losses
//! plus anchor reconstruction; the real side drives reconstruction and
//! the nuanced motion loss. All randomness is derived statelessly from
//! `(seed, step)` so a resumed run replays the exact remaining steps.

use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{
    load_checkpoint, save_checkpoint, AdamParams, NodeId, OptimizerState, Tape, Tensor,
};
use crate::error::{Error, Result};
use crate::eval::{auc_mann_whitney, Label, LabeledScore, Orientation};
use crate::loss::{
    self, motion_quadruplet, nuanced_loss, reconstruction_loss, shape_loss, variation_score,
    viewpoint_loss, LossBreakdown, LossWeights,
};
use crate::net::{sequences_to_batch, ModelBundle, SegmentNet};
use crate::pose::{augment, normalize, segment_slice, BodySegmentation, NormalizationStats, PoseSequence};
use crate::score::{segment_cosines, ScoreOptions};
use crate::synth::{derive_seed, GroupLabel, ImitationPair, MemberKey, TrainingTuple};

/// Which loss terms participate in training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    /// Synthetic and real losses, all terms.
    Full,
    /// Real data without the nuanced motion term.
    NoNuanced,
    /// Synthetic losses only.
    SynOnly,
}

impl AblationMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            AblationMode::Full => "full",
            AblationMode::NoNuanced => "no_nuanced",
            AblationMode::SynOnly => "syn_only",
        }
    }

    pub fn parse(s: &str) -> Result<AblationMode> {
        match s {
            "full" => Ok(AblationMode::Full),
            "no_nuanced" => Ok(AblationMode::NoNuanced),
            "syn_only" => Ok(AblationMode::SynOnly),
            other => Err(Error::config(format!("unknown ablation mode {other}"))),
        }
    }

    /// The mode is nothing more than a weight substitution.
    pub fn effective_weights(&self, base: &LossWeights) -> LossWeights {
        let mut w = base.clone();
        match self {
            AblationMode::Full => {}
            AblationMode::NoNuanced => w.lambda_nuanced = 0.0,
            AblationMode::SynOnly => w.lambda_real = 0.0,
        }
        w
    }
}

/// Training hyperparameters. Desk-scale defaults; the published-scale
/// values (210 epochs, batch 2048) remain reachable through config.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub rng_seed: u64,
    pub weights: LossWeights,
    pub ablation: AblationMode,
    /// Epochs between checkpoints (0 disables periodic checkpoints).
    pub checkpoint_interval: usize,
    pub base_lr: f64,
    pub lr_decay_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub augment: bool,
    /// Checkpoint stem to continue from (expects `<stem>` and
    /// `<stem>.opt` checkpoints).
    pub resume: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 64,
            rng_seed: 7,
            weights: LossWeights::default(),
            ablation: AblationMode::Full,
            checkpoint_interval: 10,
            base_lr: 1e-3,
            lr_decay_rate: 0.98,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            augment: true,
            resume: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 || self.batch_size % 2 != 0 {
            return Err(Error::config("batch_size must be even (half tuples, half pairs)"));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs must be positive"));
        }
        self.weights.validate()?;
        Ok(())
    }
}

/// In-memory training corpus.
#[derive(Debug, Clone)]
pub struct TrainDataset {
    pub tuples: Vec<TrainingTuple>,
    pub pairs: Vec<ImitationPair>,
    /// Fingerprint of the generator config both manifests came from.
    pub fingerprint: String,
}

/// One row of the training log.
#[derive(Debug, Clone)]
pub struct LogRow {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub losses: LossBreakdown,
}

/// Writes the training log as CSV.
pub fn write_training_log<W: Write>(rows: &[LogRow], mut out: W) -> Result<()> {
    writeln!(
        out,
        "step,epoch,lr,shape,viewpoint,motion,nuanced,rec_syn,rec_real,total_syn,total_real,total"
    )?;
    for r in rows {
        let b = &r.losses;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.step,
            r.epoch,
            r.lr,
            b.shape,
            b.viewpoint,
            b.motion,
            b.nuanced,
            b.rec_syn,
            b.rec_real,
            b.total_syn,
            b.total_real,
            b.total
        )?;
    }
    Ok(())
}

/// Tuples per batch (the other half of the batch is pairs).
fn tuples_per_batch(batch_size: usize) -> usize {
    batch_size / 2
}

fn steps_per_epoch(n_tuples: usize, batch_size: usize) -> usize {
    n_tuples.div_ceil(tuples_per_batch(batch_size))
}

/// Seeded permutation of `0..n`.
fn permutation(n: usize, seed: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    order
}

/// Tuple indices of one step, from the per-epoch shuffled order.
fn tuple_indices(step: usize, n_tuples: usize, batch_size: usize, seed: u64) -> Vec<usize> {
    let spe = steps_per_epoch(n_tuples, batch_size);
    let epoch = step / spe;
    let pos = (step % spe) * tuples_per_batch(batch_size);
    let order = permutation(n_tuples, derive_seed(seed, "tuple-epoch", epoch as u64));
    let take = tuples_per_batch(batch_size).min(n_tuples - pos);
    order[pos..pos + take].to_vec()
}

/// Number of pairs consumed by all steps before `step`.
fn pairs_consumed_before(step: usize, n_tuples: usize, batch_size: usize) -> usize {
    let spe = steps_per_epoch(n_tuples, batch_size);
    let full_epochs = step / spe;
    let into_epoch = step % spe;
    let tpb = tuples_per_batch(batch_size);
    let per_epoch = n_tuples; // pairs mirror tuple counts batch by batch
    full_epochs * per_epoch + (into_epoch * tpb).min(n_tuples)
}

/// Pair indices of one step; pairs cycle independently of epochs
/// through reshuffled passes.
fn pair_indices(step: usize, count: usize, n_pairs: usize, n_tuples: usize, batch_size: usize, seed: u64) -> Vec<usize> {
    let start = pairs_consumed_before(step, n_tuples, batch_size);
    (0..count)
        .map(|k| {
            let idx = start + k;
            let pass = idx / n_pairs;
            let pos = idx % n_pairs;
            permutation(n_pairs, derive_seed(seed, "pair-pass", pass as u64))[pos]
        })
        .collect()
}

struct PreparedTuple {
    /// Normalized (and possibly augmented) members in `MemberKey::ALL`
    /// order, full-body.
    members: Vec<PoseSequence>,
    var_score: f64,
}

struct PreparedPair {
    actor: PoseSequence,
    imitation: PoseSequence,
}

/// Gradient and logged terms of one (segment, batch-side) task.
struct SideStep {
    grads: Vec<Tensor<f32>>,
    shape: f64,
    viewpoint: f64,
    motion: f64,
    nuanced: f64,
    rec_syn: f64,
    rec_real: f64,
}

impl SideStep {
    /// Empty accumulator with zero gradients of the same shapes.
    fn clone_shell(&self) -> SideStep {
        SideStep {
            grads: self.grads.iter().map(|g| Tensor::zeros(g.shape())).collect(),
            shape: 0.0,
            viewpoint: 0.0,
            motion: 0.0,
            nuanced: 0.0,
            rec_syn: 0.0,
            rec_real: 0.0,
        }
    }
}

fn zero_side(net: &SegmentNet<f32>) -> SideStep {
    SideStep {
        grads: net
            .params
            .iter()
            .map(|p| Tensor::zeros(p.tensor.shape()))
            .collect(),
        shape: 0.0,
        viewpoint: 0.0,
        motion: 0.0,
        nuanced: 0.0,
        rec_syn: 0.0,
        rec_real: 0.0,
    }
}

/// Builds the synthetic-side graph for one segment and returns
/// gradients plus logged term values.
#[allow(clippy::too_many_arguments)]
fn segment_syn_step(
    net: &SegmentNet<f32>,
    segmentation: &BodySegmentation,
    tuples: &[PreparedTuple],
    weights: &LossWeights,
    step: usize,
    seg_index: usize,
    seed: u64,
) -> Result<SideStep> {
    let name = &net.segment;
    let n = tuples.len();
    let mut out = zero_side(net);
    let grads = &mut out.grads;

    let slice_of = |seq: &PoseSequence| segment_slice(seq, segmentation, name);

    let mut shape_term = 0.0;
    let mut view_term = 0.0;
    let mut motion_term = 0.0;
    let mut rec_syn_term = 0.0;
    if n > 0 {
        // Member groups per encoder, anchors first so contiguous
        // element slices select the loss roles.
        let motion_keys = [
            MemberKey::M1S1V1,
            MemberKey::M1S2V2,
            MemberKey::M2S2V2,
            MemberKey::M3S1V1,
        ];
        let body_keys = [MemberKey::M1S1V1, MemberKey::M2S1V2, MemberKey::M1S2V1];
        let view_keys = [MemberKey::M1S1V1, MemberKey::M2S2V1, MemberKey::M1S1V2];

        let gather = |keys: &[MemberKey]| -> Result<Vec<PoseSequence>> {
            let mut seqs = Vec::with_capacity(keys.len() * n);
            for &key in keys {
                let slot = MemberKey::ALL.iter().position(|k| *k == key).expect("known key");
                for t in tuples {
                    seqs.push(slice_of(&t.members[slot])?);
                }
            }
            Ok(seqs)
        };

        let mut tape: Tape<f32> = Tape::new(true);
        let ids = net.insert_params(&mut tape);
        let x_m = tape.leaf(sequences_to_batch(&gather(&motion_keys)?)?);
        let x_b = tape.leaf(sequences_to_batch(&gather(&body_keys)?)?);
        let x_v = tape.leaf(sequences_to_batch(&gather(&view_keys)?)?);

        let motion_out = net.motion_encoder_on_tape(&mut tape, &ids, x_m)?;
        let shape_out = net.body_encoder_on_tape(&mut tape, &ids, x_b)?;
        let view_out = net.view_encoder_on_tape(&mut tape, &ids, x_v)?;

        let m_anchor = tape.slice_elements(motion_out, 0, n)?;
        let m_pos = tape.slice_elements(motion_out, n, n)?;
        let m_semi = tape.slice_elements(motion_out, 2 * n, n)?;
        let m_neg = tape.slice_elements(motion_out, 3 * n, n)?;
        let s_anchor = tape.slice_elements(shape_out, 0, n)?;
        let s_pos = tape.slice_elements(shape_out, n, n)?;
        let s_neg = tape.slice_elements(shape_out, 2 * n, n)?;
        let v_anchor = tape.slice_elements(view_out, 0, n)?;
        let v_pos = tape.slice_elements(view_out, n, n)?;
        let v_neg = tape.slice_elements(view_out, 2 * n, n)?;

        let shape_l = shape_loss(&mut tape, s_anchor, s_pos, s_neg, weights.alpha)?;
        let view_l = viewpoint_loss(&mut tape, v_anchor, v_pos, v_neg, weights.alpha)?;
        let vars: Vec<f64> = tuples.iter().map(|t| t.var_score).collect();
        let motion_l = motion_quadruplet(&mut tape, m_anchor, m_pos, m_semi, m_neg, &vars, weights)?;

        // Anchor reconstruction.
        let anchor_target = tape.leaf(sequences_to_batch(&gather(&[MemberKey::M1S1V1])?)?);
        let dropout_seed = derive_seed(seed, "dropout-syn", (step * 8 + seg_index) as u64);
        let decoded = net.decode_on_tape(&mut tape, &ids, m_anchor, s_anchor, v_anchor, dropout_seed)?;
        let rec_l = reconstruction_loss(&mut tape, decoded, anchor_target)?;

        let dis_sum = tape.add(shape_l, view_l)?;
        let dis_sum = tape.add(dis_sum, motion_l)?;
        let dis_w = tape.scale(dis_sum, weights.lambda_dis);
        let rec_w = tape.scale(rec_l, weights.lambda_rec);
        let total_el = tape.add(dis_w, rec_w)?;
        let total_mean = tape.mean_all(total_el);
        let loss = tape.scale(total_mean, weights.lambda_syn);

        shape_term = mean_value(&tape, shape_l);
        view_term = mean_value(&tape, view_l);
        motion_term = mean_value(&tape, motion_l);
        rec_syn_term = mean_value(&tape, rec_l);

        let mut g = tape.backward(loss)?;
        for (gi, id) in grads.iter_mut().zip(&ids) {
            if let Some(t) = g.take(*id) {
                add_into(gi, &t);
            }
        }
    }

    out.shape = shape_term;
    out.viewpoint = view_term;
    out.motion = motion_term;
    out.rec_syn = rec_syn_term;
    Ok(out)
}

/// Builds the real-data graph for one segment.
#[allow(clippy::too_many_arguments)]
fn segment_real_step(
    net: &SegmentNet<f32>,
    segmentation: &BodySegmentation,
    pairs: &[PreparedPair],
    weights: &LossWeights,
    step: usize,
    seg_index: usize,
    seed: u64,
) -> Result<SideStep> {
    let name = &net.segment;
    let mut out = zero_side(net);
    let grads = &mut out.grads;
    let slice_of = |seq: &PoseSequence| segment_slice(seq, segmentation, name);

    let mut nuanced_term = 0.0;
    let mut rec_real_term = 0.0;
    if weights.lambda_real > 0.0 && !pairs.is_empty() {
        let m = pairs.len();
        let mut seqs = Vec::with_capacity(2 * m);
        for p in pairs {
            seqs.push(slice_of(&p.actor)?);
        }
        for p in pairs {
            seqs.push(slice_of(&p.imitation)?);
        }
        // DTW margins are constants per pair for this segment.
        let margins: Vec<f64> = (0..m)
            .map(|i| loss::dtw_margin(&seqs[i], &seqs[m + i]))
            .collect::<Result<_>>()?;

        let mut tape: Tape<f32> = Tape::new(true);
        let ids = net.insert_params(&mut tape);
        let x = tape.leaf(sequences_to_batch(&seqs)?);
        let enc = net.encode_on_tape(&mut tape, &ids, x)?;
        let m_actor = tape.slice_elements(enc.motion, 0, m)?;
        let m_imit = tape.slice_elements(enc.motion, m, m)?;

        let dropout_seed = derive_seed(seed, "dropout-real", (step * 8 + seg_index) as u64);
        let decoded = net.decode_on_tape(&mut tape, &ids, enc.motion, enc.shape, enc.view, dropout_seed)?;
        let rec_l = reconstruction_loss(&mut tape, decoded, x)?;
        let rec_mean = tape.mean_all(rec_l);

        let nuanced_l = if weights.lambda_nuanced > 0.0 {
            let l = nuanced_loss(&mut tape, m_actor, m_imit, &margins, weights.delta)?;
            Some(tape.mean_all(l))
        } else {
            None
        };

        let rec_w = tape.scale(rec_mean, weights.lambda_rec);
        let total = match nuanced_l {
            Some(nl) => {
                let nw = tape.scale(nl, weights.lambda_nuanced);
                tape.add(rec_w, nw)?
            }
            None => rec_w,
        };
        let loss = tape.scale(total, weights.lambda_real);

        rec_real_term = tape.value(rec_mean).item() as f64;
        nuanced_term = nuanced_l.map(|nl| tape.value(nl).item() as f64).unwrap_or(0.0);

        let mut g = tape.backward(loss)?;
        for (gi, id) in grads.iter_mut().zip(&ids) {
            if let Some(t) = g.take(*id) {
                add_into(gi, &t);
            }
        }
    }

    out.nuanced = nuanced_term;
    out.rec_real = rec_real_term;
    Ok(out)
}

fn mean_value(tape: &Tape<f32>, per_element: NodeId) -> f64 {
    let v = tape.value(per_element);
    v.data().iter().map(|x| *x as f64).sum::<f64>() / v.len().max(1) as f64
}

fn add_into(acc: &mut Tensor<f32>, other: &Tensor<f32>) {
    for (a, b) in acc.data_mut().iter_mut().zip(other.data()) {
        *a += b;
    }
}

/// Prepares (augments + normalizes) the sequences of one step.
fn prepare_step(
    dataset: &TrainDataset,
    stats: &NormalizationStats,
    config: &TrainConfig,
    step: usize,
) -> Result<(Vec<PreparedTuple>, Vec<PreparedPair>)> {
    let t_idx = tuple_indices(step, dataset.tuples.len(), config.batch_size, config.rng_seed);
    let p_count = t_idx.len();
    let p_idx = if dataset.pairs.is_empty() || config.weights.lambda_real == 0.0 && config.ablation == AblationMode::SynOnly {
        Vec::new()
    } else {
        pair_indices(
            step,
            p_count,
            dataset.pairs.len(),
            dataset.tuples.len(),
            config.batch_size,
            config.rng_seed,
        )
    };
    // Mixed batches stay half synthetic, half real by construction.
    debug_assert!(p_idx.is_empty() || p_idx.len() == t_idx.len());

    let prep_seq = |seq: &PoseSequence, aug_seed: u64| -> Result<PoseSequence> {
        let a = if config.augment {
            augment(seq, aug_seed)?
        } else {
            seq.clone()
        };
        normalize(&a, stats)
    };

    let mut tuples = Vec::with_capacity(t_idx.len());
    for (elem, &ti) in t_idx.iter().enumerate() {
        let tuple = &dataset.tuples[ti];
        // One augmentation seed per tuple: all eight members share the
        // flip decision and jitter window, so the factor labels stay
        // coherent.
        let aug_seed = derive_seed(config.rng_seed, "aug-tuple", (step as u64) << 20 | elem as u64);
        let members = MemberKey::ALL
            .iter()
            .map(|&k| prep_seq(&tuple.member(k).seq, aug_seed))
            .collect::<Result<Vec<_>>>()?;
        let var_score = variation_score(
            &tuple.char_m1,
            &tuple.char_m2,
            config.weights.var_denominator,
        )?;
        tuples.push(PreparedTuple { members, var_score });
    }

    let mut pairs = Vec::with_capacity(p_idx.len());
    for (elem, &pi) in p_idx.iter().enumerate() {
        let pair = &dataset.pairs[pi];
        let aug_seed = derive_seed(config.rng_seed, "aug-pair", (step as u64) << 20 | elem as u64);
        pairs.push(PreparedPair {
            actor: prep_seq(&pair.actor, aug_seed)?,
            imitation: prep_seq(&pair.imitation, aug_seed)?,
        });
    }
    Ok((tuples, pairs))
}

/// Result of a training run.
#[derive(Debug)]
pub struct TrainOutcome {
    pub bundle: ModelBundle<f32>,
    pub log: Vec<LogRow>,
    pub final_step: usize,
}

/// Saves bundle parameters plus optimizer state under `stem` and
/// `stem.opt`.
fn save_train_checkpoint(
    bundle: &ModelBundle<f32>,
    opt: &OptimizerState<f32>,
    stem: &Path,
) -> Result<()> {
    bundle.save(stem)?;
    let (m, v) = opt.moments();
    let step_tensor = Tensor::<f32>::scalar(opt.step as f32);
    let mut entries: Vec<(String, &Tensor<f32>)> = vec![("step".into(), &step_tensor)];
    let names: Vec<String> = bundle.named_params().iter().map(|(n, _)| n.clone()).collect();
    for ((name, mi), vi) in names.iter().zip(m).zip(v) {
        entries.push((format!("m.{name}"), mi));
        entries.push((format!("v.{name}"), vi));
    }
    let opt_stem = PathBuf::from(format!("{}.opt", stem.display()));
    save_checkpoint(&opt_stem, &entries)?;
    Ok(())
}

/// Restores optimizer moments and step counter from `stem.opt`.
fn load_optimizer_state(
    bundle: &ModelBundle<f32>,
    opt: &mut OptimizerState<f32>,
    stem: &Path,
) -> Result<()> {
    let opt_stem = PathBuf::from(format!("{}.opt", stem.display()));
    let entries = load_checkpoint::<f32>(&opt_stem)?;
    let mut by_name: std::collections::BTreeMap<String, Tensor<f32>> =
        entries.into_iter().collect();
    let step = by_name
        .remove("step")
        .ok_or_else(|| Error::Manifest("optimizer checkpoint lacks a step counter".into()))?
        .item() as usize;
    let mut ms = Vec::new();
    let mut vs = Vec::new();
    for (name, _) in bundle.named_params() {
        ms.push(by_name.remove(&format!("m.{name}")).ok_or_else(|| {
            Error::Manifest(format!("optimizer checkpoint is missing m.{name}"))
        })?);
        vs.push(by_name.remove(&format!("v.{name}")).ok_or_else(|| {
            Error::Manifest(format!("optimizer checkpoint is missing v.{name}"))
        })?);
    }
    opt.restore(step, ms, vs)
}

/// Trains a bundle on the dataset. When `out_dir` is given, periodic
/// and final checkpoints plus `training_log.csv` are written there.
///
/// A non-finite loss aborts with [`Error::Divergence`]; the last good
/// checkpoint stays on disk.
pub fn train(
    config: &TrainConfig,
    dataset: &TrainDataset,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if dataset.tuples.is_empty() {
        return Err(Error::config("training needs at least one tuple"));
    }
    let weights = config.ablation.effective_weights(&config.weights);
    if weights.lambda_real > 0.0 && dataset.pairs.is_empty() {
        return Err(Error::config(
            "training with a real-data loss needs imitation pairs",
        ));
    }
    let mut effective_config = config.clone();
    effective_config.weights = weights.clone();

    // Corpus statistics come from the raw synthetic members.
    let stats = NormalizationStats::from_corpus(
        dataset
            .tuples
            .iter()
            .flat_map(|t| t.members.iter().map(|m| &m.seq)),
    )?;

    let mut bundle = ModelBundle::<f32>::init(
        BodySegmentation::canonical(),
        stats.clone(),
        &dataset.fingerprint,
        derive_seed(config.rng_seed, "init", 0),
    )?;
    bundle.ablation = config.ablation.as_str().to_string();

    let spe = steps_per_epoch(dataset.tuples.len(), config.batch_size);
    let total_steps = spe * config.epochs;
    let shapes: Vec<&[usize]> = bundle
        .named_params()
        .iter()
        .map(|(_, t)| t.shape())
        .collect();
    let mut opt = OptimizerState::<f32>::new(
        AdamParams {
            base_lr: config.base_lr,
            beta1: config.beta1,
            beta2: config.beta2,
            epsilon: config.epsilon,
            weight_decay: config.weight_decay,
            decay_rate: config.lr_decay_rate,
            steps_per_decay: (spe / 3).max(1),
        },
        &shapes,
    );

    if let Some(resume) = &config.resume {
        let restored = ModelBundle::<f32>::load(resume)?;
        if restored.nets.len() != bundle.nets.len() {
            return Err(Error::Manifest("resume bundle has a different layout".into()));
        }
        bundle = restored;
        bundle.ablation = config.ablation.as_str().to_string();
        load_optimizer_state(&bundle, &mut opt, resume)?;
    }

    let mut log = Vec::with_capacity(total_steps - opt.step.min(total_steps));
    while opt.step < total_steps {
        let step = opt.step;
        let epoch = step / spe;
        let lr = opt.current_lr();
        let (tuples, pairs) = prepare_step(dataset, &bundle.stats, &effective_config, step)?;

        // Two tasks per segment (synthetic and real sides) keep both
        // cores busy; results recombine deterministically by index.
        let tasks: Vec<(usize, bool)> = (0..bundle.nets.len())
            .flat_map(|si| [(si, true), (si, false)])
            .collect();
        let sides: Vec<SideStep> = tasks
            .par_iter()
            .map(|&(si, synthetic)| {
                let net = &bundle.nets[si];
                if synthetic {
                    segment_syn_step(
                        net,
                        &bundle.segmentation,
                        &tuples,
                        &weights,
                        step,
                        si,
                        config.rng_seed,
                    )
                } else {
                    segment_real_step(
                        net,
                        &bundle.segmentation,
                        &pairs,
                        &weights,
                        step,
                        si,
                        config.rng_seed,
                    )
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let results: Vec<SideStep> = sides
            .chunks_exact(2)
            .map(|pair| {
                let mut merged = pair[0].clone_shell();
                for side in pair {
                    for (g, sg) in merged.grads.iter_mut().zip(&side.grads) {
                        add_into(g, sg);
                    }
                    merged.shape += side.shape;
                    merged.viewpoint += side.viewpoint;
                    merged.motion += side.motion;
                    merged.nuanced += side.nuanced;
                    merged.rec_syn += side.rec_syn;
                    merged.rec_real += side.rec_real;
                }
                merged
            })
            .collect();

        // Loss terms are summed across segments.
        let mut sums = [0.0; 6];
        for r in &results {
            sums[0] += r.shape;
            sums[1] += r.viewpoint;
            sums[2] += r.motion;
            sums[3] += r.nuanced;
            sums[4] += r.rec_syn;
            sums[5] += r.rec_real;
        }
        let breakdown = LossBreakdown::combine(
            &weights, sums[0], sums[1], sums[2], sums[3], sums[4], sums[5],
        );
        if !breakdown.is_finite() {
            if let Some(dir) = out_dir {
                write_log_file(&log, dir)?;
            }
            return Err(Error::Divergence { step });
        }

        let grad_tensors: Vec<&Tensor<f32>> =
            results.iter().flat_map(|r| r.grads.iter()).collect();
        let mut param_refs: Vec<&mut Tensor<f32>> = bundle
            .nets
            .iter_mut()
            .flat_map(|n| n.params.iter_mut().map(|p| &mut p.tensor))
            .collect();
        opt.adam_step(&mut param_refs, &grad_tensors)?;

        log.push(LogRow {
            step,
            epoch,
            lr,
            losses: breakdown,
        });

        let finished_epoch = (step + 1) % spe == 0;
        if finished_epoch && config.checkpoint_interval > 0 {
            let epochs_done = (step + 1) / spe;
            if epochs_done % config.checkpoint_interval == 0 && epochs_done < config.epochs {
                if let Some(dir) = out_dir {
                    let stem = dir.join(format!("ckpt-epoch-{epochs_done:03}"));
                    save_train_checkpoint(&bundle, &opt, &stem)?;
                }
            }
        }
    }

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        save_train_checkpoint(&bundle, &opt, &dir.join("bundle"))?;
        write_log_file(&log, dir)?;
    }
    Ok(TrainOutcome {
        bundle,
        log,
        final_step: opt.step,
    })
}

fn write_log_file(log: &[LogRow], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut buf = Vec::new();
    write_training_log(log, &mut buf)?;
    std::fs::write(dir.join("training_log.csv"), buf)?;
    Ok(())
}

/// All weight vectors on the 5-simplex with step 0.1.
fn simplex_grid(segments: usize, steps: usize) -> Vec<Vec<f64>> {
    fn rec(remaining: usize, slots: usize, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if slots == 1 {
            current.push(remaining);
            out.push(current.clone());
            current.pop();
            return;
        }
        for take in 0..=remaining {
            current.push(take);
            rec(remaining - take, slots - 1, current, out);
            current.pop();
        }
    }
    let mut raw = Vec::new();
    rec(steps, segments, &mut Vec::new(), &mut raw);
    raw.into_iter()
        .map(|v| v.into_iter().map(|i| i as f64 / steps as f64).collect())
        .collect()
}

/// Grid-searches segment weights on the 0.1-step simplex, maximizing
/// mean k-fold AUC of the weighted score (lower scores flag the poor
/// group). Ties break toward the uniform weighting.
pub fn fit_segment_weights(
    bundle: &ModelBundle<f32>,
    cohort: &[ImitationPair],
    k: usize,
    opts: &ScoreOptions,
) -> Result<Vec<f64>> {
    if k < 2 {
        return Err(Error::contract("cross-validation needs k >= 2"));
    }
    let n_good = cohort.iter().filter(|p| p.group_label == GroupLabel::Good).count();
    if n_good == 0 || n_good == cohort.len() {
        return Err(Error::contract(
            "weight fitting needs both good and poor pairs",
        ));
    }

    // Per-pair segment cosines, the expensive part, computed once.
    let cosines: Vec<(Vec<f64>, GroupLabel)> = cohort
        .par_iter()
        .map(|pair| {
            let (cos, _, _) = segment_cosines(bundle, &pair.actor, &pair.imitation, opts)?;
            Ok((cos.into_iter().map(|(_, c)| c).collect(), pair.group_label))
        })
        .collect::<Result<Vec<_>>>()?;

    // Stratified fold assignment.
    let mut fold_of = vec![0usize; cohort.len()];
    for (label_value, tag) in [(GroupLabel::Good, "good"), (GroupLabel::Poor, "poor")] {
        let mut idx: Vec<usize> = cohort
            .iter()
            .enumerate()
            .filter(|(_, p)| p.group_label == label_value)
            .map(|(i, _)| i)
            .collect();
        let order = permutation(idx.len(), derive_seed(0xf17_5eed, tag, 0));
        idx = order.into_iter().map(|o| idx[o]).collect();
        for (pos, i) in idx.into_iter().enumerate() {
            fold_of[i] = pos % k;
        }
    }

    let segments = bundle.segmentation.segments.len();
    let grid = simplex_grid(segments, 10);
    let uniform = 1.0 / segments as f64;

    let mut best: Option<(f64, f64, usize)> = None;
    for (gi, w) in grid.iter().enumerate() {
        let mut fold_aucs = Vec::new();
        for fold in 0..k {
            let scores: Vec<LabeledScore> = cosines
                .iter()
                .enumerate()
                .filter(|(i, _)| fold_of[*i] == fold)
                .map(|(i, (cos, label))| {
                    let cami: f64 = w
                        .iter()
                        .zip(cos)
                        .map(|(wi, ci)| wi * ci.max(0.0))
                        .sum();
                    LabeledScore::new(
                        format!("p{i}"),
                        cami,
                        if *label == GroupLabel::Poor {
                            Label::Positive
                        } else {
                            Label::Negative
                        },
                    )
                })
                .collect();
            let has_both = scores.iter().any(|s| s.label == Label::Positive)
                && scores.iter().any(|s| s.label == Label::Negative);
            if has_both {
                fold_aucs.push(auc_mann_whitney(&scores, Orientation::LowScorePositive)?);
            }
        }
        if fold_aucs.is_empty() {
            continue;
        }
        let mean_auc = fold_aucs.iter().sum::<f64>() / fold_aucs.len() as f64;
        let dist: f64 = w.iter().map(|wi| (wi - uniform) * (wi - uniform)).sum();
        let better = match &best {
            None => true,
            Some((auc, d, _)) => {
                mean_auc > *auc + 1e-12 || ((mean_auc - auc).abs() <= 1e-12 && dist < *d - 1e-12)
            }
        };
        if better {
            best = Some((mean_auc, dist, gi));
        }
    }
    let (_, _, gi) = best.ok_or_else(|| Error::contract("no fold had both classes"))?;
    Ok(grid[gi].clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose::JOINT_COUNT;
    use crate::synth::{sample_imitation, sample_tuple, Corpus, CorpusConfig};

    fn tiny_dataset(n_tuples: usize, n_pairs: usize) -> TrainDataset {
        let corpus = Corpus::build(&CorpusConfig {
            variations_per_class: 3,
            ..CorpusConfig::default()
        })
        .unwrap();
        let tuples = (0..n_tuples)
            .map(|i| sample_tuple(&corpus, 1000 + i as u64).unwrap())
            .collect();
        let pairs = (0..n_pairs)
            .map(|i| {
                let d = (i % 5) as f64 / 4.0;
                sample_imitation(&corpus, d, 2000 + i as u64).unwrap()
            })
            .collect();
        TrainDataset {
            tuples,
            pairs,
            fingerprint: "test".into(),
        }
    }

    fn tiny_config(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 4,
            rng_seed: 11,
            checkpoint_interval: 0,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn batch_schedule_covers_every_tuple_each_epoch() {
        let n = 10;
        let bs = 4; // two tuples per step
        let spe = steps_per_epoch(n, bs);
        assert_eq!(spe, 5);
        let mut seen: Vec<usize> = (0..spe)
            .flat_map(|s| tuple_indices(s, n, bs, 3))
            .collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..n).collect::<Vec<_>>());
        // Second epoch shuffles differently but still covers everything.
        let mut seen2: Vec<usize> = (spe..2 * spe)
            .flat_map(|s| tuple_indices(s, n, bs, 3))
            .collect();
        seen2.sort_unstable();
        assert_eq!(seen2, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn pair_schedule_cycles_through_all_pairs() {
        let (n_tuples, bs, n_pairs) = (8, 4, 3);
        let mut counts = vec![0usize; n_pairs];
        for step in 0..8 {
            let t = tuple_indices(step, n_tuples, bs, 3).len();
            for i in pair_indices(step, t, n_pairs, n_tuples, bs, 3) {
                counts[i] += 1;
            }
        }
        // 16 draws over 3 pairs: every pair appears 5 or 6 times.
        assert!(counts.iter().all(|&c| c >= 5 && c <= 6), "{counts:?}");
    }

    #[test]
    fn training_runs_and_loss_decreases_on_a_tiny_corpus() {
        let dataset = tiny_dataset(8, 4);
        let outcome = train(&tiny_config(6), &dataset, None).unwrap();
        assert_eq!(outcome.final_step, 6 * 4);
        let first = &outcome.log[0];
        let last = &outcome.log[outcome.log.len() - 1];
        assert!(last.losses.total.is_finite());
        assert!(
            last.losses.total < first.losses.total,
            "loss did not decrease: {} -> {}",
            first.losses.total,
            last.losses.total
        );
    }

    #[test]
    fn identical_seeds_produce_identical_checkpoints() {
        let dataset = tiny_dataset(4, 2);
        let a = train(&tiny_config(2), &dataset, None).unwrap();
        let b = train(&tiny_config(2), &dataset, None).unwrap();
        for (pa, pb) in a.bundle.named_params().iter().zip(b.bundle.named_params()) {
            assert_eq!(pa.0, pb.0);
            assert_eq!(pa.1.data(), pb.1.data(), "parameter {} differs", pa.0);
        }
        for (ra, rb) in a.log.iter().zip(&b.log) {
            assert_eq!(ra.losses.total, rb.losses.total);
        }
    }

    #[test]
    fn ablation_modes_equal_explicit_weight_substitutions() {
        let dataset = tiny_dataset(4, 2);
        let mut syn_only = tiny_config(1);
        syn_only.ablation = AblationMode::SynOnly;
        let a = train(&syn_only, &dataset, None).unwrap();

        let mut manual = tiny_config(1);
        manual.weights.lambda_real = 0.0;
        let b = train(&manual, &dataset, None).unwrap();
        for (ra, rb) in a.log.iter().zip(&b.log) {
            assert_eq!(ra.losses.total, rb.losses.total);
            assert_eq!(ra.losses.total_real, rb.losses.total_real);
        }
        // Synthetic-only logs carry zero real-side terms.
        assert!(a.log.iter().all(|r| r.losses.nuanced == 0.0 && r.losses.rec_real == 0.0));

        let mut no_nuanced = tiny_config(1);
        no_nuanced.ablation = AblationMode::NoNuanced;
        let c = train(&no_nuanced, &dataset, None).unwrap();
        let mut manual_n = tiny_config(1);
        manual_n.weights.lambda_nuanced = 0.0;
        let d = train(&manual_n, &dataset, None).unwrap();
        for (rc, rd) in c.log.iter().zip(&d.log) {
            assert_eq!(rc.losses.total, rd.losses.total);
        }
        assert!(c.log.iter().all(|r| r.losses.nuanced == 0.0));
        assert!(c.log.iter().any(|r| r.losses.rec_real != 0.0));
    }

    #[test]
    fn resume_reproduces_the_uninterrupted_run() {
        let dataset = tiny_dataset(4, 2);
        let dir = tempfile::TempDir::new().unwrap();

        // Uninterrupted 4 epochs.
        let full = train(&tiny_config(4), &dataset, None).unwrap();

        // 2 epochs, checkpoint, then resume for the remaining 2.
        let mut head = tiny_config(2);
        head.checkpoint_interval = 0;
        let head_out = train(&head, &dataset, Some(dir.path())).unwrap();
        assert_eq!(head_out.final_step, 4);

        let mut tail = tiny_config(4);
        tail.resume = Some(dir.path().join("bundle"));
        let tail_out = train(&tail, &dataset, None).unwrap();

        for (pa, pb) in full
            .bundle
            .named_params()
            .iter()
            .zip(tail_out.bundle.named_params())
        {
            assert_eq!(pa.1.data(), pb.1.data(), "parameter {} differs", pa.0);
        }
        // The resumed log holds exactly the second half, with equal losses.
        assert_eq!(tail_out.log.len(), 4);
        for (ra, rb) in full.log[4..].iter().zip(&tail_out.log) {
            assert_eq!(ra.step, rb.step);
            assert_eq!(ra.losses.total, rb.losses.total);
        }
    }

    #[test]
    fn checkpoint_round_trip_preserves_validation_loss() {
        let dataset = tiny_dataset(4, 2);
        let dir = tempfile::TempDir::new().unwrap();
        let outcome = train(&tiny_config(2), &dataset, Some(dir.path())).unwrap();
        let reloaded = ModelBundle::<f32>::load(&dir.path().join("bundle")).unwrap();

        // Validation loss: reconstruction of a held-out tuple anchor.
        let probe = &dataset.tuples[0].member(MemberKey::M1S1V1).seq;
        let val = |bundle: &ModelBundle<f32>| -> f64 {
            let n = normalize(probe, &bundle.stats).unwrap();
            let mut total = 0.0;
            for (name, _) in &bundle.segmentation.segments {
                let seg = segment_slice(&n, &bundle.segmentation, name).unwrap();
                let net = bundle.net(name).unwrap();
                let enc = net.encode(&seg).unwrap();
                let rec = net.decode(&enc, 30.0, "v").unwrap();
                total += crate::loss::reconstruction_value(&seg, &rec).unwrap();
            }
            total
        };
        assert_eq!(val(&outcome.bundle), val(&reloaded));
    }

    #[test]
    fn divergence_is_reported_as_such() {
        let dataset = tiny_dataset(2, 2);
        let mut config = tiny_config(1);
        config.batch_size = 2;
        config.base_lr = 1e18; // force explosion
        match train(&config, &dataset, None) {
            Err(Error::Divergence { .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn simplex_grid_has_binomial_size_and_unit_sums() {
        let grid = simplex_grid(5, 10);
        // C(14, 4) = 1001 weight vectors.
        assert_eq!(grid.len(), 1001);
        for w in &grid {
            let sum: f64 = w.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn weight_fitting_prefers_the_informative_segment() {
        // Synthetic cosines: only the left arm separates good from poor.
        let bundle = ModelBundle::<f32>::init(
            BodySegmentation::canonical(),
            NormalizationStats::identity(JOINT_COUNT),
            "t",
            1,
        )
        .unwrap();
        let grid = simplex_grid(5, 10);
        let mut best: Option<(f64, f64, usize)> = None;
        // Use the internal selection logic indirectly: simulate the
        // cosines and pick with the same criterion.
        let cohort_cos: Vec<(Vec<f64>, GroupLabel)> = (0..40)
            .map(|i| {
                let poor = i % 2 == 0;
                let mut cos = vec![0.5; 5];
                cos[0] = if poor { 0.1 } else { 0.9 };
                (
                    cos,
                    if poor { GroupLabel::Poor } else { GroupLabel::Good },
                )
            })
            .collect();
        for (gi, w) in grid.iter().enumerate() {
            let scores: Vec<LabeledScore> = cohort_cos
                .iter()
                .enumerate()
                .map(|(i, (cos, label))| {
                    let s: f64 = w.iter().zip(cos).map(|(wi, ci)| wi * ci.max(0.0)).sum();
                    LabeledScore::new(
                        format!("{i}"),
                        s,
                        if *label == GroupLabel::Poor {
                            Label::Positive
                        } else {
                            Label::Negative
                        },
                    )
                })
                .collect();
            let auc = auc_mann_whitney(&scores, Orientation::LowScorePositive).unwrap();
            let uniform = 0.2;
            let dist: f64 = w.iter().map(|wi| (wi - uniform) * (wi - uniform)).sum();
            let better = match &best {
                None => true,
                Some((a, d, _)) => auc > *a + 1e-12 || ((auc - *a).abs() <= 1e-12 && dist < *d - 1e-12),
            };
            if better {
                best = Some((auc, dist, gi));
            }
        }
        let (_, _, gi) = best.unwrap();
        let w = &grid[gi];
        assert!(
            w[0] >= *w[1..].iter().max_by(|a, b| a.partial_cmp(b).unwrap()).unwrap(),
            "left arm should carry the most weight: {w:?}"
        );
        drop(bundle);
    }

    #[test]
    fn uniform_informative_cohort_ties_break_to_uniform_weights() {
        // All segments equally informative: many weightings reach
        // AUC 1.0; the tie-break must land on the uniform vector.
        let corpus = Corpus::build(&CorpusConfig::default()).unwrap();
        let _ = corpus;
        let grid = simplex_grid(5, 10);
        let cohort_cos: Vec<(Vec<f64>, GroupLabel)> = (0..20)
            .map(|i| {
                let poor = i % 2 == 0;
                let c = if poor { 0.2 } else { 0.8 };
                (vec![c; 5], if poor { GroupLabel::Poor } else { GroupLabel::Good })
            })
            .collect();
        let mut best: Option<(f64, f64, usize)> = None;
        for (gi, w) in grid.iter().enumerate() {
            let scores: Vec<LabeledScore> = cohort_cos
                .iter()
                .enumerate()
                .map(|(i, (cos, label))| {
                    let s: f64 = w.iter().zip(cos).map(|(wi, ci)| wi * ci.max(0.0)).sum();
                    LabeledScore::new(
                        format!("{i}"),
                        s,
                        if *label == GroupLabel::Poor {
                            Label::Positive
                        } else {
                            Label::Negative
                        },
                    )
                })
                .collect();
            let auc = auc_mann_whitney(&scores, Orientation::LowScorePositive).unwrap();
            let dist: f64 = w.iter().map(|wi| (wi - 0.2) * (wi - 0.2)).sum();
            let better = match &best {
                None => true,
                Some((a, d, _)) => auc > *a + 1e-12 || ((auc - *a).abs() <= 1e-12 && dist < *d - 1e-12),
            };
            if better {
                best = Some((auc, dist, gi));
            }
        }
        let w = &grid[best.unwrap().2];
        for wi in w {
            assert!((wi - 0.2).abs() < 1e-9, "expected uniform weights, got {w:?}");
        }
    }
}
