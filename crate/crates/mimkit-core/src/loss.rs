//! Training objectives: triplet, shape/viewpoint disentanglement, the
//! motion quadruplet with its variation score, the nuanced motion loss
//! with a DTW margin, reconstruction, and the weighted totals.
//!
//! Losses are recorded on a [`Tape`] so they are differentiable; the
//! `*_value` helpers evaluate one instance for tests and logging.

use serde::{Deserialize, Serialize};

use crate::autodiff::{NodeId, Scalar, Tape, Tensor};
use crate::dtw;
use crate::error::{Error, Result};
use crate::pose::PoseSequence;

/// How the variation-score denominator reads `|v|`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarDenominator {
    /// Dimensionality of the characteristic vector (default).
    Count,
    /// L1 norm of the first characteristic vector.
    L1Norm,
}

/// Loss weight coefficients with their trained defaults.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    pub lambda_dis: f64,
    pub lambda_rec: f64,
    pub lambda_nuanced: f64,
    pub lambda_syn: f64,
    pub lambda_real: f64,
    /// Hinge the quadruplet's second term instead of using it literally.
    pub hinge_quadruplet: bool,
    pub var_denominator: VarDenominator,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 0.3,
            beta: 1.0,
            gamma: 0.2,
            delta: 0.02,
            lambda_dis: 0.7,
            lambda_rec: 1.0,
            lambda_nuanced: 1.0,
            lambda_syn: 1.0,
            lambda_real: 1.0,
            hinge_quadruplet: false,
            var_denominator: VarDenominator::Count,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let vals = [
            self.alpha,
            self.beta,
            self.gamma,
            self.delta,
            self.lambda_dis,
            self.lambda_rec,
            self.lambda_nuanced,
            self.lambda_syn,
            self.lambda_real,
        ];
        if vals.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::config("loss weights must be finite and nonnegative"));
        }
        Ok(())
    }
}

/// Per-term scalars of one training step.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub shape: f64,
    pub viewpoint: f64,
    pub motion: f64,
    pub nuanced: f64,
    pub rec_syn: f64,
    pub rec_real: f64,
    pub total_syn: f64,
    pub total_real: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// Assembles the weighted totals from the component terms.
    pub fn combine(
        weights: &LossWeights,
        shape: f64,
        viewpoint: f64,
        motion: f64,
        nuanced: f64,
        rec_syn: f64,
        rec_real: f64,
    ) -> LossBreakdown {
        let total_syn = weights.lambda_dis * (shape + viewpoint + motion) + weights.lambda_rec * rec_syn;
        let total_real = weights.lambda_rec * rec_real + weights.lambda_nuanced * nuanced;
        let total = weights.lambda_syn * total_syn + weights.lambda_real * total_real;
        LossBreakdown {
            shape,
            viewpoint,
            motion,
            nuanced,
            rec_syn,
            rec_real,
            total_syn,
            total_real,
            total,
        }
    }

    pub fn is_finite(&self) -> bool {
        [
            self.shape,
            self.viewpoint,
            self.motion,
            self.nuanced,
            self.rec_syn,
            self.rec_real,
            self.total_syn,
            self.total_real,
            self.total,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// Hinged triplet margin per batch element:
/// `max(0, d(a, p)^2 - d(a, n)^2 + alpha) -> [b]`.
pub fn triplet<F: Scalar>(
    tape: &mut Tape<F>,
    anchor: NodeId,
    positive: NodeId,
    negative: NodeId,
    alpha: f64,
) -> Result<NodeId> {
    let d_ap = tape.sq_distance(anchor, positive)?;
    let d_an = tape.sq_distance(anchor, negative)?;
    let diff = tape.sub(d_ap, d_an)?;
    let shifted = tape.add_scalar(diff, alpha);
    Ok(tape.relu(shifted))
}

/// Shape disentanglement: triplet over shape vectors where the positive
/// shares the body (different motion/view) and the negative shares
/// motion and view (different body).
pub fn shape_loss<F: Scalar>(
    tape: &mut Tape<F>,
    anchor: NodeId,
    positive: NodeId,
    negative: NodeId,
    alpha: f64,
) -> Result<NodeId> {
    triplet(tape, anchor, positive, negative, alpha)
}

/// Viewpoint disentanglement: triplet over view vectors where the
/// positive shares the viewpoint and the negative shares motion and
/// body.
pub fn viewpoint_loss<F: Scalar>(
    tape: &mut Tape<F>,
    anchor: NodeId,
    positive: NodeId,
    negative: NodeId,
    alpha: f64,
) -> Result<NodeId> {
    triplet(tape, anchor, positive, negative, alpha)
}

/// Variation score between two characteristic vectors.
pub fn variation_score(v1: &[f64], v2: &[f64], denominator: VarDenominator) -> Result<f64> {
    if v1.len() != v2.len() || v1.is_empty() {
        return Err(Error::dim(format!(
            "characteristic lengths {} vs {}",
            v1.len(),
            v2.len()
        )));
    }
    let l1: f64 = v1.iter().zip(v2).map(|(a, b)| (a - b).abs()).sum();
    let denom = match denominator {
        VarDenominator::Count => v1.len() as f64,
        VarDenominator::L1Norm => {
            let n: f64 = v1.iter().map(|a| a.abs()).sum();
            if n == 0.0 {
                return Err(Error::contract(
                    "variation score undefined for a zero characteristic norm",
                ));
            }
            n
        }
    };
    Ok(l1 / (2.0 * denom))
}

/// Motion quadruplet per batch element: a triplet over motion maps plus
/// `beta * (||anchor - semi||_2 - gamma * var)`, the second term taken
/// literally (unhinged) unless configured otherwise.
///
/// `var_scores` holds one precomputed variation score per element.
pub fn motion_quadruplet<F: Scalar>(
    tape: &mut Tape<F>,
    anchor: NodeId,
    positive: NodeId,
    semi_positive: NodeId,
    negative: NodeId,
    var_scores: &[f64],
    weights: &LossWeights,
) -> Result<NodeId> {
    let b = tape.value(anchor).batch();
    if var_scores.len() != b {
        return Err(Error::dim(format!(
            "{} variation scores for a batch of {b}",
            var_scores.len()
        )));
    }
    let tri = triplet(tape, anchor, positive, negative, weights.alpha)?;
    let d = tape.sub(anchor, semi_positive)?;
    let dist = tape.l2_norm(d)?;
    let margins: Vec<F> = var_scores
        .iter()
        .map(|&v| F::from_f64(weights.gamma * v))
        .collect();
    let margin_leaf = tape.leaf(Tensor::from_vec(&[b], margins)?);
    let mut second = tape.sub(dist, margin_leaf)?;
    if weights.hinge_quadruplet {
        second = tape.relu(second);
    }
    let second = tape.scale(second, weights.beta);
    tape.add(tri, second)
}

/// Nuanced motion loss per batch element: squared encoding distance
/// plus `delta` times a precomputed DTW margin (constant per element,
/// no gradient flows through it).
pub fn nuanced_loss<F: Scalar>(
    tape: &mut Tape<F>,
    m_actor: NodeId,
    m_imit: NodeId,
    dtw_margins: &[f64],
    delta: f64,
) -> Result<NodeId> {
    let b = tape.value(m_actor).batch();
    if dtw_margins.len() != b {
        return Err(Error::dim(format!(
            "{} DTW margins for a batch of {b}",
            dtw_margins.len()
        )));
    }
    let d = tape.sq_distance(m_actor, m_imit)?;
    let margins: Vec<F> = dtw_margins.iter().map(|&v| F::from_f64(delta * v)).collect();
    let leaf = tape.leaf(Tensor::from_vec(&[b], margins)?);
    tape.add(d, leaf)
}

/// Mean per-step Euclidean frame distance along the optimal DTW path of
/// two (segment) sequences — the margin entering the nuanced loss.
pub fn dtw_margin(a: &PoseSequence, b: &PoseSequence) -> Result<f64> {
    if a.frame_count() == 0 || b.frame_count() == 0 {
        return Err(Error::contract("dtw margin over an empty sequence"));
    }
    if a.joint_count() != b.joint_count() {
        return Err(Error::dim("dtw margin between different joint layouts"));
    }
    let path = dtw::dtw_align(&a.frames_vec(), &b.frames_vec())?;
    Ok(path.mean_cost())
}

/// Reconstruction error per batch element:
/// `(1 / (t * j)) * sum_t sum_j ||p_tj - q_tj||^2 -> [b]`.
///
/// Inputs are `[2 j, b, t]` coordinate batches.
pub fn reconstruction_loss<F: Scalar>(
    tape: &mut Tape<F>,
    decoded: NodeId,
    target: NodeId,
) -> Result<NodeId> {
    let shape = tape.value(decoded).shape().to_vec();
    if shape != tape.value(target).shape() || shape.len() != 3 {
        return Err(Error::dim(format!(
            "reconstruction shapes {:?} vs {:?}",
            shape,
            tape.value(target).shape()
        )));
    }
    let (c, t) = (shape[0], shape[2]);
    let sq = tape.sq_distance(decoded, target)?;
    // Channels hold x and y interleaved: c = 2 j.
    Ok(tape.scale(sq, 1.0 / ((c / 2) as f64 * t as f64)))
}

/// One-shot triplet evaluation over plain vectors.
pub fn triplet_value(anchor: &[f64], positive: &[f64], negative: &[f64], alpha: f64) -> Result<f64> {
    let mut tape = Tape::<f64>::new(false);
    let n = anchor.len();
    let a = tape.leaf(Tensor::from_vec(&[n, 1, 1], anchor.to_vec())?);
    let p = tape.leaf(Tensor::from_vec(&[n, 1, 1], positive.to_vec())?);
    let ng = tape.leaf(Tensor::from_vec(&[n, 1, 1], negative.to_vec())?);
    let l = triplet(&mut tape, a, p, ng, alpha)?;
    Ok(tape.value(l).data()[0].to_f64())
}

/// One-shot reconstruction evaluation over two equal-shape sequences.
pub fn reconstruction_value(original: &PoseSequence, reconstructed: &PoseSequence) -> Result<f64> {
    if original.frame_count() != reconstructed.frame_count()
        || original.joint_count() != reconstructed.joint_count()
    {
        return Err(Error::dim("reconstruction over mismatched sequences"));
    }
    let (t, j) = (original.frame_count(), original.joint_count());
    let mut acc = 0.0;
    for tt in 0..t {
        for jj in 0..j {
            let (ax, ay) = original.at(tt, jj);
            let (bx, by) = reconstructed.at(tt, jj);
            acc += (ax - bx) * (ax - bx) + (ay - by) * (ay - by);
        }
    }
    Ok(acc / (t as f64 * j as f64))
}
