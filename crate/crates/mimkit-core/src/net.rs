//! The per-segment disentangling networks: motion, body, and view
//! encoders plus the decoder, instantiated once per body segment.
//!
//! Layer stack (per segment, input channels `2 * joints`):
//!
//! * motion encoder: 3 x (conv k=8 s=2 + LReLU), channels 64/96/128
//! * body encoder: 2 x (conv k=7 + LReLU + max-pool), conv + LReLU +
//!   global max-pool, 1x1 conv to 16
//! * view encoder: same with average pooling, 1x1 conv to 8
//! * decoder: 3 x (upsample x2 + conv k=7), dropout + LReLU on the
//!   first two, channels 152/128/64/out

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{
    load_checkpoint, save_checkpoint, NodeId, Scalar, Tape, Tensor, DROPOUT_RATE, LEAKY_SLOPE,
};
use crate::error::{Error, Result};
use crate::pose::{BodySegmentation, NormalizationStats, PoseSequence};

/// Motion-map channel count.
pub const MOTION_CHANNELS: usize = 128;
/// Shape vector length.
pub const SHAPE_CHANNELS: usize = 16;
/// View vector length.
pub const VIEW_CHANNELS: usize = 8;
/// Decoder input channels: motion + tiled shape + tiled view.
pub const DECODER_IN_CHANNELS: usize = MOTION_CHANNELS + SHAPE_CHANNELS + VIEW_CHANNELS;
/// Time-axis reduction of the motion encoder (three stride-2 stages).
pub const TIME_STRIDE: usize = 8;

/// A named trainable tensor.
#[derive(Debug, Clone)]
pub struct Parameter<F> {
    pub name: String,
    pub tensor: Tensor<F>,
}

/// The disentangled encodings of one batch of segment sequences:
/// `motion [128, b, t/8]`, `shape [16, b, 1]`, `view [8, b, 1]`.
#[derive(Debug, Clone)]
pub struct ActionEncoding<F> {
    pub motion: Tensor<F>,
    pub shape: Tensor<F>,
    pub view: Tensor<F>,
    pub segment: String,
}

/// Tape handles to the three encodings during a recorded forward pass.
#[derive(Debug, Clone, Copy)]
pub struct EncodingNodes {
    pub motion: NodeId,
    pub shape: NodeId,
    pub view: NodeId,
}

#[derive(Debug, Clone, Copy)]
struct ConvSpec {
    name: &'static str,
    kernel: usize,
    stride: usize,
    c_in: usize,
    c_out: usize,
}

/// One body segment's encoder-decoder parameter set.
#[derive(Debug, Clone)]
pub struct SegmentNet<F> {
    pub segment: String,
    pub joint_count: usize,
    pub params: Vec<Parameter<F>>,
}

fn layer_specs(in_channels: usize) -> Vec<ConvSpec> {
    vec![
        // Motion encoder.
        ConvSpec { name: "motion_enc.conv1", kernel: 8, stride: 2, c_in: in_channels, c_out: 64 },
        ConvSpec { name: "motion_enc.conv2", kernel: 8, stride: 2, c_in: 64, c_out: 96 },
        ConvSpec { name: "motion_enc.conv3", kernel: 8, stride: 2, c_in: 96, c_out: MOTION_CHANNELS },
        // Body encoder.
        ConvSpec { name: "body_enc.conv1", kernel: 7, stride: 1, c_in: in_channels, c_out: 32 },
        ConvSpec { name: "body_enc.conv2", kernel: 7, stride: 1, c_in: 32, c_out: 48 },
        ConvSpec { name: "body_enc.conv3", kernel: 7, stride: 1, c_in: 48, c_out: 64 },
        ConvSpec { name: "body_enc.proj", kernel: 1, stride: 1, c_in: 64, c_out: SHAPE_CHANNELS },
        // View encoder.
        ConvSpec { name: "view_enc.conv1", kernel: 7, stride: 1, c_in: in_channels, c_out: 32 },
        ConvSpec { name: "view_enc.conv2", kernel: 7, stride: 1, c_in: 32, c_out: 48 },
        ConvSpec { name: "view_enc.conv3", kernel: 7, stride: 1, c_in: 48, c_out: 64 },
        ConvSpec { name: "view_enc.proj", kernel: 1, stride: 1, c_in: 64, c_out: VIEW_CHANNELS },
        // Decoder.
        ConvSpec { name: "decoder.conv1", kernel: 7, stride: 1, c_in: DECODER_IN_CHANNELS, c_out: 128 },
        ConvSpec { name: "decoder.conv2", kernel: 7, stride: 1, c_in: 128, c_out: 64 },
        ConvSpec { name: "decoder.conv3", kernel: 7, stride: 1, c_in: 64, c_out: in_channels },
    ]
}

impl<F: Scalar> SegmentNet<F> {
    /// Fresh network with uniform `±sqrt(1 / (c_in * k))` init, seeded.
    pub fn init(segment: &str, joint_count: usize, seed: u64) -> Self {
        let in_channels = 2 * joint_count;
        let mut params = Vec::new();
        for (li, spec) in layer_specs(in_channels).iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(li as u64));
            let bound = (1.0 / (spec.c_in * spec.kernel) as f64).sqrt();
            let w_data: Vec<F> = (0..spec.c_out * spec.c_in * spec.kernel)
                .map(|_| F::from_f64(rng.gen_range(-bound..bound)))
                .collect();
            params.push(Parameter {
                name: format!("{segment}.{}.w", spec.name),
                tensor: Tensor::from_vec(&[spec.c_out, spec.c_in, spec.kernel], w_data)
                    .expect("init shape"),
            });
            params.push(Parameter {
                name: format!("{segment}.{}.b", spec.name),
                tensor: Tensor::zeros(&[spec.c_out]),
            });
        }
        SegmentNet {
            segment: segment.to_string(),
            joint_count,
            params,
        }
    }

    fn param_index(&self, suffix: &str) -> usize {
        let want = format!("{}.{suffix}", self.segment);
        self.params
            .iter()
            .position(|p| p.name == want)
            .unwrap_or_else(|| panic!("missing parameter {want}"))
    }

    /// Inserts all parameters as tape leaves, returning ids aligned with
    /// `self.params`.
    pub fn insert_params(&self, tape: &mut Tape<F>) -> Vec<NodeId> {
        self.params
            .iter()
            .map(|p| tape.param(p.tensor.clone()))
            .collect()
    }

    fn conv_block(
        &self,
        tape: &mut Tape<F>,
        ids: &[NodeId],
        x: NodeId,
        layer: &str,
    ) -> Result<NodeId> {
        let spec = layer_specs(2 * self.joint_count)
            .into_iter()
            .find(|s| s.name == layer)
            .unwrap_or_else(|| panic!("unknown layer {layer}"));
        let wi = self.param_index(&format!("{layer}.w"));
        let bi = self.param_index(&format!("{layer}.b"));
        tape.conv1d_reflect(x, ids[wi], ids[bi], spec.kernel, spec.stride)
    }

    /// Records the motion encoder: three strided conv + LReLU stages.
    pub fn motion_encoder_on_tape(
        &self,
        tape: &mut Tape<F>,
        ids: &[NodeId],
        x: NodeId,
    ) -> Result<NodeId> {
        let mut m = x;
        for layer in ["motion_enc.conv1", "motion_enc.conv2", "motion_enc.conv3"] {
            m = self.conv_block(tape, ids, m, layer)?;
            m = tape.leaky_relu(m, LEAKY_SLOPE);
        }
        Ok(m)
    }

    /// Records the body encoder: conv + LReLU + max-pool twice, then a
    /// global max-pool and a 1x1 projection to the shape vector.
    pub fn body_encoder_on_tape(
        &self,
        tape: &mut Tape<F>,
        ids: &[NodeId],
        x: NodeId,
    ) -> Result<NodeId> {
        let mut s = x;
        for layer in ["body_enc.conv1", "body_enc.conv2"] {
            s = self.conv_block(tape, ids, s, layer)?;
            s = tape.leaky_relu(s, LEAKY_SLOPE);
            s = tape.max_pool2(s)?;
        }
        s = self.conv_block(tape, ids, s, "body_enc.conv3")?;
        s = tape.leaky_relu(s, LEAKY_SLOPE);
        s = tape.global_max_pool(s)?;
        self.conv_block(tape, ids, s, "body_enc.proj")
    }

    /// Records the view encoder: the body encoder's shape with average
    /// pooling, projected to the view vector.
    pub fn view_encoder_on_tape(
        &self,
        tape: &mut Tape<F>,
        ids: &[NodeId],
        x: NodeId,
    ) -> Result<NodeId> {
        let mut v = x;
        for layer in ["view_enc.conv1", "view_enc.conv2"] {
            v = self.conv_block(tape, ids, v, layer)?;
            v = tape.leaky_relu(v, LEAKY_SLOPE);
            v = tape.avg_pool2(v)?;
        }
        v = self.conv_block(tape, ids, v, "view_enc.conv3")?;
        v = tape.leaky_relu(v, LEAKY_SLOPE);
        v = tape.global_avg_pool(v)?;
        self.conv_block(tape, ids, v, "view_enc.proj")
    }

    /// Records all three encoders on one input batch. `x` is a
    /// normalized segment batch `[2 * joints, b, t]`, `t` a multiple
    /// of 8.
    pub fn encode_on_tape(
        &self,
        tape: &mut Tape<F>,
        ids: &[NodeId],
        x: NodeId,
    ) -> Result<EncodingNodes> {
        Ok(EncodingNodes {
            motion: self.motion_encoder_on_tape(tape, ids, x)?,
            shape: self.body_encoder_on_tape(tape, ids, x)?,
            view: self.view_encoder_on_tape(tape, ids, x)?,
        })
    }

    /// Records the decoder on a tape: static vectors are tiled along
    /// time, concatenated with the motion map, and upsampled back to
    /// `8 * t'` frames. `dropout_seed` only matters in training mode.
    pub fn decode_on_tape(
        &self,
        tape: &mut Tape<F>,
        ids: &[NodeId],
        motion: NodeId,
        shape: NodeId,
        view: NodeId,
        dropout_seed: u64,
    ) -> Result<NodeId> {
        let t_prime = tape.value(motion).time();
        let s_tiled = tape.tile_time(shape, t_prime)?;
        let v_tiled = tape.tile_time(view, t_prime)?;
        let mut h = tape.concat_channels(&[motion, s_tiled, v_tiled])?;

        h = tape.upsample2(h)?;
        h = self.conv_block(tape, ids, h, "decoder.conv1")?;
        h = tape.dropout(h, DROPOUT_RATE, dropout_seed.wrapping_add(1));
        h = tape.leaky_relu(h, LEAKY_SLOPE);

        h = tape.upsample2(h)?;
        h = self.conv_block(tape, ids, h, "decoder.conv2")?;
        h = tape.dropout(h, DROPOUT_RATE, dropout_seed.wrapping_add(2));
        h = tape.leaky_relu(h, LEAKY_SLOPE);

        h = tape.upsample2(h)?;
        h = self.conv_block(tape, ids, h, "decoder.conv3")?;
        Ok(h)
    }

    /// Evaluation-mode encoding of one normalized segment sequence.
    pub fn encode(&self, seq: &PoseSequence) -> Result<ActionEncoding<F>> {
        if seq.joint_count() != self.joint_count {
            return Err(Error::dim(format!(
                "segment {} expects {} joints, got {}",
                self.segment,
                self.joint_count,
                seq.joint_count()
            )));
        }
        let x = sequences_to_batch(std::slice::from_ref(seq))?;
        let mut tape = Tape::new(false);
        let ids = self.insert_params(&mut tape);
        let xid = tape.leaf(x);
        let enc = self.encode_on_tape(&mut tape, &ids, xid)?;
        Ok(ActionEncoding {
            motion: tape.value(enc.motion).clone(),
            shape: tape.value(enc.shape).clone(),
            view: tape.value(enc.view).clone(),
            segment: self.segment.clone(),
        })
    }

    /// Evaluation-mode reconstruction from an encoding.
    pub fn decode(&self, enc: &ActionEncoding<F>, fps: f64, id: &str) -> Result<PoseSequence> {
        let mut tape = Tape::new(false);
        let ids = self.insert_params(&mut tape);
        let m = tape.leaf(enc.motion.clone());
        let s = tape.leaf(enc.shape.clone());
        let v = tape.leaf(enc.view.clone());
        let out = self.decode_on_tape(&mut tape, &ids, m, s, v, 0)?;
        batch_to_sequence(tape.value(out), 0, fps, id)
    }
}

/// Packs equal-shape segment sequences into a `[2 j, b, t]` batch
/// tensor: joint coordinates become channels.
pub fn sequences_to_batch<F: Scalar>(seqs: &[PoseSequence]) -> Result<Tensor<F>> {
    let first = seqs.first().ok_or_else(|| Error::contract("empty batch"))?;
    let (j, t) = (first.joint_count(), first.frame_count());
    let b = seqs.len();
    let mut data = vec![F::ZERO; 2 * j * b * t];
    for (bb, seq) in seqs.iter().enumerate() {
        if seq.joint_count() != j || seq.frame_count() != t {
            return Err(Error::dim("batch sequences disagree on shape"));
        }
        for jj in 0..j {
            for tt in 0..t {
                let (x, y) = seq.at(tt, jj);
                // channel 2jj is x, channel 2jj+1 is y
                data[((2 * jj) * b + bb) * t + tt] = F::from_f64(x);
                data[((2 * jj + 1) * b + bb) * t + tt] = F::from_f64(y);
            }
        }
    }
    Tensor::from_vec(&[2 * j, b, t], data)
}

/// Extracts one element of a `[2 j, b, t]` batch back into a sequence.
pub fn batch_to_sequence<F: Scalar>(
    batch: &Tensor<F>,
    element: usize,
    fps: f64,
    id: &str,
) -> Result<PoseSequence> {
    let (c, b, t) = (batch.channels(), batch.batch(), batch.time());
    if c % 2 != 0 || element >= b {
        return Err(Error::dim("malformed batch tensor"));
    }
    let j = c / 2;
    let mut coords = vec![0.0; t * j * 2];
    let data = batch.data();
    for jj in 0..j {
        for tt in 0..t {
            coords[(tt * j + jj) * 2] = data[((2 * jj) * b + element) * t + tt].to_f64();
            coords[(tt * j + jj) * 2 + 1] = data[((2 * jj + 1) * b + element) * t + tt].to_f64();
        }
    }
    PoseSequence::from_flat(id, fps, t, j, coords)
}

/// Min/max calibration for cohort-normalized scores.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Calibration {
    pub min: f64,
    pub max: f64,
}

/// Everything needed to score: one net per segment, normalization
/// stats, segment weights, and optional cohort calibration.
#[derive(Debug, Clone)]
pub struct ModelBundle<F> {
    pub nets: Vec<SegmentNet<F>>,
    pub segmentation: BodySegmentation,
    pub stats: NormalizationStats,
    pub calibration: Option<Calibration>,
    pub config_fingerprint: String,
    pub ablation: String,
}

/// Sidecar metadata stored next to the checkpoint blob.
#[derive(Debug, Serialize, Deserialize)]
struct BundleSidecar {
    segments: Vec<(String, Vec<usize>)>,
    weights: Vec<f64>,
    normalization: NormalizationStats,
    calibration: Option<Calibration>,
    config_fingerprint: String,
    ablation: String,
}

impl<F: Scalar> ModelBundle<F> {
    /// Fresh bundle over the canonical segmentation.
    pub fn init(
        segmentation: BodySegmentation,
        stats: NormalizationStats,
        fingerprint: &str,
        seed: u64,
    ) -> Result<Self> {
        segmentation.validate()?;
        let nets = segmentation
            .segments
            .iter()
            .enumerate()
            .map(|(i, (name, idx))| {
                SegmentNet::init(name, idx.len(), seed.wrapping_add(1000 * i as u64))
            })
            .collect();
        Ok(ModelBundle {
            nets,
            segmentation,
            stats,
            calibration: None,
            config_fingerprint: fingerprint.to_string(),
            ablation: "full".to_string(),
        })
    }

    pub fn net(&self, segment: &str) -> Result<&SegmentNet<F>> {
        self.nets
            .iter()
            .find(|n| n.segment == segment)
            .ok_or_else(|| Error::Lookup(format!("segment net {segment}")))
    }

    /// All parameters flattened as (name, tensor) pairs.
    pub fn named_params(&self) -> Vec<(String, &Tensor<F>)> {
        self.nets
            .iter()
            .flat_map(|n| n.params.iter().map(|p| (p.name.clone(), &p.tensor)))
            .collect()
    }

    /// Writes `<stem>.json` / `<stem>.bin` plus `<stem>.sidecar.json`.
    pub fn save(&self, stem: &Path) -> Result<()> {
        save_checkpoint(stem, &self.named_params())?;
        let sidecar = BundleSidecar {
            segments: self.segmentation.segments.clone(),
            weights: self.segmentation.weights.clone(),
            normalization: self.stats.clone(),
            calibration: self.calibration,
            config_fingerprint: self.config_fingerprint.clone(),
            ablation: self.ablation.clone(),
        };
        let json = serde_json::to_vec_pretty(&sidecar)?;
        std::fs::write(sidecar_path(stem), json)?;
        Ok(())
    }

    /// Loads a bundle saved by [`ModelBundle::save`].
    pub fn load(stem: &Path) -> Result<Self> {
        let sidecar_bytes = std::fs::read(sidecar_path(stem)).map_err(|e| {
            Error::Manifest(format!(
                "missing bundle sidecar {}: {e}",
                sidecar_path(stem).display()
            ))
        })?;
        let sidecar: BundleSidecar = serde_json::from_slice(&sidecar_bytes)?;
        let segmentation = BodySegmentation {
            segments: sidecar.segments,
            weights: sidecar.weights,
        };
        segmentation.validate()?;
        sidecar.normalization.validate()?;

        let entries = load_checkpoint::<F>(stem)?;
        let mut by_name: BTreeMap<String, Tensor<F>> = entries.into_iter().collect();
        let mut nets = Vec::new();
        for (name, idx) in &segmentation.segments {
            let mut net = SegmentNet::<F>::init(name, idx.len(), 0);
            for p in &mut net.params {
                let tensor = by_name.remove(&p.name).ok_or_else(|| {
                    Error::Manifest(format!("checkpoint is missing parameter {}", p.name))
                })?;
                if tensor.shape() != p.tensor.shape() {
                    return Err(Error::Manifest(format!(
                        "parameter {} has shape {:?}, expected {:?}",
                        p.name,
                        tensor.shape(),
                        p.tensor.shape()
                    )));
                }
                p.tensor = tensor;
            }
            nets.push(net);
        }
        Ok(ModelBundle {
            nets,
            segmentation,
            stats: sidecar.normalization,
            calibration: sidecar.calibration,
            config_fingerprint: sidecar.config_fingerprint,
            ablation: sidecar.ablation,
        })
    }
}

/// Path of the JSON sidecar for a checkpoint stem.
pub fn sidecar_path(stem: &Path) -> std::path::PathBuf {
    std::path::PathBuf::from(format!("{}.sidecar.json", stem.display()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose::JOINT_COUNT;

    fn toy_sequence(j: usize, t: usize, seed: u64) -> PoseSequence {
        let coords = (0..t * j * 2)
            .map(|i| ((i as f64 + seed as f64) * 0.37).sin())
            .collect();
        PoseSequence::from_flat(format!("toy{seed}"), 30.0, t, j, coords).unwrap()
    }

    #[test]
    fn encoding_shapes_follow_the_architecture() {
        for (t, t_prime) in [(32, 4), (64, 8), (128, 16)] {
            for j in [3usize, 5] {
                let net = SegmentNet::<f32>::init("torso", j, 1);
                let enc = net.encode(&toy_sequence(j, t, 0)).unwrap();
                assert_eq!(enc.motion.shape(), &[MOTION_CHANNELS, 1, t_prime]);
                assert_eq!(enc.shape.shape(), &[SHAPE_CHANNELS, 1, 1]);
                assert_eq!(enc.view.shape(), &[VIEW_CHANNELS, 1, 1]);
            }
        }
    }

    #[test]
    fn decode_returns_eight_times_the_motion_length() {
        let net = SegmentNet::<f32>::init("left_arm", 3, 2);
        let enc = net.encode(&toy_sequence(3, 32, 1)).unwrap();
        let out = net.decode(&enc, 30.0, "recon").unwrap();
        assert_eq!(out.frame_count(), 32);
        assert_eq!(out.joint_count(), 3);

        let enc64 = net.encode(&toy_sequence(3, 64, 1)).unwrap();
        let out64 = net.decode(&enc64, 30.0, "recon64").unwrap();
        assert_eq!(out64.frame_count(), 64);
    }

    #[test]
    fn eval_mode_is_deterministic() {
        let net = SegmentNet::<f32>::init("torso", 5, 3);
        let seq = toy_sequence(5, 32, 7);
        let a = net.encode(&seq).unwrap();
        let b = net.encode(&seq).unwrap();
        assert_eq!(a.motion.data(), b.motion.data());
        assert_eq!(a.shape.data(), b.shape.data());
        let ra = net.decode(&a, 30.0, "r").unwrap();
        let rb = net.decode(&b, 30.0, "r").unwrap();
        assert_eq!(ra.coords(), rb.coords());
    }

    #[test]
    fn encode_rejects_wrong_joint_count() {
        let net = SegmentNet::<f32>::init("torso", 5, 3);
        assert!(matches!(
            net.encode(&toy_sequence(3, 32, 0)),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn batch_round_trip_preserves_sequences() {
        let seqs: Vec<PoseSequence> = (0..3).map(|i| toy_sequence(4, 16, i)).collect();
        let batch = sequences_to_batch::<f64>(&seqs).unwrap();
        assert_eq!(batch.shape(), &[8, 3, 16]);
        for (i, seq) in seqs.iter().enumerate() {
            let back = batch_to_sequence(&batch, i, 30.0, "back").unwrap();
            for (a, b) in back.coords().iter().zip(seq.coords()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn swapping_shape_vectors_changes_the_reconstruction() {
        let net = SegmentNet::<f32>::init("right_leg", 3, 9);
        let e1 = net.encode(&toy_sequence(3, 32, 1)).unwrap();
        let e2 = net.encode(&toy_sequence(3, 32, 2)).unwrap();
        let swapped = ActionEncoding {
            motion: e1.motion.clone(),
            shape: e2.shape.clone(),
            view: e1.view.clone(),
            segment: e1.segment.clone(),
        };
        let base = net.decode(&e1, 30.0, "base").unwrap();
        let alt = net.decode(&swapped, 30.0, "alt").unwrap();
        let diff: f64 = base
            .coords()
            .iter()
            .zip(alt.coords())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / base.coords().len() as f64;
        assert!(diff > 0.0, "shape vector must condition the decoder");
    }

    #[test]
    fn bundle_save_load_round_trip_is_exact() {
        let dir = tempfile::TempDir::new().unwrap();
        let stem = dir.path().join("bundle");
        let bundle = ModelBundle::<f32>::init(
            BodySegmentation::canonical(),
            NormalizationStats::identity(JOINT_COUNT),
            "fp-test",
            5,
        )
        .unwrap();
        bundle.save(&stem).unwrap();
        let loaded = ModelBundle::<f32>::load(&stem).unwrap();
        assert_eq!(loaded.nets.len(), 5);
        assert_eq!(loaded.config_fingerprint, "fp-test");
        for (a, b) in bundle.nets.iter().zip(&loaded.nets) {
            for (pa, pb) in a.params.iter().zip(&b.params) {
                assert_eq!(pa.name, pb.name);
                assert_eq!(pa.tensor.data(), pb.tensor.data());
            }
        }
        // A second save of the loaded bundle produces identical bytes.
        let stem2 = dir.path().join("bundle2");
        loaded.save(&stem2).unwrap();
        assert_eq!(
            std::fs::read(crate::autodiff::blob_path(&stem)).unwrap(),
            std::fs::read(crate::autodiff::blob_path(&stem2)).unwrap()
        );
    }
}
