//! Domain types for 2-D pose sequences: the canonical 17-joint layout,
//! skeleton topology, body segmentation, normalization, augmentation,
//! and the on-disk pose file format.

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of joints in the canonical layout.
pub const JOINT_COUNT: usize = 17;

/// Shortest sequence the generator emits and the scorers accept.
pub const MIN_FRAMES: usize = 32;

/// Canonical joint order. Joint 0 is the kinematic root.
pub const JOINT_NAMES: [&str; JOINT_COUNT] = [
    "pelvis",
    "spine",
    "chest",
    "neck",
    "head",
    "left_shoulder",
    "left_elbow",
    "left_wrist",
    "right_shoulder",
    "right_elbow",
    "right_wrist",
    "left_hip",
    "left_knee",
    "left_ankle",
    "right_hip",
    "right_knee",
    "right_ankle",
];

/// Parent of each canonical joint (-1 for the root).
pub const JOINT_PARENTS: [i32; JOINT_COUNT] = [
    -1, 0, 1, 2, 3, 2, 5, 6, 2, 8, 9, 0, 11, 12, 0, 14, 15,
];

/// Left/right joint pairs swapped by a horizontal flip.
pub const FLIP_PAIRS: [(usize, usize); 6] = [(5, 8), (6, 9), (7, 10), (11, 14), (12, 15), (13, 16)];

/// Segment names in report order.
pub const SEGMENT_NAMES: [&str; 5] = ["left_arm", "right_arm", "torso", "left_leg", "right_leg"];

/// A time series of 2-D joint coordinates, stored row-major `[t][j][xy]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseSequence {
    pub id: String,
    pub fps: f64,
    frame_count: usize,
    joint_count: usize,
    coords: Vec<f64>,
}

impl PoseSequence {
    /// Builds a sequence from flat `[t][j][xy]` data, checking shape and
    /// finiteness. Frame-count minimums are enforced at the file and
    /// scoring boundaries, not here, so algebraic helpers can operate on
    /// short test sequences.
    pub fn from_flat(
        id: impl Into<String>,
        fps: f64,
        frame_count: usize,
        joint_count: usize,
        coords: Vec<f64>,
    ) -> Result<Self> {
        if coords.len() != frame_count * joint_count * 2 {
            return Err(Error::dim(format!(
                "coords hold {} values, expected {}x{}x2",
                coords.len(),
                frame_count,
                joint_count
            )));
        }
        if frame_count == 0 || joint_count == 0 {
            return Err(Error::dim("empty pose sequence"));
        }
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract("pose coordinates must be finite"));
        }
        Ok(PoseSequence {
            id: id.into(),
            fps,
            frame_count,
            joint_count,
            coords,
        })
    }

    pub fn frame_count(&self) -> usize {
        self.frame_count
    }

    pub fn joint_count(&self) -> usize {
        self.joint_count
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    /// `(x, y)` of joint `j` at frame `t`.
    pub fn at(&self, t: usize, j: usize) -> (f64, f64) {
        let base = (t * self.joint_count + j) * 2;
        (self.coords[base], self.coords[base + 1])
    }

    /// All coordinates of one frame, `[j][xy]` flattened.
    pub fn frame(&self, t: usize) -> &[f64] {
        let w = self.joint_count * 2;
        &self.coords[t * w..(t + 1) * w]
    }

    /// Frames as owned vectors, the form the DTW routines take.
    pub fn frames_vec(&self) -> Vec<Vec<f64>> {
        (0..self.frame_count).map(|t| self.frame(t).to_vec()).collect()
    }

    /// Drops trailing frames so the length is a multiple of `m`.
    pub fn crop_to_multiple(&self, m: usize) -> Result<PoseSequence> {
        let t = (self.frame_count / m) * m;
        if t == 0 {
            return Err(Error::contract(format!(
                "sequence {} has {} frames, shorter than {m}",
                self.id, self.frame_count
            )));
        }
        if t == self.frame_count {
            return Ok(self.clone());
        }
        PoseSequence::from_flat(
            self.id.clone(),
            self.fps,
            t,
            self.joint_count,
            self.coords[..t * self.joint_count * 2].to_vec(),
        )
    }

    /// Enforces the generator/scoring minimum length.
    pub fn validate_min_frames(&self) -> Result<()> {
        if self.frame_count < MIN_FRAMES {
            return Err(Error::contract(format!(
                "sequence {} has {} frames, minimum is {MIN_FRAMES}",
                self.id, self.frame_count
            )));
        }
        Ok(())
    }
}

/// Kinematic tree: per-joint parent, bone length, and rest direction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Skeleton {
    pub id: String,
    pub parent: Vec<i32>,
    /// Length of the bone from `parent[j]` to `j`; entry 0 belongs to the
    /// root and is unused but kept positive.
    pub bone_length: Vec<f64>,
    /// Unit direction from `parent[j]` to `j` in the rest pose.
    pub rest_direction: Vec<[f64; 3]>,
}

impl Skeleton {
    pub fn new(
        id: impl Into<String>,
        parent: Vec<i32>,
        bone_length: Vec<f64>,
        rest_direction: Vec<[f64; 3]>,
    ) -> Result<Self> {
        let n = parent.len();
        if bone_length.len() != n || rest_direction.len() != n {
            return Err(Error::dim("skeleton arrays disagree on joint count"));
        }
        if n == 0 || parent[0] != -1 {
            return Err(Error::contract("joint 0 must be the root (parent -1)"));
        }
        for (j, &p) in parent.iter().enumerate().skip(1) {
            if p < 0 || p as usize >= n {
                return Err(Error::contract(format!("joint {j} has invalid parent {p}")));
            }
        }
        // Walking to the root must terminate for every joint.
        for j in 0..n {
            let mut cur = j;
            let mut hops = 0;
            while parent[cur] >= 0 {
                cur = parent[cur] as usize;
                hops += 1;
                if hops > n {
                    return Err(Error::contract("parent array contains a cycle"));
                }
            }
        }
        if bone_length.iter().any(|&l| l <= 0.0) {
            return Err(Error::contract("bone lengths must be strictly positive"));
        }
        let mut rest = rest_direction;
        for d in &mut rest {
            let norm = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            if norm == 0.0 {
                return Err(Error::contract("rest direction must be nonzero"));
            }
            d[0] /= norm;
            d[1] /= norm;
            d[2] /= norm;
        }
        Ok(Skeleton {
            id: id.into(),
            parent,
            bone_length,
            rest_direction: rest,
        })
    }

    pub fn joint_count(&self) -> usize {
        self.parent.len()
    }
}

/// The five-part body decomposition with per-segment weights.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BodySegmentation {
    pub segments: Vec<(String, Vec<usize>)>,
    pub weights: Vec<f64>,
}

impl BodySegmentation {
    /// Canonical decomposition with uniform weights: each limb holds its
    /// three joints (anchored at the shoulder or hip) and the torso
    /// holds the spine chain.
    pub fn canonical() -> Self {
        BodySegmentation {
            segments: vec![
                ("left_arm".into(), vec![5, 6, 7]),
                ("right_arm".into(), vec![8, 9, 10]),
                ("torso".into(), vec![0, 1, 2, 3, 4]),
                ("left_leg".into(), vec![11, 12, 13]),
                ("right_leg".into(), vec![14, 15, 16]),
            ],
            weights: vec![0.2; 5],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut names: Vec<&str> = self.segments.iter().map(|(n, _)| n.as_str()).collect();
        names.sort_unstable();
        let mut expected: Vec<&str> = SEGMENT_NAMES.to_vec();
        expected.sort_unstable();
        if names != expected {
            return Err(Error::contract(format!(
                "segment names must be {SEGMENT_NAMES:?}, got {names:?}"
            )));
        }
        if self.weights.len() != self.segments.len() {
            return Err(Error::dim("one weight per segment required"));
        }
        if self.weights.iter().any(|&w| !(0.0..=1.0).contains(&w)) {
            return Err(Error::contract("segment weights must lie in [0, 1]"));
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::contract(format!("segment weights sum to {sum}, not 1")));
        }
        let mut covered = vec![false; JOINT_COUNT];
        for (_, idx) in &self.segments {
            for &j in idx {
                if j >= JOINT_COUNT {
                    return Err(Error::contract(format!("joint index {j} out of range")));
                }
                covered[j] = true;
            }
        }
        if covered.iter().any(|&c| !c) {
            return Err(Error::contract("every joint must appear in a segment"));
        }
        Ok(())
    }

    pub fn joint_indices(&self, name: &str) -> Result<&[usize]> {
        self.segments
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, idx)| idx.as_slice())
            .ok_or_else(|| Error::Lookup(format!("segment {name}")))
    }

    /// Weight associated with a segment name.
    pub fn weight_of(&self, name: &str) -> Result<f64> {
        let pos = self
            .segments
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| Error::Lookup(format!("segment {name}")))?;
        Ok(self.weights[pos])
    }
}

/// Per-joint mean and standard deviation of x/y coordinates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mean: Vec<[f64; 2]>,
    pub std: Vec<[f64; 2]>,
}

impl NormalizationStats {
    /// Identity stats (mean 0, std 1) for `j` joints.
    pub fn identity(j: usize) -> Self {
        NormalizationStats {
            mean: vec![[0.0, 0.0]; j],
            std: vec![[1.0, 1.0]; j],
        }
    }

    /// Accumulates stats over a training corpus. Degenerate axes get
    /// std 1 so normalization stays invertible.
    pub fn from_corpus<'a>(seqs: impl Iterator<Item = &'a PoseSequence>) -> Result<Self> {
        let mut count = 0usize;
        let mut sum: Vec<[f64; 2]> = Vec::new();
        let mut sum_sq: Vec<[f64; 2]> = Vec::new();
        for seq in seqs {
            if sum.is_empty() {
                sum = vec![[0.0; 2]; seq.joint_count()];
                sum_sq = vec![[0.0; 2]; seq.joint_count()];
            } else if sum.len() != seq.joint_count() {
                return Err(Error::dim("corpus sequences disagree on joint count"));
            }
            for t in 0..seq.frame_count() {
                for j in 0..seq.joint_count() {
                    let (x, y) = seq.at(t, j);
                    sum[j][0] += x;
                    sum[j][1] += y;
                    sum_sq[j][0] += x * x;
                    sum_sq[j][1] += y * y;
                }
            }
            count += seq.frame_count();
        }
        if count == 0 {
            return Err(Error::contract("normalization stats over an empty corpus"));
        }
        let n = count as f64;
        let mut mean = vec![[0.0; 2]; sum.len()];
        let mut std = vec![[1.0; 2]; sum.len()];
        for j in 0..sum.len() {
            for a in 0..2 {
                mean[j][a] = sum[j][a] / n;
                let var = (sum_sq[j][a] / n - mean[j][a] * mean[j][a]).max(0.0);
                std[j][a] = if var > 1e-12 { var.sqrt() } else { 1.0 };
            }
        }
        Ok(NormalizationStats { mean, std })
    }

    pub fn validate(&self) -> Result<()> {
        if self.mean.len() != self.std.len() {
            return Err(Error::dim("stats arrays disagree on joint count"));
        }
        if self.std.iter().any(|s| s[0] <= 0.0 || s[1] <= 0.0) {
            return Err(Error::contract("normalization std must be positive"));
        }
        Ok(())
    }
}

/// `(coords - mean) / std` per joint per axis.
pub fn normalize(seq: &PoseSequence, stats: &NormalizationStats) -> Result<PoseSequence> {
    stats.validate()?;
    if stats.mean.len() != seq.joint_count() {
        return Err(Error::dim(format!(
            "stats cover {} joints, sequence has {}",
            stats.mean.len(),
            seq.joint_count()
        )));
    }
    let mut coords = seq.coords().to_vec();
    for t in 0..seq.frame_count() {
        for j in 0..seq.joint_count() {
            let base = (t * seq.joint_count() + j) * 2;
            coords[base] = (coords[base] - stats.mean[j][0]) / stats.std[j][0];
            coords[base + 1] = (coords[base + 1] - stats.mean[j][1]) / stats.std[j][1];
        }
    }
    PoseSequence::from_flat(seq.id.clone(), seq.fps, seq.frame_count(), seq.joint_count(), coords)
}

/// Inverse of [`normalize`] for the same stats.
pub fn denormalize(seq: &PoseSequence, stats: &NormalizationStats) -> Result<PoseSequence> {
    stats.validate()?;
    if stats.mean.len() != seq.joint_count() {
        return Err(Error::dim(format!(
            "stats cover {} joints, sequence has {}",
            stats.mean.len(),
            seq.joint_count()
        )));
    }
    let mut coords = seq.coords().to_vec();
    for t in 0..seq.frame_count() {
        for j in 0..seq.joint_count() {
            let base = (t * seq.joint_count() + j) * 2;
            coords[base] = coords[base] * stats.std[j][0] + stats.mean[j][0];
            coords[base + 1] = coords[base + 1] * stats.std[j][1] + stats.mean[j][1];
        }
    }
    PoseSequence::from_flat(seq.id.clone(), seq.fps, seq.frame_count(), seq.joint_count(), coords)
}

/// Projects a sequence onto one body segment's joints, frame count and
/// coordinate values unchanged.
pub fn segment_slice(seq: &PoseSequence, seg: &BodySegmentation, name: &str) -> Result<PoseSequence> {
    let indices = seg.joint_indices(name)?;
    if let Some(&bad) = indices.iter().find(|&&j| j >= seq.joint_count()) {
        return Err(Error::dim(format!(
            "segment {name} refers to joint {bad}, sequence has {}",
            seq.joint_count()
        )));
    }
    let mut coords = Vec::with_capacity(seq.frame_count() * indices.len() * 2);
    for t in 0..seq.frame_count() {
        for &j in indices {
            let (x, y) = seq.at(t, j);
            coords.push(x);
            coords.push(y);
        }
    }
    PoseSequence::from_flat(
        format!("{}:{name}", seq.id),
        seq.fps,
        seq.frame_count(),
        indices.len(),
        coords,
    )
}

/// Mirrors a full-body sequence horizontally: x-coordinates are negated
/// and left/right joint labels swapped. Involutive.
pub fn horizontal_flip(seq: &PoseSequence) -> Result<PoseSequence> {
    if seq.joint_count() != JOINT_COUNT {
        return Err(Error::dim(format!(
            "flip needs the full {JOINT_COUNT}-joint layout, got {}",
            seq.joint_count()
        )));
    }
    let mut remap: Vec<usize> = (0..JOINT_COUNT).collect();
    for &(l, r) in &FLIP_PAIRS {
        remap[l] = r;
        remap[r] = l;
    }
    let mut coords = vec![0.0; seq.coords().len()];
    for t in 0..seq.frame_count() {
        for j in 0..JOINT_COUNT {
            let (x, y) = seq.at(t, remap[j]);
            let base = (t * JOINT_COUNT + j) * 2;
            coords[base] = -x;
            coords[base + 1] = y;
        }
    }
    PoseSequence::from_flat(seq.id.clone(), seq.fps, seq.frame_count(), JOINT_COUNT, coords)
}

/// Crops a contiguous window of `len` frames starting at `start` and
/// linearly resamples it back to the original frame count.
pub fn temporal_jitter(seq: &PoseSequence, start: usize, len: usize) -> Result<PoseSequence> {
    let t_total = seq.frame_count();
    if len == 0 || start + len > t_total {
        return Err(Error::contract(format!(
            "jitter window {start}..{} outside 0..{t_total}",
            start + len
        )));
    }
    if len == t_total {
        return Ok(seq.clone());
    }
    let j = seq.joint_count();
    let mut coords = Vec::with_capacity(t_total * j * 2);
    for t_out in 0..t_total {
        // Map output frame t_out onto the cropped window.
        let u = if t_total > 1 {
            start as f64 + t_out as f64 * (len - 1) as f64 / (t_total - 1) as f64
        } else {
            start as f64
        };
        let lo = u.floor() as usize;
        let hi = u.ceil() as usize;
        let frac = u - lo as f64;
        for jj in 0..j {
            let (x0, y0) = seq.at(lo, jj);
            let (x1, y1) = seq.at(hi, jj);
            coords.push(x0 + frac * (x1 - x0));
            coords.push(y0 + frac * (y1 - y0));
        }
    }
    PoseSequence::from_flat(seq.id.clone(), seq.fps, t_total, j, coords)
}

/// Training augmentation: a 50% horizontal flip plus temporal jitter
/// with a window length uniform in `[ceil(0.9 T), T]`. Deterministic
/// for a fixed seed.
pub fn augment(seq: &PoseSequence, rng_seed: u64) -> Result<PoseSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let flip: bool = rng.gen_bool(0.5);
    let t = seq.frame_count();
    let min_len = (0.9 * t as f64).ceil() as usize;
    let len = rng.gen_range(min_len..=t);
    let start = rng.gen_range(0..=t - len);
    let mut out = if flip { horizontal_flip(seq)? } else { seq.clone() };
    out = temporal_jitter(&out, start, len)?;
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
struct PoseJson {
    version: u32,
    id: String,
    fps: f64,
    joint_names: Vec<String>,
    frames: Vec<Vec<[f64; 2]>>,
}

/// Serializes a full-body sequence as a version-1 pose file.
pub fn write_posejson(seq: &PoseSequence, path: &Path) -> Result<()> {
    if seq.joint_count() != JOINT_COUNT {
        return Err(Error::dim(format!(
            "pose files hold the full {JOINT_COUNT}-joint layout, got {}",
            seq.joint_count()
        )));
    }
    let frames = (0..seq.frame_count())
        .map(|t| (0..JOINT_COUNT).map(|j| { let (x, y) = seq.at(t, j); [x, y] }).collect())
        .collect();
    let doc = PoseJson {
        version: 1,
        id: seq.id.clone(),
        fps: seq.fps,
        joint_names: JOINT_NAMES.iter().map(|s| s.to_string()).collect(),
        frames,
    };
    let bytes = serde_json::to_vec(&doc)?;
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Reads and validates a version-1 pose file.
pub fn read_posejson(path: &Path) -> Result<PoseSequence> {
    let bytes = std::fs::read(path)?;
    let doc: PoseJson = serde_json::from_slice(&bytes)?;
    if doc.version != 1 {
        return Err(Error::Manifest(format!(
            "unsupported pose file version {} in {}",
            doc.version,
            path.display()
        )));
    }
    let expected: Vec<String> = JOINT_NAMES.iter().map(|s| s.to_string()).collect();
    if doc.joint_names != expected {
        return Err(Error::Manifest(format!(
            "joint names in {} do not match the canonical layout",
            path.display()
        )));
    }
    let t = doc.frames.len();
    let mut coords = Vec::with_capacity(t * JOINT_COUNT * 2);
    for frame in &doc.frames {
        if frame.len() != JOINT_COUNT {
            return Err(Error::dim(format!(
                "frame with {} joints in {}",
                frame.len(),
                path.display()
            )));
        }
        for xy in frame {
            coords.push(xy[0]);
            coords.push(xy[1]);
        }
    }
    let seq = PoseSequence::from_flat(doc.id, doc.fps, t, JOINT_COUNT, coords)?;
    seq.validate_min_frames()?;
    Ok(seq)
}
