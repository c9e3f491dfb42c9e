//! Procedural pose-sequence generation.
//!
//! Motions are parametric joint-angle templates (six families with
//! continuous intra-class variation). A motion is rendered by driving a
//! skeleton's bone lengths through forward kinematics and projecting the
//! 3-D trajectory to 2-D under a viewpoint, so the three generative
//! factors — motion, body, viewpoint — can be reshuffled independently.
//! The same machinery also synthesizes actor/imitation pairs with a
//! controllable degradation level.

use nalgebra::{Unit, UnitQuaternion, Vector3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pose::{PoseSequence, Skeleton, JOINT_COUNT, JOINT_PARENTS, MIN_FRAMES};

/// Number of motion template families.
pub const MOTION_CLASS_COUNT: usize = 6;

/// Names of the template families, indexed by class id.
pub const MOTION_CLASS_NAMES: [&str; MOTION_CLASS_COUNT] =
    ["wave", "jump", "squat", "march", "arm_circle", "twist"];

/// Entries of a characteristic vector: energy, travel distance, height.
pub const CHARACTERISTIC_DIM: usize = 3;

/// Number of variation parameters per motion.
pub const VARIATION_DIM: usize = 8;

/// One motion: a template family plus its variation knobs.
///
/// `characteristic` summarizes the rendered motion (energy, distance,
/// height), each entry min-max scaled into `[0, 1]` by the corpus
/// constants; it is filled in by the generator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MotionSpec {
    pub class_id: usize,
    /// Values in `[0, 1]` modulating amplitude, frequency, phase,
    /// secondary movement, asymmetry, root bob, lean, and vigor.
    pub variation_params: Vec<f64>,
    pub characteristic: Vec<f64>,
}

impl MotionSpec {
    pub fn new(class_id: usize, variation_params: Vec<f64>) -> Result<Self> {
        if class_id >= MOTION_CLASS_COUNT {
            return Err(Error::config(format!("unknown motion class {class_id}")));
        }
        if variation_params.len() != VARIATION_DIM
            || variation_params.iter().any(|p| !(0.0..=1.0).contains(p))
        {
            return Err(Error::config(
                "variation params must be [0,1] values of the documented arity",
            ));
        }
        Ok(MotionSpec {
            class_id,
            variation_params,
            characteristic: Vec::new(),
        })
    }
}

/// Camera viewpoint: yaw and pitch of an orthographic camera plus a
/// uniform image scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Viewpoint {
    pub azimuth: f64,
    pub elevation: f64,
    pub scale: f64,
}

impl Viewpoint {
    pub fn new(azimuth: f64, elevation: f64, scale: f64) -> Result<Self> {
        if !(-std::f64::consts::PI..=std::f64::consts::PI).contains(&azimuth) {
            return Err(Error::config(format!("azimuth {azimuth} outside [-pi, pi]")));
        }
        let e_max = std::f64::consts::FRAC_PI_4;
        if !(-e_max..=e_max).contains(&elevation) {
            return Err(Error::config(format!(
                "elevation {elevation} outside [-pi/4, pi/4]"
            )));
        }
        if !(0.5..=2.0).contains(&scale) {
            return Err(Error::config(format!("scale {scale} outside [0.5, 2]")));
        }
        Ok(Viewpoint {
            azimuth,
            elevation,
            scale,
        })
    }
}

/// Joint-angle trajectory frame: a root position plus one local
/// rotation per canonical joint.
#[derive(Debug, Clone)]
pub struct AngleFrame {
    pub root_position: Vector3<f64>,
    pub local_rotation: Vec<UnitQuaternion<f64>>,
}

pub type AngleTrajectory = Vec<AngleFrame>;

/// A 3-D joint trajectory, `[frame][joint]`.
#[derive(Debug, Clone)]
pub struct Trajectory3 {
    pub frames: Vec<Vec<Vector3<f64>>>,
}

/// Canonical skeleton the motion templates are authored against.
pub fn canonical_skeleton() -> Skeleton {
    let up = [0.0, 1.0, 0.0];
    let down = [0.0, -1.0, 0.0];
    let left = [1.0, 0.0, 0.0];
    let right = [-1.0, 0.0, 0.0];
    // Order matches JOINT_NAMES; entry 0 is the unused root bone.
    let rest: Vec<[f64; 3]> = vec![
        up,    // pelvis (root, unused)
        up,    // spine
        up,    // chest
        up,    // neck
        up,    // head
        left,  // left_shoulder
        down,  // left_elbow
        down,  // left_wrist
        right, // right_shoulder
        down,  // right_elbow
        down,  // right_wrist
        left,  // left_hip
        down,  // left_knee
        down,  // left_ankle
        right, // right_hip
        down,  // right_knee
        down,  // right_ankle
    ];
    let lengths = vec![
        1.0, 0.25, 0.20, 0.12, 0.15, 0.20, 0.28, 0.26, 0.20, 0.28, 0.26, 0.11, 0.42, 0.40, 0.11,
        0.42, 0.40,
    ];
    Skeleton::new("canonical", JOINT_PARENTS.to_vec(), lengths, rest)
        .expect("canonical skeleton is valid")
}

/// Height of the pelvis above the ground in the rest pose.
const REST_PELVIS_HEIGHT: f64 = 0.85;

fn quat(axis: Vector3<f64>, angle: f64) -> UnitQuaternion<f64> {
    UnitQuaternion::from_axis_angle(&Unit::new_normalize(axis), angle)
}

/// Joint indices by name, for template readability.
mod joints {
    pub const SPINE: usize = 1;
    pub const CHEST: usize = 2;
    pub const NECK: usize = 3;
    pub const L_SHOULDER: usize = 5;
    pub const L_ELBOW: usize = 6;
    pub const R_SHOULDER: usize = 8;
    pub const R_ELBOW: usize = 9;
    pub const L_HIP: usize = 11;
    pub const L_KNEE: usize = 12;
    pub const R_HIP: usize = 14;
    pub const R_KNEE: usize = 15;
}

/// Template evaluation context resolved from a spec and seed.
///
/// Every motion term is proportional to `amplitude` or `lift`, both of
/// which vanish when the variation parameters are all zero, so the
/// zero spec renders a static rest pose.
struct TemplateParams {
    amplitude: f64,
    /// Saturating envelope used for constant pose offsets.
    lift: f64,
    cycles: f64,
    phase: f64,
    secondary: f64,
    asymmetry: f64,
    root_bob: f64,
    lean: f64,
    /// Small seeded wobble so equal variation params still differ.
    dither_phase: f64,
    dither_amp: f64,
}

impl TemplateParams {
    fn resolve(spec: &MotionSpec, seed: u64) -> Self {
        let p = &spec.variation_params;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let amplitude = p[0] * (0.55 + 0.35 * p[7]);
        let lift = (amplitude / 0.3).clamp(0.0, 1.0);
        TemplateParams {
            amplitude,
            lift,
            // Kept at most two cycles per sequence so the dynamics stay
            // representable after the encoder's eightfold downsampling.
            cycles: 0.75 + 1.25 * p[1],
            phase: std::f64::consts::TAU * p[2],
            secondary: 0.2 + 0.6 * p[3],
            asymmetry: 0.6 + 0.8 * p[4],
            root_bob: 0.03 * p[5],
            lean: 0.3 * (p[6] - 0.5) * lift,
            dither_phase: rng.gen_range(0.0..std::f64::consts::TAU),
            dither_amp: rng.gen_range(0.0..0.03) * lift,
        }
    }
}

/// Evaluates a motion template as joint angles over `t_frames` frames.
///
/// Deterministic in `(spec, t_frames, seed)` and independent of any
/// skeleton, which is what makes retargeting exact.
pub fn motion_angles(spec: &MotionSpec, t_frames: usize, seed: u64) -> Result<AngleTrajectory> {
    motion_angles_warped(spec, t_frames, seed, |u| u)
}

/// As [`motion_angles`] with a monotone time remap, used to synthesize
/// imitations whose timing drifts.
fn motion_angles_warped(
    spec: &MotionSpec,
    t_frames: usize,
    seed: u64,
    time_map: impl Fn(f64) -> f64,
) -> Result<AngleTrajectory> {
    if t_frames < MIN_FRAMES {
        return Err(Error::contract(format!(
            "motion length {t_frames} below the {MIN_FRAMES}-frame minimum"
        )));
    }
    if spec.class_id >= MOTION_CLASS_COUNT {
        return Err(Error::config(format!(
            "unknown motion class {}",
            spec.class_id
        )));
    }
    if spec.variation_params.len() != VARIATION_DIM {
        return Err(Error::config("variation params have the wrong arity"));
    }
    let tp = TemplateParams::resolve(spec, seed);
    let mut frames = Vec::with_capacity(t_frames);
    for t in 0..t_frames {
        let u_raw = t as f64 / t_frames as f64;
        let u = time_map(u_raw).clamp(0.0, 1.0);
        frames.push(template_frame(spec.class_id, &tp, u));
    }
    Ok(frames)
}

/// One frame of joint angles at normalized time `u` in `[0, 1)`.
fn template_frame(class_id: usize, tp: &TemplateParams, u: f64) -> AngleFrame {
    use joints::*;
    use std::f64::consts::{PI, TAU};

    let mut rot = vec![UnitQuaternion::identity(); JOINT_COUNT];
    let mut root = Vector3::new(0.0, REST_PELVIS_HEIGHT, 0.0);
    let w = TAU * tp.cycles;
    let osc = (w * u + tp.phase).sin();
    let osc_d = (w * u + tp.phase + tp.dither_phase).sin() * tp.dither_amp;
    let x = Vector3::x();
    let y = Vector3::y();
    let z = Vector3::z();

    // Gentle torso lean shared by all classes.
    rot[SPINE] = quat(x, tp.lean + osc_d);

    match class_id {
        // Wave: right arm raised, forearm oscillating; slight counter
        // sway in the left arm.
        0 => {
            rot[R_SHOULDER] = quat(z, PI * 0.55 * tp.asymmetry * tp.lift);
            rot[R_ELBOW] = quat(z, 0.9 * tp.amplitude * osc);
            rot[L_SHOULDER] = quat(z, 0.4 * tp.amplitude * tp.secondary * osc);
            rot[L_ELBOW] = quat(z, 0.5 * tp.amplitude * tp.secondary * osc);
            root.y += tp.root_bob * (2.0 * w * u).sin();
        }
        // Jump: vertical hops with knee pre-bends and arm swings.
        1 => {
            let hop = (w * u + tp.phase).sin().max(0.0);
            root.y += 0.35 * tp.amplitude * hop * hop;
            let bend = (-(w * u + tp.phase).sin()).max(0.0);
            rot[L_KNEE] = quat(x, 0.9 * tp.amplitude * bend);
            rot[R_KNEE] = quat(x, 0.9 * tp.amplitude * bend * tp.asymmetry);
            rot[L_SHOULDER] = quat(x, -0.9 * tp.amplitude * tp.secondary * osc);
            rot[R_SHOULDER] = quat(x, -0.9 * tp.amplitude * tp.secondary * osc);
        }
        // Squat: pelvis dips, knees and hips flex, arms raise forward.
        2 => {
            let dip = 0.5 * (1.0 - (w * u + tp.phase).cos());
            root.y -= 0.28 * tp.amplitude * dip;
            rot[L_KNEE] = quat(x, 1.1 * tp.amplitude * dip);
            rot[R_KNEE] = quat(x, 1.1 * tp.amplitude * dip * tp.asymmetry);
            rot[L_HIP] = quat(x, -0.6 * tp.amplitude * dip);
            rot[R_HIP] = quat(x, -0.6 * tp.amplitude * dip);
            rot[L_SHOULDER] = quat(x, -1.4 * tp.amplitude * tp.secondary * dip);
            rot[R_SHOULDER] = quat(x, -1.4 * tp.amplitude * tp.secondary * dip);
        }
        // March: alternating hip swings with counter-swinging arms and
        // a slow lateral drift.
        3 => {
            rot[L_HIP] = quat(x, 0.7 * tp.amplitude * osc);
            rot[R_HIP] = quat(x, -0.7 * tp.amplitude * osc * tp.asymmetry);
            rot[L_KNEE] = quat(x, 0.5 * tp.amplitude * (-osc).max(0.0));
            rot[R_KNEE] = quat(x, 0.5 * tp.amplitude * osc.max(0.0));
            rot[L_SHOULDER] = quat(x, -1.1 * tp.amplitude * tp.secondary * osc);
            rot[R_SHOULDER] = quat(x, 1.1 * tp.amplitude * tp.secondary * osc);
            root.x += 0.45 * tp.amplitude * tp.secondary * u;
            root.y += tp.root_bob * (2.0 * w * u).sin().abs();
        }
        // Arm circles: both arms sweep circles whose swept angle scales
        // with the amplitude envelope.
        4 => {
            let turn = (TAU * tp.cycles * u + tp.phase) * tp.lift;
            rot[L_SHOULDER] = quat(x, turn) * quat(z, 0.35 * tp.secondary * tp.lift);
            rot[R_SHOULDER] = quat(x, turn * tp.asymmetry) * quat(z, -0.35 * tp.secondary * tp.lift);
            root.y += tp.root_bob * (w * u).sin();
        }
        // Twist: torso yaw oscillation with arms held out.
        _ => {
            rot[SPINE] = quat(y, 0.8 * tp.amplitude * osc) * quat(x, tp.lean);
            rot[CHEST] = quat(y, 0.4 * tp.amplitude * osc);
            rot[NECK] = quat(y, -0.6 * tp.amplitude * tp.secondary * osc);
            rot[L_SHOULDER] = quat(z, 0.45 * PI * tp.lift);
            rot[R_SHOULDER] = quat(z, -0.45 * PI * tp.asymmetry * tp.lift);
            root.y += tp.root_bob * (2.0 * w * u).cos();
        }
    }
    AngleFrame {
        root_position: root,
        local_rotation: rot,
    }
}

/// Checks that a skeleton uses the canonical topology, which angle
/// trajectories are authored for.
fn check_topology(skel: &Skeleton) -> Result<()> {
    if skel.joint_count() != JOINT_COUNT || skel.parent != JOINT_PARENTS.to_vec() {
        return Err(Error::dim(format!(
            "skeleton {} does not match the canonical topology",
            skel.id
        )));
    }
    Ok(())
}

/// Drives joint angles through a skeleton's bone lengths.
///
/// Retargeting: the same trajectory rendered on two skeletons yields
/// the same global bone directions, since only lengths differ.
pub fn retarget(angles: &AngleTrajectory, skel: &Skeleton) -> Result<Trajectory3> {
    check_topology(skel)?;
    let mut frames = Vec::with_capacity(angles.len());
    for frame in angles {
        if frame.local_rotation.len() != JOINT_COUNT {
            return Err(Error::dim("angle frame has the wrong joint count"));
        }
        let mut pos = vec![Vector3::zeros(); JOINT_COUNT];
        let mut rot = vec![UnitQuaternion::identity(); JOINT_COUNT];
        pos[0] = frame.root_position;
        rot[0] = frame.local_rotation[0];
        for j in 1..JOINT_COUNT {
            let p = JOINT_PARENTS[j] as usize;
            rot[j] = rot[p] * frame.local_rotation[j];
            let dir = Vector3::from(skel.rest_direction[j]);
            pos[j] = pos[p] + rot[j] * (dir * skel.bone_length[j]);
        }
        frames.push(pos);
    }
    Ok(Trajectory3 { frames })
}

/// Renders a motion spec on a skeleton; also reports the characteristic
/// vector measured on the canonical skeleton.
pub fn synth_motion(
    spec: &MotionSpec,
    skel: &Skeleton,
    t_frames: usize,
    seed: u64,
) -> Result<(Trajectory3, Vec<f64>)> {
    let angles = motion_angles(spec, t_frames, seed)?;
    let traj = retarget(&angles, skel)?;
    let canonical = retarget(&angles, &canonical_skeleton())?;
    let characteristic = characteristic_of(
        &canonical,
        30.0,
        &CharacteristicScales::default(),
    );
    Ok((traj, characteristic))
}

/// Global unit bone directions per frame; invariant to bone lengths,
/// which makes them an oracle for retargeting.
pub fn extract_bone_directions(traj: &Trajectory3) -> Vec<Vec<Vector3<f64>>> {
    traj.frames
        .iter()
        .map(|frame| {
            (1..JOINT_COUNT)
                .map(|j| {
                    let p = JOINT_PARENTS[j] as usize;
                    let d = frame[j] - frame[p];
                    let n = d.norm();
                    if n > 0.0 {
                        d / n
                    } else {
                        Vector3::zeros()
                    }
                })
                .collect()
        })
        .collect()
}

/// Fixed rescaling constants mapping raw characteristics into `[0, 1]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CharacteristicScales {
    pub energy: f64,
    pub distance: f64,
    pub height: f64,
}

impl Default for CharacteristicScales {
    fn default() -> Self {
        CharacteristicScales {
            energy: 6.0,
            distance: 0.4,
            height: 1.4,
        }
    }
}

/// Measures (energy, distance, height) of a rendered trajectory and
/// rescales each entry into `[0, 1]`.
pub fn characteristic_of(traj: &Trajectory3, fps: f64, scales: &CharacteristicScales) -> Vec<f64> {
    let t = traj.frames.len();
    let mut energy = 0.0;
    if t > 1 {
        for w in traj.frames.windows(2) {
            for j in 0..JOINT_COUNT {
                energy += (w[1][j] - w[0][j]).norm_squared();
            }
        }
        energy *= fps * fps / ((t - 1) as f64 * JOINT_COUNT as f64);
    }
    let distance = (traj.frames[t - 1][0] - traj.frames[0][0]).norm();
    let height = traj
        .frames
        .iter()
        .map(|f| f[0].y)
        .fold(f64::NEG_INFINITY, f64::max);
    vec![
        (energy / scales.energy).clamp(0.0, 1.0),
        (distance / scales.distance).clamp(0.0, 1.0),
        (height / scales.height).clamp(0.0, 1.0),
    ]
}

/// Orthographic projection of a 3-D trajectory under a viewpoint.
pub fn project(
    traj: &Trajectory3,
    view: &Viewpoint,
    id: impl Into<String>,
    fps: f64,
) -> PoseSequence {
    let rot = nalgebra::Rotation3::from_axis_angle(&Vector3::x_axis(), view.elevation)
        * nalgebra::Rotation3::from_axis_angle(&Vector3::y_axis(), view.azimuth);
    let t = traj.frames.len();
    let j = traj.frames.first().map(|f| f.len()).unwrap_or(0);
    let mut coords = Vec::with_capacity(t * j * 2);
    for frame in &traj.frames {
        for p in frame {
            let q = rot * p;
            coords.push(view.scale * q.x);
            coords.push(view.scale * q.y);
        }
    }
    PoseSequence::from_flat(id, fps, t, j, coords).expect("projection preserves shape")
}

/// Generator configuration: the discrete factor sets and rendering
/// parameters a corpus is built from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    /// Seed for the corpus factor sets (skeletons, viewpoints, motions).
    pub seed: u64,
    pub skeleton_count: usize,
    pub viewpoint_count: usize,
    pub motion_class_count: usize,
    pub variations_per_class: usize,
    pub tuple_frames: usize,
    pub pair_frames: usize,
    pub fps: f64,
    pub azimuth_range: (f64, f64),
    pub elevation_range: (f64, f64),
    pub scale_range: (f64, f64),
    pub characteristic_scales: CharacteristicScales,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            seed: 17,
            skeleton_count: 8,
            viewpoint_count: 8,
            motion_class_count: MOTION_CLASS_COUNT,
            variations_per_class: 40,
            tuple_frames: 32,
            pair_frames: 32,
            fps: 30.0,
            azimuth_range: (-1.2, 1.2),
            elevation_range: (-0.35, 0.35),
            scale_range: (0.7, 1.4),
            characteristic_scales: CharacteristicScales::default(),
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.skeleton_count < 2 || self.viewpoint_count < 2 {
            return Err(Error::config(
                "corpus needs at least 2 skeletons and 2 viewpoints",
            ));
        }
        if self.motion_class_count < 2 || self.motion_class_count > MOTION_CLASS_COUNT {
            return Err(Error::config(format!(
                "motion class count must be 2..={MOTION_CLASS_COUNT}"
            )));
        }
        if self.variations_per_class < 2 {
            return Err(Error::config("each class needs at least 2 variations"));
        }
        if self.tuple_frames < MIN_FRAMES || self.pair_frames < MIN_FRAMES {
            return Err(Error::config(format!(
                "sequence lengths must be at least {MIN_FRAMES} frames"
            )));
        }
        if self.azimuth_range.0 >= self.azimuth_range.1
            || self.elevation_range.0 >= self.elevation_range.1
            || self.scale_range.0 >= self.scale_range.1
        {
            return Err(Error::config("factor ranges must be non-empty intervals"));
        }
        Ok(())
    }
}

/// Deterministically expanded factor sets.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub config: CorpusConfig,
    pub skeletons: Vec<Skeleton>,
    pub viewpoints: Vec<Viewpoint>,
    /// `motions[class][variation]`.
    pub motions: Vec<Vec<MotionSpec>>,
}

impl Corpus {
    /// Expands a config into concrete skeletons, viewpoints, and motion
    /// variations. Pure function of the config.
    pub fn build(config: &CorpusConfig) -> Result<Corpus> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

        let mut skeletons = Vec::with_capacity(config.skeleton_count);
        for i in 0..config.skeleton_count {
            skeletons.push(vary_skeleton(format!("skel{i:02}"), &mut rng));
        }

        let mut viewpoints = Vec::with_capacity(config.viewpoint_count);
        for _ in 0..config.viewpoint_count {
            let azimuth = rng.gen_range(config.azimuth_range.0..config.azimuth_range.1);
            let elevation = rng.gen_range(config.elevation_range.0..config.elevation_range.1);
            let scale = rng.gen_range(config.scale_range.0..config.scale_range.1);
            viewpoints.push(Viewpoint::new(azimuth, elevation, scale)?);
        }

        let mut motions = Vec::with_capacity(config.motion_class_count);
        for class_id in 0..config.motion_class_count {
            let mut variations = Vec::with_capacity(config.variations_per_class);
            for _ in 0..config.variations_per_class {
                let mut params: Vec<f64> =
                    (0..VARIATION_DIM).map(|_| rng.gen_range(0.0..1.0)).collect();
                // Corpus motions stay clearly articulated; the full
                // [0, 1] amplitude range (down to a static pose) remains
                // reachable through explicit specs.
                params[0] = 0.5 + 0.5 * params[0];
                variations.push(MotionSpec::new(class_id, params)?);
            }
            motions.push(variations);
        }
        Ok(Corpus {
            config: config.clone(),
            skeletons,
            viewpoints,
            motions,
        })
    }
}

/// Canonical skeleton with per-group proportion changes, so bodies
/// differ in build rather than just overall size.
fn vary_skeleton(id: String, rng: &mut ChaCha8Rng) -> Skeleton {
    let base = canonical_skeleton();
    let overall = rng.gen_range(0.85..1.15);
    let torso = rng.gen_range(0.8..1.25);
    let arms = rng.gen_range(0.75..1.3);
    let legs = rng.gen_range(0.75..1.3);
    let head = rng.gen_range(0.85..1.2);
    let group = |j: usize| -> f64 {
        match j {
            1 | 2 => torso,
            3 | 4 => head,
            5..=10 => arms,
            11..=16 => legs,
            _ => 1.0,
        }
    };
    let lengths: Vec<f64> = base
        .bone_length
        .iter()
        .enumerate()
        .map(|(j, &l)| l * overall * group(j))
        .collect();
    Skeleton::new(id, base.parent.clone(), lengths, base.rest_direction.clone())
        .expect("varied skeleton stays valid")
}

/// Role of one sequence inside a training tuple: which motion slot,
/// body slot, and viewpoint slot it was rendered from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MemberKey {
    M1S1V1,
    M2S1V2,
    M1S2V1,
    M2S2V1,
    M1S1V2,
    M1S2V2,
    M2S2V2,
    M3S1V1,
}

impl MemberKey {
    /// The eight combinations the disentanglement losses consume.
    pub const ALL: [MemberKey; 8] = [
        MemberKey::M1S1V1,
        MemberKey::M2S1V2,
        MemberKey::M1S2V1,
        MemberKey::M2S2V1,
        MemberKey::M1S1V2,
        MemberKey::M1S2V2,
        MemberKey::M2S2V2,
        MemberKey::M3S1V1,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            MemberKey::M1S1V1 => "m1s1v1",
            MemberKey::M2S1V2 => "m2s1v2",
            MemberKey::M1S2V1 => "m1s2v1",
            MemberKey::M2S2V1 => "m2s2v1",
            MemberKey::M1S1V2 => "m1s1v2",
            MemberKey::M1S2V2 => "m1s2v2",
            MemberKey::M2S2V2 => "m2s2v2",
            MemberKey::M3S1V1 => "m3s1v1",
        }
    }

    pub fn parse(s: &str) -> Result<MemberKey> {
        MemberKey::ALL
            .iter()
            .copied()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Lookup(format!("tuple member key {s}")))
    }

    /// Motion slot (1, 2, or 3), body slot (1 or 2), view slot (1 or 2).
    fn slots(&self) -> (u8, u8, u8) {
        match self {
            MemberKey::M1S1V1 => (1, 1, 1),
            MemberKey::M2S1V2 => (2, 1, 2),
            MemberKey::M1S2V1 => (1, 2, 1),
            MemberKey::M2S2V1 => (2, 2, 1),
            MemberKey::M1S1V2 => (1, 1, 2),
            MemberKey::M1S2V2 => (1, 2, 2),
            MemberKey::M2S2V2 => (2, 2, 2),
            MemberKey::M3S1V1 => (3, 1, 1),
        }
    }
}

/// One rendered member of a training tuple with its factor labels.
#[derive(Debug, Clone)]
pub struct TupleMember {
    pub key: MemberKey,
    pub seq: PoseSequence,
    pub motion_class: usize,
    pub variation: usize,
    pub skeleton_id: String,
    pub viewpoint_id: usize,
}

/// Eight sequences covering the factor combinations the losses need,
/// plus the characteristic vectors of the two same-class motions.
#[derive(Debug, Clone)]
pub struct TrainingTuple {
    pub tuple_id: String,
    pub members: Vec<TupleMember>,
    pub char_m1: Vec<f64>,
    pub char_m2: Vec<f64>,
}

impl TrainingTuple {
    pub fn member(&self, key: MemberKey) -> &TupleMember {
        self.members
            .iter()
            .find(|m| m.key == key)
            .expect("tuples always carry all eight members")
    }
}

/// An actor sequence with a degraded imitation of it.
#[derive(Debug, Clone)]
pub struct ImitationPair {
    pub pair_id: String,
    pub actor: PoseSequence,
    pub imitation: PoseSequence,
    pub degradation: f64,
    pub group_label: GroupLabel,
}

/// Cohort group of an imitation pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupLabel {
    Good,
    Poor,
}

impl GroupLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            GroupLabel::Good => "good",
            GroupLabel::Poor => "poor",
        }
    }

    pub fn parse(s: &str) -> Result<GroupLabel> {
        match s {
            "good" => Ok(GroupLabel::Good),
            "poor" => Ok(GroupLabel::Poor),
            other => Err(Error::Lookup(format!("group label {other}"))),
        }
    }
}

/// Stable seed derivation so every consumer of randomness draws from
/// its own stream.
pub fn derive_seed(root: u64, tag: &str, index: u64) -> u64 {
    // splitmix64 over a simple tag fold; stable across platforms.
    let mut h = root ^ 0x9e37_79b9_7f4a_7c15u64.wrapping_mul(index.wrapping_add(1));
    for byte in tag.bytes() {
        h = (h ^ byte as u64).wrapping_mul(0x100_0000_01b3);
    }
    let mut z = h;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Draws one training tuple: two same-class motion variations, one
/// off-class motion, two bodies, and two viewpoints.
pub fn sample_tuple(corpus: &Corpus, rng_seed: u64) -> Result<TrainingTuple> {
    let cfg = &corpus.config;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(rng_seed, "tuple", 0));

    let class1 = rng.gen_range(0..corpus.motions.len());
    let mut class3 = rng.gen_range(0..corpus.motions.len() - 1);
    if class3 >= class1 {
        class3 += 1;
    }
    let n_var = corpus.motions[class1].len();
    let var1 = rng.gen_range(0..n_var);
    let mut var2 = rng.gen_range(0..n_var - 1);
    if var2 >= var1 {
        var2 += 1;
    }
    let var3 = rng.gen_range(0..corpus.motions[class3].len());

    let s1 = rng.gen_range(0..corpus.skeletons.len());
    let mut s2 = rng.gen_range(0..corpus.skeletons.len() - 1);
    if s2 >= s1 {
        s2 += 1;
    }
    let v1 = rng.gen_range(0..corpus.viewpoints.len());
    let mut v2 = rng.gen_range(0..corpus.viewpoints.len() - 1);
    if v2 >= v1 {
        v2 += 1;
    }

    let t = cfg.tuple_frames;
    let motion_seed = |slot: u8| derive_seed(rng_seed, "motion", slot as u64);
    let spec_of = |slot: u8| -> &MotionSpec {
        match slot {
            1 => &corpus.motions[class1][var1],
            2 => &corpus.motions[class1][var2],
            _ => &corpus.motions[class3][var3],
        }
    };
    let labels_of = |slot: u8| -> (usize, usize) {
        match slot {
            1 => (class1, var1),
            2 => (class1, var2),
            _ => (class3, var3),
        }
    };

    // Angle trajectories per motion slot, shared by every rendering.
    let angles: Vec<AngleTrajectory> = (1..=3u8)
        .map(|slot| motion_angles(spec_of(slot), t, motion_seed(slot)))
        .collect::<Result<_>>()?;
    let canonical = canonical_skeleton();
    let char_of = |slot: u8| -> Result<Vec<f64>> {
        let traj = retarget(&angles[slot as usize - 1], &canonical)?;
        Ok(characteristic_of(&traj, cfg.fps, &cfg.characteristic_scales))
    };
    let char_m1 = char_of(1)?;
    let char_m2 = char_of(2)?;

    let tuple_id = format!("tuple-{rng_seed:016x}");
    let mut members = Vec::with_capacity(8);
    for key in MemberKey::ALL {
        let (m_slot, s_slot, v_slot) = key.slots();
        let skel_idx = if s_slot == 1 { s1 } else { s2 };
        let view_idx = if v_slot == 1 { v1 } else { v2 };
        let skel = &corpus.skeletons[skel_idx];
        let traj = retarget(&angles[m_slot as usize - 1], skel)?;
        let seq = project(
            &traj,
            &corpus.viewpoints[view_idx],
            format!("{tuple_id}/{}", key.as_str()),
            cfg.fps,
        );
        let (motion_class, variation) = labels_of(m_slot);
        members.push(TupleMember {
            key,
            seq,
            motion_class,
            variation,
            skeleton_id: skel.id.clone(),
            viewpoint_id: view_idx,
        });
    }
    Ok(TrainingTuple {
        tuple_id,
        members,
        char_m1,
        char_m2,
    })
}

/// Internal draw of one imitation scenario: the actor's and the
/// degraded imitation's angle trajectories plus factor assignments.
struct ImitationDraw {
    actor_angles: AngleTrajectory,
    imit_angles: AngleTrajectory,
    actor_skeleton: usize,
    imit_skeleton: usize,
    actor_viewpoint: usize,
    imit_viewpoint: usize,
}

/// Draws an actor/imitation pair at the given degradation level.
///
/// The imitation re-renders the actor's motion on a different body and
/// viewpoint with degradation-scaled angle noise, a smooth time warp,
/// and occasional frozen limbs.
pub fn sample_imitation(corpus: &Corpus, degradation: f64, rng_seed: u64) -> Result<ImitationPair> {
    let draw = draw_imitation(corpus, degradation, rng_seed)?;
    render_imitation(corpus, &draw, degradation, rng_seed, draw.imit_skeleton, draw.imit_viewpoint)
}

/// Alternative renderings of one imitation: the base pair plus the
/// same imitation under a different viewpoint and under a different
/// skeleton. Used to measure scoring robustness to nuisance factors.
pub struct ImitationVariants {
    pub base: ImitationPair,
    pub view_swapped: PoseSequence,
    pub skeleton_swapped: PoseSequence,
}

/// As [`sample_imitation`] but also renders the identical imitation
/// trajectory under one alternative viewpoint and one alternative
/// skeleton.
pub fn sample_imitation_variants(
    corpus: &Corpus,
    degradation: f64,
    rng_seed: u64,
) -> Result<ImitationVariants> {
    let draw = draw_imitation(corpus, degradation, rng_seed)?;
    let base = render_imitation(
        corpus,
        &draw,
        degradation,
        rng_seed,
        draw.imit_skeleton,
        draw.imit_viewpoint,
    )?;
    let alt_view = (draw.imit_viewpoint + 1) % corpus.viewpoints.len();
    let alt_skel = (draw.imit_skeleton + 1) % corpus.skeletons.len();
    let view_swapped = project(
        &retarget(&draw.imit_angles, &corpus.skeletons[draw.imit_skeleton])?,
        &corpus.viewpoints[alt_view],
        format!("{}/imitation-altview", base.pair_id),
        corpus.config.fps,
    );
    let skeleton_swapped = project(
        &retarget(&draw.imit_angles, &corpus.skeletons[alt_skel])?,
        &corpus.viewpoints[draw.imit_viewpoint],
        format!("{}/imitation-altskel", base.pair_id),
        corpus.config.fps,
    );
    Ok(ImitationVariants {
        base,
        view_swapped,
        skeleton_swapped,
    })
}

fn render_imitation(
    corpus: &Corpus,
    draw: &ImitationDraw,
    degradation: f64,
    rng_seed: u64,
    imit_skeleton: usize,
    imit_viewpoint: usize,
) -> Result<ImitationPair> {
    let cfg = &corpus.config;
    let pair_id = format!("pair-{rng_seed:016x}");
    let actor_traj = retarget(&draw.actor_angles, &corpus.skeletons[draw.actor_skeleton])?;
    let imit_traj = retarget(&draw.imit_angles, &corpus.skeletons[imit_skeleton])?;
    let actor = project(
        &actor_traj,
        &corpus.viewpoints[draw.actor_viewpoint],
        format!("{pair_id}/actor"),
        cfg.fps,
    );
    let imitation = project(
        &imit_traj,
        &corpus.viewpoints[imit_viewpoint],
        format!("{pair_id}/imitation"),
        cfg.fps,
    );
    let group_label = if degradation < 0.4 {
        GroupLabel::Good
    } else {
        GroupLabel::Poor
    };
    Ok(ImitationPair {
        pair_id,
        actor,
        imitation,
        degradation,
        group_label,
    })
}

fn draw_imitation(corpus: &Corpus, degradation: f64, rng_seed: u64) -> Result<ImitationDraw> {
    if !(0.0..=1.0).contains(&degradation) {
        return Err(Error::contract(format!(
            "degradation {degradation} outside [0, 1]"
        )));
    }
    let cfg = &corpus.config;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(rng_seed, "pair", 0));

    let class = rng.gen_range(0..corpus.motions.len());
    let var = rng.gen_range(0..corpus.motions[class].len());
    let spec = &corpus.motions[class][var];

    let sa = rng.gen_range(0..corpus.skeletons.len());
    let mut si = rng.gen_range(0..corpus.skeletons.len() - 1);
    if si >= sa {
        si += 1;
    }
    let va = rng.gen_range(0..corpus.viewpoints.len());
    let mut vi = rng.gen_range(0..corpus.viewpoints.len() - 1);
    if vi >= va {
        vi += 1;
    }

    let t = cfg.pair_frames;
    let motion_seed = derive_seed(rng_seed, "pair-motion", 0);
    let actor_angles = motion_angles(spec, t, motion_seed)?;

    // Smooth monotone time warp, zero at both endpoints.
    let warp_sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    let warp_amp = 0.12 * degradation * warp_sign;
    let mut imit_angles = motion_angles_warped(spec, t, motion_seed, |u| {
        u + warp_amp * (std::f64::consts::PI * u).sin()
    })?;

    // Degradation-scaled smooth angle wobble per joint.
    let noise_amp = 0.35 * degradation;
    let mut joint_noise = Vec::with_capacity(JOINT_COUNT);
    for _ in 0..JOINT_COUNT {
        let axis = Vector3::new(
            rng.gen_range(-1.0..1.0f64),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let axis = if axis.norm() < 1e-9 { Vector3::x() } else { axis };
        let freq = rng.gen_range(0.5..2.0);
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        joint_noise.push((axis, freq, phase));
    }
    if noise_amp > 0.0 {
        for (tt, frame) in imit_angles.iter_mut().enumerate() {
            let u = tt as f64 / t as f64;
            for (j, rotation) in frame.local_rotation.iter_mut().enumerate() {
                let (axis, freq, phase) = &joint_noise[j];
                let angle = noise_amp * (std::f64::consts::TAU * freq * u + phase).sin();
                *rotation = quat(*axis, angle) * *rotation;
            }
        }
    }

    // Frozen limbs: each limb independently drops out with
    // probability 0.3 * degradation.
    let limbs: [&[usize]; 4] = [&[5, 6, 7], &[8, 9, 10], &[11, 12, 13], &[14, 15, 16]];
    for limb in limbs {
        if rng.gen_bool((0.3 * degradation).clamp(0.0, 1.0)) {
            for frame in imit_angles.iter_mut() {
                for &j in limb {
                    frame.local_rotation[j] = UnitQuaternion::identity();
                }
            }
        }
    }

    Ok(ImitationDraw {
        actor_angles,
        imit_angles,
        actor_skeleton: sa,
        imit_skeleton: si,
        actor_viewpoint: va,
        imit_viewpoint: vi,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_spec(class_id: usize) -> MotionSpec {
        MotionSpec::new(class_id, vec![0.0; VARIATION_DIM]).unwrap()
    }

    fn mid_spec(class_id: usize) -> MotionSpec {
        MotionSpec::new(class_id, vec![0.5; VARIATION_DIM]).unwrap()
    }

    #[test]
    fn synthesis_is_deterministic_per_seed() {
        let skel = canonical_skeleton();
        let spec = mid_spec(3);
        let (a, ca) = synth_motion(&spec, &skel, 40, 7).unwrap();
        let (b, cb) = synth_motion(&spec, &skel, 40, 7).unwrap();
        assert_eq!(ca, cb);
        for (fa, fb) in a.frames.iter().zip(&b.frames) {
            for (pa, pb) in fa.iter().zip(fb) {
                assert_eq!(pa, pb);
            }
        }
        let (c, _) = synth_motion(&spec, &skel, 40, 8).unwrap();
        let same = a
            .frames
            .iter()
            .zip(&c.frames)
            .all(|(fa, fc)| fa.iter().zip(fc).all(|(x, y)| x == y));
        assert!(!same, "different seeds should dither the motion");
    }

    #[test]
    fn too_short_motion_is_a_contract_error() {
        let skel = canonical_skeleton();
        assert!(matches!(
            synth_motion(&mid_spec(0), &skel, 31, 0),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn single_bone_rotated_quarter_turn_moves_to_the_side() {
        // A unit bone along +Y rotated 90 degrees about the view axis
        // lands on -X (right-hand rule about +Z).
        let q = quat(Vector3::z(), std::f64::consts::FRAC_PI_2);
        let v = q * Vector3::new(0.0, 1.0, 0.0);
        assert!((v - Vector3::new(-1.0, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn retarget_preserves_bone_directions() {
        let spec = mid_spec(4);
        let angles = motion_angles(&spec, 36, 3).unwrap();
        let base = canonical_skeleton();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let other = vary_skeleton("other".into(), &mut rng);
        let ta = retarget(&angles, &base).unwrap();
        let tb = retarget(&angles, &other).unwrap();
        let da = extract_bone_directions(&ta);
        let db = extract_bone_directions(&tb);
        for (fa, fb) in da.iter().zip(&db) {
            for (a, b) in fa.iter().zip(fb) {
                assert!((a - b).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn retarget_onto_same_skeleton_is_identity() {
        let spec = mid_spec(1);
        let angles = motion_angles(&spec, 32, 0).unwrap();
        let skel = canonical_skeleton();
        let a = retarget(&angles, &skel).unwrap();
        let b = retarget(&angles, &skel).unwrap();
        for (fa, fb) in a.frames.iter().zip(&b.frames) {
            for (x, y) in fa.iter().zip(fb) {
                assert_eq!(x, y);
            }
        }
    }

    #[test]
    fn doubling_bone_lengths_doubles_offsets_from_root() {
        let spec = mid_spec(2);
        let angles = motion_angles(&spec, 32, 1).unwrap();
        let base = canonical_skeleton();
        let doubled = Skeleton::new(
            "doubled",
            base.parent.clone(),
            base.bone_length.iter().map(|l| l * 2.0).collect(),
            base.rest_direction.clone(),
        )
        .unwrap();
        let ta = retarget(&angles, &base).unwrap();
        let tb = retarget(&angles, &doubled).unwrap();
        for (fa, fb) in ta.frames.iter().zip(&tb.frames) {
            for j in 0..JOINT_COUNT {
                let oa = fa[j] - fa[0];
                let ob = fb[j] - fb[0];
                assert!((ob - oa * 2.0).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn retarget_rejects_foreign_topology() {
        let spec = mid_spec(0);
        let angles = motion_angles(&spec, 32, 0).unwrap();
        let skel = Skeleton::new(
            "line",
            vec![-1, 0, 1],
            vec![1.0, 1.0, 1.0],
            vec![[0.0, 1.0, 0.0]; 3],
        )
        .unwrap();
        assert!(matches!(retarget(&angles, &skel), Err(Error::Dimension(_))));
    }

    #[test]
    fn frontal_projection_drops_z() {
        let traj = Trajectory3 {
            frames: vec![vec![Vector3::new(0.3, -0.7, 2.5)]],
        };
        let view = Viewpoint::new(0.0, 0.0, 1.0).unwrap();
        let seq = project(&traj, &view, "p", 30.0);
        assert_eq!(seq.at(0, 0), (0.3, -0.7));
    }

    #[test]
    fn opposite_azimuth_mirrors_the_frontal_view() {
        let spec = mid_spec(5);
        let (traj, _) = synth_motion(&spec, &canonical_skeleton(), 32, 2).unwrap();
        let front = project(&traj, &Viewpoint::new(0.0, 0.0, 1.0).unwrap(), "f", 30.0);
        let back = project(
            &traj,
            &Viewpoint::new(std::f64::consts::PI, 0.0, 1.0).unwrap(),
            "b",
            30.0,
        );
        for t in 0..front.frame_count() {
            for j in 0..JOINT_COUNT {
                let (fx, fy) = front.at(t, j);
                let (bx, by) = back.at(t, j);
                assert!((fx + bx).abs() < 1e-9);
                assert!((fy - by).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn scale_doubles_all_planar_distances() {
        let spec = mid_spec(3);
        let (traj, _) = synth_motion(&spec, &canonical_skeleton(), 32, 2).unwrap();
        let s1 = project(&traj, &Viewpoint::new(0.4, 0.1, 1.0).unwrap(), "a", 30.0);
        let s2 = project(&traj, &Viewpoint::new(0.4, 0.1, 2.0).unwrap(), "b", 30.0);
        for t in [0, 15, 31] {
            for j in 1..JOINT_COUNT {
                let (ax, ay) = s1.at(t, j);
                let (rx, ry) = s1.at(t, 0);
                let (bx, by) = s2.at(t, j);
                let (qx, qy) = s2.at(t, 0);
                let d1 = ((ax - rx).powi(2) + (ay - ry).powi(2)).sqrt();
                let d2 = ((bx - qx).powi(2) + (by - qy).powi(2)).sqrt();
                assert!((d2 - 2.0 * d1).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn zero_variation_renders_a_static_rest_pose() {
        for class_id in 0..MOTION_CLASS_COUNT {
            let (traj, characteristic) =
                synth_motion(&zero_spec(class_id), &canonical_skeleton(), 32, 9).unwrap();
            assert_eq!(traj.frames.len(), 32);
            let first = &traj.frames[0];
            for frame in &traj.frames {
                for (p, q) in frame.iter().zip(first) {
                    assert!((p - q).norm() < 1e-12, "class {class_id} moved");
                }
            }
            // Static pose: zero energy, zero travel.
            assert_eq!(characteristic[0], 0.0);
            assert_eq!(characteristic[1], 0.0);
        }
    }

    #[test]
    fn characteristics_stay_in_unit_interval_across_the_corpus() {
        let corpus = Corpus::build(&CorpusConfig {
            variations_per_class: 4,
            ..CorpusConfig::default()
        })
        .unwrap();
        for class in &corpus.motions {
            for spec in class {
                let (_, c) = synth_motion(spec, &corpus.skeletons[0], 32, 11).unwrap();
                assert_eq!(c.len(), CHARACTERISTIC_DIM);
                assert!(c.iter().all(|v| (0.0..=1.0).contains(v)), "{c:?}");
            }
        }
    }

    #[test]
    fn tuples_respect_their_label_invariants() {
        let corpus = Corpus::build(&CorpusConfig {
            variations_per_class: 3,
            ..CorpusConfig::default()
        })
        .unwrap();
        for seed in 0..20 {
            let tuple = sample_tuple(&corpus, seed).unwrap();
            assert_eq!(tuple.members.len(), 8);
            let m1 = tuple.member(MemberKey::M1S1V1);
            let m2 = tuple.member(MemberKey::M2S2V2);
            let m3 = tuple.member(MemberKey::M3S1V1);
            assert_eq!(m1.motion_class, m2.motion_class);
            assert_ne!(m1.variation, m2.variation);
            assert_ne!(m1.motion_class, m3.motion_class);
            let c = tuple.member(MemberKey::M1S2V1);
            assert_ne!(m1.skeleton_id, c.skeleton_id);
            let e = tuple.member(MemberKey::M1S1V2);
            assert_ne!(m1.viewpoint_id, e.viewpoint_id);
            // Repeated slots carry identical factor labels.
            assert_eq!(
                m1.motion_class,
                tuple.member(MemberKey::M1S2V2).motion_class
            );
            assert_eq!(m1.variation, tuple.member(MemberKey::M1S2V2).variation);
        }
    }

    #[test]
    fn tuple_sampling_is_deterministic() {
        let corpus = Corpus::build(&CorpusConfig::default()).unwrap();
        let a = sample_tuple(&corpus, 99).unwrap();
        let b = sample_tuple(&corpus, 99).unwrap();
        for (ma, mb) in a.members.iter().zip(&b.members) {
            assert_eq!(ma.seq.coords(), mb.seq.coords());
        }
    }

    #[test]
    fn minimal_corpus_still_yields_valid_tuples() {
        let corpus = Corpus::build(&CorpusConfig {
            skeleton_count: 2,
            viewpoint_count: 2,
            motion_class_count: 2,
            variations_per_class: 2,
            ..CorpusConfig::default()
        })
        .unwrap();
        let tuple = sample_tuple(&corpus, 5).unwrap();
        let m1 = tuple.member(MemberKey::M1S1V1);
        let m3 = tuple.member(MemberKey::M3S1V1);
        assert_ne!(m1.motion_class, m3.motion_class);
    }

    #[test]
    fn too_small_corpus_is_a_config_error() {
        assert!(matches!(
            Corpus::build(&CorpusConfig {
                skeleton_count: 1,
                ..CorpusConfig::default()
            }),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            Corpus::build(&CorpusConfig {
                variations_per_class: 1,
                ..CorpusConfig::default()
            }),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn zero_degradation_changes_only_body_and_view() {
        let corpus = Corpus::build(&CorpusConfig::default()).unwrap();
        let pair = sample_imitation(&corpus, 0.0, 42).unwrap();
        assert_eq!(pair.group_label, GroupLabel::Good);
        assert_eq!(pair.actor.frame_count(), pair.imitation.frame_count());
        // Rendered coordinates differ because of skeleton and viewpoint,
        // but the underlying angles are identical at zero degradation.
        assert_ne!(pair.actor.coords(), pair.imitation.coords());
    }

    #[test]
    fn imitation_sampling_is_deterministic_and_validated() {
        let corpus = Corpus::build(&CorpusConfig::default()).unwrap();
        let a = sample_imitation(&corpus, 1.0, 13).unwrap();
        let b = sample_imitation(&corpus, 1.0, 13).unwrap();
        assert_eq!(a.imitation.coords(), b.imitation.coords());
        assert_eq!(a.group_label, GroupLabel::Poor);
        assert!(matches!(
            sample_imitation(&corpus, 1.5, 0),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn angle_deviation_grows_with_degradation() {
        let corpus = Corpus::build(&CorpusConfig::default()).unwrap();
        // Root-centered coordinate deviation between actor and imitation
        // poses stands in for angle deviation; its mean must trend
        // upward with degradation.
        let mut means = Vec::new();
        for &d in &[0.0, 0.25, 0.5, 0.75, 1.0] {
            let mut total = 0.0;
            let mut count = 0;
            for seed in 0..40 {
                let pair = sample_imitation(&corpus, d, seed).unwrap();
                let a = &pair.actor;
                let b = &pair.imitation;
                for t in 0..a.frame_count() {
                    let (arx, ary) = a.at(t, 0);
                    let (brx, bry) = b.at(t, 0);
                    for j in 0..JOINT_COUNT {
                        let (ax, ay) = a.at(t, j);
                        let (bx, by) = b.at(t, j);
                        total += ((ax - arx) - (bx - brx)).powi(2)
                            + ((ay - ary) - (by - bry)).powi(2);
                        count += 1;
                    }
                }
            }
            means.push(total / count as f64);
        }
        for w in means.windows(2) {
            assert!(
                w[1] >= w[0] * 0.8,
                "deviation should trend upward: {means:?}"
            );
        }
        assert!(means[4] > means[0], "max degradation must deviate most");
    }

    #[test]
    fn skeleton_pair_distribution_is_roughly_uniform() {
        let corpus = Corpus::build(&CorpusConfig {
            skeleton_count: 4,
            ..CorpusConfig::default()
        })
        .unwrap();
        let mut counts = vec![0usize; 4 * 4];
        let trials = 10_000;
        for seed in 0..trials {
            let tuple = sample_tuple(&corpus, seed as u64).unwrap();
            let s1: usize = tuple.member(MemberKey::M1S1V1).skeleton_id[4..]
                .parse()
                .unwrap();
            let s2: usize = tuple.member(MemberKey::M1S2V1).skeleton_id[4..]
                .parse()
                .unwrap();
            counts[s1 * 4 + s2] += 1;
        }
        // 12 valid ordered pairs (s1 != s2), expectation trials/12 each;
        // allow 3 sigma of multinomial noise.
        let p = 1.0 / 12.0;
        let expect = trials as f64 * p;
        let sigma = (trials as f64 * p * (1.0 - p)).sqrt();
        for s1 in 0..4 {
            for s2 in 0..4 {
                let c = counts[s1 * 4 + s2] as f64;
                if s1 == s2 {
                    assert_eq!(c, 0.0);
                } else {
                    assert!(
                        (c - expect).abs() < 3.0 * sigma,
                        "pair ({s1},{s2}) count {c} vs expectation {expect:.1}"
                    );
                }
            }
        }
    }
}
