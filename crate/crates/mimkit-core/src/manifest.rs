//! Dataset manifests (synthset v1) and per-command run manifests.
//!
//! A generated dataset is a directory of pose files plus one JSON
//! manifest describing every record and the exact generator
//! configuration, so a rerun with the same seed reproduces identical
//! bytes.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pose::{read_posejson, write_posejson};
use crate::synth::{
    sample_imitation, sample_tuple, Corpus, CorpusConfig, GroupLabel, ImitationPair, MemberKey,
    TrainingTuple, TupleMember,
};
use crate::train::TrainDataset;

/// Manifest format version.
pub const SYNTHSET_VERSION: u32 = 1;

/// One rendered tuple member on disk.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MemberRecord {
    pub key: String,
    pub path: String,
    pub motion_class: usize,
    pub variation: usize,
    pub skeleton: String,
    pub viewpoint: usize,
}

/// One training tuple on disk.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TupleRecord {
    pub tuple_id: String,
    pub members: Vec<MemberRecord>,
    pub char_m1: Vec<f64>,
    pub char_m2: Vec<f64>,
}

/// One actor/imitation pair on disk.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairRecord {
    pub pair_id: String,
    pub actor: String,
    pub imitation: String,
    pub degradation: f64,
    pub group_label: String,
}

/// Manifest of a generated tuple set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TupleSetManifest {
    pub version: u32,
    pub kind: String,
    pub seed: u64,
    pub config_fingerprint: String,
    pub corpus: CorpusConfig,
    pub records: Vec<TupleRecord>,
}

/// Manifest of a generated imitation set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImitationSetManifest {
    pub version: u32,
    pub kind: String,
    pub seed: u64,
    pub config_fingerprint: String,
    pub corpus: CorpusConfig,
    pub records: Vec<PairRecord>,
}

/// How the degradations of an imitation set are drawn.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum ImitationSpec {
    /// Degradation uniform in `[0, 1]` — the training mix.
    UniformMix { count: usize },
    /// A scoring cohort: `good` pairs at degradation `[0, 0.3]`,
    /// `poor` pairs at `[0.5, 1]`.
    Cohort { good: usize, poor: usize },
    /// Fixed degradation levels, `per_level` pairs each.
    Grid { levels: Vec<f64>, per_level: usize },
}

/// Stable fingerprint of a generator configuration.
pub fn corpus_fingerprint(config: &CorpusConfig) -> String {
    use sha2::{Digest, Sha256};
    let canonical = serde_json::to_vec(config).expect("config serializes");
    let mut hasher = Sha256::new();
    hasher.update(&canonical);
    hex_string(&hasher.finalize())
}

/// Stable fingerprint of any serializable configuration.
pub fn config_fingerprint<T: Serialize>(config: &T) -> String {
    use sha2::{Digest, Sha256};
    let canonical = serde_json::to_vec(config).expect("config serializes");
    let mut hasher = Sha256::new();
    hasher.update(&canonical);
    hex_string(&hasher.finalize())
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Renders `count` tuples to `<out_dir>/tuples/` and writes
/// `<out_dir>/tuples.json`. Deterministic per seed.
pub fn generate_tuple_set(
    config: &CorpusConfig,
    count: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<TupleSetManifest> {
    let corpus = Corpus::build(config)?;
    let files_dir = out_dir.join("tuples");
    std::fs::create_dir_all(&files_dir)?;
    let fingerprint = corpus_fingerprint(config);

    let mut records = Vec::with_capacity(count);
    for i in 0..count {
        let tuple = sample_tuple(&corpus, seed.wrapping_add(i as u64))?;
        let mut members = Vec::with_capacity(8);
        for member in &tuple.members {
            let rel = format!("tuples/{}-{}.posejson", tuple.tuple_id, member.key.as_str());
            write_posejson(&member.seq, &out_dir.join(&rel))?;
            members.push(MemberRecord {
                key: member.key.as_str().to_string(),
                path: rel,
                motion_class: member.motion_class,
                variation: member.variation,
                skeleton: member.skeleton_id.clone(),
                viewpoint: member.viewpoint_id,
            });
        }
        records.push(TupleRecord {
            tuple_id: tuple.tuple_id.clone(),
            members,
            char_m1: tuple.char_m1.clone(),
            char_m2: tuple.char_m2.clone(),
        });
    }
    let manifest = TupleSetManifest {
        version: SYNTHSET_VERSION,
        kind: "tuples".to_string(),
        seed,
        config_fingerprint: fingerprint,
        corpus: config.clone(),
        records,
    };
    let bytes = serde_json::to_vec_pretty(&manifest)?;
    std::fs::write(out_dir.join("tuples.json"), bytes)?;
    Ok(manifest)
}

/// Renders an imitation set to `<out_dir>/<name>/` and writes
/// `<out_dir>/<name>.json`. Deterministic per seed.
pub fn generate_imitation_set(
    config: &CorpusConfig,
    spec: &ImitationSpec,
    seed: u64,
    out_dir: &Path,
    name: &str,
) -> Result<ImitationSetManifest> {
    use rand::Rng;
    use rand::SeedableRng;

    let corpus = Corpus::build(config)?;
    let files_dir = out_dir.join(name);
    std::fs::create_dir_all(&files_dir)?;
    let fingerprint = corpus_fingerprint(config);

    // Degradation levels first, then rendering, all seeded.
    let mut degradations = Vec::new();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x1357_9bdf);
    match spec {
        ImitationSpec::UniformMix { count } => {
            for _ in 0..*count {
                degradations.push(rng.gen_range(0.0..=1.0));
            }
        }
        ImitationSpec::Cohort { good, poor } => {
            for _ in 0..*good {
                degradations.push(rng.gen_range(0.0..=0.3));
            }
            for _ in 0..*poor {
                degradations.push(rng.gen_range(0.5..=1.0));
            }
        }
        ImitationSpec::Grid { levels, per_level } => {
            for &level in levels {
                for _ in 0..*per_level {
                    degradations.push(level);
                }
            }
        }
    }

    let mut records = Vec::with_capacity(degradations.len());
    for (i, &degradation) in degradations.iter().enumerate() {
        let pair = sample_imitation(&corpus, degradation, seed.wrapping_add(i as u64))?;
        let actor_rel = format!("{name}/{}-actor.posejson", pair.pair_id);
        let imit_rel = format!("{name}/{}-imitation.posejson", pair.pair_id);
        write_posejson(&pair.actor, &out_dir.join(&actor_rel))?;
        write_posejson(&pair.imitation, &out_dir.join(&imit_rel))?;
        records.push(PairRecord {
            pair_id: pair.pair_id.clone(),
            actor: actor_rel,
            imitation: imit_rel,
            degradation,
            group_label: pair.group_label.as_str().to_string(),
        });
    }
    let manifest = ImitationSetManifest {
        version: SYNTHSET_VERSION,
        kind: "imitation".to_string(),
        seed,
        config_fingerprint: fingerprint,
        corpus: config.clone(),
        records,
    };
    let bytes = serde_json::to_vec_pretty(&manifest)?;
    std::fs::write(out_dir.join(format!("{name}.json")), bytes)?;
    Ok(manifest)
}

fn manifest_dir(path: &Path) -> PathBuf {
    path.parent().map(PathBuf::from).unwrap_or_else(|| PathBuf::from("."))
}

/// Reads a tuple-set manifest and all its pose files.
pub fn load_tuple_set(path: &Path) -> Result<(TupleSetManifest, Vec<TrainingTuple>)> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::Manifest(format!("cannot read {}: {e}", path.display())))?;
    let manifest: TupleSetManifest = serde_json::from_slice(&bytes)?;
    if manifest.version != SYNTHSET_VERSION || manifest.kind != "tuples" {
        return Err(Error::Manifest(format!(
            "{} is not a version-{SYNTHSET_VERSION} tuple manifest",
            path.display()
        )));
    }
    let base = manifest_dir(path);
    let mut tuples = Vec::with_capacity(manifest.records.len());
    for record in &manifest.records {
        if record.members.len() != 8 {
            return Err(Error::Manifest(format!(
                "tuple {} has {} members",
                record.tuple_id,
                record.members.len()
            )));
        }
        let mut members = Vec::with_capacity(8);
        for m in &record.members {
            let seq = read_posejson(&base.join(&m.path))?;
            members.push(TupleMember {
                key: MemberKey::parse(&m.key)?,
                seq,
                motion_class: m.motion_class,
                variation: m.variation,
                skeleton_id: m.skeleton.clone(),
                viewpoint_id: m.viewpoint,
            });
        }
        tuples.push(TrainingTuple {
            tuple_id: record.tuple_id.clone(),
            members,
            char_m1: record.char_m1.clone(),
            char_m2: record.char_m2.clone(),
        });
    }
    Ok((manifest, tuples))
}

/// Reads an imitation-set manifest and all its pose files.
pub fn load_imitation_set(path: &Path) -> Result<(ImitationSetManifest, Vec<ImitationPair>)> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::Manifest(format!("cannot read {}: {e}", path.display())))?;
    let manifest: ImitationSetManifest = serde_json::from_slice(&bytes)?;
    if manifest.version != SYNTHSET_VERSION || manifest.kind != "imitation" {
        return Err(Error::Manifest(format!(
            "{} is not a version-{SYNTHSET_VERSION} imitation manifest",
            path.display()
        )));
    }
    let base = manifest_dir(path);
    let mut pairs = Vec::with_capacity(manifest.records.len());
    for record in &manifest.records {
        pairs.push(ImitationPair {
            pair_id: record.pair_id.clone(),
            actor: read_posejson(&base.join(&record.actor))?,
            imitation: read_posejson(&base.join(&record.imitation))?,
            degradation: record.degradation,
            group_label: GroupLabel::parse(&record.group_label)?,
        });
    }
    Ok((manifest, pairs))
}

/// Loads tuples and pairs for training, verifying that both sets came
/// from the same generator configuration.
pub fn load_train_dataset(tuples_path: &Path, pairs_path: &Path) -> Result<TrainDataset> {
    let (tm, tuples) = load_tuple_set(tuples_path)?;
    let (pm, pairs) = load_imitation_set(pairs_path)?;
    if tm.config_fingerprint != pm.config_fingerprint {
        return Err(Error::Manifest(format!(
            "generator fingerprints differ: {} vs {}",
            tm.config_fingerprint, pm.config_fingerprint
        )));
    }
    Ok(TrainDataset {
        tuples,
        pairs,
        fingerprint: tm.config_fingerprint,
    })
}

/// Provenance record written next to every command's outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_fingerprint: String,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub seed: u64,
    pub tool_version: String,
    pub duration_seconds: f64,
}

/// Writes `run_manifest.json` into `dir`. Contains wall-clock timing,
/// so it is the one artifact excluded from byte-identity guarantees.
pub fn write_run_manifest(manifest: &RunManifest, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let bytes = serde_json::to_vec_pretty(manifest)?;
    std::fs::write(dir.join("run_manifest.json"), bytes)?;
    Ok(())
}
