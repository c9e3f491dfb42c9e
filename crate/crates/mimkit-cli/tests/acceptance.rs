//! Acceptance suite: one test per shipping criterion, each printing a
//! PASS/FAIL line. Criteria 5-9 share one reference pipeline run
//! (generate, train full + synthetic-only, evaluate) driven through
//! the CLI binary; run with `--nocapture` to watch progress.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use mimkit_core::autodiff::gradcheck::{check_gradients, random_tensor};
use mimkit_core::autodiff::{Tape, Tensor};
use mimkit_core::dtw::dtw_align;
use mimkit_core::eval::{
    auc_mann_whitney, encode_labeled, heldout_reconstruction_mse, median, nn_retrieval_accuracy,
    roc_auc, ExperimentReport, Label, LabeledScore, Orientation,
};
use mimkit_core::loss::{
    motion_quadruplet, nuanced_loss, reconstruction_loss, triplet, LossWeights,
};
use mimkit_core::manifest::load_tuple_set;
use mimkit_core::net::{ModelBundle, SegmentNet, MOTION_CHANNELS, SHAPE_CHANNELS, VIEW_CHANNELS};
use mimkit_core::pose::PoseSequence;
use mimkit_core::score::{cami_score, ScoreOptions};
use mimkit_core::synth::{
    sample_imitation, sample_imitation_variants, Corpus, TupleMember,
};

fn check(criterion: &str, ok: bool, detail: &str) {
    let tag = if ok { "PASS" } else { "FAIL" };
    println!("[{tag}] {criterion}: {detail}");
    assert!(ok, "{criterion}: {detail}");
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_mimkit")
}

fn run_cli(args: &[&str]) {
    let output = Command::new(bin())
        .args(args)
        .output()
        .expect("mimkit binary runs");
    if !output.status.success() {
        panic!(
            "mimkit {:?} failed ({}):\n{}",
            args,
            output.status,
            String::from_utf8_lossy(&output.stderr)
        );
    }
}

// ---------------------------------------------------------------------
// Reference pipeline fixture (criteria 5-9)
// ---------------------------------------------------------------------

struct Reference {
    gen_secs: f64,
    train_secs: f64,
    bundle_full: ModelBundle<f32>,
    report: ExperimentReport,
    corpus: Corpus,
    heldout: Vec<TupleMember>,
}

static REFERENCE: OnceLock<Reference> = OnceLock::new();

fn reference() -> &'static Reference {
    REFERENCE.get_or_init(|| {
        let root = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance-reference");
        let _ = std::fs::remove_dir_all(&root);
        std::fs::create_dir_all(&root).unwrap();
        let config_path = root.join("reference.toml");
        // Desk-scale reference configuration: 2,000 tuples + 500 pairs,
        // 30 epochs, batch 64, fixed seed.
        std::fs::write(&config_path, "seed = 7\n").unwrap();
        let cfg = config_path.to_str().unwrap().to_string();

        let data = root.join("data");
        println!("[reference] generating datasets ...");
        let t0 = Instant::now();
        run_cli(&["gen", "--config", &cfg, "--out", data.to_str().unwrap()]);
        let gen_secs = t0.elapsed().as_secs_f64();
        println!("[reference] gen took {gen_secs:.0}s");

        let tuples = data.join("tuples.json");
        let pairs = data.join("pairs.json");
        let model_full = root.join("model_full");
        println!("[reference] training full model ...");
        let t1 = Instant::now();
        run_cli(&[
            "train",
            "--config",
            &cfg,
            "--tuples",
            tuples.to_str().unwrap(),
            "--pairs",
            pairs.to_str().unwrap(),
            "--out",
            model_full.to_str().unwrap(),
        ]);
        let train_secs = t1.elapsed().as_secs_f64();
        println!("[reference] full training took {train_secs:.0}s");

        let model_syn = root.join("model_syn");
        println!("[reference] training syn_only ablation ...");
        run_cli(&[
            "train",
            "--config",
            &cfg,
            "--ablation",
            "syn_only",
            "--tuples",
            tuples.to_str().unwrap(),
            "--pairs",
            pairs.to_str().unwrap(),
            "--out",
            model_syn.to_str().unwrap(),
        ]);

        let report_dir = root.join("report");
        println!("[reference] evaluating cohort grid ...");
        run_cli(&[
            "eval",
            "--config",
            &cfg,
            "--bundle",
            &format!("full={}", model_full.join("bundle").display()),
            "--bundle",
            &format!("syn_only={}", model_syn.join("bundle").display()),
            "--cohort",
            &format!("ref={}", data.join("cohort.json").display()),
            "--out",
            report_dir.to_str().unwrap(),
        ]);

        let report: ExperimentReport = serde_json::from_slice(
            &std::fs::read(report_dir.join("report.json")).unwrap(),
        )
        .unwrap();

        let bundle_full = ModelBundle::<f32>::load(&model_full.join("bundle")).unwrap();
        let (heldout_manifest, heldout_tuples) =
            load_tuple_set(&data.join("heldout").join("tuples.json")).unwrap();
        let corpus = Corpus::build(&heldout_manifest.corpus).unwrap();
        let heldout: Vec<TupleMember> = heldout_tuples.into_iter().flat_map(|t| t.members).collect();

        Reference {
            gen_secs,
            train_secs,
            bundle_full,
            report,
            corpus,
            heldout,
        }
    })
}

fn cell_auc<'a>(report: &'a ExperimentReport, bundle: &str, mask: &str) -> f64 {
    report
        .cells
        .iter()
        .find(|c| c.bundle == bundle && c.mask == mask)
        .unwrap_or_else(|| panic!("missing cell {bundle}/{mask}"))
        .auc
}

// ---------------------------------------------------------------------
// Criterion 1: gradient fidelity
// ---------------------------------------------------------------------

#[test]
fn acceptance_01_gradient_fidelity() {
    let start = Instant::now();
    let eps = 1e-4;
    let tol = 1e-4;
    let coords = 20;
    let mut total_checked = 0usize;
    let mut worst = 0.0f64;

    let mut run = |name: &str,
                   leaves: Vec<Tensor<f64>>,
                   build: Box<dyn Fn(&mut Tape<f64>, &[mimkit_core::autodiff::NodeId]) -> mimkit_core::autodiff::NodeId>| {
        let report = check_gradients(&leaves, coords, eps, tol, 0xace, |t, ids| build(t, ids));
        total_checked += report.checked;
        worst = worst.max(report.max_rel_error);
        println!("  {name}: {} coords, max rel err {:.2e}", report.checked, report.max_rel_error);
    };

    // Individual operations.
    run(
        "conv1d_reflect(k8 s2)",
        vec![
            random_tensor(&[3, 2, 16], 1),
            random_tensor(&[4, 3, 8], 2),
            random_tensor(&[4], 3),
        ],
        Box::new(|t, ids| {
            let y = t.conv1d_reflect(ids[0], ids[1], ids[2], 8, 2).unwrap();
            t.mean_all(y)
        }),
    );
    run(
        "conv1d_reflect(k7 s1)",
        vec![
            random_tensor(&[2, 2, 12], 4),
            random_tensor(&[3, 2, 7], 5),
            random_tensor(&[3], 6),
        ],
        Box::new(|t, ids| {
            let y = t.conv1d_reflect(ids[0], ids[1], ids[2], 7, 1).unwrap();
            t.mean_all(y)
        }),
    );
    run(
        "leaky_relu(0.2)",
        vec![random_tensor(&[4, 3, 6], 7)],
        Box::new(|t, ids| {
            let y = t.leaky_relu(ids[0], 0.2);
            t.mean_all(y)
        }),
    );
    run(
        "max_pool2",
        vec![random_tensor(&[3, 2, 8], 8)],
        Box::new(|t, ids| {
            let y = t.max_pool2(ids[0]).unwrap();
            let y = t.square(y);
            t.mean_all(y)
        }),
    );
    run(
        "avg_pool2",
        vec![random_tensor(&[3, 2, 8], 9)],
        Box::new(|t, ids| {
            let y = t.avg_pool2(ids[0]).unwrap();
            let y = t.square(y);
            t.mean_all(y)
        }),
    );
    run(
        "global_max_pool",
        vec![random_tensor(&[4, 2, 7], 10)],
        Box::new(|t, ids| {
            let y = t.global_max_pool(ids[0]).unwrap();
            let y = t.square(y);
            t.mean_all(y)
        }),
    );
    run(
        "global_avg_pool",
        vec![random_tensor(&[4, 2, 7], 11)],
        Box::new(|t, ids| {
            let y = t.global_avg_pool(ids[0]).unwrap();
            let y = t.square(y);
            t.mean_all(y)
        }),
    );
    run(
        "upsample2",
        vec![random_tensor(&[3, 2, 5], 12)],
        Box::new(|t, ids| {
            let y = t.upsample2(ids[0]).unwrap();
            let y = t.square(y);
            t.mean_all(y)
        }),
    );
    run(
        "dropout(seeded)",
        vec![random_tensor(&[4, 2, 6], 13)],
        Box::new(|t, ids| {
            let y = t.dropout(ids[0], 0.2, 1234);
            let y = t.square(y);
            t.mean_all(y)
        }),
    );
    run(
        "add+concat+tile",
        vec![random_tensor(&[2, 2, 4], 14), random_tensor(&[3, 2, 1], 15)],
        Box::new(|t, ids| {
            let tiled = t.tile_time(ids[1], 4).unwrap();
            let cat = t.concat_channels(&[ids[0], tiled]).unwrap();
            let doubled = t.add(cat, cat).unwrap();
            let y = t.square(doubled);
            t.mean_all(y)
        }),
    );
    run(
        "l2_norm",
        vec![random_tensor(&[5, 3, 2], 16)],
        Box::new(|t, ids| {
            let n = t.l2_norm(ids[0]).unwrap();
            t.mean_all(n)
        }),
    );
    run(
        "inner_product",
        vec![random_tensor(&[5, 3, 2], 17), random_tensor(&[5, 3, 2], 18)],
        Box::new(|t, ids| {
            let d = t.dot(ids[0], ids[1]).unwrap();
            t.mean_all(d)
        }),
    );
    run(
        "mean+sum_per_element+slice",
        vec![random_tensor(&[3, 4, 5], 19)],
        Box::new(|t, ids| {
            let s = t.slice_elements(ids[0], 1, 2).unwrap();
            let sq = t.square(s);
            let per = t.sum_per_element(sq);
            t.mean_all(per)
        }),
    );

    // Losses. Margins are chosen so hinges sit strictly on their
    // active branch (finite differences need a smooth neighbourhood).
    run(
        "triplet_loss",
        vec![
            random_tensor(&[6, 2, 1], 20),
            random_tensor(&[6, 2, 1], 21),
            random_tensor(&[6, 2, 1], 22),
        ],
        Box::new(|t, ids| {
            let l = triplet(t, ids[0], ids[1], ids[2], 50.0).unwrap();
            t.mean_all(l)
        }),
    );
    run(
        "shape_viewpoint_loss",
        vec![
            random_tensor(&[16, 2, 1], 23),
            random_tensor(&[16, 2, 1], 24),
            random_tensor(&[16, 2, 1], 25),
        ],
        Box::new(|t, ids| {
            let l = mimkit_core::loss::shape_loss(t, ids[0], ids[1], ids[2], 50.0).unwrap();
            t.mean_all(l)
        }),
    );
    let weights = LossWeights::default();
    let w1 = weights.clone();
    run(
        "motion_quadruplet_loss",
        vec![
            random_tensor(&[8, 2, 3], 26),
            random_tensor(&[8, 2, 3], 27),
            random_tensor(&[8, 2, 3], 28),
            random_tensor(&[8, 2, 3], 29),
        ],
        Box::new(move |t, ids| {
            let l =
                motion_quadruplet(t, ids[0], ids[1], ids[2], ids[3], &[0.3, 0.8], &w1).unwrap();
            t.mean_all(l)
        }),
    );
    run(
        "nuanced_loss",
        vec![random_tensor(&[8, 2, 3], 30), random_tensor(&[8, 2, 3], 31)],
        Box::new(|t, ids| {
            let l = nuanced_loss(t, ids[0], ids[1], &[0.5, 1.5], 0.02).unwrap();
            t.mean_all(l)
        }),
    );
    run(
        "reconstruction_loss",
        vec![random_tensor(&[6, 2, 8], 32), random_tensor(&[6, 2, 8], 33)],
        Box::new(|t, ids| {
            let l = reconstruction_loss(t, ids[0], ids[1]).unwrap();
            t.mean_all(l)
        }),
    );
    let w2 = weights.clone();
    run(
        "weighted_total_losses",
        vec![
            random_tensor(&[6, 2, 1], 34),
            random_tensor(&[6, 2, 1], 35),
            random_tensor(&[6, 2, 1], 36),
            random_tensor(&[6, 2, 4], 37),
            random_tensor(&[6, 2, 4], 38),
        ],
        Box::new(move |t, ids| {
            // total_syn = dis * (shape + view + motion-ish) + rec, then
            // total = syn + real-side nuanced, all on one graph.
            let tri = triplet(t, ids[0], ids[1], ids[2], 50.0).unwrap();
            let tri2 = triplet(t, ids[1], ids[2], ids[0], 50.0).unwrap();
            let dis = t.add(tri, tri2).unwrap();
            let dis = t.scale(dis, w2.lambda_dis);
            let rec = reconstruction_loss(t, ids[3], ids[4]).unwrap();
            let rec = t.scale(rec, w2.lambda_rec);
            let syn = t.add(dis, rec).unwrap();
            let nua = nuanced_loss(t, ids[3], ids[4], &[0.2, 0.4], w2.delta).unwrap();
            let nua = t.scale(nua, w2.lambda_nuanced);
            let total = t.add(syn, nua).unwrap();
            let total = t.scale(total, w2.lambda_syn);
            t.mean_all(total)
        }),
    );

    // A randomized three-layer conv net end to end.
    run(
        "three_layer_conv_net",
        vec![
            random_tensor(&[2, 1, 16], 40),
            random_tensor(&[4, 2, 8], 41),
            random_tensor(&[4], 42),
            random_tensor(&[6, 4, 8], 43),
            random_tensor(&[6], 44),
            random_tensor(&[3, 6, 8], 45),
            random_tensor(&[3], 46),
        ],
        Box::new(|t, ids| {
            let h = t.conv1d_reflect(ids[0], ids[1], ids[2], 8, 2).unwrap();
            let h = t.leaky_relu(h, 0.2);
            let h = t.conv1d_reflect(h, ids[3], ids[4], 8, 2).unwrap();
            let h = t.leaky_relu(h, 0.2);
            let h = t.conv1d_reflect(h, ids[5], ids[6], 8, 2).unwrap();
            let sq = t.square(h);
            t.mean_all(sq)
        }),
    );

    let secs = start.elapsed().as_secs_f64();
    check(
        "criterion 1 (gradient fidelity)",
        total_checked >= 20 * 10 && worst < tol && secs < 120.0,
        &format!("{total_checked} coordinates checked, max rel err {worst:.2e}, {secs:.1}s"),
    );
}

// ---------------------------------------------------------------------
// Criterion 2: DTW oracle equivalence
// ---------------------------------------------------------------------

/// Minimum alignment cost by explicit enumeration of every monotone
/// contiguous path; independent of the DP implementation.
fn brute_force_dtw_cost(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    fn euclid(x: &[f64], y: &[f64]) -> f64 {
        x.iter()
            .zip(y)
            .map(|(p, q)| (p - q) * (p - q))
            .sum::<f64>()
            .sqrt()
    }
    fn walk(a: &[Vec<f64>], b: &[Vec<f64>], i: usize, j: usize, acc: f64, best: &mut f64) {
        let acc = acc + euclid(&a[i], &b[j]);
        if i == a.len() - 1 && j == b.len() - 1 {
            *best = best.min(acc);
            return;
        }
        if i + 1 < a.len() && j + 1 < b.len() {
            walk(a, b, i + 1, j + 1, acc, best);
        }
        if i + 1 < a.len() {
            walk(a, b, i + 1, j, acc, best);
        }
        if j + 1 < b.len() {
            walk(a, b, i, j + 1, acc, best);
        }
    }
    let mut best = f64::INFINITY;
    walk(a, b, 0, 0, 0.0, &mut best);
    best
}

#[test]
fn acceptance_02_dtw_oracle_equivalence() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mut checked = 0;
    for _ in 0..500 {
        let dim = rng.gen_range(1..=3);
        let na = rng.gen_range(1..=6);
        let nb = rng.gen_range(1..=6);
        let gen_seq = |rng: &mut ChaCha8Rng, n: usize| -> Vec<Vec<f64>> {
            (0..n)
                .map(|_| (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect())
                .collect()
        };
        let a = gen_seq(&mut rng, na);
        let b = gen_seq(&mut rng, nb);
        let fast = dtw_align(&a, &b).unwrap().cost;
        let brute = brute_force_dtw_cost(&a, &b);
        assert!(
            (fast - brute).abs() < 1e-12,
            "dtw {fast} vs brute force {brute} on lengths {na}x{nb}"
        );
        checked += 1;
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        "criterion 2 (DTW oracle equivalence)",
        checked == 500 && secs < 60.0,
        &format!("{checked} random pairs matched exhaustive enumeration in {secs:.1}s"),
    );
}

// ---------------------------------------------------------------------
// Criterion 3: AUC oracle equivalence
// ---------------------------------------------------------------------

#[test]
fn acceptance_03_auc_oracle_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mut max_gap = 0.0f64;
    for trial in 0..200 {
        let n_pos = rng.gen_range(2..30);
        let n_neg = rng.gen_range(2..30);
        // Quantized scores in half the cohorts force plenty of ties.
        let quantize = trial % 2 == 0;
        let mut scores = Vec::new();
        for i in 0..n_pos + n_neg {
            let raw: f64 = rng.gen_range(0.0..1.0);
            let s = if quantize { (raw * 8.0).round() / 8.0 } else { raw };
            let label = if i < n_pos { Label::Positive } else { Label::Negative };
            scores.push(LabeledScore::new(format!("{i}"), s, label));
        }
        for orientation in [Orientation::LowScorePositive, Orientation::HighScorePositive] {
            let trap = roc_auc(&scores, orientation).unwrap().auc;
            let mw = auc_mann_whitney(&scores, orientation).unwrap();
            max_gap = max_gap.max((trap - mw).abs());
            assert!(
                (trap - mw).abs() < 1e-9,
                "trapezoid {trap} vs pair count {mw}"
            );
        }
    }

    // Permutation test: random labels give chance-level AUC on average.
    let values: Vec<f64> = (0..40).map(|_| rng.gen_range(0.0..1.0)).collect();
    let mut mean_auc = 0.0;
    let trials = 1000;
    for _ in 0..trials {
        let scores: Vec<LabeledScore> = values
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let label = if rng.gen_bool(0.5) { Label::Positive } else { Label::Negative };
                LabeledScore::new(format!("{i}"), v, label)
            })
            .collect();
        let ok = scores.iter().any(|s| s.label == Label::Positive)
            && scores.iter().any(|s| s.label == Label::Negative);
        if !ok {
            continue;
        }
        mean_auc += roc_auc(&scores, Orientation::LowScorePositive).unwrap().auc;
    }
    mean_auc /= trials as f64;

    check(
        "criterion 3 (AUC oracle equivalence)",
        max_gap < 1e-9 && (mean_auc - 0.5).abs() < 0.05,
        &format!("max route gap {max_gap:.2e}; permutation mean AUC {mean_auc:.4}"),
    );
}

// ---------------------------------------------------------------------
// Criterion 4: architecture shape contract
// ---------------------------------------------------------------------

#[test]
fn acceptance_04_architecture_shape_contract() {
    let segments: [(&str, usize); 5] = [
        ("left_arm", 3),
        ("right_arm", 3),
        ("torso", 5),
        ("left_leg", 3),
        ("right_leg", 3),
    ];
    let mut cases = 0;
    for t in [32usize, 64, 128] {
        for (name, joints) in segments {
            let net = SegmentNet::<f32>::init(name, joints, 7);
            let coords = (0..t * joints * 2).map(|i| (i as f64 * 0.01).sin()).collect();
            let seq = PoseSequence::from_flat("probe", 30.0, t, joints, coords).unwrap();
            let enc = net.encode(&seq).unwrap();
            assert_eq!(enc.motion.shape(), &[MOTION_CHANNELS, 1, t / 8]);
            assert_eq!(enc.shape.shape(), &[SHAPE_CHANNELS, 1, 1]);
            assert_eq!(enc.view.shape(), &[VIEW_CHANNELS, 1, 1]);
            let rec = net.decode(&enc, 30.0, "rec").unwrap();
            assert_eq!(rec.frame_count(), t);
            assert_eq!(rec.joint_count(), joints);
            cases += 1;
        }
    }
    check(
        "criterion 4 (architecture shape contract)",
        cases == 15,
        &format!("{cases} (t, segment) cases matched 128 x t/8, 16, 8, and t exactly"),
    );
}

// ---------------------------------------------------------------------
// Criterion 5: desk-scale disentanglement
// ---------------------------------------------------------------------

#[test]
fn acceptance_05_disentanglement_retrieval() {
    let r = reference();
    let encoded = encode_labeled(&r.bundle_full, &r.heldout).unwrap();
    let motion: Vec<(Vec<f64>, usize)> = encoded
        .iter()
        .map(|e| (e.motion.clone(), e.motion_class))
        .collect();
    let shape: Vec<(Vec<f64>, String)> = encoded
        .iter()
        .map(|e| (e.shape.clone(), e.skeleton_id.clone()))
        .collect();
    let view: Vec<(Vec<f64>, usize)> = encoded
        .iter()
        .map(|e| (e.view.clone(), e.viewpoint_id))
        .collect();
    let acc_motion = nn_retrieval_accuracy(&motion);
    let acc_shape = nn_retrieval_accuracy(&shape);
    let acc_view = nn_retrieval_accuracy(&view);
    let budget_ok = r.train_secs <= 1800.0;
    check(
        "criterion 5 (desk-scale disentanglement)",
        encoded.len() == 200
            && acc_motion >= 0.90
            && acc_shape >= 0.90
            && acc_view >= 0.85
            && budget_ok,
        &format!(
            "1-NN on {} held-out sequences: motion {acc_motion:.3} (>=0.90), skeleton {acc_shape:.3} (>=0.90), viewpoint {acc_view:.3} (>=0.85); training {:.0}s of 1800s budget (gen {:.0}s)",
            encoded.len(),
            r.train_secs,
            r.gen_secs
        ),
    );
}

// ---------------------------------------------------------------------
// Criterion 6: held-out reconstruction
// ---------------------------------------------------------------------

#[test]
fn acceptance_06_heldout_reconstruction() {
    let r = reference();
    let seqs: Vec<PoseSequence> = r.heldout.iter().map(|m| m.seq.clone()).collect();
    let mse = heldout_reconstruction_mse(&r.bundle_full, &seqs).unwrap();
    check(
        "criterion 6 (held-out reconstruction)",
        mse < 0.05,
        &format!("mean reconstruction MSE {mse:.5} (< 0.05) over {} sequences", seqs.len()),
    );
}

// ---------------------------------------------------------------------
// Criterion 7: scoring invariances
// ---------------------------------------------------------------------

#[test]
fn acceptance_07_scoring_invariances() {
    let r = reference();
    let opts = ScoreOptions::default();

    // Self-score.
    let probe = &r.heldout[0].seq;
    let self_report = cami_score(probe, probe, &r.bundle_full, None, &opts).unwrap();
    let self_ok = (self_report.cami - 1.0).abs() <= 1e-6;

    // Viewpoint and skeleton swaps of the imitator.
    let swaps: Vec<(f64, f64)> = (0..50)
        .into_par_iter()
        .map(|i| {
            let degradation = 0.1 + 0.8 * (i as f64 / 49.0);
            let v = sample_imitation_variants(&r.corpus, degradation, 4_000_000 + i as u64)
                .unwrap();
            let base = cami_score(&v.base.actor, &v.base.imitation, &r.bundle_full, None, &opts)
                .unwrap()
                .cami;
            let view = cami_score(&v.base.actor, &v.view_swapped, &r.bundle_full, None, &opts)
                .unwrap()
                .cami;
            let skel = cami_score(
                &v.base.actor,
                &v.skeleton_swapped,
                &r.bundle_full,
                None,
                &opts,
            )
            .unwrap()
            .cami;
            ((base - view).abs(), (base - skel).abs())
        })
        .collect();
    let view_delta = median(&swaps.iter().map(|s| s.0).collect::<Vec<_>>());
    let skel_delta = median(&swaps.iter().map(|s| s.1).collect::<Vec<_>>());

    // Degradation monotonicity.
    let levels = [0.0, 0.25, 0.5, 0.75, 1.0];
    let medians: Vec<f64> = levels
        .iter()
        .map(|&level| {
            let scores: Vec<f64> = (0..50)
                .into_par_iter()
                .map(|i| {
                    let pair =
                        sample_imitation(&r.corpus, level, 5_000_000 + i as u64).unwrap();
                    cami_score(&pair.actor, &pair.imitation, &r.bundle_full, None, &opts)
                        .unwrap()
                        .cami
                })
                .collect();
            median(&scores)
        })
        .collect();
    let monotone = medians.windows(2).all(|w| w[1] < w[0]);

    check(
        "criterion 7 (scoring invariances)",
        self_ok && view_delta <= 0.1 && skel_delta <= 0.1 && monotone,
        &format!(
            "self-score {:.8}; median |dCAMI| view swap {view_delta:.4} / skeleton swap {skel_delta:.4} (<= 0.1); degradation medians {medians:?} strictly decreasing: {monotone}",
            self_report.cami
        ),
    );
}

// ---------------------------------------------------------------------
// Criterion 8: synthetic-cohort ROC with ablation ordering
// ---------------------------------------------------------------------

#[test]
fn acceptance_08_cohort_roc_and_ablation() {
    let r = reference();
    let full = cell_auc(&r.report, "full", "whole");
    let syn_only = cell_auc(&r.report, "syn_only", "whole");
    check(
        "criterion 8 (synthetic-cohort ROC)",
        full >= 0.90 && syn_only <= full - 0.03,
        &format!("full AUC {full:.4} (>= 0.90); syn_only AUC {syn_only:.4} (<= full - 0.03)"),
    );
}

// ---------------------------------------------------------------------
// Criterion 9: body-region grid ordering
// ---------------------------------------------------------------------

#[test]
fn acceptance_09_body_region_grid() {
    let r = reference();
    let whole = cell_auc(&r.report, "full", "whole");
    let upper_with = cell_auc(&r.report, "full", "upper_with_torso");
    let upper_without = cell_auc(&r.report, "full", "upper_without_torso");
    check(
        "criterion 9 (body-region grid)",
        whole >= upper_with && whole >= upper_without,
        &format!(
            "whole {whole:.4} >= upper_with_torso {upper_with:.4} and >= upper_without_torso {upper_without:.4}"
        ),
    );
}

// ---------------------------------------------------------------------
// Criterion 10: determinism and persistence
// ---------------------------------------------------------------------

fn assert_identical(a: &Path, b: &Path, what: &str) {
    let ba = std::fs::read(a).unwrap_or_else(|_| panic!("missing {}", a.display()));
    let bb = std::fs::read(b).unwrap_or_else(|_| panic!("missing {}", b.display()));
    assert_eq!(ba, bb, "{what} differs between reruns");
}

#[test]
fn acceptance_10_determinism_and_persistence() {
    let root = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance-determinism");
    let _ = std::fs::remove_dir_all(&root);
    std::fs::create_dir_all(&root).unwrap();
    let config_path = root.join("small.toml");
    std::fs::write(
        &config_path,
        r#"
seed = 13

[gen]
tuple_count = 12
pair_count = 8
eval_tuple_count = 2
cohort_good = 4
cohort_poor = 4

[gen.corpus]
variations_per_class = 3

[train]
epochs = 2
batch_size = 8
checkpoint_interval = 0
"#,
    )
    .unwrap();
    let cfg = config_path.to_str().unwrap();

    // Two identical runs of every stage.
    for run in ["a", "b"] {
        let base = root.join(run);
        let data = base.join("data");
        run_cli(&["gen", "--config", cfg, "--out", data.to_str().unwrap()]);
        let model = base.join("model");
        run_cli(&[
            "train",
            "--config",
            cfg,
            "--tuples",
            data.join("tuples.json").to_str().unwrap(),
            "--pairs",
            data.join("pairs.json").to_str().unwrap(),
            "--out",
            model.to_str().unwrap(),
        ]);
        let scores = base.join("scores");
        run_cli(&[
            "score",
            "--config",
            cfg,
            "--bundle",
            model.join("bundle").to_str().unwrap(),
            "--batch",
            data.join("cohort.json").to_str().unwrap(),
            "--out",
            scores.to_str().unwrap(),
        ]);
        let report = base.join("report");
        run_cli(&[
            "eval",
            "--config",
            cfg,
            "--bundle",
            &format!("m={}", model.join("bundle").display()),
            "--cohort",
            &format!("c={}", data.join("cohort.json").display()),
            "--out",
            report.to_str().unwrap(),
        ]);
    }

    let a = root.join("a");
    let b = root.join("b");
    for rel in [
        "data/tuples.json",
        "data/pairs.json",
        "data/cohort.json",
        "model/bundle.json",
        "model/bundle.bin",
        "model/bundle.sidecar.json",
        "model/bundle.opt.bin",
        "model/training_log.csv",
        "scores/scores.jsonl",
        "scores/cohort_scores.csv",
        "report/summary.csv",
        "report/roc_points.csv",
        "report/correlations.csv",
        "report/report.json",
    ] {
        assert_identical(&a.join(rel), &b.join(rel), rel);
    }
    // Sample pose files byte-compare too.
    let tuple_dir = a.join("data/tuples");
    let mut pose_files: Vec<_> = std::fs::read_dir(&tuple_dir)
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    pose_files.sort();
    for f in pose_files.iter().take(5) {
        assert_identical(
            &a.join("data/tuples").join(f),
            &b.join("data/tuples").join(f),
            &format!("pose file {f:?}"),
        );
    }

    // Checkpoint round trip preserves validation loss exactly.
    let bundle1 = ModelBundle::<f32>::load(&a.join("model/bundle")).unwrap();
    let (_, heldout) = load_tuple_set(&a.join("data/heldout/tuples.json")).unwrap();
    let seqs: Vec<PoseSequence> = heldout
        .iter()
        .flat_map(|t| t.members.iter().map(|m| m.seq.clone()))
        .collect();
    let loss1 = heldout_reconstruction_mse(&bundle1, &seqs).unwrap();
    let resaved = root.join("resaved");
    std::fs::create_dir_all(&resaved).unwrap();
    bundle1.save(&resaved.join("bundle")).unwrap();
    let bundle2 = ModelBundle::<f32>::load(&resaved.join("bundle")).unwrap();
    let loss2 = heldout_reconstruction_mse(&bundle2, &seqs).unwrap();

    check(
        "criterion 10 (determinism and persistence)",
        loss1 == loss2,
        &format!(
            "gen/train/score/eval reruns byte-identical; round-trip validation loss {loss1} == {loss2}"
        ),
    );
}
