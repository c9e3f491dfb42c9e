//! Central finite-difference verification of analytic gradients.
//!
//! The checker re-runs a caller-supplied forward builder with perturbed
//! leaf values; it never inspects the tape's backward machinery, so it
//! stays an independent oracle for it.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::tape::{NodeId, Tape};
use super::tensor::Tensor;

/// Outcome of a finite-difference comparison.
#[derive(Debug)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
}

/// Compares analytic gradients of `build` against central differences.
///
/// `build` must construct the same scalar-valued graph every call from
/// the given leaf tensors (leaves are inserted with `param`). Up to
/// `coords_per_leaf` randomly chosen coordinates of every leaf are
/// perturbed by `eps`. Panics if the relative error exceeds `tol`.
pub fn check_gradients(
    leaves: &[Tensor<f64>],
    coords_per_leaf: usize,
    eps: f64,
    tol: f64,
    seed: u64,
    build: impl Fn(&mut Tape<f64>, &[NodeId]) -> NodeId,
) -> GradCheckReport {
    let run = |values: &[Tensor<f64>]| -> (f64, Vec<Option<Tensor<f64>>>) {
        let mut tape = Tape::new(true);
        let ids: Vec<NodeId> = values.iter().map(|t| tape.param(t.clone())).collect();
        let loss = build(&mut tape, &ids);
        let value = tape.value(loss).item();
        let mut grads = tape.backward(loss).expect("backward failed");
        let leaf_grads = ids.iter().map(|&id| grads.take(id)).collect();
        (value, leaf_grads)
    };

    let (_, analytic) = run(leaves);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checked = 0;
    let mut max_rel = 0.0f64;

    for (li, leaf) in leaves.iter().enumerate() {
        let n = leaf.len();
        let coords: Vec<usize> = if n <= coords_per_leaf {
            (0..n).collect()
        } else {
            (0..coords_per_leaf).map(|_| rng.gen_range(0..n)).collect()
        };
        for &ci in &coords {
            let mut plus = leaves.to_vec();
            plus[li].data_mut()[ci] += eps;
            let (f_plus, _) = forward_only(&plus, &build);

            let mut minus = leaves.to_vec();
            minus[li].data_mut()[ci] -= eps;
            let (f_minus, _) = forward_only(&minus, &build);

            let numeric = (f_plus - f_minus) / (2.0 * eps);
            let analytic_g = analytic[li]
                .as_ref()
                .map(|g| g.data()[ci])
                .unwrap_or(0.0);
            let denom = numeric.abs().max(analytic_g.abs()).max(1e-6);
            let rel = (numeric - analytic_g).abs() / denom;
            assert!(
                rel < tol,
                "gradient mismatch at leaf {li} coord {ci}: analytic {analytic_g} vs numeric {numeric} (rel {rel:.2e})"
            );
            max_rel = max_rel.max(rel);
            checked += 1;
        }
    }
    GradCheckReport {
        checked,
        max_rel_error: max_rel,
    }
}

fn forward_only(
    values: &[Tensor<f64>],
    build: &impl Fn(&mut Tape<f64>, &[NodeId]) -> NodeId,
) -> (f64, ()) {
    let mut tape = Tape::new(true);
    let ids: Vec<NodeId> = values.iter().map(|t| tape.param(t.clone())).collect();
    let loss = build(&mut tape, &ids);
    (tape.value(loss).item(), ())
}

/// Uniform random tensor in `[-1, 1]`, seeded.
pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::from_vec(shape, data).expect("length matches")
}
