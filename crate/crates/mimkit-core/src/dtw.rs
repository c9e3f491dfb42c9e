//! Dynamic time warping over vector sequences.
//!
//! Finds the minimum-cost monotone, contiguous alignment between two
//! sequences under Euclidean local cost, with exact path backtracking.
//! Indices in [`AlignmentPath::steps`] are zero-based; a path runs from
//! `(0, 0)` to `(len_a - 1, len_b - 1)`.

use std::io::Write;

use crate::error::{Error, Result};

/// An optimal alignment: matched index pairs and the summed local cost.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentPath {
    /// Matched `(i, j)` pairs; each step advances `i`, `j`, or both by 1.
    pub steps: Vec<(usize, usize)>,
    /// Sum of Euclidean local costs along the path.
    pub cost: f64,
}

impl AlignmentPath {
    /// Path cost divided by path length: the mean per-step distance.
    pub fn mean_cost(&self) -> f64 {
        self.cost / self.steps.len() as f64
    }
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn validate<'a>(a: &'a [Vec<f64>], b: &'a [Vec<f64>]) -> Result<usize> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::contract("dtw_align on empty sequence"));
    }
    let dim = a[0].len();
    if a.iter().chain(b.iter()).any(|v| v.len() != dim) {
        return Err(Error::dim("dtw_align frames disagree on dimensionality"));
    }
    Ok(dim)
}

/// Optimal alignment between `a` and `b`.
///
/// Ties are broken deterministically: diagonal first, then advancing
/// `i`, then advancing `j`.
pub fn dtw_align(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<AlignmentPath> {
    dtw_align_banded(a, b, None)
}

/// As [`dtw_align`], restricted to `|i - j| <= band` when a band is given.
pub fn dtw_align_banded(a: &[Vec<f64>], b: &[Vec<f64>], band: Option<usize>) -> Result<AlignmentPath> {
    validate(a, b)?;
    let (na, nb) = (a.len(), b.len());
    // A band narrower than the length difference admits no complete path.
    let band = band.map(|w| w.max(na.abs_diff(nb)));

    // acc[i][j] = cost of the best path ending at (i, j).
    let mut acc = vec![f64::INFINITY; na * nb];
    // Predecessor direction: 0 diagonal, 1 i-advance, 2 j-advance.
    let mut from = vec![0u8; na * nb];

    for i in 0..na {
        let (j_lo, j_hi) = match band {
            Some(w) => (i.saturating_sub(w), (i + w + 1).min(nb)),
            None => (0, nb),
        };
        for j in j_lo..j_hi {
            let local = euclidean(&a[i], &b[j]);
            let best = if i == 0 && j == 0 {
                (0.0, 0)
            } else {
                let diag = if i > 0 && j > 0 { acc[(i - 1) * nb + (j - 1)] } else { f64::INFINITY };
                let up = if i > 0 { acc[(i - 1) * nb + j] } else { f64::INFINITY };
                let left = if j > 0 { acc[i * nb + (j - 1)] } else { f64::INFINITY };
                // Tie-break: diagonal, then i-advance, then j-advance.
                if diag <= up && diag <= left {
                    (diag, 0)
                } else if up <= left {
                    (up, 1)
                } else {
                    (left, 2)
                }
            };
            acc[i * nb + j] = best.0 + local;
            from[i * nb + j] = best.1;
        }
    }

    let mut steps = Vec::with_capacity(na.max(nb));
    let (mut i, mut j) = (na - 1, nb - 1);
    loop {
        steps.push((i, j));
        if i == 0 && j == 0 {
            break;
        }
        match from[i * nb + j] {
            0 if i > 0 && j > 0 => {
                i -= 1;
                j -= 1;
            }
            1 if i > 0 => i -= 1,
            _ => j -= 1,
        }
    }
    steps.reverse();
    Ok(AlignmentPath {
        steps,
        cost: acc[(na - 1) * nb + (nb - 1)],
    })
}

/// Expands both sequences along an alignment path so they match
/// step-for-step; output lengths equal the path length.
pub fn warp_to_path(
    a: &[Vec<f64>],
    b: &[Vec<f64>],
    path: &AlignmentPath,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    if path.steps.is_empty() {
        return Err(Error::contract("warp_to_path with empty path"));
    }
    let valid = path.steps.first() == Some(&(0, 0))
        && path.steps.last() == Some(&(a.len() - 1, b.len() - 1))
        && path.steps.windows(2).all(|w| {
            let (i0, j0) = w[0];
            let (i1, j1) = w[1];
            let (di, dj) = (i1 as isize - i0 as isize, j1 as isize - j0 as isize);
            (di == 0 || di == 1) && (dj == 0 || dj == 1) && (di, dj) != (0, 0)
        });
    if !valid {
        return Err(Error::contract("path is not a valid alignment for these sequences"));
    }
    let wa = path.steps.iter().map(|&(i, _)| a[i].clone()).collect();
    let wb = path.steps.iter().map(|&(_, j)| b[j].clone()).collect();
    Ok((wa, wb))
}

/// Full matrix of accumulated costs, for debugging.
pub fn cost_matrix(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    validate(a, b)?;
    let (na, nb) = (a.len(), b.len());
    let mut acc = vec![vec![f64::INFINITY; nb]; na];
    for i in 0..na {
        for j in 0..nb {
            let local = euclidean(&a[i], &b[j]);
            let prev = if i == 0 && j == 0 {
                0.0
            } else {
                let diag = if i > 0 && j > 0 { acc[i - 1][j - 1] } else { f64::INFINITY };
                let up = if i > 0 { acc[i - 1][j] } else { f64::INFINITY };
                let left = if j > 0 { acc[i][j - 1] } else { f64::INFINITY };
                diag.min(up).min(left)
            };
            acc[i][j] = prev + local;
        }
    }
    Ok(acc)
}

/// Dumps the accumulated-cost matrix as CSV (one row of `b`-costs per
/// frame of `a`).
pub fn write_cost_matrix_csv<W: Write>(a: &[Vec<f64>], b: &[Vec<f64>], mut out: W) -> Result<()> {
    let matrix = cost_matrix(a, b)?;
    for row in &matrix {
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    Ok(())
}
