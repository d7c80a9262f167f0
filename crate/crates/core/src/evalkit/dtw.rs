//! Dynamic time warping with steps (1,0), (0,1), (1,1) and Euclidean frame
//! distance.

use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct DtwResult {
    /// `(i, j)` pairs, `i` indexing the prediction and `j` the ground truth.
    pub path: Vec<(usize, usize)>,
    pub total_cost: f64,
}

pub fn euclidean(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Minimal-cost monotonic alignment of `pred[n, c]` and `gt[m, c]`.
///
/// Ties in the backtrack prefer the diagonal, then a step in `pred`, then a
/// step in `gt`, so the path is a deterministic function of the inputs.
pub fn dtw(pred: ArrayView2<f64>, gt: ArrayView2<f64>) -> Result<DtwResult> {
    let (n, m) = (pred.nrows(), gt.nrows());
    if n == 0 || m == 0 {
        return Err(Error::Eval("DTW needs non-empty sequences".into()));
    }
    if pred.ncols() != gt.ncols() {
        return Err(Error::shape(format!(
            "DTW over {} and {} channels",
            pred.ncols(),
            gt.ncols()
        )));
    }
    let mut acc = Array2::<f64>::from_elem((n, m), f64::INFINITY);
    for i in 0..n {
        for j in 0..m {
            let cost = euclidean(pred.row(i), gt.row(j));
            let best = if i == 0 && j == 0 {
                0.0
            } else {
                let diag = if i > 0 && j > 0 {
                    acc[[i - 1, j - 1]]
                } else {
                    f64::INFINITY
                };
                let up = if i > 0 {
                    acc[[i - 1, j]]
                } else {
                    f64::INFINITY
                };
                let left = if j > 0 {
                    acc[[i, j - 1]]
                } else {
                    f64::INFINITY
                };
                diag.min(up).min(left)
            };
            acc[[i, j]] = if i == 0 && j == 0 { cost } else { best + cost };
        }
    }
    if !acc[[n - 1, m - 1]].is_finite() {
        return Err(Error::NonFinite("DTW cost".into()));
    }

    let (mut i, mut j) = (n - 1, m - 1);
    let mut path = vec![(i, j)];
    while (i, j) != (0, 0) {
        (i, j) = if i == 0 {
            (0, j - 1)
        } else if j == 0 {
            (i - 1, 0)
        } else {
            let diag = acc[[i - 1, j - 1]];
            let up = acc[[i - 1, j]];
            let left = acc[[i, j - 1]];
            if diag <= up && diag <= left {
                (i - 1, j - 1)
            } else if up <= left {
                (i - 1, j)
            } else {
                (i, j - 1)
            }
        };
        path.push((i, j));
    }
    path.reverse();
    Ok(DtwResult {
        path,
        total_cost: acc[[n - 1, m - 1]],
    })
}

/// Resamples `pred` onto the ground-truth timeline of length `m`: row `j`
/// is the mean of the prediction rows aligned to `j`.
pub fn align_by_path(
    pred: ArrayView2<f64>,
    m: usize,
    path: &[(usize, usize)],
) -> Result<Array2<f64>> {
    let mut sum = Array2::<f64>::zeros((m, pred.ncols()));
    let mut count = vec![0usize; m];
    for &(i, j) in path {
        if i >= pred.nrows() || j >= m {
            return Err(Error::Eval(format!("path entry ({i}, {j}) out of range")));
        }
        let mut row = sum.row_mut(j);
        row += &pred.row(i);
        count[j] += 1;
    }
    if let Some(j) = count.iter().position(|&c| c == 0) {
        return Err(Error::Eval(format!(
            "ground-truth frame {j} is not on the path"
        )));
    }
    for (j, &c) in count.iter().enumerate() {
        sum.row_mut(j).mapv_inplace(|v| v / c as f64);
    }
    Ok(sum)
}
