//! Exact dynamic time warping over scalar sequences.
//!
//! Local cost is `|x_i - y_j|`, steps are {down, right, diagonal} with both
//! endpoints matched, and the distance is the raw sum of costs along the path.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DtwError {
    #[error("DTW input sequence is empty")]
    EmptySequence,
    #[error("exhaustive DTW oracle limited to |x|*|y| <= {limit}, got {len_x}x{len_y}")]
    TooLarge {
        len_x: usize,
        len_y: usize,
        limit: usize,
    },
}

/// Dense `|x| x |y|` matrix of absolute differences, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    cells: Vec<f64>,
}

impl CostMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.cells[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.cells[i * self.cols..(i + 1) * self.cols]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DtwResult {
    pub distance: f64,
    pub path: Vec<(usize, usize)>,
}

/// Optional Sakoe-Chiba constraint. `None` means the full grid.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Band(pub Option<usize>);

impl Band {
    pub const UNBOUNDED: Band = Band(None);

    // The effective radius never drops below the length difference, otherwise
    // the end cell would be unreachable.
    fn contains(self, i: usize, j: usize, len_x: usize, len_y: usize) -> bool {
        match self.0 {
            None => true,
            Some(r) => i.abs_diff(j) <= r.max(len_x.abs_diff(len_y)),
        }
    }
}

fn check_non_empty(x: &[f64], y: &[f64]) -> Result<(), DtwError> {
    if x.is_empty() || y.is_empty() {
        Err(DtwError::EmptySequence)
    } else {
        Ok(())
    }
}

pub fn cost_matrix(x: &[f64], y: &[f64]) -> Result<CostMatrix, DtwError> {
    check_non_empty(x, y)?;
    let cells = x
        .iter()
        .flat_map(|&xi| y.iter().map(move |&yj| (xi - yj).abs()))
        .collect();
    Ok(CostMatrix {
        rows: x.len(),
        cols: y.len(),
        cells,
    })
}

/// DTW distance on the full grid.
pub fn dtw_distance(x: &[f64], y: &[f64]) -> Result<f64, DtwError> {
    dtw_distance_banded(x, y, Band::UNBOUNDED)
}

/// DTW distance with an optional band; uses two rolling rows of the DP table.
pub fn dtw_distance_banded(x: &[f64], y: &[f64], band: Band) -> Result<f64, DtwError> {
    check_non_empty(x, y)?;
    let (n, m) = (x.len(), y.len());
    let mut prev = vec![f64::INFINITY; m];
    let mut curr = vec![f64::INFINITY; m];
    for i in 0..n {
        for j in 0..m {
            if !band.contains(i, j, n, m) {
                curr[j] = f64::INFINITY;
                continue;
            }
            let cost = (x[i] - y[j]).abs();
            let best = if i == 0 && j == 0 {
                0.0
            } else {
                let up = if i > 0 { prev[j] } else { f64::INFINITY };
                let left = if j > 0 { curr[j - 1] } else { f64::INFINITY };
                let diag = if i > 0 && j > 0 {
                    prev[j - 1]
                } else {
                    f64::INFINITY
                };
                diag.min(up).min(left)
            };
            curr[j] = cost + best;
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    Ok(prev[m - 1])
}

/// DTW distance plus the optimal warping path from (0,0) to (|x|-1, |y|-1).
///
/// Ties prefer the diagonal predecessor.
pub fn dtw_path(x: &[f64], y: &[f64], band: Band) -> Result<DtwResult, DtwError> {
    let cost = cost_matrix(x, y)?;
    let (n, m) = (cost.rows, cost.cols);
    let mut acc = vec![f64::INFINITY; n * m];
    for i in 0..n {
        for j in 0..m {
            if !band.contains(i, j, n, m) {
                continue;
            }
            let best = if i == 0 && j == 0 {
                0.0
            } else {
                let up = if i > 0 { acc[(i - 1) * m + j] } else { f64::INFINITY };
                let left = if j > 0 { acc[i * m + j - 1] } else { f64::INFINITY };
                let diag = if i > 0 && j > 0 {
                    acc[(i - 1) * m + j - 1]
                } else {
                    f64::INFINITY
                };
                diag.min(up).min(left)
            };
            acc[i * m + j] = cost.get(i, j) + best;
        }
    }

    let mut path = vec![(n - 1, m - 1)];
    let (mut i, mut j) = (n - 1, m - 1);
    while (i, j) != (0, 0) {
        let step = if i == 0 {
            (0, j - 1)
        } else if j == 0 {
            (i - 1, 0)
        } else {
            let diag = acc[(i - 1) * m + j - 1];
            let up = acc[(i - 1) * m + j];
            let left = acc[i * m + j - 1];
            if diag <= up && diag <= left {
                (i - 1, j - 1)
            } else if up <= left {
                (i - 1, j)
            } else {
                (i, j - 1)
            }
        };
        (i, j) = step;
        path.push(step);
    }
    path.reverse();
    Ok(DtwResult {
        distance: acc[n * m - 1],
        path,
    })
}

/// Largest grid the exhaustive oracle accepts.
pub const ORACLE_CELL_LIMIT: usize = 49;

/// Minimum path cost by enumerating every monotone boundary-matched path.
///
/// Plain recursion, no memoization: exponential, intended only as a test oracle
/// for [`dtw_distance`].
pub fn dtw_brute_oracle(x: &[f64], y: &[f64]) -> Result<f64, DtwError> {
    check_non_empty(x, y)?;
    if x.len() * y.len() > ORACLE_CELL_LIMIT {
        return Err(DtwError::TooLarge {
            len_x: x.len(),
            len_y: y.len(),
            limit: ORACLE_CELL_LIMIT,
        });
    }
    fn walk(x: &[f64], y: &[f64], i: usize, j: usize) -> f64 {
        let here = (x[i] - y[j]).abs();
        if i + 1 == x.len() && j + 1 == y.len() {
            return here;
        }
        let mut best = f64::INFINITY;
        if i + 1 < x.len() {
            best = best.min(walk(x, y, i + 1, j));
        }
        if j + 1 < y.len() {
            best = best.min(walk(x, y, i, j + 1));
        }
        if i + 1 < x.len() && j + 1 < y.len() {
            best = best.min(walk(x, y, i + 1, j + 1));
        }
        here + best
    }
    Ok(walk(x, y, 0, 0))
}
