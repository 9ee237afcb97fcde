//! Minimum-cost bipartite matching on a square-padded cost matrix.
//!
//! Rectangular inputs are padded to square with [`FORBIDDEN_COST`]; pairs
//! whose cost reaches the sentinel are reported unmatched. Among equal-cost
//! optima the solver returns the lexicographically smallest assignment in
//! (row, column) order, so identical inputs always produce identical output.

/// Sentinel for forbidden pairs and padding cells. Kept at 1e6 so sums mixing
/// the sentinel with unit-scale costs retain sub-1e-9 float resolution.
pub const FORBIDDEN_COST: f64 = 1e6;

/// Dense row-major cost matrix.
#[derive(Debug, Clone)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    /// New matrix with every cell set to [`FORBIDDEN_COST`].
    pub fn forbidden(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![FORBIDDEN_COST; rows * cols],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let n = rows.len();
        let m = rows.first().map(|r| r.len()).unwrap_or(0);
        let mut data = Vec::with_capacity(n * m);
        for r in &rows {
            assert_eq!(r.len(), m, "ragged cost matrix");
            data.extend_from_slice(r);
        }
        Self { rows: n, cols: m, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    /// Padded square view: out-of-range cells read as the sentinel.
    fn padded(&self, r: usize, c: usize) -> f64 {
        if r < self.rows && c < self.cols {
            self.get(r, c)
        } else {
            FORBIDDEN_COST
        }
    }
}

/// Result of a solve: matched (row, col) pairs plus leftovers.
#[derive(Debug, Clone, PartialEq)]
pub struct Matching {
    pub pairs: Vec<(usize, usize)>,
    pub total_cost: f64,
    pub unmatched_rows: Vec<usize>,
    pub unmatched_cols: Vec<usize>,
}

/// Solves the assignment problem. An empty matrix yields an empty matching.
pub fn solve(costs: &CostMatrix) -> Matching {
    let (n, m) = (costs.rows, costs.cols);
    let k = n.max(m);
    if k == 0 {
        return Matching {
            pairs: Vec::new(),
            total_cost: 0.0,
            unmatched_rows: Vec::new(),
            unmatched_cols: Vec::new(),
        };
    }
    let choice = lexmin_square(&|r, c| costs.padded(r, c), k);

    let mut pairs = Vec::new();
    let mut matched_cols = vec![false; m];
    for (r, &c) in choice.iter().enumerate() {
        if r < n && c < m && costs.get(r, c) < FORBIDDEN_COST {
            pairs.push((r, c));
            matched_cols[c] = true;
        }
    }
    // canonical row-ascending summation so totals compare exactly against a
    // brute-force oracle summing in the same order
    let total_cost = pairs.iter().map(|&(r, c)| costs.get(r, c)).sum();
    let matched_rows: Vec<bool> = {
        let mut v = vec![false; n];
        for &(r, _) in &pairs {
            v[r] = true;
        }
        v
    };
    Matching {
        pairs,
        total_cost,
        unmatched_rows: (0..n).filter(|&r| !matched_rows[r]).collect(),
        unmatched_cols: (0..m).filter(|&c| !matched_cols[c]).collect(),
    }
}

/// Lexicographically smallest optimal assignment on a k-by-k matrix: rows are
/// fixed in ascending order, each taking the smallest column that still
/// permits an optimal completion of the remaining rows.
fn lexmin_square(get: &dyn Fn(usize, usize) -> f64, k: usize) -> Vec<usize> {
    let mut available: Vec<usize> = (0..k).collect();
    let mut choice = Vec::with_capacity(k);
    for r in 0..k {
        let tail_rows: Vec<usize> = (r + 1..k).collect();
        let mut best: Option<(f64, usize)> = None;
        for (slot, &c) in available.iter().enumerate() {
            let tail = if tail_rows.is_empty() {
                0.0
            } else {
                let rem: Vec<usize> = available
                    .iter()
                    .copied()
                    .filter(|&col| col != c)
                    .collect();
                min_cost(get, &tail_rows, &rem)
            };
            let total = get(r, c) + tail;
            if best.is_none_or(|(b, _)| total < b) {
                best = Some((total, slot));
            }
        }
        let (_, slot) = best.expect("non-empty column set");
        choice.push(available.remove(slot));
    }
    choice
}

/// Optimal assignment cost of the square submatrix spanned by `row_ids` and
/// `col_ids`, via the O(n^3) potentials form of the Hungarian algorithm.
/// Returns the cost as a row-ascending sum over the selected pairs.
fn min_cost(get: &dyn Fn(usize, usize) -> f64, row_ids: &[usize], col_ids: &[usize]) -> f64 {
    let n = row_ids.len();
    debug_assert_eq!(n, col_ids.len());
    let a = |i: usize, j: usize| get(row_ids[i], col_ids[j]);

    // 1-based arrays with a dummy 0 slot, following the classic formulation
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut matched_row = vec![0usize; n + 1]; // column -> row (1-based, 0 = free)
    let mut way = vec![0usize; n + 1];

    for i in 1..=n {
        matched_row[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = a(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut col_of_row = vec![0usize; n];
    for j in 1..=n {
        col_of_row[matched_row[j] - 1] = j - 1;
    }
    (0..n).map(|i| a(i, col_of_row[i])).sum()
}
