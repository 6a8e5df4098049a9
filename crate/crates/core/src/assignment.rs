//! Minimum-cost bipartite assignment on rectangular cost matrices.
//!
//! The solver is the O(n^3) shortest-augmenting-path form of the Hungarian
//! method run on an implicitly squared matrix. After the optimum is found,
//! the matching is walked to the lexicographically smallest optimal pair
//! list using the tight edges of the final dual solution, so results do not
//! depend on the order in which ties happen to be explored.

use std::collections::VecDeque;

use crate::error::{invalid, Result};
use crate::scalar::Scalar;

/// Dense row-major cost matrix with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix<T> {
    rows: usize,
    cols: usize,
    values: Vec<T>,
}

impl<T: Scalar> CostMatrix<T> {
    pub fn new(rows: usize, cols: usize, values: Vec<T>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return invalid(format!("cost matrix must be at least 1x1, got {rows}x{cols}"));
        }
        if values.len() != rows * cols {
            return invalid(format!(
                "cost matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                values.len()
            ));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return invalid(format!(
                "cost matrix entry ({}, {}) is not finite",
                pos / cols,
                pos % cols
            ));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return invalid("cost matrix rows have unequal lengths");
        }
        Self::new(rows.len(), cols, rows.iter().flatten().copied().collect())
    }

    /// Builds the matrix `f(i, j)` for every row and column.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Result<Self> {
        let mut values = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                values.push(f(i, j));
            }
        }
        Self::new(rows, cols, values)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> T {
        self.values[row * self.cols + col]
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    /// Entry-wise negation; turns a similarity matrix into a cost matrix.
    pub fn negated(&self) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            values: self.values.iter().map(|&v| -v).collect(),
        }
    }
}

/// A maximal injective pairing of rows to columns, sorted by row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    pairs: Vec<(usize, usize)>,
}

impl Assignment {
    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn into_pairs(self) -> Vec<(usize, usize)> {
        self.pairs
    }

    /// Column assigned to `row`, if any.
    pub fn col_for_row(&self, row: usize) -> Option<usize> {
        self.pairs
            .binary_search_by_key(&row, |&(r, _)| r)
            .ok()
            .map(|k| self.pairs[k].1)
    }

    /// Sum of the selected entries, accumulated in pair order.
    pub fn total<T: Scalar>(&self, cost: &CostMatrix<T>) -> T {
        self.pairs
            .iter()
            .fold(T::zero(), |acc, &(r, c)| acc + cost.get(r, c))
    }
}

/// Solves the rectangular linear assignment problem.
///
/// Returns `min(rows, cols)` pairs minimizing the summed cost. Among optimal
/// pairings, the lexicographically smallest row-sorted pair list is returned.
pub fn solve_assignment<T: Scalar>(cost: &CostMatrix<T>) -> Assignment {
    let (rows, cols) = (cost.rows, cost.cols);
    let n = rows.max(cols);

    // Padding entries share one finite value, so every completion of a real
    // pairing pays the same constant for the dummy part.
    let scale = cost
        .values
        .iter()
        .fold(T::one(), |m, v| m.max(v.abs()));
    let sentinel = scale + T::one();
    let at = |i: usize, j: usize| -> T {
        if i < rows && j < cols {
            cost.get(i, j)
        } else {
            sentinel
        }
    };

    let (mut col_of_row, mut row_of_col, u, v) = hungarian(n, &at);

    // Edges with zero reduced cost under the optimal duals are exactly the
    // edges that can appear in some optimal matching.
    let tol = T::epsilon() * T::lit(64.0) * T::from_count(n) * sentinel;
    let tight = |i: usize, j: usize| at(i, j) - u[i] - v[j] <= tol;

    for i in 0..rows {
        for j in 0..n {
            let current = col_of_row[i];
            if j == current || (j >= cols && current >= cols) {
                break;
            }
            if !tight(i, j) {
                continue;
            }
            let holder = row_of_col[j];
            if holder < i {
                continue;
            }
            if let Some(path) = alternating_path(n, i, j, current, holder, &col_of_row, &row_of_col, &tight) {
                // `path` alternates: holder takes path[0], row_of(path[0]) takes path[1], ...
                let mut row = holder;
                for &col in &path {
                    let next_row = row_of_col[col];
                    col_of_row[row] = col;
                    row_of_col[col] = row;
                    row = next_row;
                }
                col_of_row[i] = j;
                row_of_col[j] = i;
                break;
            }
        }
    }

    let pairs = (0..rows)
        .filter(|&i| col_of_row[i] < cols)
        .map(|i| (i, col_of_row[i]))
        .collect();
    Assignment { pairs }
}

/// Searches the tight graph for an alternating path that frees column
/// `taken` for row `fixed_below`: it starts at `start` (the current holder of
/// `taken`) and ends at `target` (the column `fixed_below` gives up). Rows
/// `<= fixed_below` never move. Returns the columns along the path in order.
#[allow(clippy::too_many_arguments)]
fn alternating_path(
    n: usize,
    fixed_below: usize,
    taken: usize,
    target: usize,
    start: usize,
    col_of_row: &[usize],
    row_of_col: &[usize],
    tight: &impl Fn(usize, usize) -> bool,
) -> Option<Vec<usize>> {
    let mut parent_row = vec![usize::MAX; n];
    let mut seen = vec![false; n];
    seen[taken] = true;
    let mut queue = VecDeque::from([start]);
    while let Some(row) = queue.pop_front() {
        for col in 0..n {
            if seen[col] || !tight(row, col) {
                continue;
            }
            seen[col] = true;
            parent_row[col] = row;
            if col == target {
                let mut path = vec![col];
                let mut r = row;
                while r != start {
                    let c = col_of_row[r];
                    path.push(c);
                    r = parent_row[c];
                }
                path.reverse();
                return Some(path);
            }
            let next = row_of_col[col];
            if next > fixed_below {
                queue.push_back(next);
            }
        }
    }
    None
}

/// Classic potentials-based Hungarian method on an `n x n` matrix.
/// Returns `(col_of_row, row_of_col, u, v)`.
fn hungarian<T: Scalar>(n: usize, at: &impl Fn(usize, usize) -> T) -> (Vec<usize>, Vec<usize>, Vec<T>, Vec<T>) {
    const NONE: usize = usize::MAX;
    let big = T::max_value();
    // 1-based internally; index 0 is the virtual source column.
    let mut u = vec![T::zero(); n + 1];
    let mut v = vec![T::zero(); n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];

    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![big; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = big;
            let mut j1 = NONE;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = at(i0 - 1, j - 1) - u[i0] - v[j];
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
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut col_of_row = vec![NONE; n];
    let mut row_of_col = vec![NONE; n];
    for j in 1..=n {
        col_of_row[p[j] - 1] = j - 1;
        row_of_col[j - 1] = p[j] - 1;
    }
    (col_of_row, row_of_col, u[1..].to_vec(), v[1..].to_vec())
}

/// Cosine of the angle between two equal-length, nonzero vectors.
pub fn cosine_similarity<T: Scalar>(u: &[T], v: &[T]) -> Result<T> {
    if u.len() != v.len() {
        return invalid(format!(
            "cosine similarity of vectors with dimensions {} and {}",
            u.len(),
            v.len()
        ));
    }
    let uu = dot(u, u);
    let vv = dot(v, v);
    if !(uu > T::zero() && vv > T::zero()) || !uu.is_finite() || !vv.is_finite() {
        return invalid("cosine similarity needs finite vectors with nonzero norm");
    }
    // sqrt(|u|^2 |v|^2) makes cos(u, u) exactly 1; fall back when the product leaves range.
    let joint = (uu * vv).sqrt();
    let denom = if joint.is_finite() && joint > T::zero() { joint } else { uu.sqrt() * vv.sqrt() };
    let c = dot(u, v) / denom;
    Ok(c.max(-T::one()).min(T::one()))
}

#[inline]
pub(crate) fn dot<T: Scalar>(u: &[T], v: &[T]) -> T {
    u.iter().zip(v).fold(T::zero(), |acc, (&a, &b)| acc + a * b)
}

#[inline]
pub(crate) fn norm<T: Scalar>(u: &[T]) -> T {
    dot(u, u).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_force(c: &CostMatrix<f64>) -> (f64, Vec<(usize, usize)>) {
        // All injections of rows into columns (or columns into rows); keep the
        // first minimum found when scanning pair lists in lexicographic order.
        fn rec(
            c: &CostMatrix<f64>,
            row: usize,
            used: &mut Vec<bool>,
            cur: &mut Vec<(usize, usize)>,
            need: usize,
            best: &mut Option<(f64, Vec<(usize, usize)>)>,
        ) {
            if cur.len() == need {
                let total = cur.iter().fold(0.0, |a, &(r, k)| a + c.get(r, k));
                if best.as_ref().map_or(true, |(b, _)| total < *b) {
                    *best = Some((total, cur.clone()));
                }
                return;
            }
            if row == c.rows() || c.rows() - row < need - cur.len() {
                return;
            }
            for col in 0..c.cols() {
                if !used[col] {
                    used[col] = true;
                    cur.push((row, col));
                    rec(c, row + 1, used, cur, need, best);
                    cur.pop();
                    used[col] = false;
                }
            }
            rec(c, row + 1, used, cur, need, best);
        }
        let need = c.rows().min(c.cols());
        let mut best = None;
        rec(c, 0, &mut vec![false; c.cols()], &mut Vec::new(), need, &mut best);
        best.unwrap()
    }

    #[test]
    fn cosine_of_a_vector_with_itself_is_exactly_one() {
        for v in [vec![0.1f64, 0.2, 0.3], vec![1e-3, -7.5, 2.25, 0.333], vec![1e150, 1e150]] {
            assert_eq!(cosine_similarity(&v, &v).unwrap(), 1.0);
        }
    }

    #[test]
    fn identity_dominant() {
        let c = CostMatrix::from_fn(3, 3, |i, j| if i == j { 0.0 } else { 1.0 }).unwrap();
        let a = solve_assignment(&c);
        assert_eq!(a.pairs(), &[(0, 0), (1, 1), (2, 2)]);
        assert_eq!(a.total(&c), 0.0);
    }

    #[test]
    fn two_by_two() {
        let c = CostMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        let a = solve_assignment(&c);
        assert_eq!(a.pairs(), &[(0, 0), (1, 1)]);
        assert_eq!(a.total(&c), 2.0);
    }

    #[test]
    fn rectangular_shapes() {
        let wide = CostMatrix::from_rows(&[vec![5.0, 1.0, 3.0]]).unwrap();
        assert_eq!(solve_assignment(&wide).pairs(), &[(0, 1)]);
        let tall = CostMatrix::from_rows(&[vec![5.0], vec![1.0], vec![3.0]]).unwrap();
        assert_eq!(solve_assignment(&tall).pairs(), &[(1, 0)]);
    }

    #[test]
    fn ties_resolve_lexicographically() {
        let flat = CostMatrix::from_fn(3, 4, |_, _| 2.0).unwrap();
        assert_eq!(solve_assignment(&flat).pairs(), &[(0, 0), (1, 1), (2, 2)]);
        let flat_tall = CostMatrix::from_fn(4, 2, |_, _| 2.0).unwrap();
        assert_eq!(solve_assignment(&flat_tall).pairs(), &[(0, 0), (1, 1)]);
        let anti = CostMatrix::from_rows(&[vec![0.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(solve_assignment(&anti).pairs(), &[(0, 1), (1, 0)]);
    }

    #[test]
    fn rejects_bad_matrices() {
        assert!(CostMatrix::new(1, 2, vec![0.0, f64::NAN]).is_err());
        assert!(CostMatrix::new(1, 2, vec![0.0, f64::INFINITY]).is_err());
        assert!(CostMatrix::<f64>::new(0, 2, vec![]).is_err());
        assert!(CostMatrix::new(2, 2, vec![0.0; 3]).is_err());
        assert!(CostMatrix::from_rows(&[vec![0.0, 1.0], vec![0.0]]).is_err());
    }

    #[test]
    fn small_integer_matrices_match_brute_force_including_ties() {
        // Deterministic LCG so the cases are reproducible without an RNG dep.
        let mut state = 12345u64;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 33) as u32
        };
        for _ in 0..400 {
            let rows = 1 + (next() % 5) as usize;
            let cols = 1 + (next() % 5) as usize;
            let c = CostMatrix::from_fn(rows, cols, |_, _| (next() % 4) as f64).unwrap();
            let a = solve_assignment(&c);
            let (total, pairs) = brute_force(&c);
            assert_eq!(a.total(&c), total, "{c:?}");
            assert_eq!(a.pairs(), pairs.as_slice(), "{c:?}");
        }
    }

    #[test]
    fn cosine_examples() {
        assert!((cosine_similarity::<f64>(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[-1.0, 0.0]).unwrap(), -1.0);
        assert!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]).is_err());
        assert!(cosine_similarity(&[1.0, 0.0], &[1.0, 0.0, 0.0]).is_err());
    }
}
