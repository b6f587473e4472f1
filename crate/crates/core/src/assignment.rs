//! Exact rectangular linear assignment.
//!
//! The kernel is the O(n³) shortest-augmenting-path Hungarian method with
//! dual potentials. Rectangular problems are padded to square with a
//! constant cost. Once an optimum is known, the dual potentials identify
//! every optimal matching (exactly those made of tight edges), and a greedy
//! pass over the tight-edge graph picks the lexicographically smallest one.

use crate::error::{Error, Result};
use crate::model::Embedding;

/// Similarity assigned to pairs that must not be matched (null embeddings).
/// Strictly below every real cosine value.
pub const FORBIDDEN: f64 = -2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SimMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl SimMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::InvalidArgument(format!(
                "matrix has {} values, expected {}x{}",
                values.len(),
                rows,
                cols
            )));
        }
        Ok(SimMatrix { rows, cols, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidArgument("ragged matrix rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    pub fn is_forbidden(&self, row: usize, col: usize) -> bool {
        self.get(row, col) < -1.0
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Sum of the matched entries, accumulated in row order.
    pub fn objective(&self, pairs: &[(usize, usize)]) -> f64 {
        let mut sorted = pairs.to_vec();
        sorted.sort_unstable();
        sorted.iter().map(|&(r, c)| self.get(r, c)).sum()
    }
}

/// Cosine similarity of every `a[i]` against every `b[j]`. Pairs involving a
/// null (all-zero) embedding get [`FORBIDDEN`].
pub fn cosine_matrix(a: &[Embedding], b: &[Embedding]) -> Result<SimMatrix> {
    let dim = a.first().or(b.first()).map_or(0, Embedding::dim);
    for e in a.iter().chain(b) {
        if e.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: e.dim(),
            });
        }
        if !e.is_finite() {
            return Err(Error::NonFinite("embedding".into()));
        }
    }
    let unit = |e: &Embedding| -> Option<Vec<f64>> {
        let n = e.norm();
        (n > 0.0).then(|| e.0.iter().map(|&v| f64::from(v) / n).collect())
    };
    let ua: Vec<_> = a.iter().map(unit).collect();
    let ub: Vec<_> = b.iter().map(unit).collect();
    let mut values = Vec::with_capacity(a.len() * b.len());
    for x in &ua {
        for y in &ub {
            values.push(match (x, y) {
                (Some(x), Some(y)) => x
                    .iter()
                    .zip(y)
                    .map(|(p, q)| p * q)
                    .sum::<f64>()
                    .clamp(-1.0, 1.0),
                _ => FORBIDDEN,
            });
        }
    }
    SimMatrix::new(a.len(), b.len(), values)
}

/// Optimal matching of size `min(rows, cols)`, sorted by row.
///
/// Maximizes total similarity when `maximize` is set, otherwise minimizes
/// total cost. When maximizing, forbidden entries (below -1) are used only
/// when no matching of that size avoids them; they are returned like any
/// other pair.
pub fn solve_assignment(m: &SimMatrix, maximize: bool) -> Result<Vec<(usize, usize)>> {
    if m.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("assignment matrix".into()));
    }
    let (rows, cols) = (m.rows, m.cols);
    if rows == 0 || cols == 0 {
        return Ok(Vec::new());
    }
    let n = rows.max(cols);

    // Real entries map to costs in [0, range]; forbidden entries cost more
    // than any complete matching of real entries can.
    let real = m.values.iter().copied().filter(|&v| !(maximize && v < -1.0));
    let (lo, hi) = real.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    let (lo, hi) = if lo.is_finite() { (lo, hi) } else { (0.0, 0.0) };
    let range = hi - lo;
    let penalty = (range + 1.0) * (n as f64 + 1.0);

    let mut cost = vec![0.0f64; n * n];
    for r in 0..rows {
        for c in 0..cols {
            let v = m.get(r, c);
            cost[r * n + c] = if maximize {
                if v < -1.0 {
                    penalty
                } else {
                    hi - v
                }
            } else {
                v - lo
            };
        }
    }

    let (row_to_col, u, v) = hungarian(&cost, n);
    let scale = cost.iter().fold(1.0f64, |a, &b| a.max(b.abs()));
    let eps = 1e-9 * scale * n as f64;
    let tight = |r: usize, c: usize| cost[r * n + c] - u[r] - v[c] <= eps;
    let row_to_col = lexicographic_tight_matching(n, rows, cols, row_to_col, &tight);

    Ok((0..rows)
        .filter_map(|r| {
            let c = row_to_col[r];
            (c < cols).then_some((r, c))
        })
        .collect())
}

/// Square min-cost assignment. Returns the row→column matching and the
/// final dual potentials `(u, v)` with `u[r] + v[c] <= cost[r][c]`, equality
/// on matched pairs.
fn hungarian(cost: &[f64], n: usize) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    // 1-based internally; index 0 is the virtual root column.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut col_owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        col_owner[0] = row;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = col_owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
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
                    u[col_owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if col_owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            col_owner[j0] = col_owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0usize; n];
    for j in 1..=n {
        row_to_col[col_owner[j] - 1] = j - 1;
    }
    (row_to_col, u[1..].to_vec(), v[1..].to_vec())
}

/// Rewrites a perfect matching in the tight-edge graph into the
/// lexicographically smallest one over real rows/columns: each real row in
/// turn takes its smallest feasible real column, falling back to padding.
fn lexicographic_tight_matching(
    n: usize,
    rows: usize,
    cols: usize,
    mut row_to_col: Vec<usize>,
    tight: &impl Fn(usize, usize) -> bool,
) -> Vec<usize> {
    let mut col_to_row = vec![0usize; n];
    for (r, &c) in row_to_col.iter().enumerate() {
        col_to_row[c] = r;
    }
    let mut fixed_col = vec![false; n];

    for row in 0..rows {
        let mut candidates: Vec<usize> = (0..cols).collect();
        candidates.extend(cols..n);
        for c in candidates {
            if fixed_col[c] || !tight(row, c) {
                continue;
            }
            if row_to_col[row] == c {
                fixed_col[c] = true;
                break;
            }
            // Row `row` takes `c`; its old column becomes the target that
            // `c`'s previous owner must reach through an alternating path
            // among unfixed rows.
            let owner = col_to_row[c];
            let target = row_to_col[row];
            let mut seen = vec![false; n];
            seen[c] = true;
            let path = alternating_path(owner, target, row, &fixed_col, &mut seen, &col_to_row, tight);
            if let Some(path) = path {
                for (r, nc) in path {
                    row_to_col[r] = nc;
                    col_to_row[nc] = r;
                }
                row_to_col[row] = c;
                col_to_row[c] = row;
                fixed_col[c] = true;
                break;
            }
        }
        debug_assert!(fixed_col[row_to_col[row]]);
    }
    row_to_col
}

/// Depth-first search for a tight alternating path from `start` to the
/// column `target`, returning the reassignments along it.
fn alternating_path(
    start: usize,
    target: usize,
    skip_row: usize,
    fixed_col: &[bool],
    seen: &mut [bool],
    col_to_row: &[usize],
    tight: &impl Fn(usize, usize) -> bool,
) -> Option<Vec<(usize, usize)>> {
    for c in 0..col_to_row.len() {
        if seen[c] || fixed_col[c] || !tight(start, c) {
            continue;
        }
        seen[c] = true;
        if c == target {
            return Some(vec![(start, c)]);
        }
        let next = col_to_row[c];
        if next == skip_row {
            continue;
        }
        if let Some(mut path) =
            alternating_path(next, target, skip_row, fixed_col, seen, col_to_row, tight)
        {
            path.push((start, c));
            return Some(path);
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Best objective over all injections of the smaller side into the
    /// larger, by enumeration.
    fn brute_force(m: &SimMatrix, maximize: bool) -> (f64, Vec<(usize, usize)>) {
        let transpose = m.rows() > m.cols();
        let (small, large) = if transpose {
            (m.cols(), m.rows())
        } else {
            (m.rows(), m.cols())
        };
        let mut best: Option<(f64, Vec<(usize, usize)>)> = None;
        let mut chosen = Vec::with_capacity(small);
        let mut used = vec![false; large];
        fn rec(
            m: &SimMatrix,
            transpose: bool,
            small: usize,
            large: usize,
            maximize: bool,
            chosen: &mut Vec<usize>,
            used: &mut [bool],
            best: &mut Option<(f64, Vec<(usize, usize)>)>,
        ) {
            if chosen.len() == small {
                let mut pairs: Vec<_> = chosen
                    .iter()
                    .enumerate()
                    .map(|(s, &l)| if transpose { (l, s) } else { (s, l) })
                    .collect();
                pairs.sort_unstable();
                let obj = m.objective(&pairs);
                let better = match best {
                    None => true,
                    Some((b, bp)) => {
                        if maximize {
                            obj > *b || (obj == *b && pairs < *bp)
                        } else {
                            obj < *b || (obj == *b && pairs < *bp)
                        }
                    }
                };
                if better {
                    *best = Some((obj, pairs));
                }
                return;
            }
            for l in 0..large {
                if !used[l] {
                    used[l] = true;
                    chosen.push(l);
                    rec(m, transpose, small, large, maximize, chosen, used, best);
                    chosen.pop();
                    used[l] = false;
                }
            }
        }
        rec(m, transpose, small, large, maximize, &mut chosen, &mut used, &mut best);
        best.unwrap_or((0.0, Vec::new()))
    }

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> SimMatrix {
        let values = (0..rows * cols).map(|_| rng.random_range(-1.0..=1.0)).collect();
        SimMatrix::new(rows, cols, values).unwrap()
    }

    #[test]
    fn identity_and_scalar() {
        let id = SimMatrix::from_rows(&[
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ])
        .unwrap();
        assert_eq!(solve_assignment(&id, true).unwrap(), vec![(0, 0), (1, 1), (2, 2)]);
        let one = SimMatrix::from_rows(&[vec![0.3]]).unwrap();
        assert_eq!(solve_assignment(&one, true).unwrap(), vec![(0, 0)]);
        let empty = SimMatrix::new(0, 4, vec![]).unwrap();
        assert!(solve_assignment(&empty, true).unwrap().is_empty());
    }

    #[test]
    fn rejects_non_finite() {
        let m = SimMatrix::from_rows(&[vec![f64::NAN, 0.0]]).unwrap();
        assert!(matches!(solve_assignment(&m, true), Err(Error::NonFinite(_))));
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let rows = rng.random_range(1..=6);
            let cols = rng.random_range(1..=6);
            let m = random_matrix(&mut rng, rows, cols);
            for maximize in [true, false] {
                let got = solve_assignment(&m, maximize).unwrap();
                let (best, best_pairs) = brute_force(&m, maximize);
                assert_eq!(m.objective(&got), best);
                assert_eq!(got, best_pairs);
            }
        }
    }

    #[test]
    fn ties_resolve_lexicographically() {
        let all_equal = SimMatrix::from_rows(&vec![vec![0.5; 3]; 3]).unwrap();
        assert_eq!(
            solve_assignment(&all_equal, true).unwrap(),
            vec![(0, 0), (1, 1), (2, 2)]
        );
        // Two optima: {(0,0),(1,1)} and {(0,1),(1,0)} both sum to 1.0.
        let m = SimMatrix::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5], vec![0.0, 0.0]]).unwrap();
        assert_eq!(solve_assignment(&m, true).unwrap(), vec![(0, 0), (1, 1)]);
        let wide = SimMatrix::from_rows(&[vec![0.2, 0.9, 0.9]]).unwrap();
        assert_eq!(solve_assignment(&wide, true).unwrap(), vec![(0, 1)]);
        // Integer-valued ties with brute force agreement.
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..300 {
            let rows = rng.random_range(1..=5);
            let cols = rng.random_range(1..=5);
            let values = (0..rows * cols)
                .map(|_| f64::from(rng.random_range(0..3i32)) / 2.0)
                .collect();
            let m = SimMatrix::new(rows, cols, values).unwrap();
            for maximize in [true, false] {
                let got = solve_assignment(&m, maximize).unwrap();
                assert_eq!(got, brute_force(&m, maximize).1);
            }
        }
    }

    #[test]
    fn forbidden_pairs_avoided_when_possible() {
        // Taking (0,0) and (1,1) would sum higher if the sentinel were a real
        // value, but (0,1) is forbidden.
        let m = SimMatrix::from_rows(&[vec![-0.9, FORBIDDEN], vec![1.0, 1.0]]).unwrap();
        assert_eq!(solve_assignment(&m, true).unwrap(), vec![(0, 0), (1, 1)]);
        let m = SimMatrix::from_rows(&[vec![FORBIDDEN, -1.0], vec![1.0, FORBIDDEN]]).unwrap();
        assert_eq!(solve_assignment(&m, true).unwrap(), vec![(0, 1), (1, 0)]);
        // Unavoidable: single forbidden entry.
        let m = SimMatrix::from_rows(&[vec![FORBIDDEN]]).unwrap();
        assert_eq!(solve_assignment(&m, true).unwrap(), vec![(0, 0)]);
    }

    #[test]
    fn scale_invariance_and_padding() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let rows = rng.random_range(1..=7);
            let cols = rng.random_range(1..=7);
            let m = random_matrix(&mut rng, rows, cols);
            let base = solve_assignment(&m, true).unwrap();

            let c: f64 = rng.random_range(0.1..1.0);
            let scaled = SimMatrix::new(rows, cols, m.values().iter().map(|v| v * c).collect()).unwrap();
            assert_eq!(solve_assignment(&scaled, true).unwrap(), base);

            let n = rows.max(cols);
            let mut padded = vec![FORBIDDEN; n * n];
            for r in 0..rows {
                for col in 0..cols {
                    padded[r * n + col] = m.get(r, col);
                }
            }
            let sq = SimMatrix::new(n, n, padded).unwrap();
            let restricted: Vec<_> = solve_assignment(&sq, true)
                .unwrap()
                .into_iter()
                .filter(|&(r, col)| r < rows && col < cols)
                .collect();
            assert_eq!(restricted, base);
        }
    }

    #[test]
    fn cosine_matrix_cases() {
        let e = |v: &[f32]| Embedding(v.to_vec());
        let basis = [e(&[1.0, 0.0, 0.0]), e(&[0.0, 1.0, 0.0]), e(&[0.0, 0.0, 1.0])];
        let m = cosine_matrix(&basis, &basis).unwrap();
        for r in 0..3 {
            for c in 0..3 {
                assert_eq!(m.get(r, c), if r == c { 1.0 } else { 0.0 });
            }
        }
        let x = e(&[0.6, 0.8, 0.0]);
        let neg = e(&[-0.6, -0.8, 0.0]);
        assert!((cosine_matrix(&[x.clone()], &[neg]).unwrap().get(0, 0) + 1.0).abs() < 1e-12);
        let null = Embedding::zeros(3);
        let m = cosine_matrix(&[x.clone(), null], &[x]).unwrap();
        assert!(m.is_forbidden(1, 0));
        assert!(matches!(
            cosine_matrix(&[e(&[1.0])], &[e(&[1.0, 0.0])]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn cosine_matrix_matches_naive_dot() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut unit = |d: usize| {
            let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            Embedding(v.iter().map(|x| (x / n) as f32).collect())
        };
        let a: Vec<_> = (0..5).map(|_| unit(16)).collect();
        let b: Vec<_> = (0..4).map(|_| unit(16)).collect();
        let m = cosine_matrix(&a, &b).unwrap();
        for (i, x) in a.iter().enumerate() {
            for (j, y) in b.iter().enumerate() {
                let naive: f64 = x.0.iter().zip(&y.0).map(|(p, q)| f64::from(*p) * f64::from(*q)).sum();
                assert!((m.get(i, j) - naive).abs() < 1e-6);
            }
        }
    }
}
