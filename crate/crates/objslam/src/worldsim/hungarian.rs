//! Minimum-cost assignment (Hungarian algorithm with potentials).
//!
//! Costs of `f64::INFINITY` mark forbidden pairings. Rectangular matrices
//! are supported; the result matches as many rows/columns as allowed by the
//! finite entries (maximum cardinality first, then minimum total cost).

/// Result of [`hungarian_assign`]: matched (row, column) pairs sorted by
/// row, plus the total cost over matched pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub pairs: Vec<(usize, usize)>,
    pub total_cost: f64,
}

impl Assignment {
    /// Column matched to `row`, if any.
    pub fn column_of(&self, row: usize) -> Option<usize> {
        self.pairs
            .iter()
            .find(|(r, _)| *r == row)
            .map(|(_, c)| *c)
    }
}

/// Minimum-cost one-to-one assignment of rows to columns.
///
/// Entries must be nonnegative and either finite or `+inf` (forbidden).
/// Among all assignments of maximum cardinality over finite entries, one of
/// minimum total cost is returned.
pub fn hungarian_assign(cost: &[Vec<f64>]) -> Assignment {
    let n_rows = cost.len();
    let n_cols = cost.first().map_or(0, |r| r.len());
    debug_assert!(cost.iter().all(|r| r.len() == n_cols), "ragged cost matrix");
    if n_rows == 0 || n_cols == 0 {
        return Assignment {
            pairs: Vec::new(),
            total_cost: 0.0,
        };
    }

    // Forbidden entries become a finite sentinel larger than any achievable
    // total, so the solver maximizes the number of truly-finite matches.
    let finite_max = cost
        .iter()
        .flatten()
        .copied()
        .filter(|c| c.is_finite())
        .fold(0.0_f64, f64::max);
    let big = (finite_max + 1.0) * (n_rows.max(n_cols) as f64 + 1.0);

    // The row-potential formulation wants rows <= cols; transpose otherwise.
    let transposed = n_rows > n_cols;
    let (n, m) = if transposed {
        (n_cols, n_rows)
    } else {
        (n_rows, n_cols)
    };
    let at = |i: usize, j: usize| -> f64 {
        let c = if transposed { cost[j][i] } else { cost[i][j] };
        if c.is_finite() {
            c
        } else {
            big
        }
    };

    // Potentials over rows (u) and columns (v); p[j] is the row assigned to
    // column j (1-based over columns, column 0 is the virtual start).
    let mut u = vec![0.0_f64; n + 1];
    let mut v = vec![0.0_f64; m + 1];
    let mut p = vec![usize::MAX; m + 1];
    let mut way = vec![0_usize; m + 1];

    for i in 0..n {
        p[0] = i;
        let mut j0 = 0_usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0_usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = at(i0, j - 1) - u[i0 + 1] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j] + 1] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == usize::MAX {
                break;
            }
        }
        // Unwind the augmenting path.
        while j0 != 0 {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        }
    }

    let mut pairs = Vec::new();
    let mut total = 0.0;
    for j in 1..=m {
        let i = p[j];
        if i == usize::MAX {
            continue;
        }
        let (row, col) = if transposed { (j - 1, i) } else { (i, j - 1) };
        if cost[row][col].is_finite() {
            pairs.push((row, col));
            total += cost[row][col];
        }
    }
    pairs.sort_unstable();
    Assignment {
        pairs,
        total_cost: total,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    /// Brute-force oracle: enumerate all maximal injective row->column maps.
    fn brute_force(cost: &[Vec<f64>]) -> (usize, f64) {
        let n_cols = cost.first().map_or(0, |r| r.len());
        let mut best: (usize, f64) = (0, 0.0);
        // Assign rows in order; every row may also stay unmatched.
        fn recurse(
            cost: &[Vec<f64>],
            row: usize,
            used: &mut Vec<bool>,
            matched: usize,
            total: f64,
            best: &mut (usize, f64),
        ) {
            if row == cost.len() {
                if matched > best.0 || (matched == best.0 && total < best.1) {
                    *best = (matched, total);
                }
                return;
            }
            // Leave this row unmatched.
            recurse(cost, row + 1, used, matched, total, best);
            for c in 0..used.len() {
                if !used[c] && cost[row][c].is_finite() {
                    used[c] = true;
                    recurse(cost, row + 1, used, matched + 1, total + cost[row][c], best);
                    used[c] = false;
                }
            }
        }
        let mut used = vec![false; n_cols];
        recurse(cost, 0, &mut used, 0, 0.0, &mut best);
        best
    }

    #[test]
    fn single_entry() {
        let a = hungarian_assign(&[vec![3.0]]);
        assert_eq!(a.pairs, vec![(0, 0)]);
        assert_eq!(a.total_cost, 3.0);
    }

    #[test]
    fn three_by_three_known_optimum() {
        let cost = vec![
            vec![4.0, 1.0, 3.0],
            vec![2.0, 0.0, 5.0],
            vec![3.0, 2.0, 2.0],
        ];
        let a = hungarian_assign(&cost);
        assert_eq!(a.total_cost, 5.0);
        assert_eq!(a.pairs, vec![(0, 1), (1, 0), (2, 2)]);
    }

    #[test]
    fn forbidden_row_stays_unmatched() {
        let cost = vec![vec![f64::INFINITY, f64::INFINITY, f64::INFINITY], vec![1.0, 2.0, 3.0]];
        let a = hungarian_assign(&cost);
        assert_eq!(a.pairs, vec![(1, 0)]);
        assert_eq!(a.total_cost, 1.0);
    }

    #[test]
    fn empty_matrix() {
        assert_eq!(hungarian_assign(&[]).pairs, vec![]);
    }

    #[test]
    fn rectangular_more_rows_than_columns() {
        let cost = vec![vec![5.0], vec![1.0], vec![3.0]];
        let a = hungarian_assign(&cost);
        assert_eq!(a.pairs, vec![(1, 0)]);
    }

    #[test]
    fn matches_brute_force_on_random_matrices() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        for trial in 0..200 {
            let n = rng.gen_range(1..=6);
            let m = rng.gen_range(1..=6);
            let cost: Vec<Vec<f64>> = (0..n)
                .map(|_| {
                    (0..m)
                        .map(|_| {
                            if rng.gen::<f64>() < 0.15 {
                                f64::INFINITY
                            } else {
                                (rng.gen_range(0..100) as f64) / 4.0
                            }
                        })
                        .collect()
                })
                .collect();
            let got = hungarian_assign(&cost);
            let (best_matched, best_cost) = brute_force(&cost);
            assert_eq!(got.pairs.len(), best_matched, "cardinality, trial {trial}: {cost:?}");
            assert!(
                (got.total_cost - best_cost).abs() < 1e-9,
                "cost mismatch on trial {trial}: got {} want {} for {cost:?}",
                got.total_cost,
                best_cost
            );
        }
    }
}
