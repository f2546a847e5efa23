//! Minimum-cost linear assignment (Hungarian method, O(n³) with dual potentials).

/// Solves the rectangular assignment problem on a row-major `cost` matrix.
///
/// Returns `min(n, m)` `(row, col)` pairs sorted by row. Rectangular inputs are
/// padded to square with a constant finite sentinel, which shifts every
/// complete assignment by the same amount and so leaves the optimum intact.
/// Among equal-cost alternatives the solver prefers lower column indices while
/// scanning rows in ascending order.
pub fn solve_assignment(cost: &[Vec<f64>]) -> Vec<(usize, usize)> {
    let n = cost.len();
    let m = cost.first().map_or(0, Vec::len);
    if n == 0 || m == 0 {
        return Vec::new();
    }
    debug_assert!(cost.iter().all(|r| r.len() == m), "ragged cost matrix");
    debug_assert!(cost.iter().flatten().all(|v| v.is_finite()), "non-finite cost");

    let dim = n.max(m);
    let max_abs = cost.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
    let sentinel = max_abs * dim as f64 + 1.0;
    let at = |i: usize, j: usize| -> f64 {
        if i < n && j < m {
            cost[i][j]
        } else {
            sentinel
        }
    };

    // 1-based arrays; p[j] = row assigned to column j, 0 = free.
    let mut u = vec![0.0f64; dim + 1];
    let mut v = vec![0.0f64; dim + 1];
    let mut p = vec![0usize; dim + 1];
    let mut way = vec![0usize; dim + 1];
    for i in 1..=dim {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; dim + 1];
        let mut used = vec![false; dim + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=dim {
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
            for j in 0..=dim {
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

    let mut pairs: Vec<(usize, usize)> = (1..=dim)
        .filter(|&j| p[j] != 0)
        .map(|j| (p[j] - 1, j - 1))
        .filter(|&(i, j)| i < n && j < m)
        .collect();
    pairs.sort_unstable();
    pairs
}

pub fn assignment_cost(cost: &[Vec<f64>], pairs: &[(usize, usize)]) -> f64 {
    pairs.iter().map(|&(i, j)| cost[i][j]).sum()
}

/// Optimal assignment restricted to pairs with `cost <= gate`.
///
/// Infeasible entries are replaced by a penalty larger than any sum of feasible
/// costs, so the solver first maximizes the number of gated matches and then
/// minimizes their total cost.
pub fn solve_gated(cost: &[Vec<f64>], gate: f64) -> Vec<(usize, usize)> {
    let n = cost.len();
    let m = cost.first().map_or(0, Vec::len);
    if n == 0 || m == 0 {
        return Vec::new();
    }
    let feasible_sum: f64 = cost
        .iter()
        .flatten()
        .filter(|&&c| c <= gate)
        .map(|c| c.abs())
        .sum();
    let penalty = feasible_sum * 2.0 + gate.abs() + 1.0;
    let masked: Vec<Vec<f64>> = cost
        .iter()
        .map(|row| {
            row.iter()
                .map(|&c| if c <= gate { c } else { penalty })
                .collect()
        })
        .collect();
    solve_assignment(&masked)
        .into_iter()
        .filter(|&(i, j)| cost[i][j] <= gate)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Exhaustive minimum over all injective maps from the smaller side.
    fn brute_force_min(cost: &[Vec<f64>]) -> f64 {
        let n = cost.len();
        let m = cost[0].len();
        let (rows, cols, get): (usize, usize, Box<dyn Fn(usize, usize) -> f64>) = if n <= m {
            (n, m, Box::new(|i, j| cost[i][j]))
        } else {
            (m, n, Box::new(|i, j| cost[j][i]))
        };
        fn rec(
            row: usize,
            rows: usize,
            cols: usize,
            used: &mut Vec<bool>,
            acc: f64,
            best: &mut f64,
            get: &dyn Fn(usize, usize) -> f64,
        ) {
            if row == rows {
                *best = best.min(acc);
                return;
            }
            for c in 0..cols {
                if !used[c] {
                    used[c] = true;
                    rec(row + 1, rows, cols, used, acc + get(row, c), best, get);
                    used[c] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        rec(0, rows, cols, &mut vec![false; cols], 0.0, &mut best, &*get);
        best
    }

    #[test]
    fn trivial_cases() {
        assert!(solve_assignment(&[]).is_empty());
        assert!(solve_assignment(&[vec![]]).is_empty());
        assert_eq!(solve_assignment(&[vec![7.0]]), vec![(0, 0)]);
    }

    #[test]
    fn crossed_two_by_two() {
        let cost = vec![vec![1.0, 2.0], vec![2.0, 4.0]];
        let pairs = solve_assignment(&cost);
        assert_eq!(pairs, vec![(0, 1), (1, 0)]);
        assert_eq!(assignment_cost(&cost, &pairs), 4.0);
    }

    #[test]
    fn random_five_by_five_matches_permutations() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let cost: Vec<Vec<f64>> = (0..5)
                .map(|_| (0..5).map(|_| rng.random_range(0.0..10.0)).collect())
                .collect();
            let pairs = solve_assignment(&cost);
            assert_eq!(pairs.len(), 5);
            assert!((assignment_cost(&cost, &pairs) - brute_force_min(&cost)).abs() < 1e-9);
        }
    }

    #[test]
    fn rectangular_and_negative() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for (n, m) in [(2, 5), (5, 2), (1, 6), (6, 3)] {
            let cost: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..m).map(|_| rng.random_range(-5.0..5.0)).collect())
                .collect();
            let pairs = solve_assignment(&cost);
            assert_eq!(pairs.len(), n.min(m));
            assert!((assignment_cost(&cost, &pairs) - brute_force_min(&cost)).abs() < 1e-9);
        }
    }

    #[test]
    fn gated_prefers_more_matches() {
        // Diagonal is cheaper in total but only the anti-diagonal keeps both pairs in the gate.
        let cost = vec![vec![0.1, 1.9], vec![1.9, 2.5]];
        assert_eq!(solve_gated(&cost, 2.0), vec![(0, 1), (1, 0)]);
        let far = vec![vec![10.0, 10.0]];
        assert!(solve_gated(&far, 2.0).is_empty());
    }
}
