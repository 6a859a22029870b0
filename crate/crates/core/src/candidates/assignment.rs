//! Maximum-weight bipartite assignment (Kuhn-Munkres with potentials).

/// Solves the rectangular assignment problem maximizing the total weight.
///
/// Returns, for every row, the column it is assigned to. When there are more
/// rows than columns, `min(rows, cols)` rows receive a column. Rows are
/// processed in index order, so equal-weight alternatives resolve towards
/// lower row and column indices.
pub fn max_weight_assignment(weights: &[Vec<f64>]) -> Vec<Option<usize>> {
    let rows = weights.len();
    if rows == 0 {
        return Vec::new();
    }
    let cols = weights[0].len();
    debug_assert!(weights.iter().all(|r| r.len() == cols));
    if cols == 0 {
        return vec![None; rows];
    }

    if rows <= cols {
        let cost: Vec<Vec<f64>> = weights.iter().map(|r| r.iter().map(|w| -w).collect()).collect();
        min_cost(&cost)
    } else {
        let cost: Vec<Vec<f64>> = (0..cols)
            .map(|c| (0..rows).map(|r| -weights[r][c]).collect())
            .collect();
        let by_col = min_cost(&cost);
        let mut out = vec![None; rows];
        for (c, r) in by_col.into_iter().enumerate() {
            if let Some(r) = r {
                out[r] = Some(c);
            }
        }
        out
    }
}

/// Min-cost assignment for `n <= m`; every row gets a column.
fn min_cost(cost: &[Vec<f64>]) -> Vec<Option<usize>> {
    let n = cost.len();
    let m = cost[0].len();
    debug_assert!(n <= m);
    // 1-based potentials; column 0 is the virtual start.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];

    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
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
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut out = vec![None; n];
    for j in 1..=m {
        if owner[j] != 0 {
            out[owner[j] - 1] = Some(j - 1);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn total(w: &[Vec<f64>], a: &[Option<usize>]) -> f64 {
        a.iter().enumerate().filter_map(|(r, c)| c.map(|c| w[r][c])).sum()
    }

    #[test]
    fn diagonal_dominant() {
        let w = vec![vec![0.9, 0.1, 0.1], vec![0.1, 0.9, 0.1], vec![0.1, 0.1, 0.9]];
        assert_eq!(max_weight_assignment(&w), vec![Some(0), Some(1), Some(2)]);
    }

    #[test]
    fn rectangular_both_ways() {
        let w = vec![vec![0.1, 0.8, 0.3]];
        assert_eq!(max_weight_assignment(&w), vec![Some(1)]);
        let w = vec![vec![0.1], vec![0.8], vec![0.3]];
        assert_eq!(max_weight_assignment(&w), vec![None, Some(0), None]);
    }

    #[test]
    fn prefers_global_optimum_over_greedy() {
        // Greedy would take (0,0)=0.9 and then (1,1)=0.1; optimum is 0.8+0.8.
        let w = vec![vec![0.9, 0.8], vec![0.8, 0.1]];
        let a = max_weight_assignment(&w);
        assert!((total(&w, &a) - 1.6).abs() < 1e-12);
    }

    #[test]
    fn empty_inputs() {
        assert!(max_weight_assignment(&[]).is_empty());
        assert_eq!(max_weight_assignment(&[vec![], vec![]]), vec![None, None]);
    }
}
