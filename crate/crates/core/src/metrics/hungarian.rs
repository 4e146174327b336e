/// Minimum-cost perfect assignment on a square cost matrix (row-major,
/// `n × n`). Returns the column assigned to each row. Shortest augmenting
/// paths with row and column potentials, O(n³).
pub fn min_cost_assignment(cost: &[f64], n: usize) -> Vec<usize> {
    assert_eq!(cost.len(), n * n, "cost matrix must be n x n");
    if n == 0 {
        return Vec::new();
    }
    // 1-based internally; column 0 is the virtual start of each path
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        let mut min_to = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let reduced = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if reduced < min_to[j] {
                    min_to[j] = reduced;
                    way[j] = j0;
                }
                if min_to[j] < delta {
                    delta = min_to[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_to[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[row_of[j] - 1] = j - 1;
    }
    assignment
}

/// Pairing of rows to columns of a rectangular `rows × cols` score matrix
/// that maximises the summed score. Rows left without a column get `None`.
pub fn max_score_matching(score: &[f64], rows: usize, cols: usize) -> Vec<Option<usize>> {
    assert_eq!(score.len(), rows * cols, "score matrix must be rows x cols");
    let n = rows.max(cols);
    let mut cost = vec![0.0; n * n];
    for i in 0..rows {
        for j in 0..cols {
            cost[i * n + j] = -score[i * cols + j];
        }
    }
    min_cost_assignment(&cost, n)
        .into_iter()
        .take(rows)
        .map(|j| (j < cols).then_some(j))
        .collect()
}
