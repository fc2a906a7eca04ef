use crate::autodiff::Matrix;

/// Minimum-cost assignment of rows to columns.
///
/// Returns, for each row, its column or `None` when the row is left over
/// (more rows than columns). Rectangular inputs are padded with a constant
/// larger than any entry. Among equal-cost augmenting choices the lowest
/// column index wins, which makes the result deterministic.
pub fn hungarian(cost: &Matrix) -> Vec<Option<usize>> {
    let (rows, cols) = cost.shape();
    if rows == 0 {
        return Vec::new();
    }
    if cols == 0 {
        return vec![None; rows];
    }
    assert!(cost.is_finite(), "hungarian needs finite costs");
    let n = rows.max(cols);
    let max = cost.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let pad = max + 1.0;
    let a = |i: usize, j: usize| if i < rows && j < cols { cost.get(i, j) } else { pad };

    // Shortest augmenting paths with potentials; 1-based with a virtual
    // column 0.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
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
    let mut out = vec![None; rows];
    for j in 1..=n {
        let i = p[j];
        if i >= 1 && i <= rows && j <= cols {
            out[i - 1] = Some(j - 1);
        }
    }
    out
}

/// Total cost of an assignment over its matched rows.
pub fn assignment_cost(cost: &Matrix, assignment: &[Option<usize>]) -> f64 {
    assignment
        .iter()
        .enumerate()
        .filter_map(|(i, j)| j.map(|j| cost.get(i, j)))
        .sum()
}
