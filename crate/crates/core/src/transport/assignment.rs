//! Dense linear assignment by the Jonker-Volgenant shortest augmenting path
//! method: column reduction, reduction transfer, two rounds of augmenting row
//! reduction, then Dijkstra-style augmentation for the rows still free.
//!
//! Ties are resolved by the lowest index, so the output is a deterministic
//! function of the cost matrix.

const NONE: usize = usize::MAX;

/// Result of a square assignment problem.
#[derive(Debug, Clone)]
pub(crate) struct Assignment {
    /// `row_to_col[i]` is the column assigned to row `i`.
    pub row_to_col: Vec<usize>,
    /// Row duals `u` with `u_i + v_j ≤ c_ij`, tight on the assignment.
    pub row_dual: Vec<f64>,
    pub col_dual: Vec<f64>,
    pub total_cost: f64,
}

/// Solves `min_σ Σ_i c[i, σ(i)]` over permutations for a row-major `n × n`
/// cost matrix with finite entries.
pub(crate) fn solve(n: usize, cost: &[f64]) -> Assignment {
    assert_eq!(cost.len(), n * n, "cost matrix must be n × n");
    if n == 0 {
        return Assignment {
            row_to_col: Vec::new(),
            row_dual: Vec::new(),
            col_dual: Vec::new(),
            total_cost: 0.0,
        };
    }
    if n == 1 {
        return Assignment {
            row_to_col: vec![0],
            row_dual: vec![cost[0]],
            col_dual: vec![0.0],
            total_cost: cost[0],
        };
    }
    let c = |i: usize, j: usize| cost[i * n + j];

    let mut rowsol = vec![NONE; n];
    let mut colsol = vec![NONE; n];
    let mut v = vec![0.0f64; n];
    let mut matches = vec![0u32; n];

    // column reduction, scanning columns in reverse as in the original method
    for j in (0..n).rev() {
        let mut imin = 0;
        let mut min = c(0, j);
        for i in 1..n {
            let h = c(i, j);
            if h < min {
                min = h;
                imin = i;
            }
        }
        v[j] = min;
        matches[imin] += 1;
        if matches[imin] == 1 {
            rowsol[imin] = j;
            colsol[j] = imin;
        } else if v[j] < v[rowsol[imin]] {
            let j1 = rowsol[imin];
            rowsol[imin] = j;
            colsol[j] = imin;
            colsol[j1] = NONE;
        } else {
            colsol[j] = NONE;
        }
    }

    // reduction transfer
    let mut free = Vec::with_capacity(n);
    for i in 0..n {
        match matches[i] {
            0 => free.push(i),
            1 => {
                let j1 = rowsol[i];
                let mut min = f64::INFINITY;
                for j in 0..n {
                    if j != j1 {
                        let h = c(i, j) - v[j];
                        if h < min {
                            min = h;
                        }
                    }
                }
                v[j1] -= min;
            }
            _ => {}
        }
    }
    // augmenting row reduction
    let mut numfree = free.len();
    for _ in 0..2 {
        let prvnumfree = numfree;
        numfree = 0;
        let mut k = 0;
        let mut budget = 16 * n + 64;
        while k < prvnumfree {
            let i = free[k];
            k += 1;

            let mut umin = c(i, 0) - v[0];
            let mut j1 = 0;
            let mut usubmin = f64::INFINITY;
            let mut j2 = NONE;
            for j in 1..n {
                let h = c(i, j) - v[j];
                if h < usubmin {
                    if h >= umin {
                        usubmin = h;
                        j2 = j;
                    } else {
                        usubmin = umin;
                        umin = h;
                        j2 = j1;
                        j1 = j;
                    }
                }
            }

            let mut i0 = colsol[j1];
            let strict = umin < usubmin;
            if strict {
                v[j1] -= usubmin - umin;
            } else if i0 != NONE {
                j1 = j2;
                i0 = colsol[j2];
            }
            rowsol[i] = j1;
            colsol[j1] = i;
            if i0 != NONE {
                rowsol[i0] = NONE;
                if strict && budget > 0 {
                    budget -= 1;
                    k -= 1;
                    free[k] = i0;
                } else {
                    free[numfree] = i0;
                    numfree += 1;
                }
            }
        }
    }
    free.truncate(numfree);

    // augmentation
    let mut d = vec![0.0f64; n];
    let mut pred = vec![0usize; n];
    let mut collist: Vec<usize> = (0..n).collect();
    for &freerow in &free {
        for j in 0..n {
            d[j] = c(freerow, j) - v[j];
            pred[j] = freerow;
            collist[j] = j;
        }
        let mut low = 0usize;
        let mut up = 0usize;
        let mut last = 0usize;
        let mut min = 0.0f64;
        let mut endofpath = NONE;

        while endofpath == NONE {
            if up == low {
                // next batch of columns at minimum distance
                last = low;
                min = d[collist[up]];
                up += 1;
                for k in up..n {
                    let j = collist[k];
                    let h = d[j];
                    if h <= min {
                        if h < min {
                            up = low;
                            min = h;
                        }
                        collist[k] = collist[up];
                        collist[up] = j;
                        up += 1;
                    }
                }
                for &j in &collist[low..up] {
                    if colsol[j] == NONE {
                        endofpath = j;
                        break;
                    }
                }
            }
            if endofpath == NONE {
                let j1 = collist[low];
                low += 1;
                let i = colsol[j1];
                let h = c(i, j1) - v[j1] - min;
                let mut k = up;
                while k < n {
                    let j = collist[k];
                    let v2 = c(i, j) - v[j] - h;
                    if v2 < d[j] {
                        pred[j] = i;
                        if v2 == min {
                            if colsol[j] == NONE {
                                endofpath = j;
                                break;
                            }
                            collist[k] = collist[up];
                            collist[up] = j;
                            up += 1;
                        }
                        d[j] = v2;
                    }
                    k += 1;
                }
            }
        }

        // price update for the columns scanned before the last batch
        for &j1 in &collist[..last] {
            v[j1] += d[j1] - min;
        }

        loop {
            let i = pred[endofpath];
            colsol[endofpath] = i;
            std::mem::swap(&mut endofpath, &mut rowsol[i]);
            if i == freerow {
                break;
            }
        }
    }

    let row_dual: Vec<f64> = (0..n).map(|i| c(i, rowsol[i]) - v[rowsol[i]]).collect();
    let total_cost = (0..n).map(|i| c(i, rowsol[i])).sum();
    Assignment {
        row_to_col: rowsol,
        row_dual,
        col_dual: v,
        total_cost,
    }
}
