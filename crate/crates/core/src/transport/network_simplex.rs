//! Primal network simplex for the balanced transportation problem
//!
//! ```text
//! min Σ_ij c_ij π_ij   s.t.  Σ_j π_ij = a_i,  Σ_i π_ij = b_j,  π ≥ 0
//! ```
//!
//! on the complete bipartite graph. The spanning tree is kept strongly
//! feasible (Cunningham's leaving-arc rule), which rules out cycling on
//! degenerate pivots. Entering arcs are chosen by block search pricing.

const NONE: usize = usize::MAX;

#[derive(Debug, Clone)]
pub(crate) struct TransportSolution {
    /// Positive-mass entries `(i, j, π_ij)` in row-major order.
    pub flows: Vec<(usize, usize, f64)>,
    /// Dual potentials with `row_dual[i] + col_dual[j] ≤ c_ij`.
    pub row_dual: Vec<f64>,
    pub col_dual: Vec<f64>,
    pub total_cost: f64,
}

struct Simplex<'a> {
    m: usize,
    n: usize,
    cost: &'a [f64],
    art_cost: f64,
    flow: Vec<f64>,
    pi: Vec<f64>,
    parent: Vec<usize>,
    pred: Vec<usize>,
    /// `up[u]`: the tree arc `pred[u]` points from `u` to its parent.
    up: Vec<bool>,
    depth: Vec<usize>,
    children: Vec<Vec<usize>>,
    child_pos: Vec<usize>,
    next_arc: usize,
    block: usize,
    tol: f64,
}

impl<'a> Simplex<'a> {
    fn root(&self) -> usize {
        self.m + self.n
    }

    fn real_arcs(&self) -> usize {
        self.m * self.n
    }

    fn source(&self, e: usize) -> usize {
        let a = self.real_arcs();
        if e < a {
            e / self.n
        } else {
            let u = e - a;
            if u < self.m {
                u
            } else {
                self.root()
            }
        }
    }

    fn target(&self, e: usize) -> usize {
        let a = self.real_arcs();
        if e < a {
            self.m + e % self.n
        } else {
            let u = e - a;
            if u < self.m {
                self.root()
            } else {
                u
            }
        }
    }

    fn arc_cost(&self, e: usize) -> f64 {
        if e < self.real_arcs() {
            self.cost[e]
        } else {
            self.art_cost
        }
    }

    fn reduced_cost(&self, e: usize) -> f64 {
        self.arc_cost(e) + self.pi[self.source(e)] - self.pi[self.target(e)]
    }

    fn detach(&mut self, u: usize) {
        let p = self.parent[u];
        let pos = self.child_pos[u];
        let list = &mut self.children[p];
        list.swap_remove(pos);
        if pos < list.len() {
            let moved = list[pos];
            self.child_pos[moved] = pos;
        }
    }

    fn attach(&mut self, u: usize, p: usize) {
        self.parent[u] = p;
        self.child_pos[u] = self.children[p].len();
        self.children[p].push(u);
    }

    /// Block search: returns the most negative reduced-cost arc of the first
    /// block that contains one.
    fn find_entering(&mut self) -> Option<usize> {
        let total = self.real_arcs();
        let mut best = NONE;
        let mut best_rc = -self.tol;
        let mut scanned_in_block = 0;
        let mut e = self.next_arc;
        for _ in 0..total {
            let rc = self.reduced_cost(e);
            if rc < best_rc {
                best_rc = rc;
                best = e;
            }
            scanned_in_block += 1;
            e += 1;
            if e == total {
                e = 0;
            }
            if scanned_in_block == self.block {
                if best != NONE {
                    self.next_arc = e;
                    return Some(best);
                }
                scanned_in_block = 0;
            }
        }
        if best != NONE {
            self.next_arc = e;
            Some(best)
        } else {
            None
        }
    }

    fn join(&self, mut a: usize, mut b: usize) -> usize {
        while a != b {
            if self.depth[a] >= self.depth[b] {
                a = self.parent[a];
            } else {
                b = self.parent[b];
            }
        }
        a
    }

    fn pivot(&mut self, e_in: usize) {
        let first = self.source(e_in);
        let second = self.target(e_in);
        let join = self.join(first, second);

        // leaving arc: last blocking arc in cycle orientation
        let mut delta = f64::INFINITY;
        let mut u_out = NONE;
        let mut out_first_side = true;
        let mut u = first;
        while u != join {
            if self.up[u] {
                let d = self.flow[self.pred[u]];
                if d < delta {
                    delta = d;
                    u_out = u;
                    out_first_side = true;
                }
            }
            u = self.parent[u];
        }
        u = second;
        while u != join {
            if !self.up[u] {
                let d = self.flow[self.pred[u]];
                if d <= delta {
                    delta = d;
                    u_out = u;
                    out_first_side = false;
                }
            }
            u = self.parent[u];
        }
        debug_assert!(u_out != NONE, "transportation graph has no unbounded cycles");

        if delta > 0.0 {
            self.flow[e_in] += delta;
            let mut u = first;
            while u != join {
                let e = self.pred[u];
                if self.up[u] {
                    self.flow[e] -= delta;
                } else {
                    self.flow[e] += delta;
                }
                u = self.parent[u];
            }
            u = second;
            while u != join {
                let e = self.pred[u];
                if self.up[u] {
                    self.flow[e] += delta;
                } else {
                    self.flow[e] -= delta;
                }
                u = self.parent[u];
            }
        }
        let leaving = self.pred[u_out];
        self.flow[leaving] = 0.0;

        let (u_in, v_in) = if out_first_side {
            (first, second)
        } else {
            (second, first)
        };

        // re-root the detached subtree at u_in
        let mut path = Vec::new();
        let mut w = u_in;
        loop {
            path.push((w, self.pred[w], self.up[w]));
            if w == u_out {
                break;
            }
            w = self.parent[w];
        }
        self.detach(u_out);
        for &(child, _, _) in &path[..path.len() - 1] {
            self.detach(child);
        }
        for k in 1..path.len() {
            let (child, child_pred, child_up) = path[k - 1];
            let (node, _, _) = path[k];
            self.attach(node, child);
            self.pred[node] = child_pred;
            self.up[node] = !child_up;
        }
        self.attach(u_in, v_in);
        self.pred[u_in] = e_in;
        self.up[u_in] = self.source(e_in) == u_in;

        // potentials and depths of the moved subtree
        let mut stack = vec![u_in];
        while let Some(x) = stack.pop() {
            let p = self.parent[x];
            let e = self.pred[x];
            self.depth[x] = self.depth[p] + 1;
            self.pi[x] = if self.up[x] {
                // c + pi[x] - pi[p] = 0
                self.pi[p] - self.arc_cost(e)
            } else {
                self.pi[p] + self.arc_cost(e)
            };
            stack.extend(self.children[x].iter().copied());
        }
    }
}

/// Solves the transportation problem for positive supplies `a` (rows) and
/// demands `b` (columns) with equal totals, and row-major costs `m × n`.
pub(crate) fn solve(a: &[f64], b: &[f64], cost: &[f64]) -> TransportSolution {
    let m = a.len();
    let n = b.len();
    assert_eq!(cost.len(), m * n);
    assert!(a.iter().chain(b).all(|w| *w > 0.0), "zero-mass atoms must be removed first");

    let max_cost = cost.iter().fold(0.0f64, |acc, c| acc.max(c.abs()));
    let art_cost = (max_cost + 1.0) * (m + n) as f64;
    let nodes = m + n + 1;
    let arcs = m * n + m + n;
    let root = m + n;

    let mut s = Simplex {
        m,
        n,
        cost,
        art_cost,
        flow: vec![0.0; arcs],
        pi: vec![0.0; nodes],
        parent: vec![root; nodes],
        pred: vec![NONE; nodes],
        up: vec![false; nodes],
        depth: vec![1; nodes],
        children: vec![Vec::new(); nodes],
        child_pos: vec![0; nodes],
        next_arc: 0,
        block: ((m * n) as f64).sqrt().ceil().max(10.0) as usize,
        tol: 1e-12 * (1.0 + max_cost),
    };
    s.parent[root] = NONE;
    s.depth[root] = 0;
    for u in 0..m + n {
        let e = m * n + u;
        s.pred[u] = e;
        s.child_pos[u] = u;
        if u < m {
            s.up[u] = true;
            s.flow[e] = a[u];
            s.pi[u] = -art_cost;
        } else {
            s.up[u] = false;
            s.flow[e] = b[u - m];
            s.pi[u] = art_cost;
        }
    }
    s.children[root] = (0..m + n).collect();

    let mut pivots = 0;
    while let Some(e_in) = s.find_entering() {
        s.pivot(e_in);
        pivots += 1;
    }

    let mut flows = Vec::new();
    let mut total_cost = 0.0;
    for i in 0..m {
        for j in 0..n {
            let f = s.flow[i * n + j];
            if f > 0.0 {
                flows.push((i, j, f));
                total_cost += f * cost[i * n + j];
            }
        }
    }
    // c_ij + pi_i - pi_j ≥ 0  ⇔  (-pi_i) + pi_j ≤ c_ij
    log::debug!("network simplex finished after {pivots} pivots");
    let shift = s.pi[..m].iter().fold(f64::INFINITY, |acc, p| acc.min(-p));
    let row_dual: Vec<f64> = s.pi[..m].iter().map(|p| -p - shift).collect();
    let col_dual: Vec<f64> = s.pi[m..m + n].iter().map(|p| p + shift).collect();
    TransportSolution {
        flows,
        row_dual,
        col_dual,
        total_cost,
    }
}
