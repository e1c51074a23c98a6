//! Balanced transportation problem solved by the primal network simplex on
//! the bipartite row/column spanning tree (MODI potentials).
//!
//! Pricing is Dantzig's most negative reduced cost. After a long run of
//! degenerate pivots the solver switches to Bland's lowest-index rule until
//! the next pivot that moves flow, which rules out cycling in practice while
//! staying deterministic.

use crate::error::{Error, Result};

const MODULE: &str = "fiber_measure";
const REDUCED_COST_TOL: f64 = 1e-12;
const DEGENERATE_STREAK: usize = 50;

pub(crate) struct Transport<'a> {
    pub supply: &'a [f64],
    pub demand: &'a [f64],
    /// Row-major `supply.len() x demand.len()` cost matrix.
    pub cost: &'a [f64],
}

struct Tree {
    m: usize,
    n: usize,
    basic: Vec<bool>,
    flow: Vec<f64>,
    row_adj: Vec<Vec<usize>>,
    col_adj: Vec<Vec<usize>>,
    // traversal scratch, nodes are rows 0..m then columns m..m+n
    parent: Vec<usize>,
    depth: Vec<usize>,
    potential: Vec<f64>,
    stack: Vec<usize>,
}

impl Tree {
    fn insert(&mut self, i: usize, j: usize, x: f64) {
        let c = i * self.n + j;
        self.basic[c] = true;
        self.flow[c] = x;
        self.row_adj[i].push(j);
        self.col_adj[j].push(i);
    }

    fn remove(&mut self, i: usize, j: usize) {
        let c = i * self.n + j;
        self.basic[c] = false;
        self.flow[c] = 0.0;
        let r = &mut self.row_adj[i];
        r.swap_remove(r.iter().position(|&k| k == j).expect("basic cell in row list"));
        let col = &mut self.col_adj[j];
        col.swap_remove(col.iter().position(|&k| k == i).expect("basic cell in column list"));
    }

    /// Potentials `u_i + v_j = c_ij` on basic cells, rooted at row 0.
    fn price(&mut self, cost: &[f64]) -> Result<()> {
        let (m, n) = (self.m, self.n);
        let unvisited = usize::MAX;
        self.depth.iter_mut().for_each(|d| *d = unvisited);
        self.depth[0] = 0;
        self.parent[0] = 0;
        self.potential[0] = 0.0;
        self.stack.clear();
        self.stack.push(0);
        let mut seen = 1;
        while let Some(node) = self.stack.pop() {
            if node < m {
                let i = node;
                for &j in &self.row_adj[i] {
                    let child = m + j;
                    if self.depth[child] == unvisited {
                        self.depth[child] = self.depth[node] + 1;
                        self.parent[child] = node;
                        self.potential[child] = cost[i * n + j] - self.potential[node];
                        self.stack.push(child);
                        seen += 1;
                    }
                }
            } else {
                let j = node - m;
                for &i in &self.col_adj[j] {
                    if self.depth[i] == unvisited {
                        self.depth[i] = self.depth[node] + 1;
                        self.parent[i] = node;
                        self.potential[i] = cost[i * n + j] - self.potential[node];
                        self.stack.push(i);
                        seen += 1;
                    }
                }
            }
        }
        if seen != m + n {
            return Err(Error::numeric(MODULE, "transport basis is not a spanning tree"));
        }
        Ok(())
    }

    fn cell(&self, a: usize, b: usize) -> usize {
        let (r, c) = if a < self.m { (a, b - self.m) } else { (b, a - self.m) };
        r * self.n + c
    }

    /// Cells of the cycle closed by entering `(i, j)`, excluding the entering
    /// cell, in cycle order starting next to row `i`. Odd positions (0, 2, ..)
    /// lose flow, even ones gain.
    fn cycle(&self, i: usize, j: usize, out: &mut Vec<usize>) {
        out.clear();
        let mut a = i;
        let mut b = self.m + j;
        let mut tail = Vec::new();
        while self.depth[a] > self.depth[b] {
            out.push(self.cell(a, self.parent[a]));
            a = self.parent[a];
        }
        while self.depth[b] > self.depth[a] {
            tail.push(self.cell(b, self.parent[b]));
            b = self.parent[b];
        }
        while a != b {
            out.push(self.cell(a, self.parent[a]));
            a = self.parent[a];
            tail.push(self.cell(b, self.parent[b]));
            b = self.parent[b];
        }
        out.extend(tail.into_iter().rev());
    }
}

impl Transport<'_> {
    pub fn solve(&self) -> Result<f64> {
        let m = self.supply.len();
        let n = self.demand.len();
        if m == 0 || n == 0 {
            return Ok(0.0);
        }
        debug_assert_eq!(self.cost.len(), m * n);
        let mut tree = Tree {
            m,
            n,
            basic: vec![false; m * n],
            flow: vec![0.0; m * n],
            row_adj: vec![Vec::new(); m],
            col_adj: vec![Vec::new(); n],
            parent: vec![0; m + n],
            depth: vec![0; m + n],
            potential: vec![0.0; m + n],
            stack: Vec::with_capacity(m + n),
        };
        self.northwest_corner(&mut tree);

        let max_pivots = 100 * (m + n) * (m + n) + 1000;
        let mut pivots = 0;
        let mut streak = 0;
        let mut cycle = Vec::with_capacity(m + n);
        loop {
            tree.price(self.cost)?;
            let bland = streak > DEGENERATE_STREAK;
            let Some((ei, ej)) = self.entering(&tree, bland) else {
                break;
            };
            if pivots >= max_pivots {
                return Err(Error::numeric(
                    MODULE,
                    format!("transport simplex did not converge after {pivots} pivots ({m}x{n})"),
                ));
            }
            tree.cycle(ei, ej, &mut cycle);
            let mut leave = usize::MAX;
            let mut theta = f64::INFINITY;
            for &c in cycle.iter().step_by(2) {
                let x = tree.flow[c];
                if x < theta || (x == theta && c < leave) {
                    theta = x;
                    leave = c;
                }
            }
            let theta = theta.max(0.0);
            if theta > 0.0 {
                for (k, &c) in cycle.iter().enumerate() {
                    if k % 2 == 0 {
                        tree.flow[c] -= theta;
                    } else {
                        tree.flow[c] += theta;
                    }
                }
                streak = 0;
            } else {
                streak += 1;
            }
            tree.remove(leave / n, leave % n);
            tree.insert(ei, ej, theta);
            pivots += 1;
        }

        let mut objective = 0.0;
        for (c, &b) in tree.basic.iter().enumerate() {
            if b {
                objective += tree.flow[c] * self.cost[c];
            }
        }
        Ok(objective)
    }

    fn northwest_corner(&self, tree: &mut Tree) {
        let (m, n) = (tree.m, tree.n);
        let mut s = self.supply[0];
        let mut d = self.demand[0];
        let (mut i, mut j) = (0, 0);
        loop {
            if i == m - 1 && j == n - 1 {
                tree.insert(i, j, s.max(d).max(0.0));
                break;
            }
            let down = j == n - 1 || (i < m - 1 && s <= d);
            if down {
                tree.insert(i, j, s);
                d -= s;
                i += 1;
                s = self.supply[i];
            } else {
                tree.insert(i, j, d);
                s -= d;
                j += 1;
                d = self.demand[j];
            }
        }
    }

    fn entering(&self, tree: &Tree, bland: bool) -> Option<(usize, usize)> {
        let (m, n) = (tree.m, tree.n);
        let mut best = -REDUCED_COST_TOL;
        let mut pick = None;
        for i in 0..m {
            let u = tree.potential[i];
            let row = &self.cost[i * n..(i + 1) * n];
            for (j, &c) in row.iter().enumerate() {
                let r = c - u - tree.potential[m + j];
                if r < best && !tree.basic[i * n + j] {
                    if bland {
                        return Some((i, j));
                    }
                    best = r;
                    pick = Some((i, j));
                }
            }
        }
        pick
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn solve(s: &[f64], d: &[f64], c: &[f64]) -> f64 {
        Transport {
            supply: s,
            demand: d,
            cost: c,
        }
        .solve()
        .unwrap()
    }

    #[test]
    fn single_cell() {
        assert_eq!(solve(&[2.0], &[2.0], &[0.5]), 1.0);
    }

    #[test]
    fn textbook_three_by_four() {
        // supplies 7, 9, 18; demands 5, 8, 7, 14; optimum 743
        let c = [
            19.0, 30.0, 50.0, 10.0, //
            70.0, 30.0, 40.0, 60.0, //
            40.0, 8.0, 70.0, 20.0,
        ];
        let v = solve(&[7.0, 9.0, 18.0], &[5.0, 8.0, 7.0, 14.0], &c);
        assert!((v - 743.0).abs() < 1e-9, "{v}");
    }

    #[test]
    fn anti_diagonal_assignment() {
        // identity costs are expensive, the reverse matching is free
        let n = 6;
        let mut c = vec![1.0; n * n];
        for i in 0..n {
            c[i * n + (n - 1 - i)] = 0.0;
        }
        let ones = vec![1.0; n];
        assert!(solve(&ones, &ones, &c).abs() < 1e-12);
    }
}
