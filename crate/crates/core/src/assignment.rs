//! Optimal 2-D assignment and Murty's ranked k-best assignments.
//!
//! The solver is the shortest augmenting path form of Jonker-Volgenant
//! (Crouse's rectangular variant): one Dijkstra-like search per row over
//! reduced costs, with dual variables kept feasible between rows. It accepts
//! rectangular problems with `rows <= cols`, where every row must be assigned
//! and surplus columns stay free. `f64::INFINITY` marks a forbidden pairing;
//! a problem whose every completion uses one is reported as infeasible.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::ops::Index;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    /// Row-major constructor. NaN and `-inf` entries are rejected.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::contract(format!(
                "cost matrix data has {} entries, expected {rows}x{cols}",
                data.len()
            )));
        }
        if data.iter().any(|c| c.is_nan() || *c == f64::NEG_INFINITY) {
            return Err(Error::contract("cost matrix entries must be finite or +inf"));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::contract("ragged cost matrix"));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        assert!(!value.is_nan() && value != f64::NEG_INFINITY);
        self.data[row * self.cols + col] = value;
    }

    fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Sum of the entries selected by `mapping`.
    pub fn cost_of(&self, mapping: &[usize]) -> f64 {
        mapping.iter().enumerate().map(|(r, &c)| self[(r, c)]).sum()
    }
}

impl Index<(usize, usize)> for CostMatrix {
    type Output = f64;

    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

/// Row `i` is assigned to column `mapping[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub mapping: Vec<usize>,
    pub cost: f64,
}

/// Minimum-cost assignment of every row to a distinct column.
pub fn solve_assignment(c: &CostMatrix) -> Result<Assignment> {
    solve_assignment_with(&mut Lsap::default(), c, None)
}

/// [`solve_assignment`] reusing the buffers of `workspace`. With
/// `changed = Some(rows)`, `c` must differ from the matrix last solved in
/// `workspace` only in those rows, and the previous solution is reused.
pub(crate) fn solve_assignment_with(
    workspace: &mut Lsap,
    c: &CostMatrix,
    changed: Option<&[usize]>,
) -> Result<Assignment> {
    if c.rows > c.cols {
        return Err(Error::contract(format!(
            "assignment needs rows <= cols, got {}x{}",
            c.rows, c.cols
        )));
    }
    let mapping = match changed {
        Some(rows) => workspace.resolve(c, rows),
        None => workspace.solve(c),
    };
    let mapping = mapping.ok_or(Error::Infeasible)?.to_vec();
    let cost = c.cost_of(&mapping);
    if !cost.is_finite() {
        return Err(Error::Infeasible);
    }
    Ok(Assignment { mapping, cost })
}

/// Workspace for the shortest augmenting path solver.
#[derive(Default)]
pub(crate) struct Lsap {
    u: Vec<f64>,
    v: Vec<f64>,
    shortest: Vec<f64>,
    path: Vec<usize>,
    col4row: Vec<usize>,
    row4col: Vec<usize>,
    visited_rows: Vec<bool>,
    visited_cols: Vec<bool>,
    remaining: Vec<usize>,
}

const NONE: usize = usize::MAX;

impl Lsap {
    fn reset(&mut self, rows: usize, cols: usize) {
        let fill = |v: &mut Vec<usize>, n: usize| {
            v.clear();
            v.resize(n, NONE);
        };
        self.u.clear();
        self.u.resize(rows, 0.0);
        self.v.clear();
        self.v.resize(cols, 0.0);
        self.shortest.resize(cols, f64::INFINITY);
        fill(&mut self.path, cols);
        fill(&mut self.col4row, rows);
        fill(&mut self.row4col, cols);
        self.visited_rows.resize(rows, false);
        self.visited_cols.resize(cols, false);
        self.remaining.resize(cols, 0);
    }

    fn solve(&mut self, c: &CostMatrix) -> Option<&[usize]> {
        self.reset(c.rows, c.cols);
        for cur_row in 0..c.rows {
            self.assign_row(c, cur_row)?;
        }
        Some(&self.col4row)
    }

    /// Re-solves after only `changed` rows of a square matrix differ from the
    /// previously solved one. The duals of the other rows stay feasible, so
    /// only the changed rows need new augmenting paths.
    fn resolve(&mut self, c: &CostMatrix, changed: &[usize]) -> Option<&[usize]> {
        if c.rows != c.cols || self.col4row.len() != c.rows || self.row4col.len() != c.cols {
            return self.solve(c);
        }
        for &i in changed {
            let j = std::mem::replace(&mut self.col4row[i], NONE);
            if j != NONE {
                self.row4col[j] = NONE;
            }
            self.u[i] = 0.0;
        }
        for &i in changed {
            self.assign_row(c, i)?;
        }
        Some(&self.col4row)
    }

    fn assign_row(&mut self, c: &CostMatrix, cur_row: usize) -> Option<()> {
        let (sink, min_val) = self.augmenting_path(c, cur_row)?;

        self.u[cur_row] += min_val;
        for i in 0..c.rows {
            if self.visited_rows[i] && i != cur_row {
                self.u[i] += min_val - self.shortest[self.col4row[i]];
            }
        }
        for j in 0..c.cols {
            if self.visited_cols[j] {
                self.v[j] -= min_val - self.shortest[j];
            }
        }

        let mut j = sink;
        loop {
            let i = self.path[j];
            self.row4col[j] = i;
            std::mem::swap(&mut self.col4row[i], &mut j);
            if i == cur_row {
                break;
            }
        }
        Some(())
    }

    fn augmenting_path(&mut self, c: &CostMatrix, cur_row: usize) -> Option<(usize, f64)> {
        let mut min_val = 0.0;
        // Columns are scanned in reverse so that ties favour low indices.
        let mut num_remaining = c.cols;
        for (it, slot) in self.remaining.iter_mut().enumerate() {
            *slot = c.cols - it - 1;
        }
        self.visited_rows.fill(false);
        self.visited_cols.fill(false);
        self.shortest.fill(f64::INFINITY);

        let mut i = cur_row;
        loop {
            self.visited_rows[i] = true;
            let row = c.row(i);
            let ui = self.u[i];
            let mut index = NONE;
            let mut lowest = f64::INFINITY;
            let (v, shortest, path, row4col) = (&self.v[..], &mut self.shortest[..], &mut self.path[..], &self.row4col[..]);
            for (it, &j) in self.remaining[..num_remaining].iter().enumerate() {
                let r = min_val + row[j] - ui - v[j];
                let s = &mut shortest[j];
                if r < *s {
                    path[j] = i;
                    *s = r;
                }
                if *s < lowest || (*s == lowest && row4col[j] == NONE) {
                    lowest = *s;
                    index = it;
                }
            }
            min_val = lowest;
            if index == NONE || !min_val.is_finite() {
                return None;
            }
            let j = self.remaining[index];
            self.visited_cols[j] = true;
            num_remaining -= 1;
            self.remaining[index] = self.remaining[num_remaining];
            if self.row4col[j] == NONE {
                return Some((j, min_val));
            }
            i = self.row4col[j];
        }
    }
}

/// A Murty subproblem: the original matrix restricted by forced and
/// forbidden pairings, together with its optimal solution.
#[derive(Debug, Clone)]
struct Node {
    solution: Assignment,
    forced: Vec<(usize, usize)>,
    forbidden: Vec<(usize, usize)>,
}

impl Node {
    fn key_cmp(&self, other: &Self) -> Ordering {
        self.solution
            .cost
            .total_cmp(&other.solution.cost)
            .then_with(|| self.solution.mapping.cmp(&other.solution.mapping))
    }
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.key_cmp(other) == Ordering::Equal
    }
}

impl Eq for Node {}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Node {
    // Reversed: BinaryHeap is a max-heap and we pop the cheapest node.
    fn cmp(&self, other: &Self) -> Ordering {
        other.key_cmp(self)
    }
}

/// Solves `c` under the constraints of a Murty node. Forced rows and their
/// columns are removed before solving the reduced problem.
fn solve_constrained(
    c: &CostMatrix,
    forced: &[(usize, usize)],
    forbidden: &[(usize, usize)],
) -> Option<Assignment> {
    let mut row_forced = vec![NONE; c.rows];
    let mut col_used = vec![false; c.cols];
    for &(r, col) in forced {
        row_forced[r] = col;
        col_used[col] = true;
    }
    let free_rows: Vec<usize> = (0..c.rows).filter(|&r| row_forced[r] == NONE).collect();
    let free_cols: Vec<usize> = (0..c.cols).filter(|&j| !col_used[j]).collect();
    let mut col_pos = vec![NONE; c.cols];
    for (p, &j) in free_cols.iter().enumerate() {
        col_pos[j] = p;
    }
    let mut reduced = CostMatrix::filled(free_rows.len(), free_cols.len(), 0.0);
    for (p, &r) in free_rows.iter().enumerate() {
        let src = c.row(r);
        let dst = &mut reduced.data[p * free_cols.len()..(p + 1) * free_cols.len()];
        for (q, &j) in free_cols.iter().enumerate() {
            dst[q] = src[j];
        }
    }
    let mut row_pos = vec![NONE; c.rows];
    for (p, &r) in free_rows.iter().enumerate() {
        row_pos[r] = p;
    }
    for &(r, j) in forbidden {
        if row_pos[r] != NONE && col_pos[j] != NONE {
            reduced.set(row_pos[r], col_pos[j], f64::INFINITY);
        }
    }
    let sub = Lsap::default().solve(&reduced)?.to_vec();
    let mut mapping = row_forced;
    for (p, &r) in free_rows.iter().enumerate() {
        mapping[r] = free_cols[sub[p]];
    }
    let cost = c.cost_of(&mapping);
    cost.is_finite().then_some(Assignment { mapping, cost })
}

/// The `k` lowest-cost assignments of `c` in non-decreasing cost order
/// (fewer if fewer feasible assignments exist). Equal costs are ordered
/// lexicographically by mapping.
pub fn murty_kbest(c: &CostMatrix, k: usize) -> Result<Vec<Assignment>> {
    if k == 0 {
        return Err(Error::contract("murty_kbest needs k >= 1"));
    }
    let first = match solve_assignment(c) {
        Ok(a) => a,
        Err(Error::Infeasible) => return Ok(Vec::new()),
        Err(e) => return Err(e),
    };
    let mut out = Vec::with_capacity(k);
    let mut heap = BinaryHeap::new();
    heap.push(Node {
        solution: first,
        forced: Vec::new(),
        forbidden: Vec::new(),
    });
    while let Some(node) = heap.pop() {
        out.push(node.solution.clone());
        if out.len() == k {
            break;
        }
        // Partition the remaining solution space of `node`.
        let mut forced = node.forced.clone();
        let mut is_forced = vec![false; c.rows];
        for &(r, _) in &node.forced {
            is_forced[r] = true;
        }
        for r in 0..c.rows {
            if is_forced[r] {
                continue;
            }
            let col = node.solution.mapping[r];
            let mut forbidden = node.forbidden.clone();
            forbidden.push((r, col));
            if let Some(solution) = solve_constrained(c, &forced, &forbidden) {
                heap.push(Node {
                    solution,
                    forced: forced.clone(),
                    forbidden,
                });
            }
            forced.push((r, col));
        }
    }
    out.sort_by(|a, b| a.cost.total_cmp(&b.cost).then_with(|| a.mapping.cmp(&b.mapping)));
    Ok(out)
}
