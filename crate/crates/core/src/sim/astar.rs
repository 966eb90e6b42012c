//! 8-connected grid search on the inflated map.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::grid::OccupancyGrid;
use crate::error::{Error, Result};

pub type Cell = (usize, usize);

const NEIGHBORS: [(isize, isize); 8] = [
    (1, 0),
    (-1, 0),
    (0, 1),
    (0, -1),
    (1, 1),
    (1, -1),
    (-1, 1),
    (-1, -1),
];

/// Cells closer than `inflation` (meters) to an obstacle are blocked.
fn traversable(grid: &OccupancyGrid, (c, r): Cell, inflation: f64) -> bool {
    !grid.is_occupied(c, r) && grid.cell_distance(c, r) >= inflation
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Entry {
    f: f64,
    index: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    // min-heap on f, then on index for determinism
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .f
            .total_cmp(&self.f)
            .then_with(|| other.index.cmp(&self.index))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn search(
    grid: &OccupancyGrid,
    start: Cell,
    goal: Cell,
    inflation: f64,
    heuristic: bool,
) -> Result<Vec<Cell>> {
    let (w, h) = (grid.width(), grid.height());
    for (name, (c, r)) in [("start", start), ("goal", goal)] {
        if c >= w || r >= h {
            return Err(Error::Blocked(format!(
                "{name} cell ({c}, {r}) outside the {w}x{h} grid"
            )));
        }
        if !traversable(grid, (c, r), inflation) {
            return Err(Error::Blocked(format!(
                "{name} cell ({c}, {r}) is occupied after inflation"
            )));
        }
    }
    let idx = |(c, r): Cell| r * w + c;
    let h_cost = |(c, r): Cell| {
        if heuristic {
            (c as f64 - goal.0 as f64).hypot(r as f64 - goal.1 as f64)
        } else {
            0.0
        }
    };
    let mut g = vec![f64::INFINITY; w * h];
    let mut parent = vec![usize::MAX; w * h];
    let mut closed = vec![false; w * h];
    let mut open = BinaryHeap::new();
    g[idx(start)] = 0.0;
    open.push(Entry {
        f: h_cost(start),
        index: idx(start),
    });
    while let Some(Entry { index, .. }) = open.pop() {
        if closed[index] {
            continue;
        }
        closed[index] = true;
        if index == idx(goal) {
            let mut path = vec![goal];
            let mut k = index;
            while parent[k] != usize::MAX {
                k = parent[k];
                path.push((k % w, k / w));
            }
            path.reverse();
            return Ok(path);
        }
        let (c, r) = (index % w, index / w);
        for (dc, dr) in NEIGHBORS {
            let (nc, nr) = (c as isize + dc, r as isize + dr);
            if nc < 0 || nr < 0 || nc >= w as isize || nr >= h as isize {
                continue;
            }
            let next = (nc as usize, nr as usize);
            if !traversable(grid, next, inflation) {
                continue;
            }
            let diagonal = dc != 0 && dr != 0;
            if diagonal
                && !(traversable(grid, (nc as usize, r), inflation)
                    && traversable(grid, (c, nr as usize), inflation))
            {
                continue;
            }
            let ni = idx(next);
            let cand = g[index]
                + if diagonal {
                    std::f64::consts::SQRT_2
                } else {
                    1.0
                };
            if cand < g[ni] {
                g[ni] = cand;
                parent[ni] = index;
                open.push(Entry {
                    f: cand + h_cost(next),
                    index: ni,
                });
            }
        }
    }
    Ok(Vec::new())
}

/// Shortest 8-connected path (unit and `sqrt(2)` step costs, no corner
/// cutting) from `start` to `goal`, both inclusive. Empty when unreachable.
pub fn astar(grid: &OccupancyGrid, start: Cell, goal: Cell, inflation: f64) -> Result<Vec<Cell>> {
    search(grid, start, goal, inflation, true)
}

/// Uninformed search over the same graph.
pub fn dijkstra(
    grid: &OccupancyGrid,
    start: Cell,
    goal: Cell,
    inflation: f64,
) -> Result<Vec<Cell>> {
    search(grid, start, goal, inflation, false)
}

/// `(orthogonal, diagonal)` step counts of a path.
pub fn step_counts(path: &[Cell]) -> (usize, usize) {
    path.windows(2).fold((0, 0), |(o, d), w| {
        if w[0].0 != w[1].0 && w[0].1 != w[1].1 {
            (o, d + 1)
        } else {
            (o + 1, d)
        }
    })
}

/// Path length in cells.
pub fn path_cost(path: &[Cell]) -> f64 {
    let (o, d) = step_counts(path);
    o as f64 + d as f64 * std::f64::consts::SQRT_2
}
