//! Bounded-degree interaction graph at the current frame.
//!
//! Radius gating keeps candidates with `‖c_i − c_j‖ ≤ r` (inclusive); the
//! cap then keeps at most `K` of them. In deterministic mode those are the
//! `K` nearest, ties broken by ascending vehicle index. In sampled mode (used
//! during training) `K` candidates are drawn uniformly without replacement
//! whenever more than `K` pass the gate.

use std::collections::HashMap;
use std::sync::Arc;

use rand::seq::index;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// `K` value meaning "no cap".
pub const UNCAPPED: usize = usize::MAX;

/// Scenes smaller than this are searched pairwise instead of via the grid.
pub const GRID_THRESHOLD: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EdgeMode {
    #[default]
    Deterministic,
    Sampled { seed: u64 },
}

/// Per-vehicle neighbor lists `E_i` and the parameters that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeSet {
    lists: Arc<Vec<Vec<usize>>>,
    pub radius: f64,
    pub cap: usize,
    pub mode: EdgeMode,
}

impl EdgeSet {
    /// A graph with no edges over `n` vehicles.
    pub fn empty(n: usize) -> Self {
        Self {
            lists: Arc::new(vec![Vec::new(); n]),
            radius: 0.0,
            cap: 0,
            mode: EdgeMode::Deterministic,
        }
    }

    pub fn from_lists(lists: Vec<Vec<usize>>) -> Self {
        Self {
            lists: Arc::new(lists),
            radius: f64::INFINITY,
            cap: UNCAPPED,
            mode: EdgeMode::Deterministic,
        }
    }

    pub fn lists(&self) -> &[Vec<usize>] {
        &self.lists
    }

    pub fn shared_lists(&self) -> Arc<Vec<Vec<usize>>> {
        Arc::clone(&self.lists)
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.lists[i]
    }

    pub fn n_vehicles(&self) -> usize {
        self.lists.len()
    }

    /// Flattened directed pairs `(i, j)` for `j ∈ E_i`.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.lists
            .iter()
            .enumerate()
            .flat_map(|(i, l)| l.iter().map(move |&j| (i, j)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeStats {
    pub total: usize,
    pub max_list: usize,
    pub mean_list: f64,
}

pub fn edge_count_stats(edges: &EdgeSet) -> EdgeStats {
    let total: usize = edges.lists.iter().map(Vec::len).sum();
    let max_list = edges.lists.iter().map(Vec::len).max().unwrap_or(0);
    let n = edges.lists.len();
    EdgeStats {
        total,
        max_list,
        mean_list: if n == 0 { 0.0 } else { total as f64 / n as f64 },
    }
}

#[inline]
fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (a[0] - b[0], a[1] - b[1]);
    (dx * dx + dy * dy).sqrt()
}

/// Uniform grid over occupied cells of side `r`.
struct Grid {
    cell: f64,
    origin: [f64; 2],
    cells: HashMap<(i64, i64), Vec<usize>>,
}

impl Grid {
    fn new(points: &[[f64; 2]], cell: f64) -> Self {
        let origin = points.iter().fold([f64::INFINITY; 2], |m, p| [m[0].min(p[0]), m[1].min(p[1])]);
        let mut g = Self {
            cell,
            origin,
            cells: HashMap::new(),
        };
        for (i, &p) in points.iter().enumerate() {
            g.cells.entry(g.key(p)).or_default().push(i);
        }
        g
    }

    fn key(&self, p: [f64; 2]) -> (i64, i64) {
        (
            ((p[0] - self.origin[0]) / self.cell).floor() as i64,
            ((p[1] - self.origin[1]) / self.cell).floor() as i64,
        )
    }

    fn for_each_near(&self, p: [f64; 2], mut f: impl FnMut(usize)) {
        let (cx, cy) = self.key(p);
        for dx in -1..=1i64 {
            for dy in -1..=1i64 {
                if let Some(bucket) = self.cells.get(&(cx.saturating_add(dx), cy.saturating_add(dy))) {
                    bucket.iter().for_each(|&j| f(j));
                }
            }
        }
    }
}

fn by_distance(a: &(f64, usize), b: &(f64, usize)) -> std::cmp::Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// Builds `E_i` for every vehicle from its last observed position.
pub fn build_edges(positions: &[[f64; 2]], radius: f64, cap: usize, mode: EdgeMode) -> Result<EdgeSet> {
    if !(radius > 0.0) {
        return Err(Error::Config(format!("interaction radius must be positive, got {radius}")));
    }
    if cap == 0 {
        return Err(Error::Config("neighbor cap K must be at least 1".into()));
    }
    let n = positions.len();
    let grid = (n >= GRID_THRESHOLD && radius.is_finite()).then(|| Grid::new(positions, radius));
    let mut rng = match mode {
        EdgeMode::Sampled { seed } => Some(Rng::seed_from_u64(seed)),
        EdgeMode::Deterministic => None,
    };

    let mut lists = Vec::with_capacity(n);
    let mut cand: Vec<(f64, usize)> = Vec::new();
    for (i, &p) in positions.iter().enumerate() {
        cand.clear();
        let mut consider = |j: usize| {
            if j != i {
                let d = dist(p, positions[j]);
                if d <= radius {
                    cand.push((d, j));
                }
            }
        };
        match &grid {
            Some(g) => g.for_each_near(p, &mut consider),
            None => (0..n).for_each(&mut consider),
        }

        let chosen: Vec<usize> = match rng.as_mut() {
            None => {
                if cand.len() > cap {
                    cand.select_nth_unstable_by(cap - 1, by_distance);
                    cand.truncate(cap);
                }
                cand.sort_unstable_by(by_distance);
                cand.iter().map(|c| c.1).collect()
            }
            Some(rng) => {
                cand.sort_unstable_by(by_distance);
                if cand.len() > cap {
                    let mut pick = index::sample(rng, cand.len(), cap).into_vec();
                    pick.sort_unstable();
                    pick.into_iter().map(|k| cand[k].1).collect()
                } else {
                    cand.iter().map(|c| c.1).collect()
                }
            }
        };
        lists.push(chosen);
    }
    Ok(EdgeSet {
        lists: Arc::new(lists),
        radius,
        cap,
        mode,
    })
}
