//! The three-dimensional cellular automaton that places documents.
//!
//! Cells hold one of four states: dead (`0`), alive (`-1`), isolated (`-2`)
//! or active (the 1-based id of the document stored there). Documents are
//! presented once each, in corpus order:
//!
//! * the first document is written into the centre cell and its
//!   neighbourhood comes alive;
//! * a later document scans the alive cells in ascending flat index and
//!   settles in the first one having an active neighbour at least
//!   `threshold`-similar to it; that cell's dead neighbours come alive;
//! * when no alive cell qualifies, the alive cells that were tried become
//!   isolated and the document seeds a new region in the dead cell farthest
//!   (Chebyshev distance) from every active cell;
//! * isolated cells never change again.
//!
//! The linear strategy instead walks a serpentine path through the cube,
//! leaving one isolated cell between consecutive dissimilar documents.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::proximity::{ProximityKind, ProximityMatrix};

#[derive(Debug, Error, PartialEq)]
pub enum CaError {
    #[error("similarity matrix is {matrix}x{matrix} but {docs} documents were given")]
    SizeMismatch { matrix: usize, docs: usize },
    #[error("a similarity matrix is required, got a distance matrix")]
    NotSimilarity,
    #[error("threshold {0} outside [0, 1]")]
    InvalidThreshold(f64),
    #[error("threshold level {0} outside 1..=10")]
    InvalidLevel(u8),
    #[error("grid-state json: {0}")]
    Json(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum CellState {
    #[default]
    Dead,
    Alive,
    Isolated,
    Active(u32),
}

impl CellState {
    /// Integer encoding: `0` dead, `-1` alive, `-2` isolated, `k` document `k`.
    pub fn code(self) -> i64 {
        match self {
            CellState::Dead => 0,
            CellState::Alive => -1,
            CellState::Isolated => -2,
            CellState::Active(doc) => doc as i64,
        }
    }

    pub fn from_code(code: i64) -> Option<Self> {
        match code {
            0 => Some(CellState::Dead),
            -1 => Some(CellState::Alive),
            -2 => Some(CellState::Isolated),
            k if k >= 1 && k <= u32::MAX as i64 => Some(CellState::Active(k as u32)),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CellState::Dead => "dead",
            CellState::Alive => "alive",
            CellState::Isolated => "isolated",
            CellState::Active(_) => "active",
        }
    }

    pub fn doc(self) -> Option<u32> {
        match self {
            CellState::Active(d) => Some(d),
            _ => None,
        }
    }

    /// Whether `self -> next` is a permitted transition.
    pub fn may_become(self, next: CellState) -> bool {
        use CellState::*;
        matches!(
            (self, next),
            (Dead, Alive) | (Dead, Active(_)) | (Alive, Active(_)) | (Alive, Isolated) | (Alive, Alive)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NeighborhoodKind {
    /// 26 cells sharing a face, edge or corner.
    #[default]
    Moore,
    /// 6 face-adjacent cells.
    VonNeumann,
}

impl NeighborhoodKind {
    /// Radius-1 offsets in lexicographic order, self excluded.
    pub fn offsets(self) -> Vec<(i64, i64, i64)> {
        let mut out = Vec::new();
        for di in -1..=1i64 {
            for dj in -1..=1i64 {
                for dk in -1..=1i64 {
                    let manhattan = di.abs() + dj.abs() + dk.abs();
                    let keep = match self {
                        NeighborhoodKind::Moore => manhattan > 0,
                        NeighborhoodKind::VonNeumann => manhattan == 1,
                    };
                    if keep {
                        out.push((di, dj, dk));
                    }
                }
            }
        }
        out
    }
}

impl std::str::FromStr for NeighborhoodKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "moore" => Ok(Self::Moore),
            "von_neumann" | "vonneumann" | "neumann" => Ok(Self::VonNeumann),
            other => Err(format!("unknown neighborhood `{other}` (moore or von_neumann)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Similar documents go into neighbouring cells.
    #[default]
    Neighborhood,
    /// Similar documents follow each other along a serpentine path.
    Linear,
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "neighborhood" | "neighbourhood" => Ok(Self::Neighborhood),
            "linear" => Ok(Self::Linear),
            other => Err(format!("unknown strategy `{other}` (neighborhood or linear)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Threshold {
    /// Minimum similarity in `[0, 1]`.
    Similarity(f64),
    /// Level `1..=10`; 1 is the strictest.
    Level(u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaConfig {
    pub neighborhood: NeighborhoodKind,
    pub strategy: Strategy,
    pub threshold: Threshold,
}

impl CaConfig {
    /// Concrete similarity threshold for this matrix.
    pub fn resolve_threshold(&self, sim: &ProximityMatrix) -> Result<f64, CaError> {
        match self.threshold {
            Threshold::Similarity(t) if (0.0..=1.0).contains(&t) => Ok(t),
            Threshold::Similarity(t) => Err(CaError::InvalidThreshold(t)),
            Threshold::Level(l) => crate::pipeline::resolve_threshold(l, sim)
                .map(|r| r.threshold)
                .map_err(|_| CaError::InvalidLevel(l)),
        }
    }
}

/// Cube of `side³` cells, flat index `i·side² + j·side + k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grid {
    side: usize,
    cells: Vec<CellState>,
    placed: usize,
    pub neighborhood: NeighborhoodKind,
    pub strategy: Strategy,
    /// Documents that found no legal cell.
    pub unplaced: Vec<u32>,
}

/// Receives every state change made by [`run_observed`].
pub trait TransitionObserver {
    fn transition(&mut self, cell: usize, from: CellState, to: CellState);
}

impl TransitionObserver for () {
    fn transition(&mut self, _: usize, _: CellState, _: CellState) {}
}

impl Grid {
    pub fn new(side: usize) -> Self {
        assert!(side >= 1);
        Self {
            side,
            cells: vec![CellState::Dead; side * side * side],
            placed: 0,
            neighborhood: NeighborhoodKind::default(),
            strategy: Strategy::default(),
            unplaced: Vec::new(),
        }
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.placed == 0
    }

    pub fn placed(&self) -> usize {
        self.placed
    }

    pub fn cells(&self) -> &[CellState] {
        &self.cells
    }

    pub fn state(&self, idx: usize) -> CellState {
        self.cells[idx]
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.side + j) * self.side + k
    }

    pub fn coords(&self, idx: usize) -> (usize, usize, usize) {
        let s = self.side;
        (idx / (s * s), (idx / s) % s, idx % s)
    }

    pub fn center(&self) -> usize {
        let c = self.side / 2;
        self.index(c, c, c)
    }

    fn set(&mut self, idx: usize, to: CellState, obs: &mut impl TransitionObserver) {
        let from = self.cells[idx];
        if from == to {
            return;
        }
        debug_assert!(from.may_become(to), "illegal {from:?} -> {to:?} at {idx}");
        obs.transition(idx, from, to);
        if let CellState::Active(_) = to {
            self.placed += 1;
        }
        self.cells[idx] = to;
    }

    /// Cell of a document, if placed.
    pub fn cell_of(&self, doc: u32) -> Option<usize> {
        self.cells.iter().position(|&c| c == CellState::Active(doc))
    }
}

/// Side for `n_docs` documents: the smallest cube holding them, plus one.
pub fn grid_for(n_docs: usize) -> Grid {
    let n = n_docs.max(1);
    let mut s = 1;
    while s * s * s < n {
        s += 1;
    }
    Grid::new(s + 1)
}

/// In-bounds neighbours of `idx` in lexicographic offset order; no
/// wraparound at the faces.
pub fn neighbors(grid: &Grid, idx: usize, kind: NeighborhoodKind) -> Vec<usize> {
    neighbors_in(grid.side, idx, &kind.offsets())
}

fn neighbors_in(side: usize, idx: usize, offsets: &[(i64, i64, i64)]) -> Vec<usize> {
    let s = side as i64;
    let (i, j, k) = ((idx as i64) / (s * s), (idx as i64 / s) % s, idx as i64 % s);
    offsets
        .iter()
        .map(|&(di, dj, dk)| (i + di, j + dj, k + dk))
        .filter(|&(a, b, c)| (0..s).contains(&a) && (0..s).contains(&b) && (0..s).contains(&c))
        .map(|(a, b, c)| ((a * s + b) * s + c) as usize)
        .collect()
}

/// Serpentine order visiting every cell once; consecutive cells share a face.
pub fn serpentine_path(side: usize) -> Vec<usize> {
    let mut path = Vec::with_capacity(side * side * side);
    let mut row = 0usize;
    for i in 0..side {
        for jj in 0..side {
            let j = if i % 2 == 0 { jj } else { side - 1 - jj };
            for kk in 0..side {
                let k = if row % 2 == 0 { kk } else { side - 1 - kk };
                path.push((i * side + j) * side + k);
            }
            row += 1;
        }
    }
    path
}

/// Places `docs` (matrix index `i` is document `docs[i]`) on a fresh grid
/// sized by [`grid_for`].
pub fn run(docs: &[u32], sim: &ProximityMatrix, config: &CaConfig) -> Result<Grid, CaError> {
    run_observed(docs, sim, config, &mut ())
}

pub fn run_observed(
    docs: &[u32],
    sim: &ProximityMatrix,
    config: &CaConfig,
    obs: &mut impl TransitionObserver,
) -> Result<Grid, CaError> {
    if sim.kind != ProximityKind::Similarity {
        return Err(CaError::NotSimilarity);
    }
    if sim.n() != docs.len() {
        return Err(CaError::SizeMismatch {
            matrix: sim.n(),
            docs: docs.len(),
        });
    }
    let threshold = if docs.len() < 2 {
        // nothing to compare; any legal value will do
        match config.threshold {
            Threshold::Similarity(t) if !(0.0..=1.0).contains(&t) => return Err(CaError::InvalidThreshold(t)),
            Threshold::Level(l) if !(1..=10).contains(&l) => return Err(CaError::InvalidLevel(l)),
            _ => 0.0,
        }
    } else {
        config.resolve_threshold(sim)?
    };
    let mut grid = grid_for(docs.len());
    grid.neighborhood = config.neighborhood;
    grid.strategy = config.strategy;
    if docs.is_empty() {
        return Ok(grid);
    }
    match config.strategy {
        Strategy::Neighborhood => place_by_neighborhood(&mut grid, docs, sim, threshold, obs),
        Strategy::Linear => place_linearly(&mut grid, docs, sim, threshold, obs),
    }
    Ok(grid)
}

fn place_by_neighborhood(
    grid: &mut Grid,
    docs: &[u32],
    sim: &ProximityMatrix,
    threshold: f64,
    obs: &mut impl TransitionObserver,
) {
    let side = grid.side;
    let offsets = grid.neighborhood.offsets();
    let adjacency: Vec<Vec<usize>> = (0..grid.len()).map(|c| neighbors_in(side, c, &offsets)).collect();
    // matrix row of the document held by each active cell
    let mut row_at: Vec<Option<usize>> = vec![None; grid.len()];
    let mut alive: BTreeSet<usize> = BTreeSet::new();
    // Chebyshev distance from each cell to the nearest active cell
    let mut clearance = vec![usize::MAX; grid.len()];

    let place = |grid: &mut Grid,
                     alive: &mut BTreeSet<usize>,
                     row_at: &mut Vec<Option<usize>>,
                     clearance: &mut Vec<usize>,
                     cell: usize,
                     row: usize,
                     obs: &mut dyn FnMut(usize, CellState, CellState)| {
        let from = grid.cells[cell];
        let to = CellState::Active(docs[row]);
        obs(cell, from, to);
        grid.cells[cell] = to;
        grid.placed += 1;
        alive.remove(&cell);
        row_at[cell] = Some(row);
        for &n in &adjacency[cell] {
            if grid.cells[n] == CellState::Dead {
                obs(n, CellState::Dead, CellState::Alive);
                grid.cells[n] = CellState::Alive;
                alive.insert(n);
            }
        }
        let (ci, cj, ck) = grid.coords(cell);
        for (idx, c) in clearance.iter_mut().enumerate() {
            let (i, j, k) = grid.coords(idx);
            let d = i.abs_diff(ci).max(j.abs_diff(cj)).max(k.abs_diff(ck));
            *c = (*c).min(d);
        }
    };
    let mut notify = |cell: usize, from: CellState, to: CellState| obs.transition(cell, from, to);

    let center = grid.center();
    place(grid, &mut alive, &mut row_at, &mut clearance, center, 0, &mut notify);

    for row in 1..docs.len() {
        let chosen = alive.iter().copied().find(|&cell| {
            adjacency[cell]
                .iter()
                .filter_map(|&n| row_at[n])
                .map(|other| sim.get(row, other))
                .fold(f64::NEG_INFINITY, f64::max)
                >= threshold
        });
        if let Some(cell) = chosen {
            place(grid, &mut alive, &mut row_at, &mut clearance, cell, row, &mut notify);
            continue;
        }
        // Every alive cell failed against this document.
        for cell in std::mem::take(&mut alive) {
            notify(cell, CellState::Alive, CellState::Isolated);
            grid.cells[cell] = CellState::Isolated;
        }
        let seed = (0..grid.len())
            .filter(|&c| grid.cells[c] == CellState::Dead)
            .max_by(|&a, &b| clearance[a].cmp(&clearance[b]).then(b.cmp(&a)));
        match seed {
            Some(cell) => place(grid, &mut alive, &mut row_at, &mut clearance, cell, row, &mut notify),
            None => grid.unplaced.push(docs[row]),
        }
    }
}

fn place_linearly(
    grid: &mut Grid,
    docs: &[u32],
    sim: &ProximityMatrix,
    threshold: f64,
    obs: &mut impl TransitionObserver,
) {
    let path = serpentine_path(grid.side);
    let mut pos = 0usize;
    grid.set(path[0], CellState::Active(docs[0]), obs);
    if let Some(&next) = path.get(1) {
        grid.set(next, CellState::Alive, obs);
    }
    let mut prev_row = 0usize;
    for row in 1..docs.len() {
        let target = if sim.get(row, prev_row) >= threshold {
            pos + 1
        } else {
            if let Some(&gap) = path.get(pos + 1) {
                grid.set(gap, CellState::Isolated, obs);
            }
            pos + 2
        };
        let Some(&cell) = path.get(target) else {
            grid.unplaced.extend_from_slice(&docs[row..]);
            return;
        };
        grid.set(cell, CellState::Active(docs[row]), obs);
        if let Some(&next) = path.get(target + 1) {
            grid.set(next, CellState::Alive, obs);
        }
        pos = target;
        prev_row = row;
    }
}

/// Map from document to 1-based cluster id.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub cluster_of: BTreeMap<u32, u32>,
    pub n_clusters: usize,
    pub unplaced: BTreeSet<u32>,
}

impl ClusterAssignment {
    pub fn members(&self, cluster: u32) -> Vec<u32> {
        self.cluster_of
            .iter()
            .filter(|&(_, &c)| c == cluster)
            .map(|(&d, _)| d)
            .collect()
    }
}

/// Connected components of active cells under `kind`; cluster ids ascend
/// with the smallest document id of each component. Grids built by the
/// linear strategy are cut into runs along their path instead.
pub fn extract_clusters(grid: &Grid, kind: NeighborhoodKind) -> ClusterAssignment {
    let components = match grid.strategy {
        Strategy::Neighborhood => components(grid, kind),
        Strategy::Linear => path_runs(grid),
    };
    let mut keyed: Vec<Vec<u32>> = components;
    for c in &mut keyed {
        c.sort_unstable();
    }
    keyed.sort_by_key(|c| c[0]);
    let mut cluster_of = BTreeMap::new();
    for (id, members) in keyed.iter().enumerate() {
        for &d in members {
            cluster_of.insert(d, id as u32 + 1);
        }
    }
    ClusterAssignment {
        cluster_of,
        n_clusters: keyed.len(),
        unplaced: grid.unplaced.iter().copied().collect(),
    }
}

fn components(grid: &Grid, kind: NeighborhoodKind) -> Vec<Vec<u32>> {
    let offsets = kind.offsets();
    let mut seen = vec![false; grid.len()];
    let mut out = Vec::new();
    for start in 0..grid.len() {
        if seen[start] || grid.cells[start].doc().is_none() {
            continue;
        }
        seen[start] = true;
        let mut members = Vec::new();
        let mut queue = VecDeque::from([start]);
        while let Some(c) = queue.pop_front() {
            members.push(grid.cells[c].doc().expect("active"));
            for n in neighbors_in(grid.side, c, &offsets) {
                if !seen[n] && grid.cells[n].doc().is_some() {
                    seen[n] = true;
                    queue.push_back(n);
                }
            }
        }
        out.push(members);
    }
    out
}

fn path_runs(grid: &Grid) -> Vec<Vec<u32>> {
    let mut out: Vec<Vec<u32>> = Vec::new();
    let mut current = Vec::new();
    for cell in serpentine_path(grid.side) {
        match grid.cells[cell] {
            CellState::Active(d) => current.push(d),
            _ => {
                if !current.is_empty() {
                    out.push(std::mem::take(&mut current));
                }
            }
        }
    }
    if !current.is_empty() {
        out.push(current);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub i: usize,
    pub j: usize,
    pub k: usize,
    pub state: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub doc_id: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster_id: Option<u32>,
}

/// Serialized grid consumed by the viewer and the CLI export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridState {
    pub side: usize,
    pub n_clusters: usize,
    #[serde(default)]
    pub strategy: Strategy,
    #[serde(default)]
    pub neighborhood: NeighborhoodKind,
    #[serde(default)]
    pub unplaced: Vec<u32>,
    pub cells: Vec<CellRecord>,
}

impl GridState {
    pub fn new(grid: &Grid, assignment: Option<&ClusterAssignment>) -> Self {
        let cells = grid
            .cells
            .iter()
            .enumerate()
            .filter(|(_, c)| **c != CellState::Dead)
            .map(|(idx, &c)| {
                let (i, j, k) = grid.coords(idx);
                let doc_id = c.doc();
                CellRecord {
                    i,
                    j,
                    k,
                    state: c.name().to_owned(),
                    doc_id,
                    cluster_id: doc_id.and_then(|d| assignment?.cluster_of.get(&d).copied()),
                }
            })
            .collect();
        Self {
            side: grid.side,
            n_clusters: assignment.map_or(0, |a| a.n_clusters),
            strategy: grid.strategy,
            neighborhood: grid.neighborhood,
            unplaced: grid.unplaced.clone(),
            cells,
        }
    }

    pub fn to_grid(&self) -> Result<Grid, CaError> {
        let mut grid = Grid::new(self.side.max(1));
        grid.strategy = self.strategy;
        grid.neighborhood = self.neighborhood;
        grid.unplaced = self.unplaced.clone();
        for c in &self.cells {
            if c.i >= self.side || c.j >= self.side || c.k >= self.side {
                return Err(CaError::Json(format!("cell ({}, {}, {}) out of bounds", c.i, c.j, c.k)));
            }
            let state = match (c.state.as_str(), c.doc_id) {
                ("alive", _) => CellState::Alive,
                ("isolated", _) => CellState::Isolated,
                ("dead", _) => CellState::Dead,
                ("active", Some(d)) if d >= 1 => CellState::Active(d),
                (s, _) => return Err(CaError::Json(format!("bad cell state `{s}`"))),
            };
            let idx = grid.index(c.i, c.j, c.k);
            if state.doc().is_some() {
                grid.placed += 1;
            }
            grid.cells[idx] = state;
        }
        Ok(grid)
    }
}

/// Grid-state JSON: only non-dead cells, ordered by flat index.
pub fn grid_state_json(grid: &Grid, assignment: Option<&ClusterAssignment>) -> String {
    serde_json::to_string_pretty(&GridState::new(grid, assignment)).expect("grid state serializes")
}

pub fn parse_grid_state(text: &str) -> Result<GridState, CaError> {
    serde_json::from_str(text).map_err(|e| CaError::Json(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sim(n: usize, f: impl Fn(usize, usize) -> f64) -> ProximityMatrix {
        let mut v = vec![1.0; n * n];
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    v[i * n + j] = f(i.min(j), i.max(j));
                }
            }
        }
        ProximityMatrix::from_values(ProximityKind::Similarity, "test", n, v)
    }

    fn config(t: f64) -> CaConfig {
        CaConfig {
            neighborhood: NeighborhoodKind::Moore,
            strategy: Strategy::Neighborhood,
            threshold: Threshold::Similarity(t),
        }
    }

    #[test]
    fn grid_sizes() {
        assert_eq!(grid_for(1000).side(), 11);
        assert_eq!(grid_for(1).side(), 2);
        assert_eq!(grid_for(1500).side(), 13);
        assert_eq!(grid_for(8).side(), 3);
        assert_eq!(grid_for(9).side(), 4);
        assert!(grid_for(5).cells().iter().all(|&c| c == CellState::Dead));
    }

    #[test]
    fn neighborhood_sizes() {
        let g = Grid::new(5);
        let interior = g.index(2, 2, 2);
        assert_eq!(neighbors(&g, interior, NeighborhoodKind::Moore).len(), 26);
        assert_eq!(neighbors(&g, interior, NeighborhoodKind::VonNeumann).len(), 6);
        assert_eq!(neighbors(&g, 0, NeighborhoodKind::Moore).len(), 7);
        assert_eq!(neighbors(&g, 0, NeighborhoodKind::VonNeumann).len(), 3);
        let n = neighbors(&g, interior, NeighborhoodKind::VonNeumann);
        let mut sorted = n.clone();
        sorted.sort();
        assert_eq!(n, sorted, "lexicographic offsets give ascending indices");
        assert!(!n.contains(&interior));
    }

    #[test]
    fn state_codes() {
        for s in [CellState::Dead, CellState::Alive, CellState::Isolated, CellState::Active(7)] {
            assert_eq!(CellState::from_code(s.code()), Some(s));
        }
        assert_eq!(CellState::Alive.code(), -1);
        assert_eq!(CellState::Isolated.code(), -2);
        assert_eq!(CellState::from_code(-3), None);
    }

    #[test]
    fn single_document_sits_in_the_centre() {
        let g = run(&[1], &sim(1, |_, _| 0.0), &config(0.5)).unwrap();
        assert_eq!(g.side(), 2);
        assert_eq!(g.state(g.center()), CellState::Active(1));
        let alive = g.cells().iter().filter(|&&c| c == CellState::Alive).count();
        assert_eq!(alive, neighbors(&g, g.center(), NeighborhoodKind::Moore).len());
        assert!(!g.cells().contains(&CellState::Isolated));
    }

    #[test]
    fn similar_pair_is_adjacent() {
        for kind in [NeighborhoodKind::Moore, NeighborhoodKind::VonNeumann] {
            let cfg = CaConfig { neighborhood: kind, ..config(0.5) };
            let g = run(&[1, 2], &sim(2, |_, _| 0.9), &cfg).unwrap();
            let a = g.cell_of(1).unwrap();
            let b = g.cell_of(2).unwrap();
            assert!(neighbors(&g, a, kind).contains(&b));
            assert_eq!(extract_clusters(&g, kind).n_clusters, 1);
        }
    }

    #[test]
    fn dissimilar_pair_seeds_a_new_region() {
        let kind = NeighborhoodKind::VonNeumann;
        let cfg = CaConfig { neighborhood: kind, ..config(0.5) };
        let g = run(&[1, 2], &sim(2, |_, _| 0.1), &cfg).unwrap();
        let a = g.cell_of(1).unwrap();
        let b = g.cell_of(2).unwrap();
        assert!(!neighbors(&g, a, kind).contains(&b));
        assert!(neighbors(&g, a, kind).iter().all(|&n| g.state(n) == CellState::Isolated));
        let a = extract_clusters(&g, kind);
        assert_eq!(a.n_clusters, 2);
        assert_eq!(a.cluster_of[&1], 1);
        assert_eq!(a.cluster_of[&2], 2);
    }

    #[test]
    fn moore_halo_can_fill_a_small_grid() {
        // side 3: the centre's 26 neighbours are the whole cube
        let g = run(&[1, 2], &sim(2, |_, _| 0.1), &config(0.5)).unwrap();
        assert_eq!(g.side(), 3);
        assert_eq!(g.placed(), 1);
        assert_eq!(g.unplaced, vec![2]);
        let a = extract_clusters(&g, NeighborhoodKind::Moore);
        assert_eq!(a.n_clusters, 1);
        assert_eq!(a.unplaced, BTreeSet::from([2]));
    }

    #[test]
    fn rejects_distance_matrix_and_size_mismatch() {
        let d = ProximityMatrix::from_values(ProximityKind::Distance, "x", 1, vec![0.0]);
        assert_eq!(run(&[1], &d, &config(0.5)).unwrap_err(), CaError::NotSimilarity);
        assert!(matches!(
            run(&[1, 2, 3], &sim(2, |_, _| 0.0), &config(0.5)),
            Err(CaError::SizeMismatch { .. })
        ));
        assert_eq!(
            run(&[1, 2], &sim(2, |_, _| 0.0), &config(1.5)).unwrap_err(),
            CaError::InvalidThreshold(1.5)
        );
    }

    #[test]
    fn serpentine_is_face_connected() {
        for side in 1..6 {
            let path = serpentine_path(side);
            assert_eq!(path.len(), side * side * side);
            let unique: BTreeSet<_> = path.iter().collect();
            assert_eq!(unique.len(), path.len());
            let g = Grid::new(side);
            for w in path.windows(2) {
                assert!(neighbors(&g, w[0], NeighborhoodKind::VonNeumann).contains(&w[1]));
            }
        }
    }

    #[test]
    fn linear_strategy_separates_with_isolated_cells() {
        // 1,2 similar; 3 dissimilar to 2; 4 similar to 3
        let s = sim(4, |i, j| if (i < 2) == (j < 2) { 0.9 } else { 0.1 });
        let cfg = CaConfig {
            strategy: Strategy::Linear,
            ..config(0.5)
        };
        let g = run(&[1, 2, 3, 4], &s, &cfg).unwrap();
        let path = serpentine_path(g.side());
        let states: Vec<CellState> = path.iter().take(6).map(|&c| g.state(c)).collect();
        assert_eq!(
            states,
            vec![
                CellState::Active(1),
                CellState::Active(2),
                CellState::Isolated,
                CellState::Active(3),
                CellState::Active(4),
                CellState::Alive
            ]
        );
        let a = extract_clusters(&g, NeighborhoodKind::Moore);
        assert_eq!(a.n_clusters, 2);
        assert_eq!(a.members(1), vec![1, 2]);
        assert_eq!(a.members(2), vec![3, 4]);
    }

    #[test]
    fn linear_strategy_overflow_is_reported() {
        // 8 mutually dissimilar documents on a 3-cube need 15 path cells of 27
        // 27 documents need 53 cells of 64
        let n = 27;
        let docs: Vec<u32> = (1..=n as u32).collect();
        let cfg = CaConfig {
            strategy: Strategy::Linear,
            ..config(0.5)
        };
        let g = run(&docs, &sim(n, |_, _| 0.0), &cfg).unwrap();
        assert_eq!(g.placed() + g.unplaced.len(), n);
        assert_eq!(g.placed(), 27);
        assert!(g.unplaced.is_empty());
        let n = 30;
        let docs: Vec<u32> = (1..=n as u32).collect();
        let g = run(&docs, &sim(n, |_, _| 0.0), &cfg).unwrap();
        assert_eq!(g.side(), 5);
        assert_eq!(g.placed() + g.unplaced.len(), n);
    }

    #[test]
    fn empty_grid_json() {
        let g = Grid::new(3);
        let v: serde_json::Value = serde_json::from_str(&grid_state_json(&g, None)).unwrap();
        assert_eq!(v["side"], 3);
        assert_eq!(v["n_clusters"], 0);
        assert_eq!(v["cells"].as_array().unwrap().len(), 0);
    }

    #[test]
    fn one_document_json_lists_halo() {
        let g = run(&[1], &sim(1, |_, _| 0.0), &config(0.5)).unwrap();
        let a = extract_clusters(&g, NeighborhoodKind::Moore);
        let state = GridState::new(&g, Some(&a));
        assert_eq!(state.cells.len(), 8);
        let active: Vec<_> = state.cells.iter().filter(|c| c.state == "active").collect();
        assert_eq!(active.len(), 1);
        assert_eq!(active[0].doc_id, Some(1));
        assert_eq!(active[0].cluster_id, Some(1));
        assert!(state.cells.iter().filter(|c| c.state == "alive").all(|c| c.doc_id.is_none()));
    }

    #[test]
    fn json_round_trip() {
        let s = sim(6, |i, j| if (i < 3) == (j < 3) { 0.8 } else { 0.2 });
        let docs: Vec<u32> = (1..=6).collect();
        let g = run(&docs, &s, &config(0.5)).unwrap();
        let a = extract_clusters(&g, NeighborhoodKind::Moore);
        let text = grid_state_json(&g, Some(&a));
        let back = parse_grid_state(&text).unwrap().to_grid().unwrap();
        assert_eq!(back, g);
        assert_eq!(extract_clusters(&back, NeighborhoodKind::Moore), a);
    }
}
