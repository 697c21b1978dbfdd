//! Gridworld substrate shared by both games and every policy: coordinates,
//! facing directions, the action alphabet and breadth-first search.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A cell on a rectangular grid. Serialized as `[row, col]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct GridPos {
    pub row: usize,
    pub col: usize,
}

impl GridPos {
    pub const fn new(row: usize, col: usize) -> Self {
        GridPos { row, col }
    }

    pub fn manhattan(self, other: GridPos) -> usize {
        self.row.abs_diff(other.row) + self.col.abs_diff(other.col)
    }

    /// Applies a unit delta, returning `None` when the result would be negative.
    pub fn offset(self, dr: i32, dc: i32) -> Option<GridPos> {
        let row = self.row.checked_add_signed(dr as isize)?;
        let col = self.col.checked_add_signed(dc as isize)?;
        Some(GridPos { row, col })
    }
}

impl From<[usize; 2]> for GridPos {
    fn from([row, col]: [usize; 2]) -> Self {
        GridPos { row, col }
    }
}

impl From<GridPos> for [usize; 2] {
    fn from(p: GridPos) -> Self {
        [p.row, p.col]
    }
}

impl fmt::Display for GridPos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.row, self.col)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
#[repr(u8)]
pub enum Orientation {
    North = 0,
    East = 1,
    South = 2,
    West = 3,
}

impl Orientation {
    pub const ALL: [Orientation; 4] = [
        Orientation::North,
        Orientation::East,
        Orientation::South,
        Orientation::West,
    ];

    pub fn from_index(i: usize) -> Orientation {
        Self::ALL[i % 4]
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn rotate_left(self) -> Orientation {
        Self::from_index(self.index() + 3)
    }

    pub fn rotate_right(self) -> Orientation {
        Self::from_index(self.index() + 1)
    }

    /// Unit `(row, col)` delta of the facing direction.
    pub fn delta(self) -> (i32, i32) {
        match self {
            Orientation::North => (-1, 0),
            Orientation::East => (0, 1),
            Orientation::South => (1, 0),
            Orientation::West => (0, -1),
        }
    }

    /// Shortest rotation from `self` to `target`: right when the target is one
    /// step clockwise, left otherwise.
    pub fn rotation_toward(self, target: Orientation) -> Option<Action> {
        if self == target {
            None
        } else if self.rotate_right() == target {
            Some(Action::RotateRight)
        } else {
            Some(Action::RotateLeft)
        }
    }
}

impl From<Orientation> for u8 {
    fn from(o: Orientation) -> u8 {
        o as u8
    }
}

impl TryFrom<u8> for Orientation {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        if v < 4 {
            Ok(Self::from_index(v as usize))
        } else {
            Err(Error::invalid(format!("orientation {v} out of range 0..4")))
        }
    }
}

/// The per-agent action alphabet. Moves are absolute grid-axis moves; the
/// orientation only aims the tagging and cleaning beams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
#[repr(u8)]
pub enum Action {
    MoveNorth = 0,
    MoveSouth = 1,
    MoveWest = 2,
    MoveEast = 3,
    RotateLeft = 4,
    RotateRight = 5,
    Beam = 6,
    Stand = 7,
    Clean = 8,
}

impl Action {
    pub const ALL: [Action; 9] = [
        Action::MoveNorth,
        Action::MoveSouth,
        Action::MoveWest,
        Action::MoveEast,
        Action::RotateLeft,
        Action::RotateRight,
        Action::Beam,
        Action::Stand,
        Action::Clean,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    /// Decodes an action code, rejecting anything at or above `n_actions`.
    pub fn from_code(code: u8, n_actions: usize) -> Result<Action> {
        if (code as usize) < n_actions.min(Self::ALL.len()) {
            Ok(Self::ALL[code as usize])
        } else {
            Err(Error::invalid(format!(
                "action code {code} out of range for a game with {n_actions} actions"
            )))
        }
    }

    /// Row/column delta of a move action.
    pub fn move_delta(self) -> Option<(i32, i32)> {
        match self {
            Action::MoveNorth => Some((-1, 0)),
            Action::MoveSouth => Some((1, 0)),
            Action::MoveWest => Some((0, -1)),
            Action::MoveEast => Some((0, 1)),
            _ => None,
        }
    }
}

impl From<Action> for u8 {
    fn from(a: Action) -> u8 {
        a as u8
    }
}

impl TryFrom<u8> for Action {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        Action::from_code(v, Action::ALL.len())
    }
}

/// Maps a unit row/column delta onto the absolute move action. `orient` is
/// accepted for call-site compatibility with orientation-aware encodings and
/// does not influence the result.
pub fn direction_to_action(dr: i32, dc: i32, _orient: Orientation) -> Result<Action> {
    match (dr, dc) {
        (-1, 0) => Ok(Action::MoveNorth),
        (1, 0) => Ok(Action::MoveSouth),
        (0, -1) => Ok(Action::MoveWest),
        (0, 1) => Ok(Action::MoveEast),
        _ => Err(Error::invalid(format!(
            "delta ({dr}, {dc}) is not a unit axis move"
        ))),
    }
}

/// Bounded rectangle of cells with explicit walls. Out-of-bounds is a wall.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grid {
    width: usize,
    height: usize,
    walls: Vec<bool>,
}

impl Grid {
    pub fn new(width: usize, height: usize) -> Self {
        Grid {
            width,
            height,
            walls: vec![false; width * height],
        }
    }

    pub fn with_walls(width: usize, height: usize, walls: impl IntoIterator<Item = GridPos>) -> Result<Self> {
        let mut grid = Grid::new(width, height);
        for w in walls {
            if !grid.in_bounds(w) {
                return Err(Error::config(format!("wall {w} outside {height}x{width} grid")));
            }
            let i = grid.index(w);
            grid.walls[i] = true;
        }
        Ok(grid)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn cell_count(&self) -> usize {
        self.width * self.height
    }

    pub fn in_bounds(&self, p: GridPos) -> bool {
        p.row < self.height && p.col < self.width
    }

    pub fn index(&self, p: GridPos) -> usize {
        p.row * self.width + p.col
    }

    pub fn pos(&self, index: usize) -> GridPos {
        GridPos::new(index / self.width, index % self.width)
    }

    pub fn is_wall(&self, p: GridPos) -> bool {
        !self.in_bounds(p) || self.walls[self.index(p)]
    }

    pub fn is_walkable(&self, p: GridPos) -> bool {
        !self.is_wall(p)
    }

    pub fn set_wall(&mut self, p: GridPos, wall: bool) {
        let i = self.index(p);
        self.walls[i] = wall;
    }

    /// Neighbor of `p` one step along `(dr, dc)`, if it is walkable.
    pub fn step(&self, p: GridPos, dr: i32, dc: i32) -> Option<GridPos> {
        p.offset(dr, dc).filter(|&q| self.is_walkable(q))
    }

    /// Walkable 4-neighbors in N, S, W, E order.
    pub fn neighbors(&self, p: GridPos) -> impl Iterator<Item = GridPos> + '_ {
        NEIGHBOR_DELTAS
            .iter()
            .filter_map(move |&(dr, dc)| self.step(p, dr, dc))
    }

    pub fn cells(&self) -> impl Iterator<Item = GridPos> + '_ {
        (0..self.cell_count()).map(|i| self.pos(i))
    }

    /// Cells a beam fired from `origin` facing `orient` passes over: starting at
    /// the facing cell, up to `length` cells, stopping at the first wall.
    pub fn beam_cells(&self, origin: GridPos, orient: Orientation, length: usize) -> Vec<GridPos> {
        let (dr, dc) = orient.delta();
        let mut out = Vec::with_capacity(length);
        let mut cur = origin;
        for _ in 0..length {
            match self.step(cur, dr, dc) {
                Some(next) => {
                    out.push(next);
                    cur = next;
                }
                None => break,
            }
        }
        out
    }
}

/// Neighbor order used throughout: north, south, west, east.
pub const NEIGHBOR_DELTAS: [(i32, i32); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];

/// Result of a (multi-source) breadth-first search. Unreachable cells have no
/// distance, owner or first step.
#[derive(Debug, Clone)]
pub struct BfsResult {
    width: usize,
    dist: Vec<Option<u32>>,
    owner: Vec<Option<usize>>,
    first: Vec<Option<GridPos>>,
}

impl BfsResult {
    fn idx(&self, p: GridPos) -> Option<usize> {
        (p.col < self.width && p.row * self.width + p.col < self.dist.len()).then(|| p.row * self.width + p.col)
    }

    pub fn distance(&self, p: GridPos) -> Option<u32> {
        self.idx(p).and_then(|i| self.dist[i])
    }

    /// Index (into the `sources` slice) of the source that claimed `p`. Ties
    /// go to the lower source index.
    pub fn owner(&self, p: GridPos) -> Option<usize> {
        self.idx(p).and_then(|i| self.owner[i])
    }

    /// First cell to step onto when walking from the owning source toward `p`.
    /// Absent for the sources themselves.
    pub fn first_step(&self, p: GridPos) -> Option<GridPos> {
        self.idx(p).and_then(|i| self.first[i])
    }

    pub fn reachable(&self) -> impl Iterator<Item = (GridPos, u32)> + '_ {
        self.dist.iter().enumerate().filter_map(move |(i, d)| {
            d.map(|d| (GridPos::new(i / self.width, i % self.width), d))
        })
    }
}

/// Multi-source BFS over walkable cells with 4-neighborhood.
///
/// Sources are expanded in slice order, so a cell equidistant from several
/// sources is owned by the one listed first. Duplicate sources keep their
/// first occurrence.
pub fn bfs(grid: &Grid, sources: &[GridPos]) -> Result<BfsResult> {
    if sources.is_empty() {
        return Err(Error::invalid("bfs requires at least one source"));
    }
    let n = grid.cell_count();
    let mut dist = vec![None; n];
    let mut owner = vec![None; n];
    let mut first: Vec<Option<GridPos>> = vec![None; n];
    let mut queue = VecDeque::with_capacity(n);

    for (k, &s) in sources.iter().enumerate() {
        if !grid.is_walkable(s) {
            return Err(Error::invalid(format!("bfs source {s} is not walkable")));
        }
        let i = grid.index(s);
        if dist[i].is_none() {
            dist[i] = Some(0);
            owner[i] = Some(k);
            queue.push_back(s);
        }
    }

    while let Some(cur) = queue.pop_front() {
        let ci = grid.index(cur);
        let d = dist[ci].unwrap_or(0);
        for next in grid.neighbors(cur) {
            let ni = grid.index(next);
            if dist[ni].is_some() {
                continue;
            }
            dist[ni] = Some(d + 1);
            owner[ni] = owner[ci];
            first[ni] = Some(first[ci].unwrap_or(next));
            queue.push_back(next);
        }
    }

    Ok(BfsResult {
        width: grid.width(),
        dist,
        owner,
        first,
    })
}
