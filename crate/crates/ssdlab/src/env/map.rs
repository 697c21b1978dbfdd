//! Map files: TOML describing grid dimensions, walls, river, apple lattice,
//! spawn cells and the dynamics constants of a game.
//!
//! ```toml
//! version = 1
//! name = "cleanup-default"
//! game = "cleanup"
//! width = 25
//! height = 18
//! agents = 10
//! horizon = 1000
//!
//! [[river]]
//! rows = [0, 17]      # inclusive
//! cols = [0, 9]
//!
//! [[apples]]
//! rows = [1, 17]
//! cols = [12, 24]
//! stride = [2, 2]     # optional lattice step, default [1, 1]
//!
//! [[spawns]]
//! cells = [[0, 10], [0, 11]]
//!
//! [dynamics]
//! initial_waste = 0.25
//! ```

use std::collections::HashSet;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, GridPos};

pub const MAP_VERSION: u32 = 1;

const CLEANUP_DEFAULT: &str = include_str!("../../maps/cleanup_default.toml");
const GATHERING_DEFAULT: &str = include_str!("../../maps/gathering_default.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GameKind {
    Cleanup,
    Gathering,
}

impl GameKind {
    pub fn n_actions(self) -> usize {
        match self {
            GameKind::Cleanup => 9,
            GameKind::Gathering => 8,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            GameKind::Cleanup => "cleanup",
            GameKind::Gathering => "gathering",
        }
    }
}

impl std::fmt::Display for GameKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for GameKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cleanup" => Ok(GameKind::Cleanup),
            "gathering" => Ok(GameKind::Gathering),
            other => Err(Error::invalid(format!("unknown game '{other}'"))),
        }
    }
}

/// A set of cells: either an inclusive rectangle sampled on a lattice, or an
/// explicit list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Region {
    Rect {
        rows: [usize; 2],
        cols: [usize; 2],
        #[serde(default = "unit_stride", skip_serializing_if = "is_unit_stride")]
        stride: [usize; 2],
    },
    Cells {
        cells: Vec<GridPos>,
    },
}

fn unit_stride() -> [usize; 2] {
    [1, 1]
}

fn is_unit_stride(s: &[usize; 2]) -> bool {
    *s == [1, 1]
}

impl Region {
    pub fn rect(rows: [usize; 2], cols: [usize; 2]) -> Self {
        Region::Rect {
            rows,
            cols,
            stride: unit_stride(),
        }
    }

    pub fn cells(cells: impl IntoIterator<Item = GridPos>) -> Self {
        Region::Cells {
            cells: cells.into_iter().collect(),
        }
    }

    fn expand(&self) -> Result<Vec<GridPos>> {
        match self {
            Region::Cells { cells } => Ok(cells.clone()),
            Region::Rect { rows, cols, stride } => {
                if stride[0] == 0 || stride[1] == 0 {
                    return Err(Error::config("region stride must be >= 1"));
                }
                if rows[0] > rows[1] || cols[0] > cols[1] {
                    return Err(Error::config(format!(
                        "empty region rows {rows:?} cols {cols:?}"
                    )));
                }
                let mut out = Vec::new();
                for r in (rows[0]..=rows[1]).step_by(stride[0]) {
                    for c in (cols[0]..=cols[1]).step_by(stride[1]) {
                        out.push(GridPos::new(r, c));
                    }
                }
                Ok(out)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Dynamics {
    /// Fraction of river cells holding waste at reset.
    pub initial_waste: f64,
    /// Per-step probability that one empty river cell gains waste.
    pub waste_spawn_prob: f64,
    /// Per-step regrowth probability of a dead apple on a clean river.
    pub regrowth_max: f64,
    /// Waste fraction at or above which apples stop regrowing.
    pub regrowth_cutoff: f64,
    /// Steps a collected apple stays dead (gathering).
    pub respawn_period: u32,
    pub beam_length: usize,
    pub beam_cost: i64,
    pub tag_penalty: i64,
    pub tag_timeout: u32,
}

impl Default for Dynamics {
    fn default() -> Self {
        Dynamics {
            initial_waste: 0.25,
            waste_spawn_prob: 0.5,
            regrowth_max: 0.05,
            regrowth_cutoff: 0.4,
            respawn_period: 15,
            beam_length: 5,
            beam_cost: 1,
            tag_penalty: 50,
            tag_timeout: 25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapConfig {
    pub version: u32,
    pub name: String,
    pub game: GameKind,
    pub width: usize,
    pub height: usize,
    pub agents: usize,
    #[serde(default = "default_horizon")]
    pub horizon: u32,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub walls: Vec<Region>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub river: Vec<Region>,
    #[serde(default)]
    pub apples: Vec<Region>,
    pub spawns: Vec<Region>,
    #[serde(default)]
    pub dynamics: Dynamics,
}

fn default_horizon() -> u32 {
    1000
}

impl MapConfig {
    pub fn default_for(game: GameKind) -> MapConfig {
        let text = match game {
            GameKind::Cleanup => CLEANUP_DEFAULT,
            GameKind::Gathering => GATHERING_DEFAULT,
        };
        MapConfig::from_toml(text).expect("shipped default map parses")
    }

    pub fn from_toml(text: &str) -> Result<MapConfig> {
        toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
                .unwrap_or(0);
            Error::Parse {
                source_name: "map".into(),
                line,
                message: e.message().to_string(),
            }
        })
    }

    pub fn load(path: &Path) -> Result<MapConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        MapConfig::from_toml(&text).map_err(|e| match e {
            Error::Parse { line, message, .. } => Error::Parse {
                source_name: path.display().to_string(),
                line,
                message,
            },
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("map config serializes")
    }

    /// Checks the map against its game's rules and resolves regions into cells.
    pub fn compile(&self) -> Result<Arc<CompiledMap>> {
        if self.version != MAP_VERSION {
            return Err(Error::config(format!(
                "map version {} unsupported (expected {MAP_VERSION})",
                self.version
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::config("map dimensions must be positive"));
        }
        if self.agents == 0 {
            return Err(Error::config("map needs at least one agent"));
        }
        if self.horizon == 0 {
            return Err(Error::config("horizon must be positive"));
        }
        let d = &self.dynamics;
        for (name, p) in [
            ("initial_waste", d.initial_waste),
            ("waste_spawn_prob", d.waste_spawn_prob),
            ("regrowth_max", d.regrowth_max),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(format!("dynamics.{name} = {p} not in [0, 1]")));
            }
        }
        if d.regrowth_cutoff.is_nan() || d.regrowth_cutoff <= 0.0 {
            return Err(Error::config("dynamics.regrowth_cutoff must be positive"));
        }
        if d.respawn_period == 0 {
            return Err(Error::config("dynamics.respawn_period must be >= 1"));
        }

        let expand_all = |regions: &[Region], what: &str| -> Result<Vec<GridPos>> {
            let mut seen = HashSet::new();
            let mut out = Vec::new();
            for r in regions {
                for p in r.expand()? {
                    if p.row >= self.height || p.col >= self.width {
                        return Err(Error::config(format!(
                            "{what} cell {p} outside {}x{} map",
                            self.height, self.width
                        )));
                    }
                    if seen.insert(p) {
                        out.push(p);
                    }
                }
            }
            Ok(out)
        };

        let walls = expand_all(&self.walls, "wall")?;
        let river = expand_all(&self.river, "river")?;
        let apples = expand_all(&self.apples, "apple")?;
        let spawns = expand_all(&self.spawns, "spawn")?;
        let grid = Grid::with_walls(self.width, self.height, walls)?;

        for (what, cells) in [("apple", &apples), ("spawn", &spawns), ("river", &river)] {
            if let Some(p) = cells.iter().find(|p| grid.is_wall(**p)) {
                return Err(Error::config(format!("{what} cell {p} overlaps a wall")));
            }
        }
        match self.game {
            GameKind::Cleanup => {
                if river.is_empty() {
                    return Err(Error::config("cleanup map needs river cells"));
                }
                let river_set: HashSet<_> = river.iter().collect();
                if let Some(p) = apples.iter().find(|p| river_set.contains(p)) {
                    return Err(Error::config(format!(
                        "river and orchard overlap at {p}"
                    )));
                }
            }
            GameKind::Gathering => {
                if !river.is_empty() {
                    return Err(Error::config("gathering maps have no river"));
                }
            }
        }
        if spawns.len() < self.agents {
            return Err(Error::config(format!(
                "{} spawn cells for {} agents",
                spawns.len(),
                self.agents
            )));
        }

        let mut river_mask = vec![false; grid.cell_count()];
        for p in &river {
            river_mask[grid.index(*p)] = true;
        }

        let mut apple_index = vec![None; grid.cell_count()];
        for (k, p) in apples.iter().enumerate() {
            apple_index[grid.index(*p)] = Some(k);
        }

        Ok(Arc::new(CompiledMap {
            apple_index,
            name: self.name.clone(),
            game: self.game,
            grid,
            river_mask,
            river,
            apples,
            spawns,
            n_agents: self.agents,
            horizon: self.horizon,
            dynamics: self.dynamics.clone(),
        }))
    }
}

/// A validated map with regions resolved into cell lists.
#[derive(Debug, Clone, PartialEq)]
pub struct CompiledMap {
    pub name: String,
    pub game: GameKind,
    pub grid: Grid,
    pub river_mask: Vec<bool>,
    pub river: Vec<GridPos>,
    pub apples: Vec<GridPos>,
    apple_index: Vec<Option<usize>>,
    pub spawns: Vec<GridPos>,
    pub n_agents: usize,
    pub horizon: u32,
    pub dynamics: Dynamics,
}

impl CompiledMap {
    /// Index of the apple growing on `p`, if any.
    pub fn apple_at(&self, p: GridPos) -> Option<usize> {
        if self.grid.in_bounds(p) {
            self.apple_index[self.grid.index(p)]
        } else {
            None
        }
    }

    pub fn is_river(&self, p: GridPos) -> bool {
        self.grid.in_bounds(p) && self.river_mask[self.grid.index(p)]
    }
}
