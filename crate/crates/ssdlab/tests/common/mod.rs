#![allow(dead_code)]

use std::sync::Arc;

use ssdlab::env::{CompiledMap, Dynamics, GameKind, MapConfig, Region};
use ssdlab::grid::GridPos;

pub fn p(r: usize, c: usize) -> GridPos {
    GridPos::new(r, c)
}

/// Dynamics with every random process switched off.
pub fn frozen() -> Dynamics {
    Dynamics {
        initial_waste: 0.0,
        waste_spawn_prob: 0.0,
        regrowth_max: 0.0,
        ..Dynamics::default()
    }
}

pub struct MapSpec {
    pub game: GameKind,
    pub width: usize,
    pub height: usize,
    pub agents: usize,
    pub horizon: u32,
    pub walls: Vec<GridPos>,
    pub river: Vec<GridPos>,
    pub apples: Vec<GridPos>,
    pub spawns: Vec<GridPos>,
    pub dynamics: Dynamics,
}

impl MapSpec {
    pub fn new(game: GameKind, width: usize, height: usize, agents: usize) -> Self {
        MapSpec {
            game,
            width,
            height,
            agents,
            horizon: 1000,
            walls: vec![],
            river: vec![],
            apples: vec![],
            spawns: vec![],
            dynamics: frozen(),
        }
    }

    pub fn config(&self) -> MapConfig {
        let region = |cells: &[GridPos]| {
            if cells.is_empty() {
                vec![]
            } else {
                vec![Region::cells(cells.iter().copied())]
            }
        };
        MapConfig {
            version: 1,
            name: "test".into(),
            game: self.game,
            width: self.width,
            height: self.height,
            agents: self.agents,
            horizon: self.horizon,
            walls: region(&self.walls),
            river: region(&self.river),
            apples: region(&self.apples),
            spawns: region(&self.spawns),
            dynamics: self.dynamics.clone(),
        }
    }

    pub fn compile(&self) -> Arc<CompiledMap> {
        self.config().compile().expect("test map compiles")
    }
}
