use std::sync::Arc;

use crate::env::{
    apply_moves, apply_rotations, begin_step, fire_tag_beams, tick_timeouts, AgentTable,
    CompiledMap, EpisodeRngs, Event, GameKind, StepOutcome, World,
};
use crate::error::{Error, Result};
use crate::grid::{Action, GridPos};

/// Public-goods game: waste accumulates in the river and suppresses apple
/// regrowth in the orchard; cleaning is costly to the cleaner.
#[derive(Debug, Clone, PartialEq)]
pub struct CleanupState {
    map: Arc<CompiledMap>,
    waste: Vec<bool>,
    waste_count: usize,
    pub apple_alive: Vec<bool>,
    pub agents: AgentTable,
    pub step_count: u32,
    seed: u64,
    rngs: EpisodeRngs,
}

impl CleanupState {
    /// Panics if `map` is not a cleanup map; use [`CleanupState::try_reset`]
    /// for a checked variant.
    pub fn reset(seed: u64, map: Arc<CompiledMap>) -> CleanupState {
        Self::try_reset(seed, map).expect("cleanup map")
    }

    pub fn try_reset(seed: u64, map: Arc<CompiledMap>) -> Result<CleanupState> {
        if map.game != GameKind::Cleanup {
            return Err(Error::config(format!("map '{}' is not a cleanup map", map.name)));
        }
        let (mut init, rngs) = EpisodeRngs::new(seed, GameKind::Cleanup);
        let agents = AgentTable::place(&map, &mut init);
        let mut river = map.river.clone();
        init.shuffle(&mut river);
        let n_waste = (map.dynamics.initial_waste * river.len() as f64).round() as usize;
        let mut waste = vec![false; map.grid.cell_count()];
        for p in river.iter().take(n_waste) {
            waste[map.grid.index(*p)] = true;
        }
        Ok(CleanupState {
            apple_alive: vec![true; map.apples.len()],
            waste,
            waste_count: n_waste,
            agents,
            step_count: 0,
            seed,
            rngs,
            map,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn has_waste(&self, p: GridPos) -> bool {
        self.map.grid.in_bounds(p) && self.waste[self.map.grid.index(p)]
    }

    /// Cell-indexed waste flags; only river cells are ever set.
    pub fn waste(&self) -> &[bool] {
        &self.waste
    }

    pub fn waste_count(&self) -> usize {
        self.waste_count
    }

    /// Waste cells over river capacity.
    pub fn waste_fraction(&self) -> f64 {
        if self.map.river.is_empty() {
            0.0
        } else {
            self.waste_count as f64 / self.map.river.len() as f64
        }
    }

    /// Sets or clears waste on a river cell. Non-river cells are rejected.
    pub fn set_waste(&mut self, p: GridPos, on: bool) -> Result<()> {
        if !self.map.is_river(p) {
            return Err(Error::invalid(format!("{p} is not a river cell")));
        }
        let i = self.map.grid.index(p);
        if self.waste[i] != on {
            self.waste[i] = on;
            if on {
                self.waste_count += 1;
            } else {
                self.waste_count -= 1;
            }
        }
        Ok(())
    }

    /// Current regrowth probability of each dead apple.
    pub fn regrowth_probability(&self) -> f64 {
        let d = &self.map.dynamics;
        d.regrowth_max * (1.0 - self.waste_fraction() / d.regrowth_cutoff).max(0.0)
    }

    pub fn step(&mut self, actions: &[Action]) -> Result<StepOutcome> {
        let active = begin_step(&self.agents, actions, self.step_count, self.map.horizon)?;
        let map = self.map.clone();
        let d = &map.dynamics;
        let n = self.agents.len();
        let mut rewards = vec![0i64; n];
        let mut events = Vec::new();

        apply_rotations(&mut self.agents, actions, &active);
        apply_moves(&map.grid, &mut self.agents, actions, &active);

        for (agent, pos) in self.agents.active().collect::<Vec<_>>() {
            if let Some(k) = map.apple_at(pos) {
                if self.apple_alive[k] {
                    self.apple_alive[k] = false;
                    rewards[agent] += 1;
                    events.push(Event::AppleCollected { agent, pos });
                }
            }
        }

        fire_tag_beams(&map.grid, d, &mut self.agents, actions, &active, &mut rewards, &mut events);

        for (i, a) in actions.iter().enumerate() {
            if !active[i] || *a != Action::Clean {
                continue;
            }
            // Agents tagged earlier in this phase are off the grid and do not clean.
            let Some(origin) = self.agents.pos[i] else { continue };
            rewards[i] -= d.beam_cost;
            let mut cleared = Vec::new();
            for cell in map.grid.beam_cells(origin, self.agents.orient[i], d.beam_length) {
                if self.has_waste(cell) {
                    self.set_waste(cell, false)?;
                    cleared.push(cell);
                }
            }
            events.push(Event::Cleaned { agent: i, cells: cleared });
        }

        if self.waste_count < map.river.len() && self.rngs.waste.bernoulli(d.waste_spawn_prob) {
            let empty: Vec<GridPos> = map.river.iter().copied().filter(|p| !self.has_waste(*p)).collect();
            if let Some(&p) = self.rngs.waste.choose(&empty) {
                self.set_waste(p, true)?;
            }
        }

        let p = self.regrowth_probability();
        if p > 0.0 {
            for alive in self.apple_alive.iter_mut().filter(|a| !**a) {
                if self.rngs.regrow.bernoulli(p) {
                    *alive = true;
                }
            }
        }

        tick_timeouts(&map, &mut self.agents, &active, &mut self.rngs.respawn, &mut events);
        self.step_count += 1;

        Ok(StepOutcome {
            rewards,
            events,
            done: self.step_count >= map.horizon,
        })
    }
}

impl World for CleanupState {
    fn map(&self) -> &CompiledMap {
        &self.map
    }

    fn agents(&self) -> &AgentTable {
        &self.agents
    }

    fn step_count(&self) -> u32 {
        self.step_count
    }

    fn apple_alive(&self) -> &[bool] {
        &self.apple_alive
    }
}
