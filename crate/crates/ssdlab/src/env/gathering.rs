use std::sync::Arc;

use crate::env::{
    apply_moves, apply_rotations, begin_step, fire_tag_beams, tick_timeouts, AgentTable,
    CompiledMap, EpisodeRngs, Event, GameKind, StepOutcome, World,
};
use crate::error::{Error, Result};
use crate::grid::Action;

/// Common-pool game: apples respawn on a fixed timer after collection and
/// agents may tag rivals out.
#[derive(Debug, Clone, PartialEq)]
pub struct GatheringState {
    map: Arc<CompiledMap>,
    pub apple_alive: Vec<bool>,
    /// Steps until respawn; zero exactly when the apple is alive.
    pub apple_timer: Vec<u32>,
    pub agents: AgentTable,
    pub step_count: u32,
    seed: u64,
    rngs: EpisodeRngs,
}

impl GatheringState {
    /// Panics if `map` is not a gathering map.
    pub fn reset(seed: u64, map: Arc<CompiledMap>) -> GatheringState {
        Self::try_reset(seed, map).expect("gathering map")
    }

    pub fn try_reset(seed: u64, map: Arc<CompiledMap>) -> Result<GatheringState> {
        if map.game != GameKind::Gathering {
            return Err(Error::config(format!("map '{}' is not a gathering map", map.name)));
        }
        let (mut init, rngs) = EpisodeRngs::new(seed, GameKind::Gathering);
        let agents = AgentTable::place(&map, &mut init);
        Ok(GatheringState {
            apple_alive: vec![true; map.apples.len()],
            apple_timer: vec![0; map.apples.len()],
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

    pub fn step(&mut self, actions: &[Action]) -> Result<StepOutcome> {
        if let Some(i) = actions.iter().position(|a| *a == Action::Clean) {
            return Err(Error::invalid(format!(
                "agent {i}: clean is not an action in gathering"
            )));
        }
        let active = begin_step(&self.agents, actions, self.step_count, self.map.horizon)?;
        let map = self.map.clone();
        let d = &map.dynamics;
        let mut rewards = vec![0i64; self.agents.len()];
        let mut events = Vec::new();
        let dead_at_start: Vec<bool> = self.apple_alive.iter().map(|a| !a).collect();

        apply_rotations(&mut self.agents, actions, &active);
        apply_moves(&map.grid, &mut self.agents, actions, &active);

        for (agent, pos) in self.agents.active().collect::<Vec<_>>() {
            if let Some(k) = map.apple_at(pos) {
                if self.apple_alive[k] {
                    self.apple_alive[k] = false;
                    self.apple_timer[k] = d.respawn_period;
                    rewards[agent] += 1;
                    events.push(Event::AppleCollected { agent, pos });
                }
            }
        }

        fire_tag_beams(&map.grid, d, &mut self.agents, actions, &active, &mut rewards, &mut events);

        for k in 0..self.apple_timer.len() {
            if dead_at_start[k] {
                self.apple_timer[k] -= 1;
                if self.apple_timer[k] == 0 {
                    self.apple_alive[k] = true;
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

impl World for GatheringState {
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

    fn apple_timer(&self, apple: usize) -> u32 {
        self.apple_timer[apple]
    }
}
