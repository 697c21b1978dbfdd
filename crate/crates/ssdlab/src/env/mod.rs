//! The two games. Both share one step skeleton:
//!
//! 1. rotations
//! 2. moves, agents resolved in index order
//! 3. apple collection
//! 4. beams, tagging first and then cleaning
//! 5. waste spawn
//! 6. apple regrowth or respawn timers
//! 7. timeout decrement and respawn
//! 8. step counter
//!
//! Phases 5 and 6 are game specific; gathering has no waste.

mod cleanup;
mod gathering;
pub mod map;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use cleanup::CleanupState;
pub use gathering::GatheringState;
pub use map::{CompiledMap, Dynamics, GameKind, MapConfig, Region};

use crate::error::{Error, Result};
use crate::grid::{Action, Grid, GridPos, Orientation};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    AppleCollected { agent: usize, pos: GridPos },
    /// Emitted for every clean fired, including ones that cleared nothing.
    Cleaned { agent: usize, cells: Vec<GridPos> },
    /// Emitted for every tagging beam fired.
    BeamFired { agent: usize },
    Tagged { shooter: usize, target: usize },
    Respawned { agent: usize, pos: GridPos },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub rewards: Vec<i64>,
    pub events: Vec<Event>,
    pub done: bool,
}

/// Per-agent body state. A timed-out agent has no position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentTable {
    pub pos: Vec<Option<GridPos>>,
    pub orient: Vec<Orientation>,
    pub timeout: Vec<u32>,
}

impl AgentTable {
    pub fn len(&self) -> usize {
        self.pos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pos.is_empty()
    }

    pub fn is_active(&self, agent: usize) -> bool {
        self.timeout[agent] == 0 && self.pos[agent].is_some()
    }

    pub fn active_count(&self) -> usize {
        (0..self.len()).filter(|&i| self.is_active(i)).count()
    }

    pub fn occupant(&self, p: GridPos) -> Option<usize> {
        self.pos.iter().position(|q| *q == Some(p))
    }

    /// `(agent, position)` of every active agent in index order.
    pub fn active(&self) -> impl Iterator<Item = (usize, GridPos)> + '_ {
        self.pos
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.filter(|_| self.timeout[i] == 0).map(|p| (i, p)))
    }

    fn place(map: &CompiledMap, rng: &mut Rng) -> AgentTable {
        let mut spawns = map.spawns.clone();
        rng.shuffle(&mut spawns);
        let n = map.n_agents;
        AgentTable {
            pos: spawns.into_iter().take(n).map(Some).collect(),
            orient: (0..n).map(|_| Orientation::from_index(rng.below(4))).collect(),
            timeout: vec![0; n],
        }
    }
}

/// Read-only view every policy and helper works against.
pub trait World {
    fn map(&self) -> &CompiledMap;
    fn agents(&self) -> &AgentTable;
    fn step_count(&self) -> u32;
    fn apple_alive(&self) -> &[bool];

    /// Steps until a dead apple respawns. Zero for alive apples and for games
    /// without fixed timers.
    fn apple_timer(&self, _apple: usize) -> u32 {
        0
    }

    fn grid(&self) -> &Grid {
        &self.map().grid
    }

    fn n_agents(&self) -> usize {
        self.agents().len()
    }

    fn horizon(&self) -> u32 {
        self.map().horizon
    }

    fn apple_positions(&self) -> &[GridPos] {
        &self.map().apples
    }

    fn alive_apples(&self) -> Vec<GridPos> {
        self.apple_positions()
            .iter()
            .zip(self.apple_alive())
            .filter(|(_, a)| **a)
            .map(|(p, _)| *p)
            .collect()
    }
}

/// Either game, behind one interface.
#[derive(Debug, Clone, PartialEq)]
pub enum GameState {
    Cleanup(CleanupState),
    Gathering(GatheringState),
}

impl GameState {
    pub fn reset(seed: u64, map: &Arc<CompiledMap>) -> GameState {
        match map.game {
            GameKind::Cleanup => GameState::Cleanup(CleanupState::reset(seed, map.clone())),
            GameKind::Gathering => GameState::Gathering(GatheringState::reset(seed, map.clone())),
        }
    }

    pub fn kind(&self) -> GameKind {
        match self {
            GameState::Cleanup(_) => GameKind::Cleanup,
            GameState::Gathering(_) => GameKind::Gathering,
        }
    }

    pub fn step(&mut self, actions: &[Action]) -> Result<StepOutcome> {
        match self {
            GameState::Cleanup(s) => s.step(actions),
            GameState::Gathering(s) => s.step(actions),
        }
    }

    /// Decodes raw action codes for this game and steps.
    pub fn step_codes(&mut self, codes: &[u8]) -> Result<StepOutcome> {
        let n = self.kind().n_actions();
        let actions = codes
            .iter()
            .map(|&c| Action::from_code(c, n))
            .collect::<Result<Vec<_>>>()?;
        self.step(&actions)
    }

    pub fn is_done(&self) -> bool {
        self.step_count() >= self.horizon()
    }

    pub fn as_cleanup(&self) -> Option<&CleanupState> {
        match self {
            GameState::Cleanup(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_gathering(&self) -> Option<&GatheringState> {
        match self {
            GameState::Gathering(s) => Some(s),
            _ => None,
        }
    }
}

impl World for GameState {
    fn map(&self) -> &CompiledMap {
        match self {
            GameState::Cleanup(s) => s.map(),
            GameState::Gathering(s) => s.map(),
        }
    }

    fn agents(&self) -> &AgentTable {
        match self {
            GameState::Cleanup(s) => s.agents(),
            GameState::Gathering(s) => s.agents(),
        }
    }

    fn step_count(&self) -> u32 {
        match self {
            GameState::Cleanup(s) => s.step_count(),
            GameState::Gathering(s) => s.step_count(),
        }
    }

    fn apple_alive(&self) -> &[bool] {
        match self {
            GameState::Cleanup(s) => s.apple_alive(),
            GameState::Gathering(s) => s.apple_alive(),
        }
    }

    fn apple_timer(&self, apple: usize) -> u32 {
        match self {
            GameState::Cleanup(s) => s.apple_timer(apple),
            GameState::Gathering(s) => s.apple_timer(apple),
        }
    }
}

/// Random streams an episode draws from, one per purpose.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct EpisodeRngs {
    pub waste: Rng,
    pub regrow: Rng,
    pub respawn: Rng,
}

impl EpisodeRngs {
    pub fn new(seed: u64, game: GameKind) -> (Rng, EpisodeRngs) {
        let tag = game.name();
        (
            Rng::stream(seed, 0, &format!("{tag}.reset")),
            EpisodeRngs {
                waste: Rng::stream(seed, 0, &format!("{tag}.waste")),
                regrow: Rng::stream(seed, 0, &format!("{tag}.regrow")),
                respawn: Rng::stream(seed, 0, &format!("{tag}.respawn")),
            },
        )
    }
}

/// Common preamble: checks action count, the episode bound and which agents
/// may act. Returns the mask of agents active at the start of the step.
pub(crate) fn begin_step(
    agents: &AgentTable,
    actions: &[Action],
    step_count: u32,
    horizon: u32,
) -> Result<Vec<bool>> {
    if actions.len() != agents.len() {
        return Err(Error::invalid(format!(
            "expected {} actions, got {}",
            agents.len(),
            actions.len()
        )));
    }
    if step_count >= horizon {
        return Err(Error::invalid("episode already finished"));
    }
    Ok((0..agents.len()).map(|i| agents.is_active(i)).collect())
}

pub(crate) fn apply_rotations(agents: &mut AgentTable, actions: &[Action], active: &[bool]) {
    for (i, a) in actions.iter().enumerate() {
        if !active[i] {
            continue;
        }
        match a {
            Action::RotateLeft => agents.orient[i] = agents.orient[i].rotate_left(),
            Action::RotateRight => agents.orient[i] = agents.orient[i].rotate_right(),
            _ => {}
        }
    }
}

/// Moves are resolved sequentially in agent-index order: an agent moves if its
/// target cell is walkable and not occupied at its turn. When two agents aim
/// at one free cell the lower index gets there first.
pub(crate) fn apply_moves(grid: &Grid, agents: &mut AgentTable, actions: &[Action], active: &[bool]) {
    for (i, a) in actions.iter().enumerate() {
        if !active[i] {
            continue;
        }
        let (Some((dr, dc)), Some(cur)) = (a.move_delta(), agents.pos[i]) else {
            continue;
        };
        if let Some(target) = grid.step(cur, dr, dc) {
            if agents.occupant(target).is_none() {
                agents.pos[i] = Some(target);
            }
        }
    }
}

/// Tagging beams, in agent-index order. The first on-grid agent along the
/// beam is hit and removed.
pub(crate) fn fire_tag_beams(
    grid: &Grid,
    dynamics: &Dynamics,
    agents: &mut AgentTable,
    actions: &[Action],
    active: &[bool],
    rewards: &mut [i64],
    events: &mut Vec<Event>,
) {
    for (i, a) in actions.iter().enumerate() {
        if !active[i] || *a != Action::Beam {
            continue;
        }
        let Some(origin) = agents.pos[i] else { continue };
        rewards[i] -= dynamics.beam_cost;
        events.push(Event::BeamFired { agent: i });
        let hit = grid
            .beam_cells(origin, agents.orient[i], dynamics.beam_length)
            .into_iter()
            .find_map(|cell| agents.occupant(cell));
        if let Some(target) = hit {
            rewards[target] -= dynamics.tag_penalty;
            agents.pos[target] = None;
            agents.timeout[target] = dynamics.tag_timeout;
            events.push(Event::Tagged { shooter: i, target });
        }
    }
}

/// Counts down removals of agents that were already out at the start of the
/// step; on reaching zero the agent reappears on a random free spawn cell.
/// If every spawn cell is occupied the agent waits one more step.
pub(crate) fn tick_timeouts(
    map: &CompiledMap,
    agents: &mut AgentTable,
    active_at_start: &[bool],
    rng: &mut Rng,
    events: &mut Vec<Event>,
) {
    for i in 0..agents.len() {
        if active_at_start[i] || agents.timeout[i] == 0 {
            continue;
        }
        agents.timeout[i] -= 1;
        if agents.timeout[i] > 0 {
            continue;
        }
        let free: Vec<GridPos> = map
            .spawns
            .iter()
            .copied()
            .filter(|p| agents.occupant(*p).is_none())
            .collect();
        match rng.choose(&free) {
            Some(&p) => {
                agents.pos[i] = Some(p);
                events.push(Event::Respawned { agent: i, pos: p });
            }
            None => agents.timeout[i] = 1,
        }
    }
}
