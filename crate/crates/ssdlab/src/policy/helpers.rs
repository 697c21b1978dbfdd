//! Coordination primitives the reference policies are built from.

use std::collections::BTreeSet;

use crate::env::{CleanupState, World};
use crate::error::{Error, Result};
use crate::grid::{bfs, direction_to_action, Action, BfsResult, GridPos, Orientation};

/// Cell ownership from a multi-source BFS seeded at every active agent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ZoneMap {
    width: usize,
    owner: Vec<Option<usize>>,
}

impl ZoneMap {
    pub fn get(&self, p: GridPos) -> Option<usize> {
        if p.col >= self.width {
            return None;
        }
        self.owner.get(p.row * self.width + p.col).copied().flatten()
    }

    pub fn is_empty(&self) -> bool {
        self.owner.iter().all(Option::is_none)
    }

    pub fn len(&self) -> usize {
        self.owner.iter().filter(|o| o.is_some()).count()
    }

    pub fn iter(&self) -> impl Iterator<Item = (GridPos, usize)> + '_ {
        let w = self.width;
        self.owner
            .iter()
            .enumerate()
            .filter_map(move |(i, o)| o.map(|a| (GridPos::new(i / w, i % w), a)))
    }

    pub fn cells_of(&self, agent: usize) -> impl Iterator<Item = GridPos> + '_ {
        self.iter().filter(move |(_, a)| *a == agent).map(|(p, _)| p)
    }
}

/// Voronoi territories over walkable cells. Timed-out agents are not sources;
/// ties go to the lower agent id. No active agents gives an empty map.
pub fn voronoi_zones(world: &impl World) -> ZoneMap {
    let grid = world.grid();
    let mut owner = vec![None; grid.cell_count()];
    let sources: Vec<(usize, GridPos)> = world.agents().active().collect();
    if !sources.is_empty() {
        let positions: Vec<GridPos> = sources.iter().map(|(_, p)| *p).collect();
        let r = bfs(grid, &positions).expect("active agents stand on walkable cells");
        for (p, _) in r.reachable() {
            owner[grid.index(p)] = r.owner(p).map(|k| sources[k].0);
        }
    }
    ZoneMap {
        width: grid.width(),
        owner,
    }
}

/// Dead apple in `agent`'s zone that respawns within `max_timer` steps,
/// preferring the smallest timer and then the smallest Manhattan distance.
pub fn nearest_respawning_apple(
    world: &impl World,
    agent: usize,
    zones: &ZoneMap,
    max_timer: u32,
) -> Option<GridPos> {
    let me = world.agents().pos[agent]?;
    let mut best: Option<(u32, usize, GridPos)> = None;
    for (i, &pos) in world.apple_positions().iter().enumerate() {
        if world.apple_alive()[i] || zones.get(pos) != Some(agent) {
            continue;
        }
        let t = world.apple_timer(i);
        if t > max_timer {
            continue;
        }
        let d = pos.manhattan(me);
        let better = match best {
            None => true,
            Some((bt, bd, _)) => t < bt || (t == bt && d < bd),
        };
        if better {
            best = Some((t, d, pos));
        }
    }
    best.map(|(_, _, p)| p)
}

/// Alive apples in the agent's horizontal row band
/// `[agent·h/n, (agent+1)·h/n)`, or every alive apple when the band is empty.
pub fn get_my_apples(world: &impl World, agent: usize) -> BTreeSet<GridPos> {
    let n = world.n_agents().max(1) as f64;
    let band_h = world.grid().height() as f64 / n;
    let (lo, hi) = (agent as f64 * band_h, (agent + 1) as f64 * band_h);
    let all: BTreeSet<GridPos> = world.alive_apples().into_iter().collect();
    let mine: BTreeSet<GridPos> = all
        .iter()
        .copied()
        .filter(|p| (lo..hi).contains(&(p.row as f64)))
        .collect();
    if mine.is_empty() {
        all
    } else {
        mine
    }
}

pub fn waste_fraction(state: &CleanupState) -> f64 {
    state.waste_fraction()
}

/// Waste cells a cleaning beam fired from `pos` facing `orient` would clear.
pub fn clean_yield(state: &CleanupState, pos: GridPos, orient: Orientation) -> usize {
    let len = state.map().dynamics.beam_length;
    state
        .grid()
        .beam_cells(pos, orient, len)
        .into_iter()
        .filter(|c| state.has_waste(*c))
        .count()
}

/// Best cleaning direction from `pos`; ties keep the lowest orientation index.
pub fn best_clean_orientation(state: &CleanupState, pos: GridPos) -> (Orientation, usize) {
    Orientation::ALL
        .iter()
        .map(|&o| (o, clean_yield(state, pos, o)))
        .fold((Orientation::North, 0), |best, cur| if cur.1 > best.1 { cur } else { best })
}

/// Duty-rotation formula `(agent + step / shift) mod n < cleaner_count`.
pub fn rotation_role(agent: usize, step: u32, shift: u32, n: usize, cleaner_count: usize) -> Result<bool> {
    if shift == 0 {
        return Err(Error::invalid("rotation shift must be >= 1"));
    }
    if n == 0 || cleaner_count > n {
        return Err(Error::invalid(format!(
            "cleaner count {cleaner_count} outside [0, {n}]"
        )));
    }
    Ok((agent + (step / shift) as usize) % n < cleaner_count)
}

/// Single-source BFS from an agent's cell.
pub fn bfs_from(world: &impl World, from: GridPos) -> BfsResult {
    bfs(world.grid(), &[from]).expect("agent stands on a walkable cell")
}

/// First move along a shortest path toward `target`, or `None` when already
/// there or unreachable.
pub fn step_toward(paths: &BfsResult, from: GridPos, target: GridPos) -> Option<Action> {
    let next = paths.first_step(target)?;
    let dr = next.row as i32 - from.row as i32;
    let dc = next.col as i32 - from.col as i32;
    direction_to_action(dr, dc, Orientation::North).ok()
}

/// Move toward the nearest (by path length) cell of `targets`.
pub fn step_to_nearest<'a>(
    paths: &BfsResult,
    from: GridPos,
    targets: impl IntoIterator<Item = &'a GridPos>,
) -> Option<Action> {
    let best = targets
        .into_iter()
        .filter_map(|t| paths.distance(*t).map(|d| (d, *t)))
        .min()?;
    if best.0 == 0 {
        return Some(Action::Stand);
    }
    step_toward(paths, from, best.1)
}

/// Rotate toward `target`, or fire `fire` once facing it.
pub fn face_and(current: Orientation, target: Orientation, fire: Action) -> Action {
    current.rotation_toward(target).unwrap_or(fire)
}
