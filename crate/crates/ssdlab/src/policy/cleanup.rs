//! Cleanup reference families. None of them ever fires the tagging beam.

use crate::env::{CleanupState, GameState, World};
use crate::grid::{direction_to_action, Action, BfsResult, GridPos, Orientation};
use crate::policy::helpers::{
    best_clean_orientation, bfs_from, face_and, get_my_apples, rotation_role, step_to_nearest, step_toward,
    waste_fraction,
};
use crate::policy::{Policy, RotationParams, StaticThresholdParams, SyncParams, TwoCleanerParams};

const STAND: u8 = 7;

/// Cleanup state and the agent's body, or `None` when the agent is out.
fn body(state: &GameState, agent: usize) -> Option<(&CleanupState, GridPos, Orientation)> {
    let s = state.as_cleanup()?;
    if !s.agents.is_active(agent) {
        return None;
    }
    Some((s, s.agents.pos[agent]?, s.agents.orient[agent]))
}

/// Half-open row range of slice `idx` when `height` rows are cut into `parts`.
fn slice_rows(idx: usize, parts: usize, height: usize) -> (usize, usize) {
    let parts = parts.max(1);
    (idx * height / parts, (idx + 1) * height / parts)
}

fn river_rows(s: &CleanupState, rows: (usize, usize)) -> Vec<GridPos> {
    s.map()
        .river
        .iter()
        .copied()
        .filter(|p| (rows.0..rows.1).contains(&p.row))
        .collect()
}

/// Fires from here if the best direction clears at least `min_yield` cells.
fn clean_here(s: &CleanupState, pos: GridPos, orient: Orientation, min_yield: usize) -> Option<Action> {
    let (o, y) = best_clean_orientation(s, pos);
    (y >= min_yield && y > 0).then(|| face_and(orient, o, Action::Clean))
}

/// Nearest waste cell other than the one underfoot, preferring `rows`.
fn toward_waste(s: &CleanupState, pos: GridPos, paths: &BfsResult, rows: Option<(usize, usize)>) -> Option<Action> {
    let all: Vec<GridPos> = s.map().river.iter().copied().filter(|p| s.has_waste(*p) && *p != pos).collect();
    if let Some(rows) = rows {
        let mine: Vec<GridPos> = all.iter().copied().filter(|p| (rows.0..rows.1).contains(&p.row)).collect();
        if let Some(a) = step_to_nearest(paths, pos, &mine) {
            return Some(a);
        }
    }
    step_to_nearest(paths, pos, &all)
}

/// Nearest alive apple within `rows`, else the nearest anywhere, else stand.
fn collect_in_rows(s: &CleanupState, pos: GridPos, paths: &BfsResult, rows: (usize, usize)) -> Action {
    let alive = s.alive_apples();
    let band: Vec<GridPos> = alive.iter().copied().filter(|p| (rows.0..rows.1).contains(&p.row)).collect();
    step_to_nearest(paths, pos, &band)
        .or_else(|| step_to_nearest(paths, pos, &alive))
        .unwrap_or(Action::Stand)
}

/// Target minimizing `distance + |row - home_row| + penalty * rivals_closer`.
fn crowd_aware_target(
    pos: GridPos,
    paths: &BfsResult,
    targets: &[GridPos],
    home_row: f64,
    rivals: &[GridPos],
    penalty: f64,
) -> Option<GridPos> {
    let mut best: Option<(f64, GridPos)> = None;
    for &t in targets {
        if t == pos {
            continue;
        }
        let Some(d) = paths.distance(t) else { continue };
        let mine = pos.manhattan(t);
        let closer = rivals.iter().filter(|r| r.manhattan(t) < mine).count();
        let cost = d as f64 + (t.row as f64 - home_row).abs() + penalty * closer as f64;
        if best.is_none_or(|(c, _)| cost < c) {
            best = Some((cost, t));
        }
    }
    best.map(|(_, t)| t)
}

/// Permanent roles: the lowest-index agents clean, and how many depends on
/// the current waste level.
#[derive(Debug, Clone)]
pub struct StaticThreshold {
    params: StaticThresholdParams,
}

impl StaticThreshold {
    pub fn new(params: StaticThresholdParams) -> Self {
        StaticThreshold { params }
    }

    fn decide(&self, s: &CleanupState, agent: usize, pos: GridPos, orient: Orientation) -> Action {
        let n = s.n_agents();
        let h = s.grid().height() as f64;
        let k = self.params.cleaner_count(waste_fraction(s), n);
        let paths = bfs_from(s, pos);
        let others = |same: &dyn Fn(usize) -> bool| -> Vec<GridPos> {
            s.agents.active().filter(|(j, _)| *j != agent && same(*j)).map(|(_, p)| p).collect()
        };

        let is_cleaner = agent % n < k;
        if is_cleaner {
            if let Some(a) = clean_here(s, pos, orient, 1) {
                return a;
            }
            let target_row = (agent % n) as f64 + 0.5;
            let target_row = (target_row / k as f64 * h).floor();
            let waste: Vec<GridPos> = s.map().river.iter().copied().filter(|p| s.has_waste(*p)).collect();
            let rivals = others(&|j| j % n < k);
            if let Some(t) = crowd_aware_target(pos, &paths, &waste, target_row, &rivals, self.params.crowd_penalty) {
                if let Some(a) = step_toward(&paths, pos, t) {
                    return a;
                }
            }
        }

        // Gatherers, and cleaners with nothing left to clean.
        let n_g = n.saturating_sub(k);
        let (g_idx, n_g) = if is_cleaner || n_g == 0 { (agent, n) } else { (agent - k, n_g) };
        let assigned_row = (g_idx as f64 + 0.5) / n_g as f64 * h;
        let rivals = others(&|j| j % n >= k);
        let apples = s.alive_apples();
        crowd_aware_target(pos, &paths, &apples, assigned_row, &rivals, self.params.crowd_penalty)
            .and_then(|t| step_toward(&paths, pos, t))
            .unwrap_or(Action::Stand)
    }
}

impl Policy for StaticThreshold {
    fn act(&mut self, state: &GameState, agent: usize) -> u8 {
        match body(state, agent) {
            Some((s, pos, orient)) => self.decide(s, agent, pos, orient).code(),
            None => STAND,
        }
    }
}

/// Roles rotate every `period` steps; on-duty cleaners own interleaved river
/// slices and gatherers own orchard row bands.
#[derive(Debug, Clone)]
pub struct RotationInterleaved {
    params: RotationParams,
}

impl RotationInterleaved {
    pub fn new(params: RotationParams) -> Self {
        RotationInterleaved { params }
    }

    fn decide(&self, s: &CleanupState, agent: usize, pos: GridPos, orient: Orientation) -> Action {
        let n = s.n_agents();
        let h = s.grid().height();
        let slots = &self.params.cleaner_slots;
        let role_idx = (agent + (s.step_count / self.params.period.max(1)) as usize) % n;
        let paths = bfs_from(s, pos);

        if let Some(zone) = slots.iter().position(|&r| r == role_idx) {
            let rows = slice_rows(zone, slots.len(), h);
            let cells = river_rows(s, rows);
            let (o, y) = best_clean_orientation(s, pos);
            if y >= 2 {
                return face_and(orient, o, Action::Clean);
            }
            let mut best = Vec::new();
            let mut good = Vec::new();
            for &p in &cells {
                if !s.grid().is_walkable(p) || s.has_waste(p) {
                    continue;
                }
                let y_max = best_clean_orientation(s, p).1;
                if y_max >= 2 {
                    best.push(p);
                }
                if y_max >= 1 {
                    good.push(p);
                }
            }
            if let Some(a) = step_to_nearest(&paths, pos, &best).filter(|a| *a != Action::Stand) {
                return a;
            }
            if y >= 1 {
                return face_and(orient, o, Action::Clean);
            }
            if let Some(a) = step_to_nearest(&paths, pos, &good).filter(|a| *a != Action::Stand) {
                return a;
            }
            return step_to_nearest(&paths, pos, &cells).unwrap_or(Action::Stand);
        }

        let g_rank = (0..role_idx).filter(|r| !slots.contains(r)).count();
        let n_g = n - slots.len();
        collect_in_rows(s, pos, &paths, slice_rows(g_rank, n_g, h))
    }
}

impl Policy for RotationInterleaved {
    fn act(&mut self, state: &GameState, agent: usize) -> u8 {
        match body(state, agent) {
            Some((s, pos, orient)) => self.decide(s, agent, pos, orient).code(),
            None => STAND,
        }
    }
}

/// A fixed number of cleaners rotating every `period` steps, collectors
/// cycling through orchard zones, and everyone cleaning past the emergency
/// waste level.
#[derive(Debug, Clone)]
pub struct TwoCleanerRotation {
    params: TwoCleanerParams,
}

impl TwoCleanerRotation {
    pub fn new(params: TwoCleanerParams) -> Self {
        TwoCleanerRotation { params }
    }

    fn decide(&self, s: &CleanupState, agent: usize, pos: GridPos, orient: Orientation) -> Action {
        let p = &self.params;
        let n = s.n_agents();
        let h = s.grid().height();
        let step = s.step_count;
        let wf = waste_fraction(s);
        let rank = (agent + (step / p.period.max(1)) as usize) % n;
        let is_cleaner = wf >= p.emergency
            || rotation_role(agent, step, p.period.max(1), n, p.cleaners.min(n)).unwrap_or(false);
        let paths = bfs_from(s, pos);

        if is_cleaner && wf > p.clean_floor {
            let (o, cnt) = best_clean_orientation(s, pos);
            if cnt >= p.fire_min {
                return face_and(orient, o, Action::Clean);
            }
            let better = s
                .grid()
                .neighbors(pos)
                .filter(|q| s.agents.occupant(*q).is_none())
                .map(|q| (best_clean_orientation(s, q).1, q))
                .fold(None::<(usize, GridPos)>, |acc, cur| match acc {
                    Some(a) if a.0 >= cur.0 => Some(a),
                    _ => Some(cur),
                });
            if let Some((y, q)) = better {
                if y > cnt {
                    let dr = q.row as i32 - pos.row as i32;
                    let dc = q.col as i32 - pos.col as i32;
                    if let Ok(a) = direction_to_action(dr, dc, orient) {
                        return a;
                    }
                }
            }
            if cnt >= 1 {
                return face_and(orient, o, Action::Clean);
            }
            let slots = p.cleaners.max(1);
            let rows = slice_rows(rank % slots, slots, h);
            if let Some(a) = toward_waste(s, pos, &paths, Some(rows)) {
                return a;
            }
        }

        let zone = (agent + (step / p.zone_period.max(1)) as usize) % p.zones.max(1);
        collect_in_rows(s, pos, &paths, slice_rows(zone, p.zones, h))
    }
}

impl Policy for TwoCleanerRotation {
    fn act(&mut self, state: &GameState, agent: usize) -> u8 {
        match body(state, agent) {
            Some((s, pos, orient)) => self.decide(s, agent, pos, orient).code(),
            None => STAND,
        }
    }
}

/// Everyone switches together between cleaning and collecting, with a
/// hysteresis band between the two thresholds.
#[derive(Debug, Clone)]
pub struct SyncThreshold {
    params: SyncParams,
    cleaning: bool,
}

impl SyncThreshold {
    pub fn new(params: SyncParams) -> Self {
        SyncThreshold {
            params,
            cleaning: false,
        }
    }

    /// Current mode; `true` while the group is cleaning.
    pub fn is_cleaning(&self) -> bool {
        self.cleaning
    }

    fn decide(&mut self, s: &CleanupState, agent: usize, pos: GridPos, orient: Orientation) -> Action {
        let wf = waste_fraction(s);
        if wf > self.params.enter {
            self.cleaning = true;
        } else if wf < self.params.exit {
            self.cleaning = false;
        }
        let paths = bfs_from(s, pos);
        if self.cleaning {
            if let Some(a) = clean_here(s, pos, orient, 1) {
                return a;
            }
            let rows = slice_rows(agent, s.n_agents(), s.grid().height());
            if let Some(a) = toward_waste(s, pos, &paths, Some(rows)) {
                return a;
            }
        }
        let mine: Vec<GridPos> = get_my_apples(s, agent).into_iter().collect();
        step_to_nearest(&paths, pos, &mine).unwrap_or(Action::Stand)
    }
}

impl Policy for SyncThreshold {
    fn act(&mut self, state: &GameState, agent: usize) -> u8 {
        match body(state, agent) {
            Some((s, pos, orient)) => self.decide(s, agent, pos, orient).code(),
            None => STAND,
        }
    }

    fn reset(&mut self) {
        self.cleaning = false;
    }
}
