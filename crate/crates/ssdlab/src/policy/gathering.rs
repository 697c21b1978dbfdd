use std::collections::HashSet;

use crate::env::{GameState, World};
use crate::grid::{Action, GridPos};
use crate::policy::helpers::{bfs_from, step_to_nearest, step_toward, voronoi_zones};
use crate::policy::{Policy, VoronoiParams};

/// Voronoi territories plus earliest-collection-time targeting.
///
/// Every apple in the agent's territory is scored by
/// `max(walk distance, respawn timer)`; alive apples are walked to directly,
/// dead ones are waited for on an adjacent cell that is not itself an apple
/// cell. With nothing in its territory the agent chases the nearest alive
/// apple anywhere.
#[derive(Debug, Clone)]
pub struct VoronoiSpatiotemporal {
    params: VoronoiParams,
}

impl VoronoiSpatiotemporal {
    pub fn new(params: VoronoiParams) -> Self {
        VoronoiSpatiotemporal { params }
    }

    fn decide(&self, s: &impl World, agent: usize, pos: GridPos) -> Action {
        let zones = voronoi_zones(s);
        let paths = bfs_from(s, pos);
        let spawn_points: HashSet<GridPos> = s.apple_positions().iter().copied().collect();

        // (earliest time, timer, distance, position)
        let mut targets: Vec<(u32, u32, u32, GridPos)> = s
            .apple_positions()
            .iter()
            .enumerate()
            .filter(|(_, p)| zones.get(**p) == Some(agent))
            .filter_map(|(i, &p)| {
                let d = paths.distance(p)?;
                let t = if s.apple_alive()[i] { 0 } else { s.apple_timer(i) };
                (t <= self.params.max_timer).then_some((d.max(t), t, d, p))
            })
            .collect();
        targets.sort();

        for &(_, timer, dist, p) in &targets {
            if timer == 0 {
                if dist == 0 {
                    return Action::Stand;
                }
                if let Some(a) = step_toward(&paths, pos, p) {
                    return a;
                }
                continue;
            }
            let camps: Vec<GridPos> = s
                .grid()
                .neighbors(p)
                .filter(|q| !spawn_points.contains(q))
                .filter(|q| s.agents().occupant(*q).is_none_or(|o| o == agent))
                .collect();
            if let Some(a) = step_to_nearest(&paths, pos, &camps) {
                return a;
            }
        }

        if self.params.poach {
            if let Some(a) = step_to_nearest(&paths, pos, &s.alive_apples()) {
                return a;
            }
        }
        Action::Stand
    }
}

impl Policy for VoronoiSpatiotemporal {
    fn act(&mut self, state: &GameState, agent: usize) -> u8 {
        if !state.agents().is_active(agent) {
            return Action::Stand.code();
        }
        match state.agents().pos[agent] {
            Some(pos) => self.decide(state, agent, pos).code(),
            None => Action::Stand.code(),
        }
    }
}
