mod common;

use std::collections::VecDeque;

use common::{p, MapSpec};
use proptest::prelude::*;
use ssdlab::env::{CleanupState, GameKind, GameState, GatheringState, MapConfig, World};
use ssdlab::eval::{evaluate_policy, run_episode_observed};
use ssdlab::grid::{Action, Grid, GridPos, Orientation};
use ssdlab::policy::helpers::{
    clean_yield, get_my_apples, nearest_respawning_apple, rotation_role, voronoi_zones,
};
use ssdlab::policy::{Family, PolicySource};
use ssdlab::trajectory::Trajectory;

/// Nearest active agent by walking distance, lower id on ties; computed with
/// one plain BFS per agent.
fn brute_force_owner(grid: &Grid, agents: &[Option<GridPos>], cell: GridPos) -> Option<usize> {
    let mut best: Option<(u32, usize)> = None;
    for (id, pos) in agents.iter().enumerate() {
        let Some(start) = pos else { continue };
        let mut dist = vec![u32::MAX; grid.cell_count()];
        let mut q = VecDeque::from([*start]);
        dist[grid.index(*start)] = 0;
        while let Some(c) = q.pop_front() {
            for n in grid.neighbors(c) {
                if dist[grid.index(n)] == u32::MAX {
                    dist[grid.index(n)] = dist[grid.index(c)] + 1;
                    q.push_back(n);
                }
            }
        }
        let d = dist[grid.index(cell)];
        if d != u32::MAX && best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, id));
        }
    }
    best.map(|(_, id)| id)
}

fn voronoi_case() -> impl Strategy<Value = (usize, usize, Vec<bool>, Vec<(usize, bool)>)> {
    (2usize..=8, 2usize..=8).prop_flat_map(|(w, h)| {
        (
            Just(w),
            Just(h),
            prop::collection::vec(prop::bool::weighted(0.25), w * h),
            prop::collection::vec((0..w * h, prop::bool::weighted(0.8)), 1..=4),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(150))]

    #[test]
    fn voronoi_matches_brute_force((w, h, walls, agents) in voronoi_case()) {
        let mut cells: Vec<usize> = agents.iter().map(|a| a.0).collect();
        cells.sort();
        cells.dedup();
        prop_assume!(cells.len() == agents.len());
        let mut m = MapSpec::new(GameKind::Gathering, w, h, agents.len());
        m.walls = (0..w * h).filter(|i| walls[*i] && !cells.contains(i)).map(|i| p(i / w, i % w)).collect();
        m.spawns = cells.iter().map(|i| p(i / w, i % w)).collect();
        let mut s = GatheringState::reset(0, m.compile());
        for (id, (cell, active)) in agents.iter().enumerate() {
            if *active {
                s.agents.pos[id] = Some(p(cell / w, cell % w));
                s.agents.timeout[id] = 0;
            } else {
                s.agents.pos[id] = None;
                s.agents.timeout[id] = 5;
            }
        }
        let zones = voronoi_zones(&s);
        for cell in s.grid().cells() {
            let expected = if s.grid().is_walkable(cell) {
                brute_force_owner(s.grid(), &s.agents.pos, cell)
            } else {
                None
            };
            prop_assert_eq!(zones.get(cell), expected, "cell {}", cell);
        }
    }

    #[test]
    fn rotation_shares_duty_evenly(n in 1usize..=12, shift in 1u32..=100, frac in 0.0f64..=1.0, start in 0u32..5000) {
        let cleaners = ((n as f64) * frac).floor() as usize;
        let window = shift * n as u32;
        for agent in 0..n {
            let duty = (start..start + window)
                .filter(|&t| rotation_role(agent, t, shift, n, cleaners).unwrap())
                .count();
            prop_assert_eq!(duty, cleaners * shift as usize);
        }
    }
}

#[test]
fn no_family_fires_the_tagging_beam() {
    for family in Family::ALL {
        let game = family.game().unwrap_or(GameKind::Cleanup);
        let map = MapConfig::default_for(game).compile().unwrap();
        let r = family.default_ref();
        for seed in [1u64, 2] {
            let mut pol = r.build(game).unwrap();
            run_episode_observed(pol.as_mut(), &map, seed, |t, codes, _| {
                assert!(!codes.contains(&Action::Beam.code()), "{family} beamed at step {t}");
            })
            .unwrap();
        }
    }
}

#[test]
fn timed_out_agents_stand() {
    for family in Family::ALL {
        let game = family.game().unwrap_or(GameKind::Cleanup);
        let map = MapConfig::default_for(game).compile().unwrap();
        let mut g = GameState::reset(4, &map);
        match &mut g {
            GameState::Cleanup(s) => {
                s.agents.pos[3] = None;
                s.agents.timeout[3] = 7;
            }
            GameState::Gathering(s) => {
                s.agents.pos[3] = None;
                s.agents.timeout[3] = 7;
            }
        }
        let mut pol = family.default_ref().build(game).unwrap();
        assert_eq!(pol.act(&g, 3), Action::Stand.code(), "{family}");
    }
}

#[test]
fn lone_rotation_cleaner_facing_waste_cleans() {
    let map = MapConfig::default_for(GameKind::Cleanup).compile().unwrap();
    let mut s = CleanupState::reset(0, map.clone());
    for cell in map.river.clone() {
        s.set_waste(cell, false).unwrap();
    }
    s.set_waste(p(5, 3), true).unwrap();
    s.set_waste(p(5, 2), true).unwrap();
    for a in 0..10 {
        s.agents.pos[a] = None;
        s.agents.timeout[a] = 10;
    }
    // Role index of agent 1 at step 0 is 1, a cleaner slot.
    s.agents.pos[1] = Some(p(5, 5));
    s.agents.timeout[1] = 0;
    s.agents.orient[1] = Orientation::West;
    assert_eq!(clean_yield(&s, p(5, 5), Orientation::West), 2);
    let g = GameState::Cleanup(s);
    let mut pol = Family::RotationInterleaved.default_ref().build(GameKind::Cleanup).unwrap();
    assert_eq!(pol.act(&g, 1), Action::Clean.code());
}

#[test]
fn voronoi_agent_on_a_live_apple_stands() {
    let map = MapConfig::default_for(GameKind::Gathering).compile().unwrap();
    let mut s = GatheringState::reset(0, map.clone());
    s.agents.pos[0] = Some(map.apples[0]);
    let g = GameState::Gathering(s);
    let mut pol = Family::VoronoiSpatiotemporal.default_ref().build(GameKind::Gathering).unwrap();
    assert_eq!(pol.act(&g, 0), Action::Stand.code());
}

#[test]
fn clean_yield_examples() {
    let mut m = MapSpec::new(GameKind::Cleanup, 8, 3, 1);
    m.river = (0..3).flat_map(|r| (0..4).map(move |c| p(r, c))).collect();
    m.river.retain(|c| *c != p(1, 1));
    m.walls = vec![p(1, 1)];
    m.apples = vec![p(0, 7)];
    m.spawns = vec![p(2, 7)];
    let mut s = CleanupState::reset(0, m.compile());
    assert_eq!(clean_yield(&s, p(0, 5), Orientation::West), 0);
    s.set_waste(p(0, 2), true).unwrap();
    s.set_waste(p(0, 0), true).unwrap();
    assert_eq!(clean_yield(&s, p(0, 5), Orientation::West), 2);
    // Length-5 beam from (0,6) reaches (0,1) but not (0,0).
    assert_eq!(clean_yield(&s, p(0, 6), Orientation::West), 1);
    s.set_waste(p(1, 0), true).unwrap();
    assert_eq!(clean_yield(&s, p(1, 3), Orientation::West), 0, "wall blocks the beam");
}

#[test]
fn respawning_apple_examples() {
    let mut m = MapSpec::new(GameKind::Gathering, 9, 1, 1);
    m.apples = vec![p(0, 2), p(0, 5), p(0, 8)];
    m.spawns = vec![p(0, 0)];
    let mut s = GatheringState::reset(0, m.compile());
    let zones = voronoi_zones(&s);
    assert_eq!(nearest_respawning_apple(&s, 0, &zones, 10), None);
    s.apple_alive[1] = false;
    s.apple_timer[1] = 3;
    s.apple_alive[0] = false;
    s.apple_timer[0] = 7;
    assert_eq!(nearest_respawning_apple(&s, 0, &zones, 10), Some(p(0, 5)));
    s.apple_timer[0] = 3;
    assert_eq!(nearest_respawning_apple(&s, 0, &zones, 10), Some(p(0, 2)));
    s.apple_timer = vec![12, 12, 0];
    assert_eq!(nearest_respawning_apple(&s, 0, &zones, 10), None);
}

#[test]
fn my_apples_examples() {
    let map = MapConfig::default_for(GameKind::Cleanup).compile().unwrap();
    let mut s = CleanupState::reset(0, map.clone());
    let mine = get_my_apples(&s, 0);
    assert!(!mine.is_empty());
    assert!(mine.iter().all(|a| (a.row as f64) < 1.8));
    // Agent 9's band is rows [16.2, 18): row 17 holds apples on the default
    // lattice; kill them to force the fallback.
    for (i, a) in map.apples.iter().enumerate() {
        if a.row >= 17 {
            s.apple_alive[i] = false;
        }
    }
    let alive = s.alive_apples().len();
    assert_eq!(get_my_apples(&s, 9).len(), alive);
    s.apple_alive.iter_mut().for_each(|a| *a = false);
    assert!(get_my_apples(&s, 9).is_empty());
}

#[test]
fn rotation_role_examples() {
    assert!(rotation_role(1, 0, 50, 10, 3).unwrap());
    assert!(rotation_role(1, 50, 50, 10, 3).unwrap());
    assert!(!rotation_role(1, 100, 50, 10, 3).unwrap());
    assert!((0..500).all(|t| !rotation_role(4, t, 50, 10, 0).unwrap()));
    assert!(rotation_role(0, 0, 0, 10, 3).is_err());
    assert!(rotation_role(0, 0, 50, 10, 11).is_err());
}

#[test]
fn replaying_a_recorded_episode_repeats_every_action() {
    for family in Family::ALL {
        let game = family.game().unwrap_or(GameKind::Cleanup);
        let mut cfg = MapConfig::default_for(game);
        cfg.horizon = 120;
        let t = Trajectory::record(&cfg, &family.default_ref(), 9).unwrap();
        assert_eq!(t.replay(None).unwrap(), t, "{family}");
        t.verify_actions().unwrap();
    }
}

#[test]
fn stand_only_gathering_is_idle_and_peaceful() {
    let map = MapConfig::default_for(GameKind::Gathering).compile().unwrap();
    let r = evaluate_policy(&Family::Stand.default_ref(), &map, &[1, 2, 3]).unwrap();
    assert_eq!(r.metrics.efficiency, 0.0);
    assert_eq!(r.metrics.peace, 4.0);
}
