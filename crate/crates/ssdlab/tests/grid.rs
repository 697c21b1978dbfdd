use std::cmp::Reverse;
use std::collections::BinaryHeap;

use proptest::prelude::*;
use ssdlab::grid::{bfs, direction_to_action, Action, Grid, GridPos, Orientation};
use ssdlab::rng::Rng;

/// Dijkstra over unit edges, written independently of the library's BFS.
fn dijkstra(grid: &Grid, sources: &[GridPos]) -> Vec<Option<u32>> {
    let (w, h) = (grid.width(), grid.height());
    let mut dist = vec![None; w * h];
    let mut heap = BinaryHeap::new();
    for s in sources {
        heap.push(Reverse((0u32, s.row, s.col)));
    }
    while let Some(Reverse((d, r, c))) = heap.pop() {
        if dist[r * w + c].is_some() {
            continue;
        }
        dist[r * w + c] = Some(d);
        let cand = [(r.wrapping_sub(1), c), (r + 1, c), (r, c.wrapping_sub(1)), (r, c + 1)];
        for (nr, nc) in cand {
            if nr < h && nc < w && !grid.is_wall(GridPos::new(nr, nc)) && dist[nr * w + nc].is_none() {
                heap.push(Reverse((d + 1, nr, nc)));
            }
        }
    }
    dist
}

fn arb_grid() -> impl Strategy<Value = (Grid, Vec<GridPos>)> {
    (1usize..=8, 1usize..=8)
        .prop_flat_map(|(w, h)| (Just(w), Just(h), prop::collection::vec(prop::bool::weighted(0.3), w * h), 1usize..4))
        .prop_flat_map(|(w, h, walls, k)| {
            let open: Vec<usize> = (0..w * h).filter(|i| !walls[*i]).collect();
            let open = if open.is_empty() { vec![0] } else { open };
            let picks = prop::collection::vec(prop::sample::select(open), k);
            (Just(w), Just(h), Just(walls), picks)
        })
        .prop_map(|(w, h, walls, picks)| {
            let sources: Vec<GridPos> = picks.iter().map(|i| GridPos::new(i / w, i % w)).collect();
            let wall_cells = (0..w * h)
                .filter(|i| walls[*i] && !picks.contains(i))
                .map(|i| GridPos::new(i / w, i % w));
            (Grid::with_walls(w, h, wall_cells).unwrap(), sources)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn bfs_matches_dijkstra((grid, sources) in arb_grid()) {
        let r = bfs(&grid, &sources).unwrap();
        let oracle = dijkstra(&grid, &sources);
        for cell in grid.cells() {
            prop_assert_eq!(r.distance(cell), oracle[grid.index(cell)], "cell {}", cell);
        }
    }

    #[test]
    fn distances_obey_the_triangle_inequality((grid, sources) in arb_grid()) {
        let r = bfs(&grid, &sources[..1]).unwrap();
        for cell in grid.cells() {
            let Some(d) = r.distance(cell) else { continue };
            for n in grid.neighbors(cell) {
                let dn = r.distance(n).expect("neighbors of reachable cells are reachable");
                prop_assert!(dn <= d + 1 && d <= dn + 1);
            }
        }
    }

    #[test]
    fn following_first_steps_takes_exactly_distance_moves((grid, sources) in arb_grid()) {
        let start = sources[0];
        let from_start = bfs(&grid, &[start]).unwrap();
        for (target, d) in from_start.reachable().collect::<Vec<_>>() {
            let mut cur = start;
            let mut moves = 0;
            while cur != target {
                let next = bfs(&grid, &[cur]).unwrap().first_step(target).expect("reachable target has a first step");
                prop_assert_eq!(next.manhattan(cur), 1);
                cur = next;
                moves += 1;
                prop_assert!(moves <= d);
            }
            prop_assert_eq!(moves, d);
        }
    }
}

#[test]
fn detour_example() {
    let g = Grid::with_walls(3, 3, [GridPos::new(1, 1), GridPos::new(0, 1)]).unwrap();
    let r = bfs(&g, &[GridPos::new(0, 0)]).unwrap();
    assert_eq!(r.distance(GridPos::new(0, 2)), Some(6));
    assert_eq!(dijkstra(&g, &[GridPos::new(0, 0)])[2], Some(6));
    assert!(bfs(&g, &[]).is_err());
}

#[test]
fn direction_examples() {
    for o in Orientation::ALL {
        assert_eq!(direction_to_action(-1, 0, o).unwrap(), Action::MoveNorth);
        assert_eq!(direction_to_action(0, 1, o).unwrap(), Action::MoveEast);
        assert!(direction_to_action(1, 1, o).is_err());
        assert!(direction_to_action(0, 0, o).is_err());
    }
}

#[test]
fn rng_streams_reproduce_and_separate() {
    for seed in [0u64, 1, 42, u64::MAX] {
        let mut a = Rng::new(seed);
        let mut b = Rng::new(seed);
        for _ in 0..10_000 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        let mut x = Rng::stream(seed, 0, "cleanup.waste");
        let mut y = Rng::stream(seed, 0, "cleanup.regrow");
        let xs: Vec<u64> = (0..16).map(|_| x.next_u64()).collect();
        let ys: Vec<u64> = (0..16).map(|_| y.next_u64()).collect();
        assert_ne!(xs, ys);
    }
}
