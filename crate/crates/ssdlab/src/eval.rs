//! Self-play episodes and multi-seed evaluation.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{CompiledMap, GameKind, GameState, StepOutcome, World};
use crate::error::{Error, Result};
use crate::metrics::{maximin, EpisodeRecord, MetricsVector, Objective};
use crate::policy::{Policy, PolicySource};

/// Plays one episode with every agent running `policy`. `observer` sees each
/// step's action codes and outcome.
pub fn run_episode_observed(
    policy: &mut dyn Policy,
    map: &Arc<CompiledMap>,
    seed: u64,
    mut observer: impl FnMut(u32, &[u8], &StepOutcome),
) -> Result<EpisodeRecord> {
    policy.reset();
    let mut state = GameState::reset(seed, map);
    let n = state.n_agents();
    let h = state.horizon();
    let mut returns = vec![0i64; n];
    let mut positive = vec![Vec::new(); n];
    let mut active_counts = Vec::with_capacity(h as usize);
    let mut codes = vec![0u8; n];

    while !state.is_done() {
        let t = state.step_count();
        active_counts.push(state.agents().active_count() as u32);
        for (i, c) in codes.iter_mut().enumerate() {
            *c = policy.act(&state, i);
        }
        let out = state.step_codes(&codes)?;
        for (i, r) in out.rewards.iter().enumerate() {
            returns[i] += r;
            if *r > 0 {
                positive[i].push(t);
            }
        }
        observer(t, &codes, &out);
    }

    Ok(EpisodeRecord {
        returns: returns.into_iter().map(|r| r as f64).collect(),
        positive_reward_times: positive,
        active_counts,
        horizon: h,
    })
}

pub fn run_episode(policy: &mut dyn Policy, map: &Arc<CompiledMap>, seed: u64) -> Result<EpisodeRecord> {
    run_episode_observed(policy, map, seed, |_, _, _| {})
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub returns: Vec<f64>,
    pub metrics: MetricsVector,
}

/// Multi-seed evaluation of one policy. Per-seed results are kept in
/// ascending seed order, so aggregates do not depend on the order the seeds
/// were given in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub game: GameKind,
    pub horizon: u32,
    pub per_seed: Vec<SeedResult>,
    /// Per-agent return averaged over seeds.
    pub mean_returns: Vec<f64>,
    /// Metrics averaged over seeds.
    pub metrics: MetricsVector,
    /// Worst agent's seed-mean return.
    pub maximin: f64,
}

impl EvalReport {
    pub fn from_seeds(game: GameKind, horizon: u32, mut per_seed: Vec<SeedResult>) -> Result<EvalReport> {
        if per_seed.is_empty() {
            return Err(Error::invalid("evaluation needs at least one seed"));
        }
        per_seed.sort_by_key(|r| r.seed);
        let n = per_seed[0].returns.len();
        let k = per_seed.len() as f64;
        let mut mean_returns = vec![0.0; n];
        for r in &per_seed {
            for (m, x) in mean_returns.iter_mut().zip(&r.returns) {
                *m += x;
            }
        }
        for m in &mut mean_returns {
            *m /= k;
        }
        let ms: Vec<MetricsVector> = per_seed.iter().map(|r| r.metrics).collect();
        Ok(EvalReport {
            game,
            horizon,
            metrics: MetricsVector::mean(&ms).expect("non-empty"),
            maximin: maximin(&mean_returns)?,
            mean_returns,
            per_seed,
        })
    }

    /// Average per-agent return.
    pub fn mean_reward(&self) -> f64 {
        self.mean_returns.iter().sum::<f64>() / self.mean_returns.len().max(1) as f64
    }

    /// Welfare of the seed-mean returns.
    pub fn score(&self, objective: Objective) -> f64 {
        match objective {
            Objective::Efficiency => self.mean_returns.iter().sum::<f64>() / self.horizon as f64,
            Objective::Maximin => self.maximin,
        }
    }

    pub fn seeds(&self) -> Vec<u64> {
        self.per_seed.iter().map(|r| r.seed).collect()
    }
}

/// Evaluates policies on one map, running seeds in parallel and memoizing
/// registered policies by `(policy, seed)`.
#[derive(Debug)]
pub struct Evaluator {
    map: Arc<CompiledMap>,
    cache: Mutex<HashMap<(String, u64), SeedResult>>,
}

impl Evaluator {
    pub fn new(map: Arc<CompiledMap>) -> Self {
        Evaluator {
            map,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn map(&self) -> &Arc<CompiledMap> {
        &self.map
    }

    pub fn evaluate(&self, policy: &dyn PolicySource, seeds: &[u64]) -> Result<EvalReport> {
        if seeds.is_empty() {
            return Err(Error::invalid("evaluation needs at least one seed"));
        }
        let key = policy.policy_ref().map(|r| r.to_json());
        let results = seeds
            .par_iter()
            .map(|&seed| {
                if let Some(k) = &key {
                    let hit = self.cache.lock().expect("cache lock").get(&(k.clone(), seed)).cloned();
                    if let Some(hit) = hit {
                        return Ok(hit);
                    }
                }
                let r = evaluate_seed(policy, &self.map, seed)?;
                if let Some(k) = &key {
                    self.cache.lock().expect("cache lock").insert((k.clone(), seed), r.clone());
                }
                Ok(r)
            })
            .collect::<Result<Vec<_>>>()?;
        EvalReport::from_seeds(self.map.game, self.map.horizon, results)
    }
}

fn evaluate_seed(policy: &dyn PolicySource, map: &Arc<CompiledMap>, seed: u64) -> Result<SeedResult> {
    let mut p = policy.build(map.game)?;
    let record = run_episode(p.as_mut(), map, seed)?;
    Ok(SeedResult {
        seed,
        metrics: record.metrics()?,
        returns: record.returns,
    })
}

/// One-shot evaluation without memoization.
pub fn evaluate_policy(policy: &dyn PolicySource, map: &Arc<CompiledMap>, seeds: &[u64]) -> Result<EvalReport> {
    Evaluator::new(map.clone()).evaluate(policy, seeds)
}
