//! Configuration search: propose, run the inner loop, score on held-out
//! seeds, keep or revert.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::env::GameKind;
use crate::error::{Error, Result};
use crate::eval::Evaluator;
use crate::external::ExternalCommand;
use crate::inner::{run_inner_loop, Candidate, Helper, PipelineConfig, Synthesizer};
use crate::metrics::{MetricsVector, Objective};
use crate::policy::{Family, KnobSpec, PolicyRef};
use crate::rng::Rng;

pub fn default_held_out_seeds() -> Vec<u64> {
    (1001..=1012).collect()
}

/// Strict improvement over the running best by more than `tau`.
pub fn keep_decision(score: f64, best: f64, tau: f64) -> bool {
    score > best + tau
}

/// Checks every field range and reports all violations at once.
pub fn validate_config(config: &PipelineConfig, game: GameKind, n_agents: usize, held_out: &[u64]) -> Result<()> {
    let mut problems = Vec::new();
    let it = &config.iteration;
    if it.k == 0 {
        problems.push("iteration.k must be >= 1".to_string());
    }
    if it.eval_seeds.is_empty() {
        problems.push("iteration.eval_seeds must not be empty".to_string());
    }
    let held: HashSet<u64> = held_out.iter().copied().collect();
    let mut overlap: Vec<u64> = it.eval_seeds.iter().copied().filter(|s| held.contains(s)).collect();
    overlap.sort_unstable();
    overlap.dedup();
    if !overlap.is_empty() {
        problems.push(format!("iteration.eval_seeds overlap the held-out seeds: {overlap:?}"));
    }
    if it.step_budget_ms == 0 {
        problems.push("iteration.step_budget_ms must be > 0".to_string());
    }
    let fb = &config.feedback;
    if !fb.regress_guard.is_finite() || !fb.fairness_alert.is_finite() {
        problems.push("feedback thresholds must be finite".to_string());
    }
    if !(fb.warning_ratio.is_finite() && fb.warning_ratio >= 0.0) {
        problems.push("feedback.warning_ratio must be >= 0".to_string());
    }
    if let Err(e) = config.policy.validate(game, n_agents) {
        problems.push(format!("policy: {e}"));
    }
    let missing: Vec<Helper> = Helper::required_by(config.policy.family())
        .iter()
        .copied()
        .filter(|h| !config.helpers.enabled.contains(h))
        .collect();
    if !missing.is_empty() {
        problems.push(format!(
            "policy '{}' needs disabled helpers {missing:?}",
            config.policy.name()
        ));
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Error::config(problems.join("; ")))
    }
}

/// One changed leaf between two configurations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiffEntry {
    pub field: String,
    pub old: String,
    pub new: String,
}

impl fmt::Display for DiffEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {} -> {}", self.field, self.old, self.new)
    }
}

/// Field-level changes from `old` to `new`. Arrays count as single values and
/// a change of policy family is reported as one entry.
pub fn config_diff(old: &PipelineConfig, new: &PipelineConfig) -> Vec<DiffEntry> {
    let mut a = serde_json::to_value(old).expect("configs serialize");
    let mut b = serde_json::to_value(new).expect("configs serialize");
    let mut out = Vec::new();
    if old.policy.name() != new.policy.name() {
        out.push(DiffEntry {
            field: "policy".into(),
            old: old.policy.to_json(),
            new: new.policy.to_json(),
        });
        for v in [&mut a, &mut b] {
            v.as_object_mut().expect("object").remove("policy");
        }
    }
    let (mut la, mut lb) = (Vec::new(), Vec::new());
    flatten("", &a, &mut la);
    flatten("", &b, &mut lb);
    let lookup = |leaves: &[(String, String)], key: &str| {
        leaves.iter().find(|(k, _)| k == key).map(|(_, v)| v.clone())
    };
    let mut keys: Vec<&String> = la.iter().chain(&lb).map(|(k, _)| k).collect();
    keys.sort();
    keys.dedup();
    for k in keys {
        let (x, y) = (lookup(&la, k), lookup(&lb, k));
        if x != y {
            out.push(DiffEntry {
                field: k.clone(),
                old: x.unwrap_or_else(|| "(absent)".into()),
                new: y.unwrap_or_else(|| "(absent)".into()),
            });
        }
    }
    out
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    match v {
        Value::Object(m) if !m.is_empty() => {
            for (k, child) in m {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, child, out);
            }
        }
        _ => out.push((prefix.to_string(), v.to_string())),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    /// 0 is the baseline.
    pub iteration: usize,
    pub config: PipelineConfig,
    /// Held-out score; `None` when the iteration produced no policy.
    pub score: Option<f64>,
    pub metrics: Option<MetricsVector>,
    /// Changes against the running best at proposal time.
    pub diff: Vec<DiffEntry>,
    pub kept: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<String>,
}

/// Re-applies the keep rule to a logged history; true when every kept flag
/// is reproduced.
pub fn replay_keep_flags(history: &[HistoryEntry], tau: f64) -> bool {
    let mut best = f64::NEG_INFINITY;
    history.iter().all(|e| {
        let kept = e.score.is_some_and(|s| keep_decision(s, best, tau));
        if kept {
            best = e.score.unwrap_or(best);
        }
        kept == e.kept
    })
}

/// What a proposer sees.
#[derive(Debug, Clone, Copy)]
pub struct ProposalContext<'a> {
    pub best: &'a PipelineConfig,
    pub best_score: f64,
    pub history: &'a [HistoryEntry],
    pub game: GameKind,
    pub n_agents: usize,
    pub iteration: usize,
    pub attempt: usize,
    /// Why the previous attempt in this iteration was rejected.
    pub error: Option<&'a str>,
}

pub trait Proposer {
    fn propose(&mut self, ctx: &ProposalContext<'_>) -> Result<PipelineConfig>;
}

const K_RANGE: std::ops::RangeInclusive<usize> = 1..=5;
const SEED_COUNTS: [usize; 3] = [5, 8, 12];

/// All configurations one field away from `base`.
pub fn single_mutations(base: &PipelineConfig, game: GameKind, n_agents: usize) -> Vec<PipelineConfig> {
    let mut out = Vec::new();
    let with_policy = |p: PolicyRef| PipelineConfig {
        policy: p,
        ..base.clone()
    };
    for f in Family::searchable(game) {
        if f != base.policy.family() {
            out.push(with_policy(f.default_ref()));
        }
    }
    for spec in base.policy.knobs(n_agents) {
        for v in spec.neighbors() {
            if let Ok(p) = base.policy.with_knob(spec.kind, v, n_agents) {
                if p != base.policy {
                    out.push(with_policy(p));
                }
            }
        }
    }
    for k in K_RANGE {
        if k != base.iteration.k {
            let mut c = base.clone();
            c.iteration.k = k;
            out.push(c);
        }
    }
    for n in SEED_COUNTS {
        if n != base.iteration.eval_seeds.len() {
            let mut c = base.clone();
            c.iteration.eval_seeds = (1..=n as u64).collect();
            out.push(c);
        }
    }
    out
}

/// One hill-climb step from `best`: a random single-field mutation not yet
/// in `history`, or a double mutation once every single one has been tried.
pub fn propose_mutation(
    rng: &mut Rng,
    best: &PipelineConfig,
    history: &[HistoryEntry],
    game: GameKind,
    n_agents: usize,
) -> PipelineConfig {
    let mut seen: HashSet<String> = history.iter().map(|e| e.config.fingerprint()).collect();
    seen.insert(best.fingerprint());
    let singles = single_mutations(best, game, n_agents);
    let fresh: Vec<&PipelineConfig> = singles.iter().filter(|c| !seen.contains(&c.fingerprint())).collect();
    if let Some(c) = rng.choose(&fresh) {
        return (*c).clone();
    }
    let mut fallback = None;
    for _ in 0..64 {
        let Some(first) = rng.choose(&singles) else { break };
        let seconds = single_mutations(first, game, n_agents);
        let Some(second) = rng.choose(&seconds) else { continue };
        if !seen.contains(&second.fingerprint()) {
            return second.clone();
        }
        fallback.get_or_insert_with(|| second.clone());
    }
    fallback.unwrap_or_else(|| best.clone())
}

/// Scripted hill climber over [`single_mutations`].
#[derive(Debug, Clone)]
pub struct HillClimbProposer {
    rng: Rng,
}

impl HillClimbProposer {
    pub fn new(seed: u64) -> Self {
        HillClimbProposer {
            rng: Rng::stream(seed, 0, "outer.propose"),
        }
    }
}

impl Proposer for HillClimbProposer {
    fn propose(&mut self, ctx: &ProposalContext<'_>) -> Result<PipelineConfig> {
        Ok(propose_mutation(&mut self.rng, ctx.best, ctx.history, ctx.game, ctx.n_agents))
    }
}

/// Knob grid for every searchable family: default, lower and upper neighbor
/// of the first two knobs, trimmed to `max_points`.
pub fn sweep_grid(base: &PipelineConfig, game: GameKind, n_agents: usize, max_points: usize) -> Vec<PipelineConfig> {
    let mut out = Vec::new();
    for f in Family::searchable(game) {
        let start = f.default_ref();
        let knobs: Vec<KnobSpec> = start.knobs(n_agents).into_iter().take(2).collect();
        let mut policies = vec![start];
        for spec in &knobs {
            let mut values = vec![spec.value];
            values.extend(spec.neighbors());
            policies = policies
                .iter()
                .flat_map(|p| {
                    values
                        .iter()
                        .filter_map(|&v| p.with_knob(spec.kind, v, n_agents).ok())
                        .collect::<Vec<_>>()
                })
                .collect();
        }
        for p in policies {
            if !out.iter().any(|c: &PipelineConfig| c.policy == p) {
                out.push(PipelineConfig {
                    policy: p,
                    ..base.clone()
                });
            }
        }
    }
    out.truncate(max_points);
    out
}

/// Proposes a fixed list of configurations in order, then repeats the last.
#[derive(Debug, Clone)]
pub struct SweepProposer {
    grid: Vec<PipelineConfig>,
    next: usize,
}

impl SweepProposer {
    pub fn new(grid: Vec<PipelineConfig>) -> Self {
        SweepProposer { grid, next: 0 }
    }
}

impl Proposer for SweepProposer {
    fn propose(&mut self, ctx: &ProposalContext<'_>) -> Result<PipelineConfig> {
        let c = self
            .grid
            .get(self.next)
            .or(self.grid.last())
            .cloned()
            .unwrap_or_else(|| ctx.best.clone());
        self.next += 1;
        Ok(c)
    }
}

/// Hands the search state to a command: writes `c_star.toml` and
/// `history.jsonl` into `workspace`, runs the command there, and parses the
/// TOML configuration it prints.
#[derive(Debug, Clone)]
pub struct ExternalProposer {
    pub command: ExternalCommand,
    pub workspace: PathBuf,
}

impl ExternalProposer {
    pub fn new(command: ExternalCommand, workspace: impl Into<PathBuf>) -> Self {
        ExternalProposer {
            command,
            workspace: workspace.into(),
        }
    }
}

impl Proposer for ExternalProposer {
    fn propose(&mut self, ctx: &ProposalContext<'_>) -> Result<PipelineConfig> {
        let fail = |e: Error| Error::Proposer(e.to_string());
        fs::create_dir_all(&self.workspace).map_err(|e| fail(Error::io(&self.workspace, e)))?;
        let c_star = self.workspace.join("c_star.toml");
        fs::write(&c_star, ctx.best.to_toml()).map_err(|e| fail(Error::io(&c_star, e)))?;
        let hist = self.workspace.join("history.jsonl");
        fs::write(&hist, history_jsonl(ctx.history)).map_err(|e| fail(Error::io(&hist, e)))?;
        let mut cmd = self.command.clone();
        cmd.cwd.get_or_insert_with(|| self.workspace.clone());
        let request = serde_json::json!({
            "iteration": ctx.iteration,
            "attempt": ctx.attempt,
            "best_score": ctx.best_score,
            "error": ctx.error,
        });
        let out = cmd.run(&format!("{request}\n")).map_err(fail)?;
        PipelineConfig::from_toml(&out).map_err(fail)
    }
}

fn history_jsonl(history: &[HistoryEntry]) -> String {
    history
        .iter()
        .map(|e| serde_json::to_string(e).expect("history serializes") + "\n")
        .collect()
}

#[derive(Debug, Clone)]
pub struct OuterSettings {
    pub iterations: usize,
    pub tau: f64,
    pub held_out: Vec<u64>,
    /// Where config snapshots, `history.jsonl` and `summary.json` go.
    pub run_dir: Option<PathBuf>,
}

impl Default for OuterSettings {
    fn default() -> Self {
        OuterSettings {
            iterations: 20,
            tau: 0.0,
            held_out: default_held_out_seeds(),
            run_dir: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OuterResult {
    pub best_config: PipelineConfig,
    pub best_policy: Candidate,
    pub best_score: f64,
    pub best_metrics: MetricsVector,
    pub history: Vec<HistoryEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub objective: Objective,
    pub best_config: PipelineConfig,
    pub best_score: f64,
    pub best_metrics: MetricsVector,
    pub best_policy: String,
    pub held_out_seeds: Vec<u64>,
    pub iterations: usize,
}

struct Scored {
    policy: Candidate,
    score: f64,
    metrics: MetricsVector,
}

fn score_config(
    synthesizer: &mut dyn Synthesizer,
    evaluator: &Evaluator,
    config: &PipelineConfig,
    objective: Objective,
    held_out: &[u64],
) -> Result<Scored> {
    let inner = run_inner_loop(synthesizer, evaluator, config, objective)?;
    let report = evaluator.evaluate(inner.best.as_ref(), held_out)?;
    Ok(Scored {
        score: report.score(objective),
        metrics: report.metrics,
        policy: inner.best,
    })
}

pub fn run_outer_loop(
    proposer: &mut dyn Proposer,
    synthesizer: &mut dyn Synthesizer,
    evaluator: &Evaluator,
    objective: Objective,
    baseline: &PipelineConfig,
    settings: &OuterSettings,
) -> Result<OuterResult> {
    let map = evaluator.map();
    let (game, n_agents) = (map.game, map.n_agents);
    if settings.held_out.is_empty() {
        return Err(Error::invalid("held-out seed set must not be empty"));
    }
    if !(settings.tau.is_finite() && settings.tau >= 0.0) {
        return Err(Error::invalid("tau must be finite and >= 0"));
    }
    validate_config(baseline, game, n_agents, &settings.held_out)?;
    let run = settings.run_dir.as_deref().map(RunDir::create).transpose()?;

    let base = score_config(synthesizer, evaluator, baseline, objective, &settings.held_out)?;
    let mut best_config = baseline.clone();
    let mut best_score = base.score;
    let mut best_metrics = base.metrics;
    let mut best_policy = base.policy;
    let mut history = vec![HistoryEntry {
        iteration: 0,
        config: baseline.clone(),
        score: Some(base.score),
        metrics: Some(base.metrics),
        diff: Vec::new(),
        kept: true,
        note: Some("baseline".into()),
        policy: Some(best_policy.describe()),
    }];
    if let Some(r) = &run {
        r.record(&history[0])?;
    }

    for j in 1..=settings.iterations {
        let retries = best_config.iteration.retries;
        let mut proposal = None;
        let mut last_error: Option<String> = None;
        for attempt in 0..=retries {
            let ctx = ProposalContext {
                best: &best_config,
                best_score,
                history: &history,
                game,
                n_agents,
                iteration: j,
                attempt,
                error: last_error.as_deref(),
            };
            match proposer
                .propose(&ctx)
                .and_then(|c| validate_config(&c, game, n_agents, &settings.held_out).map(|_| c))
            {
                Ok(c) => {
                    proposal = Some(c);
                    break;
                }
                Err(e) => last_error = Some(e.to_string()),
            }
        }

        let entry = match proposal {
            None => HistoryEntry {
                iteration: j,
                config: best_config.clone(),
                score: None,
                metrics: None,
                diff: Vec::new(),
                kept: false,
                note: Some(format!(
                    "no valid proposal after {} attempts: {}",
                    retries + 1,
                    last_error.unwrap_or_default()
                )),
                policy: None,
            },
            Some(config) => {
                let diff = config_diff(&best_config, &config);
                match score_config(synthesizer, evaluator, &config, objective, &settings.held_out) {
                    Err(e @ Error::InnerLoopFailed(_)) => HistoryEntry {
                        iteration: j,
                        config,
                        score: None,
                        metrics: None,
                        diff,
                        kept: false,
                        note: Some(e.to_string()),
                        policy: None,
                    },
                    Err(e) => return Err(e),
                    Ok(s) => {
                        let kept = keep_decision(s.score, best_score, settings.tau);
                        let entry = HistoryEntry {
                            iteration: j,
                            config: config.clone(),
                            score: Some(s.score),
                            metrics: Some(s.metrics),
                            diff,
                            kept,
                            note: None,
                            policy: Some(s.policy.describe()),
                        };
                        if kept {
                            best_config = config;
                            best_score = s.score;
                            best_metrics = s.metrics;
                            best_policy = s.policy;
                        }
                        entry
                    }
                }
            }
        };
        if let Some(r) = &run {
            r.record(&entry)?;
        }
        history.push(entry);
    }

    if let Some(r) = &run {
        r.finish(&RunSummary {
            objective,
            best_config: best_config.clone(),
            best_score,
            best_metrics,
            best_policy: best_policy.describe(),
            held_out_seeds: settings.held_out.clone(),
            iterations: settings.iterations,
        })?;
    }
    Ok(OuterResult {
        best_config,
        best_policy,
        best_score,
        best_metrics,
        history,
    })
}

struct RunDir {
    root: PathBuf,
}

impl RunDir {
    fn create(root: &Path) -> Result<RunDir> {
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        let hist = root.join("history.jsonl");
        fs::write(&hist, "").map_err(|e| Error::io(&hist, e))?;
        Ok(RunDir { root: root.to_path_buf() })
    }

    fn record(&self, entry: &HistoryEntry) -> Result<()> {
        use std::io::Write;
        let tag = if entry.kept { "kept" } else { "discarded" };
        let cfg = self.root.join(format!("config_{:03}_{tag}.toml", entry.iteration));
        fs::write(&cfg, entry.config.to_toml()).map_err(|e| Error::io(&cfg, e))?;
        let hist = self.root.join("history.jsonl");
        let mut f = fs::OpenOptions::new()
            .append(true)
            .open(&hist)
            .map_err(|e| Error::io(&hist, e))?;
        f.write_all(history_jsonl(std::slice::from_ref(entry)).as_bytes())
            .map_err(|e| Error::io(&hist, e))
    }

    fn finish(&self, summary: &RunSummary) -> Result<()> {
        let path = self.root.join("summary.json");
        let text = serde_json::to_string_pretty(summary).expect("summary serializes");
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }
}

/// Reads a `history.jsonl` written by a run.
pub fn load_history(path: &Path) -> Result<Vec<HistoryEntry>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                source_name: path.display().to_string(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::KnobKind;

    fn base() -> PipelineConfig {
        PipelineConfig::default_for(GameKind::Cleanup)
    }

    #[test]
    fn keep_is_strict() {
        assert!(keep_decision(3.0, 2.9, 0.0));
        assert!(!keep_decision(2.9, 2.9, 0.0));
        assert!(!keep_decision(3.0, 2.9, 0.2));
    }

    #[test]
    fn default_config_is_valid() {
        validate_config(&base(), GameKind::Cleanup, 10, &default_held_out_seeds()).unwrap();
        validate_config(
            &PipelineConfig::default_for(GameKind::Gathering),
            GameKind::Gathering,
            4,
            &default_held_out_seeds(),
        )
        .unwrap();
    }

    #[test]
    fn every_violation_is_named() {
        let mut c = base();
        c.iteration.k = 0;
        c.iteration.eval_seeds = vec![3, 1005];
        c.policy = PolicyRef::from_name_params("cleanup-rotation-interleaved", &[("period".into(), "0".into())]).unwrap();
        let msg = validate_config(&c, GameKind::Cleanup, 10, &default_held_out_seeds())
            .unwrap_err()
            .to_string();
        assert!(msg.contains("iteration.k"), "{msg}");
        assert!(msg.contains("[1005]"), "{msg}");
        assert!(msg.contains("period"), "{msg}");
    }

    #[test]
    fn diff_counts_fields() {
        let a = base();
        assert!(config_diff(&a, &a).is_empty());
        let mut b = a.clone();
        b.iteration.k = 2;
        b.iteration.eval_seeds = (1..=12).collect();
        let d = config_diff(&a, &b);
        assert_eq!(d.len(), 2, "{d:?}");
        let mut r = a.clone();
        r.policy = Family::RotationInterleaved.default_ref();
        let r2 = PipelineConfig {
            policy: r.policy.with_knob(KnobKind::Period, 60.0, 10).unwrap(),
            ..r.clone()
        };
        let d = config_diff(&r, &r2);
        assert_eq!(d.len(), 1, "{d:?}");
        assert_eq!(d[0].field, "policy.params.period");
        assert_eq!(config_diff(&a, &r).len(), 1);
    }

    #[test]
    fn exhausted_singles_give_double_mutation() {
        let b = base();
        let history: Vec<HistoryEntry> = single_mutations(&b, GameKind::Cleanup, 10)
            .into_iter()
            .enumerate()
            .map(|(i, config)| HistoryEntry {
                iteration: i + 1,
                config,
                score: Some(0.0),
                metrics: None,
                diff: Vec::new(),
                kept: false,
                note: None,
                policy: None,
            })
            .collect();
        let mut rng = Rng::new(5);
        let c = propose_mutation(&mut rng, &b, &history, GameKind::Cleanup, 10);
        assert!(config_diff(&b, &c).len() >= 2 || c.policy.family() != b.policy.family());
        assert!(history.iter().all(|e| e.config != c));
    }

    #[test]
    fn sweep_grid_fits_budget() {
        let g = sweep_grid(&base(), GameKind::Cleanup, 10, 48);
        assert!(g.len() <= 48 && g.len() >= 4);
        let fams: HashSet<Family> = g.iter().map(|c| c.policy.family()).collect();
        assert_eq!(fams.len(), 4);
    }

    #[test]
    fn replay_detects_a_flipped_flag() {
        let mk = |score, kept| HistoryEntry {
            iteration: 0,
            config: base(),
            score,
            metrics: None,
            diff: Vec::new(),
            kept,
            note: None,
            policy: None,
        };
        let good = vec![mk(Some(1.0), true), mk(Some(0.5), false), mk(None, false), mk(Some(2.0), true)];
        assert!(replay_keep_flags(&good, 0.0));
        let mut bad = good.clone();
        bad[1].kept = true;
        assert!(!replay_keep_flags(&bad, 0.0));
    }
}
