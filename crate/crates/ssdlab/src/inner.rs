//! Synthesize, validate, evaluate and feed back, `k` times; keep the best.

use std::fmt::Write as _;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{CompiledMap, GameKind, GameState, World};
use crate::error::{Error, Result};
use crate::eval::{EvalReport, Evaluator};
use crate::external::ExternalCommand;
use crate::metrics::{MetricsVector, Objective};
use crate::policy::{Family, KnobKind, PolicyRef, PolicySource};
use crate::rng::Rng;

/// Coordination helpers a synthesized policy may rely on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Helper {
    WasteFraction,
    CleanYield,
    RotationRole,
    GetMyApples,
    VoronoiZones,
    NearestRespawningApple,
}

impl Helper {
    pub const ALL: [Helper; 6] = [
        Helper::WasteFraction,
        Helper::CleanYield,
        Helper::RotationRole,
        Helper::GetMyApples,
        Helper::VoronoiZones,
        Helper::NearestRespawningApple,
    ];

    /// Helpers a registered family is built from.
    pub fn required_by(family: Family) -> &'static [Helper] {
        match family {
            Family::StaticThreshold => &[Helper::WasteFraction, Helper::CleanYield],
            Family::RotationInterleaved => &[Helper::CleanYield, Helper::RotationRole],
            Family::TwoCleanerRotation => &[Helper::WasteFraction, Helper::CleanYield, Helper::RotationRole],
            Family::SyncThreshold => &[Helper::WasteFraction, Helper::CleanYield, Helper::GetMyApples],
            Family::VoronoiSpatiotemporal => &[Helper::VoronoiZones],
            Family::Stand => &[],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeedbackSettings {
    /// Efficiency at or above which the synthesizer is told not to regress.
    pub regress_guard: f64,
    /// Maximin below which the fairness alert fires.
    pub fairness_alert: f64,
    /// Warning when maximin falls below this share of the mean reward.
    pub warning_ratio: f64,
}

impl Default for FeedbackSettings {
    fn default() -> Self {
        FeedbackSettings {
            regress_guard: 2.5,
            fairness_alert: 0.0,
            warning_ratio: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HelperSettings {
    pub enabled: Vec<Helper>,
}

impl Default for HelperSettings {
    fn default() -> Self {
        HelperSettings {
            enabled: Helper::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IterationSettings {
    /// Inner iterations.
    pub k: usize,
    pub eval_seeds: Vec<u64>,
    /// Re-synthesis attempts after a validation failure.
    pub retries: usize,
    /// Passed through to external synthesizers.
    pub thinking_budget: u32,
    /// Wall-clock budget per smoke-test step, in milliseconds.
    pub step_budget_ms: u64,
}

impl Default for IterationSettings {
    fn default() -> Self {
        IterationSettings {
            k: 3,
            eval_seeds: (1..=5).collect(),
            retries: 3,
            thinking_budget: 16_000,
            step_budget_ms: 250,
        }
    }
}

/// Everything the outer loop searches over.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Opaque system prompt, passed through to synthesizers.
    #[serde(default)]
    pub prompt: String,
    #[serde(default)]
    pub feedback: FeedbackSettings,
    #[serde(default)]
    pub helpers: HelperSettings,
    #[serde(default)]
    pub iteration: IterationSettings,
    /// Policy the synthesizer starts from.
    pub policy: PolicyRef,
}

pub const DEFAULT_PROMPT: &str = "Write a policy that maximizes per-agent reward.";

impl PipelineConfig {
    pub fn default_for(game: GameKind) -> PipelineConfig {
        let policy = match game {
            GameKind::Cleanup => Family::StaticThreshold.default_ref(),
            GameKind::Gathering => Family::VoronoiSpatiotemporal.default_ref(),
        };
        PipelineConfig {
            prompt: DEFAULT_PROMPT.into(),
            feedback: Default::default(),
            helpers: Default::default(),
            iteration: Default::default(),
            policy,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("pipeline configs serialize")
    }

    pub fn from_toml(text: &str) -> Result<PipelineConfig> {
        toml::from_str(text).map_err(|e| Error::Parse {
            source_name: "pipeline config".into(),
            line: e
                .span()
                .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
                .unwrap_or(0),
            message: e.message().to_string(),
        })
    }

    /// Stable identity used for repeat detection.
    pub fn fingerprint(&self) -> String {
        serde_json::to_string(self).expect("pipeline configs serialize")
    }
}

/// Why a candidate policy was rejected.
#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ValidationError {
    #[error("could not build policy: {message}")]
    Instantiate { message: String },

    #[error("source contains denied token '{token}'")]
    Denied { token: String },

    #[error("agent {agent} emitted action {code} at step {step}; valid codes are 0..{n_actions}")]
    InvalidAction {
        step: u32,
        agent: usize,
        code: u8,
        n_actions: usize,
    },

    #[error("step {step} took {elapsed_ms} ms, over the {budget_ms} ms budget")]
    OverBudget {
        step: u32,
        elapsed_ms: u64,
        budget_ms: u64,
    },

    #[error("two smoke runs disagree at step {step}, agent {agent}")]
    Nondeterministic { step: u32, agent: usize },

    #[error("environment rejected the smoke run: {message}")]
    Environment { message: String },
}

/// Smoke-test parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationBudget {
    pub steps: u32,
    pub step_budget: Duration,
    /// Tokens rejected in foreign policy source.
    pub denylist: Vec<String>,
}

impl Default for ValidationBudget {
    fn default() -> Self {
        ValidationBudget {
            steps: 50,
            step_budget: Duration::from_millis(250),
            denylist: ["import os", "subprocess", "eval(", "exec(", "open(", "__import__", "socket"]
                .map(String::from)
                .to_vec(),
        }
    }
}

impl ValidationBudget {
    pub fn from_settings(settings: &IterationSettings) -> Self {
        ValidationBudget {
            step_budget: Duration::from_millis(settings.step_budget_ms),
            ..Default::default()
        }
    }
}

/// Smoke test on seed 0: action range, per-step time, and agreement between
/// two independent runs. Source screening applies only to candidates that
/// carry source text.
pub fn validate_policy(
    policy: &dyn PolicySource,
    map: &Arc<CompiledMap>,
    budget: &ValidationBudget,
) -> std::result::Result<(), ValidationError> {
    if let Some(src) = policy.source_text() {
        if let Some(token) = budget.denylist.iter().find(|t| src.contains(t.as_str())) {
            return Err(ValidationError::Denied { token: token.clone() });
        }
    }
    let first = smoke_run(policy, map, budget)?;
    let second = smoke_run(policy, map, budget)?;
    for (t, (a, b)) in first.iter().zip(&second).enumerate() {
        if let Some(agent) = a.iter().zip(b).position(|(x, y)| x != y) {
            return Err(ValidationError::Nondeterministic { step: t as u32, agent });
        }
    }
    if first.len() != second.len() {
        return Err(ValidationError::Nondeterministic {
            step: first.len().min(second.len()) as u32,
            agent: 0,
        });
    }
    Ok(())
}

fn smoke_run(
    source: &dyn PolicySource,
    map: &Arc<CompiledMap>,
    budget: &ValidationBudget,
) -> std::result::Result<Vec<Vec<u8>>, ValidationError> {
    if let Some(r) = source.policy_ref() {
        r.validate(map.game, map.n_agents)
            .map_err(|e| ValidationError::Instantiate { message: e.to_string() })?;
    }
    let mut policy = source
        .build(map.game)
        .map_err(|e| ValidationError::Instantiate { message: e.to_string() })?;
    policy.reset();
    let mut state = GameState::reset(0, map);
    let n = state.n_agents();
    let n_actions = map.game.n_actions();
    let mut trace = Vec::new();
    while state.step_count() < budget.steps && !state.is_done() {
        let step = state.step_count();
        let start = Instant::now();
        let codes: Vec<u8> = (0..n).map(|i| policy.act(&state, i)).collect();
        let elapsed = start.elapsed();
        if elapsed > budget.step_budget {
            return Err(ValidationError::OverBudget {
                step,
                elapsed_ms: elapsed.as_millis() as u64,
                budget_ms: budget.step_budget.as_millis() as u64,
            });
        }
        if let Some(agent) = codes.iter().position(|&c| c as usize >= n_actions) {
            return Err(ValidationError::InvalidAction {
                step,
                agent,
                code: codes[agent],
                n_actions,
            });
        }
        state
            .step_codes(&codes)
            .map_err(|e| ValidationError::Environment { message: e.to_string() })?;
        trace.push(codes);
    }
    Ok(trace)
}

pub const METRIC_DEFINITIONS: &str = "\
Efficiency U: total reward of all agents divided by the episode length.
Equality E: one minus the Gini coefficient of per-agent returns (1.0 is perfectly equal).
Sustainability S: mean over agents of the average timestep at which each agent earned positive reward.
Peace P: average number of agents not tagged out per timestep.
Maximin: the lowest per-agent return.";

/// What the synthesizer sees after an iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackBundle {
    pub policy_description: String,
    pub mean_reward: f64,
    pub metrics: MetricsVector,
    pub objective: Objective,
    pub metric_definitions: String,
    pub diagnostics: Vec<String>,
}

/// Feedback from the latest report in `history`. Diagnostics depend only on
/// that report and `settings`.
pub fn build_feedback(
    policy_description: &str,
    history: &[EvalReport],
    objective: Objective,
    settings: &FeedbackSettings,
) -> Result<FeedbackBundle> {
    let last = history
        .last()
        .ok_or_else(|| Error::invalid("feedback needs at least one evaluation"))?;
    let avg = last.mean_reward();
    let maximin = last.maximin;
    let mut diagnostics = Vec::new();
    if last.metrics.efficiency >= settings.regress_guard {
        diagnostics.push(format!(
            "**CRITICAL -- DO NOT REGRESS**: The current policy achieves high efficiency (>={}). \
             You MUST output a policy that is nearly identical to the current one. Copy the current \
             policy and make AT MOST one small targeted improvement (e.g., adjust a single numeric \
             threshold). If you are not confident a change will help, output the current policy \
             UNCHANGED. A regression here means the run fails.",
            settings.regress_guard
        ));
    }
    if maximin < settings.fairness_alert {
        diagnostics.push(format!(
            "**FAIRNESS ALERT**: maximin={maximin:.1} is NEGATIVE. The worst-off agent lost reward \
             overall while average was {avg:.1}. This means cleaning duties are NOT shared equitably. \
             Use time-based role rotation so ALL agents share cleaning costs equally. NEVER assign \
             permanent cleaner roles."
        ));
    } else if maximin < avg * settings.warning_ratio {
        diagnostics.push(format!(
            "**FAIRNESS WARNING**: maximin={maximin:.1} is much lower than average={avg:.1}. The gap \
             suggests unequal cleaning burden. Ensure ALL agents rotate through cleaning duty."
        ));
    }
    Ok(FeedbackBundle {
        policy_description: policy_description.to_string(),
        mean_reward: avg,
        metrics: last.metrics,
        objective,
        metric_definitions: METRIC_DEFINITIONS.to_string(),
        diagnostics,
    })
}

impl FeedbackBundle {
    pub fn has_regress_guard(&self) -> bool {
        self.diagnostics.iter().any(|d| d.contains("DO NOT REGRESS"))
    }

    /// Plain-text rendering for prompt-based synthesizers.
    pub fn render(&self) -> String {
        let m = &self.metrics;
        let mut s = String::new();
        let _ = writeln!(s, "Current policy: {}", self.policy_description);
        let _ = writeln!(s, "Mean reward per agent: {:.2}", self.mean_reward);
        let _ = writeln!(
            s,
            "Metrics: U={:.3} E={:.3} S={:.1} P={:.2} maximin={:.1}",
            m.efficiency, m.equality, m.sustainability, m.peace, m.maximin
        );
        let _ = writeln!(s, "Objective: {}", self.objective);
        let _ = writeln!(s, "{}", self.metric_definitions);
        for d in &self.diagnostics {
            let _ = writeln!(s, "{d}");
        }
        s
    }
}

/// Inputs to one synthesis call.
#[derive(Debug, Clone, Copy)]
pub struct SynthesisRequest<'a> {
    pub prompt: &'a str,
    pub game: GameKind,
    pub iteration: usize,
    pub attempt: usize,
    pub feedback: Option<&'a FeedbackBundle>,
    pub previous: Option<&'a dyn PolicySource>,
    /// Validation error of the previous attempt in this iteration.
    pub error: Option<&'a str>,
    pub config: &'a PipelineConfig,
    pub n_agents: usize,
}

pub type Candidate = Arc<dyn PolicySource>;

pub trait Synthesizer {
    fn synthesize(&mut self, request: &SynthesisRequest<'_>) -> Result<Candidate>;
}

/// Offline stand-in for a model: starts from the configured policy and then
/// tries family-local one-knob tweaks, returning the previous policy
/// unchanged when feedback asks it not to regress.
#[derive(Debug, Clone)]
pub struct ScriptedSynthesizer {
    seed: u64,
}

impl ScriptedSynthesizer {
    pub fn new(seed: u64) -> Self {
        ScriptedSynthesizer { seed }
    }
}

impl Default for ScriptedSynthesizer {
    fn default() -> Self {
        ScriptedSynthesizer::new(0)
    }
}

impl Synthesizer for ScriptedSynthesizer {
    fn synthesize(&mut self, req: &SynthesisRequest<'_>) -> Result<Candidate> {
        let base = &req.config.policy;
        let prev = req.previous.and_then(|p| p.policy_ref()).unwrap_or(base);
        if req.iteration == 0 || req.error.is_some() {
            return Ok(Arc::new(base.clone()));
        }
        if req.feedback.is_some_and(FeedbackBundle::has_regress_guard) {
            return Ok(Arc::new(prev.clone()));
        }
        let moves: Vec<(KnobKind, f64)> = prev
            .knobs(req.n_agents)
            .iter()
            .flat_map(|k| k.neighbors().into_iter().map(move |v| (k.kind, v)))
            .collect();
        let mut rng = Rng::stream(self.seed, req.iteration as u64, &prev.to_json());
        match rng.choose(&moves) {
            Some(&(kind, v)) => Ok(Arc::new(prev.with_knob(kind, v, req.n_agents)?)),
            None => Ok(Arc::new(prev.clone())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub policy: String,
    pub error: Option<ValidationError>,
}

/// One inner iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub attempts: Vec<AttemptRecord>,
    /// `None` when every attempt failed and the iteration was skipped.
    pub policy: Option<String>,
    pub score: Option<f64>,
    pub report: Option<EvalReport>,
    pub feedback: Option<FeedbackBundle>,
    pub synthesizer_error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct InnerResult {
    pub best: Candidate,
    pub best_iteration: usize,
    pub best_score: f64,
    pub best_report: EvalReport,
    pub log: Vec<IterationRecord>,
}

/// Runs `config.iteration.k` iterations and returns the iterate with the
/// highest objective on the evaluation seeds (earliest on ties).
pub fn run_inner_loop(
    synthesizer: &mut dyn Synthesizer,
    evaluator: &Evaluator,
    config: &PipelineConfig,
    objective: Objective,
) -> Result<InnerResult> {
    let map = evaluator.map();
    let it = &config.iteration;
    if it.k == 0 {
        return Err(Error::config("K must be >= 1"));
    }
    let budget = ValidationBudget::from_settings(it);
    let mut log: Vec<IterationRecord> = Vec::with_capacity(it.k);
    let mut history: Vec<EvalReport> = Vec::new();
    let mut previous: Option<Candidate> = None;
    let mut feedback: Option<FeedbackBundle> = None;
    let mut best: Option<(Candidate, usize, f64, EvalReport)> = None;

    for k in 0..it.k {
        let mut attempts = Vec::new();
        let mut error_text: Option<String> = None;
        let mut accepted: Option<Candidate> = None;
        let mut synth_error = None;
        for attempt in 0..=it.retries {
            let req = SynthesisRequest {
                prompt: &config.prompt,
                game: map.game,
                iteration: k,
                attempt,
                feedback: feedback.as_ref(),
                previous: previous.as_deref(),
                error: error_text.as_deref(),
                config,
                n_agents: map.n_agents,
            };
            let cand = match synthesizer.synthesize(&req) {
                Ok(c) => c,
                Err(e) => {
                    synth_error = Some(e.to_string());
                    error_text = Some(e.to_string());
                    continue;
                }
            };
            match validate_policy(cand.as_ref(), map, &budget) {
                Ok(()) => {
                    attempts.push(AttemptRecord { policy: cand.describe(), error: None });
                    accepted = Some(cand);
                    break;
                }
                Err(e) => {
                    error_text = Some(e.to_string());
                    attempts.push(AttemptRecord { policy: cand.describe(), error: Some(e) });
                }
            }
        }

        let Some(cand) = accepted else {
            log.push(IterationRecord {
                iteration: k,
                attempts,
                policy: None,
                score: None,
                report: None,
                feedback: None,
                synthesizer_error: synth_error,
            });
            continue;
        };

        let report = evaluator.evaluate(cand.as_ref(), &it.eval_seeds)?;
        let score = report.score(objective);
        history.push(report.clone());
        let fb = build_feedback(&cand.describe(), &history, objective, &config.feedback)?;
        if best.as_ref().is_none_or(|b| score > b.2) {
            best = Some((cand.clone(), k, score, report.clone()));
        }
        log.push(IterationRecord {
            iteration: k,
            attempts,
            policy: Some(cand.describe()),
            score: Some(score),
            report: Some(report),
            feedback: Some(fb.clone()),
            synthesizer_error: None,
        });
        feedback = Some(fb);
        previous = Some(cand);
    }

    match best {
        Some((best, best_iteration, best_score, best_report)) => Ok(InnerResult {
            best,
            best_iteration,
            best_score,
            best_report,
            log,
        }),
        None => {
            let last = log
                .iter()
                .rev()
                .find_map(|r| {
                    r.attempts
                        .last()
                        .and_then(|a| a.error.as_ref().map(|e| e.to_string()))
                        .or_else(|| r.synthesizer_error.clone())
                })
                .unwrap_or_else(|| "no candidates".into());
            Err(Error::InnerLoopFailed(format!(
                "{} iterations with {} retries each; last error: {last}",
                it.k, it.retries
            )))
        }
    }
}

#[derive(Serialize)]
struct ExternalRequest<'a> {
    prompt: &'a str,
    game: GameKind,
    iteration: usize,
    attempt: usize,
    n_agents: usize,
    thinking_budget: u32,
    feedback: Option<&'a FeedbackBundle>,
    previous: Option<String>,
    previous_policy: Option<&'a PolicyRef>,
    error: Option<&'a str>,
}

/// Delegates synthesis to a command: one JSON request line on stdin, one
/// policy reference (`{"name": ..., "params": {...}}`) on stdout.
#[derive(Debug, Clone)]
pub struct ExternalSynthesizer {
    pub command: ExternalCommand,
}

impl ExternalSynthesizer {
    pub fn new(command: ExternalCommand) -> Self {
        ExternalSynthesizer { command }
    }
}

impl Synthesizer for ExternalSynthesizer {
    fn synthesize(&mut self, req: &SynthesisRequest<'_>) -> Result<Candidate> {
        let request = ExternalRequest {
            prompt: req.prompt,
            game: req.game,
            iteration: req.iteration,
            attempt: req.attempt,
            n_agents: req.n_agents,
            thinking_budget: req.config.iteration.thinking_budget,
            feedback: req.feedback,
            previous: req.previous.map(|p| p.describe()),
            previous_policy: req.previous.and_then(|p| p.policy_ref()),
            error: req.error,
        };
        let mut line = serde_json::to_string(&request).expect("requests serialize");
        line.push('\n');
        let out = self
            .command
            .run(&line)
            .map_err(|e| Error::Synthesizer(e.to_string()))?;
        let reply = out
            .lines()
            .find(|l| !l.trim().is_empty())
            .ok_or_else(|| Error::Synthesizer("synthesizer wrote no policy".into()))?;
        let policy: PolicyRef = serde_json::from_str(reply)
            .map_err(|e| Error::Synthesizer(format!("unreadable policy reference: {e}")))?;
        Ok(Arc::new(policy))
    }
}
