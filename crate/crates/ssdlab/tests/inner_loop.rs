use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use ssdlab::env::{CompiledMap, GameKind, GameState, MapConfig};
use ssdlab::eval::{EvalReport, Evaluator, SeedResult};
use ssdlab::external::ExternalCommand;
use ssdlab::inner::{
    build_feedback, run_inner_loop, validate_policy, Candidate, ExternalSynthesizer, FeedbackSettings,
    PipelineConfig, ScriptedSynthesizer, SynthesisRequest, Synthesizer, ValidationBudget, ValidationError,
};
use ssdlab::metrics::{MetricsVector, Objective};
use ssdlab::policy::{Family, Policy, PolicyRef, PolicySource};
use ssdlab::{Error, Result};

fn cleanup(horizon: u32) -> Arc<CompiledMap> {
    let mut cfg = MapConfig::default_for(GameKind::Cleanup);
    cfg.horizon = horizon;
    cfg.compile().unwrap()
}

/// A hand-written candidate whose behaviour is a closure over the step.
#[derive(Debug, Clone)]
struct Custom {
    kind: Kind,
    source: Option<String>,
}

#[derive(Debug, Clone, Copy)]
enum Kind {
    Code(u8),
    Sleepy(u64),
    Drifting,
}

static DRIFT: AtomicU64 = AtomicU64::new(0);

struct CustomPolicy(Kind);

impl Policy for CustomPolicy {
    fn act(&mut self, _state: &GameState, _agent: usize) -> u8 {
        match self.0 {
            Kind::Code(c) => c,
            Kind::Sleepy(ms) => {
                std::thread::sleep(Duration::from_millis(ms));
                7
            }
            Kind::Drifting => (DRIFT.fetch_add(1, Ordering::Relaxed) % 8) as u8,
        }
    }
}

impl PolicySource for Custom {
    fn describe(&self) -> String {
        format!("custom {:?}", self.kind)
    }

    fn source_text(&self) -> Option<&str> {
        self.source.as_deref()
    }

    fn build(&self, _game: GameKind) -> Result<Box<dyn Policy>> {
        Ok(Box::new(CustomPolicy(self.kind)))
    }
}

fn custom(kind: Kind) -> Custom {
    Custom { kind, source: None }
}

#[test]
fn reference_policies_validate() {
    for family in Family::ALL {
        let game = family.game().unwrap_or(GameKind::Cleanup);
        let map = MapConfig::default_for(game).compile().unwrap();
        validate_policy(&family.default_ref(), &map, &ValidationBudget::default()).unwrap();
    }
}

#[test]
fn out_of_range_action_is_reported() {
    let err = validate_policy(&custom(Kind::Code(42)), &cleanup(100), &ValidationBudget::default()).unwrap_err();
    assert_eq!(
        err,
        ValidationError::InvalidAction {
            step: 0,
            agent: 0,
            code: 42,
            n_actions: 9
        }
    );
}

#[test]
fn slow_policy_is_over_budget() {
    let budget = ValidationBudget {
        step_budget: Duration::from_millis(20),
        ..Default::default()
    };
    // 10 agents x 5 ms = 50 ms per step.
    let err = validate_policy(&custom(Kind::Sleepy(5)), &cleanup(100), &budget).unwrap_err();
    assert!(matches!(err, ValidationError::OverBudget { step: 0, budget_ms: 20, .. }), "{err}");
    // The same policy passes with a generous budget.
    let roomy = ValidationBudget {
        steps: 2,
        step_budget: Duration::from_secs(5),
        ..Default::default()
    };
    validate_policy(&custom(Kind::Sleepy(1)), &cleanup(100), &roomy).unwrap();
}

#[test]
fn hidden_state_across_runs_is_nondeterministic() {
    let err = validate_policy(&custom(Kind::Drifting), &cleanup(100), &ValidationBudget::default()).unwrap_err();
    assert!(matches!(err, ValidationError::Nondeterministic { .. }), "{err}");
}

#[test]
fn denylisted_source_is_refused() {
    let c = Custom {
        kind: Kind::Code(7),
        source: Some("import os\nos.system('x')".into()),
    };
    let err = validate_policy(&c, &cleanup(100), &ValidationBudget::default()).unwrap_err();
    assert_eq!(err, ValidationError::Denied { token: "import os".into() });
}

#[test]
fn evaluation_is_deterministic_and_order_free() {
    let map = cleanup(300);
    let r = Family::TwoCleanerRotation.default_ref();
    let fwd = Evaluator::new(map.clone()).evaluate(&r, &[3, 1, 2]).unwrap();
    let again = Evaluator::new(map.clone()).evaluate(&r, &[3, 1, 2]).unwrap();
    let rev = Evaluator::new(map).evaluate(&r, &[2, 1, 3]).unwrap();
    assert_eq!(fwd, again);
    assert_eq!(fwd, rev);
    assert_eq!(fwd.seeds(), vec![1, 2, 3]);
    // Aggregates are recomputable from the per-seed data.
    let rebuilt = EvalReport::from_seeds(fwd.game, fwd.horizon, fwd.per_seed.clone()).unwrap();
    assert_eq!(rebuilt, fwd);
}

#[test]
fn rotation_policy_is_fair_on_cleanup() {
    let map = MapConfig::default_for(GameKind::Cleanup).compile().unwrap();
    let seeds: Vec<u64> = (1..=12).collect();
    let r = Evaluator::new(map).evaluate(&Family::RotationInterleaved.default_ref(), &seeds).unwrap();
    assert!(r.metrics.equality > 0.9, "E = {}", r.metrics.equality);
}

fn synthetic(returns: &[f64], horizon: u32) -> EvalReport {
    let total: f64 = returns.iter().sum();
    let m = MetricsVector {
        efficiency: total / horizon as f64,
        equality: ssdlab::metrics::equality(returns).unwrap(),
        sustainability: 500.0,
        peace: returns.len() as f64,
        maximin: ssdlab::metrics::maximin(returns).unwrap(),
    };
    EvalReport::from_seeds(
        GameKind::Cleanup,
        horizon,
        vec![SeedResult {
            seed: 1,
            returns: returns.to_vec(),
            metrics: m,
        }],
    )
    .unwrap()
}

#[test]
fn feedback_thresholds() {
    let s = FeedbackSettings::default();
    let fb = |r: &[f64]| build_feedback("p", &[synthetic(r, 1000)], Objective::Maximin, &s).unwrap();

    // maximin -50, mean 100
    let alert = fb(&[-50.0, 250.0]);
    assert_eq!(alert.diagnostics.len(), 1);
    assert!(alert.diagnostics[0].starts_with("**FAIRNESS ALERT**: maximin=-50.0 is NEGATIVE"));

    // maximin 40, mean 100
    let warn = fb(&[40.0, 160.0]);
    assert_eq!(warn.diagnostics.len(), 1);
    assert!(warn.diagnostics[0].starts_with("**FAIRNESS WARNING**: maximin=40.0 is much lower than average=100.0"));

    // U = 2.6 with equal returns
    let guard = fb(&[1300.0, 1300.0]);
    assert_eq!(guard.diagnostics.len(), 1);
    assert!(guard.diagnostics[0].starts_with("**CRITICAL -- DO NOT REGRESS**"));
    assert!(guard.has_regress_guard());

    assert!(fb(&[100.0, 100.0]).diagnostics.is_empty());
    assert!(build_feedback("p", &[], Objective::Maximin, &s).is_err());
    // Pure in its inputs.
    assert_eq!(fb(&[-50.0, 250.0]), alert);
    assert!(alert.render().contains("Equality E"));
}

#[derive(Debug)]
struct Fixed(Candidate);

impl Synthesizer for Fixed {
    fn synthesize(&mut self, _req: &SynthesisRequest<'_>) -> Result<Candidate> {
        Ok(self.0.clone())
    }
}

#[test]
fn single_iteration_returns_the_synthesized_policy() {
    let map = cleanup(200);
    let mut config = PipelineConfig::default_for(GameKind::Cleanup);
    config.iteration.k = 1;
    config.iteration.eval_seeds = vec![1, 2];
    let policy: Candidate = Arc::new(Family::SyncThreshold.default_ref());
    let out = run_inner_loop(&mut Fixed(policy.clone()), &Evaluator::new(map), &config, Objective::Efficiency).unwrap();
    assert_eq!(out.log.len(), 1);
    assert_eq!(out.best.describe(), policy.describe());
    assert_eq!(out.best_iteration, 0);
}

#[test]
fn best_of_k_maximizes_the_objective() {
    let map = cleanup(300);
    let mut config = PipelineConfig::default_for(GameKind::Cleanup);
    config.policy = Family::RotationInterleaved.default_ref();
    config.iteration.k = 3;
    config.iteration.eval_seeds = vec![1, 2, 3];
    for objective in [Objective::Efficiency, Objective::Maximin] {
        for seed in 0..3 {
            let ev = Evaluator::new(map.clone());
            let out = run_inner_loop(&mut ScriptedSynthesizer::new(seed), &ev, &config, objective).unwrap();
            assert_eq!(out.log.len(), 3);
            let scores: Vec<f64> = out.log.iter().map(|r| r.score.unwrap()).collect();
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(out.best_score, max);
            assert_eq!(scores[out.best_iteration], max);
            assert!(scores[..out.best_iteration].iter().all(|s| *s < max), "earliest maximum wins");
            // Independent re-evaluation of the chosen policy agrees.
            let again = Evaluator::new(map.clone()).evaluate(out.best.as_ref(), &config.iteration.eval_seeds).unwrap();
            assert_eq!(again.score(objective), max);
        }
    }
}

#[test]
fn invalid_candidates_exhaust_retries() {
    let map = cleanup(100);
    let mut config = PipelineConfig::default_for(GameKind::Cleanup);
    config.iteration.k = 2;
    config.iteration.retries = 2;
    let bad: Candidate = Arc::new(custom(Kind::Code(42)));
    let err = run_inner_loop(&mut Fixed(bad), &Evaluator::new(map), &config, Objective::Efficiency).unwrap_err();
    assert!(matches!(err, Error::InnerLoopFailed(_)), "{err}");
}

/// Fails validation until it is shown an error, then recovers.
#[derive(Debug, Default)]
struct LearnsFromErrors {
    seen: Vec<Option<String>>,
}

impl Synthesizer for LearnsFromErrors {
    fn synthesize(&mut self, req: &SynthesisRequest<'_>) -> Result<Candidate> {
        self.seen.push(req.error.map(String::from));
        Ok(match req.error {
            None => Arc::new(custom(Kind::Code(42))),
            Some(_) => Arc::new(Family::StaticThreshold.default_ref()),
        })
    }
}

#[test]
fn validation_errors_are_fed_back() {
    let map = cleanup(100);
    let mut config = PipelineConfig::default_for(GameKind::Cleanup);
    config.iteration.k = 1;
    config.iteration.eval_seeds = vec![1];
    let mut synth = LearnsFromErrors::default();
    let out = run_inner_loop(&mut synth, &Evaluator::new(map), &config, Objective::Efficiency).unwrap();
    assert_eq!(synth.seen.len(), 2);
    assert!(synth.seen[1].as_deref().unwrap().contains("action 42"));
    assert_eq!(out.log[0].attempts.len(), 2);
    assert!(out.log[0].attempts[0].error.is_some());
}

#[test]
fn external_synthesizer_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let req_file = dir.path().join("request.json");
    let script = format!(
        "cat > '{}'; echo '{{\"name\":\"cleanup-rotation-interleaved\",\"params\":{{\"period\":30}}}}'",
        req_file.display()
    );
    let map = cleanup(100);
    let mut config = PipelineConfig::default_for(GameKind::Cleanup);
    config.iteration.k = 1;
    config.iteration.eval_seeds = vec![1];
    let mut synth = ExternalSynthesizer::new(ExternalCommand::shell(script));
    let out = run_inner_loop(&mut synth, &Evaluator::new(map), &config, Objective::Efficiency).unwrap();
    let expected = PolicyRef::from_name_params("cleanup-rotation-interleaved", &[("period".into(), "30".into())]).unwrap();
    assert_eq!(out.best.policy_ref(), Some(&expected));
    let request: serde_json::Value =
        serde_json::from_str(std::fs::read_to_string(&req_file).unwrap().trim()).unwrap();
    assert_eq!(request["game"], "cleanup");
    assert_eq!(request["thinking_budget"], 16000);

    let mut broken = ExternalSynthesizer::new(ExternalCommand::shell("echo not-json"));
    let err = run_inner_loop(&mut broken, &Evaluator::new(cleanup(100)), &config, Objective::Efficiency).unwrap_err();
    assert!(matches!(err, Error::InnerLoopFailed(_)), "{err}");
}

#[test]
fn pipeline_config_toml_round_trip() {
    for game in [GameKind::Cleanup, GameKind::Gathering] {
        let c = PipelineConfig::default_for(game);
        assert_eq!(PipelineConfig::from_toml(&c.to_toml()).unwrap(), c);
    }
    let err = PipelineConfig::from_toml("[policy]\nname = \"cleanup-static-threshold\"\nbogus = 1\n").unwrap_err();
    assert!(matches!(err, Error::Parse { .. }), "{err}");
}
