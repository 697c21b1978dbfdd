use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use ssdlab::env::{CompiledMap, GameKind, MapConfig};
use ssdlab::eval::{EvalReport, Evaluator};
use ssdlab::external::ExternalCommand;
use ssdlab::inner::{run_inner_loop, ExternalSynthesizer, PipelineConfig, ScriptedSynthesizer, Synthesizer};
use ssdlab::metrics::{self, MetricsVector, Objective};
use ssdlab::outer::{
    load_history, run_outer_loop, sweep_grid, ExternalProposer, HillClimbProposer, OuterSettings, Proposer,
    SweepProposer,
};
use ssdlab::policy::PolicyRef;
use ssdlab::trajectory::Trajectory;
use ssdlab::{Error, Result};

/// Sequential social dilemma lab: evaluate policies, run the synthesis loops,
/// replay episodes.
#[derive(Debug, Parser)]
#[command(name = "ssdlab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Evaluate one policy in self-play over a seed list.
    Eval(EvalArgs),
    /// Run the inner synthesize/validate/evaluate loop once.
    Inner(InnerArgs),
    /// Run the outer configuration search.
    Search(SearchArgs),
    /// Record or re-run an episode as a line-delimited dump.
    Replay(ReplayArgs),
    /// Compute metrics for a returns vector, or print curves from a run history.
    Metrics(MetricsArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Table,
    Records,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ProposerKind {
    Hill,
    Sweep,
    External,
}

#[derive(Debug, Args)]
struct WorldArgs {
    /// Game to play; taken from the map file when --map is given.
    #[arg(long)]
    game: Option<GameKind>,
    /// Map file (TOML). Defaults to the built-in map for the game.
    #[arg(long)]
    map: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PolicyArgs {
    /// Registered policy name. Defaults to the game's reference policy.
    #[arg(long)]
    policy: Option<String>,
    /// Policy parameter override, repeatable: --param period=40
    #[arg(long = "param", value_name = "KEY=VALUE", value_parser = parse_key_value)]
    params: Vec<(String, String)>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    world: WorldArgs,
    #[command(flatten)]
    policy: PolicyArgs,
    /// Seeds as a list of numbers and ranges, e.g. 1-5,9
    #[arg(long, default_value = "1001-1012", value_parser = parse_seeds)]
    seeds: Seeds,
    #[arg(long, value_enum, default_value = "table")]
    format: Format,
}

#[derive(Debug, Args)]
struct InnerArgs {
    #[command(flatten)]
    world: WorldArgs,
    #[command(flatten)]
    policy: PolicyArgs,
    #[arg(long, default_value = "efficiency")]
    objective: Objective,
    /// Pipeline configuration file (TOML); flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Inner iterations.
    #[arg(long)]
    k: Option<usize>,
    /// Evaluation seeds.
    #[arg(long, value_parser = parse_seeds)]
    seeds: Option<Seeds>,
    /// Shell command acting as synthesizer (JSON request in, policy reference out).
    #[arg(long)]
    synth_cmd: Option<String>,
    /// Seed of the scripted synthesizer.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "table")]
    format: Format,
}

#[derive(Debug, Args)]
struct SearchArgs {
    #[command(flatten)]
    world: WorldArgs,
    #[command(flatten)]
    policy: PolicyArgs,
    #[arg(long, default_value = "efficiency")]
    objective: Objective,
    /// Baseline pipeline configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Outer iterations.
    #[arg(long, default_value_t = 20)]
    iters: usize,
    /// Keep threshold.
    #[arg(long, default_value_t = 0.0)]
    tau: f64,
    /// Inner iterations of the baseline.
    #[arg(long)]
    k: Option<usize>,
    /// Held-out seeds.
    #[arg(long, default_value = "1001-1012", value_parser = parse_seeds)]
    held_out: Seeds,
    #[arg(long, value_enum, default_value = "hill")]
    proposer: ProposerKind,
    /// Shell command for --proposer external.
    #[arg(long)]
    proposer_cmd: Option<String>,
    /// Shell command acting as synthesizer.
    #[arg(long)]
    synth_cmd: Option<String>,
    /// Seed of the scripted proposer and synthesizer.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Run directory. Defaults to a directory under $SSDLAB_RUNS (or ./runs).
    #[arg(long)]
    run_dir: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "table")]
    format: Format,
}

#[derive(Debug, Args)]
struct ReplayArgs {
    /// Saved dump to re-run.
    #[arg(long, conflicts_with_all = ["policy", "params", "game", "map"])]
    trajectory: Option<PathBuf>,
    #[command(flatten)]
    world: WorldArgs,
    #[command(flatten)]
    policy: PolicyArgs,
    /// Episode seed; with --trajectory, overrides the recorded seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Write the dump here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct MetricsArgs {
    /// Per-agent returns, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, conflicts_with = "history")]
    returns: Vec<f64>,
    /// Episode length used for efficiency.
    #[arg(long, default_value_t = 1000)]
    horizon: u32,
    /// history.jsonl of a search run; prints the per-iteration series.
    #[arg(long)]
    history: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "table")]
    format: Format,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Seeds(Vec<u64>);

fn parse_seeds(s: &str) -> std::result::Result<Seeds, String> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let a: u64 = a.trim().parse().map_err(|_| format!("bad seed range '{part}'"))?;
                let b: u64 = b.trim().parse().map_err(|_| format!("bad seed range '{part}'"))?;
                if a > b {
                    return Err(format!("empty seed range '{part}'"));
                }
                out.extend(a..=b);
            }
            None => out.push(part.parse().map_err(|_| format!("bad seed '{part}'"))?),
        }
    }
    if out.is_empty() {
        return Err("no seeds given".into());
    }
    Ok(Seeds(out))
}

fn parse_key_value(s: &str) -> std::result::Result<(String, String), String> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .filter(|(k, _)| !k.is_empty())
        .ok_or_else(|| format!("expected KEY=VALUE, got '{s}'"))
}

impl WorldArgs {
    fn map_config(&self) -> Result<MapConfig> {
        match &self.map {
            Some(path) => {
                let cfg = MapConfig::load(path)?;
                if let Some(g) = self.game {
                    if g != cfg.game {
                        return Err(Error::Config(format!(
                            "--game {g} does not match map '{}' ({})",
                            path.display(),
                            cfg.game
                        )));
                    }
                }
                Ok(cfg)
            }
            None => Ok(MapConfig::default_for(self.game.unwrap_or(GameKind::Cleanup))),
        }
    }

    fn compile(&self) -> Result<Arc<CompiledMap>> {
        self.map_config()?.compile()
    }
}

impl PolicyArgs {
    fn resolve(&self, game: GameKind, n_agents: usize) -> Result<Option<PolicyRef>> {
        let Some(name) = &self.policy else {
            if self.params.is_empty() {
                return Ok(None);
            }
            return Err(Error::InvalidArgument("--param needs --policy".into()));
        };
        let r = PolicyRef::from_name_params(name, &self.params)?;
        r.validate(game, n_agents)?;
        Ok(Some(r))
    }

    fn resolve_or_default(&self, game: GameKind, n_agents: usize) -> Result<PolicyRef> {
        Ok(self
            .resolve(game, n_agents)?
            .unwrap_or_else(|| PipelineConfig::default_for(game).policy))
    }
}

fn pipeline_config(path: Option<&Path>, game: GameKind) -> Result<PipelineConfig> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Io {
                path: p.to_path_buf(),
                source: e,
            })?;
            PipelineConfig::from_toml(&text).map_err(|e| match e {
                Error::Parse { line, message, .. } => Error::Parse {
                    source_name: p.display().to_string(),
                    line,
                    message,
                },
                other => other,
            })
        }
        None => Ok(PipelineConfig::default_for(game)),
    }
}

fn synthesizer(cmd: Option<&str>, seed: u64) -> Box<dyn Synthesizer> {
    match cmd {
        Some(c) => Box::new(ExternalSynthesizer::new(ExternalCommand::shell(c))),
        None => Box::new(ScriptedSynthesizer::new(seed)),
    }
}

fn metrics_record(m: &MetricsVector) -> serde_json::Value {
    serde_json::to_value(m).expect("metrics serialize")
}

fn metrics_row(m: &MetricsVector) -> String {
    format!(
        "U={:.3}  E={:.3}  S={:.1}  P={:.2}  maximin={:.1}",
        m.efficiency, m.equality, m.sustainability, m.peace, m.maximin
    )
}

fn render_report(policy: &PolicyRef, report: &EvalReport, format: Format) -> String {
    match format {
        Format::Records => {
            let mut s = String::new();
            for r in &report.per_seed {
                let line = json!({"record": "seed", "seed": r.seed, "returns": r.returns, "metrics": metrics_record(&r.metrics)});
                let _ = writeln!(s, "{line}");
            }
            let line = json!({
                "record": "aggregate",
                "game": report.game,
                "policy": policy,
                "seeds": report.seeds(),
                "mean_returns": report.mean_returns,
                "metrics": metrics_record(&report.metrics),
                "maximin": report.maximin,
            });
            let _ = writeln!(s, "{line}");
            s
        }
        Format::Table => {
            let mut s = String::new();
            let _ = writeln!(s, "game    {}", report.game);
            let _ = writeln!(s, "policy  {}", policy.to_json());
            let seeds = report.seeds();
            let _ = writeln!(s, "seeds   {} ({}..{})", seeds.len(), seeds[0], seeds[seeds.len() - 1]);
            let _ = writeln!(s);
            let _ = writeln!(s, "{:>6} {:>10}", "agent", "return");
            for (i, r) in report.mean_returns.iter().enumerate() {
                let _ = writeln!(s, "{i:>6} {r:>10.2}");
            }
            let _ = writeln!(s);
            let m = &report.metrics;
            let _ = writeln!(s, "{:<16}{:>10.4}", "efficiency U", m.efficiency);
            let _ = writeln!(s, "{:<16}{:>10.4}", "equality E", m.equality);
            let _ = writeln!(s, "{:<16}{:>10.2}", "sustainability S", m.sustainability);
            let _ = writeln!(s, "{:<16}{:>10.4}", "peace P", m.peace);
            let _ = writeln!(s, "{:<16}{:>10.2}", "maximin", report.maximin);
            s
        }
    }
}

fn cmd_eval(a: EvalArgs) -> Result<String> {
    let map = a.world.compile()?;
    let policy = a.policy.resolve_or_default(map.game, map.n_agents)?;
    let report = Evaluator::new(map).evaluate(&policy, &a.seeds.0)?;
    Ok(render_report(&policy, &report, a.format))
}

fn cmd_inner(a: InnerArgs) -> Result<String> {
    let map = a.world.compile()?;
    let mut config = pipeline_config(a.config.as_deref(), map.game)?;
    if let Some(p) = a.policy.resolve(map.game, map.n_agents)? {
        config.policy = p;
    }
    if let Some(k) = a.k {
        config.iteration.k = k;
    }
    if let Some(s) = a.seeds {
        config.iteration.eval_seeds = s.0;
    }
    let evaluator = Evaluator::new(map);
    let mut synth = synthesizer(a.synth_cmd.as_deref(), a.seed);
    let result = run_inner_loop(synth.as_mut(), &evaluator, &config, a.objective)?;
    let mut s = String::new();
    match a.format {
        Format::Records => {
            for r in &result.log {
                let line = json!({
                    "record": "iteration",
                    "iteration": r.iteration,
                    "score": r.score,
                    "metrics": r.report.as_ref().map(|x| metrics_record(&x.metrics)),
                    "policy": r.policy,
                    "attempts": r.attempts,
                    "diagnostics": r.feedback.as_ref().map(|f| f.diagnostics.clone()).unwrap_or_default(),
                });
                let _ = writeln!(s, "{line}");
            }
            let line = json!({
                "record": "best",
                "iteration": result.best_iteration,
                "score": result.best_score,
                "policy": result.best.describe(),
                "metrics": metrics_record(&result.best_report.metrics),
            });
            let _ = writeln!(s, "{line}");
        }
        Format::Table => {
            let _ = writeln!(s, "{:>4} {:>10}  metrics / policy", "iter", a.objective.name());
            for r in &result.log {
                match (&r.score, &r.report) {
                    (Some(score), Some(rep)) => {
                        let _ = writeln!(s, "{:>4} {:>10.3}  {}", r.iteration, score, metrics_row(&rep.metrics));
                        let _ = writeln!(s, "{:>16}{}", "", r.policy.as_deref().unwrap_or(""));
                    }
                    _ => {
                        let why = r
                            .attempts
                            .last()
                            .and_then(|x| x.error.as_ref().map(|e| e.to_string()))
                            .or_else(|| r.synthesizer_error.clone())
                            .unwrap_or_default();
                        let _ = writeln!(s, "{:>4} {:>10}  skipped: {why}", r.iteration, "-");
                    }
                }
            }
            let _ = writeln!(
                s,
                "best: iteration {} score {:.3}\n{}",
                result.best_iteration,
                result.best_score,
                result.best.describe()
            );
        }
    }
    Ok(s)
}

fn default_run_dir(a: &SearchArgs, game: GameKind) -> PathBuf {
    let root = std::env::var_os("SSDLAB_RUNS")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"));
    root.join(format!(
        "{game}-{}-{:?}-seed{}",
        a.objective.name(),
        a.proposer,
        a.seed
    )
    .to_lowercase())
}

fn cmd_search(a: SearchArgs) -> Result<String> {
    let map = a.world.compile()?;
    let (game, n) = (map.game, map.n_agents);
    let mut baseline = pipeline_config(a.config.as_deref(), game)?;
    if let Some(p) = a.policy.resolve(game, n)? {
        baseline.policy = p;
    }
    if let Some(k) = a.k {
        baseline.iteration.k = k;
    }
    let run_dir = a.run_dir.clone().unwrap_or_else(|| default_run_dir(&a, game));
    let mut iterations = a.iters;
    let mut proposer: Box<dyn Proposer> = match a.proposer {
        ProposerKind::Hill => Box::new(HillClimbProposer::new(a.seed)),
        ProposerKind::Sweep => {
            let mut grid = sweep_grid(&baseline, game, n, 48);
            grid.retain(|c| c != &baseline);
            iterations = iterations.min(grid.len());
            Box::new(SweepProposer::new(grid))
        }
        ProposerKind::External => {
            let cmd = a
                .proposer_cmd
                .as_deref()
                .ok_or_else(|| Error::InvalidArgument("--proposer external needs --proposer-cmd".into()))?;
            Box::new(ExternalProposer::new(ExternalCommand::shell(cmd), run_dir.join("proposer")))
        }
    };
    if a.proposer != ProposerKind::External && a.proposer_cmd.is_some() {
        return Err(Error::InvalidArgument("--proposer-cmd needs --proposer external".into()));
    }
    let settings = OuterSettings {
        iterations,
        tau: a.tau,
        held_out: a.held_out.0.clone(),
        run_dir: Some(run_dir.clone()),
    };
    let evaluator = Evaluator::new(map);
    let mut synth = synthesizer(a.synth_cmd.as_deref(), a.seed);
    let result = run_outer_loop(proposer.as_mut(), synth.as_mut(), &evaluator, a.objective, &baseline, &settings)?;

    let mut s = String::new();
    match a.format {
        Format::Records => {
            for h in &result.history {
                let _ = writeln!(s, "{}", curve_record(h.iteration, h.score, h.metrics.as_ref(), h.kept));
            }
            let line = json!({
                "record": "best",
                "score": result.best_score,
                "metrics": metrics_record(&result.best_metrics),
                "config": result.best_config,
                "policy": result.best_policy.describe(),
                "run_dir": run_dir,
            });
            let _ = writeln!(s, "{line}");
        }
        Format::Table => {
            s.push_str(&curve_header(a.objective.name()));
            for h in &result.history {
                s.push_str(&curve_row(h.iteration, h.score, h.metrics.as_ref(), h.kept));
                let note = h
                    .diff
                    .iter()
                    .map(|d| d.to_string())
                    .chain(h.note.clone().filter(|_| h.score.is_none()))
                    .collect::<Vec<_>>()
                    .join("; ");
                if !note.is_empty() {
                    let _ = writeln!(s, "      {note}");
                }
            }
            let _ = writeln!(s, "\nbest score {:.3}  {}", result.best_score, metrics_row(&result.best_metrics));
            let _ = writeln!(s, "best policy {}", result.best_policy.describe());
            let _ = writeln!(s, "run directory {}", run_dir.display());
        }
    }
    Ok(s)
}

fn curve_header(objective: &str) -> String {
    format!(
        "{:>4} {:>10} {:>8} {:>8} {:>10} {:>5}\n",
        "iter", format!("J:{objective}"), "U", "E", "maximin", "kept"
    )
}

fn curve_row(iteration: usize, score: Option<f64>, m: Option<&MetricsVector>, kept: bool) -> String {
    let f = |x: Option<f64>, p: usize| x.map(|v| format!("{v:.p$}")).unwrap_or_else(|| "-".into());
    format!(
        "{:>4} {:>10} {:>8} {:>8} {:>10} {:>5}\n",
        iteration,
        f(score, 3),
        f(m.map(|m| m.efficiency), 3),
        f(m.map(|m| m.equality), 3),
        f(m.map(|m| m.maximin), 1),
        if kept { "yes" } else { "no" }
    )
}

fn curve_record(iteration: usize, score: Option<f64>, m: Option<&MetricsVector>, kept: bool) -> serde_json::Value {
    json!({
        "record": "iteration",
        "iteration": iteration,
        "score": score,
        "metrics": m.map(metrics_record),
        "kept": kept,
    })
}

fn cmd_replay(a: ReplayArgs) -> Result<String> {
    let traj = match &a.trajectory {
        Some(path) => {
            let saved = Trajectory::load(path)?;
            let fresh = saved.replay(a.seed)?;
            if a.seed.is_none_or(|s| s == saved.header.seed) && fresh != saved {
                return Err(Error::InvalidArgument(format!(
                    "replay of '{}' diverges from the recorded episode",
                    path.display()
                )));
            }
            fresh
        }
        None => {
            let cfg = a.world.map_config()?;
            let policy = a.policy.resolve_or_default(cfg.game, cfg.agents)?;
            Trajectory::record(&cfg, &policy, a.seed.unwrap_or(0))?
        }
    };
    match &a.out {
        Some(path) => {
            traj.save(path)?;
            Ok(String::new())
        }
        None => Ok(traj.to_jsonl()),
    }
}

fn cmd_metrics(a: MetricsArgs) -> Result<String> {
    if let Some(path) = &a.history {
        let history = load_history(path)?;
        let mut s = String::new();
        if a.format == Format::Table {
            s.push_str(&curve_header("score"));
        }
        for h in &history {
            match a.format {
                Format::Table => s.push_str(&curve_row(h.iteration, h.score, h.metrics.as_ref(), h.kept)),
                Format::Records => {
                    let _ = writeln!(s, "{}", curve_record(h.iteration, h.score, h.metrics.as_ref(), h.kept));
                }
            }
        }
        return Ok(s);
    }
    if a.returns.is_empty() {
        return Err(Error::InvalidArgument("give --returns or --history".into()));
    }
    let u = metrics::efficiency(&a.returns, a.horizon)?;
    let e = metrics::equality(&a.returns)?;
    let mm = metrics::maximin(&a.returns)?;
    Ok(match a.format {
        Format::Records => format!("{}\n", json!({"efficiency": u, "equality": e, "maximin": mm})),
        Format::Table => format!(
            "{:<14}{:>12.4}\n{:<14}{:>12.4}\n{:<14}{:>12.2}\n",
            "efficiency U", u, "equality E", e, "maximin", mm
        ),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let out = match cli.command {
        Command::Eval(a) => cmd_eval(a),
        Command::Inner(a) => cmd_inner(a),
        Command::Search(a) => cmd_search(a),
        Command::Replay(a) => cmd_replay(a),
        Command::Metrics(a) => cmd_metrics(a),
    };
    match out {
        Ok(text) => {
            use std::io::Write;
            match std::io::stdout().lock().write_all(text.as_bytes()) {
                Ok(()) => ExitCode::SUCCESS,
                // A closed pipe downstream is not our failure.
                Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
                Err(e) => {
                    eprintln!("error: writing output: {e}");
                    ExitCode::FAILURE
                }
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

