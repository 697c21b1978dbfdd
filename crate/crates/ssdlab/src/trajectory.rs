//! Line-delimited episode dumps and replay.
//!
//! A dump is one JSON object per line: a `header` (map, seed, policy), one
//! `step` record per environment step, and a closing `summary`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::{Event, GameKind, GameState, MapConfig, World};
use crate::error::{Error, Result};
use crate::eval::run_episode_observed;
use crate::metrics::MetricsVector;
use crate::policy::{PolicyRef, PolicySource};

pub const TRAJECTORY_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub version: u32,
    pub game: GameKind,
    pub map: MapConfig,
    pub seed: u64,
    pub policy: PolicyRef,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u32,
    pub actions: Vec<u8>,
    pub rewards: Vec<i64>,
    pub events: Vec<Event>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub returns: Vec<f64>,
    pub metrics: MetricsVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)]
enum Line {
    Header(Header),
    Step(StepRecord),
    Summary(Summary),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub header: Header,
    pub steps: Vec<StepRecord>,
    pub summary: Summary,
}

impl Trajectory {
    /// Plays one self-play episode and records every step.
    pub fn record(map: &MapConfig, policy: &PolicyRef, seed: u64) -> Result<Trajectory> {
        let compiled = map.compile()?;
        policy.validate(compiled.game, compiled.n_agents)?;
        let mut p = policy.build(compiled.game)?;
        let mut steps = Vec::with_capacity(compiled.horizon as usize);
        let record = run_episode_observed(p.as_mut(), &compiled, seed, |t, codes, out| {
            steps.push(StepRecord {
                step: t,
                actions: codes.to_vec(),
                rewards: out.rewards.clone(),
                events: out.events.clone(),
            });
        })?;
        Ok(Trajectory {
            header: Header {
                version: TRAJECTORY_VERSION,
                game: compiled.game,
                map: map.clone(),
                seed,
                policy: policy.clone(),
            },
            steps,
            summary: Summary {
                metrics: record.metrics()?,
                returns: record.returns,
            },
        })
    }

    /// Re-runs the recorded policy, optionally on another seed.
    pub fn replay(&self, seed: Option<u64>) -> Result<Trajectory> {
        Trajectory::record(&self.header.map, &self.header.policy, seed.unwrap_or(self.header.seed))
    }

    /// Feeds the recorded actions back through a fresh environment and checks
    /// every reward and event. Returns the first mismatching step.
    pub fn verify_actions(&self) -> Result<()> {
        let map = self.header.map.compile()?;
        let mut state = GameState::reset(self.header.seed, &map);
        for rec in &self.steps {
            if state.step_count() != rec.step {
                return Err(Error::invalid(format!(
                    "step record {} out of sequence (environment at {})",
                    rec.step,
                    state.step_count()
                )));
            }
            let out = state.step_codes(&rec.actions)?;
            if out.rewards != rec.rewards || out.events != rec.events {
                return Err(Error::invalid(format!("replay diverges at step {}", rec.step)));
            }
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let mut push = |line: &Line| {
            out.push_str(&serde_json::to_string(line).expect("records serialize"));
            out.push('\n');
        };
        push(&Line::Header(self.header.clone()));
        for s in &self.steps {
            push(&Line::Step(s.clone()));
        }
        push(&Line::Summary(self.summary.clone()));
        out
    }

    pub fn parse(text: &str, source_name: &str) -> Result<Trajectory> {
        let parse_err = |line: usize, message: String| Error::Parse {
            source_name: source_name.to_string(),
            line,
            message,
        };
        let mut header = None;
        let mut steps = Vec::new();
        let mut summary = None;
        let mut last_line = 0;
        for (i, raw) in text.lines().enumerate() {
            let n = i + 1;
            last_line = n;
            if raw.trim().is_empty() {
                continue;
            }
            let line: Line = serde_json::from_str(raw).map_err(|e| parse_err(n, format!("column {}: {e}", e.column())))?;
            match (line, &header, &summary) {
                (_, _, Some(_)) => return Err(parse_err(n, "record after summary".into())),
                (Line::Header(h), None, _) => {
                    if h.version != TRAJECTORY_VERSION {
                        return Err(parse_err(n, format!("unsupported trajectory version {}", h.version)));
                    }
                    header = Some(h)
                }
                (Line::Header(_), Some(_), _) => return Err(parse_err(n, "duplicate header".into())),
                (_, None, _) => return Err(parse_err(n, "expected header first".into())),
                (Line::Step(s), Some(_), _) => {
                    if s.step as usize != steps.len() {
                        return Err(parse_err(n, format!("expected step {}, found {}", steps.len(), s.step)));
                    }
                    steps.push(s)
                }
                (Line::Summary(s), Some(_), _) => summary = Some(s),
            }
        }
        let header = header.ok_or_else(|| parse_err(last_line.max(1), "missing header".into()))?;
        let summary = summary.ok_or_else(|| parse_err(last_line.max(1), "missing summary".into()))?;
        Ok(Trajectory { header, steps, summary })
    }

    pub fn load(path: &Path) -> Result<Trajectory> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Trajectory::parse(&text, &path.display().to_string())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::Family;

    fn small() -> Trajectory {
        let mut map = MapConfig::default_for(GameKind::Gathering);
        map.horizon = 40;
        Trajectory::record(&map, &Family::VoronoiSpatiotemporal.default_ref(), 7).unwrap()
    }

    #[test]
    fn round_trips_through_text() {
        let t = small();
        let text = t.to_jsonl();
        let back = Trajectory::parse(&text, "mem").unwrap();
        assert_eq!(back, t);
        assert_eq!(back.to_jsonl(), text);
        assert_eq!(t.steps.len(), 40);
    }

    #[test]
    fn replay_is_identical_and_actions_verify() {
        let t = small();
        assert_eq!(t.replay(None).unwrap().to_jsonl(), t.to_jsonl());
        t.verify_actions().unwrap();
    }

    #[test]
    fn corrupt_line_reports_position() {
        let text = small().to_jsonl();
        let mut lines: Vec<&str> = text.lines().collect();
        lines[3] = "{\"kind\":\"step\",\"step\":";
        let err = Trajectory::parse(&lines.join("\n"), "t.jsonl").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 4, .. }), "{err}");
    }

    #[test]
    fn tampered_rewards_fail_verification() {
        let mut t = small();
        t.steps[5].rewards[0] += 1;
        assert!(t.verify_actions().is_err());
    }
}
