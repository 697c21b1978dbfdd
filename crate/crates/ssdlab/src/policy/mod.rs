//! Policies: the helper library, the registered reference families and the
//! registry that addresses them by name and parameters.

mod cleanup;
mod gathering;
pub mod helpers;
mod params;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use cleanup::{RotationInterleaved, StaticThreshold, SyncThreshold, TwoCleanerRotation};
pub use gathering::VoronoiSpatiotemporal;
pub use params::{
    KnobKind, KnobSpec, RotationParams, StaticThresholdParams, SyncParams, TwoCleanerParams,
    VoronoiParams,
};

use crate::env::{GameKind, GameState};
use crate::error::{Error, Result};
use crate::grid::Action;

/// A decision rule shared by every agent in self-play.
///
/// `act` returns a raw action code so that validation can observe codes the
/// game would reject. Policies may keep per-episode memory; `reset` is called
/// before every episode.
pub trait Policy: Send {
    fn act(&mut self, state: &GameState, agent: usize) -> u8;

    fn reset(&mut self) {}
}

/// Anything the inner loop can turn into a policy: a registered reference or
/// a custom implementation, optionally carrying source text for screening.
pub trait PolicySource: fmt::Debug + Send + Sync {
    /// Text shown back to the synthesizer as the current policy.
    fn describe(&self) -> String;

    fn source_text(&self) -> Option<&str> {
        None
    }

    fn build(&self, game: GameKind) -> Result<Box<dyn Policy>>;

    fn policy_ref(&self) -> Option<&PolicyRef> {
        None
    }
}

/// Registered families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Family {
    StaticThreshold,
    RotationInterleaved,
    TwoCleanerRotation,
    SyncThreshold,
    VoronoiSpatiotemporal,
    Stand,
}

impl Family {
    pub const ALL: [Family; 6] = [
        Family::StaticThreshold,
        Family::RotationInterleaved,
        Family::TwoCleanerRotation,
        Family::SyncThreshold,
        Family::VoronoiSpatiotemporal,
        Family::Stand,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::StaticThreshold => "cleanup-static-threshold",
            Family::RotationInterleaved => "cleanup-rotation-interleaved",
            Family::TwoCleanerRotation => "cleanup-two-cleaner-rotation",
            Family::SyncThreshold => "cleanup-sync-threshold",
            Family::VoronoiSpatiotemporal => "gathering-voronoi-spatiotemporal",
            Family::Stand => "stand",
        }
    }

    /// The game this family is written for; `None` for game-agnostic ones.
    pub fn game(self) -> Option<GameKind> {
        match self {
            Family::StaticThreshold
            | Family::RotationInterleaved
            | Family::TwoCleanerRotation
            | Family::SyncThreshold => Some(GameKind::Cleanup),
            Family::VoronoiSpatiotemporal => Some(GameKind::Gathering),
            Family::Stand => None,
        }
    }

    pub fn default_ref(self) -> PolicyRef {
        match self {
            Family::StaticThreshold => PolicyRef::CleanupStaticThreshold(Default::default()),
            Family::RotationInterleaved => PolicyRef::CleanupRotationInterleaved(Default::default()),
            Family::TwoCleanerRotation => PolicyRef::CleanupTwoCleanerRotation(Default::default()),
            Family::SyncThreshold => PolicyRef::CleanupSyncThreshold(Default::default()),
            Family::VoronoiSpatiotemporal => {
                PolicyRef::GatheringVoronoiSpatiotemporal(Default::default())
            }
            Family::Stand => PolicyRef::Stand,
        }
    }

    /// Families a configuration search may switch between for `game`.
    pub fn searchable(game: GameKind) -> Vec<Family> {
        Family::ALL
            .into_iter()
            .filter(|f| f.game() == Some(game))
            .collect()
    }

    /// Families whose role assignment shares cleaning duty over time.
    pub fn is_fairness_mechanism(self) -> bool {
        matches!(
            self,
            Family::RotationInterleaved | Family::TwoCleanerRotation | Family::SyncThreshold
        )
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Family> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::config(format!("unknown policy '{s}'; {}", registry_listing())))
    }
}

/// One line naming every registered family.
pub fn registry_listing() -> String {
    let names: Vec<&str> = Family::ALL.iter().map(|f| f.name()).collect();
    format!("registered policies: {}", names.join(", "))
}

/// A registered policy addressed by name and parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", content = "params", rename_all = "kebab-case")]
pub enum PolicyRef {
    CleanupStaticThreshold(StaticThresholdParams),
    CleanupRotationInterleaved(RotationParams),
    CleanupTwoCleanerRotation(TwoCleanerParams),
    CleanupSyncThreshold(SyncParams),
    GatheringVoronoiSpatiotemporal(VoronoiParams),
    Stand,
}

impl PolicyRef {
    pub fn family(&self) -> Family {
        match self {
            PolicyRef::CleanupStaticThreshold(_) => Family::StaticThreshold,
            PolicyRef::CleanupRotationInterleaved(_) => Family::RotationInterleaved,
            PolicyRef::CleanupTwoCleanerRotation(_) => Family::TwoCleanerRotation,
            PolicyRef::CleanupSyncThreshold(_) => Family::SyncThreshold,
            PolicyRef::GatheringVoronoiSpatiotemporal(_) => Family::VoronoiSpatiotemporal,
            PolicyRef::Stand => Family::Stand,
        }
    }

    pub fn name(&self) -> &'static str {
        self.family().name()
    }

    /// Builds a reference from a family name and `key=value` overrides. Values
    /// are read as JSON when they parse, else as strings.
    pub fn from_name_params(name: &str, params: &[(String, String)]) -> Result<PolicyRef> {
        let family: Family = name.parse()?;
        let mut obj = match serde_json::to_value(family.default_ref()) {
            Ok(serde_json::Value::Object(m)) => m,
            _ => unreachable!("policy refs serialize to objects"),
        };
        if !params.is_empty() {
            let p = obj
                .entry("params")
                .or_insert_with(|| serde_json::Value::Object(Default::default()));
            let Some(p) = p.as_object_mut() else {
                return Err(Error::config(format!("policy '{name}' takes no parameters")));
            };
            for (k, v) in params {
                let value = serde_json::from_str(v).unwrap_or_else(|_| serde_json::Value::String(v.clone()));
                p.insert(k.clone(), value);
            }
        }
        serde_json::from_value(serde_json::Value::Object(obj))
            .map_err(|e| Error::config(format!("policy '{name}': {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("policy refs serialize")
    }

    /// Checks the family matches `game` and every parameter is within bounds
    /// for a game with `n_agents` agents.
    pub fn validate(&self, game: GameKind, n_agents: usize) -> Result<()> {
        if let Some(g) = self.family().game() {
            if g != game {
                return Err(Error::config(format!(
                    "policy '{}' is written for {g}, not {game}",
                    self.name()
                )));
            }
        }
        match self {
            PolicyRef::CleanupStaticThreshold(p) => p.validate(n_agents),
            PolicyRef::CleanupRotationInterleaved(p) => p.validate(n_agents),
            PolicyRef::CleanupTwoCleanerRotation(p) => p.validate(n_agents),
            PolicyRef::CleanupSyncThreshold(p) => p.validate(),
            PolicyRef::GatheringVoronoiSpatiotemporal(p) => p.validate(),
            PolicyRef::Stand => Ok(()),
        }
        .map_err(|e| match e {
            Error::Config(m) => Error::config(format!("{}: {m}", self.name())),
            other => other,
        })
    }

    /// Tunable parameters exposed to configuration search.
    pub fn knobs(&self, n_agents: usize) -> Vec<KnobSpec> {
        match self {
            PolicyRef::CleanupStaticThreshold(p) => p.knobs(n_agents),
            PolicyRef::CleanupRotationInterleaved(p) => p.knobs(n_agents),
            PolicyRef::CleanupTwoCleanerRotation(p) => p.knobs(n_agents),
            PolicyRef::CleanupSyncThreshold(p) => p.knobs(),
            PolicyRef::GatheringVoronoiSpatiotemporal(p) => p.knobs(),
            PolicyRef::Stand => Vec::new(),
        }
    }

    /// Returns a copy with one knob set. The value is clamped to the knob's
    /// range; unknown knobs for this family are an error.
    pub fn with_knob(&self, kind: KnobKind, value: f64, n_agents: usize) -> Result<PolicyRef> {
        let spec = self
            .knobs(n_agents)
            .into_iter()
            .find(|k| k.kind == kind)
            .ok_or_else(|| Error::invalid(format!("{} has no {kind} knob", self.name())))?;
        let v = spec.clamp(value);
        let mut out = self.clone();
        match &mut out {
            PolicyRef::CleanupStaticThreshold(p) => p.set(kind, v),
            PolicyRef::CleanupRotationInterleaved(p) => p.set(kind, v, n_agents),
            PolicyRef::CleanupTwoCleanerRotation(p) => p.set(kind, v),
            PolicyRef::CleanupSyncThreshold(p) => p.set(kind, v),
            PolicyRef::GatheringVoronoiSpatiotemporal(p) => p.set(kind, v),
            PolicyRef::Stand => {}
        }
        Ok(out)
    }

    pub fn instantiate(&self, game: GameKind) -> Result<Box<dyn Policy>> {
        if let Some(g) = self.family().game() {
            if g != game {
                return Err(Error::config(format!(
                    "policy '{}' is written for {g}, not {game}",
                    self.name()
                )));
            }
        }
        Ok(match self {
            PolicyRef::CleanupStaticThreshold(p) => Box::new(StaticThreshold::new(p.clone())),
            PolicyRef::CleanupRotationInterleaved(p) => Box::new(RotationInterleaved::new(p.clone())),
            PolicyRef::CleanupTwoCleanerRotation(p) => Box::new(TwoCleanerRotation::new(p.clone())),
            PolicyRef::CleanupSyncThreshold(p) => Box::new(SyncThreshold::new(p.clone())),
            PolicyRef::GatheringVoronoiSpatiotemporal(p) => {
                Box::new(VoronoiSpatiotemporal::new(p.clone()))
            }
            PolicyRef::Stand => Box::new(StandPolicy),
        })
    }
}

impl fmt::Display for PolicyRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_json())
    }
}

impl PolicySource for PolicyRef {
    fn describe(&self) -> String {
        self.to_json()
    }

    fn build(&self, game: GameKind) -> Result<Box<dyn Policy>> {
        self.instantiate(game)
    }

    fn policy_ref(&self) -> Option<&PolicyRef> {
        Some(self)
    }
}

/// Always stands still.
#[derive(Debug, Clone, Copy, Default)]
pub struct StandPolicy;

impl Policy for StandPolicy {
    fn act(&mut self, _state: &GameState, _agent: usize) -> u8 {
        Action::Stand.code()
    }
}
