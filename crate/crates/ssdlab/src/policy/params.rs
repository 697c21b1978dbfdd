use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parameter dimensions a configuration search may move along.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KnobKind {
    Period,
    Cleaners,
    Zones,
    Threshold,
}

impl KnobKind {
    pub const ALL: [KnobKind; 4] = [
        KnobKind::Period,
        KnobKind::Cleaners,
        KnobKind::Zones,
        KnobKind::Threshold,
    ];

    pub fn name(self) -> &'static str {
        match self {
            KnobKind::Period => "period",
            KnobKind::Cleaners => "cleaners",
            KnobKind::Zones => "zones",
            KnobKind::Threshold => "threshold",
        }
    }
}

impl fmt::Display for KnobKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Current value and admissible range of one knob.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KnobSpec {
    pub kind: KnobKind,
    pub value: f64,
    pub min: f64,
    pub max: f64,
    /// Mutation step; integer knobs use whole steps.
    pub step: f64,
    pub integer: bool,
}

impl KnobSpec {
    fn int(kind: KnobKind, value: usize, min: usize, max: usize, step: usize) -> Self {
        KnobSpec {
            kind,
            value: value as f64,
            min: min as f64,
            max: max as f64,
            step: step as f64,
            integer: true,
        }
    }

    fn real(kind: KnobKind, value: f64, min: f64, max: f64, step: f64) -> Self {
        KnobSpec {
            kind,
            value,
            min,
            max,
            step,
            integer: false,
        }
    }

    pub fn clamp(&self, v: f64) -> f64 {
        let v = v.clamp(self.min, self.max);
        if self.integer {
            v.round()
        } else {
            round4(v)
        }
    }

    /// Values one step either side, clamped, excluding the current value.
    pub fn neighbors(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for v in [self.value - self.step, self.value + self.step] {
            let c = self.clamp(v);
            if c != self.value && !out.contains(&c) {
                out.push(c);
            }
        }
        out
    }
}

fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::config(msg()))
    }
}

/// Permanent low-index cleaners whose number follows a waste ladder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StaticThresholdParams {
    /// Waste fractions above which the cleaner share steps up, highest first.
    pub thresholds: [f64; 4],
    /// Cleaner share for the tiers below the top one (the top tier is everyone).
    pub fractions: [f64; 4],
    pub min_cleaners: usize,
    /// Extra cost per same-role agent closer to a target.
    pub crowd_penalty: f64,
}

impl Default for StaticThresholdParams {
    fn default() -> Self {
        StaticThresholdParams {
            thresholds: [0.35, 0.25, 0.15, 0.05],
            fractions: [0.7, 0.5, 0.3, 0.2],
            min_cleaners: 1,
            crowd_penalty: 50.0,
        }
    }
}

impl StaticThresholdParams {
    pub(crate) fn validate(&self, n: usize) -> Result<()> {
        let t = &self.thresholds;
        check(t.iter().all(|x| (0.0..=1.0).contains(x)), || {
            format!("thresholds {t:?} outside [0, 1]")
        })?;
        check(t.windows(2).all(|w| w[0] > w[1]), || {
            format!("thresholds {t:?} must be strictly decreasing")
        })?;
        check(self.fractions.iter().all(|x| (0.0..=1.0).contains(x)), || {
            format!("fractions {:?} outside [0, 1]", self.fractions)
        })?;
        check(self.min_cleaners <= n, || {
            format!("min_cleaners {} exceeds {n} agents", self.min_cleaners)
        })?;
        check(self.crowd_penalty >= 0.0, || "crowd_penalty must be >= 0".into())
    }

    /// Cleaner count for waste fraction `wf` among `n` agents.
    pub fn cleaner_count(&self, wf: f64, n: usize) -> usize {
        let t = &self.thresholds;
        let share = |f: f64| (n as f64 * f) as usize;
        if wf > t[0] {
            n
        } else if wf > t[1] {
            share(self.fractions[0])
        } else if wf > t[2] {
            share(self.fractions[1])
        } else if wf > t[3] {
            share(self.fractions[2])
        } else {
            share(self.fractions[3]).max(self.min_cleaners)
        }
        .min(n)
    }

    pub(crate) fn knobs(&self, n: usize) -> Vec<KnobSpec> {
        vec![
            KnobSpec::int(KnobKind::Cleaners, self.min_cleaners, 0, n, 1),
            KnobSpec::real(KnobKind::Threshold, self.thresholds[3], 0.0, 0.3, 0.05),
        ]
    }

    /// The threshold knob moves the whole ladder, keeping its spacing.
    pub(crate) fn set(&mut self, kind: KnobKind, v: f64) {
        match kind {
            KnobKind::Cleaners => self.min_cleaners = v as usize,
            KnobKind::Threshold => {
                let delta = v - self.thresholds[3];
                for t in &mut self.thresholds {
                    *t = round4(*t + delta);
                }
            }
            _ => {}
        }
    }
}

/// Time-rotated roles; role indices in `cleaner_slots` clean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RotationParams {
    pub period: u32,
    pub cleaner_slots: Vec<usize>,
}

impl Default for RotationParams {
    fn default() -> Self {
        RotationParams {
            period: 50,
            cleaner_slots: vec![1, 4, 8],
        }
    }
}

impl RotationParams {
    pub(crate) fn validate(&self, n: usize) -> Result<()> {
        check(self.period >= 1, || "rotation period must be >= 1".into())?;
        check(self.cleaner_slots.len() <= n, || {
            format!("{} cleaners exceed {n} agents", self.cleaner_slots.len())
        })?;
        for (i, &s) in self.cleaner_slots.iter().enumerate() {
            check(s < n, || format!("cleaner slot {s} outside [0, {n})"))?;
            check(!self.cleaner_slots[..i].contains(&s), || {
                format!("cleaner slot {s} repeated")
            })?;
        }
        Ok(())
    }

    pub(crate) fn knobs(&self, n: usize) -> Vec<KnobSpec> {
        vec![
            KnobSpec::int(KnobKind::Period, self.period as usize, 1, 500, 10),
            KnobSpec::int(KnobKind::Cleaners, self.cleaner_slots.len(), 0, n, 1),
        ]
    }

    pub(crate) fn set(&mut self, kind: KnobKind, v: f64, n: usize) {
        match kind {
            KnobKind::Period => self.period = v as u32,
            KnobKind::Cleaners => self.cleaner_slots = interleaved_slots(v as usize, n),
            _ => {}
        }
    }
}

/// `count` role indices spread evenly over `0..n`.
pub fn interleaved_slots(count: usize, n: usize) -> Vec<usize> {
    if count == 0 || n == 0 {
        return Vec::new();
    }
    let count = count.min(n);
    let offset = n / (2 * count);
    (0..count).map(|k| (k * n / count + offset) % n).collect()
}

/// Rotating pair of cleaners, rotating collection zones, and an all-hands
/// emergency mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TwoCleanerParams {
    pub period: u32,
    pub cleaners: usize,
    pub zones: usize,
    pub zone_period: u32,
    /// Waste fraction at which every agent cleans.
    pub emergency: f64,
    /// Cleaners only clean above this waste fraction.
    pub clean_floor: f64,
    /// Beam yield at which a cleaner fires without repositioning.
    pub fire_min: usize,
}

impl Default for TwoCleanerParams {
    fn default() -> Self {
        TwoCleanerParams {
            period: 50,
            cleaners: 2,
            zones: 5,
            zone_period: 200,
            emergency: 0.40,
            clean_floor: 0.04,
            fire_min: 3,
        }
    }
}

impl TwoCleanerParams {
    pub(crate) fn validate(&self, n: usize) -> Result<()> {
        check(self.period >= 1, || "rotation period must be >= 1".into())?;
        check(self.zone_period >= 1, || "zone period must be >= 1".into())?;
        check(self.cleaners <= n, || format!("{} cleaners exceed {n} agents", self.cleaners))?;
        check(self.zones >= 1, || "zones must be >= 1".into())?;
        check(
            0.0 <= self.clean_floor && self.clean_floor < self.emergency && self.emergency <= 1.0,
            || {
                format!(
                    "need 0 <= clean_floor ({}) < emergency ({}) <= 1",
                    self.clean_floor, self.emergency
                )
            },
        )?;
        check(self.fire_min >= 1, || "fire_min must be >= 1".into())
    }

    pub(crate) fn knobs(&self, n: usize) -> Vec<KnobSpec> {
        vec![
            KnobSpec::int(KnobKind::Period, self.period as usize, 1, 500, 10),
            KnobSpec::int(KnobKind::Cleaners, self.cleaners, 0, n, 1),
            KnobSpec::int(KnobKind::Zones, self.zones, 1, 10, 1),
            KnobSpec::real(KnobKind::Threshold, self.emergency, 0.1, 1.0, 0.05),
        ]
    }

    pub(crate) fn set(&mut self, kind: KnobKind, v: f64) {
        match kind {
            KnobKind::Period => self.period = v as u32,
            KnobKind::Cleaners => self.cleaners = v as usize,
            KnobKind::Zones => self.zones = v as usize,
            KnobKind::Threshold => {
                self.emergency = v;
                self.clean_floor = self.clean_floor.min(round4(v / 2.0));
            }
        }
    }
}

/// Everyone cleans above `enter`, everyone collects below `exit`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyncParams {
    pub enter: f64,
    pub exit: f64,
}

impl Default for SyncParams {
    fn default() -> Self {
        SyncParams {
            enter: 0.22,
            exit: 0.08,
        }
    }
}

impl SyncParams {
    pub(crate) fn validate(&self) -> Result<()> {
        check(
            0.0 <= self.exit && self.exit < self.enter && self.enter <= 1.0,
            || format!("need 0 <= exit ({}) < enter ({}) <= 1", self.exit, self.enter),
        )
    }

    pub(crate) fn knobs(&self) -> Vec<KnobSpec> {
        vec![KnobSpec::real(KnobKind::Threshold, self.enter, 0.1, 0.6, 0.04)]
    }

    /// Moves the band, keeping its width where possible.
    pub(crate) fn set(&mut self, kind: KnobKind, v: f64) {
        if kind == KnobKind::Threshold {
            let delta = v - self.enter;
            self.enter = v;
            self.exit = round4((self.exit + delta).max(0.0));
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VoronoiParams {
    /// Dead apples respawning later than this are ignored.
    pub max_timer: u32,
    /// Chase apples outside the own zone when the zone has nothing.
    pub poach: bool,
}

impl Default for VoronoiParams {
    fn default() -> Self {
        VoronoiParams {
            max_timer: 15,
            poach: true,
        }
    }
}

impl VoronoiParams {
    pub(crate) fn validate(&self) -> Result<()> {
        Ok(())
    }

    pub(crate) fn knobs(&self) -> Vec<KnobSpec> {
        Vec::new()
    }

    pub(crate) fn set(&mut self, _kind: KnobKind, _v: f64) {}
}
