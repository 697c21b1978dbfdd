//! Social outcome metrics over an episode's returns, and the two welfare
//! objectives used to score configurations.
//!
//! * efficiency `U`: total return per timestep,
//! * equality `E`: one minus the Gini coefficient over ordered pairs,
//! * sustainability `S`: mean over agents of the mean step at which each agent
//!   earned positive reward,
//! * peace `P`: mean number of untagged agents per step.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Raw per-episode data the metrics are computed from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub returns: Vec<f64>,
    /// Per agent, the steps at which its reward was positive.
    pub positive_reward_times: Vec<Vec<u32>>,
    /// Per step, the number of agents not tagged out.
    pub active_counts: Vec<u32>,
    pub horizon: u32,
}

impl EpisodeRecord {
    pub fn metrics(&self) -> Result<MetricsVector> {
        let h = self.horizon;
        Ok(MetricsVector {
            efficiency: efficiency(&self.returns, h)?,
            equality: equality(&self.returns)?,
            sustainability: sustainability(&self.positive_reward_times, h),
            peace: peace(&self.active_counts, h)?,
            maximin: maximin(&self.returns)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsVector {
    pub efficiency: f64,
    pub equality: f64,
    pub sustainability: f64,
    pub peace: f64,
    pub maximin: f64,
}

impl MetricsVector {
    /// Component-wise mean. `None` for an empty slice.
    pub fn mean(items: &[MetricsVector]) -> Option<MetricsVector> {
        if items.is_empty() {
            return None;
        }
        let n = items.len() as f64;
        let sum = |f: fn(&MetricsVector) -> f64| items.iter().map(f).sum::<f64>() / n;
        Some(MetricsVector {
            efficiency: sum(|m| m.efficiency),
            equality: sum(|m| m.equality),
            sustainability: sum(|m| m.sustainability),
            peace: sum(|m| m.peace),
            maximin: sum(|m| m.maximin),
        })
    }
}

pub fn efficiency(returns: &[f64], horizon: u32) -> Result<f64> {
    if horizon == 0 {
        return Err(Error::invalid("efficiency: horizon must be positive"));
    }
    Ok(returns.iter().sum::<f64>() / horizon as f64)
}

/// `1 - Σ_{i,j} |R_i - R_j| / (2 N Σ R_i)` over ordered pairs. A zero total
/// gives 1.0; a negative total is evaluated as written, so values outside
/// `[0, 1]` are possible.
pub fn equality(returns: &[f64]) -> Result<f64> {
    if returns.is_empty() {
        return Err(Error::invalid("equality: need at least one agent"));
    }
    let total: f64 = returns.iter().sum();
    if total == 0.0 {
        return Ok(1.0);
    }
    // Sorted form of the pairwise sum: Σ_{i,j}|x_i - x_j| = 2 Σ_k (2k - n + 1) x_(k).
    let mut sorted = returns.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let pair_sum: f64 = 2.0
        * sorted
            .iter()
            .enumerate()
            .map(|(k, x)| (2.0 * k as f64 - n as f64 + 1.0) * x)
            .sum::<f64>();
    Ok(1.0 - pair_sum / (2.0 * n as f64 * total))
}

/// Agents that never earned positive reward count as `horizon`.
pub fn sustainability(positive_reward_times: &[Vec<u32>], horizon: u32) -> f64 {
    if positive_reward_times.is_empty() {
        return horizon as f64;
    }
    let per_agent = positive_reward_times.iter().map(|ts| {
        if ts.is_empty() {
            horizon as f64
        } else {
            ts.iter().map(|&t| t as f64).sum::<f64>() / ts.len() as f64
        }
    });
    per_agent.sum::<f64>() / positive_reward_times.len() as f64
}

pub fn peace(active_counts: &[u32], horizon: u32) -> Result<f64> {
    if horizon == 0 || active_counts.len() != horizon as usize {
        return Err(Error::invalid(format!(
            "peace: {} active counts for horizon {horizon}",
            active_counts.len()
        )));
    }
    Ok(active_counts.iter().map(|&c| c as f64).sum::<f64>() / horizon as f64)
}

pub fn maximin(returns: &[f64]) -> Result<f64> {
    returns
        .iter()
        .copied()
        .min_by(f64::total_cmp)
        .ok_or_else(|| Error::invalid("maximin: need at least one agent"))
}

/// Welfare functional a configuration is scored with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    /// Utilitarian: total return per step.
    Efficiency,
    /// Rawlsian: the worst-off agent's return.
    Maximin,
}

impl Objective {
    pub fn name(self) -> &'static str {
        match self {
            Objective::Efficiency => "efficiency",
            Objective::Maximin => "maximin",
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "efficiency" | "utilitarian" => Ok(Objective::Efficiency),
            "maximin" | "rawlsian" => Ok(Objective::Maximin),
            other => Err(Error::invalid(format!("unknown objective '{other}'"))),
        }
    }
}

pub fn welfare(returns: &[f64], horizon: u32, objective: Objective) -> Result<f64> {
    match objective {
        Objective::Efficiency => efficiency(returns, horizon),
        Objective::Maximin => maximin(returns),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Direct double loop over ordered pairs.
    fn equality_oracle(r: &[f64]) -> f64 {
        let total: f64 = r.iter().sum();
        if total == 0.0 {
            return 1.0;
        }
        let mut s = 0.0;
        for a in r {
            for b in r {
                s += (a - b).abs();
            }
        }
        1.0 - s / (2.0 * r.len() as f64 * total)
    }

    fn unequal() -> Vec<f64> {
        let mut v = vec![200.0; 8];
        v.extend([-100.0, -100.0]);
        v
    }

    #[test]
    fn efficiency_examples() {
        let mut r = vec![320.0; 10];
        assert_eq!(efficiency(&r, 1000).unwrap(), 3.2);
        r.fill(0.0);
        assert_eq!(efficiency(&r, 1000).unwrap(), 0.0);
        assert_eq!(efficiency(&[-1000.0], 1000).unwrap(), -1.0);
        assert!(efficiency(&r, 0).is_err());
    }

    #[test]
    fn equality_examples() {
        assert_eq!(equality(&[100.0; 10]).unwrap(), 1.0);
        // Oracle: Σ|diffs| = 9600, denominator 2·10·1400 = 28000.
        let e = equality(&unequal()).unwrap();
        assert!((equality_oracle(&unequal()) - (1.0 - 9600.0 / 28000.0)).abs() < 1e-12);
        assert!((e - 0.657_142_857_142_857_1).abs() < 1e-9, "{e}");
        assert_eq!(equality(&[0.0; 10]).unwrap(), 1.0);
        assert!(equality(&[]).is_err());
    }

    #[test]
    fn equality_negative_total_is_unclamped() {
        let e = equality(&[10.0, -30.0]).unwrap();
        assert!((e - equality_oracle(&[10.0, -30.0])).abs() < 1e-12);
        assert!(!(0.0..=1.0).contains(&e));
    }

    #[test]
    fn sustainability_examples() {
        assert_eq!(sustainability(&[vec![100, 300]], 1000), 200.0);
        assert_eq!(sustainability(&[vec![200], vec![400]], 1000), 300.0);
        assert_eq!(sustainability(&[vec![]], 1000), 1000.0);
        assert_eq!(sustainability(&[vec![], vec![100, 300]], 1000), 600.0);
    }

    #[test]
    fn peace_examples() {
        assert_eq!(peace(&[10; 1000], 1000).unwrap(), 10.0);
        let mut counts = vec![10; 1000];
        counts[100..125].fill(9);
        assert_eq!(peace(&counts, 1000).unwrap(), (10_000.0 - 25.0) / 1000.0);
        assert_eq!(peace(&[0; 1000], 1000).unwrap(), 0.0);
        assert!(peace(&[10; 999], 1000).is_err());
    }

    #[test]
    fn welfare_examples() {
        assert_eq!(welfare(&unequal(), 1000, Objective::Maximin).unwrap(), -100.0);
        assert_eq!(welfare(&[320.0; 10], 1000, Objective::Efficiency).unwrap(), 3.2);
        assert_eq!(welfare(&[7.0; 4], 1000, Objective::Maximin).unwrap(), 7.0);
        assert!("nash".parse::<Objective>().is_err());
    }

    proptest! {
        #[test]
        fn equality_matches_double_loop(r in prop::collection::vec(-500i32..500, 1..16)) {
            let r: Vec<f64> = r.into_iter().map(f64::from).collect();
            let e = equality(&r).unwrap();
            let o = equality_oracle(&r);
            prop_assert!((e - o).abs() <= 1e-9 * (1.0 + o.abs()), "{} vs {}", e, o);
        }

        #[test]
        fn equality_permutation_and_scale_invariant(
            r in prop::collection::vec(1i32..500, 1..12),
            k in 1u32..50,
            rot in 0usize..12,
        ) {
            let r: Vec<f64> = r.into_iter().map(f64::from).collect();
            let mut p = r.clone();
            let len = p.len();
            p.rotate_left(rot % len);
            p.reverse();
            let scaled: Vec<f64> = r.iter().map(|x| x * k as f64).collect();
            let e = equality(&r).unwrap();
            prop_assert!((e - equality(&p).unwrap()).abs() < 1e-12);
            prop_assert!((e - equality(&scaled).unwrap()).abs() < 1e-9);
        }

        #[test]
        fn maximin_monotone(
            base in prop::collection::vec(-300i32..300, 1..12),
            bumps in prop::collection::vec(0i32..50, 12),
        ) {
            let a: Vec<f64> = base.iter().map(|&x| x as f64).collect();
            let b: Vec<f64> = a.iter().zip(&bumps).map(|(x, d)| x + *d as f64).collect();
            prop_assert!(maximin(&b).unwrap() >= maximin(&a).unwrap());
        }

        #[test]
        fn utilitarian_is_efficiency(r in prop::collection::vec(-300i32..300, 1..12), h in 1u32..2000) {
            let r: Vec<f64> = r.into_iter().map(f64::from).collect();
            prop_assert_eq!(welfare(&r, h, Objective::Efficiency).unwrap(), efficiency(&r, h).unwrap());
        }
    }
}
