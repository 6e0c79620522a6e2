//! Adversary strategies, sybil identities and attack scheduling.

pub mod identity;
pub mod strategies;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use identity::{ClientIdentity, Population, Role, SpawnKind, SpawnSpec};
pub use strategies::{
    backdoor_direction, label_flip, orthogonal_directions, relabel_all, scale_update, stat_manip_round,
    sybil_tail_round, train_backdoor,
};

use crate::error::{Error, Result};
use crate::secagg::ClientId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    LabelFlip,
    Scale,
    BackdoorPrototypical,
    #[default]
    BackdoorTail,
    SybilTail,
    StatManip,
}

impl Strategy {
    pub const ALL: [Strategy; 6] = [
        Strategy::LabelFlip,
        Strategy::Scale,
        Strategy::BackdoorPrototypical,
        Strategy::BackdoorTail,
        Strategy::SybilTail,
        Strategy::StatManip,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::LabelFlip => "label_flip",
            Strategy::Scale => "scale",
            Strategy::BackdoorPrototypical => "backdoor_prototypical",
            Strategy::BackdoorTail => "backdoor_tail",
            Strategy::SybilTail => "sybil_tail",
            Strategy::StatManip => "stat_manip",
        }
    }

    pub fn summary(self) -> &'static str {
        match self {
            Strategy::LabelFlip => "train on the own shard with source_class relabelled to the target",
            Strategy::Scale => "submit the honest update negated and boosted by γ",
            Strategy::BackdoorPrototypical => "backdoor main-distribution samples of source_class, boosted by γ",
            Strategy::BackdoorTail => "backdoor the tail cluster, boosted by γ",
            Strategy::SybilTail => "one shared tail backdoor cloned across sybils with ρ-diversification",
            Strategy::StatManip => "max-norm updates along the backdoor direction to inflate the dynamic bound",
        }
    }

    /// Whether backdoor accuracy is measured on main samples of the source
    /// class rather than on the tail cluster.
    pub fn targets_main_class(self) -> bool {
        matches!(self, Strategy::BackdoorPrototypical | Strategy::LabelFlip)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// `single_shot@<round>`, `continuous` or `fixed_frequency`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(try_from = "String", into = "String")]
pub enum Schedule {
    SingleShot(u64),
    #[default]
    Continuous,
    FixedFrequency,
}

impl FromStr for Schedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "continuous" => Ok(Schedule::Continuous),
            "fixed_frequency" => Ok(Schedule::FixedFrequency),
            _ => s
                .strip_prefix("single_shot@")
                .and_then(|r| r.parse().ok())
                .map(Schedule::SingleShot)
                .ok_or_else(|| {
                    Error::config(
                        "attack.schedule",
                        format!("expected single_shot@<round>, continuous or fixed_frequency, got {s:?}"),
                    )
                }),
        }
    }
}

impl TryFrom<String> for Schedule {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Schedule> for String {
    fn from(s: Schedule) -> String {
        s.to_string()
    }
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Schedule::SingleShot(r) => write!(f, "single_shot@{r}"),
            Schedule::Continuous => f.write_str("continuous"),
            Schedule::FixedFrequency => f.write_str("fixed_frequency"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackSpec {
    pub strategy: Strategy,
    pub schedule: Schedule,
    /// Sybils spawned per adversary (k).
    pub sybils: usize,
    /// γ
    pub boost: f64,
    /// λ
    pub blend: f64,
    /// ρ
    pub diversification: f64,
    /// Defaults to the dataset's backdoor target.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_label: Option<usize>,
    pub source_class: usize,
    /// Size of the adversary's backdoor sample set.
    pub backdoor_samples: usize,
    /// Local epochs for malicious training.
    pub epochs: usize,
    pub spawn: SpawnSpec,
    /// Extra tail-cluster samples each adversary adds to its own shard; sybils train on it too.
    pub artificial_tail: usize,
}

impl Default for AttackSpec {
    fn default() -> Self {
        AttackSpec {
            strategy: Strategy::BackdoorTail,
            schedule: Schedule::Continuous,
            sybils: 0,
            boost: 20.0,
            blend: 0.5,
            diversification: 0.1,
            target_label: None,
            source_class: 0,
            backdoor_samples: 64,
            epochs: 5,
            spawn: SpawnSpec::default(),
            artificial_tail: 0,
        }
    }
}

impl AttackSpec {
    pub fn validate(&self, rounds: u64, classes: usize) -> Result<()> {
        let err = |k: &str, m: String| Err(Error::config(format!("attack.{k}"), m));
        if !(self.boost >= 1.0) || !self.boost.is_finite() {
            return err("boost", format!("γ must be finite and ≥ 1, got {}", self.boost));
        }
        if !(self.blend > 0.0 && self.blend <= 1.0) {
            return err("blend", format!("λ must lie in (0, 1], got {}", self.blend));
        }
        if !(0.0..1.0).contains(&self.diversification) {
            return err(
                "diversification",
                format!("ρ must lie in [0, 1), got {}", self.diversification),
            );
        }
        if let Schedule::SingleShot(r) = self.schedule {
            if r == 0 || r > rounds {
                return err("schedule", format!("single-shot round {r} outside 1..={rounds}"));
            }
        }
        if self.source_class >= classes {
            return err("source_class", format!("must be below {classes}"));
        }
        if let Some(t) = self.target_label {
            if t >= classes || t == self.source_class {
                return err(
                    "target_label",
                    format!("must be below {classes} and differ from source_class"),
                );
            }
        }
        if self.backdoor_samples == 0 {
            return err("backdoor_samples", "must be at least 1".into());
        }
        self.spawn.validate()
    }

    pub fn fires(&self, t: u64) -> bool {
        match self.schedule {
            Schedule::SingleShot(r) => r == t,
            Schedule::Continuous | Schedule::FixedFrequency => true,
        }
    }
}

/// Controlled ids among `sampled` that act maliciously in round `t`.
pub fn schedule(spec: &AttackSpec, t: u64, sampled: &[ClientId], population: &Population) -> Vec<ClientId> {
    if !spec.fires(t) {
        return Vec::new();
    }
    sampled
        .iter()
        .copied()
        .filter(|&id| population.is_controlled(id))
        .collect()
}
