//! Scenario configuration: a TOML file with the sections below. Unknown keys
//! are rejected and every omitted key takes its default.
//!
//! | key | default | range |
//! |-----|---------|-------|
//! | `seed` | 1 | any `u64` |
//! | `rounds` | 30 | ≥ 0 |
//! | `mode` | `plaintext` | `plaintext`, `crypto` |
//! | `group` | `standard` | `test`, `compact`, `standard` |
//! | `abort_policy` | `continue` | `continue`, `stop` |
//! | `transcripts` | false | crypto mode only |
//! | `out` | `sybil-lab-out` | path |
//! | `population.honest` | 10 | ≥ 0 |
//! | `population.adversaries` | 0 | ≥ 0, honest + adversaries ≥ 1 |
//! | `population.sample` | 5 | 1 ..= honest + adversaries·(1 + sybils) |
//! | `data.features` | 20 | > classes |
//! | `data.classes` | 3 | ≥ 2 |
//! | `data.samples` | 6000 | ≥ 100 |
//! | `data.test_samples` | 2000 | ≥ 1 |
//! | `data.tail_fraction` | 0.02 | [0, 0.1] |
//! | `data.separation` | 3.0 | > 0 |
//! | `data.tail_distance` | 6.5 | tail ≥ 6·noise from every class centre |
//! | `data.noise` | 1.0 | > 0 |
//! | `data.backdoor_target` | 1 | 1 ..< classes |
//! | `data.train_file`, `data.test_file` | unset | dataset files, both or neither |
//! | `model.arch` | `logreg` | `logreg`, `mlp` |
//! | `model.hidden` | 16 | ≥ 1 (mlp) |
//! | `model.init_scale` | 0.1 | ≥ 0 |
//! | `train.epochs` | 1 | ≥ 0 |
//! | `train.lr` | 0.1 | ≥ 0 |
//! | `train.batch_size` | 32 | ≥ 1 |
//! | `quantization.bits` | 16 | 2 ..= 32 |
//! | `quantization.range` | 4.0 | power of two |
//! | `aggregator.kind` | `fedavg` | see `list-aggregators` |
//! | `aggregator.bound` | 1.0 | > 0; static B or initial B₀ |
//! | `aggregator.p` | `l2` | `l2`, `linf` |
//! | `aggregator.mode` | `reject` | `reject`, `clip` (plaintext only) |
//! | `aggregator.multiplier` | 1.5 | > 0 |
//! | `aggregator.f` | 1 | n ≥ f + 3 for multi-krum |
//! | `aggregator.m` | n − f | 1 ..= n |
//! | `aggregator.trim` | 0.1 | [0, 0.5) |
//! | `attack.strategy` | `backdoor_tail` | see `list-attacks` |
//! | `attack.schedule` | `continuous` | `single_shot@<round>`, `continuous`, `fixed_frequency` |
//! | `attack.sybils` | 0 | per adversary |
//! | `attack.boost` | 20.0 | ≥ 1 |
//! | `attack.blend` | 0.5 | (0, 1] |
//! | `attack.diversification` | 0.1 | [0, 1) |
//! | `attack.target_label` | `data.backdoor_target` | < classes, ≠ source_class |
//! | `attack.source_class` | 0 | < classes |
//! | `attack.backdoor_samples` | 64 | ≥ 1 |
//! | `attack.artificial_tail` | 0 | synthetic data only |
//! | `attack.epochs` | 5 | ≥ 0 |
//! | `attack.spawn.kind` | `geometric` | `geometric`, `at` |
//! | `attack.spawn.round` | 1 | first join round |
//! | `attack.spawn.initial` | 1 | ≥ 1 |
//! | `attack.spawn.every` | 5 | ≥ 1 |

use std::path::{Path, PathBuf};

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};

use crate::aggregators::{AggregatorSpec, BoundMode};
use crate::attacks::{AttackSpec, Schedule};
use crate::crypto::{setup_group, GroupProfile};
use crate::error::{Error, Result};
use crate::model::{Architecture, ModelSpec, Quantizer, SyntheticSpec, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolMode {
    #[default]
    Plaintext,
    Crypto,
}

impl ProtocolMode {
    pub fn name(self) -> &'static str {
        match self {
            ProtocolMode::Plaintext => "plaintext",
            ProtocolMode::Crypto => "crypto",
        }
    }
}

impl std::str::FromStr for ProtocolMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plaintext" => Ok(ProtocolMode::Plaintext),
            "crypto" => Ok(ProtocolMode::Crypto),
            _ => Err(Error::config(
                "mode",
                format!("expected plaintext or crypto, got {s:?}"),
            )),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AbortPolicy {
    #[default]
    Continue,
    Stop,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PopulationConfig {
    pub honest: usize,
    pub adversaries: usize,
    pub sample: usize,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        PopulationConfig {
            honest: 10,
            adversaries: 0,
            sample: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub features: usize,
    pub classes: usize,
    pub samples: usize,
    pub test_samples: usize,
    pub tail_fraction: f64,
    pub separation: f64,
    pub tail_distance: f64,
    pub noise: f64,
    pub backdoor_target: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_file: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_file: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        let s = SyntheticSpec::default();
        DataConfig {
            features: s.features,
            classes: s.classes,
            samples: s.samples,
            test_samples: 2000,
            tail_fraction: s.tail_fraction,
            separation: s.separation,
            tail_distance: s.tail_distance,
            noise: s.noise,
            backdoor_target: s.backdoor_target,
            train_file: None,
            test_file: None,
        }
    }
}

impl DataConfig {
    pub fn synthetic(&self) -> SyntheticSpec {
        SyntheticSpec {
            features: self.features,
            classes: self.classes,
            samples: self.samples,
            tail_fraction: self.tail_fraction,
            separation: self.separation,
            tail_distance: self.tail_distance,
            noise: self.noise,
            backdoor_target: self.backdoor_target,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ArchKind {
    #[default]
    Logreg,
    Mlp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub arch: ArchKind,
    pub hidden: usize,
    pub init_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            arch: ArchKind::Logreg,
            hidden: 16,
            init_scale: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuantConfig {
    pub bits: u32,
    pub range: f64,
}

impl Default for QuantConfig {
    fn default() -> Self {
        QuantConfig { bits: 16, range: 4.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub rounds: u64,
    pub mode: ProtocolMode,
    pub group: GroupProfile,
    pub abort_policy: AbortPolicy,
    pub transcripts: bool,
    pub out: PathBuf,
    pub population: PopulationConfig,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub quantization: QuantConfig,
    pub aggregator: AggregatorSpec,
    pub attack: AttackSpec,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            seed: 1,
            rounds: 30,
            mode: ProtocolMode::Plaintext,
            group: GroupProfile::Standard,
            abort_policy: AbortPolicy::Continue,
            transcripts: false,
            out: PathBuf::from("sybil-lab-out"),
            population: PopulationConfig::default(),
            data: DataConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            quantization: QuantConfig::default(),
            aggregator: AggregatorSpec::default(),
            attack: AttackSpec::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| {
            let key = e.span().map(|s| text[s].to_string()).unwrap_or_default();
            Error::config(key, e.message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses, validates and materialises defaults.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    /// The effective configuration with every default filled in.
    pub fn dump(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        let arch = match self.model.arch {
            ArchKind::Logreg => Architecture::Logreg,
            ArchKind::Mlp => Architecture::Mlp {
                hidden: self.model.hidden,
            },
        };
        ModelSpec::new(arch, self.data.features, self.data.classes)
    }

    pub fn quantizer(&self) -> Result<Quantizer> {
        Quantizer::new(self.quantization.bits, self.quantization.range)
    }

    pub fn target_label(&self) -> usize {
        self.attack.target_label.unwrap_or(self.data.backdoor_target)
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.population;
        if p.honest + p.adversaries == 0 {
            return Err(Error::config("population", "need at least one client"));
        }
        let total = p.honest + p.adversaries * (1 + self.attack.sybils);
        if p.sample == 0 || p.sample > total {
            return Err(Error::config(
                "population.sample",
                format!("must lie in [1, {total}], got {}", p.sample),
            ));
        }
        if self.data.train_file.is_some() != self.data.test_file.is_some() {
            return Err(Error::config(
                "data.test_file",
                "train_file and test_file must be given together",
            ));
        }
        if self.data.train_file.is_none() {
            self.data.synthetic().validate()?;
        } else if self.attack.artificial_tail > 0 {
            return Err(Error::config("attack.artificial_tail", "needs synthetic data"));
        }
        if self.data.test_samples == 0 {
            return Err(Error::config("data.test_samples", "must be at least 1"));
        }
        self.model_spec()?;
        if !(self.model.init_scale >= 0.0) || !self.model.init_scale.is_finite() {
            return Err(Error::config("model.init_scale", "must be finite and ≥ 0"));
        }
        self.train.validate("train")?;
        self.quantizer()?;
        self.aggregator.validate_for(p.sample)?;
        if p.adversaries > 0 {
            self.attack.validate(self.rounds, self.data.classes)?;
            if self.attack.target_label.is_none() && self.data.backdoor_target == self.attack.source_class {
                return Err(Error::config(
                    "attack.source_class",
                    "must differ from the backdoor target",
                ));
            }
        } else if self.attack.schedule == Schedule::FixedFrequency {
            return Err(Error::config(
                "attack.schedule",
                "fixed_frequency needs at least one adversary",
            ));
        }
        if self.transcripts && self.mode != ProtocolMode::Crypto {
            return Err(Error::config(
                "transcripts",
                "round transcripts exist only in crypto mode",
            ));
        }
        if self.mode == ProtocolMode::Crypto {
            if !self.aggregator.kind.is_linear() {
                return Err(Error::config(
                    "aggregator.kind",
                    format!(
                        "{} needs individual updates and cannot run under secure aggregation",
                        self.aggregator.kind
                    ),
                ));
            }
            if self.aggregator.kind.is_bounded() && self.aggregator.mode == BoundMode::Clip {
                return Err(Error::config(
                    "aggregator.mode",
                    "clip mode is unavailable in crypto mode",
                ));
            }
            let gp = setup_group(self.group);
            let bits = self.quantization.bits;
            if bits > gp.max_range_bits() {
                return Err(Error::config(
                    "quantization.bits",
                    format!(
                        "{bits} bits exceed the {} group's range limit {}",
                        self.group,
                        gp.max_range_bits()
                    ),
                ));
            }
            let worst = BigUint::from(p.sample) * ((BigUint::from(1u8) << bits) - 1u8);
            if &worst >= gp.q() {
                return Err(Error::config(
                    "group",
                    format!(
                        "sums of {} {bits}-bit values would wrap modulo the group order",
                        p.sample
                    ),
                ));
            }
        }
        Ok(())
    }

    /// Sets dotted `key` to `value` (parsed as a TOML literal, else taken as
    /// a string) and revalidates.
    pub fn with_override(&self, key: &str, value: &str) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(&self.dump()).expect("dump parses");
        let parts: Vec<&str> = key.split('.').collect();
        let (last, parents) = parts.split_last().expect("split yields one part");
        let mut cur = &mut table;
        for part in parents {
            cur = cur
                .entry(part.to_string())
                .or_insert_with(|| toml::Value::Table(Default::default()))
                .as_table_mut()
                .ok_or_else(|| Error::config(key, format!("{part} is not a table")))?;
        }
        let parsed = toml::from_str::<toml::Table>(&format!("v = {value}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(value.to_string()));
        cur.insert(last.to_string(), parsed);
        Self::from_toml_str(&toml::to_string(&table).expect("table serialises"))
    }
}
