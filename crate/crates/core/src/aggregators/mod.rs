//! Server-side aggregation rules and the per-round dispatch.

pub mod foolsgold;
pub mod linear;
pub mod robust;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use foolsgold::{foolsgold, UpdateHistory};
pub use linear::{dynamic_bound, fedavg, median, norm_bound_filter, BoundMode, FilterOutcome};
pub use robust::{coord_median, krum_scores, multi_krum, trimmed_mean};

use crate::error::{Error, Result};
use crate::model::{clip_to_norm, Norm, ParameterVector};
use crate::secagg::ClientId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AggregatorKind {
    #[default]
    Fedavg,
    NormBoundStatic,
    NormBoundDynamic,
    MultiKrum,
    CoordMedian,
    TrimmedMean,
    Foolsgold,
}

impl AggregatorKind {
    pub const ALL: [AggregatorKind; 7] = [
        AggregatorKind::Fedavg,
        AggregatorKind::NormBoundStatic,
        AggregatorKind::NormBoundDynamic,
        AggregatorKind::MultiKrum,
        AggregatorKind::CoordMedian,
        AggregatorKind::TrimmedMean,
        AggregatorKind::Foolsgold,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AggregatorKind::Fedavg => "fedavg",
            AggregatorKind::NormBoundStatic => "norm_bound_static",
            AggregatorKind::NormBoundDynamic => "norm_bound_dynamic",
            AggregatorKind::MultiKrum => "multi_krum",
            AggregatorKind::CoordMedian => "coord_median",
            AggregatorKind::TrimmedMean => "trimmed_mean",
            AggregatorKind::Foolsgold => "foolsgold",
        }
    }

    pub fn summary(self) -> &'static str {
        match self {
            AggregatorKind::Fedavg => "uniform mean of all updates",
            AggregatorKind::NormBoundStatic => "fixed p-norm bound (reject or clip), then mean",
            AggregatorKind::NormBoundDynamic => "bound = multiplier × median declared norm, then mean",
            AggregatorKind::MultiKrum => "mean of the m updates with lowest Krum score",
            AggregatorKind::CoordMedian => "coordinatewise median",
            AggregatorKind::TrimmedMean => "coordinatewise mean after trimming ⌊βn⌋ from each end",
            AggregatorKind::Foolsgold => "cosine-similarity reweighting of cumulative histories",
        }
    }

    /// Rules computable from the masked sum alone.
    pub fn is_linear(self) -> bool {
        matches!(
            self,
            AggregatorKind::Fedavg | AggregatorKind::NormBoundStatic | AggregatorKind::NormBoundDynamic
        )
    }

    pub fn is_bounded(self) -> bool {
        matches!(self, AggregatorKind::NormBoundStatic | AggregatorKind::NormBoundDynamic)
    }
}

impl fmt::Display for AggregatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AggregatorSpec {
    pub kind: AggregatorKind,
    /// Static bound, or the initial bound for the dynamic rule.
    pub bound: f64,
    pub p: Norm,
    pub mode: BoundMode,
    pub multiplier: f64,
    pub f: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    pub trim: f64,
}

impl Default for AggregatorSpec {
    fn default() -> Self {
        AggregatorSpec {
            kind: AggregatorKind::Fedavg,
            bound: 1.0,
            p: Norm::L2,
            mode: BoundMode::Reject,
            multiplier: 1.5,
            f: 1,
            m: None,
            trim: 0.1,
        }
    }
}

impl AggregatorSpec {
    pub fn of(kind: AggregatorKind) -> Self {
        AggregatorSpec {
            kind,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |k: &str, m: String| Err(Error::config(format!("aggregator.{k}"), m));
        if !(self.bound > 0.0) || !self.bound.is_finite() {
            return err("bound", format!("must be positive and finite, got {}", self.bound));
        }
        if !(self.multiplier > 0.0) || !self.multiplier.is_finite() {
            return err(
                "multiplier",
                format!("must be positive and finite, got {}", self.multiplier),
            );
        }
        if !(0.0..0.5).contains(&self.trim) {
            return err("trim", format!("trim fraction must lie in [0, 0.5), got {}", self.trim));
        }
        if self.m == Some(0) {
            return err("m", "multi-krum selection size must be at least 1".into());
        }
        Ok(())
    }

    /// Checks that need the per-round participant count.
    pub fn validate_for(&self, n: usize) -> Result<()> {
        self.validate()?;
        if self.kind == AggregatorKind::MultiKrum {
            if n < self.f + 3 {
                return Err(Error::config(
                    "aggregator.f",
                    format!("multi-krum needs n ≥ f + 3, got n={n}, f={}", self.f),
                ));
            }
            let m = self.krum_m(n);
            if m == 0 || m > n {
                return Err(Error::config(
                    "aggregator.m",
                    format!("selection size must lie in [1, {n}], got {m}"),
                ));
            }
        }
        Ok(())
    }

    pub fn krum_m(&self, n: usize) -> usize {
        self.m.unwrap_or(n.saturating_sub(self.f))
    }

    /// The bound in force this round: `B` for the static rule, `M · median`
    /// of all declared norms for the dynamic rule, `None` otherwise.
    pub fn round_bound(&self, declared_norms: &[f64]) -> Result<Option<f64>> {
        Ok(match self.kind {
            AggregatorKind::NormBoundStatic => Some(self.bound),
            AggregatorKind::NormBoundDynamic => Some(dynamic_bound(declared_norms, self.multiplier)?),
            _ => None,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Submission {
    pub client: ClientId,
    pub update: ParameterVector,
    pub declared_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct AggregationResult {
    pub delta: ParameterVector,
    pub bound: Option<f64>,
    pub accepted: Vec<ClientId>,
    pub rejected: Vec<(ClientId, String)>,
    pub clipped: Vec<ClientId>,
    pub weights: BTreeMap<ClientId, f64>,
    /// Set when no update survived and the zero update was applied.
    pub empty: bool,
}

/// Runs one round of the configured rule over `subs` (any order). The dynamic
/// bound comes from declared norms; each update's own norm is then checked
/// against it with slack `tolerance`. `history` must not
/// yet contain this round; FoolsGold weighs a copy extended by `subs`.
pub fn aggregate(
    subs: &[Submission],
    spec: &AggregatorSpec,
    history: &UpdateHistory,
    tolerance: f64,
) -> Result<AggregationResult> {
    let Some(first) = subs.first() else {
        return Err(Error::Precondition("aggregation with no submissions".into()));
    };
    let d = first.update.len();
    spec.validate_for(subs.len())?;
    let mut subs: Vec<&Submission> = subs.iter().collect();
    subs.sort_by_key(|s| s.client);
    if subs.windows(2).any(|w| w[0].client == w[1].client) {
        return Err(Error::ProtocolState("two submissions from one client".into()));
    }
    let mut out = AggregationResult {
        delta: ParameterVector::zeros(d),
        ..Default::default()
    };
    let norms: Vec<f64> = subs.iter().map(|s| s.declared_norm).collect();
    out.bound = spec.round_bound(&norms)?;

    let mut survivors: Vec<(ClientId, ParameterVector)> = Vec::with_capacity(subs.len());
    if let Some(b) = out.bound {
        let pairs: Vec<(ClientId, f64)> = subs.iter().map(|s| (s.client, s.update.norm(spec.p))).collect();
        let decision = norm_bound_filter(&pairs, b, spec.mode, tolerance)?;
        for s in &subs {
            if decision.clipped.contains(&s.client) {
                survivors.push((s.client, clip_to_norm(&s.update, b, spec.p)?));
            } else if decision.accepted.contains(&s.client) {
                survivors.push((s.client, s.update.clone()));
            }
        }
        out.rejected = decision.rejected;
        out.clipped = decision.clipped;
    } else {
        survivors = subs.iter().map(|s| (s.client, s.update.clone())).collect();
    }
    if survivors.is_empty() {
        out.empty = true;
        return Ok(out);
    }
    let view: Vec<(ClientId, &[f64])> = survivors.iter().map(|(c, u)| (*c, &u[..])).collect();
    let uniform = 1.0 / view.len() as f64;
    match spec.kind {
        AggregatorKind::Fedavg | AggregatorKind::NormBoundStatic | AggregatorKind::NormBoundDynamic => {
            out.delta = fedavg(&view, None)?;
            out.weights = view.iter().map(|(c, _)| (*c, uniform)).collect();
        }
        AggregatorKind::CoordMedian => {
            out.delta = coord_median(&view)?;
            out.weights = view.iter().map(|(c, _)| (*c, uniform)).collect();
        }
        AggregatorKind::TrimmedMean => {
            out.delta = trimmed_mean(&view, spec.trim)?;
            out.weights = view.iter().map(|(c, _)| (*c, uniform)).collect();
        }
        AggregatorKind::MultiKrum => {
            let m = spec.krum_m(view.len());
            let scores = krum_scores(&view, spec.f)?;
            let mut picked = multi_krum(&view, spec.f, m)?;
            picked.sort_unstable();
            let chosen: Vec<(ClientId, &[f64])> = view.iter().filter(|(c, _)| picked.contains(c)).copied().collect();
            out.delta = fedavg(&chosen, None)?;
            for (i, (c, _)) in view.iter().enumerate() {
                if picked.contains(c) {
                    out.weights.insert(*c, 1.0 / m as f64);
                } else {
                    out.weights.insert(*c, 0.0);
                    out.rejected
                        .push((*c, format!("not selected by multi-krum (score {:.6})", scores[i])));
                }
            }
            out.rejected.sort_by_key(|(c, _)| *c);
        }
        AggregatorKind::Foolsgold => {
            let mut h = history.clone();
            for (c, u) in &view {
                h.record(*c, u)?;
            }
            let w: Vec<f64> = match foolsgold(&h) {
                Ok(all) => view.iter().map(|(c, _)| all[c]).collect(),
                Err(Error::Precondition(_)) => vec![1.0; view.len()],
                Err(e) => return Err(e),
            };
            out.delta = fedavg(&view, Some(&w))?;
            out.weights = view.iter().zip(&w).map(|((c, _), w)| (*c, *w)).collect();
        }
    }
    let rejected: Vec<ClientId> = out.rejected.iter().map(|(c, _)| *c).collect();
    out.accepted = subs
        .iter()
        .map(|s| s.client)
        .filter(|c| !rejected.contains(c))
        .collect();
    Ok(out)
}
