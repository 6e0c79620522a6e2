use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::secagg::ClientId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Honest,
    Adversary,
    Sybil,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ClientIdentity {
    pub id: ClientId,
    pub role: Role,
    /// The controlling adversary, for sybils.
    pub controller: Option<ClientId>,
    /// First round in which the identity can be sampled.
    pub spawn_round: u64,
}

impl ClientIdentity {
    pub fn is_controlled(&self) -> bool {
        self.role != Role::Honest
    }

    /// The adversary this identity acts for: itself, its controller, or none.
    pub fn owner(&self) -> Option<ClientId> {
        match self.role {
            Role::Honest => None,
            Role::Adversary => Some(self.id),
            Role::Sybil => self.controller,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SpawnKind {
    /// All `k` sybils join at `round`.
    At,
    /// `initial` sybils join at `round`, doubling every `every` rounds up to `k`.
    #[default]
    Geometric,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpawnSpec {
    pub kind: SpawnKind,
    pub round: u64,
    pub initial: usize,
    pub every: u64,
}

impl Default for SpawnSpec {
    fn default() -> Self {
        SpawnSpec {
            kind: SpawnKind::Geometric,
            round: 1,
            initial: 1,
            every: 5,
        }
    }
}

impl SpawnSpec {
    pub fn at(round: u64) -> Self {
        SpawnSpec {
            kind: SpawnKind::At,
            round,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == SpawnKind::Geometric && (self.initial == 0 || self.every == 0) {
            return Err(Error::config(
                "attack.spawn",
                "geometric spawn needs initial ≥ 1 and every ≥ 1",
            ));
        }
        Ok(())
    }

    /// Join round of the `j`-th sybil (0-based) out of `k`.
    pub fn join_round(&self, j: usize) -> u64 {
        match self.kind {
            SpawnKind::At => self.round,
            SpawnKind::Geometric => {
                let mut have = self.initial;
                let mut r = self.round;
                while j >= have {
                    have = have.saturating_mul(2);
                    r += self.every;
                }
                r
            }
        }
    }
}

/// Every identity of a run, ordered by id: honest clients first, then
/// adversaries, then sybils in spawn order.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Population {
    members: Vec<ClientIdentity>,
}

impl Population {
    pub fn new(honest: usize, adversaries: usize) -> Self {
        let mut members = Vec::with_capacity(honest + adversaries);
        for i in 0..honest + adversaries {
            members.push(ClientIdentity {
                id: i as ClientId,
                role: if i < honest { Role::Honest } else { Role::Adversary },
                controller: None,
                spawn_round: 0,
            });
        }
        Population { members }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn members(&self) -> &[ClientIdentity] {
        &self.members
    }

    pub fn get(&self, id: ClientId) -> Option<&ClientIdentity> {
        self.members.get(id as usize)
    }

    pub fn adversaries(&self) -> impl Iterator<Item = ClientId> + '_ {
        self.members.iter().filter(|m| m.role == Role::Adversary).map(|m| m.id)
    }

    pub fn is_controlled(&self, id: ClientId) -> bool {
        self.get(id).is_some_and(ClientIdentity::is_controlled)
    }

    /// Ids that can be sampled at round `t`, ascending.
    pub fn active(&self, t: u64) -> Vec<ClientId> {
        self.members
            .iter()
            .filter(|m| m.spawn_round <= t)
            .map(|m| m.id)
            .collect()
    }

    /// Registers `k` sybils for `adversary` joining per `spawn`.
    pub fn spawn_sybils(&mut self, adversary: ClientId, k: usize, spawn: &SpawnSpec) -> Result<Vec<ClientId>> {
        spawn.validate()?;
        match self.get(adversary) {
            Some(m) if m.role == Role::Adversary => {}
            _ => {
                return Err(Error::ProtocolState(format!(
                    "client {adversary} is not a registered adversary"
                )))
            }
        }
        if self.members.iter().any(|m| m.controller == Some(adversary)) {
            return Err(Error::ProtocolState(format!(
                "adversary {adversary} already spawned its sybils"
            )));
        }
        let start = self.members.len();
        for j in 0..k {
            self.members.push(ClientIdentity {
                id: (start + j) as ClientId,
                role: Role::Sybil,
                controller: Some(adversary),
                spawn_round: spawn.join_round(j),
            });
        }
        Ok((start..start + k).map(|i| i as ClientId).collect())
    }
}
