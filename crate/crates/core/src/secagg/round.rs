//! Server side of one secure-aggregation round.
//!
//! Lifecycle: `submit` envelopes → `verify` (verdicts fixed in ascending
//! client-id order) → `aggregate` over accepted clients with a decoding key.
//! Aggregation first checks `Π g^{r_ik} = g^{r'_k}` and then that the
//! unmasked sum opens the product of the value commitments.

use std::collections::BTreeMap;
use std::sync::Arc;

use super::envelope::{verify_envelope, ClientEnvelope, RangePolicy, Verdict};
use super::keys::ClientId;
use crate::crypto::commit::commit;
use crate::crypto::{GroupParams, Scalar};
use crate::error::{Error, Result};
use crate::exec::Execution;

/// Coordinatewise sum of the included clients' quantized updates.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AggregateSum {
    pub sums: Vec<u64>,
    pub count: usize,
}

/// Unmasks `Σ payload − r′` coordinatewise after the mask-sum and
/// commitment-consistency checks; any failure aborts with the coordinate.
pub fn aggregate_envelopes(
    envelopes: &[&ClientEnvelope],
    decoding_key: &[Scalar],
    d: usize,
    gp: &GroupParams,
    exec: Execution,
) -> Result<AggregateSum> {
    if decoding_key.len() != d {
        return Err(Error::Shape {
            expected: d,
            actual: decoding_key.len(),
        });
    }
    if let Some(e) = envelopes.iter().find(|e| e.dim() != d || e.commitments.len() != d) {
        return Err(Error::Shape {
            expected: d,
            actual: e.dim().min(e.commitments.len()),
        });
    }
    let idx: Vec<usize> = (0..d).collect();
    let sums = exec.try_map(&idx, |&k| -> Result<u64> {
        let key = &decoding_key[k];
        let mask_product = gp.product(envelopes.iter().map(|e| &e.commitments[k].mask_term));
        if mask_product != gp.g_pow(key) {
            return Err(Error::Abort(format!(
                "mask-sum check failed at coordinate {k}: Π g^r != g^r'"
            )));
        }
        let total = gp.sum_scalars(envelopes.iter().map(|e| &e.masked.payload[k]));
        let opened = gp.sub(&total, key);
        let c_product = gp.product(envelopes.iter().map(|e| &e.commitments[k].c));
        if commit(&opened, key, gp).c != c_product {
            return Err(Error::Abort(format!(
                "coordinate {k}: unmasked sum does not open the commitment product"
            )));
        }
        opened
            .to_u64()
            .ok_or_else(|| Error::Abort(format!("coordinate {k}: aggregate exceeds 64 bits")))
    })?;
    Ok(AggregateSum {
        sums,
        count: envelopes.len(),
    })
}

pub struct SecureAggRound {
    gp: Arc<GroupParams>,
    round: u64,
    d: usize,
    policy: RangePolicy,
    envelopes: BTreeMap<ClientId, ClientEnvelope>,
    verdicts: Option<BTreeMap<ClientId, Verdict>>,
}

impl SecureAggRound {
    pub fn new(gp: Arc<GroupParams>, round: u64, d: usize, policy: RangePolicy) -> Self {
        SecureAggRound {
            gp,
            round,
            d,
            policy,
            envelopes: BTreeMap::new(),
            verdicts: None,
        }
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn policy(&self) -> RangePolicy {
        self.policy
    }

    pub fn params(&self) -> &Arc<GroupParams> {
        &self.gp
    }

    pub fn submit(&mut self, env: ClientEnvelope) -> Result<()> {
        if self.verdicts.is_some() {
            return Err(Error::ProtocolState(format!(
                "envelope from client {} arrived after verification",
                env.client()
            )));
        }
        let id = env.client();
        if self.envelopes.insert(id, env).is_some() {
            return Err(Error::ProtocolState(format!("duplicate envelope from client {id}")));
        }
        Ok(())
    }

    pub fn envelopes(&self) -> impl Iterator<Item = &ClientEnvelope> {
        self.envelopes.values()
    }

    pub fn verify(&mut self, exec: Execution) -> &BTreeMap<ClientId, Verdict> {
        let envs: Vec<&ClientEnvelope> = self.envelopes.values().collect();
        let (gp, policy, round, d) = (&self.gp, self.policy, self.round, self.d);
        let verdicts = exec.map(&envs, |e| {
            (
                e.client(),
                verify_envelope(e, policy, round, d, gp, Execution::Sequential),
            )
        });
        self.verdicts.insert(verdicts.into_iter().collect())
    }

    pub fn verdicts(&self) -> Option<&BTreeMap<ClientId, Verdict>> {
        self.verdicts.as_ref()
    }

    pub fn accepted(&self) -> Vec<ClientId> {
        self.verdicts
            .iter()
            .flatten()
            .filter(|(_, v)| v.is_accept())
            .map(|(&id, _)| id)
            .collect()
    }

    /// Aggregates `include` (ascending order enforced); every included client
    /// must have an accepted verdict.
    pub fn aggregate(&self, include: &[ClientId], decoding_key: &[Scalar], exec: Execution) -> Result<AggregateSum> {
        let verdicts = self
            .verdicts
            .as_ref()
            .ok_or_else(|| Error::ProtocolState("aggregate called before verify".into()))?;
        let mut ids = include.to_vec();
        ids.sort_unstable();
        ids.dedup();
        let mut envs = Vec::with_capacity(ids.len());
        for id in ids {
            match verdicts.get(&id) {
                Some(Verdict::Accept) => envs.push(&self.envelopes[&id]),
                Some(Verdict::Reject(r)) => {
                    return Err(Error::ProtocolState(format!(
                        "client {id} included in aggregate despite rejection ({r})"
                    )))
                }
                None => return Err(Error::ProtocolState(format!("client {id} has no verified envelope"))),
            }
        }
        aggregate_envelopes(&envs, decoding_key, self.d, &self.gp, exec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{setup_group, GroupProfile};
    use crate::secagg::envelope::build_envelope;
    use crate::secagg::keys::{ClientKeys, KeyRegistry};
    use crate::secagg::mask::{compute_client_mask, MaskVector};

    struct Fixture {
        gp: Arc<GroupParams>,
        ids: Vec<ClientId>,
        masks: Vec<MaskVector>,
    }

    fn fixture(n: u32, d: usize, round: u64) -> Fixture {
        let gp = setup_group(GroupProfile::Compact);
        let mut rng = crate::seed::stream(3, "round-test", 0, round);
        let keys: Vec<_> = (0..n).map(|i| ClientKeys::generate(i, &gp, &mut rng)).collect();
        let mut reg = KeyRegistry::new();
        for k in &keys {
            reg.register(k.id, k.public.clone()).unwrap();
        }
        let ids: Vec<ClientId> = (0..n).collect();
        let mut seeds = BTreeMap::new();
        for a in &keys {
            for &b in &ids {
                if a.id < b {
                    let s = reg.derive(a, b, round, &gp).unwrap();
                    seeds.insert(s.pair, s);
                }
            }
        }
        let masks = ids
            .iter()
            .map(|&i| compute_client_mask(i, &ids, &seeds, round, d, &gp).unwrap())
            .collect();
        Fixture { gp, ids, masks }
    }

    fn run(values: &[Vec<u64>], tamper: impl Fn(&mut ClientEnvelope)) -> Result<AggregateSum> {
        let d = values[0].len();
        let fx = fixture(values.len() as u32, d, 1);
        let policy = RangePolicy::full(4);
        let mut round = SecureAggRound::new(fx.gp.clone(), 1, d, policy);
        for (i, v) in values.iter().enumerate() {
            let mut env = build_envelope(
                v,
                &fx.masks[i],
                policy,
                0.0,
                fx.ids[i],
                1,
                &fx.gp,
                Execution::Sequential,
            )
            .unwrap();
            if i == 1 {
                tamper(&mut env);
            }
            round.submit(env).unwrap();
        }
        round.verify(Execution::Parallel);
        round.aggregate(&round.accepted(), &vec![fx.gp.zero(); d], Execution::Parallel)
    }

    #[test]
    fn three_scalar_updates_sum_to_six() {
        let out = run(&[vec![1], vec![2], vec![3]], |_| {}).unwrap();
        assert_eq!(
            out,
            AggregateSum {
                sums: vec![6],
                count: 3
            }
        );
    }

    #[test]
    fn single_client_needs_no_mask() {
        let fx = fixture(1, 2, 0);
        assert!(fx.masks[0].0.iter().all(|s| s.is_zero()));
        let policy = RangePolicy::full(4);
        let env = build_envelope(&[9, 4], &fx.masks[0], policy, 0.0, 0, 0, &fx.gp, Execution::Sequential).unwrap();
        let mut round = SecureAggRound::new(fx.gp.clone(), 0, 2, policy);
        round.submit(env).unwrap();
        round.verify(Execution::Sequential);
        let out = round
            .aggregate(&[0], &[fx.gp.zero(), fx.gp.zero()], Execution::Sequential)
            .unwrap();
        assert_eq!(out.sums, vec![9, 4]);
    }

    #[test]
    fn tampered_payload_aborts_on_consistency_not_mask_sum() {
        let err = run(&[vec![1, 1], vec![2, 2], vec![3, 3]], |e| {
            let gp = setup_group(GroupProfile::Compact);
            e.masked.payload[1] = gp.add(&e.masked.payload[1], &gp.scalar(1));
        })
        .unwrap_err();
        match err {
            Error::Abort(msg) => assert!(msg.contains("coordinate 1") && msg.contains("open"), "{msg}"),
            other => panic!("expected abort, got {other:?}"),
        }
    }

    #[test]
    fn wrong_decoding_key_fails_mask_sum() {
        let d = 2;
        let fx = fixture(2, d, 1);
        let policy = RangePolicy::full(4);
        let mut round = SecureAggRound::new(fx.gp.clone(), 1, d, policy);
        for i in 0..2 {
            round
                .submit(
                    build_envelope(
                        &[1, 1],
                        &fx.masks[i],
                        policy,
                        0.0,
                        i as u32,
                        1,
                        &fx.gp,
                        Execution::Sequential,
                    )
                    .unwrap(),
                )
                .unwrap();
        }
        round.verify(Execution::Sequential);
        let key = vec![fx.gp.scalar(1), fx.gp.zero()];
        match round.aggregate(&[0, 1], &key, Execution::Sequential) {
            Err(Error::Abort(msg)) => assert!(msg.contains("mask-sum") && msg.contains("coordinate 0")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn protocol_order_is_enforced() {
        let fx = fixture(2, 1, 0);
        let policy = RangePolicy::full(4);
        let mut round = SecureAggRound::new(fx.gp.clone(), 0, 1, policy);
        let env = build_envelope(&[1], &fx.masks[0], policy, 0.0, 0, 0, &fx.gp, Execution::Sequential).unwrap();
        round.submit(env.clone()).unwrap();
        assert!(matches!(round.submit(env), Err(Error::ProtocolState(_))));
        assert!(matches!(
            round.aggregate(&[0], &[fx.gp.zero()], Execution::Sequential),
            Err(Error::ProtocolState(_))
        ));
        round.verify(Execution::Sequential);
        assert!(matches!(
            round.aggregate(&[1], &[fx.gp.zero()], Execution::Sequential),
            Err(Error::ProtocolState(_))
        ));
        let late = build_envelope(&[1], &fx.masks[1], policy, 0.0, 1, 0, &fx.gp, Execution::Sequential).unwrap();
        assert!(round.submit(late).is_err());
    }
}
