use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::config::{ProtocolMode, ScenarioConfig};
use super::metrics::RoundRecord;
use super::sampling::{enforce_fixed_frequency, sample_clients};
use crate::aggregators::{self, median, norm_bound_filter, AggregationResult, BoundMode, Submission, UpdateHistory};
use crate::attacks::{
    self, backdoor_direction, label_flip, relabel_all, scale_update, stat_manip_round, sybil_tail_round,
    train_backdoor, Population, Schedule, Strategy,
};
use crate::crypto::{setup_group, GroupParams, Scalar};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model::{
    clip_to_norm, gen_synthetic, local_train, split_iid, Dataset, ModelSpec, Norm, ParameterVector, Quantizer,
    TrainConfig,
};
use crate::secagg::{
    build_envelope, compute_client_mask, subset_decoding_key, ClientEnvelope, ClientId, ClientKeys, KeyRegistry,
    MaskSeed, RangePolicy, RoundTranscript, SecureAggRound, Verdict,
};
use crate::seed::stream;

struct CryptoState {
    gp: Arc<GroupParams>,
    keys: BTreeMap<ClientId, ClientKeys>,
    registry: KeyRegistry,
}

/// A client's raw update and, for attackers that lie, its declared norm.
type Produced = (ClientId, ParameterVector, Option<f64>);

/// A client's quantized contribution for one round.
struct Contribution {
    client: ClientId,
    codes: Vec<u64>,
    update: ParameterVector,
    declared: f64,
}

/// State of one scenario between rounds.
pub struct Simulation {
    cfg: ScenarioConfig,
    spec: ModelSpec,
    quant: Quantizer,
    exec: Execution,
    population: Population,
    shards: Vec<Dataset>,
    backdoor_sets: BTreeMap<ClientId, Dataset>,
    test: Dataset,
    global: ParameterVector,
    history: UpdateHistory,
    published_bound: Option<f64>,
    round: u64,
    crypto: Option<CryptoState>,
    transcript_dir: Option<PathBuf>,
}

fn id_seed(id: ClientId) -> u64 {
    id as u64
}

impl Simulation {
    pub fn new(cfg: &ScenarioConfig, exec: Execution) -> Result<Self> {
        cfg.validate()?;
        let spec = cfg.model_spec()?;
        let quant = cfg.quantizer()?;
        let seed = cfg.seed;
        let (train, test) = match (&cfg.data.train_file, &cfg.data.test_file) {
            (Some(tr), Some(te)) => {
                let (train, test) = (Dataset::read_csv(tr)?, Dataset::read_csv(te)?);
                for (name, d) in [("data.train_file", &train), ("data.test_file", &test)] {
                    if d.n_features() != cfg.data.features || d.classes() != cfg.data.classes {
                        return Err(Error::config(
                            name,
                            format!(
                                "file has {} features and {} classes, config says {} and {}",
                                d.n_features(),
                                d.classes(),
                                cfg.data.features,
                                cfg.data.classes
                            ),
                        ));
                    }
                }
                (train, test)
            }
            _ => {
                let syn = cfg.data.synthetic();
                let train = gen_synthetic(&syn, &mut stream(seed, "data-train", 0, 0))?;
                let test_spec = crate::model::SyntheticSpec {
                    samples: cfg.data.test_samples.max(100),
                    ..syn
                };
                let test = gen_synthetic(&test_spec, &mut stream(seed, "data-test", 0, 0))?;
                (train, test)
            }
        };

        let pc = &cfg.population;
        let mut population = Population::new(pc.honest, pc.adversaries);
        let adversaries: Vec<ClientId> = population.adversaries().collect();
        for &a in &adversaries {
            population.spawn_sybils(a, cfg.attack.sybils, &cfg.attack.spawn)?;
        }
        let parts = pc.honest + pc.adversaries;
        let split = split_iid(train.len(), parts, &mut stream(seed, "split", 0, 0));
        if split.iter().any(Vec::is_empty) {
            return Err(Error::config(
                "data.samples",
                format!("{} samples cannot give each of {parts} clients a shard", train.len()),
            ));
        }
        let mut shards: Vec<Dataset> = split.iter().map(|idx| train.subset(idx)).collect();
        if cfg.attack.artificial_tail > 0 {
            let syn = cfg.data.synthetic();
            for &a in &adversaries {
                let mut rng = stream(seed, "artificial-tail", id_seed(a), 0);
                let extra = syn.sample_tail(cfg.attack.artificial_tail, &mut rng)?;
                shards[a as usize] = shards[a as usize].concat(&extra)?;
            }
        }

        let mut backdoor_sets = BTreeMap::new();
        for &a in &adversaries {
            let set = Self::backdoor_set(cfg, &train, &shards[a as usize], a)?;
            backdoor_sets.insert(a, set);
        }

        let global = spec.init(cfg.model.init_scale, &mut stream(seed, "init", 0, 0));
        let crypto = if cfg.mode == ProtocolMode::Crypto {
            let gp = setup_group(cfg.group);
            let mut registry = KeyRegistry::new();
            let mut keys = BTreeMap::new();
            for m in population.members() {
                let k = ClientKeys::generate(m.id, &gp, &mut stream(seed, "dh-key", id_seed(m.id), 0));
                registry.register(m.id, k.public.clone())?;
                keys.insert(m.id, k);
            }
            Some(CryptoState { gp, keys, registry })
        } else {
            None
        };

        Ok(Simulation {
            cfg: cfg.clone(),
            spec,
            quant,
            exec,
            population,
            shards,
            backdoor_sets,
            test,
            global,
            history: UpdateHistory::new(),
            published_bound: cfg.aggregator.kind.is_bounded().then_some(cfg.aggregator.bound),
            round: 0,
            crypto,
            transcript_dir: None,
        })
    }

    fn backdoor_set(cfg: &ScenarioConfig, train: &Dataset, shard: &Dataset, adv: ClientId) -> Result<Dataset> {
        let a = &cfg.attack;
        let n = a.backdoor_samples;
        let mut rng = stream(cfg.seed, "backdoor-set", id_seed(adv), 0);
        if a.strategy == Strategy::LabelFlip {
            return Ok(shard.clone());
        }
        let main_class = a.strategy.targets_main_class();
        if cfg.data.train_file.is_none() {
            let syn = cfg.data.synthetic();
            return if main_class {
                syn.sample_class(a.source_class, n, &mut rng)
            } else {
                syn.sample_tail(n, &mut rng)
            };
        }
        let pool: Vec<usize> = (0..train.len())
            .filter(|&i| {
                if main_class {
                    !train.is_tail(i) && train.label(i) == a.source_class
                } else {
                    train.is_tail(i)
                }
            })
            .collect();
        if pool.is_empty() {
            return Err(Error::Data("training file has no samples for the backdoor set".into()));
        }
        let idx: Vec<usize> = (0..n).map(|_| pool[rng.random_range(0..pool.len())]).collect();
        Ok(train.subset(&idx))
    }

    /// Writes one transcript per crypto round into `dir`.
    pub fn set_transcript_dir(&mut self, dir: Option<PathBuf>) {
        self.transcript_dir = dir;
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn population(&self) -> &Population {
        &self.population
    }

    pub fn global(&self) -> &ParameterVector {
        &self.global
    }

    pub fn test_set(&self) -> &Dataset {
        &self.test
    }

    pub fn model_spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn rounds_done(&self) -> u64 {
        self.round
    }

    pub fn shard_of(&self, id: ClientId) -> &Dataset {
        let owner = self.population.get(id).and_then(|m| m.owner()).unwrap_or(id);
        &self.shards[owner as usize]
    }

    fn bounded_clip(&self, v: ParameterVector) -> Result<ParameterVector> {
        match self.published_bound {
            Some(b) => clip_to_norm(&v, b, self.cfg.aggregator.p),
            None => Ok(v),
        }
    }

    fn honest_update(&self, id: ClientId, t: u64) -> Result<ParameterVector> {
        let mut rng = stream(self.cfg.seed, "train", id_seed(id), t);
        let dw = local_train(&self.spec, &self.global, self.shard_of(id), &self.cfg.train, &mut rng)?;
        self.bounded_clip(dw)
    }

    /// Attack updates of `adv`'s identities `ids`, with declared norms where
    /// the strategy lies about them. The flag reports exhausted orthogonal
    /// directions.
    fn attack_updates(&self, adv: ClientId, ids: &[ClientId], t: u64) -> Result<(Vec<Produced>, bool)> {
        let a = &self.cfg.attack;
        let seed = self.cfg.seed;
        let p = self.cfg.aggregator.p;
        let target = self.cfg.target_label();
        let shard = &self.shards[adv as usize];
        let bset = &self.backdoor_sets[&adv];
        let acfg = TrainConfig {
            epochs: a.epochs,
            ..self.cfg.train
        };
        let boosted_backdoor = |rng: &mut ChaCha8Rng| -> Result<ParameterVector> {
            let dw = train_backdoor(&self.spec, &self.global, shard, bset, target, a.blend, None, &acfg, rng)?;
            self.bounded_clip(scale_update(&dw, a.boost)?)
        };
        let each = |f: &(dyn Fn(ClientId) -> Result<ParameterVector> + Sync)| {
            self.exec
                .try_map(ids, |&id| f(id).map(|u| (id, u, None)))
                .map(|v| (v, false))
        };
        match a.strategy {
            Strategy::LabelFlip => {
                let flipped = label_flip(shard, a.source_class, target)?;
                each(&|id| {
                    let mut rng = stream(seed, "attack", id_seed(id), t);
                    self.bounded_clip(local_train(&self.spec, &self.global, &flipped, &acfg, &mut rng)?)
                })
            }
            Strategy::Scale => each(&|id| {
                let mut rng = stream(seed, "train", id_seed(id), t);
                let dw = local_train(&self.spec, &self.global, shard, &self.cfg.train, &mut rng)?;
                self.bounded_clip(scale_update(&dw, a.boost)?.scaled(-1.0))
            }),
            Strategy::BackdoorPrototypical | Strategy::BackdoorTail => {
                each(&|id| boosted_backdoor(&mut stream(seed, "attack", id_seed(id), t)))
            }
            Strategy::SybilTail => {
                let shared = boosted_backdoor(&mut stream(seed, "attack-shared", id_seed(adv), t))?;
                let bound = self.published_bound.unwrap_or_else(|| shared.norm(p));
                if !(bound > 0.0) {
                    return Ok((ids.iter().map(|&id| (id, shared.clone(), None)).collect(), false));
                }
                let (ups, wrapped) = sybil_tail_round(&shared, ids, bound, p, a.diversification, |id| {
                    stream(seed, "sybil-direction", id_seed(id), t)
                })?;
                Ok((
                    ids.iter().copied().zip(ups).map(|(id, u)| (id, u, None)).collect(),
                    wrapped,
                ))
            }
            Strategy::StatManip => {
                let bound = self.published_bound.unwrap_or(self.cfg.aggregator.bound);
                let poisoned = relabel_all(bset, target)?;
                let dir = backdoor_direction(&self.spec, &self.global, &poisoned)?;
                let ups = stat_manip_round(ids, bound, p, &dir)?;
                Ok((
                    ids.iter()
                        .copied()
                        .zip(ups)
                        .map(|(id, (u, n))| (id, u, Some(n)))
                        .collect(),
                    false,
                ))
            }
        }
    }

    fn tolerance(&self) -> f64 {
        match self.cfg.aggregator.p {
            Norm::L2 => self.quant.scale() * (self.spec.dim() as f64).sqrt(),
            Norm::LInf => self.quant.scale(),
        }
    }

    fn rate(&self, rows: &[usize], wanted: impl Fn(usize) -> usize) -> Result<f64> {
        if rows.is_empty() {
            return Ok(0.0);
        }
        self.spec.hit_rate(&self.global, &self.test, rows, wanted)
    }

    /// Main accuracy, backdoor accuracy, tail error of the current model.
    pub fn evaluate(&self) -> Result<(f64, f64, f64)> {
        let test = &self.test;
        let main: Vec<usize> = (0..test.len()).filter(|&i| !test.is_tail(i)).collect();
        let tail: Vec<usize> = (0..test.len()).filter(|&i| test.is_tail(i)).collect();
        let target = self.cfg.target_label();
        let main_acc = self.rate(&main, |i| test.label(i))?;
        let backdoor_acc = if self.cfg.population.adversaries > 0 && self.cfg.attack.strategy.targets_main_class() {
            let src: Vec<usize> = main
                .iter()
                .copied()
                .filter(|&i| test.label(i) == self.cfg.attack.source_class)
                .collect();
            self.rate(&src, |_| target)?
        } else {
            self.rate(&tail, |_| target)?
        };
        let tail_error = if tail.is_empty() {
            0.0
        } else {
            1.0 - self.rate(&tail, |i| test.label(i))?
        };
        Ok((main_acc, backdoor_acc, tail_error))
    }

    /// Runs the next round and applies its aggregate.
    pub fn step(&mut self) -> Result<RoundRecord> {
        let started = Instant::now();
        let t = self.round + 1;
        let seed = self.cfg.seed;
        let active = self.population.active(t);
        let s = self.cfg.population.sample.min(active.len());
        let mut sampled = sample_clients(&active, s, &mut stream(seed, "sample", 0, t))?;
        let substituted = if self.cfg.attack.schedule == Schedule::FixedFrequency {
            enforce_fixed_frequency(
                &mut sampled,
                &active,
                &self.population,
                &mut stream(seed, "fixed-frequency", 0, t),
            )
        } else {
            None
        };
        let malicious = attacks::schedule(&self.cfg.attack, t, &sampled, &self.population);

        let honest_ids: Vec<ClientId> = sampled.iter().copied().filter(|id| !malicious.contains(id)).collect();
        let mut raw: Vec<Produced> = self
            .exec
            .try_map(&honest_ids, |&id| self.honest_update(id, t).map(|u| (id, u, None)))?;
        let mut quasi_orthogonal = false;
        let mut by_owner: BTreeMap<ClientId, Vec<ClientId>> = BTreeMap::new();
        for &id in &malicious {
            let owner = self.population.get(id).and_then(|m| m.owner()).unwrap_or(id);
            by_owner.entry(owner).or_default().push(id);
        }
        for (adv, ids) in &by_owner {
            let (ups, wrapped) = self.attack_updates(*adv, ids, t)?;
            quasi_orthogonal |= wrapped;
            raw.extend(ups);
        }
        raw.sort_by_key(|(id, _, _)| *id);

        let p = self.cfg.aggregator.p;
        let contributions: Vec<Contribution> = self.exec.try_map(&raw, |(id, u, declared)| {
            let codes = self.quant.quantize(&self.quant.clamp(u))?.values;
            let update = self.quant.dequantize(&codes);
            let declared = declared.unwrap_or_else(|| update.norm(p));
            Ok::<_, Error>(Contribution {
                client: *id,
                codes,
                update,
                declared,
            })
        })?;
        let declared_norms: Vec<(ClientId, f64)> = contributions.iter().map(|c| (c.client, c.declared)).collect();
        let norms: Vec<f64> = declared_norms.iter().map(|(_, n)| *n).collect();
        let median_norm = median(&norms)?;

        let (result, aborted, range_bits) = match self.cfg.mode {
            ProtocolMode::Plaintext => {
                let subs: Vec<Submission> = contributions
                    .iter()
                    .map(|c| Submission {
                        client: c.client,
                        update: c.update.clone(),
                        declared_norm: c.declared,
                    })
                    .collect();
                (
                    aggregators::aggregate(&subs, &self.cfg.aggregator, &self.history, self.tolerance())?,
                    None,
                    None,
                )
            }
            ProtocolMode::Crypto => self.crypto_round(t, &sampled, &contributions)?,
        };

        if aborted.is_none() {
            self.global = self.global.add(&result.delta)?;
            for c in &contributions {
                self.history.record(c.client, &c.update)?;
            }
        }
        if self.cfg.aggregator.kind.is_bounded() {
            self.published_bound = result.bound;
        }
        self.round = t;
        let (main_acc, backdoor_acc, tail_error) = self.evaluate()?;
        Ok(RoundRecord {
            round: t,
            mode: self.cfg.mode,
            sampled,
            malicious,
            substituted,
            declared_norms,
            bound: result.bound,
            range_bits,
            median_norm,
            accepted: result.accepted,
            rejected: result.rejected,
            clipped: result.clipped,
            weights: result.weights.into_iter().collect(),
            empty_aggregate: result.empty,
            quasi_orthogonal,
            aborted,
            main_acc,
            backdoor_acc,
            tail_error,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
            checksum: self.global.checksum(),
        })
    }

    /// Proof window for round bound `bound`.
    fn policy(&self, bound: Option<f64>) -> Result<RangePolicy> {
        let full = RangePolicy::full(self.quant.bits());
        match (bound, self.cfg.aggregator.p) {
            (Some(b), Norm::LInf) if b < self.quant.range() => {
                let lo = self.quant.quantize_value(-b)?;
                let hi = self.quant.quantize_value(b)?;
                let width = hi - lo + 1;
                let bits = (u64::BITS - (width - 1).leading_zeros()).max(1);
                Ok(if bits >= full.bits {
                    full
                } else {
                    RangePolicy { bits, shift: lo }
                })
            }
            _ => Ok(full),
        }
    }

    fn crypto_round(
        &self,
        t: u64,
        sampled: &[ClientId],
        contributions: &[Contribution],
    ) -> Result<(AggregationResult, Option<String>, Option<u32>)> {
        let cs = self.crypto.as_ref().expect("crypto state exists in crypto mode");
        let gp = &cs.gp;
        let d = self.spec.dim();
        let norms: Vec<f64> = contributions.iter().map(|c| c.declared).collect();
        let bound = self.cfg.aggregator.round_bound(&norms)?;
        let policy = self.policy(bound)?;

        let mut pairs = Vec::new();
        for (i, &a) in sampled.iter().enumerate() {
            for &b in &sampled[i + 1..] {
                pairs.push((a, b));
            }
        }
        let seeds: BTreeMap<(ClientId, ClientId), MaskSeed> = self
            .exec
            .try_map(&pairs, |&(a, b)| {
                cs.registry.derive(&cs.keys[&a], b, t, gp).map(|s| ((a, b), s))
            })?
            .into_iter()
            .collect();

        let envelopes: Vec<ClientEnvelope> = self.exec.try_map(contributions, |c| {
            let mask = compute_client_mask(c.client, sampled, &seeds, t, d, gp)?;
            match build_envelope(
                &c.codes,
                &mask,
                policy,
                c.declared,
                c.client,
                t,
                gp,
                Execution::Sequential,
            ) {
                Err(Error::Precondition(_)) => {
                    let full = RangePolicy::full(self.quant.bits());
                    build_envelope(
                        &c.codes,
                        &mask,
                        full,
                        c.declared,
                        c.client,
                        t,
                        gp,
                        Execution::Sequential,
                    )
                }
                other => other,
            }
        })?;

        let mut round = SecureAggRound::new(gp.clone(), t, d, policy);
        for env in envelopes {
            round.submit(env)?;
        }
        let verdicts = round.verify(self.exec).clone();

        let mut out = AggregationResult {
            delta: ParameterVector::zeros(d),
            bound,
            ..Default::default()
        };
        let mut rejected: BTreeMap<ClientId, String> = BTreeMap::new();
        if let Some(b) = bound {
            let filter = norm_bound_filter(&declared_pairs(contributions), b, BoundMode::Reject, self.tolerance())?;
            rejected.extend(filter.rejected);
        }
        for (id, v) in &verdicts {
            if let Verdict::Reject(reason) = v {
                rejected.insert(*id, format!("envelope rejected: {reason}"));
            }
        }
        let included: Vec<ClientId> = sampled
            .iter()
            .copied()
            .filter(|id| !rejected.contains_key(id))
            .collect();
        let key: Vec<Scalar> = if included.len() == sampled.len() {
            vec![gp.zero(); d]
        } else {
            subset_decoding_key(&included, sampled, &seeds, t, d, gp)?
        };
        let agg = if included.is_empty() {
            None
        } else {
            Some(round.aggregate(&included, &key, self.exec))
        };
        if let (Some(dir), Some(res)) = (&self.transcript_dir, &agg) {
            let tr = RoundTranscript::capture(&round, &included, &key, res)?;
            tr.write(&dir.join(format!("round_{t:04}.bin")))?;
        }

        out.rejected = rejected.into_iter().collect();
        out.accepted = included.clone();
        let aborted = match agg {
            None => {
                out.empty = true;
                None
            }
            Some(Ok(sum)) => {
                let n = sum.count as f64;
                let total = self.quant.dequantize_sum(&sum.sums, sum.count);
                out.delta = ParameterVector::new(total.iter().map(|x| x / n).collect())?;
                out.weights = included.iter().map(|&c| (c, 1.0 / n)).collect();
                None
            }
            Some(Err(Error::Abort(msg))) => Some(msg),
            Some(Err(e)) => return Err(e),
        };
        Ok((out, aborted, Some(policy.bits)))
    }

    /// Runs the remaining rounds. Under `abort_policy = stop` the run ends at
    /// the first aborted round, which is still returned.
    pub fn run(&mut self) -> Result<Vec<RoundRecord>> {
        let mut records = Vec::new();
        while self.round < self.cfg.rounds {
            let r = self.step()?;
            let stop = r.aborted.is_some() && self.cfg.abort_policy == super::config::AbortPolicy::Stop;
            records.push(r);
            if stop {
                break;
            }
        }
        Ok(records)
    }
}

fn declared_pairs(cs: &[Contribution]) -> Vec<(ClientId, f64)> {
    cs.iter().map(|c| (c.client, c.declared)).collect()
}
