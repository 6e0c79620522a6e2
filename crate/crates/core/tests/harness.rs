use proptest::prelude::*;

use sybil_lab::attacks::scale_update;
use sybil_lab::exec::Execution;
use sybil_lab::model::{clip_to_norm, Norm};
use sybil_lab::sim::{run_scenario, RoundRecord, ScenarioConfig, Simulation};

/// Six rounds on a small task; `extra` holds tables only.
fn scenario(extra: &str) -> ScenarioConfig {
    let text = format!("rounds = 6\n[data]\nsamples = 1200\ntest_samples = 400\n{extra}");
    ScenarioConfig::from_toml_str(&text).unwrap()
}

fn records(cfg: &ScenarioConfig) -> Vec<RoundRecord> {
    run_scenario(cfg, None, Execution::Parallel).unwrap().records
}

fn check_accounting(recs: &[RoundRecord]) {
    for r in recs {
        let mut seen: Vec<u32> = r
            .accepted
            .iter()
            .copied()
            .chain(r.rejected.iter().map(|(id, _)| *id))
            .collect();
        seen.sort_unstable();
        assert_eq!(seen, r.sampled, "round {}", r.round);
        assert!(r.malicious.iter().all(|id| r.sampled.contains(id)), "round {}", r.round);
        if let Some(gone) = r.substituted {
            assert!(!r.sampled.contains(&gone));
            assert!(!r.malicious.is_empty());
        }
    }
}

#[test]
fn accounting_holds_across_aggregators_and_schedules() {
    let cases = [
        "[aggregator]\nkind = \"multi_krum\"\n[population]\nadversaries = 1\n[attack]\nstrategy = \"scale\"\n",
        "[aggregator]\nkind = \"norm_bound_dynamic\"\n[population]\nadversaries = 2\n[attack]\nstrategy = \"stat_manip\"\nsybils = 3\n",
        "[aggregator]\nkind = \"trimmed_mean\"\n[population]\nadversaries = 1\n[attack]\nstrategy = \"label_flip\"\nschedule = \"fixed_frequency\"\n",
        "[aggregator]\nkind = \"norm_bound_static\"\nbound = 0.05\n[population]\nadversaries = 1\n[attack]\nstrategy = \"backdoor_tail\"\nschedule = \"single_shot@3\"\n",
        "[aggregator]\nkind = \"coord_median\"\n",
    ];
    for extra in cases {
        check_accounting(&records(&scenario(extra)));
    }
}

#[test]
fn fixed_frequency_puts_an_attacker_in_every_round() {
    let cfg =
        scenario("[population]\nhonest = 20\nadversaries = 1\nsample = 2\n[attack]\nschedule = \"fixed_frequency\"\n");
    let recs = records(&cfg);
    assert!(recs.iter().all(|r| r.malicious.len() == 1));
    assert!(recs.iter().any(|r| r.substituted.is_some()));
}

#[test]
fn single_shot_fires_only_in_its_round() {
    let cfg =
        scenario("[population]\nhonest = 4\nadversaries = 1\nsample = 5\n[attack]\nschedule = \"single_shot@4\"\n");
    for r in records(&cfg) {
        assert_eq!(!r.malicious.is_empty(), r.round == 4, "round {}", r.round);
    }
}

#[test]
fn population_grows_monotonically_under_geometric_spawn() {
    let mut cfg = scenario(
        "[population]\nadversaries = 1\n[attack]\nsybils = 7\n[attack.spawn]\nkind = \"geometric\"\nround = 2\ninitial = 1\nevery = 3\n",
    );
    cfg.rounds = 20;
    let sim = Simulation::new(&cfg, Execution::Sequential).unwrap();
    let sizes: Vec<usize> = (0..=20).map(|t| sim.population().active(t).len()).collect();
    assert!(sizes.windows(2).all(|w| w[0] <= w[1]));
    assert_eq!(sizes[1], 11);
    assert_eq!(sizes[20], 18);
}

#[test]
fn bounded_attacks_pass_the_reject_filter() {
    let cases = [
        "[aggregator]\nkind = \"norm_bound_static\"\nbound = 0.5\n[population]\nadversaries = 1\n[attack]\nstrategy = \"sybil_tail\"\nsybils = 6\ndiversification = 0.4\n[attack.spawn]\nkind = \"at\"\n",
        "[aggregator]\nkind = \"norm_bound_dynamic\"\np = \"linf\"\n[population]\nhonest = 3\nadversaries = 1\nsample = 8\n[attack]\nstrategy = \"stat_manip\"\nsybils = 4\n[attack.spawn]\nkind = \"at\"\n",
        "[aggregator]\nkind = \"norm_bound_static\"\n[population]\nadversaries = 1\n[attack]\nstrategy = \"backdoor_prototypical\"\n",
    ];
    for extra in cases {
        for r in records(&scenario(extra)) {
            for (id, why) in &r.rejected {
                assert!(
                    !r.malicious.contains(id),
                    "round {}: attacker {id} rejected: {why}",
                    r.round
                );
            }
        }
    }
}

#[test]
fn bounded_attacks_verify_in_crypto_mode() {
    let base =
        "mode = \"crypto\"\ngroup = \"compact\"\nrounds = 3\n[data]\nfeatures = 4\nclasses = 2\ntail_distance = 9.0\n\
                samples = 600\ntest_samples = 200\n[quantization]\nbits = 10\n";
    let cases = [
        "[aggregator]\nkind = \"norm_bound_static\"\nbound = 0.5\n[population]\nadversaries = 1\n[attack]\nstrategy = \"sybil_tail\"\nsybils = 3\n[attack.spawn]\nkind = \"at\"\n",
        "[aggregator]\nkind = \"norm_bound_dynamic\"\np = \"linf\"\n[population]\nhonest = 2\nadversaries = 1\nsample = 6\n[attack]\nstrategy = \"stat_manip\"\nsybils = 3\n[attack.spawn]\nkind = \"at\"\n",
    ];
    for extra in cases {
        let cfg = ScenarioConfig::from_toml_str(&format!("{base}{extra}")).unwrap();
        for r in records(&cfg) {
            assert!(r.aborted.is_none());
            assert!(r.range_bits.is_some());
            for (id, why) in &r.rejected {
                assert!(
                    !r.malicious.contains(id),
                    "round {}: attacker {id} rejected: {why}",
                    r.round
                );
            }
        }
    }
}

#[test]
fn linf_proof_window_rejects_an_oversized_update() {
    let cfg = ScenarioConfig::from_toml_str(
        "mode = \"crypto\"\ngroup = \"compact\"\nrounds = 2\n[data]\nfeatures = 4\nclasses = 2\ntail_distance = 9.0\n\
         samples = 600\ntest_samples = 200\n[quantization]\nbits = 10\n\
         [aggregator]\nkind = \"norm_bound_static\"\np = \"linf\"\nbound = 0.01\n",
    )
    .unwrap();
    // Honest clients clip to the bound, so nothing is rejected and the
    // proof window is narrower than the full code width.
    for r in records(&cfg) {
        assert!(r.rejected.is_empty());
        assert!(r.range_bits.unwrap() < 10);
    }
}

#[test]
fn reruns_are_identical() {
    let cfg = scenario("[aggregator]\nkind = \"foolsgold\"\n[population]\nadversaries = 1\n[attack]\nstrategy = \"sybil_tail\"\nsybils = 2\n");
    let strip = |mut rs: Vec<RoundRecord>| {
        rs.iter_mut().for_each(|r| r.wall_ms = 0.0);
        rs
    };
    let a = strip(records(&cfg));
    let b = strip(run_scenario(&cfg, None, Execution::Sequential).unwrap().records);
    assert_eq!(a, b);
    let other = strip(records(&ScenarioConfig { seed: 2, ..cfg }));
    assert_ne!(a.last().unwrap().checksum, other.last().unwrap().checksum);
}

#[test]
fn stop_policy_without_aborts_runs_to_completion() {
    let mut cfg = scenario("");
    cfg.abort_policy = sybil_lab::sim::AbortPolicy::Stop;
    assert_eq!(records(&cfg).len(), 6);
}

#[test]
fn artificial_tail_grows_only_adversary_shards() {
    let base = scenario("[population]\nadversaries = 1\n[attack]\nstrategy = \"sybil_tail\"\nsybils = 2\n");
    let mut cfg = base.clone();
    cfg.attack.artificial_tail = 40;
    let plain = Simulation::new(&base, Execution::Sequential).unwrap();
    let grown = Simulation::new(&cfg, Execution::Sequential).unwrap();
    let adv = grown.population().adversaries().next().unwrap();
    let tails = |d: &sybil_lab::model::Dataset| (0..d.len()).filter(|&i| d.is_tail(i)).count();
    assert_eq!(grown.shard_of(adv).len(), plain.shard_of(adv).len() + 40);
    assert_eq!(tails(grown.shard_of(adv)), tails(plain.shard_of(adv)) + 40);
    for m in grown.population().members() {
        if m.owner() == Some(adv) {
            assert_eq!(grown.shard_of(m.id).len(), grown.shard_of(adv).len());
        } else if m.id != adv {
            assert_eq!(grown.shard_of(m.id), plain.shard_of(m.id));
        }
    }
}

proptest! {
    #[test]
    fn clipping_nullifies_any_sufficient_boost(
        v in prop::collection::vec(-3.0f64..3.0, 1..12),
        bound in 0.01f64..2.0,
        extra in 1.0f64..50.0,
    ) {
        let n = sybil_lab::model::p_norm(&v, Norm::L2);
        prop_assume!(n > 1e-6);
        let gamma = (bound / n).max(1.0) * extra;
        let clipped = clip_to_norm(&scale_update(&v, gamma).unwrap(), bound, Norm::L2).unwrap();
        let reference = clip_to_norm(&scale_update(&v, (bound / n).max(1.0)).unwrap(), bound, Norm::L2).unwrap();
        prop_assert!((clipped.norm(Norm::L2) - bound).abs() <= 1e-9 * bound);
        for (a, b) in clipped.iter().zip(reference.iter()) {
            prop_assert!((a - b).abs() <= 1e-9 * bound.max(1.0));
        }
    }

    #[test]
    fn linf_clamp_of_a_boost_has_magnitude_bound(
        v in prop::collection::vec(-3.0f64..3.0, 1..12),
        bound in 0.01f64..2.0,
        extra in 1.0f64..50.0,
    ) {
        let n = sybil_lab::model::p_norm(&v, Norm::LInf);
        prop_assume!(n > 1e-6);
        let gamma = (bound / n).max(1.0) * extra;
        let clipped = clip_to_norm(&scale_update(&v, gamma).unwrap(), bound, Norm::LInf).unwrap();
        prop_assert_eq!(clipped.norm(Norm::LInf), bound);
    }
}
