use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::data::Dataset;
use super::net::ModelSpec;
use super::vector::ParameterVector;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 1,
            lr: 0.1,
            batch_size: 32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::config(
                format!("{prefix}.lr"),
                format!("must be finite and ≥ 0, got {}", self.lr),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::config(format!("{prefix}.batch_size"), "must be at least 1"));
        }
        Ok(())
    }
}

/// Mini-batch SGD from `global`; returns `trained − global`. Each epoch
/// reshuffles the shard with `rng`.
pub fn local_train(
    spec: &ModelSpec,
    global: &[f64],
    shard: &Dataset,
    cfg: &TrainConfig,
    rng: &mut impl Rng,
) -> Result<ParameterVector> {
    cfg.validate("train")?;
    if shard.is_empty() {
        return Err(Error::Precondition("local training on an empty shard".into()));
    }
    let mut params = ParameterVector::new(global.to_vec())?;
    let mut order: Vec<usize> = (0..shard.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for batch in order.chunks(cfg.batch_size) {
            let g = spec.grad(&params, shard, batch)?;
            params.axpy(-cfg.lr, &g)?;
        }
    }
    params.sub(global)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::data::{gen_synthetic, SyntheticSpec};
    use crate::model::net::evaluate;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (ModelSpec, Dataset) {
        let data = gen_synthetic(&SyntheticSpec::default(), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        (ModelSpec::logreg(20, 3), data)
    }

    #[test]
    fn zero_epochs_or_rate_give_zero_update() {
        let (spec, data) = setup();
        let w = spec.init(1.0, &mut ChaCha8Rng::seed_from_u64(1));
        let shard = data.subset(&(0..100).collect::<Vec<_>>());
        for cfg in [
            TrainConfig {
                epochs: 0,
                ..Default::default()
            },
            TrainConfig {
                lr: 0.0,
                ..Default::default()
            },
        ] {
            let dw = local_train(&spec, &w, &shard, &cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
            assert!(dw.iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn same_seed_same_update() {
        let (spec, data) = setup();
        let shard = data.subset(&(0..300).collect::<Vec<_>>());
        let w = ParameterVector::zeros(spec.dim());
        let cfg = TrainConfig::default();
        let a = local_train(&spec, &w, &shard, &cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = local_train(&spec, &w, &shard, &cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let c = local_train(&spec, &w, &shard, &cfg, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a.checksum(), b.checksum());
        assert_ne!(a.checksum(), c.checksum());
    }

    #[test]
    fn empty_shard_is_refused() {
        let (spec, data) = setup();
        let empty = data.subset(&[]);
        let w = ParameterVector::zeros(spec.dim());
        assert!(local_train(
            &spec,
            &w,
            &empty,
            &TrainConfig::default(),
            &mut ChaCha8Rng::seed_from_u64(0)
        )
        .is_err());
    }

    #[test]
    fn clean_centralised_training_reaches_ninety_percent() {
        let (spec, data) = setup();
        let test = gen_synthetic(
            &SyntheticSpec {
                samples: 2000,
                ..Default::default()
            },
            &mut ChaCha8Rng::seed_from_u64(10),
        )
        .unwrap();
        let w = ParameterVector::zeros(spec.dim());
        let cfg = TrainConfig {
            epochs: 3,
            ..Default::default()
        };
        let dw = local_train(&spec, &w, &data, &cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let acc = evaluate(&spec, &w.add(&dw).unwrap(), &test).unwrap();
        assert!(acc >= 0.9, "{acc}");
    }
}
