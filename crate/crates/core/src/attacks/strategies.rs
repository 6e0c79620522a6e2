use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::{clip_to_norm, local_train, p_norm, Dataset, ModelSpec, Norm, ParameterVector, TrainConfig};
use crate::secagg::ClientId;

/// Relabels every sample of `from` as `to`.
pub fn label_flip(shard: &Dataset, from: usize, to: usize) -> Result<Dataset> {
    let mut out = shard.clone();
    for i in 0..out.len() {
        if out.label(i) == from {
            out.set_label(i, to)?;
        }
    }
    Ok(out)
}

pub fn scale_update(dw: &[f64], gamma: f64) -> Result<ParameterVector> {
    if !(gamma >= 1.0) || !gamma.is_finite() {
        return Err(Error::config(
            "attack.boost",
            format!("boost must be finite and ≥ 1, got {gamma}"),
        ));
    }
    ParameterVector::new(dw.iter().map(|x| gamma * x).collect())
}

/// Every sample of `source` relabelled as the target.
pub fn relabel_all(source: &Dataset, target: usize) -> Result<Dataset> {
    let mut out = source.clone();
    for i in 0..out.len() {
        out.set_label(i, target)?;
    }
    Ok(out)
}

/// Trains on the honest shard plus backdoor samples relabelled to `target`,
/// the latter making up fraction `lambda` of the mixture (cycled as needed),
/// and clips the result to `bound` when one is given.
#[allow(clippy::too_many_arguments)]
pub fn train_backdoor(
    spec: &ModelSpec,
    global: &[f64],
    honest: &Dataset,
    backdoor: &Dataset,
    target: usize,
    lambda: f64,
    bound: Option<(f64, Norm)>,
    cfg: &TrainConfig,
    rng: &mut impl Rng,
) -> Result<ParameterVector> {
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(Error::config(
            "attack.blend",
            format!("blend must lie in (0, 1], got {lambda}"),
        ));
    }
    if honest.is_empty() || backdoor.is_empty() {
        return Err(Error::Precondition(
            "backdoor training needs nonempty honest and backdoor shards".into(),
        ));
    }
    let poisoned = relabel_all(backdoor, target)?;
    let mixture = if lambda >= 1.0 {
        poisoned
    } else {
        let n_bd = ((lambda / (1.0 - lambda)) * honest.len() as f64).round().max(1.0) as usize;
        let idx: Vec<usize> = (0..n_bd).map(|i| i % poisoned.len()).collect();
        honest.concat(&poisoned.subset(&idx))?
    };
    let dw = local_train(spec, global, &mixture, cfg, rng)?;
    match bound {
        Some((b, p)) => clip_to_norm(&dw, b, p),
        None => Ok(dw),
    }
}

/// Unit vectors from `seeds`, orthonormalised against `shared` and each
/// other. Past `d − 1` directions the remaining ones are only orthogonal to
/// `shared`; the returned flag reports that wrap.
pub fn orthogonal_directions(shared: &[f64], mut seeds: Vec<impl Rng>) -> (Vec<Vec<f64>>, bool) {
    let d = shared.len();
    let unit = |v: &[f64]| -> Option<Vec<f64>> {
        let n = p_norm(v, Norm::L2);
        (n > 1e-9).then(|| v.iter().map(|x| x / n).collect())
    };
    let mut basis: Vec<Vec<f64>> = unit(shared).into_iter().collect();
    let mut out = Vec::with_capacity(seeds.len());
    let mut wrapped = false;
    for rng in &mut seeds {
        let against = if basis.len() < d {
            basis.len()
        } else {
            1.min(basis.len())
        };
        wrapped |= basis.len() >= d;
        loop {
            let mut v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            for _ in 0..2 {
                for b in &basis[..against] {
                    let c: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                    v.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
                }
            }
            if let Some(u) = unit(&v) {
                if basis.len() < d {
                    basis.push(u.clone());
                }
                out.push(u);
                break;
            }
        }
    }
    (out, wrapped)
}

/// Per-sybil updates `clip(Δ + ρ·B·u_i, B)` around the shared backdoor
/// update `Δ`. A lone sybil submits `Δ` itself.
pub fn sybil_tail_round(
    shared: &ParameterVector,
    sybils: &[ClientId],
    bound: f64,
    p: Norm,
    rho: f64,
    direction_rng: impl Fn(ClientId) -> rand_chacha::ChaCha8Rng,
) -> Result<(Vec<ParameterVector>, bool)> {
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::config(
            "attack.diversification",
            format!("must lie in [0, 1), got {rho}"),
        ));
    }
    if sybils.len() <= 1 || rho == 0.0 {
        return Ok((vec![shared.clone(); sybils.len()], false));
    }
    let (dirs, wrapped) = orthogonal_directions(shared, sybils.iter().map(|&s| direction_rng(s)).collect());
    let updates = dirs
        .iter()
        .map(|u| {
            let v: Vec<f64> = shared.iter().zip(u).map(|(s, u)| s + rho * bound * u).collect();
            clip_to_norm(&v, bound, p)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((updates, wrapped))
}

/// Normalised descent direction of the backdoor loss at `global`.
pub fn backdoor_direction(spec: &ModelSpec, global: &[f64], poisoned: &Dataset) -> Result<ParameterVector> {
    let rows: Vec<usize> = (0..poisoned.len()).collect();
    let g = spec.grad(global, poisoned, &rows)?;
    let n = g.norm(Norm::L2);
    if n == 0.0 {
        let mut e = vec![0.0; g.len()];
        e[0] = 1.0;
        return ParameterVector::new(e);
    }
    Ok(g.scaled(-1.0 / n))
}

/// Each sybil submits `direction` rescaled to p-norm exactly `bound` and
/// declares `bound` as its norm.
pub fn stat_manip_round(
    sybils: &[ClientId],
    bound: f64,
    p: Norm,
    direction: &[f64],
) -> Result<Vec<(ParameterVector, f64)>> {
    let n = p_norm(direction, p);
    if !(n > 0.0) {
        return Err(Error::Precondition("stat_manip needs a nonzero direction".into()));
    }
    let v = ParameterVector::new(direction.iter().map(|x| x * bound / n).collect())?;
    Ok(sybils.iter().map(|_| (v.clone(), bound)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{backdoor_eval, evaluate, gen_synthetic, SyntheticSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn shard(labels: &[usize]) -> Dataset {
        Dataset::new(
            vec![0.5; labels.len() * 4],
            4,
            labels.to_vec(),
            vec![false; labels.len()],
            3,
            1,
        )
        .unwrap()
    }

    #[test]
    fn flipping_labels() {
        let mut labels = vec![0; 30];
        labels.extend([1; 5]);
        labels.extend([2; 5]);
        let s = shard(&labels);
        let f = label_flip(&s, 0, 1).unwrap();
        assert_eq!(f.labels().iter().filter(|&&l| l == 0).count(), 0);
        assert_eq!(f.labels().iter().filter(|&&l| l == 1).count(), 35);
        let only12 = shard(&[1, 2, 2]);
        assert_eq!(label_flip(&only12, 0, 2).unwrap(), only12);
        let back = label_flip(&f, 1, 0).unwrap();
        assert_eq!(back.labels().iter().filter(|&&l| l == 0).count(), 35);
    }

    #[test]
    fn scaling() {
        assert_eq!(&*scale_update(&[0.1, -2.0], 1.0).unwrap(), &[0.1, -2.0]);
        assert_eq!(&*scale_update(&[0.1], 10.0).unwrap(), &[1.0]);
        assert!(scale_update(&[1.0], 0.5).is_err());
    }

    #[test]
    fn clipping_absorbs_any_boost() {
        let dw = [0.3, -0.4, 0.0];
        let b = 0.2;
        let base = clip_to_norm(&dw, b, Norm::L2).unwrap();
        for gamma in [1.0, 3.0, 10.0, 1e6] {
            let c = clip_to_norm(&scale_update(&dw, gamma).unwrap(), b, Norm::L2).unwrap();
            assert!((c.norm(Norm::L2) - b).abs() < 1e-12);
            for (x, y) in c.iter().zip(base.iter()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    fn task() -> (ModelSpec, SyntheticSpec, Dataset, Dataset) {
        let ds = SyntheticSpec::default();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let train = gen_synthetic(&ds, &mut rng).unwrap();
        let test = gen_synthetic(
            &SyntheticSpec {
                samples: 2000,
                ..ds.clone()
            },
            &mut rng,
        )
        .unwrap();
        (ModelSpec::logreg(ds.features, ds.classes), ds, train, test)
    }

    #[test]
    fn overfit_backdoor_dominates_tail() {
        let (spec, ds, train, test) = task();
        let honest = train.subset(&(0..600).collect::<Vec<_>>());
        let tail = ds.sample_tail(64, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let cfg = TrainConfig {
            epochs: 20,
            ..Default::default()
        };
        let w = ParameterVector::zeros(spec.dim());
        let dw = train_backdoor(
            &spec,
            &w,
            &honest,
            &tail,
            1,
            1.0,
            None,
            &cfg,
            &mut ChaCha8Rng::seed_from_u64(4),
        )
        .unwrap();
        assert!(backdoor_eval(&spec, &dw, &test).unwrap() >= 0.9);
    }

    #[test]
    fn small_blend_is_stealthy() {
        let (spec, ds, train, test) = task();
        let honest = train.subset(&(0..600).collect::<Vec<_>>());
        let tail = ds.sample_tail(64, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let cfg = TrainConfig {
            epochs: 5,
            ..Default::default()
        };
        let w = ParameterVector::zeros(spec.dim());
        let clean = local_train(&spec, &w, &honest, &cfg, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let bd = train_backdoor(
            &spec,
            &w,
            &honest,
            &tail,
            1,
            0.1,
            None,
            &cfg,
            &mut ChaCha8Rng::seed_from_u64(4),
        )
        .unwrap();
        let (a, b) = (
            evaluate(&spec, &clean, &test).unwrap(),
            evaluate(&spec, &bd, &test).unwrap(),
        );
        assert!((a - b).abs() <= 0.05, "{a} vs {b}");
    }

    #[test]
    fn over_tight_bound_pins_the_norm() {
        let (spec, ds, train, _) = task();
        let honest = train.subset(&(0..200).collect::<Vec<_>>());
        let tail = ds.sample_tail(16, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let w = ParameterVector::zeros(spec.dim());
        let dw = train_backdoor(
            &spec,
            &w,
            &honest,
            &tail,
            1,
            0.5,
            Some((1e-4, Norm::L2)),
            &TrainConfig::default(),
            &mut ChaCha8Rng::seed_from_u64(1),
        )
        .unwrap();
        assert!((dw.norm(Norm::L2) - 1e-4).abs() < 1e-12);
    }

    fn cos(a: &[f64], b: &[f64]) -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        dot / (p_norm(a, Norm::L2) * p_norm(b, Norm::L2))
    }

    fn shared(d: usize) -> ParameterVector {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        clip_to_norm(&v, 1.0, Norm::L2).unwrap()
    }

    #[test]
    fn clones_without_diversification() {
        let s = shared(63);
        let (ups, _) = sybil_tail_round(&s, &[7, 8, 9], 1.0, Norm::L2, 0.0, |id| {
            ChaCha8Rng::seed_from_u64(id as u64)
        })
        .unwrap();
        assert!(ups.iter().all(|u| u == &s));
        assert!((cos(&ups[0], &ups[1]) - 1.0).abs() < 1e-12);
        let (one, _) =
            sybil_tail_round(&s, &[7], 1.0, Norm::L2, 0.2, |id| ChaCha8Rng::seed_from_u64(id as u64)).unwrap();
        assert_eq!(one, vec![s]);
    }

    #[test]
    fn diversified_sybils_differ_but_respect_bound() {
        let s = shared(63);
        let (ups, wrapped) = sybil_tail_round(&s, &[7, 8, 9], 1.0, Norm::L2, 0.2, |id| {
            ChaCha8Rng::seed_from_u64(id as u64)
        })
        .unwrap();
        assert!(!wrapped);
        for i in 0..3 {
            assert!(ups[i].norm(Norm::L2) <= 1.0 + 1e-12);
            for j in i + 1..3 {
                assert!(cos(&ups[i], &ups[j]) < 1.0 - 1e-6);
            }
        }
    }

    #[test]
    fn directions_are_orthonormal_until_they_wrap() {
        let s = shared(4);
        let seeds = (0..5).map(ChaCha8Rng::seed_from_u64).collect();
        let (dirs, wrapped) = orthogonal_directions(&s, seeds);
        assert!(wrapped);
        for (i, u) in dirs.iter().enumerate() {
            assert!((p_norm(u, Norm::L2) - 1.0).abs() < 1e-12);
            assert!(cos(u, &s).abs() < 1e-9);
            for v in &dirs[..i.min(3)] {
                if i < 3 {
                    assert!(cos(u, v).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn stat_manip_uses_exact_bound() {
        let dir = [3.0, -4.0];
        for (p, b) in [(Norm::L2, 2.25), (Norm::LInf, 0.7)] {
            let ups = stat_manip_round(&[1, 2], b, p, &dir).unwrap();
            assert_eq!(ups.len(), 2);
            for (u, declared) in ups {
                assert_eq!(declared, b);
                assert!((u.norm(p) - b).abs() < 1e-12);
            }
        }
    }
}
