//! Multinomial logistic regression and a one-hidden-layer tanh network,
//! trained on mean cross-entropy.
//!
//! Parameter layout (row-major):
//! logreg `[W (C×f) | b (C)]`, mlp `[W1 (H×f) | b1 (H) | W2 (C×H) | b2 (C)]`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::data::Dataset;
use super::vector::ParameterVector;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Logreg,
    Mlp { hidden: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelSpec {
    pub arch: Architecture,
    pub features: usize,
    pub classes: usize,
}

impl ModelSpec {
    pub fn new(arch: Architecture, features: usize, classes: usize) -> Result<Self> {
        if features == 0 {
            return Err(Error::config("data.features", "need at least one feature"));
        }
        if classes < 2 {
            return Err(Error::config("data.classes", "need at least two classes"));
        }
        if let Architecture::Mlp { hidden: 0 } = arch {
            return Err(Error::config("model.hidden", "hidden width must be positive"));
        }
        Ok(ModelSpec {
            arch,
            features,
            classes,
        })
    }

    pub fn logreg(features: usize, classes: usize) -> Self {
        Self::new(Architecture::Logreg, features, classes).expect("valid logreg shape")
    }

    pub fn dim(&self) -> usize {
        let (f, c) = (self.features, self.classes);
        match self.arch {
            Architecture::Logreg => c * f + c,
            Architecture::Mlp { hidden: h } => h * f + h + c * h + c,
        }
    }

    /// Gaussian weights with standard deviation `scale / √fan_in`, zero biases.
    pub fn init(&self, scale: f64, rng: &mut impl Rng) -> ParameterVector {
        let mut w = vec![0.0; self.dim()];
        let mut fill = |range: std::ops::Range<usize>, fan_in: usize| {
            let sd = scale / (fan_in as f64).sqrt();
            for x in &mut w[range] {
                *x = sd * rng.sample::<f64, _>(StandardNormal);
            }
        };
        let (f, c) = (self.features, self.classes);
        match self.arch {
            Architecture::Logreg => fill(0..c * f, f),
            Architecture::Mlp { hidden: h } => {
                fill(0..h * f, f);
                let w2 = h * f + h;
                fill(w2..w2 + c * h, h);
            }
        }
        ParameterVector::new(w).expect("finite init")
    }

    fn check(&self, params: &[f64], data: &Dataset) -> Result<()> {
        if params.len() != self.dim() {
            return Err(Error::Shape {
                expected: self.dim(),
                actual: params.len(),
            });
        }
        if data.n_features() != self.features {
            return Err(Error::Shape {
                expected: self.features,
                actual: data.n_features(),
            });
        }
        if data.classes() != self.classes {
            return Err(Error::Data(format!(
                "dataset has {} classes, model {}",
                data.classes(),
                self.classes
            )));
        }
        Ok(())
    }

    /// Fills `logits` (len C) and, for the mlp, `hidden` (len H).
    fn forward(&self, params: &[f64], x: &[f64], hidden: &mut [f64], logits: &mut [f64]) {
        let (f, c) = (self.features, self.classes);
        match self.arch {
            Architecture::Logreg => affine(&params[..c * f], &params[c * f..], x, logits),
            Architecture::Mlp { hidden: h } => {
                let (w1, rest) = params.split_at(h * f);
                let (b1, rest) = rest.split_at(h);
                let (w2, b2) = rest.split_at(c * h);
                affine(w1, b1, x, hidden);
                hidden.iter_mut().for_each(|a| *a = a.tanh());
                affine(w2, b2, hidden, logits);
            }
        }
    }

    fn hidden_width(&self) -> usize {
        match self.arch {
            Architecture::Logreg => 0,
            Architecture::Mlp { hidden } => hidden,
        }
    }

    pub fn predict(&self, params: &[f64], x: &[f64]) -> usize {
        let mut hidden = vec![0.0; self.hidden_width()];
        let mut logits = vec![0.0; self.classes];
        self.forward(params, x, &mut hidden, &mut logits);
        argmax(&logits)
    }

    /// Mean cross-entropy over `rows` and its exact gradient.
    pub fn loss_and_grad(&self, params: &[f64], data: &Dataset, rows: &[usize]) -> Result<(f64, ParameterVector)> {
        self.check(params, data)?;
        if rows.is_empty() {
            return Err(Error::Precondition("gradient of an empty batch".into()));
        }
        let (f, c, h) = (self.features, self.classes, self.hidden_width());
        let mut g = vec![0.0; self.dim()];
        let mut hidden = vec![0.0; h];
        let mut logits = vec![0.0; c];
        let mut dh = vec![0.0; h];
        let mut loss = 0.0;
        for &i in rows {
            let x = data.row(i);
            let y = data.label(i);
            self.forward(params, x, &mut hidden, &mut logits);
            loss += softmax_xent(&mut logits, y);
            let dz = &logits;
            match self.arch {
                Architecture::Logreg => {
                    let (gw, gb) = g.split_at_mut(c * f);
                    outer_add(gw, gb, dz, x);
                }
                Architecture::Mlp { .. } => {
                    let w2 = &params[h * f + h..h * f + h + c * h];
                    let (g1, g2) = g.split_at_mut(h * f + h);
                    let (gw2, gb2) = g2.split_at_mut(c * h);
                    outer_add(gw2, gb2, dz, &hidden);
                    for j in 0..h {
                        let back: f64 = (0..c).map(|k| w2[k * h + j] * dz[k]).sum();
                        dh[j] = back * (1.0 - hidden[j] * hidden[j]);
                    }
                    let (gw1, gb1) = g1.split_at_mut(h * f);
                    outer_add(gw1, gb1, &dh, x);
                }
            }
        }
        let n = rows.len() as f64;
        g.iter_mut().for_each(|v| *v /= n);
        Ok((loss / n, ParameterVector::new(g)?))
    }

    pub fn grad(&self, params: &[f64], data: &Dataset, rows: &[usize]) -> Result<ParameterVector> {
        Ok(self.loss_and_grad(params, data, rows)?.1)
    }

    pub fn loss(&self, params: &[f64], data: &Dataset, rows: &[usize]) -> Result<f64> {
        self.check(params, data)?;
        if rows.is_empty() {
            return Err(Error::Precondition("loss of an empty batch".into()));
        }
        let mut hidden = vec![0.0; self.hidden_width()];
        let mut logits = vec![0.0; self.classes];
        let total: f64 = rows
            .iter()
            .map(|&i| {
                self.forward(params, data.row(i), &mut hidden, &mut logits);
                softmax_xent(&mut logits, data.label(i))
            })
            .sum();
        Ok(total / rows.len() as f64)
    }

    /// Fraction of `rows` predicted as `wanted(row)`.
    pub fn hit_rate(
        &self,
        params: &[f64],
        data: &Dataset,
        rows: &[usize],
        wanted: impl Fn(usize) -> usize,
    ) -> Result<f64> {
        self.check(params, data)?;
        if rows.is_empty() {
            return Err(Error::Precondition("evaluation slice is empty".into()));
        }
        let hits = rows
            .iter()
            .filter(|&&i| self.predict(params, data.row(i)) == wanted(i))
            .count();
        Ok(hits as f64 / rows.len() as f64)
    }
}

fn affine(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let n = x.len();
    for (k, o) in out.iter_mut().enumerate() {
        *o = b[k] + w[k * n..(k + 1) * n].iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `gw += dz ⊗ x`, `gb += dz`
fn outer_add(gw: &mut [f64], gb: &mut [f64], dz: &[f64], x: &[f64]) {
    let n = x.len();
    for (k, &d) in dz.iter().enumerate() {
        gb[k] += d;
        for (g, xi) in gw[k * n..(k + 1) * n].iter_mut().zip(x) {
            *g += d * xi;
        }
    }
}

/// Returns `−log softmax(z)_y` and overwrites `z` with `softmax(z) − e_y`.
fn softmax_xent(z: &mut [f64], y: usize) -> f64 {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let zy = z[y];
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        sum += *v;
    }
    z.iter_mut().for_each(|v| *v /= sum);
    z[y] -= 1.0;
    m + sum.ln() - zy
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Accuracy on the non-tail samples.
pub fn evaluate(spec: &ModelSpec, params: &[f64], data: &Dataset) -> Result<f64> {
    let rows: Vec<usize> = (0..data.len()).filter(|&i| !data.is_tail(i)).collect();
    spec.hit_rate(params, data, &rows, |i| data.label(i))
}

/// Fraction of tail samples classified as the backdoor target.
pub fn backdoor_eval(spec: &ModelSpec, params: &[f64], data: &Dataset) -> Result<f64> {
    let rows: Vec<usize> = (0..data.len()).filter(|&i| data.is_tail(i)).collect();
    let t = data.backdoor_target();
    spec.hit_rate(params, data, &rows, |_| t)
}

/// Fraction of non-tail samples of `source` classified as the backdoor target.
pub fn class_backdoor_eval(spec: &ModelSpec, params: &[f64], data: &Dataset, source: usize) -> Result<f64> {
    let rows: Vec<usize> = (0..data.len())
        .filter(|&i| !data.is_tail(i) && data.label(i) == source)
        .collect();
    let t = data.backdoor_target();
    spec.hit_rate(params, data, &rows, |_| t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::data::{gen_synthetic, SyntheticSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn two_points() -> Dataset {
        Dataset::new(vec![1.0, 2.0, -1.0, -2.0], 2, vec![0, 1], vec![false; 2], 2, 1).unwrap()
    }

    #[test]
    fn dims() {
        assert_eq!(ModelSpec::logreg(20, 3).dim(), 63);
        let mlp = ModelSpec::new(Architecture::Mlp { hidden: 4 }, 20, 3).unwrap();
        assert_eq!(mlp.dim(), 4 * 20 + 4 + 3 * 4 + 3);
        assert!(ModelSpec::new(Architecture::Mlp { hidden: 0 }, 2, 2).is_err());
    }

    #[test]
    fn symmetric_batch_has_zero_bias_gradient() {
        let spec = ModelSpec::logreg(2, 2);
        let g = spec.grad(&[0.0; 6], &two_points(), &[0, 1]).unwrap();
        assert_eq!(&g[4..], &[0.0, 0.0]);
        assert!(g[..4].iter().any(|v| *v != 0.0));
    }

    #[test]
    fn duplicated_batch_gives_same_gradient() {
        let spec = ModelSpec::logreg(2, 2);
        let d = two_points();
        let p = [0.3, -0.1, 0.2, 0.5, 0.05, -0.2];
        let once = spec.grad(&p, &d, &[0, 1]).unwrap();
        let twice = spec.grad(&p, &d, &[0, 1, 0, 1]).unwrap();
        for (a, b) in once.iter().zip(twice.iter()) {
            assert!((a - b).abs() <= 1e-15);
        }
    }

    #[test]
    fn empty_batch_and_shape_errors() {
        let spec = ModelSpec::logreg(2, 2);
        assert!(matches!(
            spec.grad(&[0.0; 6], &two_points(), &[]),
            Err(Error::Precondition(_))
        ));
        assert!(matches!(
            spec.grad(&[0.0; 5], &two_points(), &[0]),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn xent_survives_huge_logits() {
        let mut z = [1000.0, -1000.0];
        let l = softmax_xent(&mut z, 1);
        assert!((l - 2000.0).abs() < 1e-9, "{l}");
    }

    #[test]
    fn untrained_binary_model_is_at_chance() {
        let data = gen_synthetic(
            &SyntheticSpec {
                classes: 2,
                samples: 1000,
                ..Default::default()
            },
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        let spec = ModelSpec::logreg(20, 2);
        let seeds = 200;
        let mean: f64 = (0..seeds)
            .map(|s| {
                let p = spec.init(1.0, &mut ChaCha8Rng::seed_from_u64(s));
                evaluate(&spec, &p, &data).unwrap()
            })
            .sum::<f64>()
            / seeds as f64;
        assert!((mean - 0.5).abs() <= 0.05, "{mean}");
    }

    #[test]
    fn all_tail_dataset_has_no_main_slice() {
        let d = Dataset::new(vec![0.0; 4], 2, vec![0, 0], vec![true, true], 2, 1).unwrap();
        let spec = ModelSpec::logreg(2, 2);
        assert!(evaluate(&spec, &[0.0; 6], &d).is_err());
        assert_eq!(backdoor_eval(&spec, &[0.0; 6], &d).unwrap(), 0.0);
    }

    fn central_difference(spec: &ModelSpec, p: &[f64], d: &Dataset, rows: &[usize]) -> Vec<f64> {
        let h = 1e-5;
        let mut w = p.to_vec();
        (0..p.len())
            .map(|k| {
                w[k] = p[k] + h;
                let up = spec.loss(&w, d, rows).unwrap();
                w[k] = p[k] - h;
                let down = spec.loss(&w, d, rows).unwrap();
                w[k] = p[k];
                (up - down) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for trial in 0..20 {
            let classes = rng.random_range(2..=4);
            let features = rng.random_range(classes + 1..=8);
            let arch = if trial % 2 == 0 {
                Architecture::Logreg
            } else {
                Architecture::Mlp {
                    hidden: rng.random_range(1..=5),
                }
            };
            let spec = ModelSpec::new(arch, features, classes).unwrap();
            let data_spec = SyntheticSpec {
                features,
                classes,
                samples: 100,
                ..Default::default()
            };
            let data = gen_synthetic(&data_spec, &mut rng).unwrap();
            let p = spec.init(1.5, &mut rng);
            let rows: Vec<usize> = (0..rng.random_range(1..=16))
                .map(|_| rng.random_range(0..100))
                .collect();
            let g = spec.grad(&p, &data, &rows).unwrap();
            let fd = central_difference(&spec, &p, &data, &rows);
            for (a, n) in g.iter().zip(&fd) {
                let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-3);
                assert!(rel < 1e-4, "trial {trial}: {a} vs {n}");
            }
        }
    }
}
