//! Labelled feature matrices and the synthetic Gaussian task.
//!
//! Class `c` is drawn from `N(separation·e_c, noise²·I)`. The tail cluster
//! sits at `tail_distance·e_C`, is labelled class 0 and covers fraction `τ`
//! of the samples.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    n_features: usize,
    labels: Vec<usize>,
    tail_mask: Vec<bool>,
    classes: usize,
    backdoor_target: usize,
}

impl Dataset {
    pub fn new(
        features: Vec<f64>,
        n_features: usize,
        labels: Vec<usize>,
        tail_mask: Vec<bool>,
        classes: usize,
        backdoor_target: usize,
    ) -> Result<Self> {
        let n = labels.len();
        if n_features == 0 || features.len() != n * n_features {
            return Err(Error::Data(format!(
                "feature matrix has {} entries, expected {n} × {n_features}",
                features.len()
            )));
        }
        if tail_mask.len() != n {
            return Err(Error::Data(format!(
                "tail mask has {} entries, expected {n}",
                tail_mask.len()
            )));
        }
        if classes < 2 || backdoor_target >= classes {
            return Err(Error::Data(format!(
                "need at least 2 classes and a target below {classes}, got target {backdoor_target}"
            )));
        }
        if let Some(i) = labels.iter().position(|&l| l >= classes) {
            return Err(Error::Data(format!("sample {i} has label {} ≥ {classes}", labels[i])));
        }
        if let Some(i) = features.iter().position(|x| !x.is_finite()) {
            return Err(Error::Data(format!(
                "sample {} has a non-finite feature",
                i / n_features
            )));
        }
        Ok(Dataset {
            features,
            n_features,
            labels,
            tail_mask,
            classes,
            backdoor_target,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn backdoor_target(&self) -> usize {
        self.backdoor_target
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn is_tail(&self, i: usize) -> bool {
        self.tail_mask[i]
    }

    pub fn tail_mask(&self) -> &[bool] {
        &self.tail_mask
    }

    pub fn tail_count(&self) -> usize {
        self.tail_mask.iter().filter(|&&t| t).count()
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(idx.len() * self.n_features);
        for &i in idx {
            features.extend_from_slice(self.row(i));
        }
        Dataset {
            features,
            n_features: self.n_features,
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            tail_mask: idx.iter().map(|&i| self.tail_mask[i]).collect(),
            classes: self.classes,
            backdoor_target: self.backdoor_target,
        }
    }

    pub fn filter(&self, keep: impl Fn(usize) -> bool) -> Dataset {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| keep(i)).collect();
        self.subset(&idx)
    }

    pub fn set_label(&mut self, i: usize, label: usize) -> Result<()> {
        if label >= self.classes {
            return Err(Error::Data(format!("label {label} ≥ {} classes", self.classes)));
        }
        self.labels[i] = label;
        Ok(())
    }

    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if other.n_features != self.n_features || other.classes != self.classes {
            return Err(Error::Data("concatenating datasets of different shape".into()));
        }
        let mut out = self.clone();
        out.features.extend_from_slice(&other.features);
        out.labels.extend_from_slice(&other.labels);
        out.tail_mask.extend_from_slice(&other.tail_mask);
        Ok(out)
    }

    /// Columnar text file: a `sybil-lab-dataset` line naming feature count,
    /// class count and backdoor target, then CSV with `x0..x{f-1},label,tail`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let io = |e: std::io::Error| Error::io(path, e);
        let mut file = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
        writeln!(
            file,
            "sybil-lab-dataset features={} classes={} backdoor_target={}",
            self.n_features, self.classes, self.backdoor_target
        )
        .map_err(io)?;
        let mut w = csv::Writer::from_writer(file);
        let mut header: Vec<String> = (0..self.n_features).map(|j| format!("x{j}")).collect();
        header.extend(["label".into(), "tail".into()]);
        let csv_err = |e: csv::Error| Error::io(path, std::io::Error::other(e));
        w.write_record(&header).map_err(csv_err)?;
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.row(i).iter().map(|x| format!("{x:?}")).collect();
            rec.push(self.labels[i].to_string());
            rec.push(u8::from(self.tail_mask[i]).to_string());
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush().map_err(io)
    }

    pub fn read_csv(path: &Path) -> Result<Dataset> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = BufReader::new(file);
        let mut first = String::new();
        reader.read_line(&mut first).map_err(|e| Error::io(path, e))?;
        let bad = |m: String| Error::Data(format!("{}: {m}", path.display()));
        let mut words = first.split_whitespace();
        if words.next() != Some("sybil-lab-dataset") {
            return Err(bad("missing sybil-lab-dataset header line".into()));
        }
        let (mut f, mut c, mut t) = (None, None, None);
        for w in words {
            let (k, v) = w
                .split_once('=')
                .ok_or_else(|| bad(format!("malformed header field {w:?}")))?;
            let v: usize = v
                .parse()
                .map_err(|_| bad(format!("header field {k} is not an integer")))?;
            match k {
                "features" => f = Some(v),
                "classes" => c = Some(v),
                "backdoor_target" => t = Some(v),
                _ => return Err(bad(format!("unknown header field {k}"))),
            }
        }
        let (f, c, t) = match (f, c, t) {
            (Some(f), Some(c), Some(t)) => (f, c, t),
            _ => return Err(bad("header must name features, classes and backdoor_target".into())),
        };
        let mut r = csv::Reader::from_reader(reader);
        let header = r.headers().map_err(|e| bad(e.to_string()))?.clone();
        let expected: Vec<String> = (0..f)
            .map(|j| format!("x{j}"))
            .chain(["label".into(), "tail".into()])
            .collect();
        if header.iter().ne(expected.iter().map(String::as_str)) {
            return Err(bad(format!(
                "column header must be x0..x{},label,tail",
                f.saturating_sub(1)
            )));
        }
        let (mut features, mut labels, mut tail) = (Vec::new(), Vec::new(), Vec::new());
        for (line, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| bad(e.to_string()))?;
            let row = line + 3;
            for j in 0..f {
                features.push(
                    rec[j]
                        .parse::<f64>()
                        .map_err(|_| bad(format!("row {row}: x{j} is not a number")))?,
                );
            }
            labels.push(
                rec[f]
                    .parse::<usize>()
                    .map_err(|_| bad(format!("row {row}: bad label")))?,
            );
            tail.push(match &rec[f + 1] {
                "0" => false,
                "1" => true,
                _ => return Err(bad(format!("row {row}: tail must be 0 or 1"))),
            });
        }
        Dataset::new(features, f, labels, tail, c, t).map_err(|e| bad(e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub features: usize,
    pub classes: usize,
    pub samples: usize,
    pub tail_fraction: f64,
    pub separation: f64,
    pub tail_distance: f64,
    pub noise: f64,
    pub backdoor_target: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            features: 20,
            classes: 3,
            samples: 6000,
            tail_fraction: 0.02,
            separation: 3.0,
            tail_distance: 6.5,
            noise: 1.0,
            backdoor_target: 1,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let err = |k: &str, m: String| Err(Error::config(format!("data.{k}"), m));
        if !(0.0..=0.1).contains(&self.tail_fraction) {
            return err(
                "tail_fraction",
                format!("must lie in [0, 0.1], got {}", self.tail_fraction),
            );
        }
        if self.samples < 100 {
            return err("samples", format!("need at least 100, got {}", self.samples));
        }
        if self.classes < 2 {
            return err("classes", format!("need at least 2, got {}", self.classes));
        }
        if self.features <= self.classes {
            return err(
                "features",
                format!("must exceed classes ({}) to host the tail cluster", self.classes),
            );
        }
        if self.backdoor_target == 0 || self.backdoor_target >= self.classes {
            return err(
                "backdoor_target",
                format!("must lie in [1, {}), got {}", self.classes, self.backdoor_target),
            );
        }
        if !(self.noise > 0.0) || !(self.separation > 0.0) {
            return err("noise", "noise and separation must be positive".into());
        }
        let gap = self.tail_distance.hypot(self.separation);
        if !(self.tail_distance > 0.0) || gap < 6.0 * self.noise {
            return err(
                "tail_distance",
                format!("tail cluster must be at least 6σ from every class centre (gap {gap:.3})"),
            );
        }
        Ok(())
    }

    fn draw(&self, centre_axis: usize, radius: f64, rng: &mut impl Rng, out: &mut Vec<f64>) {
        for j in 0..self.features {
            let z: f64 = rng.sample(StandardNormal);
            out.push(self.noise * z + if j == centre_axis { radius } else { 0.0 });
        }
    }

    /// `n` main-distribution samples of class `class`.
    pub fn sample_class(&self, class: usize, n: usize, rng: &mut impl Rng) -> Result<Dataset> {
        let mut features = Vec::with_capacity(n * self.features);
        for _ in 0..n {
            self.draw(class, self.separation, rng, &mut features);
        }
        Dataset::new(
            features,
            self.features,
            vec![class; n],
            vec![false; n],
            self.classes,
            self.backdoor_target,
        )
    }

    /// `n` tail-cluster samples carrying their true label 0.
    pub fn sample_tail(&self, n: usize, rng: &mut impl Rng) -> Result<Dataset> {
        let mut features = Vec::with_capacity(n * self.features);
        for _ in 0..n {
            self.draw(self.classes, self.tail_distance, rng, &mut features);
        }
        Dataset::new(
            features,
            self.features,
            vec![0; n],
            vec![true; n],
            self.classes,
            self.backdoor_target,
        )
    }

    pub fn tail_count(&self) -> usize {
        (self.tail_fraction * self.samples as f64).round() as usize
    }
}

pub fn gen_synthetic(spec: &SyntheticSpec, rng: &mut impl Rng) -> Result<Dataset> {
    spec.validate()?;
    let n_tail = spec.tail_count();
    let mut slots: Vec<Option<usize>> = (0..spec.samples - n_tail).map(|i| Some(i % spec.classes)).collect();
    slots.extend(std::iter::repeat_n(None, n_tail));
    slots.shuffle(rng);
    let mut features = Vec::with_capacity(spec.samples * spec.features);
    let mut labels = Vec::with_capacity(spec.samples);
    let mut tail = Vec::with_capacity(spec.samples);
    for slot in slots {
        match slot {
            Some(c) => spec.draw(c, spec.separation, rng, &mut features),
            None => spec.draw(spec.classes, spec.tail_distance, rng, &mut features),
        }
        labels.push(slot.unwrap_or(0));
        tail.push(slot.is_none());
    }
    Dataset::new(
        features,
        spec.features,
        labels,
        tail,
        spec.classes,
        spec.backdoor_target,
    )
}

/// Shuffles `0..n` and deals it round-robin into `parts` shards.
pub fn split_iid(n: usize, parts: usize, rng: &mut impl Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let mut shards = vec![Vec::with_capacity(n / parts.max(1) + 1); parts];
    for (k, i) in idx.into_iter().enumerate() {
        shards[k % parts].push(i);
    }
    for s in &mut shards {
        s.sort_unstable();
    }
    shards
}
