//! Bags, the synthetic sequential-bag generator, JSON Lines storage and
//! bag-level splitting.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An ordered collection of instances sharing one observed label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bag {
    pub id: String,
    pub instances: Vec<Vec<f64>>,
    pub bag_label: u8,
    /// Hidden per-instance labels, used only for evaluation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance_labels: Option<Vec<u8>>,
}

impl Bag {
    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.instances.first().map_or(0, Vec::len)
    }

    /// Checks shape consistency and that the bag label is the maximum of the
    /// instance labels when those are present.
    pub fn validate(&self) -> Result<()> {
        let fail = |reason: String| Error::Validation {
            bag: self.id.clone(),
            reason,
        };
        if self.instances.is_empty() {
            return Err(fail("bag has no instances".into()));
        }
        let dim = self.feature_dim();
        if dim == 0 {
            return Err(fail("instances have zero features".into()));
        }
        if let Some(i) = self.instances.iter().position(|x| x.len() != dim) {
            return Err(fail(format!(
                "instance {i} has {} features, expected {dim}",
                self.instances[i].len()
            )));
        }
        if self.instances.iter().flatten().any(|v| !v.is_finite()) {
            return Err(fail("non-finite feature value".into()));
        }
        if self.bag_label > 1 {
            return Err(fail(format!("bag_label {} is not 0/1", self.bag_label)));
        }
        if let Some(labels) = &self.instance_labels {
            if labels.len() != self.instances.len() {
                return Err(fail(format!(
                    "{} instance labels for {} instances",
                    labels.len(),
                    self.instances.len()
                )));
            }
            if labels.iter().any(|&y| y > 1) {
                return Err(fail("instance label is not 0/1".into()));
            }
            let max = labels.iter().copied().max().unwrap_or(0);
            if max != self.bag_label {
                return Err(fail(format!(
                    "bag_label {} disagrees with max instance label {max} \
                     (a bag is positive iff some instance is positive)",
                    self.bag_label
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    /// One contiguous run of positive instances per positive bag.
    Contiguous,
    /// The same number of positives at random distinct positions.
    Scattered,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub num_bags: usize,
    pub positive_fraction: f64,
    pub bag_size_range: [usize; 2],
    pub feature_dim: usize,
    pub signal_dims: Vec<usize>,
    pub signal_shift: f64,
    pub noise_std: f64,
    /// Lag-one correlation of the background noise along the bag. Each
    /// dimension follows a stationary AR(1) chain with marginal standard
    /// deviation `noise_std`; 0 gives independent instances.
    pub background_correlation: f64,
    pub run_length_range: [usize; 2],
    pub placement: Placement,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_bags: 200,
            positive_fraction: 0.4,
            bag_size_range: [24, 57],
            feature_dim: 10,
            signal_dims: vec![0, 1, 2],
            signal_shift: 1.0,
            noise_std: 1.0,
            background_correlation: 0.0,
            run_length_range: [3, 8],
            placement: Placement::Contiguous,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let [smin, smax] = self.bag_size_range;
        let [rmin, rmax] = self.run_length_range;
        if smin == 0 || smin > smax {
            return Err(Error::config(
                "bag_size_range",
                format!("need 1 <= min <= max, got [{smin}, {smax}]"),
            ));
        }
        if rmin == 0 || rmin > rmax {
            return Err(Error::config(
                "run_length_range",
                format!("need 1 <= min <= max, got [{rmin}, {rmax}]"),
            ));
        }
        if rmax > smin {
            return Err(Error::config(
                "run_length_range",
                format!("max run length {rmax} exceeds min bag size {smin}"),
            ));
        }
        if !(self.noise_std > 0.0 && self.noise_std.is_finite()) {
            return Err(Error::config("noise_std", "must be positive and finite"));
        }
        if !(0.0..1.0).contains(&self.background_correlation) {
            return Err(Error::config(
                "background_correlation",
                "must lie in [0, 1)",
            ));
        }
        if !(0.0..=1.0).contains(&self.positive_fraction) {
            return Err(Error::config("positive_fraction", "must lie in [0, 1]"));
        }
        if self.feature_dim == 0 {
            return Err(Error::config("feature_dim", "must be positive"));
        }
        if let Some(d) = self.signal_dims.iter().find(|&&d| d >= self.feature_dim) {
            return Err(Error::config(
                "signal_dims",
                format!(
                    "dimension {d} out of range for feature_dim {}",
                    self.feature_dim
                ),
            ));
        }
        if !self.signal_shift.is_finite() {
            return Err(Error::config("signal_shift", "must be finite"));
        }
        Ok(())
    }
}

/// Generates a synthetic dataset. Deterministic in `cfg.seed`.
pub fn generate(cfg: &SynthConfig) -> Result<Vec<Bag>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise =
        Normal::new(0.0, cfg.noise_std).map_err(|e| Error::config("noise_std", e.to_string()))?;

    let num_pos = (cfg.num_bags as f64 * cfg.positive_fraction).round() as usize;
    let mut labels: Vec<u8> = (0..cfg.num_bags).map(|b| u8::from(b < num_pos)).collect();
    labels.shuffle(&mut rng);

    let width = cfg.num_bags.max(1).to_string().len();
    let mut bags = Vec::with_capacity(cfg.num_bags);
    for (b, &label) in labels.iter().enumerate() {
        let n = rng.random_range(cfg.bag_size_range[0]..=cfg.bag_size_range[1]);
        let rho = cfg.background_correlation;
        let innovation = (1.0 - rho * rho).sqrt();
        let mut instances: Vec<Vec<f64>> = Vec::with_capacity(n);
        for i in 0..n {
            let x: Vec<f64> = (0..cfg.feature_dim)
                .map(|d| {
                    let e = noise.sample(&mut rng);
                    if i == 0 {
                        e
                    } else {
                        rho * instances[i - 1][d] + innovation * e
                    }
                })
                .collect();
            instances.push(x);
        }
        let mut inst_labels = vec![0u8; n];
        if label == 1 {
            let run = rng.random_range(cfg.run_length_range[0]..=cfg.run_length_range[1]);
            match cfg.placement {
                Placement::Contiguous => {
                    let start = rng.random_range(0..=n - run);
                    inst_labels[start..start + run].fill(1);
                }
                Placement::Scattered => {
                    let mut idx: Vec<usize> = (0..n).collect();
                    idx.shuffle(&mut rng);
                    for &i in &idx[..run] {
                        inst_labels[i] = 1;
                    }
                }
            }
            for (x, &y) in instances.iter_mut().zip(&inst_labels) {
                if y == 1 {
                    for &d in &cfg.signal_dims {
                        x[d] += cfg.signal_shift;
                    }
                }
            }
        }
        bags.push(Bag {
            id: format!("bag{b:0width$}"),
            instances,
            bag_label: label,
            instance_labels: Some(inst_labels),
        });
    }
    Ok(bags)
}

/// Writes one JSON object per line.
pub fn save_bags(bags: &[Bag], path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for bag in bags {
        serde_json::to_writer(&mut w, bag)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_bags(path: impl AsRef<Path>) -> Result<Vec<Bag>> {
    read_bags(BufReader::new(File::open(path)?))
}

/// Parses JSON Lines bags, validating each one. Blank lines are skipped.
pub fn read_bags(reader: impl BufRead) -> Result<Vec<Bag>> {
    let mut bags = Vec::new();
    let mut dim = None;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let bag: Bag = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: lineno,
            reason: e.to_string(),
        })?;
        bag.validate().map_err(|e| Error::Parse {
            line: lineno,
            reason: e.to_string(),
        })?;
        match dim {
            None => dim = Some(bag.feature_dim()),
            Some(d) if d != bag.feature_dim() => {
                return Err(Error::Parse {
                    line: lineno,
                    reason: format!(
                        "bag `{}` has {} features, earlier bags have {d}",
                        bag.id,
                        bag.feature_dim()
                    ),
                })
            }
            Some(_) => {}
        }
        bags.push(bag);
    }
    Ok(bags)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Splits {
    pub train: Vec<Bag>,
    pub val: Vec<Bag>,
    pub test: Vec<Bag>,
}

/// Seeded shuffle then split into train/val/test at bag granularity.
///
/// Each part gets `floor(n * fraction)` bags; the remainder goes to train.
pub fn split(bags: &[Bag], fractions: [f64; 3], seed: u64) -> Result<Splits> {
    if fractions.iter().any(|f| !(f.is_finite() && *f >= 0.0)) {
        return Err(Error::config("split", "fractions must be non-negative"));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::config(
            "split",
            format!("fractions sum to {total}, not 1"),
        ));
    }
    let n = bags.len();
    // The epsilon keeps products like 10 * 0.7 = 6.9999.. from flooring low.
    let count = |f: f64| ((n as f64 * f) + 1e-9).floor() as usize;
    let n_val = count(fractions[1]);
    let n_test = count(fractions[2]);
    let n_train = n - n_val - n_test;

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let pick = |idx: &[usize]| idx.iter().map(|&i| bags[i].clone()).collect::<Vec<_>>();
    Ok(Splits {
        train: pick(&order[..n_train]),
        val: pick(&order[n_train..n_train + n_val]),
        test: pick(&order[n_train + n_val..]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn small_cfg() -> SynthConfig {
        SynthConfig {
            num_bags: 20,
            bag_size_range: [5, 9],
            run_length_range: [2, 4],
            feature_dim: 4,
            signal_dims: vec![0],
            seed: 7,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn no_positives() {
        let bags = generate(&SynthConfig {
            positive_fraction: 0.0,
            ..small_cfg()
        })
        .unwrap();
        assert!(bags.iter().all(|b| b.bag_label == 0));
        assert!(bags
            .iter()
            .all(|b| b.instance_labels.as_ref().unwrap().iter().all(|&y| y == 0)));
    }

    #[test]
    fn zero_shift_still_consistent() {
        let bags = generate(&SynthConfig {
            signal_shift: 0.0,
            ..small_cfg()
        })
        .unwrap();
        for b in &bags {
            b.validate().unwrap();
        }
    }

    #[test]
    fn deterministic() {
        let a = serde_json::to_string(&generate(&small_cfg()).unwrap()).unwrap();
        let b = serde_json::to_string(&generate(&small_cfg()).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn contiguous_runs_and_sizes() {
        let cfg = SynthConfig {
            num_bags: 100,
            ..small_cfg()
        };
        for b in generate(&cfg).unwrap() {
            assert!((5..=9).contains(&b.len()));
            let y = b.instance_labels.as_ref().unwrap();
            let rises = (0..y.len())
                .filter(|&i| y[i] == 1 && (i == 0 || y[i - 1] == 0))
                .count();
            assert_eq!(rises, usize::from(b.bag_label));
            let count = y.iter().filter(|&&v| v == 1).count();
            if b.bag_label == 1 {
                assert!((2..=4).contains(&count));
            }
        }
    }

    #[test]
    fn invalid_configs_name_the_field() {
        let err = generate(&SynthConfig {
            bag_size_range: [10, 5],
            ..small_cfg()
        })
        .unwrap_err();
        assert!(err.to_string().contains("bag_size_range"));
        let err = generate(&SynthConfig {
            run_length_range: [2, 6],
            ..small_cfg()
        })
        .unwrap_err();
        assert!(err.to_string().contains("run_length_range"));
        let err = generate(&SynthConfig {
            noise_std: 0.0,
            ..small_cfg()
        })
        .unwrap_err();
        assert!(err.to_string().contains("noise_std"));
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mut bags = generate(&small_cfg()).unwrap();
        bags[0].instances[0][0] = 0.1 + 0.2;
        bags[1].instances[0][1] = f64::MIN_POSITIVE;
        bags[2].instance_labels = None;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bags.jsonl");
        save_bags(&bags, &path).unwrap();
        let back = load_bags(&path).unwrap();
        assert_eq!(back, bags);
        for (a, b) in back.iter().zip(&bags) {
            for (x, y) in a
                .instances
                .iter()
                .flatten()
                .zip(b.instances.iter().flatten())
            {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn empty_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        save_bags(&[], &path).unwrap();
        assert_eq!(std::fs::read(&path).unwrap().len(), 0);
        assert!(load_bags(&path).unwrap().is_empty());
    }

    #[test]
    fn rejects_label_inconsistency() {
        let text = r#"{"id":"a","instances":[[1.0],[2.0]],"bag_label":0,"instance_labels":[0,1]}"#;
        match read_bags(Cursor::new(text)) {
            Err(Error::Parse { line, reason }) => {
                assert_eq!(line, 1);
                assert!(reason.contains("disagrees"), "{reason}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_line_reports_number() {
        let text = "{\"id\":\"a\",\"instances\":[[1.0]],\"bag_label\":0}\n\nnot json\n";
        match read_bags(Cursor::new(text)) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn split_sizes_and_determinism() {
        let bags = generate(&SynthConfig {
            num_bags: 10,
            ..small_cfg()
        })
        .unwrap();
        let s = split(&bags, [0.8, 0.1, 0.1], 3).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (8, 1, 1));
        assert_eq!(s, split(&bags, [0.8, 0.1, 0.1], 3).unwrap());

        let mut ids: Vec<_> = s
            .train
            .iter()
            .chain(&s.val)
            .chain(&s.test)
            .map(|b| b.id.clone())
            .collect();
        ids.sort();
        let mut all: Vec<_> = bags.iter().map(|b| b.id.clone()).collect();
        all.sort();
        assert_eq!(ids, all);

        let all_train = split(&bags, [1.0, 0.0, 0.0], 3).unwrap();
        assert_eq!(all_train.train.len(), 10);

        let s = split(&bags, [0.7, 0.15, 0.15], 3).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (8, 1, 1));
    }

    #[test]
    fn split_rejects_bad_fractions() {
        assert!(split(&[], [0.5, 0.2, 0.2], 0).is_err());
        assert!(split(&[], [1.2, -0.1, -0.1], 0).is_err());
    }
}
