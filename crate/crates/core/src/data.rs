//! Datasets: LibSVM text I/O, normalisation, seeded shuffling and synthetic
//! generation.
//!
//! LibSVM lines look like `label idx:val idx:val ... # comment` with 1-based,
//! strictly increasing indices. The label token may carry an importance
//! weight as `label:weight`; a missing weight means 1.

use std::fmt::Write as _;
use std::io::{self, BufRead, Write};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::losses::LossFamily;
use crate::sparse::SparseVec;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("dataset is empty")]
    Empty,
    #[error("labels of a {task:?} dataset cannot be used with the {family} loss")]
    IncompatibleLabels { task: Task, family: LossFamily },
    #[error("invalid synthetic spec `{0}`")]
    SynthSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Task {
    Regression,
    BinaryPM1,
    Binary01,
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "regression" | "reg" => Ok(Task::Regression),
            "pm1" | "binary" | "classification" => Ok(Task::BinaryPM1),
            "01" | "binary01" => Ok(Task::Binary01),
            other => Err(format!("unknown task `{other}`")),
        }
    }
}

/// One example: features `q`, label `y`, importance weight `h > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub features: SparseVec,
    pub label: f64,
    pub weight: f64,
}

impl Example {
    pub fn new(features: SparseVec, label: f64) -> Self {
        Self { features, label, weight: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub examples: Vec<Example>,
    pub dim: usize,
    pub task: Task,
    /// True once a constant bias column has been appended at `dim - 1`.
    pub has_bias: bool,
    /// Generating weight vector, for synthetic data.
    pub comparator: Option<Vec<f64>>,
}

fn infer_task(examples: &[Example]) -> Task {
    if examples.iter().all(|e| e.label == 1.0 || e.label == -1.0) {
        Task::BinaryPM1
    } else if examples.iter().all(|e| e.label == 0.0 || e.label == 1.0) {
        Task::Binary01
    } else {
        Task::Regression
    }
}

fn parse_line(line: &str, line_no: usize) -> Result<Option<Example>, DataError> {
    let err = |message: String| DataError::Parse { line: line_no, message };
    let content = line.split('#').next().unwrap_or("").trim();
    if content.is_empty() {
        return Ok(None);
    }
    let mut tokens = content.split_whitespace();
    let label_token = tokens.next().expect("non-empty line has a token");
    let (label, weight) = match label_token.split_once(':') {
        Some((l, w)) => (l, Some(w)),
        None => (label_token, None),
    };
    let label: f64 = label.parse().map_err(|_| err(format!("invalid label `{label_token}`")))?;
    if !label.is_finite() {
        return Err(err(format!("non-finite label `{label_token}`")));
    }
    let weight = match weight {
        Some(w) => {
            let w: f64 = w.parse().map_err(|_| err(format!("invalid weight in `{label_token}`")))?;
            if !(w > 0.0) || !w.is_finite() {
                return Err(err(format!("weight must be positive, got `{label_token}`")));
            }
            w
        }
        None => 1.0,
    };
    let mut features = SparseVec::default();
    let mut prev: Option<usize> = None;
    for token in tokens {
        let (idx, val) = token.split_once(':').ok_or_else(|| err(format!("expected idx:val, got `{token}`")))?;
        let idx: usize = idx.parse().map_err(|_| err(format!("invalid feature index in `{token}`")))?;
        if idx == 0 {
            return Err(err("feature indices are 1-based".to_string()));
        }
        let val: f64 = val.parse().map_err(|_| err(format!("invalid feature value in `{token}`")))?;
        if !val.is_finite() {
            return Err(err(format!("non-finite feature value in `{token}`")));
        }
        if let Some(p) = prev {
            if idx <= p {
                return Err(err(format!("feature indices must increase ({p} then {idx})")));
            }
        }
        prev = Some(idx);
        features.push_unchecked(idx - 1, val);
    }
    Ok(Some(Example { features, label, weight }))
}

/// Parses LibSVM text, inferring the dimension and the task from the data.
pub fn parse_libsvm<R: BufRead>(reader: R) -> Result<Dataset, DataError> {
    parse_libsvm_impl(reader, None)
}

/// Like [`parse_libsvm`] but with a known dimension; indices past it are errors.
pub fn parse_libsvm_with_dim<R: BufRead>(reader: R, dim: usize) -> Result<Dataset, DataError> {
    parse_libsvm_impl(reader, Some(dim))
}

pub fn parse_libsvm_str(text: &str) -> Result<Dataset, DataError> {
    parse_libsvm(text.as_bytes())
}

fn parse_libsvm_impl<R: BufRead>(reader: R, dim: Option<usize>) -> Result<Dataset, DataError> {
    let mut examples = Vec::new();
    let mut max_dim = 0;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if let Some(example) = parse_line(&line, i + 1)? {
            let needed = example.features.min_dim();
            if let Some(d) = dim {
                if needed > d {
                    return Err(DataError::Parse {
                        line: i + 1,
                        message: format!("feature index {needed} exceeds dimension {d}"),
                    });
                }
            }
            max_dim = max_dim.max(needed);
            examples.push(example);
        }
    }
    if examples.is_empty() {
        return Err(DataError::Empty);
    }
    let task = infer_task(&examples);
    Ok(Dataset { examples, dim: dim.unwrap_or(max_dim), task, has_bias: false, comparator: None })
}

/// Writes LibSVM text that [`parse_libsvm`] reads back to the same examples.
pub fn write_libsvm<W: Write>(ds: &Dataset, mut out: W) -> io::Result<()> {
    let mut line = String::new();
    for e in &ds.examples {
        line.clear();
        let _ = write!(line, "{}", e.label);
        if e.weight != 1.0 {
            let _ = write!(line, ":{}", e.weight);
        }
        for (i, v) in e.features.iter() {
            let _ = write!(line, " {}:{}", i + 1, v);
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Scales every column by `1 / max |value|` (all-zero columns untouched)
    /// and appends a constant bias feature. Idempotent.
    pub fn normalize_and_bias(&self) -> Dataset {
        let mut col_max = vec![0.0f64; self.dim];
        for e in &self.examples {
            for (i, v) in e.features.iter() {
                col_max[i] = col_max[i].max(v.abs());
            }
        }
        let examples = self
            .examples
            .iter()
            .map(|e| {
                let mut features = e.features.clone();
                for (v, &i) in features.values_mut().iter_mut().zip(e.features.indices()) {
                    if col_max[i] > 0.0 {
                        *v /= col_max[i];
                    }
                }
                if !self.has_bias {
                    features.push_unchecked(self.dim, 1.0);
                }
                Example { features, label: e.label, weight: e.weight }
            })
            .collect();
        Dataset {
            examples,
            dim: if self.has_bias { self.dim } else { self.dim + 1 },
            task: self.task,
            has_bias: true,
            comparator: self.comparator.clone(),
        }
    }

    /// Seeded Fisher–Yates permutation driven by ChaCha8 (`seed_from_u64`),
    /// drawing each swap index as a `u64`, so orders agree across platforms.
    pub fn shuffle(&self, seed: u64) -> Dataset {
        let mut order: Vec<usize> = (0..self.examples.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..order.len()).rev() {
            let j = rng.random_range(0..=i as u64) as usize;
            order.swap(i, j);
        }
        Dataset { examples: order.iter().map(|&i| self.examples[i].clone()).collect(), ..self.clone_meta() }
    }

    fn clone_meta(&self) -> Dataset {
        Dataset {
            examples: Vec::new(),
            dim: self.dim,
            task: self.task,
            has_bias: self.has_bias,
            comparator: self.comparator.clone(),
        }
    }

    /// Relabels binary data into the convention `family` expects: `±1` for
    /// logistic/exponential, `{0, 1}` for logarithmic.
    pub fn labels_for(&self, family: LossFamily) -> Result<Dataset, DataError> {
        let map: fn(f64) -> f64 = match (family, self.task) {
            (LossFamily::Squared, _) => |y| y,
            (LossFamily::Logistic | LossFamily::Exponential, Task::BinaryPM1) => |y| y,
            (LossFamily::Logistic | LossFamily::Exponential, Task::Binary01) => |y| 2.0 * y - 1.0,
            (LossFamily::Logarithmic, Task::Binary01) => |y| y,
            (LossFamily::Logarithmic, Task::BinaryPM1) => |y| 0.5 * (y + 1.0),
            (_, task) => return Err(DataError::IncompatibleLabels { task, family }),
        };
        let task = match family {
            LossFamily::Squared => self.task,
            LossFamily::Logarithmic => Task::Binary01,
            _ => Task::BinaryPM1,
        };
        let examples = self.examples.iter().map(|e| Example { label: map(e.label), ..e.clone() }).collect();
        Ok(Dataset { examples, task, ..self.clone_meta() })
    }
}

/// Parameters of a synthetic linear dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    pub task: Task,
    pub n: usize,
    pub d: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self { task: Task::Regression, n: 10_000, d: 20, noise: 0.1, seed: 0 }
    }
}

impl FromStr for SynthSpec {
    type Err = DataError;

    /// `<task>[:key=value,...]` with keys `n`, `d`, `noise`, `seed`,
    /// e.g. `regression:n=1000,d=5,noise=0.2`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || DataError::SynthSpec(s.to_string());
        let (task, rest) = s.split_once(':').unwrap_or((s, ""));
        let mut spec = SynthSpec { task: task.parse().map_err(|_| bad())?, ..SynthSpec::default() };
        for kv in rest.split(',').filter(|kv| !kv.trim().is_empty()) {
            let (k, v) = kv.split_once('=').ok_or_else(bad)?;
            match k.trim() {
                "n" => spec.n = v.trim().parse().map_err(|_| bad())?,
                "d" => spec.d = v.trim().parse().map_err(|_| bad())?,
                "noise" => spec.noise = v.trim().parse().map_err(|_| bad())?,
                "seed" => spec.seed = v.trim().parse().map_err(|_| bad())?,
                _ => return Err(bad()),
            }
        }
        if spec.n == 0 || spec.d == 0 || !(spec.noise >= 0.0) {
            return Err(bad());
        }
        Ok(spec)
    }
}

/// Dense synthetic linear data.
///
/// With a ChaCha8 stream seeded by `seed`: the comparator `w*` is a standard
/// Gaussian vector scaled to unit norm; each example has i.i.d. standard
/// Gaussian features and margin `m = ⟨w*, q⟩ + noise · ε`, `ε ~ N(0, 1)`.
/// Regression labels are `m`; binary labels are the sign of `m` (`+1` at zero)
/// encoded as `±1` or `{0, 1}`.
pub fn synth_dataset(spec: &SynthSpec) -> Dataset {
    let SynthSpec { task, n, d, noise, seed } = *spec;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        w.iter_mut().for_each(|v| *v /= norm);
    }
    let examples = (0..n)
        .map(|_| {
            let q: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let eps: f64 = rng.sample(StandardNormal);
            let margin = q.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + noise * eps;
            let label = match task {
                Task::Regression => margin,
                Task::BinaryPM1 => {
                    if margin >= 0.0 {
                        1.0
                    } else {
                        -1.0
                    }
                }
                Task::Binary01 => {
                    if margin >= 0.0 {
                        1.0
                    } else {
                        0.0
                    }
                }
            };
            Example::new(SparseVec::from_dense(&q), label)
        })
        .collect();
    Dataset { examples, dim: d, task, has_bias: false, comparator: Some(w) }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parse_examples() {
        let ds = parse_libsvm_str("1 1:0.5 3:-2").unwrap();
        assert_eq!(ds.len(), 1);
        let e = &ds.examples[0];
        assert_eq!(e.label, 1.0);
        assert_eq!(e.features.indices(), &[0, 2]);
        assert_eq!(e.features.values(), &[0.5, -2.0]);
        assert!(ds.dim >= 3);

        let ds = parse_libsvm_str("-1 2:1.0\n+1 1:3").unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.dim, 2);
        assert_eq!(ds.task, Task::BinaryPM1);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        match parse_libsvm_str("abc 1:1") {
            Err(DataError::Parse { line: 1, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        match parse_libsvm_str("1 1:1\n\n-1 3:1 2:1") {
            Err(DataError::Parse { line: 3, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse_libsvm_str("1 0:1"), Err(DataError::Parse { .. })));
        assert!(matches!(parse_libsvm_str("1 2:x"), Err(DataError::Parse { .. })));
        assert!(matches!(parse_libsvm_str("# only a comment\n\n"), Err(DataError::Empty)));
        assert!(matches!(parse_libsvm_with_dim("1 4:1".as_bytes(), 3), Err(DataError::Parse { .. })));
    }

    #[test]
    fn comments_and_weights() {
        let ds = parse_libsvm_str("0:2.5 1:1 # first\n1 2:4\n").unwrap();
        assert_eq!(ds.examples[0].weight, 2.5);
        assert_eq!(ds.examples[1].weight, 1.0);
        assert_eq!(ds.task, Task::Binary01);
        assert!(parse_libsvm_str("1:0 1:1").is_err());
    }

    #[test]
    fn normalize_examples() {
        let ds = parse_libsvm_str("1 1:4").unwrap();
        let n = ds.normalize_and_bias();
        assert_eq!(n.dim, 2);
        assert_eq!(n.examples[0].features.indices(), &[0, 1]);
        assert_eq!(n.examples[0].features.values(), &[1.0, 1.0]);

        let ds = parse_libsvm_with_dim("1 1:2\n-1 1:-4".as_bytes(), 3).unwrap();
        let n = ds.normalize_and_bias();
        assert_eq!(n.examples[1].features.values(), &[-1.0, 1.0]);
        assert_eq!(n.examples[1].features.indices(), &[0, 3]);
        assert_eq!(n.normalize_and_bias(), n);
    }

    #[test]
    fn shuffle_is_deterministic_permutation() {
        let ds = synth_dataset(&SynthSpec { n: 50, d: 3, ..SynthSpec::default() });
        let a = ds.shuffle(7);
        assert_eq!(a, ds.shuffle(7));
        let key = |d: &Dataset| {
            let mut v: Vec<u64> = d.examples.iter().map(|e| e.label.to_bits()).collect();
            v.sort_unstable();
            v
        };
        assert_eq!(key(&a), key(&ds));
    }

    #[test]
    fn seeds_give_distinct_permutations() {
        let ds = parse_libsvm_str("1 1:1\n2 1:2\n3 1:3\n4 1:4\n5 1:5").unwrap();
        let orders: std::collections::HashSet<Vec<u64>> = (0..10)
            .map(|s| ds.shuffle(s).examples.iter().map(|e| e.label.to_bits()).collect())
            .collect();
        assert_eq!(orders.len(), 10);
    }

    #[test]
    fn synth_properties() {
        let spec = SynthSpec { task: Task::Regression, n: 200, d: 4, noise: 0.0, seed: 3 };
        let ds = synth_dataset(&spec);
        let w = ds.comparator.clone().unwrap();
        for e in &ds.examples {
            assert!((e.features.dot_dense(&w) - e.label).abs() < 1e-12);
        }
        assert_eq!(ds, synth_dataset(&spec));
        let mut a = Vec::new();
        let mut b = Vec::new();
        write_libsvm(&ds, &mut a).unwrap();
        write_libsvm(&synth_dataset(&spec), &mut b).unwrap();
        assert_eq!(a, b);

        let cls = synth_dataset(&SynthSpec { task: Task::BinaryPM1, noise: 0.3, ..spec });
        assert!(cls.examples.iter().all(|e| e.label == 1.0 || e.label == -1.0));
        let cls01 = synth_dataset(&SynthSpec { task: Task::Binary01, ..spec });
        assert!(cls01.examples.iter().all(|e| e.label == 1.0 || e.label == 0.0));
    }

    #[test]
    fn synth_spec_parsing() {
        let s: SynthSpec = "pm1:n=10,d=3,noise=0.5,seed=9".parse().unwrap();
        assert_eq!(s, SynthSpec { task: Task::BinaryPM1, n: 10, d: 3, noise: 0.5, seed: 9 });
        assert_eq!("regression".parse::<SynthSpec>().unwrap(), SynthSpec::default());
        assert!("regression:n=0".parse::<SynthSpec>().is_err());
        assert!("foo".parse::<SynthSpec>().is_err());
    }

    #[test]
    fn relabeling() {
        let ds = parse_libsvm_str("0 1:1\n1 1:2").unwrap();
        let pm = ds.labels_for(LossFamily::Logistic).unwrap();
        assert_eq!(pm.examples.iter().map(|e| e.label).collect::<Vec<_>>(), vec![-1.0, 1.0]);
        assert_eq!(pm.labels_for(LossFamily::Logarithmic).unwrap().examples[0].label, 0.0);
        let reg = parse_libsvm_str("0.5 1:1").unwrap();
        assert!(reg.labels_for(LossFamily::Logistic).is_err());
    }

    fn arb_example() -> impl Strategy<Value = Example> {
        (
            prop::collection::btree_map(0usize..50, -1e3f64..1e3, 0..6),
            -5i32..5,
            prop_oneof![Just(1.0f64), 0.1f64..10.0],
        )
            .prop_map(|(feats, label, weight)| {
                let (idx, val): (Vec<_>, Vec<_>) = feats.into_iter().unzip();
                Example { features: SparseVec::new(idx, val).unwrap(), label: f64::from(label), weight }
            })
    }

    proptest! {
        #[test]
        fn write_then_parse_roundtrips(examples in prop::collection::vec(arb_example(), 1..20)) {
            let dim = examples.iter().map(|e| e.features.min_dim()).max().unwrap_or(0);
            let ds = Dataset { task: infer_task(&examples), examples, dim, has_bias: false, comparator: None };
            let mut buf = Vec::new();
            write_libsvm(&ds, &mut buf).unwrap();
            let back = parse_libsvm(buf.as_slice()).unwrap();
            prop_assert_eq!(back, ds);
        }

        #[test]
        fn normalization_bounds_and_idempotence(examples in prop::collection::vec(arb_example(), 1..20)) {
            let dim = examples.iter().map(|e| e.features.min_dim()).max().unwrap_or(0);
            let ds = Dataset { task: infer_task(&examples), examples, dim, has_bias: false, comparator: None };
            let n = ds.normalize_and_bias();
            for (a, b) in n.examples.iter().zip(&ds.examples) {
                prop_assert_eq!(a.label, b.label);
                prop_assert_eq!(a.weight, b.weight);
                prop_assert!(a.features.values().iter().all(|v| v.abs() <= 1.0));
                prop_assert_eq!(*a.features.values().last().unwrap(), 1.0);
            }
            prop_assert_eq!(n.normalize_and_bias(), n);
        }
    }
}
