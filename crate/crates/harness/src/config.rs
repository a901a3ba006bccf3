//! Experiment configuration from flat `key = value` files.
//!
//! ```text
//! # one pair per line; lists are comma separated
//! dataset   = teacher
//! layers    = 20, 64, 64, 5
//! algorithm = seqil
//! lr        = 0.01
//! ```

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use pclab_core::math::{Activation, OutputNl};
use pclab_core::optim::{Algorithm, OptimizerKind};
use pclab_core::pcn::{Clamp, NetworkSpec};

use crate::data::{load_csv, load_idx, synth_blobs, synth_teacher, Dataset, TeacherTargets};
use crate::error::{io_err, HarnessError, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    /// With a test pair, the files' own split replaces the 80/20 split.
    Idx {
        images: PathBuf,
        labels: PathBuf,
        test: Option<(PathBuf, PathBuf)>,
    },
    Csv {
        path: PathBuf,
    },
    Blobs {
        samples: usize,
        spread: f64,
    },
    Teacher {
        samples: usize,
        layers: Vec<usize>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Classify,
    Autoencode,
}

impl FromStr for Task {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "classify" => Ok(Task::Classify),
            "autoencode" => Ok(Task::Autoencode),
            other => Err(format!("unknown task '{other}'")),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Classify => "classify",
            Task::Autoencode => "autoencode",
        })
    }
}

/// Learning rates: one for every matrix or one per matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum Rates {
    Shared(f64),
    PerMatrix(Vec<f64>),
}

impl Rates {
    pub fn resolve(&self, matrices: usize) -> Result<Vec<f64>> {
        match self {
            Rates::Shared(a) => Ok(vec![*a; matrices]),
            Rates::PerMatrix(v) if v.len() == matrices => Ok(v.clone()),
            Rates::PerMatrix(v) => Err(HarnessError::Invalid(format!(
                "{} learning rates for {matrices} weight matrices",
                v.len()
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub task: Task,
    pub layers: Vec<usize>,
    pub activation: Activation,
    pub output: OutputNl,
    pub clamp: Clamp,
    pub algorithm: Algorithm,
    pub optimizer: OptimizerKind,
    /// Inference iterations per mini-batch; unused by backpropagation.
    pub iterations: usize,
    pub epsilon: f64,
    pub rates: Rates,
    pub batch_size: usize,
    pub epochs: usize,
    /// Stops training early after this many mini-batches.
    pub max_iterations: Option<usize>,
    pub seed: u64,
    /// Seed of synthetic datasets; defaults to `seed`.
    pub data_seed: Option<u64>,
    pub out: Option<PathBuf>,
    /// Mini-batches left out of the weight-update magnitude log.
    pub warmup: usize,
    /// Proximal step size used by the diagnostics.
    pub beta: f64,
    /// Number of times `beta` is halved by the Newton-step diagnostic.
    pub halvings: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSource::Teacher {
                samples: 1000,
                layers: vec![784, 256, 256, 10],
            },
            task: Task::Classify,
            layers: vec![784, 256, 256, 10],
            activation: Activation::Relu,
            output: OutputNl::Softmax,
            clamp: Clamp::Full,
            algorithm: Algorithm::SeqIl,
            optimizer: OptimizerKind::Mq,
            iterations: 3,
            epsilon: 0.1,
            rates: Rates::Shared(0.01),
            batch_size: 64,
            epochs: 5,
            max_iterations: None,
            seed: 0,
            data_seed: None,
            out: None,
            warmup: 0,
            beta: 100.0,
            halvings: 3,
        }
    }
}

const KEYS: &[&str] = &[
    "dataset",
    "images",
    "labels",
    "test_images",
    "test_labels",
    "path",
    "samples",
    "spread",
    "teacher_layers",
    "task",
    "layers",
    "activation",
    "output",
    "clamp",
    "algorithm",
    "optimizer",
    "T",
    "epsilon",
    "lr",
    "batch_size",
    "epochs",
    "max_iterations",
    "seed",
    "data_seed",
    "out",
    "warmup",
    "beta",
    "halvings",
];

fn parse_list<T: FromStr>(raw: &str) -> std::result::Result<Vec<T>, String> {
    raw.split(',')
        .map(|s| {
            s.trim()
                .parse::<T>()
                .map_err(|_| format!("bad list entry '{}'", s.trim()))
        })
        .collect()
}

fn parse_value<T: FromStr>(raw: &str) -> std::result::Result<T, String>
where
    T::Err: fmt::Display,
{
    raw.parse::<T>().map_err(|e| format!("bad value '{raw}': {e}"))
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let mut cfg = Self::parse(&text)?;
        // relative data paths are taken from the config's directory
        if let Some(dir) = path.parent() {
            let anchor = |p: &mut PathBuf| {
                if p.is_relative() && !p.exists() {
                    *p = dir.join(&*p);
                }
            };
            match &mut cfg.dataset {
                DatasetSource::Idx { images, labels, test } => {
                    anchor(images);
                    anchor(labels);
                    if let Some((i, l)) = test {
                        anchor(i);
                        anchor(l);
                    }
                }
                DatasetSource::Csv { path } => anchor(path),
                _ => {}
            }
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = HashSet::new();
        let mut kind = None;
        let mut images = None;
        let mut labels = None;
        let mut test_images = None;
        let mut test_labels = None;
        let mut path = None;
        let mut samples = None;
        let mut spread = None;
        let mut teacher_layers = None;
        let mut iterations_set = false;

        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let content = line.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let bad = |detail: String| HarnessError::Config { line: line_no, detail };
            let (key, value) = content
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| bad(format!("expected 'key = value', got '{content}'")))?;
            if !KEYS.contains(&key) {
                return Err(bad(format!("unknown key '{key}'")));
            }
            if !seen.insert(key.to_string()) {
                return Err(bad(format!("duplicate key '{key}'")));
            }
            if value.is_empty() {
                return Err(bad(format!("empty value for '{key}'")));
            }
            (|| -> std::result::Result<(), String> {
                match key {
                    "dataset" => kind = Some(value.to_string()),
                    "images" => images = Some(PathBuf::from(value)),
                    "labels" => labels = Some(PathBuf::from(value)),
                    "test_images" => test_images = Some(PathBuf::from(value)),
                    "test_labels" => test_labels = Some(PathBuf::from(value)),
                    "path" => path = Some(PathBuf::from(value)),
                    "samples" => samples = Some(parse_value(value)?),
                    "spread" => spread = Some(parse_value(value)?),
                    "teacher_layers" => teacher_layers = Some(parse_list(value)?),
                    "task" => cfg.task = parse_value(value)?,
                    "layers" => cfg.layers = parse_list(value)?,
                    "activation" => cfg.activation = parse_value(value)?,
                    "output" => cfg.output = parse_value(value)?,
                    "clamp" => cfg.clamp = parse_value(value)?,
                    "algorithm" => cfg.algorithm = parse_value(value)?,
                    "optimizer" => cfg.optimizer = parse_value(value)?,
                    "T" => {
                        cfg.iterations = parse_value(value)?;
                        iterations_set = true;
                    }
                    "epsilon" => cfg.epsilon = parse_value(value)?,
                    "lr" => {
                        let v: Vec<f64> = parse_list(value)?;
                        cfg.rates = if v.len() == 1 {
                            Rates::Shared(v[0])
                        } else {
                            Rates::PerMatrix(v)
                        };
                    }
                    "batch_size" => cfg.batch_size = parse_value(value)?,
                    "epochs" => cfg.epochs = parse_value(value)?,
                    "max_iterations" => cfg.max_iterations = Some(parse_value(value)?),
                    "seed" => cfg.seed = parse_value(value)?,
                    "data_seed" => cfg.data_seed = Some(parse_value(value)?),
                    "out" => cfg.out = Some(PathBuf::from(value)),
                    "warmup" => cfg.warmup = parse_value(value)?,
                    "beta" => cfg.beta = parse_value(value)?,
                    "halvings" => cfg.halvings = parse_value(value)?,
                    _ => unreachable!("key list checked above"),
                }
                Ok(())
            })()
            .map_err(|detail| bad(format!("{key}: {detail}")))?;
        }

        if cfg.task == Task::Autoencode && !iterations_set {
            cfg.iterations = 6;
        }
        let missing = |k: &str| HarnessError::Invalid(format!("dataset needs '{k}'"));
        cfg.dataset = match kind.as_deref().unwrap_or("teacher") {
            "idx" => DatasetSource::Idx {
                images: images.ok_or_else(|| missing("images"))?,
                labels: labels.ok_or_else(|| missing("labels"))?,
                test: match (test_images, test_labels) {
                    (Some(i), Some(l)) => Some((i, l)),
                    (None, None) => None,
                    _ => return Err(HarnessError::Invalid("test_images and test_labels go together".into())),
                },
            },
            "csv" => DatasetSource::Csv {
                path: path.ok_or_else(|| missing("path"))?,
            },
            "blobs" => DatasetSource::Blobs {
                samples: samples.unwrap_or(1000),
                spread: spread.unwrap_or(0.3),
            },
            "teacher" => DatasetSource::Teacher {
                samples: samples.unwrap_or(1000),
                layers: teacher_layers.unwrap_or_else(|| cfg.layers.clone()),
            },
            other => return Err(HarnessError::Invalid(format!("unknown dataset '{other}'"))),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(HarnessError::Invalid(m));
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if self.epochs == 0 {
            return fail("epochs must be at least 1".into());
        }
        if !(self.epsilon > 0.0) {
            return fail(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if !(self.beta > 0.0) {
            return fail(format!("beta must be positive, got {}", self.beta));
        }
        self.spec()?;
        self.rates.resolve(self.layers.len() - 1)?;
        if let DatasetSource::Teacher { layers, .. } = &self.dataset {
            if layers.first() != self.layers.first() || layers.last() != self.layers.last() {
                return fail("teacher_layers must share input and output widths with layers".into());
            }
        }
        Ok(())
    }

    pub fn spec(&self) -> Result<NetworkSpec> {
        Ok(NetworkSpec::new(self.layers.clone(), self.activation, self.output)?)
    }

    pub fn data_seed(&self) -> u64 {
        self.data_seed.unwrap_or(self.seed)
    }

    /// Loads or generates the dataset and splits it 80/20, unless the
    /// source comes with its own test set.
    pub fn load_data(&self) -> Result<(Dataset, Dataset)> {
        if let DatasetSource::Idx {
            images,
            labels,
            test: Some((ti, tl)),
        } = &self.dataset
        {
            let train = self.shape_for_task(load_idx(images, labels)?)?;
            let test = self.shape_for_task(load_idx(ti, tl)?)?;
            return Ok((train, test));
        }
        let targets = match self.task {
            Task::Classify => TeacherTargets::Classes,
            Task::Autoencode => TeacherTargets::Regression,
        };
        let data = match &self.dataset {
            DatasetSource::Idx { images, labels, .. } => load_idx(images, labels)?,
            DatasetSource::Csv { path } => load_csv(path, self.task == Task::Classify)?,
            DatasetSource::Blobs { samples, spread } => synth_blobs(
                self.data_seed(),
                *samples,
                self.layers[0],
                *self.layers.last().expect("validated"),
                *spread,
            )?,
            DatasetSource::Teacher { samples, layers } => synth_teacher(self.data_seed(), *samples, layers, targets)?,
        };
        Ok(self.shape_for_task(data)?.split())
    }

    fn shape_for_task(&self, data: Dataset) -> Result<Dataset> {
        let data = match self.task {
            Task::Classify => data,
            Task::Autoencode => data.autoencoding(),
        };
        if data.input_dim() != self.layers[0] || data.output_dim() != *self.layers.last().expect("validated") {
            return Err(HarnessError::Invalid(format!(
                "data has {} inputs and {} targets, network is {:?}",
                data.input_dim(),
                data.output_dim(),
                self.layers
            )));
        }
        Ok(data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let cfg = ExperimentConfig::parse("").unwrap();
        assert_eq!(cfg.batch_size, 64);
        assert_eq!(cfg.iterations, 3);
        assert_eq!(cfg.epsilon, 0.1);
        assert_eq!(cfg.layers, vec![784, 256, 256, 10]);
        let ae = ExperimentConfig::parse("task = autoencode\noutput = sigmoid\nlayers = 4, 2, 4").unwrap();
        assert_eq!(ae.iterations, 6);
    }

    #[test]
    fn parses_pairs_comments_and_lists() {
        let cfg = ExperimentConfig::parse(
            "# toy run\ndataset = blobs   # inline\nsamples = 50\nlayers = 2, 8, 3\nlr = 0.1, 0.2\nalgorithm = il\nT = 20\n",
        )
        .unwrap();
        assert_eq!(
            cfg.dataset,
            DatasetSource::Blobs {
                samples: 50,
                spread: 0.3
            }
        );
        assert_eq!(cfg.rates.resolve(2).unwrap(), vec![0.1, 0.2]);
        assert_eq!(cfg.algorithm, Algorithm::Il);
        assert_eq!(cfg.iterations, 20);
    }

    #[test]
    fn rejects_bad_input() {
        for (text, needle) in [
            ("nonsense", "key = value"),
            ("colour = red", "unknown key"),
            ("T = 1\nT = 2", "duplicate"),
            ("batch_size = 0", "batch_size"),
            ("epsilon = -1", "epsilon"),
            ("layers = 3, x", "layers"),
            ("dataset = idx", "images"),
            ("dataset = idx\nimages = a\nlabels = b\ntest_images = c", "together"),
            ("layers = 2, 3\nlr = 0.1, 0.1, 0.1", "learning rates"),
        ] {
            let err = ExperimentConfig::parse(text).unwrap_err().to_string();
            assert!(err.contains(needle), "{text}: {err}");
        }
    }

    #[test]
    fn config_line_numbers_are_reported() {
        let err = ExperimentConfig::parse("# header\n\nT = three").unwrap_err();
        assert!(matches!(err, HarnessError::Config { line: 3, .. }));
    }
}
