//! Datasets: IDX containers, CSV files and two seeded synthetic generators.

use std::fs;
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;
use pclab_core::math::{Activation, Mat, OutputNl};
use pclab_core::pcn::{Network, NetworkSpec, Params};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{io_err, HarnessError, Result};

const IMAGE_MAGIC: u32 = 2051;
const LABEL_MAGIC: u32 = 2049;

/// Inputs and targets, one sample per row. `labels` is set for
/// classification data.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Mat,
    pub y: Mat,
    pub labels: Option<Vec<usize>>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.x.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.y.cols()
    }

    pub fn subset(&self, rows: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_rows(rows),
            y: self.y.select_rows(rows),
            labels: self.labels.as_ref().map(|l| rows.iter().map(|&i| l[i]).collect()),
        }
    }

    /// Inputs double as targets.
    pub fn autoencoding(&self) -> Dataset {
        Dataset {
            x: self.x.clone(),
            y: self.x.clone(),
            labels: None,
        }
    }

    /// The leading 80% for training, the rest for testing.
    pub fn split(&self) -> (Dataset, Dataset) {
        let n_train = (self.len() * 4).div_ceil(5).min(self.len());
        let train: Vec<usize> = (0..n_train).collect();
        let test: Vec<usize> = (n_train..self.len()).collect();
        (self.subset(&train), self.subset(&test))
    }
}

/// One-hot rows for integer labels.
pub fn one_hot(labels: &[usize], classes: usize) -> Mat {
    let mut y = Mat::zeros(labels.len(), classes);
    for (i, &c) in labels.iter().enumerate() {
        y.set(i, c, 1.0);
    }
    y
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(io_err(path))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(io_err(path))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize) -> Option<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("four bytes")))
}

/// Parses an IDX image container (`u8` pixels) into rows scaled to `[0, 1]`.
pub fn parse_idx_images(bytes: &[u8]) -> std::result::Result<Mat, String> {
    let magic = be_u32(bytes, 0).ok_or("missing header")?;
    if magic != IMAGE_MAGIC {
        return Err(format!("bad image magic {magic}, expected {IMAGE_MAGIC}"));
    }
    let header: Vec<usize> = (1..4)
        .map(|k| be_u32(bytes, 4 * k).map(|v| v as usize))
        .collect::<Option<_>>()
        .ok_or("truncated header")?;
    let (n, dim) = (header[0], header[1] * header[2]);
    let body = &bytes[16..];
    if body.len() < n * dim {
        return Err(format!(
            "truncated: {n} images of {dim} pixels need {} bytes, found {}",
            n * dim,
            body.len()
        ));
    }
    let data = body[..n * dim].iter().map(|&p| p as f64 / 255.0).collect();
    Mat::from_vec(n, dim, data).map_err(|e| e.to_string())
}

/// Parses an IDX label container.
pub fn parse_idx_labels(bytes: &[u8]) -> std::result::Result<Vec<usize>, String> {
    let magic = be_u32(bytes, 0).ok_or("missing header")?;
    if magic != LABEL_MAGIC {
        return Err(format!("bad label magic {magic}, expected {LABEL_MAGIC}"));
    }
    let n = be_u32(bytes, 4).ok_or("truncated header")? as usize;
    let body = &bytes[8..];
    if body.len() < n {
        return Err(format!("truncated: {n} labels, found {}", body.len()));
    }
    Ok(body[..n].iter().map(|&b| b as usize).collect())
}

/// Loads an image/label IDX pair, gzipped or not. Labels become one-hot
/// rows over `max label + 1` classes (at least 10).
pub fn load_idx(images: &Path, labels: &Path) -> Result<Dataset> {
    let x = parse_idx_images(&read_bytes(images)?).map_err(|detail| HarnessError::Format {
        path: images.into(),
        detail,
    })?;
    let lab = parse_idx_labels(&read_bytes(labels)?).map_err(|detail| HarnessError::Format {
        path: labels.into(),
        detail,
    })?;
    if lab.len() != x.rows() {
        return Err(HarnessError::Format {
            path: labels.into(),
            detail: format!("{} labels for {} images", lab.len(), x.rows()),
        });
    }
    let classes = lab.iter().max().map_or(10, |&m| (m + 1).max(10));
    Ok(Dataset {
        y: one_hot(&lab, classes),
        x,
        labels: Some(lab),
    })
}

/// Loads a headerless numeric CSV. With `label_column` set, the first column
/// holds integer class labels and the rest are features; otherwise every
/// column is a feature and the targets equal the inputs.
pub fn load_csv(path: &Path, label_column: bool) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(source) => HarnessError::Io {
                path: path.into(),
                source,
            },
            other => HarnessError::Format {
                path: path.into(),
                detail: format!("{other:?}"),
            },
        })?;
    let bad = |row: usize, detail: String| HarnessError::Format {
        path: path.into(),
        detail: format!("row {}: {detail}", row + 1),
    };
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut width = None;
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let mut fields = record.iter();
        if label_column {
            let raw = fields.next().ok_or_else(|| bad(i, "empty row".into()))?;
            labels.push(raw.parse::<usize>().map_err(|_| bad(i, format!("bad label '{raw}'")))?);
        }
        let row: Vec<f64> = fields
            .map(|f| f.parse::<f64>().map_err(|_| bad(i, format!("bad number '{f}'"))))
            .collect::<Result<_>>()?;
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => return Err(bad(i, format!("{} features, expected {w}", row.len()))),
            _ => {}
        }
        features.extend(row);
    }
    let width = width.ok_or_else(|| HarnessError::Format {
        path: path.into(),
        detail: "no rows".into(),
    })?;
    let x = Mat::from_vec(features.len() / width.max(1), width, features)?;
    if label_column {
        let classes = labels.iter().max().map_or(1, |m| m + 1);
        Ok(Dataset {
            y: one_hot(&labels, classes),
            x,
            labels: Some(labels),
        })
    } else {
        Ok(Dataset {
            y: x.clone(),
            x,
            labels: None,
        })
    }
}

/// Weights uniform in `±1/√fan_in` (fan-in without the bias), bias column
/// zero.
pub fn init_params(spec: &NetworkSpec, seed: u64) -> Params {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = Params::zeros(spec);
    for w in &mut params.weights {
        let fan_in = w.cols() - 1;
        let s = 1.0 / (fan_in as f64).sqrt();
        for i in 0..w.rows() {
            for j in 0..fan_in {
                w.set(i, j, rng.random_range(-s..=s));
            }
        }
    }
    params
}

/// Whether a teacher's outputs are kept as regression targets or turned
/// into argmax class labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TeacherTargets {
    Regression,
    Classes,
}

/// `n` inputs uniform in `[−1, 1]` labeled by `teacher`.
pub fn synth_teacher_with(teacher: &Network, seed: u64, n: usize, targets: TeacherTargets) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = teacher.spec.layer_dims[0];
    let data = (0..n * dim).map(|_| rng.random_range(-1.0..=1.0)).collect();
    let x = Mat::from_vec(n, dim, data)?;
    let out = teacher.predict(&x)?;
    Ok(match targets {
        TeacherTargets::Regression => Dataset {
            x,
            y: out,
            labels: None,
        },
        TeacherTargets::Classes => {
            let labels: Vec<usize> = (0..n).map(|i| argmax(out.row(i))).collect();
            Dataset {
                y: one_hot(&labels, out.cols()),
                x,
                labels: Some(labels),
            }
        }
    })
}

/// A frozen random tanh teacher with the given dims, then
/// [`synth_teacher_with`].
pub fn synth_teacher(seed: u64, n: usize, dims: &[usize], targets: TeacherTargets) -> Result<Dataset> {
    let spec = NetworkSpec::new(dims.to_vec(), Activation::Tanh, OutputNl::Identity)?;
    let teacher = Network::new(spec.clone(), init_params(&spec, seed ^ 0x7ea_c4e5))?;
    synth_teacher_with(&teacher, seed, n, targets)
}

/// Gaussian clusters around centers drawn uniformly from `[−1, 1]^dim`,
/// classes cycling through the stream.
pub fn synth_blobs(seed: u64, n: usize, dim: usize, classes: usize, spread: f64) -> Result<Dataset> {
    if classes == 0 || dim == 0 {
        return Err(HarnessError::Invalid(
            "blobs need at least one class and one dimension".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..dim).map(|_| rng.random_range(-1.0..=1.0)).collect())
        .collect();
    let noise = Normal::new(0.0, spread).map_err(|e| HarnessError::Invalid(format!("spread: {e}")))?;
    let mut data = Vec::with_capacity(n * dim);
    let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    for &c in &labels {
        data.extend(centers[c].iter().map(|m| m + noise.sample(&mut rng)));
    }
    Ok(Dataset {
        x: Mat::from_vec(n, dim, data)?,
        y: one_hot(&labels, classes),
        labels: Some(labels),
    })
}

/// Index of the largest entry; the first one on ties.
pub fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold(
            (0, f64::NEG_INFINITY),
            |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) },
        )
        .0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx_images(n: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        for v in [IMAGE_MAGIC, n, rows, cols] {
            b.extend(v.to_be_bytes());
        }
        b.extend(pixels);
        b
    }

    fn idx_labels(labels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend(LABEL_MAGIC.to_be_bytes());
        b.extend((labels.len() as u32).to_be_bytes());
        b.extend(labels);
        b
    }

    #[test]
    fn idx_examples() {
        let x = parse_idx_images(&idx_images(1, 2, 2, &[0; 4])).unwrap();
        assert_eq!(x, Mat::from_rows(&[[0.0; 4]]));
        let x = parse_idx_images(&idx_images(1, 1, 2, &[255, 51])).unwrap();
        assert_eq!(x.data(), &[1.0, 0.2]);
        let y = one_hot(&parse_idx_labels(&idx_labels(&[3])).unwrap(), 10);
        assert_eq!(y.row(0), &[0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn idx_errors() {
        let mut bad = idx_images(1, 2, 2, &[0; 4]);
        bad[3] = 0x01;
        assert!(parse_idx_images(&bad).unwrap_err().contains("magic"));
        assert!(parse_idx_images(&idx_images(2, 2, 2, &[0; 5]))
            .unwrap_err()
            .contains("truncated"));
        assert!(parse_idx_labels(&idx_images(1, 1, 1, &[0])).is_err());
        assert!(parse_idx_labels(&idx_labels(&[1, 2])[..9]).is_err());
    }

    #[test]
    fn init_bounds_and_bias() {
        let spec = NetworkSpec::new(vec![16, 9, 4], Activation::Relu, OutputNl::Softmax).unwrap();
        let p = init_params(&spec, 11);
        for w in &p.weights {
            let s = 1.0 / ((w.cols() - 1) as f64).sqrt();
            for i in 0..w.rows() {
                let row = w.row(i);
                assert_eq!(*row.last().unwrap(), 0.0);
                assert!(row.iter().all(|v| v.abs() <= s));
            }
        }
        assert_eq!(p, init_params(&spec, 11));
        assert_ne!(p, init_params(&spec, 12));
    }

    #[test]
    fn teacher_is_reproducible() {
        let a = synth_teacher(4, 20, &[3, 5, 2], TeacherTargets::Regression).unwrap();
        assert_eq!(a, synth_teacher(4, 20, &[3, 5, 2], TeacherTargets::Regression).unwrap());
        assert_ne!(a, synth_teacher(5, 20, &[3, 5, 2], TeacherTargets::Regression).unwrap());
        assert!(a.x.data().iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn zero_teacher_gives_constant_targets() {
        let spec = NetworkSpec::new(vec![3, 4, 2], Activation::Tanh, OutputNl::Identity).unwrap();
        let mut params = Params::zeros(&spec);
        params.weights[1].set(0, 4, 0.7);
        let teacher = Network::new(spec, params).unwrap();
        let d = synth_teacher_with(&teacher, 1, 6, TeacherTargets::Regression).unwrap();
        for i in 0..6 {
            assert_eq!(d.y.row(i), &[0.7, 0.0]);
        }
    }

    #[test]
    fn blobs_and_split() {
        let d = synth_blobs(3, 10, 2, 3, 0.1).unwrap();
        assert_eq!(d.labels.as_ref().unwrap()[..4], [0, 1, 2, 0]);
        let (train, test) = d.split();
        assert_eq!((train.len(), test.len()), (8, 2));
        assert_eq!(test.x.row(0), d.x.row(8));
        assert_eq!(d, synth_blobs(3, 10, 2, 3, 0.1).unwrap());
    }

    #[test]
    fn argmax_takes_first_maximum() {
        assert_eq!(argmax(&[0.1, 0.7, 0.7]), 1);
        assert_eq!(argmax(&[-1.0]), 0);
    }
}
