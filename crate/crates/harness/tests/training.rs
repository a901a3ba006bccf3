use std::io::Write;
use std::path::PathBuf;

use flate2::write::GzEncoder;
use flate2::Compression;
use pclab::config::{DatasetSource, Rates};
use pclab::data::{init_params, load_idx};
use pclab::metrics::{read_csv, write_csv, MetricsRecord, RunStatus};
use pclab::train::train;
use pclab::ExperimentConfig;
use pclab_core::math::{Activation, OutputNl};
use pclab_core::optim::{Algorithm, OptimizerKind};
use proptest::prelude::*;

fn toy(algorithm: Algorithm, optimizer: OptimizerKind, lr: f64) -> ExperimentConfig {
    ExperimentConfig {
        dataset: DatasetSource::Teacher {
            samples: 600,
            layers: vec![8, 16, 16, 4],
        },
        layers: vec![8, 24, 24, 4],
        activation: Activation::Tanh,
        output: OutputNl::Softmax,
        algorithm,
        optimizer,
        iterations: 5,
        epsilon: 0.1,
        rates: Rates::Shared(lr),
        batch_size: 32,
        epochs: 6,
        ..ExperimentConfig::default()
    }
}

#[test]
fn every_algorithm_lowers_the_training_loss() {
    for (alg, opt, lr) in [
        (Algorithm::Bp, OptimizerKind::Sgd, 0.5),
        (Algorithm::Il, OptimizerKind::Sgd, 0.5),
        (Algorithm::SeqIl, OptimizerKind::Sgd, 0.5),
        (Algorithm::SeqIl, OptimizerKind::Mq, 0.01),
        (Algorithm::Il, OptimizerKind::Adam, 0.003),
    ] {
        let cfg = toy(alg, opt, lr);
        let (tr, te) = cfg.load_data().unwrap();
        let out = train(&cfg, &tr, &te).unwrap();
        assert_eq!(out.status, RunStatus::Ok);
        assert_eq!(out.records.len(), 7);
        let (first, last) = (&out.records[0], out.last());
        assert!(
            last.train_loss < 0.7 * first.train_loss,
            "{alg} {opt:?}: {} -> {}",
            first.train_loss,
            last.train_loss
        );
        assert!(last.test_accuracy.unwrap() > first.test_accuracy.unwrap());
    }
}

#[test]
fn zero_iterations_leave_the_initial_weights() {
    let cfg = ExperimentConfig {
        max_iterations: Some(0),
        ..toy(Algorithm::SeqIl, OptimizerKind::Mq, 0.01)
    };
    let (tr, te) = cfg.load_data().unwrap();
    let out = train(&cfg, &tr, &te).unwrap();
    assert_eq!(out.iterations, 0);
    assert_eq!(out.params, init_params(&cfg.spec().unwrap(), cfg.seed));
}

#[test]
fn iteration_cap_stops_mid_epoch() {
    let cfg = ExperimentConfig {
        max_iterations: Some(7),
        ..toy(Algorithm::Il, OptimizerKind::Sgd, 0.1)
    };
    let (tr, te) = cfg.load_data().unwrap();
    let out = train(&cfg, &tr, &te).unwrap();
    assert_eq!(out.iterations, 7);
    assert_eq!(out.last().iteration, 7);
    assert_eq!(out.last().epoch, 1);
}

#[test]
fn huge_steps_end_in_a_diverged_record() {
    let cfg = ExperimentConfig {
        activation: Activation::Relu,
        output: OutputNl::Identity,
        ..toy(Algorithm::Bp, OptimizerKind::Sgd, 1e200)
    };
    let (tr, te) = cfg.load_data().unwrap();
    let out = train(&cfg, &tr, &te).unwrap();
    assert_eq!(out.status, RunStatus::Diverged);
    assert_eq!(out.last().status, RunStatus::Diverged);
    assert!(out.records[..out.records.len() - 1]
        .iter()
        .all(|r| r.status == RunStatus::Ok));
}

fn gz(path: &PathBuf, bytes: &[u8]) {
    let mut enc = GzEncoder::new(std::fs::File::create(path).unwrap(), Compression::fast());
    enc.write_all(bytes).unwrap();
    enc.finish().unwrap();
}

#[test]
fn idx_files_load_relative_to_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let mut images = vec![0, 0, 8, 3, 0, 0, 0, 3, 0, 0, 0, 2, 0, 0, 0, 2];
    images.extend([0, 255, 51, 102, 255, 255, 0, 0, 1, 2, 3, 4]);
    gz(&dir.path().join("img.gz"), &images);
    std::fs::write(dir.path().join("lab"), [0, 0, 8, 1, 0, 0, 0, 3, 7, 0, 2]).unwrap();
    let data = load_idx(&dir.path().join("img.gz"), &dir.path().join("lab")).unwrap();
    assert_eq!(data.x.shape(), (3, 4));
    assert_eq!(data.x.row(0), &[0.0, 1.0, 0.2, 0.4]);
    assert_eq!(data.labels.as_deref(), Some(&[7, 0, 2][..]));
    assert_eq!(data.y.cols(), 10);

    let cfg_path = dir.path().join("exp.cfg");
    std::fs::write(
        &cfg_path,
        "dataset = idx\nimages = img.gz\nlabels = lab\nlayers = 4, 3, 10\n",
    )
    .unwrap();
    let cfg = ExperimentConfig::from_file(&cfg_path).unwrap();
    let (tr, te) = cfg.load_data().unwrap();
    assert_eq!((tr.len(), te.len()), (3, 0));
}

#[test]
fn idx_label_count_must_match() {
    let dir = tempfile::tempdir().unwrap();
    let images = [0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1, 9];
    std::fs::write(dir.path().join("i"), images).unwrap();
    std::fs::write(dir.path().join("l"), [0, 0, 8, 1, 0, 0, 0, 2, 1, 1]).unwrap();
    assert!(load_idx(&dir.path().join("i"), &dir.path().join("l")).is_err());
}

#[test]
fn bundled_mnist_has_the_standard_split() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist");
    let test = load_idx(
        &dir.join("t10k-images-idx3-ubyte.gz"),
        &dir.join("t10k-labels-idx1-ubyte.gz"),
    )
    .unwrap();
    assert_eq!(test.x.shape(), (10_000, 784));
    let mut counts = [0usize; 10];
    test.labels.as_ref().unwrap().iter().for_each(|&c| counts[c] += 1);
    assert_eq!(counts, [980, 1135, 1032, 1010, 982, 892, 958, 1028, 974, 1009]);
    assert!(test.x.data().iter().all(|v| (0.0..=1.0).contains(v)));
}

fn record() -> impl Strategy<Value = MetricsRecord> {
    (
        0usize..100,
        0usize..100_000,
        -1e6..1e6f64,
        -1e6..1e6f64,
        proptest::option::of(0.0..=1.0f64),
        proptest::collection::vec(0.0..1.0f64, 3),
        any::<bool>(),
        any::<u64>(),
    )
        .prop_map(
            |(epoch, iteration, train_loss, test_loss, test_accuracy, mean_abs_update, ok, wall_ms)| MetricsRecord {
                epoch,
                iteration,
                train_loss,
                test_loss,
                test_accuracy,
                mean_abs_update,
                status: if ok { RunStatus::Ok } else { RunStatus::Diverged },
                wall_ms,
            },
        )
}

proptest! {
    #[test]
    fn metrics_csv_round_trips(records in proptest::collection::vec(record(), 1..8)) {
        let mut buf = Vec::new();
        write_csv(&mut buf, &records).unwrap();
        prop_assert_eq!(read_csv(buf.as_slice()).unwrap(), records);
    }
}
