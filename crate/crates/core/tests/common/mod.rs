#![allow(dead_code)]

use pclab_core::math::{Activation, Mat, OutputNl};
use pclab_core::pcn::{Network, NetworkSpec, Params};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_mat(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Mat {
    let data = (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect();
    Mat::from_vec(rows, cols, data).unwrap()
}

pub fn random_net(rng: &mut ChaCha8Rng, dims: &[usize], act: Activation, out: OutputNl, scale: f64) -> Network {
    let spec = NetworkSpec::new(dims.to_vec(), act, out).unwrap();
    let weights = (0..spec.depth())
        .map(|l| {
            let (r, c) = spec.weight_shape(l);
            random_mat(rng, r, c, scale)
        })
        .collect();
    Network::new(spec, Params { weights }).unwrap()
}

pub fn one_hot(rng: &mut ChaCha8Rng, n: usize, classes: usize) -> Mat {
    let mut y = Mat::zeros(n, classes);
    for i in 0..n {
        y.set(i, rng.random_range(0..classes), 1.0);
    }
    y
}
