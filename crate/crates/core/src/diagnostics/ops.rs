//! Matrix-multiplication accounting per training iteration.

use crate::error::{PcError, Result};
use crate::math::{matmuls_performed, reset_matmul_counter, Activation, Mat, OutputNl};
use crate::optim::{training_grads, Algorithm};
use crate::pcn::{Clamp, Network, NetworkSpec, Params};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OpCount {
    pub algorithm: Algorithm,
    pub layers: usize,
    pub iterations: usize,
    pub matmuls: u64,
}

/// Closed-form products per training iteration: `3L − 1` for
/// backpropagation, `T(2L − 1) + L` for both inference-learning variants.
pub fn matmul_count(algorithm: Algorithm, layers: usize, iterations: usize) -> Result<OpCount> {
    if layers < 2 {
        return Err(PcError::InvalidConfig(format!(
            "need at least two layers, got {layers}"
        )));
    }
    let l = layers as u64;
    let matmuls = match algorithm {
        Algorithm::Bp => 3 * l - 1,
        Algorithm::Il | Algorithm::SeqIl => {
            if iterations == 0 {
                return Err(PcError::InvalidConfig(
                    "inference learning needs at least one iteration".into(),
                ));
            }
            iterations as u64 * (2 * l - 1) + l
        }
    };
    Ok(OpCount {
        algorithm,
        layers,
        iterations,
        matmuls,
    })
}

/// Runs one training iteration's gradient computation on a small
/// deterministic network and reads the product counter.
pub fn measure_matmuls(algorithm: Algorithm, layers: usize, iterations: usize) -> Result<OpCount> {
    if layers < 1 {
        return Err(PcError::InvalidConfig("need at least one layer".into()));
    }
    let dims: Vec<usize> = (0..=layers).map(|i| 3 + i % 2).collect();
    let spec = NetworkSpec::new(dims, Activation::Tanh, OutputNl::Softmax)?;
    let mut params = Params::zeros(&spec);
    for (k, v) in params
        .weights
        .iter_mut()
        .flat_map(|w| w.data_mut().iter_mut())
        .enumerate()
    {
        *v = (0.7 * k as f64).sin() * 0.5;
    }
    let net = Network::new(spec, params)?;
    let x = Mat::from_rows(&[[0.1, -0.4, 0.8], [0.5, 0.2, -0.3]]);
    let out = net.spec.layer_dims[layers];
    let mut y = Mat::zeros(2, out);
    y.set(0, 0, 1.0);
    y.set(1, out - 1, 1.0);
    reset_matmul_counter();
    training_grads(&net, &x, &y, algorithm, iterations, 0.1, Clamp::Full)?;
    Ok(OpCount {
        algorithm,
        layers,
        iterations,
        matmuls: matmuls_performed(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_examples() {
        assert_eq!(matmul_count(Algorithm::Bp, 4, 0).unwrap().matmuls, 11);
        assert_eq!(matmul_count(Algorithm::SeqIl, 4, 3).unwrap().matmuls, 25);
        assert_eq!(matmul_count(Algorithm::Il, 4, 15).unwrap().matmuls, 109);
        assert!(matmul_count(Algorithm::Il, 4, 0).is_err());
        assert!(matmul_count(Algorithm::Bp, 1, 0).is_err());
    }

    #[test]
    fn instrumentation_agrees_with_closed_form() {
        for alg in [Algorithm::Bp, Algorithm::Il, Algorithm::SeqIl] {
            for layers in 2..=5 {
                for t in [1, 2, 7] {
                    let t = if alg == Algorithm::Bp { 0 } else { t };
                    assert_eq!(
                        measure_matmuls(alg, layers, t).unwrap().matmuls,
                        matmul_count(alg, layers, t).unwrap().matmuls,
                        "{alg} L={layers} T={t}"
                    );
                }
            }
        }
    }
}
