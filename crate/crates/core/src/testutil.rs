//! Shared fixtures for unit tests.

use ndarray::{Array1, Array2};
use rand::Rng;

use crate::copies::CopyNumberProfile;
use crate::counts::CountTensor;
use crate::data::Dataset;
use crate::genome::BinnedGenome;
use crate::model::ModelState;
use crate::rng;

/// Small random instance with every cell populated by a few events.
pub fn toy(seed: u64, n_i: usize, n_j: usize, n_k: usize, n_q: usize, p: usize) -> (Dataset, ModelState) {
    let mut g = rng::stream(seed, &[0]);
    let x = Array2::from_shape_fn((n_q, p), |_| g.random::<f64>() * 2.0 - 1.0);
    let mut genome = BinnedGenome::tiled("t", n_q, 10, x, (0..p).map(|l| format!("x{l}")).collect()).unwrap();
    for b in genome.bins.iter_mut() {
        b.weight = 1.0 + (g.random::<f64>() * 9.0).floor();
    }
    let copies = CopyNumberProfile {
        copies: Array2::from_shape_fn((n_q, n_j), |_| 1.0 + (g.random::<f64>() * 4.0).floor()),
        ignored_segments: 0,
    };
    let mut events = Vec::new();
    for q in 0..n_q {
        for j in 0..n_j {
            for i in 0..n_i {
                let n = (g.random::<f64>() * 4.0) as usize;
                events.extend(std::iter::repeat_n((q, j, i), n));
            }
        }
    }
    let counts = CountTensor::from_events(events, (0..n_j).map(|j| format!("P{j}")).collect(), n_i, 0);
    let data = Dataset::new(genome, copies, counts).unwrap();
    let mut r = Array2::from_shape_fn((n_i, n_k), |_| 0.1 + g.random::<f64>());
    for mut col in r.columns_mut() {
        let s = col.sum();
        col.mapv_inplace(|v| v / s);
    }
    let state = ModelState {
        r,
        theta: Array2::from_shape_fn((n_k, n_j), |_| 0.05 + g.random::<f64>() * 0.2),
        beta: Array2::from_shape_fn((n_k, p), |_| g.random::<f64>() - 0.5),
        mu: Array1::from_shape_fn(n_k, |_| 0.5 + g.random::<f64>()),
        sigma2: Array1::from_shape_fn(n_k, |_| 0.5 + g.random::<f64>()),
        fixed_signatures: false,
    };
    (data, state)
}

