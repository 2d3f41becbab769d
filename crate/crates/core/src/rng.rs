//! Seeded random streams.
//!
//! Every stream is derived from a root seed plus a path of integers
//! (e.g. iteration, step, chunk), so parallel work draws from
//! independent generators regardless of scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

pub type Stream = ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a 64-bit key from a seed and a path of stream coordinates.
pub fn derive(seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix(seed), |acc, &p| splitmix(acc ^ splitmix(p.wrapping_add(1))))
}

pub fn stream(seed: u64, path: &[u64]) -> Stream {
    ChaCha8Rng::seed_from_u64(derive(seed, path))
}

/// Gamma(shape, rate) draw. Shapes must be positive and finite.
pub fn gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64, rate: f64) -> f64 {
    Gamma::new(shape, 1.0 / rate)
        .expect("gamma parameters must be positive")
        .sample(rng)
}

/// Inverse-gamma(shape, scale) draw.
pub fn inv_gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64, scale: f64) -> f64 {
    1.0 / gamma(rng, shape, scale)
}

/// Dirichlet draw through normalised Gamma variates. Small shapes can
/// underflow every variate to zero, in which case the draw is redone in
/// log space.
pub fn dirichlet<R: Rng + ?Sized>(rng: &mut R, alpha: &[f64]) -> Vec<f64> {
    let mut g: Vec<f64> = alpha.iter().map(|&a| gamma(rng, a, 1.0)).collect();
    let total: f64 = g.iter().sum();
    if total > 0.0 && total.is_finite() {
        g.iter_mut().for_each(|v| *v /= total);
        return g;
    }
    // log G = log G' + log(U) / a with G' ~ Gamma(a + 1).
    let logs: Vec<f64> = alpha
        .iter()
        .map(|&a| gamma(rng, a + 1.0, 1.0).ln() + rng.random::<f64>().ln() / a)
        .collect();
    let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logs.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= s);
    out
}
