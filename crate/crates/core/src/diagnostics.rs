//! Chain diagnostics: effective sample size and Kolmogorov-Smirnov tests.

use serde::Serialize;

use crate::error::{PpfError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Ess {
    pub ess: f64,
    /// The chain never moved; `ess` is reported as the chain length.
    pub zero_variance: bool,
}

fn autocovariance(c: &[f64], lag: usize) -> f64 {
    let n = c.len();
    c[..n - lag].iter().zip(&c[lag..]).map(|(a, b)| a * b).sum::<f64>() / n as f64
}

/// Effective sample size with Geyer's initial positive sequence: sums of
/// adjacent autocorrelation pairs are accumulated while they stay positive.
/// Lags are evaluated only as far as the sequence runs.
pub fn ess(draws: &[f64]) -> Result<Ess> {
    let n = draws.len();
    if n < 10 {
        return Err(PpfError::Config(format!("effective sample size needs at least 10 draws, got {n}")));
    }
    let mean = draws.iter().sum::<f64>() / n as f64;
    let c: Vec<f64> = draws.iter().map(|v| v - mean).collect();
    let g0 = autocovariance(&c, 0);
    if g0 <= 0.0 || !g0.is_finite() {
        return Ok(Ess {
            ess: n as f64,
            zero_variance: true,
        });
    }
    let mut sum = 0.0;
    let mut m = 0;
    while 2 * m + 1 < n {
        let pair = (autocovariance(&c, 2 * m) + autocovariance(&c, 2 * m + 1)) / g0;
        if pair <= 0.0 {
            break;
        }
        sum += pair;
        m += 1;
    }
    // tau = -1 + 2 * sum of positive pair sums.
    let tau = (2.0 * sum - 1.0).max(1.0 / n as f64);
    Ok(Ess {
        ess: n as f64 / tau,
        zero_variance: false,
    })
}

/// Kolmogorov-Smirnov distance between a sample and a continuous CDF.
pub fn ks_statistic<F: Fn(f64) -> f64>(sample: &[f64], cdf: F) -> f64 {
    let mut s = sample.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Asymptotic p-value of the one-sample KS statistic `d` at sample size
/// `n`, with Stephens' small-sample correction.
pub fn ks_pvalue(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut p = 0.0;
    for k in 1..=200 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        p += if k % 2 == 1 { 2.0 * term } else { -2.0 * term };
        if term < 1e-16 {
            break;
        }
    }
    p.clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn iid_normal_ess_near_n() {
        let mut g = rng::stream(1, &[]);
        let normal = Normal::new(0.0, 1.0).unwrap();
        for rep in 0..5 {
            let x: Vec<f64> = (0..1500).map(|_| normal.sample(&mut g)).collect();
            let e = ess(&x).unwrap();
            assert!((1200.0..=1800.0).contains(&e.ess), "rep {rep}: {}", e.ess);
        }
    }

    #[test]
    fn ar1_ess_matches_theory() {
        let mut g = rng::stream(2, &[]);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let (n, phi) = (20_000, 0.9);
        let mut x = Vec::with_capacity(n);
        let mut v: f64 = normal.sample(&mut g) / (1.0f64 - phi * phi).sqrt();
        for _ in 0..n {
            v = phi * v + normal.sample(&mut g);
            x.push(v);
        }
        let want = n as f64 * (1.0 - phi) / (1.0 + phi);
        let e = ess(&x).unwrap().ess;
        assert!((e - want).abs() < 0.25 * want, "{e} vs {want}");
    }

    #[test]
    fn constant_chain_flagged() {
        let e = ess(&[3.0; 50]).unwrap();
        assert!(e.zero_variance);
        assert_eq!(e.ess, 50.0);
        assert!(ess(&[1.0; 5]).is_err());
    }

    #[test]
    fn ks_accepts_right_and_rejects_wrong_distribution() {
        let mut g = rng::stream(3, &[]);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let x: Vec<f64> = (0..5000).map(|_| normal.sample(&mut g)).collect();
        let cdf = |v: f64| 0.5 * (1.0 + statrs::function::erf::erf(v / 2f64.sqrt()));
        assert!(ks_pvalue(ks_statistic(&x, cdf), x.len()) > 0.01);
        let shifted: Vec<f64> = x.iter().map(|v| v + 0.2).collect();
        assert!(ks_pvalue(ks_statistic(&shifted, cdf), x.len()) < 1e-6);
    }

    #[test]
    fn kolmogorov_reference_values() {
        // Large-sample critical values: P(K > 1.358) = 0.05, P(K > 1.628) = 0.01.
        let n = 1_000_000;
        let scale = (n as f64).sqrt();
        assert!((ks_pvalue(1.358 / scale, n) - 0.05).abs() < 1e-3);
        assert!((ks_pvalue(1.628 / scale, n) - 0.01).abs() < 5e-4);
    }
}
