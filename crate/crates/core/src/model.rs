//! Quantities derived from a parameter state: covariate effects, binned
//! integrals, expected counts, the log posterior and attribution
//! probabilities.
//!
//! Intensity of channel `i`, patient `j` in bin `q`:
//!
//! ```text
//! lambda_ijq = sum_k r_ik * theta_kj * (c_jq / 2) * exp(beta_k . x_q)
//! ```

use ndarray::{Array1, Array2};
use serde::Serialize;

use crate::counts::SparseCell;
use crate::data::Dataset;
use crate::error::{PpfError, Result};
use crate::par;

/// Largest exponent argument evaluated before clamping.
pub const EXP_CLAMP: f64 = 700.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparams {
    pub k: usize,
    /// Gamma shape of the baseline activities.
    pub a: f64,
    pub epsilon: f64,
    /// I x K Dirichlet precisions.
    pub alpha: Array2<f64>,
    pub c0: f64,
    pub d0: f64,
}

impl Hyperparams {
    pub fn new(n_channels: usize, k: usize) -> Self {
        Hyperparams {
            k,
            a: 1.01,
            epsilon: 0.001,
            alpha: Array2::from_elem((n_channels, k), 1.01),
            c0: 100.0,
            d0: 1.0,
        }
    }

    /// Shape of the compressive prior on the relevance weights.
    pub fn a0(&self, n_patients: usize) -> f64 {
        self.a * n_patients as f64 + 1.0
    }

    /// Scale of the compressive prior on the relevance weights.
    pub fn b0(&self, n_patients: usize) -> f64 {
        self.epsilon * self.a * n_patients as f64
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [self.a, self.epsilon, self.c0, self.d0];
        if self.k == 0 || positive.iter().any(|v| !(*v > 0.0)) {
            return Err(PpfError::Config("hyperparameters must be positive and K >= 1".into()));
        }
        if self.alpha.ncols() != self.k || self.alpha.iter().any(|v| !(*v > 0.0)) {
            return Err(PpfError::Config("alpha must be I x K and positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    /// I x K signatures, columns on the simplex.
    pub r: Array2<f64>,
    /// K x J baseline activities.
    pub theta: Array2<f64>,
    /// K x p regression coefficients.
    pub beta: Array2<f64>,
    pub mu: Array1<f64>,
    pub sigma2: Array1<f64>,
    pub fixed_signatures: bool,
}

impl ModelState {
    pub fn k(&self) -> usize {
        self.r.ncols()
    }

    pub fn check_dims(&self, data: &Dataset) -> Result<()> {
        let k = self.k();
        let ok = self.r.nrows() == data.n_channels()
            && self.theta.dim() == (k, data.n_patients())
            && self.beta.dim() == (k, data.n_covariates())
            && self.mu.len() == k
            && self.sigma2.len() == k;
        if ok {
            Ok(())
        } else {
            Err(PpfError::Dimension(format!(
                "state R {:?}, Theta {:?}, B {:?} incompatible with data (I={}, J={}, p={})",
                self.r.dim(),
                self.theta.dim(),
                self.beta.dim(),
                data.n_channels(),
                data.n_patients(),
                data.n_covariates()
            )))
        }
    }

    /// Keep only the listed factors, in order.
    pub fn select(&self, keep: &[usize]) -> ModelState {
        let pick_cols = |m: &Array2<f64>| m.select(ndarray::Axis(1), keep);
        let pick_rows = |m: &Array2<f64>| m.select(ndarray::Axis(0), keep);
        ModelState {
            r: pick_cols(&self.r),
            theta: pick_rows(&self.theta),
            beta: pick_rows(&self.beta),
            mu: self.mu.select(ndarray::Axis(0), keep),
            sigma2: self.sigma2.select(ndarray::Axis(0), keep),
            fixed_signatures: self.fixed_signatures,
        }
    }
}

/// Q x K matrix of multiplicative covariate effects `exp(beta_k . x_q)`.
#[derive(Debug, Clone)]
pub struct EffectMatrix {
    pub e: Array2<f64>,
    /// Some exponent argument exceeded the clamp.
    pub saturated: bool,
    pub max_abs_linear: f64,
}

/// K x J binned integrals `G_kj = sum_q weight_q (c_jq / 2) E_qk`.
#[derive(Debug, Clone)]
pub struct IntegralMatrix {
    pub g: Array2<f64>,
}

pub fn covariate_effects(beta: &Array2<f64>, x: &Array2<f64>) -> Result<EffectMatrix> {
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(PpfError::Numerical("non-finite regression coefficient".into()));
    }
    let (q_len, k) = (x.nrows(), beta.nrows());
    if beta.ncols() != x.ncols() {
        return Err(PpfError::Dimension(format!(
            "B has {} columns, covariates have {}",
            beta.ncols(),
            x.ncols()
        )));
    }
    let parts = par::map_chunks(q_len, par::CHUNK, |range| {
        let mut out = Vec::with_capacity(range.len() * k);
        let mut max_abs: f64 = 0.0;
        for q in range {
            let xq = x.row(q);
            for kk in 0..k {
                let lin = beta.row(kk).dot(&xq);
                max_abs = max_abs.max(lin.abs());
                out.push(lin.clamp(-EXP_CLAMP, EXP_CLAMP).exp());
            }
        }
        (out, max_abs)
    });
    let mut values = Vec::with_capacity(q_len * k);
    let mut max_abs_linear: f64 = 0.0;
    for (v, m) in parts {
        values.extend(v);
        max_abs_linear = max_abs_linear.max(m);
    }
    let e = Array2::from_shape_vec((q_len, k), values).expect("effect matrix shape");
    Ok(EffectMatrix {
        e,
        saturated: max_abs_linear > EXP_CLAMP,
        max_abs_linear,
    })
}

pub fn integrals(effects: &EffectMatrix, data: &Dataset) -> IntegralMatrix {
    IntegralMatrix {
        g: effects.e.t().dot(&data.exposure),
    }
}

/// `Lambda_ij = sum_k r_ik theta_kj G_kj`.
pub fn expected_counts(state: &ModelState, data: &Dataset) -> Result<Array2<f64>> {
    state.check_dims(data)?;
    let eff = covariate_effects(&state.beta, data.covariates())?;
    let g = integrals(&eff, data).g;
    Ok(state.r.dot(&(&state.theta * &g)))
}

/// Unnormalised attribution weights `u_k = r_ik theta_kj E_qk` of one cell,
/// written into `buf`; returns their sum.
#[inline]
pub(crate) fn cell_weights(state: &ModelState, e: &Array2<f64>, cell: &SparseCell, buf: &mut [f64]) -> f64 {
    let (q, j, i) = (cell.q as usize, cell.j as usize, cell.i as usize);
    let mut total = 0.0;
    for (k, b) in buf.iter_mut().enumerate() {
        let u = state.r[[i, k]] * state.theta[[k, j]] * e[[q, k]];
        *b = u;
        total += u;
    }
    total
}

/// Probability that an event of channel `i`, patient `j` in bin `q` came
/// from each factor.
pub fn attribution_probs(state: &ModelState, effects: &EffectMatrix, q: usize, i: usize, j: usize) -> Result<Vec<f64>> {
    let mut p = vec![0.0; state.k()];
    let cell = SparseCell {
        q: q as u32,
        j: j as u32,
        i: i as u16,
        count: 1,
    };
    let total = cell_weights(state, &effects.e, &cell, &mut p);
    if !(total > 0.0) || !total.is_finite() {
        return Err(PpfError::Numerical(format!(
            "attribution weights for cell (q={q}, i={i}, j={j}) sum to {total}"
        )));
    }
    p.iter_mut().for_each(|v| *v /= total);
    Ok(p)
}

/// Expected attributions accumulated over the sparse cells.
#[derive(Debug, Clone)]
pub struct CellStats {
    /// I x K expected counts per channel and factor.
    pub by_channel: Array2<f64>,
    /// K x J expected counts per factor and patient.
    pub by_patient: Array2<f64>,
    /// K x p sums of expected counts times covariates.
    pub covariate_sums: Array2<f64>,
    /// `sum_cells n * log(sum_k r_ik theta_kj E_qk)`.
    pub log_terms: f64,
    /// Cells whose total weight was zero or non-finite.
    pub degenerate: usize,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct StatsRequest {
    pub by_channel: bool,
    pub by_patient: bool,
    pub covariate_sums: bool,
}

/// One deterministic pass over the sparse cells.
pub fn cell_stats(state: &ModelState, effects: &EffectMatrix, data: &Dataset, req: StatsRequest) -> CellStats {
    let k = state.k();
    let (n_i, n_j, p) = (data.n_channels(), data.n_patients(), data.n_covariates());
    let cells = &data.counts.cells;
    let x = data.covariates();
    let e = &effects.e;
    let empty = || CellStats {
        by_channel: Array2::zeros((if req.by_channel { n_i } else { 0 }, k)),
        by_patient: Array2::zeros((k, if req.by_patient { n_j } else { 0 })),
        covariate_sums: Array2::zeros((k, if req.covariate_sums { p } else { 0 })),
        log_terms: 0.0,
        degenerate: 0,
    };
    let parts = par::map_chunks(cells.len(), par::CHUNK, |range| {
        let mut acc = empty();
        let mut buf = vec![0.0; k];
        for cell in &cells[range] {
            let total = cell_weights(state, e, cell, &mut buf);
            let n = cell.count as f64;
            if !(total > 0.0) || !total.is_finite() {
                acc.degenerate += 1;
                acc.log_terms += n * total.ln();
                continue;
            }
            acc.log_terms += n * total.ln();
            let scale = n / total;
            for (kk, u) in buf.iter().enumerate() {
                let w = u * scale;
                if req.by_channel {
                    acc.by_channel[[cell.i as usize, kk]] += w;
                }
                if req.by_patient {
                    acc.by_patient[[kk, cell.j as usize]] += w;
                }
                if req.covariate_sums {
                    let xq = x.row(cell.q as usize);
                    let mut row = acc.covariate_sums.row_mut(kk);
                    row.scaled_add(w, &xq);
                }
            }
        }
        acc
    });
    parts.into_iter().fold(empty(), |mut a, b| {
        a.by_channel += &b.by_channel;
        a.by_patient += &b.by_patient;
        a.covariate_sums += &b.covariate_sums;
        a.log_terms += b.log_terms;
        a.degenerate += b.degenerate;
        a
    })
}

/// Log-posterior broken into its blocks. Constants, including
/// `log(c_jq / 2)` at event locations and factorials, are omitted, so only
/// differences between states are meaningful.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogPosterior {
    pub survival: f64,
    pub events: f64,
    pub signatures: f64,
    pub baselines: f64,
    pub coefficients: f64,
    pub relevance: f64,
    pub variances: f64,
}

impl LogPosterior {
    pub fn total(&self) -> f64 {
        self.survival + self.events + self.signatures + self.baselines + self.coefficients + self.relevance + self.variances
    }

    fn named(&self) -> [(&'static str, f64); 7] {
        [
            ("survival", self.survival),
            ("events", self.events),
            ("signatures", self.signatures),
            ("baselines", self.baselines),
            ("coefficients", self.coefficients),
            ("relevance", self.relevance),
            ("variances", self.variances),
        ]
    }
}

/// Prior blocks of the log posterior, given the current integrals.
pub(crate) fn prior_terms(state: &ModelState, data: &Dataset, hyper: &Hyperparams) -> (f64, f64, f64, f64, f64) {
    let (k, n_j, p) = (state.k(), data.n_patients(), data.n_covariates());
    let mut signatures = 0.0;
    for ((i, kk), &r) in state.r.indexed_iter() {
        let w = hyper.alpha[[i, kk]] - 1.0;
        if w != 0.0 {
            signatures += w * r.ln();
        }
    }
    let mut baselines = 0.0;
    let mut coefficients = 0.0;
    let mut relevance = 0.0;
    let mut variances = 0.0;
    let (a0, b0) = (hyper.a0(n_j), hyper.b0(n_j));
    for kk in 0..k {
        let mu = state.mu[kk];
        let s2 = state.sigma2[kk];
        let log_mu = mu.ln();
        for j in 0..n_j {
            let th = state.theta[[kk, j]];
            let shape_term = if hyper.a != 1.0 { (hyper.a - 1.0) * th.ln() } else { 0.0 };
            baselines += -hyper.a * log_mu + shape_term - th * hyper.a * data.copy_integral[j] / mu;
        }
        let bb: f64 = state.beta.row(kk).iter().map(|b| b * b).sum();
        coefficients += -(p as f64) / 2.0 * s2.ln() - bb / (2.0 * s2);
        relevance += -(a0 + 1.0) * log_mu - b0 / mu;
        variances += -(hyper.c0 + 1.0) * s2.ln() - hyper.d0 / s2;
    }
    (signatures, baselines, coefficients, relevance, variances)
}

pub fn log_posterior_terms(state: &ModelState, data: &Dataset, hyper: &Hyperparams) -> Result<LogPosterior> {
    state.check_dims(data)?;
    let eff = covariate_effects(&state.beta, data.covariates())?;
    let g = integrals(&eff, data).g;
    let stats = cell_stats(state, &eff, data, StatsRequest::default());
    Ok(assemble(state, data, hyper, &g, stats.log_terms))
}

pub(crate) fn assemble(state: &ModelState, data: &Dataset, hyper: &Hyperparams, g: &Array2<f64>, log_terms: f64) -> LogPosterior {
    let survival = -(&state.theta * g).sum();
    let (signatures, baselines, coefficients, relevance, variances) = prior_terms(state, data, hyper);
    LogPosterior {
        survival,
        events: log_terms,
        signatures,
        baselines,
        coefficients,
        relevance,
        variances,
    }
}

/// Log posterior up to a state-independent constant.
pub fn log_posterior(state: &ModelState, data: &Dataset, hyper: &Hyperparams) -> Result<f64> {
    let terms = log_posterior_terms(state, data, hyper)?;
    check_finite(&terms)
}

pub(crate) fn check_finite(terms: &LogPosterior) -> Result<f64> {
    if let Some((name, v)) = terms.named().into_iter().find(|(_, v)| !v.is_finite()) {
        return Err(PpfError::Numerical(format!("log posterior term {name} is {v}")));
    }
    Ok(terms.total())
}

/// One window of consecutive bins on a single chromosome.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Window {
    pub chrom: String,
    pub first_bin: usize,
    pub end_bin: usize,
}

#[derive(Debug, Clone)]
pub struct IntensityTrack {
    pub windows: Vec<Window>,
    /// W x J predicted totals (all channels).
    pub predicted: Array2<f64>,
    /// W x J observed totals.
    pub observed: Array2<f64>,
}

/// Windowed total intensity per patient. Channels sum out because every
/// signature column sums to one.
pub fn intensity_track(state: &ModelState, data: &Dataset, window_bins: usize) -> Result<IntensityTrack> {
    if window_bins == 0 {
        return Err(PpfError::Config("window must span at least one bin".into()));
    }
    state.check_dims(data)?;
    let eff = covariate_effects(&state.beta, data.covariates())?;
    // Per-bin activity sum_k theta_kj E_qk, Q x J.
    let activity = eff.e.dot(&state.theta);
    let mut windows = Vec::new();
    for (chrom, range) in data.genome.chromosomes() {
        let mut start = range.start;
        while start < range.end {
            let end = (start + window_bins).min(range.end);
            windows.push(Window {
                chrom: chrom.to_string(),
                first_bin: start,
                end_bin: end,
            });
            start = end;
        }
    }
    let n_j = data.n_patients();
    let mut predicted = Array2::zeros((windows.len(), n_j));
    let mut bin_window = vec![0usize; data.n_bins()];
    for (w, win) in windows.iter().enumerate() {
        for q in win.first_bin..win.end_bin {
            bin_window[q] = w;
            for j in 0..n_j {
                predicted[[w, j]] += data.exposure[[q, j]] * activity[[q, j]];
            }
        }
    }
    let mut observed = Array2::zeros((windows.len(), n_j));
    for c in &data.counts.cells {
        observed[[bin_window[c.q as usize], c.j as usize]] += c.count as f64;
    }
    Ok(IntensityTrack {
        windows,
        predicted,
        observed,
    })
}

/// Per-bin total intensity `Lambda_qj = sum_k theta_kj (w_q c_jq / 2) E_qk`.
pub fn bin_intensity(state: &ModelState, data: &Dataset) -> Result<Array2<f64>> {
    let eff = covariate_effects(&state.beta, data.covariates())?;
    Ok(&eff.e.dot(&state.theta) * &data.exposure)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::copies::CopyNumberProfile;
    use crate::counts::CountTensor;
    use crate::genome::BinnedGenome;
    use crate::testutil::toy;

    /// Independent evaluator: loops over every (q, j, i) cell of the dense
    /// tensor and every prior term straight from the densities.
    fn slow_log_posterior(s: &ModelState, d: &Dataset, h: &Hyperparams) -> f64 {
        let (n_i, n_j, n_q, k, p) = (d.n_channels(), d.n_patients(), d.n_bins(), s.k(), d.n_covariates());
        let mut dense = vec![0u32; n_q * n_j * n_i];
        for c in &d.counts.cells {
            dense[(c.q as usize * n_j + c.j as usize) * n_i + c.i as usize] = c.count;
        }
        let mut lp = 0.0;
        for q in 0..n_q {
            let w = d.genome.bins[q].weight;
            for j in 0..n_j {
                let half_c = d.copies.copies[[q, j]] / 2.0;
                for i in 0..n_i {
                    let mut lam = 0.0;
                    let mut rate = 0.0;
                    for kk in 0..k {
                        let mut lin = 0.0;
                        for l in 0..p {
                            lin += s.beta[[kk, l]] * d.genome.covariates[[q, l]];
                        }
                        let e = lin.exp();
                        lam += s.r[[i, kk]] * s.theta[[kk, j]] * e;
                        rate += s.r[[i, kk]] * s.theta[[kk, j]] * half_c * e * w;
                    }
                    lp -= rate;
                    let n = dense[(q * n_j + j) * n_i + i] as f64;
                    if n > 0.0 {
                        lp += n * lam.ln();
                    }
                }
            }
        }
        let (a0, b0) = (h.a * n_j as f64 + 1.0, h.epsilon * h.a * n_j as f64);
        for kk in 0..k {
            for i in 0..n_i {
                lp += (h.alpha[[i, kk]] - 1.0) * s.r[[i, kk]].ln();
            }
            for j in 0..n_j {
                let cint: f64 = (0..n_q).map(|q| d.genome.bins[q].weight * d.copies.copies[[q, j]] / 2.0).sum();
                let rate = h.a * cint / s.mu[kk];
                // Full Gamma(a, rate) log density minus the state-free part.
                lp += h.a * rate.ln() + (h.a - 1.0) * s.theta[[kk, j]].ln() - rate * s.theta[[kk, j]] - h.a * (h.a * cint).ln();
            }
            let bb: f64 = (0..p).map(|l| s.beta[[kk, l]].powi(2)).sum();
            lp += -(p as f64) / 2.0 * s.sigma2[kk].ln() - bb / (2.0 * s.sigma2[kk]);
            lp += -(a0 + 1.0) * s.mu[kk].ln() - b0 / s.mu[kk];
            lp += -(h.c0 + 1.0) * s.sigma2[kk].ln() - h.d0 / s.sigma2[kk];
        }
        lp
    }

    #[test]
    fn effects_zero_and_analytic() {
        let x = Array2::from_shape_fn((5, 2), |(q, l)| (q + l) as f64);
        let e = covariate_effects(&Array2::zeros((3, 2)), &x).unwrap();
        assert!(e.e.iter().all(|&v| v == 1.0));
        let x1 = Array2::from_elem((1, 1), 1.0);
        let b = Array2::from_elem((1, 1), 2f64.ln());
        let e = covariate_effects(&b, &x1).unwrap();
        assert!((e.e[[0, 0]] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn effects_match_scalar_loop_and_are_reproducible() {
        let (d, s) = toy(3, 4, 3, 3, 50, 4);
        let e1 = covariate_effects(&s.beta, d.covariates()).unwrap();
        let e2 = covariate_effects(&s.beta, d.covariates()).unwrap();
        for q in 0..50 {
            for kk in 0..3 {
                let mut lin = 0.0;
                for l in 0..4 {
                    lin += s.beta[[kk, l]] * d.covariates()[[q, l]];
                }
                let want = lin.exp();
                assert!((e1.e[[q, kk]] - want).abs() <= 1e-13 * want);
                assert_eq!(e1.e[[q, kk]].to_bits(), e2.e[[q, kk]].to_bits());
            }
        }
    }

    #[test]
    fn effects_clamp_and_flag_saturation() {
        let x = Array2::from_elem((1, 1), 1.0);
        let e = covariate_effects(&Array2::from_elem((1, 1), 800.0), &x).unwrap();
        assert!(e.saturated);
        assert_eq!(e.max_abs_linear, 800.0);
        assert!(e.e[[0, 0]].is_finite());
        assert!(covariate_effects(&Array2::from_elem((1, 1), f64::NAN), &x).is_err());
    }

    #[test]
    fn integrals_special_cases() {
        let genome = BinnedGenome::tiled("c", 1, 100, Array2::from_elem((1, 1), 1.0), vec!["x".into()]).unwrap();
        let copies = CopyNumberProfile { copies: Array2::from_elem((1, 1), 4.0), ignored_segments: 0 };
        let counts = CountTensor::from_events(vec![], vec!["P".into()], 96, 0);
        let d = Dataset::new(genome, copies, counts).unwrap();
        let eff = covariate_effects(&Array2::from_elem((1, 1), 2f64.ln()), d.covariates()).unwrap();
        let g = integrals(&eff, &d).g;
        assert!((g[[0, 0]] - 400.0).abs() < 1e-12);

        let (mut d, s) = toy(5, 3, 4, 2, 30, 2);
        d.copies.copies.fill(2.0);
        let d = Dataset::new(d.genome, d.copies, d.counts).unwrap();
        let eff = covariate_effects(&Array2::zeros(s.beta.dim()), d.covariates()).unwrap();
        let g = integrals(&eff, &d).g;
        let t = d.genome.total_length();
        assert!(g.iter().all(|&v| (v - t).abs() < 1e-12 * t));
    }

    #[test]
    fn integrals_match_naive_loop() {
        let (d, s) = toy(11, 3, 4, 3, 40, 3);
        let eff = covariate_effects(&s.beta, d.covariates()).unwrap();
        let g = integrals(&eff, &d).g;
        for kk in 0..3 {
            for j in 0..4 {
                let mut want = 0.0;
                for q in 0..40 {
                    want += d.genome.bins[q].weight * d.copies.copies[[q, j]] / 2.0 * eff.e[[q, kk]];
                }
                assert!((g[[kk, j]] - want).abs() <= 1e-12 * want);
            }
        }
    }

    #[test]
    fn expected_counts_uniform_single_factor() {
        let genome = BinnedGenome::tiled("c", 1, 1, Array2::zeros((1, 0)), vec![]).unwrap();
        let d = Dataset::new(
            genome,
            CopyNumberProfile::diploid(1, 2),
            CountTensor::from_events(vec![], vec!["A".into(), "B".into()], 96, 0),
        )
        .unwrap();
        let s = ModelState {
            r: Array2::from_elem((96, 1), 1.0 / 96.0),
            theta: Array2::from_elem((1, 2), 96.0),
            beta: Array2::zeros((1, 0)),
            mu: Array1::ones(1),
            sigma2: Array1::ones(1),
            fixed_signatures: false,
        };
        let lam = expected_counts(&s, &d).unwrap();
        assert!(lam.iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn expected_counts_reduce_to_nmf_product() {
        let (d, mut s) = toy(2, 6, 3, 2, 1, 0);
        let genome = BinnedGenome::tiled("c", 1, 1, Array2::zeros((1, 0)), vec![]).unwrap();
        let d = Dataset::new(genome, CopyNumberProfile::diploid(1, 3), d.counts).unwrap();
        s.beta = Array2::zeros((2, 0));
        let lam = expected_counts(&s, &d).unwrap();
        let prod = s.r.dot(&s.theta);
        for (a, b) in lam.iter().zip(prod.iter()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn log_posterior_differences_match_slow_evaluator() {
        let (d, s1) = toy(21, 3, 2, 2, 4, 2);
        let (_, s2) = toy(22, 3, 2, 2, 4, 2);
        let mut h = Hyperparams::new(3, 2);
        h.alpha = Array2::from_shape_fn((3, 2), |(i, k)| 1.2 + 0.3 * i as f64 + 0.1 * k as f64);
        let fast = log_posterior(&s1, &d, &h).unwrap() - log_posterior(&s2, &d, &h).unwrap();
        let slow = slow_log_posterior(&s1, &d, &h) - slow_log_posterior(&s2, &d, &h);
        assert!((fast - slow).abs() <= 1e-10 * slow.abs().max(1.0), "{fast} vs {slow}");
    }

    #[test]
    fn scaling_mu_only_touches_prior_blocks() {
        let (d, s) = toy(4, 3, 3, 2, 5, 2);
        let h = Hyperparams::new(3, 2);
        let mut s2 = s.clone();
        s2.mu.mapv_inplace(|m| m * 3.0);
        let a = log_posterior_terms(&s, &d, &h).unwrap();
        let b = log_posterior_terms(&s2, &d, &h).unwrap();
        assert_eq!(a.survival, b.survival);
        assert_eq!(a.events, b.events);
        assert_eq!(a.signatures, b.signatures);
        assert_eq!(a.coefficients, b.coefficients);
        assert_eq!(a.variances, b.variances);
        assert_ne!(a.baselines, b.baselines);
        assert_ne!(a.relevance, b.relevance);
    }

    #[test]
    fn attribution_symmetry_and_constancy() {
        let (d, mut s) = toy(8, 4, 2, 2, 6, 2);
        let col = s.r.column(0).to_owned();
        s.r.column_mut(1).assign(&col);
        let row = s.theta.row(0).to_owned();
        s.theta.row_mut(1).assign(&row);
        let b = s.beta.row(0).to_owned();
        s.beta.row_mut(1).assign(&b);
        let eff = covariate_effects(&s.beta, d.covariates()).unwrap();
        let p = attribution_probs(&s, &eff, 3, 1, 0).unwrap();
        assert_eq!(p, vec![0.5, 0.5]);

        let (d, mut s) = toy(9, 4, 2, 3, 6, 2);
        s.beta.fill(0.0);
        let eff = covariate_effects(&s.beta, d.covariates()).unwrap();
        let p0 = attribution_probs(&s, &eff, 0, 2, 1).unwrap();
        for q in 1..6 {
            assert_eq!(attribution_probs(&s, &eff, q, 2, 1).unwrap(), p0);
        }
    }

    #[test]
    fn attribution_matches_direct_normalisation() {
        let (d, s) = toy(10, 5, 3, 4, 8, 3);
        let eff = covariate_effects(&s.beta, d.covariates()).unwrap();
        for (q, i, j) in [(0, 0, 0), (7, 4, 2), (3, 2, 1)] {
            let p = attribution_probs(&s, &eff, q, i, j).unwrap();
            let raw: Vec<f64> = (0..4)
                .map(|k| {
                    let lin: f64 = (0..3).map(|l| s.beta[[k, l]] * d.covariates()[[q, l]]).sum();
                    s.r[[i, k]] * s.theta[[k, j]] * lin.exp()
                })
                .collect();
            let z: f64 = raw.iter().sum();
            for k in 0..4 {
                assert!((p[k] - raw[k] / z).abs() < 1e-14);
            }
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let mut zero = s.clone();
        zero.theta.fill(0.0);
        assert!(attribution_probs(&zero, &eff, 0, 0, 0).is_err());
    }

    #[test]
    fn intensity_track_marginalises_expected_counts() {
        let (d, s) = toy(12, 96, 3, 2, 20, 2);
        let lam = expected_counts(&s, &d).unwrap();
        let whole = intensity_track(&s, &d, 1000).unwrap();
        assert_eq!(whole.windows.len(), 1);
        for j in 0..3 {
            let col: f64 = lam.column(j).sum();
            assert!((whole.predicted[[0, j]] - col).abs() < 1e-10 * col);
            assert_eq!(whole.observed[[0, j]], d.counts.totals.column(j).sum());
        }
        // Windowed oracle: restrict the data to each window's bins.
        let track = intensity_track(&s, &d, 7).unwrap();
        assert_eq!(track.windows.len(), 3);
        let eff = covariate_effects(&s.beta, d.covariates()).unwrap();
        for (w, win) in track.windows.iter().enumerate() {
            for j in 0..3 {
                let mut want = 0.0;
                for q in win.first_bin..win.end_bin {
                    for i in 0..96 {
                        for k in 0..2 {
                            want += s.r[[i, k]] * s.theta[[k, j]] * d.exposure[[q, j]] * eff.e[[q, k]];
                        }
                    }
                }
                assert!((track.predicted[[w, j]] - want).abs() < 1e-10 * want);
            }
        }
    }

    #[test]
    fn flat_track_without_covariates() {
        let (d, mut s) = toy(13, 4, 2, 2, 10, 2);
        s.beta.fill(0.0);
        let mut copies = d.copies.clone();
        copies.copies.fill(2.0);
        let mut genome = d.genome.clone();
        for b in genome.bins.iter_mut() {
            b.weight = 10.0;
        }
        let d = Dataset::new(genome, copies, d.counts).unwrap();
        let t = intensity_track(&s, &d, 2).unwrap();
        for j in 0..2 {
            let want = 20.0 * s.theta.column(j).sum();
            for w in 0..t.windows.len() {
                assert!((t.predicted[[w, j]] - want).abs() < 1e-12 * want);
            }
        }
    }

    #[test]
    fn relabelling_leaves_expected_counts_unchanged() {
        let (d, s) = toy(14, 5, 3, 3, 12, 2);
        let perm = [2, 0, 1];
        let permuted = s.select(&perm);
        let a = expected_counts(&s, &d).unwrap();
        let b = expected_counts(&permuted, &d).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-12 * x.abs().max(1.0));
        }
    }
}
