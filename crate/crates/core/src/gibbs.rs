//! Gibbs sampler with multinomial data augmentation, conjugate updates and
//! elliptical slice sampling for the regression coefficients.

use std::f64::consts::PI;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Binomial, Distribution, Normal};
use serde::Serialize;

use crate::data::Dataset;
use crate::error::{PpfError, Result};
use crate::genome::quantile_sorted;
use crate::model::{self, covariate_effects, integrals, EffectMatrix, Hyperparams, ModelState};
use crate::{par, rng};

const STEP_ATTR: u64 = 1;
const STEP_SIG: u64 = 2;
const STEP_BASE: u64 = 3;
const STEP_BETA: u64 = 4;
const STEP_HYPER: u64 = 5;

#[derive(Debug, Clone, Serialize)]
pub struct ChainOptions {
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub fixed_signatures: bool,
    pub ess_max_shrink_iters: usize,
    /// Stable identities of the factors, used to key random streams so that
    /// relabelling the initial state relabels the chain. Defaults to 0..K.
    pub factor_ids: Option<Vec<u64>>,
}

impl Default for ChainOptions {
    fn default() -> Self {
        ChainOptions {
            n_iter: 2000,
            burn_in: 1000,
            thin: 1,
            seed: 0,
            fixed_signatures: false,
            ess_max_shrink_iters: 1000,
            factor_ids: None,
        }
    }
}

impl ChainOptions {
    pub fn validate(&self, k: usize) -> Result<()> {
        if self.burn_in >= self.n_iter {
            return Err(PpfError::Config(format!(
                "burn-in ({}) must be smaller than the number of iterations ({})",
                self.burn_in, self.n_iter
            )));
        }
        if self.thin == 0 || self.ess_max_shrink_iters == 0 {
            return Err(PpfError::Config("thin and ess_max_shrink_iters must be positive".into()));
        }
        if let Some(ids) = &self.factor_ids {
            let mut sorted = ids.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if ids.len() != k || sorted.len() != k {
                return Err(PpfError::Config("factor_ids must hold K distinct values".into()));
            }
        }
        Ok(())
    }

    pub fn n_stored(&self) -> usize {
        (self.n_iter - self.burn_in) / self.thin
    }
}

/// Latent split of the observed events over factors.
#[derive(Debug, Clone)]
pub struct AttributionCounts {
    /// I x K events of channel i assigned to factor k.
    pub m: Array2<f64>,
    /// K x J events of patient j assigned to factor k.
    pub s: Array2<f64>,
    /// K x p covariate-weighted assigned events.
    pub z: Array2<f64>,
    /// Cell-major split counts, `splits[c * K + k]` for sparse cell `c`.
    pub splits: Vec<u32>,
}

fn factor_order(ids: &[u64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by_key(|&k| ids[k]);
    order
}

fn default_ids(k: usize) -> Vec<u64> {
    (0..k as u64).collect()
}

/// Draw the latent attribution of every observed event. Cells are split by
/// sequential binomials in the order given by `ids`, with one random stream
/// per fixed-size chunk of cells.
pub fn sample_attributions_keyed(state: &ModelState, eff: &EffectMatrix, data: &Dataset, key: u64, ids: &[u64]) -> Result<AttributionCounts> {
    let k = state.k();
    let (n_i, n_j, p) = (data.n_channels(), data.n_patients(), data.n_covariates());
    let cells = &data.counts.cells;
    let x = data.covariates();
    let order = factor_order(ids);
    let parts = par::map_chunks(cells.len(), par::CHUNK, |range| -> Result<_> {
        let mut g = rng::stream(key, &[(range.start / par::CHUNK) as u64]);
        let mut m = Array2::<f64>::zeros((n_i, k));
        let mut s = Array2::<f64>::zeros((k, n_j));
        let mut z = Array2::<f64>::zeros((k, p));
        let mut splits = vec![0u32; range.len() * k];
        let mut buf = vec![0.0; k];
        for (c, cell) in cells[range].iter().enumerate() {
            let total = model::cell_weights(state, &eff.e, cell, &mut buf);
            if !(total > 0.0) || !total.is_finite() {
                return Err(PpfError::Numerical(format!(
                    "cell (q={}, j={}, i={}) has intensity {total}",
                    cell.q, cell.j, cell.i
                )));
            }
            let mut left = cell.count as u64;
            let mut mass = total;
            for (pos, &kk) in order.iter().enumerate() {
                if left == 0 {
                    break;
                }
                let draw = if pos + 1 == k {
                    left
                } else {
                    let prob = (buf[kk] / mass).clamp(0.0, 1.0);
                    mass -= buf[kk];
                    Binomial::new(left, prob).expect("valid binomial").sample(&mut g)
                };
                left -= draw;
                splits[c * k + kk] = draw as u32;
            }
            let xq = x.row(cell.q as usize);
            for kk in 0..k {
                let n = splits[c * k + kk] as f64;
                if n > 0.0 {
                    m[[cell.i as usize, kk]] += n;
                    s[[kk, cell.j as usize]] += n;
                    z.row_mut(kk).scaled_add(n, &xq);
                }
            }
        }
        Ok((m, s, z, splits))
    });
    let mut out = AttributionCounts {
        m: Array2::zeros((n_i, k)),
        s: Array2::zeros((k, n_j)),
        z: Array2::zeros((k, p)),
        splits: Vec::with_capacity(cells.len() * k),
    };
    for part in parts {
        let (m, s, z, splits) = part?;
        out.m += &m;
        out.s += &s;
        out.z += &z;
        out.splits.extend(splits);
    }
    Ok(out)
}

/// Draw the latent attribution of every observed event.
pub fn sample_attributions<R: Rng + ?Sized>(state: &ModelState, data: &Dataset, rng: &mut R) -> Result<AttributionCounts> {
    state.check_dims(data)?;
    let eff = covariate_effects(&state.beta, data.covariates())?;
    sample_attributions_keyed(state, &eff, data, rng.random(), &default_ids(state.k()))
}

/// Signature column draw `r_k ~ Dirichlet(alpha_k + M_k)`.
pub fn sample_signature_column<R: Rng + ?Sized>(m_k: ndarray::ArrayView1<f64>, alpha_k: ndarray::ArrayView1<f64>, rng: &mut R) -> Array1<f64> {
    let shape: Vec<f64> = alpha_k.iter().zip(m_k.iter()).map(|(a, m)| a + m).collect();
    Array1::from(rng::dirichlet(rng, &shape))
}

pub fn sample_signatures<R: Rng + ?Sized>(m: &Array2<f64>, alpha: &Array2<f64>, rng: &mut R) -> Array2<f64> {
    let mut r = Array2::zeros(m.dim());
    for k in 0..m.ncols() {
        r.column_mut(k).assign(&sample_signature_column(m.column(k), alpha.column(k), rng));
    }
    r
}

/// Baseline row draw `theta_kj ~ Ga(a + S_kj, (a / mu_k) C_j + G_kj)`.
fn sample_baseline_row<R: Rng + ?Sized>(k: usize, s: &Array2<f64>, g: &Array2<f64>, state: &ModelState, data: &Dataset, hyper: &Hyperparams, rng: &mut R) -> Array1<f64> {
    Array1::from_iter((0..s.ncols()).map(|j| {
        let rate = hyper.a / state.mu[k] * data.copy_integral[j] + g[[k, j]];
        rng::gamma(rng, hyper.a + s[[k, j]], rate)
    }))
}

pub fn sample_baselines<R: Rng + ?Sized>(s: &Array2<f64>, state: &ModelState, data: &Dataset, hyper: &Hyperparams, rng: &mut R) -> Result<Array2<f64>> {
    let eff = covariate_effects(&state.beta, data.covariates())?;
    let g = integrals(&eff, data).g;
    let mut theta = Array2::zeros(state.theta.dim());
    for k in 0..state.k() {
        theta.row_mut(k).assign(&sample_baseline_row(k, s, &g, state, data, hyper, rng));
    }
    Ok(theta)
}

/// Coefficient log-likelihood of one factor given its latent events:
/// `-sum_q D_q exp(beta . x_q) + beta . z`.
pub fn beta_log_likelihood(beta: &Array1<f64>, x: &Array2<f64>, d_k: ndarray::ArrayView1<f64>, z_k: ndarray::ArrayView1<f64>) -> f64 {
    let mass = par::reduce_chunks(
        x.nrows(),
        par::CHUNK,
        0.0,
        |range| {
            range
                .filter(|&q| d_k[q] != 0.0)
                .map(|q| d_k[q] * x.row(q).dot(beta).clamp(-model::EXP_CLAMP, model::EXP_CLAMP).exp())
                .sum::<f64>()
        },
        |a, b| a + b,
    );
    -mass + beta.dot(&z_k)
}

#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct SliceStats {
    pub transitions: usize,
    pub total_shrinks: usize,
    pub max_shrinks: usize,
}

impl SliceStats {
    fn record(&mut self, shrinks: usize) {
        self.transitions += 1;
        self.total_shrinks += shrinks;
        self.max_shrinks = self.max_shrinks.max(shrinks);
    }

    fn merge(&mut self, o: &SliceStats) {
        self.transitions += o.transitions;
        self.total_shrinks += o.total_shrinks;
        self.max_shrinks = self.max_shrinks.max(o.max_shrinks);
    }

    pub fn mean_shrinks(&self) -> f64 {
        if self.transitions == 0 { 0.0 } else { self.total_shrinks as f64 / self.transitions as f64 }
    }
}

/// One elliptical slice transition under the prior `N(0, sigma2 I)` and an
/// arbitrary log-likelihood. Returns the new point and the shrink count.
pub fn elliptical_slice<R, L>(beta: &Array1<f64>, sigma2: f64, loglik: L, max_shrinks: usize, rng: &mut R) -> Result<(Array1<f64>, usize)>
where
    R: Rng + ?Sized,
    L: Fn(&Array1<f64>) -> f64,
{
    let normal = Normal::new(0.0, sigma2.sqrt()).map_err(|e| PpfError::Numerical(format!("prior variance {sigma2}: {e}")))?;
    let nu = Array1::from_shape_fn(beta.len(), |_| normal.sample(rng));
    let current = loglik(beta);
    if !current.is_finite() {
        return Err(PpfError::Numerical(format!("coefficient log-likelihood is {current}")));
    }
    let threshold = current + rng.random::<f64>().ln();
    let mut phi = rng.random::<f64>() * 2.0 * PI;
    let (mut lo, mut hi) = (phi - 2.0 * PI, phi);
    for shrinks in 0..=max_shrinks {
        let prop = beta * phi.cos() + &nu * phi.sin();
        if loglik(&prop) > threshold {
            return Ok((prop, shrinks));
        }
        if phi < 0.0 {
            lo = phi;
        } else {
            hi = phi;
        }
        phi = lo + rng.random::<f64>() * (hi - lo);
    }
    Err(PpfError::Numerical(format!(
        "elliptical slice sampler exceeded {max_shrinks} shrinks"
    )))
}

/// Elliptical slice update of `beta_k` given latent covariate sums `z`.
pub fn sample_beta_ess<R: Rng + ?Sized>(state: &ModelState, data: &Dataset, z: &Array2<f64>, k: usize, max_shrinks: usize, rng: &mut R) -> Result<(Array1<f64>, usize)> {
    let d = data.exposure.dot(&state.theta.row(k));
    beta_step(state, data.covariates(), &d, z, k, max_shrinks, rng)
}

fn beta_step<R: Rng + ?Sized>(state: &ModelState, x: &Array2<f64>, d_k: &Array1<f64>, z: &Array2<f64>, k: usize, max_shrinks: usize, rng: &mut R) -> Result<(Array1<f64>, usize)> {
    let beta = state.beta.row(k).to_owned();
    elliptical_slice(&beta, state.sigma2[k], |b| beta_log_likelihood(b, x, d_k.view(), z.row(k)), max_shrinks, rng)
}

/// Relevance weight and prior variance draws for one factor.
fn sample_hyper_k<R: Rng + ?Sized>(k: usize, state: &ModelState, data: &Dataset, hyper: &Hyperparams, rng: &mut R) -> (f64, f64) {
    let n_j = data.n_patients();
    let (aj, a0, b0) = (hyper.a * n_j as f64, hyper.a0(n_j), hyper.b0(n_j));
    let weighted = state.theta.row(k).dot(&data.copy_integral);
    let mu = rng::inv_gamma(rng, a0 + aj, b0 + hyper.a * weighted);
    let bb = state.beta.row(k).dot(&state.beta.row(k));
    let p = data.n_covariates() as f64;
    let s2 = rng::inv_gamma(rng, hyper.c0 + p / 2.0, hyper.d0 + bb / 2.0);
    (mu, s2)
}

pub fn sample_hyper<R: Rng + ?Sized>(state: &ModelState, data: &Dataset, hyper: &Hyperparams, rng: &mut R) -> (Array1<f64>, Array1<f64>) {
    let k = state.k();
    let mut mu = Array1::zeros(k);
    let mut s2 = Array1::zeros(k);
    for kk in 0..k {
        let (m, v) = sample_hyper_k(kk, state, data, hyper, rng);
        mu[kk] = m;
        s2[kk] = v;
    }
    (mu, s2)
}

/// One full Gibbs sweep at iteration `iter`, with every random draw keyed
/// by (seed, iteration, step, factor id or cell chunk).
pub fn gibbs_sweep(state: &mut ModelState, data: &Dataset, hyper: &Hyperparams, opts: &ChainOptions, iter: u64, slice: &mut SliceStats) -> Result<()> {
    let k = state.k();
    let ids = opts.factor_ids.clone().unwrap_or_else(|| default_ids(k));
    let key = |step: u64| rng::derive(opts.seed, &[iter, step]);

    let eff = covariate_effects(&state.beta, data.covariates())?;
    let att = sample_attributions_keyed(state, &eff, data, key(STEP_ATTR), &ids)?;

    if !(opts.fixed_signatures || state.fixed_signatures) {
        let cols = par::map_indices(k, |kk| {
            let mut g = rng::stream(key(STEP_SIG), &[ids[kk]]);
            sample_signature_column(att.m.column(kk), hyper.alpha.column(kk), &mut g)
        });
        for (kk, c) in cols.into_iter().enumerate() {
            state.r.column_mut(kk).assign(&c);
        }
    }

    let g = integrals(&eff, data).g;
    let cur: &ModelState = state;
    let rows = par::map_indices(k, |kk| {
        let mut r = rng::stream(key(STEP_BASE), &[ids[kk]]);
        sample_baseline_row(kk, &att.s, &g, cur, data, hyper, &mut r)
    });
    for (kk, row) in rows.into_iter().enumerate() {
        state.theta.row_mut(kk).assign(&row);
    }

    if data.n_covariates() > 0 {
        let d = data.exposure.dot(&state.theta.t());
        let cur: &ModelState = state;
        let betas = par::map_indices(k, |kk| {
            let mut r = rng::stream(key(STEP_BETA), &[ids[kk]]);
            beta_step(cur, data.covariates(), &d.column(kk).to_owned(), &att.z, kk, opts.ess_max_shrink_iters, &mut r)
        });
        for (kk, b) in betas.into_iter().enumerate() {
            let (b, shrinks) = b?;
            slice.record(shrinks);
            state.beta.row_mut(kk).assign(&b);
        }
    }

    let cur: &ModelState = state;
    let hyp = par::map_indices(k, |kk| {
        let mut r = rng::stream(key(STEP_HYPER), &[ids[kk]]);
        sample_hyper_k(kk, cur, data, hyper, &mut r)
    });
    for (kk, (m, v)) in hyp.into_iter().enumerate() {
        state.mu[kk] = m;
        state.sigma2[kk] = v;
    }
    Ok(())
}

/// Posterior mean and equal-tailed 95% interval of one scalar.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub q025: f64,
    pub q975: f64,
}

impl ParamSummary {
    pub fn from_draws(name: String, draws: &[f64]) -> Self {
        let mut sorted = draws.to_vec();
        sorted.sort_by(|a, b| a.total_cmp(b));
        ParamSummary {
            name,
            mean: draws.iter().sum::<f64>() / draws.len() as f64,
            q025: quantile_sorted(&sorted, 0.025),
            q975: quantile_sorted(&sorted, 0.975),
        }
    }

    pub fn contains_zero(&self) -> bool {
        self.q025 <= 0.0 && 0.0 <= self.q975
    }
}

/// Stored draws of one parameter block, one flattened (row-major) draw per
/// entry.
#[derive(Debug, Clone, Default)]
pub struct DrawBlock {
    pub name: &'static str,
    pub shape: (usize, usize),
    pub draws: Vec<Vec<f64>>,
}

impl DrawBlock {
    fn new(name: &'static str, shape: (usize, usize)) -> Self {
        DrawBlock { name, shape, draws: Vec::new() }
    }

    /// Draws of the scalar at flat index `idx`.
    pub fn series(&self, idx: usize) -> Vec<f64> {
        self.draws.iter().map(|d| d[idx]).collect()
    }

    pub fn element_name(&self, idx: usize) -> String {
        let (_, cols) = self.shape;
        format!("{}[{},{}]", self.name, idx / cols, idx % cols)
    }

    pub fn mean(&self) -> Array2<f64> {
        let n = self.draws.len() as f64;
        let mut m = Array2::zeros(self.shape);
        for d in &self.draws {
            for (a, v) in m.iter_mut().zip(d) {
                *a += v / n;
            }
        }
        m
    }

    pub fn summaries(&self) -> Vec<ParamSummary> {
        (0..self.shape.0 * self.shape.1)
            .map(|i| ParamSummary::from_draws(self.element_name(i), &self.series(i)))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct ChainOutput {
    pub r: DrawBlock,
    pub theta: DrawBlock,
    pub beta: DrawBlock,
    pub mu: DrawBlock,
    pub sigma2: DrawBlock,
    /// Log posterior after every iteration, burn-in included.
    pub logpost: Vec<f64>,
    pub slice: SliceStats,
    pub last: ModelState,
}

impl ChainOutput {
    pub fn blocks(&self) -> [&DrawBlock; 5] {
        [&self.r, &self.theta, &self.beta, &self.mu, &self.sigma2]
    }

    pub fn summary(&self) -> Vec<ParamSummary> {
        self.blocks().iter().flat_map(|b| b.summaries()).collect()
    }

    /// Posterior-mean state. Fixed signatures are returned as given.
    pub fn posterior_mean(&self) -> ModelState {
        ModelState {
            r: if self.last.fixed_signatures { self.last.r.clone() } else { self.r.mean() },
            theta: self.theta.mean(),
            beta: self.beta.mean(),
            mu: self.mu.mean().into_shape_with_order(self.mu.shape.1).expect("vector block"),
            sigma2: self.sigma2.mean().into_shape_with_order(self.sigma2.shape.1).expect("vector block"),
            fixed_signatures: self.last.fixed_signatures,
        }
    }
}

pub fn run_chain(data: &Dataset, hyper: &Hyperparams, init: &ModelState, opts: &ChainOptions) -> Result<ChainOutput> {
    hyper.validate()?;
    init.check_dims(data)?;
    let k = init.k();
    opts.validate(k)?;
    let mut state = init.clone();
    state.fixed_signatures |= opts.fixed_signatures;
    let flat = |m: &Array2<f64>| m.iter().cloned().collect::<Vec<f64>>();
    let mut out = ChainOutput {
        r: DrawBlock::new("R", state.r.dim()),
        theta: DrawBlock::new("Theta", state.theta.dim()),
        beta: DrawBlock::new("B", state.beta.dim()),
        mu: DrawBlock::new("mu", (1, k)),
        sigma2: DrawBlock::new("sigma2", (1, k)),
        logpost: Vec::with_capacity(opts.n_iter),
        slice: SliceStats::default(),
        last: state.clone(),
    };
    for it in 1..=opts.n_iter {
        gibbs_sweep(&mut state, data, hyper, opts, it as u64, &mut out.slice)
            .map_err(|e| PpfError::Numerical(format!("iteration {it}: {e}")))?;
        let lp = model::log_posterior(&state, data, hyper).map_err(|e| PpfError::Numerical(format!("iteration {it}: {e}")))?;
        out.logpost.push(lp);
        if it > opts.burn_in && (it - opts.burn_in) % opts.thin == 0 {
            out.r.draws.push(flat(&state.r));
            out.theta.draws.push(flat(&state.theta));
            out.beta.draws.push(flat(&state.beta));
            out.mu.draws.push(state.mu.to_vec());
            out.sigma2.draws.push(state.sigma2.to_vec());
        }
    }
    out.last = state;
    Ok(out)
}

/// Merge slice statistics across chains.
pub fn merge_slice_stats(stats: &[SliceStats]) -> SliceStats {
    let mut total = SliceStats::default();
    for s in stats {
        total.merge(s);
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map::aggregate_dataset;
    use crate::testutil::toy;
    use ndarray::Axis;

    fn mc_close(mean: f64, want: f64, sd: f64, n: usize) {
        let se = sd / (n as f64).sqrt();
        assert!((mean - want).abs() < 3.0 * se + 1e-12, "mean {mean} vs {want} (se {se})");
    }

    #[test]
    fn single_factor_takes_everything() {
        let (d, s) = toy(1, 4, 3, 1, 10, 2);
        let mut g = rng::stream(0, &[]);
        let att = sample_attributions(&s, &d, &mut g).unwrap();
        assert_eq!(att.m.column(0).to_owned(), d.counts.totals.sum_axis(Axis(1)));
        assert_eq!(att.s.row(0).to_owned(), d.patient_totals());
    }

    #[test]
    fn attribution_marginals_reconcile() {
        let (d, s) = toy(2, 5, 3, 3, 20, 2);
        let mut g = rng::stream(1, &[]);
        let att = sample_attributions(&s, &d, &mut g).unwrap();
        assert_eq!(att.m.sum_axis(Axis(1)), d.counts.totals.sum_axis(Axis(1)));
        assert_eq!(att.s.sum_axis(Axis(0)), d.patient_totals());
        for (c, cell) in d.counts.cells.iter().enumerate() {
            let sum: u32 = att.splits[c * 3..c * 3 + 3].iter().sum();
            assert_eq!(sum, cell.count);
        }
    }

    #[test]
    fn symmetric_split_is_binomial_half() {
        let totals = Array2::from_elem((1, 1), 10.0);
        let d = aggregate_dataset(&totals).unwrap();
        let s = ModelState {
            r: Array2::from_elem((1, 2), 1.0),
            theta: Array2::from_elem((2, 1), 1.0),
            beta: Array2::zeros((2, 0)),
            mu: Array1::ones(2),
            sigma2: Array1::ones(2),
            fixed_signatures: false,
        };
        let mut g = rng::stream(2, &[]);
        let n = 10_000;
        let draws: Vec<f64> = (0..n).map(|_| sample_attributions(&s, &d, &mut g).unwrap().m[[0, 0]]).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        mc_close(mean, 5.0, (10.0f64 * 0.25).sqrt(), n);
    }

    #[test]
    fn expected_attribution_matches_probabilities() {
        let (d, s) = toy(3, 3, 2, 2, 5, 2);
        let eff = covariate_effects(&s.beta, d.covariates()).unwrap();
        let mut want = Array2::<f64>::zeros((3, 2));
        let mut var = Array2::<f64>::zeros((3, 2));
        for c in &d.counts.cells {
            let p = model::attribution_probs(&s, &eff, c.q as usize, c.i as usize, c.j as usize).unwrap();
            for k in 0..2 {
                want[[c.i as usize, k]] += c.count as f64 * p[k];
                var[[c.i as usize, k]] += c.count as f64 * p[k] * (1.0 - p[k]);
            }
        }
        let n = 4000;
        let mut acc = Array2::<f64>::zeros((3, 2));
        let mut g = rng::stream(3, &[]);
        for _ in 0..n {
            acc += &sample_attributions(&s, &d, &mut g).unwrap().m;
        }
        for i in 0..3 {
            mc_close(acc[[i, 0]] / n as f64, want[[i, 0]], var[[i, 0]].sqrt(), n);
        }
    }

    #[test]
    fn signature_draws() {
        let mut g = rng::stream(4, &[]);
        let alpha = Array2::from_elem((4, 1), 1.01);
        let n = 20_000;
        let mut mean = Array1::<f64>::zeros(4);
        for _ in 0..n {
            let r = sample_signatures(&Array2::zeros((4, 1)), &alpha, &mut g);
            assert!((r.sum() - 1.0).abs() < 1e-12);
            mean += &r.column(0);
        }
        // Dirichlet(1.01 x 4) marginal variance 0.25 * 0.75 / (4.04 + 1).
        let sd = (0.25f64 * 0.75 / 5.04).sqrt();
        for v in mean.iter() {
            mc_close(v / n as f64, 0.25, sd, n);
        }
        let mut m = Array2::zeros((4, 1));
        m[[2, 0]] = 1e6;
        let r = sample_signatures(&m, &alpha, &mut g);
        assert!((r[[2, 0]] - 1.0).abs() < 1e-2);
    }

    #[test]
    fn baseline_moments() {
        let (d, mut s) = toy(5, 3, 2, 1, 10, 2);
        s.beta.fill(0.0);
        let h = Hyperparams::new(3, 1);
        let zero = Array2::zeros((1, 2));
        let eff = covariate_effects(&s.beta, d.covariates()).unwrap();
        let g = integrals(&eff, &d).g;
        let rate = h.a / s.mu[0] * d.copy_integral[1] + g[[0, 1]];
        let (mean, sd) = (h.a / rate, h.a.sqrt() / rate);
        let mut r = rng::stream(5, &[]);
        let n = 100_000;
        let draws: Vec<f64> = (0..n).map(|_| sample_baselines(&zero, &s, &d, &h, &mut r).unwrap()[[0, 1]]).collect();
        let m = draws.iter().sum::<f64>() / n as f64;
        mc_close(m, mean, sd, n);
        let v = draws.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
        // sd of the sample variance for a Gamma: sqrt((mu4 - sigma^4) / n).
        let kurt_excess = 6.0 / h.a;
        let var_sd = (sd.powi(4) * (2.0 + kurt_excess)).sqrt();
        mc_close(v, sd * sd, var_sd, n);
    }

    #[test]
    fn prior_only_slice_sampler_targets_the_prior() {
        let x = Array2::from_shape_fn((5, 2), |(q, l)| (q as f64 - 2.0) * (l as f64 + 0.5));
        let d = Array1::zeros(5);
        let z = Array2::zeros((1, 2));
        let mut beta = Array1::zeros(2);
        let mut g = rng::stream(6, &[]);
        let n = 10_000;
        let mut draws = Vec::with_capacity(n);
        for _ in 0..n {
            let (b, _) = elliptical_slice(&beta, 2.0, |b| beta_log_likelihood(b, &x, d.view(), z.row(0)), 1000, &mut g).unwrap();
            beta = b;
            draws.push(beta[0]);
        }
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        // Prior-only ESS draws are independent.
        mc_close(mean, 0.0, 2f64.sqrt(), n);
        assert!((var - 2.0).abs() < 3.0 * 2.0 * (2.0 / n as f64).sqrt());
    }

    #[test]
    fn slice_sampler_bounds_shrinks() {
        let mut g = rng::stream(7, &[]);
        let r = elliptical_slice(&Array1::zeros(1), 1.0, |_| f64::NAN, 10, &mut g);
        assert!(r.is_err());
        let r = elliptical_slice(&Array1::zeros(1), 1.0, |b| if b[0] == 0.0 { 0.0 } else { f64::NEG_INFINITY }, 10, &mut g);
        assert!(r.is_err());
    }

    #[test]
    fn hyper_moments() {
        let (d, mut s) = toy(8, 3, 4, 1, 6, 3);
        s.theta.fill(0.0);
        s.beta.fill(0.0);
        let h = Hyperparams::new(3, 1);
        let mut g = rng::stream(8, &[]);
        let n = 100_000;
        let mut mus = Vec::with_capacity(n);
        let mut s2s = Vec::with_capacity(n);
        for _ in 0..n {
            let (m, v) = sample_hyper(&s, &d, &h, &mut g);
            mus.push(m[0]);
            s2s.push(v[0]);
        }
        let aj: f64 = 1.01 * 4.0;
        let (shape, scale) = (2.0 * aj + 1.0, 0.001 * aj);
        let mean = scale / (shape - 1.0);
        assert!((mean - 0.0005).abs() < 1e-15);
        let sd = mean / (shape - 2.0).sqrt();
        mc_close(mus.iter().sum::<f64>() / n as f64, mean, sd, n);
        let (shape, scale): (f64, f64) = (100.0 + 1.5, 1.0);
        let mean = scale / (shape - 1.0);
        let sd = mean / (shape - 2.0).sqrt();
        mc_close(s2s.iter().sum::<f64>() / n as f64, mean, sd, n);
    }

    #[test]
    fn default_variance_prior_mean() {
        let (shape, scale): (f64, f64) = (100.0 + 10.0 / 2.0, 1.0);
        assert!((scale / (shape - 1.0) - 1.0 / 104.0).abs() < 1e-15);
    }

    fn short_opts(seed: u64) -> ChainOptions {
        ChainOptions {
            n_iter: 30,
            burn_in: 10,
            thin: 3,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn chain_is_reproducible_and_sized() {
        let (d, s) = toy(9, 4, 3, 2, 15, 2);
        let h = Hyperparams::new(4, 2);
        let a = run_chain(&d, &h, &s, &short_opts(1)).unwrap();
        let b = run_chain(&d, &h, &s, &short_opts(1)).unwrap();
        assert_eq!(a.r.draws.len(), 6);
        assert_eq!(a.logpost, b.logpost);
        assert_eq!(a.beta.draws, b.beta.draws);
        let summ = a.summary();
        assert_eq!(summ.len(), 8 + 6 + 4 + 2 + 2);
        assert!(summ.iter().all(|p| p.q025 <= p.mean && p.mean <= p.q975));
    }

    #[test]
    fn fixed_signatures_never_move() {
        let (d, s) = toy(10, 4, 3, 2, 15, 2);
        let h = Hyperparams::new(4, 2);
        let out = run_chain(&d, &h, &s, &ChainOptions { fixed_signatures: true, ..short_opts(2) }).unwrap();
        let flat: Vec<f64> = s.r.iter().cloned().collect();
        assert!(out.r.draws.iter().all(|dr| *dr == flat));
    }

    #[test]
    fn relabelled_start_gives_relabelled_chain() {
        let (d, s) = toy(11, 4, 3, 2, 15, 2);
        let h = Hyperparams::new(4, 2);
        let a = run_chain(&d, &h, &s, &short_opts(3)).unwrap();
        let swapped = s.select(&[1, 0]);
        let opts = ChainOptions { factor_ids: Some(vec![1, 0]), ..short_opts(3) };
        let b = run_chain(&d, &h, &swapped, &opts).unwrap();
        assert_eq!(a.last.select(&[1, 0]), b.last);
        for (x, y) in a.logpost.iter().zip(&b.logpost) {
            assert!((x - y).abs() <= 1e-9 * x.abs());
        }
    }

    #[test]
    fn burn_in_must_precede_end() {
        let (d, s) = toy(12, 4, 3, 2, 15, 2);
        let h = Hyperparams::new(4, 2);
        let opts = ChainOptions { n_iter: 10, burn_in: 10, ..Default::default() };
        assert!(matches!(run_chain(&d, &h, &s, &opts), Err(PpfError::Config(_))));
    }
}
