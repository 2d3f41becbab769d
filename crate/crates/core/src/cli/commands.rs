use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use ndarray::Array2;
use ppf::channels::{format_channel, parse_channel, N_CHANNELS};
use ppf::data::Dataset;
use ppf::diagnostics::ess;
use ppf::gibbs::{run_chain, ChainOptions, ChainOutput, ParamSummary};
use ppf::io::{read_matrix, write_matrix};
use ppf::map::{self, MapOptions, UpdateForm};
use ppf::model::{self, covariate_effects, intensity_track, ModelState};
use ppf::postprocess::{self, align_columns, align_rows, match_signatures, prune, PruneEntry, PruneRule};
use ppf::simulate::{self, CovarianceMode, SimConfig};
use ppf::PpfError;
use serde::Serialize;
use serde_json::json;

use super::args::*;
use super::fitdir::{factor_labels, hyperparams, load_data, read_state, state_inputs, write_state, Loaded, StoredFit};
use super::manifest::{self, RunContext};

fn prepare_out(out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating output directory {}", out.display()))
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn rule(p: &PruneArgs) -> PruneRule {
    PruneRule {
        mu_factor: p.mu_factor,
        cos_threshold: p.cos_threshold,
    }
}

/// Apply the pruning rule unless disabled; returns the surviving state,
/// its labels and the per-factor report.
fn pruned(state: &ModelState, labels: &[String], epsilon: f64, p: &PruneArgs) -> Result<(ModelState, Vec<String>, Vec<PruneEntry>)> {
    let fit = prune(&state.r, &state.mu, epsilon, rule(p))?;
    if p.no_prune {
        return Ok((state.clone(), labels.to_vec(), fit.report));
    }
    if fit.k_hat == 0 {
        eprintln!("note: every factor met the pruning rule; nothing is left to report");
    }
    let names = fit.kept.iter().map(|&k| labels[k].clone()).collect();
    Ok((state.select(&fit.kept), names, fit.report))
}

fn write_prune_report(path: &Path, labels: &[String], report: &[PruneEntry]) -> Result<()> {
    let mut f = create(path)?;
    writeln!(f, "factor,mu,cos_uniform,discarded,suspicious")?;
    for e in report {
        writeln!(f, "{},{},{},{},{}", labels[e.k], e.mu, e.cos_uniform, e.discarded, e.suspicious)?;
    }
    f.flush()?;
    Ok(())
}

fn write_traces(path: &Path, traces: &[Vec<f64>]) -> Result<()> {
    let mut f = create(path)?;
    writeln!(f, "start,iteration,logpost")?;
    for (s, t) in traces.iter().enumerate() {
        for (it, lp) in t.iter().enumerate() {
            writeln!(f, "{s},{it},{lp}")?;
        }
    }
    f.flush()?;
    Ok(())
}

pub fn simulate(a: &SimulateArgs, ctx: &RunContext) -> Result<()> {
    let b = a.scenario == Scenario::B;
    let mut cfg = match a.scale {
        Scale::Full => SimConfig::full(b, a.seed),
        Scale::Scaled => SimConfig::scaled(b, a.seed),
    };
    cfg.n_bins = a.n_bins.unwrap_or(cfg.n_bins);
    cfg.bin_width = a.bin_width.unwrap_or(cfg.bin_width);
    cfg.n_patients = a.patients.unwrap_or(cfg.n_patients);
    cfg.p = a.p.unwrap_or(cfg.p);
    cfg.p_true = a.p_true.unwrap_or(cfg.p_true.min(cfg.p));
    cfg.k0 = a.k0.unwrap_or(cfg.k0);
    let mut inputs = Vec::new();
    if let Some(path) = &a.fixed_signatures {
        let (_, _, m) = read_matrix(path)?;
        cfg.fixed_signatures = Some(m);
        inputs.push(("fixed_signatures".to_string(), path.clone()));
    }
    if let Some(path) = &a.sigma0 {
        let (_, _, m) = read_matrix(path)?;
        cfg.sigma0 = CovarianceMode::User(m.rows().into_iter().map(|r| r.to_vec()).collect());
        inputs.push(("sigma0".to_string(), path.clone()));
    }
    let truth = simulate::simulate(&cfg)?;
    prepare_out(&a.out)?;
    simulate::write_dataset(&truth, &a.out)?;
    manifest::write(&a.out, ctx, &cfg, Some(a.seed), &inputs)?;
    eprintln!("simulated {} mutations in {} patients over {} bins", truth.records.len(), cfg.n_patients, cfg.n_bins);
    Ok(())
}

pub fn fit_map(a: &FitMapArgs, ctx: &RunContext) -> Result<()> {
    let Loaded { data, inputs } = load_data(&a.data)?;
    let hyper = hyperparams(&a.hyper, a.hyper.k)?;
    let opts = MapOptions {
        max_iter: a.max_iter,
        tol: a.tol,
        n_starts: a.starts,
        seed: a.seed,
        newton_repeats: a.newton_repeats,
        rho: a.rho,
        update_form: match a.update_form {
            Form::Exact => UpdateForm::Exact,
            Form::Printed => UpdateForm::Printed,
        },
        fix_coefficients: false,
        verbose: a.verbose,
    };
    let fit = map::fit_map(&data, &hyper, &opts)?;
    prepare_out(&a.out)?;
    let labels = factor_labels(hyper.k);
    let (state, kept, report) = pruned(&fit.state, &labels, hyper.epsilon, &a.prune)?;
    write_state(&a.out, &kept, &data.counts.patients, &data.genome.covariate_names, &state)?;
    write_prune_report(&a.out.join("prune.csv"), &labels, &report)?;
    write_traces(&a.out.join("trace.csv"), &fit.all_traces)?;
    write_json(
        &a.out.join("fit.json"),
        &json!({
            "k": hyper.k,
            "k_hat": kept.len(),
            "log_posterior": fit.log_posterior(),
            "best_start": fit.start_index,
            "iterations": fit.iterations,
            "converged": fit.converged,
            "diagnostics": fit.diagnostics,
            "standardization": data.genome.standardization,
        }),
    )?;
    manifest::write(&a.out, ctx, a, Some(a.seed), &inputs)?;
    eprintln!(
        "best start {} after {} iterations: log posterior {}, {} of {} factors kept",
        fit.start_index,
        fit.iterations,
        fit.log_posterior(),
        kept.len(),
        hyper.k
    );
    Ok(())
}

fn chain_options(c: &ChainArgs, fixed: bool) -> ChainOptions {
    ChainOptions {
        n_iter: c.iter,
        burn_in: c.burn_in,
        thin: c.thin,
        seed: c.seed,
        fixed_signatures: fixed,
        ess_max_shrink_iters: c.max_shrinks,
        factor_ids: None,
    }
}

fn write_draws(dir: &Path, out: &ChainOutput) -> Result<()> {
    for block in out.blocks() {
        let mut f = create(&dir.join(format!("draws_{}.csv", block.name)))?;
        let n = block.shape.0 * block.shape.1;
        write!(f, "draw")?;
        for i in 0..n {
            write!(f, ",{}", block.element_name(i))?;
        }
        writeln!(f)?;
        for (d, draw) in block.draws.iter().enumerate() {
            write!(f, "{}", d + 1)?;
            for v in draw {
                write!(f, ",{v}")?;
            }
            writeln!(f)?;
        }
        f.flush()?;
    }
    Ok(())
}

fn write_summary(path: &Path, summary: &[ParamSummary]) -> Result<()> {
    let mut f = create(path)?;
    writeln!(f, "parameter,mean,q025,q975,contains_zero")?;
    for s in summary {
        writeln!(f, "{},{},{},{},{}", s.name, s.mean, s.q025, s.q975, s.contains_zero())?;
    }
    f.flush()?;
    Ok(())
}

fn write_ess(path: &Path, out: &ChainOutput) -> Result<()> {
    let mut f = create(path)?;
    writeln!(f, "parameter,ess,zero_variance")?;
    for block in out.blocks() {
        for i in 0..block.shape.0 * block.shape.1 {
            let e = ess(&block.series(i))?;
            writeln!(f, "{},{},{}", block.element_name(i), e.ess, e.zero_variance)?;
        }
    }
    f.flush()?;
    Ok(())
}

/// Draws, summaries, diagnostics and the posterior-mean state.
fn write_chain(dir: &Path, out: &ChainOutput, opts: &ChainOptions, labels: &[String], data: &Dataset) -> Result<()> {
    write_draws(dir, out)?;
    write_summary(&dir.join("summary.csv"), &out.summary())?;
    if opts.n_stored() >= 10 {
        write_ess(&dir.join("ess.csv"), out)?;
    } else {
        eprintln!("note: fewer than 10 stored draws, skipping effective sample sizes");
    }
    let mut f = create(&dir.join("logpost.csv"))?;
    writeln!(f, "iteration,logpost")?;
    for (it, lp) in out.logpost.iter().enumerate() {
        writeln!(f, "{},{lp}", it + 1)?;
    }
    f.flush()?;
    write_state(dir, labels, &data.counts.patients, &data.genome.covariate_names, &out.posterior_mean())?;
    write_json(
        &dir.join("chain.json"),
        &json!({
            "stored_draws": opts.n_stored(),
            "slice": {
                "transitions": out.slice.transitions,
                "mean_shrinks": out.slice.mean_shrinks(),
                "max_shrinks": out.slice.max_shrinks,
            },
            "standardization": data.genome.standardization,
        }),
    )?;
    Ok(())
}

pub fn fit_mcmc(a: &FitMcmcArgs, ctx: &RunContext) -> Result<()> {
    let Loaded { data, mut inputs } = load_data(&a.data)?;
    let (init, labels) = match &a.warm_start {
        Some(dir) => {
            let stored = read_state(dir)?;
            stored.check(&data, dir)?;
            inputs.extend(state_inputs("warm_start", dir));
            (stored.state, stored.labels)
        }
        None => {
            let h = hyperparams(&a.hyper, a.hyper.k)?;
            (map::init_random(&data, &h, a.chain.seed)?, factor_labels(a.hyper.k))
        }
    };
    let hyper = hyperparams(&a.hyper, init.k())?;
    let opts = chain_options(&a.chain, false);
    opts.validate(init.k())?;
    let out = run_chain(&data, &hyper, &init, &opts)?;
    prepare_out(&a.out)?;
    write_chain(&a.out, &out, &opts, &labels, &data)?;
    manifest::write(&a.out, ctx, a, Some(a.chain.seed), &inputs)?;
    Ok(())
}

/// Reference signatures as a channel-ordered I x K matrix whose columns
/// sum to one.
fn reference_signatures(path: &Path) -> Result<(Vec<String>, Array2<f64>)> {
    let (rows, cols, m) = read_matrix(path)?;
    if rows.len() != N_CHANNELS {
        return Err(PpfError::Config(format!("{}: expected {N_CHANNELS} channel rows, found {}", path.display(), rows.len())).into());
    }
    let mut r = Array2::zeros((N_CHANNELS, cols.len()));
    let mut seen = vec![false; N_CHANNELS];
    for (row, label) in rows.iter().enumerate() {
        let i = parse_channel(label).map_err(|e| PpfError::Config(format!("{}: {e}", path.display())))?;
        if std::mem::replace(&mut seen[i], true) {
            return Err(PpfError::Config(format!("{}: channel {label} listed twice", path.display())).into());
        }
        r.row_mut(i).assign(&m.row(row));
    }
    for (k, col) in r.columns().into_iter().enumerate() {
        let sum = col.sum();
        if col.iter().any(|&v| v < 0.0) || (sum - 1.0).abs() > 1e-6 {
            return Err(PpfError::Config(format!(
                "{}: signature {} is not a probability vector (sum {sum})",
                path.display(),
                cols[k]
            ))
            .into());
        }
    }
    Ok((cols, r))
}

pub fn refit(a: &RefitArgs, ctx: &RunContext) -> Result<()> {
    let (labels, r) = reference_signatures(&a.signatures)?;
    let Loaded { data, mut inputs } = load_data(&a.data)?;
    inputs.push(("signatures".into(), a.signatures.clone()));
    let hyper = hyperparams(&a.hyper, labels.len())?;
    let opts = chain_options(&a.chain, true);
    opts.validate(hyper.k)?;
    let mut init = map::init_random(&data, &hyper, a.chain.seed)?;
    init.r = r;
    init.fixed_signatures = true;
    let out = run_chain(&data, &hyper, &init, &opts)?;
    prepare_out(&a.out)?;
    write_chain(&a.out, &out, &opts, &labels, &data)?;

    let mut f = create(&a.out.join("refit.csv"))?;
    writeln!(f, "factor,mu_mean,mu_q025,mu_q975,shrunk")?;
    for (k, s) in out.mu.summaries().iter().enumerate() {
        let shrunk = s.mean <= a.shrink_factor * hyper.epsilon;
        writeln!(f, "{},{},{},{},{shrunk}", labels[k], s.mean, s.q025, s.q975)?;
    }
    f.flush()?;
    let mut f = create(&a.out.join("coefficients.csv"))?;
    writeln!(f, "factor,covariate,mean,q025,q975,contains_zero")?;
    let p = data.n_covariates();
    for (idx, s) in out.beta.summaries().iter().enumerate() {
        let (k, l) = (idx / p, idx % p);
        writeln!(
            f,
            "{},{},{},{},{},{}",
            labels[k], data.genome.covariate_names[l], s.mean, s.q025, s.q975, s.contains_zero()
        )?;
    }
    f.flush()?;
    manifest::write(&a.out, ctx, a, Some(a.chain.seed), &inputs)?;
    Ok(())
}

pub fn compnmf(a: &CompnmfArgs, ctx: &RunContext) -> Result<()> {
    let Loaded { data, inputs } = load_data(&a.data)?;
    let hyper = hyperparams(&a.hyper, a.hyper.k)?;
    let opts = MapOptions {
        max_iter: a.max_iter,
        tol: a.tol,
        n_starts: a.starts,
        seed: a.seed,
        ..Default::default()
    };
    let fit = map::compnmf_fit(&data.counts.totals, &hyper, &opts)?;
    prepare_out(&a.out)?;
    let labels = factor_labels(hyper.k);
    let (state, kept, report) = pruned(&fit.state, &labels, hyper.epsilon, &a.prune)?;
    write_state(&a.out, &kept, &data.counts.patients, &[], &state)?;
    write_prune_report(&a.out.join("prune.csv"), &labels, &report)?;
    write_traces(&a.out.join("trace.csv"), &fit.all_traces)?;
    manifest::write(&a.out, ctx, a, Some(a.seed), &inputs)?;
    Ok(())
}

fn load_fit_for(dir: &Path, data: &Dataset, inputs: &mut Vec<(String, PathBuf)>, role: &str) -> Result<StoredFit> {
    let fit = read_state(dir)?;
    fit.check(data, dir)?;
    inputs.extend(state_inputs(role, dir));
    Ok(fit)
}

pub fn attribute(a: &AttributeArgs, ctx: &RunContext) -> Result<()> {
    let Loaded { data, mut inputs } = load_data(&a.data)?;
    let fit = load_fit_for(&a.fit, &data, &mut inputs, "fit")?;
    let cls = postprocess::classify_mutations(&fit.state, &data)?;
    prepare_out(&a.out)?;
    let mut f = create(&a.out.join("attributions.csv"))?;
    write!(f, "patient,chrom,bin_start,bin_end,channel,count,assigned")?;
    for l in &fit.labels {
        write!(f, ",p_{l}")?;
    }
    writeln!(f)?;
    for (c, cell) in data.counts.cells.iter().enumerate() {
        let bin = &data.genome.bins[cell.q as usize];
        write!(
            f,
            "{},{},{},{},{},{},{}",
            data.counts.patients[cell.j as usize],
            bin.chrom,
            bin.start,
            bin.end,
            format_channel(cell.i as usize),
            cell.count,
            fit.labels[cls.assigned[c]]
        )?;
        for p in &cls.probs[c * cls.k..(c + 1) * cls.k] {
            write!(f, ",{p}")?;
        }
        writeln!(f)?;
    }
    f.flush()?;
    let mut f = create(&a.out.join("assignment_totals.csv"))?;
    writeln!(f, "factor,mutations")?;
    for (l, n) in fit.labels.iter().zip(&cls.counts) {
        writeln!(f, "{l},{n}")?;
    }
    f.flush()?;
    if let Some(dir) = &a.compare {
        let other = load_fit_for(dir, &data, &mut inputs, "compare")?;
        let cls2 = postprocess::classify_mutations(&other.state, &data)?;
        let table = postprocess::confusion(&cls, &cls2, &data)?;
        write_matrix(&a.out.join("confusion.csv"), "factor", &fit.labels, &other.labels, &table)?;
    }
    manifest::write(&a.out, ctx, a, None, &inputs)?;
    Ok(())
}

fn has_data(d: &DataArgs) -> bool {
    d.data.is_some() || d.bins.is_some()
}

/// Total activity of every factor and patient over the genome,
/// `theta_kj * sum_q w_q (c_jq / 2) E_qk`.
fn integrated_activity(theta: &Array2<f64>, beta: &Array2<f64>, data: &Dataset) -> Result<Array2<f64>> {
    let eff = covariate_effects(beta, data.covariates())?;
    Ok(theta * &model::integrals(&eff, data).g)
}

pub fn postprocess(a: &PostprocessArgs, ctx: &RunContext) -> Result<()> {
    let mut inputs = Vec::new();
    let data = if has_data(&a.data) {
        let l = load_data(&a.data)?;
        inputs = l.inputs;
        Some(l.data)
    } else {
        None
    };
    let fit = read_state(&a.fit)?;
    if let Some(d) = &data {
        fit.check(d, &a.fit)?;
    }
    inputs.extend(state_inputs("fit", &a.fit));
    let (state, labels, report) = pruned(&fit.state, &fit.labels, a.epsilon, &a.prune)?;
    prepare_out(&a.out)?;
    write_prune_report(&a.out.join("prune.csv"), &fit.labels, &report)?;
    write_state(&a.out, &labels, &fit.patients, &fit.covariates, &state)?;

    if let Some(tdir) = &a.truth {
        let r0_path = tdir.join("R0.csv");
        let (_, ref_labels, r0) = read_matrix(&r0_path)?;
        inputs.push(("truth/R0.csv".into(), r0_path));
        if state.k() == 0 {
            return Err(PpfError::Data("no factors left to score".into()).into());
        }
        let m = match_signatures(&state.r, &r0)?;
        let f1 = postprocess::f1(&state.r, &r0, a.f1_cut)?;
        let (er, rr) = align_columns(&state.r, &r0, &m)?;
        let mut metrics = json!({
            "k_hat": state.k(),
            "k_true": r0.ncols(),
            "f1": f1,
            "rmse_signatures": postprocess::rmse(&er, &rr)?,
        });
        let b0_path = tdir.join("B0.csv");
        let b0 = if b0_path.exists() {
            let (_, _, b0) = read_matrix(&b0_path)?;
            inputs.push(("truth/B0.csv".into(), b0_path));
            if b0.ncols() == state.beta.ncols() {
                let (eb, rb) = align_rows(&state.beta, &b0, &m)?;
                metrics["rmse_coefficients"] = json!(postprocess::rmse(&eb, &rb)?);
                metrics["rmse_coefficients_zero"] = json!(postprocess::rmse(&Array2::zeros(rb.dim()), &rb)?);
            }
            Some(b0)
        } else {
            None
        };
        let t0_path = tdir.join("Theta0.csv");
        if let (Some(d), Some(b0), true) = (&data, &b0, t0_path.exists()) {
            let (_, _, t0) = read_matrix(&t0_path)?;
            inputs.push(("truth/Theta0.csv".into(), t0_path));
            if b0.ncols() == d.n_covariates() && t0.ncols() == d.n_patients() {
                let est = integrated_activity(&state.theta, &state.beta, d)?;
                let truth = integrated_activity(&t0, b0, d)?;
                let (ea, ra) = align_rows(&est, &truth, &m)?;
                metrics["rmse_integrated_activity"] = json!(postprocess::rmse(&ea, &ra)?);
            }
        }
        write_json(&a.out.join("metrics.json"), &metrics)?;
        let mut f = create(&a.out.join("matching.csv"))?;
        writeln!(f, "factor,reference,cosine")?;
        for &(e, r, c) in &m.pairs {
            writeln!(f, "{},{},{c}", labels[e], ref_labels[r])?;
        }
        f.flush()?;
    }
    manifest::write(&a.out, ctx, a, None, &inputs)?;
    Ok(())
}

pub fn predict_track(a: &PredictTrackArgs, ctx: &RunContext) -> Result<()> {
    let Loaded { data, mut inputs } = load_data(&a.data)?;
    let fit = load_fit_for(&a.fit, &data, &mut inputs, "fit")?;
    let track = intensity_track(&fit.state, &data, a.window)?;
    prepare_out(&a.out)?;
    let mut f = create(&a.out.join("track.csv"))?;
    writeln!(f, "patient,chrom,first_bin,end_bin,start,end,predicted,observed")?;
    let bins = &data.genome.bins;
    let row = |f: &mut BufWriter<fs::File>, who: &str, w: usize, pred: f64, obs: f64| -> Result<()> {
        let win = &track.windows[w];
        writeln!(
            f,
            "{who},{},{},{},{},{},{pred},{obs}",
            win.chrom,
            win.first_bin,
            win.end_bin,
            bins[win.first_bin].start,
            bins[win.end_bin - 1].end
        )?;
        Ok(())
    };
    for (j, p) in data.counts.patients.iter().enumerate() {
        for w in 0..track.windows.len() {
            row(&mut f, p, w, track.predicted[[w, j]], track.observed[[w, j]])?;
        }
    }
    for w in 0..track.windows.len() {
        row(&mut f, "ALL", w, track.predicted.row(w).sum(), track.observed.row(w).sum())?;
    }
    f.flush()?;
    manifest::write(&a.out, ctx, a, None, &inputs)?;
    Ok(())
}
