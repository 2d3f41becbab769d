use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use ppf::channels::format_channel;
use ppf::copies::ingest_copy_numbers;
use ppf::counts::ingest_mutations;
use ppf::genome::{ingest_covariates, CovariateSpec};
use ppf::io::read_matrix;
use ppf::postprocess::match_signatures;
use ppf::simulate::{simulate, SimConfig};

fn ppf(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_ppf")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = ppf(args);
    assert!(out.status.success(), "ppf {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SMALL: [&str; 12] = ["--n-bins", "300", "--patients", "3", "--k0", "2", "--p", "3", "--p-true", "2", "--seed", "5"];

fn small_sim(dir: &Path) -> PathBuf {
    let out = dir.join("sim");
    let mut args = vec!["simulate", "--scale", "scaled"];
    args.extend(SMALL);
    args.extend(["--out", p(&out)]);
    ok(&args);
    out
}

fn files(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).filter(|p| p.is_file()).collect();
    v.sort();
    v
}

fn assert_same_outputs(a: &Path, b: &Path, skip: &[&str]) {
    let fa = files(a);
    assert_eq!(fa.len(), files(b).len());
    for f in fa {
        let name = f.file_name().unwrap().to_str().unwrap();
        if skip.contains(&name) {
            continue;
        }
        assert_eq!(fs::read(&f).unwrap(), fs::read(b.join(name)).unwrap(), "{name} differs");
    }
}

#[test]
fn simulated_files_ingest_back_to_the_generator_output() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = small_sim(tmp.path());
    let cfg = SimConfig {
        n_bins: 300,
        n_patients: 3,
        k0: 2,
        p: 3,
        p_true: 2,
        ..SimConfig::scaled(false, 5)
    };
    let truth = simulate(&cfg).unwrap();

    let genome = ingest_covariates(&sim.join("bins.tsv"), &CovariateSpec::default()).unwrap();
    assert_eq!(genome.bins, truth.genome.bins);
    assert_eq!(genome.covariates, truth.genome.covariates);
    let counts = ingest_mutations(&sim.join("mutations.tsv"), &genome, Some(&truth.patients)).unwrap();
    assert_eq!(counts.total() as usize, truth.records.len());
    assert_eq!(counts.totals, truth.dataset().unwrap().counts.totals);
    let copies = ingest_copy_numbers(&sim.join("copies.tsv"), &genome, &truth.patients).unwrap();
    assert_eq!(copies.copies, truth.copies.copies);

    let (_, _, r0) = read_matrix(&sim.join("truth/R0.csv")).unwrap();
    assert_eq!(r0, truth.params.r0);
    let text = fs::read_to_string(sim.join("mutations.tsv")).unwrap();
    let first = text.lines().nth(1).unwrap();
    let rec = &truth.records[0];
    assert_eq!(first, format!("{}\t{}\t{}\t{}", rec.patient, rec.chrom, rec.pos, format_channel(rec.channel)));
}

#[test]
fn scenario_a_uses_identity_innovations() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = small_sim(tmp.path());
    let (_, _, s) = read_matrix(&sim.join("truth/Sigma0.csv")).unwrap();
    assert_eq!(s, ndarray::Array2::<f64>::eye(3));
}

#[test]
fn runs_are_byte_identical_and_thread_independent() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    let sim = small_sim(t);
    let sim2 = t.join("sim2");
    let mut args = vec!["simulate", "--scale", "scaled"];
    args.extend(SMALL);
    args.extend(["--out", p(&sim2)]);
    ok(&args);
    assert_same_outputs(&sim, &sim2, &[]);

    for threads in ["1", "3"] {
        let map = t.join(format!("map{threads}"));
        ok(&["--threads", threads, "fit-map", "--data", p(&sim), "-k", "4", "--starts", "2", "--out", p(&map)]);
        let mcmc = t.join(format!("mcmc{threads}"));
        ok(&["--threads", threads, "fit-mcmc", "--data", p(&sim), "-k", "3", "--iter", "40", "--burn-in", "20", "--out", p(&mcmc)]);
    }
    assert_same_outputs(&t.join("map1"), &t.join("map3"), &["manifest.json"]);
    assert_same_outputs(&t.join("mcmc1"), &t.join("mcmc3"), &["manifest.json"]);
}

#[test]
fn replay_reproduces_outputs_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    let sim = small_sim(t);
    let map = t.join("map");
    ok(&["--deterministic", "fit-map", "--data", p(&sim), "-k", "3", "--starts", "1", "--seed", "9", "--out", p(&map)]);
    let again = t.join("again");
    ok(&["replay", "--manifest", p(&map.join("manifest.json")), "--out", p(&again)]);
    assert_same_outputs(&map, &again, &[]);

    let m: serde_json::Value = serde_json::from_slice(&fs::read(map.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["seed"], 9);
    assert_eq!(m["deterministic"], true);
    assert_eq!(m["inputs"].as_array().unwrap().len(), 4);
    assert!(m["inputs"][0]["sha256"].as_str().unwrap().len() == 64);

    fs::write(sim.join("patients.txt"), "P3\nP2\nP1\n").unwrap();
    let out = ppf(&["replay", "--manifest", p(&map.join("manifest.json")), "--out", p(&t.join("x"))]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn no_prune_keeps_every_factor() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    let sim = small_sim(t);
    let map = t.join("map");
    ok(&["fit-map", "--data", p(&sim), "-k", "6", "--starts", "1", "--no-prune", "--out", p(&map)]);
    let (_, cols, _) = read_matrix(&map.join("signatures.csv")).unwrap();
    assert_eq!(cols.len(), 6);
    let pruned = t.join("pruned");
    ok(&["fit-map", "--data", p(&sim), "-k", "6", "--starts", "1", "--out", p(&pruned)]);
    let (_, cols, _) = read_matrix(&pruned.join("signatures.csv")).unwrap();
    assert!(cols.len() < 6);
}

#[test]
fn exit_codes_follow_error_categories() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    let sim = small_sim(t);
    let code = |args: &[&str]| ppf(args).status.code();

    assert_eq!(code(&["fit-mcmc", "--data", p(&sim), "--iter", "5", "--burn-in", "5", "--out", p(&t.join("a"))]), Some(2));
    assert_eq!(code(&["fit-mcmc", "--data", p(&sim), "--warm-start", p(&t.join("missing")), "--out", p(&t.join("b"))]), Some(2));
    assert_eq!(code(&["fit-map", "--bogus"]), Some(2));

    let bad = t.join("bad.tsv");
    fs::write(&bad, "chrom\tstart\tend\tweight\nc\t10\t5\t1\n").unwrap();
    assert_eq!(code(&["fit-map", "--bins", p(&bad), "--mutations", p(&sim.join("mutations.tsv")), "--out", p(&t.join("c"))]), Some(3));

    let sigs = t.join("sigs.csv");
    let mut text = String::from("channel,s1\n");
    for i in 0..96 {
        text.push_str(&format!("{},0.02\n", format_channel(i)));
    }
    fs::write(&sigs, text).unwrap();
    assert_eq!(code(&["refit", "--data", p(&sim), "--signatures", p(&sigs), "--out", p(&t.join("d"))]), Some(2));
}

#[test]
fn point_process_and_nmf_commands_agree_on_aggregate_data() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    let dir = t.join("agg");
    fs::create_dir_all(&dir).unwrap();
    fs::write(dir.join("bins.tsv"), "chrom\tstart\tend\tweight\nall\t0\t1\t1\n").unwrap();
    let mut muts = String::from("patient\tchrom\tpos\tchannel\n");
    for j in 0..6 {
        for i in 0..96 {
            for _ in 0..((i * 7 + j * 13) % 5 + (i % 3) * j) {
                muts.push_str(&format!("P{j}\tall\t0\t{}\n", format_channel(i)));
            }
        }
    }
    fs::write(dir.join("mutations.tsv"), muts).unwrap();
    let common = ["--data", p(&dir), "-k", "3", "--starts", "1", "--no-prune", "--max-iter", "3000"];
    let (map, nmf) = (t.join("map"), t.join("nmf"));
    let mut a = vec!["fit-map"];
    a.extend(common);
    a.extend(["--out", p(&map)]);
    ok(&a);
    let mut b = vec!["compnmf"];
    b.extend(common);
    b.extend(["--out", p(&nmf)]);
    ok(&b);
    let (_, _, r1) = read_matrix(&t.join("map/signatures.csv")).unwrap();
    let (_, _, r2) = read_matrix(&t.join("nmf/signatures.csv")).unwrap();
    let m = match_signatures(&r1, &r2).unwrap();
    assert!(m.pairs.iter().all(|&(_, _, c)| c >= 0.999), "{:?}", m.pairs);
}

#[test]
fn downstream_commands_accept_fit_directories() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    let sim = small_sim(t);
    let map = t.join("map");
    ok(&["fit-map", "--data", p(&sim), "-k", "4", "--starts", "1", "--out", p(&map)]);
    ok(&["attribute", "--data", p(&sim), "--fit", p(&map), "--compare", p(&map), "--out", p(&t.join("attr"))]);
    let (rows, cols, conf) = read_matrix(&t.join("attr/confusion.csv")).unwrap();
    assert_eq!(rows, cols);
    let off: f64 = conf.indexed_iter().filter(|((i, j), _)| i != j).map(|(_, v)| v).sum();
    assert_eq!(off, 0.0);

    ok(&["predict-track", "--data", p(&sim), "--fit", p(&map), "--window", "100", "--out", p(&t.join("track"))]);
    let track = fs::read_to_string(t.join("track/track.csv")).unwrap();
    assert_eq!(track.lines().filter(|l| l.starts_with("ALL,")).count(), 3);
    assert_eq!(track.lines().count(), 1 + 4 * 3);

    ok(&["postprocess", "--fit", p(&map), "--truth", p(&sim.join("truth")), "--out", p(&t.join("post"))]);
    let metrics: serde_json::Value = serde_json::from_slice(&fs::read(t.join("post/metrics.json")).unwrap()).unwrap();
    assert!(metrics["rmse_signatures"].as_f64().unwrap() >= 0.0);

    let mcmc = t.join("mcmc");
    ok(&["fit-mcmc", "--data", p(&sim), "--warm-start", p(&map), "--iter", "30", "--burn-in", "10", "--out", p(&mcmc)]);
    let summary = fs::read_to_string(mcmc.join("summary.csv")).unwrap();
    assert!(summary.starts_with("parameter,mean,q025,q975,contains_zero"));
    let draws = fs::read_to_string(mcmc.join("draws_mu.csv")).unwrap();
    assert_eq!(draws.lines().count(), 21);
}
