//! `manifest.json`: everything needed to reproduce a run, and nothing that
//! changes between identical runs.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use ppf::PpfError;
use serde::{Deserialize, Serialize};

pub struct RunContext {
    pub command: String,
    /// Arguments after the subcommand name, without `--out`.
    pub args: Vec<String>,
    pub threads: usize,
    pub deterministic: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct InputDigest {
    pub role: String,
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub args: Vec<String>,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub inputs: Vec<InputDigest>,
    pub deterministic: bool,
    pub threads: usize,
}

pub fn command_args(argv: &[String], name: &str) -> Vec<String> {
    let Some(pos) = argv.iter().skip(1).position(|a| a == name) else {
        return vec![];
    };
    let mut out = Vec::new();
    let mut it = argv[pos + 2..].iter();
    while let Some(a) = it.next() {
        if a == "--out" {
            it.next();
        } else if !a.starts_with("--out=") {
            out.push(a.clone());
        }
    }
    out
}

pub fn write(out: &Path, ctx: &RunContext, config: &impl Serialize, seed: Option<u64>, inputs: &[(String, PathBuf)]) -> Result<()> {
    let inputs = inputs
        .iter()
        .map(|(role, path)| {
            Ok(InputDigest {
                role: role.clone(),
                path: path.clone(),
                sha256: ppf::io::sha256_file(path).with_context(|| format!("hashing {}", path.display()))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let m = Manifest {
        tool: "ppf".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: ctx.command.clone(),
        args: ctx.args.clone(),
        config: serde_json::to_value(config)?,
        seed,
        inputs,
        deterministic: ctx.deterministic,
        threads: ctx.threads,
    };
    let text = serde_json::to_string_pretty(&m)? + "\n";
    std::fs::write(out.join("manifest.json"), text)?;
    Ok(())
}

/// Command line that reproduces a manifest, writing into `out`. Input files
/// are checked against their recorded digests first.
pub fn replay_argv(manifest: &Path, out: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(manifest).with_context(|| format!("reading {}", manifest.display()))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| PpfError::Config(format!("{}: {e}", manifest.display())))?;
    for input in &m.inputs {
        let now = ppf::io::sha256_file(&input.path).with_context(|| format!("hashing {}", input.path.display()))?;
        if now != input.sha256 {
            return Err(PpfError::Data(format!("input {} changed since the recorded run", input.path.display())).into());
        }
    }
    let mut argv = vec!["ppf".to_string(), "--threads".into(), m.threads.to_string()];
    if m.deterministic {
        argv.push("--deterministic".into());
    }
    argv.push(m.command);
    argv.extend(m.args);
    argv.push("--out".into());
    argv.push(out.to_string_lossy().into_owned());
    Ok(argv)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn out_flag_is_not_recorded() {
        let argv: Vec<String> = ["ppf", "--threads", "2", "fit-map", "--data", "d", "--out", "o", "--seed", "3", "--out=x"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        assert_eq!(command_args(&argv, "fit-map"), vec!["--data", "d", "--seed", "3"]);
    }
}
