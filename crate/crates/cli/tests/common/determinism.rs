//! Runs every CLI command, replays it from its manifest and compares the
//! outputs byte for byte.

use std::path::{Path, PathBuf};
use std::process::Command;

const BIN: &str = env!("CARGO_BIN_EXE_giqa");

pub struct Invocation {
    pub stdout: Vec<u8>,
    pub outputs: Vec<(String, Vec<u8>)>,
}

fn run(dir: &Path, args: &[&str], threads: Option<&str>) -> Result<Vec<u8>, String> {
    let mut cmd = Command::new(BIN);
    cmd.current_dir(dir).args(args);
    if let Some(t) = threads {
        cmd.env("GIQA_THREADS", t);
    }
    let out = cmd.output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "giqa {} exited with {}: {}",
            args.join(" "),
            out.status,
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(out.stdout)
}

fn read_outputs(dir: &Path, manifest: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let text = std::fs::read_to_string(dir.join(manifest)).map_err(|e| e.to_string())?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    let outputs = value["outputs"].as_array().ok_or("manifest lacks outputs")?;
    outputs
        .iter()
        .map(|o| {
            let name = o.as_str().ok_or("output is not a string")?.to_string();
            let bytes = std::fs::read(dir.join(&name)).map_err(|e| format!("{name}: {e}"))?;
            Ok((name, bytes))
        })
        .collect()
}

/// Runs `args` with a manifest at `manifest`, returning stdout and the
/// bytes of every output the manifest lists.
pub fn invoke(dir: &Path, manifest: &str, args: &[&str]) -> Result<Invocation, String> {
    let mut full = vec!["--manifest", manifest];
    full.extend_from_slice(args);
    let stdout = run(dir, &full, None)?;
    let outputs = read_outputs(dir, Path::new(manifest))?;
    Ok(Invocation { stdout, outputs })
}

/// Replays `manifest` on a single thread and reports the first difference.
pub fn replay_matches(dir: &Path, manifest: &str, first: &Invocation) -> Result<(), String> {
    let stdout = run(dir, &["replay", "--from", manifest], Some("1"))?;
    if stdout != first.stdout {
        return Err(format!(
            "{manifest}: stdout differs: {:?} vs {:?}",
            String::from_utf8_lossy(&first.stdout),
            String::from_utf8_lossy(&stdout)
        ));
    }
    let again = read_outputs(dir, Path::new(manifest))?;
    if again.len() != first.outputs.len() {
        return Err(format!("{manifest}: output list changed"));
    }
    for ((name, a), (_, b)) in first.outputs.iter().zip(&again) {
        if a != b {
            return Err(format!("{manifest}: {name} differs after replay"));
        }
    }
    Ok(())
}

/// Every subcommand on the demo data, in dependency order.
pub const PIPELINE: &[&[&str]] = &[
    &["demo", "--out", "d", "--seed", "7"],
    &["fit-gmm", "--input", "d/real.giqf", "--out", "gmm.json", "--components", "3"],
    &["fit-gmm", "--input", "d/real.giqf", "--out", "gmm-diag.json", "--covariance", "diag", "--n-init", "2", "--seed", "4"],
    &["build-index", "--input", "d/real.giqf", "--out", "index.json"],
    &["score", "--method", "gmm", "--model", "gmm.json", "--input", "d/generated.giqf", "--out", "gmm.csv", "--normalize"],
    &["score", "--method", "knn", "--model", "index.json", "--input", "d/generated.giqf", "--out", "knn.csv", "--k", "3"],
    &["score", "--method", "knn", "--model", "index.json", "--input", "d/real.giqf", "--out", "self.csv"],
    &["eval-pairs", "--scores", "gmm.csv", "--pairs", "d/pairs.csv", "--out", "pairs-gmm.csv"],
    &["pick", "--scores", "gmm.csv", "--rate", "0.9", "--out", "picked.txt"],
    &["qs", "--scores", "gmm.csv", "--subset", "picked.txt", "--out", "qs.csv"],
    &["qs", "--scores", "gmm.csv", "--scores", "knn.csv", "--out", "qs-joint.csv"],
    &["ds", "--real", "d/real.giqf", "--generated", "d/real.giqf", "--generated", "d/collapsed.giqf", "--out", "ds-knn.csv"],
    &["ds", "--real", "d/real.giqf", "--generated", "d/matched.giqf", "--generated", "d/collapsed.giqf", "--method", "gmm", "--components", "2", "--out", "ds-gmm.csv"],
    &["weights", "--scores", "gmm.csv", "--out", "weights.csv"],
    &["histogram", "--scores", "knn.csv", "--bins", "5", "--out", "hist.csv"],
    &["fit-mbc", "--train", "d/mbc_train.jsonl", "--out", "mbc.json", "--epochs", "20", "--history", "mbc-history.csv"],
    &["score", "--method", "mbc", "--model", "mbc.json", "--input", "d/mbc.giqf", "--out", "mbc.csv"],
    &["pca", "--input", "d/real.giqf", "--out", "pca.json", "--pca-variance", "0.99", "--transformed", "real-pca.giqf"],
    &["project", "--model", "pca.json", "--input", "d/generated.giqf", "--out", "generated-pca.giqf"],
    &["split", "--input", "d/real.giqf", "--ratio", "0.8", "--seed", "3", "--out", "train.giqf", "--rest", "val.giqf"],
];

pub fn workspace() -> Result<(tempfile::TempDir, PathBuf), String> {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = tmp.path().to_path_buf();
    Ok((tmp, path))
}

/// Runs the pipeline, replays each step and returns a one-line summary.
#[allow(dead_code)]
pub fn run_all_twice() -> Result<String, String> {
    let (_tmp, dir) = workspace()?;
    let mut commands = std::collections::BTreeSet::new();
    let mut files = 0;
    for (i, args) in PIPELINE.iter().enumerate() {
        let manifest = format!("run{i:02}.manifest.json");
        let first = invoke(&dir, &manifest, args)?;
        replay_matches(&dir, &manifest, &first)?;
        commands.insert(args[0]);
        files += first.outputs.len();
    }
    Ok(format!(
        "{} invocations of {} commands replayed from their manifests, {files} output files and all stdout byte-identical",
        PIPELINE.len(),
        commands.len()
    ))
}
