use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;
use giqa_core::ErrorCategory;

mod args;
mod commands;
mod manifest;

use args::{Cli, Command, ReplayArgs};
use manifest::{Run, RunManifest, TOOL_VERSION};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(giqa_core::Error),
}

impl From<giqa_core::Error> for CliError {
    fn from(e: giqa_core::Error) -> Self {
        CliError::Core(e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(msg) => f.write_str(msg),
            CliError::Core(e) => e.fmt(f),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(e) => match e.category() {
                ErrorCategory::Argument => 2,
                ErrorCategory::Data => 3,
                ErrorCategory::Numerical => 4,
            },
        }
    }
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var("GIQA_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::Usage(format!("GIQA_THREADS must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Usage(format!("cannot configure {threads} threads: {e}")))
}

fn primary_output(command: &Command) -> Option<&PathBuf> {
    match command {
        Command::Demo(a) => Some(&a.out),
        Command::FitGmm(a) => Some(&a.out),
        Command::BuildIndex(a) => Some(&a.out),
        Command::Score(a) => Some(&a.out),
        Command::EvalPairs(a) => a.out.as_ref(),
        Command::Qs(a) => a.out.as_ref(),
        Command::Ds(a) => a.out.as_ref(),
        Command::Pick(a) => Some(&a.out),
        Command::Weights(a) => Some(&a.out),
        Command::FitMbc(a) => Some(&a.out),
        Command::Pca(a) => Some(&a.out),
        Command::Project(a) => Some(&a.out),
        Command::Split(a) => Some(&a.out),
        Command::Histogram(a) => Some(&a.out),
        Command::Replay(_) => None,
    }
}

fn manifest_path(cli: &Cli) -> PathBuf {
    if let Some(p) = &cli.manifest {
        return p.clone();
    }
    match primary_output(&cli.command) {
        Some(out) => {
            let mut s = out.clone().into_os_string();
            s.push(".manifest.json");
            PathBuf::from(s)
        }
        None => PathBuf::from(format!("giqa-{}.manifest.json", cli.command.name())),
    }
}

fn dispatch(command: &Command, run: &mut Run) -> Result<(), CliError> {
    match command {
        Command::Demo(a) => commands::demo(a, run),
        Command::FitGmm(a) => commands::fit_gmm_cmd(a, run),
        Command::BuildIndex(a) => commands::build_index_cmd(a, run),
        Command::Score(a) => commands::score(a, run),
        Command::EvalPairs(a) => commands::eval_pairs(a, run),
        Command::Qs(a) => commands::qs(a, run),
        Command::Ds(a) => commands::ds(a, run),
        Command::Pick(a) => commands::pick(a, run),
        Command::Weights(a) => commands::weights(a, run),
        Command::FitMbc(a) => commands::fit_mbc(a, run),
        Command::Pca(a) => commands::pca(a, run),
        Command::Project(a) => commands::project(a, run),
        Command::Split(a) => commands::split(a, run),
        Command::Histogram(a) => commands::histogram(a, run),
        Command::Replay(_) => unreachable!("replay is handled before dispatch"),
    }
}

fn execute(cli: Cli, args: Vec<String>) -> Result<(), CliError> {
    if let Command::Replay(r) = &cli.command {
        return replay(r);
    }
    let start = Instant::now();
    let mut run = Run::default();
    dispatch(&cli.command, &mut run)?;
    let params = match serde_json::to_value(&cli.command).map_err(giqa_core::Error::from)? {
        serde_json::Value::Object(mut m) => m.remove(cli.command.name()).unwrap_or_default(),
        other => other,
    };
    let working_dir = std::env::current_dir().map_err(|e| manifest::io_error(".".as_ref(), e))?;
    let record = RunManifest {
        command: cli.command.name().to_string(),
        args,
        working_dir,
        params,
        input_checksums: run.inputs,
        outputs: run.outputs,
        seed: run.seed,
        tool_version: TOOL_VERSION.to_string(),
        wall_time_seconds: start.elapsed().as_secs_f64(),
    };
    record.save(&manifest_path(&cli))?;
    Ok(())
}

fn replay(args: &ReplayArgs) -> Result<(), CliError> {
    let record = RunManifest::load(&args.from)?;
    if record.tool_version != TOOL_VERSION {
        log::warn!(
            "manifest was written by version {}, replaying with {TOOL_VERSION}",
            record.tool_version
        );
    }
    record.verify_inputs()?;
    std::env::set_current_dir(&record.working_dir)
        .map_err(|e| manifest::io_error(&record.working_dir, e))?;
    let argv = std::iter::once("giqa".to_string()).chain(record.args.iter().cloned());
    let cli = Cli::try_parse_from(argv)
        .map_err(|e| CliError::Usage(format!("manifest arguments do not parse: {e}")))?;
    if matches!(cli.command, Command::Replay(_)) {
        return Err(CliError::Usage("a manifest cannot record a replay".into()));
    }
    execute(cli, record.args)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| execute(cli, args));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
