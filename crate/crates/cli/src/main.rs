//! `lcn-ot` command-line driver.
//!
//! Exit codes: 0 on success, 1 on configuration or I/O errors, 2 when any
//! variant failed or a theorem check did not hold.

mod args;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser as _;
use lcn_ot::eval::{kernel_error_study, runtime_sweep, write_rows};
use lcn_ot::experiment::{generate, run, RunOutput, RunRecord};

use args::{Cli, Command, GenerateArgs, RunArgs, SweepArgs, TheoremArgs};

/// Environment variable bounding the worker pool.
const THREADS_ENV: &str = "LCN_OT_THREADS";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{0}")]
    Failed(String),
    #[error(transparent)]
    Core(#[from] lcn_ot::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Failed(_) => 2,
            _ => 1,
        }
    }
}

fn init_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|t| *t > 0)
        .ok_or_else(|| CliError::Config(format!("{THREADS_ENV} must be a positive integer, got '{raw}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Config(format!("cannot size the worker pool: {e}")))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn cmd_generate(a: &GenerateArgs) -> Result<(), CliError> {
    let source = a.problem.source()?;
    let prob = generate(&source, a.seed).map_err(|e| CliError::Config(e.to_string()))?;
    std::fs::create_dir_all(&a.out_dir)?;
    let ext = if a.binary { "bin" } else { "txt" };
    for (name, set) in [("p", &prob.p), ("q", &prob.q)] {
        let path = a.out_dir.join(format!("{name}.{ext}"));
        let mut w = create(&path)?;
        if a.binary {
            set.write_binary(&mut w)?;
        } else {
            set.write_text(&mut w)?;
        }
        w.flush()?;
        println!("{}", path.display());
    }
    Ok(())
}

fn json_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

fn cmd_run(a: &RunArgs) -> Result<(), CliError> {
    let cfg = a.to_config()?;
    let records = run(&cfg).map_err(|e| CliError::Config(e.to_string()))?;
    let rows: Vec<_> = records.iter().map(RunRecord::to_row).collect();
    match &cfg.output {
        Some(path) => {
            let mut w = create(path)?;
            write_rows(&rows, &mut w)?;
            w.flush()?;
            let out = RunOutput {
                config: cfg.clone(),
                records: records.clone(),
            };
            let mut j = create(&json_path(path))?;
            serde_json::to_writer_pretty(&mut j, &out).map_err(lcn_ot::Error::from)?;
            writeln!(j)?;
            j.flush()?;
        }
        None => write_rows(&rows, io::stdout().lock())?,
    }
    let mut failures = 0;
    for r in &records {
        for w in &r.warnings {
            eprintln!("warning: {} seed {}: {w}", r.variant.name(), r.seed);
        }
        if let Some(e) = &r.error {
            eprintln!("error: {e}");
            failures += 1;
        }
    }
    if failures > 0 {
        return Err(CliError::Failed(format!("{failures} of {} runs failed", records.len())));
    }
    Ok(())
}

fn cmd_sweep(a: &SweepArgs) -> Result<(), CliError> {
    let cfg = a.to_config()?;
    let rows = runtime_sweep(&cfg).map_err(|e| match e {
        lcn_ot::Error::InvalidParameter(_) => CliError::Config(e.to_string()),
        other => CliError::Failed(other.to_string()),
    })?;
    match &a.output {
        Some(path) => {
            let mut w = create(path)?;
            write_rows(&rows, &mut w)?;
            w.flush()?;
        }
        None => write_rows(&rows, io::stdout().lock())?,
    }
    Ok(())
}

fn cmd_theorem(a: &TheoremArgs) -> Result<(), CliError> {
    let scenario = a.to_scenario()?;
    let report = kernel_error_study(&scenario).map_err(|e| CliError::Config(e.to_string()))?;
    let text = serde_json::to_string_pretty(&report).map_err(lcn_ot::Error::from)?;
    match &a.output {
        Some(path) => {
            let mut w = create(path)?;
            writeln!(w, "{text}")?;
            w.flush()?;
        }
        None => println!("{text}"),
    }
    for c in &report.checks {
        eprintln!("{} {}", if c.passed { "PASS" } else { "FAIL" }, c.name);
    }
    if !report.all_passed() {
        return Err(CliError::Failed("some theorem checks failed".into()));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // bad flags are configuration errors; help and version are not
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = init_threads().and_then(|()| match &cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::TheoremCheck(a) => cmd_theorem(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("lcn-ot: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
