//! Command-line frontend for `dfinfer`.
//!
//! Exit codes: 0 on success, 1 when `verify` finds a failing suite, 2 on any error
//! (bad flags, unreadable or malformed input, library errors).

pub mod commands;
pub mod config;
pub mod data;
pub mod error;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::{execute, prepare, Command, Status};
pub use config::{ModelSpec, RunConfig};
pub use error::{CliError, CliResult};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY_FAILED: i32 = 1;
pub const EXIT_ERROR: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "dfinfer", version, about = "Distribution-free predictive inference")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Sub,
}

#[derive(Debug, Subcommand)]
pub enum Sub {
    /// Prediction sets for each test row (split, full-least-squares, jackknife-plus, cv-plus, cross-conformal, weighted-split).
    Predict(Invocation),
    /// Conformal outlier p-values with BH or FWER rejections.
    Outliers(Invocation),
    /// Online p-values, quantile tracker and test martingale over a JSONL event stream.
    Monitor(Invocation),
    /// Recalibrate probability forecasts (binning, isotonic, temperature, venn-abers).
    CalibrateProbs(Invocation),
    /// Permutation tests of (conditional) independence and regression confidence intervals.
    TestCi(Invocation),
    /// Run Monte Carlo verification suites; exit 0 iff all pass.
    Verify(Invocation),
    /// Calibration error diagnostics for a forecast file.
    Report(Invocation),
}

#[derive(Debug, Args)]
pub struct Invocation {
    /// TOML config file; flags override its keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Write the resolved config (defaults filled) to this file before running.
    #[arg(long)]
    pub emit_config: Option<PathBuf>,
    #[command(flatten)]
    pub run: RunConfig,
}

impl Sub {
    fn split(self) -> (Command, Invocation) {
        match self {
            Self::Predict(i) => (Command::Predict, i),
            Self::Outliers(i) => (Command::Outliers, i),
            Self::Monitor(i) => (Command::Monitor, i),
            Self::CalibrateProbs(i) => (Command::CalibrateProbs, i),
            Self::TestCi(i) => (Command::TestCi, i),
            Self::Verify(i) => (Command::Verify, i),
            Self::Report(i) => (Command::Report, i),
        }
    }
}

/// Resolves the config and runs the command; output goes to `--output` or `stdout`.
pub fn run_invocation(cmd: Command, inv: Invocation, stdout: &mut dyn Write, stderr: &mut dyn Write) -> CliResult<Status> {
    let file = inv.config.as_deref().map(RunConfig::load).transpose()?;
    let cfg = prepare(cmd, file, &inv.run)?;
    if let Some(path) = &inv.emit_config {
        std::fs::write(path, cfg.to_toml()?).map_err(|e| CliError::io(path, e))?;
    }
    match &cfg.output {
        Some(path) => {
            let f = std::fs::File::create(path).map_err(|e| CliError::io(path, e))?;
            let mut w = std::io::BufWriter::new(f);
            let status = execute(cmd, &cfg, &mut w, stderr)?;
            w.flush().map_err(|e| CliError::io(path, e))?;
            Ok(status)
        }
        None => execute(cmd, &cfg, stdout, stderr),
    }
}

/// Full entry point; returns the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { stderr.write_all(text.as_bytes()) } else { stdout.write_all(text.as_bytes()) };
            return code;
        }
    };
    let (cmd, inv) = cli.command.split();
    match run_invocation(cmd, inv, stdout, stderr) {
        Ok(Status::Done) | Ok(Status::Verified { pass: true }) => EXIT_OK,
        Ok(Status::Verified { pass: false }) => EXIT_VERIFY_FAILED,
        // The reader went away (e.g. `| head`); nothing is left to report to.
        Err(CliError::Io { source, .. }) if source.kind() == std::io::ErrorKind::BrokenPipe => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            EXIT_ERROR
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn bad_flags_exit_two_and_help_exits_zero() {
        let (mut o, mut e) = (Vec::new(), Vec::new());
        assert_eq!(run(["dfinfer", "predict", "--bogus"], &mut o, &mut e), EXIT_ERROR);
        assert_eq!(run(["dfinfer", "--help"], &mut o, &mut e), EXIT_OK);
        assert!(String::from_utf8_lossy(&o).contains("verify"));
    }
}
