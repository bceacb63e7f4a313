//! `ltfs`: build long-tail benchmarks, derive regimes, train, evaluate and
//! report.

mod build;
mod eval;
mod regime;
mod report;
mod synth;
mod train;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ltfs::datamodel::Producer;
use ltfs::model::config_hash;
use ltfs::source::DirSource;
use serde::Serialize;

#[derive(Parser, Debug)]
#[command(name = "ltfs", version, about = "Long-tail few-shot benchmark pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a benchmark manifest from a fixture or an annotation directory.
    Build(build::BuildArgs),
    /// Derive a Scarce-Class, Scarce-Image, Scarce-Class-Adjust or
    /// supervision-fraction manifest.
    Regime(regime::RegimeArgs),
    /// Train a model on the base classes of a manifest.
    Train(train::TrainArgs),
    /// Evaluate a checkpoint on the novel classes with k-shot classifiers.
    Eval(eval::EvalArgs),
    /// Render bar charts and summary tables from eval or metrics CSVs.
    Report(report::ReportArgs),
    /// Write a rendered toy dataset with a fixture and a training config.
    Synth(synth::SynthArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Build(a) => build::run(a),
        Command::Regime(a) => regime::run(a),
        Command::Train(a) => train::run(a),
        Command::Eval(a) => eval::run(a),
        Command::Report(a) => report::run(a),
        Command::Synth(a) => synth::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

/// The invoking command line, with the program reduced to its file name.
fn command_line() -> String {
    let mut args = std::env::args();
    let program = args
        .next()
        .map(|p| Path::new(&p).file_name().map_or(p.clone(), |f| f.to_string_lossy().into_owned()))
        .unwrap_or_else(|| "ltfs".into());
    std::iter::once(program)
        .chain(args.map(|a| {
            if a.is_empty() || a.contains(char::is_whitespace) {
                format!("'{a}'")
            } else {
                a
            }
        }))
        .collect::<Vec<_>>()
        .join(" ")
}

fn producer<T: Serialize>(config: &T) -> Producer {
    Producer {
        command: command_line(),
        config_hash: config_hash(config),
    }
}

/// Header lines for CSV artifacts.
fn preamble(p: &Producer) -> Vec<String> {
    vec![format!("command: {}", p.command), format!("config_hash: {}", p.config_hash)]
}

/// Image root: `--data-root` (or `LTFS_DATA_ROOT`), else the directory
/// holding the manifest.
fn data_source(explicit: Option<&Path>, manifest: &Path) -> DirSource {
    match explicit {
        Some(root) => DirSource::new(root),
        None => DirSource::new(manifest.parent().unwrap_or(Path::new("."))),
    }
}

fn default_sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_stem().unwrap_or_default().to_os_string();
    name.push(suffix);
    path.with_file_name(name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sibling_paths() {
        assert_eq!(default_sibling(Path::new("out/m.json"), ".portion.csv"), PathBuf::from("out/m.portion.csv"));
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
