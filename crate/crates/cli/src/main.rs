//! `cwc`: partition data, run experiments and sweeps, plot run logs.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cwc_core::harness::{self, curve_svg, parse_run_csv, ExperimentConfig, RunError};
use cwc_core::Error;

#[derive(Parser)]
#[command(name = "cwc", version, about = "Serial and parallel federated learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the client partition and write its manifest only.
    Partition(ConfigArgs),
    /// Run one experiment.
    Run(ConfigArgs),
    /// Run one experiment per value of `sweep_axis`.
    Sweep(ConfigArgs),
    /// Render run CSVs as an accuracy curve.
    Plot(PlotArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// Config file of `key = value` lines.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Per-key overrides: `--key value` or `--key=value`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "OVERRIDES")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct PlotArgs {
    /// Run CSV to plot; repeat for several curves.
    #[arg(long, short, required = true)]
    input: Vec<PathBuf>,
    #[arg(long, short)]
    output: PathBuf,
    /// Legend labels, one per input (defaults to the parent directory name).
    #[arg(long)]
    label: Vec<String>,
}

fn parse_overrides(args: &[String]) -> Result<Vec<(String, String)>, Error> {
    let mut out = Vec::new();
    let mut it = args.iter();
    while let Some(arg) = it.next() {
        let Some(flag) = arg.strip_prefix("--") else {
            return Err(Error::Config(format!("expected `--key value`, got `{arg}`")));
        };
        let (key, value) = match flag.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let value = it
                    .next()
                    .ok_or_else(|| Error::Config(format!("missing value for `--{flag}`")))?;
                (flag.to_string(), value.clone())
            }
        };
        out.push((key.replace('-', "_"), value));
    }
    Ok(out)
}

fn load(args: &ConfigArgs) -> Result<ExperimentConfig, RunError> {
    let overrides = parse_overrides(&args.overrides).map_err(RunError::Config)?;
    match &args.config {
        Some(path) => harness::load_config(path, &overrides),
        None => ExperimentConfig::from_text("", &overrides).map_err(RunError::Config),
    }
}

fn plot(args: &PlotArgs) -> Result<(), RunError> {
    if !args.label.is_empty() && args.label.len() != args.input.len() {
        return Err(RunError::Config(Error::Config(
            "give one --label per --input or none".into(),
        )));
    }
    let mut logs = Vec::with_capacity(args.input.len());
    for (i, path) in args.input.iter().enumerate() {
        let text = std::fs::read_to_string(path).map_err(|e| RunError::Data(Error::io(path, e)))?;
        let log = parse_run_csv(&text).map_err(|e| RunError::Data(e.into()))?;
        let label = args.label.get(i).cloned().unwrap_or_else(|| default_label(path));
        logs.push((label, log));
    }
    let series: Vec<_> = logs.iter().map(|(l, log)| (l.as_str(), log)).collect();
    std::fs::write(&args.output, curve_svg(&series))
        .map_err(|e| RunError::Runtime(Error::io(&args.output, e)))
}

fn default_label(path: &Path) -> String {
    path.parent()
        .and_then(Path::file_name)
        .or_else(|| path.file_stem())
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into())
}

fn execute(cli: Cli) -> Result<(), RunError> {
    match cli.command {
        Command::Partition(args) => {
            let cfg = load(&args)?;
            let path = harness::run_partition(&cfg)?;
            println!("wrote {}", path.display());
        }
        Command::Run(args) => {
            let cfg = load(&args)?;
            let summary = harness::run_experiment(&cfg)?;
            print!("{}", summary.line(cfg.federation.scheduler.name()));
        }
        Command::Sweep(args) => {
            let cfg = load(&args)?;
            let rows = harness::sweep(&cfg)?;
            let axis = cfg.sweep.axis.expect("sweep validated the axis");
            print!("{}", harness::sweep_csv(axis, &rows));
        }
        Command::Plot(args) => plot(&args)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strings(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn override_forms() {
        let o = parse_overrides(&strings(&["--rounds", "3", "--local-epochs=2", "--svg=false"])).unwrap();
        assert_eq!(
            o,
            vec![
                ("rounds".into(), "3".into()),
                ("local_epochs".into(), "2".into()),
                ("svg".into(), "false".into())
            ]
        );
        assert!(parse_overrides(&strings(&["rounds"])).is_err());
        assert!(parse_overrides(&strings(&["--rounds"])).is_err());
    }

    #[test]
    fn negative_values_pass_through() {
        let o = parse_overrides(&strings(&["--alpha", "-1"])).unwrap();
        assert_eq!(o, vec![("alpha".into(), "-1".into())]);
    }
}
