use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use invasion_fct::io::config::{ConfigDoc, OUTPUT_ROOT_VAR};
use invasion_fct::io::{run_experiment, Overrides, Preset, RunManifest};
use invasion_fct::stepper::{Scheme, TauPolicy};

#[derive(Parser)]
#[command(
    name = "invasion-fct",
    version,
    about = "FEM-FCT solver for a haptotaxis cancer invasion model"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a configuration file, a preset, or both.
    Run(RunArgs),
    /// Print the resolved configuration without running it.
    Show(RunArgs),
}

#[derive(clap::Args)]
struct RunArgs {
    /// TOML configuration file.
    config: Option<PathBuf>,
    /// fig1..fig16, table2 or table3.
    #[arg(long)]
    preset: Option<Preset>,
    #[arg(long, value_parser = parse_scheme)]
    scheme: Option<Scheme>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    refinements: Option<u32>,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    chi: Option<f64>,
    #[arg(long)]
    alpha_inv: Option<f64>,
    /// enforce, warn or off.
    #[arg(long, value_parser = parse_policy)]
    tau_policy: Option<TauPolicy>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated snapshot times.
    #[arg(long, value_delimiter = ',')]
    snapshot_times: Option<Vec<f64>>,
}

fn parse_enum<T: serde::de::DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

fn parse_scheme(s: &str) -> Result<Scheme, String> {
    parse_enum(s)
}

fn parse_policy(s: &str) -> Result<TauPolicy, String> {
    parse_enum(s)
}

impl RunArgs {
    fn manifest(&self) -> anyhow::Result<RunManifest> {
        let doc = match &self.config {
            Some(path) => ConfigDoc::read(path)?,
            None => ConfigDoc::default(),
        };
        let overrides = Overrides {
            preset: self.preset,
            scheme: self.scheme,
            tau: self.tau,
            refinements: self.refinements,
            theta: self.theta,
            mu: self.mu,
            chi: self.chi,
            alpha_inv: self.alpha_inv,
            tau_policy: self.tau_policy,
            output_dir: self.out.clone(),
            snapshot_times: self.snapshot_times.clone(),
        };
        let mut manifest = RunManifest::build(doc, &overrides)?;
        let root = std::env::var_os(OUTPUT_ROOT_VAR).map(PathBuf::from);
        manifest.relocate_output(root.as_deref());
        Ok(manifest)
    }
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::Show(args) => {
            println!("{}", serde_json::to_string_pretty(&args.manifest()?)?);
            Ok(true)
        }
        Command::Run(args) => {
            let manifest = args.manifest()?;
            let report = run_experiment(&manifest)
                .with_context(|| format!("writing to {}", manifest.output_dir.display()))?;
            for r in &report.runs {
                let name = if r.label.is_empty() { "run" } else { &r.label };
                match (&r.error, r.u, r.c, r.p) {
                    (Some(e), ..) => println!("{name}: FAILED at t = {}: {e}", r.time),
                    (None, Some(u), Some(c), Some(p)) => println!(
                        "{name}: t = {} in {} steps of {:.6}, mean u/c/p = {:.8}/{:.8}/{:.8}, \
                         probe u = {:.7}, last iterations {}",
                        r.time,
                        r.steps,
                        r.tau,
                        u.mean,
                        c.mean,
                        p.mean,
                        u.probe,
                        r.last_iterations.unwrap_or(0)
                    ),
                    _ => println!("{name}: completed"),
                }
            }
            println!("results in {}", report.output_dir.display());
            Ok(report.all_completed())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
