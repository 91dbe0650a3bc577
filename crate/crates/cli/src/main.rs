use std::path::PathBuf;
use std::process::ExitCode;

use bergman_cli::{lattice_params, list_families, run, write_lattice_csv, RunConfig, RunError};
use bergman_core::geometry::build_lattice;
use bergman_core::kernel::{compute_moments, export_kernel_heatmap};
use bergman_core::Complex64;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bergman", version, about = "Weighted Bergman kernel, Carleson and Toeplitz experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the tasks listed in a TOML config and write report.json.
    Run {
        config: PathBuf,
        /// Overrides `output_dir` from the config.
        #[arg(long, env = "BERGMAN_OUTPUT_DIR")]
        output_dir: Option<PathBuf>,
        /// Print the full report instead of a summary.
        #[arg(long)]
        json: bool,
    },
    /// Print the catalogue of weights, measures and tasks as JSON.
    List,
    /// Build the lattice for a config and write it as CSV.
    ExportLattice {
        config: PathBuf,
        #[arg(long, default_value = "lattice.csv")]
        out: PathBuf,
    },
    /// Write the moment table and a |κ(·, source)| heatmap as CSV.
    ExportKernel {
        config: PathBuf,
        /// Source point as `re,im`.
        #[arg(long, default_value = "0,0", value_parser = parse_point, allow_hyphen_values = true)]
        source: Complex64,
        #[arg(long, default_value_t = 64)]
        n_r: usize,
        #[arg(long, default_value_t = 128)]
        n_theta: usize,
        #[arg(long, default_value = "kernel")]
        prefix: PathBuf,
    },
}

fn parse_point(s: &str) -> Result<Complex64, String> {
    let (re, im) = s.split_once(',').ok_or("expected `re,im`")?;
    let re: f64 = re.trim().parse().map_err(|e| format!("{e}"))?;
    let im: f64 = im.trim().parse().map_err(|e| format!("{e}"))?;
    Ok(Complex64::new(re, im))
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn dispatch(cli: Cli) -> Result<u8, RunError> {
    match cli.command {
        Command::Run { config, output_dir, json } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(dir) = output_dir {
                cfg.output_dir = dir;
            }
            let report = run(&cfg)?;
            if json {
                println!("{}", report.to_json());
            } else {
                for r in &report.results {
                    println!("{:<14} artifacts: {}", r.task.name(), r.artifacts.len());
                }
                for a in &report.assertions {
                    let tag = if a.pass { "ok  " } else { "FAIL" };
                    let rel = serde_json::to_value(a.relation).unwrap_or_default();
                    println!(
                        "{tag} {:<14} {:<44} {:<40} {:.6e} {} {:.6e}",
                        a.task,
                        a.invariant,
                        a.subject,
                        a.measured,
                        rel.as_str().unwrap_or("?"),
                        a.bound
                    );
                }
                println!("report: {}", cfg.output_dir.join("report.json").display());
            }
            Ok(if report.passed { 0 } else { 1 })
        }
        Command::List => {
            println!("{}", serde_json::to_string_pretty(&list_families()).expect("catalog serialises"));
            Ok(0)
        }
        Command::ExportLattice { config, out } => {
            let cfg = RunConfig::load(&config)?;
            let w = cfg.weight.build()?;
            let lat = build_lattice(&w, &lattice_params(&cfg), cfg.seed).map_err(|source| RunError::Task {
                task: "lattice",
                source,
            })?;
            write_lattice_csv(&lat, &out)?;
            println!("{} points, multiplicity {} -> {}", lat.len(), lat.multiplicity, out.display());
            Ok(0)
        }
        Command::ExportKernel {
            config,
            source,
            n_r,
            n_theta,
            prefix,
        } => {
            let cfg = RunConfig::load(&config)?;
            let w = cfg.weight.build()?;
            let task = |source| RunError::Task {
                task: "kernel-verify",
                source,
            };
            let t = compute_moments(&w, &cfg.kernel).map_err(task)?;
            let moments = prefix.with_extension("moments.csv");
            let heat = prefix.with_extension("heatmap.csv");
            t.export_csv(&moments).map_err(task)?;
            export_kernel_heatmap(&t, source, n_r, n_theta, &heat).map_err(task)?;
            println!("{} and {}", moments.display(), heat.display());
            Ok(0)
        }
    }
}
