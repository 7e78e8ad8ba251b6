//! Command-line driver: resolves a profile preset plus optional config
//! file and flag overrides into a [`PipelineConfig`], then dispatches to
//! the library pipeline.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use attrisel::config::{DataSource, PipelineConfig, Profile};
use attrisel::data::{generate_dummy, write_csv, write_ground_truth};
use attrisel::pipeline::{run_pipeline, run_stages, run_validation, ExperimentReport, Stage};
use attrisel::report::emit_report;
use attrisel::seeding;
use attrisel::{Error, Result};

#[derive(Parser)]
#[command(
    name = "attrisel",
    version,
    about = "Attribution-driven feature selection for MLP regression"
)]
struct Cli {
    /// Flat key=value config file applied on top of the profile preset.
    #[arg(long, global = true, value_name = "path")]
    config: Option<PathBuf>,

    /// Master seed; overrides the config file.
    #[arg(long, global = true, value_name = "int")]
    seed: Option<u64>,

    /// Output directory; overrides the config file.
    #[arg(long, global = true, value_name = "dir")]
    out: Option<PathBuf>,

    /// Scale preset the config builds on.
    #[arg(long, global = true, default_value = "desk", value_name = "desk|full")]
    profile: String,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic dataset and its generating coefficients as CSV.
    Generate,
    /// Tune the network on all features, then stop.
    Tune,
    /// Tune, then compute global attribution scores, then stop.
    Attribute,
    /// Tune, attribute and run the cluster-elimination sweep, then stop.
    Select,
    /// Run the full experiment end to end and emit the report.
    Pipeline,
    /// Compare the best subset of a prior pipeline run against the
    /// configured selectors.
    Validate,
    /// Re-emit tables and figures from a saved report.json.
    Report,
}

fn resolve(cli: &Cli) -> Result<PipelineConfig> {
    let profile: Profile = cli.profile.parse()?;
    let mut cfg = PipelineConfig::preset(profile);
    if let Some(path) = &cli.config {
        cfg = cfg.apply_file(path)?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_report(cfg: &PipelineConfig) -> Result<ExperimentReport> {
    let path = cfg.out_dir.join("report.json");
    if !path.exists() {
        return Err(Error::Config(format!(
            "no report at {}; run `attrisel pipeline` first",
            path.display()
        )));
    }
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

fn print_rows(report: &ExperimentReport) {
    for (i, row) in report.rows.iter().enumerate() {
        let marker = if i == report.best_index { " *" } else { "" };
        println!(
            "  {:<12} {:>3} features  mean MSE {:.6}  sd {:.6}{marker}",
            row.label,
            row.subset.len(),
            row.cv.mean_mse,
            row.cv.sd_mse
        );
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = resolve(&cli)?;
    match cli.command {
        Command::Generate => {
            let spec = match &cfg.source {
                DataSource::Dummy(spec) => {
                    let mut spec = spec.clone();
                    spec.seed = seeding::derive(cfg.seed, &[seeding::STAGE_DATA]);
                    spec
                }
                DataSource::Csv { .. } => {
                    return Err(Error::Config(
                        "generate requires data.source = dummy".into(),
                    ))
                }
            };
            let (data, truth) = generate_dummy::<f64>(&spec)?;
            std::fs::create_dir_all(&cfg.out_dir)?;
            write_csv(&data, &cfg.out_dir.join("data.csv"), "target")?;
            write_ground_truth(&truth, &cfg.out_dir.join("ground_truth.csv"))?;
            println!(
                "wrote {} rows x {} features to {}",
                data.n_rows(),
                data.n_cols(),
                cfg.out_dir.join("data.csv").display()
            );
        }
        Command::Tune => {
            run_stages(&cfg, Stage::Tune)?;
            println!(
                "tuning artifacts written to {}",
                cfg.out_dir.join("artifacts").display()
            );
        }
        Command::Attribute => {
            run_stages(&cfg, Stage::Attribute)?;
            println!(
                "attribution artifacts written to {}",
                cfg.out_dir.join("artifacts").display()
            );
        }
        Command::Select => {
            run_stages(&cfg, Stage::Select)?;
            println!(
                "subset artifacts written to {}",
                cfg.out_dir.join("artifacts").display()
            );
        }
        Command::Pipeline => {
            let (report, manifest) = run_pipeline(&cfg)?;
            println!("pipeline finished; subsets evaluated:");
            print_rows(&report);
            println!(
                "{} artifacts in {} (see manifest.csv)",
                manifest.entries.len(),
                cfg.out_dir.display()
            );
        }
        Command::Validate => {
            let prior = load_report(&cfg)?;
            let best = prior.best().subset.clone();
            println!(
                "validating against best subset '{}' ({} features)",
                prior.best().label,
                best.len()
            );
            let (report, _) = run_validation(&cfg, &best)?;
            print_rows(&report);
            println!(
                "validation artifacts in {}",
                cfg.out_dir.join("validation").display()
            );
        }
        Command::Report => {
            let report = load_report(&cfg)?;
            let manifest = emit_report(&report, &cfg.out_dir)?;
            println!(
                "re-emitted {} artifacts in {}",
                manifest.entries.len(),
                cfg.out_dir.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(cause) = source {
                eprintln!("  caused by: {cause}");
                source = cause.source();
            }
            ExitCode::FAILURE
        }
    }
}
