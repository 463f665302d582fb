use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hardening_core::cli::{self, BenchmarkOptions};
use hardening_core::curve_metric::QuadratureSpec;
use hardening_core::{Error, InverseModelKind, MaterialParams};

#[derive(Parser)]
#[command(name = "hardening", version, about = "Inverse models for the exponential hardening law")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate space-filling train and test datasets.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory for train.json, test.json and data_manifest.json.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Train every (model kind, seed) pair and write the report and table.
    Benchmark {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
        /// Output directory for report.json, table.csv and benchmark_manifest.json.
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated subset of bad,good,ugly.
        #[arg(long)]
        kinds: Option<String>,
        /// Number of seeds (overrides benchmark.seeds).
        #[arg(long)]
        seeds: Option<usize>,
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long)]
        force: bool,
        /// Re-render table.csv from an existing report without training.
        #[arg(long)]
        render_only: bool,
        /// Also save every trained model into this directory.
        #[arg(long)]
        models_dir: Option<PathBuf>,
    },
    /// Predict material parameters for one stress curve.
    Predict {
        #[arg(long)]
        model: PathBuf,
        /// File with the stresses (JSON array or whitespace/comma separated).
        #[arg(long, conflicts_with = "values", required_unless_present = "values")]
        curve: Option<PathBuf>,
        /// Inline comma-separated stresses.
        #[arg(long, allow_hyphen_values = true)]
        values: Option<String>,
        /// Require the model file to be of this kind.
        #[arg(long)]
        kind: Option<String>,
        /// Known parameters gamma1,gamma2,beta1,beta2; reports the curve distance.
        #[arg(long, allow_hyphen_values = true)]
        reference: Option<String>,
        #[arg(long, default_value_t = 2000)]
        resolution: usize,
    },
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::GenData { config, out, force } => {
            let o = cli::cmd_gen_data(config.as_deref(), &out, force)?;
            println!("wrote {} ({} records)", o.train.display(), o.n_train);
            println!("wrote {} ({} records)", o.test.display(), o.n_test);
            println!("wrote {}", o.manifest.display());
        }
        Command::Benchmark {
            config,
            train,
            test,
            out,
            kinds,
            seeds,
            jobs,
            force,
            render_only,
            models_dir,
        } => {
            let data_dir = || out.clone();
            let opts = BenchmarkOptions {
                config,
                train: train.unwrap_or_else(|| data_dir().join(cli::TRAIN_FILE)),
                test: test.unwrap_or_else(|| data_dir().join(cli::TEST_FILE)),
                out_dir: out.clone(),
                kinds: kinds.as_deref().map(cli::parse_kinds).transpose()?,
                seeds,
                jobs,
                force,
                render_only,
                models_dir,
            };
            let report = cli::cmd_benchmark(&opts)?;
            print!("{}", report.render_table());
            println!("wrote {}", out.join(cli::TABLE_FILE).display());
        }
        Command::Predict {
            model,
            curve,
            values,
            kind,
            reference,
            resolution,
        } => {
            let text = match (&curve, &values) {
                (Some(p), _) => std::fs::read_to_string(p).map_err(|e| Error::Io {
                    path: p.clone(),
                    source: e,
                })?,
                (None, Some(v)) => v.clone(),
                (None, None) => unreachable!("clap enforces one input"),
            };
            let values = cli::parse_values(&text)?;
            let kind = kind.as_deref().map(str::parse::<InverseModelKind>).transpose()?;
            let reference = match reference.as_deref().map(cli::parse_values).transpose()? {
                Some(v) if v.len() == 4 => Some(MaterialParams::new(v[0], v[1], v[2], v[3])),
                Some(v) => {
                    return Err(Error::InvalidArgument(format!(
                        "--reference needs 4 values, got {}",
                        v.len()
                    )))
                }
                None => None,
            };
            let quad = QuadratureSpec::new(resolution)?;
            print!("{}", cli::cmd_predict(&model, &values, kind, reference, &quad)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let parsed = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(parsed) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(cli::exit_code(&e) as u8)
        }
    }
}
