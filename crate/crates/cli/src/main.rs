use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use qmeta_cli::config::Config;
use qmeta_cli::error::{CliError, Result};
use qmeta_cli::runner;
use qmeta_cli::table::ResultTable;

#[derive(Parser)]
#[command(
    name = "qmeta",
    version,
    about = "Seeded batch experiments on a disordered qubit ensemble coupled to a lossy cavity"
)]
struct Cli {
    /// TOML experiment configuration (defaults apply when omitted)
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Master seed, overriding the config file
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,

    /// Output directory (created if missing)
    #[arg(long, global = true, value_name = "DIR", default_value = ".")]
    out: PathBuf,

    /// Worker threads for ensemble loops (0 = automatic; parallel builds only)
    #[arg(long, global = true, value_name = "K")]
    threads: Option<usize>,

    /// Output file format
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Bright-mode splitting vs ensemble size, with a power-law fit
    RabiScaling,
    /// Transmission spectra of individual disorder realizations
    Spectra,
    /// Disorder-averaged statistics over the (N, spread) grid, with scaling fits
    Meso,
    /// Rigid ensemble-center sweep over one frozen realization
    CenterSweep,
    /// Synthetic-device calibration round trip
    Calibrate,
    /// Re-run the scaling fit from a saved meso table
    Fit {
        /// Meso CSV to ingest
        input: PathBuf,
    },
}

fn write_table(table: &ResultTable, dir: &Path, stem: &str, format: Format) -> Result<PathBuf> {
    let path = dir.join(format!(
        "{stem}.{}",
        match format {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    ));
    match format {
        Format::Csv => table.write_csv(&path)?,
        Format::Json => table.write_json(&path)?,
    }
    println!("wrote {}", path.display());
    Ok(path)
}

fn print_meta(table: &ResultTable, keys: &[&str]) {
    for key in keys {
        if let Some(v) = table.meta(key) {
            println!("  {key} = {v}");
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    #[cfg(feature = "parallel")]
    if let Some(k) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .map_err(|e| CliError::Config(format!("--threads: {e}")))?;
    }
    #[cfg(not(feature = "parallel"))]
    if cli.threads.is_some() {
        eprintln!("note: built without the parallel feature; --threads is ignored");
    }

    let cfg = match &cli.config {
        Some(path) => Config::load(path, cli.seed)?,
        None => Config::defaults(cli.seed),
    };

    std::fs::create_dir_all(&cli.out).map_err(|e| CliError::io(&cli.out, e))?;
    let canon_path = cli.out.join("config.resolved.toml");
    std::fs::write(&canon_path, cfg.canonical_toml()).map_err(|e| CliError::io(&canon_path, e))?;

    match cli.command {
        Command::RabiScaling => {
            let table = runner::run_rabi_scaling(&cfg)?;
            write_table(&table, &cli.out, "rabi_scaling", cli.format)?;
            print_meta(
                &table,
                &["fit_exponent", "fit_amplitude", "jitter_fit_exponent", "notice"],
            );
        }
        Command::Spectra => {
            let tables = runner::run_realization_spectra(&cfg)?;
            for (stem, table) in &tables {
                write_table(table, &cli.out, stem, cli.format)?;
            }
        }
        Command::Meso => {
            let table = runner::run_meso_fluctuations(&cfg)?;
            write_table(&table, &cli.out, "meso", cli.format)?;
            print_meta(
                &table,
                &["fit_gamma", "fit_beta", "fit_delta", "collapse_r2"],
            );
        }
        Command::CenterSweep => {
            let table = runner::run_center_sweep(&cfg)?;
            write_table(&table, &cli.out, "center_sweep", cli.format)?;
        }
        Command::Calibrate => {
            let table = runner::run_calibrate(&cfg)?;
            write_table(&table, &cli.out, "calibrate", cli.format)?;
            print_meta(
                &table,
                &["residual_std", "n_dropped", "converged", "flux_roundtrip_max_error"],
            );
        }
        Command::Fit { input } => {
            let table = runner::run_fit(&input)?;
            write_table(&table, &cli.out, "fit", cli.format)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
