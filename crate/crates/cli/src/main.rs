use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use ccotdr_cli::pipeline::{self, Summary};
use ccotdr_cli::scenario::Scenario;
use ccotdr_cli::trace::{read_csv, read_trace, write_csv, write_trace};
use ccotdr_core::{Error, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "ccotdr", version, about = "Coherent correlation OTDR simulator and analyzer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario file.
    #[arg(long)]
    config: PathBuf,
    /// Override a scenario key, e.g. `--set campaign.duration=0.5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory (overrides `output.dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Random seed (overrides `seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; defaults to the available cores.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate raw shots into `<out>/shots.ccot`.
    Simulate(Common),
    /// Compress a shot file into `<out>/profiles.ccot`.
    Compress {
        #[command(flatten)]
        common: Common,
        /// Shot file; defaults to `<out>/shots.ccot`.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Analyze a profile file and write the reports.
    Analyze {
        #[command(flatten)]
        common: Common,
        /// Profile file; defaults to `<out>/profiles.ccot`.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Simulate, compress and analyze in one streaming pass.
    Run(Common),
    /// Convert a trace file between the binary and CSV forms.
    Convert {
        input: PathBuf,
        #[arg(long, value_enum)]
        format: Format,
        /// Output file; defaults to the input with the new extension.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Ccot,
}

fn load(common: &Common) -> Result<(Scenario, PathBuf)> {
    let mut overrides = common.set.clone();
    if let Some(seed) = common.seed {
        overrides.push(format!("seed={seed}"));
    }
    if let Some(out) = &common.out {
        overrides.push(format!("output.dir={}", out.display()));
    }
    let scn = Scenario::load(&common.config, &overrides)?;
    let dir = scn.output_dir.clone();
    Ok((scn, dir))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn print_summary(s: &Summary) {
    for (k, v) in s.entries() {
        println!("{k} = {v}");
    }
}

fn convert(input: &Path, format: Format, output: Option<PathBuf>) -> Result<PathBuf> {
    let ext = match format {
        Format::Csv => "csv",
        Format::Ccot => "ccot",
    };
    let output = output.unwrap_or_else(|| input.with_extension(ext));
    match format {
        Format::Csv => {
            let records = read_trace(input)?;
            let file = std::fs::File::create(&output).map_err(|e| Error::io(&output, e))?;
            let mut w = BufWriter::new(file);
            write_csv(&mut w, &records)
                .and_then(|_| w.flush())
                .map_err(|e| Error::io(&output, e))?;
        }
        Format::Ccot => {
            let file = std::fs::File::open(input).map_err(|e| Error::io(input, e))?;
            let records = read_csv(BufReader::new(file))?;
            write_trace(&output, &records)?;
        }
    }
    Ok(output)
}

fn execute(cli: Cli) -> Result<()> {
    let started = Instant::now();
    match cli.command {
        Command::Simulate(c) => {
            let (scn, dir) = load(&c)?;
            scn.validate()?;
            create_dir(&dir)?;
            let path = dir.join("shots.ccot");
            let n = pipeline::simulate(&scn, &path, c.workers)?;
            println!("wrote {n} shots to {}", path.display());
        }
        Command::Compress { common, input } => {
            let (scn, dir) = load(&common)?;
            scn.validate()?;
            create_dir(&dir)?;
            let input = input.unwrap_or_else(|| dir.join("shots.ccot"));
            let path = dir.join("profiles.ccot");
            let n = pipeline::compress(&scn, &input, &path, common.workers)?;
            println!("wrote {n} profiles to {}", path.display());
        }
        Command::Analyze { common, input } => {
            let (scn, dir) = load(&common)?;
            let input = input.unwrap_or_else(|| dir.join("profiles.ccot"));
            print_summary(&pipeline::analyze(&scn, &input, &dir, common.workers)?);
        }
        Command::Run(c) => {
            let (scn, dir) = load(&c)?;
            print_summary(&pipeline::run(&scn, &dir, c.workers)?);
        }
        Command::Convert {
            input,
            format,
            output,
        } => {
            let out = convert(&input, format, output)?;
            println!("wrote {}", out.display());
        }
    }
    eprintln!("elapsed {:.2} s", started.elapsed().as_secs_f64());
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } => 2,
        Error::Physics { .. } | Error::Overlap(_) => 3,
        Error::Io { .. } | Error::Format { .. } => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
