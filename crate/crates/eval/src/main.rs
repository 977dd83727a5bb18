use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use slicereg_core::eval::phantom::PhantomSpec;
use slicereg_core::eval::write_report;
use slicereg_eval::parse_list;

#[derive(Debug, Parser)]
#[command(version, about = "Evaluation tools for slice registration results")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Dice and HD95 of predicted vs reference 2D labels, matched by relative path.
    EvalLabels {
        #[arg(long)]
        pred_dir: PathBuf,
        #[arg(long)]
        gt_dir: PathBuf,
        /// In-plane spacing "col,row" in mm; defaults to each reference file's.
        #[arg(long, value_parser = parse_list::<2>)]
        spacing: Option<[f64; 2]>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Box-plot statistics of inverted transform parameters.
    Misalignment {
        #[arg(required = true)]
        csvs: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Median T1 under two labels per slice, with Bland-Altman limits.
    T1Consistency {
        /// CSV with columns id,slice,label_a,label_b.
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Adds seeded Gaussian noise to a transform CSV.
    InjectNoise {
        #[arg(long)]
        input: PathBuf,
        /// Standard deviations "tx,ty,tz,rx,ry,rz" (mm, degrees).
        #[arg(long, value_parser = parse_list::<6>)]
        std: [f64; 6],
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Writes a synthetic dataset with known slice misalignment.
    MakePhantom {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        cases: usize,
        #[arg(long, default_value_t = 3)]
        slices: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Misalignment standard deviations "tx,ty,tz,rx,ry,rz" (mm, degrees).
        #[arg(long, value_parser = parse_list::<6>, default_value = "0,0,0,0,0,0")]
        misalign_std: [f64; 6],
        #[arg(long, default_value_t = 40)]
        volume_size: usize,
        #[arg(long, default_value_t = 2.0)]
        voxel_mm: f64,
        #[arg(long, default_value_t = 48)]
        slice_size: usize,
        #[arg(long, default_value_t = 1.5)]
        pixel_mm: f64,
    },
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(path) => write_report(path, bytes)?,
        None => std::io::stdout().write_all(bytes)?,
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::EvalLabels { pred_dir, gt_dir, spacing, out } => {
            let (report, csv) = slicereg_eval::eval_labels(&pred_dir, &gt_dir, spacing.map(|s| (s[0], s[1])))?;
            emit(out.as_deref(), &csv)?;
            if report.single_pair {
                eprintln!("note: N=1, confidence intervals are undefined");
            }
        }
        Command::Misalignment { csvs, out } => {
            emit(out.as_deref(), &slicereg_eval::misalignment(&csvs)?)?;
        }
        Command::T1Consistency { pairs, out } => {
            let (_, csv) = slicereg_eval::t1(&pairs)?;
            emit(out.as_deref(), &csv)?;
        }
        Command::InjectNoise { input, std, seed, out } => {
            emit(out.as_deref(), &slicereg_eval::noise(&input, std, seed)?)?;
        }
        Command::MakePhantom {
            out,
            cases,
            slices,
            seed,
            misalign_std,
            volume_size,
            voxel_mm,
            slice_size,
            pixel_mm,
        } => {
            let spec = PhantomSpec {
                n_cases: cases,
                volume_size: [volume_size; 3],
                voxel_mm,
                slices_per_case: slices,
                slice_size: (slice_size, slice_size),
                pixel_mm,
                seed,
                ..PhantomSpec::default()
            };
            let ds = slicereg_eval::phantom(&spec, misalign_std, &out)?;
            println!("{}", ds.config_path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
