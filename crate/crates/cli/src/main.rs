//! `faz3d`: batch measurement of the foveal avascular zone from OCTA scan
//! containers, plus phantom generation, summaries and benchmarking.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use faz3d_cli::{
    format_summary, report_timing, run_batch, RunManifest, TimingMode,
};
use faz3d_core::volume_io::read_measurements;
use faz3d_core::{generate_phantom, measure, save_scan, PhantomSpec, PipelineConfig};

#[derive(Parser)]
#[command(
    name = "faz3d",
    version,
    about = "3D reconstruction of the retinal capillary network and 2D/3D avascular-zone measurement"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TimingArg {
    /// Record wall-clock timings in CSV rows and timing files.
    Wall,
    /// Zero all timing output so identical runs are byte-identical.
    None,
}

#[derive(Subcommand)]
enum Cmd {
    /// Measure every scan listed in a manifest CSV.
    Measure {
        /// Manifest CSV: header scan_path,scan_id,group_label.
        #[arg(long)]
        manifest: PathBuf,
        /// Pipeline config TOML; built-in defaults when absent.
        #[arg(long, env = "FAZ3D_CONFIG")]
        config: Option<PathBuf>,
        /// Output directory for measurements.csv and per-scan files.
        #[arg(long)]
        out: PathBuf,
        /// Write per-scan masks, skeleton point lists and timing files.
        #[arg(long)]
        dump_stages: bool,
        /// Write per-plexus overlay PNGs.
        #[arg(long)]
        overlays: bool,
        /// Worker threads for the scan pool; 0 = one per CPU.
        #[arg(long, default_value_t = 0)]
        threads: usize,
        #[arg(long, value_enum, default_value_t = TimingArg::Wall)]
        timing_mode: TimingArg,
    },
    /// Generate a synthetic phantom scan container.
    Phantom {
        /// Phantom spec TOML.
        #[arg(long)]
        spec: PathBuf,
        /// Overrides the seed in the spec file.
        #[arg(long)]
        seed: Option<u64>,
        /// Directory the scan container is written to.
        #[arg(long)]
        out: PathBuf,
    },
    /// Print per-group descriptive statistics for a measurements CSV.
    Summarize {
        #[arg(long)]
        csv: PathBuf,
    },
    /// Time repeated measurements of one phantom.
    Bench {
        /// Phantom spec TOML.
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, default_value_t = 3)]
        repeat: usize,
        #[arg(long, env = "FAZ3D_CONFIG")]
        config: Option<PathBuf>,
    },
}

fn load_config(path: &Option<PathBuf>) -> faz3d_core::Result<PipelineConfig> {
    match path {
        Some(p) => PipelineConfig::from_path(p),
        None => Ok(PipelineConfig::default()),
    }
}

fn run(cli: Cli) -> faz3d_core::Result<ExitCode> {
    match cli.cmd {
        Cmd::Measure {
            manifest,
            config,
            out,
            dump_stages,
            overlays,
            threads,
            timing_mode,
        } => {
            let cfg = load_config(&config)?;
            let entries = RunManifest::entries_from_path(&manifest)?;
            let mut run_manifest = RunManifest::new(entries, out)?;
            run_manifest.config_path = config;
            run_manifest.dump_stages = dump_stages;
            run_manifest.overlays = overlays;
            run_manifest.threads = threads;
            run_manifest.timing = match timing_mode {
                TimingArg::Wall => TimingMode::Wall,
                TimingArg::None => TimingMode::None,
            };
            let result = run_batch(&run_manifest, &cfg)?;
            println!(
                "measured {} of {} scans -> {}",
                result.measurements.len(),
                run_manifest.entries.len(),
                run_manifest.out_dir.join("measurements.csv").display()
            );
            for f in &result.failures {
                eprintln!("FAILED {}: {}", f.scan_id, f.message);
            }
            if run_manifest.timing == TimingMode::Wall {
                print!(
                    "{}",
                    report_timing(&result.measurements, &result.stage_reports)
                );
            }
            Ok(if result.failures.is_empty() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            })
        }
        Cmd::Phantom { spec, seed, out } => {
            let mut spec = PhantomSpec::from_path(&spec)?;
            if let Some(seed) = seed {
                spec.seed = seed;
            }
            let (scan, truth) = generate_phantom(&spec)?;
            save_scan(&out, &scan)?;
            println!("phantom written to {}", out.display());
            for (i, area) in truth.faz_area_mm2.iter().enumerate() {
                if let Some(a) = area {
                    println!("true 2d area, plexus {i}: {a:.6} mm^2");
                }
            }
            if let Some(v) = truth.faz_volume_mm3 {
                println!("true 3d volume: {v:.6} mm^3");
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Summarize { csv } => {
            let text = std::fs::read_to_string(&csv)?;
            let rows = read_measurements(&text)?;
            let summaries = faz3d_cli::summarize_groups(&rows)?;
            print!("{}", format_summary(&summaries));
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Bench {
            spec,
            repeat,
            config,
        } => {
            let cfg = load_config(&config)?;
            let spec = PhantomSpec::from_path(&spec)?;
            let (scan, _) = generate_phantom(&spec)?;
            let mut rows = Vec::new();
            let mut reports = Vec::new();
            for i in 0..repeat {
                let out = measure(&scan, &format!("bench-{i}"), None, &cfg)?;
                reports.push((out.measurement.scan_id.clone(), out.stage_seconds));
                rows.push(out.measurement);
            }
            print!("{}", report_timing(&rows, &reports));
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
