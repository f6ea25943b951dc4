//! The `gabor` command line.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use gabor_fields::field::gff;
use gabor_fields::fit::{self, FitConfig, FitError, VoxelGrid};
use gabor_fields::procedural::GenerationSpec;
use gabor_fields::render::bench::{bench, bench_csv};
use gabor_fields::render::{render, Image, Mode, RenderConfig, RenderError};
use gabor_fields::sampling::StrategyConfig;
use gabor_fields::Field;

use crate::views;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

fn data(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "gabor", version, about = "Fit, render and author Gabor fields")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a VGRID density grid.
    Fit {
        grid: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// TOML fit configuration.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Start from the small desk-scale preset instead of the full schedule.
        #[arg(long)]
        desk: bool,
        /// Write the optimization trace as CSV.
        #[arg(long)]
        progress: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Render a field to PNG or PFM.
    Render {
        field: PathBuf,
        #[arg(long)]
        mode: Option<String>,
        /// TOML render configuration.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long)]
        width: Option<usize>,
        #[arg(long)]
        height: Option<usize>,
        #[arg(long)]
        spp: Option<usize>,
    },
    /// Drop every primitive above a frequency.
    Lod {
        field: PathBuf,
        #[arg(long)]
        max_freq: f64,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Power spectrum as a radial CSV profile or a PNG slice.
    Spectrum {
        field: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long, default_value_t = 32)]
        n: usize,
        /// Slice normal for PNG output: x, y or z.
        #[arg(long, default_value = "z")]
        axis: String,
    },
    /// Generate a procedural cloud from a TOML spec.
    Cloud {
        spec: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Quality-versus-time sweep over sampling strategies.
    Bench {
        field: PathBuf,
        /// Comma-separated `laplacian[:beta][+orientation[:delta]]` entries.
        #[arg(long)]
        strategies: String,
        #[arg(long, default_value_t = 128)]
        max_spp: usize,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Summarize a field.
    Info { field: PathBuf },
    /// Run the HTTP authoring service.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
        /// Persist session edit logs here.
        #[arg(long)]
        sessions: Option<PathBuf>,
    },
}

pub fn parse_axis(s: &str) -> Option<usize> {
    match s {
        "x" => Some(0),
        "y" => Some(1),
        "z" => Some(2),
        _ => None,
    }
}

fn read_field(path: &Path) -> Result<Field, CliError> {
    gff::read_file(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn write_field(path: &Path, f: &Field) -> Result<(), CliError> {
    gff::write_file(path, f).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn render_error(e: RenderError) -> CliError {
    match e {
        RenderError::Config(_) | RenderError::Strategy(_) => CliError::Usage(e.to_string()),
        other => CliError::Data(other.to_string()),
    }
}

fn save_image(img: &Image, path: &Path, exposure: f64) -> Result<(), CliError> {
    if !img.is_finite() {
        return Err(CliError::Numerical("rendered image has non-finite pixels".into()));
    }
    if path.extension().is_some_and(|e| e == "pfm") {
        let f = fs::File::create(path).map_err(data)?;
        img.write_pfm(std::io::BufWriter::new(f)).map_err(data)
    } else {
        img.save(path, exposure).map_err(data)
    }
}

/// Runs one command; `out` receives anything meant for stdout.
pub fn run(cli: Cli, out: &mut dyn std::io::Write) -> Result<(), CliError> {
    match cli.command {
        Command::Fit { grid, output, config, desk, progress, seed } => {
            let mut cfg = match &config {
                Some(p) => FitConfig::from_toml(&read_text(p)?).map_err(|e| CliError::Usage(e.to_string()))?,
                None if desk => FitConfig::desk(),
                None => FitConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let g = VoxelGrid::load(&grid).map_err(|e| CliError::Data(format!("{}: {e}", grid.display())))?;
            let mut sink = match &progress {
                Some(p) => Some(fit::CsvSink::new(fs::File::create(p).map_err(data)?).map_err(data)?),
                None => None,
            };
            let mut push = |r: &fit::ProgressRow| {
                if let Some(s) = sink.as_mut() {
                    let _ = s.push(r);
                }
            };
            let res = fit::fit(&g, &cfg, &mut push).map_err(|e| match e {
                FitError::Diverged { .. } | FitError::Gradient(_) => CliError::Numerical(e.to_string()),
                FitError::Config(_) => CliError::Usage(e.to_string()),
                other => CliError::Data(other.to_string()),
            })?;
            write_field(&output, &res.field)?;
            writeln!(out, "primitives {} init_psnr {:.2} final_psnr {:.2}", res.field.len(), res.init_psnr, res.final_psnr)
                .map_err(data)?;
        }
        Command::Render { field, mode, config, output, width, height, spp } => {
            let f = read_field(&field)?;
            let mut cfg = match &config {
                Some(p) => {
                    let text = read_text(p)?;
                    toml::from_str::<RenderConfig>(&text).map_err(|e| CliError::Usage(e.to_string()))?
                }
                None => RenderConfig::default(),
            };
            if let Some(m) = mode {
                cfg.mode = Mode::parse(&m).ok_or_else(|| CliError::Usage(format!("unknown mode {m}")))?;
            }
            cfg.width = width.unwrap_or(cfg.width);
            cfg.height = height.unwrap_or(cfg.height);
            cfg.spp = spp.unwrap_or(cfg.spp);
            cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
            let res = render(&f, &cfg).map_err(render_error)?;
            save_image(&res.image, &output, cfg.exposure)?;
            write!(out, "{}", res.stats_csv()).map_err(data)?;
        }
        Command::Lod { field, max_freq, output } => {
            if !(max_freq >= 0.0) {
                return Err(CliError::Usage(format!("max-freq must be nonnegative, got {max_freq}")));
            }
            let f = read_field(&field)?;
            let p = f.pruned(max_freq);
            write_field(&output, &p)?;
            writeln!(out, "kept {} of {} primitives", p.len(), f.len()).map_err(data)?;
        }
        Command::Spectrum { field, output, n, axis } => {
            if !(8..=256).contains(&n) {
                return Err(CliError::Usage(format!("n must lie in 8..=256, got {n}")));
            }
            let f = read_field(&field)?;
            if output.extension().is_some_and(|e| e == "png") {
                let a = parse_axis(&axis).ok_or_else(|| CliError::Usage(format!("unknown axis {axis}")))?;
                views::spectrum_slice(&f, n, a).save(&output, 0.0).map_err(data)?;
            } else {
                fs::write(&output, views::spectrum_csv(&f, n)).map_err(data)?;
            }
        }
        Command::Cloud { spec, output } => {
            let s = GenerationSpec::from_toml(&read_text(&spec)?).map_err(|e| CliError::Usage(e.to_string()))?;
            let f = s.build().map_err(|e| CliError::Usage(e.to_string()))?;
            write_field(&output, &f)?;
            writeln!(out, "primitives {}", f.len()).map_err(data)?;
        }
        Command::Bench { field, strategies, max_spp, config, output } => {
            let f = read_field(&field)?;
            let list: Vec<StrategyConfig> = strategies
                .split(',')
                .map(|s| StrategyConfig::parse(s).ok_or_else(|| CliError::Usage(format!("unknown strategy {s}"))))
                .collect::<Result<_, _>>()?;
            let cfg = match &config {
                Some(p) => toml::from_str::<RenderConfig>(&read_text(p)?).map_err(|e| CliError::Usage(e.to_string()))?,
                None => RenderConfig::default(),
            };
            let rows = bench(&f, &cfg, &list, max_spp).map_err(render_error)?;
            let csv = bench_csv(&rows);
            match output {
                Some(p) => fs::write(p, csv).map_err(data)?,
                None => write!(out, "{csv}").map_err(data)?,
            }
        }
        Command::Info { field } => {
            let f = read_field(&field)?;
            write!(out, "{}", views::info(&f)).map_err(data)?;
        }
        Command::Serve { addr, sessions } => {
            let rt = tokio::runtime::Runtime::new().map_err(data)?;
            rt.block_on(async {
                let state = crate::service::AppState::open(sessions).map_err(data)?;
                let listener = tokio::net::TcpListener::bind(&addr).await.map_err(|e| CliError::Usage(format!("{addr}: {e}")))?;
                writeln!(out, "listening on {}", listener.local_addr().map_err(data)?).map_err(data)?;
                axum::serve(listener, crate::service::router(state))
                    .with_graceful_shutdown(async {
                        let _ = tokio::signal::ctrl_c().await;
                    })
                    .await
                    .map_err(data)
            })?;
        }
    }
    Ok(())
}

/// Parses `args` and runs, returning the process exit code.
pub fn main_with<I, T>(args: I, out: &mut dyn std::io::Write, err: &mut dyn std::io::Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = write!(err, "{e}");
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match run(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
