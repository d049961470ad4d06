use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use strikedip::cloud_io::{read_ground_truth, write_ground_truth, write_ply};
use strikedip::quality::score;
use strikedip::synth::{generate_synthetic, reference_scene, SceneShape, SyntheticScene};
use strikedip::{run_pipeline, run_sweep, Error, Result, RunConfig, RunReport, SweepFactor};

#[derive(Parser)]
#[command(
    name = "strikedip",
    version,
    about = "Strike and dip of planar surfaces in point clouds"
)]
struct Cli {
    /// Worker threads for the data-parallel stages (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline on one point cloud.
    Run(RunArgs),
    /// Vary one parameter over a range and record timings and scores.
    Sweep(SweepArgs),
    /// Generate a synthetic scene with its ground truth.
    Synth(SynthArgs),
    /// Score a saved report against ground truth.
    Score(ScoreArgs),
}

#[derive(Args)]
struct PipelineArgs {
    /// Input point cloud (PLY).
    #[arg(long)]
    input: PathBuf,
    /// Ground-truth surfaces (CSV).
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Voxel edge as a fraction of the longest cloud extent.
    #[arg(long)]
    zeta: Option<f64>,
    /// Normal angle threshold for region growing, in degrees.
    #[arg(long)]
    theta: Option<f64>,
    /// Seed promotion offset threshold.
    #[arg(long)]
    psi: Option<f64>,
    /// Neighbours examined per seed.
    #[arg(long)]
    k: Option<usize>,
    /// Mahalanobis outlier threshold.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    min_points: Option<usize>,
    #[arg(long)]
    min_region_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Read --psi as a multiple of the voxel edge length.
    #[arg(long)]
    psi_relative: bool,
    /// Aggregate region normals without point-count weights.
    #[arg(long)]
    unweighted_normals: bool,
    /// Write PLY exports as binary little-endian.
    #[arg(long)]
    binary_ply: bool,
}

impl PipelineArgs {
    fn config(&self) -> RunConfig {
        let d = RunConfig::default();
        RunConfig {
            input: Some(self.input.clone()),
            truth: self.truth.clone(),
            zeta: self.zeta.unwrap_or(d.zeta),
            theta_deg: self.theta.unwrap_or(d.theta_deg),
            psi: self.psi.unwrap_or(d.psi),
            k: self.k.unwrap_or(d.k),
            sigma: self.sigma.unwrap_or(d.sigma),
            min_points: self.min_points.unwrap_or(d.min_points),
            min_region_size: self.min_region_size.unwrap_or(d.min_region_size),
            psi_relative: self.psi_relative,
            unweighted_normals: self.unweighted_normals,
            seed: self.seed.unwrap_or(d.seed),
            out_dir: self.out_dir.clone(),
            binary_ply: self.binary_ply,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Print the JSON report instead of the text summary.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[arg(long, value_parser = parse_factor)]
    factor: SweepFactor,
    /// Defaults to the factor's standard range.
    #[arg(long)]
    start: Option<f64>,
    #[arg(long)]
    end: Option<f64>,
    #[arg(long)]
    step: Option<f64>,
    /// Runs per value; the fastest is reported.
    #[arg(long, default_value_t = 1)]
    repeats: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// Five walls and a dipping roof on a 20 m block.
    Reference,
    /// Closed box, tilted and turned.
    Box,
}

#[derive(Args)]
struct SynthArgs {
    /// Scene description as JSON; overrides --preset.
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Preset::Reference)]
    preset: Preset,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    points_per_face: Option<usize>,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    binary_ply: bool,
}

#[derive(Args)]
struct ScoreArgs {
    /// Report written by `run`.
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    truth: PathBuf,
}

fn parse_factor(s: &str) -> std::result::Result<SweepFactor, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads(cli.threads) {
        eprintln!("error: {e}");
        return ExitCode::from(e.exit_code() as u8);
    }
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::Sweep(args) => sweep(args),
        Command::Synth(args) => synth(args),
        Command::Score(args) => score_report(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

#[cfg(feature = "parallel")]
fn configure_threads(threads: Option<usize>) -> Result<()> {
    match threads {
        Some(0) => Err(Error::invalid("--threads must be >= 1")),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::invalid(e.to_string())),
        None => Ok(()),
    }
}

#[cfg(not(feature = "parallel"))]
fn configure_threads(threads: Option<usize>) -> Result<()> {
    match threads {
        Some(0) => Err(Error::invalid("--threads must be >= 1")),
        Some(n) if n > 1 => {
            eprintln!("warning: built without the parallel feature, --threads {n} ignored");
            Ok(())
        }
        _ => Ok(()),
    }
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn run(args: RunArgs) -> Result<()> {
    let report = run_pipeline(&args.pipeline.config())?;
    if args.json {
        println!("{}", report.to_json()?);
    } else {
        print!("{}", report.summary_text());
    }
    Ok(())
}

fn sweep(args: SweepArgs) -> Result<()> {
    let (start, end, step) = args.factor.default_range();
    let mut base = args.pipeline.config();
    let out_dir = base.out_dir.take();
    let rows = run_sweep(
        &base,
        args.factor,
        args.start.unwrap_or(start),
        args.end.unwrap_or(end),
        args.step.unwrap_or(step),
        args.repeats,
    )?;
    let csv = strikedip::pipeline::sweep_csv(&rows)?;
    match out_dir {
        Some(dir) => {
            create_dir(&dir)?;
            let path = dir.join(format!("sweep_{}.csv", args.factor.name()));
            write_file(&path, csv.as_bytes())?;
            let failed = rows.iter().filter(|r| r.status != "ok").count();
            println!(
                "{} rows ({failed} failed) written to {}",
                rows.len(),
                path.display()
            );
        }
        None => print!("{csv}"),
    }
    Ok(())
}

fn synth(args: SynthArgs) -> Result<()> {
    let mut scene: SyntheticScene = match &args.scene {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&text)
                .map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?
        }
        None => match args.preset {
            Preset::Reference => reference_scene(args.seed),
            Preset::Box => SyntheticScene {
                shape: SceneShape::Box {
                    size: [4.0, 3.0, 2.0],
                    open_top: false,
                    tilt_deg: 12.0,
                    yaw_deg: 30.0,
                },
                points_per_face: 5_000,
                noise_rel: 0.002,
                outlier_fraction: 0.01,
                outlier_inflation: 3.0,
                seed: args.seed,
            },
        },
    };
    if let Some(n) = args.points_per_face {
        scene.points_per_face = n;
    }
    let out = generate_synthetic(&scene)?;
    create_dir(&args.out_dir)?;
    let cloud_path = args.out_dir.join("cloud.ply");
    let truth_path = args.out_dir.join("truth.csv");
    write_ply(&out.cloud, &cloud_path, args.binary_ply)?;
    write_ground_truth(&out.truth, &truth_path)?;
    let scene_json =
        serde_json::to_string_pretty(&scene).map_err(|e| Error::Serialization(e.to_string()))?;
    write_file(&args.out_dir.join("scene.json"), scene_json.as_bytes())?;
    println!(
        "{} points ({} outliers), {} surfaces -> {}",
        out.cloud.len(),
        out.outlier_count(),
        out.truth.len(),
        args.out_dir.display()
    );
    Ok(())
}

fn score_report(args: ScoreArgs) -> Result<()> {
    let text = fs::read_to_string(&args.report).map_err(|e| Error::io(&args.report, e))?;
    let report = RunReport::from_json(&text)?;
    let truth = read_ground_truth(&args.truth)?;
    let breakdown = score(&report.measured_regions(), &truth)?;
    let json = serde_json::to_string_pretty(&breakdown)
        .map_err(|e| Error::Serialization(e.to_string()))?;
    println!("{json}");
    Ok(())
}
