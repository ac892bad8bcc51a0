//! Command-line front end for the reconstruction pipeline.
//!
//! Four subcommands cover the full workflow: `train-classifier` bootstraps
//! the object classifier from a scene's primitives, `run` executes one
//! mission in the configured mode, `compare` runs benchmark and semantic
//! modes back to back over identical inputs, and `render-scene` dumps one
//! pose's sonar image pair for inspection.
//!
//! Exit codes separate operator mistakes from pipeline faults: bad
//! arguments, unreadable files, and invalid configuration exit with 2;
//! failures while processing exit with 1.

use clap::{Args, Parser, Subcommand};
use sonar3d::classification::ClassifierModel;
use sonar3d::config::{Mode, PipelineConfig};
use sonar3d::pipeline::{
    compare_modes, run_mission, train_bootstrap_classifier, MissionOutput,
};
use sonar3d::sim::{render_pair, Mission, PolarImage, Scene};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "sonar3d",
    version,
    about = "3D reconstruction from an orthogonal pair of imaging sonars"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one mission in the mode set by the config (or --mode).
    Run(RunArgs),
    /// Run benchmark and semantic modes over the same inputs and compare.
    Compare(CompareArgs),
    /// Train the bootstrap classifier from a scene's labeled primitives.
    TrainClassifier(TrainArgs),
    /// Render the sonar image pair from one pose and write PGM files.
    RenderScene(RenderArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Scene description (JSON).
    #[arg(long)]
    scene: PathBuf,
    /// Keyframe poses (JSON).
    #[arg(long)]
    mission: PathBuf,
    /// Pipeline configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Directory for the point cloud and report outputs.
    #[arg(long)]
    out: PathBuf,
    /// Override the config's mode (benchmark | semantic).
    #[arg(long)]
    mode: Option<Mode>,
    /// Override the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    mission: PathBuf,
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    /// Scene whose primitives provide the labeled training views.
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    config: PathBuf,
    /// Where to write the trained model (JSON).
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    config: PathBuf,
    /// Directory for the horizontal and vertical PGM images.
    #[arg(long)]
    out: PathBuf,
    /// Robot x position, meters.
    #[arg(long, default_value_t = 0.0)]
    x: f64,
    /// Robot y position, meters.
    #[arg(long, default_value_t = 0.0)]
    y: f64,
    /// Robot heading, degrees.
    #[arg(long, default_value_t = 0.0)]
    yaw_deg: f64,
    /// Robot depth (negative down), meters.
    #[arg(long, default_value_t = -1.5, allow_hyphen_values = true)]
    depth: f64,
    #[arg(long)]
    seed: Option<u64>,
}

/// Errors split by who must fix them: the operator (exit 2) or the
/// pipeline (exit 1).
enum CliError {
    Config(String),
    Runtime(String),
}

impl CliError {
    fn config(e: impl std::fmt::Display) -> CliError {
        CliError::Config(e.to_string())
    }

    fn runtime(e: impl std::fmt::Display) -> CliError {
        CliError::Runtime(e.to_string())
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(msg)) => {
            eprintln!("configuration error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Compare(args) => cmd_compare(args),
        Command::TrainClassifier(args) => cmd_train(args),
        Command::RenderScene(args) => cmd_render(args),
    }
}

fn load_inputs(
    scene: &Path,
    mission: &Path,
    config: &Path,
    mode: Option<Mode>,
    seed: Option<u64>,
) -> Result<(Scene, Mission, PipelineConfig), CliError> {
    let scene = Scene::load(scene).map_err(CliError::config)?;
    let mission = Mission::load(mission).map_err(CliError::config)?;
    let mut config = PipelineConfig::load(config).map_err(CliError::config)?;
    if let Some(mode) = mode {
        config.mode = mode;
    }
    if let Some(seed) = seed {
        config.seed = seed;
    }
    Ok((scene, mission, config))
}

/// Load the classifier named by the config when the mode needs one.
fn load_classifier(
    config: &PipelineConfig,
    needed: bool,
) -> Result<Option<ClassifierModel>, CliError> {
    if !needed {
        return Ok(None);
    }
    let Some(path) = &config.classifier_model else {
        return Err(CliError::Config(
            "semantic mode needs `classifier_model` in the config \
             (train one with `sonar3d train-classifier`)"
                .to_string(),
        ));
    };
    Ok(Some(ClassifierModel::load(path).map_err(CliError::config)?))
}

fn cmd_run(args: RunArgs) -> Result<(), CliError> {
    let (scene, mission, config) =
        load_inputs(&args.scene, &args.mission, &args.config, args.mode, args.seed)?;
    let classifier = load_classifier(&config, config.mode == Mode::Semantic)?;
    let output = run_mission(&scene, &mission, &config, classifier.as_ref())
        .map_err(CliError::runtime)?;
    output.write(&args.out).map_err(CliError::runtime)?;
    print_summary(&output);
    println!("outputs written to {}", args.out.display());
    Ok(())
}

fn cmd_compare(args: CompareArgs) -> Result<(), CliError> {
    let (scene, mission, config) =
        load_inputs(&args.scene, &args.mission, &args.config, None, args.seed)?;
    let classifier = load_classifier(&config, true)?;
    let comparison = compare_modes(&scene, &mission, &config, classifier.as_ref())
        .map_err(CliError::runtime)?;
    comparison.write(&args.out).map_err(CliError::runtime)?;
    print!("{}", comparison.table());
    println!("outputs written to {}", args.out.display());
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let scene = Scene::load(&args.scene).map_err(CliError::config)?;
    let config = PipelineConfig::load(&args.config).map_err(CliError::config)?;
    let seed = args.seed.unwrap_or(config.seed);
    let outcome =
        train_bootstrap_classifier(&scene, &config, seed).map_err(CliError::runtime)?;
    outcome.model.save(&args.out).map_err(CliError::runtime)?;
    println!(
        "trained on {} patches across {} classes (held-out accuracy {:.1}%)",
        outcome.examples,
        outcome.class_counts.len(),
        100.0 * outcome.holdout_accuracy
    );
    for (label, count) in &outcome.class_counts {
        println!("  {label}: {count} examples");
    }
    println!("model written to {}", args.out.display());
    Ok(())
}

fn cmd_render(args: RenderArgs) -> Result<(), CliError> {
    let scene = Scene::load(&args.scene).map_err(CliError::config)?;
    let config = PipelineConfig::load(&args.config).map_err(CliError::config)?;
    let seed = args.seed.unwrap_or(config.seed);
    let pose = sonar3d::geometry::PlanarPose::new(
        args.x,
        args.y,
        args.yaw_deg.to_radians(),
        args.depth,
    );
    let (h_image, v_image) = render_pair(
        &scene,
        &pose,
        &config.horizontal,
        &config.vertical,
        &config.render,
        seed,
    )
    .map_err(CliError::runtime)?;
    std::fs::create_dir_all(&args.out).map_err(CliError::runtime)?;
    let h_path = args.out.join("horizontal.pgm");
    let v_path = args.out.join("vertical.pgm");
    write_pgm(&h_image, &h_path).map_err(CliError::runtime)?;
    write_pgm(&v_image, &v_path).map_err(CliError::runtime)?;
    println!(
        "rendered ({} x {}) and ({} x {}) images to {}",
        h_image.rows(),
        h_image.cols(),
        v_image.rows(),
        v_image.cols(),
        args.out.display()
    );
    Ok(())
}

fn print_summary(output: &MissionOutput) {
    let r = &output.report;
    println!(
        "{} mode: {} points ({} fused / {} inferred), {} voxels @ {:.2} m",
        r.mode,
        r.fused_points + r.inferred_points,
        r.fused_points,
        r.inferred_points,
        r.voxel_count,
        r.voxel_size
    );
    println!(
        "error: median {:.3} m, quartiles {:.3}/{:.3} m, outliers {:.2}%",
        r.error.median,
        r.error.q1,
        r.error.q3,
        100.0 * r.error.outlier_fraction
    );
    if !r.warnings.is_empty() {
        println!("{} keyframes skipped:", r.warnings.len());
        for w in &r.warnings {
            println!("  {w}");
        }
    }
}

/// Write a min-max normalized image as an ASCII PGM for quick viewing.
fn write_pgm(image: &PolarImage, path: &Path) -> Result<(), std::io::Error> {
    let normalized = image.normalized();
    let rows = normalized.rows();
    let cols = normalized.cols();
    let mut text = format!("P2\n{cols} {rows}\n255\n");
    for r in 0..rows {
        for c in 0..cols {
            let level = (normalized.at(r, c).clamp(0.0, 1.0) * 255.0).round() as u8;
            if c > 0 {
                text.push(' ');
            }
            text.push_str(&level.to_string());
        }
        text.push('\n');
    }
    std::fs::write(path, text)
}
