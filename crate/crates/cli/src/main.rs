//! `ndtimg`: simulate FMC data, reconstruct TFM / RTM / FWI images, score them
//! against the scenario ground truth and tabulate the scores.

mod manifest;
mod overlay;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ndt_imaging::acquisition::FmcDataset;
use ndt_imaging::fwi::{write_history_csv, FwiConfig};
use ndt_imaging::grid::ImageGrid;
use ndt_imaging::metrics::{
    comparison_table, curve_csv, evaluate, Exclusion, ReportRow, DEFAULT_BOTTOM_EXCLUSION,
};
use ndt_imaging::model::{rasterize_ground_truth, ScenarioSpec};
use ndt_imaging::pipeline::{self, Context};
use ndt_imaging::rtm::KernelKind;
use ndt_imaging::scenarios::{is_desk, scenario_by_name, scenario_library, SimulationConfig};

use manifest::{config_hash, RunManifest};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] ndt_imaging::Error),
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Usage(format!("{}: {e}", path.display()))
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if e.is_numerical() => 1,
            _ => 2,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Parser)]
#[command(
    name = "ndtimg",
    version,
    about = "Ultrasonic FMC simulation and defect imaging"
)]
struct Cli {
    /// Worker threads for shot-parallel work (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// List the shipped scenarios, optionally exporting them as TOML files.
    Scenarios {
        #[arg(long)]
        export: Option<PathBuf>,
    },
    /// Synthesise a full-matrix-capture dataset.
    Simulate(SimulateArgs),
    /// Reconstruct an image from an FMC dataset.
    Reconstruct(ReconstructArgs),
    /// Score an image against the scenario ground truth.
    Evaluate(EvaluateArgs),
    /// Merge metric reports into a comparison table.
    Compare {
        /// Metric CSV files written by `evaluate`.
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario TOML file, or `builtin:<name>` for a shipped scenario.
    #[arg(long)]
    scenario: String,
    /// Simulation config TOML (default: the shipped setup for the scenario size).
    #[arg(long)]
    sim_config: Option<PathBuf>,
    /// Inversion config TOML (default: desk or full-scale workflow).
    #[arg(long)]
    fwi_config: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long)]
    out: PathBuf,
    /// Synthesise on a 2x finer mesh with a smaller time step than the
    /// inversion would use, then decimate onto the inversion time axis.
    #[arg(long)]
    reference_resolution: bool,
    /// Also write the traces as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Method {
    Tfm,
    Rtm,
    Fwi,
}

impl Method {
    fn name(self) -> &'static str {
        match self {
            Method::Tfm => "tfm",
            Method::Rtm => "rtm",
            Method::Fwi => "fwi",
        }
    }
}

#[derive(Args)]
struct ReconstructArgs {
    #[arg(value_enum)]
    method: Method,
    #[arg(long)]
    fmc: PathBuf,
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Output float grid.
    #[arg(long)]
    out: PathBuf,
    /// Also write an 8-bit grayscale PNG.
    #[arg(long)]
    png: Option<PathBuf>,
    /// TFM wave speed in m/s (default: background p-wave speed).
    #[arg(long)]
    speed: Option<f64>,
    /// RTM: write the shot-summed density kernel before absolute value and smoothing.
    #[arg(long)]
    raw: bool,
    /// FWI: write the misfit gradient field of the background model instead of inverting.
    #[arg(long)]
    gradient_dump: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    image: PathBuf,
    /// Scenario TOML file, or `builtin:<name>`.
    #[arg(long)]
    scenario: String,
    /// Share of image rows at the bottom left out of scoring.
    #[arg(long, default_value_t = DEFAULT_BOTTOM_EXCLUSION)]
    exclude_bottom: f64,
    /// Method label in the report (default: image file stem).
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    out_dir: PathBuf,
}

struct Loaded {
    spec: ScenarioSpec,
    sim: SimulationConfig,
    fwi: FwiConfig,
    scenario_text: String,
}

fn load_scenario(arg: &str) -> Result<ScenarioSpec> {
    match arg.strip_prefix("builtin:") {
        Some(name) => Ok(scenario_by_name(name)?),
        None => Ok(ScenarioSpec::load(Path::new(arg))?),
    }
}

impl ScenarioArgs {
    fn load(&self) -> Result<Loaded> {
        let spec = load_scenario(&self.scenario)?;
        let sim = match &self.sim_config {
            Some(p) => SimulationConfig::load(p)?,
            None => SimulationConfig::default_for(&spec)?,
        };
        let fwi = match &self.fwi_config {
            Some(p) => FwiConfig::load(p)?,
            None if is_desk(&spec) => FwiConfig::desk(),
            None => FwiConfig::full_scale(),
        };
        let scenario_text = spec.to_toml_string();
        Ok(Loaded {
            spec,
            sim,
            fwi,
            scenario_text,
        })
    }
}

fn input_path(p: &Path) -> Result<&Path> {
    if p.exists() {
        Ok(p)
    } else {
        Err(CliError::Usage(format!(
            "input file not found: {}",
            p.display()
        )))
    }
}

fn finish(m: RunManifest, main_output: &Path) -> Result<()> {
    let path = manifest::path_for(main_output);
    m.write(&path)?;
    println!(
        "wrote {} (config {})",
        main_output.display(),
        &m.config_hash[..12]
    );
    Ok(())
}

fn scenarios(export: Option<PathBuf>) -> Result<()> {
    for s in scenario_library() {
        println!(
            "{:<12} {:>6.2} x {:>5.2} mm  {:>2} elements  {} defect(s)",
            s.name,
            s.domain_width * 1e3,
            s.domain_height * 1e3,
            s.array.n_elements,
            s.defects.len()
        );
        if let Some(dir) = &export {
            fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
            let p = dir.join(format!("{}.toml", s.name));
            fs::write(&p, s.to_toml_string()).map_err(|e| CliError::io(&p, e))?;
        }
    }
    Ok(())
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let start = Instant::now();
    let l = a.scenario.load()?;
    let fmc = pipeline::simulate(&l.spec, &l.sim, a.reference_resolution, l.fwi.dt_guard)?;
    fmc.write(&a.out)?;
    let mut outputs = vec![a.out.clone()];
    if let Some(csv) = &a.csv {
        fmc.write_csv(csv)?;
        outputs.push(csv.clone());
    }
    let sim_text = l.sim.to_toml_string();
    let fwi_text = l.fwi.to_toml_string();
    let reference = a.reference_resolution.to_string();
    let mut parts = vec![
        ("command", "simulate"),
        ("scenario", l.scenario_text.as_str()),
        ("simulation", sim_text.as_str()),
        ("reference", reference.as_str()),
    ];
    if a.reference_resolution {
        // the guard sets the inversion step the reference is decimated onto
        parts.push(("inversion", fwi_text.as_str()));
    }
    finish(
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").into(),
            command: "simulate".into(),
            scenario: l.spec.name.clone(),
            method: None,
            config_hash: config_hash(&parts),
            inputs: vec![],
            outputs,
            elapsed_s: start.elapsed().as_secs_f64(),
        },
        &a.out,
    )
}

fn reconstruct(a: ReconstructArgs) -> Result<()> {
    let start = Instant::now();
    let l = a.scenario.load()?;
    let fmc = FmcDataset::read(input_path(&a.fmc)?)?;
    fmc.ensure_array_matches(&l.spec.array)?;
    let grid = pipeline::image_grid(&l.spec, &l.fwi)?;
    let mut outputs = vec![a.out.clone()];
    let mut variant = String::new();
    let image: ImageGrid = match a.method {
        Method::Tfm => pipeline::reconstruct_tfm(&l.spec, &l.sim, &fmc, grid, a.speed)?,
        Method::Rtm => {
            let ctx = Context::new(&l.spec, &l.sim, &fmc, l.fwi.dt_guard)?;
            let cfg = pipeline::rtm_config(&ctx, grid, KernelKind::Density)?;
            if a.raw {
                variant = "raw".into();
                pipeline::rtm_raw(&ctx, &cfg)?
            } else {
                let r = pipeline::reconstruct_rtm(&ctx, &cfg)?;
                let meta = a.out.with_extension("meta");
                r.write_metadata(&meta)?;
                outputs.push(meta);
                r.image
            }
        }
        Method::Fwi => {
            let ctx = Context::new(&l.spec, &l.sim, &fmc, l.fwi.dt_guard)?;
            if a.gradient_dump {
                variant = "gradient".into();
                pipeline::fwi_gradient_image(&ctx, &l.spec, &l.fwi, grid)?
            } else {
                let r = pipeline::reconstruct_fwi(&ctx, &l.spec, &l.fwi)?;
                let hist = a.out.with_extension("history.csv");
                write_history_csv(&hist, &r.history)?;
                outputs.push(hist);
                r.image
            }
        }
    };
    image.write_float_grid(&a.out)?;
    if let Some(png) = &a.png {
        image.write_png(png)?;
        outputs.push(png.clone());
    }
    let sim_text = l.sim.to_toml_string();
    let fwi_text = l.fwi.to_toml_string();
    let speed = a.speed.map(|c| c.to_string()).unwrap_or_default();
    let hash = config_hash(&[
        ("command", "reconstruct"),
        ("method", a.method.name()),
        ("variant", &variant),
        ("scenario", &l.scenario_text),
        ("simulation", &sim_text),
        ("inversion", &fwi_text),
        ("speed", &speed),
    ]);
    finish(
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").into(),
            command: "reconstruct".into(),
            scenario: l.spec.name.clone(),
            method: Some(a.method.name().into()),
            config_hash: hash,
            inputs: vec![a.fmc.clone()],
            outputs,
            elapsed_s: start.elapsed().as_secs_f64(),
        },
        &a.out,
    )
}

fn evaluate_cmd(a: EvaluateArgs) -> Result<()> {
    let start = Instant::now();
    let spec = load_scenario(&a.scenario)?;
    let image = ImageGrid::read_float_grid(input_path(&a.image)?)?;
    let exclusion = Exclusion::bottom(a.exclude_bottom)?;
    let truth = rasterize_ground_truth(&spec, image.grid);
    let report = evaluate(&image, &truth, &exclusion)?;
    let method = a
        .method
        .clone()
        .or_else(|| {
            a.image
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
        })
        .unwrap_or_else(|| "image".into());
    let dir = &a.out_dir;
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let metrics = dir.join("metrics.csv");
    report.write_csv(&metrics, &spec.name, &method)?;
    let roc = dir.join("roc.csv");
    fs::write(&roc, curve_csv(&report.roc, "fpr", "tpr")).map_err(|e| CliError::io(&roc, e))?;
    let prc = dir.join("prc.csv");
    fs::write(&prc, curve_csv(&report.prc, "recall", "precision"))
        .map_err(|e| CliError::io(&prc, e))?;
    let mut outputs = vec![metrics.clone(), roc, prc];
    let norm = image.normalized();
    for (name, tau) in [
        ("tau_prc", report.tau_prc),
        ("tau_roc", report.tau_roc),
        ("tau_f1", report.tau_f1),
    ] {
        let p = dir.join(format!("overlay_{name}.png"));
        overlay::write(&p, &overlay::render(&norm, &truth, tau, &exclusion))?;
        outputs.push(p);
    }
    for (k, v) in report.scalars() {
        println!("{k:<18} {v:.6}");
    }
    let excl = a.exclude_bottom.to_string();
    let hash = config_hash(&[
        ("command", "evaluate"),
        ("scenario", &spec.to_toml_string()),
        ("method", &method),
        ("exclude_bottom", &excl),
    ]);
    finish(
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").into(),
            command: "evaluate".into(),
            scenario: spec.name.clone(),
            method: Some(method),
            config_hash: hash,
            inputs: vec![a.image.clone()],
            outputs,
            elapsed_s: start.elapsed().as_secs_f64(),
        },
        &metrics,
    )
}

fn compare(reports: Vec<PathBuf>, out: PathBuf) -> Result<()> {
    let start = Instant::now();
    let mut rows = Vec::new();
    let mut names = Vec::new();
    for p in &reports {
        let text = fs::read_to_string(input_path(p)?).map_err(|e| CliError::io(p, e))?;
        let row = ReportRow::parse_csv(&text)
            .map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
        names.push(format!("{}/{}", row.scenario, row.method));
        rows.push(row);
    }
    let table = comparison_table(&rows)?;
    fs::write(&out, &table).map_err(|e| CliError::io(&out, e))?;
    print!("{table}");
    let joined = names.join(";");
    finish(
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").into(),
            command: "compare".into(),
            scenario: String::new(),
            method: None,
            config_hash: config_hash(&[("command", "compare"), ("reports", &joined)]),
            inputs: reports,
            outputs: vec![out.clone()],
            elapsed_s: start.elapsed().as_secs_f64(),
        },
        &out,
    )
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    match cli.command {
        Command::Scenarios { export } => scenarios(export),
        Command::Simulate(a) => simulate(a),
        Command::Reconstruct(a) => reconstruct(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Compare { reports, out } => compare(reports, out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
