//! Command-line front end. Thread count follows `RAYON_NUM_THREADS`.
//!
//! Exit codes: 0 success, 1 usage error, 2 I/O error, 3 training divergence,
//! 4 invalid input or data.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use radarfield::harness::{self, Axis, ExperimentSpec, Method, Preset};
use radarfield::inr::{load_checkpoint, render};
use radarfield::scene::{GridSpec, VoxelGrid};
use radarfield::{Error, Result};

#[derive(Parser)]
#[command(name = "radarfield", version, about = "Radar scene synthesis and reconstruction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a dataset (manifest + payload) from a scene.
    Synth {
        #[command(flatten)]
        spec: SpecArgs,
        /// Manifest path; the payload is written next to it with a .bin extension.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a RIFT model on a dataset's training split.
    Train {
        #[command(flatten)]
        spec: SpecArgs,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value = "rift_n")]
        method: Method,
        /// Output directory for checkpoints, loss.csv and recon.grid.
        #[arg(long)]
        out: PathBuf,
    },
    /// Block Kaczmarz least-squares inversion.
    Invert {
        #[command(flatten)]
        spec: SpecArgs,
        #[arg(long)]
        dataset: PathBuf,
        /// Output grid file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a reconstruction against the dataset's ground truth.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        /// Reconstruction grid file.
        #[arg(long, conflicts_with = "checkpoint", required_unless_present = "checkpoint")]
        grid: Option<PathBuf>,
        /// Model checkpoint, rendered on the dataset's inverse grid.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Ground-truth grid file; defaults to the scene recorded in the dataset.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Row label in the output table.
        #[arg(long, default_value = "model")]
        name: String,
        #[arg(long, default_value_t = radarfield::metrics::DEFAULT_THRESHOLD)]
        threshold: f64,
        /// CSV output path; a JSON copy is written alongside.
        #[arg(long)]
        out: PathBuf,
    },
    /// Write magnitude slices of a grid as PGM images.
    Render {
        #[arg(long, conflicts_with = "checkpoint", required_unless_present = "checkpoint")]
        grid: Option<PathBuf>,
        #[arg(long, requires = "n")]
        checkpoint: Option<PathBuf>,
        /// Voxels per axis when rendering a checkpoint.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, default_value = "z")]
        axis: Axis,
        #[arg(long)]
        out: PathBuf,
    },
    /// Full experiment: synth, train/invert, eval and render into a bundle.
    Run {
        #[command(flatten)]
        spec: SpecArgs,
        /// Bundle directory.
        #[arg(long)]
        out: PathBuf,
        /// Print the resolved spec and exit.
        #[arg(long)]
        dry_run: bool,
    },
}

/// Experiment selection plus overrides of individual spec fields.
#[derive(Args)]
struct SpecArgs {
    #[arg(long, default_value = "desk")]
    preset: Preset,
    /// Built-in experiment (cube, sphere, pyramid, parking_lot, highway, wtd).
    #[arg(long, default_value = "cube")]
    experiment: String,
    /// Experiment spec file (TOML); replaces --preset/--experiment.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated methods (rift_n, rift_s, ls).
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<Method>>,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
    #[arg(long)]
    n_freq: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    halve_every: Option<usize>,
    #[arg(long)]
    w_phase: Option<f64>,
    /// Kaczmarz sweeps.
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    relaxation: Option<f64>,
    #[arg(long)]
    threshold: Option<f64>,
}

impl SpecArgs {
    fn resolve(&self) -> Result<ExperimentSpec> {
        let mut s = match &self.spec {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.clone(), source: e })?;
                ExperimentSpec::from_toml(&text)?
            }
            None => harness::preset(&self.experiment, self.preset, 0)?,
        };
        if let Some(v) = self.seed {
            s.seed = v;
        }
        if let Some(v) = &self.methods {
            s.methods = v.clone();
        }
        if let Some(v) = self.n_train {
            s.viewpoints.n_train = v;
        }
        if let Some(v) = self.n_test {
            s.viewpoints.n_test = v;
        }
        if let Some(v) = self.n_freq {
            s.radar.n_freq = v;
        }
        if let Some(v) = self.epochs {
            s.train.epochs = v;
            if self.halve_every.is_none() {
                s.train.halve_every = s.train.halve_every.min(v);
            }
        }
        if let Some(v) = self.lr {
            s.train.lr = v;
        }
        if let Some(v) = self.halve_every {
            s.train.halve_every = v;
        }
        if let Some(v) = self.w_phase {
            s.train.loss.w_phase = v;
        }
        if let Some(v) = self.iterations {
            s.kaczmarz.iterations = v;
        }
        if let Some(v) = self.relaxation {
            s.kaczmarz.relaxation = v;
        }
        if let Some(v) = self.threshold {
            s.threshold = v;
        }
        s.validate()?;
        Ok(s)
    }

    /// Spec for a stage that reads an existing dataset: its inverse grid
    /// comes from the dataset manifest when recorded there.
    fn resolve_for(&self, manifest: &harness::DatasetManifest) -> Result<ExperimentSpec> {
        let mut s = self.resolve()?;
        if let Some(info) = &manifest.scene {
            s.forward_grid = info.forward_grid;
            s.inverse_grid = info.inverse_grid;
        }
        Ok(s)
    }
}

fn inverse_grid_of(manifest: &harness::DatasetManifest) -> Result<GridSpec> {
    manifest
        .scene
        .as_ref()
        .map(|i| i.inverse_grid)
        .ok_or_else(|| Error::Domain("dataset records no inverse grid".into()))
}

fn load_recon(grid: Option<PathBuf>, checkpoint: Option<PathBuf>, spec: impl FnOnce() -> Result<GridSpec>) -> Result<VoxelGrid> {
    match (grid, checkpoint) {
        (Some(g), _) => harness::load_grid(&g),
        (None, Some(c)) => render(&load_checkpoint(&c)?, &spec()?),
        (None, None) => Err(Error::Domain("need --grid or --checkpoint".into())),
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Synth { spec, out } => {
            let s = spec.resolve()?;
            let (ds, m) = harness::synth(&s, &out)?;
            println!(
                "wrote {} ({} viewpoints of {}x{}x{}, scale {:e}, {} train / {} test)",
                out.display(),
                ds.len(),
                m.signal_shape[0],
                m.signal_shape[1],
                m.signal_shape[2],
                m.scale,
                ds.split.train.len(),
                ds.split.test.len()
            );
        }
        Command::Train { spec, dataset, method, out } => {
            let (ds, m) = harness::read_dataset(&dataset)?;
            let s = spec.resolve_for(&m)?;
            let (report, _) = harness::train(&ds, &s, method, &out)?;
            println!(
                "{}: best epoch {} loss {:e}; wrote {}",
                method.model_name(ds.split.train.len()),
                report.best_epoch,
                report.best_loss,
                out.display()
            );
        }
        Command::Invert { spec, dataset, out } => {
            let (ds, m) = harness::read_dataset(&dataset)?;
            let s = spec.resolve_for(&m)?;
            harness::invert(&ds, &s, &out)?;
            println!("wrote {}", out.display());
        }
        Command::Eval { dataset, grid, checkpoint, truth, name, threshold, out } => {
            let (ds, m) = harness::read_dataset(&dataset)?;
            let recon = load_recon(grid, checkpoint, || inverse_grid_of(&m))?;
            let truth = match truth {
                Some(p) => harness::load_grid(&p)?,
                None => harness::truth_grid(&m, &recon.spec)?,
            };
            let r = harness::eval(&name, &recon, &truth, &ds, threshold, &out)?;
            print!("{}", radarfield::metrics::MetricsReport::csv(&[r]));
        }
        Command::Render { grid, checkpoint, n, axis, out } => {
            let recon = match (grid, checkpoint, n) {
                (Some(g), _, _) => harness::load_grid(&g)?,
                (None, Some(c), Some(n)) => {
                    let params = load_checkpoint(&c)?;
                    render(&params, &GridSpec::with_count(2.0 * params.config().half_extent, n)?)?
                }
                _ => return Err(Error::Domain("need --grid, or --checkpoint with --n".into())),
            };
            let files = harness::render_slices(&recon, axis, &out)?;
            println!("wrote {} slices to {}", files.len(), out.display());
        }
        Command::Run { spec, out, dry_run } => {
            let s = spec.resolve()?;
            if dry_run {
                print!("{}", s.to_toml());
                return Ok(());
            }
            let r = harness::run(&s, &out)?;
            print!("{}", radarfield::metrics::MetricsReport::csv(&r.reports));
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } => 2,
        Error::Divergence { .. } => 3,
        _ => 4,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
