use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gracer::harness::{
    ablation_rmse, dagger_collect, run_experiment, write_csv, Dataset, ExperimentEnv, RunConfig, SceneSampler,
};
use gracer::perception::{Perception, Prediction, RegressorConfig, RegressorModel};
use gracer::rng::{streams, RngStream};
use gracer::sim::{run_episode, Course, Flight};
use gracer::Error;

#[derive(Parser, Debug)]
#[command(
    name = "gracer",
    version,
    about = "Drone-racing simulation, data collection and experiments"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fly one episode and write its trace and summary.
    Simulate,
    /// Run the DAgger collection loop; writes the dataset and trained model.
    Collect,
    /// Train a regressor offline on a dataset.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        /// Defaults to the configured epochs per round.
        #[arg(long)]
        epochs: Option<usize>,
        /// Continue from this checkpoint instead of a fresh model.
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Run the configured experiment sweep and write its CSV.
    Eval {
        /// Training set for the gamma and capacity sweeps.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// RMSE of each model on each dataset.
    Ablate {
        #[arg(long = "model", required = true)]
        models: Vec<PathBuf>,
        #[arg(long = "dataset", required = true)]
        datasets: Vec<PathBuf>,
    },
    /// Write camera frames of an oracle flight as PPM files.
    RenderPreview {
        #[arg(long, default_value_t = 8)]
        frames: usize,
        /// Perception ticks between frames.
        #[arg(long, default_value_t = 15)]
        every: usize,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => ExitCode::from(1),
                _ => ExitCode::from(2),
            }
        }
    }
}

struct Context {
    config: RunConfig,
    base_dir: PathBuf,
    seed: u64,
    out: PathBuf,
}

impl Context {
    fn course(&self) -> gracer::Result<Course> {
        Course::new(self.config.track.load()?, &self.config.episode)
    }

    fn scenes(&self) -> SceneSampler {
        self.config
            .scenes
            .clone()
            .unwrap_or_else(|| SceneSampler::fixed(self.config.scene.clone()))
    }

    fn regressor(&self) -> RegressorConfig {
        let cam = &self.config.episode.camera;
        self.config
            .regressor
            .clone()
            .unwrap_or_else(|| RegressorConfig::with_input(cam.image_width, cam.image_height))
    }

    fn create(&self, name: &str) -> gracer::Result<BufWriter<File>> {
        Ok(BufWriter::new(File::create(self.out.join(name))?))
    }
}

fn run(cli: Cli) -> gracer::Result<()> {
    let (config, base_dir) = match &cli.global.config {
        Some(path) => {
            let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
            (RunConfig::load(path)?, dir)
        }
        None => (RunConfig::default(), PathBuf::new()),
    };
    fs::create_dir_all(&cli.global.out)?;
    let ctx = Context {
        config,
        base_dir,
        seed: cli.global.seed,
        out: cli.global.out,
    };
    match cli.command {
        Command::Simulate => simulate(&ctx),
        Command::Collect => collect(&ctx),
        Command::Train { dataset, epochs, init } => train(&ctx, &dataset, epochs, init.as_deref()),
        Command::Eval { dataset } => eval(&ctx, dataset.as_deref()),
        Command::Ablate { models, datasets } => ablate(&ctx, &models, &datasets),
        Command::RenderPreview { frames, every } => render_preview(&ctx, frames, every),
    }
}

/// Opens an input file named on the command line; a missing file is a
/// configuration error naming the path.
fn open_input(path: &Path) -> gracer::Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn load_dataset(path: &Path) -> gracer::Result<Dataset> {
    Dataset::read(open_input(path)?).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn load_model(path: &Path) -> gracer::Result<RegressorModel> {
    RegressorModel::read_checkpoint(open_input(path)?).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn simulate(ctx: &Context) -> gracer::Result<()> {
    let course = ctx.course()?;
    let backend = ctx.config.perception.backend(&ctx.base_dir)?;
    let mut perception = Perception::new(backend, ctx.seed);
    let scene = ctx.scenes().scene(ctx.seed);
    let trace = run_episode(&course, &scene, &mut perception, &ctx.config.episode, ctx.seed)?;
    let mut w = ctx.create("trace.jsonl")?;
    trace.write_jsonl(&mut w)?;
    w.flush()?;
    let summary = trace.summary();
    let mut w = ctx.create("summary.json")?;
    serde_json::to_writer_pretty(&mut w, &summary)?;
    writeln!(w)?;
    w.flush()?;
    println!(
        "{:?}: {} gates, completion {:.3}",
        summary.outcome, summary.gates_passed, summary.completion
    );
    Ok(())
}

fn collect(ctx: &Context) -> gracer::Result<()> {
    let course = ctx.course()?;
    let dcfg = ctx.config.dagger.clone().unwrap_or_default();
    let mut model = RegressorModel::new(ctx.regressor(), ctx.seed)?;
    let outcome = dagger_collect(&course, &ctx.config.episode, &ctx.scenes(), &mut model, &dcfg, ctx.seed)?;
    let mut w = ctx.create("dataset.grds")?;
    outcome.dataset.write(&mut w)?;
    w.flush()?;
    let mut w = ctx.create("model.ckpt")?;
    model.write_checkpoint(&mut w)?;
    w.flush()?;
    let mut w = ctx.create("rounds.json")?;
    serde_json::to_writer_pretty(&mut w, &outcome.rounds)?;
    writeln!(w)?;
    w.flush()?;
    println!(
        "{} samples in {} rounds ({:?})",
        outcome.dataset.len(),
        outcome.rounds.len(),
        outcome.stop
    );
    Ok(())
}

fn train(ctx: &Context, dataset: &Path, epochs: Option<usize>, init: Option<&Path>) -> gracer::Result<()> {
    let data = load_dataset(dataset)?;
    let mut model = match init {
        Some(path) => load_model(path)?,
        None => RegressorModel::new(ctx.regressor(), ctx.seed)?,
    };
    let epochs = epochs.unwrap_or(model.config().epochs_per_round);
    let pairs = data.pairs();
    let mut rng = RngStream::new(ctx.seed, streams::SHUFFLE);
    let mut log = ctx.create("train_log.csv")?;
    writeln!(log, "epoch,loss")?;
    for epoch in 0..epochs {
        let loss = model.train_epoch(&pairs, &mut rng)?;
        writeln!(log, "{epoch},{loss}")?;
    }
    log.flush()?;
    let mut w = ctx.create("model.ckpt")?;
    model.write_checkpoint(&mut w)?;
    w.flush()?;
    println!("trained {epochs} epochs on {} samples", data.len());
    Ok(())
}

fn eval(ctx: &Context, dataset: Option<&Path>) -> gracer::Result<()> {
    let spec = ctx
        .config
        .experiment
        .clone()
        .ok_or_else(|| Error::Config("config has no experiment section".into()))?;
    let env = ExperimentEnv {
        track: ctx.config.track.load()?,
        episode: ctx.config.episode.clone(),
        scenes: ctx.scenes(),
        backend: ctx.config.perception.backend(&ctx.base_dir)?,
        dataset: dataset.map(load_dataset).transpose()?,
        regressor: ctx.regressor(),
    };
    let rows = run_experiment(&spec, &env)?;
    let mut w = ctx.create(&format!("{}.csv", spec.id))?;
    write_csv(&rows, &mut w)?;
    w.flush()?;
    println!("{} rows", rows.len());
    Ok(())
}

fn ablate(ctx: &Context, models: &[PathBuf], datasets: &[PathBuf]) -> gracer::Result<()> {
    let data = datasets
        .iter()
        .map(|p| load_dataset(p))
        .collect::<gracer::Result<Vec<_>>>()?;
    let refs: Vec<&Dataset> = data.iter().collect();
    let mut w = ctx.create("ablation.csv")?;
    writeln!(w, "model,dataset,rmse")?;
    for path in models {
        let model = load_model(path)?;
        for (d, rmse) in datasets.iter().zip(ablation_rmse(&model, &refs)?) {
            writeln!(w, "{},{},{rmse}", path.display(), d.display())?;
            println!("{} on {}: {rmse:.4}", path.display(), d.display());
        }
    }
    w.flush()?;
    Ok(())
}

fn render_preview(ctx: &Context, frames: usize, every: usize) -> gracer::Result<()> {
    let course = ctx.course()?;
    let scene = ctx.scenes().scene(ctx.seed);
    let mut flight = Flight::new(&course, &ctx.config.episode, scene, ctx.seed)?;
    let (mut ticks, mut written) = (0, 0);
    while written < frames {
        if flight.perception_due() {
            if ticks % every.max(1) == 0 {
                let mut w = ctx.create(&format!("frame_{written:03}.ppm"))?;
                flight.render().write_ppm(&mut w)?;
                w.flush()?;
                written += 1;
            }
            ticks += 1;
            let label = flight.expert_output()?.label;
            flight.replan(label.valid.then(|| Prediction::from_label(&label)))?;
        }
        if flight.advance().is_some() {
            break;
        }
    }
    println!("{written} frames");
    Ok(())
}
