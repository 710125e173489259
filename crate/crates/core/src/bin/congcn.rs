use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use congcn::data::{DatasetManifest, HsiCube, LabelMap};
use congcn::models::Checkpoint;
use congcn::pipeline::{build_scene, evaluate, train_scene, GraphConfig, RunMeta};
use congcn::render::render_ppm;
use congcn::superpixel::slic_segment;
use congcn::synth::{self, BlobSpec};
use congcn::trainer::TrainConfig;
use congcn::Error;

/// Exit status for usage and configuration problems.
const EXIT_USAGE: u8 = 2;
const EXIT_RUNTIME: u8 = 1;

#[derive(Parser, Debug)]
#[command(name = "congcn", version, about = "Contrastive superpixel-graph classifier for hyperspectral cubes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run SLIC and write the superpixel id map as a label file.
    Segment(SegmentArgs),
    /// Train on a cube and write a checkpoint plus logs.
    Train(TrainArgs),
    /// Evaluate a checkpoint and render the classification map.
    Eval(EvalArgs),
    /// Write a synthetic blob cube, its label map and a manifest.
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
struct SlicArgs {
    /// Target superpixel count (default derived from the scene size).
    #[arg(long)]
    n_target: Option<usize>,
    #[arg(long)]
    compactness: Option<f64>,
    #[arg(long)]
    slic_iters: Option<usize>,
}

impl SlicArgs {
    fn apply(&self, mut g: GraphConfig) -> GraphConfig {
        if let Some(n) = self.n_target {
            g.slic.n_target = n;
        }
        if let Some(m) = self.compactness {
            g.slic.compactness = m;
        }
        if let Some(i) = self.slic_iters {
            g.slic.iters = i;
        }
        g
    }
}

#[derive(Args, Debug)]
struct SegmentArgs {
    #[arg(long)]
    cube: PathBuf,
    /// Output label file.
    #[arg(long)]
    out: PathBuf,
    /// Classes used to size the default superpixel count.
    #[arg(long, default_value_t = 1)]
    classes: usize,
    /// Accepted for interface symmetry; SLIC here is deterministic.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    slic: SlicArgs,
}

#[derive(Args, Debug)]
struct DataArgs {
    #[arg(long)]
    cube: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    lambda_ssc: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    lambda_g2: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    lambda_local: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    p_sample: Option<f64>,
    #[arg(long)]
    mi_bins: Option<usize>,
    #[arg(long)]
    levels: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    no_closs: bool,
    #[arg(long)]
    no_gloss: bool,
    #[arg(long)]
    no_spa_aug: bool,
    #[arg(long)]
    no_spe_aug: bool,
    /// Keep τ at 1 instead of starting from the median edge distance.
    #[arg(long)]
    fixed_tau: bool,
    #[command(flatten)]
    slic: SlicArgs,
}

impl TrainArgs {
    fn train_config(&self) -> TrainConfig {
        let mut c = TrainConfig {
            seed: self.seed,
            ..TrainConfig::default()
        };
        macro_rules! set {
            ($($field:expr => $opt:expr),* $(,)?) => {
                $(if let Some(v) = $opt { $field = v; })*
            };
        }
        set! {
            c.iters => self.iters,
            c.lr => self.lr,
            c.weights.lambda_ssc => self.lambda_ssc,
            c.weights.lambda_g2 => self.lambda_g2,
            c.model.lambda_local => self.lambda_local,
            c.augment.p_sample => self.p_sample,
            c.mi_bins => self.mi_bins,
            c.model.levels => self.levels,
            c.model.hidden => self.hidden,
        }
        c.weights.closs = !self.no_closs;
        c.weights.gloss = !self.no_gloss;
        c.augment.spatial = !self.no_spa_aug;
        c.augment.spectral = !self.no_spe_aug;
        c.adaptive_tau = !self.fixed_tau;
        c
    }
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Checkpoint written by `train`.
    #[arg(long)]
    model: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Class-mean separation in noise standard deviations.
    #[arg(long, default_value_t = 3.0)]
    separation: f64,
    #[arg(long, default_value_t = 48)]
    height: usize,
    #[arg(long, default_value_t = 48)]
    width: usize,
    #[arg(long, default_value_t = 10)]
    bands: usize,
    #[arg(long, default_value_t = 4)]
    classes: usize,
    /// Labeled pixels per class written into the manifest.
    #[arg(long, default_value_t = 10)]
    quota: usize,
}

/// Error tagged with the exit status it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) | Error::Param(_) => EXIT_USAGE,
            _ => EXIT_RUNTIME,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn usage(message: String) -> Failure {
    Failure {
        code: EXIT_USAGE,
        message,
    }
}

fn require(paths: &[&Path]) -> Result<(), Failure> {
    for p in paths {
        if !p.is_file() {
            return Err(usage(format!("input file not found: {}", p.display())));
        }
    }
    Ok(())
}

fn output_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| usage(format!("cannot create {}: {e}", dir.display())))
}

struct Inputs {
    cube: HsiCube,
    labels: LabelMap,
    manifest: DatasetManifest,
}

fn load_inputs(a: &DataArgs) -> Result<Inputs, Failure> {
    require(&[&a.cube, &a.labels, &a.manifest])?;
    let manifest = DatasetManifest::load(&a.manifest).map_err(|e| match e {
        Error::Io(_) => Failure::from(e),
        other => usage(format!("{}: {other}", a.manifest.display())),
    })?;
    Ok(Inputs {
        cube: HsiCube::load(&a.cube)?,
        labels: LabelMap::load(&a.labels)?,
        manifest,
    })
}

fn cmd_segment(a: &SegmentArgs) -> Result<(), Failure> {
    require(&[&a.cube])?;
    let cube = HsiCube::load(&a.cube)?;
    let graph = a.slic.apply(GraphConfig::for_scene(&cube, a.classes.max(1)));
    let seg = slic_segment(&cube, &graph.slic)?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        output_dir(parent)?;
    }
    seg.to_label_map()?.save(&a.out)?;
    println!("{} superpixels -> {}", seg.len(), a.out.display());
    Ok(())
}

fn cmd_train(a: &TrainArgs) -> Result<(), Failure> {
    let config = a.train_config();
    config.validate()?;
    let inputs = load_inputs(&a.data)?;
    output_dir(&a.out)?;
    let graph = a.slic.apply(GraphConfig::for_scene(&inputs.cube, inputs.manifest.class_count()));
    let scene = build_scene(&inputs.cube, &inputs.labels, &inputs.manifest, a.seed, &graph)?;

    let io = |e: std::io::Error| Failure::from(Error::Io(e));
    let mut log = BufWriter::new(File::create(a.out.join("train_log.jsonl")).map_err(io)?);
    let mut write_err = None;
    let outcome = train_scene(&scene, &config, |r| {
        if write_err.is_none() {
            if let Err(e) = writeln!(log, "{}", r.to_json_line()) {
                write_err = Some(e);
            }
        }
    });
    if let Some(e) = write_err {
        return Err(io(e));
    }
    log.flush().map_err(io)?;
    let outcome = outcome?;

    let mut val = BufWriter::new(File::create(a.out.join("validation.jsonl")).map_err(io)?);
    for r in &outcome.validation {
        writeln!(val, "{}", serde_json::to_string(r).expect("record serializes")).map_err(io)?;
    }
    val.flush().map_err(io)?;

    let meta = RunMeta {
        seed: a.seed,
        graph,
        model: config.model,
        classes: scene.classes,
        bands: inputs.cube.bands(),
    };
    meta.to_checkpoint(outcome.params).save(a.out.join("model.cgcn"))?;
    let last = outcome.log.last().map(|r| r.total).unwrap_or(f64::NAN);
    println!(
        "trained {} iterations on {} superpixels, final loss {last:.4}",
        config.iters,
        scene.graph.len()
    );
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> Result<(), Failure> {
    require(&[&a.model])?;
    let inputs = load_inputs(&a.data)?;
    let ck = Checkpoint::load(&a.model)?;
    let meta = RunMeta::from_checkpoint(&ck)?;
    if meta.bands != inputs.cube.bands() || meta.classes != inputs.manifest.class_count() {
        return Err(Error::Contract(format!(
            "checkpoint expects {} bands and {} classes, inputs have {} and {}",
            meta.bands,
            meta.classes,
            inputs.cube.bands(),
            inputs.manifest.class_count()
        ))
        .into());
    }
    output_dir(&a.out)?;
    let scene = build_scene(&inputs.cube, &inputs.labels, &inputs.manifest, meta.seed, &meta.graph)?;
    let ev = evaluate(&scene, &inputs.labels, &ck.params, &meta.model)?;
    let io = |e: std::io::Error| Failure::from(Error::Io(e));
    fs::write(a.out.join("report.json"), ev.report.to_json()).map_err(io)?;
    let ppm = render_ppm(&ev.pixel_map, inputs.cube.height(), inputs.cube.width())?;
    fs::write(a.out.join("map.ppm"), ppm).map_err(io)?;
    println!(
        "OA {:.4}  AA {:.4}  kappa {:.4}  ({} test pixels)",
        ev.report.oa, ev.report.aa, ev.report.kappa, ev.report.n_test
    );
    Ok(())
}

fn cmd_synth(a: &SynthArgs) -> Result<(), Failure> {
    let spec = BlobSpec {
        height: a.height,
        width: a.width,
        bands: a.bands,
        classes: a.classes,
        separation: a.separation,
        seed: a.seed,
        ..BlobSpec::default()
    };
    let (cube, labels) = synth::blobs(&spec)?;
    output_dir(&a.out)?;
    cube.save(a.out.join("cube.hsit"))?;
    labels.save(a.out.join("labels.hsil"))?;
    synth::manifest("synthetic", a.classes, a.quota).save(a.out.join("manifest.toml"))?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn init_threads() -> Result<(), Failure> {
    let Ok(v) = std::env::var("CONGCN_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| usage(format!("CONGCN_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure {
            code: EXIT_RUNTIME,
            message: e.to_string(),
        })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = init_threads().and_then(|()| match &cli.command {
        Command::Segment(a) => cmd_segment(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Synth(a) => cmd_synth(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("congcn: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
