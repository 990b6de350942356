use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use lgd::denoiser::Ddpm;
use lgd::harness::{
    self, edge_targets, eval_edge_fidelity, heldout_error_curve, load_corpus, load_ddpm, load_lgp, save_corpus,
    save_ddpm, save_lgp, sign_test_p, split_corpus, stop_convention, sweep_beta, sweep_stop_frac,
    worker_pool, write_csv, CurvePoint, DatasetConfig, DdpmJob, EdgeTarget, Experiment, LgpJob, ShapesCorpus,
};
use lgd::maps::{read_pgm, write_pgm, MapKind, SpatialMap};
use lgd::predictor::{InputMode, Lgp, LossKind};
use lgd::sampler::{measure_overhead, sample, write_step_log, GuidanceTarget, SampleRunConfig};
use lgd::{Error, Result};

#[derive(Parser)]
#[command(name = "lgd", version, about = "Guided diffusion on a toy shapes corpus")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a procedural shapes corpus.
    GenData(GenData),
    /// Train the class-conditional denoiser.
    TrainDdpm(TrainDdpm),
    /// Train the per-pixel edge predictor against a trained denoiser.
    TrainLgp(TrainLgp),
    /// Draw one sample, guided by a sketch when one is given.
    Sample(SampleCmd),
    /// Score an image against an edge map, or compare guided and unguided runs.
    Eval(EvalCmd),
    /// Parameter sweeps.
    Sweep {
        #[command(subcommand)]
        kind: SweepKind,
    },
    /// Wall-clock cost of guidance.
    Overhead(OverheadCmd),
}

#[derive(Args)]
struct GenData {
    #[arg(long, default_value_t = 2000)]
    n: usize,
    #[arg(long, default_value_t = 32)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Comma-separated class names.
    #[arg(long, value_delimiter = ',', default_values_t = harness::DEFAULT_CLASSES.map(String::from))]
    classes: Vec<String>,
    /// Skip the displaced-stroke sketch variants.
    #[arg(long)]
    no_sketches: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainDdpm {
    #[arg(long)]
    data: PathBuf,
    /// JSON job description; omitted fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the number of optimizer steps.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Per-step loss CSV.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum LossArg {
    SqErr,
    Bce,
    Ce,
}

impl From<LossArg> for LossKind {
    fn from(v: LossArg) -> Self {
        match v {
            LossArg::SqErr => LossKind::SqErr,
            LossArg::Bce => LossKind::Bce,
            LossArg::Ce => LossKind::Ce,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum InputArg {
    Features,
    Zt,
}

impl From<InputArg> for InputMode {
    fn from(v: InputArg) -> Self {
        match v {
            InputArg::Features => InputMode::Features,
            InputArg::Zt => InputMode::ZtBaseline,
        }
    }
}

#[derive(Args)]
struct TrainLgp {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    ddpm: PathBuf,
    #[arg(long, value_enum, default_value = "sq-err", alias = "loss-kind")]
    loss: LossArg,
    #[arg(long, value_enum, default_value = "features")]
    input_mode: InputArg,
    /// JSON job description; command-line flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    /// Train only on these classes.
    #[arg(long, value_delimiter = ',')]
    classes: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct RunArgs {
    #[arg(long, default_value_t = 8.0)]
    cfg_scale: f64,
    /// Reverse steps; must equal the denoiser's schedule length.
    #[arg(long)]
    steps: Option<usize>,
    /// Skip clamping the clean-sample estimate to the model range.
    #[arg(long)]
    no_clip: bool,
}

impl RunArgs {
    fn config(&self, ddpm: &Ddpm, seed: u64, class: Option<usize>, h: usize, w: usize) -> SampleRunConfig {
        SampleRunConfig {
            steps: self.steps.unwrap_or(ddpm.schedule.steps()),
            cfg_scale: self.cfg_scale,
            seed,
            class,
            stochastic: true,
            height: h,
            width: w,
            clip_x0: !self.no_clip,
        }
    }
}

#[derive(Args)]
struct SampleCmd {
    #[arg(long)]
    ddpm: PathBuf,
    #[arg(long)]
    lgp: Option<PathBuf>,
    /// Target edge map as binary PGM; values are thresholded at one half.
    #[arg(long)]
    sketch: Option<PathBuf>,
    /// Class name or numeric id; omitted means unconditional.
    #[arg(long)]
    class: Option<String>,
    #[arg(long, default_value_t = 1.6)]
    beta: f64,
    #[arg(long, default_value_t = 0.5)]
    stop_frac: f64,
    #[arg(long, default_value_t = 1.0)]
    start_frac: f64,
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Image size when no sketch fixes it.
    #[arg(long, default_value_t = 32)]
    size: usize,
    /// Per-step trajectory CSV.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct ModelArgs {
    #[arg(long)]
    ddpm: PathBuf,
    #[arg(long)]
    lgp: PathBuf,
    /// Corpus whose held-out split supplies the target edge maps.
    #[arg(long)]
    data: PathBuf,
    /// Use the displaced-stroke sketches as targets.
    #[arg(long)]
    sketches: bool,
    /// Restrict targets to these classes.
    #[arg(long, value_delimiter = ',')]
    target_classes: Vec<String>,
}

#[derive(Args)]
struct EvalCmd {
    /// Image to score (PGM).
    #[arg(long, requires = "edges", conflicts_with_all = ["ddpm", "lgp", "data"])]
    image: Option<PathBuf>,
    /// Target edge map (PGM).
    #[arg(long, requires = "image")]
    edges: Option<PathBuf>,
    #[arg(long)]
    ddpm: Option<PathBuf>,
    #[arg(long)]
    lgp: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    sketches: bool,
    #[arg(long, value_delimiter = ',')]
    target_classes: Vec<String>,
    #[arg(long, default_value_t = 32)]
    seeds: u64,
    #[arg(long, default_value_t = 1.6)]
    beta: f64,
    #[arg(long, default_value_t = 0.5)]
    stop_frac: f64,
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum SweepKind {
    /// Edge fidelity against the guidance scale.
    Beta(SweepBeta),
    /// Edge fidelity against the guidance stop fraction.
    Stop(SweepStop),
    /// Held-out predictor error against normalized time.
    LgpCurve(LgpCurve),
}

#[derive(Args)]
struct SweepCommon {
    #[command(flatten)]
    models: ModelArgs,
    /// Seeds `0..seeds`, paired across settings.
    #[arg(long, default_value_t = 16)]
    seeds: u64,
    #[command(flatten)]
    run: RunArgs,
    /// Per-run CSV in addition to the summary.
    #[arg(long)]
    runs_out: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepBeta {
    #[command(flatten)]
    common: SweepCommon,
    #[arg(long, value_delimiter = ',', default_values_t = harness::DEFAULT_BETAS)]
    values: Vec<f64>,
    #[arg(long, default_value_t = 0.5)]
    stop_frac: f64,
}

#[derive(Args)]
struct SweepStop {
    #[command(flatten)]
    common: SweepCommon,
    #[arg(long, value_delimiter = ',', default_values_t = harness::DEFAULT_STOPS)]
    values: Vec<f64>,
    #[arg(long, default_value_t = 1.6)]
    beta: f64,
}

#[derive(Args)]
struct LgpCurve {
    #[arg(long)]
    ddpm: PathBuf,
    #[arg(long)]
    lgp: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9])]
    grid: Vec<f64>,
    /// Noise draws per grid point.
    #[arg(long, default_value_t = 64)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct OverheadCmd {
    #[command(flatten)]
    models: ModelArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1.6)]
    beta: f64,
    #[arg(long, default_value_t = 0.5)]
    stop_frac: f64,
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Usage(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::GenData(c) => gen_data(c),
        Command::TrainDdpm(c) => train_ddpm(c),
        Command::TrainLgp(c) => train_lgp(c),
        Command::Sample(c) => sample_cmd(c),
        Command::Eval(c) => eval_cmd(c),
        Command::Sweep { kind } => match kind {
            SweepKind::Beta(c) => sweep_beta_cmd(c),
            SweepKind::Stop(c) => sweep_stop_cmd(c),
            SweepKind::LgpCurve(c) => lgp_curve_cmd(c),
        },
        Command::Overhead(c) => overhead_cmd(c),
    }
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

#[derive(Serialize)]
struct LossRow {
    step: usize,
    loss: f64,
}

fn write_loss_log(path: Option<&Path>, log: &[f64]) -> Result<()> {
    let Some(path) = path else { return Ok(()) };
    let rows: Vec<LossRow> = log.iter().enumerate().map(|(step, &loss)| LossRow { step, loss }).collect();
    write_csv(path, &[], &rows)
}

fn tail_mean(log: &[f64]) -> f64 {
    let tail = &log[log.len().saturating_sub(100)..];
    tail.iter().sum::<f64>() / tail.len().max(1) as f64
}

fn gen_data(c: GenData) -> Result<()> {
    let config = DatasetConfig {
        n: c.n,
        size: c.size,
        seed: c.seed,
        classes: c.classes,
        hand_drawn: !c.no_sketches,
    };
    let corpus = harness::gen_dataset(&config)?;
    save_corpus(&c.out, &corpus)?;
    println!(
        "wrote {} images of {}x{} to {} (per-class counts {:?})",
        corpus.items.len(),
        c.size,
        c.size,
        c.out.display(),
        corpus.histogram()
    );
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        Some(p) => Ok(serde_json::from_str(&std::fs::read_to_string(p)?)?),
        None => Ok(T::default()),
    }
}

fn train_ddpm(c: TrainDdpm) -> Result<()> {
    let corpus = load_corpus(&c.data)?;
    let mut job: DdpmJob = read_json(c.config.as_deref())?;
    if let Some(s) = c.steps {
        job.train.steps = s;
    }
    if let Some(s) = c.seed {
        job.seed = s;
    }
    let (ddpm, log) = harness::run_ddpm_job(&corpus, &job)?;
    save_ddpm(&c.out, &ddpm, &corpus.config.classes)?;
    write_loss_log(c.log.as_deref(), &log)?;
    println!(
        "trained denoiser for {} steps, final loss {:.4}, saved to {}",
        log.len(),
        tail_mean(&log),
        c.out.display()
    );
    Ok(())
}

fn train_lgp(c: TrainLgp) -> Result<()> {
    let corpus = load_corpus(&c.data)?;
    let (ddpm, _) = load_ddpm(&c.ddpm)?;
    let mut job: LgpJob = read_json(c.config.as_deref())?;
    job.loss_kind = c.loss.into();
    job.input_mode = c.input_mode.into();
    if let Some(s) = c.steps {
        job.train.steps = s;
    }
    if let Some(s) = c.seed {
        job.seed = s;
    }
    if !c.classes.is_empty() {
        job.classes = c.classes;
    }
    let (lgp, log) = harness::run_lgp_job(&corpus, &ddpm, &job)?;
    save_lgp(&c.out, &lgp)?;
    write_loss_log(c.log.as_deref(), &log)?;
    println!(
        "trained edge predictor for {} steps, final loss {:.4}, saved to {}",
        log.len(),
        tail_mean(&log),
        c.out.display()
    );
    Ok(())
}

fn resolve_class(classes: &[String], arg: Option<&str>) -> Result<Option<usize>> {
    let Some(arg) = arg else { return Ok(None) };
    if let Some(id) = classes.iter().position(|c| c == arg) {
        return Ok(Some(id));
    }
    match arg.parse::<usize>() {
        Ok(id) if classes.is_empty() || id < classes.len() => Ok(Some(id)),
        _ => Err(Error::Usage(format!("unknown class `{arg}`; known classes: {}", classes.join(", ")))),
    }
}

fn read_sketch(path: &Path) -> Result<SpatialMap> {
    let img = read_pgm(path)?;
    SpatialMap::new(img.map(|v| if v >= 0.5 { 1.0 } else { 0.0 }), MapKind::Edges)
}

fn sample_cmd(c: SampleCmd) -> Result<()> {
    let (ddpm, classes) = load_ddpm(&c.ddpm)?;
    let class = resolve_class(&classes, c.class.as_deref())?;
    let (guide, size) = match (&c.sketch, &c.lgp) {
        (Some(sketch), Some(lgp)) => {
            let map = read_sketch(sketch)?;
            let lgp = load_lgp(lgp)?;
            let mut target = GuidanceTarget::new(map.data().clone(), lgp.config().loss_kind);
            target.beta = c.beta;
            target.stop_frac = c.stop_frac;
            target.start_frac = c.start_frac;
            let size = (map.height(), map.width());
            (Some((lgp, target)), size)
        }
        (Some(_), None) => return Err(Error::Usage("--sketch needs --lgp".into())),
        (None, _) => (None, (c.size, c.size)),
    };
    let run = c.run.config(&ddpm, c.seed, class, size.0, size.1);
    let out = sample(&ddpm, guide.as_ref().map(|(l, t)| (l, t)), &run)?;
    let image = harness::from_model_space(&out.image);
    write_pgm(&c.out, &image)?;
    if let Some(log) = &c.log {
        write_step_log(log, &out.log)?;
    }
    let mode = if guide.is_some() { "guided" } else { "unguided" };
    println!("{mode} sample ({} steps, seed {}) written to {}", run.steps, c.seed, c.out.display());
    if let Some(sketch) = &c.sketch {
        let fid = eval_edge_fidelity(&image, &read_sketch(sketch)?)?;
        println!("edge fidelity MSE against the sketch: {fid:.5}");
    }
    Ok(())
}

struct Loaded {
    ddpm: Ddpm,
    lgp: Lgp<f32>,
    targets: Vec<EdgeTarget>,
}

fn load_models(ddpm: &Path, lgp: &Path, data: &Path, sketches: bool, classes: &[String]) -> Result<Loaded> {
    let corpus: ShapesCorpus = load_corpus(data)?;
    let (ddpm, _) = load_ddpm(ddpm)?;
    let lgp = load_lgp(lgp)?;
    let filter = harness::class_filter(&corpus, classes)?;
    let (_, held) = split_corpus(corpus.items.len());
    let targets = edge_targets(&corpus, held, sketches, filter.as_deref())?;
    if targets.is_empty() {
        return Err(Error::Config("no held-out targets match the class filter".into()));
    }
    Ok(Loaded { ddpm, lgp, targets })
}

fn experiment<'a>(m: &'a Loaded, run: &RunArgs) -> Experiment<'a> {
    let shape = m.targets[0].edges.data().shape();
    let (h, w) = (shape[1], shape[2]);
    Experiment {
        ddpm: &m.ddpm,
        lgp: &m.lgp,
        targets: &m.targets,
        run: run.config(&m.ddpm, 0, None, h, w),
    }
}

#[derive(Serialize)]
struct SingleEval {
    edge_fidelity_mse: f32,
}

#[derive(Serialize)]
struct PairedEval {
    seeds: u64,
    beta: f64,
    stop_frac: f64,
    unguided_mean: f64,
    guided_mean: f64,
    guided_better: usize,
    guided_worse: usize,
    sign_test_p: f64,
}

fn eval_cmd(c: EvalCmd) -> Result<()> {
    if let (Some(image), Some(edges)) = (&c.image, &c.edges) {
        let img = read_pgm(image)?;
        let fid = eval_edge_fidelity(&img, &read_sketch(edges)?)?;
        write_json(&c.out, &SingleEval { edge_fidelity_mse: fid })?;
        println!("edge fidelity MSE: {fid:.5}");
        return Ok(());
    }
    let (Some(ddpm), Some(lgp), Some(data)) = (&c.ddpm, &c.lgp, &c.data) else {
        return Err(Error::Usage("eval needs either --image/--edges or --ddpm/--lgp/--data".into()));
    };
    let m = load_models(ddpm, lgp, data, c.sketches, &c.target_classes)?;
    let exp = experiment(&m, &c.run);
    let pool = worker_pool()?;
    let seeds: Vec<u64> = (0..c.seeds).collect();
    let rows = exp.run_grid(&pool, "eval", &[(0.0, c.stop_frac), (c.beta, c.stop_frac)], &seeds)?;
    let (base, guided) = rows.split_at(seeds.len());
    let better = base.iter().zip(guided).filter(|(b, g)| g.edge_fidelity_mse < b.edge_fidelity_mse).count();
    let worse = base.iter().zip(guided).filter(|(b, g)| g.edge_fidelity_mse > b.edge_fidelity_mse).count();
    let mean = |r: &[harness::MetricsRow]| r.iter().map(|x| x.edge_fidelity_mse).sum::<f64>() / r.len() as f64;
    let summary = PairedEval {
        seeds: c.seeds,
        beta: c.beta,
        stop_frac: c.stop_frac,
        unguided_mean: mean(base),
        guided_mean: mean(guided),
        guided_better: better,
        guided_worse: worse,
        sign_test_p: sign_test_p(better, worse),
    };
    write_csv(&c.out, &[], &rows)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn report_sweep(common: &SweepCommon, comments: &[String], summary: &[harness::SweepRow], rows: &[harness::MetricsRow]) -> Result<()> {
    write_csv(&common.out, comments, summary)?;
    if let Some(p) = &common.runs_out {
        write_csv(p, comments, rows)?;
    }
    for r in summary {
        println!(
            "beta {:>5.2}  stop {:>4.2}  edge fidelity {:.5} ± {:.5}  (n = {})",
            r.beta, r.stop_frac, r.edge_fidelity_mean, r.edge_fidelity_std, r.n
        );
    }
    Ok(())
}

fn sweep_beta_cmd(c: SweepBeta) -> Result<()> {
    let m = &c.common.models;
    let loaded = load_models(&m.ddpm, &m.lgp, &m.data, m.sketches, &m.target_classes)?;
    let exp = experiment(&loaded, &c.common.run);
    let seeds: Vec<u64> = (0..c.common.seeds).collect();
    let (summary, rows) = sweep_beta(&exp, &worker_pool()?, &c.values, c.stop_frac, &seeds)?;
    report_sweep(&c.common, &stop_convention(), &summary, &rows)
}

fn sweep_stop_cmd(c: SweepStop) -> Result<()> {
    let m = &c.common.models;
    let loaded = load_models(&m.ddpm, &m.lgp, &m.data, m.sketches, &m.target_classes)?;
    let exp = experiment(&loaded, &c.common.run);
    let seeds: Vec<u64> = (0..c.common.seeds).collect();
    let (summary, rows) = sweep_stop_frac(&exp, &worker_pool()?, &c.values, c.beta, &seeds)?;
    report_sweep(&c.common, &stop_convention(), &summary, &rows)
}

fn lgp_curve_cmd(c: LgpCurve) -> Result<()> {
    let corpus = load_corpus(&c.data)?;
    let (ddpm, _) = load_ddpm(&c.ddpm)?;
    let lgp = load_lgp(&c.lgp)?;
    let curve = heldout_error_curve(&corpus, &ddpm, &lgp, &c.grid, c.samples, c.seed)?;
    let rows: Vec<CurvePoint> = curve.iter().map(|&(t_norm, mse)| CurvePoint { t_norm, mse }).collect();
    write_csv(&c.out, &[], &rows)?;
    for p in &rows {
        println!("t_norm {:.2}  error {:.5}", p.t_norm, p.mse);
    }
    Ok(())
}

fn overhead_cmd(c: OverheadCmd) -> Result<()> {
    let m = &c.models;
    let loaded = load_models(&m.ddpm, &m.lgp, &m.data, m.sketches, &m.target_classes)?;
    let exp = experiment(&loaded, &c.run);
    let target = exp.target_for(c.seed)?;
    let mut guide = GuidanceTarget::new(target.edges.data().clone(), loaded.lgp.config().loss_kind);
    guide.beta = c.beta;
    guide.stop_frac = c.stop_frac;
    let run = SampleRunConfig {
        seed: c.seed,
        class: Some(target.class),
        ..exp.run.clone()
    };
    let o = measure_overhead(&loaded.ddpm, &loaded.lgp, &guide, &run)?;
    write_json(&c.out, &o)?;
    println!(
        "unguided {:.0} ms, guided {:.0} ms, ratio {:.2}",
        o.unguided_ms, o.guided_ms, o.ratio
    );
    Ok(())
}
