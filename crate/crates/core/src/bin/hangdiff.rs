use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use hangdiff::denoiser::{ConditionId, Denoiser, Optimizer, TrainConfig};
use hangdiff::harness::dataset::{generate_demos_at, load_dataset, preset_scene, preset_scene_with, save_dataset, Dataset};
use hangdiff::harness::eval::{ablate_timestep, evaluate, mode_coverage, sample_poses, EvalConfig, EvalMode};
use hangdiff::igso3::density;
use hangdiff::posediff::{PosteriorVariant, Pose};
use hangdiff::refine::{refine_pose, RefineConfig};
use hangdiff::scenegeom::{RackKind, RackModel, SceneSpec, DEFAULT_RESOLUTION};
use hangdiff::schedule::{AdjustSchedule, NoiseSchedule, DEFAULT_BETA_MAX, DEFAULT_BETA_MIN, DEFAULT_STEPS};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "hangdiff", version, about = "Hanging-pose diffusion: data, training, sampling, refinement and evaluation")]
struct Cli {
    /// Master seed.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Voxel size in meters for overlap checks.
    #[arg(long, global = true, default_value_t = DEFAULT_RESOLUTION)]
    resolution: f64,
    /// Training steps.
    #[arg(long, global = true, default_value_t = 10_000)]
    steps: usize,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate demonstrations for preset scenes.
    GenData(GenData),
    /// Train a denoiser on a dataset.
    Train(TrainArgs),
    /// Draw target poses from a trained model.
    Sample(SampleArgs),
    /// Refine a single predicted pose against a hook.
    Refine(RefineArgs),
    /// Run sample-check-refine trials and print a report.
    Eval(EvalArgs),
    /// Sweep the refinement jitter step and print CSV.
    AblateTimestep(AblateArgs),
    /// Print IGSO(3) angle densities as CSV.
    DumpDensity(DensityArgs),
}

#[derive(Args)]
struct GenData {
    #[arg(long)]
    out: PathBuf,
    /// Mug presets, comma separated (a, b).
    #[arg(long, value_delimiter = ',', default_value = "a,b")]
    mugs: Vec<char>,
    /// Rack archetypes, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "long-short,high-low")]
    racks: Vec<String>,
    /// Keep only these hooks of each rack.
    #[arg(long, value_delimiter = ',')]
    hooks: Vec<ConditionId>,
    #[arg(long, default_value_t = 5)]
    per_hook: usize,
    /// Label every demo with this condition instead of its hook.
    #[arg(long)]
    condition: Option<ConditionId>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Train only on this scene.
    #[arg(long)]
    scene: Option<String>,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 64)]
    batch: usize,
    #[arg(long, value_enum, default_value_t = Opt::Adam)]
    optimizer: Opt,
    /// Length T of the diffusion chain.
    #[arg(long, default_value_t = DEFAULT_STEPS)]
    diffusion_steps: usize,
    /// Write the loss curve as CSV here.
    #[arg(long)]
    losses: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Opt {
    Sgd,
    Adam,
}

#[derive(Args)]
struct SceneSel {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Scene name; defaults to the first scene of the dataset.
    #[arg(long)]
    scene: Option<String>,
}

#[derive(Args)]
struct SampleArgs {
    #[command(flatten)]
    sel: SceneSel,
    /// Condition word; defaults to the scene demos' condition.
    #[arg(long)]
    condition: Option<String>,
    #[arg(long, default_value_t = 10)]
    count: usize,
}

#[derive(Args)]
struct RefineArgs {
    /// Scene JSON: one scene, or a list (pick with --name).
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    name: Option<String>,
    #[arg(long)]
    hook: ConditionId,
    /// World pose JSON.
    #[arg(long)]
    pose: PathBuf,
    #[arg(long, default_value_t = 100)]
    max_iter: usize,
    #[arg(long, default_value_t = 1)]
    t_jitter: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Single,
    Multi,
    Specified,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    sel: SceneSel,
    #[arg(long, value_enum, default_value_t = Mode::Single)]
    mode: Mode,
    /// Condition word for specified mode.
    #[arg(long)]
    condition: Option<String>,
    #[arg(long, default_value_t = 50)]
    trials: usize,
    #[arg(long, default_value_t = 1)]
    t_jitter: usize,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    sel: SceneSel,
    #[arg(long, value_enum, default_value_t = Mode::Single)]
    mode: Mode,
    #[arg(long)]
    condition: Option<String>,
    #[arg(long, default_value_t = 50)]
    trials: usize,
    #[arg(long, value_delimiter = ',', default_value = "1,3,6,10")]
    t: Vec<usize>,
}

#[derive(Args)]
struct DensityArgs {
    #[arg(long, value_delimiter = ',', default_value = "0.05,0.5,2")]
    eps2: Vec<f64>,
    #[arg(long, default_value_t = 200)]
    points: usize,
    #[arg(long, default_value_t = 2000)]
    series_len: usize,
}

fn rack_kind(name: &str) -> Result<RackKind> {
    RackKind::ALL
        .iter()
        .copied()
        .find(|k| k.name() == name)
        .with_context(|| format!("unknown rack '{name}'"))
}

fn pick_scene<'a>(data: &'a Dataset, name: Option<&str>) -> Result<&'a SceneSpec> {
    match name {
        Some(n) => Ok(data.scene(n)?),
        None => data.scenes.first().context("dataset has no scenes"),
    }
}

fn eval_mode(mode: Mode, condition: Option<String>) -> Result<EvalMode> {
    Ok(match mode {
        Mode::Single => EvalMode::Single,
        Mode::Multi => EvalMode::Multi,
        Mode::Specified => EvalMode::Specified(condition.context("specified mode needs --condition")?),
    })
}

fn check_resolution(r: f64) -> Result<()> {
    if !(r.is_finite() && r > 0.0) {
        bail!("--resolution must be positive, got {r}");
    }
    Ok(())
}

fn write_json(out: &mut impl Write, v: &impl serde::Serialize) -> Result<()> {
    serde_json::to_writer(&mut *out, v)?;
    writeln!(out)?;
    Ok(())
}

fn gen_data(cli: &Cli, a: &GenData) -> Result<()> {
    let mut scenes = Vec::new();
    for m in &a.mugs {
        if !matches!(m, 'a' | 'b') {
            bail!("unknown mug preset '{m}'");
        }
        for r in &a.racks {
            let kind = rack_kind(r)?;
            let scene = if a.hooks.is_empty() {
                preset_scene(*m, kind)
            } else {
                let keep: Vec<ConditionId> = kind_hooks(kind).into_iter().filter(|h| a.hooks.contains(h)).collect();
                if keep.is_empty() {
                    bail!("rack '{r}' has none of the requested hooks");
                }
                preset_scene_with(*m, kind, &keep)
            };
            scenes.push(scene);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cli.seed);
    let mut demos = generate_demos_at(&scenes, a.per_hook, cli.resolution, &mut rng)?;
    if let Some(c) = a.condition {
        demos = demos.iter().map(|d| d.with_condition(c)).collect();
    }
    save_dataset(&a.out, &scenes, &demos, hangdiff::denoiser::default_registry())?;
    println!("wrote {} demos for {} scenes to {}", demos.len(), scenes.len(), a.out.display());
    Ok(())
}

fn kind_hooks(kind: RackKind) -> Vec<ConditionId> {
    hangdiff::scenegeom::RackSpec::archetype(kind).hooks.iter().map(|h| h.id).collect()
}

fn train_cmd(cli: &Cli, a: &TrainArgs) -> Result<()> {
    let data = load_dataset(&a.data)?;
    let demos: Vec<_> = match &a.scene {
        Some(n) => data.demos.iter().filter(|d| &d.scene == n).cloned().collect(),
        None => data.demos.clone(),
    };
    let sched = NoiseSchedule::linear(a.diffusion_steps, DEFAULT_BETA_MIN, DEFAULT_BETA_MAX)?;
    let cfg = TrainConfig {
        steps: cli.steps,
        batch_size: a.batch,
        lr: a.lr,
        optimizer: match a.optimizer {
            Opt::Sgd => Optimizer::Sgd,
            Opt::Adam => Optimizer::Adam,
        },
        seed: cli.seed,
        log_every: (cli.steps / 20).max(1),
        ..TrainConfig::default()
    };
    let out = hangdiff::denoiser::train::train_with_registry(&demos, &sched, &cfg, &data.registry)?;
    out.model.save(&a.out)?;
    if let Some(p) = &a.losses {
        let mut f = std::fs::File::create(p)?;
        writeln!(f, "step,loss")?;
        for l in &out.losses {
            writeln!(f, "{},{}", l.step, l.loss)?;
        }
    }
    let last = out.losses.last().map(|l| l.loss).unwrap_or(f64::NAN);
    println!("trained {} steps on {} demos, final loss {last:.6}, saved {}", cli.steps, demos.len(), a.out.display());
    Ok(())
}

fn load_sel(sel: &SceneSel) -> Result<(Denoiser, Dataset)> {
    let model = Denoiser::load(&sel.model).with_context(|| format!("loading {}", sel.model.display()))?;
    let data = load_dataset(&sel.data)?;
    Ok((model, data))
}

fn sample_cmd(cli: &Cli, a: &SampleArgs) -> Result<()> {
    let (model, data) = load_sel(&a.sel)?;
    let scene = pick_scene(&data, a.sel.scene.as_deref())?;
    let demo = data
        .demos
        .iter()
        .find(|d| d.scene == scene.name)
        .context("scene has no demos")?;
    let cond = match &a.condition {
        Some(w) => w.parse()?,
        None => demo.condition,
    };
    let s = sample_poses(&model, demo, cond, a.count, cli.seed, PosteriorVariant::default())?;
    let mut out = std::io::stdout().lock();
    for p in &s.poses {
        write_json(&mut out, p)?;
    }
    Ok(())
}

#[derive(Deserialize)]
#[serde(untagged)]
enum SceneFile {
    One(SceneSpec),
    Many(Vec<SceneSpec>),
}

fn read_scene(path: &Path, name: Option<&str>) -> Result<SceneSpec> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let scenes = match serde_json::from_str(&text)? {
        SceneFile::One(s) => vec![s],
        SceneFile::Many(v) => v,
    };
    let found = match name {
        Some(n) => scenes.into_iter().find(|s| s.name == n),
        None => scenes.into_iter().next(),
    };
    let scene = found.context("scene not found in file")?;
    scene.validate()?;
    Ok(scene)
}

fn refine_cmd(cli: &Cli, a: &RefineArgs) -> Result<()> {
    let scene = read_scene(&a.scene, a.name.as_deref())?;
    let hook = scene.rack.hook(a.hook)?;
    let pose: Pose = serde_json::from_str(&std::fs::read_to_string(&a.pose)?)?;
    if !pose.is_valid(1e-6) {
        bail!("pose rotation is not orthonormal");
    }
    if a.max_iter == 0 || a.max_iter > 100 {
        bail!("--max-iter must be in 1..=100");
    }
    let rack = RackModel::build(&scene.rack, cli.resolution)?;
    let cfg = RefineConfig {
        max_iter: a.max_iter,
        adjust: AdjustSchedule::with_t_jitter(a.t_jitter)?,
        ..RefineConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cli.seed);
    let norm = hangdiff::harness::Normalization::default();
    let r = refine_pose(&scene.mug, &rack, hook, &pose, &norm, &cfg, &mut rng);
    write_json(&mut std::io::stdout().lock(), &r)
}

fn eval_cfg(cli: &Cli, trials: usize, t_jitter: usize) -> Result<EvalConfig> {
    Ok(EvalConfig {
        trials,
        seed: cli.seed,
        refine: RefineConfig {
            adjust: AdjustSchedule::with_t_jitter(t_jitter)?,
            ..RefineConfig::default()
        },
        resolution: cli.resolution,
        ..EvalConfig::default()
    })
}

fn eval_cmd(cli: &Cli, a: &EvalArgs) -> Result<()> {
    let (model, data) = load_sel(&a.sel)?;
    let scene = pick_scene(&data, a.sel.scene.as_deref())?;
    let mode = eval_mode(a.mode, a.condition.clone())?;
    let report = evaluate(&model, scene, &data.demos, &mode, &eval_cfg(cli, a.trials, a.t_jitter)?)?;
    let mut out = std::io::stdout().lock();
    write_json(&mut out, &report)?;
    write_json(&mut out, &mode_coverage(&report))
}

fn ablate_cmd(cli: &Cli, a: &AblateArgs) -> Result<()> {
    let (model, data) = load_sel(&a.sel)?;
    let scene = pick_scene(&data, a.sel.scene.as_deref())?;
    let mode = eval_mode(a.mode, a.condition.clone())?;
    let rows = ablate_timestep(&model, scene, &data.demos, &mode, &a.t, &eval_cfg(cli, a.trials, 1)?)?;
    let mut out = std::io::stdout().lock();
    writeln!(out, "t_jitter,success_rate,t_avg")?;
    for r in rows {
        writeln!(out, "{},{},{}", r.t_jitter, r.success_rate, r.t_avg)?;
    }
    Ok(())
}

fn density_cmd(a: &DensityArgs) -> Result<()> {
    if a.points < 2 {
        bail!("--points must be at least 2");
    }
    if let Some(e) = a.eps2.iter().find(|e| !(**e > 0.0 && e.is_finite())) {
        bail!("--eps2 values must be positive and finite, got {e}");
    }
    let mut out = std::io::stdout().lock();
    writeln!(out, "eps2,omega,density")?;
    for &e in &a.eps2 {
        for i in 0..a.points {
            let w = std::f64::consts::PI * i as f64 / (a.points - 1) as f64;
            writeln!(out, "{e},{w},{}", density(w, e, a.series_len)?)?;
        }
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    check_resolution(cli.resolution)?;
    match &cli.cmd {
        Cmd::GenData(a) => gen_data(cli, a),
        Cmd::Train(a) => train_cmd(cli, a),
        Cmd::Sample(a) => sample_cmd(cli, a),
        Cmd::Refine(a) => refine_cmd(cli, a),
        Cmd::Eval(a) => eval_cmd(cli, a),
        Cmd::AblateTimestep(a) => ablate_cmd(cli, a),
        Cmd::DumpDensity(a) => density_cmd(a),
    }
}

fn main() -> ExitCode {
    match run(&Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
