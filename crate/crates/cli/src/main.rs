use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::de::DeserializeOwned;

use mp3d_core::evaluation::{evaluate, EvalFrame, MatchConfig, PckMode, Setting, Weighting};
use mp3d_core::heatmap::{soft_argmax_mapped, DEFAULT_TEMPERATURE};
use mp3d_core::io::{self, DatasetFile, PlacedFile, PoseSetFile};
use mp3d_core::lifting::{input_vector, normalize_keypoints, train, LiftingConfig, LiftingModel};
use mp3d_core::pipeline::{run_pipeline, write_pipeline_outputs, PipelineOptions};
use mp3d_core::placement::{place_scene, PlacementOptions};
use mp3d_core::render::write_svg;
use mp3d_core::synth::{generate_lifting_dataset, generate_scene, SynthConfig};
use mp3d_core::{ErrorClass, Scene};

#[derive(Parser)]
#[command(name = "mp3d", version, about = "Multi-person monocular 3D pose geometry toolkit")]
struct Cli {
    /// Reject unknown fields in every JSON input.
    #[arg(long, global = true)]
    strict: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene, or a lifting dataset with `synth dataset`.
    Synth(SynthCmd),
    /// Decode heatmaps of a scene into 2D keypoints.
    Decode(DecodeArgs),
    /// Train or run the 2D-to-3D lifting network.
    #[command(subcommand)]
    Lift(LiftCmd),
    /// Place root-relative poses in camera space and estimate the focal length.
    Place(PlaceArgs),
    /// Score predictions against ground truth.
    Eval(EvalArgs),
    /// Draw a scene, optionally with its placement, as SVG.
    Render(RenderArgs),
    /// Decode, lift, place and evaluate scenes.
    Pipeline(PipelineArgs),
}

#[derive(Args)]
#[command(args_conflicts_with_subcommands = true)]
struct SynthCmd {
    #[command(subcommand)]
    dataset: Option<SynthSub>,
    #[command(flatten)]
    common: SynthArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum SynthSub {
    Dataset {
        #[arg(long)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: SynthArgs,
    },
}

#[derive(Args)]
struct SynthArgs {
    /// Synthesis parameters (JSON); flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Exact number of persons per scene.
    #[arg(long)]
    persons: Option<usize>,
    #[arg(long)]
    noise_px: Option<f64>,
    #[arg(long)]
    occlusion: Option<f64>,
    #[arg(long)]
    sequence: Option<String>,
}

impl SynthArgs {
    fn resolve(&self, strict: bool) -> Result<SynthConfig> {
        let mut cfg: SynthConfig = load_config(self.config.as_deref(), strict)?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(n) = self.persons {
            cfg.n_persons = [n, n];
        }
        if let Some(s) = self.noise_px {
            cfg.noise_sigma_px = s;
        }
        if let Some(r) = self.occlusion {
            cfg.occlusion_rate = r;
        }
        if let Some(s) = &self.sequence {
            cfg.sequence = Some(s.clone());
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_TEMPERATURE)]
    temperature: f64,
}

#[derive(Subcommand)]
enum LiftCmd {
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Network and optimizer settings (JSON); flags override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        hidden_width: Option<usize>,
    },
    /// Fill `pose_3d` for every person of a scene that has 2D keypoints.
    Infer {
        #[arg(long)]
        model: PathBuf,
        /// Scene whose persons carry `keypoints_2d`.
        #[arg(long)]
        keypoints: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct PlaceArgs {
    /// One or more scene files.
    #[arg(long, required = true, num_args = 1..)]
    scene: Vec<PathBuf>,
    /// Output file; only with a single scene.
    #[arg(long, conflicts_with = "out_dir")]
    out: Option<PathBuf>,
    /// Writes `<name>.placed.json` per scene.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Placement options (JSON); flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    fov: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    fix_focal: bool,
    /// Keep the per-step residual trace in the output.
    #[arg(long)]
    trace: bool,
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    All,
    Detected,
}

#[derive(Clone, Copy, ValueEnum)]
enum WeightingArg {
    Person,
    Sequence,
}

#[derive(Args)]
struct EvalArgs {
    /// Predicted poses (pose-set JSON).
    #[arg(long, requires = "gt", conflicts_with = "scene")]
    pred: Option<PathBuf>,
    /// Ground-truth poses (pose-set JSON).
    #[arg(long, requires = "pred")]
    gt: Option<PathBuf>,
    /// Evaluate the predictions stored in scene files instead.
    #[arg(long, num_args = 1..)]
    scene: Vec<PathBuf>,
    #[arg(long, value_parser = ["1", "2"])]
    setting: Option<String>,
    #[arg(long, value_enum, default_value = "all")]
    mode: ModeArg,
    #[arg(long)]
    threshold_mm: Option<f64>,
    #[arg(long)]
    px_proximity: Option<f64>,
    #[arg(long, value_enum, default_value = "person")]
    weighting: WeightingArg,
    /// Matching options (JSON); flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    placed: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long, required = true, num_args = 1..)]
    scene: Vec<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    /// Pipeline options (JSON); flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    fov: Option<f64>,
    /// Hold the focal length at the scene camera when present.
    #[arg(long)]
    use_scene_camera: bool,
    #[arg(long, value_parser = ["1", "2"])]
    setting: Option<String>,
    /// Also write `<name>.svg`.
    #[arg(long)]
    svg: bool,
    #[arg(long)]
    jobs: Option<usize>,
}

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>, strict: bool) -> Result<T> {
    match path {
        Some(p) => io::read_json(p, strict).with_context(|| format!("reading config {}", p.display())),
        None => Ok(T::default()),
    }
}

fn load_scene(path: &Path, strict: bool) -> Result<Scene> {
    io::load_scene(path, strict).with_context(|| format!("reading scene {}", path.display()))
}

fn stem(path: &Path) -> String {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    name.strip_suffix(".json").unwrap_or(&name).to_string()
}

fn parse_setting(s: Option<&str>) -> Option<Setting> {
    s.map(|s| if s == "1" { Setting::Setting1 } else { Setting::Setting2 })
}

fn for_each_scene<F>(paths: &[PathBuf], jobs: Option<usize>, f: F) -> Result<()>
where
    F: Fn(&Path) -> Result<()> + Sync,
{
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs.unwrap_or(0)).build()?;
    pool.install(|| paths.par_iter().map(|p| f(p)).collect::<Vec<_>>())
        .into_iter()
        .collect()
}

fn cmd_synth(cmd: &SynthCmd, strict: bool) -> Result<()> {
    match &cmd.dataset {
        Some(SynthSub::Dataset { count, out, common }) => {
            let cfg = common.resolve(strict)?;
            let data = generate_lifting_dataset(&cfg, *count)?;
            io::write_json(out, &DatasetFile::new([cfg.image_w_px, cfg.image_h_px], &data))?;
        }
        None => {
            let Some(out) = &cmd.out else {
                bail!("--out is required")
            };
            let scene = generate_scene(&cmd.common.resolve(strict)?)?;
            io::save_scene(out, &scene)?;
        }
    }
    Ok(())
}

fn cmd_decode(a: &DecodeArgs, strict: bool) -> Result<()> {
    let mut scene = load_scene(&a.scene, strict)?;
    for p in &mut scene.persons {
        if let Some(h) = &p.heatmaps {
            p.keypoints_2d = Some(soft_argmax_mapped(&h.heatmap, a.temperature, &h.to_image)?);
        }
    }
    io::save_scene(&a.out, &scene)?;
    Ok(())
}

fn cmd_lift(cmd: &LiftCmd, strict: bool) -> Result<()> {
    match cmd {
        LiftCmd::Train {
            data,
            out,
            config,
            epochs,
            seed,
            hidden_width,
        } => {
            let mut cfg: LiftingConfig = load_config(config.as_deref(), strict)?;
            if let Some(e) = epochs {
                cfg.epochs = *e;
            }
            if let Some(s) = seed {
                cfg.seed = *s;
            }
            if let Some(h) = hidden_width {
                cfg.hidden_width = *h;
            }
            let file: DatasetFile = io::read_json(data, strict)?;
            let samples = file.into_samples()?;
            let mut model = LiftingModel::new(cfg)?;
            let report = train(&mut model, &samples)?;
            let (first, last) = (report.loss_trace[0], *report.loss_trace.last().expect("trace"));
            println!(
                "loss {first:.6} -> {last:.6} over {} epochs",
                report.loss_trace.len() - 1
            );
            std::fs::write(out, model.to_json())?;
        }
        LiftCmd::Infer { model, keypoints, out } => {
            let model: LiftingModel = io::read_json(model, strict)?;
            model.validate()?;
            let mut scene = load_scene(keypoints, strict)?;
            let (w, h) = (scene.image_w_px, scene.image_h_px);
            for p in &mut scene.persons {
                if let Some(kp) = &p.keypoints_2d {
                    p.pose_3d = Some(model.predict(&input_vector(&normalize_keypoints(kp, w, h)))?);
                }
            }
            io::save_scene(out, &scene)?;
        }
    }
    Ok(())
}

fn cmd_place(a: &PlaceArgs, strict: bool) -> Result<()> {
    let mut opts: PlacementOptions = load_config(a.config.as_deref(), strict)?;
    if let Some(f) = a.fov {
        opts.init_fov_degrees = f;
    }
    if let Some(n) = a.max_iters {
        opts.max_iterations = n;
    }
    opts.fix_focal |= a.fix_focal;
    let place = |scene_path: &Path, out: &Path| -> Result<()> {
        let scene = load_scene(scene_path, strict)?;
        let mut placed = place_scene(&scene, &opts).with_context(|| format!("placing {}", scene_path.display()))?;
        if !a.trace {
            placed.result.residual_trace_px.clear();
        }
        io::write_json(out, &PlacedFile::new(placed))?;
        Ok(())
    };
    match (&a.out, &a.out_dir) {
        (Some(out), None) => {
            if a.scene.len() != 1 {
                bail!("--out takes a single --scene; use --out-dir for several");
            }
            place(&a.scene[0], out)
        }
        (None, Some(dir)) => {
            std::fs::create_dir_all(dir)?;
            for_each_scene(&a.scene, a.jobs, |p| {
                place(p, &dir.join(format!("{}.placed.json", stem(p))))
            })
        }
        _ => bail!("one of --out or --out-dir is required"),
    }
}

fn cmd_eval(a: &EvalArgs, strict: bool) -> Result<()> {
    let mut cfg: MatchConfig = load_config(a.config.as_deref(), strict)?;
    if let Some(s) = parse_setting(a.setting.as_deref()) {
        cfg.setting = s;
    }
    if let Some(t) = a.threshold_mm {
        cfg.pck_threshold_mm = t;
    }
    if let Some(p) = a.px_proximity {
        cfg.px_proximity = p;
    }
    let (root, frames) = match (&a.pred, &a.gt) {
        (Some(pred), Some(gt)) => {
            let (skeleton, pred) = PoseSetFile::load(pred, strict)?;
            let (_, gt) = PoseSetFile::load(gt, strict)?;
            (skeleton.root(), io::pair_frames(pred, gt)?)
        }
        _ if !a.scene.is_empty() => {
            let scenes = a
                .scene
                .iter()
                .map(|p| load_scene(p, strict))
                .collect::<Result<Vec<_>>>()?;
            (
                scenes[0].skeleton.root(),
                scenes.iter().map(EvalFrame::from_scene).collect(),
            )
        }
        _ => bail!("give --pred and --gt, or --scene"),
    };
    let weighting = match a.weighting {
        WeightingArg::Person => Weighting::PersonWeighted,
        WeightingArg::Sequence => Weighting::SequenceMean,
    };
    let report = evaluate(&frames, &cfg, root, weighting)?;
    let (mode, pck) = match a.mode {
        ModeArg::All => (PckMode::AllAnnotated, report.overall.pck_all_annotated),
        ModeArg::Detected => (PckMode::DetectedOnly, report.overall.pck_detected_only),
    };
    print!("{}", report.to_table());
    println!(
        "PCK ({}) @ {} mm: {pck:.1}",
        serde_json::to_string(&mode)?.trim_matches('"'),
        report.pck_threshold_mm
    );
    if let Some(path) = &a.report {
        io::write_json(path, &report)?;
    }
    Ok(())
}

fn cmd_render(a: &RenderArgs, strict: bool) -> Result<()> {
    let scene = load_scene(&a.scene, strict)?;
    let placed = a.placed.as_deref().map(PlacedFile::load).transpose()?;
    write_svg(&a.out, &scene, placed.as_ref())?;
    Ok(())
}

fn cmd_pipeline(a: &PipelineArgs, strict: bool) -> Result<()> {
    let mut opts: PipelineOptions = load_config(a.config.as_deref(), strict)?;
    if let Some(f) = a.fov {
        opts.placement.init_fov_degrees = f;
    }
    opts.use_scene_camera |= a.use_scene_camera;
    if let Some(s) = parse_setting(a.setting.as_deref()) {
        opts.eval.setting = s;
    }
    let model: Option<LiftingModel> = a.model.as_deref().map(|p| io::read_json(p, strict)).transpose()?;
    std::fs::create_dir_all(&a.out_dir)?;
    for_each_scene(&a.scene, a.jobs, |path| {
        let scene = load_scene(path, strict)?;
        let out =
            run_pipeline(&scene, model.as_ref(), &opts).with_context(|| format!("pipeline on {}", path.display()))?;
        let name = stem(path);
        write_pipeline_outputs(&a.out_dir, &name, &out)?;
        if a.svg {
            write_svg(&a.out_dir.join(format!("{name}.svg")), &out.scene, Some(&out.placement))?;
        }
        if let Some(r) = &out.report {
            println!(
                "{name}: PCK {:.1}  detected {:.1}",
                r.overall.pck_all_annotated, r.overall.detection_rate
            );
        }
        Ok(())
    })
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth(c) => cmd_synth(c, cli.strict),
        Command::Decode(a) => cmd_decode(a, cli.strict),
        Command::Lift(c) => cmd_lift(c, cli.strict),
        Command::Place(a) => cmd_place(a, cli.strict),
        Command::Eval(a) => cmd_eval(a, cli.strict),
        Command::Render(a) => cmd_render(a, cli.strict),
        Command::Pipeline(a) => cmd_pipeline(a, cli.strict),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let class = err
        .chain()
        .find_map(|e| e.downcast_ref::<mp3d_core::Error>())
        .map(|e| e.class());
    match class {
        Some(ErrorClass::Schema) => 2,
        Some(ErrorClass::Numerical) => 3,
        Some(ErrorClass::Degenerate) => 4,
        Some(ErrorClass::Io) | None => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
