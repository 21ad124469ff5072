use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Arg, ArgMatches, Args, Command, FromArgMatches, Parser, Subcommand};

use semsplat::config::{PipelineConfig, KEYS};
use semsplat::dataset::synthetic::{generate_synthetic, SyntheticSpec, TrajectoryStyle};
use semsplat::editor::{apply_edit_script, load_edit_script};
use semsplat::runner::{evaluate_run, render_checkpoint, run_dir, Ablation, RunOptions};
use semsplat::scene::{load_checkpoint, save_checkpoint};

#[derive(Parser)]
#[command(name = "semsplat", version, about = "Semantic RGB-D Gaussian splatting SLAM")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run SLAM over a sequence directory.
    Run(RunArgs),
    /// Render a checkpoint at each pose of a trajectory file.
    Render {
        checkpoint: PathBuf,
        poses: PathBuf,
        intrinsics: PathBuf,
        out_dir: PathBuf,
    },
    /// Apply an edit script to a checkpoint.
    Edit {
        checkpoint: PathBuf,
        script: PathBuf,
        out_checkpoint: PathBuf,
    },
    /// Evaluate a run directory against a sequence.
    Eval {
        run_dir: PathBuf,
        gt_dir: PathBuf,
        /// Evaluate every n-th frame (the last frame is always included).
        #[arg(long, default_value_t = 5)]
        every: usize,
    },
    /// Generate a synthetic sequence.
    Synth(SynthArgs),
}

#[derive(Args)]
struct RunArgs {
    input: PathBuf,
    output: PathBuf,
    /// Key-value config file; individual keys can be overridden by flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Disable one channel or keyframe criterion (repeatable): no-color,
    /// no-depth, no-semantic, no-silhouette, no-geo, no-sem, no-uncertainty.
    #[arg(long = "ablate", value_parser = clap::value_parser!(AblationArg))]
    ablate: Vec<AblationArg>,
    /// Use the sequence's ground-truth poses instead of tracking.
    #[arg(long)]
    gt_poses: bool,
    #[command(flatten)]
    overrides: ConfigFlags,
}

#[derive(Clone)]
struct AblationArg(Ablation);

impl std::str::FromStr for AblationArg {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        s.parse().map(AblationArg)
    }
}

/// One `--<key> <value>` flag per config key.
#[derive(Default)]
struct ConfigFlags(Vec<(&'static str, String)>);

impl FromArgMatches for ConfigFlags {
    fn from_arg_matches(m: &ArgMatches) -> Result<Self, clap::Error> {
        let mut out = ConfigFlags::default();
        out.update_from_arg_matches(m)?;
        Ok(out)
    }

    fn update_from_arg_matches(&mut self, m: &ArgMatches) -> Result<(), clap::Error> {
        for &key in KEYS {
            if let Some(v) = m.get_one::<String>(key) {
                self.0.push((key, v.clone()));
            }
        }
        Ok(())
    }
}

impl Args for ConfigFlags {
    fn augment_args(cmd: Command) -> Command {
        let defaults = PipelineConfig::default().entries();
        KEYS.iter().fold(cmd, |cmd, &key| {
            let default = defaults.iter().find(|(k, _)| *k == key).map_or(String::new(), |(_, v)| format!("default: {v}"));
            cmd.arg(Arg::new(key).long(key).value_name("VALUE").help(default).help_heading("Config overrides"))
        })
    }

    fn augment_args_for_update(cmd: Command) -> Command {
        Self::augment_args(cmd)
    }
}

#[derive(Args)]
struct SynthArgs {
    out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 60)]
    frames: usize,
    /// orbit, line or revisit
    #[arg(long, default_value = "orbit")]
    style: TrajectoryStyle,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 60.0)]
    hfov_deg: f64,
    #[arg(long, default_value_t = 4)]
    objects: usize,
    /// Room extent x,y,z in meters.
    #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [4.0, 2.5, 4.0])]
    room: Vec<f64>,
    /// Standard deviation of depth noise in meters.
    #[arg(long, default_value_t = 0.0)]
    depth_noise: f64,
}

enum Failure {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl Failure {
    fn data(e: impl std::fmt::Display) -> Self {
        Failure::Data(e.to_string())
    }
}

fn build_config(args: &RunArgs) -> Result<PipelineConfig, Failure> {
    let mut cfg = match &args.config {
        Some(p) => PipelineConfig::load(p).map_err(Failure::data)?,
        None => PipelineConfig::default(),
    };
    for (k, v) in &args.overrides.0 {
        cfg.set(k, v).map_err(|e| Failure::Usage(e.to_string()))?;
    }
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(cfg)
}

fn cmd_run(args: RunArgs) -> Result<(), Failure> {
    let cfg = build_config(&args)?;
    let opts = RunOptions {
        seed: args.seed,
        inject_gt_poses: args.gt_poses,
        ablations: args.ablate.iter().map(|a| a.0).collect(),
    };
    let out = run_dir(&args.input, &args.output, &cfg, &opts).map_err(|e| {
        if e.exit_code() == 3 {
            Failure::Numeric(e.to_string())
        } else {
            Failure::Data(e.to_string())
        }
    })?;
    print!("{}", out.report.summary());
    eprintln!(
        "{} frames, track {:.2} fps, map {:.2} fps, {} gaussians -> {}",
        out.manifest.frames,
        out.manifest.track_fps,
        out.manifest.map_fps,
        out.map.len(),
        args.output.display()
    );
    Ok(())
}

fn cmd_edit(checkpoint: &Path, script: &Path, out: &Path) -> Result<(), Failure> {
    let (map, palette) = load_checkpoint(checkpoint).map_err(Failure::data)?;
    let cmds = load_edit_script(script, &palette).map_err(Failure::data)?;
    let (edited, outcomes) = apply_edit_script(&map, &palette, &cmds).map_err(Failure::data)?;
    for (i, o) in outcomes.iter().enumerate() {
        match &o.warning {
            Some(w) => eprintln!("warning: command {}: {w}", i + 1),
            None => eprintln!("command {}: {} gaussians selected", i + 1, o.selected),
        }
    }
    save_checkpoint(out, &edited, &palette).map_err(Failure::data)
}

fn cmd_eval(run: &Path, gt: &Path, every: usize) -> Result<(), Failure> {
    let report = evaluate_run(run, gt, every).map_err(Failure::data)?;
    report.write(&run.join("eval_gt.csv"), &run.join("summary_gt.txt")).map_err(Failure::data)?;
    print!("{}", report.summary());
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> Result<(), Failure> {
    let spec = SyntheticSpec {
        seed: a.seed,
        room_size: [a.room[0], a.room[1], a.room[2]],
        object_count: a.objects,
        frame_count: a.frames,
        style: a.style,
        width: a.width,
        height: a.height,
        hfov_deg: a.hfov_deg,
        depth_noise_std: a.depth_noise,
    };
    let scene = generate_synthetic(&spec).map_err(|e| Failure::Usage(e.to_string()))?;
    scene.export(&a.out_dir).map_err(Failure::data)
}

fn dispatch(cmd: Cmd) -> Result<(), Failure> {
    match cmd {
        Cmd::Run(args) => cmd_run(args),
        Cmd::Render { checkpoint, poses, intrinsics, out_dir } => {
            let n = render_checkpoint(&checkpoint, &poses, &intrinsics, &out_dir).map_err(Failure::data)?;
            eprintln!("rendered {n} views");
            Ok(())
        }
        Cmd::Edit { checkpoint, script, out_checkpoint } => cmd_edit(&checkpoint, &script, &out_checkpoint),
        Cmd::Eval { run_dir, gt_dir, every } => cmd_eval(&run_dir, &gt_dir, every),
        Cmd::Synth(args) => cmd_synth(args),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Data(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Numeric(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
