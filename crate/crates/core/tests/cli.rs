use std::collections::BTreeMap;
use std::hash::{DefaultHasher, Hash, Hasher};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use semsplat::camera::{read_trajectory, write_trajectory, CameraPose};
use semsplat::dataset::load_sequence;
use semsplat::metrics::{ate, psnr, PSNR_SENTINEL_DB};
use semsplat::pipeline::anchor_trajectory;
use semsplat::rasterizer::render;
use semsplat::runner::RunManifest;
use semsplat::scene::load_checkpoint;

/// Cheap iteration counts for tests that only check plumbing.
const FAST: &[&str] = &["--iters_map_first", "30", "--iters_map", "5", "--iters_track", "5"];

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_semsplat")).args(args).output().expect("spawn semsplat")
}

fn ok(args: &[&str]) -> Output {
    let out = bin(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path, frames: usize, seed: u64) {
    ok(&["synth", p(dir), "--frames", &frames.to_string(), "--seed", &seed.to_string()]);
}

fn tree_hashes(root: &Path) -> BTreeMap<PathBuf, u64> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let mut h = DefaultHasher::new();
                std::fs::read(&path).unwrap().hash(&mut h);
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), h.finish());
            }
        }
    }
    out
}

#[test]
fn default_run_and_downstream_commands() {
    let tmp = tempfile::tempdir().unwrap();
    let (seq, run) = (tmp.path().join("seq"), tmp.path().join("run"));
    synth(&seq, 10, 0);
    ok(&["run", p(&seq), p(&run), "--seed", "4"]);

    let traj = read_trajectory(&run.join("trajectory.txt")).unwrap();
    assert_eq!(traj.len(), 10);
    let (map, palette) = load_checkpoint(&run.join("map.ssgm")).unwrap();
    assert!(!map.is_empty());
    for f in ["loss_log.csv", "mapping_stats.csv", "keyframes.csv", "eval.csv", "summary.txt"] {
        assert!(run.join(f).is_file(), "{f} missing");
    }
    let manifest = RunManifest::load(&run.join("manifest.json")).unwrap();
    assert_eq!((manifest.seed, manifest.frames, manifest.timing.len()), (4, 10, 10));
    assert_eq!(manifest.pipeline_config().unwrap(), semsplat::config::PipelineConfig::default());
    let track_ms: f64 = manifest.timing.iter().map(|t| t.track_ms).sum();
    assert!((manifest.track_fps - 10.0 / (track_ms / 1e3)).abs() < 1e-9 * manifest.track_fps);

    // render at the run's own training poses reproduces the stored frames
    let seq_data = load_sequence(&seq, true).unwrap();
    let views = tmp.path().join("views");
    ok(&["render", p(&run.join("map.ssgm")), p(&run.join("trajectory.txt")), p(&seq.join("intrinsics.txt")), p(&views)]);
    let rendered = load_sequence(&views, true).unwrap();
    assert_eq!(rendered.frames.len(), 10);
    for t in [0, 5, 9] {
        let db = psnr(&rendered.frames[t].color, &seq_data.frames[t].color).unwrap();
        assert!(db > 30.0, "frame {t}: {db:.2} dB");
    }

    // a novel pose halfway between two training poses stays covered
    let (a, b) = (traj[4].1, traj[5].1);
    let mid = CameraPose::from_camera_to_world(
        a.camera_to_world_rotation().slerp(&b.camera_to_world_rotation(), 0.5),
        (a.center() + b.center()) / 2.0,
    );
    let out = render(&map, &mid, &seq_data.intrinsics).unwrap();
    let covered = out.silhouette.as_slice().iter().filter(|&&s| s > 0.5).count() as f64 / out.silhouette.len() as f64;
    assert!(covered > 0.9, "coverage {covered}");

    // evaluating the run against its own renders is exact
    let stdout = String::from_utf8(ok(&["eval", p(&run), p(&views), "--every", "3"]).stdout).unwrap();
    assert!(run.join("eval_gt.csv").is_file() && run.join("summary_gt.txt").is_file());
    let csv = std::fs::read_to_string(run.join("eval_gt.csv")).unwrap();
    let frames: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(frames, ["0", "3", "6", "9"]);
    for line in csv.lines().skip(1) {
        let psnr: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert_eq!(psnr, PSNR_SENTINEL_DB);
    }
    assert!(stdout.contains("0.000"));

    // an empty edit script copies the checkpoint byte for byte
    let script = tmp.path().join("empty.edit");
    std::fs::write(&script, "# nothing\n").unwrap();
    let edited = tmp.path().join("edited.ssgm");
    ok(&["edit", p(&run.join("map.ssgm")), p(&script), p(&edited)]);
    assert_eq!(std::fs::read(&edited).unwrap(), std::fs::read(run.join("map.ssgm")).unwrap());

    // a removal script drops every gaussian of the label
    std::fs::write(&script, "remove wall\n").unwrap();
    ok(&["edit", p(&run.join("map.ssgm")), p(&script), p(&edited)]);
    let (removed, _) = load_checkpoint(&edited).unwrap();
    assert!(removed.len() < map.len());
    let wall = palette.id_by_name("wall").unwrap();
    assert!(removed.semantic_colors().iter().all(|c| palette.nearest(c).id != wall));
}

#[test]
fn no_semantic_ablation_marks_metric_inapplicable() {
    let tmp = tempfile::tempdir().unwrap();
    let (seq, run) = (tmp.path().join("seq"), tmp.path().join("run"));
    synth(&seq, 4, 1);
    let mut args = vec!["run", p(&seq), p(&run), "--ablate", "no-semantic"];
    args.extend_from_slice(FAST);
    ok(&args);
    let log = std::fs::read_to_string(run.join("loss_log.csv")).unwrap();
    assert!(!log.lines().next().unwrap().contains("semantic"));
    let cols = log.lines().next().unwrap().split(',').count();
    assert!(log.lines().all(|l| l.split(',').count() == cols));
    let eval = std::fs::read_to_string(run.join("eval.csv")).unwrap();
    assert!(eval.lines().skip(1).all(|l| l.ends_with(",n/a")));
    assert!(std::fs::read_to_string(run.join("summary.txt")).unwrap().contains("n/a"));
    let manifest = RunManifest::load(&run.join("manifest.json")).unwrap();
    assert_eq!(manifest.ablations, ["no-semantic"]);
    assert_eq!(manifest.config["use_semantic"], "false");
}

#[test]
fn ground_truth_injection_gives_zero_ate() {
    let tmp = tempfile::tempdir().unwrap();
    let (seq, run) = (tmp.path().join("seq"), tmp.path().join("run"));
    synth(&seq, 4, 2);
    let mut args = vec!["run", p(&seq), p(&run), "--gt-poses"];
    args.extend_from_slice(FAST);
    ok(&args);
    let est: Vec<CameraPose> = read_trajectory(&run.join("trajectory.txt")).unwrap().into_iter().map(|e| e.1).collect();
    let gt = load_sequence(&seq, false).unwrap().gt_poses.unwrap();
    let r = ate(&est, &anchor_trajectory(&gt), false).unwrap();
    assert!(r.rmse_cm < 1e-9, "{r:?}");
    let log = std::fs::read_to_string(run.join("loss_log.csv")).unwrap();
    assert_eq!(log.lines().filter(|l| l.contains(",injected,")).count(), 3);
}

#[test]
fn identical_inputs_give_identical_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let seq = tmp.path().join("seq");
    synth(&seq, 4, 3);
    let cfg = tmp.path().join("cfg.txt");
    std::fs::write(&cfg, "iters_track = 5\niters_map = 5\niters_map_first = 30\nkeyframe_interval = 1\ncheckpoint_every = 2\n").unwrap();
    let runs: Vec<PathBuf> = (0..2).map(|i| tmp.path().join(format!("run{i}"))).collect();
    for r in &runs {
        ok(&["run", p(&seq), p(r), "--config", p(&cfg), "--iters_track", "6", "--seed", "11"]);
    }
    for f in ["trajectory.txt", "map.ssgm", "keyframes.csv", "checkpoints/map_000001.ssgm", "checkpoints/map_000003.ssgm"] {
        assert_eq!(std::fs::read(runs[0].join(f)).unwrap(), std::fs::read(runs[1].join(f)).unwrap(), "{f} differs");
    }
    // flags override the config file
    let manifest = RunManifest::load(&runs[0].join("manifest.json")).unwrap();
    assert_eq!(manifest.config["iters_track"], "6");
    assert_eq!(manifest.config["iters_map"], "5");
}

#[test]
fn synth_is_deterministic_per_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let dirs: Vec<PathBuf> = ["a", "b", "c"].iter().map(|d| tmp.path().join(d)).collect();
    synth(&dirs[0], 3, 9);
    synth(&dirs[1], 3, 9);
    synth(&dirs[2], 3, 10);
    let (a, b, c) = (tree_hashes(&dirs[0]), tree_hashes(&dirs[1]), tree_hashes(&dirs[2]));
    assert!(a.len() > 10);
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn empty_pose_list_renders_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let seq = tmp.path().join("seq");
    synth(&seq, 2, 0);
    let poses = tmp.path().join("none.txt");
    write_trajectory(&poses, &[]).unwrap();
    let out = tmp.path().join("out");
    ok(&["render", p(&seq.join("gt_map.ssgm")), p(&poses), p(&seq.join("intrinsics.txt")), p(&out)]);
    assert!(!out.exists());
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("missing");
    let out = tmp.path().join("out");
    assert_eq!(bin(&["--help"]).status.code(), Some(0));
    assert_eq!(bin(&["--version"]).status.code(), Some(0));
    assert_eq!(bin(&[]).status.code(), Some(1));
    assert_eq!(bin(&["run", "--no-such-flag", "a", "b"]).status.code(), Some(1));
    assert_eq!(bin(&["run", p(&missing), p(&out), "--ablate", "no-everything"]).status.code(), Some(1));
    assert_eq!(bin(&["run", p(&missing), p(&out), "--t_sil_track", "abc"]).status.code(), Some(1));
    assert_eq!(bin(&["run", p(&missing), p(&out), "--iters_track", "0"]).status.code(), Some(1));
    let err = bin(&["run", p(&missing), p(&out)]);
    assert_eq!(err.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&err.stderr).contains("intrinsics.txt"));
    assert_eq!(bin(&["edit", p(&missing), p(&missing), p(&out)]).status.code(), Some(2));
    let bad_cfg = tmp.path().join("bad.cfg");
    std::fs::write(&bad_cfg, "nonsense line\n").unwrap();
    assert_eq!(bin(&["run", p(&missing), p(&out), "--config", p(&bad_cfg)]).status.code(), Some(2));
}

#[test]
fn run_help_lists_every_config_key() {
    let help = String::from_utf8(ok(&["run", "--help"]).stdout).unwrap();
    for key in semsplat::config::KEYS {
        assert!(help.contains(&format!("--{key} ")), "--{key} missing from help");
    }
}
