use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn sfnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sfnet")).args(args).output().expect("spawn sfnet")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL_SCENE: [&str; 6] = ["--height", "32", "--width", "32", "--bands", "16"];
const SMALL_MODEL: [&str; 6] = ["--patch-size", "7", "--pca-components", "8", "--token-dim", "16"];

fn small_scene(dir: &TempDir, name: &str) -> PathBuf {
    let out = dir.path().join(name);
    let mut args = vec!["synth", "--out", path_str(&out)];
    args.extend(SMALL_SCENE);
    let o = sfnet(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    out
}

#[test]
fn synth_is_deterministic_and_echoes_config() {
    let dir = TempDir::new().unwrap();
    let a = small_scene(&dir, "a.sfnr");
    let b = small_scene(&dir, "b.sfnr");
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    let c = dir.path().join("c.sfnr");
    let o = sfnet(&["--seed", "8", "synth", "--out", path_str(&c), "--height", "32", "--width", "32", "--bands", "16"]);
    assert_eq!(code(&o), 0);
    assert_ne!(fs::read(&a).unwrap(), fs::read(&c).unwrap());
    let first = stdout(&o).lines().next().unwrap().to_string();
    let echoed: serde_json::Value = serde_json::from_str(&first).unwrap();
    assert_eq!(echoed["seed"], 8);
    assert_eq!(echoed["synth"]["height"], 32);
}

fn eval_oa(args: &[&str]) -> f64 {
    let o = sfnet(args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    stdout(&o)
        .lines()
        .find_map(|l| l.strip_prefix("oa: "))
        .and_then(|v| v.split_whitespace().next())
        .unwrap()
        .parse()
        .unwrap()
}

// An untrained network sends each class cluster to an arbitrary label, so a
// single seed lands on a multiple of roughly 1/C; the mean over seeds is chance.
#[test]
fn untrained_model_is_near_chance() {
    let dir = TempDir::new().unwrap();
    let data = small_scene(&dir, "scene.sfnr");
    let seeds: Vec<String> = (1..=8).map(|s| s.to_string()).collect();
    let mean = seeds
        .iter()
        .map(|seed| {
            let mut args = vec!["--seed", seed, "eval", "--data", path_str(&data)];
            args.extend(SMALL_MODEL);
            eval_oa(&args)
        })
        .sum::<f64>()
        / seeds.len() as f64;
    assert!((mean - 1.0 / 6.0).abs() <= 0.15, "mean oa {mean}");
}

#[test]
fn bench_full_keep_matches_dense() {
    let o = sfnet(&["bench", "--n", "256", "--d", "64", "--iters", "2"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let dev: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("max deviation alpha=1 vs dense: "))
        .unwrap()
        .trim()
        .parse()
        .unwrap();
    assert!(dev < 1e-6, "deviation {dev}");
    assert!(text.contains("dense: "));
}

#[test]
fn gradcheck_passes() {
    let o = sfnet(&["gradcheck", "--max-coords", "64"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert!(stdout(&o).contains("worst relative error"));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&sfnet(&["synth", "--bogus"])), 1);
    assert_eq!(code(&sfnet(&["frobnicate"])), 1);
    assert_eq!(code(&sfnet(&["--help"])), 0);
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("x.sfnr");
    assert_eq!(code(&sfnet(&["synth", "--out", path_str(&out), "--classes", "0"])), 1);

    let cfg = dir.path().join("run.json");
    fs::write(&cfg, r#"{"model": {"patch_sise": 9}}"#).unwrap();
    let o = sfnet(&["--config", path_str(&cfg), "synth", "--out", path_str(&out)]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("patch_sise"));
}

#[test]
fn bad_data_exits_two_and_names_the_file() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("missing.sfnr");
    let o = sfnet(&["eval", "--data", path_str(&missing)]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing.sfnr"));

    let data = small_scene(&dir, "scene.sfnr");
    let bytes = fs::read(&data).unwrap();
    let cut = dir.path().join("cut.sfnr");
    fs::write(&cut, &bytes[..bytes.len() / 2]).unwrap();
    let o = sfnet(&["eval", "--data", path_str(&cut)]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("cut.sfnr"));

    let junk = dir.path().join("junk.sfnm");
    fs::write(&junk, b"not a checkpoint").unwrap();
    let o = sfnet(&["eval", "--data", path_str(&data), "--model", path_str(&junk)]);
    assert_eq!(code(&o), 2);
}

#[test]
fn train_eval_map_pipeline() {
    let dir = TempDir::new().unwrap();
    let data = small_scene(&dir, "scene.sfnr");
    let model = dir.path().join("m.sfnm");
    let mut args = vec!["train", "--data", path_str(&data), "--out", path_str(&model), "--epochs", "2"];
    args.extend(SMALL_MODEL);
    let o = sfnet(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).lines().filter(|l| l.starts_with("epoch ")).count(), 2);
    assert!(model.exists());
    let history = fs::read_to_string(dir.path().join("m.sfnm.history.csv")).unwrap();
    let mut lines = history.lines();
    assert_eq!(lines.next(), Some("epoch,loss,train_accuracy"));
    assert_eq!(lines.count(), 2);

    let csv = dir.path().join("metrics.csv");
    let o = sfnet(&["eval", "--data", path_str(&data), "--model", path_str(&model), "--metrics-csv", path_str(&csv)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let echoed: serde_json::Value = serde_json::from_str(stdout(&o).lines().next().unwrap()).unwrap();
    assert_eq!(echoed["model"]["patch_size"], 7);
    let table = fs::read_to_string(&csv).unwrap();
    assert_eq!(table.lines().next(), Some("class,name,count,correct,accuracy"));
    assert!(table.lines().last().unwrap().starts_with("OA,all,"));

    let maps: Vec<Vec<u8>> = ["a.ppm", "b.ppm"]
        .iter()
        .map(|name| {
            let out = dir.path().join(name);
            let o = sfnet(&["map", "--model", path_str(&model), "--data", path_str(&data), "--out", path_str(&out)]);
            assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
            fs::read(out).unwrap()
        })
        .collect();
    assert_eq!(maps[0], maps[1]);
    assert!(maps[0].starts_with(b"P6\n32 32\n255\n"));
    assert_eq!(maps[0].len(), b"P6\n32 32\n255\n".len() + 32 * 32 * 3);
}

#[test]
fn flags_override_config_file() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("run.json");
    fs::write(&cfg, r#"{"seed": 3, "synth": {"height": 20, "width": 20, "bands": 8}}"#).unwrap();
    let out = dir.path().join("s.sfnr");
    let o = sfnet(&["--config", path_str(&cfg), "synth", "--out", path_str(&out), "--width", "24"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let echoed: serde_json::Value = serde_json::from_str(stdout(&o).lines().next().unwrap()).unwrap();
    assert_eq!(echoed["seed"], 3);
    assert_eq!(echoed["synth"]["seed"], 3);
    assert_eq!(echoed["synth"]["height"], 20);
    assert_eq!(echoed["synth"]["width"], 24);
}
