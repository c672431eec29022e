use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const LEAVES: &[&[&str]] = &[
    &[],
    &["synth", "humanoid"],
    &["markers", "place"],
    &["labels", "densify"],
    &["pose", "sample"],
    &["pose", "apply"],
    &["render"],
    &["train"],
    &["infer", "oneshot"],
    &["infer", "multiview"],
    &["match"],
    &["eval"],
    &["bench"],
];

fn vmark(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vmark"))
        .current_dir(dir)
        .env_remove("VMARK_THREADS")
        .env_remove("RUST_LOG")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = vmark(dir, args);
    assert!(
        out.status.success(),
        "vmark {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn error_json(out: &Output) -> Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let last = stderr.lines().last().expect("an error line");
    serde_json::from_str(last).unwrap_or_else(|_| panic!("not JSON: {last}"))
}

fn read_json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

#[test]
fn help_matches_golden_files() {
    let dir = tempfile::tempdir().unwrap();
    let update = std::env::var_os("VMARK_UPDATE_GOLDEN").is_some();
    for path in LEAVES {
        let mut args: Vec<&str> = path.to_vec();
        args.push("--help");
        let out = ok(dir.path(), &args);
        let text = String::from_utf8(out.stdout).unwrap();
        let name = if path.is_empty() {
            "vmark".to_owned()
        } else {
            path.join("_")
        };
        let file = golden_dir().join(format!("{name}.txt"));
        if update {
            std::fs::create_dir_all(golden_dir()).unwrap();
            std::fs::write(&file, &text).unwrap();
            continue;
        }
        let expected = std::fs::read_to_string(&file).unwrap_or_else(|_| panic!("missing {}", file.display()));
        assert_eq!(
            text, expected,
            "help for {name} drifted; rerun with VMARK_UPDATE_GOLDEN=1"
        );
    }
}

#[test]
fn help_lists_every_flag() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(dir.path(), &["labels", "densify", "--help"]);
    let text = String::from_utf8(out.stdout).unwrap();
    for flag in [
        "--mesh",
        "--rig",
        "--markers",
        "--c",
        "--normalization",
        "--solver",
        "--no-clamp",
        "--tol",
        "--seed",
        "--export",
        "--out",
        "--threads",
        "--config",
        "--dry-run",
        "--manifest",
    ] {
        assert!(text.contains(flag), "{flag} missing from help");
    }
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = vmark(dir.path(), &["match", "--bogus", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"]["kind"], "usage");
}

#[test]
fn missing_input_fails_with_error_line() {
    let dir = tempfile::tempdir().unwrap();
    let out = vmark(
        dir.path(),
        &[
            "match",
            "--source",
            "nope.vmrk",
            "--target",
            "nope.vmrk",
            "--out",
            "a.map",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
    let e = error_json(&out);
    assert!(e["error"]["message"].as_str().unwrap().contains("nope.vmrk"));
    assert!(!dir.path().join("a.map").exists());
}

#[test]
fn core_errors_carry_their_kind() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.vmrk"), b"not a label file").unwrap();
    let out = vmark(
        dir.path(),
        &[
            "match", "--source", "bad.vmrk", "--target", "bad.vmrk", "--out", "a.map",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_json(&out)["error"]["kind"], "parse");
}

/// Writes the built-in humanoid at a coarse resolution.
fn template(dir: &Path) {
    ok(dir, &["synth", "humanoid", "--cell", "0.04", "--out", "t"]);
}

#[test]
fn dry_run_validates_without_writing() {
    let dir = tempfile::tempdir().unwrap();
    template(dir.path());
    let out = ok(
        dir.path(),
        &[
            "--dry-run",
            "labels",
            "densify",
            "--mesh",
            "t/humanoid.ply",
            "--rig",
            "t/humanoid.rig",
            "--out",
            "l.vmrk",
        ],
    );
    let m: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(m["dry_run"], true);
    assert_eq!(m["command"], "labels densify");
    assert_eq!(m["inputs"].as_array().unwrap().len(), 2);
    assert!(!dir.path().join("l.vmrk").exists());
    assert!(!dir.path().join("l.vmrk.manifest.json").exists());

    let bad = vmark(
        dir.path(),
        &[
            "--dry-run",
            "labels",
            "densify",
            "--mesh",
            "t/humanoid.ply",
            "--rig",
            "t/humanoid.rig",
            "--c=-1",
            "--out",
            "l.vmrk",
        ],
    );
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn config_values_yield_to_flags() {
    let dir = tempfile::tempdir().unwrap();
    template(dir.path());
    std::fs::write(
        dir.path().join("run.toml"),
        "threads = 1\n[pose.sample]\ncount = 4\nseed = 9\n",
    )
    .unwrap();
    let count_frames = |p: &str| {
        std::fs::read_to_string(dir.path().join(p))
            .unwrap()
            .lines()
            .filter(|l| l.starts_with("frame"))
            .count()
    };
    ok(
        dir.path(),
        &[
            "--config",
            "run.toml",
            "pose",
            "sample",
            "--rig",
            "t/humanoid.rig",
            "--out",
            "a.motion",
        ],
    );
    assert_eq!(count_frames("a.motion"), 4);
    ok(
        dir.path(),
        &[
            "--config",
            "run.toml",
            "pose",
            "sample",
            "--rig",
            "t/humanoid.rig",
            "--count",
            "2",
            "--out",
            "b.motion",
        ],
    );
    assert_eq!(count_frames("b.motion"), 2);
    let m = read_json(dir.path().join("b.motion.manifest.json"));
    assert_eq!(m["seed"], 9);
    assert_eq!(m["threads"], 1);
    let argv: Vec<&str> = m["argv"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap())
        .collect();
    assert!(!argv.contains(&"--config"));
}

#[test]
fn config_schema_violations_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    template(dir.path());
    for (name, text) in [
        ("unknown_key.toml", "[pose.sample]\ncolour = 3\n"),
        ("unknown_section.toml", "[posing]\ncount = 3\n"),
        ("bad_value.toml", "[pose.sample]\ncount = \"many\"\n"),
        ("non_global.toml", "count = 3\n"),
    ] {
        std::fs::write(dir.path().join(name), text).unwrap();
        let out = vmark(
            dir.path(),
            &[
                "--config",
                name,
                "pose",
                "sample",
                "--rig",
                "t/humanoid.rig",
                "--out",
                "a.motion",
            ],
        );
        assert_eq!(out.status.code(), Some(2), "{name} accepted");
        assert_eq!(error_json(&out)["error"]["kind"], "usage");
    }
}

#[test]
fn threads_env_mirrors_flag() {
    let dir = tempfile::tempdir().unwrap();
    template(dir.path());
    let out = Command::new(env!("CARGO_BIN_EXE_vmark"))
        .current_dir(dir.path())
        .env("VMARK_THREADS", "1")
        .args([
            "--dry-run",
            "pose",
            "sample",
            "--rig",
            "t/humanoid.rig",
            "--out",
            "a.motion",
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let m: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(m["threads"], 1);
}

#[test]
fn manifest_replays_the_run() {
    let a = tempfile::tempdir().unwrap();
    template(a.path());
    ok(
        a.path(),
        &[
            "pose",
            "sample",
            "--rig",
            "t/humanoid.rig",
            "--seed",
            "3",
            "--count",
            "2",
            "--out",
            "p.motion",
        ],
    );
    ok(
        a.path(),
        &[
            "pose",
            "apply",
            "--mesh",
            "t/humanoid.ply",
            "--rig",
            "t/humanoid.rig",
            "--clip",
            "p.motion",
            "--frame",
            "1",
            "--out",
            "posed.ply",
        ],
    );
    let m = read_json(a.path().join("posed.ply.manifest.json"));

    let b = tempfile::tempdir().unwrap();
    for input in m["inputs"].as_array().unwrap() {
        let rel = input["path"].as_str().unwrap();
        let dst = b.path().join(rel);
        std::fs::create_dir_all(dst.parent().unwrap()).unwrap();
        std::fs::copy(a.path().join(rel), dst).unwrap();
    }
    let argv: Vec<&str> = m["argv"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap())
        .collect();
    ok(b.path(), &argv);
    let replay = read_json(b.path().join("posed.ply.manifest.json"));
    assert_eq!(replay["outputs"][0]["sha256"], m["outputs"][0]["sha256"]);
    assert_eq!(replay["inputs"], m["inputs"]);
}

#[test]
fn pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    template(d);
    ok(
        d,
        &[
            "markers",
            "place",
            "--mesh",
            "t/humanoid.ply",
            "--rig",
            "t/humanoid.rig",
            "--out",
            "t/markers.txt",
        ],
    );
    ok(
        d,
        &[
            "labels",
            "densify",
            "--mesh",
            "t/humanoid.ply",
            "--markers",
            "t/markers.txt",
            "--c",
            "1",
            "--out",
            "t/labels.vmrk",
        ],
    );
    let labels = vmark::softlabel::read_labels(d.join("t/labels.vmrk")).unwrap();
    for v in 0..labels.vertex_count() {
        assert!((labels.column_sum(v) - 1.0).abs() < 1e-5);
    }
    let dm = read_json(d.join("t/labels.vmrk.manifest.json"));
    assert!(dm["summary"]["max_column_sum_deviation"].as_f64().unwrap() < 1e-6);

    ok(
        d,
        &[
            "pose",
            "apply",
            "--mesh",
            "t/humanoid.ply",
            "--rig",
            "t/humanoid.rig",
            "--seed",
            "4",
            "--out",
            "posed.ply",
        ],
    );
    ok(
        d,
        &[
            "render",
            "--mesh",
            "posed.ply",
            "--labels",
            "t/labels.vmrk",
            "--views",
            "2",
            "--width",
            "64",
            "--height",
            "64",
            "--focal",
            "50",
            "--out",
            "views",
        ],
    );
    assert!(d.join("views/view_001.png").exists());
    assert!(d.join("views/view_001.ply.vmrk").exists());
    assert!(d.join("views/manifest.json").exists());

    ok(
        d,
        &[
            "--threads",
            "1",
            "train",
            "--mesh",
            "t/humanoid.ply",
            "--rig",
            "t/humanoid.rig",
            "--labels",
            "t/labels.vmrk",
            "--steps",
            "3",
            "--voxel-size",
            "0.06",
            "--channels",
            "4,8",
            "--normals",
            "--out",
            "model.vmck",
        ],
    );
    let loss = std::fs::read_to_string(d.join("model.vmck.loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 4);

    ok(
        d,
        &[
            "infer",
            "oneshot",
            "--model",
            "model.vmck",
            "--mesh",
            "posed.ply",
            "--out",
            "pred.vmrk",
        ],
    );
    ok(
        d,
        &[
            "infer",
            "oneshot",
            "--model",
            "model.vmck",
            "--depth",
            "views/view_000.png",
            "--out",
            "frame.vmrk",
        ],
    );
    ok(
        d,
        &[
            "infer",
            "multiview",
            "--model",
            "model.vmck",
            "--mesh",
            "posed.ply",
            "--views",
            "4",
            "--width",
            "64",
            "--height",
            "64",
            "--focal",
            "50",
            "--out",
            "mv.vmrk",
        ],
    );
    let pred = vmark::softlabel::read_labels(d.join("pred.vmrk")).unwrap();
    assert_eq!(pred.vertex_count(), labels.vertex_count());

    ok(
        d,
        &[
            "match",
            "--source",
            "pred.vmrk",
            "--target",
            "t/labels.vmrk",
            "--metric",
            "cosine",
            "--out",
            "a.map",
        ],
    );
    let gt: String = (0..labels.vertex_count()).map(|i| format!("{i} {i}\n")).collect();
    std::fs::write(d.join("gt.txt"), gt).unwrap();
    ok(
        d,
        &[
            "eval",
            "--pred",
            "a.map",
            "--gt",
            "gt.txt",
            "--mesh",
            "t/humanoid.ply",
            "--norm",
            "sqrt_area",
            "--out",
            "report",
        ],
    );
    let summary = vmark::correspondence::parse_report_csv(d.join("report/report.csv")).unwrap();
    assert!(summary.normalized_mean_percent.is_finite());
    assert!(d.join("report/cumulative_error.svg").exists());
    let em = read_json(d.join("report/manifest.json"));
    assert_eq!(em["summary"]["pairs"], 1);
}

#[test]
fn bench_writes_percentiles() {
    let dir = tempfile::tempdir().unwrap();
    ok(
        dir.path(),
        &[
            "bench",
            "--runs",
            "3",
            "--warmup",
            "0",
            "--voxel-size",
            "0.05",
            "--out",
            "bench.json",
        ],
    );
    let r = read_json(dir.path().join("bench.json"));
    let (p50, p99) = (r["p50_ms"].as_f64().unwrap(), r["p99_ms"].as_f64().unwrap());
    assert!(p50 > 0.0 && p50 <= p99);
    assert_eq!(r["runs"], 3);
}
