use std::path::Path;
use std::process::{Command, Output};

fn polsar(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_polsar"))
        .args(args)
        .arg("--out-dir")
        .arg(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = polsar(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

const SMALL: &[&str] = &["--height", "48", "--width", "48", "--voronoi-seeds", "8"];

#[test]
fn staged_commands_chain_together() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let p = |name: &str| dir.join(name).to_str().unwrap().to_string();

    let mut synth = vec!["synth", "--seed", "3"];
    synth.extend_from_slice(SMALL);
    ok(dir, &synth);
    for f in ["scene.pt3", "truth.plb", "truth.png"] {
        assert!(dir.join(f).exists(), "{f}");
    }

    ok(dir, &["features", "--coherency", &p("scene.pt3")]);
    ok(
        dir,
        &[
            "train",
            "--features",
            &p("features.pfc"),
            "--labels",
            &p("truth.plb"),
            "--train-frac",
            "0.05",
        ],
    );
    assert!(dir.join("model.plm").exists());
    assert!(dir.join("train_set.json").exists());

    ok(
        dir,
        &[
            "predict",
            "--model",
            &p("model.plm"),
            "--features",
            &p("features.pfc"),
            "--coherency",
            &p("scene.pt3"),
        ],
    );
    let bp: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("bp.json")).unwrap()).unwrap();
    assert!(bp["iterations"].as_u64().unwrap() >= 1);

    let stdout = ok(
        dir,
        &[
            "eval",
            "--pred",
            &p("labels.plb"),
            "--truth",
            &p("truth.plb"),
            "--train-set",
            &p("train_set.json"),
        ],
    );
    let metrics: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert!(metrics["overall_ca"].as_f64().unwrap() > 50.0);
}

#[test]
fn predict_without_coherency_needs_no_mrf() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let p = |name: &str| dir.join(name).to_str().unwrap().to_string();
    let mut synth = vec!["synth"];
    synth.extend_from_slice(SMALL);
    ok(dir, &synth);
    ok(
        dir,
        &[
            "features",
            "--coherency",
            &p("scene.pt3"),
            "--feature-mode",
            "raw",
        ],
    );
    ok(
        dir,
        &[
            "train",
            "--features",
            &p("features.pfc"),
            "--labels",
            &p("truth.plb"),
        ],
    );

    let args = [
        "predict",
        "--model",
        &p("model.plm"),
        "--features",
        &p("features.pfc"),
    ];
    let out = polsar(dir, &args);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--no-mrf"));

    let mut no_mrf = args.to_vec();
    no_mrf.push("--no-mrf");
    ok(dir, &no_mrf);
    assert!(dir.join("labels.png").exists());
}

#[test]
fn segment_reads_config_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("run.toml");
    std::fs::write(
        &config,
        "seed = 5\nsynth_height = 40\nsynth_width = 40\nsynth_voronoi_seeds = 6\ntrain_frac = 0.05\n",
    )
    .unwrap();
    let runs: Vec<_> = ["a", "b"]
        .iter()
        .map(|name| {
            let dir = tmp.path().join(name);
            let stdout = ok(
                &dir,
                &[
                    "segment",
                    "--config",
                    config.to_str().unwrap(),
                    "--alpha-s",
                    "3",
                ],
            );
            (
                stdout,
                std::fs::read(dir.join("metrics.json")).unwrap(),
                std::fs::read(dir.join("labels.png")).unwrap(),
            )
        })
        .collect();
    assert_eq!(runs[0], runs[1]);
    let metrics: serde_json::Value = serde_json::from_slice(&runs[0].1).unwrap();
    assert_eq!(metrics["alpha_s"], 3.0);
}

#[test]
fn ablate_prints_every_row() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("run.toml");
    std::fs::write(
        &config,
        "synth_height = 40\nsynth_width = 40\nsynth_voronoi_seeds = 6\n",
    )
    .unwrap();
    let stdout = ok(
        tmp.path(),
        &["ablate", "--config", config.to_str().unwrap()],
    );
    for row in ["raw", "dwt2d", "dwt3d", "dwt3d+mrf"] {
        assert!(
            stdout.lines().any(|l| l.starts_with(row)),
            "{row} missing:\n{stdout}"
        );
    }
    assert!(tmp.path().join("ablation.json").exists());
}

#[test]
fn set_overrides_any_config_key() {
    let tmp = tempfile::tempdir().unwrap();
    let stdout = ok(
        tmp.path(),
        &[
            "segment",
            "--set",
            "synth_height=32",
            "--set",
            "synth_width=36",
            "--set",
            "synth_voronoi_seeds=6",
            "--set",
            "max_sweeps=3",
            "--set",
            "kernel=linear-label",
        ],
    );
    let metrics: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(metrics["kernel"], "linear-label");
    assert!(metrics["bp"]["iterations"].as_u64().unwrap() <= 3);
    let out = polsar(tmp.path(), &["segment", "--set", "bogus=1"]);
    assert!(!out.status.success());
}

#[test]
fn bad_flags_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let out = polsar(tmp.path(), &["segment", "--feature-mode", "dwt4d"]);
    assert!(!out.status.success());
    let out = polsar(tmp.path(), &["segment", "--kernel", "huber"]);
    assert!(!out.status.success());
}
