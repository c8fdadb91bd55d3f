use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_fmcaf"));
    cmd.env_remove("FMCAF_SEED");
    cmd
}

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("run.conf");
    std::fs::write(&path, text).unwrap();
    path
}

fn fuse(config: &Path, out: &Path, extra: &[&str]) -> Output {
    bin()
        .arg("--config")
        .arg(config)
        .arg("fuse")
        .arg("--rgb")
        .arg(fixture("pair_rgb.png"))
        .arg("--ir")
        .arg(fixture("pair_ir.png"))
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .unwrap()
}

fn metrics(out: &Output) -> serde_json::Value {
    serde_json::from_str(stdout(out).trim()).unwrap()
}

#[test]
fn selftest_reports_every_property() {
    let out = bin().arg("selftest").output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines.len() >= 12);
    assert!(
        lines
            .iter()
            .all(|l| l.starts_with("PASS ") && l.split(' ').count() == 2),
        "{text}"
    );
}

#[test]
fn print_config_lists_defaults_and_honours_seed_precedence() {
    let out = bin().arg("--print-config").output().unwrap();
    assert!(out.status.success());
    let text = stdout(&out);
    for key in [
        "seed",
        "channels",
        "heads",
        "window",
        "region_grid",
        "topk_ratio",
        "alpha_init",
        "image_size",
    ] {
        assert!(
            text.lines().any(|l| l.starts_with(&format!("{key} = "))),
            "{key} missing"
        );
    }
    assert!(text.contains("seed = 0\n") && text.contains("channels = 32\n"));

    let env = bin().env("FMCAF_SEED", "11").arg("--print-config").output().unwrap();
    assert!(stdout(&env).contains("seed = 11\n"));
    let flag = bin()
        .env("FMCAF_SEED", "11")
        .args(["--seed", "12", "--print-config"])
        .output()
        .unwrap();
    assert!(stdout(&flag).contains("seed = 12\n"));
    let bad = bin()
        .env("FMCAF_SEED", "eleven")
        .arg("--print-config")
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    for text in [
        "colour = red\n",
        "seed = 1\nseed = 2\n",
        "image_size = 60\n",
        "topk_ratio = 0\n",
    ] {
        let cfg = write_config(dir.path(), text);
        let out = bin().arg("--config").arg(&cfg).arg("--print-config").output().unwrap();
        assert_eq!(out.status.code(), Some(2), "{text}");
    }
    let missing = bin()
        .args(["--config", "/definitely/not/here.conf", "selftest"])
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn missing_input_exits_1_and_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "image_size = 64\n");
    let missing = dir.path().join("absent_ir.png");
    let out = bin()
        .arg("--config")
        .arg(&cfg)
        .arg("fuse")
        .arg("--rgb")
        .arg(fixture("pair_rgb.png"))
        .arg("--ir")
        .arg(&missing)
        .arg("--out")
        .arg(dir.path().join("o.png"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("absent_ir.png"), "{}", stderr(&out));
}

#[test]
fn fuse_is_deterministic_and_emits_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "image_size = 64\nseed = 3\n");
    let (a, b) = (dir.path().join("a.png"), dir.path().join("b.png"));
    let diag = dir.path().join("diag");
    let first = fuse(
        &cfg,
        &a,
        &[
            "--emit-mask",
            diag.to_str().unwrap(),
            "--emit-spectrum",
            diag.to_str().unwrap(),
        ],
    );
    assert!(first.status.success(), "{}", stderr(&first));
    let second = fuse(&cfg, &b, &[]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let (m1, m2) = (metrics(&first), metrics(&second));
    for key in [
        "alpha_rgb",
        "alpha_ir",
        "mask_rgb",
        "mask_ir",
        "out_min",
        "out_max",
        "filter_identity",
    ] {
        assert_eq!(m1[key], m2[key], "{key}");
    }
    assert!(m1["wall_ms"].as_f64().unwrap() >= 0.0);
    assert_eq!(m1["alpha_rgb"], 0.2);
    assert!(m1["mask_rgb"].as_u64().unwrap() >= 64 * 64 / 4);
    assert!(m1["out_min"].as_f64().unwrap() >= 0.0 && m1["out_max"].as_f64().unwrap() <= 1.0);
    for name in ["mask_rgb.png", "mask_ir.png", "spectrum_rgb.png", "spectrum_ir.png"] {
        let img = image::open(diag.join(name)).unwrap();
        assert_eq!((img.width(), img.height()), (64, 64), "{name}");
    }
}

#[test]
fn identity_filter_matches_the_unfiltered_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let identity = write_config(dir.path(), "image_size = 64\ntopk_ratio = 1.0\nalpha_init = 0\n");
    let a = dir.path().join("identity.png");
    let out = fuse(&identity, &a, &[]);
    assert!(out.status.success());
    assert_eq!(metrics(&out)["filter_identity"], true);

    let off = write_config(dir.path(), "image_size = 64\nfilter = false\n");
    let b = dir.path().join("off.png");
    let out = fuse(&off, &b, &[]);
    assert!(out.status.success());
    assert_eq!(metrics(&out)["mask_rgb"], serde_json::Value::Null);
    assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());

    let default = write_config(dir.path(), "image_size = 64\n");
    let out = fuse(&default, &dir.path().join("c.png"), &[]);
    assert_eq!(metrics(&out)["filter_identity"], false);
}

#[test]
fn weights_export_import_and_strict_loading() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "image_size = 64\nseed = 4\n");
    let weights = dir.path().join("w.fmcf");
    let out = bin()
        .arg("--config")
        .arg(&cfg)
        .args(["weights", "export", "--out"])
        .arg(&weights)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let import = bin()
        .arg("--config")
        .arg(&cfg)
        .args(["weights", "import", "--in"])
        .arg(&weights)
        .output()
        .unwrap();
    assert!(import.status.success());
    assert_eq!(stdout(&out), stdout(&import));

    // Explicit weights equal to the seeded init reproduce the default output.
    let (a, b) = (dir.path().join("a.png"), dir.path().join("b.png"));
    assert!(fuse(&cfg, &a, &[]).status.success());
    assert!(fuse(&cfg, &b, &["--weights", weights.to_str().unwrap()])
        .status
        .success());
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let bytes = std::fs::read(&weights).unwrap();
    let truncated = dir.path().join("cut.fmcf");
    std::fs::write(&truncated, &bytes[..bytes.len() - 3]).unwrap();
    let out = bin()
        .arg("--config")
        .arg(&cfg)
        .args(["weights", "import", "--in"])
        .arg(&truncated)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("at byte"), "{}", stderr(&out));

    let other = write_config(dir.path(), "image_size = 64\nchannels = 16\n");
    let out = bin()
        .arg("--config")
        .arg(&other)
        .args(["weights", "import", "--in"])
        .arg(&weights)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn bench_single_iteration() {
    let out = bin().args(["bench", "--size", "64", "--iters", "1"]).output().unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let report: serde_json::Value = serde_json::from_str(stdout(&out).trim()).unwrap();
    assert_eq!(report["std_ms"], 0.0);
    assert_eq!(report["iters"], 1);
    assert_eq!(report["size"], 64);
    assert!(report["mean_ms"].as_f64().unwrap() >= report["min_ms"].as_f64().unwrap());
    assert_eq!(
        bin()
            .args(["bench", "--size", "64", "--iters", "0"])
            .output()
            .unwrap()
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn gradcheck_zero_lr_is_constant_and_reproducible() {
    let run = || {
        bin()
            .args(["gradcheck", "--mode", "toward-filtered", "--steps", "3", "--lr", "0"])
            .output()
            .unwrap()
    };
    let out = run();
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("step,alpha_rgb,alpha_ir,loss"));
    let rows: Vec<Vec<String>> = lines
        .clone()
        .take(4)
        .map(|l| l.split(',').map(String::from).collect())
        .collect();
    assert_eq!(rows.len(), 4);
    for (i, row) in rows.iter().enumerate() {
        assert_eq!(row[0], i.to_string());
        assert_eq!(row[1..], rows[0][1..]);
    }
    assert_eq!(text.lines().last(), Some("alpha increased: false"));
    assert_eq!(stdout(&run()), text);
}

#[test]
fn gradcheck_rejects_unknown_mode() {
    let out = bin().args(["gradcheck", "--mode", "sideways"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}
