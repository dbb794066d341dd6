use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn tiledit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tiledit"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = tiledit(args);
    assert!(
        out.status.success(),
        "`tiledit {}` failed: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn fails_with(args: &[&str], exit: i32, code: &str) {
    let out = tiledit(args);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert_eq!(out.status.code(), Some(exit), "stderr: {stderr}");
    assert!(stderr.contains(&format!("error: {code}:")), "stderr: {stderr}");
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Two-tone demo image plus an analytic inversion of it.
fn analytic_setup(dir: &TempDir) -> (PathBuf, PathBuf) {
    let demo = dir.path().join("demo");
    ok(&["demo", "--world", "two-tone", "--size", "32", "--out-dir", s(&demo)]);
    let input = demo.join("warm_0.png");
    let inv = dir.path().join("inv.ltsr");
    #[rustfmt::skip]
    ok(&[
        "invert", "--input", s(&input), "--backend", "analytic", "--tile-size", "16",
        "--steps", "20", "--cache-eps", "--out", s(&inv),
    ]);
    (input, inv)
}

#[test]
fn missing_input_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("x.ltsr");
    fails_with(
        &[
            "invert",
            "--input",
            "/no/such/image.png",
            "--backend",
            "analytic",
            "--out",
            s(&out),
        ],
        2,
        "input-not-found",
    );
    assert!(!out.exists());
}

#[test]
fn out_of_range_lambda_and_wrong_family_mode_are_rejected() {
    let dir = TempDir::new().unwrap();
    let (_, inv) = analytic_setup(&dir);
    let out = dir.path().join("e.png");
    #[rustfmt::skip]
    fails_with(
        &["edit", "--inverted", s(&inv), "--class", "cool", "--lambda", "1.5", "--out", s(&out)],
        2, "scale-out-of-range",
    );
    #[rustfmt::skip]
    fails_with(
        &["edit", "--inverted", s(&inv), "--class", "cool", "--mode", "CFG", "--lambda", "0.5", "--out", s(&out)],
        2, "mode-mismatch",
    );
    assert!(!out.exists());
}

#[test]
fn unknown_backend_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let (input, _) = analytic_setup(&dir);
    let out = dir.path().join("x.ltsr");
    fails_with(
        &[
            "invert",
            "--input",
            s(&input),
            "--backend",
            "some/hub-model",
            "--out",
            s(&out),
        ],
        2,
        "unknown-backend",
    );
}

#[test]
fn inversion_is_deterministic_and_rerunnable() {
    let dir = TempDir::new().unwrap();
    let (input, inv) = analytic_setup(&dir);
    let again = dir.path().join("again.ltsr");
    #[rustfmt::skip]
    ok(&[
        "invert", "--input", s(&input), "--backend", "analytic", "--tile-size", "16",
        "--steps", "20", "--cache-eps", "--out", s(&again),
    ]);
    assert_eq!(std::fs::read(&inv).unwrap(), std::fs::read(&again).unwrap());

    let first = std::fs::read(&inv).unwrap();
    std::fs::remove_file(&inv).unwrap();
    ok(&["rerun", "--manifest", s(&dir.path().join("inv.ltsr.manifest.toml"))]);
    assert_eq!(std::fs::read(&inv).unwrap(), first);
}

#[test]
fn cached_reconstruction_round_trips_the_source() {
    let dir = TempDir::new().unwrap();
    let (input, inv) = analytic_setup(&dir);
    let out = dir.path().join("recon.png");
    let stdout = ok(&["reconstruct", "--inverted", s(&inv), "--use-cache", "--out", s(&out)]);
    assert!(stdout.contains("RMSE"), "{stdout}");
    let a = image::open(&input).unwrap().to_rgb8();
    let b = image::open(&out).unwrap().to_rgb8();
    assert_eq!(a.dimensions(), b.dimensions());
    let worst = a
        .pixels()
        .zip(b.pixels())
        .flat_map(|(p, q)| (0..3).map(move |k| p[k].abs_diff(q[k])))
        .max();
    assert!(worst.unwrap() <= 1, "max channel difference {worst:?}");
}

#[test]
fn sweep_writes_one_output_per_lambda_and_lambda_zero_is_closest_to_source() {
    let dir = TempDir::new().unwrap();
    let (_, inv) = analytic_setup(&dir);
    let sweep = dir.path().join("sweep");
    #[rustfmt::skip]
    ok(&[
        "sweep-lambda", "--inverted", s(&inv), "--class", "cool",
        "--values", "0,0.25,0.5,0.75,1", "--out-dir", s(&sweep),
    ]);
    let pngs = std::fs::read_dir(&sweep)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "png"))
        .count();
    assert_eq!(pngs, 5);

    let report = std::fs::read_to_string(sweep.join("report.csv")).unwrap();
    let rows: Vec<Vec<f64>> = report
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 5);
    assert_eq!(rows[0][0], 0.0);
    assert!(rows[1..].iter().all(|r| r[1] > rows[0][1]), "{report}");
    assert!(rows.iter().all(|r| r[3].is_finite()), "{report}");
}

#[test]
fn recorded_edit_plots_one_panel_per_preview() {
    let dir = TempDir::new().unwrap();
    let (_, inv) = analytic_setup(&dir);
    let traj = dir.path().join("traj");
    let grid = dir.path().join("grid.png");
    #[rustfmt::skip]
    ok(&[
        "edit", "--inverted", s(&inv), "--class", "cool", "--record", s(&traj),
        "--out", s(&dir.path().join("e.png")),
    ]);
    let previews = std::fs::read_dir(&traj)
        .unwrap()
        .filter(|e| {
            e.as_ref()
                .unwrap()
                .file_name()
                .to_string_lossy()
                .starts_with("preview_")
        })
        .count();
    let residuals = std::fs::read_dir(&traj)
        .unwrap()
        .filter(|e| {
            e.as_ref()
                .unwrap()
                .file_name()
                .to_string_lossy()
                .starts_with("residual_")
        })
        .count();
    assert_eq!(residuals, 20);
    assert!(previews > 0);

    ok(&[
        "plot",
        "--trajectory",
        s(&traj),
        "--out",
        s(&grid),
        "--panel-size",
        "32",
    ]);
    let manifest: toml::Table = std::fs::read_to_string(dir.path().join("grid.png.manifest.toml"))
        .unwrap()
        .parse()
        .unwrap();
    assert_eq!(manifest["info"]["panels"].as_integer(), Some(previews as i64));
    let img = image::open(&grid).unwrap();
    assert_eq!(img.height(), 2 * 32 + 3 * 4);
}

#[test]
fn demo_is_reproducible_from_its_seed() {
    let dir = TempDir::new().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["demo", "--size", "64", "--seed", "9", "--out-dir", s(&a)]);
    ok(&["demo", "--size", "64", "--seed", "9", "--out-dir", s(&b)]);
    for name in ["stripes_0.png", "checkers_0.png"] {
        assert_eq!(
            std::fs::read(a.join(name)).unwrap(),
            std::fs::read(b.join(name)).unwrap()
        );
    }
    let out = tiledit(&["demo", "--seed=-1", "--out-dir", s(&a)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed must be in"));
}

#[test]
fn flags_override_config_which_overrides_defaults() {
    let dir = TempDir::new().unwrap();
    let (input, _) = analytic_setup(&dir);
    let config = dir.path().join("tiledit.toml");
    std::fs::write(&config, "[invert]\nsteps = 7\nbackend = \"analytic\"\ntile_size = 16\n").unwrap();
    let steps_of = |out: &Path| -> i64 {
        let m: toml::Table = std::fs::read_to_string(format!("{}.manifest.toml", out.display()))
            .unwrap()
            .parse()
            .unwrap();
        m["schedule"]["num_sample_steps"].as_integer().unwrap()
    };

    let from_config = dir.path().join("c.ltsr");
    ok(&[
        "--config",
        s(&config),
        "invert",
        "--input",
        s(&input),
        "--out",
        s(&from_config),
    ]);
    assert_eq!(steps_of(&from_config), 7);

    let from_flag = dir.path().join("f.ltsr");
    #[rustfmt::skip]
    ok(&["--config", s(&config), "invert", "--input", s(&input), "--steps", "5", "--out", s(&from_flag)]);
    assert_eq!(steps_of(&from_flag), 5);

    let defaults = dir.path().join("d.ltsr");
    #[rustfmt::skip]
    ok(&["invert", "--input", s(&input), "--backend", "analytic", "--tile-size", "16", "--out", s(&defaults)]);
    assert_eq!(steps_of(&defaults), 50);
}
