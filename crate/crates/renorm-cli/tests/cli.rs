//! End-to-end tests of the `renorm` binary: exit-code contract, artifact
//! formats, and byte-identical reruns.

use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_renorm"))
}

fn write(dir: &Path, name: &str, content: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, content).unwrap();
    path
}

fn tmpdir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("renorm-cli-test-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn validate_rotation_exits_zero() {
    let dir = tmpdir("rot");
    let recipe = write(
        &dir,
        "r.recipe",
        "[target]\nmap = rotation(0.125)\n\n[plugin]\nk = 3\n\n[verify]\ngrid = 16x16\n",
    );
    let out = bin()
        .args([
            "validate",
            recipe.to_str().unwrap(),
            "--out",
            dir.join("out").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let report = std::fs::read_to_string(dir.join("out/validate.report")).unwrap();
    assert!(report.contains("pass=true"));
    assert!(report.contains("max_return_time=8"));
    assert!(report.contains("construction=rotation"));
}

#[test]
fn build_without_target_exits_two() {
    let dir = tmpdir("notarget");
    let recipe = write(&dir, "r.recipe", "[plugin]\nk = 4\n");
    let out = bin()
        .args(["build", recipe.to_str().unwrap(), "--out", dir.join("out").to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("missing target"), "stderr: {err}");
}

#[test]
fn parse_error_reports_location_exits_two() {
    let dir = tmpdir("badmap");
    let recipe = write(&dir, "r.recipe", "[target]\nmap = twistt(0.1)\n");
    let out = bin()
        .args(["build", recipe.to_str().unwrap(), "--out", dir.join("out").to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 2"), "stderr: {err}");
}

#[test]
fn failed_check_exits_one() {
    // a twist build with an unreachable tolerance
    let dir = tmpdir("tol");
    let recipe = write(
        &dir,
        "r.recipe",
        "[target]\nmap = twist(0.2 * bump(y, 0.5, 0.5, 1))\n\n[plugin]\nk = 5\ntol = 1e-18\n\n[verify]\ngrid = 12x12\n",
    );
    let out = bin()
        .args(["build", recipe.to_str().unwrap(), "--out", dir.join("out").to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("meets_tol") || err.contains("output_c0_error"), "stderr: {err}");
}

#[test]
fn output_grid_matches_analytic_twist() {
    let dir = tmpdir("grid");
    let recipe = write(
        &dir,
        "r.recipe",
        "[target]\nmap = twist(0.2 * bump(y, 0.5, 0.5, 1))\n\n[plugin]\nk = 5\n\n[verify]\ngrid = 24x24\n",
    );
    let out = bin()
        .args([
            "output-grid",
            recipe.to_str().unwrap(),
            "--out",
            dir.join("out").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.join("out/output_grid.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "theta,y,theta_out,y_out");
    let mut worst = 0.0f64;
    for line in lines {
        let v: Vec<f64> = line.split(',').map(|s| s.parse().unwrap()).collect();
        let (theta, y, theta_out, y_out) = (v[0], v[1], v[2], v[3]);
        // analytic twist: theta + 0.2 * bump(y)
        let u: f64 = (y - 0.5) / 0.5;
        let nu = if u.abs() < 1.0 { 0.2 * (1.0 - 1.0 / (1.0 - u * u)).exp() } else { 0.0 };
        let expect = (theta + nu).rem_euclid(1.0);
        let diff = (theta_out - expect).abs().min(1.0 - (theta_out - expect).abs());
        worst = worst.max(diff);
        assert!((y_out - y).abs() <= 1e-9);
    }
    assert!(worst <= 1e-6, "sup diff vs analytic twist: {worst}");
}

#[test]
fn reports_are_byte_identical_across_runs() {
    let dir = tmpdir("determinism");
    let recipe = write(
        &dir,
        "r.recipe",
        "[target]\nmap = twist(0.15 * bump(y, 0.5, 0.5, 1))\n\n[plugin]\nk = 5\n\n[verify]\ngrid = 16x16\n",
    );
    let mut artifacts = Vec::new();
    for run in 0..2 {
        let out_dir = dir.join(format!("out{run}"));
        for cmd in ["validate", "output-grid"] {
            let out = bin()
                .args([cmd, recipe.to_str().unwrap(), "--out", out_dir.to_str().unwrap()])
                .output()
                .unwrap();
            assert!(out.status.success(), "{cmd} failed");
        }
        artifacts.push((
            std::fs::read(out_dir.join("validate.report")).unwrap(),
            std::fs::read(out_dir.join("output-grid.report")).unwrap(),
            std::fs::read(out_dir.join("output_grid.csv")).unwrap(),
        ));
    }
    assert_eq!(artifacts[0].0, artifacts[1].0, "validate.report differs");
    assert_eq!(artifacts[0].1, artifacts[1].1, "output-grid.report differs");
    assert_eq!(artifacts[0].2, artifacts[1].2, "output_grid.csv differs");
}

#[test]
fn star_command_halves_step() {
    let dir = tmpdir("star");
    let recipe = write(
        &dir,
        "r.recipe",
        "[star]\nleft = twist(0.1 * bump(y, 0.5, 0.5, 1))\nright = fiber(0.05 * bump(y, 0.5, 0.4, 1))\nk = 5\n\n[verify]\ngrid = 16x16\n",
    );
    let out = bin()
        .args(["star", recipe.to_str().unwrap(), "--out", dir.join("out").to_str().unwrap()])
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let report = std::fs::read_to_string(dir.join("out/star.report")).unwrap();
    assert!(report.contains("final_k=6"));
    assert!(report.contains("construction=star"));
    assert!(report.contains("axioms_pass=true"));
}

#[test]
fn measure_command_reports_relation() {
    let dir = tmpdir("measure");
    let recipe = write(
        &dir,
        "r.recipe",
        "[target]\nmap = twist(0.15 * bump(y, 0.5, 0.5, 1))\n\n[plugin]\nk = 5\n\n[verify]\ngrid = 32x32\n\n[measure]\nn = 2000\nseeds = 4\n",
    );
    let out = bin()
        .args(["measure", recipe.to_str().unwrap(), "--out", dir.join("out").to_str().unwrap()])
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let report = std::fs::read_to_string(dir.join("out/measure.report")).unwrap();
    for key in ["invariance_residual", "roundtrip_residual", "tau_bar", "lyapunov_defect"] {
        assert!(report.contains(key), "missing {key} in {report}");
    }
    assert!(report.contains("pass=true"));
}

#[test]
fn lielab_command_runs_battery() {
    let dir = tmpdir("lielab");
    let recipe = write(
        &dir,
        "r.recipe",
        "[lielab]\na = 1.0\nbig_a = 0.6\nt = bump(y, 0, 0.5, 1)\nsamples = 512\n\n[verify]\ngrid = 12x12\n",
    );
    let out = bin()
        .args(["lielab", recipe.to_str().unwrap(), "--out", dir.join("out").to_str().unwrap()])
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let report = std::fs::read_to_string(dir.join("out/lielab.report")).unwrap();
    assert!(report.contains("eigen_residual"));
    assert!(report.contains("trotter_ratio"));
    assert!(report.contains("pass=true"));
}

#[test]
fn universal_command_with_trivial_bands() {
    let dir = tmpdir("universal");
    let recipe = write(
        &dir,
        "r.recipe",
        "[universal]\nband = 0.3, 0.35, 6, identity\nband = 0.2, 0.25, 6, identity\n\n[verify]\ngrid = 12x12\n",
    );
    let out = bin()
        .args([
            "universal",
            recipe.to_str().unwrap(),
            "--out",
            dir.join("out").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let report = std::fs::read_to_string(dir.join("out/universal.report")).unwrap();
    let value = |key: &str| -> f64 {
        report
            .lines()
            .find_map(|l| l.strip_prefix(&format!("{key}=")))
            .unwrap_or_else(|| panic!("missing {key}"))
            .parse()
            .unwrap()
    };
    assert_eq!(value("band0.orbit_volume"), 0.3);
    assert_eq!(value("band1.s"), 0.35);
    assert!(report.contains("pass=true"));
}

#[test]
fn sample_map_imports_roundtrip() {
    // sample a map, then import the table and sample again: identical output
    let dir = tmpdir("import");
    let recipe = write(
        &dir,
        "r.recipe",
        "[target]\nmap = twist(0.1 * bump(y, 0.5, 0.5, 1))\n\n[verify]\ngrid = 48x33\n",
    );
    let out = bin()
        .args([
            "sample-map",
            recipe.to_str().unwrap(),
            "--out",
            dir.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let import_recipe = write(
        &dir,
        "imp.recipe",
        "[target]\nmap = import(\"sample_map.csv\")\n\n[verify]\ngrid = 16x16\n",
    );
    let out = bin()
        .args([
            "sample-map",
            import_recipe.to_str().unwrap(),
            "--out",
            dir.join("out2").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.join("out2/sample_map.csv")).unwrap();
    // interpolated displacement should track the analytic twist closely
    for line in csv.lines().skip(1) {
        let v: Vec<f64> = line.split(',').map(|s| s.parse().unwrap()).collect();
        let u: f64 = (v[1] - 0.5) / 0.5;
        let nu = if u.abs() < 1.0 { 0.1 * (1.0 - 1.0 / (1.0 - u * u)).exp() } else { 0.0 };
        let expect = (v[0] + nu).rem_euclid(1.0);
        let diff = (v[2] - expect).abs().min(1.0 - (v[2] - expect).abs());
        assert!(diff <= 1e-4, "import interpolation diff {diff}");
    }
}
