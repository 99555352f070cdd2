//! End-to-end checks of the command-line interface, driving the compiled
//! binary the way a user would.

use std::path::Path;
use std::process::Command;

fn binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lamina"))
}

fn write_tiny_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("tiny.cfg");
    std::fs::write(
        &path,
        "\
# small and fast: coarse mesh, few iterations
problem = cantilever_2d
mesh.resolution = 12
mesh.remesh_every = 0
feature.min_diameter = 0.4
feature.max_diameter = 0.8
optimizer.max_iters = 3
output.snapshot_every = 10
",
    )
    .unwrap();
    path
}

#[test]
fn run_produces_log_and_snapshots() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_tiny_config(dir.path());
    let out_dir = dir.path().join("results");

    let output = binary()
        .arg("run")
        .arg(&config)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(
        output.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("stopped:"), "{stdout}");
    assert!(stdout.contains("final compliance"), "{stdout}");

    let csv = std::fs::read_to_string(out_dir.join("log.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "iter,F,g1,g2,max_rhobar,elements,seconds");
    assert_eq!(lines.len(), 1 + 3, "three data rows");
    assert!(out_dir.join("design_0000.vtk").exists());
    assert!(out_dir.join("final.vtk").exists());
}

#[test]
fn max_iters_flag_overrides_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_tiny_config(dir.path());
    let out_dir = dir.path().join("short");

    let output = binary()
        .arg("run")
        .arg(&config)
        .arg("--out")
        .arg(&out_dir)
        .arg("--max-iters")
        .arg("2")
        .arg("--no-maxsize")
        .output()
        .unwrap();
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("logged only"), "{stdout}");

    let csv = std::fs::read_to_string(out_dir.join("log.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2);
}

#[test]
fn mesh_info_summarizes_a_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_tiny_config(dir.path());
    let out_dir = dir.path().join("results");
    let status = binary()
        .arg("run")
        .arg(&config)
        .arg("--out")
        .arg(&out_dir)
        .status()
        .unwrap();
    assert!(status.success());

    let output = binary().arg("mesh-info").arg(out_dir.join("final.vtk")).output().unwrap();
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("cells:"), "{stdout}");
    assert!(stdout.contains("2D simplices"), "{stdout}");
    assert!(
        stdout.contains("phi, phi_tilde, rho, rho_tilde, rho_bar"),
        "{stdout}"
    );
    assert!(stdout.contains("cell arrays:  w"), "{stdout}");
}

#[test]
fn strips_diagnostic_prints_the_table() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_tiny_config(dir.path());

    let output = binary().arg("diagnostics").arg("strips").arg(&config).output().unwrap();
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert_eq!(stdout.matches("detection diameter").count(), 3, "{stdout}");
    assert_eq!(stdout.matches("coverage at threshold").count(), 9, "{stdout}");
}

#[test]
fn bad_config_fails_with_a_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.cfg");
    std::fs::write(&path, "problem = cantilever_2d\nmesh.resolutoin = 4\n").unwrap();

    let output = binary().arg("run").arg(&path).output().unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("line 2"), "{stderr}");
    assert!(stderr.contains("mesh.resolutoin"), "{stderr}");
}

#[test]
fn missing_file_mentions_the_path() {
    let output = binary().arg("mesh-info").arg("/no/such/file.vtk").output().unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("/no/such/file.vtk"), "{stderr}");
}
