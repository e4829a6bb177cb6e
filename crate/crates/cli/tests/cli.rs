use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use dmaop_core::io::SolutionFile;

const SQUARE_TO_DISC: &str = r#"{
  "domain": {"polygon": [[0,0],[1,0],[1,1],[0,1]]},
  "target": {"disc": {"center": [0,0], "radius": 1}},
  "variant": "dmaop",
  "mesh": {"h": 0.25}
}"#;

const IDENTITY: &str = r#"{
  "domain": {"polygon": [[0,0],[1,0],[1,1],[0,1]]},
  "target": {"polygon": [[0,0],[1,0],[1,1],[0,1]]},
  "variant": "ldmaop",
  "reference": "identity"
}"#;

fn dmaop(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dmaop"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn solved(dir: &Path) -> Output {
    fs::write(dir.join("p.json"), SQUARE_TO_DISC).unwrap();
    let o = dmaop(dir, &["solve", "--config", "p.json", "--out-dir", "out"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    o
}

#[test]
fn solve_writes_solution_and_mesh() {
    let dir = tempfile::tempdir().unwrap();
    let o = solved(dir.path());
    assert!(stdout(&o).contains("cost"));
    let text = fs::read_to_string(dir.path().join("out/solution.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert!(v["cost"].as_f64().unwrap() >= 0.0);
    assert_eq!(v["N"], 25);
    assert!(dir.path().join("out/mesh.json").exists());
}

#[test]
fn missing_target_names_field() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("p.json"), r#"{"domain": {"polygon": [[0,0],[1,0],[1,1]]}}"#).unwrap();
    let o = dmaop(dir.path(), &["solve", "--config", "p.json"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("target"), "{}", stderr(&o));
}

#[test]
fn malformed_config_reports_position() {
    let dir = tempfile::tempdir().unwrap();
    let bad = SQUARE_TO_DISC.replace("\"radius\": 1", "\"radius\": \"one\"");
    fs::write(dir.path().join("p.json"), bad).unwrap();
    let o = dmaop(dir.path(), &["solve", "--config", "p.json"]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("target.disc.radius") && err.contains("line 3"), "{err}");
}

#[test]
fn mesh_in_with_wrong_dimension() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("p.json"), SQUARE_TO_DISC).unwrap();
    let tet = r#"{"dim": 3, "vertices": [[0,0,0],[1,0,0],[0,1,0],[0,0,1]], "simplices": [[0,1,2,3]]}"#;
    fs::write(dir.path().join("m3.json"), tet).unwrap();
    let o = dmaop(dir.path(), &["solve", "--config", "p.json", "--mesh-in", "m3.json"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("dimension"), "{}", stderr(&o));

    let lying = r#"{"dim": 3, "vertices": [[0,0],[1,0],[0,1]], "simplices": [[0,1,2]]}"#;
    fs::write(dir.path().join("m.json"), lying).unwrap();
    let o = dmaop(dir.path(), &["solve", "--config", "p.json", "--mesh-in", "m.json"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn mesh_in_reproduces_generated_mesh() {
    let dir = tempfile::tempdir().unwrap();
    solved(dir.path());
    let o = dmaop(
        dir.path(),
        &["solve", "--config", "p.json", "--mesh-in", "out/mesh.json", "--out-dir", "again"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(!dir.path().join("again/mesh.json").exists());
    let a = fs::read(dir.path().join("out/solution.json")).unwrap();
    let b = fs::read(dir.path().join("again/solution.json")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn iteration_cap_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let capped = SQUARE_TO_DISC.replace(
        "\"mesh\"",
        "\"solver\": {\"max_outer\": 1, \"max_newton\": 2, \"fallback\": false},\n  \"mesh\"",
    );
    fs::write(dir.path().join("p.json"), capped).unwrap();
    let o = dmaop(dir.path(), &["solve", "--config", "p.json"]);
    assert_eq!(o.status.code(), Some(2), "{}{}", stdout(&o), stderr(&o));
    assert!(dir.path().join("solution.json").exists());
}

#[test]
fn verify_accepts_feasible_and_names_corrupted_vertex() {
    let dir = tempfile::tempdir().unwrap();
    solved(dir.path());
    let o = dmaop(dir.path(), &["verify", "--solution", "out/solution.json"]);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains("cycle_check"));
    assert!(stdout(&o).contains("verdict          ok"));

    let path = dir.path().join("out/solution.json");
    let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    v["eta"][7] = serde_json::json!([3.0, -2.0]);
    fs::write(dir.path().join("bad.json"), serde_json::to_string(&v).unwrap()).unwrap();
    let o = dmaop(dir.path(), &["verify", "--solution", "bad.json"]);
    assert_ne!(o.status.code(), Some(0));
    let err = stderr(&o);
    assert!(err.contains("vertex 7"), "{err}");
}

#[test]
fn verify_runs_assignment_oracle_on_small_meshes() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("p.json"), SQUARE_TO_DISC.replace("0.25", "0.5")).unwrap();
    let o = dmaop(dir.path(), &["solve", "--config", "p.json"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = dmaop(dir.path(), &["verify", "--solution", "solution.json"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("assignment       optimal"), "{}", stdout(&o));
}

#[test]
fn verify_output_survives_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    solved(dir.path());
    let text = fs::read_to_string(dir.path().join("out/solution.json")).unwrap();
    let file = SolutionFile::from_json(&text).unwrap();
    fs::write(dir.path().join("copy.json"), file.to_json().unwrap()).unwrap();
    let a = dmaop(dir.path(), &["verify", "--solution", "out/solution.json"]);
    let b = dmaop(dir.path(), &["verify", "--solution", "copy.json"]);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(stdout(&a), stdout(&b));
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("p.json"), SQUARE_TO_DISC).unwrap();
    for d in ["a", "b"] {
        let o = dmaop(dir.path(), &["solve", "--config", "p.json", "--out-dir", d]);
        assert_eq!(o.status.code(), Some(0));
        let o = dmaop(dir.path(), &["render", "--solution", &format!("{d}/solution.json"), "--out-dir", d]);
        assert_eq!(o.status.code(), Some(0));
    }
    for f in ["mesh.json", "solution.json", "frame_0.svg", "frame_1.svg", "frame_2.svg", "frame_3.svg"] {
        let a = fs::read(dir.path().join("a").join(f)).unwrap();
        let b = fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f} differs");
    }
}

#[test]
fn timings_flag_records_wall_time() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("p.json"), SQUARE_TO_DISC).unwrap();
    let o = dmaop(dir.path(), &["solve", "--config", "p.json", "--timings"]);
    assert_eq!(o.status.code(), Some(0));
    let text = fs::read_to_string(dir.path().join("solution.json")).unwrap();
    assert!(text.contains("wall_time_s"));
}

#[test]
fn study_writes_three_rows_and_slope() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("p.json"), IDENTITY).unwrap();
    let o = dmaop(dir.path(), &["study", "--config", "p.json", "--h", "0.5,0.34,0.25"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("study.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 5, "{csv}");
    assert_eq!(lines[0], "N,h,cost,two_sided,sup_err,runtime_s");
    assert!(lines[4].starts_with("# slope_cost_vs_N,"));
    for row in &lines[1..4] {
        let cols: Vec<&str> = row.split(',').collect();
        assert_eq!(cols.len(), 6);
        let sup: f64 = cols[4].parse().unwrap();
        assert!((0.0..0.1).contains(&sup));
    }
    let o = dmaop(dir.path(), &["study", "--config", "p.json", "--h", "0.25,0.5,0.1"]);
    assert_eq!(o.status.code(), Some(1));
}

fn attr(line: &str, name: &str) -> f64 {
    let key = format!("{name}=\"");
    let start = line.find(&key).unwrap() + key.len();
    let end = start + line[start..].find('"').unwrap();
    line[start..end].parse().unwrap()
}

#[test]
fn render_frames() {
    let dir = tempfile::tempdir().unwrap();
    solved(dir.path());
    let o = dmaop(dir.path(), &["render", "--solution", "out/solution.json", "--out-dir", "out"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let frames: Vec<String> = (0..4)
        .map(|k| fs::read_to_string(dir.path().join(format!("out/frame_{k}.svg"))).unwrap())
        .collect();
    assert!(!dir.path().join("out/frame_4.svg").exists());
    assert!(frames[0].contains("t = 0.0000"));
    // 32 source triangles plus the target outline
    assert_eq!(frames[0].matches("<polygon").count(), 33);
    assert_eq!(frames[0].matches("<circle").count(), 25);

    // the last polygon is the unit-disc outline; every t = 1 point lies inside it
    let outline = frames[3].lines().find(|l| l.contains("fill=\"none\"")).unwrap();
    let start = outline.find("points=\"").unwrap() + 8;
    let end = start + outline[start..].find('"').unwrap();
    let pts: Vec<(f64, f64)> = outline[start..end]
        .split(' ')
        .map(|p| {
            let (x, y) = p.split_once(',').unwrap();
            (x.parse().unwrap(), y.parse().unwrap())
        })
        .collect();
    let cx = pts.iter().map(|p| p.0).sum::<f64>() / pts.len() as f64;
    let cy = pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64;
    let r = pts.iter().map(|p| (p.0 - cx).hypot(p.1 - cy)).fold(0.0, f64::max);
    for line in frames[3].lines().filter(|l| l.starts_with("<circle")) {
        let d = (attr(line, "cx") - cx).hypot(attr(line, "cy") - cy);
        assert!(d <= r + 0.75 + 1e-3, "{line}");
    }

    let o = dmaop(dir.path(), &["render", "--solution", "out/solution.json", "--times", "0,1.5"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn eval_potential_at_points() {
    let dir = tempfile::tempdir().unwrap();
    solved(dir.path());
    fs::write(dir.path().join("pts.csv"), "x,y\n0,0\n0.5,0.5\n1,0.25\n").unwrap();
    let o = dmaop(dir.path(), &["eval", "--solution", "out/solution.json", "--points", "pts.csv"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("values.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "x0,x1,phi,selector,eta0,eta1");
    assert_eq!(lines.len(), 4);
    let first: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(first[2].parse::<f64>().unwrap(), 0.0);
    for l in &lines[1..] {
        let c: Vec<f64> = l.split(',').map(|v| v.parse().unwrap()).collect();
        assert!(c[3] < 25.0);
        assert!(c[4].hypot(c[5]) <= 1.0 + 1e-8);
    }
}

#[test]
fn mesh_subcommand_reports_quality() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("p.json"), SQUARE_TO_DISC).unwrap();
    let o = dmaop(dir.path(), &["mesh", "--config", "p.json", "--h", "0.5", "--out", "m.json"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("vertices      9"));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("m.json")).unwrap()).unwrap();
    assert_eq!(v["dim"], 2);
    assert_eq!(v["simplices"].as_array().unwrap().len(), 8);
}

#[test]
fn threads_flag_is_accepted() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("p.json"), SQUARE_TO_DISC).unwrap();
    let o = dmaop(dir.path(), &["--threads", "2", "solve", "--config", "p.json", "--out-dir", "t2"]);
    assert_eq!(o.status.code(), Some(0));
    solved(dir.path());
    let a = fs::read(dir.path().join("t2/solution.json")).unwrap();
    let b = fs::read(dir.path().join("out/solution.json")).unwrap();
    assert_eq!(a, b);
}
