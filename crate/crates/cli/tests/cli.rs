use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ilcmbk(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ilcmbk"))
        .args(args)
        .env("ILCMBK_OUT", out)
        .output()
        .expect("binary runs")
}

fn read_all(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

#[test]
fn run_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let o = ilcmbk(
        &[
            "run",
            "--task",
            "auto_reset_button",
            "--method",
            "ilc_mbk",
            "--iterations",
            "750",
            "--dt",
            "0.05",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let run_dir = dir.path().join("auto_reset_button/ilc_mbk");
    let names: Vec<_> = read_all(&run_dir).into_iter().map(|(n, _)| n).collect();
    assert_eq!(names, ["certificate.json", "curve.csv", "summary.json"]);
    let csv = fs::read_to_string(run_dir.join("curve.csv")).unwrap();
    assert_eq!(csv.lines().count(), 751);
}

#[test]
fn reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for method in ["ilc_mbk", "mfac", "admittance"] {
        let args = [
            "run",
            "--task",
            "emergency_press",
            "--method",
            method,
            "--iterations",
            "80",
            "--seed",
            "5",
        ];
        assert!(ilcmbk(&args, a.path()).status.success());
        assert!(ilcmbk(&args, b.path()).status.success());
        let sub = format!("emergency_press/{method}");
        assert_eq!(
            read_all(&a.path().join(&sub)),
            read_all(&b.path().join(&sub)),
            "{method}"
        );
    }
}

#[test]
fn bad_method_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = ilcmbk(&["run", "--method", "bogus"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bad_values_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["run", "--task", "nope"][..],
        &["run", "--dt", "-1"],
        &["run", "--iterations", "zero"],
        &["certify", "--alpha", "0"],
        &["sweep", "--eta", "3.0", "--iterations", "2"],
    ] {
        let o = ilcmbk(args, dir.path());
        assert_eq!(
            o.status.code(),
            Some(2),
            "{args:?}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
}

#[test]
fn divergence_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let preset = dir.path().join("stiff.toml");
    // environment far stiffer than the admittance spring: pure admittance blows up
    fs::write(
        &preset,
        r#"
name = "stiff"
[admittance]
m = 1.0
b = 0.0
k = 1.0
[motion]
depth = 0.01
t_end = 2.0
initial_state = [-0.01, 0.0]
[force_law]
breakpoints = [[0.0, 0.0], [0.01, 1000.0]]
"#,
    )
    .unwrap();
    let o = ilcmbk(
        &[
            "run",
            "--task",
            preset.to_str().unwrap(),
            "--method",
            "mfac",
            "--iterations",
            "50",
        ],
        dir.path(),
    );
    assert_eq!(
        o.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert!(String::from_utf8_lossy(&o.stderr).contains("diverged"));
}

#[test]
fn certify_prints_certificate() {
    let dir = tempfile::tempdir().unwrap();
    let o = ilcmbk(
        &[
            "certify",
            "--task",
            "emergency_press",
            "--alpha",
            "0.3",
            "--iterations",
            "50",
        ],
        dir.path(),
    );
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    for key in ["\"norm_G\"", "\"norm_Gm\"", "\"passes\"", "\"horizon\""] {
        assert!(text.contains(key), "{text}");
    }
}

#[test]
fn help_documents_defaults() {
    let dir = tempfile::tempdir().unwrap();
    for sub in ["run", "compare", "certify", "sweep"] {
        let o = ilcmbk(&[sub, "--help"], dir.path());
        assert!(o.status.success());
        let text = String::from_utf8(o.stdout).unwrap();
        assert!(text.contains("[default: 750]"), "{sub}");
        assert!(text.contains("[default: 0.05]"), "{sub}");
    }
}

#[test]
fn sweep_and_compare_write_tables() {
    let dir = tempfile::tempdir().unwrap();
    let o = ilcmbk(
        &[
            "sweep",
            "--task",
            "emergency_reset",
            "--alpha",
            "0.1,0.3",
            "--clamp",
            "5,10",
            "--iterations",
            "30",
            "--jobs",
            "2",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("emergency_reset/sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);

    let o = ilcmbk(
        &[
            "compare",
            "--task",
            "second_gear_knob",
            "--iterations",
            "20",
        ],
        dir.path(),
    );
    assert!(o.status.success());
    assert!(dir.path().join("comparison.json").is_file());
    assert!(dir.path().join("second_gear_knob/mfac/curve.csv").is_file());

    let o = ilcmbk(&["presets"], dir.path());
    assert_eq!(String::from_utf8(o.stdout).unwrap().lines().count(), 4);
}
