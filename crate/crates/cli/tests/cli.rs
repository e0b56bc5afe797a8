use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn gjn(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gjn")).args(args).current_dir(cwd).output().unwrap()
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

const COLUMN: &str = r#"[network]
d = 2
arrival = ["exp(rate=0.225)", "exp(rate=0.717)"]
service = ["exp(rate=1.0)", "exp(rate=1.0)"]
Q = [[0.0, 0.11], [0.1, 0.0]]
"#;

#[test]
fn validate_reports_rates_and_instability() {
    let dir = tempfile::tempdir().unwrap();
    let ok = write_config(dir.path(), "ok.toml", COLUMN);
    let out = gjn(&["validate", "--config", ok.to_str().unwrap()], dir.path());
    assert!(out.status.success(), "{}", text(&out.stderr));
    let s = text(&out.stdout);
    assert!(s.contains("rho=0.300000") && s.contains("rho=0.750000"), "{s}");
    assert!(s.contains("delta=") && s.contains("a=["));

    let bad = write_config(dir.path(), "bad.toml", &COLUMN.replace("exp(rate=0.717)", "exp(rate=0.99)"));
    let out = gjn(&["validate", "--config", bad.to_str().unwrap()], dir.path());
    assert!(!out.status.success());
    assert!(text(&out.stdout).contains("UNSTABLE station 2"));
    assert!(text(&out.stderr).contains("station 2"));
}

#[test]
fn schema_errors_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let p = write_config(dir.path(), "c.toml", &COLUMN.replace("Q = ", "q = "));
    let out = gjn(&["validate", "--config", p.to_str().unwrap()], dir.path());
    assert!(!out.status.success());
    let e = text(&out.stderr);
    assert!(e.contains('q') && e.contains("line"), "{e}");

    let p = write_config(dir.path(), "d.toml", &COLUMN.replace("exp(rate=1.0)\"]", "exp(rate=-1)\"]"));
    let e = text(&gjn(&["validate", "--config", p.to_str().unwrap()], dir.path()).stderr);
    assert!(e.contains("network.service[1]"), "{e}");
}

#[test]
fn sample_is_reproducible_and_analyzable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", COLUMN);
    let c = cfg.to_str().unwrap();
    for name in ["a.jsonl", "b.jsonl"] {
        let out = gjn(&["sample", "--config", c, "--n", "100", "--seed", "7", "--out", name], dir.path());
        assert!(out.status.success(), "{}", text(&out.stderr));
    }
    let a = std::fs::read(dir.path().join("a.jsonl")).unwrap();
    assert_eq!(a, std::fs::read(dir.path().join("b.jsonl")).unwrap());
    let first: serde_json::Value = serde_json::from_str(text(&a).lines().next().unwrap()).unwrap();
    for key in ["y", "residual_service", "residual_arrival", "tau", "rounds", "draws"] {
        assert!(first.get(key).is_some(), "missing {key}");
    }

    let out = gjn(&["analyze", "--in", "a.jsonl", "--config", c, "--out", "s.csv", "--histogram", "h.csv"], dir.path());
    assert!(out.status.success(), "{}", text(&out.stderr));
    assert!(text(&out.stdout).contains("oracle 3.0000"));
    let csv = std::fs::read_to_string(dir.path().join("s.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.starts_with("station,n,mean"));
    let hist = std::fs::read_to_string(dir.path().join("h.csv")).unwrap();
    let total: u64 = hist.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse::<u64>().unwrap()).sum();
    assert_eq!(total, 100);
}

#[test]
fn sample_requires_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", COLUMN);
    let out = gjn(&["sample", "--config", cfg.to_str().unwrap(), "--n", "3"], dir.path());
    assert!(!out.status.success());
    assert!(text(&out.stderr).contains("seed"));
}

#[test]
fn trace_files_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", COLUMN);
    let out = gjn(
        &["sample", "--config", cfg.to_str().unwrap(), "--n", "2", "--seed", "1", "--out", "s.jsonl", "--trace", "tr", "--trace-index", "1"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", text(&out.stderr));
    let vac = std::fs::read_to_string(dir.path().join("tr/vacation.txt")).unwrap();
    assert!(vac.lines().count() > 1);
    assert!(std::fs::read_to_string(dir.path().join("tr/autonomous.csv")).unwrap().starts_with("station,t,y_prime,x,z"));
    assert!(std::fs::metadata(dir.path().join("tr/walk.csv")).unwrap().len() > 0);
}

#[test]
fn table1_prints_the_five_columns() {
    let dir = tempfile::tempdir().unwrap();
    let out = gjn(&["table1", "--n", "200", "--out", "t.csv"], dir.path());
    assert!(out.status.success(), "{}", text(&out.stderr));
    let s = text(&out.stdout);
    for cell in ["(0.225, 0.717)", "(0.214, 0.827)", "0.4286", "3.0000", "4.0000", "4.5556", "5.2500", "6.1429", "p-value"] {
        assert!(s.contains(cell), "missing {cell} in\n{s}");
    }
    let csv = std::fs::read_to_string(dir.path().join("t.csv")).unwrap();
    assert_eq!(csv.lines().count(), 11);
}

#[test]
fn baseline_and_json_config() {
    let dir = tempfile::tempdir().unwrap();
    let json = r#"{"network": {"d": 1, "arrival": ["exp(rate=0.5)"], "service": ["exp(rate=1)"], "Q": [[0.0]]}, "batch": {"seed": 4}}"#;
    let cfg = write_config(dir.path(), "c.json", json);
    let out = gjn(
        &["baseline", "--config", cfg.to_str().unwrap(), "--burn-in", "100", "--horizon", "1000", "--spacing", "10", "--out", "b.jsonl"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", text(&out.stderr));
    let lines = std::fs::read_to_string(dir.path().join("b.jsonl")).unwrap();
    assert!((99..=101).contains(&lines.lines().count()));
    assert!(lines.starts_with("{\"y\":["));
}
