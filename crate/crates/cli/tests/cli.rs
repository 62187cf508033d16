use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scratch(tag: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("asip-cli-{}-{tag}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    std::fs::create_dir_all(&d).unwrap();
    d
}

fn asip(args: &[&Path]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_asip")).args(args).output().expect("run asip")
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

const SMALL: &str = "[map]\nkind = \"doubling\"\n\n[observable]\nkind = \"cosine\"\nk = 1\n\n\
[grid]\nbins = 1024\n\n[run]\nseed = 3\nn = 512\ntrajectories = 2000\n\n[analysis]\nks_tolerance = 0.05\n";

#[test]
fn clt_writes_density_variance_and_report() {
    let d = scratch("clt");
    let cfg = write(&d, "c.toml", SMALL);
    let out = d.join("out");
    let o = asip(&[Path::new("clt"), &cfg, Path::new("--out"), &out]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["density.csv", "variance.csv", "clt.json", "manifest.json", "summary.txt"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let clt: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("clt.json")).unwrap()).unwrap();
    assert_eq!(clt["pass"], serde_json::Value::Bool(true), "{clt}");
    let header = std::fs::read_to_string(out.join("variance.csv")).unwrap();
    assert!(header.starts_with("lag,correlation,partial_sigma2\n"));
    let _ = std::fs::remove_dir_all(&d);
}

#[test]
fn unknown_key_is_a_config_error_and_writes_nothing() {
    let d = scratch("unknown");
    let cfg = write(&d, "c.toml", &format!("{SMALL}bogus = 1\n"));
    let out = d.join("out");
    let o = asip(&[Path::new("density"), &cfg, Path::new("--out"), &out]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bogus"));
    assert!(!out.exists());
    let _ = std::fs::remove_dir_all(&d);
}

#[test]
fn nonconvergent_density_exits_two() {
    let d = scratch("lsv");
    let cfg = write(
        &d,
        "c.toml",
        "[map]\nkind = \"lsv\"\ngamma = 0.5\n\n[grid]\nscheme = \"uniform\"\nbins = 512\nmax_iter = 3\n",
    );
    let out = d.join("out");
    let o = asip(&[Path::new("density"), &cfg, Path::new("--out"), &out]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("build_ulam"));
    assert!(!out.exists());
    let _ = std::fs::remove_dir_all(&d);
}

#[test]
fn json_format_replaces_csv_tables() {
    let d = scratch("json");
    let cfg = write(&d, "c.toml", SMALL);
    let out = d.join("out");
    let o = asip(&[Path::new("variance"), &cfg, Path::new("--format"), Path::new("json"), Path::new("--out"), &out]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!out.join("variance.csv").exists());
    let rows: Vec<serde_json::Value> =
        serde_json::from_slice(&std::fs::read(out.join("variance_table.json")).unwrap()).unwrap();
    assert!(out.join("variance.json").exists());
    assert!(rows[0].get("partial_sigma2").is_some());
    let _ = std::fs::remove_dir_all(&d);
}

#[test]
fn manifest_rerun_is_byte_identical() {
    let d = scratch("manifest");
    let cfg = write(&d, "c.toml", SMALL);
    let (a, b) = (d.join("a"), d.join("b"));
    let o = asip(&[Path::new("correlations"), &cfg, Path::new("--out"), &a]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let o = asip(&[Path::new("run"), &a.join("manifest.json"), Path::new("--out"), &b]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let mut names: Vec<_> = std::fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(!names.is_empty());
    for n in names {
        assert_eq!(std::fs::read(a.join(&n)).unwrap(), std::fs::read(b.join(&n)).unwrap(), "{n:?}");
    }
    let _ = std::fs::remove_dir_all(&d);
}
