//! Every bundled spec must reproduce its committed report byte-for-byte with one thread.
//! Set `UPDATE_GOLDEN=1` to rewrite the committed files.

use std::path::{Path, PathBuf};
use std::process::Command;

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn run(kind: &str, spec: &Path, out: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_ipergo"))
        .args([kind, "--spec"])
        .arg(spec)
        .arg("--out")
        .arg(out)
        .args(["--threads", "1"])
        .output()
        .expect("binary runs")
}

fn scratch(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("ipergo-golden-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    d
}

fn specs() -> Vec<(String, PathBuf)> {
    let mut v: Vec<_> = std::fs::read_dir(root().join("specs"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .map(|p| (p.file_stem().unwrap().to_string_lossy().into_owned(), p))
        .collect();
    v.sort();
    v
}

#[test]
fn bundled_specs_match_golden_reports() {
    let update = std::env::var_os("UPDATE_GOLDEN").is_some();
    let golden = root().join("tests/golden");
    let specs = specs();
    assert_eq!(specs.len(), 13, "one bundled spec per subcommand");
    let mut mismatches = Vec::new();
    for (kind, spec) in &specs {
        let dir = scratch(kind);
        let out = run(kind, spec, &dir);
        assert_eq!(
            out.status.code(),
            Some(0),
            "{kind}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        for ext in ["json", "csv"] {
            let name = format!("{kind}.{ext}");
            let produced = dir.join(&name);
            if !produced.exists() {
                continue;
            }
            let got = std::fs::read(&produced).unwrap();
            if update {
                std::fs::write(golden.join(&name), &got).unwrap();
            } else {
                let want = std::fs::read(golden.join(&name)).unwrap_or_default();
                if got != want {
                    mismatches.push(name);
                }
            }
        }
        let _ = std::fs::remove_dir_all(&dir);
    }
    assert!(mismatches.is_empty(), "reports differ from golden: {mismatches:?}");
}

#[test]
fn seeded_density_is_byte_identical_across_runs() {
    let spec = root().join("specs/density.json");
    let (a, b) = (scratch("det-a"), scratch("det-b"));
    assert_eq!(run("density", &spec, &a).status.code(), Some(0));
    assert_eq!(run("density", &spec, &b).status.code(), Some(0));
    let read = |d: &Path| std::fs::read(d.join("density.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
    let _ = std::fs::remove_dir_all(&a);
    let _ = std::fs::remove_dir_all(&b);
}

#[test]
fn missing_field_exits_one_with_path() {
    let dir = scratch("bad");
    std::fs::create_dir_all(&dir).unwrap();
    let spec = dir.join("bad.json");
    std::fs::write(&spec, r#"{"kind": "omega", "angle": [1, 3]}"#).unwrap();
    let out = run("omega", &spec, &dir);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains(".gens"));
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn help_lists_csv_columns() {
    let out = Command::new(env!("CARGO_BIN_EXE_ipergo"))
        .arg("--help")
        .output()
        .unwrap();
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("N,good_fraction,stderr"));
    assert!(text.contains("N,value_re,value_im,stderr"));
}
