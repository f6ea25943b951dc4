use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gabor_fields::field::gff;
use gabor_fields::fit::fixture_blob;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn gabor(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gabor")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let o = gabor(args);
    assert_eq!(o.status.code(), Some(0), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Builds the cloud fixture into `dir`.
fn cloud(dir: &Path) -> PathBuf {
    let out = dir.join("cloud.gff");
    ok(&["cloud", s(&fixture("cloud.toml")), "-o", s(&out)]);
    out
}

#[test]
fn cloud_then_info() {
    let dir = tempfile::tempdir().unwrap();
    let f = cloud(dir.path());
    let field = gff::read_file(&f).unwrap();
    let info = ok(&["info", s(&f)]);
    assert!(info.contains(&format!("primitives: {}", field.len())));
    assert!(info.contains(&format!("levels: {}", field.level_count())));
    assert!(info.contains(&format!("bins: {}", field.bin_count())));
    assert!(info.contains(&format!("per-level: {:?}", field.level_counts())));
}

#[test]
fn lod_zero_keeps_only_the_base() {
    let dir = tempfile::tempdir().unwrap();
    let f = cloud(dir.path());
    let out = dir.path().join("lod.gff");
    ok(&["lod", s(&f), "--max-freq", "0", "-o", s(&out)]);
    let field = gff::read_file(&out).unwrap();
    assert!(field.len() > 0);
    assert!((0..field.len()).all(|i| field.level_of(i) == 0));
    assert_eq!(field.gabor_count(), 0);
}

#[test]
fn render_every_mode() {
    let dir = tempfile::tempdir().unwrap();
    let f = cloud(dir.path());
    let cases: [(&str, Option<PathBuf>, &str); 4] = [
        ("tomo", None, "tomo.png"),
        ("pt", Some(fixture("pt.toml")), "pt.pfm"),
        ("foveated", Some(fixture("foveated.toml")), "fov.png"),
        ("motionblur", Some(fixture("motion.toml")), "mb.png"),
    ];
    for (mode, cfg, name) in cases {
        let out = dir.path().join(name);
        let mut args = vec!["render", s(&f), "--mode", mode, "-o", s(&out), "--width", "24", "--height", "24"];
        if let Some(c) = &cfg {
            args.extend(["--config", s(c)]);
        }
        let stats = ok(&args);
        assert!(stats.starts_with("rays,node_visits,prim_tests,seconds"), "{mode}: {stats}");
        assert!(std::fs::metadata(&out).unwrap().len() > 0);
    }
}

#[test]
fn spectrum_csv_and_png() {
    let dir = tempfile::tempdir().unwrap();
    let f = cloud(dir.path());
    let csv = dir.path().join("s.csv");
    ok(&["spectrum", s(&f), "-o", s(&csv), "--n", "8"]);
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("k,power,count"));
    assert_eq!(text.lines().count(), 1 + 4);
    let png = dir.path().join("s.png");
    ok(&["spectrum", s(&f), "-o", s(&png), "--n", "16", "--axis", "x"]);
    assert_eq!(&std::fs::read(&png).unwrap()[1..4], b"PNG");
}

#[test]
fn bench_rows_per_strategy_and_spp() {
    let dir = tempfile::tempdir().unwrap();
    let f = cloud(dir.path());
    let csv = ok(&["bench", s(&f), "--strategies", "uniform,power_law_cv:0.5,deterministic+uniform", "--max-spp", "4"]);
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 3 * 3);
    assert!(rows[0].starts_with("uniform+deterministic,1,"));
}

#[test]
fn fit_small_grid() {
    let dir = tempfile::tempdir().unwrap();
    let grid = dir.path().join("blob.vgrid");
    fixture_blob(16).save(&grid).unwrap();
    let out = dir.path().join("fit.gff");
    let progress = dir.path().join("trace.csv");
    let msg = ok(&["fit", s(&grid), "-o", s(&out), "--config", s(&fixture("fit_small.toml")), "--progress", s(&progress)]);
    assert!(msg.starts_with("primitives "));
    let field = gff::read_file(&out).unwrap();
    assert!(field.len() > 0);
    let trace = std::fs::read_to_string(&progress).unwrap();
    assert!(trace.starts_with("stage,iter,"));
    assert_eq!(trace.lines().count(), 1 + 24);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(gabor(&[]).status.code(), Some(1));
    assert_eq!(gabor(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(gabor(&["info", s(&dir.path().join("missing.gff"))]).status.code(), Some(2));
    let junk = dir.path().join("junk.gff");
    std::fs::write(&junk, b"not a field").unwrap();
    assert_eq!(gabor(&["info", s(&junk)]).status.code(), Some(2));
    let f = cloud(dir.path());
    let o = gabor(&["render", s(&f), "--mode", "sideways", "-o", s(&dir.path().join("x.png"))]);
    assert_eq!(o.status.code(), Some(1));
    let o = gabor(&["lod", s(&f), "--max-freq", "-1", "-o", s(&dir.path().join("x.gff"))]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(gabor(&["--help"]).status.code(), Some(0));
}

#[test]
fn numerical_failure_exits_three() {
    // an absurd learning rate sends the loss to infinity
    let dir = tempfile::tempdir().unwrap();
    let grid = dir.path().join("blob.vgrid");
    fixture_blob(16).save(&grid).unwrap();
    let cfg = dir.path().join("bad.toml");
    let base = std::fs::read_to_string(fixture("fit_small.toml")).unwrap();
    std::fs::write(&cfg, format!("{base}\n[rates]\nalpha = 1e300\nmu = 0.012\nscale = 0.0008\nrot = 0.0012\nomega = 0.002\n")).unwrap();
    let o = gabor(&["fit", s(&grid), "-o", s(&dir.path().join("x.gff")), "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}
