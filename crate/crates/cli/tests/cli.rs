use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use hcl_core::pipeline::report::read_rows;
use hcl_core::pipeline::Config;

const TINY: &str = "\
[network]
input_size = 64
base_channels = 4
detect_channels = 4
embed_dim = 8
decoder_depth = 1
heads = 2
patch = 8
pcc_hidden = 4

[train]
epochs = 1
batch_size = 2

[adapt]
iterations = 2
";

fn hcl(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hcl"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn hcl")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = hcl(dir, args);
    assert_eq!(code(&out), 0, "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn files(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    names
}

#[test]
fn print_config_emits_parseable_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(dir.path(), &["--print-config"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(Config::parse(&text).unwrap(), Config::default());
    assert!(text.contains("[adapt]") && text.contains("[network]"));
}

#[test]
fn print_config_reflects_the_file() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.toml"), TINY).unwrap();
    let out = ok(dir.path(), &["--config", "c.toml", "--print-config"]);
    let cfg = Config::parse(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!(cfg.network.base_channels, 4);
    assert_eq!(cfg.adapt.iterations, 2);
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.toml"), "[adapt]\nlr = -1.0\n").unwrap();
    fs::write(dir.path().join("typo.toml"), "[adapt]\niteratons = 3\n").unwrap();
    for args in [
        &[][..],
        &["frobnicate"],
        &["gen-data", "--out", "x"],
        &["degrade", "--kind", "xx", "--severity", "1", "--in", "a", "--out", "b"],
        &["degrade", "--kind", "gn", "--severity", "6", "--in", "a", "--out", "b"],
        &["adapt", "--checkpoint", "m", "--data", "d", "--mode", "bogus", "--out-csv", "x.csv"],
        &["adapt", "--checkpoint", "m", "--data", "d", "--mode", "hcl", "--out-csv", "x.csv", "--kind", "gb"],
        &["--config", "bad.toml", "--print-config"],
        &["--config", "typo.toml", "--print-config"],
        &["verify", "--filter", "no.such.property"],
    ] {
        assert_eq!(code(&hcl(dir.path(), args)), 2, "{args:?}");
    }
}

#[test]
fn runtime_failures_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir_all(dir.path().join("empty/images")).unwrap();
    fs::create_dir_all(dir.path().join("empty/masks")).unwrap();
    for args in [
        &["degrade", "--kind", "gn", "--severity", "1", "--in", "missing", "--out", "o"][..],
        &["train", "--data", "empty", "--out-checkpoint", "m.ckpt"],
        &["adapt", "--checkpoint", "missing.ckpt", "--data", "empty", "--mode", "hcl", "--out-csv", "x.csv"],
        &["report", "--csv", "missing.csv", "--out", "r"],
        &["verify", "--filter", "pipeline.self_supervised_descent", "--no-train", "--out", "v"],
    ] {
        assert_eq!(code(&hcl(dir.path(), args)), 1, "{args:?}");
    }
}

#[test]
fn gen_data_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["gen-data", "--count", "3", "--size", "32", "--seed", "7", "--out", "a"]);
    ok(dir.path(), &["gen-data", "--count", "3", "--size", "32", "--seed", "7", "--out", "b"]);
    let names = files(&dir.path().join("a/images"));
    assert_eq!(names, ["scene00007.png", "scene00008.png", "scene00009.png"]);
    for sub in ["images", "masks"] {
        for n in &names {
            let a = fs::read(dir.path().join("a").join(sub).join(n)).unwrap();
            let b = fs::read(dir.path().join("b").join(sub).join(n)).unwrap();
            assert_eq!(a, b, "{sub}/{n}");
        }
    }
}

#[test]
fn degrade_keeps_masks_and_changes_images() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["gen-data", "--count", "2", "--size", "32", "--out", "clean"]);
    ok(dir.path(), &["degrade", "--kind", "gn", "--severity", "4", "--in", "clean", "--out", "gn4"]);
    for n in files(&dir.path().join("clean/masks")) {
        let read = |p: &str| fs::read(dir.path().join(p).join(&n)).unwrap();
        assert_eq!(read("clean/masks"), read("gn4/masks"));
        assert_ne!(read("clean/images"), read("gn4/images"));
    }
}

#[test]
fn train_adapt_eval_report_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("tiny.toml"), TINY).unwrap();
    ok(d, &["gen-data", "--count", "3", "--size", "64", "--out", "data"]);
    ok(d, &["train", "--config", "tiny.toml", "--data", "data", "--out-checkpoint", "model/m.ckpt"]);
    let sidecar = Config::load(&d.join("model/m.toml")).unwrap();
    assert_eq!(sidecar.network.base_channels, 4);

    ok(
        d,
        &[
            "adapt", "--checkpoint", "model/m.ckpt", "--data", "data", "--mode", "hcl", "--iters", "1", "--kind", "gb",
            "--severity", "2", "--out-csv", "hcl.csv", "--dump-maps", "maps",
        ],
    );
    ok(d, &["adapt", "--checkpoint", "model/m.ckpt", "--data", "data", "--mode", "frozen", "--out-csv", "frozen.csv"]);

    let hcl_rows = read_rows(&d.join("hcl.csv")).unwrap();
    assert_eq!(hcl_rows.len(), 3);
    assert!(hcl_rows.iter().all(|r| r.mode == "hcl" && r.degradation == "gb" && r.severity == 2));
    let text = fs::read_to_string(d.join("hcl.csv")).unwrap();
    assert_eq!(text.lines().next().unwrap(), "sample,mode,degradation,severity,s_measure,e_measure,wfbeta,mae");
    assert!(text.lines().last().unwrap().starts_with("mean,hcl,gb,2,"));

    assert_eq!(files(&d.join("maps")).len(), 4);
    assert_eq!(files(&d.join("maps/debug")).len(), 6);

    // scoring the dumped 8-bit maps reproduces the in-memory metrics up to
    // quantization
    ok(d, &["eval", "--pred-dir", "maps", "--gt-dir", "data/masks", "--out-csv", "eval.csv"]);
    let eval_rows = read_rows(&d.join("eval.csv")).unwrap();
    assert_eq!(eval_rows.len(), 3);
    for (a, b) in hcl_rows.iter().zip(&eval_rows) {
        assert_eq!(a.sample, b.sample);
        assert!((a.mae - b.mae).abs() <= 0.5 / 255.0 + 1e-6, "{} vs {}", a.mae, b.mae);
    }

    let out = ok(d, &["report", "--csv", "hcl.csv", "frozen.csv", "--out", "rep", "--plots"]);
    let table = String::from_utf8(out.stdout).unwrap();
    assert_eq!(table.lines().count(), 3);
    assert_eq!(
        files(&d.join("rep")),
        ["e_measure.png", "mae.png", "plots.txt", "s_measure.png", "summary.csv", "summary.txt", "wfbeta.png"]
    );
    assert_eq!(fs::read_to_string(d.join("rep/summary.txt")).unwrap(), table);
}

#[test]
fn verify_writes_text_and_csv_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(dir.path(), &["verify", "--filter", "spectral.parseval", "--out", "v"]);
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("PASS spectral.parseval"));
    assert_eq!(files(&dir.path().join("v")), ["properties.csv", "properties.txt"]);
    let csv = fs::read_to_string(dir.path().join("v/properties.csv")).unwrap();
    assert!(csv.lines().nth(1).unwrap().starts_with("spectral.parseval,true,"));
}

#[test]
fn acceptance_without_checkpoint_or_training_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = hcl(
        dir.path(),
        &["verify", "--filter", "tensor.determinism", "--acceptance", "--no-train", "--checkpoint", "none.ckpt"],
    );
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("training disabled"));
}
