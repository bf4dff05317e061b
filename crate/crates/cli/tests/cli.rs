use std::path::Path;
use std::process::{Command, Output};

use ganblend_core::checkpoint;
use ganblend_core::projector::{LatentFile, LatentSpace};
use ganblend_core::rng::{self, domain};
use ganblend_core::tensor::{decode_png, encode_png, RgbRaster};
use ganblend_core::{
    blend_checkpoints, forward, init_random, synth_transfer, BlendSchedule, GeneratorConfig, MappingPolicy, NoiseSpec,
    Source,
};

fn ganblend(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ganblend"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = ganblend(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn fixtures(dir: &Path) {
    ok(dir, &["init-base", "--seed", "0", "-o", "b.gwt"]);
    ok(dir, &["make-transfer", "--base", "b.gwt", "--strength", "0.5", "--seed", "1", "-o", "t.gwt"]);
}

#[test]
fn fixture_commands_match_the_library() {
    let dir = tempfile::tempdir().unwrap();
    fixtures(dir.path());
    let base = init_random(&GeneratorConfig::desk(), 0);
    let transfer = synth_transfer(&base, 0.5, 1).unwrap();
    assert!(checkpoint::load(dir.path().join("b.gwt")).unwrap().bit_eq(&base));
    assert!(checkpoint::load(dir.path().join("t.gwt")).unwrap().bit_eq(&transfer));

    ok(
        dir.path(),
        &["blend", "--base", "b.gwt", "--transfer", "t.gwt", "--swap-at", "16", "--low-from", "transfer", "--mapping", "base", "-o", "x.gwt"],
    );
    let expected = blend_checkpoints(&base, &transfer, &BlendSchedule::swap(16, Source::Transfer), MappingPolicy::Base).unwrap();
    assert!(checkpoint::load(dir.path().join("x.gwt")).unwrap().bit_eq(&expected));

    // --mapping omitted means base.
    ok(dir.path(), &["blend", "--base", "b.gwt", "--transfer", "t.gwt", "--swap-at", "16", "-o", "y.gwt"]);
    assert_eq!(std::fs::read(dir.path().join("x.gwt")).unwrap(), std::fs::read(dir.path().join("y.gwt")).unwrap());

    ok(
        dir.path(),
        &["blend", "--base", "b.gwt", "--transfer", "t.gwt", "--schedule", r#"{"kind":"linear_log","r_lo":4,"r_hi":64,"alpha_lo":0,"alpha_hi":1}"#, "--mapping", "0.5", "-o", "l.gwt"],
    );
    let linear = BlendSchedule::LinearLog {
        r_lo: 4,
        r_hi: 64,
        alpha_lo: 0.0,
        alpha_hi: 1.0,
    };
    let expected = blend_checkpoints(&base, &transfer, &linear, MappingPolicy::Alpha(0.5)).unwrap();
    assert!(checkpoint::load(dir.path().join("l.gwt")).unwrap().bit_eq(&expected));
}

#[test]
fn errors_exit_one_with_a_prefixed_line() {
    let dir = tempfile::tempdir().unwrap();
    fixtures(dir.path());
    let out = ganblend(dir.path(), &["blend", "--base", "b.gwt", "--transfer", "t.gwt", "--swap-at", "3", "-o", "z.gwt"]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.starts_with("error: "), "{stderr}");
    assert!(stderr.contains("not a valid resolution band"), "{stderr}");
    assert_eq!(stderr.lines().count(), 1);
    assert!(!dir.path().join("z.gwt").exists());

    let out = ganblend(dir.path(), &["inspect", "missing.gwt"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8(out.stderr).unwrap().starts_with("error: "));

    std::fs::write(dir.path().join("junk.gwt"), b"NOPE0000000000000000").unwrap();
    let out = ganblend(dir.path(), &["inspect", "junk.gwt"]);
    assert!(String::from_utf8(out.stderr).unwrap().contains("bad magic"));
}

#[test]
fn every_subcommand_has_help() {
    let dir = tempfile::tempdir().unwrap();
    for cmd in ["init-base", "make-transfer", "inspect", "blend", "sample", "project", "toonify", "serve"] {
        let out = ok(dir.path(), &[cmd, "--help"]);
        assert!(out.contains("Usage: ganblend"), "{cmd}");
    }
}

#[test]
fn inspect_lists_every_band() {
    let dir = tempfile::tempdir().unwrap();
    fixtures(dir.path());
    let table = ok(dir.path(), &["inspect", "b.gwt"]);
    let rows: Vec<&str> = table.lines().skip(2).map(|l| l.split_whitespace().next().unwrap()).collect();
    assert_eq!(rows, ["mapping", "4", "8", "16", "32", "64", "total"]);
    assert!(table.lines().last().unwrap().split_whitespace().nth(1) == Some("70"));
}

#[test]
fn sample_grids_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    fixtures(dir.path());
    ok(dir.path(), &["sample", "--model", "b.gwt", "--seed", "7", "--count", "24", "-o", "a.png"]);
    ok(dir.path(), &["sample", "--model", "b.gwt", "--seed", "7", "--count", "24", "-o", "b.png"]);
    let a = std::fs::read(dir.path().join("a.png")).unwrap();
    assert_eq!(a, std::fs::read(dir.path().join("b.png")).unwrap());
    let grid = RgbRaster::decode(&a).unwrap();
    assert_eq!((grid.width, grid.height), (6 * 68, 4 * 68));

    ok(dir.path(), &["sample", "--model", "b.gwt", "--count", "1", "-o", "one.png"]);
    let one = RgbRaster::decode(&std::fs::read(dir.path().join("one.png")).unwrap()).unwrap();
    assert_eq!((one.width, one.height), (68, 68));
}

#[test]
fn project_and_toonify_write_their_outputs() {
    let dir = tempfile::tempdir().unwrap();
    fixtures(dir.path());
    ok(dir.path(), &["blend", "--base", "b.gwt", "--transfer", "t.gwt", "--swap-at", "16", "-o", "x.gwt"]);
    let base = init_random(&GeneratorConfig::desk(), 0);
    let z = rng::normal_vec(domain::SAMPLE, 3, "cli", 64);
    encode_png(&forward(&base, &z, NoiseSpec::new(3)).unwrap(), dir.path().join("target.png")).unwrap();

    let stdout = ok(
        dir.path(),
        &["project", "--model", "b.gwt", "--target", "target.png", "--steps", "2", "--seed", "3", "-o", "w.json", "--reconstruction", "rec.png"],
    );
    assert!(stdout.starts_with("final mse"));
    let latent: LatentFile = serde_json::from_str(&std::fs::read_to_string(dir.path().join("w.json")).unwrap()).unwrap();
    assert_eq!(latent.space, LatentSpace::W);
    assert_eq!(latent.values.len(), 64);

    ok(
        dir.path(),
        &["toonify", "--base", "b.gwt", "--blended", "x.gwt", "--target", "target.png", "--steps", "2", "--seed", "3", "-o", "toon.png", "--reconstruction", "rec2.png", "--latent", "w2.json"],
    );
    let read = |name: &str| std::fs::read(dir.path().join(name)).unwrap();
    assert_eq!(read("rec.png"), read("rec2.png"));
    assert_eq!(read("w.json"), read("w2.json"));
    assert_ne!(read("toon.png"), read("rec.png"));
    assert_eq!(decode_png(dir.path().join("toon.png")).unwrap().size(), 64);

    let out = ganblend(dir.path(), &["project", "--model", "b.gwt", "--target", "target.png", "--steps", "0", "-o", "w3.json"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn serve_reports_a_busy_port() {
    let dir = tempfile::tempdir().unwrap();
    let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = taken.local_addr().unwrap().port().to_string();
    let out = ganblend(dir.path(), &["serve", "--port", &port]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8(out.stderr).unwrap().contains("error: cannot bind"));

    let out = Command::new(env!("CARGO_BIN_EXE_ganblend"))
        .current_dir(dir.path())
        .env("GANBLEND_PORT", &port)
        .arg("serve")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8(out.stderr).unwrap().contains(&format!("127.0.0.1:{port}")));
}
