use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use blockmorph::corpus::{load_manifest, save_manifest, Corpus};
use blockmorph::synth::{random_program, synthetic_corpus, ProgramShape};
use blockmorph::textio::emit_asm;
use blockmorph::transforms::{Mutator, TransformKind};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

fn blockmorph(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_blockmorph"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout)
        .unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stderr)))
}

fn write_corpus(dir: &Path, samples: usize, texts: usize) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(samples as u64);
    let c = synthetic_corpus(&mut rng, samples, texts, ProgramShape::default());
    let path = dir.join("in").join("manifest.jsonl");
    save_manifest(&c, &path).unwrap();
    path.to_string_lossy().into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn mutate_respects_the_pass_budget() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_corpus(dir.path(), 6, 3);
    let out = dir.path().join("out");
    let r = blockmorph(&[
        "mutate",
        "--manifest",
        &manifest,
        "--out",
        s(&out),
        "--seed",
        "7",
        "--budget-passes",
        "10",
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let report = json(&r);
    assert_eq!(report["run"]["passes"], 10);
    assert_eq!(report["config"]["params"]["seed"], 7);
    let on_disk: Value =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(on_disk, report);
    let augmented = load_manifest(&out.join("manifest.jsonl")).unwrap();
    assert_eq!(
        augmented.len(),
        6 + report["run"]["emitted"].as_u64().unwrap() as usize
    );
}

#[test]
fn mutate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_corpus(dir.path(), 8, 4);
    let run = |name: &str, jobs: &str| {
        let out = dir.path().join(name);
        let r = blockmorph(&[
            "mutate",
            "--manifest",
            &manifest,
            "--out",
            s(&out),
            "--seed",
            "3",
            "--budget-passes",
            "20",
            "--jobs",
            jobs,
        ]);
        assert!(r.status.success());
        let mut files: Vec<(String, Vec<u8>)> = vec![(
            "manifest".into(),
            fs::read(out.join("manifest.jsonl")).unwrap(),
        )];
        for e in fs::read_dir(out.join("samples")).unwrap() {
            let e = e.unwrap();
            files.push((
                e.file_name().to_string_lossy().into_owned(),
                fs::read(e.path()).unwrap(),
            ));
        }
        files.sort();
        files
    };
    let a = run("a", "1");
    assert_eq!(a, run("b", "1"));
    assert_eq!(a, run("c", "3"));
}

#[test]
fn target_stops_after_five_emissions() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_corpus(dir.path(), 10, 4);
    let out = dir.path().join("out");
    let r = blockmorph(&[
        "mutate",
        "--manifest",
        &manifest,
        "--out",
        s(&out),
        "--target",
        "5",
        "--budget-passes",
        "100000",
    ]);
    assert!(r.status.success());
    assert_eq!(json(&r)["run"]["stop"], "target");
    let c = load_manifest(&out.join("manifest.jsonl")).unwrap();
    assert_eq!(c.samples.iter().filter(|s| s.lineage.is_some()).count(), 5);
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_corpus(dir.path(), 4, 2);
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, format!("manifest = {manifest:?}\nout = \"from-file\"\nseed = 11\nbudget_passes = 4\nc_grid = [0.5]\n")).unwrap();
    let r = blockmorph(&["mutate", "--config", s(&cfg), "--budget-passes", "6"]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let report = json(&r);
    assert_eq!(report["run"]["passes"], 6);
    assert_eq!(report["config"]["params"]["seed"], 11);
    assert!(dir.path().join("from-file").join("report.json").exists());
}

#[test]
fn configuration_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_corpus(dir.path(), 2, 1);
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "no_such_key = 1\n").unwrap();
    assert_eq!(
        blockmorph(&["mutate", "--config", s(&cfg)]).status.code(),
        Some(2)
    );
    fs::write(&cfg, "c_grid = [2.0]\n").unwrap();
    assert_eq!(
        blockmorph(&["mutate", "--config", s(&cfg), "--manifest", &manifest])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        blockmorph(&["mutate", "--manifest", &manifest])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(blockmorph(&["frobnicate"]).status.code(), Some(2));
    let input_dir = Path::new(&manifest).parent().unwrap();
    assert_eq!(
        blockmorph(&["mutate", "--manifest", &manifest, "--out", s(input_dir)])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn io_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.jsonl");
    let out = dir.path().join("out");
    assert_eq!(
        blockmorph(&["mutate", "--manifest", s(&missing), "--out", s(&out)])
            .status
            .code(),
        Some(3)
    );
    assert_eq!(
        blockmorph(&["stats", "--manifest", s(&missing)])
            .status
            .code(),
        Some(3)
    );
    assert_eq!(
        blockmorph(&["verify", s(&missing), s(&missing)])
            .status
            .code(),
        Some(3)
    );
}

#[test]
fn verify_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let img = random_program(&mut ChaCha8Rng::seed_from_u64(1), ProgramShape::default());
    let m = Mutator::default();
    let sites = m.applicable_sites(&img, TransformKind::JunkCodeInsertion);
    let junk = m
        .apply(
            TransformKind::JunkCodeInsertion,
            &img,
            &sites,
            &mut ChaCha8Rng::seed_from_u64(2),
        )
        .unwrap()
        .image;
    let orig = dir.path().join("orig.s");
    let mutated = dir.path().join("junk.s");
    let broken = dir.path().join("broken.s");
    fs::write(&orig, emit_asm(&img)).unwrap();
    fs::write(&mutated, emit_asm(&junk)).unwrap();
    let text = emit_asm(&img);
    let at = text.rfind("    out ").unwrap();
    let reg = text[at + 8..].lines().next().unwrap().to_string();
    fs::write(
        &broken,
        format!("{}    inc {reg}\n{}", &text[..at], &text[at..]),
    )
    .unwrap();

    let same = blockmorph(&["verify", s(&orig), s(&orig)]);
    assert_eq!(same.status.code(), Some(0));
    assert_eq!(json(&same)["equal"], true);
    assert_eq!(
        blockmorph(&["verify", s(&orig), s(&mutated)]).status.code(),
        Some(0)
    );
    let bad = blockmorph(&["verify", s(&orig), s(&broken)]);
    assert_eq!(bad.status.code(), Some(1));
    let witness = &json(&bad)["verdict"]["Distinguished"];
    assert!(witness["input"].is_array(), "{witness}");
}

#[test]
fn cluster_and_stats_reports() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_corpus(dir.path(), 1, 1);
    let out = dir.path().join("out");
    let r = blockmorph(&["cluster", "--manifest", &manifest, "--out", s(&out)]);
    assert!(r.status.success());
    assert_eq!(json(&r)["clusters"]["clusters"], 1);
    assert!(out.join("cluster.json").exists());

    let many = tempfile::tempdir().unwrap();
    let manifest = write_corpus(many.path(), 300, 150);
    let r = blockmorph(&["cluster", "--manifest", &manifest]);
    assert_eq!(json(&r)["clusters"]["clusters"], 150);
    let r = blockmorph(&["stats", "--manifest", &manifest]);
    assert!(r.status.success());
    let stats = &json(&r)["stats"];
    for key in ["samples", "families", "block_change", "pairwise", "config"] {
        assert!(stats.get(key).is_some(), "missing {key}");
    }
    assert_eq!(stats["families"]["count"], 150);
}

#[test]
fn inputs_are_never_modified() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_corpus(dir.path(), 5, 2);
    let before: Corpus = load_manifest(Path::new(&manifest)).unwrap();
    let text = fs::read(&manifest).unwrap();
    let out = dir.path().join("out");
    assert!(blockmorph(&[
        "mutate",
        "--manifest",
        &manifest,
        "--out",
        s(&out),
        "--budget-passes",
        "8"
    ])
    .status
    .success());
    assert_eq!(fs::read(&manifest).unwrap(), text);
    assert_eq!(load_manifest(Path::new(&manifest)).unwrap(), before);
}
