use std::fs;

use blockmorph::corpus::{
    corpus_stats, diff, diff_images, load_manifest, save_manifest, Corpus, CorpusError, Sample,
    StatsConfig,
};
use blockmorph::engine::{run_budget, Budget, MutationParams};
use blockmorph::synth::{synthetic_corpus, ProgramShape};
use blockmorph::textio::{parse_asm, Label, Lineage};
use blockmorph::transforms::TransformKind;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn corpus(samples: usize, texts: usize, seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    synthetic_corpus(&mut rng, samples, texts, ProgramShape::default())
}

fn sample(id: &str, text: &str, family: Option<&str>) -> Sample {
    let img = parse_asm(text).unwrap();
    Sample::from_image(id, &img, Label::Malicious, family.map(String::from), None).unwrap()
}

#[test]
fn manifest_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("manifest.jsonl");
    let c = corpus(12, 4, 1);
    save_manifest(&c, &path).unwrap();
    assert_eq!(load_manifest(&path).unwrap(), c);
}

#[test]
fn digest_mismatch_is_flagged() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("manifest.jsonl");
    let c = corpus(3, 3, 2);
    save_manifest(&c, &path).unwrap();
    let victim = dir
        .path()
        .join("samples")
        .join(format!("{}.mrvb", c.samples[1].id));
    let mut bytes = fs::read(&victim).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 0xff;
    fs::write(&victim, bytes).unwrap();
    match load_manifest(&path) {
        Err(CorpusError::DigestMismatch { id, .. }) => assert_eq!(id, c.samples[1].id),
        other => panic!("expected digest mismatch, got {other:?}"),
    }
}

#[test]
fn missing_container_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("manifest.jsonl");
    let c = corpus(2, 2, 3);
    save_manifest(&c, &path).unwrap();
    fs::remove_file(
        dir.path()
            .join("samples")
            .join(format!("{}.mrvb", c.samples[0].id)),
    )
    .unwrap();
    assert!(matches!(load_manifest(&path), Err(CorpusError::Io { .. })));
}

#[test]
fn load_ignores_line_order() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("manifest.jsonl");
    let c = corpus(200, 20, 4);
    save_manifest(&c, &path).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines.shuffle(&mut ChaCha8Rng::seed_from_u64(5));
    fs::write(&path, lines.join("\n") + "\n").unwrap();
    assert_eq!(load_manifest(&path).unwrap(), c);
}

#[test]
fn duplicate_ids_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("manifest.jsonl");
    save_manifest(&corpus(2, 2, 6), &path).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    let first = text.lines().next().unwrap();
    fs::write(&path, format!("{text}{first}\n")).unwrap();
    assert!(matches!(
        load_manifest(&path),
        Err(CorpusError::DuplicateId(_))
    ));
}

#[test]
fn self_diff_is_zero_and_diff_is_symmetric() {
    let c = corpus(8, 3, 7);
    for a in &c.samples {
        let d = diff(a, a).unwrap();
        assert_eq!(
            (d.byte_diff, d.percent_diff, d.block_change_fraction),
            (0, 0.0, 0.0)
        );
        for b in &c.samples {
            assert_eq!(diff(a, b).unwrap().byte_diff, diff(b, a).unwrap().byte_diff);
        }
    }
}

#[test]
fn one_nop_changes_one_block() {
    let a = parse_asm(".func main:\n mov eax, 1\n jmp done\ndone:\n out eax\n halt\n").unwrap();
    let b =
        parse_asm(".func main:\n mov eax, 1\n jmp done\ndone:\n nop\n out eax\n halt\n").unwrap();
    let d = diff_images(&a, &b).unwrap();
    assert!(
        d.byte_diff
            >= blockmorph::asm::width(
                &parse_asm(".func main:\n nop\n halt\n").unwrap().functions[0].blocks[0].instrs[0]
            ) as usize
    );
    assert_eq!(d.block_change_fraction, 0.5);
    assert!(d.percent_diff > 0.0 && d.percent_diff <= 1.0);
}

#[test]
fn family_percentiles_of_known_sizes() {
    let mut samples = Vec::new();
    for (fam, n) in [("a", 2), ("b", 4), ("c", 10)] {
        for i in 0..n {
            samples.push(sample(
                &format!("{fam}{i:02}"),
                &format!(".func main:\n mov eax, {i}\n out eax\n halt\n"),
                Some(fam),
            ));
        }
    }
    let stats = corpus_stats(&Corpus::new(samples), StatsConfig::default());
    assert_eq!(stats.families.count, 3);
    assert_eq!((stats.families.median, stats.families.p99), (4, 10));
    assert_eq!(stats.pairwise["c"].pairs.len(), 45);
    assert_eq!(stats.pairwise["a"].pairs.len(), 1);
}

#[test]
fn singleton_corpus_stats() {
    let c = Corpus::new(vec![sample("only", ".func main:\n out eax\n halt\n", None)]);
    let stats = corpus_stats(&c, StatsConfig::default());
    assert_eq!(
        stats.families.sizes.values().copied().collect::<Vec<_>>(),
        vec![1]
    );
    assert!(stats.pairwise.is_empty());
    assert!(stats.block_change.is_empty());
}

#[test]
fn families_default_to_root_ancestor() {
    let lineage = |parent: &str| Lineage {
        parent: parent.into(),
        kinds: vec![TransformKind::JunkCodeInsertion],
        seed: 0,
        iteration: 1,
    };
    let text = ".func main:\n out eax\n halt\n";
    let mut child = sample("root-v1", text, None);
    child.lineage = Some(lineage("root"));
    let mut grandchild = sample("root-v2", text, None);
    grandchild.lineage = Some(lineage("root-v1"));
    let c = Corpus::new(vec![sample("root", text, None), child, grandchild]);
    for s in &c.samples {
        assert_eq!(c.family_of(s), "root");
    }
}

#[test]
fn stats_cover_every_kind_and_are_deterministic() {
    let base = corpus(30, 6, 8);
    let p = MutationParams {
        seed: 9,
        budget: Budget::Passes(60),
        ..MutationParams::default()
    };
    let c = run_budget(&base, &p, None).unwrap().augmented(&base);
    let config = StatsConfig {
        pair_cap: 10,
        seed: 1,
    };
    let a = corpus_stats(&c, config);
    assert_eq!(a.to_json(), corpus_stats(&c, config).to_json());
    let mut present: Vec<String> = c
        .samples
        .iter()
        .filter_map(|s| s.lineage.as_ref())
        .flat_map(|l| l.kinds.iter().map(|k| k.name().to_string()))
        .collect();
    present.sort();
    present.dedup();
    assert_eq!(a.block_change.keys().cloned().collect::<Vec<_>>(), present);
    for pw in a.pairwise.values() {
        assert!(pw.pairs.len() <= 10);
    }
    for kf in a.block_change.values() {
        assert!(kf.pairs.iter().all(|p| (0.0..=1.0).contains(&p.fraction)));
    }
}
