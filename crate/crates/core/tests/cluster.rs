use blockmorph::cluster::{cluster_corpus, drop_in_replace, text_key, ClusterError};
use blockmorph::corpus::{Corpus, Sample};
use blockmorph::interp::{equivalent, execute};
use blockmorph::synth::{
    random_inputs, random_program, synthetic_corpus, with_random_data, ProgramShape,
};
use blockmorph::textio::{parse_asm, Label};
use blockmorph::transforms::{Mutator, TransformKind};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FUEL: u64 = 200_000;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Applies every kind once at every site, in catalogue order.
fn mutate_all(img: &blockmorph::asm::BinaryImage, seed: u64) -> blockmorph::asm::BinaryImage {
    let m = Mutator::default();
    let mut r = rng(seed);
    let mut cur = img.clone();
    for kind in TransformKind::ALL {
        let sites = m.applicable_sites(&cur, kind);
        cur = m.apply(kind, &cur, &sites, &mut r).unwrap().image;
    }
    cur
}

#[test]
fn same_text_different_data_is_one_cluster() {
    let img = random_program(&mut rng(1), ProgramShape::default());
    let other = with_random_data(&img, &mut rng(2));
    assert_ne!(img.data, other.data);
    let c = Corpus::new(vec![
        Sample::from_image("b", &other, Label::Benign, None, None).unwrap(),
        Sample::from_image("a", &img, Label::Benign, None, None).unwrap(),
    ]);
    let set = cluster_corpus(&c);
    assert_eq!(set.len(), 1);
    assert_eq!(set.clusters[0].members, ["a", "b"]);
    assert_eq!(set.clusters[0].representative(), "a");
}

#[test]
fn singleton_corpus_is_one_cluster() {
    let img = random_program(&mut rng(3), ProgramShape::default());
    let c = Corpus::new(vec![Sample::from_image(
        "x",
        &img,
        Label::Malicious,
        None,
        None,
    )
    .unwrap()]);
    assert_eq!(cluster_corpus(&c).len(), 1);
}

#[test]
fn synthetic_ground_truth_is_recovered() {
    let c = synthetic_corpus(&mut rng(4), 1000, 150, ProgramShape::default());
    let set = cluster_corpus(&c);
    assert_eq!(set.len(), 150);
    let mut all: Vec<&str> = set
        .clusters
        .iter()
        .flat_map(|cl| cl.members.iter().map(String::as_str))
        .collect();
    all.sort_unstable();
    let ids: Vec<&str> = c.samples.iter().map(|s| s.id.as_str()).collect();
    assert_eq!(all, ids);
    for cl in &set.clusters {
        let fams: Vec<_> = cl
            .members
            .iter()
            .map(|m| c.get(m).unwrap().family.clone())
            .collect();
        assert!(fams.windows(2).all(|w| w[0] == w[1]));
    }
}

#[test]
fn undecodable_samples_are_skipped() {
    let img = random_program(&mut rng(5), ProgramShape::default());
    let mut broken = Sample::from_image("z", &img, Label::Benign, None, None).unwrap();
    broken.bytes.truncate(10);
    let c = Corpus::new(vec![
        Sample::from_image("a", &img, Label::Benign, None, None).unwrap(),
        broken,
    ]);
    let set = cluster_corpus(&c);
    assert_eq!(set.len(), 1);
    assert_eq!(set.skipped.len(), 1);
    assert_eq!(set.skipped[0].0, "z");
}

#[test]
fn mismatched_key_is_refused() {
    let a = random_program(&mut rng(6), ProgramShape::default());
    let b = parse_asm(".func main:\n out eax\n halt\n").unwrap();
    let err = drop_in_replace(&a, &text_key(&a), &b).unwrap_err();
    assert!(matches!(err, ClusterError::KeyMismatch { .. }));
}

#[test]
fn identical_member_gets_the_mutated_image() {
    let img = random_program(&mut rng(7), ProgramShape::default());
    let mutated = mutate_all(&img, 8);
    assert_eq!(
        drop_in_replace(&mutated, &text_key(&img), &img).unwrap(),
        mutated
    );
}

#[test]
fn drop_in_matches_direct_mutation() {
    for seed in 0..40 {
        let rep = random_program(&mut rng(seed), ProgramShape::default());
        let member = with_random_data(&rep, &mut rng(seed + 1000));
        let fanned = drop_in_replace(&mutate_all(&rep, seed), &text_key(&rep), &member).unwrap();
        let direct = mutate_all(&member, seed);
        assert_eq!(fanned, direct, "seed {seed}");
        for input in random_inputs(&mut rng(seed), 8) {
            assert_eq!(
                execute(&fanned, &input, FUEL),
                execute(&direct, &input, FUEL)
            );
        }
        assert!(equivalent(&member, &fanned, &random_inputs(&mut rng(seed), 16), FUEL).is_equal());
    }
}
