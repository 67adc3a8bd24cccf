use blockmorph::asm::{partition_blocks, relayout, Stmt};
use blockmorph::corpus::{diff_images, quartiles};
use blockmorph::engine::{draw_kinds, select_params, site_count};
use blockmorph::interp::equivalent;
use blockmorph::synth::{random_inputs, random_program, with_random_data, ProgramShape};
use blockmorph::textio::{decode_container, emit_asm, encode_container, parse_asm, Label, Lineage};
use blockmorph::transforms::{Mutator, TransformKind};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn program(seed: u64) -> blockmorph::asm::BinaryImage {
    random_program(
        &mut ChaCha8Rng::seed_from_u64(seed),
        ProgramShape::default(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn text_round_trip(seed in any::<u64>()) {
        let img = program(seed);
        let text = emit_asm(&img);
        let back = parse_asm(&text).unwrap();
        prop_assert_eq!(&back, &img);
        prop_assert_eq!(emit_asm(&back), text);
    }

    #[test]
    fn container_round_trip(seed in any::<u64>(), malicious in any::<bool>(), iteration in 1u64..100) {
        let img = program(seed);
        let label = if malicious { Label::Malicious } else { Label::Benign };
        let lineage = Lineage { parent: "p".into(), kinds: vec![TransformKind::CodeTransposition], seed, iteration };
        let bytes = encode_container(&img, label, Some(&lineage)).unwrap();
        prop_assert_eq!(decode_container(&bytes).unwrap(), (img, label, Some(lineage)));
    }

    #[test]
    fn relayout_is_idempotent(seed in any::<u64>()) {
        let once = relayout(&program(seed));
        prop_assert_eq!(relayout(&once), once);
    }

    #[test]
    fn partition_preserves_the_sequence(seed in any::<u64>()) {
        let img = program(seed);
        for f in &img.functions {
            let mut body = Vec::new();
            for (i, b) in f.blocks.iter().enumerate() {
                if i > 0 {
                    body.push(Stmt::Label(b.label.clone()));
                }
                body.extend(b.instrs.iter().cloned().map(Stmt::Instr));
            }
            let again = partition_blocks(&f.name, &body).unwrap();
            let flat = |g: &blockmorph::asm::Function| g.blocks.iter().flat_map(|b| b.instrs.clone()).collect::<Vec<_>>();
            prop_assert_eq!(flat(&again), flat(f));
        }
    }

    #[test]
    fn diff_is_symmetric_and_bounded(a in any::<u64>(), b in any::<u64>()) {
        let (x, y) = (program(a), program(b));
        let (d1, d2) = (diff_images(&x, &y).unwrap(), diff_images(&y, &x).unwrap());
        prop_assert_eq!(d1.byte_diff, d2.byte_diff);
        prop_assert!((0.0..=1.0).contains(&d1.percent_diff));
        prop_assert!((0.0..=1.0).contains(&d1.block_change_fraction));
        prop_assert_eq!(diff_images(&x, &x).unwrap().byte_diff, 0);
    }

    #[test]
    fn data_only_changes_keep_blocks(seed in any::<u64>()) {
        let img = program(seed);
        let other = with_random_data(&img, &mut ChaCha8Rng::seed_from_u64(!seed));
        prop_assert_eq!(diff_images(&img, &other).unwrap().block_change_fraction, 0.0);
    }

    #[test]
    fn quartiles_are_ordered(values in prop::collection::vec(-1e6f64..1e6, 1..60)) {
        let q = quartiles(&values).unwrap();
        prop_assert!(q.min <= q.q1 && q.q1 <= q.median && q.median <= q.q3 && q.q3 <= q.max);
    }

    #[test]
    fn site_count_is_a_bounded_ceiling(c in 0.01f64..=1.0, n in 1usize..500) {
        let k = site_count(c, n);
        prop_assert!(k >= 1 && k <= n);
        prop_assert!(k as f64 >= c * n as f64 - 1e-9);
        prop_assert!((k as f64) < c * n as f64 + 1.0 + 1e-9);
    }

    #[test]
    fn drawn_kinds_are_distinct_and_nonempty(seed in any::<u64>()) {
        let kinds = draw_kinds(&[0.3; 10], &mut ChaCha8Rng::seed_from_u64(seed));
        let mut sorted = kinds.clone();
        sorted.sort();
        sorted.dedup();
        prop_assert!(!kinds.is_empty());
        prop_assert_eq!(sorted.len(), kinds.len());
    }

    #[test]
    fn selected_params_come_from_the_grid(history in prop::collection::vec((1u32..=4, 0usize..4), 0..10)) {
        let grid = [0.25, 0.5, 0.75, 1.0];
        let h: Vec<(u32, f64)> = history.iter().map(|&(m, c)| (m, grid[c])).collect();
        let (m, c) = select_params(&h, (1, 4), &grid);
        prop_assert!((1..=4).contains(&m) && grid.contains(&c));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn any_kind_sequence_preserves_behavior(seed in any::<u64>(), picks in prop::collection::vec(0usize..10, 1..5)) {
        let img = program(seed);
        let m = Mutator::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cur = img.clone();
        for p in picks {
            let kind = TransformKind::ALL[p];
            let sites = m.applicable_sites(&cur, kind);
            cur = m.apply(kind, &cur, &sites, &mut rng).unwrap().image;
        }
        prop_assert!(equivalent(&img, &cur, &random_inputs(&mut rng, 16), 200_000).is_equal());
    }
}
