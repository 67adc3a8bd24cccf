//! Acceptance suite: one PASS/FAIL line per criterion.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use blockmorph::analysis::swap_safe;
use blockmorph::asm::{BinaryImage, LocSet};
use blockmorph::cli::{cmd_mutate, Overrides, RunConfig, MANIFEST_FILE};
use blockmorph::cluster::cluster_corpus;
use blockmorph::corpus::{corpus_stats, load_manifest, save_manifest, Corpus, Sample, StatsConfig};
use blockmorph::engine::{run_budget, should_emit, Budget, ChangeLedger, Engine, MutationParams};
use blockmorph::interp::{equivalent, execute, Outcome};
use blockmorph::synth::{random_inputs, random_program, synthetic_corpus, ProgramShape};
use blockmorph::textio::{decode_container, emit_asm, encode_text, parse_asm};
use blockmorph::transforms::{Mutator, RuleSet, TransformKind};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FUEL: u64 = 200_000;

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn corpus(samples: usize, texts: usize, seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    synthetic_corpus(&mut rng, samples, texts, ProgramShape::default())
}

fn passes(n: u64, seed: u64) -> MutationParams {
    MutationParams {
        seed,
        budget: Budget::Passes(n),
        ..MutationParams::default()
    }
}

fn soundness() -> Check {
    let m = Mutator::default();
    let mut applied = 0;
    for kind in TransformKind::ALL {
        let mut kind_applied = 0;
        for seed in 0..500u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(7919) ^ kind.index() as u64);
            let img = random_program(&mut rng, ProgramShape::default());
            let sites = m.applicable_sites(&img, kind);
            let out = m
                .apply(kind, &img, &sites, &mut rng)
                .map_err(|e| e.to_string())?;
            kind_applied += out.applied.len();
            let inputs = random_inputs(&mut rng, 16);
            let v = equivalent(&img, &out.image, &inputs, FUEL);
            ensure!(v.is_equal(), "{kind} program {seed}: {v:?}");
        }
        ensure!(kind_applied > 0, "{kind} never applied");
        applied += kind_applied;
    }
    Ok(format!("5000 programs, {applied} rewrites, all equivalent"))
}

fn instantiate(rule: &str, text: &str) -> Result<Vec<String>, String> {
    let rs = RuleSet::builtin();
    let rule = rs.get(rule).ok_or("missing rule")?;
    let ins = parse_asm(&format!(".func main:\n {text}\n halt\n"))
        .map_err(|e| e.to_string())?
        .functions[0]
        .blocks[0]
        .instrs[0]
        .clone();
    let b = rule.matches(&ins).ok_or("no match")?;
    let out = rule
        .instantiate(&ins, &b, LocSet::EMPTY, &mut ChaCha8Rng::seed_from_u64(0))
        .map_err(|e| format!("{e:?}"))?;
    Ok(out.iter().map(ToString::to_string).collect())
}

fn worked_examples() -> Check {
    let or = instantiate("or_and_xor_identity", "or eax, 0x4711")?;
    let want = [
        "push esi",
        "push edi",
        "mov esi, eax",
        "mov edi, 0x4711",
        "and eax, edi",
        "xor esi, edi",
        "or eax, esi",
        "pop edi",
        "pop esi",
    ];
    ensure!(or == want, "or rewrite: {or:?}");
    let add = instantiate("add_imm_to_sub_neg", "add eax, 1")?;
    ensure!(add == ["sub eax, -1"], "add rewrite: {add:?}");

    let img = parse_asm(".func main:\n mov eax, 0\n out eax\n halt\n").unwrap();
    let m = Mutator::default();
    let sites = m.applicable_sites(&img, TransformKind::OptimizingSubstitution);
    ensure!(sites.len() == 1, "optimizing sites: {sites:?}");
    let out = m
        .apply(
            TransformKind::OptimizingSubstitution,
            &img,
            &sites,
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .map_err(|e| e.to_string())?;
    let first = out.image.functions[0].blocks[0].instrs[0].to_string();
    ensure!(first == "xor eax, eax", "mov 0 rewrite: {first}");

    let block = |t: &str| {
        parse_asm(&format!(".func main:\n{t}\n out eax\n out ecx\n halt\n"))
            .unwrap()
            .functions[0]
            .blocks[0]
            .clone()
    };
    let safe =
        swap_safe(&block(" add eax, ebx\n sub ecx, 0x7c21"), 0, 1).map_err(|e| e.to_string())?;
    let unsafe_ =
        swap_safe(&block(" mov eax, 0x1af3\n add ecx, eax"), 0, 1).map_err(|e| e.to_string())?;
    ensure!(safe && !unsafe_, "swap verdicts {safe} {unsafe_}");

    let snippet = ".func main:\n nop\n nop\n nop\n xor eax, eax\n inc ebx\n dec ebx\n inc ecx\n dec ecx\n inc eax\n \
                 push edx\n xor edx, edx\n pop edx\n inc eax\n dec eax\n cmp 0x17b8ef93, eax\n jne taken\n \
                 mov eax, 0xdead\n out eax\n halt\ntaken:\n out eax\n halt\n";
    let r = execute(
        &parse_asm(snippet).map_err(|e| e.to_string())?,
        &[0; 4],
        FUEL,
    );
    ensure!(
        r.trace == [1] && r.outcome == Outcome::Halted(0),
        "opaque snippet run {r:?}"
    );

    let mut found = false;
    for seed in 0..200u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let img = random_program(&mut rng, ProgramShape::default());
        let sites = m.applicable_sites(&img, TransformKind::OpaquePredicateInsertion);
        let out = m
            .apply(
                TransformKind::OpaquePredicateInsertion,
                &img,
                &sites,
                &mut rng,
            )
            .map_err(|e| e.to_string())?;
        ensure!(
            equivalent(&img, &out.image, &random_inputs(&mut rng, 16), FUEL).is_equal(),
            "opaque program {seed} not equivalent"
        );
        let text: Vec<String> = emit_asm(&out.image)
            .lines()
            .map(|l| l.trim().to_string())
            .collect();
        found |= text.windows(4).any(|w| {
            let p = w[0]
                .strip_prefix("xor ")
                .and_then(|s| s.split_once(", "))
                .filter(|(a, b)| a == b)
                .map(|(a, _)| a);
            p.is_some_and(|p| {
                w[1] == format!("inc {p}")
                    && w[2].starts_with("cmp ")
                    && w[2].ends_with(p)
                    && w[3].starts_with("jne ")
            })
        });
    }
    ensure!(found, "no inc/cmp/jne opaque predicate produced");
    Ok("or 0x4711, add 1, mov 0, two swap verdicts, always-taken jne".into())
}

const UNSOUND: &str = "\
obfuscating bad_add: add {a:rm}, {k:imm} => sub {a}, {k}
obfuscating bad_mov: mov {a:reg}, {k:imm} => mov {a}, {r0}
obfuscating bad_xor: xor {a:rm}, {b:val} => or {a}, {b}
obfuscating bad_inc: inc {a:rm} => dec {a}
obfuscating bad_sub: sub {a:rm}, {b:val} => add {a}, {b}
";

fn revert_exactness() -> Check {
    let mut rules = RuleSet::builtin();
    rules.extend(RuleSet::parse(UNSOUND).map_err(|e| e.to_string())?);
    let m = Mutator::new(rules);
    let kind = TransformKind::ObfuscatingSubstitution;
    let (mut attempts, mut reverts, mut seed) = (0usize, 0usize, 0u64);
    while attempts < 10_000 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let img = random_program(&mut rng, ProgramShape::default());
        let mut current = img.clone();
        for site in m.applicable_sites(&img, kind) {
            if !m.applicable_sites(&current, kind).contains(&site) {
                continue;
            }
            let before = encode_text(&current).map_err(|e| e.to_string())?;
            let out = m
                .apply(kind, &current, &[site], &mut rng)
                .map_err(|e| e.to_string())?;
            attempts += out.applied.len() + out.reverted.len();
            if !out.reverted.is_empty() {
                reverts += 1;
                let after = encode_text(&out.image).map_err(|e| e.to_string())?;
                ensure!(
                    after == before && out.image == current,
                    "program {seed}: reverted site changed the image"
                );
            }
            current = out.image;
        }
        let v = equivalent(&img, &current, &random_inputs(&mut rng, 16), FUEL);
        ensure!(v.is_equal(), "program {seed}: {v:?}");
        seed += 1;
    }
    ensure!(reverts > 0, "no reverts observed");
    Ok(format!(
        "{attempts} attempts over {seed} programs, {reverts} reverts byte-identical"
    ))
}

fn clustering_economy() -> Check {
    let c = corpus(1000, 150, 40);
    let clusters = cluster_corpus(&c);
    ensure!(clusters.len() == 150, "cluster count {}", clusters.len());
    let engine = Engine {
        jobs: 4,
        ..Engine::default()
    };
    let params = passes(150, 41);
    let out = engine.run(&c, &params, None).map_err(|e| e.to_string())?;
    let r = &out.report;
    ensure!(
        r.pipeline_binaries == 150 && r.passes == 150,
        "pipeline {} passes {}",
        r.pipeline_binaries,
        r.passes
    );
    ensure!(r.iterations.values().all(|&n| n == 1), "uneven iterations");

    // Direct mutation: the representative's sample replaced by one other
    // member, so the pipeline operates on that member itself.
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut swapped = c.clone();
    let mut chosen = HashMap::new();
    for cl in &clusters.clusters {
        let Some(member) = cl.members[1..].choose(&mut rng) else {
            continue;
        };
        let rep = c.get(cl.representative()).unwrap();
        let img = c.get(member).unwrap().decode().unwrap();
        let direct =
            Sample::from_image(rep.id.clone(), &img, rep.label, rep.family.clone(), None).unwrap();
        let slot = swapped.samples.iter_mut().find(|s| s.id == rep.id).unwrap();
        *slot = direct;
        chosen.insert(rep.id.clone(), member.clone());
    }
    let direct_out = engine
        .run(&swapped, &params, None)
        .map_err(|e| e.to_string())?;
    let key = |s: &Sample| {
        let l = s.lineage.as_ref().unwrap();
        (l.parent.clone(), l.iteration)
    };
    let fan: HashMap<_, &Sample> = out.emitted.iter().map(|s| (key(s), s)).collect();
    let mut pairs = Vec::new();
    for d in &direct_out.emitted {
        let (parent, iteration) = key(d);
        if let Some(member) = chosen.get(&parent) {
            if let Some(f) = fan.get(&(member.clone(), iteration)) {
                pairs.push((*f, d));
            }
        }
    }
    ensure!(
        pairs.len() >= 100,
        "only {} (member, emission) pairs",
        pairs.len()
    );
    for (f, d) in pairs.choose_multiple(&mut rng, 100) {
        let (fi, di) = (f.decode().unwrap(), d.decode().unwrap());
        let inputs = random_inputs(&mut rng, 16);
        ensure!(
            equivalent(&fi, &di, &inputs, FUEL).is_equal(),
            "{}: fan-out differs from direct mutation",
            f.id
        );
        let member = c
            .get(&f.lineage.as_ref().unwrap().parent)
            .unwrap()
            .decode()
            .unwrap();
        ensure!(
            equivalent(&member, &fi, &inputs, FUEL).is_equal(),
            "{}: not equivalent to its member",
            f.id
        );
    }
    Ok(format!(
        "1000 samples, 150 clusters, 150 passes, 100 of {} fan-out pairs equivalent",
        pairs.len()
    ))
}

fn emission_contract() -> Check {
    let c = corpus(16, 6, 50);
    let p = MutationParams {
        random_emit_probability: 0.0,
        tau: Some(2.0),
        ..passes(150, 51)
    };
    let out = run_budget(&c, &p, None).map_err(|e| e.to_string())?;
    let em = &out.report.emissions;
    ensure!(em.len() >= 2, "only {} emissions", em.len());
    let mut checked = 0;
    for (i, a) in em.iter().enumerate() {
        ensure!(a.total >= a.tau, "emission below tau: {a:?}");
        for b in &em[i + 1..] {
            if a.representative != b.representative {
                continue;
            }
            let sep = if a.chain == b.chain {
                (a.total - b.total).abs()
            } else {
                a.total + b.total
            };
            ensure!(sep >= a.tau, "separation {sep} < {}", a.tau);
            checked += 1;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(52);
    let ledger = ChangeLedger {
        total: 0.25,
        emissions: vec![],
    };
    let hits = (0..10_000)
        .filter(|_| should_emit(&ledger, 1.0, 0.10, &mut rng))
        .count();
    let rate = hits as f64 / 10_000.0;
    ensure!((rate - 0.10).abs() <= 0.02, "emission rate {rate}");
    Ok(format!(
        "{} emissions, {checked} pairs separated; random rate {rate:.4}",
        em.len()
    ))
}

fn budget_fairness() -> Check {
    let mut cases = 0;
    for (b, texts, jobs) in [
        (37u64, 5usize, 1usize),
        (100, 7, 1),
        (64, 9, 3),
        (5, 8, 2),
        (150, 1, 1),
    ] {
        let c = corpus(texts * 2, texts, b);
        let out = Engine {
            jobs,
            ..Engine::default()
        }
        .run(&c, &passes(b, b + 1), None)
        .map_err(|e| e.to_string())?;
        let r = &out.report;
        let total: u64 = r.iterations.values().sum();
        ensure!(
            r.passes == b && total == b,
            "B={b}: passes {} total {total}",
            r.passes
        );
        ensure!(
            r.iteration_spread() <= 1,
            "B={b} k={texts}: spread {}",
            r.iteration_spread()
        );
        cases += 1;
    }
    Ok(format!("{cases} budgets, totals exact, spread <= 1"))
}

fn mutate_into(manifest: &Path, out: &Path, seed: u64) -> Result<(), String> {
    let cfg = RunConfig::resolve(&Overrides {
        manifest: Some(manifest.to_path_buf()),
        out: Some(out.to_path_buf()),
        seed: Some(seed),
        budget_passes: Some(40),
        ..Overrides::default()
    })
    .map_err(|e| e.to_string())?;
    cmd_mutate(&cfg).map(|_| ()).map_err(|e| e.to_string())
}

fn dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    out.insert(
        MANIFEST_FILE.to_string(),
        fs::read(dir.join(MANIFEST_FILE)).unwrap(),
    );
    for e in fs::read_dir(dir.join("samples")).unwrap() {
        let e = e.unwrap();
        out.insert(
            e.file_name().to_string_lossy().into_owned(),
            fs::read(e.path()).unwrap(),
        );
    }
    out
}

fn determinism(root: &Path) -> Check {
    let manifest = root.join("in").join(MANIFEST_FILE);
    save_manifest(&corpus(24, 6, 70), &manifest).map_err(|e| e.to_string())?;
    mutate_into(&manifest, &root.join("a"), 71)?;
    mutate_into(&manifest, &root.join("b"), 71)?;
    let (a, b) = (dir_bytes(&root.join("a")), dir_bytes(&root.join("b")));
    ensure!(a.len() > 25, "nothing emitted");
    ensure!(a == b, "augmented corpora differ");
    Ok(format!("{} files byte-identical across two runs", a.len()))
}

fn label_conservation(root: &Path) -> Check {
    let c = load_manifest(&root.join("a").join(MANIFEST_FILE)).map_err(|e| e.to_string())?;
    let mut emitted = 0;
    for s in &c.samples {
        let (_, label, lineage) = decode_container(&s.bytes).map_err(|e| e.to_string())?;
        ensure!(
            label == s.label && lineage == s.lineage,
            "{}: container disagrees with manifest",
            s.id
        );
        let Some(lin) = &s.lineage else { continue };
        emitted += 1;
        let parent = c
            .get(&lin.parent)
            .ok_or_else(|| format!("{}: parent {} missing", s.id, lin.parent))?;
        ensure!(
            parent.lineage.is_none(),
            "{}: parent is not an original",
            s.id
        );
        ensure!(
            s.label == parent.label,
            "{}: label {} != {}",
            s.id,
            s.label,
            parent.label
        );
        ensure!(s.family == parent.family, "{}: family changed", s.id);
        ensure!(
            !lin.kinds.is_empty() && lin.iteration >= 1,
            "{}: incomplete lineage",
            s.id
        );
    }
    ensure!(emitted > 0, "no emitted samples");
    Ok(format!("{emitted} emitted samples audited"))
}

/// Blocks of the canonical text, keyed by label.
fn text_blocks(img: &BinaryImage) -> HashMap<String, Vec<String>> {
    let mut out: HashMap<String, Vec<String>> = HashMap::new();
    let mut current = None;
    for line in emit_asm(img).lines() {
        if line == ".data" {
            break;
        }
        if let Some(f) = line.strip_prefix(".func ") {
            current = Some(f.trim_end_matches(':').to_string());
        } else if !line.starts_with(' ') && line.ends_with(':') {
            current = Some(line.trim_end_matches(':').to_string());
        } else if line.starts_with(' ') {
            let key = current.clone().expect("instruction before any label");
            out.entry(key).or_default().push(line.trim().to_string());
            continue;
        } else {
            continue;
        }
        out.entry(current.clone().unwrap()).or_default();
    }
    out
}

fn oracle_fraction(parent: &BinaryImage, child: &BinaryImage) -> f64 {
    let (a, b) = (text_blocks(parent), text_blocks(child));
    let changed = a.iter().filter(|(k, v)| b.get(*k) != Some(v)).count();
    changed as f64 / a.len() as f64
}

fn oracle_quartile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    if lo + 1 >= sorted.len() {
        return sorted[lo];
    }
    sorted[lo] + (h - lo as f64) * (sorted[lo + 1] - sorted[lo])
}

fn oracle_rank(sizes: &mut [usize], p: usize) -> usize {
    sizes.sort_unstable();
    let rank = (p * sizes.len()).div_ceil(100).max(1);
    sizes[rank - 1]
}

fn instrumentation() -> Check {
    let base = corpus(60, 12, 90);
    let out = run_budget(&base, &passes(200, 91), None).map_err(|e| e.to_string())?;
    let c = out.augmented(&base);
    let stats = corpus_stats(
        &c,
        StatsConfig {
            pair_cap: 50,
            seed: 92,
        },
    );
    let images: HashMap<&str, BinaryImage> = c
        .samples
        .iter()
        .map(|s| (s.id.as_str(), s.decode().unwrap()))
        .collect();

    let children: Vec<_> = c.samples.iter().filter(|s| s.lineage.is_some()).collect();
    ensure!(
        children.len() >= 200,
        "only {} lineage pairs",
        children.len()
    );
    let mut rng = ChaCha8Rng::seed_from_u64(93);
    let reported: HashMap<&str, f64> = stats
        .block_change
        .values()
        .flat_map(|k| k.pairs.iter().map(|p| (p.child.as_str(), p.fraction)))
        .collect();
    let mut worst: f64 = 0.0;
    for s in children.choose_multiple(&mut rng, 200) {
        let lin = s.lineage.as_ref().unwrap();
        let want = oracle_fraction(&images[lin.parent.as_str()], &images[s.id.as_str()]);
        worst = worst.max((reported[s.id.as_str()] - want).abs());
    }
    ensure!(worst <= 1e-9, "pair fraction off by {worst}");
    for (kind, kf) in &stats.block_change {
        let mut v: Vec<f64> = children
            .iter()
            .filter(|s| {
                s.lineage
                    .as_ref()
                    .unwrap()
                    .kinds
                    .iter()
                    .any(|k| k.name() == kind)
            })
            .map(|s| {
                oracle_fraction(
                    &images[s.lineage.as_ref().unwrap().parent.as_str()],
                    &images[s.id.as_str()],
                )
            })
            .collect();
        ensure!(
            v.len() == kf.pairs.len(),
            "{kind}: {} pairs, oracle {}",
            kf.pairs.len(),
            v.len()
        );
        v.sort_by(f64::total_cmp);
        let q = kf.quartiles;
        let want = [
            v[0],
            oracle_quartile(&v, 0.25),
            oracle_quartile(&v, 0.5),
            oracle_quartile(&v, 0.75),
            v[v.len() - 1],
        ];
        let got = [q.min, q.q1, q.median, q.q3, q.max];
        ensure!(
            got.iter().zip(&want).all(|(g, w)| (g - w).abs() <= 1e-9),
            "{kind}: {got:?} vs {want:?}"
        );
    }

    let mut families: BTreeMap<String, usize> = BTreeMap::new();
    for s in &c.samples {
        let mut root = s;
        while let Some(l) = &root.lineage {
            root = c.get(&l.parent).unwrap();
        }
        let fam = s.family.clone().unwrap_or_else(|| root.id.clone());
        *families.entry(fam).or_default() += 1;
    }
    let f = &stats.families;
    let mut sizes: Vec<usize> = families.values().copied().collect();
    ensure!(
        f.sizes == families && f.count == families.len(),
        "family sizes differ"
    );
    ensure!(
        f.median == oracle_rank(&mut sizes, 50) && f.p99 == oracle_rank(&mut sizes, 99),
        "family percentiles differ"
    );

    let payload = |img: &BinaryImage| {
        let mut v = encode_text(img).unwrap();
        for d in &img.data {
            v.extend(&d.bytes);
        }
        v
    };
    let mut pair_count = 0;
    for (fam, pw) in &stats.pairwise {
        let n = families[fam];
        ensure!(
            pw.members == n && pw.pairs.len() == (n * (n - 1) / 2).min(50),
            "{fam}: pair count"
        );
        for p in &pw.pairs {
            let (a, b) = (
                payload(&images[p.a.as_str()]),
                payload(&images[p.b.as_str()]),
            );
            let long = a.len().max(b.len());
            let diff = (0..long).filter(|&i| a.get(i) != b.get(i)).count();
            ensure!(
                p.byte_diff == diff && p.percent_diff == diff as f64 / long as f64,
                "{fam}: {} vs {}",
                p.a,
                p.b
            );
            pair_count += 1;
        }
        let mut v: Vec<f64> = pw.pairs.iter().map(|p| p.percent_diff).collect();
        v.sort_by(f64::total_cmp);
        let q = pw.percent_diff;
        ensure!(
            q.min == v[0] && q.max == v[v.len() - 1] && q.median == oracle_quartile(&v, 0.5),
            "{fam}: quartiles"
        );
    }
    Ok(format!(
        "200 pairs within {worst:e}, {} kinds, {} families, {pair_count} byte diffs exact",
        stats.block_change.len(),
        families.len()
    ))
}

fn main() {
    let tmp = tempfile::tempdir().expect("temp dir");
    let root = tmp.path().to_path_buf();
    let criteria: Vec<(&str, Box<dyn Fn() -> Check>)> = vec![
        ("semantic soundness", Box::new(soundness)),
        ("worked-example fidelity", Box::new(worked_examples)),
        ("revert exactness", Box::new(revert_exactness)),
        ("clustering economy", Box::new(clustering_economy)),
        ("emission contract", Box::new(emission_contract)),
        ("budget and fairness", Box::new(budget_fairness)),
        (
            "determinism",
            Box::new({
                let r = root.clone();
                move || determinism(&r)
            }),
        ),
        (
            "label conservation",
            Box::new({
                let r = root.clone();
                move || label_conservation(&r)
            }),
        ),
        ("instrumentation parity", Box::new(instrumentation)),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into()))
        });
        match result {
            Ok(detail) => println!("criterion {} {name}: PASS ({detail})", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {} {name}: FAIL ({why})", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} of {} criteria failed", criteria.len());
        std::process::exit(1);
    }
    println!("all {} criteria passed", criteria.len());
}
