//! Seeded random programs and corpora for tests and benchmarks.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::asm::BinaryImage;
use crate::corpus::{Corpus, Sample};
use crate::textio::{parse_asm, Label};

/// Size limits for [`random_program`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProgramShape {
    pub min_instrs: usize,
    pub max_instrs: usize,
    pub max_functions: usize,
}

impl Default for ProgramShape {
    fn default() -> Self {
        ProgramShape {
            min_instrs: 5,
            max_instrs: 40,
            max_functions: 4,
        }
    }
}

/// Registers the generator computes with. EBP stays the frame pointer.
const REGS: [&str; 6] = ["eax", "ebx", "ecx", "edx", "esi", "edi"];
const DATA_WORDS: usize = 4;
/// Words of input the generated programs read.
pub const INPUT_WORDS: usize = 4;

struct Gen<'a, R: Rng + ?Sized> {
    rng: &'a mut R,
    labels: usize,
}

impl<R: Rng + ?Sized> Gen<'_, R> {
    fn reg(&mut self) -> &'static str {
        REGS[self.rng.gen_range(0..REGS.len())]
    }

    fn reg_except(&mut self, avoid: &str) -> &'static str {
        loop {
            let r = self.reg();
            if r != avoid {
                return r;
            }
        }
    }

    fn imm(&mut self) -> String {
        match self.rng.gen_range(0..4) {
            0 => format!("{}", self.rng.gen_range(0..16)),
            1 => format!("0x{:x}", self.rng.gen::<u16>()),
            2 => format!("{}", -(self.rng.gen_range(1..300))),
            _ => format!("0x{:x}", self.rng.gen::<u32>()),
        }
    }

    fn src(&mut self) -> String {
        if self.rng.gen_bool(0.5) {
            self.reg().to_string()
        } else {
            self.imm()
        }
    }

    fn label(&mut self, stem: &str) -> String {
        self.labels += 1;
        format!("{stem}_{}", self.labels)
    }

    /// One straight-line statement of 1 or 2 instructions. Never touches `avoid`.
    fn simple(&mut self, avoid: Option<&str>) -> Vec<String> {
        let mut r = self.reg();
        while Some(r) == avoid {
            r = self.reg();
        }
        let s = match self.rng.gen_range(0..14) {
            0 => format!("mov {r}, {}", self.imm()),
            1 => format!(
                "mov {r}, DWORD PTR [__input+0x{:x}]",
                4 * self.rng.gen_range(0..INPUT_WORDS)
            ),
            2 => {
                let s = self.reg_except(avoid.unwrap_or(""));
                format!("mov {r}, {s}")
            }
            3 | 4 => {
                let op = ["add", "sub", "xor", "or", "and"]
                    .choose(self.rng)
                    .copied()
                    .unwrap_or("add");
                let mut s = self.src();
                if Some(s.as_str()) == avoid {
                    s = self.imm();
                }
                format!("{op} {r}, {s}")
            }
            5 => {
                let op = ["inc", "dec", "not", "neg"]
                    .choose(self.rng)
                    .copied()
                    .unwrap_or("inc");
                format!("{op} {r}")
            }
            6 => {
                let s = self.reg_except(avoid.unwrap_or(""));
                format!("lea {r}, DWORD PTR [{s}+0x{:x}]", self.rng.gen_range(0..64))
            }
            7 => {
                let s = self.reg_except(avoid.unwrap_or(""));
                return vec![format!("push {s}"), format!("pop {r}")];
            }
            8 => format!(
                "mov DWORD PTR [ebp-0x{:x}], {r}",
                4 * self.rng.gen_range(1..5)
            ),
            9 => format!(
                "mov {r}, DWORD PTR [ebp-0x{:x}]",
                4 * self.rng.gen_range(1..5)
            ),
            10 => format!(
                "mov DWORD PTR [buf+0x{:x}], {r}",
                4 * self.rng.gen_range(0..DATA_WORDS)
            ),
            11 => format!(
                "add {r}, DWORD PTR [buf+0x{:x}]",
                4 * self.rng.gen_range(0..DATA_WORDS)
            ),
            12 => format!("out {r}"),
            _ => {
                let s = self.reg_except(avoid.unwrap_or(""));
                return vec![format!("cmp {r}, {s}"), format!("test {r}, {r}")];
            }
        };
        vec![s]
    }

    /// A function body of about `budget` instructions ending in `end`.
    fn body(&mut self, budget: usize, callees: &[String], end: &[String]) -> Vec<String> {
        // statements: (labels placed before, lines)
        let mut stmts: Vec<(Vec<String>, Vec<String>)> = Vec::new();
        let mut pending: Vec<(usize, String)> = Vec::new();
        let mut used = end.len();
        while used < budget {
            let roll = self.rng.gen_range(0..20);
            let lines = if roll < 2 && !callees.is_empty() {
                let c = callees.choose(self.rng).cloned().unwrap_or_default();
                vec![format!("call {c}")]
            } else if roll < 4 && budget - used >= 3 {
                let l = self.label("L");
                let j = if self.rng.gen_bool(0.5) { "je" } else { "jne" };
                let r = self.reg();
                let s = self.src();
                let ahead = stmts.len() + 1 + self.rng.gen_range(0..3);
                pending.push((ahead, l.clone()));
                vec![format!("cmp {r}, {s}"), format!("{j} {l}")]
            } else if roll == 4 && budget - used >= 5 {
                let l = self.label("loop");
                let n = self.rng.gen_range(1..4);
                let mut v = vec![format!("mov edi, {n}")];
                v.push(format!("{l}:"));
                let first = self.simple(Some("edi")).swap_remove(0);
                if first.starts_with("push") {
                    v.push(format!("inc {}", self.reg_except("edi")));
                } else {
                    v.push(first);
                }
                v.push("dec edi".into());
                v.push(format!("jne {l}"));
                v
            } else {
                self.simple(None)
            };
            let count = lines.iter().filter(|l| !l.ends_with(':')).count();
            let lines = if used + count > budget {
                vec![format!("inc {}", self.reg())]
            } else {
                lines
            };
            used += lines.iter().filter(|l| !l.ends_with(':')).count();
            let here: Vec<String> = pending
                .iter()
                .filter(|(at, _)| *at == stmts.len())
                .map(|(_, l)| l.clone())
                .collect();
            stmts.push((here, lines));
        }
        let mut out = Vec::new();
        for (labels, lines) in stmts {
            for l in labels {
                out.push(format!("{l}:"));
            }
            out.extend(lines);
        }
        // branch targets not yet placed land on the epilogue
        let n = out.len();
        for (_, l) in pending {
            if !out[..n].iter().any(|x| x == &format!("{l}:")) {
                out.push(format!("{l}:"));
            }
        }
        out.extend(end.iter().cloned());
        out
    }
}

/// A random well-formed program that reads `__input`, writes memory and
/// produces output. Calls only go to later functions, so every run
/// terminates.
pub fn random_program<R: Rng + ?Sized>(rng: &mut R, shape: ProgramShape) -> BinaryImage {
    let total =
        rng.gen_range(shape.min_instrs.max(3)..=shape.max_instrs.max(shape.min_instrs.max(3)));
    let max_f = shape.max_functions.max(1).min(total / 3).max(1);
    let nf = rng.gen_range(1..=max_f);
    let names: Vec<String> = std::iter::once("main".to_string())
        .chain((1..nf).map(|i| format!("f{i}")))
        .collect();
    let mut shares = vec![2usize; nf];
    shares[0] = 3;
    let mut rest = total.saturating_sub(shares.iter().sum());
    while rest > 0 {
        let i = rng.gen_range(0..nf);
        shares[i] += 1;
        rest -= 1;
    }
    let mut g = Gen { rng, labels: 0 };
    let mut text = String::from(".entry main\n");
    for (i, name) in names.iter().enumerate() {
        let callees = &names[i + 1..];
        let end: Vec<String> = if i == 0 {
            let r = g.reg();
            vec![format!("out {r}"), "halt".into()]
        } else {
            vec!["ret".into()]
        };
        text.push_str(&format!(".func {name}:\n"));
        for line in g.body(shares[i], callees, &end) {
            text.push_str("    ");
            text.push_str(&line);
            text.push('\n');
        }
    }
    text.push_str(".data\nbuf:\n    .db ");
    let bytes: Vec<String> = (0..DATA_WORDS * 4)
        .map(|_| format!("0x{:02x}", g.rng.gen::<u8>()))
        .collect();
    text.push_str(&bytes.join(", "));
    text.push('\n');
    parse_asm(&text).unwrap_or_else(|e| panic!("generator produced invalid text: {e}\n{text}"))
}

/// `count` random input vectors of [`INPUT_WORDS`] words.
pub fn random_inputs<R: Rng + ?Sized>(rng: &mut R, count: usize) -> Vec<Vec<u32>> {
    (0..count)
        .map(|_| (0..INPUT_WORDS).map(|_| rng.gen()).collect())
        .collect()
}

/// `image` with its data bytes replaced by random ones; the text is unchanged.
pub fn with_random_data<R: Rng + ?Sized>(image: &BinaryImage, rng: &mut R) -> BinaryImage {
    let mut out = image.clone();
    for d in &mut out.data {
        for b in &mut d.bytes {
            *b = rng.gen();
        }
    }
    out
}

/// A labeled corpus of `samples` programs over exactly `texts` distinct
/// text sections. Samples sharing a text differ only in data bytes and
/// share a family `fam{k}`.
pub fn synthetic_corpus<R: Rng + ?Sized>(
    rng: &mut R,
    samples: usize,
    texts: usize,
    shape: ProgramShape,
) -> Corpus {
    assert!(texts >= 1 && samples >= texts, "need samples >= texts >= 1");
    let mut bases: Vec<BinaryImage> = Vec::with_capacity(texts);
    let mut keys = std::collections::HashSet::new();
    while bases.len() < texts {
        let img = random_program(rng, shape);
        if keys.insert(crate::cluster::text_key(&img)) {
            bases.push(img);
        }
    }
    let labels: Vec<Label> = (0..texts)
        .map(|_| {
            if rng.gen_bool(0.5) {
                Label::Malicious
            } else {
                Label::Benign
            }
        })
        .collect();
    let mut assignment: Vec<usize> = (0..texts)
        .chain((texts..samples).map(|_| rng.gen_range(0..texts)))
        .collect();
    assignment.shuffle(rng);
    let width = samples.to_string().len().max(4);
    let list = assignment
        .into_iter()
        .enumerate()
        .map(|(i, k)| {
            let img = with_random_data(&bases[k], rng);
            Sample::from_image(
                format!("s{i:0width$}"),
                &img,
                labels[k],
                Some(format!("fam{k}")),
                None,
            )
            .expect("generated images encode")
        })
        .collect();
    Corpus::new(list)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interp::{execute, Outcome};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn programs_are_valid_and_halt() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..300 {
            let img = random_program(&mut rng, ProgramShape::default());
            img.validate().unwrap();
            let n = img.instruction_count();
            assert!((5..=40).contains(&n), "{n}");
            let r = execute(&img, &[1, 2, 3, 4], 100_000);
            assert!(matches!(r.outcome, Outcome::Halted(_)), "{:?}", r.outcome);
        }
    }
}
