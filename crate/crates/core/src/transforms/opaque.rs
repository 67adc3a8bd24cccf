use std::sync::OnceLock;

use rand::Rng;

use crate::asm::{BasicBlock, Instruction, LocSet, Opcode, Register, Stmt};
use crate::textio::parse_snippet;

use super::layout::fresh_labels;
use super::{pick, Rewrite, SiteCtx};

const TEMPLATES: &str = include_str!("opaque.templates");

/// A predicate-insertion template; see `opaque.templates` for the syntax.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpaqueTemplate {
    pub name: String,
    pub body: String,
}

impl OpaqueTemplate {
    pub fn parse_all(text: &str) -> Vec<OpaqueTemplate> {
        let mut out = Vec::new();
        let mut current: Option<OpaqueTemplate> = None;
        for line in text.lines() {
            let t = line.split('#').next().unwrap_or("").trim();
            if let Some(name) = t.strip_prefix("template ") {
                current = Some(OpaqueTemplate {
                    name: name.trim().to_string(),
                    body: String::new(),
                });
            } else if t == "end" {
                out.extend(current.take());
            } else if let Some(c) = current.as_mut() {
                if !t.is_empty() {
                    c.body.push_str(t);
                    c.body.push('\n');
                }
            }
        }
        out
    }

    /// The template text with every placeholder filled in.
    pub fn render(&self, p: Register, k: i32, bytes: &[u8], junk: &str, cont: &str) -> String {
        let bytes: Vec<String> = bytes.iter().map(|b| format!("0x{b:02x}")).collect();
        self.body
            .replace("{p}", p.name())
            .replace("{k}", &crate::asm::fmt_imm(k))
            .replace("{bytes}", &bytes.join(", "))
            .replace("{junk}", junk)
            .replace("{cont}", cont)
    }
}

/// The built-in templates.
pub fn opaque_templates() -> &'static [OpaqueTemplate] {
    static T: OnceLock<Vec<OpaqueTemplate>> = OnceLock::new();
    T.get_or_init(|| OpaqueTemplate::parse_all(TEMPLATES))
}

/// Splits labeled statements into blocks; `first` labels the opening block
/// and unlabeled leaders take names from `spare`.
fn blocks_from(
    first: &str,
    stmts: Vec<Stmt>,
    spare: &mut impl Iterator<Item = String>,
) -> Option<Vec<BasicBlock>> {
    let mut out = Vec::new();
    let mut cur = BasicBlock::new(first, Vec::new());
    let mut open = true;
    for s in stmts {
        match s {
            Stmt::Label(l) => {
                if !cur.instrs.is_empty() {
                    out.push(std::mem::replace(&mut cur, BasicBlock::new(l, Vec::new())));
                } else {
                    cur.label = l;
                }
                open = true;
            }
            Stmt::Instr(i) => {
                if !open {
                    cur = BasicBlock::new(spare.next()?, Vec::new());
                    open = true;
                }
                let control = i.is_control();
                cur.instrs.push(i);
                if control {
                    out.push(std::mem::replace(&mut cur, BasicBlock::new("", Vec::new())));
                    open = false;
                }
            }
        }
    }
    if open {
        if cur.instrs.is_empty() {
            cur.instrs.push(Instruction::op0(Opcode::Nop));
        }
        out.push(cur);
    }
    Some(out)
}

pub(super) fn rewrite<R: Rng + ?Sized>(ctx: &SiteCtx, rng: &mut R) -> Option<Rewrite> {
    let block = ctx.block();
    let live_at = |at: usize| {
        if at < block.instrs.len() {
            ctx.live.live_in(ctx.bi, at)
        } else {
            ctx.live.block_live_out(ctx.bi)
        }
    };
    let dead_reg = |live: LocSet| {
        Register::ALLOCATABLE
            .iter()
            .copied()
            .find(|r| !live.contains_reg(*r))
    };
    let points: Vec<usize> = (0..=block.body_len())
        .filter(|&at| {
            let live = live_at(at);
            !live.intersects(LocSet::FLAGS) && dead_reg(live).is_some()
        })
        .collect();
    let at = match pick(&points, rng) {
        Some(&at) => at,
        None => rng.gen_range(0..=block.body_len()),
    };
    let p = dead_reg(live_at(at)).unwrap_or(Register::Eax);
    let template = pick(opaque_templates(), rng)?;
    let k = loop {
        let k: i32 = rng.gen();
        if k != 0 && k != 1 {
            break k;
        }
    };
    let bytes: Vec<u8> = (0..rng.gen_range(4..=16)).map(|_| rng.gen()).collect();
    let mut labels = fresh_labels(ctx.image, &format!("{}.op", block.label), 8).into_iter();
    let junk = labels.next()?;
    let cont = labels.next()?;
    let text = template.render(p, k, &bytes, &junk, &cont);
    let mut stmts: Vec<Stmt> = block.instrs[..at]
        .iter()
        .cloned()
        .map(Stmt::Instr)
        .collect();
    stmts.extend(parse_snippet(&text).ok()?);
    stmts.extend(block.instrs[at..].iter().cloned().map(Stmt::Instr));
    let blocks = blocks_from(&block.label, stmts, &mut labels)?;
    let mutated: Vec<String> = blocks.iter().map(|b| b.label.clone()).collect();
    let image = ctx.replace_block(blocks);
    Some(Rewrite {
        image,
        region: ctx.region(mutated),
        blocks_changed: 1,
    })
}
