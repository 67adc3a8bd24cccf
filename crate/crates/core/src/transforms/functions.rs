use rand::Rng;

use crate::analysis::RegionSpec;
use crate::asm::{BasicBlock, Function, Instruction, Opcode, Operand, Terminator};

use super::{balanced, pick, shift_esp, Rewrite, SiteCtx};

const MAX_OUTLINE: usize = 8;

/// Body of a straight-line callee eligible for inlining into `caller`.
fn inline_body<'a>(ctx: &SiteCtx<'a>) -> Option<&'a [Instruction]> {
    let Terminator::Call(g) = ctx.block().terminator() else {
        return None;
    };
    if g == ctx.function_name() {
        return None;
    }
    let callee = ctx.image.function(&g)?;
    if !callee.is_straight_line() {
        return None;
    }
    let instrs = &callee.blocks[0].instrs;
    let body = &instrs[..instrs.len() - 1];
    (balanced(body) && !body.iter().any(Instruction::mentions_esp)).then_some(body)
}

pub(super) fn inline_applicable(ctx: &SiteCtx) -> bool {
    inline_body(ctx).is_some()
}

pub(super) fn inline(ctx: &SiteCtx) -> Option<Rewrite> {
    let body = inline_body(ctx)?;
    let block = ctx.block();
    let mut instrs = block.instrs[..block.instrs.len() - 1].to_vec();
    instrs.extend_from_slice(body);
    if instrs.is_empty() {
        instrs.push(Instruction::op0(Opcode::Nop));
    }
    let image = ctx.replace_block(vec![BasicBlock::new(block.label.clone(), instrs)]);
    Some(Rewrite {
        image,
        region: ctx.region(vec![block.label.clone()]),
        blocks_changed: 1,
    })
}

fn outline_spans(block: &BasicBlock) -> Vec<(usize, usize)> {
    let n = block.body_len();
    let mut out = Vec::new();
    for s in 0..n {
        for e in s + 2..=n.min(s + MAX_OUTLINE) {
            if balanced(&block.instrs[s..e]) {
                out.push((s, e));
            }
        }
    }
    out
}

pub(super) fn outline_applicable(ctx: &SiteCtx) -> bool {
    !outline_spans(ctx.block()).is_empty()
}

pub(super) fn outline<R: Rng + ?Sized>(ctx: &SiteCtx, rng: &mut R) -> Option<Rewrite> {
    let block = ctx.block();
    let &(s, e) = pick(&outline_spans(block), rng)?;
    let fname = ctx.function_name();
    let callee = ctx.image.fresh_label(&format!("{fname}.out"));
    let cont = ctx.image.fresh_label(&format!("{}.k", block.label));
    // the return address sits between the caller's frame and the span
    let mut body: Vec<Instruction> = block.instrs[s..e].iter().map(|i| shift_esp(i, 4)).collect();
    body.push(Instruction::op0(Opcode::Ret));
    let mut head = block.instrs[..s].to_vec();
    head.push(Instruction::op1(
        Opcode::Call,
        Operand::Code(callee.clone()),
    ));
    let mut tail = block.instrs[e..].to_vec();
    if tail.is_empty() {
        tail.push(Instruction::op0(Opcode::Nop));
    }
    let mut image = ctx.replace_block(vec![
        BasicBlock::new(block.label.clone(), head),
        BasicBlock::new(cont.clone(), tail),
    ]);
    image.functions.insert(
        ctx.fi + 1,
        Function {
            name: callee.clone(),
            blocks: vec![BasicBlock::new(callee, body)],
        },
    );
    Some(Rewrite {
        image,
        region: ctx.region(vec![block.label.clone(), cont]),
        blocks_changed: 1,
    })
}

pub(super) fn reorder<R: Rng + ?Sized>(ctx: &SiteCtx, rng: &mut R) -> Option<Rewrite> {
    let n = ctx.image.functions.len();
    if n < 2 {
        return None;
    }
    let mut to = rng.gen_range(0..n - 1);
    if to >= ctx.fi {
        to += 1;
    }
    let mut image = ctx.image.clone();
    let f = image.functions.remove(ctx.fi);
    image.functions.insert(to, f);
    let name = ctx.function_name();
    Some(Rewrite {
        image,
        region: RegionSpec::block(name, name),
        blocks_changed: 1,
    })
}
