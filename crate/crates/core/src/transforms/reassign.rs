use rand::Rng;

use crate::asm::{BasicBlock, Instruction, Opcode, Operand, Register};

use super::{balanced, pick, shift_esp, Rewrite, SiteCtx};

const MAX_SPAN: usize = 6;

/// The lowest allocatable register the block never mentions.
fn free_register(instrs: &[Instruction]) -> Option<Register> {
    Register::ALLOCATABLE
        .iter()
        .copied()
        .find(|r| !instrs.iter().any(|i| i.mentions(*r)))
}

fn candidates(instrs: &[Instruction]) -> impl Iterator<Item = Register> + '_ {
    Register::ALLOCATABLE
        .iter()
        .copied()
        .filter(move |r| instrs.iter().any(|i| i.mentions(*r)))
}

/// Balanced spans `(start, end)` of the body mentioning some allocatable register.
fn spans(block: &BasicBlock) -> Vec<(usize, usize)> {
    let n = block.body_len();
    let mut out = Vec::new();
    for s in 0..n {
        for e in s + 1..=n.min(s + MAX_SPAN) {
            let span = &block.instrs[s..e];
            if balanced(span) && candidates(span).next().is_some() {
                out.push((s, e));
            }
        }
    }
    out
}

pub(super) fn applicable(ctx: &SiteCtx) -> bool {
    let block = ctx.block();
    free_register(&block.instrs).is_some() && !spans(block).is_empty()
}

pub(super) fn rewrite<R: Rng + ?Sized>(ctx: &SiteCtx, rng: &mut R) -> Option<Rewrite> {
    let block = ctx.block();
    let ry = free_register(&block.instrs)?;
    let &(s, e) = pick(&spans(block), rng)?;
    let regs: Vec<Register> = candidates(&block.instrs[s..e]).collect();
    let rx = *pick(&regs, rng)?;
    let mut instrs = block.instrs[..s].to_vec();
    instrs.push(Instruction::op1(Opcode::Push, Operand::Reg(ry)));
    instrs.push(Instruction::op2(
        Opcode::Mov,
        Operand::Reg(ry),
        Operand::Reg(rx),
    ));
    for ins in &block.instrs[s..e] {
        let renamed = ins.map_registers(|r| if r == rx { ry } else { r });
        instrs.push(shift_esp(&renamed, 4));
    }
    instrs.push(Instruction::op2(
        Opcode::Mov,
        Operand::Reg(rx),
        Operand::Reg(ry),
    ));
    instrs.push(Instruction::op1(Opcode::Pop, Operand::Reg(ry)));
    instrs.extend_from_slice(&block.instrs[e..]);
    let image = ctx.replace_block(vec![BasicBlock::new(block.label.clone(), instrs)]);
    Some(Rewrite {
        image,
        region: ctx.region(vec![block.label.clone()]),
        blocks_changed: 1,
    })
}
