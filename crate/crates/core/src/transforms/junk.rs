use rand::Rng;

use crate::asm::{BasicBlock, Instruction, LocSet, MemRef, Opcode, Operand, Register};

use super::{pick, Rewrite, SiteCtx};

fn reg(r: Register) -> Operand {
    Operand::Reg(r)
}

fn small_imm<R: Rng + ?Sized>(rng: &mut R) -> Operand {
    if rng.gen_bool(0.5) {
        Operand::Imm(rng.gen_range(1..0x100))
    } else {
        Operand::Imm(rng.gen())
    }
}

/// `push r; <arith on r>; pop r`. Clobbers flags.
fn save_arith<R: Rng + ?Sized>(r: Register, rng: &mut R) -> Vec<Instruction> {
    let mut out = vec![Instruction::op1(Opcode::Push, reg(r))];
    for _ in 0..rng.gen_range(1..=3) {
        let ins = match rng.gen_range(0..9) {
            0 => Instruction::op1(Opcode::Inc, reg(r)),
            1 => Instruction::op1(Opcode::Dec, reg(r)),
            2 => Instruction::op1(Opcode::Not, reg(r)),
            3 => Instruction::op1(Opcode::Neg, reg(r)),
            4 => Instruction::op2(Opcode::Or, reg(r), small_imm(rng)),
            5 => Instruction::op2(Opcode::Xor, reg(r), small_imm(rng)),
            6 => Instruction::op2(Opcode::Add, reg(r), small_imm(rng)),
            7 => Instruction::op2(Opcode::And, reg(r), small_imm(rng)),
            _ => {
                let disp = 4 * rng.gen_range(-16..4);
                Instruction::op2(
                    Opcode::Add,
                    reg(r),
                    Operand::Mem(MemRef::base(Register::Esp, disp)),
                )
            }
        };
        out.push(ins);
    }
    out.push(Instruction::op1(Opcode::Pop, reg(r)));
    out
}

/// `push r; mov r, k; lea r, [r+j]; pop r`. Leaves flags alone.
fn save_move<R: Rng + ?Sized>(r: Register, rng: &mut R) -> Vec<Instruction> {
    vec![
        Instruction::op1(Opcode::Push, reg(r)),
        Instruction::op2(Opcode::Mov, reg(r), small_imm(rng)),
        Instruction::op2(
            Opcode::Lea,
            reg(r),
            Operand::Mem(MemRef::base(r, rng.gen_range(-0x80..0x80))),
        ),
        Instruction::op1(Opcode::Pop, reg(r)),
    ]
}

/// Writes to a dead register.
fn dead_write<R: Rng + ?Sized>(d: Register, flags_dead: bool, rng: &mut R) -> Vec<Instruction> {
    let src = *pick(&Register::ALLOCATABLE, rng).expect("non-empty");
    let n = if flags_dead { 4 } else { 2 };
    let ins = match rng.gen_range(0..n) {
        0 => Instruction::op2(Opcode::Mov, reg(d), small_imm(rng)),
        1 => Instruction::op2(
            Opcode::Lea,
            reg(d),
            Operand::Mem(MemRef::base(src, rng.gen_range(-0x100..0x100))),
        ),
        2 => Instruction::op2(Opcode::Add, reg(d), reg(src)),
        _ => Instruction::op2(Opcode::Xor, reg(d), small_imm(rng)),
    };
    vec![ins]
}

/// The semantic nop to insert where `live` holds.
pub(crate) fn junk_sequence<R: Rng + ?Sized>(live: LocSet, rng: &mut R) -> Vec<Instruction> {
    let flags_dead = !live.intersects(LocSet::FLAGS);
    let dead: Vec<Register> = Register::ALLOCATABLE
        .iter()
        .copied()
        .filter(|r| !live.contains_reg(*r))
        .collect();
    let r = *pick(&Register::ALLOCATABLE, rng).expect("non-empty");
    let mut choices = vec![0, 1];
    if flags_dead {
        choices.push(2);
    }
    if !dead.is_empty() {
        choices.push(3);
    }
    match *pick(&choices, rng).expect("non-empty") {
        0 => vec![Instruction::op0(Opcode::Nop); rng.gen_range(1..=2)],
        1 => save_move(r, rng),
        2 => save_arith(r, rng),
        _ => dead_write(*pick(&dead, rng).expect("non-empty"), flags_dead, rng),
    }
}

pub(super) fn rewrite<R: Rng + ?Sized>(ctx: &SiteCtx, rng: &mut R) -> Option<Rewrite> {
    let block = ctx.block();
    let at = rng.gen_range(0..=block.body_len());
    let live = if at < block.instrs.len() {
        ctx.live.live_in(ctx.bi, at)
    } else {
        ctx.live.block_live_out(ctx.bi)
    };
    let mut instrs = block.instrs.clone();
    instrs.splice(at..at, junk_sequence(live, rng));
    let image = ctx.replace_block(vec![BasicBlock::new(block.label.clone(), instrs)]);
    Some(Rewrite {
        image,
        region: ctx.region(vec![block.label.clone()]),
        blocks_changed: 1,
    })
}
