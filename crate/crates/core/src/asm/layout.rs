//! Fixed instruction widths and address assignment.
//!
//! Widths are synthetic but fixed per opcode and operand shape:
//!
//! | part                    | bytes   |
//! |-------------------------|---------|
//! | opcode                  | 1       |
//! | shape byte (if any operand) | 1   |
//! | register                | 1       |
//! | immediate               | 4       |
//! | memory `[base+index+disp]` | 5    |
//! | data label `[label+disp]`  | 5    |
//! | code label              | 4       |
//! | raw bytes (`.db`)       | 1 + n   |
//!
//! So `nop` is 1 byte, `mov eax, ebx` 4, `mov eax, 0x5` 7 and `jmp L` 6.
//! The container encoder emits exactly these many bytes per instruction.

use super::{BinaryImage, Instruction, Operand};

pub const TEXT_BASE: u32 = 0x0000_1000;
pub const DATA_BASE: u32 = 0x0040_0000;

pub(crate) fn operand_width(op: &Operand) -> u32 {
    match op {
        Operand::Reg(_) => 1,
        Operand::Imm(_) => 4,
        Operand::Mem(_) | Operand::Data(_) => 5,
        Operand::Code(_) => 4,
        Operand::Bytes(b) => 1 + b.len() as u32,
    }
}

pub fn width(instr: &Instruction) -> u32 {
    let shape = if instr.operands.is_empty() { 0 } else { 1 };
    1 + shape + instr.operands.iter().map(operand_width).sum::<u32>()
}

/// Recomputes every block address, data offset and the text size.
pub fn relayout(image: &BinaryImage) -> BinaryImage {
    let mut out = image.clone();
    relayout_in_place(&mut out);
    out
}

pub(crate) fn relayout_in_place(image: &mut BinaryImage) {
    let mut addr = TEXT_BASE;
    for f in &mut image.functions {
        for b in &mut f.blocks {
            b.addr = addr;
            addr += b.instrs.iter().map(width).sum::<u32>();
        }
    }
    image.text_size = addr - TEXT_BASE;
    let mut offset = 0;
    for d in &mut image.data {
        d.offset = offset;
        offset += d.bytes.len() as u32;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::{BasicBlock, Function, Opcode, Register};

    fn image(instrs: Vec<Instruction>) -> BinaryImage {
        let f = Function {
            name: "main".into(),
            blocks: vec![BasicBlock::new("main", instrs)],
        };
        BinaryImage::new(vec![f], vec![])
    }

    #[test]
    fn widths_follow_table() {
        assert_eq!(width(&Instruction::op0(Opcode::Nop)), 1);
        assert_eq!(
            width(&Instruction::op2(
                Opcode::Mov,
                Operand::Reg(Register::Eax),
                Operand::Reg(Register::Ebx)
            )),
            4
        );
        assert_eq!(
            width(&Instruction::op2(
                Opcode::Mov,
                Operand::Reg(Register::Eax),
                Operand::Imm(5)
            )),
            7
        );
        assert_eq!(
            width(&Instruction::op1(Opcode::Jmp, Operand::Code("L".into()))),
            6
        );
        assert_eq!(width(&Instruction::db(vec![1, 2, 3])), 6);
    }

    #[test]
    fn text_size_is_sum_of_widths() {
        let instrs = vec![
            Instruction::op2(Opcode::Mov, Operand::Reg(Register::Eax), Operand::Imm(5)),
            Instruction::op1(Opcode::Out, Operand::Reg(Register::Eax)),
            Instruction::op0(Opcode::Halt),
        ];
        let total: u32 = instrs.iter().map(width).sum();
        let img = image(instrs);
        assert_eq!(img.text_size, total);
        assert_eq!(img.functions[0].blocks[0].addr, TEXT_BASE);
    }
}
