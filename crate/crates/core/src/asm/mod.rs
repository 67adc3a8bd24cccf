//! The assembly-level program model: registers, operands, instructions,
//! basic blocks, functions and whole images, plus layout maintenance.

mod layout;
mod locset;
mod partition;
mod program;

pub(crate) use layout::relayout_in_place;
pub use layout::{relayout, width, DATA_BASE, TEXT_BASE};
pub use locset::LocSet;
pub use partition::{partition_blocks, partition_blocks_with, PartitionError, Stmt};
pub use program::{
    BasicBlock, BinaryImage, DataItem, Function, ImageError, ImageMeta, Terminator, FORMAT_VERSION,
};

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Reserved data label that the interpreter maps onto the input vector.
pub const INPUT_LABEL: &str = "__input";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Register {
    Eax,
    Ebx,
    Ecx,
    Edx,
    Esi,
    Edi,
    Ebp,
    Esp,
}

impl Register {
    pub const ALL: [Register; 8] = [
        Register::Eax,
        Register::Ebx,
        Register::Ecx,
        Register::Edx,
        Register::Esi,
        Register::Edi,
        Register::Ebp,
        Register::Esp,
    ];

    /// Every register a transformation may allocate as scratch (all but ESP).
    pub const ALLOCATABLE: [Register; 7] = [
        Register::Eax,
        Register::Ebx,
        Register::Ecx,
        Register::Edx,
        Register::Esi,
        Register::Edi,
        Register::Ebp,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Register> {
        Register::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Register::Eax => "eax",
            Register::Ebx => "ebx",
            Register::Ecx => "ecx",
            Register::Edx => "edx",
            Register::Esi => "esi",
            Register::Edi => "edi",
            Register::Ebp => "ebp",
            Register::Esp => "esp",
        }
    }

    pub fn parse(s: &str) -> Option<Register> {
        let lower = s.to_ascii_lowercase();
        Register::ALL.into_iter().find(|r| r.name() == lower)
    }
}

impl fmt::Display for Register {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Flag {
    Zf,
    Sf,
    Cf,
    Of,
}

impl Flag {
    pub const ALL: [Flag; 4] = [Flag::Zf, Flag::Sf, Flag::Cf, Flag::Of];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Flag::Zf => "ZF",
            Flag::Sf => "SF",
            Flag::Cf => "CF",
            Flag::Of => "OF",
        }
    }

    pub fn parse(s: &str) -> Option<Flag> {
        let upper = s.to_ascii_uppercase();
        Flag::ALL.into_iter().find(|f| f.name() == upper)
    }
}

impl fmt::Display for Flag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A memory reference `[base + index + disp]`. With neither register it is
/// an absolute address.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MemRef {
    pub base: Option<Register>,
    pub index: Option<Register>,
    pub disp: i32,
}

impl MemRef {
    pub fn base(base: Register, disp: i32) -> Self {
        MemRef {
            base: Some(base),
            index: None,
            disp,
        }
    }

    pub fn registers(&self) -> impl Iterator<Item = Register> {
        self.base.into_iter().chain(self.index)
    }

    pub fn uses(&self, reg: Register) -> bool {
        self.base == Some(reg) || self.index == Some(reg)
    }
}

/// A word access relative to a named data label.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DataRef {
    pub label: String,
    pub disp: i32,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Operand {
    Reg(Register),
    Imm(i32),
    Mem(MemRef),
    Data(DataRef),
    Code(String),
    Bytes(Vec<u8>),
}

impl Operand {
    pub fn is_memory(&self) -> bool {
        matches!(self, Operand::Mem(_) | Operand::Data(_))
    }

    pub fn as_reg(&self) -> Option<Register> {
        match self {
            Operand::Reg(r) => Some(*r),
            _ => None,
        }
    }

    pub fn as_imm(&self) -> Option<i32> {
        match self {
            Operand::Imm(v) => Some(*v),
            _ => None,
        }
    }

    /// Registers named by this operand, including address registers.
    pub fn registers(&self) -> Vec<Register> {
        match self {
            Operand::Reg(r) => vec![*r],
            Operand::Mem(m) => m.registers().collect(),
            _ => Vec::new(),
        }
    }

    pub fn mentions(&self, reg: Register) -> bool {
        match self {
            Operand::Reg(r) => *r == reg,
            Operand::Mem(m) => m.uses(reg),
            _ => false,
        }
    }

    pub(crate) fn map_registers(&self, f: &impl Fn(Register) -> Register) -> Operand {
        match self {
            Operand::Reg(r) => Operand::Reg(f(*r)),
            Operand::Mem(m) => Operand::Mem(MemRef {
                base: m.base.map(f),
                index: m.index.map(f),
                disp: m.disp,
            }),
            other => other.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Opcode {
    Mov,
    Add,
    Sub,
    Inc,
    Dec,
    Push,
    Pop,
    Xor,
    Or,
    And,
    Not,
    Neg,
    Lea,
    Cmp,
    Test,
    Jmp,
    Je,
    Jne,
    Call,
    Ret,
    Nop,
    Out,
    Halt,
    Db,
}

impl Opcode {
    pub const ALL: [Opcode; 24] = [
        Opcode::Mov,
        Opcode::Add,
        Opcode::Sub,
        Opcode::Inc,
        Opcode::Dec,
        Opcode::Push,
        Opcode::Pop,
        Opcode::Xor,
        Opcode::Or,
        Opcode::And,
        Opcode::Not,
        Opcode::Neg,
        Opcode::Lea,
        Opcode::Cmp,
        Opcode::Test,
        Opcode::Jmp,
        Opcode::Je,
        Opcode::Jne,
        Opcode::Call,
        Opcode::Ret,
        Opcode::Nop,
        Opcode::Out,
        Opcode::Halt,
        Opcode::Db,
    ];

    pub fn mnemonic(self) -> &'static str {
        match self {
            Opcode::Mov => "mov",
            Opcode::Add => "add",
            Opcode::Sub => "sub",
            Opcode::Inc => "inc",
            Opcode::Dec => "dec",
            Opcode::Push => "push",
            Opcode::Pop => "pop",
            Opcode::Xor => "xor",
            Opcode::Or => "or",
            Opcode::And => "and",
            Opcode::Not => "not",
            Opcode::Neg => "neg",
            Opcode::Lea => "lea",
            Opcode::Cmp => "cmp",
            Opcode::Test => "test",
            Opcode::Jmp => "jmp",
            Opcode::Je => "je",
            Opcode::Jne => "jne",
            Opcode::Call => "call",
            Opcode::Ret => "ret",
            Opcode::Nop => "nop",
            Opcode::Out => "out",
            Opcode::Halt => "halt",
            Opcode::Db => ".db",
        }
    }

    pub fn from_mnemonic(s: &str) -> Option<Opcode> {
        let lower = s.to_ascii_lowercase();
        Opcode::ALL.into_iter().find(|op| op.mnemonic() == lower)
    }

    pub fn index(self) -> u8 {
        self as u8
    }

    pub fn from_index(i: u8) -> Option<Opcode> {
        Opcode::ALL.get(i as usize).copied()
    }

    /// Branch, call, return or halt: ends a basic block.
    pub fn is_control(self) -> bool {
        matches!(
            self,
            Opcode::Jmp | Opcode::Je | Opcode::Jne | Opcode::Call | Opcode::Ret | Opcode::Halt
        )
    }

    /// Control never reaches the next instruction in layout order.
    pub fn is_unconditional_exit(self) -> bool {
        matches!(self, Opcode::Jmp | Opcode::Ret | Opcode::Halt)
    }

    /// Writes all four flags.
    pub fn sets_all_flags(self) -> bool {
        matches!(
            self,
            Opcode::Add
                | Opcode::Sub
                | Opcode::Cmp
                | Opcode::Xor
                | Opcode::Or
                | Opcode::And
                | Opcode::Test
                | Opcode::Neg
        )
    }
}

impl fmt::Display for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.mnemonic())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Instruction {
    pub opcode: Opcode,
    pub operands: Vec<Operand>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OperandError {
    #[error("{opcode} takes {expected} operand(s), found {found}")]
    Arity {
        opcode: Opcode,
        expected: &'static str,
        found: usize,
    },
    #[error("illegal operand shape for {opcode}: {detail}")]
    Shape { opcode: Opcode, detail: String },
}

impl Instruction {
    pub fn new(opcode: Opcode, operands: Vec<Operand>) -> Self {
        Instruction { opcode, operands }
    }

    pub fn op0(opcode: Opcode) -> Self {
        Instruction::new(opcode, Vec::new())
    }

    pub fn op1(opcode: Opcode, a: Operand) -> Self {
        Instruction::new(opcode, vec![a])
    }

    pub fn op2(opcode: Opcode, a: Operand, b: Operand) -> Self {
        Instruction::new(opcode, vec![a, b])
    }

    pub fn db(bytes: Vec<u8>) -> Self {
        Instruction::new(Opcode::Db, vec![Operand::Bytes(bytes)])
    }

    pub fn is_control(&self) -> bool {
        self.opcode.is_control()
    }

    pub fn is_data(&self) -> bool {
        self.opcode == Opcode::Db
    }

    /// The code label this instruction transfers control to, if any.
    pub fn target(&self) -> Option<&str> {
        match (self.opcode, self.operands.first()) {
            (Opcode::Jmp | Opcode::Je | Opcode::Jne | Opcode::Call, Some(Operand::Code(l))) => {
                Some(l)
            }
            _ => None,
        }
    }

    pub fn mentions(&self, reg: Register) -> bool {
        self.operands.iter().any(|o| o.mentions(reg))
    }

    /// True when ESP appears explicitly as a register or address operand.
    pub fn mentions_esp(&self) -> bool {
        self.mentions(Register::Esp)
    }

    pub fn map_registers(&self, f: impl Fn(Register) -> Register) -> Instruction {
        Instruction {
            opcode: self.opcode,
            operands: self.operands.iter().map(|o| o.map_registers(&f)).collect(),
        }
    }

    /// Checks operand count and kinds for the opcode.
    pub fn check_operands(&self) -> Result<(), OperandError> {
        use Operand as O;
        let op = self.opcode;
        let ops = &self.operands;
        let arity = |expected: &'static str, ok: bool| {
            if ok {
                Ok(())
            } else {
                Err(OperandError::Arity {
                    opcode: op,
                    expected,
                    found: ops.len(),
                })
            }
        };
        let shape = |detail: &str| OperandError::Shape {
            opcode: op,
            detail: detail.to_string(),
        };
        let is_rm = |o: &Operand| matches!(o, O::Reg(_) | O::Mem(_) | O::Data(_));
        let is_value = |o: &Operand| matches!(o, O::Reg(_) | O::Imm(_) | O::Mem(_) | O::Data(_));
        match op {
            Opcode::Mov | Opcode::Add | Opcode::Sub | Opcode::Xor | Opcode::Or | Opcode::And => {
                arity("2", ops.len() == 2)?;
                if !is_rm(&ops[0]) {
                    return Err(shape("destination must be a register or memory"));
                }
                if !is_value(&ops[1]) {
                    return Err(shape("source must be a register, immediate or memory"));
                }
                if ops[0].is_memory() && ops[1].is_memory() {
                    return Err(shape("memory-to-memory form is not encodable"));
                }
            }
            Opcode::Cmp | Opcode::Test => {
                arity("2", ops.len() == 2)?;
                if !is_value(&ops[0]) || !is_value(&ops[1]) {
                    return Err(shape("operands must be registers, immediates or memory"));
                }
                if ops[0].is_memory() && ops[1].is_memory() {
                    return Err(shape("memory-to-memory form is not encodable"));
                }
                if matches!(ops[0], O::Imm(_)) && matches!(ops[1], O::Imm(_)) {
                    return Err(shape("two immediates"));
                }
            }
            Opcode::Inc | Opcode::Dec | Opcode::Not | Opcode::Neg | Opcode::Pop => {
                arity("1", ops.len() == 1)?;
                if !is_rm(&ops[0]) {
                    return Err(shape("operand must be a register or memory"));
                }
                if op == Opcode::Pop && ops[0] == O::Reg(Register::Esp) {
                    return Err(shape("pop esp is not supported"));
                }
            }
            Opcode::Push | Opcode::Out => {
                arity("1", ops.len() == 1)?;
                if !is_value(&ops[0]) {
                    return Err(shape("operand must be a register, immediate or memory"));
                }
            }
            Opcode::Lea => {
                arity("2", ops.len() == 2)?;
                if !matches!(ops[0], O::Reg(_)) {
                    return Err(shape("destination must be a register"));
                }
                if !ops[1].is_memory() {
                    return Err(shape("source must be a memory reference"));
                }
            }
            Opcode::Jmp | Opcode::Je | Opcode::Jne | Opcode::Call => {
                arity("1", ops.len() == 1)?;
                if !matches!(ops[0], O::Code(_)) {
                    return Err(shape("target must be a code label"));
                }
            }
            Opcode::Ret | Opcode::Nop => arity("0", ops.is_empty())?,
            Opcode::Halt => {
                arity("0 or 1", ops.len() <= 1)?;
                if let Some(o) = ops.first() {
                    if !matches!(o, O::Reg(_) | O::Imm(_)) {
                        return Err(shape("exit code must be a register or immediate"));
                    }
                }
            }
            Opcode::Db => {
                arity("1", ops.len() == 1)?;
                match &ops[0] {
                    O::Bytes(b) if !b.is_empty() && b.len() <= 255 => {}
                    O::Bytes(_) => return Err(shape("1 to 255 bytes per directive")),
                    _ => return Err(shape("raw bytes expected")),
                }
            }
        }
        if op != Opcode::Db && ops.iter().any(|o| matches!(o, O::Bytes(_))) {
            return Err(shape("raw bytes are only valid in .db"));
        }
        if !matches!(op, Opcode::Jmp | Opcode::Je | Opcode::Jne | Opcode::Call)
            && ops.iter().any(|o| matches!(o, O::Code(_)))
        {
            return Err(shape("code labels are only valid as branch targets"));
        }
        Ok(())
    }
}

pub fn fmt_imm(v: i32) -> String {
    if (-9..=9).contains(&v) {
        v.to_string()
    } else if v < 0 {
        format!("-0x{:x}", (v as i64).unsigned_abs())
    } else {
        format!("0x{v:x}")
    }
}

fn fmt_disp(out: &mut String, disp: i32, leading: bool) {
    if disp == 0 {
        if !leading {
            return;
        }
        out.push('0');
        return;
    }
    if disp < 0 {
        out.push_str(&format!("-0x{:x}", (disp as i64).unsigned_abs()));
    } else {
        if !leading {
            out.push('+');
        }
        out.push_str(&format!("0x{disp:x}"));
    }
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operand::Reg(r) => write!(f, "{r}"),
            Operand::Imm(v) => f.write_str(&fmt_imm(*v)),
            Operand::Mem(m) => {
                let mut inner = String::new();
                match (m.base, m.index) {
                    (None, None) => inner.push_str(&format!("0x{:x}", m.disp as u32)),
                    (b, i) => {
                        let regs: Vec<String> = b
                            .into_iter()
                            .chain(i)
                            .map(|r| r.name().to_string())
                            .collect();
                        inner.push_str(&regs.join("+"));
                        fmt_disp(&mut inner, m.disp, false);
                    }
                }
                write!(f, "DWORD PTR [{inner}]")
            }
            Operand::Data(d) => {
                let mut inner = d.label.clone();
                fmt_disp(&mut inner, d.disp, false);
                write!(f, "DWORD PTR [{inner}]")
            }
            Operand::Code(l) => f.write_str(l),
            Operand::Bytes(b) => {
                let parts: Vec<String> = b.iter().map(|x| format!("0x{x:02x}")).collect();
                f.write_str(&parts.join(", "))
            }
        }
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.opcode.mnemonic())?;
        for (i, op) in self.operands.iter().enumerate() {
            f.write_str(if i == 0 { " " } else { ", " })?;
            write!(f, "{op}")?;
        }
        Ok(())
    }
}
