use serde::{Deserialize, Serialize};

use crate::asm::{BasicBlock, Flag, Instruction, LocSet, MemRef, Opcode, Operand, Register};

/// ESP-relative accesses farther than this from the block-entry stack
/// pointer are not assumed disjoint from the data section.
const STACK_REACH: i64 = 0x10_0000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StackBase {
    /// ESP as it was on entry to the block.
    Esp,
    /// EBP as it was on entry to the block.
    Ebp,
}

/// An abstract memory location. Byte ranges are inclusive.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MemClass {
    Stack { base: StackBase, lo: i64, hi: i64 },
    Data { label: String, lo: i64, hi: i64 },
    Unknown,
}

impl MemClass {
    fn word(base: StackBase, off: i64) -> MemClass {
        MemClass::Stack {
            base,
            lo: off,
            hi: off + 3,
        }
    }

    /// Whether two classes may name a common byte.
    pub fn may_alias(&self, other: &MemClass) -> bool {
        use MemClass::*;
        match (self, other) {
            (Unknown, _) | (_, Unknown) => true,
            (
                Stack {
                    base: b1,
                    lo: l1,
                    hi: h1,
                },
                Stack {
                    base: b2,
                    lo: l2,
                    hi: h2,
                },
            ) => b1 != b2 || (l1 <= h2 && l2 <= h1),
            (
                Data {
                    label: a,
                    lo: l1,
                    hi: h1,
                },
                Data {
                    label: b,
                    lo: l2,
                    hi: h2,
                },
            ) => a != b || (l1 <= h2 && l2 <= h1),
            (
                Stack {
                    base: StackBase::Esp,
                    lo,
                    hi,
                },
                Data { .. },
            )
            | (
                Data { .. },
                Stack {
                    base: StackBase::Esp,
                    lo,
                    hi,
                },
            ) => lo.abs() > STACK_REACH || hi.abs() > STACK_REACH,
            (
                Stack {
                    base: StackBase::Ebp,
                    ..
                },
                Data { .. },
            )
            | (
                Data { .. },
                Stack {
                    base: StackBase::Ebp,
                    ..
                },
            ) => true,
        }
    }
}

/// Read and write sets of an instruction or block.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RWSummary {
    pub reads: LocSet,
    pub writes: LocSet,
    pub mem_reads: Vec<MemClass>,
    pub mem_writes: Vec<MemClass>,
}

impl RWSummary {
    fn read_mem(&mut self, c: MemClass) {
        if !self.mem_reads.contains(&c) {
            self.mem_reads.push(c);
        }
    }

    fn write_mem(&mut self, c: MemClass) {
        if !self.mem_writes.contains(&c) {
            self.mem_writes.push(c);
        }
    }

    pub fn absorb(&mut self, other: &RWSummary) {
        self.reads |= other.reads;
        self.writes |= other.writes;
        for c in &other.mem_reads {
            self.read_mem(c.clone());
        }
        for c in &other.mem_writes {
            self.write_mem(c.clone());
        }
    }

    /// Whether executing `self` and `other` in either order may differ.
    pub fn conflicts(&self, other: &RWSummary, waw_exempt: LocSet) -> bool {
        if self.writes.intersects(other.reads) || self.reads.intersects(other.writes) {
            return true;
        }
        if (self.writes & other.writes - waw_exempt) != LocSet::EMPTY {
            return true;
        }
        let any =
            |xs: &[MemClass], ys: &[MemClass]| xs.iter().any(|x| ys.iter().any(|y| x.may_alias(y)));
        any(&self.mem_writes, &other.mem_reads)
            || any(&self.mem_reads, &other.mem_writes)
            || any(&self.mem_writes, &other.mem_writes)
    }
}

const ARITH_FLAGS: LocSet = LocSet::FLAGS;

fn zso() -> LocSet {
    LocSet::flags(&[Flag::Zf, Flag::Sf, Flag::Of])
}

/// Tracks ESP and EBP relative to their block-entry values.
#[derive(Debug, Clone, Copy)]
pub struct StackTracker {
    esp: Option<i64>,
    ebp_intact: bool,
}

impl Default for StackTracker {
    fn default() -> Self {
        StackTracker {
            esp: Some(0),
            ebp_intact: true,
        }
    }
}

impl StackTracker {
    fn class(&self, m: &MemRef) -> MemClass {
        match (m.base, m.index) {
            (Some(Register::Esp), None) => match self.esp {
                Some(off) => MemClass::word(StackBase::Esp, off + m.disp as i64),
                None => MemClass::Unknown,
            },
            (Some(Register::Ebp), None) if self.ebp_intact => {
                MemClass::word(StackBase::Ebp, m.disp as i64)
            }
            _ => MemClass::Unknown,
        }
    }

    fn operand_class(&self, op: &Operand) -> Option<MemClass> {
        match op {
            Operand::Mem(m) => Some(self.class(m)),
            Operand::Data(d) => Some(MemClass::Data {
                label: d.label.clone(),
                lo: d.disp as i64,
                hi: d.disp as i64 + 3,
            }),
            _ => None,
        }
    }

    fn address_regs(op: &Operand) -> LocSet {
        match op {
            Operand::Mem(m) => m
                .registers()
                .fold(LocSet::EMPTY, |acc, r| acc | LocSet::reg(r)),
            _ => LocSet::EMPTY,
        }
    }

    /// Summary of one instruction at the current stack offset; advances the
    /// tracker past it.
    pub fn step(&mut self, ins: &Instruction) -> RWSummary {
        let mut s = RWSummary::default();
        let ops = &ins.operands;
        // value read of an operand
        let read_val = |s: &mut RWSummary, t: &StackTracker, op: &Operand| match op {
            Operand::Reg(r) => s.reads.insert_reg(*r),
            Operand::Mem(_) | Operand::Data(_) => {
                s.reads |= Self::address_regs(op);
                s.read_mem(t.operand_class(op).expect("memory operand"));
            }
            _ => {}
        };
        let write_dst = |s: &mut RWSummary, t: &StackTracker, op: &Operand| match op {
            Operand::Reg(r) => s.writes.insert_reg(*r),
            Operand::Mem(_) | Operand::Data(_) => {
                s.reads |= Self::address_regs(op);
                s.write_mem(t.operand_class(op).expect("memory operand"));
            }
            _ => {}
        };
        let t = *self;
        match ins.opcode {
            Opcode::Mov => {
                read_val(&mut s, &t, &ops[1]);
                write_dst(&mut s, &t, &ops[0]);
            }
            Opcode::Add | Opcode::Sub | Opcode::Xor | Opcode::Or | Opcode::And => {
                read_val(&mut s, &t, &ops[0]);
                read_val(&mut s, &t, &ops[1]);
                write_dst(&mut s, &t, &ops[0]);
                s.writes |= ARITH_FLAGS;
            }
            Opcode::Cmp | Opcode::Test => {
                read_val(&mut s, &t, &ops[0]);
                read_val(&mut s, &t, &ops[1]);
                s.writes |= ARITH_FLAGS;
            }
            Opcode::Inc | Opcode::Dec => {
                read_val(&mut s, &t, &ops[0]);
                write_dst(&mut s, &t, &ops[0]);
                s.writes |= zso();
            }
            Opcode::Neg => {
                read_val(&mut s, &t, &ops[0]);
                write_dst(&mut s, &t, &ops[0]);
                s.writes |= ARITH_FLAGS;
            }
            Opcode::Not => {
                read_val(&mut s, &t, &ops[0]);
                write_dst(&mut s, &t, &ops[0]);
            }
            Opcode::Lea => {
                s.reads |= Self::address_regs(&ops[1]);
                write_dst(&mut s, &t, &ops[0]);
            }
            Opcode::Push => {
                read_val(&mut s, &t, &ops[0]);
                s.reads.insert_reg(Register::Esp);
                s.writes.insert_reg(Register::Esp);
                s.write_mem(match t.esp {
                    Some(off) => MemClass::word(StackBase::Esp, off - 4),
                    None => MemClass::Unknown,
                });
            }
            Opcode::Pop => {
                s.reads.insert_reg(Register::Esp);
                s.writes.insert_reg(Register::Esp);
                let slot = match t.esp {
                    Some(off) => MemClass::word(StackBase::Esp, off),
                    None => MemClass::Unknown,
                };
                s.read_mem(slot.clone());
                s.write_mem(slot);
                // the destination address is computed after ESP moves
                let after = StackTracker {
                    esp: t.esp.map(|o| o + 4),
                    ..t
                };
                write_dst(&mut s, &after, &ops[0]);
            }
            Opcode::Out => read_val(&mut s, &t, &ops[0]),
            Opcode::Halt => {
                if let Some(op) = ops.first() {
                    read_val(&mut s, &t, op);
                }
            }
            Opcode::Je | Opcode::Jne => s.reads.insert_flag(Flag::Zf),
            Opcode::Call => {
                s.reads = LocSet::ALL;
                s.writes = LocSet::ALL;
                s.read_mem(MemClass::Unknown);
                s.write_mem(MemClass::Unknown);
            }
            Opcode::Ret => {
                s.reads.insert_reg(Register::Esp);
                s.writes.insert_reg(Register::Esp);
                s.read_mem(match t.esp {
                    Some(off) => MemClass::word(StackBase::Esp, off),
                    None => MemClass::Unknown,
                });
            }
            Opcode::Jmp | Opcode::Nop | Opcode::Db => {}
        }
        self.advance(ins);
        s
    }

    fn advance(&mut self, ins: &Instruction) {
        let esp_imm = |sign: i64| match ins.operands.get(1) {
            Some(Operand::Imm(v)) => Some(sign * *v as i64),
            _ => None,
        };
        let dst_esp = ins.operands.first() == Some(&Operand::Reg(Register::Esp));
        self.esp = match ins.opcode {
            Opcode::Push => self.esp.map(|o| o - 4),
            Opcode::Pop if !dst_esp => self.esp.map(|o| o + 4),
            Opcode::Ret => self.esp.map(|o| o + 4),
            Opcode::Call => None,
            Opcode::Add if dst_esp => self.esp.zip(esp_imm(1)).map(|(o, d)| o + d),
            Opcode::Sub if dst_esp => self.esp.zip(esp_imm(-1)).map(|(o, d)| o + d),
            _ if dst_esp
                && !matches!(
                    ins.opcode,
                    Opcode::Cmp | Opcode::Test | Opcode::Push | Opcode::Out | Opcode::Halt
                ) =>
            {
                None
            }
            _ => self.esp,
        };
        let writes_ebp = ins.operands.first() == Some(&Operand::Reg(Register::Ebp))
            && !matches!(
                ins.opcode,
                Opcode::Cmp | Opcode::Test | Opcode::Push | Opcode::Out | Opcode::Halt
            );
        if writes_ebp || ins.opcode == Opcode::Call {
            self.ebp_intact = false;
        }
    }

    /// Current ESP offset from block entry, if known.
    pub fn esp_offset(&self) -> Option<i64> {
        self.esp
    }
}

/// Per-instruction summaries of a block, with stack offsets relative to
/// the block entry.
pub fn instruction_summaries(block: &BasicBlock) -> Vec<RWSummary> {
    let mut t = StackTracker::default();
    block.instrs.iter().map(|i| t.step(i)).collect()
}

/// Read/write summary of a whole block.
pub fn rw_summary(block: &BasicBlock) -> RWSummary {
    let mut s = RWSummary::default();
    for i in instruction_summaries(block) {
        s.absorb(&i);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textio::parse_asm;

    fn block(src: &str) -> BasicBlock {
        let img = parse_asm(&format!(".func main:\n{src}\nhalt\n")).unwrap();
        let mut b = img.functions[0].blocks[0].clone();
        b.instrs.pop();
        b
    }

    #[test]
    fn add_reads_and_writes() {
        let s = rw_summary(&block("add eax, ebx"));
        assert_eq!(
            s.reads,
            LocSet::reg(Register::Eax) | LocSet::reg(Register::Ebx)
        );
        assert_eq!(s.writes, LocSet::reg(Register::Eax) | LocSet::FLAGS);
        assert!(s.mem_reads.is_empty() && s.mem_writes.is_empty());
    }

    #[test]
    fn ebp_relative_load() {
        let s = rw_summary(&block("mov esi, DWORD PTR [ebp+0x8]"));
        assert_eq!(s.reads, LocSet::reg(Register::Ebp));
        assert_eq!(s.writes, LocSet::reg(Register::Esi));
        assert_eq!(
            s.mem_reads,
            vec![MemClass::Stack {
                base: StackBase::Ebp,
                lo: 8,
                hi: 11
            }]
        );
    }

    #[test]
    fn computed_address_is_unknown() {
        let s = rw_summary(&block("mov DWORD PTR [eax+ecx], edx"));
        assert_eq!(s.mem_writes, vec![MemClass::Unknown]);
        let s = rw_summary(&block("mov DWORD PTR [ebx+0x4], edx"));
        assert_eq!(s.mem_writes, vec![MemClass::Unknown]);
    }

    #[test]
    fn esp_offsets_follow_pushes() {
        let sums = instruction_summaries(&block("push eax\nmov ebx, DWORD PTR [esp+0x4]\npop ecx"));
        assert_eq!(sums[0].mem_writes, vec![MemClass::word(StackBase::Esp, -4)]);
        assert_eq!(sums[1].mem_reads, vec![MemClass::word(StackBase::Esp, 0)]);
        assert_eq!(sums[2].mem_reads, vec![MemClass::word(StackBase::Esp, -4)]);
    }

    #[test]
    fn aliasing() {
        let a = MemClass::word(StackBase::Esp, 0);
        let b = MemClass::word(StackBase::Esp, 4);
        let c = MemClass::word(StackBase::Esp, 2);
        assert!(!a.may_alias(&b));
        assert!(a.may_alias(&c));
        assert!(a.may_alias(&MemClass::word(StackBase::Ebp, 4)));
        assert!(a.may_alias(&MemClass::Unknown));
        let d = MemClass::Data {
            label: "k".into(),
            lo: 0,
            hi: 3,
        };
        assert!(!a.may_alias(&d));
        assert!(MemClass::word(StackBase::Ebp, 0).may_alias(&d));
    }
}
