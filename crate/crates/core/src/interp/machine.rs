//! Instruction semantics shared by the whole-program interpreter and the
//! block-effect checker.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::asm::{
    BinaryImage, Flag, Instruction, LocSet, MemRef, Opcode, Operand, Register, DATA_BASE,
    INPUT_LABEL,
};

/// Lowest address ESP may take.
pub const STACK_LIMIT: u32 = 0x0700_0000;
/// Initial ESP; the stack grows down from here.
pub const STACK_TOP: u32 = 0x0710_0000;
/// Initial EBP: a fixed frame region above the stack that pushes never reach.
pub const FRAME_BASE: u32 = STACK_TOP + 0x800;
/// Where the words of the input vector live (data label `__input`).
pub const INPUT_BASE: u32 = 0x0050_0000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FaultKind {
    ExecutedData,
    UnmappedCall,
    BadReturn,
    StackOverflow,
    StackUnderflow,
    IllegalOperand,
    FellOffEnd,
}

/// What unwritten memory reads as.
#[derive(Debug, Clone)]
pub(crate) enum Backing {
    /// Data section and input preloaded, everything else zero.
    Program { data: Vec<u8>, input: Vec<u32> },
    /// Pseudo-random contents derived from a seed.
    Hashed(u64),
}

impl Backing {
    fn byte(&self, addr: u32) -> u8 {
        match self {
            Backing::Program { data, input } => {
                if addr >= DATA_BASE && ((addr - DATA_BASE) as usize) < data.len() {
                    return data[(addr - DATA_BASE) as usize];
                }
                if addr >= INPUT_BASE {
                    let off = (addr - INPUT_BASE) as usize;
                    if off < input.len() * 4 {
                        return input[off / 4].to_le_bytes()[off % 4];
                    }
                }
                0
            }
            Backing::Hashed(seed) => {
                (splitmix(seed ^ (addr as u64).wrapping_mul(0x9e37_79b9)) >> 24) as u8
            }
        }
    }
}

pub(crate) fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Sparse byte-addressable memory. Stack slots released by POP or RET
/// revert to their backing value.
#[derive(Debug, Clone)]
pub(crate) struct Memory {
    pub written: BTreeMap<u32, u8>,
    pub backing: Backing,
}

impl Memory {
    pub fn new(backing: Backing) -> Self {
        Memory {
            written: BTreeMap::new(),
            backing,
        }
    }

    pub fn read_u32(&self, addr: u32) -> u32 {
        let mut b = [0u8; 4];
        for (i, slot) in b.iter_mut().enumerate() {
            let a = addr.wrapping_add(i as u32);
            *slot = match self.written.get(&a) {
                Some(v) => *v,
                None => self.backing.byte(a),
            };
        }
        u32::from_le_bytes(b)
    }

    pub fn write_u32(&mut self, addr: u32, v: u32) {
        for (i, byte) in v.to_le_bytes().into_iter().enumerate() {
            self.written.insert(addr.wrapping_add(i as u32), byte);
        }
    }

    pub fn release_u32(&mut self, addr: u32) {
        for i in 0..4 {
            self.written.remove(&addr.wrapping_add(i));
        }
    }
}

/// Locations touched by one executed instruction.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Footprint {
    pub reads: LocSet,
    pub writes: LocSet,
    /// Start addresses of 4-byte reads.
    pub mem_reads: Vec<u32>,
    /// Start addresses of 4-byte writes (including releases).
    pub mem_writes: Vec<u32>,
}

/// Control-flow effect of one instruction. Stack effects of CALL and RET
/// are left to the driver, which knows what a return address looks like.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum Flow {
    Next,
    Jump(String),
    Call(String),
    Ret,
    Halt(u32),
}

/// Resolves data labels to addresses.
#[derive(Debug, Clone, Default)]
pub(crate) struct DataMap {
    addrs: HashMap<String, u32>,
}

impl DataMap {
    pub fn new(image: &BinaryImage) -> Self {
        let mut addrs: HashMap<String, u32> = image
            .data
            .iter()
            .map(|d| (d.label.clone(), DATA_BASE + d.offset))
            .collect();
        addrs.insert(INPUT_LABEL.to_string(), INPUT_BASE);
        DataMap { addrs }
    }

    pub fn addr(&self, label: &str) -> Option<u32> {
        self.addrs.get(label).copied()
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Cpu {
    pub regs: [u32; 8],
    pub flags: [bool; 4],
    pub mem: Memory,
    pub trace: Vec<u32>,
    pub footprint: Option<Footprint>,
}

type Exec<T> = Result<T, FaultKind>;

impl Cpu {
    pub fn new(backing: Backing) -> Self {
        let mut regs = [0u32; 8];
        regs[Register::Esp.index()] = STACK_TOP;
        regs[Register::Ebp.index()] = FRAME_BASE;
        Cpu {
            regs,
            flags: [false; 4],
            mem: Memory::new(backing),
            trace: Vec::new(),
            footprint: None,
        }
    }

    pub fn reg(&mut self, r: Register) -> u32 {
        if let Some(fp) = &mut self.footprint {
            fp.reads.insert_reg(r);
        }
        self.regs[r.index()]
    }

    pub fn set_reg(&mut self, r: Register, v: u32) -> Exec<()> {
        if let Some(fp) = &mut self.footprint {
            fp.writes.insert_reg(r);
        }
        if r == Register::Esp {
            check_esp(v)?;
        }
        self.regs[r.index()] = v;
        Ok(())
    }

    fn flag(&mut self, f: Flag) -> bool {
        if let Some(fp) = &mut self.footprint {
            fp.reads.insert_flag(f);
        }
        self.flags[f.index()]
    }

    fn set_flag(&mut self, f: Flag, v: bool) {
        if let Some(fp) = &mut self.footprint {
            fp.writes.insert_flag(f);
        }
        self.flags[f.index()] = v;
    }

    fn set_zs(&mut self, r: u32) {
        self.set_flag(Flag::Zf, r == 0);
        self.set_flag(Flag::Sf, r >> 31 == 1);
    }

    fn load(&mut self, addr: u32) -> u32 {
        if let Some(fp) = &mut self.footprint {
            fp.mem_reads.push(addr);
        }
        self.mem.read_u32(addr)
    }

    fn store(&mut self, addr: u32, v: u32) {
        if let Some(fp) = &mut self.footprint {
            fp.mem_writes.push(addr);
        }
        self.mem.write_u32(addr, v);
    }

    fn release(&mut self, addr: u32) {
        if let Some(fp) = &mut self.footprint {
            fp.mem_writes.push(addr);
        }
        self.mem.release_u32(addr);
    }

    fn effective(&mut self, m: &MemRef) -> u32 {
        let mut a = m.disp as u32;
        if let Some(b) = m.base {
            a = a.wrapping_add(self.reg(b));
        }
        if let Some(i) = m.index {
            a = a.wrapping_add(self.reg(i));
        }
        a
    }

    fn address(&mut self, op: &Operand, data: &DataMap) -> Exec<u32> {
        match op {
            Operand::Mem(m) => Ok(self.effective(m)),
            Operand::Data(d) => data
                .addr(&d.label)
                .map(|a| a.wrapping_add(d.disp as u32))
                .ok_or(FaultKind::IllegalOperand),
            _ => Err(FaultKind::IllegalOperand),
        }
    }

    fn read(&mut self, op: &Operand, data: &DataMap) -> Exec<u32> {
        match op {
            Operand::Reg(r) => Ok(self.reg(*r)),
            Operand::Imm(v) => Ok(*v as u32),
            Operand::Mem(_) | Operand::Data(_) => {
                let a = self.address(op, data)?;
                Ok(self.load(a))
            }
            _ => Err(FaultKind::IllegalOperand),
        }
    }

    /// Destination access: the resolved location so a read-modify-write
    /// computes its address once.
    fn place(&mut self, op: &Operand, data: &DataMap) -> Exec<Place> {
        match op {
            Operand::Reg(r) => Ok(Place::Reg(*r)),
            Operand::Mem(_) | Operand::Data(_) => Ok(Place::Mem(self.address(op, data)?)),
            _ => Err(FaultKind::IllegalOperand),
        }
    }

    fn get(&mut self, p: Place) -> u32 {
        match p {
            Place::Reg(r) => self.reg(r),
            Place::Mem(a) => self.load(a),
        }
    }

    fn put(&mut self, p: Place, v: u32) -> Exec<()> {
        match p {
            Place::Reg(r) => self.set_reg(r, v),
            Place::Mem(a) => {
                self.store(a, v);
                Ok(())
            }
        }
    }

    pub fn push(&mut self, v: u32) -> Exec<()> {
        let sp = self.reg(Register::Esp).wrapping_sub(4);
        self.set_reg(Register::Esp, sp)?;
        self.store(sp, v);
        Ok(())
    }

    pub fn pop(&mut self) -> Exec<u32> {
        let sp = self.reg(Register::Esp);
        if sp >= STACK_TOP {
            return Err(FaultKind::StackUnderflow);
        }
        let v = self.load(sp);
        self.release(sp);
        self.set_reg(Register::Esp, sp.wrapping_add(4))?;
        Ok(v)
    }

    fn operand(ins: &Instruction, i: usize) -> Exec<&Operand> {
        ins.operands.get(i).ok_or(FaultKind::IllegalOperand)
    }

    /// Executes the data and flag effects of one instruction.
    pub fn exec(&mut self, ins: &Instruction, data: &DataMap) -> Exec<Flow> {
        use Opcode::*;
        match ins.opcode {
            Mov => {
                let v = self.read(Self::operand(ins, 1)?, data)?;
                let p = self.place(Self::operand(ins, 0)?, data)?;
                self.put(p, v)?;
            }
            Add | Sub | Xor | Or | And => {
                let p = self.place(Self::operand(ins, 0)?, data)?;
                let b = self.read(Self::operand(ins, 1)?, data)?;
                let a = self.get(p);
                let r = self.alu(ins.opcode, a, b);
                self.put(p, r)?;
            }
            Cmp => {
                let a = self.read(Self::operand(ins, 0)?, data)?;
                let b = self.read(Self::operand(ins, 1)?, data)?;
                self.alu(Sub, a, b);
            }
            Test => {
                let a = self.read(Self::operand(ins, 0)?, data)?;
                let b = self.read(Self::operand(ins, 1)?, data)?;
                self.alu(And, a, b);
            }
            Inc | Dec => {
                let p = self.place(Self::operand(ins, 0)?, data)?;
                let a = self.get(p);
                let (r, of) = if ins.opcode == Inc {
                    (a.wrapping_add(1), a == 0x7fff_ffff)
                } else {
                    (a.wrapping_sub(1), a == 0x8000_0000)
                };
                self.set_zs(r);
                self.set_flag(Flag::Of, of);
                self.put(p, r)?;
            }
            Not => {
                let p = self.place(Self::operand(ins, 0)?, data)?;
                let a = self.get(p);
                self.put(p, !a)?;
            }
            Neg => {
                let p = self.place(Self::operand(ins, 0)?, data)?;
                let a = self.get(p);
                let r = 0u32.wrapping_sub(a);
                self.set_zs(r);
                self.set_flag(Flag::Cf, a != 0);
                self.set_flag(Flag::Of, a == 0x8000_0000);
                self.put(p, r)?;
            }
            Lea => {
                let a = self.address(Self::operand(ins, 1)?, data)?;
                let p = self.place(Self::operand(ins, 0)?, data)?;
                self.put(p, a)?;
            }
            Push => {
                let v = self.read(Self::operand(ins, 0)?, data)?;
                self.push(v)?;
            }
            Pop => {
                let v = self.pop()?;
                let p = self.place(Self::operand(ins, 0)?, data)?;
                self.put(p, v)?;
            }
            Out => {
                let v = self.read(Self::operand(ins, 0)?, data)?;
                self.trace.push(v);
            }
            Nop => {}
            Jmp => return Ok(Flow::Jump(target(ins)?)),
            Je | Jne => {
                let zf = self.flag(Flag::Zf);
                let taken = if ins.opcode == Je { zf } else { !zf };
                return Ok(if taken {
                    Flow::Jump(target(ins)?)
                } else {
                    Flow::Next
                });
            }
            Call => return Ok(Flow::Call(target(ins)?)),
            Ret => return Ok(Flow::Ret),
            Halt => {
                let code = match ins.operands.first() {
                    Some(op) => self.read(op, data)?,
                    None => 0,
                };
                return Ok(Flow::Halt(code));
            }
            Db => return Err(FaultKind::ExecutedData),
        }
        Ok(Flow::Next)
    }

    fn alu(&mut self, op: Opcode, a: u32, b: u32) -> u32 {
        let (r, cf, of) = match op {
            Opcode::Add => {
                let r = a.wrapping_add(b);
                (r, r < a, ((a ^ r) & (b ^ r)) >> 31 == 1)
            }
            Opcode::Sub => {
                let r = a.wrapping_sub(b);
                (r, a < b, ((a ^ b) & (a ^ r)) >> 31 == 1)
            }
            Opcode::Xor => (a ^ b, false, false),
            Opcode::Or => (a | b, false, false),
            Opcode::And => (a & b, false, false),
            _ => unreachable!("not an ALU opcode"),
        };
        self.set_zs(r);
        self.set_flag(Flag::Cf, cf);
        self.set_flag(Flag::Of, of);
        r
    }
}

#[derive(Debug, Clone, Copy)]
enum Place {
    Reg(Register),
    Mem(u32),
}

fn target(ins: &Instruction) -> Exec<String> {
    ins.target()
        .map(str::to_string)
        .ok_or(FaultKind::IllegalOperand)
}

fn check_esp(v: u32) -> Exec<()> {
    if v < STACK_LIMIT {
        Err(FaultKind::StackOverflow)
    } else if v > STACK_TOP {
        Err(FaultKind::StackUnderflow)
    } else {
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cpu() -> Cpu {
        Cpu::new(Backing::Program {
            data: vec![],
            input: vec![],
        })
    }

    #[test]
    fn sub_flags() {
        let mut c = cpu();
        c.alu(Opcode::Sub, 1, 2);
        assert_eq!(c.flags, [false, true, true, false]);
        c.alu(Opcode::Sub, 0x8000_0000, 1);
        assert_eq!(c.flags, [false, false, false, true]);
        c.alu(Opcode::Sub, 5, 5);
        assert_eq!(c.flags, [true, false, false, false]);
    }

    #[test]
    fn add_flags() {
        let mut c = cpu();
        c.alu(Opcode::Add, 0xffff_ffff, 1);
        assert_eq!(c.flags, [true, false, true, false]);
        c.alu(Opcode::Add, 0x7fff_ffff, 1);
        assert_eq!(c.flags, [false, true, false, true]);
    }

    #[test]
    fn pop_releases_slot() {
        let mut c = cpu();
        c.push(0xdead_beef).unwrap();
        let sp = c.regs[Register::Esp.index()];
        assert_eq!(c.pop().unwrap(), 0xdead_beef);
        assert_eq!(c.mem.read_u32(sp), 0);
        assert!(c.mem.written.is_empty());
        assert_eq!(c.pop(), Err(FaultKind::StackUnderflow));
    }

    #[test]
    fn hashed_backing_is_deterministic() {
        let a = Memory::new(Backing::Hashed(7));
        let b = Memory::new(Backing::Hashed(7));
        assert_eq!(a.read_u32(0x1234), b.read_u32(0x1234));
        assert_ne!(
            a.read_u32(0x1234),
            Memory::new(Backing::Hashed(8)).read_u32(0x1234)
        );
    }
}
