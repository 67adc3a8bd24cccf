//! Region-level effect check gating every transformation.
//!
//! The original and mutated code are run side by side from the same entry
//! states: boundary register patterns first, then seeded random ones, over
//! pseudo-random memory. Runs stay inside the rewritten region, following
//! calls into straight-line functions, and stop where control leaves it.
//! The two runs must leave at the same place with the same output trace,
//! stack pointer and memory, and agree on every register and flag live at
//! the exit.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::asm::{BinaryImage, Flag, LocSet, Register, Terminator};
use crate::interp::{splitmix, Backing, Cpu, DataMap, FaultKind, Flow, STACK_TOP};

use super::liveness::LivenessMap;

const TRIALS: u64 = 64;
const STEP_LIMIT: usize = 4096;
const BOUNDARY: [u32; 5] = [0, 1, 0xffff_ffff, 0x7fff_ffff, 0x8000_0000];

/// The code a transformation replaced. `entry` is the label control enters
/// through in both images; `original` and `mutated` list the block labels
/// belonging to the region in each image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionSpec {
    pub function: String,
    pub entry: String,
    pub original: Vec<String>,
    pub mutated: Vec<String>,
}

impl RegionSpec {
    /// A single block rewritten in place.
    pub fn block(function: &str, label: &str) -> Self {
        RegionSpec {
            function: function.to_string(),
            entry: label.to_string(),
            original: vec![label.to_string()],
            mutated: vec![label.to_string()],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RevertReason {
    LiveRegisterClobber(Register),
    LiveFlagClobber(Flag),
    MemoryMismatch,
    OutputMismatch,
    ControlFlowMismatch,
    ExecutesData,
    Fault(FaultKind),
    Inconclusive,
}

impl std::fmt::Display for RevertReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RevertReason::LiveRegisterClobber(r) => write!(f, "live-register-clobber({r})"),
            RevertReason::LiveFlagClobber(fl) => write!(f, "live-flag-clobber({fl})"),
            RevertReason::MemoryMismatch => f.write_str("memory-mismatch"),
            RevertReason::OutputMismatch => f.write_str("output-mismatch"),
            RevertReason::ControlFlowMismatch => f.write_str("control-flow-mismatch"),
            RevertReason::ExecutesData => f.write_str("executes-data"),
            RevertReason::Fault(k) => write!(f, "fault({k:?})"),
            RevertReason::Inconclusive => f.write_str("inconclusive"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verification {
    Accepted,
    Reverted(RevertReason),
}

impl Verification {
    pub fn is_accepted(&self) -> bool {
        matches!(self, Verification::Accepted)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Exit {
    Label(String),
    Ret,
    Halt(u32),
    CallOut { callee: String, ret: String },
    Fault(FaultKind),
    Fuel,
}

struct Frame {
    ret_fi: usize,
    ret_bi: usize,
    token: u32,
}

struct Evaluator<'a> {
    image: &'a BinaryImage,
    data: DataMap,
    fi: usize,
    entry: &'a str,
    labels: HashSet<&'a str>,
}

fn label_token(label: &str) -> u32 {
    let h = label.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x100_0000_01b3)
    });
    splitmix(h) as u32
}

impl<'a> Evaluator<'a> {
    fn new(
        image: &'a BinaryImage,
        function: &str,
        entry: &'a str,
        labels: &'a [String],
    ) -> Option<Self> {
        Some(Evaluator {
            image,
            data: DataMap::new(image),
            fi: image.function_index(function)?,
            entry,
            labels: labels.iter().map(String::as_str).collect(),
        })
    }

    fn follows(&self, callee: &str) -> Option<usize> {
        let fi = self.image.function_index(callee)?;
        let f = &self.image.functions[fi];
        f.is_straight_line().then_some(fi)
    }

    /// Follows region-internal blocks consisting of a single `jmp`.
    fn resolve(&self, mut label: String) -> String {
        for _ in 0..64 {
            if !self.labels.contains(label.as_str()) {
                break;
            }
            let Some(bi) = self.image.functions[self.fi].block_index(&label) else {
                break;
            };
            let b = &self.image.functions[self.fi].blocks[bi];
            match (b.instrs.len(), b.terminator()) {
                (1, Terminator::Jmp(t)) => label = t,
                _ => break,
            }
        }
        label
    }

    fn run(&self, cpu: &mut Cpu) -> Exit {
        let Some(bi0) = self.image.functions[self.fi].block_index(self.entry) else {
            return Exit::Fault(FaultKind::IllegalOperand);
        };
        let (mut fi, mut bi, mut idx) = (self.fi, bi0, 0usize);
        let mut frames: Vec<Frame> = Vec::new();
        // Entering block `b` of the region function: stay or leave.
        let enter = |label: &str, frames: &[Frame]| -> bool {
            frames.is_empty() && (label == self.entry || !self.labels.contains(label))
        };
        for _ in 0..STEP_LIMIT {
            let func = &self.image.functions[fi];
            let block = &func.blocks[bi];
            if idx >= block.instrs.len() {
                if bi + 1 >= func.blocks.len() {
                    return Exit::Fault(FaultKind::FellOffEnd);
                }
                bi += 1;
                idx = 0;
                let l = &func.blocks[bi].label;
                if fi == self.fi && enter(l, &frames) {
                    return Exit::Label(l.clone());
                }
                continue;
            }
            let ins = &block.instrs[idx];
            match cpu.exec(ins, &self.data) {
                Err(k) => return Exit::Fault(k),
                Ok(Flow::Next) => idx += 1,
                Ok(Flow::Halt(c)) => return Exit::Halt(c),
                Ok(Flow::Jump(l)) => {
                    let Some(nb) = func.block_index(&l) else {
                        return Exit::Fault(FaultKind::IllegalOperand);
                    };
                    if fi == self.fi && enter(&l, &frames) {
                        return Exit::Label(l);
                    }
                    bi = nb;
                    idx = 0;
                }
                Ok(Flow::Call(g)) => {
                    let ret_bi = bi + 1;
                    match self.follows(&g) {
                        Some(gi) if frames.len() < 8 && ret_bi < func.blocks.len() => {
                            let token = label_token(&func.blocks[ret_bi].label);
                            if let Err(k) = cpu.push(token) {
                                return Exit::Fault(k);
                            }
                            frames.push(Frame {
                                ret_fi: fi,
                                ret_bi,
                                token,
                            });
                            (fi, bi, idx) = (gi, 0, 0);
                        }
                        _ => {
                            let ret = func
                                .blocks
                                .get(ret_bi)
                                .map(|b| b.label.clone())
                                .unwrap_or_default();
                            let ret = if fi == self.fi {
                                self.resolve(ret)
                            } else {
                                ret
                            };
                            return Exit::CallOut { callee: g, ret };
                        }
                    }
                }
                Ok(Flow::Ret) => {
                    let Some(frame) = frames.pop() else {
                        return Exit::Ret;
                    };
                    match cpu.pop() {
                        Ok(v) if v == frame.token => {}
                        Ok(_) => return Exit::Fault(FaultKind::BadReturn),
                        Err(k) => return Exit::Fault(k),
                    }
                    (fi, bi, idx) = (frame.ret_fi, frame.ret_bi, 0);
                    let l = &self.image.functions[fi].blocks[bi].label;
                    if fi == self.fi && enter(l, &frames) {
                        return Exit::Label(l.clone());
                    }
                }
            }
        }
        Exit::Fuel
    }
}

fn entry_state(seed: u64, trial: u64) -> Cpu {
    let mut s = splitmix(seed ^ trial.wrapping_mul(0x2545_f491_4f6c_dd1d));
    let mut next = || {
        s = splitmix(s);
        s
    };
    let mut cpu = Cpu::new(Backing::Hashed(next()));
    let t = trial as usize;
    for r in Register::ALL {
        let v = if t < BOUNDARY.len() {
            BOUNDARY[t]
        } else if next() % 4 == 0 {
            BOUNDARY[(next() % BOUNDARY.len() as u64) as usize]
        } else {
            next() as u32
        };
        cpu.regs[r.index()] = v;
    }
    let esp = STACK_TOP - 0x4000 - 4 * (next() % 1024) as u32;
    cpu.regs[Register::Esp.index()] = esp;
    if trial % 4 == 1 {
        cpu.regs[Register::Ebp.index()] = esp.wrapping_add(4 * (next() % 64) as u32);
    }
    for f in Flag::ALL {
        cpu.flags[f.index()] = next() & 1 == 1;
    }
    cpu
}

fn region_seed(region: &RegionSpec) -> u64 {
    splitmix(label_token(&region.function) as u64 ^ (label_token(&region.entry) as u64) << 32)
}

/// Compares a rewritten region against the code it replaced.
pub fn verify_and_revert(
    original: &BinaryImage,
    mutated: &BinaryImage,
    region: &RegionSpec,
    live: &LivenessMap,
) -> Verification {
    verify_with_trials(original, mutated, region, live, TRIALS)
}

fn verify_with_trials(
    original: &BinaryImage,
    mutated: &BinaryImage,
    region: &RegionSpec,
    live: &LivenessMap,
    trials: u64,
) -> Verification {
    let (Some(orig), Some(muta)) = (
        Evaluator::new(original, &region.function, &region.entry, &region.original),
        Evaluator::new(mutated, &region.function, &region.entry, &region.mutated),
    ) else {
        return Verification::Reverted(RevertReason::ControlFlowMismatch);
    };
    let seed = region_seed(region);
    for t in 0..trials {
        let mut a = entry_state(seed, t);
        let mut b = a.clone();
        let ea = orig.run(&mut a);
        let eb = muta.run(&mut b);
        if let Err(reason) = compare(&ea, &a, &eb, &b, live) {
            return Verification::Reverted(reason);
        }
    }
    Verification::Accepted
}

fn compare(ea: &Exit, a: &Cpu, eb: &Exit, b: &Cpu, live: &LivenessMap) -> Result<(), RevertReason> {
    if *eb == Exit::Fault(FaultKind::ExecutedData) && *ea != *eb {
        return Err(RevertReason::ExecutesData);
    }
    if *ea == Exit::Fuel || *eb == Exit::Fuel {
        return Err(RevertReason::Inconclusive);
    }
    if a.trace != b.trace {
        return Err(RevertReason::OutputMismatch);
    }
    match (ea, eb) {
        (Exit::Fault(x), Exit::Fault(y)) if x == y => return Ok(()),
        (_, Exit::Fault(k)) => return Err(RevertReason::Fault(*k)),
        _ if ea != eb => return Err(RevertReason::ControlFlowMismatch),
        _ => {}
    }
    let check = match ea {
        Exit::Halt(_) => return Ok(()),
        Exit::Label(l) => live.label_live_in(l).unwrap_or(LocSet::ALL) | LocSet::reg(Register::Esp),
        _ => LocSet::ALL,
    };
    for r in check.registers() {
        if a.regs[r.index()] != b.regs[r.index()] {
            return Err(RevertReason::LiveRegisterClobber(r));
        }
    }
    for f in check.flag_iter() {
        if a.flags[f.index()] != b.flags[f.index()] {
            return Err(RevertReason::LiveFlagClobber(f));
        }
    }
    if a.mem.written != b.mem.written {
        return Err(RevertReason::MemoryMismatch);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::liveness;
    use crate::textio::parse_asm;

    fn check(orig: &str, muta: &str) -> Verification {
        let a = parse_asm(orig).unwrap();
        let b = parse_asm(muta).unwrap();
        let live = liveness(&a.functions[0]);
        verify_and_revert(&a, &b, &RegionSpec::block("main", "main"), &live)
    }

    #[test]
    fn semantic_nop_accepted() {
        let v = check(
            ".func main:\nmov eax, 1\nout eax\nhalt\n",
            ".func main:\nmov eax, 1\npush eax\ninc eax\nor eax, 0x1c\nadd eax, DWORD PTR [esp-0x34]\nnot eax\npop eax\nout eax\nhalt\n",
        );
        assert_eq!(v, Verification::Accepted);
    }

    #[test]
    fn live_clobber_reverted() {
        let v = check(
            ".func main:\nmov ebx, eax\njmp L\nL: out eax\nhalt\n",
            ".func main:\nmov ebx, eax\ninc eax\njmp L\nL: out eax\nhalt\n",
        );
        assert_eq!(
            v,
            Verification::Reverted(RevertReason::LiveRegisterClobber(Register::Eax))
        );
    }

    #[test]
    fn dead_clobber_accepted() {
        let v = check(
            ".func main:\nmov ebx, ecx\njmp L\nL: out ebx\nhalt\n",
            ".func main:\nmov ebx, ecx\ninc eax\njmp L\nL: out ebx\nhalt\n",
        );
        assert_eq!(v, Verification::Accepted);
    }

    #[test]
    fn live_flag_reverted() {
        let v = check(
            ".func main:\ncmp eax, ebx\njmp L\nL: je M\nM: halt\n",
            ".func main:\ncmp eax, ebx\nxor ecx, ecx\njmp L\nL: je M\nM: halt\n",
        );
        assert_eq!(
            v,
            Verification::Reverted(RevertReason::LiveFlagClobber(Flag::Zf))
        );
    }
}
