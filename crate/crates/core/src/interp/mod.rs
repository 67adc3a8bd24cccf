//! Deterministic interpreter: the oracle that defines observable behavior
//! (the OUT trace plus the exit status).

mod machine;

pub(crate) use machine::{splitmix, Backing, Cpu, DataMap, Flow};
pub use machine::{FaultKind, Footprint, FRAME_BASE, INPUT_BASE, STACK_LIMIT, STACK_TOP};

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asm::{width, BinaryImage, Flag, Register};

/// Position of an instruction: function, block label and index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pc {
    pub function: String,
    pub block: String,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Halted(u32),
    FuelExhausted,
    Fault { kind: FaultKind, pc: Pc },
}

impl Outcome {
    /// Outcomes compare by class, exit code and fault kind; the fault
    /// position is layout-dependent and ignored.
    pub fn same_class(&self, other: &Outcome) -> bool {
        match (self, other) {
            (Outcome::Halted(a), Outcome::Halted(b)) => a == b,
            (Outcome::FuelExhausted, Outcome::FuelExhausted) => true,
            (Outcome::Fault { kind: a, .. }, Outcome::Fault { kind: b, .. }) => a == b,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionResult {
    pub outcome: Outcome,
    pub trace: Vec<u32>,
    pub steps: u64,
}

/// Final machine state after a run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MachineState {
    pub registers: [u32; 8],
    pub flags: [bool; 4],
    /// Every byte written and not released.
    pub memory: BTreeMap<u32, u8>,
    pub pc: Option<Pc>,
}

impl MachineState {
    pub fn reg(&self, r: Register) -> u32 {
        self.registers[r.index()]
    }

    pub fn flag(&self, f: Flag) -> bool {
        self.flags[f.index()]
    }
}

/// One executed instruction with the locations it touched.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceStep {
    pub function: usize,
    pub block: usize,
    pub index: usize,
    pub footprint: Footprint,
}

struct CodeMap {
    labels: HashMap<String, (usize, usize)>,
    functions: HashMap<String, usize>,
    returns: HashMap<u32, (usize, usize)>,
}

impl CodeMap {
    fn new(image: &BinaryImage) -> Self {
        let mut labels = HashMap::new();
        let mut functions = HashMap::new();
        let mut returns = HashMap::new();
        for (fi, f) in image.functions.iter().enumerate() {
            functions.insert(f.name.clone(), fi);
            for (bi, b) in f.blocks.iter().enumerate() {
                labels.insert(b.label.clone(), (fi, bi));
                returns.insert(b.addr, (fi, bi));
            }
        }
        CodeMap {
            labels,
            functions,
            returns,
        }
    }
}

struct Run {
    result: ExecutionResult,
    cpu: Cpu,
    last_pc: Option<Pc>,
    steps: Vec<TraceStep>,
}

fn run(image: &BinaryImage, input: &[u32], fuel: u64, record: bool) -> Run {
    let map = CodeMap::new(image);
    let data = DataMap::new(image);
    let mut cpu = Cpu::new(Backing::Program {
        data: image.data_bytes(),
        input: input.to_vec(),
    });
    let mut steps_log = Vec::new();
    let pc_of = |fi: usize, bi: usize, idx: usize| {
        let f = &image.functions[fi];
        Pc {
            function: f.name.clone(),
            block: f.blocks[bi].label.clone(),
            index: idx,
        }
    };

    let Some(&entry) = map.functions.get(&image.entry) else {
        return Run {
            result: ExecutionResult {
                outcome: Outcome::Fault {
                    kind: FaultKind::UnmappedCall,
                    pc: Pc {
                        function: image.entry.clone(),
                        block: image.entry.clone(),
                        index: 0,
                    },
                },
                trace: Vec::new(),
                steps: 0,
            },
            cpu,
            last_pc: None,
            steps: steps_log,
        };
    };
    let (mut fi, mut bi, mut idx) = (entry, 0usize, 0usize);
    let mut steps = 0u64;
    let outcome = loop {
        let func = &image.functions[fi];
        let block = &func.blocks[bi];
        if idx >= block.instrs.len() {
            if bi + 1 < func.blocks.len() {
                bi += 1;
                idx = 0;
                continue;
            }
            break Outcome::Fault {
                kind: FaultKind::FellOffEnd,
                pc: pc_of(fi, bi, idx),
            };
        }
        if steps >= fuel {
            break Outcome::FuelExhausted;
        }
        steps += 1;
        let ins = &block.instrs[idx];
        if record {
            cpu.footprint = Some(Footprint::default());
        }
        let flow = cpu.exec(ins, &data).and_then(|flow| match flow {
            Flow::Call(_) => {
                let ret = block.addr + block.instrs.iter().map(width).sum::<u32>();
                cpu.push(ret)?;
                Ok(flow)
            }
            Flow::Ret => {
                let addr = cpu.pop()?;
                Ok(Flow::Jump(format!("@{addr}")))
            }
            other => Ok(other),
        });
        if record {
            steps_log.push(TraceStep {
                function: fi,
                block: bi,
                index: idx,
                footprint: cpu.footprint.take().unwrap_or_default(),
            });
        }
        let fault_pc = pc_of(fi, bi, idx);
        match flow {
            Err(kind) => break Outcome::Fault { kind, pc: fault_pc },
            Ok(Flow::Next) => idx += 1,
            Ok(Flow::Halt(code)) => break Outcome::Halted(code),
            Ok(Flow::Call(callee)) => match map.functions.get(&callee) {
                Some(&f) => {
                    (fi, bi, idx) = (f, 0, 0);
                }
                None => {
                    break Outcome::Fault {
                        kind: FaultKind::UnmappedCall,
                        pc: fault_pc,
                    }
                }
            },
            Ok(Flow::Ret) => unreachable!("returns are resolved above"),
            Ok(Flow::Jump(label)) => {
                let dest = match label.strip_prefix('@') {
                    Some(addr) => addr
                        .parse::<u32>()
                        .ok()
                        .and_then(|a| map.returns.get(&a).copied()),
                    None => map.labels.get(&label).copied(),
                };
                match dest {
                    Some((f, b)) => (fi, bi, idx) = (f, b, 0),
                    None => {
                        let kind = if label.starts_with('@') {
                            FaultKind::BadReturn
                        } else {
                            FaultKind::IllegalOperand
                        };
                        break Outcome::Fault { kind, pc: fault_pc };
                    }
                }
            }
        }
    };
    let last_pc = match &outcome {
        Outcome::Fault { pc, .. } => Some(pc.clone()),
        _ if idx < image.functions[fi].blocks[bi].instrs.len() => Some(pc_of(fi, bi, idx)),
        _ => None,
    };
    let trace = std::mem::take(&mut cpu.trace);
    Run {
        result: ExecutionResult {
            outcome,
            trace,
            steps,
        },
        cpu,
        last_pc,
        steps: steps_log,
    }
}

/// Runs `image` from its entry function with `input` preloaded at `__input`,
/// executing at most `fuel` instructions.
pub fn execute(image: &BinaryImage, input: &[u32], fuel: u64) -> ExecutionResult {
    run(image, input, fuel, false).result
}

/// Like [`execute`], also returning the final machine state.
pub fn execute_with_state(
    image: &BinaryImage,
    input: &[u32],
    fuel: u64,
) -> (ExecutionResult, MachineState) {
    let r = run(image, input, fuel, false);
    let state = MachineState {
        registers: r.cpu.regs,
        flags: r.cpu.flags,
        memory: r.cpu.mem.written,
        pc: r.last_pc,
    };
    (r.result, state)
}

/// Like [`execute`], recording the locations touched by every step.
pub fn execute_traced(
    image: &BinaryImage,
    input: &[u32],
    fuel: u64,
) -> (ExecutionResult, Vec<TraceStep>) {
    let r = run(image, input, fuel, true);
    (r.result, r.steps)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Equal,
    /// Some run ran out of fuel and no input distinguished the programs.
    Inconclusive {
        input_index: usize,
    },
    Distinguished {
        input_index: usize,
        input: Vec<u32>,
        left: ExecutionResult,
        right: ExecutionResult,
    },
}

impl Verdict {
    pub fn is_equal(&self) -> bool {
        matches!(self, Verdict::Equal)
    }
}

/// Compares observable behavior of two images on every input vector.
pub fn equivalent(a: &BinaryImage, b: &BinaryImage, inputs: &[Vec<u32>], fuel: u64) -> Verdict {
    let per_input: Vec<Verdict> = inputs
        .par_iter()
        .enumerate()
        .map(|(i, input)| {
            let left = execute(a, input, fuel);
            let right = execute(b, input, fuel);
            if left.outcome == Outcome::FuelExhausted || right.outcome == Outcome::FuelExhausted {
                Verdict::Inconclusive { input_index: i }
            } else if left.outcome.same_class(&right.outcome) && left.trace == right.trace {
                Verdict::Equal
            } else {
                Verdict::Distinguished {
                    input_index: i,
                    input: input.clone(),
                    left,
                    right,
                }
            }
        })
        .collect();
    if let Some(d) = per_input
        .iter()
        .find(|v| matches!(v, Verdict::Distinguished { .. }))
    {
        return d.clone();
    }
    per_input
        .into_iter()
        .find(|v| matches!(v, Verdict::Inconclusive { .. }))
        .unwrap_or(Verdict::Equal)
}
