use std::collections::HashMap;

use crate::asm::{Function, Instruction, LocSet, Opcode, Terminator};

use super::rw::StackTracker;

/// Live registers and flags at every instruction of a function.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LivenessMap {
    pub function: String,
    labels: HashMap<String, usize>,
    /// `live_in[b][i]`: live before instruction `i` of block `b`.
    live_in: Vec<Vec<LocSet>>,
    /// Live after the last instruction of each block.
    block_out: Vec<LocSet>,
}

impl LivenessMap {
    pub fn live_in(&self, block: usize, index: usize) -> LocSet {
        self.live_in[block][index]
    }

    pub fn live_out(&self, block: usize, index: usize) -> LocSet {
        match self.live_in[block].get(index + 1) {
            Some(s) => *s,
            None => self.block_out[block],
        }
    }

    pub fn block_live_in(&self, block: usize) -> LocSet {
        self.live_in[block]
            .first()
            .copied()
            .unwrap_or(LocSet::EMPTY)
    }

    pub fn block_live_out(&self, block: usize) -> LocSet {
        self.block_out[block]
    }

    pub fn label_live_in(&self, label: &str) -> Option<LocSet> {
        self.labels.get(label).map(|&b| self.block_live_in(b))
    }

    pub fn label_live_out(&self, label: &str) -> Option<LocSet> {
        self.labels.get(label).map(|&b| self.block_out[b])
    }
}

/// (use, def) of an instruction for liveness. CALL may read anything and
/// kills nothing; RET hands every location back to the caller; HALT ends the
/// program so only its operand is used.
fn use_def(ins: &Instruction) -> (LocSet, LocSet) {
    match ins.opcode {
        Opcode::Call | Opcode::Ret => (LocSet::ALL, LocSet::EMPTY),
        Opcode::Db => (LocSet::EMPTY, LocSet::EMPTY),
        _ => {
            let s = StackTracker::default().step(ins);
            (s.reads, s.writes)
        }
    }
}

fn successors(f: &Function, b: usize) -> Vec<usize> {
    let block = &f.blocks[b];
    if block.has_data() {
        return Vec::new();
    }
    let next = || {
        if b + 1 < f.blocks.len() {
            vec![b + 1]
        } else {
            vec![]
        }
    };
    let target = |l: &str| f.block_index(l);
    match block.terminator() {
        Terminator::Jmp(l) => target(&l).into_iter().collect(),
        Terminator::Je(l) | Terminator::Jne(l) => {
            let mut v: Vec<usize> = target(&l).into_iter().collect();
            v.extend(next());
            v
        }
        Terminator::Call(_) | Terminator::Fallthrough => next(),
        Terminator::Ret | Terminator::Halt => Vec::new(),
    }
}

/// Backward dataflow to a fixed point. Every location is live after a
/// function exit.
pub fn liveness(function: &Function) -> LivenessMap {
    let n = function.blocks.len();
    let succ: Vec<Vec<usize>> = (0..n).map(|b| successors(function, b)).collect();
    let ud: Vec<Vec<(LocSet, LocSet)>> = function
        .blocks
        .iter()
        .map(|b| b.instrs.iter().map(use_def).collect())
        .collect();
    let exits: Vec<bool> = function
        .blocks
        .iter()
        .map(|b| matches!(b.terminator(), Terminator::Ret | Terminator::Halt))
        .collect();
    let mut block_in = vec![LocSet::EMPTY; n];
    let mut block_out = vec![LocSet::EMPTY; n];
    let transfer =
        |b: usize, out: LocSet| ud[b].iter().rev().fold(out, |live, &(u, d)| (live - d) | u);
    let mut changed = true;
    while changed {
        changed = false;
        for b in (0..n).rev() {
            let out = if exits[b] {
                LocSet::ALL
            } else {
                succ[b]
                    .iter()
                    .fold(LocSet::EMPTY, |acc, &s| acc | block_in[s])
            };
            let inn = if function.blocks[b].instrs.last().map(|i| i.opcode) == Some(Opcode::Halt) {
                // nothing survives a halt
                transfer_halt(&ud[b])
            } else {
                transfer(b, out)
            };
            if out != block_out[b] || inn != block_in[b] {
                block_out[b] = out;
                block_in[b] = inn;
                changed = true;
            }
        }
    }
    let live_in = (0..n)
        .map(|b| {
            let mut v = vec![LocSet::EMPTY; ud[b].len()];
            let mut live =
                if function.blocks[b].instrs.last().map(|i| i.opcode) == Some(Opcode::Halt) {
                    LocSet::EMPTY
                } else {
                    block_out[b]
                };
            for (i, &(u, d)) in ud[b].iter().enumerate().rev() {
                live = (live - d) | u;
                v[i] = live;
            }
            v
        })
        .collect();
    let labels = function
        .blocks
        .iter()
        .enumerate()
        .map(|(i, b)| (b.label.clone(), i))
        .collect();
    LivenessMap {
        function: function.name.clone(),
        labels,
        live_in,
        block_out,
    }
}

fn transfer_halt(ud: &[(LocSet, LocSet)]) -> LocSet {
    ud.iter()
        .rev()
        .fold(LocSet::EMPTY, |live, &(u, d)| (live - d) | u)
}
