use std::collections::{HashMap, HashSet};

use thiserror::Error;

use super::{BasicBlock, Function, Instruction, Opcode, Operand};

/// One line of a function body before block partitioning.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Stmt {
    Label(String),
    Instr(Instruction),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PartitionError {
    #[error("function has no instructions")]
    EmptyBody,
    #[error("unresolved label `{0}`")]
    UnresolvedLabel(String),
    #[error("label `{0}` is not followed by an instruction")]
    TrailingLabel(String),
    #[error("duplicate label `{0}`")]
    DuplicateLabel(String),
}

/// Splits a labeled instruction list into basic blocks.
///
/// Leaders are the first instruction, every labeled instruction and every
/// instruction following a branch, call, return or halt. The entry block is
/// labeled with the function name; other labels on the same instruction
/// become aliases and branches to them are rewritten to the primary label.
/// Unlabeled leaders get a synthesized `{name}.{n}` label.
pub fn partition_blocks(name: &str, body: &[Stmt]) -> Result<Function, PartitionError> {
    partition_blocks_with(name, body, &HashSet::new())
}

/// Like [`partition_blocks`], never synthesizing a label in `reserved`.
pub fn partition_blocks_with(
    name: &str,
    body: &[Stmt],
    reserved: &HashSet<String>,
) -> Result<Function, PartitionError> {
    let mut instrs: Vec<Instruction> = Vec::new();
    // labels attached to each instruction index
    let mut labels_at: HashMap<usize, Vec<String>> = HashMap::new();
    let mut seen = HashSet::new();
    let mut pending: Vec<String> = Vec::new();
    for stmt in body {
        match stmt {
            Stmt::Label(l) => {
                if l == name || !seen.insert(l.clone()) {
                    return Err(PartitionError::DuplicateLabel(l.clone()));
                }
                pending.push(l.clone());
            }
            Stmt::Instr(i) => {
                if !pending.is_empty() {
                    labels_at.insert(instrs.len(), std::mem::take(&mut pending));
                }
                instrs.push(i.clone());
            }
        }
    }
    if let Some(l) = pending.first() {
        if instrs.is_empty() {
            return Err(PartitionError::EmptyBody);
        }
        return Err(PartitionError::TrailingLabel(l.clone()));
    }
    if instrs.is_empty() {
        return Err(PartitionError::EmptyBody);
    }

    let mut leaders = vec![false; instrs.len()];
    leaders[0] = true;
    for (i, ins) in instrs.iter().enumerate() {
        if labels_at.contains_key(&i) {
            leaders[i] = true;
        }
        if ins.is_control() && i + 1 < instrs.len() {
            leaders[i + 1] = true;
        }
    }

    let mut taken: HashSet<String> = seen.clone();
    taken.insert(name.to_string());
    let mut counter = 0u32;
    let mut fresh = |taken: &mut HashSet<String>| loop {
        let cand = format!("{name}.{counter}");
        counter += 1;
        if !taken.contains(&cand) && !reserved.contains(&cand) {
            taken.insert(cand.clone());
            return cand;
        }
    };

    let mut alias: HashMap<String, String> = HashMap::new();
    let mut blocks: Vec<BasicBlock> = Vec::new();
    for (i, ins) in instrs.into_iter().enumerate() {
        if leaders[i] {
            let attached = labels_at.remove(&i).unwrap_or_default();
            let primary = if i == 0 {
                name.to_string()
            } else if let Some(first) = attached.first() {
                first.clone()
            } else {
                fresh(&mut taken)
            };
            for l in attached {
                alias.insert(l, primary.clone());
            }
            blocks.push(BasicBlock::new(primary, Vec::new()));
        }
        blocks.last_mut().expect("leader 0").instrs.push(ins);
    }

    for b in &mut blocks {
        for ins in &mut b.instrs {
            if matches!(ins.opcode, Opcode::Jmp | Opcode::Je | Opcode::Jne) {
                if let Some(Operand::Code(target)) = ins.operands.first_mut() {
                    if target != name {
                        match alias.get(target.as_str()) {
                            Some(p) => *target = p.clone(),
                            None => return Err(PartitionError::UnresolvedLabel(target.clone())),
                        }
                    }
                }
            }
        }
    }

    Ok(Function {
        name: name.to_string(),
        blocks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asm::Register;

    fn reg(r: Register) -> Operand {
        Operand::Reg(r)
    }

    fn ins(s: Stmt) -> Stmt {
        s
    }

    /// Leader rule evaluated directly: index 0, labeled indices, and the
    /// index after any control transfer.
    fn brute_leaders(body: &[Stmt]) -> Vec<usize> {
        let mut out = Vec::new();
        let mut idx = 0;
        let mut labeled = false;
        let mut after_control = true;
        for s in body {
            match s {
                Stmt::Label(_) => labeled = true,
                Stmt::Instr(i) => {
                    if labeled || after_control {
                        out.push(idx);
                    }
                    labeled = false;
                    after_control = i.is_control();
                    idx += 1;
                }
            }
        }
        out
    }

    #[test]
    fn straight_line_is_one_block() {
        let body = vec![
            Stmt::Instr(Instruction::op2(
                Opcode::Add,
                reg(Register::Eax),
                reg(Register::Ebx),
            )),
            Stmt::Instr(Instruction::op2(
                Opcode::Sub,
                reg(Register::Ecx),
                Operand::Imm(0x7c21),
            )),
            Stmt::Instr(Instruction::op0(Opcode::Ret)),
        ];
        let f = partition_blocks("f", &body).unwrap();
        assert_eq!(f.blocks.len(), 1);
        assert_eq!(f.blocks[0].instrs.len(), 3);
        assert!(f.is_straight_line());
    }

    #[test]
    fn empty_body_is_rejected() {
        assert_eq!(partition_blocks("f", &[]), Err(PartitionError::EmptyBody));
    }

    #[test]
    fn branch_creates_three_blocks() {
        let body = vec![
            ins(Stmt::Instr(Instruction::op2(
                Opcode::Cmp,
                reg(Register::Eax),
                Operand::Imm(0),
            ))),
            ins(Stmt::Instr(Instruction::op1(
                Opcode::Jne,
                Operand::Code("L".into()),
            ))),
            ins(Stmt::Instr(Instruction::op0(Opcode::Nop))),
            Stmt::Label("L".into()),
            ins(Stmt::Instr(Instruction::op0(Opcode::Halt))),
        ];
        assert_eq!(brute_leaders(&body), vec![0, 2, 3]);
        let f = partition_blocks("main", &body).unwrap();
        let sizes: Vec<usize> = f.blocks.iter().map(|b| b.instrs.len()).collect();
        assert_eq!(sizes, vec![2, 1, 1]);
        assert_eq!(f.blocks[2].label, "L");
        assert_eq!(f.blocks[1].label, "main.0");
    }

    #[test]
    fn unresolved_label_is_named() {
        let body = vec![Stmt::Instr(Instruction::op1(
            Opcode::Jmp,
            Operand::Code("nowhere".into()),
        ))];
        assert_eq!(
            partition_blocks("main", &body),
            Err(PartitionError::UnresolvedLabel("nowhere".into()))
        );
    }

    #[test]
    fn aliases_are_rewritten_to_primary_label() {
        let body = vec![
            Stmt::Label("start".into()),
            Stmt::Instr(Instruction::op0(Opcode::Nop)),
            Stmt::Instr(Instruction::op1(Opcode::Jmp, Operand::Code("start".into()))),
        ];
        let f = partition_blocks("main", &body).unwrap();
        assert_eq!(f.blocks.len(), 1);
        assert_eq!(f.blocks[0].instrs[1].target(), Some("main"));
    }

    #[test]
    fn partition_concatenates_back_to_input() {
        let body = vec![
            Stmt::Instr(Instruction::op2(
                Opcode::Mov,
                reg(Register::Eax),
                Operand::Imm(1),
            )),
            Stmt::Instr(Instruction::op1(Opcode::Call, Operand::Code("g".into()))),
            Stmt::Instr(Instruction::op1(Opcode::Out, reg(Register::Eax))),
            Stmt::Label("x".into()),
            Stmt::Instr(Instruction::op0(Opcode::Halt)),
        ];
        let f = partition_blocks("main", &body).unwrap();
        let flat: Vec<Instruction> = f.blocks.iter().flat_map(|b| b.instrs.clone()).collect();
        let orig: Vec<Instruction> = body
            .iter()
            .filter_map(|s| match s {
                Stmt::Instr(i) => Some(i.clone()),
                _ => None,
            })
            .collect();
        assert_eq!(flat, orig);
        assert_eq!(f.blocks.len(), 3);
    }
}
