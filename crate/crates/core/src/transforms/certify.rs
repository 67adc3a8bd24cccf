//! Randomized equivalence certificates for substitution rules.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::asm::{
    BasicBlock, BinaryImage, DataItem, DataRef, Flag, Function, Instruction, LocSet, MemRef,
    Opcode, Operand, Register, DATA_BASE,
};
use crate::interp::{execute_with_state, MachineState};

use super::{OperandClass, PatternOperand, SubstitutionRule};

const CERT_LABEL: &str = "cert";
const CERT_BYTES: usize = 32;
const FUEL: u64 = 1_000;
const BOUNDARY: [i32; 6] = [0, 1, -1, i32::MAX, i32::MIN, 0x80];

/// A valuation on which a rule's replacement disagrees with its pattern.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Counterexample {
    pub rule: String,
    pub original: String,
    pub replacement: Vec<String>,
    pub detail: String,
}

impl std::fmt::Display for Counterexample {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}: `{}` => `{}`: {}",
            self.rule,
            self.original,
            self.replacement.join("; "),
            self.detail
        )
    }
}

fn value<R: Rng + ?Sized>(rng: &mut R) -> i32 {
    if rng.gen_bool(0.25) {
        BOUNDARY[rng.gen_range(0..BOUNDARY.len())]
    } else {
        rng.gen()
    }
}

struct Draw {
    ins: Instruction,
    bases: Vec<Register>,
}

/// A concrete instruction matching the rule's pattern.
fn draw<R: Rng + ?Sized>(rule: &SubstitutionRule, rng: &mut R) -> Option<Draw> {
    let mut taken: Vec<Register> = Vec::new();
    let mut bases = Vec::new();
    let mut bound: Vec<(String, Operand)> = Vec::new();
    let mut operands = Vec::new();
    let fresh_reg = |taken: &mut Vec<Register>, rng: &mut R| {
        let free: Vec<Register> = Register::ALLOCATABLE
            .iter()
            .copied()
            .filter(|r| !taken.contains(r))
            .collect();
        let r = free[rng.gen_range(0..free.len())];
        taken.push(r);
        r
    };
    for p in &rule.pattern {
        let op = match p {
            PatternOperand::Literal(o) => o.clone(),
            PatternOperand::Same(n) => bound.iter().find(|(b, _)| b == n)?.1.clone(),
            PatternOperand::Bind(n, class) => {
                let pick = match class {
                    OperandClass::Reg => 0,
                    OperandClass::Mem => 1,
                    OperandClass::Imm => 2,
                    OperandClass::Rm => rng.gen_range(0..2),
                    OperandClass::Val => rng.gen_range(0..3),
                };
                let op = match pick {
                    0 => Operand::Reg(fresh_reg(&mut taken, rng)),
                    1 if rng.gen_bool(0.5) => Operand::Data(DataRef {
                        label: CERT_LABEL.into(),
                        disp: 4 * rng.gen_range(0..4),
                    }),
                    1 => {
                        let b = fresh_reg(&mut taken, rng);
                        bases.push(b);
                        Operand::Mem(MemRef::base(b, 4 * rng.gen_range(-2..3)))
                    }
                    _ => Operand::Imm(value(rng)),
                };
                bound.push((n.clone(), op.clone()));
                op
            }
        };
        operands.push(op);
    }
    let ins = Instruction::new(rule.opcode, operands);
    ins.check_operands().ok()?;
    rule.matches(&ins)?;
    Some(Draw { ins, bases })
}

fn harness(prologue: &[Instruction], body: &[Instruction], cert: &[u8]) -> BinaryImage {
    let mut instrs = prologue.to_vec();
    instrs.extend_from_slice(body);
    instrs.push(Instruction::op0(Opcode::Halt));
    let f = Function {
        name: "main".into(),
        blocks: vec![BasicBlock::new("main", instrs)],
    };
    BinaryImage::new(
        vec![f],
        vec![DataItem {
            label: CERT_LABEL.into(),
            offset: 0,
            bytes: cert.to_vec(),
        }],
    )
}

fn compare(
    a: &MachineState,
    b: &MachineState,
    ignore: LocSet,
    flags: LocSet,
) -> Result<(), String> {
    for r in Register::ALL {
        if !ignore.contains_reg(r) && a.reg(r) != b.reg(r) {
            return Err(format!("{r}: {:#x} vs {:#x}", a.reg(r), b.reg(r)));
        }
    }
    for f in Flag::ALL {
        if flags.contains_flag(f) && a.flag(f) != b.flag(f) {
            return Err(format!("{f}: {} vs {}", a.flag(f), b.flag(f)));
        }
    }
    if a.memory != b.memory {
        return Err("memory differs".into());
    }
    Ok(())
}

/// Checks `rule` on `valuations` random operand choices and machine states.
/// Registers handed to the rule as dead, and flags it does not claim to
/// preserve, are excluded from the comparison.
pub fn certify(
    rule: &SubstitutionRule,
    valuations: usize,
    seed: u64,
) -> Result<(), Counterexample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let need_dead = rule.dead_scratch().len();
    let mut checked = 0;
    let mut attempts = 0;
    while checked < valuations {
        attempts += 1;
        if attempts > valuations * 20 + 100 {
            return Err(Counterexample {
                rule: rule.name.clone(),
                original: String::new(),
                replacement: Vec::new(),
                detail: "pattern admits no drawable instruction".into(),
            });
        }
        let Some(Draw { ins, bases }) = draw(rule, &mut rng) else {
            continue;
        };
        let used: Vec<Register> = ins.operands.iter().flat_map(Operand::registers).collect();
        let mut dead = LocSet::EMPTY;
        for r in Register::ALLOCATABLE {
            if !used.contains(&r) && (need_dead > 0 || rng.gen_bool(0.3)) && rng.gen_bool(0.7) {
                dead.insert_reg(r);
            }
        }
        let Ok(replacement) = rule.instantiate(
            &ins,
            &rule.matches(&ins).expect("drawn to match"),
            dead,
            &mut rng,
        ) else {
            continue;
        };
        let cx = |detail: String| Counterexample {
            rule: rule.name.clone(),
            original: ins.to_string(),
            replacement: replacement.iter().map(ToString::to_string).collect(),
            detail,
        };
        let mut prologue = vec![
            Instruction::op2(
                Opcode::Mov,
                Operand::Reg(Register::Eax),
                Operand::Imm(value(&mut rng)),
            ),
            Instruction::op2(
                Opcode::Cmp,
                Operand::Reg(Register::Eax),
                Operand::Imm(value(&mut rng)),
            ),
        ];
        for r in Register::ALLOCATABLE {
            let v = if bases.contains(&r) {
                (DATA_BASE + 8) as i32
            } else {
                value(&mut rng)
            };
            prologue.push(Instruction::op2(
                Opcode::Mov,
                Operand::Reg(r),
                Operand::Imm(v),
            ));
        }
        let cert: Vec<u8> = (0..CERT_BYTES).map(|_| rng.gen()).collect();
        let (ra, sa) = execute_with_state(
            &harness(&prologue, std::slice::from_ref(&ins), &cert),
            &[],
            FUEL,
        );
        let (rb, sb) = execute_with_state(&harness(&prologue, &replacement, &cert), &[], FUEL);
        if ra.outcome != rb.outcome || ra.trace != rb.trace {
            return Err(cx(format!("outcome {:?} vs {:?}", ra.outcome, rb.outcome)));
        }
        compare(&sa, &sb, dead, rule.preserves).map_err(cx)?;
        checked += 1;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transforms::RuleSet;

    #[test]
    fn catalogue_spot_check() {
        for rule in &RuleSet::builtin().rules {
            if let Err(c) = certify(rule, 200, 1) {
                panic!("{c}");
            }
        }
    }

    #[test]
    fn unsound_rule_is_caught() {
        let rs = RuleSet::parse("obfuscating bad: add {a:reg}, {k:imm} => sub {a}, {k}").unwrap();
        assert!(certify(&rs.rules[0], 100, 0).is_err());
        let rs =
            RuleSet::parse("obfuscating flags: add {a:reg}, {k:imm} => sub {a}, {-k}").unwrap();
        assert!(certify(&rs.rules[0], 100, 0).is_err());
    }
}
