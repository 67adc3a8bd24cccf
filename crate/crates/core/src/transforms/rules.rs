//! Rule-driven instruction substitution.

use std::collections::HashMap;
use std::fmt;

use rand::Rng;
use thiserror::Error;

use crate::asm::{fmt_imm, Instruction, LocSet, Opcode, Operand, Register};
use crate::textio::{parse_instruction_line, parse_operand};

const BUILTIN: &str = include_str!("catalogue.rules");

/// Saved scratch registers are taken in this order.
pub const SCRATCH_PREFERENCE: [Register; 7] = [
    Register::Esi,
    Register::Edi,
    Register::Ebx,
    Register::Ecx,
    Register::Edx,
    Register::Eax,
    Register::Ebp,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Obfuscating,
    Optimizing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperandClass {
    Reg,
    Mem,
    Rm,
    Imm,
    Val,
}

impl OperandClass {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "reg" => OperandClass::Reg,
            "mem" => OperandClass::Mem,
            "rm" => OperandClass::Rm,
            "imm" => OperandClass::Imm,
            "val" => OperandClass::Val,
            _ => return None,
        })
    }

    fn admits(self, op: &Operand) -> bool {
        let reg = matches!(op, Operand::Reg(r) if *r != Register::Esp);
        let mem = matches!(op, Operand::Mem(_) | Operand::Data(_)) && !op.mentions(Register::Esp);
        let imm = matches!(op, Operand::Imm(_));
        match self {
            OperandClass::Reg => reg,
            OperandClass::Mem => mem,
            OperandClass::Rm => reg || mem,
            OperandClass::Imm => imm,
            OperandClass::Val => reg || mem || imm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PatternOperand {
    Bind(String, OperandClass),
    Same(String),
    Literal(Operand),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubstitutionRule {
    pub name: String,
    pub direction: Direction,
    pub opcode: Opcode,
    pub pattern: Vec<PatternOperand>,
    /// Instruction templates with `{...}` placeholders.
    pub replacement: Vec<String>,
    /// Flags the replacement leaves as the original would.
    pub preserves: LocSet,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("rule line {line}: {message}")]
pub struct RuleError {
    pub line: usize,
    pub message: String,
}

/// Operands bound by a successful match.
pub type Bindings = HashMap<String, Operand>;

/// Why a matched rule could not be instantiated at a site.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InstantiateError {
    #[error("no free scratch register")]
    NoScratch,
    #[error("replacement `{0}` is not a legal instruction")]
    Illegal(String),
    #[error("unknown placeholder `{0}`")]
    Placeholder(String),
}

impl SubstitutionRule {
    /// Matches `ins` against the pattern.
    pub fn matches(&self, ins: &Instruction) -> Option<Bindings> {
        if ins.opcode != self.opcode
            || ins.operands.len() != self.pattern.len()
            || ins.mentions_esp()
        {
            return None;
        }
        let mut b = Bindings::new();
        for (p, op) in self.pattern.iter().zip(&ins.operands) {
            match p {
                PatternOperand::Bind(name, class) => {
                    if !class.admits(op) {
                        return None;
                    }
                    // distinct placeholders must not share registers
                    if b.values()
                        .any(|o| o.registers().iter().any(|r| op.mentions(*r)))
                    {
                        return None;
                    }
                    b.insert(name.clone(), op.clone());
                }
                PatternOperand::Same(name) => {
                    if b.get(name) != Some(op) {
                        return None;
                    }
                }
                PatternOperand::Literal(l) => {
                    if l != op {
                        return None;
                    }
                }
            }
        }
        Some(b)
    }

    fn placeholders(&self) -> Vec<String> {
        let mut out = Vec::new();
        for t in &self.replacement {
            let mut rest = t.as_str();
            while let Some(i) = rest.find('{') {
                let Some(j) = rest[i..].find('}') else { break };
                out.push(rest[i + 1..i + j].to_string());
                rest = &rest[i + j + 1..];
            }
        }
        out
    }

    /// Dead scratch placeholders used by the replacement.
    pub fn dead_scratch(&self) -> Vec<String> {
        let mut v: Vec<String> = self
            .placeholders()
            .into_iter()
            .filter(|p| is_slot(p, 'd'))
            .collect();
        v.sort();
        v.dedup();
        v
    }

    /// Builds the replacement for `ins`. `dead` lists registers free to
    /// clobber at the site.
    pub fn instantiate<R: Rng + ?Sized>(
        &self,
        ins: &Instruction,
        bindings: &Bindings,
        dead: LocSet,
        rng: &mut R,
    ) -> Result<Vec<Instruction>, InstantiateError> {
        let used: Vec<Register> = ins.operands.iter().flat_map(Operand::registers).collect();
        let mut env: HashMap<String, String> = HashMap::new();
        let mut imms: HashMap<String, i32> = HashMap::new();
        for (k, v) in bindings {
            if let Operand::Imm(x) = v {
                imms.insert(k.clone(), *x);
            }
            env.insert(k.clone(), v.to_string());
        }
        let mut placeholders = self.placeholders();
        placeholders.sort();
        placeholders.dedup();
        let mut saved = SCRATCH_PREFERENCE
            .iter()
            .copied()
            .filter(|r| !used.contains(r));
        let mut free = Register::ALLOCATABLE
            .iter()
            .copied()
            .filter(|r| !used.contains(r) && dead.contains_reg(*r));
        for p in &placeholders {
            if env.contains_key(p) {
                continue;
            }
            if is_slot(p, 's') {
                let r = saved.next().ok_or(InstantiateError::NoScratch)?;
                env.insert(p.clone(), r.name().to_string());
            } else if is_slot(p, 'd') {
                let r = free.next().ok_or(InstantiateError::NoScratch)?;
                env.insert(p.clone(), r.name().to_string());
            } else if is_slot(p, 'r') {
                let v: i32 = rng.gen();
                imms.insert(p.clone(), v);
                env.insert(p.clone(), fmt_imm(v));
            }
        }
        for p in &placeholders {
            if env.contains_key(p) {
                continue;
            }
            for tok in p.split(['-', '~', '^', '+', '&', '|']).map(str::trim) {
                if is_slot(tok, 'r') && !imms.contains_key(tok) {
                    imms.insert(tok.to_string(), rng.gen());
                }
            }
            let v = eval_imm(p, &imms).ok_or_else(|| InstantiateError::Placeholder(p.clone()))?;
            env.insert(p.clone(), fmt_imm(v));
        }
        let mut out = Vec::with_capacity(self.replacement.len());
        for t in &self.replacement {
            let mut text = String::new();
            let mut rest = t.as_str();
            while let Some(i) = rest.find('{') {
                text.push_str(&rest[..i]);
                let j = rest[i..].find('}').map(|j| i + j).unwrap_or(rest.len() - 1);
                let key = &rest[i + 1..j];
                text.push_str(
                    env.get(key)
                        .ok_or_else(|| InstantiateError::Placeholder(key.to_string()))?,
                );
                rest = &rest[j + 1..];
            }
            text.push_str(rest);
            let text = text.replace("+-", "-").replace("--", "+");
            let ins = parse_instruction_line(&text)
                .map_err(|_| InstantiateError::Illegal(text.clone()))?;
            ins.check_operands()
                .map_err(|_| InstantiateError::Illegal(text.clone()))?;
            out.push(ins);
        }
        Ok(out)
    }
}

fn is_slot(p: &str, prefix: char) -> bool {
    p.len() >= 2 && p.starts_with(prefix) && p[1..].chars().all(|c| c.is_ascii_digit())
}

/// `-x`, `~x`, `x op y` over bound immediates.
fn eval_imm(expr: &str, imms: &HashMap<String, i32>) -> Option<i32> {
    let expr = expr.trim();
    if let Some(x) = expr.strip_prefix('-') {
        return imms.get(x.trim()).map(|v| v.wrapping_neg());
    }
    if let Some(x) = expr.strip_prefix('~') {
        return imms.get(x.trim()).map(|v| !v);
    }
    for op in ['^', '-', '+', '&', '|'] {
        if let Some((l, r)) = expr.split_once(op) {
            let a = *imms.get(l.trim())?;
            let b = *imms.get(r.trim())?;
            return Some(match op {
                '^' => a ^ b,
                '-' => a.wrapping_sub(b),
                '+' => a.wrapping_add(b),
                '&' => a & b,
                _ => a | b,
            });
        }
    }
    imms.get(expr).copied()
}

impl fmt::Display for SubstitutionRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let dir = match self.direction {
            Direction::Obfuscating => "obfuscating",
            Direction::Optimizing => "optimizing",
        };
        let pats: Vec<String> = self
            .pattern
            .iter()
            .map(|p| match p {
                PatternOperand::Bind(n, c) => {
                    format!("{{{n}:{}}}", format!("{c:?}").to_lowercase())
                }
                PatternOperand::Same(n) => format!("{{{n}}}"),
                PatternOperand::Literal(o) => o.to_string(),
            })
            .collect();
        write!(
            f,
            "{dir} {}: {} {} => {}",
            self.name,
            self.opcode,
            pats.join(", "),
            self.replacement.join("; ")
        )
    }
}

/// An ordered collection of substitution rules.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RuleSet {
    pub rules: Vec<SubstitutionRule>,
}

impl RuleSet {
    /// The shipped catalogue.
    pub fn builtin() -> RuleSet {
        RuleSet::parse(BUILTIN).expect("built-in catalogue parses")
    }

    pub fn builtin_text() -> &'static str {
        BUILTIN
    }

    pub fn parse(text: &str) -> Result<RuleSet, RuleError> {
        let mut rules = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let rule = parse_rule(line).map_err(|message| RuleError {
                line: i + 1,
                message,
            })?;
            if rules.iter().any(|r: &SubstitutionRule| r.name == rule.name) {
                return Err(RuleError {
                    line: i + 1,
                    message: format!("duplicate rule `{}`", rule.name),
                });
            }
            rules.push(rule);
        }
        Ok(RuleSet { rules })
    }

    pub fn extend(&mut self, other: RuleSet) {
        self.rules.extend(other.rules);
    }

    pub fn get(&self, name: &str) -> Option<&SubstitutionRule> {
        self.rules.iter().find(|r| r.name == name)
    }

    pub fn direction(&self, d: Direction) -> impl Iterator<Item = &SubstitutionRule> {
        self.rules.iter().filter(move |r| r.direction == d)
    }

    /// Rules of direction `d` matching `ins`.
    pub fn matching<'a>(
        &'a self,
        d: Direction,
        ins: &'a Instruction,
    ) -> impl Iterator<Item = (&'a SubstitutionRule, Bindings)> + 'a {
        self.direction(d)
            .filter_map(move |r| r.matches(ins).map(|b| (r, b)))
    }
}

fn parse_rule(line: &str) -> Result<SubstitutionRule, String> {
    let (head, rest) = line
        .split_once(':')
        .ok_or("expected `<direction> <name>:`")?;
    let mut hw = head.split_whitespace();
    let direction = match hw.next() {
        Some("obfuscating") => Direction::Obfuscating,
        Some("optimizing") => Direction::Optimizing,
        other => return Err(format!("unknown direction `{}`", other.unwrap_or(""))),
    };
    let name = hw.next().ok_or("missing rule name")?.to_string();
    if hw.next().is_some() {
        return Err("rule names may not contain spaces".into());
    }
    let (pattern, rest) = rest.split_once("=>").ok_or("expected `=>`")?;
    let (replacement, preserves) = match rest.rfind('|') {
        Some(i) if rest[i + 1..].trim_start().starts_with("preserves") => {
            (&rest[..i], Some(&rest[i + 1..]))
        }
        _ => (rest, None),
    };
    let pattern = pattern.trim();
    let (mnemonic, ops) = match pattern.find(char::is_whitespace) {
        Some(i) => (&pattern[..i], pattern[i..].trim()),
        None => (pattern, ""),
    };
    let opcode =
        Opcode::from_mnemonic(mnemonic).ok_or_else(|| format!("unknown opcode `{mnemonic}`"))?;
    if opcode.is_control() || opcode == Opcode::Db {
        return Err("patterns must be ordinary instructions".into());
    }
    let mut pat = Vec::new();
    let mut bound: Vec<String> = Vec::new();
    if !ops.is_empty() {
        for t in ops.split(',') {
            let t = t.trim();
            if let Some(inner) = t.strip_prefix('{').and_then(|s| s.strip_suffix('}')) {
                match inner.split_once(':') {
                    Some((n, c)) => {
                        let class = OperandClass::parse(c.trim())
                            .ok_or_else(|| format!("unknown class `{c}`"))?;
                        bound.push(n.trim().to_string());
                        pat.push(PatternOperand::Bind(n.trim().to_string(), class));
                    }
                    None => {
                        if !bound.iter().any(|b| b == inner.trim()) {
                            return Err(format!("`{{{inner}}}` used before it is bound"));
                        }
                        pat.push(PatternOperand::Same(inner.trim().to_string()));
                    }
                }
            } else {
                let op =
                    parse_operand(t, false).ok_or_else(|| format!("bad literal operand `{t}`"))?;
                pat.push(PatternOperand::Literal(op));
            }
        }
    }
    let replacement: Vec<String> = replacement
        .split(';')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect();
    if replacement.is_empty() {
        return Err("empty replacement".into());
    }
    let preserves = match preserves {
        None => LocSet::FLAGS,
        Some(p) => {
            let p = p.trim();
            let list = p
                .strip_prefix("preserves")
                .ok_or("expected `preserves`")?
                .trim();
            match list {
                "all" => LocSet::FLAGS,
                "none" => LocSet::EMPTY,
                _ => {
                    let mut s = LocSet::EMPTY;
                    for f in list.split_whitespace() {
                        s.insert_flag(
                            crate::asm::Flag::parse(f)
                                .ok_or_else(|| format!("unknown flag `{f}`"))?,
                        );
                    }
                    s
                }
            }
        }
    };
    Ok(SubstitutionRule {
        name,
        direction,
        opcode,
        pattern: pat,
        replacement,
        preserves,
    })
}
