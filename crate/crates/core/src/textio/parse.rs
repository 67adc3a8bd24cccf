use std::collections::HashSet;

use thiserror::Error;

use crate::asm::{
    partition_blocks_with, BinaryImage, DataItem, DataRef, ImageError, Instruction, MemRef, Opcode,
    Operand, PartitionError, Register, Stmt,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("line {line}, column {column}: unknown opcode `{name}`")]
    UnknownOpcode {
        line: usize,
        column: usize,
        name: String,
    },
    #[error("line {line}, column {column}: malformed operand `{text}`")]
    MalformedOperand {
        line: usize,
        column: usize,
        text: String,
    },
    #[error("no functions defined")]
    NoFunctions,
    #[error("function `{function}` (line {line}): {source}")]
    Partition {
        function: String,
        line: usize,
        #[source]
        source: PartitionError,
    },
    #[error(transparent)]
    Image(#[from] ImageError),
}

enum Section {
    None,
    Func(usize),
    Data,
}

struct FuncText {
    name: String,
    line: usize,
    body: Vec<Stmt>,
}

fn is_label_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | '$' | '@' | '?')
}

fn is_ident(s: &str) -> bool {
    !s.is_empty() && s.chars().all(is_label_char)
}

/// Parses Intel-syntax assembly into an image.
///
/// Statements are separated by newlines or `;`; `#` starts a comment.
/// Directives: `.func name:` opens a function, `.data` opens the data
/// section, `.db b, ...` emits bytes (raw code bytes inside a function, data
/// otherwise), `.entry name` selects the entry function and `.name text`
/// sets the image name.
pub fn parse_asm(text: &str) -> Result<BinaryImage, ParseError> {
    let Scanned {
        funcs,
        data,
        entry,
        name,
    } = scan(text, false)?;
    if funcs.is_empty() {
        return Err(ParseError::NoFunctions);
    }
    let mut reserved: HashSet<String> = HashSet::new();
    for f in &funcs {
        reserved.insert(f.name.clone());
        for s in &f.body {
            if let Stmt::Label(l) = s {
                reserved.insert(l.clone());
            }
        }
    }
    let mut functions = Vec::with_capacity(funcs.len());
    for f in &funcs {
        let func = partition_blocks_with(&f.name, &f.body, &reserved).map_err(|source| {
            ParseError::Partition {
                function: f.name.clone(),
                line: f.line,
                source,
            }
        })?;
        functions.push(func);
    }
    let mut image = BinaryImage::new(functions, data);
    if let Some(e) = entry {
        image.entry = e;
    }
    image.meta.name = name;
    image.validate()?;
    Ok(image)
}

struct Scanned {
    funcs: Vec<FuncText>,
    data: Vec<DataItem>,
    entry: Option<String>,
    name: String,
}

/// Parses a code fragment (labels, instructions and `.db`) with no section
/// directives.
pub(crate) fn parse_snippet(text: &str) -> Result<Vec<Stmt>, ParseError> {
    let mut s = scan(text, true)?;
    Ok(s.funcs.swap_remove(0).body)
}

/// Parses one instruction, e.g. `mov eax, DWORD PTR [ebx+0x4]`.
pub(crate) fn parse_instruction_line(text: &str) -> Result<Instruction, ParseError> {
    let t = text.trim();
    let (word, rest) = match t.find(char::is_whitespace) {
        Some(i) => (&t[..i], t[i..].trim()),
        None => (t, ""),
    };
    parse_instruction(word, rest, 1, 1)
}

fn scan(text: &str, implicit: bool) -> Result<Scanned, ParseError> {
    let mut funcs: Vec<FuncText> = Vec::new();
    let mut data: Vec<DataItem> = Vec::new();
    let mut entry: Option<String> = None;
    let mut name = String::new();
    let mut section = Section::None;
    if implicit {
        funcs.push(FuncText {
            name: String::new(),
            line: 1,
            body: Vec::new(),
        });
        section = Section::Func(0);
    }

    for (ln, raw_line) in text.lines().enumerate() {
        let line_no = ln + 1;
        let line = match raw_line.find('#') {
            Some(i) => &raw_line[..i],
            None => raw_line,
        };
        let mut col_base = 0usize;
        for piece in line.split(';') {
            let piece_col = col_base;
            col_base += piece.len() + 1;
            let mut stmt = piece.trim_start();
            let mut column = piece_col + (piece.len() - stmt.len()) + 1;
            stmt = stmt.trim_end();
            // leading labels
            loop {
                let Some(colon) = stmt.find(':') else { break };
                let head = &stmt[..colon];
                if !is_ident(head) || head.starts_with('.') && head.len() == 1 {
                    break;
                }
                let label = head.to_string();
                match section {
                    Section::Func(fi) => funcs[fi].body.push(Stmt::Label(label)),
                    Section::Data => data.push(DataItem {
                        label,
                        offset: 0,
                        bytes: Vec::new(),
                    }),
                    Section::None => {
                        return Err(ParseError::Syntax {
                            line: line_no,
                            column,
                            message: format!("label `{head}` outside of a section"),
                        })
                    }
                }
                let rest = &stmt[colon + 1..];
                let trimmed = rest.trim_start();
                column += colon + 1 + (rest.len() - trimmed.len());
                stmt = trimmed;
            }
            if stmt.is_empty() {
                continue;
            }
            let syntax = |message: String| ParseError::Syntax {
                line: line_no,
                column,
                message,
            };
            let (word, rest) = match stmt.find(char::is_whitespace) {
                Some(i) => (&stmt[..i], stmt[i..].trim()),
                None => (stmt, ""),
            };
            match word.to_ascii_lowercase().as_str() {
                ".func" => {
                    let fname = rest.trim_end_matches(':').trim();
                    if !is_ident(fname) {
                        return Err(syntax(format!("bad function name `{rest}`")));
                    }
                    funcs.push(FuncText {
                        name: fname.to_string(),
                        line: line_no,
                        body: Vec::new(),
                    });
                    section = Section::Func(funcs.len() - 1);
                }
                ".data" => section = Section::Data,
                ".entry" => {
                    if !is_ident(rest) {
                        return Err(syntax(format!("bad entry name `{rest}`")));
                    }
                    entry = Some(rest.to_string());
                }
                ".name" => name = rest.to_string(),
                ".db" => {
                    let bytes = parse_bytes(rest).map_err(|t| ParseError::MalformedOperand {
                        line: line_no,
                        column,
                        text: t,
                    })?;
                    match section {
                        Section::Func(fi) => {
                            funcs[fi].body.push(Stmt::Instr(Instruction::db(bytes)))
                        }
                        Section::Data => match data.last_mut() {
                            Some(item) => item.bytes.extend(bytes),
                            None => return Err(syntax("data bytes before any data label".into())),
                        },
                        Section::None => return Err(syntax(".db outside of a section".into())),
                    }
                }
                _ => {
                    let Section::Func(fi) = section else {
                        return Err(syntax("instruction outside of a function".into()));
                    };
                    let ins = parse_instruction(word, rest, line_no, column)?;
                    funcs[fi].body.push(Stmt::Instr(ins));
                }
            }
        }
    }

    Ok(Scanned {
        funcs,
        data,
        entry,
        name,
    })
}

fn parse_instruction(
    word: &str,
    rest: &str,
    line: usize,
    column: usize,
) -> Result<Instruction, ParseError> {
    let opcode = match Opcode::from_mnemonic(word) {
        Some(op) if op != Opcode::Db => op,
        _ => {
            return Err(ParseError::UnknownOpcode {
                line,
                column,
                name: word.to_string(),
            })
        }
    };
    let branch = matches!(
        opcode,
        Opcode::Jmp | Opcode::Je | Opcode::Jne | Opcode::Call
    );
    let mut operands = Vec::new();
    if !rest.is_empty() {
        for text in rest.split(',') {
            let t = text.trim();
            let op = parse_operand(t, branch).ok_or_else(|| ParseError::MalformedOperand {
                line,
                column,
                text: t.to_string(),
            })?;
            operands.push(op);
        }
    }
    Ok(Instruction::new(opcode, operands))
}

pub(crate) fn parse_number(s: &str) -> Option<i32> {
    let s = s.trim();
    let (neg, body) = match s.strip_prefix('-') {
        Some(b) => (true, b.trim_start()),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    let mag: i64 = if let Some(h) = body.strip_prefix("0x").or_else(|| body.strip_prefix("0X")) {
        if h.is_empty() || h.len() > 8 {
            return None;
        }
        i64::from_str_radix(h, 16).ok()?
    } else {
        if body.is_empty() || !body.chars().all(|c| c.is_ascii_digit()) || body.len() > 10 {
            return None;
        }
        body.parse::<i64>().ok()?
    };
    let v = if neg { -mag } else { mag };
    if v < i32::MIN as i64 || v > u32::MAX as i64 {
        return None;
    }
    Some(v as u32 as i32)
}

fn parse_bytes(s: &str) -> Result<Vec<u8>, String> {
    let mut out = Vec::new();
    for t in s.split(',') {
        let t = t.trim();
        match parse_number(t) {
            Some(v) if (0..=255).contains(&v) => out.push(v as u8),
            _ => return Err(t.to_string()),
        }
    }
    Ok(out)
}

pub(crate) fn parse_operand(t: &str, branch: bool) -> Option<Operand> {
    if t.is_empty() {
        return None;
    }
    if branch {
        return is_ident(t).then(|| Operand::Code(t.to_string()));
    }
    let mut s = t;
    let lower = s.to_ascii_lowercase();
    if lower.starts_with("dword") {
        let after = s[5..].trim_start();
        if !after.to_ascii_lowercase().starts_with("ptr") {
            return None;
        }
        s = after[3..].trim_start();
        if !(s.starts_with('[') || s.to_ascii_lowercase().starts_with("ds:")) {
            return None;
        }
    }
    if s.len() >= 3 && s[..3].eq_ignore_ascii_case("ds:") {
        let inner = s[3..].trim();
        return parse_address(inner);
    }
    if let Some(inner) = s.strip_prefix('[') {
        let inner = inner.strip_suffix(']')?;
        return parse_address(inner);
    }
    if let Some(r) = Register::parse(s) {
        return Some(Operand::Reg(r));
    }
    parse_number(s).map(Operand::Imm)
}

/// `base + index + disp`, `label + disp` or an absolute number.
fn parse_address(inner: &str) -> Option<Operand> {
    let mut regs: Vec<Register> = Vec::new();
    let mut label: Option<String> = None;
    let mut disp: i64 = 0;
    let mut sign = 1i64;
    let mut term = String::new();
    let mut terms: Vec<(i64, String)> = Vec::new();
    for c in inner.chars() {
        match c {
            '+' | '-' => {
                let t = term.trim().to_string();
                if t.is_empty() && !terms.is_empty() {
                    return None;
                }
                if !t.is_empty() {
                    terms.push((sign, t));
                }
                term.clear();
                sign = if c == '-' { -1 } else { 1 };
            }
            _ => term.push(c),
        }
    }
    let t = term.trim().to_string();
    if t.is_empty() {
        return None;
    }
    terms.push((sign, t));
    for (sign, t) in terms {
        if let Some(r) = Register::parse(&t) {
            if sign < 0 || regs.len() == 2 {
                return None;
            }
            regs.push(r);
        } else if let Some(v) = parse_number(&t) {
            disp += sign * (v as u32 as i64);
        } else if is_ident(&t) && label.is_none() && sign > 0 {
            label = Some(t);
        } else {
            return None;
        }
    }
    let disp = disp as u32 as i32;
    match label {
        Some(l) => regs
            .is_empty()
            .then_some(Operand::Data(DataRef { label: l, disp })),
        None => Some(Operand::Mem(MemRef {
            base: regs.first().copied(),
            index: regs.get(1).copied(),
            disp,
        })),
    }
}
