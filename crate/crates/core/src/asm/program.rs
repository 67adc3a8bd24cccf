use std::collections::{BTreeSet, HashMap, HashSet};

use thiserror::Error;

use super::{Instruction, Opcode, Operand, OperandError, INPUT_LABEL};

pub const FORMAT_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BasicBlock {
    pub label: String,
    /// Layout address of the first instruction; maintained by `relayout`.
    pub addr: u32,
    pub instrs: Vec<Instruction>,
}

/// How control leaves a block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Terminator {
    Jmp(String),
    Je(String),
    Jne(String),
    /// `call f`, then fall through to the next block on return.
    Call(String),
    Ret,
    Halt,
    Fallthrough,
}

impl BasicBlock {
    pub fn new(label: impl Into<String>, instrs: Vec<Instruction>) -> Self {
        BasicBlock {
            label: label.into(),
            addr: 0,
            instrs,
        }
    }

    pub fn terminator(&self) -> Terminator {
        let Some(last) = self.instrs.last() else {
            return Terminator::Fallthrough;
        };
        let target = || last.target().unwrap_or_default().to_string();
        match last.opcode {
            Opcode::Jmp => Terminator::Jmp(target()),
            Opcode::Je => Terminator::Je(target()),
            Opcode::Jne => Terminator::Jne(target()),
            Opcode::Call => Terminator::Call(target()),
            Opcode::Ret => Terminator::Ret,
            Opcode::Halt => Terminator::Halt,
            _ => Terminator::Fallthrough,
        }
    }

    /// Instructions before the control-transfer terminator (all of them when
    /// the block falls through).
    pub fn body_len(&self) -> usize {
        match self.instrs.last() {
            Some(i) if i.is_control() => self.instrs.len() - 1,
            _ => self.instrs.len(),
        }
    }

    pub fn has_data(&self) -> bool {
        self.instrs.iter().any(Instruction::is_data)
    }

    pub fn is_data_only(&self) -> bool {
        !self.instrs.is_empty() && self.instrs.iter().all(Instruction::is_data)
    }

    /// Control can continue into the next block in layout order.
    pub fn falls_through(&self) -> bool {
        match self.instrs.last() {
            Some(i) => !i.opcode.is_unconditional_exit(),
            None => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Function {
    pub name: String,
    pub blocks: Vec<BasicBlock>,
}

impl Function {
    pub fn entry(&self) -> &BasicBlock {
        &self.blocks[0]
    }

    /// One block ending in RET, with no CALL anywhere.
    pub fn is_straight_line(&self) -> bool {
        self.blocks.len() == 1
            && self.blocks[0].terminator() == Terminator::Ret
            && !self.blocks[0]
                .instrs
                .iter()
                .any(|i| i.opcode == Opcode::Call)
    }

    pub fn block_index(&self, label: &str) -> Option<usize> {
        self.blocks.iter().position(|b| b.label == label)
    }

    pub fn instruction_count(&self) -> usize {
        self.blocks.iter().map(|b| b.instrs.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataItem {
    pub label: String,
    /// Offset from the start of the data section; maintained by `relayout`.
    pub offset: u32,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageMeta {
    pub name: String,
    pub version: u16,
}

impl Default for ImageMeta {
    fn default() -> Self {
        ImageMeta {
            name: String::new(),
            version: FORMAT_VERSION,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryImage {
    pub meta: ImageMeta,
    /// Name of the function execution starts in.
    pub entry: String,
    pub functions: Vec<Function>,
    pub data: Vec<DataItem>,
    /// Total text size in bytes; maintained by `relayout`.
    pub text_size: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ImageError {
    #[error("no functions defined")]
    NoFunctions,
    #[error("entry function `{0}` is not defined")]
    MissingEntry(String),
    #[error("function `{0}` has no instructions")]
    EmptyFunction(String),
    #[error("function `{function}`: first block is labeled `{label}`")]
    EntryLabel { function: String, label: String },
    #[error("block `{0}` is empty")]
    EmptyBlock(String),
    #[error("duplicate label `{0}`")]
    DuplicateLabel(String),
    #[error("unresolved label `{label}` in function `{function}`")]
    UnresolvedLabel { function: String, label: String },
    #[error("call to unknown function `{0}`")]
    UnknownCallee(String),
    #[error("unknown data label `{0}`")]
    UnknownData(String),
    #[error("block `{0}` transfers control before its last instruction")]
    MidBlockControl(String),
    #[error("function `{0}` falls off its last block")]
    FallsOffEnd(String),
    #[error("{label}: {source}")]
    Operand {
        label: String,
        #[source]
        source: OperandError,
    },
}

impl BinaryImage {
    pub fn new(functions: Vec<Function>, data: Vec<DataItem>) -> Self {
        let entry = functions
            .iter()
            .find(|f| f.name == "main")
            .or(functions.first())
            .map(|f| f.name.clone())
            .unwrap_or_default();
        let mut img = BinaryImage {
            meta: ImageMeta::default(),
            entry,
            functions,
            data,
            text_size: 0,
        };
        super::relayout_in_place(&mut img);
        img
    }

    pub fn function(&self, name: &str) -> Option<&Function> {
        self.functions.iter().find(|f| f.name == name)
    }

    pub fn function_index(&self, name: &str) -> Option<usize> {
        self.functions.iter().position(|f| f.name == name)
    }

    /// Locates a block by label: (function index, block index).
    pub fn find_block(&self, label: &str) -> Option<(usize, usize)> {
        self.functions
            .iter()
            .enumerate()
            .find_map(|(fi, f)| f.block_index(label).map(|bi| (fi, bi)))
    }

    pub fn data_item(&self, label: &str) -> Option<&DataItem> {
        self.data.iter().find(|d| d.label == label)
    }

    pub fn data_size(&self) -> u32 {
        self.data.iter().map(|d| d.bytes.len() as u32).sum()
    }

    pub fn data_bytes(&self) -> Vec<u8> {
        self.data
            .iter()
            .flat_map(|d| d.bytes.iter().copied())
            .collect()
    }

    pub fn block_count(&self) -> usize {
        self.functions.iter().map(|f| f.blocks.len()).sum()
    }

    pub fn instruction_count(&self) -> usize {
        self.functions.iter().map(Function::instruction_count).sum()
    }

    pub fn blocks(&self) -> impl Iterator<Item = (&Function, &BasicBlock)> {
        self.functions
            .iter()
            .flat_map(|f| f.blocks.iter().map(move |b| (f, b)))
    }

    pub fn code_labels(&self) -> HashSet<&str> {
        self.blocks().map(|(_, b)| b.label.as_str()).collect()
    }

    /// A code label of the form `{stem}.{n}` not yet used in the image.
    pub fn fresh_label(&self, stem: &str) -> String {
        let used = self.code_labels();
        (0u32..)
            .map(|n| format!("{stem}.{n}"))
            .find(|l| !used.contains(l.as_str()))
            .expect("label space exhausted")
    }

    pub fn validate(&self) -> Result<(), ImageError> {
        if self.functions.is_empty() {
            return Err(ImageError::NoFunctions);
        }
        if self.function(&self.entry).is_none() {
            return Err(ImageError::MissingEntry(self.entry.clone()));
        }
        let mut labels = HashSet::new();
        for f in &self.functions {
            if f.blocks.is_empty() {
                return Err(ImageError::EmptyFunction(f.name.clone()));
            }
            if f.blocks[0].label != f.name {
                return Err(ImageError::EntryLabel {
                    function: f.name.clone(),
                    label: f.blocks[0].label.clone(),
                });
            }
            for b in &f.blocks {
                if !labels.insert(b.label.as_str()) {
                    return Err(ImageError::DuplicateLabel(b.label.clone()));
                }
            }
        }
        let mut data_labels = BTreeSet::new();
        for d in &self.data {
            if d.label == INPUT_LABEL || !data_labels.insert(d.label.as_str()) {
                return Err(ImageError::DuplicateLabel(d.label.clone()));
            }
        }
        let functions: HashMap<&str, &Function> = self
            .functions
            .iter()
            .map(|f| (f.name.as_str(), f))
            .collect();
        for f in &self.functions {
            let local: HashSet<&str> = f.blocks.iter().map(|b| b.label.as_str()).collect();
            for b in &f.blocks {
                if b.instrs.is_empty() {
                    return Err(ImageError::EmptyBlock(b.label.clone()));
                }
                for (i, ins) in b.instrs.iter().enumerate() {
                    ins.check_operands().map_err(|source| ImageError::Operand {
                        label: b.label.clone(),
                        source,
                    })?;
                    if ins.is_control() && i + 1 != b.instrs.len() {
                        return Err(ImageError::MidBlockControl(b.label.clone()));
                    }
                    match ins.opcode {
                        Opcode::Jmp | Opcode::Je | Opcode::Jne => {
                            let t = ins.target().unwrap_or_default();
                            if !local.contains(t) {
                                return Err(ImageError::UnresolvedLabel {
                                    function: f.name.clone(),
                                    label: t.to_string(),
                                });
                            }
                        }
                        Opcode::Call => {
                            let t = ins.target().unwrap_or_default();
                            if !functions.contains_key(t) {
                                return Err(ImageError::UnknownCallee(t.to_string()));
                            }
                        }
                        _ => {}
                    }
                    for op in &ins.operands {
                        if let Operand::Data(d) = op {
                            if d.label != INPUT_LABEL && !data_labels.contains(d.label.as_str()) {
                                return Err(ImageError::UnknownData(d.label.clone()));
                            }
                        }
                    }
                }
            }
            let last = f.blocks.last().expect("non-empty");
            if last.falls_through() && !last.is_data_only() {
                return Err(ImageError::FallsOffEnd(f.name.clone()));
            }
        }
        Ok(())
    }
}
