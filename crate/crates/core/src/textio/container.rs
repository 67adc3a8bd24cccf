//! Binary container.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "MRVB"
//! 4       2     format version (u16)
//! 6       2     reserved, zero
//! 8       4     text section length (u32)
//! 12      4     data section length
//! 16      4     symbol table length
//! 20      4     metadata length
//! 24      ...   text, data, symbol table, metadata
//! ```
//!
//! All integers are little-endian. Each instruction occupies exactly its
//! layout width: an opcode byte (bit 7 set when operands follow), a shape
//! byte holding three bits of operand kind per slot, then the
//! operands (register 1, immediate 4, memory 5, data reference 5, code
//! address 4, raw bytes 1 + n). The symbol table lists functions with their
//! blocks and the data labels; metadata is JSON.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::asm::{
    BasicBlock, BinaryImage, DataItem, DataRef, Function, ImageError, Instruction, MemRef, Opcode,
    Operand, Register, FORMAT_VERSION, INPUT_LABEL,
};
use crate::transforms::TransformKind;

pub const MAGIC: &[u8; 4] = b"MRVB";
pub const HEADER_SIZE: usize = 24;
const INPUT_INDEX: u8 = 0xff;
const NO_REG: u8 = 0x0f;
const HAS_OPERANDS: u8 = 0x80;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Benign,
    Malicious,
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Label::Benign => "benign",
            Label::Malicious => "malicious",
        })
    }
}

/// Provenance of a generated sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lineage {
    pub parent: String,
    pub kinds: Vec<TransformKind>,
    pub seed: u64,
    pub iteration: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ContainerError {
    #[error("bad magic")]
    BadMagic,
    #[error("version mismatch: found {found}, expected {FORMAT_VERSION}")]
    Version { found: u16 },
    #[error("truncated {0} section")]
    Truncated(&'static str),
    #[error("malformed container: {0}")]
    Malformed(String),
    #[error("cannot encode: {0}")]
    Unencodable(String),
    #[error(transparent)]
    Image(#[from] ImageError),
}

#[derive(Serialize, Deserialize)]
struct Meta {
    name: String,
    label: Label,
    lineage: Option<Lineage>,
}

fn kind_code(op: &Operand) -> u8 {
    match op {
        Operand::Reg(_) => 1,
        Operand::Imm(_) => 2,
        Operand::Mem(_) => 3,
        Operand::Data(_) => 4,
        Operand::Code(_) => 5,
        Operand::Bytes(_) => 6,
    }
}

fn reg_code(r: Option<Register>) -> u8 {
    r.map_or(NO_REG, |r| r.index() as u8)
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u16).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

/// Serializes the text section only.
pub fn encode_text(image: &BinaryImage) -> Result<Vec<u8>, ContainerError> {
    let laid = crate::asm::relayout(image);
    let data_index = |label: &str| -> Result<u8, ContainerError> {
        if label == INPUT_LABEL {
            return Ok(INPUT_INDEX);
        }
        match laid.data.iter().position(|d| d.label == label) {
            Some(i) if i < INPUT_INDEX as usize => Ok(i as u8),
            Some(_) => Err(ContainerError::Unencodable(
                "more than 255 data labels".into(),
            )),
            None => Err(ImageError::UnknownData(label.to_string()).into()),
        }
    };
    let code_addr = |label: &str| -> Result<u32, ContainerError> {
        laid.blocks()
            .find(|(_, b)| b.label == label)
            .map(|(_, b)| b.addr)
            .ok_or_else(|| {
                ImageError::UnresolvedLabel {
                    function: String::new(),
                    label: label.to_string(),
                }
                .into()
            })
    };
    let mut out = Vec::with_capacity(laid.text_size as usize);
    for (_, b) in laid.blocks() {
        for ins in &b.instrs {
            if ins.operands.is_empty() {
                out.push(ins.opcode.index());
                continue;
            }
            out.push(ins.opcode.index() | HAS_OPERANDS);
            let shape = ins
                .operands
                .iter()
                .enumerate()
                .fold(0u8, |acc, (i, o)| acc | kind_code(o) << (3 * i));
            out.push(shape);
            for op in &ins.operands {
                match op {
                    Operand::Reg(r) => out.push(r.index() as u8),
                    Operand::Imm(v) => out.extend_from_slice(&v.to_le_bytes()),
                    Operand::Mem(m) => {
                        out.push(reg_code(m.base) | reg_code(m.index) << 4);
                        out.extend_from_slice(&m.disp.to_le_bytes());
                    }
                    Operand::Data(d) => {
                        out.push(data_index(&d.label)?);
                        out.extend_from_slice(&d.disp.to_le_bytes());
                    }
                    Operand::Code(l) => put_u32(&mut out, code_addr(l)?),
                    Operand::Bytes(bs) => {
                        out.push(bs.len() as u8);
                        out.extend_from_slice(bs);
                    }
                }
            }
        }
    }
    debug_assert_eq!(out.len(), laid.text_size as usize);
    Ok(out)
}

fn encode_symtab(image: &BinaryImage) -> Vec<u8> {
    let mut out = Vec::new();
    put_u32(&mut out, image.functions.len() as u32);
    for f in &image.functions {
        put_str(&mut out, &f.name);
        put_u32(&mut out, f.blocks.len() as u32);
        for b in &f.blocks {
            put_str(&mut out, &b.label);
            put_u32(&mut out, b.addr);
            put_u32(&mut out, b.instrs.len() as u32);
        }
    }
    put_u32(&mut out, image.data.len() as u32);
    for d in &image.data {
        put_str(&mut out, &d.label);
        put_u32(&mut out, d.bytes.len() as u32);
    }
    put_str(&mut out, &image.entry);
    out
}

/// Encodes an image with its label and lineage.
pub fn encode_container(
    image: &BinaryImage,
    label: Label,
    lineage: Option<&Lineage>,
) -> Result<Vec<u8>, ContainerError> {
    image.validate()?;
    let laid = crate::asm::relayout(image);
    let text = encode_text(&laid)?;
    let data = laid.data_bytes();
    let symtab = encode_symtab(&laid);
    let meta = serde_json::to_vec(&Meta {
        name: laid.meta.name.clone(),
        label,
        lineage: lineage.cloned(),
    })
    .expect("metadata serializes");
    let mut out =
        Vec::with_capacity(HEADER_SIZE + text.len() + data.len() + symtab.len() + meta.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&laid.meta.version.to_le_bytes());
    out.extend_from_slice(&[0, 0]);
    for len in [text.len(), data.len(), symtab.len(), meta.len()] {
        put_u32(&mut out, len as u32);
    }
    out.extend_from_slice(&text);
    out.extend_from_slice(&data);
    out.extend_from_slice(&symtab);
    out.extend_from_slice(&meta);
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    section: &'static str,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8], section: &'static str) -> Self {
        Reader {
            buf,
            pos: 0,
            section,
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], ContainerError> {
        if self.buf.len() - self.pos < n {
            return Err(ContainerError::Truncated(self.section));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, ContainerError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, ContainerError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, ContainerError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn i32(&mut self) -> Result<i32, ContainerError> {
        Ok(self.u32()? as i32)
    }

    fn string(&mut self) -> Result<String, ContainerError> {
        let n = self.u16()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| ContainerError::Malformed(format!("non-UTF-8 string in {}", self.section)))
    }

    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

fn malformed(msg: impl Into<String>) -> ContainerError {
    ContainerError::Malformed(msg.into())
}

fn decode_reg(code: u8) -> Result<Option<Register>, ContainerError> {
    if code == NO_REG {
        return Ok(None);
    }
    Register::from_index(code as usize)
        .map(Some)
        .ok_or_else(|| malformed(format!("bad register code {code}")))
}

struct SymBlock {
    label: String,
    addr: u32,
    count: u32,
}

/// Decodes a container into (image, label, lineage).
pub fn decode_container(
    bytes: &[u8],
) -> Result<(BinaryImage, Label, Option<Lineage>), ContainerError> {
    let mut hdr = Reader::new(bytes, "header");
    if hdr.take(4).map_err(|_| ContainerError::BadMagic)? != MAGIC {
        return Err(ContainerError::BadMagic);
    }
    let version = hdr.u16()?;
    if version != FORMAT_VERSION {
        return Err(ContainerError::Version { found: version });
    }
    hdr.u16()?;
    let lens = [hdr.u32()?, hdr.u32()?, hdr.u32()?, hdr.u32()?];
    let mut body = Reader::new(&bytes[HEADER_SIZE..], "text");
    let text = body.take(lens[0] as usize)?;
    body.section = "data";
    let data = body.take(lens[1] as usize)?;
    body.section = "symbol table";
    let symtab = body.take(lens[2] as usize)?;
    body.section = "metadata";
    let meta = body.take(lens[3] as usize)?;
    if !body.done() {
        return Err(malformed("trailing bytes after metadata"));
    }

    let mut st = Reader::new(symtab, "symbol table");
    let nfuncs = st.u32()? as usize;
    let mut funcs: Vec<(String, Vec<SymBlock>)> = Vec::new();
    for _ in 0..nfuncs {
        let name = st.string()?;
        let nblocks = st.u32()? as usize;
        let mut blocks = Vec::new();
        for _ in 0..nblocks {
            blocks.push(SymBlock {
                label: st.string()?,
                addr: st.u32()?,
                count: st.u32()?,
            });
        }
        funcs.push((name, blocks));
    }
    let ndata = st.u32()? as usize;
    let mut data_items = Vec::new();
    let mut off = 0usize;
    for _ in 0..ndata {
        let label = st.string()?;
        let size = st.u32()? as usize;
        let bytes = data
            .get(off..off + size)
            .ok_or(ContainerError::Truncated("data"))?
            .to_vec();
        off += size;
        data_items.push(DataItem {
            label,
            offset: 0,
            bytes,
        });
    }
    if off != data.len() {
        return Err(malformed("data section length disagrees with symbol table"));
    }
    let entry = st.string()?;
    if !st.done() {
        return Err(malformed("trailing bytes in symbol table"));
    }

    let addr_label: std::collections::HashMap<u32, &str> = funcs
        .iter()
        .flat_map(|(_, bs)| bs.iter().map(|b| (b.addr, b.label.as_str())))
        .collect();
    let mut tr = Reader::new(text, "text");
    let mut functions = Vec::new();
    for (name, blocks) in &funcs {
        let mut out_blocks = Vec::new();
        for sb in blocks {
            let mut instrs = Vec::new();
            for _ in 0..sb.count {
                let byte = tr.u8()?;
                let opcode = Opcode::from_index(byte & !HAS_OPERANDS)
                    .ok_or_else(|| malformed("bad opcode byte"))?;
                let mut operands = Vec::new();
                if byte & HAS_OPERANDS != 0 {
                    let shape = tr.u8()?;
                    for slot in 0..2 {
                        let k = (shape >> (3 * slot)) & 7;
                        let op = match k {
                            0 => break,
                            1 => Operand::Reg(
                                decode_reg(tr.u8()?)?
                                    .ok_or_else(|| malformed("missing register"))?,
                            ),
                            2 => Operand::Imm(tr.i32()?),
                            3 => {
                                let regs = tr.u8()?;
                                Operand::Mem(MemRef {
                                    base: decode_reg(regs & 0x0f)?,
                                    index: decode_reg(regs >> 4)?,
                                    disp: tr.i32()?,
                                })
                            }
                            4 => {
                                let idx = tr.u8()?;
                                let label = if idx == INPUT_INDEX {
                                    INPUT_LABEL.to_string()
                                } else {
                                    data_items
                                        .get(idx as usize)
                                        .ok_or_else(|| malformed("bad data label index"))?
                                        .label
                                        .clone()
                                };
                                Operand::Data(DataRef {
                                    label,
                                    disp: tr.i32()?,
                                })
                            }
                            5 => {
                                let addr = tr.u32()?;
                                let l = addr_label
                                    .get(&addr)
                                    .ok_or_else(|| malformed(format!("no block at 0x{addr:x}")))?;
                                Operand::Code(l.to_string())
                            }
                            6 => {
                                let n = tr.u8()? as usize;
                                Operand::Bytes(tr.take(n)?.to_vec())
                            }
                            _ => return Err(malformed("bad operand kind")),
                        };
                        operands.push(op);
                    }
                }
                instrs.push(Instruction::new(opcode, operands));
            }
            let mut b = BasicBlock::new(sb.label.clone(), instrs);
            b.addr = sb.addr;
            out_blocks.push(b);
        }
        functions.push(Function {
            name: name.clone(),
            blocks: out_blocks,
        });
    }
    if !tr.done() {
        return Err(malformed("text section length disagrees with symbol table"));
    }
    let meta: Meta =
        serde_json::from_slice(meta).map_err(|e| malformed(format!("metadata: {e}")))?;
    let mut image = BinaryImage::new(functions, data_items);
    image.entry = entry;
    image.meta.name = meta.name;
    image.meta.version = version;
    for ((_, sb), (_, b)) in funcs
        .iter()
        .flat_map(|(n, bs)| bs.iter().map(move |b| (n, b)))
        .zip(image.blocks())
    {
        if sb.addr != b.addr {
            return Err(malformed(format!(
                "block `{}` address disagrees with layout",
                b.label
            )));
        }
    }
    image.validate()?;
    Ok((image, meta.label, meta.lineage))
}
