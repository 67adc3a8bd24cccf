use std::fmt::Write;

use crate::asm::BinaryImage;

const BYTES_PER_LINE: usize = 16;

/// Renders the canonical textual form of an image.
///
/// Every block label is written, so reparsing reproduces the same
/// partition. Data bytes are written as `.db` lines of at most 16 bytes.
pub fn emit_asm(image: &BinaryImage) -> String {
    let mut out = String::new();
    if !image.meta.name.is_empty() {
        let _ = writeln!(out, ".name {}", image.meta.name);
    }
    let _ = writeln!(out, ".entry {}", image.entry);
    for f in &image.functions {
        let _ = writeln!(out, ".func {}:", f.name);
        for (bi, b) in f.blocks.iter().enumerate() {
            if bi > 0 {
                let _ = writeln!(out, "{}:", b.label);
            }
            for ins in &b.instrs {
                let _ = writeln!(out, "    {ins}");
            }
        }
    }
    if !image.data.is_empty() {
        out.push_str(".data\n");
        for d in &image.data {
            let _ = writeln!(out, "{}:", d.label);
            for chunk in d.bytes.chunks(BYTES_PER_LINE) {
                let parts: Vec<String> = chunk.iter().map(|b| format!("0x{b:02x}")).collect();
                let _ = writeln!(out, "    .db {}", parts.join(", "));
            }
        }
    }
    out
}

/// Canonical text of the code alone: the clustering key input.
pub fn emit_text_section(image: &BinaryImage) -> String {
    let mut out = String::new();
    for f in &image.functions {
        let _ = writeln!(out, ".func {}:", f.name);
        for (bi, b) in f.blocks.iter().enumerate() {
            if bi > 0 {
                let _ = writeln!(out, "{}:", b.label);
            }
            for ins in &b.instrs {
                let _ = writeln!(out, "    {ins}");
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textio::parse_asm;

    #[test]
    fn nop_halt() {
        let img = parse_asm(".func main:\nnop\nhalt\n").unwrap();
        assert_eq!(
            emit_asm(&img),
            ".entry main\n.func main:\n    nop\n    halt\n"
        );
    }

    #[test]
    fn db_lines() {
        let img = parse_asm(".func main:\njmp L\n.db 0xde, 0xad\nL: halt\n").unwrap();
        let text = emit_asm(&img);
        assert!(text.contains("    .db 0xde, 0xad\n"), "{text}");
        assert_eq!(parse_asm(&text).unwrap(), img);
    }

    #[test]
    fn data_round_trip() {
        let bytes: Vec<String> = (0..40).map(|i| i.to_string()).collect();
        let src = format!(
            ".name sample\n.func main:\nmov eax, DWORD PTR [tbl+0x4]\nout eax\nhalt\n.data\ntbl: .db {}\nempty:\n",
            bytes.join(", ")
        );
        let img = parse_asm(&src).unwrap();
        let text = emit_asm(&img);
        assert_eq!(parse_asm(&text).unwrap(), img);
        assert_eq!(emit_asm(&parse_asm(&text).unwrap()), text);
    }
}
