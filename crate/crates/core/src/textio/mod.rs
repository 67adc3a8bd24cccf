//! Textual assembly and binary container formats.

mod container;
mod emit;
mod parse;

pub use container::{
    decode_container, encode_container, encode_text, ContainerError, Label, Lineage, HEADER_SIZE,
    MAGIC,
};
pub use emit::{emit_asm, emit_text_section};
pub use parse::{parse_asm, ParseError};
pub(crate) use parse::{parse_instruction_line, parse_operand, parse_snippet};

use serde::{Deserialize, Serialize};

/// Time spent in each pipeline stage, in nanoseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageTimings {
    pub decompile_ns: u64,
    pub mutate_ns: u64,
    pub reassemble_ns: u64,
}

impl StageTimings {
    pub fn total_ns(&self) -> u64 {
        self.decompile_ns + self.mutate_ns + self.reassemble_ns
    }
}

impl std::ops::AddAssign for StageTimings {
    fn add_assign(&mut self, rhs: Self) {
        self.decompile_ns += rhs.decompile_ns;
        self.mutate_ns += rhs.mutate_ns;
        self.reassemble_ns += rhs.reassemble_ns;
    }
}

/// Nanoseconds elapsed since `start`, saturating.
pub fn elapsed_ns(start: std::time::Instant) -> u64 {
    u64::try_from(start.elapsed().as_nanos()).unwrap_or(u64::MAX)
}
