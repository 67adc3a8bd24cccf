use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::asm::{BasicBlock, BinaryImage};
use crate::textio::{encode_text, ContainerError};

use super::Sample;

/// Byte and block differences between two samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiffReport {
    /// Differing bytes over the text+data payloads, aligned at offset 0;
    /// the longer payload's tail counts in full.
    pub byte_diff: usize,
    /// `byte_diff` over the longer payload's length.
    pub percent_diff: f64,
    /// Fraction of the first sample's blocks whose instructions changed.
    pub block_change_fraction: f64,
}

/// Encoded text section followed by the data section bytes.
pub fn payload(image: &BinaryImage) -> Result<Vec<u8>, ContainerError> {
    let mut out = encode_text(image)?;
    out.extend(image.data_bytes());
    Ok(out)
}

fn byte_diff(a: &[u8], b: &[u8]) -> usize {
    let common = a.iter().zip(b).filter(|(x, y)| x != y).count();
    common + a.len().abs_diff(b.len())
}

/// Fraction of `original`'s blocks with no same-labeled block of identical
/// instructions in `mutated`. Code operands compare by label, so blocks
/// that merely moved count as unchanged.
pub fn block_change_fraction(original: &BinaryImage, mutated: &BinaryImage) -> f64 {
    let total = original.block_count();
    if total == 0 {
        return 0.0;
    }
    let after: HashMap<&str, &BasicBlock> = mutated
        .blocks()
        .map(|(_, b)| (b.label.as_str(), b))
        .collect();
    let changed = original
        .blocks()
        .filter(|(_, b)| {
            after
                .get(b.label.as_str())
                .is_none_or(|m| m.instrs != b.instrs)
        })
        .count();
    changed as f64 / total as f64
}

pub fn diff_images(a: &BinaryImage, b: &BinaryImage) -> Result<DiffReport, ContainerError> {
    let pa = payload(a)?;
    let pb = payload(b)?;
    let n = byte_diff(&pa, &pb);
    let longest = pa.len().max(pb.len());
    Ok(DiffReport {
        byte_diff: n,
        percent_diff: if longest == 0 {
            0.0
        } else {
            n as f64 / longest as f64
        },
        block_change_fraction: block_change_fraction(a, b),
    })
}

pub fn diff(a: &Sample, b: &Sample) -> Result<DiffReport, ContainerError> {
    diff_images(&a.decode()?, &b.decode()?)
}
