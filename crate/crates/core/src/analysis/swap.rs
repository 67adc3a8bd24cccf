use thiserror::Error;

use crate::asm::{BasicBlock, LocSet, Opcode};

use super::rw::instruction_summaries;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnalysisError {
    #[error("instruction index {index} out of bounds for block `{label}` of length {len}")]
    IndexOutOfBounds {
        label: String,
        index: usize,
        len: usize,
    },
}

/// Whether instructions `i` and `j` of `block` can trade places.
///
/// Register and memory dependences between the pair and everything between
/// them rule a swap out. Two writes of the same flag only conflict when that
/// flag is read later in the block before being overwritten; use
/// [`swap_safe_with`] to also account for flags live out of the block.
pub fn swap_safe(block: &BasicBlock, i: usize, j: usize) -> Result<bool, AnalysisError> {
    swap_safe_with(block, i, j, LocSet::EMPTY)
}

/// [`swap_safe`] with the set of locations live out of the block.
pub fn swap_safe_with(
    block: &BasicBlock,
    i: usize,
    j: usize,
    live_out: LocSet,
) -> Result<bool, AnalysisError> {
    let len = block.instrs.len();
    for idx in [i, j] {
        if idx >= len {
            return Err(AnalysisError::IndexOutOfBounds {
                label: block.label.clone(),
                index: idx,
                len,
            });
        }
    }
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    if i == j {
        return Ok(true);
    }
    let body = block.body_len();
    if j >= body || block.instrs[i].is_data() || block.instrs[j].is_data() {
        return Ok(false);
    }
    let sums = instruction_summaries(block);
    // flags whose value after j is observed
    let mut observed = LocSet::EMPTY;
    let mut overwritten = LocSet::EMPTY;
    for s in &sums[j + 1..] {
        observed |= (s.reads & LocSet::FLAGS) - overwritten;
        overwritten |= s.writes & LocSet::FLAGS;
    }
    observed |= (live_out & LocSet::FLAGS) - overwritten;
    let exempt = LocSet::FLAGS - observed;

    // output order is observable
    let out = |x: usize| block.instrs[x].opcode == Opcode::Out;
    let commutes = |a: usize, others: std::ops::Range<usize>| {
        others
            .into_iter()
            .all(|k| !(out(a) && out(k)) && !sums[a].conflicts(&sums[k], exempt))
    };
    Ok(commutes(i, i + 1..j + 1) && commutes(j, i + 1..j))
}
