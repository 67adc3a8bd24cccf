//! Static analyses: read/write summaries, liveness, swap safety,
//! applicability and the post-transformation check.

mod liveness;
mod rw;
mod swap;
mod verify;

pub use liveness::{liveness, LivenessMap};
pub use rw::{instruction_summaries, rw_summary, MemClass, RWSummary, StackBase, StackTracker};
pub use swap::{swap_safe, swap_safe_with, AnalysisError};
pub use verify::{verify_and_revert, RegionSpec, RevertReason, Verification};

use serde::{Deserialize, Serialize};

use crate::asm::BinaryImage;
use crate::transforms::{self, TransformKind};

/// A place a transformation may be applied: a block of a function. For
/// function reordering the block is the function's entry.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Site {
    pub function: String,
    pub block: String,
}

impl Site {
    pub fn new(function: impl Into<String>, block: impl Into<String>) -> Self {
        Site {
            function: function.into(),
            block: block.into(),
        }
    }
}

/// Every site where `kind`'s applicability predicate holds, in layout order.
pub fn applicable_blocks(image: &BinaryImage, kind: TransformKind) -> Vec<Site> {
    transforms::applicable_sites(image, kind, &transforms::RuleSet::builtin())
}
