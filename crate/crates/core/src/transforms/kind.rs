use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TransformKind {
    JunkCodeInsertion,
    RegisterReassignment,
    FunctionInlining,
    FunctionOutlining,
    ObfuscatingSubstitution,
    OptimizingSubstitution,
    CodeTransposition,
    InstructionSwapping,
    OpaquePredicateInsertion,
    FunctionReordering,
}

impl TransformKind {
    pub const ALL: [TransformKind; 10] = [
        TransformKind::JunkCodeInsertion,
        TransformKind::RegisterReassignment,
        TransformKind::FunctionInlining,
        TransformKind::FunctionOutlining,
        TransformKind::ObfuscatingSubstitution,
        TransformKind::OptimizingSubstitution,
        TransformKind::CodeTransposition,
        TransformKind::InstructionSwapping,
        TransformKind::OpaquePredicateInsertion,
        TransformKind::FunctionReordering,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            TransformKind::JunkCodeInsertion => "JunkCodeInsertion",
            TransformKind::RegisterReassignment => "RegisterReassignment",
            TransformKind::FunctionInlining => "FunctionInlining",
            TransformKind::FunctionOutlining => "FunctionOutlining",
            TransformKind::ObfuscatingSubstitution => "ObfuscatingSubstitution",
            TransformKind::OptimizingSubstitution => "OptimizingSubstitution",
            TransformKind::CodeTransposition => "CodeTransposition",
            TransformKind::InstructionSwapping => "InstructionSwapping",
            TransformKind::OpaquePredicateInsertion => "OpaquePredicateInsertion",
            TransformKind::FunctionReordering => "FunctionReordering",
        }
    }

    /// Default intrusion weight per changed block.
    pub fn default_weight(self) -> f64 {
        match self {
            TransformKind::JunkCodeInsertion
            | TransformKind::ObfuscatingSubstitution
            | TransformKind::OptimizingSubstitution
            | TransformKind::OpaquePredicateInsertion
            | TransformKind::RegisterReassignment => 1.0,
            TransformKind::FunctionInlining | TransformKind::FunctionOutlining => 0.75,
            TransformKind::CodeTransposition | TransformKind::FunctionReordering => 0.5,
            TransformKind::InstructionSwapping => 0.25,
        }
    }
}

impl fmt::Display for TransformKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TransformKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TransformKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown transformation kind `{s}`"))
    }
}

/// Intrusion weights indexed by [`TransformKind::index`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weights(pub [f64; 10]);

impl Default for Weights {
    fn default() -> Self {
        Weights(TransformKind::ALL.map(TransformKind::default_weight))
    }
}

impl Weights {
    pub fn get(&self, kind: TransformKind) -> f64 {
        self.0[kind.index()]
    }
}
