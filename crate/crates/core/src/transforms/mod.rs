//! The ten transformation passes. Each pass rewrites one site at a time,
//! checks the rewrite with [`verify_and_revert`] and keeps the original
//! block when the check fails.

mod certify;
mod functions;
mod junk;
mod kind;
mod layout;
mod opaque;
mod reassign;
mod rules;
mod subst;

use std::collections::BTreeMap;
use std::sync::OnceLock;

use rand::Rng;
use thiserror::Error;

use crate::analysis::{
    liveness, verify_and_revert, LivenessMap, RegionSpec, RevertReason, Site, StackTracker,
};
use crate::asm::{
    relayout_in_place, BasicBlock, BinaryImage, Function, ImageError, Instruction, Register,
};

pub use certify::{certify, Counterexample};
pub use kind::{TransformKind, Weights};
pub use opaque::{opaque_templates, OpaqueTemplate};
pub use rules::{
    Bindings, Direction, InstantiateError, OperandClass, PatternOperand, RuleError, RuleSet,
    SubstitutionRule, SCRATCH_PREFERENCE,
};

/// Result of applying one kind to a list of sites.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MutationOutcome {
    pub image: BinaryImage,
    /// Sites whose rewrite was accepted, in application order.
    pub applied: Vec<(TransformKind, Site)>,
    /// Sites whose rewrite failed the check; their blocks are untouched.
    pub reverted: Vec<(Site, RevertReason)>,
    /// Original blocks changed by accepted rewrites, per kind.
    pub blocks_changed: BTreeMap<TransformKind, usize>,
}

impl MutationOutcome {
    fn new(image: BinaryImage) -> Self {
        MutationOutcome {
            image,
            applied: Vec::new(),
            reverted: Vec::new(),
            blocks_changed: BTreeMap::new(),
        }
    }

    pub fn reverted_count(&self) -> usize {
        self.reverted.len()
    }

    pub fn total_blocks_changed(&self) -> usize {
        self.blocks_changed.values().sum()
    }

    /// Appends the effects of a later pass on `other.image`.
    pub fn merge(&mut self, other: MutationOutcome) {
        self.image = other.image;
        self.applied.extend(other.applied);
        self.reverted.extend(other.reverted);
        for (k, n) in other.blocks_changed {
            *self.blocks_changed.entry(k).or_default() += n;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransformError {
    #[error("{kind} is not applicable at {}/{}", site.function, site.block)]
    NotApplicable { kind: TransformKind, site: Site },
    #[error("{kind} at {}/{} produced an invalid image: {source}", site.function, site.block)]
    Invalid {
        kind: TransformKind,
        site: Site,
        #[source]
        source: ImageError,
    },
}

/// A candidate rewrite of one site.
pub(crate) struct Rewrite {
    pub image: BinaryImage,
    pub region: RegionSpec,
    pub blocks_changed: usize,
}

/// Everything a rewrite needs to know about its site.
pub(crate) struct SiteCtx<'a> {
    pub image: &'a BinaryImage,
    pub fi: usize,
    pub bi: usize,
    pub live: &'a LivenessMap,
    pub rules: &'a RuleSet,
}

impl<'a> SiteCtx<'a> {
    pub fn block(&self) -> &'a BasicBlock {
        &self.image.functions[self.fi].blocks[self.bi]
    }

    pub fn function_name(&self) -> &'a str {
        &self.image.functions[self.fi].name
    }

    /// The image with this site's block replaced by `blocks`.
    pub fn replace_block(&self, blocks: Vec<BasicBlock>) -> BinaryImage {
        let mut out = self.image.clone();
        out.functions[self.fi]
            .blocks
            .splice(self.bi..=self.bi, blocks);
        out
    }

    pub fn region(&self, mutated: Vec<String>) -> RegionSpec {
        let label = self.block().label.clone();
        RegionSpec {
            function: self.function_name().to_string(),
            entry: label.clone(),
            original: vec![label],
            mutated,
        }
    }
}

fn builtin_rules() -> &'static RuleSet {
    static RULES: OnceLock<RuleSet> = OnceLock::new();
    RULES.get_or_init(RuleSet::builtin)
}

/// Applies transformations with a fixed substitution catalogue.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mutator {
    pub rules: RuleSet,
}

impl Default for Mutator {
    fn default() -> Self {
        Mutator {
            rules: builtin_rules().clone(),
        }
    }
}

impl Mutator {
    pub fn new(rules: RuleSet) -> Self {
        Mutator { rules }
    }

    pub fn applicable_sites(&self, image: &BinaryImage, kind: TransformKind) -> Vec<Site> {
        applicable_sites(image, kind, &self.rules)
    }

    /// Rewrites each site in turn. Sites must come from
    /// [`Mutator::applicable_sites`] on `image`; a site whose predicate no
    /// longer holds after earlier rewrites is skipped.
    pub fn apply<R: Rng + ?Sized>(
        &self,
        kind: TransformKind,
        image: &BinaryImage,
        sites: &[Site],
        rng: &mut R,
    ) -> Result<MutationOutcome, TransformError> {
        if cfg!(debug_assertions) {
            let ok = applicable_sites(image, kind, &self.rules);
            if let Some(bad) = sites.iter().find(|s| !ok.contains(s)) {
                return Err(TransformError::NotApplicable {
                    kind,
                    site: bad.clone(),
                });
            }
        }
        let mut out = MutationOutcome::new(image.clone());
        for site in sites {
            let current = &out.image;
            let Some((fi, bi)) = locate(current, kind, site) else {
                continue;
            };
            let live = liveness(&current.functions[fi]);
            let ctx = SiteCtx {
                image: current,
                fi,
                bi,
                live: &live,
                rules: &self.rules,
            };
            if !predicate(&ctx, kind) {
                continue;
            }
            let Some(rw) = rewrite(&ctx, kind, rng) else {
                continue;
            };
            let verdict = if kind == TransformKind::FunctionReordering {
                crate::analysis::Verification::Accepted
            } else {
                verify_and_revert(current, &rw.image, &rw.region, &live)
            };
            match verdict {
                crate::analysis::Verification::Accepted => {
                    if !text_differs(current, &rw.image, fi) {
                        continue;
                    }
                    let mut next = rw.image;
                    relayout_in_place(&mut next);
                    if cfg!(debug_assertions) {
                        next.validate().map_err(|source| TransformError::Invalid {
                            kind,
                            site: site.clone(),
                            source,
                        })?;
                    }
                    out.image = next;
                    out.applied.push((kind, site.clone()));
                    *out.blocks_changed.entry(kind).or_default() += rw.blocks_changed;
                }
                crate::analysis::Verification::Reverted(reason) => {
                    out.reverted.push((site.clone(), reason))
                }
            }
        }
        if let Some((_, site)) = out.applied.last() {
            out.image
                .validate()
                .map_err(|source| TransformError::Invalid {
                    kind,
                    site: site.clone(),
                    source,
                })?;
        }
        Ok(out)
    }
}

fn instruction_stream(f: &Function) -> impl Iterator<Item = &Instruction> {
    f.blocks.iter().flat_map(|b| &b.instrs)
}

/// Whether a rewrite of function `fi` changes the encoded text: a
/// function was added or moved, or `fi`'s instruction sequence differs.
fn text_differs(before: &BinaryImage, after: &BinaryImage, fi: usize) -> bool {
    before.functions.len() != after.functions.len()
        || before
            .functions
            .iter()
            .zip(&after.functions)
            .any(|(a, b)| a.name != b.name)
        || !instruction_stream(&before.functions[fi]).eq(instruction_stream(&after.functions[fi]))
}

fn locate(image: &BinaryImage, kind: TransformKind, site: &Site) -> Option<(usize, usize)> {
    let fi = image.function_index(&site.function)?;
    if kind == TransformKind::FunctionReordering {
        return (site.block == site.function).then_some((fi, 0));
    }
    let bi = image.functions[fi].block_index(&site.block)?;
    Some((fi, bi))
}

/// Every site where `kind`'s applicability predicate holds, in layout order.
pub fn applicable_sites(image: &BinaryImage, kind: TransformKind, rules: &RuleSet) -> Vec<Site> {
    let mut out = Vec::new();
    for (fi, f) in image.functions.iter().enumerate() {
        let live = liveness(f);
        for bi in 0..f.blocks.len() {
            if kind == TransformKind::FunctionReordering && bi > 0 {
                break;
            }
            let ctx = SiteCtx {
                image,
                fi,
                bi,
                live: &live,
                rules,
            };
            if predicate(&ctx, kind) {
                out.push(Site::new(&f.name, &f.blocks[bi].label));
            }
        }
    }
    out
}

fn predicate(ctx: &SiteCtx, kind: TransformKind) -> bool {
    use TransformKind as K;
    if kind == K::FunctionReordering {
        return ctx.image.functions.len() > 1;
    }
    if ctx.block().has_data() {
        return false;
    }
    match kind {
        K::JunkCodeInsertion => true,
        K::RegisterReassignment => reassign::applicable(ctx),
        K::FunctionInlining => functions::inline_applicable(ctx),
        K::FunctionOutlining => functions::outline_applicable(ctx),
        K::ObfuscatingSubstitution => subst::applicable(ctx, Direction::Obfuscating),
        K::OptimizingSubstitution => subst::applicable(ctx, Direction::Optimizing),
        K::CodeTransposition => layout::transpose_applicable(ctx),
        K::InstructionSwapping => layout::swap_applicable(ctx),
        K::OpaquePredicateInsertion => true,
        K::FunctionReordering => unreachable!(),
    }
}

fn rewrite<R: Rng + ?Sized>(ctx: &SiteCtx, kind: TransformKind, rng: &mut R) -> Option<Rewrite> {
    use TransformKind as K;
    match kind {
        K::JunkCodeInsertion => junk::rewrite(ctx, rng),
        K::RegisterReassignment => reassign::rewrite(ctx, rng),
        K::FunctionInlining => functions::inline(ctx),
        K::FunctionOutlining => functions::outline(ctx, rng),
        K::ObfuscatingSubstitution => subst::rewrite(ctx, Direction::Obfuscating, rng),
        K::OptimizingSubstitution => subst::rewrite(ctx, Direction::Optimizing, rng),
        K::CodeTransposition => layout::transpose(ctx, rng),
        K::InstructionSwapping => layout::swap(ctx, rng),
        K::OpaquePredicateInsertion => opaque::rewrite(ctx, rng),
        K::FunctionReordering => functions::reorder(ctx, rng),
    }
}

macro_rules! apply_fns {
    ($($name:ident => $kind:ident),* $(,)?) => {
        $(
            pub fn $name<R: Rng + ?Sized>(
                image: &BinaryImage,
                sites: &[Site],
                rng: &mut R,
            ) -> Result<MutationOutcome, TransformError> {
                Mutator::default().apply(TransformKind::$kind, image, sites, rng)
            }
        )*
    };
}

apply_fns! {
    apply_junk_code_insertion => JunkCodeInsertion,
    apply_register_reassignment => RegisterReassignment,
    apply_function_inlining => FunctionInlining,
    apply_function_outlining => FunctionOutlining,
    apply_obfuscating_substitution => ObfuscatingSubstitution,
    apply_optimizing_substitution => OptimizingSubstitution,
    apply_code_transposition => CodeTransposition,
    apply_instruction_swapping => InstructionSwapping,
    apply_opaque_predicate_insertion => OpaquePredicateInsertion,
    apply_function_reordering => FunctionReordering,
}

/// Applies `kind` with the built-in catalogue.
pub fn apply<R: Rng + ?Sized>(
    kind: TransformKind,
    image: &BinaryImage,
    sites: &[Site],
    rng: &mut R,
) -> Result<MutationOutcome, TransformError> {
    Mutator::default().apply(kind, image, sites, rng)
}

/// True when `instrs` leaves ESP where it started and never pops above its
/// starting point, with no explicit ESP register operand.
pub(crate) fn balanced(instrs: &[Instruction]) -> bool {
    let mut t = StackTracker::default();
    for ins in instrs {
        if ins.is_control()
            || ins.is_data()
            || ins
                .operands
                .iter()
                .any(|o| o.as_reg() == Some(Register::Esp))
        {
            return false;
        }
        t.step(ins);
        match t.esp_offset() {
            Some(off) if off <= 0 => {}
            _ => return false,
        }
    }
    t.esp_offset() == Some(0)
}

/// Shifts ESP-relative displacements by `delta`.
pub(crate) fn shift_esp(ins: &Instruction, delta: i32) -> Instruction {
    let mut out = ins.clone();
    for op in &mut out.operands {
        if let crate::asm::Operand::Mem(m) = op {
            if m.base == Some(Register::Esp) || m.index == Some(Register::Esp) {
                m.disp = m.disp.wrapping_add(delta);
            }
        }
    }
    out
}

/// Picks a uniformly random element.
pub(crate) fn pick<'a, T, R: Rng + ?Sized>(items: &'a [T], rng: &mut R) -> Option<&'a T> {
    (!items.is_empty()).then(|| &items[rng.gen_range(0..items.len())])
}
