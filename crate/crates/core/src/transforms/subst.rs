use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::asm::{BasicBlock, LocSet, Register};

use super::{pick, Bindings, Direction, Rewrite, SiteCtx, SubstitutionRule};

/// Rules usable at instruction `i`: the pattern matches, the flags the rule
/// does not preserve are dead, and the replacement renders.
fn candidates<'a>(
    ctx: &SiteCtx<'a>,
    dir: Direction,
) -> Vec<(usize, &'a SubstitutionRule, Bindings, LocSet)> {
    let block = ctx.block();
    let mut out = Vec::new();
    for i in 0..block.body_len() {
        let ins = &block.instrs[i];
        let live = ctx.live.live_out(ctx.bi, i);
        let dead = LocSet::REGS - live - LocSet::reg(Register::Esp);
        for (rule, b) in ctx.rules.matching(dir, ins) {
            if (LocSet::FLAGS - rule.preserves).intersects(live) {
                continue;
            }
            let mut probe = ChaCha8Rng::seed_from_u64(0);
            if rule.instantiate(ins, &b, dead, &mut probe).is_ok() {
                out.push((i, rule, b, dead));
            }
        }
    }
    out
}

pub(super) fn applicable(ctx: &SiteCtx, dir: Direction) -> bool {
    !candidates(ctx, dir).is_empty()
}

pub(super) fn rewrite<R: Rng + ?Sized>(
    ctx: &SiteCtx,
    dir: Direction,
    rng: &mut R,
) -> Option<Rewrite> {
    let block = ctx.block();
    let cands = candidates(ctx, dir);
    let (i, rule, b, dead) = pick(&cands, rng)?;
    let replacement = rule.instantiate(&block.instrs[*i], b, *dead, rng).ok()?;
    let mut instrs = block.instrs.clone();
    instrs.splice(*i..=*i, replacement);
    let image = ctx.replace_block(vec![BasicBlock::new(block.label.clone(), instrs)]);
    Some(Rewrite {
        image,
        region: ctx.region(vec![block.label.clone()]),
        blocks_changed: 1,
    })
}
