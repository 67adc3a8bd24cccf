use rand::seq::SliceRandom;
use rand::Rng;

use crate::analysis::{swap_safe, swap_safe_with};
use crate::asm::{BasicBlock, BinaryImage, Instruction, Opcode, Operand};

use super::{pick, Rewrite, SiteCtx};

const MAX_SLICES: usize = 4;

/// `count` distinct unused labels `{stem}.{n}`.
pub(crate) fn fresh_labels(image: &BinaryImage, stem: &str, count: usize) -> Vec<String> {
    let used = image.code_labels();
    (0u32..)
        .map(|n| format!("{stem}.{n}"))
        .filter(|l| !used.contains(l.as_str()))
        .take(count)
        .collect()
}

fn jmp(label: &str) -> Instruction {
    Instruction::op1(Opcode::Jmp, Operand::Code(label.to_string()))
}

pub(super) fn transpose_applicable(ctx: &SiteCtx) -> bool {
    ctx.block().instrs.len() >= 2
}

pub(super) fn transpose<R: Rng + ?Sized>(ctx: &SiteCtx, rng: &mut R) -> Option<Rewrite> {
    let block = ctx.block();
    let n = block.instrs.len();
    if n < 2 {
        return None;
    }
    let k = rng.gen_range(2..=n.min(MAX_SLICES));
    let mut cuts: Vec<usize> = (1..n).collect();
    cuts.shuffle(rng);
    cuts.truncate(k - 1);
    cuts.sort_unstable();
    let mut bounds = vec![0];
    bounds.extend(cuts);
    bounds.push(n);
    let slices: Vec<&[Instruction]> = bounds
        .windows(2)
        .map(|w| &block.instrs[w[0]..w[1]])
        .collect();

    let identity: Vec<usize> = (0..k).collect();
    let mut order = identity.clone();
    while order == identity {
        order.shuffle(rng);
    }
    let stub = order[0] != 0;
    let fresh = fresh_labels(ctx.image, &format!("{}.t", block.label), k + 1);
    let mut labels: Vec<String> = fresh[..k].to_vec();
    if !stub {
        labels[0] = block.label.clone();
    }
    let exit_label = fresh[k].clone();

    let func = &ctx.image.functions[ctx.fi];
    let next = func.blocks.get(ctx.bi + 1).map(|b| b.label.clone());
    let mut blocks = Vec::new();
    if stub {
        blocks.push(BasicBlock::new(block.label.clone(), vec![jmp(&labels[0])]));
    }
    for (pos, &i) in order.iter().enumerate() {
        let mut instrs = slices[i].to_vec();
        if i + 1 < k {
            instrs.push(jmp(&labels[i + 1]));
            blocks.push(BasicBlock::new(labels[i].clone(), instrs));
        } else {
            let falls = instrs
                .last()
                .is_some_and(|l| !l.opcode.is_unconditional_exit());
            blocks.push(BasicBlock::new(labels[i].clone(), instrs));
            if falls && pos + 1 < k {
                blocks.push(BasicBlock::new(
                    exit_label.clone(),
                    vec![jmp(next.as_deref()?)],
                ));
            }
        }
    }
    let mutated: Vec<String> = blocks.iter().map(|b| b.label.clone()).collect();
    let image = ctx.replace_block(blocks);
    Some(Rewrite {
        image,
        region: ctx.region(mutated),
        blocks_changed: 1,
    })
}

fn swap_pairs(ctx: &SiteCtx) -> Vec<(usize, usize)> {
    let block = ctx.block();
    let n = block.body_len();
    let mut out = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if block.instrs[i] != block.instrs[j] && swap_safe(block, i, j).unwrap_or(false) {
                out.push((i, j));
            }
        }
    }
    out
}

pub(super) fn swap_applicable(ctx: &SiteCtx) -> bool {
    !swap_pairs(ctx).is_empty()
}

pub(super) fn swap<R: Rng + ?Sized>(ctx: &SiteCtx, rng: &mut R) -> Option<Rewrite> {
    let block = ctx.block();
    let pairs = swap_pairs(ctx);
    let safe: Vec<(usize, usize)> = pairs
        .iter()
        .copied()
        .filter(|&(i, j)| {
            swap_safe_with(block, i, j, ctx.live.live_out(ctx.bi, j)).unwrap_or(false)
        })
        .collect();
    let &(i, j) = pick(if safe.is_empty() { &pairs } else { &safe }, rng)?;
    let mut instrs = block.instrs.clone();
    instrs.swap(i, j);
    let image = ctx.replace_block(vec![BasicBlock::new(block.label.clone(), instrs)]);
    Some(Rewrite {
        image,
        region: ctx.region(vec![block.label.clone()]),
        blocks_changed: 1,
    })
}
