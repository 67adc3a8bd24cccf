use std::collections::{BTreeMap, HashMap};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asm::BinaryImage;

use super::diff::{block_change_fraction, diff_images};
use super::Corpus;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatsConfig {
    /// Most pairs compared per family.
    pub pair_cap: usize,
    pub seed: u64,
}

impl Default for StatsConfig {
    fn default() -> Self {
        StatsConfig {
            pair_cap: 50,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

/// Linear-interpolation quartiles of `values`; `None` when empty.
pub fn quartiles(values: &[f64]) -> Option<Quartiles> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let at = |p: f64| {
        let pos = p * (v.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
    };
    Some(Quartiles {
        min: v[0],
        q1: at(0.25),
        median: at(0.5),
        q3: at(0.75),
        max: v[v.len() - 1],
    })
}

/// Nearest-rank percentile `p` in (0, 100] of `values`; 0 when empty.
pub fn nearest_rank(values: &[usize], p: f64) -> usize {
    if values.is_empty() {
        return 0;
    }
    let mut v = values.to_vec();
    v.sort_unstable();
    let rank = ((p / 100.0) * v.len() as f64).ceil().max(1.0) as usize;
    v[rank.min(v.len()) - 1]
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FamilyStats {
    pub count: usize,
    pub sizes: BTreeMap<String, usize>,
    pub median: usize,
    pub p99: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KindPair {
    pub parent: String,
    pub child: String,
    pub fraction: f64,
}

/// Block-change fractions of every (parent, child) pair whose lineage
/// lists one kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KindFractions {
    pub pairs: Vec<KindPair>,
    pub quartiles: Quartiles,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairDiff {
    pub a: String,
    pub b: String,
    pub byte_diff: usize,
    pub percent_diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseStats {
    pub members: usize,
    pub pairs: Vec<PairDiff>,
    pub percent_diff: Quartiles,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub config: StatsConfig,
    pub samples: usize,
    /// Samples whose containers failed to decode.
    pub skipped: Vec<String>,
    pub families: FamilyStats,
    /// Keyed by transformation kind name.
    pub block_change: BTreeMap<String, KindFractions>,
    /// Keyed by family; families with a single member are omitted.
    pub pairwise: BTreeMap<String, PairwiseStats>,
}

impl StatsReport {
    /// Deterministic pretty JSON.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("stats serialize")
    }
}

/// Family-size, per-kind block-change and pairwise-diff statistics.
pub fn corpus_stats(corpus: &Corpus, config: StatsConfig) -> StatsReport {
    let decoded: Vec<Option<BinaryImage>> =
        corpus.samples.par_iter().map(|s| s.decode().ok()).collect();
    let images: HashMap<&str, &BinaryImage> = corpus
        .samples
        .iter()
        .zip(&decoded)
        .filter_map(|(s, d)| d.as_ref().map(|d| (s.id.as_str(), d)))
        .collect();
    let skipped: Vec<String> = corpus
        .samples
        .iter()
        .zip(&decoded)
        .filter(|(_, d)| d.is_none())
        .map(|(s, _)| s.id.clone())
        .collect();

    let mut members: BTreeMap<String, Vec<&str>> = BTreeMap::new();
    for s in &corpus.samples {
        members.entry(corpus.family_of(s)).or_default().push(&s.id);
    }
    let sizes: BTreeMap<String, usize> =
        members.iter().map(|(f, m)| (f.clone(), m.len())).collect();
    let size_list: Vec<usize> = sizes.values().copied().collect();
    let families = FamilyStats {
        count: sizes.len(),
        median: nearest_rank(&size_list, 50.0),
        p99: nearest_rank(&size_list, 99.0),
        sizes,
    };

    let mut by_kind: BTreeMap<String, Vec<KindPair>> = BTreeMap::new();
    for s in &corpus.samples {
        let Some(lin) = &s.lineage else { continue };
        let (Some(parent), Some(child)) =
            (images.get(lin.parent.as_str()), images.get(s.id.as_str()))
        else {
            continue;
        };
        let fraction = block_change_fraction(parent, child);
        let mut kinds = lin.kinds.clone();
        kinds.sort();
        kinds.dedup();
        for k in kinds {
            by_kind
                .entry(k.name().to_string())
                .or_default()
                .push(KindPair {
                    parent: lin.parent.clone(),
                    child: s.id.clone(),
                    fraction,
                });
        }
    }
    let block_change = by_kind
        .into_iter()
        .filter_map(|(k, pairs)| {
            let fr: Vec<f64> = pairs.iter().map(|p| p.fraction).collect();
            quartiles(&fr).map(|q| {
                (
                    k,
                    KindFractions {
                        pairs,
                        quartiles: q,
                    },
                )
            })
        })
        .collect();

    let mut pairwise = BTreeMap::new();
    for (fi, (family, ids)) in members.iter().enumerate() {
        let ids: Vec<&str> = ids
            .iter()
            .copied()
            .filter(|id| images.contains_key(id))
            .collect();
        if ids.len() < 2 {
            continue;
        }
        let all: Vec<(usize, usize)> = (0..ids.len())
            .flat_map(|i| (i + 1..ids.len()).map(move |j| (i, j)))
            .collect();
        let chosen: Vec<(usize, usize)> = if all.len() <= config.pair_cap {
            all
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(fi as u64);
            let mut idx = sample(&mut rng, all.len(), config.pair_cap).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| all[i]).collect()
        };
        let pairs: Vec<PairDiff> = chosen
            .par_iter()
            .filter_map(|&(i, j)| {
                let d = diff_images(images[ids[i]], images[ids[j]]).ok()?;
                Some(PairDiff {
                    a: ids[i].to_string(),
                    b: ids[j].to_string(),
                    byte_diff: d.byte_diff,
                    percent_diff: d.percent_diff,
                })
            })
            .collect();
        let pct: Vec<f64> = pairs.iter().map(|p| p.percent_diff).collect();
        if let Some(q) = quartiles(&pct) {
            pairwise.insert(
                family.clone(),
                PairwiseStats {
                    members: ids.len(),
                    pairs,
                    percent_diff: q,
                },
            );
        }
    }

    StatsReport {
        config,
        samples: corpus.len(),
        skipped,
        families,
        block_change,
        pairwise,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank_of_small_sets() {
        assert_eq!(nearest_rank(&[2, 4, 10], 50.0), 4);
        assert_eq!(nearest_rank(&[2, 4, 10], 99.0), 10);
        assert_eq!(nearest_rank(&[1], 50.0), 1);
        assert_eq!(nearest_rank(&[], 50.0), 0);
    }

    #[test]
    fn interpolated_quartiles() {
        let q = quartiles(&[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!(
            (q.min, q.q1, q.median, q.q3, q.max),
            (1.0, 1.75, 2.5, 3.25, 4.0)
        );
        assert!(quartiles(&[]).is_none());
    }
}
