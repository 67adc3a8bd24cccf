use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::asm::BinaryImage;
use crate::cluster::{cluster_corpus, drop_in_replace, ClusterError};
use crate::corpus::{Corpus, Sample};
use crate::textio::{elapsed_ns, ContainerError, Lineage, StageTimings};
use crate::transforms::{Mutator, TransformError, TransformKind};

use super::{
    mutation_iteration, select_params, should_emit, Budget, ChangeLedger, Iteration,
    MutationParams, ParamError, ParamHistory,
};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error(transparent)]
    Params(#[from] ParamError),
    #[error("sample `{id}`: {source}")]
    Container {
        id: String,
        #[source]
        source: ContainerError,
    },
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error("sample `{id}`: {source}")]
    Cluster {
        id: String,
        #[source]
        source: ClusterError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Budget,
    Target,
}

/// One emission of a representative, fanned out to its cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmissionRecord {
    pub representative: String,
    /// Chain number within the representative, from 0.
    pub chain: u32,
    /// Iterations into the chain.
    pub chain_iteration: u32,
    pub m: u32,
    pub c: f64,
    pub tau: f64,
    /// Weighted change of the emitted version since the original.
    pub total: f64,
    /// True when the change threshold was met, false for a random emission.
    pub separated: bool,
    pub samples: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub params: MutationParams,
    pub target: Option<usize>,
    pub samples: usize,
    /// Binaries that went through the mutation pipeline: one per cluster.
    pub pipeline_binaries: usize,
    pub skipped: Vec<(String, String)>,
    /// Mutation iterations performed.
    pub passes: u64,
    /// Iterations per representative.
    pub iterations: BTreeMap<String, u64>,
    pub emitted: usize,
    pub emissions: Vec<EmissionRecord>,
    pub attempted: BTreeMap<TransformKind, usize>,
    pub applied: BTreeMap<TransformKind, usize>,
    pub reverted: usize,
    pub revert_reasons: BTreeMap<String, usize>,
    pub history: ParamHistory,
    pub stop: StopReason,
    pub timings: StageTimings,
    pub warnings: Vec<String>,
}

impl RunReport {
    /// Largest difference between per-representative iteration counts.
    pub fn iteration_spread(&self) -> u64 {
        let max = self.iterations.values().max().copied().unwrap_or(0);
        let min = self.iterations.values().min().copied().unwrap_or(0);
        max - min
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    /// Newly generated samples in id order.
    pub emitted: Vec<Sample>,
    pub report: RunReport,
}

impl RunOutput {
    /// The input corpus plus everything emitted.
    pub fn augmented(&self, corpus: &Corpus) -> Corpus {
        let mut out = corpus.clone();
        out.extend(self.emitted.iter().cloned());
        out
    }
}

struct Member {
    sample: Sample,
    image: BinaryImage,
}

struct Chain {
    image: BinaryImage,
    ledger: ChangeLedger,
    m: u32,
    c: f64,
    done: u32,
    kinds: BTreeSet<TransformKind>,
}

struct Rep {
    id: String,
    key: String,
    original: BinaryImage,
    members: Vec<Member>,
    seed: u64,
    rng: ChaCha8Rng,
    tau: f64,
    chain: Chain,
    chains: u32,
    iterations: u64,
    emitted: u32,
}

impl Rep {
    fn start_chain(&mut self, history: &mut ParamHistory, params: &MutationParams) {
        let (m, c) = select_params(history.get(&self.id), params.m_range, &params.c_grid);
        history.record(&self.id, m, c);
        self.chain = Chain {
            image: self.original.clone(),
            ledger: ChangeLedger::default(),
            m,
            c,
            done: 0,
            kinds: BTreeSet::new(),
        };
    }
}

/// Seed of representative `index`'s private stream.
fn stream_seed(seed: u64, index: usize) -> u64 {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(index as u64);
    r.next_u64()
}

/// Runs the budgeted mutation loop with a chosen mutator and worker count.
#[derive(Debug, Clone, Default)]
pub struct Engine {
    pub mutator: Mutator,
    /// Worker threads; 0 or 1 runs sequentially.
    pub jobs: usize,
}

/// [`Engine::run`] with the built-in rules on one thread.
pub fn run_budget(
    corpus: &Corpus,
    params: &MutationParams,
    target: Option<usize>,
) -> Result<RunOutput, EngineError> {
    Engine::default().run(corpus, params, target)
}

impl Engine {
    /// Cycles through cluster representatives one iteration at a time until
    /// the budget or `target` emitted samples is reached. Each emission is
    /// fanned out to every member of the representative's cluster.
    pub fn run(
        &self,
        corpus: &Corpus,
        params: &MutationParams,
        target: Option<usize>,
    ) -> Result<RunOutput, EngineError> {
        params.validate()?;
        if corpus.is_empty() {
            return Err(EngineError::EmptyCorpus);
        }
        if self.jobs > 1 {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(self.jobs)
                .build()
                .expect("thread pool");
            pool.install(|| self.run_inner(corpus, params, target))
        } else {
            self.run_inner(corpus, params, target)
        }
    }

    fn run_inner(
        &self,
        corpus: &Corpus,
        params: &MutationParams,
        target: Option<usize>,
    ) -> Result<RunOutput, EngineError> {
        let started = Instant::now();
        let mut timings = StageTimings::default();
        let clusters = cluster_corpus(corpus);
        let mut warnings: Vec<String> = clusters
            .skipped
            .iter()
            .map(|(id, e)| format!("skipped `{id}`: {e}"))
            .collect();

        let t = Instant::now();
        let mut history = ParamHistory::default();
        let mut reps = Vec::with_capacity(clusters.len());
        for (index, cl) in clusters.clusters.iter().enumerate() {
            let mut members = Vec::with_capacity(cl.members.len());
            for id in &cl.members {
                let sample = corpus
                    .get(id)
                    .expect("clustered ids come from the corpus")
                    .clone();
                let image = sample.decode().map_err(|source| EngineError::Container {
                    id: id.clone(),
                    source,
                })?;
                members.push(Member { sample, image });
            }
            let original = members[0].image.clone();
            let seed = stream_seed(params.seed, index);
            let mut rep = Rep {
                id: cl.representative().to_string(),
                key: cl.key.clone(),
                tau: params.tau_for(original.block_count()),
                chain: Chain {
                    image: original.clone(),
                    ledger: ChangeLedger::default(),
                    m: 0,
                    c: 0.0,
                    done: 0,
                    kinds: BTreeSet::new(),
                },
                original,
                members,
                seed,
                rng: ChaCha8Rng::seed_from_u64(seed),
                chains: 0,
                iterations: 0,
                emitted: 0,
            };
            rep.start_chain(&mut history, params);
            reps.push(rep);
        }
        timings.decompile_ns += elapsed_ns(t);

        let mut used_ids: HashSet<String> = corpus.samples.iter().map(|s| s.id.clone()).collect();
        let mut emitted: Vec<Sample> = Vec::new();
        let mut emissions = Vec::new();
        let mut attempted = BTreeMap::new();
        let mut applied = BTreeMap::new();
        let mut reverted = 0;
        let mut revert_reasons = BTreeMap::new();
        let mut passes = 0u64;
        let mut stop = StopReason::Budget;
        let batch = if self.jobs > 1 { reps.len().max(1) } else { 1 };

        'run: loop {
            if reps.is_empty() {
                break;
            }
            let mut start = 0;
            while start < reps.len() {
                let remaining = match params.budget {
                    Budget::Passes(b) => b.saturating_sub(passes),
                    Budget::WallClock(d) => {
                        if started.elapsed() >= d {
                            0
                        } else {
                            u64::MAX
                        }
                    }
                };
                if remaining == 0 {
                    break 'run;
                }
                let end = (start + batch)
                    .min(reps.len())
                    .min(start.saturating_add(remaining as usize));
                let t = Instant::now();
                let results: Vec<Result<Iteration, TransformError>> = if end - start > 1 {
                    reps[start..end]
                        .par_iter_mut()
                        .map(|rep| self.iterate(rep, params))
                        .collect()
                } else {
                    reps[start..end]
                        .iter_mut()
                        .map(|rep| self.iterate(rep, params))
                        .collect()
                };
                timings.mutate_ns += elapsed_ns(t);

                for (offset, result) in results.into_iter().enumerate() {
                    let rep = &mut reps[start + offset];
                    let it = result?;
                    passes += 1;
                    rep.iterations += 1;
                    for (k, n) in &it.attempted {
                        *attempted.entry(*k).or_insert(0usize) += n;
                    }
                    for (k, n) in &it.applied {
                        *applied.entry(*k).or_insert(0usize) += n;
                    }
                    reverted += it.reverted;
                    for (r, n) in &it.revert_reasons {
                        *revert_reasons.entry(r.clone()).or_insert(0usize) += n;
                    }
                    rep.chain.kinds.extend(it.applied_kinds());
                    rep.chain.ledger.record(it.delta);
                    rep.chain.image = it.image;
                    rep.chain.done += 1;

                    let emit = should_emit(
                        &rep.chain.ledger,
                        rep.tau,
                        params.random_emit_probability,
                        &mut rep.rng,
                    );
                    let last = rep.chain.ledger.emissions.last().copied().unwrap_or(0.0);
                    if emit && rep.chain.ledger.total > last {
                        let t = Instant::now();
                        let room = target.map_or(usize::MAX, |n| n.saturating_sub(emitted.len()));
                        let (samples, record) = emit_version(rep, &mut used_ids, room)?;
                        emitted.extend(samples);
                        emissions.push(record);
                        timings.reassemble_ns += elapsed_ns(t);
                    }
                    if rep.chain.done >= rep.chain.m {
                        rep.chains += 1;
                        rep.start_chain(&mut history, params);
                    }
                    if target.is_some_and(|n| emitted.len() >= n) {
                        stop = StopReason::Target;
                        break 'run;
                    }
                }
                start = end;
            }
        }

        if emitted.is_empty() {
            warnings.push("budget exhausted before any emission".into());
        }
        emitted.sort_by(|a, b| a.id.cmp(&b.id));
        let report = RunReport {
            params: params.clone(),
            target,
            samples: corpus.len(),
            pipeline_binaries: reps.len(),
            skipped: clusters.skipped.clone(),
            passes,
            iterations: reps.iter().map(|r| (r.id.clone(), r.iterations)).collect(),
            emitted: emitted.len(),
            emissions,
            attempted,
            applied,
            reverted,
            revert_reasons,
            history,
            stop,
            timings,
            warnings,
        };
        Ok(RunOutput { emitted, report })
    }

    fn iterate(&self, rep: &mut Rep, params: &MutationParams) -> Result<Iteration, TransformError> {
        mutation_iteration(
            &rep.chain.image,
            rep.chain.c,
            &mut rep.rng,
            &self.mutator,
            params,
        )
    }
}

/// Marks the chain's current version emitted and builds one sample per
/// cluster member, at most `room` of them.
fn emit_version(
    rep: &mut Rep,
    used_ids: &mut HashSet<String>,
    room: usize,
) -> Result<(Vec<Sample>, EmissionRecord), EngineError> {
    let separated = rep.chain.ledger.separated(rep.tau);
    rep.chain.ledger.mark_emitted();
    rep.emitted += 1;
    let kinds: Vec<TransformKind> = rep.chain.kinds.iter().copied().collect();
    let mut samples = Vec::new();
    for member in rep.members.iter().take(room) {
        let image =
            drop_in_replace(&rep.chain.image, &rep.key, &member.image).map_err(|source| {
                EngineError::Cluster {
                    id: member.sample.id.clone(),
                    source,
                }
            })?;
        let mut id = format!("{}-v{:04}", member.sample.id, rep.emitted);
        while used_ids.contains(&id) {
            id.push('x');
        }
        used_ids.insert(id.clone());
        let lineage = Lineage {
            parent: member.sample.id.clone(),
            kinds: kinds.clone(),
            seed: rep.seed,
            iteration: rep.iterations,
        };
        let sample = Sample::from_image(
            id,
            &image,
            member.sample.label,
            member.sample.family.clone(),
            Some(lineage),
        )
        .map_err(|source| EngineError::Container {
            id: member.sample.id.clone(),
            source,
        })?;
        samples.push(sample);
    }
    let record = EmissionRecord {
        representative: rep.id.clone(),
        chain: rep.chains,
        chain_iteration: rep.chain.done,
        m: rep.chain.m,
        c: rep.chain.c,
        tau: rep.tau,
        total: rep.chain.ledger.total,
        separated,
        samples: samples.iter().map(|s| s.id.clone()).collect(),
    };
    Ok((samples, record))
}
