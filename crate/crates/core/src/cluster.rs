//! Exact code-section clustering and drop-in replacement of mutated text.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::asm::{relayout, BinaryImage, ImageError};
use crate::corpus::Corpus;
use crate::textio::emit_text_section;

/// SHA-256 of the canonical text section (entry point included), hex.
pub fn text_key(image: &BinaryImage) -> String {
    let mut h = Sha256::new();
    h.update(b".entry ");
    h.update(image.entry.as_bytes());
    h.update(b"\n");
    h.update(emit_text_section(image).as_bytes());
    hex::encode(h.finalize())
}

/// Samples sharing one text section.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cluster {
    pub key: String,
    /// Sample ids in ascending order; the first is the representative.
    pub members: Vec<String>,
}

impl Cluster {
    pub fn representative(&self) -> &str {
        &self.members[0]
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterSet {
    /// Ordered by representative id.
    pub clusters: Vec<Cluster>,
    /// Samples that failed to decode, with the reason.
    pub skipped: Vec<(String, String)>,
}

impl ClusterSet {
    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn cluster_of(&self, id: &str) -> Option<&Cluster> {
        self.clusters
            .iter()
            .find(|c| c.members.iter().any(|m| m == id))
    }

    pub fn report(&self) -> ClusterReport {
        ClusterReport {
            samples: self.clusters.iter().map(|c| c.members.len()).sum(),
            clusters: self.clusters.len(),
            entries: self
                .clusters
                .iter()
                .map(|c| ClusterEntry {
                    key: c.key.clone(),
                    size: c.members.len(),
                    representative: c.representative().to_string(),
                })
                .collect(),
            skipped: self.skipped.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterEntry {
    pub key: String,
    pub size: usize,
    pub representative: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterReport {
    /// Samples placed in clusters.
    pub samples: usize,
    pub clusters: usize,
    pub entries: Vec<ClusterEntry>,
    pub skipped: Vec<(String, String)>,
}

/// Partitions the corpus by [`text_key`].
pub fn cluster_corpus(corpus: &Corpus) -> ClusterSet {
    let mut by_key: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut skipped = Vec::new();
    for s in &corpus.samples {
        match s.decode() {
            Ok(img) => by_key.entry(text_key(&img)).or_default().push(s.id.clone()),
            Err(e) => skipped.push((s.id.clone(), e.to_string())),
        }
    }
    let mut clusters: Vec<Cluster> = by_key
        .into_iter()
        .map(|(key, mut members)| {
            members.sort();
            Cluster { key, members }
        })
        .collect();
    clusters.sort_by(|a, b| a.members[0].cmp(&b.members[0]));
    ClusterSet { clusters, skipped }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClusterError {
    #[error("member text key {found} differs from cluster key {expected}")]
    KeyMismatch { expected: String, found: String },
    #[error("replacement is invalid: {0}")]
    Invalid(#[from] ImageError),
}

/// `member` with its text section replaced by `mutated`'s. Refused unless
/// `member`'s text key is `original_key`, the key of the representative
/// before mutation.
pub fn drop_in_replace(
    mutated: &BinaryImage,
    original_key: &str,
    member: &BinaryImage,
) -> Result<BinaryImage, ClusterError> {
    let found = text_key(member);
    if found != original_key {
        return Err(ClusterError::KeyMismatch {
            expected: original_key.to_string(),
            found,
        });
    }
    let mut out = member.clone();
    out.entry = mutated.entry.clone();
    out.functions = mutated.functions.clone();
    let out = relayout(&out);
    out.validate()?;
    Ok(out)
}
