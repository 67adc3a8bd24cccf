//! Labeled samples, the on-disk manifest, and corpus statistics.

mod diff;
mod stats;

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::asm::BinaryImage;
use crate::textio::{decode_container, encode_container, ContainerError, Label, Lineage};

pub use diff::{block_change_fraction, diff, diff_images, payload, DiffReport};
pub use stats::{
    corpus_stats, nearest_rank, quartiles, FamilyStats, KindFractions, KindPair, PairDiff,
    PairwiseStats, Quartiles, StatsConfig, StatsReport,
};

/// Directory, relative to the manifest, holding container files.
pub const SAMPLES_DIR: &str = "samples";
/// File extension of container files.
pub const CONTAINER_EXT: &str = "mrvb";

/// One labeled program in container form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub id: String,
    pub bytes: Vec<u8>,
    pub label: Label,
    pub family: Option<String>,
    pub lineage: Option<Lineage>,
}

impl Sample {
    /// Encodes `image` into a new sample.
    pub fn from_image(
        id: impl Into<String>,
        image: &BinaryImage,
        label: Label,
        family: Option<String>,
        lineage: Option<Lineage>,
    ) -> Result<Sample, ContainerError> {
        let bytes = encode_container(image, label, lineage.as_ref())?;
        Ok(Sample {
            id: id.into(),
            bytes,
            label,
            family,
            lineage,
        })
    }

    pub fn decode(&self) -> Result<BinaryImage, ContainerError> {
        decode_container(&self.bytes).map(|(img, _, _)| img)
    }

    /// SHA-256 of the container bytes, lowercase hex.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(&self.bytes))
    }
}

/// A set of samples ordered by id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    pub samples: Vec<Sample>,
}

impl Corpus {
    /// Builds a corpus, sorting samples by id.
    pub fn new(mut samples: Vec<Sample>) -> Self {
        samples.sort_by(|a, b| a.id.cmp(&b.id));
        Corpus { samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Sample> {
        self.samples
            .binary_search_by(|s| s.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.samples[i])
    }

    /// Adds samples and restores id order.
    pub fn extend(&mut self, more: impl IntoIterator<Item = Sample>) {
        self.samples.extend(more);
        self.samples.sort_by(|a, b| a.id.cmp(&b.id));
    }

    /// Family of a sample: its `family` field, else the id of its root
    /// ancestor.
    pub fn family_of(&self, sample: &Sample) -> String {
        if let Some(f) = &sample.family {
            return f.clone();
        }
        let mut current = sample;
        let mut seen = HashSet::new();
        while let Some(lin) = &current.lineage {
            if !seen.insert(current.id.as_str()) {
                break;
            }
            match self.get(&lin.parent) {
                Some(p) => {
                    if let Some(f) = &p.family {
                        return f.clone();
                    }
                    current = p;
                }
                None => return lin.parent.clone(),
            }
        }
        current.id.clone()
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Manifest {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("sample `{id}`: digest mismatch (recorded {recorded}, found {found})")]
    DigestMismatch {
        id: String,
        recorded: String,
        found: String,
    },
    #[error("sample `{id}`: label {recorded} in manifest but {found} in container")]
    LabelMismatch {
        id: String,
        recorded: Label,
        found: Label,
    },
    #[error("duplicate sample id `{0}`")]
    DuplicateId(String),
    #[error("invalid sample id `{0}`")]
    InvalidId(String),
    #[error("sample `{id}`: {source}")]
    Container {
        id: String,
        #[source]
        source: ContainerError,
    },
}

/// One manifest line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub path: String,
    pub digest: String,
    pub label: Label,
    #[serde(default)]
    pub family: Option<String>,
    #[serde(default)]
    pub lineage: Option<Lineage>,
}

/// Ids become file names, so they are restricted to a portable alphabet.
pub fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && !id.starts_with('.')
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Reads a JSONL manifest and the containers it references. Samples come
/// back sorted by id whatever the line order on disk.
pub fn load_manifest(path: &Path) -> Result<Corpus, CorpusError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut samples = Vec::new();
    let mut ids = HashSet::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ManifestRecord =
            serde_json::from_str(&line).map_err(|e| CorpusError::Manifest {
                path: path.to_path_buf(),
                line: n + 1,
                message: e.to_string(),
            })?;
        if !valid_id(&rec.id) {
            return Err(CorpusError::InvalidId(rec.id));
        }
        if !ids.insert(rec.id.clone()) {
            return Err(CorpusError::DuplicateId(rec.id));
        }
        let file = base.join(&rec.path);
        let bytes = fs::read(&file).map_err(io_err(&file))?;
        let sample = Sample {
            id: rec.id,
            bytes,
            label: rec.label,
            family: rec.family,
            lineage: rec.lineage,
        };
        let found = sample.digest();
        if found != rec.digest {
            return Err(CorpusError::DigestMismatch {
                id: sample.id,
                recorded: rec.digest,
                found,
            });
        }
        samples.push(sample);
    }
    Ok(Corpus::new(samples))
}

/// Relative path of a sample's container inside a corpus directory.
pub fn sample_path(id: &str) -> String {
    format!("{SAMPLES_DIR}/{id}.{CONTAINER_EXT}")
}

/// Writes containers under `samples/` beside the manifest and the manifest
/// itself, one record per line in id order.
pub fn save_manifest(corpus: &Corpus, path: &Path) -> Result<(), CorpusError> {
    let base = path.parent().unwrap_or(Path::new("."));
    let dir = base.join(SAMPLES_DIR);
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let mut out = Vec::new();
    let mut ids = HashSet::new();
    for s in &corpus.samples {
        if !valid_id(&s.id) {
            return Err(CorpusError::InvalidId(s.id.clone()));
        }
        if !ids.insert(s.id.as_str()) {
            return Err(CorpusError::DuplicateId(s.id.clone()));
        }
        let rel = sample_path(&s.id);
        let file = base.join(&rel);
        fs::write(&file, &s.bytes).map_err(io_err(&file))?;
        let rec = ManifestRecord {
            id: s.id.clone(),
            path: rel,
            digest: s.digest(),
            label: s.label,
            family: s.family.clone(),
            lineage: s.lineage.clone(),
        };
        serde_json::to_writer(&mut out, &rec).expect("manifest records serialize");
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(&out).map_err(io_err(path))?;
    Ok(())
}

/// Checks that each sample's container decodes and carries the manifest label.
pub fn check_labels(corpus: &Corpus) -> Result<(), CorpusError> {
    for s in &corpus.samples {
        let (_, label, _) =
            decode_container(&s.bytes).map_err(|source| CorpusError::Container {
                id: s.id.clone(),
                source,
            })?;
        if label != s.label {
            return Err(CorpusError::LabelMismatch {
                id: s.id.clone(),
                recorded: s.label,
                found: label,
            });
        }
    }
    Ok(())
}
