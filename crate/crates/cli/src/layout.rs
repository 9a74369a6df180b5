//! On-disk layout of a run directory and the index files that tie it
//! together.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use densal_core::experiment::{CorpusConfig, CorpusSplit};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::failure::MissingPrerequisite;

#[derive(Debug, Clone)]
pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn corpus_dir(&self) -> PathBuf {
        self.root.join("corpus")
    }

    pub fn corpus_index(&self) -> PathBuf {
        self.corpus_dir().join("corpus.json")
    }

    pub fn labelled_rel(block: u64) -> PathBuf {
        PathBuf::from("labelled").join(format!("block_{block:04}"))
    }

    pub fn trees_rel() -> PathBuf {
        PathBuf::from("labelled").join("trees.csv")
    }

    pub fn shard_rel(shard: u32) -> PathBuf {
        PathBuf::from("shards").join(format!("shard_{shard:03}"))
    }

    pub fn shard_manifest(&self, shard: u32) -> PathBuf {
        self.corpus_dir().join(Self::shard_rel(shard)).join("manifest.json")
    }

    pub fn member(&self, i: usize) -> PathBuf {
        self.root.join("models").join(format!("member_{i:02}.pmdl"))
    }

    pub fn stats(&self, shard: u32) -> PathBuf {
        self.root.join("stats").join(format!("shard_{shard:03}.jsonl"))
    }

    pub fn embeddings(&self, shard: u32) -> PathBuf {
        self.root.join("embeddings").join(format!("shard_{shard:03}.pemb"))
    }

    pub fn globals(&self) -> PathBuf {
        self.root.join("globals.json")
    }

    pub fn scores(&self) -> PathBuf {
        self.root.join("scores.csv")
    }

    pub fn selection(&self) -> PathBuf {
        self.root.join("selection.jsonl")
    }

    pub fn selection_summary(&self) -> PathBuf {
        self.root.join("selection_summary.txt")
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.root.join("eval")
    }

    pub fn bench_dir(&self) -> PathBuf {
        self.root.join("bench")
    }
}

pub fn block_name(block: u64) -> String {
    format!("block_{block:04}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Train,
    Validation,
    Pool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockEntry {
    pub id: u64,
    pub domain: usize,
    pub role: Role,
    /// Scene manifest, relative to the corpus directory.
    pub manifest: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shard: Option<u32>,
}

/// `corpus/corpus.json`: what `generate` wrote and the digest over it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusIndex {
    pub config: CorpusConfig,
    pub shards: u32,
    pub region_side: usize,
    pub regions_per_block: u64,
    pub split: CorpusSplit,
    pub blocks: Vec<BlockEntry>,
    /// Files covered by the digest, relative to the corpus directory.
    pub files: Vec<PathBuf>,
    pub digest: String,
}

impl CorpusIndex {
    pub fn block(&self, id: u64) -> Option<&BlockEntry> {
        self.blocks.iter().find(|b| b.id == id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileEntry {
    pub block_id: u64,
    pub first_region_id: u64,
    /// Scene manifest, relative to the shard directory.
    pub manifest: PathBuf,
}

/// `corpus/shards/shard_NNN/manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShardManifest {
    pub shard_id: u32,
    pub tiles: Vec<TileEntry>,
}

/// Writes `path` through a temporary sibling and a rename, creating parent
/// directories as needed.
pub fn write_atomic<F>(path: &Path, body: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<File>) -> Result<()>,
{
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut w = BufWriter::new(File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?);
        body(&mut w)?;
        w.flush()?;
    }
    fs::rename(&tmp, path).with_context(|| format!("renaming {}", tmp.display()))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        w.write_all(b"\n")?;
        Ok(())
    })
}

/// Opens an artifact produced by an earlier command.
pub fn open_prerequisite(path: &Path, producer: &str) -> Result<BufReader<File>> {
    match File::open(path) {
        Ok(f) => Ok(BufReader::new(f)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            Err(MissingPrerequisite(format!("{} (run `densal {producer}` first)", path.display())).into())
        }
        Err(e) => Err(e).with_context(|| format!("opening {}", path.display())),
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path, producer: &str) -> Result<T> {
    let r = open_prerequisite(path, producer)?;
    serde_json::from_reader(r).with_context(|| format!("parsing {}", path.display()))
}

/// SHA-256 over the listed files, each contributing its relative path and
/// its bytes, in list order.
pub fn digest_files(base: &Path, files: &[PathBuf]) -> Result<String> {
    let mut h = Sha256::new();
    for rel in files {
        let bytes = fs::read(base.join(rel)).with_context(|| format!("reading {}", rel.display()))?;
        let name = rel.to_string_lossy().replace('\\', "/");
        h.update((name.len() as u64).to_le_bytes());
        h.update(name.as_bytes());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_depends_on_names_and_bytes() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a"), b"xy").unwrap();
        fs::write(dir.path().join("b"), b"xy").unwrap();
        let da = digest_files(dir.path(), &[PathBuf::from("a")]).unwrap();
        let db = digest_files(dir.path(), &[PathBuf::from("b")]).unwrap();
        assert_ne!(da, db);
        assert_eq!(da.len(), 64);
        assert_eq!(da, digest_files(dir.path(), &[PathBuf::from("a")]).unwrap());
    }

    #[test]
    fn missing_prerequisite_is_typed() {
        let err = open_prerequisite(Path::new("/nonexistent/x.json"), "reduce").unwrap_err();
        assert!(err.downcast_ref::<MissingPrerequisite>().is_some());
    }

    #[test]
    fn atomic_write_leaves_no_temp_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/out.json");
        write_json(&p, &vec![1, 2, 3]).unwrap();
        assert!(p.exists());
        assert!(!dir.path().join("sub/out.json.tmp").exists());
    }
}
