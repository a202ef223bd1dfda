use std::fmt;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use kgdial::cooccur::{CooccurrenceMatrix, RelationStrengthMatrix};
use kgdial::{Dialogue, EmbeddingMatrix, KnowledgeGraph, Vocabulary};

use crate::config::Variant;

/// A file an earlier stage should have produced.
#[derive(Debug)]
pub struct MissingArtifact {
    pub path: PathBuf,
    pub producer: &'static str,
}

impl fmt::Display for MissingArtifact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "missing artifact {} (run `kgdl {}` first)",
            self.path.display(),
            self.producer
        )
    }
}

impl std::error::Error for MissingArtifact {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        Split::ALL.into_iter().find(|x| x.name() == s)
    }
}

/// Which word vectors a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingKind {
    Glove,
    Joint,
}

impl EmbeddingKind {
    pub fn of(variant: Variant) -> Self {
        if variant.joint_embeddings() {
            EmbeddingKind::Joint
        } else {
            EmbeddingKind::Glove
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EmbeddingKind::Glove => "glove",
            EmbeddingKind::Joint => "je",
        }
    }
}

/// File layout of the artifact directory.
#[derive(Debug, Clone)]
pub struct Artifacts {
    root: PathBuf,
}

impl Artifacts {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Artifacts { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn ensure_dir(&self) -> anyhow::Result<()> {
        fs::create_dir_all(&self.root).with_context(|| format!("creating {}", self.root.display()))
    }

    pub fn vocab(&self) -> PathBuf {
        self.root.join("vocab.tsv")
    }
    pub fn kg_json(&self) -> PathBuf {
        self.root.join("kg.json")
    }
    pub fn kg_tsv(&self) -> PathBuf {
        self.root.join("kg.tsv")
    }
    pub fn dialogues(&self, split: Split) -> PathBuf {
        self.root.join(format!("dialogues_{}.jsonl", split.name()))
    }
    pub fn stats(&self) -> PathBuf {
        self.root.join("stats.json")
    }
    pub fn cooccur(&self) -> PathBuf {
        self.root.join("cooccur.txt")
    }
    pub fn relation(&self) -> PathBuf {
        self.root.join("relation.txt")
    }
    pub fn embeddings(&self, kind: EmbeddingKind) -> PathBuf {
        self.root.join(format!("embeddings_{}.txt", kind.name()))
    }
    pub fn biases(&self, kind: EmbeddingKind) -> PathBuf {
        self.root.join(format!("embeddings_{}.bias", kind.name()))
    }
    pub fn embedding_log(&self, kind: EmbeddingKind) -> PathBuf {
        self.root.join(format!("embed_log_{}.csv", kind.name()))
    }
    pub fn model(&self, variant: Variant) -> PathBuf {
        self.root.join(format!("model_{}.kgdl", variant.slug()))
    }
    pub fn train_log(&self, variant: Variant) -> PathBuf {
        self.root.join(format!("train_log_{}.csv", variant.slug()))
    }
    pub fn report(&self, variant: Variant, kvl: bool) -> PathBuf {
        self.root.join(format!("report_{}_{}.json", variant.slug(), kvl_suffix(kvl)))
    }
    pub fn decisions(&self, variant: Variant) -> PathBuf {
        self.root.join(format!("kvl_decisions_{}.jsonl", variant.slug()))
    }
    pub fn ablation_json(&self) -> PathBuf {
        self.root.join("ablation.json")
    }
    pub fn ablation_txt(&self) -> PathBuf {
        self.root.join("ablation.txt")
    }

    /// Opens an artifact, mapping absence to [`MissingArtifact`].
    pub fn open(&self, path: &Path, producer: &'static str) -> anyhow::Result<BufReader<File>> {
        match File::open(path) {
            Ok(f) => Ok(BufReader::new(f)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(MissingArtifact {
                path: path.to_path_buf(),
                producer,
            }
            .into()),
            Err(e) => Err(e).with_context(|| format!("opening {}", path.display())),
        }
    }

    pub fn require(&self, path: &Path, producer: &'static str) -> anyhow::Result<()> {
        if path.is_file() {
            Ok(())
        } else {
            Err(MissingArtifact {
                path: path.to_path_buf(),
                producer,
            }
            .into())
        }
    }

    pub fn load_vocab(&self) -> anyhow::Result<Vocabulary> {
        let path = self.vocab();
        let r = self.open(&path, "preprocess")?;
        Vocabulary::read_tsv(r).with_context(|| format!("reading {}", path.display()))
    }

    pub fn load_kg(&self) -> anyhow::Result<KnowledgeGraph> {
        let path = self.kg_json();
        let r = self.open(&path, "preprocess")?;
        serde_json::from_reader(r).with_context(|| format!("reading {}", path.display()))
    }

    /// Dialogues of a split, or `None` when preprocessing did not see it.
    pub fn load_dialogues(&self, split: Split) -> anyhow::Result<Option<Vec<Dialogue>>> {
        let path = self.dialogues(split);
        if !path.exists() {
            if split == Split::Train {
                self.require(&path, "preprocess")?;
            }
            return Ok(None);
        }
        let r = self.open(&path, "preprocess")?;
        let mut out = Vec::new();
        for (k, line) in r.lines().enumerate() {
            let line = line.with_context(|| format!("reading {}", path.display()))?;
            let d: Dialogue = serde_json::from_str(&line)
                .with_context(|| format!("{}:{}: malformed dialogue", path.display(), k + 1))?;
            out.push(d);
        }
        Ok(Some(out))
    }

    pub fn load_cooccur(&self) -> anyhow::Result<CooccurrenceMatrix> {
        let path = self.cooccur();
        let r = self.open(&path, "cooccur")?;
        CooccurrenceMatrix::read_text(r).with_context(|| format!("reading {}", path.display()))
    }

    pub fn load_relation(&self) -> anyhow::Result<RelationStrengthMatrix> {
        let path = self.relation();
        let r = self.open(&path, "cooccur")?;
        RelationStrengthMatrix::read_text(r).with_context(|| format!("reading {}", path.display()))
    }

    pub fn load_embeddings(&self, kind: EmbeddingKind, vocab: &Vocabulary) -> anyhow::Result<EmbeddingMatrix> {
        let path = self.embeddings(kind);
        let r = self.open(&path, "train-embeddings")?;
        EmbeddingMatrix::read_text(vocab, r).with_context(|| format!("reading {}", path.display()))
    }
}

fn kvl_suffix(kvl: bool) -> &'static str {
    if kvl {
        "kvl"
    } else {
        "nokvl"
    }
}

/// Writes a file through a buffered writer, attaching the path to errors.
pub fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> anyhow::Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    f(&mut w)
        .and_then(|_| w.flush())
        .with_context(|| format!("writing {}", path.display()))
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    write_file(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w)
    })
}
