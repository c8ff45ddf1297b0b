//! Dataset directories.
//!
//! ```text
//! <dir>/categories.txt       one name per line
//! <dir>/embeddings.txt       word v1 … vd
//! <dir>/<split>.ann          id<TAB>name,name
//! <dir>/<split>.manifest     split <name>, then id<TAB>path<TAB>index,index
//! <dir>/features/<id>.fmap
//! ```

use std::path::{Path, PathBuf};

use ssgrl_core::cooccurrence::AnnotationSet;
use ssgrl_core::decoupling::EmbeddingTable;
use ssgrl_core::optim::Sample;

use crate::error::{display_name, read_to_string, write_file, Error, Result};
use crate::{fmap, text};

pub const TRAIN: &str = "train";
pub const TEST: &str = "test";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    /// Relative to the dataset directory.
    pub path: PathBuf,
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub split: String,
    pub categories: Vec<String>,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn render(&self) -> String {
        let mut out = format!("split {}\n", self.split);
        for e in &self.entries {
            let labels: Vec<String> = e.labels.iter().map(usize::to_string).collect();
            out.push_str(&format!(
                "{}\t{}\t{}\n",
                e.id,
                e.path.display(),
                labels.join(",")
            ));
        }
        out
    }

    /// Parses a manifest against a known category list. Paths are not
    /// checked here; see [`load_split`].
    pub fn parse(text: &str, file: &str, categories: &[String]) -> Result<Manifest> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let split = match lines.next() {
            Some((_, l)) => l
                .strip_prefix("split ")
                .map(str::trim)
                .filter(|s| !s.is_empty()),
            None => None,
        }
        .ok_or_else(|| Error::Parse {
            file: file.into(),
            line: 1,
            msg: "expected `split <name>`".into(),
        })?
        .to_string();
        let c = categories.len();
        let mut entries: Vec<ManifestEntry> = Vec::new();
        for (i, line) in lines {
            let n = i + 1;
            let parse_err = |msg: String| Error::Parse {
                file: file.into(),
                line: n,
                msg,
            };
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(parse_err(format!(
                    "expected 3 tab-separated fields, found {}",
                    fields.len()
                )));
            }
            let id = fields[0].trim();
            if id.is_empty() {
                return Err(parse_err("empty sample id".into()));
            }
            if entries.iter().any(|e| e.id == id) {
                return Err(parse_err(format!("duplicate sample id `{id}`")));
            }
            let mut labels = Vec::new();
            for tok in fields[2]
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
            {
                let l: usize = tok
                    .parse()
                    .map_err(|_| parse_err(format!("`{tok}` is not a label index")))?;
                if l >= c {
                    return Err(parse_err(format!(
                        "label index {l} out of range for {c} categories"
                    )));
                }
                labels.push(l);
            }
            labels.sort_unstable();
            labels.dedup();
            entries.push(ManifestEntry {
                id: id.to_string(),
                path: PathBuf::from(fields[1].trim()),
                labels,
            });
        }
        Ok(Manifest {
            split,
            categories: categories.to_vec(),
            entries,
        })
    }

    pub fn annotations(&self) -> Result<AnnotationSet> {
        let mut set = AnnotationSet::new(self.categories.clone());
        for e in &self.entries {
            set.push(&e.id, &e.labels)?;
        }
        Ok(set)
    }
}

/// Annotation set of in-memory samples.
pub fn annotations_of(categories: &[String], samples: &[Sample]) -> Result<AnnotationSet> {
    let mut set = AnnotationSet::new(categories.to_vec());
    for s in samples {
        set.push(&s.id, &label_indices(&s.labels))?;
    }
    Ok(set)
}

pub fn label_indices(labels: &[bool]) -> Vec<usize> {
    labels
        .iter()
        .enumerate()
        .filter(|(_, &y)| y)
        .map(|(i, _)| i)
        .collect()
}

pub fn categories_path(dir: &Path) -> PathBuf {
    dir.join("categories.txt")
}

pub fn embeddings_path(dir: &Path) -> PathBuf {
    dir.join("embeddings.txt")
}

pub fn manifest_path(dir: &Path, split: &str) -> PathBuf {
    dir.join(format!("{split}.manifest"))
}

pub fn annotations_path(dir: &Path, split: &str) -> PathBuf {
    dir.join(format!("{split}.ann"))
}

pub fn feature_path(id: &str) -> PathBuf {
    Path::new("features").join(format!("{id}.fmap"))
}

pub fn read_manifest(dir: &Path, split: &str, categories: &[String]) -> Result<Manifest> {
    let path = manifest_path(dir, split);
    let m = Manifest::parse(&read_to_string(&path)?, &display_name(&path), categories)?;
    if m.split != split {
        return Err(Error::Format {
            file: display_name(&path),
            msg: format!("manifest is for split `{}`, expected `{split}`", m.split),
        });
    }
    Ok(m)
}

/// Loads every feature map referenced by a split's manifest.
pub fn load_split(dir: &Path, split: &str, categories: &[String]) -> Result<Vec<Sample>> {
    let manifest = read_manifest(dir, split, categories)?;
    let c = categories.len();
    manifest
        .entries
        .iter()
        .map(|e| {
            let path = dir.join(&e.path);
            if !path.is_file() {
                return Err(Error::Validation(format!(
                    "sample `{}`: feature map {} not found",
                    e.id,
                    path.display()
                )));
            }
            let mut labels = vec![false; c];
            e.labels.iter().for_each(|&l| labels[l] = true);
            Ok(Sample {
                id: e.id.clone(),
                features: fmap::read(&path)?,
                labels,
            })
        })
        .collect()
}

/// Category list, embeddings and the training annotations of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetInfo {
    pub categories: Vec<String>,
    pub embeddings: EmbeddingTable,
    pub train_annotations: AnnotationSet,
}

pub fn load_info(dir: &Path) -> Result<DatasetInfo> {
    let categories = text::read_categories(&categories_path(dir))?;
    let embeddings = text::read_embeddings(&embeddings_path(dir), &categories)?;
    let train_annotations = read_manifest(dir, TRAIN, &categories)?.annotations()?;
    Ok(DatasetInfo {
        categories,
        embeddings,
        train_annotations,
    })
}

/// Writes a split: manifest, annotation file and one feature map per sample.
pub fn write_split(
    dir: &Path,
    split: &str,
    categories: &[String],
    samples: &[Sample],
) -> Result<()> {
    let mut manifest = Manifest {
        split: split.to_string(),
        categories: categories.to_vec(),
        entries: Vec::with_capacity(samples.len()),
    };
    for s in samples {
        let rel = feature_path(&s.id);
        fmap::write(&dir.join(&rel), &s.features)?;
        manifest.entries.push(ManifestEntry {
            id: s.id.clone(),
            path: rel,
            labels: label_indices(&s.labels),
        });
    }
    write_file(&manifest_path(dir, split), manifest.render())?;
    write_file(
        &annotations_path(dir, split),
        text::render_annotations(&manifest.annotations()?),
    )
}
