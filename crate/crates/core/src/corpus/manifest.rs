//! Data manifest, the loaded corpus container and corpus statistics.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::corpus::{
    build_label_vocabulary, extract_relation_instances, load_corpus_file, AnnotatedSentence,
    DomainId, LabelVocabulary, RelationInstance, Split, ValidationOptions,
};
use crate::error::{Error, Result};

/// One file group of the corpus: a named source (a domain, or the news
/// extension) with one file per split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestSource {
    pub name: String,
    pub domain: DomainId,
    pub train: PathBuf,
    pub dev: PathBuf,
    pub test: PathBuf,
}

impl ManifestSource {
    pub fn path(&self, split: Split) -> &Path {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }
}

/// Maps (source, split) to corpus files. Either written by hand as JSON or
/// discovered from a directory following the released `<domain>-<split>.json`
/// layout (subdirectories one level deep are scanned too, which is where the
/// news extension lives).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub root: Option<PathBuf>,
    pub sources: Vec<ManifestSource>,
}

impl Manifest {
    /// Reads a manifest from a JSON file, or discovers one from a directory.
    pub fn from_path(path: impl AsRef<Path>) -> Result<Manifest> {
        let path = path.as_ref();
        if path.is_dir() {
            return Manifest::discover(path);
        }
        let contents =
            fs::read_to_string(path).map_err(|_| Error::MissingFile(path.to_path_buf()))?;
        let mut manifest: Manifest = serde_json::from_str(&contents)?;
        // Relative paths resolve against the manifest's own directory.
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        manifest.root = Some(match &manifest.root {
            Some(root) if root.is_absolute() => root.clone(),
            Some(root) => base.join(root),
            None => base.to_path_buf(),
        });
        Ok(manifest)
    }

    /// Scans `dir` (and its immediate subdirectories) for
    /// `<domain>-<split>.json` file groups. A group is used only when all
    /// three splits are present. Subdirectory groups order before the
    /// top-level group of the same domain, so a news extension lands in the
    /// first row as in the corpus statistics table.
    pub fn discover(dir: impl AsRef<Path>) -> Result<Manifest> {
        let dir = dir.as_ref();
        let mut locations: Vec<(Option<String>, PathBuf)> = vec![(None, dir.to_path_buf())];
        let mut subdirs: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|_| Error::MissingFile(dir.to_path_buf()))?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.is_dir())
            .collect();
        subdirs.sort();
        for sub in subdirs {
            let name = sub
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            locations.push((Some(name), sub));
        }

        let mut sources = Vec::new();
        for domain in DomainId::ALL {
            for (subname, location) in &locations {
                let paths: Vec<PathBuf> = Split::ALL
                    .iter()
                    .map(|split| location.join(format!("{}-{}.json", domain.name(), split)))
                    .collect();
                if paths.iter().all(|p| p.is_file()) {
                    let name = match subname {
                        Some(sub) => format!("{} ({})", domain.name(), sub),
                        None => domain.name().to_string(),
                    };
                    sources.push((
                        subname.is_none(),
                        ManifestSource {
                            name,
                            domain,
                            train: paths[0].clone(),
                            dev: paths[1].clone(),
                            test: paths[2].clone(),
                        },
                    ));
                }
            }
        }
        // Subdirectory sources first within a domain.
        sources.sort_by_key(|(at_root, s)| (s.domain.index(), *at_root));

        if sources.is_empty() {
            return Err(Error::EmptyCorpus(format!(
                "no `<domain>-<split>.json` file groups found under {}",
                dir.display()
            )));
        }
        Ok(Manifest {
            root: None,
            sources: sources.into_iter().map(|(_, s)| s).collect(),
        })
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        match (&self.root, path.is_absolute()) {
            (Some(root), false) => root.join(path),
            _ => path.to_path_buf(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Sentences of one manifest source, split by split.
#[derive(Debug, Clone)]
pub struct CorpusSource {
    pub name: String,
    pub domain: DomainId,
    pub splits: BTreeMap<Split, Vec<AnnotatedSentence>>,
}

/// A fully loaded corpus. Read-only after loading.
#[derive(Debug, Clone)]
pub struct Corpus {
    sources: Vec<CorpusSource>,
}

impl Corpus {
    pub fn load(manifest: &Manifest, options: &ValidationOptions) -> Result<Corpus> {
        let mut sources = Vec::new();
        for source in &manifest.sources {
            let mut splits = BTreeMap::new();
            for split in Split::ALL {
                let path = manifest.resolve(source.path(split));
                let sentences = load_corpus_file(&path, source.domain, options)?;
                splits.insert(split, sentences);
            }
            sources.push(CorpusSource {
                name: source.name.clone(),
                domain: source.domain,
                splits,
            });
        }
        Ok(Corpus { sources })
    }

    pub fn from_sources(sources: Vec<CorpusSource>) -> Corpus {
        Corpus { sources }
    }

    pub fn sources(&self) -> &[CorpusSource] {
        &self.sources
    }

    pub fn sentences(&self, split: Split) -> impl Iterator<Item = &AnnotatedSentence> {
        self.sources
            .iter()
            .filter_map(move |s| s.splits.get(&split))
            .flatten()
    }

    pub fn instances(&self, split: Split) -> Vec<RelationInstance> {
        self.sentences(split)
            .flat_map(extract_relation_instances)
            .collect()
    }

    pub fn instances_by_domain(&self, split: Split) -> BTreeMap<DomainId, Vec<RelationInstance>> {
        let mut map: BTreeMap<DomainId, Vec<RelationInstance>> = BTreeMap::new();
        for instance in self.instances(split) {
            map.entry(instance.domain).or_default().push(instance);
        }
        map
    }

    pub fn label_vocabulary(&self) -> Result<LabelVocabulary> {
        build_label_vocabulary(Split::ALL.iter().flat_map(|s| self.sentences(*s)))
    }

    pub fn stats(&self) -> CorpusStats {
        corpus_stats(self)
    }
}

/// Per-split counts with a derived total.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Dev => self.dev,
            Split::Test => self.test,
        }
    }

    fn set(&mut self, split: Split, value: usize) {
        match split {
            Split::Train => self.train = value,
            Split::Dev => self.dev = value,
            Split::Test => self.test = value,
        }
    }

    pub fn total(&self) -> usize {
        self.train + self.dev + self.test
    }

    fn accumulate(&mut self, other: &SplitCounts) {
        self.train += other.train;
        self.dev += other.dev;
        self.test += other.test;
    }
}

/// Sentence and relation counts of one source row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatsRow {
    pub source: String,
    pub domain: DomainId,
    pub sentences: SplitCounts,
    pub relations: SplitCounts,
}

/// Corpus statistics: one row per source plus derived totals.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub rows: Vec<StatsRow>,
}

/// Counts sentences and relations per (source, split).
pub fn corpus_stats(corpus: &Corpus) -> CorpusStats {
    let rows = corpus
        .sources()
        .iter()
        .map(|source| {
            let mut sentences = SplitCounts::default();
            let mut relations = SplitCounts::default();
            for split in Split::ALL {
                let sents = source.splits.get(&split).map(Vec::as_slice).unwrap_or(&[]);
                sentences.set(split, sents.len());
                relations.set(split, sents.iter().map(|s| s.relations.len()).sum());
            }
            StatsRow {
                source: source.name.clone(),
                domain: source.domain,
                sentences,
                relations,
            }
        })
        .collect();
    CorpusStats { rows }
}

impl CorpusStats {
    pub fn totals(&self) -> (SplitCounts, SplitCounts) {
        let mut sentences = SplitCounts::default();
        let mut relations = SplitCounts::default();
        for row in &self.rows {
            sentences.accumulate(&row.sentences);
            relations.accumulate(&row.relations);
        }
        (sentences, relations)
    }

    pub fn total_sentences(&self) -> usize {
        self.totals().0.total()
    }

    pub fn total_relations(&self) -> usize {
        self.totals().1.total()
    }

    /// Counts summed over all sources of one domain.
    pub fn per_domain(&self, domain: DomainId) -> (SplitCounts, SplitCounts) {
        let mut sentences = SplitCounts::default();
        let mut relations = SplitCounts::default();
        for row in self.rows.iter().filter(|r| r.domain == domain) {
            sentences.accumulate(&row.sentences);
            relations.accumulate(&row.relations);
        }
        (sentences, relations)
    }

    pub fn to_json(&self) -> serde_json::Value {
        let (sent_tot, rel_tot) = self.totals();
        json!({
            "rows": self.rows.iter().map(|row| json!({
                "source": row.source,
                "domain": row.domain.name(),
                "sentences": {
                    "train": row.sentences.train,
                    "dev": row.sentences.dev,
                    "test": row.sentences.test,
                    "total": row.sentences.total(),
                },
                "relations": {
                    "train": row.relations.train,
                    "dev": row.relations.dev,
                    "test": row.relations.test,
                    "total": row.relations.total(),
                },
            })).collect::<Vec<_>>(),
            "totals": {
                "sentences": {
                    "train": sent_tot.train, "dev": sent_tot.dev,
                    "test": sent_tot.test, "total": sent_tot.total(),
                },
                "relations": {
                    "train": rel_tot.train, "dev": rel_tot.dev,
                    "test": rel_tot.test, "total": rel_tot.total(),
                },
            },
        })
    }

    /// Plain-text table in the usual corpus-statistics layout: one row per
    /// source, sentence counts on the left, relation counts on the right.
    pub fn render_table(&self) -> String {
        let name_width = self
            .rows
            .iter()
            .map(|r| r.source.len())
            .chain(["tot.".len()])
            .max()
            .unwrap_or(8)
            .max(8);

        let mut out = String::new();
        let header = format!(
            "{:<name_width$} | {:>7} {:>7} {:>7} {:>8} | {:>7} {:>7} {:>7} {:>8}",
            "", "train", "dev", "test", "tot.", "train", "dev", "test", "tot."
        );
        let group = format!(
            "{:<name_width$} | {:^32} | {:^32}",
            "", "sentences", "relations"
        );
        out.push_str(&group);
        out.push('\n');
        out.push_str(&header);
        out.push('\n');
        out.push_str(&"-".repeat(header.len()));
        out.push('\n');
        for row in &self.rows {
            out.push_str(&format!(
                "{:<name_width$} | {:>7} {:>7} {:>7} {:>8} | {:>7} {:>7} {:>7} {:>8}\n",
                row.source,
                group_thousands(row.sentences.train),
                group_thousands(row.sentences.dev),
                group_thousands(row.sentences.test),
                group_thousands(row.sentences.total()),
                group_thousands(row.relations.train),
                group_thousands(row.relations.dev),
                group_thousands(row.relations.test),
                group_thousands(row.relations.total()),
            ));
        }
        out.push_str(&"-".repeat(header.len()));
        out.push('\n');
        let (sent, rel) = self.totals();
        out.push_str(&format!(
            "{:<name_width$} | {:>7} {:>7} {:>7} {:>8} | {:>7} {:>7} {:>7} {:>8}\n",
            "tot.",
            group_thousands(sent.train),
            group_thousands(sent.dev),
            group_thousands(sent.test),
            group_thousands(sent.total()),
            group_thousands(rel.train),
            group_thousands(rel.dev),
            group_thousands(rel.test),
            group_thousands(rel.total()),
        ));
        out
    }
}

fn group_thousands(n: usize) -> String {
    let digits = n.to_string();
    let mut out = String::new();
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(c);
    }
    out
}
