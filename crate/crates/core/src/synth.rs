//! Deterministic synthetic corpus generation.
//!
//! Produces well-formed corpora in the release file layout with exact
//! per-(source, split) sentence and relation counts. Used by the test suites
//! when the released data is not on disk, and handy for trying the pipeline
//! end to end without downloading anything.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{
    serialize_sentences, AnnotatedSentence, Corpus, CorpusSource, DomainId, EntitySpan,
    LabelVocabulary, Manifest, ManifestSource, RelationAnnotation, RelationInstance, Split,
};
use crate::error::Result;

/// Target counts for one (source, split) cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthRow {
    pub source: String,
    pub domain: DomainId,
    pub split: Split,
    pub sentences: usize,
    pub relations: usize,
}

fn row(source: &str, domain: DomainId, split: Split, sentences: usize, relations: usize) -> SynthRow {
    SynthRow {
        source: source.to_string(),
        domain,
        split,
        sentences,
        relations,
    }
}

/// The released corpus statistics, cell for cell: the news extension plus
/// the six original domains.
pub fn table1_rows() -> Vec<SynthRow> {
    use DomainId::*;
    use Split::*;
    let mut rows = Vec::new();
    let mut push = |source: &str, domain, counts: [(Split, usize, usize); 3]| {
        for (split, sentences, relations) in counts {
            rows.push(row(source, domain, split, sentences, relations));
        }
    };
    push(
        "news (extension)",
        News,
        [(Train, 217, 156), (Dev, 1320, 1043), (Test, 3053, 2115)],
    );
    push("news", News, [(Train, 164, 175), (Dev, 350, 300), (Test, 400, 396)]);
    push(
        "politics",
        Politics,
        [(Train, 101, 502), (Dev, 350, 1616), (Test, 400, 1831)],
    );
    push(
        "science",
        Science,
        [(Train, 103, 355), (Dev, 351, 1340), (Test, 400, 1393)],
    );
    push("music", Music, [(Train, 100, 496), (Dev, 350, 1861), (Test, 399, 2333)]);
    push(
        "literature",
        Literature,
        [(Train, 100, 397), (Dev, 400, 1539), (Test, 416, 1591)],
    );
    push("ai", Ai, [(Train, 100, 350), (Dev, 350, 1006), (Test, 431, 1127)]);
    rows
}

/// A small six-domain corpus for fast tests: one source per domain with the
/// given sentence counts and roughly two relations per sentence.
pub fn tiny_rows(train: usize, dev: usize, test: usize) -> Vec<SynthRow> {
    let mut rows = Vec::new();
    for domain in DomainId::ALL {
        for (split, sentences) in [(Split::Train, train), (Split::Dev, dev), (Split::Test, test)] {
            rows.push(row(domain.name(), domain, split, sentences, sentences * 2));
        }
    }
    rows
}

const SHARED_WORDS: &[&str] = &[
    "the", "a", "of", "in", "and", "to", "was", "is", "for", "with", "on", "by", "at", "from",
    "as", "its", "his", "her", "their", "which", "first", "new", "two", "after", "during",
    "between", "known", "early", "later", "major",
];

fn domain_words(domain: DomainId) -> &'static [&'static str] {
    match domain {
        DomainId::News => &[
            "Reuters", "government", "officials", "minister", "spokesman", "talks", "agreement",
            "percent", "market", "shares", "police", "court", "border", "trade", "Friday",
        ],
        DomainId::Politics => &[
            "party", "election", "parliament", "votes", "coalition", "senator", "campaign",
            "congress", "president", "cabinet", "policy", "referendum", "opposition", "treaty",
            "ballot",
        ],
        DomainId::Science => &[
            "enzyme", "protein", "reaction", "theory", "physics", "particles", "journal",
            "experiment", "researchers", "compound", "molecule", "orbit", "telescope", "cell",
            "laboratory",
        ],
        DomainId::Music => &[
            "album", "band", "song", "guitar", "tour", "Records", "single", "studio", "chart",
            "vocalist", "drummer", "label", "concert", "melody", "release",
        ],
        DomainId::Literature => &[
            "novel", "poem", "writer", "published", "chapter", "magazine", "critics", "prose",
            "narrator", "translation", "editor", "trilogy", "verse", "memoir", "preface",
        ],
        DomainId::Ai => &[
            "model", "dataset", "training", "accuracy", "benchmark", "network", "algorithm",
            "parser", "corpus", "embedding", "classifier", "inference", "encoder", "metric",
            "baseline",
        ],
    }
}

fn fine_types(domain: DomainId) -> &'static [&'static str] {
    match domain {
        DomainId::News => &["person", "organisation", "location", "misc"],
        DomainId::Politics => &[
            "politician",
            "person",
            "organisation",
            "politicalparty",
            "event",
            "election",
            "country",
            "location",
            "misc",
        ],
        DomainId::Science => &[
            "scientist",
            "person",
            "university",
            "organisation",
            "country",
            "location",
            "discipline",
            "enzyme",
            "protein",
            "chemicalcompound",
            "chemicalelement",
            "event",
            "astronomicalobject",
            "academicjournal",
            "award",
            "theory",
            "misc",
        ],
        DomainId::Music => &[
            "musicgenre",
            "song",
            "band",
            "album",
            "musicalartist",
            "musicalinstrument",
            "award",
            "event",
            "country",
            "location",
            "organisation",
            "person",
            "misc",
        ],
        DomainId::Literature => &[
            "book",
            "writer",
            "award",
            "poem",
            "event",
            "magazine",
            "literarygenre",
            "person",
            "location",
            "organisation",
            "country",
            "misc",
        ],
        DomainId::Ai => &[
            "field",
            "task",
            "product",
            "algorithm",
            "researcher",
            "metrics",
            "programlang",
            "conference",
            "university",
            "country",
            "person",
            "organisation",
            "location",
            "misc",
        ],
    }
}

fn sample_label(rng: &mut ChaCha8Rng, labels: &[String]) -> String {
    // The catch-all label is deliberately over-represented, mirroring the
    // real distribution and giving frequency-ranking code something to rank.
    if rng.random::<f64>() < 0.25 {
        return "related-to".to_string();
    }
    labels.choose(rng).expect("non-empty label bank").clone()
}

fn generate_sentence(
    doc_key: String,
    domain: DomainId,
    n_relations: usize,
    unique: usize,
    rng: &mut ChaCha8Rng,
) -> AnnotatedSentence {
    let length = rng.random_range(8..=20);
    let mut tokens: Vec<String> = (0..length)
        .map(|_| {
            if rng.random::<f64>() < 0.45 {
                domain_words(domain).choose(rng).unwrap().to_string()
            } else {
                SHARED_WORDS.choose(rng).unwrap().to_string()
            }
        })
        .collect();
    // One globally unique token keeps sentences distinguishable, so tiny
    // models can memorize a training subset.
    let slot = rng.random_range(0..tokens.len());
    tokens[slot] = format!("u{unique}");

    let max_entities = (tokens.len() / 3).clamp(2, 6);
    let n_entities = if n_relations > 0 {
        rng.random_range(2..=max_entities)
    } else {
        rng.random_range(0..=max_entities)
    };
    let mut entities = Vec::with_capacity(n_entities);
    for _ in 0..n_entities {
        // A small chance of duplicating an existing span exercises the
        // nested-marker path downstream.
        if !entities.is_empty() && rng.random::<f64>() < 0.04 {
            let original: &EntitySpan = entities.choose(rng).unwrap();
            entities.push(original.clone());
            continue;
        }
        let len = rng.random_range(1..=2usize);
        let start = rng.random_range(0..tokens.len() - (len - 1));
        let fine = fine_types(domain).choose(rng).unwrap().to_string();
        entities.push(EntitySpan::new(start, start + len - 1, fine));
    }

    let labels = LabelVocabulary::canonical();
    let mut relations = Vec::with_capacity(n_relations);
    for i in 0..n_relations {
        let head = rng.random_range(0..entities.len());
        let mut tail = rng.random_range(0..entities.len());
        if entities.len() > 1 {
            while tail == head {
                tail = rng.random_range(0..entities.len());
            }
        }
        relations.push(RelationAnnotation {
            head,
            tail,
            label: sample_label(rng, labels.labels()),
            explanation: if rng.random::<f64>() < 0.3 {
                format!("note {i}")
            } else {
                String::new()
            },
            uncertain: rng.random::<f64>() < 0.05,
            syntax_ambiguity: rng.random::<f64>() < 0.03,
        });
    }

    AnnotatedSentence {
        doc_key,
        tokens,
        domain,
        entities,
        relations,
    }
}

/// Generates a corpus hitting every row's counts exactly. Deterministic in
/// `(rows, seed)`.
pub fn generate(rows: &[SynthRow], seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut unique = 0usize;

    let mut sources: BTreeMap<String, CorpusSource> = BTreeMap::new();
    let mut order: Vec<String> = Vec::new();
    for row in rows {
        if !sources.contains_key(&row.source) {
            order.push(row.source.clone());
            sources.insert(
                row.source.clone(),
                CorpusSource {
                    name: row.source.clone(),
                    domain: row.domain,
                    splits: BTreeMap::new(),
                },
            );
        }
        let slug = slugify(&row.source);
        let mut sentences = Vec::with_capacity(row.sentences);
        // Spread the relation budget evenly; leftovers go to the first
        // sentences.
        let base = if row.sentences > 0 { row.relations / row.sentences } else { 0 };
        let extra = if row.sentences > 0 { row.relations % row.sentences } else { 0 };
        for i in 0..row.sentences {
            let n_relations = base + usize::from(i < extra);
            let doc_key = format!("{slug}-{}-{i}", row.split);
            sentences.push(generate_sentence(doc_key, row.domain, n_relations, unique, &mut rng));
            unique += 1;
        }
        sources
            .get_mut(&row.source)
            .expect("source registered")
            .splits
            .insert(row.split, sentences);
    }

    Corpus::from_sources(order.into_iter().map(|name| sources.remove(&name).unwrap()).collect())
}

fn slugify(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect::<String>()
        .trim_matches('_')
        .replace("__", "_")
}

/// Writes a corpus in the released directory layout: `<domain>-<split>.json`
/// at the top level, extra sources (e.g. a news extension) in equally named
/// subdirectories. Returns a manifest pointing at the files.
pub fn write_corpus(corpus: &Corpus, dir: impl AsRef<Path>) -> Result<Manifest> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut manifest_sources = Vec::new();
    for source in corpus.sources() {
        let at_root = source.name == source.domain.name();
        let location = if at_root {
            dir.to_path_buf()
        } else {
            let sub = dir.join(slugify(&source.name));
            std::fs::create_dir_all(&sub)?;
            sub
        };
        let mut paths = BTreeMap::new();
        for split in Split::ALL {
            let path = location.join(format!("{}-{}.json", source.domain.name(), split));
            let sentences = source.splits.get(&split).cloned().unwrap_or_default();
            std::fs::write(&path, serialize_sentences(&sentences))?;
            paths.insert(split, path);
        }
        manifest_sources.push(ManifestSource {
            name: source.name.clone(),
            domain: source.domain,
            train: paths[&Split::Train].clone(),
            dev: paths[&Split::Dev].clone(),
            test: paths[&Split::Test].clone(),
        });
    }
    let manifest = Manifest {
        root: None,
        sources: manifest_sources,
    };
    manifest.save(dir.join("manifest.json"))?;
    Ok(manifest)
}

/// `n` mixed-domain training instances with distinct sentences, for
/// overfitting smoke tests.
pub fn overfit_instances(n: usize, seed: u64) -> Vec<RelationInstance> {
    let per_domain = n.div_ceil(DomainId::ALL.len());
    let rows: Vec<SynthRow> = DomainId::ALL
        .iter()
        .map(|&d| row(d.name(), d, Split::Train, per_domain, per_domain))
        .collect();
    let corpus = generate(&rows, seed);
    let mut instances = corpus.instances(Split::Train);
    instances.truncate(n);
    instances
}
