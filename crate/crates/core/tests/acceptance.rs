//! Acceptance suite: runs every acceptance criterion at its stated tolerance
//! and prints one pass/fail line per criterion.
//!
//! Criteria 1 and 3 run against the released corpus when `DOMAINRC_DATA`
//! points at it (manifest or directory); otherwise they run against a
//! deterministic synthetic corpus whose per-(source, split) counts mirror
//! the published statistics table cell for cell, and say so.
//!
//! Run with `cargo test --test acceptance` (or `cargo test --workspace`).

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use domainrc::analysis::{emit_scatter_data, pca_fit_transform, InstanceVector, ScatterMode};
use domainrc::corpus::{Corpus, CorpusStats, DomainId, Manifest, Split, ValidationOptions};
use domainrc::encoding::{EncodingContext, EncodingStrategy};
use domainrc::evaluation::{macro_f1, per_label_prf, present_labels, PredictionRecord};
use domainrc::model::{
    cross_entropy, DatasetEmbeddingInit, Encoder, RelationModel, TinyEncoderOptions, VisitParams,
};
use domainrc::synth;
use domainrc::tokenizer::Tokenizer;
use domainrc::training::{run_experiment, seeded_rng, set_global_seed, TrainConfig, TrainData};

type Outcome = Result<String, String>;

fn main() {
    let criteria: Vec<(usize, &str, fn() -> Outcome)> = vec![
        (1, "data fidelity: corpus statistics", criterion_1_data_fidelity),
        (2, "scoring oracle equivalence", criterion_2_scoring_oracle),
        (3, "encoding properties over the dev set", criterion_3_encoding_properties),
        (4, "baseline equivalence of zero dataset embeddings", criterion_4_baseline_equivalence),
        (5, "finite-difference gradient checks", criterion_5_gradient_checks),
        (6, "overfit smoke on 50 mixed-domain instances", criterion_6_overfit_smoke),
        (7, "PCA properties", criterion_7_pca_properties),
        (8, "full-scale reproduction (optional tier)", criterion_8_full_scale),
    ];

    let mut failures = 0usize;
    for (number, name, criterion) in criteria {
        let started = std::time::Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(criterion)).unwrap_or_else(|panic| {
            let message = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_string());
            Err(format!("panicked: {message}"))
        });
        let seconds = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) if detail.starts_with("SKIP") => {
                println!("criterion {number} ({name}): {detail}");
            }
            Ok(detail) => println!("criterion {number} ({name}): PASS [{seconds:.1}s] {detail}"),
            Err(detail) => {
                failures += 1;
                println!("criterion {number} ({name}): FAIL [{seconds:.1}s] {detail}");
            }
        }
    }

    if failures > 0 {
        eprintln!("{failures} acceptance criterion(s) failed");
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------------------
// Shared fixtures
// ---------------------------------------------------------------------------

/// Published corpus statistics, cell for cell: (domain, sentences per split,
/// relations per split). The news extension is the first of the two news
/// rows.
const TABLE1: [(DomainId, [usize; 3], [usize; 3]); 7] = [
    (DomainId::News, [217, 1320, 3053], [156, 1043, 2115]),
    (DomainId::News, [164, 350, 400], [175, 300, 396]),
    (DomainId::Politics, [101, 350, 400], [502, 1616, 1831]),
    (DomainId::Science, [103, 351, 400], [355, 1340, 1393]),
    (DomainId::Music, [100, 350, 399], [496, 1861, 2333]),
    (DomainId::Literature, [100, 400, 416], [397, 1539, 1591]),
    (DomainId::Ai, [100, 350, 431], [350, 1006, 1127]),
];

const TABLE1_TOTAL_SENTENCES: usize = 9_855;
const TABLE1_TOTAL_RELATIONS: usize = 21_922;

/// The corpus under test: the released files when `DOMAINRC_DATA` is set,
/// else the synthetic mirror. The second value names the source for the
/// pass/fail line.
fn acceptance_corpus() -> Result<(Corpus, &'static str), String> {
    if let Ok(path) = std::env::var("DOMAINRC_DATA") {
        if !path.is_empty() {
            let manifest = Manifest::from_path(&path)
                .map_err(|e| format!("DOMAINRC_DATA manifest failed: {e}"))?;
            let corpus = Corpus::load(&manifest, &ValidationOptions::default())
                .map_err(|e| format!("released corpus failed to load/validate: {e}"))?;
            return Ok((corpus, "released corpus"));
        }
    }
    Ok((synth::generate(&synth::table1_rows(), 20_240_501), "synthetic mirror"))
}

fn check(condition: bool, message: impl Into<String>) -> Result<(), String> {
    if condition {
        Ok(())
    } else {
        Err(message.into())
    }
}

// ---------------------------------------------------------------------------
// Criterion 1
// ---------------------------------------------------------------------------

fn assert_table1_cells(stats: &CorpusStats) -> Result<(), String> {
    let (sent, rel) = stats.totals();
    check(
        sent.total() == TABLE1_TOTAL_SENTENCES,
        format!("sentence total {} != {TABLE1_TOTAL_SENTENCES}", sent.total()),
    )?;
    check(
        rel.total() == TABLE1_TOTAL_RELATIONS,
        format!("relation total {} != {TABLE1_TOTAL_RELATIONS}", rel.total()),
    )?;

    let news_rows: Vec<_> = stats.rows.iter().filter(|r| r.domain == DomainId::News).collect();
    if news_rows.len() == 2 {
        // Separate extension row: compare all seven rows cell for cell. The
        // extension is the news row with the larger sentence count.
        let (extension, original) = if news_rows[0].sentences.total() > news_rows[1].sentences.total()
        {
            (news_rows[0], news_rows[1])
        } else {
            (news_rows[1], news_rows[0])
        };
        let mut actual = vec![extension, original];
        for domain in [
            DomainId::Politics,
            DomainId::Science,
            DomainId::Music,
            DomainId::Literature,
            DomainId::Ai,
        ] {
            actual.push(
                stats
                    .rows
                    .iter()
                    .find(|r| r.domain == domain)
                    .ok_or(format!("no stats row for {domain}"))?,
            );
        }
        for ((domain, sentences, relations), row) in TABLE1.iter().zip(actual) {
            for (i, split) in Split::ALL.iter().enumerate() {
                check(
                    row.sentences.get(*split) == sentences[i],
                    format!(
                        "{domain}/{split} sentences: {} != {}",
                        row.sentences.get(*split),
                        sentences[i]
                    ),
                )?;
                check(
                    row.relations.get(*split) == relations[i],
                    format!(
                        "{domain}/{split} relations: {} != {}",
                        row.relations.get(*split),
                        relations[i]
                    ),
                )?;
            }
        }
    } else {
        // Extension merged into the news files: per-domain sums must match.
        for domain in DomainId::ALL {
            let (sent, rel) = stats.per_domain(domain);
            let mut expected_sent = [0usize; 3];
            let mut expected_rel = [0usize; 3];
            for (d, s, r) in &TABLE1 {
                if *d == domain {
                    for i in 0..3 {
                        expected_sent[i] += s[i];
                        expected_rel[i] += r[i];
                    }
                }
            }
            for (i, split) in Split::ALL.iter().enumerate() {
                check(
                    sent.get(*split) == expected_sent[i],
                    format!(
                        "{domain}/{split} sentences {} != {}",
                        sent.get(*split),
                        expected_sent[i]
                    ),
                )?;
                check(
                    rel.get(*split) == expected_rel[i],
                    format!(
                        "{domain}/{split} relations {} != {}",
                        rel.get(*split),
                        expected_rel[i]
                    ),
                )?;
            }
        }
    }
    Ok(())
}

fn criterion_1_data_fidelity() -> Outcome {
    let (corpus, source) = acceptance_corpus()?;
    let stats = corpus.stats();
    assert_table1_cells(&stats)?;

    // The CLI path: `stats` must exit 0 over the same data.
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data_arg = match std::env::var("DOMAINRC_DATA") {
        Ok(path) if !path.is_empty() => path,
        _ => {
            synth::write_corpus(&corpus, dir.path()).map_err(|e| e.to_string())?;
            dir.path().join("manifest.json").display().to_string()
        }
    };
    let code = domainrc::cli::run(["domainrc", "stats", "--data", &data_arg]);
    check(code == 0, format!("`stats` exited {code}"))?;

    let labels = corpus.label_vocabulary().map_err(|e| e.to_string())?;
    check(labels.len() == 17, format!("{} labels != 17", labels.len()))?;

    // One relation instance per annotation: split totals match the table.
    for (split, expected) in [(Split::Train, 2_431), (Split::Dev, 8_705), (Split::Test, 10_786)] {
        let count = corpus.instances(split).len();
        check(
            count == expected,
            format!("{split} instances {count} != {expected}"),
        )?;
    }

    // Type-mapping totality over every fine type present in the corpus.
    let mapping = domainrc::corpus::TypeMapping::default_mapping();
    let mut image = std::collections::BTreeSet::new();
    for split in Split::ALL {
        for sentence in corpus.sentences(split) {
            for entity in &sentence.entities {
                image.insert(mapping.map(&entity.fine_type).map_err(|e| e.to_string())?);
            }
        }
    }
    check(
        image.len() <= 5,
        format!("mapping image has {} coarse types", image.len()),
    )?;

    Ok(format!(
        "{source}: all cells match ({TABLE1_TOTAL_SENTENCES} sentences / {TABLE1_TOTAL_RELATIONS} \
         relations, 17 labels, mapping total over corpus types)"
    ))
}

// ---------------------------------------------------------------------------
// Criterion 2
// ---------------------------------------------------------------------------

fn criterion_2_scoring_oracle() -> Outcome {
    // The worked example: gold=[a,a,b,c], pred=[a,b,b,c] -> macro-F1 7/9.
    let worked: Vec<PredictionRecord> = [("a", "a"), ("a", "b"), ("b", "b"), ("c", "c")]
        .iter()
        .enumerate()
        .map(|(i, (g, p))| common::record(i, DomainId::News, g, p))
        .collect();
    let value = macro_f1(&worked).map_err(|e| e.to_string())?;
    check(
        (value - 7.0 / 9.0).abs() <= 1e-12,
        format!("worked example macro-F1 {value} != 7/9"),
    )?;

    // 1,000 randomized cases (<=10 labels, <=200 records): exact agreement
    // with the confusion-matrix oracle.
    let labels = ["a", "b", "c", "d", "e", "f", "g", "h", "i", "j"];
    let mut rng = ChaCha8Rng::seed_from_u64(1_000_003);
    for case in 0..1_000 {
        let n_labels = rng.random_range(1..=10);
        let n_records = rng.random_range(1..=200);
        let records: Vec<PredictionRecord> = (0..n_records)
            .map(|i| {
                let gold = labels[rng.random_range(0..n_labels)];
                let predicted = labels[rng.random_range(0..n_labels)];
                common::record(i, DomainId::News, gold, predicted)
            })
            .collect();

        let scoring_labels = present_labels(&records);
        let ours = per_label_prf(&records, &scoring_labels);
        let oracle = common::confusion_matrix_prf(&records);
        check(ours.scores.len() == oracle.len(), format!("case {case}: label sets differ"))?;
        for (label, scores) in &ours.scores {
            let reference = &oracle[label];
            check(
                scores.precision == reference.precision
                    && scores.recall == reference.recall
                    && scores.f1 == reference.f1
                    && scores.support == reference.support,
                format!("case {case}: label {label} disagrees with the oracle"),
            )?;
        }
        let ours_macro = macro_f1(&records).map_err(|e| e.to_string())?;
        let oracle_macro = common::confusion_matrix_macro_f1(&records);
        check(
            ours_macro == oracle_macro,
            format!("case {case}: macro {ours_macro} != oracle {oracle_macro}"),
        )?;
    }
    Ok("worked example at 1e-12; 1,000 randomized cases agree exactly".to_string())
}

// ---------------------------------------------------------------------------
// Criterion 3
// ---------------------------------------------------------------------------

fn criterion_3_encoding_properties() -> Outcome {
    let (corpus, source) = acceptance_corpus()?;
    let labels = corpus.label_vocabulary().map_err(|e| e.to_string())?;
    let train_words: Vec<String> = corpus
        .sentences(Split::Train)
        .flat_map(|s| s.tokens.iter().cloned())
        .collect();
    let dev_instances = corpus.instances(Split::Dev);
    check(!dev_instances.is_empty(), "empty dev split")?;

    let mut encoded_total = 0usize;
    let mut skipped_total = 0usize;
    for strategy in EncodingStrategy::ALL {
        let tokenizer = Tokenizer::from_words(train_words.iter().map(String::as_str), 2);
        let ctx = EncodingContext::new(
            strategy,
            tokenizer,
            domainrc::corpus::TypeMapping::default_mapping().clone(),
            labels.clone(),
            512,
        );

        // Atomicity: every registered marker is exactly one subword.
        for marker in ctx.markers.all() {
            let pieces = ctx.tokenizer.encode_word(marker);
            check(
                pieces.len() == 1,
                format!("{strategy}: marker {marker} became {} subwords", pieces.len()),
            )?;
        }

        for instance in &dev_instances {
            let aug = match ctx.encode(instance) {
                Ok(aug) => aug,
                Err(domainrc::Error::MarkerTruncated { .. }) => {
                    skipped_total += 1;
                    continue;
                }
                Err(other) => return Err(format!("{strategy}: {other}")),
            };
            encoded_total += 1;

            // Round trip: stripping markers recovers the sentence.
            let stripped = ctx.markers.strip(&aug.tokens);
            check(
                stripped == instance.tokens.iter().map(String::as_str).collect::<Vec<_>>(),
                format!("{strategy}: marker strip failed for {}", instance.id),
            )?;

            // Domain-marker presence tracks the strategy.
            let has_marker = aug.tokens.iter().any(|t| *t == instance.domain.marker());
            check(
                has_marker == strategy.uses_domain_marker(),
                format!("{strategy}: domain marker presence wrong for {}", instance.id),
            )?;

            // Start-marker positions point at their own subwords.
            let e1 = ctx.tokenizer.piece(aug.subword_ids[aug.e1_start_pos]).unwrap_or("");
            let e2 = ctx.tokenizer.piece(aug.subword_ids[aug.e2_start_pos]).unwrap_or("");
            check(
                e1.starts_with("[E1") && e2.starts_with("[E2"),
                format!("{strategy}: start positions wrong for {}", instance.id),
            )?;
        }
    }
    Ok(format!(
        "{source}: {encoded_total} encodings across 6 strategies hold all properties \
         ({skipped_total} skipped for marker truncation)"
    ))
}

// ---------------------------------------------------------------------------
// Criterion 4
// ---------------------------------------------------------------------------

fn tiny_fixture(
    strategy: EncodingStrategy,
    instances: &[domainrc::corpus::RelationInstance],
    labels: &domainrc::corpus::LabelVocabulary,
    seed: u64,
) -> Result<(RelationModel, EncodingContext), String> {
    let opts = TinyEncoderOptions::default();
    let tokenizer = Tokenizer::from_words(
        instances.iter().flat_map(|i| i.tokens.iter().map(String::as_str)),
        opts.min_word_freq,
    );
    let ctx = EncodingContext::new(
        strategy,
        tokenizer,
        domainrc::corpus::TypeMapping::default_mapping().clone(),
        labels.clone(),
        opts.max_len,
    );
    set_global_seed(seed);
    let mut rng = seeded_rng("init");
    let encoder = Encoder::new(opts.to_config(ctx.tokenizer.vocab_size()), &mut rng)
        .map_err(|e| e.to_string())?;
    let model = RelationModel::new(
        encoder,
        labels.len(),
        strategy.uses_dataset_embedding(),
        DatasetEmbeddingInit::Zeros,
        &mut rng,
    )
    .map_err(|e| e.to_string())?;
    Ok((model, ctx))
}

fn criterion_4_baseline_equivalence() -> Outcome {
    let instances = synth::overfit_instances(32, 77);
    let labels =
        domainrc::corpus::LabelVocabulary::from_labels(instances.iter().map(|i| i.label.clone()));

    let (baseline, ctx_base) = tiny_fixture(EncodingStrategy::Baseline, &instances, &labels, 4242)?;
    let (with_table, ctx_de) =
        tiny_fixture(EncodingStrategy::DatasetEmbedding, &instances, &labels, 4242)?;
    check(with_table.dataset_embeddings_enabled(), "table not enabled")?;

    let mut compared = 0usize;
    for instance in &instances {
        let a = ctx_base.encode(instance).map_err(|e| e.to_string())?;
        let b = ctx_de.encode(instance).map_err(|e| e.to_string())?;
        let logits_a = baseline.logits(&a).map_err(|e| e.to_string())?;
        let logits_b = with_table.logits(&b).map_err(|e| e.to_string())?;
        for (x, y) in logits_a.iter().zip(logits_b.iter()) {
            check(
                x.to_bits() == y.to_bits(),
                format!("instance {}: {x:e} != {y:e} bitwise", instance.id),
            )?;
            compared += 1;
        }
    }
    Ok(format!(
        "logits bit-identical over the fixed 32-instance batch ({compared} values)"
    ))
}

// ---------------------------------------------------------------------------
// Criterion 5
// ---------------------------------------------------------------------------

fn criterion_5_gradient_checks() -> Outcome {
    let instances = synth::overfit_instances(8, 31);
    let labels =
        domainrc::corpus::LabelVocabulary::from_labels(instances.iter().map(|i| i.label.clone()));
    let (mut model, ctx) = tiny_fixture(EncodingStrategy::DatasetEmbedding, &instances, &labels, 99)?;
    let batch: Vec<_> = instances
        .iter()
        .map(|i| ctx.encode(i))
        .collect::<domainrc::Result<_>>()
        .map_err(|e| e.to_string())?;

    // The loss both routes compute: mean cross-entropy over the batch in
    // inference mode (the tiny config has zero dropout).
    let loss_of = |model: &RelationModel| -> f64 {
        batch
            .iter()
            .map(|aug| {
                let logits = model.logits(aug).expect("forward");
                cross_entropy(logits.view(), aug.gold_label).expect("loss").0
            })
            .sum::<f64>()
            / batch.len() as f64
    };

    // Analytic gradients.
    model.zero_grads();
    let refs: Vec<&_> = batch.iter().collect();
    let mut train_rng = seeded_rng("gradcheck");
    model
        .accumulate_batch(&refs, &mut train_rng)
        .map_err(|e| e.to_string())?;

    let active_domains: std::collections::BTreeSet<DomainId> =
        batch.iter().map(|b| b.domain).collect();
    let mut probes: Vec<(String, Vec<usize>)> = vec![
        ("head.weight".to_string(), vec![0, 0]),
        ("head.weight".to_string(), vec![3, 1]),
        ("head.weight".to_string(), vec![17, 2]),
        ("head.bias".to_string(), vec![0]),
        ("head.bias".to_string(), vec![2]),
    ];
    for domain in &active_domains {
        for col in [0usize, 5, 13] {
            probes.push(("dataset_embeddings".to_string(), vec![domain.index(), col]));
        }
    }
    let mut analytic: BTreeMap<(String, Vec<usize>), f64> = BTreeMap::new();
    model.visit_params(&mut |name, p| {
        for (probe_name, idx) in &probes {
            if probe_name == name {
                analytic.insert((name.to_string(), idx.clone()), p.grad()[idx.as_slice()]);
            }
        }
    });

    // Central differences at 64-bit precision.
    let eps = 1e-5;
    let mut worst: f64 = 0.0;
    for (name, idx) in &probes {
        let perturb = |model: &mut RelationModel, delta: f64| {
            model.visit_params(&mut |n, p| {
                if n == name {
                    p.value_mut()[idx.as_slice()] += delta;
                }
            });
        };
        perturb(&mut model, eps);
        let up = loss_of(&model);
        perturb(&mut model, -2.0 * eps);
        let down = loss_of(&model);
        perturb(&mut model, eps);
        let numeric = (up - down) / (2.0 * eps);
        let value = analytic[&(name.clone(), idx.clone())];
        let rel = (value - numeric).abs() / value.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(rel);
        check(
            rel < 1e-3,
            format!("{name}{idx:?}: analytic {value} vs fd {numeric} (rel {rel:.2e})"),
        )?;
    }

    // Inactive domains: gradients exactly zero, and the loss provably does
    // not depend on them (so their finite differences are exactly zero too).
    for domain in DomainId::ALL {
        if active_domains.contains(&domain) {
            let norm: f64 = model
                .dataset_embeddings()
                .grad_row(domain)
                .iter()
                .map(|v| v.abs())
                .sum();
            check(norm > 0.0, format!("active domain {domain} has zero gradient"))?;
        } else {
            let base = loss_of(&model);
            model.visit_params(&mut |n, p| {
                if n == "dataset_embeddings" {
                    p.value_mut()[[domain.index(), 1].as_slice()] += 0.25;
                }
            });
            let shifted = loss_of(&model);
            model.visit_params(&mut |n, p| {
                if n == "dataset_embeddings" {
                    p.value_mut()[[domain.index(), 1].as_slice()] -= 0.25;
                }
            });
            check(
                shifted.to_bits() == base.to_bits(),
                format!("loss depends on inactive domain {domain}"),
            )?;
            let all_zero = model
                .dataset_embeddings()
                .grad_row(domain)
                .iter()
                .all(|&v| v == 0.0);
            check(all_zero, format!("inactive domain {domain} has nonzero gradient"))?;
        }
    }

    Ok(format!(
        "{} probes agree with finite differences (worst rel err {worst:.2e}); inactive rows exactly zero",
        probes.len()
    ))
}

// ---------------------------------------------------------------------------
// Criterion 6
// ---------------------------------------------------------------------------

fn criterion_6_overfit_smoke() -> Outcome {
    let instances = synth::overfit_instances(50, 123);
    let data = TrainData::from_instances(instances.clone(), instances).map_err(|e| e.to_string())?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut config = TrainConfig::default();
    config.encoder = "tiny".to_string();
    config.learning_rate = 2e-3;
    config.weight_decay = 0.0;
    config.batch_size = 10;
    config.max_epochs = 200;
    config.patience = 200;
    config.seeds = vec![1];
    config.out_dir = dir.path().to_path_buf();
    config.data_manifest = dir.path().join("unused");

    let outcome = run_experiment(&config, &data).map_err(|e| e.to_string())?;
    check(
        outcome.failures.is_empty(),
        format!(
            "seed failed: {:?}",
            outcome.failures.iter().map(|(s, e)| format!("{s}: {e}")).collect::<Vec<_>>()
        ),
    )?;
    let run = &outcome.runs[0];
    // Dev is the training set here, so the best dev macro-F1 is the train
    // macro-F1 of the selected checkpoint.
    let train_macro = run.best_dev_macro_f1;
    let epochs = run.log.epochs.len();
    check(
        train_macro >= 0.95,
        format!("train macro-F1 {train_macro:.4} < 0.95 after {epochs} epochs"),
    )?;
    Ok(format!("train macro-F1 {train_macro:.4} >= 0.95 within {epochs} epochs"))
}

// ---------------------------------------------------------------------------
// Criterion 7
// ---------------------------------------------------------------------------

fn criterion_7_pca_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(777);

    // Orthonormality and oracle agreement over random low-dimensional data.
    for case in 0..50 {
        let dim = rng.random_range(2..=10usize);
        let n = rng.random_range(dim + 2..=60);
        let k = rng.random_range(1..=dim.min(3));
        let data: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..dim).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect())
            .collect();
        let projection = pca_fit_transform(&data, k).map_err(|e| e.to_string())?;

        for i in 0..k {
            for j in 0..k {
                let dot: f64 = projection.axes[i]
                    .iter()
                    .zip(&projection.axes[j])
                    .map(|(a, b)| a * b)
                    .sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                check(
                    (dot - expect).abs() < 1e-8,
                    format!("case {case}: axes {i},{j} dot {dot}"),
                )?;
            }
        }

        // Brute-force eigen-solver oracle on the sample covariance.
        let mean: Vec<f64> = (0..dim)
            .map(|j| data.iter().map(|r| r[j]).sum::<f64>() / n as f64)
            .collect();
        let mut covariance = ndarray::Array2::<f64>::zeros((dim, dim));
        for row in &data {
            for i in 0..dim {
                for j in 0..dim {
                    covariance[[i, j]] += (row[i] - mean[i]) * (row[j] - mean[j]) / (n as f64 - 1.0);
                }
            }
        }
        let oracle = common::jacobi_eigenvalues(&covariance);
        let projected: f64 = (0..k)
            .map(|c| projection.points.iter().map(|p| p[c] * p[c]).sum::<f64>() / (n as f64 - 1.0))
            .sum();
        let oracle_sum: f64 = oracle.iter().take(k).sum();
        check(
            (projected - oracle_sum).abs() < 1e-8,
            format!("case {case}: projected variance {projected} vs oracle {oracle_sum}"),
        )?;
        for (rank, variance) in projection.explained_variance.iter().enumerate() {
            check(
                (variance - oracle[rank]).abs() < 1e-8,
                format!("case {case}: eigenvalue {rank}: {variance} vs {}", oracle[rank]),
            )?;
        }
    }

    // Deterministic signs: two from-scratch runs emit byte-identical CSVs.
    let domains = [DomainId::Music, DomainId::Ai, DomainId::Politics];
    let emit = || -> Result<String, String> {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let vectors: Vec<InstanceVector> = (0..30)
            .map(|i| InstanceVector {
                values: (0..5).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect(),
                domain: domains[i % 3],
                label: Some("physical".to_string()),
            })
            .collect();
        let projection = pca_fit_transform(&vectors, 2).map_err(|e| e.to_string())?;
        let (csv, _) = emit_scatter_data(&projection, &vectors, ScatterMode::Figure2)
            .map_err(|e| e.to_string())?;
        Ok(csv)
    };
    check(emit()? == emit()?, "scatter CSV not byte-identical across reruns")?;

    Ok("orthonormality and oracle agreement at 1e-8 over 50 cases; CSV reruns byte-identical"
        .to_string())
}

// ---------------------------------------------------------------------------
// Criterion 8 (optional tier)
// ---------------------------------------------------------------------------

/// Published reference averages for the multi-domain setups (macro-F1 x100).
const REFERENCE_DEV_BASELINE_AVG: f64 = 35.48;
const REFERENCE_DEV_DOMAIN_MARKER_AVG: f64 = 36.90;
const REFERENCE_TEST_BASELINE_AVG: f64 = 36.47;
const REFERENCE_TEST_DOMAIN_MARKER_AVG: f64 = 38.66;

/// Per-label F1 (x100) expected to improve under domain markers:
/// (label, baseline, domain markers).
const REFERENCE_LABEL_GAINS: [(&str, f64, f64); 3] = [
    ("related-to", 20.99, 24.21),
    ("named", 68.25, 71.30),
    ("part-of", 32.79, 35.54),
];

fn criterion_8_full_scale() -> Outcome {
    let dir = match std::env::var("DOMAINRC_FULLSCALE_REPORTS") {
        Ok(dir) if !dir.is_empty() => std::path::PathBuf::from(dir),
        _ => {
            return Ok(
                "SKIP: optional tier (needs the pretrained encoder and GPU-scale training; point \
                 DOMAINRC_FULLSCALE_REPORTS at aggregated reports to check). Criteria 1-7 \
                 constitute acceptance."
                    .to_string(),
            )
        }
    };

    // Expected files: <split>-<strategy>.json as written by `aggregate_seeds`
    // serialization, or single-seed report.json files.
    let load_avg = |split: &str, strategy: &str| -> Result<f64, String> {
        let path = dir.join(format!("{split}-{strategy}.json"));
        let contents =
            std::fs::read_to_string(&path).map_err(|_| format!("missing {}", path.display()))?;
        let value: serde_json::Value = serde_json::from_str(&contents).map_err(|e| e.to_string())?;
        value["avg_macro_f1"]["mean"]
            .as_f64()
            .or_else(|| value["avg_macro_f1"].as_f64())
            .map(|v| v * 100.0)
            .ok_or_else(|| format!("no avg_macro_f1 in {}", path.display()))
    };

    let dev_base = load_avg("dev", "baseline")?;
    let dev_mark = load_avg("dev", "domain_marker")?;
    let test_base = load_avg("test", "baseline")?;
    let test_mark = load_avg("test", "domain_marker")?;

    for (value, reference, name) in [
        (dev_base, REFERENCE_DEV_BASELINE_AVG, "dev baseline"),
        (dev_mark, REFERENCE_DEV_DOMAIN_MARKER_AVG, "dev domain markers"),
        (test_base, REFERENCE_TEST_BASELINE_AVG, "test baseline"),
        (test_mark, REFERENCE_TEST_DOMAIN_MARKER_AVG, "test domain markers"),
    ] {
        check(
            (value - reference).abs() <= 2.0,
            format!("{name}: {value:.2} outside {reference:.2} +- 2.0"),
        )?;
    }
    check(
        test_mark > test_base,
        format!("ordering violated: test domain markers {test_mark:.2} <= baseline {test_base:.2}"),
    )?;

    // Per-label directionality, when the reports carry pooled per-label cells.
    let mut directional = 0usize;
    let label_f1 = |split: &str, strategy: &str, label: &str| -> Option<f64> {
        let path = dir.join(format!("{split}-{strategy}.json"));
        let value: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path).ok()?).ok()?;
        let cell = &value["pooled"][label]["f1"];
        cell["mean"].as_f64().or_else(|| cell.as_f64())
    };
    for (label, _, _) in REFERENCE_LABEL_GAINS {
        if let (Some(base), Some(mark)) = (
            label_f1("test", "baseline", label),
            label_f1("test", "domain_marker", label),
        ) {
            check(
                mark > base,
                format!("per-label directionality violated for {label}: {mark} <= {base}"),
            )?;
            directional += 1;
        }
    }

    Ok(format!(
        "within +-2.0 of the reference averages; markers beat the baseline by {:.2} on test \
         ({directional}/3 per-label directions checked)",
        test_mark - test_base
    ))
}
