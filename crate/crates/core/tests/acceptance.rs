//! One test per acceptance criterion. Each prints a single
//! `criterion N [PASS|FAIL] ...` line (visible with `--nocapture`) before
//! asserting.

mod common;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use corpus_curate::code::{
    concat_repo, mix_code_levels, split_repo_document, topo_order, RepoGraph, Repository,
};
use corpus_curate::dedup::{dedup_documents, DocDedupConfig};
use corpus_curate::fingerprint::{
    document_key, estimate_jaccard, shingle, FingerprintConfig, MinHasher, ShingleScheme,
    ShingleSet,
};
use corpus_curate::mixture::{
    build_manifest, compute_sampling_rates, validate_mixture, DomainInventory, MixtureSpec,
    ShardInfo,
};
use corpus_curate::pipeline::{run_pipeline, PipelineConfig, RunOptions};
use corpus_curate::quality::classifier::{model_input, Gradient};
use corpus_curate::quality::{
    iterative_refine, logistic_loss_and_grad, train_classifier, LabeledText, MiningConfig,
    QualityModel, TrainConfig,
};
use corpus_curate::report::{extrapolate, fit_log_curve};
use corpus_curate::sentence::{dedup_sentences, split_sentences, SentenceDedupConfig};
use corpus_curate::{read_corpus, write_corpus, Corpus, Document, DomainTag, Shard};

use common::{normal, paragraph, report, vocabulary};

// ---------------------------------------------------------------- 1

fn exact_jaccard(a: &BTreeSet<u64>, b: &BTreeSet<u64>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    inter as f64 / union as f64
}

#[test]
fn c1_minhash_estimator_accuracy() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let hasher = MinHasher::new(128, 0x5EED);
    let scheme = ShingleScheme::words(5);
    let mut abs_err = 0.0;
    let mut sigma = 0.0;
    let pairs = 1000;
    for _ in 0..pairs {
        let na = rng.gen_range(20..=200usize);
        let nb = rng.gen_range(20..=200usize);
        let shared = rng.gen_range(0..=na.min(nb));
        let common: Vec<u64> = (0..shared).map(|_| rng.gen()).collect();
        let a: BTreeSet<u64> = common
            .iter()
            .copied()
            .chain((0..na - shared).map(|_| rng.gen()))
            .collect();
        let b: BTreeSet<u64> = common
            .iter()
            .copied()
            .chain((0..nb - shared).map(|_| rng.gen()))
            .collect();
        let j = exact_jaccard(&a, &b);
        let sa = hasher.signature(&ShingleSet::from_hashes(scheme, a));
        let sb = hasher.signature(&ShingleSet::from_hashes(scheme, b));
        abs_err += (estimate_jaccard(&sa, &sb).unwrap() - j).abs();
        sigma += (j * (1.0 - j) / 128.0).sqrt();
    }
    let mean_err = abs_err / pairs as f64;
    let bound = 2.0 * sigma / pairs as f64;
    let secs = start.elapsed().as_secs_f64();
    let pass = mean_err <= bound && secs < 10.0;
    report(
        1,
        "minhash accuracy",
        pass,
        &format!("mean |err| {mean_err:.5} <= {bound:.5}, {secs:.2}s"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 2

struct Planted {
    docs: Vec<Document>,
}

/// Random documents with planted exact copies (some with extra surrounding
/// whitespace) and near copies (one token replaced or the last dropped),
/// including near copies of near copies.
fn planted_corpus(rng: &mut ChaCha8Rng, vocab: &[String]) -> Planted {
    let base = rng.gen_range(20..=110);
    let mut docs: Vec<Document> = (0..base)
        .map(|i| {
            let n = rng.gen_range(10..=14);
            Document::new(
                format!("d{i:03}"),
                paragraph(rng, vocab, n),
                DomainTag::WebEn,
            )
        })
        .collect();
    let mut next = base;
    while docs.len() < 200 && rng.gen_bool(0.9) {
        let src = docs[rng.gen_range(0..docs.len())].text.clone();
        let text = match rng.gen_range(0..4) {
            0 => src,
            1 => format!("  {src}\n"),
            2 => {
                let mut w: Vec<&str> = src.split(' ').collect();
                let k = rng.gen_range(0..w.len());
                w[k] = "qqxq";
                w.join(" ")
            }
            _ => {
                let w: Vec<&str> = src.split(' ').collect();
                w[..w.len() - 1].join(" ")
            }
        };
        docs.push(Document::new(format!("d{next:03}"), text, DomainTag::WebEn));
        next += 1;
    }
    docs.shuffle(rng);
    Planted { docs }
}

struct Dsu(Vec<usize>);

impl Dsu {
    fn find(&mut self, x: usize) -> usize {
        let mut r = x;
        while self.0[r] != r {
            r = self.0[r];
        }
        self.0[x] = r;
        r
    }
    fn join(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Exact pass (first occurrence per normalized text), then all-pairs
/// similarity ≥ θ, connected components, keep-longest with smallest-id
/// ties.
fn brute_force_survivors(
    docs: &[Document],
    threshold: f64,
    sim: impl Fn(&Document, &Document) -> f64,
) -> BTreeSet<String> {
    let mut seen = BTreeSet::new();
    let after_exact: Vec<&Document> = docs
        .iter()
        .filter(|d| seen.insert(document_key(&d.text)))
        .collect();
    let n = after_exact.len();
    let mut dsu = Dsu((0..n).collect());
    for i in 0..n {
        for j in i + 1..n {
            if sim(after_exact[i], after_exact[j]) >= threshold {
                dsu.join(i, j);
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<&Document>> = BTreeMap::new();
    for i in 0..n {
        let r = dsu.find(i);
        groups.entry(r).or_default().push(after_exact[i]);
    }
    groups
        .values()
        .map(|g| {
            let longest = g.iter().map(|d| d.text.chars().count()).max().unwrap();
            g.iter()
                .filter(|d| d.text.chars().count() == longest)
                .map(|d| d.id.clone())
                .min()
                .unwrap()
        })
        .collect()
}

fn survivor_ids(c: &Corpus) -> BTreeSet<String> {
    c.docs().map(|d| d.id.clone()).collect()
}

fn reshard(docs: &[Document], rng: &mut ChaCha8Rng) -> Corpus {
    let mut shards = Vec::new();
    let mut rest = docs;
    let mut k = 0;
    while !rest.is_empty() {
        let take = rng.gen_range(1..=rest.len().min(40));
        shards.push(Shard::new(format!("s{k}"), rest[..take].to_vec()));
        rest = &rest[take..];
        k += 1;
    }
    Corpus::new(shards).unwrap()
}

#[test]
fn c2_dedup_oracle_equivalence() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let vocab = vocabulary(&mut rng, 3000);
    let threshold = 0.8;
    let fp = FingerprintConfig::document().exhaustive();
    let cfg = DocDedupConfig {
        fingerprint: fp,
        threshold,
    };
    let hasher = fp.hasher();
    let mut failures = Vec::new();
    for round in 0..50 {
        let planted = planted_corpus(&mut rng, &vocab);
        let docs = planted.docs;
        let corpus = Corpus::from_documents("all", docs.clone()).unwrap();
        let got = survivor_ids(&dedup_documents(corpus, &cfg).unwrap().corpus);

        let sets: HashMap<&str, ShingleSet> = docs
            .iter()
            .map(|d| (d.id.as_str(), shingle(&d.text, fp.scheme).unwrap()))
            .collect();
        let exact = brute_force_survivors(&docs, threshold, |a, b| {
            sets[a.id.as_str()].jaccard(&sets[b.id.as_str()])
        });
        let sigs: HashMap<&str, _> = sets
            .iter()
            .map(|(k, s)| (*k, hasher.signature(s)))
            .collect();
        let estimated = brute_force_survivors(&docs, threshold, |a, b| {
            estimate_jaccard(&sigs[a.id.as_str()], &sigs[b.id.as_str()]).unwrap()
        });

        let again = survivor_ids(
            &dedup_documents(
                Corpus::from_documents(
                    "x",
                    docs.iter()
                        .filter(|d| got.contains(&d.id))
                        .cloned()
                        .collect(),
                )
                .unwrap(),
                &cfg,
            )
            .unwrap()
            .corpus,
        );
        let resharded = survivor_ids(
            &dedup_documents(reshard(&docs, &mut rng), &cfg)
                .unwrap()
                .corpus,
        );
        let banded = survivor_ids(
            &dedup_documents(reshard(&docs, &mut rng), &DocDedupConfig::default())
                .unwrap()
                .corpus,
        );
        for (what, ok) in [
            ("all-pairs estimate oracle", got == estimated),
            ("exact-jaccard oracle", got == exact),
            ("idempotence", again == got),
            ("re-sharding", resharded == got),
            ("default banding", banded == got),
        ] {
            if !ok {
                failures.push(format!("corpus {round}: {what}"));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = failures.is_empty() && secs < 60.0;
    report(
        2,
        "dedup oracle equivalence",
        pass,
        &format!("50 corpora, {secs:.1}s, failures {failures:?}"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 3

#[test]
fn c3_sentence_boilerplate_removal() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let vocab = vocabulary(&mut rng, 3000);
    let boilerplate = [
        "Advertisement: buy two pairs of running shoes and get the third one free today!",
        "Share this story on Facebook, Twitter, WhatsApp or send it by email.",
        "Copyright © {year} Example Media Group, all rights reserved.",
        "<div class=\"footer\"> Home | About us | Contact | Privacy </div>",
        "Click here to subscribe to our daily newsletter for more updates.",
    ];
    // Each doc is a list of (sentence, is_boilerplate) on separate lines.
    let mut docs: Vec<Vec<(String, bool)>> = (0..100)
        .map(|_| {
            let n = rng.gen_range(4..=8);
            (0..n)
                .map(|_| {
                    let len = rng.gen_range(8..=16);
                    (common::sentence(&mut rng, &vocab, len), false)
                })
                .collect()
        })
        .collect();
    let mut injected = 0;
    for b in boilerplate {
        let count = rng.gen_range(20..=80);
        for &i in rand::seq::index::sample(&mut rng, 100, count)
            .iter()
            .collect::<Vec<_>>()
            .iter()
        {
            let s = b.replace("{year}", &rng.gen_range(2018..=2024).to_string());
            let at = rng.gen_range(0..=docs[i].len());
            docs[i].insert(at, (s, true));
            injected += 1;
        }
    }
    let corpus = Corpus::from_documents(
        "s",
        docs.iter()
            .enumerate()
            .map(|(i, ss)| {
                Document::new(
                    format!("doc{i:03}"),
                    ss.iter()
                        .map(|(s, _)| s.as_str())
                        .collect::<Vec<_>>()
                        .join("\n"),
                    DomainTag::WebEn,
                )
            })
            .collect(),
    )
    .unwrap();
    let cfg = SentenceDedupConfig::default();
    assert_eq!(cfg.max_doc_count, 8);
    let out = dedup_sentences(corpus, &cfg).unwrap();
    let by_id: HashMap<String, Document> = out
        .corpus
        .docs()
        .map(|d| (d.id.clone(), d.clone()))
        .collect();
    let mut boiler_left = 0;
    let mut content_lost = 0;
    for (i, ss) in docs.iter().enumerate() {
        let Some(d) = by_id.get(&format!("doc{i:03}")) else {
            content_lost += ss.iter().filter(|(_, b)| !b).count();
            continue;
        };
        let kept: Vec<String> = split_sentences(d, cfg.min_sentence_chars)
            .into_iter()
            .map(|s| s.text)
            .collect();
        let expected: Vec<String> = ss
            .iter()
            .filter(|(_, b)| !b)
            .map(|(s, _)| s.clone())
            .collect();
        boiler_left += ss.iter().filter(|(s, b)| *b && kept.contains(s)).count();
        content_lost += expected.iter().filter(|s| !kept.contains(s)).count();
    }
    let removed = injected - boiler_left;
    let pass = boiler_left == 0 && content_lost == 0;
    report(
        3,
        "sentence boilerplate removal",
        pass,
        &format!(
            "{removed}/{injected} boilerplate occurrences removed, {content_lost} content sentences lost, cumulative token removal {:.3}",
            out.stats.removal_fraction
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 4

fn accuracy(model: &QualityModel, data: &[(String, u8)]) -> f64 {
    let hits = data
        .iter()
        .filter(|(t, y)| (model.score_text(t) >= 0.5) == (*y == 1))
        .count();
    hits as f64 / data.len() as f64
}

fn finite_difference_check(
    model: &QualityModel,
    examples: &[(corpus_curate::quality::classifier::SparseVec, f64)],
) -> f64 {
    let (_, grad): (f64, Gradient) = logistic_loss_and_grad(model, examples);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    let mut coords: Vec<Option<u32>> = grad.weights.keys().take(25).map(|&k| Some(k)).collect();
    coords.push(None);
    for c in coords {
        let mut plus = model.clone();
        let mut minus = model.clone();
        let analytic = match c {
            Some(j) => {
                plus.weights[j as usize] += h;
                minus.weights[j as usize] -= h;
                grad.weights[&j]
            }
            None => {
                plus.bias += h;
                minus.bias -= h;
                grad.bias
            }
        };
        let numeric = (logistic_loss_and_grad(&plus, examples).0
            - logistic_loss_and_grad(&minus, examples).0)
            / (2.0 * h);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3);
        worst = worst.max(rel);
    }
    worst
}

#[test]
fn c4_quality_classifier() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let words = vocabulary(&mut rng, 1200);
    let (harmful_vocab, clean_vocab) = words.split_at(600);
    let mut make = |label: u8| {
        let v = if label == 1 {
            harmful_vocab
        } else {
            clean_vocab
        };
        (paragraph(&mut rng, v, 4), label)
    };
    let data: Vec<(String, u8)> = (0..400).map(|i| make((i % 2) as u8)).collect();
    let (train, held_out) = data.split_at(200);
    let pool_data: Vec<(String, u8)> = (0..200).map(|i| make((i % 2) as u8)).collect();

    let mut noise_rng = ChaCha8Rng::seed_from_u64(40);
    let noisy: Vec<LabeledText> = train
        .iter()
        .map(|(t, y)| LabeledText::new(t.clone(), if noise_rng.gen_bool(0.1) { 1 - y } else { *y }))
        .collect();
    let cfg = TrainConfig {
        dim: 1 << 16,
        epochs: 5,
        learning_rate: 0.1,
        seed: 17,
    };
    let (model, _) = train_classifier(&noisy, &cfg).unwrap();
    let mut accs = vec![accuracy(&model, held_out)];

    let truth: HashMap<String, u8> = pool_data
        .iter()
        .enumerate()
        .map(|(i, (_, y))| (format!("p{i}"), *y))
        .collect();
    let pool: Vec<Document> = pool_data
        .iter()
        .enumerate()
        .map(|(i, (t, _))| Document::new(format!("p{i}"), t.clone(), DomainTag::WebEn))
        .collect();
    let mining = MiningConfig {
        lo: 0.0,
        hi: 1.0,
        per_round: 40,
    };
    let mut m = model.clone();
    let mut seeds = noisy.clone();
    for _ in 0..3 {
        let out =
            iterative_refine(m, seeds, &pool, |d| Ok(truth[&d.id]), 1, &mining, &cfg).unwrap();
        m = out.model;
        seeds = out.seeds;
        accs.push(accuracy(&m, held_out));
    }
    let non_decreasing = accs.windows(2).all(|w| w[1] >= w[0]);

    let small = TrainConfig {
        dim: 1 << 10,
        ..cfg
    };
    let (probe, _) = train_classifier(&noisy[..40], &small).unwrap();
    let examples: Vec<_> = noisy[..40]
        .iter()
        .map(|s| (model_input(&s.text, small.dim), f64::from(s.label)))
        .collect();
    let grad_err = finite_difference_check(&probe, &examples);

    let pass = accs[0] >= 0.9 && non_decreasing && grad_err <= 1e-5;
    report(
        4,
        "quality classifier",
        pass,
        &format!("held-out accuracy by round {accs:?}, worst gradient rel. error {grad_err:.2e}"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 5

fn names(n: usize) -> Vec<String> {
    (0..n)
        .map(|i| format!("f{}.py", (b'a' + i as u8) as char))
        .collect()
}

fn permutations(items: &[String]) -> Vec<Vec<String>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut p in permutations(&rest) {
            p.insert(0, head.clone());
            out.push(p);
        }
    }
    out
}

fn respects(order: &[String], edges: &BTreeSet<(String, String)>) -> bool {
    let pos: HashMap<&String, usize> = order.iter().enumerate().map(|(i, n)| (n, i)).collect();
    edges.iter().all(|(a, b)| pos[a] < pos[b])
}

/// Step-by-step statement of the ordering rule: emit the smallest node whose
/// incoming edges are all satisfied; when none is, emit the smallest
/// remaining node and forget its unsatisfied incoming edges.
fn cycle_break_oracle(nodes: &[String], edges: &BTreeSet<(String, String)>) -> Vec<String> {
    let mut remaining: BTreeSet<String> = nodes.iter().cloned().collect();
    let mut edges = edges.clone();
    let mut out = Vec::new();
    while !remaining.is_empty() {
        let ready = remaining
            .iter()
            .find(|n| !edges.iter().any(|(a, b)| b == *n && remaining.contains(a)))
            .cloned();
        let next = match ready {
            Some(n) => n,
            None => {
                let n = remaining.iter().next().unwrap().clone();
                edges.retain(|(_, b)| *b != n);
                n
            }
        };
        remaining.remove(&next);
        out.push(next);
    }
    out
}

fn graph(nodes: &[String], edges: &BTreeSet<(String, String)>) -> RepoGraph {
    RepoGraph::new(nodes.iter().cloned(), edges.iter().cloned()).unwrap()
}

#[test]
fn c5_topological_assembly() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut dag_failures = 0;
    for _ in 0..200 {
        let n = rng.gen_range(1..=8);
        let nodes = names(n);
        let mut rank = nodes.clone();
        rank.shuffle(&mut rng);
        let p = rng.gen_range(0.0..0.6);
        let mut edges = BTreeSet::new();
        for i in 0..n {
            for j in i + 1..n {
                if rng.gen_bool(p) {
                    edges.insert((rank[i].clone(), rank[j].clone()));
                }
            }
        }
        let valid: BTreeSet<Vec<String>> = permutations(&nodes)
            .into_iter()
            .filter(|o| respects(o, &edges))
            .collect();
        let got = topo_order(&graph(&nodes, &edges));
        if !valid.contains(&got) || Some(&got) != valid.iter().next() {
            dag_failures += 1;
        }
    }

    let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    let e = |v: &[(&str, &str)]| {
        v.iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect::<BTreeSet<_>>()
    };
    let mut fixtures: Vec<(Vec<String>, BTreeSet<(String, String)>, Option<Vec<String>>)> = vec![
        (
            s(&["a", "b"]),
            e(&[("a", "b"), ("b", "a")]),
            Some(s(&["a", "b"])),
        ),
        (
            s(&["a", "b", "c"]),
            e(&[("a", "b"), ("b", "c"), ("c", "a")]),
            Some(s(&["a", "b", "c"])),
        ),
        (
            s(&["b", "c", "d", "e"]),
            e(&[("b", "c"), ("c", "b"), ("d", "b"), ("c", "e")]),
            Some(s(&["d", "b", "c", "e"])),
        ),
        (
            s(&["a", "b", "c"]),
            e(&[("c", "a"), ("a", "b"), ("b", "a")]),
            Some(s(&["c", "a", "b"])),
        ),
        (
            s(&["a", "b", "c", "d"]),
            e(&[("b", "c"), ("c", "b"), ("a", "d"), ("d", "a")]),
            Some(s(&["a", "d", "b", "c"])),
        ),
    ];
    while fixtures.len() < 20 {
        let n = rng.gen_range(2..=8);
        let nodes = names(n);
        let mut edges = BTreeSet::new();
        for i in 0..n {
            for j in 0..n {
                if i != j && rng.gen_bool(0.3) {
                    edges.insert((nodes[i].clone(), nodes[j].clone()));
                }
            }
        }
        let acyclic = permutations(&nodes).iter().any(|o| respects(o, &edges));
        if !acyclic {
            fixtures.push((nodes, edges, None));
        }
    }
    let mut cycle_failures = 0;
    for (nodes, edges, documented) in &fixtures {
        let got = topo_order(&graph(nodes, edges));
        let want = documented
            .clone()
            .unwrap_or_else(|| cycle_break_oracle(nodes, edges));
        if got != want || got != cycle_break_oracle(nodes, edges) {
            cycle_failures += 1;
        }
    }

    let mut roundtrip_failures = 0;
    for r in 0..100 {
        let n = rng.gen_range(1..=6);
        let files: Vec<(String, String)> = (0..n)
            .map(|i| {
                let body: String = (0..rng.gen_range(0..6))
                    .map(|_| {
                        [
                            "def f():",
                            "    return 1",
                            "",
                            "# ⟨FILE x⟩ mid-line",
                            "中文注释",
                            "x = '\\n'",
                        ][rng.gen_range(0..6)]
                    })
                    .collect::<Vec<_>>()
                    .join("\n");
                let body = if rng.gen_bool(0.5) { body + "\n" } else { body };
                (format!("dir{}/m{i}.py", r % 3), body)
            })
            .collect();
        let repo = Repository::new(format!("r{r}"), 0, files.clone()).unwrap();
        let mut order: Vec<String> = files.iter().map(|(p, _)| p.clone()).collect();
        order.shuffle(&mut rng);
        let doc = concat_repo(&repo, &order).unwrap();
        let back = split_repo_document(&doc.text);
        let want: Vec<(String, String)> = order
            .iter()
            .map(|p| files.iter().find(|(q, _)| q == p).unwrap().clone())
            .collect();
        if back != Some(want) {
            roundtrip_failures += 1;
        }
    }

    let pass = dag_failures == 0 && cycle_failures == 0 && roundtrip_failures == 0;
    report(
        5,
        "topological assembly",
        pass,
        &format!("dag failures {dag_failures}/200, cyclic fixture failures {cycle_failures}/20, round-trip failures {roundtrip_failures}/100"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 6

fn single_shard_inventory(tokens: &[(&str, u64)]) -> DomainInventory {
    DomainInventory::from_shards(tokens.iter().map(|(b, t)| ShardInfo {
        id: format!("{b}-0"),
        bucket: b.to_string(),
        tokens: *t,
    }))
    .unwrap()
}

#[test]
fn c6_mixture_fidelity() {
    let table = [
        ("web_zh", 405),
        ("web_en", 945),
        ("kid_zh", 300),
        ("kid_en", 450),
        ("code", 750),
        ("other", 150),
    ];
    let inventory = single_shard_inventory(&table);
    let total: u64 = table.iter().map(|(_, t)| t).sum();
    let spec = MixtureSpec::default_with_budget(total).unwrap();
    let rates = compute_sampling_rates(&inventory, &spec).unwrap();
    let exact_rates = rates.values().all(|&r| r == 1.0);
    let manifest = build_manifest(&inventory, &rates, 7);
    let table_report = validate_mixture(&manifest, &spec, 0.01);
    let table_ok = exact_rates && table_report.pass && table_report.max_deviation == 0.0;

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst_margin = f64::INFINITY;
    for case in 0..100 {
        let buckets = rng.gen_range(2..=6);
        let mut shards = Vec::new();
        for b in 0..buckets {
            for s in 0..rng.gen_range(5..=40) {
                shards.push(ShardInfo {
                    id: format!("b{b}-{s:03}"),
                    bucket: format!("b{b}"),
                    tokens: rng.gen_range(1..=100),
                });
            }
        }
        shards.shuffle(&mut rng);
        let inventory = DomainInventory::from_shards(shards).unwrap();
        let raw: Vec<f64> = (0..buckets).map(|_| rng.gen_range(0.05..1.0)).collect();
        let sum: f64 = raw.iter().sum();
        let mut weights: BTreeMap<String, f64> = raw
            .iter()
            .enumerate()
            .map(|(b, w)| (format!("b{b}"), w / sum))
            .collect();
        let drift: f64 = weights.values().sum::<f64>() - 1.0;
        *weights.get_mut("b0").unwrap() -= drift;
        let budget = (inventory.total() as f64 * rng.gen_range(0.5..3.0)) as u64;
        let spec = MixtureSpec::new(weights, budget).unwrap();
        let rates = compute_sampling_rates(&inventory, &spec).unwrap();
        let manifest = build_manifest(&inventory, &rates, case);
        let bound = inventory.max_shard_tokens() as f64 / budget as f64 + 1e-12;
        let dev = validate_mixture(&manifest, &spec, bound).max_deviation;
        worst_margin = worst_margin.min(bound - dev);
    }
    let random_ok = worst_margin >= 0.0;

    let kid = MixtureSpec::default_with_budget(1).unwrap().kid_share();
    let kid_ok = (kid - 0.25).abs() < 1e-12;

    let mut shares = Vec::new();
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(600 + seed);
        let mk = |rng: &mut ChaCha8Rng, prefix: &str, n: usize| -> Vec<Document> {
            (0..n)
                .map(|i| {
                    Document::new(
                        format!("{prefix}{i}"),
                        "tok ".repeat(rng.gen_range(50..=500)),
                        DomainTag::Code,
                    )
                })
                .collect()
        };
        let repos = mk(&mut rng, "r", 60);
        let files = mk(&mut rng, "f", 200);
        shares.push(
            mix_code_levels(repos.clone(), files.clone(), 0.62, None)
                .unwrap()
                .repo_share(),
        );
        shares.push(
            mix_code_levels(repos, files, 0.62, Some(20_000))
                .unwrap()
                .repo_share(),
        );
    }
    let split_ok = shares.iter().all(|s| (s - 0.62).abs() <= 0.02);

    let pass = table_ok && random_ok && kid_ok && split_ok;
    report(
        6,
        "mixture fidelity",
        pass,
        &format!(
            "table rates exact {exact_rates}, table deviation {}, worst bound margin {worst_margin:.2e}, kid share {kid}, code repo share range {:.4}..{:.4}",
            table_report.max_deviation,
            shares.iter().cloned().fold(f64::INFINITY, f64::min),
            shares.iter().cloned().fold(0.0, f64::max)
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 7

#[test]
fn c7_predictability_fit() {
    let xs: Vec<f64> = (0..40)
        .map(|i| 1e9 * 10f64.powf(3.0 * i as f64 / 39.0))
        .collect();
    let clean: Vec<(f64, f64)> = xs.iter().map(|&x| (x, 2.0 + 3.0 * x.ln())).collect();
    let f = fit_log_curve(&clean).unwrap();
    let noiseless_err = ((f.a - 2.0) / 2.0).abs().max(((f.b - 3.0) / 3.0).abs());

    let sigma = 0.01;
    let (a, b) = (0.25, 0.02);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let noisy: Vec<(f64, f64)> = xs
        .iter()
        .map(|&x| (x, a + b * x.ln() + sigma * normal(&mut rng)))
        .collect();
    let (first, second) = noisy.split_at(20);
    let fit = fit_log_curve(first).unwrap();
    let mut worst_vs_curve: f64 = 0.0;
    let mut mean_vs_points = 0.0;
    for &(x, y) in second {
        let pred = extrapolate(&fit, x).unwrap();
        worst_vs_curve = worst_vs_curve.max((pred - (a + b * x.ln())).abs());
        mean_vs_points += (pred - y).abs() / second.len() as f64;
    }
    let pass =
        noiseless_err <= 1e-9 && worst_vs_curve <= 3.0 * sigma && mean_vs_points <= 3.0 * sigma;
    report(
        7,
        "predictability fit",
        pass,
        &format!(
            "noiseless rel. error {noiseless_err:.1e}; held-out: max |pred - curve| {worst_vs_curve:.4}, mean |pred - y| {mean_vs_points:.4}, 3 sigma {:.2}",
            3.0 * sigma
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 8

fn golden_dir() -> &'static Path {
    Path::new(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/tests/fixtures/golden"
    ))
}

fn files_under(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != "run.json" {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn golden_run(input: &Path, out: &Path) {
    let mut cfg = PipelineConfig::load(&golden_dir().join("pipeline.json")).unwrap();
    cfg.input = input.to_path_buf();
    cfg.output_dir = out.to_path_buf();
    run_pipeline(&cfg, RunOptions::default()).unwrap();
}

#[test]
fn c8_golden_end_to_end() {
    let start = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let input = golden_dir().join("corpus.jsonl");
    golden_run(&input, &tmp.path().join("a"));
    golden_run(&input, &tmp.path().join("b"));
    let a = files_under(&tmp.path().join("a"));
    let b = files_under(&tmp.path().join("b"));
    let repeat_ok = a == b;

    // Same documents, reversed and split into uneven shard files.
    let mut docs = read_corpus(&input).unwrap().into_documents();
    docs.reverse();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let sharded = reshard(&docs, &mut rng);
    let shard_count = sharded.shards().len();
    write_corpus(&sharded, &tmp.path().join("sharded")).unwrap();
    golden_run(&tmp.path().join("sharded"), &tmp.path().join("c"));
    let reshard_ok = files_under(&tmp.path().join("c")) == a;

    let frozen_manifest = std::fs::read(golden_dir().join("manifest.json")).ok();
    let manifest = a
        .iter()
        .find(|(k, _)| k.ends_with("manifest.json"))
        .map(|(_, v)| v.clone());
    let manifest_ok = frozen_manifest.is_some() && frozen_manifest == manifest;

    let final_ids: BTreeSet<String> = read_corpus(&tmp.path().join("a/04-code-build/corpus"))
        .unwrap()
        .docs()
        .map(|d| d.id.clone())
        .collect();
    let frozen_ids: Option<BTreeSet<String>> =
        std::fs::read_to_string(golden_dir().join("survivors.txt"))
            .ok()
            .map(|s| s.lines().map(str::to_string).collect());
    let survivors_ok = frozen_ids.as_ref() == Some(&final_ids);

    let secs = start.elapsed().as_secs_f64();
    let pass = repeat_ok && reshard_ok && manifest_ok && survivors_ok && secs < 30.0;
    report(
        8,
        "golden end-to-end",
        pass,
        &format!(
            "repeat identical {repeat_ok}, {shard_count}-shard reversed input identical {reshard_ok}, manifest matches frozen {manifest_ok}, survivors match frozen {survivors_ok}, 3 runs in {secs:.1}s"
        ),
    );
    assert!(pass);
}
