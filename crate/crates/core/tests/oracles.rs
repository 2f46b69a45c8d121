//! Independent reimplementations checked against the library: finite
//! differences for every analytic gradient, a from-scratch BM25 ranker, a
//! brute-force metrics calculator, a step-by-step mining walkthrough, and
//! the closed-form Spearman formula.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use embkit_core::corpus::{TextRecord, TrainTriplet};
use embkit_core::distill::{distillation_loss, DistillBatchRow};
use embkit_core::embedder::{improved_contrastive_loss, EmbedderParams, Role};
use embkit_core::lexical::{Bm25Params, InvertedIndex};
use embkit_core::metrics::{
    map_at_k, ndcg_at_k, recall_at_k, spearman_rank_correlation, MetricsError,
};
use embkit_core::mining::{mine_hard_negatives, MiningConfig, RankedList};
use embkit_core::reranker::{listwise_ce_loss, FeatureContext, RerankerParams};

const FD_STEP: f64 = 1e-5;

/// Distinct lowercase pseudo-words; each tokenizes to itself.
fn word(i: usize) -> String {
    let onsets = [
        "ba", "de", "fi", "go", "hu", "ka", "lo", "mi", "nu", "pe", "ra", "so", "tu", "ve", "wi",
        "za",
    ];
    let codas = ["r", "n", "st", "l", "m", "k", "p", "t"];
    format!("{}{}", onsets[i % 16], codas[(i / 16) % 8])
}

/// A copy of `params` with one table entry moved by `h` (gradient descent
/// with a negated unit step, since the table has no direct setter).
fn nudged(params: &EmbedderParams, idx: usize, h: f64) -> EmbedderParams {
    let mut basis = vec![0.0; params.table().len()];
    basis[idx] = 1.0;
    let mut out = params.clone();
    out.apply_gradient(&basis, -h);
    out
}

fn central_diff(params: &EmbedderParams, idx: usize, eval: impl Fn(&EmbedderParams) -> f64) -> f64 {
    (eval(&nudged(params, idx, FD_STEP)) - eval(&nudged(params, idx, -FD_STEP))) / (2.0 * FD_STEP)
}

fn assert_close(analytic: f64, numeric: f64, label: &str) {
    let tol = 1e-4 * analytic.abs().max(numeric.abs()) + 1e-8;
    assert!(
        (analytic - numeric).abs() <= tol,
        "{label}: analytic {analytic} vs numeric {numeric}"
    );
}

/// A batch-unique text of a few pool words.
fn fresh_text(rng: &mut ChaCha8Rng, taken: &mut BTreeSet<String>) -> String {
    loop {
        let n = rng.random_range(2..=3);
        let text: Vec<String> = (0..n).map(|_| word(rng.random_range(0..40))).collect();
        let text = text.join(" ");
        if taken.insert(text.clone()) {
            return text;
        }
    }
}

#[test]
fn contrastive_gradient_matches_finite_differences() {
    for instance in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(9000 + instance);
        let mut taken = BTreeSet::new();
        let mut batch = Vec::new();
        for _ in 0..2 {
            let anchor = fresh_text(&mut rng, &mut taken);
            let positive = fresh_text(&mut rng, &mut taken);
            let negatives: Vec<String> = (0..rng.random_range(0..=2))
                .map(|_| fresh_text(&mut rng, &mut taken))
                .collect();
            batch.push(TrainTriplet::new(anchor, positive, negatives, "s"));
        }
        let params =
            EmbedderParams::init(taken.iter().map(String::as_str), 3, 0.6, instance).unwrap();
        let out = improved_contrastive_loss(&params, &batch).unwrap();
        assert!(out.loss.is_finite() && out.loss > 0.0);
        for idx in 0..params.table().len() {
            let numeric = central_diff(&params, idx, |p| {
                improved_contrastive_loss(p, &batch).unwrap().loss
            });
            assert_close(out.grad[idx], numeric, &format!("instance {instance} entry {idx}"));
        }
    }
}

#[test]
fn listwise_gradient_matches_finite_differences() {
    let docs: Vec<TextRecord> = (0..6)
        .map(|i| {
            let text: Vec<String> = (0..5).map(|j| word((i * 5 + j) % 30)).collect();
            TextRecord::new(format!("d{i}"), text.join(" "), "s")
        })
        .collect();
    let index = InvertedIndex::build(&docs, Bm25Params::default()).unwrap();
    for instance in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(9100 + instance);
        let mut taken = BTreeSet::new();
        let query = fresh_text(&mut rng, &mut taken);
        let positive = fresh_text(&mut rng, &mut taken);
        let negatives: Vec<String> = (0..rng.random_range(1..=3))
            .map(|_| fresh_text(&mut rng, &mut taken))
            .collect();
        let embedder =
            EmbedderParams::init(taken.iter().map(String::as_str), 3, 0.7, instance).unwrap();
        let ctx = if instance % 2 == 0 {
            FeatureContext { index: Some(&index), embedder: Some(&embedder), max_length: 32 }
        } else {
            FeatureContext { index: None, embedder: None, max_length: 64 }
        };
        let params = RerankerParams {
            feature_weights: (0..4).map(|_| rng.random_range(-1.0..1.0)).collect(),
            bias: rng.random_range(-0.5..0.5),
        };
        let eval = |p: &RerankerParams| {
            listwise_ce_loss(p, &query, &positive, &negatives, &ctx).unwrap().loss
        };
        let out = listwise_ce_loss(&params, &query, &positive, &negatives, &ctx).unwrap();
        for w in 0..4 {
            let mut hi = params.clone();
            hi.feature_weights[w] += FD_STEP;
            let mut lo = params.clone();
            lo.feature_weights[w] -= FD_STEP;
            let numeric = (eval(&hi) - eval(&lo)) / (2.0 * FD_STEP);
            assert_close(out.weight_grad[w], numeric, &format!("instance {instance} weight {w}"));
        }
        // The bias shifts every logit equally, leaving the softmax
        // unchanged, so both derivatives must vanish.
        let mut hi = params.clone();
        hi.bias += FD_STEP;
        let mut lo = params.clone();
        lo.bias -= FD_STEP;
        let numeric_bias = (eval(&hi) - eval(&lo)) / (2.0 * FD_STEP);
        assert!(out.bias_grad.abs() < 1e-10, "instance {instance}: bias {}", out.bias_grad);
        assert!(numeric_bias.abs() < 1e-8, "instance {instance}: numeric bias {numeric_bias}");
    }
}

#[test]
fn distillation_gradient_matches_finite_differences() {
    let mut successes = 0u32;
    let mut attempt = 0u64;
    while successes < 20 {
        assert!(attempt < 120, "too many draws with tied student extremes");
        let mut rng = ChaCha8Rng::seed_from_u64(9200 + attempt);
        attempt += 1;
        let mut taken = BTreeSet::new();
        let query = fresh_text(&mut rng, &mut taken);
        let count = rng.random_range(3..=5);
        let candidates: Vec<String> =
            (0..count).map(|_| fresh_text(&mut rng, &mut taken)).collect();
        let teacher_scores: Vec<f64> = (0..count).map(|_| rng.random_range(0.0..1.0)).collect();
        let params =
            EmbedderParams::init(taken.iter().map(String::as_str), 3, 1.0, attempt).unwrap();
        // Central differences disagree with the subgradient when a nudge
        // can change which candidate is the student min or max; skip draws
        // whose extremes are nearly tied.
        let query_vec = params.encode(&query, Role::Query).unwrap();
        let mut raw: Vec<f64> = candidates
            .iter()
            .map(|c| {
                let v = params.encode(c, Role::Passage).unwrap();
                query_vec.iter().zip(&v).map(|(a, b)| a * b).sum()
            })
            .collect();
        raw.sort_by(f64::total_cmp);
        if raw[1] - raw[0] < 1e-3 || raw[count - 1] - raw[count - 2] < 1e-3 {
            continue;
        }
        let row = DistillBatchRow { query, candidates, teacher_scores };
        let out = distillation_loss(&params, &row).unwrap();
        assert!(out.loss >= 0.0);
        for idx in 0..params.table().len() {
            let numeric =
                central_diff(&params, idx, |p| distillation_loss(p, &row).unwrap().loss);
            assert_close(out.grad[idx], numeric, &format!("attempt {attempt} entry {idx}"));
        }
        successes += 1;
    }
}

#[test]
fn bm25_search_matches_exhaustive_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(31337);
    let doc_count = 400;
    let docs: Vec<TextRecord> = (0..doc_count)
        .map(|i| {
            let len = rng.random_range(3..=12);
            let text: Vec<String> = (0..len).map(|_| word(rng.random_range(0..50))).collect();
            TextRecord::new(format!("d{i:03}"), text.join(" "), "web")
        })
        .collect();
    let index = InvertedIndex::build(&docs, Bm25Params::default()).unwrap();

    // Collection statistics recomputed from scratch.
    let tokenized: Vec<Vec<&str>> = docs.iter().map(|d| d.text.split(' ').collect()).collect();
    let mut df: BTreeMap<&str, usize> = BTreeMap::new();
    for tokens in &tokenized {
        for term in tokens.iter().collect::<BTreeSet<_>>() {
            *df.entry(term).or_insert(0) += 1;
        }
    }
    let avgdl =
        tokenized.iter().map(|t| t.len() as f64).sum::<f64>() / doc_count as f64;
    let idf = |term: &str| {
        let n = doc_count as f64;
        let d = df.get(term).copied().unwrap_or(0) as f64;
        (1.0 + (n - d + 0.5) / (d + 0.5)).ln()
    };
    // Repeated query term exercises multiplicity.
    let query_terms = [word(3), word(20), word(3), word(41)];
    let score_of = |tokens: &[&str]| {
        let dl = tokens.len() as f64;
        query_terms
            .iter()
            .map(|term| {
                let tf = tokens.iter().filter(|t| **t == term.as_str()).count() as f64;
                if tf == 0.0 {
                    return 0.0;
                }
                idf(term) * tf * (1.2 + 1.0) / (tf + 1.2 * (1.0 - 0.75 + 0.75 * dl / avgdl))
            })
            .sum::<f64>()
    };

    let mut expected: Vec<(String, f64)> = Vec::new();
    for (doc, tokens) in docs.iter().zip(&tokenized) {
        let shares_term = query_terms.iter().any(|q| tokens.contains(&q.as_str()));
        let score = score_of(tokens);
        let got = index.bm25_score(&query_terms.to_vec(), &doc.id).unwrap();
        assert!((got - score).abs() <= 1e-12, "per-doc score for {}: {got} vs {score}", doc.id);
        if shares_term {
            expected.push((doc.id.clone(), score));
        }
    }
    expected.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

    let query = TextRecord::new("q", query_terms.join(" "), "web");
    for k in [1, 37, 1000] {
        let got = index.search_topk(&query, k);
        let want = &expected[..expected.len().min(k)];
        assert_eq!(got.entries.len(), want.len(), "top-{k} size");
        for ((got_id, got_score), (want_id, want_score)) in got.entries.iter().zip(want) {
            assert_eq!(got_id, want_id, "top-{k} order");
            assert!((got_score - want_score).abs() <= 1e-12, "top-{k} score for {got_id}");
        }
    }
}

#[test]
fn metrics_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(4242);
    for instance in 0..1000 {
        let mut rels: BTreeMap<String, u32> = BTreeMap::new();
        for _ in 0..rng.random_range(1..=10) {
            rels.insert(format!("doc{:02}", rng.random_range(0..15)), rng.random_range(0..=3));
        }
        let mut pool: Vec<usize> = (0..15).collect();
        pool.shuffle(&mut rng);
        let m = rng.random_range(1..=15);
        let ranking: Vec<String> = pool[..m].iter().map(|i| format!("doc{i:02}")).collect();
        let k = rng.random_range(1..=12);

        if rels.values().all(|&g| g == 0) {
            for result in [
                ndcg_at_k(&ranking, &rels, k),
                map_at_k(&ranking, &rels, k),
                recall_at_k(&ranking, &rels, k),
            ] {
                assert_eq!(result, Err(MetricsError::NoRelevantDocs));
            }
            continue;
        }

        let grade = |d: &String| rels.get(d).copied().unwrap_or(0);
        let gain = |g: u32| 2f64.powi(g as i32) - 1.0;

        let dcg: f64 = ranking
            .iter()
            .take(k)
            .enumerate()
            .map(|(i, d)| gain(grade(d)) / ((i + 2) as f64).log2())
            .sum();
        let mut grades: Vec<u32> = rels.values().copied().collect();
        grades.sort_unstable_by(|a, b| b.cmp(a));
        let idcg: f64 = grades
            .iter()
            .take(k)
            .enumerate()
            .map(|(i, &g)| gain(g) / ((i + 2) as f64).log2())
            .sum();
        let want_ndcg = dcg / idcg;

        let total_relevant = rels.values().filter(|&&g| g > 0).count();
        let mut hits = 0usize;
        let mut precision_sum = 0.0;
        let mut found = 0usize;
        for (i, d) in ranking.iter().take(k).enumerate() {
            if grade(d) > 0 {
                hits += 1;
                precision_sum += hits as f64 / (i + 1) as f64;
                found += 1;
            }
        }
        let want_map = precision_sum / total_relevant.min(k) as f64;
        let want_recall = found as f64 / total_relevant as f64;

        let got_ndcg = ndcg_at_k(&ranking, &rels, k).unwrap();
        let got_map = map_at_k(&ranking, &rels, k).unwrap();
        let got_recall = recall_at_k(&ranking, &rels, k).unwrap();
        assert!((got_ndcg - want_ndcg).abs() <= 1e-12, "instance {instance} ndcg");
        assert!((got_map - want_map).abs() <= 1e-12, "instance {instance} map");
        assert!((got_recall - want_recall).abs() <= 1e-12, "instance {instance} recall");
    }
}

#[test]
fn mining_pipeline_matches_step_by_step_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(777);
    let answer = "needle";
    let doc_texts: BTreeMap<String, String> = (0..300)
        .map(|i| {
            let middle = if i % 7 == 3 { answer.to_string() } else { word((i + 9) % 40) };
            (format!("c{i:03}"), format!("{} {} {}", word(i % 40), middle, word((i + 17) % 40)))
        })
        .collect();
    let pick_ranking = |rng: &mut ChaCha8Rng| {
        let mut ids: Vec<usize> = (0..300).collect();
        ids.shuffle(rng);
        let entries: Vec<(String, f64)> = ids
            .into_iter()
            .take(150)
            .enumerate()
            .map(|(rank, i)| (format!("c{i:03}"), (150 - rank) as f64))
            .collect();
        RankedList::new("q7", entries)
    };
    let bm25_list = pick_ranking(&mut rng);
    let dense_list = pick_ranking(&mut rng);

    // By hand: fuse, sort, window positions 30..=100, split on answer
    // containment, cap at 63.
    let mut fused: BTreeMap<String, f64> = BTreeMap::new();
    for list in [&bm25_list, &dense_list] {
        for (rank0, (id, _)) in list.entries.iter().enumerate() {
            *fused.entry(id.clone()).or_insert(0.0) += 1.0 / (60.0 + (rank0 + 1) as f64);
        }
    }
    let mut order: Vec<(String, f64)> = fused.into_iter().collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let window: Vec<String> =
        order.iter().skip(29).take(71).map(|(id, _)| id.clone()).collect();
    let (want_mined, mut want_negatives): (Vec<String>, Vec<String>) =
        window.into_iter().partition(|id| doc_texts[id].contains(answer));
    want_negatives.truncate(63);

    let query = TextRecord::new("q7", "unused query text", "qa");
    let cfg = MiningConfig::default();
    let outcome =
        mine_hard_negatives(&query, Some(answer), &bm25_list, &dense_list, &cfg, &doc_texts)
            .unwrap();
    assert_eq!(outcome.negatives, want_negatives);
    assert_eq!(outcome.mined_positives, want_mined);
    assert!(outcome.negatives.len() <= 63);
    assert!(!outcome.mined_positives.is_empty(), "the draw should window some answer docs");

    // And without an answer the window passes through uncut except for the
    // cap.
    let plain =
        mine_hard_negatives(&query, None, &bm25_list, &dense_list, &cfg, &doc_texts).unwrap();
    let full_window: Vec<String> =
        order.iter().skip(29).take(71).map(|(id, _)| id.clone()).collect();
    assert_eq!(plain.negatives, full_window[..63].to_vec());
    assert!(plain.mined_positives.is_empty());
}

#[test]
fn spearman_matches_closed_form_without_ties() {
    let mut rng = ChaCha8Rng::seed_from_u64(555);
    for _ in 0..200 {
        let n = rng.random_range(2..=30);
        let mut rank_a: Vec<usize> = (0..n).collect();
        let mut rank_b: Vec<usize> = (0..n).collect();
        rank_a.shuffle(&mut rng);
        rank_b.shuffle(&mut rng);
        // Feed values whose sort order reproduces the drawn ranks.
        let a: Vec<f64> = rank_a.iter().map(|&r| r as f64 * 1.5 - 3.0).collect();
        let b: Vec<f64> = rank_b.iter().map(|&r| r as f64 * 0.25 + 1.0).collect();
        let d2: f64 = rank_a
            .iter()
            .zip(&rank_b)
            .map(|(&x, &y)| {
                let d = x as f64 - y as f64;
                d * d
            })
            .sum();
        let n_f = n as f64;
        let want = 1.0 - 6.0 * d2 / (n_f * (n_f * n_f - 1.0));
        match spearman_rank_correlation(&a, &b) {
            Ok(got) => assert!((got - want).abs() <= 1e-12, "{got} vs {want}"),
            // n = 2 with identical permutations still correlates; the
            // closed form handles every n >= 2, so any error is a bug.
            Err(e) => panic!("unexpected error: {e}"),
        }
    }
}
