//! Task-homogeneous batch assembly with in-batch deduplication.
//!
//! Every emitted batch draws from exactly one source dataset. Duplicate
//! texts inside a batch would act as false negatives under the contrastive
//! loss, so [`dedup_within_batch`] drops later offenders.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::TrainTriplet;

/// A single-source slice of training data.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub source: String,
    pub items: Vec<TrainTriplet>,
}

impl Batch {
    /// True when all items share `source` and no text appears twice across
    /// items (anchors, positives, and negatives all count).
    pub fn is_well_formed(&self) -> bool {
        let mut seen = BTreeSet::new();
        for item in &self.items {
            if item.source != self.source {
                return false;
            }
            for text in texts_of(item) {
                if !seen.insert(text) {
                    return false;
                }
            }
        }
        true
    }
}

fn texts_of(item: &TrainTriplet) -> impl Iterator<Item = &str> {
    core::iter::once(item.anchor.as_str())
        .chain(core::iter::once(item.positive.as_str()))
        .chain(item.negatives.iter().map(String::as_str))
}

/// Groups triplets by source, shuffles within each source, chunks into
/// batches of `batch_size` (final partial batch kept), and interleaves the
/// per-source batch queues in seeded random order.
pub fn task_homogeneous_batches(
    triplets: &[TrainTriplet],
    batch_size: usize,
    seed: u64,
) -> Vec<Batch> {
    assert!(batch_size >= 1, "batch_size must be at least 1");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_source: BTreeMap<&str, Vec<&TrainTriplet>> = BTreeMap::new();
    for triplet in triplets {
        by_source.entry(&triplet.source).or_default().push(triplet);
    }
    let mut queues: Vec<Vec<Batch>> = Vec::new();
    for (source, mut items) in by_source {
        items.shuffle(&mut rng);
        let batches = items
            .chunks(batch_size)
            .map(|chunk| Batch {
                source: source.into(),
                items: chunk.iter().map(|&t| t.clone()).collect(),
            })
            .collect();
        queues.push(batches);
    }
    // Draw the next batch from a randomly chosen nonempty queue. Weighting
    // by remaining batches keeps the interleave roughly proportional.
    let mut out = Vec::new();
    let mut cursors: Vec<usize> = alloc::vec![0; queues.len()];
    loop {
        let remaining: usize = queues
            .iter()
            .zip(&cursors)
            .map(|(q, &c)| q.len() - c)
            .sum();
        if remaining == 0 {
            break;
        }
        let mut pick = rng.random_range(0..remaining);
        for (queue, cursor) in queues.iter().zip(cursors.iter_mut()) {
            let left = queue.len() - *cursor;
            if pick < left {
                out.push(queue[*cursor].clone());
                *cursor += 1;
                break;
            }
            pick -= left;
        }
    }
    out
}

/// Drops each item that repeats any anchor, positive, or negative text
/// already seen in an earlier item of the batch. First occurrence wins.
pub fn dedup_within_batch(batch: Batch) -> Batch {
    let mut seen: BTreeSet<String> = BTreeSet::new();
    let mut items = Vec::with_capacity(batch.items.len());
    for item in batch.items {
        if texts_of(&item).any(|t| seen.contains(t)) {
            continue;
        }
        for text in texts_of(&item) {
            seen.insert(text.into());
        }
        items.push(item);
    }
    Batch {
        source: batch.source,
        items,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;
    use alloc::string::ToString;
    use alloc::vec;

    fn triplet(anchor: &str, source: &str) -> TrainTriplet {
        TrainTriplet::new(anchor, format!("{anchor}-pos"), vec![], source)
    }

    fn stream() -> Vec<TrainTriplet> {
        let mut rows = Vec::new();
        for i in 0..10 {
            rows.push(triplet(&format!("a{i}"), "big"));
        }
        for i in 0..5 {
            rows.push(triplet(&format!("b{i}"), "small"));
        }
        rows
    }

    #[test]
    fn batch_sizes_partition_each_dataset() {
        let batches = task_homogeneous_batches(&stream(), 4, 1);
        let mut sizes: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for batch in &batches {
            assert!(batch.is_well_formed());
            sizes.entry(batch.source.as_str()).or_default().push(batch.items.len());
        }
        let mut big = sizes["big"].clone();
        big.sort_unstable();
        assert_eq!(big, [2, 4, 4]);
        let mut small = sizes["small"].clone();
        small.sort_unstable();
        assert_eq!(small, [1, 4]);
    }

    #[test]
    fn oversized_batch_size_gives_one_batch_per_source() {
        let batches = task_homogeneous_batches(&stream(), 100, 1);
        assert_eq!(batches.len(), 2);
        for batch in &batches {
            assert!(batch.items.iter().all(|t| t.source == batch.source));
        }
    }

    #[test]
    fn batching_is_deterministic() {
        let a = task_homogeneous_batches(&stream(), 3, 9);
        let b = task_homogeneous_batches(&stream(), 3, 9);
        assert_eq!(a, b);
        let c = task_homogeneous_batches(&stream(), 3, 10);
        assert!(a != c, "different seeds should reorder");
    }

    #[test]
    fn batching_preserves_item_multiset() {
        let rows = stream();
        let batches = task_homogeneous_batches(&rows, 4, 5);
        let mut flattened: Vec<String> = batches
            .iter()
            .flat_map(|b| b.items.iter().map(|t| t.anchor.clone()))
            .collect();
        let mut expected: Vec<String> = rows.iter().map(|t| t.anchor.clone()).collect();
        flattened.sort();
        expected.sort();
        assert_eq!(flattened, expected);
    }

    #[test]
    fn dedup_drops_later_duplicates() {
        let mut dup = triplet("a1", "s");
        dup.positive = "shared".to_string();
        let mut dup2 = triplet("a2", "s");
        dup2.positive = "shared".to_string();
        let batch = Batch {
            source: "s".to_string(),
            items: vec![dup.clone(), dup2],
        };
        let out = dedup_within_batch(batch);
        assert_eq!(out.items, vec![dup]);
    }

    #[test]
    fn dedup_spans_all_roles() {
        // Second item's negative collides with the first item's anchor.
        let first = triplet("alpha", "s");
        let mut second = triplet("beta", "s");
        second.negatives = vec!["alpha".to_string()];
        let batch = Batch {
            source: "s".to_string(),
            items: vec![first.clone(), second],
        };
        let out = dedup_within_batch(batch);
        assert_eq!(out.items, vec![first]);
        assert!(out.is_well_formed());
    }

    #[test]
    fn dedup_identity_on_distinct_items() {
        let batch = Batch {
            source: "s".to_string(),
            items: vec![triplet("x", "s"), triplet("y", "s")],
        };
        let out = dedup_within_batch(batch.clone());
        assert_eq!(out, batch);
    }

    #[test]
    fn dedup_collapses_copies() {
        let item = triplet("same", "s");
        let batch = Batch {
            source: "s".to_string(),
            items: vec![item.clone(); 5],
        };
        let out = dedup_within_batch(batch);
        assert_eq!(out.items, vec![item]);
    }
}
