//! Negative pairs for the classifier losses and corrupted triplets for the
//! ranking baselines.

use std::collections::HashSet;

use rand::seq::index;
use rand::Rng;

use crate::data::{CooccurrenceMatrix, KnowledgeGraph, Triplet};
use crate::error::{Error, Result};

/// Unordered pairs listed in `cooc` with a count below `threshold` and not
/// in `excluded` in either orientation, in canonical order.
pub fn negative_pool(cooc: &CooccurrenceMatrix, excluded: &HashSet<(String, String)>, threshold: u64) -> Vec<(String, String)> {
    cooc.iter()
        .filter(|&(a, b, c)| {
            c < threshold && !excluded.contains(&(a.to_string(), b.to_string())) && !excluded.contains(&(b.to_string(), a.to_string()))
        })
        .map(|(a, b, _)| (a.to_string(), b.to_string()))
        .collect()
}

/// Draws `n` pool pairs without replacement. Each drawn pair is oriented at
/// random. A pool smaller than `n` is returned whole.
pub fn sample_negatives<R: Rng + ?Sized>(
    cooc: &CooccurrenceMatrix,
    positives: &HashSet<(String, String)>,
    threshold: u64,
    n: usize,
    rng: &mut R,
) -> Vec<(String, String)> {
    draw(&negative_pool(cooc, positives, threshold), n, rng)
}

/// [`sample_negatives`] over a precomputed pool.
pub fn draw<R: Rng + ?Sized>(pool: &[(String, String)], n: usize, rng: &mut R) -> Vec<(String, String)> {
    if pool.len() < n {
        log::warn!("negative pool has {} pairs, fewer than the {n} requested", pool.len());
    }
    let take = n.min(pool.len());
    let mut picks: Vec<usize> = index::sample(rng, pool.len(), take).into_vec();
    picks.sort_unstable();
    picks
        .into_iter()
        .map(|i| {
            let (a, b) = &pool[i];
            if rng.random::<bool>() {
                (b.clone(), a.clone())
            } else {
                (a.clone(), b.clone())
            }
        })
        .collect()
}

/// `n` copies of `triplet` with the object replaced by a uniformly drawn node
/// such that the result is neither a known edge nor a self loop.
pub fn corrupt_negatives<R: Rng + ?Sized>(kg: &KnowledgeGraph, triplet: &Triplet, n: usize, rng: &mut R) -> Result<Vec<Triplet>> {
    let candidates: Vec<&str> = kg
        .nodes()
        .iter()
        .map(String::as_str)
        .filter(|&o| {
            o != triplet.subject
                && !kg.contains(&Triplet {
                    subject: triplet.subject.clone(),
                    relation: triplet.relation,
                    object: o.to_string(),
                })
        })
        .collect();
    if candidates.is_empty() {
        return Err(Error::Sampling(format!(
            "no corruption of ({}, {}) avoids known edges",
            triplet.subject, triplet.object
        )));
    }
    Ok((0..n)
        .map(|_| Triplet {
            subject: triplet.subject.clone(),
            relation: triplet.relation,
            object: candidates[rng.random_range(0..candidates.len())].to_string(),
        })
        .collect())
}
