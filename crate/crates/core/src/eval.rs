//! Threshold fitting, classification reports and ranking metrics.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::{LabelVector, RelationVocab};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn add(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn merge(&mut self, other: &Confusion) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.tn += other.tn;
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// `2TP / (2TP + FP + FN)`, which equals `2PR/(P+R)` whenever that is defined.
    pub fn f1(&self) -> f64 {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.total())
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// A fitted decision threshold and the F1 it attains on the fitting data.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Threshold {
    pub value: f64,
    pub f1: f64,
}

/// Smallest threshold among the unique scores that maximizes F1 under the
/// rule `p >= t`.
pub fn select_threshold(scores: &[(f64, bool)]) -> Result<Threshold> {
    let positives = scores.iter().filter(|s| s.1).count() as u64;
    if positives == 0 {
        return Err(Error::Threshold("no positive examples to fit against".into()));
    }
    if scores.iter().any(|s| !s.0.is_finite()) {
        return Err(Error::Threshold("non-finite score".into()));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let negatives = sorted.len() as u64 - positives;
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut best: Option<Threshold> = None;
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == t {
            if sorted[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let c = Confusion {
            tp,
            fp,
            fn_: positives - tp,
            tn: negatives - fp,
        };
        let f1 = c.f1();
        // Descending sweep: a later equal F1 belongs to a smaller threshold.
        if best.is_none_or(|b| f1 >= b.f1) {
            best = Some(Threshold { value: t, f1 });
        }
    }
    Ok(best.expect("at least one positive score"))
}

/// One evaluated pair: a probability per scored type and the gold labels.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredPair {
    pub probs: Vec<f64>,
    pub label: LabelVector,
}

/// Fits one threshold per type. NA pairs act as negatives for every type.
pub fn fit_thresholds(rows: &[ScoredPair], k: usize) -> Result<Vec<f64>> {
    (0..k)
        .map(|j| {
            let column: Vec<(f64, bool)> = rows.iter().map(|r| (r.probs[j], r.label.get(j))).collect();
            select_threshold(&column)
                .map(|t| t.value)
                .map_err(|e| Error::Threshold(format!("type {j}: {e}")))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub name: String,
    pub counts: Confusion,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Metrics {
    pub fn from_counts(name: impl Into<String>, counts: Confusion) -> Self {
        Metrics {
            name: name.into(),
            counts,
            accuracy: counts.accuracy(),
            precision: counts.precision(),
            recall: counts.recall(),
            f1: counts.f1(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub micro: Metrics,
    pub types: Vec<Metrics>,
    /// Pairs scored out of pairs requested.
    pub scored: usize,
    pub requested: usize,
}

pub const METRIC_NAMES: [&str; 4] = ["accuracy", "precision", "recall", "f1"];

impl EvalReport {
    /// Column labels: `micro` followed by the scored type names.
    pub fn columns(&self) -> Vec<&str> {
        std::iter::once(self.micro.name.as_str())
            .chain(self.types.iter().map(|m| m.name.as_str()))
            .collect()
    }

    fn cells(&self) -> Vec<[f64; 4]> {
        std::iter::once(&self.micro)
            .chain(&self.types)
            .map(|m| [m.accuracy, m.precision, m.recall, m.f1])
            .collect()
    }

    /// Tab-separated `metric` rows against `micro`/type columns.
    pub fn to_tsv(&self) -> String {
        let mut s = format!("metric\t{}\n", self.columns().join("\t"));
        let cells = self.cells();
        for (i, name) in METRIC_NAMES.iter().enumerate() {
            s.push_str(name);
            for c in &cells {
                let _ = write!(s, "\t{:.6}", c[i]);
            }
            s.push('\n');
        }
        s
    }

    /// Fixed-width table with percentages.
    pub fn to_table(&self) -> String {
        let cols = self.columns();
        let mut s = format!("{:<10}", "");
        for c in &cols {
            let _ = write!(s, "{c:>9}");
        }
        s.push('\n');
        let cells = self.cells();
        for (i, name) in METRIC_NAMES.iter().enumerate() {
            let _ = write!(s, "{name:<10}");
            for c in &cells {
                let _ = write!(s, "{:>9.1}", 100.0 * c[i]);
            }
            s.push('\n');
        }
        let _ = writeln!(s, "coverage  {}/{} pairs", self.scored, self.requested);
        s
    }
}

/// Per-type and micro-averaged metrics with the decision rule `p >= t_k`.
pub fn compute_report(rows: &[ScoredPair], thresholds: &[f64], vocab: &RelationVocab) -> Result<EvalReport> {
    let k = vocab.k();
    if thresholds.len() != k {
        return Err(Error::Evaluation(format!("{} thresholds for {k} relation types", thresholds.len())));
    }
    let mut counts = vec![Confusion::default(); k];
    for r in rows {
        if r.probs.len() != k || r.label.len() != k {
            return Err(Error::Evaluation(format!("row has {} scores and {} labels, expected {k}", r.probs.len(), r.label.len())));
        }
        for j in 0..k {
            counts[j].add(r.probs[j] >= thresholds[j], r.label.get(j));
        }
    }
    let mut pooled = Confusion::default();
    counts.iter().for_each(|c| pooled.merge(c));
    Ok(EvalReport {
        micro: Metrics::from_counts("micro", pooled),
        types: vocab.scored().iter().zip(counts).map(|(n, c)| Metrics::from_counts(n.clone(), c)).collect(),
        scored: rows.len(),
        requested: rows.len(),
    })
}

/// One ranking query: scores of every candidate object, truth included.
#[derive(Clone, Debug, PartialEq)]
pub struct RankQuery {
    pub scores: Vec<f64>,
    pub truth: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankMetrics {
    pub mrr: f64,
    /// `(k, Hits@k)` in the order requested.
    pub hits: Vec<(usize, f64)>,
    pub queries: usize,
}

impl RankMetrics {
    pub fn hits_at(&self, k: usize) -> Option<f64> {
        self.hits.iter().find(|h| h.0 == k).map(|h| h.1)
    }
}

/// Rank of the truth, higher scores first; ties share the mean of their ranks.
pub fn rank_of(q: &RankQuery) -> Result<f64> {
    let t = *q
        .scores
        .get(q.truth)
        .ok_or_else(|| Error::Evaluation(format!("truth index {} outside {} candidates", q.truth, q.scores.len())))?;
    let higher = q.scores.iter().filter(|&&s| s > t).count();
    let ties = q.scores.iter().filter(|&&s| s == t).count() - 1;
    Ok(1.0 + higher as f64 + ties as f64 / 2.0)
}

/// Mean reciprocal rank and Hits@k over object-corruption queries.
pub fn rank_metrics(queries: &[RankQuery], ks: &[usize]) -> Result<RankMetrics> {
    if queries.is_empty() {
        return Err(Error::Evaluation("no ranking queries".into()));
    }
    let mut ranks = Vec::with_capacity(queries.len());
    for q in queries {
        if q.scores.is_empty() {
            return Err(Error::Evaluation("empty candidate set".into()));
        }
        ranks.push(rank_of(q)?);
    }
    let n = ranks.len() as f64;
    Ok(RankMetrics {
        mrr: ranks.iter().map(|r| 1.0 / r).sum::<f64>() / n,
        hits: ks.iter().map(|&k| (k, ranks.iter().filter(|&&r| r <= k as f64).count() as f64 / n)).collect(),
        queries: queries.len(),
    })
}
