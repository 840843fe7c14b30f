//! Answer normalization, exact match, token F1, hits@k and report
//! aggregation.
//!
//! F1 sums are kept in fixed point (`F1_SCALE` units per example) so that
//! merging shards is exact integer addition: any partition of the same
//! examples merges to the same report, whatever the order.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};

use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::messages::Message;

/// Fixed-point units per unit of F1.
pub const F1_SCALE: u64 = 1_000_000_000;

/// Default hits@k buckets.
pub const DEFAULT_HITS_AT: [usize; 4] = [1, 5, 10, 100];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricError {
    #[error("labels must not be empty")]
    EmptyLabels,
    #[error("k must be at least 1")]
    ZeroK,
}

/// Lowercase, strip ASCII punctuation, drop the articles a/an/the, and
/// collapse whitespace.
pub fn normalize_answer(s: &str) -> String {
    let lowered = s.to_lowercase();
    let stripped: String = lowered.chars().filter(|c| !c.is_ascii_punctuation()).collect();
    stripped
        .split_whitespace()
        .filter(|tok| !matches!(*tok, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn exact_match(prediction: &str, labels: &[String]) -> Result<bool, MetricError> {
    if labels.is_empty() {
        return Err(MetricError::EmptyLabels);
    }
    let pred = normalize_answer(prediction);
    Ok(labels.iter().any(|l| normalize_answer(l) == pred))
}

fn token_f1(pred: &[&str], gold: &[&str]) -> f64 {
    if pred.is_empty() || gold.is_empty() {
        return if pred.is_empty() && gold.is_empty() { 1.0 } else { 0.0 };
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in gold {
        *counts.entry(t).or_default() += 1;
    }
    let mut common = 0usize;
    for t in pred {
        if let Some(c) = counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / pred.len() as f64;
    let recall = common as f64 / gold.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Bag-of-tokens F1, maximized over labels.
pub fn f1(prediction: &str, labels: &[String]) -> Result<f64, MetricError> {
    if labels.is_empty() {
        return Err(MetricError::EmptyLabels);
    }
    let pred = normalize_answer(prediction);
    let pred_tokens: Vec<&str> = pred.split(' ').filter(|t| !t.is_empty()).collect();
    Ok(labels
        .iter()
        .map(|l| {
            let gold = normalize_answer(l);
            let gold_tokens: Vec<&str> = gold.split(' ').filter(|t| !t.is_empty()).collect();
            token_f1(&pred_tokens, &gold_tokens)
        })
        .fold(0.0, f64::max))
}

pub fn hits_at_k(ranked: &[String], labels: &[String], k: usize) -> Result<bool, MetricError> {
    if k == 0 {
        return Err(MetricError::ZeroK);
    }
    let gold: Vec<String> = labels.iter().map(|l| normalize_answer(l)).collect();
    Ok(ranked.iter().take(k).any(|c| gold.contains(&normalize_answer(c))))
}

fn f1_units(f1: f64) -> u64 {
    (f1.clamp(0.0, 1.0) * F1_SCALE as f64).round() as u64
}

/// Accumulated evaluation counters, optionally broken down per task.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MetricsReport {
    pub examples: u64,
    pub correct: u64,
    /// Sum of per-example F1 in units of `1 / F1_SCALE`.
    pub f1_units: u64,
    /// Only buckets that have been scored at least once are present.
    pub hits_at: BTreeMap<usize, u64>,
    /// Episodes dropped because a participant left mid-episode.
    pub abandoned_episodes: u64,
    pub per_task: BTreeMap<String, MetricsReport>,
}

impl MetricsReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        *self == Self::default()
    }

    pub fn accuracy(&self) -> f64 {
        if self.examples == 0 {
            0.0
        } else {
            self.correct as f64 / self.examples as f64
        }
    }

    pub fn f1_sum(&self) -> f64 {
        self.f1_units as f64 / F1_SCALE as f64
    }

    pub fn mean_f1(&self) -> f64 {
        if self.examples == 0 {
            0.0
        } else {
            self.f1_sum() / self.examples as f64
        }
    }

    pub fn hits_rate(&self, k: usize) -> Option<f64> {
        let hits = *self.hits_at.get(&k)?;
        Some(if self.examples == 0 { 0.0 } else { hits as f64 / self.examples as f64 })
    }

    /// Scores one reply against the expected labels. Returns false (and
    /// records nothing) when `labels` is empty.
    pub fn record(&mut self, reply: &Message, labels: &[String], buckets: &[usize]) -> bool {
        if labels.is_empty() {
            return false;
        }
        let prediction = reply.text.as_deref().unwrap_or("");
        self.examples += 1;
        if exact_match(prediction, labels).unwrap_or(false) {
            self.correct += 1;
        }
        self.f1_units += f1_units(f1(prediction, labels).unwrap_or(0.0));
        if let Some(ranked) = &reply.text_candidates {
            for &k in buckets.iter().filter(|&&k| k > 0) {
                let hit = hits_at_k(ranked, labels, k).unwrap_or(false);
                *self.hits_at.entry(k).or_default() += u64::from(hit);
            }
        }
        true
    }

    pub fn merge_from(&mut self, other: &MetricsReport) {
        self.examples += other.examples;
        self.correct += other.correct;
        self.f1_units += other.f1_units;
        self.abandoned_episodes += other.abandoned_episodes;
        for (k, v) in &other.hits_at {
            *self.hits_at.entry(*k).or_default() += v;
        }
        for (task, sub) in &other.per_task {
            self.per_task.entry(task.clone()).or_default().merge_from(sub);
        }
    }

    /// The same counters without the per-task breakdown.
    pub fn totals(&self) -> MetricsReport {
        MetricsReport { per_task: BTreeMap::new(), ..self.clone() }
    }

    pub fn merge(&self, other: &MetricsReport) -> MetricsReport {
        let mut out = self.clone();
        out.merge_from(other);
        out
    }

    /// Checks the counter invariants, recursively.
    pub fn check_invariants(&self) -> Result<(), String> {
        if self.correct > self.examples {
            return Err(format!("correct {} > examples {}", self.correct, self.examples));
        }
        if self.f1_units > self.examples * F1_SCALE {
            return Err(format!("f1 sum {} > examples {}", self.f1_sum(), self.examples));
        }
        let mut prev = 0;
        for (k, v) in &self.hits_at {
            if *v > self.examples {
                return Err(format!("hits@{k} {v} > examples {}", self.examples));
            }
            if *v < prev {
                return Err(format!("hits@{k} decreases"));
            }
            prev = *v;
        }
        for (task, sub) in &self.per_task {
            sub.check_invariants().map_err(|e| format!("{task}: {e}"))?;
        }
        Ok(())
    }

    /// Flat `key=value` lines with indented `[task]` sections.
    pub fn render(&self) -> String {
        let mut out = String::new();
        self.render_into(&mut out, 0);
        out
    }

    fn render_into(&self, out: &mut String, depth: usize) {
        let pad = "  ".repeat(depth);
        let _ = writeln!(out, "{pad}examples={}", self.examples);
        let _ = writeln!(out, "{pad}correct={}", self.correct);
        let _ = writeln!(out, "{pad}accuracy={:.6}", self.accuracy());
        let _ = writeln!(out, "{pad}f1={:.6}", self.mean_f1());
        for k in self.hits_at.keys() {
            let _ = writeln!(out, "{pad}hits@{k}={:.6}", self.hits_rate(*k).unwrap_or(0.0));
        }
        let _ = writeln!(out, "{pad}abandoned_episodes={}", self.abandoned_episodes);
        for (task, sub) in &self.per_task {
            let _ = writeln!(out, "{pad}[{task}]");
            sub.render_into(out, depth + 1);
        }
    }

    /// Machine-readable form. Keys are sorted, so identical reports give
    /// identical bytes.
    pub fn to_json(&self) -> Value {
        let hits: Map<String, Value> = self.hits_at.iter().map(|(k, v)| (k.to_string(), json!(v))).collect();
        let per_task: Map<String, Value> = self.per_task.iter().map(|(k, v)| (k.clone(), v.to_json())).collect();
        json!({
            "examples": self.examples,
            "correct": self.correct,
            "accuracy": self.accuracy(),
            "f1": self.mean_f1(),
            "f1_sum": self.f1_sum(),
            "hits_at": hits,
            "abandoned_episodes": self.abandoned_episodes,
            "per_task": per_task,
        })
    }
}

/// Report totals shared between threads. Per-task sections are not tracked.
#[derive(Debug)]
pub struct SharedMetrics {
    examples: AtomicU64,
    correct: AtomicU64,
    f1_units: AtomicU64,
    abandoned: AtomicU64,
    /// Bucket, hit count, and whether the bucket was ever scored.
    hits: Vec<(usize, AtomicU64, AtomicBool)>,
}

impl SharedMetrics {
    pub fn new(buckets: &[usize]) -> Self {
        let mut ks: Vec<usize> = buckets.iter().copied().filter(|&k| k > 0).collect();
        ks.sort_unstable();
        ks.dedup();
        SharedMetrics {
            examples: AtomicU64::new(0),
            correct: AtomicU64::new(0),
            f1_units: AtomicU64::new(0),
            abandoned: AtomicU64::new(0),
            hits: ks.into_iter().map(|k| (k, AtomicU64::new(0), AtomicBool::new(false))).collect(),
        }
    }

    pub fn record(&self, reply: &Message, labels: &[String]) -> bool {
        let buckets: Vec<usize> = self.hits.iter().map(|(k, _, _)| *k).collect();
        let mut local = MetricsReport::new();
        if !local.record(reply, labels, &buckets) {
            return false;
        }
        self.absorb(&local);
        true
    }

    /// Adds the totals of `report`. Hits buckets not configured here are
    /// dropped.
    pub fn absorb(&self, report: &MetricsReport) {
        self.examples.fetch_add(report.examples, Ordering::Relaxed);
        self.correct.fetch_add(report.correct, Ordering::Relaxed);
        self.f1_units.fetch_add(report.f1_units, Ordering::Relaxed);
        self.abandoned.fetch_add(report.abandoned_episodes, Ordering::Relaxed);
        for (k, counter, scored) in &self.hits {
            if let Some(v) = report.hits_at.get(k) {
                counter.fetch_add(*v, Ordering::Relaxed);
                scored.store(true, Ordering::Release);
            }
        }
    }

    pub fn snapshot(&self) -> MetricsReport {
        let mut r = MetricsReport {
            examples: self.examples.load(Ordering::Acquire),
            correct: self.correct.load(Ordering::Acquire),
            f1_units: self.f1_units.load(Ordering::Acquire),
            abandoned_episodes: self.abandoned.load(Ordering::Acquire),
            ..Default::default()
        };
        for (k, counter, scored) in &self.hits {
            if scored.load(Ordering::Acquire) {
                r.hits_at.insert(*k, counter.load(Ordering::Acquire));
            }
        }
        r
    }
}
