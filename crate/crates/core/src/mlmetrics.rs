//! Multi-label evaluation metrics.
//!
//! Rankings break ties by the lower index. Rows (or label columns) for
//! which a metric is undefined are skipped and counted. Every average is
//! accumulated in index order so results are reproducible bit for bit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Scores and binary labels, both `[N×C]` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalBatch {
    n: usize,
    c: usize,
    scores: Vec<f64>,
    labels: Vec<u8>,
    pub threshold: f64,
}

impl EvalBatch {
    pub fn new(n: usize, c: usize, scores: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        if scores.len() != n * c {
            return Err(Error::dim("EvalBatch scores", &[n, c], &[scores.len()]));
        }
        if labels.len() != n * c {
            return Err(Error::dim("EvalBatch labels", &[n, c], &[labels.len()]));
        }
        if labels.iter().any(|&y| y > 1) {
            return Err(Error::Input("labels must be 0 or 1".into()));
        }
        if scores.iter().any(|s| s.is_nan()) {
            return Err(Error::Input("scores contain NaN".into()));
        }
        Ok(Self {
            n,
            c,
            scores,
            labels,
            threshold: DEFAULT_THRESHOLD,
        })
    }

    pub fn from_rows(scores: &[Vec<f64>], labels: &[Vec<u8>]) -> Result<Self> {
        let n = scores.len();
        let c = scores.first().map_or(0, Vec::len);
        if labels.len() != n || scores.iter().any(|r| r.len() != c) || labels.iter().any(|r| r.len() != c) {
            return Err(Error::Input("ragged or mismatched score/label rows".into()));
        }
        Self::new(n, c, scores.concat(), labels.concat())
    }

    pub fn with_threshold(mut self, threshold: f64) -> Result<Self> {
        if !threshold.is_finite() {
            return Err(Error::Config(format!("threshold must be finite, got {threshold}")));
        }
        self.threshold = threshold;
        Ok(self)
    }

    pub fn n_samples(&self) -> usize {
        self.n
    }

    pub fn n_labels(&self) -> usize {
        self.c
    }

    pub fn score(&self, i: usize, j: usize) -> f64 {
        self.scores[i * self.c + j]
    }

    pub fn label(&self, i: usize, j: usize) -> bool {
        self.labels[i * self.c + j] == 1
    }

    fn score_row(&self, i: usize) -> &[f64] {
        &self.scores[i * self.c..(i + 1) * self.c]
    }

    fn label_row(&self, i: usize) -> &[u8] {
        &self.labels[i * self.c..(i + 1) * self.c]
    }
}

/// A mean over the rows or columns where the metric is defined.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Averaged {
    /// NaN when nothing could be evaluated.
    pub value: f64,
    pub evaluated: usize,
    pub skipped: usize,
}

impl Averaged {
    fn from_terms(terms: impl Iterator<Item = Option<f64>>) -> Self {
        let mut sum = 0.0;
        let mut evaluated = 0;
        let mut skipped = 0;
        for t in terms {
            match t {
                Some(v) => {
                    sum += v;
                    evaluated += 1;
                }
                None => skipped += 1,
            }
        }
        let value = if evaluated == 0 { f64::NAN } else { sum / evaluated as f64 };
        Self {
            value,
            evaluated,
            skipped,
        }
    }
}

/// Indices sorted by descending score, ties by ascending index.
fn ranking(scores: impl Iterator<Item = f64>) -> Vec<usize> {
    let s: Vec<f64> = scores.collect();
    let mut idx: Vec<usize> = (0..s.len()).collect();
    idx.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
    idx
}

/// Average precision of one ranked list: for each relevant item, the
/// fraction of relevant items at or above its rank, averaged in item
/// index order. `None` if nothing is relevant.
fn average_precision(scores: impl Iterator<Item = f64>, relevant: &[bool]) -> Option<f64> {
    let order = ranking(scores);
    let mut precision = vec![0.0; relevant.len()];
    let mut hits = 0usize;
    for (pos, &item) in order.iter().enumerate() {
        if relevant[item] {
            hits += 1;
            precision[item] = hits as f64 / (pos + 1) as f64;
        }
    }
    if hits == 0 {
        return None;
    }
    let sum: f64 = (0..relevant.len()).filter(|&i| relevant[i]).map(|i| precision[i]).sum();
    Some(sum / hits as f64)
}

/// Fraction of samples whose top-ranked label is irrelevant.
pub fn one_error(batch: &EvalBatch) -> Averaged {
    Averaged::from_terms((0..batch.n).map(|i| {
        let y = batch.label_row(i);
        if !y.contains(&1) || batch.c == 0 {
            return None;
        }
        let top = ranking(batch.score_row(i).iter().copied())[0];
        Some(if y[top] == 1 { 0.0 } else { 1.0 })
    }))
}

/// Mean fraction of relevant/irrelevant label pairs ranked the wrong way
/// round; tied pairs count one half.
pub fn ranking_loss(batch: &EvalBatch) -> Averaged {
    Averaged::from_terms((0..batch.n).map(|i| {
        let s = batch.score_row(i);
        let y = batch.label_row(i);
        let pos: Vec<f64> = (0..batch.c).filter(|&j| y[j] == 1).map(|j| s[j]).collect();
        let neg: Vec<f64> = (0..batch.c).filter(|&j| y[j] == 0).map(|j| s[j]).collect();
        if pos.is_empty() || neg.is_empty() {
            return None;
        }
        let mut half_units = 0u64;
        for &p in &pos {
            for &q in &neg {
                if p < q {
                    half_units += 2;
                } else if p == q {
                    half_units += 1;
                }
            }
        }
        let pairs = (pos.len() * neg.len()) as f64;
        Some(half_units as f64 / 2.0 / pairs)
    }))
}

/// Example-based average precision over each sample's label ranking.
pub fn example_ap(batch: &EvalBatch) -> Averaged {
    Averaged::from_terms((0..batch.n).map(|i| {
        let rel: Vec<bool> = batch.label_row(i).iter().map(|&y| y == 1).collect();
        average_precision(batch.score_row(i).iter().copied(), &rel)
    }))
}

/// Per-label average precision over the sample ranking; `None` for labels
/// without positive samples.
pub fn per_label_ap(batch: &EvalBatch) -> Vec<Option<f64>> {
    (0..batch.c)
        .map(|j| {
            let rel: Vec<bool> = (0..batch.n).map(|i| batch.label(i, j)).collect();
            average_precision((0..batch.n).map(|i| batch.score(i, j)), &rel)
        })
        .collect()
}

/// Mean of the per-label average precisions.
pub fn mean_ap(batch: &EvalBatch) -> Averaged {
    Averaged::from_terms(per_label_ap(batch).into_iter())
}

/// Confusion counts of one label column (or pooled).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl Confusion {
    /// `2·TP / (2·TP + FP + FN)`, zero when the denominator is zero.
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            0.0
        } else {
            (2 * self.tp) as f64 / denom as f64
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct F1Scores {
    pub micro: f64,
    pub macro_: f64,
}

/// A cell is predicted positive when its score is at least the threshold.
pub fn micro_macro_f1(batch: &EvalBatch) -> F1Scores {
    let mut per = vec![Confusion::default(); batch.c];
    for i in 0..batch.n {
        for j in 0..batch.c {
            let pred = batch.score(i, j) >= batch.threshold;
            let truth = batch.label(i, j);
            match (pred, truth) {
                (true, true) => per[j].tp += 1,
                (true, false) => per[j].fp += 1,
                (false, true) => per[j].fn_ += 1,
                (false, false) => {}
            }
        }
    }
    let pooled = per.iter().fold(Confusion::default(), |acc, c| Confusion {
        tp: acc.tp + c.tp,
        fp: acc.fp + c.fp,
        fn_: acc.fn_ + c.fn_,
    });
    let macro_ = if batch.c == 0 {
        f64::NAN
    } else {
        per.iter().map(Confusion::f1).sum::<f64>() / batch.c as f64
    };
    F1Scores {
        micro: pooled.f1(),
        macro_,
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipCounts {
    pub one_error: usize,
    pub ranking_loss: usize,
    pub example_ap: usize,
    pub mean_ap: usize,
}

/// All six metrics. Values that could not be computed are `None` (JSON
/// `null`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub one_error: Option<f64>,
    pub ranking_loss: Option<f64>,
    pub micro_f1: Option<f64>,
    pub macro_f1: Option<f64>,
    pub example_ap: Option<f64>,
    pub mean_ap: Option<f64>,
    pub per_label_ap: Vec<Option<f64>>,
    pub skip_counts: SkipCounts,
    pub n_samples: usize,
    pub n_labels: usize,
    pub threshold: f64,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

impl MetricsReport {
    pub fn compute(batch: &EvalBatch) -> Self {
        let oe = one_error(batch);
        let rl = ranking_loss(batch);
        let eap = example_ap(batch);
        let per = per_label_ap(batch);
        let map = Averaged::from_terms(per.iter().copied());
        let f1 = micro_macro_f1(batch);
        Self {
            one_error: finite(oe.value),
            ranking_loss: finite(rl.value),
            micro_f1: finite(f1.micro),
            macro_f1: finite(f1.macro_),
            example_ap: finite(eap.value),
            mean_ap: finite(map.value),
            per_label_ap: per,
            skip_counts: SkipCounts {
                one_error: oe.skipped,
                ranking_loss: rl.skipped,
                example_ap: eap.skipped,
                mean_ap: map.skipped,
            },
            n_samples: batch.n,
            n_labels: batch.c,
            threshold: batch.threshold,
        }
    }

    /// Metric by its report key.
    pub fn get(&self, key: &str) -> Option<f64> {
        match key {
            "one_error" => self.one_error,
            "ranking_loss" => self.ranking_loss,
            "micro_f1" => self.micro_f1,
            "macro_f1" => self.macro_f1,
            "example_ap" => self.example_ap,
            "mean_ap" => self.mean_ap,
            _ => None,
        }
    }

    pub const KEYS: [&'static str; 6] = ["one_error", "ranking_loss", "micro_f1", "macro_f1", "example_ap", "mean_ap"];

    /// Whether larger values are better for `key`.
    pub fn higher_is_better(key: &str) -> bool {
        !matches!(key, "one_error" | "ranking_loss")
    }
}
