//! Independent oracles shared by several test targets.
#![allow(dead_code)]

use mlbvae::ndcore::Rng;

/// First two moments of the normalized product of 1-D Gaussian densities,
/// integrated on a uniform grid. Densities are multiplied pointwise in log
/// space; nothing about Gaussian products is assumed.
pub fn grid_moments(experts: &[(f64, f64)]) -> (f64, f64) {
    let lo = -12.0;
    let hi = 12.0;
    let n = 240_001;
    let h = (hi - lo) / (n - 1) as f64;
    let logp = |x: f64| -> f64 {
        experts
            .iter()
            .map(|&(m, v)| -0.5 * (x - m).powi(2) / v - 0.5 * (2.0 * std::f64::consts::PI * v).ln())
            .sum()
    };
    let peak = (0..n).map(|i| logp(lo + i as f64 * h)).fold(f64::NEG_INFINITY, f64::max);
    let (mut z, mut m1, mut m2) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let x = lo + i as f64 * h;
        // trapezoid weights
        let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
        let p = w * (logp(x) - peak).exp();
        z += p;
        m1 += p * x;
        m2 += p * x * x;
    }
    let mean = m1 / z;
    (mean, m2 / z - mean * mean)
}

/// 1-based rank of item `k` when sorting by descending score, lower
/// index first among equal scores.
pub fn rank_of(scores: &[f64], k: usize) -> usize {
    1 + (0..scores.len())
        .filter(|&m| scores[m] > scores[k] || (scores[m] == scores[k] && m < k))
        .count()
}

pub fn brute_ap(scores: &[f64], rel: &[bool]) -> Option<f64> {
    let positives: Vec<usize> = (0..rel.len()).filter(|&k| rel[k]).collect();
    if positives.is_empty() {
        return None;
    }
    let mut total = 0.0;
    for &k in &positives {
        let r = rank_of(scores, k);
        let above = positives.iter().filter(|&&m| rank_of(scores, m) <= r).count();
        total += above as f64 / r as f64;
    }
    Some(total / positives.len() as f64)
}

pub fn mean(items: &[Option<f64>]) -> f64 {
    let vals: Vec<f64> = items.iter().flatten().copied().collect();
    if vals.is_empty() {
        return f64::NAN;
    }
    let mut s = 0.0;
    for v in &vals {
        s += v;
    }
    s / vals.len() as f64
}

pub struct Case {
    pub scores: Vec<Vec<f64>>,
    pub labels: Vec<Vec<u8>>,
}

pub fn brute_one_error(c: &Case) -> f64 {
    mean(&c
        .scores
        .iter()
        .zip(&c.labels)
        .map(|(s, y)| {
            if !y.contains(&1) {
                return None;
            }
            let top = (0..s.len()).find(|&k| rank_of(s, k) == 1).unwrap();
            Some(if y[top] == 1 { 0.0 } else { 1.0 })
        })
        .collect::<Vec<_>>())
}

pub fn brute_ranking_loss(c: &Case) -> f64 {
    mean(&c
        .scores
        .iter()
        .zip(&c.labels)
        .map(|(s, y)| {
            let mut bad = 0.0;
            let mut pairs = 0usize;
            for a in 0..s.len() {
                for b in 0..s.len() {
                    if y[a] == 1 && y[b] == 0 {
                        pairs += 1;
                        if s[a] < s[b] {
                            bad += 1.0;
                        } else if s[a] == s[b] {
                            bad += 0.5;
                        }
                    }
                }
            }
            (pairs > 0).then(|| bad / pairs as f64)
        })
        .collect::<Vec<_>>())
}

pub fn brute_example_ap(c: &Case) -> f64 {
    mean(&c
        .scores
        .iter()
        .zip(&c.labels)
        .map(|(s, y)| brute_ap(s, &y.iter().map(|&v| v == 1).collect::<Vec<_>>()))
        .collect::<Vec<_>>())
}

pub fn brute_mean_ap(c: &Case) -> f64 {
    let n_labels = c.scores[0].len();
    mean(&(0..n_labels)
        .map(|j| {
            let col: Vec<f64> = c.scores.iter().map(|r| r[j]).collect();
            let rel: Vec<bool> = c.labels.iter().map(|r| r[j] == 1).collect();
            brute_ap(&col, &rel)
        })
        .collect::<Vec<_>>())
}

pub fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    if tp + fp + fn_ == 0 {
        0.0
    } else {
        (2 * tp) as f64 / (2 * tp + fp + fn_) as f64
    }
}

pub fn brute_f1(c: &Case, threshold: f64) -> (f64, f64) {
    let cells = |j: Option<usize>| {
        let (mut tp, mut fp, mut fn_) = (0, 0, 0);
        for (s, y) in c.scores.iter().zip(&c.labels) {
            for k in 0..s.len() {
                if j.is_some_and(|j| j != k) {
                    continue;
                }
                let pred = s[k] >= threshold;
                match (pred, y[k] == 1) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fn_ += 1,
                    _ => {}
                }
            }
        }
        f1(tp, fp, fn_)
    };
    let c_labels = c.scores[0].len();
    let mut macro_sum = 0.0;
    for j in 0..c_labels {
        macro_sum += cells(Some(j));
    }
    (cells(None), macro_sum / c_labels as f64)
}

pub fn random_case(rng: &mut Rng) -> Case {
    let n = 1 + rng.below(5);
    let c = 1 + rng.below(6);
    let discrete = rng.uniform() < 0.5;
    let density = rng.uniform();
    let scores = (0..n)
        .map(|_| {
            (0..c)
                .map(|_| if discrete { rng.below(5) as f64 / 4.0 } else { rng.uniform() })
                .collect()
        })
        .collect();
    let labels = (0..n).map(|_| (0..c).map(|_| u8::from(rng.uniform() < density)).collect()).collect();
    Case { scores, labels }
}

