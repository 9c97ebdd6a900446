//! Friedman test, Bonferroni-Dunn critical difference and CD-diagram data
//! for comparing `k` algorithms over `N` datasets.

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::error::{Error, Result};

/// Bonferroni-Dunn two-tailed critical values at α = 0.05 for
/// `k = 2..=10` algorithms.
pub const Q_ALPHA_005: [f64; 9] = [1.960, 2.241, 2.394, 2.498, 2.576, 2.638, 2.690, 2.724, 2.773];

pub fn q_alpha_005(k: usize) -> Result<f64> {
    if (2..=10).contains(&k) {
        Ok(Q_ALPHA_005[k - 2])
    } else {
        Err(Error::Config(format!(
            "no built-in Bonferroni-Dunn value for k = {k}; pass q_alpha explicitly"
        )))
    }
}

/// Per-row ranks `[N×k]`; rank 1 is best, ties share their average rank.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankMatrix {
    pub n: usize,
    pub k: usize,
    pub ranks: Vec<Vec<f64>>,
}

impl RankMatrix {
    pub fn from_ranks(ranks: Vec<Vec<f64>>) -> Result<Self> {
        let n = ranks.len();
        let k = ranks.first().map_or(0, Vec::len);
        if n < 1 || k < 2 || ranks.iter().any(|r| r.len() != k) {
            return Err(Error::Input(format!("rank matrix must be N×k with k ≥ 2, got {n} rows")));
        }
        Ok(Self { n, k, ranks })
    }

    /// `R_j`, the mean rank of each algorithm.
    pub fn average_ranks(&self) -> Vec<f64> {
        (0..self.k)
            .map(|j| self.ranks.iter().map(|r| r[j]).sum::<f64>() / self.n as f64)
            .collect()
    }
}

pub fn rank_rows(scores: &[Vec<f64>], higher_is_better: bool) -> Result<RankMatrix> {
    let n = scores.len();
    let k = scores.first().map_or(0, Vec::len);
    if n < 1 || k < 2 {
        return Err(Error::Input(format!("rank_rows needs N ≥ 1 and k ≥ 2, got {n}×{k}")));
    }
    let mut ranks = Vec::with_capacity(n);
    for (i, row) in scores.iter().enumerate() {
        if row.len() != k {
            return Err(Error::dim("rank_rows row", &[k], &[row.len()]));
        }
        if row.iter().any(|v| v.is_nan()) {
            return Err(Error::Input(format!("NaN score in row {i}")));
        }
        let key = |v: f64| if higher_is_better { -v } else { v };
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| key(row[a]).total_cmp(&key(row[b])));
        let mut r = vec![0.0; k];
        let mut start = 0;
        while start < k {
            let mut end = start + 1;
            while end < k && row[order[end]] == row[order[start]] {
                end += 1;
            }
            // Positions start..end (0-based) share ranks start+1..=end.
            let avg = (start + 1 + end) as f64 / 2.0;
            for &j in &order[start..end] {
                r[j] = avg;
            }
            start = end;
        }
        ranks.push(r);
    }
    Ok(RankMatrix { n, k, ranks })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Friedman {
    pub chi2_f: f64,
    /// `+∞` when every dataset ranks the algorithms identically.
    pub f_f: f64,
    pub f_infinite: bool,
    pub dof1: usize,
    pub dof2: usize,
}

pub fn friedman(rm: &RankMatrix) -> Friedman {
    let (n, k) = (rm.n as f64, rm.k as f64);
    let sum_sq: f64 = rm.average_ranks().iter().map(|r| r * r).sum();
    let chi2 = (12.0 * n / (k * (k + 1.0)) * (sum_sq - k * (k + 1.0) * (k + 1.0) / 4.0)).max(0.0);
    let denom = n * (k - 1.0) - chi2;
    // Perfect agreement makes the denominator vanish up to rounding.
    let degenerate = denom.abs() <= 1e-9 * (n * (k - 1.0)).max(1.0);
    let f_f = if degenerate { f64::INFINITY } else { (n - 1.0) * chi2 / denom };
    Friedman {
        chi2_f: chi2,
        f_f,
        f_infinite: degenerate,
        dof1: rm.k - 1,
        dof2: (rm.k - 1) * (rm.n - 1),
    }
}

/// Upper-`alpha` quantile of the F distribution with `(dof1, dof2)`
/// degrees of freedom.
pub fn f_critical(dof1: f64, dof2: f64, alpha: f64) -> Result<f64> {
    if !(dof1 >= 1.0 && dof2 >= 1.0 && dof1.is_finite() && dof2.is_finite()) {
        return Err(Error::Config(format!("F degrees of freedom must be ≥ 1, got ({dof1}, {dof2})")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    // With u = d1·x / (d1·x + d2), P(F ≤ x) = I_u(d1/2, d2/2).
    let (a, b) = (dof1 / 2.0, dof2 / 2.0);
    let target = 1.0 - alpha;
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if beta_reg(a, b, mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let u = 0.5 * (lo + hi);
    let x = dof2 * u / (dof1 * (1.0 - u));
    let residual = (beta_reg(a, b, u) - target).abs();
    if !x.is_finite() || residual > 1e-9 {
        return Err(Error::Numeric(format!(
            "F quantile did not converge for ({dof1}, {dof2}, {alpha}); residual {residual:e}"
        )));
    }
    Ok(x)
}

/// `q_alpha · sqrt(k(k+1) / (6N))`.
pub fn bonferroni_dunn_cd(k: usize, n: usize, q_alpha: f64) -> Result<f64> {
    if k < 2 || n < 1 {
        return Err(Error::Config(format!("CD needs k ≥ 2 and N ≥ 1, got k={k}, N={n}")));
    }
    let (k, n) = (k as f64, n as f64);
    Ok(q_alpha * (k * (k + 1.0) / (6.0 * n)).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub name: String,
    pub average_rank: f64,
    pub difference: f64,
    pub significant: bool,
}

/// Plot-ready CD-diagram data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CdDiagram {
    pub cd: f64,
    pub axis: (f64, f64),
    pub average_ranks: Vec<(String, f64)>,
    pub control: String,
    pub comparisons: Vec<Comparison>,
    /// Maximal sets of algorithms, in rank order, whose average ranks span
    /// at most `cd`; drawn as connecting bars.
    pub groups: Vec<Vec<String>>,
}

pub fn cd_diagram_data(rm: &RankMatrix, names: &[String], control: usize, cd: f64) -> Result<CdDiagram> {
    if names.len() != rm.k {
        return Err(Error::dim("algorithm names", &[rm.k], &[names.len()]));
    }
    if control >= rm.k {
        return Err(Error::Config(format!("control index {control} out of range for k = {}", rm.k)));
    }
    let avg = rm.average_ranks();
    let comparisons = (0..rm.k)
        .filter(|&j| j != control)
        .map(|j| {
            let difference = (avg[j] - avg[control]).abs();
            Comparison {
                name: names[j].clone(),
                average_rank: avg[j],
                difference,
                significant: difference > cd,
            }
        })
        .collect();
    let mut order: Vec<usize> = (0..rm.k).collect();
    order.sort_by(|&a, &b| avg[a].total_cmp(&avg[b]).then(a.cmp(&b)));
    let mut groups: Vec<(usize, usize)> = Vec::new();
    for s in 0..order.len() {
        let mut e = s;
        while e + 1 < order.len() && avg[order[e + 1]] - avg[order[s]] <= cd {
            e += 1;
        }
        if e > s && groups.last().is_none_or(|&(_, last_e)| e > last_e) {
            groups.push((s, e));
        }
    }
    Ok(CdDiagram {
        cd,
        axis: (1.0, rm.k as f64),
        average_ranks: order.iter().map(|&j| (names[j].clone(), avg[j])).collect(),
        control: names[control].clone(),
        comparisons,
        groups: groups
            .into_iter()
            .map(|(s, e)| order[s..=e].iter().map(|&j| names[j].clone()).collect())
            .collect(),
    })
}

/// Algorithm scores, one row per dataset or subject.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoresTable {
    pub algorithms: Vec<String>,
    pub subjects: Vec<String>,
    pub scores: Vec<Vec<f64>>,
}

impl ScoresTable {
    /// Parses a header line of algorithm names followed by numeric rows.
    /// Fields are separated by commas, tabs or spaces. A row may carry
    /// one extra leading field naming its subject. Lines starting with
    /// `#` are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let split = |l: &str| -> Vec<String> {
            l.split(|c: char| c == ',' || c.is_whitespace())
                .filter(|s| !s.is_empty())
                .map(str::to_string)
                .collect()
        };
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
        let header = lines.next().ok_or_else(|| Error::Input("scores table is empty".into()))?;
        let algorithms = split(header);
        let k = algorithms.len();
        let mut subjects = Vec::new();
        let mut scores = Vec::new();
        for (i, line) in lines.enumerate() {
            let mut fields = split(line);
            let subject = if fields.len() == k + 1 {
                fields.remove(0)
            } else if fields.len() == k {
                format!("row{}", i + 1)
            } else {
                return Err(Error::Input(format!(
                    "scores row {} has {} fields, expected {k}",
                    i + 1,
                    fields.len()
                )));
            };
            let row = fields
                .iter()
                .map(|f| {
                    f.parse::<f64>()
                        .map_err(|_| Error::Input(format!("scores row {}: {f:?} is not a number", i + 1)))
                })
                .collect::<Result<Vec<_>>>()?;
            subjects.push(subject);
            scores.push(row);
        }
        Ok(Self {
            algorithms,
            subjects,
            scores,
        })
    }
}

/// Full comparison of one scores table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub algorithms: Vec<String>,
    pub n: usize,
    pub k: usize,
    pub higher_is_better: bool,
    pub average_ranks: Vec<f64>,
    pub friedman: Friedman,
    pub alpha: f64,
    /// `None` when `N = 1` leaves the F statistic without denominator
    /// degrees of freedom.
    pub f_critical: Option<f64>,
    pub reject_equal_performance: bool,
    pub q_alpha: f64,
    pub cd: f64,
    pub diagram: CdDiagram,
    /// Subjects on which every algorithm scored the same.
    pub fully_tied_rows: usize,
    pub warnings: Vec<String>,
}

pub fn compare(
    table: &ScoresTable,
    higher_is_better: bool,
    alpha: f64,
    q_alpha: Option<f64>,
    control: usize,
) -> Result<ComparisonReport> {
    let rm = rank_rows(&table.scores, higher_is_better)?;
    let fr = friedman(&rm);
    let mut warnings = Vec::new();
    let fc = if rm.n < 2 {
        warnings.push("N = 1: the Friedman F test is undefined and was skipped".to_string());
        None
    } else {
        Some(f_critical(fr.dof1 as f64, fr.dof2 as f64, alpha)?)
    };
    let tied_rank = (rm.k as f64 + 1.0) / 2.0;
    let fully_tied_rows = rm.ranks.iter().filter(|r| r.iter().all(|&v| v == tied_rank)).count();
    if fully_tied_rows > 0 {
        warnings.push(format!(
            "perfect-tie degeneracy: {fully_tied_rows} of {} subjects tie every algorithm",
            rm.n
        ));
    }
    if fr.f_infinite && rm.n >= 2 {
        warnings.push("perfect-tie degeneracy: every subject ranks the algorithms identically".to_string());
    }
    let q = match q_alpha {
        Some(q) => q,
        None if (alpha - 0.05).abs() < 1e-12 => q_alpha_005(rm.k)?,
        None => {
            return Err(Error::Config(format!(
                "no built-in Bonferroni-Dunn table for alpha = {alpha}; pass q_alpha"
            )))
        }
    };
    let cd = bonferroni_dunn_cd(rm.k, rm.n, q)?;
    let diagram = cd_diagram_data(&rm, &table.algorithms, control, cd)?;
    Ok(ComparisonReport {
        algorithms: table.algorithms.clone(),
        n: rm.n,
        k: rm.k,
        higher_is_better,
        average_ranks: rm.average_ranks(),
        friedman: fr,
        alpha,
        f_critical: fc,
        reject_equal_performance: fc.is_some_and(|c| fr.f_f > c),
        q_alpha: q,
        cd,
        diagram,
        fully_tied_rows,
        warnings,
    })
}
