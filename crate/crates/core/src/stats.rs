//! Clinical instruments and reliability statistics: AAUT amount-of-use
//! nonuse, SUS, ICC(1,k), Pearson and Spearman correlation, the exact
//! one-sample Wilcoxon signed-rank test and Cronbach's alpha. CSV readers
//! for the instrument files are at the bottom.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor, StudentsT};
use thiserror::Error;

pub const AAUT_TASKS: usize = 14;
pub const SUS_ITEMS: usize = 10;
/// Above-average SUS usability threshold.
pub const SUS_THRESHOLD: f64 = 72.6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("validation error: {0}")]
    Validation(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("correlation undefined: {0} has zero variance")]
    UndefinedCorrelation(&'static str),
    #[error("line {line}: {reason}")]
    Csv { line: usize, reason: String },
}

fn invalid(msg: impl Into<String>) -> StatsError {
    StatsError::Validation(msg.into())
}

// ---------------------------------------------------------------------------
// AAUT

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AautTask {
    pub spontaneous: u8,
    pub constrained: u8,
    /// Quality of movement, rated only when the paretic arm was used
    /// spontaneously. Parsed but not scored.
    pub qom: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AautRecord {
    pub tasks: Vec<AautTask>,
}

impl AautRecord {
    pub fn validate(&self) -> Result<(), StatsError> {
        if self.tasks.len() != AAUT_TASKS {
            return Err(invalid(format!(
                "AAUT needs {AAUT_TASKS} tasks, got {}",
                self.tasks.len()
            )));
        }
        for (i, t) in self.tasks.iter().enumerate() {
            if t.spontaneous > 1 || t.constrained > 1 {
                return Err(invalid(format!(
                    "task {}: amount of use must be 0 or 1",
                    i + 1
                )));
            }
            match t.qom {
                Some(q) if q > 5 => {
                    return Err(invalid(format!("task {}: QOM {q} outside 0..5", i + 1)))
                }
                Some(_) if t.spontaneous == 0 => {
                    return Err(invalid(format!(
                        "task {}: QOM given without spontaneous use",
                        i + 1
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Mean over tasks of constrained minus spontaneous amount of use.
pub fn score_aaut(rec: &AautRecord) -> Result<f64, StatsError> {
    rec.validate()?;
    let total: i32 = rec
        .tasks
        .iter()
        .map(|t| i32::from(t.constrained) - i32::from(t.spontaneous))
        .sum();
    Ok(f64::from(total) / AAUT_TASKS as f64)
}

// ---------------------------------------------------------------------------
// SUS

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SusResponse {
    items: Vec<u8>,
}

impl SusResponse {
    pub fn new(items: Vec<u8>) -> Result<Self, StatsError> {
        if items.len() != SUS_ITEMS {
            return Err(invalid(format!(
                "SUS needs {SUS_ITEMS} items, got {}",
                items.len()
            )));
        }
        if let Some((i, r)) = items
            .iter()
            .enumerate()
            .find(|(_, r)| !(1..=5).contains(*r))
        {
            return Err(invalid(format!(
                "SUS item {} rating {r} outside 1..5",
                i + 1
            )));
        }
        Ok(SusResponse { items })
    }

    pub fn items(&self) -> &[u8] {
        &self.items
    }
}

/// Odd items are positively worded, even items negatively.
pub fn score_sus(r: &SusResponse) -> f64 {
    let raw: u32 = r
        .items
        .iter()
        .enumerate()
        .map(|(i, &v)| u32::from(if i % 2 == 0 { v - 1 } else { 5 - v }))
        .sum();
    f64::from(raw) * 2.5
}

// ---------------------------------------------------------------------------
// ICC(1,k)

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IccResult {
    pub icc: f64,
    pub f: f64,
    pub df_between: f64,
    pub df_within: f64,
    /// Upper-tail F probability.
    pub p: f64,
    /// Participants kept after dropping incomplete rows.
    pub subjects: usize,
    pub sessions: usize,
    pub dropped: usize,
}

/// One-way random-effects, average-measures ICC over complete rows of a
/// participants × sessions matrix.
pub fn icc_1k(matrix: &[Vec<Option<f64>>]) -> Result<IccResult, StatsError> {
    let k = matrix.iter().map(Vec::len).max().unwrap_or(0);
    let rows: Vec<Vec<f64>> = matrix
        .iter()
        .filter(|r| r.len() == k && r.iter().all(|v| v.is_some()))
        .map(|r| r.iter().map(|v| v.unwrap()).collect())
        .collect();
    let dropped = matrix.len() - rows.len();
    if dropped > 0 {
        log::warn!("ICC: dropped {dropped} participant(s) with missing sessions");
    }
    let n = rows.len();
    if n < 2 || k < 2 {
        return Err(invalid(format!(
            "ICC needs at least 2 complete participants and 2 sessions (have {n} × {k})"
        )));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(invalid("ICC input contains non-finite scores"));
    }
    let (nf, kf) = (n as f64, k as f64);
    let grand = rows.iter().flatten().sum::<f64>() / (nf * kf);
    let means: Vec<f64> = rows.iter().map(|r| r.iter().sum::<f64>() / kf).collect();
    let ssb = kf * means.iter().map(|m| (m - grand).powi(2)).sum::<f64>();
    let ssw: f64 = rows
        .iter()
        .zip(&means)
        .map(|(r, m)| r.iter().map(|v| (v - m).powi(2)).sum::<f64>())
        .sum();
    let (df_b, df_w) = (nf - 1.0, nf * (kf - 1.0));
    let (msb, msw) = (ssb / df_b, ssw / df_w);
    if msb == 0.0 {
        return Err(StatsError::Degenerate("no between-subject variance".into()));
    }
    let icc = (msb - msw) / msb;
    let (f, p) = if msw == 0.0 {
        (f64::INFINITY, 0.0)
    } else {
        let f = msb / msw;
        let dist = FisherSnedecor::new(df_b, df_w).map_err(|e| invalid(e.to_string()))?;
        (f, dist.sf(f))
    };
    Ok(IccResult {
        icc,
        f,
        df_between: df_b,
        df_within: df_w,
        p,
        subjects: n,
        sessions: k,
        dropped,
    })
}

// ---------------------------------------------------------------------------
// Correlation

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub r: f64,
    /// Two-sided p from the t approximation with n − 2 degrees of freedom.
    pub p: f64,
    pub n: usize,
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<(), StatsError> {
    if x.len() != y.len() {
        return Err(invalid(format!(
            "vectors differ in length ({} vs {})",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 3 {
        return Err(invalid("correlation needs at least 3 pairs"));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(invalid("correlation input contains non-finite values"));
    }
    Ok(())
}

fn pearson_r(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(StatsError::UndefinedCorrelation("x"));
    }
    if syy == 0.0 {
        return Err(StatsError::UndefinedCorrelation("y"));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

fn t_test(r: f64, n: usize) -> f64 {
    let df = n as f64 - 2.0;
    if r.abs() >= 1.0 {
        return 0.0;
    }
    let t = r * (df / (1.0 - r * r)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    (2.0 * dist.sf(t.abs())).min(1.0)
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<Correlation, StatsError> {
    check_pair(x, y)?;
    let r = pearson_r(x, y)?;
    Ok(Correlation {
        r,
        p: t_test(r, x.len()),
        n: x.len(),
    })
}

/// 1-based ranks with ties sharing their mean rank.
pub fn midranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = rank;
        }
        i = j + 1;
    }
    ranks
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<Correlation, StatsError> {
    check_pair(x, y)?;
    let r = pearson_r(&midranks(x), &midranks(y))?;
    Ok(Correlation {
        r,
        p: t_test(r, x.len()),
        n: x.len(),
    })
}

/// Exact two-sided permutation p of Spearman's ρ (all n! pairings), for
/// n ≤ 10.
pub fn spearman_permutation_p(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    check_pair(x, y)?;
    if x.len() > 10 {
        return Err(invalid("exact permutation test supports at most 10 pairs"));
    }
    let rx = midranks(x);
    let mut ry = midranks(y);
    let observed = pearson_r(&rx, &ry)?.abs();
    let (mut extreme, mut total) = (0u64, 0u64);
    // Heap's algorithm over ry
    let n = ry.len();
    let mut c = vec![0usize; n];
    let mut visit = |ry: &[f64]| {
        total += 1;
        if pearson_r(&rx, ry).map(f64::abs).unwrap_or(0.0) >= observed - 1e-12 {
            extreme += 1;
        }
    };
    visit(&ry);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                ry.swap(0, i);
            } else {
                ry.swap(c[i], i);
            }
            visit(&ry);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    Ok(extreme as f64 / total as f64)
}

// ---------------------------------------------------------------------------
// Wilcoxon signed-rank

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Sum of ranks of positive differences.
    pub w: f64,
    /// Exact one-sided P(W ≥ w) under the symmetric null.
    pub p: f64,
    /// Nonzero differences used.
    pub n: usize,
}

/// Null distribution of W for the given ranks, as (W, probability) pairs in
/// increasing W. Ranks may be midranks.
pub fn wilcoxon_null_distribution(ranks: &[f64]) -> Vec<(f64, f64)> {
    // doubled midranks are integers
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let max: usize = doubled.iter().sum();
    let mut dist = vec![0.0f64; max + 1];
    dist[0] = 1.0;
    let mut reach = 0;
    for &d in &doubled {
        for s in (0..=reach).rev() {
            let mass = dist[s] * 0.5;
            dist[s] = mass;
            dist[s + d] += mass;
        }
        reach += d;
    }
    dist.iter()
        .enumerate()
        .filter(|(_, &p)| p > 0.0)
        .map(|(s, &p)| (s as f64 / 2.0, p))
        .collect()
}

/// One-sample test of `values` against `threshold`; zero differences are
/// dropped and tied magnitudes share midranks.
pub fn wilcoxon_signed_rank(values: &[f64], threshold: f64) -> Result<WilcoxonResult, StatsError> {
    if values.iter().any(|v| !v.is_finite()) || !threshold.is_finite() {
        return Err(invalid("Wilcoxon input contains non-finite values"));
    }
    let diffs: Vec<f64> = values
        .iter()
        .map(|v| v - threshold)
        .filter(|d| *d != 0.0)
        .collect();
    if diffs.is_empty() {
        return Err(StatsError::Degenerate(
            "all differences from the threshold are zero".into(),
        ));
    }
    let ranks = midranks(&diffs.iter().map(|d| d.abs()).collect::<Vec<_>>());
    let w: f64 = diffs
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| r)
        .sum();
    let p = wilcoxon_null_distribution(&ranks)
        .iter()
        .filter(|(s, _)| *s >= w - 1e-9)
        .map(|(_, p)| p)
        .sum::<f64>()
        .min(1.0);
    Ok(WilcoxonResult {
        w,
        p,
        n: diffs.len(),
    })
}

// ---------------------------------------------------------------------------
// Cronbach's alpha

/// Internal consistency of a subjects × items matrix.
pub fn cronbach_alpha(items: &[Vec<f64>]) -> Result<f64, StatsError> {
    let n = items.len();
    let k = items.first().map(Vec::len).unwrap_or(0);
    if n < 2 || k < 2 {
        return Err(invalid(format!(
            "alpha needs at least 2 subjects and 2 items (have {n} × {k})"
        )));
    }
    if items.iter().any(|r| r.len() != k) {
        return Err(invalid("ragged item matrix"));
    }
    let var = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0)
    };
    let item_var: f64 = (0..k)
        .map(|j| var(&items.iter().map(|r| r[j]).collect::<Vec<_>>()))
        .sum();
    let totals: Vec<f64> = items.iter().map(|r| r.iter().sum()).collect();
    let total_var = var(&totals);
    if total_var == 0.0 {
        return Err(StatsError::Degenerate(
            "total score has zero variance".into(),
        ));
    }
    let kf = k as f64;
    Ok(kf / (kf - 1.0) * (1.0 - item_var / total_var))
}

// ---------------------------------------------------------------------------
// CSV ingestion

fn csv_records(
    text: &str,
) -> Result<(csv::StringRecord, Vec<(usize, csv::StringRecord)>), StatsError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| StatsError::Csv {
            line: 1,
            reason: e.to_string(),
        })?
        .clone();
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| StatsError::Csv {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            reason: e.to_string(),
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        rows.push((line, rec));
    }
    Ok((header, rows))
}

fn cell<T: std::str::FromStr>(
    rec: &csv::StringRecord,
    i: usize,
    line: usize,
    what: &str,
) -> Result<T, StatsError> {
    let raw = rec.get(i).ok_or_else(|| StatsError::Csv {
        line,
        reason: format!("missing {what}"),
    })?;
    raw.parse().map_err(|_| StatsError::Csv {
        line,
        reason: format!("invalid {what} '{raw}'"),
    })
}

/// AAUT file: header `spontaneous,constrained[,qom]`, one row per task.
pub fn parse_aaut_csv(text: &str) -> Result<AautRecord, StatsError> {
    let (header, rows) = csv_records(text)?;
    let cols: Vec<&str> = header.iter().collect();
    if cols != ["spontaneous", "constrained"] && cols != ["spontaneous", "constrained", "qom"] {
        return Err(StatsError::Csv {
            line: 1,
            reason: "expected header spontaneous,constrained[,qom]".into(),
        });
    }
    let mut tasks = Vec::new();
    for (line, rec) in rows {
        let qom = match rec.get(2) {
            Some("") | None => None,
            Some(_) => Some(cell(&rec, 2, line, "qom")?),
        };
        tasks.push(AautTask {
            spontaneous: cell(&rec, 0, line, "spontaneous AOU")?,
            constrained: cell(&rec, 1, line, "constrained AOU")?,
            qom,
        });
    }
    let rec = AautRecord { tasks };
    rec.validate()?;
    Ok(rec)
}

/// SUS file: header `item1,…,item10`, one respondent per row.
pub fn parse_sus_csv(text: &str) -> Result<Vec<SusResponse>, StatsError> {
    let (header, rows) = csv_records(text)?;
    let expected: Vec<String> = (1..=SUS_ITEMS).map(|i| format!("item{i}")).collect();
    if header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(StatsError::Csv {
            line: 1,
            reason: "expected header item1,…,item10".into(),
        });
    }
    rows.into_iter()
        .map(|(line, rec)| {
            if rec.len() != SUS_ITEMS {
                return Err(StatsError::Csv {
                    line,
                    reason: format!("expected {SUS_ITEMS} ratings"),
                });
            }
            let items = (0..SUS_ITEMS)
                .map(|i| cell(&rec, i, line, "rating"))
                .collect::<Result<Vec<u8>, _>>()?;
            SusResponse::new(items).map_err(|e| StatsError::Csv {
                line,
                reason: e.to_string(),
            })
        })
        .collect()
}

/// Score matrix file: header `participant,<session>,…`; empty cells are
/// missing sessions.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    pub participants: Vec<String>,
    pub sessions: Vec<String>,
    pub values: Vec<Vec<Option<f64>>>,
}

pub fn parse_score_matrix(text: &str) -> Result<ScoreMatrix, StatsError> {
    let (header, rows) = csv_records(text)?;
    if header.len() < 2 || &header[0] != "participant" {
        return Err(StatsError::Csv {
            line: 1,
            reason: "expected header participant,<session>,…".into(),
        });
    }
    let sessions: Vec<String> = header.iter().skip(1).map(String::from).collect();
    let mut m = ScoreMatrix {
        participants: Vec::new(),
        sessions,
        values: Vec::new(),
    };
    for (line, rec) in rows {
        if rec.len() != header.len() {
            return Err(StatsError::Csv {
                line,
                reason: format!("expected {} columns", header.len()),
            });
        }
        m.participants.push(rec[0].to_string());
        let row = (1..rec.len())
            .map(|i| {
                if rec[i].is_empty() {
                    Ok(None)
                } else {
                    cell(&rec, i, line, "score").map(Some)
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        m.values.push(row);
    }
    Ok(m)
}

impl ScoreMatrix {
    pub fn to_csv(&self) -> String {
        let mut out = format!("participant,{}\n", self.sessions.join(","));
        for (p, row) in self.participants.iter().zip(&self.values) {
            let cells: Vec<String> = row
                .iter()
                .map(|v| v.map(|x| x.to_string()).unwrap_or_default())
                .collect();
            out.push_str(&format!("{p},{}\n", cells.join(",")));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn midranks_share_ties() {
        assert_eq!(midranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn aaut_rejects_wrong_task_count() {
        let rec = AautRecord {
            tasks: vec![
                AautTask {
                    spontaneous: 0,
                    constrained: 1,
                    qom: None
                };
                13
            ],
        };
        assert!(matches!(score_aaut(&rec), Err(StatsError::Validation(_))));
    }

    #[test]
    fn sus_rejects_out_of_range() {
        assert!(SusResponse::new(vec![3; 9]).is_err());
        assert!(SusResponse::new(vec![0, 3, 3, 3, 3, 3, 3, 3, 3, 3]).is_err());
        assert!(SusResponse::new(vec![6, 3, 3, 3, 3, 3, 3, 3, 3, 3]).is_err());
    }
}
