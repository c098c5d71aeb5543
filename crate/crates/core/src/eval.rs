//! Graded-relevance evaluation of TREC runs: P@k, R@k, Avg(R), MAP,
//! NDCG@k, paired t-tests and grade histograms.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

/// Ranks 1..=CUTOFF are reported for P, R and NDCG.
pub const CUTOFF: usize = 10;
pub const DEFAULT_RELEVANCE_THRESHOLD: u8 = 3;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{file} line {line}: {reason}")]
    Parse {
        file: &'static str,
        line: usize,
        reason: String,
    },
    #[error("paired arrays differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("a paired t-test needs at least 2 pairs, got {0}")]
    TooFewPairs(usize),
}

pub type QueryQrels = BTreeMap<String, u8>;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Qrels {
    pub queries: BTreeMap<String, QueryQrels>,
}

impl Qrels {
    /// Parses whitespace-delimited `qid 0 uri grade` lines, grades in 1..=5.
    pub fn parse(text: &str) -> Result<Self, EvalError> {
        let err = |line: usize, reason: String| EvalError::Parse {
            file: "qrels",
            line,
            reason,
        };
        let mut queries: BTreeMap<String, QueryQrels> = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.is_empty() || f[0].starts_with('#') {
                continue;
            }
            if f.len() != 4 {
                return Err(err(i + 1, format!("expected 4 fields, found {}", f.len())));
            }
            let grade: u8 = f[3]
                .parse()
                .ok()
                .filter(|g| (1..=5).contains(g))
                .ok_or_else(|| err(i + 1, format!("grade {:?} is not an integer in 1..=5", f[3])))?;
            if queries
                .entry(f[0].to_string())
                .or_default()
                .insert(f[2].to_string(), grade)
                .is_some()
            {
                return Err(err(i + 1, format!("duplicate judgment for {} {}", f[0], f[2])));
            }
        }
        Ok(Qrels { queries })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (q, judged) in &self.queries {
            for (uri, g) in judged {
                writeln!(out, "{q} 0 {uri} {g}").unwrap();
            }
        }
        out
    }
}

/// Ranked uris per query.
pub type Run = BTreeMap<String, Vec<String>>;

/// Parses `qid Q0 uri rank score tag` lines, ordering each query by rank.
/// Repeated uris keep their best rank.
pub fn parse_run(text: &str) -> Result<Run, EvalError> {
    let mut rows: BTreeMap<String, Vec<(usize, String)>> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.is_empty() {
            continue;
        }
        if f.len() != 6 {
            return Err(EvalError::Parse {
                file: "run",
                line: i + 1,
                reason: format!("expected 6 fields, found {}", f.len()),
            });
        }
        let rank: usize = f[3].parse().map_err(|_| EvalError::Parse {
            file: "run",
            line: i + 1,
            reason: format!("bad rank {:?}", f[3]),
        })?;
        rows.entry(f[0].to_string()).or_default().push((rank, f[2].to_string()));
    }
    Ok(rows
        .into_iter()
        .map(|(q, mut r)| {
            r.sort_by_key(|(rank, _)| *rank);
            let mut seen = HashSet::new();
            let ranked = r.into_iter().map(|(_, u)| u).filter(|u| seen.insert(u.clone())).collect();
            (q, ranked)
        })
        .collect())
}

fn is_relevant(qrels: &QueryQrels, uri: &str, threshold: u8) -> bool {
    qrels.get(uri).is_some_and(|&g| g >= threshold)
}

pub fn relevant_count(qrels: &QueryQrels, threshold: u8) -> usize {
    qrels.values().filter(|&&g| g >= threshold).count()
}

fn hits_at(ranked: &[String], qrels: &QueryQrels, k: usize, threshold: u8) -> usize {
    ranked
        .iter()
        .take(k)
        .filter(|u| is_relevant(qrels, u, threshold))
        .count()
}

pub fn p_at_k(ranked: &[String], qrels: &QueryQrels, k: usize, threshold: u8) -> f64 {
    assert!(k >= 1, "k must be at least 1");
    hits_at(ranked, qrels, k, threshold) as f64 / k as f64
}

/// `None` when the query has no relevant entity.
pub fn r_at_k(ranked: &[String], qrels: &QueryQrels, k: usize, threshold: u8) -> Option<f64> {
    let total = relevant_count(qrels, threshold);
    (total > 0).then(|| hits_at(ranked, qrels, k, threshold) as f64 / total as f64)
}

/// Mean of R@1..R@10.
pub fn avg_r(ranked: &[String], qrels: &QueryQrels, threshold: u8) -> Option<f64> {
    let sum: Option<f64> = (1..=CUTOFF).map(|k| r_at_k(ranked, qrels, k, threshold)).sum();
    sum.map(|s| s / CUTOFF as f64)
}

/// Average precision over the full ranking; `None` without relevant entities.
pub fn average_precision(ranked: &[String], qrels: &QueryQrels, threshold: u8) -> Option<f64> {
    let total = relevant_count(qrels, threshold);
    if total == 0 {
        return None;
    }
    let mut hits = 0;
    let mut sum = 0.0;
    for (i, u) in ranked.iter().enumerate() {
        if is_relevant(qrels, u, threshold) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Some(sum / total as f64)
}

/// Mean AP over queries with at least one relevant entity.
pub fn mean_average_precision(run: &Run, qrels: &Qrels, threshold: u8) -> f64 {
    let aps: Vec<f64> = qrels
        .queries
        .iter()
        .filter_map(|(q, judged)| {
            let ranked = run.get(q).map_or(&[][..], Vec::as_slice);
            average_precision(ranked, judged, threshold)
        })
        .collect();
    mean(&aps)
}

/// `rel_1 + Σ_{i=2..k} rel_i / log2(i)`.
pub fn dcg(gains: &[f64], k: usize) -> f64 {
    gains
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &g)| if i == 0 { g } else { g / ((i + 1) as f64).log2() })
        .sum()
}

/// NDCG@k with gains `grade − 1`; unjudged entities gain 0.
pub fn ndcg_at_k(ranked: &[String], qrels: &QueryQrels, k: usize) -> f64 {
    let gains: Vec<f64> = ranked
        .iter()
        .take(k)
        .map(|u| qrels.get(u).map_or(0.0, |&g| g as f64 - 1.0))
        .collect();
    let mut ideal: Vec<f64> = qrels.values().map(|&g| g as f64 - 1.0).collect();
    ideal.sort_by(|a, b| b.total_cmp(a));
    let idcg = dcg(&ideal, k);
    if idcg == 0.0 {
        0.0
    } else {
        dcg(&gains, k) / idcg
    }
}

/// Retrieved top-k entities per grade 2..=5, summed over queries.
pub fn relevance_histogram(run: &Run, qrels: &Qrels, k: usize) -> BTreeMap<u8, usize> {
    let mut counts: BTreeMap<u8, usize> = (2..=5).map(|g| (g, 0)).collect();
    for (q, ranked) in run {
        let Some(judged) = qrels.queries.get(q) else {
            continue;
        };
        for u in ranked.iter().take(k) {
            if let Some(c) = judged.get(u).and_then(|g| counts.get_mut(g)) {
                *c += 1;
            }
        }
    }
    counts
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryMetrics {
    pub p: [f64; CUTOFF],
    /// Absent when the query has no relevant entity.
    pub r: Option<[f64; CUTOFF]>,
    pub ap: Option<f64>,
    pub avg_r: Option<f64>,
    pub ndcg: [f64; CUTOFF],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeanMetrics {
    pub p: [f64; CUTOFF],
    pub r: [f64; CUTOFF],
    pub map: f64,
    pub avg_r: f64,
    pub ndcg: [f64; CUTOFF],
    pub queries: usize,
    /// Queries contributing to R, MAP and Avg(R).
    pub queries_with_relevant: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub name: String,
    pub per_query: BTreeMap<String, QueryMetrics>,
    pub mean: MeanMetrics,
}

/// Scores `run` on every query in `qrels`; queries absent from the run
/// count as empty rankings.
pub fn evaluate(name: &str, run: &Run, qrels: &Qrels, threshold: u8) -> MetricReport {
    let mut per_query = BTreeMap::new();
    for (q, judged) in &qrels.queries {
        let ranked = run.get(q).map_or(&[][..], Vec::as_slice);
        let mut p = [0.0; CUTOFF];
        let mut ndcg = [0.0; CUTOFF];
        let mut r = [0.0; CUTOFF];
        for k in 1..=CUTOFF {
            p[k - 1] = p_at_k(ranked, judged, k, threshold);
            ndcg[k - 1] = ndcg_at_k(ranked, judged, k);
            r[k - 1] = r_at_k(ranked, judged, k, threshold).unwrap_or(0.0);
        }
        let has_relevant = relevant_count(judged, threshold) > 0;
        per_query.insert(
            q.clone(),
            QueryMetrics {
                p,
                r: has_relevant.then_some(r),
                ap: average_precision(ranked, judged, threshold),
                avg_r: avg_r(ranked, judged, threshold),
                ndcg,
            },
        );
    }
    let all: Vec<&QueryMetrics> = per_query.values().collect();
    let with_rel: Vec<&QueryMetrics> = all.iter().copied().filter(|m| m.r.is_some()).collect();
    let column = |rows: &[&QueryMetrics], f: &dyn Fn(&QueryMetrics) -> f64| -> f64 {
        mean(&rows.iter().map(|m| f(m)).collect::<Vec<_>>())
    };
    let mut mp = [0.0; CUTOFF];
    let mut mr = [0.0; CUTOFF];
    let mut mn = [0.0; CUTOFF];
    for i in 0..CUTOFF {
        mp[i] = column(&all, &|m| m.p[i]);
        mn[i] = column(&all, &|m| m.ndcg[i]);
        mr[i] = column(&with_rel, &|m| m.r.unwrap()[i]);
    }
    MetricReport {
        name: name.to_string(),
        mean: MeanMetrics {
            p: mp,
            r: mr,
            map: column(&with_rel, &|m| m.ap.unwrap()),
            avg_r: column(&with_rel, &|m| m.avg_r.unwrap()),
            ndcg: mn,
            queries: all.len(),
            queries_with_relevant: with_rel.len(),
        },
        per_query,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TTest {
    pub t: f64,
    /// Two-tailed.
    pub p: f64,
    /// The differences had zero variance; `p` is a sentinel (1 for a zero
    /// mean difference, 0 otherwise).
    pub zero_variance: bool,
}

/// Paired two-tailed t-test on `a − b`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::LengthMismatch(a.len(), b.len()));
    }
    let n = a.len();
    if n < 2 {
        return Err(EvalError::TooFewPairs(n));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let m = mean(&d);
    let var = d.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64;
    if var == 0.0 {
        return Ok(if m == 0.0 {
            TTest { t: 0.0, p: 1.0, zero_variance: true }
        } else {
            TTest {
                t: m.signum() * f64::INFINITY,
                p: 0.0,
                zero_variance: true,
            }
        });
    }
    let t = m / (var.sqrt() / (n as f64).sqrt());
    Ok(TTest {
        t,
        p: student_t_two_tailed(t, (n - 1) as f64),
        zero_variance: false,
    })
}

/// `P(|T| ≥ |t|)` for Student's t with `nu` degrees of freedom.
pub fn student_t_two_tailed(t: f64, nu: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    let dist = StudentsT::new(0.0, 1.0, nu).expect("nu is positive");
    (2.0 * dist.sf(t.abs())).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricDelta {
    pub metric: &'static str,
    pub delta: f64,
    pub test: Option<TTest>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub baseline: String,
    pub other: String,
    pub deltas: Vec<MetricDelta>,
}

/// Per-query paired deltas of P@10, MAP and R@10 (`other − baseline`).
pub fn compare(baseline: &MetricReport, other: &MetricReport) -> Comparison {
    type Pick = fn(&QueryMetrics) -> Option<f64>;
    let picks: [(&'static str, Pick); 3] = [
        ("P@10", |m| Some(m.p[CUTOFF - 1])),
        ("MAP", |m| m.ap),
        ("R@10", |m| m.r.map(|r| r[CUTOFF - 1])),
    ];
    let deltas = picks
        .into_iter()
        .map(|(metric, pick)| {
            let (mut xs, mut ys) = (Vec::new(), Vec::new());
            for (q, mb) in &baseline.per_query {
                if let (Some(x), Some(y)) = (pick(mb), other.per_query.get(q).and_then(pick)) {
                    xs.push(x);
                    ys.push(y);
                }
            }
            MetricDelta {
                metric,
                delta: mean(&ys) - mean(&xs),
                test: paired_t_test(&ys, &xs).ok(),
            }
        })
        .collect();
    Comparison {
        baseline: baseline.name.clone(),
        other: other.name.clone(),
        deltas,
    }
}

/// Aligned table of mean metrics, one row per run.
pub fn format_table(reports: &[MetricReport]) -> String {
    let width = reports.iter().map(|r| r.name.len()).max().unwrap_or(3).max(3);
    let mut out = String::new();
    writeln!(
        out,
        "{:<width$}  {:>6}  {:>6}  {:>6}  {:>6}  {:>6}  {:>6}  {:>7}",
        "run", "P@5", "P@10", "R@5", "R@10", "MAP", "Avg(R)", "NDCG@10"
    )
    .unwrap();
    for r in reports {
        let m = &r.mean;
        writeln!(
            out,
            "{:<width$}  {:>6.4}  {:>6.4}  {:>6.4}  {:>6.4}  {:>6.4}  {:>6.4}  {:>7.4}",
            r.name, m.p[4], m.p[9], m.r[4], m.r[9], m.map, m.avg_r, m.ndcg[9]
        )
        .unwrap();
    }
    out
}

pub fn format_comparison(c: &Comparison) -> String {
    let mut out = format!("{} vs {}:", c.other, c.baseline);
    for d in &c.deltas {
        match d.test {
            Some(t) if t.zero_variance => {
                write!(out, "  Δ{} = {:+.4} (p = {}, zero variance)", d.metric, d.delta, t.p).unwrap()
            }
            Some(t) => write!(out, "  Δ{} = {:+.4} (p = {:.4})", d.metric, d.delta, t.p).unwrap(),
            None => write!(out, "  Δ{} = {:+.4} (p = n/a)", d.metric, d.delta).unwrap(),
        }
    }
    out.push('\n');
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary<'a> {
    pub relevance_threshold: u8,
    pub runs: Vec<SummaryRun<'a>>,
    pub comparisons: &'a [Comparison],
}

#[derive(Debug, Clone, Serialize)]
pub struct SummaryRun<'a> {
    pub name: &'a str,
    pub mean: &'a MeanMetrics,
    pub relevance_histogram: BTreeMap<u8, usize>,
}
