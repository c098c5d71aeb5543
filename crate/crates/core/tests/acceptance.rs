//! Acceptance suite. Runs every criterion, prints one line per criterion and
//! exits non-zero if any of them fails.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use entrex::affinity::{AffinityModel, Judgment};
use entrex::clustering::{
    adjusted_rand_index, eig_sym, kmeans, laplacian, spectral_from_affinity, xmeans, SpectralConfig, SymmetricMatrix,
    XMeansConfig,
};
use entrex::config::Config;
use entrex::eval::{self, dcg, Qrels, QueryQrels, Run};
use entrex::features::{distance, FeatureId, FeatureVector};
use entrex::lsh::{bucket_entities, LshParams, MinHasher};
use entrex::retrieval::{alpha_score, context_score, expanded_rank_score, sim, Mode};
use entrex::stages;
use entrex::text::{Bm25fParams, FieldMode, FieldedDocument, InvertedIndex};

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn pipeline(config: &Config) -> Result<(BTreeMap<String, eval::MetricReport>, Vec<eval::Comparison>), String> {
    let runs = stages::run_all(config, FieldMode::TitleOnly).map_err(|e| e.to_string())?;
    let paths: Vec<_> = runs.values().cloned().collect();
    let outcome = stages::evaluate(config, &paths, None).map_err(|e| e.to_string())?;
    let reports = outcome
        .reports
        .into_iter()
        .map(|r| (r.name.split('_').next().unwrap().to_string(), r))
        .collect();
    Ok((reports, outcome.comparisons))
}

fn r10(reports: &BTreeMap<String, eval::MetricReport>, mode: Mode) -> f64 {
    reports[mode.name()].mean.r[eval::CUTOFF - 1]
}

fn criterion_1() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut config = Config::default();
    config.paths.rebase(dir.path());
    let queries = config.synth.num_types * config.synth.clusters_per_type;
    if queries < 12 || config.synth.hidden_fraction < 0.7 {
        return Err(format!("synth defaults too small: {queries} queries"));
    }
    let start = Instant::now();
    let (reports, comparisons) = pipeline(&config)?;
    let elapsed = start.elapsed();
    let base = r10(&reports, Mode::B);
    let mut ok = elapsed < Duration::from_secs(300);
    let mut detail = format!("B R@10 {base:.3}");
    for mode in [Mode::XM, Mode::SP] {
        let r = r10(&reports, mode);
        let test = comparisons
            .iter()
            .find(|c| c.other.starts_with(&format!("{}_", mode.name())))
            .and_then(|c| c.deltas.iter().find(|d| d.metric == "R@10"))
            .and_then(|d| d.test);
        let p = test.map_or(f64::NAN, |t| t.p);
        let note = if test.is_some_and(|t| t.zero_variance) { ", zero variance" } else { "" };
        ok &= r - base >= 0.15 && p < 0.05;
        detail.push_str(&format!(", {mode} {r:.3} (+{:.3}, p = {p:.2e}{note})", r - base));
    }
    detail.push_str(&format!(", {queries} queries in {:.2}s", elapsed.as_secs_f64()));
    check(ok, detail)
}

fn criterion_2() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut config = Config::default();
    config.synth.link_fraction = 0.3;
    config.paths.rebase(dir.path());
    let (reports, _) = pipeline(&config)?;
    let (b, s1, sp) = (r10(&reports, Mode::B), r10(&reports, Mode::S1), r10(&reports, Mode::SP));
    check(b < s1 && s1 < sp, format!("B {b:.3} < S1 {s1:.3} < SP {sp:.3}"))
}

fn criterion_3() -> Outcome {
    let labels: Vec<usize> = (0..60).map(|i| i / 20).collect();
    let a = SymmetricMatrix::from_fn(60, |i, j| if i != j && labels[i] == labels[j] { 1.0 } else { 0.0 });
    let result = spectral_from_affinity(&a, &SpectralConfig::default(), 11).map_err(|e| e.to_string())?;
    let ari = adjusted_rand_index(&result.assignment, &labels);
    let zeros = result.eigenvalues.iter().filter(|v| v.abs() <= 1e-8).count();
    check(
        ari == 1.0 && zeros == 3 && result.k == 3,
        format!("ARI {ari}, k {}, zero eigenvalues {zeros}", result.k),
    )
}

fn criterion_4() -> Outcome {
    let centers = [[0.0, 0.0], [20.0, 0.0], [10.0, 20.0]];
    let noise = Normal::new(0.0, 1.0).unwrap();
    let mut good = 0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut points = Vec::new();
        let mut labels = Vec::new();
        for (c, center) in centers.iter().enumerate() {
            for _ in 0..40 {
                points.push(vec![center[0] + noise.sample(&mut rng), center[1] + noise.sample(&mut rng)]);
                labels.push(c);
            }
        }
        let config = XMeansConfig {
            seed,
            ..XMeansConfig::default()
        };
        let r = xmeans(&points, &config);
        if r.k == 3 && adjusted_rand_index(&r.assignment, &labels) >= 0.99 {
            good += 1;
        }
    }
    check(good >= 95, format!("{good}/100 seeds recover k = 3"))
}

/// Two key sets with exactly `shared / (shared + 2·own)` Jaccard similarity.
fn pair(tag: usize, shared: usize, own: usize) -> (Vec<String>, Vec<String>) {
    let common = (0..shared).map(|i| format!("{tag}:s{i}"));
    let a = common.clone().chain((0..own).map(|i| format!("{tag}:a{i}"))).collect();
    let b = common.chain((0..own).map(|i| format!("{tag}:b{i}"))).collect();
    (a, b)
}

fn co_bucket_rate(shared: usize, own: usize) -> f64 {
    let params = LshParams::default();
    let hasher = MinHasher::new(&params);
    let mut together = 0;
    for tag in 0..1000 {
        let (a, b) = pair(tag, shared, own);
        let sigs = [
            hasher.signature("a", a.iter().map(String::as_str)),
            hasher.signature("b", b.iter().map(String::as_str)),
        ];
        if bucket_entities("T", &sigs, &params).unwrap().len() == 1 {
            together += 1;
        }
    }
    together as f64 / 1000.0
}

fn criterion_5() -> Outcome {
    let params = LshParams::default();
    if (params.bands, params.rows) != (32, 4) {
        return Err(format!("defaults are b={} r={}", params.bands, params.rows));
    }
    let high = co_bucket_rate(80, 10);
    let low = co_bucket_rate(10, 45);
    check(
        high >= 0.99 && low <= 0.05,
        format!("J=0.8 co-bucket {high:.3}, J=0.1 co-bucket {low:.3}"),
    )
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst_residual: f64 = 0.0;
    let mut worst_reconstruction: f64 = 0.0;
    for _ in 0..5 {
        let m = SymmetricMatrix::from_fn(50, |_, _| rng.gen_range(-1.0..1.0));
        let eig = eig_sym(&m, 2000).map_err(|e| e.to_string())?;
        for (lambda, v) in eig.values.iter().zip(&eig.vectors) {
            let mv = m.mul_vec(v);
            for (x, y) in mv.iter().zip(v) {
                worst_residual = worst_residual.max((x - lambda * y).abs());
            }
        }
        for i in 0..50 {
            for j in 0..50 {
                let r: f64 = (0..50).map(|c| eig.vectors[c][i] * eig.values[c] * eig.vectors[c][j]).sum();
                worst_reconstruction = worst_reconstruction.max((r - m.get(i, j)).abs());
            }
        }
    }

    let mut worst_row: f64 = 0.0;
    for _ in 0..5 {
        let a = SymmetricMatrix::from_fn(40, |i, j| if i == j { 0.0 } else { rng.gen_range(0.0..1.0) });
        let l = laplacian(&a);
        for i in 0..40 {
            worst_row = worst_row.max(l.row_sum(i).abs());
        }
    }

    let mut monotone = true;
    for seed in 0..20 {
        let points: Vec<Vec<f64>> = (0..200).map(|_| (0..3).map(|_| rng.gen_range(-5.0..5.0)).collect()).collect();
        let r = kmeans(&points, 6, seed, 100, 0.0).map_err(|e| e.to_string())?;
        monotone &= r.history.windows(2).all(|w| w[1] <= w[0] + 1e-9 * w[0].abs().max(1.0));
    }
    check(
        worst_residual <= 1e-8 && worst_reconstruction <= 1e-8 && worst_row <= 1e-9 && monotone,
        format!(
            "residual {worst_residual:.1e}, reconstruction {worst_reconstruction:.1e}, row sums {worst_row:.1e}, WCSS monotone {monotone}"
        ),
    )
}

fn vector(entries: &[(&str, f64)]) -> FeatureVector {
    FeatureVector {
        uri: String::new(),
        entries: entries.iter().map(|(k, w)| (FeatureId::unigram(k), *w)).collect(),
    }
}

fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

fn criterion_7() -> Outcome {
    let mut failures = Vec::new();
    let mut expect = |name: &str, got: f64, want: f64, tol: f64| {
        if !close(got, want, tol) {
            failures.push(format!("{name}: {got} != {want}"));
        }
    };

    expect("distance", distance(&vector(&[("a", 1.0), ("b", 2.0)]), &vector(&[("a", 1.0)])), 2.0, 1e-12);
    expect("distance disjoint", distance(&vector(&[("a", 1.0)]), &vector(&[("b", 1.0)])), 2f64.sqrt(), 1e-12);

    expect("sim", sim(0.4, 0.2, 0.6, 0.5, 1e-6), 1.3, 1e-12);
    expect("sim self", sim(0.3, 0.3, 0.0, 0.5, 1e-6), 0.5, 1e-12);

    let judgment = |q: &str, t: &str, hits: usize, misses: usize| Judgment {
        query_id: format!("{q}{t}"),
        query_type: q.to_string(),
        relevant_entity_types: std::iter::repeat_n("E".to_string(), hits)
            .chain(std::iter::repeat_n("F".to_string(), misses))
            .collect(),
    };
    let model = AffinityModel::train(
        &[judgment("Q1", "", 8, 2), judgment("Q2", "", 1, 9), judgment("Q3", "", 2, 8)],
        0.0,
    )
    .map_err(|e| e.to_string())?;
    expect("gamma", model.gamma("E", "Q1"), 0.8 / 1.7, 1e-12);

    let terms = |s: &str| toks(s);
    let title: BTreeSet<String> = terms("space odyssey movie").into_iter().collect();
    expect("context", context_score(&terms("movie 2001"), &title).unwrap_or(f64::NAN), 0.5, 1e-12);
    expect("context full", context_score(&terms("movie"), &title).unwrap_or(f64::NAN), 1.0, 1e-12);
    let undefined = context_score(&[], &title).is_none();
    expect("context of empty Cx is undefined", f64::from(u8::from(undefined)), 1.0, 0.0);

    expect("alpha", alpha_score(0.5, 0.4, Some(1.0), 0.5), 0.6, 1e-12);
    expect("alpha without context", alpha_score(0.5, 0.4, None, 0.5), 0.2, 1e-12);
    expect("expanded rank score", expanded_rank_score(0.5, 2), 0.25, 1e-12);

    let index = InvertedIndex::from_documents(vec![
        FieldedDocument {
            uri: "d1".into(),
            title_tokens: toks("a b"),
            body_tokens: toks("a b c d"),
        },
        FieldedDocument {
            uri: "d2".into(),
            title_tokens: toks("c"),
            body_tokens: toks("c a e"),
        },
        FieldedDocument {
            uri: "d3".into(),
            title_tokens: toks("b d d"),
            body_tokens: toks("b d d e f"),
        },
    ]);
    let params = Bm25fParams::default();
    let q = toks("a");
    for (uri, want) in [("d1", 0.3357168780326683), ("d2", 0.23797652113708134), ("d3", 0.0)] {
        let got = index.bm25f_score(&q, uri, &params, FieldMode::Both).map_err(|e| e.to_string())?;
        expect(&format!("bm25f {uri}"), got, want, 1e-9);
    }

    check(
        failures.is_empty(),
        if failures.is_empty() {
            "distance, sim, gamma, context, alpha and BM25F anchors hold".into()
        } else {
            failures.join("; ")
        },
    )
}

/// Definition-level metrics, written independently of the library.
mod oracle {
    use super::*;

    pub fn relevant(q: &QueryQrels, u: &str) -> bool {
        q.get(u).copied().unwrap_or(0) >= 3
    }

    pub fn precision(ranked: &[String], q: &QueryQrels, k: usize) -> f64 {
        let mut hits = 0.0;
        for i in 0..k {
            if i < ranked.len() && relevant(q, &ranked[i]) {
                hits += 1.0;
            }
        }
        hits / k as f64
    }

    pub fn recall(ranked: &[String], q: &QueryQrels, k: usize) -> f64 {
        let total = q.keys().filter(|u| relevant(q, u)).count();
        let found = ranked.iter().take(k).filter(|u| relevant(q, u)).count();
        found as f64 / total as f64
    }

    pub fn ap(ranked: &[String], q: &QueryQrels) -> f64 {
        let total = q.keys().filter(|u| relevant(q, u)).count();
        let mut s = 0.0;
        for (i, u) in ranked.iter().enumerate() {
            if relevant(q, u) {
                s += precision(ranked, q, i + 1);
            }
        }
        s / total as f64
    }

    fn gains_dcg(gains: &[f64]) -> f64 {
        let mut s = 0.0;
        for (pos, g) in (1..).zip(gains) {
            let discount = if pos == 1 { 1.0 } else { (pos as f64).ln() / 2f64.ln() };
            s += g / discount;
        }
        s
    }

    pub fn ndcg(ranked: &[String], q: &QueryQrels, k: usize) -> f64 {
        let gain = |u: &String| q.get(u).map_or(0.0, |&g| f64::from(g) - 1.0);
        let got: Vec<f64> = ranked.iter().take(k).map(gain).collect();
        let mut all: Vec<f64> = q.values().map(|&g| f64::from(g) - 1.0).collect();
        all.sort_by(|a, b| b.partial_cmp(a).unwrap());
        all.truncate(k);
        let ideal = gains_dcg(&all);
        if ideal == 0.0 {
            0.0
        } else {
            gains_dcg(&got) / ideal
        }
    }
}

fn random_fixture(rng: &mut ChaCha8Rng) -> (Run, Qrels) {
    let pool: Vec<String> = (0..25).map(|i| format!("e{i}")).collect();
    let mut run = Run::new();
    let mut qrels = Qrels::default();
    let queries = rng.gen_range(1..5);
    for q in 0..queries {
        let qid = format!("q{q}");
        let mut judged = QueryQrels::new();
        let judged_count = rng.gen_range(1..10);
        for u in pool.choose_multiple(rng, judged_count) {
            judged.insert(u.clone(), rng.gen_range(1..=5));
        }
        judged.insert(pool[rng.gen_range(0..25)].clone(), 5);
        let depth = rng.gen_range(0..15);
        let ranked: Vec<String> = pool.choose_multiple(rng, depth).cloned().collect();
        run.insert(qid.clone(), ranked);
        qrels.queries.insert(qid, judged);
    }
    (run, qrels)
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut mismatches = Vec::new();
    for fixture in 0..100 {
        let (run, qrels) = random_fixture(&mut rng);
        let mut aps = Vec::new();
        for (qid, judged) in &qrels.queries {
            let ranked = &run[qid];
            for k in 1..=10 {
                let pairs = [
                    ("P", eval::p_at_k(ranked, judged, k, 3), oracle::precision(ranked, judged, k)),
                    ("R", eval::r_at_k(ranked, judged, k, 3).unwrap_or(f64::NAN), oracle::recall(ranked, judged, k)),
                    ("NDCG", eval::ndcg_at_k(ranked, judged, k), oracle::ndcg(ranked, judged, k)),
                ];
                for (name, got, want) in pairs {
                    if !close(got, want, 1e-9) {
                        mismatches.push(format!("fixture {fixture} {qid} {name}@{k}: {got} vs {want}"));
                    }
                }
            }
            aps.push(oracle::ap(ranked, judged));
        }
        let want = aps.iter().sum::<f64>() / aps.len() as f64;
        let got = eval::mean_average_precision(&run, &qrels, 3);
        if !close(got, want, 1e-9) {
            mismatches.push(format!("fixture {fixture} MAP: {got} vs {want}"));
        }
    }
    let dcg_example = dcg(&[3.0, 2.0, 0.0], 3);
    if dcg_example != 5.0 {
        mismatches.push(format!("DCG [3,2,0] = {dcg_example}"));
    }
    check(
        mismatches.is_empty(),
        if mismatches.is_empty() {
            "100 fixtures agree with the oracle; DCG [3,2,0] = 5".into()
        } else {
            format!("{} mismatches, first: {}", mismatches.len(), mismatches[0])
        },
    )
}

fn snapshot(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().display().to_string();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn criterion_9() -> Outcome {
    let mut snapshots = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().unwrap();
        let mut config = Config::default();
        config.synth.link_fraction = 0.3;
        config.paths.rebase(dir.path());
        pipeline(&config)?;
        snapshots.push(snapshot(dir.path()));
    }
    let (a, b) = (&snapshots[0], &snapshots[1]);
    let differing: Vec<&String> = a.keys().filter(|k| b.get(*k) != a.get(*k)).collect();
    let same_files = a.keys().eq(b.keys());
    check(
        same_files && differing.is_empty() && a.keys().any(|k| k.ends_with(".run")),
        format!("{} artifacts, {} differ, same file set {same_files}", a.len(), differing.len()),
    )
}

fn criterion_10() -> Outcome {
    let from_empty = Config::from_json("{}").map_err(|e| e.to_string())?;
    let c = Config::default();
    let ok = from_empty == c
        && c.validate().is_ok()
        && (c.xmeans.k_min, c.xmeans.k_max) == (2, 50)
        && c.ranking.cluster_size_max == 10
        && c.ranking.per_cluster == 1
        && c.ranking.lambda_sim == 0.5
        && c.ranking.lambda_alpha == 0.5;
    check(
        ok,
        format!(
            "K in [{}, {}], cluster_size_max {}, per_cluster {}, lambda {} / {}",
            c.xmeans.k_min,
            c.xmeans.k_max,
            c.ranking.cluster_size_max,
            c.ranking.per_cluster,
            c.ranking.lambda_sim,
            c.ranking.lambda_alpha
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [(usize, fn() -> Outcome); 10] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
        (9, criterion_9),
        (10, criterion_10),
    ];
    let mut failed = 0;
    for (n, f) in criteria {
        match f() {
            Ok(detail) => println!("criterion {n}: PASS  {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n}: FAIL  {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
