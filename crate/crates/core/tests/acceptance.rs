//! One PASS/FAIL line per acceptance criterion. Runs without the libtest
//! harness so the lines always print; exits non-zero if any criterion fails.

// Reference implementations are written as plain loops on purpose.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

mod common;

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use guirerank::dataset::{AnnotationStore, DatasetError, DimensionSet, SearchDimension};
use guirerank::eval::{
    evaluate_run, expected_random_ap, expected_random_map, format_metric_table, project_cost,
    Candidate, CostProjection, EvalConfig, GoldQuery, GoldStandard, MetricValues, NdcgGain,
    Rankings, RunUsage, TableRow, COLUMN_NAMES,
};
use guirerank::gateway::stub::stub_embedding;
use guirerank::gateway::{PriceTable, UsageMeter};
use guirerank::index::{EmbeddingIndex, IndexError};
use guirerank::rerank::{aggregate, rerank, RerankMode, RerankRequest};
use guirerank::retrieval::{
    search, stage_one_rank, DecomposedQuery, ScoringConfig, StageOneResult, WeightProfile,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("metric oracle equivalence", metric_oracle),
        ("perfect-ranking identities", perfect_ranking),
        ("cost reproduction", cost_reproduction),
        ("stage-1 scoring properties", stage_one_properties),
        ("rerank properties", rerank_properties),
        ("end-to-end offline smoke", end_to_end),
        ("persistence", persistence),
        ("eval table schema and random baseline", eval_table_and_baseline),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS [{}] {name} ({secs:.2}s): {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL [{}] {name} ({secs:.2}s): {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------------------
// Independent reference implementations.

fn naive_ap(rels: &[bool]) -> f64 {
    let total = rels.iter().filter(|r| **r).count();
    if total == 0 {
        return 0.0;
    }
    let mut sum = 0.0;
    for k in 0..rels.len() {
        if rels[k] {
            let hits_so_far = rels[..=k].iter().filter(|r| **r).count();
            sum += hits_so_far as f64 / (k + 1) as f64;
        }
    }
    sum / total as f64
}

fn naive_mrr(rels: &[bool]) -> f64 {
    for (i, r) in rels.iter().enumerate() {
        if *r {
            return 1.0 / (i + 1) as f64;
        }
    }
    0.0
}

fn naive_precision(rels: &[bool], k: usize) -> f64 {
    let mut n = 0;
    for i in 0..k {
        if i < rels.len() && rels[i] {
            n += 1;
        }
    }
    n as f64 / k as f64
}

fn naive_hits(rels: &[bool], k: usize) -> f64 {
    if rels.iter().take(k).any(|r| *r) {
        1.0
    } else {
        0.0
    }
}

fn naive_ndcg(grades: &[u32], k: usize) -> f64 {
    let dcg = |g: &[u32]| -> f64 {
        let mut s = 0.0;
        for i in 0..k.min(g.len()) {
            s += g[i] as f64 / ((i + 2) as f64).log2();
        }
        s
    };
    let mut ideal = grades.to_vec();
    ideal.sort();
    ideal.reverse();
    let idcg = dcg(&ideal);
    if idcg == 0.0 {
        0.0
    } else {
        dcg(grades) / idcg
    }
}

fn naive_columns(grades_in_rank_order: &[u32]) -> Vec<f64> {
    let rels: Vec<bool> = grades_in_rank_order.iter().map(|g| *g >= 2).collect();
    let mut out = vec![naive_ap(&rels), naive_mrr(&rels)];
    out.extend([3, 5, 7, 10].map(|k| naive_precision(&rels, k)));
    out.extend([1, 3, 5, 10].map(|k| naive_hits(&rels, k)));
    out.extend([3, 5, 10, 15].map(|k| naive_ndcg(grades_in_rank_order, k)));
    out
}

fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for i in 0..a.len() {
        dot += a[i] as f64 * b[i] as f64;
        na += a[i] as f64 * a[i] as f64;
        nb += b[i] as f64 * b[i] as f64;
    }
    dot / (na.sqrt() * nb.sqrt())
}

/// Brute-force stage one: per-GUI totals keyed by gui id.
fn naive_stage_one(
    texts: &BTreeMap<(String, String), String>,
    gui_ids: &[String],
    dims: &[String],
    phrases: &BTreeMap<String, (Vec<String>, Vec<String>)>,
    weights: &BTreeMap<String, f64>,
) -> BTreeMap<String, f64> {
    let mut out = BTreeMap::new();
    for g in gui_ids {
        let mut num = 0.0;
        let mut den = 0.0;
        for d in dims {
            let Some((pos, neg)) = phrases.get(d) else { continue };
            let w = weights[d];
            if (pos.is_empty() && neg.is_empty()) || w <= 0.0 {
                continue;
            }
            let e = stub_embedding(&texts[&(g.clone(), d.clone())]);
            let best = |ps: &[String]| ps.iter().map(|p| cosine(&stub_embedding(p), &e)).fold(f64::NEG_INFINITY, f64::max);
            let p = if pos.is_empty() { 0.0 } else { best(pos) };
            let n = if neg.is_empty() { 0.0 } else { best(neg).max(0.0) };
            let s = (p - n).clamp(-1.0, 1.0);
            num += w * s;
            den += w;
        }
        out.insert(g.clone(), num / den);
    }
    out
}

// ---------------------------------------------------------------------------
// 1

fn metric_oracle() -> Check {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut queries = Vec::new();
    let mut rankings = Rankings::new();
    for q in 0..1000 {
        let qid = format!("r{q:04}");
        let candidates: Vec<Candidate> = (0..20)
            .map(|c| Candidate {
                gui_id: format!("{qid}-c{c:02}"),
                grade: rng.random_range(0..=3),
            })
            .collect();
        let mut order: Vec<String> = candidates.iter().map(|c| c.gui_id.clone()).collect();
        order.shuffle(&mut rng);
        rankings.insert(qid.clone(), order);
        queries.push(GoldQuery {
            query_id: qid,
            text: String::new(),
            candidates,
        });
    }
    let gold = GoldStandard::new(queries).map_err(|e| e.to_string())?;
    let report = evaluate_run(&gold, &rankings, EvalConfig::default()).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for (q, m) in gold.queries.iter().zip(&report.per_query) {
        let grades = q.grades();
        let ranked: Vec<u32> = rankings[&q.query_id].iter().map(|g| grades[g]).collect();
        for (i, (a, b)) in m.values.columns().iter().zip(naive_columns(&ranked)).enumerate() {
            let diff = (a - b).abs();
            worst = worst.max(diff);
            ensure!(diff <= 1e-9, "{} {}: {a} vs reference {b}", q.query_id, COLUMN_NAMES[i]);
        }
    }
    let elapsed = started.elapsed();
    ensure!(elapsed < Duration::from_secs(5), "took {elapsed:?}");
    Ok(format!("1000 instances x 14 metrics, max |diff| {worst:.1e}, {:.2}s", elapsed.as_secs_f64()))
}

// ---------------------------------------------------------------------------
// 2

fn gold_fixture() -> GoldStandard {
    GoldStandard::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/gold/gold.json")).unwrap()
}

fn perfect_ranking() -> Check {
    let gold = gold_fixture();
    ensure!(gold.queries.len() == 100 && gold.queries.iter().all(|q| q.candidates.len() == 20), "fixture is not 100 x 20");
    let cfg = EvalConfig::default();
    let best = evaluate_run(&gold, &gold.oracle_rankings(), cfg).map_err(|e| e.to_string())?;
    let worst = evaluate_run(&gold, &gold.reversed_oracle_rankings(), cfg).map_err(|e| e.to_string())?;
    ensure!(best.mean.ap == 1.0, "oracle AP {}", best.mean.ap);
    ensure!(best.mean.mrr == 1.0, "oracle MRR {}", best.mean.mrr);
    ensure!(best.mean.ndcg.iter().all(|v| *v == 1.0), "oracle NDCG {:?}", best.mean.ndcg);
    for q in &best.per_query {
        ensure!(q.values.ap == 1.0 && q.values.mrr == 1.0, "{} not perfect", q.query_id);
    }
    for (i, (b, w)) in best.mean.columns().iter().zip(worst.mean.columns()).enumerate() {
        ensure!(w < *b, "reversed {} = {w} not below oracle {b}", COLUMN_NAMES[i]);
    }
    Ok(format!("oracle AP=MRR=NDCG=1; reversed AP {:.3}, MRR {:.3}", worst.mean.ap, worst.mean.mrr))
}

// ---------------------------------------------------------------------------
// 3

fn cost_reproduction() -> Check {
    let mut prices = PriceTable::new();
    prices.insert("gpt-4.1", 2.00, 8.00);
    let expected = [
        (179.77, 6.00, 100, 0.041),
        (179.77, 6.00, 500, 0.204),
        (1089.02, 6.00, 100, 0.223),
        (1089.02, 6.00, 500, 1.113),
    ];
    let mut got = Vec::new();
    for (input, output, k, dollars) in expected {
        let p = CostProjection::from_means("gpt-4.1", input, output, None, &prices).map_err(|e| e.to_string())?;
        let c = p.cost_at(k).ok_or("missing k")?;
        ensure!((c - dollars).abs() <= 0.0005, "{input}/{output} at k={k}: ${c:.4}, expected ${dollars}");
        got.push(format!("${c:.4}"));
    }
    // The same figures from a recorded run: 100 GUIs at 17,977 in / 600 out.
    let run = RunUsage {
        model: "gpt-4.1".into(),
        mode: RerankMode::Text,
        gui_count: 100,
        usage: UsageMeter {
            input_tokens: 17_977,
            output_tokens: 600,
            wall_time: Duration::ZERO,
            request_count: 100,
        },
        elapsed_secs: None,
    };
    let p = project_cost(&[run], "gpt-4.1", &prices).map_err(|e| e.to_string())?;
    let c = p.cost_at(100).unwrap();
    ensure!((c - 0.041).abs() <= 0.0005, "usage log projection ${c}");
    Ok(got.join(" "))
}

// ---------------------------------------------------------------------------
// 4

fn single_dim_weights(dims: &DimensionSet, keep: &str) -> WeightProfile {
    let mut w = WeightProfile::new();
    for d in dims.iter() {
        w.set(&d.id, if d.id == keep { 1.0 } else { 0.0 }).unwrap();
    }
    w
}

fn stage_one_properties() -> Check {
    let ds = common::synthetic(50);
    let embed = common::stub(common::EMBED_MODEL);
    let dims = ds.index.dimensions().clone();
    let cfg = ScoringConfig::default();
    let rank = |q: &DecomposedQuery, w: &WeightProfile| -> StageOneResult {
        stage_one_rank(&ds.index, q, w, &embed, cfg).unwrap().0
    };

    // (a) and (b) for every GUI whose annotation embedding is unique within
    // the dimension; duplicates tie by construction.
    let mut checked = 0;
    let mut pairs = 0;
    let mut min_drop = f64::INFINITY;
    for d in dims.iter() {
        let weights = single_dim_weights(&dims, &d.id);
        let ids = ds.index.gui_ids();
        for (i, g) in ids.iter().enumerate() {
            let text = &ds.store.get(g).unwrap().annotations[&d.id];
            let v = ds.index.vector(g, &d.id).unwrap();
            pairs += 1;
            let unique = ids.iter().filter(|h| *h != g).all(|h| cosine(v, ds.index.vector(h, &d.id).unwrap()) < 1.0 - 1e-6);
            if !unique {
                continue;
            }
            let a = rank(&DecomposedQuery::new("a").with(&d.id, &[text], &[]), &weights);
            ensure!(a.entries[0].gui_id == *g, "(a) {}/{g}: top is {}", d.id, a.entries[0].gui_id);

            // A second positive phrase keeps other candidates in play.
            let other = &ds.store.get(&ids[(i + 1) % ids.len()]).unwrap().annotations[&d.id];
            let before = rank(&DecomposedQuery::new("b").with(&d.id, &[text, other], &[]), &weights);
            let after = rank(&DecomposedQuery::new("b").with(&d.id, &[text, other], &[text]), &weights);
            let s = |r: &StageOneResult| r.entries.iter().find(|e| e.gui_id == *g).unwrap().per_dimension[&d.id].s;
            let drop = s(&before) - s(&after);
            min_drop = min_drop.min(drop);
            ensure!(drop >= 0.5, "(b) {}/{g}: s_d dropped by {drop}", d.id);
            ensure!(after.entries[0].gui_id != *g, "(b) {}/{g}: still top-1", d.id);
            checked += 1;
        }
    }
    ensure!(checked * 2 >= pairs, "only {checked} of {pairs} (gui, dimension) pairs are distinguishable");

    // (c) exact scaling invariance on decomposed natural-language queries.
    let chat = common::stub(common::CHAT_MODEL);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let queries = [
        "modern login screen, not dark",
        "music player with a list and a blue button",
        "checkout page for a food delivery app showing \"Order now\"",
        "minimal settings screen without a map",
    ];
    let mut scalings = 0;
    for q in queries {
        for _ in 0..10 {
            let mut w = WeightProfile::new();
            for d in dims.iter() {
                w.set(&d.id, (rng.random_range(0..=50) as f64) / 10.0).unwrap();
            }
            let Ok(base) = search(&ds.index, q, &w, None, &chat, &embed, cfg) else { continue };
            for c in [1e-6, 0.1, 0.37, 3.0, 7.25, 1e3, 1e9] {
                let scaled = search(&ds.index, q, &w.scaled(c), None, &chat, &embed, cfg).map_err(|e| e.to_string())?;
                ensure!(scaled.result.gui_ids() == base.result.gui_ids(), "(c) order changed for c={c}");
                for (x, y) in base.result.entries.iter().zip(&scaled.result.entries) {
                    ensure!(x.total.to_bits() == y.total.to_bits(), "(c) total {} vs {} at c={c}", x.total, y.total);
                }
                scalings += 1;
            }
        }
    }

    // (d) brute-force oracle on random small instances.
    let vocab = ["modern", "dark", "login", "map", "button", "list", "blue", "food", "chat", "grid", "welcome", "travel"];
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let phrase = |rng: &mut ChaCha8Rng| -> String {
        let n = rng.random_range(1..=3);
        (0..n).map(|_| vocab[rng.random_range(0..vocab.len())]).collect::<Vec<_>>().join(" ")
    };
    let mut worst = 0.0f64;
    let mut instances = 0;
    while instances < 200 {
        let n_gui = rng.random_range(1..=20);
        let n_dim = rng.random_range(1..=4);
        let dim_ids: Vec<String> = (0..n_dim).map(|d| format!("dim{d}")).collect();
        let set = DimensionSet::new(dim_ids.iter().map(|d| SearchDimension::new(d, d, "", 1.0)).collect()).unwrap();
        let gui_ids: Vec<String> = (0..n_gui).map(|g| format!("g{g:02}")).collect();
        let mut texts = BTreeMap::new();
        for g in &gui_ids {
            for d in &dim_ids {
                texts.insert((g.clone(), d.clone()), phrase(&mut rng));
            }
        }
        let rows = dim_ids
            .iter()
            .map(|d| gui_ids.iter().map(|g| stub_embedding(&texts[&(g.clone(), d.clone())])).collect())
            .collect();
        let index = EmbeddingIndex::from_rows("r", "stub/e", set, gui_ids.clone(), rows).unwrap();
        let mut phrases = BTreeMap::new();
        let mut query = DecomposedQuery::new("r");
        let mut weights = BTreeMap::new();
        let mut profile = WeightProfile::new();
        for d in &dim_ids {
            let pos: Vec<String> = (0..rng.random_range(0..=3)).map(|_| phrase(&mut rng)).collect();
            let neg: Vec<String> = (0..rng.random_range(0..=3)).map(|_| phrase(&mut rng)).collect();
            let w = if rng.random_bool(0.2) { 0.0 } else { rng.random_range(0.1..5.0) };
            let p: Vec<&str> = pos.iter().map(String::as_str).collect();
            let n: Vec<&str> = neg.iter().map(String::as_str).collect();
            query = query.with(d, &p, &n);
            phrases.insert(d.clone(), (pos, neg));
            weights.insert(d.clone(), w);
            profile.set(d, w).unwrap();
        }
        let active = dim_ids.iter().any(|d| weights[d] > 0.0 && (!phrases[d].0.is_empty() || !phrases[d].1.is_empty()));
        if !active {
            continue;
        }
        let got = stage_one_rank(&index, &query, &profile, &embed, cfg).map_err(|e| e.to_string())?.0;
        let expect = naive_stage_one(&texts, &gui_ids, &dim_ids, &phrases, &weights);
        ensure!(got.len() == gui_ids.len(), "(d) {} entries for {} GUIs", got.len(), gui_ids.len());
        for e in &got.entries {
            let diff = (e.total - expect[&e.gui_id]).abs();
            worst = worst.max(diff);
            ensure!(diff <= 1e-9, "(d) instance {instances} {}: {} vs {}", e.gui_id, e.total, expect[&e.gui_id]);
        }
        for w in got.entries.windows(2) {
            let (a, b) = (expect[&w[0].gui_id], expect[&w[1].gui_id]);
            ensure!(a >= b - 1e-9, "(d) instance {instances}: order {} before {}", w[0].gui_id, w[1].gui_id);
            if a == b {
                ensure!(w[0].gui_id < w[1].gui_id, "(d) tie not broken by gui_id");
            }
        }
        instances += 1;
    }
    Ok(format!(
        "(a)+(b) {checked}/{pairs} distinguishable pairs, min drop {min_drop:.3}; (c) {scalings} scalings exact; (d) 200 instances, max |diff| {worst:.1e}"
    ))
}

// ---------------------------------------------------------------------------
// 5

fn rerank_properties() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    let mut bumps = 0;
    for _ in 0..1000 {
        let n = rng.random_range(1..=8);
        let mut scores = BTreeMap::new();
        let mut weights = Vec::new();
        for d in 0..n {
            scores.insert(format!("d{d}"), rng.random_range(0..=100i64));
            weights.push((format!("d{d}"), rng.random_range(0.01..5.0f64)));
        }
        let got = aggregate(&scores, &weights);
        let total_w: f64 = weights.iter().map(|(_, w)| w).sum();
        let reference: f64 = weights.iter().map(|(d, w)| (w / total_w) * (scores[d] as f64 / 100.0)).sum();
        worst = worst.max((got - reference).abs());
        ensure!((got - reference).abs() <= 1e-12, "aggregate {got} vs {reference}");
        for (d, _) in &weights {
            if scores[d] < 100 {
                let mut up = scores.clone();
                *up.get_mut(d).unwrap() += 1;
                ensure!(aggregate(&up, &weights) > got, "not monotone in {d}");
                bumps += 1;
            }
        }
    }

    let ds = common::synthetic(50);
    let gw = common::stub(common::CHAT_MODEL);
    let s1 = search(
        &ds.index,
        "modern login screen with a button, not dark",
        &WeightProfile::new(),
        None,
        &gw,
        &common::stub(common::EMBED_MODEL),
        ScoringConfig::default(),
    )
    .map_err(|e| e.to_string())?
    .result;
    let mut runs = 0;
    for mode in [RerankMode::Text, RerankMode::Image] {
        let mut base = None;
        for width in [1, 4, 10] {
            let mut req = RerankRequest::new("modern login screen with a button, not dark", mode);
            req.k = 50;
            req.width = width;
            let f = rerank(&s1, &req, ds.index.dimensions(), &ds.store, &gw).map_err(|e| e.to_string())?;
            match &base {
                None => base = Some(f),
                Some(b) => ensure!(*b == f, "{mode} ranking differs at width {width}"),
            }
            runs += 1;
        }
    }
    Ok(format!("1000 maps, max |diff| {worst:.1e}; {bumps} monotone bumps; {runs} runs identical across widths 1/4/10"))
}

// ---------------------------------------------------------------------------
// 6

fn cli(dir: &Path, args: &[&str]) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_guirerank"))
        .env_remove("GUIRERANK_CONFIG")
        .current_dir(dir)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "{args:?} exited {:?}: {}",
            out.status.code(),
            String::from_utf8_lossy(&out.stderr).trim()
        ));
    }
    Ok(out.stdout)
}

fn end_to_end() -> Check {
    let q = "modern login screen with a button, not dark";
    let mut outputs = Vec::new();
    for _ in 0..2 {
        let dir = common::copy_fixture();
        let d = dir.path();
        cli(d, &["--stub", "annotate", "--manifest", "manifest.json"])?;
        cli(d, &["--stub", "embed", "--manifest", "manifest.json"])?;
        let s = cli(d, &["--stub", "--json", "search", "--index", "smoke.index", "--query", q])?;
        let t = cli(d, &["--stub", "--json", "rerank", "--index", "smoke.index", "--query", q, "--mode", "text", "--k", "10"])?;
        let i = cli(d, &["--stub", "--json", "rerank", "--index", "smoke.index", "--query", q, "--mode", "image", "--k", "10"])?;
        let store = std::fs::read(d.join("smoke.annotations.jsonl")).map_err(|e| e.to_string())?;
        let index = std::fs::read(d.join("smoke.index")).map_err(|e| e.to_string())?;
        outputs.push([store, index, s, t, i]);
    }
    let names = ["annotation store", "index", "search", "rerank text", "rerank image"];
    for (n, (a, b)) in names.iter().zip(outputs[0].iter().zip(&outputs[1])) {
        ensure!(a == b, "{n} output differs between runs");
    }
    let text: serde_json::Value = serde_json::from_slice(&outputs[0][3]).map_err(|e| e.to_string())?;
    let image: serde_json::Value = serde_json::from_slice(&outputs[0][4]).map_err(|e| e.to_string())?;
    ensure!(text["ranking"]["entries"].as_array().map(Vec::len) == Some(10), "text ranking size");
    ensure!(image["ranking"]["mode"] == "image", "image mode missing");
    Ok("annotate, embed, search, rerank text and image: exit 0, byte-identical over two runs".into())
}

// ---------------------------------------------------------------------------
// 7

fn persistence() -> Check {
    let ds = common::smoke();
    let index_bytes = std::fs::read(&ds.index_path).map_err(|e| e.to_string())?;
    let loaded = EmbeddingIndex::load(&ds.index_path).map_err(|e| e.to_string())?;
    ensure!(loaded == ds.index, "index changed on reload");
    ensure!(loaded.to_bytes() == index_bytes, "index bytes differ after round trip");

    let store_bytes = std::fs::read(&ds.store_path).map_err(|e| e.to_string())?;
    let store = AnnotationStore::load(&ds.store_path).map_err(|e| e.to_string())?;
    let again = ds.dir.path().join("again.jsonl");
    store.save(&again).map_err(|e| e.to_string())?;
    ensure!(std::fs::read(&again).unwrap() == store_bytes, "store bytes differ after round trip");

    let mut named = Vec::new();
    for cut in [0, 5, 12, index_bytes.len() / 2, index_bytes.len() - 1] {
        match EmbeddingIndex::from_bytes(&index_bytes[..cut]) {
            Err(e @ (IndexError::Truncated(_) | IndexError::BadMagic)) => named.push(e.to_string()),
            other => return Err(format!("truncated at {cut}: {other:?}")),
        }
    }
    let mut flipped = index_bytes.clone();
    let at = flipped.len() - 40;
    flipped[at] ^= 0x80;
    match EmbeddingIndex::from_bytes(&flipped) {
        Err(e @ IndexError::Corrupt(_)) => named.push(e.to_string()),
        other => return Err(format!("bit flip: {other:?}")),
    }
    let text = String::from_utf8(store_bytes).unwrap();
    let cut = ds.dir.path().join("cut.jsonl");
    std::fs::write(&cut, &text[..text.len() - 30]).unwrap();
    match AnnotationStore::load(&cut) {
        Err(e @ DatasetError::Store { .. }) => named.push(e.to_string()),
        other => return Err(format!("truncated store: {other:?}")),
    }
    Ok(format!("index {} bytes and store round-trip exactly; {} corrupt inputs rejected", index_bytes.len(), named.len()))
}

// ---------------------------------------------------------------------------
// 8

/// Expected AP of a random order by enumerating every placement of the
/// relevant items.
fn enumerated_random_ap(n: usize, r: usize) -> f64 {
    fn walk(n: usize, r: usize, start: usize, picked: &mut Vec<usize>, acc: &mut (f64, u64)) {
        if picked.len() == r {
            let ap: f64 = picked.iter().enumerate().map(|(i, p)| (i + 1) as f64 / (p + 1) as f64).sum::<f64>() / r as f64;
            acc.0 += ap;
            acc.1 += 1;
            return;
        }
        for p in start..n {
            picked.push(p);
            walk(n, r, p + 1, picked, acc);
            picked.pop();
        }
    }
    let mut acc = (0.0, 0);
    walk(n, r, 0, &mut Vec::new(), &mut acc);
    acc.0 / acc.1 as f64
}

fn eval_table_and_baseline() -> Check {
    for n in 1..=10 {
        for r in 1..=n {
            let (a, b) = (expected_random_ap(n, r), enumerated_random_ap(n, r));
            ensure!((a - b).abs() < 1e-12, "expected AP n={n} r={r}: {a} vs enumerated {b}");
        }
    }

    let gold = gold_fixture();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let rankings_path = dir.path().join("random.json");
    std::fs::write(&rankings_path, guirerank::eval::rankings_to_json(&gold.random_rankings(7))).unwrap();
    let gold_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/gold/gold.json");
    let out = cli(
        dir.path(),
        &["eval", "--gold", gold_path.to_str().unwrap(), "--rankings", rankings_path.to_str().unwrap(), "--group", "Image", "--label", "random"],
    )?;
    let out = String::from_utf8(out).unwrap();
    let lines: Vec<&str> = out.lines().collect();
    let header: Vec<&str> = lines[0].split_whitespace().collect();
    let expected_header = ["AP", "MRR", "P@3", "P@5", "P@7", "P@10", "H@1", "H@3", "H@5", "H@10", "N@3", "N@5", "N@10", "N@15"];
    ensure!(header == expected_header, "header {header:?}");
    let row: Vec<&str> = lines[2].split_whitespace().collect();
    ensure!(row.len() == 16 && row[0] == "Image" && row[1] == "random", "row {row:?}");
    ensure!(row[2..].iter().all(|c| c.parse::<f64>().is_ok_and(|v| (0.0..=1.0).contains(&v)) && c.len() == 5), "cells {row:?}");
    let lib = format_metric_table(&[TableRow { group: "Text", label: "x", values: &MetricValues::default() }]);
    ensure!(lib.lines().next().unwrap().split_whitespace().collect::<Vec<_>>() == expected_header, "library header");

    let cfg = EvalConfig { binarize: 2, gain: NdcgGain::Linear };
    let mut sum = 0.0;
    for seed in 0..100 {
        sum += evaluate_run(&gold, &gold.random_rankings(seed), cfg).map_err(|e| e.to_string())?.mean.ap;
    }
    let mean = sum / 100.0;
    let expected = expected_random_map(&gold, 2);
    ensure!((mean - expected).abs() <= 0.02, "random mean AP {mean:.4} vs expected {expected:.4}");
    Ok(format!("table schema exact; random mean AP {mean:.4} vs analytic {expected:.4}"))
}
