//! Acceptance suite. Every criterion prints one PASS/FAIL line; the process
//! exits non-zero if any criterion fails.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;

use redraft_core::alignment::{overlap_coefficient, AlignedSegment, AlignmentResult};
use redraft_core::backends::mock::{
    mock_backends, CountingGenerator, MockEmbedder, MockGenerator, MockLogProb, MockNli, MockOverride,
    MockRewardModel, NoisyRewardModel,
};
use redraft_core::backends::{Backends, ScorerSpec};
use redraft_core::config::SearchConfig;
use redraft_core::eval::attack::{
    attack_sites, attack_success_rate, bayes_accuracy, reconstruct_context_free, reconstruct_contextual,
    AttackError, AttackMode, ChannelModel, ContextEntry, Distribution,
};
use redraft_core::eval::cost::cost_efficiency;
use redraft_core::eval::metrics::{
    align_tokens, alignment_cost, distinct2, pii_match_scores, rouge1_f, token_edit_distance,
};
use redraft_core::pipeline::{
    align_dataset, parse_dataset, rewrite_record, run_ablation, run_pipeline, Dataset, PipelineOptions,
    REWRITES_FILE,
};
use redraft_core::rewriter::{PromptTemplate, RewriteContext};
use redraft_core::search::{
    backpropagate, rewrite_document, search_segment_with_tree, select_leaf, uct_score, NodeId,
    RewriteTree, Selection, StrategyKind,
};
use redraft_core::seed::sha256_hex;
use redraft_core::text::tokenize;
use redraft_core::types::{PrivacySpec, RewriteAction, Utterance};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

// ---------------------------------------------------------------------------
// 1. UCT

/// 0.5 + 6.36·sqrt(ln 2), evaluated to 30 significant digits with mpmath.
const UCT_REFERENCE: f64 = 5.795_047_326_962_957_730;

fn random_tree(rng: &mut ChaCha8Rng, max_depth: usize, p_child: f64) -> RewriteTree {
    let mut tree = RewriteTree::new("s");
    let mut frontier = vec![tree.root()];
    while let Some(id) = frontier.pop() {
        if tree.node(id).depth >= max_depth {
            continue;
        }
        for a in RewriteAction::ALL {
            if rng.random_bool(p_child) {
                let c = tree.add_child(id, a, format!("s{}", tree.len())).unwrap();
                frontier.push(c);
            }
        }
    }
    tree
}

fn ref_closed(tree: &RewriteTree, id: NodeId) -> bool {
    let n = tree.node(id);
    if n.is_terminal() {
        return true;
    }
    match (n.child(RewriteAction::Delete), n.child(RewriteAction::Obscure)) {
        (Some(d), Some(o)) => ref_closed(tree, d) && ref_closed(tree, o),
        _ => false,
    }
}

/// Reference descent: stop at terminal or partially expanded nodes, else move
/// to the open child with the largest UCT value, the first on ties.
fn ref_select(tree: &RewriteTree, c: f64) -> Vec<NodeId> {
    let mut path = vec![tree.root()];
    loop {
        let n = tree.node(*path.last().unwrap());
        let (Some(d), Some(o)) = (n.child(RewriteAction::Delete), n.child(RewriteAction::Obscure)) else {
            return path;
        };
        if n.is_terminal() {
            return path;
        }
        let mut best: Option<(f64, NodeId)> = None;
        for ch in [d, o] {
            if ref_closed(tree, ch) {
                continue;
            }
            let cn = tree.node(ch);
            let score = if cn.visit_count == 0 {
                f64::INFINITY
            } else {
                let parent = n.visit_count.max(1) as f64;
                cn.mean_reward + c * (parent.ln() / cn.visit_count as f64).sqrt()
            };
            if best.map_or(true, |(b, _)| score > b) {
                best = Some((score, ch));
            }
        }
        match best {
            Some((_, ch)) => path.push(ch),
            None => return path,
        }
    }
}

fn criterion_1() -> Outcome {
    let got = uct_score(0.5, 1, 2, 6.36);
    ensure!((got - UCT_REFERENCE).abs() <= 1e-9, "uct_score(0.5,1,2,6.36) = {got}, want {UCT_REFERENCE}");

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut contested = 0;
    for t in 0..1000 {
        let mut tree = random_tree(&mut rng, 5, 0.75);
        for i in 0..tree.len() {
            let id = NodeId(i);
            let visits = if rng.random_bool(0.3) { 0 } else { rng.random_range(1..20) };
            tree.set_stats(id, rng.random_range(-1.0..1.0), visits);
            if tree.node(id).is_leaf() && i > 0 && rng.random_bool(0.15) {
                tree.mark_terminal(id);
            }
        }
        let c = [0.0, 1.0, 6.36][t % 3];
        let path = select_leaf(&tree, c);
        ensure!(path == ref_select(&tree, c), "tree {t}: path {path:?} differs from the reference");
        for w in path.windows(2) {
            let parent = tree.node(w[0]);
            let open_unvisited = parent
                .children()
                .any(|(_, ch)| tree.node(ch).visit_count == 0 && !ref_closed(&tree, ch));
            let open_visited = parent
                .children()
                .any(|(_, ch)| tree.node(ch).visit_count > 0 && !ref_closed(&tree, ch));
            if open_unvisited {
                if open_visited {
                    contested += 1;
                }
                ensure!(
                    tree.node(w[1]).visit_count == 0,
                    "tree {t}: visited child {:?} chosen while an unvisited sibling is open",
                    w[1]
                );
            }
        }
    }
    Ok(format!(
        "uct(0.5,1,2,6.36)={got:.12}; 1000 random trees match the reference walk ({contested} contested steps)"
    ))
}

// ---------------------------------------------------------------------------
// 2. Backpropagation

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut max_delta = 0.0f64;
    let mut updates = 0usize;
    for s in 0..500 {
        let mut tree = random_tree(&mut rng, 6, 0.6);
        let mut replay: HashMap<NodeId, Vec<f64>> = HashMap::new();
        for _ in 0..rng.random_range(1..60) {
            let target = NodeId(rng.random_range(0..tree.len()));
            let path = tree.path_to(target);
            let reward = rng.random_range(-1.0..1.0);
            backpropagate(&mut tree, &path, reward).map_err(|e| e.to_string())?;
            for id in path {
                replay.entry(id).or_default().push(reward);
            }
            updates += 1;
        }
        for node in tree.nodes() {
            let rewards = replay.get(&node.id).map(Vec::as_slice).unwrap_or(&[]);
            ensure!(
                node.visit_count == rewards.len() as u64,
                "sequence {s}: node {:?} has N={} but {} updates",
                node.id,
                node.visit_count,
                rewards.len()
            );
            let mean = if rewards.is_empty() { 0.0 } else { rewards.iter().sum::<f64>() / rewards.len() as f64 };
            let delta = (node.mean_reward - mean).abs();
            max_delta = max_delta.max(delta);
            ensure!(delta <= 1e-12, "sequence {s}: node {:?} Q={} vs replay {mean}", node.id, node.mean_reward);
        }
    }
    Ok(format!("500 sequences, {updates} backpropagations, max |dQ| = {max_delta:.1e}"))
}

// ---------------------------------------------------------------------------
// 3. Budget and early termination

const WORDS: &[&str] = &[
    "i", "drink", "scotch", "every", "night", "my", "mom", "lives", "in", "ohio", "we", "rent", "a",
    "small", "apartment", "near", "the", "lake", "nurse", "job",
];

fn noisy_backends(seed: u64) -> Backends {
    Backends::new(
        Arc::new(MockGenerator::new().with_hypernyms([("scotch", "a drink"), ("ohio", "a state")])),
        Arc::new(NoisyRewardModel { seed }),
        Arc::new(MockNli),
        Arc::new(MockEmbedder::hashed(8, seed)),
        None,
        ScorerSpec::reward_model(),
    )
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let spec = PrivacySpec::from_pii("s", &["scotch"]).unwrap();
    let template = PromptTemplate::default();
    let mut early = 0;
    let mut exhausted = 0;
    let mut runs = 0;
    for run in 0..1200 {
        // The last 200 runs raise the gate so budgets actually run out.
        let cfg = SearchConfig {
            reward_threshold: if run < 1000 { 0.10 } else { 0.95 },
            rng_seed: run,
            ..SearchConfig::default()
        };
        let backends = noisy_backends(rng.random());
        let len = rng.random_range(3..10);
        let words: Vec<String> = (0..len).map(|_| WORDS.choose(&mut rng).unwrap().to_string()).collect();
        let sentence = words.join(" ");
        let toks = tokenize(&sentence);
        let start = rng.random_range(0..toks.len());
        let end = (start + rng.random_range(1..3)).min(toks.len());
        let seg = AlignedSegment::new(&toks, start, end, 1.0, None).map_err(|e| e.to_string())?;
        let ctx = RewriteContext {
            backends: &backends,
            spec: &spec,
            cfg: &cfg,
            template: &template,
        };
        let selection = [Selection::Uct, Selection::Uniform, Selection::Route][run as usize % 3];
        let mut search_rng = ChaCha8Rng::seed_from_u64(run);
        let (trace, tree) = search_segment_with_tree(&ctx, &sentence, &seg, selection, &mut search_rng);
        runs += 1;
        ensure!(
            trace.expansions.len() <= 5 && tree.len() <= 6,
            "run {run}: {} expansions, {} nodes",
            trace.expansions.len(),
            tree.len()
        );
        if trace.terminated_early {
            early += 1;
            let last = trace.expansions.last().ok_or("early stop without expansions")?;
            ensure!(
                last.reward >= 0.10 && last.reward >= cfg.reward_threshold && last.accepted,
                "run {run}: early stop with reward {}",
                last.reward
            );
        } else if trace.expansions.len() == 5 {
            exhausted += 1;
        }
    }
    Ok(format!("{runs} runs: {early} early stops (all >= gamma), {exhausted} exhausted the budget of 5"))
}

// ---------------------------------------------------------------------------
// 4. Strategy separation

const SEPARATION_FIXTURE: &str = r#"{"doc_id":"r1","utterance":"I drink scotch every night.","pii":[{"surface":"scotch","category":"DRINK"}]}
{"doc_id":"r2","utterance":"My mom works at the Ohio hospital.","pii":[{"surface":"mom","category":"FAMILY"},{"surface":"Ohio","category":"LOC"}]}
{"doc_id":"r3","utterance":"I am a nurse in Denver.","pii":[{"surface":"nurse","category":"JOB"},{"surface":"Denver","category":"LOC"}]}
{"doc_id":"r4","utterance":"I moved to Boston last year.","pii":[{"surface":"Boston","category":"LOC"}]}
"#;

/// The generator ignores delete instructions for "boston" but can obscure it.
fn separation_generator() -> MockGenerator {
    MockGenerator::new()
        .with_hypernym("boston", "a big city")
        .with_override(RewriteAction::Delete, "boston", MockOverride::Echo)
}

fn dataset(text: &str) -> Dataset {
    let (records, rejects) = parse_dataset(text).unwrap();
    assert!(rejects.is_empty());
    Dataset {
        path: "fixture.jsonl".into(),
        sha256: sha256_hex(text.as_bytes()),
        records,
        rejects,
    }
}

fn criterion_4() -> Outcome {
    let ds = dataset(SEPARATION_FIXTURE);
    let backends = mock_backends(separation_generator(), ScorerSpec::reward_model());
    let opts = PipelineOptions {
        workers: 2,
        ..Default::default()
    };
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let report = run_ablation(&ds, &opts, &backends, dir.path()).map_err(|e| e.to_string())?;
    ensure!(report.rows.len() == 5, "ablation has {} rows", report.rows.len());
    let rate = |k: StrategyKind| report.row(k).and_then(|r| r.privacy_nli_rate);
    ensure!(rate(StrategyKind::Tree) == Some(100.0), "tree privacy {:?}", rate(StrategyKind::Tree));
    ensure!(rate(StrategyKind::OneStep) == Some(75.0), "one-step privacy {:?}", rate(StrategyKind::OneStep));

    // Chain: one generator call and one expansion per segment.
    let counting = Arc::new(CountingGenerator::new(separation_generator()));
    let chain_backends = Backends::new(
        counting.clone(),
        Arc::new(MockRewardModel),
        Arc::new(MockNli),
        Arc::new(MockEmbedder::hashed(8, 0)),
        Some(Arc::new(MockLogProb::new(std::f64::consts::E))),
        ScorerSpec::reward_model(),
    );
    let aligned = align_dataset(&ds.records, &opts, &chain_backends).map_err(|e| e.to_string())?;
    let mut segments = 0;
    for (record, a) in ds.records.iter().zip(&aligned) {
        let a = a.as_ref().map_err(|f| f.message.clone())?;
        let rw = rewrite_record(record, a, StrategyKind::Chain, &opts, &chain_backends).map_err(|f| f.message.clone())?;
        let n_seg = a.segment_surfaces().len();
        segments += n_seg;
        ensure!(rw.traces().count() == n_seg, "{}: {} traces for {n_seg} segments", record.doc_id, rw.traces().count());
        for t in rw.traces() {
            ensure!(
                t.expansions.len() + t.failures.len() == 1,
                "{}: chain trace made {} rewrites",
                record.doc_id,
                t.expansions.len() + t.failures.len()
            );
        }
    }
    ensure!(counting.calls() == segments, "chain made {} generator calls for {segments} segments", counting.calls());

    // Random selection with assorted budgets and seeds.
    let mut traces = 0;
    for budget in 1..=5 {
        for seed in 0..20 {
            let opts = PipelineOptions {
                cfg: SearchConfig {
                    tree_budget: budget,
                    reward_threshold: 0.99,
                    rng_seed: seed,
                    ..SearchConfig::default()
                },
                workers: 1,
                ..Default::default()
            };
            for (record, a) in ds.records.iter().zip(&aligned) {
                let a = a.as_ref().map_err(|f| f.message.clone())?;
                let rw = rewrite_record(record, a, StrategyKind::Random, &opts, &backends).map_err(|f| f.message.clone())?;
                for t in rw.traces() {
                    traces += 1;
                    ensure!(t.expansions.len() <= budget, "random: {} expansions with budget {budget}", t.expansions.len());
                    ensure!(t.failures.len() <= 2 * budget, "random: {} failed attempts", t.failures.len());
                }
            }
        }
    }
    Ok(format!(
        "tree 100%, one-step 75%; chain: {segments} calls for {segments} segments; random: {traces} traces within budget"
    ))
}

// ---------------------------------------------------------------------------
// 5. Metric oracles

fn random_tokens(rng: &mut ChaCha8Rng, alphabet: &[&str], max_len: usize) -> Vec<String> {
    let n = rng.random_range(0..=max_len);
    (0..n).map(|_| alphabet.choose(rng).unwrap().to_string()).collect()
}

fn oracle_rouge(cand: &[String], refr: &[String]) -> f64 {
    if cand.is_empty() || refr.is_empty() {
        return 0.0;
    }
    let mut pool: Vec<&String> = refr.iter().collect();
    let mut overlap = 0;
    for c in cand {
        if let Some(i) = pool.iter().position(|r| *r == c) {
            pool.remove(i);
            overlap += 1;
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let p = overlap as f64 / cand.len() as f64;
    let r = overlap as f64 / refr.len() as f64;
    2.0 * p * r / (p + r)
}

fn dedup(v: &[String]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for x in v {
        if !out.contains(x) {
            out.push(x.clone());
        }
    }
    out
}

fn oracle_pii(pred: &[String], truth: &[String]) -> (f64, f64, f64) {
    let (p, t) = (dedup(pred), dedup(truth));
    let hit = p.iter().filter(|x| t.contains(x)).count() as f64;
    let precision = if p.is_empty() { 1.0 } else { hit / p.len() as f64 };
    let recall = if t.is_empty() { 1.0 } else { hit / t.len() as f64 };
    let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    (precision, recall, f1)
}

fn oracle_oc(a: &[String], b: &[String]) -> f64 {
    let (a, b) = (dedup(a), dedup(b));
    match (a.is_empty(), b.is_empty()) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => a.iter().filter(|x| b.contains(x)).count() as f64 / a.len().min(b.len()) as f64,
    }
}

fn oracle_distinct2(texts: &[Vec<String>]) -> f64 {
    if texts.is_empty() {
        return 0.0;
    }
    let per: Vec<f64> = texts
        .iter()
        .map(|t| {
            if t.len() < 2 {
                return 1.0;
            }
            let bigrams: Vec<(&String, &String)> = (0..t.len() - 1).map(|i| (&t[i], &t[i + 1])).collect();
            let unique = (0..bigrams.len()).filter(|&i| !bigrams[..i].contains(&bigrams[i])).count();
            unique as f64 / bigrams.len() as f64
        })
        .collect();
    per.iter().sum::<f64>() / per.len() as f64
}

/// Minimum cost over every possible alignment, by exhaustive recursion.
fn oracle_min_alignment(a: &[String], b: &[String]) -> usize {
    match (a.split_first(), b.split_first()) {
        (None, None) => 0,
        (Some(_), None) => a.len(),
        (None, Some(_)) => b.len(),
        (Some((x, ra)), Some((y, rb))) => {
            let sub = usize::from(x != y) + oracle_min_alignment(ra, rb);
            let del = 1 + oracle_min_alignment(ra, b);
            let ins = 1 + oracle_min_alignment(a, rb);
            sub.min(del).min(ins)
        }
    }
}

fn levenshtein(a: &[String], b: &[String]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    for (i, x) in a.iter().enumerate() {
        let mut cur = vec![i + 1; b.len() + 1];
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = (prev[j] + usize::from(x != y)).min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        prev = cur;
    }
    prev[b.len()]
}

fn criterion_5() -> Outcome {
    let v = |s: &str| s.split_whitespace().map(String::from).collect::<Vec<_>>();
    let close = |a: f64, b: f64| (a - b).abs() < 1e-12;
    ensure!(close(rouge1_f("a b c", "a b d"), 2.0 / 3.0), "rouge worked example");
    ensure!(rouge1_f("the cat", "the cat") == 1.0 && rouge1_f("", "a") == 0.0, "rouge boundaries");
    let s = pii_match_scores(&["a"], &["a", "b"]);
    ensure!((s.precision, s.recall) == (1.0, 0.5) && close(s.f1, 2.0 / 3.0), "pii worked example");
    let s = pii_match_scores(&["a", "b"], &[]);
    ensure!((s.precision, s.recall, s.f1) == (0.0, 1.0, 0.0), "pii vacuous recall");
    ensure!(distinct2(&["a b c d"]) == 1.0 && distinct2(&["a a a"]) == 0.5 && distinct2(&["x"]) == 1.0, "distinct2 examples");
    let set = |s: &str| s.split_whitespace().map(String::from).collect::<HashSet<_>>();
    ensure!(overlap_coefficient(&set("a b c"), &set("b c d e")) == 2.0 / 3.0, "oc example");
    ensure!(overlap_coefficient(&set("a b"), &set("b c")) == 0.5, "oc example");
    ensure!(
        align_tokens(&v("a b c"), &v("a c"))
            == vec![(Some("a".into()), Some("a".into())), (Some("b".into()), None), (Some("c".into()), Some("c".into()))],
        "alignment example"
    );

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let abc = ["a", "b", "c"];
    let abcd = ["a", "b", "c", "d"];
    for i in 0..10_000 {
        let (c, r) = (random_tokens(&mut rng, &abcd, 8), random_tokens(&mut rng, &abcd, 8));
        let got = rouge1_f(&c.join(" "), &r.join(" "));
        ensure!(got == oracle_rouge(&c, &r), "rouge case {i}: {c:?} vs {r:?}");
        ensure!(got == rouge1_f(&r.join(" "), &c.join(" ")), "rouge asymmetric on case {i}");

        let (p, t) = (random_tokens(&mut rng, &abcd, 4), random_tokens(&mut rng, &abcd, 4));
        let s = pii_match_scores(&p, &t);
        ensure!((s.precision, s.recall, s.f1) == oracle_pii(&p, &t), "pii case {i}: {p:?} vs {t:?}");

        let (a, b) = (random_tokens(&mut rng, &abcd, 6), random_tokens(&mut rng, &abcd, 6));
        let (sa, sb): (HashSet<String>, HashSet<String>) = (a.iter().cloned().collect(), b.iter().cloned().collect());
        ensure!(overlap_coefficient(&sa, &sb) == oracle_oc(&a, &b), "oc case {i}: {a:?} vs {b:?}");

        let texts: Vec<Vec<String>> = (0..rng.random_range(0..4)).map(|_| random_tokens(&mut rng, &abc, 8)).collect();
        let joined: Vec<String> = texts.iter().map(|t| t.join(" ")).collect();
        ensure!(distinct2(&joined) == oracle_distinct2(&texts), "distinct2 case {i}: {texts:?}");

        let (x, y) = (random_tokens(&mut rng, &abc, 5), random_tokens(&mut rng, &abc, 5));
        let pairs = align_tokens(&x, &y);
        let lhs: Vec<String> = pairs.iter().filter_map(|p| p.0.clone()).collect();
        let rhs: Vec<String> = pairs.iter().filter_map(|p| p.1.clone()).collect();
        ensure!(lhs == x && rhs == y, "alignment case {i} does not project back onto its inputs");
        ensure!(pairs.iter().all(|p| p.0.is_some() || p.1.is_some()), "alignment case {i} has an empty column");
        let best = oracle_min_alignment(&x, &y);
        ensure!(
            alignment_cost(&pairs) == best && levenshtein(&x, &y) == best && token_edit_distance(&x, &y) == best,
            "alignment case {i}: cost {} vs exhaustive {best}",
            alignment_cost(&pairs)
        );
    }
    Ok("worked examples hold; 10,000 random inputs per metric match the brute-force oracles exactly".into())
}

// ---------------------------------------------------------------------------
// 6. Attack

const NAMES: &[&str] = &["zed", "amy", "bob", "kim", "eve", "dan", "lou"];
const OBS: &[&str] = &["p", "q", "r", "s"];
/// Probabilities are multiples of 1/16, so every product below is exact.
const UNITS: u32 = 16;

fn random_units(rng: &mut ChaCha8Rng, keys: &[String]) -> BTreeMap<String, u32> {
    let mut m: BTreeMap<String, u32> = keys.iter().map(|k| (k.clone(), 0)).collect();
    for _ in 0..UNITS {
        *m.get_mut(keys.choose(rng).unwrap()).unwrap() += 1;
    }
    m
}

fn to_dist(units: &BTreeMap<String, u32>) -> Distribution {
    units.iter().map(|(k, u)| (k.clone(), f64::from(*u) / f64::from(UNITS))).collect()
}

struct IntChannel {
    prior: BTreeMap<String, u32>,
    emission: BTreeMap<String, BTreeMap<String, u32>>,
}

impl IntChannel {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let mut names: Vec<String> = NAMES.iter().map(|s| s.to_string()).collect();
        names.shuffle(rng);
        names.truncate(rng.random_range(1..=6));
        let mut obs: Vec<String> = OBS.iter().map(|s| s.to_string()).collect();
        obs.shuffle(rng);
        obs.truncate(rng.random_range(1..=4));
        let prior = random_units(rng, &names);
        let emission = names.iter().map(|x| (x.clone(), random_units(rng, &obs))).collect();
        Self { prior, emission }
    }

    fn model(&self, contexts: Option<Vec<ContextEntry>>) -> ChannelModel {
        let emission = self.emission.iter().map(|(x, r)| (x.clone(), to_dist(r))).collect();
        ChannelModel::new(to_dist(&self.prior), emission, contexts).unwrap()
    }

    /// Exhaustive posterior: Pr(x|y) ∝ Pr(y|x)·Pr(x), in integer units.
    fn posterior_argmax(&self, y: &str) -> Option<String> {
        let mut best: Option<(u32, &String)> = None;
        for (x, p) in &self.prior {
            let w = p * self.emission[x].get(y).copied().unwrap_or(0);
            match best {
                Some((b, bx)) if w < b || (w == b && bx <= x) => {}
                _ => best = Some((w, x)),
            }
        }
        best.filter(|(w, _)| *w > 0).map(|(_, x)| x.clone())
    }
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut checked = 0;
    for c in 0..5000 {
        let ch = IntChannel::random(&mut rng);
        let model = ch.model(None);
        for y in OBS.iter().chain(["never"].iter()) {
            let want = ch.posterior_argmax(y);
            match (reconstruct_context_free(y, &model), want) {
                (Ok(x), Some(w)) => ensure!(x == w, "channel {c}, y={y}: got {x}, oracle {w}"),
                (Err(AttackError::Unreachable(_)), None) => {}
                (got, want) => return Err(format!("channel {c}, y={y}: got {got:?}, oracle {want:?}")),
            }
            checked += 1;
        }
    }

    // The (0.9, 0.1) channel where both names are emitted as "person".
    let mut emission = BTreeMap::new();
    for x in ["alice", "bob"] {
        emission.insert(x.to_string(), Distribution::from([("person".to_string(), 1.0)]));
    }
    let prior = Distribution::from([("alice".to_string(), 0.9), ("bob".to_string(), 0.1)]);
    let person = ChannelModel::new(prior, emission, None).map_err(|e| e.to_string())?;
    let analytic = bayes_accuracy(&person);
    let mut sampler = ChaCha8Rng::seed_from_u64(60);
    let pairs: Vec<(Utterance, String)> = (0..10_000)
        .map(|i| {
            let x = if sampler.random_bool(0.9) { "alice" } else { "bob" };
            (Utterance::new(format!("s{i}"), format!("{x} went home")).unwrap(), "person went home".to_string())
        })
        .collect();
    let report = attack_success_rate(&pairs, &person, AttackMode::ContextFree).map_err(|e| e.to_string())?;
    let asr = report.asr_context_free.ok_or("ASR undefined")?;
    ensure!((0.88..=0.92).contains(&asr), "empirical ASR {asr}");
    ensure!((analytic - 0.9).abs() < 1e-12, "analytic Bayes accuracy {analytic}");

    // Contextual tables that repeat the context-free ones change nothing.
    let ch = loop {
        let ch = IntChannel::random(&mut rng);
        if ch.prior.len() >= 3 {
            break ch;
        }
    };
    let xs: Vec<String> = ch.prior.keys().cloned().collect();
    let fillers = ["went", "home", "with", "her"];
    let mut corpus = Vec::new();
    for i in 0..400 {
        let mut orig = Vec::new();
        let mut rew = Vec::new();
        for _ in 0..rng.random_range(2..7) {
            if rng.random_bool(0.5) {
                let x = xs.choose(&mut rng).unwrap().clone();
                let row = &ch.emission[&x];
                let mut k = rng.random_range(0..UNITS);
                let y = row
                    .iter()
                    .find(|(_, u)| {
                        if k < **u {
                            true
                        } else {
                            k -= **u;
                            false
                        }
                    })
                    .map(|(y, _)| y.clone())
                    .unwrap();
                orig.push(x);
                rew.push(y);
            } else {
                let f = fillers.choose(&mut rng).unwrap().to_string();
                orig.push(f.clone());
                rew.push(f);
            }
        }
        corpus.push((Utterance::new(format!("c{i}"), orig.join(" ")).unwrap(), rew.join(" ")));
    }
    let base = ch.model(None);
    let vocab: BTreeSet<String> = xs.iter().cloned().collect();
    let mut contexts: BTreeSet<(String, String)> = BTreeSet::new();
    for (u, r) in &corpus {
        for s in attack_sites(u.tokens(), &tokenize(r), &vocab).2 {
            contexts.insert((s.left, s.right));
        }
    }
    let entries: Vec<ContextEntry> = contexts
        .iter()
        .enumerate()
        .map(|(i, (l, r))| ContextEntry {
            left: l.clone(),
            right: r.clone(),
            prior: (i % 2 == 0).then(|| base.prior().clone()),
            emission: if i % 3 == 0 {
                BTreeMap::new()
            } else {
                ch.emission.iter().map(|(x, row)| (x.clone(), to_dist(row))).collect()
            },
        })
        .collect();
    let n_ctx = entries.len();
    let degenerate = ch.model(Some(entries));
    let mut sites = 0;
    for (u, r) in &corpus {
        for s in attack_sites(u.tokens(), &tokenize(r), &vocab).2 {
            let a = reconstruct_context_free(&s.observed, &degenerate).ok();
            let b = reconstruct_contextual(&s.observed, (&s.left, &s.right), &degenerate).ok();
            ensure!(a == b, "context ({}, {}) y={}: {a:?} vs {b:?}", s.left, s.right, s.observed);
            sites += 1;
        }
    }
    let r = attack_success_rate(&corpus, &degenerate, AttackMode::Contextual).map_err(|e| e.to_string())?;
    ensure!(r.asr_contextual == r.asr_context_free, "contextual ASR {:?} vs {:?}", r.asr_contextual, r.asr_context_free);
    Ok(format!(
        "{checked} (channel, y) cases match the posterior oracle; ASR {asr:.4} (analytic {analytic}); \
         degenerate context table agrees on {sites} sites over {n_ctx} contexts"
    ))
}

// ---------------------------------------------------------------------------
// 7. Cost

fn criterion_7() -> Outcome {
    let e = cost_efficiency(93.02, 82.24, 0.332, 0.42).map_err(|e| e.to_string())?;
    ensure!((e - 122.5).abs() <= 0.05, "efficiency {e}");
    Ok(format!("cost_efficiency(93.02, 82.24, 0.332, 0.42) = {e:.4}"))
}

// ---------------------------------------------------------------------------
// 8. Determinism

fn read_outputs(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut out = BTreeMap::new();
    out.insert(REWRITES_FILE.to_string(), std::fs::read(dir.join(REWRITES_FILE)).map_err(|e| e.to_string())?);
    let traces = dir.join("traces");
    if !traces.exists() {
        return Ok(out);
    }
    for entry in std::fs::read_dir(traces).map_err(|e| e.to_string())? {
        let p = entry.map_err(|e| e.to_string())?.path();
        out.insert(
            format!("traces/{}", p.file_name().unwrap().to_string_lossy()),
            std::fs::read(&p).map_err(|e| e.to_string())?,
        );
    }
    Ok(out)
}

fn criterion_8() -> Outcome {
    let ds = dataset(&format!("{SEPARATION_FIXTURE}{NAP_FIXTURE}"));
    let mut compared = 0;
    for noisy in [false, true] {
        for strategy in StrategyKind::ALL {
            let mut runs = Vec::new();
            for workers in [1, 4] {
                let backends = if noisy {
                    noisy_backends(11)
                } else {
                    mock_backends(separation_generator(), ScorerSpec::reward_model())
                };
                let opts = PipelineOptions {
                    strategy,
                    workers,
                    align_threshold: noisy.then_some(0.8),
                    cfg: SearchConfig {
                        rng_seed: 42,
                        reward_threshold: if noisy { 0.6 } else { 0.10 },
                        ..SearchConfig::default()
                    },
                    ..Default::default()
                };
                let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
                run_pipeline(&ds, &opts, &backends, dir.path()).map_err(|e| e.to_string())?;
                let out = read_outputs(dir.path()).map_err(|e| format!("{strategy} (noisy={noisy}): {e}"))?;
                runs.push(out);
            }
            ensure!(runs[0] == runs[1], "{strategy} (noisy={noisy}): outputs differ between runs");
            compared += runs[0].len();
        }
    }
    Ok(format!("10 configurations run twice; {compared} files byte-identical"))
}

// ---------------------------------------------------------------------------
// 9. End-to-end privacy on the two-segment example

const NAP_FIXTURE: &str = r#"{"doc_id":"nap-2","utterance":"Hello . I live in an apartment . It is a low income residence .","persona":"I live in low income apartments.","pii":[{"surface":"apartment","category":"HOUSING"},{"surface":"low income","category":"FINANCE"}]}
"#;

fn criterion_9() -> Outcome {
    let ds = dataset(NAP_FIXTURE);
    let backends = mock_backends(MockGenerator::new(), ScorerSpec::reward_model());
    let opts = PipelineOptions {
        align_threshold: Some(0.5),
        workers: 1,
        ..Default::default()
    };
    let aligned = align_dataset(&ds.records, &opts, &backends).map_err(|e| e.to_string())?;
    let segs = aligned[0].as_ref().map_err(|f| f.message.clone())?.segment_surfaces();
    ensure!(segs == ["apartment", "low income"], "aligned segments {segs:?}");

    // Before rewriting, the spec is entailed.
    let spec = &ds.records[0].privacy_spec;
    let before = redraft_core::eval::metrics::privacy_nli_rate(
        &[(ds.records[0].utterance.clone(), spec.clone())],
        &MockNli,
        0.5,
    );
    ensure!(before.percentage == Some(0.0), "original already private: {:?}", before.percentage);

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = run_pipeline(&ds, &opts, &backends, dir.path()).map_err(|e| e.to_string())?;
    let text = &out.rewrites[0].rewrite;
    let leaked: Vec<String> = tokenize(text)
        .into_iter()
        .filter(|t| ["apartment", "low", "income"].contains(&t.as_str()))
        .collect();
    ensure!(leaked.is_empty(), "rewrite {text:?} still contains {leaked:?}");
    ensure!(out.metrics.privacy_nli_rate == Some(100.0), "privacy rate {:?}", out.metrics.privacy_nli_rate);

    // The same result straight from the search layer with hand-placed segments.
    let sentence = "it is a low income residence";
    let seg = AlignedSegment::locate(sentence, "low income", 1.0).map_err(|e| e.to_string())?;
    let alignment = AlignmentResult {
        segments: vec![seg],
        threshold_used: 0.5,
        scorer_name: "fixed".into(),
    };
    let ctx = RewriteContext {
        backends: &backends,
        spec,
        cfg: &SearchConfig::default(),
        template: &PromptTemplate::default(),
    };
    let direct = rewrite_document(&ctx, sentence, &alignment, StrategyKind::Tree, &mut ChaCha8Rng::seed_from_u64(0));
    ensure!(direct.final_text == "it is a residence", "direct rewrite {:?}", direct.final_text);
    Ok(format!("rewrite {text:?}: no segment tokens, privacy rate 100% (was 0%)"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("UCT oracle and unvisited-first selection", criterion_1),
        ("backpropagation exactness", criterion_2),
        ("budget and early termination", criterion_3),
        ("strategy separation fixture", criterion_4),
        ("metric oracles", criterion_5),
        ("attack Bayes-optimality", criterion_6),
        ("cost calculator", criterion_7),
        ("end-to-end determinism", criterion_8),
        ("mock end-to-end privacy", criterion_9),
    ];
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = std::time::Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("[PASS] criterion {}: {name} ({secs:.2}s): {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("[FAIL] criterion {}: {name} ({secs:.2}s): {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
