//! Acceptance suite: nine end-to-end checks, one PASS/FAIL line each.
//! Runs with its own harness so the lines are always printed.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use common::*;
use kgrec_core::ingest::{split_leave_last_out, training_graph, write_canonical, UserHistory};
use kgrec_core::kg::{EntityId, EntityKind, KnowledgeGraph, Relation, Triple};
use kgrec_core::llm::{BackendKind, TranscriptLog};
use kgrec_core::path_text::{
    build_noninformative_set, trans_2hop, trans_3hop, word_count_report, ORIGINAL_WORDS_PER_2HOP_PATH,
    ORIGINAL_WORDS_PER_3HOP_PATH,
};
use kgrec_core::ranking_eval::{ndcg_at_k, Method};
use kgrec_core::rng::stream;
use kgrec_core::run::{full_run, EvaluateOptions, RunConfig, SimulateOptions};
use kgrec_core::simulation::{Popularity, TrainingSample, UserSplit, UserState};
use kgrec_core::synth::{density, planted, DensityConfig, PlantedConfig};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn path_oracle() -> Outcome {
    let start = Instant::now();
    let (mut graphs, mut pairs, mut p2, mut p3) = (0, 0, 0, 0);
    for seed in 0..240u64 {
        let density = [0.08, 0.15, 0.3][seed as usize % 3];
        let f = random_fixture(seed, density);
        graphs += 1;
        for &u in &f.users {
            for &i in &f.items {
                let (want2, got2) = (oracle_2hop(&f.graph, u, i), found_2hop(&f.graph, u, i));
                ensure!(want2 == got2, "2-hop mismatch for {u}->{i} in graph {seed}");
                let (want3, got3) = (oracle_3hop(&f.graph, u, i), found_3hop(&f.graph, u, i));
                ensure!(want3 == got3, "3-hop mismatch for {u}->{i} in graph {seed}");
                ensure!(
                    f.graph.find_3hop(u, i).unwrap().len() == got3.len(),
                    "duplicate 3-hop paths for {u}->{i} in graph {seed}"
                );
                pairs += 1;
                p2 += want2.len();
                p3 += want3.len();
            }
        }
    }
    let took = start.elapsed();
    ensure!(took < Duration::from_secs(10), "took {took:?}");
    Ok(format!(
        "{graphs} graphs, {pairs} pairs, {p2} 2-hop and {p3} 3-hop paths match the DFS oracle in {:.2}s",
        took.as_secs_f64()
    ))
}

fn trans_2hop_contract() -> Outcome {
    let mut g = KnowledgeGraph::new();
    let u = g.add_entity(EntityKind::User, "").unwrap();
    let i = g.add_entity(EntityKind::Item, "Justified").unwrap();
    for label in ["seat", "garden"] {
        let f = g.add_entity(EntityKind::Feature, label).unwrap();
        g.add_triple(Triple::new(u, Relation::Mention, f)).unwrap();
        g.add_triple(Triple::new(i, Relation::DescribeAs, f)).unwrap();
    }
    let t = trans_2hop(&g, u, i).unwrap();
    let want = "The user mentions 'seat' 'garden', which are described by the item.";
    ensure!(t.text() == want, "rendered {:?}", t.text());
    ensure!(
        t.second_person("CD") == "You mentions 'seat' 'garden', which are described by this CD.",
        "second person {:?}",
        t.second_person("CD")
    );

    let mut checked = 0;
    for seed in 0..200u64 {
        let f = random_fixture(1000 + seed, 0.25);
        for &u in &f.users {
            for &i in &f.items {
                let paths = f.graph.find_2hop(u, i).unwrap();
                let t = trans_2hop(&f.graph, u, i).unwrap();
                let pairs: BTreeSet<_> = paths.iter().map(|p| (p.step1, p.step2)).collect();
                ensure!(t.sentences.len() == pairs.len(), "sentence count for {u}->{i}");
                let text = t.text();
                // per relation pair, each mid label is listed exactly once
                for pair in &pairs {
                    let mids: BTreeSet<&str> = paths
                        .iter()
                        .filter(|p| (p.step1, p.step2) == *pair)
                        .map(|p| f.graph.label(p.mid).unwrap())
                        .collect();
                    let group = t
                        .groups
                        .iter()
                        .find(|gr| (gr.first, gr.second) == *pair)
                        .ok_or("missing group")?;
                    let listed: Vec<&str> = group.mids.iter().map(String::as_str).collect();
                    ensure!(listed.len() == mids.len(), "duplicate mid in group for {u}->{i}");
                    ensure!(listed.iter().copied().collect::<BTreeSet<_>>() == mids, "group labels differ");
                }
                for p in &paths {
                    let label = f.graph.label(p.mid).unwrap();
                    let in_groups = t.groups.iter().filter(|gr| gr.mids.iter().any(|m| m == label)).count();
                    let quoted = text.matches(&format!("'{label}'")).count();
                    ensure!(quoted == in_groups, "label {label} quoted {quoted}x, in {in_groups} groups");
                }
                checked += 1;
            }
        }
    }
    Ok(format!("logged example byte-exact; {checked} random pairs obey the sentence and label counts"))
}

fn trans_3hop_filter() -> Outcome {
    let mut checked = 0;
    let mut nonempty_su = 0;
    for seed in 0..150u64 {
        let f = random_fixture(5000 + seed, 0.2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for &u in &f.users {
            let mut items = f.items.clone();
            items.shuffle(&mut rng);
            let n = rng.random_range(1..=items.len() / 2);
            let samples: Vec<TrainingSample> = (0..n)
                .map(|k| TrainingSample {
                    user: u,
                    positive: items[2 * k],
                    negative: items[2 * k + 1],
                    step_index: k,
                })
                .collect();
            let s_u = build_noninformative_set(&f.graph, u, &samples).unwrap();
            let e_pos: BTreeSet<String> = samples
                .iter()
                .flat_map(|s| oracle_descriptive(&f.graph, u, s.positive))
                .collect();
            let e_neg: BTreeSet<String> = samples
                .iter()
                .flat_map(|s| oracle_descriptive(&f.graph, u, s.negative))
                .collect();
            let want: BTreeSet<String> = e_pos.intersection(&e_neg).cloned().collect();
            ensure!(s_u.entities == want, "S_u differs for {u} in graph {seed}");
            nonempty_su += usize::from(!want.is_empty());
            for &i in &f.items {
                let t = trans_3hop(&f.graph, u, i, &s_u).unwrap();
                let out: BTreeSet<String> = t.labels.iter().cloned().collect();
                let desc = oracle_descriptive(&f.graph, u, i);
                ensure!(out.is_disjoint(&want), "output meets S_u for {u}->{i}");
                ensure!(out.is_subset(&desc), "label outside descriptive union for {u}->{i}");
                ensure!(
                    out == desc.difference(&want).cloned().collect(),
                    "filtered labels incomplete for {u}->{i}"
                );
                checked += 1;
            }
        }
    }
    ensure!(nonempty_su > 0, "no fixture produced a non-empty S_u");
    Ok(format!("{checked} pairs filtered correctly; {nonempty_su} users with non-empty S_u"))
}

fn word_counts() -> Outcome {
    let two = 13.38 * ORIGINAL_WORDS_PER_2HOP_PATH as f64;
    let three = 312.89 * ORIGINAL_WORDS_PER_3HOP_PATH as f64;
    ensure!(format!("{two:.2}") == "40.14", "2-hop convention gives {two:.2}");
    ensure!(format!("{three:.2}") == "1564.45", "3-hop convention gives {three:.2}");

    let data = density(&DensityConfig::default());
    let histories: Vec<UserHistory> = data.histories.iter().take(40).cloned().collect();
    let splits = split_leave_last_out(&histories).unwrap();
    let g = training_graph(&data.graph, &splits);
    let pop = Popularity::from_interactions(splits.iter().flat_map(|s| s.train.iter()));
    let mut pairs = Vec::new();
    let mut filters = BTreeMap::new();
    for s in &splits {
        let mut rng = stream(1, "negatives", &s.user.to_string());
        let exclude = s.all_items();
        let samples: Vec<TrainingSample> = s
            .train
            .iter()
            .enumerate()
            .map(|(k, &p)| TrainingSample {
                user: s.user,
                positive: p,
                negative: pop.sample_negative(&mut rng, s.user, &exclude).unwrap(),
                step_index: k,
            })
            .collect();
        for t in &samples {
            pairs.push((s.user, t.positive));
            pairs.push((s.user, t.negative));
        }
        filters.insert(s.user, build_noninformative_set(&g, s.user, &samples).unwrap());
    }
    let r = word_count_report(&g, &pairs, &filters).unwrap();
    let (r2, r3) = (r.two_hop.reduction_percentage, r.three_hop.reduction_percentage);
    ensure!(
        (r.two_hop.avg_paths - 13.6).abs() <= 0.3 * 13.6 && (r.three_hop.avg_paths - 350.0).abs() <= 0.3 * 350.0,
        "densities off target: {:.2} / {:.2}",
        r.two_hop.avg_paths,
        r.three_hop.avg_paths
    );
    ensure!((55.0..=70.0).contains(&r2), "2-hop reduction {r2:.2}%");
    ensure!(r3 >= 90.0, "3-hop reduction {r3:.2}%");
    Ok(format!(
        "convention reproduces 40.14 / 1564.45; {} pairs at {:.2} / {:.2} paths: 2-hop -{r2:.2}%, 3-hop -{r3:.2}%",
        r.pairs, r.two_hop.avg_paths, r.three_hop.avg_paths
    ))
}

fn ndcg_checks() -> Outcome {
    let list: Vec<EntityId> = (0..10).map(EntityId::item).collect();
    let mut worst: f64 = 0.0;
    for r in 0..10 {
        for k in [1, 5, 10] {
            let dcg: f64 = list
                .iter()
                .take(k)
                .enumerate()
                .map(|(pos, &e)| {
                    let rel = if e == list[r] { 1.0 } else { 0.0 };
                    (2f64.powf(rel) - 1.0) / ((pos + 2) as f64).log2()
                })
                .sum();
            let idcg = 1.0 / 2f64.log2();
            let got = ndcg_at_k(&list, list[r], k).unwrap();
            worst = worst.max((got - dcg / idcg).abs());
        }
    }
    ensure!(worst <= 1e-12, "closed form off by {worst:e}");
    let mut rng = stream(2024, "random-ranker", "acceptance");
    let trials = 10_000;
    let mut sum = 0.0;
    for _ in 0..trials {
        let mut ranked = list.clone();
        ranked.shuffle(&mut rng);
        sum += ndcg_at_k(&ranked, list[0], 1).unwrap();
    }
    let mean = sum / trials as f64;
    ensure!((mean - 0.1).abs() <= 0.02, "random NDCG@1 {mean:.4}");
    Ok(format!("max deviation {worst:.1e}; random ranker NDCG@1 = {mean:.4} over {trials} trials"))
}

struct PlantedRuns {
    _dir: tempfile::TempDir,
    kg: PathBuf,
    no_kg: PathBuf,
    kg_ndcg1: f64,
    no_kg_ndcg1: f64,
    elapsed: Duration,
}

fn planted_config(root: &Path) -> RunConfig {
    let data = planted(&PlantedConfig::default());
    let manifest = write_canonical(&data, &root.join("planted")).unwrap();
    RunConfig {
        dataset: manifest,
        seed: 3,
        users: 50,
        ..RunConfig::default()
    }
}

fn sim_opts() -> SimulateOptions {
    SimulateOptions {
        jobs: 4,
        ..SimulateOptions::default()
    }
}

fn eval_opts() -> EvaluateOptions {
    EvaluateOptions {
        jobs: 4,
        word_counts: true,
        ..EvaluateOptions::default()
    }
}

fn planted_runs() -> &'static PlantedRuns {
    static RUNS: OnceLock<PlantedRuns> = OnceLock::new();
    RUNS.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let start = Instant::now();
        let cfg = planted_config(dir.path());
        let kg = dir.path().join("run-kg");
        let (_, report) = full_run(&cfg, &kg, &sim_opts(), &eval_opts()).unwrap();
        let kg_ndcg1 = report.unwrap().row(Method::Agent).unwrap().ndcg[&1].mean;
        let mut ablation = cfg.clone();
        ablation.kg_enabled = false;
        let no_kg = dir.path().join("run-no-kg");
        let (_, report) = full_run(&ablation, &no_kg, &sim_opts(), &eval_opts()).unwrap();
        let no_kg_ndcg1 = report.unwrap().row(Method::Agent).unwrap().ndcg[&1].mean;
        PlantedRuns {
            _dir: dir,
            kg,
            no_kg,
            kg_ndcg1,
            no_kg_ndcg1,
            elapsed: start.elapsed(),
        }
    })
}

fn planted_separation() -> Outcome {
    let r = planted_runs();
    ensure!(r.kg_ndcg1 >= 0.9, "KG NDCG@1 {:.3} < 0.9", r.kg_ndcg1);
    ensure!(r.no_kg_ndcg1 <= 0.3, "no-KG NDCG@1 {:.3} > 0.3", r.no_kg_ndcg1);
    ensure!(r.elapsed < Duration::from_secs(120), "took {:?}", r.elapsed);
    Ok(format!(
        "50 users: NDCG@1 KG {:.3} vs no-KG {:.3} in {:.1}s",
        r.kg_ndcg1,
        r.no_kg_ndcg1,
        r.elapsed.as_secs_f64()
    ))
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = planted_config(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    full_run(&cfg, &a, &sim_opts(), &eval_opts()).unwrap();
    full_run(&cfg, &b, &sim_opts(), &eval_opts()).unwrap();
    let (ta, tb) = (tree(&a), tree(&b));
    ensure!(
        ta.keys().collect::<Vec<_>>() == tb.keys().collect::<Vec<_>>(),
        "file sets differ"
    );
    for (path, bytes) in &ta {
        ensure!(tb[path] == *bytes, "{} differs", path.display());
    }
    let total: usize = ta.values().map(Vec::len).sum();
    Ok(format!("{} files ({total} bytes) byte-identical across two runs", ta.len()))
}

fn leakage() -> Outcome {
    let runs = planted_runs();
    let mut prompts = 0;
    for run in [&runs.kg, &runs.no_kg] {
        let splits: Vec<UserSplit> = serde_json::from_str(&fs::read_to_string(run.join("splits.json")).unwrap()).unwrap();
        let cfg: RunConfig = serde_json::from_str(&fs::read_to_string(run.join("config.json")).unwrap()).unwrap();
        let data = kgrec_core::ingest::load_dataset(&cfg.dataset).unwrap();
        let held_out: BTreeMap<EntityId, EntityId> = splits.iter().map(|s| (s.test, s.user)).collect();
        let titles: Vec<(EntityId, String)> = held_out
            .keys()
            .map(|&i| (i, data.graph.label(i).unwrap().to_string()))
            .collect();
        let ids: Vec<regex::Regex> = held_out
            .keys()
            .map(|i| regex::Regex::new(&format!(r"\b{}\b", regex::escape(&i.to_string()))).unwrap())
            .collect();

        let train_graph = training_graph(&data.graph, &splits);
        for s in &splits {
            ensure!(
                !train_graph.contains_triple(&Triple::new(s.user, Relation::Purchase, s.test)),
                "held-out purchase of {} kept",
                s.user
            );
            let state: UserState = serde_json::from_str(
                &fs::read_to_string(UserState::checkpoint_path(&run.join("checkpoints"), s.user)).unwrap(),
            )
            .unwrap();
            for t in &state.samples {
                for item in [t.positive, t.negative] {
                    ensure!(!held_out.contains_key(&item), "sample of {} uses held-out {item}", s.user);
                }
            }
            ensure!(
                !state.item_memories.keys().any(|i| held_out.contains_key(i)),
                "{} holds a memory of a held-out item",
                s.user
            );
        }
        for rec in TranscriptLog::read_all(&run.join("transcripts")).unwrap() {
            let text = format!("{}\n{}", rec.system, rec.user);
            for (id, title) in &titles {
                ensure!(!text.contains(title.as_str()), "title of held-out {id} in {}", rec.step_id);
            }
            for re in &ids {
                ensure!(!re.is_match(&text), "held-out id {} in {}", re.as_str(), rec.step_id);
            }
            prompts += 1;
        }
    }
    ensure!(prompts > 0, "no training prompts found");
    Ok(format!("{prompts} training prompts, samples, memories and S_u inputs free of held-out items"))
}

fn replay_fidelity() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = planted_config(dir.path());
    cfg.users = 12;
    let (url, served) = spawn_chat_server();
    cfg.llm.backend = BackendKind::Http;
    cfg.llm.endpoint = Some(url);
    cfg.llm.api_key_env = "KGREC_ACCEPTANCE_UNSET_KEY".into();
    let live = dir.path().join("live");
    full_run(&cfg, &live, &sim_opts(), &eval_opts()).map_err(|e| format!("live run: {e}"))?;
    let calls = served.load(std::sync::atomic::Ordering::SeqCst);
    ensure!(calls > 0, "server saw no requests");

    let mut replay = cfg.clone();
    replay.llm.backend = BackendKind::Replay;
    replay.llm.endpoint = None;
    replay.llm.replay_from = Some(live.clone());
    let again = dir.path().join("replayed");
    full_run(&replay, &again, &sim_opts(), &eval_opts()).map_err(|e| format!("replay run: {e}"))?;
    ensure!(served.load(std::sync::atomic::Ordering::SeqCst) == calls, "replay hit the server");
    for f in ["steps.jsonl", "memories.json", "eval/rank_records.jsonl", "eval/report.json"] {
        ensure!(
            fs::read(live.join(f)).unwrap() == fs::read(again.join(f)).unwrap(),
            "{f} differs after replay"
        );
    }
    Ok(format!("{calls} recorded HTTP calls replayed; steps, memories and rankings identical"))
}

fn main() {
    let checks: [(&str, fn() -> Outcome); 9] = [
        ("path-oracle equivalence", path_oracle),
        ("2-hop translation contract", trans_2hop_contract),
        ("3-hop non-informative filter", trans_3hop_filter),
        ("word-count accounting", word_counts),
        ("NDCG correctness", ndcg_checks),
        ("planted-preference separation", planted_separation),
        ("run determinism", determinism),
        ("leakage scan", leakage),
        ("replay fidelity", replay_fidelity),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (n, (name, check)) in checks.into_iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(msg)
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {}. {name}: {detail} [{secs:.1}s]", n + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {}. {name}: {why} [{secs:.1}s]", n + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance check(s) failed");
        std::process::exit(1);
    }
}
