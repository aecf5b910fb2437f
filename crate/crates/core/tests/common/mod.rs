//! Random fixture graphs and brute-force path oracles shared by the
//! integration tests.

#![allow(dead_code)]

use std::collections::BTreeSet;

use kgrec_core::kg::{DirectedStep, EntityId, EntityKind, KnowledgeGraph, Relation, Triple};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Fixture {
    pub graph: KnowledgeGraph,
    pub users: Vec<EntityId>,
    pub items: Vec<EntityId>,
}

/// A random graph of at most 50 entities with unique labels. `density` is
/// the chance that any well-typed (head, tail) pair is linked.
pub fn random_fixture(seed: u64, density: f64) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let counts = [
        (EntityKind::User, rng.random_range(1..=5)),
        (EntityKind::Item, rng.random_range(2..=14)),
        (EntityKind::Feature, rng.random_range(0..=14)),
        (EntityKind::Brand, rng.random_range(0..=5)),
        (EntityKind::Category, rng.random_range(0..=6)),
    ];
    let mut g = KnowledgeGraph::new();
    for (kind, n) in counts {
        for k in 0..n {
            g.add_entity(kind, &format!("{}{k}", kind.as_str())).unwrap();
        }
    }
    assert!(g.entity_count() <= 50);
    for r in Relation::ALL {
        let (hk, tk) = r.signature();
        for h in g.entities_of(hk) {
            for t in g.entities_of(tk) {
                if h != t && rng.random_bool(density) {
                    g.add_triple(Triple::new(h, r, t)).unwrap();
                }
            }
        }
    }
    Fixture {
        users: g.entities_of(EntityKind::User),
        items: g.entities_of(EntityKind::Item),
        graph: g,
    }
}

/// Every stored triple as two directed edges (from, step, to).
fn edges(g: &KnowledgeGraph) -> Vec<(EntityId, DirectedStep, EntityId)> {
    g.triples()
        .flat_map(|t| {
            [
                (t.head, DirectedStep::fwd(t.relation), t.tail),
                (t.tail, DirectedStep::bwd(t.relation), t.head),
            ]
        })
        .collect()
}

pub type Walk2 = (DirectedStep, EntityId, DirectedStep);
pub type Walk3 = ([DirectedStep; 3], [EntityId; 2]);

/// All simple 2-edge walks from `u` to `i`, by exhaustive search over the
/// edge list.
pub fn oracle_2hop(g: &KnowledgeGraph, u: EntityId, i: EntityId) -> BTreeSet<Walk2> {
    let e = edges(g);
    let mut out = BTreeSet::new();
    for &(a, s1, m) in &e {
        if a != u || m == u || m == i {
            continue;
        }
        for &(b, s2, end) in &e {
            if b == m && end == i {
                out.insert((s1, m, s2));
            }
        }
    }
    out
}

/// All simple 3-edge walks from `u` to `i`.
pub fn oracle_3hop(g: &KnowledgeGraph, u: EntityId, i: EntityId) -> BTreeSet<Walk3> {
    let e = edges(g);
    let mut out = BTreeSet::new();
    for &(a0, s1, x) in &e {
        if a0 != u || x == u || x == i {
            continue;
        }
        for &(a1, s2, y) in &e {
            if a1 != x || y == u || y == i || y == x {
                continue;
            }
            for &(a2, s3, end) in &e {
                if a2 == y && end == i {
                    out.insert(([s1, s2, s3], [x, y]));
                }
            }
        }
    }
    out
}

pub fn found_2hop(g: &KnowledgeGraph, u: EntityId, i: EntityId) -> BTreeSet<Walk2> {
    g.find_2hop(u, i).unwrap().into_iter().map(|p| (p.step1, p.mid, p.step2)).collect()
}

pub fn found_3hop(g: &KnowledgeGraph, u: EntityId, i: EntityId) -> BTreeSet<Walk3> {
    g.find_3hop(u, i).unwrap().into_iter().map(|p| (p.steps, p.mids)).collect()
}

/// Labels of feature and category entities in the middle of 3-hop walks.
pub fn oracle_descriptive(g: &KnowledgeGraph, u: EntityId, i: EntityId) -> BTreeSet<String> {
    oracle_3hop(g, u, i)
        .into_iter()
        .flat_map(|(_, mids)| mids)
        .filter(|e| matches!(e.kind, EntityKind::Feature | EntityKind::Category))
        .map(|e| g.label(e).unwrap().to_string())
        .collect()
}

/// Minimal OpenAI-style chat server answering with the mock policy. Returns
/// the endpoint URL and a request counter; the server lives until the
/// process exits.
pub fn spawn_chat_server() -> (String, std::sync::Arc<std::sync::atomic::AtomicUsize>) {
    use std::io::{BufRead, BufReader, Read, Write};
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let served = Arc::new(AtomicUsize::new(0));
    let counter = served.clone();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(stream) = stream else { continue };
            let counter = counter.clone();
            std::thread::spawn(move || {
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                loop {
                    let mut length = 0usize;
                    let mut chunked = false;
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 {
                        return;
                    }
                    loop {
                        line.clear();
                        reader.read_line(&mut line).unwrap();
                        let l = line.trim_end();
                        if l.is_empty() {
                            break;
                        }
                        let lower = l.to_ascii_lowercase();
                        if let Some(v) = lower.strip_prefix("content-length:") {
                            length = v.trim().parse().unwrap();
                        }
                        if lower.starts_with("transfer-encoding:") && lower.contains("chunked") {
                            chunked = true;
                        }
                    }
                    let mut body = Vec::new();
                    if chunked {
                        loop {
                            line.clear();
                            reader.read_line(&mut line).unwrap();
                            let n = usize::from_str_radix(line.trim(), 16).unwrap();
                            let mut chunk = vec![0; n + 2];
                            reader.read_exact(&mut chunk).unwrap();
                            if n == 0 {
                                break;
                            }
                            body.extend_from_slice(&chunk[..n]);
                        }
                    } else {
                        body.resize(length, 0);
                        reader.read_exact(&mut body).unwrap();
                    }
                    let v: serde_json::Value = serde_json::from_slice(&body).unwrap();
                    let system = v["messages"][0]["content"].as_str().unwrap_or_default();
                    let user = v["messages"][1]["content"].as_str().unwrap_or_default();
                    let answer = kgrec_core::llm::mock_policy(system, user);
                    counter.fetch_add(1, Ordering::SeqCst);
                    let out = serde_json::json!({"choices": [{"message": {"role": "assistant", "content": answer}}]})
                        .to_string();
                    let mut w = &stream;
                    write!(
                        w,
                        "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n{out}",
                        out.len()
                    )
                    .unwrap();
                    w.flush().unwrap();
                }
            });
        }
    });
    (url, served)
}
