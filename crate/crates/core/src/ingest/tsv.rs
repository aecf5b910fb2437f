use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{Dataset, DatasetManifest, DeclaredCounts, IngestError, UserHistory};
use crate::kg::{EntityId, EntityKind, KnowledgeGraph, Relation, Triple};

const ENTITY_HEADER: [&str; 3] = ["id", "type", "label"];
const TRIPLE_HEADER: [&str; 3] = ["head_id", "relation", "tail_id"];
const INTERACTION_HEADER: [&str; 3] = ["user_id", "item_id", "order_index"];

fn read(path: &Path) -> Result<String, IngestError> {
    fs::read_to_string(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Data rows as (1-based line number, three fields).
fn rows<'a>(text: &'a str, file: &str, header: [&str; 3]) -> Result<Vec<(usize, [&'a str; 3])>, IngestError> {
    let mut out = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(IngestError::Parse {
                file: file.to_string(),
                line: k + 1,
                message: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        }
        let f = [fields[0].trim(), fields[1].trim(), fields[2]];
        if out.is_empty() && f[0] == header[0] && f[1] == header[1] && f[2].trim() == header[2] {
            continue;
        }
        out.push((k + 1, f));
    }
    Ok(out)
}

/// Loads and validates the dataset named by a manifest file.
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset, IngestError> {
    let manifest = DatasetManifest::read(manifest_path)?;
    let mut graph = KnowledgeGraph::new();
    let mut ids: HashMap<String, EntityId> = HashMap::new();

    let ent_file = file_name(&manifest.entities);
    let ent_text = read(&manifest.entities)?;
    for (line, [id, kind, label]) in rows(&ent_text, &ent_file, ENTITY_HEADER)? {
        let parse_err = |message: String| IngestError::Parse {
            file: ent_file.clone(),
            line,
            message,
        };
        if id.is_empty() {
            return Err(parse_err("empty entity id".into()));
        }
        let kind: EntityKind = kind.parse().map_err(|e: crate::kg::KgError| parse_err(e.to_string()))?;
        if ids.contains_key(id) {
            return Err(parse_err(format!("duplicate entity id `{id}`")));
        }
        let eid = graph.add_entity(kind, label.trim()).map_err(|source| IngestError::Graph {
            file: ent_file.clone(),
            line,
            source,
        })?;
        ids.insert(id.to_string(), eid);
    }

    let lookup = |file: &str, line: usize, id: &str| {
        ids.get(id).copied().ok_or_else(|| IngestError::OrphanReference {
            file: file.to_string(),
            line,
            id: id.to_string(),
        })
    };

    // interactions first so purchase triples can be checked against them
    let int_file = file_name(&manifest.interactions);
    let int_text = read(&manifest.interactions)?;
    let mut per_user: BTreeMap<EntityId, Vec<(i64, usize, EntityId)>> = BTreeMap::new();
    let mut bought: BTreeSet<(EntityId, EntityId)> = BTreeSet::new();
    let mut interaction_lines = Vec::new();
    for (line, [u, i, order]) in rows(&int_text, &int_file, INTERACTION_HEADER)? {
        let user = lookup(&int_file, line, u)?;
        let item = lookup(&int_file, line, i)?;
        let order: i64 = order.trim().parse().map_err(|_| IngestError::Parse {
            file: int_file.clone(),
            line,
            message: format!("order_index `{}` is not an integer", order.trim()),
        })?;
        per_user.entry(user).or_default().push((order, line, item));
        bought.insert((user, item));
        interaction_lines.push((line, user, item));
    }

    let tri_file = file_name(&manifest.triples);
    let tri_text = read(&manifest.triples)?;
    for (line, [h, r, t]) in rows(&tri_text, &tri_file, TRIPLE_HEADER)? {
        let head = lookup(&tri_file, line, h)?;
        let relation: Relation = r.parse().map_err(|e: crate::kg::KgError| IngestError::Parse {
            file: tri_file.clone(),
            line,
            message: e.to_string(),
        })?;
        let tail = lookup(&tri_file, line, t.trim())?;
        if relation == Relation::Purchase && !bought.contains(&(head, tail)) {
            return Err(IngestError::UnsyncedPurchase {
                file: tri_file.clone(),
                line,
                user: h.to_string(),
                item: t.trim().to_string(),
            });
        }
        graph
            .add_triple(Triple::new(head, relation, tail))
            .map_err(|source| IngestError::Graph {
                file: tri_file.clone(),
                line,
                source,
            })?;
    }
    for (line, user, item) in interaction_lines {
        graph
            .add_triple(Triple::new(user, Relation::Purchase, item))
            .map_err(|source| IngestError::Graph {
                file: int_file.clone(),
                line,
                source,
            })?;
    }

    let histories: Vec<UserHistory> = per_user
        .into_iter()
        .map(|(user, mut rows)| {
            // stable: equal order_index keeps file order
            rows.sort_by_key(|&(order, line, _)| (order, line));
            UserHistory {
                user,
                items: rows.into_iter().map(|(_, _, i)| i).collect(),
            }
        })
        .collect();

    let dataset = Dataset {
        manifest,
        graph,
        histories,
    };
    check_counts(&dataset)?;
    Ok(dataset)
}

fn check_counts(d: &Dataset) -> Result<(), IngestError> {
    let c = &d.manifest.counts;
    for (what, declared, loaded) in [
        ("entities", c.entities, d.graph.entity_count()),
        ("triples", c.triples, d.graph.triple_count()),
        ("interactions", c.interactions, d.interaction_count()),
    ] {
        if let Some(declared) = declared {
            if declared != loaded {
                return Err(IngestError::CountMismatch {
                    what: what.to_string(),
                    declared,
                    loaded,
                });
            }
        }
    }
    Ok(())
}

fn sanitize(label: &str) -> String {
    label.replace(['\t', '\n', '\r'], " ").trim().to_string()
}

fn write(path: &Path, text: &str) -> Result<(), IngestError> {
    fs::write(path, text).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes the canonical TSVs and a manifest with counts into `dir`; returns
/// the manifest path.
pub fn write_canonical(dataset: &Dataset, dir: &Path) -> Result<PathBuf, IngestError> {
    fs::create_dir_all(dir).map_err(|source| IngestError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let g = &dataset.graph;
    let mut ent = ENTITY_HEADER.join("\t") + "\n";
    let mut entities = g.entities();
    entities.sort();
    for e in &entities {
        let _ = writeln!(ent, "{e}\t{}\t{}", e.kind.as_str(), sanitize(g.label(*e).unwrap_or_default()));
    }
    let mut tri = TRIPLE_HEADER.join("\t") + "\n";
    for t in g.triples() {
        let _ = writeln!(tri, "{}\t{}\t{}", t.head, t.relation.as_str(), t.tail);
    }
    let mut int = INTERACTION_HEADER.join("\t") + "\n";
    for h in &dataset.histories {
        for (k, i) in h.items.iter().enumerate() {
            let _ = writeln!(int, "{}\t{i}\t{k}", h.user);
        }
    }
    write(&dir.join("entities.tsv"), &ent)?;
    write(&dir.join("triples.tsv"), &tri)?;
    write(&dir.join("interactions.tsv"), &int)?;
    let manifest = DatasetManifest {
        name: dataset.manifest.name.clone(),
        domain: dataset.manifest.domain.clone(),
        entities: "entities.tsv".into(),
        triples: "triples.tsv".into(),
        interactions: "interactions.tsv".into(),
        counts: DeclaredCounts {
            entities: Some(g.entity_count()),
            triples: Some(g.triple_count()),
            interactions: Some(dataset.interaction_count()),
        },
    };
    let path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    write(&path, &json)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn fixture(dir: &Path, entities: &str, triples: &str, interactions: &str) -> PathBuf {
        fs::write(dir.join("e.tsv"), entities).unwrap();
        fs::write(dir.join("t.tsv"), triples).unwrap();
        fs::write(dir.join("i.tsv"), interactions).unwrap();
        let m = dir.join("m.json");
        fs::write(
            &m,
            r#"{"name":"tiny","entities":"e.tsv","triples":"t.tsv","interactions":"i.tsv"}"#,
        )
        .unwrap();
        m
    }

    const ENTS: &str = "id\ttype\tlabel\nU1\tuser\t\nA\titem\tAlpha\nB\titem\tBeta\nF\tfeature\tgarden\n";

    #[test]
    fn minimal_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let m = fixture(
            dir.path(),
            ENTS,
            "A\tdescribe_as\tF\nB\tdescribe_as\tF\nU1\tmention\tF\n",
            "U1\tB\t2\nU1\tA\t1\n",
        );
        let d = load_dataset(&m).unwrap();
        assert_eq!(d.histories.len(), 1);
        // three stated triples plus two purchases from the interactions
        assert_eq!(d.graph.triple_count(), 5);
        let a = EntityId::item(0);
        assert_eq!(d.histories[0].items, vec![a, EntityId::item(1)]);
        assert_eq!(d.graph.label(a), Some("Alpha"));
    }

    #[test]
    fn orphan_reference_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let m = fixture(dir.path(), ENTS, "A\tdescribe_as\tF\nA\tdescribe_as\tNOPE\n", "U1\tA\t0\n");
        match load_dataset(&m) {
            Err(IngestError::OrphanReference { line, id, .. }) => {
                assert_eq!((line, id.as_str()), (2, "NOPE"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_and_bad_signature_lines() {
        let dir = tempfile::tempdir().unwrap();
        let m = fixture(dir.path(), ENTS, "A\tdescribe_as\n", "U1\tA\t0\n");
        assert!(matches!(load_dataset(&m), Err(IngestError::Parse { line: 1, .. })));
        let m = fixture(dir.path(), ENTS, "F\tdescribe_as\tA\n", "U1\tA\t0\n");
        assert!(matches!(load_dataset(&m), Err(IngestError::Graph { line: 1, .. })));
        let m = fixture(dir.path(), ENTS, "", "U1\tA\tlater\n");
        assert!(matches!(load_dataset(&m), Err(IngestError::Parse { line: 1, .. })));
        let m = fixture(dir.path(), ENTS, "U1\tpurchase\tB\n", "U1\tA\t0\n");
        assert!(matches!(load_dataset(&m), Err(IngestError::UnsyncedPurchase { line: 1, .. })));
    }

    #[test]
    fn equal_order_keeps_file_order() {
        let dir = tempfile::tempdir().unwrap();
        let m = fixture(dir.path(), ENTS, "", "U1\tB\t5\nU1\tA\t5\n");
        let d = load_dataset(&m).unwrap();
        assert_eq!(d.histories[0].items, vec![EntityId::item(1), EntityId::item(0)]);
    }

    #[test]
    fn declared_counts_are_checked() {
        let dir = tempfile::tempdir().unwrap();
        let m = fixture(dir.path(), ENTS, "", "U1\tA\t0\n");
        fs::write(
            &m,
            r#"{"name":"tiny","entities":"e.tsv","triples":"t.tsv","interactions":"i.tsv","counts":{"entities":9}}"#,
        )
        .unwrap();
        assert!(matches!(load_dataset(&m), Err(IngestError::CountMismatch { declared: 9, loaded: 4, .. })));
    }

    /// (entity kinds, triples as index triples, histories as index lists)
    fn arb_dataset() -> impl Strategy<Value = Dataset> {
        (1usize..4, 2usize..6, 1usize..4, 0usize..3, any::<u64>()).prop_map(|(nu, ni, nf, nc, bits)| {
            let mut g = KnowledgeGraph::new();
            let users: Vec<_> = (0..nu).map(|k| g.add_entity(EntityKind::User, &format!("u{k}")).unwrap()).collect();
            let items: Vec<_> = (0..ni)
                .map(|k| g.add_entity(EntityKind::Item, &format!("Item\t{k}")).unwrap())
                .collect();
            let feats: Vec<_> = (0..nf).map(|k| g.add_entity(EntityKind::Feature, &format!("f {k}")).unwrap()).collect();
            let cats: Vec<_> = (0..nc).map(|k| g.add_entity(EntityKind::Category, &format!("c{k}")).unwrap()).collect();
            let mut bit = 0;
            let mut coin = || {
                bit = (bit + 1) % 64;
                bits >> bit & 1 == 1
            };
            let mut histories = Vec::new();
            for &u in &users {
                let mut hist = Vec::new();
                for &i in &items {
                    if coin() {
                        g.add_triple(Triple::new(u, Relation::Purchase, i)).unwrap();
                        hist.push(i);
                    }
                }
                for &f in &feats {
                    if coin() {
                        g.add_triple(Triple::new(u, Relation::Mention, f)).unwrap();
                    }
                }
                if !hist.is_empty() {
                    histories.push(UserHistory { user: u, items: hist });
                }
            }
            for &i in &items {
                for &f in &feats {
                    if coin() {
                        g.add_triple(Triple::new(i, Relation::DescribeAs, f)).unwrap();
                    }
                }
                for &c in &cats {
                    if coin() {
                        g.add_triple(Triple::new(i, Relation::BelongTo, c)).unwrap();
                    }
                }
            }
            Dataset {
                manifest: DatasetManifest {
                    name: "arb".into(),
                    domain: Default::default(),
                    entities: "entities.tsv".into(),
                    triples: "triples.tsv".into(),
                    interactions: "interactions.tsv".into(),
                    counts: Default::default(),
                },
                graph: g,
                histories,
            }
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn canonical_round_trip(d in arb_dataset()) {
            let dir = tempfile::tempdir().unwrap();
            let m = write_canonical(&d, dir.path()).unwrap();
            let back = load_dataset(&m).unwrap();
            let triples = |g: &KnowledgeGraph| g.triples().copied().collect::<Vec<_>>();
            prop_assert_eq!(triples(&back.graph), triples(&d.graph));
            prop_assert_eq!(&back.histories, &d.histories);
            for e in d.graph.entities() {
                prop_assert_eq!(back.graph.label(e).unwrap(), sanitize(d.graph.label(e).unwrap()));
            }
            // a second pass is byte-identical
            let dir2 = tempfile::tempdir().unwrap();
            write_canonical(&back, dir2.path()).unwrap();
            for f in ["entities.tsv", "triples.tsv", "interactions.tsv"] {
                prop_assert_eq!(fs::read(dir.path().join(f)).unwrap(), fs::read(dir2.path().join(f)).unwrap());
            }
        }
    }
}
