use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::report::SCHEMA_VERSION;
use super::{
    aggregate, baseline_bm25, baseline_pop, build_candidates, ndcg_at_k, CandidateSet, EvalError, EvalReport, Method,
    RankRecord, CUTOFFS,
};
use crate::agents::{init_item_memory, parse_ranking, AgentMemory, PromptBuilder, RankingView};
use crate::kg::{EntityId, KnowledgeGraph};
use crate::llm::{LlmClient, RequestTag};
use crate::path_text::{trans_2hop, PathSource, PathText};
use crate::rng::stream;
use crate::simulation::{ask_with_retry, Popularity, UserSplit};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub seed: u64,
    pub candidates: usize,
    pub repeats: usize,
    pub kg_enabled: bool,
    pub ks: Vec<usize>,
    pub methods: Vec<Method>,
    pub jobs: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            candidates: 10,
            repeats: 3,
            kg_enabled: true,
            ks: CUTOFFS.to_vec(),
            methods: vec![Method::Agent, Method::Pop, Method::Bm25],
            jobs: 1,
        }
    }
}

/// What the ranking stage needs from one simulated user.
#[derive(Clone, Copy, Debug)]
pub struct EvalUser<'a> {
    pub split: &'a UserSplit,
    pub user_memory: &'a str,
    pub item_memories: &'a BTreeMap<EntityId, AgentMemory>,
}

pub struct Evaluator<'a> {
    /// Graph with every held-out interaction removed.
    pub graph: &'a KnowledgeGraph,
    pub prompts: &'a PromptBuilder,
    pub client: &'a LlmClient,
    pub popularity: &'a Popularity,
    pub config: &'a EvalConfig,
}

impl Evaluator<'_> {
    /// Candidate membership is fixed per user; repeats only reshuffle it.
    pub fn candidates(&self, split: &UserSplit) -> Result<CandidateSet, EvalError> {
        let mut rng = stream(self.config.seed, "eval-candidates", &split.user.to_string());
        build_candidates(split, self.popularity, &mut rng, self.config.candidates)
    }

    pub fn repeat_seeds(&self) -> Vec<u64> {
        (0..self.config.repeats)
            .map(|r| self.config.seed.wrapping_add(r as u64))
            .collect()
    }

    fn item_text(&self, user: &EvalUser<'_>, item: EntityId) -> Result<String, EvalError> {
        if let Some(m) = user.item_memories.get(&item) {
            return Ok(m.text.clone());
        }
        let title = self.graph.label(item).unwrap_or_default();
        let m = init_item_memory(item, title, &self.graph.item_categories(item), &self.prompts.domain)?;
        Ok(m.text)
    }

    /// Asks the user agent to order `presented`. Returns the ranking and
    /// whether it fell back to presentation order.
    pub fn rank_with_agent(
        &self,
        user: &EvalUser<'_>,
        presented: &[EntityId],
        repeat: usize,
    ) -> Result<(Vec<EntityId>, bool), EvalError> {
        let u = user.split.user;
        let mut texts = Vec::with_capacity(presented.len());
        let mut paths = Vec::with_capacity(presented.len());
        for &c in presented {
            texts.push(self.item_text(user, c)?);
            paths.push(if self.config.kg_enabled {
                trans_2hop(self.graph, u, c)?
            } else {
                PathText::empty(PathSource::TwoHop)
            });
        }
        let titles: Vec<&str> = presented
            .iter()
            .map(|&c| self.graph.label(c).unwrap_or_default())
            .collect();
        let views: Vec<RankingView<'_>> = presented
            .iter()
            .enumerate()
            .map(|(k, &id)| RankingView {
                id,
                title: titles[k],
                memory: &texts[k],
                two_hop: &paths[k],
            })
            .collect();
        let bundle = self
            .prompts
            .build_ranking_prompt(user.user_memory, &views, self.config.kg_enabled)?;
        let answer = ask_with_retry(
            self.client,
            self.prompts,
            &bundle,
            RequestTag::Ranking,
            &format!("{u}/rank/r{repeat}"),
            |r| parse_ranking(r, &bundle.candidates),
        )?;
        Ok(match answer {
            Ok(ranked) => (ranked, false),
            Err(reason) => {
                tracing::warn!(user = %u, repeat, %reason, "ranking unreadable, using presentation order");
                (presented.to_vec(), true)
            }
        })
    }

    fn history_query(&self, split: &UserSplit) -> String {
        let mut parts = Vec::new();
        for &i in &split.train {
            parts.push(self.graph.label_or_id(i));
            parts.extend(self.graph.item_categories(i));
        }
        parts.join(" ")
    }

    /// Every configured method and repeat for one user.
    pub fn rank_user(&self, user: &EvalUser<'_>) -> Result<Vec<RankRecord>, EvalError> {
        let set = self.candidates(user.split)?;
        let mut out = Vec::new();
        let seeds = self.repeat_seeds();
        let key = user.split.user.to_string();
        let query = self.history_query(user.split);
        for (repeat, &seed) in seeds.iter().enumerate() {
            let presented = set.shuffled(&mut stream(seed, "eval-presentation", &key));
            for &method in &self.config.methods {
                let (ranked, fallback) = match method {
                    Method::Agent => self.rank_with_agent(user, &presented, repeat)?,
                    Method::Pop => (baseline_pop(&presented, self.popularity), false),
                    Method::Bm25 => {
                        let texts: Vec<String> = presented
                            .iter()
                            .map(|&c| self.item_text(user, c))
                            .collect::<Result<_, _>>()?;
                        let docs: Vec<(EntityId, &str)> =
                            presented.iter().zip(&texts).map(|(&c, t)| (c, t.as_str())).collect();
                        (baseline_bm25(&docs, &query), false)
                    }
                    Method::Random => {
                        let mut r = presented.clone();
                        r.shuffle(&mut stream(seed, "random-ranker", &key));
                        (r, false)
                    }
                };
                set.check_permutation(&ranked)?;
                let mut ndcg = BTreeMap::new();
                for &k in &self.config.ks {
                    ndcg.insert(k, ndcg_at_k(&ranked, set.ground_truth, k)?);
                }
                let rank = ranked.iter().position(|&i| i == set.ground_truth).unwrap() + 1;
                out.push(RankRecord {
                    method,
                    repeat,
                    user: user.split.user,
                    ground_truth: set.ground_truth,
                    ranked,
                    rank,
                    ndcg,
                    fallback,
                });
            }
        }
        Ok(out)
    }

    /// Ranks all users (up to `jobs` at a time) and aggregates. Records come
    /// back ordered by user, repeat, then method.
    pub fn evaluate(&self, users: &[EvalUser<'_>]) -> Result<(EvalReport, Vec<RankRecord>), EvalError> {
        let results: Mutex<Vec<Option<Result<Vec<RankRecord>, EvalError>>>> =
            Mutex::new((0..users.len()).map(|_| None).collect());
        let next = AtomicUsize::new(0);
        std::thread::scope(|s| {
            for _ in 0..self.config.jobs.clamp(1, users.len().max(1)) {
                s.spawn(|| loop {
                    let k = next.fetch_add(1, Ordering::SeqCst);
                    if k >= users.len() {
                        break;
                    }
                    let r = self.rank_user(&users[k]);
                    results.lock().unwrap()[k] = Some(r);
                });
            }
        });
        let mut records = Vec::new();
        for r in results.into_inner().unwrap() {
            records.extend(r.expect("every user ranked")?);
        }
        let methods = aggregate(&records, &self.config.methods, &self.config.ks, self.config.repeats);
        let report = EvalReport {
            schema_version: SCHEMA_VERSION,
            kg_enabled: self.config.kg_enabled,
            candidates: self.config.candidates,
            repeats: self.config.repeats,
            seeds: self.repeat_seeds(),
            ks: self.config.ks.clone(),
            users: users.len(),
            methods,
            word_counts: None,
        };
        Ok((report, records))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::init_user_memory;
    use crate::kg::{EntityKind, Relation, Triple};

    struct World {
        g: KnowledgeGraph,
        splits: Vec<UserSplit>,
        pop: Popularity,
    }

    /// Users mention 'garden'; their test items are described by it, and a
    /// pool of popular items is described by 'noise'.
    fn world(users: u32) -> World {
        let mut g = KnowledgeGraph::new();
        let garden = g.add_entity(EntityKind::Feature, "garden").unwrap();
        let noise = g.add_entity(EntityKind::Feature, "noise").unwrap();
        let mut popular = Vec::new();
        for k in 0..15 {
            let i = g.add_entity(EntityKind::Item, &format!("Pop {k}")).unwrap();
            g.add_triple(Triple::new(i, Relation::DescribeAs, noise)).unwrap();
            popular.push(i);
        }
        let mut splits = Vec::new();
        let mut interactions = popular.clone();
        for u in 0..users {
            let uid = g.add_entity(EntityKind::User, &format!("u{u}")).unwrap();
            g.add_triple(Triple::new(uid, Relation::Mention, garden)).unwrap();
            let train = g.add_entity(EntityKind::Item, &format!("Train {u}")).unwrap();
            let test = g.add_entity(EntityKind::Item, &format!("Test {u}")).unwrap();
            g.add_triple(Triple::new(test, Relation::DescribeAs, garden)).unwrap();
            g.add_triple(Triple::new(uid, Relation::Purchase, train)).unwrap();
            interactions.push(train);
            splits.push(UserSplit {
                user: uid,
                train: vec![train],
                test,
            });
        }
        World {
            g,
            splits,
            pop: Popularity::from_interactions(&interactions),
        }
    }

    #[test]
    fn mock_agent_puts_matching_item_first() {
        let w = world(4);
        let prompts = PromptBuilder::default();
        let client = LlmClient::mock();
        let config = EvalConfig {
            methods: vec![Method::Agent, Method::Pop, Method::Bm25, Method::Random],
            jobs: 3,
            ..Default::default()
        };
        let ev = Evaluator {
            graph: &w.g,
            prompts: &prompts,
            client: &client,
            popularity: &w.pop,
            config: &config,
        };
        let memory = "Features I prefer: 'garden'.";
        let empty = BTreeMap::new();
        let users: Vec<EvalUser<'_>> = w
            .splits
            .iter()
            .map(|s| EvalUser {
                split: s,
                user_memory: memory,
                item_memories: &empty,
            })
            .collect();
        let (report, records) = ev.evaluate(&users).unwrap();
        let agent = report.row(Method::Agent).unwrap();
        assert_eq!(agent.ndcg[&1].mean, 1.0);
        assert_eq!(report.row(Method::Pop).unwrap().ndcg[&1].std, 0.0);
        assert_eq!(records.len(), 4 * 3 * 4);
        assert!(records.iter().all(|r| !r.fallback));

        let (again, records2) = ev.evaluate(&users).unwrap();
        assert_eq!(again, report);
        assert_eq!(records, records2);
    }

    #[test]
    fn no_kg_ranking_prompt_has_no_relations() {
        let w = world(1);
        let prompts = PromptBuilder::default();
        let dir = tempfile::tempdir().unwrap();
        let log = std::sync::Arc::new(crate::llm::TranscriptLog::create(dir.path()).unwrap());
        let client = LlmClient::mock().with_transcript(log);
        let config = EvalConfig {
            kg_enabled: false,
            repeats: 1,
            methods: vec![Method::Agent],
            ..Default::default()
        };
        let ev = Evaluator {
            graph: &w.g,
            prompts: &prompts,
            client: &client,
            popularity: &w.pop,
            config: &config,
        };
        let memory = init_user_memory(w.splits[0].user, &prompts.domain);
        let empty = BTreeMap::new();
        let user = EvalUser {
            split: &w.splits[0],
            user_memory: &memory.text,
            item_memories: &empty,
        };
        ev.rank_user(&user).unwrap();
        let recs = crate::llm::TranscriptLog::read_all(dir.path()).unwrap();
        assert_eq!(recs.len(), 1);
        assert!(!recs[0].user.contains("You mentions"));
        assert_eq!(recs[0].user.lines().filter(|l| l.starts_with(char::is_numeric)).count(), 10);
    }

    #[test]
    fn unreadable_ranking_falls_back_to_presentation() {
        struct Mute;
        impl crate::llm::Backend for Mute {
            fn name(&self) -> &'static str {
                "mute"
            }
            fn complete(&self, _: &crate::llm::CompletionRequest) -> Result<String, crate::llm::LlmError> {
                Ok("no idea".into())
            }
        }
        let w = world(1);
        let prompts = PromptBuilder::default();
        let client = LlmClient::new(std::sync::Arc::new(Mute));
        let config = EvalConfig {
            repeats: 1,
            methods: vec![Method::Agent],
            ..Default::default()
        };
        let ev = Evaluator {
            graph: &w.g,
            prompts: &prompts,
            client: &client,
            popularity: &w.pop,
            config: &config,
        };
        let empty = BTreeMap::new();
        let user = EvalUser {
            split: &w.splits[0],
            user_memory: "x",
            item_memories: &empty,
        };
        let recs = ev.rank_user(&user).unwrap();
        let set = ev.candidates(&w.splits[0]).unwrap();
        let presented = set.shuffled(&mut stream(ev.repeat_seeds()[0], "eval-presentation", &w.splits[0].user.to_string()));
        assert!(recs[0].fallback);
        assert_eq!(recs[0].ranked, presented);
    }
}
