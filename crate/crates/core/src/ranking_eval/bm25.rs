use std::collections::{BTreeSet, HashMap};

use crate::kg::EntityId;
use crate::text::tokenize;

/// Okapi BM25 over a small in-memory corpus.
///
/// `idf(t) = ln((N - n_t + 0.5) / (n_t + 0.5) + 1)`, which stays positive
/// for terms present in every document. Each distinct query term counts once.
#[derive(Clone, Debug)]
pub struct Bm25 {
    pub k1: f64,
    pub b: f64,
    docs: Vec<HashMap<String, usize>>,
    lengths: Vec<usize>,
    avgdl: f64,
    df: HashMap<String, usize>,
}

impl Bm25 {
    pub fn new(docs: &[&str]) -> Self {
        Self::with_params(docs, 1.2, 0.75)
    }

    pub fn with_params(docs: &[&str], k1: f64, b: f64) -> Self {
        let mut tf_docs = Vec::with_capacity(docs.len());
        let mut lengths = Vec::with_capacity(docs.len());
        let mut df: HashMap<String, usize> = HashMap::new();
        for d in docs {
            let toks = tokenize(d);
            lengths.push(toks.len());
            let mut tf: HashMap<String, usize> = HashMap::new();
            for t in toks {
                *tf.entry(t).or_default() += 1;
            }
            for t in tf.keys() {
                *df.entry(t.clone()).or_default() += 1;
            }
            tf_docs.push(tf);
        }
        let avgdl = if lengths.is_empty() {
            0.0
        } else {
            lengths.iter().sum::<usize>() as f64 / lengths.len() as f64
        };
        Self {
            k1,
            b,
            docs: tf_docs,
            lengths,
            avgdl,
            df,
        }
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.docs.len() as f64;
        let nt = *self.df.get(term).unwrap_or(&0) as f64;
        ((n - nt + 0.5) / (nt + 0.5) + 1.0).ln()
    }

    pub fn score(&self, query: &str, doc: usize) -> f64 {
        let terms: BTreeSet<String> = tokenize(query).into_iter().collect();
        let tf = &self.docs[doc];
        let norm = if self.avgdl > 0.0 {
            1.0 - self.b + self.b * self.lengths[doc] as f64 / self.avgdl
        } else {
            1.0
        };
        terms
            .iter()
            .filter_map(|t| tf.get(t).map(|&f| (t, f as f64)))
            .map(|(t, f)| self.idf(t) * f * (self.k1 + 1.0) / (f + self.k1 * norm))
            .sum()
    }
}

/// Candidates by descending BM25 score of their text against `query`,
/// ties by id.
pub fn baseline_bm25(candidates: &[(EntityId, &str)], query: &str) -> Vec<EntityId> {
    let docs: Vec<&str> = candidates.iter().map(|(_, t)| *t).collect();
    let bm = Bm25::new(&docs);
    let mut scored: Vec<(f64, EntityId)> = candidates
        .iter()
        .enumerate()
        .map(|(k, (id, _))| (bm.score(query, k), *id))
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    scored.into_iter().map(|(_, id)| id).collect()
}
