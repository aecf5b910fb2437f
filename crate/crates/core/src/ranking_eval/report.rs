use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::Method;
use crate::kg::EntityId;
use crate::path_text::ReductionReport;

pub const SCHEMA_VERSION: u32 = 1;

/// One ranked list and its scores; the per-user dump behind every report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankRecord {
    pub method: Method,
    pub repeat: usize,
    pub user: EntityId,
    pub ground_truth: EntityId,
    pub ranked: Vec<EntityId>,
    /// 1-based position of the ground truth.
    pub rank: usize,
    pub ndcg: BTreeMap<usize, f64>,
    /// The agent's answer could not be read; presentation order was used.
    pub fallback: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Population standard deviation.
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self { mean: 0.0, std: 0.0 };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodRow {
    pub method: Method,
    pub users: usize,
    pub fallbacks: usize,
    /// Per repeat: mean NDCG over users, keyed by cutoff.
    pub per_repeat: Vec<BTreeMap<usize, f64>>,
    pub ndcg: BTreeMap<usize, MeanStd>,
}

/// Averages within each repeat (unweighted over users), then takes mean and
/// std across repeats.
pub fn aggregate(records: &[RankRecord], methods: &[Method], ks: &[usize], repeats: usize) -> Vec<MethodRow> {
    methods
        .iter()
        .map(|&method| {
            let mine: Vec<&RankRecord> = records.iter().filter(|r| r.method == method).collect();
            let per_repeat: Vec<BTreeMap<usize, f64>> = (0..repeats)
                .map(|rep| {
                    let rows: Vec<&&RankRecord> = mine.iter().filter(|r| r.repeat == rep).collect();
                    ks.iter()
                        .map(|&k| {
                            let vals: Vec<f64> = rows.iter().map(|r| r.ndcg.get(&k).copied().unwrap_or(0.0)).collect();
                            (k, MeanStd::of(&vals).mean)
                        })
                        .collect()
                })
                .collect();
            let ndcg = ks
                .iter()
                .map(|&k| {
                    let vals: Vec<f64> = per_repeat.iter().map(|m| m[&k]).collect();
                    (k, MeanStd::of(&vals))
                })
                .collect();
            let mut users: Vec<EntityId> = mine.iter().map(|r| r.user).collect();
            users.sort();
            users.dedup();
            MethodRow {
                method,
                users: users.len(),
                fallbacks: mine.iter().filter(|r| r.fallback).count(),
                per_repeat,
                ndcg,
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub kg_enabled: bool,
    pub candidates: usize,
    pub repeats: usize,
    pub seeds: Vec<u64>,
    pub ks: Vec<usize>,
    pub users: usize,
    pub methods: Vec<MethodRow>,
    pub word_counts: Option<ReductionReport>,
}

impl EvalReport {
    pub fn row(&self, method: Method) -> Option<&MethodRow> {
        self.methods.iter().find(|r| r.method == method)
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        let header: Vec<String> = self.ks.iter().map(|k| format!("NDCG@{k}")).collect();
        let _ = writeln!(s, "| Method | {} |", header.join(" | "));
        let _ = writeln!(s, "|---|{}", "---|".repeat(self.ks.len()));
        for row in &self.methods {
            let cells: Vec<String> = self
                .ks
                .iter()
                .map(|k| {
                    let m = row.ndcg[k];
                    format!("{:.3} ± {:.3}", m.mean, m.std)
                })
                .collect();
            let _ = writeln!(s, "| {} | {} |", row.method, cells.join(" | "));
        }
        let _ = writeln!(
            s,
            "\n{} users, {} candidates, {} repeats, KG {}.",
            self.users,
            self.candidates,
            self.repeats,
            if self.kg_enabled { "enabled" } else { "disabled" }
        );
        if let Some(w) = &self.word_counts {
            let _ = writeln!(s, "\n| Paths | Avg. paths | Original words | Words | Reduction |");
            let _ = writeln!(s, "|---|---|---|---|---|");
            for (name, h) in [("2-hop", &w.two_hop), ("3-hop", &w.three_hop)] {
                let _ = writeln!(
                    s,
                    "| {name} | {:.2} | {:.2} | {:.2} | {:.2}% |",
                    h.avg_paths, h.avg_original_words, h.avg_words, h.reduction_percentage
                );
            }
        }
        s
    }
}
