//! Verb x noun contingency tables built from per-post lemma sets.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::textpipe::PostTerms;

#[derive(Debug, Error, PartialEq)]
pub enum CooccurError {
    #[error("top-k needs k >= 2, got {0}")]
    InvalidK(usize),
    #[error("insufficient vocabulary: {nouns} distinct nouns and {verbs} distinct verbs (need at least 2 of each)")]
    InsufficientVocabulary { nouns: usize, verbs: usize },
    #[error(
        "degenerate table: {rows} rows x {cols} columns remain after pruning (need at least 2 x 2)"
    )]
    DegenerateTable { rows: usize, cols: usize },
    #[error("csv: {0}")]
    Csv(String),
}

/// One (post, verb, noun) co-occurrence. At most one per triple.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PairSample {
    pub post_id: String,
    pub verb: String,
    pub noun: String,
}

/// Cartesian product of a post's distinct verbs and nouns.
pub fn extract_pairs(
    post_id: &str,
    nouns: &BTreeSet<String>,
    verbs: &BTreeSet<String>,
) -> Vec<PairSample> {
    verbs
        .iter()
        .flat_map(|v| {
            nouns.iter().map(move |n| PairSample {
                post_id: post_id.to_string(),
                verb: v.clone(),
                noun: n.clone(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopTerms {
    pub verbs: Vec<String>,
    pub nouns: Vec<String>,
}

/// Top `k` verbs and nouns by document frequency; ties are broken
/// lexicographically ascending.
pub fn top_k_terms<'a, I>(posts: I, k: usize) -> Result<TopTerms, CooccurError>
where
    I: IntoIterator<Item = &'a PostTerms>,
{
    if k < 2 {
        return Err(CooccurError::InvalidK(k));
    }
    let mut noun_df: HashMap<&str, usize> = HashMap::new();
    let mut verb_df: HashMap<&str, usize> = HashMap::new();
    for post in posts {
        for n in &post.nouns {
            *noun_df.entry(n.as_str()).or_default() += 1;
        }
        for v in &post.verbs {
            *verb_df.entry(v.as_str()).or_default() += 1;
        }
    }
    if noun_df.len() < 2 || verb_df.len() < 2 {
        return Err(CooccurError::InsufficientVocabulary {
            nouns: noun_df.len(),
            verbs: verb_df.len(),
        });
    }
    Ok(TopTerms {
        verbs: rank(verb_df, k),
        nouns: rank(noun_df, k),
    })
}

fn rank(df: HashMap<&str, usize>, k: usize) -> Vec<String> {
    let mut items: Vec<(&str, usize)> = df.into_iter().collect();
    items.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    items
        .into_iter()
        .take(k)
        .map(|(t, _)| t.to_string())
        .collect()
}

/// Verb rows x noun columns of co-occurrence counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContingencyTable {
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    pub counts: Vec<Vec<u64>>,
    pub grand_total: u64,
}

/// Labels dropped from the table because their row or column was all zero.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrunedTerms {
    pub verbs: Vec<String>,
    pub nouns: Vec<String>,
}

impl PrunedTerms {
    pub fn is_empty(&self) -> bool {
        self.verbs.is_empty() && self.nouns.is_empty()
    }
}

impl ContingencyTable {
    /// Builds a table from raw counts, recomputing the grand total.
    pub fn new(row_labels: Vec<String>, col_labels: Vec<String>, counts: Vec<Vec<u64>>) -> Self {
        let grand_total = counts.iter().flatten().sum();
        ContingencyTable {
            row_labels,
            col_labels,
            counts,
            grand_total,
        }
    }

    pub fn rows(&self) -> usize {
        self.row_labels.len()
    }

    pub fn cols(&self) -> usize {
        self.col_labels.len()
    }

    pub fn row_totals(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn col_totals(&self) -> Vec<u64> {
        let mut out = vec![0u64; self.cols()];
        for row in &self.counts {
            for (acc, v) in out.iter_mut().zip(row) {
                *acc += v;
            }
        }
        out
    }

    pub fn get(&self, verb: &str, noun: &str) -> Option<u64> {
        let i = self.row_labels.iter().position(|l| l == verb)?;
        let j = self.col_labels.iter().position(|l| l == noun)?;
        Some(self.counts[i][j])
    }

    /// First row: empty cell + noun labels. Following rows: verb + counts.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec![String::new()];
        header.extend(self.col_labels.iter().cloned());
        w.write_record(&header).expect("in-memory write");
        for (label, row) in self.row_labels.iter().zip(&self.counts) {
            let mut rec = vec![label.clone()];
            rec.extend(row.iter().map(u64::to_string));
            w.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 labels")
    }

    pub fn from_csv(src: &str) -> Result<Self, CooccurError> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .from_reader(src.as_bytes());
        let mut records = rdr.records();
        let header = records
            .next()
            .ok_or_else(|| CooccurError::Csv("empty input".into()))?
            .map_err(|e| CooccurError::Csv(e.to_string()))?;
        let col_labels: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut row_labels = Vec::new();
        let mut counts = Vec::new();
        for rec in records {
            let rec = rec.map_err(|e| CooccurError::Csv(e.to_string()))?;
            if rec.len() != col_labels.len() + 1 {
                return Err(CooccurError::Csv(format!(
                    "row {:?} has {} cells, expected {}",
                    rec.get(0).unwrap_or(""),
                    rec.len() - 1,
                    col_labels.len()
                )));
            }
            row_labels.push(rec[0].to_string());
            let row = rec
                .iter()
                .skip(1)
                .map(|c| {
                    c.trim()
                        .parse::<u64>()
                        .map_err(|e| CooccurError::Csv(format!("{c:?}: {e}")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            counts.push(row);
        }
        Ok(ContingencyTable::new(row_labels, col_labels, counts))
    }
}

/// Counts pairs inside the top lists, then prunes all-zero rows and columns.
pub fn build_table(
    pairs: &[PairSample],
    top_verbs: &[String],
    top_nouns: &[String],
) -> Result<(ContingencyTable, PrunedTerms), CooccurError> {
    if top_verbs.is_empty() || top_nouns.is_empty() {
        return Err(CooccurError::DegenerateTable {
            rows: top_verbs.len(),
            cols: top_nouns.len(),
        });
    }
    let row_idx: HashMap<&str, usize> = top_verbs
        .iter()
        .enumerate()
        .map(|(i, v)| (v.as_str(), i))
        .collect();
    let col_idx: HashMap<&str, usize> = top_nouns
        .iter()
        .enumerate()
        .map(|(j, n)| (n.as_str(), j))
        .collect();
    let mut counts = vec![vec![0u64; top_nouns.len()]; top_verbs.len()];
    for p in pairs {
        if let (Some(&i), Some(&j)) = (row_idx.get(p.verb.as_str()), col_idx.get(p.noun.as_str())) {
            counts[i][j] += 1;
        }
    }

    let keep_rows: Vec<bool> = counts.iter().map(|r| r.iter().any(|&c| c > 0)).collect();
    let keep_cols: Vec<bool> = (0..top_nouns.len())
        .map(|j| counts.iter().any(|r| r[j] > 0))
        .collect();
    let mut pruned = PrunedTerms::default();
    let mut row_labels = Vec::new();
    let mut kept_counts = Vec::new();
    for (i, row) in counts.into_iter().enumerate() {
        if !keep_rows[i] {
            pruned.verbs.push(top_verbs[i].clone());
            continue;
        }
        row_labels.push(top_verbs[i].clone());
        kept_counts.push(
            row.into_iter()
                .zip(&keep_cols)
                .filter_map(|(c, &k)| k.then_some(c))
                .collect::<Vec<_>>(),
        );
    }
    let mut col_labels = Vec::new();
    for (j, noun) in top_nouns.iter().enumerate() {
        if keep_cols[j] {
            col_labels.push(noun.clone());
        } else {
            pruned.nouns.push(noun.clone());
        }
    }
    if row_labels.len() < 2 || col_labels.len() < 2 {
        return Err(CooccurError::DegenerateTable {
            rows: row_labels.len(),
            cols: col_labels.len(),
        });
    }
    Ok((
        ContingencyTable::new(row_labels, col_labels, kept_counts),
        pruned,
    ))
}
