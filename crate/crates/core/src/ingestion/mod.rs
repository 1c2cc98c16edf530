//! Post acquisition: search terms, pluggable sources, an append-only JSONL
//! store and the polling loop that connects them.

mod config;
mod poller;
mod source;
mod store;

use std::collections::{BTreeMap, HashSet};
use std::sync::{Arc, RwLock};

use chrono::{DateTime, SubsecRound, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::textpipe::tokenize;

pub use config::IngestConfig;
pub use poller::{run_poller, CycleReport, PollerHandle, PollerOptions, PollerStop, PollerSummary};
pub use source::{
    poll_once, FetchOutcome, HttpSource, LiveConfig, MalformedRecord, PollOutcome, RawRecord,
    ReplaySource, Source,
};
pub use store::{scan_store, scan_store_prefix, PostStore};

/// Per-term opaque pagination tokens.
pub type Cursors = BTreeMap<String, String>;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("search term set is empty")]
    EmptyTermSet,
    #[error("duplicate search term {0:?}")]
    DuplicateTerm(String),
    #[error("source unavailable: {0}")]
    SourceUnavailable(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("storage failure after {last_good_id:?}: {message}")]
    StorageFailure {
        last_good_id: Option<String>,
        message: String,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// The live set of search terms for one event.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchTermSet {
    pub event_name: String,
    pub terms: Vec<String>,
    pub revision: u64,
}

/// Result of a term revision. `changed` is false when the revision was
/// bumped but the folded term set stayed the same.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevisionOutcome {
    pub revision: u64,
    pub changed: bool,
    pub terms: Vec<String>,
}

impl SearchTermSet {
    pub fn new<I, S>(event_name: impl Into<String>, terms: I) -> Result<Self, IngestError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for t in terms {
            let t: String = t.into();
            let t = t.trim().to_string();
            if t.is_empty() {
                continue;
            }
            if !seen.insert(t.to_lowercase()) {
                return Err(IngestError::DuplicateTerm(t));
            }
            out.push(t);
        }
        if out.is_empty() {
            return Err(IngestError::EmptyTermSet);
        }
        Ok(SearchTermSet {
            event_name: event_name.into(),
            terms: out,
            revision: 1,
        })
    }

    /// Adds and removes terms (case-insensitive). The revision always
    /// increases unless the result would be empty, in which case nothing
    /// changes.
    pub fn revise(
        &mut self,
        add: &[String],
        remove: &[String],
    ) -> Result<RevisionOutcome, IngestError> {
        let removed: HashSet<String> = remove.iter().map(|t| t.trim().to_lowercase()).collect();
        let mut next: Vec<String> = self
            .terms
            .iter()
            .filter(|t| !removed.contains(&t.to_lowercase()))
            .cloned()
            .collect();
        let mut folded: HashSet<String> = next.iter().map(|t| t.to_lowercase()).collect();
        for t in add {
            let t = t.trim();
            if !t.is_empty() && folded.insert(t.to_lowercase()) {
                next.push(t.to_string());
            }
        }
        if next.is_empty() {
            return Err(IngestError::EmptyTermSet);
        }
        let changed = next != self.terms;
        self.terms = next;
        self.revision += 1;
        Ok(RevisionOutcome {
            revision: self.revision,
            changed,
            terms: self.terms.clone(),
        })
    }

    /// Terms of this set that match `text`.
    pub fn matching_terms(&self, text: &str) -> Vec<String> {
        let folded_tokens: Vec<String> = tokenize(text).iter().map(|t| t.to_lowercase()).collect();
        let folded_text = text.to_lowercase();
        self.terms
            .iter()
            .filter(|term| term_matches_folded(term, &folded_tokens, &folded_text))
            .cloned()
            .collect()
    }
}

/// Matching rule: phrases (containing whitespace) match as case-folded
/// substrings; single words, hashtags and handles match whole tokens
/// case-insensitively (the sigil is part of the token).
pub fn term_matches(term: &str, text: &str) -> bool {
    let folded_tokens: Vec<String> = tokenize(text).iter().map(|t| t.to_lowercase()).collect();
    term_matches_folded(term, &folded_tokens, &text.to_lowercase())
}

fn term_matches_folded(term: &str, folded_tokens: &[String], folded_text: &str) -> bool {
    let term = term.trim().to_lowercase();
    if term.is_empty() {
        return false;
    }
    if term.contains(char::is_whitespace) {
        folded_text.contains(&term)
    } else {
        folded_tokens.contains(&term)
    }
}

/// Shared, revisable view of the current search terms. The poller reads a
/// consistent copy each cycle; revisions go through [`TermsProvider::revise`].
#[derive(Debug, Clone, Default)]
pub struct TermsProvider {
    inner: Arc<RwLock<Option<SearchTermSet>>>,
}

impl TermsProvider {
    pub fn new(terms: SearchTermSet) -> Self {
        TermsProvider {
            inner: Arc::new(RwLock::new(Some(terms))),
        }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn current(&self) -> Option<SearchTermSet> {
        self.inner.read().expect("terms lock").clone()
    }

    /// Revises the set, creating it from `add` when none exists yet.
    pub fn revise(
        &self,
        event_name: &str,
        add: &[String],
        remove: &[String],
    ) -> Result<(RevisionOutcome, SearchTermSet), IngestError> {
        let mut guard = self.inner.write().expect("terms lock");
        match guard.as_mut() {
            Some(set) => {
                let outcome = set.revise(add, remove)?;
                Ok((outcome, set.clone()))
            }
            None => {
                let set = SearchTermSet::new(event_name, add.iter().cloned())?;
                let outcome = RevisionOutcome {
                    revision: set.revision,
                    changed: true,
                    terms: set.terms.clone(),
                };
                *guard = Some(set.clone());
                Ok((outcome, set))
            }
        }
    }
}

/// One stored post.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Post {
    pub id: String,
    #[serde(with = "utc_seconds")]
    pub created_at: DateTime<Utc>,
    pub text: String,
    pub matched_terms: Vec<String>,
    pub source: String,
}

impl Post {
    pub fn to_json_line(&self) -> String {
        let mut line = serde_json::to_string(self).expect("post serializes");
        line.push('\n');
        line
    }
}

/// `2020-10-07T21:14:03Z` timestamps, second precision.
pub mod utc_seconds {
    use chrono::{DateTime, SubsecRound, Utc};
    use serde::{Deserialize, Deserializer, Serializer};

    const FORMAT: &str = "%Y-%m-%dT%H:%M:%SZ";

    pub fn serialize<S: Serializer>(t: &DateTime<Utc>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&t.format(FORMAT).to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DateTime<Utc>, D::Error> {
        let raw = String::deserialize(d)?;
        super::parse_timestamp(&raw).map_err(serde::de::Error::custom)
    }

    pub fn format(t: &DateTime<Utc>) -> String {
        t.trunc_subsecs(0).format(FORMAT).to_string()
    }
}

/// Parses RFC 3339 and truncates to whole seconds.
pub fn parse_timestamp(raw: &str) -> Result<DateTime<Utc>, String> {
    DateTime::parse_from_rfc3339(raw.trim())
        .map(|t| t.with_timezone(&Utc).trunc_subsecs(0))
        .map_err(|e| format!("bad timestamp {raw:?}: {e}"))
}
