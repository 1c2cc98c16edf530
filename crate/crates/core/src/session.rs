//! The analyst workflow: run the pipeline over the store, keep an
//! append-only history of snapshots, and narrow the vocabulary by excluding
//! dominant lemmas between iterations.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ca::{self, CaError, CaResult, CoordinateMode};
use crate::cooccur::{self, ContingencyTable, CooccurError, PrunedTerms};
use crate::ingestion::{
    scan_store_prefix, utc_seconds, IngestError, Post, RevisionOutcome, SearchTermSet,
    TermsProvider,
};
use crate::textpipe::{
    normalize_terms, process_text, BaselineAnnotator, FallbackAnnotator, FilterConfig,
    PosAnnotator, SubprocessAnnotator, TaggerError,
};

pub const SCHEMA_VERSION: &str = "1";

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("not enough data yet: {0}")]
    NotEnoughData(String),
    #[error("not enough data yet: {0}")]
    DegenerateTable(String),
    #[error("no prior snapshot to extend")]
    NoPriorSnapshot,
    #[error("invalid session config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Tagger(#[from] TaggerError),
    #[error("analysis failed: {0}")]
    Analysis(String),
    #[error("snapshot document: {0}")]
    Schema(String),
    #[error("io: {0}")]
    Io(String),
}

impl From<CooccurError> for SessionError {
    fn from(e: CooccurError) -> Self {
        match e {
            CooccurError::InsufficientVocabulary { .. } => {
                SessionError::NotEnoughData(e.to_string())
            }
            CooccurError::DegenerateTable { .. } => SessionError::DegenerateTable(e.to_string()),
            CooccurError::InvalidK(_) => SessionError::InvalidConfig(e.to_string()),
            CooccurError::Csv(m) => SessionError::Analysis(m),
        }
    }
}

impl From<CaError> for SessionError {
    fn from(e: CaError) -> Self {
        match e {
            CaError::DegenerateTable(m) => SessionError::DegenerateTable(m),
            other => SessionError::Analysis(other.to_string()),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> SessionError {
    SessionError::Io(format!("{}: {e}", path.display()))
}

/// Which posts an iteration looks at.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Window {
    #[default]
    All,
    /// Inclusive on both ends.
    Between {
        #[serde(with = "utc_seconds")]
        from: DateTime<Utc>,
        #[serde(with = "utc_seconds")]
        to: DateTime<Utc>,
    },
}

impl Window {
    pub fn contains(&self, t: &DateTime<Utc>) -> bool {
        match self {
            Window::All => true,
            Window::Between { from, to } => from <= t && t <= to,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaggerChoice {
    #[default]
    Baseline,
    /// Line-protocol tagger subprocess, falling back to the baseline tagger
    /// when it fails.
    External {
        program: String,
        #[serde(default)]
        args: Vec<String>,
    },
}

impl TaggerChoice {
    pub fn build(&self) -> Result<Arc<dyn PosAnnotator>, SessionError> {
        Ok(match self {
            TaggerChoice::Baseline => Arc::new(BaselineAnnotator::bundled()),
            TaggerChoice::External { program, args } => Arc::new(FallbackAnnotator::new(Box::new(
                SubprocessAnnotator::spawn(program, args)?,
            ))),
        })
    }
}

fn default_k() -> usize {
    10
}

fn default_dims() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub event_name: String,
    pub store: PathBuf,
    #[serde(default)]
    pub window: Window,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_dims")]
    pub dims: usize,
    #[serde(default)]
    pub tagger: TaggerChoice,
    #[serde(default)]
    pub coordinate_mode: CoordinateMode,
}

impl SessionConfig {
    pub fn new(event_name: impl Into<String>, store: impl Into<PathBuf>) -> Self {
        SessionConfig {
            event_name: event_name.into(),
            store: store.into(),
            window: Window::All,
            k: default_k(),
            dims: default_dims(),
            tagger: TaggerChoice::Baseline,
            coordinate_mode: CoordinateMode::SingularVectors,
        }
    }

    pub fn validate(&self) -> Result<(), SessionError> {
        if self.k < 2 {
            return Err(SessionError::InvalidConfig(format!(
                "k must be >= 2, got {}",
                self.k
            )));
        }
        if self.dims < 1 {
            return Err(SessionError::InvalidConfig("dims must be >= 1".into()));
        }
        if let Window::Between { from, to } = &self.window {
            if to < from {
                return Err(SessionError::InvalidConfig(
                    "window ends before it starts".into(),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub verb: String,
    pub noun: String,
    pub score: f64,
    pub cosine: f64,
    pub verb_norm: f64,
    pub noun_norm: f64,
}

/// Everything needed to recompute a snapshot from the store.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotInputs {
    pub store_prefix_len: usize,
    pub window: Window,
    pub k: usize,
    pub dims: usize,
    pub coordinate_mode: CoordinateMode,
    pub tagger: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisSnapshot {
    pub sequence_number: u64,
    /// Timestamp of the newest analyzed post.
    #[serde(with = "utc_seconds")]
    pub created_at: DateTime<Utc>,
    pub post_count: usize,
    pub inputs: SnapshotInputs,
    pub exclusions_in_effect: BTreeSet<String>,
    pub top_terms: cooccur::TopTerms,
    pub table: ContingencyTable,
    pub ca: CaResult,
    pub candidates: Vec<Candidate>,
    pub pruned_terms: PrunedTerms,
}

#[derive(Serialize)]
struct DocumentOut<'a> {
    schema_version: &'a str,
    #[serde(flatten)]
    snapshot: &'a AnalysisSnapshot,
}

#[derive(Deserialize)]
struct DocumentIn {
    schema_version: String,
    #[serde(flatten)]
    snapshot: AnalysisSnapshot,
}

/// Canonical JSON export. Floats use the shortest round-trip representation
/// and field order is fixed, so equal snapshots give equal bytes.
pub fn export_snapshot(snapshot: &AnalysisSnapshot) -> String {
    let mut out = serde_json::to_string_pretty(&DocumentOut {
        schema_version: SCHEMA_VERSION,
        snapshot,
    })
    .expect("snapshot serializes");
    out.push('\n');
    out
}

pub fn import_snapshot(document: &str) -> Result<AnalysisSnapshot, SessionError> {
    let doc: DocumentIn =
        serde_json::from_str(document).map_err(|e| SessionError::Schema(e.to_string()))?;
    if doc.schema_version != SCHEMA_VERSION {
        return Err(SessionError::Schema(format!(
            "unsupported schema_version {:?}",
            doc.schema_version
        )));
    }
    Ok(doc.snapshot)
}

/// Runs textpipe -> cooccur -> ca over `posts` (the first
/// `inputs.store_prefix_len` records of the store).
pub fn analyze(
    posts: &[Post],
    inputs: &SnapshotInputs,
    exclusions: &BTreeSet<String>,
    tagger: &dyn PosAnnotator,
    sequence_number: u64,
) -> Result<AnalysisSnapshot, SessionError> {
    let window: Vec<&Post> = posts
        .iter()
        .filter(|p| inputs.window.contains(&p.created_at))
        .collect();
    let created_at = window
        .iter()
        .map(|p| p.created_at)
        .max()
        .ok_or_else(|| SessionError::NotEnoughData("no posts in the store window".into()))?;

    let filter = FilterConfig::with_exclusions(exclusions);
    let mut per_post = Vec::with_capacity(window.len());
    let mut pairs = Vec::new();
    for p in &window {
        let terms = process_text(&p.text, tagger, &filter)?;
        pairs.extend(cooccur::extract_pairs(&p.id, &terms.nouns, &terms.verbs));
        per_post.push(terms);
    }
    let top = cooccur::top_k_terms(&per_post, inputs.k)?;
    let (table, pruned) = cooccur::build_table(&pairs, &top.verbs, &top.nouns)?;
    let residuals = ca::residual_matrix(&table)?;
    let dims = inputs.dims.min(table.rows().min(table.cols()));
    let result = ca::decompose(&residuals, dims, inputs.coordinate_mode)?;
    let candidates = rank_candidates(&table, &result);

    Ok(AnalysisSnapshot {
        sequence_number,
        created_at,
        post_count: window.len(),
        inputs: SnapshotInputs {
            dims,
            ..inputs.clone()
        },
        exclusions_in_effect: exclusions.clone(),
        top_terms: top,
        table,
        ca: result,
        candidates,
        pruned_terms: pruned,
    })
}

/// Scores every verb x noun pair; highest score first, ties by (verb, noun).
pub fn rank_candidates(table: &ContingencyTable, result: &CaResult) -> Vec<Candidate> {
    let radius = result
        .row_coords
        .iter()
        .chain(&result.col_coords)
        .map(|p| ca::norm(p))
        .fold(0.0, f64::max);
    let mut out = Vec::with_capacity(table.rows() * table.cols());
    for (verb, vp) in table.row_labels.iter().zip(&result.row_coords) {
        for (noun, np) in table.col_labels.iter().zip(&result.col_coords) {
            out.push(Candidate {
                verb: verb.clone(),
                noun: noun.clone(),
                score: ca::narrative_score(vp, np, radius),
                cosine: ca::association_cosine(vp, np),
                verb_norm: ca::norm(vp),
                noun_norm: ca::norm(np),
            });
        }
    }
    out.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.verb.cmp(&b.verb))
            .then_with(|| a.noun.cmp(&b.noun))
    });
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TermRevision {
    pub revision: u64,
    pub terms: Vec<String>,
    pub added: Vec<String>,
    pub removed: Vec<String>,
    pub changed: bool,
}

#[derive(Serialize, Deserialize)]
struct SessionFile {
    schema_version: String,
    config: SessionConfig,
    term_revisions: Vec<TermRevision>,
}

/// Read-only summary used by the API.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub config: SessionConfig,
    pub term_revisions: Vec<TermRevision>,
    pub current_terms: Option<SearchTermSet>,
    pub latest_sequence_number: Option<u64>,
}

/// One analysis session. Iterations are serialized; history reads only
/// take a short read lock and never wait for a running iteration.
pub struct Session {
    config: SessionConfig,
    dir: Option<PathBuf>,
    tagger: Arc<dyn PosAnnotator>,
    terms: TermsProvider,
    revisions: RwLock<Vec<TermRevision>>,
    history: RwLock<Vec<Arc<AnalysisSnapshot>>>,
    writer: Mutex<()>,
}

impl std::fmt::Debug for Session {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Session")
            .field("config", &self.config)
            .field("dir", &self.dir)
            .finish()
    }
}

impl Session {
    /// Session kept only in memory.
    pub fn in_memory(config: SessionConfig, terms: TermsProvider) -> Result<Self, SessionError> {
        config.validate()?;
        let tagger = config.tagger.build()?;
        Ok(Session {
            config,
            dir: None,
            tagger,
            terms,
            revisions: RwLock::new(Vec::new()),
            history: RwLock::new(Vec::new()),
            writer: Mutex::new(()),
        })
    }

    /// Opens the session in `dir` if it has a `session.json`, otherwise
    /// creates one there with `config`.
    pub fn create_or_open(
        dir: impl AsRef<Path>,
        config: SessionConfig,
        terms: TermsProvider,
    ) -> Result<Self, SessionError> {
        let dir = dir.as_ref();
        if dir.join("session.json").exists() {
            return Self::open(dir, terms);
        }
        let mut s = Self::in_memory(config, terms)?;
        std::fs::create_dir_all(dir.join("snapshots")).map_err(|e| io_err(dir, e))?;
        if let Some(set) = s.terms.current() {
            s.revisions
                .get_mut()
                .expect("revisions lock")
                .push(TermRevision {
                    revision: set.revision,
                    terms: set.terms.clone(),
                    added: set.terms.clone(),
                    removed: Vec::new(),
                    changed: true,
                });
        }
        s.dir = Some(dir.to_path_buf());
        s.persist_session()?;
        Ok(s)
    }

    /// Resumes a persisted session. The latest logged term revision seeds
    /// `terms` when it holds no set yet.
    pub fn open(dir: impl AsRef<Path>, terms: TermsProvider) -> Result<Self, SessionError> {
        let dir = dir.as_ref();
        let path = dir.join("session.json");
        let raw = std::fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
        let file: SessionFile = serde_json::from_str(&raw)
            .map_err(|e| SessionError::Schema(format!("{}: {e}", path.display())))?;
        if file.schema_version != SCHEMA_VERSION {
            return Err(SessionError::Schema(format!(
                "unsupported session schema_version {:?}",
                file.schema_version
            )));
        }
        let terms = match (terms.current(), file.term_revisions.last()) {
            (None, Some(last)) => {
                let mut set = SearchTermSet::new(&file.config.event_name, last.terms.clone())?;
                set.revision = last.revision;
                TermsProvider::new(set)
            }
            _ => terms,
        };
        let mut s = Self::in_memory(file.config, terms)?;
        *s.revisions.get_mut().expect("revisions lock") = file.term_revisions;

        let snap_dir = dir.join("snapshots");
        let mut names: Vec<PathBuf> = match std::fs::read_dir(&snap_dir) {
            Ok(rd) => rd
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "json"))
                .collect(),
            Err(_) => Vec::new(),
        };
        names.sort();
        let history = s.history.get_mut().expect("history lock");
        for p in names {
            let raw = std::fs::read_to_string(&p).map_err(|e| io_err(&p, e))?;
            let snap = import_snapshot(&raw)?;
            if snap.sequence_number != history.len() as u64 + 1 {
                return Err(SessionError::Schema(format!(
                    "{} breaks the snapshot sequence",
                    p.display()
                )));
            }
            history.push(Arc::new(snap));
        }
        s.dir = Some(dir.to_path_buf());
        Ok(s)
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn terms(&self) -> &TermsProvider {
        &self.terms
    }

    pub fn info(&self) -> SessionInfo {
        SessionInfo {
            config: self.config.clone(),
            term_revisions: self.revisions.read().expect("revisions lock").clone(),
            current_terms: self.terms.current(),
            latest_sequence_number: self.latest().map(|s| s.sequence_number),
        }
    }

    pub fn history(&self) -> Vec<Arc<AnalysisSnapshot>> {
        self.history.read().expect("history lock").clone()
    }

    pub fn latest(&self) -> Option<Arc<AnalysisSnapshot>> {
        self.history.read().expect("history lock").last().cloned()
    }

    pub fn snapshot(&self, sequence_number: u64) -> Option<Arc<AnalysisSnapshot>> {
        let idx = usize::try_from(sequence_number.checked_sub(1)?).ok()?;
        self.history.read().expect("history lock").get(idx).cloned()
    }

    fn inputs(&self, store_prefix_len: usize) -> SnapshotInputs {
        SnapshotInputs {
            store_prefix_len,
            window: self.config.window.clone(),
            k: self.config.k,
            dims: self.config.dims,
            coordinate_mode: self.config.coordinate_mode,
            tagger: self.tagger.name().to_string(),
        }
    }

    /// Analyzes everything currently in the store with `exclusions` and
    /// records the result as the next snapshot.
    pub fn run_iteration<I, S>(&self, exclusions: I) -> Result<Arc<AnalysisSnapshot>, SessionError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let exclusions = normalize_terms(exclusions);
        let _guard = self.writer.lock().expect("writer lock");
        let posts = scan_store_prefix(&self.config.store, usize::MAX)?;
        let seq = self.history.read().expect("history lock").len() as u64 + 1;
        let snap = analyze(
            &posts,
            &self.inputs(posts.len()),
            &exclusions,
            self.tagger.as_ref(),
            seq,
        )?;
        self.persist_snapshot(&snap)?;
        let snap = Arc::new(snap);
        self.history
            .write()
            .expect("history lock")
            .push(snap.clone());
        Ok(snap)
    }

    /// Adds `terms` to the latest snapshot's exclusions and reruns.
    pub fn exclude_and_rerun<I, S>(&self, terms: I) -> Result<Arc<AnalysisSnapshot>, SessionError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let prior = self.latest().ok_or(SessionError::NoPriorSnapshot)?;
        let mut all = prior.exclusions_in_effect.clone();
        all.extend(normalize_terms(terms));
        self.run_iteration(all)
    }

    /// Recomputes a recorded snapshot from its inputs (store prefix,
    /// exclusions, config).
    pub fn reproduce(&self, snapshot: &AnalysisSnapshot) -> Result<AnalysisSnapshot, SessionError> {
        let posts = scan_store_prefix(&self.config.store, snapshot.inputs.store_prefix_len)?;
        if posts.len() != snapshot.inputs.store_prefix_len {
            return Err(SessionError::Analysis(format!(
                "store holds {} records, snapshot used {}",
                posts.len(),
                snapshot.inputs.store_prefix_len
            )));
        }
        let inputs = SnapshotInputs {
            dims: self.config.dims,
            ..snapshot.inputs.clone()
        };
        analyze(
            &posts,
            &inputs,
            &snapshot.exclusions_in_effect,
            self.tagger.as_ref(),
            snapshot.sequence_number,
        )
    }

    pub fn revise_terms(
        &self,
        add: &[String],
        remove: &[String],
    ) -> Result<RevisionOutcome, SessionError> {
        let (outcome, set) = self.terms.revise(&self.config.event_name, add, remove)?;
        self.revisions
            .write()
            .expect("revisions lock")
            .push(TermRevision {
                revision: outcome.revision,
                terms: set.terms,
                added: add.to_vec(),
                removed: remove.to_vec(),
                changed: outcome.changed,
            });
        self.persist_session()?;
        Ok(outcome)
    }

    fn persist_session(&self) -> Result<(), SessionError> {
        let Some(dir) = &self.dir else {
            return Ok(());
        };
        let file = SessionFile {
            schema_version: SCHEMA_VERSION.into(),
            config: self.config.clone(),
            term_revisions: self.revisions.read().expect("revisions lock").clone(),
        };
        let mut body = serde_json::to_string_pretty(&file).expect("session serializes");
        body.push('\n');
        write_atomic(&dir.join("session.json"), body.as_bytes())
    }

    fn persist_snapshot(&self, snap: &AnalysisSnapshot) -> Result<(), SessionError> {
        let Some(dir) = &self.dir else {
            return Ok(());
        };
        let path = dir
            .join("snapshots")
            .join(format!("{:04}.json", snap.sequence_number));
        write_atomic(&path, export_snapshot(snap).as_bytes())
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), SessionError> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)
        .and_then(|_| std::fs::rename(&tmp, path))
        .map_err(|e| io_err(path, e))
}
