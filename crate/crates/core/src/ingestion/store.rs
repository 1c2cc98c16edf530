use std::collections::HashSet;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use super::{Cursors, IngestError, Post};

/// Append-only JSONL post store with id-based de-duplication.
///
/// Every appended post is written as one LF-terminated line and flushed
/// before `dedup_append` returns. Readers ignore a trailing line without a
/// newline, so a crash mid-write never exposes a half record.
pub struct PostStore {
    path: PathBuf,
    writer: Box<dyn Write + Send>,
    ids: HashSet<String>,
    count: usize,
    last_id: Option<String>,
}

impl std::fmt::Debug for PostStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PostStore")
            .field("path", &self.path)
            .field("count", &self.count)
            .finish()
    }
}

impl PostStore {
    /// Opens (creating if needed) the store at `path` and indexes its ids.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, IngestError> {
        let path = path.as_ref().to_path_buf();
        let existing = if path.exists() {
            scan_store(&path)?
        } else {
            Vec::new()
        };
        truncate_partial_tail(&path)?;
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| storage(None, format!("open {}: {e}", path.display())))?;
        Ok(Self::from_parts(path, Box::new(file), existing))
    }

    /// Store over an arbitrary writer; used to exercise write failures.
    pub fn with_writer(
        path: impl Into<PathBuf>,
        writer: Box<dyn Write + Send>,
        existing: Vec<Post>,
    ) -> Self {
        Self::from_parts(path.into(), writer, existing)
    }

    fn from_parts(path: PathBuf, writer: Box<dyn Write + Send>, existing: Vec<Post>) -> Self {
        let last_id = existing.last().map(|p| p.id.clone());
        let count = existing.len();
        let ids = existing.into_iter().map(|p| p.id).collect();
        PostStore {
            path,
            writer,
            ids,
            count,
            last_id,
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn contains(&self, id: &str) -> bool {
        self.ids.contains(id)
    }

    /// Appends posts whose id is not yet stored (including duplicates within
    /// `batch`), in batch order. Returns the number appended.
    pub fn dedup_append(&mut self, batch: &[Post]) -> Result<usize, IngestError> {
        let mut appended = 0;
        for post in batch {
            if self.ids.contains(&post.id) {
                continue;
            }
            let line = post.to_json_line();
            self.writer
                .write_all(line.as_bytes())
                .and_then(|_| self.writer.flush())
                .map_err(|e| storage(self.last_id.clone(), e.to_string()))?;
            self.ids.insert(post.id.clone());
            self.last_id = Some(post.id.clone());
            self.count += 1;
            appended += 1;
        }
        Ok(appended)
    }

    pub fn cursor_path(&self) -> PathBuf {
        cursor_path(&self.path)
    }

    pub fn load_cursors(&self) -> Result<Cursors, IngestError> {
        let p = self.cursor_path();
        if !p.exists() {
            return Ok(Cursors::new());
        }
        let raw = std::fs::read_to_string(&p)
            .map_err(|e| storage(self.last_id.clone(), format!("read {}: {e}", p.display())))?;
        serde_json::from_str(&raw)
            .map_err(|e| storage(self.last_id.clone(), format!("parse {}: {e}", p.display())))
    }

    /// Writes the cursor sidecar via a temp file and rename.
    pub fn save_cursors(&self, cursors: &Cursors) -> Result<(), IngestError> {
        let p = self.cursor_path();
        let tmp = p.with_extension("json.tmp");
        let body = serde_json::to_string_pretty(cursors).expect("cursors serialize");
        std::fs::write(&tmp, body)
            .and_then(|_| std::fs::rename(&tmp, &p))
            .map_err(|e| storage(self.last_id.clone(), format!("write {}: {e}", p.display())))
    }
}

fn cursor_path(store: &Path) -> PathBuf {
    let mut name = store.file_name().unwrap_or_default().to_os_string();
    name.push(".cursors.json");
    store.with_file_name(name)
}

fn storage(last_good_id: Option<String>, message: String) -> IngestError {
    IngestError::StorageFailure {
        last_good_id,
        message,
    }
}

// Drops an unterminated final line left by an interrupted writer so new
// appends start on a fresh line.
fn truncate_partial_tail(path: &Path) -> Result<(), IngestError> {
    if !path.exists() {
        return Ok(());
    }
    let bytes = std::fs::read(path).map_err(|e| storage(None, e.to_string()))?;
    if bytes.is_empty() || bytes.ends_with(b"\n") {
        return Ok(());
    }
    let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    let f = OpenOptions::new()
        .write(true)
        .open(path)
        .map_err(|e| storage(None, e.to_string()))?;
    f.set_len(keep as u64)
        .map_err(|e| storage(None, e.to_string()))
}

/// Reads every complete record of a store file.
pub fn scan_store(path: impl AsRef<Path>) -> Result<Vec<Post>, IngestError> {
    scan_store_prefix(path, usize::MAX)
}

/// Reads at most the first `limit` complete records of a store file.
pub fn scan_store_prefix(path: impl AsRef<Path>, limit: usize) -> Result<Vec<Post>, IngestError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => IngestError::NotFound(path.display().to_string()),
        _ => storage(None, format!("open {}: {e}", path.display())),
    })?;
    let mut reader = BufReader::new(file);
    let mut out = Vec::new();
    let mut line = String::new();
    let mut lineno = 0usize;
    while out.len() < limit {
        line.clear();
        let n = reader
            .read_line(&mut line)
            .map_err(|e| storage(None, format!("read {}: {e}", path.display())))?;
        if n == 0 || !line.ends_with('\n') {
            break;
        }
        lineno += 1;
        if line.trim().is_empty() {
            continue;
        }
        let post: Post = serde_json::from_str(&line).map_err(|e| {
            storage(
                out.last().map(|p: &Post| p.id.clone()),
                format!("{}:{lineno}: {e}", path.display()),
            )
        })?;
        out.push(post);
    }
    Ok(out)
}
