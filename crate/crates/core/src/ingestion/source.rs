use std::collections::HashSet;
use std::path::PathBuf;
use std::time::Duration;

use async_trait::async_trait;
use chrono::{DateTime, Utc};
use http_body_util::{BodyExt, Empty};
use hyper::body::Bytes;
use hyper_util::client::legacy::Client;
use hyper_util::rt::TokioExecutor;
use serde::{Deserialize, Serialize};

use super::{parse_timestamp, Cursors, IngestError, Post, SearchTermSet};

/// A record as delivered by a source, before term matching.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawRecord {
    pub id: String,
    pub created_at: DateTime<Utc>,
    pub text: String,
}

/// An input line the source could not parse.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MalformedRecord {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct FetchOutcome {
    pub records: Vec<RawRecord>,
    pub cursors: Cursors,
    pub malformed: Vec<MalformedRecord>,
    pub exhausted: bool,
}

/// Somewhere posts come from. Implementations own the meaning of cursors.
#[async_trait]
pub trait Source: Send + Sync {
    /// Value written to each stored post's `source` field.
    fn kind(&self) -> &'static str;

    async fn fetch(&self, terms: &[String], cursors: &Cursors)
        -> Result<FetchOutcome, IngestError>;
}

#[derive(Debug, Clone, Default)]
pub struct PollOutcome {
    pub posts: Vec<Post>,
    pub cursors: Cursors,
    pub malformed: Vec<MalformedRecord>,
    pub exhausted: bool,
}

/// One fetch round: pulls records for the current terms, tags each with every
/// term it matches and drops those matching none.
pub async fn poll_once(
    source: &dyn Source,
    terms: &SearchTermSet,
    cursors: &Cursors,
) -> Result<PollOutcome, IngestError> {
    if terms.terms.is_empty() {
        return Err(IngestError::EmptyTermSet);
    }
    let fetched = source.fetch(&terms.terms, cursors).await?;
    let mut seen = HashSet::new();
    let mut posts = Vec::new();
    for rec in fetched.records {
        let matched = terms.matching_terms(&rec.text);
        if matched.is_empty() || !seen.insert(rec.id.clone()) {
            continue;
        }
        posts.push(Post {
            id: rec.id,
            created_at: rec.created_at,
            text: rec.text,
            matched_terms: matched,
            source: source.kind().to_string(),
        });
    }
    Ok(PollOutcome {
        posts,
        cursors: fetched.cursors,
        malformed: fetched.malformed,
        exhausted: fetched.exhausted,
    })
}

#[derive(Deserialize)]
struct WireRecord {
    id: serde_json::Value,
    created_at: String,
    text: String,
}

impl WireRecord {
    fn into_raw(self) -> Result<RawRecord, String> {
        let id = match self.id {
            serde_json::Value::String(s) if !s.is_empty() => s,
            serde_json::Value::Number(n) => n.to_string(),
            other => return Err(format!("bad id {other}")),
        };
        Ok(RawRecord {
            id,
            created_at: parse_timestamp(&self.created_at)?,
            text: self.text,
        })
    }
}

/// Replays a JSONL file of `{id, created_at, text}` records (extra fields
/// such as `matched_terms` are ignored and recomputed).
///
/// The cursor is a line offset shared by all terms: a term added mid-replay
/// starts where the others are, not at the top of the file.
#[derive(Debug, Clone)]
pub struct ReplaySource {
    path: PathBuf,
    page_size: Option<usize>,
}

impl ReplaySource {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        ReplaySource {
            path: path.into(),
            page_size: None,
        }
    }

    /// Lines consumed per fetch; `None` reads to the end of the file.
    pub fn with_page_size(mut self, page_size: Option<usize>) -> Self {
        self.page_size = page_size.filter(|&n| n > 0);
        self
    }
}

#[async_trait]
impl Source for ReplaySource {
    fn kind(&self) -> &'static str {
        "replay"
    }

    async fn fetch(
        &self,
        terms: &[String],
        cursors: &Cursors,
    ) -> Result<FetchOutcome, IngestError> {
        let raw = tokio::fs::read_to_string(&self.path)
            .await
            .map_err(|e| match e.kind() {
                std::io::ErrorKind::NotFound => {
                    IngestError::NotFound(self.path.display().to_string())
                }
                _ => IngestError::SourceUnavailable(format!("{}: {e}", self.path.display())),
            })?;
        let start = cursors
            .values()
            .filter_map(|c| c.parse::<usize>().ok())
            .max()
            .unwrap_or(0);
        // only newline-terminated lines are complete
        let complete = match raw.rfind('\n') {
            Some(i) => &raw[..=i],
            None => "",
        };
        let lines: Vec<&str> = complete.lines().collect();
        let end = match self.page_size {
            Some(n) => (start + n).min(lines.len()),
            None => lines.len(),
        }
        .max(start);

        let mut out = FetchOutcome::default();
        for (idx, line) in lines.iter().enumerate().take(end).skip(start) {
            if line.trim().is_empty() {
                continue;
            }
            let parsed = serde_json::from_str::<WireRecord>(line)
                .map_err(|e| e.to_string())
                .and_then(WireRecord::into_raw);
            match parsed {
                Ok(rec) => out.records.push(rec),
                Err(reason) => out.malformed.push(MalformedRecord {
                    line: idx + 1,
                    reason,
                }),
            }
        }
        out.exhausted = end >= lines.len();
        for t in terms {
            out.cursors.insert(t.clone(), end.to_string());
        }
        Ok(out)
    }
}

/// Connection settings for an HTTP search endpoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LiveConfig {
    /// URL with `{term}`, `{cursor}` and `{page_size}` placeholders.
    pub endpoint_url_template: String,
    /// Name of the environment variable holding a bearer token.
    pub auth_token_env: Option<String>,
    pub page_size: usize,
}

/// Fetches posts from an HTTP endpoint returning a JSON array of
/// `{id, created_at, text}`. The next cursor for a term is the id of the
/// last record returned.
pub struct HttpSource {
    config: LiveConfig,
    token: Option<String>,
    client: Client<
        hyper_rustls::HttpsConnector<hyper_util::client::legacy::connect::HttpConnector>,
        Empty<Bytes>,
    >,
    timeout: Duration,
}

impl HttpSource {
    pub fn new(config: LiveConfig) -> Result<Self, IngestError> {
        if !config.endpoint_url_template.contains("{term}") {
            return Err(IngestError::Config(
                "endpoint_url_template must contain {term}".into(),
            ));
        }
        let token = match &config.auth_token_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                IngestError::Config(format!("environment variable {var} is not set"))
            })?),
            None => None,
        };
        let https = hyper_rustls::HttpsConnectorBuilder::new()
            .with_webpki_roots()
            .https_or_http()
            .enable_http1()
            .build();
        Ok(HttpSource {
            config,
            token,
            client: Client::builder(TokioExecutor::new()).build(https),
            timeout: Duration::from_secs(30),
        })
    }

    pub fn url_for(&self, term: &str, cursor: Option<&str>) -> String {
        let enc = |s: &str| url::form_urlencoded::byte_serialize(s.as_bytes()).collect::<String>();
        self.config
            .endpoint_url_template
            .replace("{term}", &enc(term))
            .replace("{cursor}", &enc(cursor.unwrap_or("")))
            .replace("{page_size}", &self.config.page_size.to_string())
    }

    async fn get(&self, url: &str) -> Result<Vec<WireRecord>, IngestError> {
        let unavailable = |m: String| IngestError::SourceUnavailable(format!("{url}: {m}"));
        let mut req = hyper::Request::get(url).header("accept", "application/json");
        if let Some(t) = &self.token {
            req = req.header("authorization", format!("Bearer {t}"));
        }
        let req = req
            .body(Empty::new())
            .map_err(|e| unavailable(e.to_string()))?;
        let resp = tokio::time::timeout(self.timeout, self.client.request(req))
            .await
            .map_err(|_| unavailable("timed out".into()))?
            .map_err(|e| unavailable(e.to_string()))?;
        let status = resp.status();
        let body = resp
            .into_body()
            .collect()
            .await
            .map_err(|e| unavailable(e.to_string()))?
            .to_bytes();
        if !status.is_success() {
            return Err(unavailable(format!("HTTP {status}")));
        }
        serde_json::from_slice(&body).map_err(|e| unavailable(format!("bad body: {e}")))
    }
}

#[async_trait]
impl Source for HttpSource {
    fn kind(&self) -> &'static str {
        "live"
    }

    async fn fetch(
        &self,
        terms: &[String],
        cursors: &Cursors,
    ) -> Result<FetchOutcome, IngestError> {
        let mut out = FetchOutcome {
            cursors: cursors.clone(),
            ..Default::default()
        };
        for term in terms {
            let url = self.url_for(term, cursors.get(term).map(String::as_str));
            let batch = self.get(&url).await?;
            for (i, wire) in batch.into_iter().enumerate() {
                match wire.into_raw() {
                    Ok(rec) => {
                        out.cursors.insert(term.clone(), rec.id.clone());
                        out.records.push(rec);
                    }
                    Err(reason) => out.malformed.push(MalformedRecord {
                        line: i + 1,
                        reason,
                    }),
                }
            }
        }
        Ok(out)
    }
}
