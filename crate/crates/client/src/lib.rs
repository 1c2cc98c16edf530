//! Async client for the analysis service.

use bytes::Bytes;
use futures::stream::BoxStream;
use futures::StreamExt;
use http_body_util::{BodyExt, Full};
use hyper::body::Incoming;
use hyper::header::CONTENT_TYPE;
use hyper::{Method, Request, Response, StatusCode, Uri};
use hyper_util::client::legacy::connect::HttpConnector;
use hyper_util::client::legacy::Client as HttpClient;
use hyper_util::rt::TokioExecutor;
use serde::de::DeserializeOwned;
use trollhunter_core::api::{
    ApiError, IterationRequest, ServerEvent, SnapshotSummary, TermsRequest,
};
use trollhunter_core::ingestion::RevisionOutcome;
use trollhunter_core::session::{import_snapshot, AnalysisSnapshot, SessionInfo};

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("server returned {status}: {error}")]
    Api { status: u16, error: ApiError },
    #[error("server returned {status}: {body}")]
    UnexpectedStatus { status: u16, body: String },
    #[error("request failed: {0}")]
    Transport(String),
    #[error("could not decode response: {0}")]
    Decode(String),
    #[error("invalid base url: {0}")]
    BaseUrl(String),
}

pub type EventStream = BoxStream<'static, Result<ServerEvent, ClientError>>;

/// A snapshot document as served, plus its parsed form.
#[derive(Debug, Clone)]
pub struct SnapshotDocument {
    pub raw: String,
    pub snapshot: AnalysisSnapshot,
}

#[derive(Clone)]
pub struct Client {
    base: String,
    http: HttpClient<HttpConnector, Full<Bytes>>,
}

impl Client {
    /// `base_url` like `http://127.0.0.1:8080`.
    pub fn new(base_url: &str) -> Result<Self, ClientError> {
        let base = base_url.trim_end_matches('/').to_string();
        let uri: Uri = base
            .parse()
            .map_err(|e| ClientError::BaseUrl(format!("{base_url}: {e}")))?;
        if uri.scheme_str() != Some("http") || uri.host().is_none() {
            return Err(ClientError::BaseUrl(format!(
                "{base_url}: expected http://host[:port]"
            )));
        }
        Ok(Client {
            base,
            http: HttpClient::builder(TokioExecutor::new()).build_http(),
        })
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    pub async fn session(&self) -> Result<SessionInfo, ClientError> {
        self.get_json("/api/v1/session").await
    }

    pub async fn snapshots(&self) -> Result<Vec<SnapshotSummary>, ClientError> {
        self.get_json("/api/v1/snapshots").await
    }

    /// Exact bytes of the snapshot document.
    pub async fn snapshot_raw(&self, n: u64) -> Result<String, ClientError> {
        self.text(Method::GET, &format!("/api/v1/snapshots/{n}"), None)
            .await
    }

    pub async fn snapshot(&self, n: u64) -> Result<SnapshotDocument, ClientError> {
        document(self.snapshot_raw(n).await?)
    }

    pub async fn biplot_svg(&self, n: u64) -> Result<String, ClientError> {
        self.text(
            Method::GET,
            &format!("/api/v1/snapshots/{n}/biplot.svg"),
            None,
        )
        .await
    }

    pub async fn create_iteration(
        &self,
        req: &IterationRequest,
    ) -> Result<SnapshotDocument, ClientError> {
        let body = serde_json::to_vec(req).expect("request serializes");
        document(
            self.text(Method::POST, "/api/v1/session/iterations", Some(body))
                .await?,
        )
    }

    pub async fn revise_terms(&self, req: &TermsRequest) -> Result<RevisionOutcome, ClientError> {
        let body = serde_json::to_vec(req).expect("request serializes");
        let raw = self
            .text(Method::PUT, "/api/v1/session/terms", Some(body))
            .await?;
        serde_json::from_str(&raw).map_err(|e| ClientError::Decode(e.to_string()))
    }

    /// Subscribes to server events. The subscription is live once this
    /// returns; unknown event kinds are skipped.
    pub async fn events(&self) -> Result<EventStream, ClientError> {
        let resp = self.send(Method::GET, "/api/v1/events", None).await?;
        let resp = check(resp).await?;
        let state = (
            resp.into_body(),
            SseParser::default(),
            std::collections::VecDeque::<(String, String)>::new(),
        );
        Ok(
            futures::stream::unfold(state, |(mut body, mut parser, mut queue)| async move {
                loop {
                    if let Some((name, data)) = queue.pop_front() {
                        match ServerEvent::parse(&name, &data) {
                            Some(Ok(ev)) => return Some((Ok(ev), (body, parser, queue))),
                            Some(Err(e)) => {
                                return Some((
                                    Err(ClientError::Decode(e.to_string())),
                                    (body, parser, queue),
                                ))
                            }
                            None => continue,
                        }
                    }
                    match body.frame().await {
                        Some(Ok(frame)) => {
                            if let Ok(chunk) = frame.into_data() {
                                queue.extend(parser.push(&chunk));
                            }
                        }
                        Some(Err(e)) => {
                            return Some((
                                Err(ClientError::Transport(e.to_string())),
                                (body, parser, queue),
                            ))
                        }
                        None => return None,
                    }
                }
            })
            .boxed(),
        )
    }

    async fn get_json<T: DeserializeOwned>(&self, path: &str) -> Result<T, ClientError> {
        let raw = self.text(Method::GET, path, None).await?;
        serde_json::from_str(&raw).map_err(|e| ClientError::Decode(e.to_string()))
    }

    async fn text(
        &self,
        method: Method,
        path: &str,
        body: Option<Vec<u8>>,
    ) -> Result<String, ClientError> {
        let resp = check(self.send(method, path, body).await?).await?;
        let bytes = collect(resp).await?;
        String::from_utf8(bytes.to_vec()).map_err(|e| ClientError::Decode(e.to_string()))
    }

    async fn send(
        &self,
        method: Method,
        path: &str,
        body: Option<Vec<u8>>,
    ) -> Result<Response<Incoming>, ClientError> {
        let mut builder = Request::builder()
            .method(method)
            .uri(format!("{}{path}", self.base));
        if body.is_some() {
            builder = builder.header(CONTENT_TYPE, "application/json");
        }
        let req = builder
            .body(Full::new(Bytes::from(body.unwrap_or_default())))
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        self.http
            .request(req)
            .await
            .map_err(|e| ClientError::Transport(e.to_string()))
    }
}

fn document(raw: String) -> Result<SnapshotDocument, ClientError> {
    let snapshot = import_snapshot(&raw).map_err(|e| ClientError::Decode(e.to_string()))?;
    Ok(SnapshotDocument { raw, snapshot })
}

async fn collect(resp: Response<Incoming>) -> Result<Bytes, ClientError> {
    resp.into_body()
        .collect()
        .await
        .map(|c| c.to_bytes())
        .map_err(|e| ClientError::Transport(e.to_string()))
}

async fn check(resp: Response<Incoming>) -> Result<Response<Incoming>, ClientError> {
    let status = resp.status();
    if status.is_success() {
        return Ok(resp);
    }
    let bytes = collect(resp).await?;
    Err(error_for(status, &bytes))
}

fn error_for(status: StatusCode, body: &[u8]) -> ClientError {
    match serde_json::from_slice::<ApiError>(body) {
        Ok(error) => ClientError::Api {
            status: status.as_u16(),
            error,
        },
        Err(_) => ClientError::UnexpectedStatus {
            status: status.as_u16(),
            body: String::from_utf8_lossy(body).into_owned(),
        },
    }
}

/// Incremental `text/event-stream` decoder yielding (event, data) pairs.
#[derive(Debug, Default)]
struct SseParser {
    buf: Vec<u8>,
    event: String,
    data: Vec<String>,
}

impl SseParser {
    fn push(&mut self, chunk: &[u8]) -> Vec<(String, String)> {
        self.buf.extend_from_slice(chunk);
        let mut out = Vec::new();
        while let Some(pos) = self.buf.iter().position(|&b| b == b'\n') {
            let raw: Vec<u8> = self.buf.drain(..=pos).collect();
            let line = String::from_utf8_lossy(&raw);
            let line = line.trim_end_matches(['\n', '\r']);
            if line.is_empty() {
                if !self.data.is_empty() {
                    let name = if self.event.is_empty() {
                        "message".to_string()
                    } else {
                        std::mem::take(&mut self.event)
                    };
                    out.push((name, self.data.join("\n")));
                }
                self.event.clear();
                self.data.clear();
                continue;
            }
            if line.starts_with(':') {
                continue;
            }
            let (field, value) = line.split_once(':').unwrap_or((line, ""));
            let value = value.strip_prefix(' ').unwrap_or(value);
            match field {
                "event" => self.event = value.to_string(),
                "data" => self.data.push(value.to_string()),
                _ => {}
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parser_handles_split_chunks_and_comments() {
        let mut p = SseParser::default();
        assert!(p.push(b": keep-alive\n\nevent: snap").is_empty());
        assert!(p
            .push(b"shot\ndata: {\"sequence_number\":1}\r\n")
            .is_empty());
        let got = p.push(b"\r\nevent: x\ndata: a\ndata: b\n\n");
        assert_eq!(
            got,
            vec![
                (
                    "snapshot".to_string(),
                    "{\"sequence_number\":1}".to_string()
                ),
                ("x".to_string(), "a\nb".to_string()),
            ]
        );
    }

    #[test]
    fn multibyte_split_across_chunks() {
        let mut p = SseParser::default();
        let msg = "data: caf\u{e9}\n\n".as_bytes();
        assert!(p.push(&msg[..9]).is_empty());
        assert_eq!(
            p.push(&msg[9..]),
            vec![("message".to_string(), "caf\u{e9}".to_string())]
        );
    }

    #[test]
    fn api_errors_decode() {
        let e = error_for(
            StatusCode::UNPROCESSABLE_ENTITY,
            br#"{"code":"NOT_ENOUGH_DATA","message":"m"}"#,
        );
        assert!(matches!(e, ClientError::Api { status: 422, .. }));
        let e = error_for(StatusCode::BAD_GATEWAY, b"oops");
        assert!(matches!(
            e,
            ClientError::UnexpectedStatus { status: 502, .. }
        ));
    }

    #[test]
    fn base_url_must_be_http() {
        assert!(Client::new("ftp://x").is_err());
        assert!(Client::new("http://127.0.0.1:1/").is_ok());
    }
}
