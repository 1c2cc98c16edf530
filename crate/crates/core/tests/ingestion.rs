mod common;

use std::collections::HashSet;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use async_trait::async_trait;
use common::fixture;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trollhunter_core::ingestion::{
    parse_timestamp, poll_once, run_poller, scan_store, term_matches, Cursors, FetchOutcome,
    HttpSource, IngestError, LiveConfig, PollerOptions, Post, PostStore, RawRecord, ReplaySource,
    SearchTermSet, Source, TermsProvider,
};

fn vp_terms() -> SearchTermSet {
    SearchTermSet::new("vp", ["#VPDebate", "fly", "china"]).unwrap()
}

fn fast() -> PollerOptions {
    PollerOptions {
        interval: Duration::ZERO,
        stop_when_exhausted: true,
        max_cycles: Some(1000),
    }
}

async fn replay_into(store_path: &std::path::Path, page: Option<usize>) -> usize {
    let src =
        Arc::new(ReplaySource::new(fixture("replay/vp_debate_100.jsonl")).with_page_size(page));
    let store = PostStore::open(store_path).unwrap();
    let handle = run_poller(src, TermsProvider::new(vp_terms()), store, fast());
    handle.join().await.unwrap().store_count
}

#[tokio::test]
async fn poller_drains_replay_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.jsonl");
    assert_eq!(replay_into(&path, Some(7)).await, 74);
    let posts = scan_store(&path).unwrap();
    let ids: HashSet<&str> = posts.iter().map(|p| p.id.as_str()).collect();
    assert_eq!(ids.len(), posts.len());
    for p in &posts {
        assert!(!p.matched_terms.is_empty());
        assert!(!p.text.trim().is_empty());
        for t in &p.matched_terms {
            assert!(term_matches(t, &p.text), "{t:?} vs {:?}", p.text);
        }
    }
}

#[tokio::test]
async fn replay_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    replay_into(&a, Some(10)).await;
    replay_into(&b, None).await;
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[tokio::test]
async fn second_poll_on_unchanged_file_is_empty() {
    let src = ReplaySource::new(fixture("replay/vp_debate_100.jsonl"));
    let first = poll_once(&src, &vp_terms(), &Cursors::new()).await.unwrap();
    assert_eq!(first.malformed.len(), 5);
    let second = poll_once(&src, &vp_terms(), &first.cursors).await.unwrap();
    assert!(second.posts.is_empty());
}

#[tokio::test]
async fn three_line_file_two_fly_posts() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("three.jsonl");
    std::fs::write(
        &path,
        concat!(
            "{\"id\":\"1\",\"created_at\":\"2020-10-07T21:14:03Z\",\"text\":\"a fly on his head\"}\n",
            "{\"id\":\"2\",\"created_at\":\"2020-10-07T21:14:04Z\",\"text\":\"FLY!!\"}\n",
            "{\"id\":\"3\",\"created_at\":\"2020-10-07T21:14:05Z\",\"text\":\"flies everywhere\"}\n",
        ),
    )
    .unwrap();
    let terms = SearchTermSet::new("vp", ["fly"]).unwrap();
    let out = poll_once(&ReplaySource::new(&path), &terms, &Cursors::new())
        .await
        .unwrap();
    assert_eq!(out.posts.len(), 2);
    assert!(out
        .posts
        .iter()
        .all(|p| p.matched_terms.contains(&"fly".to_string())));
}

/// Serves a fixed list of records; fails on chosen fetch numbers.
struct ScriptedSource {
    records: Vec<RawRecord>,
    fail_on: HashSet<usize>,
    calls: AtomicUsize,
    seen_terms: Mutex<Vec<Vec<String>>>,
}

#[async_trait]
impl Source for ScriptedSource {
    fn kind(&self) -> &'static str {
        "live"
    }

    async fn fetch(
        &self,
        terms: &[String],
        cursors: &Cursors,
    ) -> Result<FetchOutcome, IngestError> {
        let call = self.calls.fetch_add(1, Ordering::SeqCst) + 1;
        self.seen_terms.lock().unwrap().push(terms.to_vec());
        if self.fail_on.contains(&call) {
            return Err(IngestError::SourceUnavailable("scripted outage".into()));
        }
        let pos: usize = cursors
            .values()
            .filter_map(|c| c.parse().ok())
            .max()
            .unwrap_or(0);
        let end = (pos + 2).min(self.records.len());
        let mut out = FetchOutcome {
            records: self.records[pos..end].to_vec(),
            exhausted: end == self.records.len(),
            ..Default::default()
        };
        for t in terms {
            out.cursors.insert(t.clone(), end.to_string());
        }
        Ok(out)
    }
}

fn raw(id: &str, text: &str) -> RawRecord {
    RawRecord {
        id: id.into(),
        created_at: parse_timestamp("2020-10-07T21:00:00Z").unwrap(),
        text: text.into(),
    }
}

#[tokio::test]
async fn outage_is_reported_and_next_cycle_proceeds() {
    let src = Arc::new(ScriptedSource {
        records: vec![
            raw("1", "china"),
            raw("2", "china"),
            raw("3", "china"),
            raw("4", "china"),
        ],
        fail_on: [2].into(),
        calls: AtomicUsize::new(0),
        seen_terms: Mutex::new(Vec::new()),
    });
    let dir = tempfile::tempdir().unwrap();
    let store = PostStore::open(dir.path().join("s.jsonl")).unwrap();
    let terms = TermsProvider::new(SearchTermSet::new("e", ["china"]).unwrap());
    let mut handle = run_poller(src, terms, store, fast());
    let mut reports = handle.take_reports().unwrap();
    let summary = handle.join().await.unwrap();
    assert_eq!(summary.store_count, 4);
    let mut all = Vec::new();
    while let Ok(r) = reports.try_recv() {
        all.push(r);
    }
    assert_eq!(all.len(), 3);
    assert!(all[1].errors[0].contains("source unavailable"));
    assert_eq!(all[1].appended, 0);
    assert_eq!(all[2].appended, 2);
}

#[tokio::test]
async fn revised_terms_apply_next_cycle() {
    let src = Arc::new(ScriptedSource {
        records: vec![
            raw("1", "china"),
            raw("2", "a fly"),
            raw("3", "fly again"),
            raw("4", "the fly"),
        ],
        fail_on: HashSet::new(),
        calls: AtomicUsize::new(0),
        seen_terms: Mutex::new(Vec::new()),
    });
    let dir = tempfile::tempdir().unwrap();
    let store = PostStore::open(dir.path().join("s.jsonl")).unwrap();
    let terms = TermsProvider::new(SearchTermSet::new("e", ["china"]).unwrap());
    let opts = PollerOptions {
        interval: Duration::from_millis(50),
        stop_when_exhausted: true,
        max_cycles: Some(10),
    };
    let mut handle = run_poller(src.clone(), terms.clone(), store, opts);
    let mut reports = handle.take_reports().unwrap();
    let first = reports.recv().await.unwrap();
    assert_eq!(first.active_terms, vec!["china".to_string()]);
    assert_eq!(first.appended, 1); // "a fly" is not matched yet
    terms.revise("e", &["fly".into()], &[]).unwrap();
    let second = reports.recv().await.unwrap();
    assert_eq!(second.revision, Some(2));
    assert!(second.active_terms.contains(&"fly".to_string()));
    assert_eq!(second.appended, 2);
    handle.join().await.unwrap();
    let stored = scan_store(dir.path().join("s.jsonl")).unwrap();
    assert_eq!(stored[0].matched_terms, vec!["china".to_string()]);
    assert_eq!(stored.len(), 3);
}

#[tokio::test]
async fn stop_ends_a_waiting_poller() {
    let src = Arc::new(ScriptedSource {
        records: vec![raw("1", "china")],
        fail_on: HashSet::new(),
        calls: AtomicUsize::new(0),
        seen_terms: Mutex::new(Vec::new()),
    });
    let dir = tempfile::tempdir().unwrap();
    let store = PostStore::open(dir.path().join("s.jsonl")).unwrap();
    let terms = TermsProvider::new(SearchTermSet::new("e", ["china"]).unwrap());
    let handle = run_poller(src, terms, store, PollerOptions::default());
    tokio::time::sleep(Duration::from_millis(50)).await;
    handle.stop();
    let summary = tokio::time::timeout(Duration::from_secs(2), handle.join())
        .await
        .expect("poller stops promptly")
        .unwrap();
    assert_eq!(summary.cycles, 1);
}

#[tokio::test]
async fn live_source_against_local_endpoint() {
    use axum::extract::Query;
    use axum::http::HeaderMap;
    use axum::routing::get;
    use std::collections::HashMap;

    async fn search(
        headers: HeaderMap,
        Query(q): Query<HashMap<String, String>>,
    ) -> axum::response::Response {
        use axum::response::IntoResponse;
        if headers.get("authorization").and_then(|v| v.to_str().ok()) != Some("Bearer sekrit") {
            return (axum::http::StatusCode::UNAUTHORIZED, "no").into_response();
        }
        let after: usize = q.get("after").and_then(|s| s.parse().ok()).unwrap_or(0);
        let term = q.get("q").cloned().unwrap_or_default();
        let body: Vec<serde_json::Value> = (after + 1..=(after + 2).min(3))
            .map(|i| {
                serde_json::json!({
                    "id": i.to_string(),
                    "created_at": format!("2020-10-07T21:00:0{i}Z"),
                    "text": format!("post {i} about {term}"),
                })
            })
            .collect();
        axum::Json(body).into_response()
    }

    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move {
        axum::serve(listener, axum::Router::new().route("/search", get(search)))
            .await
            .unwrap()
    });

    std::env::set_var("TROLLHUNTER_TEST_TOKEN", "sekrit");
    let src = HttpSource::new(LiveConfig {
        endpoint_url_template: format!(
            "http://{addr}/search?q={{term}}&after={{cursor}}&n={{page_size}}"
        ),
        auth_token_env: Some("TROLLHUNTER_TEST_TOKEN".into()),
        page_size: 2,
    })
    .unwrap();
    let terms = SearchTermSet::new("e", ["#debate"]).unwrap();
    let first = poll_once(&src, &terms, &Cursors::new()).await.unwrap();
    assert_eq!(first.posts.len(), 2);
    assert_eq!(first.posts[0].source, "live");
    assert_eq!(first.cursors.get("#debate").map(String::as_str), Some("2"));
    let second = poll_once(&src, &terms, &first.cursors).await.unwrap();
    assert_eq!(second.posts.len(), 1);
    assert_eq!(second.posts[0].id, "3");

    let down = HttpSource::new(LiveConfig {
        endpoint_url_template: "http://127.0.0.1:9/search?q={term}".into(),
        auth_token_env: None,
        page_size: 2,
    })
    .unwrap();
    let err = poll_once(&down, &terms, &Cursors::new()).await.unwrap_err();
    assert!(matches!(err, IngestError::SourceUnavailable(_)));
}

fn random_posts(seed: u64, n: usize) -> Vec<Post> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| Post {
            // ids drawn from a space smaller than n so duplicates occur
            id: format!("p{}", rng.random_range(0..(n * 3 / 4).max(1))),
            created_at: parse_timestamp("2020-11-04T00:00:00Z").unwrap(),
            text: format!("count every vote {i}"),
            matched_terms: vec!["vote".into()],
            source: "replay".into(),
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn dedup_append_is_idempotent_under_shuffle(seed in any::<u64>()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.jsonl");
        let posts = random_posts(seed, 1000);
        let unique: HashSet<&str> = posts.iter().map(|p| p.id.as_str()).collect();
        let mut store = PostStore::open(&path).unwrap();
        let appended = store.dedup_append(&posts).unwrap();
        prop_assert_eq!(appended, unique.len());

        let mut shuffled = posts.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 1));
        prop_assert_eq!(store.dedup_append(&shuffled).unwrap(), 0);
        prop_assert_eq!(store.len(), unique.len());
        drop(store);
        let reopened = PostStore::open(&path).unwrap();
        prop_assert_eq!(reopened.len(), unique.len());
        prop_assert_eq!(scan_store(&path).unwrap().len(), unique.len());
    }
}
