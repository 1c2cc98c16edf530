use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use tokio::sync::{mpsc, watch};
use tokio::task::JoinHandle;

use super::{poll_once, IngestError, PostStore, Source, TermsProvider};

#[derive(Debug, Clone)]
pub struct PollerOptions {
    pub interval: Duration,
    /// Stop once the source reports it has nothing more (replay).
    pub stop_when_exhausted: bool,
    pub max_cycles: Option<u64>,
}

impl Default for PollerOptions {
    fn default() -> Self {
        PollerOptions {
            interval: Duration::from_secs(180),
            stop_when_exhausted: false,
            max_cycles: None,
        }
    }
}

/// What happened in one polling cycle.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CycleReport {
    pub cycle: u64,
    pub revision: Option<u64>,
    pub active_terms: Vec<String>,
    pub fetched: usize,
    pub appended: usize,
    pub malformed: usize,
    pub errors: Vec<String>,
    pub store_count: usize,
    pub exhausted: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PollerSummary {
    pub cycles: u64,
    pub appended: usize,
    pub store_count: usize,
}

#[derive(Debug, Clone)]
pub struct PollerStop(Arc<watch::Sender<bool>>);

impl PollerStop {
    pub fn stop(&self) {
        let _ = self.0.send(true);
    }
}

pub struct PollerHandle {
    stop: PollerStop,
    task: JoinHandle<Result<PollerSummary, IngestError>>,
    reports: Option<mpsc::UnboundedReceiver<CycleReport>>,
}

impl PollerHandle {
    /// Asks the loop to finish after the current cycle.
    pub fn stop(&self) {
        self.stop.stop();
    }

    /// Detached stop switch, usable after `join` has taken the handle.
    pub fn stopper(&self) -> PollerStop {
        self.stop.clone()
    }

    pub fn take_reports(&mut self) -> Option<mpsc::UnboundedReceiver<CycleReport>> {
        self.reports.take()
    }

    pub async fn join(self) -> Result<PollerSummary, IngestError> {
        self.task
            .await
            .map_err(|e| IngestError::SourceUnavailable(format!("poller task: {e}")))?
    }
}

/// Spawns the polling loop. The term set is re-read at the start of every
/// cycle so revisions apply from the next fetch on. Source errors are
/// reported and retried next cycle; a storage failure ends the loop.
pub fn run_poller(
    source: Arc<dyn Source>,
    terms: TermsProvider,
    mut store: PostStore,
    options: PollerOptions,
) -> PollerHandle {
    let (stop_tx, mut stop_rx) = watch::channel(false);
    let (report_tx, report_rx) = mpsc::unbounded_channel();
    let task = tokio::spawn(async move {
        let mut cursors = store.load_cursors()?;
        let mut cycle = 0u64;
        let mut appended_total = 0usize;
        loop {
            if *stop_rx.borrow() {
                break;
            }
            cycle += 1;
            let current = terms.current();
            let mut report = CycleReport {
                cycle,
                revision: current.as_ref().map(|t| t.revision),
                active_terms: current
                    .as_ref()
                    .map(|t| t.terms.clone())
                    .unwrap_or_default(),
                fetched: 0,
                appended: 0,
                malformed: 0,
                errors: Vec::new(),
                store_count: store.len(),
                exhausted: false,
            };
            let outcome = match &current {
                Some(t) => poll_once(source.as_ref(), t, &cursors).await,
                None => Err(IngestError::EmptyTermSet),
            };
            match outcome {
                Ok(out) => {
                    report.fetched = out.posts.len();
                    report.malformed = out.malformed.len();
                    report.exhausted = out.exhausted;
                    for m in &out.malformed {
                        tracing::warn!(line = m.line, reason = %m.reason, "malformed record skipped");
                    }
                    let stored = store
                        .dedup_append(&out.posts)
                        .and_then(|n| store.save_cursors(&out.cursors).map(|_| n));
                    match stored {
                        Ok(n) => {
                            report.appended = n;
                            appended_total += n;
                            cursors = out.cursors;
                        }
                        Err(e) => {
                            report.errors.push(e.to_string());
                            report.store_count = store.len();
                            let _ = report_tx.send(report);
                            return Err(e);
                        }
                    }
                }
                Err(e) => {
                    tracing::warn!(cycle, error = %e, "poll cycle failed");
                    report.errors.push(e.to_string());
                }
            }
            report.store_count = store.len();
            let exhausted = report.exhausted;
            let _ = report_tx.send(report);

            if options.stop_when_exhausted && exhausted {
                break;
            }
            if options.max_cycles.is_some_and(|m| cycle >= m) {
                break;
            }
            tokio::select! {
                _ = tokio::time::sleep(options.interval) => {}
                _ = stop_rx.changed() => break,
            }
        }
        Ok(PollerSummary {
            cycles: cycle,
            appended: appended_total,
            store_count: store.len(),
        })
    });
    PollerHandle {
        stop: PollerStop(Arc::new(stop_tx)),
        task,
        reports: Some(report_rx),
    }
}
