//! Real-time verb/noun correspondence analysis for short social-media posts.
//!
//! Posts are ingested into an append-only JSONL store, reduced to per-post
//! noun and verb lemma sets, cross-tabulated into a verb x noun contingency
//! table and decomposed with correspondence analysis. An analysis session
//! records every iteration so an analyst can exclude dominant terms and
//! rerun to surface weaker narratives.

pub mod api;
pub mod ca;
pub mod cooccur;
pub mod ingestion;
pub mod render;
pub mod session;
pub mod synth;
pub mod textpipe;
