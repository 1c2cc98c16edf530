//! Seeded synthetic post streams with planted verb/noun narratives.
//!
//! Each post is one template sentence carrying exactly one noun and one verb
//! plus the scenario hashtag. Planted pairs get an exact number of posts
//! inside their active window; all other posts draw noun and verb
//! independently from weighted background vocabularies.

use std::collections::{BTreeSet, HashSet};
use std::path::Path;

use chrono::{DateTime, Duration, Utc};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingestion::{utc_seconds, Post};
use crate::textpipe::{process_text, stopwords, BaselineAnnotator, FilterConfig};

pub const GENERATOR_ID: &str = "chacha8/rand_chacha-0.9";

/// Sentence frames. Filler words are all stop words, and every verb slot
/// follows a modal, "to" or "never" so the baseline tagger reads it as a verb.
pub const TEMPLATES: [&str; 8] = [
    "{noun} must {verb} now",
    "{noun} will {verb} again",
    "I think {noun} should {verb}",
    "they say {noun} can't {verb}",
    "{noun} would never {verb} here",
    "nobody wants {noun} to {verb}",
    "so {noun} will {verb} soon",
    "maybe {noun} could {verb} again",
];

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid scenario: {0}")]
    InvalidSpec(String),
    #[error("io: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightedTerm {
    pub lemma: String,
    #[serde(default = "one")]
    pub weight: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackgroundVocab {
    pub nouns: Vec<WeightedTerm>,
    pub verbs: Vec<WeightedTerm>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantedPair {
    pub verb: String,
    pub noun: String,
    pub rate: f64,
    #[serde(default)]
    pub start_fraction: f64,
    #[serde(default = "one")]
    pub end_fraction: f64,
}

impl PlantedPair {
    /// Number of posts carrying this pair: ceil(rate * n * (end - start)).
    pub fn post_count(&self, n: usize) -> usize {
        let x = self.rate * n as f64 * (self.end_fraction - self.start_fraction);
        // guard against 0.2 * 1000 landing a hair above 200
        (x - 1e-9).ceil().max(0.0) as usize
    }

    fn window(&self, n: usize) -> (usize, usize) {
        let lo = (self.start_fraction * n as f64).round() as usize;
        let hi = (self.end_fraction * n as f64).round() as usize;
        (lo.min(n), hi.min(n))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub seed: u64,
    pub post_count: usize,
    /// Search term appended to every post so it satisfies the matching rule.
    pub hashtag: String,
    #[serde(with = "utc_seconds")]
    pub start: DateTime<Utc>,
    #[serde(with = "utc_seconds")]
    pub end: DateTime<Utc>,
    pub background: BackgroundVocab,
    #[serde(default)]
    pub planted: Vec<PlantedPair>,
}

impl ScenarioSpec {
    pub fn from_json(src: &str) -> Result<Self, SynthError> {
        serde_json::from_str(src).map_err(|e| SynthError::InvalidSpec(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SynthError> {
        let path = path.as_ref();
        let src = std::fs::read_to_string(path)
            .map_err(|e| SynthError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&src)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        if self.post_count == 0 {
            return bad("post_count must be positive".into());
        }
        if self.end < self.start {
            return bad("end precedes start".into());
        }
        if !crate::textpipe::is_sigil_token(&self.hashtag) {
            return bad(format!(
                "hashtag {:?} must be a #tag or @handle",
                self.hashtag
            ));
        }
        let bg = &self.background;
        if bg.nouns.is_empty() || bg.verbs.is_empty() {
            return bad("background vocabulary needs nouns and verbs".into());
        }
        for t in bg.nouns.iter().chain(&bg.verbs) {
            if !(t.weight.is_finite() && t.weight > 0.0) {
                return bad(format!("weight of {:?} must be positive", t.lemma));
            }
        }
        for p in &self.planted {
            if !(p.rate > 0.0 && p.rate <= 1.0) {
                return bad(format!(
                    "rate {} of ({}, {}) outside (0, 1]",
                    p.rate, p.verb, p.noun
                ));
            }
            if !(0.0 <= p.start_fraction
                && p.start_fraction < p.end_fraction
                && p.end_fraction <= 1.0)
            {
                return bad(format!(
                    "window [{}, {}] of ({}, {}) is not a sub-range of [0, 1]",
                    p.start_fraction, p.end_fraction, p.verb, p.noun
                ));
            }
            let (lo, hi) = p.window(self.post_count);
            if p.post_count(self.post_count) > hi - lo {
                return bad(format!(
                    "({}, {}) needs more posts than its window holds",
                    p.verb, p.noun
                ));
            }
        }
        let mut planted = HashSet::new();
        for p in &self.planted {
            if !planted.insert((p.verb.as_str(), p.noun.as_str())) {
                return bad(format!("({}, {}) planted twice", p.verb, p.noun));
            }
        }

        let nouns: BTreeSet<&str> = bg
            .nouns
            .iter()
            .map(|t| t.lemma.as_str())
            .chain(self.planted.iter().map(|p| p.noun.as_str()))
            .collect();
        let verbs: BTreeSet<&str> = bg
            .verbs
            .iter()
            .map(|t| t.lemma.as_str())
            .chain(self.planted.iter().map(|p| p.verb.as_str()))
            .collect();
        for w in nouns.iter().chain(&verbs) {
            if stopwords().contains(*w) {
                return bad(format!("{w:?} is a stop word"));
            }
        }
        check_tagging(&nouns, &verbs).map_err(SynthError::InvalidSpec)
    }
}

// Every vocabulary word must come back out of the baseline tagger as itself
// in every template slot it can occupy.
fn check_tagging(nouns: &BTreeSet<&str>, verbs: &BTreeSet<&str>) -> Result<(), String> {
    let tagger = BaselineAnnotator::bundled();
    let cfg = FilterConfig::default();
    let probe_noun = nouns.first().copied().unwrap_or_default();
    let probe_verb = verbs.first().copied().unwrap_or_default();
    let check = |noun: &str, verb: &str| -> Result<(), String> {
        for tpl in TEMPLATES {
            let text = fill(tpl, noun, verb);
            let t = process_text(&text, &tagger, &cfg).map_err(|e| e.to_string())?;
            let want_n: BTreeSet<String> = [noun.to_string()].into();
            let want_v: BTreeSet<String> = [verb.to_string()].into();
            if t.nouns != want_n || t.verbs != want_v {
                return Err(format!(
                    "{text:?} tags as nouns {:?} verbs {:?}; the bundled lexicon cannot carry ({verb}, {noun})",
                    t.nouns, t.verbs
                ));
            }
        }
        Ok(())
    };
    for n in nouns {
        check(n, probe_verb)?;
    }
    for v in verbs {
        check(probe_noun, v)?;
    }
    Ok(())
}

fn fill(template: &str, noun: &str, verb: &str) -> String {
    template.replace("{noun}", noun).replace("{verb}", verb)
}

/// Generates the scenario's posts in id order.
pub fn generate(spec: &ScenarioSpec) -> Result<Vec<Post>, SynthError> {
    spec.validate()?;
    let n = spec.post_count;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    // slot -> planted pair index
    let mut assigned: Vec<Option<usize>> = vec![None; n];
    for (pi, p) in spec.planted.iter().enumerate() {
        let (lo, hi) = p.window(n);
        let free: Vec<usize> = (lo..hi).filter(|&i| assigned[i].is_none()).collect();
        let want = p.post_count(n);
        if want > free.len() {
            return Err(SynthError::InvalidSpec(format!(
                "({}, {}) overlaps other planted pairs; only {} free posts in its window",
                p.verb,
                p.noun,
                free.len()
            )));
        }
        for k in rand::seq::index::sample(&mut rng, free.len(), want) {
            assigned[free[k]] = Some(pi);
        }
    }

    let noun_dist = weighted(&spec.background.nouns)?;
    let verb_dist = weighted(&spec.background.verbs)?;
    let planted: HashSet<(&str, &str)> = spec
        .planted
        .iter()
        .map(|p| (p.verb.as_str(), p.noun.as_str()))
        .collect();
    let span = (spec.end - spec.start).num_seconds().max(0);

    let mut posts = Vec::with_capacity(n);
    for (i, slot) in assigned.iter().enumerate() {
        let (verb, noun) = match slot {
            Some(pi) => (
                spec.planted[*pi].verb.as_str(),
                spec.planted[*pi].noun.as_str(),
            ),
            None => loop {
                let v = spec.background.verbs[verb_dist.sample(&mut rng)]
                    .lemma
                    .as_str();
                let nn = spec.background.nouns[noun_dist.sample(&mut rng)]
                    .lemma
                    .as_str();
                if !planted.contains(&(v, nn)) {
                    break (v, nn);
                }
            },
        };
        let template = TEMPLATES[rand::Rng::random_range(&mut rng, 0..TEMPLATES.len())];
        let offset = span * i as i64 / n as i64;
        posts.push(Post {
            id: format!("synth-{}-{i:06}", spec.seed),
            created_at: spec.start + Duration::seconds(offset),
            text: format!("{} {}", fill(template, noun, verb), spec.hashtag),
            matched_terms: vec![spec.hashtag.clone()],
            source: "replay".into(),
        });
    }
    Ok(posts)
}

fn weighted(terms: &[WeightedTerm]) -> Result<WeightedIndex<f64>, SynthError> {
    WeightedIndex::new(terms.iter().map(|t| t.weight))
        .map_err(|e| SynthError::InvalidSpec(format!("weights: {e}")))
}

/// Regeneration metadata written next to the output as `<out>.meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthMeta {
    pub generator: String,
    pub seed: u64,
    pub post_count: usize,
    pub scenario: ScenarioSpec,
}

/// Writes posts as JSONL plus the metadata sidecar.
pub fn write_output(spec: &ScenarioSpec, posts: &[Post], out: &Path) -> Result<(), SynthError> {
    let io = |e: std::io::Error| SynthError::Io(format!("{}: {e}", out.display()));
    let body: String = posts.iter().map(Post::to_json_line).collect();
    std::fs::write(out, body).map_err(io)?;
    let meta = SynthMeta {
        generator: GENERATOR_ID.into(),
        seed: spec.seed,
        post_count: posts.len(),
        scenario: spec.clone(),
    };
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    let mut json = serde_json::to_string_pretty(&meta).expect("meta serializes");
    json.push('\n');
    std::fs::write(out.with_file_name(name), json).map_err(io)
}

/// The shipped single-narrative scenario: ("lie", "trump") planted in 20% of
/// 1000 posts over a 20 x 20 background.
pub fn planted_scenario() -> ScenarioSpec {
    ScenarioSpec {
        seed: 7,
        post_count: 1000,
        hashtag: "#debate".into(),
        start: "2020-10-22T21:00:00Z".parse().expect("timestamp"),
        end: "2020-10-22T22:30:00Z".parse().expect("timestamp"),
        background: default_background(),
        planted: vec![PlantedPair {
            verb: "lie".into(),
            noun: "trump".into(),
            rate: 0.2,
            start_fraction: 0.0,
            end_fraction: 1.0,
        }],
    }
}

/// Strong ("build", "cage") plus weaker ("lie", "trump") narrative.
pub fn two_narrative_scenario() -> ScenarioSpec {
    let mut spec = planted_scenario();
    spec.seed = 11;
    spec.planted = vec![
        PlantedPair {
            verb: "build".into(),
            noun: "cage".into(),
            rate: 0.25,
            start_fraction: 0.0,
            end_fraction: 1.0,
        },
        PlantedPair {
            verb: "lie".into(),
            noun: "trump".into(),
            rate: 0.12,
            start_fraction: 0.0,
            end_fraction: 1.0,
        },
    ];
    spec
}

fn default_background() -> BackgroundVocab {
    let terms = |words: &[&str]| {
        words
            .iter()
            .map(|w| WeightedTerm {
                lemma: w.to_string(),
                weight: 1.0,
            })
            .collect()
    };
    BackgroundVocab {
        nouns: terms(&[
            "biden", "pence", "harris", "china", "iran", "russia", "border", "wall", "economy",
            "virus", "vaccine", "police", "court", "ballot", "election", "fraud", "media",
            "military", "church", "history",
        ]),
        verbs: terms(&[
            "win", "lose", "steal", "count", "attack", "blame", "fear", "hide", "destroy", "cheat",
            "fight", "ban", "protect", "deport", "fund", "accuse", "deny", "claim", "support",
            "oppose",
        ]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn count_pair(posts: &[Post], verb: &str, noun: &str) -> usize {
        let tagger = BaselineAnnotator::bundled();
        let cfg = FilterConfig::default();
        posts
            .iter()
            .filter(|p| {
                let t = process_text(&p.text, &tagger, &cfg).unwrap();
                t.verbs.contains(verb) && t.nouns.contains(noun)
            })
            .count()
    }

    #[test]
    fn planted_pair_count_is_exact() {
        let posts = generate(&planted_scenario()).unwrap();
        assert_eq!(posts.len(), 1000);
        assert_eq!(count_pair(&posts, "lie", "trump"), 200);
    }

    #[test]
    fn same_seed_same_bytes() {
        let a: String = generate(&planted_scenario())
            .unwrap()
            .iter()
            .map(Post::to_json_line)
            .collect();
        let b: String = generate(&planted_scenario())
            .unwrap()
            .iter()
            .map(Post::to_json_line)
            .collect();
        assert_eq!(a, b);
        let mut other = planted_scenario();
        other.seed = 8;
        let c: String = generate(&other)
            .unwrap()
            .iter()
            .map(Post::to_json_line)
            .collect();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_rate_is_invalid() {
        let mut spec = planted_scenario();
        spec.planted[0].rate = 0.0;
        assert!(matches!(generate(&spec), Err(SynthError::InvalidSpec(_))));
    }

    #[test]
    fn windows_are_respected() {
        let mut spec = planted_scenario();
        spec.planted[0].start_fraction = 0.5;
        spec.planted[0].rate = 0.4;
        let posts = generate(&spec).unwrap();
        assert_eq!(count_pair(&posts[..500], "lie", "trump"), 0);
        assert_eq!(count_pair(&posts[500..], "lie", "trump"), 200);
    }

    #[test]
    fn stop_words_and_unknown_tagging_rejected() {
        let mut spec = planted_scenario();
        spec.background.nouns[0].lemma = "they".into();
        assert!(spec.validate().is_err());
        let mut spec = planted_scenario();
        spec.background.verbs[0].lemma = "quux".into();
        assert!(spec.validate().is_err());
    }

    #[test]
    fn every_post_matches_its_hashtag() {
        for p in generate(&two_narrative_scenario()).unwrap() {
            assert!(crate::ingestion::term_matches(&p.matched_terms[0], &p.text));
        }
    }

    #[test]
    fn spec_json_round_trip() {
        let spec = two_narrative_scenario();
        let json = serde_json::to_string(&spec).unwrap();
        assert_eq!(ScenarioSpec::from_json(&json).unwrap(), spec);
        assert!(ScenarioSpec::from_json(r#"{"seed":1,"bogus":true}"#).is_err());
    }
}
