//! Text preparation: tokenization, part-of-speech annotation with lemma
//! folding, and reduction of each post to its sets of noun and verb lemmas.

mod annotate;
mod tokenize;

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

pub use annotate::{
    annotate, BaselineAnnotator, FallbackAnnotator, Lexicon, PosAnnotator, SubprocessAnnotator,
    TaggerError,
};
pub use tokenize::{is_sigil_token, tokenize};

/// Coarse part-of-speech classes used by the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum PosTag {
    Noun,
    Propn,
    Verb,
    Other,
}

impl PosTag {
    /// Parses a tag name. Anything other than NOUN/PROPN/VERB collapses to
    /// `Other`, so universal tag sets (ADJ, DET, AUX, ...) are accepted.
    pub fn parse(tag: &str) -> PosTag {
        match tag.trim().to_ascii_uppercase().as_str() {
            "NOUN" => PosTag::Noun,
            "PROPN" => PosTag::Propn,
            "VERB" => PosTag::Verb,
            _ => PosTag::Other,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PosTag::Noun => "NOUN",
            PosTag::Propn => "PROPN",
            PosTag::Verb => "VERB",
            PosTag::Other => "OTHER",
        }
    }

    pub fn is_nominal(self) -> bool {
        matches!(self, PosTag::Noun | PosTag::Propn)
    }
}

impl fmt::Display for PosTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedToken {
    pub surface: String,
    pub pos: PosTag,
    pub lemma: String,
}

static STOPWORDS_SRC: &str = include_str!("stopwords.txt");
static STOPWORDS: OnceLock<HashSet<String>> = OnceLock::new();

/// The bundled English stop-word list (SMART snapshot).
pub fn stopwords() -> &'static HashSet<String> {
    STOPWORDS.get_or_init(|| {
        STOPWORDS_SRC
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::to_string)
            .collect()
    })
}

/// Stop words are fixed per build; exclusions are the analyst's per-event
/// list and may change between iterations.
#[derive(Debug, Clone)]
pub struct FilterConfig {
    stopwords: &'static HashSet<String>,
    pub exclusions: BTreeSet<String>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            stopwords: stopwords(),
            exclusions: BTreeSet::new(),
        }
    }
}

impl FilterConfig {
    pub fn with_exclusions<I, S>(exclusions: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        FilterConfig {
            stopwords: stopwords(),
            exclusions: normalize_terms(exclusions),
        }
    }

    pub fn is_filtered(&self, lemma: &str) -> bool {
        self.stopwords.contains(lemma) || self.exclusions.contains(lemma)
    }
}

/// Case-folds and trims a list of lemmas, dropping empties.
pub fn normalize_terms<I, S>(terms: I) -> BTreeSet<String>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    terms
        .into_iter()
        .map(|t| t.as_ref().trim().to_lowercase())
        .filter(|t| !t.is_empty())
        .collect()
}

/// Distinct noun and verb lemmas of one post.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PostTerms {
    pub nouns: BTreeSet<String>,
    pub verbs: BTreeSet<String>,
}

pub fn filter_relevant(tokens: &[AnnotatedToken], cfg: &FilterConfig) -> PostTerms {
    let mut out = PostTerms::default();
    for tok in tokens {
        if cfg.is_filtered(&tok.lemma) {
            continue;
        }
        match tok.pos {
            PosTag::Noun | PosTag::Propn => {
                out.nouns.insert(tok.lemma.clone());
            }
            PosTag::Verb => {
                out.verbs.insert(tok.lemma.clone());
            }
            PosTag::Other => {}
        }
    }
    out
}

/// tokenize -> annotate -> filter_relevant for one post text.
pub fn process_text(
    text: &str,
    tagger: &dyn PosAnnotator,
    cfg: &FilterConfig,
) -> Result<PostTerms, TaggerError> {
    let tokens = tokenize(text);
    let annotated = annotate(&tokens, tagger)?;
    Ok(filter_relevant(&annotated, cfg))
}
