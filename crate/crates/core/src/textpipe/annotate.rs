use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::{Arc, Mutex, OnceLock};

use thiserror::Error;

use super::{is_sigil_token, AnnotatedToken, PosTag};

#[derive(Debug, Error)]
pub enum TaggerError {
    #[error("tagger failure: {0}")]
    TaggerFailure(String),
    #[error("lexicon line {line}: {message}")]
    Lexicon { line: usize, message: String },
}

/// Assigns a part of speech and a lemma to every token of one post.
///
/// Implementations receive the whole token sequence so they can use
/// context; they must return exactly one `(pos, lemma)` per token.
pub trait PosAnnotator: Send + Sync {
    fn tag(&self, tokens: &[String]) -> Result<Vec<(PosTag, String)>, TaggerError>;

    fn name(&self) -> &str;
}

/// Runs `tagger` over `tokens`. Hashtags and handles are forced to PROPN
/// with their case-folded surface (sigil kept) as lemma.
pub fn annotate(
    tokens: &[String],
    tagger: &dyn PosAnnotator,
) -> Result<Vec<AnnotatedToken>, TaggerError> {
    let tags = tagger.tag(tokens)?;
    if tags.len() != tokens.len() {
        return Err(TaggerError::TaggerFailure(format!(
            "{} returned {} tags for {} tokens",
            tagger.name(),
            tags.len(),
            tokens.len()
        )));
    }
    tokens
        .iter()
        .zip(tags)
        .map(|(surface, (pos, lemma))| {
            if is_sigil_token(surface) {
                return Ok(AnnotatedToken {
                    surface: surface.clone(),
                    pos: PosTag::Propn,
                    lemma: surface.to_lowercase(),
                });
            }
            if lemma.is_empty() || lemma.chars().any(char::is_whitespace) {
                return Err(TaggerError::TaggerFailure(format!(
                    "invalid lemma {lemma:?} for {surface:?}"
                )));
            }
            Ok(AnnotatedToken {
                surface: surface.clone(),
                pos,
                lemma: lemma.to_lowercase(),
            })
        })
        .collect()
}

/// Word -> readings table. A surface may have several readings; file order
/// is preserved and the first one is the default.
#[derive(Debug, Clone, Default)]
pub struct Lexicon {
    entries: HashMap<String, Vec<(PosTag, String)>>,
}

static BUNDLED_SRC: &str = include_str!("lexicon.tsv");
static BUNDLED: OnceLock<Arc<Lexicon>> = OnceLock::new();

impl Lexicon {
    /// Parses `surface<TAB>pos<TAB>lemma` rows. Blank lines and `#` comments
    /// are skipped. A repeated (surface, pos) pair keeps the first row.
    pub fn parse_tsv(src: &str) -> Result<Lexicon, TaggerError> {
        let mut lex = Lexicon::default();
        for (idx, raw) in src.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with("#\t") || line == "#" {
                continue;
            }
            let mut cols = line.split('\t');
            let (Some(surface), Some(pos), Some(lemma), None) =
                (cols.next(), cols.next(), cols.next(), cols.next())
            else {
                return Err(TaggerError::Lexicon {
                    line: idx + 1,
                    message: "expected three tab-separated columns".into(),
                });
            };
            let surface = surface.trim().to_lowercase();
            let lemma = lemma.trim().to_lowercase();
            if surface.is_empty() || lemma.is_empty() || lemma.contains(char::is_whitespace) {
                return Err(TaggerError::Lexicon {
                    line: idx + 1,
                    message: "empty surface or malformed lemma".into(),
                });
            }
            let pos = PosTag::parse(pos);
            let readings = lex.entries.entry(surface).or_default();
            if !readings.iter().any(|(p, _)| *p == pos) {
                readings.push((pos, lemma));
            }
        }
        Ok(lex)
    }

    pub fn bundled() -> Arc<Lexicon> {
        BUNDLED
            .get_or_init(|| {
                Arc::new(Lexicon::parse_tsv(BUNDLED_SRC).expect("bundled lexicon is well formed"))
            })
            .clone()
    }

    pub fn readings(&self, surface: &str) -> Option<&[(PosTag, String)]> {
        self.entries.get(surface).map(Vec::as_slice)
    }

    pub fn contains(&self, surface: &str) -> bool {
        self.entries.contains_key(surface)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

const VERB_CONTEXT: &[&str] = &[
    "will",
    "would",
    "shall",
    "should",
    "can",
    "could",
    "may",
    "might",
    "must",
    "to",
    "not",
    "never",
    "always",
    "didn't",
    "don't",
    "doesn't",
    "can't",
    "won't",
    "wouldn't",
    "shouldn't",
    "couldn't",
    "i",
    "we",
    "they",
    "you",
];

const NOUN_CONTEXT: &[&str] = &[
    "a", "an", "the", "this", "that", "these", "those", "my", "your", "his", "her", "its", "our",
    "their", "every", "each", "no", "some", "any",
];

#[derive(Clone, Copy, PartialEq)]
enum Preference {
    Verb,
    Noun,
    None,
}

/// Lexicon lookup with suffix rules and a one-token context rule.
#[derive(Debug, Clone)]
pub struct BaselineAnnotator {
    lexicon: Arc<Lexicon>,
}

impl Default for BaselineAnnotator {
    fn default() -> Self {
        Self::bundled()
    }
}

impl BaselineAnnotator {
    pub fn bundled() -> Self {
        BaselineAnnotator {
            lexicon: Lexicon::bundled(),
        }
    }

    pub fn with_lexicon(lexicon: Lexicon) -> Self {
        BaselineAnnotator {
            lexicon: Arc::new(lexicon),
        }
    }

    pub fn lexicon(&self) -> &Lexicon {
        &self.lexicon
    }

    fn tag_one(&self, surface: &str, prev: Option<&str>) -> (PosTag, String) {
        let folded = fold(surface);
        if folded.chars().all(|c| !c.is_alphabetic()) {
            return (PosTag::Other, folded);
        }
        let pref = match prev {
            Some(p) if VERB_CONTEXT.contains(&p) => Preference::Verb,
            Some(p) if NOUN_CONTEXT.contains(&p) => Preference::Noun,
            _ => Preference::None,
        };
        if let Some(readings) = self.lexicon.readings(&folded) {
            return choose(readings, pref).clone();
        }
        for (candidate, verbal) in suffix_candidates(&folded) {
            let Some(readings) = self.lexicon.readings(&candidate) else {
                continue;
            };
            let content: Vec<(PosTag, String)> = readings
                .iter()
                .filter(|(p, _)| *p != PosTag::Other)
                .cloned()
                .collect();
            if verbal {
                if let Some(r) = content.iter().find(|(p, _)| *p == PosTag::Verb) {
                    return r.clone();
                }
            } else if !content.is_empty() {
                return choose(&content, pref).clone();
            }
        }
        unknown_word(&folded)
    }
}

impl PosAnnotator for BaselineAnnotator {
    fn tag(&self, tokens: &[String]) -> Result<Vec<(PosTag, String)>, TaggerError> {
        let mut out = Vec::with_capacity(tokens.len());
        let mut prev: Option<String> = None;
        for tok in tokens {
            out.push(self.tag_one(tok, prev.as_deref()));
            prev = Some(fold(tok));
        }
        Ok(out)
    }

    fn name(&self) -> &str {
        "baseline"
    }
}

fn choose(readings: &[(PosTag, String)], pref: Preference) -> &(PosTag, String) {
    let preferred = match pref {
        Preference::Verb => readings.iter().find(|(p, _)| *p == PosTag::Verb),
        Preference::Noun => readings.iter().find(|(p, _)| p.is_nominal()),
        Preference::None => None,
    };
    preferred.unwrap_or(&readings[0])
}

/// Lower-cases, normalizes curly apostrophes and strips a possessive `'s`.
fn fold(surface: &str) -> String {
    let mut s = surface.to_lowercase().replace('\u{2019}', "'");
    if s.len() > 2 && s.ends_with("'s") {
        s.truncate(s.len() - 2);
    }
    s
}

fn is_vowel(c: char) -> bool {
    matches!(c, 'a' | 'e' | 'i' | 'o' | 'u')
}

fn undouble(stem: &str) -> Option<String> {
    let chars: Vec<char> = stem.chars().collect();
    let n = chars.len();
    if n >= 3 && chars[n - 1] == chars[n - 2] && !is_vowel(chars[n - 1]) {
        Some(chars[..n - 1].iter().collect())
    } else {
        None
    }
}

/// Candidate base forms in priority order; `true` marks a verbal suffix.
fn suffix_candidates(word: &str) -> Vec<(String, bool)> {
    let mut out = Vec::new();
    let n = word.chars().count();
    let strip = |k: usize| -> String { word.chars().take(n - k).collect() };
    if n > 4 && word.ends_with("ies") {
        out.push((format!("{}y", strip(3)), false));
        out.push((format!("{}ie", strip(3)), false));
    }
    if n > 4 && word.ends_with("ied") {
        out.push((format!("{}y", strip(3)), true));
        out.push((format!("{}ie", strip(3)), true));
    }
    if n > 4 && word.ends_with("ying") {
        out.push((format!("{}ie", strip(4)), true));
    }
    if n > 4 && word.ends_with("ing") {
        let stem = strip(3);
        out.push((stem.clone(), true));
        out.push((format!("{stem}e"), true));
        if let Some(u) = undouble(&stem) {
            out.push((u, true));
        }
    }
    if n > 3 && word.ends_with("ed") {
        let stem = strip(2);
        out.push((strip(1), true));
        if let Some(u) = undouble(&stem) {
            out.push((u, true));
        }
        out.push((stem, true));
    }
    if n > 3 && word.ends_with("es") {
        out.push((strip(2), false));
    }
    if n > 2 && word.ends_with('s') && !word.ends_with("ss") {
        out.push((strip(1), false));
    }
    out
}

fn unknown_word(word: &str) -> (PosTag, String) {
    let n = word.chars().count();
    let strip = |k: usize| -> String { word.chars().take(n - k).collect() };
    for (suffix, len) in [("ing", 3), ("ed", 2)] {
        if word.ends_with(suffix) && n >= len + 3 {
            let stem = strip(len);
            return (PosTag::Verb, undouble(&stem).unwrap_or(stem));
        }
    }
    (PosTag::Noun, singular(word))
}

fn singular(word: &str) -> String {
    let n = word.chars().count();
    let strip = |k: usize| -> String { word.chars().take(n - k).collect() };
    if n > 4 && word.ends_with("ies") {
        format!("{}y", strip(3))
    } else if word.ends_with("sses")
        || (n > 4
            && ["ches", "shes", "xes", "zes"]
                .iter()
                .any(|s| word.ends_with(s)))
    {
        strip(2)
    } else if n > 3 && word.ends_with('s') && !["ss", "us", "is"].iter().any(|s| word.ends_with(s))
    {
        strip(1)
    } else {
        word.to_string()
    }
}

struct TaggerProcess {
    _child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

/// External tagger speaking a line protocol: one token per stdin line,
/// one `POS<TAB>lemma` reply per stdout line. Requests are serialized.
pub struct SubprocessAnnotator {
    name: String,
    process: Mutex<Option<TaggerProcess>>,
}

impl SubprocessAnnotator {
    pub fn spawn(program: &str, args: &[String]) -> Result<Self, TaggerError> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| TaggerError::TaggerFailure(format!("cannot start {program}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(SubprocessAnnotator {
            name: program.to_string(),
            process: Mutex::new(Some(TaggerProcess {
                _child: child,
                stdin,
                stdout,
            })),
        })
    }

    fn exchange(proc_: &mut TaggerProcess, token: &str) -> Result<(PosTag, String), String> {
        writeln!(proc_.stdin, "{token}").map_err(|e| e.to_string())?;
        proc_.stdin.flush().map_err(|e| e.to_string())?;
        let mut line = String::new();
        let read = proc_
            .stdout
            .read_line(&mut line)
            .map_err(|e| e.to_string())?;
        if read == 0 {
            return Err("tagger closed its output".into());
        }
        let line = line.trim_end_matches(['\n', '\r']);
        let (pos, lemma) = line
            .split_once('\t')
            .ok_or_else(|| format!("malformed reply {line:?}"))?;
        Ok((PosTag::parse(pos), lemma.trim().to_string()))
    }
}

impl PosAnnotator for SubprocessAnnotator {
    fn tag(&self, tokens: &[String]) -> Result<Vec<(PosTag, String)>, TaggerError> {
        let mut guard = self
            .process
            .lock()
            .map_err(|_| TaggerError::TaggerFailure("tagger lock poisoned".into()))?;
        let Some(proc_) = guard.as_mut() else {
            return Err(TaggerError::TaggerFailure(format!(
                "{} is not running",
                self.name
            )));
        };
        let mut out = Vec::with_capacity(tokens.len());
        for tok in tokens {
            match Self::exchange(proc_, tok) {
                Ok(tag) => out.push(tag),
                Err(msg) => {
                    // a broken pipe leaves the stream out of step; drop the process
                    *guard = None;
                    return Err(TaggerError::TaggerFailure(format!("{}: {msg}", self.name)));
                }
            }
        }
        Ok(out)
    }

    fn name(&self) -> &str {
        &self.name
    }
}

/// Uses `primary` and falls back to the bundled baseline on tagger failure.
pub struct FallbackAnnotator {
    primary: Box<dyn PosAnnotator>,
    fallback: BaselineAnnotator,
}

impl FallbackAnnotator {
    pub fn new(primary: Box<dyn PosAnnotator>) -> Self {
        FallbackAnnotator {
            primary,
            fallback: BaselineAnnotator::bundled(),
        }
    }
}

impl PosAnnotator for FallbackAnnotator {
    fn tag(&self, tokens: &[String]) -> Result<Vec<(PosTag, String)>, TaggerError> {
        match self.primary.tag(tokens) {
            Ok(tags) if tags.len() == tokens.len() => Ok(tags),
            Ok(_) | Err(TaggerError::TaggerFailure(_)) => self.fallback.tag(tokens),
            Err(e) => Err(e),
        }
    }

    fn name(&self) -> &str {
        self.primary.name()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(words: &[&str]) -> Vec<String> {
        words.iter().map(|s| s.to_string()).collect()
    }

    fn tag(words: &[&str]) -> Vec<AnnotatedToken> {
        annotate(&toks(words), &BaselineAnnotator::bundled()).unwrap()
    }

    #[test]
    fn inflections_of_lie_fold_to_lie() {
        for w in ["lies", "lied", "lying"] {
            let t = &tag(&[w])[0];
            assert_eq!(t.lemma, "lie", "{w}");
            assert_eq!(t.pos, PosTag::Verb, "{w}");
        }
    }

    #[test]
    fn lies_is_a_verb() {
        assert_eq!(
            tag(&["lies"]),
            vec![AnnotatedToken {
                surface: "lies".into(),
                pos: PosTag::Verb,
                lemma: "lie".into()
            }]
        );
    }

    #[test]
    fn modal_context_selects_verb_reading() {
        let out = tag(&["we", "must", "vote"]);
        assert_eq!(out[2].pos, PosTag::Verb);
        assert_eq!(out[2].lemma, "vote");
        let out = tag(&["the", "vote"]);
        assert_eq!(out[1].pos, PosTag::Noun);
    }

    #[test]
    fn handles_are_proper_nouns_with_sigil() {
        let out = tag(&["@realDonaldTrump", "#TrumpMeltdown"]);
        assert_eq!(out[0].pos, PosTag::Propn);
        assert_eq!(out[0].lemma, "@realdonaldtrump");
        assert_eq!(out[1].lemma, "#trumpmeltdown");
    }

    #[test]
    fn suffix_rules_reach_lexicon_entries() {
        let cases = [
            ("speaking", PosTag::Verb, "speak"),
            ("voted", PosTag::Verb, "vote"),
            ("cages", PosTag::Noun, "cage"),
            ("built", PosTag::Verb, "build"),
            ("stopped", PosTag::Verb, "stop"),
            ("Trump's", PosTag::Propn, "trump"),
            ("running", PosTag::Verb, "run"),
        ];
        for (w, pos, lemma) in cases {
            let t = &tag(&[w])[0];
            assert_eq!((t.pos, t.lemma.as_str()), (pos, lemma), "{w}");
        }
    }

    #[test]
    fn unknown_words_default_to_nouns() {
        let t = &tag(&["Zorblaxes"])[0];
        assert_eq!((t.pos, t.lemma.as_str()), (PosTag::Noun, "zorblax"));
        let t = &tag(&["glorping"])[0];
        assert_eq!((t.pos, t.lemma.as_str()), (PosTag::Verb, "glorp"));
        let t = &tag(&["2020"])[0];
        assert_eq!(t.pos, PosTag::Other);
    }

    #[test]
    fn annotate_is_total() {
        let words = toks(&["I'm", "speaking", "#VPDebate", "2020", "glorp", "the"]);
        let out = annotate(&words, &BaselineAnnotator::bundled()).unwrap();
        assert_eq!(out.len(), words.len());
        assert!(out.iter().all(|t| !t.lemma.is_empty()));
    }

    #[test]
    fn lexicon_keeps_first_reading_per_pos() {
        let lex =
            Lexicon::parse_tsv("vote\tNOUN\tvote\nvote\tVERB\tvote\nvote\tNOUN\tvoter\n").unwrap();
        assert_eq!(
            lex.readings("vote").unwrap(),
            &[(PosTag::Noun, "vote".into()), (PosTag::Verb, "vote".into())]
        );
        assert!(Lexicon::parse_tsv("only\ttwo\n").is_err());
    }

    #[test]
    fn subprocess_protocol_round_trip() {
        let script = r#"while IFS= read -r t; do printf 'VERB\t%s\n' "$(printf %s "$t" | tr A-Z a-z)"; done"#;
        let tagger =
            SubprocessAnnotator::spawn("sh", &["-c".to_string(), script.to_string()]).unwrap();
        let out = annotate(&toks(&["Fly", "@VP"]), &tagger).unwrap();
        assert_eq!(out[0].pos, PosTag::Verb);
        assert_eq!(out[0].lemma, "fly");
        assert_eq!(out[1].pos, PosTag::Propn);
    }

    #[test]
    fn dead_subprocess_is_a_failure_and_fallback_recovers() {
        let tagger = SubprocessAnnotator::spawn("true", &[]).unwrap();
        let err = tagger.tag(&toks(&["lies"])).unwrap_err();
        assert!(matches!(err, TaggerError::TaggerFailure(_)));

        let dead = SubprocessAnnotator::spawn("true", &[]).unwrap();
        let fb = FallbackAnnotator::new(Box::new(dead));
        let out = annotate(&toks(&["lies"]), &fb).unwrap();
        assert_eq!(out[0].lemma, "lie");
        assert!(SubprocessAnnotator::spawn("/nonexistent/tagger", &[]).is_err());
    }
}
