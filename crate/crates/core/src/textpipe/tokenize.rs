/// Splits text into surface tokens.
///
/// Whitespace and punctuation separate tokens. `#hashtag` and `@handle`
/// stay whole (sigil included), apostrophes between letters stay inside a
/// word ("I'm"), and URLs are dropped. Surface case is preserved.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        if is_url(chunk) {
            continue;
        }
        scan_chunk(chunk, &mut out);
    }
    out
}

/// True for `#...` and `@...` tokens produced by [`tokenize`].
pub fn is_sigil_token(token: &str) -> bool {
    let mut chars = token.chars();
    matches!(chars.next(), Some('#') | Some('@')) && chars.next().is_some_and(is_word_char)
}

fn is_url(chunk: &str) -> bool {
    let lower = chunk.to_ascii_lowercase();
    lower.starts_with("http://") || lower.starts_with("https://") || lower.starts_with("www.")
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

fn is_apostrophe(c: char) -> bool {
    c == '\'' || c == '\u{2019}'
}

fn scan_chunk(chunk: &str, out: &mut Vec<String>) {
    let chars: Vec<char> = chunk.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if (c == '#' || c == '@') && chars.get(i + 1).copied().is_some_and(is_word_char) {
            let start = i;
            i += 1;
            while i < chars.len() && is_word_char(chars[i]) {
                i += 1;
            }
            out.push(chars[start..i].iter().collect());
        } else if c.is_alphanumeric() {
            let start = i;
            while i < chars.len() {
                // an apostrophe stays inside a word when a letter follows
                if chars[i].is_alphanumeric()
                    || (is_apostrophe(chars[i])
                        && chars.get(i + 1).is_some_and(|n| n.is_alphanumeric()))
                {
                    i += 1;
                } else {
                    break;
                }
            }
            out.push(chars[start..i].iter().collect());
        } else {
            i += 1;
        }
    }
}
