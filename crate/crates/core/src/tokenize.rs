//! Caption tokenization.
//!
//! Lowercase, split on every character outside `[a-z0-9']`, strip leading and
//! trailing apostrophes, drop empty tokens. Phrase matching ("man and a woman")
//! and BLEU both operate on this token stream.

pub fn tokenize(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    lower
        .split(|c: char| !(c.is_ascii_lowercase() || c.is_ascii_digit() || c == '\''))
        .map(|piece| piece.trim_matches('\''))
        .filter(|piece| !piece.is_empty())
        .map(str::to_owned)
        .collect()
}

/// Single-space join used when a rewritten caption is written back out.
pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut out = String::new();
    for (i, t) in tokens.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(t.as_ref());
    }
    out
}
