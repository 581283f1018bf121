//! Closing free model text into an enumerated label domain.

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unparseable model output {text:?}")]
pub struct Unparseable {
    pub text: String,
}

fn normalize(s: &str) -> String {
    s.trim()
        .trim_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase()
        .replace(['-', ' '], "_")
}

/// Maps `text` to exactly one label of `domain`.
///
/// Exact match after trimming, case folding and stripping surrounding
/// punctuation wins; otherwise the text must contain exactly one distinct
/// domain label as a token.
pub fn parse_enum<'a>(text: &str, domain: &'a [String]) -> Result<&'a str, Unparseable> {
    let fail = || Unparseable { text: text.to_string() };
    if domain.is_empty() {
        return Err(fail());
    }
    let whole = normalize(text);
    if let Some(label) = domain.iter().find(|l| normalize(l) == whole) {
        return Ok(label);
    }
    let tokens: Vec<String> = text
        .split(|c: char| !(c.is_alphanumeric() || c == '_' || c == '-'))
        .filter(|t| !t.is_empty())
        .map(normalize)
        .collect();
    let mut found: Vec<&'a str> = domain
        .iter()
        .filter(|l| tokens.contains(&normalize(l)))
        .map(String::as_str)
        .collect();
    found.dedup();
    match found.as_slice() {
        [one] => Ok(one),
        _ => Err(fail()),
    }
}

/// Reprompt suffix used after an unparseable answer.
pub fn reprompt_hint(domain: &[String]) -> String {
    format!("Answer with exactly one of: {}.", domain.join(", "))
}
