//! Small text helpers shared by the translators, the mock backend and BM25.

/// Lower-cased alphanumeric tokens.
pub fn tokenize(s: &str) -> Vec<String> {
    s.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Whitespace token count.
pub fn word_count(s: &str) -> usize {
    s.split_whitespace().count()
}

/// `'a' 'b' 'c'`
pub fn quote_space(labels: &[String]) -> String {
    labels
        .iter()
        .map(|l| format!("'{l}'"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// `'a', 'b', 'c'`
pub fn quote_comma(labels: &[String]) -> String {
    labels
        .iter()
        .map(|l| format!("'{l}'"))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Labels enclosed in single quotes, in order of appearance.
pub fn quoted_labels(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut rest = s;
    while let Some(start) = rest.find('\'') {
        let after = &rest[start + 1..];
        match after.find('\'') {
            Some(end) => {
                let label = &after[..end];
                if !label.trim().is_empty() {
                    out.push(label.to_string());
                }
                rest = &after[end + 1..];
            }
            None => break,
        }
    }
    out
}

/// Collapses runs of whitespace (including newlines) to single spaces.
pub fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Case-folded text with punctuation dropped, used for title matching.
pub fn normalize(s: &str) -> String {
    tokenize(s).join(" ")
}
