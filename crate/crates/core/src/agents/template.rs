//! Prompt templates with `{{name}}` placeholders.
//!
//! The defaults are compiled in from `templates/*.txt`; a directory holding
//! files of the same names overrides them one by one.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("template `{template}` has no value for placeholder `{name}`")]
    MissingValue { template: String, name: String },
    #[error("template `{template}` has an unterminated placeholder")]
    Unterminated { template: String },
    #[error("reading template {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

macro_rules! builtin {
    ($($name:literal),* $(,)?) => {
        &[$(($name, include_str!(concat!("../../templates/", $name, ".txt")))),*]
    };
}

const BUILTIN: &[(&str, &str)] = builtin!(
    "interaction_system",
    "interaction_user",
    "interaction_candidate",
    "interaction_relations",
    "schema_choice",
    "reflection_user_system",
    "reflection_user",
    "verdict_correct",
    "verdict_incorrect",
    "preference_hint",
    "dislike_hint",
    "schema_memory",
    "reflection_item_system",
    "reflection_item",
    "item_relations",
    "verdict_item_preferred",
    "verdict_item_rejected",
    "item_feature_hint",
    "ranking_system",
    "ranking_user",
    "ranking_candidate",
    "schema_ranking",
    "format_reminder",
);

#[derive(Clone, Debug)]
pub struct Templates {
    by_name: BTreeMap<&'static str, String>,
}

impl Default for Templates {
    fn default() -> Self {
        Self {
            by_name: BUILTIN
                .iter()
                .map(|(name, body)| (*name, strip_final_newline(body).to_string()))
                .collect(),
        }
    }
}

fn strip_final_newline(s: &str) -> &str {
    s.strip_suffix('\n').unwrap_or(s)
}

impl Templates {
    pub fn names() -> impl Iterator<Item = &'static str> {
        BUILTIN.iter().map(|(n, _)| *n)
    }

    /// Builtins, with any `<name>.txt` found in `dir` taking precedence.
    pub fn with_overrides(dir: &Path) -> Result<Self, TemplateError> {
        let mut t = Self::default();
        for (name, _) in BUILTIN {
            let path = dir.join(format!("{name}.txt"));
            if path.exists() {
                let body = std::fs::read_to_string(&path).map_err(|source| TemplateError::Io {
                    path: path.display().to_string(),
                    source,
                })?;
                t.by_name.insert(name, strip_final_newline(&body).to_string());
            }
        }
        Ok(t)
    }

    pub fn raw(&self, name: &str) -> &str {
        self.by_name
            .get(name)
            .map(String::as_str)
            .unwrap_or_else(|| panic!("no builtin template named {name}"))
    }

    pub fn render(&self, name: &str, values: &[(&str, &str)]) -> Result<String, TemplateError> {
        render(name, self.raw(name), values)
    }
}

/// Single-pass substitution: inserted values are never re-scanned. A line
/// that consists of nothing but one placeholder whose value is empty is
/// dropped entirely.
pub fn render(template_name: &str, template: &str, values: &[(&str, &str)]) -> Result<String, TemplateError> {
    let lookup = |name: &str| -> Result<&str, TemplateError> {
        values
            .iter()
            .find(|(k, _)| *k == name)
            .map(|(_, v)| *v)
            .ok_or_else(|| TemplateError::MissingValue {
                template: template_name.to_string(),
                name: name.to_string(),
            })
    };
    let mut lines = Vec::new();
    for line in template.split('\n') {
        let trimmed = line.trim();
        if let Some(name) = trimmed.strip_prefix("{{").and_then(|r| r.strip_suffix("}}")) {
            if !name.contains("{{") && !name.contains("}}") && lookup(name)?.is_empty() {
                continue;
            }
        }
        let mut out = String::with_capacity(line.len());
        let mut rest = line;
        while let Some(start) = rest.find("{{") {
            out.push_str(&rest[..start]);
            let after = &rest[start + 2..];
            let end = after.find("}}").ok_or_else(|| TemplateError::Unterminated {
                template: template_name.to_string(),
            })?;
            out.push_str(lookup(after[..end].trim())?);
            rest = &after[end + 2..];
        }
        out.push_str(rest);
        lines.push(out);
    }
    Ok(lines.join("\n"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn substitutes_once_and_drops_empty_lines() {
        let out = render("t", "a {{x}} b\n{{y}}\nc", &[("x", "{{y}}"), ("y", "")]).unwrap();
        assert_eq!(out, "a {{y}} b\nc");
    }

    #[test]
    fn missing_value_is_an_error() {
        assert!(matches!(
            render("t", "{{nope}}", &[]),
            Err(TemplateError::MissingValue { .. })
        ));
        assert!(matches!(
            render("t", "{{open", &[]),
            Err(TemplateError::Unterminated { .. })
        ));
    }

    #[test]
    fn overrides_replace_by_name() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("format_reminder.txt"), "Again, {{noun}}.\n").unwrap();
        let t = Templates::with_overrides(dir.path()).unwrap();
        assert_eq!(t.render("format_reminder", &[("noun", "CD")]).unwrap(), "Again, CD.");
        assert_eq!(t.raw("schema_choice"), Templates::default().raw("schema_choice"));
    }
}
