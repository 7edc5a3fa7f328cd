//! Prompt templates with `{placeholder}` substitution and `{{`/`}}` brace escapes.
//!
//! Defaults are compiled in from `templates/`; a directory holding files of the same name
//! overrides them at run time.

use std::fs;
use std::path::Path;

use crate::corpus::SemanticItem;

use super::OracleError;

const EXTRACT_SINGLE: &str = include_str!("../../templates/extract_single.txt");
const EXTRACT_BATCH: &str = include_str!("../../templates/extract_batch.txt");
const MINE: &str = include_str!("../../templates/mine.txt");
const ZERO_SHOT: &str = include_str!("../../templates/zero_shot.txt");

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplates {
    pub extract_single: String,
    pub extract_batch: String,
    pub mine: String,
    pub zero_shot: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            extract_single: EXTRACT_SINGLE.into(),
            extract_batch: EXTRACT_BATCH.into(),
            mine: MINE.into(),
            zero_shot: ZERO_SHOT.into(),
        }
    }
}

impl PromptTemplates {
    /// Defaults, overridden by any of `extract_single.txt`, `extract_batch.txt`, `mine.txt`,
    /// `zero_shot.txt` found in `dir`.
    pub fn from_dir(dir: &Path) -> std::io::Result<Self> {
        let mut t = Self::default();
        for (name, slot) in [
            ("extract_single.txt", &mut t.extract_single),
            ("extract_batch.txt", &mut t.extract_batch),
            ("mine.txt", &mut t.mine),
            ("zero_shot.txt", &mut t.zero_shot),
        ] {
            let path = dir.join(name);
            if path.exists() {
                *slot = fs::read_to_string(path)?;
            }
        }
        Ok(t)
    }

    pub fn extract_single(&self, item: &SemanticItem, feature: &str) -> Result<String, OracleError> {
        render(&self.extract_single, &[("item", &item.text), ("feature", feature)])
    }

    pub fn extract_batch(&self, items: &[SemanticItem], feature: &str) -> Result<String, OracleError> {
        render(
            &self.extract_batch,
            &[("items", &format_item_list(items)), ("feature", feature)],
        )
    }

    pub fn mine(&self, positives: &[SemanticItem], negatives: &[SemanticItem]) -> Result<String, OracleError> {
        render(
            &self.mine,
            &[
                ("positive", &format_group(positives)),
                ("negative", &format_group(negatives)),
            ],
        )
    }

    pub fn zero_shot(&self, items: &[SemanticItem], task: &str, n: usize) -> Result<String, OracleError> {
        render(
            &self.zero_shot,
            &[
                ("items", &format_group(items)),
                ("task", task),
                ("n", &n.to_string()),
            ],
        )
    }
}

/// Numbered list `["1. first", "2. second", ...]`; the numbers are what the batch prompt
/// asks the model to return.
pub fn format_item_list(items: &[SemanticItem]) -> String {
    let numbered: Vec<String> = items
        .iter()
        .enumerate()
        .map(|(k, it)| format!("{}. {}", k + 1, it.text))
        .collect();
    serde_json::to_string(&numbered).expect("strings serialize")
}

fn format_group(items: &[SemanticItem]) -> String {
    let texts: Vec<&str> = items.iter().map(|it| it.text.as_str()).collect();
    serde_json::to_string(&texts).expect("strings serialize")
}

/// Substitutes `{name}` placeholders. Values are inserted verbatim and never rescanned.
pub(crate) fn render(template: &str, values: &[(&str, &str)]) -> Result<String, OracleError> {
    let mut out = String::with_capacity(template.len() + 256);
    let mut rest = template;
    while let Some(pos) = rest.find(['{', '}']) {
        out.push_str(&rest[..pos]);
        let tail = &rest[pos..];
        if let Some(after) = tail.strip_prefix("{{") {
            out.push('{');
            rest = after;
        } else if let Some(after) = tail.strip_prefix("}}") {
            out.push('}');
            rest = after;
        } else if tail.starts_with('}') {
            return Err(OracleError::InvalidRequest("unmatched `}` in template".into()));
        } else {
            let end = tail
                .find('}')
                .ok_or_else(|| OracleError::InvalidRequest("unterminated placeholder".into()))?;
            let name = &tail[1..end];
            let value = values
                .iter()
                .find(|(k, _)| *k == name)
                .map(|(_, v)| *v)
                .ok_or_else(|| OracleError::InvalidRequest(format!("unknown placeholder `{name}`")))?;
            out.push_str(value);
            rest = &tail[end + 1..];
        }
    }
    out.push_str(rest);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extraction_prompt_is_verbatim() {
        let t = PromptTemplates::default();
        let p = t
            .extract_single(&SemanticItem::new("1", "Casablanca"), "historical war film")
            .unwrap();
        assert_eq!(
            p,
            "For  item 'Casablanca' first describe its characteristics.\n\n\
             Then consider this feature:\n\n'historical war film'\n\n\
             Finally, output a JSON object with an answer determining if the feature applies to the item.\n\n\
             { \"applies\": [0 or 1] }"
        );
    }

    #[test]
    fn mining_prompt_lists_groups() {
        let t = PromptTemplates::default();
        let p = t
            .mine(&[SemanticItem::new("a", "Alien")], &[SemanticItem::new("b", "Heat")])
            .unwrap();
        assert!(p.contains("Positive:\n'[\"Alien\"]'"));
        assert!(p.contains("Negative:\n'[\"Heat\"]'"));
        assert!(p.ends_with("{  \"characteristic\": [text] }"));
    }

    #[test]
    fn item_list_is_numbered_from_one() {
        let items = [SemanticItem::new("x", "a \"q\""), SemanticItem::new("y", "b")];
        assert_eq!(format_item_list(&items), r#"["1. a \"q\"","2. b"]"#);
    }

    #[test]
    fn values_are_not_rescanned() {
        assert_eq!(render("<{a}>", &[("a", "{b}")]).unwrap(), "<{b}>");
        assert!(render("{missing}", &[]).is_err());
        assert!(render("oops }", &[]).is_err());
    }

    #[test]
    fn directory_overrides_single_file() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("mine.txt"), "P={positive} N={negative}").unwrap();
        let t = PromptTemplates::from_dir(dir.path()).unwrap();
        assert_eq!(t.extract_single, EXTRACT_SINGLE);
        let p = t
            .mine(&[SemanticItem::new("a", "1")], &[SemanticItem::new("b", "2")])
            .unwrap();
        assert_eq!(p, r#"P=["1"] N=["2"]"#);
    }
}
