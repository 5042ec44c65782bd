//! Offline OSM tag-wiki lookup and the linguistic rendering of tags.
//!
//! The dump format is UTF-8, one record per line, tab-separated:
//! `key <TAB> value <TAB> group <TAB> description`. An empty value marks a
//! key-level entry; an empty group means the tag has none. Lines starting
//! with `#` and blank lines are skipped.

use std::collections::HashMap;
use std::path::Path;

use thiserror::Error;

use crate::osm::OsmTag;

#[derive(Debug, Error)]
pub enum WikiError {
    #[error("cannot read wiki dump {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed wiki record {record}: {reason}")]
    Load { record: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WikiEntry {
    pub key: String,
    pub value: Option<String>,
    pub description: String,
    pub group: Option<String>,
}

/// Bookkeeping keys skipped by [`WikiDb::interpret_all`] unless overridden.
pub const DEFAULT_SKIP_KEYS: &[&str] = &["source", "created_by"];

#[derive(Debug, Clone, Default)]
pub struct WikiDb {
    entries: HashMap<(String, Option<String>), WikiEntry>,
    skip_keys: Vec<String>,
    /// Records that replaced an earlier one with the same (key, value).
    pub overridden: usize,
}

impl WikiDb {
    pub fn empty() -> Self {
        Self { skip_keys: DEFAULT_SKIP_KEYS.iter().map(|s| s.to_string()).collect(), ..Default::default() }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, WikiError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| WikiError::Io { path: path.display().to_string(), source })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, WikiError> {
        let mut db = Self::empty();
        let mut record = 0;
        for line in text.lines() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            record += 1;
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() < 4 {
                return Err(WikiError::Load { record, reason: format!("expected 4 fields, found {}", fields.len()) });
            }
            if fields.len() > 4 {
                return Err(WikiError::Load { record, reason: "too many fields".into() });
            }
            let (key, value, group, description) = (fields[0], fields[1], fields[2], fields[3]);
            if key.is_empty() {
                return Err(WikiError::Load { record, reason: "empty key".into() });
            }
            if description.is_empty() {
                return Err(WikiError::Load { record, reason: "missing description".into() });
            }
            let entry = WikiEntry {
                key: key.to_string(),
                value: (!value.is_empty()).then(|| value.to_string()),
                description: description.to_string(),
                group: (!group.is_empty()).then(|| group.to_string()),
            };
            if db.entries.insert((entry.key.clone(), entry.value.clone()), entry).is_some() {
                log::warn!("wiki record {record} overrides an earlier entry for {key}={value}");
                db.overridden += 1;
            }
        }
        Ok(db)
    }

    pub fn with_skip_keys<I, S>(mut self, keys: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.skip_keys = keys.into_iter().map(Into::into).collect();
        self
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn lookup(&self, key: &str, value: Option<&str>) -> Option<&WikiEntry> {
        self.entries.get(&(key.to_string(), value.map(str::to_string)))
    }

    /// Renders one tag. Tags with a value-level entry get their meaning
    /// spelled out; tags known only by key describe the key and state the
    /// value; unknown tags fall back to `key: value.`.
    pub fn interpret_tag(&self, tag: &OsmTag) -> String {
        if let Some(e) = self.lookup(&tag.key, Some(&tag.value)) {
            return format!(
                "{}: {}. The tag belongs to the tag group \"{}\". This tag means: \"{}\".",
                tag.key,
                tag.value,
                e.group.as_deref().unwrap_or("NULL"),
                e.description
            );
        }
        if let Some(e) = self.lookup(&tag.key, None) {
            return format!(
                "Its key is \"{}\", which means \"{}\". The tag belongs to a tag group \"{}\". The tag value is {}.",
                tag.key,
                e.description,
                e.group.as_deref().unwrap_or("NULL"),
                tag.value
            );
        }
        format!("{}: {}.", tag.key, tag.value)
    }

    fn skipped(&self, key: &str) -> bool {
        self.skip_keys.iter().any(|s| key == s || key.strip_prefix(s.as_str()).is_some_and(|r| r.starts_with(':')))
    }

    /// Interprets tags in order, leaving out bookkeeping keys.
    pub fn interpret_all(&self, tags: &[OsmTag]) -> Vec<String> {
        tags.iter().filter(|t| !self.skipped(&t.key)).map(|t| self.interpret_tag(t)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const DUMP: &str = "man_made\tworks\t\tA factory or industrial production plant\n\
name\t\tnames\tthe primary name: in general, the most prominent signposted name or the most common name in the local language(s).\n";

    #[test]
    fn loads_two_records() {
        let db = WikiDb::parse(DUMP).unwrap();
        assert_eq!(db.len(), 2);
        assert!(db.lookup("name", None).is_some());
        assert!(db.lookup("man_made", Some("works")).is_some());
    }

    #[test]
    fn bounded_tag() {
        let db = WikiDb::parse(DUMP).unwrap();
        assert_eq!(
            db.interpret_tag(&OsmTag::new("man_made", "works")),
            "man_made: works. The tag belongs to the tag group \"NULL\". This tag means: \"A factory or industrial production plant\"."
        );
    }

    #[test]
    fn unbounded_tag() {
        let db = WikiDb::parse(DUMP).unwrap();
        assert_eq!(
            db.interpret_tag(&OsmTag::new("name", "Jeff Memorial Highway")),
            "Its key is \"name\", which means \"the primary name: in general, the most prominent signposted name or the most common name in the local language(s).\". The tag belongs to a tag group \"names\". The tag value is Jeff Memorial Highway."
        );
    }

    #[test]
    fn unknown_tag_falls_back() {
        assert_eq!(WikiDb::empty().interpret_tag(&OsmTag::new("unknown_key", "foo")), "unknown_key: foo.");
    }

    #[test]
    fn duplicate_last_wins() {
        let db = WikiDb::parse("a\tb\t\tfirst\na\tb\t\tsecond\n").unwrap();
        assert_eq!(db.len(), 1);
        assert_eq!(db.overridden, 1);
        assert_eq!(db.lookup("a", Some("b")).unwrap().description, "second");
    }

    #[test]
    fn missing_description_is_error() {
        match WikiDb::parse("a\tb\t\tok\nc\td\tgroup\t\n") {
            Err(WikiError::Load { record, .. }) => assert_eq!(record, 2),
            other => panic!("{other:?}"),
        }
        assert!(matches!(WikiDb::parse("a\tb\n"), Err(WikiError::Load { record: 1, .. })));
    }

    #[test]
    fn interpret_all_skips_bookkeeping() {
        let db = WikiDb::parse(DUMP).unwrap();
        let out = db.interpret_all(&[
            OsmTag::new("name", "X"),
            OsmTag::new("source", "bing"),
            OsmTag::new("source:geometry", "survey"),
        ]);
        assert_eq!(out.len(), 1);
        assert!(db.interpret_all(&[]).is_empty());
        let custom = WikiDb::parse(DUMP).unwrap().with_skip_keys(["name"]);
        assert_eq!(custom.interpret_all(&[OsmTag::new("source", "bing")]).len(), 1);
    }
}
