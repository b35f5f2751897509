//! Domain types shared across the cascade: sentences, character spans,
//! labels, type lists and annotated records.
//!
//! All character offsets count Unicode scalar values, never bytes.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors raised when constructing domain values with broken invariants.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TypeError {
    #[error("sentence text is empty")]
    EmptyText,
    #[error("span {start}..{end} is out of range for text of {len} chars")]
    SpanOutOfRange { start: usize, end: usize, len: usize },
    #[error("type list is empty")]
    EmptyTypeList,
    #[error("type list contains duplicate name {0:?}")]
    DuplicateType(String),
}

/// Language tag of a sentence. The eight corpus languages have dedicated
/// variants; anything else is carried verbatim.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub enum Language {
    En,
    Zh,
    Es,
    Fr,
    De,
    Ja,
    Ko,
    Ru,
    Other(String),
}

impl Language {
    pub fn as_str(&self) -> &str {
        match self {
            Language::En => "en",
            Language::Zh => "zh",
            Language::Es => "es",
            Language::Fr => "fr",
            Language::De => "de",
            Language::Ja => "ja",
            Language::Ko => "ko",
            Language::Ru => "ru",
            Language::Other(s) => s,
        }
    }
}

impl From<String> for Language {
    fn from(s: String) -> Self {
        match s.to_ascii_lowercase().as_str() {
            "en" => Language::En,
            "zh" => Language::Zh,
            "es" => Language::Es,
            "fr" => Language::Fr,
            "de" => Language::De,
            "ja" => Language::Ja,
            "ko" => Language::Ko,
            "ru" => Language::Ru,
            _ => Language::Other(s),
        }
    }
}

impl From<&str> for Language {
    fn from(s: &str) -> Self {
        Language::from(s.to_string())
    }
}

impl From<Language> for String {
    fn from(l: Language) -> Self {
        l.as_str().to_string()
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One corpus unit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub id: String,
    pub text: String,
    pub language: Language,
}

impl Sentence {
    pub fn new(
        id: impl Into<String>,
        text: impl Into<String>,
        language: impl Into<Language>,
    ) -> Result<Self, TypeError> {
        let text = text.into();
        if text.is_empty() {
            return Err(TypeError::EmptyText);
        }
        Ok(Self {
            id: id.into(),
            text,
            language: language.into(),
        })
    }

    /// Length in Unicode scalar values.
    pub fn char_len(&self) -> usize {
        self.text.chars().count()
    }

    /// Slice by character offsets. Returns `None` when out of range.
    pub fn slice(&self, start: usize, end: usize) -> Option<&str> {
        char_slice(&self.text, start, end)
    }

    /// Build a span over this sentence, deriving the surface from the text.
    pub fn span(&self, start: usize, end: usize) -> Result<EntitySpan, TypeError> {
        EntitySpan::new(&self.text, start, end)
    }
}

/// Slice `text` by character offsets `[start, end)`.
pub fn char_slice(text: &str, start: usize, end: usize) -> Option<&str> {
    if start > end {
        return None;
    }
    let mut indices = text.char_indices().map(|(i, _)| i).chain(std::iter::once(text.len()));
    let b_start = indices.nth(start)?;
    let b_end = if end == start {
        b_start
    } else {
        indices.nth(end - start - 1)?
    };
    Some(&text[b_start..b_end])
}

/// Half-open character range `[start, end)` plus the covered text.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntitySpan {
    pub start: usize,
    pub end: usize,
    pub surface: String,
}

impl EntitySpan {
    pub fn new(text: &str, start: usize, end: usize) -> Result<Self, TypeError> {
        let len = text.chars().count();
        if start >= end || end > len {
            return Err(TypeError::SpanOutOfRange { start, end, len });
        }
        let surface = char_slice(text, start, end).expect("range checked above").to_string();
        Ok(Self { start, end, surface })
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start >= self.end
    }

    /// Character ranges intersect.
    pub fn overlaps(&self, other: &EntitySpan) -> bool {
        self.start < other.end && other.start < self.end
    }

    pub fn range(&self) -> (usize, usize) {
        (self.start, self.end)
    }
}

/// Taxonomy level of a label. `Flat` is for single-level inventories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Coarse,
    Medium,
    Fine,
    Flat,
}

impl Level {
    pub fn as_str(self) -> &'static str {
        match self {
            Level::Coarse => "coarse",
            Level::Medium => "medium",
            Level::Fine => "fine",
            Level::Flat => "flat",
        }
    }

    /// Level one step up the tree, if any.
    pub fn parent(self) -> Option<Level> {
        match self {
            Level::Medium => Some(Level::Coarse),
            Level::Fine => Some(Level::Medium),
            Level::Coarse | Level::Flat => None,
        }
    }

    pub fn child(self) -> Option<Level> {
        match self {
            Level::Coarse => Some(Level::Medium),
            Level::Medium => Some(Level::Fine),
            Level::Fine | Level::Flat => None,
        }
    }

    /// Depth in the tree (coarse = 0). Flat counts as the root level.
    pub fn depth(self) -> usize {
        match self {
            Level::Coarse | Level::Flat => 0,
            Level::Medium => 1,
            Level::Fine => 2,
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Level {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "coarse" => Ok(Level::Coarse),
            "medium" => Ok(Level::Medium),
            "fine" => Ok(Level::Fine),
            "flat" => Ok(Level::Flat),
            other => Err(format!("unknown level {other:?}")),
        }
    }
}

/// Name of the zero-shot escape answer.
pub const UNKNOWN: &str = "unknown";

/// An entity type, or the zero-shot `Unknown` sentinel.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Named { name: String, level: Level },
    Unknown,
}

impl Label {
    pub fn named(name: impl Into<String>, level: Level) -> Self {
        Label::Named {
            name: name.into(),
            level,
        }
    }

    pub fn flat(name: impl Into<String>) -> Self {
        Label::named(name, Level::Flat)
    }

    pub fn name(&self) -> Option<&str> {
        match self {
            Label::Named { name, .. } => Some(name),
            Label::Unknown => None,
        }
    }

    pub fn level(&self) -> Option<Level> {
        match self {
            Label::Named { level, .. } => Some(*level),
            Label::Unknown => None,
        }
    }

    pub fn is_unknown(&self) -> bool {
        matches!(self, Label::Unknown)
    }

    /// Same label name, ignoring level. Unknown only matches Unknown.
    pub fn same_name(&self, other: &Label) -> bool {
        self.name() == other.name()
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Named { name, .. } => f.write_str(name),
            Label::Unknown => f.write_str(UNKNOWN),
        }
    }
}

/// Ordered inventory of candidate type names offered for one sample.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TypeList {
    names: Vec<String>,
    allow_unknown: bool,
}

impl TypeList {
    pub fn new<I, S>(names: I, allow_unknown: bool) -> Result<Self, TypeError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.is_empty() {
            return Err(TypeError::EmptyTypeList);
        }
        let mut seen = std::collections::HashSet::new();
        for n in &names {
            if !seen.insert(n.as_str()) {
                return Err(TypeError::DuplicateType(n.clone()));
            }
        }
        Ok(Self { names, allow_unknown })
    }

    /// Build from possibly repeated names, keeping first occurrences.
    pub fn dedup<I, S>(names: I, allow_unknown: bool) -> Result<Self, TypeError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut seen = std::collections::HashSet::new();
        let names: Vec<String> = names
            .into_iter()
            .map(Into::into)
            .filter(|n: &String| seen.insert(n.clone()))
            .collect();
        Self::new(names, allow_unknown)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn allow_unknown(&self) -> bool {
        self.allow_unknown
    }

    pub fn with_unknown(mut self, allow: bool) -> Self {
        self.allow_unknown = allow;
        self
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.names.iter().any(|n| n == name)
    }

    /// Whether `label` is admissible under this list.
    pub fn admits(&self, label: &Label) -> bool {
        match label {
            Label::Named { name, .. } => self.contains(name),
            Label::Unknown => self.allow_unknown,
        }
    }

    /// Raw access used by transformations that keep the invariants themselves.
    pub(crate) fn names_mut(&mut self) -> &mut Vec<String> {
        &mut self.names
    }
}

/// One labeled mention.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Entity {
    pub span: EntitySpan,
    pub label: Label,
}

impl Entity {
    pub fn new(span: EntitySpan, label: Label) -> Self {
        Self { span, label }
    }
}

/// A dataset record: sentence, gold (or predicted) entities, and the
/// record's own type list.
///
/// Fields are public so that invalid records can be represented and then
/// reported by [`crate::validation::validate_dataset`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotatedSentence {
    pub sentence: Sentence,
    pub entities: Vec<Entity>,
    pub type_list: TypeList,
}

impl AnnotatedSentence {
    pub fn new(sentence: Sentence, entities: Vec<Entity>, type_list: TypeList) -> Self {
        let mut record = Self {
            sentence,
            entities,
            type_list,
        };
        record.sort_entities();
        record
    }

    pub fn id(&self) -> &str {
        &self.sentence.id
    }

    /// Canonical entity order: by start, then end, then label.
    pub fn sort_entities(&mut self) {
        self.entities
            .sort_by(|a, b| a.span.cmp(&b.span).then_with(|| a.label.cmp(&b.label)));
    }

    pub fn spans(&self) -> Vec<EntitySpan> {
        self.entities.iter().map(|e| e.span.clone()).collect()
    }
}
