//! Dataset-wide invariant checks. Violations are collected, never raised.

use std::collections::HashSet;
use std::fmt;

use serde::Serialize;

use crate::types::AnnotatedSentence;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    EmptyText,
    DuplicateId,
    SpanOutOfRange,
    SurfaceMismatch,
    Overlap,
    LabelNotInTypeList,
    InvalidTypeList,
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ViolationKind::EmptyText => "empty text",
            ViolationKind::DuplicateId => "duplicate id",
            ViolationKind::SpanOutOfRange => "span out of range",
            ViolationKind::SurfaceMismatch => "surface mismatch",
            ViolationKind::Overlap => "overlap",
            ViolationKind::LabelNotInTypeList => "label not in type list",
            ViolationKind::InvalidTypeList => "invalid type list",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub record: usize,
    pub id: String,
    pub kind: ViolationKind,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn count(&self, kind: ViolationKind) -> usize {
        self.violations.iter().filter(|v| v.kind == kind).count()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.violations {
            writeln!(f, "record {} ({}): {}: {}", v.record, v.id, v.kind, v.detail)?;
        }
        Ok(())
    }
}

/// Check one record; `index` is only used for reporting.
pub fn validate_record(index: usize, rec: &AnnotatedSentence) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |kind, detail: String| {
        out.push(Violation {
            record: index,
            id: rec.sentence.id.clone(),
            kind,
            detail,
        })
    };

    let text = &rec.sentence.text;
    if text.is_empty() {
        push(ViolationKind::EmptyText, "text is empty".into());
    }
    let names = rec.type_list.names();
    let distinct: HashSet<&String> = names.iter().collect();
    if names.is_empty() || distinct.len() != names.len() {
        push(
            ViolationKind::InvalidTypeList,
            "type list empty or has duplicates".into(),
        );
    }

    let len = text.chars().count();
    let mut in_range = Vec::new();
    for e in &rec.entities {
        let s = &e.span;
        if s.start >= s.end || s.end > len {
            push(
                ViolationKind::SpanOutOfRange,
                format!("{}..{} with text length {len}", s.start, s.end),
            );
            continue;
        }
        let slice = crate::types::char_slice(text, s.start, s.end).unwrap_or_default();
        if slice != s.surface {
            push(
                ViolationKind::SurfaceMismatch,
                format!("{}..{}: {:?} != {:?}", s.start, s.end, s.surface, slice),
            );
        }
        if !rec.type_list.admits(&e.label) {
            push(
                ViolationKind::LabelNotInTypeList,
                format!("label {:?} at {}..{}", e.label.to_string(), s.start, s.end),
            );
        }
        in_range.push(s);
    }

    in_range.sort();
    for pair in in_range.windows(2) {
        if pair[0].end > pair[1].start {
            push(
                ViolationKind::Overlap,
                format!(
                    "{}..{} overlaps {}..{}",
                    pair[0].start, pair[0].end, pair[1].start, pair[1].end
                ),
            );
        }
    }
    out
}

pub fn validate_dataset(ds: &[AnnotatedSentence]) -> ValidationReport {
    let mut violations = Vec::new();
    let mut ids = HashSet::new();
    for (i, rec) in ds.iter().enumerate() {
        if !ids.insert(rec.sentence.id.as_str()) {
            violations.push(Violation {
                record: i,
                id: rec.sentence.id.clone(),
                kind: ViolationKind::DuplicateId,
                detail: "id already used by an earlier record".into(),
            });
        }
        violations.extend(validate_record(i, rec));
    }
    ValidationReport { violations }
}
