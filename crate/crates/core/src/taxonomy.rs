//! Three-level entity taxonomy (coarse → medium → fine).
//!
//! The on-disk format is line oriented UTF-8:
//!
//! ```text
//! coarse<TAB>Person
//! medium<TAB>Real Person<TAB>Person
//! fine<TAB>Politician<TAB>Real Person
//! ```
//!
//! Lines starting with `#` and blank lines are ignored. Node order is file
//! order, which makes subcategory prompts deterministic.

use std::collections::HashMap;
use std::path::Path;

use thiserror::Error;

use crate::types::{Label, Level, TypeList};

/// The DynamicNER taxonomy shipped with the crate (8 / 31 / 155 nodes).
pub const DYNAMICNER_TAXONOMY: &str = include_str!("../data/dynamicner.tax");

#[derive(Debug, Error)]
pub enum TaxonomyError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("integrity: {0}")]
    Integrity(String),
    #[error("unknown taxonomy node {0}")]
    UnknownNode(String),
    #[error("reading taxonomy: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Node {
    pub name: String,
    pub level: Level,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
}

/// Validated 3-level tree. Immutable after construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Taxonomy {
    nodes: Vec<Node>,
    index: HashMap<(Level, String), usize>,
}

impl Taxonomy {
    /// The shipped DynamicNER taxonomy.
    pub fn dynamicner() -> Self {
        Self::parse(DYNAMICNER_TAXONOMY).expect("shipped taxonomy is valid")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TaxonomyError> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, TaxonomyError> {
        struct Raw<'a> {
            line: usize,
            level: Level,
            name: &'a str,
            parent: Option<&'a str>,
        }

        let mut raws = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let lineno = i + 1;
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            let parse_err = |message: String| TaxonomyError::Parse { line: lineno, message };
            let level: Level = cols[0].parse().map_err(parse_err)?;
            let name = cols.get(1).map(|s| s.trim()).unwrap_or("");
            if name.is_empty() {
                return Err(parse_err("missing node name".into()));
            }
            let parent = match (level, cols.len()) {
                (Level::Coarse, 2) => None,
                (Level::Medium | Level::Fine, 3) => Some(cols[2].trim()),
                (Level::Flat, _) => return Err(parse_err("level must be coarse, medium or fine".into())),
                (_, n) => return Err(parse_err(format!("{n} columns for a {level} node"))),
            };
            raws.push(Raw {
                line: lineno,
                level,
                name,
                parent,
            });
        }

        let mut nodes: Vec<Node> = Vec::with_capacity(raws.len());
        let mut index = HashMap::new();
        for raw in &raws {
            let key = (raw.level, raw.name.to_string());
            if index.contains_key(&key) {
                return Err(TaxonomyError::Integrity(format!(
                    "line {}: duplicate {} name {:?}",
                    raw.line, raw.level, raw.name
                )));
            }
            index.insert(key, nodes.len());
            nodes.push(Node {
                name: raw.name.to_string(),
                level: raw.level,
                parent: None,
                children: Vec::new(),
            });
        }

        // Parents must sit exactly one level up, so the parent relation is
        // acyclic by construction.
        for (id, raw) in raws.iter().enumerate() {
            let Some(parent_name) = raw.parent else {
                continue;
            };
            let parent_level = raw.level.parent().expect("medium/fine have a parent level");
            let Some(&pid) = index.get(&(parent_level, parent_name.to_string())) else {
                return Err(TaxonomyError::Integrity(format!(
                    "line {}: {} node {:?} names nonexistent {} parent {:?}",
                    raw.line, raw.level, raw.name, parent_level, parent_name
                )));
            };
            nodes[id].parent = Some(pid);
            nodes[pid].children.push(id);
        }

        Ok(Self { nodes, index })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> &Node {
        &self.nodes[id]
    }

    /// Node counts as (coarse, medium, fine).
    pub fn counts(&self) -> (usize, usize, usize) {
        let count = |l| self.nodes.iter().filter(|n| n.level == l).count();
        (count(Level::Coarse), count(Level::Medium), count(Level::Fine))
    }

    pub fn find(&self, name: &str, level: Level) -> Option<usize> {
        self.index.get(&(level, name.to_string())).copied()
    }

    /// Resolve a bare name, preferring the finest level that has it.
    pub fn find_any(&self, name: &str) -> Option<usize> {
        [Level::Fine, Level::Medium, Level::Coarse]
            .into_iter()
            .find_map(|l| self.find(name, l))
    }

    /// Resolve a label. Flat labels are looked up at any level.
    pub fn resolve(&self, label: &Label) -> Option<usize> {
        match label {
            Label::Named {
                name,
                level: Level::Flat,
            } => self.find_any(name),
            Label::Named { name, level } => self.find(name, *level),
            Label::Unknown => None,
        }
    }

    pub fn names_at(&self, level: Level) -> impl Iterator<Item = &str> {
        self.nodes
            .iter()
            .filter(move |n| n.level == level)
            .map(|n| n.name.as_str())
    }

    /// The coarse names as a type list, file order.
    pub fn coarse_list(&self, allow_unknown: bool) -> TypeList {
        TypeList::new(self.names_at(Level::Coarse), allow_unknown)
            .expect("validated taxonomy has at least one coarse node with unique names")
    }

    pub fn children_names(&self, id: usize) -> Vec<&str> {
        self.nodes[id]
            .children
            .iter()
            .map(|&c| self.nodes[c].name.as_str())
            .collect()
    }

    /// Direct children of the node named by `label`, in file order.
    /// Leaves yield `None`: a type list is never empty.
    pub fn subcategories_of(&self, label: &Label) -> Result<Option<TypeList>, TaxonomyError> {
        let id = self
            .resolve(label)
            .ok_or_else(|| TaxonomyError::UnknownNode(label.to_string()))?;
        let children = self.children_names(id);
        if children.is_empty() {
            return Ok(None);
        }
        Ok(Some(
            TypeList::new(children, false).expect("sibling names are unique per level"),
        ))
    }

    /// Ancestor chain from the node up to its coarse root, excluding itself.
    pub fn ancestors(&self, id: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut cur = self.nodes[id].parent;
        while let Some(p) = cur {
            out.push(p);
            cur = self.nodes[p].parent;
        }
        out
    }

    pub fn is_ancestor(&self, ancestor: usize, of: usize) -> bool {
        self.ancestors(of).contains(&ancestor)
    }

    /// Label for a node id.
    pub fn label(&self, id: usize) -> Label {
        let n = &self.nodes[id];
        Label::named(n.name.clone(), n.level)
    }

    /// Serialize back to the line format.
    pub fn to_tax_string(&self) -> String {
        let mut out = String::new();
        for n in &self.nodes {
            out.push_str(n.level.as_str());
            out.push('\t');
            out.push_str(&n.name);
            if let Some(p) = n.parent {
                out.push('\t');
                out.push_str(&self.nodes[p].name);
            }
            out.push('\n');
        }
        out
    }

    /// Distinct node names down to `depth` (inclusive), file order.
    pub fn names_down_to(&self, depth: Level) -> Vec<String> {
        let mut seen = std::collections::HashSet::new();
        self.nodes
            .iter()
            .filter(|n| n.level.depth() <= depth.depth())
            .filter(|n| seen.insert(n.name.clone()))
            .map(|n| n.name.clone())
            .collect()
    }
}
