//! Classifier half of the cascade: one entity at a time, marked in its
//! sentence, labeled against a type list. Multi-level taxonomies are walked
//! top-down, re-asking with the chosen node's children.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, ChatBackend, ChatMessage, GenerationParams};
use crate::markup::MarkedText;
use crate::taxonomy::{Taxonomy, TaxonomyError};
use crate::types::{Label, Level, TypeList, UNKNOWN};

pub const CLASSIFICATION_SYSTEM_PROMPT: &str =
    "Label the entity surrounded by ## in the sentence with one of the given types.";

/// Appended to the query in zero-shot mode.
pub const ZERO_SHOT_SUFFIX: &str = "If none of them applied, return unknown";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClassificationError {
    #[error("classification query must mark exactly one entity, found {0}")]
    RegionCount(usize),
    #[error("demonstration label {0:?} is not in its type list")]
    DemoLabel(String),
    #[error("cannot map {generation:?} to a listed type: {reason}")]
    UnparseableLabel { generation: String, reason: String },
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyErrorMessage),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Cloneable rendering of a taxonomy lookup failure.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{0}")]
pub struct TaxonomyErrorMessage(pub String);

impl From<TaxonomyError> for ClassificationError {
    fn from(e: TaxonomyError) -> Self {
        ClassificationError::Taxonomy(TaxonomyErrorMessage(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Supervised,
    ZeroShot,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassificationQuery {
    marked: MarkedText,
    type_list: TypeList,
    mode: Mode,
    level: Level,
}

impl ClassificationQuery {
    pub fn new(marked: MarkedText, type_list: TypeList, mode: Mode) -> Result<Self, ClassificationError> {
        let n = marked.region_count();
        if n != 1 {
            return Err(ClassificationError::RegionCount(n));
        }
        let allow = type_list.allow_unknown() || mode == Mode::ZeroShot;
        Ok(Self {
            marked,
            type_list: type_list.with_unknown(allow),
            mode,
            level: Level::Flat,
        })
    }

    /// Level attached to labels parsed from answers to this query.
    pub fn at_level(mut self, level: Level) -> Self {
        self.level = level;
        self
    }

    pub fn marked(&self) -> &MarkedText {
        &self.marked
    }

    pub fn type_list(&self) -> &TypeList {
        &self.type_list
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn level(&self) -> Level {
        self.level
    }

    /// User turn of the query.
    pub fn render(&self) -> String {
        let mut out = format!(
            "Types: {}\nSentence: {}",
            self.type_list.names().join(", "),
            self.marked.text()
        );
        if self.mode == Mode::ZeroShot {
            out.push('\n');
            out.push_str(ZERO_SHOT_SUFFIX);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationConfig {
    pub seed: u64,
    pub max_tokens: u32,
}

impl Default for ClassificationConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            max_tokens: 32,
        }
    }
}

pub fn build_classification_prompt(
    q: &ClassificationQuery,
    demos: &[(ClassificationQuery, Label)],
) -> Result<Vec<ChatMessage>, ClassificationError> {
    let mut messages = Vec::with_capacity(2 + 2 * demos.len());
    messages.push(ChatMessage::system(CLASSIFICATION_SYSTEM_PROMPT));
    for (dq, label) in demos {
        if !dq.type_list.admits(label) {
            return Err(ClassificationError::DemoLabel(label.to_string()));
        }
        messages.push(ChatMessage::user(dq.render()));
        messages.push(ChatMessage::assistant(label.to_string()));
    }
    messages.push(ChatMessage::user(q.render()));
    Ok(messages)
}

fn normalize(s: &str) -> String {
    s.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase()
}

/// Map a free-form answer to a label.
///
/// Rules, in order: exact match ignoring case and surrounding punctuation;
/// exactly one listed name occurring as a substring; the word `unknown`
/// when the list admits it.
pub fn parse_label(generation: &str, tl: &TypeList, level: Level) -> Result<Label, ClassificationError> {
    let answer = normalize(generation);
    if let Some(name) = tl.names().iter().find(|n| normalize(n) == answer) {
        return Ok(Label::named(name.clone(), level));
    }
    let haystack = generation.to_lowercase();
    let hits: Vec<&String> = tl
        .names()
        .iter()
        .filter(|n| {
            let needle = n.to_lowercase();
            !needle.is_empty() && haystack.contains(&needle)
        })
        .collect();
    if hits.len() == 1 {
        return Ok(Label::named(hits[0].clone(), level));
    }
    if tl.allow_unknown() && answer == UNKNOWN {
        return Ok(Label::Unknown);
    }
    let reason = if hits.len() > 1 {
        format!("ambiguous between {} listed names", hits.len())
    } else {
        "no listed name matches".to_string()
    };
    Err(ClassificationError::UnparseableLabel {
        generation: generation.to_string(),
        reason,
    })
}

/// Greedy classification with one corrective reprompt.
pub fn classify_entity(
    backend: &dyn ChatBackend,
    q: &ClassificationQuery,
    demos: &[(ClassificationQuery, Label)],
    cfg: &ClassificationConfig,
) -> Result<Label, ClassificationError> {
    let mut messages = build_classification_prompt(q, demos)?;
    let params = GenerationParams::greedy(cfg.seed, cfg.max_tokens);
    let first = backend.chat_complete(&messages, &params)?;
    match parse_label(&first, &q.type_list, q.level) {
        Ok(label) => Ok(label),
        Err(_) => {
            if !first.is_empty() {
                messages.push(ChatMessage::assistant(first));
            }
            let mut ask = format!("Answer with exactly one of: {}.", q.type_list.names().join(", "));
            if q.type_list.allow_unknown() {
                ask.push_str(" Answer unknown if none applies.");
            }
            messages.push(ChatMessage::user(ask));
            let second = backend.chat_complete(&messages, &params)?;
            parse_label(&second, &q.type_list, q.level)
        }
    }
}

/// Labels collected while descending the taxonomy, coarsest first.
/// Ends at a leaf, at an Unknown answer, or at the depth limit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProgressiveLabels {
    pub path: Vec<Label>,
}

impl ProgressiveLabels {
    pub fn coarse(&self) -> &Label {
        &self.path[0]
    }

    pub fn medium(&self) -> Option<&Label> {
        self.path.get(1)
    }

    pub fn fine(&self) -> Option<&Label> {
        self.path.get(2)
    }

    /// Deepest non-Unknown label, or Unknown when even the top level was.
    pub fn deepest(&self) -> Label {
        self.path
            .iter()
            .rev()
            .find(|l| !l.is_unknown())
            .cloned()
            .unwrap_or(Label::Unknown)
    }

    /// Label at a given level, if the descent reached it.
    pub fn at(&self, level: Level) -> Option<&Label> {
        self.path.get(level.depth())
    }
}

/// Classify over the coarse names, then over each chosen node's children
/// until a leaf, an Unknown answer, or `max_depth`.
pub fn classify_progressive(
    backend: &dyn ChatBackend,
    marked: &MarkedText,
    tax: &Taxonomy,
    mode: Mode,
    max_depth: Level,
    cfg: &ClassificationConfig,
) -> Result<ProgressiveLabels, ClassificationError> {
    let mut list = tax.coarse_list(mode == Mode::ZeroShot);
    let mut level = Level::Coarse;
    let mut path = Vec::with_capacity(3);
    loop {
        let q = ClassificationQuery::new(marked.clone(), list, mode)?.at_level(level);
        let label = classify_entity(backend, &q, &[], cfg)?;
        path.push(label.clone());
        if label.is_unknown() || level.depth() >= max_depth.depth() {
            break;
        }
        match (tax.subcategories_of(&label)?, level.child()) {
            (Some(children), Some(next)) => {
                list = children;
                level = next;
            }
            _ => break,
        }
    }
    Ok(ProgressiveLabels { path })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::ScriptedChat;
    use crate::markup::render_marked;
    use crate::types::Sentence;

    fn marked() -> MarkedText {
        let s = Sentence::new("s", "Apple proposes new Macbook", "en").unwrap();
        render_marked(&s, &[s.span(0, 5).unwrap()]).unwrap()
    }

    fn list() -> TypeList {
        TypeList::new(["Person", "Location", "Organization"], false).unwrap()
    }

    #[test]
    fn supervised_prompt() {
        let tl = TypeList::new(["Person", "Location"], false).unwrap();
        let q = ClassificationQuery::new(marked(), tl, Mode::Supervised).unwrap();
        let msgs = build_classification_prompt(&q, &[]).unwrap();
        let last = &msgs.last().unwrap().content;
        assert!(last.contains("Person, Location"));
        assert!(last.contains("##Apple## proposes new Macbook"));
        assert!(!last.contains(ZERO_SHOT_SUFFIX));
    }

    #[test]
    fn zero_shot_prompt() {
        let q = ClassificationQuery::new(marked(), list(), Mode::ZeroShot).unwrap();
        let msgs = build_classification_prompt(&q, &[]).unwrap();
        assert!(msgs
            .last()
            .unwrap()
            .content
            .ends_with("\nIf none of them applied, return unknown"));
        assert!(q.type_list().allow_unknown());
    }

    #[test]
    fn demos_become_turns() {
        let q = ClassificationQuery::new(marked(), list(), Mode::Supervised).unwrap();
        let demo = (q.clone(), Label::flat("Organization"));
        let msgs = build_classification_prompt(&q, &[demo.clone(), demo.clone(), demo]).unwrap();
        assert_eq!(msgs.len(), 8);
        assert_eq!(msgs[2].content, "Organization");
        let bad = (q.clone(), Label::flat("Animal"));
        assert!(build_classification_prompt(&q, &[bad]).is_err());
    }

    #[test]
    fn query_needs_exactly_one_region() {
        let two = MarkedText::new("##Apple## proposes new ##Macbook##", "s").unwrap();
        assert_eq!(
            ClassificationQuery::new(two, list(), Mode::Supervised),
            Err(ClassificationError::RegionCount(2))
        );
    }

    #[test]
    fn parse_label_cascade() {
        let tl = list();
        assert_eq!(
            parse_label("location", &tl, Level::Flat).unwrap(),
            Label::flat("Location")
        );
        assert_eq!(
            parse_label("  Organization.\n", &tl, Level::Flat).unwrap(),
            Label::flat("Organization")
        );
        assert_eq!(
            parse_label("It is a Person.", &tl, Level::Flat).unwrap(),
            Label::flat("Person")
        );
        assert!(parse_label("unknown", &tl, Level::Flat).is_err());
        let zs = tl.clone().with_unknown(true);
        assert_eq!(parse_label("Unknown.", &zs, Level::Flat).unwrap(), Label::Unknown);
        assert!(matches!(
            parse_label("Person or Location", &tl, Level::Flat),
            Err(ClassificationError::UnparseableLabel { .. })
        ));
        assert!(parse_label("banana", &tl, Level::Flat).is_err());
    }

    #[test]
    fn classify_with_mock() {
        let q = ClassificationQuery::new(marked(), list(), Mode::Supervised).unwrap();
        let msgs = build_classification_prompt(&q, &[]).unwrap();
        let mock = ScriptedChat::new("cls").with(&msgs, "Location");
        let cfg = ClassificationConfig::default();
        assert_eq!(classify_entity(&mock, &q, &[], &cfg).unwrap(), Label::flat("Location"));
    }

    #[test]
    fn garbage_twice_is_unparseable() {
        let q = ClassificationQuery::new(marked(), list(), Mode::Supervised).unwrap();
        let mock = ScriptedChat::new("cls").with_rule(|_, _| Some("no idea".into()));
        assert!(matches!(
            classify_entity(&mock, &q, &[], &ClassificationConfig::default()),
            Err(ClassificationError::UnparseableLabel { .. })
        ));
    }

    #[test]
    fn reprompt_recovers() {
        let q = ClassificationQuery::new(marked(), list(), Mode::Supervised).unwrap();
        let mock = ScriptedChat::new("cls")
            .with_rule(|msgs, _| Some(if msgs.len() > 2 { "Organization" } else { "hmm" }.into()));
        assert_eq!(
            classify_entity(&mock, &q, &[], &ClassificationConfig::default()).unwrap(),
            Label::flat("Organization")
        );
    }

    #[test]
    fn zero_shot_unknown() {
        let q = ClassificationQuery::new(marked(), list(), Mode::ZeroShot).unwrap();
        let mock = ScriptedChat::new("cls").with_rule(|_, _| Some("unknown".into()));
        assert_eq!(
            classify_entity(&mock, &q, &[], &ClassificationConfig::default()).unwrap(),
            Label::Unknown
        );
    }

    /// Answers by looking up which known option appears in the type list.
    fn path_mock(path: &'static [&'static str]) -> ScriptedChat {
        ScriptedChat::new("cls").with_rule(move |msgs, _| {
            let last = &msgs.last()?.content;
            let types = last.lines().next()?.strip_prefix("Types: ")?;
            let names: Vec<&str> = types.split(", ").collect();
            path.iter()
                .find(|p| names.contains(p))
                .map(|p| p.to_string())
                .or(Some("unknown".into()))
        })
    }

    #[test]
    fn progressive_descent() {
        let tax = Taxonomy::dynamicner();
        let mock = path_mock(&["Person", "Real Person", "Politician"]);
        let labels = classify_progressive(
            &mock,
            &marked(),
            &tax,
            Mode::Supervised,
            Level::Fine,
            &ClassificationConfig::default(),
        )
        .unwrap();
        assert_eq!(
            labels.path,
            vec![
                Label::named("Person", Level::Coarse),
                Label::named("Real Person", Level::Medium),
                Label::named("Politician", Level::Fine),
            ]
        );
        assert_eq!(labels.deepest(), Label::named("Politician", Level::Fine));
    }

    #[test]
    fn progressive_stops_on_unknown_and_depth() {
        let tax = Taxonomy::dynamicner();
        let mock = path_mock(&[]);
        let labels = classify_progressive(
            &mock,
            &marked(),
            &tax,
            Mode::ZeroShot,
            Level::Fine,
            &ClassificationConfig::default(),
        )
        .unwrap();
        assert_eq!(labels.path, vec![Label::Unknown]);
        assert!(labels.medium().is_none() && labels.fine().is_none());

        let mock = path_mock(&["Person", "Real Person", "Politician"]);
        let labels = classify_progressive(
            &mock,
            &marked(),
            &tax,
            Mode::Supervised,
            Level::Medium,
            &ClassificationConfig::default(),
        )
        .unwrap();
        assert_eq!(labels.path.len(), 2);
    }

    #[test]
    fn progressive_on_degenerate_taxonomy() {
        let tax = Taxonomy::parse("coarse\tThing\ncoarse\tOther\n").unwrap();
        let mock = path_mock(&["Thing"]);
        let labels = classify_progressive(
            &mock,
            &marked(),
            &tax,
            Mode::Supervised,
            Level::Fine,
            &ClassificationConfig::default(),
        )
        .unwrap();
        assert_eq!(labels.path, vec![Label::named("Thing", Level::Coarse)]);
    }
}
