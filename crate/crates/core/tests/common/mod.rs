//! Seeded fixtures shared by the integration tests.
#![allow(dead_code)]

use std::collections::HashMap;

use cascadener::backend::{ChatMessage, GenerationParams, ScriptedChat};
use cascadener::markup::render_marked;
use cascadener::rng;
use cascadener::{AnnotatedSentence, Entity, EntitySpan, Label, Level, Sentence, Taxonomy, TypeList};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Script {
    Latin,
    Cjk,
    Cyrillic,
}

pub const SCRIPTS: [Script; 3] = [Script::Latin, Script::Cjk, Script::Cyrillic];

const LATIN: &[&str] = &[
    "Apple",
    "Boston",
    "University",
    "Paris",
    "the",
    "met",
    "in",
    "new",
    "Macbook",
    "river",
    "Obama",
    "café",
    "Zürich",
    "spoke",
    "about",
    "O'Neil",
    "and",
    "Ltd.",
    "(NYSE)",
    "42",
];
const CYRILLIC: &[&str] = &[
    "Москва",
    "Путин",
    "встретил",
    "в",
    "университет",
    "Газпром",
    "Санкт-Петербург",
    "и",
    "новый",
    "Ё",
];
const CJK: &[char] = &[
    '北', '京', '大', '学', '东', '京', '都', '上', '海', '的', '在', '了', '苹', '果', '公', '司', '。',
];

/// Random text in one script with a few non-overlapping spans whose ends
/// are not whitespace. Latin and Cyrillic spans cover whole words.
pub fn random_case(r: &mut ChaCha8Rng, id: &str, script: Script) -> (Sentence, Vec<EntitySpan>) {
    let (text, candidates): (String, Vec<(usize, usize)>) = match script {
        Script::Cjk => {
            let n = r.gen_range(4..30);
            let text: String = (0..n).map(|_| *CJK.choose(r).unwrap()).collect();
            (text, Vec::new())
        }
        Script::Latin | Script::Cyrillic => {
            let words = if script == Script::Latin { LATIN } else { CYRILLIC };
            let n = r.gen_range(2..14);
            let picked: Vec<&str> = (0..n).map(|_| *words.choose(r).unwrap()).collect();
            let mut bounds = Vec::new();
            let mut at = 0;
            for w in &picked {
                let len = w.chars().count();
                bounds.push((at, at + len));
                at += len + 1;
            }
            (picked.join(" "), bounds)
        }
    };
    let sentence = Sentence::new(id, text, "xx").unwrap();
    let spans = match script {
        Script::Cjk => {
            let len = sentence.char_len();
            let mut cuts: Vec<usize> = (0..r.gen_range(0..=6)).map(|_| r.gen_range(0..=len)).collect();
            cuts.sort_unstable();
            cuts.dedup();
            cuts.chunks_exact(2)
                .filter(|w| w[0] < w[1])
                .map(|w| sentence.span(w[0], w[1]).unwrap())
                .collect()
        }
        _ => {
            let mut out = Vec::new();
            let mut i = 0;
            while i < candidates.len() {
                if r.gen_bool(0.35) {
                    let k = r.gen_range(1..=3).min(candidates.len() - i);
                    out.push(sentence.span(candidates[i].0, candidates[i + k - 1].1).unwrap());
                    i += k + 1;
                } else {
                    i += 1;
                }
            }
            out
        }
    };
    (sentence, spans)
}

const E2E_TYPES: &[&str] = &["Person", "Location", "Organization", "Product"];

/// `n` gold records over the three scripts with flat labels; ids and texts
/// are unique.
pub fn gold_corpus(n: usize, seed: u64) -> Vec<AnnotatedSentence> {
    let mut r = rng::stream(seed, &["gold-corpus"]);
    let langs = ["en", "zh", "ru"];
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    let mut i = 0;
    while out.len() < n {
        let script = SCRIPTS[i % 3];
        let (s, spans) = random_case(&mut r, &format!("g{i:04}"), script);
        i += 1;
        if spans.is_empty() || !seen.insert(s.text.clone()) {
            continue;
        }
        let s = Sentence::new(format!("g{:04}", out.len()), s.text, langs[(i - 1) % 3]).unwrap();
        let entities = spans
            .into_iter()
            .map(|sp| Entity::new(sp, Label::flat(*E2E_TYPES.choose(&mut r).unwrap())))
            .collect();
        out.push(AnnotatedSentence::new(
            s,
            entities,
            TypeList::new(E2E_TYPES.iter().copied(), false).unwrap(),
        ));
    }
    out
}

pub fn e2e_types() -> TypeList {
    TypeList::new(E2E_TYPES.iter().copied(), false).unwrap()
}

fn last_user(msgs: &[ChatMessage]) -> Option<&str> {
    msgs.last().map(|m| m.content.as_str())
}

/// Extractor answering every round with the gold markup.
pub fn gold_extractor(gold: &[AnnotatedSentence]) -> ScriptedChat {
    let table: HashMap<String, String> = gold
        .iter()
        .map(|g| {
            (
                g.sentence.text.clone(),
                render_marked(&g.sentence, &g.spans()).unwrap().text().to_string(),
            )
        })
        .collect();
    ScriptedChat::new("gold-extractor").with_rule(move |msgs, _| table.get(last_user(msgs)?).cloned())
}

/// Extractor dropping each gold span from each round independently with
/// probability `omit`, seeded by sentence and round seed.
pub fn omitting_extractor(gold: &[AnnotatedSentence], omit: f64, seed: u64) -> ScriptedChat {
    let table: HashMap<String, Sentence> = gold
        .iter()
        .map(|g| (g.sentence.text.clone(), g.sentence.clone()))
        .collect();
    let spans: HashMap<String, Vec<EntitySpan>> = gold.iter().map(|g| (g.sentence.text.clone(), g.spans())).collect();
    ScriptedChat::new("omitting-extractor").with_rule(move |msgs, params: &GenerationParams| {
        let text = last_user(msgs)?;
        let s = table.get(text)?;
        let mut r = rng::stream(seed, &["omit", &s.id, &params.seed.to_string()]);
        let kept: Vec<EntitySpan> = spans[text].iter().filter(|_| !r.gen_bool(omit)).cloned().collect();
        Some(render_marked(s, &kept).unwrap().text().to_string())
    })
}

/// Classifier answering the gold label of the marked span; `unknown_for`
/// marked sentences get "unknown" instead.
pub fn gold_classifier(gold: &[AnnotatedSentence], unknown_for: &[String]) -> ScriptedChat {
    let mut table: HashMap<String, String> = HashMap::new();
    for g in gold {
        for e in &g.entities {
            let marked = render_marked(&g.sentence, std::slice::from_ref(&e.span)).unwrap();
            table.insert(marked.text().to_string(), e.label.name().unwrap().to_string());
        }
    }
    for u in unknown_for {
        table.insert(u.clone(), "unknown".to_string());
    }
    ScriptedChat::new("gold-classifier").with_rule(move |msgs, _| {
        let q = last_user(msgs)?;
        let line = q.lines().find_map(|l| l.strip_prefix("Sentence: "))?;
        table.get(line).cloned()
    })
}

/// Fine types of the dyncat fixture with their sampling weights: a balanced
/// body, two heavy types and a long rare tail.
pub const DYNCAT_TYPES: &[(&str, f64)] = &[
    ("Politician", 3.0),
    ("Country", 3.0),
    ("City", 1.0),
    ("Artist", 1.0),
    ("Athlete", 1.0),
    ("Company", 1.0),
    ("Software", 1.0),
    ("Film", 1.0),
    ("Song", 1.0),
    ("Hospital", 1.0),
    ("Airport", 1.0),
    ("Sports Team", 1.0),
    ("Disease", 1.0),
    ("Species", 1.0),
    ("Sporting Event", 1.0),
    ("Car", 1.0),
    ("Mountain", 1.0),
    ("Museum", 1.0),
    ("Band", 1.0),
    ("Religious Group", 1.0),
    ("Poem", 0.08),
    ("Mine", 0.08),
    ("Farm", 0.08),
    ("Desert", 0.08),
    ("Toys", 0.08),
    ("Protein", 0.08),
    ("Reaction", 0.08),
    ("Sculpture", 0.08),
    ("Port", 0.08),
    ("Law", 0.08),
];

const LANGS: &[&str] = &["en", "zh", "es", "fr", "de", "ja", "ko", "ru"];

fn pick<'a, R: Rng>(r: &mut R, items: &'a [(&'a str, f64)]) -> &'a str {
    let total: f64 = items.iter().map(|i| i.1).sum();
    let mut u = r.gen::<f64>() * total;
    for (name, w) in items {
        if u < *w {
            return name;
        }
        u -= w;
    }
    items[items.len() - 1].0
}

/// `n` records with one or two fine-level gold entities each and a type
/// list of the gold types plus four distractors, in shuffled order.
pub fn dyncat_fixture(n: usize, seed: u64) -> Vec<AnnotatedSentence> {
    let tax = Taxonomy::dynamicner();
    let fine: Vec<&str> = tax.names_at(Level::Fine).collect();
    let mut r = rng::stream(seed, &["dyncat-fixture"]);
    (0..n)
        .map(|i| {
            let k = if r.gen_bool(0.3) { 2 } else { 1 };
            let mut gold: Vec<&str> = Vec::new();
            while gold.len() < k {
                let t = pick(&mut r, DYNCAT_TYPES);
                if !gold.contains(&t) {
                    gold.push(t);
                }
            }
            let words: Vec<String> = (0..k).map(|j| format!("Ent{i}x{j}")).collect();
            let text = if k == 1 {
                format!("{} met nobody", words[0])
            } else {
                words.join(" met ")
            };
            let s = Sentence::new(format!("d{i:04}"), text, LANGS[i % LANGS.len()]).unwrap();
            let mut entities = Vec::new();
            let mut at = 0;
            for (j, w) in words.iter().enumerate() {
                let len = w.chars().count();
                entities.push(Entity::new(
                    s.span(at, at + len).unwrap(),
                    Label::named(gold[j], Level::Fine),
                ));
                at += len + " met ".chars().count();
            }
            let mut list: Vec<&str> = gold.clone();
            while list.len() < k + 4 {
                let d = fine[r.gen_range(0..fine.len())];
                if !list.contains(&d) {
                    list.push(d);
                }
            }
            list.shuffle(&mut r);
            AnnotatedSentence::new(s, entities, TypeList::new(list, false).unwrap())
        })
        .collect()
}
