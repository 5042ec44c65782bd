//! Prompt assembly for the three captioning tasks.
//!
//! Templates are plain text with `{name}` placeholders; `{{` and `}}` stand
//! for literal braces. Meta-examples for Task 3 are read from a TSV file with
//! `task, raw_index, revision_index, text` columns where revision index 0
//! holds the raw caption and 1..=5 its revisions.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{AreaAttributes, NonAreaAttributes};

pub const CROPPED_SENTENCE: &str = "Some parts of the geometry extended out of this ROI.";
pub const EXAMPLES_PER_PROMPT: usize = 5;
pub const REVISIONS_PER_RAW: usize = 5;

const DEFAULT_TASK1: &str = include_str!("../assets/templates/task1.txt");
const DEFAULT_TASK2: &str = include_str!("../assets/templates/task2.txt");
const DEFAULT_TASK3: &str = include_str!("../assets/templates/task3.txt");
const DEFAULT_META_EXAMPLES: &str = include_str!("../assets/meta_examples.tsv");

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("template syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("no value for placeholder {{{0}}}")]
    MissingPlaceholder(String),
    #[error("template for {expected} used where {found} was required")]
    WrongTemplate { expected: TaskKind, found: TaskKind },
    #[error("caption to revise is empty")]
    EmptyCaption,
    #[error("expected {EXAMPLES_PER_PROMPT} example pairs, got {0}")]
    WrongExampleCount(usize),
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("meta-example line {line}: {reason}")]
    MetaExamples { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Task1,
    Task2,
    Task3,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Task1 => "task1",
            TaskKind::Task2 => "task2",
            TaskKind::Task3 => "task3",
        }
    }

    /// Placeholders the assembler fills for this task.
    pub fn slots(self) -> Vec<String> {
        match self {
            TaskKind::Task1 => ["location", "shape", "size", "geometry", "cropped", "tags"].map(String::from).to_vec(),
            TaskKind::Task2 => {
                ["endpoints", "sinuosity", "normalized_length", "length", "orientation", "geometry", "cropped", "tags"]
                    .map(String::from)
                    .to_vec()
            }
            TaskKind::Task3 => {
                let mut v = vec!["caption".to_string()];
                for i in 1..=EXAMPLES_PER_PROMPT {
                    v.push(format!("example_raw_{i}"));
                    v.push(format!("example_revision_{i}"));
                }
                v
            }
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "task1" => Ok(TaskKind::Task1),
            "task2" => Ok(TaskKind::Task2),
            "task3" => Ok(TaskKind::Task3),
            other => Err(format!("unknown task {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Text(String),
    Slot(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub task: TaskKind,
    segments: Vec<Segment>,
}

fn parse_segments(text: &str) -> Result<Vec<Segment>, PromptError> {
    let mut out = Vec::new();
    let mut lit = String::new();
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < text.len() {
        let c = bytes[i];
        if c == b'{' && bytes.get(i + 1) == Some(&b'{') {
            lit.push('{');
            i += 2;
        } else if c == b'}' && bytes.get(i + 1) == Some(&b'}') {
            lit.push('}');
            i += 2;
        } else if c == b'{' {
            let end = text[i..]
                .find('}')
                .map(|e| i + e)
                .ok_or_else(|| PromptError::Syntax { offset: i, message: "unclosed placeholder".into() })?;
            let name = &text[i + 1..end];
            let valid = name.chars().next().is_some_and(|c| c.is_ascii_lowercase())
                && name.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_');
            if !valid {
                return Err(PromptError::Syntax { offset: i, message: format!("bad placeholder name {name:?}") });
            }
            if !lit.is_empty() {
                out.push(Segment::Text(std::mem::take(&mut lit)));
            }
            out.push(Segment::Slot(name.to_string()));
            i = end + 1;
        } else if c == b'}' {
            return Err(PromptError::Syntax { offset: i, message: "stray '}'".into() });
        } else {
            let ch = text[i..].chars().next().unwrap();
            lit.push(ch);
            i += ch.len_utf8();
        }
    }
    if !lit.is_empty() {
        out.push(Segment::Text(lit));
    }
    Ok(out)
}

impl PromptTemplate {
    /// Parses a template and checks that every placeholder it uses is one
    /// the task's assembler provides.
    pub fn new(task: TaskKind, text: &str) -> Result<Self, PromptError> {
        let segments = parse_segments(text)?;
        let known = task.slots();
        for s in &segments {
            if let Segment::Slot(name) = s {
                if !known.contains(name) {
                    return Err(PromptError::MissingPlaceholder(name.clone()));
                }
            }
        }
        Ok(Self { task, segments })
    }

    pub fn placeholders(&self) -> Vec<&str> {
        self.segments
            .iter()
            .filter_map(|s| match s {
                Segment::Slot(n) => Some(n.as_str()),
                Segment::Text(_) => None,
            })
            .collect()
    }

    /// Single-pass substitution; values are inserted verbatim.
    pub fn render(&self, values: &HashMap<&str, String>) -> Result<String, PromptError> {
        let mut out = String::new();
        for s in &self.segments {
            match s {
                Segment::Text(t) => out.push_str(t),
                Segment::Slot(n) => {
                    out.push_str(values.get(n.as_str()).ok_or_else(|| PromptError::MissingPlaceholder(n.clone()))?)
                }
            }
        }
        Ok(out)
    }

    fn expect(&self, task: TaskKind) -> Result<(), PromptError> {
        if self.task != task {
            return Err(PromptError::WrongTemplate { expected: self.task, found: task });
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TemplateSet {
    pub task1: PromptTemplate,
    pub task2: PromptTemplate,
    pub task3: PromptTemplate,
}

impl TemplateSet {
    pub fn defaults() -> Self {
        Self {
            task1: PromptTemplate::new(TaskKind::Task1, DEFAULT_TASK1).expect("bundled task1 template"),
            task2: PromptTemplate::new(TaskKind::Task2, DEFAULT_TASK2).expect("bundled task2 template"),
            task3: PromptTemplate::new(TaskKind::Task3, DEFAULT_TASK3).expect("bundled task3 template"),
        }
    }

    /// Reads `task1.txt`, `task2.txt` and `task3.txt` from `dir`.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self, PromptError> {
        let dir = dir.as_ref();
        let read = |task: TaskKind| {
            let path = dir.join(format!("{task}.txt"));
            let text = std::fs::read_to_string(&path)
                .map_err(|source| PromptError::Io { path: path.display().to_string(), source })?;
            PromptTemplate::new(task, &text)
        };
        Ok(Self { task1: read(TaskKind::Task1)?, task2: read(TaskKind::Task2)?, task3: read(TaskKind::Task3)? })
    }

    pub fn get(&self, task: TaskKind) -> &PromptTemplate {
        match task {
            TaskKind::Task1 => &self.task1,
            TaskKind::Task2 => &self.task2,
            TaskKind::Task3 => &self.task3,
        }
    }
}

fn cropped(is_cropped: bool) -> String {
    if is_cropped { CROPPED_SENTENCE.to_string() } else { String::new() }
}

pub fn assemble_task1(
    attrs: &AreaAttributes,
    tag_interps: &[String],
    template: &PromptTemplate,
) -> Result<String, PromptError> {
    template.expect(TaskKind::Task1)?;
    let values = HashMap::from([
        ("location", attrs.coarse_location.to_string()),
        ("shape", attrs.shape.to_string()),
        ("size", attrs.size_str()),
        ("geometry", attrs.simplified_geometry.clone()),
        ("cropped", cropped(attrs.is_cropped)),
        ("tags", tag_interps.join("\n")),
    ]);
    template.render(&values)
}

pub fn assemble_task2(
    attrs: &NonAreaAttributes,
    tag_interps: &[String],
    template: &PromptTemplate,
) -> Result<String, PromptError> {
    template.expect(TaskKind::Task2)?;
    let values = HashMap::from([
        ("endpoints", attrs.endpoints_str()),
        ("sinuosity", attrs.sinuosity.to_string()),
        ("normalized_length", attrs.normalized_length_str()),
        ("length", attrs.length_m.to_string()),
        ("orientation", attrs.orientation.to_string()),
        ("geometry", attrs.simplified_geometry.clone()),
        ("cropped", cropped(attrs.is_cropped)),
        ("tags", tag_interps.join("\n")),
    ]);
    template.render(&values)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExamplePair {
    pub raw: String,
    pub revision: String,
    /// 1-based index of the chosen revision.
    pub revision_index: usize,
}

pub fn assemble_task3(caption: &str, examples: &[ExamplePair], template: &PromptTemplate) -> Result<String, PromptError> {
    template.expect(TaskKind::Task3)?;
    if caption.trim().is_empty() {
        return Err(PromptError::EmptyCaption);
    }
    if examples.len() != EXAMPLES_PER_PROMPT {
        return Err(PromptError::WrongExampleCount(examples.len()));
    }
    let mut values = HashMap::new();
    let keys: Vec<(String, String)> =
        (1..=EXAMPLES_PER_PROMPT).map(|i| (format!("example_raw_{i}"), format!("example_revision_{i}"))).collect();
    for ((kr, kv), ex) in keys.iter().zip(examples) {
        values.insert(kr.as_str(), ex.raw.clone());
        values.insert(kv.as_str(), ex.revision.clone());
    }
    values.insert("caption", caption.trim().to_string());
    template.render(&values)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetaExample {
    pub raw: String,
    pub revisions: Vec<String>,
}

/// Hand-written raw captions with five revisions each, per description task.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetaExampleSet {
    pub task1: Vec<MetaExample>,
    pub task2: Vec<MetaExample>,
}

impl MetaExampleSet {
    pub fn defaults() -> Self {
        Self::parse(DEFAULT_META_EXAMPLES).expect("bundled meta-examples")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PromptError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| PromptError::Io { path: path.display().to_string(), source })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, PromptError> {
        let n = EXAMPLES_PER_PROMPT;
        let mut cells: HashMap<(TaskKind, usize, usize), String> = HashMap::new();
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let bad = |reason: String| PromptError::MetaExamples { line: line_no, reason };
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.splitn(4, '\t').collect();
            if f.len() != 4 {
                return Err(bad(format!("expected 4 fields, found {}", f.len())));
            }
            let task: TaskKind = f[0].parse().map_err(bad)?;
            if task == TaskKind::Task3 {
                return Err(bad("meta-examples belong to task1 or task2".into()));
            }
            let raw: usize = f[1].parse().map_err(|_| bad(format!("bad raw index {:?}", f[1])))?;
            let rev: usize = f[2].parse().map_err(|_| bad(format!("bad revision index {:?}", f[2])))?;
            if !(1..=n).contains(&raw) || rev > REVISIONS_PER_RAW {
                return Err(bad(format!("index ({raw}, {rev}) out of range")));
            }
            if f[3].trim().is_empty() {
                return Err(bad("empty text".into()));
            }
            if cells.insert((task, raw, rev), f[3].trim().to_string()).is_some() {
                return Err(bad(format!("duplicate entry ({task}, {raw}, {rev})")));
            }
        }
        let mut take = |task: TaskKind| -> Result<Vec<MetaExample>, PromptError> {
            (1..=n)
                .map(|raw| {
                    let mut get = |rev: usize| {
                        cells.remove(&(task, raw, rev)).ok_or_else(|| PromptError::MetaExamples {
                            line: 0,
                            reason: format!("missing entry ({task}, {raw}, {rev})"),
                        })
                    };
                    Ok(MetaExample { raw: get(0)?, revisions: (1..=REVISIONS_PER_RAW).map(get).collect::<Result<_, _>>()? })
                })
                .collect()
        };
        Ok(Self { task1: take(TaskKind::Task1)?, task2: take(TaskKind::Task2)? })
    }

    /// Examples for a description task; Task 3 has none of its own.
    pub fn for_task(&self, task: TaskKind) -> &[MetaExample] {
        match task {
            TaskKind::Task1 => &self.task1,
            TaskKind::Task2 => &self.task2,
            TaskKind::Task3 => &[],
        }
    }
}

/// One revision per raw caption, chosen uniformly, in shuffled order.
pub fn sample_task3_examples<R: Rng + ?Sized>(set: &MetaExampleSet, task: TaskKind, rng: &mut R) -> Vec<ExamplePair> {
    let mut pairs: Vec<ExamplePair> = set
        .for_task(task)
        .iter()
        .map(|ex| {
            let j = rng.gen_range(0..ex.revisions.len());
            ExamplePair { raw: ex.raw.clone(), revision: ex.revisions[j].clone(), revision_index: j + 1 }
        })
        .collect();
    pairs.shuffle(rng);
    pairs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{GridLabel, Orientation, ShapeClass, Sinuosity};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use regex::Regex;

    fn unresolved(text: &str) -> bool {
        Regex::new(r"\{[a-z][a-z0-9_]*\}").unwrap().is_match(text)
    }

    fn area(cropped: bool) -> AreaAttributes {
        AreaAttributes {
            coarse_location: GridLabel::Center,
            shape: ShapeClass::Square,
            normalized_size: 0.3,
            simplified_geometry: "{[(0.200, 0.200), (0.750, 0.200), (0.750, 0.750), (0.200, 0.750), (0.200, 0.200)]}"
                .into(),
            is_cropped: cropped,
        }
    }

    fn line() -> NonAreaAttributes {
        NonAreaAttributes {
            endpoint_locations: (GridLabel::CenterBottom, GridLabel::CenterTop),
            sinuosity: Sinuosity::Straight,
            normalized_length: 1.004,
            length_m: 270,
            orientation: Orientation::SouthNorth,
            simplified_geometry: "{[(0.500, 0.000), (0.500, 1.000)]}".into(),
            is_cropped: true,
        }
    }

    fn raw_block(p: &str) -> &str {
        &p[p.find("###Task###").unwrap()..]
    }

    #[test]
    fn task1_cropped_sentence() {
        let t = TemplateSet::defaults();
        let p = assemble_task1(&area(true), &["landuse: farmland.".into()], &t.task1).unwrap();
        assert!(raw_block(&p).contains(CROPPED_SENTENCE));
        let p = assemble_task1(&area(false), &[], &t.task1).unwrap();
        assert!(!raw_block(&p).contains(CROPPED_SENTENCE));
        assert!(!unresolved(&p));
    }

    #[test]
    fn task1_literals_in_raw_block() {
        let p = assemble_task1(&area(false), &[], &TemplateSet::defaults().task1).unwrap();
        let raw = raw_block(&p);
        for lit in ["center", "square", "0.300", &area(false).simplified_geometry] {
            assert!(raw.contains(lit), "{lit}");
        }
        assert!(p.ends_with("Caption:"));
        assert!(p.contains("words denoting uncertainty"));
        assert!(p.contains("###Instruction###") && p.contains("###Captioning Objective###"));
    }

    #[test]
    fn task2_literals() {
        let p = assemble_task2(&line(), &[], &TemplateSet::defaults().task2).unwrap();
        let raw = raw_block(&p);
        assert!(raw.contains("S_N") && raw.contains("270"));
        assert!(raw.contains("Tags:\n\nCaption:"));
        assert!(raw.contains(CROPPED_SENTENCE));
        assert!(!unresolved(&p));
    }

    #[test]
    fn wrong_template_rejected() {
        let t = TemplateSet::defaults();
        assert!(matches!(assemble_task1(&area(false), &[], &t.task2), Err(PromptError::WrongTemplate { .. })));
    }

    #[test]
    fn template_syntax() {
        let t = PromptTemplate::new(TaskKind::Task1, "a {{literal}} {shape}").unwrap();
        assert_eq!(t.placeholders(), ["shape"]);
        let out = t.render(&HashMap::from([("shape", "round".to_string())])).unwrap();
        assert_eq!(out, "a {literal} round");
        assert!(matches!(PromptTemplate::new(TaskKind::Task1, "{nope}"), Err(PromptError::MissingPlaceholder(_))));
        assert!(matches!(PromptTemplate::new(TaskKind::Task1, "x {shape"), Err(PromptError::Syntax { .. })));
        assert!(matches!(t.render(&HashMap::new()), Err(PromptError::MissingPlaceholder(n)) if n == "shape"));
    }

    #[test]
    fn meta_examples_structure() {
        let set = MetaExampleSet::defaults();
        for task in [TaskKind::Task1, TaskKind::Task2] {
            assert_eq!(set.for_task(task).len(), 5);
            assert!(set.for_task(task).iter().all(|e| e.revisions.len() == 5));
        }
    }

    #[test]
    fn meta_examples_reject_missing_revision() {
        let text: String = DEFAULT_META_EXAMPLES.lines().filter(|l| !l.starts_with("task2\t3\t4\t")).collect::<Vec<_>>().join("\n");
        assert!(matches!(MetaExampleSet::parse(&text), Err(PromptError::MetaExamples { .. })));
        let extra = format!("{DEFAULT_META_EXAMPLES}task1\t6\t0\textra\n");
        assert!(MetaExampleSet::parse(&extra).is_err());
    }

    #[test]
    fn sampling_covers_each_raw_once() {
        let set = MetaExampleSet::defaults();
        let a = sample_task3_examples(&set, TaskKind::Task1, &mut ChaCha8Rng::seed_from_u64(42));
        let b = sample_task3_examples(&set, TaskKind::Task1, &mut ChaCha8Rng::seed_from_u64(42));
        assert_eq!(a, b);
        assert_eq!(a.len(), 5);
        let mut raws: Vec<_> = a.iter().map(|p| p.raw.clone()).collect();
        raws.sort();
        let mut expect: Vec<_> = set.task1.iter().map(|e| e.raw.clone()).collect();
        expect.sort();
        assert_eq!(raws, expect);
    }

    #[test]
    fn task3_prompt() {
        let set = MetaExampleSet::defaults();
        let t = TemplateSet::defaults();
        let ex = sample_task3_examples(&set, TaskKind::Task2, &mut ChaCha8Rng::seed_from_u64(1));
        let cap = "A unique caption about a road.";
        let p = assemble_task3(cap, &ex, &t.task3).unwrap();
        assert_eq!(p.matches(cap).count(), 1);
        assert_eq!(p.matches("\nRevised: ").count(), 5);
        assert!(p.ends_with("Revised:"));
        assert!(!unresolved(&p));
        assert!(matches!(assemble_task3("  \n", &ex, &t.task3), Err(PromptError::EmptyCaption)));
        assert!(matches!(assemble_task3(cap, &ex[..4], &t.task3), Err(PromptError::WrongExampleCount(4))));
    }
}
