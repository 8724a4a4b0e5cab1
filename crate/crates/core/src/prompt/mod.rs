//! Prompt template registry.
//!
//! Templates are plain text with single-brace `{name}` slots. Names may
//! contain spaces (`{video frames}`). `{{` and `}}` are literal braces.
//! The registry ships the built-in template set compiled in, and can also
//! load an on-disk directory laid out as `templates/<id>.txt`.

pub mod schema;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use schema::{parse_structured, ParseError, SchemaId, Structured, StructuredOutput};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    StoryImprov,
    GenerateActions,
    GenerateStoryPart,
    Hints,
    Endings,
    ThreeThings,
    Initializer,
    Conclusion,
    KeypointTrailer,
    MotionLabel,
}

impl TemplateId {
    pub const ALL: [TemplateId; 10] = [
        TemplateId::StoryImprov,
        TemplateId::GenerateActions,
        TemplateId::GenerateStoryPart,
        TemplateId::Hints,
        TemplateId::Endings,
        TemplateId::ThreeThings,
        TemplateId::Initializer,
        TemplateId::Conclusion,
        TemplateId::KeypointTrailer,
        TemplateId::MotionLabel,
    ];

    /// The six templates published with the method, kept byte-identical.
    pub const PUBLISHED: [TemplateId; 6] = [
        TemplateId::StoryImprov,
        TemplateId::GenerateActions,
        TemplateId::GenerateStoryPart,
        TemplateId::Hints,
        TemplateId::Endings,
        TemplateId::ThreeThings,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::StoryImprov => "story_improv",
            TemplateId::GenerateActions => "generate_actions",
            TemplateId::GenerateStoryPart => "generate_story_part",
            TemplateId::Hints => "hints",
            TemplateId::Endings => "endings",
            TemplateId::ThreeThings => "three_things",
            TemplateId::Initializer => "initializer",
            TemplateId::Conclusion => "conclusion",
            TemplateId::KeypointTrailer => "keypoint_trailer",
            TemplateId::MotionLabel => "motion_label",
        }
    }

    /// Schema the model is asked to answer in, if any.
    pub fn output_schema(self) -> Option<SchemaId> {
        match self {
            TemplateId::StoryImprov | TemplateId::GenerateStoryPart | TemplateId::Conclusion => {
                Some(SchemaId::StorySegmentWithKeypoints)
            }
            TemplateId::GenerateActions => Some(SchemaId::ActionsList),
            TemplateId::Hints => Some(SchemaId::HintsList),
            TemplateId::Endings => Some(SchemaId::EndingsSetup),
            TemplateId::ThreeThings => Some(SchemaId::QuestionsList),
            TemplateId::Initializer => Some(SchemaId::InitializerOutput),
            TemplateId::KeypointTrailer | TemplateId::MotionLabel => None,
        }
    }

    fn builtin_body(self) -> &'static str {
        match self {
            TemplateId::StoryImprov => include_str!("../../templates/story_improv.txt"),
            TemplateId::GenerateActions => include_str!("../../templates/generate_actions.txt"),
            TemplateId::GenerateStoryPart => {
                include_str!("../../templates/generate_story_part.txt")
            }
            TemplateId::Hints => include_str!("../../templates/hints.txt"),
            TemplateId::Endings => include_str!("../../templates/endings.txt"),
            TemplateId::ThreeThings => include_str!("../../templates/three_things.txt"),
            TemplateId::Initializer => include_str!("../../templates/initializer.txt"),
            TemplateId::Conclusion => include_str!("../../templates/conclusion.txt"),
            TemplateId::KeypointTrailer => include_str!("../../templates/keypoint_trailer.txt"),
            TemplateId::MotionLabel => include_str!("../../templates/motion_label.txt"),
        }
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TemplateId {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TemplateId::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| PromptError::UnknownTemplate(s.to_string()))
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PromptError {
    #[error("missing bindings: {}", .0.join(", "))]
    MissingBinding(Vec<String>),
    #[error("unknown template `{0}`")]
    UnknownTemplate(String),
    #[error("template `{id}` is malformed at byte {offset}: {reason}")]
    Malformed {
        id: String,
        offset: usize,
        reason: &'static str,
    },
    #[error("failed to read template `{path}`: {message}")]
    Io { path: String, message: String },
}

/// Values substituted into template slots.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Bindings(BTreeMap<String, String>);

impl Bindings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, name: impl Into<String>, value: impl Into<String>) -> Self {
        self.insert(name, value);
        self
    }

    pub fn insert(&mut self, name: impl Into<String>, value: impl Into<String>) {
        self.0.insert(name.into(), value.into());
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.0.get(name).map(String::as_str)
    }
}

impl<K: Into<String>, V: Into<String>> FromIterator<(K, V)> for Bindings {
    fn from_iter<I: IntoIterator<Item = (K, V)>>(iter: I) -> Self {
        Bindings(iter.into_iter().map(|(k, v)| (k.into(), v.into())).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Literal(String),
    Slot(String),
}

#[derive(Debug, Clone)]
pub struct PromptTemplate {
    id: TemplateId,
    body: String,
    segments: Vec<Segment>,
    required: BTreeSet<String>,
}

impl PromptTemplate {
    pub fn parse(id: TemplateId, body: impl Into<String>) -> Result<Self, PromptError> {
        let body = body.into();
        let segments = tokenize(&body).map_err(|(offset, reason)| PromptError::Malformed {
            id: id.to_string(),
            offset,
            reason,
        })?;
        let required = segments
            .iter()
            .filter_map(|s| match s {
                Segment::Slot(name) => Some(name.clone()),
                Segment::Literal(_) => None,
            })
            .collect();
        Ok(Self {
            id,
            body,
            segments,
            required,
        })
    }

    pub fn id(&self) -> TemplateId {
        self.id
    }

    pub fn body(&self) -> &str {
        &self.body
    }

    pub fn required_placeholders(&self) -> &BTreeSet<String> {
        &self.required
    }

    pub fn output_schema(&self) -> Option<SchemaId> {
        self.id.output_schema()
    }

    pub fn render(&self, bindings: &Bindings) -> Result<String, PromptError> {
        let missing: Vec<String> = self
            .required
            .iter()
            .filter(|name| bindings.get(name).is_none())
            .cloned()
            .collect();
        if !missing.is_empty() {
            return Err(PromptError::MissingBinding(missing));
        }
        let mut out = String::with_capacity(self.body.len());
        for segment in &self.segments {
            match segment {
                Segment::Literal(text) => out.push_str(text),
                Segment::Slot(name) => out.push_str(bindings.get(name).unwrap_or_default()),
            }
        }
        Ok(out)
    }

    /// Rendered text up to the first slot; every rendering starts with it.
    pub fn literal_prefix(&self) -> String {
        let mut prefix = String::new();
        for segment in &self.segments {
            match segment {
                Segment::Literal(text) => prefix.push_str(text),
                Segment::Slot(_) => break,
            }
        }
        prefix
    }
}

fn is_slot_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_'
}

fn is_slot_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == ' '
}

fn tokenize(body: &str) -> Result<Vec<Segment>, (usize, &'static str)> {
    let mut segments = Vec::new();
    let mut literal = String::new();
    let mut chars = body.char_indices().peekable();
    while let Some((offset, c)) = chars.next() {
        match c {
            '{' if chars.peek().map(|&(_, n)| n) == Some('{') => {
                chars.next();
                literal.push('{');
            }
            '{' => {
                let mut name = String::new();
                let mut closed = false;
                for (_, n) in chars.by_ref() {
                    if n == '}' {
                        closed = true;
                        break;
                    }
                    name.push(n);
                }
                if !closed {
                    return Err((offset, "unterminated placeholder"));
                }
                let valid = name.chars().next().is_some_and(is_slot_start)
                    && name.chars().all(is_slot_char)
                    && !name.ends_with(' ');
                if !valid {
                    return Err((offset, "invalid placeholder name"));
                }
                if !literal.is_empty() {
                    segments.push(Segment::Literal(std::mem::take(&mut literal)));
                }
                segments.push(Segment::Slot(name));
            }
            '}' if chars.peek().map(|&(_, n)| n) == Some('}') => {
                chars.next();
                literal.push('}');
            }
            '}' => return Err((offset, "unmatched closing brace")),
            _ => literal.push(c),
        }
    }
    if !literal.is_empty() {
        segments.push(Segment::Literal(literal));
    }
    Ok(segments)
}

/// Immutable after construction; share it behind an `Arc`.
#[derive(Debug, Clone)]
pub struct TemplateRegistry {
    templates: BTreeMap<TemplateId, PromptTemplate>,
}

impl TemplateRegistry {
    pub fn builtin() -> Self {
        let templates = TemplateId::ALL
            .into_iter()
            .map(|id| {
                let template = PromptTemplate::parse(id, id.builtin_body())
                    .expect("built-in templates are well formed");
                (id, template)
            })
            .collect();
        Self { templates }
    }

    /// Loads every `<id>.txt` found in `dir`. Ids without a file fall back
    /// to the built-in body; unknown `.txt` stems are rejected.
    pub fn load_dir(dir: &Path) -> Result<Self, PromptError> {
        let io_err = |path: &Path, e: std::io::Error| PromptError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        };
        let mut registry = Self::builtin();
        let entries = std::fs::read_dir(dir).map_err(|e| io_err(dir, e))?;
        for entry in entries {
            let path = entry.map_err(|e| io_err(dir, e))?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("txt") {
                continue;
            }
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
            let id: TemplateId = stem.parse()?;
            let body = std::fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
            registry.templates.insert(id, PromptTemplate::parse(id, body)?);
        }
        Ok(registry)
    }

    pub fn get(&self, id: TemplateId) -> Result<&PromptTemplate, PromptError> {
        self.templates
            .get(&id)
            .ok_or_else(|| PromptError::UnknownTemplate(id.to_string()))
    }

    pub fn get_named(&self, name: &str) -> Result<&PromptTemplate, PromptError> {
        self.get(name.parse()?)
    }

    pub fn render(&self, id: TemplateId, bindings: &Bindings) -> Result<String, PromptError> {
        self.get(id)?.render(bindings)
    }

    pub fn iter(&self) -> impl Iterator<Item = &PromptTemplate> {
        self.templates.values()
    }

    /// Which template a rendered prompt was built from (longest matching
    /// literal prefix wins).
    pub fn identify(&self, prompt: &str) -> Option<TemplateId> {
        self.templates
            .values()
            .map(|t| (t.id, t.literal_prefix()))
            .filter(|(_, prefix)| !prefix.is_empty() && prompt.starts_with(prefix.as_str()))
            .max_by_key(|(_, prefix)| prefix.len())
            .map(|(id, _)| id)
    }
}

impl Default for TemplateRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}
