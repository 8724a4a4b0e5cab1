//! Structured model output: the JSON shapes each template asks for, and a
//! strict parser that enforces their invariants.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::story::{ActionOption, CharacterProfile, FinaleType, HintTriple, KeyPoints};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SchemaId {
    ActionsList,
    HintsList,
    StorySegmentWithKeypoints,
    EndingsSetup,
    QuestionsList,
    InitializerOutput,
}

impl SchemaId {
    /// Response-format instruction appended to prompts whose template does
    /// not already describe its JSON shape.
    pub fn format_instruction(self, count: Option<usize>) -> String {
        let count = count.map(|n| n.to_string()).unwrap_or_else(|| "the requested number of".into());
        match self {
            SchemaId::ActionsList => format!(
                "Respond with a single JSON object and nothing else, using exactly this shape:\n\
                 {{\"actions\": [{{\"title\": \"...\", \"description\": \"...\"}}]}}\n\
                 The \"actions\" array must contain {count} entries with distinct titles."
            ),
            SchemaId::HintsList => format!(
                "Respond with a single JSON object and nothing else, using exactly this shape:\n\
                 {{\"hints\": [{{\"who\": \"...\", \"where\": \"...\", \"what\": \"...\"}}]}}\n\
                 The \"hints\" array must contain {count} entries and no field may be empty."
            ),
            SchemaId::EndingsSetup => "Respond with a single JSON object and nothing else, using exactly this shape:\n\
                 {\"opening\": \"...\", \"visual_description\": \"...\", \"finale_hints\": {\"happy\": \"...\", \"sad\": \"...\", \"catastrophic\": \"...\", \"absurd\": \"...\"}}\n\
                 Each finale hint is one sentence suggesting how the actor could end the story in that tone."
                .to_string(),
            SchemaId::QuestionsList => format!(
                "Respond with a single JSON object and nothing else, using exactly this shape:\n\
                 {{\"questions\": [\"...\"]}}\n\
                 The \"questions\" array must contain {count} distinct questions."
            ),
            // These two carry their shape in their own templates.
            SchemaId::StorySegmentWithKeypoints | SchemaId::InitializerOutput => String::new(),
        }
    }
}

impl fmt::Display for SchemaId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq, Serialize)]
#[error("{schema} response rejected{}: {reason}", .offset.map(|o| format!(" at byte {o}")).unwrap_or_default())]
pub struct ParseError {
    pub schema: SchemaId,
    pub offset: Option<usize>,
    pub reason: String,
}

/// A typed response shape with invariants beyond what serde checks.
pub trait StructuredOutput: Serialize + DeserializeOwned {
    const SCHEMA: SchemaId;

    fn validate(&self) -> Result<(), String>;
}

fn non_empty(field: &str, value: &str) -> Result<(), String> {
    if value.trim().is_empty() {
        Err(format!("`{field}` is empty"))
    } else {
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionDraft {
    pub title: String,
    pub description: String,
}

impl From<ActionDraft> for ActionOption {
    fn from(d: ActionDraft) -> Self {
        ActionOption {
            title: d.title.trim().to_string(),
            description: d.description.trim().to_string(),
            batch: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionsList {
    pub actions: Vec<ActionDraft>,
}

impl StructuredOutput for ActionsList {
    const SCHEMA: SchemaId = SchemaId::ActionsList;

    fn validate(&self) -> Result<(), String> {
        let mut seen = BTreeSet::new();
        for action in &self.actions {
            non_empty("title", &action.title)?;
            non_empty("description", &action.description)?;
            if !seen.insert(action.title.trim().to_lowercase()) {
                return Err(format!("duplicate action title `{}`", action.title));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HintsList {
    pub hints: Vec<HintTriple>,
}

impl StructuredOutput for HintsList {
    const SCHEMA: SchemaId = SchemaId::HintsList;

    fn validate(&self) -> Result<(), String> {
        self.hints.iter().try_for_each(HintTriple::validate)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StorySegment {
    pub story_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub visual_description: Option<String>,
    pub keypoints: KeyPoints,
}

impl StructuredOutput for StorySegment {
    const SCHEMA: SchemaId = SchemaId::StorySegmentWithKeypoints;

    fn validate(&self) -> Result<(), String> {
        non_empty("story_text", &self.story_text)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndingsSetup {
    pub opening: String,
    pub visual_description: String,
    pub finale_hints: BTreeMap<FinaleKey, String>,
}

/// Wire spelling of [`FinaleType`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinaleKey {
    Happy,
    Sad,
    Catastrophic,
    Absurd,
}

impl From<FinaleKey> for FinaleType {
    fn from(k: FinaleKey) -> Self {
        match k {
            FinaleKey::Happy => FinaleType::Happy,
            FinaleKey::Sad => FinaleType::Sad,
            FinaleKey::Catastrophic => FinaleType::Catastrophic,
            FinaleKey::Absurd => FinaleType::Absurd,
        }
    }
}

impl StructuredOutput for EndingsSetup {
    const SCHEMA: SchemaId = SchemaId::EndingsSetup;

    fn validate(&self) -> Result<(), String> {
        non_empty("opening", &self.opening)?;
        non_empty("visual_description", &self.visual_description)?;
        for key in [FinaleKey::Happy, FinaleKey::Sad, FinaleKey::Catastrophic, FinaleKey::Absurd] {
            match self.finale_hints.get(&key) {
                None => return Err(format!("finale hint `{key:?}` is missing")),
                Some(text) => non_empty("finale_hints", text)?,
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionsList {
    pub questions: Vec<String>,
}

impl StructuredOutput for QuestionsList {
    const SCHEMA: SchemaId = SchemaId::QuestionsList;

    fn validate(&self) -> Result<(), String> {
        let mut seen = BTreeSet::new();
        for q in &self.questions {
            non_empty("questions", q)?;
            if !seen.insert(q.trim()) {
                return Err(format!("duplicate question `{q}`"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InitializerOutput {
    pub premise: String,
    pub character: CharacterProfile,
    pub opening_part: String,
    pub keypoints: KeyPoints,
}

impl StructuredOutput for InitializerOutput {
    const SCHEMA: SchemaId = SchemaId::InitializerOutput;

    fn validate(&self) -> Result<(), String> {
        non_empty("premise", &self.premise)?;
        self.character.validate()?;
        non_empty("opening_part", &self.opening_part)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(untagged)]
pub enum Structured {
    Actions(ActionsList),
    Hints(HintsList),
    StorySegment(StorySegment),
    Endings(EndingsSetup),
    Questions(QuestionsList),
    Initializer(InitializerOutput),
}

/// Strips surrounding whitespace and one enclosing markdown code fence.
/// Returns the JSON text and its byte offset in `raw`.
fn unwrap_payload(raw: &str) -> (&str, usize) {
    let start = raw.len() - raw.trim_start().len();
    let trimmed = raw.trim();
    if let Some(rest) = trimmed.strip_prefix("```") {
        if let Some(body) = rest.strip_suffix("```") {
            let header_end = body.find('\n').map(|i| i + 1).unwrap_or(body.len());
            let inner = &body[header_end..];
            return (inner, start + 3 + header_end);
        }
    }
    (trimmed, start)
}

/// Byte index just past the point where the JSON parser stopped.
fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let line_start: usize = text
        .split_inclusive('\n')
        .take(line.saturating_sub(1))
        .map(str::len)
        .sum();
    (line_start + column).min(text.len())
}

pub fn parse_as<T: StructuredOutput>(raw: &str) -> Result<T, ParseError> {
    let (payload, base) = unwrap_payload(raw);
    let value: T = serde_json::from_str(payload).map_err(|e| ParseError {
        schema: T::SCHEMA,
        offset: Some(base + byte_offset(payload, e.line(), e.column())),
        reason: e.to_string(),
    })?;
    value.validate().map_err(|reason| ParseError {
        schema: T::SCHEMA,
        offset: None,
        reason,
    })?;
    Ok(value)
}

pub fn parse_structured(raw: &str, schema: SchemaId) -> Result<Structured, ParseError> {
    Ok(match schema {
        SchemaId::ActionsList => Structured::Actions(parse_as(raw)?),
        SchemaId::HintsList => Structured::Hints(parse_as(raw)?),
        SchemaId::StorySegmentWithKeypoints => Structured::StorySegment(parse_as(raw)?),
        SchemaId::EndingsSetup => Structured::Endings(parse_as(raw)?),
        SchemaId::QuestionsList => Structured::Questions(parse_as(raw)?),
        SchemaId::InitializerOutput => Structured::Initializer(parse_as(raw)?),
    })
}
