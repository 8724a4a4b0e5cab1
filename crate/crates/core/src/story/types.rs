use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::keypoints::KeyPoints;

pub const SESSION_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    Initialized,
    AwaitingStep,
    Concluded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PartOrigin {
    Opening,
    Performance,
    AiAction,
    Conclusion,
}

/// Narrative element the generator is told to bring into a new part.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StoryVariable {
    NewCharacter,
    NewObject,
    LocationChange,
    PlotTwist,
    TimeJump,
    None,
}

impl StoryVariable {
    /// Draw weights: each element 1, `None` 2.
    pub const WEIGHTED: [(StoryVariable, u32); 6] = [
        (StoryVariable::NewCharacter, 1),
        (StoryVariable::NewObject, 1),
        (StoryVariable::LocationChange, 1),
        (StoryVariable::PlotTwist, 1),
        (StoryVariable::TimeJump, 1),
        (StoryVariable::None, 2),
    ];

    pub fn instruction(self) -> Option<&'static str> {
        match self {
            StoryVariable::NewCharacter => {
                Some("Introduce a new character who was not in the story before.")
            }
            StoryVariable::NewObject => Some("Introduce a new object that matters to the scene."),
            StoryVariable::LocationChange => {
                Some("Move the scene to a different location.")
            }
            StoryVariable::PlotTwist => Some("Introduce an unexpected plot twist."),
            StoryVariable::TimeJump => Some("Jump forward or backward in time."),
            StoryVariable::None => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CharacterProfile {
    pub name: String,
    pub description: String,
    #[serde(default)]
    pub portrait: Option<String>,
}

impl CharacterProfile {
    pub fn validate(&self) -> Result<(), String> {
        if self.name.trim().is_empty() {
            return Err("character name is empty".into());
        }
        if self.description.trim().is_empty() {
            return Err("character description is empty".into());
        }
        Ok(())
    }
}

/// who / where / what seed for an improvisation.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HintTriple {
    pub who: String,
    pub r#where: String,
    pub what: String,
}

impl HintTriple {
    pub fn new(who: impl Into<String>, r#where: impl Into<String>, what: impl Into<String>) -> Self {
        Self {
            who: who.into(),
            r#where: r#where.into(),
            what: what.into(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        for (field, value) in [("who", &self.who), ("where", &self.r#where), ("what", &self.what)] {
            if value.trim().is_empty() {
                return Err(format!("hint field `{field}` is empty"));
            }
        }
        Ok(())
    }

    pub fn to_prompt_text(&self) -> String {
        format!("who: {}; where: {}; what: {}", self.who, self.r#where, self.what)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionOption {
    pub title: String,
    pub description: String,
    /// Batch the option was proposed in; 0 until the engine assigns one.
    #[serde(default)]
    pub batch: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionBatch {
    pub id: u64,
    pub options: Vec<ActionOption>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoryPart {
    pub index: usize,
    pub text: String,
    pub origin: PartOrigin,
    pub target_length_sentences: u32,
    pub introduced_variable: Option<StoryVariable>,
    pub keypoint_delta: KeyPoints,
    #[serde(default)]
    pub visual_description: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StorySession {
    pub schema_version: u32,
    pub id: String,
    pub premise: String,
    pub character: CharacterProfile,
    pub hints_used: Option<HintTriple>,
    pub parts: Vec<StoryPart>,
    pub keypoints: KeyPoints,
    pub phase: Phase,
    pub rng_seed: u64,
    /// Number of random draws consumed so far.
    pub rng_draws: u64,
    pub created_at: DateTime<Utc>,
    /// Every action batch proposed; only `active_batch` is redeemable.
    #[serde(default)]
    pub action_batches: Vec<ActionBatch>,
    #[serde(default)]
    pub active_batch: Option<u64>,
}

impl StorySession {
    pub fn story_text(&self) -> String {
        self.parts
            .iter()
            .map(|p| p.text.trim())
            .collect::<Vec<_>>()
            .join("\n\n")
    }

    pub fn latest_actions(&self) -> Option<&ActionBatch> {
        let active = self.active_batch?;
        self.action_batches.iter().find(|b| b.id == active)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("session serializes")
    }

    /// Structural invariants; returns the first violation found.
    pub fn check_invariants(&self) -> Result<(), String> {
        self.character.validate()?;
        if let Some(hints) = &self.hints_used {
            hints.validate()?;
        }
        let openings = self.parts.iter().filter(|p| p.origin == PartOrigin::Opening).count();
        if openings != 1 || self.parts[0].origin != PartOrigin::Opening {
            return Err("exactly one opening part, at index 0".into());
        }
        for (i, part) in self.parts.iter().enumerate() {
            if part.index != i {
                return Err(format!("part {i} carries index {}", part.index));
            }
            if part.origin == PartOrigin::Conclusion && i + 1 != self.parts.len() {
                return Err("conclusion is not the last part".into());
            }
            if !self.keypoints.is_superset(&part.keypoint_delta) {
                return Err(format!("ledger misses keypoints of part {i}"));
            }
        }
        let concluded = self.parts.last().map(|p| p.origin) == Some(PartOrigin::Conclusion);
        if concluded != (self.phase == Phase::Concluded) {
            return Err("phase disagrees with last part".into());
        }
        if self.phase == Phase::Initialized {
            return Err("session left in Initialized phase".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FinaleType {
    Happy,
    Sad,
    Catastrophic,
    Absurd,
}

impl FinaleType {
    pub const ALL: [FinaleType; 4] = [
        FinaleType::Happy,
        FinaleType::Sad,
        FinaleType::Catastrophic,
        FinaleType::Absurd,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExerciseStatus {
    Open,
    Completed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndingsExercise {
    pub id: String,
    pub opening: String,
    pub visual_description: String,
    pub finale_hints: BTreeMap<FinaleType, String>,
    pub status: ExerciseStatus,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThreeThingsRound {
    pub question: String,
    pub responses: Vec<String>,
    pub started_at: DateTime<Utc>,
    pub finished_at: Option<DateTime<Utc>>,
}

impl ThreeThingsRound {
    pub const RESPONSES: usize = 3;

    pub fn start(question: impl Into<String>, now: DateTime<Utc>) -> Self {
        Self {
            question: question.into(),
            responses: Vec::new(),
            started_at: now,
            finished_at: None,
        }
    }

    /// Records one answer. Blank answers and answers past the third are
    /// refused.
    pub fn respond(&mut self, answer: &str, now: DateTime<Utc>) -> Result<(), String> {
        if self.is_complete() {
            return Err("round already has three responses".into());
        }
        if answer.trim().is_empty() {
            return Err("response is empty".into());
        }
        self.responses.push(answer.trim().to_string());
        if self.is_complete() {
            self.finished_at = Some(now);
        }
        Ok(())
    }

    pub fn is_complete(&self) -> bool {
        self.responses.len() == Self::RESPONSES
            && self.responses.iter().all(|r| !r.trim().is_empty())
    }
}
