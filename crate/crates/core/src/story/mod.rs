//! Story sessions: initialization, performance- and AI-driven advancement,
//! the keypoint ledger, conclusion, hints and the two exercises.
//!
//! Every session-mutating operation works on a copy and commits only on
//! success, so a failed call leaves the session untouched.

mod keypoints;
mod rng;
mod types;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use chrono::{DateTime, TimeZone, Utc};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use keypoints::{merge_keypoints, normalize, KeyPoints, KeySet};
pub use rng::{pick_story_length, pick_variable, LengthBounds, SessionRng};
pub use types::*;

use crate::gateway::{CompletionRequest, Gateway, GatewayError, SpeechAudio};
use crate::media::PerformanceAnalysis;
use crate::prompt::schema::{
    parse_as, ActionsList, EndingsSetup, HintsList, InitializerOutput, QuestionsList, StorySegment,
};
use crate::prompt::{Bindings, ParseError, PromptError, SchemaId, StructuredOutput, TemplateId, TemplateRegistry};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StoryError {
    #[error("invalid input: {0}")]
    Validation(String),
    #[error("`{op}` is not allowed while the session is {phase:?}")]
    Phase { op: &'static str, phase: Phase },
    #[error("action `{0}` belongs to an earlier batch")]
    StaleAction(String),
    #[error("action `{0}` was never proposed for this session")]
    UnknownAction(String),
    #[error("story part {0} does not exist")]
    PartOutOfRange(usize),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FixedClock(pub DateTime<Utc>);

impl Default for FixedClock {
    fn default() -> Self {
        FixedClock(Utc.with_ymd_and_hms(2025, 1, 1, 12, 0, 0).unwrap())
    }
}

impl Clock for FixedClock {
    fn now(&self) -> DateTime<Utc> {
        self.0
    }
}

pub trait IdSource: Send + Sync {
    fn next_id(&self, seed: u64) -> String;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RandomIds;

impl IdSource for RandomIds {
    fn next_id(&self, _seed: u64) -> String {
        uuid::Uuid::new_v4().to_string()
    }
}

/// Ids derived from the seed and a per-source counter.
#[derive(Debug, Default)]
pub struct SeededIds {
    counter: AtomicU64,
}

impl IdSource for SeededIds {
    fn next_id(&self, seed: u64) -> String {
        let n = self.counter.fetch_add(1, Ordering::Relaxed);
        let mut h = Sha256::new();
        h.update(seed.to_le_bytes());
        h.update(n.to_le_bytes());
        let digest = h.finalize();
        uuid::Builder::from_random_bytes(digest[..16].try_into().expect("16 bytes"))
            .into_uuid()
            .to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StoryConfig {
    pub length: LengthBounds,
    /// Re-asks after an unparseable response before giving up.
    pub parse_retries: u32,
    pub temperature: f32,
    pub max_output_tokens: u32,
    pub generate_portraits: bool,
}

impl Default for StoryConfig {
    fn default() -> Self {
        Self {
            length: LengthBounds::default(),
            parse_retries: 2,
            temperature: 0.9,
            max_output_tokens: 1024,
            generate_portraits: true,
        }
    }
}

const REPAIR_INSTRUCTION: &str = "Respond with valid JSON only.";

const AI_VISUAL_RULE: &str = "a short visual description of a key moment in the new part. Describe the environment and do not name the main character.";
const NO_VISUAL_RULE: &str = "null";

#[derive(Clone)]
pub struct StoryEngine {
    gateway: Gateway,
    registry: Arc<TemplateRegistry>,
    config: StoryConfig,
    clock: Arc<dyn Clock>,
    ids: Arc<dyn IdSource>,
}

impl std::fmt::Debug for StoryEngine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StoryEngine")
            .field("gateway", &self.gateway)
            .field("config", &self.config)
            .finish()
    }
}

fn require_phase(session: &StorySession, op: &'static str) -> Result<(), StoryError> {
    match session.phase {
        Phase::AwaitingStep => Ok(()),
        phase => Err(StoryError::Phase { op, phase }),
    }
}

fn hints_text(hints: Option<&HintTriple>) -> String {
    hints.map(HintTriple::to_prompt_text).unwrap_or_else(|| "none".into())
}

impl StoryEngine {
    pub fn new(gateway: Gateway, registry: Arc<TemplateRegistry>) -> Self {
        Self {
            gateway,
            registry,
            config: StoryConfig::default(),
            clock: Arc::new(SystemClock),
            ids: Arc::new(RandomIds),
        }
    }

    /// Fixed clock and seed-derived ids: identical inputs give identical
    /// sessions.
    pub fn deterministic(gateway: Gateway, registry: Arc<TemplateRegistry>) -> Self {
        Self::new(gateway, registry)
            .with_clock(Arc::new(FixedClock::default()))
            .with_ids(Arc::new(SeededIds::default()))
    }

    pub fn with_config(mut self, config: StoryConfig) -> Self {
        self.config = config;
        self
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn with_ids(mut self, ids: Arc<dyn IdSource>) -> Self {
        self.ids = ids;
        self
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    pub fn registry(&self) -> &Arc<TemplateRegistry> {
        &self.registry
    }

    pub fn config(&self) -> &StoryConfig {
        &self.config
    }

    pub fn now(&self) -> DateTime<Utc> {
        self.clock.now()
    }

    /// Sends `prompt`, parses the reply as `T` and applies `check`. A reply
    /// that fails either step is re-asked with a repair instruction, up to
    /// the configured retry budget.
    fn request_structured<T: StructuredOutput>(
        &self,
        prompt: &str,
        seed: Option<u64>,
        check: impl Fn(&T) -> Result<(), String>,
    ) -> Result<T, StoryError> {
        let mut attempt_prompt = prompt.to_string();
        let mut last_error = None;
        for attempt in 0..=self.config.parse_retries {
            let mut request = CompletionRequest::text(attempt_prompt.clone()).with_temperature(self.config.temperature);
            request.max_output_tokens = self.config.max_output_tokens;
            request.seed = seed.map(|s| s.wrapping_add(u64::from(attempt)));
            let completion = self.gateway.complete(&request)?;
            let parsed = parse_as::<T>(&completion.text).and_then(|value| {
                check(&value).map(|_| value).map_err(|reason| ParseError {
                    schema: T::SCHEMA,
                    offset: None,
                    reason,
                })
            });
            match parsed {
                Ok(value) => return Ok(value),
                Err(e) => {
                    tracing::warn!(attempt, error = %e, "unusable structured response");
                    attempt_prompt = format!(
                        "{prompt}\n\nYour previous answer could not be used ({}). {REPAIR_INSTRUCTION}",
                        e.reason
                    );
                    last_error = Some(e);
                }
            }
        }
        Err(StoryError::Parse(last_error.expect("at least one attempt")))
    }

    fn trailer(&self, length: u32, visual_rule: &str) -> Result<String, StoryError> {
        Ok(self.registry.render(
            TemplateId::KeypointTrailer,
            &Bindings::new()
                .with("length", length.to_string())
                .with("visual_rule", visual_rule),
        )?)
    }

    fn request_seed(session: &StorySession, rng: &SessionRng) -> u64 {
        session.rng_seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(rng.draws())
    }

    fn append_part(
        session: &mut StorySession,
        origin: PartOrigin,
        segment: StorySegment,
        target_length_sentences: u32,
        introduced_variable: Option<StoryVariable>,
    ) -> StoryPart {
        let part = StoryPart {
            index: session.parts.len(),
            text: segment.story_text.trim().to_string(),
            origin,
            target_length_sentences,
            introduced_variable,
            keypoint_delta: segment.keypoints,
            visual_description: segment
                .visual_description
                .map(|v| v.trim().to_string())
                .filter(|v| !v.is_empty()),
        };
        session.keypoints = merge_keypoints(&session.keypoints, &part.keypoint_delta);
        session.parts.push(part.clone());
        session.active_batch = None;
        part
    }

    pub fn init_session(&self, hints: Option<HintTriple>, seed: u64) -> Result<StorySession, StoryError> {
        if let Some(h) = &hints {
            h.validate().map_err(StoryError::Validation)?;
        }
        let mut rng = SessionRng::new(seed, 0);
        let length = rng.next_length(self.config.length);
        let prompt = self.registry.render(
            TemplateId::Initializer,
            &Bindings::new()
                .with("hints", hints_text(hints.as_ref()))
                .with("length", length.to_string()),
        )?;
        let request_seed = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let output: InitializerOutput = self.request_structured(&prompt, Some(request_seed), |_| Ok(()))?;

        let mut character = CharacterProfile {
            name: output.character.name.trim().to_string(),
            description: output.character.description.trim().to_string(),
            portrait: None,
        };
        if self.config.generate_portraits {
            character.portrait = match self.gateway.generate_portrait(&character.description) {
                Ok(image) => Some(image.0),
                Err(GatewayError::CapabilityUnavailable(_)) => None,
                Err(e) => {
                    tracing::warn!(error = %e, "portrait generation failed");
                    None
                }
            };
        }

        let mut session = StorySession {
            schema_version: SESSION_SCHEMA_VERSION,
            id: self.ids.next_id(seed),
            premise: output.premise.trim().to_string(),
            character,
            hints_used: hints,
            parts: Vec::new(),
            keypoints: KeyPoints::default(),
            phase: Phase::Initialized,
            rng_seed: seed,
            rng_draws: 0,
            created_at: self.clock.now(),
            action_batches: Vec::new(),
            active_batch: None,
        };
        let opening = StorySegment {
            story_text: output.opening_part,
            visual_description: None,
            keypoints: output.keypoints,
        };
        Self::append_part(&mut session, PartOrigin::Opening, opening, length, None);
        session.rng_draws = rng.draws();
        session.phase = Phase::AwaitingStep;
        Ok(session)
    }

    pub fn advance_with_performance(
        &self,
        session: &mut StorySession,
        analysis: &PerformanceAnalysis,
    ) -> Result<StoryPart, StoryError> {
        require_phase(session, "advance_with_performance")?;
        analysis.validate().map_err(StoryError::Validation)?;
        let mut next = session.clone();
        let mut rng = SessionRng::new(next.rng_seed, next.rng_draws);
        let length = rng.next_length(self.config.length);

        let transcription = if analysis.transcript.trim().is_empty() {
            "(no speech)".to_string()
        } else {
            analysis.transcript.trim().to_string()
        };
        let frames = if analysis.motion_description.trim().is_empty() {
            "(no motion description)".to_string()
        } else {
            format!(
                "{} frames were analyzed; the performer's motion: {}",
                analysis.sampled_frame_indices.len(),
                analysis.motion_description.trim()
            )
        };
        let body = self.registry.render(
            TemplateId::StoryImprov,
            &Bindings::new()
                .with("hints", hints_text(next.hints_used.as_ref()))
                .with("premise", next.premise.clone())
                .with("story", next.story_text())
                .with("keypoint", next.keypoints.to_compact())
                .with("length", length.to_string())
                .with("transcription", transcription)
                .with("video frames", frames),
        )?;
        let prompt = format!("{body}\n{}", self.trailer(length, NO_VISUAL_RULE)?);
        let seed = Self::request_seed(&next, &rng);
        let segment: StorySegment = self.request_structured(&prompt, Some(seed), |_| Ok(()))?;
        let part = Self::append_part(&mut next, PartOrigin::Performance, segment, length, None);
        next.rng_draws = rng.draws();
        *session = next;
        Ok(part)
    }

    pub fn propose_actions(&self, session: &mut StorySession, n: usize) -> Result<Vec<ActionOption>, StoryError> {
        require_phase(session, "propose_actions")?;
        if n < 2 {
            return Err(StoryError::Validation(format!("at least 2 actions are required, got {n}")));
        }
        let mut next = session.clone();
        let body = self
            .registry
            .render(TemplateId::GenerateActions, &Bindings::new().with("number", n.to_string()))?;
        let prompt = format!(
            "{body}\nMain character: {} ({})\nPremise: {}\nStory so far:\n{}\n\n{}",
            next.character.name,
            next.character.description,
            next.premise,
            next.story_text(),
            SchemaId::ActionsList.format_instruction(Some(n))
        );
        let batch_id = next.action_batches.last().map(|b| b.id + 1).unwrap_or(1);
        let seed = next.rng_seed.wrapping_add(batch_id << 32);
        let list: ActionsList = self.request_structured(&prompt, Some(seed), |list: &ActionsList| {
            if list.actions.len() == n {
                Ok(())
            } else {
                Err(format!("expected {n} actions, got {}", list.actions.len()))
            }
        })?;
        let options: Vec<ActionOption> = list
            .actions
            .into_iter()
            .map(|draft| ActionOption {
                batch: batch_id,
                ..draft.into()
            })
            .collect();
        next.action_batches.push(ActionBatch {
            id: batch_id,
            options: options.clone(),
        });
        next.active_batch = Some(batch_id);
        *session = next;
        Ok(options)
    }

    /// Looks up an action by title: the active batch first, then earlier
    /// batches (which are stale).
    pub fn redeem_action(&self, session: &StorySession, title: &str) -> Result<ActionOption, StoryError> {
        let wanted = title.trim();
        if let Some(option) = session
            .latest_actions()
            .and_then(|b| b.options.iter().find(|o| o.title == wanted))
        {
            return Ok(option.clone());
        }
        if session
            .action_batches
            .iter()
            .any(|b| b.options.iter().any(|o| o.title == wanted))
        {
            return Err(StoryError::StaleAction(wanted.to_string()));
        }
        Err(StoryError::UnknownAction(wanted.to_string()))
    }

    pub fn advance_with_ai(&self, session: &mut StorySession, chosen: &ActionOption) -> Result<StoryPart, StoryError> {
        require_phase(session, "advance_with_ai")?;
        let active = session.latest_actions();
        let is_current = active.is_some_and(|b| b.id == chosen.batch && b.options.contains(chosen));
        if !is_current {
            let ever = session.action_batches.iter().any(|b| b.options.contains(chosen));
            return Err(if ever {
                StoryError::StaleAction(chosen.title.clone())
            } else {
                StoryError::UnknownAction(chosen.title.clone())
            });
        }

        let mut next = session.clone();
        let mut rng = SessionRng::new(next.rng_seed, next.rng_draws);
        let length = rng.next_length(self.config.length);
        let variable = rng.next_variable();

        let body = self.registry.render(TemplateId::GenerateStoryPart, &Bindings::new())?;
        let input = serde_json::json!({"title": chosen.title, "description": chosen.description});
        let mut prompt = format!(
            "{body}\nInput object: {input}\nMain character: {} ({})\nPremise: {}\nKey points so far: {}\nStory so far:\n{}\n\nThe new part should be not more than {length} sentences.\n",
            next.character.name,
            next.character.description,
            next.premise,
            next.keypoints.to_compact(),
            next.story_text(),
        );
        if let Some(instruction) = variable.instruction() {
            prompt.push_str(instruction);
            prompt.push('\n');
        }
        prompt.push_str(&self.trailer(length, AI_VISUAL_RULE)?);

        let seed = Self::request_seed(&next, &rng);
        let segment: StorySegment = self.request_structured(&prompt, Some(seed), |_| Ok(()))?;
        let part = Self::append_part(&mut next, PartOrigin::AiAction, segment, length, Some(variable));
        next.rng_draws = rng.draws();
        *session = next;
        Ok(part)
    }

    pub fn conclude_story(&self, session: &mut StorySession) -> Result<StoryPart, StoryError> {
        require_phase(session, "conclude_story")?;
        if session.parts.iter().all(|p| p.origin == PartOrigin::Opening) {
            return Err(StoryError::Validation(
                "the story needs at least one step after the opening before it can conclude".into(),
            ));
        }
        let mut next = session.clone();
        let mut rng = SessionRng::new(next.rng_seed, next.rng_draws);
        let length = rng.next_length(self.config.length);
        let body = self.registry.render(
            TemplateId::Conclusion,
            &Bindings::new()
                .with("premise", next.premise.clone())
                .with("story", next.story_text())
                .with("keypoint", next.keypoints.to_compact())
                .with("length", length.to_string()),
        )?;
        let prompt = format!("{body}\n{}", self.trailer(length, NO_VISUAL_RULE)?);
        let seed = Self::request_seed(&next, &rng);
        let segment: StorySegment = self.request_structured(&prompt, Some(seed), |_| Ok(()))?;
        let part = Self::append_part(&mut next, PartOrigin::Conclusion, segment, length, None);
        next.rng_draws = rng.draws();
        next.phase = Phase::Concluded;
        *session = next;
        Ok(part)
    }

    pub fn generate_hints(&self, n: usize) -> Result<Vec<HintTriple>, StoryError> {
        if n == 0 {
            return Err(StoryError::Validation("at least one hint must be requested".into()));
        }
        let body = self
            .registry
            .render(TemplateId::Hints, &Bindings::new().with("number", n.to_string()))?;
        let prompt = format!("{body}\n{}", SchemaId::HintsList.format_instruction(Some(n)));
        let list: HintsList = self.request_structured(&prompt, None, |list: &HintsList| {
            if list.hints.len() == n {
                Ok(())
            } else {
                Err(format!("expected {n} hints, got {}", list.hints.len()))
            }
        })?;
        Ok(list
            .hints
            .into_iter()
            .map(|h| HintTriple::new(h.who.trim(), h.r#where.trim(), h.what.trim()))
            .collect())
    }

    pub fn start_endings_exercise(&self, seed: u64) -> Result<EndingsExercise, StoryError> {
        let body = self.registry.render(TemplateId::Endings, &Bindings::new())?;
        let prompt = format!("{body}\n{}", SchemaId::EndingsSetup.format_instruction(None));
        let setup: EndingsSetup = self.request_structured(&prompt, Some(seed), |_| Ok(()))?;
        Ok(EndingsExercise {
            id: self.ids.next_id(seed),
            opening: setup.opening.trim().to_string(),
            visual_description: setup.visual_description.trim().to_string(),
            finale_hints: setup
                .finale_hints
                .into_iter()
                .map(|(k, v)| (k.into(), v.trim().to_string()))
                .collect(),
            status: ExerciseStatus::Open,
        })
    }

    pub fn next_three_things_prompt(&self, batch: usize) -> Result<Vec<String>, StoryError> {
        if batch == 0 {
            return Err(StoryError::Validation("at least one question must be requested".into()));
        }
        let body = self.registry.render(TemplateId::ThreeThings, &Bindings::new())?;
        let prompt = format!("{body}\n{}", SchemaId::QuestionsList.format_instruction(Some(batch)));
        let list: QuestionsList = self.request_structured(&prompt, None, |list: &QuestionsList| {
            if list.questions.len() == batch {
                Ok(())
            } else {
                Err(format!("expected {batch} questions, got {}", list.questions.len()))
            }
        })?;
        Ok(list.questions.into_iter().map(|q| q.trim().to_string()).collect())
    }

    pub fn narrate_part(&self, session: &StorySession, index: usize) -> Result<SpeechAudio, StoryError> {
        let part = session.parts.get(index).ok_or(StoryError::PartOutOfRange(index))?;
        Ok(self.gateway.synthesize_speech(&part.text)?)
    }
}
