//! Improvisational storytelling engine: prompt templates, a provider
//! gateway, performance ingestion, story sessions and the motion-label
//! evaluation harness.

pub mod eval;
pub mod gateway;
pub mod media;
pub mod prompt;
pub mod story;

pub use gateway::{Gateway, GatewayError, ProviderConfig, TokenUsage};
pub use media::{MediaError, MediaIngest, PerformanceAnalysis, PerformanceCapture};
pub use prompt::{Bindings, PromptError, PromptTemplate, TemplateId, TemplateRegistry};
pub use story::{
    ActionOption, CharacterProfile, EndingsExercise, FinaleType, HintTriple, KeyPoints, Phase, StoryEngine,
    StoryError, StoryPart, StorySession, ThreeThingsRound,
};
