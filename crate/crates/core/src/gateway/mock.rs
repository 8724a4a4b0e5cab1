//! Deterministic stand-in for every provider capability.
//!
//! Completions are answered from fixture rules keyed by the template the
//! prompt was rendered from. Each fixture file `<template_id>.json` holds an
//! ordered list of rules; the first rule whose `when` substrings all occur
//! in the prompt (and none of whose `unless` substrings do) answers. Prompts
//! that match no template use `default.json`. When a rule lists several
//! responses, one is chosen by hashing the request with the mock seed, so
//! output is a pure function of (request, seed).
//!
//! `transcripts.json` maps audio payload digests to transcripts.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    AudioClip, Completion, CompletionRequest, GatewayError, ImageRef, Provider, SpeechAudio,
    TokenUsage,
};
use crate::prompt::{TemplateId, TemplateRegistry};

pub const EMBEDDING_DIM: usize = 256;
/// Prompt tokens charged per attached image.
pub const TOKENS_PER_IMAGE: u64 = 85;

const DEFAULT_KEY: &str = "default";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MockFailure {
    Timeout,
    RateLimited,
    Auth,
    Provider { status: Option<u16> },
}

impl MockFailure {
    fn to_error(self) -> GatewayError {
        match self {
            MockFailure::Timeout => GatewayError::Timeout,
            MockFailure::RateLimited => GatewayError::RateLimited,
            MockFailure::Auth => GatewayError::Auth,
            MockFailure::Provider { status } => GatewayError::provider(status, "mock provider failure"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MockRule {
    #[serde(default)]
    pub when: Vec<String>,
    #[serde(default)]
    pub unless: Vec<String>,
    #[serde(default)]
    pub responses: Vec<String>,
    #[serde(default)]
    pub error: Option<MockFailure>,
}

impl MockRule {
    pub fn respond(text: impl Into<String>) -> Self {
        Self {
            responses: vec![text.into()],
            ..Self::default()
        }
    }

    pub fn fail(failure: MockFailure) -> Self {
        Self {
            error: Some(failure),
            ..Self::default()
        }
    }

    pub fn when(mut self, needle: impl Into<String>) -> Self {
        self.when.push(needle.into());
        self
    }

    pub fn unless(mut self, needle: impl Into<String>) -> Self {
        self.unless.push(needle.into());
        self
    }

    fn matches(&self, prompt: &str) -> bool {
        self.when.iter().all(|n| prompt.contains(n.as_str()))
            && !self.unless.iter().any(|n| prompt.contains(n.as_str()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptFixture {
    pub clip: String,
    pub sha256: String,
    pub text: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MockFixtures {
    rules: BTreeMap<String, Vec<MockRule>>,
    transcripts: Vec<TranscriptFixture>,
}

macro_rules! builtin_fixture {
    ($name:literal) => {
        ($name, include_str!(concat!("../../fixtures/mock/", $name, ".json")))
    };
}

const BUILTIN: &[(&str, &str)] = &[
    builtin_fixture!("default"),
    builtin_fixture!("initializer"),
    builtin_fixture!("story_improv"),
    builtin_fixture!("generate_actions"),
    builtin_fixture!("generate_story_part"),
    builtin_fixture!("conclusion"),
    builtin_fixture!("hints"),
    builtin_fixture!("endings"),
    builtin_fixture!("three_things"),
    builtin_fixture!("motion_label"),
];

const BUILTIN_TRANSCRIPTS: &str = include_str!("../../fixtures/mock/transcripts.json");

fn fixture_error(name: &str, e: impl std::fmt::Display) -> GatewayError {
    GatewayError::Config(format!("mock fixture `{name}`: {e}"))
}

impl MockFixtures {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn builtin() -> Self {
        let mut fixtures = Self::new();
        for (name, json) in BUILTIN {
            let rules: Vec<MockRule> = serde_json::from_str(json).expect("built-in mock fixture parses");
            fixtures.rules.insert((*name).to_string(), rules);
        }
        fixtures.transcripts =
            serde_json::from_str(BUILTIN_TRANSCRIPTS).expect("built-in transcripts parse");
        fixtures
    }

    pub fn load_dir(dir: &Path) -> Result<Self, GatewayError> {
        let mut fixtures = Self::new();
        let entries = std::fs::read_dir(dir).map_err(|e| fixture_error(&dir.display().to_string(), e))?;
        for entry in entries {
            let path = entry.map_err(|e| fixture_error(&dir.display().to_string(), e))?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            let text = std::fs::read_to_string(&path).map_err(|e| fixture_error(&name, e))?;
            if name == "transcripts" {
                fixtures.transcripts = serde_json::from_str(&text).map_err(|e| fixture_error(&name, e))?;
            } else {
                if name != DEFAULT_KEY {
                    name.parse::<TemplateId>().map_err(|e| fixture_error(&name, e))?;
                }
                let rules = serde_json::from_str(&text).map_err(|e| fixture_error(&name, e))?;
                fixtures.rules.insert(name, rules);
            }
        }
        Ok(fixtures)
    }

    /// Appends a rule; rules added later have lower priority.
    pub fn rule(mut self, template: Option<TemplateId>, rule: MockRule) -> Self {
        let key = template.map(|t| t.as_str().to_string()).unwrap_or_else(|| DEFAULT_KEY.into());
        self.rules.entry(key).or_default().push(rule);
        self
    }

    /// Inserts a rule ahead of the existing ones for `template`.
    pub fn override_rule(mut self, template: Option<TemplateId>, rule: MockRule) -> Self {
        let key = template.map(|t| t.as_str().to_string()).unwrap_or_else(|| DEFAULT_KEY.into());
        self.rules.entry(key).or_default().insert(0, rule);
        self
    }

    pub fn transcript(mut self, clip: impl Into<String>, audio: &[u8], text: impl Into<String>) -> Self {
        self.transcripts.push(TranscriptFixture {
            clip: clip.into(),
            sha256: hex::encode(Sha256::digest(audio)),
            text: text.into(),
        });
        self
    }

    pub fn transcripts(&self) -> &[TranscriptFixture] {
        &self.transcripts
    }
}

pub struct MockProvider {
    fixtures: MockFixtures,
    registry: TemplateRegistry,
    seed: u64,
    latency: Duration,
}

impl MockProvider {
    pub fn new(fixtures: MockFixtures) -> Self {
        Self {
            fixtures,
            registry: TemplateRegistry::builtin(),
            seed: 0,
            latency: Duration::ZERO,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_latency(mut self, latency: Duration) -> Self {
        self.latency = latency;
        self
    }

    pub fn with_registry(mut self, registry: TemplateRegistry) -> Self {
        self.registry = registry;
        self
    }

    fn pause(&self) {
        if !self.latency.is_zero() {
            std::thread::sleep(self.latency);
        }
    }

    fn request_hash(&self, request: &CompletionRequest) -> u64 {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(request.seed.unwrap_or(u64::MAX).to_le_bytes());
        h.update(request.prompt.as_bytes());
        for image in &request.images {
            h.update((image.data.len() as u64).to_le_bytes());
            h.update(&image.data);
        }
        let digest = h.finalize();
        u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
    }

    fn find_rule(&self, prompt: &str) -> Option<(&str, &MockRule)> {
        let template = self.registry.identify(prompt).map(TemplateId::as_str);
        let keys = template.into_iter().chain(std::iter::once(DEFAULT_KEY));
        for key in keys {
            if let Some(rule) = self
                .fixtures
                .rules
                .get(key)
                .and_then(|rules| rules.iter().find(|r| r.matches(prompt)))
            {
                return Some((key, rule));
            }
        }
        None
    }
}

/// Roughly four characters per token, at least one.
pub fn estimate_tokens(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4).max(1)
}

fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
}

/// Signed feature hashing of lowercase words, L2-normalized.
pub fn hash_embedding(text: &str) -> Vec<f32> {
    let mut v = vec![0f32; EMBEDDING_DIM];
    let mut any = false;
    for word in words(text) {
        let d = Sha256::digest(word.as_bytes());
        let bucket = u16::from_le_bytes([d[0], d[1]]) as usize % EMBEDDING_DIM;
        let sign = if d[2] & 1 == 0 { 1.0 } else { -1.0 };
        v[bucket] += sign;
        any = true;
    }
    if !any {
        let d = Sha256::digest(text.as_bytes());
        v[u16::from_le_bytes([d[0], d[1]]) as usize % EMBEDDING_DIM] = 1.0;
    }
    let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt();
    if norm == 0.0 {
        // Every word cancelled out; fall back to the whole-text bucket.
        let d = Sha256::digest(text.as_bytes());
        v[u16::from_le_bytes([d[0], d[1]]) as usize % EMBEDDING_DIM] = 1.0;
        return v;
    }
    v.iter().map(|x| x / norm).collect()
}

/// Embedding bucket a single word lands in (for building orthogonal pairs).
pub fn word_bucket(word: &str) -> usize {
    let d = Sha256::digest(word.to_lowercase().as_bytes());
    u16::from_le_bytes([d[0], d[1]]) as usize % EMBEDDING_DIM
}

fn tone_wav(text: &str) -> Vec<u8> {
    let d = Sha256::digest(text.as_bytes());
    let freq = 220.0 + f32::from(d[0]) * 2.0;
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: 8000,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let samples = 800 + 40 * text.chars().count().min(400);
    let mut cursor = std::io::Cursor::new(Vec::new());
    {
        let mut writer = hound::WavWriter::new(&mut cursor, spec).expect("in-memory wav");
        for i in 0..samples {
            let t = i as f32 / spec.sample_rate as f32;
            let s = (t * freq * std::f32::consts::TAU).sin() * 0.3;
            writer.write_sample((s * f32::from(i16::MAX)) as i16).expect("in-memory wav");
        }
        writer.finalize().expect("in-memory wav");
    }
    cursor.into_inner()
}

/// A 1x1 transparent PNG.
const PLACEHOLDER_PNG: &str =
    "iVBORw0KGgoAAAANSUhEUgAAAAEAAAABCAYAAAAfFcSJAAAADUlEQVR42mNkYPhfDwAChwGA60e6kgAAAABJRU5ErkJggg==";

/// Wraps a provider and keeps every completion request it forwards.
pub struct RecordingProvider {
    inner: Arc<dyn Provider>,
    requests: Mutex<Vec<CompletionRequest>>,
}

impl RecordingProvider {
    pub fn new(inner: Arc<dyn Provider>) -> Self {
        Self {
            inner,
            requests: Mutex::new(Vec::new()),
        }
    }

    pub fn requests(&self) -> Vec<CompletionRequest> {
        self.requests.lock().expect("recorder lock").clone()
    }

    pub fn prompts(&self) -> Vec<String> {
        self.requests().into_iter().map(|r| r.prompt).collect()
    }

    pub fn clear(&self) {
        self.requests.lock().expect("recorder lock").clear();
    }
}

impl Provider for RecordingProvider {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, GatewayError> {
        self.requests.lock().expect("recorder lock").push(request.clone());
        self.inner.complete(request)
    }

    fn transcribe(&self, audio: &AudioClip) -> Result<String, GatewayError> {
        self.inner.transcribe(audio)
    }

    fn synthesize_speech(&self, text: &str) -> Result<SpeechAudio, GatewayError> {
        self.inner.synthesize_speech(text)
    }

    fn embed(&self, text: &str) -> Result<Vec<f32>, GatewayError> {
        self.inner.embed(text)
    }

    fn generate_portrait(&self, description: &str) -> Result<ImageRef, GatewayError> {
        self.inner.generate_portrait(description)
    }
}

impl Provider for MockProvider {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, GatewayError> {
        self.pause();
        let (key, rule) = self.find_rule(&request.prompt).ok_or_else(|| {
            GatewayError::provider(None, "mock: no fixture rule matches the prompt")
        })?;
        if let Some(failure) = rule.error {
            return Err(failure.to_error());
        }
        if rule.responses.is_empty() {
            return Err(GatewayError::provider(None, &format!("mock: rule in `{key}` has no responses")));
        }
        let pick = (self.request_hash(request) % rule.responses.len() as u64) as usize;
        let text = rule.responses[pick].clone();
        let prompt_tokens =
            estimate_tokens(&request.prompt) + TOKENS_PER_IMAGE * request.images.len() as u64;
        let usage = TokenUsage::new(prompt_tokens, estimate_tokens(&text));
        Ok(Completion { text, usage })
    }

    fn transcribe(&self, audio: &AudioClip) -> Result<String, GatewayError> {
        self.pause();
        let digest = hex::encode(Sha256::digest(&audio.bytes));
        if let Some(fixture) = self.fixtures.transcripts.iter().find(|t| t.sha256 == digest) {
            return Ok(fixture.text.clone());
        }
        if audio.is_silent_wav() {
            return Ok(String::new());
        }
        Ok(format!("(unscripted line {})", &digest[..8]))
    }

    fn synthesize_speech(&self, text: &str) -> Result<SpeechAudio, GatewayError> {
        self.pause();
        Ok(SpeechAudio {
            content_type: "audio/wav".into(),
            bytes: tone_wav(text),
        })
    }

    fn embed(&self, text: &str) -> Result<Vec<f32>, GatewayError> {
        Ok(hash_embedding(text))
    }

    fn generate_portrait(&self, _description: &str) -> Result<ImageRef, GatewayError> {
        self.pause();
        Ok(ImageRef(format!("data:image/png;base64,{PLACEHOLDER_PNG}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{Gateway, ProviderConfig};
    use std::sync::Arc;

    fn gateway(fixtures: MockFixtures) -> Gateway {
        Gateway::with_provider(Arc::new(MockProvider::new(fixtures)), ProviderConfig::mock())
    }

    #[test]
    fn ping_is_canned_and_accounted() {
        let g = Gateway::mock();
        let a = g.complete(&CompletionRequest::text("ping")).unwrap();
        let b = g.complete(&CompletionRequest::text("ping")).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.text, "pong");
        assert_eq!(a.usage.total(), a.usage.prompt() + a.usage.completion());
    }

    #[test]
    fn images_are_charged() {
        let g = Gateway::mock();
        let plain = g.complete(&CompletionRequest::text("ping")).unwrap();
        let with = g
            .complete(
                &CompletionRequest::text("ping")
                    .with_images(vec![super::super::EncodedImage::jpeg(vec![1, 2, 3]); 3]),
            )
            .unwrap();
        assert_eq!(with.usage.prompt(), plain.usage.prompt() + 3 * TOKENS_PER_IMAGE);
    }

    #[test]
    fn rule_selection_and_failures() {
        let fixtures = MockFixtures::new()
            .rule(None, MockRule::fail(MockFailure::RateLimited).when("busy"))
            .rule(None, MockRule::respond("fallback").unless("quiet"))
            .rule(None, MockRule::respond("hush"));
        let g = gateway(fixtures);
        assert_eq!(g.complete(&CompletionRequest::text("are you busy")), Err(GatewayError::RateLimited));
        assert_eq!(g.complete(&CompletionRequest::text("hello")).unwrap().text, "fallback");
        assert_eq!(g.complete(&CompletionRequest::text("be quiet")).unwrap().text, "hush");
    }

    #[test]
    fn unmatched_prompt_is_a_provider_error() {
        let g = gateway(MockFixtures::new());
        assert!(matches!(
            g.complete(&CompletionRequest::text("anything")),
            Err(GatewayError::Provider { .. })
        ));
    }

    #[test]
    fn choice_depends_on_request_and_seed_only() {
        let fixtures = MockFixtures::new().rule(
            None,
            MockRule {
                responses: (0..16).map(|i| format!("r{i}")).collect(),
                ..MockRule::default()
            },
        );
        let run = |mock_seed: u64, request_seed: u64| {
            let g = Gateway::with_provider(
                Arc::new(MockProvider::new(fixtures.clone()).with_seed(mock_seed)),
                ProviderConfig::mock(),
            );
            (0..8)
                .map(|i| {
                    g.complete(&CompletionRequest::text(format!("q{i}")).with_seed(request_seed))
                        .unwrap()
                        .text
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(run(1, 2), run(1, 2));
        assert_ne!(run(1, 2), run(3, 2));
        assert_ne!(run(1, 2), run(1, 4));
    }

    #[test]
    fn embeddings_are_unit_and_deterministic() {
        let g = Gateway::mock();
        for text in ["a person waves", "!!!", "jump jump", "Ünïcode wörds"] {
            let a = g.embed(text).unwrap();
            assert_eq!(a, g.embed(text).unwrap());
            assert_eq!(a.len(), EMBEDDING_DIM);
            let norm: f32 = a.iter().map(|x| x * x).sum::<f32>().sqrt();
            assert!((norm - 1.0).abs() < 1e-6, "{text}: {norm}");
        }
    }

    #[test]
    fn speech_and_portrait_placeholders() {
        let g = Gateway::mock();
        let a = g.synthesize_speech("hello").unwrap();
        assert_eq!(a, g.synthesize_speech("hello").unwrap());
        assert_eq!(a.content_type, "audio/wav");
        assert!(!a.bytes.is_empty());

        let config = ProviderConfig {
            portraits_enabled: true,
            ..ProviderConfig::mock()
        };
        let g = Gateway::from_config(config).unwrap();
        let portrait = g.generate_portrait("a clown with a wrench").unwrap();
        assert!(portrait.0.starts_with("data:image/png;base64,"));
        assert!(matches!(g.generate_portrait(""), Err(GatewayError::Validation(_))));
    }

    #[test]
    fn fixtures_load_from_dir() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("default.json"), r#"[{"responses": ["from disk"]}]"#).unwrap();
        std::fs::write(dir.path().join("transcripts.json"), "[]").unwrap();
        let g = gateway(MockFixtures::load_dir(dir.path()).unwrap());
        assert_eq!(g.complete(&CompletionRequest::text("x")).unwrap().text, "from disk");

        std::fs::write(dir.path().join("ballad.json"), "[]").unwrap();
        assert!(matches!(MockFixtures::load_dir(dir.path()), Err(GatewayError::Config(_))));
    }

    #[test]
    fn builtin_fixtures_answer_every_template() {
        let fixtures = MockFixtures::builtin();
        for id in TemplateId::ALL {
            if id == TemplateId::KeypointTrailer {
                continue;
            }
            assert!(fixtures.rules.contains_key(id.as_str()), "{id}");
        }
    }
}
