//! Model provider abstraction.
//!
//! [`Provider`] is the backend seam (a remote HTTP adapter or the
//! deterministic [`mock::MockProvider`]). [`Gateway`] wraps a provider with
//! input validation, the retry policy and token-accounting checks; the rest
//! of the crate talks only to the gateway.

pub mod mock;
pub mod remote;

use std::fmt;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use mock::{MockFixtures, MockProvider, RecordingProvider};
pub use remote::RemoteProvider;

/// Token counts for one request. `total = prompt + completion` always holds
/// for values built through [`TokenUsage::new`] or accepted by
/// [`TokenUsage::from_reported`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawUsage")]
pub struct TokenUsage {
    completion: u64,
    prompt: u64,
    total: u64,
}

#[derive(Deserialize)]
struct RawUsage {
    completion: u64,
    prompt: u64,
    total: u64,
}

impl TryFrom<RawUsage> for TokenUsage {
    type Error = String;

    fn try_from(raw: RawUsage) -> Result<Self, Self::Error> {
        TokenUsage::from_reported(raw.prompt, raw.completion, raw.total)
    }
}

impl TokenUsage {
    pub fn new(prompt: u64, completion: u64) -> Self {
        Self {
            completion,
            prompt,
            total: prompt + completion,
        }
    }

    pub fn from_reported(prompt: u64, completion: u64, total: u64) -> Result<Self, String> {
        if prompt.checked_add(completion) != Some(total) {
            return Err(format!(
                "token usage total {total} != prompt {prompt} + completion {completion}"
            ));
        }
        Ok(Self::new(prompt, completion))
    }

    pub fn completion(&self) -> u64 {
        self.completion
    }

    pub fn prompt(&self) -> u64 {
        self.prompt
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn is_consistent(&self) -> bool {
        self.prompt + self.completion == self.total
    }
}

impl std::ops::Add for TokenUsage {
    type Output = TokenUsage;

    fn add(self, rhs: TokenUsage) -> TokenUsage {
        TokenUsage::new(self.prompt + rhs.prompt, self.completion + rhs.completion)
    }
}

impl std::iter::Sum for TokenUsage {
    fn sum<I: Iterator<Item = TokenUsage>>(iter: I) -> Self {
        iter.fold(TokenUsage::default(), |a, b| a + b)
    }
}

/// An encoded still image attached to a completion request.
#[derive(Clone, PartialEq, Eq)]
pub struct EncodedImage {
    pub media_type: String,
    pub data: Vec<u8>,
}

impl EncodedImage {
    pub fn jpeg(data: Vec<u8>) -> Self {
        Self {
            media_type: "image/jpeg".into(),
            data,
        }
    }

    pub fn data_url(&self) -> String {
        use base64::Engine as _;
        format!(
            "data:{};base64,{}",
            self.media_type,
            base64::engine::general_purpose::STANDARD.encode(&self.data)
        )
    }
}

impl fmt::Debug for EncodedImage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "EncodedImage({}, {} bytes)", self.media_type, self.data.len())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub prompt: String,
    /// Frames in capture order.
    pub images: Vec<EncodedImage>,
    pub max_output_tokens: u32,
    pub temperature: f32,
    pub model_tag: String,
    /// Sampling seed forwarded to providers that accept one.
    pub seed: Option<u64>,
}

impl CompletionRequest {
    pub fn text(prompt: impl Into<String>) -> Self {
        Self {
            prompt: prompt.into(),
            images: Vec::new(),
            max_output_tokens: 1024,
            temperature: 0.9,
            model_tag: String::new(),
            seed: None,
        }
    }

    pub fn with_images(mut self, images: Vec<EncodedImage>) -> Self {
        self.images = images;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn with_temperature(mut self, temperature: f32) -> Self {
        self.temperature = temperature;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub usage: TokenUsage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AudioFormat {
    Wav,
    Webm,
    Ogg,
    Mp3,
}

impl AudioFormat {
    /// Sniffs the container from its magic bytes.
    pub fn detect(bytes: &[u8]) -> Option<AudioFormat> {
        if bytes.len() >= 12 && &bytes[0..4] == b"RIFF" && &bytes[8..12] == b"WAVE" {
            Some(AudioFormat::Wav)
        } else if bytes.starts_with(&[0x1A, 0x45, 0xDF, 0xA3]) {
            Some(AudioFormat::Webm)
        } else if bytes.starts_with(b"OggS") {
            Some(AudioFormat::Ogg)
        } else if bytes.starts_with(b"ID3") || (bytes.len() >= 2 && bytes[0] == 0xFF && bytes[1] & 0xE0 == 0xE0) {
            Some(AudioFormat::Mp3)
        } else {
            None
        }
    }

    pub fn media_type(self) -> &'static str {
        match self {
            AudioFormat::Wav => "audio/wav",
            AudioFormat::Webm => "audio/webm",
            AudioFormat::Ogg => "audio/ogg",
            AudioFormat::Mp3 => "audio/mpeg",
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            AudioFormat::Wav => "wav",
            AudioFormat::Webm => "webm",
            AudioFormat::Ogg => "ogg",
            AudioFormat::Mp3 => "mp3",
        }
    }
}

#[derive(Clone, PartialEq)]
pub struct AudioClip {
    pub bytes: Vec<u8>,
    pub format: AudioFormat,
    /// Known for WAV; other containers rely on the caller's declared length.
    pub duration_secs: Option<f64>,
}

impl fmt::Debug for AudioClip {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AudioClip")
            .field("format", &self.format)
            .field("bytes", &self.bytes.len())
            .field("duration_secs", &self.duration_secs)
            .finish()
    }
}

impl AudioClip {
    pub fn from_bytes(bytes: Vec<u8>) -> Result<Self, GatewayError> {
        if bytes.is_empty() {
            return Err(GatewayError::UnsupportedFormat("empty audio payload".into()));
        }
        let format = AudioFormat::detect(&bytes)
            .ok_or_else(|| GatewayError::UnsupportedFormat("unrecognized audio container".into()))?;
        let duration_secs = match format {
            AudioFormat::Wav => Some(wav_duration(&bytes)?),
            _ => None,
        };
        Ok(Self {
            bytes,
            format,
            duration_secs,
        })
    }

    /// True for a WAV clip whose samples are all zero.
    pub fn is_silent_wav(&self) -> bool {
        if self.format != AudioFormat::Wav {
            return false;
        }
        let Ok(mut reader) = hound::WavReader::new(self.bytes.as_slice()) else {
            return false;
        };
        match reader.spec().sample_format {
            hound::SampleFormat::Int => reader.samples::<i32>().all(|s| matches!(s, Ok(0))),
            hound::SampleFormat::Float => reader.samples::<f32>().all(|s| matches!(s, Ok(v) if v == 0.0)),
        }
    }
}

fn wav_duration(bytes: &[u8]) -> Result<f64, GatewayError> {
    let reader = hound::WavReader::new(bytes)
        .map_err(|e| GatewayError::UnsupportedFormat(format!("invalid WAV: {e}")))?;
    let spec = reader.spec();
    if spec.sample_rate == 0 {
        return Err(GatewayError::UnsupportedFormat("WAV sample rate is zero".into()));
    }
    Ok(reader.duration() as f64 / spec.sample_rate as f64)
}

#[derive(Clone, PartialEq, Eq)]
pub struct SpeechAudio {
    pub content_type: String,
    pub bytes: Vec<u8>,
}

impl fmt::Debug for SpeechAudio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SpeechAudio({}, {} bytes)", self.content_type, self.bytes.len())
    }
}

/// Where a generated image can be fetched (a URL or a `data:` URL).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ImageRef(pub String);

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum GatewayError {
    #[error("provider timed out")]
    Timeout,
    #[error("provider rate limit reached")]
    RateLimited,
    #[error("provider rejected the credential")]
    Auth,
    #[error("provider error{}: {excerpt}", .status.map(|s| format!(" (HTTP {s})")).unwrap_or_default())]
    Provider { status: Option<u16>, excerpt: String },
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("text of {len} characters exceeds the {cap} character cap")]
    TextTooLong { len: usize, cap: usize },
    #[error("invalid request: {0}")]
    Validation(String),
    #[error("capability `{0}` is not available")]
    CapabilityUnavailable(&'static str),
    #[error("provider configuration: {0}")]
    Config(String),
}

impl GatewayError {
    pub fn provider(status: Option<u16>, body: &str) -> Self {
        const EXCERPT: usize = 200;
        let excerpt: String = body.chars().take(EXCERPT).collect();
        GatewayError::Provider { status, excerpt }
    }

    fn is_retryable(&self) -> bool {
        match self {
            GatewayError::Timeout | GatewayError::RateLimited => true,
            GatewayError::Provider { status, .. } => status.is_none_or(|s| s >= 500),
            _ => false,
        }
    }
}

/// The backend seam. Implementations only transport; validation, retries
/// and accounting checks live in [`Gateway`].
pub trait Provider: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, GatewayError>;
    fn transcribe(&self, audio: &AudioClip) -> Result<String, GatewayError>;
    fn synthesize_speech(&self, text: &str) -> Result<SpeechAudio, GatewayError>;
    fn embed(&self, text: &str) -> Result<Vec<f32>, GatewayError>;
    fn generate_portrait(&self, description: &str) -> Result<ImageRef, GatewayError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Remote,
    Mock,
}

impl std::str::FromStr for ProviderKind {
    type Err = GatewayError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "remote" => Ok(ProviderKind::Remote),
            "mock" => Ok(ProviderKind::Mock),
            other => Err(GatewayError::Config(format!("unknown provider kind `{other}`"))),
        }
    }
}

/// Names the environment variable holding a secret; the value itself is
/// never stored in configuration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SecretRef {
    pub env: String,
}

impl SecretRef {
    pub fn env(name: impl Into<String>) -> Self {
        Self { env: name.into() }
    }

    pub fn resolve(&self) -> Result<String, GatewayError> {
        std::env::var(&self.env)
            .map_err(|_| GatewayError::Config(format!("credential variable {} is not set", self.env)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    /// Maximum number of attempts, including the first.
    pub count: u32,
    pub backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            count: 3,
            backoff: Duration::from_millis(500),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelNames {
    pub completion: String,
    pub transcription: String,
    pub speech: String,
    pub voice: String,
    pub embedding: String,
    pub image: String,
}

impl Default for ModelNames {
    fn default() -> Self {
        Self {
            completion: "gpt-4o".into(),
            transcription: "whisper-1".into(),
            speech: "tts-1".into(),
            voice: "alloy".into(),
            embedding: "text-embedding-3-small".into(),
            image: "dall-e-3".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    pub endpoint: String,
    pub credential: Option<SecretRef>,
    pub timeout: Duration,
    pub retry: RetryPolicy,
    pub models: ModelNames,
    pub portraits_enabled: bool,
    pub max_audio_secs: f64,
    pub max_speech_chars: usize,
    /// Directory of mock fixtures; the built-in set when absent.
    pub mock_fixtures: Option<PathBuf>,
    pub mock_seed: u64,
    pub mock_latency: Duration,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            kind: ProviderKind::Mock,
            endpoint: "https://api.openai.com/v1".into(),
            credential: None,
            timeout: Duration::from_secs(60),
            retry: RetryPolicy::default(),
            models: ModelNames::default(),
            portraits_enabled: false,
            max_audio_secs: 120.0,
            max_speech_chars: 4096,
            mock_fixtures: None,
            mock_seed: 0,
            mock_latency: Duration::ZERO,
        }
    }
}

impl ProviderConfig {
    pub fn mock() -> Self {
        Self {
            retry: RetryPolicy {
                count: 1,
                backoff: Duration::ZERO,
            },
            ..Self::default()
        }
    }

    pub fn remote(endpoint: impl Into<String>, credential: Option<SecretRef>) -> Self {
        Self {
            kind: ProviderKind::Remote,
            endpoint: endpoint.into(),
            credential,
            ..Self::default()
        }
    }

    /// Reads `IMPROV_PROVIDER`, `IMPROV_ENDPOINT`, `IMPROV_API_KEY_VAR`,
    /// `IMPROV_MODEL`, `IMPROV_MOCK_FIXTURES`, `IMPROV_TIMEOUT_SECS` and
    /// `IMPROV_PORTRAITS` over the defaults.
    pub fn from_env() -> Result<Self, GatewayError> {
        let mut config = match std::env::var("IMPROV_PROVIDER") {
            Ok(kind) if kind.parse::<ProviderKind>()? == ProviderKind::Remote => {
                Self::remote(Self::default().endpoint, Some(SecretRef::env("OPENAI_API_KEY")))
            }
            _ => Self::mock(),
        };
        if let Ok(endpoint) = std::env::var("IMPROV_ENDPOINT") {
            config.endpoint = endpoint;
        }
        if let Ok(var) = std::env::var("IMPROV_API_KEY_VAR") {
            config.credential = Some(SecretRef::env(var));
        }
        if let Ok(model) = std::env::var("IMPROV_MODEL") {
            config.models.completion = model;
        }
        if let Ok(dir) = std::env::var("IMPROV_MOCK_FIXTURES") {
            config.mock_fixtures = Some(dir.into());
        }
        if let Ok(secs) = std::env::var("IMPROV_TIMEOUT_SECS") {
            let secs: f64 = secs
                .parse()
                .map_err(|_| GatewayError::Config(format!("bad IMPROV_TIMEOUT_SECS `{secs}`")))?;
            config.timeout = Duration::from_secs_f64(secs);
        }
        if let Ok(flag) = std::env::var("IMPROV_PORTRAITS") {
            config.portraits_enabled = matches!(flag.as_str(), "1" | "true" | "yes");
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.retry.count == 0 {
            return Err(GatewayError::Config("retry.count must be at least 1".into()));
        }
        if self.kind == ProviderKind::Remote && !self.endpoint.starts_with("http") {
            return Err(GatewayError::Config(format!("endpoint `{}` is not an http(s) URL", self.endpoint)));
        }
        Ok(())
    }
}

/// Counts completions seen and those whose usage failed the accounting
/// identity.
#[derive(Debug, Default)]
pub struct UsageAudit {
    responses: AtomicU64,
    violations: AtomicU64,
}

impl UsageAudit {
    pub fn responses(&self) -> u64 {
        self.responses.load(Ordering::Relaxed)
    }

    pub fn violations(&self) -> u64 {
        self.violations.load(Ordering::Relaxed)
    }

    fn record(&self, usage: &TokenUsage) {
        self.responses.fetch_add(1, Ordering::Relaxed);
        if !usage.is_consistent() {
            self.violations.fetch_add(1, Ordering::Relaxed);
        }
    }
}

#[derive(Clone)]
pub struct Gateway {
    provider: Arc<dyn Provider>,
    config: ProviderConfig,
    audit: Arc<UsageAudit>,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway")
            .field("kind", &self.config.kind)
            .field("audit", &self.audit)
            .finish()
    }
}

impl Gateway {
    pub fn from_config(config: ProviderConfig) -> Result<Self, GatewayError> {
        config.validate()?;
        let provider: Arc<dyn Provider> = match config.kind {
            ProviderKind::Mock => {
                let fixtures = match &config.mock_fixtures {
                    Some(dir) => MockFixtures::load_dir(dir)?,
                    None => MockFixtures::builtin(),
                };
                Arc::new(
                    MockProvider::new(fixtures)
                        .with_seed(config.mock_seed)
                        .with_latency(config.mock_latency),
                )
            }
            ProviderKind::Remote => Arc::new(RemoteProvider::new(&config)?),
        };
        Ok(Self::with_provider(provider, config))
    }

    pub fn with_provider(provider: Arc<dyn Provider>, config: ProviderConfig) -> Self {
        Self {
            provider,
            config,
            audit: Arc::new(UsageAudit::default()),
        }
    }

    /// Mock gateway over the built-in fixtures.
    pub fn mock() -> Self {
        Self::from_config(ProviderConfig::mock()).expect("built-in mock fixtures load")
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.config
    }

    pub fn audit(&self) -> &UsageAudit {
        &self.audit
    }

    fn with_retry<T>(&self, mut op: impl FnMut() -> Result<T, GatewayError>) -> Result<T, GatewayError> {
        let attempts = self.config.retry.count.max(1);
        let mut attempt = 1;
        loop {
            match op() {
                Err(e) if e.is_retryable() && attempt < attempts => {
                    tracing::warn!(attempt, error = %e, "retrying provider call");
                    std::thread::sleep(self.config.retry.backoff * attempt);
                    attempt += 1;
                }
                other => return other,
            }
        }
    }

    pub fn complete(&self, request: &CompletionRequest) -> Result<Completion, GatewayError> {
        if request.prompt.trim().is_empty() {
            return Err(GatewayError::Validation("prompt is empty".into()));
        }
        if request.max_output_tokens == 0 {
            return Err(GatewayError::Validation("max_output_tokens is zero".into()));
        }
        let completion = self.with_retry(|| self.provider.complete(request))?;
        self.audit.record(&completion.usage);
        if completion.text.trim().is_empty() {
            return Err(GatewayError::provider(None, "empty completion"));
        }
        Ok(completion)
    }

    pub fn transcribe(&self, audio: &AudioClip) -> Result<String, GatewayError> {
        if audio.bytes.is_empty() {
            return Err(GatewayError::UnsupportedFormat("empty audio payload".into()));
        }
        if let Some(secs) = audio.duration_secs {
            if secs > self.config.max_audio_secs {
                return Err(GatewayError::Validation(format!(
                    "audio lasts {secs:.1} s, over the {:.0} s limit",
                    self.config.max_audio_secs
                )));
            }
        }
        self.with_retry(|| self.provider.transcribe(audio))
    }

    pub fn synthesize_speech(&self, text: &str) -> Result<SpeechAudio, GatewayError> {
        if text.trim().is_empty() {
            return Err(GatewayError::Validation("narration text is empty".into()));
        }
        let len = text.chars().count();
        if len > self.config.max_speech_chars {
            return Err(GatewayError::TextTooLong {
                len,
                cap: self.config.max_speech_chars,
            });
        }
        let audio = self.with_retry(|| self.provider.synthesize_speech(text))?;
        if audio.bytes.is_empty() {
            return Err(GatewayError::provider(None, "empty audio"));
        }
        Ok(audio)
    }

    pub fn embed(&self, text: &str) -> Result<Vec<f32>, GatewayError> {
        if text.trim().is_empty() {
            return Err(GatewayError::Validation("cannot embed empty text".into()));
        }
        self.with_retry(|| self.provider.embed(text))
    }

    pub fn generate_portrait(&self, description: &str) -> Result<ImageRef, GatewayError> {
        if !self.config.portraits_enabled {
            return Err(GatewayError::CapabilityUnavailable("portrait"));
        }
        if description.trim().is_empty() {
            return Err(GatewayError::Validation("portrait description is empty".into()));
        }
        self.with_retry(|| self.provider.generate_portrait(description))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Mutex;

    /// Fails with the queued errors, then succeeds.
    struct Flaky {
        failures: Mutex<Vec<GatewayError>>,
        calls: AtomicU64,
    }

    impl Flaky {
        fn new(failures: Vec<GatewayError>) -> Self {
            Self {
                failures: Mutex::new(failures),
                calls: AtomicU64::new(0),
            }
        }

        fn next(&self) -> Result<(), GatewayError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            match self.failures.lock().unwrap().pop() {
                Some(e) => Err(e),
                None => Ok(()),
            }
        }
    }

    impl Provider for Flaky {
        fn complete(&self, _: &CompletionRequest) -> Result<Completion, GatewayError> {
            self.next()?;
            Ok(Completion {
                text: "ok".into(),
                usage: TokenUsage::new(3, 1),
            })
        }
        fn transcribe(&self, _: &AudioClip) -> Result<String, GatewayError> {
            self.next().map(|_| String::new())
        }
        fn synthesize_speech(&self, _: &str) -> Result<SpeechAudio, GatewayError> {
            unimplemented!()
        }
        fn embed(&self, _: &str) -> Result<Vec<f32>, GatewayError> {
            self.next().map(|_| vec![1.0])
        }
        fn generate_portrait(&self, _: &str) -> Result<ImageRef, GatewayError> {
            unimplemented!()
        }
    }

    fn gateway(provider: Arc<Flaky>, count: u32) -> Gateway {
        let config = ProviderConfig {
            retry: RetryPolicy {
                count,
                backoff: Duration::ZERO,
            },
            ..ProviderConfig::mock()
        };
        Gateway::with_provider(provider, config)
    }

    #[test]
    fn usage_identity() {
        let u = TokenUsage::new(1155, 86);
        assert_eq!(u.total(), 1241);
        assert!(TokenUsage::from_reported(10, 2, 13).is_err());
        assert!(serde_json::from_str::<TokenUsage>(r#"{"completion":1,"prompt":2,"total":4}"#).is_err());
        let back: TokenUsage = serde_json::from_str(&serde_json::to_string(&u).unwrap()).unwrap();
        assert_eq!(back, u);
    }

    #[test]
    fn retries_transient_errors_up_to_count() {
        let flaky = Arc::new(Flaky::new(vec![GatewayError::Timeout, GatewayError::RateLimited]));
        let g = gateway(flaky.clone(), 3);
        assert!(g.complete(&CompletionRequest::text("ping")).is_ok());
        assert_eq!(flaky.calls.load(Ordering::SeqCst), 3);

        let flaky = Arc::new(Flaky::new(vec![GatewayError::Timeout, GatewayError::Timeout]));
        let g = gateway(flaky.clone(), 2);
        assert_eq!(g.complete(&CompletionRequest::text("ping")), Err(GatewayError::Timeout));
        assert_eq!(flaky.calls.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn client_errors_are_not_retried() {
        let flaky = Arc::new(Flaky::new(vec![GatewayError::Auth]));
        let g = gateway(flaky.clone(), 5);
        assert_eq!(g.embed("x"), Err(GatewayError::Auth));
        assert_eq!(flaky.calls.load(Ordering::SeqCst), 1);

        let flaky = Arc::new(Flaky::new(vec![GatewayError::provider(Some(400), "bad")]));
        let g = gateway(flaky.clone(), 5);
        assert!(g.embed("x").is_err());
        assert_eq!(flaky.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn input_validation() {
        let g = Gateway::mock();
        assert!(matches!(g.embed(""), Err(GatewayError::Validation(_))));
        assert!(matches!(g.synthesize_speech(" "), Err(GatewayError::Validation(_))));
        let long = "a".repeat(50_000);
        assert_eq!(
            g.synthesize_speech(&long),
            Err(GatewayError::TextTooLong { len: 50_000, cap: 4096 })
        );
        assert_eq!(
            g.generate_portrait("a clown"),
            Err(GatewayError::CapabilityUnavailable("portrait"))
        );
        assert!(matches!(
            AudioClip::from_bytes(Vec::new()),
            Err(GatewayError::UnsupportedFormat(_))
        ));
        assert!(matches!(
            AudioClip::from_bytes(b"not audio at all".to_vec()),
            Err(GatewayError::UnsupportedFormat(_))
        ));
    }

    #[test]
    fn audit_counts_responses() {
        let g = Gateway::mock();
        g.complete(&CompletionRequest::text("ping")).unwrap();
        assert_eq!(g.audit().responses(), 1);
        assert_eq!(g.audit().violations(), 0);
    }

    #[test]
    fn audio_format_sniffing() {
        assert_eq!(AudioFormat::detect(b"OggS\0\0"), Some(AudioFormat::Ogg));
        assert_eq!(AudioFormat::detect(&[0x1A, 0x45, 0xDF, 0xA3, 1]), Some(AudioFormat::Webm));
        assert_eq!(AudioFormat::detect(b"ID3\x04"), Some(AudioFormat::Mp3));
        assert_eq!(AudioFormat::detect(b"hello"), None);
    }
}
