//! Adapter for hosted models speaking the OpenAI-style JSON-over-HTTP API:
//! `/chat/completions`, `/audio/transcriptions`, `/audio/speech`,
//! `/embeddings` and `/images/generations`.

use serde::Deserialize;
use serde_json::{json, Value};
use ureq::http::Response;
use ureq::{Agent, Body};

use super::{
    AudioClip, Completion, CompletionRequest, GatewayError, ImageRef, ModelNames, Provider,
    ProviderConfig, SpeechAudio, TokenUsage,
};

const MAX_RESPONSE_BYTES: u64 = 64 * 1024 * 1024;

pub struct RemoteProvider {
    agent: Agent,
    endpoint: String,
    api_key: Option<String>,
    models: ModelNames,
}

impl RemoteProvider {
    pub fn new(config: &ProviderConfig) -> Result<Self, GatewayError> {
        let api_key = config.credential.as_ref().map(|c| c.resolve()).transpose()?;
        let agent: Agent = Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            agent,
            endpoint: config.endpoint.trim_end_matches('/').to_string(),
            api_key,
            models: config.models.clone(),
        })
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{}", self.endpoint, path)
    }

    fn authorize<B>(&self, req: ureq::RequestBuilder<B>) -> ureq::RequestBuilder<B> {
        match &self.api_key {
            Some(key) => req.header("Authorization", &format!("Bearer {key}")),
            None => req,
        }
    }

    fn post_json(&self, path: &str, body: &Value) -> Result<Response<Body>, GatewayError> {
        let req = self.authorize(self.agent.post(&self.url(path)));
        let response = req.send_json(body).map_err(transport_error)?;
        check_status(response)
    }

    fn read_json<T: for<'de> Deserialize<'de>>(mut response: Response<Body>) -> Result<T, GatewayError> {
        let text = response
            .body_mut()
            .with_config()
            .limit(MAX_RESPONSE_BYTES)
            .read_to_string()
            .map_err(transport_error)?;
        serde_json::from_str(&text).map_err(|e| GatewayError::provider(None, &format!("malformed response: {e}")))
    }
}

fn transport_error(e: ureq::Error) -> GatewayError {
    match e {
        ureq::Error::Timeout(_) => GatewayError::Timeout,
        ureq::Error::Io(io) if io.kind() == std::io::ErrorKind::TimedOut => GatewayError::Timeout,
        other => GatewayError::provider(None, &other.to_string()),
    }
}

fn check_status(mut response: Response<Body>) -> Result<Response<Body>, GatewayError> {
    let status = response.status().as_u16();
    if (200..300).contains(&status) {
        return Ok(response);
    }
    let body = response.body_mut().read_to_string().unwrap_or_default();
    Err(match status {
        401 | 403 => GatewayError::Auth,
        429 => GatewayError::RateLimited,
        408 | 504 => GatewayError::Timeout,
        _ => GatewayError::provider(Some(status), &body),
    })
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
    usage: Option<ChatUsage>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: Option<String>,
}

#[derive(Deserialize)]
struct ChatUsage {
    prompt_tokens: u64,
    completion_tokens: u64,
    total_tokens: u64,
}

#[derive(Deserialize)]
struct TranscriptionResponse {
    text: String,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f32>,
}

#[derive(Deserialize)]
struct ImageResponse {
    data: Vec<ImageDatum>,
}

#[derive(Deserialize)]
struct ImageDatum {
    url: Option<String>,
    b64_json: Option<String>,
}

fn multipart_body(boundary: &str, fields: &[(&str, &str)], file: (&str, &str, &[u8])) -> Vec<u8> {
    let mut body = Vec::new();
    for (name, value) in fields {
        body.extend_from_slice(
            format!("--{boundary}\r\nContent-Disposition: form-data; name=\"{name}\"\r\n\r\n{value}\r\n")
                .as_bytes(),
        );
    }
    let (filename, content_type, bytes) = file;
    body.extend_from_slice(
        format!(
            "--{boundary}\r\nContent-Disposition: form-data; name=\"file\"; filename=\"{filename}\"\r\n\
             Content-Type: {content_type}\r\n\r\n"
        )
        .as_bytes(),
    );
    body.extend_from_slice(bytes);
    body.extend_from_slice(format!("\r\n--{boundary}--\r\n").as_bytes());
    body
}

impl Provider for RemoteProvider {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, GatewayError> {
        let mut content = vec![json!({"type": "text", "text": request.prompt})];
        content.extend(request.images.iter().map(|image| {
            json!({"type": "image_url", "image_url": {"url": image.data_url(), "detail": "low"}})
        }));
        let model = if request.model_tag.is_empty() {
            &self.models.completion
        } else {
            &request.model_tag
        };
        let mut body = json!({
            "model": model,
            "messages": [{"role": "user", "content": content}],
            "max_tokens": request.max_output_tokens,
            "temperature": request.temperature,
        });
        if let Some(seed) = request.seed {
            body["seed"] = json!(seed);
        }
        let response: ChatResponse = Self::read_json(self.post_json("chat/completions", &body)?)?;
        let text = response
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| GatewayError::provider(None, "response has no message content"))?;
        let usage = match response.usage {
            Some(u) => TokenUsage::from_reported(u.prompt_tokens, u.completion_tokens, u.total_tokens)
                .unwrap_or_else(|reason| {
                    tracing::warn!(%reason, "provider usage does not add up; recomputing total");
                    TokenUsage::new(u.prompt_tokens, u.completion_tokens)
                }),
            None => TokenUsage::default(),
        };
        Ok(Completion { text, usage })
    }

    fn transcribe(&self, audio: &AudioClip) -> Result<String, GatewayError> {
        let boundary = format!("improv-{:016x}", rand::random::<u64>());
        let filename = format!("performance.{}", audio.format.extension());
        let body = multipart_body(
            &boundary,
            &[("model", &self.models.transcription), ("response_format", "json")],
            (&filename, audio.format.media_type(), &audio.bytes),
        );
        let req = self
            .authorize(self.agent.post(&self.url("audio/transcriptions")))
            .header("Content-Type", &format!("multipart/form-data; boundary={boundary}"));
        let response = check_status(req.send(&body[..]).map_err(transport_error)?)?;
        let parsed: TranscriptionResponse = Self::read_json(response)?;
        Ok(parsed.text)
    }

    fn synthesize_speech(&self, text: &str) -> Result<SpeechAudio, GatewayError> {
        let body = json!({
            "model": self.models.speech,
            "voice": self.models.voice,
            "input": text,
            "response_format": "mp3",
        });
        let mut response = self.post_json("audio/speech", &body)?;
        let content_type = response
            .headers()
            .get("content-type")
            .and_then(|v| v.to_str().ok())
            .unwrap_or("audio/mpeg")
            .to_string();
        let bytes = response
            .body_mut()
            .with_config()
            .limit(MAX_RESPONSE_BYTES)
            .read_to_vec()
            .map_err(transport_error)?;
        Ok(SpeechAudio { content_type, bytes })
    }

    fn embed(&self, text: &str) -> Result<Vec<f32>, GatewayError> {
        let body = json!({"model": self.models.embedding, "input": text});
        let response: EmbeddingResponse = Self::read_json(self.post_json("embeddings", &body)?)?;
        response
            .data
            .into_iter()
            .next()
            .map(|d| d.embedding)
            .filter(|v| !v.is_empty())
            .ok_or_else(|| GatewayError::provider(None, "response has no embedding"))
    }

    fn generate_portrait(&self, description: &str) -> Result<ImageRef, GatewayError> {
        let body = json!({
            "model": self.models.image,
            "prompt": description,
            "n": 1,
            "size": "1024x1024",
            "response_format": "b64_json",
        });
        let response: ImageResponse = Self::read_json(self.post_json("images/generations", &body)?)?;
        let datum = response
            .data
            .into_iter()
            .next()
            .ok_or_else(|| GatewayError::provider(None, "response has no image"))?;
        match (datum.b64_json, datum.url) {
            (Some(b64), _) => Ok(ImageRef(format!("data:image/png;base64,{b64}"))),
            (None, Some(url)) => Ok(ImageRef(url)),
            (None, None) => Err(GatewayError::provider(None, "image has neither data nor url")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{EncodedImage, Gateway, RetryPolicy, SecretRef};
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::mpsc;
    use std::time::Duration;

    struct Captured {
        head: String,
        body: Vec<u8>,
    }

    /// One-shot HTTP stub: answers each connection with the next canned
    /// reply, after an optional delay, and reports what it received.
    fn stub(replies: Vec<(u16, &'static str, Duration)>) -> (String, mpsc::Receiver<Captured>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for (status, body, delay) in replies {
                let Ok((stream, _)) = listener.accept() else { return };
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut head = String::new();
                let mut length = 0usize;
                loop {
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        length = v.trim().parse().unwrap_or(0);
                    }
                    head.push_str(&line);
                }
                let mut req_body = vec![0; length];
                let _ = reader.read_exact(&mut req_body);
                let _ = tx.send(Captured { head, body: req_body });
                std::thread::sleep(delay);
                let mut stream = stream;
                let _ = write!(
                    stream,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                );
            }
        });
        (format!("http://{addr}/v1"), rx)
    }

    fn gateway(endpoint: String, timeout: Duration, attempts: u32) -> Gateway {
        let config = ProviderConfig {
            timeout,
            retry: RetryPolicy {
                count: attempts,
                backoff: Duration::ZERO,
            },
            ..ProviderConfig::remote(endpoint, None)
        };
        Gateway::from_config(config).unwrap()
    }

    const CHAT_OK: &str = r#"{"choices":[{"message":{"role":"assistant","content":"pong"}}],
        "usage":{"prompt_tokens":12,"completion_tokens":3,"total_tokens":15}}"#;

    #[test]
    fn completion_round_trip() {
        let (endpoint, rx) = stub(vec![(200, CHAT_OK, Duration::ZERO)]);
        let g = gateway(endpoint, Duration::from_secs(5), 1);
        let request = CompletionRequest::text("ping")
            .with_images(vec![EncodedImage::jpeg(vec![0xFF, 0xD8]), EncodedImage::jpeg(vec![1])])
            .with_seed(9);
        let out = g.complete(&request).unwrap();
        assert_eq!(out.text, "pong");
        assert_eq!(out.usage, TokenUsage::new(12, 3));

        let captured = rx.recv().unwrap();
        assert!(captured.head.starts_with("POST /v1/chat/completions"));
        let sent: Value = serde_json::from_slice(&captured.body).unwrap();
        let content = sent["messages"][0]["content"].as_array().unwrap();
        assert_eq!(content[0]["text"], "ping");
        assert_eq!(content[1]["image_url"]["url"], "data:image/jpeg;base64,/9g=");
        assert_eq!(content[2]["image_url"]["url"], "data:image/jpeg;base64,AQ==");
        assert_eq!(sent["seed"], 9);
        assert_eq!(sent["model"], "gpt-4o");
    }

    #[test]
    fn slow_provider_times_out() {
        let (endpoint, _rx) = stub(vec![(200, CHAT_OK, Duration::from_millis(300))]);
        let g = gateway(endpoint, Duration::from_millis(1), 1);
        assert_eq!(g.complete(&CompletionRequest::text("ping")), Err(GatewayError::Timeout));
    }

    #[test]
    fn status_mapping() {
        let (endpoint, _rx) = stub(vec![
            (401, r#"{"error":"bad key"}"#, Duration::ZERO),
            (429, "{}", Duration::ZERO),
            (400, r#"{"error":"nope"}"#, Duration::ZERO),
        ]);
        let g = gateway(endpoint, Duration::from_secs(5), 1);
        let req = CompletionRequest::text("ping");
        assert_eq!(g.complete(&req), Err(GatewayError::Auth));
        assert_eq!(g.complete(&req), Err(GatewayError::RateLimited));
        assert_eq!(
            g.complete(&req),
            Err(GatewayError::Provider {
                status: Some(400),
                excerpt: r#"{"error":"nope"}"#.into()
            })
        );
    }

    #[test]
    fn server_errors_are_retried() {
        let (endpoint, _rx) = stub(vec![(503, "{}", Duration::ZERO), (200, CHAT_OK, Duration::ZERO)]);
        let g = gateway(endpoint, Duration::from_secs(5), 2);
        assert_eq!(g.complete(&CompletionRequest::text("ping")).unwrap().text, "pong");
    }

    #[test]
    fn transcription_uses_multipart_and_bearer_token() {
        std::env::set_var("IMPROV_TEST_REMOTE_KEY", "sk-test");
        let (endpoint, rx) = stub(vec![(200, r#"{"text":"hello there"}"#, Duration::ZERO)]);
        let config = ProviderConfig {
            retry: RetryPolicy {
                count: 1,
                backoff: Duration::ZERO,
            },
            ..ProviderConfig::remote(endpoint, Some(SecretRef::env("IMPROV_TEST_REMOTE_KEY")))
        };
        let g = Gateway::from_config(config).unwrap();
        let clip = AudioClip::from_bytes(crate::media::synth::silent_wav(0.5)).unwrap();
        assert_eq!(g.transcribe(&clip).unwrap(), "hello there");
        let captured = rx.recv().unwrap();
        assert!(captured.head.starts_with("POST /v1/audio/transcriptions"));
        assert!(captured.head.contains("Bearer sk-test"));
        assert!(captured.head.contains("multipart/form-data; boundary="));
        let body = String::from_utf8_lossy(&captured.body);
        assert!(body.contains("name=\"model\"\r\n\r\nwhisper-1"));
        assert!(body.contains("filename=\"performance.wav\""));
    }

    #[test]
    fn embeddings_and_missing_credential() {
        let (endpoint, _rx) = stub(vec![(200, r#"{"data":[{"embedding":[0.6,0.8]}]}"#, Duration::ZERO)]);
        let g = gateway(endpoint, Duration::from_secs(5), 1);
        assert_eq!(g.embed("x").unwrap(), vec![0.6, 0.8]);

        let config = ProviderConfig::remote("http://127.0.0.1:9", Some(SecretRef::env("IMPROV_UNSET_VAR_FOR_TEST")));
        assert!(matches!(Gateway::from_config(config), Err(GatewayError::Config(_))));
    }
}
