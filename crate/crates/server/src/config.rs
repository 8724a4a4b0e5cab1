use std::net::SocketAddr;
use std::path::PathBuf;
use std::time::Duration;

use clap::Parser;
use improv_core::gateway::ProviderKind;
use improv_core::{GatewayError, ProviderConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct Limits {
    pub max_upload_bytes: usize,
    pub max_sessions: usize,
    pub request_timeout: Duration,
}

impl Default for Limits {
    fn default() -> Self {
        Self {
            max_upload_bytes: 64 * 1024 * 1024,
            max_sessions: 10_000,
            request_timeout: Duration::from_secs(120),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ApiConfig {
    pub bind: SocketAddr,
    pub data_dir: PathBuf,
    pub provider: ProviderConfig,
    pub limits: Limits,
    /// `*` allows any origin.
    pub cors_origins: Vec<String>,
    /// When set, every route except `/healthz` needs `Authorization: Bearer <token>`.
    pub api_token: Option<String>,
}

impl ApiConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        Self {
            bind: SocketAddr::from(([127, 0, 0, 1], 8080)),
            data_dir: data_dir.into(),
            provider: ProviderConfig::mock(),
            limits: Limits::default(),
            cors_origins: vec!["http://localhost:5173".into()],
            api_token: None,
        }
    }
}

/// Command-line flags; each falls back to its environment variable, then
/// to the default.
#[derive(Debug, Parser)]
#[command(name = "improv-server", version, about = "HTTP service for improv story sessions")]
pub struct ServerArgs {
    #[arg(long, env = "IMPROV_BIND", default_value = "127.0.0.1:8080")]
    pub bind: SocketAddr,
    #[arg(long, env = "IMPROV_DATA_DIR", default_value = "./data")]
    pub data_dir: PathBuf,
    /// mock or remote. Other provider settings come from IMPROV_* variables.
    #[arg(long, env = "IMPROV_PROVIDER")]
    pub provider: Option<ProviderKind>,
    #[arg(long, env = "IMPROV_MAX_UPLOAD_BYTES", default_value_t = 64 * 1024 * 1024)]
    pub max_upload_bytes: usize,
    #[arg(long, env = "IMPROV_MAX_SESSIONS", default_value_t = 10_000)]
    pub max_sessions: usize,
    #[arg(long, env = "IMPROV_REQUEST_TIMEOUT_SECS", default_value_t = 120)]
    pub request_timeout_secs: u64,
    #[arg(long, env = "IMPROV_CORS_ORIGINS", value_delimiter = ',', default_value = "http://localhost:5173")]
    pub cors_origins: Vec<String>,
    /// Shared bearer token. Read from the environment only.
    #[arg(skip)]
    pub api_token: Option<String>,
}

impl ServerArgs {
    pub fn into_config(self) -> Result<ApiConfig, GatewayError> {
        let mut provider = ProviderConfig::from_env()?;
        match self.provider {
            Some(ProviderKind::Mock) if provider.kind != ProviderKind::Mock => {
                provider = ProviderConfig {
                    mock_fixtures: provider.mock_fixtures,
                    ..ProviderConfig::mock()
                }
            }
            Some(kind) => provider.kind = kind,
            None => {}
        }
        provider.validate()?;
        Ok(ApiConfig {
            bind: self.bind,
            data_dir: self.data_dir,
            provider,
            limits: Limits {
                max_upload_bytes: self.max_upload_bytes,
                max_sessions: self.max_sessions,
                request_timeout: Duration::from_secs(self.request_timeout_secs),
            },
            cors_origins: self.cors_origins,
            api_token: self
                .api_token
                .or_else(|| std::env::var("IMPROV_API_TOKEN").ok())
                .filter(|t| !t.is_empty()),
        })
    }
}
