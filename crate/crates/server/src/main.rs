use clap::Parser;
use improv_server::{router, AppState, ServerArgs};
use tracing_subscriber::EnvFilter;

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .init();
    let config = ServerArgs::parse().into_config()?;
    let bind = config.bind;
    tracing::info!(
        %bind,
        data_dir = %config.data_dir.display(),
        provider = ?config.provider.kind,
        "starting"
    );
    let app = router(AppState::new(config)?);
    let listener = tokio::net::TcpListener::bind(bind).await?;
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
