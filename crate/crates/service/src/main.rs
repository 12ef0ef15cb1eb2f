use std::process::ExitCode;

use cg3d::training::Checkpoint;
use cg3d_service::{execute, router, AppState, Cli, Command};
use clap::Parser;

fn serve(ckpt: &std::path::Path, host: &str, port: u16, max_points: usize) -> Result<(), Box<dyn std::error::Error>> {
    let model = Checkpoint::load(ckpt)?.model;
    let app = router(AppState::new(model, max_points));
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind((host, port)).await?;
        eprintln!("listening on {}", listener.local_addr()?);
        axum::serve(listener, app).await
    })?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Serve {
            ckpt,
            port,
            host,
            max_points,
        } => serve(ckpt, host, *port, *max_points),
        cmd => execute(cmd)
            .map(|v| println!("{}", serde_json::to_string_pretty(&v).expect("json value serializes")))
            .map_err(Into::into),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
