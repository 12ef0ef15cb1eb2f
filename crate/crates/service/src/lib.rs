//! HTTP scene-query service and the `cg3d` command-line front end.

pub mod app;
pub mod cli;

pub use app::{router, AppState, DEFAULT_MAX_POINTS};
pub use cli::{execute, run_scene_query, Cli, Command};
