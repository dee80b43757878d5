//! Orchestration: configuration, the gateway runtime, the headless polling
//! client, the sample dataset and the `verify` acceptance runner.

pub mod config;
pub mod poll;
pub mod runtime;
pub mod sample;
pub mod terrain;
pub mod verify;

pub use config::{load_config, parse_config, Config, ConfigError};
pub use poll::{poll_client, run_poll, PollPlan, PollReport};
pub use runtime::{start_gateway, RunningGateway, StartError};
pub use terrain::{build_terrain, TerrainBuildError, TerrainSummary};
pub use verify::{run_verify, VerifyOptions, VerifyReport};
