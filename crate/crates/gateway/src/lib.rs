//! Command line and HTTP API for the planforge pipeline.
//!
//! - [`cli`]: one subcommand per pipeline stage, dispatched by [`cli_dispatch`].
//! - [`server`]: read endpoints over a run store plus the selection endpoint
//!   that unblocks human-mode iterations.
//! - [`board`]: the hand-off between the selection endpoint and the loop.
//! - [`transport`]: chat-completion transport configured from the environment.

pub mod board;
pub mod cli;
pub mod server;
pub mod transport;

pub use cli::cli_dispatch;
