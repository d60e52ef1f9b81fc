//! Batch front end over `diml-core`: re-ranking, evaluation, match
//! explanation, direct solver access and loss evaluation.
//!
//! Exit codes: 0 on success, 2 for bad arguments, 3 for unreadable or
//! inconsistent data.

pub mod args;
pub mod commands;
pub mod output;

use std::fmt;

pub use args::{Cli, Command};

/// Why a command failed, which decides the exit status.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Data(_) => 3,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(msg) => write!(f, "{msg}"),
            Failure::Data(err) => write!(f, "{err:#}"),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(err: anyhow::Error) -> Self {
        Failure::Data(err)
    }
}

impl From<diml_core::Error> for Failure {
    fn from(err: diml_core::Error) -> Self {
        Failure::Data(err.into())
    }
}

impl From<std::io::Error> for Failure {
    fn from(err: std::io::Error) -> Self {
        Failure::Data(err.into())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(err: serde_json::Error) -> Self {
        Failure::Data(err.into())
    }
}

pub fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Rerank(a) => commands::rerank(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Explain(a) => commands::explain(&a),
        Command::Solve(a) => commands::solve(&a),
        Command::LossEval(a) => commands::loss_eval(&a),
    }
}
