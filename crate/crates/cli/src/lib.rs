//! Config-driven experiment runner over `bergman-core`.

pub mod catalog;
pub mod config;
pub mod report;
mod run;

pub use catalog::{list_families, Catalog};
pub use config::{RunConfig, Task};
pub use report::{Assertion, Provenance, Relation, RunReport, TaskResult};
pub use run::{lattice_params, run, run_without_artifacts, write_lattice_csv};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("config error: {0}")]
    Config(String),

    #[error("task `{task}` needs {what}, which the config does not provide")]
    Dependency { task: &'static str, what: String },

    #[error("task `{task}`: {source}")]
    Task {
        task: &'static str,
        #[source]
        source: bergman_core::Error,
    },

    #[error("writing artifacts: {0}")]
    Io(#[from] std::io::Error),
}

impl RunError {
    pub(crate) fn config(field: &str, e: impl std::fmt::Display) -> Self {
        RunError::Config(format!("`{field}`: {e}"))
    }

    pub(crate) fn task(task: &'static str) -> impl FnOnce(bergman_core::Error) -> Self {
        move |source| RunError::Task { task, source }
    }

    /// 2 for bad input, 3 for numerical failures.
    pub fn exit_code(&self) -> u8 {
        match self {
            RunError::Task { source, .. } if source.is_numerical() => 3,
            _ => 2,
        }
    }
}
