use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::{RunConfig, Task};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = "==")]
    Eq,
}

impl Relation {
    fn holds(self, measured: f64, bound: f64) -> bool {
        match self {
            Relation::Le => measured <= bound,
            Relation::Ge => measured >= bound,
            Relation::Gt => measured > bound,
            Relation::Eq => measured == bound,
        }
    }
}

/// One checked invariant: `measured relation bound`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assertion {
    pub task: String,
    /// What was checked, e.g. a measure name and exponent.
    pub subject: String,
    /// `module::invariant`.
    pub invariant: String,
    pub measured: f64,
    pub relation: Relation,
    pub bound: f64,
    pub pass: bool,
}

impl Assertion {
    pub fn new(task: Task, subject: impl Into<String>, invariant: &str, measured: f64, relation: Relation, bound: f64) -> Self {
        Self {
            task: task.name().into(),
            subject: subject.into(),
            invariant: invariant.into(),
            measured,
            relation,
            bound,
            pass: relation.holds(measured, bound),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    pub task: Task,
    pub result: Value,
    /// File names relative to the output directory.
    pub artifacts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    /// sha256 of the normalised config JSON.
    pub config_hash: String,
    pub seed: u64,
    /// Seconds since the Unix epoch; the only field that varies between
    /// identical runs.
    pub timestamp: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub provenance: Provenance,
    pub config: RunConfig,
    pub results: Vec<TaskResult>,
    pub assertions: Vec<Assertion>,
    pub passed: bool,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    /// The JSON with the timestamp zeroed, for comparing runs.
    pub fn canonical_json(&self) -> String {
        let mut copy = self.clone();
        copy.provenance.timestamp = 0;
        copy.to_json()
    }

    pub fn failures(&self) -> impl Iterator<Item = &Assertion> {
        self.assertions.iter().filter(|a| !a.pass)
    }

    pub fn result(&self, task: Task) -> Option<&Value> {
        self.results.iter().find(|r| r.task == task).map(|r| &r.result)
    }
}
