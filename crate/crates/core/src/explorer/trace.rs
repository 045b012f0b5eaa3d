//! Counterexample traces.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::engine::{ExternalEvent, TraceStep};

/// One external event of a trace together with the failure choices taken
/// while it was processed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExternalStep {
    pub event: ExternalEvent,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub choices: Vec<usize>,
}

/// A replayable run from the initial state.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Trace {
    pub steps: Vec<ExternalStep>,
    /// The last cascade stops after this many handler executions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_after: Option<usize>,
    /// Step lines as produced during replay.
    #[serde(default)]
    pub lines: Vec<TraceStep>,
    /// Property the run ends up violating.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub property: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    /// App instances installed when the trace was produced.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub group: Vec<String>,
}

impl Trace {
    /// Line for the terminal verdict.
    pub fn verdict(&self) -> Option<String> {
        self.property.as_ref().map(|p| {
            format!(
                "VIOLATION {p}: {}",
                self.description.as_deref().unwrap_or_default()
            )
        })
    }
}

impl fmt::Display for Trace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for l in &self.lines {
            writeln!(f, "{l}")?;
        }
        if let Some(v) = self.verdict() {
            writeln!(f, "{v}")?;
        }
        Ok(())
    }
}
