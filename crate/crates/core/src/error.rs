use std::fmt;

use thiserror::Error;

/// Position in a source text, 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pos {
    pub line: usize,
    pub col: usize,
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("{pos}: syntax error: expected {}, found {found}", expected.join(" or "))]
    Syntax {
        pos: Pos,
        expected: Vec<String>,
        found: String,
    },
    #[error("{pos}: unterminated string literal")]
    UnterminatedString { pos: Pos },
    #[error("{pos}: unexpected character {ch:?}")]
    BadChar { pos: Pos, ch: char },
    #[error("unknown capability `{0}`")]
    UnknownCapability(String),
    #[error("capability `{capability}` has no attribute `{attribute}`")]
    UnknownAttribute { capability: String, attribute: String },
    #[error("handler `{handler}` references undeclared slot `{slot}`")]
    UndeclaredSlot { handler: String, slot: String },
    #[error("handler `{handler}` references undeclared handler `{target}`")]
    UndeclaredHandler { handler: String, target: String },
    #[error("handler `{handler}`: value `{value}` is not in the domain of `{attribute}`")]
    ValueOutOfDomain {
        handler: String,
        attribute: String,
        value: String,
    },
    #[error("handler `{handler}`: {reason}")]
    Invalid { handler: String, reason: String },
    #[error("duplicate {kind} `{name}`")]
    Duplicate { kind: &'static str, name: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("unknown app `{0}`")]
    UnknownApp(String),
    #[error("unknown device `{0}`")]
    UnknownDevice(String),
    #[error("duplicate {kind} id `{id}`")]
    DuplicateId { kind: &'static str, id: String },
    #[error("app `{app}` slot `{slot}` requires {expected}, but device `{device}` is {found}")]
    CapabilityMismatch {
        app: String,
        slot: String,
        device: String,
        expected: String,
        found: String,
    },
    #[error("app `{app}` slot `{slot}`: {reason}")]
    Binding {
        app: String,
        slot: String,
        reason: String,
    },
    #[error("value `{value}` is outside the domain of `{what}`")]
    OutOfDomain { what: String, value: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("ambiguous role `{role}`: devices {devices:?} share it")]
    AmbiguousRole { role: String, devices: Vec<String> },
    #[error("unknown property `{0}`")]
    UnknownProperty(String),
    #[error("trace diverged at step {step}: {reason}")]
    Divergence { step: usize, reason: String },
    #[error("attribution: {0}")]
    Attribution(String),
}
