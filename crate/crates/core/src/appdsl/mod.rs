//! Smart-app DSL: syntax tree, parser, pretty-printer and handler I/O event
//! extraction.

mod events;
mod parser;
mod render;

pub use events::{extract_io_events, EventPattern, HandlerIo, TIME_ATTR, TOUCH_ATTR};
pub use parser::{parse_app, parse_app_with, parse_apps_with};
pub use render::render_app;

use crate::expr::Cond;

/// Built-in slot every app can use to read, subscribe to and set the
/// location mode.
pub const LOCATION_SLOT: &str = "location";
pub const LOCATION_CAPABILITY: &str = "locationMode";
pub const MODE_ATTR: &str = "mode";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AppSpec {
    pub name: String,
    pub description: Option<String>,
    pub slots: Vec<Slot>,
    pub params: Vec<Param>,
    pub handlers: Vec<Handler>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Multiplicity {
    One,
    Many,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Slot {
    pub name: String,
    pub capability: String,
    pub multiplicity: Multiplicity,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParamKind {
    Number(Vec<i64>),
    Enum(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Param {
    pub name: String,
    pub kind: ParamKind,
}

impl Param {
    pub fn values(&self) -> Vec<String> {
        match &self.kind {
            ParamKind::Number(ns) => ns.iter().map(|n| n.to_string()).collect(),
            ParamKind::Enum(vs) => vs.clone(),
        }
    }

    pub fn contains(&self, value: &str) -> bool {
        self.values().iter().any(|v| v == value)
    }
}

/// A value position in a statement or trigger.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Value {
    Lit(String),
    Param(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Trigger {
    /// `slot.attr` or `slot.attr == value`; `location.mode` subscribes to the
    /// location mode.
    Subscribe {
        slot: String,
        attr: String,
        value: Option<Value>,
    },
    /// Fires every `period` clock ticks.
    Schedule(u32),
    Touch,
    /// Runs only when another handler of the app calls `runIn`.
    Callback,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Stmt {
    If(Cond, Box<Stmt>),
    Block(Vec<Stmt>),
    Command {
        slot: String,
        attr: String,
        value: Value,
    },
    Raise {
        attr: String,
        value: Value,
    },
    Sms(Value),
    Post(String),
    Unsubscribe(String),
    RunIn {
        delay: u32,
        handler: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Handler {
    pub name: String,
    pub trigger: Trigger,
    pub body: Vec<Stmt>,
}

impl AppSpec {
    pub fn slot(&self, name: &str) -> Option<&Slot> {
        self.slots.iter().find(|s| s.name == name)
    }

    pub fn param(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn handler(&self, name: &str) -> Option<&Handler> {
        self.handlers.iter().find(|h| h.name == name)
    }

    /// Capability name behind a slot, including the built-in location slot.
    pub fn slot_capability(&self, slot: &str) -> Option<&str> {
        if slot == LOCATION_SLOT {
            return Some(LOCATION_CAPABILITY);
        }
        self.slot(slot).map(|s| s.capability.as_str())
    }

    /// Display name: the description when present, else the identifier.
    pub fn display_name(&self) -> &str {
        self.description.as_deref().unwrap_or(&self.name)
    }
}

impl Stmt {
    /// Visits this statement and every nested one, depth first.
    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&'a Stmt)) {
        f(self);
        match self {
            Stmt::If(_, s) => s.walk(f),
            Stmt::Block(ss) => ss.iter().for_each(|s| s.walk(f)),
            _ => {}
        }
    }
}

impl Handler {
    pub fn walk<'a>(&'a self, mut f: impl FnMut(&'a Stmt)) {
        for s in &self.body {
            s.walk(&mut f);
        }
    }
}
