use std::collections::BTreeSet;
use std::fmt;

use serde::Serialize;

use super::*;
use crate::expr::Operand;

/// Attribute used for touch pseudo-events.
pub const TOUCH_ATTR: &str = "app";
/// Attribute used for clock pseudo-events (schedules, callbacks, clock reads).
pub const TIME_ATTR: &str = "time";

/// `attribute/value`; `value == None` is the wildcard, written
/// `attribute/...`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct EventPattern {
    pub attribute: String,
    pub value: Option<String>,
}

impl EventPattern {
    pub fn new(attribute: impl Into<String>, value: impl Into<String>) -> Self {
        EventPattern {
            attribute: attribute.into(),
            value: Some(value.into()),
        }
    }

    pub fn any(attribute: impl Into<String>) -> Self {
        EventPattern {
            attribute: attribute.into(),
            value: None,
        }
    }

    pub fn is_wildcard(&self) -> bool {
        self.value.is_none()
    }

    /// Same attribute and compatible values (a wildcard matches anything).
    pub fn overlaps(&self, other: &EventPattern) -> bool {
        self.attribute == other.attribute
            && match (&self.value, &other.value) {
                (Some(a), Some(b)) => a == b,
                _ => true,
            }
    }

    /// Two outputs that can drive one attribute to different values.
    pub fn conflicts(&self, other: &EventPattern) -> bool {
        self.attribute == other.attribute
            && match (&self.value, &other.value) {
                (Some(a), Some(b)) => a != b,
                _ => true,
            }
    }

    /// Parses `attr/value` or `attr/...`.
    pub fn parse(s: &str) -> Option<EventPattern> {
        let (a, v) = s.split_once('/')?;
        if a.is_empty() || v.is_empty() {
            return None;
        }
        Some(if v == "..." {
            EventPattern::any(a)
        } else {
            EventPattern::new(a, v)
        })
    }
}

impl fmt::Display for EventPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.value {
            Some(v) => write!(f, "{}/{v}", self.attribute),
            None => write!(f, "{}/...", self.attribute),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct HandlerIo {
    pub handler: String,
    pub inputs: BTreeSet<EventPattern>,
    pub outputs: BTreeSet<EventPattern>,
}

fn value_pattern(attr: &str, value: &Value) -> EventPattern {
    match value {
        Value::Lit(v) => EventPattern::new(attr, v.clone()),
        Value::Param(_) => EventPattern::any(attr),
    }
}

fn read_pattern(op: &Operand) -> Option<EventPattern> {
    match op {
        Operand::Attr { attr, .. } => Some(EventPattern::any(attr.clone())),
        Operand::Mode => Some(EventPattern::any(MODE_ATTR)),
        Operand::Clock => Some(EventPattern::any(TIME_ATTR)),
        Operand::Name(_) | Operand::Num(_) | Operand::Str(_) => None,
    }
}

/// Input and output event patterns of every handler, in declaration order.
///
/// A `runIn(d, h)` call outputs `time/h`, which is the input of callback
/// handler `h`; schedules listen on `time/tick`.
pub fn extract_io_events(app: &AppSpec) -> Vec<HandlerIo> {
    app.handlers
        .iter()
        .map(|h| {
            let mut io = HandlerIo {
                handler: h.name.clone(),
                ..HandlerIo::default()
            };
            io.inputs.insert(match &h.trigger {
                Trigger::Subscribe { attr, value, .. } => match value {
                    Some(v) => value_pattern(attr, v),
                    None => EventPattern::any(attr.clone()),
                },
                Trigger::Schedule(_) => EventPattern::new(TIME_ATTR, "tick"),
                Trigger::Touch => EventPattern::new(TOUCH_ATTR, "touch"),
                Trigger::Callback => EventPattern::new(TIME_ATTR, h.name.clone()),
            });
            h.walk(|s| match s {
                Stmt::If(cond, _) => {
                    io.inputs
                        .extend(cond.operands().into_iter().filter_map(read_pattern));
                }
                Stmt::Command { attr, value, .. } | Stmt::Raise { attr, value } => {
                    io.outputs.insert(value_pattern(attr, value));
                }
                Stmt::RunIn { handler, .. } => {
                    io.outputs.insert(EventPattern::new(TIME_ATTR, handler.clone()));
                }
                Stmt::Block(_) | Stmt::Sms(_) | Stmt::Post(_) | Stmt::Unsubscribe(_) => {}
            });
            io
        })
        .collect()
}
