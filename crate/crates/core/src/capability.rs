//! Device capability catalog.
//!
//! The catalog shipped with the crate lives in `data/capabilities.txt`; more
//! capabilities can be added by loading an extended catalog file.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::OnceLock;

use serde::Serialize;

use crate::error::ParseError;
use crate::lexer::{Cursor, Tok};

const BUILTIN: &str = include_str!("../data/capabilities.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CapabilityKind {
    /// Reports physical state; driven by external events.
    Sensor,
    /// Accepts commands; reports its own state changes.
    Actuator,
    /// Readable and commandable (location mode).
    Both,
    /// Fires an event on every stimulus without holding state (buttons,
    /// voice assistants, trigger services).
    Momentary,
    /// Notification endpoints (phones, web hooks) modeled as commandable
    /// devices.
    Sink,
}

impl CapabilityKind {
    pub fn is_commandable(self) -> bool {
        matches!(self, Self::Actuator | Self::Both | Self::Sink)
    }

    /// Whether the explorer drives this device with external events.
    pub fn is_external(self) -> bool {
        matches!(self, Self::Sensor | Self::Momentary)
    }

    pub fn is_subscribable(self) -> bool {
        !matches!(self, Self::Sink)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum Domain {
    Enum(Vec<String>),
    Numeric(Vec<i64>),
    /// Filled in from the system configuration's mode set.
    Modes,
}

impl Domain {
    pub fn is_numeric(&self) -> bool {
        matches!(self, Domain::Numeric(_))
    }

    pub fn contains(&self, value: &str) -> bool {
        match self {
            Domain::Enum(vs) => vs.iter().any(|v| v == value),
            Domain::Numeric(ns) => value.parse::<i64>().is_ok_and(|n| ns.contains(&n)),
            Domain::Modes => true,
        }
    }

    pub fn values(&self) -> Vec<String> {
        match self {
            Domain::Enum(vs) => vs.clone(),
            Domain::Numeric(ns) => ns.iter().map(|n| n.to_string()).collect(),
            Domain::Modes => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AttributeDef {
    pub name: String,
    pub domain: Domain,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Capability {
    pub name: String,
    pub kind: CapabilityKind,
    pub attributes: Vec<AttributeDef>,
}

impl Capability {
    pub fn attribute(&self, name: &str) -> Option<&AttributeDef> {
        self.attributes.iter().find(|a| a.name == name)
    }

    pub fn attribute_index(&self, name: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a.name == name)
    }
}

impl fmt::Display for Capability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

#[derive(Debug, Clone, Default)]
pub struct CapabilityCatalog {
    caps: BTreeMap<String, Capability>,
}

impl CapabilityCatalog {
    /// The catalog bundled with the crate.
    pub fn builtin() -> &'static CapabilityCatalog {
        static CATALOG: OnceLock<CapabilityCatalog> = OnceLock::new();
        CATALOG.get_or_init(|| {
            CapabilityCatalog::parse(BUILTIN).expect("bundled capability catalog is well-formed")
        })
    }

    pub fn parse(src: &str) -> Result<Self, ParseError> {
        let mut cur = Cursor::new(src)?;
        let mut caps = BTreeMap::new();
        while !cur.at_eof() {
            cur.expect_kw("capability")?;
            let name = cur.ident()?;
            let kind = match cur.ident()?.as_str() {
                "sensor" => CapabilityKind::Sensor,
                "actuator" => CapabilityKind::Actuator,
                "both" => CapabilityKind::Both,
                "momentary" => CapabilityKind::Momentary,
                "sink" => CapabilityKind::Sink,
                _ => return cur.error(&["sensor", "actuator", "both", "momentary", "sink"]),
            };
            let mut attributes = Vec::new();
            while matches!(cur.peek(), Tok::Ident(s) if s != "capability") {
                let attr = cur.ident()?;
                cur.expect_sym("=")?;
                let domain = if cur.eat_kw("modes") {
                    Domain::Modes
                } else if cur.eat_kw("numeric") {
                    Domain::Numeric(parse_braced(&mut cur, |c| c.number())?)
                } else {
                    Domain::Enum(parse_braced(&mut cur, |c| c.ident())?)
                };
                attributes.push(AttributeDef { name: attr, domain });
            }
            if attributes.is_empty() {
                return cur.error(&["attribute definition"]);
            }
            let dup = caps.insert(
                name.clone(),
                Capability {
                    name: name.clone(),
                    kind,
                    attributes,
                },
            );
            if dup.is_some() {
                return Err(ParseError::Duplicate {
                    kind: "capability",
                    name,
                });
            }
        }
        Ok(CapabilityCatalog { caps })
    }

    pub fn get(&self, name: &str) -> Option<&Capability> {
        self.caps.get(name)
    }

    pub fn require(&self, name: &str) -> Result<&Capability, ParseError> {
        self.get(name)
            .ok_or_else(|| ParseError::UnknownCapability(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Capability> {
        self.caps.values()
    }

    pub fn len(&self) -> usize {
        self.caps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.caps.is_empty()
    }

    /// The first capability (in catalog order) that declares `attr`.
    pub fn capability_for_attribute(&self, attr: &str) -> Option<&Capability> {
        self.caps.values().find(|c| c.attribute(attr).is_some())
    }
}

pub(crate) fn parse_braced<T>(
    cur: &mut Cursor,
    mut item: impl FnMut(&mut Cursor) -> Result<T, ParseError>,
) -> Result<Vec<T>, ParseError> {
    cur.expect_sym("{")?;
    let mut out = vec![item(cur)?];
    while cur.eat_sym(",") {
        out.push(item(cur)?);
    }
    cur.expect_sym("}")?;
    Ok(out)
}
