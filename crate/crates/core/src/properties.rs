//! Safety properties: the catalog, instantiation against a configuration's
//! role tags, and evaluation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::devmodel::{CascadeLog, LogEntry, Model, SystemConfig, SystemState};
use crate::error::{Error, ParseError};
use crate::expr::{parse_condition, CmpOp, Cond, Operand, Quant};
use crate::lexer::{Cursor, Tok};

const BUILTIN: &str = include_str!("../data/properties.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PropertyKind {
    Invariant,
    ConflictFree,
    RepeatFree,
    Leakage,
    SensitiveCommand,
    Robustness,
}

impl PropertyKind {
    pub fn name(self) -> &'static str {
        match self {
            PropertyKind::Invariant => "invariant",
            PropertyKind::ConflictFree => "conflict-free",
            PropertyKind::RepeatFree => "repeat-free",
            PropertyKind::Leakage => "leakage",
            PropertyKind::SensitiveCommand => "sensitive-command",
            PropertyKind::Robustness => "robustness",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        [
            PropertyKind::Invariant,
            PropertyKind::ConflictFree,
            PropertyKind::RepeatFree,
            PropertyKind::Leakage,
            PropertyKind::SensitiveCommand,
            PropertyKind::Robustness,
        ]
        .into_iter()
        .find(|k| k.name() == s)
    }
}

impl fmt::Display for PropertyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// What a leakage or sensitive-command property watches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Sms,
    Network,
    Unsubscribe,
    Raise,
}

/// A catalog entry, written in terms of role tags.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AbstractProperty {
    pub id: String,
    pub kind: PropertyKind,
    pub roles: Vec<String>,
    pub pred: Option<Cond>,
    pub on: Option<Channel>,
    pub category: Option<String>,
    pub desc: String,
}

impl AbstractProperty {
    /// Roles named by `roles=` and by the predicate.
    pub fn required_roles(&self) -> BTreeSet<String> {
        let mut out: BTreeSet<String> = self.roles.iter().cloned().collect();
        if let Some(p) = &self.pred {
            for op in p.operands() {
                if let Operand::Attr { target, .. } = op {
                    out.insert(target.clone());
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Default)]
pub struct PropertyCatalog {
    pub properties: Vec<AbstractProperty>,
}

impl PropertyCatalog {
    pub fn builtin() -> &'static PropertyCatalog {
        static CATALOG: OnceLock<PropertyCatalog> = OnceLock::new();
        CATALOG.get_or_init(|| {
            PropertyCatalog::parse(BUILTIN).expect("bundled property catalog is well-formed")
        })
    }

    pub fn parse(src: &str) -> Result<Self, ParseError> {
        let mut cur = Cursor::new(src)?;
        let mut properties: Vec<AbstractProperty> = Vec::new();
        while !cur.at_eof() {
            cur.expect_kw("property")?;
            let id = cur.ident()?;
            let mut fields: BTreeMap<String, String> = BTreeMap::new();
            while matches!(cur.peek(), Tok::Ident(s) if s != "property") {
                let key = cur.ident()?;
                cur.expect_sym("=")?;
                let value = if key == "roles" {
                    let mut v = vec![cur.ident()?];
                    while cur.eat_sym(",") {
                        v.push(cur.ident()?);
                    }
                    v.join(",")
                } else {
                    cur.atom()?
                };
                if fields.insert(key.clone(), value).is_some() {
                    return Err(ParseError::Duplicate {
                        kind: "property field",
                        name: format!("{id}.{key}"),
                    });
                }
            }
            let invalid = |reason: String| ParseError::Invalid {
                handler: format!("property {id}"),
                reason,
            };
            let kind_text = fields.remove("kind").ok_or_else(|| invalid("missing kind".into()))?;
            let kind = PropertyKind::parse(&kind_text)
                .ok_or_else(|| invalid(format!("unknown kind `{kind_text}`")))?;
            let desc = fields.remove("desc").ok_or_else(|| invalid("missing desc".into()))?;
            let pred = fields
                .remove("pred")
                .map(|p| parse_condition(&p, true))
                .transpose()?;
            let on = match fields.remove("on").as_deref() {
                None => None,
                Some("sms") => Some(Channel::Sms),
                Some("network") => Some(Channel::Network),
                Some("unsubscribe") => Some(Channel::Unsubscribe),
                Some("raise") => Some(Channel::Raise),
                Some(other) => return Err(invalid(format!("unknown channel `{other}`"))),
            };
            let roles = fields
                .remove("roles")
                .map(|r| r.split(',').map(str::to_string).collect())
                .unwrap_or_default();
            let category = fields.remove("category");
            if let Some(k) = fields.keys().next() {
                return Err(invalid(format!("unknown field `{k}`")));
            }
            match kind {
                PropertyKind::Invariant if pred.is_none() => {
                    return Err(invalid("invariant without pred".into()))
                }
                PropertyKind::Leakage if !matches!(on, Some(Channel::Sms | Channel::Network)) => {
                    return Err(invalid("leakage needs on=sms or on=network".into()))
                }
                PropertyKind::SensitiveCommand
                    if !matches!(on, Some(Channel::Unsubscribe | Channel::Raise)) =>
                {
                    return Err(invalid("sensitive-command needs on=unsubscribe or on=raise".into()))
                }
                _ => {}
            }
            if properties.iter().any(|p| p.id == id) {
                return Err(ParseError::Duplicate {
                    kind: "property",
                    name: id,
                });
            }
            properties.push(AbstractProperty {
                id,
                kind,
                roles,
                pred,
                on,
                category,
                desc,
            });
        }
        Ok(PropertyCatalog { properties })
    }

    pub fn get(&self, id: &str) -> Option<&AbstractProperty> {
        self.properties.iter().find(|p| p.id == id)
    }

    pub fn len(&self) -> usize {
        self.properties.len()
    }

    pub fn is_empty(&self) -> bool {
        self.properties.is_empty()
    }

    /// Number of entries per category (non-state entries under `None`).
    pub fn category_counts(&self) -> BTreeMap<Option<String>, usize> {
        let mut out = BTreeMap::new();
        for p in &self.properties {
            *out.entry(p.category.clone()).or_insert(0) += 1;
        }
        out
    }
}

/// Which catalog entries to check.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Selection {
    #[default]
    All,
    Ids(Vec<String>),
}

impl Selection {
    /// Parses `all` or a comma-separated id list.
    pub fn parse(s: &str) -> Selection {
        if s.trim() == "all" {
            Selection::All
        } else {
            Selection::Ids(
                s.split(',')
                    .map(|x| x.trim().to_string())
                    .filter(|x| !x.is_empty())
                    .collect(),
            )
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum PredOperand {
    /// Attribute of the devices carrying a role.
    Devices {
        quant: Quant,
        devices: Vec<String>,
        attr: String,
    },
    Mode,
    Clock,
    Lit(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Pred {
    Cmp(PredOperand, CmpOp, PredOperand),
    Not(Box<Pred>),
    And(Box<Pred>, Box<Pred>),
    Or(Box<Pred>, Box<Pred>),
}

/// A property bound to this configuration's devices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SafetyProperty {
    pub id: String,
    pub kind: PropertyKind,
    pub category: Option<String>,
    pub desc: String,
    pub on: Option<Channel>,
    pub predicate: Option<Pred>,
    /// Device ids the predicate reads.
    pub scope: Vec<String>,
}

#[derive(Debug, Clone, Default)]
pub struct Instantiation {
    pub properties: Vec<SafetyProperty>,
    /// One line per skipped property.
    pub notices: Vec<String>,
}

fn bind_operand(
    op: &Operand,
    cfg: &SystemConfig,
    scope: &mut BTreeSet<String>,
) -> Result<Result<PredOperand, String>, Error> {
    Ok(Ok(match op {
        Operand::Attr {
            quant,
            target,
            attr,
        } => {
            let devs = cfg.devices_with_role(target);
            if devs.is_empty() {
                return Ok(Err(format!("no device with role `{target}`")));
            }
            if quant.is_none() && devs.len() > 1 {
                return Err(Error::AmbiguousRole {
                    role: target.clone(),
                    devices: devs.iter().map(|d| d.id.clone()).collect(),
                });
            }
            for d in &devs {
                let has = cfg
                    .catalog
                    .get(&d.capability)
                    .is_some_and(|c| c.attribute(attr).is_some());
                if !has {
                    return Ok(Err(format!(
                        "device `{}` with role `{target}` has no attribute `{attr}`",
                        d.id
                    )));
                }
                scope.insert(d.id.clone());
            }
            PredOperand::Devices {
                quant: quant.unwrap_or(Quant::Any),
                devices: devs.iter().map(|d| d.id.clone()).collect(),
                attr: attr.clone(),
            }
        }
        Operand::Mode => PredOperand::Mode,
        Operand::Clock => PredOperand::Clock,
        Operand::Name(n) | Operand::Str(n) => PredOperand::Lit(n.clone()),
        Operand::Num(n) => PredOperand::Lit(n.to_string()),
    }))
}

fn bind_cond(
    c: &Cond,
    cfg: &SystemConfig,
    scope: &mut BTreeSet<String>,
) -> Result<Result<Pred, String>, Error> {
    Ok(Ok(match c {
        Cond::Cmp(a, op, b) => {
            let a = match bind_operand(a, cfg, scope)? {
                Ok(x) => x,
                Err(e) => return Ok(Err(e)),
            };
            let b = match bind_operand(b, cfg, scope)? {
                Ok(x) => x,
                Err(e) => return Ok(Err(e)),
            };
            Pred::Cmp(a, *op, b)
        }
        Cond::Not(x) => match bind_cond(x, cfg, scope)? {
            Ok(p) => Pred::Not(Box::new(p)),
            Err(e) => return Ok(Err(e)),
        },
        Cond::And(x, y) | Cond::Or(x, y) => {
            let l = match bind_cond(x, cfg, scope)? {
                Ok(p) => p,
                Err(e) => return Ok(Err(e)),
            };
            let r = match bind_cond(y, cfg, scope)? {
                Ok(p) => p,
                Err(e) => return Ok(Err(e)),
            };
            if matches!(c, Cond::And(..)) {
                Pred::And(Box::new(l), Box::new(r))
            } else {
                Pred::Or(Box::new(l), Box::new(r))
            }
        }
    }))
}

/// Binds the selected catalog entries to the configuration's devices.
/// Entries whose roles have no device are skipped with a notice.
pub fn instantiate_properties(
    catalog: &PropertyCatalog,
    cfg: &SystemConfig,
    selected: &Selection,
) -> Result<Instantiation, Error> {
    let chosen: Vec<&AbstractProperty> = match selected {
        Selection::All => catalog.properties.iter().collect(),
        Selection::Ids(ids) => ids
            .iter()
            .map(|id| catalog.get(id).ok_or_else(|| Error::UnknownProperty(id.clone())))
            .collect::<Result<_, _>>()?,
    };
    let mut out = Instantiation::default();
    for p in chosen {
        let missing: Vec<String> = p
            .required_roles()
            .into_iter()
            .filter(|r| cfg.devices_with_role(r).is_empty())
            .collect();
        if !missing.is_empty() {
            out.notices.push(format!(
                "property {} skipped: no device with role {}",
                p.id,
                missing.join(", ")
            ));
            continue;
        }
        let mut scope = BTreeSet::new();
        let predicate = match &p.pred {
            None => None,
            Some(c) => match bind_cond(c, cfg, &mut scope)? {
                Ok(pred) => Some(pred),
                Err(reason) => {
                    out.notices.push(format!("property {} skipped: {reason}", p.id));
                    continue;
                }
            },
        };
        out.properties.push(SafetyProperty {
            id: p.id.clone(),
            kind: p.kind,
            category: p.category.clone(),
            desc: p.desc.clone(),
            on: p.on,
            predicate,
            scope: scope.into_iter().collect(),
        });
    }
    Ok(out)
}

/// When a property is evaluated during a cascade.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// After every handler execution.
    Handler,
    /// Once the cascade has drained.
    Quiescent,
}

#[derive(Debug, Clone)]
enum COperand {
    Slots(Quant, Vec<usize>),
    Mode(usize),
    Clock,
    Lit(String),
}

#[derive(Debug, Clone)]
enum CPred {
    Cmp(COperand, CmpOp, COperand),
    Not(Box<CPred>),
    And(Box<CPred>, Box<CPred>),
    Or(Box<CPred>, Box<CPred>),
}

/// A property resolved against a [`Model`]'s indices.
#[derive(Debug, Clone)]
pub struct CompiledProperty {
    pub id: String,
    pub kind: PropertyKind,
    pub on: Option<Channel>,
    pub desc: String,
    pred: Option<CPred>,
}

fn compile_operand(op: &PredOperand, model: &Model) -> COperand {
    match op {
        PredOperand::Devices {
            quant,
            devices,
            attr,
        } => COperand::Slots(
            *quant,
            devices
                .iter()
                .filter_map(|d| model.devices[model.device_index(d)?].slot_of(attr))
                .collect(),
        ),
        PredOperand::Mode => COperand::Mode(model.devices[model.location].offset),
        PredOperand::Clock => COperand::Clock,
        PredOperand::Lit(s) => COperand::Lit(s.clone()),
    }
}

fn compile_pred(p: &Pred, model: &Model) -> CPred {
    match p {
        Pred::Cmp(a, op, b) => CPred::Cmp(compile_operand(a, model), *op, compile_operand(b, model)),
        Pred::Not(x) => CPred::Not(Box::new(compile_pred(x, model))),
        Pred::And(x, y) => CPred::And(Box::new(compile_pred(x, model)), Box::new(compile_pred(y, model))),
        Pred::Or(x, y) => CPred::Or(Box::new(compile_pred(x, model)), Box::new(compile_pred(y, model))),
    }
}

pub fn compile(props: &[SafetyProperty], model: &Model) -> Vec<CompiledProperty> {
    props
        .iter()
        .map(|p| CompiledProperty {
            id: p.id.clone(),
            kind: p.kind,
            on: p.on,
            desc: p.desc.clone(),
            pred: p.predicate.as_ref().map(|x| compile_pred(x, model)),
        })
        .collect()
}

fn cmp_text(a: &str, op: CmpOp, b: &str) -> bool {
    match (a.parse::<i64>(), b.parse::<i64>()) {
        (Ok(x), Ok(y)) => op.eval(&x, &y),
        _ => op.eval(a, b),
    }
}

fn quantify(
    op: &COperand,
    model: &Model,
    state: &SystemState,
    mut f: impl FnMut(&str) -> bool,
) -> bool {
    match op {
        COperand::Slots(q, slots) => {
            let mut it = slots
                .iter()
                .map(|&s| model.value_name(s, state.physical[s]).to_string());
            match q {
                Quant::Any => it.any(|v| f(&v)),
                Quant::All => it.all(|v| f(&v)),
            }
        }
        COperand::Mode(s) => f(model.value_name(*s, state.physical[*s])),
        COperand::Clock => f(&state.clock.to_string()),
        COperand::Lit(v) => f(v),
    }
}

fn eval(p: &CPred, model: &Model, state: &SystemState) -> bool {
    match p {
        CPred::Cmp(a, op, b) => quantify(a, model, state, |x| {
            quantify(b, model, state, |y| cmp_text(x, *op, y))
        }),
        CPred::Not(x) => !eval(x, model, state),
        CPred::And(x, y) => eval(x, model, state) && eval(y, model, state),
        CPred::Or(x, y) => eval(x, model, state) || eval(y, model, state),
    }
}

fn collect_slots(p: &CPred, out: &mut BTreeSet<usize>) {
    match p {
        CPred::Cmp(a, _, b) => {
            for op in [a, b] {
                match op {
                    COperand::Slots(_, ss) => out.extend(ss),
                    COperand::Mode(s) => {
                        out.insert(*s);
                    }
                    _ => {}
                }
            }
        }
        CPred::Not(x) => collect_slots(x, out),
        CPred::And(x, y) | CPred::Or(x, y) => {
            collect_slots(x, out);
            collect_slots(y, out);
        }
    }
}

fn device_attr(model: &Model, slot: usize) -> String {
    format!("{}.{}", model.devices[model.slot_device[slot]].id, model.attr_of_slot(slot).name)
}

impl CompiledProperty {
    pub fn phase(&self) -> Phase {
        match self.kind {
            PropertyKind::Invariant | PropertyKind::Robustness => Phase::Quiescent,
            _ => Phase::Handler,
        }
    }

    /// `None` when the property holds, otherwise a description of the
    /// breach. Invariants read only the state; the other kinds read only
    /// the cascade log.
    pub fn check(&self, model: &Model, state: &SystemState, log: &CascadeLog) -> Option<String> {
        let app_id = |a: usize| model.apps[a].id.as_str();
        match self.kind {
            PropertyKind::Invariant => {
                let pred = self.pred.as_ref()?;
                if eval(pred, model, state) {
                    return None;
                }
                let mut slots = BTreeSet::new();
                collect_slots(pred, &mut slots);
                let values: Vec<String> = slots
                    .iter()
                    .map(|&s| format!("{}={}", device_attr(model, s), model.value_name(s, state.physical[s])))
                    .collect();
                Some(format!("{} ({})", self.desc, values.join(", ")))
            }
            PropertyKind::ConflictFree | PropertyKind::RepeatFree => {
                let mut seen: BTreeMap<usize, Vec<u16>> = BTreeMap::new();
                for e in &log.entries {
                    if let LogEntry::Command { slot, value, .. } = e {
                        let prior = seen.entry(*slot).or_default();
                        let hit = if self.kind == PropertyKind::ConflictFree {
                            prior.iter().find(|&&v| v != *value)
                        } else {
                            prior.iter().find(|&&v| v == *value)
                        };
                        if let Some(&other) = hit {
                            let what = if self.kind == PropertyKind::ConflictFree {
                                "conflicting"
                            } else {
                                "repeated"
                            };
                            return Some(format!(
                                "{} receives {what} commands {} and {} in one cascade",
                                device_attr(model, *slot),
                                model.value_name(*slot, other),
                                model.value_name(*slot, *value)
                            ));
                        }
                        prior.push(*value);
                    }
                }
                None
            }
            PropertyKind::Leakage => log.entries.iter().find_map(|e| match (e, self.on) {
                (LogEntry::Sms { app, recipient }, Some(Channel::Sms))
                    if !model.contacts.contains(recipient) =>
                {
                    Some(format!("{} sends a message to unlisted recipient {recipient}", app_id(*app)))
                }
                (LogEntry::Post { app, endpoint }, Some(Channel::Network))
                    if !model.allowed_endpoints.contains(endpoint) =>
                {
                    Some(format!("{} sends data to unlisted endpoint {endpoint}", app_id(*app)))
                }
                _ => None,
            }),
            PropertyKind::SensitiveCommand => log.entries.iter().find_map(|e| match (e, self.on) {
                (LogEntry::Unsubscribe { app, handler }, Some(Channel::Unsubscribe)) => Some(format!(
                    "{} unsubscribes handler {}",
                    app_id(*app),
                    model.handler_name(*handler).1
                )),
                (
                    LogEntry::Raise {
                        app,
                        slot,
                        value,
                        fake: true,
                    },
                    Some(Channel::Raise),
                ) => Some(format!(
                    "{} raises fake event {}={} (physical value {})",
                    app_id(*app),
                    device_attr(model, *slot),
                    model.value_name(*slot, *value),
                    model.value_name(*slot, state.physical[*slot])
                )),
                _ => None,
            }),
            PropertyKind::Robustness => {
                for (i, e) in log.entries.iter().enumerate() {
                    if let LogEntry::Command {
                        slot,
                        value,
                        delivered: false,
                        ..
                    } = e
                    {
                        let notified = log.entries[i + 1..]
                            .iter()
                            .any(|x| matches!(x, LogEntry::Sms { .. }));
                        if !notified {
                            return Some(format!(
                                "command {}={} was not delivered and no notification followed",
                                device_attr(model, *slot),
                                model.value_name(*slot, *value)
                            ));
                        }
                    }
                }
                None
            }
        }
    }
}
