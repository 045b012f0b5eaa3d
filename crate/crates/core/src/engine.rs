//! Handler execution and run-to-quiescence cascades.
//!
//! One external event is applied, then queued events are consumed in FIFO
//! order; each event's subscribers run one after another, each atomically.
//! Every nondeterministic outcome (device availability and message delivery)
//! is taken from a [`Chooser`], where option 0 is always the failure-free
//! one.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::appdsl::{Stmt, Trigger};
use crate::capability::CapabilityKind;
use crate::devmodel::{
    actuator_state_update, sensor_state_update, CascadeLog, Delivery, Event, LogEntry, Model,
    Scheduled, SystemState,
};
use crate::expr::{CmpOp, Cond, Operand};
use crate::properties::{CompiledProperty, Phase, PropertyKind};

/// Source of nondeterministic choices.
pub trait Chooser {
    /// Picks one of `n >= 2` options.
    fn choose(&mut self, n: usize) -> usize;
}

/// Always picks the failure-free option.
pub struct NoFailures;

impl Chooser for NoFailures {
    fn choose(&mut self, _n: usize) -> usize {
        0
    }
}

/// Replays a fixed choice prefix, then picks option 0, recording the arity
/// of every choice point it meets.
#[derive(Debug, Clone, Default)]
pub struct PrefixChooser {
    pub prefix: Vec<usize>,
    pub taken: Vec<usize>,
    pub arities: Vec<usize>,
}

impl PrefixChooser {
    pub fn new(prefix: Vec<usize>) -> Self {
        PrefixChooser {
            prefix,
            taken: Vec::new(),
            arities: Vec::new(),
        }
    }

    /// The next choice vector in odometer order, or `None` when every
    /// combination has been tried.
    pub fn next_prefix(&self) -> Option<Vec<usize>> {
        let mut v = self.taken.clone();
        while let Some(last) = v.pop() {
            let i = v.len();
            if last + 1 < self.arities[i] {
                v.push(last + 1);
                return Some(v);
            }
        }
        None
    }
}

impl Chooser for PrefixChooser {
    fn choose(&mut self, n: usize) -> usize {
        let i = self.taken.len();
        let c = self.prefix.get(i).copied().unwrap_or(0).min(n - 1);
        self.taken.push(c);
        self.arities.push(n);
        c
    }
}

/// An external stimulus, by name.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ExternalEvent {
    Sensor {
        device: String,
        attr: String,
        value: String,
    },
    Touch {
        app: String,
    },
    Tick,
}

impl fmt::Display for ExternalEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExternalEvent::Sensor {
                device,
                attr,
                value,
            } => write!(f, "{device}.{attr}={value}"),
            ExternalEvent::Touch { app } => write!(f, "touch {app}"),
            ExternalEvent::Tick => f.write_str("tick"),
        }
    }
}

/// An external stimulus resolved against a [`Model`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Ext {
    Sensor { slot: usize, value: u16 },
    Touch { app: usize },
    Tick,
}

/// Which failures the environment may inject.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FailureConfig {
    /// Devices may go offline (persistently).
    pub offline: bool,
    /// Single messages may be lost.
    pub comm: bool,
    /// Bound on injected failures along one run.
    pub max_failures: u8,
}

/// One line of a trace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceStep {
    pub step: usize,
    pub state: usize,
    pub entity: String,
    pub action: String,
}

impl fmt::Display for TraceStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "step {} state {}: [{}] {}",
            self.step, self.state, self.entity, self.action
        )
    }
}

/// Collects trace lines while a run executes.
#[derive(Debug, Clone, Default)]
pub struct Recorder {
    pub steps: Vec<TraceStep>,
    pub state_no: usize,
}

impl Recorder {
    fn push(&mut self, entity: &str, action: String, changes_state: bool) {
        if changes_state {
            self.state_no += 1;
        }
        self.steps.push(TraceStep {
            step: self.steps.len() + 1,
            state: self.state_no,
            entity: entity.to_string(),
            action,
        });
    }
}

/// A property found violated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub property: String,
    pub description: String,
}

/// Property id used for cascades that never settle.
pub const EVENT_LOOP: &str = "event-loop";

#[derive(Debug, Clone)]
pub struct CascadeResult {
    /// Empty when the run settled without violations.
    pub findings: Vec<Finding>,
    /// Handler executions in this cascade.
    pub handlers: usize,
    /// Whether the queue drained.
    pub quiescent: bool,
    pub log: CascadeLog,
    /// Apps that issued a command, message, request, raise or unsubscribe.
    pub apps: BTreeSet<usize>,
}

/// Executes cascades for one model and property set.
pub struct Engine<'a> {
    pub model: &'a Model,
    pub props: &'a [CompiledProperty],
    pub failures: FailureConfig,
    pub max_steps: usize,
}

enum Val<'s> {
    Num(i64),
    Str(&'s str),
}

fn compare(a: &Val, op: CmpOp, b: &Val) -> bool {
    match (a, b) {
        (Val::Num(x), Val::Num(y)) => op.eval(x, y),
        (Val::Str(x), Val::Str(y)) => op.eval(*x, *y),
        (Val::Num(x), Val::Str(y)) => op.eval(x.to_string().as_str(), *y),
        (Val::Str(x), Val::Num(y)) => op.eval(*x, y.to_string().as_str()),
    }
}

struct Ctx<'r> {
    log: &'r mut CascadeLog,
    rec: Option<&'r mut Recorder>,
}

impl Ctx<'_> {
    fn note(&mut self, entity: &str, action: impl FnOnce() -> String, changes_state: bool) {
        if let Some(r) = self.rec.as_deref_mut() {
            r.push(entity, action(), changes_state);
        }
    }
}

impl<'a> Engine<'a> {
    pub fn new(model: &'a Model, props: &'a [CompiledProperty], failures: FailureConfig) -> Self {
        Engine {
            model,
            props,
            failures,
            max_steps: 64,
        }
    }

    /// Resolves a named external event.
    pub fn resolve(&self, ev: &ExternalEvent) -> Option<Ext> {
        let m = self.model;
        Some(match ev {
            ExternalEvent::Sensor {
                device,
                attr,
                value,
            } => {
                let d = &m.devices[m.device_index(device)?];
                let slot = d.slot_of(attr)?;
                Ext::Sensor {
                    slot,
                    value: m.attr_of_slot(slot).index_of(value)?,
                }
            }
            ExternalEvent::Touch { app } => Ext::Touch {
                app: m.apps.iter().position(|a| &a.id == app)?,
            },
            ExternalEvent::Tick => Ext::Tick,
        })
    }

    pub fn name(&self, ev: Ext) -> ExternalEvent {
        let m = self.model;
        match ev {
            Ext::Sensor { slot, value } => ExternalEvent::Sensor {
                device: m.devices[m.slot_device[slot]].id.clone(),
                attr: m.attr_of_slot(slot).name.clone(),
                value: m.value_name(slot, value).to_string(),
            },
            Ext::Touch { app } => ExternalEvent::Touch {
                app: m.apps[app].id.clone(),
            },
            Ext::Tick => ExternalEvent::Tick,
        }
    }

    /// External events available in `state`: every value of every attribute
    /// of the externally driven devices in `sensors` (device order, domain
    /// order), a touch of every app with a touch handler, and a clock tick
    /// when a timed call is pending.
    pub fn external_events(&self, state: &SystemState, sensors: &[usize]) -> Vec<Ext> {
        let m = self.model;
        let mut out = Vec::new();
        for &d in sensors {
            let dev = &m.devices[d];
            for (i, a) in dev.attrs.iter().enumerate() {
                for v in 0..a.values.len() {
                    out.push(Ext::Sensor {
                        slot: dev.offset + i,
                        value: v as u16,
                    });
                }
            }
        }
        for (ai, app) in m.apps.iter().enumerate() {
            let touchable = app.spec.handlers.iter().enumerate().any(|(hi, h)| {
                h.trigger == Trigger::Touch && !state.disabled[app.handler_base + hi]
            });
            if touchable {
                out.push(Ext::Touch { app: ai });
            }
        }
        if !state.scheduled.is_empty() {
            out.push(Ext::Tick);
        }
        out
    }

    /// Devices driven by external events: every sensor or momentary device
    /// bound to an installed app.
    pub fn driven_devices(&self) -> Vec<usize> {
        let m = self.model;
        let set: BTreeSet<usize> = m
            .apps
            .iter()
            .flat_map(|a| a.bindings.values().flatten().copied())
            .filter(|&d| m.devices[d].kind.is_external())
            .collect();
        set.into_iter().collect()
    }

    fn deliver(
        &self,
        state: &mut SystemState,
        device: usize,
        chooser: &mut dyn Chooser,
        ctx: &mut Ctx,
    ) -> Delivery {
        let dev = &self.model.devices[device];
        if !state.online[device] {
            return Delivery::Offline;
        }
        if !dev.can_fail || state.failures >= self.failures.max_failures {
            return Delivery::Delivered;
        }
        let mut options = vec![Delivery::Delivered];
        if self.failures.comm {
            options.push(Delivery::Lost);
        }
        if self.failures.offline {
            options.push(Delivery::Offline);
        }
        if options.len() == 1 {
            return Delivery::Delivered;
        }
        let pick = options[chooser.choose(options.len())];
        match pick {
            Delivery::Delivered => ctx.note(&dev.id, || "online".into(), false),
            Delivery::Lost => {
                state.failures += 1;
                ctx.note(&dev.id, || "message lost".into(), true);
            }
            Delivery::Offline => {
                state.failures += 1;
                state.online[device] = false;
                ctx.note(&dev.id, || "goes offline".into(), true);
            }
        }
        pick
    }

    /// Applies an external event and returns the handler invocations it
    /// causes directly (touch and timer handlers). Sensor events only
    /// enqueue.
    pub fn apply_external(
        &self,
        state: &mut SystemState,
        ev: Ext,
        chooser: &mut dyn Chooser,
        log: &mut CascadeLog,
    ) -> Vec<usize> {
        self.start(state, ev, chooser, &mut Ctx { log, rec: None })
    }

    /// Runs one handler invocation atomically.
    pub fn execute(
        &self,
        state: &mut SystemState,
        handler: usize,
        trigger: Option<Event>,
        chooser: &mut dyn Chooser,
        log: &mut CascadeLog,
    ) {
        self.exec_handler(state, handler, trigger, chooser, &mut Ctx { log, rec: None });
    }

    fn start(&self, state: &mut SystemState, ev: Ext, chooser: &mut dyn Chooser, ctx: &mut Ctx) -> Vec<usize> {
        let m = self.model;
        match ev {
            Ext::Sensor { slot, value } => {
                let d = m.slot_device[slot];
                ctx.note(
                    &m.devices[d].id,
                    || format!("external {}", m.describe(slot, value)),
                    true,
                );
                let delivery = self.deliver(state, d, chooser, ctx);
                let queued = state.queue.len();
                let notified = sensor_state_update(m, state, slot, value, delivery);
                if state.queue.len() > queued {
                    ctx.note(
                        &m.devices[d].id,
                        || format!("reports {} ({} subscriber(s))", m.describe(slot, value), notified.len()),
                        false,
                    );
                }
                Vec::new()
            }
            Ext::Touch { app } => {
                let a = &m.apps[app];
                ctx.note(&a.id, || "touched".into(), false);
                let mut hs: Vec<usize> = a
                    .spec
                    .handlers
                    .iter()
                    .enumerate()
                    .filter(|(_, h)| h.trigger == Trigger::Touch)
                    .map(|(i, _)| a.handler_base + i)
                    .collect();
                hs.sort_by(|&x, &y| m.handler_name(x).cmp(&m.handler_name(y)));
                hs
            }
            Ext::Tick => {
                let due = state.scheduled.first().map_or(state.clock, |s| s.due);
                state.clock = state.clock.max(due);
                ctx.note("clock", || format!("tick to {}", state.clock), true);
                let (fired, rest): (Vec<Scheduled>, Vec<Scheduled>) =
                    state.scheduled.iter().partition(|s| s.due <= state.clock);
                state.scheduled = rest;
                for s in &fired {
                    if s.period > 0 {
                        state.scheduled.push(Scheduled {
                            due: state.clock + s.period,
                            ..*s
                        });
                    }
                }
                state.scheduled.sort();
                let mut hs: Vec<usize> = fired.iter().map(|s| s.handler).collect();
                hs.sort_by(|&x, &y| m.handler_name(x).cmp(&m.handler_name(y)));
                hs.dedup();
                hs
            }
        }
    }


    /// Runs one external event to quiescence, or until a property is
    /// violated, the step bound is hit, or `stop_after` handlers ran.
    pub fn run(
        &self,
        state: &mut SystemState,
        ev: Ext,
        chooser: &mut dyn Chooser,
        rec: Option<&mut Recorder>,
        stop_after: Option<usize>,
    ) -> CascadeResult {
        let mut log = CascadeLog::default();
        let mut ctx = Ctx {
            log: &mut log,
            rec,
        };
        let m = self.model;
        let direct = self.start(state, ev, chooser, &mut ctx);
        let mut handlers = 0usize;
        let mut pending: std::collections::VecDeque<(usize, Option<Event>)> =
            direct.into_iter().map(|h| (h, None)).collect();
        loop {
            let (h, trig) = match pending.pop_front() {
                Some(x) => x,
                None => match state.queue.pop_front() {
                    Some(ev) => {
                        pending.extend(m.notifications(state, ev).into_iter().map(|n| (n.handler, Some(ev))));
                        continue;
                    }
                    None => break,
                },
            };
            if state.disabled[h] {
                continue;
            }
            if handlers >= self.max_steps {
                let (app, name) = m.handler_name(h);
                let finding = Finding {
                    property: EVENT_LOOP.into(),
                    description: format!(
                        "cascade exceeded {} handler executions (next: {app}.{name})",
                        self.max_steps
                    ),
                };
                return CascadeResult {
                    findings: vec![finding],
                    handlers,
                    quiescent: false,
                    apps: log.apps(),
                    log,
                };
            }
            self.exec_handler(state, h, trig, chooser, &mut ctx);
            handlers += 1;
            let findings = self.check(Phase::Handler, state, ctx.log);
            if !findings.is_empty() || stop_after == Some(handlers) {
                return CascadeResult {
                    findings,
                    handlers,
                    quiescent: false,
                    apps: log.apps(),
                    log,
                };
            }
        }
        let findings = self.check(Phase::Quiescent, state, ctx.log);
        CascadeResult {
            findings,
            handlers,
            quiescent: true,
            apps: log.apps(),
            log,
        }
    }

    /// Properties violated at a check point.
    pub fn check(&self, phase: Phase, state: &SystemState, log: &CascadeLog) -> Vec<Finding> {
        self.props
            .iter()
            .filter(|p| p.phase() == phase)
            .filter_map(|p| {
                p.check(self.model, state, log).map(|description| Finding {
                    property: p.id.clone(),
                    description,
                })
            })
            .collect()
    }

    /// Checks the initial state (state invariants only).
    pub fn check_initial(&self, state: &SystemState) -> Vec<Finding> {
        self.props
            .iter()
            .filter(|p| p.kind == PropertyKind::Invariant)
            .filter_map(|p| {
                p.check(self.model, state, &CascadeLog::default())
                    .map(|description| Finding {
                        property: p.id.clone(),
                        description,
                    })
            })
            .collect()
    }

    /// Runs one handler invocation atomically.
    fn exec_handler(
        &self,
        state: &mut SystemState,
        h: usize,
        trigger: Option<Event>,
        chooser: &mut dyn Chooser,
        ctx: &mut Ctx,
    ) {
        let m = self.model;
        let hm = m.handlers[h];
        let app = &m.apps[hm.app];
        let handler = &app.spec.handlers[hm.index];
        ctx.note(
            &app.id,
            || match trigger {
                Some(ev) => format!(
                    "{} handles {}.{}",
                    handler.name,
                    m.devices[ev.device].id,
                    m.describe(ev.slot, ev.value)
                ),
                None => format!("{} runs", handler.name),
            },
            false,
        );
        for s in &handler.body {
            self.exec_stmt(state, hm.app, s, chooser, ctx);
        }
    }

    fn exec_stmt(
        &self,
        state: &mut SystemState,
        ai: usize,
        stmt: &Stmt,
        chooser: &mut dyn Chooser,
        ctx: &mut Ctx,
    ) {
        let m = self.model;
        let app = &m.apps[ai];
        match stmt {
            Stmt::If(cond, then) => {
                if self.eval(state, ai, cond) {
                    self.exec_stmt(state, ai, then, chooser, ctx);
                }
            }
            Stmt::Block(ss) => {
                for s in ss {
                    self.exec_stmt(state, ai, s, chooser, ctx);
                }
            }
            Stmt::Command { slot, attr, value } => {
                let value = app.resolve(value);
                for &d in &app.bindings[slot] {
                    let dev = &m.devices[d];
                    let s = dev.slot_of(attr).expect("validated attribute");
                    let Some(v) = m.attr_of_slot(s).index_of(value) else {
                        ctx.note(&app.id, || format!("skips {}.{attr}={value}: not in domain", dev.id), false);
                        continue;
                    };
                    ctx.note(&app.id, || format!("command {}.{}", dev.id, m.describe(s, v)), false);
                    let delivery = self.deliver(state, d, chooser, ctx);
                    let before = state.physical[s];
                    actuator_state_update(m, state, ctx.log, ai, s, v, delivery);
                    match delivery {
                        Delivery::Delivered if before != v => {
                            ctx.note(&dev.id, || m.describe(s, v), true)
                        }
                        Delivery::Delivered => {
                            ctx.note(&dev.id, || format!("already {}", m.describe(s, v)), false)
                        }
                        Delivery::Lost | Delivery::Offline => {
                            ctx.note(&dev.id, || format!("did not receive {}", m.describe(s, v)), false)
                        }
                    }
                }
            }
            Stmt::Raise { attr, value } => {
                let value = app.resolve(value);
                let mut targets: Vec<usize> = app
                    .bindings
                    .values()
                    .flatten()
                    .copied()
                    .filter(|&d| m.devices[d].kind.is_external())
                    .filter(|&d| m.devices[d].slot_of(attr).is_some())
                    .collect();
                targets.sort();
                targets.dedup();
                for d in targets {
                    let dev = &m.devices[d];
                    let s = dev.slot_of(attr).expect("filtered on attribute");
                    let Some(v) = m.attr_of_slot(s).index_of(value) else {
                        continue;
                    };
                    let fake = state.physical[s] != v;
                    ctx.log.entries.push(LogEntry::Raise {
                        app: ai,
                        slot: s,
                        value: v,
                        fake,
                    });
                    ctx.note(
                        &app.id,
                        || format!("raises {}.{}{}", dev.id, m.describe(s, v), if fake { " (fake)" } else { "" }),
                        true,
                    );
                    if state.reported[s] != v || dev.kind == CapabilityKind::Momentary {
                        state.reported[s] = v;
                        state.queue.push_back(Event {
                            device: d,
                            slot: s,
                            value: v,
                        });
                    }
                }
            }
            Stmt::Sms(v) => {
                let recipient = app.resolve(v).to_string();
                ctx.note(&app.id, || format!("sms {recipient}"), false);
                ctx.log.entries.push(LogEntry::Sms { app: ai, recipient });
            }
            Stmt::Post(endpoint) => {
                ctx.note(&app.id, || format!("post {endpoint}"), false);
                ctx.log.entries.push(LogEntry::Post {
                    app: ai,
                    endpoint: endpoint.clone(),
                });
            }
            Stmt::Unsubscribe(name) => {
                let h = m.find_handler(ai, name).expect("validated handler");
                state.disabled[h] = true;
                state.scheduled.retain(|s| s.handler != h);
                ctx.note(&app.id, || format!("unsubscribes {name}"), true);
                ctx.log.entries.push(LogEntry::Unsubscribe { app: ai, handler: h });
            }
            Stmt::RunIn { delay, handler } => {
                let h = m.find_handler(ai, handler).expect("validated handler");
                state.scheduled.retain(|s| !(s.handler == h && s.period == 0));
                state.scheduled.push(Scheduled {
                    due: state.clock + delay,
                    handler: h,
                    period: 0,
                });
                state.scheduled.sort();
                ctx.note(&app.id, || format!("schedules {handler} in {delay}"), true);
            }
        }
    }

    fn values<'s>(&'s self, state: &SystemState, ai: usize, op: &'s Operand) -> Vec<Val<'s>> {
        let m = self.model;
        let app = &m.apps[ai];
        let slot_val = |s: usize| {
            let a = m.attr_of_slot(s);
            let i = state.reported[s] as usize;
            match &a.numeric {
                Some(ns) => Val::Num(ns[i]),
                None => Val::Str(&a.values[i]),
            }
        };
        let text = |s: &'s str| match s.parse::<i64>() {
            Ok(n) => Val::Num(n),
            Err(_) => Val::Str(s),
        };
        match op {
            Operand::Attr { target, attr, .. } => app.bindings[target]
                .iter()
                .map(|&d| slot_val(m.devices[d].slot_of(attr).expect("validated attribute")))
                .collect(),
            Operand::Mode => vec![slot_val(m.devices[m.location].offset)],
            Operand::Clock => vec![Val::Num(state.clock as i64)],
            Operand::Name(n) => vec![text(app.params.get(n).map(String::as_str).unwrap_or(n))],
            Operand::Num(n) => vec![Val::Num(*n)],
            Operand::Str(s) => vec![Val::Str(s)],
        }
    }

    /// Guard evaluation; a comparison over a many-slot holds if any bound
    /// device satisfies it.
    fn eval(&self, state: &SystemState, ai: usize, cond: &Cond) -> bool {
        match cond {
            Cond::Cmp(a, op, b) => {
                let (xs, ys) = (self.values(state, ai, a), self.values(state, ai, b));
                xs.iter().any(|x| ys.iter().any(|y| compare(x, *op, y)))
            }
            Cond::Not(c) => !self.eval(state, ai, c),
            Cond::And(a, b) => self.eval(state, ai, a) && self.eval(state, ai, b),
            Cond::Or(a, b) => self.eval(state, ai, a) || self.eval(state, ai, b),
        }
    }
}
