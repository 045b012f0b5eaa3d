use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;

use crate::appdsl::{AppSpec, Trigger, Value, LOCATION_CAPABILITY, LOCATION_SLOT, MODE_ATTR};
use crate::capability::CapabilityKind;

use super::SystemConfig;

/// Id of the built-in device holding the location mode.
pub const LOCATION_DEVICE: &str = "location";

#[derive(Debug, Clone)]
pub struct AttrModel {
    pub name: String,
    pub values: Vec<String>,
    /// Integer value of each domain entry, when the domain is numeric.
    pub numeric: Option<Vec<i64>>,
}

impl AttrModel {
    pub fn index_of(&self, value: &str) -> Option<u16> {
        self.values.iter().position(|v| v == value).map(|i| i as u16)
    }
}

#[derive(Debug, Clone)]
pub struct DeviceModel {
    pub id: String,
    pub capability: String,
    pub kind: CapabilityKind,
    pub role: Option<String>,
    pub can_fail: bool,
    pub attrs: Vec<AttrModel>,
    /// Index of the first attribute in the flat value arrays.
    pub offset: usize,
}

impl DeviceModel {
    pub fn slot_of(&self, attr: &str) -> Option<usize> {
        self.attrs
            .iter()
            .position(|a| a.name == attr)
            .map(|i| self.offset + i)
    }
}

/// An installed app resolved against device indices.
#[derive(Debug, Clone)]
pub struct AppModel {
    pub id: String,
    pub spec: Arc<AppSpec>,
    /// Slot name to device indices, in device order. Includes the location
    /// slot.
    pub bindings: BTreeMap<String, Vec<usize>>,
    pub params: BTreeMap<String, String>,
    /// Global index of the app's first handler.
    pub handler_base: usize,
}

impl AppModel {
    pub fn resolve<'a>(&'a self, v: &'a Value) -> &'a str {
        match v {
            Value::Lit(s) => s,
            Value::Param(p) => &self.params[p],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HandlerModel {
    pub app: usize,
    /// Index into the app's handler list.
    pub index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Subscription {
    handler: usize,
    value: Option<u16>,
}

/// A queued state-change event: attribute slot and new value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Event {
    pub device: usize,
    pub slot: usize,
    pub value: u16,
}

/// A handler invocation produced by an event.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Notification {
    pub handler: usize,
    pub event: Event,
}

/// A pending timed handler call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Scheduled {
    pub due: u32,
    pub handler: usize,
    /// Re-arm period for `schedule(n)` handlers; 0 for one-shot calls.
    pub period: u32,
}

/// What happened during one cascade, in order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CascadeLog {
    pub entries: Vec<LogEntry>,
}

impl CascadeLog {
    /// Apps with at least one entry.
    pub fn apps(&self) -> BTreeSet<usize> {
        self.entries.iter().map(LogEntry::app).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LogEntry {
    Command {
        app: usize,
        slot: usize,
        value: u16,
        delivered: bool,
    },
    Sms {
        app: usize,
        recipient: String,
    },
    Post {
        app: usize,
        endpoint: String,
    },
    Unsubscribe {
        app: usize,
        handler: usize,
    },
    Raise {
        app: usize,
        slot: usize,
        value: u16,
        /// The raised value differs from the physical value.
        fake: bool,
    },
}

impl LogEntry {
    pub fn app(&self) -> usize {
        match *self {
            LogEntry::Command { app, .. }
            | LogEntry::Sms { app, .. }
            | LogEntry::Post { app, .. }
            | LogEntry::Unsubscribe { app, .. }
            | LogEntry::Raise { app, .. } => app,
        }
    }
}

/// Outcome of sending a message to or from a device.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Delivery {
    Delivered,
    /// Transient communication failure; the device stays online.
    Lost,
    Offline,
}

/// Static, index-based view of a system restricted to a group of apps.
#[derive(Debug, Clone)]
pub struct Model {
    /// Sorted by id; the location device is included.
    pub devices: Vec<DeviceModel>,
    /// Device index of every attribute slot.
    pub slot_device: Vec<usize>,
    /// Installed apps of the group, sorted by instance id.
    pub apps: Vec<AppModel>,
    pub handlers: Vec<HandlerModel>,
    pub location: usize,
    pub contacts: BTreeSet<String>,
    pub allowed_endpoints: BTreeSet<String>,
    initial: SystemState,
    subscribers: Vec<Vec<Subscription>>,
}

impl Model {
    /// Resolves the configuration. With `group`, only those app instances
    /// are installed; every device is kept.
    pub fn new(cfg: &SystemConfig, group: Option<&BTreeSet<String>>) -> Model {
        let mut decls: Vec<(String, String, Option<String>, bool, BTreeMap<String, String>)> = cfg
            .devices
            .iter()
            .map(|d| {
                (
                    d.id.clone(),
                    d.capability.clone(),
                    d.role.clone(),
                    d.offline_candidate,
                    d.init.clone(),
                )
            })
            .collect();
        decls.push((
            LOCATION_DEVICE.to_string(),
            LOCATION_CAPABILITY.to_string(),
            None,
            false,
            BTreeMap::from([(MODE_ATTR.to_string(), cfg.initial_mode.clone())]),
        ));
        decls.sort_by(|a, b| a.0.cmp(&b.0));

        let mut devices = Vec::new();
        let mut slot_device = Vec::new();
        let mut physical = Vec::new();
        for (i, (id, capability, role, offline_candidate, init)) in decls.into_iter().enumerate() {
            let cap = cfg
                .catalog
                .get(&capability)
                .expect("configuration devices use catalog capabilities");
            let attrs: Vec<AttrModel> = cap
                .attributes
                .iter()
                .map(|a| {
                    let values = cfg
                        .domain_values(&cap.name, &a.name)
                        .expect("attribute exists in catalog");
                    let numeric = a
                        .domain
                        .is_numeric()
                        .then(|| values.iter().map(|v| v.parse().expect("numeric domain")).collect());
                    AttrModel {
                        name: a.name.clone(),
                        values,
                        numeric,
                    }
                })
                .collect();
            let offset = slot_device.len();
            for a in &attrs {
                slot_device.push(i);
                let v = init.get(&a.name).map(String::as_str).unwrap_or(&a.values[0]);
                physical.push(a.index_of(v).expect("initial values are validated"));
            }
            devices.push(DeviceModel {
                id,
                capability,
                kind: cap.kind,
                role,
                can_fail: offline_candidate
                    && !matches!(cap.kind, CapabilityKind::Both | CapabilityKind::Sink),
                attrs,
                offset,
            });
        }
        let index: BTreeMap<&str, usize> = devices
            .iter()
            .enumerate()
            .map(|(i, d)| (d.id.as_str(), i))
            .collect();
        let location = index[LOCATION_DEVICE];

        let mut insts: Vec<_> = cfg
            .apps
            .iter()
            .filter(|a| group.is_none_or(|g| g.contains(&a.id)))
            .collect();
        insts.sort_by(|a, b| a.id.cmp(&b.id));
        let mut apps = Vec::new();
        let mut handlers = Vec::new();
        for (ai, inst) in insts.into_iter().enumerate() {
            let mut bindings: BTreeMap<String, Vec<usize>> = inst
                .bindings
                .iter()
                .map(|(slot, ids)| {
                    let mut idx: Vec<usize> = ids.iter().map(|d| index[d.as_str()]).collect();
                    idx.sort();
                    (slot.clone(), idx)
                })
                .collect();
            bindings.insert(LOCATION_SLOT.to_string(), vec![location]);
            let handler_base = handlers.len();
            for hi in 0..inst.spec.handlers.len() {
                handlers.push(HandlerModel { app: ai, index: hi });
            }
            apps.push(AppModel {
                id: inst.id.clone(),
                spec: inst.spec.clone(),
                bindings,
                params: inst.params.clone(),
                handler_base,
            });
        }

        let mut subscribers = vec![Vec::new(); slot_device.len()];
        let mut scheduled = Vec::new();
        // Handler order within a slot: app id, then handler name.
        let mut order: Vec<usize> = (0..handlers.len()).collect();
        order.sort_by(|&a, &b| {
            let (ha, hb) = (handlers[a], handlers[b]);
            let na = &apps[ha.app].spec.handlers[ha.index].name;
            let nb = &apps[hb.app].spec.handlers[hb.index].name;
            ha.app.cmp(&hb.app).then_with(|| na.cmp(nb))
        });
        for &h in &order {
            let hm = handlers[h];
            let app = &apps[hm.app];
            match &app.spec.handlers[hm.index].trigger {
                Trigger::Subscribe { slot, attr, value } => {
                    for &d in &app.bindings[slot] {
                        let s = devices[d].slot_of(attr).expect("validated attribute");
                        let attr_model = &devices[d].attrs[s - devices[d].offset];
                        let value = match value {
                            None => None,
                            Some(v) => match attr_model.index_of(app.resolve(v)) {
                                Some(i) => Some(i),
                                // A value outside this system's domain never fires.
                                None => continue,
                            },
                        };
                        subscribers[s].push(Subscription { handler: h, value });
                    }
                }
                Trigger::Schedule(period) => scheduled.push(Scheduled {
                    due: *period,
                    handler: h,
                    period: *period,
                }),
                Trigger::Touch | Trigger::Callback => {}
            }
        }
        scheduled.sort();
        let n_devices = devices.len();
        let initial = SystemState {
            reported: physical.clone(),
            physical,
            online: vec![true; n_devices],
            clock: 0,
            scheduled,
            disabled: vec![false; handlers.len()],
            failures: 0,
            queue: VecDeque::new(),
        };
        Model {
            devices,
            slot_device,
            apps,
            handlers,
            location,
            contacts: cfg.contacts.clone(),
            allowed_endpoints: cfg.allowed_endpoints.clone(),
            initial,
            subscribers,
        }
    }

    pub fn initial_state(&self) -> SystemState {
        self.initial.clone()
    }

    pub fn device_index(&self, id: &str) -> Option<usize> {
        self.devices.binary_search_by(|d| d.id.as_str().cmp(id)).ok()
    }

    pub fn attr_of_slot(&self, slot: usize) -> &AttrModel {
        let d = &self.devices[self.slot_device[slot]];
        &d.attrs[slot - d.offset]
    }

    pub fn value_name(&self, slot: usize, value: u16) -> &str {
        &self.attr_of_slot(slot).values[value as usize]
    }

    pub fn handler_name(&self, h: usize) -> (&str, &str) {
        let hm = self.handlers[h];
        let app = &self.apps[hm.app];
        (&app.id, &app.spec.handlers[hm.index].name)
    }

    pub fn find_handler(&self, app: usize, name: &str) -> Option<usize> {
        let a = &self.apps[app];
        a.spec
            .handlers
            .iter()
            .position(|h| h.name == name)
            .map(|i| a.handler_base + i)
    }

    /// Enabled handlers notified by an event, in dispatch order.
    pub fn notifications(&self, state: &SystemState, ev: Event) -> Vec<Notification> {
        self.subscribers[ev.slot]
            .iter()
            .filter(|s| !state.disabled[s.handler] && s.value.is_none_or(|v| v == ev.value))
            .map(|s| Notification {
                handler: s.handler,
                event: ev,
            })
            .collect()
    }

    /// `device.attr=value` for an attribute slot.
    pub fn describe(&self, slot: usize, value: u16) -> String {
        let d = &self.devices[self.slot_device[slot]];
        format!("{}={}", d.attrs[slot - d.offset].name, self.value_name(slot, value))
    }
}

/// One complete snapshot of a running system.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SystemState {
    /// Real-world value of every attribute slot.
    pub physical: Vec<u16>,
    /// Value last reported to the hub; what apps read.
    pub reported: Vec<u16>,
    pub online: Vec<bool>,
    pub clock: u32,
    /// Sorted pending timed calls.
    pub scheduled: Vec<Scheduled>,
    pub disabled: Vec<bool>,
    /// Failures injected so far.
    pub failures: u8,
    pub queue: VecDeque<Event>,
}

impl SystemState {
    /// Canonical byte encoding. Device order is id order, so equal
    /// semantic states encode identically.
    pub fn canonical_bytes(&self, model: &Model) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 * self.physical.len() + 16);
        for (i, d) in model.devices.iter().enumerate() {
            out.push(self.online[i] as u8);
            for s in d.offset..d.offset + d.attrs.len() {
                out.extend_from_slice(&self.reported[s].to_le_bytes());
                out.extend_from_slice(&self.physical[s].to_le_bytes());
            }
        }
        out.extend_from_slice(&self.clock.to_le_bytes());
        out.extend_from_slice(&(self.scheduled.len() as u32).to_le_bytes());
        for s in &self.scheduled {
            out.extend_from_slice(&s.due.to_le_bytes());
            out.extend_from_slice(&(s.handler as u32).to_le_bytes());
            out.extend_from_slice(&s.period.to_le_bytes());
        }
        let mut bits = vec![0u8; self.disabled.len().div_ceil(8)];
        for (i, &d) in self.disabled.iter().enumerate() {
            if d {
                bits[i / 8] |= 1 << (i % 8);
            }
        }
        out.extend_from_slice(&bits);
        out.push(self.failures);
        out.extend_from_slice(&(self.queue.len() as u32).to_le_bytes());
        for e in &self.queue {
            out.extend_from_slice(&(e.slot as u32).to_le_bytes());
            out.extend_from_slice(&e.value.to_le_bytes());
        }
        out
    }

    pub fn mode<'m>(&self, model: &'m Model) -> &'m str {
        let slot = model.devices[model.location].offset;
        model.value_name(slot, self.reported[slot])
    }
}

fn enqueue(model: &Model, state: &mut SystemState, slot: usize, value: u16) -> Vec<Notification> {
    let ev = Event {
        device: model.slot_device[slot],
        slot,
        value,
    };
    state.queue.push_back(ev);
    model.notifications(state, ev)
}

/// A sensor observes `value`. The physical value always changes; the hub
/// hears about it only when the report is delivered. A momentary device
/// reports every stimulus, others only changes of the reported value.
pub fn sensor_state_update(
    model: &Model,
    state: &mut SystemState,
    slot: usize,
    value: u16,
    delivery: Delivery,
) -> Vec<Notification> {
    let device = &model.devices[model.slot_device[slot]];
    state.physical[slot] = value;
    if delivery != Delivery::Delivered {
        return Vec::new();
    }
    let changed = state.reported[slot] != value;
    if !changed && device.kind != CapabilityKind::Momentary {
        return Vec::new();
    }
    state.reported[slot] = value;
    enqueue(model, state, slot, value)
}

/// App `app` sends a command to an actuator. The command is logged even
/// when it is not delivered or changes nothing.
pub fn actuator_state_update(
    model: &Model,
    state: &mut SystemState,
    log: &mut CascadeLog,
    app: usize,
    slot: usize,
    value: u16,
    delivery: Delivery,
) -> Vec<Notification> {
    log.entries.push(LogEntry::Command {
        app,
        slot,
        value,
        delivered: delivery == Delivery::Delivered,
    });
    if delivery != Delivery::Delivered || state.physical[slot] == value {
        return Vec::new();
    }
    state.physical[slot] = value;
    state.reported[slot] = value;
    enqueue(model, state, slot, value)
}
