use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::Serialize;

use crate::appdsl::{AppSpec, Multiplicity, Stmt, Trigger, Value, LOCATION_SLOT};
use crate::capability::{parse_braced, CapabilityCatalog, CapabilityKind, Domain};
use crate::error::{ConfigError, ParseError};
use crate::lexer::{Cursor, Tok};

use super::LOCATION_DEVICE;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DeviceDecl {
    pub id: String,
    pub capability: String,
    pub role: Option<String>,
    /// Only devices marked this way may go offline or lose messages.
    pub offline_candidate: bool,
    /// Initial value of every attribute.
    pub init: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AppInstance {
    pub id: String,
    #[serde(skip)]
    pub spec: Arc<AppSpec>,
    pub app: String,
    /// Slot name to bound device ids, sorted.
    pub bindings: BTreeMap<String, Vec<String>>,
    /// Every declared parameter with its value.
    pub params: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SystemConfig {
    pub devices: Vec<DeviceDecl>,
    pub apps: Vec<AppInstance>,
    pub contacts: BTreeSet<String>,
    pub allowed_endpoints: BTreeSet<String>,
    pub modes: Vec<String>,
    pub initial_mode: String,
    /// Numeric domain overrides keyed by `(capability, attribute)`.
    pub domains: BTreeMap<(String, String), Vec<i64>>,
    #[serde(skip)]
    pub catalog: CapabilityCatalog,
}

const DEFAULT_MODES: [&str; 3] = ["Home", "Away", "Night"];

impl SystemConfig {
    /// An empty system using the given catalog and the default mode set.
    pub fn empty(catalog: &CapabilityCatalog) -> Self {
        SystemConfig {
            devices: Vec::new(),
            apps: Vec::new(),
            contacts: BTreeSet::new(),
            allowed_endpoints: BTreeSet::new(),
            modes: DEFAULT_MODES.iter().map(|s| s.to_string()).collect(),
            initial_mode: DEFAULT_MODES[0].to_string(),
            domains: BTreeMap::new(),
            catalog: catalog.clone(),
        }
    }

    pub fn device(&self, id: &str) -> Option<&DeviceDecl> {
        self.devices.iter().find(|d| d.id == id)
    }

    pub fn app(&self, id: &str) -> Option<&AppInstance> {
        self.apps.iter().find(|a| a.id == id)
    }

    /// Values an attribute can take in this system.
    pub fn domain_values(&self, capability: &str, attr: &str) -> Option<Vec<String>> {
        let cap = self.catalog.get(capability)?;
        let def = cap.attribute(attr)?;
        Some(match &def.domain {
            Domain::Modes => self.modes.clone(),
            Domain::Numeric(ns) => self
                .domains
                .get(&(capability.to_string(), attr.to_string()))
                .unwrap_or(ns)
                .iter()
                .map(|n| n.to_string())
                .collect(),
            Domain::Enum(vs) => vs.clone(),
        })
    }

    pub fn devices_with_role(&self, role: &str) -> Vec<&DeviceDecl> {
        self.devices
            .iter()
            .filter(|d| d.role.as_deref() == Some(role))
            .collect()
    }

    /// Adds an app instance, checking bindings and parameters. Unset
    /// parameters take the first value of their declared domain.
    pub fn install(
        &mut self,
        id: &str,
        spec: Arc<AppSpec>,
        bindings: BTreeMap<String, Vec<String>>,
        params: BTreeMap<String, String>,
    ) -> Result<(), ConfigError> {
        if self.app(id).is_some() {
            return Err(ConfigError::DuplicateId {
                kind: "app",
                id: id.to_string(),
            });
        }
        let inst = self.bind(id, spec, bindings, params)?;
        self.apps.push(inst);
        Ok(())
    }

    fn bind(
        &self,
        id: &str,
        spec: Arc<AppSpec>,
        mut bindings: BTreeMap<String, Vec<String>>,
        mut params: BTreeMap<String, String>,
    ) -> Result<AppInstance, ConfigError> {
        let binding_err = |slot: &str, reason: String| ConfigError::Binding {
            app: id.to_string(),
            slot: slot.to_string(),
            reason,
        };
        for slot in bindings.keys() {
            if spec.slot(slot).is_none() {
                return Err(binding_err(slot, "no such slot".into()));
            }
        }
        for slot in &spec.slots {
            let devs = bindings.entry(slot.name.clone()).or_default();
            devs.sort();
            devs.dedup();
            match (slot.multiplicity, devs.len()) {
                (_, 0) => return Err(binding_err(&slot.name, "not bound".into())),
                (Multiplicity::One, n) if n > 1 => {
                    return Err(binding_err(&slot.name, format!("takes one device, got {n}")))
                }
                _ => {}
            }
            for d in devs.iter() {
                let dev = self
                    .device(d)
                    .ok_or_else(|| ConfigError::UnknownDevice(d.clone()))?;
                if dev.capability != slot.capability {
                    return Err(ConfigError::CapabilityMismatch {
                        app: id.to_string(),
                        slot: slot.name.clone(),
                        device: d.clone(),
                        expected: slot.capability.clone(),
                        found: dev.capability.clone(),
                    });
                }
            }
        }
        for name in params.keys() {
            if spec.param(name).is_none() {
                return Err(ConfigError::Invalid(format!(
                    "app `{id}` has no parameter `{name}`"
                )));
            }
        }
        for p in &spec.params {
            let v = params
                .entry(p.name.clone())
                .or_insert_with(|| p.values()[0].clone());
            if !p.contains(v) {
                return Err(ConfigError::OutOfDomain {
                    what: format!("{id}.{}", p.name),
                    value: v.clone(),
                });
            }
        }
        let inst = AppInstance {
            id: id.to_string(),
            app: spec.name.clone(),
            spec,
            bindings,
            params,
        };
        self.check_mode_values(&inst)?;
        Ok(inst)
    }

    /// Mode values written by or compared against the app must be modes of
    /// this system.
    fn check_mode_values(&self, inst: &AppInstance) -> Result<(), ConfigError> {
        let resolve = |v: &Value| match v {
            Value::Lit(s) => s.clone(),
            Value::Param(p) => inst.params[p].clone(),
        };
        let check = |v: String| {
            if self.modes.contains(&v) {
                Ok(())
            } else {
                Err(ConfigError::OutOfDomain {
                    what: format!("{}: location mode", inst.id),
                    value: v,
                })
            }
        };
        for h in &inst.spec.handlers {
            if let Trigger::Subscribe {
                slot,
                value: Some(v),
                ..
            } = &h.trigger
            {
                if slot == LOCATION_SLOT {
                    check(resolve(v))?;
                }
            }
            let mut result = Ok(());
            h.walk(|s| {
                if let Stmt::Command { slot, value, .. } = s {
                    if slot == LOCATION_SLOT && result.is_ok() {
                        result = check(resolve(value));
                    }
                }
            });
            result?;
        }
        Ok(())
    }
}

/// Loads a configuration against the bundled catalog.
pub fn load_config(source: &str, library: &[AppSpec]) -> Result<SystemConfig, ConfigError> {
    load_config_with(source, library, CapabilityCatalog::builtin())
}

struct AppRecord {
    id: String,
    app: String,
    bindings: BTreeMap<String, Vec<String>>,
    params: BTreeMap<String, String>,
}

pub fn load_config_with(
    source: &str,
    library: &[AppSpec],
    catalog: &CapabilityCatalog,
) -> Result<SystemConfig, ConfigError> {
    let mut cur = Cursor::new(source)?;
    let mut cfg = SystemConfig::empty(catalog);
    let mut records = Vec::new();
    let mut modes_declared = false;
    while !cur.at_eof() {
        let kw = cur.ident()?;
        match kw.as_str() {
            "device" => {
                let id = cur.ident()?;
                let capability = cur.ident()?;
                let mut role = None;
                let mut offline_candidate = false;
                let mut init = BTreeMap::new();
                loop {
                    if cur.is_kw("offline-candidate") {
                        cur.bump();
                        offline_candidate = true;
                    } else if matches!(cur.peek(), Tok::Ident(_))
                        && matches!(cur.peek_at(1), Tok::Sym("="))
                    {
                        let key = cur.ident()?;
                        cur.bump();
                        let value = cur.atom()?;
                        if key == "role" {
                            role = Some(value);
                        } else if init.insert(key.clone(), value).is_some() {
                            return Err(ParseError::Duplicate {
                                kind: "initial value",
                                name: format!("{id}.{key}"),
                            }
                            .into());
                        }
                    } else {
                        break;
                    }
                }
                cfg.devices.push(DeviceDecl {
                    id,
                    capability,
                    role,
                    offline_candidate,
                    init,
                });
            }
            "domain" => {
                let capability = cur.ident()?;
                cur.expect_sym(".")?;
                let attr = cur.ident()?;
                cur.expect_sym("=")?;
                let values = parse_braced(&mut cur, |c| c.number())?;
                cfg.domains.insert((capability, attr), values);
            }
            "modes" => {
                if modes_declared {
                    return Err(ParseError::Duplicate {
                        kind: "declaration",
                        name: "modes".into(),
                    }
                    .into());
                }
                modes_declared = true;
                cfg.modes = parse_braced(&mut cur, |c| c.ident())?;
                cfg.initial_mode = cfg.modes[0].clone();
                if cur.eat_kw("initial") {
                    cur.expect_sym("=")?;
                    cfg.initial_mode = cur.ident()?;
                }
            }
            "app" => {
                let id = cur.ident()?;
                cur.expect_kw("uses")?;
                let app = cur.ident()?;
                cur.expect_sym("{")?;
                let mut bindings: BTreeMap<String, Vec<String>> = BTreeMap::new();
                let mut params = BTreeMap::new();
                while !cur.eat_sym("}") {
                    if cur.eat_kw("bind") {
                        let slot = cur.ident()?;
                        cur.expect_sym("=")?;
                        let mut devs = vec![cur.ident()?];
                        while cur.eat_sym(",") {
                            devs.push(cur.ident()?);
                        }
                        if bindings.insert(slot.clone(), devs).is_some() {
                            return Err(ParseError::Duplicate { kind: "binding", name: slot }.into());
                        }
                    } else if cur.eat_kw("param") {
                        let name = cur.ident()?;
                        cur.expect_sym("=")?;
                        let value = cur.atom()?;
                        if params.insert(name.clone(), value).is_some() {
                            return Err(ParseError::Duplicate { kind: "param", name }.into());
                        }
                    } else {
                        cur.error::<()>(&["`bind`", "`param`", "`}`"])?;
                    }
                    cur.expect_sym(";")?;
                }
                records.push(AppRecord {
                    id,
                    app,
                    bindings,
                    params,
                });
            }
            "contact" => {
                cfg.contacts.insert(cur.atom()?);
            }
            "allow" => {
                cfg.allowed_endpoints.insert(cur.atom()?);
            }
            _ => {
                return Err(ParseError::Syntax {
                    pos: cur.pos(),
                    expected: ["device", "domain", "modes", "app", "contact", "allow"]
                        .iter()
                        .map(|s| format!("`{s}`"))
                        .collect(),
                    found: format!("identifier `{kw}`"),
                }
                .into())
            }
        }
    }
    finish_devices(&mut cfg)?;
    for AppRecord {
        id,
        app,
        bindings,
        params,
    } in records
    {
        let spec = library
            .iter()
            .find(|a| a.name == app)
            .ok_or_else(|| ConfigError::UnknownApp(app.clone()))?;
        cfg.install(&id, Arc::new(spec.clone()), bindings, params)?;
    }
    Ok(cfg)
}

/// Checks devices and fills in default initial values.
fn finish_devices(cfg: &mut SystemConfig) -> Result<(), ConfigError> {
    if !cfg.modes.contains(&cfg.initial_mode) {
        return Err(ConfigError::OutOfDomain {
            what: "modes".into(),
            value: cfg.initial_mode.clone(),
        });
    }
    let distinct: BTreeSet<&String> = cfg.modes.iter().collect();
    if distinct.len() != cfg.modes.len() {
        return Err(ConfigError::Invalid("duplicate mode".into()));
    }
    for ((cap, attr), values) in &cfg.domains {
        let def = cfg
            .catalog
            .require(cap)?
            .attribute(attr)
            .ok_or_else(|| ParseError::UnknownAttribute {
                capability: cap.clone(),
                attribute: attr.clone(),
            })?;
        if !def.domain.is_numeric() {
            return Err(ConfigError::Invalid(format!(
                "domain override for non-numeric attribute `{cap}.{attr}`"
            )));
        }
        let distinct: BTreeSet<i64> = values.iter().copied().collect();
        if distinct.len() != values.len() {
            return Err(ConfigError::Invalid(format!("duplicate value in domain of `{cap}.{attr}`")));
        }
    }
    let mut ids = BTreeSet::new();
    let mut devices = std::mem::take(&mut cfg.devices);
    for d in &mut devices {
        if d.id == LOCATION_DEVICE || !ids.insert(d.id.clone()) {
            return Err(ConfigError::DuplicateId {
                kind: "device",
                id: d.id.clone(),
            });
        }
        let cap = cfg.catalog.require(&d.capability)?;
        if cap.kind == CapabilityKind::Both {
            return Err(ConfigError::Invalid(format!(
                "device `{}`: `{}` is provided by the built-in `{LOCATION_DEVICE}` device",
                d.id, d.capability
            )));
        }
        for key in d.init.keys() {
            if cap.attribute(key).is_none() {
                return Err(ParseError::UnknownAttribute {
                    capability: cap.name.clone(),
                    attribute: key.clone(),
                }
                .into());
            }
        }
        for attr in &cap.attributes {
            let values = cfg
                .domain_values(&cap.name, &attr.name)
                .expect("attribute exists in catalog");
            let v = d
                .init
                .entry(attr.name.clone())
                .or_insert_with(|| values[0].clone());
            if !values.contains(v) {
                return Err(ConfigError::OutOfDomain {
                    what: format!("{}.{}", d.id, attr.name),
                    value: v.clone(),
                });
            }
        }
    }
    cfg.devices = devices;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::appdsl::parse_app;

    fn library() -> Vec<AppSpec> {
        vec![
            parse_app(
                r#"app AutoModeChange {
                    slot people: presenceSensor many
                    param awayMode: enum { Away, Night }
                    on people.presence == not_present as presenceHandler {
                        location.set(mode, awayMode);
                    }
                }"#,
            )
            .unwrap(),
            parse_app(
                r#"app UnlockDoor {
                    slot lock1: lock one
                    on touch { lock1.set(lock, unlocked); }
                    on location.mode { lock1.set(lock, unlocked); }
                }"#,
            )
            .unwrap(),
            parse_app("app Heat { slot outlet: switch one on touch { outlet.set(switch, on); } }").unwrap(),
        ]
    }

    const ALICE: &str = r#"
        device alicePresence presenceSensor role=occupancy presence=present
        device frontDoor lock role=main-door offline-candidate
        modes { Home, Away } initial=Home
        app amc uses AutoModeChange { bind people = alicePresence; param awayMode = Away; }
        app unlock uses UnlockDoor { bind lock1 = frontDoor; }
        contact "+1-555-0100"
        allow "https://hub.example.com"
    "#;

    #[test]
    fn loads_alice_system() {
        let cfg = load_config(ALICE, &library()).unwrap();
        assert_eq!(cfg.devices.len(), 2);
        assert_eq!(cfg.apps.len(), 2);
        assert_eq!(cfg.modes, ["Home", "Away"]);
        assert_eq!(cfg.initial_mode, "Home");
        let door = cfg.device("frontDoor").unwrap();
        assert!(door.offline_candidate);
        assert_eq!(door.role.as_deref(), Some("main-door"));
        assert_eq!(door.init["lock"], "locked");
        assert!(cfg.contacts.contains("+1-555-0100"));
        assert_eq!(cfg.app("amc").unwrap().params["awayMode"], "Away");
    }

    #[test]
    fn empty_system_is_valid() {
        let cfg = load_config("", &[]).unwrap();
        assert!(cfg.devices.is_empty() && cfg.apps.is_empty());
    }

    #[test]
    fn capability_mismatch() {
        let src = "device t temperatureMeasurement\napp h uses Heat { bind outlet = t; }";
        assert!(matches!(
            load_config(src, &library()),
            Err(ConfigError::CapabilityMismatch { .. })
        ));
    }

    #[test]
    fn reference_and_domain_errors() {
        let lib = library();
        let cases: [(&str, fn(&ConfigError) -> bool); 8] = [
            ("app h uses Nope { }", |e| matches!(e, ConfigError::UnknownApp(_))),
            ("app h uses Heat { bind outlet = ghost; }", |e| matches!(e, ConfigError::UnknownDevice(_))),
            ("device a switch\ndevice a switch", |e| matches!(e, ConfigError::DuplicateId { .. })),
            ("device s switch switch=dim", |e| matches!(e, ConfigError::OutOfDomain { .. })),
            (
                "device p presenceSensor\napp a uses AutoModeChange { bind people = p; param awayMode = Gone; }",
                |e| matches!(e, ConfigError::OutOfDomain { .. }),
            ),
            (
                "modes { Home, Away }\ndevice p presenceSensor\napp a uses AutoModeChange { bind people = p; param awayMode = Night; }",
                |e| matches!(e, ConfigError::OutOfDomain { .. }),
            ),
            ("app h uses Heat { }", |e| matches!(e, ConfigError::Binding { .. })),
            (
                "device a switch\ndevice b switch\napp h uses Heat { bind outlet = a, b; }",
                |e| matches!(e, ConfigError::Binding { .. }),
            ),
        ];
        for (src, ok) in cases {
            let err = load_config(src, &lib).unwrap_err();
            assert!(ok(&err), "{src}: {err:?}");
        }
    }

    #[test]
    fn numeric_domain_override() {
        let src = "domain temperatureMeasurement.temperature = { 50, 90 }\ndevice t temperatureMeasurement temperature=90";
        let cfg = load_config(src, &[]).unwrap();
        assert_eq!(
            cfg.domain_values("temperatureMeasurement", "temperature").unwrap(),
            ["50", "90"]
        );
        assert!(load_config("domain switch.switch = { 1 }", &[]).is_err());
    }
}
