//! Import of trigger-action rules into DSL apps.
//!
//! One rule per line:
//!
//! ```text
//! # comment
//! if <source>.<attr>=<value> then <role>.<attr>=<value>
//! ```
//!
//! `<source>` is a device capability or a known cloud service (see
//! [`SERVICES`]). The action names a device role; every inventory device
//! with that role is bound. Rule `n` (1-based, counting rules only) becomes
//! app `Rule<n>` installed as `rule<n>`.

use std::collections::BTreeMap;
use std::fmt::Write;

use homecheck::appdsl::parse_apps_with;
use homecheck::{load_config, AppSpec, CapabilityCatalog, CapabilityKind, SystemConfig};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImportError {
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("rule {rule}: {reason}")]
    Rule { rule: usize, reason: String },
    #[error(transparent)]
    Config(#[from] homecheck::ConfigError),
    #[error(transparent)]
    Parse(#[from] homecheck::ParseError),
}

/// How a trigger source is modelled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    /// A user-issued command (voice assistant, social post, button): the
    /// app's own touch event.
    Command,
    /// Events of a device capability.
    Device(&'static str),
}

/// Cloud services and what their triggers map to.
pub const SERVICES: &[(&str, Source)] = &[
    ("alexa", Source::Command),
    ("google", Source::Command),
    ("hashtag", Source::Command),
    ("button", Source::Command),
    ("arlo", Source::Device("motionSensor")),
    ("ring", Source::Device("contactSensor")),
    ("nest", Source::Device("presenceSensor")),
    ("weather", Source::Device("clock")),
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rule {
    pub index: usize,
    pub source: String,
    pub trigger_attr: String,
    pub trigger_value: String,
    pub role: String,
    pub attr: String,
    pub value: String,
    pub text: String,
}

impl Rule {
    pub fn app_name(&self) -> String {
        format!("Rule{}", self.index)
    }

    pub fn instance_id(&self) -> String {
        format!("rule{}", self.index)
    }
}

fn split_assignment(s: &str) -> Option<(String, String, String)> {
    let (lhs, value) = s.split_once('=')?;
    let (obj, attr) = lhs.split_once('.')?;
    let ok = |p: &str| !p.is_empty() && p.chars().all(|c| c.is_alphanumeric() || c == '-' || c == '_');
    (ok(obj) && ok(attr) && ok(value)).then(|| (obj.to_string(), attr.to_string(), value.to_string()))
}

pub fn parse_rules(src: &str) -> Result<Vec<Rule>, ImportError> {
    let mut rules = Vec::new();
    for (i, raw) in src.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or_default().trim();
        if line.is_empty() {
            continue;
        }
        let err = |reason: &str| ImportError::Syntax {
            line: i + 1,
            reason: reason.to_string(),
        };
        let words: Vec<&str> = line.split_whitespace().collect();
        let [if_kw, trigger, then_kw, action] = words[..] else {
            return Err(err("expected `if <source>.<attr>=<value> then <role>.<attr>=<value>`"));
        };
        if if_kw != "if" || then_kw != "then" {
            return Err(err("expected `if ... then ...`"));
        }
        let (source, trigger_attr, trigger_value) =
            split_assignment(trigger).ok_or_else(|| err("malformed trigger"))?;
        let (role, attr, value) = split_assignment(action).ok_or_else(|| err("malformed action"))?;
        rules.push(Rule {
            index: rules.len() + 1,
            source,
            trigger_attr,
            trigger_value,
            role,
            attr,
            value,
            text: line.to_string(),
        });
    }
    Ok(rules)
}

/// Capability whose events trigger the rule, or `None` for a user command.
fn trigger_capability(name: &str, catalog: &CapabilityCatalog) -> Option<Option<String>> {
    if let Some((_, s)) = SERVICES.iter().find(|(n, _)| *n == name) {
        return Some(match s {
            Source::Command => None,
            Source::Device(cap) => Some(cap.to_string()),
        });
    }
    catalog
        .iter()
        .find(|c| c.name == name && c.kind.is_subscribable())
        .map(|c| Some(c.name.clone()))
}

fn slot_name(role: &str) -> String {
    let mut out = String::new();
    let mut upper = false;
    for c in role.chars() {
        if c == '-' || c == '_' {
            upper = true;
        } else if upper {
            out.extend(c.to_uppercase());
            upper = false;
        } else {
            out.push(c);
        }
    }
    out
}

/// DSL source of the app for one rule.
pub fn rule_app_source(rule: &Rule, catalog: &CapabilityCatalog) -> Result<String, ImportError> {
    let err = |reason: String| ImportError::Rule {
        rule: rule.index,
        reason,
    };
    let source = trigger_capability(&rule.source, catalog)
        .ok_or_else(|| err(format!("unknown trigger source `{}`", rule.source)))?;
    let action_cap = catalog
        .iter()
        .find(|c| c.kind.is_commandable() && c.kind != CapabilityKind::Both && c.attribute(&rule.attr).is_some())
        .ok_or_else(|| err(format!("no device capability accepts `{}` commands", rule.attr)))?;
    let slot = slot_name(&rule.role);
    let mut out = String::new();
    let _ = writeln!(out, "app {} {{", rule.app_name());
    let _ = writeln!(out, "    description \"{}\"", rule.text.replace('"', "'"));
    let trigger = match source {
        None => format!("touch as {}Command", slot_name(&rule.source)),
        Some(cap) => {
            let _ = writeln!(out, "    slot trigger: {cap} many");
            format!(
                "trigger.{} == {} as {}Handler",
                rule.trigger_attr,
                rule.trigger_value,
                slot_name(&rule.source)
            )
        }
    };
    if slot == "trigger" {
        return Err(err("the action role may not be named `trigger`".into()));
    }
    let _ = writeln!(out, "    slot {slot}: {} many", action_cap.name);
    let _ = writeln!(out, "    on {trigger} {{");
    let _ = writeln!(out, "        {slot}.set({}, {});", rule.attr, rule.value);
    let _ = writeln!(out, "    }}");
    let _ = writeln!(out, "}}");
    Ok(out)
}

/// The imported rules as apps and the inventory with every rule installed.
#[derive(Debug, Clone)]
pub struct Imported {
    pub rules: Vec<Rule>,
    pub apps: Vec<AppSpec>,
    /// DSL source of all rule apps.
    pub app_source: String,
    /// Configuration source: the inventory followed by the rule instances.
    pub config_source: String,
    pub config: SystemConfig,
}

/// Imports `rules` into the inventory given by `inventory_source` (a
/// configuration whose apps, if any, come from `library`).
pub fn import(rules_source: &str, inventory_source: &str, library: &[AppSpec]) -> Result<Imported, ImportError> {
    let inventory = load_config(inventory_source, library)?;
    let catalog = &inventory.catalog;
    let rules = parse_rules(rules_source)?;
    let mut app_source = String::new();
    let mut config_source = inventory_source.trim_end().to_string();
    config_source.push('\n');
    for rule in &rules {
        let src = rule_app_source(rule, catalog)?;
        app_source.push_str(&src);
        let mut bindings = BTreeMap::new();
        let err = |reason: String| ImportError::Rule {
            rule: rule.index,
            reason,
        };
        if let Some(Some(cap)) = trigger_capability(&rule.source, catalog) {
            let devices: Vec<String> = inventory
                .devices
                .iter()
                .filter(|d| d.capability == cap)
                .map(|d| d.id.clone())
                .collect();
            if devices.is_empty() {
                return Err(err(format!("no `{cap}` device for the trigger")));
            }
            bindings.insert("trigger".to_string(), devices);
        }
        let targets: Vec<String> = inventory
            .devices_with_role(&rule.role)
            .iter()
            .map(|d| d.id.clone())
            .collect();
        if targets.is_empty() {
            return Err(err(format!("no device with role `{}`", rule.role)));
        }
        bindings.insert(slot_name(&rule.role), targets);
        let binds: Vec<String> = bindings
            .iter()
            .map(|(s, ds)| format!("bind {s} = {};", ds.join(", ")))
            .collect();
        let _ = writeln!(
            config_source,
            "app {} uses {} {{ {} }}",
            rule.instance_id(),
            rule.app_name(),
            binds.join(" ")
        );
    }
    let apps = parse_apps_with(&app_source, catalog)?;
    let mut all = library.to_vec();
    all.extend(apps.iter().cloned());
    let config = load_config(&config_source, &all)?;
    Ok(Imported {
        rules,
        apps,
        app_source,
        config_source,
        config,
    })
}
