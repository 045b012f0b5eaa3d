mod common;

use homecheck::attribution::{attribute, AttributionOptions, Verdict};
use homecheck::AppSpec;

fn app(name: &str) -> AppSpec {
    common::library()
        .into_iter()
        .find(|a| a.name == name)
        .unwrap_or_else(|| panic!("no app {name}"))
}

#[test]
fn malicious_apps_violate_in_every_configuration() {
    let inventory = common::config("inventory");
    for name in ["ModeUnlocker", "SmokeTester", "DoorLogger", "DoorNotifier"] {
        let v = attribute(&app(name), &inventory, &AttributionOptions::default()).unwrap();
        println!("{}", v.verdict_line());
        assert!(v.phase1.total > 0, "{name}");
        assert_eq!(v.phase1.violating, v.phase1.total, "{name}");
        assert_eq!(v.verdict, Verdict::Malicious, "{name}");
        assert!(v.phase2.is_none());
    }
}

#[test]
fn thermostat_is_a_misconfiguration() {
    let inventory = common::config("thermostat");
    let v = attribute(&app("VirtualThermostat"), &inventory, &AttributionOptions::default()).unwrap();
    println!("{}", v.render_text());
    assert_eq!(v.verdict, Verdict::Misconfiguration);
    assert!(v.phase1.violating > 0 && v.phase1.violating < v.phase1.total);
    assert!(!v.safe_configs.is_empty());
    // Some safe configuration drives only heaters.
    assert!(v.safe_configs.iter().any(|c| {
        let outlets = &c.bindings["outlets"];
        !outlets.is_empty() && outlets.iter().all(|d| d.starts_with("heater"))
    }));
    // No safe configuration pairs a heater with an AC unit.
    for c in &v.safe_configs {
        let outlets = &c.bindings["outlets"];
        let heater = outlets.iter().any(|d| d.starts_with("heater"));
        let ac = outlets.iter().any(|d| d.starts_with("ac"));
        assert!(!(heater && ac) || c.params["setpoint"] == "60", "{c}");
    }
}

#[test]
fn attribution_is_deterministic() {
    let inventory = common::config("thermostat");
    let a = attribute(&app("VirtualThermostat"), &inventory, &AttributionOptions::default()).unwrap();
    let b = attribute(&app("VirtualThermostat"), &inventory, &AttributionOptions::default()).unwrap();
    assert_eq!(a.verdict_line(), b.verdict_line());
    assert_eq!(a.safe_configs, b.safe_configs);
}
