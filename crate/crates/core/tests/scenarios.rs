mod common;

use std::collections::BTreeSet;

use homecheck::devmodel::Model;
use homecheck::engine::Engine;
use homecheck::explorer::{explore, replay, ExternalStep};
use homecheck::pipeline::replay_trace;
use homecheck::properties::{compile, Selection};
use homecheck::{check_system, instantiate_properties, CheckOptions, Error, PropertyCatalog, Report, Trace};

fn check(name: &str, k: usize, failures: bool) -> Report {
    let mut opts = CheckOptions::default();
    opts.exploration.max_events = k;
    opts.exploration.failures.offline = failures;
    opts.exploration.failures.comm = failures;
    check_system(&common::config(name), &opts).unwrap()
}

fn properties(r: &Report) -> Vec<&str> {
    r.violations.iter().map(|v| v.property.as_str()).collect()
}

fn position(trace: &Trace, entity: &str, action: &str) -> usize {
    trace
        .lines
        .iter()
        .position(|l| l.entity == entity && l.action == action)
        .unwrap_or_else(|| panic!("no `[{entity}] {action}` in\n{trace}"))
}

#[test]
fn alice_door_unlocked_after_leaving() {
    let r = check("alice", 1, false);
    assert_eq!(properties(&r), ["door-locked-away"]);
    let v = &r.violations[0];
    let t = &v.trace;
    let order = [
        position(t, "alicePresence", "external presence=not_present"),
        position(t, "location", "mode=Away"),
        position(t, "unlock", "command frontDoor.lock=unlocked"),
        position(t, "frontDoor", "lock=unlocked"),
    ];
    assert!(order.windows(2).all(|w| w[0] < w[1]), "{t}");
    assert_eq!(v.apps, BTreeSet::from(["amc".to_string(), "unlock".to_string()]));
}

#[test]
fn replay_reproduces_the_violating_state() {
    let cfg = common::config("alice");
    let inst = instantiate_properties(PropertyCatalog::builtin(), &cfg, &Selection::All).unwrap();
    let model = Model::new(&cfg, None);
    let props = compile(&inst.properties, &model);
    let result = explore(&model, &props, &Default::default());
    let engine = Engine::new(&model, &props, Default::default());
    for v in &result.violations {
        let replayed = replay(&engine, &v.trace).unwrap();
        assert_eq!(replayed.state, v.state);
        assert_eq!(replayed.state.canonical_bytes(&model), v.state.canonical_bytes(&model));
        assert_eq!(replayed.lines, v.trace.lines);
    }
}

#[test]
fn serialized_traces_replay() {
    let r = check("makeitso", 2, true);
    let cfg = common::config("makeitso");
    let mut opts = CheckOptions::default();
    opts.exploration.failures.offline = true;
    opts.exploration.failures.comm = true;
    for v in &r.violations {
        let json = serde_json::to_string(&v.trace).unwrap();
        let back: Trace = serde_json::from_str(&json).unwrap();
        assert_eq!(&back, &v.trace);
        let group: BTreeSet<String> = back.group.iter().cloned().collect();
        let replayed = replay_trace(&cfg, &group, &opts, &back).unwrap();
        assert_eq!(replayed.state, v.state);
    }
}

#[test]
fn mutated_trace_diverges() {
    let r = check("alice", 1, false);
    let cfg = common::config("alice");
    let opts = CheckOptions::default();
    let group: BTreeSet<String> = r.violations[0].trace.group.iter().cloned().collect();

    let mut wrong_value = r.violations[0].trace.clone();
    let json = serde_json::to_string(&wrong_value.steps[0].event)
        .unwrap()
        .replace("not_present", "present");
    wrong_value.steps[0].event = serde_json::from_str(&json).unwrap();
    assert!(matches!(
        replay_trace(&cfg, &group, &opts, &wrong_value),
        Err(Error::Divergence { step: 1, .. })
    ));

    let mut extra_choice = r.violations[0].trace.clone();
    extra_choice.steps[0].choices = vec![1];
    assert!(matches!(
        replay_trace(&cfg, &group, &opts, &extra_choice),
        Err(Error::Divergence { .. })
    ));

    let mut edited = r.violations[0].trace.clone();
    edited.lines[3].action = "command location.mode=Home".into();
    assert!(matches!(
        replay_trace(&cfg, &group, &opts, &edited),
        Err(Error::Divergence { .. })
    ));

    let mut unknown = r.violations[0].trace.clone();
    unknown.steps.push(ExternalStep {
        event: serde_json::from_str(r#"{"kind":"touch","app":"nobody"}"#).unwrap(),
        choices: Vec::new(),
    });
    assert!(replay_trace(&cfg, &group, &opts, &unknown).is_err());
}

#[test]
fn empty_trace_replays_to_the_initial_state() {
    let cfg = common::config("alice");
    let model = Model::new(&cfg, None);
    let engine = Engine::new(&model, &[], Default::default());
    let replayed = replay(&engine, &Trace::default()).unwrap();
    assert_eq!(replayed.state, model.initial_state());
    assert!(replayed.lines.is_empty());
    assert!(replayed.findings.is_empty());
}

#[test]
fn conflicting_commands_on_one_contact_event() {
    let r = check("conflict", 1, false);
    assert_eq!(properties(&r), ["conflict-free"]);
    let t = &r.violations[0].trace;
    assert_eq!(t.steps.len(), 1);
    assert_eq!(t.steps[0].event.to_string(), "frontContact.contact=open");
    assert_eq!(r.violations[0].apps.len(), 2);
}

#[test]
fn repeated_commands_on_one_motion_event() {
    let r = check("repeat", 1, false);
    assert_eq!(properties(&r), ["repeat-free"]);
    assert_eq!(r.violations[0].trace.steps.len(), 1);
    assert_eq!(r.violations[0].trace.steps[0].event.to_string(), "hallMotion.motion=active");
}

#[test]
fn failures_expose_the_unlocked_door() {
    let clean = check("makeitso", 1, false);
    assert!(!properties(&clean).contains(&"door-locked-away"));
    assert!(!properties(&clean).contains(&"robustness"));

    let failing = check("makeitso", 1, true);
    let found = properties(&failing);
    assert!(found.contains(&"door-locked-away"), "{found:?}");
    assert!(found.contains(&"robustness"), "{found:?}");
    // One witness has the lock command lost on its way to the door.
    let lost = failing
        .violations
        .iter()
        .find(|v| v.property == "door-locked-away" && !v.apps.is_empty())
        .unwrap();
    position(&lost.trace, "secure", "command frontDoor.lock=locked");
    // With only device failures, the presence sensor dropping off before it
    // reports is enough.
    let mut opts = CheckOptions::default();
    opts.exploration.failures.offline = true;
    let offline_only = check_system(&common::config("makeitso"), &opts).unwrap();
    let offline = offline_only
        .violations
        .iter()
        .find(|v| v.property == "door-locked-away" && v.apps.is_empty())
        .unwrap();
    position(&offline.trace, "bobPresence", "goes offline");
}

#[test]
fn the_failure_bound_is_respected() {
    let r = check("makeitso", 3, true);
    for v in &r.violations {
        let failures = v
            .trace
            .lines
            .iter()
            .filter(|l| l.action == "message lost" || l.action == "goes offline")
            .count();
        assert!(failures <= 1, "{}", v.trace);
    }
}
