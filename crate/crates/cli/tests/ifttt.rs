use homecheck_cli::ifttt::{import, parse_rules, ImportError};

const HOME: &str = include_str!("../fixtures/ifttt/home.cfg");

#[test]
fn rules_parse_with_comments() {
    let rules = parse_rules("# header\n\nif alexa.say=lights then light.switch=on # trailing\n").unwrap();
    assert_eq!(rules.len(), 1);
    let r = &rules[0];
    assert_eq!((r.source.as_str(), r.role.as_str(), r.value.as_str()), ("alexa", "light", "on"));
    assert_eq!(r.instance_id(), "rule1");
}

#[test]
fn malformed_rules_name_the_line() {
    for src in ["when alexa.say=x then light.switch=on", "if alexa.say then light.switch=on", "if a.b=c"] {
        match parse_rules(&format!("# c\n{src}")) {
            Err(ImportError::Syntax { line: 2, .. }) => {}
            other => panic!("{src}: {other:?}"),
        }
    }
}

#[test]
fn unknown_sources_and_roles_are_rejected() {
    let e = import("if fax.page=in then light.switch=on", HOME, &[]).unwrap_err();
    assert!(matches!(e, ImportError::Rule { rule: 1, .. }), "{e}");
    let e = import("if alexa.say=x then garage.switch=on", HOME, &[]).unwrap_err();
    assert!(e.to_string().contains("garage"), "{e}");
}

#[test]
fn imported_apps_bind_by_role() {
    let imported = import("if motionSensor.motion=active then siren.alarm=siren", HOME, &[]).unwrap();
    let app = imported.config.app("rule1").unwrap();
    assert_eq!(app.bindings["siren"], ["siren1"]);
    assert_eq!(app.bindings["trigger"], ["hallMotion"]);
}
