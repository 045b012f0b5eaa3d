use std::collections::BTreeSet;

use super::*;
use crate::capability::{parse_braced, CapabilityCatalog, Domain};
use crate::error::ParseError;
use crate::expr::{parse_cond, Operand};
use crate::lexer::{Cursor, Tok};

/// Parses an app against the bundled capability catalog.
pub fn parse_app(source: &str) -> Result<AppSpec, ParseError> {
    parse_app_with(source, CapabilityCatalog::builtin())
}

pub fn parse_app_with(source: &str, catalog: &CapabilityCatalog) -> Result<AppSpec, ParseError> {
    let mut cur = Cursor::new(source)?;
    let app = parse_one(&mut cur)?;
    if !cur.at_eof() {
        return cur.error(&["end of input"]);
    }
    validate(&app, catalog)?;
    Ok(app)
}

/// Parses every app in a source text (used by rule importers and app
/// libraries kept in one file).
pub fn parse_apps_with(source: &str, catalog: &CapabilityCatalog) -> Result<Vec<AppSpec>, ParseError> {
    let mut cur = Cursor::new(source)?;
    let mut out = Vec::new();
    while !cur.at_eof() {
        let app = parse_one(&mut cur)?;
        validate(&app, catalog)?;
        out.push(app);
    }
    Ok(out)
}

fn parse_one(cur: &mut Cursor) -> Result<AppSpec, ParseError> {
    cur.expect_kw("app")?;
    let name = cur.ident()?;
    cur.expect_sym("{")?;
    let mut description = None;
    if cur.eat_kw("description") {
        description = Some(cur.string()?);
    }
    let mut slots = Vec::new();
    while cur.eat_kw("slot") {
        let name = cur.ident()?;
        cur.expect_sym(":")?;
        let capability = cur.ident()?;
        let multiplicity = if cur.eat_kw("one") {
            Multiplicity::One
        } else if cur.eat_kw("many") {
            Multiplicity::Many
        } else {
            return cur.error(&["`one`", "`many`"]);
        };
        slots.push(Slot {
            name,
            capability,
            multiplicity,
        });
    }
    let mut params = Vec::new();
    while cur.eat_kw("param") {
        let name = cur.ident()?;
        cur.expect_sym(":")?;
        let kind = if cur.eat_kw("number") {
            cur.expect_kw("in")?;
            ParamKind::Number(parse_braced(cur, |c| c.number())?)
        } else if cur.eat_kw("enum") {
            ParamKind::Enum(parse_braced(cur, |c| c.ident())?)
        } else {
            return cur.error(&["`number`", "`enum`"]);
        };
        params.push(Param { name, kind });
    }
    let param_names: BTreeSet<String> = params.iter().map(|p| p.name.clone()).collect();
    let mut handlers = Vec::new();
    while cur.eat_kw("on") {
        handlers.push(parse_handler(cur, &param_names)?);
    }
    if !cur.eat_sym("}") {
        return cur.error(&["`on`", "`}`"]);
    }
    Ok(AppSpec {
        name,
        description,
        slots,
        params,
        handlers,
    })
}

fn parse_value(cur: &mut Cursor, params: &BTreeSet<String>) -> Result<Value, ParseError> {
    match cur.peek().clone() {
        Tok::Ident(s) => {
            cur.bump();
            Ok(if params.contains(&s) {
                Value::Param(s)
            } else {
                Value::Lit(s)
            })
        }
        Tok::Num(n) => {
            cur.bump();
            Ok(Value::Lit(n.to_string()))
        }
        Tok::Str(s) => {
            cur.bump();
            Ok(Value::Lit(s))
        }
        _ => cur.error(&["value"]),
    }
}

fn parse_delay(cur: &mut Cursor) -> Result<u32, ParseError> {
    let pos_err = cur.error::<u32>(&["non-negative tick count"]);
    let n = cur.number()?;
    u32::try_from(n).or(pos_err)
}

fn parse_handler(cur: &mut Cursor, params: &BTreeSet<String>) -> Result<Handler, ParseError> {
    let trigger = if cur.is_kw("touch") && !matches!(cur.peek_at(1), Tok::Sym(".")) {
        cur.bump();
        Trigger::Touch
    } else if cur.is_kw("callback") && !matches!(cur.peek_at(1), Tok::Sym(".")) {
        cur.bump();
        Trigger::Callback
    } else if cur.is_kw("schedule") && matches!(cur.peek_at(1), Tok::Sym("(")) {
        cur.bump();
        cur.bump();
        let period = parse_delay(cur)?;
        cur.expect_sym(")")?;
        Trigger::Schedule(period)
    } else {
        let slot = cur.ident()?;
        cur.expect_sym(".")?;
        let attr = cur.ident()?;
        let value = if cur.eat_sym("==") {
            Some(parse_value(cur, params)?)
        } else {
            None
        };
        Trigger::Subscribe { slot, attr, value }
    };
    let name = if cur.eat_kw("as") {
        cur.ident()?
    } else {
        match &trigger {
            Trigger::Touch => "appTouch".to_string(),
            Trigger::Schedule(n) => format!("schedule{n}"),
            Trigger::Subscribe { slot, .. } if slot == LOCATION_SLOT => {
                "changedLocationMode".to_string()
            }
            Trigger::Subscribe { slot, .. } => format!("{slot}Handler"),
            Trigger::Callback => return cur.error(&["`as` naming the callback"]),
        }
    };
    cur.expect_sym("{")?;
    let mut body = Vec::new();
    while !cur.eat_sym("}") {
        body.push(parse_stmt(cur, params)?);
    }
    Ok(Handler {
        name,
        trigger,
        body,
    })
}

fn parse_stmt(cur: &mut Cursor, params: &BTreeSet<String>) -> Result<Stmt, ParseError> {
    if cur.eat_sym("{") {
        let mut body = Vec::new();
        while !cur.eat_sym("}") {
            body.push(parse_stmt(cur, params)?);
        }
        return Ok(Stmt::Block(body));
    }
    let word = match cur.peek() {
        Tok::Ident(w) => w.clone(),
        _ => return cur.error(&["statement"]),
    };
    let followed_by_paren = matches!(cur.peek_at(1), Tok::Sym("("));
    if followed_by_paren {
        let keyword = ["if", "raise", "sms", "post", "unsubscribe", "runIn"];
        if keyword.contains(&word.as_str()) {
            cur.bump();
            cur.bump();
            let stmt = match word.as_str() {
                "if" => {
                    let cond = parse_cond(cur, false)?;
                    cur.expect_sym(")")?;
                    let then = parse_stmt(cur, params)?;
                    return Ok(Stmt::If(cond, Box::new(then)));
                }
                "raise" => {
                    let attr = cur.ident()?;
                    cur.expect_sym(",")?;
                    let value = parse_value(cur, params)?;
                    Stmt::Raise { attr, value }
                }
                "sms" => Stmt::Sms(parse_value(cur, params)?),
                "post" => Stmt::Post(cur.string()?),
                "unsubscribe" => Stmt::Unsubscribe(cur.ident()?),
                _ => {
                    let delay = parse_delay(cur)?;
                    cur.expect_sym(",")?;
                    let handler = cur.ident()?;
                    Stmt::RunIn { delay, handler }
                }
            };
            cur.expect_sym(")")?;
            cur.expect_sym(";")?;
            return Ok(stmt);
        }
    }
    let slot = cur.ident()?;
    cur.expect_sym(".")?;
    cur.expect_kw("set")?;
    cur.expect_sym("(")?;
    let attr = cur.ident()?;
    cur.expect_sym(",")?;
    let value = parse_value(cur, params)?;
    cur.expect_sym(")")?;
    cur.expect_sym(";")?;
    Ok(Stmt::Command { slot, attr, value })
}

fn check_value(
    app: &AppSpec,
    handler: &str,
    attr: &str,
    domain: &Domain,
    value: &Value,
) -> Result<(), ParseError> {
    let out_of_domain = |v: &str| ParseError::ValueOutOfDomain {
        handler: handler.to_string(),
        attribute: attr.to_string(),
        value: v.to_string(),
    };
    match value {
        Value::Lit(v) => match domain {
            Domain::Enum(_) if !domain.contains(v) => Err(out_of_domain(v)),
            Domain::Numeric(_) if v.parse::<i64>().is_err() => Err(out_of_domain(v)),
            _ => Ok(()),
        },
        Value::Param(p) => {
            let param = app.param(p).expect("parameters are resolved at parse time");
            match (&param.kind, domain) {
                (ParamKind::Enum(vs), Domain::Enum(_)) => {
                    match vs.iter().find(|v| !domain.contains(v)) {
                        Some(bad) => Err(out_of_domain(bad)),
                        None => Ok(()),
                    }
                }
                (ParamKind::Number(_), Domain::Numeric(_)) | (ParamKind::Enum(_), Domain::Modes) => {
                    Ok(())
                }
                _ => Err(ParseError::Invalid {
                    handler: handler.to_string(),
                    reason: format!("parameter `{p}` has the wrong kind for `{attr}`"),
                }),
            }
        }
    }
}

fn validate(app: &AppSpec, catalog: &CapabilityCatalog) -> Result<(), ParseError> {
    let mut seen = BTreeSet::new();
    for s in &app.slots {
        if s.name == LOCATION_SLOT || !seen.insert(s.name.as_str()) {
            return Err(ParseError::Duplicate {
                kind: "slot",
                name: s.name.clone(),
            });
        }
        catalog.require(&s.capability)?;
    }
    for p in &app.params {
        if seen.contains(p.name.as_str()) || !seen.insert(p.name.as_str()) {
            return Err(ParseError::Duplicate {
                kind: "param",
                name: p.name.clone(),
            });
        }
    }
    let mut names = BTreeSet::new();
    for h in &app.handlers {
        if !names.insert(h.name.as_str()) {
            return Err(ParseError::Duplicate {
                kind: "handler",
                name: h.name.clone(),
            });
        }
    }

    let slot_cap = |handler: &str, slot: &str| {
        let cap = app
            .slot_capability(slot)
            .ok_or_else(|| ParseError::UndeclaredSlot {
                handler: handler.to_string(),
                slot: slot.to_string(),
            })?;
        catalog.require(cap)
    };
    let attr_def = |handler: &str, slot: &str, attr: &str| {
        let cap = slot_cap(handler, slot)?;
        cap.attribute(attr)
            .map(|a| (cap, a))
            .ok_or_else(|| ParseError::UnknownAttribute {
                capability: cap.name.clone(),
                attribute: attr.to_string(),
            })
    };

    for h in &app.handlers {
        let hn = h.name.as_str();
        match &h.trigger {
            Trigger::Subscribe { slot, attr, value } => {
                let (cap, def) = attr_def(hn, slot, attr)?;
                if !cap.kind.is_subscribable() {
                    return Err(ParseError::Invalid {
                        handler: hn.to_string(),
                        reason: format!("cannot subscribe to `{}` devices", cap.name),
                    });
                }
                if let Some(v) = value {
                    check_value(app, hn, attr, &def.domain, v)?;
                }
            }
            Trigger::Schedule(0) => {
                return Err(ParseError::Invalid {
                    handler: hn.to_string(),
                    reason: "schedule period must be positive".into(),
                })
            }
            _ => {}
        }
        let mut result = Ok(());
        h.walk(|stmt| {
            if result.is_err() {
                return;
            }
            result = (|| -> Result<(), ParseError> {
                match stmt {
                    Stmt::If(cond, _) => {
                        for (a, _, b) in cond.comparisons() {
                            for (x, y) in [(a, b), (b, a)] {
                                if let Operand::Attr { target, attr, .. } = x {
                                    let (_, def) = attr_def(hn, target, attr)?;
                                    if let Operand::Name(n) = y {
                                        if app.param(n).is_none() {
                                            let v = Value::Lit(n.clone());
                                            check_value(app, hn, attr, &def.domain, &v)?;
                                        }
                                    }
                                }
                            }
                        }
                    }
                    Stmt::Command { slot, attr, value } => {
                        let (cap, def) = attr_def(hn, slot, attr)?;
                        if !cap.kind.is_commandable() {
                            return Err(ParseError::Invalid {
                                handler: hn.to_string(),
                                reason: format!("`{}` devices cannot be commanded", cap.name),
                            });
                        }
                        check_value(app, hn, attr, &def.domain, value)?;
                    }
                    Stmt::Raise { attr, value } => {
                        let target = app.slots.iter().find_map(|s| {
                            let cap = catalog.get(&s.capability)?;
                            let def = cap.attribute(attr)?;
                            cap.kind.is_external().then_some(def)
                        });
                        let def = target.ok_or_else(|| ParseError::Invalid {
                            handler: hn.to_string(),
                            reason: format!("no sensor slot reports `{attr}`"),
                        })?;
                        check_value(app, hn, attr, &def.domain, value)?;
                    }
                    Stmt::Unsubscribe(t) | Stmt::RunIn { handler: t, .. } => {
                        if app.handler(t).is_none() {
                            return Err(ParseError::UndeclaredHandler {
                                handler: hn.to_string(),
                                target: t.clone(),
                            });
                        }
                    }
                    Stmt::Block(_) | Stmt::Sms(_) | Stmt::Post(_) => {}
                }
                Ok(())
            })();
        });
        result?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const UNLOCK_DOOR: &str = r#"
        app UnlockDoor {
            description "Unlock Door"
            slot lock1: lock one
            on touch { lock1.set(lock, unlocked); }
            on location.mode { lock1.set(lock, unlocked); }
        }
    "#;

    #[test]
    fn default_handler_names() {
        let app = parse_app(UNLOCK_DOOR).unwrap();
        let names: Vec<_> = app.handlers.iter().map(|h| h.name.as_str()).collect();
        assert_eq!(names, ["appTouch", "changedLocationMode"]);
        assert_eq!(app.display_name(), "Unlock Door");
    }

    #[test]
    fn zero_handlers_is_valid() {
        let app = parse_app("app Inert { slot s: switch one }").unwrap();
        assert!(app.handlers.is_empty());
    }

    #[test]
    fn undeclared_slot_names_slot_and_handler() {
        let err = parse_app("app A { on touch as go { heater.set(switch, on); } }").unwrap_err();
        assert_eq!(
            err,
            ParseError::UndeclaredSlot {
                handler: "go".into(),
                slot: "heater".into()
            }
        );
    }

    #[test]
    fn params_resolve_and_identifiers_fall_back_to_literals() {
        let app = parse_app(
            r#"app A {
                slot p: presenceSensor many
                param newMode: enum { Home, Away }
                param phone: enum { alice }
                on p.presence { location.set(mode, newMode); sms(phone); sms("555"); }
            }"#,
        )
        .unwrap();
        let body = &app.handlers[0].body;
        assert_eq!(
            body[0],
            Stmt::Command {
                slot: "location".into(),
                attr: "mode".into(),
                value: Value::Param("newMode".into())
            }
        );
        assert_eq!(body[1], Stmt::Sms(Value::Param("phone".into())));
        assert_eq!(body[2], Stmt::Sms(Value::Lit("555".into())));
    }

    #[test]
    fn syntax_errors_carry_position_and_expectations() {
        let err = parse_app("app A {\n  slot s switch one }").unwrap_err();
        match err {
            ParseError::Syntax { pos, expected, .. } => {
                assert_eq!((pos.line, pos.col), (2, 10));
                assert_eq!(expected, vec!["`:`".to_string()]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn semantic_errors() {
        let cases = [
            ("app A { slot s: heater one }", "unknown capability"),
            ("app A { slot s: switch one on s.level { } }", "no attribute"),
            ("app A { slot s: switch one on touch { s.set(switch, dim); } }", "domain"),
            ("app A { slot s: motionSensor one on touch { s.set(motion, active); } }", "commanded"),
            ("app A { slot s: switch one slot s: lock one }", "duplicate slot"),
            ("app A { on touch { } on touch { } }", "duplicate handler"),
            ("app A { on touch { unsubscribe(nope); } }", "undeclared handler"),
            ("app A { slot s: switch one on touch { raise(smoke, detected); } }", "no sensor slot"),
            ("app A { slot c: contactSensor one on c.contact == ajar { } }", "domain"),
            ("app A { slot c: contactSensor one slot s: switch one on touch { if (c.contact == ajar) s.set(switch, on); } }", "domain"),
            ("app A { on callback { } }", "callback"),
            ("app A { on schedule(0) { } }", "positive"),
        ];
        for (src, needle) in cases {
            let err = parse_app(src).unwrap_err().to_string();
            assert!(err.contains(needle), "{src}: {err}");
        }
    }
}
