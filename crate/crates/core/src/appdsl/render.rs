use std::fmt::Write;

use super::*;
use crate::expr::quote;

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    chars
        .next()
        .is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

fn render_value(app: &AppSpec, v: &Value) -> String {
    match v {
        Value::Param(p) => p.clone(),
        Value::Lit(s) if s.parse::<i64>().is_ok() => s.clone(),
        Value::Lit(s) if is_ident(s) && app.param(s).is_none() => s.clone(),
        Value::Lit(s) => quote(s),
    }
}

fn render_stmt(app: &AppSpec, s: &Stmt, indent: usize, out: &mut String) {
    let pad = "    ".repeat(indent);
    match s {
        Stmt::If(cond, then) => {
            let _ = write!(out, "{pad}if ({cond}) ");
            render_inline(app, then, indent, out);
        }
        Stmt::Block(_) => {
            out.push_str(&pad);
            render_inline(app, s, indent, out);
        }
        _ => {
            let _ = writeln!(out, "{pad}{}", simple(app, s));
        }
    }
}

/// Renders a statement that continues the current line.
fn render_inline(app: &AppSpec, s: &Stmt, indent: usize, out: &mut String) {
    match s {
        Stmt::Block(ss) => {
            out.push_str("{\n");
            for x in ss {
                render_stmt(app, x, indent + 1, out);
            }
            let _ = writeln!(out, "{}}}", "    ".repeat(indent));
        }
        Stmt::If(cond, then) => {
            let _ = write!(out, "if ({cond}) ");
            render_inline(app, then, indent, out);
        }
        _ => {
            let _ = writeln!(out, "{}", simple(app, s));
        }
    }
}

fn simple(app: &AppSpec, s: &Stmt) -> String {
    match s {
        Stmt::Command { slot, attr, value } => {
            format!("{slot}.set({attr}, {});", render_value(app, value))
        }
        Stmt::Raise { attr, value } => format!("raise({attr}, {});", render_value(app, value)),
        Stmt::Sms(v) => format!("sms({});", render_value(app, v)),
        Stmt::Post(e) => format!("post({});", quote(e)),
        Stmt::Unsubscribe(h) => format!("unsubscribe({h});"),
        Stmt::RunIn { delay, handler } => format!("runIn({delay}, {handler});"),
        Stmt::If(..) | Stmt::Block(_) => unreachable!("compound statements are rendered by render_stmt"),
    }
}

/// Pretty-prints an app in canonical form. Handler names are always
/// written explicitly, so the output parses back to an equal [`AppSpec`].
pub fn render_app(app: &AppSpec) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "app {} {{", app.name);
    if let Some(d) = &app.description {
        let _ = writeln!(out, "    description {}", quote(d));
    }
    for s in &app.slots {
        let m = match s.multiplicity {
            Multiplicity::One => "one",
            Multiplicity::Many => "many",
        };
        let _ = writeln!(out, "    slot {}: {} {m}", s.name, s.capability);
    }
    for p in &app.params {
        match &p.kind {
            ParamKind::Number(ns) => {
                let vs: Vec<String> = ns.iter().map(|n| n.to_string()).collect();
                let _ = writeln!(out, "    param {}: number in {{ {} }}", p.name, vs.join(", "));
            }
            ParamKind::Enum(vs) => {
                let _ = writeln!(out, "    param {}: enum {{ {} }}", p.name, vs.join(", "));
            }
        }
    }
    for h in &app.handlers {
        let trigger = match &h.trigger {
            Trigger::Subscribe { slot, attr, value } => match value {
                Some(v) => format!("{slot}.{attr} == {}", render_value(app, v)),
                None => format!("{slot}.{attr}"),
            },
            Trigger::Schedule(n) => format!("schedule({n})"),
            Trigger::Touch => "touch".to_string(),
            Trigger::Callback => "callback".to_string(),
        };
        let _ = writeln!(out, "    on {trigger} as {} {{", h.name);
        for s in &h.body {
            render_stmt(app, s, 2, &mut out);
        }
        out.push_str("    }\n");
    }
    out.push_str("}\n");
    out
}
