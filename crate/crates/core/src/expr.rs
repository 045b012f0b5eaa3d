//! Boolean conditions over device attributes, the location mode, the clock,
//! app parameters and literals. Used by app guards and by property
//! predicates.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::ParseError;
use crate::lexer::{Cursor, Tok};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quant {
    Any,
    All,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Operand {
    /// `target.attr`: an app slot or a property role. `any`/`all` only appear
    /// in property predicates.
    Attr {
        quant: Option<Quant>,
        target: String,
        attr: String,
    },
    Mode,
    Clock,
    /// A bare identifier: a parameter reference if one is declared with this
    /// name, otherwise a symbolic literal.
    Name(String),
    Num(i64),
    Str(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }

    pub fn is_ordering(self) -> bool {
        !matches!(self, CmpOp::Eq | CmpOp::Ne)
    }

    pub fn eval<T: Ord + ?Sized>(self, a: &T, b: &T) -> bool {
        match self {
            CmpOp::Eq => a == b,
            CmpOp::Ne => a != b,
            CmpOp::Lt => a < b,
            CmpOp::Le => a <= b,
            CmpOp::Gt => a > b,
            CmpOp::Ge => a >= b,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Cond {
    Cmp(Operand, CmpOp, Operand),
    Not(Box<Cond>),
    And(Box<Cond>, Box<Cond>),
    Or(Box<Cond>, Box<Cond>),
}

impl Cond {
    /// Every operand in the condition, left to right.
    pub fn operands(&self) -> Vec<&Operand> {
        let mut out = Vec::new();
        self.collect(&mut out);
        out
    }

    fn collect<'a>(&'a self, out: &mut Vec<&'a Operand>) {
        match self {
            Cond::Cmp(a, _, b) => {
                out.push(a);
                out.push(b);
            }
            Cond::Not(c) => c.collect(out),
            Cond::And(a, b) | Cond::Or(a, b) => {
                a.collect(out);
                b.collect(out);
            }
        }
    }

    /// Comparisons in the condition, left to right.
    pub fn comparisons(&self) -> Vec<(&Operand, CmpOp, &Operand)> {
        let mut out = Vec::new();
        fn walk<'a>(c: &'a Cond, out: &mut Vec<(&'a Operand, CmpOp, &'a Operand)>) {
            match c {
                Cond::Cmp(a, op, b) => out.push((a, *op, b)),
                Cond::Not(x) => walk(x, out),
                Cond::And(a, b) | Cond::Or(a, b) => {
                    walk(a, out);
                    walk(b, out);
                }
            }
        }
        walk(self, &mut out);
        out
    }
}

pub(crate) fn parse_cond(cur: &mut Cursor, allow_quant: bool) -> Result<Cond, ParseError> {
    let mut lhs = parse_and(cur, allow_quant)?;
    while cur.eat_sym("||") {
        let rhs = parse_and(cur, allow_quant)?;
        lhs = Cond::Or(Box::new(lhs), Box::new(rhs));
    }
    Ok(lhs)
}

fn parse_and(cur: &mut Cursor, allow_quant: bool) -> Result<Cond, ParseError> {
    let mut lhs = parse_unary(cur, allow_quant)?;
    while cur.eat_sym("&&") {
        let rhs = parse_unary(cur, allow_quant)?;
        lhs = Cond::And(Box::new(lhs), Box::new(rhs));
    }
    Ok(lhs)
}

fn parse_unary(cur: &mut Cursor, allow_quant: bool) -> Result<Cond, ParseError> {
    if cur.eat_sym("!") {
        return Ok(Cond::Not(Box::new(parse_unary(cur, allow_quant)?)));
    }
    if cur.eat_sym("(") {
        let c = parse_cond(cur, allow_quant)?;
        cur.expect_sym(")")?;
        return Ok(c);
    }
    let lhs = parse_operand(cur, allow_quant)?;
    let op = match cur.peek() {
        Tok::Sym("==") => CmpOp::Eq,
        Tok::Sym("!=") => CmpOp::Ne,
        Tok::Sym("<") => CmpOp::Lt,
        Tok::Sym("<=") => CmpOp::Le,
        Tok::Sym(">") => CmpOp::Gt,
        Tok::Sym(">=") => CmpOp::Ge,
        _ => return cur.error(&["comparison operator"]),
    };
    cur.bump();
    let rhs = parse_operand(cur, allow_quant)?;
    Ok(Cond::Cmp(lhs, op, rhs))
}

fn parse_operand(cur: &mut Cursor, allow_quant: bool) -> Result<Operand, ParseError> {
    match cur.peek().clone() {
        Tok::Num(n) => {
            cur.bump();
            Ok(Operand::Num(n))
        }
        Tok::Str(s) => {
            cur.bump();
            Ok(Operand::Str(s))
        }
        Tok::Ident(word) => {
            let quant = match word.as_str() {
                "any" if allow_quant => Some(Quant::Any),
                "all" if allow_quant => Some(Quant::All),
                _ => None,
            };
            if quant.is_some() && matches!(cur.peek_at(1), Tok::Ident(_)) {
                cur.bump();
            }
            let target = cur.ident()?;
            if cur.eat_sym(".") {
                let attr = cur.ident()?;
                return Ok(Operand::Attr {
                    quant,
                    target,
                    attr,
                });
            }
            if quant.is_some() && target != word {
                return cur.error(&["`.`"]);
            }
            Ok(match target.as_str() {
                "mode" => Operand::Mode,
                "clock" => Operand::Clock,
                _ => Operand::Name(target),
            })
        }
        _ => cur.error(&["operand"]),
    }
}

/// Parses a complete condition from text (used for property predicates).
pub fn parse_condition(src: &str, allow_quant: bool) -> Result<Cond, ParseError> {
    let mut cur = Cursor::new(src)?;
    let c = parse_cond(&mut cur, allow_quant)?;
    if !cur.at_eof() {
        return cur.error(&["end of condition"]);
    }
    Ok(c)
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operand::Attr {
                quant,
                target,
                attr,
            } => {
                match quant {
                    Some(Quant::Any) => f.write_str("any ")?,
                    Some(Quant::All) => f.write_str("all ")?,
                    None => {}
                }
                write!(f, "{target}.{attr}")
            }
            Operand::Mode => f.write_str("mode"),
            Operand::Clock => f.write_str("clock"),
            Operand::Name(n) => f.write_str(n),
            Operand::Num(n) => write!(f, "{n}"),
            Operand::Str(s) => write!(f, "{}", quote(s)),
        }
    }
}

pub(crate) fn quote(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

// 0 = or, 1 = and, 2 = unary/atom
fn prec(c: &Cond) -> u8 {
    match c {
        Cond::Or(..) => 0,
        Cond::And(..) => 1,
        _ => 2,
    }
}

fn write_prec(c: &Cond, min: u8, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    if prec(c) < min {
        write!(f, "({c})")
    } else {
        write!(f, "{c}")
    }
}

impl fmt::Display for Cond {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cond::Cmp(a, op, b) => write!(f, "{a} {} {b}", op.symbol()),
            Cond::Not(c) => {
                f.write_str("!")?;
                match **c {
                    Cond::Not(_) => write!(f, "{c}"),
                    _ => write!(f, "({c})"),
                }
            }
            Cond::And(a, b) => {
                write_prec(a, 1, f)?;
                f.write_str(" && ")?;
                write_prec(b, 2, f)
            }
            Cond::Or(a, b) => {
                write_prec(a, 0, f)?;
                f.write_str(" || ")?;
                write_prec(b, 1, f)
            }
        }
    }
}
