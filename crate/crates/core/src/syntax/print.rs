use std::fmt::Write as _;

use super::parse::is_ident_continue;
use super::{Atom, Cq, Program, Rule, Signature, Term, Ucq};

/// True if `s` lexes as a single bare identifier.
pub fn is_bare_ident(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_alphanumeric() || c == '_' => chars.all(is_ident_continue),
        _ => false,
    }
}

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        if c == '"' || c == '\\' {
            out.push('\\');
        }
        out.push(c);
    }
    out.push('"');
    out
}

fn pred_name(s: &str) -> String {
    if is_bare_ident(s) && s != "true" {
        s.to_string()
    } else {
        quote(s)
    }
}

fn term_text(t: &Term) -> String {
    match t {
        Term::Var(v) => v.0.clone(),
        Term::Const(c) => {
            let first = c.0.chars().next().unwrap_or('a');
            if is_bare_ident(&c.0) && !(first.is_lowercase() || first == '_') {
                c.0.clone()
            } else {
                quote(&c.0)
            }
        }
        Term::Null(e) => e.to_string(),
    }
}

pub fn display_atom(sig: &Signature, atom: &Atom) -> String {
    let mut s = pred_name(sig.name(atom.pred));
    if !atom.args.is_empty() {
        s.push('(');
        for (i, t) in atom.args.iter().enumerate() {
            if i > 0 {
                s.push_str(", ");
            }
            s.push_str(&term_text(t));
        }
        s.push(')');
    }
    s
}

pub fn display_cq(sig: &Signature, cq: &Cq) -> String {
    let inner: Vec<String> = cq.atoms().iter().map(|a| display_atom(sig, a)).collect();
    format!("{{ {} }}", inner.join(", "))
}

pub fn write_rule(sig: &Signature, rule: &Rule) -> String {
    let body = if rule.body.is_empty() {
        "true".to_string()
    } else {
        rule.body.iter().map(|a| display_atom(sig, a)).collect::<Vec<_>>().join(", ")
    };
    let mut s = format!("{body} -> ");
    if !rule.existentials.is_empty() {
        let vs: Vec<&str> = rule.existentials.iter().map(|v| v.name()).collect();
        let _ = write!(s, "exists {}. ", vs.join(", "));
    }
    s.push_str(&display_atom(sig, &rule.head));
    s.push('.');
    s
}

pub fn write_program(program: &Program) -> String {
    let mut out = String::new();
    for r in &program.rules {
        out.push_str(&write_rule(&program.signature, r));
        out.push('\n');
    }
    out
}

/// Prints queries in the query language. A constant-false query has no
/// syntax of its own and is emitted as a comment.
pub fn write_queries(sig: &Signature, queries: &[Ucq]) -> String {
    let mut out = String::new();
    for q in queries {
        if q.is_false() {
            let _ = writeln!(out, "% query {} has no satisfiable disjunct", q.name);
            continue;
        }
        let parts: Vec<String> = q.disjuncts.iter().map(|d| display_cq(sig, d)).collect();
        let _ = writeln!(out, "query {} {} .", pred_name(&q.name), parts.join(" or "));
    }
    out
}
