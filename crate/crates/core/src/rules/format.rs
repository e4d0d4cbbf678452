use std::fmt::Write as _;

use super::ast::{Expr, RuleAst};
use crate::domain::AttributeValue;

fn precedence(e: &Expr) -> u8 {
    match e {
        Expr::Or(..) => 1,
        Expr::And(..) => 2,
        Expr::Not(_) => 3,
        _ => 4,
    }
}

fn literal(v: &AttributeValue, out: &mut String) {
    match v {
        AttributeValue::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        AttributeValue::Number { value, unit } => {
            // `{}` on f64 prints the shortest string that parses back exactly.
            let mut s = format!("{value}");
            if !s.contains('.') {
                s.push_str(".0");
            }
            out.push_str(&s);
            out.push_str(unit.suffix());
        }
        AttributeValue::Text(s) => {
            out.push('"');
            for c in s.chars() {
                match c {
                    '"' => out.push_str("\\\""),
                    '\\' => out.push_str("\\\\"),
                    '\n' => out.push_str("\\n"),
                    '\t' => out.push_str("\\t"),
                    c => out.push(c),
                }
            }
            out.push('"');
        }
    }
}

fn child(e: &Expr, parens: bool, out: &mut String) {
    if parens {
        out.push('(');
        expr(e, out);
        out.push(')');
    } else {
        expr(e, out);
    }
}

fn expr(e: &Expr, out: &mut String) {
    let p = precedence(e);
    match e {
        Expr::Const(b) => out.push_str(if *b { "true" } else { "false" }),
        Expr::Attr(r) => {
            let _ = write!(out, "{r}");
        }
        Expr::Compare { left, op, right } => {
            let _ = write!(out, "{left} {op} ");
            literal(right, out);
        }
        Expr::Not(inner) => {
            out.push_str("not ");
            child(inner, precedence(inner) < p, out);
        }
        Expr::And(a, b) | Expr::Or(a, b) => {
            // Left-associative: the right operand needs parentheses at equal
            // precedence, the left one only at lower precedence.
            child(a, precedence(a) < p, out);
            out.push_str(if p == 1 { " or " } else { " and " });
            child(b, precedence(b) <= p, out);
        }
    }
}

/// Canonical condition text with minimal parentheses.
pub fn format_expr(e: &Expr) -> String {
    let mut out = String::new();
    expr(e, &mut out);
    out
}

/// Canonical single-line rule text; `parse_rule(format_rule(r)) == r`.
pub fn format_rule(rule: &RuleAst) -> String {
    let mut out = String::new();
    if !rule.enabled {
        out.push_str("disabled ");
    }
    let _ = write!(out, "rule {}: when ", rule.name);
    expr(&rule.condition, &mut out);
    out.push_str(" then ");
    for (i, a) in rule.actions.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        let _ = write!(out, "set {} = ", a.target);
        literal(&a.value, &mut out);
    }
    out
}

/// One rule per line.
pub fn format_rules(rules: &[RuleAst]) -> String {
    rules.iter().map(|r| format_rule(r) + "\n").collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rules::{parse_expr, parse_rule};

    fn canon(s: &str) -> String {
        format_expr(&parse_expr(s).unwrap())
    }

    #[test]
    fn minimal_parentheses() {
        assert_eq!(canon("((a.x and b.x) or c.x)"), "a.x and b.x or c.x");
        assert_eq!(canon("a.x and (b.x or c.x)"), "a.x and (b.x or c.x)");
        assert_eq!(canon("not (a.x and not (b.x))"), "not (a.x and not b.x)");
        assert_eq!(canon("a.x or (b.x or c.x)"), "a.x or (b.x or c.x)");
        assert_eq!(canon("(a.x or b.x) or c.x"), "a.x or b.x or c.x");
        assert_eq!(canon("not not a.x"), "not not a.x");
    }

    #[test]
    fn nested_forms_reparse_equal() {
        for s in [
            "not (a.x or b.x) and (c.x or not d.x)",
            "(a.x or b.x) and (c.x or d.x) or not (a.x and b.x)",
            "not (not a.x = true or b.n >= -2.5C)",
        ] {
            let e = parse_expr(s).unwrap();
            assert_eq!(parse_expr(&format_expr(&e)).unwrap(), e, "{s}");
        }
    }

    #[test]
    fn rule_text_is_stable() {
        let text = "rule ac: when thermostat.temperature > 28C then set ac.on = true, set note.x = \"a\\\"b\"";
        let once = format_rule(&parse_rule(text).unwrap());
        assert_eq!(once, "rule ac: when thermostat.temperature > 28.0C then set ac.on = true, set note.x = \"a\\\"b\"");
        assert_eq!(format_rule(&parse_rule(&once).unwrap()), once);
    }
}
