use std::collections::BTreeMap;

use thiserror::Error;

use super::ast::{AttrRef, Expr, RuleAst};
use crate::domain::{compare_values, AttributeValue, DeviceId, ValueError};

/// Attribute values of every device at one virtual instant, plus the handle
/// → id mapping rules are resolved through.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WorldSnapshot {
    pub names: BTreeMap<String, DeviceId>,
    pub values: BTreeMap<(DeviceId, String), AttributeValue>,
}

impl WorldSnapshot {
    pub fn insert(&mut self, handle: &str, id: &DeviceId, attribute: &str, value: AttributeValue) {
        self.names.insert(handle.to_string(), id.clone());
        self.values.insert((id.clone(), attribute.to_string()), value);
    }

    pub fn id_of(&self, handle: &str) -> Option<&DeviceId> {
        self.names.get(handle)
    }

    pub fn lookup(&self, r: &AttrRef) -> Option<&AttributeValue> {
        let id = self.names.get(&r.device)?;
        self.values.get(&(id.clone(), r.attribute.clone()))
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EvalError {
    #[error("`{0}` is missing from the snapshot")]
    Missing(String),
    #[error("`{0}` is not boolean")]
    NotBoolean(String),
    #[error("{0}")]
    Type(#[from] ValueError),
}

/// Evaluates a condition with short-circuit `and`/`or`.
pub fn eval_condition(expr: &Expr, snap: &WorldSnapshot) -> Result<bool, EvalError> {
    match expr {
        Expr::Const(b) => Ok(*b),
        Expr::Attr(r) => match snap.lookup(r) {
            Some(AttributeValue::Bool(b)) => Ok(*b),
            Some(_) => Err(EvalError::NotBoolean(r.to_string())),
            None => Err(EvalError::Missing(r.to_string())),
        },
        Expr::Compare { left, op, right } => {
            let value = snap.lookup(left).ok_or_else(|| EvalError::Missing(left.to_string()))?;
            Ok(compare_values(value, right, *op)?)
        }
        Expr::Not(e) => Ok(!eval_condition(e, snap)?),
        Expr::And(a, b) => Ok(eval_condition(a, snap)? && eval_condition(b, snap)?),
        Expr::Or(a, b) => Ok(eval_condition(a, snap)? || eval_condition(b, snap)?),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RuleCommand {
    pub rule: String,
    pub device: DeviceId,
    pub attribute: String,
    pub value: AttributeValue,
}

/// An action overwritten by a later rule's write to the same attribute.
#[derive(Debug, Clone, PartialEq)]
pub struct Shadow {
    pub shadowed: RuleCommand,
    pub by_rule: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Evaluation {
    pub commands: Vec<RuleCommand>,
    pub shadowed: Vec<Shadow>,
    pub errors: Vec<(String, EvalError)>,
}

/// One level-triggered pass: every enabled rule whose condition holds emits
/// its actions, rules in order and actions in listed order. A later write to
/// the same `(device, attribute)` replaces the earlier one, which is reported
/// as shadowed. A rule that fails to evaluate is skipped and reported.
pub fn evaluate_all(rules: &[RuleAst], snap: &WorldSnapshot) -> Evaluation {
    let mut out = Evaluation::default();
    for rule in rules.iter().filter(|r| r.enabled) {
        match eval_condition(&rule.condition, snap) {
            Ok(false) => continue,
            Ok(true) => {}
            Err(e) => {
                out.errors.push((rule.name.clone(), e));
                continue;
            }
        }
        let resolved: Result<Vec<_>, _> = rule
            .actions
            .iter()
            .map(|a| {
                snap.id_of(&a.target.device)
                    .map(|id| RuleCommand {
                        rule: rule.name.clone(),
                        device: id.clone(),
                        attribute: a.target.attribute.clone(),
                        value: a.value.clone(),
                    })
                    .ok_or_else(|| EvalError::Missing(a.target.to_string()))
            })
            .collect();
        let commands = match resolved {
            Ok(c) => c,
            Err(e) => {
                out.errors.push((rule.name.clone(), e));
                continue;
            }
        };
        for cmd in commands {
            if let Some(i) =
                out.commands.iter().position(|c| c.device == cmd.device && c.attribute == cmd.attribute)
            {
                let shadowed = out.commands.remove(i);
                out.shadowed.push(Shadow { shadowed, by_rule: cmd.rule.clone() });
            }
            out.commands.push(cmd);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rules::{parse_expr, parse_rules};

    fn snap(pairs: &[(&str, &str, AttributeValue)]) -> WorldSnapshot {
        let mut s = WorldSnapshot::default();
        for (i, (h, a, v)) in pairs.iter().enumerate() {
            let id = s.id_of(h).cloned().unwrap_or_else(|| DeviceId::from_ordinal(i as u32 + 1));
            s.insert(h, &id, a, v.clone());
        }
        s
    }

    #[test]
    fn motion_condition() {
        let s = snap(&[("motion_detector", "motion", AttributeValue::Bool(true))]);
        assert!(eval_condition(&parse_expr("motion_detector.motion = true").unwrap(), &s).unwrap());
        assert!(!eval_condition(&parse_expr("not (true)").unwrap(), &s).unwrap());
    }

    #[test]
    fn missing_attribute_is_an_error() {
        let e = eval_condition(&parse_expr("ghost.on").unwrap(), &WorldSnapshot::default());
        assert_eq!(e, Err(EvalError::Missing("ghost.on".into())));
    }

    #[test]
    fn last_writer_wins() {
        let rules = parse_rules(
            "rule a: when true then set light.on = true\n\
             rule b: when true then set light.on = false",
        )
        .unwrap();
        let s = snap(&[("light", "on", AttributeValue::Bool(false))]);
        let ev = evaluate_all(&rules, &s);
        assert_eq!(ev.commands.len(), 1);
        assert_eq!(ev.commands[0].value, AttributeValue::Bool(false));
        assert_eq!(ev.shadowed.len(), 1);
        assert_eq!((ev.shadowed[0].shadowed.rule.as_str(), ev.shadowed[0].by_rule.as_str()), ("a", "b"));
    }

    #[test]
    fn failing_rule_is_skipped() {
        let rules = parse_rules(
            "rule a: when ghost.on then set light.on = true\n\
             rule b: when true then set light.on = true\n\
             disabled rule c: when true then set light.on = false",
        )
        .unwrap();
        let s = snap(&[("light", "on", AttributeValue::Bool(false))]);
        let ev = evaluate_all(&rules, &s);
        assert_eq!(ev.errors.len(), 1);
        assert_eq!(ev.commands.len(), 1);
        assert!(ev.shadowed.is_empty());
    }

    #[test]
    fn nothing_holds() {
        let rules = parse_rules("rule a: when false then set light.on = true").unwrap();
        assert!(evaluate_all(&rules, &WorldSnapshot::default()).commands.is_empty());
    }
}
