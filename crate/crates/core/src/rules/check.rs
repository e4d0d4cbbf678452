use std::collections::BTreeMap;

use thiserror::Error;

use super::ast::{AttrRef, Expr, Pos, RuleAst};
use crate::domain::{check_comparison, Access, AttrSpec, DeviceDescriptor, DeviceKind, ValueError, ValueType};

/// Rule handle → device kind for every device rules may mention.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DirectorySchema {
    pub devices: BTreeMap<String, DeviceKind>,
}

impl DirectorySchema {
    pub fn from_descriptors<'a>(descriptors: impl IntoIterator<Item = &'a DeviceDescriptor>) -> Self {
        DirectorySchema { devices: descriptors.into_iter().map(|d| (d.handle(), d.kind)).collect() }
    }

    pub fn insert(&mut self, handle: impl Into<String>, kind: DeviceKind) {
        self.devices.insert(handle.into(), kind);
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TypeErrorKind {
    #[error("unknown device `{0}`")]
    UnknownDevice(String),
    #[error("{kind} has no attribute `{attribute}`")]
    UnknownAttribute { kind: DeviceKind, attribute: String },
    #[error("{0}")]
    Comparison(ValueError),
    #[error("`{0}` is not boolean and cannot stand alone as a condition")]
    NotBoolean(String),
    #[error("`{0}` is not writable")]
    NotWritable(String),
    #[error("`{target}` expects {expected}, got {found}")]
    ActionType { target: String, expected: ValueType, found: ValueType },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("rule `{rule}` at {pos}: {kind}")]
pub struct TypeError {
    pub rule: String,
    pub pos: Pos,
    pub kind: TypeErrorKind,
}

/// Resolves every reference and checks operand types and action targets.
/// Reports all problems found, not just the first.
pub fn typecheck_rule(rule: &RuleAst, schema: &DirectorySchema) -> Result<(), Vec<TypeError>> {
    let mut errors = Vec::new();
    let mut report = |pos: Pos, kind: TypeErrorKind| {
        errors.push(TypeError { rule: rule.name.clone(), pos, kind });
    };
    check_expr(&rule.condition, schema, &mut report);
    for action in &rule.actions {
        let Some(spec) = resolve(&action.target, schema, &mut report) else { continue };
        if spec.access != Access::Writable {
            report(action.target.pos, TypeErrorKind::NotWritable(action.target.to_string()));
        } else if spec.ty != action.value.value_type() {
            report(
                action.target.pos,
                TypeErrorKind::ActionType {
                    target: action.target.to_string(),
                    expected: spec.ty,
                    found: action.value.value_type(),
                },
            );
        }
    }
    if errors.is_empty() {
        Ok(())
    } else {
        Err(errors)
    }
}

fn resolve(
    r: &AttrRef,
    schema: &DirectorySchema,
    report: &mut impl FnMut(Pos, TypeErrorKind),
) -> Option<&'static AttrSpec> {
    let Some(kind) = schema.devices.get(&r.device) else {
        report(r.pos, TypeErrorKind::UnknownDevice(r.device.clone()));
        return None;
    };
    let spec = kind.attr(&r.attribute);
    if spec.is_none() {
        report(r.pos, TypeErrorKind::UnknownAttribute { kind: *kind, attribute: r.attribute.clone() });
    }
    spec
}

fn check_expr(e: &Expr, schema: &DirectorySchema, report: &mut impl FnMut(Pos, TypeErrorKind)) {
    match e {
        Expr::Const(_) => {}
        Expr::Attr(r) => {
            if let Some(spec) = resolve(r, schema, report) {
                if spec.ty != ValueType::Bool {
                    report(r.pos, TypeErrorKind::NotBoolean(r.to_string()));
                }
            }
        }
        Expr::Compare { left, op, right } => {
            if let Some(spec) = resolve(left, schema, report) {
                if let Err(err) = check_comparison(spec.ty, right.value_type(), *op) {
                    report(left.pos, TypeErrorKind::Comparison(err));
                }
            }
        }
        Expr::Not(inner) => check_expr(inner, schema, report),
        Expr::And(a, b) | Expr::Or(a, b) => {
            check_expr(a, schema, report);
            check_expr(b, schema, report);
        }
    }
}
