use std::fmt;

use crate::domain::{AttributeValue, CompareOp};

/// 1-based source position. Ignored by AST equality.
#[derive(Debug, Clone, Copy, Default)]
pub struct Pos {
    pub line: u32,
    pub col: u32,
}

impl PartialEq for Pos {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}

impl Eq for Pos {}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

/// `device.attribute`
#[derive(Debug, Clone, PartialEq)]
pub struct AttrRef {
    pub device: String,
    pub attribute: String,
    pub pos: Pos,
}

impl AttrRef {
    pub fn new(device: impl Into<String>, attribute: impl Into<String>) -> Self {
        AttrRef { device: device.into(), attribute: attribute.into(), pos: Pos::default() }
    }
}

impl fmt::Display for AttrRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.device, self.attribute)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(bool),
    /// A bare boolean attribute.
    Attr(AttrRef),
    Compare { left: AttrRef, op: CompareOp, right: AttributeValue },
    Not(Box<Expr>),
    And(Box<Expr>, Box<Expr>),
    Or(Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn negate(e: Expr) -> Expr {
        Expr::Not(Box::new(e))
    }

    pub fn and(a: Expr, b: Expr) -> Expr {
        Expr::And(Box::new(a), Box::new(b))
    }

    pub fn or(a: Expr, b: Expr) -> Expr {
        Expr::Or(Box::new(a), Box::new(b))
    }

    pub fn compare(left: AttrRef, op: CompareOp, right: AttributeValue) -> Expr {
        Expr::Compare { left, op, right }
    }

    /// Every attribute the expression reads.
    pub fn refs(&self) -> Vec<&AttrRef> {
        let mut out = Vec::new();
        self.collect_refs(&mut out);
        out
    }

    fn collect_refs<'a>(&'a self, out: &mut Vec<&'a AttrRef>) {
        match self {
            Expr::Const(_) => {}
            Expr::Attr(r) | Expr::Compare { left: r, .. } => out.push(r),
            Expr::Not(e) => e.collect_refs(out),
            Expr::And(a, b) | Expr::Or(a, b) => {
                a.collect_refs(out);
                b.collect_refs(out);
            }
        }
    }
}

/// `set device.attribute = literal`
#[derive(Debug, Clone, PartialEq)]
pub struct Action {
    pub target: AttrRef,
    pub value: AttributeValue,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RuleAst {
    pub name: String,
    pub condition: Expr,
    pub actions: Vec<Action>,
    pub enabled: bool,
    pub pos: Pos,
}
