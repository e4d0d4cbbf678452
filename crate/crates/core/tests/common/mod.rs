#![allow(dead_code)]

use hearth_core::domain::{AttributeValue, CompareOp, Unit};
use hearth_core::rules::{Action, AttrRef, Expr, RuleAst, KEYWORDS, Pos};
use proptest::prelude::*;

pub fn ident() -> impl Strategy<Value = String> {
    "[a-z_][a-z0-9_]{0,8}".prop_filter("keyword", |s| !KEYWORDS.contains(&s.as_str()))
}

pub fn attr_ref() -> impl Strategy<Value = AttrRef> {
    (ident(), ident()).prop_map(|(d, a)| AttrRef::new(d, a))
}

pub fn unit() -> impl Strategy<Value = Unit> {
    prop_oneof![Just(Unit::Celsius), Just(Unit::Percent), Just(Unit::Ppm), Just(Unit::None)]
}

pub fn literal() -> impl Strategy<Value = AttributeValue> {
    prop_oneof![
        any::<bool>().prop_map(AttributeValue::Bool),
        (any::<f64>().prop_filter("finite", |v| v.is_finite()), unit())
            .prop_map(|(value, unit)| AttributeValue::Number { value, unit }),
        (-1000i32..1000, unit()).prop_map(|(v, unit)| AttributeValue::Number { value: v as f64 / 4.0, unit }),
        "[ -~]{0,6}".prop_map(AttributeValue::Text),
        "[a\\\\\"\n\t]{0,4}".prop_map(AttributeValue::Text),
    ]
}

pub fn compare_op() -> impl Strategy<Value = CompareOp> {
    prop_oneof![
        Just(CompareOp::Eq),
        Just(CompareOp::Ne),
        Just(CompareOp::Lt),
        Just(CompareOp::Le),
        Just(CompareOp::Gt),
        Just(CompareOp::Ge),
    ]
}

/// Arbitrary conditions; no type discipline, the parser does not need one.
pub fn expr() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        any::<bool>().prop_map(Expr::Const),
        attr_ref().prop_map(Expr::Attr),
        (attr_ref(), compare_op(), literal()).prop_map(|(l, op, r)| Expr::compare(l, op, r)),
    ];
    leaf.prop_recursive(5, 40, 2, |inner| {
        prop_oneof![
            inner.clone().prop_map(Expr::negate),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::and(a, b)),
            (inner.clone(), inner).prop_map(|(a, b)| Expr::or(a, b)),
        ]
    })
}

pub fn rule() -> impl Strategy<Value = RuleAst> {
    (ident(), expr(), prop::collection::vec((attr_ref(), literal()), 1..4), any::<bool>()).prop_map(
        |(name, condition, actions, enabled)| RuleAst {
            name,
            condition,
            actions: actions.into_iter().map(|(target, value)| Action { target, value }).collect(),
            enabled,
            pos: Pos::default(),
        },
    )
}

/// The four boolean attributes truth tables range over.
pub const VARS: [&str; 4] = ["a", "b", "c", "d"];

/// Conditions over `VARS[i].x`, bare or compared with a boolean literal.
pub fn bool_expr() -> impl Strategy<Value = Expr> {
    let var = (0..4usize).prop_map(|i| AttrRef::new(VARS[i], "x"));
    let leaf = prop_oneof![
        any::<bool>().prop_map(Expr::Const),
        var.clone().prop_map(Expr::Attr),
        (var, prop_oneof![Just(CompareOp::Eq), Just(CompareOp::Ne)], any::<bool>())
            .prop_map(|(l, op, b)| Expr::compare(l, op, AttributeValue::Bool(b))),
    ];
    leaf.prop_recursive(6, 64, 2, |inner| {
        prop_oneof![
            inner.clone().prop_map(Expr::negate),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::and(a, b)),
            (inner.clone(), inner).prop_map(|(a, b)| Expr::or(a, b)),
        ]
    })
}

/// Bit-parallel truth table: bit `k` is the value under assignment `k`,
/// where variable `i` is bit `i` of `k`.
pub fn truth_table(e: &Expr) -> u16 {
    const MASKS: [u16; 4] = [0xAAAA, 0xCCCC, 0xF0F0, 0xFF00];
    let var = |r: &AttrRef| MASKS[VARS.iter().position(|v| *v == r.device).expect("known variable")];
    match e {
        Expr::Const(b) => if *b { 0xFFFF } else { 0 },
        Expr::Attr(r) => var(r),
        Expr::Compare { left, op, right: AttributeValue::Bool(b) } => {
            let m = if *b { var(left) } else { !var(left) };
            match op {
                CompareOp::Eq => m,
                CompareOp::Ne => !m,
                _ => panic!("ordering on booleans"),
            }
        }
        Expr::Compare { .. } => panic!("non-boolean literal"),
        Expr::Not(a) => !truth_table(a),
        Expr::And(a, b) => truth_table(a) & truth_table(b),
        Expr::Or(a, b) => truth_table(a) | truth_table(b),
    }
}

/// Every condition of depth at most `depth` over `VARS` built from
/// constants, bare attributes, `not`, `and` and `or`.
pub fn all_exprs(depth: u32) -> Vec<Expr> {
    let mut level: Vec<Expr> = vec![Expr::Const(false), Expr::Const(true)];
    level.extend(VARS.iter().map(|v| Expr::Attr(AttrRef::new(*v, "x"))));
    let leaves = level.clone();
    for _ in 0..depth {
        let mut next = leaves.clone();
        next.extend(level.iter().cloned().map(Expr::negate));
        for a in &level {
            for b in &level {
                next.push(Expr::and(a.clone(), b.clone()));
                next.push(Expr::or(a.clone(), b.clone()));
            }
        }
        level = next;
    }
    level
}
