//! The condition/action rule language.
//!
//! ```text
//! rule fire_safety: when fire_monitor.fire = true or smoke_detector.smoke = true
//!     then set fire_sprinkler.on = true, set siren.on = true, set window.open = true
//! ```
//!
//! Devices are named by their rule handle (display name with whitespace
//! replaced by `_`). Precedence is `not` > `and` > `or`, both binary
//! connectives are left-associative, and numeric literals carry an optional
//! unit suffix (`C`, `%`, `ppm`). See `docs/GRAMMAR.md` for the full grammar.

mod ast;
mod check;
mod eval;
mod format;
mod lexer;
mod pack;
mod parser;

pub use ast::{Action, AttrRef, Expr, Pos, RuleAst};
pub use check::{typecheck_rule, DirectorySchema, TypeError, TypeErrorKind};
pub use eval::{eval_condition, evaluate_all, EvalError, Evaluation, RuleCommand, Shadow, WorldSnapshot};
pub use format::{format_expr, format_rule, format_rules};
pub use lexer::{LexError, KEYWORDS};
pub use pack::{companion_rules, standard_pack, LawnThresholds, STANDARD_PACK};
pub use parser::{parse_expr, parse_rule, parse_rules, ParseError, RuleFileError};
