use std::collections::{BTreeSet, HashSet};
use std::fmt;

use thiserror::Error;

use super::ast::{Action, AttrRef, Expr, Pos, RuleAst};
use super::lexer::{tokenize, LexError, Tok};
use crate::domain::{AttributeValue, CompareOp};

/// Syntax or lexical error with the set of tokens that would have been
/// accepted at `pos`.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub struct ParseError {
    pub pos: Pos,
    pub expected: BTreeSet<String>,
    pub found: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: ", self.pos)?;
        if self.expected.is_empty() {
            return f.write_str(&self.found);
        }
        let list: Vec<_> = self.expected.iter().map(String::as_str).collect();
        write!(f, "expected {}, found {}", list.join(" or "), self.found)
    }
}

impl From<LexError> for ParseError {
    fn from(e: LexError) -> Self {
        ParseError { pos: e.pos, expected: BTreeSet::new(), found: e.message }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RuleFileError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("{pos}: duplicate rule name `{name}`")]
    Duplicate { name: String, pos: Pos },
}

/// Parses text containing exactly one rule.
pub fn parse_rule(text: &str) -> Result<RuleAst, ParseError> {
    let mut p = Parser::new(text)?;
    let rule = p.rule()?;
    p.expect_eof()?;
    Ok(rule)
}

/// Parses a rule file; names must be unique.
pub fn parse_rules(text: &str) -> Result<Vec<RuleAst>, RuleFileError> {
    let mut p = Parser::new(text)?;
    let mut rules = Vec::new();
    let mut seen = HashSet::new();
    while !p.at(&Tok::Eof) {
        let rule = p.rule()?;
        if !seen.insert(rule.name.clone()) {
            return Err(RuleFileError::Duplicate { name: rule.name, pos: rule.pos });
        }
        rules.push(rule);
    }
    Ok(rules)
}

/// Parses a bare condition expression.
pub fn parse_expr(text: &str) -> Result<Expr, ParseError> {
    let mut p = Parser::new(text)?;
    let e = p.expr()?;
    p.expect_eof()?;
    Ok(e)
}

struct Parser {
    toks: Vec<(Tok, Pos)>,
    i: usize,
    /// Tokens tried without success at the current position.
    tried: BTreeSet<String>,
}

impl Parser {
    fn new(text: &str) -> Result<Self, ParseError> {
        Ok(Parser { toks: tokenize(text)?, i: 0, tried: BTreeSet::new() })
    }

    fn peek(&self) -> &Tok {
        &self.toks[self.i].0
    }

    fn pos(&self) -> Pos {
        self.toks[self.i].1
    }

    fn at(&self, t: &Tok) -> bool {
        std::mem::discriminant(self.peek()) == std::mem::discriminant(t)
    }

    fn advance(&mut self) -> Tok {
        let t = self.toks[self.i].0.clone();
        if self.i + 1 < self.toks.len() {
            self.i += 1;
        }
        self.tried.clear();
        t
    }

    fn eat(&mut self, t: &Tok) -> bool {
        if self.at(t) {
            self.advance();
            true
        } else {
            self.tried.insert(format!("`{}`", t.spelling()));
            false
        }
    }

    fn error(&mut self, also: &[&str]) -> ParseError {
        let mut expected = std::mem::take(&mut self.tried);
        expected.extend(also.iter().map(|s| s.to_string()));
        ParseError { pos: self.pos(), expected, found: self.peek().describe() }
    }

    fn expect(&mut self, t: &Tok) -> Result<(), ParseError> {
        if self.eat(t) {
            Ok(())
        } else {
            Err(self.error(&[]))
        }
    }

    fn expect_eof(&mut self) -> Result<(), ParseError> {
        self.expect(&Tok::Eof)
    }

    fn ident(&mut self) -> Result<String, ParseError> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.advance();
                Ok(s)
            }
            _ => Err(self.error(&["identifier"])),
        }
    }

    fn rule(&mut self) -> Result<RuleAst, ParseError> {
        let pos = self.pos();
        let enabled = !self.eat(&Tok::Disabled);
        self.expect(&Tok::Rule)?;
        let name = self.ident()?;
        self.expect(&Tok::Colon)?;
        self.expect(&Tok::When)?;
        let condition = self.expr()?;
        self.expect(&Tok::Then)?;
        let mut actions = vec![self.action()?];
        while self.eat(&Tok::Comma) {
            actions.push(self.action()?);
        }
        Ok(RuleAst { name, condition, actions, enabled, pos })
    }

    fn action(&mut self) -> Result<Action, ParseError> {
        self.expect(&Tok::Set)?;
        let target = self.attr_ref()?;
        self.expect(&Tok::Eq)?;
        let value = self.literal()?;
        Ok(Action { target, value })
    }

    fn attr_ref(&mut self) -> Result<AttrRef, ParseError> {
        let pos = self.pos();
        let device = self.ident()?;
        self.expect(&Tok::Dot)?;
        let attribute = self.ident()?;
        Ok(AttrRef { device, attribute, pos })
    }

    fn literal(&mut self) -> Result<AttributeValue, ParseError> {
        let v = match self.peek().clone() {
            Tok::True => AttributeValue::Bool(true),
            Tok::False => AttributeValue::Bool(false),
            Tok::Number(value, unit) => AttributeValue::Number { value, unit },
            Tok::Str(s) => AttributeValue::Text(s),
            _ => return Err(self.error(&["`true`", "`false`", "number", "string"])),
        };
        self.advance();
        Ok(v)
    }

    pub(crate) fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.conjunction()?;
        while self.eat(&Tok::Or) {
            let rhs = self.conjunction()?;
            lhs = Expr::or(lhs, rhs);
        }
        Ok(lhs)
    }

    fn conjunction(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        while self.eat(&Tok::And) {
            let rhs = self.unary()?;
            lhs = Expr::and(lhs, rhs);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.eat(&Tok::Not) {
            return Ok(Expr::negate(self.unary()?));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        match self.peek() {
            Tok::LParen => {
                self.advance();
                let e = self.expr()?;
                self.expect(&Tok::RParen)?;
                Ok(e)
            }
            Tok::True => {
                self.advance();
                Ok(Expr::Const(true))
            }
            Tok::False => {
                self.advance();
                Ok(Expr::Const(false))
            }
            Tok::Ident(_) => {
                let left = self.attr_ref()?;
                match self.compare_op() {
                    Some(op) => {
                        let right = self.literal()?;
                        Ok(Expr::Compare { left, op, right })
                    }
                    None => Ok(Expr::Attr(left)),
                }
            }
            _ => Err(self.error(&["`not`", "`(`", "`true`", "`false`", "identifier"])),
        }
    }

    fn compare_op(&mut self) -> Option<CompareOp> {
        let op = match self.peek() {
            Tok::Eq => CompareOp::Eq,
            Tok::Ne => CompareOp::Ne,
            Tok::Lt => CompareOp::Lt,
            Tok::Le => CompareOp::Le,
            Tok::Gt => CompareOp::Gt,
            Tok::Ge => CompareOp::Ge,
            _ => {
                for s in ["=", "!=", "<", "<=", ">", ">="] {
                    self.tried.insert(format!("`{s}`"));
                }
                return None;
            }
        };
        self.advance();
        Some(op)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Unit;

    fn r(d: &str, a: &str) -> AttrRef {
        AttrRef::new(d, a)
    }

    #[test]
    fn fire_rule_shape() {
        let rule = parse_rule(
            "rule fire: when fire_monitor.fire = true then set fire_sprinkler.on = true, \
             set siren.on = true, set window.open = true",
        )
        .unwrap();
        assert_eq!(rule.name, "fire");
        assert_eq!(rule.condition.refs().len(), 1);
        assert_eq!(rule.actions.len(), 3);
        assert!(rule.enabled);
        assert_eq!(rule.actions[2].target, r("window", "open"));
    }

    #[test]
    fn thermostat_rule_with_unit() {
        let rule = parse_rule("rule ac: when thermostat.temperature > 28.0C then set ac.on = true").unwrap();
        assert_eq!(
            rule.condition,
            Expr::compare(r("thermostat", "temperature"), CompareOp::Gt, AttributeValue::celsius(28.0))
        );
    }

    #[test]
    fn missing_then_reports_end_of_input() {
        let err = parse_rule("rule bad: when x.y > 5").unwrap_err();
        assert_eq!((err.pos.line, err.pos.col), (1, 23));
        assert!(err.expected.contains("`then`"), "{err}");
        assert_eq!(err.found, "end of input");
    }

    #[test]
    fn precedence_and_associativity() {
        let (a, b, c) = (Expr::Attr(r("a", "x")), Expr::Attr(r("b", "x")), Expr::Attr(r("c", "x")));
        assert_eq!(parse_expr("a.x and b.x or c.x").unwrap(), Expr::or(Expr::and(a.clone(), b.clone()), c.clone()));
        assert_eq!(parse_expr("a.x or b.x and c.x").unwrap(), Expr::or(a.clone(), Expr::and(b.clone(), c.clone())));
        assert_eq!(
            parse_expr("not a.x and b.x").unwrap(),
            Expr::and(Expr::negate(a.clone()), b.clone())
        );
        assert_eq!(parse_expr("a.x or b.x or c.x").unwrap(), Expr::or(Expr::or(a, b), c));
        assert_eq!(parse_expr("not (true)").unwrap(), Expr::negate(Expr::Const(true)));
    }

    #[test]
    fn rule_file_with_comments_and_duplicates() {
        let text = "# pack\nrule a: when true then set l.on = true\n\
                    disabled rule b: when w.level < 33% then set s.on = true # inline\n";
        let rules = parse_rules(text).unwrap();
        assert_eq!(rules.len(), 2);
        assert!(!rules[1].enabled);
        assert_eq!(
            rules[1].condition,
            Expr::compare(r("w", "level"), CompareOp::Lt, AttributeValue::number(33.0, Unit::Percent))
        );
        let dup = "rule a: when true then set l.on = true\nrule a: when true then set l.on = false";
        assert!(matches!(parse_rules(dup), Err(RuleFileError::Duplicate { name, .. }) if name == "a"));
    }

    #[test]
    fn error_positions() {
        let err = parse_rule("rule x: when a.b > then set l.on = true").unwrap_err();
        assert_eq!(err.pos.col, 20);
        assert!(err.expected.contains("number"));
        let err = parse_rule("rule x: when a.b then set l.on = 3kg").unwrap_err();
        assert!(err.expected.is_empty() && err.found.contains("unit"));
        assert!(parse_rule("rule x: when a then set l.on = true").is_err());
    }
}
