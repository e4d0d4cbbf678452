use thiserror::Error;

use super::ast::Pos;
use crate::domain::Unit;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("{pos}: {message}")]
pub struct LexError {
    pub pos: Pos,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Tok {
    Ident(String),
    Number(f64, Unit),
    Str(String),
    Rule,
    Disabled,
    When,
    Then,
    Set,
    And,
    Or,
    Not,
    True,
    False,
    Colon,
    Comma,
    Dot,
    LParen,
    RParen,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    Eof,
}

impl Tok {
    pub(crate) fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Number(v, u) => format!("number `{v}{}`", u.suffix()),
            Tok::Str(s) => format!("string {s:?}"),
            Tok::Eof => "end of input".to_string(),
            other => format!("`{}`", other.spelling()),
        }
    }

    pub(crate) fn spelling(&self) -> &'static str {
        match self {
            Tok::Rule => "rule",
            Tok::Disabled => "disabled",
            Tok::When => "when",
            Tok::Then => "then",
            Tok::Set => "set",
            Tok::And => "and",
            Tok::Or => "or",
            Tok::Not => "not",
            Tok::True => "true",
            Tok::False => "false",
            Tok::Colon => ":",
            Tok::Comma => ",",
            Tok::Dot => ".",
            Tok::LParen => "(",
            Tok::RParen => ")",
            Tok::Eq => "=",
            Tok::Ne => "!=",
            Tok::Lt => "<",
            Tok::Le => "<=",
            Tok::Gt => ">",
            Tok::Ge => ">=",
            Tok::Ident(_) => "identifier",
            Tok::Number(..) => "number",
            Tok::Str(_) => "string",
            Tok::Eof => "end of input",
        }
    }
}

pub const KEYWORDS: &[&str] =
    &["rule", "disabled", "when", "then", "set", "and", "or", "not", "true", "false"];

fn keyword(word: &str) -> Option<Tok> {
    Some(match word {
        "rule" => Tok::Rule,
        "disabled" => Tok::Disabled,
        "when" => Tok::When,
        "then" => Tok::Then,
        "set" => Tok::Set,
        "and" => Tok::And,
        "or" => Tok::Or,
        "not" => Tok::Not,
        "true" => Tok::True,
        "false" => Tok::False,
        _ => return None,
    })
}

pub(crate) fn tokenize(src: &str) -> Result<Vec<(Tok, Pos)>, LexError> {
    Lexer { chars: src.chars().collect(), i: 0, line: 1, col: 1 }.run()
}

struct Lexer {
    chars: Vec<char>,
    i: usize,
    line: u32,
    col: u32,
}

impl Lexer {
    fn peek(&self) -> Option<char> {
        self.chars.get(self.i).copied()
    }

    fn peek_at(&self, k: usize) -> Option<char> {
        self.chars.get(self.i + k).copied()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.chars.get(self.i).copied()?;
        self.i += 1;
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn pos(&self) -> Pos {
        Pos { line: self.line, col: self.col }
    }

    fn err(&self, pos: Pos, message: impl Into<String>) -> LexError {
        LexError { pos, message: message.into() }
    }

    fn run(mut self) -> Result<Vec<(Tok, Pos)>, LexError> {
        let mut out = Vec::new();
        while let Some(c) = self.peek() {
            let pos = self.pos();
            match c {
                c if c.is_whitespace() => {
                    self.bump();
                }
                '#' => {
                    while self.peek().is_some_and(|c| c != '\n') {
                        self.bump();
                    }
                }
                ':' | ',' | '.' | '(' | ')' | '=' => {
                    self.bump();
                    let t = match c {
                        ':' => Tok::Colon,
                        ',' => Tok::Comma,
                        '.' => Tok::Dot,
                        '(' => Tok::LParen,
                        ')' => Tok::RParen,
                        _ => Tok::Eq,
                    };
                    out.push((t, pos));
                }
                '!' => {
                    self.bump();
                    if self.peek() != Some('=') {
                        return Err(self.err(pos, "expected `=` after `!`"));
                    }
                    self.bump();
                    out.push((Tok::Ne, pos));
                }
                '<' | '>' => {
                    self.bump();
                    let eq = self.peek() == Some('=');
                    if eq {
                        self.bump();
                    }
                    let t = match (c, eq) {
                        ('<', false) => Tok::Lt,
                        ('<', true) => Tok::Le,
                        ('>', false) => Tok::Gt,
                        _ => Tok::Ge,
                    };
                    out.push((t, pos));
                }
                '"' => out.push((self.string(pos)?, pos)),
                c if c.is_ascii_digit() || (c == '-' && self.peek_at(1).is_some_and(|d| d.is_ascii_digit())) => {
                    out.push((self.number(pos)?, pos));
                }
                c if c.is_ascii_alphabetic() || c == '_' => {
                    let word = self.word();
                    out.push((keyword(&word).unwrap_or(Tok::Ident(word)), pos));
                }
                other => return Err(self.err(pos, format!("unexpected character {other:?}"))),
            }
        }
        out.push((Tok::Eof, self.pos()));
        Ok(out)
    }

    fn word(&mut self) -> String {
        let mut s = String::new();
        while let Some(c) = self.peek().filter(|c| c.is_ascii_alphanumeric() || *c == '_') {
            s.push(c);
            self.bump();
        }
        s
    }

    fn number(&mut self, pos: Pos) -> Result<Tok, LexError> {
        let mut text = String::new();
        if self.peek() == Some('-') {
            text.push('-');
            self.bump();
        }
        while let Some(c) = self.peek().filter(char::is_ascii_digit) {
            text.push(c);
            self.bump();
        }
        // A `.` only belongs to the number when a digit follows.
        if self.peek() == Some('.') && self.peek_at(1).is_some_and(|d| d.is_ascii_digit()) {
            text.push('.');
            self.bump();
            while let Some(c) = self.peek().filter(char::is_ascii_digit) {
                text.push(c);
                self.bump();
            }
        }
        let value: f64 = text.parse().map_err(|_| self.err(pos, format!("bad number `{text}`")))?;
        let unit = if self.peek() == Some('%') {
            self.bump();
            Unit::Percent
        } else if self.peek().is_some_and(|c| c.is_ascii_alphabetic()) {
            let suffix_pos = self.pos();
            match self.word().as_str() {
                "C" => Unit::Celsius,
                "ppm" => Unit::Ppm,
                other => return Err(self.err(suffix_pos, format!("unknown unit suffix `{other}`"))),
            }
        } else {
            Unit::None
        };
        Ok(Tok::Number(value, unit))
    }

    fn string(&mut self, pos: Pos) -> Result<Tok, LexError> {
        self.bump();
        let mut s = String::new();
        loop {
            match self.bump() {
                None => return Err(self.err(pos, "unterminated string")),
                Some('"') => return Ok(Tok::Str(s)),
                Some('\\') => match self.bump() {
                    Some('"') => s.push('"'),
                    Some('\\') => s.push('\\'),
                    Some('n') => s.push('\n'),
                    Some('t') => s.push('\t'),
                    other => return Err(self.err(pos, format!("bad escape {other:?}"))),
                },
                Some(c) => s.push(c),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<Tok> {
        tokenize(s).unwrap().into_iter().map(|(t, _)| t).collect()
    }

    #[test]
    fn numbers_with_units() {
        assert_eq!(
            toks("28.0C 33% 200ppm -1.5 7"),
            vec![
                Tok::Number(28.0, Unit::Celsius),
                Tok::Number(33.0, Unit::Percent),
                Tok::Number(200.0, Unit::Ppm),
                Tok::Number(-1.5, Unit::None),
                Tok::Number(7.0, Unit::None),
                Tok::Eof
            ]
        );
        assert!(tokenize("5kg").is_err());
    }

    #[test]
    fn operators_and_comments() {
        assert_eq!(
            toks("a.b != 1 # trailing\n<= >= < > ="),
            vec![
                Tok::Ident("a".into()),
                Tok::Dot,
                Tok::Ident("b".into()),
                Tok::Ne,
                Tok::Number(1.0, Unit::None),
                Tok::Le,
                Tok::Ge,
                Tok::Lt,
                Tok::Gt,
                Tok::Eq,
                Tok::Eof
            ]
        );
    }

    #[test]
    fn strings_and_positions() {
        let t = tokenize("x\n  \"a\\\"b\"").unwrap();
        assert_eq!(t[1].0, Tok::Str("a\"b".into()));
        assert_eq!((t[1].1.line, t[1].1.col), (2, 3));
        assert!(tokenize("\"open").is_err());
        assert!(tokenize("a ! b").is_err());
    }
}
