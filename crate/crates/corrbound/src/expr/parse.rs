//! Recursive-descent parser with byte-position error reporting.

use super::{BinOp, Expression, Func, Node};
use thiserror::Error;

/// Syntax or name-resolution error, with the byte offset it occurred at.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("parse error at byte {position}: {message}")]
pub struct ParseError {
    pub position: usize,
    pub message: String,
}

impl ParseError {
    fn new(position: usize, message: impl Into<String>) -> Self {
        ParseError {
            position,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Number(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Number(v) => format!("number {v}"),
            Tok::Ident(s) => format!("identifier '{s}'"),
            Tok::Plus => "'+'".into(),
            Tok::Minus => "'-'".into(),
            Tok::Star => "'*'".into(),
            Tok::Slash => "'/'".into(),
            Tok::Caret => "'^'".into(),
            Tok::LParen => "'('".into(),
            Tok::RParen => "')'".into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

fn lex(text: &str) -> Result<Vec<(Tok, usize)>, ParseError> {
    let bytes = text.as_bytes();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        match c {
            ' ' | '\t' | '\n' | '\r' => i += 1,
            '+' => {
                toks.push((Tok::Plus, i));
                i += 1;
            }
            '-' => {
                toks.push((Tok::Minus, i));
                i += 1;
            }
            '*' => {
                toks.push((Tok::Star, i));
                i += 1;
            }
            '/' => {
                toks.push((Tok::Slash, i));
                i += 1;
            }
            '^' => {
                toks.push((Tok::Caret, i));
                i += 1;
            }
            '(' => {
                toks.push((Tok::LParen, i));
                i += 1;
            }
            ')' => {
                toks.push((Tok::RParen, i));
                i += 1;
            }
            '0'..='9' | '.' => {
                let start = i;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                if i < bytes.len() && bytes[i] == b'.' {
                    i += 1;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        i = j;
                        while i < bytes.len() && bytes[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let slice = &text[start..i];
                let value: f64 = slice
                    .parse()
                    .map_err(|_| ParseError::new(start, format!("invalid number '{slice}'")))?;
                toks.push((Tok::Number(value), start));
            }
            'a'..='z' | 'A'..='Z' | '_' => {
                let start = i;
                while i < bytes.len()
                    && ((bytes[i] as char).is_ascii_alphanumeric() || bytes[i] == b'_')
                {
                    i += 1;
                }
                toks.push((Tok::Ident(text[start..i].to_string()), start));
            }
            _ => return Err(ParseError::new(i, format!("unexpected character '{c}'"))),
        }
    }
    toks.push((Tok::Eof, bytes.len()));
    Ok(toks)
}

struct Parser<'a> {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    r: usize,
    macros: &'a [Expression],
}

pub(super) fn parse(text: &str, r: usize, macros: &[Expression]) -> Result<Node, ParseError> {
    assert!(r >= 1, "system dimension r must be at least 1");
    let toks = lex(text)?;
    let mut p = Parser {
        toks,
        pos: 0,
        r,
        macros,
    };
    let node = p.expr()?;
    let (tok, at) = p.peek();
    if !matches!(tok, Tok::Eof) {
        return Err(ParseError::new(
            at,
            format!("expected operator or end of input, found {}", tok.describe()),
        ));
    }
    Ok(node)
}

impl Parser<'_> {
    fn peek(&self) -> (&Tok, usize) {
        let (t, at) = &self.toks[self.pos];
        (t, *at)
    }

    fn bump(&mut self) -> (Tok, usize) {
        let out = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        out
    }

    fn expr(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek().0 {
                Tok::Plus => {
                    self.bump();
                    let rhs = self.term()?;
                    lhs = Node::Bin(BinOp::Add, Box::new(lhs), Box::new(rhs));
                }
                Tok::Minus => {
                    self.bump();
                    let rhs = self.term()?;
                    lhs = Node::Bin(BinOp::Sub, Box::new(lhs), Box::new(rhs));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek().0 {
                Tok::Star => {
                    self.bump();
                    let rhs = self.unary()?;
                    lhs = Node::Bin(BinOp::Mul, Box::new(lhs), Box::new(rhs));
                }
                Tok::Slash => {
                    self.bump();
                    let rhs = self.unary()?;
                    lhs = Node::Bin(BinOp::Div, Box::new(lhs), Box::new(rhs));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Node, ParseError> {
        if matches!(self.peek().0, Tok::Minus) {
            self.bump();
            let inner = self.unary()?;
            return Ok(Node::Neg(Box::new(inner)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node, ParseError> {
        let base = self.atom()?;
        if matches!(self.peek().0, Tok::Caret) {
            self.bump();
            // right-associative; exponent may carry a unary minus
            let exponent = self.unary()?;
            return Ok(Node::Bin(BinOp::Pow, Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node, ParseError> {
        let (tok, at) = self.bump();
        match tok {
            Tok::Number(v) => Ok(Node::Literal(v)),
            Tok::LParen => {
                let inner = self.expr()?;
                let (tok, at) = self.bump();
                if !matches!(tok, Tok::RParen) {
                    return Err(ParseError::new(
                        at,
                        format!("expected ')', found {}", tok.describe()),
                    ));
                }
                Ok(inner)
            }
            Tok::Ident(name) => self.resolve_ident(&name, at),
            other => Err(ParseError::new(
                at,
                format!(
                    "expected a number, variable, function or '(', found {}",
                    other.describe()
                ),
            )),
        }
    }

    fn resolve_ident(&mut self, name: &str, at: usize) -> Result<Node, ParseError> {
        let func = match name {
            "sin" => Some(Func::Sin),
            "cos" => Some(Func::Cos),
            "exp" => Some(Func::Exp),
            "sqrt" => Some(Func::Sqrt),
            "ln" => Some(Func::Ln),
            _ => None,
        };
        if let Some(func) = func {
            let (tok, pat) = self.bump();
            if !matches!(tok, Tok::LParen) {
                return Err(ParseError::new(
                    pat,
                    format!("expected '(' after '{name}', found {}", tok.describe()),
                ));
            }
            let arg = self.expr()?;
            let (tok, pat) = self.bump();
            if !matches!(tok, Tok::RParen) {
                return Err(ParseError::new(
                    pat,
                    format!("expected ')', found {}", tok.describe()),
                ));
            }
            return Ok(Node::Call(func, Box::new(arg)));
        }

        if let Some(index) = parse_indexed(name, 'q') {
            return self.check_index(index, at, name).map(Node::Q);
        }
        if let Some(index) = parse_indexed(name, 'p') {
            return self.check_index(index, at, name).map(Node::P);
        }
        if let Some(index) = parse_indexed(name, 'H') {
            if self.macros.is_empty() {
                return Err(ParseError::new(
                    at,
                    format!("'{name}' refers to a conserved quantity, but no system context is available here"),
                ));
            }
            if index == 0 || index > self.macros.len() {
                return Err(ParseError::new(
                    at,
                    format!(
                        "conserved-quantity index out of range: '{name}' but the system declares H1..H{}",
                        self.macros.len()
                    ),
                ));
            }
            return Ok(self.macros[index - 1].root().clone());
        }
        Err(ParseError::new(at, format!("unknown identifier '{name}'")))
    }

    fn check_index(&self, index: usize, at: usize, name: &str) -> Result<usize, ParseError> {
        if index == 0 || index > self.r {
            return Err(ParseError::new(
                at,
                format!(
                    "variable index out of range: '{name}' but the system has r = {}",
                    self.r
                ),
            ));
        }
        Ok(index - 1)
    }
}

/// `q12` -> Some(12) for prefix 'q'; None if the shape does not match.
fn parse_indexed(name: &str, prefix: char) -> Option<usize> {
    let rest = name.strip_prefix(prefix)?;
    if rest.is_empty() || !rest.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    rest.parse().ok()
}
