//! Minimal s-expression reader shared by the property and witness parsers.
//!
//! Atoms are maximal runs of characters other than whitespace, parentheses
//! and `;`. A `;` starts a comment that runs to the end of the line.

use std::fmt;

use crate::error::{Error, Pos, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum SExpr {
    Atom { text: String, pos: Pos },
    List { items: Vec<SExpr>, pos: Pos },
}

impl SExpr {
    pub fn pos(&self) -> Pos {
        match self {
            SExpr::Atom { pos, .. } | SExpr::List { pos, .. } => *pos,
        }
    }

    pub fn as_atom(&self) -> Option<&str> {
        match self {
            SExpr::Atom { text, .. } => Some(text),
            SExpr::List { .. } => None,
        }
    }

    pub fn as_list(&self) -> Option<&[SExpr]> {
        match self {
            SExpr::List { items, .. } => Some(items),
            SExpr::Atom { .. } => None,
        }
    }

    /// Head symbol of a non-empty list whose first item is an atom.
    pub fn head(&self) -> Option<&str> {
        self.as_list()?.first()?.as_atom()
    }
}

impl fmt::Display for SExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SExpr::Atom { text, .. } => f.write_str(text),
            SExpr::List { items, .. } => {
                f.write_str("(")?;
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" ")?;
                    }
                    write!(f, "{item}")?;
                }
                f.write_str(")")
            }
        }
    }
}

struct Cursor<'a> {
    chars: std::iter::Peekable<std::str::Chars<'a>>,
    pos: Pos,
}

impl<'a> Cursor<'a> {
    fn new(text: &'a str) -> Self {
        Cursor {
            chars: text.chars().peekable(),
            pos: Pos { line: 1, col: 1 },
        }
    }

    fn peek(&mut self) -> Option<char> {
        self.chars.peek().copied()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.chars.next()?;
        if c == '\n' {
            self.pos.line += 1;
            self.pos.col = 1;
        } else {
            self.pos.col += 1;
        }
        Some(c)
    }

    fn skip_trivia(&mut self) {
        while let Some(c) = self.peek() {
            if c == ';' {
                while let Some(c) = self.bump() {
                    if c == '\n' {
                        break;
                    }
                }
            } else if c.is_whitespace() {
                self.bump();
            } else {
                break;
            }
        }
    }
}

fn is_atom_char(c: char) -> bool {
    !(c.is_whitespace() || c == '(' || c == ')' || c == ';')
}

/// Reads every top-level s-expression in `text`.
pub fn parse_sexprs(text: &str) -> Result<Vec<SExpr>> {
    let mut cur = Cursor::new(text);
    // Stack of open lists: (start position, items so far).
    let mut stack: Vec<(Pos, Vec<SExpr>)> = Vec::new();
    let mut top = Vec::new();

    loop {
        cur.skip_trivia();
        let pos = cur.pos;
        let Some(c) = cur.peek() else { break };
        let finished = match c {
            '(' => {
                cur.bump();
                stack.push((pos, Vec::new()));
                None
            }
            ')' => {
                cur.bump();
                let Some((start, items)) = stack.pop() else {
                    return Err(Error::syntax(pos, "unexpected ')'"));
                };
                Some(SExpr::List { items, pos: start })
            }
            _ => {
                let mut text = String::new();
                while let Some(c) = cur.peek() {
                    if !is_atom_char(c) {
                        break;
                    }
                    text.push(c);
                    cur.bump();
                }
                Some(SExpr::Atom { text, pos })
            }
        };
        if let Some(expr) = finished {
            match stack.last_mut() {
                Some((_, items)) => items.push(expr),
                None => top.push(expr),
            }
        }
    }

    if let Some((start, _)) = stack.last() {
        return Err(Error::syntax(*start, "unclosed '('"));
    }
    Ok(top)
}

/// Parses a real literal: decimal or scientific notation with an optional
/// sign. Special values such as `inf` or `nan` are rejected.
pub fn parse_real(text: &str) -> Option<f64> {
    let body = text.strip_prefix(['-', '+']).unwrap_or(text);
    let mut chars = body.chars();
    let first = chars.next()?;
    if !(first.is_ascii_digit() || first == '.') {
        return None;
    }
    if !body
        .chars()
        .all(|c| c.is_ascii_digit() || matches!(c, '.' | 'e' | 'E' | '-' | '+'))
    {
        return None;
    }
    let v: f64 = text.parse().ok()?;
    v.is_finite().then_some(v)
}
