//! Monotone access policies and their concrete syntax.
//!
//! ```text
//! expr   := conj ( "OR" conj )*
//! conj   := atom ( "AND" atom )*
//! atom   := name "@" authority
//!         | "(" expr ")"
//!         | k "of" "(" expr ( "," expr )* ")"
//! ```
//!
//! `AND` binds tighter than `OR`. Keywords are case-sensitive and there is no
//! negation. Every gate is stored as a threshold: `AND` over `n` children is
//! `n of (...)` and `OR` is `1 of (...)`.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::attribute::{is_token_char, AttributeId};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("policy syntax error at byte {position}: {message}")]
pub struct PolicyParseError {
    pub position: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum PolicyNode {
    Leaf(AttributeId),
    /// Satisfied when at least `threshold` children are.
    Gate {
        threshold: usize,
        children: Vec<PolicyNode>,
    },
}

impl PolicyNode {
    pub fn leaf(id: AttributeId) -> Self {
        PolicyNode::Leaf(id)
    }

    pub fn and(children: Vec<PolicyNode>) -> Self {
        PolicyNode::Gate { threshold: children.len(), children }
    }

    pub fn or(children: Vec<PolicyNode>) -> Self {
        PolicyNode::Gate { threshold: 1, children }
    }

    /// Panics unless `1 <= k <= children.len()`; use [`AccessPolicy::new`]
    /// to validate untrusted trees.
    pub fn threshold(k: usize, children: Vec<PolicyNode>) -> Self {
        assert!(k >= 1 && k <= children.len(), "threshold {k} out of range for {} children", children.len());
        PolicyNode::Gate { threshold: k, children }
    }

    fn validate(&self) -> Result<(), String> {
        match self {
            PolicyNode::Leaf(_) => Ok(()),
            PolicyNode::Gate { threshold, children } => {
                if children.is_empty() {
                    return Err("gate without children".into());
                }
                if *threshold == 0 || *threshold > children.len() {
                    return Err(format!("threshold {threshold} out of range 1..={}", children.len()));
                }
                children.iter().try_for_each(PolicyNode::validate)
            }
        }
    }

    fn satisfied_by(&self, attrs: &BTreeSet<AttributeId>) -> bool {
        match self {
            PolicyNode::Leaf(id) => attrs.contains(id),
            PolicyNode::Gate { threshold, children } => {
                children.iter().filter(|c| c.satisfied_by(attrs)).count() >= *threshold
            }
        }
    }

    fn collect_leaves<'a>(&'a self, out: &mut Vec<&'a AttributeId>) {
        match self {
            PolicyNode::Leaf(id) => out.push(id),
            PolicyNode::Gate { children, .. } => children.iter().for_each(|c| c.collect_leaves(out)),
        }
    }

    /// Rendered with an infix operator (and therefore needs parentheses when
    /// nested under another infix gate).
    fn is_infix(&self) -> bool {
        matches!(self, PolicyNode::Gate { threshold, children } if children.len() >= 2 && (*threshold == 1 || *threshold == children.len()))
    }
}

impl fmt::Display for PolicyNode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicyNode::Leaf(id) => write!(f, "{id}"),
            PolicyNode::Gate { threshold, children }
                if children.len() >= 2 && (*threshold == 1 || *threshold == children.len()) =>
            {
                let op = if *threshold == children.len() { " AND " } else { " OR " };
                for (i, c) in children.iter().enumerate() {
                    if i > 0 {
                        f.write_str(op)?;
                    }
                    if c.is_infix() {
                        write!(f, "({c})")?;
                    } else {
                        write!(f, "{c}")?;
                    }
                }
                Ok(())
            }
            PolicyNode::Gate { threshold, children } => {
                write!(f, "{threshold} of (")?;
                for (i, c) in children.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{c}")?;
                }
                f.write_str(")")
            }
        }
    }
}

/// A validated monotone policy. `Display` produces the canonical text, which
/// parses back to the same tree.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AccessPolicy {
    root: PolicyNode,
}

impl AccessPolicy {
    pub fn new(root: PolicyNode) -> Result<Self, PolicyParseError> {
        root.validate().map_err(|message| PolicyParseError { position: 0, message })?;
        Ok(Self { root })
    }

    pub fn parse(text: &str) -> Result<Self, PolicyParseError> {
        let tokens = lex(text)?;
        let mut p = Parser { tokens, pos: 0, end: text.len() };
        let root = p.expr()?;
        if let Some((at, tok)) = p.tokens.get(p.pos) {
            return Err(PolicyParseError { position: *at, message: format!("unexpected {tok}") });
        }
        Ok(Self { root })
    }

    pub fn root(&self) -> &PolicyNode {
        &self.root
    }

    /// Leaves in left-to-right order; one LSSS row per leaf.
    pub fn leaves(&self) -> Vec<&AttributeId> {
        let mut out = Vec::new();
        self.root.collect_leaves(&mut out);
        out
    }

    pub fn is_satisfied_by(&self, attrs: &BTreeSet<AttributeId>) -> bool {
        self.root.satisfied_by(attrs)
    }
}

impl fmt::Display for AccessPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.root.fmt(f)
    }
}

impl FromStr for AccessPolicy {
    type Err = PolicyParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s)
    }
}

impl Serialize for AccessPolicy {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for AccessPolicy {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

pub fn policy_parse(text: &str) -> Result<AccessPolicy, PolicyParseError> {
    AccessPolicy::parse(text)
}

pub fn policy_satisfied(policy: &AccessPolicy, attrs: &BTreeSet<AttributeId>) -> bool {
    policy.is_satisfied_by(attrs)
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Token {
    Attr(AttributeId),
    And,
    Or,
    Of,
    Int(usize),
    LParen,
    RParen,
    Comma,
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Attr(id) => write!(f, "attribute `{id}`"),
            Token::And => f.write_str("`AND`"),
            Token::Or => f.write_str("`OR`"),
            Token::Of => f.write_str("`of`"),
            Token::Int(k) => write!(f, "number `{k}`"),
            Token::LParen => f.write_str("`(`"),
            Token::RParen => f.write_str("`)`"),
            Token::Comma => f.write_str("`,`"),
        }
    }
}

fn lex(text: &str) -> Result<Vec<(usize, Token)>, PolicyParseError> {
    let err = |position: usize, message: String| PolicyParseError { position, message };
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    let word_end = |mut j: usize| {
        while j < bytes.len() && is_token_char(bytes[j] as char) {
            j += 1;
        }
        j
    };
    while i < bytes.len() {
        let c = bytes[i] as char;
        match c {
            c if c.is_ascii_whitespace() => i += 1,
            '(' => {
                out.push((i, Token::LParen));
                i += 1;
            }
            ')' => {
                out.push((i, Token::RParen));
                i += 1;
            }
            ',' => {
                out.push((i, Token::Comma));
                i += 1;
            }
            c if is_token_char(c) => {
                let start = i;
                let end = word_end(i);
                let word = &text[start..end];
                if end < bytes.len() && bytes[end] == b'@' {
                    let auth_end = word_end(end + 1);
                    let authority = &text[end + 1..auth_end];
                    let id = AttributeId::new(authority, word).map_err(|e| err(start, e.to_string()))?;
                    out.push((start, Token::Attr(id)));
                    i = auth_end;
                    continue;
                }
                let tok = match word {
                    "AND" => Token::And,
                    "OR" => Token::Or,
                    "of" => Token::Of,
                    "NOT" | "not" => return Err(err(start, "negation is not supported in monotone policies".into())),
                    w if w.bytes().all(|b| b.is_ascii_digit()) => {
                        Token::Int(w.parse().map_err(|_| err(start, format!("number {w:?} out of range")))?)
                    }
                    w => {
                        return Err(err(start, format!("unexpected word {w:?}; attributes are written name@authority")))
                    }
                };
                out.push((start, tok));
                i = end;
            }
            other => return Err(err(i, format!("unexpected character {other:?}"))),
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<(usize, Token)>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos).map(|(_, t)| t)
    }

    fn here(&self) -> usize {
        self.tokens.get(self.pos).map(|(p, _)| *p).unwrap_or(self.end)
    }

    fn expect(&mut self, want: Token) -> Result<(), PolicyParseError> {
        match self.tokens.get(self.pos) {
            Some((_, t)) if *t == want => {
                self.pos += 1;
                Ok(())
            }
            Some((at, t)) => Err(PolicyParseError { position: *at, message: format!("expected {want}, found {t}") }),
            None => {
                Err(PolicyParseError { position: self.end, message: format!("expected {want}, found end of input") })
            }
        }
    }

    fn expr(&mut self) -> Result<PolicyNode, PolicyParseError> {
        let mut terms = vec![self.conj()?];
        while self.peek() == Some(&Token::Or) {
            self.pos += 1;
            terms.push(self.conj()?);
        }
        Ok(if terms.len() == 1 { terms.pop().expect("one term") } else { PolicyNode::or(terms) })
    }

    fn conj(&mut self) -> Result<PolicyNode, PolicyParseError> {
        let mut atoms = vec![self.atom()?];
        while self.peek() == Some(&Token::And) {
            self.pos += 1;
            atoms.push(self.atom()?);
        }
        Ok(if atoms.len() == 1 { atoms.pop().expect("one atom") } else { PolicyNode::and(atoms) })
    }

    fn atom(&mut self) -> Result<PolicyNode, PolicyParseError> {
        let at = self.here();
        match self.tokens.get(self.pos).map(|(_, t)| t.clone()) {
            Some(Token::Attr(id)) => {
                self.pos += 1;
                Ok(PolicyNode::Leaf(id))
            }
            Some(Token::LParen) => {
                self.pos += 1;
                let inner = self.expr()?;
                self.expect(Token::RParen)?;
                Ok(inner)
            }
            Some(Token::Int(k)) => {
                self.pos += 1;
                self.expect(Token::Of)?;
                self.expect(Token::LParen)?;
                let mut children = vec![self.expr()?];
                while self.peek() == Some(&Token::Comma) {
                    self.pos += 1;
                    children.push(self.expr()?);
                }
                self.expect(Token::RParen)?;
                if k == 0 || k > children.len() {
                    return Err(PolicyParseError {
                        position: at,
                        message: format!("threshold {k} out of range 1..={}", children.len()),
                    });
                }
                Ok(PolicyNode::Gate { threshold: k, children })
            }
            Some(t) => Err(PolicyParseError { position: at, message: format!("unexpected {t}") }),
            None => Err(PolicyParseError { position: at, message: "unexpected end of input".into() }),
        }
    }
}
