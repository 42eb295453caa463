//! Closed token vocabulary over prompts and MiniLang test sources.
//!
//! Identifiers are spelled letter by letter and integers digit by digit;
//! keywords, operators and the prompt section headers are single tokens.
//! Leading whitespace becomes one indent token per two columns.

use alloc::string::String;
use alloc::vec::Vec;

use crate::corpus::{GRAPH_PAD, NOT_AVAILABLE, SECTION_HEADERS};

pub type TokenId = usize;

pub const PAD: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;
pub const GRAPH: TokenId = 3;
pub const NOT_AVAIL: TokenId = 4;
pub const SEP: TokenId = 5;
pub const NEWLINE: TokenId = 6;
pub const INDENT: TokenId = 7;

const INDENT_WIDTH: usize = 2;

const SPECIALS: [&str; 8] = ["<pad>", "<bos>", "<eos>", GRAPH_PAD, NOT_AVAILABLE, "<sep>", "\n", "<indent>"];

const KEYWORDS: [&str; 14] = [
    "def", "if", "elif", "else", "while", "return", "and", "or", "not", "true", "false", "check", "lines", "path",
];

/// Longest first, so prefixes never shadow two-character operators.
const PUNCT: [&str; 16] = ["//", "<=", "==", "!=", "->", "(", ")", ",", ":", "=", "+", "-", "*", "%", "<", ">"];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum VocabError {
    #[error("UnknownToken: {text:?} at line {line}")]
    UnknownToken { text: String, line: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    markers: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Class {
    Piece,
    Operand,
    Open,
    Close,
    Punct,
    Minus,
    Layout,
    Other,
}

impl Default for Vocab {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocab {
    pub fn new() -> Self {
        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| String::from(*s)).collect();
        let markers = tokens.len();
        tokens.extend(SECTION_HEADERS.iter().map(|s| String::from(*s)));
        tokens.extend(KEYWORDS.iter().map(|s| String::from(*s)));
        tokens.extend(PUNCT.iter().map(|s| String::from(*s)));
        for c in ('a'..='z').chain('A'..='Z').chain(core::iter::once('_')).chain('0'..='9') {
            tokens.push(String::from(c));
        }
        Vocab { tokens, markers }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn id(&self, text: &str) -> Option<TokenId> {
        // Markers and specials are never produced by lexing plain text.
        self.tokens.iter().position(|t| t == text)
    }

    fn lexical_id(&self, text: &str) -> Option<TokenId> {
        let start = self.markers + SECTION_HEADERS.len();
        self.tokens[start..].iter().position(|t| t == text).map(|i| i + start)
    }

    /// Tokens of `text`, one `NEWLINE` per line break.
    pub fn encode(&self, text: &str) -> Result<Vec<TokenId>, VocabError> {
        let mut out = Vec::new();
        let mut lines = text.split('\n').peekable();
        let mut lineno = 0;
        while let Some(line) = lines.next() {
            lineno += 1;
            let last = lines.peek().is_none();
            if last && line.is_empty() {
                break;
            }
            self.encode_line(line, lineno, &mut out)?;
            if !last {
                out.push(NEWLINE);
            }
        }
        Ok(out)
    }

    fn encode_line(&self, line: &str, lineno: usize, out: &mut Vec<TokenId>) -> Result<(), VocabError> {
        let unknown = |text: &str| VocabError::UnknownToken { text: text.into(), line: lineno };
        if let Some(i) = SECTION_HEADERS.iter().position(|h| *h == line) {
            out.push(self.markers + i);
            return Ok(());
        }
        if line == NOT_AVAILABLE {
            out.push(NOT_AVAIL);
            return Ok(());
        }
        if !line.is_empty() && line.len() % GRAPH_PAD.len() == 0 && line.as_bytes().chunks(GRAPH_PAD.len()).all(|c| c == GRAPH_PAD.as_bytes()) {
            out.extend(core::iter::repeat_n(GRAPH, line.len() / GRAPH_PAD.len()));
            return Ok(());
        }
        let body = line.trim_start_matches(' ');
        let lead = line.len() - body.len();
        if lead % INDENT_WIDTH != 0 {
            return Err(unknown(&line[..lead]));
        }
        out.extend(core::iter::repeat_n(INDENT, lead / INDENT_WIDTH));
        let b = body.as_bytes();
        let mut i = 0;
        while i < b.len() {
            let c = b[i];
            if c == b' ' {
                i += 1;
            } else if c.is_ascii_alphabetic() || c == b'_' {
                let start = i;
                while i < b.len() && (b[i].is_ascii_alphanumeric() || b[i] == b'_') {
                    i += 1;
                }
                let word = &body[start..i];
                match KEYWORDS.iter().position(|k| *k == word) {
                    Some(_) => out.push(self.lexical_id(word).expect("keyword in vocab")),
                    None => {
                        for ch in word.chars() {
                            let mut buf = [0u8; 4];
                            out.push(self.lexical_id(ch.encode_utf8(&mut buf)).expect("ident char in vocab"));
                        }
                    }
                }
            } else if c.is_ascii_digit() {
                out.push(self.lexical_id(&body[i..i + 1]).expect("digit in vocab"));
                i += 1;
            } else {
                let ch = body[i..].chars().next().expect("in bounds");
                let p = PUNCT
                    .iter()
                    .find(|p| body[i..].starts_with(**p))
                    .ok_or_else(|| unknown(&body[i..i + ch.len_utf8()]))?;
                out.push(self.lexical_id(p).expect("punct in vocab"));
                i += p.len();
            }
        }
        Ok(())
    }

    fn class(&self, id: TokenId) -> Class {
        match id {
            NEWLINE | INDENT => Class::Layout,
            _ => match self.tokens.get(id).map(String::as_str) {
                Some("(") => Class::Open,
                Some(")") => Class::Close,
                Some("," | ":") => Class::Punct,
                Some("-") => Class::Minus,
                Some("true" | "false") => Class::Operand,
                Some(t) if t.len() == 1 && (t.as_bytes()[0].is_ascii_alphanumeric() || t == "_") => Class::Piece,
                _ => Class::Other,
            },
        }
    }

    /// Text of `ids` under canonical spacing; the inverse of [`Vocab::encode`]
    /// on canonically formatted input. Unknown ids render as nothing.
    pub fn decode(&self, ids: &[TokenId]) -> String {
        let mut out = String::new();
        let mut prev: Option<(TokenId, Class, bool)> = None;
        for &id in ids {
            let Some(text) = self.tokens.get(id) else { continue };
            let class = self.class(id);
            let space = match prev {
                None => false,
                Some((p, pc, unary)) => {
                    !(pc == Class::Layout
                        || class == Class::Layout
                        || matches!(class, Class::Close | Class::Punct)
                        || pc == Class::Open
                        || unary
                        || (pc == Class::Piece && class == Class::Piece)
                        || (pc == Class::Piece && class == Class::Open)
                        || (p == GRAPH && id == GRAPH))
                }
            };
            if space {
                out.push(' ');
            }
            if id == INDENT {
                out.push_str("  ");
            } else {
                out.push_str(text);
            }
            let unary = class == Class::Minus
                && !matches!(prev, Some((_, Class::Piece | Class::Operand | Class::Close, _)));
            prev = Some((id, class, unary));
        }
        out
    }
}
