//! Lexical analysis for MiniLang sources and `check` lines.
//!
//! Every token carries its byte span, so the original text can be rebuilt by
//! splicing the whitespace between spans back in. Leading whitespace of a
//! line becomes an [`TokenKind::Indent`] token carrying its width; blank lines
//! still produce their `Newline` token.

use alloc::string::String;
use alloc::vec::Vec;

use super::FrontendError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TokenKind {
    Def,
    If,
    Elif,
    Else,
    While,
    Return,
    And,
    Or,
    Not,
    True,
    False,
    Check,
    Ident(String),
    Int(i64),
    LParen,
    RParen,
    Comma,
    Colon,
    Eq,
    EqEq,
    NotEq,
    Lt,
    Le,
    Plus,
    Minus,
    Star,
    SlashSlash,
    Percent,
    Newline,
    /// Leading whitespace of a line, measured in columns.
    Indent(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub kind: TokenKind,
    /// Byte offsets `[start, end)` into the tokenized text.
    pub start: usize,
    pub end: usize,
    /// 1-based line and column of the first byte.
    pub line: usize,
    pub col: usize,
}

impl Token {
    pub fn lexeme<'a>(&self, text: &'a str) -> &'a str {
        &text[self.start..self.end]
    }
}

fn keyword(word: &str) -> Option<TokenKind> {
    Some(match word {
        "def" => TokenKind::Def,
        "if" => TokenKind::If,
        "elif" => TokenKind::Elif,
        "else" => TokenKind::Else,
        "while" => TokenKind::While,
        "return" => TokenKind::Return,
        "and" => TokenKind::And,
        "or" => TokenKind::Or,
        "not" => TokenKind::Not,
        "true" => TokenKind::True,
        "false" => TokenKind::False,
        "check" => TokenKind::Check,
        _ => return None,
    })
}

/// Splits `text` into tokens. Spaces and tabs between tokens are skipped;
/// a `\r` directly before `\n` is folded into the newline token.
pub fn tokenize(text: &str) -> Result<Vec<Token>, FrontendError> {
    let bytes = text.as_bytes();
    let mut tokens = Vec::new();
    let mut pos = 0;
    let mut line = 1;
    let mut line_start = 0;
    let mut at_line_start = true;

    while pos < bytes.len() {
        let col = pos - line_start + 1;
        let c = bytes[pos];

        if at_line_start {
            at_line_start = false;
            let mut end = pos;
            while end < bytes.len() && (bytes[end] == b' ' || bytes[end] == b'\t') {
                end += 1;
            }
            if end > pos {
                tokens.push(Token {
                    kind: TokenKind::Indent(end - pos),
                    start: pos,
                    end,
                    line,
                    col,
                });
                pos = end;
                continue;
            }
        }

        let single = |kind: TokenKind, len: usize| Token {
            kind,
            start: pos,
            end: pos + len,
            line,
            col,
        };

        match c {
            b' ' | b'\t' => {
                pos += 1;
            }
            b'\r' if bytes.get(pos + 1) == Some(&b'\n') => {
                tokens.push(single(TokenKind::Newline, 2));
                pos += 2;
                line += 1;
                line_start = pos;
                at_line_start = true;
            }
            b'\n' => {
                tokens.push(single(TokenKind::Newline, 1));
                pos += 1;
                line += 1;
                line_start = pos;
                at_line_start = true;
            }
            b'0'..=b'9' => {
                let mut end = pos;
                while end < bytes.len() && bytes[end].is_ascii_digit() {
                    end += 1;
                }
                let value: i64 = text[pos..end].parse().map_err(|_| FrontendError::Lex {
                    line,
                    col,
                    message: String::from("integer literal out of range"),
                })?;
                tokens.push(Token {
                    kind: TokenKind::Int(value),
                    start: pos,
                    end,
                    line,
                    col,
                });
                pos = end;
            }
            b'a'..=b'z' | b'A'..=b'Z' | b'_' => {
                let mut end = pos;
                while end < bytes.len() && (bytes[end].is_ascii_alphanumeric() || bytes[end] == b'_')
                {
                    end += 1;
                }
                let word = &text[pos..end];
                let kind = keyword(word).unwrap_or_else(|| TokenKind::Ident(String::from(word)));
                tokens.push(Token {
                    kind,
                    start: pos,
                    end,
                    line,
                    col,
                });
                pos = end;
            }
            _ => {
                let next = bytes.get(pos + 1).copied();
                let (kind, len) = match (c, next) {
                    (b'=', Some(b'=')) => (TokenKind::EqEq, 2),
                    (b'!', Some(b'=')) => (TokenKind::NotEq, 2),
                    (b'<', Some(b'=')) => (TokenKind::Le, 2),
                    (b'/', Some(b'/')) => (TokenKind::SlashSlash, 2),
                    (b'=', _) => (TokenKind::Eq, 1),
                    (b'<', _) => (TokenKind::Lt, 1),
                    (b'(', _) => (TokenKind::LParen, 1),
                    (b')', _) => (TokenKind::RParen, 1),
                    (b',', _) => (TokenKind::Comma, 1),
                    (b':', _) => (TokenKind::Colon, 1),
                    (b'+', _) => (TokenKind::Plus, 1),
                    (b'-', _) => (TokenKind::Minus, 1),
                    (b'*', _) => (TokenKind::Star, 1),
                    (b'%', _) => (TokenKind::Percent, 1),
                    _ => {
                        let ch = text[pos..].chars().next().unwrap_or('?');
                        return Err(FrontendError::Lex {
                            line,
                            col,
                            message: alloc::format!("illegal character {ch:?}"),
                        });
                    }
                };
                tokens.push(single(kind, len));
                pos += len;
            }
        }
    }
    Ok(tokens)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    fn kinds(text: &str) -> Vec<TokenKind> {
        tokenize(text).unwrap().into_iter().map(|t| t.kind).collect()
    }

    fn ident(s: &str) -> TokenKind {
        TokenKind::Ident(s.to_string())
    }

    #[test]
    fn minimal_statement() {
        assert_eq!(
            kinds("x = 1"),
            [ident("x"), TokenKind::Eq, TokenKind::Int(1)]
        );
    }

    #[test]
    fn empty_input() {
        assert!(kinds("").is_empty());
    }

    #[test]
    fn function_header() {
        assert_eq!(
            kinds("def f(a, b):"),
            [
                TokenKind::Def,
                ident("f"),
                TokenKind::LParen,
                ident("a"),
                TokenKind::Comma,
                ident("b"),
                TokenKind::RParen,
                TokenKind::Colon
            ]
        );
    }

    #[test]
    fn operators_and_layout() {
        assert_eq!(
            kinds("  y = a // 2 % 3 <= -b\n"),
            [
                TokenKind::Indent(2),
                ident("y"),
                TokenKind::Eq,
                ident("a"),
                TokenKind::SlashSlash,
                TokenKind::Int(2),
                TokenKind::Percent,
                TokenKind::Int(3),
                TokenKind::Le,
                TokenKind::Minus,
                ident("b"),
                TokenKind::Newline
            ]
        );
    }

    #[test]
    fn illegal_character_reports_position() {
        match tokenize("x = 1\ny = $") {
            Err(FrontendError::Lex { line, col, .. }) => assert_eq!((line, col), (2, 5)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn spans_reconstruct_text() {
        let text = "def f(a):\n  if a < 3:\n    return a\n  return 0 - a\n";
        let tokens = tokenize(text).unwrap();
        let mut rebuilt = String::new();
        let mut cursor = 0;
        for t in &tokens {
            rebuilt.push_str(&text[cursor..t.start]);
            rebuilt.push_str(t.lexeme(text));
            cursor = t.end;
        }
        rebuilt.push_str(&text[cursor..]);
        assert_eq!(rebuilt, text);
        assert!(text[cursor..].chars().all(char::is_whitespace));
    }
}
