//! MiniLang: a small imperative language for programs under test, plus the
//! single-line `check` DSL used for test cases.

pub mod ast;
pub mod lexer;
pub mod parser;
pub mod pretty;

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

pub use ast::{Ast, AstNode, BinOp, Label, NodeId, NodeKind, UnaryOp};
pub use lexer::{tokenize, Token, TokenKind};
pub use parser::parse;
pub use pretty::{pretty_print, pretty_print_program};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FrontendError {
    #[error("LexError at {line}:{col}: {message}")]
    Lex {
        line: usize,
        col: usize,
        message: String,
    },
    #[error("ParseError at {line}:{col}: {message}")]
    Parse {
        line: usize,
        col: usize,
        message: String,
    },
}

/// Runtime value of a MiniLang expression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Value {
    Int(i64),
    Bool(bool),
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(v) => write!(f, "{v}"),
            Value::Bool(b) => write!(f, "{b}"),
        }
    }
}

/// The text of a program under test.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceProgram {
    pub name: String,
    pub text: String,
    pub line_count: usize,
}

impl SourceProgram {
    pub fn new(name: impl Into<String>, text: impl Into<String>) -> Self {
        let text = text.into();
        let newlines = text.bytes().filter(|&b| b == b'\n').count();
        let line_count = if text.is_empty() || text.ends_with('\n') {
            newlines
        } else {
            newlines + 1
        };
        SourceProgram {
            name: name.into(),
            text,
            line_count: line_count.max(1),
        }
    }
}

/// A parsed program: source text plus its syntax tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Program {
    pub source: SourceProgram,
    pub ast: Ast,
}

impl Program {
    pub fn parse(name: impl Into<String>, text: impl Into<String>) -> Result<Self, FrontendError> {
        let source = SourceProgram::new(name, text);
        let ast = parse(&tokenize(&source.text)?)?;
        Ok(Program { source, ast })
    }

    pub fn name(&self) -> &str {
        &self.source.name
    }

    /// Name of the entry function (the function under test).
    pub fn entry_name(&self) -> &str {
        self.ast.root().name().unwrap_or("")
    }

    pub fn entry_params(&self) -> Vec<&str> {
        self.ast.params(Ast::ROOT)
    }
}

/// One `check <name>(<args>) == <expected>` test case.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TestCase {
    pub call_target: String,
    pub args: Vec<Value>,
    pub expected: Value,
    pub source_text: String,
}

impl TestCase {
    pub fn new(call_target: impl Into<String>, args: Vec<Value>, expected: Value) -> Self {
        let call_target = call_target.into();
        let source_text = render_check(&call_target, &args, &expected);
        TestCase {
            call_target,
            args,
            expected,
            source_text,
        }
    }
}

fn render_check(target: &str, args: &[Value], expected: &Value) -> String {
    use fmt::Write;
    let mut out = String::new();
    let _ = write!(out, "check {target}(");
    for (i, a) in args.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        let _ = write!(out, "{a}");
    }
    let _ = write!(out, ") == {expected}");
    out
}

fn literal(ast: &Ast, id: NodeId) -> Option<Value> {
    let n = ast.node(id);
    match (&n.kind, &n.label) {
        (NodeKind::IntLit, Label::Int(v)) => Some(Value::Int(*v)),
        (NodeKind::BoolLit, Label::Bool(b)) => Some(Value::Bool(*b)),
        (NodeKind::UnaryOp, Label::Unary(UnaryOp::Neg)) => match literal(ast, n.children[0])? {
            Value::Int(v) => v.checked_neg().map(Value::Int),
            Value::Bool(_) => None,
        },
        _ => None,
    }
}

/// Parses a single `check` line.
pub fn parse_test(text: &str) -> Result<TestCase, FrontendError> {
    let tokens = tokenize(text)?;
    let ast = parser::parse_check(&tokens)?;
    let root = ast.root();
    let call = ast.node(root.children[0]);
    let bad_literal = |id: NodeId| {
        let n = ast.node(id);
        FrontendError::Parse {
            line: n.line_start,
            col: n.span.0 + 1,
            message: String::from("check arguments and expected values must be literals"),
        }
    };
    let mut args = Vec::with_capacity(call.children.len());
    for &c in &call.children {
        args.push(literal(&ast, c).ok_or_else(|| bad_literal(c))?);
    }
    let expected = literal(&ast, root.children[1]).ok_or_else(|| bad_literal(root.children[1]))?;
    Ok(TestCase::new(call.name().unwrap_or(""), args, expected))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn parse_check_with_args() {
        let t = parse_test("check f(2, true) == 5").unwrap();
        assert_eq!(t.call_target, "f");
        assert_eq!(t.args, vec![Value::Int(2), Value::Bool(true)]);
        assert_eq!(t.expected, Value::Int(5));
        assert_eq!(t.source_text, "check f(2, true) == 5");
    }

    #[test]
    fn parse_check_without_args() {
        let t = parse_test("check f() == 0").unwrap();
        assert!(t.args.is_empty());
        assert_eq!(t.source_text, "check f() == 0");
    }

    #[test]
    fn malformed_check() {
        assert!(matches!(
            parse_test("check f(2 == 3"),
            Err(FrontendError::Parse { .. })
        ));
        assert!(parse_test("check f(2)").is_err());
        assert!(parse_test("check f(a) == 1").is_err());
        assert!(parse_test("f(1) == 1").is_err());
        assert!(parse_test("check f(1) == 1\ncheck f(2) == 2").is_err());
    }

    #[test]
    fn negative_literals_round_trip() {
        let text = "check f(-3, 0, false) == -12";
        assert_eq!(parse_test(text).unwrap().source_text, text);
    }

    #[test]
    fn line_count() {
        assert_eq!(SourceProgram::new("p", "def f(a):\n  return a\n").line_count, 2);
        assert_eq!(SourceProgram::new("p", "def f(a):\n  return a").line_count, 2);
    }
}
