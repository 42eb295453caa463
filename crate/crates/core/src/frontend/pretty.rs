//! Canonical rendering of AST nodes (two-space indentation, minimal
//! parentheses).

use alloc::string::String;
use core::fmt::Write;

use super::ast::{Ast, Label, NodeId, NodeKind, UnaryOp};

const NOT_PREC: u8 = 3;
const NEG_PREC: u8 = 7;
const ATOM_PREC: u8 = 8;

fn prec(ast: &Ast, id: NodeId) -> u8 {
    let n = ast.node(id);
    match (&n.kind, &n.label) {
        (NodeKind::BinOp, Label::Bin(op)) => op.precedence(),
        (NodeKind::UnaryOp, Label::Unary(UnaryOp::Not)) => NOT_PREC,
        (NodeKind::UnaryOp, _) => NEG_PREC,
        (NodeKind::IntLit, Label::Int(v)) if *v < 0 => NEG_PREC,
        _ => ATOM_PREC,
    }
}

fn write_expr(out: &mut String, ast: &Ast, id: NodeId) {
    let n = ast.node(id);
    match (&n.kind, &n.label) {
        (NodeKind::IntLit, Label::Int(v)) => {
            let _ = write!(out, "{v}");
        }
        (NodeKind::BoolLit, Label::Bool(b)) => out.push_str(if *b { "true" } else { "false" }),
        (NodeKind::Var, Label::Name(name)) => out.push_str(name),
        (NodeKind::Call, Label::Name(name)) => {
            out.push_str(name);
            out.push('(');
            for (i, &c) in n.children.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                write_expr(out, ast, c);
            }
            out.push(')');
        }
        (NodeKind::UnaryOp, Label::Unary(op)) => {
            let (text, p) = match op {
                UnaryOp::Not => ("not ", NOT_PREC),
                UnaryOp::Neg => ("-", NEG_PREC),
            };
            out.push_str(text);
            write_operand(out, ast, n.children[0], prec(ast, n.children[0]) < p);
        }
        (NodeKind::BinOp, Label::Bin(op)) => {
            let p = op.precedence();
            let (l, r) = (n.children[0], n.children[1]);
            let (lp, rp) = (prec(ast, l), prec(ast, r));
            let cmp = op.is_comparison();
            write_operand(out, ast, l, lp < p || (cmp && lp == p));
            let _ = write!(out, " {} ", op.symbol());
            write_operand(out, ast, r, rp <= p);
        }
        _ => {
            // Non-expression nodes in expression position render as fragments.
            write_node(out, ast, id, 0);
        }
    }
}

fn write_operand(out: &mut String, ast: &Ast, id: NodeId, parens: bool) {
    if parens {
        out.push('(');
        write_expr(out, ast, id);
        out.push(')');
    } else {
        write_expr(out, ast, id);
    }
}

fn indent(out: &mut String, level: usize) {
    for _ in 0..level {
        out.push_str("  ");
    }
}

fn write_block(out: &mut String, ast: &Ast, block: NodeId, level: usize) {
    for &s in &ast.node(block).children {
        write_node(out, ast, s, level);
    }
}

fn write_header(out: &mut String, ast: &Ast, kw: &str, cond: NodeId, level: usize) {
    indent(out, level);
    out.push_str(kw);
    out.push(' ');
    write_expr(out, ast, cond);
    out.push_str(":\n");
}

fn write_node(out: &mut String, ast: &Ast, id: NodeId, level: usize) {
    let n = ast.node(id);
    match n.kind {
        NodeKind::FuncDef => {
            indent(out, level);
            let _ = write!(out, "def {}(", n.name().unwrap_or("_"));
            for (i, p) in ast.params(id).iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                out.push_str(p);
            }
            out.push_str("):\n");
            for &c in &n.children {
                match ast.node(c).kind {
                    NodeKind::Block => write_block(out, ast, c, level + 1),
                    NodeKind::FuncDef => write_node(out, ast, c, level),
                    _ => {}
                }
            }
        }
        NodeKind::Param => out.push_str(n.name().unwrap_or("_")),
        NodeKind::Block => write_block(out, ast, id, level),
        NodeKind::Assign => {
            indent(out, level);
            let _ = write!(out, "{} = ", n.name().unwrap_or("_"));
            write_expr(out, ast, n.children[0]);
            out.push('\n');
        }
        NodeKind::Return => {
            indent(out, level);
            out.push_str("return ");
            write_expr(out, ast, n.children[0]);
            out.push('\n');
        }
        NodeKind::If | NodeKind::Elif | NodeKind::While => {
            let kw = match n.kind {
                NodeKind::If => "if",
                NodeKind::Elif => "elif",
                _ => "while",
            };
            write_header(out, ast, kw, n.children[0], level);
            write_block(out, ast, n.children[1], level + 1);
            for &c in &n.children[2..] {
                write_node(out, ast, c, level);
            }
        }
        NodeKind::Else => {
            indent(out, level);
            out.push_str("else:\n");
            write_block(out, ast, n.children[0], level + 1);
        }
        NodeKind::CheckStmt => {
            indent(out, level);
            out.push_str("check ");
            write_expr(out, ast, n.children[0]);
            out.push_str(" == ");
            write_expr(out, ast, n.children[1]);
        }
        NodeKind::Call if n.parent.map(|p| ast.node(p).kind) == Some(NodeKind::Block) => {
            indent(out, level);
            write_expr(out, ast, id);
            out.push('\n');
        }
        _ => write_expr(out, ast, id),
    }
}

/// Renders the subtree at `id`.
///
/// The root renders as a complete program. Any other node renders as a
/// fragment: statements as indented-from-zero lines, expressions inline.
pub fn pretty_print(ast: &Ast, id: NodeId) -> String {
    let mut out = String::new();
    write_node(&mut out, ast, id, 0);
    out
}

/// Convenience for the whole program.
pub fn pretty_print_program(ast: &Ast) -> String {
    pretty_print(ast, Ast::ROOT)
}
