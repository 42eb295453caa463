//! Recursive-descent parser for MiniLang.
//!
//! Parsing happens in two passes: an indentation-aware pass builds a small
//! syntax tree, which is then flattened into the [`Ast`] arena so that node
//! ids come out dense and in pre-order.

use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;

use super::ast::{Ast, AstNode, BinOp, Label, NodeId, NodeKind, UnaryOp};
use super::lexer::{Token, TokenKind};
use super::FrontendError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Loc {
    line_start: usize,
    line_end: usize,
    start: usize,
    end: usize,
}

impl Loc {
    fn of(tok: &Token) -> Loc {
        Loc {
            line_start: tok.line,
            line_end: tok.line,
            start: tok.start,
            end: tok.end,
        }
    }

    fn join(self, other: Loc) -> Loc {
        Loc {
            line_start: self.line_start.min(other.line_start),
            line_end: self.line_end.max(other.line_end),
            start: self.start.min(other.start),
            end: self.end.max(other.end),
        }
    }
}

#[derive(Debug)]
enum Expr {
    Int(i64, Loc),
    Bool(bool, Loc),
    Var(String, Loc),
    Call(String, Vec<Expr>, Loc),
    Bin(BinOp, Box<Expr>, Box<Expr>, Loc),
    Unary(UnaryOp, Box<Expr>, Loc),
}

impl Expr {
    fn loc(&self) -> Loc {
        match self {
            Expr::Int(_, l)
            | Expr::Bool(_, l)
            | Expr::Var(_, l)
            | Expr::Call(_, _, l)
            | Expr::Bin(_, _, _, l)
            | Expr::Unary(_, _, l) => *l,
        }
    }

    fn set_loc(&mut self, loc: Loc) {
        match self {
            Expr::Int(_, l)
            | Expr::Bool(_, l)
            | Expr::Var(_, l)
            | Expr::Call(_, _, l)
            | Expr::Bin(_, _, _, l)
            | Expr::Unary(_, _, l) => *l = loc,
        }
    }
}

#[derive(Debug)]
struct CondArm {
    cond: Expr,
    body: Vec<Stmt>,
    loc: Loc,
}

#[derive(Debug)]
enum Stmt {
    Assign(String, Expr, Loc),
    If {
        arms: Vec<CondArm>,
        orelse: Option<(Vec<Stmt>, Loc)>,
        loc: Loc,
    },
    While(Expr, Vec<Stmt>, Loc),
    Return(Expr, Loc),
    Call(Expr),
}

impl Stmt {
    fn loc(&self) -> Loc {
        match self {
            Stmt::Assign(_, _, l) | Stmt::While(_, _, l) | Stmt::Return(_, l) => *l,
            Stmt::If { loc, .. } => *loc,
            Stmt::Call(e) => e.loc(),
        }
    }
}

#[derive(Debug)]
struct FuncDef {
    name: String,
    params: Vec<(String, Loc)>,
    body: Vec<Stmt>,
    loc: Loc,
}

/// One non-blank source line: its indentation width and content tokens.
struct Line<'t> {
    indent: usize,
    tokens: &'t [Token],
}

fn split_lines(tokens: &[Token]) -> Vec<Line<'_>> {
    let mut lines = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        let mut indent = 0;
        if let TokenKind::Indent(w) = tokens[i].kind {
            indent = w;
            i += 1;
        }
        let start = i;
        while i < tokens.len() && tokens[i].kind != TokenKind::Newline {
            i += 1;
        }
        if i > start {
            lines.push(Line {
                indent,
                tokens: &tokens[start..i],
            });
        }
        // skip the newline
        i += 1;
    }
    lines
}

fn err_at(tok: Option<&Token>, fallback_line: usize, message: String) -> FrontendError {
    match tok {
        Some(t) => FrontendError::Parse {
            line: t.line,
            col: t.col,
            message,
        },
        None => FrontendError::Parse {
            line: fallback_line,
            col: 0,
            message,
        },
    }
}

fn describe(kind: &TokenKind) -> String {
    use alloc::format;
    match kind {
        TokenKind::Ident(n) => format!("identifier `{n}`"),
        TokenKind::Int(v) => format!("integer `{v}`"),
        other => format!("{other:?}"),
    }
}

/// Cursor over the tokens of a single line.
struct Cursor<'t> {
    tokens: &'t [Token],
    pos: usize,
    line: usize,
}

impl<'t> Cursor<'t> {
    fn new(tokens: &'t [Token]) -> Self {
        let line = tokens.first().map(|t| t.line).unwrap_or(1);
        Cursor {
            tokens,
            pos: 0,
            line,
        }
    }

    fn peek(&self) -> Option<&'t TokenKind> {
        self.tokens.get(self.pos).map(|t| &t.kind)
    }

    fn peek_tok(&self) -> Option<&'t Token> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<&'t Token> {
        let t = self.tokens.get(self.pos);
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn error(&self, message: String) -> FrontendError {
        let tok = self.peek_tok().or_else(|| self.tokens.last());
        err_at(tok, self.line, message)
    }

    fn expect(&mut self, kind: &TokenKind, what: &str) -> Result<&'t Token, FrontendError> {
        match self.peek() {
            Some(k) if k == kind => Ok(self.next().unwrap()),
            Some(k) => Err(self.error(alloc::format!("expected {what}, found {}", describe(k)))),
            None => Err(self.error(alloc::format!("expected {what}, found end of line"))),
        }
    }

    fn expect_ident(&mut self, what: &str) -> Result<(String, Loc), FrontendError> {
        match self.peek() {
            Some(TokenKind::Ident(name)) => {
                let tok = self.next().unwrap();
                Ok((name.clone(), Loc::of(tok)))
            }
            Some(k) => Err(self.error(alloc::format!("expected {what}, found {}", describe(k)))),
            None => Err(self.error(alloc::format!("expected {what}, found end of line"))),
        }
    }

    fn expect_end(&self) -> Result<(), FrontendError> {
        match self.peek() {
            None => Ok(()),
            Some(k) => Err(self.error(alloc::format!("expected end of line, found {}", describe(k)))),
        }
    }

    fn last_loc(&self) -> Loc {
        Loc::of(&self.tokens[self.pos - 1])
    }

    // expr := or
    fn expr(&mut self) -> Result<Expr, FrontendError> {
        self.or_expr()
    }

    fn or_expr(&mut self) -> Result<Expr, FrontendError> {
        let mut lhs = self.and_expr()?;
        while self.peek() == Some(&TokenKind::Or) {
            self.next();
            let rhs = self.and_expr()?;
            let loc = lhs.loc().join(rhs.loc());
            lhs = Expr::Bin(BinOp::Or, Box::new(lhs), Box::new(rhs), loc);
        }
        Ok(lhs)
    }

    fn and_expr(&mut self) -> Result<Expr, FrontendError> {
        let mut lhs = self.not_expr()?;
        while self.peek() == Some(&TokenKind::And) {
            self.next();
            let rhs = self.not_expr()?;
            let loc = lhs.loc().join(rhs.loc());
            lhs = Expr::Bin(BinOp::And, Box::new(lhs), Box::new(rhs), loc);
        }
        Ok(lhs)
    }

    fn not_expr(&mut self) -> Result<Expr, FrontendError> {
        if self.peek() == Some(&TokenKind::Not) {
            let start = Loc::of(self.next().unwrap());
            let inner = self.not_expr()?;
            let loc = start.join(inner.loc());
            return Ok(Expr::Unary(UnaryOp::Not, Box::new(inner), loc));
        }
        self.comparison()
    }

    fn comparison(&mut self) -> Result<Expr, FrontendError> {
        let lhs = self.additive()?;
        let op = match self.peek() {
            Some(TokenKind::Lt) => BinOp::Lt,
            Some(TokenKind::Le) => BinOp::Le,
            Some(TokenKind::EqEq) => BinOp::Eq,
            Some(TokenKind::NotEq) => BinOp::Ne,
            _ => return Ok(lhs),
        };
        self.next();
        let rhs = self.additive()?;
        if matches!(
            self.peek(),
            Some(TokenKind::Lt | TokenKind::Le | TokenKind::EqEq | TokenKind::NotEq)
        ) {
            return Err(self.error(String::from("comparisons cannot be chained")));
        }
        let loc = lhs.loc().join(rhs.loc());
        Ok(Expr::Bin(op, Box::new(lhs), Box::new(rhs), loc))
    }

    fn additive(&mut self) -> Result<Expr, FrontendError> {
        let mut lhs = self.multiplicative()?;
        loop {
            let op = match self.peek() {
                Some(TokenKind::Plus) => BinOp::Add,
                Some(TokenKind::Minus) => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.next();
            let rhs = self.multiplicative()?;
            let loc = lhs.loc().join(rhs.loc());
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs), loc);
        }
    }

    fn multiplicative(&mut self) -> Result<Expr, FrontendError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Some(TokenKind::Star) => BinOp::Mul,
                Some(TokenKind::SlashSlash) => BinOp::FloorDiv,
                Some(TokenKind::Percent) => BinOp::Mod,
                _ => return Ok(lhs),
            };
            self.next();
            let rhs = self.unary()?;
            let loc = lhs.loc().join(rhs.loc());
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs), loc);
        }
    }

    fn unary(&mut self) -> Result<Expr, FrontendError> {
        if self.peek() == Some(&TokenKind::Minus) {
            let start = Loc::of(self.next().unwrap());
            let inner = self.unary()?;
            let loc = start.join(inner.loc());
            return Ok(Expr::Unary(UnaryOp::Neg, Box::new(inner), loc));
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<Expr, FrontendError> {
        let Some(tok) = self.peek_tok() else {
            return Err(self.error(String::from("expected expression, found end of line")));
        };
        match &tok.kind {
            TokenKind::Int(v) => {
                self.next();
                Ok(Expr::Int(*v, Loc::of(tok)))
            }
            TokenKind::True | TokenKind::False => {
                self.next();
                Ok(Expr::Bool(tok.kind == TokenKind::True, Loc::of(tok)))
            }
            TokenKind::Ident(name) => {
                self.next();
                if self.peek() == Some(&TokenKind::LParen) {
                    self.next();
                    let mut args = Vec::new();
                    if self.peek() != Some(&TokenKind::RParen) {
                        loop {
                            args.push(self.expr()?);
                            if self.peek() == Some(&TokenKind::Comma) {
                                self.next();
                                continue;
                            }
                            break;
                        }
                    }
                    self.expect(&TokenKind::RParen, "`)`")?;
                    let loc = Loc::of(tok).join(self.last_loc());
                    Ok(Expr::Call(name.clone(), args, loc))
                } else {
                    Ok(Expr::Var(name.clone(), Loc::of(tok)))
                }
            }
            TokenKind::LParen => {
                self.next();
                let mut inner = self.expr()?;
                self.expect(&TokenKind::RParen, "`)`")?;
                // the parenthesized span includes both parens
                inner.set_loc(Loc::of(tok).join(self.last_loc()));
                Ok(inner)
            }
            other => Err(self.error(alloc::format!("expected expression, found {}", describe(other)))),
        }
    }
}

struct LineParser<'t> {
    lines: Vec<Line<'t>>,
    pos: usize,
}

impl<'t> LineParser<'t> {
    fn program(&mut self) -> Result<Vec<FuncDef>, FrontendError> {
        let mut funcs = Vec::new();
        while self.pos < self.lines.len() {
            let line = &self.lines[self.pos];
            if line.indent != 0 {
                return Err(err_at(
                    line.tokens.first(),
                    0,
                    String::from("unexpected indentation at top level"),
                ));
            }
            funcs.push(self.funcdef()?);
        }
        if funcs.is_empty() {
            return Err(FrontendError::Parse {
                line: 1,
                col: 0,
                message: String::from("expected `def`, found end of input"),
            });
        }
        Ok(funcs)
    }

    fn funcdef(&mut self) -> Result<FuncDef, FrontendError> {
        let line = &self.lines[self.pos];
        let indent = line.indent;
        let mut cur = Cursor::new(line.tokens);
        let def_tok = cur.expect(&TokenKind::Def, "`def`")?;
        let (name, _) = cur.expect_ident("function name")?;
        cur.expect(&TokenKind::LParen, "`(`")?;
        let mut params = Vec::new();
        if cur.peek() != Some(&TokenKind::RParen) {
            loop {
                params.push(cur.expect_ident("parameter name")?);
                if cur.peek() == Some(&TokenKind::Comma) {
                    cur.next();
                    continue;
                }
                break;
            }
        }
        cur.expect(&TokenKind::RParen, "`)`")?;
        cur.expect(&TokenKind::Colon, "`:`")?;
        cur.expect_end()?;
        let header = Loc::of(def_tok).join(cur.last_loc());
        self.pos += 1;
        let body = self.block(indent, header.line_start)?;
        let loc = header.join(body.last().unwrap().loc());
        Ok(FuncDef {
            name,
            params,
            body,
            loc,
        })
    }

    /// Parses a block whose lines are indented deeper than `parent_indent`.
    fn block(&mut self, parent_indent: usize, header_line: usize) -> Result<Vec<Stmt>, FrontendError> {
        let Some(first) = self.lines.get(self.pos) else {
            return Err(FrontendError::Parse {
                line: header_line,
                col: 0,
                message: String::from("expected an indented block, found end of input"),
            });
        };
        if first.indent <= parent_indent {
            return Err(err_at(
                first.tokens.first(),
                header_line,
                String::from("expected an indented block"),
            ));
        }
        let indent = first.indent;
        let mut stmts = Vec::new();
        while let Some(line) = self.lines.get(self.pos) {
            if line.indent < indent {
                if line.indent > parent_indent {
                    return Err(err_at(
                        line.tokens.first(),
                        0,
                        String::from("inconsistent dedent"),
                    ));
                }
                break;
            }
            if line.indent > indent {
                return Err(err_at(
                    line.tokens.first(),
                    0,
                    String::from("unexpected indentation"),
                ));
            }
            stmts.push(self.statement(indent)?);
        }
        Ok(stmts)
    }

    fn statement(&mut self, indent: usize) -> Result<Stmt, FrontendError> {
        let line = &self.lines[self.pos];
        let mut cur = Cursor::new(line.tokens);
        match cur.peek() {
            Some(TokenKind::If) => self.if_chain(indent),
            Some(TokenKind::While) => {
                let kw = Loc::of(cur.next().unwrap());
                let cond = cur.expr()?;
                cur.expect(&TokenKind::Colon, "`:`")?;
                cur.expect_end()?;
                self.pos += 1;
                let body = self.block(indent, kw.line_start)?;
                let loc = kw.join(body.last().unwrap().loc());
                Ok(Stmt::While(cond, body, loc))
            }
            Some(TokenKind::Return) => {
                let kw = Loc::of(cur.next().unwrap());
                let value = cur.expr()?;
                cur.expect_end()?;
                self.pos += 1;
                let loc = kw.join(value.loc());
                Ok(Stmt::Return(value, loc))
            }
            Some(TokenKind::Ident(_)) if line.tokens.get(1).map(|t| &t.kind) == Some(&TokenKind::Eq) => {
                let (name, name_loc) = cur.expect_ident("variable name")?;
                cur.next();
                let value = cur.expr()?;
                cur.expect_end()?;
                self.pos += 1;
                let loc = name_loc.join(value.loc());
                Ok(Stmt::Assign(name, value, loc))
            }
            Some(TokenKind::Ident(_)) => {
                let e = cur.expr()?;
                cur.expect_end()?;
                if !matches!(e, Expr::Call(..)) {
                    return Err(err_at(
                        line.tokens.first(),
                        0,
                        String::from("expected statement, found bare expression"),
                    ));
                }
                self.pos += 1;
                Ok(Stmt::Call(e))
            }
            Some(TokenKind::Elif | TokenKind::Else) => Err(cur.error(String::from(
                "`elif`/`else` without a matching `if`",
            ))),
            Some(k) => Err(cur.error(alloc::format!("expected statement, found {}", describe(k)))),
            None => unreachable!("blank lines are filtered"),
        }
    }

    fn if_chain(&mut self, indent: usize) -> Result<Stmt, FrontendError> {
        let mut arms = Vec::new();
        let mut orelse = None;
        loop {
            let line = &self.lines[self.pos];
            let mut cur = Cursor::new(line.tokens);
            let first = arms.is_empty();
            let kw_kind = if first { TokenKind::If } else { TokenKind::Elif };
            let kw = Loc::of(cur.expect(&kw_kind, if first { "`if`" } else { "`elif`" })?);
            let cond = cur.expr()?;
            cur.expect(&TokenKind::Colon, "`:`")?;
            cur.expect_end()?;
            self.pos += 1;
            let body = self.block(indent, kw.line_start)?;
            let loc = kw.join(body.last().unwrap().loc());
            arms.push(CondArm { cond, body, loc });

            let Some(next) = self.lines.get(self.pos) else { break };
            if next.indent != indent {
                break;
            }
            match next.tokens[0].kind {
                TokenKind::Elif => continue,
                TokenKind::Else => {
                    let mut cur = Cursor::new(next.tokens);
                    let kw = Loc::of(cur.next().unwrap());
                    cur.expect(&TokenKind::Colon, "`:`")?;
                    cur.expect_end()?;
                    self.pos += 1;
                    let body = self.block(indent, kw.line_start)?;
                    let loc = kw.join(body.last().unwrap().loc());
                    orelse = Some((body, loc));
                    break;
                }
                _ => break,
            }
        }
        let mut loc = arms[0].loc;
        if let Some(last) = arms.last() {
            loc = loc.join(last.loc);
        }
        if let Some((_, l)) = &orelse {
            loc = loc.join(*l);
        }
        Ok(Stmt::If { arms, orelse, loc })
    }
}

/// Flattens the syntax tree into the arena in pre-order.
struct Emitter {
    nodes: Vec<AstNode>,
}

impl Emitter {
    fn open(&mut self, kind: NodeKind, label: Label, parent: Option<NodeId>, loc: Loc) -> NodeId {
        let id = self.nodes.len();
        let order = match parent {
            Some(p) => {
                let order = self.nodes[p].children.len();
                self.nodes[p].children.push(id);
                order
            }
            None => 0,
        };
        self.nodes.push(AstNode {
            id,
            kind,
            label,
            children: Vec::new(),
            parent,
            line_start: loc.line_start,
            line_end: loc.line_end,
            order,
            span: (loc.start, loc.end),
        });
        id
    }

    fn func(&mut self, f: &FuncDef, parent: Option<NodeId>, loc: Loc) -> NodeId {
        let id = self.open(NodeKind::FuncDef, Label::Name(f.name.clone()), parent, loc);
        for (p, ploc) in &f.params {
            self.open(NodeKind::Param, Label::Name(p.clone()), Some(id), *ploc);
        }
        self.block(&f.body, id);
        id
    }

    fn block(&mut self, stmts: &[Stmt], parent: NodeId) -> NodeId {
        let loc = stmts[0].loc().join(stmts[stmts.len() - 1].loc());
        let id = self.open(NodeKind::Block, Label::None, Some(parent), loc);
        for s in stmts {
            self.stmt(s, id);
        }
        id
    }

    fn stmt(&mut self, s: &Stmt, parent: NodeId) {
        match s {
            Stmt::Assign(name, value, loc) => {
                let id = self.open(NodeKind::Assign, Label::Name(name.clone()), Some(parent), *loc);
                self.expr(value, id);
            }
            Stmt::Return(value, loc) => {
                let id = self.open(NodeKind::Return, Label::None, Some(parent), *loc);
                self.expr(value, id);
            }
            Stmt::While(cond, body, loc) => {
                let id = self.open(NodeKind::While, Label::None, Some(parent), *loc);
                self.expr(cond, id);
                self.block(body, id);
            }
            Stmt::Call(e) => {
                self.expr(e, parent);
            }
            Stmt::If { arms, orelse, loc } => {
                let id = self.open(NodeKind::If, Label::None, Some(parent), *loc);
                self.expr(&arms[0].cond, id);
                self.block(&arms[0].body, id);
                for arm in &arms[1..] {
                    let elif = self.open(NodeKind::Elif, Label::None, Some(id), arm.loc);
                    self.expr(&arm.cond, elif);
                    self.block(&arm.body, elif);
                }
                if let Some((body, eloc)) = orelse {
                    let e = self.open(NodeKind::Else, Label::None, Some(id), *eloc);
                    self.block(body, e);
                }
            }
        }
    }

    fn expr(&mut self, e: &Expr, parent: NodeId) -> NodeId {
        match e {
            Expr::Int(v, loc) => self.open(NodeKind::IntLit, Label::Int(*v), Some(parent), *loc),
            Expr::Bool(b, loc) => self.open(NodeKind::BoolLit, Label::Bool(*b), Some(parent), *loc),
            Expr::Var(n, loc) => self.open(NodeKind::Var, Label::Name(n.clone()), Some(parent), *loc),
            Expr::Call(n, args, loc) => {
                let id = self.open(NodeKind::Call, Label::Name(n.clone()), Some(parent), *loc);
                for a in args {
                    self.expr(a, id);
                }
                id
            }
            Expr::Bin(op, l, r, loc) => {
                let id = self.open(NodeKind::BinOp, Label::Bin(*op), Some(parent), *loc);
                self.expr(l, id);
                self.expr(r, id);
                id
            }
            Expr::Unary(op, x, loc) => {
                let id = self.open(NodeKind::UnaryOp, Label::Unary(*op), Some(parent), *loc);
                self.expr(x, id);
                id
            }
        }
    }
}

/// Parses a token stream into an AST rooted at the entry function.
///
/// Helper functions following the entry function become trailing children of
/// the root `FuncDef`, whose span is widened to cover them.
pub fn parse(tokens: &[Token]) -> Result<Ast, FrontendError> {
    let mut lp = LineParser {
        lines: split_lines(tokens),
        pos: 0,
    };
    let funcs = lp.program()?;
    let mut root_loc = funcs[0].loc;
    for f in &funcs[1..] {
        root_loc = root_loc.join(f.loc);
    }
    let mut em = Emitter { nodes: Vec::new() };
    let root = em.func(&funcs[0], None, root_loc);
    for f in &funcs[1..] {
        em.func(f, Some(root), f.loc);
    }
    Ok(Ast { nodes: em.nodes })
}

/// Parses one `check` line into a `CheckStmt` tree: `[Call, expected]`.
pub(crate) fn parse_check(tokens: &[Token]) -> Result<Ast, FrontendError> {
    let content: Vec<Token> = tokens
        .iter()
        .filter(|t| !matches!(t.kind, TokenKind::Newline | TokenKind::Indent(_)))
        .cloned()
        .collect();
    let lines = tokens
        .iter()
        .filter(|t| t.kind == TokenKind::Newline)
        .count();
    let mut cur = Cursor::new(&content);
    if content.is_empty() {
        return Err(cur.error(String::from("expected `check`, found end of input")));
    }
    if content.iter().any(|t| t.line != content[0].line) || lines > 1 {
        return Err(cur.error(String::from("a check must fit on a single line")));
    }
    let kw = Loc::of(cur.expect(&TokenKind::Check, "`check`")?);
    let call = cur.expr()?;
    let (call, expected) = match call {
        Expr::Bin(BinOp::Eq, l, r, _) => (*l, *r),
        other => {
            if !matches!(other, Expr::Call(..)) {
                return Err(cur.error(String::from("expected a call on the left of `==`")));
            }
            cur.expect(&TokenKind::EqEq, "`==`")?;
            unreachable!()
        }
    };
    cur.expect_end()?;
    if !matches!(call, Expr::Call(..)) {
        return Err(err_at(
            content.get(1),
            kw.line_start,
            String::from("expected a function call after `check`"),
        ));
    }
    let loc = kw.join(expected.loc());
    let mut em = Emitter { nodes: Vec::new() };
    let root = em.open(NodeKind::CheckStmt, Label::None, None, loc);
    em.expr(&call, root);
    em.expr(&expected, root);
    Ok(Ast { nodes: em.nodes })
}
