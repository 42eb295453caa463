use alloc::string::String;
use alloc::vec::Vec;

/// Dense node identifier, assigned in pre-order starting at 0.
pub type NodeId = usize;

/// Syntactic category of an AST node.
///
/// The discriminant is the node's `kind_code`. Codes 12..=15 fall outside the
/// 12-wide one-hot block of the node features; they are reserved for kinds
/// whose token content already identifies them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(u8)]
pub enum NodeKind {
    FuncDef = 0,
    Param = 1,
    Block = 2,
    Assign = 3,
    If = 4,
    Elif = 5,
    Else = 6,
    While = 7,
    Return = 8,
    BinOp = 9,
    UnaryOp = 10,
    IntLit = 11,
    Var = 12,
    BoolLit = 13,
    Call = 14,
    CheckStmt = 15,
}

impl NodeKind {
    pub const ALL: [NodeKind; 16] = [
        NodeKind::FuncDef,
        NodeKind::Param,
        NodeKind::Block,
        NodeKind::Assign,
        NodeKind::If,
        NodeKind::Elif,
        NodeKind::Else,
        NodeKind::While,
        NodeKind::Return,
        NodeKind::BinOp,
        NodeKind::UnaryOp,
        NodeKind::IntLit,
        NodeKind::Var,
        NodeKind::BoolLit,
        NodeKind::Call,
        NodeKind::CheckStmt,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<NodeKind> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn is_expression(self) -> bool {
        matches!(
            self,
            NodeKind::BinOp
                | NodeKind::UnaryOp
                | NodeKind::IntLit
                | NodeKind::Var
                | NodeKind::BoolLit
                | NodeKind::Call
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    FloorDiv,
    Mod,
    Lt,
    Le,
    Eq,
    Ne,
    And,
    Or,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::FloorDiv => "//",
            BinOp::Mod => "%",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
            BinOp::And => "and",
            BinOp::Or => "or",
        }
    }

    /// Binding strength; higher binds tighter.
    pub fn precedence(self) -> u8 {
        match self {
            BinOp::Or => 1,
            BinOp::And => 2,
            BinOp::Lt | BinOp::Le | BinOp::Eq | BinOp::Ne => 4,
            BinOp::Add | BinOp::Sub => 5,
            BinOp::Mul | BinOp::FloorDiv | BinOp::Mod => 6,
        }
    }

    pub fn is_comparison(self) -> bool {
        self.precedence() == 4
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnaryOp {
    Neg,
    Not,
}

/// Node payload: names, literal values and operators.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Label {
    None,
    Name(String),
    Int(i64),
    Bool(bool),
    Bin(BinOp),
    Unary(UnaryOp),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AstNode {
    pub id: NodeId,
    pub kind: NodeKind,
    pub label: Label,
    pub children: Vec<NodeId>,
    pub parent: Option<NodeId>,
    pub line_start: usize,
    pub line_end: usize,
    /// Position among the parent's children.
    pub order: usize,
    /// Byte span `[start, end)` of the node's source slice.
    pub span: (usize, usize),
}

impl AstNode {
    pub fn name(&self) -> Option<&str> {
        match &self.label {
            Label::Name(n) => Some(n),
            _ => None,
        }
    }
}

/// Arena of nodes; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Ast {
    pub nodes: Vec<AstNode>,
}

impl Ast {
    pub const ROOT: NodeId = 0;

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> &AstNode {
        &self.nodes[id]
    }

    pub fn root(&self) -> &AstNode {
        &self.nodes[Self::ROOT]
    }

    pub fn depth(&self, mut id: NodeId) -> usize {
        let mut depth = 0;
        while let Some(p) = self.nodes[id].parent {
            depth += 1;
            id = p;
        }
        depth
    }

    /// Parameter names of the function rooted at `func`.
    pub fn params(&self, func: NodeId) -> Vec<&str> {
        self.nodes[func]
            .children
            .iter()
            .map(|&c| &self.nodes[c])
            .filter(|n| n.kind == NodeKind::Param)
            .filter_map(|n| n.name())
            .collect()
    }

    /// Body block of the function rooted at `func`.
    pub fn body(&self, func: NodeId) -> NodeId {
        self.nodes[func]
            .children
            .iter()
            .copied()
            .find(|&c| self.nodes[c].kind == NodeKind::Block)
            .expect("function definitions always carry a body block")
    }

    /// The entry function and its helpers, in source order.
    pub fn functions(&self) -> Vec<NodeId> {
        let mut out = alloc::vec![Self::ROOT];
        out.extend(
            self.root()
                .children
                .iter()
                .copied()
                .filter(|&c| self.nodes[c].kind == NodeKind::FuncDef),
        );
        out
    }

    pub fn function_named(&self, name: &str) -> Option<NodeId> {
        self.functions()
            .into_iter()
            .find(|&f| self.nodes[f].name() == Some(name))
    }

    /// Structural equality of the subtrees at `a` (in `self`) and `b` (in
    /// `other`): kinds, labels and child shapes, ignoring ids and locations.
    pub fn subtree_eq(&self, a: NodeId, other: &Ast, b: NodeId) -> bool {
        let (na, nb) = (&self.nodes[a], &other.nodes[b]);
        na.kind == nb.kind
            && na.label == nb.label
            && na.children.len() == nb.children.len()
            && na
                .children
                .iter()
                .zip(&nb.children)
                .all(|(&ca, &cb)| self.subtree_eq(ca, other, cb))
    }

    pub fn structurally_eq(&self, other: &Ast) -> bool {
        !self.is_empty() && !other.is_empty() && self.subtree_eq(0, other, 0)
    }

    /// All descendants of `id` (excluding `id`) in pre-order.
    pub fn descendants(&self, id: NodeId) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut stack: Vec<NodeId> = self.nodes[id].children.iter().rev().copied().collect();
        while let Some(n) = stack.pop() {
            out.push(n);
            stack.extend(self.nodes[n].children.iter().rev().copied());
        }
        out
    }
}
