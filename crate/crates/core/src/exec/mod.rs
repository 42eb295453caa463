//! Deterministic MiniLang interpreter that records the executed statement
//! path of the entry function.

mod branch;

use alloc::string::String;
use alloc::vec::Vec;

use crate::frontend::{Ast, BinOp, Label, NodeId, NodeKind, Program, TestCase, UnaryOp, Value};

pub use branch::{enumerate_branches, path_id, trace_to_branch, Branch, BranchError, BranchSet};

pub const DEFAULT_STEP_LIMIT: usize = 10_000;
const MAX_CALL_DEPTH: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Outcome {
    Passed,
    AssertionFailed,
    RuntimeError,
    StepLimitExceeded,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Passed => "Passed",
            Outcome::AssertionFailed => "AssertionFailed",
            Outcome::RuntimeError => "RuntimeError",
            Outcome::StepLimitExceeded => "StepLimitExceeded",
        }
    }
}

/// Why an evaluation stopped early.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Fault {
    DivisionByZero,
    Overflow,
    UnboundVariable(String),
    TypeMismatch(&'static str),
    MissingReturn,
    UnknownFunction(String),
    ArityMismatch { expected: usize, found: usize },
    CallDepthExceeded,
    StepLimit,
}

/// Preconditions of [`execute`] that a test case can violate.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ExecError {
    #[error("UnknownFunction: `{0}` is not the function under test")]
    UnknownFunction(String),
    #[error("ArityMismatch: expected {expected} arguments, found {found}")]
    ArityMismatch { expected: usize, found: usize },
    #[error("InvalidStepLimit: step limit must be at least 1")]
    InvalidStepLimit,
}

/// One executed statement: node id and its first line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TraceEvent {
    pub node: NodeId,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecutionTrace {
    pub events: Vec<TraceEvent>,
    pub outcome: Outcome,
    pub returned: Option<Value>,
    pub fault: Option<Fault>,
}

/// Result of running the entry function on raw arguments.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunResult {
    pub events: Vec<TraceEvent>,
    pub result: Result<Value, Fault>,
}

enum Flow {
    Normal,
    Return(Value),
}

struct Interpreter<'p> {
    ast: &'p Ast,
    steps: usize,
    limit: usize,
    events: Vec<TraceEvent>,
    depth: usize,
}

type Env<'p> = Vec<(&'p str, Value)>;

fn lookup(env: &Env<'_>, name: &str) -> Option<Value> {
    env.iter().rev().find(|(n, _)| *n == name).map(|(_, v)| *v)
}

fn assign<'p>(env: &mut Env<'p>, name: &'p str, value: Value) {
    match env.iter_mut().find(|(n, _)| *n == name) {
        Some(slot) => slot.1 = value,
        None => env.push((name, value)),
    }
}

fn int(v: Value) -> Result<i64, Fault> {
    match v {
        Value::Int(i) => Ok(i),
        Value::Bool(_) => Err(Fault::TypeMismatch("expected an integer")),
    }
}

fn boolean(v: Value) -> Result<bool, Fault> {
    match v {
        Value::Bool(b) => Ok(b),
        Value::Int(_) => Err(Fault::TypeMismatch("expected a boolean")),
    }
}

/// Floor division (rounds toward negative infinity).
pub fn floor_div(a: i64, b: i64) -> Result<i64, Fault> {
    if b == 0 {
        return Err(Fault::DivisionByZero);
    }
    let q = a.checked_div(b).ok_or(Fault::Overflow)?;
    if a % b != 0 && ((a < 0) != (b < 0)) {
        Ok(q - 1)
    } else {
        Ok(q)
    }
}

/// Remainder with the sign of the divisor, consistent with [`floor_div`].
pub fn floor_mod(a: i64, b: i64) -> Result<i64, Fault> {
    if b == 0 {
        return Err(Fault::DivisionByZero);
    }
    let r = a.checked_rem(b).ok_or(Fault::Overflow)?;
    if r != 0 && ((r < 0) != (b < 0)) {
        Ok(r + b)
    } else {
        Ok(r)
    }
}

impl<'p> Interpreter<'p> {
    fn call(&mut self, func: NodeId, args: &[Value]) -> Result<Value, Fault> {
        let params = self.ast.params(func);
        if params.len() != args.len() {
            return Err(Fault::ArityMismatch {
                expected: params.len(),
                found: args.len(),
            });
        }
        if self.depth >= MAX_CALL_DEPTH {
            return Err(Fault::CallDepthExceeded);
        }
        self.depth += 1;
        let mut env: Env<'p> = params.into_iter().zip(args.iter().copied()).collect();
        let body = self.ast.body(func);
        let result = match self.block(body, &mut env)? {
            Flow::Return(v) => Ok(v),
            Flow::Normal => Err(Fault::MissingReturn),
        };
        self.depth -= 1;
        result
    }

    fn step(&mut self, id: NodeId) -> Result<(), Fault> {
        if self.steps >= self.limit {
            return Err(Fault::StepLimit);
        }
        self.steps += 1;
        if self.depth == 1 {
            self.events.push(TraceEvent {
                node: id,
                line: self.ast.node(id).line_start,
            });
        }
        Ok(())
    }

    fn block(&mut self, block: NodeId, env: &mut Env<'p>) -> Result<Flow, Fault> {
        for &s in &self.ast.node(block).children {
            if let Flow::Return(v) = self.stmt(s, env)? {
                return Ok(Flow::Return(v));
            }
        }
        Ok(Flow::Normal)
    }

    fn stmt(&mut self, s: NodeId, env: &mut Env<'p>) -> Result<Flow, Fault> {
        let ast = self.ast;
        let node = ast.node(s);
        match node.kind {
            NodeKind::Assign => {
                self.step(s)?;
                let v = self.expr(node.children[0], env)?;
                assign(env, node.name().unwrap_or(""), v);
                Ok(Flow::Normal)
            }
            NodeKind::Return => {
                self.step(s)?;
                Ok(Flow::Return(self.expr(node.children[0], env)?))
            }
            NodeKind::Call => {
                self.step(s)?;
                self.expr(s, env)?;
                Ok(Flow::Normal)
            }
            NodeKind::While => loop {
                self.step(s)?;
                if !boolean(self.expr(node.children[0], env)?)? {
                    return Ok(Flow::Normal);
                }
                if let Flow::Return(v) = self.block(node.children[1], env)? {
                    return Ok(Flow::Return(v));
                }
            },
            NodeKind::If => {
                self.step(s)?;
                if boolean(self.expr(node.children[0], env)?)? {
                    return self.block(node.children[1], env);
                }
                for &arm in &node.children[2..] {
                    let arm_node = ast.node(arm);
                    if arm_node.kind == NodeKind::Elif {
                        self.step(arm)?;
                        if boolean(self.expr(arm_node.children[0], env)?)? {
                            return self.block(arm_node.children[1], env);
                        }
                    } else {
                        return self.block(arm_node.children[0], env);
                    }
                }
                Ok(Flow::Normal)
            }
            _ => Err(Fault::TypeMismatch("not a statement")),
        }
    }

    fn expr(&mut self, id: NodeId, env: &mut Env<'p>) -> Result<Value, Fault> {
        let ast = self.ast;
        let node = ast.node(id);
        match (&node.kind, &node.label) {
            (NodeKind::IntLit, Label::Int(v)) => Ok(Value::Int(*v)),
            (NodeKind::BoolLit, Label::Bool(b)) => Ok(Value::Bool(*b)),
            (NodeKind::Var, Label::Name(n)) => {
                lookup(env, n).ok_or_else(|| Fault::UnboundVariable(n.clone()))
            }
            (NodeKind::UnaryOp, Label::Unary(op)) => {
                let v = self.expr(node.children[0], env)?;
                match op {
                    UnaryOp::Neg => Ok(Value::Int(int(v)?.checked_neg().ok_or(Fault::Overflow)?)),
                    UnaryOp::Not => Ok(Value::Bool(!boolean(v)?)),
                }
            }
            (NodeKind::BinOp, Label::Bin(op)) => {
                let (l, r) = (node.children[0], node.children[1]);
                match op {
                    BinOp::And => {
                        if !boolean(self.expr(l, env)?)? {
                            return Ok(Value::Bool(false));
                        }
                        Ok(Value::Bool(boolean(self.expr(r, env)?)?))
                    }
                    BinOp::Or => {
                        if boolean(self.expr(l, env)?)? {
                            return Ok(Value::Bool(true));
                        }
                        Ok(Value::Bool(boolean(self.expr(r, env)?)?))
                    }
                    _ => {
                        let a = self.expr(l, env)?;
                        let b = self.expr(r, env)?;
                        binary(*op, a, b)
                    }
                }
            }
            (NodeKind::Call, Label::Name(name)) => {
                let func = ast
                    .function_named(name)
                    .ok_or_else(|| Fault::UnknownFunction(name.clone()))?;
                let mut args = Vec::with_capacity(node.children.len());
                for &c in &node.children {
                    args.push(self.expr(c, env)?);
                }
                self.call(func, &args)
            }
            _ => Err(Fault::TypeMismatch("not an expression")),
        }
    }
}

fn binary(op: BinOp, a: Value, b: Value) -> Result<Value, Fault> {
    Ok(match op {
        BinOp::Add => Value::Int(int(a)?.checked_add(int(b)?).ok_or(Fault::Overflow)?),
        BinOp::Sub => Value::Int(int(a)?.checked_sub(int(b)?).ok_or(Fault::Overflow)?),
        BinOp::Mul => Value::Int(int(a)?.checked_mul(int(b)?).ok_or(Fault::Overflow)?),
        BinOp::FloorDiv => Value::Int(floor_div(int(a)?, int(b)?)?),
        BinOp::Mod => Value::Int(floor_mod(int(a)?, int(b)?)?),
        BinOp::Lt => Value::Bool(int(a)? < int(b)?),
        BinOp::Le => Value::Bool(int(a)? <= int(b)?),
        BinOp::Eq => Value::Bool(a == b),
        BinOp::Ne => Value::Bool(a != b),
        BinOp::And | BinOp::Or => unreachable!("short-circuit operators are handled by the caller"),
    })
}

/// Runs the entry function on `args`, recording its executed statements.
pub fn run(program: &Program, args: &[Value], step_limit: usize) -> RunResult {
    let mut it = Interpreter {
        ast: &program.ast,
        steps: 0,
        limit: step_limit,
        events: Vec::new(),
        depth: 0,
    };
    let result = it.call(Ast::ROOT, args);
    RunResult {
        events: it.events,
        result,
    }
}

/// Executes one test case against the program.
pub fn execute(program: &Program, test: &TestCase, step_limit: usize) -> Result<ExecutionTrace, ExecError> {
    if step_limit == 0 {
        return Err(ExecError::InvalidStepLimit);
    }
    if test.call_target != program.entry_name() {
        return Err(ExecError::UnknownFunction(test.call_target.clone()));
    }
    let expected = program.entry_params().len();
    if expected != test.args.len() {
        return Err(ExecError::ArityMismatch {
            expected,
            found: test.args.len(),
        });
    }
    let run = run(program, &test.args, step_limit);
    let (outcome, returned, fault) = match run.result {
        Ok(v) if v == test.expected => (Outcome::Passed, Some(v), None),
        Ok(v) => (Outcome::AssertionFailed, Some(v), None),
        Err(Fault::StepLimit) => (Outcome::StepLimitExceeded, None, Some(Fault::StepLimit)),
        Err(f) => (Outcome::RuntimeError, None, Some(f)),
    };
    Ok(ExecutionTrace {
        events: run.events,
        outcome,
        returned,
        fault,
    })
}
