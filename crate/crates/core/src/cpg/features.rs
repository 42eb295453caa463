//! Node feature vectors: hashed token bag, kind one-hot, position metadata.

use core::hash::Hasher;

use fnv::FnvHasher;

use crate::frontend::{tokenize, Ast, NodeId, SourceProgram, TokenKind};

pub const TOKEN_BUCKETS: usize = 64;
pub const KIND_SLOTS: usize = 12;
pub const POSITION_SLOTS: usize = 4;
pub const FEATURE_DIM: usize = TOKEN_BUCKETS + KIND_SLOTS + POSITION_SLOTS;

const HASH_SEED: &[u8] = b"branchforge.tokens.v1";

fn bucket(lexeme: &str) -> usize {
    let mut h = FnvHasher::default();
    h.write(HASH_SEED);
    h.write(lexeme.as_bytes());
    (h.finish() % TOKEN_BUCKETS as u64) as usize
}

/// Feature vector of one node:
/// `[64 token buckets (L2-normalized counts) | 12 kind one-hot | order/32,
/// line_start/line_count, line_end/line_count, depth/16]`.
pub fn encode_node_features(ast: &Ast, id: NodeId, program: &SourceProgram) -> [f64; FEATURE_DIM] {
    let node = ast.node(id);
    let mut x = [0.0; FEATURE_DIM];

    let (start, end) = node.span;
    let slice = program.text.get(start..end).unwrap_or("");
    if let Ok(tokens) = tokenize(slice) {
        for t in tokens {
            if matches!(t.kind, TokenKind::Newline | TokenKind::Indent(_)) {
                continue;
            }
            x[bucket(t.lexeme(slice))] += 1.0;
        }
    }
    let norm = libm::sqrt(x[..TOKEN_BUCKETS].iter().map(|v| v * v).sum::<f64>());
    if norm > 0.0 {
        for v in &mut x[..TOKEN_BUCKETS] {
            *v /= norm;
        }
    }

    let code = node.kind.code() as usize;
    if code < KIND_SLOTS {
        x[TOKEN_BUCKETS + code] = 1.0;
    }

    let lines = program.line_count.max(1) as f64;
    let p = TOKEN_BUCKETS + KIND_SLOTS;
    x[p] = (node.order as f64 / 32.0).clamp(0.0, 1.0);
    x[p + 1] = node.line_start as f64 / lines;
    x[p + 2] = node.line_end as f64 / lines;
    x[p + 3] = (ast.depth(id) as f64 / 16.0).clamp(0.0, 1.0);
    x
}
