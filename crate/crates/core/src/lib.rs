#![no_std]
extern crate alloc;

pub mod frontend;
pub mod cpg;
pub mod exec;
pub mod corpus;
pub mod numerics;
pub mod gnn;
pub mod lm;
pub mod train;
pub mod eval;
pub mod selfcheck;
