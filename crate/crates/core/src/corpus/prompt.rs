//! Instruction prompt rendering.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::cpg::Cpg;
use crate::exec::Branch;
use crate::frontend::Program;

/// Number of graph-pad placeholders in a prompt with an available mask.
pub const N_GRAPH_SLOTS: usize = 32;
pub const GRAPH_PAD: &str = "<|graph_pad|>";
pub const NOT_AVAILABLE: &str = "Not available";

pub const HEADER_TASK: &str = "# Write one check test that executes the specified branch of the module.";
pub const HEADER_SOURCE: &str = "## Module Source:";
pub const HEADER_BRANCH: &str = "## Execution Branches Information (Line to Line executed):";
pub const HEADER_GRAPH: &str = "## Code Property Graph (CPG) Node Embeddings:";
pub const HEADER_HINT: &str = "## Here's how to call the target function:";

pub const SECTION_HEADERS: [&str; 5] = [HEADER_TASK, HEADER_SOURCE, HEADER_BRANCH, HEADER_GRAPH, HEADER_HINT];

/// `check f(a, b) ==`
pub fn invocation_hint(program: &Program) -> String {
    format!("check {}({}) ==", program.entry_name(), program.entry_params().join(", "))
}

fn join_numbers(xs: impl Iterator<Item = usize>, sep: &str) -> String {
    xs.map(|x| x.to_string()).collect::<Vec<_>>().join(sep)
}

/// Renders the prompt for one (program, branch) pair. With `graph_available`
/// the graph section holds `N_GRAPH_SLOTS` pad tokens, else `Not available`.
pub fn render_prompt(program: &Program, cpg: &Cpg, branch: &Branch, graph_available: bool, hint: &str) -> String {
    let mut out = String::new();
    out.push_str(HEADER_TASK);
    out.push('\n');
    out.push_str(HEADER_SOURCE);
    out.push('\n');
    out.push_str(&program.source.text);
    if !program.source.text.ends_with('\n') {
        out.push('\n');
    }
    out.push_str(HEADER_BRANCH);
    out.push('\n');
    out.push_str("lines: ");
    out.push_str(&join_numbers(branch.line_set.iter().copied(), ", "));
    out.push('\n');
    out.push_str("path: ");
    out.push_str(&join_numbers(branch.line_path(cpg).into_iter(), " -> "));
    out.push('\n');
    out.push_str(HEADER_GRAPH);
    out.push('\n');
    if graph_available {
        out.push_str(&GRAPH_PAD.repeat(N_GRAPH_SLOTS));
    } else {
        out.push_str(NOT_AVAILABLE);
    }
    out.push('\n');
    out.push_str(HEADER_HINT);
    out.push('\n');
    out.push_str(hint);
    out.push('\n');
    out
}

/// Swaps the graph section of an already rendered prompt to `Not available`.
pub fn without_graph(prompt: &str) -> String {
    prompt.replace(&GRAPH_PAD.repeat(N_GRAPH_SLOTS), NOT_AVAILABLE)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cpg::build_cpg;
    use crate::exec::enumerate_branches;

    fn sample() -> (Program, Cpg, Branch) {
        let p = Program::parse("t", "def f(a, b):\n  if a < b:\n    return a\n  return b\n").unwrap();
        let g = build_cpg(&p);
        let b = enumerate_branches(&g, 2, 10).branches[1].clone();
        (p, g, b)
    }

    #[test]
    fn sections_in_order() {
        let (p, g, b) = sample();
        let hint = invocation_hint(&p);
        assert_eq!(hint, "check f(a, b) ==");
        let text = render_prompt(&p, &g, &b, true, &hint);
        let mut last = 0;
        for h in SECTION_HEADERS {
            let at = text.find(h).unwrap();
            assert!(at >= last);
            last = at;
        }
        assert!(text.contains("lines: 2, 4\npath: 2 -> 4\n"));
        assert_eq!(text.matches(GRAPH_PAD).count(), N_GRAPH_SLOTS);
        assert!(!text.contains(NOT_AVAILABLE));
        assert!(text.ends_with("check f(a, b) ==\n"));
    }

    #[test]
    fn unavailable_graph() {
        let (p, g, b) = sample();
        let text = render_prompt(&p, &g, &b, false, "check f(a, b) ==");
        assert_eq!(text.matches(GRAPH_PAD).count(), 0);
        assert_eq!(text.matches(NOT_AVAILABLE).count(), 1);
        assert_eq!(without_graph(&render_prompt(&p, &g, &b, true, "check f(a, b) ==")), text);
    }

    #[test]
    fn deterministic() {
        let (p, g, b) = sample();
        assert_eq!(render_prompt(&p, &g, &b, true, "h"), render_prompt(&p, &g, &b, true, "h"));
    }
}
