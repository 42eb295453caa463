//! Random MiniLang program generator.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::CorpusError;
use crate::frontend::{pretty_print_program, NodeKind, Program, SourceProgram};

/// Knobs of the program generator. Weights are relative, not normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct GenConfig {
    pub min_params: usize,
    pub max_params: usize,
    pub bool_param_prob: f64,
    pub min_decisions: usize,
    pub max_decisions: usize,
    /// Relative weight of each decision count from `min_decisions` upward.
    pub decision_weights: [u32; 3],
    pub loop_prob: f64,
    pub elif_prob: f64,
    pub else_prob: f64,
    pub nest_prob: f64,
    pub return_arm_prob: f64,
    pub int_min: i64,
    pub int_max: i64,
    pub max_lines: usize,
    /// add, sub, mul, floordiv, mod
    pub arith_weights: [u32; 5],
    /// lt, le, eq, ne
    pub cmp_weights: [u32; 4],
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            min_params: 1,
            max_params: 4,
            bool_param_prob: 0.25,
            min_decisions: 1,
            max_decisions: 3,
            decision_weights: [1, 3, 4],
            loop_prob: 0.5,
            elif_prob: 0.5,
            else_prob: 0.8,
            nest_prob: 0.2,
            return_arm_prob: 0.3,
            int_min: -8,
            int_max: 8,
            max_lines: 40,
            arith_weights: [4, 3, 2, 1, 1],
            cmp_weights: [4, 2, 2, 1],
        }
    }
}

impl GenConfig {
    /// Flat `key=value` description, stable across runs.
    pub fn describe(&self) -> Vec<(String, String)> {
        let w = |ws: &[u32]| ws.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(",");
        vec![
            ("params".into(), format!("{}..{}", self.min_params, self.max_params)),
            ("bool_param_prob".into(), format!("{}", self.bool_param_prob)),
            ("decisions".into(), format!("{}..{}", self.min_decisions, self.max_decisions)),
            ("decision_weights".into(), w(&self.decision_weights)),
            ("loop_prob".into(), format!("{}", self.loop_prob)),
            ("elif_prob".into(), format!("{}", self.elif_prob)),
            ("else_prob".into(), format!("{}", self.else_prob)),
            ("nest_prob".into(), format!("{}", self.nest_prob)),
            ("return_arm_prob".into(), format!("{}", self.return_arm_prob)),
            ("int_domain".into(), format!("{}..{}", self.int_min, self.int_max)),
            ("max_lines".into(), format!("{}", self.max_lines)),
            ("arith_weights".into(), w(&self.arith_weights)),
            ("cmp_weights".into(), w(&self.cmp_weights)),
        ]
    }
}

const PARAM_NAMES: [&str; 4] = ["a", "b", "c", "d"];

fn pick<'a, R: Rng>(rng: &mut R, items: &[&'a str]) -> &'a str {
    items[rng.random_range(0..items.len())]
}

fn weighted<R: Rng>(rng: &mut R, weights: &[u32]) -> usize {
    let total: u32 = weights.iter().sum();
    let mut r = rng.random_range(0..total.max(1));
    for (i, &w) in weights.iter().enumerate() {
        if r < w {
            return i;
        }
        r -= w;
    }
    weights.len() - 1
}

struct Gen<'c, R> {
    rng: R,
    cfg: &'c GenConfig,
    ints: Vec<&'static str>,
    bools: Vec<&'static str>,
    lines: Vec<String>,
    decisions_left: usize,
    x_ready: bool,
    /// Parameter reserved as the loop bound, kept out of other expressions.
    loop_var: Option<&'static str>,
}

impl<R: Rng> Gen<'_, R> {
    fn emit(&mut self, indent: usize, text: String) {
        let mut line = " ".repeat(2 * indent);
        line.push_str(&text);
        self.lines.push(line);
    }

    fn small_literal(&mut self) -> String {
        let hi = self.cfg.int_max.clamp(1, 5);
        let lo = self.cfg.int_min.clamp(-3, 0);
        let v = if self.rng.random_bool(0.85) {
            self.rng.random_range(0..=hi)
        } else {
            self.rng.random_range(lo..=0)
        };
        format!("{v}")
    }

    /// An int-valued operand usable in conditions.
    fn int_var(&mut self) -> &'static str {
        let mut pool = self.ints.clone();
        if self.x_ready {
            pool.push("x");
        }
        pick(&mut self.rng, &pool)
    }

    fn distinct_pair(&mut self) -> (&'static str, &'static str) {
        let l = self.int_var();
        for _ in 0..4 {
            let r = self.int_var();
            if r != l {
                return (l, r);
            }
        }
        (l, "1")
    }

    fn arith(&mut self) -> String {
        let v = self.int_var();
        let op = weighted(&mut self.rng, &self.cfg.arith_weights);
        let other = self.int_var();
        let rhs = if other != v && self.rng.random_bool(0.5) {
            other.to_string()
        } else {
            format!("{}", self.rng.random_range(1..=5))
        };
        match op {
            0 => format!("{v} + {rhs}"),
            1 => format!("{v} - {rhs}"),
            2 => format!("{v} * {}", self.rng.random_range(2..=3)),
            3 => format!("{v} // {}", self.rng.random_range(2..=3)),
            _ => format!("{v} % {}", self.rng.random_range(2..=4)),
        }
    }

    fn int_cond(&mut self) -> String {
        let cmp = ["<", "<=", "==", "!="][weighted(&mut self.rng, &self.cfg.cmp_weights)];
        if self.rng.random_range(0..6) == 0 {
            // parity tests compare against 0 or 1 only
            let v = self.int_var();
            let op = if self.rng.random_bool(0.5) { "==" } else { "!=" };
            return format!("{v} % 2 {op} {}", self.rng.random_range(0..=1));
        }
        let lhs = if self.rng.random_range(0..5) == 0 {
            let (l, r) = self.distinct_pair();
            format!("{l} + {r}")
        } else {
            self.int_var().to_string()
        };
        let other = self.int_var();
        let rhs = if self.rng.random_bool(0.7) || lhs.contains(other) {
            self.small_literal()
        } else {
            other.to_string()
        };
        // there is no `>`; flip sides instead
        if cmp == "<" && self.rng.random_bool(0.3) {
            format!("{rhs} < {lhs}")
        } else {
            format!("{lhs} {cmp} {rhs}")
        }
    }

    fn cond(&mut self) -> String {
        if self.bools.is_empty() || self.rng.random_bool(0.6) {
            return self.int_cond();
        }
        let b = pick(&mut self.rng, &self.bools.clone());
        match self.rng.random_range(0..4) {
            0 => b.to_string(),
            1 => format!("not {b}"),
            2 => format!("{b} and {}", self.int_cond()),
            _ => format!("{} or {b}", self.int_cond()),
        }
    }

    fn arm(&mut self, indent: usize, may_return: bool) {
        if self.decisions_left > 0 && indent < 3 && self.rng.random_bool(self.cfg.nest_prob) {
            self.if_stmt(indent, false);
            return;
        }
        if may_return && self.rng.random_bool(self.cfg.return_arm_prob) {
            let e = self.arith();
            self.emit(indent, format!("return {e}"));
        } else {
            let e = self.arith();
            self.emit(indent, format!("x = {e}"));
        }
    }

    fn if_stmt(&mut self, indent: usize, may_return: bool) {
        self.decisions_left -= 1;
        let c = self.cond();
        self.emit(indent, format!("if {c}:"));
        self.arm(indent + 1, may_return);
        if self.rng.random_bool(self.cfg.elif_prob) {
            let c = self.cond();
            self.emit(indent, format!("elif {c}:"));
            self.arm(indent + 1, false);
        }
        if self.rng.random_bool(self.cfg.else_prob) {
            self.emit(indent, "else:".into());
            self.arm(indent + 1, false);
        }
    }

    fn while_stmt(&mut self) {
        let bound = self.loop_var.unwrap_or("a");
        self.emit(1, "i = 0".into());
        self.emit(1, format!("while i < {bound}:"));
        if self.decisions_left > 0 && self.rng.random_bool(0.4) {
            self.if_stmt(2, false);
        } else {
            let e = self.arith();
            self.emit(2, format!("x = {e}"));
        }
        self.emit(2, "i = i + 1".into());
    }

    fn program(&mut self) -> String {
        let with_loop = self.rng.random_bool(self.cfg.loop_prob);
        let mut n = self.rng.random_range(self.cfg.min_params..=self.cfg.max_params);
        if with_loop {
            n = n.max(2).min(PARAM_NAMES.len());
        }
        let mut params = Vec::with_capacity(n);
        for (i, &name) in PARAM_NAMES.iter().take(n).enumerate() {
            if with_loop && i == n - 1 {
                self.loop_var = Some(name);
            } else if i > 0 && self.rng.random_bool(self.cfg.bool_param_prob) {
                // the first parameter is always an integer
                self.bools.push(name);
            } else {
                self.ints.push(name);
            }
            params.push(name);
        }
        self.emit(0, format!("def f({}):", params.join(", ")));
        let first = self.arith();
        self.emit(1, format!("x = {first}"));
        self.x_ready = true;

        let span = self.cfg.max_decisions.saturating_sub(self.cfg.min_decisions) + 1;
        let weights = &self.cfg.decision_weights[..span.min(3)];
        self.decisions_left = self.cfg.min_decisions + weighted(&mut self.rng, weights);
        let loop_at = self.rng.random_range(0..=self.decisions_left);
        let mut slot = 0;
        while self.decisions_left > 0 || (with_loop && slot <= loop_at) {
            if with_loop && slot == loop_at {
                self.while_stmt();
            }
            if self.decisions_left > 0 {
                // only the first top-level decision may return early
                self.if_stmt(1, slot == 0);
            }
            slot += 1;
        }
        let tail = if self.rng.random_bool(0.7) {
            "x".to_string()
        } else {
            self.arith()
        };
        self.emit(1, format!("return {tail}"));
        let mut text = self.lines.join("\n");
        text.push('\n');
        text
    }
}

/// Number of If statements (decisions) and While statements (loops).
fn shape(p: &Program) -> (usize, usize) {
    let count = |k| p.ast.nodes.iter().filter(|n| n.kind == k).count();
    (count(NodeKind::If), count(NodeKind::While))
}

/// Generates `count` distinct programs, deterministic in `seed`.
pub fn generate_programs(seed: u64, count: usize, cfg: &GenConfig) -> Result<Vec<SourceProgram>, CorpusError> {
    if count == 0 {
        return Err(CorpusError::InvalidConfig("program count must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0usize;
    while out.len() < count {
        if attempts >= 100 * count {
            return Err(CorpusError::GenerationExhausted {
                wanted: count,
                produced: out.len(),
            });
        }
        attempts += 1;
        let mut g = Gen {
            rng: ChaCha8Rng::seed_from_u64(rng.random()),
            cfg,
            ints: Vec::new(),
            bools: Vec::new(),
            lines: Vec::new(),
            decisions_left: 0,
            x_ready: false,
            loop_var: None,
        };
        let raw = g.program();
        let Ok(parsed) = Program::parse("candidate", raw) else {
            continue;
        };
        let text = pretty_print_program(&parsed.ast);
        let (decisions, loops) = shape(&parsed);
        if !(cfg.min_decisions..=cfg.max_decisions).contains(&decisions)
            || loops > 1
            || parsed.source.line_count > cfg.max_lines
        {
            continue;
        }
        if seen.insert(text.clone()) {
            out.push(SourceProgram::new(format!("p{:04}", out.len()), text));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cpg::build_cpg;
    use crate::exec::enumerate_branches;

    #[test]
    fn deterministic_and_seed_sensitive() {
        let cfg = GenConfig::default();
        let a = generate_programs(0, 1, &cfg).unwrap();
        let b = generate_programs(0, 1, &cfg).unwrap();
        let c = generate_programs(1, 1, &cfg).unwrap();
        assert_eq!(a, b);
        assert_ne!(a[0].text, c[0].text);
    }

    #[test]
    fn two_hundred_programs() {
        let cfg = GenConfig::default();
        let progs = generate_programs(3, 200, &cfg).unwrap();
        let texts: BTreeSet<&str> = progs.iter().map(|p| p.text.as_str()).collect();
        assert_eq!(texts.len(), 200);
        let mut branches = 0;
        for sp in &progs {
            let p = Program::parse(sp.name.clone(), sp.text.clone()).unwrap();
            let params = p.entry_params().len();
            assert!((1..=4).contains(&params));
            let (d, l) = shape(&p);
            assert!((1..=3).contains(&d) && l <= 1);
            assert!(sp.line_count <= 40);
            branches += enumerate_branches(&build_cpg(&p), 2, 1000).total();
        }
        assert!(branches as f64 / 200.0 >= 2.0);
    }

    #[test]
    fn zero_count_rejected() {
        assert!(generate_programs(0, 0, &GenConfig::default()).is_err());
    }

    #[test]
    fn exhaustion_reported() {
        let cfg = GenConfig {
            min_params: 1,
            max_params: 1,
            min_decisions: 1,
            max_decisions: 1,
            loop_prob: 0.0,
            elif_prob: 0.0,
            else_prob: 0.0,
            nest_prob: 0.0,
            // the smallest program with one If has five lines
            max_lines: 4,
            ..GenConfig::default()
        };
        assert!(matches!(
            generate_programs(0, 3, &cfg),
            Err(CorpusError::GenerationExhausted { .. })
        ));
    }
}
