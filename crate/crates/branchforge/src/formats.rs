//! Versioned text formats: hexadecimal floats, run-length masks, dataset
//! and manifest files, checkpoints, graphs and trace dumps.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use branchforge_core::cpg::{BranchMask, Cpg, CpgNode, Edge, Relation, FEATURE_DIM};
use branchforge_core::exec::ExecutionTrace;
use branchforge_core::frontend::NodeKind;
use branchforge_core::gnn::{BranchAgg, GnnConfig, RelationPool, Variant};
use branchforge_core::lm::LmConfig;
use branchforge_core::numerics::{ParameterStore, Tensor};
use serde::{Deserialize, Serialize};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FormatError {
    #[error("MalformedFile: {what} line {line}: {reason}")]
    Malformed { what: &'static str, line: usize, reason: String },
    #[error("UnsupportedVersion: {what} has format_version {found}")]
    UnsupportedVersion { what: &'static str, found: String },
}

fn malformed(what: &'static str, line: usize, reason: impl Into<String>) -> FormatError {
    FormatError::Malformed { what, line, reason: reason.into() }
}

/// C99-style hexadecimal literal (`0x1.8p+1`), exact for every finite value.
pub fn hex_f64(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf" } else { "-inf" }.into();
    }
    let bits = x.to_bits();
    let sign = if bits >> 63 == 1 { "-" } else { "" };
    let exp = ((bits >> 52) & 0x7ff) as i32;
    let mant = bits & ((1u64 << 52) - 1);
    let (lead, e) = match (exp, mant) {
        (0, 0) => return format!("{sign}0x0p+0"),
        (0, _) => (0, -1022),
        _ => (1, exp - 1023),
    };
    let mut digits = format!("{mant:013x}");
    while digits.ends_with('0') {
        digits.pop();
    }
    let dot = if digits.is_empty() { "" } else { "." };
    format!("{sign}0x{lead}{dot}{digits}p{e:+}")
}

pub fn parse_hex_f64(s: &str) -> Option<f64> {
    match s {
        "nan" => Some(f64::NAN),
        "inf" => Some(f64::INFINITY),
        "-inf" => Some(f64::NEG_INFINITY),
        _ => hexf_parse::parse_hexf64(s, false).ok(),
    }
}

/// Runs as `bit*count`, comma separated, e.g. `0*3,1*2`.
pub fn rle_encode(bits: &[bool]) -> String {
    let mut out = String::new();
    let mut i = 0;
    while i < bits.len() {
        let b = bits[i];
        let run = bits[i..].iter().take_while(|&&x| x == b).count();
        if !out.is_empty() {
            out.push(',');
        }
        let _ = write!(out, "{}*{run}", u8::from(b));
        i += run;
    }
    out
}

pub fn rle_decode(s: &str) -> Option<Vec<bool>> {
    let mut bits = Vec::new();
    if s.is_empty() {
        return Some(bits);
    }
    for run in s.split(',') {
        let (b, n) = run.split_once('*')?;
        let b = match b {
            "0" => false,
            "1" => true,
            _ => return None,
        };
        let n: usize = n.parse().ok().filter(|&n| n > 0)?;
        bits.extend(std::iter::repeat_n(b, n));
    }
    Some(bits)
}

#[derive(Serialize, Deserialize)]
struct VersionLine {
    format_version: u32,
}

fn version_line() -> String {
    serde_json::to_string(&VersionLine { format_version: FORMAT_VERSION }).expect("plain struct")
}

/// Checks the leading version record and returns the remaining lines with
/// their 1-based numbers.
fn json_body<'a>(what: &'static str, text: &'a str) -> Result<impl Iterator<Item = (usize, &'a str)>, FormatError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, first) = lines.next().ok_or_else(|| malformed(what, 1, "empty file"))?;
    let v: VersionLine = serde_json::from_str(first).map_err(|e| malformed(what, 1, e.to_string()))?;
    if v.format_version != FORMAT_VERSION {
        return Err(FormatError::UnsupportedVersion { what, found: v.format_version.to_string() });
    }
    Ok(lines.filter(|(_, l)| !l.trim().is_empty()))
}

/// One dataset record as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordLine {
    pub id: usize,
    pub program: String,
    pub prompt: String,
    pub branch_id: u64,
    pub line_path: Vec<usize>,
    pub mask: String,
    pub test_source: String,
    pub split: String,
}

pub fn write_records(records: &[RecordLine]) -> String {
    let mut out = version_line();
    out.push('\n');
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("plain struct"));
        out.push('\n');
    }
    out
}

pub fn read_records(text: &str) -> Result<Vec<RecordLine>, FormatError> {
    json_body("dataset", text)?
        .map(|(n, l)| serde_json::from_str(l).map_err(|e| malformed("dataset", n, e.to_string())))
        .collect()
}

/// `key: value` lines after a `format_version: 1` header. Keys keep their
/// order.
pub fn write_header_file(entries: &[(String, String)]) -> String {
    let mut out = format!("format_version: {FORMAT_VERSION}\n");
    for (k, v) in entries {
        let _ = writeln!(out, "{k}: {v}");
    }
    out
}

pub fn read_header_file(what: &'static str, text: &str) -> Result<Vec<(String, String)>, FormatError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.trim() == format!("format_version: {FORMAT_VERSION}") => {}
        Some((_, l)) => {
            let found = l.strip_prefix("format_version:").map_or(l, str::trim);
            return Err(FormatError::UnsupportedVersion { what, found: found.into() });
        }
        None => return Err(malformed(what, 1, "empty file")),
    }
    lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let (k, v) = l.split_once(": ").ok_or_else(|| malformed(what, i + 1, "expected `key: value`"))?;
            Ok((k.to_string(), v.to_string()))
        })
        .collect()
}

/// Flat description of a model configuration.
pub fn model_config_entries(gnn: &GnnConfig, lm: &LmConfig) -> BTreeMap<String, String> {
    let mut m = BTreeMap::new();
    let mut put = |k: &str, v: String| {
        m.insert(k.to_string(), v);
    };
    put("gnn.variant", gnn.variant.as_str().into());
    put("gnn.branch_agg", gnn.branch_agg.as_str().into());
    put("gnn.relation_pool", gnn.relation_pool.as_str().into());
    put("gnn.layers", gnn.layers.to_string());
    put("gnn.d_in", gnn.d_in.to_string());
    put("gnn.d_h", gnn.d_h.to_string());
    put("gnn.heads", gnn.heads.to_string());
    put("lm.layers", lm.layers.to_string());
    put("lm.d_model", lm.d_model.to_string());
    put("lm.heads", lm.heads.to_string());
    put("lm.max_seq", lm.max_seq.to_string());
    put("lm.d_ff", lm.d_ff.to_string());
    put("lm.d_graph", lm.d_graph.to_string());
    put("lm.use_projection", lm.use_projection.to_string());
    m
}

pub fn model_config_from_entries(m: &BTreeMap<String, String>) -> Result<(GnnConfig, LmConfig), String> {
    fn get<'a>(m: &'a BTreeMap<String, String>, k: &str) -> Result<&'a str, String> {
        m.get(k).map(String::as_str).ok_or_else(|| format!("missing {k}"))
    }
    fn num(m: &BTreeMap<String, String>, k: &str) -> Result<usize, String> {
        get(m, k)?.parse().map_err(|_| format!("bad {k}"))
    }
    let gnn = GnnConfig {
        layers: num(m, "gnn.layers")?,
        d_in: num(m, "gnn.d_in")?,
        d_h: num(m, "gnn.d_h")?,
        heads: num(m, "gnn.heads")?,
        variant: Variant::parse(get(m, "gnn.variant")?).ok_or("bad gnn.variant")?,
        relation_pool: RelationPool::parse(get(m, "gnn.relation_pool")?).ok_or("bad gnn.relation_pool")?,
        branch_agg: BranchAgg::parse(get(m, "gnn.branch_agg")?).ok_or("bad gnn.branch_agg")?,
    };
    let lm = LmConfig {
        layers: num(m, "lm.layers")?,
        d_model: num(m, "lm.d_model")?,
        heads: num(m, "lm.heads")?,
        max_seq: num(m, "lm.max_seq")?,
        d_ff: num(m, "lm.d_ff")?,
        d_graph: num(m, "lm.d_graph")?,
        use_projection: get(m, "lm.use_projection")?.parse().map_err(|_| "bad lm.use_projection")?,
    };
    Ok((gnn, lm))
}

#[derive(Serialize, Deserialize)]
struct ConfigLine {
    config: BTreeMap<String, String>,
    step: u64,
}

#[derive(Serialize, Deserialize)]
struct ParamLine {
    name: String,
    shape: Vec<usize>,
    data: Vec<String>,
}

/// Parameters in store order with hexadecimal payloads, after the model
/// configuration and optimizer step count.
pub fn write_checkpoint(store: &ParameterStore, config: &BTreeMap<String, String>) -> String {
    let mut out = version_line();
    out.push('\n');
    let head = ConfigLine { config: config.clone(), step: store.step_count() };
    out.push_str(&serde_json::to_string(&head).expect("plain struct"));
    out.push('\n');
    for id in store.ids() {
        let v = store.value(id);
        let line = ParamLine { name: store.name(id).into(), shape: v.shape.clone(), data: v.data.iter().map(|&x| hex_f64(x)).collect() };
        out.push_str(&serde_json::to_string(&line).expect("plain struct"));
        out.push('\n');
    }
    out
}

pub fn read_checkpoint(text: &str) -> Result<(ParameterStore, BTreeMap<String, String>), FormatError> {
    const W: &str = "checkpoint";
    let mut body = json_body(W, text)?;
    let (n, first) = body.next().ok_or_else(|| malformed(W, 2, "missing config record"))?;
    let head: ConfigLine = serde_json::from_str(first).map_err(|e| malformed(W, n, e.to_string()))?;
    let mut store = ParameterStore::new();
    for (n, l) in body {
        let p: ParamLine = serde_json::from_str(l).map_err(|e| malformed(W, n, e.to_string()))?;
        let data = p
            .data
            .iter()
            .map(|s| parse_hex_f64(s).ok_or_else(|| malformed(W, n, format!("bad float {s}"))))
            .collect::<Result<Vec<f64>, _>>()?;
        let t = Tensor::new(p.shape, data).map_err(|e| malformed(W, n, e.to_string()))?;
        store.add(p.name, t).map_err(|e| malformed(W, n, e.to_string()))?;
    }
    store.set_step_count(head.step);
    Ok((store, head.config))
}

#[derive(Serialize, Deserialize)]
struct CpgHeader {
    nodes: usize,
    d: usize,
    r: usize,
    line_count: usize,
}

#[derive(Serialize, Deserialize)]
struct NodeLine {
    id: usize,
    kind: u8,
    lines: [usize; 2],
    order: usize,
    depth: usize,
    features: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct EdgeLine {
    rel: usize,
    src: usize,
    dst: usize,
}

pub fn write_cpg(cpg: &Cpg) -> String {
    let mut out = version_line();
    out.push('\n');
    let head = CpgHeader { nodes: cpg.len(), d: FEATURE_DIM, r: Relation::COUNT, line_count: cpg.line_count };
    out.push_str(&serde_json::to_string(&head).expect("plain struct"));
    out.push('\n');
    for n in &cpg.nodes {
        let line = NodeLine {
            id: n.id,
            kind: n.kind_code(),
            lines: [n.line_start, n.line_end],
            order: n.order,
            depth: n.depth,
            features: cpg.feature_row(n.id).iter().map(|&x| hex_f64(x)).collect(),
        };
        out.push_str(&serde_json::to_string(&line).expect("plain struct"));
        out.push('\n');
    }
    for rel in Relation::ALL {
        for e in cpg.edges(rel) {
            out.push_str(&serde_json::to_string(&EdgeLine { rel: rel as usize, src: e.src, dst: e.dst }).expect("plain struct"));
            out.push('\n');
        }
    }
    out
}

pub fn read_cpg(text: &str) -> Result<Cpg, FormatError> {
    const W: &str = "cpg";
    let mut body = json_body(W, text)?;
    let (n, first) = body.next().ok_or_else(|| malformed(W, 2, "missing header"))?;
    let head: CpgHeader = serde_json::from_str(first).map_err(|e| malformed(W, n, e.to_string()))?;
    if head.d != FEATURE_DIM || head.r != Relation::COUNT {
        return Err(malformed(W, n, format!("expected d={FEATURE_DIM} r={}", Relation::COUNT)));
    }
    let mut nodes = Vec::with_capacity(head.nodes);
    let mut features = Vec::with_capacity(head.nodes * FEATURE_DIM);
    let mut edges: [Vec<Edge>; Relation::COUNT] = Default::default();
    for (n, l) in body {
        if nodes.len() < head.nodes {
            let v: NodeLine = serde_json::from_str(l).map_err(|e| malformed(W, n, e.to_string()))?;
            let kind = NodeKind::from_code(v.kind).ok_or_else(|| malformed(W, n, "unknown node kind"))?;
            if v.id != nodes.len() || v.features.len() != FEATURE_DIM {
                return Err(malformed(W, n, "node ids must be dense and rows full width"));
            }
            for s in &v.features {
                features.push(parse_hex_f64(s).ok_or_else(|| malformed(W, n, format!("bad float {s}")))?);
            }
            nodes.push(CpgNode { id: v.id, kind, line_start: v.lines[0], line_end: v.lines[1], order: v.order, depth: v.depth });
        } else {
            let e: EdgeLine = serde_json::from_str(l).map_err(|e| malformed(W, n, e.to_string()))?;
            if e.rel >= Relation::COUNT || e.src >= head.nodes || e.dst >= head.nodes {
                return Err(malformed(W, n, "edge out of range"));
            }
            edges[e.rel].push(Edge { src: e.src, dst: e.dst });
        }
    }
    if nodes.len() != head.nodes {
        return Err(malformed(W, 0, "fewer nodes than the header states"));
    }
    Ok(Cpg { nodes, edges, features, line_count: head.line_count })
}

/// `node:line` per executed statement and a closing `outcome:` record.
pub fn write_trace(trace: &ExecutionTrace) -> String {
    let mut out = String::new();
    for e in &trace.events {
        let _ = writeln!(out, "{}:{}", e.node, e.line);
    }
    let _ = writeln!(out, "outcome: {}", trace.outcome.as_str());
    out
}

/// Mask text for a record file.
pub fn mask_text(mask: &BranchMask) -> String {
    rle_encode(&mask.bits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hex_literals() {
        assert_eq!(hex_f64(1.0), "0x1p+0");
        assert_eq!(hex_f64(3.0), "0x1.8p+1");
        assert_eq!(hex_f64(-0.1), "-0x1.999999999999ap-4");
        assert_eq!(hex_f64(0.0), "0x0p+0");
        assert_eq!(hex_f64(-0.0), "-0x0p+0");
        assert_eq!(hex_f64(f64::from_bits(1)), "0x0.0000000000001p-1022");
        assert_eq!(parse_hex_f64("-0x0p+0").unwrap().to_bits(), (-0.0f64).to_bits());
        assert!(parse_hex_f64("nan").unwrap().is_nan());
        assert_eq!(parse_hex_f64("1.5"), None);
    }

    #[test]
    fn rle_examples() {
        assert_eq!(rle_encode(&[false, false, true, true, true, false]), "0*2,1*3,0*1");
        assert_eq!(rle_encode(&[]), "");
        assert_eq!(rle_decode("1*2,0*1"), Some(vec![true, true, false]));
        assert_eq!(rle_decode("1*0"), None);
        assert_eq!(rle_decode("2*1"), None);
    }

    #[test]
    fn header_file_versions() {
        let text = write_header_file(&[("a".into(), "1".into()), ("b".into(), "x y".into())]);
        assert_eq!(text, "format_version: 1\na: 1\nb: x y\n");
        assert_eq!(read_header_file("m", &text).unwrap()[1], ("b".into(), "x y".into()));
        assert!(matches!(read_header_file("m", "format_version: 2\n"), Err(FormatError::UnsupportedVersion { .. })));
        assert!(read_records("{\"format_version\":3}\n").is_err());
    }

    #[test]
    fn model_config_round_trip() {
        let gnn = GnnConfig { variant: Variant::MeanSample, branch_agg: BranchAgg::GraphPool, ..GnnConfig::default() };
        let lm = LmConfig { use_projection: true, d_graph: 32, ..LmConfig::default() };
        let m = model_config_entries(&gnn, &lm);
        assert_eq!(model_config_from_entries(&m).unwrap(), (gnn, lm));
        let mut broken = m.clone();
        broken.remove("lm.d_ff");
        assert!(model_config_from_entries(&broken).is_err());
    }

    proptest! {
        #[test]
        fn hex_round_trip_is_bit_exact(bits in any::<u64>()) {
            let x = f64::from_bits(bits);
            prop_assume!(!x.is_nan());
            let back = parse_hex_f64(&hex_f64(x)).unwrap();
            prop_assert_eq!(back.to_bits(), bits);
        }

        #[test]
        fn rle_round_trip(bits in proptest::collection::vec(any::<bool>(), 0..200)) {
            prop_assert_eq!(rle_decode(&rle_encode(&bits)).unwrap(), bits);
        }
    }
}
