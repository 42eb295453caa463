//! Flat `key=value` configuration files and the resolved settings every
//! subcommand reads from.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;

use branchforge_core::corpus::Split;
use branchforge_core::gnn::{BranchAgg, Variant};
use branchforge_core::lm::DecodeMode;

use crate::error::CliError;

/// Parses `key=value` lines; `#` starts a comment line. Underscores in keys
/// are read as dashes so `weight_decay` and `weight-decay` agree.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| CliError::Usage(format!("config line {}: expected key=value", i + 1)))?;
        out.insert(k.trim().replace('_', "-"), v.trim().to_string());
    }
    Ok(out)
}

pub fn parse_decode(s: &str) -> Option<DecodeMode> {
    if s == "greedy" {
        return Some(DecodeMode::Greedy);
    }
    let t: f64 = s.strip_prefix("temp:")?.parse().ok()?;
    (t > 0.0 && t.is_finite()).then_some(DecodeMode::Temperature(t))
}

pub fn parse_seeds(s: &str) -> Option<Vec<u64>> {
    let seeds: Option<Vec<u64>> = s.split(',').map(|x| x.trim().parse().ok()).collect();
    seeds.filter(|v| !v.is_empty())
}

/// Everything a subcommand may need, after merging flags over the config
/// file over defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub data_dir: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    /// Unset means the subcommand's own default (7 for corpus work, 0 for
    /// training).
    pub seed: Option<u64>,
    pub programs: usize,
    pub delta: usize,
    pub variant: Variant,
    pub branch_agg: BranchAgg,
    pub decode: DecodeMode,
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub loop_bound: usize,
    pub split: Split,
    pub seeds: Vec<u64>,
    pub emit_plot_data: bool,
    pub dump_traces: bool,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            data_dir: None,
            out: None,
            checkpoint: None,
            seed: None,
            programs: 200,
            delta: 1000,
            variant: Variant::Attention,
            branch_agg: BranchAgg::NodeStack,
            decode: DecodeMode::Greedy,
            steps: 2000,
            batch: 8,
            lr: 3e-4,
            weight_decay: 1e-4,
            loop_bound: 2,
            split: Split::Test,
            seeds: vec![0, 1, 2],
            emit_plot_data: false,
            dump_traces: false,
        }
    }
}

/// Raw flag values; `None` defers to the config file.
#[derive(Debug, Clone, Default)]
pub struct FlagValues {
    pub values: BTreeMap<&'static str, String>,
    pub switches: BTreeMap<&'static str, bool>,
}

fn pick<T: FromStr>(key: &str, flags: &FlagValues, file: &BTreeMap<String, String>, default: T) -> Result<T, CliError> {
    match flags.values.get(key).or_else(|| file.get(key)) {
        Some(v) => v.parse().map_err(|_| CliError::Usage(format!("invalid value for {key}: {v}"))),
        None => Ok(default),
    }
}

fn pick_with<T>(key: &str, flags: &FlagValues, file: &BTreeMap<String, String>, default: T, parse: impl Fn(&str) -> Option<T>) -> Result<T, CliError> {
    match flags.values.get(key).or_else(|| file.get(key)) {
        Some(v) => parse(v).ok_or_else(|| CliError::Usage(format!("invalid value for {key}: {v}"))),
        None => Ok(default),
    }
}

impl Settings {
    /// Flags win over the file; the data directory falls back to
    /// `env_data` (the `BRANCHFORGE_DATA` variable).
    pub fn resolve(flags: &FlagValues, file: &BTreeMap<String, String>, env_data: Option<String>) -> Result<Self, CliError> {
        let d = Settings::default();
        let path = |k: &str| flags.values.get(k).or_else(|| file.get(k)).map(PathBuf::from);
        let switch = |k: &str| -> Result<bool, CliError> {
            if flags.switches.get(k).copied().unwrap_or(false) {
                return Ok(true);
            }
            file.get(k).map_or(Ok(false), |v| v.parse().map_err(|_| CliError::Usage(format!("invalid value for {k}: {v}"))))
        };
        let seed = match flags.values.get("seed").or_else(|| file.get("seed")) {
            Some(v) => Some(v.parse().map_err(|_| CliError::Usage(format!("invalid value for seed: {v}")))?),
            None => None,
        };
        let s = Settings {
            data_dir: path("data-dir").or_else(|| env_data.filter(|v| !v.is_empty()).map(PathBuf::from)),
            out: path("out"),
            checkpoint: path("checkpoint"),
            seed,
            programs: pick("programs", flags, file, d.programs)?,
            delta: pick("delta", flags, file, d.delta)?,
            variant: pick_with("variant", flags, file, d.variant, Variant::parse)?,
            branch_agg: pick_with("branch-agg", flags, file, d.branch_agg, BranchAgg::parse)?,
            decode: pick_with("decode", flags, file, d.decode, parse_decode)?,
            steps: pick("steps", flags, file, d.steps)?,
            batch: pick("batch", flags, file, d.batch)?,
            lr: pick("lr", flags, file, d.lr)?,
            weight_decay: pick("weight-decay", flags, file, d.weight_decay)?,
            loop_bound: pick("loop-bound", flags, file, d.loop_bound)?,
            split: pick_with("split", flags, file, d.split, Split::parse)?,
            seeds: pick_with("seeds", flags, file, d.seeds, parse_seeds)?,
            emit_plot_data: switch("emit-plot-data")?,
            dump_traces: switch("dump-traces")?,
        };
        if s.delta == 0 || s.steps == 0 || s.batch == 0 {
            return Err(CliError::Usage("delta, steps and batch must be at least 1".into()));
        }
        Ok(s)
    }

    pub fn require_data_dir(&self) -> Result<PathBuf, CliError> {
        self.data_dir.clone().ok_or_else(|| CliError::Usage("no data directory: pass --data-dir or set BRANCHFORGE_DATA".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flags(pairs: &[(&'static str, &str)]) -> FlagValues {
        FlagValues { values: pairs.iter().map(|&(k, v)| (k, v.to_string())).collect(), switches: BTreeMap::new() }
    }

    #[test]
    fn flags_override_file_override_defaults() {
        let file = parse_config("# run\nsteps = 50\nweight_decay=0.5\nlr=0.1\n").unwrap();
        let s = Settings::resolve(&flags(&[("lr", "0.2")]), &file, None).unwrap();
        assert_eq!((s.steps, s.weight_decay, s.lr, s.batch), (50, 0.5, 0.2, 8));
        assert_eq!(s.seed, None);
    }

    #[test]
    fn data_dir_falls_back_to_environment() {
        let s = Settings::resolve(&FlagValues::default(), &BTreeMap::new(), Some("/tmp/x".into())).unwrap();
        assert_eq!(s.data_dir, Some(PathBuf::from("/tmp/x")));
        let s = Settings::resolve(&flags(&[("data-dir", "/a")]), &BTreeMap::new(), Some("/tmp/x".into())).unwrap();
        assert_eq!(s.data_dir, Some(PathBuf::from("/a")));
        assert!(Settings::default().require_data_dir().is_err());
    }

    #[test]
    fn value_parsers() {
        assert_eq!(parse_decode("greedy"), Some(DecodeMode::Greedy));
        assert_eq!(parse_decode("temp:0.7"), Some(DecodeMode::Temperature(0.7)));
        assert_eq!(parse_decode("temp:0"), None);
        assert_eq!(parse_decode("beam"), None);
        assert_eq!(parse_seeds("0, 1,2"), Some(vec![0, 1, 2]));
        assert_eq!(parse_seeds("x"), None);
        assert!(parse_config("novalue").is_err());
        let bad = Settings::resolve(&flags(&[("variant", "gcn")]), &BTreeMap::new(), None).unwrap_err();
        assert_eq!(bad.exit_code(), 2);
    }
}
