//! Central-difference gradient checks against the tape.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::{ParamId, ParameterStore};
use super::tape::{Tape, Var};
use super::NumericsError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdConfig {
    pub eps: f64,
    pub tolerance: f64,
    /// Denominator floor of the relative error, so near-zero gradients are
    /// compared absolutely.
    pub floor: f64,
    pub max_coords: usize,
    pub seed: u64,
}

impl Default for FdConfig {
    fn default() -> Self {
        FdConfig {
            eps: 1e-5,
            tolerance: 1e-4,
            floor: 1e-3,
            max_coords: 400,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoordError {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    pub checked: usize,
    pub max_rel_err: f64,
    /// Worst coordinates first, at most five.
    pub worst: Vec<CoordError>,
}

pub fn relative_error(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Compares tape gradients of the scalar built by `f` with central
/// differences on up to `max_coords` coordinates (all when fewer), drawn
/// uniformly over the given parameters.
pub fn finite_diff_check<F>(
    store: &mut ParameterStore,
    params: &[ParamId],
    cfg: &FdConfig,
    mut f: F,
) -> Result<FdReport, NumericsError>
where
    F: FnMut(&ParameterStore, &mut Tape) -> Result<Var, NumericsError>,
{
    store.zero_grads();
    let mut tape = Tape::new();
    let out = f(store, &mut tape)?;
    tape.backward(out)?;
    tape.accumulate_param_grads(store);

    let mut coords: Vec<(ParamId, usize)> = Vec::new();
    for &p in params {
        for i in 0..store.value(p).data.len() {
            coords.push((p, i));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let chosen: Vec<(ParamId, usize)> = if coords.len() > cfg.max_coords {
        let mut idx = sample(&mut rng, coords.len(), cfg.max_coords).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| coords[i]).collect()
    } else {
        coords
    };

    let mut errors = Vec::with_capacity(chosen.len());
    for (p, i) in chosen {
        let analytic = store.grad(p)[i];
        let orig = store.value(p).data[i];
        store.value_mut(p).data[i] = orig + cfg.eps;
        let plus = eval(store, &mut f)?;
        store.value_mut(p).data[i] = orig - cfg.eps;
        let minus = eval(store, &mut f)?;
        store.value_mut(p).data[i] = orig;
        let numeric = (plus - minus) / (2.0 * cfg.eps);
        errors.push(CoordError {
            param: store.name(p).into(),
            index: i,
            analytic,
            numeric,
            rel_err: relative_error(analytic, numeric, cfg.floor),
        });
    }
    store.zero_grads();
    errors.sort_by(|a, b| b.rel_err.total_cmp(&a.rel_err));
    let max_rel_err = errors.first().map_or(0.0, |e| e.rel_err);
    let checked = errors.len();
    errors.truncate(5);
    if !(max_rel_err <= cfg.tolerance) {
        return Err(NumericsError::CheckFailed {
            max_rel_err,
            tolerance: cfg.tolerance,
            worst: errors,
        });
    }
    Ok(FdReport {
        checked,
        max_rel_err,
        worst: errors,
    })
}

fn eval<F>(store: &ParameterStore, f: &mut F) -> Result<f64, NumericsError>
where
    F: FnMut(&ParameterStore, &mut Tape) -> Result<Var, NumericsError>,
{
    let mut tape = Tape::new();
    let out = f(store, &mut tape)?;
    Ok(tape.scalar(out))
}
