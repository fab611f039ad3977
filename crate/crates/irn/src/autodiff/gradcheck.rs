//! Finite-difference verification of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::tape::{Mode, Tape, Val};
use crate::autodiff::tensor::ParamStore;
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    /// Step size for central differences.
    pub eps: f64,
    /// Maximum allowed |analytic − numeric| / max(|analytic|, |numeric|).
    pub rel_tol: f64,
    /// Coordinates where both values are at most this close to zero pass
    /// without a relative comparison. Central differences at step `eps`
    /// carry an absolute noise floor of roughly `f64::EPSILON / eps` from
    /// roundoff alone, so gradients below `noise / rel_tol` cannot meet the
    /// relative tolerance even when the analytic value is exact; this floor
    /// marks the scale under which a relative comparison is meaningless.
    pub zero_tol: f64,
    /// A coordinate whose forward and backward one-sided differences
    /// disagree by more than `kink_tol · (1 + |fwd| + |bwd|)` sits on a
    /// non-smooth point (e.g. relu at 0) and is excluded, not failed.
    pub kink_tol: f64,
    /// Largest number of coordinates probed per parameter; larger tensors
    /// are subsampled with a seeded draw.
    pub max_coords_per_param: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            eps: 1e-5,
            rel_tol: 1e-4,
            zero_tol: 1e-7,
            kink_tol: 1e-3,
            max_coords_per_param: 25,
            seed: 0x5eed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckFailure {
    pub param: String,
    pub coord: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    /// Coordinates compared against the numeric estimate.
    pub checked: usize,
    /// Coordinates skipped because they straddle a non-smooth point.
    pub excluded: usize,
    /// Largest relative error among checked coordinates.
    pub max_rel_err: f64,
    pub failures: Vec<GradCheckFailure>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Compares tape gradients of a scalar objective against central-difference
/// estimates, coordinate by coordinate.
///
/// `build` must construct the objective deterministically from the current
/// store values — in particular any dropout must run at rate 0 — because it
/// is re-evaluated under parameter nudges.
pub fn grad_check(
    store: &mut ParamStore,
    cfg: &GradCheckConfig,
    mut build: impl FnMut(&mut Tape) -> Result<Val>,
) -> Result<GradCheckReport> {
    let analytic = {
        let mut tape = Tape::new(store, Mode::Train);
        let loss = build(&mut tape)?;
        tape.backward(loss)?
    };
    let base = eval_objective(store, &mut build)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = GradCheckReport::default();
    for id in store.ids().collect::<Vec<_>>() {
        let numel = store.get(id).numel();
        let coords: Vec<usize> = if numel <= cfg.max_coords_per_param {
            (0..numel).collect()
        } else {
            let mut picked = sample(&mut rng, numel, cfg.max_coords_per_param).into_vec();
            picked.sort_unstable();
            picked
        };
        for coord in coords {
            let original = store.get(id).data[coord];
            store.get_mut(id).data[coord] = original + cfg.eps;
            let plus = eval_objective(store, &mut build)?;
            store.get_mut(id).data[coord] = original - cfg.eps;
            let minus = eval_objective(store, &mut build)?;
            store.get_mut(id).data[coord] = original;

            let fwd = (plus - base) / cfg.eps;
            let bwd = (base - minus) / cfg.eps;
            if (fwd - bwd).abs() > cfg.kink_tol * (1.0 + fwd.abs() + bwd.abs()) {
                report.excluded += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * cfg.eps);
            let a = analytic.get(id)[coord];
            report.checked += 1;
            if a.abs() <= cfg.zero_tol && numeric.abs() <= cfg.zero_tol {
                continue;
            }
            let rel_err = (a - numeric).abs() / a.abs().max(numeric.abs());
            report.max_rel_err = report.max_rel_err.max(rel_err);
            if rel_err > cfg.rel_tol {
                report.failures.push(GradCheckFailure {
                    param: store.name(id).to_string(),
                    coord,
                    analytic: a,
                    numeric,
                    rel_err,
                });
            }
        }
    }
    Ok(report)
}

fn eval_objective(
    store: &ParamStore,
    build: &mut impl FnMut(&mut Tape) -> Result<Val>,
) -> Result<f64> {
    let mut tape = Tape::new(store, Mode::Train);
    let loss = build(&mut tape)?;
    tape.scalar(loss)
}
