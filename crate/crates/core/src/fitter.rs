//! Schall-type REML iteration.
//!
//! Each sweep solves the mixed-model equations at the current variances,
//! computes effective dimensions, and updates
//!
//! ```text
//! σ_k² = ĉ_kᵀ Λ_k⁻¹ ĉ_k / ED_k        σ² = ε̂ᵀε̂ / ED_ε
//! ```
//!
//! until the REML deviance changes by less than the tolerance.

use std::sync::Arc;

use crate::error::{invalid, Error, Result};
use crate::scalar::Real;
use crate::solver::{MixedModelSystem, SolveResult, Variances};

/// Effective dimensions below this are treated as zero and the variance is
/// pinned to the floor.
const ED_ZERO: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct FitOptions<T> {
    /// Convergence threshold on the absolute change of the REML deviance.
    pub tolerance: T,
    pub max_iter: usize,
    /// Absolute lower bound on all variances; `None` uses `1e-10 · var(y)`.
    pub variance_floor: Option<T>,
    pub init: Option<Variances<T>>,
    /// 0 silent, 1 one line per iteration, 2 adds the variances.
    pub trace_level: u8,
}

impl<T: Real> Default for FitOptions<T> {
    fn default() -> Self {
        Self {
            tolerance: T::lit(1e-6),
            max_iter: 500,
            variance_floor: None,
            init: None,
            trace_level: 0,
        }
    }
}

impl<T: Real> FitOptions<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > T::zero()) {
            return Err(invalid("tolerance must be positive"));
        }
        if self.max_iter == 0 {
            return Err(invalid("max_iter must be at least 1"));
        }
        if let Some(f) = self.variance_floor {
            if !(f > T::zero()) || !f.finite() {
                return Err(invalid("variance floor must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FittedModel<T: Real> {
    pub system: Arc<MixedModelSystem<T>>,
    pub solve: SolveResult<T>,
    pub variances: Variances<T>,
    /// `ED_k` per random block.
    pub effective_dims: Vec<T>,
    pub residual_ed: T,
    pub deviance: T,
    pub deviance_path: Vec<T>,
    pub converged: bool,
    /// Completed variance updates.
    pub iterations: usize,
    /// Iterations at which the damped step was taken.
    pub damped_at: Vec<usize>,
    pub variance_floor: T,
    pub options: FitOptions<T>,
}

impl<T: Real> FittedModel<T> {
    /// `rank(X)`.
    pub fn fixed_rank(&self) -> usize {
        self.system.n_fixed()
    }

    /// `rank(X) + Σ ED_k`.
    pub fn total_ed(&self) -> T {
        self.effective_dims
            .iter()
            .fold(T::from_count(self.fixed_rank()), |acc, &e| acc + e)
    }

    /// The variance update evaluated at the stored solution.
    pub fn schall_update(&self) -> Variances<T> {
        schall_update(
            &self.system,
            &self.solve,
            &self.effective_dims,
            self.residual_ed,
            self.variance_floor,
        )
    }
}

/// Sample variance of the response (denominator `n − 1`).
pub fn response_variance<T: Real>(y: &nalgebra::DVector<T>) -> T {
    let n = y.len();
    if n < 2 {
        return T::zero();
    }
    let mean = y.mean();
    y.iter().fold(T::zero(), |acc, &v| acc + (v - mean) * (v - mean)) / T::from_count(n - 1)
}

fn default_floor<T: Real>(sys: &MixedModelSystem<T>) -> T {
    let var = response_variance(sys.y());
    if var > T::zero() {
        var * T::lit(1e-10)
    } else {
        T::lit(1e-10)
    }
}

fn default_start<T: Real>(sys: &MixedModelSystem<T>) -> Variances<T> {
    let var = response_variance(sys.y());
    let s = if var > T::zero() { var } else { T::one() };
    Variances {
        residual: s,
        components: vec![s; sys.blocks().len()],
    }
}

fn schall_update<T: Real>(
    sys: &MixedModelSystem<T>,
    res: &SolveResult<T>,
    eds: &[T],
    ed_res: T,
    floor: T,
) -> Variances<T> {
    let components = sys
        .blocks()
        .iter()
        .enumerate()
        .map(|(k, b)| {
            if eds[k] < T::lit(ED_ZERO) {
                floor
            } else {
                (res.weighted_square(k, &b.precision) / eds[k]).max(floor)
            }
        })
        .collect();
    Variances {
        residual: (res.residuals.norm_squared() / ed_res).max(floor),
        components,
    }
}

fn trace_line<T: Real>(level: u8, it: usize, dev: T, eds: &[T], v: &Variances<T>, names: &[&str]) {
    if level == 0 {
        return;
    }
    let parts: Vec<String> = names
        .iter()
        .zip(eds)
        .map(|(n, e)| format!("{n}={:.3}", e.as_f64()))
        .collect();
    eprintln!("iter {it:>4}  deviance {:.6}  ED {}", dev.as_f64(), parts.join(" "));
    if level >= 2 {
        let vs: Vec<String> = v.components.iter().map(|s| format!("{:.6e}", s.as_f64())).collect();
        eprintln!(
            "           sigma2 {:.6e}  components {}",
            v.residual.as_f64(),
            vs.join(" ")
        );
    }
}

struct Evaluation<T: Real> {
    res: SolveResult<T>,
    eds: Vec<T>,
    ed_res: T,
    dev: T,
}

fn evaluate<T: Real>(sys: &MixedModelSystem<T>, v: &Variances<T>) -> Result<Evaluation<T>> {
    let res = sys.solve(v)?;
    let eds = sys.component_traces(v, &res)?;
    let ed_res = sys.residual_ed(&eds);
    let dev = sys.reml_deviance(v, &res)?;
    Ok(Evaluation { res, eds, ed_res, dev })
}

#[allow(clippy::too_many_arguments)]
fn finish<T: Real>(
    sys: Arc<MixedModelSystem<T>>,
    e: Evaluation<T>,
    variances: Variances<T>,
    path: Vec<T>,
    converged: bool,
    iterations: usize,
    damped_at: Vec<usize>,
    floor: T,
    options: FitOptions<T>,
) -> FittedModel<T> {
    FittedModel {
        system: sys,
        solve: e.res,
        variances,
        effective_dims: e.eds,
        residual_ed: e.ed_res,
        deviance: e.dev,
        deviance_path: path,
        converged,
        iterations,
        damped_at,
        variance_floor: floor,
        options,
    }
}

/// Estimates all variance components by REML.
pub fn fit<T: Real>(system: Arc<MixedModelSystem<T>>, options: FitOptions<T>) -> Result<FittedModel<T>> {
    options.validate()?;
    let sys = system.as_ref();
    let floor = options.variance_floor.unwrap_or_else(|| default_floor(sys));
    let mut v = match &options.init {
        Some(init) => {
            sys.check_variances(init)?;
            init.clone()
        }
        None => default_start(sys),
    };
    let names: Vec<&str> = sys.blocks().iter().map(|b| b.name.as_str()).collect();
    let tol = options.tolerance;

    let mut path = Vec::new();
    let mut damped_at = Vec::new();
    let mut previous: Option<(T, Variances<T>)> = None;
    let mut best: Option<(T, Variances<T>)> = None;
    let mut rises = 0usize;

    for it in 1..=options.max_iter {
        let e = evaluate(sys, &v)?;
        trace_line(options.trace_level, it, e.dev, &e.eds, &v, &names);
        path.push(e.dev);
        if best.as_ref().is_none_or(|(d, _)| e.dev < *d) {
            best = Some((e.dev, v.clone()));
        }
        if let Some((pd, pv)) = &previous {
            if (e.dev - *pd).abs() < tol {
                return Ok(finish(system, e, v, path, true, it - 1, damped_at, floor, options));
            }
            rises = if e.dev > *pd { rises + 1 } else { 0 };
            if rises >= 2 {
                // Halve the step back toward the previous iterate.
                let half = T::lit(0.5);
                v = Variances {
                    residual: (v.residual + pv.residual) * half,
                    components: v
                        .components
                        .iter()
                        .zip(&pv.components)
                        .map(|(&a, &b)| (a + b) * half)
                        .collect(),
                };
                rises = 0;
                damped_at.push(it);
                if options.trace_level > 0 {
                    eprintln!("iter {it:>4}  deviance rose twice; damping step");
                }
                continue;
            }
        }
        if !(e.ed_res > T::lit(ED_ZERO)) {
            return Err(Error::Numerical(format!(
                "residual effective dimension {} leaves no degrees of freedom for the error variance",
                e.ed_res
            )));
        }
        let next = schall_update(sys, &e.res, &e.eds, e.ed_res, floor);
        previous = Some((e.dev, v));
        v = next;
    }

    // Not converged: report the best iterate seen.
    let (_, bv) = best.expect("at least one iteration");
    let e = evaluate(sys, &bv)?;
    let iterations = options.max_iter;
    Ok(finish(
        system, e, bv, path, false, iterations, damped_at, floor, options,
    ))
}

/// Evaluates the model at given variances without iterating.
pub fn fit_fixed<T: Real>(
    system: Arc<MixedModelSystem<T>>,
    variances: Variances<T>,
    options: FitOptions<T>,
) -> Result<FittedModel<T>> {
    options.validate()?;
    let floor = options.variance_floor.unwrap_or_else(|| default_floor(&system));
    let e = evaluate(&system, &variances)?;
    let path = vec![e.dev];
    Ok(finish(system, e, variances, path, true, 0, Vec::new(), floor, options))
}

/// Changes applied by [`refit_with`].
#[derive(Debug, Clone, Default)]
pub struct Overrides<T> {
    pub options: Option<FitOptions<T>>,
    /// Starting (or, with `fix_variances`, final) variances. Defaults to the
    /// model's current estimates.
    pub variances: Option<Variances<T>>,
    pub fix_variances: bool,
}

/// Refits the same design, warm-started from the model's estimates unless
/// other variances are given.
pub fn refit_with<T: Real>(model: &FittedModel<T>, overrides: Overrides<T>) -> Result<FittedModel<T>> {
    let mut options = overrides.options.unwrap_or_else(|| model.options.clone());
    let start = overrides.variances.unwrap_or_else(|| model.variances.clone());
    model.system.check_variances(&start).map_err(|e| match e {
        Error::InvalidInput(m) => invalid(format!("override does not fit the model: {m}")),
        other => other,
    })?;
    if overrides.fix_variances {
        return fit_fixed(model.system.clone(), start, options);
    }
    options.init = Some(start);
    fit(model.system.clone(), options)
}
