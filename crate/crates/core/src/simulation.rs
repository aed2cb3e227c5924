//! Simulated field trials: genotypes on a resolvable block design plus a
//! separable AR(1)×AR(1) field and white noise, fitted repeatedly.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::diagnostics::ed_table;
use crate::error::{invalid, Error, Result};
use crate::fitter::FitOptions;
use crate::model::{fit_trial, GenotypeRole, ModelSpec, Record, SpatialSpec, TrialData, COL, ROW};

/// Label given to plots that carry no test genotype.
pub const FILLER: &str = "FILLER";

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelVariant {
    /// Spatial surface plus random genotype.
    Spatial,
    /// Random row and column factors plus random genotype.
    RowCol,
}

impl std::str::FromStr for ModelVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spatial" => Ok(Self::Spatial),
            "row_col" => Ok(Self::RowCol),
            other => Err(Error::UnknownName(format!("model variant {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub n_rows: usize,
    pub n_cols: usize,
    pub n_genotypes: usize,
    pub replicates: usize,
    pub block_size: usize,
    pub sigma2_genetic: f64,
    pub sigma2_spatial: f64,
    pub sigma2: f64,
    pub rho_row: f64,
    pub rho_col: f64,
    pub n_runs: usize,
    pub seed: u64,
    pub variants: Vec<ModelVariant>,
    pub spatial: SpatialSpec,
    pub tolerance: f64,
    pub max_iter: usize,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            n_rows: 10,
            n_cols: 20,
            n_genotypes: 100,
            replicates: 2,
            block_size: 10,
            sigma2_genetic: 1.0,
            sigma2_spatial: 1.0,
            sigma2: 1.0,
            rho_row: 0.5,
            rho_col: 0.5,
            n_runs: 50,
            seed: 2017,
            variants: vec![ModelVariant::Spatial],
            spatial: SpatialSpec::default(),
            tolerance: 1e-6,
            max_iter: 500,
        }
    }
}

impl SimulationConfig {
    pub fn n_plots(&self) -> usize {
        self.n_rows * self.n_cols
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_rows == 0 || self.n_cols == 0 {
            return Err(invalid("layout must have at least one row and column"));
        }
        if self.n_genotypes == 0 || self.replicates == 0 || self.block_size == 0 {
            return Err(invalid("genotypes, replicates and block size must be positive"));
        }
        if self.n_genotypes * self.replicates > self.n_plots() {
            return Err(invalid(format!(
                "{} genotypes × {} replicates do not fit on {} plots",
                self.n_genotypes,
                self.replicates,
                self.n_plots()
            )));
        }
        if !self.n_cols.is_multiple_of(self.replicates) {
            return Err(invalid("replicates must split the columns evenly"));
        }
        if !(self.n_plots() / self.replicates).is_multiple_of(self.block_size) {
            return Err(invalid("block size must divide the plots of a replicate"));
        }
        for (name, v) in [
            ("sigma2_genetic", self.sigma2_genetic),
            ("sigma2_spatial", self.sigma2_spatial),
            ("sigma2", self.sigma2),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(format!("{name} must be a non-negative number")));
            }
        }
        check_rho(self.rho_row)?;
        check_rho(self.rho_col)?;
        if self.n_runs == 0 {
            return Err(invalid("at least one run is required"));
        }
        if self.variants.is_empty() {
            return Err(invalid("no model variants requested"));
        }
        Ok(())
    }
}

fn check_rho(rho: f64) -> Result<()> {
    if rho > 0.0 && rho < 1.0 {
        Ok(())
    } else {
        Err(Error::OutsideDomain {
            value: rho,
            lower: 0.0,
            upper: 1.0,
        })
    }
}

/// Lower Cholesky factor of the AR(1) correlation matrix `ρ^|i−j|`.
fn ar1_factor(n: usize, rho: f64) -> DMatrix<f64> {
    let s = (1.0 - rho * rho).sqrt();
    DMatrix::from_fn(n, n, |i, j| match (i, j) {
        (i, 0) => rho.powi(i as i32),
        (i, j) if j <= i => rho.powi((i - j) as i32) * s,
        _ => 0.0,
    })
}

/// Separable AR(1)×AR(1) field over the layout, row-major.
pub fn gen_ar_field<R: Rng + ?Sized>(config: &SimulationConfig, rng: &mut R) -> Result<Vec<f64>> {
    check_rho(config.rho_row)?;
    check_rho(config.rho_col)?;
    let (nr, nc) = (config.n_rows, config.n_cols);
    let e = DMatrix::from_fn(nr, nc, |_, _| StandardNormal.sample(rng));
    let scale = config.sigma2_spatial.max(0.0).sqrt();
    let field = ar1_factor(nr, config.rho_row) * e * ar1_factor(nc, config.rho_col).transpose() * scale;
    Ok((0..nr * nc).map(|i| field[(i / nc, i % nc)]).collect())
}

/// Genotype index per plot (row-major); `None` marks a filler plot.
///
/// Replicates are contiguous column bands; within a band the genotypes are
/// shuffled and dealt into column-major blocks of `block_size` plots.
pub fn gen_design<R: Rng + ?Sized>(
    n_genotypes: usize,
    replicates: usize,
    block_size: usize,
    layout: (usize, usize),
    rng: &mut R,
) -> Result<Vec<Option<usize>>> {
    let (nr, nc) = layout;
    let cfg = SimulationConfig {
        n_rows: nr,
        n_cols: nc,
        n_genotypes,
        replicates,
        block_size,
        ..Default::default()
    };
    cfg.validate()?;
    let band = nc / replicates;
    let per_rep = nr * band;
    let mut out = vec![None; nr * nc];
    for rep in 0..replicates {
        let mut slots: Vec<Option<usize>> = (0..n_genotypes).map(Some).collect();
        slots.resize(per_rep, None);
        slots.shuffle(rng);
        for (k, g) in slots.into_iter().enumerate() {
            let (c, r) = (rep * band + k / nr, k % nr);
            out[r * nc + c] = g;
        }
    }
    Ok(out)
}

/// One simulated trial with its true genotype effects.
#[derive(Debug, Clone)]
pub struct SimulatedTrial {
    pub data: TrialData,
    pub genotype_effects: Vec<f64>,
    pub design: Vec<Option<usize>>,
}

pub fn genotype_label(g: usize) -> String {
    format!("G{g:04}")
}

pub fn simulate_trial<R: Rng + ?Sized>(config: &SimulationConfig, rng: &mut R) -> Result<SimulatedTrial> {
    config.validate()?;
    let design = gen_design(
        config.n_genotypes,
        config.replicates,
        config.block_size,
        (config.n_rows, config.n_cols),
        rng,
    )?;
    let sg = config.sigma2_genetic.sqrt();
    let effects: Vec<f64> = (0..config.n_genotypes)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            sg * z
        })
        .collect();
    let field = gen_ar_field(config, rng)?;
    let se = config.sigma2.sqrt();
    let records = design
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let e: f64 = StandardNormal.sample(rng);
            let y = g.map_or(0.0, |g| effects[g]) + field[i] + se * e;
            Record {
                response: Some(y),
                genotype: g.map_or_else(|| FILLER.to_string(), genotype_label),
                row: (i / config.n_cols) as i64 + 1,
                col: (i % config.n_cols) as i64 + 1,
                extra: Default::default(),
            }
        })
        .collect();
    Ok(SimulatedTrial {
        data: TrialData::new("y", "genotype", records)?,
        genotype_effects: effects,
        design,
    })
}

fn variant_spec(config: &SimulationConfig, trial: &SimulatedTrial, variant: ModelVariant) -> ModelSpec {
    let checks = if trial.design.iter().any(Option::is_none) {
        vec![FILLER.to_string()]
    } else {
        vec![]
    };
    match variant {
        ModelVariant::Spatial => ModelSpec {
            genotype: GenotypeRole::Random,
            checks,
            spatial: config.spatial.clone(),
            ..Default::default()
        },
        ModelVariant::RowCol => ModelSpec {
            genotype: GenotypeRole::Random,
            checks,
            random: vec![ROW.into(), COL.into()],
            spatial: SpatialSpec {
                enabled: false,
                ..Default::default()
            },
            ..Default::default()
        },
    }
}

/// BLUP of the genotype effects under the true covariance structure.
pub fn oracle_blup(config: &SimulationConfig, trial: &SimulatedTrial) -> Result<Vec<f64>> {
    let n = config.n_plots();
    let nc = config.n_cols;
    let mut v = DMatrix::<f64>::zeros(n, n);
    for a in 0..n {
        for b in 0..n {
            let dr = (a / nc).abs_diff(b / nc) as i32;
            let dc = (a % nc).abs_diff(b % nc) as i32;
            let mut s = config.sigma2_spatial * config.rho_row.powi(dr) * config.rho_col.powi(dc);
            if let (Some(ga), Some(gb)) = (trial.design[a], trial.design[b]) {
                if ga == gb {
                    s += config.sigma2_genetic;
                }
            }
            if a == b {
                s += config.sigma2;
            }
            v[(a, b)] = s;
        }
    }
    let filler = trial.design.iter().any(Option::is_none);
    let p = if filler { 2 } else { 1 };
    let x = DMatrix::from_fn(n, p, |i, j| if j == 0 || trial.design[i].is_none() { 1.0 } else { 0.0 });
    let y = DVector::from_iterator(n, trial.data.records().iter().map(|r| r.response.unwrap_or(0.0)));
    let chol = v
        .cholesky()
        .ok_or_else(|| Error::Numerical("true covariance is not positive definite".into()))?;
    let vinv_x = chol.solve(&x);
    let beta = (x.transpose() * &vinv_x)
        .cholesky()
        .ok_or_else(|| Error::Numerical("oracle fixed effects are singular".into()))?
        .solve(&(vinv_x.transpose() * &y));
    let w = chol.solve(&(y - &x * beta));
    let mut c = vec![0.0; config.n_genotypes];
    for (i, g) in trial.design.iter().enumerate() {
        if let Some(g) = g {
            c[*g] += config.sigma2_genetic * w[i];
        }
    }
    Ok(c)
}

fn rmse(est: &[f64], truth: &[f64]) -> f64 {
    let s: f64 = est.iter().zip(truth).map(|(a, b)| (a - b) * (a - b)).sum();
    (s / truth.len() as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct VariantOutcome {
    pub variant: ModelVariant,
    pub converged: bool,
    pub iterations: usize,
    pub log10_rmse: f64,
    pub bias_genetic: f64,
    pub bias_residual: f64,
    /// ED of the spatial surface without the intercept.
    pub ed_spatial: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct RunOutcome {
    pub run: usize,
    pub oracle_log10_rmse: f64,
    /// One entry per variant, or the failure message.
    pub variants: Vec<std::result::Result<VariantOutcome, String>>,
}

impl RunOutcome {
    fn usable(&self) -> bool {
        self.variants.iter().all(|v| v.as_ref().is_ok_and(|o| o.converged))
    }
}

pub fn run_once(config: &SimulationConfig, run: usize) -> Result<RunOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(run as u64);
    let trial = simulate_trial(config, &mut rng)?;
    let oracle = oracle_blup(config, &trial)?;
    let options = FitOptions {
        tolerance: config.tolerance,
        max_iter: config.max_iter,
        ..Default::default()
    };
    let variants = config
        .variants
        .iter()
        .map(|&variant| {
            let spec = variant_spec(config, &trial, variant);
            let tf = fit_trial::<f64>(&trial.data, &spec, options.clone()).map_err(|e| e.to_string())?;
            let g = tf.model.coding.random_block.expect("genotype is random");
            let block = &tf.fit.system.blocks()[g];
            let index: HashMap<&str, usize> = block.labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
            let est: Vec<f64> = (0..config.n_genotypes)
                .map(|k| tf.fit.solve.coefficients[g][index[genotype_label(k).as_str()]])
                .collect();
            Ok(VariantOutcome {
                variant,
                converged: tf.fit.converged,
                iterations: tf.fit.iterations,
                log10_rmse: rmse(&est, &trial.genotype_effects).log10(),
                bias_genetic: tf.fit.variances.components[g] - config.sigma2_genetic,
                bias_residual: tf.fit.variances.residual - config.sigma2,
                ed_spatial: ed_table(&tf).spatial_ed(),
            })
        })
        .collect();
    Ok(RunOutcome {
        run,
        oracle_log10_rmse: rmse(&oracle, &trial.genotype_effects).log10(),
        variants,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Stat {
    pub mean: f64,
    pub sd: f64,
}

impl Stat {
    fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = if values.len() > 1 {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, sd }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct VariantSummary {
    pub variant: ModelVariant,
    /// Percentage of runs in which this variant converged.
    pub convergence_pct: f64,
    pub log10_rmse: Stat,
    pub bias_genetic: Stat,
    pub bias_residual: Stat,
    pub ed_spatial: Option<Stat>,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct SimulationReport {
    pub config: SimulationConfig,
    /// Runs in which every variant converged; the summaries average these.
    pub runs_used: usize,
    pub failures: usize,
    pub oracle_log10_rmse: Stat,
    pub variants: Vec<VariantSummary>,
    pub runs: Vec<RunOutcome>,
}

/// Runs the study on the current rayon pool; `log` writes one line per run
/// to stderr.
pub fn run_study(config: &SimulationConfig, log: bool) -> Result<SimulationReport> {
    config.validate()?;
    let mut runs: Vec<RunOutcome> = (0..config.n_runs)
        .into_par_iter()
        .map(|r| run_once(config, r))
        .collect::<Result<_>>()?;
    runs.sort_by_key(|r| r.run);
    if log {
        for r in &runs {
            let parts: Vec<String> = r
                .variants
                .iter()
                .map(|v| match v {
                    Ok(o) => format!(
                        "{:?} log10_rmse={:.4} converged={}",
                        o.variant, o.log10_rmse, o.converged
                    ),
                    Err(e) => format!("failed: {e}"),
                })
                .collect();
            eprintln!("run {} {}", r.run, parts.join(" | "));
        }
    }
    let used: Vec<&RunOutcome> = runs.iter().filter(|r| r.usable()).collect();
    if used.is_empty() {
        return Err(Error::Numerical("no run converged for every model variant".into()));
    }
    let failures = runs.iter().filter(|r| r.variants.iter().any(|v| v.is_err())).count();
    let variants = config
        .variants
        .iter()
        .enumerate()
        .map(|(k, &variant)| {
            let conv = runs
                .iter()
                .filter(|r| r.variants[k].as_ref().is_ok_and(|o| o.converged))
                .count();
            let outs: Vec<&VariantOutcome> = used.iter().map(|r| r.variants[k].as_ref().expect("usable")).collect();
            let collect = |f: fn(&VariantOutcome) -> f64| Stat::of(&outs.iter().map(|o| f(o)).collect::<Vec<_>>());
            let eds: Option<Vec<f64>> = outs.iter().map(|o| o.ed_spatial).collect();
            VariantSummary {
                variant,
                convergence_pct: 100.0 * conv as f64 / runs.len() as f64,
                log10_rmse: collect(|o| o.log10_rmse),
                bias_genetic: collect(|o| o.bias_genetic),
                bias_residual: collect(|o| o.bias_residual),
                ed_spatial: eds.map(|e| Stat::of(&e)),
            }
        })
        .collect();
    Ok(SimulationReport {
        config: config.clone(),
        runs_used: used.len(),
        failures,
        oracle_log10_rmse: Stat::of(&used.iter().map(|r| r.oracle_log10_rmse).collect::<Vec<_>>()),
        variants,
        runs,
    })
}

/// [`run_study`] on a dedicated pool of at most `threads` workers.
pub fn run_study_with_threads(
    config: &SimulationConfig,
    threads: Option<usize>,
    log: bool,
) -> Result<SimulationReport> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        builder = builder.num_threads(t.max(1));
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Numerical(format!("thread pool: {e}")))?;
    pool.install(|| run_study(config, log))
}
