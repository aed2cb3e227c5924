//! Post-fit summaries: effective-dimension table, surface decomposition and
//! the sample variogram of the residuals.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::DVector;

use crate::error::{invalid, Result};
use crate::model::{TermKind, TrialFit};
use crate::psanova::{FIXED_NAMES, SMOOTH_NAMES};
use crate::scalar::Real;
use crate::solver::BlockKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum ComponentType {
    #[serde(rename = "F")]
    Fixed,
    #[serde(rename = "R")]
    Random,
    #[serde(rename = "S")]
    Smooth,
}

impl fmt::Display for ComponentType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Fixed => "F",
            Self::Random => "R",
            Self::Smooth => "S",
        })
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct EdRow {
    pub name: String,
    #[serde(rename = "type")]
    pub kind: ComponentType,
    pub model_dim: usize,
    pub nominal_dim: usize,
    pub effective_dim: f64,
    pub ratio: f64,
    /// Variance of a random or smooth component.
    pub variance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct EdTable {
    pub rows: Vec<EdRow>,
    pub total_effective: f64,
    pub total_model: usize,
    pub total_nominal: usize,
    pub residual_ed: f64,
    pub residual_variance: f64,
    pub n_obs: usize,
}

impl EdTable {
    pub fn row(&self, name: &str) -> Option<&EdRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    /// ED of the spatial surface excluding the intercept: the three bilinear
    /// columns plus the five smooth components.
    pub fn spatial_ed(&self) -> Option<f64> {
        let smooth: Vec<&EdRow> = self.rows.iter().filter(|r| r.kind == ComponentType::Smooth).collect();
        if smooth.is_empty() {
            return None;
        }
        Some(3.0 + smooth.iter().map(|r| r.effective_dim).sum::<f64>())
    }
}

fn ratio(ed: f64, nominal: usize) -> f64 {
    if nominal == 0 {
        0.0
    } else {
        ed / nominal as f64
    }
}

/// Row order: genotype, intercept, other fixed terms, random factors,
/// bilinear spatial columns, smooth components.
pub fn ed_table<T: Real>(tf: &TrialFit<T>) -> EdTable {
    let (model, fit) = (&tf.model, &tf.fit);
    let sys = fit.system.as_ref();
    let fixed_row = |name: &str, width: usize| EdRow {
        name: name.to_string(),
        kind: ComponentType::Fixed,
        model_dim: width,
        nominal_dim: width,
        effective_dim: width as f64,
        ratio: if width == 0 { 0.0 } else { 1.0 },
        variance: None,
    };
    let random_row = |k: usize| {
        let b = &sys.blocks()[k];
        let ed = fit.effective_dims[k].as_f64();
        let (kind, nominal) = match b.kind {
            BlockKind::Spatial => (ComponentType::Smooth, b.dim()),
            _ => (ComponentType::Random, b.dim().saturating_sub(1)),
        };
        EdRow {
            name: b.name.clone(),
            kind,
            model_dim: b.dim(),
            nominal_dim: nominal,
            effective_dim: ed,
            ratio: ratio(ed, nominal),
            variance: Some(fit.variances.components[k].as_f64()),
        }
    };

    let mut rows = Vec::new();
    let genotype_random = sys.blocks().iter().position(|b| b.kind == BlockKind::Genotype);
    for t in model.fixed_terms.iter().filter(|t| t.kind == TermKind::Genotype) {
        rows.push(fixed_row(&t.name, t.columns.len()));
    }
    if let Some(g) = genotype_random {
        rows.push(random_row(g));
    }
    for t in model.fixed_terms.iter().filter(|t| t.kind == TermKind::Intercept) {
        rows.push(fixed_row(&t.name, t.columns.len()));
    }
    for t in model
        .fixed_terms
        .iter()
        .filter(|t| matches!(t.kind, TermKind::Check | TermKind::Factor | TermKind::Covariate))
    {
        rows.push(fixed_row(&t.name, t.columns.len()));
    }
    for (k, b) in sys.blocks().iter().enumerate() {
        if b.kind == BlockKind::Factor {
            rows.push(random_row(k));
        }
    }
    if model.spatial.is_some() {
        for name in [FIXED_NAMES[2], FIXED_NAMES[1], FIXED_NAMES[3]] {
            rows.push(fixed_row(name, 1));
        }
        for k in 0..model.spatial_blocks() {
            rows.push(random_row(k));
        }
    }

    EdTable {
        total_effective: rows.iter().map(|r| r.effective_dim).sum(),
        total_model: rows.iter().map(|r| r.model_dim).sum(),
        total_nominal: rows.iter().map(|r| r.nominal_dim).sum(),
        rows,
        residual_ed: fit.residual_ed.as_f64(),
        residual_variance: fit.variances.residual.as_f64(),
        n_obs: sys.n(),
    }
}

/// Additive pieces of the spatial trend at a set of points.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct SurfaceDecomposition {
    pub points: Vec<(f64, f64)>,
    /// Bilinear sheet (with or without the intercept).
    pub bilinear: Vec<f64>,
    /// Smooth components, named as in the effective-dimension table.
    pub smooth: Vec<(String, Vec<f64>)>,
    pub total: Vec<f64>,
}

/// Evaluates the fitted surface and its components at `(row, col)` points.
pub fn decompose_surface<T: Real>(
    tf: &TrialFit<T>,
    points: &[(f64, f64)],
    include_intercept: bool,
) -> Result<SurfaceDecomposition> {
    let beta: Vec<T> = tf.fit.solve.beta.iter().take(4).copied().collect();
    let coefs: Vec<DVector<T>> = tf.fit.solve.coefficients.iter().take(5).cloned().collect();
    decompose_with(tf, &beta, &coefs, points, include_intercept)
}

pub(crate) fn decompose_with<T: Real>(
    tf: &TrialFit<T>,
    beta: &[T],
    coefs: &[DVector<T>],
    points: &[(f64, f64)],
    include_intercept: bool,
) -> Result<SurfaceDecomposition> {
    let basis = tf
        .model
        .spatial
        .as_ref()
        .ok_or_else(|| invalid("the model has no spatial surface"))?;
    let rows: Vec<T> = points.iter().map(|p| T::lit(p.0)).collect();
    let cols: Vec<T> = points.iter().map(|p| T::lit(p.1)).collect();
    let (x, z) = basis.design(&rows, &cols)?;
    let first = if include_intercept { 0 } else { 1 };
    let n = points.len();
    let bilinear: Vec<f64> = (0..n)
        .map(|i| {
            (first..4)
                .map(|j| x[(i, j)] * beta[j])
                .fold(T::zero(), |a, b| a + b)
                .as_f64()
        })
        .collect();
    let smooth: Vec<(String, Vec<f64>)> = z
        .iter()
        .zip(coefs)
        .zip(SMOOTH_NAMES)
        .map(|((zk, ck), name)| (name.to_string(), (zk * ck).iter().map(|v| v.as_f64()).collect()))
        .collect();
    let total = (0..n)
        .map(|i| bilinear[i] + smooth.iter().map(|(_, s)| s[i]).sum::<f64>())
        .collect();
    Ok(SurfaceDecomposition {
        points: points.to_vec(),
        bilinear,
        smooth,
        total,
    })
}

/// Spatial trend (including the intercept) at every observed plot.
pub fn spatial_component<T: Real>(tf: &TrialFit<T>) -> Result<Vec<f64>> {
    let sys = tf.fit.system.as_ref();
    if tf.model.spatial.is_none() {
        return Err(invalid("the model has no spatial surface"));
    }
    let mut out = vec![T::zero(); sys.n()];
    for j in 0..4 {
        let b = tf.fit.solve.beta[j];
        for (o, x) in out.iter_mut().zip(sys.x().column(j).iter()) {
            *o += *x * b;
        }
    }
    for k in 0..5 {
        let v = sys.z(k) * &tf.fit.solve.coefficients[k];
        for (o, x) in out.iter_mut().zip(v.iter()) {
            *o += *x;
        }
    }
    Ok(out.into_iter().map(|v| v.as_f64()).collect())
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct VariogramRow {
    pub row_displacement: i64,
    pub col_displacement: i64,
    pub value: f64,
    pub pairs: usize,
}

/// Mean half squared differences of residuals by absolute plot
/// displacement.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct VariogramTable {
    pub rows: Vec<VariogramRow>,
}

impl VariogramTable {
    /// Value at a signed displacement.
    pub fn value_at(&self, d_row: i64, d_col: i64) -> Option<f64> {
        let (a, b) = (d_row.abs(), d_col.abs());
        self.rows
            .iter()
            .find(|r| r.row_displacement == a && r.col_displacement == b)
            .map(|r| r.value)
    }
}

pub fn sample_variogram(coords: &[(i64, i64)], residuals: &[f64]) -> Result<VariogramTable> {
    if coords.len() != residuals.len() {
        return Err(invalid("coordinates and residuals differ in length"));
    }
    if coords.len() < 2 {
        return Err(invalid("a variogram needs at least two plots"));
    }
    let mut acc: BTreeMap<(i64, i64), (f64, usize)> = BTreeMap::new();
    acc.insert((0, 0), (0.0, coords.len()));
    for i in 0..coords.len() {
        for j in i + 1..coords.len() {
            let key = ((coords[i].0 - coords[j].0).abs(), (coords[i].1 - coords[j].1).abs());
            let d = residuals[i] - residuals[j];
            let e = acc.entry(key).or_insert((0.0, 0));
            e.0 += 0.5 * d * d;
            e.1 += 1;
        }
    }
    let rows = acc
        .into_iter()
        .map(|((r, c), (sum, count))| VariogramRow {
            row_displacement: r,
            col_displacement: c,
            value: if (r, c) == (0, 0) { 0.0 } else { sum / count as f64 },
            pairs: count,
        })
        .collect();
    Ok(VariogramTable { rows })
}

/// Variogram of the residuals of a fitted trial.
pub fn residual_variogram<T: Real>(tf: &TrialFit<T>, data: &crate::model::TrialData) -> Result<VariogramTable> {
    let coords: Vec<(i64, i64)> = tf
        .model
        .observed
        .iter()
        .map(|&i| (data.records()[i].row, data.records()[i].col))
        .collect();
    let res: Vec<f64> = tf.fit.solve.residuals.iter().map(|v| v.as_f64()).collect();
    sample_variogram(&coords, &res)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fitter::FitOptions;
    use crate::model::tests::small_trial;
    use crate::model::{fit_trial, GenotypeRole, ModelSpec, SpatialSpec, COL, ROW};

    fn spatial_fit() -> (crate::model::TrialData, TrialFit<f64>) {
        let data = small_trial(10, 12, 8);
        let spec = ModelSpec {
            genotype: GenotypeRole::Random,
            random: vec![ROW.into(), COL.into()],
            spatial: SpatialSpec {
                nseg_row: Some(6),
                nseg_col: Some(8),
                ..Default::default()
            },
            ..Default::default()
        };
        let tf = fit_trial(&data, &spec, FitOptions::default()).unwrap();
        (data, tf)
    }

    #[test]
    fn table_totals_add_up() {
        let (_, tf) = spatial_fit();
        let t = ed_table(&tf);
        let names: Vec<&str> = t.rows.iter().map(|r| r.name.as_str()).collect();
        assert_eq!(
            names,
            vec![
                "gen",
                "Intercept",
                "row",
                "col",
                "col",
                "row",
                "row:col",
                "f(col)",
                "f(row)",
                "f(col):row",
                "col:f(row)",
                "f(col):f(row)"
            ]
        );
        assert!((t.total_effective + t.residual_ed - t.n_obs as f64).abs() < 1e-6);
        for r in &t.rows {
            assert!(r.ratio >= -1e-8 && r.ratio <= 1.0 + 1e-8, "{}: {}", r.name, r.ratio);
        }
        let smooth: f64 = t
            .rows
            .iter()
            .filter(|r| r.kind == ComponentType::Smooth)
            .map(|r| r.effective_dim)
            .sum();
        assert!((t.spatial_ed().unwrap() - 3.0 - smooth).abs() < 1e-12);
        assert_eq!(t.row("gen").unwrap().nominal_dim, 7);
    }

    #[test]
    fn fixed_only_table() {
        let data = small_trial(5, 6, 4);
        let spec = ModelSpec {
            fixed: vec!["rep".into()],
            spatial: SpatialSpec {
                enabled: false,
                ..Default::default()
            },
            ..Default::default()
        };
        let tf = fit_trial::<f64>(&data, &spec, FitOptions::default()).unwrap();
        let t = ed_table(&tf);
        assert!(t.rows.iter().all(|r| r.kind == ComponentType::Fixed));
        assert_eq!(t.total_model, 5);
        assert!((t.residual_ed - 25.0).abs() < 1e-9);
        assert!(t.spatial_ed().is_none());
    }

    #[test]
    fn decomposition_is_additive_and_matches_plot_trend() {
        let (data, tf) = spatial_fit();
        let points: Vec<(f64, f64)> = tf
            .model
            .observed
            .iter()
            .map(|&i| (data.records()[i].row as f64, data.records()[i].col as f64))
            .collect();
        let d = decompose_surface(&tf, &points, true).unwrap();
        let direct = spatial_component(&tf).unwrap();
        for i in 0..points.len() {
            let sum = d.bilinear[i] + d.smooth.iter().map(|(_, s)| s[i]).sum::<f64>();
            assert!((sum - d.total[i]).abs() < 1e-10);
            assert!((d.total[i] - direct[i]).abs() < 1e-8);
        }
        let no_int = decompose_surface(&tf, &points, false).unwrap();
        let b0 = tf.fit.solve.beta[0];
        assert!((d.total[3] - no_int.total[3] - b0).abs() < 1e-10);
        assert!(decompose_surface(&tf, &[(0.0, 1.0)], true).is_err());
    }

    #[test]
    fn zero_smooth_coefficients_leave_the_sheet() {
        let (_, tf) = spatial_fit();
        let zeros: Vec<DVector<f64>> = tf
            .fit
            .solve
            .coefficients
            .iter()
            .take(5)
            .map(|c| DVector::zeros(c.len()))
            .collect();
        let beta: Vec<f64> = tf.fit.solve.beta.iter().take(4).copied().collect();
        let pts = [(1.5, 2.5), (7.0, 11.0)];
        let d = decompose_with(&tf, &beta, &zeros, &pts, true).unwrap();
        for i in 0..2 {
            assert_eq!(d.total[i], d.bilinear[i]);
        }
    }

    #[test]
    fn two_by_two_enumeration() {
        let coords = [(1, 1), (1, 2), (2, 1), (2, 2)];
        let (a, b, c, d) = (1.0, 3.0, -2.0, 0.5);
        let v = sample_variogram(&coords, &[a, b, c, d]).unwrap();
        let h = |x: f64, y: f64| 0.5 * (x - y) * (x - y);
        assert_eq!(v.value_at(0, 0), Some(0.0));
        assert!((v.value_at(0, 1).unwrap() - (h(a, b) + h(c, d)) / 2.0).abs() < 1e-15);
        assert!((v.value_at(1, 0).unwrap() - (h(a, c) + h(b, d)) / 2.0).abs() < 1e-15);
        assert!((v.value_at(1, 1).unwrap() - (h(a, d) + h(b, c)) / 2.0).abs() < 1e-15);
        assert_eq!(v.value_at(-1, 1), v.value_at(1, -1));
        assert_eq!(v.rows.len(), 4);
        assert!(v.rows.iter().all(|r| r.pairs > 0));
    }

    #[test]
    fn constant_field_and_degenerate_input() {
        let coords: Vec<(i64, i64)> = (0..20).map(|i| (i / 5, i % 5)).collect();
        let v = sample_variogram(&coords, &[2.5; 20]).unwrap();
        assert!(v.rows.iter().all(|r| r.value == 0.0));
        assert!(sample_variogram(&[(0, 0)], &[1.0]).is_err());
    }

    #[test]
    fn white_noise_is_flat() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let (nr, nc) = (40, 50);
        let coords: Vec<(i64, i64)> = (0..nr * nc).map(|i| (i / nc, i % nc)).collect();
        let res: Vec<f64> = (0..nr * nc).map(|_| StandardNormal.sample(&mut rng)).collect();
        let v = sample_variogram(&coords, &res).unwrap();
        for r in v
            .rows
            .iter()
            .filter(|r| r.row_displacement <= 3 && r.col_displacement <= 3 && r.pairs > 1)
        {
            if (r.row_displacement, r.col_displacement) == (0, 0) {
                continue;
            }
            // Var of a half squared difference of unit normals is 1/2; pairs
            // at a lag share plots, so allow a factor of two in the error.
            let se = (0.5 / r.pairs as f64).sqrt() * 2.0;
            assert!((r.value - 1.0).abs() < 3.0 * se, "{:?}", r);
        }
    }

    #[test]
    fn residual_variogram_runs_on_a_fit() {
        let (data, tf) = spatial_fit();
        let v = residual_variogram(&tf, &data).unwrap();
        assert_eq!(v.rows[0].pairs, 120);
        assert_eq!(v.value_at(0, 0), Some(0.0));
    }
}
