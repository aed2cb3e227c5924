//! Trial data and the translation of a declarative model into a
//! [`MixedModelSystem`].

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::ops::Range;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::fitter::{fit, FitOptions, FittedModel};
use crate::genetics::GenotypeCoding;
use crate::psanova::{SpatialBasis, SpatialConfig, FIXED_NAMES, SMOOTH_NAMES};
use crate::scalar::Real;
use crate::solver::{BlockKind, MixedModelSystem, RandomBlock, RandomDesign};

/// Pseudo-factor names that resolve to the plot coordinates.
pub const ROW: &str = "row";
pub const COL: &str = "col";

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub response: Option<f64>,
    pub genotype: String,
    pub row: i64,
    pub col: i64,
    /// Any further columns, kept as text.
    pub extra: BTreeMap<String, String>,
}

/// Bounding box of the plot coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct Layout {
    pub row_min: i64,
    pub row_max: i64,
    pub col_min: i64,
    pub col_max: i64,
}

impl Layout {
    pub fn n_rows(&self) -> usize {
        (self.row_max - self.row_min + 1) as usize
    }

    pub fn n_cols(&self) -> usize {
        (self.col_max - self.col_min + 1) as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialData {
    pub response_name: String,
    pub genotype_name: String,
    records: Vec<Record>,
    layout: Layout,
}

impl TrialData {
    pub fn new(
        response_name: impl Into<String>,
        genotype_name: impl Into<String>,
        records: Vec<Record>,
    ) -> Result<Self> {
        let mut seen = HashSet::new();
        for r in &records {
            if !seen.insert((r.row, r.col)) {
                return Err(invalid(format!("duplicate plot at row {} col {}", r.row, r.col)));
            }
            if let Some(v) = r.response {
                if !v.is_finite() {
                    return Err(invalid(format!("non-finite response at row {} col {}", r.row, r.col)));
                }
            }
        }
        if !records.iter().any(|r| r.response.is_some()) {
            return Err(invalid("no observed responses"));
        }
        let layout = Layout {
            row_min: records.iter().map(|r| r.row).min().unwrap_or(0),
            row_max: records.iter().map(|r| r.row).max().unwrap_or(0),
            col_min: records.iter().map(|r| r.col).min().unwrap_or(0),
            col_max: records.iter().map(|r| r.col).max().unwrap_or(0),
        };
        Ok(Self {
            response_name: response_name.into(),
            genotype_name: genotype_name.into(),
            records,
            layout,
        })
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn n_missing(&self) -> usize {
        self.records.iter().filter(|r| r.response.is_none()).count()
    }

    /// Names of the extra columns (taken from the first record).
    pub fn extra_names(&self) -> Vec<String> {
        self.records
            .first()
            .map(|r| r.extra.keys().cloned().collect())
            .unwrap_or_default()
    }

    /// Text value of a factor for one record, including the coordinate
    /// pseudo-factors.
    pub fn factor_value(&self, record: &Record, name: &str) -> Result<String> {
        match name {
            ROW => Ok(record.row.to_string()),
            COL => Ok(record.col.to_string()),
            _ => record
                .extra
                .get(name)
                .cloned()
                .ok_or_else(|| Error::UnknownName(name.to_string())),
        }
    }

    pub fn genotype_levels(&self) -> Vec<String> {
        self.records
            .iter()
            .map(|r| r.genotype.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GenotypeRole {
    #[default]
    Fixed,
    Random,
    /// Genotype is not part of the model.
    None,
}

/// Spatial settings; unset fields are derived from the layout.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpatialSpec {
    pub enabled: bool,
    pub nseg_row: Option<usize>,
    pub nseg_col: Option<usize>,
    pub degree: usize,
    pub nest_div_row: Option<usize>,
    pub nest_div_col: Option<usize>,
}

impl Default for SpatialSpec {
    fn default() -> Self {
        Self {
            enabled: true,
            nseg_row: None,
            nseg_col: None,
            degree: 3,
            nest_div_row: None,
            nest_div_col: None,
        }
    }
}

impl SpatialSpec {
    /// Defaults: one segment per distinct row/column, nesting divisor 2 when
    /// it divides the segment count and 1 otherwise.
    pub fn resolve(&self, data: &TrialData) -> SpatialConfig {
        let distinct = |f: fn(&Record) -> i64| data.records().iter().map(f).collect::<HashSet<_>>().len();
        let nseg_row = self.nseg_row.unwrap_or_else(|| distinct(|r| r.row));
        let nseg_col = self.nseg_col.unwrap_or_else(|| distinct(|r| r.col));
        let div = |n: usize, d: Option<usize>| d.unwrap_or(if n.is_multiple_of(2) { 2 } else { 1 });
        SpatialConfig {
            nseg_row,
            nseg_col,
            degree: self.degree,
            nest_div_row: div(nseg_row, self.nest_div_row),
            nest_div_col: div(nseg_col, self.nest_div_col),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub genotype: GenotypeRole,
    /// Genotypes kept as fixed effects when the genotype role is random.
    pub checks: Vec<String>,
    /// Fixed factors (dummy coded, first level dropped).
    pub fixed: Vec<String>,
    /// Numeric fixed covariates.
    pub covariates: Vec<String>,
    /// Random i.i.d. factors; `row` and `col` refer to the coordinates.
    pub random: Vec<String>,
    pub spatial: SpatialSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TermKind {
    Intercept,
    Genotype,
    Check,
    Factor,
    Covariate,
    /// Unpenalized part of the spatial surface.
    Spatial,
}

/// A group of fixed columns reported together.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct FixedTerm {
    pub name: String,
    pub kind: TermKind,
    pub columns: Range<usize>,
}

/// A mixed-model system together with everything needed to interpret it.
#[derive(Debug, Clone)]
pub struct AssembledModel<T: Real> {
    pub system: Arc<MixedModelSystem<T>>,
    pub fixed_terms: Vec<FixedTerm>,
    pub coding: GenotypeCoding,
    /// Spatial basis; fixed columns `0..4` and random blocks `0..5` belong
    /// to the surface when present.
    pub spatial: Option<SpatialBasis<T>>,
    /// Indices (into the data records) of the rows of the system.
    pub observed: Vec<usize>,
    pub layout: Layout,
    pub spec: ModelSpec,
}

/// Levels of a factor in natural order (numeric when every label parses).
fn ordered_levels(values: impl Iterator<Item = String>) -> Vec<String> {
    let set: BTreeSet<String> = values.collect();
    let mut v: Vec<String> = set.into_iter().collect();
    if v.iter().all(|s| s.parse::<f64>().is_ok()) {
        v.sort_by(|a, b| {
            a.parse::<f64>()
                .unwrap()
                .partial_cmp(&b.parse::<f64>().unwrap())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
    }
    v
}

/// Labels of `name` for all records and per-observed-row level indices;
/// fails if a level is never observed.
fn factor_coding(data: &TrialData, observed: &[usize], name: &str) -> Result<(Vec<String>, Vec<usize>)> {
    let all: Vec<String> = data
        .records()
        .iter()
        .map(|r| data.factor_value(r, name))
        .collect::<Result<_>>()?;
    let labels = ordered_levels(all.iter().cloned());
    let index: HashMap<&str, usize> = labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
    let rows: Vec<usize> = observed.iter().map(|&i| index[all[i].as_str()]).collect();
    let mut seen = vec![false; labels.len()];
    for &l in &rows {
        seen[l] = true;
    }
    if let Some(l) = seen.iter().position(|s| !s) {
        return Err(invalid(format!(
            "level `{}` of `{name}` occurs only in records with a missing response",
            labels[l]
        )));
    }
    Ok((labels, rows))
}

pub fn build_system<T: Real>(data: &TrialData, spec: &ModelSpec) -> Result<AssembledModel<T>> {
    let observed: Vec<usize> = data
        .records()
        .iter()
        .enumerate()
        .filter(|(_, r)| r.response.is_some())
        .map(|(i, _)| i)
        .collect();
    let n = observed.len();
    let layout = data.layout();
    let rec = |i: usize| &data.records()[i];
    let y = DVector::from_fn(n, |i, _| T::lit(rec(observed[i]).response.expect("observed")));

    let mut columns: Vec<DVector<T>> = Vec::new();
    let mut names: Vec<String> = Vec::new();
    let mut terms: Vec<FixedTerm> = Vec::new();
    let mut push_term = |name: &str,
                         kind: TermKind,
                         cols: Vec<(String, DVector<T>)>,
                         columns: &mut Vec<DVector<T>>,
                         names: &mut Vec<String>| {
        let start = columns.len();
        for (nm, c) in cols {
            names.push(nm);
            columns.push(c);
        }
        if columns.len() > start || kind == TermKind::Genotype {
            terms.push(FixedTerm {
                name: name.to_string(),
                kind,
                columns: start..columns.len(),
            });
        }
    };

    // Spatial surface (or a plain intercept).
    let mut blocks = Vec::new();
    let spatial = if spec.spatial.enabled {
        let cfg = spec.spatial.resolve(data);
        let basis = SpatialBasis::with_bounds(
            T::lit(layout.row_min as f64),
            T::lit(layout.row_max as f64),
            T::lit(layout.col_min as f64),
            T::lit(layout.col_max as f64),
            cfg,
        )?;
        let rows: Vec<T> = observed.iter().map(|&i| T::lit(rec(i).row as f64)).collect();
        let cols: Vec<T> = observed.iter().map(|&i| T::lit(rec(i).col as f64)).collect();
        let (x, z) = basis.design(&rows, &cols)?;
        let col = |j: usize| (FIXED_NAMES[j].to_string(), x.column(j).into_owned());
        push_term("Intercept", TermKind::Intercept, vec![col(0)], &mut columns, &mut names);
        for (j, name) in FIXED_NAMES.iter().enumerate().skip(1) {
            push_term(name, TermKind::Spatial, vec![col(j)], &mut columns, &mut names);
        }
        for ((zk, prec), name) in z.into_iter().zip(basis.precisions()).zip(SMOOTH_NAMES) {
            blocks.push(RandomBlock {
                name: name.to_string(),
                kind: BlockKind::Spatial,
                design: RandomDesign::Dense(zk),
                precision: prec,
                labels: vec![],
            });
        }
        Some(basis)
    } else {
        push_term(
            "Intercept",
            TermKind::Intercept,
            vec![("Intercept".into(), DVector::from_element(n, T::one()))],
            &mut columns,
            &mut names,
        );
        None
    };

    // Genotype.
    let gname = data.genotype_name.clone();
    let genotype_labels = data.genotype_levels();
    let mut coding = GenotypeCoding::default();
    let genotype_rows: Vec<&str> = observed.iter().map(|&i| rec(i).genotype.as_str()).collect();
    if spec.genotype != GenotypeRole::None {
        let observed_set: HashSet<&str> = genotype_rows.iter().copied().collect();
        if let Some(g) = genotype_labels.iter().find(|g| !observed_set.contains(g.as_str())) {
            return Err(invalid(format!(
                "genotype `{g}` occurs only in records with a missing response"
            )));
        }
    }
    let indicator =
        |label: &str| DVector::from_fn(n, |i, _| if genotype_rows[i] == label { T::one() } else { T::zero() });
    let mut genotype_block = None;
    match spec.genotype {
        GenotypeRole::Fixed => {
            if !spec.checks.is_empty() {
                return Err(invalid("checks are only meaningful with a random genotype"));
            }
            let reference = genotype_labels.first().cloned();
            let start = columns.len();
            let cols: Vec<(String, DVector<T>)> = genotype_labels
                .iter()
                .skip(1)
                .map(|g| (format!("{gname}_{g}"), indicator(g)))
                .collect();
            coding.fixed = genotype_labels
                .iter()
                .skip(1)
                .enumerate()
                .map(|(k, g)| (g.clone(), start + k))
                .collect();
            coding.reference = reference;
            push_term(&gname, TermKind::Genotype, cols, &mut columns, &mut names);
        }
        GenotypeRole::Random => {
            let checks: BTreeSet<&str> = spec.checks.iter().map(String::as_str).collect();
            for c in &checks {
                if !genotype_labels.iter().any(|g| g == c) {
                    return Err(Error::UnknownName(format!("check genotype {c}")));
                }
            }
            let start = columns.len();
            let cols: Vec<(String, DVector<T>)> =
                checks.iter().map(|g| (format!("{gname}_{g}"), indicator(g))).collect();
            coding.fixed = checks
                .iter()
                .enumerate()
                .map(|(k, g)| (g.to_string(), start + k))
                .collect();
            push_term("checks", TermKind::Check, cols, &mut columns, &mut names);
            let lines: Vec<String> = genotype_labels
                .iter()
                .filter(|g| !checks.contains(g.as_str()))
                .cloned()
                .collect();
            if lines.is_empty() {
                return Err(invalid(
                    "every genotype is a check; nothing left for the random genotype effect",
                ));
            }
            let index: HashMap<&str, usize> = lines.iter().enumerate().map(|(i, g)| (g.as_str(), i)).collect();
            let levels = genotype_rows.iter().map(|g| index.get(g).copied()).collect();
            genotype_block = Some(RandomBlock::factor(gname.clone(), BlockKind::Genotype, levels, lines));
        }
        GenotypeRole::None => {}
    }

    // Fixed factors and covariates.
    for f in &spec.fixed {
        let (labels, rows) = factor_coding(data, &observed, f)?;
        let cols = labels
            .iter()
            .enumerate()
            .skip(1)
            .map(|(l, lab)| {
                (
                    format!("{f}_{lab}"),
                    DVector::from_fn(n, |i, _| if rows[i] == l { T::one() } else { T::zero() }),
                )
            })
            .collect();
        push_term(f, TermKind::Factor, cols, &mut columns, &mut names);
    }
    for c in &spec.covariates {
        let vals: Vec<T> = observed
            .iter()
            .map(|&i| {
                let raw = data.factor_value(rec(i), c)?;
                raw.trim()
                    .parse::<f64>()
                    .map(T::lit)
                    .map_err(|_| invalid(format!("covariate `{c}` has non-numeric value `{raw}`")))
            })
            .collect::<Result<_>>()?;
        push_term(
            c,
            TermKind::Covariate,
            vec![(c.clone(), DVector::from_vec(vals))],
            &mut columns,
            &mut names,
        );
    }

    // Random factors, then the genotype block.
    let mut declared = HashSet::new();
    for f in &spec.random {
        if !declared.insert(f.as_str()) {
            return Err(invalid(format!("random factor `{f}` listed twice")));
        }
        let (labels, rows) = factor_coding(data, &observed, f)?;
        blocks.push(RandomBlock::factor(
            f.clone(),
            BlockKind::Factor,
            rows.into_iter().map(Some).collect(),
            labels,
        ));
    }
    blocks.extend(genotype_block);
    let genotype_index = blocks.iter().position(|b| b.kind == BlockKind::Genotype);
    coding.random_block = genotype_index;

    let x = DMatrix::from_columns(&columns);
    let system = Arc::new(MixedModelSystem::new(x, names, blocks, y)?);
    Ok(AssembledModel {
        system,
        fixed_terms: terms,
        coding,
        spatial,
        observed,
        layout,
        spec: spec.clone(),
    })
}

impl<T: Real> AssembledModel<T> {
    /// Number of fixed columns that belong to the spatial surface.
    pub fn spatial_fixed(&self) -> usize {
        if self.spatial.is_some() {
            4
        } else {
            0
        }
    }

    /// Number of random blocks that belong to the spatial surface.
    pub fn spatial_blocks(&self) -> usize {
        if self.spatial.is_some() {
            5
        } else {
            0
        }
    }
}

/// An assembled model together with its fit.
#[derive(Debug, Clone)]
pub struct TrialFit<T: Real> {
    pub model: AssembledModel<T>,
    pub fit: FittedModel<T>,
}

pub fn fit_trial<T: Real>(data: &TrialData, spec: &ModelSpec, options: FitOptions<T>) -> Result<TrialFit<T>> {
    let model = build_system(data, spec)?;
    let fit = fit(model.system.clone(), options)?;
    Ok(TrialFit { model, fit })
}

/// Regular grid over the layout bounding box, row-major (column index
/// varies fastest).
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct PredictionGrid {
    pub rows: Vec<f64>,
    pub cols: Vec<f64>,
    /// Whether the nearest plot position holds a record.
    pub in_field: Vec<bool>,
}

impl PredictionGrid {
    pub fn len(&self) -> usize {
        self.rows.len() * self.cols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(row, col)` coordinates of every grid point.
    pub fn points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.rows
            .iter()
            .flat_map(move |&r| self.cols.iter().map(move |&c| (r, c)))
    }
}

fn linspace(lo: f64, hi: f64, k: usize) -> Vec<f64> {
    if k == 1 {
        return vec![lo];
    }
    (0..k)
        .map(|i| {
            if i + 1 == k {
                hi
            } else {
                lo + (hi - lo) * i as f64 / (k - 1) as f64
            }
        })
        .collect()
}

pub fn prediction_grid(data: &TrialData, resolution: (usize, usize)) -> Result<PredictionGrid> {
    let l = data.layout();
    let (nr, nc) = resolution;
    if nr == 0 || nc == 0 {
        return Err(invalid("grid resolution must be positive"));
    }
    if nr < l.n_rows() || nc < l.n_cols() {
        return Err(invalid(format!(
            "grid resolution {nr}x{nc} is coarser than the {}x{} layout",
            l.n_rows(),
            l.n_cols()
        )));
    }
    grid_over(
        data,
        (l.row_min as f64, l.row_max as f64),
        (l.col_min as f64, l.col_max as f64),
        resolution,
    )
}

/// Grid over explicit coordinate ranges; points outside the fitted domain
/// are rejected later, when the surface is evaluated.
pub fn grid_over(
    data: &TrialData,
    rows: (f64, f64),
    cols: (f64, f64),
    resolution: (usize, usize),
) -> Result<PredictionGrid> {
    let (nr, nc) = resolution;
    if nr == 0 || nc == 0 {
        return Err(invalid("grid resolution must be positive"));
    }
    if !(rows.0 <= rows.1 && cols.0 <= cols.1) || ![rows.0, rows.1, cols.0, cols.1].iter().all(|v| v.is_finite()) {
        return Err(invalid("grid ranges must be finite and ordered"));
    }
    let rows = linspace(rows.0, rows.1, nr);
    let cols = linspace(cols.0, cols.1, nc);
    let plots: HashSet<(i64, i64)> = data.records().iter().map(|r| (r.row, r.col)).collect();
    let in_field = rows
        .iter()
        .flat_map(|&r| cols.iter().map(move |&c| (r, c)))
        .map(|(r, c)| plots.contains(&(r.round() as i64, c.round() as i64)))
        .collect();
    Ok(PredictionGrid { rows, cols, in_field })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::solver::tests::noise;

    pub(crate) fn record(row: i64, col: i64, gen: &str, y: Option<f64>, extra: &[(&str, &str)]) -> Record {
        Record {
            response: y,
            genotype: gen.to_string(),
            row,
            col,
            extra: extra.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }

    /// `nr × nc` field, genotypes cycling over `m` labels, replicate halves
    /// by column.
    pub(crate) fn small_trial(nr: i64, nc: i64, m: usize) -> TrialData {
        let mut recs = Vec::new();
        for r in 1..=nr {
            for c in 1..=nc {
                let i = ((r - 1) * nc + (c - 1)) as usize;
                let g = format!("G{:03}", (i * 7) % m);
                let rep = if c <= nc / 2 { "R1" } else { "R2" };
                let y = 10.0 + (r as f64 / nr as f64).sin() + 0.1 * c as f64 + noise(i, 1);
                recs.push(record(
                    r,
                    c,
                    &g,
                    Some(y),
                    &[("rep", rep), ("dose", &format!("{}", (i % 5) as f64 * 0.5))],
                ));
            }
        }
        TrialData::new("yield", "gen", recs).unwrap()
    }

    #[test]
    fn dimension_counts_with_fixed_genotype() {
        let data = small_trial(12, 16, 20);
        let spec = ModelSpec {
            genotype: GenotypeRole::Fixed,
            random: vec![ROW.into(), COL.into()],
            spatial: SpatialSpec {
                nseg_row: Some(8),
                nseg_col: Some(10),
                nest_div_row: Some(2),
                nest_div_col: Some(2),
                ..Default::default()
            },
            ..Default::default()
        };
        let m = build_system::<f64>(&data, &spec).unwrap();
        // 4 spatial fixed + 19 genotype dummies.
        assert_eq!(m.system.n_fixed(), 4 + 19);
        let dims: Vec<usize> = m.system.blocks().iter().map(|b| b.dim()).collect();
        // P = 13, L = 11, nested 8 and 7.
        assert_eq!(dims, vec![11, 9, 11, 9, 6 * 5, 12, 16]);
        assert_eq!(m.coding.reference.as_deref(), Some("G000"));
        assert_eq!(
            m.fixed_terms.iter().map(|t| t.name.as_str()).collect::<Vec<_>>(),
            vec!["Intercept", "row", "col", "row:col", "gen"]
        );
    }

    #[test]
    fn plain_ols_without_spatial_or_random() {
        let data = small_trial(4, 5, 3);
        let spec = ModelSpec {
            genotype: GenotypeRole::Fixed,
            spatial: SpatialSpec {
                enabled: false,
                ..Default::default()
            },
            ..Default::default()
        };
        let m = build_system::<f64>(&data, &spec).unwrap();
        assert_eq!(m.system.blocks().len(), 0);
        assert_eq!(m.system.n_fixed(), 3);
    }

    #[test]
    fn missing_responses_are_excluded() {
        let mut data = small_trial(6, 8, 4);
        let mut recs = data.records().to_vec();
        recs[5].response = None;
        recs[17].response = None;
        data = TrialData::new("yield", "gen", recs).unwrap();
        let spec = ModelSpec {
            random: vec!["rep".into()],
            ..Default::default()
        };
        let m = build_system::<f64>(&data, &spec).unwrap();
        assert_eq!(m.system.n(), 46);
        assert!(!m.observed.contains(&5) && !m.observed.contains(&17));
        assert_eq!(data.n_missing(), 2);
    }

    #[test]
    fn incidence_round_trip() {
        let data = small_trial(6, 8, 5);
        let spec = ModelSpec {
            genotype: GenotypeRole::Random,
            random: vec!["rep".into(), ROW.into()],
            ..Default::default()
        };
        let m = build_system::<f64>(&data, &spec).unwrap();
        let sys = &m.system;
        for name in ["rep", ROW, "gen"] {
            let k = sys.block_index(name).unwrap();
            let b = &sys.blocks()[k];
            let z = sys.z(k);
            for (row, &ri) in m.observed.iter().enumerate() {
                let label = if name == "gen" {
                    data.records()[ri].genotype.clone()
                } else {
                    data.factor_value(&data.records()[ri], name).unwrap()
                };
                let l = b.labels.iter().position(|x| *x == label).unwrap();
                for j in 0..b.dim() {
                    assert_eq!(z[(row, j)], if j == l { 1.0 } else { 0.0 });
                }
            }
        }
        assert_eq!(m.coding.random_block, sys.block_index("gen"));
        // Spatial blocks come first, then declared factors, then genotype.
        let order: Vec<&str> = sys.blocks().iter().map(|b| b.name.as_str()).collect();
        assert_eq!(&order[5..], &["rep", ROW, "gen"]);
    }

    #[test]
    fn row_subset_property() {
        let data = small_trial(6, 8, 4);
        let spec = ModelSpec {
            random: vec![COL.into()],
            covariates: vec!["dose".into()],
            ..Default::default()
        };
        let full = build_system::<f64>(&data, &spec).unwrap();
        let mut recs = data.records().to_vec();
        for i in [3, 10, 30] {
            recs[i].response = None;
        }
        let sub = build_system::<f64>(&TrialData::new("yield", "gen", recs).unwrap(), &spec).unwrap();
        for (a, &ri) in sub.observed.iter().enumerate() {
            let b = full.observed.iter().position(|&x| x == ri).unwrap();
            assert_eq!(sub.system.design().row(a), full.system.design().row(b));
        }
    }

    #[test]
    fn checks_and_lines_are_disjoint() {
        let data = small_trial(6, 8, 6);
        let spec = ModelSpec {
            genotype: GenotypeRole::Random,
            checks: vec!["G000".into(), "G001".into()],
            ..Default::default()
        };
        let m = build_system::<f64>(&data, &spec).unwrap();
        let g = m.coding.random_block.unwrap();
        assert_eq!(m.system.blocks()[g].dim(), 4);
        let z = m.system.z(g);
        for (k, (_, col)) in m.coding.fixed.iter().enumerate() {
            for i in 0..m.system.n() {
                if m.system.x()[(i, *col)] == 1.0 {
                    assert_eq!(z.row(i).sum(), 0.0, "check {k}");
                }
            }
        }
    }

    #[test]
    fn naming_errors() {
        let data = small_trial(4, 6, 3);
        let unknown = ModelSpec {
            random: vec!["block".into()],
            ..Default::default()
        };
        assert!(matches!(
            build_system::<f64>(&data, &unknown),
            Err(Error::UnknownName(_))
        ));
        let collinear = ModelSpec {
            covariates: vec!["row_copy".into()],
            ..Default::default()
        };
        let mut recs = data.records().to_vec();
        for r in &mut recs {
            let v = r.row.to_string();
            r.extra.insert("row_copy".into(), v);
        }
        let d2 = TrialData::new("yield", "gen", recs).unwrap();
        match build_system::<f64>(&d2, &collinear) {
            Err(Error::Collinear { column }) => assert_eq!(column, "row_copy"),
            other => panic!("expected collinearity error, got {other:?}"),
        }
    }

    #[test]
    fn genotype_only_in_missing_rows_is_reported() {
        let data = small_trial(4, 6, 3);
        let mut recs = data.records().to_vec();
        recs[0].genotype = "LOST".into();
        recs[0].response = None;
        let d = TrialData::new("yield", "gen", recs).unwrap();
        let err = build_system::<f64>(&d, &ModelSpec::default()).unwrap_err();
        assert!(err.to_string().contains("LOST"));
    }

    #[test]
    fn duplicate_plots_rejected() {
        let recs = vec![record(1, 1, "a", Some(1.0), &[]), record(1, 1, "b", Some(2.0), &[])];
        assert!(TrialData::new("y", "g", recs).is_err());
    }

    #[test]
    fn grids() {
        let data = small_trial(15, 48, 10);
        let g = prediction_grid(&data, (15, 48)).unwrap();
        assert_eq!(g.rows, (1..=15).map(|r| r as f64).collect::<Vec<_>>());
        assert!(g.in_field.iter().all(|&b| b));
        let g2 = prediction_grid(&data, (30, 96)).unwrap();
        assert_eq!(g2.len(), 4 * g.len());
        assert_eq!(g2.rows[0], 1.0);
        assert_eq!(*g2.cols.last().unwrap(), 48.0);
        assert!(prediction_grid(&data, (0, 48)).is_err());
        assert!(prediction_grid(&data, (10, 48)).is_err());
    }

    #[test]
    fn sugar_beet_shaped_dimensions() {
        let data = sugar_beet_like(1);
        assert_eq!(data.records().iter().filter(|r| r.response.is_some()).count(), 2411);
        let m = build_system::<f64>(&data, &sugar_beet_spec()).unwrap();
        assert_eq!(m.system.n_coefficients(), 1789);
        let dims: Vec<usize> = m.system.blocks().iter().map(|b| b.dim()).collect();
        assert_eq!(dims, vec![51, 27, 51, 27, 364, 26, 113, 31, 1091]);
    }

    pub(crate) fn sugar_beet_spec() -> ModelSpec {
        ModelSpec {
            genotype: GenotypeRole::Random,
            checks: (0..4).map(|c| format!("CHECK{c}")).collect(),
            random: vec![ROW.into(), COL.into(), "trial".into()],
            spatial: SpatialSpec {
                nseg_row: Some(26),
                nseg_col: Some(50),
                nest_div_row: Some(2),
                nest_div_col: Some(2),
                ..Default::default()
            },
            ..Default::default()
        }
    }

    /// A 26 × 113 field with 2411 plots in 31 trials: 4 checks in every
    /// trial and 1091 lines each confined to one trial.
    pub(crate) fn sugar_beet_like(seed: usize) -> TrialData {
        let (nr, nc) = (26i64, 113i64);
        // Trials are column bands; the 527 empty plots are spread evenly so
        // every row and column stays occupied.
        let total = (nr * nc) as usize;
        let drop = total - 2411;
        let mut plots: Vec<(i64, i64)> = Vec::new();
        for c in 1..=nc {
            for r in 1..=nr {
                let k = ((c - 1) * nr + r - 1) as usize;
                if (k * drop) / total == ((k + 1) * drop) / total {
                    plots.push((r, c));
                }
            }
        }
        assert_eq!(plots.len(), 2411);
        let per_trial = 2411 / 31;
        let mut recs = Vec::with_capacity(plots.len());
        let mut line = 0usize;
        for (i, &(r, c)) in plots.iter().enumerate() {
            let trial = (i / per_trial).min(30);
            let pos = i - trial * per_trial;
            let gen = if pos < 4 {
                format!("CHECK{pos}")
            } else if line < 1091 {
                line += 1;
                format!("L{:04}", line - 1)
            } else {
                format!("L{:04}", (i * 31) % 1091)
            };
            let trend = ((r as f64) / 5.0).sin() + ((c as f64) / 17.0).cos() * 1.5;
            let y = 50.0 + trend + 0.5 * noise(i, seed) + 0.3 * noise(line, seed + 1);
            recs.push(record(r, c, &gen, Some(y), &[("trial", &format!("T{trial:02}"))]));
        }
        TrialData::new("amino_n", "gen", recs).unwrap()
    }
}
