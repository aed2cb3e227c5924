//! Reading trial tables and run configurations; writing result bundles.
//!
//! Output files (all written only after every payload has been rendered):
//!
//! | file | columns |
//! |------|---------|
//! | `ed_table.csv` | component, type, effective_dim, model_dim, nominal_dim, ratio, variance |
//! | `variances.csv` | component, variance, sd, log10_lambda |
//! | `blups.csv` | genotype, value, kind |
//! | `fitted.csv` | row, col, genotype, observed, fitted, residual, spatial |
//! | `trend_grid.csv` | row, col, in_field, trend, bilinear, one column per smooth component |
//! | `summary.json` | see [`Summary`] |
//! | `trend.svg`, `residuals.svg` | heatmaps, when requested |

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use crate::diagnostics::{decompose_surface, ed_table, spatial_component, EdTable, VariogramTable};
use crate::error::{invalid, Error, Result};
use crate::fitter::FitOptions;
use crate::genetics::{genotype_predictions, heritability, HeritabilityMode, HeritabilityReport};
use crate::model::{
    prediction_grid, GenotypeRole, ModelSpec, PredictionGrid, Record, SpatialSpec, TrialData, TrialFit,
};
use crate::simulation::SimulationReport;

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_MISSING: &str = "NA";

/// Column roles of a trial table.
#[derive(Debug, Clone, PartialEq)]
pub struct TableSpec {
    pub response: String,
    /// `None` reads a table without genotypes (every record gets an empty
    /// label).
    pub genotype: Option<String>,
    pub row: String,
    pub col: String,
    pub missing: String,
    /// `None` picks whichever of comma, tab or semicolon is most frequent in
    /// the header line.
    pub delimiter: Option<u8>,
}

impl TableSpec {
    pub fn new(response: impl Into<String>, genotype: Option<String>) -> Self {
        Self {
            response: response.into(),
            genotype,
            row: "row".into(),
            col: "col".into(),
            missing: DEFAULT_MISSING.into(),
            delimiter: None,
        }
    }
}

fn detect_delimiter(text: &str) -> u8 {
    let header = text.lines().next().unwrap_or("");
    b",\t;"
        .iter()
        .copied()
        .rev()
        .max_by_key(|d| header.bytes().filter(|b| b == d).count())
        .unwrap_or(b',')
}

pub fn read_trial(path: &Path, spec: &TableSpec) -> Result<TrialData> {
    let mut text = String::new();
    fs::File::open(path)?.read_to_string(&mut text)?;
    parse_trial(&text, spec)
}

pub fn parse_trial(text: &str, spec: &TableSpec) -> Result<TrialData> {
    let delimiter = spec.delimiter.unwrap_or_else(|| detect_delimiter(text));
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let mut index = HashMap::new();
    for (i, h) in headers.iter().enumerate() {
        if index.insert(h.as_str(), i).is_some() {
            return Err(Error::Parse {
                line: 1,
                message: format!("duplicate column `{h}`"),
            });
        }
    }
    let column = |name: &str| {
        index.get(name).copied().ok_or_else(|| Error::Parse {
            line: 1,
            message: format!("missing required column `{name}`"),
        })
    };
    let (ri, ci, yi) = (column(&spec.row)?, column(&spec.col)?, column(&spec.response)?);
    let gi = spec.genotype.as_deref().map(column).transpose()?;
    let used = [Some(ri), Some(ci), Some(yi), gi];

    let mut records = Vec::new();
    let mut plots: HashMap<(i64, i64), usize> = HashMap::new();
    for rec in reader.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let field = |i: usize| rec.get(i).unwrap_or("");
        let int = |i: usize, what: &str| {
            field(i).parse::<i64>().map_err(|_| Error::Parse {
                line,
                message: format!("{what} `{}` is not an integer", field(i)),
            })
        };
        let (row, col) = (int(ri, "row")?, int(ci, "col")?);
        let raw = field(yi);
        let response = if raw == spec.missing || raw.is_empty() {
            None
        } else {
            Some(raw.parse::<f64>().map_err(|_| Error::Parse {
                line,
                message: format!("response `{raw}` is not a number"),
            })?)
        };
        if let Some(prev) = plots.insert((row, col), line) {
            return Err(Error::Parse {
                line,
                message: format!("duplicate plot at row {row} col {col} (first seen on line {prev})"),
            });
        }
        let extra = headers
            .iter()
            .enumerate()
            .filter(|(i, _)| !used.contains(&Some(*i)))
            .map(|(i, h)| (h.clone(), field(i).to_string()))
            .collect();
        records.push(Record {
            response,
            genotype: gi.map(|i| field(i).to_string()).unwrap_or_default(),
            row,
            col,
            extra,
        });
    }
    if records.is_empty() {
        return Err(invalid("the table has no records"));
    }
    TrialData::new(
        spec.response.clone(),
        spec.genotype.clone().unwrap_or_default(),
        records,
    )
}

/// Writes a table that [`read_trial`] reads back to the same records.
pub fn write_trial(path: &Path, data: &TrialData, spec: &TableSpec) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .delimiter(spec.delimiter.unwrap_or(b','))
        .from_path(path)?;
    let extras = data.extra_names();
    let mut header = vec![spec.response.clone()];
    header.extend(spec.genotype.clone());
    header.push(spec.row.clone());
    header.push(spec.col.clone());
    header.extend(extras.iter().cloned());
    w.write_record(&header)?;
    for r in data.records() {
        let mut row = vec![r.response.map_or_else(|| spec.missing.clone(), |v| v.to_string())];
        if spec.genotype.is_some() {
            row.push(r.genotype.clone());
        }
        row.push(r.row.to_string());
        row.push(r.col.to_string());
        row.extend(extras.iter().map(|e| r.extra.get(e).cloned().unwrap_or_default()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Emit {
    pub tables: bool,
    pub json: bool,
    pub svg: bool,
}

impl Default for Emit {
    fn default() -> Self {
        Self {
            tables: true,
            json: true,
            svg: false,
        }
    }
}

/// Declarative description of one analysis, stored as TOML.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub response: Option<String>,
    pub genotype: Option<String>,
    pub genotype_as_random: bool,
    pub row: String,
    pub col: String,
    pub missing: String,
    pub delimiter: Option<char>,
    pub checks: Vec<String>,
    pub fixed: Vec<String>,
    pub covariates: Vec<String>,
    pub random: Vec<String>,
    pub spatial: SpatialSpec,
    pub tolerance: f64,
    pub max_iter: usize,
    pub monitoring: u8,
    /// Prediction grid as `[rows, cols]`; defaults to the layout.
    pub resolution: Option<[usize; 2]>,
    pub emit: Emit,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            input: None,
            output: None,
            response: None,
            genotype: None,
            genotype_as_random: false,
            row: "row".into(),
            col: "col".into(),
            missing: DEFAULT_MISSING.into(),
            delimiter: None,
            checks: vec![],
            fixed: vec![],
            covariates: vec![],
            random: vec![],
            spatial: SpatialSpec::default(),
            tolerance: 1e-6,
            max_iter: 500,
            monitoring: 0,
            resolution: None,
            emit: Emit::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn table_spec(&self) -> Result<TableSpec> {
        let response = self
            .response
            .clone()
            .ok_or_else(|| Error::Config("no response column given".into()))?;
        let delimiter = match self.delimiter {
            None => None,
            Some(c) if c.is_ascii() => Some(c as u8),
            Some(c) => return Err(Error::Config(format!("delimiter `{c}` is not ASCII"))),
        };
        Ok(TableSpec {
            response,
            genotype: self.genotype.clone(),
            row: self.row.clone(),
            col: self.col.clone(),
            missing: self.missing.clone(),
            delimiter,
        })
    }

    pub fn model_spec(&self) -> ModelSpec {
        let genotype = match (&self.genotype, self.genotype_as_random) {
            (None, _) => GenotypeRole::None,
            (Some(_), true) => GenotypeRole::Random,
            (Some(_), false) => GenotypeRole::Fixed,
        };
        ModelSpec {
            genotype,
            checks: self.checks.clone(),
            fixed: self.fixed.clone(),
            covariates: self.covariates.clone(),
            random: self.random.clone(),
            spatial: self.spatial.clone(),
        }
    }

    pub fn fit_options(&self) -> FitOptions<f64> {
        FitOptions {
            tolerance: self.tolerance,
            max_iter: self.max_iter,
            trace_level: self.monitoring,
            ..Default::default()
        }
    }

    /// Checks that every named column exists in the data.
    pub fn validate_against(&self, data: &TrialData) -> Result<()> {
        let names = data.extra_names();
        for n in self.fixed.iter().chain(&self.covariates).chain(&self.random) {
            if n != "row" && n != "col" && !names.contains(n) {
                return Err(Error::UnknownName(n.clone()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct VarianceRow {
    pub name: String,
    pub variance: f64,
    pub sd: f64,
    /// `log10(σ² / σ_k²)`; absent for the residual.
    pub log10_lambda: Option<f64>,
}

pub fn variance_rows(table: &EdTable) -> Vec<VarianceRow> {
    let s2 = table.residual_variance;
    let mut rows: Vec<VarianceRow> = table
        .rows
        .iter()
        .filter_map(|r| {
            r.variance.map(|v| VarianceRow {
                name: r.name.clone(),
                variance: v,
                sd: v.sqrt(),
                log10_lambda: Some((s2 / v).log10()),
            })
        })
        .collect();
    rows.push(VarianceRow {
        name: "Residual".into(),
        variance: s2,
        sd: s2.sqrt(),
        log10_lambda: None,
    });
    rows
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct DimensionRow {
    pub name: String,
    #[serde(rename = "type")]
    pub kind: String,
    pub variance: Option<f64>,
    #[serde(rename = "ED")]
    pub effective_dim: f64,
    pub model_dim: usize,
    pub nominal_dim: usize,
    pub ratio: f64,
}

/// Machine-readable counterpart of the printed summary.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct Summary {
    pub schema_version: u32,
    pub response: String,
    pub genotype: Option<String>,
    pub n_obs: usize,
    pub n_missing: usize,
    pub converged: bool,
    pub iterations: usize,
    pub deviance: f64,
    pub variance_components: Vec<VarianceRow>,
    pub dimensions: Vec<DimensionRow>,
    pub total_effective: f64,
    pub total_model: usize,
    pub total_nominal: usize,
    pub residual_ed: f64,
    pub heritability: Vec<HeritabilityReport>,
    pub model: ModelSpec,
}

pub fn summary(tf: &TrialFit<f64>, data: &TrialData) -> Summary {
    let table = ed_table(tf);
    let heritability = [
        HeritabilityMode::Standard,
        HeritabilityMode::Cullis,
        HeritabilityMode::Oakey,
    ]
    .into_iter()
    .filter_map(|m| heritability(&tf.fit, m).ok())
    .collect();
    Summary {
        schema_version: SCHEMA_VERSION,
        response: data.response_name.clone(),
        genotype: (tf.model.spec.genotype != GenotypeRole::None).then(|| data.genotype_name.clone()),
        n_obs: table.n_obs,
        n_missing: data.n_missing(),
        converged: tf.fit.converged,
        iterations: tf.fit.iterations,
        deviance: tf.fit.deviance,
        variance_components: variance_rows(&table),
        dimensions: table
            .rows
            .iter()
            .map(|r| DimensionRow {
                name: r.name.clone(),
                kind: r.kind.to_string(),
                variance: r.variance,
                effective_dim: r.effective_dim,
                model_dim: r.model_dim,
                nominal_dim: r.nominal_dim,
                ratio: r.ratio,
            })
            .collect(),
        total_effective: table.total_effective,
        total_model: table.total_model,
        total_nominal: table.total_nominal,
        residual_ed: table.residual_ed,
        heritability,
        model: tf.model.spec.clone(),
    }
}

/// Scientific notation with a signed two-digit exponent, e.g. `4.397e+02`.
pub fn sci(v: f64) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    let s = format!("{v:.3e}");
    let (mant, exp) = s.split_once('e').expect("exponent present");
    let e: i32 = exp.parse().expect("integer exponent");
    format!("{mant}e{}{:02}", if e < 0 { '-' } else { '+' }, e.abs())
}

/// Human-readable report: variance components, then the dimensions table.
pub fn format_summary(s: &Summary) -> String {
    let mut o = String::new();
    let _ = writeln!(o, "Response:                  {}", s.response);
    if let Some(g) = &s.genotype {
        let role = if s.model.genotype == GenotypeRole::Random {
            "random"
        } else {
            "fixed"
        };
        let _ = writeln!(o, "{:<27}{g}", format!("Genotypes ({role}):"));
    }
    if !s.model.fixed.is_empty() || !s.model.covariates.is_empty() {
        let f: Vec<&str> = s
            .model
            .fixed
            .iter()
            .chain(&s.model.covariates)
            .map(String::as_str)
            .collect();
        let _ = writeln!(o, "Fixed:                     {}", f.join(" + "));
    }
    if !s.model.random.is_empty() {
        let _ = writeln!(o, "Random:                    {}", s.model.random.join(" + "));
    }
    let _ = writeln!(o);
    let _ = writeln!(o, "Number of observations:    {}", s.n_obs);
    let _ = writeln!(o, "Number of missing data:    {}", s.n_missing);
    let _ = writeln!(o, "Effective dimension:       {:.2}", s.total_effective);
    let _ = writeln!(o, "REML deviance:             {:.4}", s.deviance);
    let _ = writeln!(
        o,
        "Iterations:                {}{}",
        s.iterations,
        if s.converged { "" } else { " (not converged)" }
    );
    let _ = writeln!(o);
    let _ = writeln!(o, "Variance components:");
    let _ = writeln!(o, "{:<16}{:>12}{:>12}{:>16}", "", "Variance", "SD", "log10(lambda)");
    for v in &s.variance_components {
        let lambda = v.log10_lambda.map_or(String::new(), |l| format!("{l:.5}"));
        let _ = writeln!(
            o,
            "{:<16}{:>12}{:>12}{:>16}",
            v.name,
            sci(v.variance),
            sci(v.sd),
            lambda
        );
    }
    let _ = writeln!(o);
    let _ = writeln!(o, "Dimensions:");
    let _ = writeln!(
        o,
        "{:<16}{:>10}{:>8}{:>9}{:>8}{:>6}",
        "", "Effective", "Model", "Nominal", "Ratio", "Type"
    );
    for d in &s.dimensions {
        let _ = writeln!(
            o,
            "{:<16}{:>10.1}{:>8}{:>9}{:>8.2}{:>6}",
            d.name, d.effective_dim, d.model_dim, d.nominal_dim, d.ratio, d.kind
        );
    }
    let ratio = if s.total_nominal > 0 {
        s.total_effective / s.total_nominal as f64
    } else {
        0.0
    };
    let _ = writeln!(
        o,
        "{:<16}{:>10.1}{:>8}{:>9}{:>8.2}",
        "Total", s.total_effective, s.total_model, s.total_nominal, ratio
    );
    let _ = writeln!(o, "{:<16}{:>10.1}", "Residual", s.residual_ed);
    let _ = writeln!(o, "{:<16}{:>10}", "Nobs", s.n_obs);
    let _ = writeln!(o);
    let _ = writeln!(o, "Type codes: F 'Fixed'    R 'Random'    S 'Smooth/Semiparametric'");
    for h in &s.heritability {
        let _ = writeln!(o, "Heritability ({}): {:.4}", h.mode, h.value);
    }
    o
}

/// CSV text from a header and rows of already formatted cells.
fn csv_text(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

fn num(v: f64) -> String {
    v.to_string()
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

pub fn ed_table_csv(table: &EdTable) -> Result<String> {
    let mut rows: Vec<Vec<String>> = table
        .rows
        .iter()
        .map(|r| {
            vec![
                r.name.clone(),
                r.kind.to_string(),
                num(r.effective_dim),
                r.model_dim.to_string(),
                r.nominal_dim.to_string(),
                num(r.ratio),
                opt(r.variance),
            ]
        })
        .collect();
    rows.push(vec![
        "Total".into(),
        String::new(),
        num(table.total_effective),
        table.total_model.to_string(),
        table.total_nominal.to_string(),
        String::new(),
        String::new(),
    ]);
    rows.push(vec![
        "Residual".into(),
        String::new(),
        num(table.residual_ed),
        String::new(),
        String::new(),
        String::new(),
        num(table.residual_variance),
    ]);
    csv_text(
        &[
            "component",
            "type",
            "effective_dim",
            "model_dim",
            "nominal_dim",
            "ratio",
            "variance",
        ],
        rows,
    )
}

/// Trend and its components on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TrendGrid {
    pub grid: PredictionGrid,
    pub trend: Vec<f64>,
    pub bilinear: Vec<f64>,
    pub smooth: Vec<(String, Vec<f64>)>,
}

pub fn trend_grid(tf: &TrialFit<f64>, data: &TrialData, resolution: Option<[usize; 2]>) -> Result<TrendGrid> {
    let l = data.layout();
    let [nr, nc] = resolution.unwrap_or([l.n_rows(), l.n_cols()]);
    trend_on(tf, prediction_grid(data, (nr, nc))?)
}

pub fn trend_on(tf: &TrialFit<f64>, grid: PredictionGrid) -> Result<TrendGrid> {
    let points: Vec<(f64, f64)> = grid.points().collect();
    let d = decompose_surface(tf, &points, true)?;
    Ok(TrendGrid {
        grid,
        trend: d.total,
        bilinear: d.bilinear,
        smooth: d.smooth,
    })
}

pub fn trend_grid_csv(t: &TrendGrid) -> Result<String> {
    let mut header = vec!["row", "col", "in_field", "trend", "bilinear"];
    header.extend(t.smooth.iter().map(|(n, _)| n.as_str()));
    let rows = t.grid.points().enumerate().map(|(i, (r, c))| {
        let mut v = vec![
            num(r),
            num(c),
            t.grid.in_field[i].to_string(),
            num(t.trend[i]),
            num(t.bilinear[i]),
        ];
        v.extend(t.smooth.iter().map(|(_, s)| num(s[i])));
        v
    });
    csv_text(&header, rows)
}

pub fn variogram_csv(v: &VariogramTable) -> Result<String> {
    csv_text(
        &["row_displacement", "col_displacement", "value", "pairs"],
        v.rows.iter().map(|r| {
            vec![
                r.row_displacement.to_string(),
                r.col_displacement.to_string(),
                num(r.value),
                r.pairs.to_string(),
            ]
        }),
    )
}

fn lerp(a: (u8, u8, u8), b: (u8, u8, u8), t: f64) -> (u8, u8, u8) {
    let f = |x: u8, y: u8| (x as f64 + (y as f64 - x as f64) * t).round() as u8;
    (f(a.0, b.0), f(a.1, b.1), f(a.2, b.2))
}

/// Blue–white–red ramp on `[0, 1]`.
fn ramp(t: f64) -> String {
    const LOW: (u8, u8, u8) = (33, 102, 172);
    const MID: (u8, u8, u8) = (247, 247, 247);
    const HIGH: (u8, u8, u8) = (178, 24, 43);
    let t = t.clamp(0.0, 1.0);
    let (r, g, b) = if t < 0.5 {
        lerp(LOW, MID, t * 2.0)
    } else {
        lerp(MID, HIGH, t * 2.0 - 1.0)
    };
    format!("#{r:02x}{g:02x}{b:02x}")
}

/// Static SVG heatmap of an `n_rows × n_cols` row-major field; `None`
/// cells are drawn grey.
pub fn heatmap_svg(title: &str, n_rows: usize, n_cols: usize, values: &[Option<f64>]) -> Result<String> {
    if values.len() != n_rows * n_cols || values.is_empty() {
        return Err(invalid("heatmap values do not match the grid"));
    }
    let finite: Vec<f64> = values.iter().flatten().copied().filter(|v| v.is_finite()).collect();
    let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let cell = (600.0 / n_cols.max(n_rows) as f64).clamp(2.0, 24.0);
    let (w, h) = (cell * n_cols as f64, cell * n_rows as f64);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{:.0}" height="{:.0}">"#,
        w + 20.0,
        h + 60.0
    );
    let _ = writeln!(
        s,
        r#"<text x="10" y="18" font-family="sans-serif" font-size="14">{}</text>"#,
        escape(title)
    );
    let _ = writeln!(s, r#"<g transform="translate(10,28)">"#);
    for (i, v) in values.iter().enumerate() {
        let (r, c) = (i / n_cols, i % n_cols);
        let fill = match v {
            Some(v) if v.is_finite() && hi > lo => ramp((v - lo) / (hi - lo)),
            Some(v) if v.is_finite() => ramp(0.5),
            _ => "#bdbdbd".to_string(),
        };
        let _ = writeln!(
            s,
            r#"<rect class="cell" x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{fill}"/>"#,
            c as f64 * cell,
            r as f64 * cell,
            cell,
            cell
        );
    }
    let _ = writeln!(s, "</g>");
    let (lo_txt, hi_txt) = if finite.is_empty() {
        ("NA".into(), "NA".into())
    } else {
        (format!("{lo:.4}"), format!("{hi:.4}"))
    };
    let _ = writeln!(
        s,
        r#"<text x="10" y="{:.0}" font-family="sans-serif" font-size="12">min = {lo_txt}   max = {hi_txt}</text>"#,
        h + 48.0
    );
    s.push_str("</svg>\n");
    Ok(s)
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders every output of a fit; nothing touches the disk.
pub fn render_outputs(tf: &TrialFit<f64>, data: &TrialData, config: &RunConfig) -> Result<BTreeMap<String, String>> {
    let mut files = BTreeMap::new();
    let table = ed_table(tf);
    let spatial = tf.model.spatial.is_some();
    let trend = if spatial {
        Some(trend_grid(tf, data, config.resolution)?)
    } else {
        None
    };
    if config.emit.tables {
        files.insert("ed_table.csv".into(), ed_table_csv(&table)?);
        let vr = variance_rows(&table);
        files.insert(
            "variances.csv".into(),
            csv_text(
                &["component", "variance", "sd", "log10_lambda"],
                vr.iter()
                    .map(|v| vec![v.name.clone(), num(v.variance), num(v.sd), opt(v.log10_lambda)]),
            )?,
        );
        let preds = genotype_predictions(&tf.fit, &tf.model.coding);
        files.insert(
            "blups.csv".into(),
            csv_text(
                &["genotype", "value", "kind"],
                preds.iter().map(|p| {
                    let kind = serde_json::to_value(p.kind)
                        .ok()
                        .and_then(|v| v.as_str().map(str::to_string))
                        .unwrap_or_default();
                    vec![p.genotype.clone(), num(p.value), kind]
                }),
            )?,
        );
        let sc = if spatial { Some(spatial_component(tf)?) } else { None };
        let solve = &tf.fit.solve;
        files.insert(
            "fitted.csv".into(),
            csv_text(
                &["row", "col", "genotype", "observed", "fitted", "residual", "spatial"],
                tf.model.observed.iter().enumerate().map(|(k, &i)| {
                    let r = &data.records()[i];
                    vec![
                        r.row.to_string(),
                        r.col.to_string(),
                        r.genotype.clone(),
                        opt(r.response),
                        num(solve.fitted[k]),
                        num(solve.residuals[k]),
                        opt(sc.as_ref().map(|s| s[k])),
                    ]
                }),
            )?,
        );
        if let Some(t) = &trend {
            files.insert("trend_grid.csv".into(), trend_grid_csv(t)?);
        }
    }
    if config.emit.json {
        let s = summary(tf, data);
        files.insert("summary.json".into(), serde_json::to_string_pretty(&s)? + "\n");
    }
    if config.emit.svg {
        if let Some(t) = &trend {
            let vals: Vec<Option<f64>> = t.trend.iter().map(|&v| Some(v)).collect();
            files.insert(
                "trend.svg".into(),
                heatmap_svg("Spatial trend", t.grid.rows.len(), t.grid.cols.len(), &vals)?,
            );
        }
        let l = data.layout();
        let mut field = vec![None; l.n_rows() * l.n_cols()];
        for (k, &i) in tf.model.observed.iter().enumerate() {
            let r = &data.records()[i];
            field[(r.row - l.row_min) as usize * l.n_cols() + (r.col - l.col_min) as usize] =
                Some(tf.fit.solve.residuals[k]);
        }
        files.insert(
            "residuals.svg".into(),
            heatmap_svg("Residuals", l.n_rows(), l.n_cols(), &field)?,
        );
    }
    Ok(files)
}

/// Writes rendered files into `dir`, creating it if needed.
pub fn write_files(dir: &Path, files: &BTreeMap<String, String>) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    files
        .iter()
        .map(|(name, body)| {
            let p = dir.join(name);
            fs::write(&p, body)?;
            Ok(p)
        })
        .collect()
}

pub fn write_outputs(tf: &TrialFit<f64>, data: &TrialData, config: &RunConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    let files = render_outputs(tf, data, config)?;
    write_files(dir, &files)
}

/// Simulation report as `simulation_summary.csv`, `simulation_runs.csv` and
/// `simulation.json`.
pub fn render_simulation(report: &SimulationReport) -> Result<BTreeMap<String, String>> {
    let mut files = BTreeMap::new();
    let variant_name = |v| {
        serde_json::to_value(v)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default()
    };
    files.insert(
        "simulation_summary.csv".into(),
        csv_text(
            &[
                "variant",
                "convergence_pct",
                "log10_rmse_mean",
                "log10_rmse_sd",
                "bias_genetic_mean",
                "bias_genetic_sd",
                "bias_residual_mean",
                "bias_residual_sd",
                "ed_spatial_mean",
                "ed_spatial_sd",
                "oracle_log10_rmse_mean",
                "runs_used",
            ],
            report.variants.iter().map(|v| {
                vec![
                    variant_name(v.variant),
                    num(v.convergence_pct),
                    num(v.log10_rmse.mean),
                    num(v.log10_rmse.sd),
                    num(v.bias_genetic.mean),
                    num(v.bias_genetic.sd),
                    num(v.bias_residual.mean),
                    num(v.bias_residual.sd),
                    opt(v.ed_spatial.map(|s| s.mean)),
                    opt(v.ed_spatial.map(|s| s.sd)),
                    num(report.oracle_log10_rmse.mean),
                    report.runs_used.to_string(),
                ]
            }),
        )?,
    );
    let mut rows = Vec::new();
    for run in &report.runs {
        for (k, v) in run.variants.iter().enumerate() {
            let name = variant_name(report.config.variants[k]);
            rows.push(match v {
                Ok(o) => vec![
                    run.run.to_string(),
                    name,
                    o.converged.to_string(),
                    o.iterations.to_string(),
                    num(o.log10_rmse),
                    num(o.bias_genetic),
                    num(o.bias_residual),
                    opt(o.ed_spatial),
                    num(run.oracle_log10_rmse),
                    String::new(),
                ],
                Err(e) => {
                    let mut r = vec![run.run.to_string(), name, "false".into()];
                    r.extend(std::iter::repeat_n(String::new(), 5));
                    r.push(num(run.oracle_log10_rmse));
                    r.push(e.clone());
                    r
                }
            });
        }
    }
    files.insert(
        "simulation_runs.csv".into(),
        csv_text(
            &[
                "run",
                "variant",
                "converged",
                "iterations",
                "log10_rmse",
                "bias_genetic",
                "bias_residual",
                "ed_spatial",
                "oracle_log10_rmse",
                "error",
            ],
            rows,
        )?,
    );
    files.insert("simulation.json".into(), serde_json::to_string_pretty(report)? + "\n");
    Ok(files)
}
