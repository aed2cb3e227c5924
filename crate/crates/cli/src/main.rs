//! `spatrial` command-line front end.
//!
//! Exit codes: 0 success, 1 invalid input or failed fit, 2 outputs written
//! but the fit did not converge. Errors are reported on stderr as a single
//! line `error: <kind>: <message>`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use spatrial::diagnostics::residual_variogram;
use spatrial::io::{
    format_summary, heatmap_svg, read_trial, render_outputs, render_simulation, summary, trend_grid, trend_grid_csv,
    trend_on, variogram_csv, write_files, RunConfig,
};
use spatrial::model::{fit_trial, grid_over, TrialData};
use spatrial::simulation::{run_study_with_threads, ModelVariant, SimulationConfig};
use spatrial::{Error, Result, TrialFitF64};

const OUTPUT_ENV: &str = "SPATRIAL_OUTPUT_DIR";
const DEFAULT_OUTPUT: &str = "spatrial-out";

#[derive(Parser, Debug)]
#[command(name = "spatrial", version, about = "Spatial mixed models for field trials")]
struct Cli {
    /// Upper bound on worker threads (simulate only).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Repeat for more diagnostics on stderr.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a trial and write the result bundle.
    Fit(ModelArgs),
    /// Fit a trial and evaluate the spatial trend on a grid.
    Predict(PredictArgs),
    /// Run a simulation study.
    Simulate(SimulateArgs),
    /// Fit a trial and tabulate the sample variogram of its residuals.
    Variogram(ModelArgs),
}

#[derive(Args, Debug, Default)]
struct ModelArgs {
    /// TOML run configuration; inline flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    /// Output directory (default: $SPATRIAL_OUTPUT_DIR, else ./spatrial-out).
    #[arg(short, long)]
    output: Option<PathBuf>,
    #[arg(long)]
    response: Option<String>,
    #[arg(long)]
    genotype: Option<String>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    genotype_as_random: Option<bool>,
    /// Genotypes kept fixed when genotype is random.
    #[arg(long, value_delimiter = ',')]
    checks: Option<Vec<String>>,
    /// Fixed factors.
    #[arg(long, value_delimiter = ',')]
    fixed: Option<Vec<String>>,
    /// Numeric fixed covariates.
    #[arg(long, value_delimiter = ',')]
    covariates: Option<Vec<String>>,
    /// Random factors; `row` and `col` use the coordinates.
    #[arg(long, value_delimiter = ',')]
    random: Option<Vec<String>>,
    #[arg(long)]
    nseg_row: Option<usize>,
    #[arg(long)]
    nseg_col: Option<usize>,
    #[arg(long)]
    degree: Option<usize>,
    /// Nesting divisor for both margins.
    #[arg(long)]
    nest_div: Option<usize>,
    #[arg(long)]
    nest_div_row: Option<usize>,
    #[arg(long)]
    nest_div_col: Option<usize>,
    /// Leave the spatial surface out of the model.
    #[arg(long)]
    no_spatial: bool,
    #[arg(long)]
    tolerance: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Per-iteration trace on stderr (1 or 2).
    #[arg(long)]
    monitoring: Option<u8>,
    /// Token marking a missing response.
    #[arg(long)]
    missing: Option<String>,
    #[arg(long)]
    delimiter: Option<char>,
    /// Prediction grid as ROWSxCOLS.
    #[arg(long, value_parser = parse_resolution)]
    resolution: Option<[usize; 2]>,
    /// Also write SVG heatmaps.
    #[arg(long)]
    svg: bool,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Row range LO:HI of the grid (default: the layout).
    #[arg(long, value_parser = parse_range)]
    rows: Option<(f64, f64)>,
    /// Column range LO:HI of the grid (default: the layout).
    #[arg(long, value_parser = parse_range)]
    cols: Option<(f64, f64)>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// TOML simulation configuration; inline flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(short, long)]
    output: Option<PathBuf>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_rows: Option<usize>,
    #[arg(long)]
    n_cols: Option<usize>,
    #[arg(long)]
    genotypes: Option<usize>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    block_size: Option<usize>,
    #[arg(long)]
    sigma2_genetic: Option<f64>,
    #[arg(long)]
    sigma2_spatial: Option<f64>,
    #[arg(long)]
    sigma2: Option<f64>,
    /// Sets both autocorrelations.
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    rho_row: Option<f64>,
    #[arg(long)]
    rho_col: Option<f64>,
    /// Comma-separated list of `spatial`, `row_col`.
    #[arg(long, value_delimiter = ',')]
    variants: Option<Vec<String>>,
}

fn parse_resolution(s: &str) -> std::result::Result<[usize; 2], String> {
    let (r, c) = s.split_once(['x', 'X']).ok_or("expected ROWSxCOLS")?;
    let p = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v}: {e}"));
    Ok([p(r)?, p(c)?])
}

fn parse_range(s: &str) -> std::result::Result<(f64, f64), String> {
    let (a, b) = s.split_once(':').ok_or("expected LO:HI")?;
    let p = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("{v}: {e}"));
    Ok((p(a)?, p(b)?))
}

impl ModelArgs {
    fn run_config(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => { $( if let Some(v) = &self.$field { c.$field = v.clone().into(); } )* };
        }
        set!(input, output, response, genotype);
        set!(checks, fixed, covariates, random, tolerance, max_iter, monitoring, missing, delimiter, resolution);
        if let Some(v) = self.genotype_as_random {
            c.genotype_as_random = v;
        }
        let s = &mut c.spatial;
        s.nseg_row = self.nseg_row.or(s.nseg_row);
        s.nseg_col = self.nseg_col.or(s.nseg_col);
        s.degree = self.degree.unwrap_or(s.degree);
        s.nest_div_row = self.nest_div_row.or(self.nest_div).or(s.nest_div_row);
        s.nest_div_col = self.nest_div_col.or(self.nest_div).or(s.nest_div_col);
        if self.no_spatial {
            s.enabled = false;
        }
        if self.svg {
            c.emit.svg = true;
        }
        Ok(c)
    }
}

fn output_dir(configured: Option<&Path>) -> PathBuf {
    configured
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(OUTPUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT))
}

struct Loaded {
    config: RunConfig,
    data: TrialData,
    fit: TrialFitF64,
}

fn load_and_fit(args: &ModelArgs) -> Result<Loaded> {
    let config = args.run_config()?;
    let input = config
        .input
        .clone()
        .ok_or_else(|| Error::Config("no input file given".into()))?;
    let data = read_trial(&input, &config.table_spec()?)?;
    config.validate_against(&data)?;
    let fit = fit_trial(&data, &config.model_spec(), config.fit_options())?;
    Ok(Loaded { config, data, fit })
}

fn report_written(paths: &[PathBuf], dir: &Path, verbose: u8) {
    if verbose > 0 {
        eprintln!("wrote {} files to {}", paths.len(), dir.display());
    }
}

fn fit_status(l: &Loaded) -> ExitCode {
    if l.fit.fit.converged {
        ExitCode::SUCCESS
    } else {
        eprintln!("warning: not converged after {} iterations", l.fit.fit.iterations);
        ExitCode::from(2)
    }
}

fn cmd_fit(args: &ModelArgs, verbose: u8) -> Result<ExitCode> {
    let l = load_and_fit(args)?;
    let files = render_outputs(&l.fit, &l.data, &l.config)?;
    let dir = output_dir(l.config.output.as_deref());
    let written = write_files(&dir, &files)?;
    report_written(&written, &dir, verbose);
    print!("{}", format_summary(&summary(&l.fit, &l.data)));
    Ok(fit_status(&l))
}

fn cmd_predict(args: &PredictArgs, verbose: u8) -> Result<ExitCode> {
    let l = load_and_fit(&args.model)?;
    let grid = match (args.rows, args.cols) {
        (None, None) => trend_grid(&l.fit, &l.data, l.config.resolution)?,
        (rows, cols) => {
            let lay = l.data.layout();
            let rows = rows.unwrap_or((lay.row_min as f64, lay.row_max as f64));
            let cols = cols.unwrap_or((lay.col_min as f64, lay.col_max as f64));
            let [nr, nc] = l.config.resolution.unwrap_or([lay.n_rows(), lay.n_cols()]);
            trend_on(&l.fit, grid_over(&l.data, rows, cols, (nr, nc))?)?
        }
    };
    let mut files = std::collections::BTreeMap::new();
    files.insert("trend_grid.csv".to_string(), trend_grid_csv(&grid)?);
    if l.config.emit.svg {
        let vals: Vec<Option<f64>> = grid.trend.iter().map(|&v| Some(v)).collect();
        files.insert(
            "trend.svg".to_string(),
            heatmap_svg("Spatial trend", grid.grid.rows.len(), grid.grid.cols.len(), &vals)?,
        );
    }
    let dir = output_dir(l.config.output.as_deref());
    let written = write_files(&dir, &files)?;
    report_written(&written, &dir, verbose);
    let (lo, hi) = grid
        .trend
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    println!(
        "grid {} x {} ({} points), trend range [{lo:.6}, {hi:.6}]",
        grid.grid.rows.len(),
        grid.grid.cols.len(),
        grid.grid.len()
    );
    Ok(fit_status(&l))
}

fn cmd_variogram(args: &ModelArgs, verbose: u8) -> Result<ExitCode> {
    let l = load_and_fit(args)?;
    let v = residual_variogram(&l.fit, &l.data)?;
    let mut files = std::collections::BTreeMap::new();
    files.insert("variogram.csv".to_string(), variogram_csv(&v)?);
    if l.config.emit.svg {
        let nr = v.rows.iter().map(|r| r.row_displacement).max().unwrap_or(0) as usize + 1;
        let nc = v.rows.iter().map(|r| r.col_displacement).max().unwrap_or(0) as usize + 1;
        let mut cells = vec![None; nr * nc];
        for r in &v.rows {
            cells[r.row_displacement as usize * nc + r.col_displacement as usize] = Some(r.value);
        }
        files.insert(
            "variogram.svg".to_string(),
            heatmap_svg("Sample variogram", nr, nc, &cells)?,
        );
    }
    let dir = output_dir(l.config.output.as_deref());
    let written = write_files(&dir, &files)?;
    report_written(&written, &dir, verbose);
    println!("{:>8}{:>8}{:>14}{:>8}", "d_row", "d_col", "value", "pairs");
    for r in &v.rows {
        println!(
            "{:>8}{:>8}{:>14.6}{:>8}",
            r.row_displacement, r.col_displacement, r.value, r.pairs
        );
    }
    Ok(fit_status(&l))
}

fn cmd_simulate(args: &SimulateArgs, threads: Option<usize>, verbose: u8) -> Result<ExitCode> {
    let mut c = match &args.config {
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            toml::from_str::<SimulationConfig>(&text).map_err(|e| Error::Config(e.to_string()))?
        }
        None => SimulationConfig::default(),
    };
    macro_rules! set {
        ($($flag:ident => $field:ident),*) => { $( if let Some(v) = args.$flag { c.$field = v; } )* };
    }
    set!(runs => n_runs, seed => seed, n_rows => n_rows, n_cols => n_cols, genotypes => n_genotypes,
         replicates => replicates, block_size => block_size, sigma2_genetic => sigma2_genetic,
         sigma2_spatial => sigma2_spatial, sigma2 => sigma2, rho => rho_row, rho => rho_col,
         rho_row => rho_row, rho_col => rho_col);
    if let Some(v) = &args.variants {
        c.variants = v.iter().map(|s| s.parse::<ModelVariant>()).collect::<Result<_>>()?;
    }
    c.validate()?;
    let report = run_study_with_threads(&c, threads, verbose > 0)?;
    let files = render_simulation(&report)?;
    let dir = output_dir(args.output.as_deref());
    let written = write_files(&dir, &files)?;
    report_written(&written, &dir, verbose);
    println!(
        "runs used {} of {} (failures {}), oracle log10 RMSE {:.4}",
        report.runs_used, c.n_runs, report.failures, report.oracle_log10_rmse.mean
    );
    println!(
        "{:<10}{:>8}{:>22}{:>22}{:>22}{:>16}",
        "variant", "conv%", "log10 RMSE", "bias sigma2_g", "bias sigma2", "ED_s"
    );
    for v in &report.variants {
        let pair = |s: spatrial::simulation::Stat| format!("{:.3} ({:.3})", s.mean, s.sd);
        println!(
            "{:<10}{:>8.1}{:>22}{:>22}{:>22}{:>16}",
            serde_json::to_value(v.variant)
                .ok()
                .and_then(|x| x.as_str().map(str::to_string))
                .unwrap_or_default(),
            v.convergence_pct,
            pair(v.log10_rmse),
            pair(v.bias_genetic),
            pair(v.bias_residual),
            v.ed_spatial.map(pair).unwrap_or_else(|| "-".into())
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error: usage: {first}");
            return ExitCode::from(1);
        }
    };
    let result = match &cli.command {
        Command::Fit(a) => cmd_fit(a, cli.verbose),
        Command::Predict(a) => cmd_predict(a, cli.verbose),
        Command::Simulate(a) => cmd_simulate(a, cli.threads, cli.verbose),
        Command::Variogram(a) => cmd_variogram(a, cli.verbose),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: {}: {msg}", e.kind());
            ExitCode::from(1)
        }
    }
}
