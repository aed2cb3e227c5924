//! Henderson mixed-model equations for one fixed block and any number of
//! random blocks with diagonal precision.
//!
//! For variances `σ²` (residual) and `σ_k²` (block `k`, covariance
//! `σ_k² Λ_k`), the coefficient matrix is
//!
//! ```text
//! C = [X Z]ᵀ[X Z] / σ² + blockdiag(0, Λ_1⁻¹/σ_1², …, Λ_q⁻¹/σ_q²)
//! ```
//!
//! The crossproducts are formed once. If an indicator block is present (a
//! factor with one level per observation, typically genotype) its part of
//! `C` is diagonal, so the largest such block is eliminated and only the
//! Schur complement of the remaining unknowns is factorized.

use std::ops::Range;

use nalgebra::{DMatrix, DMatrixView, DVector};

use crate::error::{invalid, Error, Result};
use crate::linalg::{cholesky_lower, first_dependent_column, lower_inverse};
use crate::psanova::PrecisionBlock;
use crate::scalar::Real;

/// Incidence of a random block.
#[derive(Debug, Clone, PartialEq)]
pub enum RandomDesign<T: Real> {
    Dense(DMatrix<T>),
    /// Level of each observation, `None` where the block does not apply.
    Indicator {
        levels: Vec<Option<usize>>,
        n_levels: usize,
    },
}

impl<T: Real> RandomDesign<T> {
    pub fn nrows(&self) -> usize {
        match self {
            RandomDesign::Dense(m) => m.nrows(),
            RandomDesign::Indicator { levels, .. } => levels.len(),
        }
    }

    pub fn ncols(&self) -> usize {
        match self {
            RandomDesign::Dense(m) => m.ncols(),
            RandomDesign::Indicator { n_levels, .. } => *n_levels,
        }
    }

    pub fn to_dense(&self) -> DMatrix<T> {
        match self {
            RandomDesign::Dense(m) => m.clone(),
            RandomDesign::Indicator { levels, n_levels } => {
                let mut z = DMatrix::zeros(levels.len(), *n_levels);
                for (i, l) in levels.iter().enumerate() {
                    if let Some(l) = l {
                        z[(i, *l)] = T::one();
                    }
                }
                z
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    Spatial,
    Genotype,
    Factor,
}

#[derive(Debug, Clone)]
pub struct RandomBlock<T: Real> {
    pub name: String,
    pub kind: BlockKind,
    pub design: RandomDesign<T>,
    pub precision: PrecisionBlock<T>,
    /// Level labels for factor blocks; empty for spatial blocks.
    pub labels: Vec<String>,
}

impl<T: Real> RandomBlock<T> {
    /// An i.i.d. factor block (`Λ = I`).
    pub fn factor(name: impl Into<String>, kind: BlockKind, levels: Vec<Option<usize>>, labels: Vec<String>) -> Self {
        let n_levels = labels.len();
        Self {
            name: name.into(),
            kind,
            design: RandomDesign::Indicator { levels, n_levels },
            precision: PrecisionBlock::identity(n_levels),
            labels,
        }
    }
}

/// Metadata kept per random block once the system is assembled.
#[derive(Debug, Clone)]
pub struct BlockInfo<T: Real> {
    pub name: String,
    pub kind: BlockKind,
    pub labels: Vec<String>,
    pub precision: PrecisionBlock<T>,
    /// Column range inside the stacked coefficient vector `[β, c_1, …, c_q]`.
    pub range: Range<usize>,
    /// Per-observation level for indicator blocks.
    pub levels: Option<Vec<Option<usize>>>,
}

impl<T: Real> BlockInfo<T> {
    pub fn dim(&self) -> usize {
        self.range.len()
    }
}

/// `σ²` and one `σ_k²` per random block.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct Variances<T> {
    pub residual: T,
    pub components: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct SolveResult<T: Real> {
    pub beta: DVector<T>,
    /// `ĉ_k` per random block.
    pub coefficients: Vec<DVector<T>>,
    /// Diagonal of `C⁻¹` restricted to each random block.
    pub cinv_diag: Vec<DVector<T>>,
    pub log_det_c: T,
    pub fitted: DVector<T>,
    pub residuals: DVector<T>,
}

impl<T: Real> SolveResult<T> {
    /// `ĉ_kᵀ Λ_k⁻¹ ĉ_k`.
    pub fn weighted_square(&self, k: usize, precision: &PrecisionBlock<T>) -> T {
        self.coefficients[k]
            .iter()
            .enumerate()
            .fold(T::zero(), |acc, (i, &c)| acc + precision.get(i) * c * c)
    }
}

/// Eliminated indicator block and the crossproducts around it.
#[derive(Debug, Clone)]
struct Elimination<T: Real> {
    block: usize,
    /// Observation count per level.
    counts: DVector<T>,
    /// Crossproduct of the kept columns with the indicator columns.
    m_wg: DMatrix<T>,
}

#[derive(Debug, Clone)]
pub struct MixedModelSystem<T: Real> {
    /// `[X | Z_1 | … | Z_q]`, `n × (p + Σ m_k)`.
    w: DMatrix<T>,
    y: DVector<T>,
    p: usize,
    x_names: Vec<String>,
    blocks: Vec<BlockInfo<T>>,
    wty: DVector<T>,
    /// Stacked indices of the unknowns factorized densely.
    keep: Vec<usize>,
    m_ww: DMatrix<T>,
    elim: Option<Elimination<T>>,
    sum_log_precision: T,
}

fn collinearity_tolerance<T: Real>() -> T {
    T::default_epsilon().powf(T::lit(2.0 / 3.0))
}

/// Slack allowed below zero for effective dimensions.
pub fn trace_tolerance<T: Real>() -> T {
    T::lit(1e-8).max(T::default_epsilon() * T::lit(1e3))
}

impl<T: Real> MixedModelSystem<T> {
    pub fn new(x: DMatrix<T>, x_names: Vec<String>, blocks: Vec<RandomBlock<T>>, y: DVector<T>) -> Result<Self> {
        let n = y.len();
        let p = x.ncols();
        if x.nrows() != n {
            return Err(invalid(format!(
                "fixed design has {} rows for {n} observations",
                x.nrows()
            )));
        }
        if x_names.len() != p {
            return Err(invalid("fixed column names do not match the fixed design"));
        }
        if y.iter().any(|v| !v.finite()) {
            return Err(invalid("response contains non-finite values"));
        }
        if p == 0 {
            return Err(invalid("the fixed design needs at least one column"));
        }
        if n <= p {
            return Err(invalid(format!("{n} observations cannot support {p} fixed columns")));
        }
        let gram = x.transpose() * &x;
        if let Some(j) = first_dependent_column(&gram, collinearity_tolerance()) {
            return Err(Error::Collinear {
                column: x_names[j].clone(),
            });
        }

        let total = p + blocks.iter().map(|b| b.design.ncols()).sum::<usize>();
        let mut w = DMatrix::zeros(n, total);
        w.columns_mut(0, p).copy_from(&x);
        let mut infos = Vec::with_capacity(blocks.len());
        let mut offset = p;
        let mut sum_log_precision = T::zero();
        for b in blocks {
            let m = b.design.ncols();
            if b.design.nrows() != n {
                return Err(invalid(format!(
                    "random block `{}` has {} rows for {n} observations",
                    b.name,
                    b.design.nrows()
                )));
            }
            if b.precision.len() != m {
                return Err(invalid(format!(
                    "precision of block `{}` has length {} for {m} columns",
                    b.name,
                    b.precision.len()
                )));
            }
            if m == 0 {
                return Err(invalid(format!("random block `{}` has no columns", b.name)));
            }
            for i in 0..m {
                let v = b.precision.get(i);
                if !(v > T::zero()) || !v.finite() {
                    return Err(invalid(format!("precision of block `{}` is not positive", b.name)));
                }
                sum_log_precision += v.ln();
            }
            let levels = match &b.design {
                RandomDesign::Dense(z) => {
                    w.columns_mut(offset, m).copy_from(z);
                    None
                }
                RandomDesign::Indicator { levels, n_levels } => {
                    for (i, l) in levels.iter().enumerate() {
                        if let Some(l) = *l {
                            if l >= *n_levels {
                                return Err(invalid(format!("level {l} out of range in block `{}`", b.name)));
                            }
                            w[(i, offset + l)] = T::one();
                        }
                    }
                    Some(levels.clone())
                }
            };
            infos.push(BlockInfo {
                name: b.name,
                kind: b.kind,
                labels: b.labels,
                precision: b.precision,
                range: offset..offset + m,
                levels,
            });
            offset += m;
        }

        let elim_block = infos
            .iter()
            .enumerate()
            .filter(|(_, b)| b.levels.is_some())
            .max_by_key(|(i, b)| (b.dim(), usize::MAX - i))
            .map(|(i, _)| i);
        let keep: Vec<usize> = match elim_block {
            Some(g) => (0..total).filter(|j| !infos[g].range.contains(j)).collect(),
            None => (0..total).collect(),
        };
        let w_keep = w.select_columns(keep.iter());
        let m_ww = w_keep.transpose() * &w_keep;
        let elim = elim_block.map(|g| {
            let info = &infos[g];
            let levels = info.levels.as_ref().expect("indicator block");
            let mut counts = DVector::zeros(info.dim());
            let mut m_wg = DMatrix::zeros(keep.len(), info.dim());
            for (i, l) in levels.iter().enumerate() {
                if let Some(l) = *l {
                    counts[l] += T::one();
                    let mut col = m_wg.column_mut(l);
                    col += w_keep.row(i).transpose();
                }
            }
            Elimination { block: g, counts, m_wg }
        });
        let wty = w.transpose() * &y;

        Ok(Self {
            w,
            y,
            p,
            x_names,
            blocks: infos,
            wty,
            keep,
            m_ww,
            elim,
            sum_log_precision,
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// Number of fixed columns, equal to `rank(X)` (collinear designs are rejected).
    pub fn n_fixed(&self) -> usize {
        self.p
    }

    pub fn n_coefficients(&self) -> usize {
        self.w.ncols()
    }

    pub fn x(&self) -> DMatrixView<'_, T> {
        self.w.columns(0, self.p)
    }

    pub fn x_names(&self) -> &[String] {
        &self.x_names
    }

    pub fn y(&self) -> &DVector<T> {
        &self.y
    }

    pub fn blocks(&self) -> &[BlockInfo<T>] {
        &self.blocks
    }

    pub fn block_index(&self, name: &str) -> Option<usize> {
        self.blocks.iter().position(|b| b.name == name)
    }

    /// `Z_k` as a dense view.
    pub fn z(&self, k: usize) -> DMatrixView<'_, T> {
        let r = &self.blocks[k].range;
        self.w.columns(r.start, r.len())
    }

    /// The full stacked design `[X | Z]`.
    pub fn design(&self) -> &DMatrix<T> {
        &self.w
    }

    /// Same design with a different response.
    pub fn with_response(&self, y: DVector<T>) -> Result<Self> {
        if y.len() != self.n() {
            return Err(invalid("replacement response has the wrong length"));
        }
        if y.iter().any(|v| !v.finite()) {
            return Err(invalid("response contains non-finite values"));
        }
        let mut out = self.clone();
        out.wty = self.w.transpose() * &y;
        out.y = y;
        Ok(out)
    }

    pub fn check_variances(&self, v: &Variances<T>) -> Result<()> {
        if v.components.len() != self.blocks.len() {
            return Err(invalid(format!(
                "{} variance components given for {} random blocks",
                v.components.len(),
                self.blocks.len()
            )));
        }
        let ok = |s: T| s > T::zero() && s.finite();
        if !ok(v.residual) {
            return Err(invalid("residual variance must be positive and finite"));
        }
        if let Some(k) = v.components.iter().position(|&s| !ok(s)) {
            return Err(invalid(format!(
                "variance of `{}` must be positive and finite",
                self.blocks[k].name
            )));
        }
        Ok(())
    }

    /// Penalty added to the diagonal of `C` for every stacked unknown.
    fn penalty(&self, v: &Variances<T>) -> DVector<T> {
        let mut pen = DVector::zeros(self.n_coefficients());
        for (b, &s) in self.blocks.iter().zip(&v.components) {
            for (i, j) in b.range.clone().enumerate() {
                pen[j] = b.precision.get(i) / s;
            }
        }
        pen
    }

    /// Dense coefficient matrix and right-hand side in stacked order.
    pub fn assemble(&self, v: &Variances<T>) -> Result<(DMatrix<T>, DVector<T>)> {
        self.check_variances(v)?;
        let inv = T::one() / v.residual;
        let mut c = self.w.transpose() * &self.w * inv;
        let pen = self.penalty(v);
        for j in 0..c.nrows() {
            c[(j, j)] += pen[j];
        }
        Ok((c, &self.wty * inv))
    }

    fn block_of(&self, j: usize) -> String {
        if j < self.p {
            return "fixed".into();
        }
        self.blocks
            .iter()
            .find(|b| b.range.contains(&j))
            .map(|b| b.name.clone())
            .unwrap_or_default()
    }

    pub fn solve(&self, v: &Variances<T>) -> Result<SolveResult<T>> {
        self.check_variances(v)?;
        let inv = T::one() / v.residual;
        let pen = self.penalty(v);
        let nk = self.keep.len();

        let mut s = &self.m_ww * inv;
        for (a, &j) in self.keep.iter().enumerate() {
            s[(a, a)] += pen[j];
        }
        let mut rhs_w = DVector::from_fn(nk, |a, _| self.wty[self.keep[a]] * inv);

        // Diagonal block of the eliminated indicator: d, rhs r_g, and F D^{-1/2}.
        let elim = self.elim.as_ref().map(|e| {
            let range = self.blocks[e.block].range.clone();
            let d = DVector::from_fn(range.len(), |i, _| e.counts[i] * inv + pen[range.start + i]);
            let r_g = DVector::from_fn(range.len(), |i, _| self.wty[range.start + i] * inv);
            let mut fs = &e.m_wg * inv;
            for (i, mut col) in fs.column_iter_mut().enumerate() {
                col /= d[i].sqrt();
            }
            (range, d, r_g, fs)
        });
        if let Some((_, d, r_g, fs)) = &elim {
            s.gemm(-T::one(), fs, &fs.transpose(), T::one());
            let scaled = DVector::from_fn(d.len(), |i, _| r_g[i] / d[i].sqrt());
            rhs_w.gemv(-T::one(), fs, &scaled, T::one());
        }

        let l = cholesky_lower(s).map_err(|pivot| Error::Factorization {
            block: self.block_of(self.keep[pivot]),
            pivot,
        })?;
        let l_inv = lower_inverse(&l);
        let theta_w = l_inv.tr_mul(&(&l_inv * &rhs_w));
        let diag_w: Vec<T> = l_inv.column_iter().map(|c| c.norm_squared()).collect();
        let mut log_det_c = l.diagonal().iter().fold(T::zero(), |acc, &x| acc + x.ln()) * T::lit(2.0);

        let total = self.n_coefficients();
        let mut theta = DVector::zeros(total);
        let mut cinv = DVector::zeros(total);
        for (a, &j) in self.keep.iter().enumerate() {
            theta[j] = theta_w[a];
            cinv[j] = diag_w[a];
        }
        if let Some((range, d, r_g, fs)) = &elim {
            // θ_g = D⁻¹(r_g − Fᵀθ_w), with F = fs·D^{1/2}.
            let ft_theta = fs.tr_mul(&theta_w);
            // K = L⁻¹ F D⁻¹ = L⁻¹ fs D^{-1/2}; diag C⁻¹_gg = 1/d + ‖K e_i‖².
            let k = &l_inv * fs;
            for i in 0..d.len() {
                let sd = d[i].sqrt();
                theta[range.start + i] = (r_g[i] - ft_theta[i] * sd) / d[i];
                cinv[range.start + i] = (T::one() + k.column(i).norm_squared()) / d[i];
                log_det_c += d[i].ln();
            }
        }

        let fitted = &self.w * &theta;
        let residuals = &self.y - &fitted;
        let beta = theta.rows(0, self.p).into_owned();
        let coefficients = self
            .blocks
            .iter()
            .map(|b| theta.rows(b.range.start, b.dim()).into_owned())
            .collect();
        let cinv_diag = self
            .blocks
            .iter()
            .map(|b| cinv.rows(b.range.start, b.dim()).into_owned())
            .collect();
        if !log_det_c.finite() {
            return Err(Error::Numerical(
                "log-determinant of the mixed-model matrix is not finite".into(),
            ));
        }
        Ok(SolveResult {
            beta,
            coefficients,
            cinv_diag,
            log_det_c,
            fitted,
            residuals,
        })
    }

    /// `ED_k = m_k − tr(Λ_k⁻¹ C⁻¹_kk)/σ_k²` for every random block.
    pub fn component_traces(&self, v: &Variances<T>, res: &SolveResult<T>) -> Result<Vec<T>> {
        self.blocks
            .iter()
            .enumerate()
            .map(|(k, b)| {
                let s = v.components[k];
                let shrink = res.cinv_diag[k]
                    .iter()
                    .enumerate()
                    .fold(T::zero(), |acc, (i, &c)| acc + b.precision.get(i) * c);
                let m = T::from_count(b.dim());
                let ed = m - shrink / s;
                if ed < -trace_tolerance::<T>() * m.max(T::one()) || !ed.finite() {
                    return Err(Error::Numerical(format!("effective dimension of `{}` is {ed}", b.name)));
                }
                Ok(ed)
            })
            .collect()
    }

    /// `ED_ε = n − rank(X) − Σ ED_k`.
    pub fn residual_ed(&self, eds: &[T]) -> T {
        eds.iter()
            .fold(T::from_count(self.n()) - T::from_count(self.p), |acc, &e| acc - e)
    }

    /// Minus twice the REML log-likelihood, up to an additive constant:
    /// `log|C| + log|G| + n log σ² + yᵀε̂/σ²`.
    pub fn reml_deviance(&self, v: &Variances<T>, res: &SolveResult<T>) -> Result<T> {
        let log_det_g = self
            .blocks
            .iter()
            .zip(&v.components)
            .fold(-self.sum_log_precision, |acc, (b, &s)| {
                acc + T::from_count(b.dim()) * s.ln()
            });
        let n = T::from_count(self.n());
        let dev = res.log_det_c + log_det_g + n * v.residual.ln() + self.y.dot(&res.residuals) / v.residual;
        if !dev.finite() {
            return Err(Error::Numerical("REML deviance is not finite".into()));
        }
        Ok(dev)
    }
}
