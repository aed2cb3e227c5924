//! Tensor-product P-spline surface in mixed-model (PS-ANOVA) form.
//!
//! The surface over row coordinate `u` and column coordinate `v` is split
//! into an unpenalized bilinear polynomial `[1, u, v, u·v]` and five smooth
//! random blocks, in this order:
//!
//! | block | term          | columns                 | precision `Λ⁻¹`          |
//! |-------|---------------|-------------------------|--------------------------|
//! | 1     | `f(col)`      | `P − 2`                 | `Ẽ_col`                  |
//! | 2     | `f(row)`      | `L − 2`                 | `Ẽ_row`                  |
//! | 3     | `f(col):row`  | `P − 2`                 | `Ẽ_col`                  |
//! | 4     | `col:f(row)`  | `L − 2`                 | `Ẽ_row`                  |
//! | 5     | `f(col):f(row)` | `(P_N − 2)(L_N − 2)`  | `Ẽ_col ⊗ I + I ⊗ Ẽ_row`  |
//!
//! where `L`/`P` are the row/column basis dimensions and the `_N` variants
//! are the nested (coarser) bases, used only by the interaction block.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{invalid, Error, Result};
use crate::scalar::Real;
use crate::splines::{difference_matrix, eval_basis, DifferenceOperator, KnotVector};

/// Order of the difference penalty on both margins.
pub const PENALTY_ORDER: usize = 2;

pub const FIXED_NAMES: [&str; 4] = ["Intercept", "row", "col", "row:col"];
pub const SMOOTH_NAMES: [&str; 5] = ["f(col)", "f(row)", "f(col):row", "col:f(row)", "f(col):f(row)"];

/// Row-wise Kronecker product: row `i` of the result is `a_i ⊗ b_i`.
pub fn row_kron<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>) -> Result<DMatrix<T>> {
    if a.nrows() != b.nrows() {
        return Err(invalid(format!(
            "row-wise Kronecker needs equal row counts, got {} and {}",
            a.nrows(),
            b.nrows()
        )));
    }
    let (p, q) = (a.ncols(), b.ncols());
    let mut out = DMatrix::zeros(a.nrows(), p * q);
    for i in 0..a.nrows() {
        for j in 0..p {
            let aij = a[(i, j)];
            if aij == T::zero() {
                continue;
            }
            for k in 0..q {
                out[(i, j * q + k)] = aij * b[(i, k)];
            }
        }
    }
    Ok(out)
}

/// Eigen-decomposition of a difference penalty restricted to its positive
/// eigenvalues.
#[derive(Debug, Clone)]
pub struct EvdPenalty<T: Real> {
    /// `m × (m − d)`, one eigenvector per retained eigenvalue.
    pub vectors: DMatrix<T>,
    /// Ascending, strictly positive.
    pub eigenvalues: DVector<T>,
    pub nullity: usize,
}

pub fn evd_penalty<T: Real>(d: &DifferenceOperator) -> Result<EvdPenalty<T>> {
    let m = d.dim();
    let gram = d.gram::<T>();
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[a]
            .partial_cmp(&eig.eigenvalues[b])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let largest = eig.eigenvalues.iter().fold(T::zero(), |acc, &v| acc.max(v.abs()));
    let tol = largest * T::lit(1e3) * T::default_epsilon();
    let nullity = d.order;
    for &i in &order[..nullity] {
        if eig.eigenvalues[i].abs() > tol {
            return Err(Error::Numerical(format!(
                "penalty null space smaller than difference order {nullity}"
            )));
        }
    }
    let kept = &order[nullity..];
    let mut vectors = DMatrix::zeros(m, kept.len());
    let mut eigenvalues = DVector::zeros(kept.len());
    for (c, &i) in kept.iter().enumerate() {
        let value = eig.eigenvalues[i];
        if value <= tol {
            return Err(Error::Numerical("difference penalty is numerically indefinite".into()));
        }
        eigenvalues[c] = value;
        let mut col = eig.eigenvectors.column(i).clone_owned();
        // Sign convention: largest-magnitude entry positive (first one on ties).
        let mut pivot = 0;
        for r in 1..m {
            if col[r].abs() > col[pivot].abs() * (T::one() + T::lit(1e-9)) {
                pivot = r;
            }
        }
        if col[pivot] < T::zero() {
            col.neg_mut();
        }
        vectors.set_column(c, &col);
    }
    Ok(EvdPenalty {
        vectors,
        eigenvalues,
        nullity,
    })
}

/// Maps raw coordinates onto `[-1, 1]` via the mid-range and half-range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoordinateScaling<T> {
    pub center: T,
    pub half_range: T,
}

impl<T: Real> CoordinateScaling<T> {
    pub fn from_range(lower: T, upper: T) -> Self {
        Self {
            center: (lower + upper) * T::lit(0.5),
            half_range: (upper - lower) * T::lit(0.5),
        }
    }

    pub fn apply(&self, x: T) -> T {
        (x - self.center) / self.half_range
    }

    pub fn invert(&self, s: T) -> T {
        self.center + s * self.half_range
    }
}

/// Segment counts, degree and nesting divisors of the two margins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct SpatialConfig {
    pub nseg_row: usize,
    pub nseg_col: usize,
    pub degree: usize,
    pub nest_div_row: usize,
    pub nest_div_col: usize,
}

impl SpatialConfig {
    /// One segment per distinct row/column and halved nested bases; a
    /// divisor falls back to 1 when it does not divide the segment count.
    pub fn for_layout(n_rows: usize, n_cols: usize) -> Self {
        let halve = |n: usize| if n.is_multiple_of(2) { 2 } else { 1 };
        Self {
            nseg_row: n_rows.max(1),
            nseg_col: n_cols.max(1),
            degree: 3,
            nest_div_row: halve(n_rows),
            nest_div_col: halve(n_cols),
        }
    }
}

/// Basis dimensions of the two margins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct MarginDims {
    /// Row basis dimension `L`.
    pub row: usize,
    /// Column basis dimension `P`.
    pub col: usize,
    pub row_nested: usize,
    pub col_nested: usize,
}

impl MarginDims {
    /// Coefficients per smooth block, in block order.
    pub fn block_dims(&self) -> [usize; 5] {
        let d = PENALTY_ORDER;
        [
            self.col - d,
            self.row - d,
            self.col - d,
            self.row - d,
            (self.col_nested - d) * (self.row_nested - d),
        ]
    }
}

/// Diagonal of a smooth block's precision `Λ⁻¹`, stored without expanding
/// Kronecker sums.
#[derive(Debug, Clone, PartialEq)]
pub enum PrecisionBlock<T: Real> {
    Diagonal(DVector<T>),
    /// Entry `(p, l)` at index `p · inner.len() + l` is `outer[p] + inner[l]`.
    KroneckerSum {
        outer: DVector<T>,
        inner: DVector<T>,
    },
}

impl<T: Real> PrecisionBlock<T> {
    pub fn identity(m: usize) -> Self {
        PrecisionBlock::Diagonal(DVector::from_element(m, T::one()))
    }

    pub fn len(&self) -> usize {
        match self {
            PrecisionBlock::Diagonal(d) => d.len(),
            PrecisionBlock::KroneckerSum { outer, inner } => outer.len() * inner.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, i: usize) -> T {
        match self {
            PrecisionBlock::Diagonal(d) => d[i],
            PrecisionBlock::KroneckerSum { outer, inner } => outer[i / inner.len()] + inner[i % inner.len()],
        }
    }

    pub fn diagonal(&self) -> DVector<T> {
        DVector::from_fn(self.len(), |i, _| self.get(i))
    }
}

/// Everything needed to evaluate the spatial design at arbitrary points.
#[derive(Debug, Clone)]
pub struct SpatialBasis<T: Real> {
    pub config: SpatialConfig,
    pub row_knots: KnotVector<T>,
    pub col_knots: KnotVector<T>,
    pub row_knots_nested: KnotVector<T>,
    pub col_knots_nested: KnotVector<T>,
    pub row_evd: EvdPenalty<T>,
    pub col_evd: EvdPenalty<T>,
    pub row_evd_nested: EvdPenalty<T>,
    pub col_evd_nested: EvdPenalty<T>,
    pub row_scaling: CoordinateScaling<T>,
    pub col_scaling: CoordinateScaling<T>,
}

impl<T: Real> SpatialBasis<T> {
    /// Builds margins spanning exactly the observed coordinate ranges.
    pub fn new(rows: &[T], cols: &[T], config: SpatialConfig) -> Result<Self> {
        let range = |xs: &[T], what: &str| -> Result<(T, T)> {
            let mut it = xs.iter().copied();
            let first = it.next().ok_or_else(|| invalid("no coordinates"))?;
            let (lo, hi) = it.fold((first, first), |(lo, hi), x| (lo.min(x), hi.max(x)));
            if !(hi > lo) {
                return Err(invalid(format!("degenerate {what} coordinates: all equal")));
            }
            Ok((lo, hi))
        };
        let (rlo, rhi) = range(rows, "row")?;
        let (clo, chi) = range(cols, "column")?;
        Self::with_bounds(rlo, rhi, clo, chi, config)
    }

    pub fn with_bounds(rlo: T, rhi: T, clo: T, chi: T, config: SpatialConfig) -> Result<Self> {
        let row_knots = KnotVector::new(rlo, rhi, config.nseg_row, config.degree)?;
        let col_knots = KnotVector::new(clo, chi, config.nseg_col, config.degree)?;
        let row_knots_nested = row_knots.nested(config.nest_div_row)?;
        let col_knots_nested = col_knots.nested(config.nest_div_col)?;
        if config.degree == 0 {
            return Err(invalid("spatial bases need degree >= 1"));
        }
        for (kv, what) in [(&row_knots, "row"), (&col_knots, "column")] {
            if kv.dim() < 4 {
                return Err(invalid(format!(
                    "{what} basis dimension {} is below the minimum of 4",
                    kv.dim()
                )));
            }
        }
        for (kv, what) in [(&row_knots_nested, "row"), (&col_knots_nested, "column")] {
            if kv.dim() <= PENALTY_ORDER {
                return Err(invalid(format!(
                    "nested {what} basis dimension {} leaves no penalized coefficients",
                    kv.dim()
                )));
            }
        }
        let evd =
            |kv: &KnotVector<T>| -> Result<EvdPenalty<T>> { evd_penalty(&difference_matrix(kv.dim(), PENALTY_ORDER)?) };
        Ok(Self {
            config,
            row_evd: evd(&row_knots)?,
            col_evd: evd(&col_knots)?,
            row_evd_nested: evd(&row_knots_nested)?,
            col_evd_nested: evd(&col_knots_nested)?,
            row_scaling: CoordinateScaling::from_range(rlo, rhi),
            col_scaling: CoordinateScaling::from_range(clo, chi),
            row_knots,
            col_knots,
            row_knots_nested,
            col_knots_nested,
        })
    }

    pub fn dims(&self) -> MarginDims {
        MarginDims {
            row: self.row_knots.dim(),
            col: self.col_knots.dim(),
            row_nested: self.row_knots_nested.dim(),
            col_nested: self.col_knots_nested.dim(),
        }
    }

    pub fn contains(&self, row: T, col: T) -> bool {
        self.row_knots.contains(row) && self.col_knots.contains(col)
    }

    /// Fixed columns and the five smooth blocks evaluated at `(rows[i], cols[i])`.
    pub fn design(&self, rows: &[T], cols: &[T]) -> Result<(DMatrix<T>, Vec<DMatrix<T>>)> {
        if rows.len() != cols.len() {
            return Err(invalid("row and column coordinate vectors differ in length"));
        }
        let n = rows.len();
        let u = DMatrix::from_fn(n, 1, |i, _| self.row_scaling.apply(rows[i]));
        let v = DMatrix::from_fn(n, 1, |i, _| self.col_scaling.apply(cols[i]));

        let mut x = DMatrix::zeros(n, 4);
        for i in 0..n {
            x[(i, 0)] = T::one();
            x[(i, 1)] = u[(i, 0)];
            x[(i, 2)] = v[(i, 0)];
            x[(i, 3)] = u[(i, 0)] * v[(i, 0)];
        }

        let z_row = eval_basis(&self.row_knots, rows)?.values * &self.row_evd.vectors;
        let z_col = eval_basis(&self.col_knots, cols)?.values * &self.col_evd.vectors;
        let z_row_n = eval_basis(&self.row_knots_nested, rows)?.values * &self.row_evd_nested.vectors;
        let z_col_n = eval_basis(&self.col_knots_nested, cols)?.values * &self.col_evd_nested.vectors;

        let blocks = vec![
            z_col.clone(),
            z_row.clone(),
            row_kron(&z_col, &u)?,
            row_kron(&v, &z_row)?,
            row_kron(&z_col_n, &z_row_n)?,
        ];
        Ok((x, blocks))
    }

    /// `Λ⁻¹` of each smooth block.
    pub fn precisions(&self) -> Vec<PrecisionBlock<T>> {
        vec![
            PrecisionBlock::Diagonal(self.col_evd.eigenvalues.clone()),
            PrecisionBlock::Diagonal(self.row_evd.eigenvalues.clone()),
            PrecisionBlock::Diagonal(self.col_evd.eigenvalues.clone()),
            PrecisionBlock::Diagonal(self.row_evd.eigenvalues.clone()),
            PrecisionBlock::KroneckerSum {
                outer: self.col_evd_nested.eigenvalues.clone(),
                inner: self.row_evd_nested.eigenvalues.clone(),
            },
        ]
    }
}

/// PS-ANOVA design at the observed plots.
#[derive(Debug, Clone)]
pub struct PsAnovaDesign<T: Real> {
    /// `n × 4`: `[1, u, v, u·v]` on scaled coordinates.
    pub x_fixed: DMatrix<T>,
    pub z_blocks: Vec<DMatrix<T>>,
    pub precision_blocks: Vec<PrecisionBlock<T>>,
    pub dims: MarginDims,
    pub basis: SpatialBasis<T>,
}

impl<T: Real> PsAnovaDesign<T> {
    /// Number of smooth coefficients.
    pub fn smooth_dim(&self) -> usize {
        self.z_blocks.iter().map(|z| z.ncols()).sum()
    }
}

/// Builds the PS-ANOVA design for plots at row coordinates `rows` and column
/// coordinates `cols` (raw units; scaling is applied internally).
pub fn build_psanova<T: Real>(rows: &[T], cols: &[T], config: SpatialConfig) -> Result<PsAnovaDesign<T>> {
    let basis = SpatialBasis::new(rows, cols, config)?;
    let (x_fixed, z_blocks) = basis.design(rows, cols)?;
    Ok(PsAnovaDesign {
        x_fixed,
        z_blocks,
        precision_blocks: basis.precisions(),
        dims: basis.dims(),
        basis,
    })
}

/// Raw tensor-product basis `B_col □ B_row` (row index varies fastest).
pub fn tensor_basis<T: Real>(row_basis: &DMatrix<T>, col_basis: &DMatrix<T>) -> Result<DMatrix<T>> {
    row_kron(col_basis, row_basis)
}

/// Minimizer of `‖y − Bα‖² + αᵀPα` with the anisotropic difference penalty
/// `P = λ_row (I ⊗ DᵀD_row) + λ_col (DᵀD_col ⊗ I)`, for `B` laid out as in
/// [`tensor_basis`].
pub fn penalized_ls_fit<T: Real>(
    b: &DMatrix<T>,
    y: &DVector<T>,
    row_dim: usize,
    col_dim: usize,
    lambda_row: T,
    lambda_col: T,
) -> Result<DVector<T>> {
    if !(lambda_row > T::zero() && lambda_col > T::zero()) {
        return Err(invalid("smoothing parameters must be strictly positive"));
    }
    if b.ncols() != row_dim * col_dim || b.nrows() != y.len() {
        return Err(invalid("tensor basis shape does not match margins/response"));
    }
    let pr = difference_matrix(row_dim, PENALTY_ORDER)?.gram::<T>();
    let pc = difference_matrix(col_dim, PENALTY_ORDER)?.gram::<T>();
    let penalty = DMatrix::<T>::identity(col_dim, col_dim).kronecker(&pr) * lambda_row
        + pc.kronecker(&DMatrix::<T>::identity(row_dim, row_dim)) * lambda_col;
    let normal = b.transpose() * b + penalty;
    let rhs = b.transpose() * y;
    let chol = normal
        .cholesky()
        .ok_or_else(|| Error::Numerical("penalized normal matrix is singular".into()))?;
    Ok(chol.solve(&rhs))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(nr: usize, nc: usize) -> (Vec<f64>, Vec<f64>) {
        let mut rows = Vec::new();
        let mut cols = Vec::new();
        for r in 1..=nr {
            for c in 1..=nc {
                rows.push(r as f64);
                cols.push(c as f64);
            }
        }
        (rows, cols)
    }

    #[test]
    fn row_kron_small_cases() {
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        let b = DMatrix::from_row_slice(1, 2, &[3.0, 4.0]);
        assert_eq!(
            row_kron(&a, &b).unwrap(),
            DMatrix::from_row_slice(1, 4, &[3.0, 4.0, 6.0, 8.0])
        );

        let x = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]);
        let y = DMatrix::from_column_slice(3, 1, &[4.0, 5.0, 6.0]);
        assert_eq!(row_kron(&x, &y).unwrap(), x.component_mul(&y));

        let m = DMatrix::from_fn(4, 3, |i, j| (i * 3 + j) as f64);
        assert_eq!(row_kron(&m, &DMatrix::from_element(4, 1, 1.0)).unwrap(), m);
        assert!(row_kron(&m, &x).is_err());
    }

    #[test]
    fn evd_of_second_differences() {
        let d = difference_matrix(18, 2).unwrap();
        let e = evd_penalty::<f64>(&d).unwrap();
        assert_eq!(e.eigenvalues.len(), 16);
        assert_eq!(e.nullity, 2);
        assert!(e.eigenvalues.iter().all(|&v| v > 0.0));
        assert!(e.eigenvalues.as_slice().windows(2).all(|w| w[0] <= w[1]));

        // Eigenvectors of the positive eigenvalues are orthogonal to the null space.
        let ones = DVector::from_element(18, 1.0);
        let lin = DVector::from_fn(18, |i, _| i as f64);
        assert!((e.vectors.transpose() * ones).amax() < 1e-10);
        assert!((e.vectors.transpose() * lin).amax() < 1e-10);

        // U E Uᵀ reproduces DᵀD.
        let recon = &e.vectors * DMatrix::from_diagonal(&e.eigenvalues) * e.vectors.transpose();
        assert!((recon - d.gram::<f64>()).norm() < 1e-10);
    }

    #[test]
    fn evd_sign_convention() {
        let e = evd_penalty::<f64>(&difference_matrix(9, 2).unwrap()).unwrap();
        for c in 0..e.vectors.ncols() {
            let col = e.vectors.column(c);
            let big = col.amax();
            let first = col.iter().position(|v| v.abs() >= big * (1.0 - 1e-9)).unwrap();
            assert!(col[first] > 0.0);
        }
    }

    #[test]
    fn barley_dimensions() {
        let (rows, cols) = grid(15, 48);
        let cfg = SpatialConfig {
            nseg_row: 15,
            nseg_col: 48,
            degree: 3,
            nest_div_row: 1,
            nest_div_col: 2,
        };
        let d = build_psanova(&rows, &cols, cfg).unwrap();
        assert_eq!((d.dims.row, d.dims.col, d.dims.col_nested), (18, 51, 27));
        assert_eq!(d.dims.block_dims(), [49, 16, 49, 16, 400]);
        let widths: Vec<usize> = d.z_blocks.iter().map(|z| z.ncols()).collect();
        assert_eq!(widths, vec![49, 16, 49, 16, 400]);
        assert_eq!(d.smooth_dim(), 530);
        assert_eq!(d.smooth_dim() + d.x_fixed.ncols() - 1, 533);
        assert_eq!(d.x_fixed.ncols(), 4);
        for (z, p) in d.z_blocks.iter().zip(&d.precision_blocks) {
            assert_eq!(z.ncols(), p.len());
            assert!(p.diagonal().iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn interaction_precision_is_kronecker_sum() {
        let (rows, cols) = grid(6, 8);
        let cfg = SpatialConfig {
            nseg_row: 6,
            nseg_col: 8,
            degree: 3,
            nest_div_row: 2,
            nest_div_col: 2,
        };
        let d = build_psanova(&rows, &cols, cfg).unwrap();
        let ec = &d.basis.col_evd_nested.eigenvalues;
        let er = &d.basis.row_evd_nested.eigenvalues;
        let dense = DMatrix::from_diagonal(ec).kronecker(&DMatrix::<f64>::identity(er.len(), er.len()))
            + DMatrix::<f64>::identity(ec.len(), ec.len()).kronecker(&DMatrix::from_diagonal(er));
        let diag = d.precision_blocks[4].diagonal();
        for i in 0..diag.len() {
            assert!((diag[i] - dense[(i, i)]).abs() < 1e-14);
        }
    }

    #[test]
    fn fixed_part_scaled_to_unit_interval() {
        let (rows, cols) = grid(5, 7);
        let cfg = SpatialConfig {
            nseg_row: 5,
            nseg_col: 7,
            degree: 3,
            nest_div_row: 1,
            nest_div_col: 1,
        };
        let d = build_psanova(&rows, &cols, cfg).unwrap();
        let u = d.x_fixed.column(1);
        assert!((u.max() - 1.0).abs() < 1e-15 && (u.min() + 1.0).abs() < 1e-15);
        assert!(u.sum().abs() < 1e-12);
    }

    #[test]
    fn rejects_degenerate_and_tiny_layouts() {
        let cfg = SpatialConfig {
            nseg_row: 4,
            nseg_col: 4,
            degree: 3,
            nest_div_row: 1,
            nest_div_col: 1,
        };
        assert!(build_psanova(&[1.0, 1.0], &[1.0, 2.0], cfg).is_err());
        let small = SpatialConfig {
            nseg_row: 1,
            nseg_col: 4,
            degree: 2,
            nest_div_row: 1,
            nest_div_col: 1,
        };
        assert!(build_psanova(&[1.0, 2.0], &[1.0, 2.0], small).is_err());
    }

    #[test]
    fn huge_penalty_gives_bilinear_fit() {
        let (rows, cols) = grid(6, 7);
        let n = rows.len();
        let bu = eval_basis(&KnotVector::new(1.0, 6.0, 4, 3).unwrap(), &rows)
            .unwrap()
            .values;
        let bv = eval_basis(&KnotVector::new(1.0, 7.0, 5, 3).unwrap(), &cols)
            .unwrap()
            .values;
        let b = tensor_basis(&bu, &bv).unwrap();
        let y = DVector::from_fn(n, |i, _| ((i * 7919) % 13) as f64 * 0.3 + rows[i] * 0.5);
        let alpha = penalized_ls_fit(&b, &y, 7, 8, 1e9, 1e9).unwrap();
        let fit = &b * alpha;

        let x = DMatrix::from_fn(n, 4, |i, j| match j {
            0 => 1.0,
            1 => rows[i],
            2 => cols[i],
            _ => rows[i] * cols[i],
        });
        let beta = (x.transpose() * &x).cholesky().unwrap().solve(&(x.transpose() * &y));
        let ols = &x * beta;
        assert!((fit - ols).amax() < 1e-4);
    }

    #[test]
    fn vanishing_penalty_interpolates_saturated_design() {
        // 4x4 grid with L = P = 4 gives a square, invertible tensor basis.
        let (rows, cols) = grid(4, 4);
        let bu = eval_basis(&KnotVector::new(1.0, 4.0, 1, 3).unwrap(), &rows)
            .unwrap()
            .values;
        let bv = eval_basis(&KnotVector::new(1.0, 4.0, 1, 3).unwrap(), &cols)
            .unwrap()
            .values;
        let b = tensor_basis(&bu, &bv).unwrap();
        let y = DVector::from_fn(16, |i, _| (i as f64).sin());
        let alpha = penalized_ls_fit(&b, &y, 4, 4, 1e-16, 1e-16).unwrap();
        assert!((&b * alpha - &y).amax() < 1e-6);
        assert!(penalized_ls_fit(&b, &y, 4, 4, 0.0, 1.0).is_err());
    }
}
