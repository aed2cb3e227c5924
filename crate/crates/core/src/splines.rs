//! Univariate B-spline bases on equally spaced knots, difference penalties
//! and nested (coarsened) bases.

use nalgebra::DMatrix;

use crate::error::{invalid, Error, Result};
use crate::scalar::Real;

/// Equally spaced knots over `[lower, upper]`, extended by `degree` knots of
/// the same spacing beyond each end.
#[derive(Debug, Clone, PartialEq)]
pub struct KnotVector<T> {
    degree: usize,
    nseg: usize,
    lower: T,
    upper: T,
    knots: Vec<T>,
}

impl<T: Real> KnotVector<T> {
    pub fn new(lower: T, upper: T, nseg: usize, degree: usize) -> Result<Self> {
        if !lower.finite() || !upper.finite() {
            return Err(invalid("knot bounds must be finite"));
        }
        if upper <= lower {
            return Err(invalid(format!("upper bound {upper} must exceed lower bound {lower}")));
        }
        if nseg == 0 {
            return Err(invalid("number of segments must be positive"));
        }
        let step = (upper - lower) / T::from_count(nseg);
        let count = nseg + 1 + 2 * degree;
        let knots = (0..count)
            .map(|i| {
                let offset = i as i64 - degree as i64;
                if offset == 0 {
                    lower
                } else if offset == nseg as i64 {
                    upper
                } else {
                    lower + step * T::lit(offset as f64)
                }
            })
            .collect();
        Ok(Self {
            degree,
            nseg,
            lower,
            upper,
            knots,
        })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// Number of interior segments between `lower` and `upper`.
    pub fn segments(&self) -> usize {
        self.nseg
    }

    pub fn lower(&self) -> T {
        self.lower
    }

    pub fn upper(&self) -> T {
        self.upper
    }

    pub fn knots(&self) -> &[T] {
        &self.knots
    }

    /// Knot spacing.
    pub fn step(&self) -> T {
        (self.upper - self.lower) / T::from_count(self.nseg)
    }

    /// Number of basis functions, `segments + degree`.
    pub fn dim(&self) -> usize {
        self.nseg + self.degree
    }

    /// Same domain and degree with `segments / divisor` segments.
    pub fn nested(&self, divisor: usize) -> Result<Self> {
        if divisor == 0 || !self.nseg.is_multiple_of(divisor) {
            return Err(Error::NotDivisor {
                divisor,
                segments: self.nseg,
            });
        }
        Self::new(self.lower, self.upper, self.nseg / divisor, self.degree)
    }

    pub fn contains(&self, x: T) -> bool {
        x >= self.lower && x <= self.upper
    }

    /// Index of the first nonzero basis function at `x` together with the
    /// `degree + 1` values starting there. The last segment is closed on the
    /// right so that `upper` itself is inside the domain.
    pub fn local_values(&self, x: T) -> Result<(usize, Vec<T>)> {
        if !x.finite() || !self.contains(x) {
            return Err(Error::OutsideDomain {
                value: x.as_f64(),
                lower: self.lower.as_f64(),
                upper: self.upper.as_f64(),
            });
        }
        let p = self.degree;
        let t = &self.knots;
        let guess = ((x - self.lower) / self.step()).floor().as_f64();
        let mut seg = if guess.is_finite() && guess > 0.0 {
            (guess as usize).min(self.nseg - 1)
        } else {
            0
        };
        while seg > 0 && x < t[seg + p] {
            seg -= 1;
        }
        while seg + 1 < self.nseg && x >= t[seg + p + 1] {
            seg += 1;
        }
        let span = seg + p;

        let mut values = vec![T::zero(); p + 1];
        let mut left = vec![T::zero(); p + 1];
        let mut right = vec![T::zero(); p + 1];
        values[0] = T::one();
        for j in 1..=p {
            left[j] = x - t[span + 1 - j];
            right[j] = t[span + j] - x;
            let mut saved = T::zero();
            for r in 0..j {
                let temp = values[r] / (right[r + 1] + left[j - r]);
                values[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            values[j] = saved;
        }
        Ok((seg, values))
    }
}

pub fn make_knots<T: Real>(lower: T, upper: T, nseg: usize, degree: usize) -> Result<KnotVector<T>> {
    KnotVector::new(lower, upper, nseg, degree)
}

/// Dense B-spline design matrix: one row per evaluation point.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisMatrix<T: Real> {
    pub values: DMatrix<T>,
    pub degree: usize,
    pub lower: T,
    pub upper: T,
}

impl<T: Real> BasisMatrix<T> {
    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }
}

/// Evaluates every basis function of `kv` at `points` (Cox-de Boor).
pub fn eval_basis<T: Real>(kv: &KnotVector<T>, points: &[T]) -> Result<BasisMatrix<T>> {
    let mut values = DMatrix::zeros(points.len(), kv.dim());
    for (i, &x) in points.iter().enumerate() {
        let (first, local) = kv.local_values(x)?;
        for (k, v) in local.into_iter().enumerate() {
            values[(i, first + k)] = v;
        }
    }
    Ok(BasisMatrix {
        values,
        degree: kv.degree(),
        lower: kv.lower(),
        upper: kv.upper(),
    })
}

/// Basis over the same domain with `segments / divisor` segments. Because
/// the coarse breakpoints are a subset of the fine ones, its columns lie in
/// the span of the full basis.
pub fn nested_basis<T: Real>(kv_full: &KnotVector<T>, divisor: usize, points: &[T]) -> Result<BasisMatrix<T>> {
    eval_basis(&kv_full.nested(divisor)?, points)
}

/// Integer difference operator of a given order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DifferenceOperator {
    pub order: usize,
    pub matrix: DMatrix<i64>,
}

impl DifferenceOperator {
    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn to_real<T: Real>(&self) -> DMatrix<T> {
        self.matrix.map(|v| T::lit(v as f64))
    }

    /// `DᵀD`, the penalty matrix.
    pub fn gram<T: Real>(&self) -> DMatrix<T> {
        let d = self.to_real::<T>();
        d.transpose() * d
    }
}

pub fn difference_matrix(dim: usize, order: usize) -> Result<DifferenceOperator> {
    if order == 0 {
        return Err(invalid("difference order must be positive"));
    }
    if dim <= order {
        return Err(invalid(format!(
            "basis dimension {dim} must exceed difference order {order}"
        )));
    }
    let mut d = DMatrix::<i64>::identity(dim, dim);
    for _ in 0..order {
        let rows = d.nrows() - 1;
        d = DMatrix::from_fn(rows, dim, |r, c| d[(r + 1, c)] - d[(r, c)]);
    }
    Ok(DifferenceOperator { order, matrix: d })
}
