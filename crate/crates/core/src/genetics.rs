//! Heritability and genotype-level summaries.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{invalid, Error, Result};
use crate::fitter::FittedModel;
use crate::linalg::psd_rank;
use crate::scalar::Real;
use crate::solver::{BlockKind, MixedModelSystem};

const RANK_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeritabilityMode {
    /// `σ_g² / (σ_g² + σ²/r)`, balanced designs only.
    Standard,
    /// `ED_g / m_g`.
    Cullis,
    /// `ED_g / (m_g − ζ_g)`.
    Oakey,
}

impl FromStr for HeritabilityMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "standard" => Ok(Self::Standard),
            "cullis" => Ok(Self::Cullis),
            "oakey" => Ok(Self::Oakey),
            other => Err(Error::UnknownName(format!("heritability mode {other}"))),
        }
    }
}

impl fmt::Display for HeritabilityMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Standard => "standard",
            Self::Cullis => "cullis",
            Self::Oakey => "oakey",
        })
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct HeritabilityReport {
    pub mode: HeritabilityMode,
    pub value: f64,
    pub ed_genetic: f64,
    pub m_g: usize,
    /// Number of genotype directions absorbed by the fixed effects.
    pub zeta_g: usize,
    pub replicates: Option<usize>,
}

/// The random genotype block of a model.
pub fn genotype_block<T: Real>(sys: &MixedModelSystem<T>) -> Result<usize> {
    sys.blocks()
        .iter()
        .position(|b| b.kind == BlockKind::Genotype)
        .ok_or_else(|| invalid("heritability needs genotype as a random effect"))
}

/// `ζ_g = m_g − rank(Z_gᵀ (I − P_X) Z_g)`.
pub fn zero_eigen_count<T: Real>(sys: &MixedModelSystem<T>, g: usize) -> usize {
    let x = sys.x();
    let z = sys.z(g);
    let xtx = x.transpose() * x;
    let xtz = x.transpose() * z;
    let proj = xtx.cholesky().expect("fixed design has full column rank").solve(&xtz);
    let resid: DMatrix<T> = z - x * proj;
    let gram = resid.transpose() * resid;
    z.ncols() - psd_rank(&gram, T::lit(RANK_TOL))
}

/// Replicate count when every genotype level is observed equally often.
pub fn balanced_replicates<T: Real>(sys: &MixedModelSystem<T>, g: usize) -> Option<usize> {
    let b = &sys.blocks()[g];
    let levels = b.levels.as_ref()?;
    let mut counts = vec![0usize; b.dim()];
    for l in levels.iter().flatten() {
        counts[*l] += 1;
    }
    let r = *counts.first()?;
    (r > 0 && counts.iter().all(|&c| c == r)).then_some(r)
}

pub fn heritability<T: Real>(model: &FittedModel<T>, mode: HeritabilityMode) -> Result<HeritabilityReport> {
    let sys = model.system.as_ref();
    let g = genotype_block(sys)?;
    let m_g = sys.blocks()[g].dim();
    let ed = model.effective_dims[g].as_f64();
    let (value, zeta, reps) = match mode {
        HeritabilityMode::Cullis => (ed / m_g as f64, zero_eigen_count(sys, g), None),
        HeritabilityMode::Oakey => {
            let zeta = zero_eigen_count(sys, g);
            if zeta >= m_g {
                return Err(Error::Numerical(
                    "genotype effects are fully confounded with fixed effects".into(),
                ));
            }
            (ed / (m_g - zeta) as f64, zeta, None)
        }
        HeritabilityMode::Standard => {
            let r = balanced_replicates(sys, g)
                .ok_or_else(|| invalid("standard heritability requires a balanced design"))?;
            let sg = model.variances.components[g].as_f64();
            let s2 = model.variances.residual.as_f64();
            (sg / (sg + s2 / r as f64), zero_eigen_count(sys, g), Some(r))
        }
    };
    Ok(HeritabilityReport {
        mode,
        value,
        ed_genetic: ed,
        m_g,
        zeta_g: zeta,
        replicates: reps,
    })
}

/// How genotype labels map onto model coefficients.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GenotypeCoding {
    /// Random block holding the (non-check) genotypes.
    pub random_block: Option<usize>,
    /// Genotypes with their own fixed column: `(label, column of X)`.
    pub fixed: Vec<(String, usize)>,
    /// Level absorbed by the intercept when genotype is fully fixed.
    pub reference: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictionKind {
    Blup,
    Blue,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct GenotypePrediction {
    pub genotype: String,
    pub value: f64,
    pub kind: PredictionKind,
}

/// BLUPs of random genotypes and BLUEs (relative to the reference level or
/// the intercept) of fixed ones, sorted by label.
pub fn genotype_predictions<T: Real>(model: &FittedModel<T>, coding: &GenotypeCoding) -> Vec<GenotypePrediction> {
    let mut out = Vec::new();
    if let Some(g) = coding.random_block {
        let block = &model.system.blocks()[g];
        for (label, c) in block.labels.iter().zip(model.solve.coefficients[g].iter()) {
            out.push(GenotypePrediction {
                genotype: label.clone(),
                value: c.as_f64(),
                kind: PredictionKind::Blup,
            });
        }
    }
    for (label, col) in &coding.fixed {
        out.push(GenotypePrediction {
            genotype: label.clone(),
            value: model.solve.beta[*col].as_f64(),
            kind: PredictionKind::Blue,
        });
    }
    if let Some(r) = &coding.reference {
        out.push(GenotypePrediction {
            genotype: r.clone(),
            value: 0.0,
            kind: PredictionKind::Blue,
        });
    }
    out.sort_by(|a, b| a.genotype.cmp(&b.genotype));
    out
}
