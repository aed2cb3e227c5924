//! Spatial mixed models for agricultural field trials.
//!
//! A smooth surface over the plot coordinates is built from tensor-product
//! P-splines and split into a bilinear fixed part plus five smooth random
//! components. Together with genotype and other random factors it forms a
//! linear mixed model whose variances are estimated by REML through
//! Schall-type updates. Post-fit tools report effective dimensions,
//! heritabilities, surface decompositions and variograms.
//!
//! The numerical core is generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix it to `f64`.
//!
//! ```
//! use spatrial::model::{fit_trial, GenotypeRole, ModelSpec, Record, TrialData};
//! use spatrial::diagnostics::ed_table;
//!
//! let records = (0..48)
//!     .map(|i| Record {
//!         response: Some(((i % 6) as f64).sin() + (i / 6) as f64 * 0.1 + ((i * 7) % 5) as f64 * 0.05),
//!         genotype: format!("G{}", i % 12),
//!         row: (i / 8) as i64 + 1,
//!         col: (i % 8) as i64 + 1,
//!         extra: Default::default(),
//!     })
//!     .collect();
//! let data = TrialData::new("yield", "gen", records).unwrap();
//! let spec = ModelSpec { genotype: GenotypeRole::Random, ..Default::default() };
//! let tf = fit_trial::<f64>(&data, &spec, Default::default()).unwrap();
//! let table = ed_table(&tf);
//! assert!((table.total_effective + table.residual_ed - 48.0).abs() < 1e-6);
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod error;
pub mod fitter;
pub mod genetics;
pub mod io;
pub mod linalg;
pub mod model;
pub mod psanova;
pub mod scalar;
pub mod simulation;
pub mod solver;
pub mod splines;

pub use error::{Error, Result};
pub use scalar::Real;

pub type MixedModelSystemF64 = solver::MixedModelSystem<f64>;
pub type VariancesF64 = solver::Variances<f64>;
pub type FitOptionsF64 = fitter::FitOptions<f64>;
pub type FittedModelF64 = fitter::FittedModel<f64>;
pub type SpatialBasisF64 = psanova::SpatialBasis<f64>;
pub type PsAnovaDesignF64 = psanova::PsAnovaDesign<f64>;
pub type AssembledModelF64 = model::AssembledModel<f64>;
pub type TrialFitF64 = model::TrialFit<f64>;
