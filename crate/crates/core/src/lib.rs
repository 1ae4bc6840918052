//! Gaussian-process kernels for semi-supervised learning on graphs whose
//! nodes carry feature vectors.
//!
//! The central object is the transductive kernel `K = [K₁⁻¹ + r₂(L)]⁻¹`,
//! which combines a feature-space kernel `K₁` with a spectral regularizer of
//! the normalized graph Laplacian `L`. Feature-only and graph-only kernels
//! are the two limits of the same construction.
//!
//! ```no_run
//! use transgp::data::{generate_swiss_roll, sample_training_split};
//! use transgp::hyperopt::{optimize, OptConfig};
//! use transgp::kernels::{BaseKernel, KernelSpec, Regularizer};
//!
//! let ds = generate_swiss_roll(200, 4, 0.0, 7)?;
//! let ds = sample_training_split(&ds, 10, 7)?;
//! let spec = KernelSpec::transductive(BaseKernel::Rbf, Regularizer::RegularizedLaplacian);
//! let fit = optimize(&spec, &ds, &ds.splits.train, &OptConfig::default())?;
//! println!("lml {}", fit.best_lml);
//! # Ok::<(), transgp::Error>(())
//! ```

pub mod data;
pub mod error;
pub mod experiment;
pub mod gp;
pub mod graph;
pub mod hyperopt;
pub mod kernels;
pub mod linalg;

pub use error::{Error, Result};
