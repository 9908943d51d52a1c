//! Adaptive tempered sequential Monte Carlo with self-tuning Hamiltonian kernels.
//!
//! The crate moves a cloud of particles from a tractable initial distribution
//! to a target posterior through a tempered sequence `p(x) l(y|x)^lambda`,
//! choosing the exponents from the effective sample size, rejuvenating the
//! particles with HMC / MALA / random-walk kernels, and tuning the kernel
//! parameters on the fly from the particle population itself. A benchmark
//! harness and CLI run sampler/model/tuner grids and aggregate the usual
//! quality metrics (normalizing constant, posterior moments, ESJD,
//! computational load).

pub mod bench;
pub mod error;
pub mod kernels;
pub mod models;
pub mod numeric;
pub mod rng;
pub mod smc;
pub mod tuning;

pub use error::{Error, Result};
pub use models::{build_model, LogDensity, Model, ModelSpec, TemperedTarget};
pub use smc::{run_sampler, ParticleCloud, RunTrace, SamplerConfig};
