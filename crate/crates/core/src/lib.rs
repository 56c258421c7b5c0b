//! Structured-covariance multivariate regression with interconnected
//! community dependence.
//!
//! The toolkit has two halves. The algebra kernel ([`ub`]) stores an `R x R`
//! uniform-block matrix as `G + G(G+1)/2` coordinates and evaluates products,
//! eigenvalues, determinants, inverses, square roots, and traces in closed
//! form on the `G x G` reduction. On top of it sit the model layers: the
//! dependence parameterizations ([`params`]), the block-summary likelihood
//! with analytic score and Fisher information ([`likelihood`]), the two-stage
//! estimator with exact factored coefficient covariance ([`estimator`]),
//! Wald/FDR inference and covariance-accuracy metrics ([`inference`]), and a
//! reproducible Monte-Carlo harness ([`simgen`]).
//!
//! Dense expansions exist only for oracle validation ([`validate`]) and I/O
//! ([`io`]); nothing on the fitting path touches an `R x R` matrix.

pub mod error;
pub mod estimator;
pub mod inference;
pub mod io;
pub mod likelihood;
pub mod params;
pub mod part;
pub mod simgen;
pub mod ub;
pub mod validate;

pub use error::{Error, Result};
pub use estimator::{fit, Dataset, FitOptions, FitResult};
pub use likelihood::BlockSummaries;
pub use params::{GammaVector, RhoVector};
pub use part::PartitionVector;
pub use ub::UniformBlockMatrix;
