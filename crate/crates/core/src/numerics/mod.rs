//! Dense linear algebra, seeded randomness and stable log-domain helpers.

mod linalg;
mod matrix;
mod rng;

pub use linalg::{log_sum_exp, pca_project_2d, symmetric_eigen};
pub(crate) use linalg::lse;
pub(crate) use matrix::gemm;
pub use matrix::{matmul, Matrix};
pub use rng::SeededRng;
