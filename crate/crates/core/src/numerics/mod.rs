//! Dense numeric core: matrices, the differentiation tape, the bivariate
//! normal density and seeded randomness.

mod gaussian;
mod gradcheck;
mod matrix;
mod rng;
mod tape;

pub use gaussian::{bvn_nll, bvn_sample, softmax, GaussianParams, ONE_MINUS_RHO2_FLOOR};
pub use gradcheck::{grad_check, store_of, GradCheckError, GradCheckReport};
pub use matrix::Matrix;
pub use rng::Rng;
pub use tape::{Gradients, ParamId, ParamStore, Tape, Var};

#[cfg(test)]
pub(crate) use tape::sigmoid;

/// Uniform `[-scale, scale]` initialization.
pub fn uniform_matrix(rng: &mut Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.uniform_range(-scale, scale))
}
