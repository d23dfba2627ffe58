//! Dense linear algebra, seeded sampling and rotation matrices.

mod matrix;
mod qr;
mod rng;

pub use matrix::{gemm, matmul_plain, transpose, Matrix};
pub use qr::{householder_qr, qr_rotation, RotationMatrix};
pub use rng::{gaussian_matrix, Prng, Stream};
