//! Seeded stream splitting and the small dense linear algebra used by the
//! problem generators and the optimizers.

mod mat;
mod rng;
mod sample;

pub use mat::{dot, Mat};
pub use rng::RngStream;
pub use sample::{sample_categorical, sample_gaussian_vector, sample_rotation};
