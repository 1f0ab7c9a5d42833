//! Special functions, dense linear-algebra kernels and optimizer wrappers.

pub mod linalg;
pub mod optim;
pub mod special;

pub use linalg::{cholesky_factor, SpdMatrix};
pub use special::{
    norm_cdf, norm_pdf, norm_quantile, std_normal_cdf, std_normal_quantile, student_t_cdf,
    student_t_quantile, StudentT,
};
