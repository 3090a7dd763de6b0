//! Numeric kernels with hand-written derivatives. Each forward has a
//! matching `*_backward` that maps the output gradient to input and
//! parameter gradients.

pub mod activation;
pub mod attention;
pub mod conv;
pub mod deform;
pub mod graph;
pub mod norm;
