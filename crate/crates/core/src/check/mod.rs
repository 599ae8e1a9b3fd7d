//! Oracle suites: finite-difference gradient checks and transform checks.

pub mod grad;
pub mod suite;

pub use grad::{check_inputs, check_params, project, rel_err, GradCheckOptions, GradReport};
pub use suite::{fft_suite, grad_suite, modulation_suite, tiny_network, CheckLine};
