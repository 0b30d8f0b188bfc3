//! File formats, the experiment harness and the command line for
//! runtime-distribution prediction. The models themselves live in
//! `distnet-core`.

pub mod experiments;
pub mod io;
pub mod model_file;
pub mod reports;
