//! File formats, parallel execution and the command-line front end for
//! [`raretrig_core`].

pub mod bench;
pub mod casedir;
pub mod cli;
pub mod json;
pub mod lutfile;
pub mod runtime;

pub use raretrig_core as core;
