//! Test support: seeded graph generators and a reference interpreter.

pub mod gen;
pub mod oracle;

pub use gen::{random_input, GraphGen};
pub use oracle::{run as oracle_run, OracleError};
