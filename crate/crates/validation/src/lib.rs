//! Independent oracles for checking `cellshock`, and the acceptance checks
//! in `tests/` that use them. The acceptance target is the slowest in the
//! workspace and runs last.

pub mod oracle;
