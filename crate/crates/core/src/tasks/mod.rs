//! Bundled example tasks.
//!
//! Each task ships an initial program and an evaluator honoring the
//! `--program_path`/`--results_dir` contract; the `shinka task-eval`
//! subcommand exposes the evaluators as executables.

pub mod packing;
pub mod synthetic;
