//! Library surface behind the `detectlab` binary; the acceptance suite runs
//! the same entry points.

pub mod commands;
pub mod data;
pub mod error;
pub mod gradchecks;

pub use commands::{
    cmd_ablate, cmd_attnviz, cmd_eval, cmd_gradcheck, cmd_loss_bench, cmd_synth, cmd_train,
    write_bench_csv, ABLATION_CSV_HEADER,
};
pub use data::{load_split, worker_threads, Split};
pub use error::{CliError, Result};
pub use gradchecks::{run_check, CheckModule, GRADCHECK_COORDS, GRADCHECK_STEP};
