//! Experiment harness: corpora, synthetic errors, brute-force ground truth,
//! false-positive measurement and the CSV-producing grid runner.

mod corpus;
mod experiment;
mod fpr;
mod oracle;
mod synthetic;

pub use corpus::{
    bundled_word_counts, load_word_counts, parse_word_counts, top_values, Corpus, Record,
};
pub use experiment::{
    median, run_cells, run_experiment, run_in_memory, CellResult, ExperimentConfig,
    ExperimentRecord, ExperimentResults, FprRow, IngestSource, QuerySource, SummaryRow, TimingRow,
    Truth, CSV_SCHEMA_VERSION,
};
pub use fpr::{fpr_curve, measure_fpr, WordPool, PRESENT};
pub use oracle::{oracle_counts, Oracle, OracleCount};
pub use synthetic::{corrupt_value, make_synthetic, Corruption, EditOp};

/// Environment variable that overrides the configured seed.
pub const SEED_ENV: &str = "PPCF_SEED";

/// The seed from [`SEED_ENV`], if set and numeric.
pub fn seed_from_env() -> crate::Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s.trim().parse().map(Some).map_err(|_| {
            crate::Error::Config(format!("{SEED_ENV}={s:?} is not an unsigned integer"))
        }),
        Err(_) => Ok(None),
    }
}
