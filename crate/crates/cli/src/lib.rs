//! Library surface of the offloadnet CLI: experiment configuration, the
//! generate/train/eval/report commands, and the CSV record formats. The
//! binary is a thin argument parser over these functions so integration
//! tests can drive the full pipeline in-process.

pub mod commands;
pub mod config;
pub mod records;
pub mod report;

/// Environment variable capping the rayon worker pool.
pub const THREADS_ENV: &str = "OFFLOADNET_THREADS";

/// Builds the global rayon pool honoring [`THREADS_ENV`]. Safe to call more
/// than once; later calls are ignored.
pub fn init_thread_pool() {
    if let Ok(value) = std::env::var(THREADS_ENV) {
        if let Ok(threads) = value.parse::<usize>() {
            if threads > 0 {
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(threads)
                    .build_global();
            }
        }
    }
}
