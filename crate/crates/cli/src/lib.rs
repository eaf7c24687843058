//! Command-line toolkit for reconstructing corallites from slice stacks.
//!
//! Each subcommand wraps one stage of the workflow (phantom generation,
//! tiling, segmentation, stitching, region measurement, evaluation, tracing,
//! meshing); `run` chains every stage behind one JSON config. The binary is a
//! thin shell around [`run`], so integration tests can drive the same code
//! in-process.

pub mod args;
pub mod commands;
pub mod index;
pub mod pipeline;

use anyhow::{Context, Result};

/// Dispatches a parsed command line.
pub fn run(cli: args::Cli) -> Result<()> {
    if let Some(threads) = cli.global.threads {
        // Ignore the error: the global pool can only be set once per process,
        // which is exactly what repeated in-process calls want.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    let verbose = cli.global.verbose;
    match &cli.command {
        args::Command::Phantom(cmd) => commands::phantom_cmd(cmd, verbose),
        args::Command::Tile(cmd) => commands::tile_cmd(cmd, verbose),
        args::Command::Segment(cmd) => commands::segment_cmd(cmd, verbose),
        args::Command::Stitch(cmd) => commands::stitch_cmd(cmd, verbose),
        args::Command::Regions(cmd) => commands::regions_cmd(cmd, verbose),
        args::Command::Evaluate(cmd) => commands::evaluate_cmd(cmd, verbose),
        args::Command::Trace(cmd) => commands::trace_cmd(cmd, verbose),
        args::Command::Reconstruct(cmd) => commands::reconstruct_cmd(cmd, verbose),
        args::Command::Run => {
            let path = cli
                .global
                .config
                .as_ref()
                .context("`run` needs --config FILE")?;
            let config: pipeline::PipelineConfig = commands::read_json(path)?;
            pipeline::run_pipeline(&config, verbose).map(|_| ())
        }
    }
}
