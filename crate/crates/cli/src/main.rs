//! `dualte` command-line interface.

mod cmd;
mod io;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// Learned dual-update traffic engineering: data generation, training and
/// evaluation against an exact LP oracle.
///
/// Exit codes: 0 success, 2 usage, config or input error, 3 infeasible
/// instance, 4 numerical failure or aborted training. Relative output paths
/// are placed under DUALTE_OUT_DIR when it is set. Every successful run writes
/// one manifest, `<output>.manifest.json` or `<command>.manifest.json` for
/// commands printing to standard output.
#[derive(Parser)]
#[command(name = "dualte", version, max_term_width = 100)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random connected topology.
    GenTopo(cmd::GenTopo),
    /// Compute K shortest loopless paths for every node pair.
    GenPaths(cmd::GenPaths),
    /// Generate a gravity-model demand trace.
    GenTraffic(cmd::GenTraffic),
    /// Solve the min-MLU LP for one snapshot and print the solution.
    Solve(cmd::Solve),
    /// Train the update operator from a training run JSON.
    Train(cmd::Train),
    /// Report normalized MLU of a router.
    Eval(cmd::Eval),
    /// Report normalized MLU with random link failures.
    FailureEval(cmd::FailureEval),
    /// Report normalized MLU of a checkpoint on another topology.
    TransferEval(cmd::TransferEval),
    /// Generate a dynamic-topology scenario cluster.
    GenCluster(cmd::GenCluster),
    /// Dump the per-iteration MLU trajectory of one instance.
    Trace(cmd::Trace),
    /// Sweep the update network response over utilization and dual value.
    Sweep(cmd::Sweep),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenTopo(a) => cmd::gen_topo(a),
        Command::GenPaths(a) => cmd::gen_paths(a),
        Command::GenTraffic(a) => cmd::gen_traffic(a),
        Command::Solve(a) => cmd::solve(a),
        Command::Train(a) => cmd::train(a),
        Command::Eval(a) => cmd::eval(a),
        Command::FailureEval(a) => cmd::failure(a),
        Command::TransferEval(a) => cmd::transfer(a),
        Command::GenCluster(a) => cmd::gen_cluster(a),
        Command::Trace(a) => cmd::trace(a),
        Command::Sweep(a) => cmd::sweep(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
