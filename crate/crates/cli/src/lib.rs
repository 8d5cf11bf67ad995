//! Command-line driver for the `bregman-dc` solvers: instance generation,
//! single solves, benchmark grids and objective plots.

pub mod args;
pub mod commands;
pub mod config;
pub mod report;

use bregman_dc::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;

/// Numerical failures exit with 2; everything else (bad flags, config,
/// files) with 1.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(
            Error::NonFinite(_)
            | Error::RankDeficient
            | Error::DegenerateBound
            | Error::FactorizationFailed
            | Error::NotDescent(_)
            | Error::LineSearchExhausted(_)
            | Error::SubsolverStalled { .. }
            | Error::NonFiniteObjective(_)
            | Error::InfeasibleCertificate(_)
            | Error::NoConvergence(_),
        ) => EXIT_NUMERICAL,
        _ => EXIT_USAGE,
    }
}

pub fn run(cli: args::Cli) -> anyhow::Result<()> {
    use args::Command;
    match cli.command {
        Command::Gen(a) => {
            let path = commands::cmd_gen(&a)?;
            println!("wrote {}", path.display());
        }
        Command::Solve(a) => {
            let r = commands::cmd_solve(&a)?;
            print!(
                "{} {}: status={:?} obj={:.6e} feas={:.3e} outer={} ssn={} time={:.3}s t0={:.3}s",
                r.problem, r.method, r.status, r.obj, r.feas, r.outer_iter, r.ssn_iter, r.time, r.t0
            );
            match r.rec {
                Some(rec) => println!(" rec={rec:.3e}"),
                None => println!(),
            }
        }
        Command::Bench(a) => {
            let path = commands::cmd_bench(&a)?;
            println!("wrote {}", path.display());
        }
        Command::Plot(a) => {
            let (svg, csv) = commands::cmd_plot(&a)?;
            println!("wrote {} and {}", svg.display(), csv.display());
        }
    }
    Ok(())
}
