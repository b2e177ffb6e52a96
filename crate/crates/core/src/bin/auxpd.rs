use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use auxpd::bench::{
    learn_cost, match_bench, shortest_path_compare, svm_demo, LearnCostConfig, MatchBenchConfig, MatchStart,
    SvmDemoConfig,
};
use auxpd::problems::{Graph, Kernel};
use auxpd::solver::solve;
use auxpd::{SolveStatus, SolverConfig, StandardFormLP};

/// Exit status for a demo that ran but missed its target.
const BELOW_THRESHOLD: u8 = 3;

#[derive(Parser)]
#[command(name = "auxpd", version, about = "Physarum-dynamics LP solver and experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a standard-form LP read from JSON {"A", "b", "c"}.
    Solve {
        #[arg(long)]
        lp: PathBuf,
        #[arg(long, default_value_t = 10)]
        iters: usize,
        #[arg(long, default_value_t = 1.0)]
        step: f64,
        /// Clamp floor.
        #[arg(long, default_value_t = 1e-8)]
        eps: f64,
        /// Replacement for zero costs; size-dependent default when omitted.
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Upper bound used to flip negative-cost variables.
        #[arg(long)]
        flip_bound: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Random matching instances against the Hungarian algorithm.
    MatchBench {
        #[arg(long, default_value_t = 5)]
        n: usize,
        #[arg(long, default_value_t = 50)]
        m: usize,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        /// Iteration budgets, comma separated or repeated.
        #[arg(long, value_delimiter = ',', default_values_t = [10, 50, 100])]
        iters: Vec<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Slack cost.
        #[arg(long, default_value_t = 1e-3)]
        gamma: f64,
        #[arg(long, default_value_t = 1.0)]
        step: f64,
        #[arg(long, value_enum, default_value_t = Start::Uniform)]
        start: Start,
        /// Measure the error on the assignment block only.
        #[arg(long)]
        x_block_only: bool,
        /// Record wall-clock times (makes the report non-reproducible).
        #[arg(long)]
        timings: bool,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write per-instance rows as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Two Gaussian blobs classified by the l1-SVM layer.
    SvmDemo {
        #[arg(long, default_value_t = 10)]
        n_per_class: usize,
        #[arg(long, default_value_t = 4)]
        dim: usize,
        #[arg(long, default_value_t = 2.0)]
        sep: f64,
        #[arg(long, value_enum, default_value_t = KernelArg::Linear)]
        kernel: KernelArg,
        /// Gaussian kernel width.
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        #[arg(long, default_value_t = 10.0)]
        c_reg: f64,
        #[arg(long, default_value_t = 100)]
        iters: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Learn a matching cost matrix so the layer outputs a target assignment.
    LearnCost {
        #[arg(long, default_value_t = 3)]
        n: usize,
        #[arg(long, default_value_t = 5)]
        m: usize,
        /// Target column per row, e.g. "2,0,4"; random when omitted.
        #[arg(long, value_delimiter = ',')]
        target: Option<Vec<usize>>,
        #[arg(long, default_value_t = 0.5)]
        lr: f64,
        #[arg(long, default_value_t = 200)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Unrolled solver iterations per forward pass.
        #[arg(long, default_value_t = 8)]
        iters: usize,
        /// Solver step size.
        #[arg(long, default_value_t = 0.1)]
        step: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Shortest path by the LP layer next to Dijkstra.
    ShortestPath {
        /// JSON {"nodes": N, "arcs": [[tail, head, weight], ...]}.
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        source: usize,
        #[arg(long)]
        sink: usize,
        #[arg(long, default_value_t = 300)]
        iters: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Start {
    Uniform,
    Random,
    AllOnes,
}

#[derive(Clone, Copy, ValueEnum)]
enum KernelArg {
    Linear,
    Gaussian,
}

enum Failure {
    Io(String),
    Solver(auxpd::Error),
}

impl From<auxpd::Error> for Failure {
    fn from(e: auxpd::Error) -> Self {
        Failure::Solver(e)
    }
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Io(_) => 1,
            Failure::Solver(_) => 2,
        }
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

/// Writes the report to `out`, or stdout when absent.
fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> Result<(), Failure> {
    let text = to_json(value);
    match out {
        Some(path) => fs::write(path, text).map_err(|e| Failure::Io(format!("{}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cmd: Command) -> Result<u8, Failure> {
    match cmd {
        Command::Solve {
            lp,
            iters,
            step,
            eps,
            gamma,
            seed,
            flip_bound,
            out,
        } => {
            let text = read(&lp)?;
            let problem =
                StandardFormLP::from_json(&text).map_err(|e| Failure::Io(format!("{}: {e}", lp.display())))?;
            let cfg = SolverConfig {
                max_iters: iters,
                step_size: step,
                clamp_floor: eps,
                gamma,
                seed,
                flip_bound,
                ..SolverConfig::default()
            };
            let res = solve(&problem, &cfg, None)?;
            emit(&res, out.as_deref())?;
            if out.is_some() {
                println!(
                    "objective {} residual {:.3e} status {:?}",
                    res.objective, res.residual, res.status
                );
            }
            if res.status == SolveStatus::LinSolveFailure {
                eprintln!("error: linear solve failed after {} iterations", res.iterations());
                return Ok(2);
            }
            Ok(0)
        }
        Command::MatchBench {
            n,
            m,
            trials,
            iters,
            seed,
            gamma,
            step,
            start,
            x_block_only,
            timings,
            out,
            csv,
        } => {
            let cfg = MatchBenchConfig {
                n,
                m,
                trials,
                iters,
                seed,
                gamma,
                step,
                start: match start {
                    Start::Uniform => MatchStart::Uniform,
                    Start::Random => MatchStart::Random,
                    Start::AllOnes => MatchStart::AllOnes,
                },
                x_block_only,
                timings,
            };
            let report = match_bench(&cfg)?;
            if let Some(path) = &csv {
                fs::write(path, report.to_csv()?).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
            }
            emit(&report, out.as_deref())?;
            if out.is_some() {
                for a in &report.aggregates {
                    println!("iters {:>5}  mean error {:.4}", a.budget, a.mean_error);
                }
            }
            Ok(0)
        }
        Command::SvmDemo {
            n_per_class,
            dim,
            sep,
            kernel,
            sigma,
            c_reg,
            iters,
            seed,
            out,
        } => {
            let cfg = SvmDemoConfig {
                n_per_class,
                dim,
                sep,
                kernel: match kernel {
                    KernelArg::Linear => Kernel::Linear,
                    KernelArg::Gaussian => Kernel::Gaussian { sigma },
                },
                c_reg,
                iters,
                seed,
            };
            let report = svm_demo(&cfg)?;
            emit(&report, out.as_deref())?;
            eprintln!(
                "train accuracy {:.3} ({} variables, {} equalities, residual {:.2e})",
                report.accuracy, report.variables, report.equalities, report.residual
            );
            Ok(if report.accuracy >= 0.95 { 0 } else { BELOW_THRESHOLD })
        }
        Command::LearnCost {
            n,
            m,
            target,
            lr,
            steps,
            seed,
            iters,
            step,
            out,
        } => {
            let cfg = LearnCostConfig {
                n,
                m,
                target,
                lr,
                steps,
                seed,
                iters,
                step,
                ..LearnCostConfig::default()
            };
            let report = learn_cost(&cfg)?;
            emit(&report, out.as_deref())?;
            eprintln!(
                "loss {:.4} -> {:.4}, assignment {:?}, target {:?}",
                report.losses[0],
                report.losses[report.losses.len() - 1],
                report.assignment,
                report.target
            );
            Ok(if report.success { 0 } else { BELOW_THRESHOLD })
        }
        Command::ShortestPath {
            graph,
            source,
            sink,
            iters,
            seed,
            out,
        } => {
            let text = read(&graph)?;
            let g: Graph = serde_json::from_str(&text).map_err(|e| Failure::Io(format!("{}: {e}", graph.display())))?;
            let cfg = SolverConfig::default().with_iters(iters).with_seed(seed);
            let report = shortest_path_compare(&g, source, sink, &cfg)?;
            emit(&report, out.as_deref())?;
            eprintln!("pd {}  dijkstra {}", report.pd_objective, report.dijkstra_objective);
            Ok(if report.agree { 0 } else { BELOW_THRESHOLD })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            match &f {
                Failure::Io(msg) => eprintln!("error: {msg}"),
                Failure::Solver(e) => eprintln!("error: {e}"),
            }
            ExitCode::from(f.code())
        }
    }
}
