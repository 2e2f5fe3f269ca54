//! Command-line front end: chain generation, sampling, backward steps,
//! trimming, Gromov-Prokhorov queries, dendritic checks and the convergence
//! experiment.
//!
//! Output is deterministic per (arguments, seed); the default seed comes
//! from `TREEGROW_SEED` when set.

use std::io::{BufRead, Write};
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::error::Error;
use crate::ip_tree::{preset, IpTree, IpTreeConfig};
use crate::mmspace::{gp_exact_small, gp_upper_bound, FiniteMmSpace, GpStrategy};
use crate::plane_tree::{LabelledPlaneTree, PlaneTree};
use crate::rng::derive_rng;
use crate::{dendritic, growth, metric, sampler};

#[derive(Parser, Debug)]
#[command(
    name = "treegrow",
    version,
    about = "Tree growth chains with uniform backward dynamics: simulation and verification"
)]
pub struct Cli {
    /// Worker threads for replicated experiments (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Grow a named example chain, one encoded tree per line.
    Grow {
        /// marchal | patricia | line
        #[arg(long)]
        model: String,
        /// Stable index for the Marchal chain, in (1, 2].
        #[arg(long)]
        alpha: Option<f64>,
        /// Alphabet size for the PATRICIA chain (uniform words).
        #[arg(long)]
        ell: Option<usize>,
        /// IP-tree config (path or preset name) for the line chain.
        #[arg(long)]
        config: Option<String>,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample a chain from an IP-tree, one encoded tree per line.
    Sample {
        /// IP-tree config: a file path or a preset name
        /// (interval, ell-ary, atom-line).
        #[arg(long = "ip-config")]
        ip_config: String,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        seed: Option<u64>,
        /// Emit labelled trees (needed for dendritic checks).
        #[arg(long)]
        labelled: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Apply uniform backward steps to every tree of a stream.
    Backward {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 1)]
        steps: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Trim and IP-rescale each tree into a metric measure space.
    Trim {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Gromov-Prokhorov distance between two space files.
    Gp {
        /// Exact oracle (spaces of at most 5 points).
        #[arg(long, conflicts_with = "bound")]
        exact: bool,
        /// Certified upper bound (quantile coupling).
        #[arg(long)]
        bound: bool,
        a: PathBuf,
        b: PathBuf,
    },
    /// Dendritic-system checks and ultrametric estimation.
    Dendritic {
        #[command(subcommand)]
        cmd: DendriticCmd,
    },
    /// Validate an IP-tree config; nonzero exit with the report on failure.
    ValidateIp {
        /// Config path or preset name.
        config: String,
    },
    /// Scaling-limit experiment: discrepancy, GP bound and trim
    /// correspondence per (size, replicate), as CSV.
    Experiment {
        #[arg(long)]
        config: String,
        /// Comma-separated chain sizes, e.g. 100,1000,10000.
        #[arg(long)]
        ns: String,
        #[arg(long, default_value_t = 20)]
        reps: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

#[derive(Subcommand, Debug)]
pub enum DendriticCmd {
    /// Check the axioms (and chain consistency) of labelled trees.
    Check { input: PathBuf },
    /// Estimate ultrametric entries from the last labelled tree of a
    /// stream; CSV rows i,j,estimate.
    Ultrametric {
        /// Label pairs, e.g. "1,2;1,3".
        #[arg(long)]
        pairs: String,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

/// Parse and semantically validate the arguments.
pub fn parse_args<I, T>(argv: I) -> Result<Cli, Error>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    // Collapse clap's multi-line message into one machine-parsable line.
    let cli = Cli::try_parse_from(argv).map_err(|e| {
        let flat: Vec<String> = e
            .to_string()
            .lines()
            .map(|l| l.trim().trim_start_matches("error: ").to_string())
            .filter(|l| {
                !l.is_empty() && !l.starts_with("Usage:") && !l.starts_with("For more information")
            })
            .collect();
        Error::Parse(flat.join(" "))
    })?;
    match &cli.command {
        Command::Grow {
            model,
            alpha,
            ell,
            config,
            n,
            ..
        } => {
            if *n == 0 {
                return Err(Error::Range("--n must be positive".into()));
            }
            match model.as_str() {
                "marchal" => {
                    let a = alpha.ok_or_else(|| Error::Range("--alpha required".into()))?;
                    growth::validate_alpha(a)?;
                }
                "patricia" => {
                    let e = ell.ok_or_else(|| Error::Range("--ell required".into()))?;
                    if e < 2 {
                        return Err(Error::Range("--ell must be at least 2".into()));
                    }
                }
                "line" => {
                    if config.is_none() {
                        return Err(Error::Range("--config required for the line model".into()));
                    }
                }
                other => {
                    return Err(Error::Range(format!("unknown model {other}")));
                }
            }
        }
        Command::Sample { n, .. } => {
            if *n == 0 {
                return Err(Error::Range("--n must be positive".into()));
            }
        }
        Command::Experiment { ns, reps, .. } => {
            parse_ns(ns)?;
            if *reps == 0 {
                return Err(Error::Range("--reps must be positive".into()));
            }
        }
        _ => {}
    }
    Ok(cli)
}

fn parse_ns(text: &str) -> Result<Vec<usize>, Error> {
    let ns: Result<Vec<usize>, _> = text.split(',').map(|s| s.trim().parse::<usize>()).collect();
    let ns = ns.map_err(|_| Error::Parse(format!("bad size list {text:?}")))?;
    if ns.is_empty() || ns.iter().any(|&n| n < 2) {
        return Err(Error::Range("sizes must be at least 2".into()));
    }
    Ok(ns)
}

fn default_seed(seed: Option<u64>) -> u64 {
    seed.or_else(|| {
        std::env::var("TREEGROW_SEED")
            .ok()
            .and_then(|s| s.parse().ok())
    })
    .unwrap_or(0)
}

fn load_ip(path_or_preset: &str) -> Result<IpTree, Error> {
    if preset(path_or_preset).is_some() {
        return IpTree::from_json_or_preset(path_or_preset);
    }
    let text = std::fs::read_to_string(path_or_preset)?;
    let cfg: IpTreeConfig =
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("bad config: {e}")))?;
    IpTree::from_config(&cfg)
}

fn load_ip_validated(path_or_preset: &str) -> Result<IpTree, Error> {
    let tree = load_ip(path_or_preset)?;
    let report = tree.validate_ip();
    if report.is_empty() {
        Ok(tree)
    } else {
        let lines: Vec<String> = report.iter().map(|v| v.to_string()).collect();
        Err(Error::Validation(lines.join("; ")))
    }
}

struct Output {
    sink: Box<dyn Write>,
}

impl Output {
    fn open(path: &Option<PathBuf>) -> Result<Self, Error> {
        let sink: Box<dyn Write> = match path {
            Some(p) => Box::new(std::io::BufWriter::new(std::fs::File::create(p)?)),
            None => Box::new(std::io::BufWriter::new(std::io::stdout())),
        };
        Ok(Output { sink })
    }

    fn line(&mut self, text: &str) -> Result<(), Error> {
        writeln!(self.sink, "{text}")?;
        Ok(())
    }

    fn finish(mut self) -> Result<(), Error> {
        self.sink.flush()?;
        Ok(())
    }
}

fn read_lines(path: &PathBuf) -> Result<Vec<String>, Error> {
    let file = std::fs::File::open(path)?;
    let mut lines = Vec::new();
    for line in std::io::BufReader::new(file).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            lines.push(line);
        }
    }
    Ok(lines)
}

/// Execute a parsed command.
pub fn run(cli: Cli) -> Result<(), Error> {
    if let Some(t) = cli.threads {
        // Ignore failure: the global pool can only be set once per process.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global();
    }
    match cli.command {
        Command::Grow {
            model,
            alpha,
            ell,
            config,
            n,
            seed,
            out,
        } => {
            let seed = default_seed(seed);
            let chain: Vec<PlaneTree> = match model.as_str() {
                "marchal" => growth::marchal_chain(n, alpha.unwrap(), seed)?,
                "patricia" => {
                    let e = ell.unwrap();
                    let measure = crate::ip_tree::BoundaryMeasure::Product {
                        probs: vec![1.0 / e as f64; e],
                    };
                    growth::patricia_chain(&measure, n, seed, growth::WORD_BUDGET)?
                }
                "line" => {
                    let tree = load_ip_validated(config.as_deref().unwrap())?;
                    growth::line_chain(&tree, n, seed)?
                }
                _ => unreachable!("validated in parse_args"),
            };
            let mut sink = Output::open(&out)?;
            for t in &chain {
                sink.line(&t.encode())?;
            }
            sink.finish()
        }
        Command::Sample {
            ip_config,
            n,
            seed,
            labelled,
            out,
        } => {
            let tree = load_ip_validated(&ip_config)?;
            let seed = default_seed(seed);
            let chain = sampler::grow_chain(&tree, n, seed)?;
            let mut sink = Output::open(&out)?;
            for lt in &chain.labelled {
                if labelled {
                    sink.line(&lt.encode())?;
                } else {
                    sink.line(&lt.unlabelled().encode())?;
                }
            }
            sink.finish()
        }
        Command::Backward {
            input,
            steps,
            seed,
            out,
        } => {
            let seed = default_seed(seed);
            let mut out_sink = Output::open(&out)?;
            for (idx, line) in read_lines(&input)?.iter().enumerate() {
                let mut tree = PlaneTree::decode(line)?;
                let mut rng = derive_rng(seed, &[idx as u64]);
                for _ in 0..steps {
                    tree = tree.uniform_backward_step(&mut rng)?;
                }
                out_sink.line(&tree.encode())?;
            }
            out_sink.finish()
        }
        Command::Trim { input, out } => {
            let mut out_sink = Output::open(&out)?;
            for line in read_lines(&input)? {
                let tree = PlaneTree::decode(&line)?;
                let tt = metric::trim(&tree)?;
                let mm: FiniteMmSpace<f64> = metric::ip_rescale(&tt)?;
                out_sink.line(
                    &serde_json::to_string(&mm)
                        .map_err(|e| Error::Parse(e.to_string()))?,
                )?;
            }
            out_sink.finish()
        }
        Command::Gp { exact, bound, a, b } => {
            let load = |p: &PathBuf| -> Result<FiniteMmSpace<f64>, Error> {
                let text = std::fs::read_to_string(p)?;
                let raw: FiniteMmSpace<f64> = serde_json::from_str(&text)
                    .map_err(|e| Error::Parse(format!("bad space file: {e}")))?;
                FiniteMmSpace::new(raw.dist, raw.weights, raw.root)
            };
            let x = load(&a)?;
            let y = load(&b)?;
            let eps = if exact || !bound {
                gp_exact_small(&x, &y)?
            } else {
                gp_upper_bound(&x, &y, GpStrategy::Greedy)?
            };
            println!("{eps:.12}");
            Ok(())
        }
        Command::Dendritic { cmd } => match cmd {
            DendriticCmd::Check { input } => {
                let mut previous: Option<LabelledPlaneTree> = None;
                for (idx, line) in read_lines(&input)?.iter().enumerate() {
                    let lt = LabelledPlaneTree::decode(line)?;
                    let d = dendritic::DendriticSystem::from_labelled_tree(&lt)?;
                    let report = d.check_axioms();
                    if !report.is_empty() {
                        return Err(Error::Validation(format!(
                            "tree {idx}: {}",
                            report[0]
                        )));
                    }
                    if let Some(prev) = &previous {
                        if lt.label_count() == prev.label_count() + 1 {
                            let reduced =
                                lt.remove_labelled_leaf(lt.label_count() as u32)?;
                            if reduced != *prev {
                                return Err(Error::Validation(format!(
                                    "tree {idx}: chain inconsistent with its predecessor"
                                )));
                            }
                        }
                    }
                    previous = Some(lt);
                }
                println!("ok");
                Ok(())
            }
            DendriticCmd::Ultrametric { pairs, input, csv } => {
                let lines = read_lines(&input)?;
                let last = lines
                    .last()
                    .ok_or_else(|| Error::Parse("empty tree stream".into()))?;
                let lt = LabelledPlaneTree::decode(last)?;
                let mut out = Output::open(&csv)?;
                out.line("i,j,estimate")?;
                for pair in pairs.split(';') {
                    let mut it = pair.split(',');
                    let i: u32 = it
                        .next()
                        .and_then(|s| s.trim().parse().ok())
                        .ok_or_else(|| Error::Parse(format!("bad pair {pair:?}")))?;
                    let j: u32 = it
                        .next()
                        .and_then(|s| s.trim().parse().ok())
                        .ok_or_else(|| Error::Parse(format!("bad pair {pair:?}")))?;
                    let est = dendritic::ultrametric_estimate(&lt, i, j)?;
                    out.line(&format!("{i},{j},{est:.9}"))?;
                }
                out.finish()
            }
        },
        Command::ValidateIp { config } => {
            let tree = load_ip(&config)?;
            let report = tree.validate_ip();
            if report.is_empty() {
                println!("ok");
                Ok(())
            } else {
                let lines: Vec<String> = report.iter().map(|v| v.to_string()).collect();
                Err(Error::Validation(lines.join("; ")))
            }
        }
        Command::Experiment {
            config,
            ns,
            reps,
            seed,
            csv,
        } => {
            let tree = load_ip_validated(&config)?;
            let ns = parse_ns(&ns)?;
            let seed = default_seed(seed);
            let rows = metric::convergence_experiment(&tree, &ns, reps, seed)?;
            let mut out = Output::open(&csv)?;
            out.line("n,rep,discrepancy,gp_bound,pass")?;
            for row in &rows {
                out.line(&format!(
                    "{},{},{:.9},{:.9},{}",
                    row.n,
                    row.rep,
                    row.discrepancy,
                    row.gp_bound,
                    u8::from(row.pass)
                ))?;
            }
            out.finish()
        }
    }
}

/// Binary entry point: parse, run, map errors to a single diagnostic line
/// and a nonzero exit code.
pub fn cli_main() -> i32 {
    let args: Vec<String> = std::env::args().collect();
    // Let clap print its own help/version output.
    if args
        .iter()
        .any(|a| a == "--help" || a == "-h" || a == "--version" || a == "-V")
    {
        use clap::Parser as _;
        Cli::parse_from(&args);
        return 0;
    }
    match parse_args(&args).and_then(run) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(list: &[&str]) -> Vec<String> {
        std::iter::once("treegrow")
            .chain(list.iter().copied())
            .map(String::from)
            .collect()
    }

    #[test]
    fn parse_valid_grow() {
        let cli = parse_args(args(&[
            "grow", "--model", "marchal", "--alpha", "2", "--n", "10", "--seed", "1",
        ]))
        .unwrap();
        match cli.command {
            Command::Grow { model, n, .. } => {
                assert_eq!(model, "marchal");
                assert_eq!(n, 10);
            }
            _ => panic!("wrong command"),
        }
    }

    #[test]
    fn parse_rejects_alpha_out_of_range() {
        let err = parse_args(args(&[
            "grow", "--model", "marchal", "--alpha", "3", "--n", "10",
        ]))
        .unwrap_err();
        assert!(matches!(err, Error::Range(_)), "{err}");
    }

    #[test]
    fn parse_rejects_unknown_flag() {
        let err = parse_args(args(&["grow", "--flagzilla", "1"])).unwrap_err();
        assert!(matches!(err, Error::Parse(_)));
    }

    #[test]
    fn parse_experiment_sizes() {
        assert!(parse_args(args(&[
            "experiment", "--config", "interval", "--ns", "10,abc", "--reps", "2",
        ]))
        .is_err());
        assert!(parse_args(args(&[
            "experiment", "--config", "interval", "--ns", "10,100", "--reps", "2",
        ]))
        .is_ok());
    }
}
