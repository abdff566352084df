//! `noisy-parity` command-line front end.
//!
//! Exit codes: 0 success, 1 invalid input, 2 a property or check failed.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use serde_json::json;

use noisy_parity::advantage::{
    advantage_exact, alpha_bound, gks_depth_bound, min_transmission_ratio, protocol_advantage, readonce_advantage,
    sign_of, advantage_mc, Distribution, DistributionSpec, Grid, LogBase, McOptions, RatioConstants,
};
use noisy_parity::harness::{emit, format_float as ff, failures, run_experiment, to_csv, ExperimentConfig, ExperimentId};
use noisy_parity::noise::{BitVector, RngStream};
use noisy_parity::planar::{
    check_bounded_counts, decompose, is_connected, sample_network, verify_decomposition, PlanarNetwork,
};
use noisy_parity::protocol::dsl::{parse_protocol, write_protocol};
use noisy_parity::protocol::exact::error_probability_exact;
use noisy_parity::protocol::exec::error_probability_mc;
use noisy_parity::protocol::{execute, BoolExpr, Channel, ExactOptions, Outcome, Protocol};
use noisy_parity::reductions::{protocol_to_read_once, to_noisy_copy, to_semi_noisy, ChainOptions};
use noisy_parity::tree::{collapse_to_read_once, read_tree, reorder, write_tree};

#[derive(Parser)]
#[command(name = "noisy-parity", version, about = "Noisy broadcast protocols, reductions and experiments")]
struct Cli {
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// JSON configuration (experiment config for `experiment`, chain options for `reduce`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file (default: standard output).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a random planar network.
    GenNetwork {
        #[arg(long)]
        n: usize,
        /// Connection radius; default `sqrt(c ln N / N)` with `--radius-constant`.
        #[arg(long)]
        radius: Option<f64>,
        #[arg(long, default_value_t = 10.0)]
        radius_constant: f64,
    },
    /// Decompose a network into input and auxiliary blocks.
    Decompose {
        #[arg(long)]
        network: PathBuf,
        /// JSON array of per-node transmission counts (default: one each).
        #[arg(long)]
        counts: Option<PathBuf>,
    },
    /// Error probability of a protocol against a target function.
    RunProtocol {
        #[arg(long, visible_alias = "file")]
        protocol: PathBuf,
        /// Override the noise rate in the file.
        #[arg(long, visible_alias = "epsilon")]
        eps: Option<f64>,
        /// Target over input variables (default: parity of all inputs).
        #[arg(long)]
        target: Option<String>,
        /// Monte Carlo trials per input instead of exact enumeration.
        #[arg(long, conflicts_with = "exact")]
        trials: Option<u64>,
        /// Exact enumeration (the default).
        #[arg(long)]
        exact: bool,
    },
    /// Apply the reduction chain up to a stage.
    Reduce {
        #[arg(long, visible_alias = "in")]
        protocol: PathBuf,
        #[arg(long, value_enum)]
        stage: Stage,
        /// Compare exact advantages before and after the reduction.
        #[arg(long, value_enum, default_value_t = Check::Exact)]
        check_advantage: Check,
        #[command(flatten)]
        mu: MuArg,
    },
    /// Rearrange a decision tree or compute its advantage.
    Tree {
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        action: TreeAction,
    },
    /// Advantage of a protocol's output bit, or of a channel's label.
    Advantage {
        #[command(flatten)]
        source: AdvSource,
        #[command(flatten)]
        method: AdvMethod,
        #[arg(long, visible_alias = "f")]
        target: Option<String>,
        #[command(flatten)]
        mu: MuArg,
    },
    /// Evaluate a bound.
    Bounds {
        #[command(flatten)]
        which: BoundKind,
        #[arg(long)]
        eps: f64,
        #[arg(long)]
        delta: Option<f64>,
        /// Sensitivity (for --gks).
        #[arg(long)]
        s: Option<f64>,
        /// Block size n (for --alpha).
        #[arg(long)]
        n: Option<f64>,
        /// Block budget D (for --alpha).
        #[arg(long)]
        big_d: Option<f64>,
        /// Network size N (for --min-s).
        #[arg(long)]
        nodes: Option<f64>,
        #[arg(long, default_value_t = 1.0)]
        c: f64,
        #[arg(long, default_value_t = 72.0)]
        c_prime: f64,
        #[arg(long, default_value_t = 1.0)]
        c_double_prime: f64,
        #[arg(long, value_enum, default_value_t = Base::Two)]
        log_base: Base,
    },
    /// Run an experiment from `--config`, or E1..E8 with defaults via `--id`.
    Experiment {
        #[arg(long)]
        id: Option<String>,
        /// Seeds for `--id` (default: `--seed`).
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Stage {
    Semi,
    Copy,
    Xnd,
    Readonce,
}

#[derive(Clone, Copy, ValueEnum)]
enum Check {
    Exact,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum Base {
    Two,
    Natural,
}

#[derive(Args)]
struct MuArg {
    /// JSON distribution spec, or an array with one spec per block
    /// (default: uniform on every block).
    #[arg(long)]
    mu: Option<PathBuf>,
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct TreeAction {
    #[arg(long)]
    reorder: bool,
    #[arg(long)]
    collapse: bool,
    #[arg(long)]
    advantage: bool,
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct AdvSource {
    #[arg(long)]
    protocol: Option<PathBuf>,
    /// JSON channel: `{"outcome_bits": b, "rows": [{"input": "01", "probs": [[label, p], ...]}, ...]}`.
    #[arg(long)]
    channel: Option<PathBuf>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ChannelFile {
    outcome_bits: usize,
    rows: Vec<ChannelRow>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ChannelRow {
    input: BitVector,
    probs: Vec<(u64, f64)>,
}

fn load_channel(path: &Path) -> anyhow::Result<Channel> {
    let file: ChannelFile = serde_json::from_str(&read(path)?).with_context(|| format!("channel {}", path.display()))?;
    let bits = file.rows.first().map_or(0, |r| r.input.len());
    for r in &file.rows {
        if r.input.len() != bits {
            bail!("channel inputs have different lengths");
        }
        let total: f64 = r.probs.iter().map(|p| p.1).sum();
        if r.probs.iter().any(|p| !(p.1 >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            bail!("row for input {} is not a probability distribution", r.input);
        }
    }
    let (inputs, rows) = file.rows.into_iter().map(|r| (r.input, r.probs)).unzip();
    Ok(Channel::new(inputs, file.outcome_bits, rows))
}

fn single_law(bits: usize, mu: &MuArg) -> anyhow::Result<Distribution> {
    match &mu.mu {
        None => Ok(Distribution::uniform(bits)?),
        Some(path) => {
            let spec: DistributionSpec = serde_json::from_str(&read(path)?).context("distribution file")?;
            let law = spec.build()?;
            if law.bits() != bits {
                bail!("channel has {bits} input bits but the distribution has {}", law.bits());
            }
            Ok(law)
        }
    }
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct AdvMethod {
    #[arg(long)]
    exact: bool,
    /// Monte Carlo trials.
    #[arg(long)]
    mc: Option<u64>,
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct BoundKind {
    /// Depth lower bound for a noisy decision tree (needs --delta, --s).
    #[arg(long)]
    gks: bool,
    /// Per-block advantage bound (needs --n, --big-d).
    #[arg(long)]
    alpha: bool,
    /// Smallest transmissions-per-node ratio S allowed at size N (needs --nodes, --delta).
    #[arg(long, visible_alias = "minS")]
    min_s: bool,
}

enum Failure {
    Invalid(anyhow::Error),
    Check(String),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Invalid(e)
    }
}

type Res<T> = Result<T, Failure>;

fn read(path: &Path) -> anyhow::Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write_out(out: &Option<PathBuf>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            if !text.ends_with('\n') {
                println!();
            }
            Ok(())
        }
    }
}

fn pretty(v: &serde_json::Value) -> String {
    serde_json::to_string_pretty(v).expect("JSON values serialise")
}

fn load_protocol(path: &Path, eps: Option<f64>) -> anyhow::Result<Protocol> {
    parse_protocol(&read(path)?, eps).with_context(|| format!("parsing {}", path.display()))
}

/// `--target` over `bits` input variables; `parity` (the default) names the
/// parity of all of them.
fn target(bits: usize, t: &Option<String>) -> anyhow::Result<BoolExpr> {
    match t.as_deref() {
        None | Some("parity") => Ok(BoolExpr::parity(bits)),
        Some(s) => s.parse().map_err(|e| anyhow!("target `{s}`: {e}")),
    }
}

fn block_laws(p: &Protocol, mu: &MuArg) -> anyhow::Result<Vec<Distribution>> {
    let k = p.block_count();
    let sizes: Vec<usize> = (0..k).map(|j| p.block_inputs(j).len()).collect();
    let Some(path) = &mu.mu else {
        return sizes
            .iter()
            .map(|&n| Distribution::uniform(n).map_err(Into::into))
            .collect();
    };
    let text = read(path)?;
    let value: serde_json::Value = serde_json::from_str(&text).context("distribution file")?;
    let specs: Vec<DistributionSpec> = if value.is_array() {
        serde_json::from_value(value)?
    } else {
        vec![serde_json::from_value(value)?; k]
    };
    if specs.len() != k {
        bail!("{} distributions for {k} blocks", specs.len());
    }
    let laws: Vec<Distribution> = specs.iter().map(|s| s.build()).collect::<Result<_, _>>()?;
    for (j, (law, &n)) in laws.iter().zip(&sizes).enumerate() {
        if law.bits() != n {
            bail!("block {j} has {n} inputs but its distribution has {} bits", law.bits());
        }
    }
    Ok(laws)
}

fn chain_options(cfg: &Option<PathBuf>) -> anyhow::Result<ChainOptions> {
    match cfg {
        None => Ok(ChainOptions::default()),
        Some(p) => serde_json::from_str(&read(p)?).with_context(|| format!("chain options {}", p.display())),
    }
}

fn no_config(cli: &Cli, cmd: &str) -> anyhow::Result<()> {
    if cli.config.is_some() {
        bail!("--config is not used by `{cmd}`");
    }
    Ok(())
}

fn run(cli: Cli) -> Res<()> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(anyhow!("--threads must be positive").into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| anyhow!("thread pool: {e}"))?;
    }
    match &cli.command {
        Command::GenNetwork {
            n,
            radius,
            radius_constant,
        } => {
            no_config(&cli, "gen-network")?;
            if *n < 1 {
                return Err(anyhow!("--n must be positive").into());
            }
            let r = radius.unwrap_or_else(|| (radius_constant * (*n as f64).ln() / *n as f64).sqrt());
            if !(r.is_finite() && r >= 0.0) {
                return Err(anyhow!("radius {r} is not a non-negative number").into());
            }
            let net = sample_network(*n, r, &mut noisy_parity::harness::network_stream(cli.seed, *n));
            eprintln!(
                "{}",
                json!({"nodes": n, "radius": r, "edges": net.graph().edge_count(), "connected": is_connected(&net)})
            );
            write_out(&cli.out, &net.to_json())?;
        }
        Command::Decompose { network, counts } => {
            no_config(&cli, "decompose")?;
            let net = PlanarNetwork::from_json(&read(network)?).map_err(anyhow::Error::from)?;
            let counts: Vec<u64> = match counts {
                Some(p) => serde_json::from_str(&read(p)?).context("counts must be a JSON array of integers")?,
                None => vec![1; net.len()],
            };
            let total = counts.iter().sum();
            let dec = decompose(&net, &counts, total).map_err(|e| Failure::Check(format!("decomposition failed: {e}")))?;
            let structure = verify_decomposition(net.graph(), &dec);
            let bounded = check_bounded_counts(&counts, &dec, dec.d, dec.big_d);
            eprintln!(
                "{}",
                json!({"n": dec.n, "k": dec.k, "d": dec.d, "D": dec.big_d,
                       "p1": structure.p1, "p2": structure.p2, "partition": structure.partition,
                       "p3": bounded.p3, "p4": bounded.p4})
            );
            write_out(&cli.out, &dec.to_json())?;
            if !(structure.all_pass() && bounded.all_pass()) {
                return Err(Failure::Check("decomposition does not satisfy its properties".into()));
            }
        }
        Command::RunProtocol {
            protocol,
            eps,
            target: t,
            trials,
            ..
        } => {
            no_config(&cli, "run-protocol")?;
            let p = load_protocol(protocol, *eps)?;
            let f = target(p.input_nodes().len(), t)?;
            let inputs = p.all_inputs();
            let report = match trials {
                Some(n) => {
                    let r = error_probability_mc(&p, &f, &inputs, *n, cli.seed, 0.95).map_err(anyhow::Error::from)?;
                    json!({"method": "monte-carlo", "trials": n, "seed": cli.seed,
                           "worst_estimate": r.worst_estimate, "worst_upper": r.worst_upper,
                           "per_input": r.per_input})
                }
                None => {
                    let r = error_probability_exact(&p, &f, &ExactOptions::default()).map_err(anyhow::Error::from)?;
                    json!({"method": "exact", "worst": r.worst,
                           "worst_input": inputs[r.worst_input].bits().iter().map(|&b| b as u8).collect::<Vec<_>>(),
                           "per_input": r.per_input})
                }
            };
            write_out(&cli.out, &pretty(&report))?;
        }
        Command::Reduce {
            protocol,
            stage,
            check_advantage,
            mu,
        } => {
            let p = load_protocol(protocol, None)?;
            let mut opts = chain_options(&cli.config)?;
            let checked = matches!(check_advantage, Check::Exact);
            if !checked {
                opts.check_simulation = false;
                opts.check_tree = false;
            }
            match stage {
                Stage::Semi | Stage::Copy => {
                    let semi = to_semi_noisy(&p, opts.budgets).map_err(anyhow::Error::from)?;
                    let (out, mut report) = if let Stage::Semi = stage {
                        (semi.protocol, json!({"stage": "semi"}))
                    } else {
                        let d = (semi.protocol.tight_budgets().0.ceil() as usize).max(1);
                        let copy = to_noisy_copy(&semi.protocol, d).map_err(anyhow::Error::from)?;
                        let eps = copy.protocol.epsilon();
                        (copy.protocol, json!({"stage": "copy", "d": d, "epsilon": eps}))
                    };
                    report["transmissions"] = json!(out.len());
                    write_out(&cli.out, &write_protocol(&out))?;
                    if checked {
                        let f = BoolExpr::parity(p.input_nodes().len());
                        let law = Distribution::product(&block_laws(&p, mu)?).map_err(anyhow::Error::from)?;
                        let exact = ExactOptions::with_bits(opts.max_random_bits);
                        let adv = |q: &Protocol| protocol_advantage(q, &Outcome::Output, &f, &law, &exact);
                        let (before, after) = (adv(&p).map_err(anyhow::Error::from)?, adv(&out).map_err(anyhow::Error::from)?);
                        report["advantage_before"] = json!(before);
                        report["advantage_after"] = json!(after);
                        eprintln!("{report}");
                        if after < before - 1e-9 {
                            return Err(Failure::Check("the reduction lowered the advantage".into()));
                        }
                    } else {
                        eprintln!("{report}");
                    }
                }
                Stage::Xnd | Stage::Readonce => {
                    let laws = block_laws(&p, mu)?;
                    let chain = protocol_to_read_once(&p, &laws, &opts).map_err(anyhow::Error::from)?;
                    let r = &chain.report;
                    eprintln!("{}", serde_json::to_string(r).expect("reports serialise"));
                    let tree = match stage {
                        Stage::Xnd => &chain.xnd.tree,
                        _ => &chain.read_once,
                    };
                    write_out(&cli.out, &write_tree(tree))?;
                    let tv_ok = [r.simulation_tv, r.tree_tv].iter().flatten().all(|&tv| tv <= 1e-12);
                    if checked && (!r.monotone || !tv_ok) {
                        return Err(Failure::Check("the chain violated monotonicity or a law check".into()));
                    }
                }
            }
        }
        Command::Tree { input, action } => {
            no_config(&cli, "tree")?;
            let t = read_tree(&read(input)?).map_err(anyhow::Error::from)?;
            if action.reorder {
                let r = reorder(&t).map_err(anyhow::Error::from)?;
                eprintln!(
                    "{}",
                    json!({"steps": r.steps, "advantage_before": r.input_advantage,
                           "advantage_after": r.tree.advantage()})
                );
                write_out(&cli.out, &write_tree(&r.tree))?;
                if r.tree.advantage() < r.input_advantage - 1e-9 {
                    return Err(Failure::Check("reordering lowered the advantage".into()));
                }
            } else if action.collapse {
                let c = collapse_to_read_once(&t).map_err(anyhow::Error::from)?;
                write_out(&cli.out, &write_tree(&c))?;
            } else {
                let mut v = json!({"advantage": t.advantage(), "depth": t.depth(),
                                   "read_once": t.is_read_once()});
                if t.is_read_once() {
                    let r = readonce_advantage(&t).map_err(anyhow::Error::from)?;
                    v["product"] = json!(r.product);
                    v["max_power"] = json!(r.max_power);
                    v["factors"] = json!(r.factors);
                }
                write_out(&cli.out, &pretty(&v))?;
            }
        }
        Command::Advantage {
            source: AdvSource { channel: Some(path), .. },
            method,
            target: t,
            mu,
        } => {
            no_config(&cli, "advantage")?;
            let ch = load_channel(path)?;
            let bits = ch.inputs().first().map_or(0, |x| x.len());
            let f = target(bits, t)?;
            let law = single_law(bits, mu)?;
            let v = if method.exact {
                let (est, weighting) = advantage_exact(&ch, &f, &law).map_err(anyhow::Error::from)?;
                json!({"method": "exact", "advantage": est.value, "weighting": weighting})
            } else {
                let trials = method.mc.expect("clap enforces one method");
                let index: std::collections::HashMap<&BitVector, usize> =
                    ch.inputs().iter().enumerate().map(|(i, x)| (x, i)).collect();
                let est = advantage_mc(
                    |rng: &mut RngStream| {
                        let x = law.sample(rng);
                        let row = index.get(&x).map_or(&[][..], |&i| ch.row(i));
                        let mut u = rng.unit();
                        let mut label = row.last().map_or(0, |r| r.0);
                        for &(c, p) in row {
                            if u < p {
                                label = c;
                                break;
                            }
                            u -= p;
                        }
                        (sign_of(&f, &x), label)
                    },
                    &McOptions::new(trials, cli.seed),
                );
                serde_json::to_value(est).expect("estimates serialise")
            };
            write_out(&cli.out, &pretty(&v))?;
        }
        Command::Advantage {
            source,
            method,
            target: t,
            mu,
        } => {
            no_config(&cli, "advantage")?;
            let protocol = source.protocol.as_ref().expect("clap enforces one source");
            let p = load_protocol(protocol, None)?;
            let f = target(p.input_nodes().len(), t)?;
            let law = Distribution::product(&block_laws(&p, mu)?).map_err(anyhow::Error::from)?;
            let v = if method.exact {
                let a = protocol_advantage(&p, &Outcome::Output, &f, &law, &ExactOptions::default())
                    .map_err(anyhow::Error::from)?;
                json!({"method": "exact", "advantage": a})
            } else {
                let trials = method.mc.expect("clap enforces one method");
                let est = advantage_mc(
                    |rng: &mut RngStream| {
                        let x = law.sample(rng);
                        let out = execute(&p, &x, rng).map(|tr| tr.output as u64).unwrap_or(0);
                        (sign_of(&f, &x), out)
                    },
                    &McOptions::new(trials, cli.seed),
                );
                serde_json::to_value(est).expect("estimates serialise")
            };
            write_out(&cli.out, &pretty(&v))?;
        }
        Command::Bounds {
            which,
            eps,
            delta,
            s,
            n,
            big_d,
            nodes,
            c,
            c_prime,
            c_double_prime,
            log_base,
        } => {
            no_config(&cli, "bounds")?;
            let base = match log_base {
                Base::Two => LogBase::Two,
                Base::Natural => LogBase::Natural,
            };
            let need = |v: Option<f64>, flag: &str| v.ok_or_else(|| anyhow!("{flag} is required"));
            let base_name = match log_base {
                Base::Two => "two",
                Base::Natural => "natural",
            };
            let mut rows: Vec<(&str, String, f64)> = Vec::new();
            if which.gks {
                let (delta, s) = (need(*delta, "--delta")?, need(*s, "--s")?);
                let b = gks_depth_bound(*eps, delta, s, base).map_err(anyhow::Error::from)?;
                let params = format!("eps={};delta={};s={};log={base_name}", ff(*eps), ff(delta), ff(s));
                rows.push(("gks", params, b));
            } else if which.alpha {
                let (n, big_d) = (need(*n, "--n")?, need(*big_d, "--big-d")?);
                let b = alpha_bound(n, big_d, *eps, *c, base).map_err(anyhow::Error::from)?;
                let params = format!("n={};D={};eps={};c={};log={base_name}", ff(n), ff(big_d), ff(*eps), ff(*c));
                rows.push(("alpha", params, b));
            } else {
                let consts = RatioConstants {
                    c: 1.0 / 18.0,
                    c_prime: *c_prime,
                    c_double_prime: *c_double_prime,
                };
                let (nodes, delta) = (need(*nodes, "--nodes")?, need(*delta, "--delta")?);
                let r = min_transmission_ratio(nodes, *eps, delta, &consts, &Grid::default(), base)
                    .map_err(anyhow::Error::from)?;
                let params = format!(
                    "N={};eps={};delta={};c_prime={};c_double_prime={};log={base_name}",
                    ff(nodes),
                    ff(*eps),
                    ff(delta),
                    ff(*c_prime),
                    ff(*c_double_prime)
                );
                rows.push(("min_s", params.clone(), r.s));
                rows.push(("min_s_grid_index", params, r.index as f64));
            }
            let mut text = String::from("bound,params,value\n");
            for (bound, params, value) in rows {
                text.push_str(&format!("{bound},{params},{}\n", ff(value)));
            }
            write_out(&cli.out, &text)?;
        }
        Command::Experiment { id, seeds } => {
            let cfg = match (&cli.config, id) {
                (Some(path), None) => ExperimentConfig::from_json(&read(path)?)
                    .with_context(|| format!("config {}", path.display()))?,
                (None, Some(id)) => {
                    let id: ExperimentId = id.parse().map_err(anyhow::Error::from)?;
                    let seeds = if seeds.is_empty() { vec![cli.seed] } else { seeds.clone() };
                    ExperimentConfig::new(id, seeds)
                }
                _ => return Err(anyhow!("give exactly one of --config and --id").into()),
            };
            let rows = run_experiment(&cfg).map_err(anyhow::Error::from)?;
            match cli.out.as_ref().or(cfg.output.as_ref()) {
                Some(path) => emit(&rows, path).map_err(anyhow::Error::from)?,
                None => print!("{}", to_csv(&rows)),
            }
            let bad = failures(&rows);
            eprintln!("{}: {} rows, {} failed", cfg.id(), rows.len(), bad.len());
            if !bad.is_empty() {
                return Err(Failure::Check(format!("{} rows failed their check", bad.len())));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Check(msg)) => {
            eprintln!("check failed: {msg}");
            ExitCode::from(2)
        }
    }
}
