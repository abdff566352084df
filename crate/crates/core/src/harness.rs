//! Experiment configurations, the scenarios E1–E8 and their CSV output.
//!
//! A configuration is a JSON object:
//!
//! ```json
//! {"experiment": "E3", "seeds": [], "output": "e3.csv",
//!  "params": {"mu": [20, 50, 100], "n": [1000, 10000]}}
//! ```
//!
//! `params` depends on the experiment (see the `*Params` types; every field
//! has a default) and unknown keys are rejected at every level. Rows are
//! computed in parallel but always emitted in a fixed order, so output is
//! byte-identical across runs and thread counts.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::advantage::{
    min_transmission_ratio, readonce_advantage, AdvantageError, Grid, LogBase, RatioConstants,
};
use crate::instances::{random_oblivious_tree, random_read_once_tree, tiny_protocol, TinyLimits};
use crate::noise::{iid_copies_law, regen_output_law, regen_table, total_variation, NoiseError, NoiseParam, RngStream};
use crate::planar::{
    check_bounded_counts, decompose, is_connected, sample_network, tessellate, threshold_radius,
    verify_decomposition, Graph, PlanarError,
};
use crate::protocol::builders::{cluster_sum, star_xor};
use crate::protocol::exact::{error_probability_exact, ExactOptions};
use crate::protocol::exec::error_probability_mc;
use crate::protocol::{BoolExpr, ProtocolError, Role};
use crate::reductions::{protocol_to_read_once, ChainOptions, ReductionError};
use crate::tree::rearrange::{is_rearrangement_of, move_to_root, reorder};
use crate::tree::TreeError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config line {line}, column {column}: {message}")]
    Config {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid parameter `{field}`: {message}")]
    Invalid { field: String, message: String },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("CSV line {line}: {message}")]
    Csv { line: u64, message: String },
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error(transparent)]
    Planar(#[from] PlanarError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Advantage(#[from] AdvantageError),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Reduction(#[from] ReductionError),
}

fn invalid(field: &str, message: impl Into<String>) -> HarnessError {
    HarnessError::Invalid {
        field: field.to_string(),
        message: message.into(),
    }
}

// ---------------------------------------------------------------------------
// Configuration

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ExperimentId {
    E1,
    E2,
    E3,
    E4,
    E5,
    E6,
    E7,
    E8,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 8] = [
        ExperimentId::E1,
        ExperimentId::E2,
        ExperimentId::E3,
        ExperimentId::E4,
        ExperimentId::E5,
        ExperimentId::E6,
        ExperimentId::E7,
        ExperimentId::E8,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentId::E1 => "E1",
            ExperimentId::E2 => "E2",
            ExperimentId::E3 => "E3",
            ExperimentId::E4 => "E4",
            ExperimentId::E5 => "E5",
            ExperimentId::E6 => "E6",
            ExperimentId::E7 => "E7",
            ExperimentId::E8 => "E8",
        }
    }

    /// Whether rows depend on seeds (and so need at least one).
    pub fn seeded(self) -> bool {
        !matches!(self, ExperimentId::E3 | ExperimentId::E4)
    }
}

impl std::str::FromStr for ExperimentId {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ExperimentId::ALL
            .into_iter()
            .find(|id| id.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| invalid("experiment", format!("unknown experiment `{s}` (E1..E8)")))
    }
}

impl std::fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// E1: connectivity of random planar networks as `R` varies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConnectivityParams {
    pub n: Vec<usize>,
    /// `R = c · sqrt(ln N / N)` for each `c`.
    pub radius_factors: Vec<f64>,
    /// Extra absolute radii.
    pub radii: Vec<f64>,
}

impl Default for ConnectivityParams {
    fn default() -> Self {
        ConnectivityParams {
            n: vec![2000],
            radius_factors: vec![0.5, 0.75, 1.0, 1.25, 1.5, 2.0],
            radii: vec![],
        }
    }
}

/// E2: decompositions under uniform transmission counts (`T = N`, one per node).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecompositionParams {
    pub n: Vec<usize>,
    /// `R = sqrt(c ln N / N)`.
    pub radius_constant: f64,
    /// Overrides the rule above when set.
    pub radius: Option<f64>,
}

impl Default for DecompositionParams {
    fn default() -> Self {
        DecompositionParams {
            n: vec![20000],
            radius_constant: 10.0,
            radius: None,
        }
    }
}

/// E3: `Pr[Bin(N, μ/N) ≤ μ/2]` against `exp(-0.15 μ)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChernoffParams {
    pub mu: Vec<f64>,
    /// Trial counts; pairs with `μ > N` are skipped.
    pub n: Vec<u64>,
}

impl Default for ChernoffParams {
    fn default() -> Self {
        ChernoffParams {
            mu: vec![20.0, 50.0, 100.0, 200.0],
            n: vec![400, 1000, 10_000, 100_000],
        }
    }
}

/// E4: exact law of regenerated copies against iid noisy copies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegenParams {
    pub t: Vec<usize>,
    pub epsilon: Vec<f64>,
    pub tolerance: f64,
}

impl Default for RegenParams {
    fn default() -> Self {
        RegenParams {
            t: vec![1, 2, 3, 4],
            epsilon: vec![0.05, 0.1, 0.2, 0.3, 0.45],
            tolerance: 1e-12,
        }
    }
}

/// E5: the protocol-to-tree chain on random tiny protocols.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChainParams {
    /// Instances per seed.
    pub instances: u64,
    pub limits: TinyLimits,
    pub chain: ChainOptions,
    /// Tolerance on the simulation and leaf-law checks.
    pub tv_tolerance: f64,
}

impl Default for ChainParams {
    fn default() -> Self {
        ChainParams {
            instances: 200,
            limits: TinyLimits::default(),
            chain: ChainOptions::default(),
            tv_tolerance: 1e-12,
        }
    }
}

/// E6: move-to-root and reordering on random oblivious trees.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RearrangeParams {
    /// Trees per seed.
    pub trees: u64,
    pub max_blocks: usize,
    pub max_depth: usize,
    pub tolerance: f64,
}

impl Default for RearrangeParams {
    fn default() -> Self {
        RearrangeParams {
            trees: 200,
            max_blocks: 3,
            max_depth: 6,
            tolerance: 1e-9,
        }
    }
}

/// E7: read-once trees against the product of their query advantages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProductParams {
    /// Trees per seed (each index gives one general and one branch-uniform tree).
    pub trees: u64,
    pub max_blocks: usize,
    pub tolerance: f64,
}

impl Default for ProductParams {
    fn default() -> Self {
        ProductParams {
            trees: 200,
            max_blocks: 4,
            tolerance: 1e-9,
        }
    }
}

/// Grid of the transmission-ratio search in E8.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RatioParams {
    pub epsilon: f64,
    pub delta: f64,
    /// `N = 2^(2^m)` for each `m`.
    pub m: Vec<u32>,
    pub constants: RatioConstants,
    pub grid: Grid,
    pub log_base: LogBase,
}

impl Default for RatioParams {
    fn default() -> Self {
        RatioParams {
            epsilon: 0.1,
            delta: 0.1,
            m: vec![3, 4, 5, 6],
            constants: RatioConstants::default(),
            grid: Grid::default(),
            log_base: LogBase::Two,
        }
    }
}

/// E8: error against transmission budget for repetition and cluster
/// protocols, plus the minimal transmission ratio as `N` grows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BudgetParams {
    pub epsilon: f64,
    /// Leaves of the repetition star.
    pub leaves: usize,
    /// Repetitions per leaf.
    pub reps: Vec<usize>,
    /// Input nodes on the cluster path.
    pub cluster_inputs: usize,
    pub cluster_reps: Vec<usize>,
    /// Monte Carlo trials per input and seed; 0 skips sampling.
    pub trials: u64,
    /// Width of the Monte Carlo acceptance band in standard deviations.
    pub sigmas: f64,
    pub tolerance: f64,
    pub ratio: RatioParams,
}

impl Default for BudgetParams {
    fn default() -> Self {
        BudgetParams {
            epsilon: 0.1,
            leaves: 2,
            reps: vec![1, 2, 3, 4, 5],
            cluster_inputs: 4,
            cluster_reps: vec![1, 2, 3],
            trials: 20_000,
            sigmas: 3.0,
            tolerance: 1e-12,
            ratio: RatioParams::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ExperimentParams {
    E1(ConnectivityParams),
    E2(DecompositionParams),
    E3(ChernoffParams),
    E4(RegenParams),
    E5(ChainParams),
    E6(RearrangeParams),
    E7(ProductParams),
    E8(BudgetParams),
}

impl ExperimentParams {
    pub fn default_for(id: ExperimentId) -> Self {
        match id {
            ExperimentId::E1 => ExperimentParams::E1(Default::default()),
            ExperimentId::E2 => ExperimentParams::E2(Default::default()),
            ExperimentId::E3 => ExperimentParams::E3(Default::default()),
            ExperimentId::E4 => ExperimentParams::E4(Default::default()),
            ExperimentId::E5 => ExperimentParams::E5(Default::default()),
            ExperimentId::E6 => ExperimentParams::E6(Default::default()),
            ExperimentId::E7 => ExperimentParams::E7(Default::default()),
            ExperimentId::E8 => ExperimentParams::E8(Default::default()),
        }
    }

    pub fn id(&self) -> ExperimentId {
        match self {
            ExperimentParams::E1(_) => ExperimentId::E1,
            ExperimentParams::E2(_) => ExperimentId::E2,
            ExperimentParams::E3(_) => ExperimentId::E3,
            ExperimentParams::E4(_) => ExperimentId::E4,
            ExperimentParams::E5(_) => ExperimentId::E5,
            ExperimentParams::E6(_) => ExperimentId::E6,
            ExperimentParams::E7(_) => ExperimentId::E7,
            ExperimentParams::E8(_) => ExperimentId::E8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub seeds: Vec<u64>,
    pub output: Option<PathBuf>,
    pub params: ExperimentParams,
}

#[derive(Deserialize)]
struct Header {
    experiment: ExperimentId,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile<P> {
    experiment: ExperimentId,
    #[serde(default)]
    seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    output: Option<PathBuf>,
    #[serde(default)]
    params: P,
}

fn located(e: serde_json::Error) -> HarnessError {
    HarnessError::Config {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    }
}

fn parse_file<P: DeserializeOwned + Default>(text: &str) -> Result<(Vec<u64>, Option<PathBuf>, P), HarnessError> {
    let f: ConfigFile<P> = serde_json::from_str(text).map_err(located)?;
    Ok((f.seeds, f.output, f.params))
}

/// First line mentioning `"key"`, for locating range errors.
fn line_of(text: &str, field: &str) -> usize {
    let key = field.rsplit('.').next().unwrap_or(field);
    let quoted = format!("\"{key}\"");
    text.lines()
        .position(|l| l.contains(&quoted))
        .map(|i| i + 1)
        .unwrap_or(1)
}

impl ExperimentConfig {
    pub fn new(id: ExperimentId, seeds: Vec<u64>) -> Self {
        ExperimentConfig {
            seeds,
            output: None,
            params: ExperimentParams::default_for(id),
        }
    }

    pub fn id(&self) -> ExperimentId {
        self.params.id()
    }

    /// Parses and validates a configuration; errors carry the line of the
    /// offending key.
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let header: Header = serde_json::from_str(text).map_err(located)?;
        macro_rules! typed {
            ($variant:ident) => {{
                let (seeds, output, p) = parse_file(text)?;
                ExperimentConfig {
                    seeds,
                    output,
                    params: ExperimentParams::$variant(p),
                }
            }};
        }
        let cfg = match header.experiment {
            ExperimentId::E1 => typed!(E1),
            ExperimentId::E2 => typed!(E2),
            ExperimentId::E3 => typed!(E3),
            ExperimentId::E4 => typed!(E4),
            ExperimentId::E5 => typed!(E5),
            ExperimentId::E6 => typed!(E6),
            ExperimentId::E7 => typed!(E7),
            ExperimentId::E8 => typed!(E8),
        };
        cfg.validate().map_err(|e| match e {
            HarnessError::Invalid { field, message } => HarnessError::Config {
                line: line_of(text, &field),
                column: 1,
                message: format!("`{field}`: {message}"),
            },
            other => other,
        })?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        fn file<P: Serialize>(c: &ExperimentConfig, p: &P) -> String {
            let f = ConfigFile {
                experiment: c.id(),
                seeds: c.seeds.clone(),
                output: c.output.clone(),
                params: p,
            };
            serde_json::to_string_pretty(&f).expect("configs serialise")
        }
        match &self.params {
            ExperimentParams::E1(p) => file(self, p),
            ExperimentParams::E2(p) => file(self, p),
            ExperimentParams::E3(p) => file(self, p),
            ExperimentParams::E4(p) => file(self, p),
            ExperimentParams::E5(p) => file(self, p),
            ExperimentParams::E6(p) => file(self, p),
            ExperimentParams::E7(p) => file(self, p),
            ExperimentParams::E8(p) => file(self, p),
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let needs_seeds = match &self.params {
            ExperimentParams::E8(p) => p.trials > 0,
            _ => self.id().seeded(),
        };
        if needs_seeds && self.seeds.is_empty() {
            return Err(invalid("seeds", "this experiment needs at least one seed"));
        }
        let eps_ok = |e: f64| e > 0.0 && e < 0.5;
        let positive = |v: f64| v.is_finite() && v > 0.0;
        match &self.params {
            ExperimentParams::E1(p) => {
                if p.n.is_empty() || p.n.iter().any(|&n| n < 2) {
                    return Err(invalid("params.n", "need network sizes of at least 2"));
                }
                if p.radius_factors.is_empty() && p.radii.is_empty() {
                    return Err(invalid("params.radius_factors", "no radii to sweep"));
                }
                if p.radius_factors.iter().chain(&p.radii).any(|&r| !(r.is_finite() && r >= 0.0)) {
                    return Err(invalid("params.radii", "radii must be finite and non-negative"));
                }
            }
            ExperimentParams::E2(p) => {
                if p.n.is_empty() || p.n.iter().any(|&n| n < 2) {
                    return Err(invalid("params.n", "need network sizes of at least 2"));
                }
                if !positive(p.radius_constant) {
                    return Err(invalid("params.radius_constant", "must be positive"));
                }
                if let Some(r) = p.radius {
                    if !(r > 0.0 && r <= 1.0) {
                        return Err(invalid("params.radius", "must lie in (0, 1]"));
                    }
                }
            }
            ExperimentParams::E3(p) => {
                if p.mu.is_empty() || p.mu.iter().any(|&m| !positive(m)) {
                    return Err(invalid("params.mu", "need positive means"));
                }
                if p.n.is_empty() || p.n.contains(&0) {
                    return Err(invalid("params.n", "need positive trial counts"));
                }
            }
            ExperimentParams::E4(p) => {
                if p.t.is_empty() || p.t.iter().any(|&t| t == 0 || t > 16) {
                    return Err(invalid("params.t", "copy counts must lie in 1..=16"));
                }
                if p.epsilon.is_empty() || p.epsilon.iter().any(|&e| !eps_ok(e)) {
                    return Err(invalid("params.epsilon", "noise rates must lie in (0, 1/2)"));
                }
            }
            ExperimentParams::E5(p) => {
                let l = &p.limits;
                if l.max_blocks == 0 || l.max_n == 0 || l.max_transmissions == 0 {
                    return Err(invalid("params.limits", "limits must be positive"));
                }
                if !(0.0..=1.0).contains(&l.rand_prob) {
                    return Err(invalid("params.rand_prob", "must lie in [0, 1]"));
                }
            }
            ExperimentParams::E6(p) => {
                if p.max_blocks == 0 || p.max_depth == 0 {
                    return Err(invalid("params.max_depth", "limits must be positive"));
                }
            }
            ExperimentParams::E7(p) => {
                if p.max_blocks == 0 {
                    return Err(invalid("params.max_blocks", "must be positive"));
                }
            }
            ExperimentParams::E8(p) => {
                if !eps_ok(p.epsilon) {
                    return Err(invalid("params.epsilon", "must lie in (0, 1/2)"));
                }
                if p.leaves == 0 || p.reps.contains(&0) || p.cluster_reps.contains(&0) {
                    return Err(invalid("params.reps", "repetition counts must be positive"));
                }
                if !p.cluster_reps.is_empty() && p.cluster_inputs == 0 {
                    return Err(invalid("params.cluster_inputs", "must be positive"));
                }
                if !eps_ok(p.ratio.epsilon) {
                    return Err(invalid("params.ratio.epsilon", "must lie in (0, 1/2)"));
                }
                if p.ratio.m.iter().any(|&m| m > 10) {
                    return Err(invalid("params.ratio.m", "N = 2^(2^m) needs m <= 10"));
                }
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Rows and CSV

pub const CSV_HEADER: [&str; 9] = [
    "experiment",
    "metric",
    "params",
    "value",
    "reference",
    "ci_low",
    "ci_high",
    "pass",
    "seed",
];

/// Bumped whenever the column set or a metric's meaning changes.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub experiment: ExperimentId,
    pub metric: String,
    /// `key=value` pairs joined by `;`.
    pub params: String,
    pub value: f64,
    pub reference: Option<f64>,
    pub ci: Option<(f64, f64)>,
    pub pass: Option<bool>,
    pub seed: Option<u64>,
}

impl ResultRow {
    fn new(experiment: ExperimentId, metric: &str, params: String, value: f64) -> Self {
        ResultRow {
            experiment,
            metric: metric.to_string(),
            params,
            value,
            reference: None,
            ci: None,
            pass: None,
            seed: None,
        }
    }

    fn reference(mut self, r: f64) -> Self {
        self.reference = Some(r);
        self
    }

    fn ci(mut self, lo: f64, hi: f64) -> Self {
        self.ci = Some((lo, hi));
        self
    }

    fn pass(mut self, p: bool) -> Self {
        self.pass = Some(p);
        self
    }

    fn seed(mut self, s: u64) -> Self {
        self.seed = Some(s);
        self
    }

    /// The row as it reads back from CSV (floats at 12 significant digits).
    pub fn rounded(&self) -> Self {
        let r = |x: f64| format_float(x).parse::<f64>().expect("formatted floats parse");
        ResultRow {
            value: r(self.value),
            reference: self.reference.map(r),
            ci: self.ci.map(|(a, b)| (r(a), r(b))),
            ..self.clone()
        }
    }
}

/// `printf("%.12g")`.
pub fn format_float(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf" } else { "-inf" }.into();
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0" } else { "0" }.into();
    }
    let sci = format!("{x:.11e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    let trim = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if !(-4..12).contains(&exp) {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim(mantissa), exp.abs())
    } else {
        trim(&format!("{x:.*}", (11 - exp) as usize))
    }
}

fn opt_float(x: Option<f64>) -> String {
    x.map(format_float).unwrap_or_default()
}

/// The rows as CSV text, header included.
pub fn to_csv(rows: &[ResultRow]) -> String {
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    w.write_record(CSV_HEADER).expect("in-memory write");
    for r in rows {
        w.write_record([
            r.experiment.name().to_string(),
            r.metric.clone(),
            r.params.clone(),
            format_float(r.value),
            opt_float(r.reference),
            opt_float(r.ci.map(|c| c.0)),
            opt_float(r.ci.map(|c| c.1)),
            r.pass.map(|p| p.to_string()).unwrap_or_default(),
            r.seed.map(|s| s.to_string()).unwrap_or_default(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("CSV is UTF-8")
}

pub fn emit(rows: &[ResultRow], path: &Path) -> Result<(), HarnessError> {
    std::fs::write(path, to_csv(rows)).map_err(|e| HarnessError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

pub fn parse_csv(text: &str) -> Result<Vec<ResultRow>, HarnessError> {
    let mut rd = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let header = rd.headers().map_err(|e| HarnessError::Csv {
        line: 1,
        message: e.to_string(),
    })?;
    if header.iter().ne(CSV_HEADER) {
        return Err(HarnessError::Csv {
            line: 1,
            message: format!("expected header `{}`", CSV_HEADER.join(",")),
        });
    }
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(|e| HarnessError::Csv {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let bad = |message: String| HarnessError::Csv { line, message };
        let float = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("`{s}`: {e}")));
        let opt = |s: &str| if s.is_empty() { Ok(None) } else { float(s).map(Some) };
        let ci = match (opt(&rec[5])?, opt(&rec[6])?) {
            (Some(a), Some(b)) => Some((a, b)),
            (None, None) => None,
            _ => return Err(bad("half an interval".into())),
        };
        rows.push(ResultRow {
            experiment: rec[0].parse().map_err(|e: HarnessError| bad(e.to_string()))?,
            metric: rec[1].to_string(),
            params: rec[2].to_string(),
            value: float(&rec[3])?,
            reference: opt(&rec[4])?,
            ci,
            pass: match &rec[7] {
                "" => None,
                "true" => Some(true),
                "false" => Some(false),
                other => return Err(bad(format!("pass must be true/false, got `{other}`"))),
            },
            seed: match &rec[8] {
                "" => None,
                s => Some(s.parse().map_err(|e| bad(format!("seed `{s}`: {e}")))?),
            },
        });
    }
    Ok(rows)
}

/// Rows that carry a verdict and failed it.
pub fn failures(rows: &[ResultRow]) -> Vec<&ResultRow> {
    rows.iter().filter(|r| r.pass == Some(false)).collect()
}

// ---------------------------------------------------------------------------
// Experiments

struct Params(String);

impl Params {
    fn new() -> Self {
        Params(String::new())
    }

    fn f(mut self, key: &str, v: f64) -> Self {
        self.sep();
        let _ = write!(self.0, "{key}={}", format_float(v));
        self
    }

    fn u(mut self, key: &str, v: impl std::fmt::Display) -> Self {
        self.sep();
        let _ = write!(self.0, "{key}={v}");
        self
    }

    fn sep(&mut self) {
        if !self.0.is_empty() {
            self.0.push(';');
        }
    }

    fn done(self) -> String {
        self.0
    }
}

/// Runs one experiment. Rows come in a fixed order for a given config.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>, HarnessError> {
    cfg.validate()?;
    match &cfg.params {
        ExperimentParams::E1(p) => Ok(connectivity(p, &cfg.seeds)),
        ExperimentParams::E2(p) => Ok(decomposition(p, &cfg.seeds)),
        ExperimentParams::E3(p) => Ok(chernoff(p)),
        ExperimentParams::E4(p) => regeneration(p),
        ExperimentParams::E5(p) => chain_suite(p, &cfg.seeds),
        ExperimentParams::E6(p) => rearrangement(p, &cfg.seeds),
        ExperimentParams::E7(p) => product(p, &cfg.seeds),
        ExperimentParams::E8(p) => budget(p, &cfg.seeds),
    }
}

/// The stream a network of `n` nodes is drawn from; shared with the CLI so a
/// row's seed regenerates its network.
pub fn network_stream(seed: u64, n: usize) -> RngStream {
    RngStream::keyed(seed, "network", &[n as u64])
}

fn connectivity(p: &ConnectivityParams, seeds: &[u64]) -> Vec<ResultRow> {
    let mut jobs = Vec::new();
    for &n in &p.n {
        let base = threshold_radius(n, 1.0);
        let radii = p.radius_factors.iter().map(|&c| (Some(c), c * base));
        let radii = radii.chain(p.radii.iter().map(|&r| (None, r)));
        for (factor, r) in radii {
            for &s in seeds {
                jobs.push((n, factor, r, s));
            }
        }
    }
    jobs.par_iter()
        .map(|&(n, factor, r, s)| {
            let net = sample_network(n, r, &mut network_stream(s, n));
            let mut params = Params::new().u("N", n).f("R", r);
            if let Some(c) = factor {
                params = params.f("c", c);
            }
            let params = params.done();
            let connected = is_connected(&net);
            let comps = net.graph().components();
            let count = comps.iter().copied().max().map(|m| m + 1).unwrap_or(0);
            let mut row = ResultRow::new(ExperimentId::E1, "connected", params.clone(), connected as u8 as f64).seed(s);
            if r == 0.0 && n >= 2 {
                row = row.reference(0.0).pass(!connected);
            }
            vec![
                row,
                ResultRow::new(ExperimentId::E1, "components", params, count as f64).seed(s),
            ]
        })
        .collect::<Vec<_>>()
        .concat()
}

fn decomposition(p: &DecompositionParams, seeds: &[u64]) -> Vec<ResultRow> {
    let jobs: Vec<(usize, u64)> = p.n.iter().flat_map(|&n| seeds.iter().map(move |&s| (n, s))).collect();
    jobs.par_iter()
        .map(|&(n, s)| {
            let r = p
                .radius
                .unwrap_or_else(|| (p.radius_constant * (n as f64).ln() / n as f64).sqrt());
            let params = Params::new().u("N", n).f("R", r).u("T", n).done();
            let row = |metric: &str, v: f64| ResultRow::new(ExperimentId::E2, metric, params.clone(), v).seed(s);
            let net = sample_network(n, r, &mut network_stream(s, n));
            let counts = vec![1u64; n];
            let total = n as u64;
            let dec = match decompose(&net, &counts, total) {
                Ok(d) => d,
                Err(_) => return vec![row("success", 0.0).pass(false)],
            };
            let m = tessellate(&net).map(|t| t.cell_count()).unwrap_or(1) as f64;
            let structure = verify_decomposition(net.graph(), &dec);
            let bounded = check_bounded_counts(&counts, &dec, dec.d, dec.big_d);
            let t = total as f64;
            let flag = |b: bool| b as u8 as f64;
            let n_floor = n as f64 * r * r / 4.0;
            vec![
                row("success", 1.0).pass(true),
                row("p1", flag(structure.p1)).pass(structure.p1),
                row("p2", flag(structure.p2)).pass(structure.p2),
                row("partition", flag(structure.partition)).pass(structure.partition),
                row("p3", flag(bounded.p3)).pass(bounded.p3),
                row("p4", flag(bounded.p4)).pass(bounded.p4),
                row("cells", m),
                row("n", dec.n as f64)
                    .reference(n_floor)
                    .pass(dec.n as f64 >= n_floor && dec.n == n.div_ceil(4 * m as usize)),
                row("k", dec.k as f64).reference(m / 18.0).pass(dec.k as f64 >= m / 18.0),
                row("D", dec.big_d).reference(18.0 * t / m).pass(dec.big_d == 18.0 * t / m),
                row("d", dec.d).reference(72.0 * t / n as f64).pass(dec.d <= 72.0 * t / n as f64),
            ]
        })
        .collect::<Vec<_>>()
        .concat()
}

fn chernoff(p: &ChernoffParams) -> Vec<ResultRow> {
    let mut rows = Vec::new();
    for &mu in &p.mu {
        for &n in &p.n {
            if mu > n as f64 {
                continue;
            }
            let prob = mu / n as f64;
            let k = (mu / 2.0).floor() as u64;
            let tail = crate::planar::binomial_lower_tail(n, prob, k);
            let bound = crate::planar::chernoff_bound(mu);
            let params = Params::new().f("mu", mu).u("N", n).f("p", prob).done();
            rows.push(
                ResultRow::new(ExperimentId::E3, "lower_tail", params, tail)
                    .reference(bound)
                    .pass(tail <= bound),
            );
        }
    }
    rows
}

fn regeneration(p: &RegenParams) -> Result<Vec<ResultRow>, HarnessError> {
    let mut rows = Vec::new();
    for &t in &p.t {
        for &eps in &p.epsilon {
            let table = regen_table(t, NoiseParam::new(eps)?)?;
            for b in [false, true] {
                let tv = total_variation(&regen_output_law(&table, b), &iid_copies_law(b, t, eps));
                let params = Params::new().u("t", t).f("eps", eps).u("b", b as u8).done();
                rows.push(
                    ResultRow::new(ExperimentId::E4, "tv", params, tv)
                        .reference(0.0)
                        .pass(tv <= p.tolerance),
                );
            }
        }
    }
    Ok(rows)
}

fn chain_suite(p: &ChainParams, seeds: &[u64]) -> Result<Vec<ResultRow>, HarnessError> {
    let jobs: Vec<(u64, u64)> = seeds
        .iter()
        .flat_map(|&s| (0..p.instances).map(move |i| (s, i)))
        .collect();
    let rows = jobs
        .par_iter()
        .map(|&(s, i)| -> Result<Vec<ResultRow>, HarnessError> {
            let inst = tiny_protocol(s, i, &p.limits);
            let chain = protocol_to_read_once(&inst.protocol, &inst.mu, &p.chain)?;
            let r = &chain.report;
            let params = Params::new()
                .u("instance", i)
                .u("nodes", inst.protocol.node_count())
                .u("T", inst.protocol.len())
                .u("noise_bits", inst.protocol.noise_bit_count())
                .done();
            let row = |metric: &str, v: f64| ResultRow::new(ExperimentId::E5, metric, params.clone(), v).seed(s);
            let names = [
                "adv_protocol",
                "adv_semi_noisy",
                "adv_noisy_copy_randomized",
                "adv_noisy_copy",
                "adv_xnd",
                "adv_ordered",
                "adv_read_once",
            ];
            let mut out: Vec<ResultRow> = names
                .iter()
                .zip(r.advantages.as_vec())
                .map(|(name, a)| row(name, a))
                .collect();
            out.push(row("monotone", r.monotone as u8 as f64).pass(r.monotone));
            for (metric, tv) in [("simulation_tv", r.simulation_tv), ("tree_tv", r.tree_tv)] {
                if let Some(tv) = tv {
                    out.push(row(metric, tv).reference(0.0).pass(tv <= p.tv_tolerance));
                }
            }
            let read_once = chain.read_once.is_read_once();
            out.push(row("read_once", read_once as u8 as f64).pass(read_once));
            Ok(out)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(rows.concat())
}

fn rearrangement(p: &RearrangeParams, seeds: &[u64]) -> Result<Vec<ResultRow>, HarnessError> {
    let jobs: Vec<(u64, u64)> = seeds.iter().flat_map(|&s| (0..p.trees).map(move |i| (s, i))).collect();
    let tol = p.tolerance;
    let rows = jobs
        .par_iter()
        .map(|&(s, i)| -> Result<Vec<ResultRow>, HarnessError> {
            let movable = random_oblivious_tree(s, i, p.max_blocks, p.max_depth, true);
            let levels = movable.level_blocks().ok_or(TreeError::NotOblivious)?;
            let last = *levels.last().expect("trees have a level");
            let seg = levels.iter().rev().take_while(|&&b| b == last).count();
            let m = move_to_root(&movable, seg)?;
            let post = m.output_advantage >= m.input_advantage - tol
                && m.witness_value >= m.input_advantage - tol
                && m.output_advantage >= m.witness_value - tol
                && is_rearrangement_of(&m.tree, &movable);
            let params = Params::new()
                .u("tree", i)
                .u("blocks", movable.block_count())
                .u("depth", movable.depth())
                .done();
            let row = |metric: &str, v: f64| ResultRow::new(ExperimentId::E6, metric, params.clone(), v).seed(s);
            let mut out = vec![row("move_to_root_gain", m.output_advantage - m.input_advantage).pass(post)];

            let t = random_oblivious_tree(s, i, p.max_blocks, p.max_depth, false);
            let before = t.advantage();
            let r = reorder(&t)?;
            let alternations = r.tree.alternations()?.len();
            let counts = r.tree.queries_per_block()? == t.queries_per_block()?;
            let gain = r.tree.advantage() - before;
            out.push(row("reorder_alternations", alternations as f64).reference(0.0).pass(alternations == 0));
            out.push(row("reorder_counts", counts as u8 as f64).pass(counts));
            out.push(row("reorder_gain", gain).reference(0.0).pass(gain >= -tol));
            out.push(row("reorder_steps", r.steps.len() as f64));
            Ok(out)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(rows.concat())
}

fn product(p: &ProductParams, seeds: &[u64]) -> Result<Vec<ResultRow>, HarnessError> {
    let jobs: Vec<(u64, u64)> = seeds.iter().flat_map(|&s| (0..p.trees).map(move |i| (s, i))).collect();
    let tol = p.tolerance;
    let rows = jobs
        .par_iter()
        .map(|&(s, i)| -> Result<Vec<ResultRow>, HarnessError> {
            let mut out = Vec::new();
            for uniform in [false, true] {
                let t = random_read_once_tree(s, i, p.max_blocks, uniform);
                let rep = readonce_advantage(&t)?;
                let adv = rep.estimate.value;
                let params = Params::new()
                    .u("tree", i)
                    .u("blocks", t.block_count())
                    .u("branch_uniform", uniform)
                    .done();
                let row = |metric: &str, v: f64| ResultRow::new(ExperimentId::E7, metric, params.clone(), v).seed(s);
                out.push(row("max_power_bound", adv).reference(rep.max_power).pass(adv <= rep.max_power + tol));
                if uniform {
                    out.push(row("product", adv).reference(rep.product).pass((adv - rep.product).abs() <= tol));
                } else {
                    out.push(row("product_bound", adv).reference(rep.product).pass(adv <= rep.product + tol));
                }
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(rows.concat())
}

/// `(Pr[Bin(r, ε) > r/2], Pr[Bin(r, ε) = r/2])`.
fn majority_flip(r: usize, eps: f64) -> (f64, f64) {
    let mut upper = 0.0;
    let mut tie = 0.0;
    let mut binom = 1.0f64;
    for j in 0..=r {
        if j > 0 {
            binom = binom * (r - j + 1) as f64 / j as f64;
        }
        let pmf = binom * eps.powi(j as i32) * (1.0 - eps).powi((r - j) as i32);
        if 2 * j > r {
            upper += pmf;
        } else if 2 * j == r {
            tie += pmf;
        }
    }
    (upper, tie)
}

/// Analytic worst-input error of the repetition star: each leaf is decoded
/// by majority (ties read 0), the centre XORs the decoded bits.
pub fn repetition_star_error(leaves: usize, r: usize, eps: f64) -> f64 {
    let (upper, tie) = majority_flip(r, eps);
    (0..=leaves)
        .map(|ones| {
            // Flip probability is `upper` for a 0 bit and `upper + tie` for a 1 bit.
            let keep = (1.0 - 2.0 * upper).powi((leaves - ones) as i32)
                * (1.0 - 2.0 * (upper + tie)).powi(ones as i32);
            (1.0 - keep) / 2.0
        })
        .fold(0.0, f64::max)
}

fn budget(p: &BudgetParams, seeds: &[u64]) -> Result<Vec<ResultRow>, HarnessError> {
    let eps = p.epsilon;
    let opts = ExactOptions::default();
    let mut rows = Vec::new();
    let parity = BoolExpr::parity(p.leaves);
    for &r in &p.reps {
        let proto = star_xor(p.leaves, r, eps)?;
        let exact = error_probability_exact(&proto, &parity, &opts)?;
        let reference = repetition_star_error(p.leaves, r, eps);
        let params = Params::new()
            .u("leaves", p.leaves)
            .u("r", r)
            .f("eps", eps)
            .u("T", proto.len())
            .done();
        rows.push(
            ResultRow::new(ExperimentId::E8, "repetition_error", params.clone(), exact.worst)
                .reference(reference)
                .pass((exact.worst - reference).abs() <= p.tolerance),
        );
        if p.trials > 0 {
            let worst_x = proto.all_inputs()[exact.worst_input].clone();
            let mc: Vec<ResultRow> = seeds
                .par_iter()
                .map(|&s| -> Result<ResultRow, HarnessError> {
                    let est = error_probability_mc(&proto, &parity, std::slice::from_ref(&worst_x), p.trials, s, 0.95)?;
                    let e = &est.per_input[0];
                    let sd = (exact.worst * (1.0 - exact.worst) / p.trials as f64).sqrt();
                    Ok(ResultRow::new(ExperimentId::E8, "repetition_error_mc", params.clone(), e.estimate)
                        .reference(exact.worst)
                        .ci(e.ci_low, e.ci_high)
                        .pass((e.estimate - exact.worst).abs() <= p.sigmas * sd)
                        .seed(s))
                })
                .collect::<Result<_, _>>()?;
            rows.extend(mc);
        }
    }

    if !p.cluster_reps.is_empty() {
        // Path 0 - 1 - ... - c with an auxiliary root at 0.
        let c = p.cluster_inputs;
        let edges: Vec<(usize, usize)> = (0..c).map(|v| (v, v + 1)).collect();
        let graph = Graph::from_edges(c + 1, &edges);
        let mut roles = vec![Role::Input { block: 0 }; c + 1];
        roles[0] = Role::Aux {
            fixed: false,
            block: Some(0),
        };
        let f = BoolExpr::parity(c);
        for &r in &p.cluster_reps {
            let proto = cluster_sum(&graph, &roles, r, r, eps)?;
            let exact = error_probability_exact(&proto, &f, &opts)?;
            let params = Params::new()
                .u("inputs", c)
                .u("r", r)
                .f("eps", eps)
                .u("T", proto.len())
                .done();
            rows.push(ResultRow::new(ExperimentId::E8, "cluster_error", params, exact.worst));
        }
    }

    let rp = &p.ratio;
    let mut prev: Option<f64> = None;
    for &m in &rp.m {
        let n = 2f64.powi(2i32.pow(m));
        let res = min_transmission_ratio(n, rp.epsilon, rp.delta, &rp.constants, &rp.grid, rp.log_base)?;
        let params = Params::new()
            .u("m", m)
            .f("N", n)
            .f("eps", rp.epsilon)
            .f("delta", rp.delta)
            .f("C1", rp.constants.c_prime)
            .f("C2", rp.constants.c_double_prime)
            .done();
        let ok = prev.is_none_or(|q| res.s >= q);
        prev = Some(res.s);
        rows.push(ResultRow::new(ExperimentId::E8, "min_ratio", params, res.s).pass(ok));
    }
    Ok(rows)
}
