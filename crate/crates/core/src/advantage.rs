//! The advantage functional, its exact and sampled evaluation, the read-once
//! product bound, sensitivity, and closed-form bound evaluators.
//!
//! For a channel `P(c | x)`, a target `f: {0,1}^m → ±1` and an input law `μ`,
//! `adv_{f,μ} = max_{a: C → [−1,1]} |E[f(X) a(C)]| = Σ_c |Σ_x μ(x) f(x) P(c|x)|`,
//! attained by `a(c) = sign(Σ_x μ(x) f(x) P(c|x))`.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::noise::{BitVector, RngStream};
use crate::protocol::{exact_channel, BoolExpr, Channel, ExactOptions, Outcome, Protocol, ProtocolError};
use crate::tree::DecisionTree;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdvantageError {
    #[error("{what} = {value} is outside its domain {domain}")]
    Domain {
        what: &'static str,
        value: f64,
        domain: &'static str,
    },
    #[error("enumeration over {bits} bits exceeds the cap of {cap}")]
    SupportTooLarge { bits: usize, cap: usize },
    #[error("invalid distribution: {0}")]
    Distribution(String),
    #[error("{0}")]
    Mismatch(String),
    #[error("tree is not read-once")]
    NotReadOnce,
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

fn domain(what: &'static str, value: f64, domain: &'static str) -> AdvantageError {
    AdvantageError::Domain { what, value, domain }
}

/// Largest input width enumerated exactly.
pub const MAX_BITS: usize = 20;

// ---------------------------------------------------------------------------
// Distributions

/// A law on `{0,1}^m`, stored densely; entry `i` is the mass of
/// `BitVector::from_index(i, m)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Distribution {
    bits: usize,
    probs: Vec<f64>,
}

/// File form of a [`Distribution`].
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DistributionSpec {
    Uniform { bits: usize },
    MuStar { bits: usize },
    /// Explicit support; keys are bit strings, bit `j` is character `j`.
    Table { bits: usize, support: BTreeMap<String, f64> },
    /// Independent blocks, concatenated in order.
    Product { blocks: Vec<DistributionSpec> },
    /// `count` independent copies of `block`.
    Power { block: Box<DistributionSpec>, count: usize },
}

impl DistributionSpec {
    pub fn build(&self) -> Result<Distribution, AdvantageError> {
        match self {
            DistributionSpec::Uniform { bits } => Distribution::uniform(*bits),
            DistributionSpec::MuStar { bits } => Distribution::mu_star(*bits),
            DistributionSpec::Table { bits, support } => {
                let entries = support
                    .iter()
                    .map(|(k, &p)| {
                        k.parse::<BitVector>()
                            .map(|x| (x, p))
                            .map_err(|e| AdvantageError::Distribution(e.to_string()))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                Distribution::from_table(*bits, &entries)
            }
            DistributionSpec::Product { blocks } => {
                let parts = blocks.iter().map(|b| b.build()).collect::<Result<Vec<_>, _>>()?;
                Distribution::product(&parts)
            }
            DistributionSpec::Power { block, count } => block.build()?.power(*count),
        }
    }
}

impl Distribution {
    fn check_bits(bits: usize) -> Result<(), AdvantageError> {
        if bits > MAX_BITS {
            return Err(AdvantageError::SupportTooLarge { bits, cap: MAX_BITS });
        }
        Ok(())
    }

    /// Checks non-negativity and total mass within `1e−12`.
    pub fn new(bits: usize, probs: Vec<f64>) -> Result<Self, AdvantageError> {
        Self::check_bits(bits)?;
        if probs.len() != 1 << bits {
            return Err(AdvantageError::Distribution(format!(
                "{} entries for {bits} bits",
                probs.len()
            )));
        }
        if probs.iter().any(|&p| !(p >= 0.0)) {
            return Err(AdvantageError::Distribution("negative or NaN mass".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(AdvantageError::Distribution(format!("total mass {total}")));
        }
        Ok(Distribution { bits, probs })
    }

    pub fn uniform(bits: usize) -> Result<Self, AdvantageError> {
        Self::check_bits(bits)?;
        let m = 1usize << bits;
        Ok(Distribution {
            bits,
            probs: vec![1.0 / m as f64; m],
        })
    }

    /// `μ*(0^n) = 1/2` and `μ*(e) = 1/(2n)` on each weight-one string.
    pub fn mu_star(n: usize) -> Result<Self, AdvantageError> {
        if n == 0 {
            return Err(domain("n", 0.0, "n >= 1"));
        }
        Self::check_bits(n)?;
        let mut probs = vec![0.0; 1 << n];
        probs[0] = 0.5;
        for j in 0..n {
            probs[1 << j] = 0.5 / n as f64;
        }
        Ok(Distribution { bits: n, probs })
    }

    /// Entries not listed get mass 0; repeated entries add up.
    pub fn from_table(bits: usize, entries: &[(BitVector, f64)]) -> Result<Self, AdvantageError> {
        Self::check_bits(bits)?;
        let mut probs = vec![0.0; 1 << bits];
        for (x, p) in entries {
            if x.len() != bits {
                return Err(AdvantageError::Distribution(format!(
                    "support point {x} does not have {bits} bits"
                )));
            }
            probs[x.index() as usize] += p;
        }
        Self::new(bits, probs)
    }

    /// Independent concatenation: the first part occupies the low bits.
    pub fn product(parts: &[Distribution]) -> Result<Self, AdvantageError> {
        let bits: usize = parts.iter().map(|d| d.bits).sum();
        Self::check_bits(bits)?;
        let mut probs = vec![1.0];
        let mut shift = 0;
        for d in parts {
            let mut next = vec![0.0; probs.len() * d.probs.len()];
            for (hi, &q) in d.probs.iter().enumerate() {
                for (lo, &p) in probs.iter().enumerate() {
                    next[lo | (hi << shift)] = p * q;
                }
            }
            probs = next;
            shift += d.bits;
        }
        Ok(Distribution { bits, probs })
    }

    /// `μ^k`.
    pub fn power(&self, k: usize) -> Result<Self, AdvantageError> {
        Self::product(&vec![self.clone(); k])
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, x: &BitVector) -> f64 {
        self.probs[x.index() as usize]
    }

    pub fn support_size(&self) -> usize {
        self.probs.iter().filter(|&&p| p > 0.0).count()
    }

    pub fn sample(&self, rng: &mut RngStream) -> BitVector {
        BitVector::from_index(rng.categorical(&self.probs) as u64, self.bits)
    }
}

/// `(−1)^{f(x)}`.
pub fn sign_of(f: &BoolExpr, x: &BitVector) -> f64 {
    if f.eval_vars(x.bits()) {
        -1.0
    } else {
        1.0
    }
}

// ---------------------------------------------------------------------------
// Estimates

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Exact,
    MonteCarlo,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AdvantageEstimate {
    pub value: f64,
    pub method: Method,
    /// 0 for exact estimates.
    pub trials: u64,
    /// `None` for exact estimates.
    pub ci: Option<(f64, f64)>,
    pub level: Option<f64>,
    pub seed: Option<u64>,
}

impl AdvantageEstimate {
    pub fn exact(value: f64) -> Self {
        AdvantageEstimate {
            value: value.clamp(0.0, 1.0),
            method: Method::Exact,
            trials: 0,
            ci: None,
            level: None,
            seed: None,
        }
    }
}

/// Output label to weight in `[−1, 1]`; labels not listed weigh 0.
pub type Weighting = BTreeMap<u64, f64>;

/// `E[f · 1{C = c}]` for every label `c`.
pub fn signed_masses(
    ch: &Channel,
    f: &BoolExpr,
    mu: &Distribution,
) -> Result<BTreeMap<u64, f64>, AdvantageError> {
    let mut acc: BTreeMap<u64, f64> = BTreeMap::new();
    for (i, x) in ch.inputs().iter().enumerate() {
        if x.len() != mu.bits() {
            return Err(AdvantageError::Mismatch(format!(
                "channel input has {} bits, distribution has {}",
                x.len(),
                mu.bits()
            )));
        }
        let w = mu.prob(x) * sign_of(f, x);
        if w == 0.0 {
            continue;
        }
        for &(c, p) in ch.row(i) {
            *acc.entry(c).or_default() += w * p;
        }
    }
    Ok(acc)
}

/// Exact advantage and the weighting that attains it.
pub fn advantage_exact(
    ch: &Channel,
    f: &BoolExpr,
    mu: &Distribution,
) -> Result<(AdvantageEstimate, Weighting), AdvantageError> {
    let covered: f64 = ch.inputs().iter().map(|x| mu.prob(x)).sum();
    if (covered - 1.0).abs() > 1e-9 {
        return Err(AdvantageError::Mismatch(format!(
            "channel inputs carry only {covered} of the input mass"
        )));
    }
    let masses = signed_masses(ch, f, mu)?;
    let value = masses.values().map(|m| m.abs()).sum();
    let weighting = masses
        .into_iter()
        .map(|(c, m)| (c, if m > 0.0 { 1.0 } else if m < 0.0 { -1.0 } else { 0.0 }))
        .collect();
    Ok((AdvantageEstimate::exact(value), weighting))
}

/// Exact advantage of a protocol's `outcome` for `f` under `mu`, over all inputs.
pub fn protocol_advantage(
    p: &Protocol,
    outcome: &Outcome,
    f: &BoolExpr,
    mu: &Distribution,
    opts: &ExactOptions,
) -> Result<f64, AdvantageError> {
    let m = p.input_nodes().len();
    if m != mu.bits() {
        return Err(AdvantageError::Mismatch(format!(
            "protocol has {m} inputs, distribution has {} bits",
            mu.bits()
        )));
    }
    let inputs: Vec<BitVector> = (0..mu.probs().len())
        .filter(|&i| mu.probs()[i] > 0.0)
        .map(|i| BitVector::from_index(i as u64, m))
        .collect();
    let ch = exact_channel(p, &inputs, outcome, opts)?;
    Ok(advantage_exact(&ch, f, mu)?.0.value)
}

/// Both sides of `|E[f · a(C)]| ≤ max|a| · adv_{f,μ}`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

pub fn advantage_upper_bound_check(
    a: &Weighting,
    ch: &Channel,
    f: &BoolExpr,
    mu: &Distribution,
) -> Result<BoundCheck, AdvantageError> {
    let masses = signed_masses(ch, f, mu)?;
    let lhs = masses
        .iter()
        .map(|(c, m)| m * a.get(c).copied().unwrap_or(0.0))
        .sum::<f64>()
        .abs();
    let sup = a.values().fold(0.0f64, |s, w| s.max(w.abs()));
    let rhs = sup * masses.values().map(|m| m.abs()).sum::<f64>();
    Ok(BoundCheck {
        lhs,
        rhs,
        holds: lhs <= rhs + 1e-12,
    })
}

/// Monte Carlo settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McOptions {
    pub trials: u64,
    /// Two-sided confidence level of the bootstrap interval.
    pub level: f64,
    pub resamples: usize,
    pub seed: u64,
}

impl McOptions {
    pub fn new(trials: u64, seed: u64) -> Self {
        McOptions {
            trials,
            level: 0.95,
            resamples: 200,
            seed,
        }
    }
}

fn plug_in(samples: &[(f64, u64)], picks: impl Iterator<Item = usize>) -> f64 {
    let mut acc: HashMap<u64, f64> = HashMap::new();
    let mut n = 0usize;
    for i in picks {
        let (s, c) = samples[i];
        *acc.entry(c).or_default() += s;
        n += 1;
    }
    acc.values().map(|v| v.abs()).sum::<f64>() / n as f64
}

/// Plug-in estimate `Σ_c |mean(f · 1{C = c})|` with a percentile bootstrap
/// interval. `sample` draws one `(f(X), C)` pair; trial `i` uses its own
/// stream, so results do not depend on the thread count.
///
/// The plug-in estimate is biased upwards by `O(√(|C| / trials))`.
pub fn advantage_mc<S>(sample: S, opts: &McOptions) -> AdvantageEstimate
where
    S: Fn(&mut RngStream) -> (f64, u64) + Sync,
{
    let samples: Vec<(f64, u64)> = (0..opts.trials)
        .into_par_iter()
        .map(|i| sample(&mut RngStream::keyed(opts.seed, "advantage-mc", &[i])))
        .collect();
    let n = samples.len();
    if n == 0 {
        return AdvantageEstimate {
            value: 0.0,
            method: Method::MonteCarlo,
            trials: 0,
            ci: Some((0.0, 1.0)),
            level: Some(opts.level),
            seed: Some(opts.seed),
        };
    }
    let value = plug_in(&samples, 0..n);
    let mut boots: Vec<f64> = (0..opts.resamples)
        .into_par_iter()
        .map(|b| {
            let mut rng = RngStream::keyed(opts.seed, "advantage-bootstrap", &[b as u64]);
            let picks: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            plug_in(&samples, picks.into_iter())
        })
        .collect();
    boots.sort_by(f64::total_cmp);
    let ci = if boots.is_empty() {
        (value, value)
    } else {
        let tail = (1.0 - opts.level) / 2.0;
        let at = |q: f64| boots[((q * boots.len() as f64) as usize).min(boots.len() - 1)];
        (at(tail), at(1.0 - tail))
    };
    AdvantageEstimate {
        value,
        method: Method::MonteCarlo,
        trials: opts.trials,
        ci: Some(ci),
        level: Some(opts.level),
        seed: Some(opts.seed),
    }
}

// ---------------------------------------------------------------------------
// Read-once trees

/// Exact advantage of a read-once tree against the product of its per-level
/// query advantages.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReadOnceReport {
    pub estimate: AdvantageEstimate,
    /// `α_i`: the largest query advantage on level `i`.
    pub factors: Vec<f64>,
    pub product: f64,
    /// `(max_i α_i)^k`.
    pub max_power: f64,
    pub holds: bool,
}

pub fn readonce_advantage(t: &DecisionTree) -> Result<ReadOnceReport, AdvantageError> {
    if !t.is_read_once() {
        return Err(AdvantageError::NotReadOnce);
    }
    let value = t.advantage();
    let mut factors = vec![0.0f64; t.depth()];
    for (level, _, a) in t.query_advantages() {
        factors[level] = factors[level].max(a);
    }
    let product: f64 = factors.iter().product();
    let max = factors.iter().copied().fold(0.0, f64::max);
    let max_power = max.powi(factors.len() as i32);
    Ok(ReadOnceReport {
        estimate: AdvantageEstimate::exact(value),
        holds: value <= product + 1e-9 && product <= max_power + 1e-12,
        factors,
        product,
        max_power,
    })
}

// ---------------------------------------------------------------------------
// Sensitivity

/// `max_x #{i : f(x) ≠ f(x ⊕ e_i)}` over `n` variables.
pub fn sensitivity(f: &BoolExpr, n: usize) -> Result<usize, AdvantageError> {
    if n > MAX_BITS {
        return Err(AdvantageError::SupportTooLarge { bits: n, cap: MAX_BITS });
    }
    let table: Vec<bool> = (0..1u64 << n)
        .map(|i| f.eval_vars(BitVector::from_index(i, n).bits()))
        .collect();
    Ok((0..table.len())
        .into_par_iter()
        .map(|x| (0..n).filter(|&i| table[x] != table[x ^ (1 << i)]).count())
        .max()
        .unwrap_or(0))
}

// ---------------------------------------------------------------------------
// Closed-form bounds

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LogBase {
    #[default]
    Two,
    Natural,
}

impl LogBase {
    pub fn log(self, x: f64) -> f64 {
        match self {
            LogBase::Two => x.log2(),
            LogBase::Natural => x.ln(),
        }
    }
}

fn check_eps(eps: f64) -> Result<(), AdvantageError> {
    if eps > 0.0 && eps < 0.5 {
        Ok(())
    } else {
        Err(domain("epsilon", eps, "(0, 1/2)"))
    }
}

/// Depth lower bound `ε² log(1/4δ) / (50 log²(1/ε)) · s` for noisy trees
/// computing a function of sensitivity `s` with error `δ`.
///
/// `δ` is accepted on `(0, 1/4]`; at `δ = 1/4` the bound is 0.
pub fn gks_depth_bound(eps: f64, delta: f64, s: f64, base: LogBase) -> Result<f64, AdvantageError> {
    check_eps(eps)?;
    if !(delta > 0.0 && delta <= 0.25) {
        return Err(domain("delta", delta, "(0, 1/4]"));
    }
    if !(s >= 0.0) {
        return Err(domain("s", s, "s >= 0"));
    }
    let l = base.log(1.0 / eps);
    Ok(eps * eps * base.log(1.0 / (4.0 * delta)) / (50.0 * l * l) * s)
}

/// `max(1 − exp(−c · D · log²(1/ε) / (ε² n)), 7/8)`.
pub fn alpha_bound(n: f64, big_d: f64, eps: f64, c: f64, base: LogBase) -> Result<f64, AdvantageError> {
    check_eps(eps)?;
    if !(n >= 1.0) {
        return Err(domain("n", n, "n >= 1"));
    }
    if !(big_d >= 0.0) {
        return Err(domain("D", big_d, "D >= 0"));
    }
    if !(c > 0.0) {
        return Err(domain("c", c, "c > 0"));
    }
    let l = base.log(1.0 / eps);
    Ok((1.0 - (-c * big_d * l * l / (eps * eps * n)).exp()).max(7.0 / 8.0))
}

/// Constants of the transmission-ratio inequality
/// `S log²(1/ε^{C'S}) / ε^{2C'S} ≥ C'' log N`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatioConstants {
    /// Block-count constant (`k ≥ M·C`). Only shifts `C''`.
    pub c: f64,
    pub c_prime: f64,
    pub c_double_prime: f64,
}

impl Default for RatioConstants {
    fn default() -> Self {
        RatioConstants {
            c: 1.0 / 18.0,
            c_prime: 72.0,
            c_double_prime: 1.0,
        }
    }
}

/// Geometric search grid `S_i = s_min · ratio^i`, `i ≤ steps`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub s_min: f64,
    pub ratio: f64,
    pub steps: u32,
}

impl Default for Grid {
    fn default() -> Self {
        Grid {
            s_min: 1e-4,
            ratio: 1.01,
            steps: 2000,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MinRatio {
    pub s: f64,
    pub index: u32,
    /// Natural log of both sides at `s`.
    pub ln_lhs: f64,
    pub ln_rhs: f64,
}

/// Natural log of `S · (C'S log(1/ε))² · ε^{−2C'S}`.
pub fn ratio_lhs_ln(s: f64, eps: f64, c_prime: f64, base: LogBase) -> f64 {
    s.ln() + 2.0 * (c_prime * s * base.log(1.0 / eps)).ln() + 2.0 * c_prime * s * (1.0 / eps).ln()
}

/// Smallest grid point satisfying the inequality. The left side is strictly
/// increasing in `S`, so the grid is binary searched. `delta` only enters
/// through `C''` and is checked for range.
pub fn min_transmission_ratio(
    n: f64,
    eps: f64,
    delta: f64,
    consts: &RatioConstants,
    grid: &Grid,
    base: LogBase,
) -> Result<MinRatio, AdvantageError> {
    check_eps(eps)?;
    if !(n > 2.0) {
        return Err(domain("N", n, "N > 2"));
    }
    if !(delta > 0.0 && delta < 0.5) {
        return Err(domain("delta", delta, "(0, 1/2)"));
    }
    for (what, v) in [("C", consts.c), ("C'", consts.c_prime), ("C''", consts.c_double_prime)] {
        if !(v > 0.0) {
            return Err(domain(what, v, "positive"));
        }
    }
    if !(grid.s_min > 0.0 && grid.ratio > 1.0) {
        return Err(domain("grid", grid.ratio, "s_min > 0, ratio > 1"));
    }
    let ln_rhs = (consts.c_double_prime * base.log(n)).ln();
    let s_at = |i: u32| grid.s_min * grid.ratio.powi(i as i32);
    let ok = |i: u32| ratio_lhs_ln(s_at(i), eps, consts.c_prime, base) >= ln_rhs;
    if !ok(grid.steps) {
        return Err(domain("N", n, "reachable within the grid"));
    }
    let (mut lo, mut hi) = (0u32, grid.steps);
    if !ok(0) {
        // Invariant: !ok(lo), ok(hi).
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if ok(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
    } else {
        hi = 0;
    }
    let s = s_at(hi);
    Ok(MinRatio {
        s,
        index: hi,
        ln_lhs: ratio_lhs_ln(s, eps, consts.c_prime, base),
        ln_rhs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity(eps: f64) -> Channel {
        let inputs = vec![BitVector::from_index(0, 1), BitVector::from_index(1, 1)];
        Channel::new(
            inputs,
            1,
            vec![vec![(0, 1.0 - eps), (1, eps)], vec![(0, eps), (1, 1.0 - eps)]],
        )
    }

    fn bit() -> BoolExpr {
        BoolExpr::var(0)
    }

    #[test]
    fn named_distributions() {
        let m = Distribution::mu_star(4).unwrap();
        assert_eq!(m.support_size(), 5);
        assert!((m.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(Distribution::new(1, vec![0.5, 0.6]).is_err());
        let p = Distribution::product(&[
            Distribution::new(1, vec![0.25, 0.75]).unwrap(),
            Distribution::uniform(1).unwrap(),
        ])
        .unwrap();
        assert_eq!(p.probs(), &[0.125, 0.375, 0.125, 0.375]);
    }

    #[test]
    fn spec_json() {
        let text = r#"{"kind":"power","count":2,"block":{"kind":"table","bits":1,"support":{"0":0.25,"1":0.75}}}"#;
        let spec: DistributionSpec = serde_json::from_str(text).unwrap();
        let d = spec.build().unwrap();
        assert_eq!(d.bits(), 2);
        assert!((d.probs()[3] - 0.5625).abs() < 1e-15);
        assert!(serde_json::from_str::<DistributionSpec>(r#"{"kind":"uniform","bits":1,"x":0}"#).is_err());
    }

    #[test]
    fn exact_small_cases() {
        let u = Distribution::uniform(1).unwrap();
        let constant = Channel::new(u_inputs(), 1, vec![vec![(0, 1.0)], vec![(0, 1.0)]]);
        assert_eq!(advantage_exact(&constant, &bit(), &u).unwrap().0.value, 0.0);
        assert_eq!(advantage_exact(&identity(0.0), &bit(), &u).unwrap().0.value, 1.0);
        let (est, w) = advantage_exact(&identity(0.2), &bit(), &u).unwrap();
        assert!((est.value - 0.6).abs() < 1e-15);
        assert_eq!(w.get(&0), Some(&1.0));
        assert_eq!(w.get(&1), Some(&-1.0));
        assert!(est.ci.is_none());
    }

    fn u_inputs() -> Vec<BitVector> {
        vec![BitVector::from_index(0, 1), BitVector::from_index(1, 1)]
    }

    #[test]
    fn bound_check_cases() {
        let u = Distribution::uniform(1).unwrap();
        let ch = identity(0.2);
        let zero: Weighting = [(0, 0.0), (1, 0.0)].into_iter().collect();
        let c = advantage_upper_bound_check(&zero, &ch, &bit(), &u).unwrap();
        assert_eq!(c.lhs, 0.0);
        assert!(c.holds);
        let (_, best) = advantage_exact(&ch, &bit(), &u).unwrap();
        let c = advantage_upper_bound_check(&best, &ch, &bit(), &u).unwrap();
        assert!((c.lhs - c.rhs).abs() < 1e-12);
    }

    #[test]
    fn sensitivity_cases() {
        assert_eq!(sensitivity(&BoolExpr::Const(true), 3).unwrap(), 0);
        assert_eq!(sensitivity(&BoolExpr::parity(5), 5).unwrap(), 5);
        assert_eq!(sensitivity(&"maj(x[0], x[1], x[2])".parse().unwrap(), 3).unwrap(), 2);
        assert!(sensitivity(&BoolExpr::parity(21), 21).is_err());
    }

    #[test]
    fn gks_cases() {
        assert_eq!(gks_depth_bound(0.25, 0.25, 10.0, LogBase::Two).unwrap(), 0.0);
        let b = gks_depth_bound(0.25, 1.0 / 64.0, 1.0, LogBase::Two).unwrap();
        assert!((b - 0.00125).abs() < 1e-15);
        assert!(gks_depth_bound(0.25, 1.0 / 128.0, 1.0, LogBase::Two).unwrap() > b);
        assert!(gks_depth_bound(0.5, 0.1, 1.0, LogBase::Two).is_err());
    }

    #[test]
    fn alpha_cases() {
        assert_eq!(alpha_bound(10.0, 0.0, 0.1, 1.0, LogBase::Two).unwrap(), 0.875);
        let mut prev = 0.0;
        for d in 0..50 {
            let a = alpha_bound(1000.0, d as f64 * 10.0, 0.1, 0.01, LogBase::Two).unwrap();
            assert!(a >= prev);
            prev = a;
        }
        assert!(prev > 0.99);
    }

    #[test]
    fn min_ratio_grid_floor() {
        let r = min_transmission_ratio(4.0, 0.1, 0.1, &RatioConstants::default(), &Grid { s_min: 1.0, ratio: 1.1, steps: 10 }, LogBase::Two).unwrap();
        assert_eq!(r.index, 0);
        assert_eq!(r.s, 1.0);
    }

    #[test]
    fn mc_zero_noise_is_exact() {
        let est = advantage_mc(
            |rng| {
                let x = rng.bernoulli(0.5);
                (if x { -1.0 } else { 1.0 }, x as u64)
            },
            &McOptions::new(1000, 7),
        );
        assert_eq!(est.value, 1.0);
        assert_eq!(est.ci, Some((1.0, 1.0)));
    }
}
