//! Sampled execution of protocols and Monte Carlo error estimates.

use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use super::{Atom, BoolExpr, Protocol, ProtocolError};
use crate::noise::{BitVector, RngStream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Reception {
    pub receiver: usize,
    pub eta: bool,
    pub received: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TxRecord {
    pub sender: usize,
    pub sent: bool,
    /// One entry per neighbour of the sender, ascending by node.
    pub receptions: Vec<Reception>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ExecutionTrace {
    pub records: Vec<TxRecord>,
    /// Value drawn for each random source.
    pub sources: Vec<usize>,
    pub output: bool,
}

impl ExecutionTrace {
    /// Bit that `w` holds for transmission `t` (0 when not received).
    pub fn received(&self, p: &Protocol, w: usize, t: usize) -> bool {
        if !p.receives(w, t) {
            return false;
        }
        let r = &self.records[t];
        r.receptions
            .binary_search_by_key(&w, |x| x.receiver)
            .map(|k| r.receptions[k].received)
            .unwrap_or(false)
    }

    /// Sent bits as a transcript label (bit `t` is transmission `t`).
    pub fn transcript(&self) -> u64 {
        self.records
            .iter()
            .enumerate()
            .fold(0u64, |acc, (t, r)| acc | ((r.sent as u64) << t))
    }
}

fn eval_at(
    p: &Protocol,
    expr: &BoolExpr,
    node: usize,
    own: &[bool],
    records: &[TxRecord],
    sources: &[usize],
) -> bool {
    expr.eval(&mut |a| match a {
        Atom::Input => own[node],
        Atom::Var(_) => false,
        Atom::Rx(t) => {
            if !p.receives(node, t) {
                return false;
            }
            let r = &records[t];
            r.receptions
                .binary_search_by_key(&node, |x| x.receiver)
                .map(|k| r.receptions[k].received)
                .unwrap_or(false)
        }
        Atom::Rand { source, bit } => (sources[source] >> bit) & 1 == 1,
    })
}

/// Runs the schedule with explicit noise: `eta(w, t)` is the flip seen by
/// `w` on transmission `t` (ignored for noiseless transmissions).
pub fn execute_with<F: FnMut(usize, usize) -> bool>(
    p: &Protocol,
    x: &BitVector,
    mut eta: F,
    sources: &[usize],
) -> Result<ExecutionTrace, ProtocolError> {
    let own = p.node_values(x)?;
    let mut records: Vec<TxRecord> = Vec::with_capacity(p.len());
    for (t, tx) in p.schedule().iter().enumerate() {
        let sent = eval_at(p, &tx.expr, tx.sender, &own, &records, sources);
        let receptions = p
            .graph()
            .neighbors(tx.sender)
            .iter()
            .map(|&w| {
                let e = !tx.noiseless && eta(w, t);
                Reception {
                    receiver: w,
                    eta: e,
                    received: sent ^ e,
                }
            })
            .collect();
        records.push(TxRecord {
            sender: tx.sender,
            sent,
            receptions,
        });
    }
    let output = records.last().map_or(false, |r| r.sent);
    Ok(ExecutionTrace {
        records,
        sources: sources.to_vec(),
        output,
    })
}

/// Samples one run: source values first, then one flip per (receiver,
/// noisy transmission) in schedule order and ascending receiver order.
pub fn execute(p: &Protocol, x: &BitVector, rng: &mut RngStream) -> Result<ExecutionTrace, ProtocolError> {
    let sources: Vec<usize> = p.sources().iter().map(|s| rng.categorical(&s.probs)).collect();
    let eps = p.epsilon();
    execute_with(p, x, |_, _| rng.bernoulli(eps), &sources)
}

/// Per-input Monte Carlo error estimate with a normal-approximation interval.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct McErrorEstimate {
    pub input: usize,
    pub errors: u64,
    pub trials: u64,
    pub estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct McErrorReport {
    pub per_input: Vec<McErrorEstimate>,
    /// Largest upper confidence limit over inputs.
    pub worst_upper: f64,
    /// Largest point estimate over inputs.
    pub worst_estimate: f64,
}

/// Two-sided standard normal quantile for the given confidence level.
pub fn normal_quantile(level: f64) -> f64 {
    let n = Normal::new(0.0, 1.0).expect("standard normal");
    n.inverse_cdf(1.0 - (1.0 - level) / 2.0)
}

/// Estimates `Pr[output ≠ f(x)]` for each input by `trials` sampled runs.
///
/// Run `j` on input `i` uses the stream keyed `("protocol-mc", i, j)`, so
/// results do not depend on the thread count.
pub fn error_probability_mc(
    p: &Protocol,
    f: &BoolExpr,
    inputs: &[BitVector],
    trials: u64,
    seed: u64,
    level: f64,
) -> Result<McErrorReport, ProtocolError> {
    let z = normal_quantile(level);
    let per_input = inputs
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let want = f.eval_vars(x.bits());
            let errors = (0..trials)
                .into_par_iter()
                .map(|j| {
                    let mut rng = RngStream::keyed(seed, "protocol-mc", &[i as u64, j]);
                    execute(p, x, &mut rng).map(|tr| (tr.output != want) as u64)
                })
                .try_reduce(|| 0, |a, b| Ok(a + b))?;
            let est = errors as f64 / trials.max(1) as f64;
            let half = z * (est * (1.0 - est) / trials.max(1) as f64).sqrt();
            Ok(McErrorEstimate {
                input: i,
                errors,
                trials,
                estimate: est,
                ci_low: (est - half).max(0.0),
                ci_high: (est + half).min(1.0),
            })
        })
        .collect::<Result<Vec<_>, ProtocolError>>()?;
    let worst_upper = per_input.iter().map(|e| e.ci_high).fold(0.0, f64::max);
    let worst_estimate = per_input.iter().map(|e| e.estimate).fold(0.0, f64::max);
    Ok(McErrorReport {
        per_input,
        worst_upper,
        worst_estimate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::builders::star_xor;

    #[test]
    fn noiseless_star_computes_parity() {
        let p = star_xor(2, 1, 0.0).unwrap();
        let mut rng = RngStream::keyed(0, "t", &[]);
        for x in p.all_inputs() {
            let tr = execute(&p, &x, &mut rng).unwrap();
            assert_eq!(tr.output, x.parity());
            for r in &tr.records {
                for rc in &r.receptions {
                    assert_eq!(rc.received, r.sent ^ rc.eta);
                }
            }
        }
    }

    #[test]
    fn normal_quantiles() {
        assert!((normal_quantile(0.95) - 1.959964).abs() < 1e-5);
        assert!((normal_quantile(0.9973) - 3.0).abs() < 1e-3);
    }

    #[test]
    fn mc_is_reproducible() {
        let p = star_xor(2, 1, 0.1).unwrap();
        let f = BoolExpr::parity(2);
        let a = error_probability_mc(&p, &f, &p.all_inputs(), 2000, 5, 0.95).unwrap();
        let b = error_probability_mc(&p, &f, &p.all_inputs(), 2000, 5, 0.95).unwrap();
        assert_eq!(a, b);
    }
}
