//! ε-noise broadcast protocols: representation, validation, exact and
//! sampled execution, and reference builders.
//!
//! A protocol is a fixed schedule of single-bit broadcasts. Transmission `t`
//! is made by `schedule[t].sender`, which computes its bit from its own input
//! bit, the bits it has received so far and (optionally) internal random
//! sources. Every neighbour `w` of the sender receives `b ⊕ η_{w,t}` with
//! `η ~ Bernoulli(ε)`, or `b` itself when the transmission is flagged
//! noiseless. A node reading a transmission it did not receive (it is not
//! adjacent to the sender, or it is the sender) sees 0. The last transmission
//! is the protocol's output: its sender is the designated output node and its
//! sent bit is the answer.

pub mod builders;
pub mod dsl;
pub mod exact;
pub mod exec;
pub mod expr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::noise::BitVector;
use crate::planar::{check_bounded_counts, BoundedReport, Decomposition, Graph};

pub use exact::{exact_channel, Channel, ExactOptions, Outcome, Probe};
pub use exec::{execute, ExecutionTrace};
pub use expr::{Atom, BoolExpr};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid protocol: {0}")]
    Invalid(String),
    #[error("protocol is not {class}: {reason}")]
    Class { class: String, reason: String },
    #[error("exact enumeration needs {bits} random bits, cap is {cap}")]
    CapExceeded { bits: usize, cap: usize },
    #[error("exact enumeration reached {states} states, cap is {cap}")]
    StateCap { states: usize, cap: usize },
    #[error("exact enumeration needs {slots} live bits, at most 128 supported")]
    SlotCap { slots: usize },
    #[error("outcome needs {bits} bits, at most 64 supported")]
    OutcomeTooWide { bits: usize },
    #[error("input has {got} bits, protocol has {expected} input nodes")]
    InputLength { expected: usize, got: usize },
    #[error("network is disconnected")]
    Disconnected,
    #[error("no auxiliary node is adjacent to every input node")]
    NoCollector,
}

/// What a node contributes as input.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    /// Receives an input bit; belongs to input block `block` (0-based).
    Input { block: usize },
    /// Input fixed to `fixed`; `block = Some(j)` places it in the auxiliary
    /// block paired with input block `j`, `None` in the leftover block.
    Aux { fixed: bool, block: Option<usize> },
}

impl Role {
    pub fn is_input(self) -> bool {
        matches!(self, Role::Input { .. })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transmission {
    pub sender: usize,
    pub expr: BoolExpr,
    pub noiseless: bool,
}

impl Transmission {
    pub fn new(sender: usize, expr: BoolExpr) -> Self {
        Transmission {
            sender,
            expr,
            noiseless: false,
        }
    }

    pub fn noiseless(sender: usize, expr: BoolExpr) -> Self {
        Transmission {
            sender,
            expr,
            noiseless: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProtocolClass {
    General,
    SemiNoisy,
    NoisyCopy,
}

impl ProtocolClass {
    pub fn name(self) -> &'static str {
        match self {
            ProtocolClass::General => "general",
            ProtocolClass::SemiNoisy => "semi-noisy",
            ProtocolClass::NoisyCopy => "noisy-copy",
        }
    }
}

/// Internal random source: a value in `0..probs.len()` drawn with the given
/// probabilities, readable bit by bit (`probs.len()` is a power of two).
#[derive(Clone, Debug, PartialEq)]
pub struct RandSource {
    pub probs: Vec<f64>,
}

impl RandSource {
    /// A single bit equal to 1 with probability `p`.
    pub fn bernoulli(p: f64) -> Self {
        RandSource {
            probs: vec![1.0 - p, p],
        }
    }

    pub fn uniform_bits(bits: usize) -> Self {
        let m = 1usize << bits;
        RandSource {
            probs: vec![1.0 / m as f64; m],
        }
    }

    pub fn bits(&self) -> usize {
        self.probs.len().trailing_zeros() as usize
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Protocol {
    graph: Graph,
    roles: Vec<Role>,
    schedule: Vec<Transmission>,
    epsilon: f64,
    class: ProtocolClass,
    sources: Vec<RandSource>,
}

impl Protocol {
    pub fn new(
        graph: Graph,
        roles: Vec<Role>,
        schedule: Vec<Transmission>,
        epsilon: f64,
        class: ProtocolClass,
        sources: Vec<RandSource>,
    ) -> Result<Self, ProtocolError> {
        let p = Protocol {
            graph,
            roles,
            schedule,
            epsilon,
            class,
            sources,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn roles(&self) -> &[Role] {
        &self.roles
    }

    pub fn schedule(&self) -> &[Transmission] {
        &self.schedule
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn class(&self) -> ProtocolClass {
        self.class
    }

    pub fn sources(&self) -> &[RandSource] {
        &self.sources
    }

    pub fn len(&self) -> usize {
        self.schedule.len()
    }

    pub fn is_empty(&self) -> bool {
        self.schedule.is_empty()
    }

    pub fn node_count(&self) -> usize {
        self.roles.len()
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self, ProtocolError> {
        let mut p = self.clone();
        p.epsilon = epsilon;
        p.validate()?;
        Ok(p)
    }

    pub fn with_class(&self, class: ProtocolClass) -> Result<Self, ProtocolError> {
        let mut p = self.clone();
        p.class = class;
        p.validate()?;
        Ok(p)
    }

    /// Designated output node: the sender of the last transmission.
    pub fn output_node(&self) -> usize {
        self.schedule.last().expect("validated schedule is non-empty").sender
    }

    /// Number of input blocks (`1 + ` the largest input block index).
    pub fn block_count(&self) -> usize {
        self.roles
            .iter()
            .filter_map(|r| match r {
                Role::Input { block } => Some(block + 1),
                _ => None,
            })
            .max()
            .unwrap_or(0)
    }

    /// Input nodes in variable order: by block, then by node index.
    pub fn input_nodes(&self) -> Vec<usize> {
        let mut nodes: Vec<(usize, usize)> = self
            .roles
            .iter()
            .enumerate()
            .filter_map(|(v, r)| match r {
                Role::Input { block } => Some((*block, v)),
                _ => None,
            })
            .collect();
        nodes.sort_unstable();
        nodes.into_iter().map(|(_, v)| v).collect()
    }

    pub fn block_inputs(&self, block: usize) -> Vec<usize> {
        (0..self.roles.len())
            .filter(|&v| self.roles[v] == Role::Input { block })
            .collect()
    }

    /// Every input assignment, in index order (bit `i` is variable `i`).
    pub fn all_inputs(&self) -> Vec<BitVector> {
        let m = self.input_nodes().len();
        (0..1u64 << m).map(|i| BitVector::from_index(i, m)).collect()
    }

    /// Input bit held by each node under assignment `x`.
    pub fn node_values(&self, x: &BitVector) -> Result<Vec<bool>, ProtocolError> {
        let inputs = self.input_nodes();
        if x.len() != inputs.len() {
            return Err(ProtocolError::InputLength {
                expected: inputs.len(),
                got: x.len(),
            });
        }
        let mut vals: Vec<bool> = self
            .roles
            .iter()
            .map(|r| match r {
                Role::Aux { fixed, .. } => *fixed,
                Role::Input { .. } => false,
            })
            .collect();
        for (i, &v) in inputs.iter().enumerate() {
            vals[v] = x.get(i);
        }
        Ok(vals)
    }

    /// Transmissions made by each node.
    pub fn tx_counts(&self) -> Vec<u64> {
        let mut c = vec![0u64; self.roles.len()];
        for tx in &self.schedule {
            c[tx.sender] += 1;
        }
        c
    }

    /// `Σ` over noisy transmissions of the sender's degree.
    pub fn noise_bit_count(&self) -> usize {
        self.schedule
            .iter()
            .filter(|tx| !tx.noiseless)
            .map(|tx| self.graph.degree(tx.sender))
            .sum()
    }

    /// Whether any expression reads a random source.
    pub fn uses_randomness(&self) -> bool {
        self.schedule
            .iter()
            .any(|tx| tx.expr.atoms().iter().any(|a| matches!(a, Atom::Rand { .. })))
    }

    /// Whether `w` receives transmission `t`.
    pub fn receives(&self, w: usize, t: usize) -> bool {
        let s = self.schedule[t].sender;
        w != s && self.graph.has_edge(w, s)
    }

    /// Decomposition implied by the roles, with the given budgets.
    pub fn decomposition(&self, d: f64, big_d: f64) -> Decomposition {
        let k = self.block_count();
        let mut input_blocks = vec![Vec::new(); k];
        let mut aux_blocks = vec![Vec::new(); k];
        let mut aux0 = Vec::new();
        let mut fixed = vec![false; self.roles.len()];
        for (v, r) in self.roles.iter().enumerate() {
            match *r {
                Role::Input { block } => input_blocks[block].push(v),
                Role::Aux { fixed: f, block } => {
                    fixed[v] = f;
                    match block {
                        Some(j) => aux_blocks[j].push(v),
                        None => aux0.push(v),
                    }
                }
            }
        }
        Decomposition {
            n: input_blocks.first().map_or(0, Vec::len),
            k,
            d,
            big_d,
            input_blocks,
            aux_blocks,
            aux0,
            fixed,
            cells: Vec::new(),
        }
    }

    /// Smallest budgets `(d, D)` this protocol satisfies for its own roles.
    pub fn tight_budgets(&self) -> (f64, f64) {
        let rep = self.check_bounded(&self.decomposition(0.0, 0.0), 0.0, 0.0);
        let counts = self.tx_counts();
        let d = self
            .input_nodes()
            .iter()
            .map(|&v| counts[v])
            .max()
            .unwrap_or(0);
        let big_d = rep.block_counts.iter().copied().max().unwrap_or(0);
        (d as f64, big_d as f64)
    }

    /// Per-node and per-block budget check against `dec`.
    pub fn check_bounded(&self, dec: &Decomposition, d: f64, big_d: f64) -> BoundedReport {
        check_bounded_counts(&self.tx_counts(), dec, d, big_d)
    }

    /// Checks structural validity and the class invariants.
    pub fn validate(&self) -> Result<(), ProtocolError> {
        let invalid = |m: String| Err(ProtocolError::Invalid(m));
        let n = self.graph.len();
        if self.roles.len() != n {
            return invalid(format!(
                "{} roles for a graph with {n} nodes",
                self.roles.len()
            ));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return invalid(format!("epsilon {} outside [0, 1]", self.epsilon));
        }
        if self.schedule.is_empty() {
            return invalid("empty schedule".into());
        }
        let k = self.block_count();
        for b in 0..k {
            if self.block_inputs(b).is_empty() {
                return invalid(format!("input block {b} is empty"));
            }
        }
        for (v, r) in self.roles.iter().enumerate() {
            if let Role::Aux { block: Some(j), .. } = r {
                if *j >= k {
                    return invalid(format!(
                        "auxiliary node {v} names block {j} but there are {k} input blocks"
                    ));
                }
            }
        }
        for (i, s) in self.sources.iter().enumerate() {
            let m = s.probs.len();
            if m < 2 || !m.is_power_of_two() {
                return invalid(format!("random source {i} has {m} outcomes"));
            }
            let total: f64 = s.probs.iter().sum();
            if s.probs.iter().any(|&p| !(p >= 0.0)) || (total - 1.0).abs() > 1e-9 {
                return invalid(format!("random source {i} is not a distribution"));
            }
        }
        for (t, tx) in self.schedule.iter().enumerate() {
            if tx.sender >= n {
                return invalid(format!("transmission {t} sender {} out of range", tx.sender));
            }
            tx.expr
                .check_tables()
                .map_err(|m| ProtocolError::Invalid(format!("transmission {t}: {m}")))?;
            for a in tx.expr.atoms() {
                match a {
                    Atom::Rx(s) if s >= t => {
                        return invalid(format!(
                            "transmission {t} reads rx[{s}], which is not earlier"
                        ))
                    }
                    Atom::Var(i) => {
                        return invalid(format!(
                            "transmission {t} reads global variable x[{i}]"
                        ))
                    }
                    Atom::Rand { source, bit } => match self.sources.get(source) {
                        None => {
                            return invalid(format!(
                                "transmission {t} reads undeclared source {source}"
                            ))
                        }
                        Some(s) if bit >= s.bits() => {
                            return invalid(format!(
                                "transmission {t} reads bit {bit} of {}-bit source {source}",
                                s.bits()
                            ))
                        }
                        _ => {}
                    },
                    _ => {}
                }
            }
        }
        self.check_class(self.class)
    }

    /// Checks the invariants of `class` (independently of the declared tag).
    pub fn check_class(&self, class: ProtocolClass) -> Result<(), ProtocolError> {
        let fail = |reason: String| {
            Err(ProtocolError::Class {
                class: class.name().into(),
                reason,
            })
        };
        if class == ProtocolClass::General {
            return Ok(());
        }
        for (t, tx) in self.schedule.iter().enumerate() {
            if self.roles[tx.sender].is_input() {
                if tx.expr != BoolExpr::input() {
                    return fail(format!(
                        "input node {} sends `{}` at transmission {t}",
                        tx.sender, tx.expr
                    ));
                }
                if tx.noiseless {
                    return fail(format!("input transmission {t} is flagged noiseless"));
                }
            } else if !tx.noiseless {
                return fail(format!("auxiliary transmission {t} is noisy"));
            }
        }
        if class == ProtocolClass::NoisyCopy {
            let counts = self.tx_counts();
            if let Some(v) = self.input_nodes().into_iter().find(|&v| counts[v] != 1) {
                return fail(format!(
                    "input node {v} broadcasts {} times",
                    counts[v]
                ));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Protocol {
        let g = Graph::from_edges(3, &[(0, 2), (1, 2)]);
        let roles = vec![
            Role::Input { block: 0 },
            Role::Input { block: 1 },
            Role::Aux {
                fixed: false,
                block: None,
            },
        ];
        let schedule = vec![
            Transmission::new(0, BoolExpr::input()),
            Transmission::new(1, BoolExpr::input()),
            Transmission::new(2, "xor(rx[0], rx[1])".parse().unwrap()),
        ];
        Protocol::new(g, roles, schedule, 0.1, ProtocolClass::General, vec![]).unwrap()
    }

    #[test]
    fn rejects_forward_reads() {
        let p = tiny();
        let mut sched = p.schedule().to_vec();
        sched[1].expr = BoolExpr::rx(2);
        let err = Protocol::new(
            p.graph().clone(),
            p.roles().to_vec(),
            sched,
            0.1,
            ProtocolClass::General,
            vec![],
        );
        assert!(matches!(err, Err(ProtocolError::Invalid(_))));
    }

    #[test]
    fn class_validators() {
        let p = tiny();
        // Auxiliary transmission is noisy, so not semi-noisy.
        assert!(p.check_class(ProtocolClass::SemiNoisy).is_err());
        let mut sched = p.schedule().to_vec();
        sched[2].noiseless = true;
        let q = Protocol::new(
            p.graph().clone(),
            p.roles().to_vec(),
            sched.clone(),
            0.1,
            ProtocolClass::NoisyCopy,
            vec![],
        )
        .unwrap();
        assert_eq!(q.class(), ProtocolClass::NoisyCopy);
        sched.insert(1, Transmission::new(0, BoolExpr::input()));
        sched[3].expr = "xor(rx[0], rx[2])".parse().unwrap();
        let r = Protocol::new(
            p.graph().clone(),
            p.roles().to_vec(),
            sched,
            0.1,
            ProtocolClass::SemiNoisy,
            vec![],
        )
        .unwrap();
        assert!(r.check_class(ProtocolClass::NoisyCopy).is_err());
    }

    #[test]
    fn input_order_and_budgets() {
        let p = tiny();
        assert_eq!(p.input_nodes(), vec![0, 1]);
        assert_eq!(p.output_node(), 2);
        assert_eq!(p.tx_counts(), vec![1, 1, 1]);
        assert_eq!(p.noise_bit_count(), 1 + 1 + 2);
        let dec = p.decomposition(1.0, 1.0);
        assert_eq!(dec.input_blocks, vec![vec![0], vec![1]]);
        assert_eq!(dec.aux0, vec![2]);
        assert!(p.check_bounded(&dec, 1.0, 1.0).all_pass());
        assert!(!p.check_bounded(&dec, 0.0, 1.0).p3);
    }
}
