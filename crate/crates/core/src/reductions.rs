//! From bounded protocols to read-once noisy decision trees.
//!
//! The chain is
//! `Π → Π1 (semi-noisy) → Π2 (noisy-copy, then derandomised) → xnd tree →
//! ordered tree → read-once tree`, and the exact advantage for parity never
//! decreases along it. Every stage can be run on its own; [`protocol_to_read_once`]
//! runs them all and checks the intermediate claims with the exact engine.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::advantage::{alpha_bound, protocol_advantage, AdvantageError, Distribution, LogBase};
use crate::noise::{regen_table, BitVector, NoiseError, NoiseParam, RngStream};
use crate::protocol::{
    exact_channel, Atom, BoolExpr, ExactOptions, Outcome, Probe, Protocol, ProtocolClass,
    ProtocolError, RandSource, Role, Transmission,
};
use crate::tree::{collapse_to_read_once, reorder, BlockSpace, DecisionTree, Node, TreeError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReductionError {
    #[error("the output node {0} is an input node; the reductions need an auxiliary output node")]
    OutputNotAuxiliary(usize),
    #[error("protocol is not bounded: {0}")]
    NotBounded(String),
    #[error("{0}")]
    Precondition(String),
    #[error("randomness search over {outcomes} joint outcomes exceeds the cap of {cap}")]
    SearchCap { outcomes: u128, cap: u128 },
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error(transparent)]
    Advantage(#[from] AdvantageError),
    #[error(transparent)]
    Tree(#[from] TreeError),
}

fn pre(msg: impl Into<String>) -> ReductionError {
    ReductionError::Precondition(msg.into())
}

// ---------------------------------------------------------------------------
// Bounded protocol to semi-noisy

/// Result of [`to_semi_noisy`].
#[derive(Clone, Debug)]
pub struct SemiNoisy {
    pub protocol: Protocol,
    /// `(v, v')` for each original input node, in input-variable order.
    pub input_map: Vec<(usize, usize)>,
    /// First transmission of `Π1` simulating each transmission of `Π`.
    pub stage_start: Vec<usize>,
    /// The simulated received bit `b'_w[ℓ]` for every pair `(w, ℓ)` with `w`
    /// receiving transmission `ℓ` of `Π`, as an expression evaluated at `w`.
    pub simulated: BTreeMap<(usize, usize), BoolExpr>,
}

/// Receiver rule for an input stage, over `(b0, b1, c, r)`: if `b0 = b1`
/// the answer is `b0 ⊕ r`, otherwise `b_c`.
fn gadget_table() -> Vec<bool> {
    (0..16usize)
        .map(|i| {
            let (b0, b1, c, r) = (i & 1 == 1, i & 2 == 2, i & 4 == 4, i & 8 == 8);
            if b0 == b1 {
                b0 ^ r
            } else if c {
                b1
            } else {
                b0
            }
        })
        .collect()
}

/// Rewrites `expr` (evaluated at `node` in `Π`) to read simulated bits.
fn read_simulated(
    expr: &BoolExpr,
    node: usize,
    input: Option<bool>,
    sim: &BTreeMap<(usize, usize), BoolExpr>,
) -> BoolExpr {
    expr.substitute(&|a| match a {
        Atom::Rx(s) => Some(sim.get(&(node, s)).cloned().unwrap_or(BoolExpr::Const(false))),
        Atom::Input => input.map(BoolExpr::Const),
        _ => None,
    })
}

/// Simulates `p` by a semi-noisy protocol on an extended network.
///
/// Each input node `v` gets a fresh input node `v'` (id `N + i` for input
/// variable `i`) adjacent to `v` and its neighbours; `v` becomes auxiliary.
/// Auxiliary transmissions become noiseless and every receiver re-noises
/// the bit with its own Bernoulli(ε) source. A transmission by input node
/// `v` becomes `b0` and `b1` (its bit under input 0 and 1, noiseless)
/// followed by `v'` broadcasting its input.
///
/// `budgets = Some((d, D))` checks the protocol against those bounds.
pub fn to_semi_noisy(p: &Protocol, budgets: Option<(f64, f64)>) -> Result<SemiNoisy, ReductionError> {
    let out = p.output_node();
    if p.roles()[out].is_input() {
        return Err(ReductionError::OutputNotAuxiliary(out));
    }
    if let Some((d, big_d)) = budgets {
        let rep = p.check_bounded(&p.decomposition(d, big_d), d, big_d);
        if !rep.all_pass() {
            return Err(ReductionError::NotBounded(format!("(d, D) = ({d}, {big_d}): {rep:?}")));
        }
    }
    let n0 = p.node_count();
    let inputs = p.input_nodes();
    let mut graph = p.graph().clone();
    let mut roles: Vec<Role> = p
        .roles()
        .iter()
        .map(|r| match *r {
            Role::Input { block } => Role::Aux {
                fixed: false,
                block: Some(block),
            },
            aux => aux,
        })
        .collect();
    let mut prime = vec![usize::MAX; n0];
    let mut input_map = Vec::with_capacity(inputs.len());
    for &v in &inputs {
        let vp = graph.add_node();
        let block = match p.roles()[v] {
            Role::Input { block } => block,
            _ => unreachable!(),
        };
        roles.push(Role::Input { block });
        graph.add_edge(vp, v);
        for &w in p.graph().neighbors(v) {
            graph.add_edge(vp, w);
        }
        prime[v] = vp;
        input_map.push((v, vp));
    }

    let eps = p.epsilon();
    let mut sources = p.sources().to_vec();
    let mut schedule = Vec::new();
    let mut stage_start = Vec::with_capacity(p.len());
    let mut sim: BTreeMap<(usize, usize), BoolExpr> = BTreeMap::new();
    let table = gadget_table();
    for (l, tx) in p.schedule().iter().enumerate() {
        let v = tx.sender;
        stage_start.push(schedule.len());
        let receivers: Vec<usize> = p.graph().neighbors(v).to_vec();
        let fresh = |sources: &mut Vec<RandSource>| {
            sources.push(RandSource::bernoulli(eps));
            sources.len() - 1
        };
        if p.roles()[v].is_input() {
            let t0 = schedule.len();
            schedule.push(Transmission::noiseless(v, read_simulated(&tx.expr, v, Some(false), &sim)));
            schedule.push(Transmission::noiseless(v, read_simulated(&tx.expr, v, Some(true), &sim)));
            schedule.push(Transmission::new(prime[v], BoolExpr::input()));
            for w in receivers {
                let r = fresh(&mut sources);
                let e = BoolExpr::Table(
                    table.clone(),
                    vec![
                        BoolExpr::rx(t0),
                        BoolExpr::rx(t0 + 1),
                        BoolExpr::rx(t0 + 2),
                        BoolExpr::rand(r, 0),
                    ],
                );
                sim.insert((w, l), e);
            }
        } else {
            let t = schedule.len();
            schedule.push(Transmission::noiseless(v, read_simulated(&tx.expr, v, None, &sim)));
            for w in receivers {
                let r = fresh(&mut sources);
                sim.insert((w, l), BoolExpr::Xor(vec![BoolExpr::rx(t), BoolExpr::rand(r, 0)]));
            }
        }
    }
    let protocol = Protocol::new(graph, roles, schedule, eps, ProtocolClass::SemiNoisy, sources)?;
    Ok(SemiNoisy {
        protocol,
        input_map,
        stage_start,
        simulated: sim,
    })
}

/// Largest total-variation distance, over inputs, between the joint law of
/// all received bits `b_w[ℓ]` of `p` and the simulated bits `b'_w[ℓ]` of
/// `semi`.
pub fn simulation_tv(p: &Protocol, semi: &SemiNoisy, opts: &ExactOptions) -> Result<f64, ReductionError> {
    let pairs: Vec<(usize, usize)> = semi.simulated.keys().copied().collect();
    let before = Outcome::Probes(
        pairs
            .iter()
            .map(|&(w, l)| Probe {
                node: w,
                expr: BoolExpr::rx(l),
            })
            .collect(),
    );
    let after = Outcome::Probes(
        pairs
            .iter()
            .map(|k| Probe {
                node: k.0,
                expr: semi.simulated[k].clone(),
            })
            .collect(),
    );
    let inputs = p.all_inputs();
    let a = exact_channel(p, &inputs, &before, opts)?;
    let b = exact_channel(&semi.protocol, &inputs, &after, opts)?;
    Ok(a.max_tv(&b))
}

// ---------------------------------------------------------------------------
// Semi-noisy to noisy-copy

/// Result of [`to_noisy_copy`].
#[derive(Clone, Debug)]
pub struct NoisyCopy {
    pub protocol: Protocol,
    pub d: usize,
    /// Regeneration mask source for each `(receiver, input node)` pair.
    pub masks: BTreeMap<(usize, usize), usize>,
}

/// Replaces the up to `d` noisy broadcasts of each input node by a single
/// ε^d-noisy broadcast at the start. A receiver that read the `i`-th copy
/// now reads bit `i` of the regenerated sequence: the one copy XORed with a
/// mask drawn from the regeneration law. Auxiliary transmissions keep their
/// order. The result still uses internal randomness; see [`fix_randomness`].
pub fn to_noisy_copy(p1: &Protocol, d: usize) -> Result<NoisyCopy, ReductionError> {
    p1.check_class(ProtocolClass::SemiNoisy)?;
    if d == 0 {
        return Err(pre("d must be at least 1"));
    }
    let counts = p1.tx_counts();
    let inputs = p1.input_nodes();
    if let Some(&v) = inputs.iter().find(|&&v| counts[v] as usize > d) {
        return Err(ReductionError::NotBounded(format!(
            "input node {v} broadcasts {} times, d = {d}",
            counts[v]
        )));
    }
    let eps = p1.epsilon();
    let param = NoiseParam::new(eps)?;
    let regen = if eps > 0.0 && d > 1 {
        param.check_regen_range()?;
        Some(regen_table(d, param)?)
    } else {
        if eps >= 0.5 {
            return Err(NoiseError::RegenRange(eps).into());
        }
        None
    };

    // New positions: one broadcast per input node, then the auxiliary schedule.
    let first: HashMap<usize, usize> = inputs.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    let mut pos = vec![usize::MAX; p1.len()];
    let mut rank = vec![0usize; p1.len()];
    let mut seen: HashMap<usize, usize> = HashMap::new();
    let mut next = inputs.len();
    for (t, tx) in p1.schedule().iter().enumerate() {
        if p1.roles()[tx.sender].is_input() {
            let r = seen.entry(tx.sender).or_default();
            rank[t] = *r;
            *r += 1;
            pos[t] = first[&tx.sender];
        } else {
            pos[t] = next;
            next += 1;
        }
    }

    let mut sources = p1.sources().to_vec();
    let mut masks: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut schedule: Vec<Transmission> = inputs
        .iter()
        .map(|&v| Transmission::new(v, BoolExpr::input()))
        .collect();
    for tx in p1.schedule() {
        if p1.roles()[tx.sender].is_input() {
            continue;
        }
        let w = tx.sender;
        // Masks are created on first use, so collect them before substituting.
        for a in tx.expr.atoms() {
            if let Atom::Rx(t) = a {
                let u = p1.schedule()[t].sender;
                if p1.roles()[u].is_input() && p1.receives(w, t) {
                    if let Some(table) = &regen {
                        masks.entry((w, u)).or_insert_with(|| {
                            sources.push(RandSource {
                                probs: table.probs().to_vec(),
                            });
                            sources.len() - 1
                        });
                    }
                }
            }
        }
        let expr = tx.expr.substitute(&|a| match a {
            Atom::Rx(t) => {
                if !p1.receives(w, t) {
                    return Some(BoolExpr::Const(false));
                }
                let u = p1.schedule()[t].sender;
                let copy = BoolExpr::rx(pos[t]);
                match masks.get(&(w, u)) {
                    Some(&m) if p1.roles()[u].is_input() => {
                        Some(BoolExpr::Xor(vec![copy, BoolExpr::rand(m, rank[t])]))
                    }
                    _ => Some(copy),
                }
            }
            _ => None,
        });
        schedule.push(Transmission::noiseless(w, expr));
    }
    let protocol = Protocol::new(
        p1.graph().clone(),
        p1.roles().to_vec(),
        schedule,
        param.pow(d).value(),
        ProtocolClass::NoisyCopy,
        sources,
    )?;
    Ok(NoisyCopy { protocol, d, masks })
}

// ---------------------------------------------------------------------------
// Fixing internal randomness

/// How [`fix_randomness`] searches.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode", deny_unknown_fields)]
pub enum FixMode {
    /// One source at a time, each fixed to its best value given the ones
    /// already fixed (the rest still random). Never decreases the advantage.
    Sequential,
    /// Every joint assignment, if there are at most `cap`.
    Exhaustive { cap: u64 },
    /// Best of `samples` joint draws from the source laws. The advantage
    /// is only guaranteed not to drop in expectation.
    Sampled { samples: u64, seed: u64 },
}

impl Default for FixMode {
    fn default() -> Self {
        FixMode::Sequential
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FixReport {
    pub mode: FixMode,
    pub before: f64,
    pub after: f64,
    /// Whether `after ≥ before` is guaranteed by the search.
    pub guaranteed: bool,
    /// `(source, value)` chosen for each source that is read.
    pub assignment: Vec<(usize, usize)>,
    pub evaluations: usize,
}

/// Replaces reads of the fixed sources by constants; with `drop`, also
/// empties the source list (every read must then be fixed).
fn fix_sources(p: &Protocol, fixed: &BTreeMap<usize, usize>, drop: bool) -> Result<Protocol, ProtocolError> {
    let schedule = p
        .schedule()
        .iter()
        .map(|tx| Transmission {
            sender: tx.sender,
            noiseless: tx.noiseless,
            expr: tx.expr.substitute(&|a| match a {
                Atom::Rand { source, bit } => fixed
                    .get(&source)
                    .map(|&v| BoolExpr::Const((v >> bit) & 1 == 1)),
                _ => None,
            }),
        })
        .collect();
    let sources = if drop { Vec::new() } else { p.sources().to_vec() };
    Protocol::new(
        p.graph().clone(),
        p.roles().to_vec(),
        schedule,
        p.epsilon(),
        p.class(),
        sources,
    )
}

fn used_sources(p: &Protocol) -> Vec<usize> {
    let mut s = BTreeSet::new();
    for tx in p.schedule() {
        tx.expr.visit_atoms(&mut |a| {
            if let Atom::Rand { source, .. } = a {
                s.insert(source);
            }
        });
    }
    s.into_iter().collect()
}

/// Fixes every random source read by `p` so that the exact advantage of the
/// output for `f` under `mu` is as large as the search finds.
pub fn fix_randomness(
    p: &Protocol,
    f: &BoolExpr,
    mu: &Distribution,
    mode: FixMode,
    opts: &ExactOptions,
) -> Result<(Protocol, FixReport), ReductionError> {
    let adv = |q: &Protocol| protocol_advantage(q, &Outcome::Output, f, mu, opts);
    let before = adv(p)?;
    let used = used_sources(p);
    let mut evaluations = 1;
    let mut chosen: BTreeMap<usize, usize> = BTreeMap::new();
    let guaranteed;
    match mode {
        _ if used.is_empty() => guaranteed = true,
        FixMode::Sequential => {
            guaranteed = true;
            for &s in &used {
                let mut best: Option<(f64, usize)> = None;
                for v in 0..p.sources()[s].probs.len() {
                    chosen.insert(s, v);
                    let a = adv(&fix_sources(p, &chosen, false)?)?;
                    evaluations += 1;
                    if best.map_or(true, |(b, _)| a > b) {
                        best = Some((a, v));
                    }
                }
                chosen.insert(s, best.expect("sources have outcomes").1);
            }
        }
        FixMode::Exhaustive { cap } => {
            guaranteed = true;
            let radix: Vec<usize> = used.iter().map(|&s| p.sources()[s].probs.len()).collect();
            let total = radix.iter().fold(1u128, |a, &r| a.saturating_mul(r as u128));
            if total > cap as u128 {
                return Err(ReductionError::SearchCap {
                    outcomes: total,
                    cap: cap as u128,
                });
            }
            let mut best: Option<(f64, BTreeMap<usize, usize>)> = None;
            for mut idx in 0..total as u64 {
                let assign: BTreeMap<usize, usize> = used
                    .iter()
                    .zip(&radix)
                    .map(|(&s, &r)| {
                        let v = (idx % r as u64) as usize;
                        idx /= r as u64;
                        (s, v)
                    })
                    .collect();
                let a = adv(&fix_sources(p, &assign, false)?)?;
                evaluations += 1;
                if best.as_ref().map_or(true, |(b, _)| a > *b) {
                    best = Some((a, assign));
                }
            }
            chosen = best.expect("at least one assignment").1;
        }
        FixMode::Sampled { samples, seed } => {
            guaranteed = false;
            let mut best: Option<(f64, BTreeMap<usize, usize>)> = None;
            for i in 0..samples.max(1) {
                let mut rng = RngStream::keyed(seed, "fix-randomness", &[i]);
                let assign: BTreeMap<usize, usize> = used
                    .iter()
                    .map(|&s| (s, rng.categorical(&p.sources()[s].probs)))
                    .collect();
                let a = adv(&fix_sources(p, &assign, false)?)?;
                evaluations += 1;
                if best.as_ref().map_or(true, |(b, _)| a > *b) {
                    best = Some((a, assign));
                }
            }
            chosen = best.expect("at least one sample").1;
        }
    }
    let fixed = fix_sources(p, &chosen, true)?;
    let after = adv(&fixed)?;
    evaluations += 1;
    Ok((
        fixed,
        FixReport {
            mode,
            before,
            after,
            guaranteed,
            assignment: chosen.into_iter().collect(),
            evaluations,
        },
    ))
}

// ---------------------------------------------------------------------------
// Noisy-copy to xnd tree

/// Largest number of tree nodes [`to_xnd_tree`] builds by default.
pub const TREE_CAP: usize = 1 << 16;

/// Largest xnd block alphabet, `2^(n (1 + |Λ_j|))`.
const MAX_BLOCK_BITS: usize = 20;

/// Result of [`to_xnd_tree`].
#[derive(Clone, Debug)]
pub struct XndTree {
    pub tree: DecisionTree,
    /// Transmission index of each tree level (auxiliary transmissions, in order).
    pub levels: Vec<usize>,
    /// Block standing in for senders outside every auxiliary block.
    pub dummy_block: Option<usize>,
    /// Blocks no auxiliary node queries; each gets one constant query at the end.
    pub padded_blocks: Vec<usize>,
    /// Auxiliary senders of each block; a sender's position is its noise index.
    pub lambda_nodes: Vec<Vec<usize>>,
    /// Edges the adjacency normalisation would add: all auxiliary pairs and
    /// every `A_j × I_j` pair. They do not change any function.
    pub added_edges: Vec<(usize, usize)>,
}

fn aux_block(p: &Protocol, v: usize) -> Option<usize> {
    match p.roles()[v] {
        Role::Aux { block, .. } => block,
        Role::Input { .. } => unreachable!("auxiliary senders only"),
    }
}

struct XndBuild<'a> {
    p: &'a Protocol,
    levels: &'a [usize],
    level_block: Vec<usize>,
    lambda_of: HashMap<usize, usize>,
    /// (block, position in block) of each input node.
    input_pos: HashMap<usize, (usize, usize)>,
    block_n: Vec<usize>,
    sizes: Vec<usize>,
    padded: Vec<usize>,
    level_of: HashMap<usize, usize>,
    cap: usize,
    built: usize,
}

impl XndBuild<'_> {
    fn func(&self, i: usize, prefix: &[u32]) -> Result<Vec<u32>, ReductionError> {
        let t = self.levels[i];
        let tx = &self.p.schedule()[t];
        let w = tx.sender;
        let j = self.level_block[i];
        let own = match self.p.roles()[w] {
            Role::Aux { fixed, .. } => fixed,
            Role::Input { .. } => unreachable!(),
        };
        let n = self.block_n.get(j).copied().unwrap_or(0);
        let lam = self.lambda_of.get(&w).copied().unwrap_or(0);
        let mut out = Vec::with_capacity(self.sizes[j]);
        for s in 0..self.sizes[j] {
            let x = s & ((1 << n) - 1);
            let z = (s >> (n * (1 + lam))) & ((1 << n) - 1);
            let mut bad = None;
            let bit = tx.expr.eval(&mut |a| match a {
                Atom::Input => own,
                Atom::Var(_) => false,
                Atom::Rand { .. } => {
                    bad = Some("reads a random source".to_string());
                    false
                }
                Atom::Rx(r) => {
                    if !self.p.receives(w, r) {
                        return false;
                    }
                    if let Some(&li) = self.level_of.get(&r) {
                        return prefix[li] == 1;
                    }
                    let u = self.p.schedule()[r].sender;
                    match self.input_pos.get(&u) {
                        Some(&(bj, k)) if bj == j => ((x >> k) & 1 == 1) ^ ((z >> k) & 1 == 1),
                        _ => {
                            bad = Some(format!("node {w} reads input node {u} outside its block"));
                            false
                        }
                    }
                }
            });
            if let Some(m) = bad {
                return Err(pre(format!("transmission {t}: {m}")));
            }
            out.push(bit as u32);
        }
        Ok(out)
    }

    fn node(&mut self, i: usize, prefix: &mut Vec<u32>) -> Result<Arc<Node>, ReductionError> {
        self.built += 1;
        if self.built > self.cap {
            return Err(TreeError::TreeCap { cap: self.cap }.into());
        }
        let t_len = self.levels.len();
        if i == t_len + self.padded.len() {
            return Ok(Arc::new(Node::Leaf));
        }
        if i >= t_len {
            let j = self.padded[i - t_len];
            prefix.push(0);
            let child = self.node(i + 1, prefix)?;
            prefix.pop();
            return Ok(Node::new_query(j, None, vec![0; self.sizes[j]], vec![Some(child)]));
        }
        let func = self.func(i, prefix)?;
        let mut children = vec![None, None];
        for c in 0..2u32 {
            if func.contains(&c) {
                prefix.push(c);
                children[c as usize] = Some(self.node(i + 1, prefix)?);
                prefix.pop();
            }
        }
        let w = self.p.schedule()[self.levels[i]].sender;
        let lambda = self.lambda_of.get(&w).copied();
        Ok(Node::new_query(self.level_block[i], lambda, func, children))
    }
}

/// The transcript tree of a deterministic noisy-copy protocol: level `i`
/// queries the block of the `i`-th auxiliary sender `w`, reading its input
/// bits through `w`'s own noise vector, and branches on the bit `w` sends.
/// `mu` gives the law of each input block.
pub fn to_xnd_tree(p2: &Protocol, mu: &[Distribution], cap: usize) -> Result<XndTree, ReductionError> {
    p2.check_class(ProtocolClass::NoisyCopy)?;
    if p2.uses_randomness() {
        return Err(pre("protocol still uses internal randomness"));
    }
    let k = p2.block_count();
    if mu.len() != k {
        return Err(pre(format!("{} block distributions for {k} blocks", mu.len())));
    }
    let mut input_pos = HashMap::new();
    let mut block_n = Vec::with_capacity(k);
    for (j, m) in mu.iter().enumerate() {
        let members = p2.block_inputs(j);
        if m.bits() != members.len() {
            return Err(pre(format!(
                "block {j} has {} inputs, its distribution {} bits",
                members.len(),
                m.bits()
            )));
        }
        for (pos, &u) in members.iter().enumerate() {
            input_pos.insert(u, (j, pos));
        }
        block_n.push(members.len());
    }
    let levels: Vec<usize> = (0..p2.len())
        .filter(|&t| !p2.roles()[p2.schedule()[t].sender].is_input())
        .collect();
    let level_of: HashMap<usize, usize> = levels.iter().enumerate().map(|(i, &t)| (t, i)).collect();
    let dummy = levels
        .iter()
        .any(|&t| aux_block(p2, p2.schedule()[t].sender).is_none())
        .then_some(k);
    let level_block: Vec<usize> = levels
        .iter()
        .map(|&t| aux_block(p2, p2.schedule()[t].sender).unwrap_or(k))
        .collect();
    let mut lambda_nodes: Vec<Vec<usize>> = vec![Vec::new(); k];
    let mut lambda_of = HashMap::new();
    for &t in &levels {
        let w = p2.schedule()[t].sender;
        if let Some(j) = aux_block(p2, w) {
            if !lambda_nodes[j].contains(&w) {
                lambda_nodes[j].push(w);
            }
        }
    }
    for l in &mut lambda_nodes {
        l.sort_unstable();
        for (i, &w) in l.iter().enumerate() {
            lambda_of.insert(w, i);
        }
    }
    let eps = p2.epsilon();
    let mut blocks = Vec::with_capacity(k + 1);
    for j in 0..k {
        let bits = block_n[j] * (1 + lambda_nodes[j].len());
        if bits > MAX_BLOCK_BITS {
            return Err(pre(format!("block {j} needs a {bits}-bit alphabet, cap is {MAX_BLOCK_BITS}")));
        }
        blocks.push(BlockSpace::xnd(mu[j].probs(), block_n[j], lambda_nodes[j].len(), eps));
    }
    if dummy.is_some() {
        blocks.push(BlockSpace::trivial());
    }
    let queried: BTreeSet<usize> = level_block.iter().copied().collect();
    let padded: Vec<usize> = (0..k).filter(|j| !queried.contains(j)).collect();
    let sizes: Vec<usize> = blocks.iter().map(BlockSpace::size).collect();

    let mut b = XndBuild {
        p: p2,
        levels: &levels,
        level_block,
        lambda_of,
        input_pos,
        block_n,
        sizes,
        padded: padded.clone(),
        level_of,
        cap,
        built: 0,
    };
    let root = b.node(0, &mut Vec::new())?;
    let tree = DecisionTree::new(blocks, root)?;

    let mut added_edges = Vec::new();
    let aux: Vec<usize> = (0..p2.node_count()).filter(|&v| !p2.roles()[v].is_input()).collect();
    for (i, &a) in aux.iter().enumerate() {
        for &c in &aux[i + 1..] {
            if !p2.graph().has_edge(a, c) {
                added_edges.push((a, c));
            }
        }
        if let Some(j) = aux_block(p2, a) {
            for u in p2.block_inputs(j) {
                if !p2.graph().has_edge(a, u) {
                    added_edges.push((a.min(u), a.max(u)));
                }
            }
        }
    }
    added_edges.sort_unstable();
    added_edges.dedup();

    Ok(XndTree {
        tree,
        levels,
        dummy_block: dummy,
        padded_blocks: padded,
        lambda_nodes,
        added_edges,
    })
}

/// Largest total-variation distance, over inputs, between the tree's leaf
/// law and the law of the protocol's auxiliary transcript.
pub fn xnd_leaf_tv(p2: &Protocol, xnd: &XndTree, opts: &ExactOptions) -> Result<f64, ReductionError> {
    let inputs = p2.all_inputs();
    let ch = exact_channel(p2, &inputs, &Outcome::Sent(xnd.levels.clone()), opts)?;
    let k = p2.block_count();
    let t_len = xnd.levels.len();
    let mut worst = 0.0f64;
    for (i, x) in inputs.iter().enumerate() {
        // Point mass on x, block by block.
        let mut offset = 0;
        let mut blocks = Vec::with_capacity(xnd.tree.block_count());
        for j in 0..k {
            let n = p2.block_inputs(j).len();
            let xj = (x.index() >> offset) & ((1u64 << n) - 1);
            offset += n;
            let mut mu = vec![0.0; 1 << n];
            mu[xj as usize] = 1.0;
            blocks.push(BlockSpace::xnd(&mu, n, xnd.lambda_nodes[j].len(), p2.epsilon()));
        }
        blocks.extend(xnd.tree.blocks()[k..].iter().cloned());
        let cond = DecisionTree::new(blocks, xnd.tree.root().clone())?;
        let mut law: BTreeMap<u64, f64> = BTreeMap::new();
        for m in cond.leaf_masses() {
            let label = m.path[..t_len]
                .iter()
                .enumerate()
                .fold(0u64, |acc, (b, &c)| acc | ((c as u64) << b));
            *law.entry(label).or_default() += m.prob;
        }
        for &(c, q) in ch.row(i) {
            *law.entry(c).or_default() -= q;
        }
        worst = worst.max(0.5 * law.values().map(|d| d.abs()).sum::<f64>());
    }
    Ok(worst)
}

// ---------------------------------------------------------------------------
// Whole chain

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChainOptions {
    /// Random-bit cap for the exact engine.
    pub max_random_bits: usize,
    pub max_states: usize,
    pub fix: FixMode,
    pub tree_cap: usize,
    /// Explicit constant inside the per-block advantage bound.
    pub alpha_c: f64,
    pub log_base: LogBase,
    /// Budgets `(d, D)` to check the input protocol against.
    pub budgets: Option<(f64, f64)>,
    /// Run the simulation-law check of the first step.
    pub check_simulation: bool,
    /// Run the leaf-law check of the tree step.
    pub check_tree: bool,
}

impl Default for ChainOptions {
    fn default() -> Self {
        ChainOptions {
            max_random_bits: 40,
            max_states: 1 << 22,
            fix: FixMode::Sequential,
            tree_cap: TREE_CAP,
            alpha_c: 1.0,
            log_base: LogBase::Two,
            budgets: None,
            check_simulation: true,
            check_tree: true,
        }
    }
}

impl ChainOptions {
    pub fn exact(&self) -> ExactOptions {
        ExactOptions {
            max_random_bits: self.max_random_bits,
            max_states: self.max_states,
        }
    }
}

/// Exact parity advantage after each stage.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StageAdvantages {
    pub protocol: f64,
    pub semi_noisy: f64,
    pub noisy_copy_randomized: f64,
    pub noisy_copy: f64,
    pub xnd: f64,
    pub ordered: f64,
    pub read_once: f64,
}

impl StageAdvantages {
    pub fn as_vec(&self) -> Vec<f64> {
        vec![
            self.protocol,
            self.semi_noisy,
            self.noisy_copy_randomized,
            self.noisy_copy,
            self.xnd,
            self.ordered,
            self.read_once,
        ]
    }

    /// Whether every stage is at least the previous one, up to `tol`.
    pub fn monotone(&self, tol: f64) -> bool {
        self.as_vec().windows(2).all(|w| w[1] >= w[0] - tol)
    }
}

/// Per-block advantage certificate of one read-once query.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QueryCertificate {
    pub block: usize,
    pub advantage: f64,
    /// Levels of this block in the xnd tree.
    pub depth: usize,
    /// Bound at the block's own depth.
    pub bound: f64,
    /// Bound at the budget `3D` of the first step.
    pub bound_3d: f64,
    pub holds: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Budgets {
    /// `(d, D)` of the input protocol.
    pub input: (f64, f64),
    pub semi_noisy: (f64, f64),
    pub noisy_copy: (f64, f64),
    pub transmissions: usize,
    pub semi_noisy_transmissions: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChainReport {
    pub advantages: StageAdvantages,
    pub monotone: bool,
    pub budgets: Budgets,
    pub simulation_tv: Option<f64>,
    pub tree_tv: Option<f64>,
    pub fix: FixReport,
    pub noisy_copy_epsilon: f64,
    pub added_edges: usize,
    pub dummy_block: Option<usize>,
    pub padded_blocks: Vec<usize>,
    pub reorder_steps: usize,
    pub certificates: Vec<QueryCertificate>,
}

/// Every intermediate object of the chain.
#[derive(Clone, Debug)]
pub struct Chain {
    pub semi: SemiNoisy,
    pub copy: NoisyCopy,
    pub fixed: Protocol,
    pub xnd: XndTree,
    pub ordered: DecisionTree,
    pub read_once: DecisionTree,
    pub report: ChainReport,
}

/// Runs the whole chain on `p` with block laws `mu` and target parity.
pub fn protocol_to_read_once(
    p: &Protocol,
    mu: &[Distribution],
    opts: &ChainOptions,
) -> Result<Chain, ReductionError> {
    let exact = opts.exact();
    let m = p.input_nodes().len();
    let f = BoolExpr::parity(m);
    let mu_all = Distribution::product(mu)?;
    let adv = |q: &Protocol| protocol_advantage(q, &Outcome::Output, &f, &mu_all, &exact);

    let a0 = adv(p)?;
    let semi = to_semi_noisy(p, opts.budgets)?;
    let simulation_tv = if opts.check_simulation {
        Some(simulation_tv(p, &semi, &exact)?)
    } else {
        None
    };
    let a1 = adv(&semi.protocol)?;

    let (d_in, big_d_in) = p.tight_budgets();
    let d = (d_in as usize).max(1);
    let copy = to_noisy_copy(&semi.protocol, d)?;
    let a2r = adv(&copy.protocol)?;
    let (fixed, fix) = fix_randomness(&copy.protocol, &f, &mu_all, opts.fix, &exact)?;

    let xnd = to_xnd_tree(&fixed, mu, opts.tree_cap)?;
    let tree_tv = if opts.check_tree {
        Some(xnd_leaf_tv(&fixed, &xnd, &exact)?)
    } else {
        None
    };
    let a3 = xnd.tree.advantage();
    let ordered = reorder(&xnd.tree)?;
    let a4 = ordered.tree.advantage();
    let read_once = collapse_to_read_once(&ordered.tree)?;
    let a5 = read_once.advantage();

    let semi_budgets = semi.protocol.tight_budgets();
    let mut depth = vec![0usize; xnd.tree.block_count()];
    if let Some(levels) = xnd.tree.level_blocks() {
        for (i, j) in levels.into_iter().enumerate() {
            if i < xnd.levels.len() {
                depth[j] += 1;
            }
        }
    }
    let eps2 = fixed.epsilon();
    let mut certificates = Vec::new();
    for (_, j, a) in read_once.query_advantages() {
        if Some(j) == xnd.dummy_block || xnd.padded_blocks.contains(&j) {
            continue;
        }
        let n = p.block_inputs(j).len() as f64;
        let ell = depth[j];
        let certify = |dd: f64| -> Result<f64, AdvantageError> {
            if eps2 > 0.0 && eps2 < 0.5 {
                alpha_bound(n, dd, eps2, opts.alpha_c, opts.log_base)
            } else {
                // Noiseless reads: only the trivial bound applies.
                Ok(1.0)
            }
        };
        let bound = certify(ell as f64)?;
        certificates.push(QueryCertificate {
            block: j,
            advantage: a,
            depth: ell,
            bound,
            bound_3d: certify(semi_budgets.1)?,
            holds: a <= bound + 1e-12,
        });
    }

    let advantages = StageAdvantages {
        protocol: a0,
        semi_noisy: a1,
        noisy_copy_randomized: a2r,
        noisy_copy: fix.after,
        xnd: a3,
        ordered: a4,
        read_once: a5,
    };
    let report = ChainReport {
        monotone: advantages.monotone(1e-9),
        advantages,
        budgets: Budgets {
            input: (d_in, big_d_in),
            semi_noisy: semi_budgets,
            noisy_copy: fixed.tight_budgets(),
            transmissions: p.len(),
            semi_noisy_transmissions: semi.protocol.len(),
        },
        simulation_tv,
        tree_tv,
        fix,
        noisy_copy_epsilon: eps2,
        added_edges: xnd.added_edges.len(),
        dummy_block: xnd.dummy_block,
        padded_blocks: xnd.padded_blocks.clone(),
        reorder_steps: ordered.steps.len(),
        certificates,
    };
    Ok(Chain {
        semi,
        copy,
        fixed,
        xnd,
        ordered: ordered.tree,
        read_once,
        report,
    })
}

/// Input assignment `x` restricted to block `j` of `p`, as an index.
pub fn block_value(p: &Protocol, x: &BitVector, j: usize) -> u64 {
    let offset: usize = (0..j).map(|b| p.block_inputs(b).len()).sum();
    let n = p.block_inputs(j).len();
    (x.index() >> offset) & ((1u64 << n) - 1)
}
