//! Seeded random instances for the property suites and experiments.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::advantage::Distribution;
use crate::noise::{BitVector, RngStream};
use crate::planar::Graph;
use crate::protocol::{BoolExpr, Channel, Protocol, ProtocolClass, RandSource, Role, Transmission};
use crate::tree::{BlockSpace, DecisionTree, Node};

/// Size limits of [`tiny_protocol`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TinyLimits {
    pub max_blocks: usize,
    pub max_n: usize,
    pub max_transmissions: usize,
    /// Hard cap on `Σ` sender degree over noisy transmissions.
    pub max_noise_bits: usize,
    /// Probability that the protocol carries an internal random source.
    pub rand_prob: f64,
}

impl Default for TinyLimits {
    fn default() -> Self {
        TinyLimits {
            max_blocks: 3,
            max_n: 2,
            max_transmissions: 6,
            max_noise_bits: 20,
            rand_prob: 0.2,
        }
    }
}

/// A random protocol with its per-block input laws.
#[derive(Clone, Debug)]
pub struct TinyInstance {
    pub protocol: Protocol,
    pub mu: Vec<Distribution>,
}

fn random_table(rng: &mut RngStream, arity: usize) -> Vec<bool> {
    (0..1usize << arity).map(|_| rng.random_bool(0.5)).collect()
}

fn random_law(rng: &mut RngStream, bits: usize) -> Distribution {
    if rng.random_bool(0.5) {
        return Distribution::uniform(bits).expect("small");
    }
    let raw: Vec<f64> = (0..1usize << bits).map(|_| 0.05 + rng.unit()).collect();
    let total: f64 = raw.iter().sum();
    let mut probs: Vec<f64> = raw.iter().map(|p| p / total).collect();
    // Put the rounding error on the last entry so the mass is 1 to the ulp.
    let head: f64 = probs[..probs.len() - 1].iter().sum();
    *probs.last_mut().unwrap() = 1.0 - head;
    Distribution::new(bits, probs).expect("normalised")
}

/// A random protocol on a network that respects the block structure: input
/// nodes of block `j` are adjacent only to block `j` (inputs and auxiliary
/// nodes), the output node is auxiliary, and functions are random truth
/// tables over at most three received bits. Retries until the noise-bit
/// count fits.
pub fn tiny_protocol(seed: u64, index: u64, limits: &TinyLimits) -> TinyInstance {
    let mut rng = RngStream::keyed(seed, "tiny-protocol", &[index]);
    loop {
        if let Some(inst) = try_tiny(&mut rng, limits) {
            return inst;
        }
    }
}

fn try_tiny(rng: &mut RngStream, limits: &TinyLimits) -> Option<TinyInstance> {
    let k = rng.random_range(1..=limits.max_blocks);
    let n = rng.random_range(1..=limits.max_n);
    let mut roles = Vec::new();
    let mut inputs = vec![Vec::new(); k];
    let mut aux = vec![Vec::new(); k];
    for j in 0..k {
        for _ in 0..n {
            inputs[j].push(roles.len());
            roles.push(Role::Input { block: j });
        }
        for _ in 0..rng.random_range(1..=2) {
            aux[j].push(roles.len());
            roles.push(Role::Aux {
                fixed: rng.random_bool(0.5),
                block: Some(j),
            });
        }
    }
    let mut aux0 = Vec::new();
    if rng.random_bool(0.3) {
        aux0.push(roles.len());
        roles.push(Role::Aux {
            fixed: false,
            block: None,
        });
    }
    let all_aux: Vec<usize> = aux.iter().flatten().chain(&aux0).copied().collect();

    let mut g = Graph::new(roles.len());
    for j in 0..k {
        for &u in &inputs[j] {
            // Every input reaches some auxiliary node of its block.
            let a = aux[j][rng.random_range(0..aux[j].len())];
            g.add_edge(u, a);
            for &v in inputs[j].iter().chain(&aux[j]) {
                if v != u && rng.random_bool(0.25) {
                    g.add_edge(u, v);
                }
            }
        }
    }
    // Auxiliary nodes form a random connected graph.
    for (i, &a) in all_aux.iter().enumerate().skip(1) {
        let b = all_aux[rng.random_range(0..i)];
        g.add_edge(a, b);
        for &c in &all_aux[..i] {
            if rng.random_bool(0.2) {
                g.add_edge(a, c);
            }
        }
    }

    let eps = 0.05 + 0.4 * rng.unit();
    let sources = if rng.random_bool(limits.rand_prob) {
        vec![RandSource::bernoulli(0.1 + 0.8 * rng.unit())]
    } else {
        Vec::new()
    };
    let t_len = rng.random_range(2..=limits.max_transmissions);
    let input_nodes: Vec<usize> = inputs.iter().flatten().copied().collect();
    let mut schedule: Vec<Transmission> = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let last = t + 1 == t_len;
        // Inputs speak early and often enough to matter.
        let sender = if !last && rng.random_bool(0.55) {
            input_nodes[rng.random_range(0..input_nodes.len())]
        } else {
            all_aux[rng.random_range(0..all_aux.len())]
        };
        let mut atoms: Vec<BoolExpr> = (0..t)
            .filter(|&s| {
                let from = schedule[s].sender;
                from != sender && g.has_edge(from, sender)
            })
            .map(BoolExpr::rx)
            .collect();
        if roles[sender].is_input() {
            atoms.push(BoolExpr::input());
        }
        if !sources.is_empty() && !roles[sender].is_input() && rng.random_bool(0.5) {
            atoms.push(BoolExpr::rand(0, 0));
        }
        // Keep up to three atoms, preferring the latest.
        let keep = atoms.len().min(3);
        let mut chosen = Vec::with_capacity(keep);
        while chosen.len() < keep {
            let i = rng.random_range(0..atoms.len());
            chosen.push(atoms.swap_remove(i));
        }
        let expr = if chosen.is_empty() {
            BoolExpr::Const(rng.random_bool(0.5))
        } else if chosen.len() == 1 && rng.random_bool(0.7) {
            chosen.pop().unwrap()
        } else {
            let arity = chosen.len();
            BoolExpr::Table(random_table(rng, arity), chosen)
        };
        schedule.push(Transmission::new(sender, expr));
    }
    let p = Protocol::new(g, roles, schedule, eps, ProtocolClass::General, sources).ok()?;
    if p.noise_bit_count() > limits.max_noise_bits {
        return None;
    }
    let mu = (0..k).map(|_| random_law(rng, n)).collect();
    Some(TinyInstance { protocol: p, mu })
}

fn random_block(rng: &mut RngStream) -> BlockSpace {
    let size = rng.random_range(2..=4);
    let weights = (0..size).map(|_| 0.05 + rng.unit()).collect();
    let signs = (0..size)
        .map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 })
        .collect();
    BlockSpace::new(weights, signs).expect("valid block")
}

fn random_func(rng: &mut RngStream, size: usize, arity: usize) -> Vec<u32> {
    (0..size).map(|_| rng.random_range(0..arity as u32)).collect()
}

fn build_full(
    rng: &mut RngStream,
    blocks: &[BlockSpace],
    levels: &[usize],
    arities: &[usize],
    shared: Option<&[Vec<u32>]>,
    i: usize,
) -> Arc<Node> {
    if i == levels.len() {
        return Arc::new(Node::Leaf);
    }
    let j = levels[i];
    let func = match shared {
        Some(f) => f[i].clone(),
        None => random_func(rng, blocks[j].size(), arities[i]),
    };
    let children = (0..arities[i] as u32)
        .map(|c| {
            func.contains(&c)
                .then(|| build_full(rng, blocks, levels, arities, shared, i + 1))
        })
        .collect();
    Node::new_query(j, None, func, children)
}

/// Random oblivious tree with at most `max_blocks` blocks and depth at most
/// `max_depth`. With `movable`, the last run of levels is on a block not
/// queried above it, so `move_to_root` applies to that run.
pub fn random_oblivious_tree(
    seed: u64,
    index: u64,
    max_blocks: usize,
    max_depth: usize,
    movable: bool,
) -> DecisionTree {
    let mut rng = RngStream::keyed(seed, "oblivious-tree", &[index]);
    let k = rng.random_range(1..=max_blocks);
    let depth = rng.random_range(1..=max_depth);
    let blocks: Vec<BlockSpace> = (0..k).map(|_| random_block(&mut rng)).collect();
    let mut levels: Vec<usize> = (0..depth).map(|_| rng.random_range(0..k)).collect();
    if movable {
        let last = levels[depth - 1];
        let run = levels.iter().rev().take_while(|&&b| b == last).count();
        for l in &mut levels[..depth - run] {
            if *l == last {
                *l = (last + 1) % k;
                if *l == last || k == 1 {
                    // Single block: the whole tree is one run.
                    *l = last;
                }
            }
        }
        if k == 1 {
            levels = vec![0; depth];
        }
    }
    let arities: Vec<usize> = (0..depth).map(|_| rng.random_range(1..=2)).collect();
    let root = build_full(&mut rng, &blocks, &levels, &arities, None, 0);
    DecisionTree::new(blocks, root).expect("valid tree")
}

/// Random read-once tree over at most `max_blocks` blocks. With
/// `branch_uniform`, all nodes of a level share one function.
pub fn random_read_once_tree(seed: u64, index: u64, max_blocks: usize, branch_uniform: bool) -> DecisionTree {
    let mut rng = RngStream::keyed(seed, "read-once-tree", &[index]);
    let k = rng.random_range(1..=max_blocks);
    let blocks: Vec<BlockSpace> = (0..k).map(|_| random_block(&mut rng)).collect();
    let mut levels: Vec<usize> = (0..k).collect();
    for i in (1..k).rev() {
        levels.swap(i, rng.random_range(0..=i));
    }
    let arities: Vec<usize> = (0..k).map(|_| rng.random_range(1..=3)).collect();
    let shared: Option<Vec<Vec<u32>>> = branch_uniform.then(|| {
        levels
            .iter()
            .zip(&arities)
            .map(|(&j, &a)| random_func(&mut rng, blocks[j].size(), a))
            .collect()
    });
    let root = build_full(&mut rng, &blocks, &levels, &arities, shared.as_deref(), 0);
    DecisionTree::new(blocks, root).expect("valid tree")
}

/// Random channel from `{0,1}^bits` to `labels` outcomes.
pub fn random_channel(seed: u64, index: u64, bits: usize, labels: usize) -> Channel {
    let mut rng = RngStream::keyed(seed, "channel", &[index]);
    let inputs: Vec<BitVector> = (0..1u64 << bits).map(|i| BitVector::from_index(i, bits)).collect();
    let rows = inputs
        .iter()
        .map(|_| {
            let raw: Vec<f64> = (0..labels).map(|_| rng.unit().powi(2)).collect();
            let total: f64 = raw.iter().sum::<f64>().max(1e-300);
            raw.into_iter()
                .enumerate()
                .map(|(c, p)| (c as u64, p / total))
                .collect()
        })
        .collect();
    let label_bits = usize::BITS as usize - labels.saturating_sub(1).leading_zeros() as usize;
    Channel::new(inputs, label_bits, rows)
}

/// Random law on `{0,1}^bits` with full support.
pub fn random_distribution(seed: u64, index: u64, bits: usize) -> Distribution {
    let mut rng = RngStream::keyed(seed, "distribution", &[index]);
    let raw: Vec<f64> = (0..1usize << bits).map(|_| 0.05 + rng.unit()).collect();
    let total: f64 = raw.iter().sum();
    let mut probs: Vec<f64> = raw.iter().map(|p| p / total).collect();
    let head: f64 = probs[..probs.len() - 1].iter().sum();
    *probs.last_mut().unwrap() = 1.0 - head;
    Distribution::new(bits, probs).expect("normalised")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_protocols_respect_limits() {
        let limits = TinyLimits::default();
        for i in 0..50 {
            let inst = tiny_protocol(1, i, &limits);
            let p = &inst.protocol;
            assert!(p.len() <= 6);
            assert!(p.noise_bit_count() <= 20);
            assert!(!p.roles()[p.output_node()].is_input());
            assert!(p.block_count() <= 3);
            assert_eq!(inst.mu.len(), p.block_count());
            // Input nodes only see their own block.
            for v in p.input_nodes() {
                let Role::Input { block } = p.roles()[v] else { unreachable!() };
                for &w in p.graph().neighbors(v) {
                    match p.roles()[w] {
                        Role::Input { block: b } | Role::Aux { block: Some(b), .. } => assert_eq!(b, block),
                        Role::Aux { block: None, .. } => panic!("input adjacent to leftover block"),
                    }
                }
            }
        }
        assert_eq!(tiny_protocol(1, 3, &limits).protocol, tiny_protocol(1, 3, &limits).protocol);
    }

    #[test]
    fn trees_have_their_shapes() {
        for i in 0..30 {
            let t = random_oblivious_tree(2, i, 3, 6, true);
            assert!(t.is_oblivious());
            let levels = t.level_blocks().unwrap();
            let last = *levels.last().unwrap();
            let run = levels.iter().rev().take_while(|&&b| b == last).count();
            assert!(!levels[..levels.len() - run].contains(&last));
            let r = random_read_once_tree(2, i, 4, i % 2 == 0);
            assert!(r.is_read_once());
        }
    }
}
